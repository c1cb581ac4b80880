//! Value spectra on an integer energy grid, ensemble budgets, and file ingestion.
//!
//! Every energy is an exact rational snapped onto the grid `k * u` for a
//! declared quantum `u`, so the counting code downstream works with plain
//! integers. Physical energies (`k * u` as `f64`) are used by the analytic
//! modules.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use num_rational::Ratio;
use num_traits::{Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exact rational used for energies, means and the grid quantum.
pub type Rational = Ratio<i64>;

/// Relative tolerance (in units of the quantum) for accepting a value as on-grid.
pub const GRID_TOLERANCE: f64 = 1e-9;

/// Parse a decimal (`1.25`, `-3`, `.5`) or fraction (`5/4`) into an exact rational.
pub fn parse_rational(text: &str) -> std::result::Result<Rational, String> {
    let text = text.trim();
    if text.is_empty() {
        return Err("empty number".into());
    }
    if let Some((p, q)) = text.split_once('/') {
        let p: i64 = p
            .trim()
            .parse()
            .map_err(|e| format!("bad numerator {p:?}: {e}"))?;
        let q: i64 = q
            .trim()
            .parse()
            .map_err(|e| format!("bad denominator {q:?}: {e}"))?;
        if q == 0 {
            return Err("zero denominator".into());
        }
        return Ok(Rational::new(p, q));
    }
    let (negative, body) = match text.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, text.strip_prefix('+').unwrap_or(text)),
    };
    let (int_part, frac_part) = body.split_once('.').unwrap_or((body, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(format!("not a number: {text:?}"));
    }
    if !int_part
        .chars()
        .chain(frac_part.chars())
        .all(|c| c.is_ascii_digit())
    {
        return Err(format!("not a number: {text:?}"));
    }
    if frac_part.len() > 17 {
        return Err(format!("too many decimal places: {text:?}"));
    }
    let digits = format!("{int_part}{frac_part}");
    let numer: i64 = digits
        .parse()
        .map_err(|e| format!("number out of range {text:?}: {e}"))?;
    let denom = 10i64.pow(frac_part.len() as u32);
    let r = Rational::new(numer, denom);
    Ok(if negative { -r } else { r })
}

/// Render a rational as `p` or `p/q`.
pub fn format_rational(r: &Rational) -> String {
    if r.is_integer() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

pub fn rational_to_f64(r: &Rational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

/// Snap `value` onto the grid `k * quantum`.
fn snap_to_grid(value: &Rational, quantum: &Rational) -> Result<u64> {
    let off_grid = || Error::OffGrid {
        value: format_rational(value),
        quantum: format_rational(quantum),
    };
    if value.is_negative() {
        return Err(Error::InvalidSpectrum(format!(
            "negative energy {}",
            format_rational(value)
        )));
    }
    let ratio = value / quantum;
    let k = ratio.round();
    let residual = rational_to_f64(&(ratio - k).abs());
    if residual > GRID_TOLERANCE {
        return Err(off_grid());
    }
    k.to_integer().to_u64().ok_or_else(off_grid)
}

/// Ordered distinct energies with multiplicities, on an integer grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValueSpectrum {
    quantum: Rational,
    levels: Vec<u64>,
    multiplicities: Vec<u64>,
}

impl ValueSpectrum {
    /// Build from integer grid levels. Duplicate levels are merged.
    pub fn from_levels(quantum: Rational, levels: &[u64], multiplicities: &[u64]) -> Result<Self> {
        if levels.len() != multiplicities.len() {
            return Err(Error::InvalidSpectrum(format!(
                "{} values but {} multiplicities",
                levels.len(),
                multiplicities.len()
            )));
        }
        if quantum <= Rational::zero() {
            return Err(Error::InvalidSpectrum("quantum must be positive".into()));
        }
        let mut merged: BTreeMap<u64, u64> = BTreeMap::new();
        for (&level, &q) in levels.iter().zip(multiplicities) {
            if q == 0 {
                return Err(Error::NonPositiveMultiplicity(0));
            }
            *merged.entry(level).or_default() += q;
        }
        if merged.is_empty() {
            return Err(Error::InvalidSpectrum("spectrum has no values".into()));
        }
        let (levels, multiplicities) = merged.into_iter().unzip();
        Ok(Self {
            quantum,
            levels,
            multiplicities,
        })
    }

    /// Build from integer energies with unit quantum.
    pub fn unit(levels: &[u64], multiplicities: &[u64]) -> Result<Self> {
        Self::from_levels(Rational::from_integer(1), levels, multiplicities)
    }

    /// Build from exact rational energies snapped onto the grid of `quantum`.
    pub fn from_values(quantum: Rational, values: &[Rational], multiplicities: &[i64]) -> Result<Self> {
        if quantum <= Rational::zero() {
            return Err(Error::InvalidSpectrum("quantum must be positive".into()));
        }
        let mut levels = Vec::with_capacity(values.len());
        let mut mults = Vec::with_capacity(values.len());
        for (v, &q) in values.iter().zip(multiplicities) {
            if q <= 0 {
                return Err(Error::NonPositiveMultiplicity(q));
            }
            levels.push(snap_to_grid(v, &quantum)?);
            mults.push(q as u64);
        }
        Self::from_levels(quantum, &levels, &mults)
    }

    /// Number of distinct values `s`.
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn quantum(&self) -> Rational {
        self.quantum
    }

    /// Integer grid positions `x_i / u`.
    pub fn levels(&self) -> &[u64] {
        &self.levels
    }

    pub fn multiplicities(&self) -> &[u64] {
        &self.multiplicities
    }

    /// Exact energy of cell `i`.
    pub fn value(&self, i: usize) -> Rational {
        self.quantum * Rational::from_integer(self.levels[i] as i64)
    }

    /// Physical energies `x_i` as floating point.
    pub fn energies(&self) -> Vec<f64> {
        let u = rational_to_f64(&self.quantum);
        self.levels.iter().map(|&k| k as f64 * u).collect()
    }

    /// `Q = sum q_i`.
    pub fn total_multiplicity(&self) -> u64 {
        self.multiplicities.iter().sum()
    }

    /// Multiplicity mass of the first `l` cells.
    pub fn head_multiplicity(&self, l: usize) -> u64 {
        self.multiplicities[..l.min(self.len())].iter().sum()
    }

    /// `xbar = sum q_i x_i / Q`, exact.
    pub fn xbar(&self) -> Rational {
        let weighted: i64 = self
            .levels
            .iter()
            .zip(&self.multiplicities)
            .map(|(&k, &q)| (k * q) as i64)
            .sum();
        self.quantum * Rational::new(weighted, self.total_multiplicity() as i64)
    }

    /// Warnings for the large-system regime `a1 N <= s <= a2 N`, `0 <= x_i <= B`.
    /// Desk-scale experiments routinely violate the first one on purpose.
    pub fn regime_warnings(&self, n: u64, bound: f64, a1: f64, a2: f64) -> Vec<String> {
        let mut warnings = Vec::new();
        let s = self.len() as f64;
        if s < a1 * n as f64 || s > a2 * n as f64 {
            warnings.push(format!(
                "s = {} is outside [{a1} N, {a2} N] for N = {n}",
                self.len()
            ));
        }
        if let Some(&max) = self.energies().iter().reduce(|a, b| if a > b { a } else { b }) {
            if max > bound {
                warnings.push(format!("largest value {max} exceeds the bound B = {bound}"));
            }
        }
        warnings
    }

    /// Replicate every cell `times` times (multiplicities scale), used to grow
    /// `Q` alongside `N` while keeping the value set fixed.
    pub fn replicated(&self, times: u64) -> Result<Self> {
        if times == 0 {
            return Err(Error::InvalidArgument(
                "replication factor must be positive".into(),
            ));
        }
        let mults: Vec<u64> = self.multiplicities.iter().map(|q| q * times).collect();
        Self::from_levels(self.quantum, &self.levels, &mults)
    }

    pub fn to_file(&self) -> SpectrumFile {
        SpectrumFile {
            quantum: format_rational(&self.quantum),
            values: (0..self.len()).map(|i| format_rational(&self.value(i))).collect(),
            multiplicities: self.multiplicities.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("value,multiplicity\n");
        for i in 0..self.len() {
            out.push_str(&format!(
                "{},{}\n",
                format_rational(&self.value(i)),
                self.multiplicities[i]
            ));
        }
        out
    }
}

impl fmt::Display for ValueSpectrum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "spectrum(u = {}; ", format_rational(&self.quantum))?;
        for i in 0..self.len() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(
                f,
                "{}x{}",
                format_rational(&self.value(i)),
                self.multiplicities[i]
            )?;
        }
        write!(f, ")")
    }
}

/// JSON form of a spectrum: `{quantum, values[], multiplicities[]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumFile {
    pub quantum: String,
    pub values: Vec<String>,
    pub multiplicities: Vec<u64>,
}

/// Load a spectrum from a CSV (`value,multiplicity` header) or JSON file.
pub fn load_spectrum(path: impl AsRef<Path>, quantum: Rational) -> Result<ValueSpectrum> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    if text.trim_start().starts_with('{') {
        parse_spectrum_json(&text, path, quantum)
    } else {
        parse_spectrum_csv(&text, path, quantum)
    }
}

fn parse_spectrum_json(text: &str, path: &Path, quantum: Rational) -> Result<ValueSpectrum> {
    let file: SpectrumFile = serde_json::from_str(text)?;
    if file.values.len() != file.multiplicities.len() {
        return Err(Error::InvalidSpectrum(format!(
            "{}: {} values but {} multiplicities",
            path.display(),
            file.values.len(),
            file.multiplicities.len()
        )));
    }
    let mut values = Vec::with_capacity(file.values.len());
    for (row, v) in file.values.iter().enumerate() {
        values.push(parse_rational(v).map_err(|message| Error::Parse {
            path: path.to_path_buf(),
            row: row + 1,
            column: "values".into(),
            message,
        })?);
    }
    let mults: Vec<i64> = file.multiplicities.iter().map(|&q| q as i64).collect();
    ValueSpectrum::from_values(quantum, &values, &mults)
}

/// Parse CSV text with header `value,multiplicity`. Row numbers in errors are
/// 1-based data rows.
pub fn parse_spectrum_csv(text: &str, path: &Path, quantum: Rational) -> Result<ValueSpectrum> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let column = |name: &str| headers.iter().position(|h| h == name);
    let (Some(vcol), Some(qcol)) = (column("value"), column("multiplicity")) else {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            row: 0,
            column: "header".into(),
            message: format!("expected header `value,multiplicity`, got {headers:?}"),
        });
    };
    let mut values = Vec::new();
    let mut mults = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let row = idx + 1;
        let record = record?;
        let field = |col: usize, name: &str| {
            record.get(col).ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                row,
                column: name.into(),
                message: "missing field".into(),
            })
        };
        let value = parse_rational(field(vcol, "value")?).map_err(|message| Error::Parse {
            path: path.to_path_buf(),
            row,
            column: "value".into(),
            message,
        })?;
        let q_text = field(qcol, "multiplicity")?;
        let q: i64 = q_text.parse().map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            row,
            column: "multiplicity".into(),
            message: format!("{q_text:?}: {e}"),
        })?;
        if q <= 0 {
            return Err(Error::NonPositiveMultiplicity(q));
        }
        values.push(value);
        mults.push(q);
    }
    ValueSpectrum::from_values(quantum, &values, &mults)
}

impl FromStr for ValueSpectrum {
    type Err = Error;

    /// Inline form `value:multiplicity,...` with unit quantum, e.g. `1:1,2:2`.
    fn from_str(s: &str) -> Result<Self> {
        let mut values = Vec::new();
        let mut mults = Vec::new();
        for item in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let (v, q) = item.split_once(':').unwrap_or((item, "1"));
            values.push(parse_rational(v).map_err(Error::InvalidSpectrum)?);
            mults.push(
                q.trim()
                    .parse::<i64>()
                    .map_err(|e| Error::InvalidSpectrum(format!("{q:?}: {e}")))?,
            );
        }
        ValueSpectrum::from_values(Rational::from_integer(1), &values, &mults)
    }
}

/// Particle count and energy budget of the ensemble.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnsembleBudget {
    n: u64,
    mean: Rational,
    energy: Rational,
    energy_grid: u64,
    xbar: Rational,
}

impl EnsembleBudget {
    pub fn n(&self) -> u64 {
        self.n
    }

    /// Mean `M = E / N`.
    pub fn mean(&self) -> Rational {
        self.mean
    }

    /// Exact energy budget `E`.
    pub fn energy_exact(&self) -> Rational {
        self.energy
    }

    pub fn energy(&self) -> f64 {
        rational_to_f64(&self.energy)
    }

    /// `E / u`, the budget on the integer grid.
    pub fn energy_grid(&self) -> u64 {
        self.energy_grid
    }

    pub fn xbar(&self) -> Rational {
        self.xbar
    }
}

/// Budget with `E = M N`; rejects `M > xbar` and off-grid `E`.
pub fn make_budget(spectrum: &ValueSpectrum, n: u64, mean: Rational) -> Result<EnsembleBudget> {
    if n == 0 {
        return Err(Error::InvalidArgument("N must be positive".into()));
    }
    if mean.is_negative() {
        return Err(Error::InvalidArgument(format!(
            "negative mean {}",
            format_rational(&mean)
        )));
    }
    let xbar = spectrum.xbar();
    if mean > xbar {
        return Err(Error::InadmissibleMean {
            mean: format_rational(&mean),
            xbar: format_rational(&xbar),
        });
    }
    let energy = mean * Rational::from_integer(n as i64);
    let grid = energy / spectrum.quantum();
    if !grid.is_integer() {
        return Err(Error::OffGrid {
            value: format_rational(&energy),
            quantum: format_rational(&spectrum.quantum()),
        });
    }
    Ok(EnsembleBudget {
        n,
        mean,
        energy,
        energy_grid: grid.to_integer() as u64,
        xbar,
    })
}

/// Budget from an energy given directly on the grid (`E = energy_grid * u`).
pub fn budget_from_grid(spectrum: &ValueSpectrum, n: u64, energy_grid: u64) -> Result<EnsembleBudget> {
    if n == 0 {
        return Err(Error::InvalidArgument("N must be positive".into()));
    }
    let energy = spectrum.quantum() * Rational::from_integer(energy_grid as i64);
    make_budget(spectrum, n, energy / Rational::from_integer(n as i64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn r(p: i64, q: i64) -> Rational {
        Rational::new(p, q)
    }

    fn csv_file(body: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        write!(f, "value,multiplicity\n{body}").unwrap();
        f
    }

    #[test]
    fn identity_ingestion() {
        let f = csv_file("1,1\n2,1\n");
        let s = load_spectrum(f.path(), r(1, 1)).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.levels(), &[1, 2]);
        assert_eq!(s.multiplicities(), &[1, 1]);
    }

    #[test]
    fn merges_and_sorts() {
        let f = csv_file("2,1\n1,1\n1,2\n");
        let s = load_spectrum(f.path(), r(1, 1)).unwrap();
        assert_eq!(s.levels(), &[1, 2]);
        assert_eq!(s.multiplicities(), &[3, 1]);
    }

    #[test]
    fn rejects_off_grid() {
        let f = csv_file("0.5,1\n");
        let err = load_spectrum(f.path(), r(1, 1)).unwrap_err();
        assert!(matches!(err, Error::OffGrid { .. }), "{err}");
    }

    #[test]
    fn accepts_fractions_and_fine_quantum() {
        let f = csv_file("1/2,1\n0.75,2\n");
        let s = load_spectrum(f.path(), r(1, 4)).unwrap();
        assert_eq!(s.levels(), &[2, 3]);
        assert_eq!(s.value(1), r(3, 4));
    }

    #[test]
    fn reports_parse_location() {
        let f = csv_file("1,1\nabc,1\n");
        match load_spectrum(f.path(), r(1, 1)).unwrap_err() {
            Error::Parse { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "value");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn rejects_nonpositive_multiplicity() {
        let f = csv_file("1,0\n");
        assert!(matches!(
            load_spectrum(f.path(), r(1, 1)).unwrap_err(),
            Error::NonPositiveMultiplicity(0)
        ));
        let f = csv_file("1,-2\n");
        assert!(matches!(
            load_spectrum(f.path(), r(1, 1)).unwrap_err(),
            Error::NonPositiveMultiplicity(-2)
        ));
    }

    #[test]
    fn budget_boundary_mean_is_accepted() {
        let s = ValueSpectrum::unit(&[1, 2], &[1, 1]).unwrap();
        let b = make_budget(&s, 2, r(3, 2)).unwrap();
        assert_eq!(b.energy_grid(), 3);
        assert_eq!(b.xbar(), r(3, 2));
    }

    #[test]
    fn budget_rejects_mean_above_xbar() {
        let s = ValueSpectrum::unit(&[1, 2], &[1, 1]).unwrap();
        assert!(matches!(
            make_budget(&s, 2, r(2, 1)).unwrap_err(),
            Error::InadmissibleMean { .. }
        ));
    }

    #[test]
    fn budget_direct_arithmetic() {
        let s = ValueSpectrum::unit(&[1, 3], &[2, 2]).unwrap();
        let b = make_budget(&s, 4, r(2, 1)).unwrap();
        assert_eq!(b.energy_exact(), r(8, 1));
        assert_eq!(b.xbar(), r(2, 1));
    }

    #[test]
    fn budget_rejects_off_grid_energy() {
        let s = ValueSpectrum::unit(&[1, 3], &[1, 1]).unwrap();
        assert!(matches!(
            make_budget(&s, 3, r(3, 2)).unwrap_err(),
            Error::OffGrid { .. }
        ));
    }

    #[test]
    fn regime_warnings_flag_small_s() {
        let s = ValueSpectrum::unit(&[1, 2, 9], &[1, 1, 1]).unwrap();
        let w = s.regime_warnings(100, 5.0, 0.5, 2.0);
        assert_eq!(w.len(), 2);
    }

    #[test]
    fn rational_parser() {
        assert_eq!(parse_rational("1.25").unwrap(), r(5, 4));
        assert_eq!(parse_rational("-3").unwrap(), r(-3, 1));
        assert_eq!(parse_rational(".5").unwrap(), r(1, 2));
        assert_eq!(parse_rational("6/4").unwrap(), r(3, 2));
        assert!(parse_rational("1/0").is_err());
        assert!(parse_rational("1.2.3").is_err());
        assert!(parse_rational("").is_err());
    }

    proptest! {
        #[test]
        fn json_reload_is_idempotent(
            rows in prop::collection::vec((0u64..40, 1u64..5), 1..8),
            den in 1i64..5,
        ) {
            let quantum = r(1, den);
            let levels: Vec<u64> = rows.iter().map(|r| r.0).collect();
            let mults: Vec<u64> = rows.iter().map(|r| r.1).collect();
            let s = ValueSpectrum::from_levels(quantum, &levels, &mults).unwrap();
            let mut f = tempfile::NamedTempFile::new().unwrap();
            f.write_all(s.to_json().unwrap().as_bytes()).unwrap();
            let back = load_spectrum(f.path(), quantum).unwrap();
            prop_assert_eq!(&back, &s);
            let mut g = tempfile::NamedTempFile::new().unwrap();
            g.write_all(s.to_csv().as_bytes()).unwrap();
            prop_assert_eq!(load_spectrum(g.path(), quantum).unwrap(), s);
        }

        #[test]
        fn merging_preserves_total_multiplicity(
            rows in prop::collection::vec((0u64..10, 1u64..5), 1..12),
        ) {
            let levels: Vec<u64> = rows.iter().map(|r| r.0).collect();
            let mults: Vec<u64> = rows.iter().map(|r| r.1).collect();
            let s = ValueSpectrum::unit(&levels, &mults).unwrap();
            prop_assert_eq!(s.total_multiplicity(), mults.iter().sum::<u64>());
            prop_assert!(s.levels().windows(2).all(|w| w[0] < w[1]));
        }

        #[test]
        fn budgets_respect_xbar(
            rows in prop::collection::vec((0u64..10, 1u64..5), 1..6),
            n in 1u64..50,
            e in 0u64..500,
        ) {
            let levels: Vec<u64> = rows.iter().map(|r| r.0).collect();
            let mults: Vec<u64> = rows.iter().map(|r| r.1).collect();
            let s = ValueSpectrum::unit(&levels, &mults).unwrap();
            if let Ok(b) = budget_from_grid(&s, n, e) {
                prop_assert!(b.energy_exact() <= s.xbar() * Rational::from_integer(n as i64));
            }
        }
    }
}
