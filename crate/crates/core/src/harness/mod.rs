//! Experiment drivers: concentration of the cumulative occupancy, decay of the
//! energy-restricted Boltzmann average, and saddle-point error scaling.
//!
//! Each ladder rung is independent and runs on the rayon pool; rows come back
//! in ladder order, so reports are byte-identical for a given config.

pub mod report;

use std::time::Instant;

use num_bigint::BigUint;
use num_traits::Zero;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::befit::{cumulative_curve, fit_bose, BoseFit};
use crate::ensemble::{count_variants, sample_with, split_profile, CountTable, TableGuard};
use crate::error::{Error, Result};
use crate::numeric::{big_ln, big_ratio, log_sum_exp};
use crate::partition::{
    asymptotic_tilt, chernoff_tail_bound, partition_exact, partition_saddle, TailBoundParams,
};
use crate::spectrum::{make_budget, rational_to_f64, Rational, ValueSpectrum};

pub use report::{emit_report, Field, Format, Record, Report};

/// Samples per independently seeded chunk.
const SAMPLE_CHUNK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Mode {
    Exact,
    #[value(name = "mc")]
    MonteCarlo,
    Both,
}

impl Mode {
    fn exact(self) -> bool {
        matches!(self, Mode::Exact | Mode::Both)
    }

    fn monte_carlo(self) -> bool {
        matches!(self, Mode::MonteCarlo | Mode::Both)
    }
}

/// How the split index `l` is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LPolicy {
    /// Smallest `l` with `sum_{i <= l} q_i >= fraction * Q`.
    Quantile {
        fraction: f64,
    },
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Threshold exponent is `3/4 + epsilon`; also used for `N^(1/2 + epsilon)`.
    pub epsilon: f64,
    pub l_policy: LPolicy,
    /// Side condition `sum_{i <= l} q_i >= eps_q Q`.
    pub eps_q: f64,
    pub n_ladder: Vec<u64>,
    pub num_samples: usize,
    pub seed: u64,
    pub mode: Mode,
    /// Exponent in the tilt `c = Delta / N^(1 + alpha)`.
    pub tilt_alpha: f64,
    pub delta_override: Option<f64>,
    pub beta_override: Option<f64>,
    /// Multiply every multiplicity by `N / N_0` so that `Q` grows with `N`.
    pub replicate: bool,
    pub guard: TableGuard,
    /// Wall-clock timings make reports non-reproducible, so they are opt-in.
    pub record_timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            l_policy: LPolicy::Quantile { fraction: 0.5 },
            eps_q: 0.05,
            n_ladder: vec![20, 40, 80],
            num_samples: 10_000,
            seed: 0,
            mode: Mode::Exact,
            tilt_alpha: 0.0,
            delta_override: None,
            beta_override: None,
            replicate: false,
            guard: TableGuard::default(),
            record_timing: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon <= 0.25) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must lie in (0, 1/4], got {}",
                self.epsilon
            )));
        }
        if self.n_ladder.is_empty() || self.n_ladder.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(format!(
                "N ladder must be nonempty and strictly increasing, got {:?}",
                self.n_ladder
            )));
        }
        if self.n_ladder[0] == 0 {
            return Err(Error::InvalidArgument("N ladder entries must be positive".into()));
        }
        if self.num_samples == 0 {
            return Err(Error::InvalidArgument("num_samples must be at least 1".into()));
        }
        if let Some(d) = self.delta_override {
            if !(d >= 0.0) {
                return Err(Error::InvalidArgument(format!("Delta must be >= 0, got {d}")));
            }
        }
        Ok(())
    }

    fn rung_spectrum(&self, spectrum: &ValueSpectrum, n: u64) -> Result<ValueSpectrum> {
        if self.replicate {
            spectrum.replicated((n / self.n_ladder[0]).max(1))
        } else {
            Ok(spectrum.clone())
        }
    }
}

/// Split index under `policy`, checked against the side condition.
pub fn select_l(spectrum: &ValueSpectrum, policy: LPolicy, eps_q: f64) -> Result<usize> {
    let q_total = spectrum.total_multiplicity() as f64;
    let l = match policy {
        LPolicy::Fixed(l) => l,
        LPolicy::Quantile { fraction } => (1..=spectrum.len())
            .find(|&l| spectrum.head_multiplicity(l) as f64 >= fraction * q_total)
            .unwrap_or(spectrum.len()),
    };
    if l == 0 || l > spectrum.len() {
        return Err(Error::IndexOutOfRange {
            index: l,
            max: spectrum.len(),
        });
    }
    if (spectrum.head_multiplicity(l) as f64) < eps_q * q_total {
        return Err(Error::InvalidArgument(format!(
            "l = {l} violates sum q_i >= {eps_q} Q"
        )));
    }
    Ok(l)
}

/// Concentration threshold `N^(3/4 + epsilon)`.
pub fn concentration_threshold(n: u64, epsilon: f64) -> f64 {
    (n as f64).powf(0.75 + epsilon)
}

/// Tilts tried when minimizing the tail bound: log-spaced inside `(0, gap)`.
fn tilt_grid(gap: f64) -> impl Iterator<Item = f64> {
    (1..=64).map(move |k| gap * 10f64.powf(-4.0 + 4.0 * k as f64 / 65.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationRow {
    pub n: u64,
    pub energy: f64,
    pub l: usize,
    pub delta: f64,
    pub fit: BoseFit,
    pub curve: f64,
    pub ln_total: f64,
    pub exact_fraction: Option<f64>,
    pub mc_fraction: Option<f64>,
    pub mc_samples: usize,
    /// Bound at the asymptotic tilt `c = Delta / N^(1 + alpha)`.
    pub tilt: Option<f64>,
    pub bound_fraction_asymptotic: Option<f64>,
    /// Bound minimized over a tilt grid inside the convergence region.
    pub bound_fraction: Option<f64>,
    pub wall_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationReport {
    pub mean: Rational,
    pub epsilon: f64,
    pub rows: Vec<ConcentrationRow>,
}

impl ConcentrationReport {
    /// Exact tail fractions in ladder order (rows without one are skipped).
    pub fn exact_fractions(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.exact_fraction).collect()
    }

    pub fn exact_strictly_decreasing(&self) -> bool {
        let f = self.exact_fractions();
        f.len() == self.rows.len() && f.windows(2).all(|w| w[1] < w[0])
    }

    /// Least-squares slope of `ln fraction` against `ln N` over rows with a
    /// positive exact fraction; a decay exponent, not an asserted constant.
    pub fn decay_exponent(&self) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .rows
            .iter()
            .filter_map(|r| {
                r.exact_fraction
                    .filter(|&f| f > 0.0)
                    .map(|f| ((r.n as f64).ln(), f.ln()))
            })
            .collect();
        log_log_slope(&pts)
    }

    pub fn to_report(&self) -> Report {
        let mut report = Report::table(
            "concentration",
            &[
                "N",
                "E",
                "l",
                "delta",
                "beta",
                "nu",
                "nu_nonnegative",
                "curve",
                "ln_total",
                "exact_fraction",
                "mc_fraction",
                "mc_samples",
                "tilt",
                "bound_fraction_asymptotic",
                "bound_fraction",
                "wall_ms",
            ],
        );
        if let Report::Table { rows, summary, .. } = &mut report {
            for r in &self.rows {
                rows.push(
                    Record::new()
                        .with("N", r.n)
                        .with("E", r.energy)
                        .with("l", r.l)
                        .with("delta", r.delta)
                        .with("beta", r.fit.beta)
                        .with("nu", r.fit.nu)
                        .with("nu_nonnegative", r.fit.nu_is_nonnegative())
                        .with("curve", r.curve)
                        .with("ln_total", r.ln_total)
                        .with("exact_fraction", r.exact_fraction)
                        .with("mc_fraction", r.mc_fraction)
                        .with("mc_samples", r.mc_samples)
                        .with("tilt", r.tilt)
                        .with("bound_fraction_asymptotic", r.bound_fraction_asymptotic)
                        .with("bound_fraction", r.bound_fraction)
                        .with("wall_ms", r.wall_ms),
                );
            }
            *summary = Record::new()
                .with("mean", crate::spectrum::format_rational(&self.mean))
                .with("epsilon", self.epsilon)
                .with("exact_strictly_decreasing", self.exact_strictly_decreasing())
                .with("decay_exponent", self.decay_exponent());
        }
        report
    }
}

fn log_log_slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Fraction of `samples` uniform draws with `|B_l - curve| >= delta`, drawn in
/// fixed-size chunks whose seeds depend only on `(seed, rung, chunk)`.
fn monte_carlo_fraction(
    table: &CountTable,
    l: usize,
    curve: f64,
    delta: f64,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let chunks = samples.div_ceil(SAMPLE_CHUNK);
    let hits: Result<Vec<usize>> = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(chunk as u64 + 1);
            let size = SAMPLE_CHUNK.min(samples - chunk * SAMPLE_CHUNK);
            let mut hits = 0;
            for _ in 0..size {
                let occ = sample_with(table, &mut rng)?;
                if (occ.b(l) as f64 - curve).abs() >= delta {
                    hits += 1;
                }
            }
            Ok(hits)
        })
        .collect();
    Ok(hits?.into_iter().sum::<usize>() as f64 / samples as f64)
}

fn rung_seed(base: u64, n: u64) -> u64 {
    base ^ n.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Tail fraction of `|B_l - curve| >= N^(3/4 + epsilon)` along the N ladder,
/// exact and/or sampled, together with the exponential bound.
pub fn run_concentration(
    spectrum: &ValueSpectrum,
    mean: Rational,
    config: &ExperimentConfig,
) -> Result<ConcentrationReport> {
    config.validate()?;
    let rows: Result<Vec<ConcentrationRow>> = config
        .n_ladder
        .par_iter()
        .map(|&n| concentration_rung(spectrum, mean, config, n))
        .collect();
    Ok(ConcentrationReport {
        mean,
        epsilon: config.epsilon,
        rows: rows?,
    })
}

fn concentration_rung(
    spectrum: &ValueSpectrum,
    mean: Rational,
    config: &ExperimentConfig,
    n: u64,
) -> Result<ConcentrationRow> {
    let start = Instant::now();
    let spectrum = config.rung_spectrum(spectrum, n)?;
    let budget = make_budget(&spectrum, n, mean)?;
    let fit = fit_bose(&spectrum, &budget)?;
    let l = select_l(&spectrum, config.l_policy, config.eps_q)?;
    let curve = cumulative_curve(&fit, l)?;
    let delta = config
        .delta_override
        .unwrap_or_else(|| concentration_threshold(n, config.epsilon));

    let table = CountTable::new(&spectrum, n, budget.energy_grid(), &config.guard)?;
    let total = count_variants(&table);
    if total.is_zero() {
        return Err(Error::EmptyEnsemble);
    }
    let ln_total = big_ln(&total);

    let mut exact_fraction = None;
    if config.mode.exact() {
        // The split needs a second table of the same size for the tail cells.
        let admitted = config.guard.check(2 * spectrum.len(), n, budget.energy_grid());
        match admitted {
            Ok(()) => {
                let profile = split_profile(&table, l)?;
                let tail = if delta > n as f64 + curve {
                    BigUint::zero()
                } else {
                    profile.count_at_least(curve, delta)
                };
                exact_fraction = Some(big_ratio(&tail, &total));
            }
            Err(e) if config.mode == Mode::Both => {
                log::warn!("N = {n}: exact tail skipped ({e}); using Monte Carlo only");
            }
            Err(e) => return Err(e),
        }
    }

    let mc_fraction = if config.mode.monte_carlo() {
        Some(monte_carlo_fraction(
            &table,
            l,
            curve,
            delta,
            config.num_samples,
            rung_seed(config.seed, n),
        )?)
    } else {
        None
    };

    let (mut tilt, mut bound_asym, mut bound_best) = (None, None, None);
    if delta <= 0.0 {
        bound_asym = Some(1.0);
        bound_best = Some(1.0);
    } else if l < spectrum.len() {
        let n_f = n as f64;
        let e_f = budget.energy();
        let gap = crate::befit::nu_limit(&spectrum, fit.beta) - fit.nu;
        let eval = |c: f64| -> Result<f64> {
            let tp = TailBoundParams::new(&spectrum, c, delta, l)?;
            let log_bound = chernoff_tail_bound(&spectrum, &fit, &tp, n_f, e_f)?;
            Ok((log_bound - ln_total).exp().min(1.0))
        };
        let c = asymptotic_tilt(delta, n, config.tilt_alpha);
        tilt = Some(c);
        bound_asym = Some(eval(c)?);
        let mut best: f64 = 1.0;
        for c in tilt_grid(gap) {
            best = best.min(eval(c)?);
        }
        bound_best = Some(best);
    }

    Ok(ConcentrationRow {
        n,
        energy: budget.energy(),
        l,
        delta,
        curve,
        ln_total,
        fit,
        exact_fraction,
        mc_fraction,
        mc_samples: if config.mode.monte_carlo() {
            config.num_samples
        } else {
            0
        },
        tilt,
        bound_fraction_asymptotic: bound_asym,
        bound_fraction: bound_best,
        wall_ms: config.record_timing.then(|| start.elapsed().as_secs_f64() * 1e3),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lemma2Row {
    pub n: u64,
    pub energy: f64,
    pub beta: f64,
    /// `E - N^(1/2 + epsilon)`.
    pub cap: f64,
    /// `ln R(N)`; `-inf` when the restricted set is empty.
    pub ln_r: f64,
    pub r: f64,
    /// `R(N_k) / R(N_{k-1})`.
    pub ratio_prev: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lemma2Report {
    pub mean: Rational,
    pub epsilon: f64,
    pub rows: Vec<Lemma2Row>,
}

impl Lemma2Report {
    pub fn strictly_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].ln_r < w[0].ln_r)
    }

    pub fn to_report(&self) -> Report {
        let mut report = Report::table("lemma2", &["N", "E", "beta", "cap", "ln_R", "R", "ratio_prev"]);
        if let Report::Table { rows, summary, .. } = &mut report {
            for r in &self.rows {
                rows.push(
                    Record::new()
                        .with("N", r.n)
                        .with("E", r.energy)
                        .with("beta", r.beta)
                        .with("cap", r.cap)
                        .with("ln_R", r.ln_r)
                        .with("R", r.r)
                        .with("ratio_prev", r.ratio_prev),
                );
            }
            *summary = Record::new()
                .with("mean", crate::spectrum::format_rational(&self.mean))
                .with("epsilon", self.epsilon)
                .with("strictly_decreasing", self.strictly_decreasing());
        }
        report
    }
}

/// `R(N) = (1 / N{M}) sum_{e <= E - N^(1/2 + eps)} count[N][e] exp(-beta' e)`.
pub fn run_lemma2(
    spectrum: &ValueSpectrum,
    mean: Rational,
    config: &ExperimentConfig,
) -> Result<Lemma2Report> {
    config.validate()?;
    let rows: Result<Vec<Lemma2Row>> = config
        .n_ladder
        .par_iter()
        .map(|&n| {
            let spectrum = config.rung_spectrum(spectrum, n)?;
            let budget = make_budget(&spectrum, n, mean)?;
            let beta = match config.beta_override {
                Some(b) => b,
                None => fit_bose(&spectrum, &budget)?.beta,
            };
            let table = CountTable::new(&spectrum, n, budget.energy_grid(), &config.guard)?;
            let total = count_variants(&table);
            if total.is_zero() {
                return Err(Error::EmptyEnsemble);
            }
            let u = rational_to_f64(&spectrum.quantum());
            let cap = budget.energy() - (n as f64).powf(0.5 + config.epsilon);
            let ln_r = if cap < 0.0 {
                f64::NEG_INFINITY
            } else {
                let cap_grid = (cap / u + 1e-9).floor() as usize;
                let terms: Vec<f64> = table
                    .energy_row(n)
                    .iter()
                    .enumerate()
                    .take(cap_grid + 1)
                    .filter(|(_, c)| !c.is_zero())
                    .map(|(e, c)| big_ln(c) - beta * e as f64 * u)
                    .collect();
                log_sum_exp(&terms) - big_ln(&total)
            };
            Ok(Lemma2Row {
                n,
                energy: budget.energy(),
                beta,
                cap,
                ln_r,
                r: ln_r.exp(),
                ratio_prev: None,
            })
        })
        .collect();
    let mut rows = rows?;
    for k in 1..rows.len() {
        rows[k].ratio_prev = Some((rows[k].ln_r - rows[k - 1].ln_r).exp());
    }
    Ok(Lemma2Report {
        mean,
        epsilon: config.epsilon,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaddleRow {
    pub n: u64,
    pub ln_z_exact: f64,
    pub ln_z_saddle: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaddleReport {
    pub beta: f64,
    pub rows: Vec<SaddleRow>,
    /// Single-cell spectra have exactly one variant per `N`.
    pub degenerate: bool,
}

impl SaddleReport {
    /// True when the relative error fails to decrease at some rung.
    pub fn non_decreasing_error(&self) -> bool {
        self.rows.windows(2).any(|w| w[1].rel_err >= w[0].rel_err)
    }

    pub fn to_report(&self) -> Report {
        let mut report = Report::table("saddle-scan", &["N", "lnZ_exact", "lnZ_saddle", "rel_err"]);
        if let Report::Table { rows, summary, .. } = &mut report {
            for r in &self.rows {
                rows.push(
                    Record::new()
                        .with("N", r.n)
                        .with("lnZ_exact", r.ln_z_exact)
                        .with("lnZ_saddle", r.ln_z_saddle)
                        .with("rel_err", r.rel_err),
                );
            }
            *summary = Record::new()
                .with("beta", self.beta)
                .with("degenerate", self.degenerate)
                .with("non_decreasing_error", self.non_decreasing_error());
        }
        report
    }
}

/// Exact `ln Z` against the saddle-point estimate along the ladder.
pub fn run_saddle_scan(
    spectrum: &ValueSpectrum,
    beta: f64,
    n_ladder: &[u64],
    guard: &TableGuard,
) -> Result<SaddleReport> {
    let Some(&n_top) = n_ladder.iter().max() else {
        return Err(Error::InvalidArgument("empty N ladder".into()));
    };
    let table = CountTable::full_range(spectrum, n_top, guard)?;
    let rows: Result<Vec<SaddleRow>> = n_ladder
        .par_iter()
        .map(|&n| {
            let exact = partition_exact(&table, beta, n)?;
            let saddle = partition_saddle(spectrum, beta, n)?;
            let rel_err = if exact == 0.0 {
                (saddle - exact).abs()
            } else {
                ((saddle - exact) / exact).abs()
            };
            Ok(SaddleRow {
                n,
                ln_z_exact: exact,
                ln_z_saddle: saddle,
                rel_err,
            })
        })
        .collect();
    Ok(SaddleReport {
        beta,
        rows: rows?,
        degenerate: spectrum.len() == 1,
    })
}
