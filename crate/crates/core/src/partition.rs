//! Canonical and grand-canonical partition functions, the saddle-point
//! estimate of `Z(beta, N)`, and the exponential tail bound on deviating
//! variants.
//!
//! Everything is returned in log-domain. Cell ranges are 0-based half-open
//! intervals: the first `l` cells are `0..l`.

use std::ops::Range;

use num_bigint::BigUint;
use num_complex::Complex64;

use crate::befit::{check_admissible, nu_limit, solve_nu, BoseFit};
use crate::ensemble::CountTable;
use crate::error::{Error, Result};
use crate::numeric::{big_ln, log_sum_exp};
use crate::spectrum::{rational_to_f64, ValueSpectrum};

/// Grand-canonical parameters; `nu < beta * x_1` keeps every factor finite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrandParams {
    pub beta: f64,
    pub nu: f64,
}

impl GrandParams {
    pub fn new(spectrum: &ValueSpectrum, beta: f64, nu: f64) -> Result<Self> {
        check_admissible(spectrum, beta, nu)?;
        Ok(Self { beta, nu })
    }

    pub fn from_fit(fit: &BoseFit) -> Self {
        Self {
            beta: fit.beta,
            nu: fit.nu,
        }
    }

    fn check(&self, spectrum: &ValueSpectrum) -> Result<()> {
        check_admissible(spectrum, self.beta, self.nu)
    }
}

/// Tilt `c`, deviation threshold `Delta` and split index `l` (`1 <= l < s`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailBoundParams {
    pub c: f64,
    pub delta: f64,
    pub l: usize,
}

impl TailBoundParams {
    pub fn new(spectrum: &ValueSpectrum, c: f64, delta: f64, l: usize) -> Result<Self> {
        if !(c > 0.0) || !(delta > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tail bound needs c > 0 and Delta > 0, got c = {c}, Delta = {delta}"
            )));
        }
        if l == 0 || l >= spectrum.len() {
            return Err(Error::IndexOutOfRange {
                index: l,
                max: spectrum.len().saturating_sub(1),
            });
        }
        Ok(Self { c, delta, l })
    }
}

fn check_range(spectrum: &ValueSpectrum, range: &Range<usize>) -> Result<()> {
    if range.start > range.end || range.end > spectrum.len() {
        return Err(Error::IndexOutOfRange {
            index: range.end,
            max: spectrum.len(),
        });
    }
    Ok(())
}

/// `ln xi_i = -q_i ln(1 - exp(nu - beta x_i))`.
fn log_xi_unchecked(x: f64, q: u64, params: &GrandParams) -> f64 {
    -(q as f64) * (-(params.nu - params.beta * x).exp_m1()).ln()
}

/// Cell grand factor `xi_i = (1 - exp(nu - beta x_i))^-q_i` (0-based `i`).
pub fn xi(spectrum: &ValueSpectrum, i: usize, params: &GrandParams) -> Result<f64> {
    params.check(spectrum)?;
    if i >= spectrum.len() {
        return Err(Error::IndexOutOfRange {
            index: i,
            max: spectrum.len() - 1,
        });
    }
    let x = spectrum.energies()[i];
    Ok(log_xi_unchecked(x, spectrum.multiplicities()[i], params).exp())
}

/// `ln prod_{i in range} xi_i`.
pub fn log_zeta(spectrum: &ValueSpectrum, range: Range<usize>, params: &GrandParams) -> Result<f64> {
    params.check(spectrum)?;
    check_range(spectrum, &range)?;
    let energies = spectrum.energies();
    Ok(range
        .map(|i| log_xi_unchecked(energies[i], spectrum.multiplicities()[i], params))
        .sum())
}

/// First `nu`-derivative of `ln zeta` over a range: the expected occupation there.
pub fn zeta_slope(spectrum: &ValueSpectrum, range: Range<usize>, params: &GrandParams) -> Result<f64> {
    params.check(spectrum)?;
    check_range(spectrum, &range)?;
    let energies = spectrum.energies();
    Ok(range
        .map(|i| spectrum.multiplicities()[i] as f64 / (params.beta * energies[i] - params.nu).exp_m1())
        .sum())
}

/// Second `nu`-derivative of `ln zeta` and its single-term domination bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Curvature {
    /// `sum_{i in range} q_i r_i / (1 - r_i)^2`, `r_i = exp(nu - beta x_i)`.
    pub value: f64,
    /// `Q d`, `d = r_1 / (1 - r_1)^2` for the lowest value.
    pub bound: f64,
}

fn cell_curvature(x: f64, params: &GrandParams) -> f64 {
    let a = params.beta * x - params.nu;
    let em1 = a.exp_m1();
    // r / (1 - r)^2 == e^a / (e^a - 1)^2
    (em1 + 1.0) / (em1 * em1)
}

pub fn zeta_curvature(
    spectrum: &ValueSpectrum,
    range: Range<usize>,
    params: &GrandParams,
) -> Result<Curvature> {
    params.check(spectrum)?;
    check_range(spectrum, &range)?;
    let energies = spectrum.energies();
    let value = range
        .map(|i| spectrum.multiplicities()[i] as f64 * cell_curvature(energies[i], params))
        .sum();
    let bound = spectrum.total_multiplicity() as f64 * curvature_factor(spectrum, params);
    Ok(Curvature { value, bound })
}

/// `d = r_1 / (1 - r_1)^2`; dominates every per-slot curvature term.
pub fn curvature_factor(spectrum: &ValueSpectrum, params: &GrandParams) -> f64 {
    let limit = nu_limit(spectrum, params.beta);
    let a = limit - params.nu;
    let em1 = a.exp_m1();
    (em1 + 1.0) / (em1 * em1)
}

/// `ln zeta_s(beta, nu + i alpha)` on the whole spectrum.
pub fn log_zeta_complex(spectrum: &ValueSpectrum, beta: f64, nu: f64, alpha: f64) -> Complex64 {
    let z = Complex64::new(nu, alpha);
    spectrum
        .energies()
        .iter()
        .zip(spectrum.multiplicities())
        .map(|(&x, &q)| {
            let r = (z - beta * x).exp();
            -(q as f64) * (Complex64::new(1.0, 0.0) - r).ln()
        })
        .sum()
}

/// Phase `-i N alpha + ln zeta_s(beta, nu + i alpha)` of the Fourier integral for `Z`.
pub fn phase(spectrum: &ValueSpectrum, beta: f64, nu: f64, n: f64, alpha: f64) -> Complex64 {
    Complex64::new(0.0, -n * alpha) + log_zeta_complex(spectrum, beta, nu, alpha)
}

fn check_full_range(table: &CountTable, n: u64) -> Result<()> {
    if n > table.n() {
        return Err(Error::InvalidArgument(format!(
            "table holds at most {} particles, asked for {n}",
            table.n()
        )));
    }
    let top = *table.spectrum().levels().last().expect("nonempty spectrum");
    let need = n.saturating_mul(top);
    if table.energy_cap() < need {
        return Err(Error::TruncatedTable {
            have: table.energy_cap(),
            need,
        });
    }
    Ok(())
}

/// `ln Z(beta, N) = ln sum_e count[s][N][e] exp(-beta e)`, exact up to floating summation.
pub fn partition_exact(table: &CountTable, beta: f64, n: u64) -> Result<f64> {
    check_full_range(table, n)?;
    let u = rational_to_f64(&table.spectrum().quantum());
    Ok(log_partition_row(table.energy_row(n), beta, u))
}

fn log_partition_row(row: &[BigUint], beta: f64, u: f64) -> f64 {
    let terms: Vec<f64> = row
        .iter()
        .enumerate()
        .filter_map(|(e, c)| {
            let lc = big_ln(c);
            lc.is_finite().then(|| lc - beta * e as f64 * u)
        })
        .collect();
    log_sum_exp(&terms)
}

/// Ingredients of the Gaussian saddle-point estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaddlePoint {
    pub nu: f64,
    pub log_zeta: f64,
    pub curvature: f64,
    pub ln_z: f64,
}

/// Saddle point of `Z(beta, N) = e^{-nu N}/(2 pi) int e^{-i N a} zeta(nu + i a) da`
/// at `a = 0` with the Gaussian normalization.
pub fn saddle_point(spectrum: &ValueSpectrum, beta: f64, n: u64) -> Result<SaddlePoint> {
    if !(beta > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "saddle point needs beta > 0, got {beta}"
        )));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("saddle point needs N >= 1".into()));
    }
    let nu = solve_nu(spectrum, beta, n as f64)?;
    let params = GrandParams { beta, nu };
    let log_zeta = log_zeta(spectrum, 0..spectrum.len(), &params)?;
    let curvature = zeta_curvature(spectrum, 0..spectrum.len(), &params)?.value;
    let ln_z = -nu * n as f64 + log_zeta - 0.5 * (2.0 * std::f64::consts::PI * curvature).ln();
    Ok(SaddlePoint {
        nu,
        log_zeta,
        curvature,
        ln_z,
    })
}

/// `ln Z-hat(beta, N)`, the saddle-point estimate of the canonical partition function.
pub fn partition_saddle(spectrum: &ValueSpectrum, beta: f64, n: u64) -> Result<f64> {
    saddle_point(spectrum, beta, n).map(|p| p.ln_z)
}

/// Tilt suggested by the asymptotic argument: `c = Delta / N^(1 + alpha)`.
pub fn asymptotic_tilt(delta: f64, n: u64, alpha: f64) -> f64 {
    delta / (n as f64).powf(1.0 + alpha)
}

/// Upper bound on the log of the number of variants in `M` with `S_l >= Delta`:
///
/// `ln 2 + ln zeta_s(beta', nu') - c Delta + (c^2 / 2) Q d(nu' + c) + beta' E - nu' N`.
///
/// The factor 2 comes from `cosh(y) >= e^|y| / 2`, and `d` is taken at
/// `nu' + c` because the Taylor remainder of `ln zeta(nu' +- c)` needs the
/// largest curvature on `[nu' - c, nu' + c]`. Returns `+inf` when
/// `nu' + c` leaves the convergence region.
pub fn chernoff_tail_bound(
    spectrum: &ValueSpectrum,
    fit: &BoseFit,
    tparams: &TailBoundParams,
    n: f64,
    e: f64,
) -> Result<f64> {
    let params = GrandParams::new(spectrum, fit.beta, fit.nu)?;
    let shifted = params.nu + tparams.c;
    if shifted >= nu_limit(spectrum, params.beta) {
        return Ok(f64::INFINITY);
    }
    let d = curvature_factor(
        spectrum,
        &GrandParams {
            beta: params.beta,
            nu: shifted,
        },
    );
    let q = spectrum.total_multiplicity() as f64;
    let log_zeta = log_zeta(spectrum, 0..spectrum.len(), &params)?;
    Ok(std::f64::consts::LN_2 + log_zeta - tparams.c * tparams.delta
        + 0.5 * tparams.c * tparams.c * q * d
        + params.beta * e
        - params.nu * n)
}

/// The bound before the Taylor step: exact tilted grand sums split at `l`,
///
/// `2 e^{-c Delta} e^{beta E - nu N} / 4 * (zeta_l(nu-c) e^{c phi_l} + zeta_l(nu+c) e^{-c phi_l})
///  * (zeta_{s-l}(nu-c) e^{c phibar} + zeta_{s-l}(nu+c) e^{-c phibar})`.
pub fn tilted_tail_bound(
    spectrum: &ValueSpectrum,
    fit: &BoseFit,
    tparams: &TailBoundParams,
    n: f64,
    e: f64,
) -> Result<f64> {
    let params = GrandParams::new(spectrum, fit.beta, fit.nu)?;
    let c = tparams.c;
    let up = GrandParams {
        beta: params.beta,
        nu: params.nu + c,
    };
    if up.nu >= nu_limit(spectrum, params.beta) {
        return Ok(f64::INFINITY);
    }
    let down = GrandParams {
        beta: params.beta,
        nu: params.nu - c,
    };
    let s = spectrum.len();
    let l = tparams.l;
    let phi_head: f64 = fit.phi[..l].iter().sum();
    let phi_tail: f64 = fit.phi[l..].iter().sum();
    let side = |range: Range<usize>, phi: f64| -> Result<f64> {
        Ok(log_sum_exp(&[
            log_zeta(spectrum, range.clone(), &down)? + c * phi,
            log_zeta(spectrum, range, &up)? - c * phi,
        ]))
    };
    Ok(
        std::f64::consts::LN_2 - 2.0 * std::f64::consts::LN_2 - c * tparams.delta + params.beta * e
            - params.nu * n
            + side(0..l, phi_head)?
            + side(l..s, phi_tail)?,
    )
}

/// Pointwise domination of the two deviation indicators:
/// `2 e^{-c Delta} cosh(c (B_l - phi_l)) cosh(c (N - B_l - phibar))`.
pub fn indicator_cosh_bound(c: f64, delta: f64, head_dev: f64, tail_dev: f64) -> f64 {
    2.0 * (-c * delta).exp() * (c * head_dev).cosh() * (c * tail_dev).cosh()
}

/// `sum_n Z(beta, n) e^{nu n}` over the table's particle range, with an
/// analytic bound on the omitted `n > n_max` terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrandSeries {
    pub log_sum: f64,
    pub log_tail_bound: f64,
    pub n_max: u64,
}

/// Rebuild `ln zeta_s` from canonical partition functions.
///
/// Every `n`-particle term is at most `C(n + Q - 1, Q - 1) r^n` with
/// `r = exp(nu - beta x_1)`; once the ratio of consecutive majorants drops
/// below one the remainder is bounded by a geometric series.
pub fn grand_from_canonical(table: &CountTable, params: &GrandParams) -> Result<GrandSeries> {
    let spectrum = table.spectrum();
    params.check(spectrum)?;
    let n_max = table.n();
    check_full_range(table, n_max)?;
    let u = rational_to_f64(&spectrum.quantum());
    let terms: Vec<f64> = (0..=n_max)
        .map(|n| log_partition_row(table.energy_row(n), params.beta, u) + params.nu * n as f64)
        .collect();
    let log_sum = log_sum_exp(&terms);

    let q = spectrum.total_multiplicity() as f64;
    let log_r = params.nu - nu_limit(spectrum, params.beta);
    let log_majorant = |n: f64| -> f64 {
        // ln C(n + Q - 1, Q - 1) + n ln r
        ln_gamma(n + q) - ln_gamma(n + 1.0) - ln_gamma(q) + n * log_r
    };
    let mut n = (n_max + 1) as f64;
    let mut explicit = Vec::new();
    loop {
        let ratio = log_r.exp() * (n + q) / (n + 1.0);
        if ratio < 1.0 {
            explicit.push(log_majorant(n) - (1.0 - ratio).ln());
            break;
        }
        explicit.push(log_majorant(n));
        n += 1.0;
    }
    Ok(GrandSeries {
        log_sum,
        log_tail_bound: log_sum_exp(&explicit),
        n_max,
    })
}

/// `ln Gamma(x)` for `x > 0` (Lanczos, g = 7).
fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEFFS: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEFFS[0];
    let t = x + G + 0.5;
    for (i, &c) in COEFFS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}
