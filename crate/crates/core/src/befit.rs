//! Bose-Einstein fit: solve the number and energy conditions for `(beta', nu')`.
//!
//! Both conditions are monotone one-dimensional problems once nested:
//! for fixed `beta` the occupation sum is strictly increasing in `nu`, and
//! along the curve `nu(beta)` the fitted energy is strictly decreasing in
//! `beta`. Each level is a bracketed Newton iteration that falls back to
//! bisection whenever a step leaves the bracket.

use crate::error::{Error, Result};
use crate::spectrum::{rational_to_f64, EnsembleBudget, ValueSpectrum};

/// Relative tolerance on the number condition.
pub const NU_TOLERANCE: f64 = 1e-12;
/// Relative tolerance on the energy condition.
pub const FIT_TOLERANCE: f64 = 1e-10;

const MAX_ITER: usize = 400;

/// Fitted `(beta', nu')` with the expected occupation of every cell.
#[derive(Debug, Clone, PartialEq)]
pub struct BoseFit {
    pub beta: f64,
    pub nu: f64,
    /// `phi_i = q_i / (exp(beta x_i - nu) - 1)`.
    pub phi: Vec<f64>,
    /// `|sum phi - N| / N`.
    pub residual_n: f64,
    /// `|sum phi x - E| / E`.
    pub residual_e: f64,
}

impl BoseFit {
    /// Evaluate the occupations at given parameters (no solving).
    pub fn from_params(spectrum: &ValueSpectrum, beta: f64, nu: f64) -> Result<Self> {
        check_admissible(spectrum, beta, nu)?;
        let phi = occupations(spectrum, beta, nu);
        Ok(Self {
            beta,
            nu,
            phi,
            residual_n: 0.0,
            residual_e: 0.0,
        })
    }

    pub fn total_occupation(&self) -> f64 {
        self.phi.iter().sum()
    }

    pub fn total_energy(&self, spectrum: &ValueSpectrum) -> f64 {
        self.phi.iter().zip(spectrum.energies()).map(|(p, x)| p * x).sum()
    }

    /// The number condition does not force `nu < 0`; callers may want to flag it.
    pub fn nu_is_nonnegative(&self) -> bool {
        self.nu >= 0.0
    }

    pub fn num_cells(&self) -> usize {
        self.phi.len()
    }
}

/// Upper end of the admissible `nu` range, `min_i beta x_i`.
pub fn nu_limit(spectrum: &ValueSpectrum, beta: f64) -> f64 {
    spectrum
        .energies()
        .iter()
        .map(|x| beta * x)
        .fold(f64::INFINITY, f64::min)
}

pub(crate) fn check_admissible(spectrum: &ValueSpectrum, beta: f64, nu: f64) -> Result<()> {
    let limit = nu_limit(spectrum, beta);
    if !beta.is_finite() || !nu.is_finite() || nu >= limit {
        return Err(Error::InadmissibleParams { nu, limit });
    }
    Ok(())
}

/// Expected occupation of each cell at `(beta, nu)`.
pub fn occupations(spectrum: &ValueSpectrum, beta: f64, nu: f64) -> Vec<f64> {
    spectrum
        .energies()
        .iter()
        .zip(spectrum.multiplicities())
        .map(|(&x, &q)| q as f64 / (beta * x - nu).exp_m1())
        .collect()
}

/// Occupation sums expressed through the gap `t = nu_limit - nu > 0`.
struct GapSums<'a> {
    offsets: Vec<f64>,
    mults: &'a [u64],
}

impl<'a> GapSums<'a> {
    fn new(spectrum: &'a ValueSpectrum, beta: f64) -> Self {
        let limit = nu_limit(spectrum, beta);
        let offsets = spectrum
            .energies()
            .iter()
            .map(|x| (beta * x - limit).max(0.0))
            .collect();
        Self {
            offsets,
            mults: spectrum.multiplicities(),
        }
    }

    /// Occupation sum and its derivative in `t`.
    fn eval(&self, t: f64) -> (f64, f64) {
        let mut sum = 0.0;
        let mut deriv = 0.0;
        for (&off, &q) in self.offsets.iter().zip(self.mults) {
            let a = off + t;
            let em1 = a.exp_m1();
            if !em1.is_finite() {
                continue;
            }
            let q = q as f64;
            sum += q / em1;
            deriv -= q * (em1 + 1.0) / (em1 * em1);
        }
        (sum, deriv)
    }

    /// Multiplicity of the cells sitting exactly at the limit.
    fn leading_mass(&self) -> f64 {
        self.offsets
            .iter()
            .zip(self.mults)
            .filter(|(&off, _)| off == 0.0)
            .map(|(_, &q)| q as f64)
            .sum()
    }
}

/// Solve `N = sum q_i / (exp(beta x_i - nu) - 1)` for `nu`, returning `(nu, gap)`
/// where `gap = nu_limit - nu`.
pub fn solve_nu_with_gap(spectrum: &ValueSpectrum, beta: f64, n: f64) -> Result<(f64, f64)> {
    if !beta.is_finite() {
        return Err(Error::InvalidArgument(format!("beta must be finite, got {beta}")));
    }
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::InvalidArgument(format!("N must be positive, got {n}")));
    }
    let sums = GapSums::new(spectrum, beta);
    let total = spectrum.total_multiplicity() as f64;
    let lead = sums.leading_mass();
    // sum(t) >= lead / expm1(t) and sum(t) <= Q / expm1(t).
    let mut lo = (lead / n).ln_1p();
    let mut hi = (total / n).ln_1p();
    let target = n.ln();
    let limit = nu_limit(spectrum, beta);
    if lead == total {
        return Ok((limit - hi, hi));
    }
    let mut t = 0.5 * (lo + hi);
    for _ in 0..MAX_ITER {
        let (sum, deriv) = sums.eval(t);
        let g = sum.ln() - target;
        if g.abs() <= 0.25 * NU_TOLERANCE {
            break;
        }
        if g > 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            break;
        }
        let newton = t - g / (deriv / sum);
        t = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Ok((limit - t, t))
}

/// `nu` such that the occupation sum at `(beta, nu)` equals `n`.
pub fn solve_nu(spectrum: &ValueSpectrum, beta: f64, n: f64) -> Result<f64> {
    solve_nu_with_gap(spectrum, beta, n).map(|(nu, _)| nu)
}

/// Energy of the number-conditioned occupations and its total derivative in beta.
fn fitted_energy(spectrum: &ValueSpectrum, energies: &[f64], beta: f64, n: f64) -> Result<(f64, f64, f64)> {
    let (nu, _) = solve_nu_with_gap(spectrum, beta, n)?;
    let mut sv = 0.0;
    let mut svx = 0.0;
    let mut svxx = 0.0;
    let mut energy = 0.0;
    for (&x, &q) in energies.iter().zip(spectrum.multiplicities()) {
        let a = beta * x - nu;
        let em1 = a.exp_m1();
        if !em1.is_finite() {
            continue;
        }
        let q = q as f64;
        energy += q * x / em1;
        let v = q * (em1 + 1.0) / (em1 * em1);
        sv += v;
        svx += v * x;
        svxx += v * x * x;
    }
    // d nu / d beta = svx / sv keeps the number fixed.
    let deriv = -(svxx - svx * svx / sv);
    Ok((energy, deriv, nu))
}

/// Fit `(beta', nu')` to real-valued number and energy targets.
pub fn fit_bose_targets(spectrum: &ValueSpectrum, n: f64, e: f64) -> Result<BoseFit> {
    if !(n > 0.0) {
        return Err(Error::InvalidArgument(format!("N must be positive, got {n}")));
    }
    let energies = spectrum.energies();
    let x1 = energies[0];
    let xbar = rational_to_f64(&spectrum.xbar());
    let low = n * x1;
    let high = n * xbar;
    let scale = e.abs().max(high.abs()).max(f64::MIN_POSITIVE);

    let finish = |beta: f64, nu: f64| {
        let phi = occupations(spectrum, beta, nu);
        let sum: f64 = phi.iter().sum();
        let energy: f64 = phi.iter().zip(&energies).map(|(p, x)| p * x).sum();
        BoseFit {
            beta,
            nu,
            residual_n: (sum - n).abs() / n,
            residual_e: if e == 0.0 {
                energy.abs()
            } else {
                (energy - e).abs() / e
            },
            phi,
        }
    };

    // beta -> 0+ is the infinite-temperature limit with energy N xbar exactly.
    if (e - high).abs() <= 1e-12 * scale {
        let nu = solve_nu(spectrum, 0.0, n)?;
        return Ok(finish(0.0, nu));
    }
    if e > high || e <= low {
        return Err(Error::Bracket { target: e, low, high });
    }

    let spread = (xbar - x1).max(f64::MIN_POSITIVE);
    let mut lo = 0.0;
    let mut hi = 1.0 / spread;
    loop {
        let (energy, _, _) = fitted_energy(spectrum, &energies, hi, n)?;
        if energy < e {
            break;
        }
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() || hi > 1e300 {
            return Err(Error::Bracket { target: e, low, high });
        }
    }

    let mut beta = 0.5 * (lo + hi);
    let mut nu = f64::NAN;
    for _ in 0..MAX_ITER {
        let (energy, deriv, nu_here) = fitted_energy(spectrum, &energies, beta, n)?;
        nu = nu_here;
        let g = energy - e;
        if g.abs() <= 1e-3 * FIT_TOLERANCE * e {
            break;
        }
        if g > 0.0 {
            lo = beta;
        } else {
            hi = beta;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            break;
        }
        let newton = beta - g / deriv;
        beta = if newton > lo && newton < hi && deriv < 0.0 {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    let fit = finish(beta, nu);
    if fit.residual_e > FIT_TOLERANCE || fit.residual_n > FIT_TOLERANCE {
        log::warn!(
            "fit residuals above tolerance: N {:.3e}, E {:.3e}",
            fit.residual_n,
            fit.residual_e
        );
    }
    Ok(fit)
}

/// Fit `(beta', nu')` to the budget's `N` and `E`.
pub fn fit_bose(spectrum: &ValueSpectrum, budget: &EnsembleBudget) -> Result<BoseFit> {
    fit_bose_targets(spectrum, budget.n() as f64, budget.energy())
}

/// Predicted cumulative occupancy `sum_{i <= l} phi_i` over the first `l` cells.
pub fn cumulative_curve(fit: &BoseFit, l: usize) -> Result<f64> {
    if l > fit.phi.len() {
        return Err(Error::IndexOutOfRange {
            index: l,
            max: fit.phi.len(),
        });
    }
    Ok(fit.phi[..l].iter().sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit(levels: &[u64], mults: &[u64]) -> ValueSpectrum {
        ValueSpectrum::unit(levels, mults).unwrap()
    }

    fn occupation_sum(s: &ValueSpectrum, beta: f64, nu: f64) -> f64 {
        occupations(s, beta, nu).iter().sum()
    }

    #[test]
    fn single_cell_closed_form() {
        let s = unit(&[1], &[1]);
        let nu = solve_nu(&s, 1.0, 1.0).unwrap();
        assert!((nu - (1.0 - 2f64.ln())).abs() < 1e-12, "{nu}");
    }

    #[test]
    fn nu_approaches_limit_for_large_n() {
        let s = unit(&[1], &[1]);
        let mut prev = f64::NEG_INFINITY;
        for n in [1.0, 10.0, 1e3, 1e6] {
            let nu = solve_nu(&s, 1.0, n).unwrap();
            assert!(nu < 1.0 && nu > prev);
            prev = nu;
        }
        assert!(1.0 - prev < 2e-6);
    }

    #[test]
    fn two_cell_root_substitutes_back() {
        let s = unit(&[1, 2], &[1, 1]);
        let nu = solve_nu(&s, 1.0, 3.0).unwrap();
        let check = 1.0 / (1.0 - nu).exp_m1() + 1.0 / (2.0 - nu).exp_m1();
        assert!((check - 3.0).abs() / 3.0 < 1e-12, "{check}");
    }

    #[test]
    fn negative_beta_uses_top_value() {
        let s = unit(&[1, 3], &[1, 2]);
        let nu = solve_nu(&s, -0.5, 4.0).unwrap();
        assert!(nu < -1.5);
        assert!((occupation_sum(&s, -0.5, nu) - 4.0).abs() < 4e-12);
    }

    #[test]
    fn solve_nu_rejects_bad_input() {
        let s = unit(&[1], &[1]);
        assert!(solve_nu(&s, f64::NAN, 1.0).is_err());
        assert!(solve_nu(&s, 1.0, 0.0).is_err());
    }

    #[test]
    fn round_trip_recovers_parameters() {
        let s = unit(&[1, 2, 3], &[1, 2, 1]);
        let (beta0, nu0) = (1.3, -0.7);
        let forward = BoseFit::from_params(&s, beta0, nu0).unwrap();
        let n = forward.total_occupation();
        let e = forward.total_energy(&s);
        let fit = fit_bose_targets(&s, n, e).unwrap();
        assert!((fit.beta - beta0).abs() < 1e-8, "{}", fit.beta);
        assert!((fit.nu - nu0).abs() < 1e-8, "{}", fit.nu);
    }

    #[test]
    fn single_cell_is_proportional() {
        let s = unit(&[1], &[1]);
        let fit = fit_bose_targets(&s, 5.0, 5.0).unwrap();
        assert!((fit.total_occupation() - 5.0).abs() < 1e-10);
        assert!(matches!(
            fit_bose_targets(&s, 5.0, 4.0).unwrap_err(),
            Error::Bracket { .. }
        ));
    }

    #[test]
    fn boundary_budget_gives_equal_occupations() {
        // phi_1 + phi_2 = 2 and phi_1 + 2 phi_2 = 3 force phi = (1, 1).
        let s = unit(&[1, 2], &[1, 1]);
        let b = crate::spectrum::budget_from_grid(&s, 2, 3).unwrap();
        let fit = fit_bose(&s, &b).unwrap();
        assert!((fit.phi[0] - 1.0).abs() < 1e-10);
        assert!((fit.phi[1] - 1.0).abs() < 1e-10);
        assert!((cumulative_curve(&fit, 1).unwrap() - 1.0).abs() < 1e-10);
        let again = BoseFit::from_params(&s, fit.beta, fit.nu).unwrap();
        assert!((again.phi[0] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn unreachable_energy_reports_range() {
        let s = unit(&[1, 2], &[1, 1]);
        match fit_bose_targets(&s, 10.0, 10.0).unwrap_err() {
            Error::Bracket { low, high, .. } => {
                assert_eq!(low, 10.0);
                assert_eq!(high, 15.0);
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn cumulative_curve_endpoints() {
        let s = unit(&[1, 2, 3], &[1, 1, 1]);
        let b = crate::spectrum::budget_from_grid(&s, 20, 30).unwrap();
        let fit = fit_bose(&s, &b).unwrap();
        assert_eq!(cumulative_curve(&fit, 0).unwrap(), 0.0);
        assert!((cumulative_curve(&fit, 3).unwrap() - 20.0).abs() < 20.0 * 1e-10);
        assert!(cumulative_curve(&fit, 4).is_err());
        assert!(fit.residual_n < FIT_TOLERANCE && fit.residual_e < FIT_TOLERANCE);
    }

    #[test]
    fn occupation_sum_increases_in_nu() {
        let s = unit(&[0, 1, 4], &[2, 1, 3]);
        let beta = 0.8;
        let grid: Vec<f64> = (0..200).map(|k| -6.0 + k as f64 * 0.0299).collect();
        for w in grid.windows(2) {
            assert!(occupation_sum(&s, beta, w[1]) > occupation_sum(&s, beta, w[0]));
        }
    }

    proptest! {
        #[test]
        fn fit_round_trip_random(
            beta in 0.1f64..3.0,
            gap in 0.05f64..3.0,
            levels in prop::collection::btree_set(0u64..6, 2..5),
            seed_q in prop::collection::vec(1u64..4, 5),
        ) {
            let levels: Vec<u64> = levels.into_iter().collect();
            let mults = &seed_q[..levels.len()];
            let s = unit(&levels, mults);
            let nu = beta * levels[0] as f64 - gap;
            let forward = BoseFit::from_params(&s, beta, nu).unwrap();
            let fit = fit_bose_targets(&s, forward.total_occupation(), forward.total_energy(&s)).unwrap();
            prop_assert!((fit.beta - beta).abs() < 1e-8, "beta {} vs {}", fit.beta, beta);
            prop_assert!((fit.nu - nu).abs() < 1e-8, "nu {} vs {}", fit.nu, nu);
        }

        #[test]
        fn cumulative_curve_nondecreasing(beta in 0.1f64..3.0, gap in 0.05f64..3.0) {
            let s = unit(&[1, 2, 5], &[2, 1, 1]);
            let fit = BoseFit::from_params(&s, beta, beta - gap).unwrap();
            let mut prev = 0.0;
            for l in 1..=3 {
                let c = cumulative_curve(&fit, l).unwrap();
                prop_assert!((c - prev - fit.phi[l - 1]).abs() < 1e-12 * c.max(1.0));
                prop_assert!(c >= prev);
                prev = c;
            }
        }
    }
}
