//! Exact degeneracy-weighted counting of occupancy variants.
//!
//! A cell of multiplicity `q` holding `n` particles contributes
//! `C(n + q - 1, q - 1)` slot-level variants, so every count here is the
//! number of equiprobable slot-level assignments. Tables are indexed by
//! `(cells used, particles, energy on the grid)` and hold exact big integers.

use num_bigint::BigUint;
use num_traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::befit::{cumulative_curve, BoseFit};
use crate::error::{Error, Result};
use crate::spectrum::{EnsembleBudget, ValueSpectrum};

/// Size limits applied before a table is allocated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TableGuard {
    pub max_particles: u64,
    pub max_energy: u64,
    /// Upper bound on `(s + 1)(N + 1)(E + 1)` stored entries.
    pub max_entries: u64,
}

impl Default for TableGuard {
    fn default() -> Self {
        Self {
            max_particles: 10_000,
            max_energy: 1_000_000,
            max_entries: 50_000_000,
        }
    }
}

impl TableGuard {
    pub fn check(&self, cells: usize, particles: u64, energy: u64) -> Result<()> {
        if particles > self.max_particles {
            return Err(Error::GuardExceeded(format!(
                "N = {particles} exceeds the limit {}",
                self.max_particles
            )));
        }
        if energy > self.max_energy {
            return Err(Error::GuardExceeded(format!(
                "energy grid {energy} exceeds the limit {}",
                self.max_energy
            )));
        }
        let entries = (cells as u64 + 1)
            .saturating_mul(particles + 1)
            .saturating_mul(energy + 1);
        if entries > self.max_entries {
            return Err(Error::GuardExceeded(format!(
                "{entries} table entries exceed the limit {}",
                self.max_entries
            )));
        }
        Ok(())
    }
}

/// One `(particles x energy)` slab of exact counts.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    n_max: usize,
    e_max: usize,
    data: Vec<BigUint>,
}

impl Layer {
    fn empty_set(n_max: usize, e_max: usize) -> Self {
        let mut data = vec![BigUint::zero(); (n_max + 1) * (e_max + 1)];
        data[0] = BigUint::one();
        Self { n_max, e_max, data }
    }

    #[inline]
    fn idx(&self, n: usize, e: usize) -> usize {
        n * (self.e_max + 1) + e
    }

    pub fn get(&self, n: usize, e: usize) -> &BigUint {
        &self.data[self.idx(n, e)]
    }

    /// Row of counts for exactly `n` particles, indexed by energy.
    pub fn row(&self, n: usize) -> &[BigUint] {
        let start = self.idx(n, 0);
        &self.data[start..start + self.e_max + 1]
    }

    /// Multiply the generating function by `(1 - t z^level)^-q`.
    ///
    /// Each of the `q` passes is one unbounded-knapsack sweep for a single
    /// slot; `q` passes yield the `C(m + q - 1, q - 1)` weights.
    fn absorb_cell(&mut self, level: usize, q: u64, reach: &mut Reach) {
        let new_reach = reach.with_level(level, self.n_max, self.e_max);
        for _ in 0..q {
            for n in 1..=self.n_max {
                let (lo, hi) = new_reach.energy_span(n);
                if lo > hi {
                    continue;
                }
                let lo = lo.max(level);
                for e in lo..=hi {
                    let src = self.idx(n - 1, e - level);
                    if self.data[src].is_zero() {
                        continue;
                    }
                    let dst = self.idx(n, e);
                    let add = self.data[src].clone();
                    self.data[dst] += add;
                }
            }
        }
        *reach = new_reach;
    }
}

/// Bounds on reachable energies per particle count: `n x_min <= e <= n x_max`.
#[derive(Debug, Clone, Copy)]
struct Reach {
    min_level: Option<usize>,
    max_level: usize,
    e_max: usize,
}

impl Reach {
    fn new(e_max: usize) -> Self {
        Self {
            min_level: None,
            max_level: 0,
            e_max,
        }
    }

    fn with_level(self, level: usize, _n_max: usize, e_max: usize) -> Self {
        Self {
            min_level: Some(self.min_level.map_or(level, |m| m.min(level))),
            max_level: self.max_level.max(level),
            e_max,
        }
    }

    fn energy_span(&self, n: usize) -> (usize, usize) {
        match self.min_level {
            None => (1, 0),
            Some(min) => (
                n.saturating_mul(min),
                n.saturating_mul(self.max_level).min(self.e_max),
            ),
        }
    }
}

fn accumulate(cells: &[(usize, u64)], n_max: usize, e_max: usize, keep_all: bool) -> Vec<Layer> {
    let mut layers = Vec::with_capacity(if keep_all { cells.len() + 1 } else { 1 });
    let mut current = Layer::empty_set(n_max, e_max);
    let mut reach = Reach::new(e_max);
    if keep_all {
        layers.push(current.clone());
    }
    for &(level, q) in cells {
        current.absorb_cell(level, q, &mut reach);
        if keep_all {
            layers.push(current.clone());
        }
    }
    if !keep_all {
        layers.push(current);
    }
    layers
}

/// Energy-resolved, degeneracy-weighted exact counts for every prefix of cells.
#[derive(Debug, Clone)]
pub struct CountTable {
    spectrum: ValueSpectrum,
    n: u64,
    energy_cap: u64,
    layers: Vec<Layer>,
}

impl CountTable {
    /// Table for exactly `n` particles and energies `0..=energy_cap` on the grid.
    pub fn new(spectrum: &ValueSpectrum, n: u64, energy_cap: u64, guard: &TableGuard) -> Result<Self> {
        guard.check(spectrum.len(), n, energy_cap)?;
        let cells: Vec<(usize, u64)> = spectrum
            .levels()
            .iter()
            .zip(spectrum.multiplicities())
            .map(|(&x, &q)| (x as usize, q))
            .collect();
        let layers = accumulate(&cells, n as usize, energy_cap as usize, true);
        Ok(Self {
            spectrum: spectrum.clone(),
            n,
            energy_cap,
            layers,
        })
    }

    /// Table covering every energy reachable by `n` particles (needed for `Z`).
    pub fn full_range(spectrum: &ValueSpectrum, n: u64, guard: &TableGuard) -> Result<Self> {
        let top = *spectrum.levels().last().expect("nonempty spectrum");
        Self::new(spectrum, n, n.saturating_mul(top), guard)
    }

    pub fn spectrum(&self) -> &ValueSpectrum {
        &self.spectrum
    }

    /// Particle count `N` the table was built for.
    pub fn n(&self) -> u64 {
        self.n
    }

    /// Energy budget `E` on the grid.
    pub fn energy_cap(&self) -> u64 {
        self.energy_cap
    }

    /// Layer after absorbing the first `k` cells.
    pub fn layer(&self, k: usize) -> &Layer {
        &self.layers[k]
    }

    /// Weighted count for the first `k` cells, `n` particles, energy exactly `e`.
    pub fn count(&self, k: usize, n: u64, e: u64) -> BigUint {
        if n > self.n || e > self.energy_cap {
            return BigUint::zero();
        }
        self.layers[k].get(n as usize, e as usize).clone()
    }

    /// Number of variants with `n` particles and energy at most `energy_cap`.
    pub fn count_at(&self, n: u64, energy_cap: u64) -> BigUint {
        if n > self.n {
            return BigUint::zero();
        }
        let top = energy_cap.min(self.energy_cap) as usize;
        self.layers[self.spectrum.len()].row(n as usize)[..=top]
            .iter()
            .sum()
    }

    /// Full-spectrum row for `n` particles, indexed by grid energy.
    pub fn energy_row(&self, n: u64) -> &[BigUint] {
        self.layers[self.spectrum.len()].row(n as usize)
    }
}

/// Exact table for the budget's `N` and `E` under the default guard.
pub fn build_count_table(spectrum: &ValueSpectrum, budget: &EnsembleBudget) -> Result<CountTable> {
    CountTable::new(spectrum, budget.n(), budget.energy_grid(), &TableGuard::default())
}

/// `N{M}`: variants with `sum N_i = N` and `sum N_i x_i <= E`.
pub fn count_variants(table: &CountTable) -> BigUint {
    table.count_at(table.n, table.energy_cap)
}

/// One aggregate occupancy `{N_i}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Occupancy {
    counts: Vec<u64>,
    cumulative: Vec<u64>,
    energy_grid: u64,
}

impl Occupancy {
    pub fn from_counts(spectrum: &ValueSpectrum, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != spectrum.len() {
            return Err(Error::InvalidArgument(format!(
                "occupancy has {} cells, spectrum has {}",
                counts.len(),
                spectrum.len()
            )));
        }
        let cumulative = counts
            .iter()
            .scan(0u64, |acc, &c| {
                *acc += c;
                Some(*acc)
            })
            .collect();
        let energy_grid = counts.iter().zip(spectrum.levels()).map(|(c, x)| c * x).sum();
        Ok(Self {
            counts,
            cumulative,
            energy_grid,
        })
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// `B_1..B_s`.
    pub fn cumulative(&self) -> &[u64] {
        &self.cumulative
    }

    /// `B_l`, with `B_0 = 0`.
    pub fn b(&self, l: usize) -> u64 {
        if l == 0 {
            0
        } else {
            self.cumulative[l - 1]
        }
    }

    pub fn total(&self) -> u64 {
        self.cumulative.last().copied().unwrap_or(0)
    }

    pub fn energy_grid(&self) -> u64 {
        self.energy_grid
    }

    /// Slot-level variants represented by this aggregate occupancy.
    pub fn weight(&self, spectrum: &ValueSpectrum) -> BigUint {
        self.counts
            .iter()
            .zip(spectrum.multiplicities())
            .map(|(&n, &q)| multiset_weight(n, q))
            .product()
    }
}

/// `C(n + q - 1, q - 1)`: ways to spread `n` particles over `q` slots.
pub fn multiset_weight(n: u64, q: u64) -> BigUint {
    let mut acc = BigUint::one();
    for j in 1..q {
        acc *= n + j;
        acc /= j;
    }
    acc
}

/// Uniform big integer in `0..bound` by rejection on the bit length.
fn uniform_below<R: Rng>(rng: &mut R, bound: &BigUint) -> BigUint {
    assert!(!bound.is_zero());
    let bits = bound.bits();
    let words = bits.div_ceil(32) as usize;
    let top_bits = bits - (words as u64 - 1) * 32;
    let mask: u32 = if top_bits == 32 {
        u32::MAX
    } else {
        (1u32 << top_bits) - 1
    };
    loop {
        let mut digits: Vec<u32> = (0..words).map(|_| rng.random()).collect();
        if let Some(last) = digits.last_mut() {
            *last &= mask;
        }
        let candidate = BigUint::new(digits);
        if &candidate < bound {
            return candidate;
        }
    }
}

/// Walk the table backwards from a uniform rank to the occupancy it encodes.
fn unrank(table: &CountTable, mut rank: BigUint) -> Occupancy {
    let s = table.spectrum.len();
    let top = table.layers[s].row(table.n as usize);
    let mut energy = 0usize;
    for (e, c) in top.iter().enumerate().take(table.energy_cap as usize + 1) {
        if rank < *c {
            energy = e;
            break;
        }
        rank -= c;
    }
    let mut n = table.n as usize;
    let mut counts = vec![0u64; s];
    for k in (1..=s).rev() {
        let level = table.spectrum.levels()[k - 1] as usize;
        let q = table.spectrum.multiplicities()[k - 1];
        let prev = &table.layers[k - 1];
        let mut binom = BigUint::one();
        let mut m = 0usize;
        loop {
            if m > 0 {
                binom *= (m as u64) + q - 1;
                binom /= m as u64;
            }
            let below = prev.get(n - m, energy - m * level);
            if !below.is_zero() {
                let weight = &binom * below;
                if rank < weight {
                    rank %= below;
                    break;
                }
                rank -= weight;
            }
            m += 1;
            debug_assert!(m <= n && m * level <= energy, "rank exceeded the table");
        }
        counts[k - 1] = m as u64;
        n -= m;
        energy -= m * level;
    }
    Occupancy::from_counts(&table.spectrum, counts).expect("cell count matches")
}

/// Draw an occupancy with probability proportional to its slot-level weight.
pub fn sample_uniform(table: &CountTable, seed: u64) -> Result<Occupancy> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_with(table, &mut rng)
}

pub fn sample_with<R: Rng>(table: &CountTable, rng: &mut R) -> Result<Occupancy> {
    let total = count_variants(table);
    if total.is_zero() {
        return Err(Error::EmptyEnsemble);
    }
    let rank = uniform_below(rng, &total);
    Ok(unrank(table, rank))
}

/// `count` draws from one seeded stream.
pub fn sample_many(table: &CountTable, seed: u64, count: usize) -> Result<Vec<Occupancy>> {
    let total = count_variants(table);
    if total.is_zero() {
        return Err(Error::EmptyEnsemble);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| unrank(table, uniform_below(&mut rng, &total)))
        .collect())
}

/// `S_l = |B_l - sum_{i <= l} phi_i|` for `1 <= l <= s`.
pub fn deviation(occupancy: &Occupancy, fit: &BoseFit, l: usize) -> Result<f64> {
    let s = occupancy.counts.len();
    if l == 0 || l > s || fit.num_cells() != s {
        return Err(Error::IndexOutOfRange { index: l, max: s });
    }
    Ok((occupancy.b(l) as f64 - cumulative_curve(fit, l)?).abs())
}

/// Weighted count of variants in `M` for each value of `B_l`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitProfile {
    pub l: usize,
    /// `weights[b]` = number of variants with `B_l = b`.
    pub weights: Vec<BigUint>,
}

impl SplitProfile {
    pub fn total(&self) -> BigUint {
        self.weights.iter().sum()
    }

    /// Variants with `|B_l - curve| >= delta`.
    pub fn count_at_least(&self, curve: f64, delta: f64) -> BigUint {
        self.weights
            .iter()
            .enumerate()
            .filter(|(b, _)| (*b as f64 - curve).abs() >= delta)
            .map(|(_, w)| w)
            .sum()
    }
}

/// Split the ensemble at cell `l`: convolve the head table (cells `1..=l`)
/// with a freshly built tail table (cells `l+1..=s`) under the energy budget.
pub fn split_profile(table: &CountTable, l: usize) -> Result<SplitProfile> {
    let s = table.spectrum.len();
    if l == 0 || l > s {
        return Err(Error::IndexOutOfRange { index: l, max: s });
    }
    let n = table.n as usize;
    let cap = table.energy_cap as usize;
    let tail_cells: Vec<(usize, u64)> = table.spectrum.levels()[l..]
        .iter()
        .zip(&table.spectrum.multiplicities()[l..])
        .map(|(&x, &q)| (x as usize, q))
        .collect();
    let tail = accumulate(&tail_cells, n, cap, false).pop().expect("one layer");
    let head = &table.layers[l];
    let weights = (0..=n)
        .into_par_iter()
        .map(|b| {
            let tail_row = tail.row(n - b);
            let mut running = BigUint::zero();
            let tail_cum: Vec<BigUint> = tail_row
                .iter()
                .map(|c| {
                    running += c;
                    running.clone()
                })
                .collect();
            head.row(b)
                .iter()
                .enumerate()
                .filter(|(_, h)| !h.is_zero())
                .map(|(e1, h)| h * &tail_cum[cap - e1])
                .sum()
        })
        .collect();
    Ok(SplitProfile { l, weights })
}

/// Exact weighted count of variants in `M` with `S_l >= delta`.
pub fn exact_tail_count(table: &CountTable, fit: &BoseFit, l: usize, delta: f64) -> Result<BigUint> {
    let profile = split_profile(table, l)?;
    let curve = cumulative_curve(fit, l)?;
    if delta > table.n as f64 + curve {
        return Ok(BigUint::zero());
    }
    Ok(profile.count_at_least(curve, delta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrum::budget_from_grid;
    use proptest::prelude::*;
    use std::collections::HashMap;

    fn unit(levels: &[u64], mults: &[u64]) -> ValueSpectrum {
        ValueSpectrum::unit(levels, mults).unwrap()
    }

    fn table(levels: &[u64], mults: &[u64], n: u64, e: u64) -> CountTable {
        CountTable::new(&unit(levels, mults), n, e, &TableGuard::default()).unwrap()
    }

    /// Aggregate-level enumeration weighted by a product of binomials.
    fn enumerate(spectrum: &ValueSpectrum, n: u64, e: u64) -> Vec<(Vec<u64>, u64)> {
        fn rec(
            s: &ValueSpectrum,
            k: usize,
            left: u64,
            energy: u64,
            cap: u64,
            cur: &mut Vec<u64>,
            out: &mut Vec<(Vec<u64>, u64)>,
        ) {
            if k == s.len() {
                if left == 0 && energy <= cap {
                    let w: u64 = cur
                        .iter()
                        .zip(s.multiplicities())
                        .map(|(&m, &q)| {
                            // C(m + q - 1, q - 1) by the multiplicative formula in u64.
                            (1..q).fold(1u64, |acc, j| acc * (m + j) / j)
                        })
                        .product();
                    out.push((cur.clone(), w));
                }
                return;
            }
            for m in 0..=left {
                let en = energy + m * s.levels()[k];
                if en > cap {
                    break;
                }
                cur.push(m);
                rec(s, k + 1, left - m, en, cap, cur, out);
                cur.pop();
            }
        }
        let mut out = Vec::new();
        rec(spectrum, 0, n, 0, e, &mut Vec::new(), &mut out);
        out
    }

    #[test]
    fn two_cell_example() {
        assert_eq!(
            count_variants(&table(&[1, 2], &[1, 1], 2, 3)),
            BigUint::from(2u32)
        );
    }

    #[test]
    fn degenerate_cell_weight() {
        assert_eq!(count_variants(&table(&[1], &[2], 2, 2)), BigUint::from(3u32));
    }

    #[test]
    fn empty_occupancy_counts_once() {
        for e in [0, 5] {
            assert_eq!(count_variants(&table(&[1, 3], &[2, 1], 0, e)), BigUint::one());
        }
    }

    #[test]
    fn guard_rejects_oversized_tables() {
        let s = unit(&[1, 2], &[1, 1]);
        let guard = TableGuard {
            max_particles: 10,
            ..TableGuard::default()
        };
        assert!(matches!(
            CountTable::new(&s, 11, 20, &guard).unwrap_err(),
            Error::GuardExceeded(_)
        ));
        let guard = TableGuard {
            max_entries: 100,
            ..TableGuard::default()
        };
        assert!(CountTable::new(&s, 10, 20, &guard).is_err());
    }

    #[test]
    fn build_from_budget() {
        let s = unit(&[1, 2], &[1, 1]);
        let b = budget_from_grid(&s, 2, 3).unwrap();
        let t = build_count_table(&s, &b).unwrap();
        assert_eq!(count_variants(&t), BigUint::from(2u32));
    }

    #[test]
    fn sampler_is_deterministic() {
        let t = table(&[1, 2, 3], &[2, 1, 2], 8, 14);
        let a = sample_uniform(&t, 42).unwrap();
        let b = sample_uniform(&t, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(sample_many(&t, 7, 50).unwrap(), sample_many(&t, 7, 50).unwrap());
    }

    #[test]
    fn sampler_single_variant() {
        let t = table(&[1], &[2], 2, 2);
        for seed in 0..20 {
            assert_eq!(sample_uniform(&t, seed).unwrap().counts(), &[2]);
        }
    }

    #[test]
    fn sampler_rejects_empty_ensemble() {
        let t = table(&[2, 3], &[1, 1], 3, 4);
        assert!(matches!(sample_uniform(&t, 1).unwrap_err(), Error::EmptyEnsemble));
    }

    #[test]
    fn sampler_two_variants_balanced() {
        let t = table(&[1, 2], &[1, 1], 2, 3);
        let draws = sample_many(&t, 2024, 10_000).unwrap();
        let first = draws.iter().filter(|o| o.counts() == [2, 0]).count() as f64;
        let other = draws.iter().filter(|o| o.counts() == [1, 1]).count() as f64;
        assert_eq!(first + other, 10_000.0);
        // 3 sigma of Binomial(10^4, 1/2) is 150.
        assert!((first - 5000.0).abs() < 150.0, "{first}");
    }

    #[test]
    fn sampled_occupancies_satisfy_constraints() {
        let s = unit(&[0, 2, 3], &[1, 3, 2]);
        let t = CountTable::new(&s, 9, 15, &TableGuard::default()).unwrap();
        for o in sample_many(&t, 11, 200).unwrap() {
            assert_eq!(o.total(), 9);
            assert!(o.energy_grid() <= 15);
            assert!(o.cumulative().windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn deviation_examples() {
        let s = unit(&[1, 2], &[1, 1]);
        let b = budget_from_grid(&s, 2, 3).unwrap();
        let fit = crate::befit::fit_bose(&s, &b).unwrap();
        let occ = Occupancy::from_counts(&s, vec![1, 1]).unwrap();
        assert!(deviation(&occ, &fit, 1).unwrap() < 1e-9);
        assert!(deviation(&occ, &fit, 2).unwrap() < 1e-9);
        assert!(deviation(&occ, &fit, 0).is_err());
        assert!(deviation(&occ, &fit, 3).is_err());

        let s4 = unit(&[1, 2, 3, 4], &[1, 1, 1, 1]);
        let forced = BoseFit {
            beta: 1.0,
            nu: 0.0,
            phi: vec![3.2, 0.0, 0.0, 0.0],
            residual_n: 0.0,
            residual_e: 0.0,
        };
        let occ = Occupancy::from_counts(&s4, vec![5, 0, 0, 0]).unwrap();
        assert!((deviation(&occ, &forced, 1).unwrap() - 1.8).abs() < 1e-12);
    }

    #[test]
    fn tail_count_examples() {
        let s = unit(&[1, 2], &[1, 1]);
        let t = table(&[1, 2], &[1, 1], 2, 3);
        let fit = crate::befit::fit_bose(&s, &budget_from_grid(&s, 2, 3).unwrap()).unwrap();
        // B_1 in {2, 1} against a curve of 1.0: only (2, 0) deviates by >= 0.5.
        assert_eq!(exact_tail_count(&t, &fit, 1, 0.5).unwrap(), BigUint::one());
        assert_eq!(exact_tail_count(&t, &fit, 1, 0.0).unwrap(), BigUint::from(2u32));
        assert_eq!(exact_tail_count(&t, &fit, 1, 3.5).unwrap(), BigUint::zero());
        assert!(exact_tail_count(&t, &fit, 0, 0.5).is_err());
        assert!(exact_tail_count(&t, &fit, 3, 0.5).is_err());
    }

    #[test]
    fn split_profile_matches_enumeration() {
        let s = unit(&[0, 1, 3, 4], &[2, 1, 3, 1]);
        let (n, e) = (7, 13);
        let t = CountTable::new(&s, n, e, &TableGuard::default()).unwrap();
        let variants = enumerate(&s, n, e);
        for l in 1..=4 {
            let profile = split_profile(&t, l).unwrap();
            let mut expected = vec![0u64; n as usize + 1];
            for (occ, w) in &variants {
                let b: u64 = occ[..l].iter().sum();
                expected[b as usize] += w;
            }
            let got: Vec<BigUint> = expected.into_iter().map(BigUint::from).collect();
            assert_eq!(profile.weights, got, "l = {l}");
        }
    }

    #[test]
    fn chi_square_small_instance() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let s = unit(&[0, 1, 2], &[1, 2, 1]);
        let (n, e) = (4, 5);
        let t = CountTable::new(&s, n, e, &TableGuard::default()).unwrap();
        let variants = enumerate(&s, n, e);
        let total: u64 = variants.iter().map(|v| v.1).sum();
        let draws = 10_000;
        let mut seen: HashMap<Vec<u64>, u64> = HashMap::new();
        for o in sample_many(&t, 99, draws).unwrap() {
            *seen.entry(o.counts().to_vec()).or_default() += 1;
        }
        let mut chi2 = 0.0;
        for (occ, w) in &variants {
            let expected = draws as f64 * *w as f64 / total as f64;
            let observed = *seen.get(occ).unwrap_or(&0) as f64;
            chi2 += (observed - expected).powi(2) / expected;
        }
        assert_eq!(seen.len(), variants.len());
        let dof = (variants.len() - 1) as f64;
        let p = 1.0 - ChiSquared::new(dof).unwrap().cdf(chi2);
        assert!(p > 1e-3, "chi2 = {chi2}, p = {p}");
    }

    #[test]
    fn weight_of_occupancy() {
        let s = unit(&[1, 2], &[3, 2]);
        let o = Occupancy::from_counts(&s, vec![2, 3]).unwrap();
        // C(4, 2) * C(4, 1)
        assert_eq!(o.weight(&s), BigUint::from(24u32));
        assert_eq!(multiset_weight(0, 5), BigUint::one());
        assert_eq!(multiset_weight(7, 1), BigUint::one());
    }

    /// Truncated product of `(1 - t z^x)^-q` series with explicit binomial coefficients.
    fn generating_product(s: &ValueSpectrum, n_max: usize, e_max: usize) -> Vec<Vec<BigUint>> {
        let mut poly = vec![vec![BigUint::zero(); e_max + 1]; n_max + 1];
        poly[0][0] = BigUint::one();
        for (&x, &q) in s.levels().iter().zip(s.multiplicities()) {
            let x = x as usize;
            let mut next = vec![vec![BigUint::zero(); e_max + 1]; n_max + 1];
            for n in 0..=n_max {
                for e in 0..=e_max {
                    if poly[n][e].is_zero() {
                        continue;
                    }
                    let mut m = 0;
                    while n + m <= n_max && e + m * x <= e_max {
                        next[n + m][e + m * x] += &poly[n][e] * multiset_weight(m as u64, q);
                        m += 1;
                    }
                }
            }
            poly = next;
        }
        poly
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn generating_function_identity(
            levels in prop::collection::btree_set(0u64..5, 1..4),
            qs in prop::collection::vec(1u64..4, 4),
            n in 0u64..9,
            e in 0u64..25,
        ) {
            let levels: Vec<u64> = levels.into_iter().collect();
            let s = unit(&levels, &qs[..levels.len()]);
            let t = CountTable::new(&s, n, e, &TableGuard::default()).unwrap();
            let poly = generating_product(&s, n as usize, e as usize);
            for k in 0..=n {
                prop_assert_eq!(t.energy_row(k), &poly[k as usize][..]);
            }
        }

        #[test]
        fn tail_count_monotone_in_delta(
            levels in prop::collection::btree_set(0u64..5, 2..4),
            qs in prop::collection::vec(1u64..3, 4),
            n in 3u64..12,
        ) {
            let levels: Vec<u64> = levels.into_iter().collect();
            let s = unit(&levels, &qs[..levels.len()]);
            let xbar = crate::spectrum::rational_to_f64(&s.xbar());
            let e = ((n as f64) * (levels[0] as f64 + xbar) / 2.0).ceil() as u64;
            let Ok(budget) = budget_from_grid(&s, n, e) else { return Ok(()); };
            let Ok(fit) = crate::befit::fit_bose(&s, &budget) else { return Ok(()); };
            let t = build_count_table(&s, &budget).unwrap();
            let total = count_variants(&t);
            prop_assert_eq!(exact_tail_count(&t, &fit, 1, 0.0).unwrap(), total);
            let mut prev = None;
            for step in 0..20 {
                let c = exact_tail_count(&t, &fit, 1, step as f64 * 0.5).unwrap();
                if let Some(p) = prev {
                    prop_assert!(c <= p);
                }
                prev = Some(c);
            }
        }
    }
}
