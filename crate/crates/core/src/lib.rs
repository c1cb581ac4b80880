//! Exact counting, sampling and asymptotics for the equiprobable occupancy
//! ensemble whose typical cumulative occupancy follows the Bose-Einstein curve.
//!
//! * [`spectrum`]: value spectra on an integer energy grid and ensemble budgets.
//! * [`befit`]: solving the number and energy conditions for `(beta', nu')`.
//! * [`ensemble`]: exact big-integer counting, uniform sampling and tail counts.
//! * [`partition`]: canonical/grand partition functions, saddle point, tail bound.
//! * [`harness`]: experiment drivers and report serialization.

pub mod befit;
pub mod ensemble;
pub mod error;
pub mod harness;
pub mod numeric;
pub mod partition;
pub mod spectrum;

pub use befit::{cumulative_curve, fit_bose, fit_bose_targets, solve_nu, BoseFit};
pub use ensemble::{
    build_count_table, count_variants, deviation, exact_tail_count, sample_uniform, CountTable, Occupancy,
    TableGuard,
};
pub use error::{Error, Result};
pub use spectrum::{load_spectrum, make_budget, EnsembleBudget, Rational, ValueSpectrum};
