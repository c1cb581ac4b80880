//! Browser bindings: three operations returning JSON strings for the static
//! page in `www/`. The plain functions are usable (and tested) natively.

use num_traits::ToPrimitive;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use equicomp::befit::{cumulative_curve, fit_bose};
use equicomp::ensemble::{count_variants, sample_many, split_profile, CountTable, TableGuard};
use equicomp::harness::{concentration_threshold, run_saddle_scan, select_l, LPolicy};
use equicomp::numeric::big_ratio;
use equicomp::spectrum::{make_budget, parse_rational, ValueSpectrum};

/// Tables beyond this stall the page for seconds.
const WEB_GUARD: TableGuard = TableGuard {
    max_particles: 400,
    max_energy: 4_000,
    max_entries: 3_000_000,
};

const MAX_SAMPLES: usize = 20_000;

type Outcome = Result<Value, String>;

fn spectrum(values: &str) -> Result<ValueSpectrum, String> {
    values.parse().map_err(|e: equicomp::Error| e.to_string())
}

fn table_for(
    values: &str,
    n: u64,
    mean: &str,
) -> Result<(ValueSpectrum, CountTable, f64, equicomp::BoseFit), String> {
    let s = spectrum(values)?;
    let mean = parse_rational(mean)?;
    let budget = make_budget(&s, n, mean).map_err(|e| e.to_string())?;
    let fit = fit_bose(&s, &budget).map_err(|e| e.to_string())?;
    let table = CountTable::new(&s, n, budget.energy_grid(), &WEB_GUARD).map_err(|e| e.to_string())?;
    Ok((s, table, budget.energy(), fit))
}

fn quantile(sorted: &[u64], p: f64) -> u64 {
    sorted[((sorted.len() - 1) as f64 * p).round() as usize]
}

/// Fitted cumulative curve `B_l` for `l = 0..=s` with 5/50/95% bands of
/// uniformly sampled variants.
pub fn curve_with_samples(values: &str, n: u64, mean: &str, samples: usize, seed: u64) -> Outcome {
    let (s, table, energy, fit) = table_for(values, n, mean)?;
    let samples = samples.clamp(1, MAX_SAMPLES);
    let draws = sample_many(&table, seed, samples).map_err(|e| e.to_string())?;
    let mut curve = Vec::with_capacity(s.len() + 1);
    let mut bands = Vec::with_capacity(s.len() + 1);
    for l in 0..=s.len() {
        curve.push(cumulative_curve(&fit, l).map_err(|e| e.to_string())?);
        let mut at_l: Vec<u64> = draws.iter().map(|o| o.b(l)).collect();
        at_l.sort_unstable();
        bands.push([quantile(&at_l, 0.05), quantile(&at_l, 0.5), quantile(&at_l, 0.95)]);
    }
    Ok(json!({
        "beta": fit.beta,
        "nu": fit.nu,
        "energy": energy,
        "values": s.energies(),
        "curve": curve,
        "bands": bands,
        "samples": samples,
        "total": count_variants(&table).to_string(),
    }))
}

/// Exact fraction of variants with `|B_l - curve| >= Delta` for every integer
/// `Delta` in `0..=N`, plus the threshold `N^(3/4 + epsilon)`.
pub fn tail_profile(values: &str, n: u64, mean: &str, l: Option<usize>, epsilon: f64) -> Outcome {
    let (s, table, _, fit) = table_for(values, n, mean)?;
    let l = match l {
        Some(l) => l,
        None => select_l(&s, LPolicy::Quantile { fraction: 0.5 }, 0.0).map_err(|e| e.to_string())?,
    };
    let curve = cumulative_curve(&fit, l).map_err(|e| e.to_string())?;
    let profile = split_profile(&table, l).map_err(|e| e.to_string())?;
    let total = profile.total();
    let fractions: Vec<f64> = (0..=n)
        .map(|d| big_ratio(&profile.count_at_least(curve, d as f64), &total))
        .collect();
    let histogram: Vec<f64> = profile
        .weights
        .iter()
        .map(|w| w.to_f64().unwrap_or(f64::INFINITY) / total.to_f64().unwrap_or(f64::INFINITY))
        .collect();
    Ok(json!({
        "l": l,
        "curve": curve,
        "threshold": concentration_threshold(n, epsilon),
        "fractions": fractions,
        "histogram": histogram,
    }))
}

/// Exact and saddle-point `ln Z(beta, N)` along `N = step, 2 step, ..., n_max`.
pub fn saddle_profile(values: &str, beta: f64, n_max: u64, step: u64) -> Outcome {
    let s = spectrum(values)?;
    if step == 0 || n_max < step {
        return Err("need 1 <= step <= n_max".into());
    }
    let ladder: Vec<u64> = (1..=n_max / step).map(|k| k * step).collect();
    let scan = run_saddle_scan(&s, beta, &ladder, &WEB_GUARD).map_err(|e| e.to_string())?;
    let rows: Vec<Value> = scan
        .rows
        .iter()
        .map(|r| json!({"n": r.n, "exact": r.ln_z_exact, "saddle": r.ln_z_saddle, "rel_err": r.rel_err}))
        .collect();
    Ok(json!({"beta": beta, "degenerate": scan.degenerate, "rows": rows}))
}

fn to_js(outcome: Outcome) -> Result<String, JsValue> {
    outcome.map(|v| v.to_string()).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = curveWithSamples)]
pub fn curve_with_samples_js(
    values: &str,
    n: u32,
    mean: &str,
    samples: u32,
    seed: u32,
) -> Result<String, JsValue> {
    to_js(curve_with_samples(
        values,
        n.into(),
        mean,
        samples as usize,
        seed.into(),
    ))
}

/// `l = 0` picks the Q/2 quantile.
#[wasm_bindgen(js_name = tailProfile)]
pub fn tail_profile_js(values: &str, n: u32, mean: &str, l: u32, epsilon: f64) -> Result<String, JsValue> {
    let l = (l > 0).then_some(l as usize);
    to_js(tail_profile(values, n.into(), mean, l, epsilon))
}

#[wasm_bindgen(js_name = saddleProfile)]
pub fn saddle_profile_js(values: &str, beta: f64, n_max: u32, step: u32) -> Result<String, JsValue> {
    to_js(saddle_profile(values, beta, n_max.into(), step.into()))
}
