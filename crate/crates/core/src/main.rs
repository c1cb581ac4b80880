use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use num_traits::Zero;

use equicomp::befit::{cumulative_curve, fit_bose, nu_limit};
use equicomp::ensemble::{count_variants, sample_many, split_profile, CountTable, TableGuard};
use equicomp::error::{Error, Result};
use equicomp::harness::{
    concentration_threshold, emit_report, run_concentration, run_lemma2, run_saddle_scan, select_l,
    ExperimentConfig, Format, LPolicy, Mode, Record, Report,
};
use equicomp::numeric::{big_ln, big_ratio};
use equicomp::partition::{chernoff_tail_bound, tilted_tail_bound, TailBoundParams};
use equicomp::spectrum::{load_spectrum, make_budget, parse_rational, Rational, ValueSpectrum};

#[derive(Parser, Debug)]
#[command(
    name = "equicomp",
    version,
    about = "Equiprobable occupancy ensemble laboratory"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Spectrum file: CSV with header `value,multiplicity`, or JSON.
    #[arg(long, global = true)]
    spectrum: Option<PathBuf>,
    /// Inline spectrum `value:multiplicity,...` (unit quantum), instead of --spectrum.
    #[arg(long, global = true)]
    values: Option<String>,
    /// Energy quantum, decimal or `p/q`.
    #[arg(long, global = true, default_value = "1")]
    quantum: String,
    #[arg(long, global = true)]
    n: Option<u64>,
    /// Mean energy per particle M (E = M N).
    #[arg(long, global = true)]
    mean: Option<String>,
    #[arg(long, global = true, default_value_t = 0.05)]
    epsilon: f64,
    /// Split index l (first l cells); defaults to the Q/2 quantile.
    #[arg(long, global = true)]
    l: Option<usize>,
    #[arg(long, global = true, default_value_t = 10_000)]
    samples: usize,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, value_enum, default_value_t = Mode::Exact)]
    mode: Mode,
    /// Output path; `-` writes to stdout.
    #[arg(long, global = true, default_value = "-")]
    out: PathBuf,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Inverse temperature for `partition` and `saddle-scan`.
    #[arg(long, global = true, default_value_t = 1.0)]
    beta: f64,
    /// Comma-separated, strictly increasing N values.
    #[arg(long, global = true, value_delimiter = ',')]
    ladder: Vec<u64>,
    /// Deviation threshold(s); defaults to N^(3/4 + epsilon) (scaled grid for `bound`).
    #[arg(long, global = true, value_delimiter = ',')]
    delta: Vec<f64>,
    /// Tilts for `bound`, as fractions of the gap beta' x_1 - nu'.
    #[arg(long, global = true, value_delimiter = ',')]
    c_frac: Vec<f64>,
    /// Exponent alpha in the tilt c = Delta / N^(1 + alpha).
    #[arg(long, global = true, default_value_t = 0.0)]
    alpha: f64,
    /// Grow multiplicities with N along the ladder.
    #[arg(long, global = true)]
    replicate: bool,
    /// Include wall-clock timings (reports are then not byte-reproducible).
    #[arg(long, global = true)]
    timing: bool,
    #[arg(long, global = true, default_value_t = TableGuard::default().max_particles)]
    max_particles: u64,
    #[arg(long, global = true, default_value_t = TableGuard::default().max_energy)]
    max_energy: u64,
    #[arg(long, global = true, default_value_t = TableGuard::default().max_entries)]
    max_entries: u64,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Fit (beta', nu') to N and E = M N.
    Fit,
    /// Exact number of variants N{M}.
    Count,
    /// Uniform samples from M, one occupancy per row.
    Sample,
    /// Exact count of variants with |B_l - curve| >= Delta.
    Tail,
    /// Exact ln Z(beta, N) against the saddle-point estimate.
    Partition,
    /// Exponential tail bound over a (c, Delta) grid.
    Bound,
    /// Concentration experiment along an N ladder.
    Concentration,
    /// Energy-restricted Boltzmann average along an N ladder.
    Lemma2,
    /// Saddle-point relative error along an N ladder.
    SaddleScan,
}

impl Cli {
    fn guard(&self) -> TableGuard {
        TableGuard {
            max_particles: self.max_particles,
            max_energy: self.max_energy,
            max_entries: self.max_entries,
        }
    }

    fn spectrum(&self) -> Result<ValueSpectrum> {
        let quantum = parse_rational(&self.quantum).map_err(Error::InvalidArgument)?;
        match (&self.spectrum, &self.values) {
            (Some(path), None) => load_spectrum(path, quantum),
            (None, Some(inline)) => inline.parse(),
            _ => Err(Error::InvalidArgument(
                "give exactly one of --spectrum FILE or --values LIST".into(),
            )),
        }
    }

    fn n(&self) -> Result<u64> {
        self.n
            .ok_or_else(|| Error::InvalidArgument("--n is required".into()))
    }

    fn mean(&self) -> Result<Rational> {
        let text = self
            .mean
            .as_deref()
            .ok_or_else(|| Error::InvalidArgument("--mean is required".into()))?;
        parse_rational(text).map_err(Error::InvalidArgument)
    }

    fn ladder(&self) -> Result<Vec<u64>> {
        if !self.ladder.is_empty() {
            Ok(self.ladder.clone())
        } else {
            Ok(vec![self.n()?])
        }
    }

    fn config(&self) -> Result<ExperimentConfig> {
        let config = ExperimentConfig {
            epsilon: self.epsilon,
            l_policy: self.l.map_or(LPolicy::Quantile { fraction: 0.5 }, LPolicy::Fixed),
            n_ladder: self.ladder()?,
            num_samples: self.samples,
            seed: self.seed,
            mode: self.mode,
            tilt_alpha: self.alpha,
            delta_override: self.delta.first().copied(),
            replicate: self.replicate,
            guard: self.guard(),
            record_timing: self.timing,
            ..ExperimentConfig::default()
        };
        config.validate()?;
        Ok(config)
    }

    fn split_index(&self, spectrum: &ValueSpectrum) -> Result<usize> {
        let policy = self.l.map_or(LPolicy::Quantile { fraction: 0.5 }, LPolicy::Fixed);
        select_l(spectrum, policy, 0.0)
    }
}

fn run(cli: &Cli) -> Result<(Report, Format)> {
    let spectrum = cli.spectrum()?;
    for w in spectrum.regime_warnings(cli.n.unwrap_or(1), f64::INFINITY, 0.0, f64::INFINITY) {
        log::warn!("{w}");
    }
    let default_format = match cli.command {
        Command::Sample => Format::Csv,
        _ => Format::Json,
    };
    let format = cli.format.unwrap_or(default_format);
    let report = match cli.command {
        Command::Fit => {
            let budget = make_budget(&spectrum, cli.n()?, cli.mean()?)?;
            let fit = fit_bose(&spectrum, &budget)?;
            if fit.nu_is_nonnegative() {
                log::warn!("fitted nu' = {} is nonnegative", fit.nu);
            }
            Report::Single(
                Record::new()
                    .with("beta", fit.beta)
                    .with("nu", fit.nu)
                    .with("phi", fit.phi.clone())
                    .with("residual_N", fit.residual_n)
                    .with("residual_E", fit.residual_e)
                    .with("nu_nonnegative", fit.nu_is_nonnegative()),
            )
        }
        Command::Count => {
            let budget = make_budget(&spectrum, cli.n()?, cli.mean()?)?;
            let table = CountTable::new(&spectrum, budget.n(), budget.energy_grid(), &cli.guard())?;
            let total = count_variants(&table);
            Report::Single(
                Record::new()
                    .with("N", budget.n())
                    .with("E", budget.energy())
                    .with("count", total.clone())
                    .with("ln_count", big_ln(&total)),
            )
        }
        Command::Sample => {
            let budget = make_budget(&spectrum, cli.n()?, cli.mean()?)?;
            let table = CountTable::new(&spectrum, budget.n(), budget.energy_grid(), &cli.guard())?;
            let draws = sample_many(&table, cli.seed, cli.samples)?;
            let names: Vec<String> = (1..=spectrum.len())
                .map(|i| format!("N_{i}"))
                .chain(["energy".to_string()])
                .collect();
            let cols: Vec<&str> = names.iter().map(String::as_str).collect();
            let mut report = Report::table("sample", &cols);
            if let Report::Table { rows, summary, .. } = &mut report {
                let u = equicomp::spectrum::rational_to_f64(&spectrum.quantum());
                for occ in &draws {
                    let mut rec = Record::new();
                    for (i, &c) in occ.counts().iter().enumerate() {
                        rec = rec.with(&names[i], c);
                    }
                    rows.push(rec.with("energy", occ.energy_grid() as f64 * u));
                }
                *summary = Record::new().with("seed", cli.seed).with("samples", cli.samples);
            }
            report
        }
        Command::Tail => {
            let n = cli.n()?;
            let budget = make_budget(&spectrum, n, cli.mean()?)?;
            let fit = fit_bose(&spectrum, &budget)?;
            let table = CountTable::new(&spectrum, n, budget.energy_grid(), &cli.guard())?;
            let l = cli.split_index(&spectrum)?;
            let delta = cli
                .delta
                .first()
                .copied()
                .unwrap_or_else(|| concentration_threshold(n, cli.epsilon));
            let curve = cumulative_curve(&fit, l)?;
            let profile = split_profile(&table, l)?;
            let total = profile.total();
            let tail = if delta > n as f64 + curve {
                num_bigint::BigUint::zero()
            } else {
                profile.count_at_least(curve, delta)
            };
            Report::Single(
                Record::new()
                    .with("l", l)
                    .with("delta", delta)
                    .with("tail_count", tail.clone())
                    .with("total_count", total.clone())
                    .with("fraction", big_ratio(&tail, &total)),
            )
        }
        Command::Partition | Command::SaddleScan => {
            let scan = run_saddle_scan(&spectrum, cli.beta, &cli.ladder()?, &cli.guard())?;
            scan.to_report()
        }
        Command::Bound => bound_grid(cli, &spectrum)?,
        Command::Concentration => run_concentration(&spectrum, cli.mean()?, &cli.config()?)?.to_report(),
        Command::Lemma2 => run_lemma2(&spectrum, cli.mean()?, &cli.config()?)?.to_report(),
    };
    Ok((report, format))
}

fn bound_grid(cli: &Cli, spectrum: &ValueSpectrum) -> Result<Report> {
    let n = cli.n()?;
    let budget = make_budget(spectrum, n, cli.mean()?)?;
    let fit = fit_bose(spectrum, &budget)?;
    let l = cli.split_index(spectrum)?;
    let gap = nu_limit(spectrum, fit.beta) - fit.nu;
    let base = concentration_threshold(n, cli.epsilon);
    let deltas = if cli.delta.is_empty() {
        [0.125, 0.25, 0.5, 1.0, 2.0].iter().map(|f| f * base).collect()
    } else {
        cli.delta.clone()
    };
    let fracs = if cli.c_frac.is_empty() {
        vec![0.01, 0.05, 0.1, 0.3, 0.6]
    } else {
        cli.c_frac.clone()
    };
    let exact = CountTable::new(spectrum, n, budget.energy_grid(), &cli.guard())
        .and_then(|t| Ok((split_profile(&t, l)?, count_variants(&t))))
        .ok();
    let curve = cumulative_curve(&fit, l)?;
    let mut report = Report::table(
        "bound",
        &[
            "c",
            "delta",
            "log_bound",
            "log_tilted_bound",
            "ln_exact",
            "bound_fraction",
            "exact_fraction",
        ],
    );
    if let Report::Table { rows, summary, .. } = &mut report {
        for &cf in &fracs {
            for &delta in &deltas {
                let tp = TailBoundParams::new(spectrum, cf * gap, delta, l)?;
                let (nf, ef) = (n as f64, budget.energy());
                let log_bound = chernoff_tail_bound(spectrum, &fit, &tp, nf, ef)?;
                let tilted = tilted_tail_bound(spectrum, &fit, &tp, nf, ef)?;
                let mut rec = Record::new()
                    .with("c", tp.c)
                    .with("delta", delta)
                    .with("log_bound", log_bound)
                    .with("log_tilted_bound", tilted);
                if let Some((profile, total)) = &exact {
                    let tail = profile.count_at_least(curve, delta);
                    rec = rec
                        .with("ln_exact", big_ln(&tail))
                        .with("bound_fraction", (log_bound - big_ln(total)).exp().min(1.0))
                        .with("exact_fraction", big_ratio(&tail, total));
                }
                rows.push(rec);
            }
        }
        *summary = Record::new()
            .with("N", n)
            .with("E", budget.energy())
            .with("l", l)
            .with("beta", fit.beta)
            .with("nu", fit.nu);
    }
    Ok(report)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Some(threads) = std::env::var("EQUICOMP_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            log::warn!("could not cap threads: {e}");
        }
    }
    let cli = Cli::parse();
    let result = run(&cli).and_then(|(report, format)| emit_report(&report, &cli.out, format));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
