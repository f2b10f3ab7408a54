//! Command-line front end: population generation, stratification, sample
//! allocation, one-shot estimation with confidence bands, and Monte Carlo
//! design comparison.
//!
//! Every subcommand is deterministic given its arguments (seeds included):
//! repeated runs write byte-identical files. Tables carry 12 significant
//! digits so that determinism is checkable with a plain byte comparison.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;

use curvesurvey::bands::{build_band, BandKind, ConfidenceBand};
use curvesurvey::estimate::{true_covariance, FunctionalEstimate};
use curvesurvey::mc::{
    compare_designs, envelope_tsv, run_experiment, theoretical_sd_tsv, DesignConfig,
    ExperimentSpec, PopulationSource,
};
use curvesurvey::{allocate, format_sig, CurvePopulation, SyntheticSpec};

/// Threads cap for parallel replication; `0` or unset means automatic.
const THREADS_VAR: &str = "CURVESURVEY_THREADS";

/// Significant digits in every tabular file.
const TABLE_DIGITS: usize = 12;

#[derive(Parser)]
#[command(
    name = "curvesurvey",
    version,
    about = "Design-based estimation of mean curves from finite populations",
    long_about = "Draws probability samples of curves from a finite population, estimates the \
                  population mean trajectory and its design variance, builds pointwise or \
                  simultaneous confidence bands, and compares sampling designs by Monte Carlo \
                  replication. All runs are reproducible from their seeds."
)]
struct Cli {
    /// Increase log detail (-v: info, -vv: debug). RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic curve population to a CSV file.
    Generate(GenerateArgs),
    /// Relabel a population into strata by curve level (or an auxiliary).
    Stratify(StratifyArgs),
    /// Compute proportional and dispersion-optimal sample allocations.
    Allocate(AllocateArgs),
    /// Draw one sample and estimate the mean curve with a confidence band.
    Estimate(EstimateArgs),
    /// Replicate designs many times and report losses and band coverage.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Generator settings as a JSON file; flags below override its fields.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Population size N.
    #[arg(long)]
    units: Option<usize>,
    /// Number of grid points d on [0, 1].
    #[arg(long)]
    grid_points: Option<usize>,
    /// Number of strata H (1 = unstratified).
    #[arg(long)]
    strata: Option<usize>,
    /// Generator seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Spread of per-unit amplitude scales (log-normal sigma).
    #[arg(long)]
    amplitude_spread: Option<f64>,
    /// Harmonic decay exponent; larger = smoother curves.
    #[arg(long)]
    noise_smoothness: Option<f64>,
    /// Output population CSV.
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct StratifyArgs {
    /// Input population CSV.
    #[arg(long)]
    pop: PathBuf,
    /// Number of strata to cut the population into.
    #[arg(long)]
    strata: usize,
    /// Optional auxiliary population CSV ranked in place of the target
    /// curves (same row count; its own grid may differ).
    #[arg(long)]
    auxiliary: Option<PathBuf>,
    /// Output population CSV with stratum labels.
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct AllocateArgs {
    /// Stratified population CSV.
    #[arg(long)]
    pop: PathBuf,
    /// Total sample budget n to split across strata.
    #[arg(short = 'n', long)]
    sample_size: usize,
    /// Output JSON path; stdout when omitted.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BandArg {
    /// Simultaneous (whole-curve) coverage.
    Global,
    /// Per-time-point coverage.
    Pointwise,
}

impl From<BandArg> for BandKind {
    fn from(value: BandArg) -> Self {
        match value {
            BandArg::Global => BandKind::Global,
            BandArg::Pointwise => BandKind::Pointwise,
        }
    }
}

#[derive(Args)]
struct EstimateArgs {
    /// Population CSV to sample from.
    #[arg(long)]
    pop: PathBuf,
    /// Design JSON, e.g. {"kind":"srswor","n":200} or
    /// {"kind":"stratified","allocation":"optimal","n":200}.
    #[arg(long)]
    design: PathBuf,
    /// Seed for the sample draw.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Band risk level.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Band kind.
    #[arg(long, value_enum, default_value_t = BandArg::Global)]
    band: BandArg,
    /// Compute only the pointwise variance; pass `--diag-only false` to
    /// also write the full covariance surface next to the table.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set, value_name = "BOOL")]
    diag_only: bool,
    /// Output table (tab-separated: t, mean, var, sd, lower, upper);
    /// a JSON sidecar with the sample and diagnostics lands next to it.
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment spec JSON (population, designs, replicates, alphas, seed).
    #[arg(long)]
    spec: PathBuf,
    /// Override the spec's population with this CSV file.
    #[arg(long)]
    pop: Option<PathBuf>,
    /// Override the spec's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the spec's replicate count.
    #[arg(long)]
    replicates: Option<usize>,
    /// Override the spec's risk levels (repeatable).
    #[arg(long = "alpha")]
    alphas: Vec<f64>,
    /// Report JSON path; plot tables land next to it as
    /// <stem>_sd.tsv and <stem>_envelope.tsv.
    #[arg(short, long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    if let Err(err) = init_threads() {
        eprintln!("error: {err:#}");
        return ExitCode::from(1);
    }
    match run(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

fn init_logging(verbose: u8) {
    let default = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(default))
        .format_timestamp(None)
        .init();
}

fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .with_context(|| format!("{THREADS_VAR} must be a nonnegative integer, got {raw:?}"))?;
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("installing the global thread pool")?;
        log::info!("parallelism capped at {threads} thread(s)");
    }
    Ok(())
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Generate(args) => cmd_generate(args)?,
        Command::Stratify(args) => cmd_stratify(args)?,
        Command::Allocate(args) => cmd_allocate(args)?,
        Command::Estimate(args) => cmd_estimate(args)?,
        Command::Experiment(args) => return cmd_experiment(args),
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    // Start from the JSON spec (or an empty object) and overlay the flags,
    // so field defaults and "missing field" errors come from one place.
    let mut doc = match &args.spec {
        Some(path) => serde_json::from_str::<serde_json::Value>(
            &fs::read_to_string(path)
                .with_context(|| format!("reading generator spec {}", path.display()))?,
        )
        .with_context(|| format!("parsing generator spec {}", path.display()))?,
        None => json!({}),
    };
    let fields = doc
        .as_object_mut()
        .context("generator spec must be a JSON object")?;
    let mut set = |key: &str, value: Option<serde_json::Value>| {
        if let Some(v) = value {
            fields.insert(key.to_string(), v);
        }
    };
    set("units", args.units.map(Into::into));
    set("grid_points", args.grid_points.map(Into::into));
    set("strata", args.strata.map(Into::into));
    set("seed", args.seed.map(Into::into));
    set("amplitude_spread", args.amplitude_spread.map(Into::into));
    set("noise_smoothness", args.noise_smoothness.map(Into::into));
    let spec: SyntheticSpec =
        serde_json::from_value(doc).context("assembling the generator settings")?;

    let pop = spec.generate()?;
    pop.save_csv(&args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;
    log::info!(
        "generated {} units on {} grid points ({} strata)",
        pop.size(),
        pop.grid().len(),
        pop.num_strata().unwrap_or(1)
    );
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_stratify(args: StratifyArgs) -> Result<()> {
    let pop = load_population(&args.pop)?;
    let auxiliary = args
        .auxiliary
        .as_ref()
        .map(|path| load_population(path))
        .transpose()?;
    let relabeled = pop.stratify_by_max_level(args.strata, auxiliary.as_ref().map(|a| a.values()))?;
    relabeled
        .save_csv(&args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;
    log::info!(
        "stratum sizes: {:?}",
        relabeled.stratum_sizes().unwrap_or_default()
    );
    println!("wrote {}", args.out.display());
    Ok(())
}

#[derive(Serialize)]
struct AllocationOut {
    rule: allocate::AllocationRule,
    n_h: Vec<usize>,
    quotas: Vec<f64>,
    objective: f64,
}

impl From<allocate::Allocation> for AllocationOut {
    fn from(a: allocate::Allocation) -> Self {
        AllocationOut {
            rule: a.rule,
            n_h: a.sizes,
            quotas: a.quotas,
            objective: a.objective,
        }
    }
}

fn cmd_allocate(args: AllocateArgs) -> Result<()> {
    let pop = load_population(&args.pop)?;
    let summaries = allocate::stratum_summaries(&pop)?;
    let proportional = allocate::proportional_allocation(&summaries, args.sample_size)?;
    let optimal = allocate::optimal_allocation(&summaries, args.sample_size)?;
    let report = json!({
        "population": args.pop.display().to_string(),
        "population_size": pop.size(),
        "budget": args.sample_size,
        "N_h": summaries.iter().map(|s| s.size).collect::<Vec<_>>(),
        "S_h": summaries.iter().map(|s| s.dispersion).collect::<Vec<_>>(),
        "proportional": AllocationOut::from(proportional),
        "optimal": AllocationOut::from(optimal),
    });
    let text = to_json_text(&report)?;
    match &args.out {
        Some(path) => {
            write_text(path, &text)?;
            println!("wrote {}", path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_estimate(args: EstimateArgs) -> Result<()> {
    if args.out.extension().map(|e| e == "json").unwrap_or(false) {
        bail!("--out is the table path; the .json sidecar is derived from it");
    }
    let pop = load_population(&args.pop)?;
    let config: DesignConfig = read_json(&args.design, "design")?;
    let design = config.resolve(&pop)?;
    let sample = design.draw(args.seed);
    let estimate = FunctionalEstimate::compute(&pop, &sample, args.diag_only)?;
    let band = build_band(&estimate, args.alpha, args.band.into())?;
    let truth = true_covariance(&pop, &design, true)?;

    let variance = estimate.variance().expect("estimate built with variance");
    let table = estimate_table(&estimate, &band);
    write_text(&args.out, &table)?;
    println!("wrote {}", args.out.display());

    let covariance_path = if args.diag_only {
        None
    } else {
        let path = sibling(&args.out, "_covariance.tsv");
        write_text(&path, &covariance_table(&estimate))?;
        println!("wrote {}", path.display());
        Some(path)
    };

    let sidecar = json!({
        "population": args.pop.display().to_string(),
        "population_size": pop.size(),
        "design": config,
        "design_name": config.display_name(),
        "seed": args.seed,
        "sample_size": sample.len(),
        "sample_indices": sample.indices(), // 0-based unit rows
        "alpha": args.alpha,
        "band": band.kind(),
        "clamped_points": band.clamped_count(),
        "negative_variance_points": variance.negative_diag_count(),
        "estimated_variance_integral": variance.integrated_variance(),
        "true_variance_integral": truth.integrated_variance(),
        "outputs": {
            "table": args.out.display().to_string(),
            "covariance": covariance_path.as_ref().map(|p| p.display().to_string()),
        },
    });
    let sidecar_path = sibling(&args.out, ".json");
    write_text(&sidecar_path, &to_json_text(&sidecar)?)?;
    println!("wrote {}", sidecar_path.display());
    Ok(())
}

fn cmd_experiment(args: ExperimentArgs) -> Result<ExitCode> {
    let mut spec: ExperimentSpec = read_json(&args.spec, "experiment spec")?;
    if let Some(pop) = args.pop {
        spec.population = PopulationSource::Csv(pop);
    }
    if let Some(seed) = args.seed {
        spec.master_seed = seed;
    }
    if let Some(replicates) = args.replicates {
        spec.replicates = replicates;
    }
    if !args.alphas.is_empty() {
        spec.alphas = args.alphas;
    }

    let report = run_experiment(&spec)?;
    log::info!(
        "{} designs x {} replicates in {:.2}s",
        report.designs.len(),
        spec.replicates,
        report.runtime_seconds
    );

    write_text(&args.out, &to_json_text(&report)?)?;
    println!("wrote {}", args.out.display());
    let sd_path = sibling(&args.out, "_sd.tsv");
    write_text(&sd_path, &theoretical_sd_tsv(&report))?;
    println!("wrote {}", sd_path.display());
    let envelope_path = sibling(&args.out, "_envelope.tsv");
    write_text(&envelope_path, &envelope_tsv(&report))?;
    println!("wrote {}", envelope_path.display());

    let ranking = compare_designs(&report);
    if !ranking.entries.is_empty() {
        println!("designs by mean integrated |error| of the mean estimate:");
        for (i, entry) in ranking.entries.iter().enumerate() {
            println!(
                "  {}. {}  loss_mu={}  loss_gamma={}  int_var={}",
                i + 1,
                entry.name,
                format_sig(entry.mean_loss_mu, 6),
                format_sig(entry.mean_loss_gamma, 6),
                format_sig(entry.true_variance_integral, 6),
            );
        }
    }

    let mut failed = false;
    for design in &report.designs {
        if let Some(err) = &design.error {
            eprintln!("design '{}' failed: {err}", design.name);
            failed = true;
        }
    }
    Ok(if failed {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    })
}

fn estimate_table(estimate: &FunctionalEstimate, band: &ConfidenceBand) -> String {
    let variance = estimate.variance().expect("estimate built with variance");
    let lower = band.lower();
    let upper = band.upper();
    let mut out = String::from("t\tmean\tvar\tsd\tlower\tupper\n");
    for (j, &t) in estimate.grid().points().iter().enumerate() {
        let var = variance.variance_diag()[j];
        let sd = var.max(0.0).sqrt();
        let row = [t, estimate.mean()[j], var, sd, lower[j], upper[j]];
        for (i, v) in row.into_iter().enumerate() {
            if i > 0 {
                out.push('\t');
            }
            out.push_str(&format_sig(v, TABLE_DIGITS));
        }
        out.push('\n');
    }
    out
}

/// Square table of the covariance surface, grid times on both margins.
fn covariance_table(estimate: &FunctionalEstimate) -> String {
    let surface = estimate
        .variance()
        .and_then(|v| v.covariance())
        .expect("full surface requested");
    let points = estimate.grid().points();
    let mut out = String::from("t");
    for &t in points {
        out.push('\t');
        out.push_str(&format_sig(t, TABLE_DIGITS));
    }
    out.push('\n');
    for (i, &t) in points.iter().enumerate() {
        out.push_str(&format_sig(t, TABLE_DIGITS));
        for j in 0..points.len() {
            out.push('\t');
            out.push_str(&format_sig(surface[[i, j]], TABLE_DIGITS));
        }
        out.push('\n');
    }
    out
}

fn load_population(path: &Path) -> Result<CurvePopulation> {
    CurvePopulation::load_csv(path)
        .with_context(|| format!("loading population {}", path.display()))
}

fn read_json<T: DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {what} {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {what} {}", path.display()))
}

fn to_json_text(value: &impl Serialize) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// `report.json` + `_sd.tsv` → `report_sd.tsv`; `table.tsv` + `.json` →
/// `table.json`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".to_string());
    path.with_file_name(format!("{stem}{suffix}"))
}
