//! Monte Carlo replication harness: repeated sample draws under a list of
//! named designs, integrated-absolute-error losses against the exact
//! finite-population quantities, empirical band coverage, and a ranking
//! report for design comparison.
//!
//! Determinism contract: a report is a pure function of the population and
//! the [`ExperimentSpec`]. Each replicate's seed is derived by a keyed
//! hash of `(master_seed, design index, replicate index)`, so replicates
//! can run concurrently in any order; aggregation folds fixed-size chunks
//! in replicate order, making every reported float independent of thread
//! count and scheduling.
//!
//! Memory stays at `O(grid + replicates)` per design: the loop keeps
//! per-replicate scalars (losses, coverage flags) and running per-grid-
//! point moments, never per-replicate curves.

use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::allocate::{
    optimal_allocation, proportional_allocation, stratum_summaries, AllocationRule,
};
use crate::bands;
use crate::design::SamplingDesign;
use crate::error::{Error, Result};
use crate::estimate::{true_covariance, FunctionalEstimate};
use crate::population::{interpolate, trapezoid_integral, CurvePopulation, TimeGrid};
use crate::rng;
use crate::util::{kahan_sum, quantile_sorted, KahanSum};
use crate::SyntheticSpec;

/// Fixed replicate chunk size for the parallel loop. Constant (never
/// derived from thread count) so the chunk fold order, and with it every
/// accumulated float, is identical across machines and pool sizes.
const CHUNK: usize = 32;

/// Where an experiment's population comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PopulationSource {
    /// Load a population CSV from disk.
    Csv(PathBuf),
    /// Generate a population in memory.
    Synthetic(SyntheticSpec),
}

impl PopulationSource {
    pub fn load(&self) -> Result<CurvePopulation> {
        match self {
            PopulationSource::Csv(path) => CurvePopulation::load_csv(path),
            PopulationSource::Synthetic(spec) => spec.generate(),
        }
    }
}

/// How to allocate a stratified design's budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AllocationConfig {
    /// Explicit per-stratum sample sizes.
    Sizes(Vec<usize>),
    /// Derive sizes from the population with this rule and a total budget.
    Rule(AllocationRule),
}

/// One named design entry of an experiment, deserializable from JSON like
/// `{"kind": "srswor", "n": 200}`, `{"kind": "census"}`, or
/// `{"kind": "stratified", "allocation": "optimal", "n": 200}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignConfig {
    /// Report label; defaults to a name derived from the kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(flatten)]
    pub kind: DesignConfigKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DesignConfigKind {
    /// Simple random sampling without replacement, `n` of `N`.
    Srswor { n: usize },
    /// Every unit observed (zero-variance reference design).
    Census,
    /// Stratified SRSWOR; `n` is the total budget when `allocation` is a
    /// rule, and must be omitted when explicit sizes are given.
    Stratified {
        allocation: AllocationConfig,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        n: Option<usize>,
    },
}

impl DesignConfig {
    pub fn srswor(n: usize) -> Self {
        DesignConfig {
            name: None,
            kind: DesignConfigKind::Srswor { n },
        }
    }

    pub fn census() -> Self {
        DesignConfig {
            name: None,
            kind: DesignConfigKind::Census,
        }
    }

    pub fn stratified(rule: AllocationRule, n: usize) -> Self {
        DesignConfig {
            name: None,
            kind: DesignConfigKind::Stratified {
                allocation: AllocationConfig::Rule(rule),
                n: Some(n),
            },
        }
    }

    /// The label used in reports: the explicit name if set, otherwise one
    /// derived from the kind (`srswor_n200`, `census`,
    /// `stratified_optimal`, `stratified_manual`, …).
    pub fn display_name(&self) -> String {
        if let Some(name) = &self.name {
            return name.clone();
        }
        match &self.kind {
            DesignConfigKind::Srswor { n } => format!("srswor_n{n}"),
            DesignConfigKind::Census => "census".to_string(),
            DesignConfigKind::Stratified { allocation, .. } => match allocation {
                AllocationConfig::Sizes(_) => "stratified_manual".to_string(),
                AllocationConfig::Rule(AllocationRule::Proportional) => {
                    "stratified_proportional".to_string()
                }
                AllocationConfig::Rule(AllocationRule::Optimal) => {
                    "stratified_optimal".to_string()
                }
                AllocationConfig::Rule(AllocationRule::Manual) => {
                    "stratified_manual".to_string()
                }
            },
        }
    }

    /// Instantiates the design against a concrete population, running the
    /// allocation rule if one was requested.
    pub fn resolve(&self, pop: &CurvePopulation) -> Result<SamplingDesign> {
        match &self.kind {
            DesignConfigKind::Srswor { n } => SamplingDesign::srswor(pop.size(), *n),
            DesignConfigKind::Census => SamplingDesign::census(pop.size()),
            DesignConfigKind::Stratified { allocation, n } => {
                let labels = pop.strata().ok_or(Error::MissingStrata)?;
                let sizes = match allocation {
                    AllocationConfig::Sizes(sizes) => {
                        if n.is_some() {
                            return Err(Error::invalid(
                                "stratified design with explicit sizes must not also set n",
                            ));
                        }
                        sizes.clone()
                    }
                    AllocationConfig::Rule(AllocationRule::Manual) => {
                        return Err(Error::invalid(
                            "allocation rule \"manual\" needs explicit sizes; \
                             pass them as the allocation value",
                        ));
                    }
                    AllocationConfig::Rule(rule) => {
                        let n = n.ok_or_else(|| {
                            Error::invalid(
                                "stratified design with an allocation rule needs a total \
                                 sample size n",
                            )
                        })?;
                        let summaries = stratum_summaries(pop)?;
                        let allocation = match rule {
                            AllocationRule::Proportional => {
                                proportional_allocation(&summaries, n)?
                            }
                            AllocationRule::Optimal => optimal_allocation(&summaries, n)?,
                            AllocationRule::Manual => unreachable!("handled above"),
                        };
                        allocation.sizes
                    }
                };
                SamplingDesign::stratified(labels, &sizes)
            }
        }
    }
}

fn default_alphas() -> Vec<f64> {
    vec![0.05, 0.01]
}

/// Full description of a Monte Carlo experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    /// Population to draw from (file or generator).
    pub population: PopulationSource,
    /// Designs to compare; each runs `replicates` times.
    pub designs: Vec<DesignConfig>,
    /// Number of replicate draws per design, `R ≥ 1`.
    pub replicates: usize,
    /// Band risk levels to track coverage for; defaults to 0.05 and 0.01.
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    /// Root seed; every replicate seed derives from it. Defaults to 0.
    #[serde(default)]
    pub master_seed: u64,
    /// Grid for the loss integrals, defaulting to the population grid.
    /// Must lie inside the observation window; estimates and truths are
    /// interpolated onto it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_grid: Option<Vec<f64>>,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::invalid("an experiment needs at least one replicate"));
        }
        if self.designs.is_empty() {
            return Err(Error::invalid("an experiment needs at least one design"));
        }
        for &alpha in &self.alphas {
            if !(alpha.is_finite() && 0.0 < alpha && alpha < 1.0) {
                return Err(Error::invalid(format!(
                    "risk levels must lie strictly between 0 and 1, got {alpha}"
                )));
            }
        }
        if let Some(points) = &self.loss_grid {
            TimeGrid::new(points.clone())?;
        }
        Ok(())
    }
}

/// Integrated absolute error of a mean-trajectory estimate,
/// `∫ |estimate(t) − truth(t)| dt` by the trapezoid rule on `grid`.
pub fn loss_mu(estimate: &[f64], truth: &[f64], grid: &TimeGrid) -> Result<f64> {
    abs_error_integral(estimate, truth, grid)
}

/// Integrated absolute error of a pointwise-variance estimate — the same
/// integral as [`loss_mu`], applied to the diagonals `γ̂(t,t)` vs `γ(t,t)`.
pub fn loss_gamma(estimate: &[f64], truth: &[f64], grid: &TimeGrid) -> Result<f64> {
    abs_error_integral(estimate, truth, grid)
}

fn abs_error_integral(estimate: &[f64], truth: &[f64], grid: &TimeGrid) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(Error::LengthMismatch {
            expected: truth.len(),
            got: estimate.len(),
        });
    }
    let abs_err: Vec<f64> = estimate
        .iter()
        .zip(truth)
        .map(|(e, t)| (e - t).abs())
        .collect();
    trapezoid_integral(&abs_err, grid)
}

/// Mean and quartiles of a batch of per-replicate scalars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuartileStats {
    pub mean: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

impl QuartileStats {
    fn from_values(values: &[f64]) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_unstable_by(f64::total_cmp);
        QuartileStats {
            mean: kahan_sum(values.iter().copied()) / values.len() as f64,
            q1: quantile_sorted(&sorted, 0.25),
            median: quantile_sorted(&sorted, 0.5),
            q3: quantile_sorted(&sorted, 0.75),
        }
    }
}

/// Empirical band coverage at one risk level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageEntry {
    pub alpha: f64,
    /// Fraction of replicates whose simultaneous band contained the whole
    /// population mean trajectory.
    pub global: f64,
    /// Replicate-average fraction of grid points covered by the pointwise
    /// band.
    pub pointwise_avg: f64,
}

/// Aggregated results for one design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSummary {
    /// Total units drawn per replicate.
    pub sample_size: usize,
    /// Integrated absolute error of the mean estimate across replicates.
    pub loss_mu: QuartileStats,
    /// Integrated absolute error of the variance estimate across replicates.
    pub loss_gamma: QuartileStats,
    /// Monte Carlo estimate of `E[sup_t |μ̂(t) − μ(t)|]`.
    pub mean_sup_mu: f64,
    /// Monte Carlo estimate of `E[sup_t |γ̂(t,t) − γ(t,t)|]`.
    pub mean_sup_gamma: f64,
    /// Coverage per requested risk level, in spec order.
    pub coverage: Vec<CoverageEntry>,
    /// `∫ γ(t,t) dt`, the design's exact integrated variance.
    pub true_variance_integral: f64,
    /// Exact `√γ(t,t)` per grid point (the planning curve).
    pub theoretical_sd: Vec<f64>,
    /// Replicate-average of `μ̂(t)` per grid point.
    pub mc_mean_mu: Vec<f64>,
    /// Replicate standard deviation of `μ̂(t)` per grid point.
    pub mc_sd_mu: Vec<f64>,
    /// Replicate-average of `γ̂(t,t)` per grid point.
    pub mc_mean_gamma: Vec<f64>,
    /// Replicate standard deviation of `γ̂(t,t)` per grid point.
    pub mc_sd_gamma: Vec<f64>,
}

/// Per-design slot of a report: either a summary or the error that kept
/// the design from running (other designs continue).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignReport {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<DesignSummary>,
}

/// Complete experiment output. Serializes to JSON deterministically:
/// wall-clock runtime is kept out of the serialized form so identical
/// seeds give byte-identical reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    /// Echo of the spec that produced this report.
    pub spec: ExperimentSpec,
    pub population_size: usize,
    /// Population time grid (the curves' common abscissae).
    pub grid: Vec<f64>,
    /// Exact population mean trajectory on `grid`.
    pub population_mean: Vec<f64>,
    /// One entry per spec design, in spec order.
    pub designs: Vec<DesignReport>,
    /// Wall-clock duration of the run, seconds. Not serialized.
    #[serde(skip)]
    pub runtime_seconds: f64,
}

/// Loads the population named by the spec and runs the experiment on it.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<McReport> {
    spec.validate()?;
    let pop = spec.population.load()?;
    run_experiment_on(&pop, spec)
}

/// Runs the experiment against an already-loaded population (which the
/// caller asserts matches `spec.population`). Designs that cannot run —
/// unresolvable against this population, or with vanishing joint
/// inclusion probabilities — are recorded as per-design errors while the
/// rest proceed.
pub fn run_experiment_on(pop: &CurvePopulation, spec: &ExperimentSpec) -> Result<McReport> {
    spec.validate()?;
    let started = Instant::now();
    let loss = LossContext::new(pop, spec)?;
    let truth_mu = pop.mean_curve();

    let mut designs = Vec::with_capacity(spec.designs.len());
    for (index, config) in spec.designs.iter().enumerate() {
        let name = config.display_name();
        let design_seed = rng::child_seed(spec.master_seed, index as u64);
        let summary = config
            .resolve(pop)
            .and_then(|design| run_design(pop, &design, design_seed, spec, &loss, &truth_mu));
        match summary {
            Ok(summary) => designs.push(DesignReport {
                name,
                error: None,
                summary: Some(summary),
            }),
            Err(err) => designs.push(DesignReport {
                name,
                error: Some(err.to_string()),
                summary: None,
            }),
        }
    }

    Ok(McReport {
        spec: spec.clone(),
        population_size: pop.size(),
        grid: pop.grid().points().to_vec(),
        population_mean: truth_mu,
        designs,
        runtime_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Loss-integral context: the grid to integrate on and whether it is the
/// population grid itself (the default, which skips interpolation).
struct LossContext {
    grid: TimeGrid,
    is_population_grid: bool,
}

impl LossContext {
    fn new(pop: &CurvePopulation, spec: &ExperimentSpec) -> Result<Self> {
        match &spec.loss_grid {
            None => Ok(LossContext {
                grid: pop.grid().clone(),
                is_population_grid: true,
            }),
            Some(points) => {
                let grid = TimeGrid::new(points.clone())?;
                for &t in [grid.start(), grid.end()].iter() {
                    if t < pop.grid().start() || t > pop.grid().end() {
                        return Err(Error::OutOfRange {
                            t,
                            lo: pop.grid().start(),
                            hi: pop.grid().end(),
                        });
                    }
                }
                let is_population_grid = grid.points() == pop.grid().points();
                Ok(LossContext {
                    grid,
                    is_population_grid,
                })
            }
        }
    }

    /// Values reinterpreted on the loss grid (linear interpolation from
    /// the population grid when the grids differ).
    fn project(&self, values: &[f64], pop_grid: &TimeGrid) -> Result<Vec<f64>> {
        if self.is_population_grid {
            return Ok(values.to_vec());
        }
        self.grid
            .points()
            .iter()
            .map(|&t| interpolate(values, pop_grid, t))
            .collect()
    }

    fn integral(
        &self,
        estimate: &[f64],
        truth_on_loss_grid: &[f64],
        pop_grid: &TimeGrid,
    ) -> Result<f64> {
        if self.is_population_grid {
            abs_error_integral(estimate, truth_on_loss_grid, &self.grid)
        } else {
            let projected = self.project(estimate, pop_grid)?;
            abs_error_integral(&projected, truth_on_loss_grid, &self.grid)
        }
    }
}

/// Per-chunk accumulator. Scalars are finished Kahan totals; vectors are
/// in replicate order. Chunks merge strictly in index order.
struct ChunkStats {
    loss_mu: Vec<f64>,
    loss_gamma: Vec<f64>,
    sup_mu_sum: f64,
    sup_gamma_sum: f64,
    global_hits: Vec<u64>,
    pointwise_sum: Vec<f64>,
    mu_dev_sum: Vec<f64>,
    mu_dev_sq: Vec<f64>,
    gamma_dev_sum: Vec<f64>,
    gamma_dev_sq: Vec<f64>,
}

fn run_design(
    pop: &CurvePopulation,
    design: &SamplingDesign,
    design_seed: u64,
    spec: &ExperimentSpec,
    loss: &LossContext,
    truth_mu: &[f64],
) -> Result<DesignSummary> {
    if !design.is_variance_estimable() {
        // Surface the offending block rather than a blanket message.
        for block in design.blocks() {
            if block.draws < 2 {
                return Err(Error::VarianceInestimable {
                    stratum: block.stratum,
                    sample_size: block.draws,
                });
            }
        }
    }
    let truth = true_covariance(pop, design, true)?;
    let truth_gamma = truth.variance_diag();
    let truth_mu_loss = loss.project(truth_mu, pop.grid())?;
    let truth_gamma_loss = loss.project(truth_gamma, pop.grid())?;
    let scales: Vec<(f64, f64)> = spec
        .alphas
        .iter()
        .map(|&alpha| Ok((bands::global_scale(alpha)?, bands::pointwise_scale(alpha)?)))
        .collect::<Result<_>>()?;

    let replicates = spec.replicates;
    let d = pop.grid().len();
    let chunk_starts: Vec<usize> = (0..replicates).step_by(CHUNK).collect();
    let chunks: Vec<Result<ChunkStats>> = chunk_starts
        .par_iter()
        .map(|&start| {
            let end = (start + CHUNK).min(replicates);
            run_chunk(
                pop,
                design,
                design_seed,
                start..end,
                &scales,
                loss,
                truth_mu,
                truth_gamma,
                &truth_mu_loss,
                &truth_gamma_loss,
            )
        })
        .collect();

    // Ordered fold over chunk results; the first in-order error wins.
    let alphas = spec.alphas.len();
    let mut loss_mu_all = Vec::with_capacity(replicates);
    let mut loss_gamma_all = Vec::with_capacity(replicates);
    let mut sup_mu_sum = 0.0;
    let mut sup_gamma_sum = 0.0;
    let mut global_hits = vec![0u64; alphas];
    let mut pointwise_sum = vec![0.0f64; alphas];
    let mut mu_dev_sum = vec![0.0f64; d];
    let mut mu_dev_sq = vec![0.0f64; d];
    let mut gamma_dev_sum = vec![0.0f64; d];
    let mut gamma_dev_sq = vec![0.0f64; d];
    for chunk in chunks {
        let c = chunk?;
        loss_mu_all.extend_from_slice(&c.loss_mu);
        loss_gamma_all.extend_from_slice(&c.loss_gamma);
        sup_mu_sum += c.sup_mu_sum;
        sup_gamma_sum += c.sup_gamma_sum;
        for a in 0..alphas {
            global_hits[a] += c.global_hits[a];
            pointwise_sum[a] += c.pointwise_sum[a];
        }
        for j in 0..d {
            mu_dev_sum[j] += c.mu_dev_sum[j];
            mu_dev_sq[j] += c.mu_dev_sq[j];
            gamma_dev_sum[j] += c.gamma_dev_sum[j];
            gamma_dev_sq[j] += c.gamma_dev_sq[j];
        }
    }

    let r = replicates as f64;
    let sd_from_moments = |sum: f64, sq: f64| -> f64 {
        if replicates < 2 {
            return 0.0;
        }
        ((sq - sum * sum / r) / (r - 1.0)).max(0.0).sqrt()
    };
    let coverage = spec
        .alphas
        .iter()
        .enumerate()
        .map(|(a, &alpha)| CoverageEntry {
            alpha,
            global: global_hits[a] as f64 / r,
            pointwise_avg: pointwise_sum[a] / r,
        })
        .collect();
    Ok(DesignSummary {
        sample_size: design.sample_size(),
        loss_mu: QuartileStats::from_values(&loss_mu_all),
        loss_gamma: QuartileStats::from_values(&loss_gamma_all),
        mean_sup_mu: sup_mu_sum / r,
        mean_sup_gamma: sup_gamma_sum / r,
        coverage,
        true_variance_integral: truth.integrated_variance(),
        theoretical_sd: truth_gamma.iter().map(|&v| v.max(0.0).sqrt()).collect(),
        mc_mean_mu: (0..d).map(|j| truth_mu[j] + mu_dev_sum[j] / r).collect(),
        mc_sd_mu: (0..d)
            .map(|j| sd_from_moments(mu_dev_sum[j], mu_dev_sq[j]))
            .collect(),
        mc_mean_gamma: (0..d)
            .map(|j| truth_gamma[j] + gamma_dev_sum[j] / r)
            .collect(),
        mc_sd_gamma: (0..d)
            .map(|j| sd_from_moments(gamma_dev_sum[j], gamma_dev_sq[j]))
            .collect(),
    })
}

#[allow(clippy::too_many_arguments)]
fn run_chunk(
    pop: &CurvePopulation,
    design: &SamplingDesign,
    design_seed: u64,
    range: std::ops::Range<usize>,
    scales: &[(f64, f64)],
    loss: &LossContext,
    truth_mu: &[f64],
    truth_gamma: &[f64],
    truth_mu_loss: &[f64],
    truth_gamma_loss: &[f64],
) -> Result<ChunkStats> {
    let d = pop.grid().len();
    let count = range.len();
    let mut loss_mu_v = Vec::with_capacity(count);
    let mut loss_gamma_v = Vec::with_capacity(count);
    let mut sup_mu = KahanSum::default();
    let mut sup_gamma = KahanSum::default();
    let mut global_hits = vec![0u64; scales.len()];
    let mut pointwise = vec![KahanSum::default(); scales.len()];
    let mut mu_dev_sum = vec![KahanSum::default(); d];
    let mut mu_dev_sq = vec![KahanSum::default(); d];
    let mut gamma_dev_sum = vec![KahanSum::default(); d];
    let mut gamma_dev_sq = vec![KahanSum::default(); d];

    for r in range {
        let sample = design.draw(rng::child_seed(design_seed, r as u64));
        let est = FunctionalEstimate::compute(pop, &sample, true)?;
        let mean = est.mean();
        let gamma = est
            .variance()
            .expect("compute always carries a variance")
            .variance_diag();

        loss_mu_v.push(loss.integral(mean, truth_mu_loss, pop.grid())?);
        loss_gamma_v.push(loss.integral(gamma, truth_gamma_loss, pop.grid())?);

        let mut worst_mu = 0.0f64;
        let mut worst_gamma = 0.0f64;
        for j in 0..d {
            let dev_mu = mean[j] - truth_mu[j];
            let dev_gamma = gamma[j] - truth_gamma[j];
            worst_mu = worst_mu.max(dev_mu.abs());
            worst_gamma = worst_gamma.max(dev_gamma.abs());
            mu_dev_sum[j].add(dev_mu);
            mu_dev_sq[j].add(dev_mu * dev_mu);
            gamma_dev_sum[j].add(dev_gamma);
            gamma_dev_sq[j].add(dev_gamma * dev_gamma);
        }
        sup_mu.add(worst_mu);
        sup_gamma.add(worst_gamma);

        for (a, &(global_scale, pointwise_scale)) in scales.iter().enumerate() {
            let (hw, _) = bands::half_widths(global_scale, gamma);
            if bands::all_covered(mean, &hw, truth_mu) {
                global_hits[a] += 1;
            }
            let (hw, _) = bands::half_widths(pointwise_scale, gamma);
            pointwise[a].add(bands::covered_fraction(mean, &hw, truth_mu));
        }
    }

    let finish = |v: Vec<KahanSum>| -> Vec<f64> { v.into_iter().map(KahanSum::value).collect() };
    Ok(ChunkStats {
        loss_mu: loss_mu_v,
        loss_gamma: loss_gamma_v,
        sup_mu_sum: sup_mu.value(),
        sup_gamma_sum: sup_gamma.value(),
        global_hits,
        pointwise_sum: finish(pointwise),
        mu_dev_sum: finish(mu_dev_sum),
        mu_dev_sq: finish(mu_dev_sq),
        gamma_dev_sum: finish(gamma_dev_sum),
        gamma_dev_sq: finish(gamma_dev_sq),
    })
}

/// One row of a design ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedDesign {
    pub name: String,
    pub mean_loss_mu: f64,
    pub mean_loss_gamma: f64,
    pub true_variance_integral: f64,
    /// Exact `√γ(t,t)` curve for plotting.
    pub theoretical_sd: Vec<f64>,
}

/// Designs ordered by mean integrated mean-estimate error (best first),
/// with the exact standard-deviation curves alongside for plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignRanking {
    pub grid: Vec<f64>,
    pub entries: Vec<RankedDesign>,
    /// Designs left out because they failed to run.
    pub skipped: Vec<String>,
}

/// Ranks a report's designs by mean `∫|μ̂ − μ|`. The sort is stable, so
/// ties keep their spec order; failed designs are listed as skipped.
pub fn compare_designs(report: &McReport) -> DesignRanking {
    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    for design in &report.designs {
        match &design.summary {
            Some(s) => entries.push(RankedDesign {
                name: design.name.clone(),
                mean_loss_mu: s.loss_mu.mean,
                mean_loss_gamma: s.loss_gamma.mean,
                true_variance_integral: s.true_variance_integral,
                theoretical_sd: s.theoretical_sd.clone(),
            }),
            None => skipped.push(design.name.clone()),
        }
    }
    entries.sort_by(|a, b| a.mean_loss_mu.total_cmp(&b.mean_loss_mu));
    DesignRanking {
        grid: report.grid.clone(),
        entries,
        skipped,
    }
}

fn column_name(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_whitespace() { '_' } else { c })
        .collect()
}

const TSV_DIGITS: usize = 12;

/// Plot-ready table of the exact per-design standard-deviation curves:
/// `t`, then one `sd_<design>` column per design that ran.
pub fn theoretical_sd_tsv(report: &McReport) -> String {
    let ran: Vec<(&str, &DesignSummary)> = report
        .designs
        .iter()
        .filter_map(|d| d.summary.as_ref().map(|s| (d.name.as_str(), s)))
        .collect();
    let mut out = String::from("t");
    for (name, _) in &ran {
        out.push_str(&format!("\tsd_{}", column_name(name)));
    }
    out.push('\n');
    for (j, &t) in report.grid.iter().enumerate() {
        out.push_str(&crate::format_sig(t, TSV_DIGITS));
        for (_, s) in &ran {
            out.push('\t');
            out.push_str(&crate::format_sig(s.theoretical_sd[j], TSV_DIGITS));
        }
        out.push('\n');
    }
    out
}

/// Plot-ready envelope of the replicate mean estimates: for each design
/// that ran, the Monte Carlo average of `μ̂(t)` bracketed by ±2 replicate
/// standard deviations, next to the exact population mean.
pub fn envelope_tsv(report: &McReport) -> String {
    let ran: Vec<(&str, &DesignSummary)> = report
        .designs
        .iter()
        .filter_map(|d| d.summary.as_ref().map(|s| (d.name.as_str(), s)))
        .collect();
    let mut out = String::from("t\tmean_true");
    for (name, _) in &ran {
        let name = column_name(name);
        out.push_str(&format!("\t{name}_mean\t{name}_lo\t{name}_hi"));
    }
    out.push('\n');
    for (j, &t) in report.grid.iter().enumerate() {
        out.push_str(&crate::format_sig(t, TSV_DIGITS));
        out.push('\t');
        out.push_str(&crate::format_sig(report.population_mean[j], TSV_DIGITS));
        for (_, s) in &ran {
            let (m, sd) = (s.mc_mean_mu[j], s.mc_sd_mu[j]);
            for v in [m, m - 2.0 * sd, m + 2.0 * sd] {
                out.push('\t');
                out.push_str(&crate::format_sig(v, TSV_DIGITS));
            }
        }
        out.push('\n');
    }
    out
}
