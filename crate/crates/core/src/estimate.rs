//! Reweighting estimators for the mean trajectory and their design
//! covariance.
//!
//! With inclusion probabilities `π_k` and sampled curves `Y_k`, the mean
//! estimator at time `t` is
//!
//! ```text
//! μ̂(t) = (1/N) Σ_{k ∈ s} Y_k(t) / π_k
//! ```
//!
//! Its design covariance and the unbiased estimator of that covariance are
//! double sums over the indicator covariances `Δ_kl = π_kl − π_k π_l`:
//!
//! ```text
//! γ(s,t)  = (1/N²) Σ_k Σ_l Δ_kl        (Y_k(s)/π_k)(Y_l(t)/π_l)   over U
//! γ̂(s,t)  = (1/N²) Σ_k Σ_l Δ_kl/π_kl   (Y_k(s)/π_k)(Y_l(t)/π_l)   over s
//! ```
//!
//! Both designs here are unions of independent SRSWOR blocks, where `Δ_kl`
//! takes one value on the diagonal and one off it. The production routines
//! (`true_covariance`, `ht_covariance_estimate`) exploit that: per block
//! they reduce the double sum to the two accumulated moments
//! `Q(t) = Σ z_k(t)` and `P(s,t) = Σ z_k(s) z_k(t)` of the weighted curves
//! `z_k = Y_k/π_k`, which costs `O(n·d)` for the variance function instead
//! of `O(n²·d)`. The literal double sums are kept as `*_double_sum`
//! references, and the textbook per-stratum forms built from centered
//! covariances as `stratified_*`; the three routes agree to floating-point
//! accuracy and the tests hold them to that.
//!
//! Unit-level sums run in ascending unit order through compensated
//! accumulators, so results are reproducible and do not depend on thread
//! count or summation tricks elsewhere.

use ndarray::Array2;

use crate::design::{Sample, SamplingDesign};
use crate::error::{Error, Result};
use crate::population::{interpolate, trapezoid_integral, CurvePopulation, TimeGrid};
use crate::util::KahanSum;

/// Design covariance of the mean estimator, computed from the full
/// population (a planning/diagnostic quantity, not available from a
/// sample).
#[derive(Debug, Clone)]
pub struct TrueVariance {
    grid: TimeGrid,
    diag: Vec<f64>,
    full: Option<Array2<f64>>,
}

/// Estimated design covariance computed from a sample.
#[derive(Debug, Clone)]
pub struct CovarianceEstimate {
    grid: TimeGrid,
    diag: Vec<f64>,
    full: Option<Array2<f64>>,
    negative_diag: usize,
}

impl TrueVariance {
    /// Pointwise variance `γ(t_j, t_j)` on the grid.
    pub fn variance_diag(&self) -> &[f64] {
        &self.diag
    }

    /// Full covariance surface, when it was requested.
    pub fn covariance(&self) -> Option<&Array2<f64>> {
        self.full.as_ref()
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// Trapezoid integral of the pointwise variance over the window — the
    /// scalar summary that allocation optimizes.
    pub fn integrated_variance(&self) -> f64 {
        trapezoid_integral(&self.diag, &self.grid).expect("diag matches grid")
    }
}

impl CovarianceEstimate {
    /// Pointwise variance estimate `γ̂(t_j, t_j)`, stored as computed —
    /// individual entries can be negative (the estimator is unbiased, not
    /// nonnegative). Band construction clamps, this accessor does not.
    pub fn variance_diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn covariance(&self) -> Option<&Array2<f64>> {
        self.full.as_ref()
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// How many grid points carry a negative variance estimate.
    pub fn negative_diag_count(&self) -> usize {
        self.negative_diag
    }

    pub fn integrated_variance(&self) -> f64 {
        trapezoid_integral(&self.diag, &self.grid).expect("diag matches grid")
    }

    /// Test hook: assemble an estimate with a chosen diagonal (e.g. to
    /// exercise the negative-value clamp downstream).
    #[cfg(test)]
    pub(crate) fn from_raw_diag(grid: TimeGrid, diag: Vec<f64>) -> Self {
        let negative_diag = diag.iter().filter(|&&v| v < 0.0).count();
        CovarianceEstimate {
            grid,
            diag,
            full: None,
            negative_diag,
        }
    }
}

/// Mean estimate with (optionally) its estimated variance function,
/// carrying the sample that produced it.
#[derive(Debug, Clone)]
pub struct FunctionalEstimate {
    grid: TimeGrid,
    mean: Vec<f64>,
    variance: Option<CovarianceEstimate>,
    sample: Sample,
}

impl FunctionalEstimate {
    /// Estimates the mean trajectory and its variance function from a
    /// sample. Fails when the design cannot support variance estimation
    /// (some block draws fewer than two units).
    pub fn compute(
        pop: &CurvePopulation,
        sample: &Sample,
        diagonal_only: bool,
    ) -> Result<Self> {
        let mean = ht_mean(pop, sample)?;
        let variance = ht_covariance_estimate(pop, sample, diagonal_only)?;
        Ok(FunctionalEstimate {
            grid: pop.grid().clone(),
            mean,
            variance: Some(variance),
            sample: sample.clone(),
        })
    }

    /// Mean-only variant for designs where the variance is not estimable.
    pub fn mean_only(pop: &CurvePopulation, sample: &Sample) -> Result<Self> {
        Ok(FunctionalEstimate {
            grid: pop.grid().clone(),
            mean: ht_mean(pop, sample)?,
            variance: None,
            sample: sample.clone(),
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// Estimated mean trajectory on the grid.
    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Estimated mean at an arbitrary time inside the window (linear
    /// interpolation, consistent with the curve model).
    pub fn mean_at(&self, t: f64) -> Result<f64> {
        interpolate(&self.mean, &self.grid, t)
    }

    /// Estimated variance function, if it was computed.
    pub fn variance(&self) -> Option<&CovarianceEstimate> {
        self.variance.as_ref()
    }

    pub fn sample(&self) -> &Sample {
        &self.sample
    }

    /// Test hook mirroring [`CovarianceEstimate::from_raw_diag`].
    #[cfg(test)]
    pub(crate) fn from_raw_parts(
        grid: TimeGrid,
        mean: Vec<f64>,
        variance: Option<CovarianceEstimate>,
        sample: Sample,
    ) -> Self {
        FunctionalEstimate {
            grid,
            mean,
            variance,
            sample,
        }
    }
}

fn check_pop(pop: &CurvePopulation, design: &SamplingDesign) -> Result<()> {
    if pop.size() != design.population_size() {
        return Err(Error::PopulationMismatch {
            design: design.population_size(),
            population: pop.size(),
        });
    }
    Ok(())
}

/// Mean-trajectory estimate on the population grid.
pub fn ht_mean(pop: &CurvePopulation, sample: &Sample) -> Result<Vec<f64>> {
    let design = sample.design();
    check_pop(pop, design)?;
    let d = pop.grid().len();
    let n = pop.size() as f64;
    let mut acc = vec![KahanSum::default(); d];
    for &k in sample.indices() {
        let w = 1.0 / design.pi1(k)?;
        let row = pop.curve(k)?;
        for (a, &y) in acc.iter_mut().zip(row) {
            a.add(y * w);
        }
    }
    // Divide (not multiply by a reciprocal) so a census reproduces the
    // population mean bit for bit.
    Ok(acc.into_iter().map(|a| a.value() / n).collect())
}

/// Mean-trajectory estimate at a single time point, interpolating each
/// sampled curve before reweighting (which commutes with the linear
/// estimator, so this agrees with interpolating [`ht_mean`]).
pub fn ht_mean_at(pop: &CurvePopulation, sample: &Sample, t: f64) -> Result<f64> {
    let design = sample.design();
    check_pop(pop, design)?;
    let mut acc = KahanSum::default();
    for &k in sample.indices() {
        let y = interpolate(pop.curve(k)?, pop.grid(), t)?;
        acc.add(y / design.pi1(k)?);
    }
    Ok(acc.value() / pop.size() as f64)
}

/// Per-block coefficients of the reduced double sum: the block contributes
/// `diag_w · P + offdiag_w · (Q ⊗ Q − P)` to `N² γ`.
struct BlockWeights {
    diag_w: f64,
    offdiag_w: f64,
}

impl BlockWeights {
    /// Weights for the population-level covariance: `Δ_kk = π(1−π)` on the
    /// diagonal and `Δ_kl = π₂ − π²` off it.
    fn truth(big_n: usize, n: usize) -> Self {
        let pi = n as f64 / big_n as f64;
        let pi2 = if big_n < 2 {
            // A single-unit block has no distinct pairs; the off-diagonal
            // weight multiplies an identically zero moment, keep it finite.
            0.0
        } else {
            (n * (n - 1)) as f64 / (big_n * (big_n - 1)) as f64
        };
        BlockWeights {
            diag_w: pi * (1.0 - pi),
            offdiag_w: pi2 - pi * pi,
        }
    }

    /// Weights for the sample-level estimator: `Δ_kk/π_k = 1 − π` on the
    /// diagonal and `Δ_kl/π_kl = 1 − π²/π₂` off it. Needs `n ≥ 2`.
    fn estimator(big_n: usize, n: usize) -> Self {
        debug_assert!(n >= 2);
        let pi = n as f64 / big_n as f64;
        let pi2 = (n * (n - 1)) as f64 / (big_n * (big_n - 1)) as f64;
        BlockWeights {
            diag_w: 1.0 - pi,
            offdiag_w: 1.0 - pi * pi / pi2,
        }
    }
}

/// Accumulates `Q(t) = Σ z_k(t)` and `P = Σ z_k z_kᵀ` over the given units
/// (ascending), then adds the block's weighted contribution into `diag`
/// and `full`.
fn accumulate_block(
    pop: &CurvePopulation,
    units: impl Iterator<Item = usize>,
    weight_inv_pi: f64,
    w: &BlockWeights,
    diag: &mut [KahanSum],
    full: Option<&mut Vec<KahanSum>>,
) -> Result<()> {
    let d = pop.grid().len();
    let mut q = vec![KahanSum::default(); d];
    let mut p_diag = vec![KahanSum::default(); d];
    let mut p_full = full.as_ref().map(|_| vec![KahanSum::default(); d * (d + 1) / 2]);
    let mut z = vec![0.0f64; d];
    for k in units {
        let row = pop.curve(k)?;
        for (zj, &y) in z.iter_mut().zip(row) {
            *zj = y * weight_inv_pi;
        }
        for j in 0..d {
            q[j].add(z[j]);
            p_diag[j].add(z[j] * z[j]);
        }
        if let Some(p) = p_full.as_mut() {
            let mut idx = 0;
            for i in 0..d {
                for j in i..d {
                    p[idx].add(z[i] * z[j]);
                    idx += 1;
                }
            }
        }
    }
    let q: Vec<f64> = q.into_iter().map(KahanSum::value).collect();
    let p_diag: Vec<f64> = p_diag.into_iter().map(KahanSum::value).collect();
    for j in 0..d {
        diag[j].add(w.diag_w * p_diag[j] + w.offdiag_w * (q[j] * q[j] - p_diag[j]));
    }
    if let (Some(full), Some(p)) = (full, p_full) {
        let mut idx = 0;
        for i in 0..d {
            for j in i..d {
                let pij = p[idx].value();
                full[idx].add(w.diag_w * pij + w.offdiag_w * (q[i] * q[j] - pij));
                idx += 1;
            }
        }
    }
    Ok(())
}

/// Expands packed upper-triangle sums into a symmetric matrix, scaling by
/// `scale`.
fn unpack_symmetric(packed: &[KahanSum], d: usize, scale: f64) -> Array2<f64> {
    let mut m = Array2::zeros((d, d));
    let mut idx = 0;
    for i in 0..d {
        for j in i..d {
            let v = packed[idx].value() * scale;
            m[[i, j]] = v;
            m[[j, i]] = v;
            idx += 1;
        }
    }
    m
}

/// Design covariance of the mean estimator under `design`, from the full
/// population. `diagonal_only` skips the `O(d²)` surface and fills just
/// the pointwise variance.
pub fn true_covariance(
    pop: &CurvePopulation,
    design: &SamplingDesign,
    diagonal_only: bool,
) -> Result<TrueVariance> {
    check_pop(pop, design)?;
    let d = pop.grid().len();
    let scale = 1.0 / (pop.size() as f64 * pop.size() as f64);
    let mut diag = vec![KahanSum::default(); d];
    let mut full = (!diagonal_only).then(|| vec![KahanSum::default(); d * (d + 1) / 2]);
    for block in design.blocks() {
        let w = BlockWeights::truth(block.population, block.draws);
        let inv_pi = block.population as f64 / block.draws as f64;
        accumulate_block(pop, block.units(), inv_pi, &w, &mut diag, full.as_mut())?;
    }
    Ok(TrueVariance {
        grid: pop.grid().clone(),
        diag: diag.into_iter().map(|a| a.value() * scale).collect(),
        full: full.map(|p| unpack_symmetric(&p, d, scale)),
    })
}

/// Unbiased estimator of the design covariance from a sample. Stores
/// negative pointwise values as computed and counts them. Fails with
/// [`Error::VarianceInestimable`] when some block draws fewer than two
/// units (its joint inclusion probabilities vanish).
pub fn ht_covariance_estimate(
    pop: &CurvePopulation,
    sample: &Sample,
    diagonal_only: bool,
) -> Result<CovarianceEstimate> {
    let design = sample.design();
    check_pop(pop, design)?;
    let d = pop.grid().len();
    let scale = 1.0 / (pop.size() as f64 * pop.size() as f64);
    let mut diag = vec![KahanSum::default(); d];
    let mut full = (!diagonal_only).then(|| vec![KahanSum::default(); d * (d + 1) / 2]);
    let per_block = sampled_by_block(design, sample);
    for (block, sampled) in design.blocks().iter().zip(&per_block) {
        if block.draws < 2 {
            return Err(Error::VarianceInestimable {
                stratum: block.stratum,
                sample_size: block.draws,
            });
        }
        let w = BlockWeights::estimator(block.population, block.draws);
        let inv_pi = block.population as f64 / block.draws as f64;
        accumulate_block(
            pop,
            sampled.iter().copied(),
            inv_pi,
            &w,
            &mut diag,
            full.as_mut(),
        )?;
    }
    let diag: Vec<f64> = diag.into_iter().map(|a| a.value() * scale).collect();
    let negative_diag = diag.iter().filter(|&&v| v < 0.0).count();
    Ok(CovarianceEstimate {
        grid: pop.grid().clone(),
        diag,
        full: full.map(|p| unpack_symmetric(&p, d, scale)),
        negative_diag,
    })
}

/// Splits the sample's indices by design block, preserving ascending order.
fn sampled_by_block(design: &SamplingDesign, sample: &Sample) -> Vec<Vec<usize>> {
    let blocks = design.blocks();
    let mut out: Vec<Vec<usize>> = blocks.iter().map(|b| Vec::with_capacity(b.draws)).collect();
    if blocks.len() == 1 {
        out[0].extend_from_slice(sample.indices());
    } else {
        for &k in sample.indices() {
            let h = design.stratum_of(k).expect("sample indices are in range");
            out[h - 1].push(k);
        }
    }
    out
}

/// Literal population-level double sum over all unit pairs — the reference
/// implementation the fast route is checked against. `O(N²·d)` diagonal,
/// `O(N²·d²)` full.
pub fn true_covariance_double_sum(
    pop: &CurvePopulation,
    design: &SamplingDesign,
    diagonal_only: bool,
) -> Result<TrueVariance> {
    check_pop(pop, design)?;
    let n = pop.size();
    let weight = |k: usize, l: usize| -> Result<f64> { design.delta(k, l) };
    let (diag, full) = double_sum(pop, design, (0..n).collect(), weight, diagonal_only)?;
    Ok(TrueVariance {
        grid: pop.grid().clone(),
        diag,
        full,
    })
}

/// Literal sample-level double sum over all sampled pairs — the reference
/// implementation for the estimator.
pub fn ht_covariance_double_sum(
    pop: &CurvePopulation,
    sample: &Sample,
    diagonal_only: bool,
) -> Result<CovarianceEstimate> {
    let design = sample.design();
    check_pop(pop, design)?;
    for block in design.blocks() {
        if block.draws < 2 {
            return Err(Error::VarianceInestimable {
                stratum: block.stratum,
                sample_size: block.draws,
            });
        }
    }
    let weight = |k: usize, l: usize| -> Result<f64> {
        if k == l {
            Ok(1.0 - design.pi1(k)?)
        } else {
            Ok(design.delta(k, l)? / design.pi2(k, l)?)
        }
    };
    let (diag, full) = double_sum(
        pop,
        design,
        sample.indices().to_vec(),
        weight,
        diagonal_only,
    )?;
    let negative_diag = diag.iter().filter(|&&v| v < 0.0).count();
    Ok(CovarianceEstimate {
        grid: pop.grid().clone(),
        diag,
        full,
        negative_diag,
    })
}

fn double_sum(
    pop: &CurvePopulation,
    design: &SamplingDesign,
    units: Vec<usize>,
    weight: impl Fn(usize, usize) -> Result<f64>,
    diagonal_only: bool,
) -> Result<(Vec<f64>, Option<Array2<f64>>)> {
    let d = pop.grid().len();
    let scale = 1.0 / (pop.size() as f64 * pop.size() as f64);
    // Weighted curves once, to keep the pair loop simple.
    let z: Vec<Vec<f64>> = units
        .iter()
        .map(|&k| -> Result<Vec<f64>> {
            let w = 1.0 / design.pi1(k)?;
            Ok(pop.curve(k)?.iter().map(|&y| y * w).collect())
        })
        .collect::<Result<_>>()?;
    let mut diag = vec![0.0f64; d];
    let mut full = (!diagonal_only).then(|| Array2::<f64>::zeros((d, d)));
    for (a, &k) in units.iter().enumerate() {
        for (b, &l) in units.iter().enumerate() {
            let w = weight(k, l)?;
            if w == 0.0 {
                continue;
            }
            for j in 0..d {
                diag[j] += w * z[a][j] * z[b][j];
            }
            if let Some(m) = full.as_mut() {
                for i in 0..d {
                    for j in 0..d {
                        m[[i, j]] += w * z[a][i] * z[b][j];
                    }
                }
            }
        }
    }
    for v in diag.iter_mut() {
        *v *= scale;
    }
    if let Some(m) = full.as_mut() {
        m.mapv_inplace(|v| v * scale);
    }
    Ok((diag, full))
}

/// Per-stratum unit indices of a stratified design, or an error for plain
/// SRSWOR.
fn stratified_blocks(design: &SamplingDesign) -> Result<Vec<crate::design::Block<'_>>> {
    let blocks = design.blocks();
    if blocks.len() == 1 && blocks[0].members.is_none() {
        return Err(Error::invalid(
            "stratified covariance forms need a stratified design; \
             wrap SRSWOR as a single all-units stratum to compare",
        ));
    }
    Ok(blocks)
}

/// Population covariance of the stratified estimator in its textbook form:
/// a weighted sum of per-stratum centered covariance functions,
/// `(1/N²) Σ_h N_h (N_h − n_h)/n_h · γ̃_h(s,t)` with
/// `γ̃_h(s,t) = Σ_{k∈U_h} (Y_k(s) − μ_h(s))(Y_k(t) − μ_h(t)) / (N_h − 1)`.
/// Requires every stratum to hold at least two units.
pub fn stratified_true_covariance(
    pop: &CurvePopulation,
    design: &SamplingDesign,
    diagonal_only: bool,
) -> Result<TrueVariance> {
    check_pop(pop, design)?;
    let blocks = stratified_blocks(design)?;
    let d = pop.grid().len();
    let scale = 1.0 / (pop.size() as f64 * pop.size() as f64);
    let mut diag = vec![KahanSum::default(); d];
    let mut full = (!diagonal_only).then(|| vec![KahanSum::default(); d * (d + 1) / 2]);
    for block in &blocks {
        if block.population < 2 {
            return Err(Error::DegenerateStratum {
                stratum: block.stratum,
                size: block.population,
                min: 2,
            });
        }
        let coef = (block.population * (block.population - block.draws)) as f64
            / block.draws as f64;
        centered_moments(
            pop,
            block.units(),
            block.population,
            coef / (block.population - 1) as f64,
            &mut diag,
            full.as_mut(),
        )?;
    }
    Ok(TrueVariance {
        grid: pop.grid().clone(),
        diag: diag.into_iter().map(|a| a.value() * scale).collect(),
        full: full.map(|p| unpack_symmetric(&p, d, scale)),
    })
}

/// Sample analogue of [`stratified_true_covariance`]: plugs the
/// within-sample stratum covariance `s̃_h` (divisor `n_h − 1`) into the same
/// weighted sum. Unbiased under stratified SRSWOR; requires `n_h ≥ 2`.
pub fn stratified_variance_estimate(
    pop: &CurvePopulation,
    sample: &Sample,
    diagonal_only: bool,
) -> Result<CovarianceEstimate> {
    let design = sample.design();
    check_pop(pop, design)?;
    let blocks = stratified_blocks(design)?;
    let d = pop.grid().len();
    let scale = 1.0 / (pop.size() as f64 * pop.size() as f64);
    let mut diag = vec![KahanSum::default(); d];
    let mut full = (!diagonal_only).then(|| vec![KahanSum::default(); d * (d + 1) / 2]);
    let per_block = sampled_by_block(design, sample);
    for (block, sampled) in blocks.iter().zip(&per_block) {
        if block.draws < 2 {
            return Err(Error::VarianceInestimable {
                stratum: block.stratum,
                sample_size: block.draws,
            });
        }
        let coef = (block.population * (block.population - block.draws)) as f64
            / block.draws as f64;
        centered_moments(
            pop,
            sampled.iter().copied(),
            sampled.len(),
            coef / (block.draws - 1) as f64,
            &mut diag,
            full.as_mut(),
        )?;
    }
    let diag: Vec<f64> = diag.into_iter().map(|a| a.value() * scale).collect();
    let negative_diag = diag.iter().filter(|&&v| v < 0.0).count();
    Ok(CovarianceEstimate {
        grid: pop.grid().clone(),
        diag,
        full: full.map(|p| unpack_symmetric(&p, d, scale)),
        negative_diag,
    })
}

/// Adds `coef · Σ_k (Y_k − ȳ)(s)(Y_k − ȳ)(t)` over the given `count` units
/// into the accumulators (two passes: mean, then centered products).
fn centered_moments(
    pop: &CurvePopulation,
    units: impl Iterator<Item = usize> + Clone,
    count: usize,
    coef: f64,
    diag: &mut [KahanSum],
    full: Option<&mut Vec<KahanSum>>,
) -> Result<()> {
    let d = pop.grid().len();
    let mut mean = vec![KahanSum::default(); d];
    for k in units.clone() {
        for (m, &y) in mean.iter_mut().zip(pop.curve(k)?) {
            m.add(y);
        }
    }
    let mean: Vec<f64> = mean
        .into_iter()
        .map(|a| a.value() / count as f64)
        .collect();
    let mut cdiag = vec![KahanSum::default(); d];
    let mut cfull = full.as_ref().map(|_| vec![KahanSum::default(); d * (d + 1) / 2]);
    let mut dev = vec![0.0f64; d];
    for k in units {
        let row = pop.curve(k)?;
        for j in 0..d {
            dev[j] = row[j] - mean[j];
        }
        for j in 0..d {
            cdiag[j].add(dev[j] * dev[j]);
        }
        if let Some(p) = cfull.as_mut() {
            let mut idx = 0;
            for i in 0..d {
                for j in i..d {
                    p[idx].add(dev[i] * dev[j]);
                    idx += 1;
                }
            }
        }
    }
    for j in 0..d {
        diag[j].add(coef * cdiag[j].value());
    }
    if let (Some(full), Some(p)) = (full, cfull) {
        for (f, c) in full.iter_mut().zip(p) {
            f.add(coef * c.value());
        }
    }
    Ok(())
}
