//! Confidence bands around the estimated mean trajectory.
//!
//! Two kinds are offered, both of the form `μ̂(t) ± scale · γ̂(t,t)^{1/2}`:
//!
//! * **pointwise**: `scale = z_{1−α/2}`, the usual normal quantile — each
//!   time point is covered with probability `1 − α`, the whole curve is
//!   not;
//! * **global**: `scale = {2 log(2/α)}^{1/2}`, from the Gaussian
//!   supremum tail bound `P(sup |X(t)|/σ(t) > λ) ≤ 2 exp(−λ²/2)` — the
//!   band contains the entire mean trajectory with probability at least
//!   `1 − α`, at the price of a wider constant (2.716 vs 1.960 at 95%,
//!   3.255 vs 2.576 at 99%).
//!
//! Negative pointwise variance estimates (possible for an unbiased
//! estimator, if only as rounding dust for the designs here) are clamped
//! to zero width and counted on the band.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::FunctionalEstimate;
use crate::population::TimeGrid;

/// Which coverage guarantee a band provides.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandKind {
    /// Per-time-point nominal level.
    Pointwise,
    /// Simultaneous (whole-window) nominal level.
    Global,
}

impl std::fmt::Display for BandKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BandKind::Pointwise => "pointwise",
            BandKind::Global => "global",
        })
    }
}

/// A symmetric band `center ± half_width` on the population grid.
#[derive(Debug, Clone)]
pub struct ConfidenceBand {
    grid: TimeGrid,
    center: Vec<f64>,
    half_width: Vec<f64>,
    alpha: f64,
    kind: BandKind,
    clamped: usize,
}

impl ConfidenceBand {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn half_width(&self) -> &[f64] {
        &self.half_width
    }

    pub fn lower(&self) -> Vec<f64> {
        self.center
            .iter()
            .zip(&self.half_width)
            .map(|(c, h)| c - h)
            .collect()
    }

    pub fn upper(&self) -> Vec<f64> {
        self.center
            .iter()
            .zip(&self.half_width)
            .map(|(c, h)| c + h)
            .collect()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn kind(&self) -> BandKind {
        self.kind
    }

    /// Grid points whose variance estimate was negative and clamped to
    /// zero width.
    pub fn clamped_count(&self) -> usize {
        self.clamped
    }

    /// Whether the band contains `truth` at every grid point (boundary
    /// inclusive, so a zero-width band covers an exactly-equal truth).
    pub fn covers(&self, truth: &[f64]) -> Result<bool> {
        if truth.len() != self.center.len() {
            return Err(Error::LengthMismatch {
                expected: self.center.len(),
                got: truth.len(),
            });
        }
        Ok(all_covered(&self.center, &self.half_width, truth))
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha.is_finite() && 0.0 < alpha && alpha < 1.0) {
        return Err(Error::invalid(format!(
            "confidence level alpha must lie strictly between 0 and 1, got {alpha}"
        )));
    }
    Ok(())
}

/// Simultaneous-band multiplier `{2 log(2/α)}^{1/2}`.
pub fn global_scale(alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok((2.0 * (2.0 / alpha).ln()).sqrt())
}

/// Pointwise multiplier: the standard normal quantile `z_{1−α/2}`.
pub fn pointwise_scale(alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(normal_quantile(1.0 - alpha / 2.0))
}

/// Builds a band around the estimate's mean using its estimated variance
/// function. Fails if the estimate was computed without variance.
pub fn build_band(
    estimate: &FunctionalEstimate,
    alpha: f64,
    kind: BandKind,
) -> Result<ConfidenceBand> {
    let variance = estimate.variance().ok_or(Error::MissingVariance)?;
    let scale = match kind {
        BandKind::Global => global_scale(alpha)?,
        BandKind::Pointwise => pointwise_scale(alpha)?,
    };
    let (half_width, clamped) = half_widths(scale, variance.variance_diag());
    Ok(ConfidenceBand {
        grid: estimate.grid().clone(),
        center: estimate.mean().to_vec(),
        half_width,
        alpha,
        kind,
        clamped,
    })
}

/// `scale · sqrt(max(v, 0))` per point, counting the clamped entries.
pub(crate) fn half_widths(scale: f64, variance_diag: &[f64]) -> (Vec<f64>, usize) {
    let mut clamped = 0usize;
    let hw = variance_diag
        .iter()
        .map(|&v| {
            if v < 0.0 {
                clamped += 1;
                0.0
            } else {
                scale * v.sqrt()
            }
        })
        .collect();
    (hw, clamped)
}

/// Boundary-inclusive pointwise coverage check at every grid point.
pub(crate) fn all_covered(center: &[f64], half_width: &[f64], truth: &[f64]) -> bool {
    center
        .iter()
        .zip(half_width)
        .zip(truth)
        .all(|((c, h), t)| (c - t).abs() <= *h)
}

/// Fraction of grid points at which the band covers the truth.
pub(crate) fn covered_fraction(center: &[f64], half_width: &[f64], truth: &[f64]) -> f64 {
    let hits = center
        .iter()
        .zip(half_width)
        .zip(truth)
        .filter(|((c, h), t)| (*c - *t).abs() <= **h)
        .count();
    hits as f64 / center.len() as f64
}

/// Standard normal quantile (inverse CDF) via Peter Acklam's rational
/// approximation: relative error below 1.15e-9 across (0, 1), which is
/// orders tighter than anything band construction needs. Written out here
/// so the value is a documented function of the coefficients below, not
/// of a library version.
fn normal_quantile(p: f64) -> f64 {
    debug_assert!(0.0 < p && p < 1.0);
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    let tail = |q: f64| -> f64 {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        tail(q)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -tail(q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::SamplingDesign;
    use crate::estimate::{CovarianceEstimate, FunctionalEstimate};
    use crate::population::CurvePopulation;
    use ndarray::array;

    #[test]
    fn global_scale_matches_published_constants() {
        // √(2 log 40) and √(2 log 200).
        assert!((global_scale(0.05).unwrap() - 2.716203031481239).abs() < 1e-12);
        assert!((global_scale(0.01).unwrap() - 3.2552472614374586).abs() < 1e-12);
        assert!((global_scale(0.10).unwrap() - 2.4477468306808166).abs() < 1e-12);
        // The headline comparison: 2.716 vs 1.960, 3.255 vs 2.576.
        assert!((global_scale(0.05).unwrap() - 2.716).abs() < 5e-4);
        assert!((global_scale(0.01).unwrap() - 3.255).abs() < 5e-4);
    }

    #[test]
    fn pointwise_scale_matches_normal_quantiles() {
        // Reference values from an independent inverse-CDF implementation.
        for (alpha, z) in [
            (0.05, 1.9599639845400536),
            (0.01, 2.5758293035489),
            (0.10, 1.6448536269514715),
            (0.002, 3.090232306167813),
        ] {
            let got = pointwise_scale(alpha).unwrap();
            assert!(
                ((got - z) / z).abs() < 1e-8,
                "alpha {alpha}: {got} vs {z}"
            );
        }
    }

    #[test]
    fn quantile_covers_both_tails_and_the_center() {
        assert_eq!(normal_quantile(0.5), 0.0);
        for (p, z) in [
            (0.8, 0.8416212335729144),
            (0.55, 0.12566134685507413),
            (0.02, -2.0537489106318225),
            (0.0001, -3.71901648545568),
        ] {
            let got = normal_quantile(p);
            assert!(
                (got - z).abs() < 1e-8 * z.abs().max(1.0),
                "p {p}: {got} vs {z}"
            );
        }
        // Symmetry.
        for p in [0.6, 0.9, 0.999] {
            assert!((normal_quantile(p) + normal_quantile(1.0 - p)).abs() < 1e-12);
        }
    }

    #[test]
    fn scales_reject_bad_alpha_and_order_sensibly() {
        for bad in [0.0, 1.0, -0.2, 1.5, f64::NAN] {
            assert!(global_scale(bad).is_err());
            assert!(pointwise_scale(bad).is_err());
        }
        // Simultaneous coverage costs width at any level.
        for alpha in [0.5, 0.2, 0.1, 0.05, 0.01, 0.001] {
            assert!(global_scale(alpha).unwrap() > pointwise_scale(alpha).unwrap());
        }
        // Both scales grow as alpha shrinks.
        assert!(global_scale(0.01).unwrap() > global_scale(0.05).unwrap());
        assert!(pointwise_scale(0.01).unwrap() > pointwise_scale(0.05).unwrap());
    }

    fn toy_estimate() -> (CurvePopulation, FunctionalEstimate) {
        let pop = CurvePopulation::new(
            TimeGrid::new(vec![0.0, 1.0]).unwrap(),
            array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0], [7.0, 8.0]],
        )
        .unwrap();
        let d = SamplingDesign::srswor(4, 2).unwrap();
        let s = crate::design::Sample::from_indices(&d, vec![0, 3]).unwrap();
        let est = FunctionalEstimate::compute(&pop, &s, true).unwrap();
        (pop, est)
    }

    #[test]
    fn band_widths_scale_the_estimated_sd() {
        let (_, est) = toy_estimate();
        // γ̂(t,t) = 4.5 at both points for this sample.
        let band = build_band(&est, 0.05, BandKind::Global).unwrap();
        let expect = 2.716203031481239 * 4.5f64.sqrt();
        for h in band.half_width() {
            assert!((h - expect).abs() < 1e-12);
        }
        assert_eq!(band.kind(), BandKind::Global);
        assert_eq!(band.alpha(), 0.05);
        assert_eq!(band.clamped_count(), 0);
        let pw = build_band(&est, 0.05, BandKind::Pointwise).unwrap();
        assert!(pw.half_width()[0] < band.half_width()[0]);
        // lower/upper bracket the center symmetrically.
        let (lo, hi) = (band.lower(), band.upper());
        for j in 0..2 {
            assert!((hi[j] - band.center()[j] - (band.center()[j] - lo[j])).abs() < 1e-12);
        }
    }

    #[test]
    fn census_band_has_zero_width_and_covers_truth() {
        let pop = CurvePopulation::new(
            TimeGrid::new(vec![0.0, 1.0, 2.0]).unwrap(),
            array![[1.0, 2.0, 3.0], [5.0, 1.0, 0.0], [2.0, 2.0, 2.0]],
        )
        .unwrap();
        let census = SamplingDesign::census(3).unwrap();
        let est = FunctionalEstimate::compute(&pop, &census.draw(0), true).unwrap();
        let band = build_band(&est, 0.01, BandKind::Global).unwrap();
        for h in band.half_width() {
            assert!(h.abs() < 1e-9);
        }
        assert!(band.covers(&pop.mean_curve()).unwrap());
    }

    #[test]
    fn covers_is_pointwise_and_boundary_inclusive() {
        let (pop, est) = toy_estimate();
        let band = build_band(&est, 0.05, BandKind::Global).unwrap();
        assert!(band.covers(band.center()).unwrap());
        assert!(band.covers(&pop.mean_curve()).unwrap());
        // One point pushed just outside breaks coverage.
        let mut off = band.center().to_vec();
        off[1] += band.half_width()[1] + 1e-9;
        assert!(!band.covers(&off).unwrap());
        // Exactly on the boundary counts as covered.
        let mut edge = band.center().to_vec();
        edge[0] += band.half_width()[0];
        assert!(band.covers(&edge).unwrap());
        // Wrong length is rejected.
        assert!(band.covers(&[0.0]).is_err());
        // A stricter level gives a wider band, so coverage is monotone.
        let wide = build_band(&est, 0.01, BandKind::Global).unwrap();
        assert!(wide.covers(&off).unwrap());
    }

    #[test]
    fn negative_variances_clamp_to_zero_width() {
        let grid = TimeGrid::new(vec![0.0, 1.0, 2.0]).unwrap();
        let variance =
            CovarianceEstimate::from_raw_diag(grid.clone(), vec![-1e-3, 4.0, -0.5]);
        let sample = SamplingDesign::census(2).unwrap().draw(0);
        let est = FunctionalEstimate::from_raw_parts(
            grid,
            vec![1.0, 1.0, 1.0],
            Some(variance),
            sample,
        );
        let band = build_band(&est, 0.05, BandKind::Pointwise).unwrap();
        assert_eq!(band.clamped_count(), 2);
        assert_eq!(band.half_width()[0], 0.0);
        assert!(band.half_width()[1] > 0.0);
        assert_eq!(band.half_width()[2], 0.0);
        // Zero width still covers an exactly equal truth.
        assert!(band.covers(&[1.0, 1.0, 1.0]).unwrap());
        assert!(!band.covers(&[1.0 + 1e-12, 1.0, 1.0]).unwrap());
    }

    #[test]
    fn mean_only_estimates_cannot_band() {
        let (pop, _) = toy_estimate();
        let d = SamplingDesign::srswor(4, 2).unwrap();
        let est = FunctionalEstimate::mean_only(&pop, &d.draw(1)).unwrap();
        assert!(matches!(
            build_band(&est, 0.05, BandKind::Global),
            Err(Error::MissingVariance)
        ));
    }

    #[test]
    fn covered_fraction_counts_points() {
        let center = [0.0, 0.0, 0.0, 0.0];
        let hw = [1.0, 1.0, 1.0, 1.0];
        assert_eq!(covered_fraction(&center, &hw, &[0.0, 0.5, -0.5, 0.9]), 1.0);
        assert_eq!(covered_fraction(&center, &hw, &[2.0, 0.5, -3.0, 0.9]), 0.5);
        assert_eq!(covered_fraction(&center, &hw, &[2.0, 2.0, 2.0, 2.0]), 0.0);
    }

    #[test]
    fn band_kind_serializes_lowercase() {
        assert_eq!(serde_json::to_string(&BandKind::Global).unwrap(), "\"global\"");
        assert_eq!(
            serde_json::from_str::<BandKind>("\"pointwise\"").unwrap(),
            BandKind::Pointwise
        );
    }
}
