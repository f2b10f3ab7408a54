//! Finite populations of discretized curves.
//!
//! The population is the frame the survey draws from: `N` units, each a
//! trajectory recorded at the same `d` time points. Curves are carried as a
//! dense `N × d` matrix; between grid points they are understood as
//! piecewise linear, which is what [`interpolate`] and the trapezoid
//! quadrature below implement.

mod csv;
mod synthetic;

pub use synthetic::SyntheticSpec;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::util::{kahan_sum, KahanSum};

/// Strictly increasing, finite observation times shared by every curve.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    points: Vec<f64>,
}

impl TimeGrid {
    /// Builds a grid from explicit time points. At least two points are
    /// required, all finite and strictly increasing.
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::GridTooShort {
                min: 2,
                got: points.len(),
            });
        }
        for i in 0..points.len() {
            let ok = points[i].is_finite() && (i == 0 || points[i - 1] < points[i]);
            if !ok {
                return Err(Error::GridNotIncreasing { index: i });
            }
        }
        Ok(TimeGrid { points })
    }

    /// Evenly spaced grid of `len` points covering `[start, end]`.
    pub fn uniform(start: f64, end: f64, len: usize) -> Result<Self> {
        if len < 2 {
            return Err(Error::GridTooShort { min: 2, got: len });
        }
        if !(start.is_finite() && end.is_finite() && start < end) {
            return Err(Error::invalid(format!(
                "uniform grid needs finite start < end, got [{start}, {end}]"
            )));
        }
        let step = (end - start) / (len - 1) as f64;
        let mut points: Vec<f64> = (0..len).map(|j| start + j as f64 * step).collect();
        // Land exactly on the endpoint regardless of rounding in `step`.
        points[len - 1] = end;
        TimeGrid::new(points)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Grids always hold at least two points; provided for completeness.
    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn start(&self) -> f64 {
        self.points[0]
    }

    pub fn end(&self) -> f64 {
        *self.points.last().expect("grid has at least two points")
    }

    /// Index `i` of the segment `[t_i, t_{i+1}]` containing `t`; the right
    /// endpoint maps to the last segment.
    fn segment_of(&self, t: f64) -> Result<usize> {
        if !t.is_finite() || t < self.start() || t > self.end() {
            return Err(Error::OutOfRange {
                t,
                lo: self.start(),
                hi: self.end(),
            });
        }
        // partition_point returns how many points are <= t; the last grid
        // point would give an out-of-range segment, hence the clamp.
        let upper = self.points.partition_point(|&p| p <= t);
        Ok(upper.clamp(1, self.points.len() - 1) - 1)
    }
}

/// Piecewise-linear value of a curve at time `t`.
///
/// `values` holds the curve on the grid; `t` must lie inside the
/// observation window. Grid points themselves are reproduced exactly.
pub fn interpolate(values: &[f64], grid: &TimeGrid, t: f64) -> Result<f64> {
    if values.len() != grid.len() {
        return Err(Error::LengthMismatch {
            expected: grid.len(),
            got: values.len(),
        });
    }
    let i = grid.segment_of(t)?;
    let (t0, t1) = (grid.points[i], grid.points[i + 1]);
    if t == t0 {
        return Ok(values[i]);
    }
    if t == t1 {
        return Ok(values[i + 1]);
    }
    let w = (t - t0) / (t1 - t0);
    Ok(values[i] + w * (values[i + 1] - values[i]))
}

/// Trapezoid-rule integral of a gridded function over the whole window.
pub fn trapezoid_integral(values: &[f64], grid: &TimeGrid) -> Result<f64> {
    if values.len() != grid.len() {
        return Err(Error::LengthMismatch {
            expected: grid.len(),
            got: values.len(),
        });
    }
    let t = grid.points();
    let terms = (0..values.len() - 1)
        .map(|j| 0.5 * (values[j] + values[j + 1]) * (t[j + 1] - t[j]));
    Ok(kahan_sum(terms))
}

/// `N` curves on a shared grid, optionally partitioned into strata.
///
/// Stratum labels are `1..=H` with every label in that range occupied.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePopulation {
    grid: TimeGrid,
    values: Array2<f64>,
    strata: Option<Vec<usize>>,
}

impl CurvePopulation {
    /// Population without stratum labels. `values` is `N × d` with `d`
    /// matching the grid; every entry must be finite and `N ≥ 1`.
    pub fn new(grid: TimeGrid, values: Array2<f64>) -> Result<Self> {
        Self::build(grid, values, None)
    }

    /// Population with stratum labels, one per unit, each in `1..=H` and
    /// with every stratum in that range nonempty.
    pub fn with_strata(grid: TimeGrid, values: Array2<f64>, strata: Vec<usize>) -> Result<Self> {
        Self::build(grid, values, Some(strata))
    }

    fn build(grid: TimeGrid, values: Array2<f64>, strata: Option<Vec<usize>>) -> Result<Self> {
        let (n, d) = values.dim();
        if n == 0 {
            return Err(Error::invalid("population needs at least one unit"));
        }
        if d != grid.len() {
            return Err(Error::LengthMismatch {
                expected: grid.len(),
                got: d,
            });
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "curve value at unit {}, grid point {} is not finite",
                bad / d,
                bad % d
            )));
        }
        if let Some(labels) = &strata {
            if labels.len() != n {
                return Err(Error::LengthMismatch {
                    expected: n,
                    got: labels.len(),
                });
            }
            validate_stratum_labels(labels)?;
        }
        // Constructors of Array2 produce standard (row-major) layout, which
        // `curve` relies on; defend against exotic callers.
        let values = if values.is_standard_layout() {
            values
        } else {
            values.as_standard_layout().into_owned()
        };
        Ok(CurvePopulation {
            grid,
            values,
            strata,
        })
    }

    /// Number of units `N`.
    pub fn size(&self) -> usize {
        self.values.nrows()
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    /// Curve of unit `k` as a slice over the grid.
    pub fn curve(&self, k: usize) -> Result<&[f64]> {
        if k >= self.size() {
            return Err(Error::UnitOutOfRange {
                index: k,
                size: self.size(),
            });
        }
        let d = self.grid.len();
        Ok(&self.values.as_slice().expect("standard layout")[k * d..(k + 1) * d])
    }

    /// Stratum labels (`1..=H`), if the population carries them.
    pub fn strata(&self) -> Option<&[usize]> {
        self.strata.as_deref()
    }

    /// Number of strata `H`, if labels are present.
    pub fn num_strata(&self) -> Option<usize> {
        self.strata
            .as_ref()
            .map(|s| s.iter().copied().max().unwrap_or(0))
    }

    /// Per-stratum unit counts `N_h` indexed by `h - 1`.
    pub fn stratum_sizes(&self) -> Result<Vec<usize>> {
        let labels = self.strata.as_ref().ok_or(Error::MissingStrata)?;
        let h_count = labels.iter().copied().max().unwrap_or(0);
        let mut sizes = vec![0usize; h_count];
        for &h in labels {
            sizes[h - 1] += 1;
        }
        Ok(sizes)
    }

    /// Population mean trajectory: the simple average of all curves at each
    /// grid point, accumulated in unit order with compensated summation.
    pub fn mean_curve(&self) -> Vec<f64> {
        let n = self.size() as f64;
        let d = self.grid.len();
        let mut acc = vec![KahanSum::default(); d];
        for k in 0..self.size() {
            let row = self.curve(k).expect("index in range");
            for (a, &v) in acc.iter_mut().zip(row) {
                a.add(v);
            }
        }
        acc.into_iter().map(|a| a.value() / n).collect()
    }

    /// Relabels units into `h_count` strata of near-equal size by sorting on
    /// each curve's maximum level (ties broken by unit index) and cutting
    /// the sorted order into contiguous blocks: stratum 1 gets the lowest
    /// maxima. When `auxiliary` is given (same row count, any number of
    /// columns), its rows are ranked instead of the population's own curves —
    /// the planning situation where stratification must come from a proxy
    /// signal observed before the study variable.
    pub fn stratify_by_max_level(
        &self,
        h_count: usize,
        auxiliary: Option<ArrayView2<'_, f64>>,
    ) -> Result<CurvePopulation> {
        let n = self.size();
        if h_count == 0 {
            return Err(Error::invalid("stratum count must be positive"));
        }
        if h_count > n {
            return Err(Error::invalid(format!(
                "cannot split {n} unit(s) into {h_count} nonempty strata"
            )));
        }
        let maxima: Vec<f64> = match auxiliary {
            Some(aux) => {
                if aux.nrows() != n {
                    return Err(Error::LengthMismatch {
                        expected: n,
                        got: aux.nrows(),
                    });
                }
                if aux.ncols() == 0 {
                    return Err(Error::invalid("auxiliary matrix has no columns"));
                }
                if let Some(bad) = aux.iter().position(|v| !v.is_finite()) {
                    return Err(Error::invalid(format!(
                        "auxiliary value in row {} is not finite",
                        bad / aux.ncols()
                    )));
                }
                aux.outer_iter()
                    .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
                    .collect()
            }
            None => (0..n)
                .map(|k| {
                    self.curve(k)
                        .expect("index in range")
                        .iter()
                        .copied()
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .collect(),
        };
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            maxima[a]
                .partial_cmp(&maxima[b])
                .expect("maxima are finite")
                .then(a.cmp(&b))
        });
        // Near-equal blocks: the first `n % h_count` strata get one extra.
        let base = n / h_count;
        let extra = n % h_count;
        let mut labels = vec![0usize; n];
        let mut cursor = 0;
        for h in 1..=h_count {
            let size = base + usize::from(h <= extra);
            for &unit in &order[cursor..cursor + size] {
                labels[unit] = h;
            }
            cursor += size;
        }
        CurvePopulation::with_strata(self.grid.clone(), self.values.clone(), labels)
    }

    /// Crude Hölder exponent of the population: fits the log–log slope of
    /// mean-squared increments against lag distance over dyadic lags (up to
    /// one eighth of the grid, never fewer than two lags) and halves it.
    /// Returns `Ok(None)` when increments carry no variation at all (e.g.
    /// constant curves), where the exponent is undefined.
    pub fn holder_beta(&self) -> Result<Option<f64>> {
        let d = self.grid.len();
        if d < 3 {
            return Err(Error::GridTooShort { min: 3, got: d });
        }
        let cap = std::cmp::max(2, (d - 1) / 8);
        let mut lags = Vec::new();
        let mut lag = 1;
        while lag <= cap {
            lags.push(lag);
            lag *= 2;
        }
        let t = self.grid.points();
        let mut xs = Vec::with_capacity(lags.len());
        let mut ys = Vec::with_capacity(lags.len());
        for &ell in &lags {
            let mut sq = KahanSum::default();
            let mut dist = KahanSum::default();
            let pairs = d - ell;
            for k in 0..self.size() {
                let row = self.curve(k).expect("index in range");
                for j in 0..pairs {
                    let inc = row[j + ell] - row[j];
                    sq.add(inc * inc);
                }
            }
            for j in 0..pairs {
                dist.add(t[j + ell] - t[j]);
            }
            let msd = sq.value() / (self.size() * pairs) as f64;
            if msd <= 0.0 {
                return Ok(None);
            }
            xs.push((dist.value() / pairs as f64).ln());
            ys.push(msd.ln());
        }
        Ok(Some(least_squares_slope(&xs, &ys) / 2.0))
    }
}

/// Checks labels are `1..=H` with every stratum in the range nonempty.
pub(crate) fn validate_stratum_labels(labels: &[usize]) -> Result<()> {
    let h_count = match labels.iter().copied().max() {
        Some(max) if max >= 1 => max,
        _ => return Err(Error::invalid("stratum labels must start at 1")),
    };
    if labels.iter().any(|&h| h == 0) {
        return Err(Error::invalid("stratum labels must start at 1"));
    }
    let mut seen = vec![false; h_count];
    for &h in labels {
        seen[h - 1] = true;
    }
    if let Some(hole) = seen.iter().position(|&s| !s) {
        return Err(Error::DegenerateStratum {
            stratum: hole + 1,
            size: 0,
            min: 1,
        });
    }
    Ok(())
}

fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}
