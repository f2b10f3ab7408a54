//! Sample allocation across strata.
//!
//! The planning question: given per-stratum sizes `N_h` and dispersions
//! `S_h` (root integrated within-stratum variance), split a total budget
//! `n` into integer stratum sample sizes `n_h`. The quantity being
//! minimized is the integrated variance of the stratified mean estimator,
//!
//! ```text
//! V(n_1..n_H) = (1/N²) Σ_h N_h (N_h − n_h) / n_h · S_h²
//! ```
//!
//! whose continuous minimizer puts `n_h ∝ N_h S_h` (the classical
//! dispersion-proportional rule). Real allocations need `1 ≤ n_h ≤ N_h`
//! and integrality, handled in two steps: box-constrained waterfilling of
//! real quotas (bisection on the common multiplier), then
//! largest-remainder rounding, ties to the lower stratum index. Both rules
//! (proportional to `N_h`, optimal `∝ N_h S_h`) run through the same
//! engine, so edge handling is identical.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::population::{trapezoid_integral, CurvePopulation};
use crate::util::KahanSum;

/// Size and dispersion of one stratum, the inputs allocation works from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumSummary {
    /// 1-based stratum label.
    pub stratum: usize,
    /// Units in the stratum, `N_h`.
    pub size: usize,
    /// `S_h`: square root of the integrated within-stratum variance
    /// function, `√∫ γ̃_h(t,t) dt`.
    pub dispersion: f64,
}

/// How an allocation's sizes were chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AllocationRule {
    /// `n_h ∝ N_h`.
    Proportional,
    /// `n_h ∝ N_h S_h` (dispersion-optimal).
    Optimal,
    /// Sizes supplied directly by the caller.
    Manual,
}

/// An integer allocation of the sample budget, with the real quotas it was
/// rounded from and its objective value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub rule: AllocationRule,
    /// Integer stratum sample sizes `n_h`, indexed by `h − 1`.
    pub sizes: Vec<usize>,
    /// Box-constrained real quotas before rounding.
    pub quotas: Vec<f64>,
    /// Integrated-variance objective of `sizes`.
    pub objective: f64,
}

/// Computes per-stratum summaries from a stratified population. Every
/// stratum needs at least two units for its dispersion to be defined.
pub fn stratum_summaries(pop: &CurvePopulation) -> Result<Vec<StratumSummary>> {
    let labels = pop.strata().ok_or(Error::MissingStrata)?;
    let sizes = pop.stratum_sizes()?;
    let d = pop.grid().len();
    let h_count = sizes.len();
    for (i, &n_h) in sizes.iter().enumerate() {
        if n_h < 2 {
            return Err(Error::DegenerateStratum {
                stratum: i + 1,
                size: n_h,
                min: 2,
            });
        }
    }
    // Two passes: stratum means, then centered second moments.
    let mut means = vec![vec![KahanSum::default(); d]; h_count];
    for k in 0..pop.size() {
        let h = labels[k] - 1;
        for (m, &y) in means[h].iter_mut().zip(pop.curve(k)?) {
            m.add(y);
        }
    }
    let means: Vec<Vec<f64>> = means
        .into_iter()
        .zip(&sizes)
        .map(|(row, &n_h)| row.into_iter().map(|a| a.value() / n_h as f64).collect())
        .collect();
    let mut sq = vec![vec![KahanSum::default(); d]; h_count];
    for k in 0..pop.size() {
        let h = labels[k] - 1;
        let mean = &means[h];
        for (j, &y) in pop.curve(k)?.iter().enumerate() {
            let dev = y - mean[j];
            sq[h][j].add(dev * dev);
        }
    }
    sq.into_iter()
        .enumerate()
        .map(|(h, row)| {
            let var: Vec<f64> = row
                .into_iter()
                .map(|a| a.value() / (sizes[h] - 1) as f64)
                .collect();
            let integral = trapezoid_integral(&var, pop.grid())?;
            Ok(StratumSummary {
                stratum: h + 1,
                size: sizes[h],
                dispersion: integral.max(0.0).sqrt(),
            })
        })
        .collect()
}

fn validate_summaries(summaries: &[StratumSummary]) -> Result<()> {
    if summaries.is_empty() {
        return Err(Error::invalid("no strata to allocate over"));
    }
    for (i, s) in summaries.iter().enumerate() {
        if s.stratum != i + 1 {
            return Err(Error::invalid(format!(
                "summaries must be ordered by stratum label: position {} holds stratum {}",
                i, s.stratum
            )));
        }
        if s.size == 0 {
            return Err(Error::invalid(format!("stratum {} is empty", s.stratum)));
        }
        if !s.dispersion.is_finite() || s.dispersion < 0.0 {
            return Err(Error::invalid(format!(
                "stratum {} has dispersion {}, expected finite and nonnegative",
                s.stratum, s.dispersion
            )));
        }
    }
    Ok(())
}

fn check_budget(summaries: &[StratumSummary], n: usize) -> Result<()> {
    let h = summaries.len();
    let total: usize = summaries.iter().map(|s| s.size).sum();
    if n < h || n > total {
        return Err(Error::InfeasibleAllocation(format!(
            "budget {n} outside [{h}, {total}] for {h} strata over {total} units"
        )));
    }
    Ok(())
}

/// Integrated-variance objective of integer sizes (each `1 ≤ n_h ≤ N_h`).
pub fn allocation_objective(summaries: &[StratumSummary], sizes: &[usize]) -> Result<f64> {
    validate_summaries(summaries)?;
    if sizes.len() != summaries.len() {
        return Err(Error::LengthMismatch {
            expected: summaries.len(),
            got: sizes.len(),
        });
    }
    for (s, &n_h) in summaries.iter().zip(sizes) {
        if n_h == 0 || n_h > s.size {
            return Err(Error::invalid(format!(
                "stratum {} allocates {n_h} of {} unit(s)",
                s.stratum, s.size
            )));
        }
    }
    let quotas: Vec<f64> = sizes.iter().map(|&n| n as f64).collect();
    objective_of_quotas(summaries, &quotas)
}

/// Objective evaluated at real quotas (used to compare integer allocations
/// with their continuous relaxation). Quotas must lie in `[1, N_h]`.
pub fn allocation_objective_quotas(
    summaries: &[StratumSummary],
    quotas: &[f64],
) -> Result<f64> {
    validate_summaries(summaries)?;
    if quotas.len() != summaries.len() {
        return Err(Error::LengthMismatch {
            expected: summaries.len(),
            got: quotas.len(),
        });
    }
    for (s, &q) in summaries.iter().zip(quotas) {
        if !(1.0..=s.size as f64).contains(&q) {
            return Err(Error::invalid(format!(
                "stratum {} quota {q} outside [1, {}]",
                s.stratum, s.size
            )));
        }
    }
    objective_of_quotas(summaries, quotas)
}

fn objective_of_quotas(summaries: &[StratumSummary], quotas: &[f64]) -> Result<f64> {
    let total: usize = summaries.iter().map(|s| s.size).sum();
    let scale = 1.0 / (total as f64 * total as f64);
    let mut acc = KahanSum::default();
    for (s, &q) in summaries.iter().zip(quotas) {
        let n_h = s.size as f64;
        acc.add(n_h * (n_h - q) / q * s.dispersion * s.dispersion);
    }
    Ok(acc.value() * scale)
}

/// Proportional rule: quotas `∝ N_h`, boxed and rounded.
pub fn proportional_allocation(summaries: &[StratumSummary], n: usize) -> Result<Allocation> {
    validate_summaries(summaries)?;
    check_budget(summaries, n)?;
    let weights: Vec<f64> = summaries.iter().map(|s| s.size as f64).collect();
    finish(summaries, n, &weights, AllocationRule::Proportional)
}

/// Dispersion-optimal rule: quotas `∝ N_h S_h`, boxed and rounded. When
/// every dispersion is zero the objective is flat, so the rule degrades to
/// proportional (and says so in the returned `rule`).
pub fn optimal_allocation(summaries: &[StratumSummary], n: usize) -> Result<Allocation> {
    validate_summaries(summaries)?;
    check_budget(summaries, n)?;
    if summaries.iter().all(|s| s.dispersion == 0.0) {
        log::warn!(
            "all stratum dispersions are zero; optimal allocation is \
             degenerate, falling back to the proportional rule"
        );
        return proportional_allocation(summaries, n);
    }
    let weights: Vec<f64> = summaries
        .iter()
        .map(|s| s.size as f64 * s.dispersion)
        .collect();
    finish(summaries, n, &weights, AllocationRule::Optimal)
}

fn finish(
    summaries: &[StratumSummary],
    n: usize,
    weights: &[f64],
    rule: AllocationRule,
) -> Result<Allocation> {
    let caps: Vec<usize> = summaries.iter().map(|s| s.size).collect();
    let quotas = boxed_quotas(weights, &caps, n);
    let mut sizes = largest_remainder(&quotas, &caps, n)?;
    if rule == AllocationRule::Optimal {
        exchange_polish(summaries, &caps, &mut sizes);
    }
    let objective = allocation_objective(summaries, &sizes)?;
    Ok(Allocation {
        rule,
        sizes,
        quotas,
        objective,
    })
}

/// Moves single units between strata while that strictly lowers the
/// objective. Rounding the continuous optimum is almost always already
/// optimal, but not provably so; for this separable convex objective a
/// unit-exchange local optimum *is* the global integer optimum, so this
/// (usually idle) pass turns the rounded allocation into the exact
/// minimizer. Deterministic: ties pick the lowest stratum index.
fn exchange_polish(summaries: &[StratumSummary], caps: &[usize], sizes: &mut [usize]) {
    // Unscaled per-stratum numerators a_h = (N_h S_h)²: the objective is
    // Σ a_h/n_h + const, so moving a unit from g to h changes it by
    // a_g/((n_g−1)n_g) − a_h/(n_h(n_h+1)).
    let a: Vec<f64> = summaries
        .iter()
        .map(|s| {
            let w = s.size as f64 * s.dispersion;
            w * w
        })
        .collect();
    let max_moves: usize = caps.iter().sum();
    for _ in 0..max_moves {
        let mut best_gain = (0.0, usize::MAX); // adding a unit
        let mut best_loss = (f64::INFINITY, usize::MAX); // removing one
        for h in 0..sizes.len() {
            let n_h = sizes[h] as f64;
            if sizes[h] < caps[h] {
                let gain = a[h] / (n_h * (n_h + 1.0));
                if gain > best_gain.0 {
                    best_gain = (gain, h);
                }
            }
            if sizes[h] > 1 {
                let loss = a[h] / ((n_h - 1.0) * n_h);
                if loss < best_loss.0 {
                    best_loss = (loss, h);
                }
            }
        }
        if best_gain.1 == usize::MAX
            || best_loss.1 == usize::MAX
            || best_gain.0 <= best_loss.0
        {
            break;
        }
        sizes[best_gain.1] += 1;
        sizes[best_loss.1] -= 1;
    }
}

/// Real quotas maximally proportional to `weights` subject to
/// `1 ≤ q_h ≤ caps_h` and `Σ q_h = n`: bisection on the multiplier `c` of
/// `q_h = clamp(c·w_h, 1, N_h)` (the box-constrained stationary point).
/// Zero-weight strata sit at their floor; if the positive-weight strata
/// saturate their caps before the budget is spent, the remainder spreads
/// over zero-weight strata proportional to their headroom.
fn boxed_quotas(weights: &[f64], caps: &[usize], n: usize) -> Vec<f64> {
    let h = weights.len();
    let target = n as f64;
    let filled = |c: f64| -> Vec<f64> {
        weights
            .iter()
            .zip(caps)
            .map(|(&w, &cap)| (c * w).clamp(1.0, cap as f64))
            .collect()
    };
    let total = |qs: &[f64]| qs.iter().sum::<f64>();

    // Upper bound on the multiplier: every positive-weight stratum capped.
    let mut hi = 1.0f64;
    for (&w, &cap) in weights.iter().zip(caps) {
        if w > 0.0 {
            hi = hi.max(cap as f64 / w);
        }
    }
    hi *= 2.0;
    let mut quotas = if total(&filled(hi)) < target {
        // Positive weights exhausted below budget: cap them and spread the
        // rest across zero-weight strata by headroom.
        let mut qs = filled(hi);
        let deficit = target - total(&qs);
        let headroom: f64 = weights
            .iter()
            .zip(caps)
            .filter(|(&w, _)| w == 0.0)
            .map(|(_, &cap)| cap as f64 - 1.0)
            .sum();
        if headroom > 0.0 {
            for ((q, &w), &cap) in qs.iter_mut().zip(weights).zip(caps) {
                if w == 0.0 {
                    *q += deficit * (cap as f64 - 1.0) / headroom;
                }
            }
        }
        qs
    } else {
        let mut lo = 0.0f64;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if total(&filled(mid)) < target {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= f64::EPSILON * hi.max(1.0) {
                break;
            }
        }
        filled(hi)
    };
    // Wash out bisection residue so the quotas sum to the budget exactly
    // (up to one rounding step); the integer rounding below re-anchors to
    // `n` through integer arithmetic regardless.
    let drift = target - total(&quotas);
    if drift.abs() > 0.0 {
        let slack: Vec<f64> = quotas
            .iter()
            .zip(caps)
            .map(|(&q, &cap)| if drift > 0.0 { cap as f64 - q } else { q - 1.0 })
            .collect();
        let slack_total: f64 = slack.iter().sum();
        if slack_total > 0.0 {
            for (q, s) in quotas.iter_mut().zip(&slack) {
                *q += drift * s / slack_total;
            }
        }
    }
    debug_assert_eq!(quotas.len(), h);
    quotas
}

/// Largest-remainder rounding of quotas in `[1, caps]` summing to `n`:
/// floors first, then one extra unit to the largest fractional parts,
/// ties to the lower stratum index, respecting caps.
fn largest_remainder(quotas: &[f64], caps: &[usize], n: usize) -> Result<Vec<usize>> {
    let mut sizes: Vec<usize> = quotas
        .iter()
        .zip(caps)
        .map(|(&q, &cap)| (q.floor() as usize).clamp(1, cap))
        .collect();
    let floored: usize = sizes.iter().sum();
    if floored > n {
        // Cannot happen for quotas that sum to n, kept as a hard error
        // rather than a silent misallocation.
        return Err(Error::InfeasibleAllocation(format!(
            "rounded floors sum to {floored} > budget {n}"
        )));
    }
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.partial_cmp(&fa)
            .expect("quotas are finite")
            .then(a.cmp(&b))
    });
    let mut remaining = n - floored;
    // First pass: honor fractional ranking. Second pass: any residual goes
    // to whoever still has headroom (covers rounding pathologies).
    for pass in 0..2 {
        if remaining == 0 {
            break;
        }
        for &i in &order {
            if remaining == 0 {
                break;
            }
            let frac = quotas[i] - quotas[i].floor();
            if pass == 0 && frac <= 0.0 {
                continue;
            }
            if sizes[i] < caps[i] {
                sizes[i] += 1;
                remaining -= 1;
            }
        }
    }
    if remaining > 0 {
        return Err(Error::InfeasibleAllocation(format!(
            "{remaining} unit(s) left after rounding against caps {caps:?}"
        )));
    }
    Ok(sizes)
}
