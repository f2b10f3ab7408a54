//! Sampling designs and seeded sample draws.
//!
//! Two designs are covered: simple random sampling without replacement
//! (SRSWOR) over the whole population, and stratified SRSWOR with
//! independent draws per stratum. Both are fixed-size designs with known
//! first- and second-order inclusion probabilities, which is exactly what
//! the reweighting estimators need:
//!
//! * SRSWOR: `π_k = n/N`, `π_kl = n(n−1)/(N(N−1))`;
//! * stratified: within stratum `h`, SRSWOR with `n_h` of `N_h`; units in
//!   different strata are included independently, so `π_kl = π_k π_l` and
//!   the covariance term `Δ_kl = π_kl − π_k π_l` vanishes across strata.
//!
//! Draws use a partial Fisher–Yates shuffle over the (stratum's) unit list
//! driven by the crate's documented ChaCha12/rejection-sampling scheme, so
//! a `(design, seed)` pair yields the same sample everywhere. Strata draw
//! from independent child streams, meaning a stratum's sample does not
//! change when the allocation of *other* strata changes.

use std::sync::Arc;

use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::population::validate_stratum_labels;
use crate::rng;

/// Hard cap on exhaustive sample enumeration.
pub const ENUMERATION_LIMIT: u128 = 1_000_000;

#[derive(Debug)]
enum Kind {
    Srswor {
        population: usize,
        draws: usize,
    },
    Stratified {
        labels: Vec<usize>,
        /// Sample size per stratum, indexed by `h - 1`.
        allocation: Vec<usize>,
        /// Unit indices per stratum, ascending, indexed by `h - 1`.
        members: Vec<Vec<usize>>,
    },
}

/// A fixed-size sampling design over `N` units.
///
/// Cheap to clone (the body is shared), so samples can carry their design.
#[derive(Debug, Clone)]
pub struct SamplingDesign {
    inner: Arc<Kind>,
}

/// One realized sample: the selected unit indices (ascending) plus the
/// design and seed that produced it.
#[derive(Debug, Clone)]
pub struct Sample {
    indices: Vec<usize>,
    design: SamplingDesign,
    seed: Option<u64>,
}

impl Sample {
    /// Selected unit indices, ascending, no repeats.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn design(&self) -> &SamplingDesign {
        &self.design
    }

    /// Seed used by [`SamplingDesign::draw`]; enumeration-born samples have
    /// none.
    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Assembles a sample from explicit indices (sorted, unique, in range,
    /// sizes matching the design) — for replaying externally recorded
    /// samples.
    pub fn from_indices(design: &SamplingDesign, indices: Vec<usize>) -> Result<Self> {
        let n = design.population_size();
        for w in indices.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::invalid(
                    "sample indices must be strictly increasing",
                ));
            }
        }
        if let Some(&last) = indices.last() {
            if last >= n {
                return Err(Error::UnitOutOfRange {
                    index: last,
                    size: n,
                });
            }
        }
        match &*design.inner {
            Kind::Srswor { draws, .. } => {
                if indices.len() != *draws {
                    return Err(Error::invalid(format!(
                        "design draws {draws} unit(s), sample has {}",
                        indices.len()
                    )));
                }
            }
            Kind::Stratified {
                labels, allocation, ..
            } => {
                let mut counts = vec![0usize; allocation.len()];
                for &k in &indices {
                    counts[labels[k] - 1] += 1;
                }
                if counts != *allocation {
                    return Err(Error::invalid(format!(
                        "per-stratum sample counts {counts:?} do not match the allocation {allocation:?}"
                    )));
                }
            }
        }
        Ok(Sample {
            indices,
            design: design.clone(),
            seed: None,
        })
    }
}

/// View of one independent SRSWOR block of a design (the whole population
/// for SRSWOR, a stratum for stratified designs). The estimators iterate
/// these instead of matching on the design kind.
pub(crate) struct Block<'a> {
    /// 1-based stratum label (1 for plain SRSWOR), for error reporting.
    pub stratum: usize,
    /// Units in the block, ascending; `None` means all of `0..population`.
    pub members: Option<&'a [usize]>,
    /// Block size `N_h`.
    pub population: usize,
    /// Draws from the block `n_h`.
    pub draws: usize,
}

impl Block<'_> {
    pub fn units(&self) -> impl Iterator<Item = usize> + Clone + '_ {
        let range = match self.members {
            Some(_) => 0..0,
            None => 0..self.population,
        };
        self.members
            .map(|m| m.iter().copied())
            .into_iter()
            .flatten()
            .chain(range)
    }
}

impl SamplingDesign {
    /// SRSWOR drawing `draws` of `population` units; `1 ≤ draws ≤ N`.
    pub fn srswor(population: usize, draws: usize) -> Result<Self> {
        if population == 0 {
            return Err(Error::invalid("population size must be positive"));
        }
        if draws == 0 || draws > population {
            return Err(Error::invalid(format!(
                "sample size must lie in 1..={population}, got {draws}"
            )));
        }
        if draws == 1 {
            log::warn!(
                "SRSWOR with n = 1: joint inclusion probabilities vanish, \
                 variance will not be estimable"
            );
        }
        Ok(SamplingDesign {
            inner: Arc::new(Kind::Srswor { population, draws }),
        })
    }

    /// The census design: every unit selected with certainty.
    pub fn census(population: usize) -> Result<Self> {
        SamplingDesign::srswor(population, population)
    }

    /// Stratified SRSWOR. `labels` assigns each unit a stratum in `1..=H`
    /// (all strata nonempty); `allocation[h-1]` draws from stratum `h`,
    /// with `1 ≤ n_h ≤ N_h`.
    pub fn stratified(labels: &[usize], allocation: &[usize]) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::invalid("population size must be positive"));
        }
        validate_stratum_labels(labels)?;
        let h_count = *labels.iter().max().expect("nonempty");
        if allocation.len() != h_count {
            return Err(Error::LengthMismatch {
                expected: h_count,
                got: allocation.len(),
            });
        }
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); h_count];
        for (k, &h) in labels.iter().enumerate() {
            members[h - 1].push(k);
        }
        for (i, (&n_h, m)) in allocation.iter().zip(&members).enumerate() {
            if n_h == 0 || n_h > m.len() {
                return Err(Error::invalid(format!(
                    "stratum {} allocates {} of {} unit(s)",
                    i + 1,
                    n_h,
                    m.len()
                )));
            }
            if n_h == 1 {
                log::warn!(
                    "stratum {} draws a single unit: joint inclusion \
                     probabilities vanish there, variance will not be estimable",
                    i + 1
                );
            }
        }
        Ok(SamplingDesign {
            inner: Arc::new(Kind::Stratified {
                labels: labels.to_vec(),
                allocation: allocation.to_vec(),
                members,
            }),
        })
    }

    /// Number of units the design is defined over.
    pub fn population_size(&self) -> usize {
        match &*self.inner {
            Kind::Srswor { population, .. } => *population,
            Kind::Stratified { labels, .. } => labels.len(),
        }
    }

    /// Total number of draws (`n`, or `Σ n_h`).
    pub fn sample_size(&self) -> usize {
        match &*self.inner {
            Kind::Srswor { draws, .. } => *draws,
            Kind::Stratified { allocation, .. } => allocation.iter().sum(),
        }
    }

    /// Stratum label of a unit (1-based); 1 for plain SRSWOR.
    pub fn stratum_of(&self, k: usize) -> Result<usize> {
        self.check_unit(k)?;
        Ok(match &*self.inner {
            Kind::Srswor { .. } => 1,
            Kind::Stratified { labels, .. } => labels[k],
        })
    }

    /// True when every block draws at least two units, i.e. all joint
    /// inclusion probabilities within blocks are positive and the design
    /// covariance is estimable.
    pub fn is_variance_estimable(&self) -> bool {
        match &*self.inner {
            Kind::Srswor { draws, .. } => *draws >= 2,
            Kind::Stratified { allocation, .. } => allocation.iter().all(|&n| n >= 2),
        }
    }

    /// Independent SRSWOR blocks composing the design.
    pub(crate) fn blocks(&self) -> Vec<Block<'_>> {
        match &*self.inner {
            Kind::Srswor { population, draws } => vec![Block {
                stratum: 1,
                members: None,
                population: *population,
                draws: *draws,
            }],
            Kind::Stratified {
                allocation,
                members,
                ..
            } => members
                .iter()
                .zip(allocation)
                .enumerate()
                .map(|(i, (m, &n_h))| Block {
                    stratum: i + 1,
                    members: Some(m.as_slice()),
                    population: m.len(),
                    draws: n_h,
                })
                .collect(),
        }
    }

    fn check_unit(&self, k: usize) -> Result<()> {
        let n = self.population_size();
        if k >= n {
            return Err(Error::UnitOutOfRange { index: k, size: n });
        }
        Ok(())
    }

    /// First-order inclusion probability `π_k`.
    pub fn pi1(&self, k: usize) -> Result<f64> {
        self.check_unit(k)?;
        Ok(match &*self.inner {
            Kind::Srswor { population, draws } => *draws as f64 / *population as f64,
            Kind::Stratified {
                labels,
                allocation,
                members,
            } => {
                let h = labels[k] - 1;
                allocation[h] as f64 / members[h].len() as f64
            }
        })
    }

    /// Joint inclusion probability `π_kl` for distinct units.
    pub fn pi2(&self, k: usize, l: usize) -> Result<f64> {
        self.check_unit(k)?;
        self.check_unit(l)?;
        if k == l {
            return Err(Error::invalid(
                "joint inclusion needs two distinct units; use pi1 for π_kk = π_k",
            ));
        }
        let within = |n: usize, big_n: usize| {
            (n * (n - 1)) as f64 / (big_n * (big_n - 1)) as f64
        };
        Ok(match &*self.inner {
            Kind::Srswor { population, draws } => within(*draws, *population),
            Kind::Stratified {
                labels,
                allocation,
                members,
            } => {
                let (hk, hl) = (labels[k] - 1, labels[l] - 1);
                if hk == hl {
                    within(allocation[hk], members[hk].len())
                } else {
                    // Independent strata.
                    (allocation[hk] as f64 / members[hk].len() as f64)
                        * (allocation[hl] as f64 / members[hl].len() as f64)
                }
            }
        })
    }

    /// Design covariance of inclusion indicators,
    /// `Δ_kl = π_kl − π_k π_l`, with `Δ_kk = π_k (1 − π_k)`.
    pub fn delta(&self, k: usize, l: usize) -> Result<f64> {
        if k == l {
            let p = self.pi1(k)?;
            return Ok(p * (1.0 - p));
        }
        Ok(self.pi2(k, l)? - self.pi1(k)? * self.pi1(l)?)
    }

    /// Draws one sample. Deterministic in `(design, seed)`: SRSWOR runs a
    /// partial Fisher–Yates pass over the unit list; stratified designs run
    /// one per stratum, each on its own child stream keyed by the stratum
    /// label, so other strata's allocations don't perturb the draw.
    pub fn draw(&self, seed: u64) -> Sample {
        let mut indices = match &*self.inner {
            Kind::Srswor { population, draws } => {
                let pool: Vec<usize> = (0..*population).collect();
                let mut rng = rng::stream(seed);
                partial_shuffle(pool, *draws, &mut rng)
            }
            Kind::Stratified {
                allocation,
                members,
                ..
            } => {
                let mut picked = Vec::with_capacity(allocation.iter().sum());
                for (i, (m, &n_h)) in members.iter().zip(allocation).enumerate() {
                    let mut rng = rng::stream(rng::child_seed(seed, (i + 1) as u64));
                    picked.extend(partial_shuffle(m.clone(), n_h, &mut rng));
                }
                picked
            }
        };
        indices.sort_unstable();
        Sample {
            indices,
            design: self.clone(),
            seed: Some(seed),
        }
    }

    /// Number of distinct samples the design can produce (`C(N,n)` or
    /// `Π C(N_h, n_h)`), saturating at `u128::MAX`.
    pub fn sample_space_size(&self) -> u128 {
        match &*self.inner {
            Kind::Srswor { population, draws } => binomial(*population, *draws),
            Kind::Stratified {
                allocation,
                members,
                ..
            } => members
                .iter()
                .zip(allocation)
                .map(|(m, &n_h)| binomial(m.len(), n_h))
                .fold(1u128, u128::saturating_mul),
        }
    }

    /// Every sample the design can produce, paired with its probability.
    /// Probabilities are uniform and sum to one. Refuses to enumerate more
    /// than [`ENUMERATION_LIMIT`] samples.
    pub fn enumerate_all_samples(&self) -> Result<Vec<(Sample, f64)>> {
        use itertools::Itertools;

        let count = self.sample_space_size();
        if count > ENUMERATION_LIMIT {
            return Err(Error::EnumerationTooLarge {
                count,
                limit: ENUMERATION_LIMIT,
            });
        }
        let p = 1.0 / count as f64;
        let make = |indices: Vec<usize>| Sample {
            indices,
            design: self.clone(),
            seed: None,
        };
        let samples: Vec<(Sample, f64)> = match &*self.inner {
            Kind::Srswor { population, draws } => (0..*population)
                .combinations(*draws)
                .map(|c| (make(c), p))
                .collect(),
            Kind::Stratified {
                allocation,
                members,
                ..
            } => {
                let per_stratum: Vec<Vec<Vec<usize>>> = members
                    .iter()
                    .zip(allocation)
                    .map(|(m, &n_h)| m.iter().copied().combinations(n_h).collect())
                    .collect();
                per_stratum
                    .iter()
                    .multi_cartesian_product()
                    .map(|parts| {
                        let mut indices: Vec<usize> =
                            parts.iter().flat_map(|p| p.iter().copied()).collect();
                        indices.sort_unstable();
                        (make(indices), p)
                    })
                    .collect()
            }
        };
        debug_assert_eq!(samples.len() as u128, count);
        Ok(samples)
    }
}

/// First `draws` entries of a Fisher–Yates shuffle of `pool`, each swap
/// target chosen by unbiased rejection sampling.
fn partial_shuffle(mut pool: Vec<usize>, draws: usize, rng: &mut ChaCha12Rng) -> Vec<usize> {
    debug_assert!(draws <= pool.len());
    for i in 0..draws {
        let j = i + rng::uniform_index(rng, pool.len() - i);
        pool.swap(i, j);
    }
    pool.truncate(draws);
    pool
}

/// `C(n, k)` in saturating u128 arithmetic.
fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 1..=k {
        // acc * (n - k + i) stays exact because acc is always C(m, i-1)·…
        // divided through; saturation only kicks in for astronomically
        // large spaces where only "too big" matters.
        acc = acc.saturating_mul((n - k + i) as u128) / i as u128;
    }
    acc
}
