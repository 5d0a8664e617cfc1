// SPDX-License-Identifier: Apache-2.0

//! Test-set design: simulated power of precision comparisons, sample-size
//! search, paired precision tests along one shared random sequence, and
//! duplicate-pair prevalence.

use rand::seq::SliceRandom;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, substream};
use crate::stats;

const EPS: f64 = 1e-12;

/// Assumptions of a study comparing the precision of two models that are
/// run on the same random sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionStudyAssumptions {
    pub sample_size: u64,
    /// Expected fraction of sampled cases each model predicts positive.
    pub flag_rate_a: f64,
    pub flag_rate_b: f64,
    /// Cases flagged by both, as a fraction of the larger flag rate.
    pub overlap_rate: f64,
    pub precision_a: f64,
    pub precision_b: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_replicates")]
    pub n_replicates: usize,
    #[serde(default)]
    pub seed: u64,
    /// Precision among cases flagged by both models. Defaults to the mean of
    /// the two precisions, or to whichever is forced when one model's flags
    /// are all shared.
    #[serde(default)]
    pub shared_precision: Option<f64>,
    /// Use the randomized exact test, whose null rejection rate is exactly
    /// `alpha`. The plain exact test is conservative.
    #[serde(default = "default_true")]
    pub randomized: bool,
}

fn default_alpha() -> f64 {
    0.05
}

fn default_replicates() -> usize {
    2000
}

fn default_true() -> bool {
    true
}

/// Whether a reported flag count is the union of both models' flags or the
/// sum of the two counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlagCountBasis {
    Union,
    Sum,
}

/// Common flag rate for two models with equal flag rates, given a total
/// flag count observed in a sample of `sample_size`.
pub fn equal_flag_rate(sample_size: u64, flag_count: f64, overlap_rate: f64, basis: FlagCountBasis) -> Result<f64> {
    if sample_size == 0 || flag_count.is_nan() || flag_count <= 0.0 || !(0.0..=1.0).contains(&overlap_rate) {
        return Err(Error::invalid(
            "need sample_size > 0, flag_count > 0 and overlap_rate in [0, 1]",
        ));
    }
    let n = sample_size as f64;
    let rate = match basis {
        FlagCountBasis::Union => flag_count / (n * (2.0 - overlap_rate)),
        FlagCountBasis::Sum => flag_count / (2.0 * n),
    };
    if rate >= 1.0 {
        return Err(Error::invalid("flag count implies a flag rate of at least 1"));
    }
    Ok(rate)
}

/// Cell probabilities and conditional precisions derived from assumptions.
#[derive(Debug, Clone, Copy)]
struct FlagModel {
    shared: f64,
    a_only: f64,
    b_only: f64,
    q_a: f64,
    q_b: f64,
}

impl PrecisionStudyAssumptions {
    fn flag_model(&self) -> Result<FlagModel> {
        let (fa, fb) = (self.flag_rate_a, self.flag_rate_b);
        for (name, v) in [("flag_rate_a", fa), ("flag_rate_b", fb)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::invalid(format!("{name} must be in (0, 1), got {v}")));
            }
        }
        for (name, v) in [("precision_a", self.precision_a), ("precision_b", self.precision_b)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::invalid(format!("{name} must be in (0, 1), got {v}")));
            }
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid(format!("alpha must be in (0, 1), got {}", self.alpha)));
        }
        if self.n_replicates == 0 {
            return Err(Error::invalid("n_replicates must be positive"));
        }
        let max_overlap = fa.min(fb) / fa.max(fb);
        if !(0.0..=1.0).contains(&self.overlap_rate) || self.overlap_rate > max_overlap + EPS {
            return Err(Error::invalid(format!(
                "overlap_rate {} is inconsistent with the flag rates (at most {max_overlap})",
                self.overlap_rate
            )));
        }
        let shared = (self.overlap_rate * fa.max(fb)).min(fa.min(fb));
        let (a_only, b_only) = ((fa - shared).max(0.0), (fb - shared).max(0.0));
        if shared + a_only + b_only > 1.0 + EPS {
            return Err(Error::invalid(
                "flag rates and overlap imply more than all cases flagged",
            ));
        }
        let (pa, pb) = (self.precision_a, self.precision_b);
        let forced = match (a_only <= EPS, b_only <= EPS) {
            (true, true) if (pa - pb).abs() > EPS => {
                return Err(Error::invalid("identical flag sets cannot have different precisions"))
            }
            (true, _) => Some(pa),
            (_, true) => Some(pb),
            _ => None,
        };
        let q_s = match (forced, self.shared_precision) {
            (Some(f), Some(s)) if (f - s).abs() > EPS => {
                return Err(Error::invalid(format!(
                    "shared_precision {s} conflicts with the precision {f} forced by fully shared flags"
                )))
            }
            (Some(f), _) => f,
            (None, Some(s)) => s,
            (None, None) => (pa + pb) / 2.0,
        };
        if !(0.0..=1.0).contains(&q_s) {
            return Err(Error::invalid("shared_precision must be in [0, 1]"));
        }
        let arm = |f: f64, only: f64, p: f64, name: &str| -> Result<f64> {
            if only <= EPS {
                return Ok(0.0);
            }
            let q = (p * f - shared * q_s) / only;
            if !(-EPS..=1.0 + EPS).contains(&q) {
                return Err(Error::Infeasible(format!(
                    "{name}: precision among its unshared flags would be {q:.4}, outside [0, 1]"
                )));
            }
            Ok(q.clamp(0.0, 1.0))
        };
        Ok(FlagModel {
            shared,
            a_only,
            b_only,
            q_a: arm(fa, a_only, pa, "model a")?,
            q_b: arm(fb, b_only, pb, "model b")?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerEstimate {
    pub power: f64,
    pub mc_stderr: f64,
    pub n_replicates: usize,
    pub seed: u64,
}

fn binomial(n: u64, p: f64, rng: &mut crate::rng::StreamRng) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p).expect("valid binomial").sample(rng)
}

/// Monte Carlo power of the two-sided comparison of two models' precisions.
///
/// Each replicate draws how many sampled cases fall in the flagged-by-both,
/// A-only and B-only groups, then how many of the unshared flags are true.
/// Flags shared by both models carry no information about the difference,
/// so the test is Fisher's exact conditional test on the 2x2 table of
/// unshared flags (true/false by model). With `randomized` the per-replicate
/// rejection probability of the randomized test is averaged, which gives an
/// exact size of `alpha` under no effect.
pub fn simulate_precision_power(assumptions: &PrecisionStudyAssumptions) -> Result<PowerEstimate> {
    let model = assumptions.flag_model()?;
    if assumptions.sample_size == 0 {
        return Err(Error::invalid("sample_size must be positive"));
    }
    let n = assumptions.sample_size;
    let alpha = assumptions.alpha;
    let seed = assumptions.seed;
    let rejections: Vec<f64> = (0..assumptions.n_replicates as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, "design/power", i);
            let n_shared = binomial(n, model.shared, &mut rng);
            let rest = n - n_shared;
            let n_a = binomial(rest, model.a_only / (1.0 - model.shared), &mut rng);
            let n_b = binomial(rest - n_a, model.b_only / (1.0 - model.shared - model.a_only), &mut rng);
            let x_a = binomial(n_a, model.q_a, &mut rng);
            let x_b = binomial(n_b, model.q_b, &mut rng);
            let tail = stats::hypergeometric_tail(n_a + n_b, x_a + x_b, n_a, x_a);
            if assumptions.randomized {
                tail.randomized_rejection(alpha)
            } else if tail.p_value() <= alpha {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let (power, sd) = stats::mean_sd(&rejections).expect("at least one replicate");
    let r = rejections.len() as f64;
    Ok(PowerEstimate {
        power,
        mc_stderr: if r > 1.0 { sd / r.sqrt() } else { f64::NAN },
        n_replicates: rejections.len(),
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSizeSearch {
    pub min_size: u64,
    pub max_size: u64,
}

impl Default for SampleSizeSearch {
    fn default() -> Self {
        SampleSizeSearch {
            min_size: 100,
            max_size: 10_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSizeResult {
    pub sample_size: u64,
    pub power: PowerEstimate,
    /// Every (size, power) evaluated, in search order.
    pub probes: Vec<(u64, f64)>,
}

/// Smallest sample size whose simulated power reaches `target_power`.
///
/// Sizes are doubled from `min_size` until the target is reached, then the
/// last bracket is bisected down to a single size. Each probed size gets its
/// own seed derived from the assumptions' seed and the size, so a probe's
/// result does not depend on the search path. `assumptions.sample_size` is
/// ignored.
pub fn solve_sample_size(
    assumptions: &PrecisionStudyAssumptions,
    target_power: f64,
    search: &SampleSizeSearch,
) -> Result<SampleSizeResult> {
    assumptions.flag_model()?;
    if !(target_power > assumptions.alpha && target_power < 1.0) {
        return Err(Error::invalid(format!(
            "target_power must be in (alpha, 1), got {target_power}"
        )));
    }
    if search.min_size == 0 || search.min_size > search.max_size {
        return Err(Error::invalid("need 0 < min_size <= max_size"));
    }
    let mut probes = Vec::new();
    let mut probe = |size: u64| -> Result<PowerEstimate> {
        let mut a = assumptions.clone();
        a.sample_size = size;
        a.seed = derive_seed(assumptions.seed, &format!("design/sample-size/{size}"));
        let est = simulate_precision_power(&a)?;
        probes.push((size, est.power));
        Ok(est)
    };

    let mut lo = 0u64;
    let mut hi = search.min_size;
    let mut hi_est = loop {
        let est = probe(hi)?;
        if est.power >= target_power {
            break est;
        }
        if hi == search.max_size {
            return Err(Error::Infeasible(format!(
                "power {:.4} at the maximum size {} is below the target {target_power}",
                est.power, search.max_size
            )));
        }
        lo = hi;
        hi = hi.saturating_mul(2).min(search.max_size);
    };
    if lo > 0 {
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            let est = probe(mid)?;
            if est.power >= target_power {
                hi = mid;
                hi_est = est;
            } else {
                lo = mid;
            }
        }
    }
    Ok(SampleSizeResult {
        sample_size: hi,
        power: hi_est,
        probes,
    })
}

/// Cases selected for two model-specific precision tests, as indices into
/// the universe, in walk order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedPrecisionTest {
    pub sample_a: Vec<usize>,
    pub sample_b: Vec<usize>,
    /// Cases in both samples; annotated once.
    pub shared: Vec<usize>,
    /// Distinct cases to annotate, `|A ∪ B|`.
    pub annotation_burden: usize,
    /// Universe members visited before both targets were met.
    pub walked: usize,
    pub warning: Option<String>,
}

/// The seeded order in which [`build_paired_precision_test`] visits a
/// universe of `len` members.
pub fn walk_order(len: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut substream(seed, "design/paired-walk", 0));
    order
}

/// Builds precision tests for two models from one seeded random sequence.
///
/// Members are visited in [`walk_order`]. A member is added to a model's
/// sample if that model flags it and its sample is still short of
/// `target_flags`. The walk stops once both samples are full. If the
/// universe runs out first, the partial samples are returned with a warning.
pub fn build_paired_precision_test<T, A, B>(
    universe: &[T],
    flag_a: A,
    flag_b: B,
    target_flags: usize,
    seed: u64,
) -> Result<PairedPrecisionTest>
where
    A: Fn(&T) -> bool,
    B: Fn(&T) -> bool,
{
    if target_flags == 0 {
        return Err(Error::invalid("target_flags must be positive"));
    }
    let mut test = PairedPrecisionTest {
        sample_a: Vec::new(),
        sample_b: Vec::new(),
        shared: Vec::new(),
        annotation_burden: 0,
        walked: 0,
        warning: None,
    };
    for idx in walk_order(universe.len(), seed) {
        if test.sample_a.len() >= target_flags && test.sample_b.len() >= target_flags {
            break;
        }
        test.walked += 1;
        let item = &universe[idx];
        let in_a = test.sample_a.len() < target_flags && flag_a(item);
        let in_b = test.sample_b.len() < target_flags && flag_b(item);
        if in_a {
            test.sample_a.push(idx);
        }
        if in_b {
            test.sample_b.push(idx);
        }
        if in_a && in_b {
            test.shared.push(idx);
        }
        if in_a || in_b {
            test.annotation_burden += 1;
        }
    }
    if test.sample_a.len() < target_flags || test.sample_b.len() < target_flags {
        test.warning = Some(format!(
            "universe exhausted after {} members: model a has {} of {target_flags} flags, model b has {}",
            test.walked,
            test.sample_a.len(),
            test.sample_b.len()
        ));
    }
    Ok(test)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairPrevalenceSpec {
    pub n_records: u64,
    /// Fraction of records that have exactly one duplicate partner.
    pub duplicate_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairPrevalence {
    pub prevalence: f64,
    /// `duplicate_fraction * n_records`.
    pub duplicate_records: f64,
    pub warning: Option<String>,
}

/// Prevalence of duplicates among record pairs, `f * n / n^2`.
///
/// The denominator counts all ordered pairs including self-pairs and the
/// numerator counts duplicate records. Counting unordered distinct pairs,
/// `(f * n / 2) / (n * (n - 1) / 2)`, gives a slightly larger value.
pub fn pair_prevalence(spec: &PairPrevalenceSpec) -> Result<PairPrevalence> {
    if spec.n_records < 2 {
        return Err(Error::invalid("n_records must be at least 2"));
    }
    if !(0.0..=1.0).contains(&spec.duplicate_fraction) {
        return Err(Error::invalid("duplicate_fraction must be in [0, 1]"));
    }
    let n = spec.n_records as f64;
    let dup = spec.duplicate_fraction * n;
    let pairs = dup / 2.0;
    let warning = ((pairs - pairs.round()).abs() > 1e-9)
        .then(|| format!("{dup} duplicate records do not form a whole number of pairs"));
    Ok(PairPrevalence {
        prevalence: dup / (n * n),
        duplicate_records: dup,
        warning,
    })
}
