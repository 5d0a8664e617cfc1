// SPDX-License-Identifier: Apache-2.0

//! Seeded synthetic populations with exactly known population metrics.
//!
//! A [`Population`] holds latent truth and scores for every member. The
//! evaluation [`Dataset`] is either the whole population or an enriched
//! Poisson sample of it, and [`Truth`] is computed by enumerating the
//! population, never by sampling.

use rand::seq::index;
use rand::Rng;
use rand_distr::{Binomial, Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::datamodel::{Dataset, EvaluationCase, ReferenceLabel, StratumSpec};
use crate::error::{Error, Result};
use crate::metrics::{Cell, ConfusionCounts, Metric};
use crate::rng::{substream, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreFamily {
    Normal,
    Logistic,
    /// Bounded support; separation above `2 * spread` separates the classes.
    Uniform,
}

/// Class-conditional score distributions.
///
/// A latent value is drawn around `+separation/2` for positives and
/// `-separation/2` for negatives with scale `spread`, and mapped into (0, 1)
/// by the logistic function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreModel {
    pub family: ScoreFamily,
    pub separation: f64,
    pub spread: f64,
}

impl Default for ScoreModel {
    fn default() -> Self {
        ScoreModel {
            family: ScoreFamily::Normal,
            separation: 3.0,
            spread: 1.0,
        }
    }
}

impl ScoreModel {
    fn draw<R: Rng + ?Sized>(&self, positive: bool, rng: &mut R) -> f64 {
        let location = if positive {
            self.separation / 2.0
        } else {
            -self.separation / 2.0
        };
        let noise = match self.family {
            ScoreFamily::Normal => Normal::new(0.0, 1.0).expect("unit normal").sample(rng),
            ScoreFamily::Logistic => {
                let u: f64 = rng.random_range(f64::EPSILON..1.0);
                (u / (1.0 - u)).ln()
            }
            ScoreFamily::Uniform => rng.random_range(-1.0..1.0),
        };
        let latent = location + self.spread * noise;
        1.0 / (1.0 + (-latent).exp())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selector {
    Positive,
    Negative,
    All,
}

impl Selector {
    fn matches(self, positive: bool) -> bool {
        match self {
            Selector::Positive => positive,
            Selector::Negative => !positive,
            Selector::All => true,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            Selector::Positive => "positive",
            Selector::Negative => "negative",
            Selector::All => "all",
        }
    }
}

/// Members matching `selector` (on latent truth) are sampled with
/// `inclusion_probability`. The first matching rule wins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnrichmentRule {
    pub selector: Selector,
    pub inclusion_probability: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepeatedRuns {
    pub n_runs: usize,
    /// Chance that a run's label differs from the base prediction.
    pub flip_probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupSpec {
    pub name: String,
    pub categories: Vec<String>,
    /// Relative category frequencies; uniform when absent.
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub n: usize,
    pub prevalence: f64,
    /// Exact number of positives instead of binomial sampling.
    #[serde(default)]
    pub fixed_positives: Option<usize>,
    #[serde(default)]
    pub score_model: ScoreModel,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub enrichment: Vec<EnrichmentRule>,
    /// Chance that the recorded reference label is flipped.
    #[serde(default)]
    pub label_noise: f64,
    #[serde(default)]
    pub runs: Option<RepeatedRuns>,
    /// Chance that the benchmark disagrees with the model's prediction.
    #[serde(default)]
    pub benchmark_flip_probability: Option<f64>,
    #[serde(default)]
    pub subgroups: Vec<SubgroupSpec>,
    #[serde(default)]
    pub seed: u64,
}

fn default_threshold() -> f64 {
    0.5
}

impl PopulationSpec {
    pub fn new(n: usize, prevalence: f64, seed: u64) -> Self {
        PopulationSpec {
            n,
            prevalence,
            fixed_positives: None,
            score_model: ScoreModel::default(),
            threshold: default_threshold(),
            enrichment: Vec::new(),
            label_noise: 0.0,
            runs: None,
            benchmark_flip_probability: None,
            subgroups: Vec::new(),
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("population size must be positive"));
        }
        if !(self.prevalence > 0.0 && self.prevalence < 1.0) {
            return Err(Error::invalid(format!(
                "prevalence must be in (0, 1), got {}",
                self.prevalence
            )));
        }
        if let Some(k) = self.fixed_positives {
            if k > self.n {
                return Err(Error::invalid(format!("fixed_positives {k} exceeds n {}", self.n)));
            }
        }
        if !(0.0..1.0).contains(&self.label_noise) {
            return Err(Error::invalid("label_noise must be in [0, 1)"));
        }
        if !(self.score_model.spread > 0.0 && self.score_model.separation.is_finite()) {
            return Err(Error::invalid(
                "score model needs a positive spread and finite separation",
            ));
        }
        for rule in &self.enrichment {
            let p = rule.inclusion_probability;
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::invalid(format!(
                    "enrichment probability must be in (0, 1], got {p}"
                )));
            }
        }
        if let Some(runs) = &self.runs {
            if runs.n_runs == 0 || !(0.0..=1.0).contains(&runs.flip_probability) {
                return Err(Error::invalid("runs need n_runs >= 1 and flip_probability in [0, 1]"));
            }
        }
        if let Some(p) = self.benchmark_flip_probability {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid("benchmark_flip_probability must be in [0, 1]"));
            }
        }
        for sg in &self.subgroups {
            if sg.categories.is_empty() {
                return Err(Error::invalid(format!("subgroup `{}` has no categories", sg.name)));
            }
            if let Some(w) = &sg.weights {
                if w.len() != sg.categories.len()
                    || w.iter().any(|&x| x.is_nan() || x < 0.0)
                    || w.iter().sum::<f64>() <= 0.0
                {
                    return Err(Error::invalid(format!("subgroup `{}` has invalid weights", sg.name)));
                }
            }
        }
        Ok(())
    }
}

/// Every member of a generated population.
#[derive(Debug, Clone)]
pub struct Population {
    spec: PopulationSpec,
    truth: Vec<bool>,
    observed: Vec<bool>,
    scores: Vec<f64>,
    benchmark: Option<Vec<bool>>,
    runs: Option<Vec<Vec<bool>>>,
    subgroups: Vec<Vec<usize>>,
}

/// Exact confusion metrics at one threshold, from latent truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthMetrics {
    pub threshold: f64,
    pub counts: ConfusionCounts,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    pub specificity: Option<f64>,
    pub npv: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub population_size: usize,
    pub positives: usize,
    pub prevalence: f64,
    pub at_threshold: TruthMetrics,
}

impl Population {
    pub fn generate(spec: &PopulationSpec) -> Result<Self> {
        spec.validate()?;
        let n = spec.n;
        let seed = spec.seed;

        let mut truth = vec![false; n];
        let mut rng = substream(seed, "synth/labels", 0);
        match spec.fixed_positives {
            Some(k) => {
                for i in index::sample(&mut rng, n, k) {
                    truth[i] = true;
                }
            }
            None => {
                for t in truth.iter_mut() {
                    *t = rng.random_bool(spec.prevalence);
                }
            }
        }

        let mut rng = substream(seed, "synth/scores", 0);
        let scores: Vec<f64> = truth.iter().map(|&t| spec.score_model.draw(t, &mut rng)).collect();

        let observed = if spec.label_noise > 0.0 {
            let mut rng = substream(seed, "synth/label-noise", 0);
            truth.iter().map(|&t| t ^ rng.random_bool(spec.label_noise)).collect()
        } else {
            truth.clone()
        };

        let predicted = |i: usize| scores[i] >= spec.threshold;
        let benchmark = spec.benchmark_flip_probability.map(|p| {
            let mut rng = substream(seed, "synth/benchmark", 0);
            (0..n).map(|i| predicted(i) ^ rng.random_bool(p)).collect()
        });
        let runs = spec.runs.map(|r| {
            let mut rng = substream(seed, "synth/runs", 0);
            (0..n)
                .map(|i| {
                    (0..r.n_runs)
                        .map(|_| predicted(i) ^ rng.random_bool(r.flip_probability))
                        .collect()
                })
                .collect()
        });

        let subgroups = spec
            .subgroups
            .iter()
            .enumerate()
            .map(|(g, sg)| {
                let mut rng = substream(seed, "synth/subgroups", g as u64);
                let weights = sg.weights.clone().unwrap_or_else(|| vec![1.0; sg.categories.len()]);
                let total: f64 = weights.iter().sum();
                (0..n)
                    .map(|_| {
                        let mut u = rng.random::<f64>() * total;
                        for (k, w) in weights.iter().enumerate() {
                            if u < *w {
                                return k;
                            }
                            u -= w;
                        }
                        weights.len() - 1
                    })
                    .collect()
            })
            .collect();

        Ok(Population {
            spec: spec.clone(),
            truth,
            observed,
            scores,
            benchmark,
            runs,
            subgroups,
        })
    }

    pub fn spec(&self) -> &PopulationSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.truth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truth.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.truth.iter().filter(|&&t| t).count()
    }

    /// Latent labels and scores, in population order.
    pub fn members(&self) -> impl Iterator<Item = (bool, f64)> + '_ {
        self.truth.iter().copied().zip(self.scores.iter().copied())
    }

    /// Exact population metrics at `threshold`, by enumeration.
    pub fn metrics_at(&self, threshold: f64) -> TruthMetrics {
        let mut counts = ConfusionCounts::new(0, 0, 0, 0);
        for (t, s) in self.members() {
            counts.add(Cell::classify(t, s >= threshold), 1.0, 1);
        }
        TruthMetrics {
            threshold,
            recall: Metric::Recall.value(&counts),
            precision: Metric::Precision.value(&counts),
            specificity: Metric::Specificity.value(&counts),
            npv: Metric::Npv.value(&counts),
            counts,
        }
    }

    pub fn truth(&self) -> Truth {
        let positives = self.positives();
        Truth {
            population_size: self.len(),
            positives,
            prevalence: positives as f64 / self.len() as f64,
            at_threshold: self.metrics_at(self.spec.threshold),
        }
    }

    fn case(&self, i: usize) -> EvaluationCase {
        let reference = if self.observed[i] {
            ReferenceLabel::Positive
        } else {
            ReferenceLabel::Negative
        };
        let score = self.scores[i];
        let mut case = EvaluationCase::new(format!("c{i:07}"), reference)
            .with_score(score)
            .with_predicted(score >= self.spec.threshold);
        case.benchmark_predicted = self.benchmark.as_ref().map(|b| b[i]);
        case.repeated_labels = self.runs.as_ref().map(|r| r[i].clone());
        for (g, sg) in self.spec.subgroups.iter().enumerate() {
            case.subgroups
                .insert(sg.name.clone(), sg.categories[self.subgroups[g][i]].clone());
        }
        case
    }

    fn metadata(&self) -> BTreeMap<String, String> {
        let mut meta = BTreeMap::new();
        meta.insert("source".to_string(), "synthetic".to_string());
        meta.insert("seed".to_string(), self.spec.seed.to_string());
        meta.insert(
            crate::datamodel::THRESHOLD_METADATA_KEY.to_string(),
            self.spec.threshold.to_string(),
        );
        meta
    }

    /// The whole population as a dataset, ignoring enrichment.
    pub fn full_dataset(&self) -> Result<Dataset> {
        Dataset::new(
            (0..self.len()).map(|i| self.case(i)).collect(),
            Vec::new(),
            self.metadata(),
        )
    }

    /// Dataset implied by the spec: the whole population without
    /// enrichment rules, else an enriched sample drawn with the spec seed.
    pub fn dataset(&self) -> Result<Dataset> {
        if self.spec.enrichment.is_empty() {
            self.full_dataset()
        } else {
            self.enriched_sample(&self.spec.enrichment, self.spec.seed)
        }
    }

    /// Poisson sample under `rules`, one stratum per rule plus a
    /// certainty stratum for members no rule matches.
    pub fn enriched_sample(&self, rules: &[EnrichmentRule], seed: u64) -> Result<Dataset> {
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); rules.len() + 1];
        for (i, &t) in self.truth.iter().enumerate() {
            let slot = rules.iter().position(|r| r.selector.matches(t)).unwrap_or(rules.len());
            members[slot].push(i);
        }

        let mut design = Vec::new();
        let mut chosen: Vec<(usize, usize)> = Vec::new();
        for (slot, pool) in members.iter().enumerate() {
            let (stratum_id, p) = match rules.get(slot) {
                Some(rule) => (
                    format!("enrich{}_{}", slot, rule.selector.as_str()),
                    rule.inclusion_probability,
                ),
                None if pool.is_empty() => continue,
                None => ("certain".to_string(), 1.0),
            };
            if pool.is_empty() {
                return Err(Error::Infeasible(format!(
                    "enrichment stratum `{stratum_id}` matches no member"
                )));
            }
            let mut rng: StreamRng = substream(seed, "synth/enrich", slot as u64);
            let take = if p >= 1.0 {
                pool.len()
            } else {
                Binomial::new(pool.len() as u64, p)
                    .expect("probability")
                    .sample(&mut rng) as usize
            };
            if take == 0 {
                return Err(Error::Infeasible(format!(
                    "enrichment stratum `{stratum_id}` drew an empty sample"
                )));
            }
            for k in index::sample(&mut rng, pool.len(), take) {
                chosen.push((pool[k], design.len()));
            }
            design.push(StratumSpec {
                stratum_id,
                inclusion_probability: p,
                description: format!(
                    "members with {} latent truth",
                    rules.get(slot).map_or("unmatched", |r| r.selector.as_str())
                ),
            });
        }
        chosen.sort_unstable();
        let cases = chosen
            .into_iter()
            .map(|(i, s)| self.case(i).with_stratum(design[s].stratum_id.clone()))
            .collect();
        let mut meta = self.metadata();
        meta.insert("enrichment_seed".to_string(), seed.to_string());
        Dataset::new(cases, design, meta)
    }
}

/// Generates the population and returns the evaluation dataset with its truth.
pub fn generate(spec: &PopulationSpec) -> Result<(Dataset, Truth)> {
    let population = Population::generate(spec)?;
    Ok((population.dataset()?, population.truth()))
}

/// JSON truth sidecar, marked so that dataset ingestion refuses it.
pub fn truth_sidecar_json(spec: &PopulationSpec, truth: &Truth) -> Result<String> {
    let mut value = serde_json::Map::new();
    value.insert(crate::datamodel::SIDECAR_KEY.to_string(), true.into());
    value.insert(
        "note".to_string(),
        "population truth for synthetic data; not an evaluation input".into(),
    );
    value.insert("spec".to_string(), serde_json::to_value(spec)?);
    value.insert("truth".to_string(), serde_json::to_value(truth)?);
    Ok(serde_json::to_string_pretty(&value)? + "\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{confusion, estimate, CiOptions};

    #[test]
    fn separated_population_has_perfect_truth() {
        let mut spec = PopulationSpec::new(2000, 0.5, 3);
        spec.score_model = ScoreModel {
            family: ScoreFamily::Uniform,
            separation: 4.0,
            spread: 1.0,
        };
        let (_, truth) = generate(&spec).unwrap();
        assert_eq!(truth.at_threshold.recall, Some(1.0));
        assert_eq!(truth.at_threshold.precision, Some(1.0));
    }

    #[test]
    fn fixed_count_mode_is_exact() {
        let mut spec = PopulationSpec::new(263_451, 179.0 / 263_451.0, 11);
        spec.fixed_positives = Some(179);
        let (ds, truth) = generate(&spec).unwrap();
        assert_eq!(truth.positives, 179);
        assert_eq!(ds.label_counts().positive, 179);
    }

    #[test]
    fn binomial_count_within_three_sigma() {
        let n = 263_451usize;
        let p = 0.0007;
        let spec = PopulationSpec::new(n, p, 12);
        let pop = Population::generate(&spec).unwrap();
        let mean = n as f64 * p;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((pop.positives() as f64 - mean).abs() <= 3.0 * sd);
    }

    #[test]
    fn truth_matches_metrics_on_full_population() {
        let mut spec = PopulationSpec::new(20_000, 0.05, 5);
        spec.threshold = 0.6;
        let pop = Population::generate(&spec).unwrap();
        let truth = pop.truth().at_threshold;
        let ds = pop.full_dataset().unwrap();
        let counts = confusion(&ds).unwrap();
        for (m, t) in [
            (Metric::Recall, truth.recall),
            (Metric::Precision, truth.precision),
            (Metric::Specificity, truth.specificity),
            (Metric::Npv, truth.npv),
        ] {
            assert!((m.value(&counts).unwrap() - t.unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn enrichment_biases_naive_precision_but_not_weighted() {
        let spec = PopulationSpec::new(200_000, 0.01, 21);
        let pop = Population::generate(&spec).unwrap();
        let truth = pop.metrics_at(0.5).precision.unwrap();
        let rules = [
            EnrichmentRule {
                selector: Selector::Positive,
                inclusion_probability: 1.0,
            },
            EnrichmentRule {
                selector: Selector::Negative,
                inclusion_probability: 2000.0 / 198_000.0,
            },
        ];
        let sample = pop.enriched_sample(&rules, 4).unwrap();
        let prevalence = sample.label_counts().prevalence().unwrap();
        assert!((prevalence - 0.5).abs() < 0.05, "{prevalence}");
        let unweighted = {
            let (cases, _, meta) = sample.clone().into_parts();
            let cases = cases
                .into_iter()
                .map(|mut c| {
                    c.stratum_id = None;
                    c
                })
                .collect();
            Dataset::new(cases, vec![], meta).unwrap()
        };
        let naive_unweighted = Metric::Precision.value(&confusion(&unweighted).unwrap()).unwrap();
        assert!(naive_unweighted - truth > 0.2, "naive {naive_unweighted} truth {truth}");
        let weighted = estimate(&sample, Metric::Precision, &CiOptions::default()).unwrap();
        assert!((weighted.value.unwrap() - truth).abs() < 0.1, "{weighted:?} vs {truth}");
    }

    #[test]
    fn empty_enrichment_stratum_is_infeasible() {
        let spec = PopulationSpec::new(100, 0.5, 1);
        let pop = Population::generate(&spec).unwrap();
        let rules = [EnrichmentRule {
            selector: Selector::Positive,
            inclusion_probability: 1e-9,
        }];
        assert!(matches!(pop.enriched_sample(&rules, 0), Err(Error::Infeasible(_))));
    }

    #[test]
    fn generation_is_reproducible() {
        let mut spec = PopulationSpec::new(500, 0.2, 77);
        spec.runs = Some(RepeatedRuns {
            n_runs: 3,
            flip_probability: 0.1,
        });
        spec.benchmark_flip_probability = Some(0.2);
        spec.label_noise = 0.05;
        spec.subgroups = vec![SubgroupSpec {
            name: "region".into(),
            categories: vec!["a".into(), "b".into()],
            weights: Some(vec![3.0, 1.0]),
        }];
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a, b);
        spec.seed = 78;
        assert_ne!(a.0, generate(&spec).unwrap().0);
    }

    #[test]
    fn sidecar_is_not_ingestible() {
        let spec = PopulationSpec::new(50, 0.2, 1);
        let (_, truth) = generate(&spec).unwrap();
        let text = truth_sidecar_json(&spec, &truth).unwrap();
        let one_line: String =
            serde_json::to_string(&serde_json::from_str::<serde_json::Value>(&text).unwrap()).unwrap();
        assert!(crate::datamodel::ingest_str(&one_line, crate::datamodel::Format::Jsonl).is_err());
    }
}
