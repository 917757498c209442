//! Workflows composed from the core pieces: disable-and-fine-tune, and the
//! rank-ablation experiment (train, explain, collect simulated judgements,
//! disable each rank combination, compare on test).

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, EmbeddingTable, Vocabulary};
use crate::error::{Error, Result};
use crate::eval::{approx_randomization_test, bias_metrics, evaluate_predictions, BiasReport, MetricsReport, SubpopulationSpec};
use crate::features::{feature_clouds, profile_features, Dedup, Rank, WordCloudData, DEFAULT_TOP_N};
use crate::feedback::{create_session, simulate_answers, KeywordOracle, Lexicon, Policy, TaskType, DEFAULT_LEXICON_TOP_K};
use crate::model::{finetune_head, init_model, train, ArchConfig, FinetuneOptions, ModelConfig, ModelSnapshot, TrainConfig, TrainingLog};

/// Disables `features` and re-trains the head. An empty set returns the
/// model unchanged unless `options.always` is set.
pub fn apply_disabled(
    model: &ModelSnapshot,
    features: &BTreeSet<usize>,
    dataset: &Dataset,
    config: &TrainConfig,
    options: FinetuneOptions,
) -> Result<(ModelSnapshot, Option<TrainingLog>)> {
    let masked = model.disable_features(features)?;
    if features.is_empty() && !options.always {
        return Ok((masked, None));
    }
    let (tuned, log) = finetune_head(&masked, dataset, config)?;
    Ok((tuned, Some(log)))
}

/// Clouds for every feature of a model, profiled on the training split.
pub fn all_clouds(model: &ModelSnapshot, dataset: &Dataset, top_n: usize) -> Vec<Vec<WordCloudData>> {
    profile_features(model, &dataset.train)
        .iter()
        .map(|p| feature_clouds(model, p, top_n, Dedup::Max))
        .collect()
}

/// The rank combinations compared against the original model.
pub const CONDITIONS: [(&str, &[Rank]); 7] = [
    ("Original", &[]),
    ("Disabling A", &[Rank::A]),
    ("Disabling B", &[Rank::B]),
    ("Disabling C", &[Rank::C]),
    ("Disabling AB", &[Rank::A, Rank::B]),
    ("Disabling AC", &[Rank::A, Rank::C]),
    ("Disabling BC", &[Rank::B, Rank::C]),
];

/// Experiment protocol. Learning rates are raised over the training
/// defaults: at 1e-3 the small-corpus runs stop before filters specialize, and
/// a head-only fine-tune barely moves off its warm start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub seeds: Vec<u64>,
    pub arch: ArchConfig,
    pub max_len: usize,
    pub train: TrainConfig,
    pub finetune: TrainConfig,
    pub respondents: usize,
    pub noise: f64,
    pub top_n: usize,
    pub iterations: usize,
    pub alpha: f64,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            seeds: vec![1, 2, 3],
            arch: ArchConfig::default(),
            max_len: crate::corpus::DEFAULT_MAX_LEN,
            train: TrainConfig {
                learning_rate: 3e-3,
                ..Default::default()
            },
            finetune: TrainConfig {
                learning_rate: 1e-2,
                ..Default::default()
            },
            respondents: 10,
            noise: 0.1,
            top_n: DEFAULT_TOP_N,
            iterations: 1000,
            alpha: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation (n − 1); 0 for a single run.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> MeanStd {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        MeanStd { mean, std }
    }
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.3} ± {:.2}", self.mean, self.std)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub feature_scores: Vec<f64>,
    pub disabled: BTreeMap<String, BTreeSet<usize>>,
    pub metrics: BTreeMap<String, MetricsReport>,
    #[serde(skip)]
    pub predictions: BTreeMap<String, Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub condition: String,
    pub class_f1: Vec<MeanStd>,
    pub accuracy: MeanStd,
    pub macro_f1: MeanStd,
    /// Randomization test against the original on predictions pooled over seeds.
    pub p_value: Option<f64>,
    pub significant: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub dataset: String,
    pub classes: Vec<String>,
    pub runs: Vec<SeedRun>,
    pub summary: Vec<ConditionSummary>,
}

impl AblationReport {
    /// Mean macro F1 of a condition, by full name or short name (`"AB"`).
    pub fn macro_f1(&self, condition: &str) -> Option<f64> {
        self.summary
            .iter()
            .find(|s| s.condition == condition || s.condition.trim_start_matches("Disabling ") == condition)
            .map(|s| s.macro_f1.mean)
    }

    /// Condition names ordered from the largest macro-F1 drop to the smallest.
    pub fn drop_order(&self) -> Vec<String> {
        let mut rows: Vec<&ConditionSummary> = self.summary.iter().collect();
        rows.sort_by(|a, b| a.macro_f1.mean.total_cmp(&b.macro_f1.mean));
        rows.iter()
            .map(|s| s.condition.trim_start_matches("Disabling ").to_string())
            .collect()
    }

    /// Plain-text results table: per-class F1, accuracy and macro F1 as
    /// mean ± SD over seeds.
    pub fn to_table(&self) -> String {
        let mut header = vec!["Model".to_string()];
        header.extend(self.classes.iter().map(|c| format!("{c} F1")));
        header.extend(["Accuracy".to_string(), "Macro F1".to_string(), "p".to_string()]);
        let mut rows = vec![header];
        for s in &self.summary {
            let mut row = vec![s.condition.clone()];
            row.extend(s.class_f1.iter().map(|m| m.to_string()));
            row.push(s.accuracy.to_string());
            row.push(s.macro_f1.to_string());
            row.push(s.p_value.map_or("-".into(), |p| format!("{p:.3}")));
            rows.push(row);
        }
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = format!("Test dataset: {}\n", self.dataset);
        for row in rows {
            let cells: Vec<String> = row.iter().zip(&widths).map(|(cell, w)| format!("{cell:<w$}")).collect();
            out.push_str(cells.join(" | ").trim_end());
            out.push('\n');
        }
        out
    }
}

/// Runs the rank ablation for every seed (in parallel) and summarizes.
pub fn rank_ablation(
    dataset: &Dataset,
    vocab: Arc<Vocabulary>,
    embeddings: Arc<EmbeddingTable>,
    oracle: &KeywordOracle,
    config: &AblationConfig,
) -> Result<AblationReport> {
    if config.seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    if dataset.test.is_empty() {
        return Err(Error::Dataset("rank ablation needs a test split".into()));
    }
    let runs: Vec<SeedRun> = config
        .seeds
        .par_iter()
        .map(|&seed| ablation_run(dataset, vocab.clone(), embeddings.clone(), oracle, config, seed))
        .collect::<Result<_>>()?;

    let labels: Vec<usize> = dataset.test.iter().map(|d| d.label).collect();
    let pooled_labels: Vec<usize> = runs.iter().flat_map(|_| labels.iter().copied()).collect();
    let pooled = |name: &str| -> Vec<usize> {
        runs.iter()
            .flat_map(|r| r.predictions[name].iter().copied())
            .collect()
    };
    let original = pooled(CONDITIONS[0].0);
    let classes = dataset.class_count();
    let mut summary = Vec::with_capacity(CONDITIONS.len());
    for (name, _) in CONDITIONS {
        let reports: Vec<&MetricsReport> = runs.iter().map(|r| &r.metrics[name]).collect();
        let class_f1 = (0..classes)
            .map(|c| MeanStd::of(&reports.iter().map(|m| m.per_class[c].f1).collect::<Vec<_>>()))
            .collect();
        let (p_value, significant) = if name == CONDITIONS[0].0 {
            (None, None)
        } else {
            let test = approx_randomization_test(
                &original,
                &pooled(name),
                &pooled_labels,
                classes,
                config.iterations,
                config.alpha,
                config.seeds[0],
            )?;
            (Some(test.p_value), Some(test.significant))
        };
        summary.push(ConditionSummary {
            condition: name.to_string(),
            class_f1,
            accuracy: MeanStd::of(&reports.iter().map(|m| m.accuracy).collect::<Vec<_>>()),
            macro_f1: MeanStd::of(&reports.iter().map(|m| m.macro_f1).collect::<Vec<_>>()),
            p_value,
            significant,
        });
    }
    Ok(AblationReport {
        dataset: dataset.name.clone(),
        classes: dataset.classes.clone(),
        runs,
        summary,
    })
}

fn ablation_run(
    dataset: &Dataset,
    vocab: Arc<Vocabulary>,
    embeddings: Arc<EmbeddingTable>,
    oracle: &KeywordOracle,
    config: &AblationConfig,
    seed: u64,
) -> Result<SeedRun> {
    let model_config = ModelConfig {
        arch: config.arch.clone(),
        max_len: config.max_len,
        embed_dim: embeddings.dim(),
        classes: dataset.classes.clone(),
        seed,
    };
    let initial = init_model(model_config, vocab, embeddings)?;
    let train_config = TrainConfig {
        seed,
        ..config.train.clone()
    };
    let (model, _) = train(&initial, dataset, &train_config)?;

    let task = if dataset.class_count() == 2 {
        TaskType::BinaryGraded
    } else {
        TaskType::ClassOrNone
    };
    let clouds = all_clouds(&model, dataset, config.top_n);
    let policy = Policy::ScoreRank {
        disable: BTreeSet::new(),
    };
    let mut session = create_session(format!("exp1-{seed}"), "exp1", &model, clouds, task, policy)?;
    for answer in simulate_answers(&session, oracle, config.respondents, config.noise, seed)? {
        session.add_answer(answer)?;
    }
    let aggregation = session.aggregate(&model)?.clone();
    let ranking = aggregation.ranking.expect("score-rank policy ranks features");
    let feature_scores = aggregation
        .decisions
        .iter()
        .map(|d| d.mean_score.unwrap_or(0.0))
        .collect();

    let labels: Vec<usize> = dataset.test.iter().map(|d| d.label).collect();
    let finetune = TrainConfig {
        seed,
        ..config.finetune.clone()
    };
    let mut run = SeedRun {
        seed,
        feature_scores,
        disabled: BTreeMap::new(),
        metrics: BTreeMap::new(),
        predictions: BTreeMap::new(),
    };
    for (name, ranks) in CONDITIONS {
        let disabled: BTreeSet<usize> = ranks.iter().flat_map(|&r| ranking.ids(r).iter().copied()).collect();
        let (variant, _) = apply_disabled(&model, &disabled, dataset, &finetune, FinetuneOptions::default())?;
        let predictions = variant.predict_labels(&dataset.test);
        let mut report = evaluate_predictions(&predictions, &labels, &dataset.classes, &dataset.name);
        report.seed = Some(seed);
        report.model = Some(name.to_string());
        run.disabled.insert(name.to_string(), disabled);
        run.metrics.insert(name.to_string(), report);
        run.predictions.insert(name.to_string(), predictions);
    }
    Ok(run)
}

/// Male and female subpopulations defined by the bundled lexicons.
pub fn gender_subpopulations() -> Vec<SubpopulationSpec> {
    vec![
        SubpopulationSpec::new("male", Lexicon::male().terms()).expect("bundled lexicon is non-empty"),
        SubpopulationSpec::new("female", Lexicon::female().terms()).expect("bundled lexicon is non-empty"),
    ]
}

/// Train, disable every feature whose cloud shows a gender term, fine-tune,
/// and compare predictive and fairness metrics on test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasConfig {
    pub seeds: Vec<u64>,
    pub arch: ArchConfig,
    pub max_len: usize,
    pub train: TrainConfig,
    pub finetune: TrainConfig,
    pub top_n: usize,
    pub top_k: usize,
    pub positive_class: usize,
}

impl Default for BiasConfig {
    fn default() -> Self {
        let ablation = AblationConfig::default();
        BiasConfig {
            seeds: ablation.seeds,
            arch: ablation.arch,
            max_len: ablation.max_len,
            train: ablation.train,
            finetune: ablation.finetune,
            top_n: DEFAULT_TOP_N,
            top_k: DEFAULT_LEXICON_TOP_K,
            positive_class: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasRun {
    pub seed: u64,
    pub disabled: BTreeSet<usize>,
    pub original: MetricsReport,
    pub debugged: MetricsReport,
    pub original_bias: BiasReport,
    pub debugged_bias: BiasReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasSummary {
    pub runs: Vec<BiasRun>,
    pub macro_f1: (MeanStd, MeanStd),
    pub fped: (MeanStd, MeanStd),
    pub fned: (MeanStd, MeanStd),
}

impl BiasSummary {
    pub fn to_table(&self) -> String {
        let mut out = String::from("Model    | Macro F1     | FPED         | FNED\n");
        for (name, pick) in [("Original", 0), ("Debugged", 1)] {
            let get = |pair: &(MeanStd, MeanStd)| if pick == 0 { pair.0 } else { pair.1 };
            out.push_str(&format!(
                "{name:<8} | {} | {} | {}\n",
                get(&self.macro_f1),
                get(&self.fped),
                get(&self.fned)
            ));
        }
        out
    }
}

pub fn bias_debug(dataset: &Dataset, vocab: Arc<Vocabulary>, embeddings: Arc<EmbeddingTable>, config: &BiasConfig) -> Result<BiasSummary> {
    if config.seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    if config.positive_class >= dataset.class_count() {
        return Err(Error::Config(format!("positive class {} out of range", config.positive_class)));
    }
    let runs: Vec<BiasRun> = config
        .seeds
        .par_iter()
        .map(|&seed| bias_run(dataset, vocab.clone(), embeddings.clone(), config, seed))
        .collect::<Result<_>>()?;
    let stat = |f: &dyn Fn(&BiasRun) -> f64| MeanStd::of(&runs.iter().map(f).collect::<Vec<_>>());
    Ok(BiasSummary {
        macro_f1: (stat(&|r| r.original.macro_f1), stat(&|r| r.debugged.macro_f1)),
        fped: (stat(&|r| r.original_bias.fped), stat(&|r| r.debugged_bias.fped)),
        fned: (stat(&|r| r.original_bias.fned), stat(&|r| r.debugged_bias.fned)),
        runs,
    })
}

fn bias_run(dataset: &Dataset, vocab: Arc<Vocabulary>, embeddings: Arc<EmbeddingTable>, config: &BiasConfig, seed: u64) -> Result<BiasRun> {
    let model_config = ModelConfig {
        arch: config.arch.clone(),
        max_len: config.max_len,
        embed_dim: embeddings.dim(),
        classes: dataset.classes.clone(),
        seed,
    };
    let initial = init_model(model_config, vocab, embeddings)?;
    let (model, _) = train(&initial, dataset, &TrainConfig { seed, ..config.train.clone() })?;
    let clouds = all_clouds(&model, dataset, config.top_n);
    let policy = Policy::GenderLexicon { top_k: config.top_k };
    let mut session = create_session(format!("bias-{seed}"), "bias", &model, clouds, TaskType::ClassChoice, policy)?;
    let disabled = session.aggregate(&model)?.disabled.clone();
    let finetune = TrainConfig {
        seed,
        ..config.finetune.clone()
    };
    let (debugged, _) = apply_disabled(&model, &disabled, dataset, &finetune, FinetuneOptions::default())?;

    let labels: Vec<usize> = dataset.test.iter().map(|d| d.label).collect();
    let groups = gender_subpopulations();
    let assess = |m: &ModelSnapshot| -> Result<(MetricsReport, BiasReport)> {
        let predictions = m.predict_labels(&dataset.test);
        let mut report = evaluate_predictions(&predictions, &labels, &dataset.classes, &dataset.name);
        report.seed = Some(seed);
        let bias = bias_metrics(&predictions, &labels, &dataset.test, &groups, config.positive_class)?;
        Ok((report, bias))
    };
    let (original, original_bias) = assess(&model)?;
    let (debugged, debugged_bias) = assess(&debugged)?;
    Ok(BiasRun {
        seed,
        disabled,
        original,
        debugged,
        original_bias,
        debugged_bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::testutil::tiny_model;
    use crate::model::CnnConfig;
    use crate::synth::{sentiment_corpus, SentimentSpec};

    #[test]
    fn mean_std_matches_hand_values() {
        let m = MeanStd::of(&[0.7, 0.8, 0.9]);
        assert!((m.mean - 0.8).abs() < 1e-12);
        assert!((m.std - 0.1).abs() < 1e-12);
        assert_eq!(MeanStd::of(&[0.5]).std, 0.0);
        assert_eq!(m.to_string(), "0.800 ± 0.10");
    }

    #[test]
    fn empty_disable_set_is_identity() {
        let m = tiny_model(ArchConfig::default(), 5, 3, 6, 0);
        let ds = Dataset::new("x", vec!["neg".into(), "pos".into()]).unwrap();
        let (out, log) = apply_disabled(&m, &BTreeSet::new(), &ds, &TrainConfig::default(), FinetuneOptions::default()).unwrap();
        assert_eq!(out, m);
        assert!(log.is_none());
    }

    #[test]
    fn small_ablation_runs_end_to_end() {
        let fixture = sentiment_corpus(&SentimentSpec {
            train: 60,
            dev: 20,
            test: 40,
            embed_dim: 10,
            ..Default::default()
        })
        .unwrap();
        let config = AblationConfig {
            seeds: vec![1, 2],
            arch: ArchConfig::Cnn(CnnConfig {
                filter_sizes: vec![2, 3],
                filters_per_size: 3,
            }),
            max_len: 30,
            train: TrainConfig {
                max_epochs: 3,
                patience: 2,
                ..Default::default()
            },
            finetune: TrainConfig {
                max_epochs: 2,
                patience: 2,
                ..Default::default()
            },
            iterations: 50,
            ..Default::default()
        };
        let report = rank_ablation(&fixture.dataset, fixture.vocab, fixture.embeddings, &fixture.oracle, &config).unwrap();
        assert_eq!(report.summary.len(), 7);
        assert_eq!(report.runs.len(), 2);
        for run in &report.runs {
            assert!(run.disabled["Original"].is_empty());
            assert_eq!(run.disabled["Disabling AB"].len(), 4);
            let a = &run.disabled["Disabling A"];
            let c = &run.disabled["Disabling C"];
            assert!(a.is_disjoint(c));
        }
        let table = report.to_table();
        assert!(table.contains("Disabling BC"));
        assert!(table.contains("negative F1"));
        assert_eq!(report.drop_order().len(), 7);
    }
}
