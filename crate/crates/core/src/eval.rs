//! Predictive metrics, group fairness metrics and paired significance tests.

use std::collections::HashSet;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::model::ModelSnapshot;

/// `matrix[gold][predicted]` counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub classes: usize,
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn new(predictions: &[usize], labels: &[usize], classes: usize) -> Self {
        assert_eq!(predictions.len(), labels.len(), "predictions and labels must align");
        let mut counts = vec![vec![0; classes]; classes];
        for (&p, &y) in predictions.iter().zip(labels) {
            counts[y][p] += 1;
        }
        ConfusionMatrix { classes, counts }
    }

    pub fn true_positives(&self, class: usize) -> usize {
        self.counts[class][class]
    }

    pub fn false_positives(&self, class: usize) -> usize {
        (0..self.classes).filter(|&g| g != class).map(|g| self.counts[g][class]).sum()
    }

    pub fn false_negatives(&self, class: usize) -> usize {
        (0..self.classes).filter(|&p| p != class).map(|p| self.counts[class][p]).sum()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> usize {
        (0..self.classes).map(|c| self.counts[c][c]).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dataset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub size: usize,
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub macro_f1: f64,
    /// Set when some precision, recall or F1 had a zero denominator and was
    /// reported as 0.
    pub zero_division: bool,
}

fn ratio(num: usize, den: usize, flag: &mut bool) -> f64 {
    if den == 0 {
        *flag = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn evaluate_predictions(predictions: &[usize], labels: &[usize], class_names: &[String], dataset: &str) -> MetricsReport {
    let cm = ConfusionMatrix::new(predictions, labels, class_names.len());
    let mut zero_division = false;
    let per_class: Vec<ClassMetrics> = class_names
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let tp = cm.true_positives(c);
            let fp = cm.false_positives(c);
            let fn_ = cm.false_negatives(c);
            ClassMetrics {
                class: name.clone(),
                precision: ratio(tp, tp + fp, &mut zero_division),
                recall: ratio(tp, tp + fn_, &mut zero_division),
                f1: ratio(2 * tp, 2 * tp + fp + fn_, &mut zero_division),
                support: tp + fn_,
            }
        })
        .collect();
    let macro_f1 = per_class.iter().map(|m| m.f1).sum::<f64>() / per_class.len() as f64;
    MetricsReport {
        dataset: dataset.to_string(),
        model: None,
        seed: None,
        size: cm.total(),
        accuracy: ratio(cm.correct(), cm.total(), &mut zero_division),
        per_class,
        macro_f1,
        zero_division,
    }
}

/// Unweighted mean of per-class F1, zero-division counted as 0.
pub fn macro_f1(predictions: &[usize], labels: &[usize], classes: usize) -> f64 {
    let cm = ConfusionMatrix::new(predictions, labels, classes);
    let total: f64 = (0..classes)
        .map(|c| {
            let tp = cm.true_positives(c);
            let den = 2 * tp + cm.false_positives(c) + cm.false_negatives(c);
            if den == 0 {
                0.0
            } else {
                2.0 * tp as f64 / den as f64
            }
        })
        .sum();
    total / classes as f64
}

pub fn evaluate(model: &ModelSnapshot, docs: &[Document], dataset: &str) -> Result<MetricsReport> {
    if docs.is_empty() {
        return Err(Error::Dataset(format!("cannot evaluate on an empty split of {dataset}")));
    }
    let preds = model.predict_labels(docs);
    let labels: Vec<usize> = docs.iter().map(|d| d.label).collect();
    let mut report = evaluate_predictions(&preds, &labels, &model.config.classes, dataset);
    report.seed = Some(model.config.seed);
    Ok(report)
}

impl MetricsReport {
    /// Plain-text table: one column per class F1, then accuracy and macro F1.
    pub fn to_table(&self, row_label: &str) -> String {
        let mut out = String::new();
        let mut header = format!("{:<20}", "Model");
        for c in &self.per_class {
            let _ = write!(header, " | {:>12}", format!("{} F1", c.class));
        }
        let _ = write!(header, " | {:>10} | {:>10}", "Accuracy", "Macro F1");
        out.push_str(&header);
        out.push('\n');
        out.push_str(&"-".repeat(header.len()));
        out.push('\n');
        let mut row = format!("{:<20}", row_label);
        for c in &self.per_class {
            let _ = write!(row, " | {:>12.3}", c.f1);
        }
        let _ = write!(row, " | {:>10.3} | {:>10.3}", self.accuracy, self.macro_f1);
        out.push_str(&row);
        out.push('\n');
        out
    }
}

/// A named group of documents identified by lowercase terms.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubpopulationSpec {
    pub name: String,
    pub terms: Vec<String>,
}

impl SubpopulationSpec {
    pub fn new(name: impl Into<String>, terms: impl IntoIterator<Item = impl AsRef<str>>) -> Result<Self> {
        let terms: Vec<String> = terms
            .into_iter()
            .map(|t| t.as_ref().trim().to_lowercase())
            .filter(|t| !t.is_empty())
            .collect();
        let name = name.into();
        if terms.is_empty() {
            return Err(Error::Invalid(format!("subpopulation {name} has no terms")));
        }
        Ok(SubpopulationSpec { name, terms })
    }

    /// True iff some token equals some term, ignoring case. Substrings do not
    /// count: "shearing" does not match "she".
    pub fn matches(&self, tokens: &[String]) -> bool {
        let terms: HashSet<&str> = self.terms.iter().map(String::as_str).collect();
        tokens.iter().any(|t| terms.contains(t.to_lowercase().as_str()))
    }
}

pub fn subpop_membership(doc: &Document, spec: &SubpopulationSpec) -> bool {
    spec.matches(&doc.tokens)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRates {
    pub name: String,
    pub size: usize,
    pub negatives: usize,
    pub positives: usize,
    pub fpr: Option<f64>,
    pub fnr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub positive_class: usize,
    pub fpr: f64,
    pub fnr: f64,
    pub fped: f64,
    pub fned: f64,
    pub groups: Vec<GroupRates>,
    /// Groups whose rate was undefined and therefore left out of a sum.
    pub warnings: Vec<String>,
}

fn error_rates(predictions: &[usize], labels: &[usize], positive: usize, members: &[bool]) -> (usize, usize, Option<f64>, Option<f64>) {
    let (mut neg, mut fp, mut pos, mut fn_) = (0, 0, 0, 0);
    for ((&p, &y), &m) in predictions.iter().zip(labels).zip(members) {
        if !m {
            continue;
        }
        if y == positive {
            pos += 1;
            if p != positive {
                fn_ += 1;
            }
        } else {
            neg += 1;
            if p == positive {
                fp += 1;
            }
        }
    }
    let fpr = (neg > 0).then(|| fp as f64 / neg as f64);
    let fnr = (pos > 0).then(|| fn_ as f64 / pos as f64);
    (neg, pos, fpr, fnr)
}

/// False positive / false negative equality differences:
/// `FPED = Σ_t |FPR − FPR_t|`, `FNED = Σ_t |FNR − FNR_t|`, with
/// `positive_class` against the rest. A group with no negatives (or no
/// positives) has an undefined rate; its term is skipped and a warning is
/// recorded instead of imputing zero.
pub fn bias_metrics(
    predictions: &[usize],
    labels: &[usize],
    docs: &[Document],
    specs: &[SubpopulationSpec],
    positive_class: usize,
) -> Result<BiasReport> {
    if predictions.len() != labels.len() || labels.len() != docs.len() {
        return Err(Error::Invalid("predictions, labels and documents must align".into()));
    }
    let everyone = vec![true; docs.len()];
    let (_, _, fpr, fnr) = error_rates(predictions, labels, positive_class, &everyone);
    let fpr = fpr.ok_or_else(|| Error::Invalid("no negative examples; FPR undefined".into()))?;
    let fnr = fnr.ok_or_else(|| Error::Invalid("no positive examples; FNR undefined".into()))?;

    let mut report = BiasReport {
        positive_class,
        fpr,
        fnr,
        fped: 0.0,
        fned: 0.0,
        groups: Vec::new(),
        warnings: Vec::new(),
    };
    for spec in specs {
        let members: Vec<bool> = docs.iter().map(|d| spec.matches(&d.tokens)).collect();
        let size = members.iter().filter(|&&m| m).count();
        let (negatives, positives, g_fpr, g_fnr) = error_rates(predictions, labels, positive_class, &members);
        if size == 0 {
            report.warnings.push(format!("subpopulation {} selects no documents; skipped", spec.name));
        }
        match g_fpr {
            Some(r) => report.fped += (fpr - r).abs(),
            None if size > 0 => report
                .warnings
                .push(format!("subpopulation {} has no negatives; FPR term skipped", spec.name)),
            None => {}
        }
        match g_fnr {
            Some(r) => report.fned += (fnr - r).abs(),
            None if size > 0 => report
                .warnings
                .push(format!("subpopulation {} has no positives; FNR term skipped", spec.name)),
            None => {}
        }
        report.groups.push(GroupRates {
            name: spec.name.clone(),
            size,
            negatives,
            positives,
            fpr: g_fpr,
            fnr: g_fnr,
        });
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomizationResult {
    pub observed_delta: f64,
    pub p_value: f64,
    pub iterations: usize,
    pub alpha: f64,
    pub significant: bool,
}

/// Paired approximate randomization test on macro F1. Each iteration swaps
/// every example's pair of predictions with probability 0.5 and checks
/// whether the shuffled gap is at least as large as the observed one;
/// `p = (hits + 1) / (iterations + 1)`. Iteration `i` draws from its own
/// ChaCha stream, so the result depends only on `seed`.
pub fn approx_randomization_test(
    preds_a: &[usize],
    preds_b: &[usize],
    labels: &[usize],
    classes: usize,
    iterations: usize,
    alpha: f64,
    seed: u64,
) -> Result<RandomizationResult> {
    if preds_a.len() != preds_b.len() || preds_a.len() != labels.len() {
        return Err(Error::Invalid("prediction arrays must align with labels".into()));
    }
    let observed = macro_f1(preds_a, labels, classes) - macro_f1(preds_b, labels, classes);
    let threshold = observed.abs() - 1e-12;
    let hits: usize = (0..iterations)
        .into_par_iter()
        .map(|it| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(it as u64);
            let mut a = Vec::with_capacity(labels.len());
            let mut b = Vec::with_capacity(labels.len());
            for (&x, &y) in preds_a.iter().zip(preds_b) {
                if rng.gen_bool(0.5) {
                    a.push(y);
                    b.push(x);
                } else {
                    a.push(x);
                    b.push(y);
                }
            }
            let delta = macro_f1(&a, labels, classes) - macro_f1(&b, labels, classes);
            usize::from(delta.abs() >= threshold)
        })
        .sum();
    let p_value = (hits + 1) as f64 / (iterations + 1) as f64;
    Ok(RandomizationResult {
        observed_delta: observed,
        p_value,
        iterations,
        alpha,
        significant: p_value < alpha,
    })
}
