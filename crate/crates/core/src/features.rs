//! Word-cloud data for hidden features, scoring of human answers and the
//! A/B/C ranking.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::lrp::{feature_relevance_bilstm, LrpConfig, RelevanceRecord};
use crate::model::{argmax, Extractor, ModelSnapshot};

pub const DEFAULT_TOP_N: usize = 40;
/// Words taken per document and sign for recurrent feature clouds.
pub const WORDS_PER_DOC: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FeatureUnit {
    Cnn { filter_size: usize },
    Bilstm { direction: String, unit: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileEntry {
    pub doc_id: String,
    pub ngram: String,
    pub activation: f64,
    pub position: usize,
}

/// A word picked from one document for a recurrent feature's clouds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignedWord {
    pub doc_id: String,
    pub text: String,
    pub relevance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureProfile {
    pub feature_id: usize,
    pub unit: FeatureUnit,
    /// One entry per training document, zero activations included.
    pub entries: Vec<ProfileEntry>,
    /// Top positive and negative words per document (recurrent models only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub signed_words: Vec<SignedWord>,
}

impl FeatureProfile {
    pub fn is_dead(&self) -> bool {
        self.entries.iter().all(|e| e.activation <= 0.0) && self.signed_words.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Polarity {
    Activation,
    PositiveRelevance,
    NegativeRelevance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Dedup {
    #[default]
    Max,
    Sum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudItem {
    pub text: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordCloudData {
    pub feature_id: usize,
    pub polarity: Polarity,
    pub suggested_class: usize,
    /// Sorted by weight, descending; texts are unique.
    pub items: Vec<CloudItem>,
    pub top_n: usize,
    /// Set when the feature never fired; such features are disable candidates.
    pub dead: bool,
}

impl WordCloudData {
    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.items.iter().map(|i| i.text.as_str())
    }
}

/// Listing row for a model's features.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSummary {
    pub feature_id: usize,
    pub suggested_class: usize,
    pub dead: bool,
    pub disabled: bool,
}

/// Records, for every feature and training document, the input that won
/// the max pooling and its activation. N-grams are rendered from the
/// original tokens and stop at the end of the document.
pub fn profile_features(model: &ModelSnapshot, train: &[Document]) -> Vec<FeatureProfile> {
    let d = model.feature_count();
    let per_doc: Vec<Vec<(ProfileEntry, Vec<SignedWord>)>> = train
        .par_iter()
        .map(|doc| profile_document(model, doc))
        .collect();

    let mut profiles: Vec<FeatureProfile> = (0..d)
        .map(|i| FeatureProfile {
            feature_id: i,
            unit: feature_unit(model, i),
            entries: Vec::with_capacity(train.len()),
            signed_words: Vec::new(),
        })
        .collect();
    for doc in per_doc {
        for (i, (entry, words)) in doc.into_iter().enumerate() {
            profiles[i].entries.push(entry);
            profiles[i].signed_words.extend(words);
        }
    }
    profiles
}

fn feature_unit(model: &ModelSnapshot, feature: usize) -> FeatureUnit {
    match &model.extractor {
        Extractor::Cnn(cnn) => FeatureUnit::Cnn {
            filter_size: cnn.bank_of(feature).0.width,
        },
        Extractor::Bilstm(net) => {
            let (direction, unit) = net.direction_of(feature);
            FeatureUnit::Bilstm {
                direction: direction.to_string(),
                unit,
            }
        }
    }
}

fn profile_document(model: &ModelSnapshot, doc: &Document) -> Vec<(ProfileEntry, Vec<SignedWord>)> {
    let encoded = model.encode(doc);
    let (features, argmax) = model.extract(&encoded);
    let content = doc.tokens.len().min(model.max_len());
    let lrp = LrpConfig::default();
    (0..features.len())
        .map(|i| {
            let start = argmax[i];
            let width = model.filter_size(i).unwrap_or(1);
            let end = (start + width).min(content);
            let ngram = doc.tokens[start.min(end)..end].join(" ");
            let entry = ProfileEntry {
                doc_id: doc.id.clone(),
                ngram,
                activation: features[i],
                position: start,
            };
            let words = match &model.extractor {
                Extractor::Cnn(_) => Vec::new(),
                Extractor::Bilstm(_) => {
                    let r = feature_relevance_bilstm(model, &encoded, &doc.id, i, &lrp);
                    top_signed_words(&RelevanceRecord::new(&r, &doc.tokens))
                }
            };
            (entry, words)
        })
        .collect()
}

/// The `WORDS_PER_DOC` most positive and most negative words of one
/// relevance record. Zero scores are neither.
pub fn top_signed_words(record: &RelevanceRecord) -> Vec<SignedWord> {
    let mut scored: Vec<(usize, f64)> = record
        .scores
        .iter()
        .copied()
        .enumerate()
        .filter(|&(i, s)| s != 0.0 && record.tokens.get(i).is_some_and(|t| t != "<pad>"))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let word = |&(i, s): &(usize, f64)| SignedWord {
        doc_id: record.doc_id.clone(),
        text: record.tokens[i].clone(),
        relevance: s,
    };
    let positive = scored.iter().filter(|(_, s)| *s > 0.0).take(WORDS_PER_DOC).map(word);
    let negative = scored.iter().rev().filter(|(_, s)| *s < 0.0).take(WORDS_PER_DOC).map(word);
    positive.chain(negative).collect()
}

/// Merges duplicate texts, sorts by weight descending (ties by text) and
/// keeps the first `top_n`.
fn build_items(pairs: impl Iterator<Item = (String, f64)>, top_n: usize, dedup: Dedup) -> Vec<CloudItem> {
    let mut merged: BTreeMap<String, f64> = BTreeMap::new();
    for (text, weight) in pairs {
        merged
            .entry(text)
            .and_modify(|w| match dedup {
                Dedup::Max => *w = w.max(weight),
                Dedup::Sum => *w += weight,
            })
            .or_insert(weight);
    }
    let mut items: Vec<CloudItem> = merged.into_iter().map(|(text, weight)| CloudItem { text, weight }).collect();
    items.sort_by(|a, b| b.weight.total_cmp(&a.weight).then_with(|| a.text.cmp(&b.text)));
    items.truncate(top_n);
    items
}

/// Cloud of a CNN feature: the n-grams with the largest activations.
/// Entries with activation 0 (or an empty n-gram) never appear.
pub fn cloud_data(profile: &FeatureProfile, suggested_class: usize, top_n: usize, dedup: Dedup) -> WordCloudData {
    let items = build_items(
        profile
            .entries
            .iter()
            .filter(|e| e.activation > 0.0 && !e.ngram.is_empty())
            .map(|e| (e.ngram.clone(), e.activation)),
        top_n,
        dedup,
    );
    WordCloudData {
        feature_id: profile.feature_id,
        polarity: Polarity::Activation,
        suggested_class,
        dead: items.is_empty(),
        items,
        top_n,
    }
}

fn signed_clouds(
    feature_id: usize,
    words: &[SignedWord],
    suggested_class: usize,
    top_n: usize,
    dedup: Dedup,
) -> (WordCloudData, WordCloudData) {
    let make = |polarity, keep: fn(f64) -> bool| {
        let items = build_items(
            words.iter().filter(|w| keep(w.relevance)).map(|w| (w.text.clone(), w.relevance.abs())),
            top_n,
            dedup,
        );
        WordCloudData {
            feature_id,
            polarity,
            suggested_class,
            dead: words.is_empty(),
            items,
            top_n,
        }
    };
    (
        make(Polarity::PositiveRelevance, |r| r > 0.0),
        make(Polarity::NegativeRelevance, |r| r < 0.0),
    )
}

/// Positive and negative clouds of a recurrent feature from its relevance
/// records: per document the three most positive and three most negative
/// words, weighted by |relevance|.
pub fn bilstm_cloud_pair(
    feature_id: usize,
    records: &[RelevanceRecord],
    suggested_class: usize,
    top_n: usize,
) -> (WordCloudData, WordCloudData) {
    let words: Vec<SignedWord> = records.iter().flat_map(top_signed_words).collect();
    signed_clouds(feature_id, &words, suggested_class, top_n, Dedup::Max)
}

/// The clouds shown for one feature: one for CNN, a positive/negative pair
/// for BiLSTM.
pub fn feature_clouds(model: &ModelSnapshot, profile: &FeatureProfile, top_n: usize, dedup: Dedup) -> Vec<WordCloudData> {
    let suggested = suggested_class(model, profile.feature_id);
    match profile.unit {
        FeatureUnit::Cnn { .. } => vec![cloud_data(profile, suggested, top_n, dedup)],
        FeatureUnit::Bilstm { .. } => {
            let (pos, neg) = signed_clouds(profile.feature_id, &profile.signed_words, suggested, top_n, dedup);
            vec![pos, neg]
        }
    }
}

pub fn summarize(model: &ModelSnapshot, profiles: &[FeatureProfile]) -> Vec<FeatureSummary> {
    profiles
        .iter()
        .map(|p| FeatureSummary {
            feature_id: p.feature_id,
            suggested_class: suggested_class(model, p.feature_id),
            dead: p.is_dead(),
            disabled: model.head.is_disabled(p.feature_id),
        })
        .collect()
}

/// Class whose output weight for the feature is largest (ties go low).
pub fn suggested_class(model: &ModelSnapshot, feature: usize) -> usize {
    argmax(&model.head.column(feature))
}

/// Options of the graded binary question, in display order.
pub fn binary_options(classes: &[String]) -> Vec<String> {
    vec![
        format!("mostly {}", classes[0]),
        format!("partly {}", classes[0]),
        "none".to_string(),
        format!("partly {}", classes[1]),
        format!("mostly {}", classes[1]),
    ]
}

/// Score of a graded answer (option index into [`binary_options`]) for a
/// feature suggesting `suggested`: +2 for "mostly" the suggested class down
/// to −2 for "mostly" the other one.
pub fn score_binary_answer(option: usize, suggested: usize) -> Result<i8> {
    if option > 4 || suggested > 1 {
        return Err(Error::InvalidChoice {
            choice: option.to_string(),
            allowed: (0..5).map(|i| i.to_string()).collect(),
        });
    }
    let toward_class0 = 2 - option as i8;
    Ok(if suggested == 0 { toward_class0 } else { -toward_class0 })
}

/// Min-max normalized weight of the chosen class within the feature's
/// column; `None` scores 0 and so does every class of a constant column.
pub fn score_multiclass_answer(answer: Option<usize>, column: &[f64]) -> Result<f64> {
    let Some(class) = answer else {
        return Ok(0.0);
    };
    if class >= column.len() {
        return Err(Error::InvalidChoice {
            choice: class.to_string(),
            allowed: (0..column.len()).map(|i| i.to_string()).collect(),
        });
    }
    let lo = column.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = column.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi == lo {
        return Ok(0.0);
    }
    Ok((column[class] - lo) / (hi - lo))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Rank {
    A,
    B,
    C,
}

impl Rank {
    pub fn parse(s: &str) -> Option<Rank> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Some(Rank::A),
            "B" => Some(Rank::B),
            "C" => Some(Rank::C),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScore {
    pub feature_id: usize,
    pub responses: Vec<f64>,
    pub mean: f64,
    pub rank: Option<Rank>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Ranking {
    pub a: Vec<usize>,
    pub b: Vec<usize>,
    pub c: Vec<usize>,
}

impl Ranking {
    pub fn ids(&self, rank: Rank) -> &[usize] {
        match rank {
            Rank::A => &self.a,
            Rank::B => &self.b,
            Rank::C => &self.c,
        }
    }

    pub fn rank_of(&self, feature: usize) -> Option<Rank> {
        [Rank::A, Rank::B, Rank::C].into_iter().find(|&r| self.ids(r).contains(&feature))
    }
}

/// Sorts features by mean score descending (ties by lower id) and cuts the
/// order into thirds. When `d` is not a multiple of three the extra features
/// go to A first, then B.
pub fn rank_features(means: &[f64]) -> Ranking {
    let d = means.len();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&x, &y| means[y].total_cmp(&means[x]).then(x.cmp(&y)));
    let a_len = d.div_ceil(3);
    let b_len = (d + 1) / 3;
    Ranking {
        a: order[..a_len].to_vec(),
        b: order[a_len..a_len + b_len].to_vec(),
        c: order[a_len + b_len..].to_vec(),
    }
}

/// Builds [`FeatureScore`]s from per-feature responses and assigns ranks.
/// Features without responses get mean 0.
pub fn score_features(responses: Vec<Vec<f64>>) -> Vec<FeatureScore> {
    let means: Vec<f64> = responses
        .iter()
        .map(|r| if r.is_empty() { 0.0 } else { r.iter().sum::<f64>() / r.len() as f64 })
        .collect();
    let ranking = rank_features(&means);
    responses
        .into_iter()
        .enumerate()
        .map(|(i, r)| FeatureScore {
            feature_id: i,
            responses: r,
            mean: means[i],
            rank: ranking.rank_of(i),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use proptest::prelude::*;

    use super::*;
    use crate::model::testutil::tiny_model;
    use crate::model::{ArchConfig, BilstmConfig, CnnConfig};

    fn profile(entries: &[(&str, f64)]) -> FeatureProfile {
        FeatureProfile {
            feature_id: 0,
            unit: FeatureUnit::Cnn { filter_size: 1 },
            entries: entries
                .iter()
                .enumerate()
                .map(|(i, (t, a))| ProfileEntry {
                    doc_id: format!("d{i}"),
                    ngram: t.to_string(),
                    activation: *a,
                    position: 0,
                })
                .collect(),
            signed_words: Vec::new(),
        }
    }

    #[test]
    fn cloud_dedups_by_max() {
        let p = profile(&[("good", 2.0), ("good", 1.5), ("bad", 1.0)]);
        let c = cloud_data(&p, 0, 40, Dedup::Max);
        let items: Vec<(&str, f64)> = c.items.iter().map(|i| (i.text.as_str(), i.weight)).collect();
        assert_eq!(items, vec![("good", 2.0), ("bad", 1.0)]);
        let s = cloud_data(&p, 0, 40, Dedup::Sum);
        assert_eq!(s.items[0].weight, 3.5);
    }

    #[test]
    fn cloud_top_one_and_dead_feature() {
        let p = profile(&[("good", 2.0), ("bad", 3.0)]);
        let c = cloud_data(&p, 0, 1, Dedup::Max);
        assert_eq!(c.items.len(), 1);
        assert_eq!(c.items[0].text, "bad");
        let dead = cloud_data(&profile(&[("x", 0.0), ("y", 0.0)]), 0, 40, Dedup::Max);
        assert!(dead.items.is_empty() && dead.dead);
    }

    #[test]
    fn profile_has_one_entry_per_doc_and_feature() {
        let m = tiny_model(ArchConfig::default(), 12, 4, 6, 5);
        let docs: Vec<Document> = (0..7)
            .map(|i| Document::new(format!("d{i}"), "w2 w3 w4 w5", 0).unwrap())
            .collect();
        let profiles = profile_features(&m, &docs);
        assert_eq!(profiles.len(), 30);
        assert!(profiles.iter().all(|p| p.entries.len() == 7));
    }

    #[test]
    fn ngrams_stop_at_the_document_end() {
        let m = tiny_model(
            ArchConfig::Cnn(CnnConfig {
                filter_sizes: vec![4],
                filters_per_size: 6,
            }),
            12,
            4,
            6,
            9,
        );
        let docs = vec![Document::new("d", "w1 w2", 0).unwrap()];
        for p in profile_features(&m, &docs) {
            let e = &p.entries[0];
            assert!(!e.ngram.contains("<pad>"));
            assert!(e.ngram.split(' ').count() <= 2);
        }
    }

    #[test]
    fn cloud_weights_come_from_profile() {
        let m = tiny_model(ArchConfig::default(), 12, 4, 6, 5);
        let docs: Vec<Document> = (0..9)
            .map(|i| Document::new(format!("d{i}"), format!("w{} w{} w{}", i, i + 1, (i * 3) % 11), 0).unwrap())
            .collect();
        for p in profile_features(&m, &docs) {
            let acts: Vec<f64> = p.entries.iter().map(|e| e.activation).collect();
            for item in cloud_data(&p, 0, 40, Dedup::Max).items {
                assert!(acts.contains(&item.weight));
            }
        }
    }

    fn record(tokens: &[&str], scores: &[f64]) -> RelevanceRecord {
        RelevanceRecord {
            doc_id: "d".into(),
            feature_id: 0,
            tokens: tokens.iter().map(|t| t.to_string()).collect(),
            scores: scores.to_vec(),
        }
    }

    #[test]
    fn signed_pair_hand_toy() {
        let (pos, neg) = bilstm_cloud_pair(0, &[record(&["a", "b", "c", "d"], &[3.0, 2.0, 1.0, -1.0])], 0, 40);
        assert_eq!(pos.texts().collect::<Vec<_>>(), vec!["a", "b", "c"]);
        assert_eq!(neg.texts().collect::<Vec<_>>(), vec!["d"]);
        assert_eq!(neg.items[0].weight, 1.0);
    }

    #[test]
    fn signed_pair_edge_cases() {
        let (pos, neg) = bilstm_cloud_pair(0, &[record(&["a", "b"], &[0.5, 0.25])], 0, 40);
        assert_eq!(pos.items.len(), 2);
        assert!(neg.items.is_empty());
        let (pos, neg) = bilstm_cloud_pair(0, &[record(&["a", "b", "c", "d", "e"], &[-5.0, -4.0, -3.0, -2.0, 1.0])], 0, 40);
        assert_eq!(pos.texts().collect::<Vec<_>>(), vec!["e"]);
        assert_eq!(neg.texts().collect::<Vec<_>>(), vec!["a", "b", "c"]);
    }

    #[test]
    fn bilstm_profiles_yield_two_clouds() {
        let m = tiny_model(ArchConfig::Bilstm(BilstmConfig { hidden_units: 2 }), 12, 3, 6, 5);
        let docs: Vec<Document> = (0..5)
            .map(|i| Document::new(format!("d{i}"), format!("w{} w{} w{}", i, i + 2, i + 4), 0).unwrap())
            .collect();
        let profiles = profile_features(&m, &docs);
        assert_eq!(profiles.len(), 4);
        for p in &profiles {
            let clouds = feature_clouds(&m, p, 40, Dedup::Max);
            assert_eq!(clouds.len(), 2);
            assert_eq!(clouds[0].polarity, Polarity::PositiveRelevance);
            assert!(clouds.iter().all(|c| c.items.iter().all(|i| i.weight > 0.0)));
        }
    }

    #[test]
    fn suggested_class_follows_weight_column() {
        let mut m = tiny_model(ArchConfig::default(), 5, 3, 6, 0);
        let set = |m: &mut ModelSnapshot, w0: f64, w1: f64| {
            let d = m.head.features;
            m.head.weights[0] = w0;
            m.head.weights[d] = w1;
        };
        set(&mut m, 0.137, -0.135);
        assert_eq!(suggested_class(&m, 0), 0);
        set(&mut m, 0.209, 0.385);
        assert_eq!(suggested_class(&m, 0), 1);
        set(&mut m, 0.5, 0.5);
        assert_eq!(suggested_class(&m, 0), 0);
    }

    #[test]
    fn binary_scoring_table() {
        assert_eq!(score_binary_answer(0, 0).unwrap(), 2);
        assert_eq!(score_binary_answer(2, 0).unwrap(), 0);
        assert_eq!(score_binary_answer(2, 1).unwrap(), 0);
        // "partly negative" with negative as class 1, feature suggests positive
        assert_eq!(score_binary_answer(3, 0).unwrap(), -1);
        assert_eq!(score_binary_answer(4, 1).unwrap(), 2);
        assert_eq!(score_binary_answer(0, 1).unwrap(), -2);
        assert!(score_binary_answer(5, 0).is_err());
    }

    #[test]
    fn multiclass_min_max() {
        let col = [1.0, 3.0, 5.0, 7.0];
        assert_eq!(score_multiclass_answer(Some(3), &col).unwrap(), 1.0);
        assert!((score_multiclass_answer(Some(1), &col).unwrap() - 2.0 / 6.0).abs() < 1e-15);
        assert_eq!(score_multiclass_answer(None, &col).unwrap(), 0.0);
        assert_eq!(score_multiclass_answer(Some(2), &[4.0, 4.0, 4.0]).unwrap(), 0.0);
        assert!(score_multiclass_answer(Some(4), &col).is_err());
    }

    #[test]
    fn ranking_examples() {
        let desc: Vec<f64> = (1..=30).rev().map(f64::from).collect();
        let r = rank_features(&desc);
        assert_eq!(r.a, (0..10).collect::<Vec<_>>());
        assert_eq!(r.c, (20..30).collect::<Vec<_>>());
        let flat = rank_features(&[1.0; 30]);
        assert_eq!(flat.b, (10..20).collect::<Vec<_>>());
        let odd = rank_features(&[0.0; 31]);
        assert_eq!((odd.a.len(), odd.b.len(), odd.c.len()), (11, 10, 10));
    }

    proptest! {
        #[test]
        fn ranking_matches_brute_force(scores in proptest::collection::vec(-4i32..4, 30)) {
            let means: Vec<f64> = scores.iter().map(|&s| f64::from(s) / 2.0).collect();
            let r = rank_features(&means);
            // oracle: position = number of features strictly better, plus
            // equal-score features with a lower id
            let mut expected = [Vec::new(), Vec::new(), Vec::new()];
            for i in 0..30 {
                let pos = (0..30).filter(|&j| means[j] > means[i] || (means[j] == means[i] && j < i)).count();
                expected[pos / 10].push(i);
            }
            let sorted = |v: &[usize]| v.iter().copied().collect::<BTreeSet<_>>();
            prop_assert_eq!(sorted(&r.a), sorted(&expected[0]));
            prop_assert_eq!(sorted(&r.b), sorted(&expected[1]));
            prop_assert_eq!(sorted(&r.c), sorted(&expected[2]));
            let all: BTreeSet<usize> = r.a.iter().chain(&r.b).chain(&r.c).copied().collect();
            prop_assert_eq!(all.len(), 30);
        }
    }
}
