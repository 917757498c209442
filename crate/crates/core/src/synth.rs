//! Seeded synthetic corpora with matching embedding tables, used as test
//! fixtures and for offline experiments.
//!
//! Words are grouped (class keywords, fillers, shortcut tokens). A word's
//! vector is its group direction scaled by `cluster_strength` plus isotropic
//! noise of unit expected norm, so words of a group are similar but not
//! interchangeable.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{write_embeddings, Dataset, Document, EmbeddingTable, Split, Vocabulary};
use crate::api::OracleSpec;
use crate::error::{Error, Result};
use crate::feedback::KeywordOracle;

const POSITIVE_WORDS: &[&str] = &[
    "good", "great", "excellent", "amazing", "love", "delicious", "friendly", "wonderful", "fantastic", "perfect",
    "tasty", "fresh", "awesome", "best", "enjoyed", "nice", "lovely", "superb", "pleasant", "recommend",
    "favorite", "helpful", "cozy", "impressed", "outstanding", "happy", "beautiful", "fabulous", "yummy", "terrific",
    "brilliant", "charming", "generous", "welcoming", "glad", "crisp", "flavorful", "attentive", "gem", "spotless",
];
const NEGATIVE_WORDS: &[&str] = &[
    "bad", "terrible", "awful", "horrible", "rude", "worst", "disgusting", "bland", "dirty", "cold",
    "slow", "overpriced", "stale", "disappointing", "hate", "poor", "mediocre", "soggy", "greasy", "nasty",
    "gross", "unfriendly", "burnt", "avoid", "broken", "noisy", "refund", "sick", "inedible", "lousy",
    "sloppy", "smelly", "raw", "dreadful", "angry", "waste", "ignored", "cramped", "salty", "filthy",
];
const SURGEON_WORDS: &[&str] = &[
    "surgery", "scalpel", "incision", "operating", "theatre", "anesthesia", "transplant", "cardiac", "sutures",
    "orthopedic", "laparoscopic", "resection", "neurosurgery", "trauma", "implant", "grafts", "surgical", "fellowship",
    "vascular", "procedures",
];
const NURSE_WORDS: &[&str] = &[
    "nursing", "ward", "bedside", "medication", "shifts", "caregiving", "vitals", "triage", "pediatric", "hospice",
    "wound", "dressing", "charting", "rn", "midwife", "geriatric", "infusion", "discharge", "compassionate",
    "caregiver",
];
/// Gender terms used by the biased corpus; all appear in the shipped lexicons.
const MALE_WORDS: &[&str] = &["he", "his", "him", "himself", "man"];
const FEMALE_WORDS: &[&str] = &["she", "her", "herself", "woman", "lady"];

const FILLER: &str = "filler";

/// Pronounceable neutral words: consonant-vowel syllable pairs.
fn filler_words(n: usize) -> Vec<String> {
    const C: &[char] = &['b', 'd', 'f', 'g', 'k', 'l', 'm', 'n', 'p', 'r', 's', 't', 'v', 'z'];
    const V: &[char] = &['a', 'e', 'i', 'o', 'u'];
    let mut out = Vec::with_capacity(n);
    'outer: for c1 in C {
        for v1 in V {
            for c2 in C {
                for v2 in V {
                    if out.len() == n {
                        break 'outer;
                    }
                    out.push(format!("{c1}{v1}{c2}{v2}"));
                }
            }
        }
    }
    out
}

/// Corpus, vocabulary, embeddings and the keyword oracle built from the
/// corpus's class keywords.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub dataset: Dataset,
    pub vocab: Arc<Vocabulary>,
    pub embeddings: Arc<EmbeddingTable>,
    pub oracle: KeywordOracle,
    /// Group of every generated word, for inspection.
    pub groups: BTreeMap<String, String>,
}

impl Fixture {
    /// Writes `dataset.jsonl`, `embeddings.txt` and `oracle.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("dataset.jsonl");
        std::fs::write(&path, self.dataset.to_jsonl()).map_err(|e| Error::io(&path, e))?;
        let rows: Vec<(&str, &[f64])> = self
            .vocab
            .words()
            .iter()
            .enumerate()
            .map(|(i, w)| (w.as_str(), self.embeddings.row(i as u32 + 2)))
            .collect();
        write_embeddings(&dir.join("embeddings.txt"), rows)?;
        let path = dir.join("oracle.json");
        let oracle = OracleSpec::from_oracle(&self.oracle, &self.dataset.classes);
        let text = serde_json::to_string_pretty(&oracle).expect("string map serializes");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentimentSpec {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub fillers: usize,
    /// Label-correlated tokens present in train and dev but not test.
    pub artifacts_per_class: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Probability that a token is a sentiment keyword.
    pub keyword_rate: f64,
    /// Probability that a keyword belongs to the other class.
    pub cross_rate: f64,
    /// Probability that a train/dev token is an artifact.
    pub artifact_rate: f64,
    /// Probability that an artifact agrees with the label.
    pub artifact_fidelity: f64,
    /// Keyword clusters per class; each document draws its own-class
    /// keywords from one cluster.
    pub topics: usize,
    pub embed_dim: usize,
    pub cluster_strength: f64,
    pub seed: u64,
}

impl Default for SentimentSpec {
    fn default() -> Self {
        SentimentSpec {
            train: 500,
            dev: 100,
            test: 1000,
            fillers: 400,
            artifacts_per_class: 6,
            min_len: 14,
            max_len: 30,
            keyword_rate: 0.08,
            cross_rate: 0.1,
            artifact_rate: 0.03,
            artifact_fidelity: 0.9,
            topics: 20,
            embed_dim: 300,
            cluster_strength: 0.8,
            seed: 1,
        }
    }
}

/// Two-class review corpus ("negative", "positive"). Each document mixes
/// fillers, sentiment keywords (mostly of its own class) and, outside the
/// test split, artifact tokens that track the label.
pub fn sentiment_corpus(spec: &SentimentSpec) -> Result<Fixture> {
    if spec.min_len == 0 || spec.min_len > spec.max_len {
        return Err(Error::Config("need 0 < min_len <= max_len".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let fillers = filler_words(spec.fillers);
    let keywords = [NEGATIVE_WORDS, POSITIVE_WORDS];
    let artifacts: Vec<Vec<String>> = (0..2)
        .map(|c| (0..spec.artifacts_per_class).map(|i| format!("zx{c}{i}")).collect())
        .collect();

    if spec.topics == 0 || spec.topics > NEGATIVE_WORDS.len() {
        return Err(Error::Config(format!("topics must be in 1..={}", NEGATIVE_WORDS.len())));
    }
    let topic_words = |class: usize, topic: usize| -> Vec<&'static str> {
        keywords[class].iter().copied().skip(topic).step_by(spec.topics).collect()
    };
    let topics: Vec<Vec<Vec<&str>>> = (0..2).map(|c| (0..spec.topics).map(|t| topic_words(c, t)).collect()).collect();

    let classes = vec!["negative".to_string(), "positive".to_string()];
    let mut dataset = Dataset::new("synthetic-sentiment", classes.clone())?;
    for (split, n) in [(Split::Train, spec.train), (Split::Dev, spec.dev), (Split::Test, spec.test)] {
        for i in 0..n {
            let label = rng.gen_range(0..2usize);
            let topic = &topics[label][rng.gen_range(0..spec.topics)];
            let len = rng.gen_range(spec.min_len..=spec.max_len);
            let with_artifacts = split != Split::Test && spec.artifacts_per_class > 0;
            let mut tokens: Vec<&str> = Vec::with_capacity(len);
            let mut has_keyword = false;
            while tokens.len() < len {
                let u: f64 = rng.gen();
                if u < spec.keyword_rate {
                    if rng.gen::<f64>() < spec.cross_rate {
                        tokens.push(keywords[1 - label].choose(&mut rng).expect("non-empty"));
                    } else {
                        tokens.push(topic.choose(&mut rng).expect("non-empty"));
                        has_keyword = true;
                    }
                } else if with_artifacts && u < spec.keyword_rate + spec.artifact_rate {
                    let class = if rng.gen::<f64>() < spec.artifact_fidelity { label } else { 1 - label };
                    tokens.push(artifacts[class].choose(&mut rng).expect("non-empty"));
                } else {
                    tokens.push(fillers.choose(&mut rng).expect("fillers > 0"));
                }
            }
            if !has_keyword {
                let at = rng.gen_range(0..len);
                tokens[at] = topic.choose(&mut rng).expect("non-empty");
            }
            dataset.push(split, Document::new(format!("{}{i}", split.as_str()), tokens.join(" "), label)?)?;
        }
    }

    let mut groups = BTreeMap::new();
    for (c, per_topic) in topics.iter().enumerate() {
        for (t, words) in per_topic.iter().enumerate() {
            for w in words {
                groups.insert(w.to_string(), format!("keyword:{}:{t}", classes[c]));
            }
        }
    }
    for (c, words) in artifacts.iter().enumerate() {
        for w in words {
            groups.insert(w.clone(), format!("artifact:{}", classes[c]));
        }
    }
    for w in &fillers {
        groups.insert(w.clone(), FILLER.into());
    }
    let oracle = KeywordOracle::new(
        2,
        keywords
            .iter()
            .enumerate()
            .flat_map(|(c, words)| words.iter().map(move |w| (w.to_string(), c))),
    )?;
    let opposed = [("artifact:negative", "artifact:positive")];
    finish(dataset, groups, &opposed, oracle, spec.embed_dim, spec.cluster_strength, spec.seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenderSpec {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub fillers: usize,
    /// Probability that a train/dev biography uses the stereotyped gender.
    pub train_stereotype: f64,
    /// Same for the test split; 0.5 makes gender uninformative.
    pub test_stereotype: f64,
    pub occupation_keywords: usize,
    /// Probability that an occupation keyword belongs to the other class.
    pub cross_rate: f64,
    pub body_len: usize,
    pub embed_dim: usize,
    pub cluster_strength: f64,
    pub seed: u64,
}

impl Default for GenderSpec {
    fn default() -> Self {
        GenderSpec {
            train: 600,
            dev: 150,
            test: 600,
            fillers: 300,
            train_stereotype: 0.9,
            test_stereotype: 0.5,
            occupation_keywords: 2,
            cross_rate: 0.25,
            body_len: 16,
            embed_dim: 300,
            cluster_strength: 0.6,
            seed: 11,
        }
    }
}

/// Biographies labeled "surgeon" (class 0) or "nurse" (class 1). An intro
/// of gender terms and fillers is followed, after a gap of fillers, by a
/// body holding the occupation keywords, so no window of width ≤ 4 spans
/// both a gender term and a keyword.
pub fn gender_corpus(spec: &GenderSpec) -> Result<Fixture> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let fillers = filler_words(spec.fillers);
    let occupations = [SURGEON_WORDS, NURSE_WORDS];
    let genders = [MALE_WORDS, FEMALE_WORDS];

    let classes = vec!["surgeon".to_string(), "nurse".to_string()];
    let mut dataset = Dataset::new("synthetic-bios", classes.clone())?;
    for (split, n) in [(Split::Train, spec.train), (Split::Dev, spec.dev), (Split::Test, spec.test)] {
        let stereotype = if split == Split::Test {
            spec.test_stereotype
        } else {
            spec.train_stereotype
        };
        for i in 0..n {
            let label = rng.gen_range(0..2usize);
            // surgeons are stereotyped male (0), nurses female (1)
            let gender = if rng.gen::<f64>() < stereotype { label } else { 1 - label };
            let filler = |rng: &mut ChaCha8Rng| fillers.choose(rng).expect("fillers > 0").as_str();
            let mut tokens: Vec<&str> = vec![
                genders[gender].choose(&mut rng).expect("non-empty"),
                filler(&mut rng),
                genders[gender].choose(&mut rng).expect("non-empty"),
            ];
            for _ in 0..4 {
                tokens.push(filler(&mut rng));
            }
            let body_start = tokens.len();
            for _ in 0..spec.body_len {
                tokens.push(filler(&mut rng));
            }
            let mut slots: Vec<usize> = (body_start..tokens.len()).collect();
            slots.shuffle(&mut rng);
            for (k, &slot) in slots.iter().take(spec.occupation_keywords).enumerate() {
                let class = if k > 0 && rng.gen::<f64>() < spec.cross_rate { 1 - label } else { label };
                tokens[slot] = occupations[class].choose(&mut rng).expect("non-empty");
            }
            dataset.push(split, Document::new(format!("{}{i}", split.as_str()), tokens.join(" "), label)?)?;
        }
    }

    let mut groups = BTreeMap::new();
    for (c, words) in occupations.iter().enumerate() {
        for w in *words {
            groups.insert(w.to_string(), format!("keyword:{}", classes[c]));
        }
    }
    for (g, words) in genders.iter().enumerate() {
        for w in *words {
            groups.insert(w.to_string(), ["gender:male", "gender:female"][g].to_string());
        }
    }
    for w in &fillers {
        groups.insert(w.clone(), FILLER.into());
    }
    let oracle = KeywordOracle::new(
        2,
        occupations
            .iter()
            .enumerate()
            .flat_map(|(c, words)| words.iter().map(move |w| (w.to_string(), c))),
    )?;
    let opposed = [("keyword:surgeon", "keyword:nurse"), ("gender:male", "gender:female")];
    finish(dataset, groups, &opposed, oracle, spec.embed_dim, spec.cluster_strength, spec.seed)
}

/// Gives every group except fillers a random unit direction; the groups of
/// each `opposed` pair point in opposite directions.
fn finish(
    dataset: Dataset,
    groups: BTreeMap<String, String>,
    opposed: &[(&str, &str)],
    oracle: KeywordOracle,
    dim: usize,
    strength: f64,
    seed: u64,
) -> Result<Fixture> {
    if dim == 0 {
        return Err(Error::Config("embedding dimension must be positive".into()));
    }
    let vocab = Vocabulary::build(&dataset);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xe3b0_c442);
    let scale = 1.0 / (dim as f64).sqrt();
    let names: std::collections::BTreeSet<&str> = groups.values().map(String::as_str).collect();
    let mut directions: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for name in names {
        if name == FILLER || directions.contains_key(name) {
            continue;
        }
        let dir = unit_vector(&mut rng, dim);
        if let Some(&(a, b)) = opposed.iter().find(|(a, b)| *a == name || *b == name) {
            let partner = if a == name { b } else { a };
            directions.insert(partner, dir.iter().map(|v| -v).collect());
        }
        directions.insert(name, dir);
    }

    let mut data = vec![0.0; (vocab.len() + 2) * dim];
    for (i, word) in vocab.words().iter().enumerate() {
        let row = &mut data[(i + 2) * dim..(i + 3) * dim];
        let direction = groups.get(word).and_then(|g| directions.get(g.as_str()));
        for (e, v) in row.iter_mut().enumerate() {
            let noise: f64 = StandardNormal.sample(&mut rng);
            *v = noise * scale + direction.map_or(0.0, |d| strength * d[e]);
        }
    }
    let embeddings = EmbeddingTable::from_rows(dim, data, 1.0)?;
    Ok(Fixture {
        dataset,
        vocab: Arc::new(vocab),
        embeddings: Arc::new(embeddings),
        oracle,
        groups,
    })
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{load_dataset, load_embeddings, DatasetFormat};
    use crate::feedback::Lexicon;

    fn small_sentiment() -> SentimentSpec {
        SentimentSpec {
            train: 40,
            dev: 10,
            test: 20,
            embed_dim: 8,
            ..Default::default()
        }
    }

    #[test]
    fn sentiment_is_deterministic_and_sized() {
        let a = sentiment_corpus(&small_sentiment()).unwrap();
        let b = sentiment_corpus(&small_sentiment()).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.embeddings, b.embeddings);
        assert_eq!(a.dataset.split_sizes(), (40, 10, 20));
        assert_eq!(a.embeddings.rows(), a.vocab.len() + 2);
    }

    #[test]
    fn artifacts_never_reach_the_test_split() {
        let f = sentiment_corpus(&small_sentiment()).unwrap();
        assert!(f.dataset.test.iter().all(|d| d.tokens.iter().all(|t| !t.starts_with("zx"))));
        assert!(f.dataset.train.iter().any(|d| d.tokens.iter().any(|t| t.starts_with("zx"))));
    }

    #[test]
    fn every_document_holds_a_keyword_of_its_class() {
        let f = sentiment_corpus(&small_sentiment()).unwrap();
        for d in f.dataset.documents() {
            assert!(d.tokens.iter().any(|t| f.oracle.keywords.get(t) == Some(&d.label)), "{}", d.text);
        }
    }

    #[test]
    fn topic_words_cluster_and_artifacts_oppose() {
        let spec = SentimentSpec {
            embed_dim: 200,
            cluster_strength: 1.0,
            topics: 20,
            ..small_sentiment()
        };
        let f = sentiment_corpus(&spec).unwrap();
        let row = |w: &str| f.embeddings.row(f.vocab.get(w).unwrap()).to_vec();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        // "good" and "favorite" share topic 0 when there are 20 topics.
        assert!(dot(&row("good"), &row("favorite")) > 0.5);
        assert!(dot(&row("good"), &row("great")).abs() < 0.5);
        assert!(dot(&row("zx00"), &row("zx10")) < -0.5);
    }

    #[test]
    fn gender_corpus_plants_the_shortcut_in_training_only() {
        let f = gender_corpus(&GenderSpec {
            train: 400,
            dev: 10,
            test: 400,
            embed_dim: 8,
            ..Default::default()
        })
        .unwrap();
        let male = Lexicon::male();
        let agree = |docs: &[Document]| {
            docs.iter()
                .filter(|d| d.tokens.iter().any(|t| male.matches_text(t)) == (d.label == 0))
                .count() as f64
                / docs.len() as f64
        };
        assert!(agree(&f.dataset.train) > 0.85);
        assert!((agree(&f.dataset.test) - 0.5).abs() < 0.1);
    }

    #[test]
    fn no_short_window_spans_gender_and_occupation() {
        let f = gender_corpus(&GenderSpec {
            train: 50,
            dev: 5,
            test: 5,
            embed_dim: 4,
            ..Default::default()
        })
        .unwrap();
        let lex = Lexicon::gender();
        for d in f.dataset.documents() {
            let last_gender = d.tokens.iter().rposition(|t| lex.matches_text(t)).unwrap();
            let first_kw = d.tokens.iter().position(|t| f.oracle.keywords.contains_key(t)).unwrap();
            assert!(first_kw >= last_gender + 4);
        }
    }

    #[test]
    fn written_fixture_reloads() {
        let f = sentiment_corpus(&small_sentiment()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        f.write(dir.path()).unwrap();
        let ds = load_dataset(&dir.path().join("dataset.jsonl"), DatasetFormat::Jsonl).unwrap();
        assert_eq!(ds.train, f.dataset.train);
        let vocab = Vocabulary::build(&ds);
        assert_eq!(&vocab, f.vocab.as_ref());
        let emb = load_embeddings(&dir.path().join("embeddings.txt"), &vocab).unwrap();
        assert_eq!(&emb, f.embeddings.as_ref());
        let text = std::fs::read_to_string(dir.path().join("oracle.json")).unwrap();
        let spec: OracleSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(spec.resolve(&ds.classes).unwrap(), f.oracle);
    }
}
