//! Feedback sessions: one question per feature, answers from people or from
//! the simulated annotator, aggregation and the disabling policies.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::tokenize;
use crate::error::{Error, Result};
use crate::features::{
    binary_options, rank_features, score_binary_answer, score_multiclass_answer, Rank, Ranking, WordCloudData,
};
use crate::model::ModelSnapshot;

pub const DEFAULT_LEXICON_TOP_K: usize = 20;
/// Cloud items the simulated annotator reads.
pub const ORACLE_TOP_ITEMS: usize = 10;
pub const EITHER: &str = "could be either";
pub const NONE: &str = "none";

const MALE_TERMS: &str = include_str!("../lexicons/male.txt");
const FEMALE_TERMS: &str = include_str!("../lexicons/female.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskType {
    /// Five graded options from "mostly" class 0 to "mostly" class 1.
    BinaryGraded,
    /// The class names plus "could be either".
    ClassChoice,
    /// The class names plus "none".
    ClassOrNone,
}

impl TaskType {
    pub fn parse(s: &str) -> Option<TaskType> {
        match s {
            "binary-graded" | "binary" => Some(TaskType::BinaryGraded),
            "class-choice" => Some(TaskType::ClassChoice),
            "class-or-none" | "multiclass" => Some(TaskType::ClassOrNone),
            _ => None,
        }
    }

    pub fn options(self, classes: &[String]) -> Result<Vec<String>> {
        match self {
            TaskType::BinaryGraded if classes.len() != 2 => Err(Error::Config(format!(
                "graded binary questions need exactly 2 classes, the model has {}",
                classes.len()
            ))),
            TaskType::BinaryGraded => Ok(binary_options(classes)),
            TaskType::ClassChoice => Ok(classes.iter().cloned().chain([EITHER.to_string()]).collect()),
            TaskType::ClassOrNone => Ok(classes.iter().cloned().chain([NONE.to_string()]).collect()),
        }
    }

    /// The class an option points at, if any.
    pub fn choice_class(self, choice: usize, classes: usize) -> Option<usize> {
        match self {
            TaskType::BinaryGraded => match choice {
                0 | 1 => Some(0),
                3 | 4 => Some(1),
                _ => None,
            },
            TaskType::ClassChoice | TaskType::ClassOrNone => (choice < classes).then_some(choice),
        }
    }

    /// Index of the option that points at no class.
    pub fn neutral_option(self, classes: usize) -> usize {
        match self {
            TaskType::BinaryGraded => 2,
            TaskType::ClassChoice | TaskType::ClassOrNone => classes,
        }
    }

    /// Option an annotator picks for a judgement.
    pub fn option_for(self, judgement: Judgement, classes: usize) -> usize {
        match (self, judgement.class) {
            (_, None) => self.neutral_option(classes),
            (TaskType::BinaryGraded, Some(0)) => usize::from(!judgement.strong),
            (TaskType::BinaryGraded, Some(_)) => 3 + usize::from(judgement.strong),
            (_, Some(c)) => c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case")]
pub enum Policy {
    /// Disable when the majority answer does not pick the suggested class.
    MajorityVote,
    /// Rank features by mean answer score and disable the listed ranks.
    ScoreRank { disable: BTreeSet<Rank> },
    /// Disable features whose top cloud items mention a gender term.
    GenderLexicon {
        #[serde(default = "default_top_k")]
        top_k: usize,
    },
}

fn default_top_k() -> usize {
    DEFAULT_LEXICON_TOP_K
}

impl Policy {
    pub fn needs_answers(&self) -> bool {
        !matches!(self, Policy::GenderLexicon { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub question_id: usize,
    pub feature_id: usize,
    pub suggested_class: usize,
    /// One cloud for CNN features; positive then negative for BiLSTM.
    pub clouds: Vec<WordCloudData>,
    pub task: TaskType,
    pub options: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    pub question_id: usize,
    pub respondent_id: String,
    pub choice: usize,
    /// Which of the question's clouds is being judged.
    #[serde(default)]
    pub cloud: usize,
    #[serde(default)]
    pub timestamp_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionStatus {
    Collecting,
    Aggregated,
    Applied,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDecision {
    pub feature_id: usize,
    pub suggested_class: usize,
    /// Winning option per cloud, when answers exist.
    pub majority: Vec<Option<usize>>,
    pub mean_score: Option<f64>,
    pub rank: Option<Rank>,
    pub disable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregation {
    pub decisions: Vec<FeatureDecision>,
    pub disabled: BTreeSet<usize>,
    pub ranking: Option<Ranking>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackSession {
    pub session_id: String,
    pub model_id: String,
    pub classes: Vec<String>,
    pub task: TaskType,
    pub policy: Policy,
    pub questions: Vec<Question>,
    pub answers: Vec<Answer>,
    pub status: SessionStatus,
    pub aggregation: Option<Aggregation>,
}

/// One question per feature. `clouds[i]` are the clouds of feature `i`.
pub fn create_session(
    session_id: impl Into<String>,
    model_id: impl Into<String>,
    model: &ModelSnapshot,
    clouds: Vec<Vec<WordCloudData>>,
    task: TaskType,
    policy: Policy,
) -> Result<FeedbackSession> {
    let classes = model.config.classes.clone();
    let options = task.options(&classes)?;
    if clouds.len() != model.feature_count() {
        return Err(Error::Dimension {
            expected: model.feature_count(),
            found: clouds.len(),
            context: "clouds per feature",
        });
    }
    if let Policy::GenderLexicon { top_k: 0 } = policy {
        return Err(Error::Config("lexicon top_k must be positive".into()));
    }
    let questions = clouds
        .into_iter()
        .enumerate()
        .map(|(i, clouds)| Question {
            question_id: i,
            feature_id: i,
            suggested_class: crate::features::suggested_class(model, i),
            clouds,
            task,
            options: options.clone(),
        })
        .collect();
    Ok(FeedbackSession {
        session_id: session_id.into(),
        model_id: model_id.into(),
        classes,
        task,
        policy,
        questions,
        answers: Vec::new(),
        status: SessionStatus::Collecting,
        aggregation: None,
    })
}

impl FeedbackSession {
    /// Checks an answer against the session without recording it.
    pub fn validate_answer(&self, answer: &Answer) -> Result<()> {
        if self.status != SessionStatus::Collecting {
            return Err(Error::SessionState(format!(
                "session {} is {:?}; answers are closed",
                self.session_id, self.status
            )));
        }
        let q = self
            .questions
            .get(answer.question_id)
            .ok_or_else(|| Error::Invalid(format!("unknown question {}", answer.question_id)))?;
        if answer.cloud >= q.clouds.len() {
            return Err(Error::Invalid(format!(
                "question {} has {} cloud(s), got cloud {}",
                q.question_id,
                q.clouds.len(),
                answer.cloud
            )));
        }
        if answer.choice >= q.options.len() {
            return Err(Error::InvalidChoice {
                choice: answer.choice.to_string(),
                allowed: q.options.clone(),
            });
        }
        Ok(())
    }

    pub fn add_answer(&mut self, answer: Answer) -> Result<()> {
        self.validate_answer(&answer)?;
        self.answers.push(answer);
        Ok(())
    }

    pub fn choices(&self, question: usize, cloud: usize) -> Vec<usize> {
        self.answers
            .iter()
            .filter(|a| a.question_id == question && a.cloud == cloud)
            .map(|a| a.choice)
            .collect()
    }

    /// Runs the session policy over the collected answers and freezes the
    /// result. Only a collecting session can be aggregated.
    pub fn aggregate(&mut self, model: &ModelSnapshot) -> Result<&Aggregation> {
        if self.status != SessionStatus::Collecting {
            return Err(Error::SessionState(format!(
                "session {} is already {:?}",
                self.session_id, self.status
            )));
        }
        let aggregation = self.compute(model)?;
        self.aggregation = Some(aggregation);
        self.status = SessionStatus::Aggregated;
        Ok(self.aggregation.as_ref().expect("just set"))
    }

    /// Marks the session applied. A session is applied at most once.
    pub fn mark_applied(&mut self) -> Result<()> {
        match self.status {
            SessionStatus::Aggregated => {
                self.status = SessionStatus::Applied;
                Ok(())
            }
            SessionStatus::Applied => Err(Error::SessionState(format!(
                "session {} was already applied",
                self.session_id
            ))),
            SessionStatus::Collecting => Err(Error::SessionState(format!(
                "session {} must be aggregated before it is applied",
                self.session_id
            ))),
        }
    }

    fn compute(&self, model: &ModelSnapshot) -> Result<Aggregation> {
        let n_classes = self.classes.len();
        let neutral = self.task.neutral_option(n_classes);
        let either = (self.task == TaskType::ClassChoice).then_some(neutral);

        let mut majorities = Vec::with_capacity(self.questions.len());
        for q in &self.questions {
            let mut per_cloud = Vec::with_capacity(q.clouds.len());
            for cloud in 0..q.clouds.len() {
                let choices = self.choices(q.question_id, cloud);
                if choices.is_empty() {
                    if self.policy.needs_answers() {
                        return Err(Error::SessionState(format!(
                            "question {} (cloud {cloud}) has no answers",
                            q.question_id
                        )));
                    }
                    per_cloud.push(None);
                } else {
                    per_cloud.push(Some(aggregate_majority(&choices, q.options.len(), either)?));
                }
            }
            majorities.push(per_cloud);
        }

        let mut decisions: Vec<FeatureDecision> = self
            .questions
            .iter()
            .zip(majorities)
            .map(|(q, majority)| FeatureDecision {
                feature_id: q.feature_id,
                suggested_class: q.suggested_class,
                majority,
                mean_score: None,
                rank: None,
                disable: false,
            })
            .collect();

        let mut ranking = None;
        match &self.policy {
            Policy::MajorityVote => {
                for d in decisions.iter_mut() {
                    let winners: Vec<usize> = d.majority.iter().map(|m| m.expect("checked above")).collect();
                    d.disable = decide_disable_majority(self.task, n_classes, d.suggested_class, &winners);
                }
            }
            Policy::ScoreRank { disable } => {
                let means: Vec<f64> = self
                    .questions
                    .iter()
                    .map(|q| self.feature_score(model, q))
                    .collect::<Result<_>>()?;
                let r = rank_features(&means);
                for (d, mean) in decisions.iter_mut().zip(&means) {
                    d.mean_score = Some(*mean);
                    d.rank = r.rank_of(d.feature_id);
                    d.disable = d.rank.is_some_and(|rank| disable.contains(&rank));
                }
                ranking = Some(r);
            }
            Policy::GenderLexicon { top_k } => {
                let lexicon = Lexicon::gender();
                let disabled = decide_disable_lexicon(self.questions.iter().flat_map(|q| &q.clouds), &lexicon, *top_k);
                for d in decisions.iter_mut() {
                    d.disable = disabled.contains(&d.feature_id);
                }
            }
        }
        let disabled = decisions.iter().filter(|d| d.disable).map(|d| d.feature_id).collect();
        Ok(Aggregation {
            decisions,
            disabled,
            ranking,
        })
    }

    /// Mean answer score of a feature. With two clouds the negative cloud is
    /// scored against the opposite class and its mean is added.
    fn feature_score(&self, model: &ModelSnapshot, q: &Question) -> Result<f64> {
        let column = model.head.column(q.feature_id);
        let n_classes = self.classes.len();
        let mut total = 0.0;
        for cloud in 0..q.clouds.len() {
            let negative = cloud == 1;
            let scores: Vec<f64> = self
                .choices(q.question_id, cloud)
                .into_iter()
                .map(|choice| match self.task {
                    TaskType::BinaryGraded => {
                        let target = if negative { 1 - q.suggested_class } else { q.suggested_class };
                        score_binary_answer(choice, target).map(f64::from)
                    }
                    TaskType::ClassChoice | TaskType::ClassOrNone => {
                        let col: Vec<f64> = if negative { column.iter().map(|w| -w).collect() } else { column.clone() };
                        score_multiclass_answer(self.task.choice_class(choice, n_classes), &col)
                    }
                })
                .collect::<Result<_>>()?;
            total += scores.iter().sum::<f64>() / scores.len() as f64;
        }
        Ok(total)
    }
}

/// Most frequent option. On a tie "could be either" wins if it is among the
/// tied options (when `either` is given), otherwise the lowest index.
pub fn aggregate_majority(choices: &[usize], options: usize, either: Option<usize>) -> Result<usize> {
    if choices.is_empty() {
        return Err(Error::NoAnswers);
    }
    let mut counts = vec![0usize; options];
    for &c in choices {
        let slot = counts.get_mut(c).ok_or_else(|| Error::InvalidChoice {
            choice: c.to_string(),
            allowed: (0..options).map(|i| i.to_string()).collect(),
        })?;
        *slot += 1;
    }
    let top = *counts.iter().max().expect("options > 0");
    if let Some(e) = either {
        if counts.get(e) == Some(&top) {
            return Ok(e);
        }
    }
    Ok(counts.iter().position(|&c| c == top).expect("max exists"))
}

/// Majority rule per feature. The first cloud must point at the suggested
/// class; a second (negative) cloud must not.
pub fn decide_disable_majority(task: TaskType, classes: usize, suggested: usize, winners: &[usize]) -> bool {
    let class_of = |w: usize| task.choice_class(w, classes);
    let positive_rejects = winners.first().is_some_and(|&w| class_of(w) != Some(suggested));
    let negative_rejects = winners.get(1).is_some_and(|&w| class_of(w) == Some(suggested));
    positive_rejects || negative_rejects
}

/// Lower-cased term list; matching is per token.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Lexicon {
    terms: BTreeSet<String>,
}

impl Lexicon {
    pub fn new(terms: impl IntoIterator<Item = impl AsRef<str>>) -> Lexicon {
        Lexicon {
            terms: terms
                .into_iter()
                .map(|t| t.as_ref().trim().to_lowercase())
                .filter(|t| !t.is_empty())
                .collect(),
        }
    }

    /// One term per line; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Lexicon {
        Lexicon::new(text.lines().filter(|l| !l.trim_start().starts_with('#')))
    }

    pub fn load(path: &Path) -> Result<Lexicon> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Lexicon::parse(&text))
    }

    pub fn male() -> Lexicon {
        Lexicon::parse(MALE_TERMS)
    }

    pub fn female() -> Lexicon {
        Lexicon::parse(FEMALE_TERMS)
    }

    /// Male and female terms together.
    pub fn gender() -> Lexicon {
        Lexicon::new(Lexicon::male().terms.into_iter().chain(Lexicon::female().terms))
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.terms.iter().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn matches_text(&self, text: &str) -> bool {
        tokenize(text).iter().any(|t| self.terms.contains(t))
    }
}

/// Features with a lexicon token in any of their first `top_k` cloud items.
pub fn decide_disable_lexicon<'a>(
    clouds: impl IntoIterator<Item = &'a WordCloudData>,
    lexicon: &Lexicon,
    top_k: usize,
) -> BTreeSet<usize> {
    clouds
        .into_iter()
        .filter(|c| c.items.iter().take(top_k).any(|i| lexicon.matches_text(&i.text)))
        .map(|c| c.feature_id)
        .collect()
}

/// What an annotator concluded from a cloud.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Judgement {
    pub class: Option<usize>,
    /// The class is evident in at least half of the items read.
    pub strong: bool,
}

/// Keyword-to-class map standing in for a human annotator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordOracle {
    pub classes: usize,
    pub keywords: BTreeMap<String, usize>,
}

impl KeywordOracle {
    pub fn new(classes: usize, keywords: impl IntoIterator<Item = (String, usize)>) -> Result<KeywordOracle> {
        let keywords: BTreeMap<String, usize> = keywords.into_iter().map(|(w, c)| (w.to_lowercase(), c)).collect();
        if let Some((w, &c)) = keywords.iter().find(|(_, &c)| c >= classes) {
            return Err(Error::Config(format!("oracle keyword {w:?} maps to class {c}, only {classes} classes")));
        }
        Ok(KeywordOracle { classes, keywords })
    }

    /// Parses `word<TAB or space>class_index` lines.
    pub fn parse(text: &str, classes: &[String]) -> Result<KeywordOracle> {
        let mut pairs = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let (Some(word), Some(class), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::Config(format!("oracle line {}: expected `word class`", n + 1)));
            };
            let class = classes
                .iter()
                .position(|c| c == class)
                .or_else(|| class.parse().ok())
                .ok_or_else(|| Error::Config(format!("oracle line {}: unknown class {class:?}", n + 1)))?;
            pairs.push((word.to_string(), class));
        }
        KeywordOracle::new(classes.len(), pairs)
    }

    /// Counts keyword hits per class over the first items of the cloud. No
    /// hits or a tie between classes means no class.
    pub fn judge(&self, cloud: &WordCloudData) -> Judgement {
        let items: Vec<_> = cloud.items.iter().take(ORACLE_TOP_ITEMS).collect();
        let mut hits = vec![0usize; self.classes];
        for item in &items {
            for token in tokenize(&item.text) {
                if let Some(&c) = self.keywords.get(&token) {
                    hits[c] += 1;
                }
            }
        }
        let top = hits.iter().copied().max().unwrap_or(0);
        if top == 0 || hits.iter().filter(|&&h| h == top).count() > 1 {
            return Judgement {
                class: None,
                strong: false,
            };
        }
        Judgement {
            class: hits.iter().position(|&h| h == top),
            strong: 2 * top >= items.len(),
        }
    }
}

/// One simulated response. The oracle's option is replaced, with
/// probability `noise_rate`, by a uniformly drawn different option. The draw
/// depends only on (seed, question, cloud, respondent).
pub fn simulate_annotator(
    question: &Question,
    cloud: usize,
    oracle: &KeywordOracle,
    noise_rate: f64,
    seed: u64,
    respondent: usize,
) -> Result<Answer> {
    if !(0.0..=1.0).contains(&noise_rate) {
        return Err(Error::Config(format!("noise rate {noise_rate} is outside [0, 1]")));
    }
    let target = question
        .clouds
        .get(cloud)
        .ok_or_else(|| Error::Invalid(format!("question {} has no cloud {cloud}", question.question_id)))?;
    let mut choice = question.task.option_for(oracle.judge(target), oracle.classes);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((question.question_id as u64) << 32) | ((cloud as u64) << 24) | respondent as u64);
    if rng.gen::<f64>() < noise_rate {
        let other = rng.gen_range(0..question.options.len() - 1);
        choice = if other >= choice { other + 1 } else { other };
    }
    Ok(Answer {
        question_id: question.question_id,
        respondent_id: format!("sim-{respondent}"),
        choice,
        cloud,
        timestamp_ms: 0,
    })
}

/// `respondents` simulated answers for every cloud of every question.
pub fn simulate_answers(
    session: &FeedbackSession,
    oracle: &KeywordOracle,
    respondents: usize,
    noise_rate: f64,
    seed: u64,
) -> Result<Vec<Answer>> {
    let mut out = Vec::new();
    for q in &session.questions {
        for cloud in 0..q.clouds.len() {
            for r in 0..respondents {
                out.push(simulate_annotator(q, cloud, oracle, noise_rate, seed, r)?);
            }
        }
    }
    Ok(out)
}
