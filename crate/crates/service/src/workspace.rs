//! The coordinator: owns the event log and the state folded from it, and
//! implements every operation as a blocking call. Snapshot and dataset
//! files are written before the event that references them.

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use find_core::api::{
    AblationRequest, ApplyOutcome, ApplyRequest, BiasRequest, CompareResponse, CreateSession, DatasetInfo, DatasetSource,
    DisableOutcome, DisableRequest, EmbeddingSource, MetricsResponse, ModelInfo, ModelOrigin, RegisterDataset,
    SessionCreated, SimulateRequest, TrainOutcome, TrainRequest, TrainingSummary, AnswersAck,
};
use find_core::corpus::{load_dataset, load_embeddings, Dataset, DatasetFormat, Document, EmbeddingTable, Split, Vocabulary};
use find_core::eval::{approx_randomization_test, bias_metrics, evaluate, SubpopulationSpec};
use find_core::experiment::{apply_disabled, bias_debug, gender_subpopulations, rank_ablation, AblationReport, BiasSummary};
use find_core::features::{feature_clouds, profile_features, summarize, Dedup, FeatureProfile, FeatureSummary, WordCloudData, DEFAULT_TOP_N};
use find_core::feedback::{create_session, simulate_answers, Answer, FeedbackSession, SessionStatus};
use find_core::model::{init_model, train, FinetuneOptions, ModelConfig, ModelSnapshot, TrainingLog};
use find_core::snapshot::{from_bytes, snapshot_id, to_bytes};
use parking_lot::Mutex;
use sha2::{Digest, Sha256};

use crate::error::ServiceError;
use crate::log::{write_atomic, EventLog};
use crate::state::{Event, WorkspaceState};

pub struct LoadedDataset {
    pub dataset: Dataset,
    pub vocab: Arc<Vocabulary>,
    pub embeddings: Arc<EmbeddingTable>,
}

struct Inner {
    state: WorkspaceState,
    log: EventLog,
}

#[derive(Default)]
struct Cache {
    datasets: HashMap<String, Arc<LoadedDataset>>,
    models: HashMap<String, Arc<ModelSnapshot>>,
    profiles: HashMap<String, Arc<Vec<FeatureProfile>>>,
}

/// Query options for metrics.
#[derive(Debug, Clone, Default)]
pub struct MetricsQuery {
    pub dataset: Option<String>,
    pub split: Option<String>,
    /// Subpopulation names; `male` and `female` are built in.
    pub bias: Vec<String>,
    pub positive: Option<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct CompareQuery {
    pub a: String,
    pub b: String,
    pub dataset: Option<String>,
    pub split: Option<String>,
    pub iterations: Option<usize>,
    pub seed: Option<u64>,
}

pub struct Workspace {
    root: PathBuf,
    inner: Mutex<Inner>,
    cache: Mutex<Cache>,
}

impl Workspace {
    /// Opens the workspace rooted at `root`, replaying its event log.
    pub fn open(root: &Path) -> Result<Workspace, ServiceError> {
        for sub in ["datasets", "models", "logs"] {
            let dir = root.join(sub);
            std::fs::create_dir_all(&dir).map_err(|e| ServiceError::io(dir.display(), e))?;
        }
        let (log, events) = EventLog::open(&root.join("events.jsonl"))?;
        let mut state = WorkspaceState::default();
        for (n, event) in events.iter().enumerate() {
            state
                .apply(event)
                .map_err(|e| ServiceError::Internal(format!("replay failed at event {}: {e}", n + 1)))?;
        }
        tracing::info!(events = events.len(), "workspace replayed from {}", root.display());
        Ok(Workspace {
            root: root.to_path_buf(),
            inner: Mutex::new(Inner { state, log }),
            cache: Mutex::new(Cache::default()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn state(&self) -> WorkspaceState {
        self.inner.lock().state.clone()
    }

    pub fn read<T>(&self, f: impl FnOnce(&WorkspaceState) -> T) -> T {
        f(&self.inner.lock().state)
    }

    /// Builds an event against the current state, checks it, makes it
    /// durable, then publishes it. Writers are serialized by the lock.
    fn commit_with(&self, build: impl FnOnce(&WorkspaceState) -> Result<Event, ServiceError>) -> Result<Event, ServiceError> {
        let mut inner = self.inner.lock();
        let event = build(&inner.state)?;
        let mut next = inner.state.clone();
        next.apply(&event)?;
        inner.log.append(&event)?;
        inner.state = next;
        Ok(event)
    }

    fn commit(&self, event: Event) -> Result<(), ServiceError> {
        self.commit_with(|_| Ok(event)).map(|_| ())
    }

    // ---- datasets ----

    pub fn register_dataset(&self, req: RegisterDataset) -> Result<DatasetInfo, ServiceError> {
        let (data, format) = match &req.data {
            DatasetSource::Path { path, format } => (
                std::fs::read(path).map_err(|e| ServiceError::Validation(format!("cannot read {}: {e}", path.display())))?,
                format.unwrap_or_else(|| DatasetFormat::from_path(path)),
            ),
            DatasetSource::Inline { jsonl } => (jsonl.clone().into_bytes(), DatasetFormat::Jsonl),
        };
        let embeddings = match &req.embeddings {
            EmbeddingSource::Path { path } => {
                std::fs::read(path).map_err(|e| ServiceError::Validation(format!("cannot read {}: {e}", path.display())))?
            }
            EmbeddingSource::Inline { text } => text.clone().into_bytes(),
        };
        let mut hasher = Sha256::new();
        hasher.update(dataset_file(format).as_bytes());
        hasher.update((data.len() as u64).to_le_bytes());
        hasher.update(&data);
        hasher.update(&embeddings);
        let id = hex::encode(&hasher.finalize()[..16]);
        if let Some(info) = self.read(|s| s.datasets.get(&id).cloned()) {
            return Ok(info);
        }

        let dir = self.root.join("datasets").join(&id);
        write_atomic(&dir.join(dataset_file(format)), &data)?;
        write_atomic(&dir.join("embeddings.txt"), &embeddings)?;
        let mut loaded = load_dir(&dir)?;
        let name = req.name.clone().unwrap_or_else(|| match &req.data {
            DatasetSource::Path { path, .. } => path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("dataset")
                .to_string(),
            DatasetSource::Inline { .. } => "dataset".into(),
        });
        loaded.dataset.name = name.clone();
        let (train, dev, test) = loaded.dataset.split_sizes();
        let info = DatasetInfo {
            dataset_id: id.clone(),
            name,
            classes: loaded.dataset.classes.clone(),
            train,
            dev,
            test,
            vocabulary: loaded.vocab.len(),
            embedding_dim: loaded.embeddings.dim(),
            coverage: loaded.embeddings.coverage(),
        };
        self.cache.lock().datasets.insert(id, Arc::new(loaded));
        self.commit(Event::DatasetRegistered { info: info.clone() })?;
        Ok(info)
    }

    pub fn dataset(&self, id: &str) -> Result<Arc<LoadedDataset>, ServiceError> {
        let info = self.read(|s| s.dataset(id).cloned())?;
        if let Some(d) = self.cache.lock().datasets.get(id) {
            return Ok(d.clone());
        }
        let mut loaded = load_dir(&self.root.join("datasets").join(id))?;
        loaded.dataset.name = info.name;
        let loaded = Arc::new(loaded);
        self.cache.lock().datasets.insert(id.to_string(), loaded.clone());
        Ok(loaded)
    }

    // ---- models ----

    pub fn model(&self, id: &str) -> Result<Arc<ModelSnapshot>, ServiceError> {
        self.read(|s| s.model(id).map(|_| ()))?;
        if let Some(m) = self.cache.lock().models.get(id) {
            return Ok(m.clone());
        }
        let bytes = self.snapshot_bytes(id)?;
        let model = Arc::new(from_bytes(&bytes)?);
        self.cache.lock().models.insert(id.to_string(), model.clone());
        Ok(model)
    }

    pub fn model_info(&self, id: &str) -> Result<ModelInfo, ServiceError> {
        self.read(|s| s.model(id).cloned())
    }

    pub fn snapshot_bytes(&self, id: &str) -> Result<Vec<u8>, ServiceError> {
        self.read(|s| s.model(id).map(|_| ()))?;
        let path = self.snapshot_path(id);
        std::fs::read(&path).map_err(|e| ServiceError::io(path.display(), e))
    }

    pub fn training_log(&self, id: &str) -> Result<String, ServiceError> {
        self.read(|s| s.model(id).map(|_| ()))?;
        let path = self.root.join(log_ref(id));
        std::fs::read_to_string(&path).map_err(|_| ServiceError::NotFound(format!("training log of model {id}")))
    }

    fn snapshot_path(&self, id: &str) -> PathBuf {
        self.root.join("models").join(format!("{id}.snap"))
    }

    /// Serializes and stores a snapshot; returns its content id.
    fn store(&self, model: ModelSnapshot, log: Option<&TrainingLog>) -> Result<String, ServiceError> {
        let bytes = to_bytes(&model);
        let id = snapshot_id(&bytes);
        let path = self.snapshot_path(&id);
        if !path.exists() {
            write_atomic(&path, &bytes)?;
        }
        if let Some(log) = log {
            write_atomic(&self.root.join(log_ref(&id)), log.to_jsonl().as_bytes())?;
        }
        self.cache.lock().models.insert(id.clone(), Arc::new(model));
        Ok(id)
    }

    pub fn train(&self, req: TrainRequest) -> Result<TrainOutcome, ServiceError> {
        let data = self.dataset(&req.dataset_id)?;
        let config = ModelConfig {
            arch: req.config.arch()?,
            max_len: req.config.max_len,
            embed_dim: data.embeddings.dim(),
            classes: data.dataset.classes.clone(),
            seed: req.seed,
        };
        let initial = init_model(config, data.vocab.clone(), data.embeddings.clone())?;
        let (model, log) = train(&initial, &data.dataset, &req.config.train(req.seed))?;
        let info = describe(&model, "", &req.dataset_id, None, None, ModelOrigin::Trained { seed: req.seed });
        let id = self.store(model, Some(&log))?;
        let info = ModelInfo {
            lineage: id.clone(),
            model_id: id.clone(),
            ..info
        };
        let training = TrainingSummary::of(&log);
        self.commit(Event::ModelAdded {
            info: info.clone(),
            training: Some(training.clone()),
        })?;
        Ok(TrainOutcome {
            model: self.model_info(&id)?,
            training,
            log: log_ref(&id),
        })
    }

    pub fn import(&self, dataset_id: &str, bytes: &[u8]) -> Result<ModelInfo, ServiceError> {
        let data = self.dataset(dataset_id)?;
        let model = from_bytes(bytes)?;
        if model.config.classes != data.dataset.classes {
            return Err(ServiceError::Validation(format!(
                "model classes {:?} differ from dataset classes {:?}",
                model.config.classes, data.dataset.classes
            )));
        }
        let id = snapshot_id(bytes);
        if let Ok(info) = self.model_info(&id) {
            return Ok(info);
        }
        let info = describe(&model, &id, dataset_id, None, Some(&id), ModelOrigin::Imported);
        self.store(model, None)?;
        self.commit(Event::ModelAdded {
            info: info.clone(),
            training: None,
        })?;
        Ok(info)
    }

    pub fn disable(&self, model_id: &str, req: DisableRequest) -> Result<DisableOutcome, ServiceError> {
        let parent = self.model_info(model_id)?;
        let model = self.model(model_id)?;
        let data = self.dataset(&parent.dataset_id)?;
        let options = FinetuneOptions {
            always: req.finetune_always,
        };
        let (derived, log) = apply_disabled(&model, &req.features, &data.dataset, &req.config.train(req.seed), options)?;
        let origin = ModelOrigin::Derived {
            session_id: None,
            fine_tuned: log.is_some(),
        };
        let info = describe(&derived, "", &parent.dataset_id, Some(model_id), Some(&parent.lineage), origin);
        let id = self.store(derived, log.as_ref())?;
        let info = ModelInfo { model_id: id.clone(), ..info };
        let training = log.as_ref().map(TrainingSummary::of);
        self.commit(Event::ModelAdded {
            info,
            training: training.clone(),
        })?;
        Ok(DisableOutcome {
            model: self.model_info(&id)?,
            fine_tuned: log.is_some(),
            training,
        })
    }

    // ---- features ----

    pub fn profiles(&self, model_id: &str) -> Result<Arc<Vec<FeatureProfile>>, ServiceError> {
        if let Some(p) = self.cache.lock().profiles.get(model_id) {
            return Ok(p.clone());
        }
        let info = self.model_info(model_id)?;
        let model = self.model(model_id)?;
        let data = self.dataset(&info.dataset_id)?;
        let profiles = Arc::new(profile_features(&model, &data.dataset.train));
        self.cache.lock().profiles.insert(model_id.to_string(), profiles.clone());
        Ok(profiles)
    }

    pub fn features(&self, model_id: &str) -> Result<Vec<FeatureSummary>, ServiceError> {
        let model = self.model(model_id)?;
        Ok(summarize(&model, &self.profiles(model_id)?))
    }

    pub fn cloud(&self, model_id: &str, feature: usize, top_n: Option<usize>) -> Result<Vec<WordCloudData>, ServiceError> {
        let model = self.model(model_id)?;
        let profiles = self.profiles(model_id)?;
        let profile = profiles.get(feature).ok_or_else(|| {
            ServiceError::NotFound(format!("feature {feature} (model has {} features)", profiles.len()))
        })?;
        Ok(feature_clouds(&model, profile, top_n.unwrap_or(DEFAULT_TOP_N), Dedup::Max))
    }

    // ---- sessions ----

    pub fn create_session(&self, req: CreateSession) -> Result<SessionCreated, ServiceError> {
        let model = self.model(&req.model_id)?;
        let profiles = self.profiles(&req.model_id)?;
        let top_n = req.top_n.unwrap_or(DEFAULT_TOP_N);
        if top_n == 0 {
            return Err(ServiceError::Validation("top_n must be positive".into()));
        }
        let clouds: Vec<Vec<WordCloudData>> = profiles
            .iter()
            .map(|p| feature_clouds(&model, p, top_n, Dedup::Max))
            .collect();
        let event = self.commit_with(|state| {
            let session = create_session(state.next_session_id(), &req.model_id, &model, clouds, req.task, req.policy)?;
            Ok(Event::SessionCreated { session })
        })?;
        let Event::SessionCreated { session } = event else {
            unreachable!("built above")
        };
        Ok(SessionCreated {
            session_id: session.session_id,
            questions: session.questions.len(),
        })
    }

    pub fn session(&self, id: &str) -> Result<FeedbackSession, ServiceError> {
        self.read(|s| s.session(id).cloned())
    }

    pub fn add_answers(&self, session_id: &str, answers: Vec<Answer>) -> Result<AnswersAck, ServiceError> {
        if answers.is_empty() {
            return Err(ServiceError::Validation("no answers given".into()));
        }
        let accepted = answers.len();
        self.commit(Event::AnswersAdded {
            session_id: session_id.to_string(),
            answers,
        })?;
        let total = self.read(|s| s.sessions[session_id].answers.len());
        Ok(AnswersAck { accepted, total })
    }

    pub fn simulate(&self, session_id: &str, req: SimulateRequest) -> Result<AnswersAck, ServiceError> {
        let session = self.session(session_id)?;
        let oracle = req.oracle.resolve(&session.classes)?;
        let answers = simulate_answers(&session, &oracle, req.respondents, req.noise, req.seed)?;
        self.add_answers(session_id, answers)
    }

    /// Fails fast on a session that cannot be applied.
    pub fn check_applicable(&self, session_id: &str) -> Result<String, ServiceError> {
        let session = self.session(session_id)?;
        if session.status != SessionStatus::Collecting {
            return Err(ServiceError::Conflict(format!("session {session_id} was already applied")));
        }
        if session.policy.needs_answers() && session.answers.is_empty() {
            return Err(ServiceError::Validation("no answers to aggregate".into()));
        }
        Ok(self.model_info(&session.model_id)?.lineage)
    }

    pub fn apply(&self, session_id: &str, req: ApplyRequest) -> Result<ApplyOutcome, ServiceError> {
        self.check_applicable(session_id)?;
        let mut session = self.session(session_id)?;
        let parent = self.model_info(&session.model_id)?;
        let model = self.model(&session.model_id)?;
        let data = self.dataset(&parent.dataset_id)?;
        let aggregation = session.aggregate(&model)?.clone();
        let options = FinetuneOptions {
            always: req.finetune_always,
        };
        let (derived, log) = apply_disabled(&model, &aggregation.disabled, &data.dataset, &req.config.train(req.seed), options)?;
        let origin = ModelOrigin::Derived {
            session_id: Some(session_id.to_string()),
            fine_tuned: log.is_some(),
        };
        let info = describe(&derived, "", &parent.dataset_id, Some(&parent.model_id), Some(&parent.lineage), origin);
        let id = self.store(derived, log.as_ref())?;
        let training = log.as_ref().map(TrainingSummary::of);
        self.commit(Event::SessionApplied {
            session_id: session_id.to_string(),
            aggregation: aggregation.clone(),
            model: ModelInfo { model_id: id.clone(), ..info },
            training: training.clone(),
        })?;
        Ok(ApplyOutcome {
            session_id: session_id.to_string(),
            model: self.model_info(&id)?,
            disabled: aggregation.disabled.clone(),
            fine_tuned: log.is_some(),
            aggregation,
            training,
        })
    }

    // ---- evaluation ----

    fn split_docs<'a>(&self, data: &'a LoadedDataset, split: Option<&str>) -> Result<&'a [Document], ServiceError> {
        let name = split.unwrap_or("test");
        let split = Split::parse(name).ok_or_else(|| ServiceError::Validation(format!("unknown split {name:?}")))?;
        Ok(data.dataset.split(split))
    }

    pub fn metrics(&self, model_id: &str, q: MetricsQuery) -> Result<MetricsResponse, ServiceError> {
        let info = self.model_info(model_id)?;
        let model = self.model(model_id)?;
        let data = self.dataset(q.dataset.as_deref().unwrap_or(&info.dataset_id))?;
        let docs = self.split_docs(&data, q.split.as_deref())?;
        let mut report = evaluate(&model, docs, &data.dataset.name)?;
        report.model = Some(model_id.to_string());
        let bias = if q.bias.is_empty() {
            None
        } else {
            let specs = subpopulations(&q.bias)?;
            let labels: Vec<usize> = docs.iter().map(|d| d.label).collect();
            let predictions = model.predict_labels(docs);
            let positive = q.positive.unwrap_or(1);
            Some(bias_metrics(&predictions, &labels, docs, &specs, positive)?)
        };
        Ok(MetricsResponse { report, bias })
    }

    pub fn compare(&self, q: CompareQuery) -> Result<CompareResponse, ServiceError> {
        let a_info = self.model_info(&q.a)?;
        self.model_info(&q.b)?;
        let (a, b) = (self.model(&q.a)?, self.model(&q.b)?);
        if a.config.classes != b.config.classes {
            return Err(ServiceError::Validation("models have different classes".into()));
        }
        let data = self.dataset(q.dataset.as_deref().unwrap_or(&a_info.dataset_id))?;
        let docs = self.split_docs(&data, q.split.as_deref())?;
        let mut ra = evaluate(&a, docs, &data.dataset.name)?;
        let mut rb = evaluate(&b, docs, &data.dataset.name)?;
        ra.model = Some(q.a.clone());
        rb.model = Some(q.b.clone());
        let labels: Vec<usize> = docs.iter().map(|d| d.label).collect();
        let test = approx_randomization_test(
            &a.predict_labels(docs),
            &b.predict_labels(docs),
            &labels,
            a.class_count(),
            q.iterations.unwrap_or(1000),
            0.05,
            q.seed.unwrap_or(0),
        )?;
        Ok(CompareResponse {
            delta_accuracy: rb.accuracy - ra.accuracy,
            delta_macro_f1: rb.macro_f1 - ra.macro_f1,
            a: ra,
            b: rb,
            p_value: test.p_value,
            significant: test.significant,
        })
    }

    pub fn ablation(&self, req: AblationRequest) -> Result<AblationReport, ServiceError> {
        let data = self.dataset(&req.dataset_id)?;
        let oracle = req.oracle.resolve(&data.dataset.classes)?;
        Ok(rank_ablation(&data.dataset, data.vocab.clone(), data.embeddings.clone(), &oracle, &req.config)?)
    }

    pub fn bias_experiment(&self, req: BiasRequest) -> Result<BiasSummary, ServiceError> {
        let data = self.dataset(&req.dataset_id)?;
        Ok(bias_debug(&data.dataset, data.vocab.clone(), data.embeddings.clone(), &req.config)?)
    }
}

fn dataset_file(format: DatasetFormat) -> &'static str {
    match format {
        DatasetFormat::Jsonl => "dataset.jsonl",
        DatasetFormat::Csv => "dataset.csv",
    }
}

fn log_ref(model_id: &str) -> String {
    format!("logs/{model_id}.jsonl")
}

fn load_dir(dir: &Path) -> Result<LoadedDataset, ServiceError> {
    let (path, format) = [DatasetFormat::Jsonl, DatasetFormat::Csv]
        .into_iter()
        .map(|f| (dir.join(dataset_file(f)), f))
        .find(|(p, _)| p.exists())
        .ok_or_else(|| ServiceError::Internal(format!("no dataset file in {}", dir.display())))?;
    let dataset = load_dataset(&path, format)?;
    let vocab = Vocabulary::build(&dataset);
    let embeddings = load_embeddings(&dir.join("embeddings.txt"), &vocab)?;
    Ok(LoadedDataset {
        dataset,
        vocab: Arc::new(vocab),
        embeddings: Arc::new(embeddings),
    })
}

fn describe(
    model: &ModelSnapshot,
    id: &str,
    dataset_id: &str,
    parent: Option<&str>,
    lineage: Option<&str>,
    origin: ModelOrigin,
) -> ModelInfo {
    ModelInfo {
        model_id: id.to_string(),
        dataset_id: dataset_id.to_string(),
        architecture: model.arch_tag().to_string(),
        classes: model.config.classes.clone(),
        feature_count: model.feature_count(),
        disabled: model.disabled_features(),
        parent: parent.map(String::from),
        lineage: lineage.unwrap_or(id).to_string(),
        origin,
    }
}

fn subpopulations(names: &[String]) -> Result<Vec<SubpopulationSpec>, ServiceError> {
    let builtin = gender_subpopulations();
    let mut seen = BTreeSet::new();
    names
        .iter()
        .filter(|n| seen.insert(n.as_str()))
        .map(|name| {
            builtin
                .iter()
                .find(|s| &s.name == name)
                .cloned()
                .ok_or_else(|| ServiceError::Validation(format!("unknown subpopulation {name:?}; known: male, female")))
        })
        .collect()
}
