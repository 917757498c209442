//! The workspace as a fold over its event log. Every mutation of the
//! service is one [`Event`]; replaying the log through [`WorkspaceState::apply`]
//! rebuilds the state exactly.

use std::collections::BTreeMap;

use find_core::api::{DatasetInfo, ModelInfo, TrainingSummary};
use find_core::feedback::{Aggregation, Answer, FeedbackSession, SessionStatus};
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    DatasetRegistered {
        info: DatasetInfo,
    },
    /// A trained, imported or directly disabled model. The snapshot file is
    /// on disk before this line is written.
    ModelAdded {
        info: ModelInfo,
        #[serde(default)]
        training: Option<TrainingSummary>,
    },
    SessionCreated {
        session: FeedbackSession,
    },
    AnswersAdded {
        session_id: String,
        answers: Vec<Answer>,
    },
    /// Aggregation, the derived model and the session's final status in one
    /// line, so an apply is either entirely visible or not at all.
    SessionApplied {
        session_id: String,
        aggregation: Aggregation,
        model: ModelInfo,
        #[serde(default)]
        training: Option<TrainingSummary>,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceState {
    pub datasets: BTreeMap<String, DatasetInfo>,
    /// Snapshots are immutable and content-addressed; an id is never rebound.
    pub models: BTreeMap<String, ModelInfo>,
    pub training: BTreeMap<String, TrainingSummary>,
    pub sessions: BTreeMap<String, FeedbackSession>,
    /// Session id -> id of the model its apply produced.
    pub applied: BTreeMap<String, String>,
    pub events: u64,
}

impl WorkspaceState {
    /// Checks `event` against the current state and applies it. A rejected
    /// event leaves the state untouched.
    pub fn apply(&mut self, event: &Event) -> Result<(), ServiceError> {
        match event {
            Event::DatasetRegistered { info } => {
                self.datasets.entry(info.dataset_id.clone()).or_insert_with(|| info.clone());
            }
            Event::ModelAdded { info, training } => {
                self.check_model(info)?;
                self.add_model(info, training);
            }
            Event::SessionCreated { session } => {
                if self.sessions.contains_key(&session.session_id) {
                    return Err(ServiceError::Conflict(format!("session {} exists", session.session_id)));
                }
                if !self.models.contains_key(&session.model_id) {
                    return Err(ServiceError::NotFound(format!("model {}", session.model_id)));
                }
                self.sessions.insert(session.session_id.clone(), session.clone());
            }
            Event::AnswersAdded { session_id, answers } => {
                let session = self.session(session_id)?;
                for answer in answers {
                    session.validate_answer(answer)?;
                }
                let session = self.sessions.get_mut(session_id).expect("checked above");
                session.answers.extend(answers.iter().cloned());
            }
            Event::SessionApplied {
                session_id,
                aggregation,
                model,
                training,
            } => {
                let session = self.session(session_id)?;
                if session.status != SessionStatus::Collecting {
                    return Err(ServiceError::Conflict(format!("session {session_id} was already applied")));
                }
                self.check_model(model)?;
                self.add_model(model, training);
                let session = self.sessions.get_mut(session_id).expect("checked above");
                session.aggregation = Some(aggregation.clone());
                session.status = SessionStatus::Applied;
                self.applied.insert(session_id.clone(), model.model_id.clone());
            }
        }
        self.events += 1;
        Ok(())
    }

    pub fn session(&self, id: &str) -> Result<&FeedbackSession, ServiceError> {
        self.sessions
            .get(id)
            .ok_or_else(|| ServiceError::NotFound(format!("session {id}")))
    }

    pub fn model(&self, id: &str) -> Result<&ModelInfo, ServiceError> {
        self.models
            .get(id)
            .ok_or_else(|| ServiceError::NotFound(format!("model {id}")))
    }

    pub fn dataset(&self, id: &str) -> Result<&DatasetInfo, ServiceError> {
        self.datasets
            .get(id)
            .ok_or_else(|| ServiceError::NotFound(format!("dataset {id}")))
    }

    /// Id for the next session; stable under replay.
    pub fn next_session_id(&self) -> String {
        format!("s{:04}", self.sessions.len() + 1)
    }

    fn check_model(&self, info: &ModelInfo) -> Result<(), ServiceError> {
        self.dataset(&info.dataset_id)?;
        if let Some(parent) = &info.parent {
            self.model(parent)?;
        }
        Ok(())
    }

    fn add_model(&mut self, info: &ModelInfo, training: &Option<TrainingSummary>) {
        if !self.models.contains_key(&info.model_id) {
            self.models.insert(info.model_id.clone(), info.clone());
            if let Some(t) = training {
                self.training.insert(info.model_id.clone(), t.clone());
            }
        }
    }
}
