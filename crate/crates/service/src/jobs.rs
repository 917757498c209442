//! Long-running work (training, apply, experiments) on a bounded pool.
//! At most one mutating job per model lineage runs at a time.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use find_core::api::{JobAccepted, JobState, JobStatus};
use parking_lot::Mutex;
use serde::Serialize;
use tokio::sync::Semaphore;

use crate::error::ServiceError;

#[derive(Default)]
struct Inner {
    next: u64,
    jobs: BTreeMap<String, JobStatus>,
    busy: BTreeSet<String>,
}

pub struct Jobs {
    inner: Mutex<Inner>,
    workers: Arc<Semaphore>,
}

impl Jobs {
    pub fn new(workers: usize) -> Jobs {
        Jobs {
            inner: Mutex::new(Inner::default()),
            workers: Arc::new(Semaphore::new(workers)),
        }
    }

    /// Queues `work`. With a `lineage`, rejects the job while another job
    /// on the same lineage is unfinished.
    pub fn submit<T, F>(self: &Arc<Self>, kind: &str, lineage: Option<String>, work: F) -> Result<JobAccepted, ServiceError>
    where
        T: Serialize,
        F: FnOnce() -> Result<T, ServiceError> + Send + 'static,
    {
        let job_id = {
            let mut inner = self.inner.lock();
            if let Some(l) = &lineage {
                if !inner.busy.insert(l.clone()) {
                    return Err(ServiceError::Conflict(format!("a job is already running on model lineage {l}")));
                }
            }
            inner.next += 1;
            let job_id = format!("j{:06}", inner.next);
            inner.jobs.insert(
                job_id.clone(),
                JobStatus {
                    job_id: job_id.clone(),
                    kind: kind.to_string(),
                    state: JobState::Queued,
                    result: None,
                    error: None,
                },
            );
            job_id
        };

        let jobs = self.clone();
        let id = job_id.clone();
        tokio::spawn(async move {
            let _permit = jobs.workers.clone().acquire_owned().await.expect("semaphore is never closed");
            jobs.update(&id, |j| j.state = JobState::Running);
            let outcome = tokio::task::spawn_blocking(move || {
                work().and_then(|v| serde_json::to_value(v).map_err(|e| ServiceError::Internal(e.to_string())))
            })
            .await
            .unwrap_or_else(|e| Err(ServiceError::Internal(format!("job panicked: {e}"))));
            jobs.update(&id, |j| match outcome {
                Ok(value) => {
                    j.state = JobState::Succeeded;
                    j.result = Some(value);
                }
                Err(e) => {
                    tracing::warn!(job = %j.job_id, "job failed: {e}");
                    j.state = JobState::Failed;
                    j.error = Some(e.body());
                }
            });
            if let Some(l) = lineage {
                jobs.inner.lock().busy.remove(&l);
            }
        });
        Ok(JobAccepted { job_id })
    }

    pub fn get(&self, id: &str) -> Result<JobStatus, ServiceError> {
        self.inner
            .lock()
            .jobs
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("job {id}")))
    }

    fn update(&self, id: &str, f: impl FnOnce(&mut JobStatus)) {
        if let Some(job) = self.inner.lock().jobs.get_mut(id) {
            f(job);
        }
    }
}

#[cfg(test)]
mod tests {
    use std::time::Duration;

    use super::*;

    async fn wait(jobs: &Jobs, id: &str) -> JobStatus {
        loop {
            let s = jobs.get(id).unwrap();
            if s.is_finished() {
                return s;
            }
            tokio::time::sleep(Duration::from_millis(5)).await;
        }
    }

    #[tokio::test]
    async fn jobs_report_results_and_errors() {
        let jobs = Arc::new(Jobs::new(2));
        let ok = jobs.submit("t", None, || Ok(41 + 1)).unwrap();
        let bad = jobs
            .submit("t", None, || Err::<(), _>(ServiceError::Validation("nope".into())))
            .unwrap();
        let ok = wait(&jobs, &ok.job_id).await;
        assert_eq!(ok.state, JobState::Succeeded);
        assert_eq!(ok.result, Some(serde_json::json!(42)));
        let bad = wait(&jobs, &bad.job_id).await;
        assert_eq!(bad.state, JobState::Failed);
        assert_eq!(bad.error.unwrap().code, "validation");
        assert!(jobs.get("j999999").is_err());
    }

    #[tokio::test]
    async fn one_job_per_lineage() {
        let jobs = Arc::new(Jobs::new(2));
        let (tx, rx) = std::sync::mpsc::channel::<()>();
        let first = jobs
            .submit("apply", Some("m1".into()), move || {
                rx.recv().ok();
                Ok(())
            })
            .unwrap();
        let second = jobs.submit("apply", Some("m1".into()), || Ok(()));
        assert!(matches!(second, Err(ServiceError::Conflict(_))));
        assert!(jobs.submit("apply", Some("m2".into()), || Ok(())).is_ok());
        tx.send(()).unwrap();
        wait(&jobs, &first.job_id).await;
        assert!(jobs.submit("apply", Some("m1".into()), || Ok(())).is_ok());
    }
}
