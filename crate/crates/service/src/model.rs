use serde::{Deserialize, Serialize};
use visagent_core::agent::Message;
use visagent_core::domain::{DatasetKind, GeoTag, Prediction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobStatus::Done | JobStatus::Failed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobResult {
    pub prediction: Prediction,
    pub transcript_id: String,
    pub transcript_url: String,
    pub visrag_pos_id: Option<String>,
    pub visrag_neg_id: Option<String>,
    pub visrag_pos_url: Option<String>,
    pub visrag_neg_url: Option<String>,
    pub n_tool_calls: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub job_id: String,
    pub status: JobStatus,
    pub submitted_at: String,
    pub started_at: Option<String>,
    pub finished_at: Option<String>,
    pub dataset_kind: DatasetKind,
    /// Key of the uploaded bytes in the store.
    pub image_ref: String,
    pub geo: Option<GeoTag>,
    pub result: Option<JobResult>,
    pub error: Option<String>,
    /// How many times a worker has started the job.
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("job cannot move from {from:?} to {to:?}")]
pub struct TransitionError {
    pub from: JobStatus,
    pub to: JobStatus,
}

impl Job {
    pub fn new(job_id: String, kind: DatasetKind, geo: Option<GeoTag>, now: String) -> Self {
        Self {
            image_ref: job_id.clone(),
            job_id,
            status: JobStatus::Queued,
            submitted_at: now,
            started_at: None,
            finished_at: None,
            dataset_kind: kind,
            geo,
            result: None,
            error: None,
            attempts: 0,
        }
    }

    fn check(&self, allowed: &[JobStatus], to: JobStatus) -> Result<(), TransitionError> {
        if allowed.contains(&self.status) {
            Ok(())
        } else {
            Err(TransitionError { from: self.status, to })
        }
    }

    pub fn start(&mut self, now: String) -> Result<(), TransitionError> {
        self.check(&[JobStatus::Queued], JobStatus::Running)?;
        self.status = JobStatus::Running;
        self.started_at = Some(now);
        self.attempts += 1;
        Ok(())
    }

    pub fn finish(&mut self, result: JobResult, now: String) -> Result<(), TransitionError> {
        self.check(&[JobStatus::Running], JobStatus::Done)?;
        self.status = JobStatus::Done;
        self.result = Some(result);
        self.finished_at = Some(now);
        Ok(())
    }

    pub fn fail(&mut self, error: String, now: String) -> Result<(), TransitionError> {
        self.check(&[JobStatus::Queued, JobStatus::Running], JobStatus::Failed)?;
        self.status = JobStatus::Failed;
        self.error = Some(error);
        self.finished_at = Some(now);
        Ok(())
    }

    /// Only for recovery at start-up: the worker that ran the job is gone.
    pub fn requeue_after_restart(&mut self) -> Result<(), TransitionError> {
        self.check(&[JobStatus::Running], JobStatus::Queued)?;
        self.status = JobStatus::Queued;
        self.started_at = None;
        Ok(())
    }
}

/// Questions and answers about one transcript. The transcript itself is never
/// modified.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FollowUpSession {
    pub transcript_id: String,
    pub messages: Vec<Message>,
}
