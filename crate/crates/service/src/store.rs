use std::path::Path;

use redb::{Database, ReadableTable, TableDefinition};

use crate::model::{FollowUpSession, Job};

const JOBS: TableDefinition<&str, &str> = TableDefinition::new("jobs");
const UPLOADS: TableDefinition<&str, &[u8]> = TableDefinition::new("uploads");
const TRANSCRIPTS: TableDefinition<&str, &str> = TableDefinition::new("transcripts");
const SESSIONS: TableDefinition<&str, &str> = TableDefinition::new("sessions");

#[derive(Debug, thiserror::Error)]
#[error("store: {0}")]
pub struct StoreError(String);

fn err(e: impl std::fmt::Display) -> StoreError {
    StoreError(e.to_string())
}

/// Transactional persistence for jobs, uploads, transcripts and sessions.
pub struct Store {
    db: Database,
}

impl Store {
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        let db = Database::create(path).map_err(err)?;
        let w = db.begin_write().map_err(err)?;
        w.open_table(JOBS).map_err(err)?;
        w.open_table(UPLOADS).map_err(err)?;
        w.open_table(TRANSCRIPTS).map_err(err)?;
        w.open_table(SESSIONS).map_err(err)?;
        w.commit().map_err(err)?;
        Ok(Self { db })
    }

    fn write(&self, f: impl FnOnce(&redb::WriteTransaction) -> Result<(), StoreError>) -> Result<(), StoreError> {
        let w = self.db.begin_write().map_err(err)?;
        f(&w)?;
        w.commit().map_err(err)
    }

    fn get_str(&self, table: TableDefinition<&str, &str>, key: &str) -> Result<Option<String>, StoreError> {
        let r = self.db.begin_read().map_err(err)?;
        let t = r.open_table(table).map_err(err)?;
        Ok(t.get(key).map_err(err)?.map(|v| v.value().to_string()))
    }

    /// Stores a new job together with its upload.
    pub fn submit(&self, job: &Job, image: &[u8]) -> Result<(), StoreError> {
        let json = serde_json::to_string(job).map_err(err)?;
        self.write(|w| {
            w.open_table(UPLOADS).map_err(err)?.insert(job.image_ref.as_str(), image).map_err(err)?;
            w.open_table(JOBS).map_err(err)?.insert(job.job_id.as_str(), json.as_str()).map_err(err)?;
            Ok(())
        })
    }

    pub fn put_job(&self, job: &Job) -> Result<(), StoreError> {
        let json = serde_json::to_string(job).map_err(err)?;
        self.write(|w| {
            w.open_table(JOBS).map_err(err)?.insert(job.job_id.as_str(), json.as_str()).map_err(err)?;
            Ok(())
        })
    }

    /// Marks a job done and stores its transcript in one transaction.
    pub fn complete(&self, job: &Job, transcript_id: &str, transcript_json: &str) -> Result<(), StoreError> {
        let json = serde_json::to_string(job).map_err(err)?;
        self.write(|w| {
            w.open_table(TRANSCRIPTS).map_err(err)?.insert(transcript_id, transcript_json).map_err(err)?;
            w.open_table(JOBS).map_err(err)?.insert(job.job_id.as_str(), json.as_str()).map_err(err)?;
            Ok(())
        })
    }

    pub fn job(&self, id: &str) -> Result<Option<Job>, StoreError> {
        self.get_str(JOBS, id)?
            .map(|s| serde_json::from_str(&s).map_err(err))
            .transpose()
    }

    pub fn jobs(&self) -> Result<Vec<Job>, StoreError> {
        let r = self.db.begin_read().map_err(err)?;
        let t = r.open_table(JOBS).map_err(err)?;
        let mut out = Vec::new();
        for row in t.iter().map_err(err)? {
            let (_, v) = row.map_err(err)?;
            out.push(serde_json::from_str(v.value()).map_err(err)?);
        }
        Ok(out)
    }

    pub fn upload(&self, key: &str) -> Result<Option<Vec<u8>>, StoreError> {
        let r = self.db.begin_read().map_err(err)?;
        let t = r.open_table(UPLOADS).map_err(err)?;
        Ok(t.get(key).map_err(err)?.map(|v| v.value().to_vec()))
    }

    /// The transcript JSON exactly as stored.
    pub fn transcript(&self, id: &str) -> Result<Option<String>, StoreError> {
        self.get_str(TRANSCRIPTS, id)
    }

    pub fn session(&self, transcript_id: &str) -> Result<Option<FollowUpSession>, StoreError> {
        self.get_str(SESSIONS, transcript_id)?
            .map(|s| serde_json::from_str(&s).map_err(err))
            .transpose()
    }

    pub fn put_session(&self, session: &FollowUpSession) -> Result<(), StoreError> {
        let json = serde_json::to_string(session).map_err(err)?;
        self.write(|w| {
            w.open_table(SESSIONS)
                .map_err(err)?
                .insert(session.transcript_id.as_str(), json.as_str())
                .map_err(err)?;
            Ok(())
        })
    }
}
