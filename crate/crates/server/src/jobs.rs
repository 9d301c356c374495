//! In-memory job registry. Jobs wait for one of a fixed number of worker
//! slots, run on the blocking pool, and report progress as they go.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use mirror_core::store::Stage;
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Failed,
    Done,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Failed | JobState::Done)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Pipeline,
    Layout,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub completed: usize,
    pub total: usize,
    /// Last stage that became durable.
    pub stage: Option<Stage>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Job {
    pub job_id: String,
    pub dataset_id: String,
    pub kind: JobKind,
    pub state: JobState,
    pub progress: Progress,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Id of the layout a finished layout job produced.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layout_id: Option<String>,
}

/// Pipeline progress is counted in stages after `uploaded`.
pub const PIPELINE_STEPS: usize = Stage::ALL.len() - 1;

fn stage_index(stage: Stage) -> usize {
    Stage::ALL.iter().position(|s| *s == stage).unwrap_or(0)
}

pub struct Jobs {
    jobs: RwLock<HashMap<String, Job>>,
    slots: Arc<Semaphore>,
}

impl Jobs {
    pub fn new(workers: usize) -> Self {
        Jobs { jobs: RwLock::new(HashMap::new()), slots: Arc::new(Semaphore::new(workers.max(1))) }
    }

    pub fn slots(&self) -> Arc<Semaphore> {
        self.slots.clone()
    }

    /// Registers a queued job. Pipeline jobs start at the dataset's
    /// current stage.
    pub fn create(&self, kind: JobKind, dataset_id: &str, from: Stage) -> Job {
        let (completed, total, stage) = match kind {
            JobKind::Pipeline => (stage_index(from), PIPELINE_STEPS, Some(from)),
            JobKind::Layout => (0, 1, None),
        };
        let job = Job {
            job_id: uuid::Uuid::new_v4().simple().to_string(),
            dataset_id: dataset_id.to_string(),
            kind,
            state: JobState::Queued,
            progress: Progress { completed, total, stage },
            error: None,
            layout_id: None,
        };
        self.jobs.write().unwrap().insert(job.job_id.clone(), job.clone());
        job
    }

    pub fn get(&self, job_id: &str) -> Option<Job> {
        self.jobs.read().unwrap().get(job_id).cloned()
    }

    /// True while any unfinished job targets the dataset.
    pub fn active_for(&self, dataset_id: &str) -> bool {
        self.jobs.read().unwrap().values().any(|j| j.dataset_id == dataset_id && !j.state.is_terminal())
    }

    fn update(&self, job_id: &str, f: impl FnOnce(&mut Job)) -> Option<Job> {
        let mut jobs = self.jobs.write().unwrap();
        let job = jobs.get_mut(job_id)?;
        if !job.state.is_terminal() {
            f(job);
        }
        Some(job.clone())
    }

    pub fn start(&self, job_id: &str) {
        self.update(job_id, |j| j.state = JobState::Running);
    }

    /// Records a completed stage; never moves progress backwards.
    pub fn advance(&self, job_id: &str, stage: Stage) {
        self.update(job_id, |j| {
            let done = stage_index(stage).min(j.progress.total);
            if done > j.progress.completed {
                j.progress.completed = done;
                j.progress.stage = Some(stage);
            }
        });
    }

    pub fn finish(&self, job_id: &str, layout_id: Option<String>) -> Option<Job> {
        self.update(job_id, |j| {
            j.state = JobState::Done;
            j.progress.completed = j.progress.total;
            j.layout_id = layout_id;
        })
    }

    pub fn fail(&self, job_id: &str, error: String) -> Option<Job> {
        self.update(job_id, |j| {
            j.state = JobState::Failed;
            j.error = Some(error);
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn progress_is_monotone_and_terminal_states_stick() {
        let jobs = Jobs::new(1);
        let job = jobs.create(JobKind::Pipeline, "d", Stage::Uploaded);
        assert_eq!(job.progress, Progress { completed: 0, total: 6, stage: Some(Stage::Uploaded) });
        jobs.start(&job.job_id);
        jobs.advance(&job.job_id, Stage::Enriched);
        jobs.advance(&job.job_id, Stage::Parsed);
        let j = jobs.get(&job.job_id).unwrap();
        assert_eq!((j.state, j.progress.completed), (JobState::Running, 2));

        jobs.fail(&job.job_id, "boom".into());
        jobs.finish(&job.job_id, None);
        jobs.advance(&job.job_id, Stage::Ready);
        let j = jobs.get(&job.job_id).unwrap();
        assert_eq!(j.state, JobState::Failed);
        assert_eq!(j.progress.completed, 2);
        assert_eq!(j.error.as_deref(), Some("boom"));
    }

    #[test]
    fn resumed_pipeline_starts_at_current_stage() {
        let jobs = Jobs::new(1);
        let job = jobs.create(JobKind::Pipeline, "d", Stage::Embedded);
        assert_eq!(job.progress.completed, 4);
        assert!(jobs.active_for("d"));
        jobs.finish(&job.job_id, None);
        assert!(!jobs.active_for("d"));
        assert_eq!(jobs.get(&job.job_id).unwrap().progress.completed, 6);
    }
}
