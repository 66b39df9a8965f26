use narrativeplay::extraction::Stage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Chunking,
    Extracting,
    Deduping,
    MediaPrefetch,
    Done,
    Failed,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, Self::Done | Self::Failed)
    }

    /// Forward-only: a state may repeat (progress updates) or move later;
    /// any live state may fail; terminal states never change.
    pub fn can_move_to(self, next: JobState) -> bool {
        !self.is_terminal() && (next == Self::Failed || next >= self)
    }

    /// Share of the overall progress at which this state begins and ends.
    fn band(self) -> (f64, f64) {
        match self {
            Self::Queued => (0.0, 0.0),
            Self::Chunking => (0.0, 0.05),
            Self::Extracting => (0.05, 0.85),
            Self::Deduping => (0.85, 0.9),
            Self::MediaPrefetch => (0.9, 1.0),
            Self::Done => (1.0, 1.0),
            Self::Failed => (0.0, 1.0),
        }
    }
}

impl From<Stage> for JobState {
    fn from(stage: Stage) -> Self {
        match stage {
            Stage::Chunking => Self::Chunking,
            Stage::Extracting => Self::Extracting,
            Stage::Deduping => Self::Deduping,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("job {narrative_id} cannot move from {from:?} to {to:?}")]
pub struct TransitionError {
    pub narrative_id: String,
    pub from: JobState,
    pub to: JobState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestionJob {
    pub id: String,
    pub narrative_id: String,
    pub title: String,
    pub state: JobState,
    /// Overall fraction complete, in [0, 1] and never decreasing.
    pub progress: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Hash of title and body; a re-upload of the same text reuses the job.
    pub content_hash: String,
    pub created_at_ms: u64,
    pub updated_at_ms: u64,
}

impl IngestionJob {
    pub fn new(narrative_id: &str, title: &str, content_hash: &str, now_ms: u64) -> Self {
        Self {
            id: format!("job-{narrative_id}"),
            narrative_id: narrative_id.to_string(),
            title: title.to_string(),
            state: JobState::Queued,
            progress: 0.0,
            error: None,
            content_hash: content_hash.to_string(),
            created_at_ms: now_ms,
            updated_at_ms: now_ms,
        }
    }

    /// Moves to `state` with `fraction` of that state done.
    pub fn transition(&mut self, state: JobState, fraction: f64, now_ms: u64) -> Result<(), TransitionError> {
        if !self.state.can_move_to(state) {
            return Err(TransitionError {
                narrative_id: self.narrative_id.clone(),
                from: self.state,
                to: state,
            });
        }
        if state != JobState::Failed {
            let (lo, hi) = state.band();
            self.progress = self.progress.max(lo + (hi - lo) * fraction.clamp(0.0, 1.0));
        }
        self.state = state;
        self.updated_at_ms = now_ms;
        Ok(())
    }

    pub fn fail(&mut self, message: impl Into<String>, now_ms: u64) -> Result<(), TransitionError> {
        self.transition(JobState::Failed, 0.0, now_ms)?;
        self.error = Some(message.into());
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_only() {
        let mut job = IngestionJob::new("n", "N", "h", 0);
        job.transition(JobState::Chunking, 1.0, 1).unwrap();
        job.transition(JobState::Extracting, 0.5, 2).unwrap();
        assert!((job.progress - 0.45).abs() < 1e-12);
        job.transition(JobState::Extracting, 0.75, 3).unwrap();
        assert!(job.transition(JobState::Chunking, 0.0, 4).is_err());
        job.transition(JobState::Done, 1.0, 5).unwrap();
        assert_eq!(job.progress, 1.0);
        assert!(job.fail("late", 6).is_err());
    }

    #[test]
    fn failure_keeps_progress() {
        let mut job = IngestionJob::new("n", "N", "h", 0);
        job.transition(JobState::Extracting, 0.5, 1).unwrap();
        let before = job.progress;
        job.fail("provider down", 2).unwrap();
        assert_eq!(job.state, JobState::Failed);
        assert_eq!(job.progress, before);
        assert_eq!(job.error.as_deref(), Some("provider down"));
    }
}
