//! Batch entry points with a choice of sequential or rayon execution.
//!
//! Without the `parallel` feature, [`Execution::Parallel`] quietly runs
//! sequentially, so callers never need their own cfg gates.

use serde::{Deserialize, Serialize};

use crate::dialogue::{self, DialogueError, DialogueSession, SessionConfig, WhEntry};
use crate::prompt::{extract_json_objects, ExtractedJsonObject, PromptError};
use crate::provider::ChatProvider;
use crate::scenario::{KnowledgeComponent, ScenarioSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    Sequential,
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

impl Execution {
    /// Whether work will actually be spread across threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }

    /// Order-preserving map.
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            use rayon::prelude::*;
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    /// Folds chunks independently and merges the partial results. `merge`
    /// must be associative and `identity()` its neutral element.
    pub fn fold_reduce<T, A, I, F, M>(self, items: &[T], identity: I, fold: F, merge: M) -> A
    where
        T: Sync,
        A: Send,
        I: Fn() -> A + Sync + Send,
        F: Fn(A, &T) -> A + Sync + Send,
        M: Fn(A, A) -> A + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            use rayon::prelude::*;
            return items.par_iter().fold(&identity, &fold).reduce(&identity, &merge);
        }
        let _ = &merge;
        items.iter().fold(identity(), fold)
    }
}

/// Extracts JSON objects from many LLM outputs.
pub fn extract_batch(texts: &[String], exec: Execution) -> Vec<Result<Vec<ExtractedJsonObject>, PromptError>> {
    exec.map(texts, |t| extract_json_objects(t))
}

/// A self-contained scripted session: its own provider and learner input.
pub struct SessionJob<P> {
    pub spec: ScenarioSpec,
    pub kc: KnowledgeComponent,
    pub entry: WhEntry,
    pub config: SessionConfig,
    pub provider: P,
    pub learner_lines: Vec<String>,
}

/// Starts the session, feeds every learner line until the session ends, and
/// closes it with a summary if it is still active.
pub fn run_session<P: ChatProvider>(job: &SessionJob<P>) -> Result<DialogueSession, DialogueError> {
    let mut session =
        dialogue::start_session(&job.spec, &job.kc, job.entry.clone(), job.config.clone(), &job.provider)?;
    for line in &job.learner_lines {
        if !session.is_active() {
            break;
        }
        dialogue::submit_response(&mut session, line, &job.provider)?;
    }
    if session.is_active() {
        dialogue::end_session(&mut session, &job.provider)?;
    }
    Ok(session)
}

pub fn run_sessions<P: ChatProvider>(
    jobs: &[SessionJob<P>],
    exec: Execution,
) -> Vec<Result<DialogueSession, DialogueError>> {
    exec.map(jobs, run_session)
}
