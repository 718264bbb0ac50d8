//! Core of a dialogue-based Socratic tutoring service.
//!
//! Two stages: [`scenario`] builds a learning scenario (spec, knowledge
//! components, KC x wh-question matrix) and [`dialogue`] runs the tutoring
//! loop over it. [`survey`] analyzes pilot questionnaires, [`store`] keeps
//! everything on disk, and [`batch`] runs the data-parallel workloads.

pub mod batch;
pub mod dialogue;
pub mod fixtures;
pub mod prompt;
pub mod provider;
pub mod scenario;
pub mod store;
pub mod survey;
pub mod wh;

pub use dialogue::{DialogueSession, SessionConfig};
pub use provider::{ChatProvider, ProviderError};
pub use scenario::{KnowledgeComponent, ScenarioMatrix, ScenarioSpec};
