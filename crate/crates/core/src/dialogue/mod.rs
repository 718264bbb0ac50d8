//! Multi-turn Socratic dialogue: opening context, assessment of each learner
//! response, and a feedback-then-question tutor turn chosen by a policy.

mod policy;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::prompt::{self, extract_json_objects, VariableSet};
use crate::provider::{ask, ChatMessage, ChatProvider, ProviderError, DIALOGUE_TEMPERATURE, EXTRACTION_TEMPERATURE};
use crate::scenario::{cell_is_valid, KnowledgeComponent, ScenarioSpec};
use crate::wh::{self, WhType};

pub use policy::{select_prompt_type, DialoguePolicy, PolicyId, PolicyInput, PromptType, StreakOverridePolicy};

pub const DEFAULT_MAX_TURNS: u32 = 30;
const ASSESSMENT_UNAVAILABLE: &str = "assessment unavailable";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DialogueError {
    #[error("session has ended")]
    SessionEnded,
    #[error("session is not waiting for a learner response")]
    NotAwaitingResponse,
    #[error("invalid opening question: {0}")]
    InvalidOpeningQuestion(String),
    #[error("invalid scenario: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Classification {
    Correct,
    Partial,
    Incorrect,
    OffTopic,
}

impl Classification {
    pub const ALL: [Classification; 4] =
        [Classification::Correct, Classification::Partial, Classification::Incorrect, Classification::OffTopic];
}

impl FromStr for Classification {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s.chars().filter(|c| c.is_alphanumeric()).collect::<String>().to_lowercase();
        match key.as_str() {
            "correct" => Ok(Classification::Correct),
            "partial" | "partiallycorrect" => Ok(Classification::Partial),
            "incorrect" | "wrong" => Ok(Classification::Incorrect),
            "offtopic" => Ok(Classification::OffTopic),
            _ => Err(format!("unknown classification `{s}`")),
        }
    }
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assessment {
    pub classification: Classification,
    pub rationale: String,
    /// Set when the provider never produced a usable assessment.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub fallback: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Tutor,
    Learner,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnWarning {
    /// The first composition broke a constraint and was regenerated.
    Regenerated,
    /// The regenerated text still broke a constraint and was patched.
    Patched,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub index: usize,
    pub role: Role,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_type: Option<PromptType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assessment: Option<Assessment>,
    pub timestamp: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<TurnWarning>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionStatus {
    #[default]
    Active,
    Ended,
}

/// Derived from the turn sequence by [`SessionState::apply`]; live operation
/// and transcript replay both go through it.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionState {
    pub correct_streak: u32,
    pub partial_streak: u32,
    pub hint_depth: u32,
    pub wh_coverage: BTreeSet<WhType>,
    pub turn_count: usize,
    pub tutor_turns: u32,
    pub status: SessionStatus,
}

impl SessionState {
    pub fn apply(&mut self, turn: &Turn, config: &SessionConfig) {
        self.turn_count += 1;
        match turn.role {
            Role::Learner => {
                let Some(assessment) = &turn.assessment else { return };
                match assessment.classification {
                    Classification::Correct => {
                        self.correct_streak += 1;
                        self.partial_streak = 0;
                        self.hint_depth = 0;
                    }
                    Classification::Partial => {
                        self.partial_streak += 1;
                        self.correct_streak = 0;
                    }
                    Classification::Incorrect | Classification::OffTopic => {
                        self.hint_depth += 1;
                        self.correct_streak = 0;
                        self.partial_streak = 0;
                    }
                }
            }
            Role::Tutor => {
                self.tutor_turns += 1;
                if let Some(w) = wh::final_sentence(&turn.text).and_then(WhType::first_in) {
                    self.wh_coverage.insert(w);
                }
                if self.tutor_turns >= config.max_turns {
                    self.status = SessionStatus::Ended;
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    /// Tutor turns after which the session ends on its own.
    pub max_turns: u32,
    /// When set, no tutor turn may contain this text (case-insensitive).
    pub expected_answer: Option<String>,
    pub policy: PolicyId,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self { max_turns: DEFAULT_MAX_TURNS, expected_answer: None, policy: PolicyId::default() }
    }
}

impl SessionConfig {
    fn leaks(&self, text: &str) -> bool {
        match self.expected_answer.as_deref().map(str::trim) {
            Some(answer) if !answer.is_empty() => text.to_lowercase().contains(&answer.to_lowercase()),
            _ => false,
        }
    }
}

/// The matrix cell a session was opened from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WhEntry {
    pub kc_index: usize,
    pub wh: WhType,
    pub question: String,
}

/// Everything about a session that does not change after it starts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionHeader {
    pub session_id: Uuid,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario_id: Option<Uuid>,
    pub spec: ScenarioSpec,
    pub kc: KnowledgeComponent,
    pub wh_entry: WhEntry,
    pub config: SessionConfig,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueSession {
    pub header: SessionHeader,
    pub turns: Vec<Turn>,
    pub state: SessionState,
    pub summary: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("transcript invalid at turn {index}: {reason}")]
pub struct ReplayError {
    pub index: usize,
    pub reason: String,
}

impl DialogueSession {
    pub fn id(&self) -> Uuid {
        self.header.session_id
    }

    pub fn is_active(&self) -> bool {
        self.state.status == SessionStatus::Active
    }

    /// Rebuilds a session from stored turns with the same state rules as
    /// live operation. `ended` carries the summary of an explicit end.
    pub fn replay(header: SessionHeader, turns: Vec<Turn>, ended: Option<String>) -> Result<Self, ReplayError> {
        let mut state = SessionState::default();
        for (pos, turn) in turns.iter().enumerate() {
            let fail = |reason: &str| Err(ReplayError { index: turn.index, reason: reason.to_string() });
            if turn.index != pos {
                return fail("turn indices must increase by one from 0");
            }
            let expected = if pos % 2 == 0 { Role::Tutor } else { Role::Learner };
            if turn.role != expected {
                return fail("roles must alternate starting with the tutor");
            }
            match turn.role {
                Role::Tutor if turn.prompt_type.is_none() => return fail("tutor turn without prompt type"),
                Role::Learner if turn.prompt_type.is_some() => return fail("learner turn with prompt type"),
                _ => {}
            }
            if state.status == SessionStatus::Ended {
                return fail("turn after the session ended");
            }
            state.apply(turn, &header.config);
        }
        let mut summary = None;
        if let Some(s) = ended {
            state.status = SessionStatus::Ended;
            summary = Some(s);
        }
        Ok(Self { header, turns, state, summary })
    }

    fn history(&self) -> String {
        self.turns
            .iter()
            .map(|t| match t.role {
                Role::Tutor => format!("{}: {}", self.header.spec.tutor_name, t.text),
                Role::Learner => format!("{}: {}", self.header.spec.user_name, t.text),
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn ensure_awaiting_learner(&self) -> Result<(), DialogueError> {
        if !self.is_active() {
            return Err(DialogueError::SessionEnded);
        }
        match self.turns.last() {
            Some(t) if t.role == Role::Tutor => Ok(()),
            _ => Err(DialogueError::NotAwaitingResponse),
        }
    }
}

fn vars<'a>(pairs: impl IntoIterator<Item = (&'a str, String)>) -> VariableSet {
    let mut set = VariableSet::new();
    for (k, v) in pairs {
        let v = if v.trim().is_empty() { "(none)".to_string() } else { v };
        set.bind(k, v).expect("template variable names are valid");
    }
    set
}

fn render(template: &str, vars: &VariableSet) -> String {
    prompt::bundled(template).render(vars).expect("bundled templates bind every placeholder").text
}

fn without_questions<'a>(text: &'a str, config: &SessionConfig) -> Vec<&'a str> {
    wh::sentences(text).into_iter().filter(|s| !wh::is_question(s) && !config.leaks(s)).collect()
}

/// Opens a session with a scenario context paragraph followed by the
/// opening wh-question.
pub fn start_session(
    spec: &ScenarioSpec,
    kc: &KnowledgeComponent,
    entry: WhEntry,
    config: SessionConfig,
    provider: &dyn ChatProvider,
) -> Result<DialogueSession, DialogueError> {
    spec.validate().map_err(|e| DialogueError::InvalidSpec(e.to_string()))?;
    let question = entry.question.trim().to_string();
    if !cell_is_valid(&question, entry.wh) {
        return Err(DialogueError::InvalidOpeningQuestion(question));
    }
    if config.leaks(&question) {
        return Err(DialogueError::InvalidOpeningQuestion("question reveals the expected answer".into()));
    }
    let prompt = render(
        "scenario_context",
        &vars([
            ("theTutorName", spec.tutor_name.clone()),
            ("theType", spec.pedagogy.label().to_string()),
            ("theLang", spec.lang.clone()),
            ("theUserName", spec.user_name.clone()),
            ("theKC", kc.the_kc.clone()),
            ("theContext", if kc.the_context.is_empty() { spec.context.clone() } else { kc.the_context.clone() }),
            ("theTarget", spec.target.clone()),
            ("theEnvironment", spec.environment.clone()),
            ("theObjective", spec.objective.clone()),
            ("theQuestion", question.clone()),
        ]),
    );
    let reply = ask(provider, vec![ChatMessage::user(prompt)], DIALOGUE_TEMPERATURE)?;
    let kept = without_questions(&reply, &config);
    let context = if kept.is_empty() {
        format!("Imagine {} is exploring {} in {}.", spec.user_name, kc.the_kc, spec.environment)
    } else {
        kept.join(" ")
    };
    let header = SessionHeader {
        session_id: Uuid::new_v4(),
        scenario_id: None,
        spec: spec.clone(),
        kc: kc.clone(),
        wh_entry: WhEntry { question: question.clone(), ..entry },
        config,
        created_at: Utc::now(),
    };
    let opener = Turn {
        index: 0,
        role: Role::Tutor,
        text: format!("{context} {question}"),
        prompt_type: Some(PromptType::InitialContextAndQuestioning),
        assessment: None,
        timestamp: Utc::now(),
        warnings: Vec::new(),
    };
    let mut state = SessionState::default();
    state.apply(&opener, &header.config);
    Ok(DialogueSession { header, turns: vec![opener], state, summary: None })
}

fn parse_assessment(reply: &str) -> Option<Assessment> {
    let objects = extract_json_objects(reply).ok()?;
    objects.iter().find_map(|o| {
        let classification = o.get_str("classification")?.parse().ok()?;
        let rationale = o.get_str("rationale").map(|r| r.trim().to_string()).filter(|r| !r.is_empty());
        Some(Assessment {
            classification,
            rationale: rationale.unwrap_or_else(|| "no rationale given".to_string()),
            fallback: false,
        })
    })
}

/// Classifies the learner's response to the last tutor question.
///
/// Blank input is OffTopic without a provider call. If no usable assessment
/// arrives after one repair round the result is a flagged Partial.
pub fn assess_response(
    session: &DialogueSession,
    learner_text: &str,
    provider: &dyn ChatProvider,
) -> Result<Assessment, DialogueError> {
    session.ensure_awaiting_learner()?;
    if learner_text.trim().is_empty() {
        return Ok(Assessment {
            classification: Classification::OffTopic,
            rationale: "empty response".into(),
            fallback: false,
        });
    }
    let prompt = render(
        "assessment",
        &vars([
            ("theKC", session.header.kc.the_kc.clone()),
            ("theObjective", session.header.spec.objective.clone()),
            ("theHistory", session.history()),
            ("theResponse", learner_text.trim().to_string()),
        ]),
    );
    let mut messages = vec![ChatMessage::user(prompt)];
    for _round in 0..2 {
        let reply = ask(provider, messages.clone(), EXTRACTION_TEMPERATURE)?;
        if let Some(a) = parse_assessment(&reply) {
            return Ok(a);
        }
        messages.push(ChatMessage::assistant(reply));
        messages.push(ChatMessage::user(prompt::bundled("json_repair").raw_text()));
    }
    Ok(Assessment { classification: Classification::Partial, rationale: ASSESSMENT_UNAVAILABLE.into(), fallback: true })
}

/// Constraint violations of a composed tutor turn; empty means acceptable.
pub fn turn_violations(text: &str, config: &SessionConfig) -> Vec<&'static str> {
    let sentences = wh::sentences(text);
    let mut out = Vec::new();
    let Some((last, rest)) = sentences.split_last() else {
        return vec!["the turn is empty"];
    };
    if rest.is_empty() {
        out.push("feedback must come before the question");
    } else if wh::is_question(rest[0]) {
        out.push("the first sentence must be feedback, not a question");
    }
    if !wh::is_question(last) {
        out.push("the turn must end with a question");
    } else if WhType::first_in(last).is_none() {
        out.push("the final question must use a wh-word");
    }
    if rest.iter().any(|s| wh::is_question(s)) {
        out.push("only the final sentence may be a question");
    }
    if config.leaks(text) {
        out.push("the turn reveals the expected answer");
    }
    out
}

fn default_feedback(classification: Classification) -> &'static str {
    match classification {
        Classification::Correct => "That's right, well reasoned.",
        Classification::Partial => "You're on the right track.",
        Classification::Incorrect => "Not quite, but that's a useful place to start.",
        Classification::OffTopic => "Let's bring our focus back to the scenario.",
    }
}

/// Deterministic last resort: keep the non-question, non-leaking sentences
/// and close with the prompt type's example question.
fn patch_turn(text: &str, assessment: &Assessment, prompt_type: PromptType, config: &SessionConfig) -> String {
    let kept = without_questions(text, config);
    let feedback = if kept.is_empty() { default_feedback(assessment.classification).to_string() } else { kept.join(" ") };
    let question = std::iter::once(prompt_type)
        .chain(PromptType::ALL)
        .map(PromptType::example_question)
        .find(|q| !config.leaks(q))
        .unwrap_or("What do you think?");
    format!("{feedback} {question}")
}

/// Composes the next tutor turn: feedback on the learner's response, then a
/// single wh-question. Regenerates once on a constraint violation and
/// patches deterministically if that fails too.
pub fn compose_tutor_turn(
    session: &DialogueSession,
    assessment: &Assessment,
    prompt_type: PromptType,
    provider: &dyn ChatProvider,
) -> Result<Turn, DialogueError> {
    if !session.is_active() {
        return Err(DialogueError::SessionEnded);
    }
    let config = &session.header.config;
    let prompt = render(
        "tutor_turn",
        &vars([
            ("theTutorName", session.header.spec.tutor_name.clone()),
            ("theLang", session.header.spec.lang.clone()),
            ("theHistory", session.history()),
            ("theClassification", assessment.classification.to_string()),
            ("theRationale", assessment.rationale.clone()),
            ("thePromptType", prompt_type.label().to_string()),
            ("theDescription", prompt_type.description().to_string()),
            ("theExample", prompt_type.example_question().to_string()),
        ]),
    );
    let first = ask(provider, vec![ChatMessage::user(prompt.clone())], DIALOGUE_TEMPERATURE)?;
    let violations = turn_violations(&first, config);
    let (text, warnings) = if violations.is_empty() {
        (first.trim().to_string(), vec![])
    } else {
        let repair = render("turn_repair", &vars([("theViolations", violations.join("; "))]));
        let messages = vec![ChatMessage::user(prompt), ChatMessage::assistant(first), ChatMessage::user(repair)];
        let second = ask(provider, messages, DIALOGUE_TEMPERATURE)?;
        if turn_violations(&second, config).is_empty() {
            (second.trim().to_string(), vec![TurnWarning::Regenerated])
        } else {
            let patched = patch_turn(&second, assessment, prompt_type, config);
            (patched, vec![TurnWarning::Regenerated, TurnWarning::Patched])
        }
    };
    Ok(Turn {
        index: session.turns.len(),
        role: Role::Tutor,
        text,
        prompt_type: Some(prompt_type),
        assessment: None,
        timestamp: Utc::now(),
        warnings,
    })
}

/// Records a learner response and the tutor's reply. On error the session
/// is left exactly as it was.
pub fn submit_response(
    session: &mut DialogueSession,
    learner_text: &str,
    provider: &dyn ChatProvider,
) -> Result<(Turn, Turn), DialogueError> {
    session.ensure_awaiting_learner()?;
    let assessment = assess_response(session, learner_text, provider)?;
    let prompt_type = session
        .header
        .config
        .policy
        .policy()
        .select(&PolicyInput::from_state(&session.state), assessment.classification);

    let mut next = session.clone();
    let learner = Turn {
        index: next.turns.len(),
        role: Role::Learner,
        text: learner_text.trim().to_string(),
        prompt_type: None,
        assessment: Some(assessment.clone()),
        timestamp: Utc::now(),
        warnings: Vec::new(),
    };
    next.state.apply(&learner, &next.header.config);
    next.turns.push(learner.clone());
    let tutor = compose_tutor_turn(&next, &assessment, prompt_type, provider)?;
    next.state.apply(&tutor, &next.header.config);
    next.turns.push(tutor.clone());
    if !next.is_active() {
        next.summary = Some(template_summary(&next));
    }
    *session = next;
    Ok((learner, tutor))
}

fn coverage(session: &DialogueSession) -> String {
    let words: Vec<&str> = session.state.wh_coverage.iter().map(|w| w.word()).collect();
    if words.is_empty() {
        "none".to_string()
    } else {
        words.join(", ")
    }
}

/// Summary built from session state alone.
pub fn template_summary(session: &DialogueSession) -> String {
    let learner_turns = session.turns.iter().filter(|t| t.role == Role::Learner).count();
    format!(
        "Session on {} toward the objective \"{}\": {} learner responses, wh-questions covered: {}, final correct streak {}, hint depth {}.",
        session.header.kc.the_kc,
        session.header.spec.objective,
        learner_turns,
        coverage(session),
        session.state.correct_streak,
        session.state.hint_depth,
    )
}

/// Ends the session and returns its summary. A provider failure falls back
/// to [`template_summary`]; the objective is always mentioned.
pub fn end_session(session: &mut DialogueSession, provider: &dyn ChatProvider) -> Result<String, DialogueError> {
    if !session.is_active() {
        return Err(DialogueError::SessionEnded);
    }
    let spec = &session.header.spec;
    let prompt = render(
        "session_summary",
        &vars([
            ("theUserName", spec.user_name.clone()),
            ("theLang", spec.lang.clone()),
            ("theObjective", spec.objective.clone()),
            ("theCoverage", coverage(session)),
            ("theStreak", session.state.correct_streak.to_string()),
            ("theHistory", session.history()),
        ]),
    );
    let summary = match ask(provider, vec![ChatMessage::user(prompt)], EXTRACTION_TEMPERATURE) {
        Ok(text) if !text.trim().is_empty() => {
            let text = text.trim().to_string();
            if text.to_lowercase().contains(&spec.objective.to_lowercase()) {
                text
            } else {
                format!("{text}\nObjective: {}", spec.objective)
            }
        }
        Ok(_) => template_summary(session),
        Err(e) => {
            tracing::warn!(error = %e, "summary generation failed; using template summary");
            template_summary(session)
        }
    };
    session.state.status = SessionStatus::Ended;
    session.summary = Some(summary.clone());
    Ok(summary)
}
