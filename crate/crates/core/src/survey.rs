//! Pilot-survey analytics: Likert distributions around the neutral score 4,
//! LLM-assisted theme annotation of open answers, and the theme
//! co-occurrence network.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::batch::Execution;
use crate::prompt::{self, extract_string_array, VariableSet};
use crate::provider::{ask, ChatMessage, ChatProvider, ProviderError, EXTRACTION_TEMPERATURE};

pub const QUESTION_COUNT: usize = 10;
pub const SCALE_MIN: u8 = 1;
pub const SCALE_MAX: u8 = 7;
pub const NEUTRAL: u8 = 4;
pub const MAX_THEMES: usize = 4;

/// Survey wording, indexed by question number minus one (Q11 and Q12 are
/// the open questions).
pub const QUESTIONS: [&str; 12] = [
    "I believe the dialogue in the system is effective and smooth.",
    "I feel like I am interacting with a person in the system.",
    "I enjoy learning in the system.",
    "I find the learning methods provided by the system attractive.",
    "I feel happy while learning in the system.",
    "The system helps me understand the learning content.",
    "I am motivated to learn in the system.",
    "Learning in the system can improve my current knowledge performance.",
    "I feel that the system meets my learning needs.",
    "I am willing to recommend the system to others.",
    "What is your favorite feature or function of the system?",
    "What other feedback or suggestions do you have for the system?",
];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SurveyError {
    #[error("q{question} = {value} is outside 1..=7")]
    OutOfRange { question: usize, value: i64 },
    #[error("participant_id is empty")]
    MissingParticipant,
    #[error("no survey responses")]
    EmptyDataset,
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

/// One questionnaire: ten 7-point scores and two open answers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SurveyWire", into = "SurveyWire")]
pub struct SurveyResponse {
    pub participant_id: String,
    pub scores: [u8; QUESTION_COUNT],
    pub q11: String,
    pub q12: String,
}

impl SurveyResponse {
    pub fn new(
        participant_id: impl Into<String>,
        scores: [i64; QUESTION_COUNT],
        q11: impl Into<String>,
        q12: impl Into<String>,
    ) -> Result<Self, SurveyError> {
        let participant_id = participant_id.into();
        if participant_id.trim().is_empty() {
            return Err(SurveyError::MissingParticipant);
        }
        let mut checked = [0u8; QUESTION_COUNT];
        for (i, &value) in scores.iter().enumerate() {
            if !(SCALE_MIN as i64..=SCALE_MAX as i64).contains(&value) {
                return Err(SurveyError::OutOfRange { question: i + 1, value });
            }
            checked[i] = value as u8;
        }
        Ok(Self { participant_id, scores: checked, q11: q11.into(), q12: q12.into() })
    }
}

/// Flat wire shape `{participant_id, q1..q10, q11, q12}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurveyWire {
    pub participant_id: String,
    pub q1: i64,
    pub q2: i64,
    pub q3: i64,
    pub q4: i64,
    pub q5: i64,
    pub q6: i64,
    pub q7: i64,
    pub q8: i64,
    pub q9: i64,
    pub q10: i64,
    #[serde(default)]
    pub q11: String,
    #[serde(default)]
    pub q12: String,
}

impl TryFrom<SurveyWire> for SurveyResponse {
    type Error = SurveyError;

    fn try_from(w: SurveyWire) -> Result<Self, Self::Error> {
        let scores = [w.q1, w.q2, w.q3, w.q4, w.q5, w.q6, w.q7, w.q8, w.q9, w.q10];
        SurveyResponse::new(w.participant_id, scores, w.q11, w.q12)
    }
}

impl From<SurveyResponse> for SurveyWire {
    fn from(r: SurveyResponse) -> Self {
        let s = r.scores.map(i64::from);
        SurveyWire {
            participant_id: r.participant_id,
            q1: s[0],
            q2: s[1],
            q3: s[2],
            q4: s[3],
            q5: s[4],
            q6: s[5],
            q7: s[6],
            q8: s[7],
            q9: s[8],
            q10: s[9],
            q11: r.q11,
            q12: r.q12,
        }
    }
}

/// `100 * count / total` rounded half away from zero to one decimal.
pub fn percent(count: usize, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    // integer arithmetic in tenths of a percent keeps 28/100 at exactly 28.0
    let tenths = (2000 * count + total) / (2 * total);
    tenths as f64 / 10.0
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionSummary {
    pub question: String,
    pub n: usize,
    pub mean: f64,
    /// Counts for scores 1..=7.
    pub counts: [usize; 7],
    /// Percentages for scores 1..=7.
    pub percentages: [f64; 7],
    pub pct_below_4: f64,
    pub pct_at_4: f64,
    pub pct_above_4: f64,
}

impl QuestionSummary {
    pub fn count_at(&self, score: u8) -> usize {
        self.counts[(score - SCALE_MIN) as usize]
    }

    pub fn pct_at(&self, score: u8) -> f64 {
        self.percentages[(score - SCALE_MIN) as usize]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverallSummary {
    pub observations: usize,
    pub pct_below_4: f64,
    pub pct_at_or_above_4: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikertSummary {
    pub n: usize,
    pub questions: Vec<QuestionSummary>,
    pub overall: OverallSummary,
}

impl LikertSummary {
    pub fn question(&self, number: usize) -> &QuestionSummary {
        &self.questions[number - 1]
    }
}

fn summarize_question(responses: &[SurveyResponse], q: usize) -> QuestionSummary {
    let n = responses.len();
    let mut counts = [0usize; 7];
    let mut sum = 0usize;
    for r in responses {
        let s = r.scores[q];
        counts[(s - SCALE_MIN) as usize] += 1;
        sum += s as usize;
    }
    let below: usize = counts[..3].iter().sum();
    let at = counts[3];
    let above: usize = counts[4..].iter().sum();
    QuestionSummary {
        question: format!("Q{}", q + 1),
        n,
        mean: round2(sum as f64 / n as f64),
        counts,
        percentages: counts.map(|c| percent(c, n)),
        pct_below_4: percent(below, n),
        pct_at_4: percent(at, n),
        pct_above_4: percent(above, n),
    }
}

/// Per-question Likert statistics plus the pooled below/at-or-above split.
pub fn summarize(responses: &[SurveyResponse]) -> Result<LikertSummary, SurveyError> {
    summarize_with(responses, Execution::default())
}

pub fn summarize_with(responses: &[SurveyResponse], exec: Execution) -> Result<LikertSummary, SurveyError> {
    if responses.is_empty() {
        return Err(SurveyError::EmptyDataset);
    }
    let indices: Vec<usize> = (0..QUESTION_COUNT).collect();
    let questions = exec.map(&indices, |&q| summarize_question(responses, q));
    let observations = responses.len() * QUESTION_COUNT;
    let below: usize = questions.iter().map(|q| q.counts[..3].iter().sum::<usize>()).sum();
    Ok(LikertSummary {
        n: responses.len(),
        overall: OverallSummary {
            observations,
            pct_below_4: percent(below, observations),
            pct_at_or_above_4: percent(observations - below, observations),
        },
        questions,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpenText {
    pub response_id: String,
    /// `q11` or `q12`.
    pub question_id: String,
    pub text: String,
}

impl OpenText {
    /// Both open answers of a response.
    pub fn from_response(response_id: &str, r: &SurveyResponse) -> [OpenText; 2] {
        [
            OpenText { response_id: response_id.into(), question_id: "q11".into(), text: r.q11.clone() },
            OpenText { response_id: response_id.into(), question_id: "q12".into(), text: r.q12.clone() },
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThemeAnnotation {
    pub response_id: String,
    pub question_id: String,
    pub themes: Vec<String>,
    /// Set when extraction failed even after the repair round.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub extraction_failed: bool,
}

/// Trims, collapses inner whitespace and capitalizes each word's first
/// letter (the rest is kept, so acronyms survive).
pub fn normalize_label(label: &str) -> String {
    label
        .split_whitespace()
        .map(|w| {
            let mut chars = w.chars();
            match chars.next() {
                Some(first) => first.to_uppercase().chain(chars).collect(),
                None => String::new(),
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn normalize_labels(raw: Vec<String>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for label in raw.iter().map(|l| normalize_label(l)).filter(|l| !l.is_empty()) {
        if !out.contains(&label) {
            out.push(label);
        }
        if out.len() == MAX_THEMES {
            break;
        }
    }
    out
}

fn question_text(question_id: &str) -> &'static str {
    match question_id.trim_start_matches(['q', 'Q']).parse::<usize>() {
        Ok(n) if (1..=QUESTIONS.len()).contains(&n) => QUESTIONS[n - 1],
        _ => "Open feedback",
    }
}

fn annotate_one(text: &OpenText, provider: &dyn ChatProvider) -> Result<ThemeAnnotation, SurveyError> {
    let mut annotation = ThemeAnnotation {
        response_id: text.response_id.clone(),
        question_id: text.question_id.clone(),
        themes: Vec::new(),
        extraction_failed: false,
    };
    if text.text.trim().is_empty() {
        return Ok(annotation);
    }
    let vars = VariableSet::new()
        .with("theQuestion", question_text(&text.question_id))
        .and_then(|v| v.with("theFeedback", text.text.trim()))
        .expect("non-empty bindings");
    let prompt = prompt::bundled("theme_annotation").render(&vars).expect("complete bindings").text;
    let mut messages = vec![ChatMessage::user(prompt)];
    for _round in 0..2 {
        let reply = ask(provider, messages.clone(), EXTRACTION_TEMPERATURE)?;
        if let Ok(labels) = extract_string_array(&reply) {
            let themes = normalize_labels(labels);
            if !themes.is_empty() {
                annotation.themes = themes;
                return Ok(annotation);
            }
        }
        messages.push(ChatMessage::assistant(reply));
        messages.push(ChatMessage::user(prompt::bundled("json_repair").raw_text()));
    }
    annotation.extraction_failed = true;
    Ok(annotation)
}

/// One provider call per non-empty open answer, asking for 1 to 4 theme
/// labels.
pub fn annotate_themes(texts: &[OpenText], provider: &dyn ChatProvider) -> Result<Vec<ThemeAnnotation>, SurveyError> {
    annotate_themes_with(texts, provider, Execution::default())
}

/// Calls run concurrently under [`Execution::Parallel`], so a scripted
/// provider must route by content rather than by call order.
pub fn annotate_themes_with(
    texts: &[OpenText],
    provider: &dyn ChatProvider,
    exec: Execution,
) -> Result<Vec<ThemeAnnotation>, SurveyError> {
    exec.map(texts, |t| annotate_one(t, provider)).into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThemeNode {
    pub id: String,
    pub weight: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThemeLink {
    pub source: String,
    pub target: String,
    pub weight: usize,
}

/// Undirected co-mention network in node-link form. Nodes are ordered by
/// descending weight then label; links by descending weight then endpoints,
/// with `source < target`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThemeGraph {
    pub nodes: Vec<ThemeNode>,
    pub links: Vec<ThemeLink>,
}

impl ThemeGraph {
    pub fn node_weight(&self, label: &str) -> Option<usize> {
        self.nodes.iter().find(|n| n.id == label).map(|n| n.weight)
    }

    /// Co-mention count of `a` and `b`, in either order.
    pub fn edge_weight(&self, a: &str, b: &str) -> usize {
        let (s, t) = if a <= b { (a, b) } else { (b, a) };
        self.links.iter().find(|l| l.source == s && l.target == t).map_or(0, |l| l.weight)
    }
}

#[derive(Default)]
struct Tally {
    nodes: BTreeMap<String, usize>,
    edges: BTreeMap<(String, String), usize>,
}

impl Tally {
    fn add(&mut self, themes: &BTreeSet<&str>) {
        let labels: Vec<&str> = themes.iter().copied().collect();
        for (i, a) in labels.iter().enumerate() {
            *self.nodes.entry(a.to_string()).or_default() += 1;
            for b in &labels[i + 1..] {
                *self.edges.entry((a.to_string(), b.to_string())).or_default() += 1;
            }
        }
    }

    fn merge(mut self, other: Tally) -> Tally {
        for (k, v) in other.nodes {
            *self.nodes.entry(k).or_default() += v;
        }
        for (k, v) in other.edges {
            *self.edges.entry(k).or_default() += v;
        }
        self
    }

    fn into_graph(self) -> ThemeGraph {
        let mut nodes: Vec<ThemeNode> = self.nodes.into_iter().map(|(id, weight)| ThemeNode { id, weight }).collect();
        nodes.sort_by(|a, b| b.weight.cmp(&a.weight).then_with(|| a.id.cmp(&b.id)));
        let mut links: Vec<ThemeLink> = self
            .edges
            .into_iter()
            .map(|((source, target), weight)| ThemeLink { source, target, weight })
            .collect();
        links.sort_by(|a, b| {
            b.weight.cmp(&a.weight).then_with(|| a.source.cmp(&b.source)).then_with(|| a.target.cmp(&b.target))
        });
        ThemeGraph { nodes, links }
    }
}

/// Groups annotations by response; each response contributes its distinct
/// labels once.
fn responses(annotations: &[ThemeAnnotation]) -> Vec<BTreeSet<&str>> {
    let mut by_response: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for a in annotations {
        by_response.entry(&a.response_id).or_default().extend(a.themes.iter().map(String::as_str));
    }
    by_response.into_values().collect()
}

/// Node weight counts responses mentioning a label; edge weight counts
/// responses mentioning both endpoints.
pub fn build_theme_graph(annotations: &[ThemeAnnotation]) -> ThemeGraph {
    build_theme_graph_with(annotations, Execution::default())
}

pub fn build_theme_graph_with(annotations: &[ThemeAnnotation], exec: Execution) -> ThemeGraph {
    let groups = responses(annotations);
    exec.fold_reduce(&groups, Tally::default, |mut t, themes| {
        t.add(themes);
        t
    }, Tally::merge)
    .into_graph()
}
