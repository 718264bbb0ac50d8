//! Deterministic fixtures: the motivation/Taylor scenario, scripted provider
//! scripts for whole sessions, and seeded generators for larger corpora.
//! Used by the test suites and the benches.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::dialogue::{Classification, SessionConfig, WhEntry};
use crate::prompt::KC_KEYS;
use crate::provider::ScriptEntry;
use crate::scenario::{KnowledgeComponent, Pedagogy, ScenarioSpec, TreeLevel};
use crate::survey::{SurveyResponse, SurveyWire};
use crate::wh::WhType;

/// Last-user-message markers of each bundled prompt, for script matchers.
pub mod markers {
    pub const LESSON: &str = "You are producing some basic concepts";
    pub const KC_SHORTFALL: &str = "requested concepts were valid json objects";
    pub const MATRIX: &str = "Write opening questions";
    pub const CONTEXT: &str = "Write the opening scenario context";
    pub const ASSESS: &str = "Classify the learner's latest response";
    pub const COMPOSE: &str = "Compose the tutor's next turn";
    pub const TURN_REPAIR: &str = "Your previous turn broke these constraints";
    pub const SUMMARY: &str = "Summarize this tutoring session";
    pub const EXTRACT: &str = "Extract a learning scenario";
    pub const EXPAND: &str = "List candidate options";
    pub const THEMES: &str = "Annotate the semantic themes";
    pub const JSON_REPAIR: &str = "Your previous reply could not be parsed";
}

pub const TAYLOR_CONTEXT: &str = "Imagine a student named Taylor who has set a goal to improve their grades this semester. Taylor is exploring different motivational strategies to stay on track and achieve this goal. Chart your path to success by mastering the art of motivation. Let's embark on this journey together!";
pub const TAYLOR_QUESTION: &str = "What motivational strategies do you think Taylor could use to achieve their goal?";
pub const TAYLOR_FOLLOW_UP: &str = "Absolutely, hard work is essential. But let's dive deeper into specific strategies that can help Taylor stay motivated. What types of positive reinforcement could Taylor use to maintain their motivation and improve their grades?";
pub const TAYLOR_SECOND_FOLLOW_UP: &str = "Great start! Verbal praise and goal setting can be powerful motivators. How do you think verbal praise can impact Taylor's motivation and academic performance?";

pub fn motivation_spec() -> ScenarioSpec {
    ScenarioSpec {
        lang: "English".into(),
        kc: "Behavior Reinforcement".into(),
        number: 5,
        domain: "Psychology".into(),
        target: "College Students".into(),
        avatar: "owl".into(),
        tutor_name: "Sophia".into(),
        context: "Explore the role of extrinsic rewards in student motivation.".into(),
        environment: "Online Discussions".into(),
        user_name: "Taylor".into(),
        pedagogy: Pedagogy::Socratic,
        objective: "To understand the impact of motivation on student learning.".into(),
        style: "Conversational".into(),
    }
}

pub fn motivation_kc() -> KnowledgeComponent {
    KnowledgeComponent::from_spec(&motivation_spec())
}

pub fn taylor_entry() -> WhEntry {
    WhEntry { kc_index: 0, wh: WhType::What, question: TAYLOR_QUESTION.into() }
}

/// A lesson-creation JSON object with every key filled.
pub fn kc_json(name: &str) -> String {
    let spec = motivation_spec();
    let mut map = serde_json::Map::new();
    for key in KC_KEYS {
        let value = match key {
            "theKC" => name.to_string(),
            "theLang" => spec.lang.clone(),
            "theType" => "Socratic".into(),
            "theObjective" => spec.objective.clone(),
            "theContext" => format!("How {name} shapes motivation"),
            _ => format!("{key} value"),
        };
        map.insert(key.to_string(), json!(value));
    }
    serde_json::Value::Object(map).to_string()
}

/// A matrix reply for one KC with all five wh-questions valid.
pub fn matrix_json(kc: &str) -> String {
    json!({
        "What": format!("What effect do you think {kc} might have on your motivation to participate in the online discussions?"),
        "Why": format!("Why might {kc} matter for college students?"),
        "How": format!("How do you think {kc} might impact your motivation to participate in the online discussions?"),
        "Who": format!("Who benefits most when {kc} is used in class?"),
        "When": format!("When is {kc} most effective during a semester?"),
    })
    .to_string()
}

pub fn assessment_json(c: Classification, rationale: &str) -> String {
    json!({"classification": format!("{c}"), "rationale": rationale}).to_string()
}

/// Script for the two-turn motivation dialogue.
pub fn taylor_script() -> Vec<ScriptEntry> {
    vec![
        ScriptEntry::new(markers::CONTEXT, TAYLOR_CONTEXT),
        ScriptEntry::new(
            markers::ASSESS,
            assessment_json(Classification::Partial, "Right direction but lacks specific strategies."),
        ),
        ScriptEntry::new(markers::COMPOSE, TAYLOR_FOLLOW_UP),
        ScriptEntry::new(
            markers::ASSESS,
            assessment_json(Classification::Correct, "Names two concrete reinforcement strategies."),
        ),
        ScriptEntry::new(markers::COMPOSE, TAYLOR_SECOND_FOLLOW_UP),
        ScriptEntry::new(
            markers::SUMMARY,
            "Taylor worked toward the objective: To understand the impact of motivation on student learning.",
        ),
    ]
}

pub const TAYLOR_LEARNER_LINES: [&str; 2] = ["I believe it requires hard work", "I think some verbal praise and goal setting."];

/// What a generated tutor reply looks like before validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReplyShape {
    Compliant,
    /// No question at all; fixed by the regeneration.
    NoQuestion,
    /// Two questions; fixed by the regeneration.
    TwoQuestions,
    /// Leaks the expected answer twice, forcing a patch.
    LeakTwice,
    /// Statement-only twice, forcing a patch.
    BrokenTwice,
}

/// A generated session: the script, the learner lines, and the config.
#[derive(Debug, Clone)]
pub struct SessionScript {
    pub entries: Vec<ScriptEntry>,
    pub learner_lines: Vec<String>,
    pub config: SessionConfig,
    pub classifications: Vec<Classification>,
}

pub const EXPECTED_ANSWER: &str = "intrinsic motivation";

const WH_STEMS: [&str; 5] = [
    "What else could Taylor try next",
    "Why might that strategy work for Taylor",
    "How could Taylor apply that this week",
    "Who could support Taylor along the way",
    "When would that approach be most useful",
];

fn compliant_reply(rng: &mut ChaCha8Rng) -> String {
    let feedback = ["Good thinking.", "That's an interesting point.", "You're getting closer.", "Nice effort."];
    format!("{} {}?", feedback.choose(rng).unwrap(), WH_STEMS.choose(rng).unwrap())
}

/// Seeded script for a `turns`-turn session with a mix of assessments and
/// tutor replies that need regeneration or patching.
pub fn random_session_script(seed: u64, turns: usize) -> SessionScript {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = vec![ScriptEntry::new(markers::CONTEXT, TAYLOR_CONTEXT)];
    let mut learner_lines = Vec::with_capacity(turns);
    let mut classifications = Vec::with_capacity(turns);
    for i in 0..turns {
        let blank = rng.random_bool(0.05);
        learner_lines.push(if blank { "   ".to_string() } else { format!("Learner answer {i} about rewards and praise.") });
        let c = if blank {
            Classification::OffTopic
        } else {
            *Classification::ALL.choose(&mut rng).unwrap()
        };
        classifications.push(c);
        if !blank {
            if rng.random_bool(0.1) {
                entries.push(ScriptEntry::new(markers::ASSESS, "I cannot classify that."));
                entries.push(ScriptEntry::new(markers::JSON_REPAIR, assessment_json(c, "after repair")));
            } else {
                entries.push(ScriptEntry::new(markers::ASSESS, assessment_json(c, "scripted rationale")));
            }
        }
        let shape = match rng.random_range(0..10) {
            0 => ReplyShape::NoQuestion,
            1 => ReplyShape::TwoQuestions,
            2 => ReplyShape::LeakTwice,
            3 => ReplyShape::BrokenTwice,
            _ => ReplyShape::Compliant,
        };
        let good = compliant_reply(&mut rng);
        match shape {
            ReplyShape::Compliant => entries.push(ScriptEntry::new(markers::COMPOSE, good)),
            ReplyShape::NoQuestion => {
                entries.push(ScriptEntry::new(markers::COMPOSE, "Good thinking. Keep going."));
                entries.push(ScriptEntry::new(markers::TURN_REPAIR, good));
            }
            ReplyShape::TwoQuestions => {
                entries.push(ScriptEntry::new(markers::COMPOSE, "Is that all? What else could Taylor try?"));
                entries.push(ScriptEntry::new(markers::TURN_REPAIR, good));
            }
            ReplyShape::LeakTwice => {
                let leak = format!("Good. The answer is {EXPECTED_ANSWER}. Why does Intrinsic Motivation matter?");
                entries.push(ScriptEntry::new(markers::COMPOSE, leak.clone()));
                entries.push(ScriptEntry::new(markers::TURN_REPAIR, leak));
            }
            ReplyShape::BrokenTwice => {
                entries.push(ScriptEntry::new(markers::COMPOSE, "Nice. Think about rewards."));
                entries.push(ScriptEntry::new(markers::TURN_REPAIR, "Nice. Think about rewards again."));
            }
        }
    }
    entries.push(ScriptEntry::new(markers::SUMMARY, "Summary for the objective."));
    let config = SessionConfig { expected_answer: Some(EXPECTED_ANSWER.into()), ..Default::default() };
    SessionScript { entries, learner_lines, config, classifications }
}

/// One synthetic LLM reply with a known number of planted valid objects.
#[derive(Debug, Clone)]
pub struct PlantedText {
    pub text: String,
    pub valid: usize,
}

const PROSE: &[&str] = &[
    "Here are the concepts you asked for.",
    "Sure!",
    "Next one:",
    "I hope this helps with your lesson (let me know).",
    "Note: values are in English.",
    "```",
    "```json",
    "--",
    "and another",
    "Done: 100% complete.",
];

fn malformed_object(rng: &mut ChaCha8Rng, name: &str) -> String {
    match rng.random_range(0..5) {
        0 => format!("{{\"theKC\": \"{name}\", \"theLang\": \"English\",}}"),
        1 => format!("{{\"theKC\" \"{name}\"}}"),
        2 => format!("{{theKC: \"{name}\"}}"),
        3 => format!("{{'theKC': '{name}'}}"),
        _ => format!("{{\"theKC\": \"{name}\" \"theLang\": \"English\"}}"),
    }
}

/// Seeded corpus of LLM-like outputs: 0 to 20 objects each, random prose and
/// code fences between them, about 10% of objects malformed.
pub fn planted_corpus(seed: u64, size: usize) -> Vec<PlantedText> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..size)
        .map(|_| {
            let k = rng.random_range(0..=20);
            let mut text = String::new();
            let mut valid = 0;
            for j in 0..k {
                text.push_str(PROSE.choose(&mut rng).unwrap());
                text.push(if rng.random_bool(0.5) { '\n' } else { ' ' });
                let name = format!("Concept {j}");
                if rng.random_bool(0.1) {
                    text.push_str(&malformed_object(&mut rng, &name));
                } else {
                    let obj = if rng.random_bool(0.5) { kc_json(&name) } else { pretty(&kc_json(&name)) };
                    text.push_str(&obj);
                    valid += 1;
                }
                text.push(if rng.random_bool(0.5) { '\n' } else { ' ' });
            }
            text.push_str(PROSE.choose(&mut rng).unwrap());
            PlantedText { text, valid }
        })
        .collect()
}

fn pretty(compact: &str) -> String {
    let v: serde_json::Value = serde_json::from_str(compact).expect("fixture JSON");
    serde_json::to_string_pretty(&v).expect("fixture JSON")
}

/// Seeded theme annotations: `count` responses with up to `max_themes`
/// labels drawn from a small vocabulary.
pub fn random_theme_sets(seed: u64, count: usize, max_themes: usize) -> Vec<Vec<String>> {
    const LABELS: &[&str] = &[
        "Instant Feedback",
        "Enhanced Understanding",
        "Educational Affirmation",
        "Interactive Learning Scenarios",
        "Adaptive Learning Environment",
        "Guided Knowledge Progression",
        "Cognitive Load Management",
        "Real-Time Conversational Answers",
        "User-Friendly Interface",
        "Topic-Based Discussion",
        "AI-Assisted Q&A With Feedback",
        "Slow Responses",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let k = rng.random_range(0..=max_themes);
            // duplicates on purpose: the graph counts each label once per response
            (0..k).map(|_| LABELS.choose(&mut rng).unwrap().to_string()).collect()
        })
        .collect()
}

/// The synthetic pilot-survey CSV (`participant_id,q1..q12`); see
/// `fixtures/README.md` for how it was built.
pub const PILOT_SURVEY_CSV: &str = include_str!("../fixtures/pilot_survey.csv");

pub fn pilot_survey() -> Vec<SurveyResponse> {
    csv::Reader::from_reader(PILOT_SURVEY_CSV.as_bytes())
        .deserialize::<SurveyWire>()
        .map(|row| SurveyResponse::try_from(row.expect("fixture row")).expect("fixture scores in range"))
        .collect()
}

/// Theme replies for the pilot open answers, keyed by a phrase of each
/// answer.
pub fn pilot_theme_script() -> Vec<ScriptEntry> {
    const REPLIES: [(&str, &str); 17] = [
        ("instant feedback", r#"["Instant Feedback"]"#),
        ("sometimes slow", r#"["Slow Responses"]"#),
        ("Real-time", r#"["Real-Time Conversational Answers", "Interactive Learning Scenarios"]"#),
        ("other languages", r#"["Multilingual Support"]"#),
        ("guided knowledge", r#"["Guided Knowledge Progression"]"#),
        ("wh-question tabs", r#"["Topic-Based Discussion", "User-Friendly Interface"]"#),
        ("earlier question", r#"["Navigation"]"#),
        ("Adaptive hints", r#"["Adaptive Learning Environment", "Instant Feedback"]"#),
        ("repeats itself", r#"["Repetitive Replies"]"#),
        ("named character", r#"["Interactive Learning Scenarios"]"#),
        ("progress bar", r#"["Progress Tracking"]"#),
        ("talking to a person", r#"["Human-Likeness"]"#),
        ("Enhanced understanding", r#"["Enhanced Understanding", "Guided Knowledge Progression"]"#),
        ("user-friendly", r#"["User-Friendly Interface"]"#),
        ("Shorter replies", r#"["Cognitive Load Management"]"#),
        ("Topic-based", r#"["Topic-Based Discussion", "Interactive Learning Scenarios"]"#),
        ("More domains", r#"["Topic-Based Discussion"]"#),
    ];
    REPLIES.iter().map(|(m, r)| ScriptEntry::new(m, *r)).collect()
}

/// Complete tree selections for the motivation scenario.
pub fn motivation_selections() -> BTreeMap<TreeLevel, String> {
    [
        (TreeLevel::Domain, "Psychology"),
        (TreeLevel::Subdomain, "Educational Psychology"),
        (TreeLevel::Objective, "To understand the impact of motivation on student learning."),
        (TreeLevel::Context, "Explore the role of extrinsic rewards in student motivation."),
        (TreeLevel::Concepts, "Behavior Reinforcement"),
        (TreeLevel::Target, "College Students"),
        (TreeLevel::Environment, "Online Discussions"),
        (TreeLevel::Pedagogy, "Socratic"),
    ]
    .into_iter()
    .map(|(l, v)| (l, v.to_string()))
    .collect()
}

pub const FLOW_KCS: [&str; 5] =
    ["Behavior Reinforcement", "Goal Setting", "Verbal Praise", "Intrinsic Rewards", "Self Efficacy"];

/// Script for scenario, KCs, matrix, a session with `exchanges` learner
/// turns, and its summary, in call order.
pub fn flow_script(exchanges: usize) -> Vec<ScriptEntry> {
    let concepts: Vec<String> = FLOW_KCS.iter().map(|k| kc_json(k)).collect();
    let mut entries = vec![ScriptEntry::new(
        markers::LESSON,
        format!("Here are the concepts:\n```json\n{}\n```", concepts.join("\n")),
    )];
    entries.extend(FLOW_KCS.iter().map(|k| ScriptEntry::new(markers::MATRIX, matrix_json(k))));
    entries.push(ScriptEntry::new(markers::CONTEXT, TAYLOR_CONTEXT));
    let replies = [TAYLOR_FOLLOW_UP, TAYLOR_SECOND_FOLLOW_UP, "Good. Why might praise work better than grades?"];
    for i in 0..exchanges {
        let c = if i == 0 { Classification::Partial } else { Classification::Correct };
        entries.push(ScriptEntry::new(markers::ASSESS, assessment_json(c, "scripted")));
        entries.push(ScriptEntry::new(markers::COMPOSE, replies[i % replies.len()]));
    }
    entries.push(ScriptEntry::new(markers::SUMMARY, "Taylor explored motivation strategies."));
    entries
}
