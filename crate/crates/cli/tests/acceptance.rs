//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Runs offline against scripted providers.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use socratic_core::dialogue::{
    self, select_prompt_type, Classification, DialogueSession, PromptType, Role, SessionState,
};
use socratic_core::fixtures::{self, SessionScript};
use socratic_core::prompt::{self, extract_json_objects, VariableSet};
use socratic_core::provider::ScriptedProvider;
use socratic_core::store::Store;
use socratic_core::survey::{self, build_theme_graph, ThemeAnnotation};
use socratic_core::wh::{self, WhType};

type Check = Result<(), String>;

type Criterion = (&'static str, Duration, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

const LESSON_VARIABLES: [&str; 12] = [
    "theLang",
    "theKC",
    "theNumber",
    "theDomain",
    "theTarget",
    "theAvatar",
    "theTutorName",
    "theContext",
    "theEnvironment",
    "theUserName",
    "theType",
    "theObjective",
];

fn random_value(rng: &mut ChaCha8Rng) -> String {
    const CHARS: &[u8] = b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJ 0123456789.,;:'\"{}[]()-_/\\!?&#$^*";
    let len = rng.random_range(1..24);
    let s: String = (0..len).map(|_| CHARS[rng.random_range(0..CHARS.len())] as char).collect();
    if s.trim().is_empty() {
        "x".into()
    } else {
        s
    }
}

fn template_fidelity() -> Check {
    let template = prompt::bundled("lesson_creation");
    let found: BTreeSet<&str> = template.placeholders().iter().map(String::as_str).collect();
    let wanted: BTreeSet<&str> = LESSON_VARIABLES.into_iter().collect();
    ensure!(found == wanted, "placeholders {found:?}");
    let raw = template.raw_text();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for round in 0..200 {
        let values: Vec<(&str, String)> = LESSON_VARIABLES.iter().map(|n| (*n, random_value(&mut rng))).collect();
        let vars = VariableSet::from_pairs(values.clone()).map_err(|e| e.to_string())?;
        let rendered = template.render(&vars).map_err(|e| format!("round {round}: {e}"))?.text;
        let mut expected = raw.to_string();
        for (name, value) in &values {
            expected = expected.replace(&format!("%[{name}]%"), value);
        }
        ensure!(rendered == expected, "round {round}: rendering differs from substitution");
        ensure!(!rendered.contains("%["), "round {round}: unresolved placeholder");
    }
    Ok(())
}

fn json_extraction() -> Check {
    for (i, planted) in fixtures::planted_corpus(2024, 500).iter().enumerate() {
        let got = match extract_json_objects(&planted.text) {
            Ok(objs) => objs.len(),
            Err(prompt::PromptError::NoJsonFound) => 0,
            Err(e) => return Err(format!("text {i}: {e}")),
        };
        ensure!(got == planted.valid, "text {i}: {got} objects, planted {}", planted.valid);
    }
    Ok(())
}

/// A live session plus the state after each tutor turn.
struct Lived {
    session: DialogueSession,
    states: BTreeMap<usize, SessionState>,
}

fn live_session(script: &SessionScript) -> Result<Lived, String> {
    let provider = ScriptedProvider::new(script.entries.clone());
    let mut session = dialogue::start_session(
        &fixtures::motivation_spec(),
        &fixtures::motivation_kc(),
        fixtures::taylor_entry(),
        script.config.clone(),
        &provider,
    )
    .map_err(|e| e.to_string())?;
    let mut states = BTreeMap::from([(session.turns.len(), session.state.clone())]);
    for line in &script.learner_lines {
        dialogue::submit_response(&mut session, line, &provider).map_err(|e| e.to_string())?;
        states.insert(session.turns.len(), session.state.clone());
    }
    dialogue::end_session(&mut session, &provider).map_err(|e| e.to_string())?;
    Ok(Lived { session, states })
}

fn scripted_sessions() -> Result<Vec<Lived>, String> {
    (0..50).map(|seed| live_session(&fixtures::random_session_script(seed, 10))).collect()
}

fn dialogue_invariants() -> Check {
    let answer = fixtures::EXPECTED_ANSWER.to_lowercase();
    for (seed, lived) in scripted_sessions()?.iter().enumerate() {
        let turns = &lived.session.turns;
        ensure!(turns.len() == 21, "session {seed}: {} turns", turns.len());
        for (i, t) in turns.iter().enumerate() {
            let expected = if i % 2 == 0 { Role::Tutor } else { Role::Learner };
            ensure!(t.role == expected && t.index == i, "session {seed}: turn {i} out of order");
            if t.role != Role::Tutor {
                continue;
            }
            ensure!(t.text.trim_end().ends_with('?'), "session {seed} turn {i}: no closing question: {}", t.text);
            let last = wh::final_sentence(&t.text).unwrap_or("");
            ensure!(WhType::first_in(last).is_some(), "session {seed} turn {i}: no wh-word in `{last}`");
            ensure!(!t.text.to_lowercase().contains(&answer), "session {seed} turn {i}: leaks the answer");
        }
    }
    Ok(())
}

/// Hand-written table of the default policy.
mod oracle {
    use super::PromptType::{self, *};
    use super::Classification;

    /// Turn-position override by tutor ordinal 0..=11.
    const POSITION: [Option<PromptType>; 12] = [
        None,
        None,
        None,
        Some(EncouragingReflection),
        None,
        Some(FosteringCriticalThinking),
        None,
        Some(EncouragingReflection),
        None,
        None,
        None,
        Some(EncouragingReflection),
    ];

    /// By current partial streak 0..=4.
    const PARTIAL: [PromptType; 5] =
        [IterativePrompting, IterativePrompting, FeedbackAndExploration, IterativePrompting, IterativePrompting];

    /// By current correct streak 0..=4, without and with earlier hints.
    const CORRECT: [PromptType; 5] =
        [ResponseEvaluationAndFeedback, MaintainingEngagement, EncouragingSynthesis, EncouragingSynthesis, EncouragingSynthesis];
    const CORRECT_AFTER_HINTS: [PromptType; 5] =
        [AdaptiveFeedback, MaintainingEngagement, EncouragingSynthesis, EncouragingSynthesis, EncouragingSynthesis];

    pub fn expected(c: Classification, correct: usize, partial: usize, hints: u32, ordinal: usize) -> PromptType {
        if let Some(p) = POSITION[ordinal] {
            return p;
        }
        match c {
            Classification::Incorrect | Classification::OffTopic => ProvidingIncrementalHints,
            Classification::Partial => PARTIAL[partial],
            Classification::Correct if hints > 0 => CORRECT_AFTER_HINTS[correct],
            Classification::Correct => CORRECT[correct],
        }
    }
}

fn policy_oracle() -> Check {
    let mut checked = 0;
    for c in Classification::ALL {
        for streak in 0..=4usize {
            // a state carries at most one nonzero streak
            for (correct, partial) in [(streak, 0), (0, streak)] {
                for hints in 0..=2u32 {
                    for ordinal in 0..12usize {
                        // the selected turn is tutor turn `ordinal`, two turns after the previous one
                        let state = SessionState {
                            correct_streak: correct as u32,
                            partial_streak: partial as u32,
                            hint_depth: hints,
                            turn_count: (2 * ordinal).saturating_sub(1),
                            ..Default::default()
                        };
                        let got = select_prompt_type(&state, c);
                        let want = oracle::expected(c, correct, partial, hints, ordinal);
                        ensure!(
                            got == want,
                            "{c} correct={correct} partial={partial} hints={hints} ordinal={ordinal}: {got} != {want}"
                        );
                        checked += 1;
                    }
                }
            }
        }
    }
    ensure!(checked == 4 * 5 * 2 * 3 * 12, "{checked} combinations checked");
    Ok(())
}

fn replay_equivalence() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let store = Store::open(dir.path()).map_err(|e| e.to_string())?;
    for (seed, lived) in scripted_sessions()?.iter().enumerate() {
        let live = &lived.session;
        store.create_session(live).map_err(|e| e.to_string())?;
        let loaded = store.load_session(live.id()).map_err(|e| e.to_string())?;
        ensure!(loaded == *live, "session {seed}: loaded session differs from live");

        let path = store.session_path(live.id());
        let full = std::fs::read_to_string(&path).map_err(|e| e.to_string())?;
        let lines: Vec<&str> = full.lines().collect();
        for k in 1..=lines.len() {
            let prefix: String = lines[..k].iter().map(|l| format!("{l}\n")).collect();
            std::fs::write(&path, prefix).map_err(|e| e.to_string())?;
            let partial = store.load_session(live.id()).map_err(|e| format!("session {seed}, {k} lines: {e}"))?;
            let n = partial.turns.len();
            ensure!(partial.turns[..] == live.turns[..n], "session {seed}, {k} lines: turns differ");
            if k == lines.len() {
                ensure!(partial == *live, "session {seed}: full file differs");
            } else if let Some(state) = lived.states.get(&n) {
                ensure!(partial.state == *state, "session {seed}, {n} turns: state differs from live");
            }
        }
        std::fs::write(&path, full).map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn analytics() -> Check {
    let s = survey::summarize(&fixtures::pilot_survey()).map_err(|e| e.to_string())?;
    let q = |n: usize| Ok::<_, String>(s.question(n));
    let q6 = q(6)?;
    ensure!(
        (q6.pct_at(5), q6.pct_at(6), q6.pct_at(7)) == (50.0, 20.0, 10.0),
        "Q6 {:?}",
        q6.percentages
    );
    let q2 = q(2)?;
    ensure!(
        (q2.pct_at(3), q2.pct_at(2), q2.pct_at(1)) == (40.0, 10.0, 10.0),
        "Q2 {:?}",
        q2.percentages
    );
    for n in [8, 10] {
        let qn = q(n)?;
        let top: f64 = (5..=7).map(|v| qn.pct_at(v)).sum();
        let enough = top >= 90.0;
        ensure!(enough, "Q{n} 5-7 share {top}");
    }
    ensure!(
        (s.overall.pct_below_4, s.overall.pct_at_or_above_4) == (28.0, 72.0),
        "overall {:?}",
        s.overall
    );
    Ok(())
}

fn theme_graph() -> Check {
    for seed in 0..100 {
        let sets = fixtures::random_theme_sets(seed, 20, 10);
        let annotations: Vec<ThemeAnnotation> = sets
            .iter()
            .enumerate()
            .map(|(i, themes)| ThemeAnnotation {
                response_id: format!("r{i}"),
                question_id: "q11".into(),
                themes: themes.clone(),
                extraction_failed: false,
            })
            .collect();
        let mut nodes: BTreeMap<String, usize> = BTreeMap::new();
        let mut edges: BTreeMap<(String, String), usize> = BTreeMap::new();
        for themes in &sets {
            let distinct: Vec<&String> = themes.iter().collect::<BTreeSet<_>>().into_iter().collect();
            for (i, a) in distinct.iter().enumerate() {
                *nodes.entry((*a).clone()).or_default() += 1;
                for b in &distinct[i + 1..] {
                    *edges.entry(((*a).clone(), (*b).clone())).or_default() += 1;
                }
            }
        }
        let graph = build_theme_graph(&annotations);
        let got_nodes: BTreeMap<String, usize> = graph.nodes.iter().map(|n| (n.id.clone(), n.weight)).collect();
        let got_edges: BTreeMap<(String, String), usize> =
            graph.links.iter().map(|l| ((l.source.clone(), l.target.clone()), l.weight)).collect();
        ensure!(got_nodes == nodes, "set {seed}: node weights differ");
        ensure!(got_edges == edges, "set {seed}: edge weights differ");
        ensure!(graph.nodes.len() == nodes.len() && graph.links.len() == edges.len(), "set {seed}: duplicates");
    }
    Ok(())
}

fn end_to_end() -> Check {
    let ws = common::Workspace::new();
    let flow = common::chat_flow(&ws)?;
    let store = Store::open(ws.data()).map_err(|e| e.to_string())?;
    let transcript = store.read_transcript(flow.session).map_err(|e| e.to_string())?;
    ensure!(transcript.turns.len() == 7, "{} turns persisted", transcript.turns.len());
    ensure!(flow.report.contains("72.0"), "report lacks 72.0:\n{}", flow.report);
    Ok(())
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("template fidelity", Duration::from_secs(1), template_fidelity),
        ("json extraction", Duration::from_secs(5), json_extraction),
        ("dialogue invariants", Duration::from_secs(10), dialogue_invariants),
        ("policy oracle", Duration::MAX, policy_oracle),
        ("replay equivalence", Duration::MAX, replay_equivalence),
        ("analytics reproduction", Duration::from_secs(1), analytics),
        ("theme graph", Duration::from_secs(2), theme_graph),
        ("end-to-end cli flow", Duration::from_secs(5), end_to_end),
    ];
    let mut failed = 0;
    for (name, limit, check) in criteria {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = started.elapsed();
        let outcome = outcome.and_then(|()| {
            if elapsed > limit {
                Err(format!("took {elapsed:.2?}, limit {limit:.0?}"))
            } else {
                Ok(())
            }
        });
        match outcome {
            Ok(()) => println!("PASS {name} ({elapsed:.2?})"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name} ({elapsed:.2?}): {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
