mod common;

use common::{chat_flow, describe, stdout, transcript_path, Workspace};
use socratic_core::dialogue::Role;
use socratic_core::fixtures;
use socratic_core::store::Store;

#[test]
fn chat_flow_persists_seven_turns() {
    let ws = Workspace::new();
    let flow = chat_flow(&ws).unwrap();
    let store = Store::open(ws.data()).unwrap();
    let transcript = store.read_transcript(flow.session).unwrap();
    assert_eq!(transcript.turns.len(), 7);
    assert!(transcript.summary.as_deref().unwrap().starts_with("Taylor explored motivation strategies."));
    let roles: Vec<Role> = transcript.turns.iter().map(|(t, _)| t.role).collect();
    assert_eq!(roles[..3], [Role::Tutor, Role::Learner, Role::Tutor]);
    assert!(flow.report.contains("72.0"), "{}", flow.report);
    assert!(flow.report.contains("28.0"));

    let record = store.load_scenario(flow.scenario).unwrap();
    assert_eq!(record.kcs.len(), 5);
    assert!(record.matrix.is_some());
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(ws.data().join("reports/likert.json")).unwrap()).unwrap();
    assert_eq!(json["overall"]["pct_at_or_above_4"], 72.0);
}

#[test]
fn scenario_new_prints_kc_table() {
    let ws = Workspace::new();
    let provider = ws.script("flow.json", &fixtures::flow_script(0));
    let tree = ws.write("tree.json", &serde_json::to_string(&fixtures::motivation_selections()).unwrap());
    let out = ws.run(&["--provider", &provider, "scenario", "new", "--tree", tree.to_str().unwrap()], "");
    assert!(out.status.success(), "{}", describe(&out));
    let text = stdout(&out);
    for kc in fixtures::FLOW_KCS {
        assert!(text.contains(kc), "{text}");
    }
    assert!(text.contains("What") && text.contains("When"));

    let out = ws.run(&["--json", "scenario", "list"], "");
    let list: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(list.as_array().unwrap().len(), 1);
}

#[test]
fn replay_verify_reports_no_divergence() {
    let ws = Workspace::new();
    let flow = chat_flow(&ws).unwrap();
    let out = ws.run(&["replay", "--session", &flow.session.to_string(), "--verify"], "");
    assert!(out.status.success(), "{}", describe(&out));
    let text = stdout(&out);
    assert!(text.contains("0 divergences"), "{text}");
    assert!(text.contains(fixtures::TAYLOR_FOLLOW_UP));
    assert!(text.contains("summary: Taylor explored motivation strategies."));
}

#[test]
fn replay_verify_flags_tampered_state() {
    let ws = Workspace::new();
    let flow = chat_flow(&ws).unwrap();
    let path = transcript_path(&ws.data(), flow.session);
    let text = std::fs::read_to_string(&path).unwrap();
    let tampered = text.replacen("\"tutor_turns\":1", "\"tutor_turns\":9", 1);
    assert_ne!(text, tampered);
    std::fs::write(&path, tampered).unwrap();
    let out = ws.run(&["replay", "--session", &flow.session.to_string(), "--verify"], "");
    assert_eq!(out.status.code(), Some(1), "{}", describe(&out));
    assert!(stdout(&out).contains("1 divergences"));
}

#[test]
fn unknown_ids_exit_2() {
    let ws = Workspace::new();
    let missing = uuid::Uuid::new_v4().to_string();
    let empty = ws.script("empty.json", &[]);
    for args in [
        vec!["replay", "--session", missing.as_str()],
        vec!["replay", "--session", "nope"],
        vec!["--provider", empty.as_str(), "chat", "--scenario", missing.as_str()],
    ] {
        let out = ws.run(&args, "");
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", describe(&out));
        let err = String::from_utf8_lossy(&out.stderr);
        assert_eq!(err.trim().lines().count(), 1, "{err}");
    }
}

#[test]
fn other_failures_exit_1() {
    let ws = Workspace::new();
    let out = ws.run(&["report", "likert"], "");
    assert_eq!(out.status.code(), Some(1), "{}", describe(&out));
    let out = ws.run(&["--provider", "bogus", "scenario", "new", "--text", "motivation"], "");
    assert_eq!(out.status.code(), Some(1));
    let bad = ws.write("bad.csv", "participant_id,q1,q2,q3,q4,q5,q6,q7,q8,q9,q10\np1,4,4,9,4,4,4,4,4,4,4\n");
    let out = ws.run(&["survey", "import", bad.to_str().unwrap()], "");
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("q3"));
}

#[test]
fn report_themes_writes_graph() {
    let ws = Workspace::new();
    let csv = ws.write("pilot.csv", fixtures::PILOT_SURVEY_CSV);
    assert!(ws.run(&["survey", "import", csv.to_str().unwrap()], "").status.success());
    let provider = ws.script("themes.json", &fixtures::pilot_theme_script());
    let out = ws.run(&["--provider", &provider, "report", "themes"], "");
    assert!(out.status.success(), "{}", describe(&out));
    let text = stdout(&out);
    assert!(text.contains("Interactive Learning Scenarios"), "{text}");
    let graph: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(ws.data().join("reports/themes.json")).unwrap()).unwrap();
    assert_eq!(graph["nodes"][0]["weight"], 3);
}

#[test]
fn chat_json_output_and_auto_end() {
    let ws = Workspace::new();
    let provider = ws.script("flow.json", &fixtures::flow_script(3));
    let tree = ws.write("tree.json", &serde_json::to_string(&fixtures::motivation_selections()).unwrap());
    let out = ws.run(&["--provider", &provider, "--json", "scenario", "new", "--tree", tree.to_str().unwrap()], "");
    let record: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let id = record["id"].as_str().unwrap();
    // max 2 tutor turns: the opener plus one reply, then the session closes itself
    let out = ws.run(&["--provider", &provider, "--json", "chat", "--scenario", id, "--max-turns", "2"], "one\ntwo\nthree\n");
    assert!(out.status.success(), "{}", describe(&out));
    let result: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(result["turns"], 3);
    assert!(result["summary"].as_str().unwrap().contains("To understand the impact of motivation"));
}
