#![allow(dead_code)]

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use socratic_core::fixtures;
use socratic_core::provider::ScriptEntry;
use uuid::Uuid;

/// A data directory plus the fixture files the commands read.
pub struct Workspace {
    pub dir: tempfile::TempDir,
}

impl Workspace {
    pub fn new() -> Self {
        Self { dir: tempfile::tempdir().unwrap() }
    }

    pub fn data(&self) -> PathBuf {
        self.dir.path().join("data")
    }

    pub fn write(&self, name: &str, contents: &str) -> PathBuf {
        let path = self.dir.path().join(name);
        std::fs::write(&path, contents).unwrap();
        path
    }

    pub fn script(&self, name: &str, entries: &[ScriptEntry]) -> String {
        let path = self.write(name, &serde_json::to_string(entries).unwrap());
        format!("scripted:{}", path.display())
    }

    /// Runs `socratic` against this data directory.
    pub fn run(&self, args: &[&str], stdin: &str) -> Output {
        let mut child = Command::new(env!("CARGO_BIN_EXE_socratic"))
            .arg("--data-dir")
            .arg(self.data())
            .args(args)
            .env_remove("SOCRATIC_DATA_DIR")
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .unwrap();
        child.stdin.take().unwrap().write_all(stdin.as_bytes()).unwrap();
        child.wait_with_output().unwrap()
    }
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn describe(o: &Output) -> String {
    format!("status {:?}\nstdout:\n{}\nstderr:\n{}", o.status.code(), stdout(o), String::from_utf8_lossy(&o.stderr))
}

/// Id printed on a line starting with `prefix`.
pub fn id_after(out: &str, prefix: &str) -> Uuid {
    let line = out.lines().find_map(|l| l.strip_prefix(prefix)).unwrap_or_else(|| panic!("no `{prefix}` line in\n{out}"));
    Uuid::parse_str(line.trim()).unwrap()
}

pub struct Flow {
    pub scenario: Uuid,
    pub session: Uuid,
    pub report: String,
}

/// scenario -> KCs -> matrix -> 3-line chat -> survey import -> likert report.
pub fn chat_flow(ws: &Workspace) -> Result<Flow, String> {
    let provider = ws.script("flow.json", &fixtures::flow_script(3));
    let tree = ws.write("tree.json", &serde_json::to_string(&fixtures::motivation_selections()).unwrap());
    let tree = tree.to_str().unwrap();
    let out = ws.run(&["--provider", &provider, "scenario", "new", "--tree", tree, "--user-name", "Taylor"], "");
    if !out.status.success() {
        return Err(describe(&out));
    }
    let scenario = id_after(&stdout(&out), "scenario ");
    let lines = "I believe it requires hard work\nverbal praise and goal setting\npraise makes Taylor feel capable\n";
    let out = ws.run(&["--provider", &provider, "chat", "--scenario", &scenario.to_string(), "--kc", "0", "--wh", "What"], lines);
    if !out.status.success() {
        return Err(describe(&out));
    }
    let session = id_after(&stdout(&out), "session ");
    let csv = ws.write("pilot.csv", fixtures::PILOT_SURVEY_CSV);
    let out = ws.run(&["survey", "import", csv.to_str().unwrap()], "");
    if !out.status.success() {
        return Err(describe(&out));
    }
    let out = ws.run(&["report", "likert"], "");
    if !out.status.success() {
        return Err(describe(&out));
    }
    Ok(Flow { scenario, session, report: stdout(&out) })
}

pub fn transcript_path(data: &Path, session: Uuid) -> PathBuf {
    data.join("sessions").join(format!("{session}.jsonl"))
}
