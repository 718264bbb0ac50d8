//! File-backed persistence.
//!
//! ```text
//! <root>/scenarios/<id>.json     one document per scenario, replaced atomically
//! <root>/sessions/<id>.jsonl     header line, one line per turn, optional end line
//! <root>/surveys/responses.csv   participant_id,q1..q10
//! <root>/surveys/open/<id>.json  open answers keyed by CSV row
//! ```
//!
//! Session transcripts are append-only and synced per record; a torn final
//! line from a crash is ignored on load.

use std::fs::{self, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::dialogue::{DialogueSession, SessionHeader, SessionState, Turn};
use crate::scenario::{GenerationWarning, KnowledgeComponent, ScenarioMatrix, ScenarioSpec};
use crate::survey::{SurveyError, SurveyResponse, SurveyWire, QUESTION_COUNT};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("unknown scenario {0}")]
    UnknownScenario(Uuid),
    #[error("unknown session {0}")]
    UnknownSession(Uuid),
    #[error("corrupt record in {path}: {reason}")]
    CorruptRecord { path: PathBuf, reason: String },
    #[error(transparent)]
    Survey(#[from] SurveyError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

fn corrupt(path: &Path, reason: impl Into<String>) -> StoreError {
    StoreError::CorruptRecord { path: path.to_path_buf(), reason: reason.into() }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioRecord {
    pub id: Uuid,
    pub spec: ScenarioSpec,
    #[serde(default)]
    pub kcs: Vec<KnowledgeComponent>,
    #[serde(default)]
    pub kc_warnings: Vec<GenerationWarning>,
    #[serde(default)]
    pub matrix: Option<ScenarioMatrix>,
    pub created_at: DateTime<Utc>,
}

impl ScenarioRecord {
    pub fn new(spec: ScenarioSpec) -> Self {
        Self { id: Uuid::new_v4(), spec, kcs: Vec::new(), kc_warnings: Vec::new(), matrix: None, created_at: Utc::now() }
    }
}

/// One line of a session transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TranscriptRecord {
    Header(Box<SessionHeader>),
    Turn {
        turn: Turn,
        /// State after this turn, written by live operation for verification.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        state: Option<SessionState>,
    },
    End {
        summary: String,
        at: DateTime<Utc>,
    },
}

/// A parsed transcript before replay.
#[derive(Debug, Clone, PartialEq)]
pub struct Transcript {
    pub header: SessionHeader,
    pub turns: Vec<(Turn, Option<SessionState>)>,
    pub summary: Option<String>,
    /// A partially written final line was skipped.
    pub torn_tail: bool,
}

impl Transcript {
    pub fn into_session(self) -> Result<DialogueSession, crate::dialogue::ReplayError> {
        let turns = self.turns.into_iter().map(|(t, _)| t).collect();
        DialogueSession::replay(self.header, turns, self.summary)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredSurvey {
    /// Absent for rows added to the CSV by hand.
    pub id: Option<Uuid>,
    pub row: usize,
    pub response: SurveyResponse,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct OpenAnswers {
    id: Uuid,
    row: usize,
    participant_id: String,
    q11: String,
    q12: String,
}

pub struct Store {
    root: PathBuf,
    /// Serializes scenario rewrites and survey appends. Transcript writers
    /// are kept to one per session by the caller.
    lock: Mutex<()>,
}

const SURVEY_HEADER: [&str; QUESTION_COUNT + 1] =
    ["participant_id", "q1", "q2", "q3", "q4", "q5", "q6", "q7", "q8", "q9", "q10"];

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        for dir in ["scenarios", "sessions", "surveys/open"] {
            fs::create_dir_all(root.join(dir))?;
        }
        Ok(Self { root, lock: Mutex::new(()) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn guard(&self) -> std::sync::MutexGuard<'_, ()> {
        self.lock.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn scenario_path(&self, id: Uuid) -> PathBuf {
        self.root.join("scenarios").join(format!("{id}.json"))
    }

    pub fn session_path(&self, id: Uuid) -> PathBuf {
        self.root.join("sessions").join(format!("{id}.jsonl"))
    }

    fn survey_csv(&self) -> PathBuf {
        self.root.join("surveys").join("responses.csv")
    }

    fn write_atomic(&self, path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
        let dir = path.parent().expect("store paths have a parent");
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(bytes)?;
        tmp.as_file().sync_all()?;
        tmp.persist(path).map_err(|e| e.error)?;
        Ok(())
    }

    /// Writes (or replaces) a scenario document.
    pub fn put_scenario(&self, record: &ScenarioRecord) -> Result<(), StoreError> {
        let bytes = serde_json::to_vec_pretty(record).expect("scenario records serialize");
        let _g = self.guard();
        self.write_atomic(&self.scenario_path(record.id), &bytes)
    }

    pub fn save_scenario(&self, spec: ScenarioSpec) -> Result<ScenarioRecord, StoreError> {
        let record = ScenarioRecord::new(spec);
        self.put_scenario(&record)?;
        Ok(record)
    }

    pub fn load_scenario(&self, id: Uuid) -> Result<ScenarioRecord, StoreError> {
        let path = self.scenario_path(id);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(StoreError::UnknownScenario(id)),
            Err(e) => return Err(e.into()),
        };
        serde_json::from_slice(&bytes).map_err(|e| corrupt(&path, e.to_string()))
    }

    /// Read-modify-write of one scenario under the store lock.
    pub fn update_scenario<F>(&self, id: Uuid, f: F) -> Result<ScenarioRecord, StoreError>
    where
        F: FnOnce(&mut ScenarioRecord),
    {
        let _g = self.guard();
        let path = self.scenario_path(id);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(StoreError::UnknownScenario(id)),
            Err(e) => return Err(e.into()),
        };
        let mut record: ScenarioRecord = serde_json::from_slice(&bytes).map_err(|e| corrupt(&path, e.to_string()))?;
        f(&mut record);
        record.id = id;
        let bytes = serde_json::to_vec_pretty(&record).expect("scenario records serialize");
        self.write_atomic(&path, &bytes)?;
        Ok(record)
    }

    fn ids_in(&self, dir: &str, ext: &str) -> Result<Vec<Uuid>, StoreError> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(self.root.join(dir))? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some(ext) {
                continue;
            }
            if let Some(id) = path.file_stem().and_then(|s| s.to_str()).and_then(|s| Uuid::parse_str(s).ok()) {
                ids.push(id);
            }
        }
        ids.sort();
        Ok(ids)
    }

    /// All scenarios, oldest first.
    pub fn list_scenarios(&self) -> Result<Vec<ScenarioRecord>, StoreError> {
        let mut records = self
            .ids_in("scenarios", "json")?
            .into_iter()
            .map(|id| self.load_scenario(id))
            .collect::<Result<Vec<_>, _>>()?;
        records.sort_by(|a, b| a.created_at.cmp(&b.created_at).then(a.id.cmp(&b.id)));
        Ok(records)
    }

    pub fn list_sessions(&self) -> Result<Vec<Uuid>, StoreError> {
        self.ids_in("sessions", "jsonl")
    }

    pub fn session_exists(&self, id: Uuid) -> bool {
        self.session_path(id).exists()
    }

    fn append_line(&self, id: Uuid, record: &TranscriptRecord) -> Result<(), StoreError> {
        let path = self.session_path(id);
        let mut file = match OpenOptions::new().append(true).open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(StoreError::UnknownSession(id)),
            Err(e) => return Err(e.into()),
        };
        let mut line = serde_json::to_vec(record).expect("transcript records serialize");
        line.push(b'\n');
        file.write_all(&line)?;
        file.sync_data()?;
        Ok(())
    }

    /// Creates the transcript for a freshly started session, writing the
    /// header and any turns it already has.
    pub fn create_session(&self, session: &DialogueSession) -> Result<(), StoreError> {
        let path = self.session_path(session.id());
        let file = OpenOptions::new().write(true).create_new(true).open(&path)?;
        let mut w = BufWriter::new(file);
        let mut write = |r: &TranscriptRecord| -> std::io::Result<()> {
            serde_json::to_writer(&mut w, r).map_err(std::io::Error::other)?;
            w.write_all(b"\n")
        };
        write(&TranscriptRecord::Header(Box::new(session.header.clone())))?;
        let mut state = SessionState::default();
        for turn in &session.turns {
            state.apply(turn, &session.header.config);
            write(&TranscriptRecord::Turn { turn: turn.clone(), state: Some(state.clone()) })?;
        }
        if let Some(summary) = &session.summary {
            write(&TranscriptRecord::End { summary: summary.clone(), at: Utc::now() })?;
        }
        let file = w.into_inner().map_err(|e| e.into_error())?;
        file.sync_all()?;
        Ok(())
    }

    pub fn append_turn(&self, id: Uuid, turn: &Turn) -> Result<(), StoreError> {
        self.append_line(id, &TranscriptRecord::Turn { turn: turn.clone(), state: None })
    }

    /// Appends a turn along with the live state after it.
    pub fn append_turn_with_state(&self, id: Uuid, turn: &Turn, state: &SessionState) -> Result<(), StoreError> {
        self.append_line(id, &TranscriptRecord::Turn { turn: turn.clone(), state: Some(state.clone()) })
    }

    pub fn append_end(&self, id: Uuid, summary: &str) -> Result<(), StoreError> {
        self.append_line(id, &TranscriptRecord::End { summary: summary.to_string(), at: Utc::now() })
    }

    /// Persists whatever `session` has beyond the `persisted` turns already
    /// on disk, plus the end record once it has a summary.
    pub fn sync_session(&self, session: &DialogueSession, persisted: usize) -> Result<(), StoreError> {
        let mut state = SessionState::default();
        for (i, turn) in session.turns.iter().enumerate() {
            state.apply(turn, &session.header.config);
            if i >= persisted {
                self.append_turn_with_state(session.id(), turn, &state)?;
            }
        }
        if let Some(summary) = &session.summary {
            self.append_end(session.id(), summary)?;
        }
        Ok(())
    }

    /// Parses a transcript without replaying it.
    pub fn read_transcript(&self, id: Uuid) -> Result<Transcript, StoreError> {
        let path = self.session_path(id);
        let content = match fs::read_to_string(&path) {
            Ok(c) => c,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(StoreError::UnknownSession(id)),
            Err(e) => return Err(e.into()),
        };
        let complete = content.ends_with('\n');
        let lines: Vec<&str> = content.split('\n').filter(|l| !l.trim().is_empty()).collect();
        let mut header = None;
        let mut turns: Vec<(Turn, Option<SessionState>)> = Vec::new();
        let mut summary = None;
        let mut torn_tail = false;
        for (n, line) in lines.iter().enumerate() {
            let record: TranscriptRecord = match serde_json::from_str(line) {
                Ok(r) => r,
                Err(_) if n + 1 == lines.len() && !complete && n > 0 => {
                    torn_tail = true;
                    break;
                }
                Err(e) => return Err(corrupt(&path, format!("line {}: {e}", n + 1))),
            };
            match (n, record) {
                (0, TranscriptRecord::Header(h)) => {
                    if h.session_id != id {
                        return Err(corrupt(&path, "header session id does not match file name"));
                    }
                    header = Some(*h);
                }
                (0, _) => return Err(corrupt(&path, "first line is not a header")),
                (_, TranscriptRecord::Header(_)) => return Err(corrupt(&path, format!("line {}: second header", n + 1))),
                (_, _) if summary.is_some() => {
                    return Err(corrupt(&path, format!("line {}: record after end", n + 1)));
                }
                (_, TranscriptRecord::Turn { turn, state }) => {
                    if let Some((prev, _)) = turns.last() {
                        if turn.index <= prev.index {
                            return Err(corrupt(&path, format!("line {}: turn index does not increase", n + 1)));
                        }
                    }
                    turns.push((turn, state));
                }
                (_, TranscriptRecord::End { summary: s, .. }) => summary = Some(s),
            }
        }
        let header = header.ok_or_else(|| corrupt(&path, "empty transcript"))?;
        Ok(Transcript { header, turns, summary, torn_tail })
    }

    /// Loads a session by replaying its transcript.
    pub fn load_session(&self, id: Uuid) -> Result<DialogueSession, StoreError> {
        let path = self.session_path(id);
        let transcript = self.read_transcript(id)?;
        if transcript.torn_tail {
            tracing::warn!(session = %id, "ignoring partially written final transcript line");
        }
        transcript.into_session().map_err(|e| corrupt(&path, e.to_string()))
    }

    /// Appends one survey response; returns its id.
    pub fn save_survey(&self, response: &SurveyResponse) -> Result<Uuid, StoreError> {
        let _g = self.guard();
        let path = self.survey_csv();
        let existing = self.read_survey_rows(&path)?.len();
        let new_file = !path.exists() || fs::metadata(&path)?.len() == 0;
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        if new_file {
            w.write_record(SURVEY_HEADER).map_err(csv_io)?;
        }
        let mut row = vec![response.participant_id.clone()];
        row.extend(response.scores.iter().map(|s| s.to_string()));
        w.write_record(&row).map_err(csv_io)?;
        let file = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
        file.sync_data()?;

        let id = Uuid::new_v4();
        let open = OpenAnswers {
            id,
            row: existing,
            participant_id: response.participant_id.clone(),
            q11: response.q11.clone(),
            q12: response.q12.clone(),
        };
        let bytes = serde_json::to_vec_pretty(&open).expect("open answers serialize");
        self.write_atomic(&self.root.join("surveys/open").join(format!("{id}.json")), &bytes)?;
        Ok(id)
    }

    fn read_survey_rows(&self, path: &Path) -> Result<Vec<SurveyWire>, StoreError> {
        if !path.exists() {
            return Ok(Vec::new());
        }
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(csv_io)?;
        let mut rows = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| corrupt(path, format!("row {}: {e}", i + 1)))?;
            if rec.len() != QUESTION_COUNT + 1 {
                return Err(corrupt(path, format!("row {}: expected {} fields", i + 1, QUESTION_COUNT + 1)));
            }
            let mut scores = [0i64; QUESTION_COUNT];
            for (q, score) in scores.iter_mut().enumerate() {
                *score = rec[q + 1].parse().map_err(|_| corrupt(path, format!("row {}: q{} is not a number", i + 1, q + 1)))?;
            }
            let [q1, q2, q3, q4, q5, q6, q7, q8, q9, q10] = scores;
            rows.push(SurveyWire {
                participant_id: rec[0].to_string(),
                q1,
                q2,
                q3,
                q4,
                q5,
                q6,
                q7,
                q8,
                q9,
                q10,
                q11: String::new(),
                q12: String::new(),
            });
        }
        Ok(rows)
    }

    /// All survey responses in CSV order, with open answers joined back in.
    pub fn load_surveys(&self) -> Result<Vec<StoredSurvey>, StoreError> {
        let path = self.survey_csv();
        let rows = self.read_survey_rows(&path)?;
        let mut open: Vec<Option<OpenAnswers>> = (0..rows.len()).map(|_| None).collect();
        for entry in fs::read_dir(self.root.join("surveys/open"))? {
            let p = entry?.path();
            if p.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let answers: OpenAnswers =
                serde_json::from_slice(&fs::read(&p)?).map_err(|e| corrupt(&p, e.to_string()))?;
            if let Some(slot) = open.get_mut(answers.row) {
                *slot = Some(answers);
            }
        }
        rows.into_iter()
            .zip(open)
            .enumerate()
            .map(|(row, (mut wire, answers))| {
                let id = answers.map(|a| {
                    wire.q11 = a.q11;
                    wire.q12 = a.q12;
                    a.id
                });
                let response = SurveyResponse::try_from(wire).map_err(|e| match e {
                    SurveyError::OutOfRange { .. } | SurveyError::MissingParticipant => {
                        corrupt(&path, format!("row {}: {e}", row + 1))
                    }
                    other => StoreError::Survey(other),
                })?;
                Ok(StoredSurvey { id, row, response })
            })
            .collect()
    }

    /// Imports a CSV with the `participant_id,q1..q10[,q11,q12]` layout.
    pub fn import_surveys_csv(&self, path: &Path) -> Result<usize, StoreError> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(true).from_path(path).map_err(csv_io)?;
        let mut n = 0;
        for (i, rec) in reader.deserialize::<SurveyWire>().enumerate() {
            let wire = rec.map_err(|e| corrupt(path, format!("row {}: {e}", i + 1)))?;
            let response = SurveyResponse::try_from(wire)?;
            self.save_survey(&response)?;
            n += 1;
        }
        Ok(n)
    }
}

fn csv_io(e: csv::Error) -> StoreError {
    StoreError::Io(std::io::Error::other(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn store() -> (tempfile::TempDir, Store) {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        (dir, store)
    }

    #[test]
    fn scenario_round_trip() {
        let (_d, s) = store();
        let rec = s.save_scenario(fixtures::motivation_spec()).unwrap();
        assert_eq!(s.load_scenario(rec.id).unwrap(), rec);
        let updated = s.update_scenario(rec.id, |r| r.kcs.push(fixtures::motivation_kc())).unwrap();
        assert_eq!(s.load_scenario(rec.id).unwrap(), updated);
        assert_eq!(s.list_scenarios().unwrap().len(), 1);
    }

    #[test]
    fn unknown_ids() {
        let (_d, s) = store();
        let id = Uuid::new_v4();
        assert!(matches!(s.load_scenario(id), Err(StoreError::UnknownScenario(_))));
        assert!(matches!(s.load_session(id), Err(StoreError::UnknownSession(_))));
        assert!(matches!(s.append_end(id, "x"), Err(StoreError::UnknownSession(_))));
    }

    #[test]
    fn survey_round_trip_with_commas() {
        let (_d, s) = store();
        let r = SurveyResponse::new("p, 1", [1, 2, 3, 4, 5, 6, 7, 1, 2, 3], "Instant feedback, mostly", "More \"examples\"\nplease")
            .unwrap();
        let id = s.save_survey(&r).unwrap();
        let loaded = s.load_surveys().unwrap();
        assert_eq!(loaded.len(), 1);
        assert_eq!(loaded[0].id, Some(id));
        assert_eq!(loaded[0].response, r);
    }
}
