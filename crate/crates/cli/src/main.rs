//! `socratic`: operator entry point for the tutoring service.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;
use socratic_core::dialogue::{self, DialogueSession, Role, SessionConfig, SessionState, WhEntry};
use socratic_core::provider::{ChatProvider, ProviderConfig, ProviderError, RemoteProvider, ScriptedProvider};
use socratic_core::scenario::{self, ScenarioDefaults, ScenarioError, TreeLevel};
use socratic_core::store::{ScenarioRecord, Store, StoreError};
use socratic_core::survey::{self, LikertSummary, OpenText, SurveyError, ThemeGraph};
use socratic_core::wh::WhType;
use uuid::Uuid;

#[derive(Parser)]
#[command(name = "socratic", version, about = "Socratic tutoring service")]
struct Cli {
    /// Directory holding scenarios, sessions and surveys.
    #[arg(long, global = true, env = "SOCRATIC_DATA_DIR", default_value = "data")]
    data_dir: PathBuf,
    /// `remote` or `scripted:<path>` (JSON array of script entries).
    #[arg(long, global = true, default_value = "remote")]
    provider: String,
    /// Model name for the remote provider.
    #[arg(long, global = true)]
    model: Option<String>,
    /// TOML file with remote provider settings.
    #[arg(long, global = true)]
    provider_config: Option<PathBuf>,
    /// Print machine-readable JSON instead of tables.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP API.
    Serve {
        #[arg(long, default_value = socratic_server::DEFAULT_ADDR)]
        addr: std::net::SocketAddr,
        #[arg(long, default_value_t = dialogue::DEFAULT_MAX_TURNS)]
        max_turns: u32,
    },
    /// Scenario construction.
    #[command(subcommand)]
    Scenario(ScenarioCommand),
    /// Tutor a scenario cell in the terminal; end of input ends the session.
    Chat(ChatArgs),
    /// Print a stored transcript.
    Replay {
        #[arg(long)]
        session: String,
        /// Recompute state from the turns and compare with the stored snapshots.
        #[arg(long)]
        verify: bool,
    },
    /// Survey responses.
    #[command(subcommand)]
    Survey(SurveyCommand),
    /// Survey analytics over the data directory.
    Report {
        kind: ReportKind,
        /// Where to write the JSON output (default: <data-dir>/reports/<kind>.json).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum ScenarioCommand {
    /// Build a scenario, then its knowledge components and question matrix.
    New(NewScenario),
    /// List stored scenarios.
    List,
}

#[derive(Args)]
#[group(required = true, multiple = false, id = "source")]
struct Source {
    /// JSON object of tree selections keyed by level (`domain`, `subdomain`, ...).
    #[arg(long)]
    tree: Option<PathBuf>,
    /// Free-text description of what the learner wants to study.
    #[arg(long)]
    text: Option<String>,
}

#[derive(Args)]
struct NewScenario {
    #[command(flatten)]
    source: Source,
    #[arg(long)]
    user_name: Option<String>,
    #[arg(long)]
    tutor_name: Option<String>,
}

#[derive(Args)]
struct ChatArgs {
    #[arg(long)]
    scenario: String,
    /// Row of the KC table, starting at 0.
    #[arg(long, default_value_t = 0)]
    kc: usize,
    #[arg(long, default_value = "What")]
    wh: String,
    /// Text the tutor must never reveal.
    #[arg(long)]
    expected_answer: Option<String>,
    #[arg(long, default_value_t = dialogue::DEFAULT_MAX_TURNS)]
    max_turns: u32,
}

#[derive(Subcommand)]
enum SurveyCommand {
    /// Import a CSV with columns participant_id, q1..q10 and optional q11, q12.
    Import { csv: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportKind {
    Likert,
    Themes,
}

/// A one-line failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }

    fn unknown(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }
}

impl From<StoreError> for Failure {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::UnknownScenario(_) | StoreError::UnknownSession(_) => Failure::unknown(e.to_string()),
            e => Failure::new(e.to_string()),
        }
    }
}

macro_rules! failure_from {
    ($($t:ty),*) => {$(
        impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                Failure::new(e.to_string())
            }
        }
    )*};
}

failure_from!(ScenarioError, dialogue::DialogueError, SurveyError, ProviderError, io::Error, serde_json::Error);

type CliResult<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> CliResult {
    let store = Store::open(&cli.data_dir)?;
    let provider = || open_provider(&cli.provider, cli.model.as_deref(), cli.provider_config.as_deref());
    match &cli.command {
        Command::Serve { addr, max_turns } => serve(store, provider()?, *addr, *max_turns),
        Command::Scenario(ScenarioCommand::New(args)) => new_scenario(&store, provider()?.as_ref(), args, cli.json),
        Command::Scenario(ScenarioCommand::List) => list_scenarios(&store, cli.json),
        Command::Chat(args) => chat(&store, provider()?.as_ref(), args, cli.json),
        Command::Replay { session, verify } => replay(&store, session, *verify, cli.json),
        Command::Survey(SurveyCommand::Import { csv }) => {
            let n = store.import_surveys_csv(csv)?;
            println!("imported {n} responses");
            Ok(())
        }
        Command::Report { kind, out } => {
            let out = out.clone().unwrap_or_else(|| cli.data_dir.join("reports").join(kind_name(*kind)).with_extension("json"));
            match kind {
                ReportKind::Likert => report_likert(&store, &out, cli.json),
                ReportKind::Themes => report_themes(&store, provider()?.as_ref(), &out, cli.json),
            }
        }
    }
}

fn open_provider(spec: &str, model: Option<&str>, config: Option<&Path>) -> CliResult<Arc<dyn ChatProvider>> {
    if let Some(path) = spec.strip_prefix("scripted:") {
        let scripted = ScriptedProvider::from_file(Path::new(path))
            .map_err(|e| Failure::new(format!("cannot load script {path}: {e}")))?;
        return Ok(Arc::new(scripted));
    }
    if spec != "remote" {
        return Err(Failure::new(format!("unknown provider `{spec}` (expected remote or scripted:<path>)")));
    }
    let mut config = match config {
        Some(path) => ProviderConfig::from_toml_file(path)?,
        None => ProviderConfig::default(),
    };
    if let Some(model) = model {
        config.model = model.to_string();
    }
    Ok(Arc::new(RemoteProvider::new(config)?))
}

fn parse_id(raw: &str) -> CliResult<Uuid> {
    Uuid::parse_str(raw).map_err(|_| Failure::unknown(format!("no such id `{raw}`")))
}

fn kind_name(kind: ReportKind) -> &'static str {
    match kind {
        ReportKind::Likert => "likert",
        ReportKind::Themes => "themes",
    }
}

fn print_json(value: &impl Serialize) -> CliResult {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn serve(store: Store, provider: Arc<dyn ChatProvider>, addr: std::net::SocketAddr, max_turns: u32) -> CliResult {
    let _ = tracing_subscriber::fmt().with_writer(io::stderr).try_init();
    let state = socratic_server::AppState::new(store, provider, ScenarioDefaults::default(), max_turns);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = socratic_server::bind(addr).await?;
        eprintln!("listening on {}", listener.local_addr()?);
        socratic_server::serve(listener, state).await
    })?;
    Ok(())
}

fn new_scenario(store: &Store, provider: &dyn ChatProvider, args: &NewScenario, as_json: bool) -> CliResult {
    let defaults = ScenarioDefaults::default();
    let mut spec = match (&args.source.tree, &args.source.text) {
        (Some(path), _) => {
            let selections: BTreeMap<TreeLevel, String> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
            scenario::build_from_tree(&selections, &defaults)?
        }
        (None, Some(text)) => scenario::build_from_text(text, provider, &defaults)?,
        (None, None) => unreachable!("clap requires one source"),
    };
    if let Some(name) = &args.user_name {
        spec.user_name = name.clone();
    }
    if let Some(name) = &args.tutor_name {
        spec.tutor_name = name.clone();
    }
    spec.validate()?;
    let batch = scenario::generate_kcs(&spec, provider)?;
    let matrix = scenario::generate_matrix(&spec, &batch.kcs, provider)?;
    let record = store.save_scenario(spec)?;
    let record = store.update_scenario(record.id, |r| {
        r.kcs = batch.kcs;
        r.kc_warnings = batch.warnings;
        r.matrix = Some(matrix);
    })?;
    if as_json {
        return print_json(&record);
    }
    println!("scenario {}", record.id);
    print_kc_table(&record);
    Ok(())
}

fn print_kc_table(record: &ScenarioRecord) {
    let Some(matrix) = &record.matrix else {
        return;
    };
    let width = record.kcs.iter().map(|k| k.the_kc.len()).max().unwrap_or(2).max(2);
    let header: String = WhType::ALL.iter().map(|w| format!(" {:<5}", w.word())).collect();
    println!("{:>3}  {:<width$} {header}", "#", "KC");
    for (i, kc) in record.kcs.iter().enumerate() {
        let cells: String = WhType::ALL
            .iter()
            .map(|w| format!(" {:<5}", if matrix.cell(i, *w).is_some() { "yes" } else { "-" }))
            .collect();
        println!("{i:>3}  {:<width$} {cells}", kc.the_kc);
    }
}

fn list_scenarios(store: &Store, as_json: bool) -> CliResult {
    let records = store.list_scenarios()?;
    if as_json {
        return print_json(&records);
    }
    for r in records {
        println!("{}  {} / {}  ({} KCs)", r.id, r.spec.domain, r.spec.kc, r.kcs.len());
    }
    Ok(())
}

fn chat(store: &Store, provider: &dyn ChatProvider, args: &ChatArgs, as_json: bool) -> CliResult {
    let record = store.load_scenario(parse_id(&args.scenario)?)?;
    let wh: WhType = args.wh.parse().map_err(|e: socratic_core::wh::UnknownWhType| Failure::new(e.to_string()))?;
    let matrix = record
        .matrix
        .as_ref()
        .ok_or_else(|| Failure::new("scenario has no question matrix yet"))?;
    let kc = matrix
        .kcs
        .get(args.kc)
        .ok_or_else(|| Failure::new(format!("kc {} out of range (scenario has {})", args.kc, matrix.kcs.len())))?;
    let question = match matrix.cell(args.kc, wh) {
        Some(q) => q.to_string(),
        None => scenario::regenerate_cell(&record.spec, kc, wh, provider)?
            .ok_or_else(|| Failure::new("no valid opening question for this cell"))?,
    };
    let config = SessionConfig { max_turns: args.max_turns, expected_answer: args.expected_answer.clone(), ..Default::default() };
    let entry = WhEntry { kc_index: args.kc, wh, question };
    let mut session = dialogue::start_session(&record.spec, kc, entry, config, provider)?;
    session.header.scenario_id = Some(record.id);
    store.create_session(&session)?;
    let tutor = session.header.spec.tutor_name.clone();
    if !as_json {
        println!("session {}", session.id());
        println!("{tutor}: {}", session.turns[0].text);
    }

    let mut persisted = session.turns.len();
    let stdin = io::stdin();
    for line in stdin.lock().lines() {
        let line = line?;
        let (_, tutor_turn) = dialogue::submit_response(&mut session, &line, provider)?;
        store.sync_session(&session, persisted)?;
        persisted = session.turns.len();
        if !as_json {
            println!("{tutor}: {}", tutor_turn.text);
            io::stdout().flush()?;
        }
        if !session.is_active() {
            break;
        }
    }
    let summary = if session.is_active() {
        let summary = dialogue::end_session(&mut session, provider)?;
        store.append_end(session.id(), &summary)?;
        summary
    } else {
        session.summary.clone().unwrap_or_default()
    };
    if as_json {
        return print_json(&json!({"session_id": session.id(), "turns": session.turns.len(), "summary": summary}));
    }
    println!("summary: {summary}");
    Ok(())
}

/// Positions where the state recomputed from the turns differs from the
/// stored snapshot.
fn divergences(header_config: &SessionConfig, turns: &[(dialogue::Turn, Option<SessionState>)]) -> Vec<usize> {
    let mut state = SessionState::default();
    let mut out = Vec::new();
    for (turn, stored) in turns {
        state.apply(turn, header_config);
        if stored.as_ref().is_some_and(|s| *s != state) {
            out.push(turn.index);
        }
    }
    out
}

fn replay(store: &Store, raw_id: &str, verify: bool, as_json: bool) -> CliResult {
    let id = parse_id(raw_id)?;
    let transcript = store.read_transcript(id)?;
    let diverged = divergences(&transcript.header.config, &transcript.turns);
    let session: DialogueSession =
        transcript.clone().into_session().map_err(|e| Failure::new(format!("transcript does not replay: {e}")))?;
    if as_json {
        let mut value = serde_json::to_value(&session)?;
        if verify {
            value["divergences"] = json!(diverged);
        }
        print_json(&value)?;
    } else {
        let spec = &session.header.spec;
        for t in &session.turns {
            match (t.role, t.prompt_type) {
                (Role::Tutor, Some(p)) => println!("[{}] {} ({p}): {}", t.index, spec.tutor_name, t.text),
                (Role::Tutor, None) => println!("[{}] {}: {}", t.index, spec.tutor_name, t.text),
                (Role::Learner, _) => {
                    let class = t.assessment.as_ref().map(|a| format!(" [{}]", a.classification)).unwrap_or_default();
                    println!("[{}] {}{class}: {}", t.index, spec.user_name, t.text)
                }
            }
        }
        if let Some(summary) = &session.summary {
            println!("summary: {summary}");
        }
        if transcript.torn_tail {
            println!("note: a partially written final line was skipped");
        }
        if verify {
            println!("{} divergences", diverged.len());
        }
    }
    if verify && !diverged.is_empty() {
        return Err(Failure::new(format!("state diverges at turns {diverged:?}")));
    }
    Ok(())
}

fn write_report(out: &Path, value: &impl Serialize) -> CliResult {
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(out, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn report_likert(store: &Store, out: &Path, as_json: bool) -> CliResult {
    let responses: Vec<_> = store.load_surveys()?.into_iter().map(|s| s.response).collect();
    let summary = survey::summarize(&responses)?;
    write_report(out, &summary)?;
    if as_json {
        return print_json(&summary);
    }
    print_likert(&summary);
    println!("wrote {}", out.display());
    Ok(())
}

fn print_likert(summary: &LikertSummary) {
    println!("{:<4} {:>3} {:>5}  {:>6} {:>6} {:>6}", "Q", "n", "mean", "<4 %", "=4 %", ">4 %");
    for q in &summary.questions {
        println!(
            "Q{:<3} {:>3} {:>5.2}  {:>6.1} {:>6.1} {:>6.1}",
            q.question, q.n, q.mean, q.pct_below_4, q.pct_at_4, q.pct_above_4
        );
    }
    let o = &summary.overall;
    println!("overall ({} scores): below 4 {:.1}%, at or above 4 {:.1}%", o.observations, o.pct_below_4, o.pct_at_or_above_4);
}

fn report_themes(store: &Store, provider: &dyn ChatProvider, out: &Path, as_json: bool) -> CliResult {
    let texts: Vec<OpenText> = store
        .load_surveys()?
        .iter()
        .flat_map(|s| {
            let id = s.id.map_or_else(|| format!("row-{}", s.row), |u| u.to_string());
            OpenText::from_response(&id, &s.response)
        })
        .collect();
    let annotations = survey::annotate_themes(&texts, provider)?;
    let failed = annotations.iter().filter(|a| a.extraction_failed).count();
    let graph = survey::build_theme_graph(&annotations);
    write_report(out, &graph)?;
    if as_json {
        return print_json(&graph);
    }
    print_themes(&graph);
    if failed > 0 {
        println!("{failed} answers could not be annotated");
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn print_themes(graph: &ThemeGraph) {
    println!("themes:");
    for n in &graph.nodes {
        println!("  {:>3}  {}", n.weight, n.id);
    }
    println!("co-occurrences:");
    for l in &graph.links {
        println!("  {:>3}  {} -- {}", l.weight, l.source, l.target);
    }
}
