//! JSON-over-HTTP facade for scenario construction, tutoring sessions,
//! surveys and analytics.
//!
//! Provider calls and file I/O run on the blocking pool. Each session has a
//! slot in an in-memory registry; a second request for a session whose slot
//! is held gets `409 Busy` instead of waiting.

mod error;

use std::collections::{BTreeMap, HashMap};
use std::convert::Infallible;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::extract::{FromRequest, Path, Request, State};
use axum::http::{header, HeaderMap};
use axum::response::sse::{Event, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use socratic_core::dialogue::{self, DialogueSession, SessionConfig, Turn, WhEntry};
use socratic_core::provider::ChatProvider;
use socratic_core::scenario::{
    self, build_from_text, build_from_tree, expand_tree_level, generate_kcs, generate_matrix, CategoryTree,
    Pedagogy, ScenarioDefaults, ScenarioSpec, TreeLevel,
};
use socratic_core::store::{ScenarioRecord, Store};
use socratic_core::survey::{self, OpenText, SurveyResponse, SurveyWire};
use socratic_core::wh::WhType;
use tokio::sync::{Mutex as AsyncMutex, OwnedMutexGuard};
use uuid::Uuid;

pub use error::{ApiError, ERROR_CODES};

pub const DEFAULT_ADDR: &str = "127.0.0.1:8080";

type ApiResult<T> = Result<T, ApiError>;

/// A loaded session plus how many of its turns are already on disk.
struct Slot {
    session: DialogueSession,
    persisted: usize,
}

type SlotHandle = Arc<AsyncMutex<Option<Slot>>>;

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    store: Store,
    provider: Arc<dyn ChatProvider>,
    defaults: ScenarioDefaults,
    max_turns: u32,
    sessions: Mutex<HashMap<Uuid, SlotHandle>>,
}

impl AppState {
    pub fn new(store: Store, provider: Arc<dyn ChatProvider>, defaults: ScenarioDefaults, max_turns: u32) -> Self {
        Self {
            inner: Arc::new(Inner { store, provider, defaults, max_turns, sessions: Mutex::new(HashMap::new()) }),
        }
    }

    pub fn store(&self) -> &Store {
        &self.inner.store
    }

    /// Claims a session's slot without waiting.
    fn claim(&self, id: Uuid) -> ApiResult<OwnedMutexGuard<Option<Slot>>> {
        let handle = {
            let mut map = self.inner.sessions.lock().unwrap_or_else(|e| e.into_inner());
            map.entry(id).or_default().clone()
        };
        handle.try_lock_owned().map_err(|_| ApiError::new("Busy", format!("session {id} is handling another message")))
    }
}

/// Runs blocking work on the blocking pool.
async fn blocking<T, F>(state: &AppState, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&Inner) -> ApiResult<T> + Send + 'static,
{
    let inner = state.inner.clone();
    tokio::task::spawn_blocking(move || f(&inner)).await.map_err(|e| ApiError::internal(e.to_string()))?
}

/// A JSON body whose rejection uses the API error shape.
struct JsonBody(Value);

impl<S: Send + Sync> FromRequest<S> for JsonBody {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        let Json(value) = Json::<Value>::from_request(req, state)
            .await
            .map_err(|e| ApiError::bad_request(e.body_text()))?;
        Ok(Self(value))
    }
}

fn parse<T: for<'de> Deserialize<'de>>(body: Value) -> ApiResult<T> {
    serde_json::from_value(body).map_err(|e| ApiError::bad_request(e.to_string()))
}

fn parse_id(raw: &str) -> ApiResult<Uuid> {
    Uuid::parse_str(raw).map_err(|_| ApiError::not_found(format!("no such id `{raw}`")))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/pedagogies", get(pedagogies))
        .route("/tree/expand", post(expand_tree))
        .route("/scenarios", post(create_scenario).get(list_scenarios))
        .route("/scenarios/{id}", get(get_scenario))
        .route("/scenarios/{id}/kcs", post(create_kcs))
        .route("/scenarios/{id}/matrix", post(create_matrix))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/messages", post(post_message))
        .route("/sessions/{id}/end", post(end_session))
        .route("/surveys", post(create_survey))
        .route("/analytics/likert", get(likert))
        .route("/analytics/themes", get(themes))
        .fallback(|| async { ApiError::not_found("no such endpoint") })
        .with_state(state)
}

pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

pub async fn bind(addr: SocketAddr) -> std::io::Result<tokio::net::TcpListener> {
    tokio::net::TcpListener::bind(addr).await
}

async fn pedagogies() -> Json<Value> {
    Json(json!(scenario::list_pedagogies()))
}

#[derive(Deserialize)]
struct ExpandRequest {
    #[serde(default)]
    selections: BTreeMap<TreeLevel, String>,
    level: TreeLevel,
    #[serde(default)]
    lang: Option<String>,
}

async fn expand_tree(State(state): State<AppState>, JsonBody(body): JsonBody) -> ApiResult<Json<CategoryTree>> {
    let req: ExpandRequest = parse(body)?;
    blocking(&state, move |inner| {
        let mut tree = CategoryTree::new();
        for level in TreeLevel::ALL {
            if let Some(label) = req.selections.get(&level) {
                tree.select(level, label)?;
            }
        }
        let lang = req.lang.unwrap_or_else(|| inner.defaults.lang.clone());
        Ok(Json(expand_tree_level(&tree, req.level, inner.provider.as_ref(), &lang)?))
    })
    .await
}

#[derive(Deserialize)]
#[serde(rename_all = "lowercase")]
enum Mode {
    Tree,
    Text,
}

#[derive(Deserialize)]
struct ScenarioRequest {
    mode: Mode,
    #[serde(default)]
    selections: BTreeMap<TreeLevel, String>,
    #[serde(default)]
    free_text: Option<String>,
    /// Spec fields to override, keyed like the spec JSON (`theLang`, ...).
    #[serde(default)]
    overrides: serde_json::Map<String, Value>,
}

fn apply_overrides(spec: ScenarioSpec, overrides: serde_json::Map<String, Value>) -> ApiResult<ScenarioSpec> {
    if overrides.is_empty() {
        return Ok(spec);
    }
    let Value::Object(mut fields) = serde_json::to_value(&spec).expect("specs serialize") else {
        unreachable!("a spec serializes to an object")
    };
    for (k, v) in overrides {
        if !fields.contains_key(&k) {
            return Err(ApiError::bad_request(format!("unknown override `{k}`")));
        }
        let v = if k == "theType" {
            // lenient parse, same as tree selections
            let name = v.as_str().ok_or_else(|| ApiError::new("InvalidPedagogy", "theType must be a string"))?;
            serde_json::to_value(name.parse::<Pedagogy>()?).expect("pedagogies serialize")
        } else {
            v
        };
        fields.insert(k, v);
    }
    let spec: ScenarioSpec =
        serde_json::from_value(Value::Object(fields)).map_err(|e| ApiError::new("InvalidSpec", e.to_string()))?;
    spec.validate()?;
    Ok(spec)
}

#[derive(Serialize)]
struct ScenarioCreated {
    id: Uuid,
    spec: ScenarioSpec,
}

async fn create_scenario(State(state): State<AppState>, JsonBody(body): JsonBody) -> ApiResult<Json<ScenarioCreated>> {
    let req: ScenarioRequest = parse(body)?;
    blocking(&state, move |inner| {
        let spec = match req.mode {
            Mode::Tree => build_from_tree(&req.selections, &inner.defaults)?,
            Mode::Text => {
                let text = req.free_text.as_deref().unwrap_or("");
                build_from_text(text, inner.provider.as_ref(), &inner.defaults)?
            }
        };
        let spec = apply_overrides(spec, req.overrides)?;
        let record = inner.store.save_scenario(spec)?;
        Ok(Json(ScenarioCreated { id: record.id, spec: record.spec }))
    })
    .await
}

async fn list_scenarios(State(state): State<AppState>) -> ApiResult<Json<Vec<ScenarioRecord>>> {
    blocking(&state, |inner| Ok(Json(inner.store.list_scenarios()?))).await
}

async fn get_scenario(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<ScenarioRecord>> {
    let id = parse_id(&id)?;
    blocking(&state, move |inner| Ok(Json(inner.store.load_scenario(id)?))).await
}

async fn create_kcs(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let id = parse_id(&id)?;
    blocking(&state, move |inner| {
        let record = inner.store.load_scenario(id)?;
        let batch = generate_kcs(&record.spec, inner.provider.as_ref())?;
        let updated = inner.store.update_scenario(id, |r| {
            r.kcs = batch.kcs.clone();
            r.kc_warnings = batch.warnings.clone();
            r.matrix = None;
        })?;
        Ok(Json(json!({"kcs": updated.kcs, "warnings": updated.kc_warnings})))
    })
    .await
}

async fn create_matrix(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let id = parse_id(&id)?;
    blocking(&state, move |inner| {
        let record = inner.store.load_scenario(id)?;
        let matrix = generate_matrix(&record.spec, &record.kcs, inner.provider.as_ref())?;
        inner.store.update_scenario(id, |r| r.matrix = Some(matrix.clone()))?;
        Ok(Json(serde_json::to_value(&matrix).expect("matrices serialize")))
    })
    .await
}

#[derive(Deserialize)]
struct SessionRequest {
    scenario_id: Uuid,
    kc_index: usize,
    wh_type: String,
    #[serde(default)]
    expected_answer: Option<String>,
}

async fn create_session(State(state): State<AppState>, JsonBody(body): JsonBody) -> ApiResult<Json<Value>> {
    let req: SessionRequest = parse(body)?;
    let wh: WhType = req.wh_type.parse().map_err(|e: socratic_core::wh::UnknownWhType| ApiError::bad_request(e.to_string()))?;
    let session = blocking(&state, move |inner| {
        let record = inner.store.load_scenario(req.scenario_id)?;
        let matrix = record
            .matrix
            .as_ref()
            .ok_or_else(|| ApiError::new("Precondition", "generate the matrix before starting a session"))?;
        let kc = matrix
            .kcs
            .get(req.kc_index)
            .ok_or_else(|| ApiError::new("OutOfRange", format!("kc_index {} out of range", req.kc_index)))?;
        let question = match matrix.cell(req.kc_index, wh) {
            Some(q) => q.to_string(),
            None => scenario::regenerate_cell(&record.spec, kc, wh, inner.provider.as_ref())?
                .ok_or_else(|| ApiError::new("ExtractionFailed", "no valid opening question for this cell"))?,
        };
        let config = SessionConfig { max_turns: inner.max_turns, expected_answer: req.expected_answer, ..Default::default() };
        let entry = WhEntry { kc_index: req.kc_index, wh, question };
        let mut session = dialogue::start_session(&record.spec, kc, entry, config, inner.provider.as_ref())?;
        session.header.scenario_id = Some(record.id);
        inner.store.create_session(&session)?;
        Ok(session)
    })
    .await?;
    let body = json!({"session_id": session.id(), "opening_turn": session.turns[0]});
    let persisted = session.turns.len();
    let id = session.id();
    *state.claim(id)? = Some(Slot { session, persisted });
    Ok(Json(body))
}

async fn get_session(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<DialogueSession>> {
    let id = parse_id(&id)?;
    blocking(&state, move |inner| Ok(Json(inner.store.load_session(id)?))).await
}

/// Loads the session into its slot on first use.
fn ensure_loaded(inner: &Inner, slot: &mut Option<Slot>, id: Uuid) -> ApiResult<()> {
    if slot.is_none() {
        let session = inner.store.load_session(id)?;
        let persisted = session.turns.len();
        *slot = Some(Slot { session, persisted });
    }
    Ok(())
}

#[derive(Deserialize)]
struct MessageRequest {
    text: String,
}

#[derive(Serialize)]
struct Exchange {
    learner_turn: Turn,
    tutor_turn: Turn,
    session_status: dialogue::SessionStatus,
}

async fn post_message(
    State(state): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    JsonBody(body): JsonBody,
) -> ApiResult<Response> {
    let id = parse_id(&id)?;
    let req: MessageRequest = parse(body)?;
    let mut guard = state.claim(id)?;
    let exchange = blocking(&state, move |inner| {
        ensure_loaded(inner, &mut guard, id)?;
        let slot = guard.as_mut().expect("loaded above");
        let (learner_turn, tutor_turn) = dialogue::submit_response(&mut slot.session, &req.text, inner.provider.as_ref())?;
        inner.store.sync_session(&slot.session, slot.persisted)?;
        slot.persisted = slot.session.turns.len();
        Ok(Exchange { learner_turn, tutor_turn, session_status: slot.session.state.status })
    })
    .await?;

    let wants_stream = headers
        .get(header::ACCEPT)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.contains("text/event-stream"));
    if !wants_stream {
        return Ok(Json(exchange).into_response());
    }
    // The provider contract is request/response, so the finished tutor text
    // is replayed as word-sized deltas followed by the full turn.
    let mut events: Vec<Result<Event, Infallible>> = exchange
        .tutor_turn
        .text
        .split_inclusive(' ')
        .map(|chunk| Ok(Event::default().event("delta").data(json!({"text": chunk}).to_string())))
        .collect();
    events.push(Ok(Event::default().event("turn").data(serde_json::to_string(&exchange).expect("turns serialize"))));
    Ok(Sse::new(futures_util::stream::iter(events)).into_response())
}

async fn end_session(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let id = parse_id(&id)?;
    let mut guard = state.claim(id)?;
    blocking(&state, move |inner| {
        ensure_loaded(inner, &mut guard, id)?;
        let slot = guard.as_mut().expect("loaded above");
        let summary = dialogue::end_session(&mut slot.session, inner.provider.as_ref())?;
        inner.store.append_end(id, &summary)?;
        Ok(Json(json!({"summary": summary})))
    })
    .await
}

async fn create_survey(State(state): State<AppState>, JsonBody(body): JsonBody) -> ApiResult<Json<Value>> {
    let wire: SurveyWire = parse(body)?;
    let response = SurveyResponse::try_from(wire)?;
    blocking(&state, move |inner| Ok(Json(json!({"id": inner.store.save_survey(&response)?})))).await
}

async fn likert(State(state): State<AppState>) -> ApiResult<Json<survey::LikertSummary>> {
    blocking(&state, |inner| {
        let responses: Vec<SurveyResponse> = inner.store.load_surveys()?.into_iter().map(|s| s.response).collect();
        Ok(Json(survey::summarize(&responses)?))
    })
    .await
}

async fn themes(State(state): State<AppState>) -> ApiResult<Json<survey::ThemeGraph>> {
    blocking(&state, |inner| {
        let texts: Vec<OpenText> = inner
            .store
            .load_surveys()?
            .iter()
            .flat_map(|s| {
                let id = s.id.map_or_else(|| format!("row-{}", s.row), |u| u.to_string());
                OpenText::from_response(&id, &s.response)
            })
            .collect();
        let annotations = survey::annotate_themes(&texts, inner.provider.as_ref())?;
        Ok(Json(survey::build_theme_graph(&annotations)))
    })
    .await
}
