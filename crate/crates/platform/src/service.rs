//! JSON-over-HTTP service for human and scripted play.
//!
//! Humans play against an automated counterpart: a speaker session's text is
//! resolved by the rule-based listener, and a listener session interprets
//! either a stored human utterance that still needs judgments or the oracle
//! speaker's utterance. Timing is measured here, from reveal to submit.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use embref_core::agents::{
    Decode, Durations, Episode, ListenerAgent, Provenance, RuleListener, SpeakerAgent, SpeakerContext,
};
use embref_core::eval::{build_report, Report};
use embref_core::geom::Role;
use embref_core::language::{parse, ExpressionAst};
use embref_core::render::{nearest_rendered_referent, render_observation, AgentView, Observation, RenderConfig};
use embref_core::rng;
use embref_core::scenegen::Scene;
use parking_lot::Mutex;
use rand::seq::SliceRandom;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::PlatformConfig;
use crate::store::{Dataset, EpisodeLog, StoreError};

pub const MAX_IMAGE_SIDE: u32 = 4096;

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn bad(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }

    fn invalid(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, code, message)
    }

    fn conflict(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, code, message)
    }

    fn not_found(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, code, message)
    }

    fn internal(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, code, message)
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        Self::internal("store_write_failed", e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "code": self.code, "message": self.message } });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn body<T: DeserializeOwned>(bytes: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(bytes).map_err(|e| ApiError::bad("malformed_body", e.to_string()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionRole {
    Speaker,
    Listener,
}

/// What a listener session was asked to interpret.
#[derive(Clone, Debug)]
struct Prompt {
    text: String,
    ast: Option<ExpressionAst>,
    speaker_id: String,
    old_logp: Option<f64>,
    human: bool,
}

struct Reveal {
    at: Instant,
    prompt: Option<Prompt>,
}

struct Session {
    role: SessionRole,
    queue: Vec<String>,
    revealed: HashMap<String, Reveal>,
    /// Scenes submitted or being submitted.
    completed: HashSet<String>,
    episode_ids: Vec<u64>,
    successes: usize,
}

/// A human utterance waiting for listener judgments.
#[derive(Clone, Debug)]
struct Pending {
    speaker_id: String,
    text: String,
    ast: Option<ExpressionAst>,
    judged: u32,
}

struct SceneCache {
    ctx: SpeakerContext,
    listener_obs: Observation,
}

pub struct AppState {
    cfg: PlatformConfig,
    render: RenderConfig,
    dataset: Arc<Dataset>,
    log: EpisodeLog,
    sessions: Mutex<HashMap<String, Session>>,
    next_session: AtomicU64,
    pending: Mutex<BTreeMap<String, Vec<Pending>>>,
    cache: Mutex<HashMap<String, Arc<SceneCache>>>,
    speaker: SpeakerAgent,
    listener: ListenerAgent,
    epoch_ms: f64,
    started: Instant,
}

impl AppState {
    /// Pending judgments are rebuilt from the log so a restart resumes them.
    pub fn new(cfg: PlatformConfig, dataset: Dataset, log: EpisodeLog) -> Result<Arc<Self>, StoreError> {
        let render = RenderConfig::with_size(cfg.render_width, cfg.render_height);
        let mut pending: BTreeMap<String, Vec<Pending>> = BTreeMap::new();
        let episodes = log.read_all()?;
        for e in &episodes {
            if e.provenance == Provenance::Human && e.speaker_id.starts_with("human:") && !e.listener_id.starts_with("human:") {
                pending.entry(e.scene_id.clone()).or_default().push(Pending {
                    speaker_id: e.speaker_id.clone(),
                    text: e.text.clone(),
                    ast: e.ast,
                    judged: 0,
                });
            }
        }
        for e in &episodes {
            if e.listener_id.starts_with("human:") {
                if let Some(p) = pending
                    .get_mut(&e.scene_id)
                    .and_then(|v| v.iter_mut().find(|p| p.speaker_id == e.speaker_id && p.text == e.text))
                {
                    p.judged += 1;
                }
            }
        }
        for v in pending.values_mut() {
            v.retain(|p| p.judged < cfg.judgments);
        }
        Ok(Arc::new(Self {
            render,
            dataset: Arc::new(dataset),
            log,
            sessions: Mutex::new(HashMap::new()),
            next_session: AtomicU64::new(0),
            pending: Mutex::new(pending),
            cache: Mutex::new(HashMap::new()),
            speaker: SpeakerAgent::Oracle,
            listener: ListenerAgent::rule_based(RuleListener::default()),
            epoch_ms: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64() * 1e3).unwrap_or(0.0),
            started: Instant::now(),
            cfg,
        }))
    }

    /// Wall-clock milliseconds that never run backwards within a process.
    fn now_ms(&self, at: Instant) -> f64 {
        self.epoch_ms + at.duration_since(self.started).as_secs_f64() * 1e3
    }

    fn scene(&self, id: &str) -> ApiResult<&Scene> {
        self.dataset
            .scene(id)
            .ok_or_else(|| ApiError::not_found("scene_not_found", format!("no scene {id}")))
    }

    fn cached(&self, scene: &Scene) -> Arc<SceneCache> {
        if let Some(c) = self.cache.lock().get(&scene.scene_id) {
            return c.clone();
        }
        let built = Arc::new(SceneCache {
            ctx: SpeakerContext::new(scene),
            listener_obs: render_observation(scene, Role::Listener, &self.render),
        });
        self.cache.lock().entry(scene.scene_id.clone()).or_insert(built).clone()
    }

    fn listener_view(&self, scene: &Scene) -> AgentView {
        self.cached(scene).ctx.listener_view.clone()
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/scenes/{id}", get(get_scene))
        .route("/api/scenes/{id}/observation", get(get_observation))
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}", get(get_session))
        .route("/api/sessions/{id}/reveal", post(reveal))
        .route("/api/sessions/{id}/speak", post(speak))
        .route("/api/sessions/{id}/select", post(select))
        .route("/api/report", get(report))
        .fallback(|| async { ApiError::not_found("not_found", "no such endpoint") })
        .with_state(state)
}

/// Serves until the listener fails.
pub async fn run(state: Arc<AppState>, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal("worker_failed", e.to_string()))
}

/// The scene without its target, which a listener must never see.
async fn get_scene(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let mut v = serde_json::to_value(st.scene(&id)?).expect("scene serializes");
    if let Some(o) = v.as_object_mut() {
        o.remove("target_index");
    }
    Ok(Json(v))
}

fn seed_param(q: &HashMap<String, String>) -> ApiResult<Option<u64>> {
    q.get("seed")
        .map(|s| s.parse::<u64>().map_err(|_| ApiError::bad("invalid_seed", format!("seed `{s}` is not an unsigned integer"))))
        .transpose()
}

async fn get_observation(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Response> {
    let scene = st.scene(&id)?.clone();
    let role = match q.get("role").map(String::as_str) {
        Some("speaker") => Role::Speaker,
        Some("listener") | None => Role::Listener,
        Some(other) => return Err(ApiError::bad("invalid_role", format!("role `{other}` is not speaker or listener"))),
    };
    let dim = |key: &str, default: u32| -> ApiResult<u32> {
        match q.get(key) {
            None => Ok(default),
            Some(s) => match s.parse::<u32>() {
                Ok(v) if (1..=MAX_IMAGE_SIDE).contains(&v) => Ok(v),
                _ => Err(ApiError::invalid("invalid_size", format!("{key} must be an integer in 1..={MAX_IMAGE_SIDE}"))),
            },
        }
    };
    let cfg = RenderConfig::with_size(dim("w", st.cfg.render_width)?, dim("h", st.cfg.render_height)?);
    cfg.validate().map_err(|e| ApiError::invalid("invalid_size", e.to_string()))?;
    let png = blocking(move || render_observation(&scene, role, &cfg).to_png())
        .await?
        .map_err(|e| ApiError::internal("render_failed", e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    role: SessionRole,
    #[serde(default)]
    seed: Option<u64>,
}

async fn create_session(State(st): State<Arc<AppState>>, bytes: Bytes) -> ApiResult<Json<Value>> {
    let req: CreateSession = body(&bytes)?;
    let n = st.next_session.fetch_add(1, Ordering::SeqCst);
    let mut queue: Vec<String> = st
        .dataset
        .split_scenes(&st.cfg.session_split)
        .iter()
        .map(|s| s.scene_id.clone())
        .collect();
    if queue.is_empty() {
        return Err(ApiError::conflict("no_scenes", "the dataset has no scenes to assign"));
    }
    let seed = req.seed.unwrap_or_else(|| rng::derive_indexed(st.cfg.seed, "session", n));
    queue.shuffle(&mut rng::stream(seed, "session-queue"));
    queue.truncate(st.cfg.session_scenes.max(1));
    let id = format!("session-{n}");
    st.sessions.lock().insert(
        id.clone(),
        Session {
            role: req.role,
            queue: queue.clone(),
            revealed: HashMap::new(),
            completed: HashSet::new(),
            episode_ids: Vec::new(),
            successes: 0,
        },
    );
    Ok(Json(json!({ "session_id": id, "role": req.role, "scene_queue": queue })))
}

async fn get_session(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let sessions = st.sessions.lock();
    let s = sessions
        .get(&id)
        .ok_or_else(|| ApiError::not_found("session_not_found", format!("no session {id}")))?;
    let n = s.episode_ids.len();
    Ok(Json(json!({
        "session_id": id,
        "role": s.role,
        "scene_queue": s.queue,
        "episode_ids": s.episode_ids,
        "accuracy": (n > 0).then(|| s.successes as f64 / n as f64),
    })))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RevealRequest {
    scene_id: String,
}

fn check_assigned(s: &Session, id: &str, scene_id: &str) -> ApiResult<()> {
    if !s.queue.iter().any(|q| q == scene_id) {
        return Err(ApiError::conflict("scene_not_assigned", format!("scene {scene_id} is not queued for {id}")));
    }
    if s.completed.contains(scene_id) {
        return Err(ApiError::conflict("already_submitted", format!("scene {scene_id} was already submitted")));
    }
    Ok(())
}

async fn reveal(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
    bytes: Bytes,
) -> ApiResult<Json<Value>> {
    let req: RevealRequest = body(&bytes)?;
    let seed = seed_param(&q)?;
    let role = {
        let sessions = st.sessions.lock();
        let s = sessions
            .get(&id)
            .ok_or_else(|| ApiError::not_found("session_not_found", format!("no session {id}")))?;
        check_assigned(s, &id, &req.scene_id)?;
        if s.revealed.contains_key(&req.scene_id) {
            return Err(ApiError::conflict("already_revealed", format!("scene {} was already revealed", req.scene_id)));
        }
        s.role
    };
    let scene = st.scene(&req.scene_id)?.clone();
    let prompt = match role {
        SessionRole::Speaker => None,
        SessionRole::Listener => Some(choose_prompt(&st, &scene, seed).await?),
    };
    let at = Instant::now();
    {
        let mut sessions = st.sessions.lock();
        let s = sessions
            .get_mut(&id)
            .ok_or_else(|| ApiError::not_found("session_not_found", format!("no session {id}")))?;
        if s.revealed.contains_key(&req.scene_id) {
            return Err(ApiError::conflict("already_revealed", format!("scene {} was already revealed", req.scene_id)));
        }
        s.revealed.insert(req.scene_id.clone(), Reveal { at, prompt: prompt.clone() });
    }
    let view = match role {
        SessionRole::Speaker => "speaker",
        SessionRole::Listener => "listener",
    };
    let mut out = json!({
        "scene_id": req.scene_id,
        "observation_url": format!(
            "/api/scenes/{}/observation?role={view}&w={}&h={}",
            req.scene_id, st.cfg.render_width, st.cfg.render_height
        ),
        "t_reveal": st.now_ms(at),
    });
    if let Some(p) = prompt {
        out["text"] = Value::String(p.text);
    }
    Ok(Json(out))
}

/// A stored human utterance that still needs judgments, else the oracle
/// speaker's utterance.
async fn choose_prompt(st: &Arc<AppState>, scene: &Scene, seed: Option<u64>) -> ApiResult<Prompt> {
    {
        let pending = st.pending.lock();
        if let Some(p) = pending.get(&scene.scene_id).and_then(|v| v.iter().min_by_key(|p| p.judged)) {
            return Ok(Prompt {
                text: p.text.clone(),
                ast: p.ast,
                speaker_id: p.speaker_id.clone(),
                old_logp: None,
                human: true,
            });
        }
    }
    let st2 = st.clone();
    let scene = scene.clone();
    blocking(move || {
        let cache = st2.cached(&scene);
        let decode = seed.map(Decode::Sample).unwrap_or(Decode::Greedy);
        st2.speaker.speak(&scene, &cache.ctx, scene.target_index, decode).map(|s| Prompt {
            text: s.utterance.text,
            ast: s.utterance.ast,
            speaker_id: st2.speaker.id(),
            old_logp: s.old_logp,
            human: false,
        })
    })
    .await?
    .map_err(|e| ApiError::internal("agent_failed", e.to_string()))
}

/// Claims a revealed, unsubmitted scene for submission and returns the
/// server-side duration and the reveal's prompt.
fn claim(st: &AppState, id: &str, scene_id: &str, role: SessionRole) -> ApiResult<(f64, f64, Option<Prompt>)> {
    let now = Instant::now();
    let mut sessions = st.sessions.lock();
    let s = sessions
        .get_mut(id)
        .ok_or_else(|| ApiError::not_found("session_not_found", format!("no session {id}")))?;
    if s.role != role {
        return Err(ApiError::conflict("wrong_role", format!("session {id} is not a {role:?} session")));
    }
    check_assigned(s, id, scene_id)?;
    let r = s
        .revealed
        .get(scene_id)
        .ok_or_else(|| ApiError::conflict("not_revealed", format!("scene {scene_id} must be revealed first")))?;
    let elapsed = now.duration_since(r.at).as_secs_f64() * 1e3;
    let prompt = r.prompt.clone();
    s.completed.insert(scene_id.to_string());
    Ok((elapsed, st.now_ms(now), prompt))
}

fn release(st: &AppState, id: &str, scene_id: &str) {
    if let Some(s) = st.sessions.lock().get_mut(id) {
        s.completed.remove(scene_id);
    }
}

fn record(st: &AppState, id: &str, ep: &Episode) {
    if let Some(s) = st.sessions.lock().get_mut(id) {
        s.episode_ids.push(ep.episode_id);
        s.successes += ep.success as usize;
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SpeakRequest {
    scene_id: String,
    text: String,
}

async fn speak(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
    bytes: Bytes,
) -> ApiResult<Json<Value>> {
    let req: SpeakRequest = body(&bytes)?;
    let seed = seed_param(&q)?.unwrap_or(0);
    if req.text.trim().is_empty() {
        return Err(ApiError::invalid("empty_text", "the referring expression is empty"));
    }
    let scene = st.scene(&req.scene_id)?.clone();
    let (duration, t_submit, _) = claim(&st, &id, &req.scene_id, SessionRole::Speaker)?;
    let st2 = st.clone();
    let sid = id.clone();
    let text = req.text.clone();
    let res = blocking(move || -> ApiResult<Episode> {
        let cache = st2.cached(&scene);
        let sel = st2
            .listener
            .select(&scene, &cache.ctx.listener_view, &text, seed)
            .map_err(|e| ApiError::internal("agent_failed", e.to_string()))?;
        let ast = parse(&text).ok().map(|p| p.ast);
        let ep = Episode {
            episode_id: 0,
            scene_id: scene.scene_id.clone(),
            speaker_id: format!("human:{sid}"),
            listener_id: st2.listener.id(),
            text,
            ast,
            old_logp: None,
            chosen_index: sel.chosen,
            target_index: scene.target_index,
            success: (sel.chosen == scene.target_index) as u8,
            durations_ms: Durations {
                speak: Some(duration),
                select: None,
            },
            provenance: Provenance::Human,
            mode: Some(scene.mode),
            replicate: 0,
            parse: sel.parse,
            listener_sees_speaker: Some(cache.ctx.listener_view.partner_visible),
            session_id: Some(sid),
        };
        Ok(st2.log.append(ep)?)
    })
    .await
    .and_then(|r| r);
    let ep = match res {
        Ok(ep) => ep,
        Err(e) => {
            release(&st, &id, &req.scene_id);
            return Err(e);
        }
    };
    record(&st, &id, &ep);
    st.pending.lock().entry(ep.scene_id.clone()).or_default().push(Pending {
        speaker_id: ep.speaker_id.clone(),
        text: ep.text.clone(),
        ast: ep.ast,
        judged: 0,
    });
    Ok(Json(json!({
        "episode_id": ep.episode_id,
        "chosen_index": ep.chosen_index,
        "success": ep.success,
        "duration_ms": duration,
        "t_submit": t_submit,
    })))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Click {
    u: f64,
    v: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SelectRequest {
    scene_id: String,
    /// Normalized image coordinates in [0, 1], origin at the top left.
    click: Click,
}

async fn select(State(st): State<Arc<AppState>>, Path(id): Path<String>, bytes: Bytes) -> ApiResult<Json<Value>> {
    let req: SelectRequest = body(&bytes)?;
    let (u, v) = (req.click.u, req.click.v);
    if !(0.0..=1.0).contains(&u) || !(0.0..=1.0).contains(&v) {
        return Err(ApiError::invalid("click_out_of_bounds", "click coordinates must lie in [0, 1]"));
    }
    let scene = st.scene(&req.scene_id)?.clone();
    let (duration, t_submit, prompt) = claim(&st, &id, &req.scene_id, SessionRole::Listener)?;
    let prompt = prompt.expect("listener reveals carry a prompt");
    let st2 = st.clone();
    let sid = id.clone();
    let p2 = prompt.clone();
    let res = blocking(move || -> ApiResult<Episode> {
        let cache = st2.cached(&scene);
        let obs = &cache.listener_obs;
        let px = (u * obs.width as f64, v * obs.height as f64);
        let chosen =
            nearest_rendered_referent(obs, px).map_err(|e| ApiError::internal("no_visible_referents", e.to_string()))?;
        let ep = Episode {
            episode_id: 0,
            scene_id: scene.scene_id.clone(),
            speaker_id: p2.speaker_id,
            listener_id: format!("human:{sid}"),
            parse: parse(&p2.text).ok().map(|p| p.confidence),
            text: p2.text,
            ast: p2.ast,
            old_logp: p2.old_logp,
            chosen_index: chosen,
            target_index: scene.target_index,
            success: (chosen == scene.target_index) as u8,
            durations_ms: Durations {
                speak: None,
                select: Some(duration),
            },
            provenance: Provenance::Human,
            mode: Some(scene.mode),
            replicate: 0,
            listener_sees_speaker: Some(cache.ctx.listener_view.partner_visible),
            session_id: Some(sid),
        };
        Ok(st2.log.append(ep)?)
    })
    .await
    .and_then(|r| r);
    let ep = match res {
        Ok(ep) => ep,
        Err(e) => {
            release(&st, &id, &req.scene_id);
            return Err(e);
        }
    };
    record(&st, &id, &ep);
    if prompt.human {
        let mut pending = st.pending.lock();
        if let Some(list) = pending.get_mut(&ep.scene_id) {
            if let Some(p) = list.iter_mut().find(|p| p.speaker_id == prompt.speaker_id && p.text == prompt.text) {
                p.judged += 1;
            }
            let limit = st.cfg.judgments;
            list.retain(|p| p.judged < limit);
        }
    }
    Ok(Json(json!({
        "episode_id": ep.episode_id,
        "chosen_index": ep.chosen_index,
        "duration_ms": duration,
        "t_submit": t_submit,
    })))
}

/// Report over everything in the episode log.
pub fn report_from_store(dataset: &Dataset, episodes: &[Episode], view: impl Fn(&Scene) -> AgentView) -> Report {
    let mut scenes = HashMap::new();
    let mut views = HashMap::new();
    for e in episodes {
        if scenes.contains_key(&e.scene_id) {
            continue;
        }
        if let Some(s) = dataset.scene(&e.scene_id) {
            views.insert(s.scene_id.clone(), view(s));
            scenes.insert(s.scene_id.clone(), s.clone());
        }
    }
    build_report(episodes, &scenes, &views, Vec::new())
}

async fn report(State(st): State<Arc<AppState>>) -> ApiResult<Json<Report>> {
    let st2 = st.clone();
    let r = blocking(move || -> ApiResult<Report> {
        let episodes = st2.log.read_all().map_err(|e| ApiError::internal("store_read_failed", e.to_string()))?;
        Ok(report_from_store(&st2.dataset, &episodes, |s| st2.listener_view(s)))
    })
    .await??;
    Ok(Json(r))
}
