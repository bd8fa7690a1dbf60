use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Multipart, Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::mpsc;
use tower_http::services::ServeDir;
use visagent_core::agent::{run_inference, ChatOptions, InferenceContext, LlmError, Message, Role, RunMeta, Transcript};
use visagent_core::domain::{DatasetKind, GeoTag, Label, LabeledImage, Prediction, DEFAULT_ZOOM};
use visagent_core::embedding::EmbeddingCache;
use visagent_core::eval::system_clock;
use visagent_core::raster::Raster;

use crate::config::ServiceConfig;
use crate::engine::{Backends, Engine};
use crate::model::{FollowUpSession, Job, JobResult, JobStatus};
use crate::store::{Store, StoreError};

const DB_FILE: &str = "visagent.redb";
const MAX_UPLOAD: usize = 32 << 20;

const CHAT_PREAMBLE: &str = "You are assisting a scientist who is reviewing an automated image classification. \
The record of that classification follows, with every line of the original conversation quoted. Answer the \
scientist's questions about how the decision was reached, citing the tool results and the retrieved examples. \
If the scientist gives feedback, acknowledge it and say how it bears on the decision.";

/// Shared service state.
pub struct App {
    config: ServiceConfig,
    store: Store,
    engines: HashMap<DatasetKind, Engine>,
    backends: Backends,
    queue: mpsc::UnboundedSender<String>,
    sessions: Mutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>,
}

impl App {
    /// Opens the store, builds one engine per dataset, re-queues interrupted
    /// jobs and starts the workers. Must run inside a Tokio runtime.
    pub fn open(config: ServiceConfig, backends: Backends) -> Result<Arc<Self>, String> {
        config.validate()?;
        std::fs::create_dir_all(&config.data_dir)
            .map_err(|e| format!("cannot create {}: {e}", config.data_dir.display()))?;
        let store = Store::open(&config.data_dir.join(DB_FILE)).map_err(|e| e.to_string())?;
        let cache = EmbeddingCache::open(config.data_dir.join("cache"), &backends.embedder.id()).map_err(|e| e.to_string())?;
        let mut engines = HashMap::new();
        for setup in &config.datasets {
            let engine = Engine::build(setup, &backends, Some(&cache))
                .map_err(|e| format!("dataset {}: {e}", setup.kind))?;
            engines.insert(setup.kind, engine);
        }

        let (tx, rx) = mpsc::unbounded_channel();
        let app = Arc::new(Self {
            config,
            store,
            engines,
            backends,
            queue: tx,
            sessions: Mutex::new(HashMap::new()),
        });

        let mut pending = Vec::new();
        for mut job in app.store.jobs().map_err(|e| e.to_string())? {
            if job.status == JobStatus::Running {
                job.requeue_after_restart().map_err(|e| e.to_string())?;
                app.store.put_job(&job).map_err(|e| e.to_string())?;
            }
            if job.status == JobStatus::Queued {
                pending.push((job.submitted_at.clone(), job.job_id.clone()));
            }
        }
        pending.sort();
        for (_, id) in pending {
            let _ = app.queue.send(id);
        }

        let rx = Arc::new(tokio::sync::Mutex::new(rx));
        for _ in 0..app.config.workers {
            tokio::spawn(worker(Arc::clone(&app), Arc::clone(&rx)));
        }
        Ok(app)
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    fn infer(&self, job: &Job, now: &str) -> Result<(Prediction, Transcript), String> {
        let engine = self
            .engines
            .get(&job.dataset_kind)
            .ok_or_else(|| format!("dataset {} is not configured", job.dataset_kind))?;
        let bytes = self
            .store
            .upload(&job.image_ref)
            .map_err(|e| e.to_string())?
            .ok_or("upload missing")?;
        let pixels = Raster::decode(&bytes).map_err(|e| e.to_string())?;
        let test = LabeledImage {
            id: job.job_id.clone(),
            pixels,
            // unknown; the loop never reads it
            label: Label::Negative,
            geo: job.geo,
            source_path: job.image_ref.clone(),
        };
        let client = self.backends.llm.client_for(&job.job_id);
        let ctx = InferenceContext {
            kind: engine.kind,
            store: Some(&engine.store),
            embedder: self.backends.embedder.as_ref(),
            examples: &engine.manifest,
            registry: &engine.registry,
            llm: client.as_ref(),
        };
        let meta = RunMeta {
            conversation_id: job.job_id.clone(),
            created_at: now.to_string(),
        };
        run_inference(&test, &ctx, &self.config.agent, meta).map_err(|e| e.to_string())
    }

    /// Runs one queued job to a terminal state.
    pub fn run_job(&self, id: &str) -> Result<(), StoreError> {
        let Some(mut job) = self.store.job(id)? else {
            return Ok(());
        };
        if job.start(system_clock()).is_err() {
            return Ok(());
        }
        self.store.put_job(&job)?;
        let now = system_clock();
        match self.infer(&job, &now) {
            Ok((prediction, transcript)) => {
                let tid = transcript.conversation_id.clone();
                let url = |id: &Option<String>| id.as_ref().map(|i| format!("/examples/{i}"));
                let result = JobResult {
                    prediction,
                    transcript_url: format!("/transcripts/{tid}"),
                    transcript_id: tid.clone(),
                    visrag_pos_url: url(&transcript.visrag_pos_id),
                    visrag_neg_url: url(&transcript.visrag_neg_id),
                    visrag_pos_id: transcript.visrag_pos_id.clone(),
                    visrag_neg_id: transcript.visrag_neg_id.clone(),
                    n_tool_calls: transcript.tool_calls.len(),
                };
                job.finish(result, system_clock()).expect("job is running");
                self.store.complete(&job, &tid, &transcript.to_json())
            }
            Err(msg) => {
                job.fail(msg, system_clock()).expect("job is running");
                self.store.put_job(&job)
            }
        }
    }

    fn mark_failed(&self, id: &str, msg: String) {
        if let Ok(Some(mut job)) = self.store.job(id) {
            if job.fail(msg, system_clock()).is_ok() {
                let _ = self.store.put_job(&job);
            }
        }
    }

    fn session_lock(&self, id: &str) -> Arc<tokio::sync::Mutex<()>> {
        let mut map = self.sessions.lock().unwrap();
        Arc::clone(map.entry(id.to_string()).or_default())
    }
}

async fn worker(app: Arc<App>, rx: Arc<tokio::sync::Mutex<mpsc::UnboundedReceiver<String>>>) {
    loop {
        let next = rx.lock().await.recv().await;
        let Some(id) = next else { break };
        let a = Arc::clone(&app);
        let job_id = id.clone();
        match tokio::task::spawn_blocking(move || a.run_job(&job_id)).await {
            Ok(Ok(())) => {}
            Ok(Err(e)) => app.mark_failed(&id, e.to_string()),
            Err(e) => app.mark_failed(&id, format!("worker crashed: {e}")),
        }
    }
}

pub struct ApiError {
    status: StatusCode,
    message: String,
    field: Option<&'static str>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
            field: None,
        }
    }

    fn field(field: &'static str, message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            message: message.into(),
            field: Some(field),
        }
    }

    fn not_found(what: &str, id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("{what} `{id}` not found"))
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({"error": self.message});
        if let Some(f) = self.field {
            body["field"] = json!(f);
        }
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse_coord(field: &'static str, text: &str) -> ApiResult<f64> {
    text.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| ApiError::field(field, format!("{field} must be a number")))
}

async fn classify(State(app): State<Arc<App>>, mut form: Multipart) -> ApiResult<(StatusCode, Json<Value>)> {
    let mut image: Option<Bytes> = None;
    let mut fields: HashMap<String, String> = HashMap::new();
    while let Some(field) = form
        .next_field()
        .await
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("malformed form: {e}")))?
    {
        let name = field.name().unwrap_or_default().to_string();
        let data = field
            .bytes()
            .await
            .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("malformed field `{name}`: {e}")))?;
        if name == "image" {
            image = Some(data);
        } else {
            fields.insert(name, String::from_utf8_lossy(&data).into_owned());
        }
    }

    let kind_text = fields
        .get("dataset_kind")
        .ok_or_else(|| ApiError::field("dataset_kind", "dataset_kind is required"))?;
    let kind: DatasetKind = kind_text
        .trim()
        .parse()
        .map_err(|_| ApiError::field("dataset_kind", format!("unknown dataset kind `{kind_text}`")))?;
    if !app.engines.contains_key(&kind) {
        return Err(ApiError::field("dataset_kind", format!("dataset {kind} is not configured on this server")));
    }
    let image = image
        .filter(|b| !b.is_empty())
        .ok_or_else(|| ApiError::field("image", "an image file is required"))?;
    Raster::decode(&image).map_err(|e| ApiError::field("image", format!("image does not decode: {e}")))?;

    let lat = fields.get("lat").filter(|s| !s.trim().is_empty());
    let lon = fields.get("lon").filter(|s| !s.trim().is_empty());
    let geo = match (lat, lon) {
        (Some(lat), Some(lon)) => {
            let zoom = match fields.get("zoom").filter(|s| !s.trim().is_empty()) {
                Some(z) => z
                    .trim()
                    .parse::<u8>()
                    .map_err(|_| ApiError::field("zoom", "zoom must be an integer between 0 and 21"))?,
                None => DEFAULT_ZOOM,
            };
            let g = GeoTag {
                lat: parse_coord("lat", lat)?,
                lon: parse_coord("lon", lon)?,
                zoom,
            };
            g.validate().map_err(|m| ApiError::field(if m.starts_with("lat") { "lat" } else { "lon" }, m))?;
            Some(g)
        }
        (None, None) => None,
        (None, _) => return Err(ApiError::field("lat", "lat is required when lon is given")),
        (_, None) => return Err(ApiError::field("lon", "lon is required when lat is given")),
    };
    if kind.is_geospatial() && geo.is_none() {
        return Err(ApiError::field("lat", format!("{kind} images need lat and lon")));
    }

    let a = Arc::clone(&app);
    let health = tokio::task::spawn_blocking(move || a.backends.llm.client_for("health").health())
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    if let Err(e) = health {
        return Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, format!("language model unavailable: {e}")));
    }

    let job = Job::new(uuid::Uuid::new_v4().to_string(), kind, geo, system_clock());
    app.store.submit(&job, &image)?;
    let _ = app.queue.send(job.job_id.clone());
    Ok((StatusCode::ACCEPTED, Json(json!({"job_id": job.job_id}))))
}

async fn get_job(State(app): State<Arc<App>>, Path(id): Path<String>) -> ApiResult<Json<Job>> {
    app.store.job(&id)?.map(Json).ok_or_else(|| ApiError::not_found("job", &id))
}

fn json_response(text: String) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], text).into_response()
}

async fn get_transcript(State(app): State<Arc<App>>, Path(id): Path<String>) -> ApiResult<Response> {
    let text = app.store.transcript(&id)?.ok_or_else(|| ApiError::not_found("transcript", &id))?;
    Ok(json_response(text))
}

async fn get_chat(State(app): State<Arc<App>>, Path(id): Path<String>) -> ApiResult<Json<FollowUpSession>> {
    if app.store.transcript(&id)?.is_none() {
        return Err(ApiError::not_found("transcript", &id));
    }
    Ok(Json(app.store.session(&id)?.unwrap_or(FollowUpSession {
        transcript_id: id,
        messages: Vec::new(),
    })))
}

#[derive(Deserialize)]
struct ChatRequest {
    text: String,
}

/// Plain-text rendering of a transcript for use as chat context.
pub fn transcript_context(t: &Transcript) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "Classification record {} for image {} ({} dataset, model {}).",
        t.conversation_id, t.test_image_id, t.dataset_kind, t.model_id
    );
    match t.final_prediction {
        Some(p) if p.inconclusive => out.push_str("Final prediction: inconclusive.\n"),
        Some(p) => {
            let _ = writeln!(out, "Final prediction: {}, confidence {:.2}.", p.label.word(), p.confidence);
        }
        None => out.push_str("Final prediction: none.\n"),
    }
    if let (Some(pid), Some(nid)) = (&t.visrag_pos_id, &t.visrag_neg_id) {
        let _ = writeln!(
            out,
            "Retrieved examples: positive {pid} (similarity {:.4}), negative {nid} (similarity {:.4}).",
            t.visrag_pos_similarity.unwrap_or(f64::NAN),
            t.visrag_neg_similarity.unwrap_or(f64::NAN)
        );
    }
    out.push_str("Conversation:\n");
    for m in &t.messages {
        let who = match (m.role, &m.tool) {
            (Role::System, _) => "system".to_string(),
            (Role::Assistant, _) => "assistant".to_string(),
            (Role::User, Some(tool)) => format!("tool result from {tool}"),
            (Role::User, None) => "user".to_string(),
        };
        let _ = writeln!(out, "[{who}]");
        for line in m.text.lines() {
            let _ = writeln!(out, "> {line}");
        }
        for a in &m.images {
            let _ = writeln!(out, "> (image: {})", a.caption);
        }
    }
    out
}

async fn chat(
    State(app): State<Arc<App>>,
    Path(id): Path<String>,
    Json(req): Json<ChatRequest>,
) -> ApiResult<Json<Value>> {
    if req.text.trim().is_empty() {
        return Err(ApiError::field("text", "text must not be empty"));
    }
    let lock = app.session_lock(&id);
    let _guard = lock.lock().await;

    let raw = app.store.transcript(&id)?.ok_or_else(|| ApiError::not_found("transcript", &id))?;
    let transcript = Transcript::from_json(&raw).map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    let mut session = app.store.session(&id)?.unwrap_or(FollowUpSession {
        transcript_id: id.clone(),
        messages: Vec::new(),
    });

    let mut system = Message::system(format!("{CHAT_PREAMBLE}\n\n{}", transcript_context(&transcript)));
    if let Some(test) = transcript.messages.first().and_then(|m| m.images.first()) {
        system.images.push(test.clone());
    }
    let mut conversation = vec![system];
    conversation.extend(session.messages.iter().cloned());
    conversation.push(Message::user(req.text.clone()));

    let client = app.backends.llm.client_for(&id);
    let opts = ChatOptions {
        temperature: app.config.agent.temperature,
        seed: app.config.agent.seed,
    };
    let reply = tokio::task::spawn_blocking(move || client.chat(&conversation, &opts))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(|e| match e {
            LlmError::Unavailable { .. } => ApiError::new(StatusCode::SERVICE_UNAVAILABLE, e.to_string()),
            other => ApiError::new(StatusCode::BAD_GATEWAY, other.to_string()),
        })?;

    session.messages.push(Message::user(req.text));
    session.messages.push(Message::assistant(reply.clone()));
    app.store.put_session(&session)?;
    Ok(Json(json!({"reply": reply, "follow_ups": session.messages.len()})))
}

async fn example(State(app): State<Arc<App>>, Path(id): Path<String>) -> ApiResult<Response> {
    let (bytes, path) = app
        .engines
        .values()
        .find_map(|e| e.example_bytes(&id))
        .ok_or_else(|| ApiError::not_found("example image", &id))?;
    let lower = path.to_ascii_lowercase();
    let mime = if lower.ends_with(".png") {
        "image/png"
    } else if lower.ends_with(".jpg") || lower.ends_with(".jpeg") {
        "image/jpeg"
    } else {
        "application/octet-stream"
    };
    Ok(([(header::CONTENT_TYPE, mime)], bytes).into_response())
}

async fn healthz(State(app): State<Arc<App>>) -> Json<Value> {
    let a = Arc::clone(&app);
    let (embedding, lmm, tiles) = tokio::task::spawn_blocking(move || {
        let status = |ok: bool| if ok { "ok" } else { "unavailable" };
        (
            status(a.backends.embedder.health().is_ok()),
            status(a.backends.llm.client_for("health").health().is_ok()),
            match &a.backends.tiles {
                Some(t) => status(t.health().is_ok()),
                None => "not_configured",
            },
        )
    })
    .await
    .unwrap_or(("unavailable", "unavailable", "unavailable"));
    let degraded = [embedding, lmm, tiles].contains(&"unavailable");
    Json(json!({
        "status": if degraded { "degraded" } else { "ok" },
        "components": {"embedding": embedding, "lmm": lmm, "tiles": tiles},
    }))
}

pub fn router(app: Arc<App>) -> Router {
    let static_dir = app.config.static_dir.clone();
    let r = Router::new()
        .route("/classify", post(classify))
        .route("/jobs/{id}", get(get_job))
        .route("/transcripts/{id}", get(get_transcript))
        .route("/transcripts/{id}/chat", get(get_chat).post(chat))
        .route("/examples/{id}", get(example))
        .route("/healthz", get(healthz))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD))
        .with_state(app);
    match static_dir {
        Some(dir) => r.fallback_service(ServeDir::new(dir)),
        None => r,
    }
}
