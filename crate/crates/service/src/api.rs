//! `/v1` routes.

use std::collections::{BTreeSet, HashMap};
use std::sync::{Arc, Mutex, MutexGuard};

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine as _;
use pilar_core::domain::validate_profile;
use pilar_core::engine::DetectionResult;
use pilar_core::explanation::RecommendationSnapshot;
use pilar_core::vocab::Normalized;
use pilar_core::{Engine, Explanation, Mode, ProfileDraft, UserProfile, Violation};
use serde::{Deserialize, Serialize};

use crate::error::{ApiError, JsonBody};
use crate::persist::Store;
use crate::state::{Event, HistoryEntry, Session};

type ApiResult<T> = Result<T, ApiError>;

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    engine: Arc<Engine>,
    store: Mutex<Store>,
    session_locks: Mutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>,
}

impl AppState {
    pub fn new(engine: Arc<Engine>, store: Store) -> Self {
        Self { inner: Arc::new(Inner { engine, store: Mutex::new(store), session_locks: Mutex::new(HashMap::new()) }) }
    }

    pub fn engine(&self) -> &Arc<Engine> {
        &self.inner.engine
    }

    pub fn store(&self) -> MutexGuard<'_, Store> {
        self.inner.store.lock().expect("store lock poisoned")
    }

    fn commit(&self, event: Event) -> ApiResult<u64> {
        Ok(self.store().commit(event, &self.inner.engine)?)
    }

    /// Serializes requests within one session. Fails for unknown sessions.
    async fn lock_session(&self, id: &str) -> ApiResult<tokio::sync::OwnedMutexGuard<()>> {
        self.store().state.session(id)?;
        let lock =
            self.inner.session_locks.lock().expect("lock table poisoned").entry(id.to_string()).or_default().clone();
        Ok(lock.lock_owned().await)
    }
}

pub fn router(state: AppState) -> Router {
    let v1 = Router::new()
        .route("/health", get(health))
        .route("/profiles", post(create_profile))
        .route("/profiles/{id}", get(get_profile).put(put_profile))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/detect", post(detect))
        .route("/sessions/{id}/recommend", post(recommend))
        .route("/sessions/{id}/explain", post(explain))
        .route("/sessions/{id}/history", get(history));
    Router::new().nest("/v1", v1).with_state(state)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(format!("worker failed: {e}")))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub recipes: usize,
    pub strategies: Vec<String>,
    pub llm: String,
    pub last_seq: u64,
}

async fn health(State(app): State<AppState>) -> Json<Health> {
    let engine = app.engine();
    Json(Health {
        status: "ok".into(),
        recipes: engine.corpus().len(),
        strategies: engine.registry().names().into_iter().map(String::from).collect(),
        llm: engine.llm_name().into(),
        last_seq: app.store().state.last_seq,
    })
}

fn validated(app: &AppState, draft: &ProfileDraft) -> ApiResult<UserProfile> {
    validate_profile(draft, app.engine().vocab()).map_err(ApiError::validation)
}

async fn create_profile(
    State(app): State<AppState>,
    JsonBody(mut draft): JsonBody<ProfileDraft>,
) -> ApiResult<(StatusCode, Json<UserProfile>)> {
    let mut store = app.store();
    if draft.id.trim().is_empty() {
        draft.id = format!("p{}", store.log.next_seq());
    }
    if store.state.profiles.contains_key(&draft.id) {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "conflict",
            format!("profile {} already exists; use PUT to update it", draft.id),
        ));
    }
    let profile = validated(&app, &draft)?;
    store.commit(Event::ProfileUpsert { profile: profile.clone() }, app.engine())?;
    Ok((StatusCode::CREATED, Json(profile)))
}

async fn get_profile(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<UserProfile>> {
    app.store()
        .state
        .profiles
        .get(&id)
        .cloned()
        .map(Json)
        .ok_or_else(|| ApiError::not_found(format!("unknown profile {id}")))
}

async fn put_profile(
    State(app): State<AppState>,
    Path(id): Path<String>,
    JsonBody(mut draft): JsonBody<ProfileDraft>,
) -> ApiResult<Json<UserProfile>> {
    if !draft.id.is_empty() && draft.id != id {
        return Err(ApiError::bad_request(format!("body id {} does not match path id {id}", draft.id)));
    }
    draft.id = id;
    let profile = validated(&app, &draft)?;
    app.commit(Event::ProfileUpsert { profile: profile.clone() })?;
    Ok(Json(profile))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CreateSession {
    pub profile_id: String,
}

async fn create_session(
    State(app): State<AppState>,
    JsonBody(req): JsonBody<CreateSession>,
) -> ApiResult<(StatusCode, Json<Session>)> {
    let mut store = app.store();
    let session_id = format!("s{}", store.log.next_seq());
    store.commit(Event::SessionCreate { session_id: session_id.clone(), profile_id: req.profile_id }, app.engine())?;
    Ok((StatusCode::CREATED, Json(store.state.sessions[&session_id].clone())))
}

async fn get_session(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Session>> {
    Ok(Json(app.store().state.session(&id)?.clone()))
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct ImageInput {
    #[serde(default)]
    pub reference: String,
    pub data_base64: String,
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct DetectRequest {
    #[serde(default)]
    pub fixture_id: Option<String>,
    #[serde(default)]
    pub image: Option<ImageInput>,
    #[serde(default)]
    pub threshold: Option<f64>,
}

async fn detect(
    State(app): State<AppState>,
    Path(id): Path<String>,
    JsonBody(req): JsonBody<DetectRequest>,
) -> ApiResult<Json<DetectionResult>> {
    let _guard = app.lock_session(&id).await?;
    let engine = app.engine().clone();
    let (source, result) = match (req.fixture_id, req.image) {
        (Some(fixture), None) => {
            let f = fixture.clone();
            let result = blocking(move || engine.detect_fixture(&f, req.threshold)).await??;
            (format!("fixture:{fixture}"), result)
        }
        (None, Some(image)) => {
            let bytes = base64::engine::general_purpose::STANDARD
                .decode(image.data_base64.as_bytes())
                .map_err(|e| ApiError::bad_request(format!("image.data_base64: {e}")))?;
            let reference = if image.reference.is_empty() { "upload".to_string() } else { image.reference };
            let r = reference.clone();
            let result = blocking(move || engine.detect_images(vec![(r, bytes)], req.threshold)).await??;
            (format!("image:{reference}"), result)
        }
        _ => return Err(ApiError::bad_request("send exactly one of fixture_id or image")),
    };
    app.commit(Event::Detect { session_id: id, source, ingredients: result.ingredients.clone() })?;
    Ok(Json(result))
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct RecommendRequest {
    #[serde(default)]
    pub k: Option<usize>,
    /// Explicit ingredient names; replaces the detected set.
    #[serde(default)]
    pub ingredients: Option<Vec<String>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecommendResponse {
    pub seq: u64,
    #[serde(flatten)]
    pub snapshot: RecommendationSnapshot,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notice: Option<Explanation>,
}

fn normalize_ingredients(engine: &Engine, raw: &[String]) -> ApiResult<BTreeSet<String>> {
    let mut ids = BTreeSet::new();
    let mut violations = Vec::new();
    for (i, name) in raw.iter().enumerate() {
        match engine.vocab().normalize_ingredient_name(name) {
            Ok(Normalized::Known(id)) => {
                ids.insert(id);
            }
            Ok(Normalized::Unknown(token)) => violations.push(Violation {
                field: format!("ingredients[{i}]"),
                message: format!("unknown ingredient: {token}"),
            }),
            Err(e) => violations.push(Violation { field: format!("ingredients[{i}]"), message: e.to_string() }),
        }
    }
    if violations.is_empty() {
        Ok(ids)
    } else {
        Err(ApiError::validation(violations))
    }
}

async fn recommend(
    State(app): State<AppState>,
    Path(id): Path<String>,
    JsonBody(req): JsonBody<RecommendRequest>,
) -> ApiResult<Json<RecommendResponse>> {
    let _guard = app.lock_session(&id).await?;
    let k = req.k.unwrap_or(app.engine().default_k());
    if k == 0 {
        return Err(ApiError::validation(vec![Violation {
            field: "k".into(),
            message: "k must be at least 1".into(),
        }]));
    }
    let ingredients = req.ingredients.as_deref().map(|raw| normalize_ingredients(app.engine(), raw)).transpose()?;
    let app2 = app.clone();
    let id2 = id.clone();
    let (seq, snapshot) = blocking(move || -> ApiResult<_> {
        let mut store = app2.store();
        let seq = store.commit(Event::Recommend { session_id: id2.clone(), k, ingredients }, app2.engine())?;
        let snapshot = store.state.sessions[&id2].recommendation.clone().expect("just applied");
        Ok((seq, snapshot))
    })
    .await??;
    let notice = app.engine().notice(&snapshot);
    Ok(Json(RecommendResponse { seq, snapshot: (*snapshot).clone(), notice }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ExplainRequest {
    pub recipe_id: String,
    pub query: String,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default)]
    pub strategy: Option<String>,
}

fn default_mode() -> Mode {
    Mode::Template
}

async fn explain(
    State(app): State<AppState>,
    Path(id): Path<String>,
    JsonBody(req): JsonBody<ExplainRequest>,
) -> ApiResult<Json<Explanation>> {
    let _guard = app.lock_session(&id).await?;
    let snapshot =
        app.store().state.session(&id)?.recommendation.clone().ok_or_else(|| ApiError::out_of_order("recommend"))?;
    let engine = app.engine().clone();
    let (recipe_id, query, mode) = (req.recipe_id.clone(), req.query.clone(), req.mode);
    let explanation =
        blocking(move || engine.explain(&snapshot, &recipe_id, &query, mode, req.strategy.as_deref())).await??;
    let mut store = app.store();
    let seq = store.log.next_seq();
    store.commit(
        Event::Explain {
            session_id: id,
            entry: Box::new(HistoryEntry {
                seq,
                recipe_id: req.recipe_id,
                query: req.query,
                intent: explanation.intent,
                mode: req.mode,
                explanation: explanation.clone(),
            }),
        },
        app.engine(),
    )?;
    Ok(Json(explanation))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct History {
    pub session_id: String,
    pub entries: Vec<HistoryEntry>,
}

async fn history(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<History>> {
    let store = app.store();
    let session = store.state.session(&id)?;
    Ok(Json(History { session_id: id, entries: session.history.clone() }))
}
