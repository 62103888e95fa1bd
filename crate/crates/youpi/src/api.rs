//! HTTP routes. Every handler authenticates the bearer token, runs the
//! matching service call on the blocking pool and answers JSON.

use std::convert::Infallible;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::async_trait;
use axum::body::Bytes;
use axum::extract::rejection::QueryRejection;
use axum::extract::{FromRequest, FromRequestParts, Path, Query, Request, State};
use axum::http::header::{AUTHORIZATION, CONTENT_TYPE};
use axum::http::request::Parts;
use axum::http::{StatusCode, Uri};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use youpi_core::authz::{PermissionMode, Principal};
use youpi_core::catalog::{Grade, ImageId, Query as ImageQuery, SelectionId};
use youpi_core::cluster::job::JobFilter;
use youpi_core::cluster::policy::NewPolicy;
use youpi_core::cluster::{EventFilter, JobState};
use youpi_core::ingest::IngestRequest;
use youpi_core::objects::ObjectKind;
use youpi_core::plugin::{NewCartItem, PluginDescriptor};
use youpi_core::service::{NewUser, SubmitRequest};
use youpi_core::{Error, Youpi};

pub type AppState = Arc<Youpi>;

/// Error body: `{"code": ..., "message": ..., "detail": ...}`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<Value>,
}

impl ApiError {
    pub fn new(status: u16, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code: code.to_string(),
            message: message.into(),
            detail: None,
        }
    }

    fn malformed(msg: impl Into<String>) -> Self {
        ApiError::new(400, "MALFORMED_BODY", msg)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        if e.http_status() == 500 {
            tracing::error!(error = %e, "internal error");
        }
        ApiError {
            status: e.http_status(),
            code: e.code().to_string(),
            message: e.to_string(),
            detail: e.detail(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// JSON body that reports any decoding problem as `MALFORMED_BODY`,
/// whatever the content type.
pub struct Body<T>(pub T);

#[async_trait]
impl<T: DeserializeOwned, S: Send + Sync> FromRequest<S> for Body<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        let bytes = Bytes::from_request(req, state)
            .await
            .map_err(|e| ApiError::malformed(e.body_text()))?;
        serde_json::from_slice(&bytes)
            .map(Body)
            .map_err(|e| ApiError::malformed(e.to_string()))
    }
}

fn query<T>(q: Result<Query<T>, QueryRejection>) -> ApiResult<T> {
    q.map(|Query(v)| v)
        .map_err(|e| ApiError::new(400, "INVALID_ARGUMENT", e.body_text()))
}

/// The authenticated caller, from `Authorization: Bearer <token>` or, for
/// clients that cannot set headers (EventSource), a `token` query parameter.
pub struct Caller(pub Principal);

fn bearer(parts: &Parts) -> Option<String> {
    if let Some(h) = parts.headers.get(AUTHORIZATION).and_then(|v| v.to_str().ok()) {
        return h.strip_prefix("Bearer ").map(|t| t.trim().to_string());
    }
    parts.uri.query().and_then(|q| {
        q.split('&')
            .filter_map(|kv| kv.split_once('='))
            .find(|(k, _)| *k == "token")
            .map(|(_, v)| v.to_string())
    })
}

#[async_trait]
impl FromRequestParts<AppState> for Caller {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, Self::Rejection> {
        let token = bearer(parts).ok_or_else(|| ApiError::from(Error::Unauthenticated))?;
        let svc = Arc::clone(state);
        let p = blocking(move || svc.principal_for_token(&token)).await?;
        Ok(Caller(p))
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> youpi_core::Result<T> + Send + 'static) -> ApiResult<T> {
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r.map_err(ApiError::from),
        Err(e) => Err(ApiError::new(500, "INTERNAL_ERROR", e.to_string())),
    }
}

macro_rules! call {
    ($state:expr, |$svc:ident| $body:expr) => {{
        let $svc = Arc::clone(&$state);
        blocking(move || $body).await.map(Json)
    }};
}

pub fn router(svc: AppState) -> Router {
    Router::new()
        .route("/api/auth", post(auth))
        .route("/api/users", get(list_users).post(create_user))
        .route("/api/ingest", post(ingest))
        .route("/api/ingest/:id", get(get_ingestion))
        .route("/api/images", get(images))
        .route("/api/images/grade", post(grade))
        .route(
            "/api/selections",
            get(list_selections).post(save_selection).delete(delete_selection_body),
        )
        .route("/api/selections/:id", get(get_selection).delete(delete_selection))
        .route("/api/selections/:id/export", get(export_selection))
        .route("/api/selections/merge", post(merge_selections))
        .route("/api/selections/import", post(import_selection))
        .route("/api/selections/import-dir", post(import_dir))
        .route("/api/tags", get(list_tags))
        .route("/api/tags/apply", post(apply_tag))
        .route("/api/paths", get(list_paths).post(save_path))
        .route("/api/plugins", get(list_plugins).post(register_plugin))
        .route("/api/plugins/:id/enable", post(enable_plugin))
        .route("/api/configs", get(list_configs).post(save_config))
        .route("/api/cart", get(list_cart).post(create_cart))
        .route("/api/cart/:id", get(get_cart))
        .route("/api/jobs", get(list_jobs).post(submit))
        .route("/api/jobs/:id", get(get_job))
        .route("/api/jobs/:id/events", get(job_events))
        .route("/api/jobs/:id/cancel", post(cancel))
        .route("/api/nodes", get(nodes))
        .route("/api/policies", get(list_policies).post(create_policy))
        .route("/api/events", get(events))
        .route("/api/chmod", post(chmod))
        .route("/api/chown", post(chown))
        .fallback(unknown_route)
        .with_state(svc)
}

async fn unknown_route(uri: Uri) -> ApiError {
    ApiError::new(404, "UNKNOWN_ROUTE", format!("no route for {}", uri.path()))
}

// ---------------------------------------------------------------- accounts

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AuthBody {
    login: String,
    password: String,
}

async fn auth(State(s): State<AppState>, Body(b): Body<AuthBody>) -> ApiResult<impl IntoResponse> {
    call!(s, |svc| svc.login(&b.login, &b.password))
}

async fn list_users(State(s): State<AppState>, Caller(u): Caller) -> ApiResult<impl IntoResponse> {
    call!(s, |svc| svc.list_users(&u))
}

async fn create_user(State(s): State<AppState>, Caller(u): Caller, Body(b): Body<NewUser>) -> ApiResult<impl IntoResponse> {
    call!(s, |svc| svc.create_user(&u, &b))
}

// --------------------------------------------------------------- ingestion

async fn ingest(State(s): State<AppState>, Caller(u): Caller, Body(b): Body<IngestRequest>) -> ApiResult<impl IntoResponse> {
    call!(s, |svc| svc.ingest(&u, &b))
}

async fn get_ingestion(State(s): State<AppState>, Caller(u): Caller, Path(id): Path<i64>) -> ApiResult<impl IntoResponse> {
    call!(s, |svc| svc.get_ingestion(&u, id))
}

// ----------------------------------------------------------------- catalog

async fn images(
    State(s): State<AppState>,
    Caller(u): Caller,
    q: Result<Query<ImageQuery>, QueryRejection>,
) -> ApiResult<impl IntoResponse> {
    let q = query(q)?;
    call!(s, |svc| svc.query_images(&u, &q))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GradeBody {
    image_ids: Vec<ImageId>,
    grade: Option<Grade>,
}

async fn grade(State(s): State<AppState>, Caller(u): Caller, Body(b): Body<GradeBody>) -> ApiResult<impl IntoResponse> {
    call!(s, |svc| svc.set_grade(&u, &b.image_ids, b.grade))
}

async fn list_selections(State(s): State<AppState>, Caller(u): Caller) -> ApiResult<impl IntoResponse> {
    call!(s, |svc| svc.list_selections(&u))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SaveSelectionBody {
    name: String,
    image_ids: Vec<ImageId>,
}

async fn save_selection(
    State(s): State<AppState>,
    Caller(u): Caller,
    Body(b): Body<SaveSelectionBody>,
) -> ApiResult<impl IntoResponse> {
    call!(s, |svc| svc.save_selection(&u, &b.name, &b.image_ids))
}

async fn get_selection(State(s): State<AppState>, Caller(u): Caller, Path(id): Path<SelectionId>) -> ApiResult<impl IntoResponse> {
    call!(s, |svc| svc.get_selection(&u, id))
}

async fn delete_selection(State(s): State<AppState>, Caller(u): Caller, Path(id): Path<SelectionId>) -> ApiResult<impl IntoResponse> {
    call!(s, |svc| svc.delete_selection(&u, id).map(|_| json!({ "deleted": id })))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DeleteSelectionBody {
    selection_id: SelectionId,
}

async fn delete_selection_body(
    State(s): State<AppState>,
    Caller(u): Caller,
    Body(b): Body<DeleteSelectionBody>,
) -> ApiResult<impl IntoResponse> {
    let id = b.selection_id;
    call!(s, |svc| svc.delete_selection(&u, id).map(|_| json!({ "deleted": id })))
}

async fn export_selection(State(s): State<AppState>, Caller(u): Caller, Path(id): Path<SelectionId>) -> ApiResult<Response> {
    let svc = Arc::clone(&s);
    let text = blocking(move || svc.export_selection(&u, id)).await?;
    Ok(([(CONTENT_TYPE, "text/plain; charset=utf-8")], text).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MergeBody {
    target_name: String,
    sources: Vec<SelectionId>,
}

async fn merge_selections(State(s): State<AppState>, Caller(u): Caller, Body(b): Body<MergeBody>) -> ApiResult<impl IntoResponse> {
    call!(s, |svc| svc.merge_selections(&u, &b.target_name, &b.sources))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ImportBody {
    name: String,
    text: String,
}

async fn import_selection(State(s): State<AppState>, Caller(u): Caller, Body(b): Body<ImportBody>) -> ApiResult<impl IntoResponse> {
    call!(s, |svc| svc
        .import_selection(&u, &b.name, &b.text)
        .map(|(selection, report)| json!({ "selection": selection, "report": report })))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ImportDirBody {
    dir: PathBuf,
}

async fn import_dir(State(s): State<AppState>, Caller(u): Caller, Body(b): Body<ImportDirBody>) -> ApiResult<impl IntoResponse> {
    call!(s, |svc| svc.import_selection_dir(&u, &b.dir))
}

async fn list_tags(State(s): State<AppState>, Caller(u): Caller) -> ApiResult<impl IntoResponse> {
    call!(s, |svc| svc.list_tags(&u))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ApplyTagBody {
    tag: String,
    image_ids: Vec<ImageId>,
    #[serde(default = "yes")]
    mark: bool,
}

fn yes() -> bool {
    true
}

async fn apply_tag(State(s): State<AppState>, Caller(u): Caller, Body(b): Body<ApplyTagBody>) -> ApiResult<impl IntoResponse> {
    call!(s, |svc| svc
        .apply_tag(&u, &b.tag, &b.image_ids, b.mark)
        .map(|n| json!({ "affected": n })))
}

async fn list_paths(State(s): State<AppState>, Caller(u): Caller) -> ApiResult<impl IntoResponse> {
    call!(s, |svc| svc.list_paths(&u))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PathBody {
    path: String,
}

async fn save_path(State(s): State<AppState>, Caller(u): Caller, Body(b): Body<PathBody>) -> ApiResult<impl IntoResponse> {
    call!(s, |svc| svc.save_path(&u, &b.path))
}

// ----------------------------------------------------------------- plugins

#[derive(Deserialize)]
struct PluginQuery {
    #[serde(default)]
    enabled_only: bool,
}

async fn list_plugins(
    State(s): State<AppState>,
    Caller(_u): Caller,
    q: Result<Query<PluginQuery>, QueryRejection>,
) -> ApiResult<impl IntoResponse> {
    let q = query(q)?;
    call!(s, |svc| svc.list_plugins(q.enabled_only))
}

async fn register_plugin(
    State(s): State<AppState>,
    Caller(u): Caller,
    Body(b): Body<PluginDescriptor>,
) -> ApiResult<impl IntoResponse> {
    call!(s, |svc| svc.register_plugin(&u, &b))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EnableBody {
    enabled: bool,
}

async fn enable_plugin(
    State(s): State<AppState>,
    Caller(u): Caller,
    Path(id): Path<String>,
    Body(b): Body<EnableBody>,
) -> ApiResult<impl IntoResponse> {
    call!(s, |svc| svc.set_plugin_enabled(&u, &id, b.enabled))
}

#[derive(Deserialize)]
struct ConfigQuery {
    plugin_id: Option<String>,
}

async fn list_configs(
    State(s): State<AppState>,
    Caller(u): Caller,
    q: Result<Query<ConfigQuery>, QueryRejection>,
) -> ApiResult<impl IntoResponse> {
    let q = query(q)?;
    call!(s, |svc| svc.list_configs(&u, q.plugin_id.as_deref()))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigBody {
    name: String,
    plugin_id: String,
    content: String,
}

async fn save_config(State(s): State<AppState>, Caller(u): Caller, Body(b): Body<ConfigBody>) -> ApiResult<impl IntoResponse> {
    call!(s, |svc| svc.save_config(&u, &b.name, &b.plugin_id, &b.content))
}

async fn list_cart(State(s): State<AppState>, Caller(u): Caller) -> ApiResult<impl IntoResponse> {
    call!(s, |svc| svc.list_cart(&u))
}

async fn create_cart(State(s): State<AppState>, Caller(u): Caller, Body(b): Body<NewCartItem>) -> ApiResult<impl IntoResponse> {
    call!(s, |svc| svc.create_cart_item(&u, &b))
}

async fn get_cart(State(s): State<AppState>, Caller(u): Caller, Path(id): Path<i64>) -> ApiResult<impl IntoResponse> {
    call!(s, |svc| svc.get_cart_item(&u, id))
}

// ------------------------------------------------------------------ cluster

async fn list_jobs(
    State(s): State<AppState>,
    Caller(u): Caller,
    q: Result<Query<JobFilter>, QueryRejection>,
) -> ApiResult<impl IntoResponse> {
    let q = query(q)?;
    call!(s, |svc| svc.list_jobs(&u, &q))
}

async fn submit(State(s): State<AppState>, Caller(u): Caller, Body(b): Body<SubmitRequest>) -> ApiResult<impl IntoResponse> {
    call!(s, |svc| svc.submit(&u, &b))
}

async fn get_job(State(s): State<AppState>, Caller(u): Caller, Path(id): Path<i64>) -> ApiResult<impl IntoResponse> {
    call!(s, |svc| svc.get_job(&u, id))
}

async fn job_events(State(s): State<AppState>, Caller(u): Caller, Path(id): Path<i64>) -> ApiResult<impl IntoResponse> {
    call!(s, |svc| svc.job_events(&u, id))
}

async fn cancel(State(s): State<AppState>, Caller(u): Caller, Path(id): Path<i64>) -> ApiResult<impl IntoResponse> {
    call!(s, |svc| svc.cancel_job(&u, id))
}

async fn nodes(State(s): State<AppState>, Caller(_u): Caller) -> ApiResult<impl IntoResponse> {
    call!(s, |svc| Ok(svc.nodes()))
}

async fn list_policies(State(s): State<AppState>, Caller(u): Caller) -> ApiResult<impl IntoResponse> {
    call!(s, |svc| svc.list_policies(&u))
}

async fn create_policy(State(s): State<AppState>, Caller(u): Caller, Body(b): Body<NewPolicy>) -> ApiResult<impl IntoResponse> {
    call!(s, |svc| svc.create_policy(&u, &b))
}

#[derive(Deserialize)]
struct EventsQuery {
    #[serde(default)]
    from_seq: i64,
    owner: Option<String>,
    job_id: Option<i64>,
    state: Option<JobState>,
    #[allow(dead_code)]
    token: Option<String>,
}

async fn events(
    State(s): State<AppState>,
    Caller(_u): Caller,
    q: Result<Query<EventsQuery>, QueryRejection>,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    let q = query(q)?;
    let sub = s.subscribe(
        EventFilter {
            owner: q.owner,
            job_id: q.job_id,
            state: q.state,
        },
        q.from_seq,
    );
    let stream = futures::stream::unfold(sub, |mut sub| async move {
        match sub.next().await {
            Ok(ev) => {
                let data = serde_json::to_string(&ev).expect("event serializes");
                Some((Ok(Event::default().event("job").data(data)), sub))
            }
            Err(e) => {
                tracing::warn!(error = %e, "event stream aborted");
                None
            }
        }
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::new().interval(Duration::from_secs(15))))
}

// -------------------------------------------------------------------- authz

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ChmodBody {
    kind: ObjectKind,
    id: i64,
    mode: PermissionMode,
}

async fn chmod(State(s): State<AppState>, Caller(u): Caller, Body(b): Body<ChmodBody>) -> ApiResult<impl IntoResponse> {
    call!(s, |svc| svc.chmod(&u, b.kind, b.id, b.mode))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ChownBody {
    kind: ObjectKind,
    id: i64,
    owner: Option<String>,
    group: Option<String>,
}

async fn chown(State(s): State<AppState>, Caller(u): Caller, Body(b): Body<ChownBody>) -> ApiResult<impl IntoResponse> {
    call!(s, |svc| svc.chown(&u, b.kind, b.id, b.owner.as_deref(), b.group.as_deref()))
}
