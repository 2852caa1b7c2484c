//! Routes, request parsing and error mapping for the `/v1` protocol.
//!
//! Bodies are parsed by hand from raw bytes rather than through axum's
//! `Json` extractor so that every malformed request gets the same
//! `{error_code, message}` envelope as domain errors.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use pedarec_core::{
    Advisor, AdvisorError, Answer, AnswerOutcome, ErrorCode, NewRecommendation, SessionMode, SuggestionDecision,
};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};

pub struct AppState {
    pub advisor: Advisor,
    /// When set, `/v1/admin` requires `Authorization: Bearer <token>`.
    pub admin_token: Option<String>,
    /// Held for the life of the service.
    pub _lock: Option<std::fs::File>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status: status_for(code),
            code,
            message: message.into(),
        }
    }

    fn malformed(message: impl Into<String>) -> Self {
        ApiError::new("MalformedRequest", message)
    }
}

impl From<AdvisorError> for ApiError {
    fn from(e: AdvisorError) -> Self {
        ApiError::new(e.code(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error_code": self.code, "message": self.message });
        (self.status, axum::Json(body)).into_response()
    }
}

/// HTTP status for a wire error code.
pub fn status_for(code: &str) -> StatusCode {
    match code {
        "UnknownSession" | "UnknownRecommendation" | "UnknownSuggestion" | "NotFound" => StatusCode::NOT_FOUND,
        "WrongQuestion"
        | "NotReady"
        | "NotPresented"
        | "ServiceNotSeeded"
        | "DuplicateId"
        | "AlreadyResolved"
        | "SchemaVersionMismatch"
        | "BankLocked" => StatusCode::CONFLICT,
        "MalformedRequest" | "InvalidMode" => StatusCode::BAD_REQUEST,
        "Unauthorized" => StatusCode::UNAUTHORIZED,
        "IoError" => StatusCode::INTERNAL_SERVER_ERROR,
        _ => StatusCode::UNPROCESSABLE_ENTITY,
    }
}

type ApiResult = Result<axum::Json<Value>, ApiError>;

pub fn router(state: Arc<AppState>) -> Router {
    let admin = Router::new()
        .route("/stats", get(admin_stats))
        .route("/rules", get(admin_rules).post(admin_load_rules))
        .route("/rules/validate", post(admin_validate_rules))
        .route("/suggestions", get(admin_queue))
        .route("/suggestions/:id/approve", post(admin_approve))
        .route("/suggestions/:id/reject", post(admin_reject))
        .route("/seed", post(admin_seed))
        .route("/snapshot", get(admin_export).post(admin_import));

    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/sessions", post(start))
        .route("/v1/sessions/:id/answers", post(answer))
        .route("/v1/sessions/:id/next", post(next))
        .route("/v1/sessions/:id/ratings", post(rate))
        .route("/v1/sessions/:id/suggestions", post(suggest))
        .route("/v1/sessions/:id/close", post(close))
        .nest("/v1/admin", admin)
        .fallback(|| async { ApiError::new("NotFound", "no such route") })
        .with_state(state)
}

/// Runs engine work off the async executor; bank writes fsync.
async fn blocking<T, F>(state: Arc<AppState>, f: F) -> Result<T, ApiError>
where
    F: FnOnce(&Advisor) -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(move || f(&state.advisor))
        .await
        .map_err(|e| ApiError::new("IoError", format!("worker failed: {e}")))?
}

fn parse<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    // next and close carry no payload; treat an empty body as `{}`
    let body = if body.iter().all(u8::is_ascii_whitespace) {
        b"{}" as &[u8]
    } else {
        body
    };
    serde_json::from_slice(body).map_err(|e| ApiError::malformed(e.to_string()))
}

fn utf8(body: &Bytes) -> Result<String, ApiError> {
    String::from_utf8(body.to_vec()).map_err(|_| ApiError::malformed("body is not UTF-8"))
}

async fn health(State(state): State<Arc<AppState>>) -> axum::Json<Value> {
    let status = if state.advisor.schema().is_some() {
        "ok"
    } else {
        "unseeded"
    };
    axum::Json(json!({ "status": status, "bank_counts": state.advisor.counts() }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StartRequest {
    mode: String,
    #[serde(default)]
    user_ref: Option<String>,
}

async fn start(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult {
    let req: StartRequest = parse(&body)?;
    let mode = match (req.mode.as_str(), req.user_ref) {
        ("anonymous", None) => SessionMode::Anonymous,
        ("anonymous", Some(_)) => return Err(ApiError::new("InvalidMode", "anonymous sessions take no user_ref")),
        ("identified", Some(user_ref)) => SessionMode::Identified { user_ref },
        ("identified", None) => return Err(ApiError::new("InvalidMode", "identified sessions need a user_ref")),
        (other, _) => {
            return Err(ApiError::new(
                "InvalidMode",
                format!("mode must be \"anonymous\" or \"identified\", got {other:?}"),
            ))
        }
    };
    blocking(state, move |a| {
        let (session_id, question) = a.start_session(mode)?;
        Ok(axum::Json(json!({ "session_id": session_id, "question": question })))
    })
    .await
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnswerRequest {
    feature_id: String,
    /// `null` or absent declines an optional question.
    #[serde(default)]
    value: Option<Answer>,
}

async fn answer(State(state): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let req: AnswerRequest = parse(&body)?;
    blocking(state, move |a| {
        Ok(axum::Json(
            match a.submit_answer(&id, &req.feature_id, req.value.as_ref())? {
                AnswerOutcome::NextQuestion(q) => json!({ "question": q }),
                AnswerOutcome::Ready { count } => json!({ "ready": true, "count": count }),
            },
        ))
    })
    .await
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Empty {}

async fn next(State(state): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let Empty {} = parse(&body)?;
    blocking(state, move |a| {
        Ok(axum::Json(match a.next_recommendation(&id)? {
            Some(card) => json!({ "card": card }),
            None => json!({ "exhausted": true }),
        }))
    })
    .await
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RateRequest {
    rec_id: String,
    score: i64,
}

async fn rate(State(state): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let req: RateRequest = parse(&body)?;
    blocking(state, move |a| {
        a.rate_current(&id, &req.rec_id, req.score)?;
        Ok(axum::Json(json!({})))
    })
    .await
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SuggestRequest {
    text: String,
}

async fn suggest(State(state): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let req: SuggestRequest = parse(&body)?;
    blocking(state, move |a| {
        let suggestion_id = a.suggest_practice(&id, &req.text)?;
        Ok(axum::Json(json!({ "suggestion_id": suggestion_id })))
    })
    .await
}

async fn close(State(state): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let Empty {} = parse(&body)?;
    blocking(state, move |a| {
        let summary = a.close_session(&id)?;
        Ok(axum::Json(json!(summary)))
    })
    .await
}

// ---- admin ---------------------------------------------------------------

fn authorize(state: &AppState, headers: &HeaderMap) -> Result<(), ApiError> {
    let Some(token) = &state.admin_token else {
        return Ok(());
    };
    let presented = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    if presented == Some(token.as_str()) {
        Ok(())
    } else {
        Err(ApiError::new("Unauthorized", "missing or wrong admin token"))
    }
}

async fn admin_stats(State(state): State<Arc<AppState>>, headers: HeaderMap) -> ApiResult {
    authorize(&state, &headers)?;
    Ok(axum::Json(json!(state.advisor.stats())))
}

async fn admin_rules(State(state): State<Arc<AppState>>, headers: HeaderMap) -> ApiResult {
    authorize(&state, &headers)?;
    Ok(axum::Json(json!({ "rules": state.advisor.rules() })))
}

async fn admin_load_rules(State(state): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> ApiResult {
    authorize(&state, &headers)?;
    let text = utf8(&body)?;
    blocking(state, move |a| {
        let n = a.load_rules(&text)?;
        Ok(axum::Json(json!({ "loaded": n })))
    })
    .await
}

async fn admin_validate_rules(State(state): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> ApiResult {
    authorize(&state, &headers)?;
    let text = utf8(&body)?;
    let rules = state.advisor.check_rules(&text)?;
    Ok(axum::Json(json!({ "valid": true, "rules": rules.len() })))
}

async fn admin_queue(State(state): State<Arc<AppState>>, headers: HeaderMap) -> ApiResult {
    authorize(&state, &headers)?;
    Ok(axum::Json(json!({ "pending": state.advisor.moderation_queue() })))
}

async fn admin_approve(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult {
    authorize(&state, &headers)?;
    let rec: NewRecommendation = parse(&body)?;
    blocking(state, move |a| {
        let rec_id = a.resolve_suggestion(&id, SuggestionDecision::Approve(rec))?;
        Ok(axum::Json(json!({ "rec_id": rec_id })))
    })
    .await
}

async fn admin_reject(State(state): State<Arc<AppState>>, headers: HeaderMap, Path(id): Path<String>) -> ApiResult {
    authorize(&state, &headers)?;
    blocking(state, move |a| {
        a.resolve_suggestion(&id, SuggestionDecision::Reject)?;
        Ok(axum::Json(json!({})))
    })
    .await
}

async fn admin_seed(State(state): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> ApiResult {
    authorize(&state, &headers)?;
    let text = utf8(&body)?;
    blocking(state, move |a| {
        let n = a.seed(&text)?;
        Ok(axum::Json(json!({ "imported": n })))
    })
    .await
}

async fn admin_export(State(state): State<Arc<AppState>>, headers: HeaderMap) -> Result<Response, ApiError> {
    authorize(&state, &headers)?;
    let text = state.advisor.export_snapshot();
    Ok(([(header::CONTENT_TYPE, "application/json")], text).into_response())
}

async fn admin_import(State(state): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> ApiResult {
    authorize(&state, &headers)?;
    let text = utf8(&body)?;
    blocking(state, move |a| {
        a.import_snapshot(&text)?;
        Ok(axum::Json(json!({})))
    })
    .await
}
