//! JSON API over the gateway and ledger.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use biopay_core::ingest::job::extension_of;
use biopay_core::ingest::mime::parse_form_data;
use biopay_core::ingest::{EventSource, IngestError, SpeciesDetection, Upload};
use biopay_core::ledger::{format_gbp, TransferRecord};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::commands::{cmd_replay_counts, parse_counts};
use crate::config::RunConfig;
use crate::pipeline::EventStatus;
use crate::serve::{Gateway, SubmitError};

const RECENT_TRANSFERS: usize = 20;

struct AppState {
    gateway: Arc<Gateway>,
    config: RunConfig,
}

type Shared = State<Arc<AppState>>;

pub fn router(gateway: Arc<Gateway>, config: RunConfig) -> Router {
    let limit = config.gateway.max_message_bytes;
    Router::new()
        .route("/v1/events", post(post_event))
        .route("/v1/events/{id}", get(get_event))
        .route("/v1/accounts", get(list_accounts))
        .route("/v1/accounts/{id}", get(get_account))
        .route("/v1/ledger/journal", get(journal))
        .route("/v1/ledger/replay-counts", post(replay_counts))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(Arc::new(AppState { gateway, config }))
}

fn error(status: StatusCode, message: impl std::fmt::Display) -> Response {
    (status, Json(json!({ "error": message.to_string() }))).into_response()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EventMetadata {
    camera_id: String,
    #[serde(default)]
    captured_at: Option<DateTime<Utc>>,
    #[serde(default)]
    detections: Option<Vec<SpeciesDetection>>,
}

/// Multipart upload with a JSON `metadata` part and an `image` part.
async fn post_event(State(app): Shared, headers: HeaderMap, body: Bytes) -> Response {
    let Some(ct) = headers.get(header::CONTENT_TYPE).and_then(|v| v.to_str().ok()) else {
        return error(StatusCode::BAD_REQUEST, "missing Content-Type");
    };
    let parts = match parse_form_data(ct, &body) {
        Ok(p) => p,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("malformed multipart body: {e}")),
    };
    let Some(meta) = parts.iter().find(|p| p.name.as_deref() == Some("metadata")) else {
        return error(StatusCode::BAD_REQUEST, "missing metadata part");
    };
    let meta: EventMetadata = match serde_json::from_slice(&meta.body) {
        Ok(m) => m,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("bad metadata: {e}")),
    };
    let image = parts
        .iter()
        .find(|p| p.name.as_deref() == Some("image"))
        .map(|p| (extension_of(p.filename.as_deref(), &p.content_type), p.body.clone()));
    let upload = Upload { camera_id: Some(meta.camera_id), captured_at: meta.captured_at, image, source: EventSource::Http };
    let gateway = app.gateway.clone();
    let res = tokio::task::spawn_blocking(move || gateway.submit(&upload, meta.detections)).await;
    match res {
        Ok(Ok((event_id, status))) => {
            let code = if status == EventStatus::Queued { StatusCode::ACCEPTED } else { StatusCode::OK };
            (code, Json(json!({ "event_id": event_id, "status": status }))).into_response()
        }
        Ok(Err(SubmitError::Rejected(e @ IngestError::Io(_)))) => error(StatusCode::INTERNAL_SERVER_ERROR, e),
        Ok(Err(e @ SubmitError::Rejected(_))) => error(StatusCode::UNPROCESSABLE_ENTITY, e),
        Ok(Err(e @ SubmitError::ShuttingDown)) => error(StatusCode::SERVICE_UNAVAILABLE, e),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e),
    }
}

async fn get_event(State(app): Shared, Path(id): Path<String>) -> Response {
    match app.gateway.pipeline().event(&id) {
        Some(r) => Json(r).into_response(),
        None => error(StatusCode::NOT_FOUND, format!("unknown event {id:?}")),
    }
}

#[derive(Serialize)]
struct AccountView {
    account_id: String,
    balance_pence: u64,
    balance: String,
}

async fn list_accounts(State(app): Shared) -> Response {
    let accounts: Vec<AccountView> = app
        .gateway
        .pipeline()
        .ledger()
        .accounts()
        .into_iter()
        .map(|a| AccountView { balance: format!("£{}", format_gbp(a.balance)), account_id: a.account_id, balance_pence: a.balance })
        .collect();
    Json(accounts).into_response()
}

async fn get_account(State(app): Shared, Path(id): Path<String>) -> Response {
    let ledger = app.gateway.pipeline().ledger();
    let Ok(balance) = ledger.balance(&id) else {
        return error(StatusCode::NOT_FOUND, format!("unknown account {id:?}"));
    };
    let mut recent: Vec<TransferRecord> =
        ledger.transfers().into_iter().rev().filter(|t| t.from == id || t.to == id).take(RECENT_TRANSFERS).collect();
    recent.reverse();
    Json(json!({
        "account_id": id,
        "balance_pence": balance,
        "balance": format!("£{}", format_gbp(balance)),
        "recent_transfers": recent,
    }))
    .into_response()
}

#[derive(Deserialize)]
struct RangeQuery {
    from: Option<DateTime<Utc>>,
    to: Option<DateTime<Utc>>,
}

async fn journal(State(app): Shared, Query(q): Query<RangeQuery>) -> Response {
    match app.gateway.pipeline().ledger().journal_range(q.from, q.to) {
        Ok(t) => Json(t).into_response(),
        Err(e) => error(StatusCode::BAD_REQUEST, e),
    }
}

/// Accepts the same CSV or JSON histogram as `ledger replay-counts` and
/// answers with the payment CSV.
async fn replay_counts(State(app): Shared, body: String) -> Response {
    let table = parse_counts(&body).and_then(|c| cmd_replay_counts(&app.config, &c));
    match table {
        Ok(t) => ([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], t.to_csv()).into_response(),
        Err(e) => error(StatusCode::BAD_REQUEST, format!("{e:#}")),
    }
}
