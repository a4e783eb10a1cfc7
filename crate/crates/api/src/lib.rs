//! HTTP/JSON interface to the chain datastore.
//!
//! | route | result |
//! |---|---|
//! | `GET /stores` | every store record |
//! | `GET /stores/{id}` | one store, 404 if unknown |
//! | `GET /stores/{id}/inventory` | the store's stock joined with the catalog |
//! | `GET /categories` | distinct product categories |
//! | `GET /products?category=c` | product x store availability for a category |
//! | `POST /telemetry` | apply a coordinator update: 204, 400, 404 or 409 |
//! | `GET /recommend?product_ids=1,2` | stores ranked for a shopping list |
//!
//! Errors are returned as `{"error": "..."}`. Response shapes are described
//! by the JSON schema in `schema/api.schema.json`.

use std::future::Future;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use parkwise_core::datastore::{AvailabilityRow, DatastoreError, InventoryItem, StoreRecord};
use parkwise_core::recommend::{recommend, RecommendError, RecommendationScore, Weights};
use parkwise_core::{SharedDatastore, TelemetryUpdate};
use serde::Deserialize;
use tokio::net::TcpListener;

/// JSON schema for every response body and the telemetry request.
pub const SCHEMA: &str = include_str!("../schema/api.schema.json");

#[derive(Clone)]
pub struct AppState {
    pub datastore: SharedDatastore,
    pub weights: Weights,
}

impl AppState {
    pub fn new(datastore: SharedDatastore) -> Self {
        AppState {
            datastore,
            weights: Weights::default(),
        }
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (
            self.status,
            Json(serde_json::json!({ "error": self.message })),
        )
            .into_response()
    }
}

impl From<DatastoreError> for ApiError {
    fn from(e: DatastoreError) -> Self {
        let status = match e {
            DatastoreError::StoreNotFound(_) | DatastoreError::ProductNotFound(_) => {
                StatusCode::NOT_FOUND
            }
            DatastoreError::StaleEpoch { .. } | DatastoreError::ConflictingEpoch { .. } => {
                StatusCode::CONFLICT
            }
            DatastoreError::Invalid(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError {
            status,
            message: e.to_string(),
        }
    }
}

impl From<RecommendError> for ApiError {
    fn from(e: RecommendError) -> Self {
        ApiError::bad_request(e.to_string())
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/stores", get(list_stores))
        .route("/stores/{id}", get(get_store))
        .route("/stores/{id}/inventory", get(store_inventory))
        .route("/categories", get(categories))
        .route("/products", get(products))
        .route("/telemetry", post(telemetry))
        .route("/recommend", get(recommend_stores))
        .with_state(state)
}

/// Serve until `shutdown` resolves, letting in-flight requests finish.
pub async fn serve(
    listener: TcpListener,
    state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}

fn parse_id(raw: &str) -> ApiResult<u32> {
    raw.parse()
        .map_err(|_| ApiError::bad_request(format!("`{raw}` is not a valid id")))
}

async fn list_stores(State(s): State<AppState>) -> Json<Vec<StoreRecord>> {
    Json(s.datastore.read().list_stores())
}

async fn get_store(
    State(s): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<Json<StoreRecord>> {
    let id = parse_id(&id)?;
    Ok(Json(s.datastore.read().get_store(id)?))
}

async fn store_inventory(
    State(s): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<Json<Vec<InventoryItem>>> {
    let id = parse_id(&id)?;
    Ok(Json(s.datastore.read().get_store_inventory(id)?))
}

async fn categories(State(s): State<AppState>) -> Json<Vec<String>> {
    Json(s.datastore.read().categories())
}

#[derive(Deserialize)]
struct CategoryQuery {
    category: Option<String>,
}

async fn products(
    State(s): State<AppState>,
    Query(q): Query<CategoryQuery>,
) -> ApiResult<Json<Vec<AvailabilityRow>>> {
    let category = q
        .category
        .ok_or_else(|| ApiError::bad_request("missing `category` query parameter"))?;
    Ok(Json(s.datastore.read().search_products(&category)))
}

async fn telemetry(State(s): State<AppState>, body: Bytes) -> ApiResult<StatusCode> {
    let update: TelemetryUpdate = serde_json::from_slice(&body)
        .map_err(|e| ApiError::bad_request(format!("invalid telemetry body: {e}")))?;
    s.datastore.write().update_telemetry(&update)?;
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Deserialize)]
struct RecommendQuery {
    product_ids: Option<String>,
}

async fn recommend_stores(
    State(s): State<AppState>,
    Query(q): Query<RecommendQuery>,
) -> ApiResult<Json<Vec<RecommendationScore>>> {
    let ids = q
        .product_ids
        .unwrap_or_default()
        .split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(parse_id)
        .collect::<ApiResult<Vec<u32>>>()?;
    Ok(Json(recommend(&s.datastore.read(), &ids, &s.weights)?))
}
