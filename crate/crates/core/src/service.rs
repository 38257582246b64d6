//! HTTP read/steer interface over an [`Engine`].

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use crate::engine::{
    Engine, Provenance, Sprint, SprintRequest, SprintStatus, ThreadRecord, Trial, TrialStatus,
};
use crate::error::Error;
use crate::space::{DimensionKind, MarginPolicy, SearchSpace, Value};

/// Error body: `{"error": message, "reason": code}`.
#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

pub struct ApiError(Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, reason) = match &self.0 {
            Error::NotFound { .. } => (StatusCode::NOT_FOUND, None),
            Error::Conflict(_) => (StatusCode::CONFLICT, None),
            Error::Priming { violation, .. } => (
                StatusCode::UNPROCESSABLE_ENTITY,
                Some(violation.code().to_string()),
            ),
            Error::InsufficientTrials { .. } => (
                StatusCode::UNPROCESSABLE_ENTITY,
                Some("insufficient-trials".to_string()),
            ),
            Error::Io(_) | Error::Json(_) => (StatusCode::INTERNAL_SERVER_ERROR, None),
            _ => (StatusCode::BAD_REQUEST, None),
        };
        let body = ErrorBody {
            error: self.0.to_string(),
            reason,
        };
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

#[derive(Debug, Clone, Copy, Deserialize)]
pub struct Paging {
    #[serde(default)]
    pub offset: usize,
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Page<T> {
    pub total: usize,
    pub offset: usize,
    pub items: Vec<T>,
}

impl<T> Page<T> {
    fn of(all: Vec<T>, paging: Paging) -> Self {
        let total = all.len();
        let items = all
            .into_iter()
            .skip(paging.offset)
            .take(paging.limit.unwrap_or(usize::MAX))
            .collect();
        Page {
            total,
            offset: paging.offset,
            items,
        }
    }
}

/// Sprint row in thread listings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SprintListing {
    pub id: String,
    pub name: String,
    pub status: SprintStatus,
    pub space_version: u64,
    pub fidelity: String,
    pub n_trials: usize,
    pub best_score: Option<f64>,
}

impl SprintListing {
    fn of(s: &Sprint) -> Self {
        SprintListing {
            id: s.id.clone(),
            name: s.name.render().unwrap_or_default(),
            status: s.status.clone(),
            space_version: s.space_version,
            fidelity: s.fidelity.designation(),
            n_trials: s.trials.len(),
            best_score: s.incumbent().map(|i| i.score),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DimRange {
    Numeric { low: f64, high: f64 },
    Categorical { categories: Vec<String> },
    Frozen { value: Value },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub trial: u64,
    pub value: Value,
    pub score: f64,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopKHull {
    /// Number of trials the hull spans (at most the requested k).
    pub k: usize,
    pub hull: DimRange,
    /// Range a top-k prune with default margins would commit.
    pub proposed: DimRange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterSeries {
    pub dimension: String,
    pub points: Vec<ScatterPoint>,
    pub current_range: DimRange,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top_k: Option<TopKHull>,
}

fn range_of(space: &SearchSpace, name: &str) -> crate::Result<DimRange> {
    let d = space
        .dimension(name)
        .ok_or_else(|| Error::not_found("dimension", name))?;
    Ok(if let Some(v) = &d.frozen {
        DimRange::Frozen { value: v.clone() }
    } else if d.kind == DimensionKind::Categorical {
        DimRange::Categorical {
            categories: d.categories.clone(),
        }
    } else {
        let (low, high) = d.bounds().expect("numeric");
        DimRange::Numeric { low, high }
    })
}

/// Score-value series for one dimension over a sprint's completed trials,
/// with the top-`k` hull and the range pruning would propose.
pub fn scatter(
    sprint: &Sprint,
    space: &SearchSpace,
    dimension: &str,
    k: usize,
) -> crate::Result<ScatterSeries> {
    let current_range = range_of(space, dimension)?;
    let ranked = sprint.ranking();
    let points: Vec<ScatterPoint> = sprint
        .trials
        .iter()
        .filter(|t| t.status == TrialStatus::Complete)
        .filter_map(|t| {
            Some(ScatterPoint {
                trial: t.id,
                value: t.point.get(dimension)?.clone(),
                score: t.history_score()?,
                provenance: t.provenance.clone(),
            })
        })
        .collect();
    let k = k.min(ranked.len());
    let top_k = if k == 0 {
        None
    } else {
        let top = &ranked[..k];
        let values: Vec<&Value> = top
            .iter()
            .filter_map(|(t, _)| t.point.get(dimension))
            .collect();
        let hull = match &current_range {
            DimRange::Frozen { value } => DimRange::Frozen {
                value: value.clone(),
            },
            DimRange::Categorical { categories } => DimRange::Categorical {
                categories: categories
                    .iter()
                    .filter(|c| values.iter().any(|v| v.as_category() == Some(c.as_str())))
                    .cloned()
                    .collect(),
            },
            DimRange::Numeric { .. } => {
                let nums: Vec<f64> = values.iter().filter_map(|v| v.as_f64()).collect();
                DimRange::Numeric {
                    low: nums.iter().copied().fold(f64::INFINITY, f64::min),
                    high: nums.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                }
            }
        };
        let scored: Vec<_> = ranked.iter().map(|(t, s)| (&t.point, *s)).collect();
        let proposed = space.prune_to_top_k(&scored, k, &MarginPolicy::default())?;
        Some(TopKHull {
            k,
            hull,
            proposed: range_of(&proposed.space, dimension)?,
        })
    };
    Ok(ScatterSeries {
        dimension: dimension.to_string(),
        points,
        current_range,
        top_k,
    })
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
pub struct SprintQuery {
    /// Refuse with 409 while the sprint is still changing.
    #[serde(default)]
    pub consistent: bool,
}

#[derive(Debug, Clone, Copy, Deserialize)]
pub struct ScatterQuery {
    #[serde(default = "default_k")]
    pub k: usize,
}

fn default_k() -> usize {
    10
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct MarginOverrides {
    pub log_factor: Option<f64>,
    pub uniform_delta: Option<f64>,
    pub integer_delta: Option<i64>,
}

impl MarginOverrides {
    pub fn apply(&self, base: MarginPolicy) -> MarginPolicy {
        MarginPolicy {
            log_factor: self.log_factor.unwrap_or(base.log_factor),
            uniform_delta: self.uniform_delta.unwrap_or(base.uniform_delta),
            integer_delta: self.integer_delta.unwrap_or(base.integer_delta),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct Freeze {
    pub dim: String,
    pub value: Value,
}

#[derive(Debug, Clone, Deserialize)]
pub struct PruneBody {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub margins: MarginOverrides,
    #[serde(default)]
    pub freezes: Vec<Freeze>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PruneResponse {
    pub space: SearchSpace,
    pub degenerate: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Created {
    pub id: String,
    pub name: String,
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
pub struct RunBody {
    #[serde(default)]
    pub worker_limit: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Accepted {
    pub id: String,
    pub status: SprintStatus,
}

async fn list_threads(
    State(engine): State<Arc<Engine>>,
    Query(paging): Query<Paging>,
) -> Json<Page<ThreadRecord>> {
    Json(Page::of(engine.threads(), paging))
}

async fn get_thread(
    State(engine): State<Arc<Engine>>,
    Path(id): Path<String>,
) -> ApiResult<Json<ThreadRecord>> {
    Ok(Json(engine.thread(&id)?))
}

async fn thread_sprints(
    State(engine): State<Arc<Engine>>,
    Path(id): Path<String>,
    Query(paging): Query<Paging>,
) -> ApiResult<Json<Page<SprintListing>>> {
    let sprints = engine.sprints_of(&id)?;
    Ok(Json(Page::of(
        sprints.iter().map(SprintListing::of).collect(),
        paging,
    )))
}

async fn thread_space(
    State(engine): State<Arc<Engine>>,
    Path((id, version)): Path<(String, u64)>,
) -> ApiResult<Json<SearchSpace>> {
    Ok(Json(engine.space(&id, version)?))
}

fn consistent_sprint(engine: &Engine, id: &str, query: SprintQuery) -> crate::Result<Sprint> {
    let sprint = engine.sprint(id)?;
    if query.consistent && sprint.status == SprintStatus::Running {
        return Err(Error::Conflict(format!("sprint {id} is running")));
    }
    Ok(sprint)
}

async fn get_sprint(
    State(engine): State<Arc<Engine>>,
    Path(id): Path<String>,
    Query(query): Query<SprintQuery>,
) -> ApiResult<Json<Sprint>> {
    Ok(Json(consistent_sprint(&engine, &id, query)?))
}

#[derive(Debug, Clone, Copy, Deserialize)]
pub struct TrialsQuery {
    #[serde(default)]
    pub offset: usize,
    pub limit: Option<usize>,
    #[serde(default)]
    pub consistent: bool,
}

async fn sprint_trials(
    State(engine): State<Arc<Engine>>,
    Path(id): Path<String>,
    Query(q): Query<TrialsQuery>,
) -> ApiResult<Json<Page<Trial>>> {
    let sprint = consistent_sprint(
        &engine,
        &id,
        SprintQuery {
            consistent: q.consistent,
        },
    )?;
    let paging = Paging {
        offset: q.offset,
        limit: q.limit,
    };
    Ok(Json(Page::of(sprint.trials, paging)))
}

async fn dimension_scatter(
    State(engine): State<Arc<Engine>>,
    Path((id, name)): Path<(String, String)>,
    Query(q): Query<ScatterQuery>,
) -> ApiResult<Json<ScatterSeries>> {
    let sprint = engine.sprint(&id)?;
    let space = engine.space(&sprint.thread, sprint.space_version)?;
    Ok(Json(scatter(&sprint, &space, &name, q.k)?))
}

async fn prune_sprint(
    State(engine): State<Arc<Engine>>,
    Path(id): Path<String>,
    Json(body): Json<PruneBody>,
) -> ApiResult<(StatusCode, Json<PruneResponse>)> {
    let margins = body.margins.apply(MarginPolicy::default());
    let freezes: Vec<(String, Value)> =
        body.freezes.into_iter().map(|f| (f.dim, f.value)).collect();
    let out = engine.prune_sprint(&id, body.k, &margins, &freezes)?;
    Ok((
        StatusCode::CREATED,
        Json(PruneResponse {
            space: out.space,
            degenerate: out.degenerate,
        }),
    ))
}

async fn create_sprint(
    State(engine): State<Arc<Engine>>,
    Json(req): Json<SprintRequest>,
) -> ApiResult<(StatusCode, Json<Created>)> {
    let sprint = engine.create_sprint(&req)?;
    Ok((
        StatusCode::CREATED,
        Json(Created {
            name: sprint.name.render()?,
            id: sprint.id,
        }),
    ))
}

async fn run_sprint(
    State(engine): State<Arc<Engine>>,
    Path(id): Path<String>,
    body: Option<Json<RunBody>>,
) -> ApiResult<(StatusCode, Json<Accepted>)> {
    let worker_limit = body.and_then(|Json(b)| b.worker_limit).unwrap_or(1);
    engine.start_sprint(&id)?;
    let runner = Arc::clone(&engine);
    let sprint_id = id.clone();
    tokio::task::spawn_blocking(move || {
        if let Err(e) = runner.continue_sprint(&sprint_id, worker_limit) {
            log::error!("sprint {sprint_id} failed: {e}");
        }
    });
    Ok((
        StatusCode::ACCEPTED,
        Json(Accepted {
            id,
            status: SprintStatus::Running,
        }),
    ))
}

pub fn router(engine: Arc<Engine>) -> Router {
    Router::new()
        .route("/threads", get(list_threads))
        .route("/threads/{id}", get(get_thread))
        .route("/threads/{id}/sprints", get(thread_sprints))
        .route("/threads/{id}/spaces/{version}", get(thread_space))
        .route("/sprints", post(create_sprint))
        .route("/sprints/{id}", get(get_sprint))
        .route("/sprints/{id}/trials", get(sprint_trials))
        .route(
            "/sprints/{id}/dimensions/{name}/scatter",
            get(dimension_scatter),
        )
        .route("/sprints/{id}/prune", post(prune_sprint))
        .route("/sprints/{id}/run", post(run_sprint))
        .with_state(engine)
}

/// Serves the API until the process is stopped.
pub async fn serve(engine: Arc<Engine>, addr: SocketAddr) -> crate::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(engine)).await?;
    Ok(())
}
