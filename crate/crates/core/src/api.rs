//! Read-only JSON API over a built snapshot.
//!
//! Every payload is a serialization of query engine output; paging is the
//! only thing computed here.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::{Duration, SystemTime};

use axum::extract::{Path as UrlPath, RawQuery, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::Serialize;
use tower_http::cors::{AllowOrigin, CorsLayer};

use crate::collaboration_graph::{CollaborationGraph, ExternalPartner};
use crate::entity_resolution::Organisation;
use crate::ingest::{Participation, Project};
use crate::query_engine::{ExportView, FacetValues, FilterSpec, SearchIndex, Snapshot, TopicInfo, TOP_N};

pub const DEFAULT_LIMIT: usize = 50;
pub const MAX_LIMIT: usize = 500;

#[derive(Debug, Clone, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub error: String,
    pub detail: String,
}

impl ApiError {
    fn bad_request(detail: impl ToString) -> ApiError {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            error: "bad_request".into(),
            detail: detail.to_string(),
        }
    }

    fn not_found(detail: impl ToString) -> ApiError {
        ApiError {
            status: StatusCode::NOT_FOUND,
            error: "not_found".into(),
            detail: detail.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(&self)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Shared handle to the current index. Readers clone the inner `Arc`, so a
/// reload swaps the snapshot without blocking requests in flight.
#[derive(Clone)]
pub struct AppState {
    index: Arc<RwLock<Arc<SearchIndex>>>,
}

impl AppState {
    pub fn new(index: SearchIndex) -> AppState {
        AppState {
            index: Arc::new(RwLock::new(Arc::new(index))),
        }
    }

    pub fn current(&self) -> Arc<SearchIndex> {
        self.index.read().expect("index lock").clone()
    }

    pub fn replace(&self, index: SearchIndex) {
        *self.index.write().expect("index lock") = Arc::new(index);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Paging {
    pub offset: usize,
    pub limit: usize,
}

impl Paging {
    /// Reads `offset` and `limit`; limits above the maximum are clamped.
    pub fn from_query(query: &str) -> ApiResult<Paging> {
        let mut paging = Paging {
            offset: 0,
            limit: DEFAULT_LIMIT,
        };
        for (k, v) in form_urlencoded::parse(query.as_bytes()) {
            let parse = |v: &str| {
                v.trim()
                    .parse::<usize>()
                    .map_err(|_| ApiError::bad_request(format!("parameter {k:?}: invalid value {v:?}")))
            };
            match k.as_ref() {
                "offset" => paging.offset = parse(&v)?,
                "limit" => paging.limit = parse(&v)?.min(MAX_LIMIT),
                _ => {}
            }
        }
        Ok(paging)
    }
}

fn filter(query: &Option<String>) -> ApiResult<FilterSpec> {
    FilterSpec::from_query(query.as_deref().unwrap_or("")).map_err(ApiError::bad_request)
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Meta {
    pub home_country: String,
    pub priority_labels: Vec<String>,
    pub counts: BTreeMap<String, usize>,
    pub facets: FacetValues,
    pub topics: Vec<TopicInfo>,
    pub run: serde_json::Value,
}

pub fn meta(index: &SearchIndex) -> Meta {
    let s = &index.snapshot;
    let counts = BTreeMap::from([
        ("projects".to_string(), s.projects.len()),
        ("participations".to_string(), s.participations.len()),
        ("organisations".to_string(), s.organisations.len()),
        ("topics".to_string(), s.topics.len()),
    ]);
    Meta {
        home_country: s.home_country.clone(),
        priority_labels: s.priority_labels.clone(),
        counts,
        facets: index.facet_values(),
        topics: s.topics.clone(),
        run: s.run.clone(),
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ProjectPage<'a> {
    pub total: usize,
    pub offset: usize,
    pub limit: usize,
    pub items: Vec<&'a Project>,
}

pub fn projects_page<'a>(index: &'a SearchIndex, filter: &FilterSpec, paging: Paging) -> ProjectPage<'a> {
    let all = index.query_projects(filter);
    let total = all.len();
    ProjectPage {
        total,
        offset: paging.offset,
        limit: paging.limit,
        items: all.into_iter().skip(paging.offset).take(paging.limit).collect(),
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ParticipantDetail<'a> {
    #[serde(flatten)]
    pub participation: &'a Participation,
    pub organisation: Option<&'a Organisation>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ProjectDetail<'a> {
    pub project: &'a Project,
    pub participants: Vec<ParticipantDetail<'a>>,
}

pub fn project_detail<'a>(index: &'a SearchIndex, id: &str) -> Option<ProjectDetail<'a>> {
    let project = index.project(id)?;
    let participants = index
        .participations_of(id)
        .into_iter()
        .map(|p| ParticipantDetail {
            participation: p,
            organisation: p.org_id.as_deref().and_then(|o| index.organisation(o)),
        })
        .collect();
    Some(ProjectDetail { project, participants })
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct NetworkView {
    #[serde(flatten)]
    pub graph: CollaborationGraph,
    /// Precomputed positions for the nodes in `graph`.
    pub layout: BTreeMap<String, [f64; 2]>,
    pub external_partners: Vec<ExternalPartner>,
}

pub fn network_view(index: &SearchIndex, filter: &FilterSpec) -> NetworkView {
    let graph = index.network(filter);
    let layout = graph
        .nodes
        .iter()
        .filter_map(|n| {
            index
                .snapshot
                .network_layout
                .get(&n.org_id)
                .map(|xy| (n.org_id.clone(), *xy))
        })
        .collect();
    NetworkView {
        graph,
        layout,
        external_partners: index.external_partners(filter, Some(TOP_N)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct MapPoint {
    pub project_id: String,
    pub x: f64,
    pub y: f64,
    pub topic_id: Option<usize>,
    pub matched: bool,
}

/// Every mapped project, flagged with whether it passes the filter.
pub fn map_points(index: &SearchIndex, filter: &FilterSpec) -> Vec<MapPoint> {
    let mut matched = vec![false; index.len()];
    for i in index.query_positions(filter) {
        matched[i] = true;
    }
    index
        .snapshot
        .projects
        .iter()
        .zip(matched)
        .filter_map(|(p, m)| {
            p.enrichment.map_xy.map(|[x, y]| MapPoint {
                project_id: p.project_id.clone(),
                x,
                y,
                topic_id: p.enrichment.topic_id,
                matched: m,
            })
        })
        .collect()
}

async fn get_meta(State(st): State<AppState>) -> Response {
    Json(meta(&st.current())).into_response()
}

async fn get_projects(State(st): State<AppState>, RawQuery(q): RawQuery) -> ApiResult<Response> {
    let f = filter(&q)?;
    let paging = Paging::from_query(q.as_deref().unwrap_or(""))?;
    let index = st.current();
    Ok(Json(projects_page(&index, &f, paging)).into_response())
}

async fn get_project(State(st): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let index = st.current();
    match project_detail(&index, &id) {
        Some(d) => Ok(Json(d).into_response()),
        None => Err(ApiError::not_found(format!("no project {id:?}"))),
    }
}

async fn get_network(State(st): State<AppState>, RawQuery(q): RawQuery) -> ApiResult<Response> {
    let f = filter(&q)?;
    Ok(Json(network_view(&st.current(), &f)).into_response())
}

async fn get_map(State(st): State<AppState>, RawQuery(q): RawQuery) -> ApiResult<Response> {
    let f = filter(&q)?;
    Ok(Json(map_points(&st.current(), &f)).into_response())
}

async fn get_stats(State(st): State<AppState>, RawQuery(q): RawQuery) -> ApiResult<Response> {
    let f = filter(&q)?;
    Ok(Json(st.current().stats(&f)).into_response())
}

async fn get_export(
    State(st): State<AppState>,
    UrlPath(file): UrlPath<String>,
    RawQuery(q): RawQuery,
) -> ApiResult<Response> {
    let view: ExportView = file
        .strip_suffix(".csv")
        .ok_or_else(|| ApiError::not_found(format!("no export {file:?}")))?
        .parse()
        .map_err(ApiError::not_found)?;
    let f = filter(&q)?;
    let body = st.current().export_csv(&f, view);
    let disposition = format!("attachment; filename=\"{}.csv\"", view.as_str());
    Ok((
        [
            (header::CONTENT_TYPE, HeaderValue::from_static("text/csv; charset=utf-8")),
            (
                header::CONTENT_DISPOSITION,
                HeaderValue::from_str(&disposition).expect("ascii header"),
            ),
        ],
        body,
    )
        .into_response())
}

async fn fallback() -> ApiError {
    ApiError::not_found("no such endpoint")
}

fn cors(origins: &[String]) -> CorsLayer {
    let allow = if origins.iter().any(|o| o == "*") {
        AllowOrigin::any()
    } else {
        AllowOrigin::list(origins.iter().filter_map(|o| HeaderValue::from_str(o).ok()))
    };
    CorsLayer::new().allow_origin(allow).allow_methods([Method::GET])
}

pub fn router(state: AppState, cors_origins: &[String]) -> Router {
    Router::new()
        .route("/api/meta", get(get_meta))
        .route("/api/projects", get(get_projects))
        .route("/api/projects/{id}", get(get_project))
        .route("/api/network", get(get_network))
        .route("/api/map", get(get_map))
        .route("/api/stats", get(get_stats))
        .route("/api/export/{file}", get(get_export))
        .fallback(fallback)
        .layer(cors(cors_origins))
        .with_state(state)
}

pub fn load_index(path: &Path) -> std::io::Result<SearchIndex> {
    Ok(SearchIndex::build(Snapshot::load(path)?))
}

fn stamp(path: &Path) -> Option<(SystemTime, u64)> {
    let m = std::fs::metadata(path).ok()?;
    Some((m.modified().ok()?, m.len()))
}

/// Polls `path` and swaps in a new index whenever the file changes. A
/// snapshot that fails to load leaves the current one in place.
pub fn spawn_reloader(state: AppState, path: PathBuf, every: Duration) -> tokio::task::JoinHandle<()> {
    tokio::spawn(async move {
        let mut last = stamp(&path);
        let mut tick = tokio::time::interval(every);
        tick.tick().await;
        loop {
            tick.tick().await;
            let now = stamp(&path);
            if now.is_none() || now == last {
                continue;
            }
            last = now;
            let p = path.clone();
            match tokio::task::spawn_blocking(move || load_index(&p)).await {
                Ok(Ok(index)) => {
                    tracing::info!(projects = index.len(), "snapshot reloaded");
                    state.replace(index);
                }
                Ok(Err(e)) => tracing::warn!("snapshot reload failed: {e}"),
                Err(e) => tracing::warn!("snapshot reload task failed: {e}"),
            }
        }
    })
}

/// Serves `snapshot` on `addr` until ctrl-c.
pub async fn serve(
    snapshot: PathBuf,
    addr: SocketAddr,
    cors_origins: &[String],
    reload_every: Option<Duration>,
) -> anyhow::Result<()> {
    let p = snapshot.clone();
    let index = tokio::task::spawn_blocking(move || load_index(&p)).await??;
    let state = AppState::new(index);
    if let Some(every) = reload_every {
        spawn_reloader(state.clone(), snapshot, every);
    }
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state, cors_origins))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
