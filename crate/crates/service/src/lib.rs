//! JSON API over an immutable cascade corpus.
//!
//! Times in query strings and request bodies are minutes since the post;
//! every payload reports times in seconds (`*_s` fields), as the library does.

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

use cascade_core::evaluation::ApePair;
use cascade_core::io::{Config, Gender, HistoryEntry, HistoryStore, UserRecord};
use cascade_core::seismic::InfectiousnessSeries;
use cascade_core::weseer::{adjusted_infectiousness_series, Recommendation};
use cascade_core::{ape_pair, predict_series, recommend_degree, whatif, Cascade, Channel, ModelParams, ModelTag, PredictionPoint};

/// Concurrent recommendation computations; each one already fans out over rayon.
const RECOMMENDATION_PERMITS: usize = 2;

pub struct AppState {
    corpus: BTreeMap<String, Cascade>,
    users: BTreeMap<String, UserRecord>,
    config: Config,
    params: ModelParams,
    history: HistoryStore,
    recommendations: Mutex<HashMap<String, Arc<Vec<u8>>>>,
    permits: Semaphore,
}

impl AppState {
    pub fn new(corpus: Vec<Cascade>, users: BTreeMap<String, UserRecord>, config: Config, history: HistoryStore) -> Self {
        let params = config.model_params();
        AppState {
            corpus: corpus.into_iter().map(|c| (c.article_id.clone(), c)).collect(),
            users,
            config,
            params,
            history,
            recommendations: Mutex::new(HashMap::new()),
            permits: Semaphore::new(RECOMMENDATION_PERMITS),
        }
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/articles", get(list_articles))
        .route("/articles/{id}/prediction", get(prediction))
        .route("/articles/{id}/whatif", post(whatif_handler))
        .route("/articles/{id}/propagation", get(propagation))
        .route("/articles/{id}/recommendation", get(recommendation))
        .route("/sessions/{sid}/history", get(history_list).post(history_append))
        .with_state(state)
}

pub async fn serve(addr: SocketAddr, state: Arc<AppState>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: &'static str,
    message: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, error: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                error,
                message: message.into(),
            },
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, "not_found", message)
    }
}

impl From<cascade_core::Error> for ApiError {
    fn from(e: cascade_core::Error) -> Self {
        use cascade_core::Error::*;
        match e {
            InsufficientData(m) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "insufficient_data", m),
            InvalidArgument(_) | OutOfWindow { .. } => ApiError::bad_request(e.to_string()),
            other => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T = Response> = std::result::Result<T, ApiError>;

fn json_bytes(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], bytes).into_response()
}

fn json<T: Serialize>(value: &T) -> ApiResult {
    serde_json::to_vec(value)
        .map(json_bytes)
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))
}

/// Parses a comma-separated list of numbers; blank input is an empty list.
pub fn parse_list(raw: &str) -> std::result::Result<Vec<f64>, String> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| format!("not a number: {s:?}"))
        })
        .collect()
}

impl AppState {
    fn article(&self, id: &str) -> ApiResult<&Cascade> {
        self.corpus
            .get(id)
            .ok_or_else(|| ApiError::not_found(format!("unknown article {id:?}")))
    }

    /// Evaluation times in seconds from a minute list, defaulting to the schedule boundaries.
    fn times(&self, raw: Option<&str>) -> ApiResult<Vec<f64>> {
        let horizon = self.params.schedule.horizon_s();
        let Some(raw) = raw else {
            return Ok(self.params.schedule.boundaries_s());
        };
        let mut times: Vec<f64> = parse_list(raw)
            .map_err(ApiError::bad_request)?
            .into_iter()
            .map(|m| m * 60.0)
            .collect();
        if times.is_empty() {
            return Err(ApiError::bad_request("times is empty"));
        }
        if let Some(bad) = times.iter().find(|t| !(0.0..=horizon).contains(*t)) {
            return Err(ApiError::bad_request(format!(
                "time {} min is outside [0, {}] min",
                bad / 60.0,
                horizon / 60.0
            )));
        }
        times.sort_by(f64::total_cmp);
        times.dedup();
        Ok(times)
    }

    fn n_init(&self, raw: Option<&str>) -> ApiResult<f64> {
        match raw {
            None => Ok(self.config.n_init),
            Some(s) => s
                .parse::<f64>()
                .ok()
                .filter(|v| *v > 0.0 && v.is_finite())
                .ok_or_else(|| ApiError::bad_request(format!("n_init must be a positive number, got {s:?}"))),
        }
    }

    fn one_day_size(&self, c: &Cascade) -> u64 {
        c.reshare_count(self.params.schedule.horizon_s())
    }
}

#[derive(Debug, Serialize)]
struct ArticleSummary<'a> {
    article_id: &'a str,
    post_time: i64,
    /// Reshares within the observation window.
    observed_size: u64,
    final_size: Option<u64>,
}

async fn list_articles(State(state): State<Arc<AppState>>) -> ApiResult {
    let list: Vec<ArticleSummary> = state
        .corpus
        .values()
        .map(|c| ArticleSummary {
            article_id: &c.article_id,
            post_time: c.post_time,
            observed_size: state.one_day_size(c),
            final_size: c.final_size,
        })
        .collect();
    json(&list)
}

#[derive(Debug, Deserialize)]
struct PredictionQuery {
    model: Option<String>,
    n_init: Option<String>,
    times: Option<String>,
}

#[derive(Debug, Serialize)]
struct ModelSeries {
    model: ModelTag,
    points: Vec<PredictionPoint>,
    /// Per-time APE against the one-day and final sizes; absent when either size is unknown or zero.
    apes: Option<Vec<ApePair>>,
}

#[derive(Debug, Serialize)]
struct PredictionResponse<'a> {
    article_id: &'a str,
    n_init: f64,
    epsilon_subcritical: f64,
    one_day_size: u64,
    final_size: Option<u64>,
    infectiousness: InfectiousnessSeries,
    models: Vec<ModelSeries>,
}

fn parse_models(raw: Option<&str>) -> ApiResult<Vec<ModelTag>> {
    match raw {
        None | Some("all") => Ok(ModelTag::ALL.to_vec()),
        Some(list) => {
            let mut models = list
                .split(',')
                .map(|m| m.trim().parse::<ModelTag>().map_err(|e| ApiError::bad_request(e.to_string())))
                .collect::<ApiResult<Vec<_>>>()?;
            models.sort();
            models.dedup();
            Ok(models)
        }
    }
}

async fn prediction(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<PredictionQuery>,
) -> ApiResult {
    let c = state.article(&id)?;
    let models = parse_models(q.model.as_deref())?;
    let n_init = state.n_init(q.n_init.as_deref())?;
    let times = state.times(q.times.as_deref())?;
    let one_day = state.one_day_size(c);
    let infectiousness = adjusted_infectiousness_series(c, &times, &state.params)?;
    let mut series = Vec::with_capacity(models.len());
    for model in models {
        let points = predict_series(c, &times, &state.params, model, n_init)?;
        let apes = match c.final_size {
            Some(f) if f > 0 && one_day > 0 => Some(
                points
                    .iter()
                    .map(|p| ape_pair(&p.outcome, one_day as f64, f as f64))
                    .collect::<cascade_core::Result<Vec<_>>>()?,
            ),
            _ => None,
        };
        series.push(ModelSeries { model, points, apes });
    }
    json(&PredictionResponse {
        article_id: &c.article_id,
        n_init,
        epsilon_subcritical: state.params.epsilon_subcritical,
        one_day_size: one_day,
        final_size: c.final_size,
        infectiousness,
        models: series,
    })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct WhatIfRequest {
    frame: usize,
    /// Evaluation time, minutes since the post.
    t: f64,
    n_init: Option<f64>,
}

async fn whatif_handler(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<WhatIfRequest>, axum::extract::rejection::JsonRejection>,
) -> ApiResult {
    let c = state.article(&id)?;
    let Json(req) = body.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let t_s = req.t * 60.0;
    if !(0.0..=state.params.schedule.horizon_s()).contains(&t_s) {
        return Err(ApiError::bad_request(format!("t = {} min is outside the observation window", req.t)));
    }
    let n_init = match req.n_init {
        Some(n) if n > 0.0 && n.is_finite() => n,
        Some(n) => return Err(ApiError::bad_request(format!("n_init must be positive, got {n}"))),
        None => state.config.n_init,
    };
    let report = whatif(c, req.frame, t_s, &state.params, n_init, state.config.big_node_threshold)?;
    json(&report)
}

#[derive(Debug, Deserialize)]
struct PropagationQuery {
    frame: Option<String>,
}

#[derive(Debug, Serialize)]
struct ParentLink {
    event_id: u64,
    parent_id: u64,
    parent_frame: usize,
    /// The parent shared in an earlier frame.
    previous_frame: bool,
}

#[derive(Debug, Default, Serialize)]
struct Portrait {
    /// Ten-year bands such as "20-29", plus "unknown".
    age_bands: BTreeMap<String, u64>,
    gender: BTreeMap<&'static str, u64>,
    regions: BTreeMap<String, u64>,
}

#[derive(Debug, Serialize)]
struct FramePropagation {
    frame: usize,
    start_s: f64,
    end_s: f64,
    shares: usize,
    channels: BTreeMap<&'static str, u64>,
    big_node_threshold: u64,
    big_nodes: Vec<u64>,
    small_nodes: Vec<u64>,
    links: Vec<ParentLink>,
    portrait: Portrait,
}

#[derive(Debug, Serialize)]
struct PropagationResponse<'a> {
    article_id: &'a str,
    frames: Vec<FramePropagation>,
}

fn gender_key(g: Gender) -> &'static str {
    match g {
        Gender::Male => "m",
        Gender::Female => "f",
        Gender::Unknown => "unknown",
    }
}

impl AppState {
    fn frame_detail(&self, c: &Cascade, frame: usize) -> ApiResult<FramePropagation> {
        let schedule = &self.params.schedule;
        let (start_s, end_s) = schedule
            .frame_bounds_s(frame)
            .ok_or_else(|| ApiError::bad_request(format!("frame {frame} out of range")))?;
        let threshold = self.config.big_node_threshold;
        let in_frame: Vec<_> = c
            .reshares()
            .filter(|e| schedule.frame_of(e.time_s).ok() == Some(frame))
            .collect();

        let mut channels: BTreeMap<&'static str, u64> = Channel::ALL.iter().map(|ch| (ch.as_str(), 0)).collect();
        let mut portrait = Portrait {
            gender: ["m", "f", "unknown"].into_iter().map(|g| (g, 0)).collect(),
            ..Portrait::default()
        };
        let (mut big_nodes, mut small_nodes, mut links) = (Vec::new(), Vec::new(), Vec::new());
        for e in &in_frame {
            *channels.entry(e.channel.as_str()).or_default() += 1;
            if e.degree >= threshold {
                big_nodes.push(e.event_id);
            } else {
                small_nodes.push(e.event_id);
            }
            if let Some(parent) = e.parent_id.and_then(|p| c.event(p)) {
                // The root sits at t = 0, which is always frame 0.
                let parent_frame = schedule.frame_of(parent.time_s).unwrap_or(0);
                links.push(ParentLink {
                    event_id: e.event_id,
                    parent_id: parent.event_id,
                    parent_frame,
                    previous_frame: parent_frame < frame,
                });
            }
            let user = self.users.get(&e.user_id);
            let band = match user.and_then(|u| u.age) {
                Some(a) => format!("{}-{}", a / 10 * 10, a / 10 * 10 + 9),
                None => "unknown".into(),
            };
            *portrait.age_bands.entry(band).or_default() += 1;
            *portrait
                .gender
                .entry(gender_key(user.map_or(Gender::Unknown, |u| u.gender)))
                .or_default() += 1;
            let region = user.and_then(|u| u.region.clone()).unwrap_or_else(|| "unknown".into());
            *portrait.regions.entry(region).or_default() += 1;
        }
        Ok(FramePropagation {
            frame,
            start_s,
            end_s,
            shares: in_frame.len(),
            channels,
            big_node_threshold: threshold,
            big_nodes,
            small_nodes,
            links,
            portrait,
        })
    }
}

async fn propagation(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<PropagationQuery>,
) -> ApiResult {
    let c = state.article(&id)?;
    let frames: Vec<usize> = match q.frame.as_deref() {
        None => (0..state.params.schedule.frame_count()).collect(),
        Some(raw) => vec![raw
            .trim()
            .parse()
            .map_err(|_| ApiError::bad_request(format!("frame must be a non-negative integer, got {raw:?}")))?],
    };
    let frames = frames
        .into_iter()
        .map(|f| state.frame_detail(c, f))
        .collect::<ApiResult<Vec<_>>>()?;
    json(&PropagationResponse {
        article_id: &c.article_id,
        frames,
    })
}

#[derive(Debug, Deserialize)]
struct RecommendationQuery {
    grid: Option<String>,
    times: Option<String>,
}

#[derive(Debug, Serialize)]
struct RecommendationResponse<'a> {
    article_id: &'a str,
    /// `final_size` when the ground truth is known, otherwise `one_day_size`.
    reference: &'static str,
    #[serde(flatten)]
    recommendation: Recommendation,
}

async fn recommendation(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<RecommendationQuery>,
) -> ApiResult {
    let c = state.article(&id)?;
    let grid = match q.grid.as_deref() {
        None => state.config.grid.clone(),
        Some(raw) => parse_list(raw).map_err(ApiError::bad_request)?,
    };
    let times = state.times(q.times.as_deref())?;
    let key = format!("{id}|{grid:?}|{times:?}");
    if let Some(hit) = state.recommendations.lock().expect("cache lock").get(&key) {
        return Ok(json_bytes(hit.as_ref().clone()));
    }

    let (reference, size) = match c.final_size {
        Some(f) if f > 0 => ("final_size", f),
        _ => ("one_day_size", state.one_day_size(c)),
    };
    if size == 0 {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "insufficient_data",
            "article has no reshares to compare against",
        ));
    }
    let _permit = state.permits.acquire().await.expect("semaphore is never closed");
    let worker = state.clone();
    let rec = tokio::task::spawn_blocking(move || {
        let c = &worker.corpus[&id];
        recommend_degree(c, &grid, size as f64, &times, &worker.params)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    let body = serde_json::to_vec(&RecommendationResponse {
        article_id: &c.article_id,
        reference,
        recommendation: rec,
    })
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?;
    state
        .recommendations
        .lock()
        .expect("cache lock")
        .insert(key, Arc::new(body.clone()));
    Ok(json_bytes(body))
}

async fn history_list(State(state): State<Arc<AppState>>, Path(sid): Path<String>) -> ApiResult {
    json(&state.history.list(&sid)?)
}

async fn history_append(
    State(state): State<Arc<AppState>>,
    Path(sid): Path<String>,
    body: Result<Json<HistoryEntry>, axum::extract::rejection::JsonRejection>,
) -> ApiResult {
    let Json(entry) = body.map_err(|e| ApiError::bad_request(e.body_text()))?;
    if !(entry.n_init > 0.0 && entry.n_init.is_finite()) || !entry.timestamp.is_finite() {
        return Err(ApiError::bad_request("n_init must be positive and timestamp finite"));
    }
    state.history.append(&sid, entry)?;
    let history = state.history.list(&sid)?;
    Ok((StatusCode::CREATED, json(&history)?).into_response())
}
