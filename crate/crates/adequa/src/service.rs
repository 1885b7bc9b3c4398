//! HTTP front end for a labelling campaign.
//!
//! One campaign per process. Mutations (propose, labels) are serialised by a
//! writer lock, computed on a copy of the state, checkpointed, and only then
//! published and acknowledged. Reads work on the latest published snapshot.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use adequa_core::campaign::{AdequacyScore, BatchProposal, CampaignState, Label};
use adequa_core::{Dataset, ErrorKind, Split};
use axum::body::Bytes;
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::Mutex;

use crate::checkpoint;
use crate::labels::LabelEntry;
use crate::report::Summary;

pub struct Session {
    data: Arc<Dataset>,
    state: RwLock<Arc<CampaignState>>,
    writer: Mutex<()>,
    checkpoint: PathBuf,
    manifest: Option<PathBuf>,
    token: Option<String>,
}

impl Session {
    pub fn new(
        data: Dataset,
        state: CampaignState,
        checkpoint: PathBuf,
        manifest: Option<PathBuf>,
        token: Option<String>,
    ) -> Arc<Self> {
        Arc::new(Session {
            data: Arc::new(data),
            state: RwLock::new(Arc::new(state)),
            writer: Mutex::new(()),
            checkpoint,
            manifest,
            token,
        })
    }

    pub fn snapshot(&self) -> Arc<CampaignState> {
        self.state.read().expect("state lock poisoned").clone()
    }

    // Runs a mutation on a copy of the state under the writer lock and
    // publishes it once the checkpoint is on disk.
    async fn mutate<T, F>(self: &Arc<Self>, f: F) -> Result<T, ApiError>
    where
        T: Send + 'static,
        F: FnOnce(&mut CampaignState, &Dataset) -> Result<T, ApiError> + Send + 'static,
    {
        let _guard = self.writer.lock().await;
        let session = self.clone();
        tokio::task::spawn_blocking(move || {
            let mut next = (*session.snapshot()).clone();
            let out = f(&mut next, &session.data)?;
            checkpoint::save(&next, session.manifest.as_deref(), &session.checkpoint)
                .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
            *session.state.write().expect("state lock poisoned") = Arc::new(next);
            Ok(out)
        })
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
    }
}

#[derive(Debug, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    status: StatusCode,
    pub error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

impl ApiError {
    fn new(status: StatusCode, error: impl Into<String>) -> Self {
        ApiError { status, error: error.into(), field: None }
    }

    fn field(field: impl Into<String>, error: impl Into<String>) -> Self {
        ApiError { status: StatusCode::BAD_REQUEST, error: error.into(), field: Some(field.into()) }
    }
}

impl From<adequa_core::Error> for ApiError {
    fn from(e: adequa_core::Error) -> Self {
        use adequa_core::Error as E;
        let status = match &e {
            E::StaleBatch(_) | E::BudgetExhausted { .. } | E::PoolExhausted => StatusCode::CONFLICT,
            E::UnexpectedLabel(_) | E::MissingLabel(_) => StatusCode::UNPROCESSABLE_ENTITY,
            E::UnknownId(_) => StatusCode::NOT_FOUND,
            _ if e.kind() == ErrorKind::Numerical => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self)).into_response()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Exploit,
    Explore,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalItem {
    pub id: String,
    pub strategy: Strategy,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalView {
    pub batch_id: String,
    pub items: Vec<ProposalItem>,
}

impl ProposalView {
    fn of(p: &BatchProposal, data: &Dataset) -> Self {
        let tagged = [(&p.exploit_ids, Strategy::Exploit), (&p.explore_ids, Strategy::Explore), (&p.random_ids, Strategy::Random)];
        let items = tagged
            .into_iter()
            .flat_map(|(ids, strategy)| ids.iter().map(move |id| (id, strategy)))
            .map(|(id, strategy)| ProposalItem {
                id: id.clone(),
                strategy,
                text: data.record(id).and_then(|r| r.text.clone()),
            })
            .collect();
        ProposalView { batch_id: p.batch_id.clone(), items }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelsBody {
    pub batch_id: String,
    pub labels: Vec<LabelEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub items: Vec<AdequacyScore>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputStatus {
    Reference,
    Proposed,
    Pool,
    Excluded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputView {
    pub id: String,
    pub text: Option<String>,
    pub split: Split,
    pub status: InputStatus,
    pub runs: Option<u32>,
    pub passes: Option<u32>,
    pub lsa: f64,
    pub log_density: f64,
}

#[derive(Debug, Deserialize)]
struct RankingQuery {
    limit: Option<usize>,
}

pub const DEFAULT_RANKING_LIMIT: usize = 100;

async fn get_campaign(State(s): State<Arc<Session>>) -> Json<Summary> {
    Json(Summary::of(&s.snapshot()))
}

async fn propose(State(s): State<Arc<Session>>) -> Result<Json<ProposalView>, ApiError> {
    // A retried request gets the batch that is already open.
    let snap = s.snapshot();
    if let Some(p) = snap.open_proposal() {
        return Ok(Json(ProposalView::of(p, &s.data)));
    }
    let view = s
        .mutate(|st, data| {
            if let Some(p) = st.open_proposal() {
                return Ok(ProposalView::of(p, data));
            }
            let p = st.propose_batch(data)?;
            Ok(ProposalView::of(&p, data))
        })
        .await?;
    Ok(Json(view))
}

fn parse_labels(body: &[u8]) -> Result<(String, BTreeMap<String, Label>), ApiError> {
    let mut de = serde_json::Deserializer::from_slice(body);
    let parsed: LabelsBody = serde_path_to_error::deserialize(&mut de)
        .map_err(|e| ApiError::field(e.path().to_string(), e.into_inner().to_string()))?;
    let mut labels = BTreeMap::new();
    for (i, entry) in parsed.labels.iter().enumerate() {
        let label = entry.to_label().map_err(|(f, msg)| ApiError::field(format!("labels[{i}].{f}"), msg))?;
        if labels.insert(entry.id.clone(), label).is_some() {
            return Err(ApiError::field(format!("labels[{i}].id"), format!("duplicate id {:?}", entry.id)));
        }
    }
    Ok((parsed.batch_id, labels))
}

async fn post_labels(State(s): State<Arc<Session>>, body: Bytes) -> Result<Json<Summary>, ApiError> {
    let (batch_id, labels) = parse_labels(&body)?;
    let summary = s
        .mutate(move |st, data| {
            st.ingest_labels(data, &batch_id, &labels)?;
            Ok(Summary::of(st))
        })
        .await?;
    Ok(Json(summary))
}

async fn ranking(State(s): State<Arc<Session>>, Query(q): Query<RankingQuery>) -> Result<Json<Ranking>, ApiError> {
    let limit = q.limit.unwrap_or(DEFAULT_RANKING_LIMIT);
    let snap = s.snapshot();
    let data = s.data.clone();
    let items = tokio::task::spawn_blocking(move || {
        let ids: Vec<&String> = snap.pool().iter().collect();
        snap.score_inputs(&data, &ids)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(Ranking { items: items.into_iter().take(limit).collect() }))
}

async fn input(State(s): State<Arc<Session>>, Path(id): Path<String>) -> Result<Json<InputView>, ApiError> {
    let Some(record) = s.data.record(&id) else {
        return Err(ApiError::new(StatusCode::NOT_FOUND, format!("unknown id {id:?}")));
    };
    let snap = s.snapshot();
    let status = if snap.reference().contains_key(&id) {
        InputStatus::Reference
    } else if snap.open_proposal().is_some_and(|p| p.ids().any(|x| *x == id)) {
        InputStatus::Proposed
    } else if snap.pool().contains(&id) {
        InputStatus::Pool
    } else {
        InputStatus::Excluded
    };
    let score = snap.score_inputs(&s.data, &[id.as_str()])?.remove(0);
    let outcome = snap.reference().get(&id);
    Ok(Json(InputView {
        id: id.clone(),
        text: record.text.clone(),
        split: record.split,
        status,
        runs: outcome.map(|o| o.runs),
        passes: outcome.map(|o| o.passes),
        lsa: score.lsa,
        log_density: score.log_density,
    }))
}

async fn require_token(State(s): State<Arc<Session>>, req: Request, next: Next) -> Response {
    if let Some(token) = &s.token {
        let ok = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|v| v == token);
        if !ok {
            return ApiError::new(StatusCode::UNAUTHORIZED, "missing or wrong bearer token").into_response();
        }
    }
    next.run(req).await
}

pub fn router(session: Arc<Session>) -> Router {
    Router::new()
        .route("/api/campaign", get(get_campaign))
        .route("/api/campaign/propose", post(propose))
        .route("/api/campaign/labels", post(post_labels))
        .route("/api/ranking", get(ranking))
        .route("/api/inputs/{id}", get(input))
        .layer(middleware::from_fn_with_state(session.clone(), require_token))
        .with_state(session)
}

pub async fn serve(session: Arc<Session>, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(session)).await
}
