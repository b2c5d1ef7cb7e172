//! HTTP+JSON API and the per-session event stream.

use std::collections::BTreeSet;
use std::convert::Infallible;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::sse::{Event as SseEvent, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use litscope_core::ids::session_of;
use litscope_core::session::{ErrorClass, InspectView, PaperView, ProjectionView};
use litscope_core::space::ProjectionPoint;
use litscope_core::{
    AutoApprove, Event, ExplorationTree, NewPipeline, NodeId, NodePayload, NodeRecord, PipelineConfig, PipelineId,
    PipelineRun, QueryTreeNode, ReviewVerdict, SessionConfig, SessionError, SessionId, TreeNodeId, UserState,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::broadcast::error::RecvError;

use crate::hub::{Hub, SessionHandle};

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: String,
    pub message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            code: "InvalidRequest".into(),
            message: message.into(),
        }
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let status = match e.class() {
            ErrorClass::Validation => StatusCode::BAD_REQUEST,
            ErrorClass::NotFound => StatusCode::NOT_FOUND,
            ErrorClass::Conflict => StatusCode::CONFLICT,
            ErrorClass::Provider => StatusCode::BAD_GATEWAY,
            ErrorClass::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self {
            status,
            code: e.code().into(),
            message: e.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "code": self.code, "message": self.message } });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Parses an optional JSON body; an empty body is the type's default.
fn body<T: DeserializeOwned + Default>(bytes: &Bytes) -> Result<T, ApiError> {
    if bytes.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(bytes).map_err(|e| ApiError::bad_request(format!("malformed JSON body: {e}")))
}

fn handle_for(hub: &Hub, scoped: &str) -> Result<SessionHandle, ApiError> {
    let sid = session_of(scoped).ok_or_else(|| ApiError {
        status: StatusCode::NOT_FOUND,
        code: "UnknownSession".into(),
        message: format!("{scoped} does not name a session-scoped entity"),
    })?;
    Ok(hub.get(&sid)?)
}

pub fn router(hub: Arc<Hub>) -> Router {
    Router::new()
        .route("/health", get(|| async { Json(json!({ "status": "ok" })) }))
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{sid}", get(get_session))
        .route("/sessions/{sid}/pipelines", post(create_pipeline))
        .route("/sessions/{sid}/tree", get(get_tree))
        .route("/sessions/{sid}/projection", get(get_projection))
        .route("/sessions/{sid}/papers/{arxiv_id}", get(get_paper))
        .route("/sessions/{sid}/papers/{arxiv_id}/state", post(set_paper_state_in))
        .route("/sessions/{sid}/events", get(events))
        .route("/pipelines/{pid}", get(get_pipeline))
        .route("/pipelines/{pid}/step", post(step))
        .route("/pipelines/{pid}/nodes/{nid}", get(inspect))
        .route("/pipelines/{pid}/nodes/{nid}/approve", post(approve))
        .route("/pipelines/{pid}/nodes/{nid}/rerun", post(rerun))
        .route("/pipelines/{pid}/nodes/{nid}/edit", post(edit))
        .route("/tree/{node}", get(get_tree_node))
        .route("/tree/{node}/centroid", get(get_centroid))
        .route("/tree/{node}/propose", post(propose))
        .route("/tree/{node}/materialize", post(materialize))
        .route("/papers/{arxiv_id}/state", post(set_paper_state))
        .with_state(hub)
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct CreateSession {
    config: Option<SessionConfig>,
}

#[derive(Debug, Serialize)]
pub struct SessionView {
    pub session_id: SessionId,
    pub created_at: chrono::DateTime<chrono::Utc>,
    pub config: SessionConfig,
    pub pipelines: Vec<PipelineRun>,
    pub tree: ExplorationTree,
    pub paper_count: usize,
    pub user_states: std::collections::BTreeMap<String, UserState>,
    pub last_seq: u64,
}

async fn create_session(State(hub): State<Arc<Hub>>, bytes: Bytes) -> Result<(StatusCode, Json<SessionView>), ApiError> {
    let req: CreateSession = body(&bytes)?;
    let id = hub.create(req.config.unwrap_or_default())?;
    let view = session_view(&hub.get(&id)?).await?;
    Ok((StatusCode::CREATED, Json(view)))
}

async fn list_sessions(State(hub): State<Arc<Hub>>) -> Json<Vec<SessionId>> {
    Json(hub.ids())
}

async fn session_view(h: &SessionHandle) -> Result<SessionView, ApiError> {
    Ok(h.call(|s| {
        let st = s.state();
        Ok(SessionView {
            session_id: st.session_id.clone(),
            created_at: st.created_at,
            config: st.config.clone(),
            pipelines: st.pipelines_in_order().into_iter().cloned().collect(),
            tree: st.tree.clone(),
            paper_count: st.corpus.len(),
            user_states: st.user_states.clone(),
            last_seq: st.last_seq,
        })
    })
    .await?)
}

async fn get_session(State(hub): State<Arc<Hub>>, Path(sid): Path<String>) -> ApiResult<SessionView> {
    Ok(Json(session_view(&hub.get(&SessionId(sid))?).await?))
}

/// Pipeline options accepted when creating or materializing a pipeline.
/// `auto_approve` is a boolean or a per-kind map.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct PipelineOptions {
    query_text: Option<String>,
    auto_approve: Option<AutoApprove>,
    run_to_next_checkpoint: Option<bool>,
    parent: Option<TreeNodeId>,
}

impl PipelineOptions {
    fn config(&self) -> PipelineConfig {
        PipelineConfig {
            auto_approve: self.auto_approve.unwrap_or_default(),
            run_to_next_checkpoint: self.run_to_next_checkpoint.unwrap_or(false),
        }
    }
}

async fn create_pipeline(
    State(hub): State<Arc<Hub>>,
    Path(sid): Path<String>,
    bytes: Bytes,
) -> Result<(StatusCode, Json<PipelineRun>), ApiError> {
    let opts: PipelineOptions = body(&bytes)?;
    let req = NewPipeline {
        query_text: opts.query_text.clone().ok_or_else(|| ApiError::bad_request("query_text is required"))?,
        config: opts.config(),
        parent: opts.parent.clone(),
    };
    let run = hub.get(&SessionId(sid))?.call(move |s| s.create_pipeline(req)).await?;
    Ok((StatusCode::CREATED, Json(run)))
}

async fn get_pipeline(State(hub): State<Arc<Hub>>, Path(pid): Path<String>) -> ApiResult<PipelineRun> {
    let h = handle_for(&hub, &pid)?;
    let pid = PipelineId(pid);
    Ok(Json(h.call(move |s| Ok(s.state().pipeline(&pid)?.clone())).await?))
}

/// Result of a command that executes or settles nodes.
#[derive(Debug, Serialize)]
pub struct NodeOutcome {
    pub node: NodeRecord,
    pub pipeline: PipelineRun,
}

async fn node_command<F>(hub: &Hub, pid: String, nid: Option<String>, f: F) -> ApiResult<NodeOutcome>
where
    F: FnOnce(&mut litscope_core::Session, &PipelineId, Option<&NodeId>) -> Result<NodeRecord, SessionError>
        + Send
        + 'static,
{
    let h = handle_for(hub, &pid)?;
    let pid = PipelineId(pid);
    let nid = nid.map(NodeId);
    let out = h
        .call(move |s| {
            let node = f(s, &pid, nid.as_ref())?;
            Ok(NodeOutcome {
                node,
                pipeline: s.state().pipeline(&pid)?.clone(),
            })
        })
        .await?;
    Ok(Json(out))
}

fn record_of(run: &PipelineRun, nid: &NodeId) -> Result<NodeRecord, SessionError> {
    Ok(run.nodes[run.index_of(nid)?].clone())
}

async fn step(State(hub): State<Arc<Hub>>, Path(pid): Path<String>) -> ApiResult<NodeOutcome> {
    node_command(&hub, pid, None, |s, pid, _| s.step(pid)).await
}

async fn approve(State(hub): State<Arc<Hub>>, Path((pid, nid)): Path<(String, String)>) -> ApiResult<NodeOutcome> {
    node_command(&hub, pid, Some(nid), |s, pid, nid| {
        let nid = nid.unwrap();
        let run = s.approve(pid, nid)?;
        record_of(&run, nid)
    })
    .await
}

async fn rerun(State(hub): State<Arc<Hub>>, Path((pid, nid)): Path<(String, String)>) -> ApiResult<NodeOutcome> {
    node_command(&hub, pid, Some(nid), |s, pid, nid| s.rerun(pid, nid.unwrap())).await
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EditBody {
    payload: Option<NodePayload>,
}

async fn edit(
    State(hub): State<Arc<Hub>>,
    Path((pid, nid)): Path<(String, String)>,
    bytes: Bytes,
) -> ApiResult<NodeOutcome> {
    let req: EditBody = body(&bytes)?;
    let payload = req.payload.ok_or_else(|| ApiError::bad_request("payload is required"))?;
    node_command(&hub, pid, Some(nid), move |s, pid, nid| {
        let nid = nid.unwrap();
        let run = s.edit_output(pid, nid, payload)?;
        record_of(&run, nid)
    })
    .await
}

async fn inspect(State(hub): State<Arc<Hub>>, Path((pid, nid)): Path<(String, String)>) -> ApiResult<InspectView> {
    let h = handle_for(&hub, &pid)?;
    let (pid, nid) = (PipelineId(pid), NodeId(nid));
    Ok(Json(h.call(move |s| s.inspect(&pid, &nid)).await?))
}

async fn get_tree(State(hub): State<Arc<Hub>>, Path(sid): Path<String>) -> ApiResult<ExplorationTree> {
    Ok(Json(hub.get(&SessionId(sid))?.call(|s| Ok(s.state().tree.clone())).await?))
}

async fn get_tree_node(State(hub): State<Arc<Hub>>, Path(node): Path<String>) -> ApiResult<QueryTreeNode> {
    let h = handle_for(&hub, &node)?;
    let node = TreeNodeId(node);
    Ok(Json(h.call(move |s| Ok(s.state().tree.get(&node)?.clone())).await?))
}

async fn get_centroid(State(hub): State<Arc<Hub>>, Path(node): Path<String>) -> ApiResult<ProjectionPoint> {
    let h = handle_for(&hub, &node)?;
    let node = TreeNodeId(node);
    Ok(Json(h.call(move |s| s.query_centroid(&node)).await?))
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ProposeBody {
    n: Option<usize>,
}

#[derive(Debug, Serialize)]
pub struct Proposed {
    pub proposed: Vec<QueryTreeNode>,
}

async fn propose(State(hub): State<Arc<Hub>>, Path(node): Path<String>, bytes: Bytes) -> ApiResult<Proposed> {
    let req: ProposeBody = body(&bytes)?;
    let h = handle_for(&hub, &node)?;
    let node = TreeNodeId(node);
    let out = h
        .call(move |s| {
            let ids = s.propose_directions(&node, req.n)?;
            let tree = &s.state().tree;
            let proposed = ids.iter().map(|id| tree.get(id).cloned()).collect::<Result<_, _>>()?;
            Ok(Proposed { proposed })
        })
        .await?;
    Ok(Json(out))
}

async fn materialize(
    State(hub): State<Arc<Hub>>,
    Path(node): Path<String>,
    bytes: Bytes,
) -> Result<(StatusCode, Json<PipelineRun>), ApiError> {
    let opts: PipelineOptions = body(&bytes)?;
    if opts.query_text.is_some() || opts.parent.is_some() {
        return Err(ApiError::bad_request("materialize takes only auto_approve and run_to_next_checkpoint"));
    }
    let h = handle_for(&hub, &node)?;
    let node = TreeNodeId(node);
    let config = opts.config();
    let run = h.call(move |s| s.materialize(&node, config)).await?;
    Ok((StatusCode::CREATED, Json(run)))
}

#[derive(Debug, Default, Deserialize)]
struct ProjectionQuery {
    iterations: Option<String>,
}

async fn get_projection(
    State(hub): State<Arc<Hub>>,
    Path(sid): Path<String>,
    Query(q): Query<ProjectionQuery>,
) -> ApiResult<ProjectionView> {
    let iterations: BTreeSet<TreeNodeId> = q
        .iterations
        .unwrap_or_default()
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(TreeNodeId::from)
        .collect();
    Ok(Json(hub.get(&SessionId(sid))?.call(move |s| s.projection(&iterations)).await?))
}

async fn get_paper(State(hub): State<Arc<Hub>>, Path((sid, arxiv_id)): Path<(String, String)>) -> ApiResult<PaperView> {
    Ok(Json(hub.get(&SessionId(sid))?.call(move |s| s.paper(&arxiv_id)).await?))
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct StateBody {
    state: Option<UserState>,
    session_id: Option<SessionId>,
}

async fn set_state_on(h: SessionHandle, arxiv_id: String, state: UserState) -> ApiResult<ReviewVerdict> {
    Ok(Json(h.call(move |s| s.set_user_state(&arxiv_id, state)).await?))
}

async fn set_paper_state_in(
    State(hub): State<Arc<Hub>>,
    Path((sid, arxiv_id)): Path<(String, String)>,
    bytes: Bytes,
) -> ApiResult<ReviewVerdict> {
    let req: StateBody = body(&bytes)?;
    let state = req.state.ok_or_else(|| ApiError::bad_request("state is required"))?;
    set_state_on(hub.get(&SessionId(sid))?, arxiv_id, state).await
}

/// arXiv ids carry no session prefix, so the session comes from the body or,
/// failing that, from the unique session that has reviewed the paper.
async fn set_paper_state(
    State(hub): State<Arc<Hub>>,
    Path(arxiv_id): Path<String>,
    bytes: Bytes,
) -> ApiResult<ReviewVerdict> {
    let req: StateBody = body(&bytes)?;
    let state = req.state.ok_or_else(|| ApiError::bad_request("state is required"))?;
    if let Some(sid) = req.session_id {
        return set_state_on(hub.get(&sid)?, arxiv_id, state).await;
    }
    let mut owners = Vec::new();
    for sid in hub.ids() {
        let h = hub.get(&sid)?;
        let id = arxiv_id.clone();
        if h.call(move |s| Ok(s.has_verdict(&id))).await? {
            owners.push(h);
        }
    }
    match owners.len() {
        0 => Err(SessionError::UnknownPaper(arxiv_id).into()),
        1 => set_state_on(owners.pop().unwrap(), arxiv_id, state).await,
        n => Err(ApiError::bad_request(format!(
            "{arxiv_id} is reviewed in {n} sessions; pass session_id"
        ))),
    }
}

#[derive(Debug, Default, Deserialize)]
struct StreamQuery {
    /// Replay logged events with `seq > from` before streaming live ones.
    from: Option<u64>,
}

fn sse_event(e: &Event) -> SseEvent {
    let data = serde_json::to_string(e).expect("events serialize");
    SseEvent::default().id(e.seq.to_string()).event(e.body.kind()).data(data)
}

async fn events(
    State(hub): State<Arc<Hub>>,
    Path(sid): Path<String>,
    Query(q): Query<StreamQuery>,
) -> Result<Sse<impl Stream<Item = Result<SseEvent, Infallible>>>, ApiError> {
    let h = hub.get(&SessionId(sid))?;
    // Subscribe before reading the backlog so nothing falls in between.
    let rx = h.subscribe();
    let backlog: Vec<Event> = match q.from {
        Some(from) => h.call(move |s| Ok(s.events().iter().filter(|e| e.seq > from).cloned().collect())).await?,
        None => Vec::new(),
    };
    let last = backlog.last().map(|e| e.seq).or(q.from).unwrap_or(0);
    let head = stream::iter(backlog.iter().map(sse_event).map(Ok).collect::<Vec<_>>());
    let live = stream::unfold((rx, last), |(mut rx, last)| async move {
        loop {
            match rx.recv().await {
                Ok(e) if e.seq <= last => continue,
                Ok(e) => {
                    let seq = e.seq;
                    return Some((Ok(sse_event(&e)), (rx, seq)));
                }
                Err(RecvError::Lagged(n)) => {
                    tracing::warn!(skipped = n, "event stream subscriber lagged");
                    continue;
                }
                Err(RecvError::Closed) => return None,
            }
        }
    });
    Ok(Sse::new(head.chain(live)).keep_alive(KeepAlive::new().interval(Duration::from_secs(15))))
}
