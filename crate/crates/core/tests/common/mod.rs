//! Shared helpers for the integration tests: independent reference
//! implementations, fixture generators and a random command driver.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use litscope_core::gateway::{EmbeddingVector, MockChat, MockEmbedder};
use litscope_core::session::{snapshot_bytes, parse_snapshot};
use litscope_core::tree::TreeNodeState;
use litscope_core::workflow::{transition_allowed, Cause};
use litscope_core::{
    AutoApprove, EmbeddingRecord, EventBody, KeywordSet, ManualClock, NewPipeline, NodeKind, NodePayload, NodeStatus,
    Owner, PipelineConfig, PipelineId, Services, Session, SessionConfig, SessionState, TreeNodeId, UserState,
};

// ---------------------------------------------------------------------------
// Reference math
// ---------------------------------------------------------------------------

/// Plain-loop cosine similarity.
pub fn brute_cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..a.len() {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// Offset percentage computed from first principles.
pub fn brute_offset(a: &[f64], b: &[f64]) -> f64 {
    let d = (1.0 - brute_cosine(a, b)) * 100.0;
    d.clamp(0.0, 100.0)
}

pub fn vector(values: Vec<f64>) -> EmbeddingVector {
    EmbeddingVector::new(values, "test")
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// For point `i`, all other indices ordered by distance (ties by index).
fn neighbour_order(points: &[Vec<f64>], i: usize) -> Vec<usize> {
    let mut others: Vec<usize> = (0..points.len()).filter(|&j| j != i).collect();
    others.sort_by(|&a, &b| {
        euclid(&points[i], &points[a])
            .partial_cmp(&euclid(&points[i], &points[b]))
            .unwrap()
            .then(a.cmp(&b))
    });
    others
}

/// Trustworthiness as defined by Venna and Kaski:
/// `1 - 2/(n k (2n - 3k - 1)) * sum_i sum_{j in U_k(i)} (r(i, j) - k)`
/// where `U_k(i)` are the embedded neighbours of `i` that are not among its
/// original neighbours and `r` is the rank in the original space.
pub fn brute_trustworthiness(original: &[Vec<f64>], embedded: &[Vec<f64>], k: usize) -> f64 {
    let n = original.len();
    let mut penalty = 0.0;
    for i in 0..n {
        let orig = neighbour_order(original, i);
        let rank: BTreeMap<usize, usize> = orig.iter().enumerate().map(|(r, &j)| (j, r + 1)).collect();
        let orig_k: BTreeSet<usize> = orig[..k].iter().copied().collect();
        for &j in &neighbour_order(embedded, i)[..k] {
            if !orig_k.contains(&j) {
                penalty += (rank[&j] - k) as f64;
            }
        }
    }
    let (n, k) = (n as f64, k as f64);
    1.0 - 2.0 / (n * k * (2.0 * n - 3.0 * k - 1.0)) * penalty
}

/// Lloyd's algorithm with k-means++ seeding and several restarts; returns
/// the best assignment by inertia.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = points[0].len();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..10 {
        let mut centers: Vec<Vec<f64>> = vec![points[rng.random_range(0..points.len())].clone()];
        while centers.len() < k {
            let d2: Vec<f64> = points
                .iter()
                .map(|p| centers.iter().map(|c| euclid(p, c).powi(2)).fold(f64::INFINITY, f64::min))
                .collect();
            let total: f64 = d2.iter().sum();
            let mut pick = rng.random::<f64>() * total;
            let mut idx = 0;
            for (i, d) in d2.iter().enumerate() {
                pick -= d;
                if pick <= 0.0 {
                    idx = i;
                    break;
                }
            }
            centers.push(points[idx].clone());
        }
        let mut assign = vec![0; points.len()];
        for _ in 0..100 {
            let next: Vec<usize> = points
                .iter()
                .map(|p| {
                    (0..k)
                        .min_by(|&a, &b| euclid(p, &centers[a]).partial_cmp(&euclid(p, &centers[b])).unwrap())
                        .unwrap()
                })
                .collect();
            let changed = next != assign;
            assign = next;
            for (c, center) in centers.iter_mut().enumerate() {
                let members: Vec<&Vec<f64>> = points.iter().zip(&assign).filter(|(_, &a)| a == c).map(|(p, _)| p).collect();
                if members.is_empty() {
                    continue;
                }
                *center = (0..dim).map(|d| members.iter().map(|m| m[d]).sum::<f64>() / members.len() as f64).collect();
            }
            if !changed {
                break;
            }
        }
        let inertia: f64 = points.iter().zip(&assign).map(|(p, &a)| euclid(p, &centers[a]).powi(2)).sum();
        if best.as_ref().is_none_or(|(b, _)| inertia < *b) {
            best = Some((inertia, assign));
        }
    }
    best.unwrap().1
}

/// Fraction of points whose cluster's majority label matches their own.
pub fn purity(assign: &[usize], labels: &[usize]) -> f64 {
    let mut table: BTreeMap<usize, BTreeMap<usize, usize>> = BTreeMap::new();
    for (&a, &l) in assign.iter().zip(labels) {
        *table.entry(a).or_default().entry(l).or_default() += 1;
    }
    let hits: usize = table.values().map(|m| m.values().copied().max().unwrap_or(0)).sum();
    hits as f64 / labels.len() as f64
}

/// Three Gaussian clusters of 20 points in 32 dimensions. Returns the points
/// and their cluster labels.
pub fn gaussian_clusters(seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = move || {
        // Box-Muller
        let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
        let u2: f64 = rng.random();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    };
    let centers: Vec<Vec<f64>> = (0..3).map(|_| (0..32).map(|_| 3.0 * normal()).collect()).collect();
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..20 {
            points.push(center.iter().map(|x| x + 0.5 * normal()).collect());
            labels.push(c);
        }
    }
    (points, labels)
}

pub fn records_for(points: &[Vec<f64>]) -> Vec<EmbeddingRecord> {
    points
        .iter()
        .enumerate()
        .map(|(i, p)| EmbeddingRecord {
            owner: Owner::Paper(format!("p{i:03}")),
            vector: vector(p.clone()),
        })
        .collect()
}

/// Char-indexed substring, written without the library helper.
pub fn chars_between(text: &str, start: usize, end: usize) -> String {
    text.chars().skip(start).take(end - start).collect()
}

// ---------------------------------------------------------------------------
// Sessions
// ---------------------------------------------------------------------------

pub struct Harness {
    pub session: Session,
    pub clock: ManualClock,
    pub chat: Arc<MockChat>,
    pub embedder: Arc<MockEmbedder>,
}

pub fn harness_at(clock: ManualClock) -> Harness {
    let chat = Arc::new(MockChat::agent());
    let embedder = Arc::new(MockEmbedder::new(32));
    let services = Services::mock_with(Arc::new(clock.clone()), chat.clone(), embedder.clone());
    let session = Session::create("s1".into(), SessionConfig::default(), services).unwrap();
    Harness {
        session,
        clock,
        chat,
        embedder,
    }
}

pub fn harness() -> Harness {
    harness_at(ManualClock::fixed())
}

pub const ROOT_QUERY: &str = "visualization for AI";

/// create, step/approve the four nodes, propose three directions,
/// materialize the first and run it to its report.
pub fn scripted_session(clock: ManualClock) -> Harness {
    let mut h = harness_at(clock);
    let s = &mut h.session;
    let p1 = s
        .create_pipeline(NewPipeline {
            query_text: ROOT_QUERY.into(),
            ..NewPipeline::default()
        })
        .unwrap();
    let pid = p1.pipeline_id.clone();
    for i in 0..4 {
        h.clock.advance(Duration::from_secs(3));
        let node = s.step(&pid).unwrap();
        assert_eq!(node.status, NodeStatus::AwaitingApproval, "{node:?}");
        s.approve(&pid, &pid.node(i)).unwrap();
    }
    let proposed = s.propose_directions(&p1.tree_node_id, Some(3)).unwrap();
    assert_eq!(proposed.len(), 3);
    h.clock.advance(Duration::from_secs(60));
    let p2 = s
        .materialize(
            &proposed[0],
            PipelineConfig {
                auto_approve: AutoApprove::all(),
                run_to_next_checkpoint: true,
            },
        )
        .unwrap();
    let last = s.step(&p2.pipeline_id).unwrap();
    assert_eq!((last.kind, last.status), (NodeKind::Synthesis, NodeStatus::Approved), "{last:?}");
    h
}

// ---------------------------------------------------------------------------
// Random command sequences
// ---------------------------------------------------------------------------

const QUERIES: [&str; 6] = [
    "visualization for AI",
    "saliency maps for model debugging",
    "trust in explainable interfaces",
    "embedding projection of documents",
    "provenance tracking in summaries",
    "interactive machine learning",
];

/// Draws choices from a fixed script, wrapping around; an empty script
/// always answers zero.
pub struct Choices<'a> {
    script: &'a [u32],
    at: usize,
}

impl<'a> Choices<'a> {
    pub fn new(script: &'a [u32]) -> Self {
        Self { script, at: 0 }
    }

    fn pick(&mut self, n: usize) -> usize {
        if n == 0 || self.script.is_empty() {
            return 0;
        }
        let v = self.script[self.at % self.script.len()];
        self.at += 1;
        v as usize % n
    }

    fn coin(&mut self) -> bool {
        self.pick(2) == 1
    }
}

pub fn random_script(seed: u64, len: usize) -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random()).collect()
}

fn settled_keywords(s: &Session, pid: &PipelineId) -> Option<KeywordSet> {
    match s.state().pipeline(pid).ok()?.nodes[0].output.as_ref()? {
        NodePayload::KeywordSet(k) => Some(k.clone()),
        _ => None,
    }
}

/// Runs `commands` commands chosen by `script`, each legal in the state it
/// is issued in. Every few commands an illegal one is also attempted and
/// must be rejected without side effects. Returns the session on success or
/// a description of the first violation.
pub fn run_random_sequence(script: &[u32], commands: usize) -> Result<Harness, String> {
    let mut h = harness();
    let mut ch = Choices::new(script);
    for step in 0..commands {
        h.clock.advance(Duration::from_millis(250));
        issue_legal(&mut h, &mut ch).map_err(|e| format!("command {step}: {e}"))?;
        if ch.pick(4) == 0 {
            probe_illegal(&mut h, &mut ch).map_err(|e| format!("probe after {step}: {e}"))?;
        }
        h.session.state().check().map_err(|e| format!("command {step}: invariant: {e}"))?;
    }
    check_log(&h.session)?;
    Ok(h)
}

enum Legal {
    Create(Option<TreeNodeId>),
    Step(PipelineId, bool),
    Approve(PipelineId, usize),
    EditKeywords(PipelineId),
    EditPapers(PipelineId),
    Rerun(PipelineId, usize),
    Propose(TreeNodeId),
    Materialize(TreeNodeId),
    UserState(String),
}

fn legal_commands(s: &Session) -> Vec<Legal> {
    let st = s.state();
    let mut out = Vec::new();
    out.push(Legal::Create(None));
    if st.pipelines.len() < 6 {
        for n in st.tree.nodes().filter(|n| n.state == TreeNodeState::Explored) {
            out.push(Legal::Create(Some(n.node_id.clone())));
        }
    }
    for p in st.pipelines.values() {
        if p.check_step().is_ok() {
            out.push(Legal::Step(p.pipeline_id.clone(), false));
            out.push(Legal::Step(p.pipeline_id.clone(), true));
        }
        for (i, n) in p.nodes.iter().enumerate() {
            if n.status == NodeStatus::AwaitingApproval {
                out.push(Legal::Approve(p.pipeline_id.clone(), i));
            }
            if p.check_rerun(i).is_ok() {
                out.push(Legal::Rerun(p.pipeline_id.clone(), i));
            }
        }
        if p.nodes[0].status.has_output() {
            out.push(Legal::EditKeywords(p.pipeline_id.clone()));
        }
        if p.nodes[1].status.has_output() {
            out.push(Legal::EditPapers(p.pipeline_id.clone()));
        }
    }
    for n in st.tree.nodes() {
        match n.state {
            TreeNodeState::Proposed => out.push(Legal::Materialize(n.node_id.clone())),
            TreeNodeState::Explored => {
                let pid = n.pipeline_id.as_ref().unwrap();
                if st.pipelines[pid].settled_output(NodeKind::Review).is_some() && st.tree.len() < 20 {
                    out.push(Legal::Propose(n.node_id.clone()));
                }
            }
        }
    }
    for id in st.latest_verdicts().keys() {
        out.push(Legal::UserState(id.clone()));
    }
    out
}

fn issue_legal(h: &mut Harness, ch: &mut Choices<'_>) -> Result<(), String> {
    let cmds = legal_commands(&h.session);
    let cmd = &cmds[ch.pick(cmds.len())];
    let s = &mut h.session;
    let auto = |ch: &mut Choices<'_>| PipelineConfig {
        auto_approve: match ch.pick(3) {
            0 => AutoApprove::none(),
            1 => AutoApprove::all(),
            _ => AutoApprove {
                query_expansion: true,
                search: true,
                ..AutoApprove::none()
            },
        },
        run_to_next_checkpoint: ch.coin(),
    };
    let r = match cmd {
        Legal::Create(parent) => {
            let q = QUERIES[ch.pick(QUERIES.len())];
            let config = auto(ch);
            s.create_pipeline(NewPipeline {
                query_text: q.into(),
                config,
                parent: parent.clone(),
            })
            .map(drop)
        }
        Legal::Step(pid, fail) => {
            if *fail {
                if ch.coin() {
                    h.chat.set_failing(true);
                } else {
                    h.embedder.set_failing(true);
                }
            }
            let r = s.step(pid).map(drop);
            h.chat.set_failing(false);
            h.embedder.set_failing(false);
            r
        }
        Legal::Approve(pid, i) => s.approve(pid, &pid.node(*i)).map(drop),
        Legal::EditKeywords(pid) => {
            let mut k = settled_keywords(s, pid).unwrap_or_default();
            match ch.pick(3) {
                0 => {
                    k.insert(["user study", "trust", "layout"][ch.pick(3)]);
                }
                1 if k.len() > 1 => {
                    let drop_kw = k.iter().nth(ch.pick(k.len())).unwrap().to_owned();
                    k = k.iter().filter(|x| *x != drop_kw).collect();
                }
                _ => k = KeywordSet::from_iter(["saliency"]),
            }
            s.edit_output(pid, &pid.node(0), NodePayload::KeywordSet(k)).map(drop)
        }
        Legal::EditPapers(pid) => {
            let Some(NodePayload::PaperList(ids)) = s.state().pipeline(pid).unwrap().nodes[1].output.clone() else {
                return Err("search output missing".into());
            };
            let keep: Vec<String> = ids.iter().filter(|_| ch.pick(3) != 0).cloned().collect();
            s.edit_output(pid, &pid.node(1), NodePayload::PaperList(keep)).map(drop)
        }
        Legal::Rerun(pid, i) => s.rerun(pid, &pid.node(*i)).map(drop),
        Legal::Propose(node) => {
            let n = 1 + ch.pick(3);
            s.propose_directions(node, Some(n)).map(drop)
        }
        Legal::Materialize(node) => {
            let config = auto(ch);
            s.materialize(node, config).map(drop)
        }
        Legal::UserState(id) => {
            let state = [UserState::Accepted, UserState::Rejected, UserState::Neutral][ch.pick(3)];
            s.set_user_state(id, state).map(drop)
        }
    };
    r.map_err(|e| format!("legal command failed: {} ({e})", e.code()))
}

/// Attempts a command that the current state forbids and checks that it is
/// rejected without recording anything.
fn probe_illegal(h: &mut Harness, ch: &mut Choices<'_>) -> Result<(), String> {
    let s = &mut h.session;
    let before = s.events().len();
    let pids: Vec<PipelineId> = s.state().pipelines.keys().cloned().collect();
    let result = match (pids.is_empty(), ch.pick(6)) {
        (_, 0) => s.create_pipeline(NewPipeline {
            query_text: "   ".into(),
            ..NewPipeline::default()
        }).map(drop),
        (_, 1) => s.set_user_state("0000.00000", UserState::Accepted).map(drop),
        (_, 2) => s.materialize(&"s1.t999".into(), PipelineConfig::default()).map(drop),
        (true, _) => s.approve(&"s1.p999".into(), &"s1.p999.n0".into()).map(drop),
        (false, k) => {
            let pid = &pids[ch.pick(pids.len())];
            let p = s.state().pipeline(pid).unwrap().clone();
            match k {
                3 => match (0..4).find(|&i| p.nodes[i].status != NodeStatus::AwaitingApproval) {
                    Some(i) => s.approve(pid, &pid.node(i)).map(drop),
                    None => return Ok(()),
                },
                4 => match p.check_step() {
                    Ok(_) => return Ok(()),
                    Err(_) => s.step(pid).map(drop),
                },
                _ => match (0..4).find(|&i| p.check_rerun(i).is_err()) {
                    Some(i) => s.rerun(pid, &pid.node(i)).map(drop),
                    None => return Ok(()),
                },
            }
        }
    };
    match result {
        Ok(()) => Err("illegal command was accepted".into()),
        Err(_) if s.events().len() != before => Err("rejected command recorded events".into()),
        Err(_) => Ok(()),
    }
}

/// Replays the log one event at a time and checks every status change
/// against the lattice, the checkpoint gate and downstream invalidation.
pub fn check_log(s: &Session) -> Result<(), String> {
    let events = s.events();
    let mut state = SessionState::from_first(&events[0]).map_err(|e| e.to_string())?;
    for e in &events[1..] {
        let before = state.pipelines.clone();
        state.apply(e).map_err(|x| format!("seq {}: {x}", e.seq))?;
        for (pid, run) in &state.pipelines {
            for (i, node) in run.nodes.iter().enumerate() {
                let from = before.get(pid).map(|b| b.nodes[i].status);
                let to = node.status;
                match from {
                    None if to != NodeStatus::Pending => return Err(format!("{} born {to:?}", node.node_id)),
                    Some(from) if from != to => {
                        let causes = [Cause::Step, Cause::Finish, Cause::Approve, Cause::Edit, Cause::Rerun, Cause::Invalidate];
                        if !causes.iter().any(|&c| transition_allowed(from, to, c)) {
                            return Err(format!("seq {}: {} moved {from:?} -> {to:?}", e.seq, node.node_id));
                        }
                    }
                    _ => {}
                }
            }
            run.check().map_err(|x| format!("seq {}: {x}", e.seq))?;
        }
        let changed_at = match &e.body {
            EventBody::NodeEdited { pipeline_id, node_id, .. } => Some((pipeline_id, node_id)),
            EventBody::NodeStarted {
                pipeline_id,
                node_id,
                rerun: true,
            } => Some((pipeline_id, node_id)),
            _ => None,
        };
        if let Some((pid, nid)) = changed_at {
            let run = &state.pipelines[pid];
            let i = run.index_of(nid).unwrap();
            for n in &run.nodes[i + 1..] {
                if n.status != NodeStatus::Pending || n.output.is_some() {
                    return Err(format!("seq {}: {} not invalidated", e.seq, n.node_id));
                }
            }
        }
    }
    if &state != s.state() {
        return Err("replayed state differs from the live state".into());
    }
    Ok(())
}

/// Replay, snapshot round trip and byte stability for a finished session.
pub fn check_persistence(s: &Session) -> Result<(), String> {
    let replayed = SessionState::replay(s.events()).map_err(|e| e.to_string())?;
    if &replayed != s.state() {
        return Err("replay differs".into());
    }
    let bytes = snapshot_bytes(s.state(), s.events());
    let loaded = parse_snapshot(&bytes).map_err(|e| e.to_string())?;
    if &loaded.state != s.state() || loaded.events != s.events() {
        return Err("snapshot round trip changed the state".into());
    }
    if snapshot_bytes(&loaded.state, &loaded.events) != bytes {
        return Err("re-saving a loaded snapshot changed its bytes".into());
    }
    Ok(())
}
