//! Backbone construction when only a set `S` of nodes starts.
//!
//! Three phases with commonly known boundaries:
//!
//! 1. the MIS election among `S`; woken nodes outside `S` ignore it;
//! 2. a token search from every elected leader, each original round
//!    emulated by one execution of the light ssf, where a node follows the
//!    highest source name it has heard;
//! 3. the full Backbone construction on all nodes.

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use serde::Serialize;

use super::connect::{self, BackboneCore, BackboneMsg, BackboneResult, ConnectLayout};
use super::dfs::{Color, DfsCore, DfsMode, DfsMsg, DfsPlan};
use super::mis::{self, MisCore, MisMsg, MisOutcome, MisSchedule, MisStatus};
use super::{heavy_family, light_family, next_slot_round, Params, ProtocolError};
use crate::combinat::{log2_ceil, SelectionFamily};
use crate::engine::{self, Action, BitSizes, BitStream, Behavior, Message, NodeCtx, Payload, Poll, StartMode, Summary};
use crate::phys::{Name, Network};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EmuMsg {
    Mis(MisMsg),
    Dfs { source: Name, msg: DfsMsg },
    Bb(BackboneMsg),
}

impl Payload for EmuMsg {
    fn control_bits(&self, s: &BitSizes) -> u32 {
        match self {
            EmuMsg::Mis(m) => m.control_bits(s),
            EmuMsg::Dfs { msg, .. } => s.name + msg.control_bits(s),
            EmuMsg::Bb(m) => m.control_bits(s),
        }
    }
}

/// Phase boundaries, common knowledge of every node.
#[derive(Debug, Clone)]
pub struct EmuPlan {
    pub mis: Arc<MisSchedule>,
    pub dfs: Arc<DfsPlan>,
    pub light: Arc<SelectionFamily>,
    /// Start of the emulated search.
    pub t1: u64,
    /// Original rounds in the search window.
    pub window: u64,
    /// Start of the Backbone construction.
    pub t3: u64,
    pub bb_mis: Arc<MisSchedule>,
    pub bb_layout: Arc<ConnectLayout>,
}

impl EmuPlan {
    pub fn new(network: &Network, params: &Params) -> Result<Self, ProtocolError> {
        let n = network.name_space();
        let heavy = heavy_family(n, params)?;
        let light = light_family(n, params)?;
        let mis = Arc::new(MisSchedule::new(0, network.max_degree(), n, params, heavy));
        let l = log2_ceil(n as u64) as f64;
        let window = (params.dfs_window * n as f64 * l * l).ceil() as u64;
        let t1 = mis.end();
        let t3 = t1 + window * light.len() as u64;
        let (bb_mis, bb_layout) = connect::backbone_plan(network, params, t3)?;
        Ok(EmuPlan { mis, dfs: Arc::new(DfsPlan::new(n, params)), light, t1, window, t3, bb_mis, bb_layout })
    }

    fn block_len(&self) -> u64 {
        self.light.len() as u64
    }

    fn block_of(&self, t: u64) -> u64 {
        (t - self.t1) / self.block_len()
    }

    fn block_start(&self, k: u64) -> u64 {
        self.t1 + k * self.block_len()
    }
}

/// A change of stored source or activity, at an original round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SourceEvent {
    pub round: u64,
    pub source: Name,
    pub active: bool,
}

#[derive(Debug, Clone)]
pub struct EmuNode {
    name: Name,
    plan: Arc<EmuPlan>,
    /// Round of the first call, and whether the node was in the start set.
    pub woken: Option<(u64, bool)>,
    pub mis: Option<MisCore>,
    mis_poll: Option<u64>,
    pub stored: Option<Name>,
    pub active: bool,
    pub dfs: Option<DfsCore>,
    tx: Option<(u64, EmuMsg)>,
    inbox: Vec<(Name, Name, DfsMsg)>,
    inbox_block: u64,
    pub events: Vec<SourceEvent>,
    pub backbone: Option<BackboneCore>,
}

impl EmuNode {
    pub fn new(name: Name, plan: Arc<EmuPlan>) -> Self {
        EmuNode {
            name,
            plan,
            woken: None,
            mis: None,
            mis_poll: None,
            stored: None,
            active: false,
            dfs: None,
            tx: None,
            inbox: Vec::new(),
            inbox_block: 0,
            events: Vec::new(),
            backbone: None,
        }
    }

    fn in_start_set(&self) -> bool {
        self.woken.is_some_and(|(_, s)| s)
    }

    fn adopt(&mut self, k: u64, source: Name, active: bool) {
        self.stored = Some(source);
        self.active = active;
        self.events.push(SourceEvent { round: k, source, active });
    }

    /// Channel feedback for the emulated original round `inbox_block`.
    fn settle(&mut self) {
        if self.inbox.is_empty() {
            return;
        }
        let k = self.inbox_block;
        let inbox = std::mem::take(&mut self.inbox);
        let senders_of = |s: Name| -> BTreeSet<Name> {
            inbox.iter().filter(|m| m.1 == s).map(|m| m.0).collect()
        };
        let top = inbox.iter().map(|m| m.1).max().expect("nonempty");
        if self.stored.map_or(true, |s| top > s) {
            self.dfs = Some(DfsCore::new(self.name, self.plan.dfs.clone(), DfsMode::Full));
            self.tx = None;
            let single = senders_of(top).len() == 1;
            self.adopt(k, top, single);
        }
        let stored = self.stored.expect("set above");
        let senders = senders_of(stored);
        if senders.len() != 1 {
            return;
        }
        if !self.active {
            self.adopt(k, stored, true);
        }
        let from = *senders.iter().next().expect("one sender");
        let core = self.dfs.as_mut().expect("active node has a core");
        if let Some(&(_, _, msg)) = inbox.iter().find(|m| m.0 == from && m.1 == stored) {
            core.feedback(k, from, &msg);
        }
    }

    fn next_slot(&self, k: u64, from: u64) -> Option<u64> {
        let start = self.plan.block_start(k);
        next_slot_round(&self.plan.light, self.name, start, from).filter(|&r| r < start + self.plan.block_len())
    }

    /// Earliest round at or after `from` the node must be polled in,
    /// before the Backbone phase.
    fn next_poll(&self, from: u64) -> Poll {
        let p = &self.plan;
        if from < p.t1 {
            let mis = if self.in_start_set() { self.mis_poll.unwrap_or(p.t1) } else { p.t1 };
            return Poll::At(mis.min(p.t1).max(from));
        }
        if from >= p.t3 {
            return Poll::At(from);
        }
        let k = p.block_of(from);
        let mut next = p.t3;
        if let Some((b, _)) = self.tx {
            if let Some(r) = self.next_slot(b, from) {
                next = next.min(r);
            }
        }
        if !self.inbox.is_empty() {
            next = next.min(p.block_start(self.inbox_block + 1));
        }
        if self.active {
            if let Some(w) = self.dfs.as_ref().and_then(|d| d.wake()) {
                if w < p.window {
                    next = next.min(p.block_start(w.max(k)).max(from));
                }
            }
        }
        Poll::At(next)
    }

    fn emulate(&mut self, t: u64, rng: &mut BitStream) -> Action<EmuMsg> {
        let p = self.plan.clone();
        let k = p.block_of(t);
        if self.inbox_block < k {
            self.settle();
        }
        if t == p.t1 && self.stored.is_none() && self.mis.as_ref().is_some_and(|m| m.status == MisStatus::Leader) {
            self.dfs = Some(DfsCore::source(self.name, p.dfs.clone(), DfsMode::Full, 0));
            self.adopt(0, self.name, true);
        }
        if self.active && self.tx.map_or(true, |(b, _)| b < k) {
            let source = self.stored.expect("active node stores a source");
            let core = self.dfs.as_mut().expect("active node has a core");
            if core.wake() == Some(k) {
                self.tx = core.act(k, rng).map(|msg| (k, EmuMsg::Dfs { source, msg }));
            }
        }
        let send = match self.tx {
            Some((b, m)) if b == k && self.next_slot(b, t) == Some(t) => Some(m),
            _ => None,
        };
        let poll = self.next_poll(t + 1);
        match send {
            Some(m) => Action::Transmit(m, poll),
            None => Action::Listen(poll),
        }
    }
}

impl Behavior for EmuNode {
    type Msg = EmuMsg;

    fn act(&mut self, ctx: &mut NodeCtx<'_>, t: u64) -> Action<EmuMsg> {
        let p = self.plan.clone();
        if self.woken.is_none() {
            self.woken = Some((t, true));
            self.mis = Some(MisCore::new(self.name, p.mis.clone()));
        }
        if t >= p.t3 {
            if self.backbone.is_none() {
                if self.inbox_block < p.window {
                    self.settle();
                }
                self.backbone = Some(BackboneCore::new(self.name, p.bb_mis.clone(), p.bb_layout.clone()));
            }
            let bb = self.backbone.as_mut().expect("created above");
            return match bb.act(t, ctx.rng) {
                (Some(m), poll) => Action::Transmit(EmuMsg::Bb(m), poll),
                (None, poll) => Action::Listen(poll),
            };
        }
        if t < p.t1 {
            let mis = self.mis.as_mut().expect("start-set nodes run the election");
            let (m, poll) = mis.act(t, ctx.rng);
            self.mis_poll = match poll {
                Poll::At(r) => Some(r),
                Poll::Never => None,
            };
            let poll = self.next_poll(t + 1);
            return match m {
                Some(m) => Action::Transmit(EmuMsg::Mis(m), poll),
                None => Action::Listen(poll),
            };
        }
        self.emulate(t, ctx.rng)
    }

    fn receive(&mut self, _: &mut NodeCtx<'_>, t: u64, msg: &Message<EmuMsg>) -> Option<Poll> {
        let p = self.plan.clone();
        if self.woken.is_none() {
            // Woken by a message: outside the start set, and too late to
            // take part in anything that already began.
            self.woken = Some((t, false));
        }
        match msg.payload {
            EmuMsg::Mis(m) => {
                if let Some(mis) = self.mis.as_mut() {
                    if t < p.t1 {
                        mis.receive(t, msg.src, m);
                    }
                }
            }
            EmuMsg::Dfs { source, msg: dfs } => {
                if t >= p.t1 && t < p.t3 {
                    let k = p.block_of(t);
                    if self.inbox_block < k {
                        self.settle();
                    }
                    self.inbox_block = k;
                    if !self.inbox.iter().any(|m| m.0 == msg.src) {
                        self.inbox.push((msg.src, source, dfs));
                    }
                }
            }
            EmuMsg::Bb(m) => {
                if let Some(bb) = self.backbone.as_mut() {
                    bb.receive(t, msg.src, &m);
                }
                return None;
            }
        }
        if self.woken.is_some_and(|(w, _)| w >= p.t3) {
            return Some(Poll::Never);
        }
        Some(self.next_poll(t + 1))
    }

    fn status(&self) -> &'static str {
        if let Some(bb) = &self.backbone {
            return match &bb.connect {
                None => mis::status_label(bb.mis.status),
                Some(c) if c.leader => "leader",
                Some(c) if c.in_backbone() => "connector",
                Some(_) => "slave",
            };
        }
        match (&self.dfs, self.active) {
            (Some(d), true) => d.status_label(),
            (Some(_), false) => "inactive",
            (None, _) => match &self.mis {
                Some(m) => mis::status_label(m.status),
                None => "idle",
            },
        }
    }
}

/// Invariants of the source-name mechanism.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SourceInvariants {
    /// Largest number of distinct active source names in one grid box.
    pub max_active_per_box: usize,
    /// No node ever stored a smaller source name after a larger one.
    pub monotone: bool,
}

pub fn source_invariants(network: &Network, nodes: &[EmuNode]) -> SourceInvariants {
    let monotone = nodes.iter().all(|n| n.events.windows(2).all(|w| w[0].source <= w[1].source));
    let rounds: BTreeSet<u64> = nodes.iter().flat_map(|n| n.events.iter().map(|e| e.round)).collect();
    let mut max_active_per_box = 0;
    let mut cursor = vec![0usize; nodes.len()];
    let mut state: Vec<Option<(Name, bool)>> = vec![None; nodes.len()];
    for r in rounds {
        for (i, n) in nodes.iter().enumerate() {
            while cursor[i] < n.events.len() && n.events[cursor[i]].round <= r {
                let e = n.events[cursor[i]];
                state[i] = Some((e.source, e.active));
                cursor[i] += 1;
            }
        }
        let mut per_box: HashMap<(i64, i64), BTreeSet<Name>> = HashMap::new();
        for (i, s) in state.iter().enumerate() {
            if let Some((src, true)) = s {
                per_box.entry(network.box_index(i)).or_default().insert(*src);
            }
        }
        max_active_per_box = max_active_per_box.max(per_box.values().map(|s| s.len()).max().unwrap_or(0));
    }
    SourceInvariants { max_active_per_box, monotone }
}

#[derive(Debug, Clone, Serialize)]
pub struct EmulatedOutcome {
    /// Election among the start set.
    pub sources: MisOutcome,
    /// Highest elected source name.
    pub top_source: Option<Name>,
    /// Every node stores the top source and finished its search black.
    pub search_complete: bool,
    /// Every node woke before the Backbone phase.
    pub all_woken: bool,
    pub invariants: SourceInvariants,
    pub backbone_mis: MisOutcome,
    pub result: BackboneResult,
}

/// Summarize a finished run.
pub fn emulated_outcome(network: &Network, params: &Params, plan: &EmuPlan, nodes: &[EmuNode]) -> EmulatedOutcome {
    let mis_cores: Vec<Option<&MisCore>> = nodes.iter().map(|n| n.mis.as_ref()).collect();
    let sources = mis::outcome(network, &plan.mis, &mis_cores);
    let top_source = sources.leaders.iter().max().copied();
    let search_complete = top_source.is_some()
        && nodes.iter().all(|n| {
            n.stored == top_source && n.dfs.as_ref().is_some_and(|d| d.color == Color::Black)
        });
    let all_woken = nodes.iter().all(|n| n.woken.is_some_and(|(w, _)| w < plan.t3));
    let bb: Vec<Option<&BackboneCore>> = nodes.iter().map(|n| n.backbone.as_ref()).collect();
    let (backbone_mis, result) = connect::backbone_outcome(network, params, &plan.bb_mis, &plan.bb_layout, &bb);
    EmulatedOutcome {
        sources,
        top_source,
        search_complete,
        all_woken,
        invariants: source_invariants(network, nodes),
        backbone_mis,
        result,
    }
}

pub fn emulated_nodes(network: &Network, plan: &Arc<EmuPlan>) -> Vec<EmuNode> {
    network.names().iter().map(|&v| EmuNode::new(v, plan.clone())).collect()
}

/// Run the three phases from start set `start`.
pub fn emulated_dfs_backbone(
    network: &Network,
    start: &[Name],
    params: &Params,
    seed: u64,
    round_limit: u64,
) -> Result<(Summary, EmulatedOutcome), ProtocolError> {
    let plan = Arc::new(EmuPlan::new(network, params)?);
    let nodes = emulated_nodes(network, &plan);
    let (summary, nodes) = engine::run(network, nodes, &StartMode::Partly(start.to_vec()), seed, round_limit)?;
    Ok((summary, emulated_outcome(network, params, &plan, &nodes)))
}
