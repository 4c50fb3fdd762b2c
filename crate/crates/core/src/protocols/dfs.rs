//! Token depth-first search from an uncoordinated start, built on the
//! neighbourhood size estimate (ESUN) and neighbourhood learning (LUN).
//!
//! [`DfsCore`] is written in terms of *original rounds*: it is told what it
//! received in a round and asked what to send in a round. The native
//! behaviour maps original rounds one-to-one onto engine rounds; the
//! emulated backbone construction maps each onto a block of ssf rounds.

use std::sync::Arc;

use serde::Serialize;

use super::{Params, TAG_BITS};
use crate::combinat::{self, log2_ceil, FamilyKind, SelectionFamily};
use crate::engine::{self, Action, BitSizes, BitStream, Behavior, EngineError, Message, NodeCtx, Payload, Poll, StartMode, Summary};
use crate::phys::{Name, Network};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DfsMsg {
    /// The token holder opens a size estimate of its unexplored neighbourhood.
    EsunStart,
    /// A participant's transmission in an estimate sub-stage.
    EsunPing { to: Name },
    /// The holder asks participants to execute a selector for estimate `x`.
    LunStart { x: u32 },
    /// A participant's transmission within the selector execution.
    LunReply { to: Name },
    /// One learned name per round; `remaining` announcements follow.
    Announce { learned: Option<Name>, remaining: u32 },
    Token { to: Name },
    Return { to: Name },
}

impl Payload for DfsMsg {
    fn control_bits(&self, s: &BitSizes) -> u32 {
        TAG_BITS
            + match self {
                DfsMsg::EsunStart => 0,
                DfsMsg::EsunPing { .. } | DfsMsg::LunReply { .. } => s.name,
                DfsMsg::LunStart { .. } => s.name,
                DfsMsg::Announce { .. } => s.name + s.name,
                DfsMsg::Token { .. } | DfsMsg::Return { .. } => s.name,
            }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Color {
    Unexplored,
    /// Viewed by the named node: learned by it and announced.
    Viewed(Name),
    Grey,
    Black,
}

/// What the token holder does after learning its neighbourhood.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DfsMode {
    Full,
    /// Stop the initiator after the size estimate.
    EsunOnly,
    /// Skip the estimate and learn with the given bound, then stop.
    LunOnly(u32),
}

/// Quantities every node derives from `N` and the parameters.
#[derive(Debug, Clone)]
pub struct DfsPlan {
    pub name_space: u32,
    pub log_n: u32,
    pub d: u32,
    pub substages: u32,
    pub threshold: f64,
    pub lun_c: f64,
    pub c_sel: f64,
    pub family_seed: u64,
}

impl DfsPlan {
    pub fn new(name_space: u32, params: &Params) -> Self {
        let log_n = log2_ceil(name_space as u64);
        DfsPlan {
            name_space,
            log_n,
            d: params.esun_d,
            // Sub-stages 0..=log N, so that estimates up to N are possible.
            substages: log_n + 1,
            threshold: (params.esun_d * log_n) as f64 / 8.0 * (1.0 - params.esun_eps),
            lun_c: params.lun_c,
            c_sel: params.c_sel,
            family_seed: params.family_seed,
        }
    }

    pub fn substage_len(&self) -> u64 {
        (self.d * self.log_n) as u64
    }

    /// Rounds of estimate traffic after the opening round.
    pub fn esun_len(&self) -> u64 {
        self.substages as u64 * self.substage_len()
    }

    /// Estimate from per-sub-stage success counts: `2^k` for the highest
    /// qualifying sub-stage `k`, or 0.
    pub fn estimate(&self, counts: &[u32]) -> u32 {
        match counts.iter().rposition(|&c| c as f64 >= self.threshold) {
            Some(k) => 1u32 << k.min(31),
            None => 0,
        }
    }

    /// Selector parameters `(x_j, y_j)` for `j = 0..=J`, with
    /// `J = ceil(log_{1/(1-c)} x)`.
    pub fn lun_rounds(&self, x: u32) -> Vec<(u32, u32)> {
        let x = x.min(self.name_space).max(1);
        let shrink = 1.0 - self.lun_c;
        let last = if x <= 1 { 0 } else { ((x as f64).ln() / (1.0 / shrink).ln()).ceil() as u32 };
        (0..=last)
            .map(|j| {
                let xj = ((x as f64) * shrink.powi(j as i32)).ceil().max(1.0) as u32;
                (xj, self.selector_y(xj))
            })
            .collect()
    }

    pub fn selector_y(&self, x: u32) -> u32 {
        ((self.lun_c * x as f64).ceil() as u32).clamp(1, x)
    }

    pub fn selector(&self, x: u32) -> Arc<SelectionFamily> {
        let x = x.min(self.name_space).max(1);
        let kind = FamilyKind::Selector { x, y: self.selector_y(x) };
        combinat::cached(self.name_space, kind, self.family_seed, self.c_sel)
            .unwrap_or_else(|e| panic!("selector for x={x}: {e}"))
    }
}

#[derive(Debug, Clone)]
enum Phase {
    Idle,
    OpenEsun,
    EsunCount { start: u64, counts: Vec<u32> },
    /// `start` is the round of the LunStart message of iteration `iter`.
    /// `len` is unset until the iteration's LunStart has been sent.
    Lun { iter: usize, start: u64, len: Option<u64>, fresh: Vec<Name>, announced: usize },
    Decide,
    AwaitReturn(Name),
    EsunPart { initiator: Name, start: u64 },
    LunPart { initiator: Name, start: u64, family: Arc<SelectionFamily> },
    Finished,
}

/// One node's search state.
#[derive(Debug, Clone)]
pub struct DfsCore {
    name: Name,
    plan: Arc<DfsPlan>,
    mode: DfsMode,
    phase: Phase,
    wake: Option<u64>,
    lun_plan: Vec<(u32, u32)>,
    pub color: Color,
    pub parent: Option<Name>,
    /// Names learned by this node, in the order they were learned.
    pub viewed: Vec<Name>,
    /// Learned names already handed the token.
    pub explored: Vec<Name>,
    pub estimate: Option<u32>,
    pub tokens_received: u32,
    pub esun_runs_joined: u32,
}

impl DfsCore {
    /// A node that does not hold the token.
    pub fn new(name: Name, plan: Arc<DfsPlan>, mode: DfsMode) -> Self {
        DfsCore {
            name,
            plan,
            mode,
            phase: Phase::Idle,
            wake: None,
            lun_plan: Vec::new(),
            color: Color::Unexplored,
            parent: None,
            viewed: Vec::new(),
            explored: Vec::new(),
            estimate: None,
            tokens_received: 0,
            esun_runs_joined: 0,
        }
    }

    /// The source: holds the token from original round `start`.
    pub fn source(name: Name, plan: Arc<DfsPlan>, mode: DfsMode, start: u64) -> Self {
        let mut core = DfsCore::new(name, plan, mode);
        core.color = Color::Grey;
        core.wake = Some(start);
        core.phase = match mode {
            DfsMode::LunOnly(x) => {
                core.lun_plan = core.plan.lun_rounds(x);
                core.estimate = Some(x);
                Phase::Lun { iter: 0, start, len: None, fresh: vec![], announced: 0 }
            }
            _ => Phase::OpenEsun,
        };
        core
    }

    pub fn name(&self) -> Name {
        self.name
    }

    /// Next original round in which the node must be asked to act.
    pub fn wake(&self) -> Option<u64> {
        self.wake
    }

    pub fn holds_token(&self) -> bool {
        matches!(
            self.phase,
            Phase::OpenEsun | Phase::EsunCount { .. } | Phase::Lun { .. } | Phase::Decide
        ) && self.color == Color::Grey
    }

    pub fn finished(&self) -> bool {
        matches!(self.phase, Phase::Finished)
    }

    /// Action in original round `t`, at or after `self.wake()`.
    pub fn act(&mut self, t: u64, rng: &mut BitStream) -> Option<DfsMsg> {
        self.wake = None;
        loop {
            match &mut self.phase {
                Phase::Idle | Phase::Finished | Phase::AwaitReturn(_) => return None,
                Phase::OpenEsun => {
                    self.phase = Phase::EsunCount { start: t, counts: vec![0; self.plan.substages as usize] };
                    self.wake = Some(t + 1 + self.plan.esun_len());
                    return Some(DfsMsg::EsunStart);
                }
                Phase::EsunCount { counts, .. } => {
                    let x = self.plan.estimate(counts);
                    self.estimate = Some(x);
                    if self.mode == DfsMode::EsunOnly {
                        self.phase = Phase::Finished;
                        return None;
                    }
                    if x == 0 {
                        self.phase = Phase::Decide;
                        continue;
                    }
                    self.lun_plan = self.plan.lun_rounds(x);
                    self.phase = Phase::Lun { iter: 0, start: t, len: None, fresh: vec![], announced: 0 };
                    continue;
                }
                Phase::Lun { iter, start, len, fresh, announced } => {
                    if len.is_none() {
                        let (x, _) = self.lun_plan[*iter];
                        let rounds = self.plan.selector(x).len() as u64;
                        *start = t;
                        *len = Some(rounds);
                        self.wake = Some(t + 1 + rounds);
                        return Some(DfsMsg::LunStart { x });
                    }
                    let total = fresh.len().max(1);
                    let msg = DfsMsg::Announce {
                        learned: fresh.get(*announced).copied(),
                        remaining: (total - *announced - 1) as u32,
                    };
                    *announced += 1;
                    if *announced < total {
                        self.wake = Some(t + 1);
                        return Some(msg);
                    }
                    self.viewed.extend(fresh.iter().copied());
                    let next = *iter + 1;
                    if next < self.lun_plan.len() {
                        // The next iteration opens in the following round.
                        self.phase = Phase::Lun { iter: next, start: t + 1, len: None, fresh: vec![], announced: 0 };
                    } else if let DfsMode::LunOnly(_) = self.mode {
                        self.phase = Phase::Finished;
                        return Some(msg);
                    } else {
                        self.phase = Phase::Decide;
                    }
                    self.wake = Some(t + 1);
                    return Some(msg);
                }
                Phase::Decide => {
                    let mut candidates: Vec<Name> =
                        self.viewed.iter().copied().filter(|v| !self.explored.contains(v)).collect();
                    candidates.sort_unstable();
                    if let Some(&child) = candidates.first() {
                        self.explored.push(child);
                        self.phase = Phase::AwaitReturn(child);
                        return Some(DfsMsg::Token { to: child });
                    }
                    self.color = Color::Black;
                    self.phase = Phase::Finished;
                    return self.parent.map(|p| DfsMsg::Return { to: p });
                }
                Phase::EsunPart { initiator, start } => {
                    let (initiator, start) = (*initiator, *start);
                    let offset = t - start - 1;
                    let last = start + self.plan.esun_len();
                    if t < last {
                        self.wake = Some(t + 1);
                    } else {
                        self.phase = Phase::Idle;
                    }
                    let substage = (offset / self.plan.substage_len()) as u32;
                    return rng.coin_pow2(substage).then_some(DfsMsg::EsunPing { to: initiator });
                }
                Phase::LunPart { initiator, start, family } => {
                    let to = *initiator;
                    self.wake = super::next_slot_round(family, self.name, *start + 1, t + 1);
                    if self.wake.is_none() {
                        self.phase = Phase::Idle;
                    }
                    return Some(DfsMsg::LunReply { to });
                }
            }
        }
    }

    fn participates(&self) -> bool {
        self.color == Color::Unexplored
    }

    /// Feedback for original round `t`: `msg` from `src` was received.
    pub fn feedback(&mut self, t: u64, src: Name, msg: &DfsMsg) {
        let me = self.name;
        match *msg {
            DfsMsg::EsunStart if self.participates() => {
                self.esun_runs_joined += 1;
                self.phase = Phase::EsunPart { initiator: src, start: t };
                self.wake = Some(t + 1);
            }
            DfsMsg::LunStart { x } if self.participates() => {
                let family = self.plan.selector(x);
                let wake = super::next_slot_round(&family, me, t + 1, t + 1);
                self.phase = Phase::LunPart { initiator: src, start: t, family };
                self.wake = wake;
            }
            DfsMsg::Announce { learned: Some(v), .. } if v == me && self.participates() => {
                self.color = Color::Viewed(src);
                self.phase = Phase::Idle;
                self.wake = None;
            }
            DfsMsg::EsunPing { to } if to == me => {
                if let Phase::EsunCount { start, counts } = &mut self.phase {
                    if t > *start {
                        let k = ((t - *start - 1) / self.plan.substage_len()) as usize;
                        if let Some(c) = counts.get_mut(k) {
                            *c += 1;
                        }
                    }
                }
            }
            DfsMsg::LunReply { to } if to == me => {
                if let Phase::Lun { start, len, fresh, .. } = &mut self.phase {
                    if len.is_some_and(|l| t > *start && t <= *start + l) && !fresh.contains(&src) && !self.viewed.contains(&src) {
                        fresh.push(src);
                    }
                }
            }
            DfsMsg::Token { to } if to == me => {
                self.tokens_received += 1;
                if matches!(self.color, Color::Unexplored | Color::Viewed(_)) {
                    self.color = Color::Grey;
                    self.parent = Some(src);
                    self.phase = Phase::OpenEsun;
                    self.wake = Some(t + 1);
                }
            }
            DfsMsg::Return { to } if to == me => {
                if self.phase_is_awaiting(src) {
                    self.phase = Phase::Decide;
                    self.wake = Some(t + 1);
                }
            }
            _ => {}
        }
    }

    fn phase_is_awaiting(&self, child: Name) -> bool {
        matches!(self.phase, Phase::AwaitReturn(c) if c == child)
    }

    pub fn status_label(&self) -> &'static str {
        match self.color {
            Color::Unexplored => "unexplored",
            Color::Viewed(_) => "viewed",
            Color::Grey => "grey",
            Color::Black => "black",
        }
    }
}

/// Native adapter: one original round per engine round.
#[derive(Debug, Clone)]
pub struct DfsNode {
    pub core: DfsCore,
}

impl Behavior for DfsNode {
    type Msg = DfsMsg;

    fn act(&mut self, ctx: &mut NodeCtx<'_>, round: u64) -> Action<DfsMsg> {
        let msg = self.core.act(round, ctx.rng);
        let poll = self.core.wake().map_or(Poll::Never, Poll::At);
        match msg {
            Some(m) => Action::Transmit(m, poll),
            None => Action::Listen(poll),
        }
    }

    fn receive(&mut self, _: &mut NodeCtx<'_>, round: u64, msg: &Message<DfsMsg>) -> Option<Poll> {
        self.core.feedback(round, msg.src, &msg.payload);
        Some(self.core.wake().map_or(Poll::Never, Poll::At))
    }

    fn status(&self) -> &'static str {
        self.core.status_label()
    }
}

pub fn dfs_nodes(network: &Network, source: Name, params: &Params, mode: DfsMode) -> Vec<DfsNode> {
    let plan = Arc::new(DfsPlan::new(network.name_space(), params));
    network
        .names()
        .iter()
        .map(|&v| DfsNode {
            core: if v == source {
                DfsCore::source(v, plan.clone(), mode, 0)
            } else {
                DfsCore::new(v, plan.clone(), mode)
            },
        })
        .collect()
}

/// Round limit for runs that always terminate.
pub const UNBOUNDED: u64 = 1 << 48;

/// Structural verdict on a finished search.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DfsReport {
    pub all_awake: bool,
    pub all_black: bool,
    /// Parent pointers are acyclic, rooted at the source, follow graph
    /// edges and span all nodes; every non-source got the token once.
    pub tree: bool,
    pub token_passes: u32,
    pub success: bool,
}

pub fn check_dfs(network: &Network, source: Name, summary: &Summary, cores: &[&DfsCore]) -> DfsReport {
    let n = network.len();
    let all_awake = summary.all_awake();
    let all_black = cores.iter().all(|c| c.color == Color::Black);
    let mut tree = true;
    let src = network.index(source);
    for (i, c) in cores.iter().enumerate() {
        if Some(i) == src {
            tree &= c.parent.is_none() && c.tokens_received == 0;
            continue;
        }
        match c.parent.and_then(|p| network.index(p)) {
            Some(p) => tree &= network.is_edge(i, p) && c.tokens_received == 1,
            None => tree = false,
        }
    }
    if tree {
        // Every chain of parents must reach the source within n steps.
        for i in 0..n {
            let mut cur = i;
            let mut steps = 0;
            while Some(cur) != src {
                match cores[cur].parent.and_then(|p| network.index(p)) {
                    Some(p) if steps < n => {
                        cur = p;
                        steps += 1;
                    }
                    _ => {
                        tree = false;
                        break;
                    }
                }
            }
        }
    }
    let token_passes = cores.iter().map(|c| c.explored.len() as u32).sum();
    DfsReport { all_awake, all_black, tree, token_passes, success: all_awake && all_black && tree }
}

/// Run the search from `source` under an uncoordinated start.
pub fn wireless_dfs(
    network: &Network,
    source: Name,
    params: &Params,
    seed: u64,
    round_limit: u64,
) -> Result<(Summary, Vec<DfsNode>, DfsReport), EngineError> {
    let nodes = dfs_nodes(network, source, params, DfsMode::Full);
    let (summary, nodes) = engine::run(network, nodes, &StartMode::Uncoordinated(source), seed, round_limit)?;
    let cores: Vec<&DfsCore> = nodes.iter().map(|n| &n.core).collect();
    let report = check_dfs(network, source, &summary, &cores);
    Ok((summary, nodes, report))
}

/// Run only the size estimate with `initiator` holding the token.
pub fn esun(
    network: &Network,
    initiator: Name,
    params: &Params,
    seed: u64,
) -> Result<(u32, Summary), EngineError> {
    let nodes = dfs_nodes(network, initiator, params, DfsMode::EsunOnly);
    let (summary, nodes) = engine::run(network, nodes, &StartMode::Uncoordinated(initiator), seed, UNBOUNDED)?;
    let i = network.index(initiator).expect("initiator in network");
    Ok((nodes[i].core.estimate.unwrap_or(0), summary))
}

/// Run only neighbourhood learning with bound `x`; returns the learned names.
pub fn lun(
    network: &Network,
    initiator: Name,
    x: u32,
    params: &Params,
    seed: u64,
) -> Result<(Vec<Name>, Summary), EngineError> {
    let nodes = dfs_nodes(network, initiator, params, DfsMode::LunOnly(x));
    let (summary, nodes) = engine::run(network, nodes, &StartMode::Uncoordinated(initiator), seed, UNBOUNDED)?;
    let i = network.index(initiator).expect("initiator in network");
    let mut learned = nodes[i].core.viewed.clone();
    learned.sort_unstable();
    Ok((learned, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phys::{PhysicalConfig, Placement, Point};

    fn net(points: &[(f64, f64)]) -> Network {
        let pl: Vec<Placement> = points
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| Placement { name: i as Name + 1, pos: Point::new(x, y) })
            .collect();
        Network::build(&pl, 16, PhysicalConfig::default()).unwrap()
    }

    fn star(leaves: usize) -> Network {
        let r = 0.9 * PhysicalConfig::default().comm_radius();
        let mut pts = vec![(0.0, 0.0)];
        for k in 0..leaves {
            let a = 2.0 * std::f64::consts::PI * k as f64 / leaves as f64;
            pts.push((r * a.cos(), r * a.sin()));
        }
        net(&pts)
    }

    #[test]
    fn estimate_rule() {
        let plan = DfsPlan::new(16, &Params::default());
        assert_eq!(plan.estimate(&[0; 5]), 0);
        let t = plan.threshold.ceil() as u32;
        assert_eq!(plan.estimate(&[t, t, 0, t, 0]), 8);
        assert_eq!(plan.estimate(&[t, 0, 0, 0, 0]), 1);
    }

    #[test]
    fn lun_iterations() {
        let plan = DfsPlan::new(1024, &Params::default());
        assert_eq!(plan.lun_rounds(1), vec![(1, 1)]);
        assert_eq!(plan.lun_rounds(8), vec![(8, 8), (1, 1)]);
        assert_eq!(plan.lun_rounds(512), vec![(512, 507), (6, 6), (1, 1)]);
    }

    #[test]
    fn single_node_search() {
        let n = net(&[(0.0, 0.0)]);
        let (summary, nodes, report) = wireless_dfs(&n, 1, &Params::default(), 3, 1 << 40).unwrap();
        assert!(report.success);
        assert_eq!(report.token_passes, 0);
        assert_eq!(nodes[0].core.estimate, Some(0));
        assert!(summary.complete);
    }

    #[test]
    fn two_node_search() {
        let n = net(&[(0.0, 0.0), (0.5, 0.0)]);
        for seed in 0..20 {
            let (summary, nodes, report) = wireless_dfs(&n, 1, &Params::default(), seed, 1 << 40).unwrap();
            assert!(report.success, "seed {seed}");
            assert_eq!(report.token_passes, 1);
            assert_eq!(nodes[1].core.parent, Some(1));
            assert!(summary.all_awake());
        }
    }

    #[test]
    fn no_neighbours_estimate_zero() {
        let n = net(&[(0.0, 0.0), (5.0, 0.0)]);
        assert_eq!(esun(&n, 1, &Params::default(), 1).unwrap().0, 0);
    }

    #[test]
    fn lun_learns_star() {
        let n = star(8);
        let (learned, summary) = lun(&n, 1, 8, &Params::default(), 5).unwrap();
        assert_eq!(learned, (2..=9).collect::<Vec<_>>());
        let plan = DfsPlan::new(16, &Params::default());
        assert!(summary.rounds <= 2 * (Params::default().c_sel as u64) * 8 * plan.log_n as u64 + 40);
    }

    #[test]
    fn lun_single_neighbour() {
        let n = net(&[(0.0, 0.0), (0.5, 0.0)]);
        assert_eq!(lun(&n, 1, 1, &Params::default(), 1).unwrap().0, vec![2]);
    }

    #[test]
    fn star_search_spans() {
        let n = star(6);
        let (_, _, report) = wireless_dfs(&n, 1, &Params::default(), 9, 1 << 40).unwrap();
        assert!(report.success);
        assert_eq!(report.token_passes, 6);
    }
}
