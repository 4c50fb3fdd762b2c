//! Maximal independent set election under a synchronized start.
//!
//! Phases `i = 0..=log2 Δ'` each consist of `c_phases * ceil(log2 N)`
//! sub-phases. At the start of a sub-phase every worker becomes a candidate
//! with probability `2^i / Δ'`. Candidates then run one execution of the
//! heavy ssf; a candidate that hears another candidate falls back to worker,
//! the rest become leaders and run a second execution in which workers that
//! hear them become slaves of the smallest leader heard.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use serde::Serialize;

use super::{delta_pow2, heavy_family, next_slot_round, Params, ProtocolError, TAG_BITS};
use crate::combinat::{log2_ceil, SelectionFamily};
use crate::engine::{self, Action, BitSizes, BitStream, Behavior, Message, NodeCtx, Payload, Poll, StartMode, Summary};
use crate::phys::{Name, Network};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MisMsg {
    Cand,
    Lead,
}

impl Payload for MisMsg {
    fn control_bits(&self, _: &BitSizes) -> u32 {
        TAG_BITS
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MisStatus {
    Worker,
    Candidate,
    Leader,
    Slave,
}

/// Phase layout, common knowledge of all participants.
#[derive(Debug, Clone)]
pub struct MisSchedule {
    pub start: u64,
    pub delta_pow2: u64,
    pub log_delta: u32,
    pub subphases: u64,
    pub heavy: Arc<SelectionFamily>,
}

impl MisSchedule {
    pub fn new(start: u64, max_degree: usize, name_space: u32, params: &Params, heavy: Arc<SelectionFamily>) -> Self {
        let delta_pow2 = delta_pow2(max_degree);
        MisSchedule {
            start,
            delta_pow2,
            log_delta: delta_pow2.trailing_zeros(),
            subphases: params.c_phases as u64 * log2_ceil(name_space as u64) as u64,
            heavy,
        }
    }

    pub fn stage_len(&self) -> u64 {
        self.heavy.len() as u64
    }

    pub fn subphase_len(&self) -> u64 {
        2 * self.stage_len()
    }

    pub fn phases(&self) -> u32 {
        self.log_delta + 1
    }

    pub fn subphase_start(&self, phase: u32, k: u64) -> u64 {
        self.start + (phase as u64 * self.subphases + k) * self.subphase_len()
    }

    pub fn end(&self) -> u64 {
        self.subphase_start(self.phases(), 0)
    }

    /// Phase containing round `t` and the start of its sub-phase.
    fn locate(&self, t: u64) -> (u32, u64) {
        let idx = (t - self.start) / self.subphase_len();
        ((idx / self.subphases) as u32, self.start + idx * self.subphase_len())
    }
}

#[derive(Debug, Clone)]
pub struct MisCore {
    name: Name,
    sched: Arc<MisSchedule>,
    pub status: MisStatus,
    pub master: Option<Name>,
    /// Leaders heard in the current second stage.
    heard: Vec<Name>,
    cand_heard: bool,
    s0: u64,
    /// Status transitions, each stamped with the first round it holds in.
    pub history: Vec<(u64, MisStatus)>,
}

impl MisCore {
    pub fn new(name: Name, sched: Arc<MisSchedule>) -> Self {
        let start = sched.start;
        MisCore {
            name,
            sched,
            status: MisStatus::Worker,
            master: None,
            heard: Vec::new(),
            cand_heard: false,
            s0: start,
            history: vec![(start, MisStatus::Worker)],
        }
    }

    pub fn name(&self) -> Name {
        self.name
    }

    pub fn first_poll(&self) -> u64 {
        self.sched.start
    }

    fn set(&mut self, round: u64, status: MisStatus) {
        self.status = status;
        self.history.push((round, status));
    }

    fn on_slot(&self, stage_start: u64, t: u64) -> bool {
        next_slot_round(&self.sched.heavy, self.name, stage_start, t) == Some(t)
    }

    fn next_in_stage(&self, stage_start: u64, from: u64) -> Option<u64> {
        next_slot_round(&self.sched.heavy, self.name, stage_start, from)
            .filter(|&r| r < stage_start + self.sched.stage_len())
    }

    pub fn act(&mut self, t: u64, rng: &mut BitStream) -> (Option<MisMsg>, Poll) {
        let h = self.sched.stage_len();
        match self.status {
            MisStatus::Worker => {
                if let Some(&m) = self.heard.iter().min() {
                    self.master = Some(m);
                    self.heard.clear();
                    // Enslaved by the end of the previous second stage.
                    self.set(t - 1, MisStatus::Slave);
                    return (None, Poll::Never);
                }
                if t >= self.sched.end() {
                    return (None, Poll::Never);
                }
                let (phase, s0) = self.sched.locate(t);
                self.s0 = s0;
                if rng.coin_pow2(self.sched.log_delta - phase) {
                    self.set(t, MisStatus::Candidate);
                    self.cand_heard = false;
                    self.candidate(t)
                } else {
                    (None, Poll::At(s0 + 2 * h))
                }
            }
            MisStatus::Candidate => self.candidate(t),
            MisStatus::Leader => self.leader(t),
            MisStatus::Slave => (None, Poll::Never),
        }
    }

    fn candidate(&mut self, t: u64) -> (Option<MisMsg>, Poll) {
        let s1 = self.s0 + self.sched.stage_len();
        if t < s1 {
            let tx = self.on_slot(self.s0, t);
            let next = self.next_in_stage(self.s0, t + 1).unwrap_or(s1);
            return (tx.then_some(MisMsg::Cand), Poll::At(next));
        }
        if self.cand_heard {
            self.set(t, MisStatus::Worker);
            return (None, Poll::At(s1 + self.sched.stage_len()));
        }
        self.set(t, MisStatus::Leader);
        self.leader(t)
    }

    fn leader(&mut self, t: u64) -> (Option<MisMsg>, Poll) {
        let s1 = self.s0 + self.sched.stage_len();
        if t < s1 || t >= s1 + self.sched.stage_len() {
            return (None, Poll::Never);
        }
        let tx = self.on_slot(s1, t);
        let next = self.next_in_stage(s1, t + 1).map_or(Poll::Never, Poll::At);
        (tx.then_some(MisMsg::Lead), next)
    }

    pub fn receive(&mut self, t: u64, src: Name, msg: MisMsg) {
        match (msg, self.status) {
            (MisMsg::Cand, MisStatus::Candidate) if t < self.s0 + self.sched.stage_len() => self.cand_heard = true,
            (MisMsg::Lead, MisStatus::Worker) => self.heard.push(src),
            _ => {}
        }
    }

    /// Status in force just before round `t`.
    pub fn status_before(&self, t: u64) -> MisStatus {
        self.history.iter().rev().find(|(r, _)| *r < t).map_or(MisStatus::Worker, |&(_, s)| s)
    }
}

#[derive(Debug, Clone)]
pub struct MisNode {
    pub core: MisCore,
}

impl Behavior for MisNode {
    type Msg = MisMsg;

    fn act(&mut self, ctx: &mut NodeCtx<'_>, round: u64) -> Action<MisMsg> {
        match self.core.act(round, ctx.rng) {
            (Some(m), p) => Action::Transmit(m, p),
            (None, p) => Action::Listen(p),
        }
    }

    fn receive(&mut self, _: &mut NodeCtx<'_>, round: u64, msg: &Message<MisMsg>) -> Option<Poll> {
        self.core.receive(round, msg.src, msg.payload);
        None
    }

    fn status(&self) -> &'static str {
        status_label(self.core.status)
    }
}

pub fn status_label(s: MisStatus) -> &'static str {
    match s {
        MisStatus::Worker => "worker",
        MisStatus::Candidate => "candidate",
        MisStatus::Leader => "leader",
        MisStatus::Slave => "slave",
    }
}

/// Per-phase invariants, checked at every phase and sub-phase boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MisInvariants {
    /// At the start of phase `i` every box holds at most `Δ'/2^i` workers.
    pub workers_per_box: bool,
    /// At every sub-phase boundary all neighbours of a leader are slaves.
    pub leader_neighbors_enslaved: bool,
    /// No node has more than 25 leader neighbours, and no candidate
    /// survives into a phase boundary.
    pub bounded_leaders: bool,
}

impl MisInvariants {
    pub fn all(&self) -> bool {
        self.workers_per_box && self.leader_neighbors_enslaved && self.bounded_leaders
    }
}

/// Check the invariants over the participants (`None` entries are skipped).
pub fn check_invariants(network: &Network, sched: &MisSchedule, cores: &[Option<&MisCore>]) -> MisInvariants {
    let mut inv = MisInvariants { workers_per_box: true, leader_neighbors_enslaved: true, bounded_leaders: true };
    for phase in 0..=sched.phases() {
        for k in 0..sched.subphases {
            if phase == sched.phases() && k > 0 {
                break;
            }
            let t = sched.subphase_start(phase, k);
            let status: Vec<Option<MisStatus>> = cores.iter().map(|c| c.map(|c| c.status_before(t))).collect();
            for (i, s) in status.iter().enumerate() {
                let Some(s) = s else { continue };
                if *s == MisStatus::Candidate {
                    inv.bounded_leaders = false;
                }
                let nb = network.neighbors(i);
                if *s == MisStatus::Leader
                    && nb.iter().any(|&j| status[j as usize].is_some_and(|s| s != MisStatus::Slave))
                {
                    inv.leader_neighbors_enslaved = false;
                }
                let leaders = nb.iter().filter(|&&j| status[j as usize] == Some(MisStatus::Leader)).count();
                if leaders > 25 {
                    inv.bounded_leaders = false;
                }
            }
            if k == 0 && phase < sched.phases() {
                let mut per_box: HashMap<(i64, i64), u64> = HashMap::new();
                for (i, s) in status.iter().enumerate() {
                    if *s == Some(MisStatus::Worker) {
                        *per_box.entry(network.box_index(i)).or_default() += 1;
                    }
                }
                let cap = sched.delta_pow2 >> phase;
                if per_box.values().any(|&c| c > cap) {
                    inv.workers_per_box = false;
                }
            }
        }
    }
    inv
}

#[derive(Debug, Clone, Serialize)]
pub struct MisOutcome {
    pub leaders: Vec<Name>,
    pub masters: BTreeMap<Name, Name>,
    /// No worker is left after the last phase.
    pub complete: bool,
    pub invariants: MisInvariants,
}

pub fn outcome(network: &Network, sched: &MisSchedule, cores: &[Option<&MisCore>]) -> MisOutcome {
    let mut leaders = Vec::new();
    let mut masters = BTreeMap::new();
    let mut complete = true;
    for (i, c) in cores.iter().enumerate() {
        let Some(c) = c else { continue };
        match c.status {
            MisStatus::Leader => leaders.push(network.name(i)),
            MisStatus::Slave => {
                masters.insert(network.name(i), c.master.expect("slave has a master"));
            }
            _ => complete = false,
        }
    }
    MisOutcome { leaders, masters, complete, invariants: check_invariants(network, sched, cores) }
}

pub fn mis_nodes(network: &Network, params: &Params, start: u64) -> Result<(Arc<MisSchedule>, Vec<MisNode>), ProtocolError> {
    let heavy = heavy_family(network.name_space(), params)?;
    let sched = Arc::new(MisSchedule::new(start, network.max_degree(), network.name_space(), params, heavy));
    let nodes = network.names().iter().map(|&v| MisNode { core: MisCore::new(v, sched.clone()) }).collect();
    Ok((sched, nodes))
}

/// Run the election on all nodes of `network`.
pub fn mis_swd(
    network: &Network,
    params: &Params,
    seed: u64,
    round_limit: u64,
) -> Result<(Summary, MisOutcome, Vec<MisNode>), ProtocolError> {
    let (sched, nodes) = mis_nodes(network, params, 0)?;
    let (summary, nodes) = engine::run(network, nodes, &StartMode::Synchronized, seed, round_limit)?;
    let cores: Vec<Option<&MisCore>> = nodes.iter().map(|n| Some(&n.core)).collect();
    let out = outcome(network, &sched, &cores);
    Ok((summary, out, nodes))
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

    #[test]
    fn single_node_leads() {
        let n = net(&[(0.0, 0.0)]);
        let (_, out, _) = mis_swd(&n, &Params::default(), 1, 1 << 40).unwrap();
        assert_eq!(out.leaders, vec![1]);
        assert!(out.complete && out.invariants.all());
    }

    #[test]
    fn edge_has_one_leader() {
        let n = net(&[(0.0, 0.0), (0.4, 0.0)]);
        for seed in 0..20 {
            let (_, out, _) = mis_swd(&n, &Params::default(), seed, 1 << 40).unwrap();
            assert_eq!(out.leaders.len(), 1, "seed {seed}");
            let other = 3 - out.leaders[0];
            assert_eq!(out.masters.get(&other), Some(&out.leaders[0]));
            assert!(out.invariants.all());
        }
    }

    #[test]
    fn triangle_has_one_leader() {
        let n = net(&[(0.0, 0.0), (0.4, 0.0), (0.2, 0.3)]);
        for seed in 0..10 {
            let (_, out, _) = mis_swd(&n, &Params::default(), seed, 1 << 40).unwrap();
            assert_eq!(out.leaders.len(), 1);
            assert_eq!(out.masters.len(), 2);
        }
    }

    #[test]
    fn history_lookup() {
        let n = net(&[(0.0, 0.0), (0.4, 0.0)]);
        let (_, _, nodes) = mis_swd(&n, &Params::default(), 4, 1 << 40).unwrap();
        for node in &nodes {
            let c = &node.core;
            assert_eq!(c.status_before(0), MisStatus::Worker);
            assert_eq!(c.status_before(u64::MAX), c.status);
        }
    }
}
