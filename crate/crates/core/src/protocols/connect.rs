//! Connector selection on top of an MIS, and the Inter_H / Intra_H
//! communication schedules of the resulting backbone.
//!
//! The construction runs in fixed parts whose boundaries every node can
//! compute from `N`, `Δ` and the parameters:
//!
//! | part | who transmits | family |
//! |------|---------------|--------|
//! | hello | leaders, own name | light, once |
//! | hop1 | non-leaders, each of their leaders | heavy, in group `t_v` of 25 blocks |
//! | hop2 | non-leaders, each leader within two hops | heavy, in group `t_v` of 49 blocks |
//! | assign | leaders, one chosen connector set per far leader | light, 121 times |
//! | relay | first connectors, one second connector per pair | light, 121 times |
//! | neighbors | backbone nodes | backbone, once |
//! | control | backbone nodes (one Inter_H run) | backbone, once |
//! | register | non-backbone nodes, name of master | heavy, in block `t` |
//! | ack | masters, one slave per execution | light, Δ times |

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::mis::{self, MisCore, MisMsg, MisOutcome, MisSchedule, MisStatus};
use super::{backbone_family, light_family, next_slot_round, Families, Params, ProtocolError, TAG_BITS};
use crate::combinat::{log2_ceil, FamilyKind, SelectionFamily};
use crate::engine::{self, Action, BitSizes, BitStream, Behavior, Message, NodeCtx, Payload, Poll, StartMode, Summary};
use crate::phys::{Name, Network};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BbMsg {
    Leader,
    Hop1 { leader: Name },
    /// A leader within two hops; `via` is the neighbour it was heard from
    /// and the round it was heard in.
    Hop2 { leader: Name, via: Option<(Name, u64)> },
    /// Leader `src` reaches leader `far` through `first` (and `second`).
    Assign { far: Name, first: (Name, u64), second: Option<(Name, u64)> },
    /// First connector `src` tells `to` that it connects `far` to `near`.
    Relay { far: Name, near: Name, to: Name, round: u64 },
    Backbone,
    Register { master: Name },
    Ack { slave: Name },
}

impl Payload for BbMsg {
    fn control_bits(&self, s: &BitSizes) -> u32 {
        let fields = match self {
            BbMsg::Leader | BbMsg::Backbone => 0,
            BbMsg::Hop1 { .. } | BbMsg::Register { .. } | BbMsg::Ack { .. } => s.name,
            BbMsg::Hop2 { .. } => 2 * s.name + s.counter,
            BbMsg::Assign { .. } => 3 * s.name + 2 * s.counter,
            BbMsg::Relay { .. } => 3 * s.name + s.counter,
        };
        TAG_BITS + fields
    }
}

const HELLO: usize = 0;
const HOP1: usize = 1;
const HOP2: usize = 2;
const ASSIGN: usize = 3;
const RELAY: usize = 4;
const NEIGHBORS: usize = 5;
const CONTROL: usize = 6;
const REGISTER: usize = 7;
const ACK: usize = 8;
const PARTS: usize = 9;

/// Part boundaries and families, common knowledge of all nodes.
#[derive(Debug, Clone)]
pub struct ConnectLayout {
    pub light: Arc<SelectionFamily>,
    pub heavy: Arc<SelectionFamily>,
    /// Schedule of backbone announcements and of Inter_H.
    pub backbone: Arc<SelectionFamily>,
    /// `max(Δ, 1)`.
    pub delta: u64,
    /// Range of `t_v`.
    pub groups: u64,
    /// Range of the registration block.
    pub reg_blocks: u64,
    pub leader_slots: usize,
    pub two_hop_slots: usize,
    pub relay_slots: usize,
    /// Start of every part, then the end of the construction.
    pub bounds: [u64; PARTS + 1],
}

impl ConnectLayout {
    pub fn new(
        start: u64,
        max_degree: usize,
        name_space: u32,
        params: &Params,
        families: Families,
    ) -> Self {
        let Families { light, heavy, backbone } = families;
        let delta = (max_degree as u64).max(1);
        let groups = params.tv_factor as u64 * delta;
        let reg_blocks = params.intra_factor as u64 * delta * log2_ceil(name_space as u64) as u64;
        let (l, h, b) = (light.len() as u64, heavy.len() as u64, backbone.len() as u64);
        let lens = [
            l,
            groups * params.leader_slots as u64 * h,
            groups * params.two_hop_slots as u64 * h,
            params.relay_slots as u64 * l,
            params.relay_slots as u64 * l,
            b,
            b,
            reg_blocks * h,
            delta * l,
        ];
        let mut bounds = [start; PARTS + 1];
        for k in 0..PARTS {
            bounds[k + 1] = bounds[k] + lens[k];
        }
        ConnectLayout {
            light,
            heavy,
            backbone,
            delta,
            groups,
            reg_blocks,
            leader_slots: params.leader_slots as usize,
            two_hop_slots: params.two_hop_slots as usize,
            relay_slots: params.relay_slots as usize,
            bounds,
        }
    }

    pub fn start(&self) -> u64 {
        self.bounds[0]
    }

    pub fn end(&self) -> u64 {
        self.bounds[PARTS]
    }

    /// Inter_H multi-round length `a1`.
    pub fn a1(&self) -> u64 {
        self.backbone.len() as u64
    }

    /// Intra_H length `a2`.
    pub fn a2(&self) -> u64 {
        self.delta * self.light.len() as u64
    }
}

/// One leader pair a connector serves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ConnectorEntry {
    pub node: Name,
    pub from: Name,
    pub to: Name,
    /// The other connector of a two-connector path.
    pub via: Option<Name>,
}

#[derive(Debug, Clone, Copy)]
enum Fam {
    Light,
    Heavy,
    Backbone,
}

#[derive(Debug, Clone)]
struct Exec {
    start: u64,
    fam: Fam,
    msg: BbMsg,
}

#[derive(Debug, Clone)]
pub struct ConnectCore {
    name: Name,
    layout: Arc<ConnectLayout>,
    pub leader: bool,
    pub master: Option<Name>,
    entered: usize,
    queue: VecDeque<Exec>,
    pub my_leaders: Vec<Name>,
    two_hop: BTreeMap<Name, (Name, u64)>,
    t_v: u64,
    singles: BTreeMap<Name, (Name, u64)>,
    pairs: BTreeMap<Name, ((Name, u64), (Name, u64))>,
    /// Connector records: this node connects `from` to `to`.
    pub records: Vec<ConnectorEntry>,
    relays: Vec<BbMsg>,
    pub backbone_neighbors: BTreeSet<Name>,
    heard_backbone: BTreeSet<Name>,
    pub slaves: Vec<Name>,
    pub sigma: Option<u32>,
}

impl ConnectCore {
    pub fn new(name: Name, layout: Arc<ConnectLayout>, leader: bool, master: Option<Name>) -> Self {
        ConnectCore {
            name,
            layout,
            leader,
            master: if leader { None } else { master },
            entered: 0,
            queue: VecDeque::new(),
            my_leaders: Vec::new(),
            two_hop: BTreeMap::new(),
            t_v: 0,
            singles: BTreeMap::new(),
            pairs: BTreeMap::new(),
            records: Vec::new(),
            relays: Vec::new(),
            backbone_neighbors: BTreeSet::new(),
            heard_backbone: BTreeSet::new(),
            slaves: Vec::new(),
            sigma: None,
        }
    }

    pub fn in_backbone(&self) -> bool {
        self.leader || !self.records.is_empty()
    }

    fn family(&self, fam: Fam) -> &SelectionFamily {
        match fam {
            Fam::Light => &self.layout.light,
            Fam::Heavy => &self.layout.heavy,
            Fam::Backbone => &self.layout.backbone,
        }
    }

    fn push(&mut self, start: u64, fam: Fam, msg: BbMsg) {
        self.queue.push_back(Exec { start, fam, msg });
    }

    /// Connector choice per far leader: the smallest single connector, or
    /// failing that the lexicographically smallest pair.
    fn choices(&self) -> Vec<BbMsg> {
        let mut far: BTreeSet<Name> = self.singles.keys().copied().collect();
        far.extend(self.pairs.keys().copied());
        far.into_iter()
            .filter(|&u| u != self.name)
            .map(|u| match self.singles.get(&u) {
                Some(&first) => BbMsg::Assign { far: u, first, second: None },
                None => {
                    let (first, second) = self.pairs[&u];
                    BbMsg::Assign { far: u, first, second: Some(second) }
                }
            })
            .take(self.layout.relay_slots)
            .collect()
    }

    fn enter(&mut self, part: usize, rng: &mut BitStream) {
        let lay = self.layout.clone();
        let b = lay.bounds[part];
        let (l, h) = (lay.light.len() as u64, lay.heavy.len() as u64);
        match part {
            HELLO if self.leader => self.push(b, Fam::Light, BbMsg::Leader),
            HOP1 if !self.leader => {
                self.t_v = rng.uniform(lay.groups);
                let group = self.t_v * lay.leader_slots as u64;
                for (j, &u) in self.my_leaders.clone().iter().enumerate() {
                    self.push(b + (group + j as u64) * h, Fam::Heavy, BbMsg::Hop1 { leader: u });
                }
            }
            HOP2 if !self.leader => {
                let group = self.t_v * lay.two_hop_slots as u64;
                let mut known: Vec<BbMsg> =
                    self.my_leaders.iter().map(|&u| BbMsg::Hop2 { leader: u, via: None }).collect();
                known.extend(
                    self.two_hop
                        .iter()
                        .filter(|(u, _)| !self.my_leaders.contains(u))
                        .map(|(&u, &via)| BbMsg::Hop2 { leader: u, via: Some(via) }),
                );
                for (j, msg) in known.into_iter().take(lay.two_hop_slots).enumerate() {
                    self.push(b + (group + j as u64) * h, Fam::Heavy, msg);
                }
            }
            ASSIGN if self.leader => {
                for (j, msg) in self.choices().into_iter().enumerate() {
                    self.push(b + j as u64 * l, Fam::Light, msg);
                }
            }
            RELAY => {
                let relays: Vec<BbMsg> = self.relays.iter().copied().take(lay.relay_slots).collect();
                for (j, msg) in relays.into_iter().enumerate() {
                    self.push(b + j as u64 * l, Fam::Light, msg);
                }
            }
            NEIGHBORS | CONTROL if self.in_backbone() => self.push(b, Fam::Backbone, BbMsg::Backbone),
            REGISTER if !self.in_backbone() => {
                if self.master.is_none() {
                    self.master = self.heard_backbone.iter().next().copied();
                }
                if let Some(master) = self.master {
                    let t = rng.uniform(lay.reg_blocks);
                    self.push(b + t * h, Fam::Heavy, BbMsg::Register { master });
                }
            }
            ACK if self.in_backbone() => {
                self.slaves.sort_unstable();
                self.slaves.dedup();
                let acks: Vec<Name> = self.slaves.iter().copied().take(lay.delta as usize).collect();
                for (k, slave) in acks.into_iter().enumerate() {
                    self.push(b + k as u64 * l, Fam::Light, BbMsg::Ack { slave });
                }
            }
            _ => {}
        }
    }

    fn exec_slot(&self, e: &Exec, from: u64) -> Option<u64> {
        let fam = self.family(e.fam);
        next_slot_round(fam, self.name, e.start, from.max(e.start)).filter(|&r| r < e.start + fam.len() as u64)
    }

    pub fn first_poll(&self) -> u64 {
        self.layout.start()
    }

    pub fn act(&mut self, t: u64, rng: &mut BitStream) -> (Option<BbMsg>, Poll) {
        while self.entered < PARTS && self.layout.bounds[self.entered] <= t {
            self.enter(self.entered, rng);
            self.entered += 1;
        }
        let mut tx = None;
        while let Some(e) = self.queue.front() {
            match self.exec_slot(e, t) {
                None => {
                    self.queue.pop_front();
                }
                Some(r) => {
                    if r == t {
                        tx = Some(e.msg);
                    }
                    break;
                }
            }
        }
        let next_slot = self.queue.iter().find_map(|e| self.exec_slot(e, t + 1));
        let boundary = (self.entered < PARTS).then(|| self.layout.bounds[self.entered]);
        let next = match (next_slot, boundary) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
        (tx, next.map_or(Poll::Never, Poll::At))
    }

    pub fn receive(&mut self, t: u64, src: Name, msg: &BbMsg) {
        let me = self.name;
        match *msg {
            BbMsg::Leader => {
                if !self.leader && self.my_leaders.len() < self.layout.leader_slots && !self.my_leaders.contains(&src) {
                    self.my_leaders.push(src);
                }
            }
            BbMsg::Hop1 { leader: u } if u != me => {
                let map = if self.leader { &mut self.singles } else { &mut self.two_hop };
                let e = map.entry(u).or_insert((src, t));
                if src < e.0 {
                    *e = (src, t);
                }
            }
            BbMsg::Hop2 { leader: u, via } if self.leader && u != me => match via {
                None => {
                    let e = self.singles.entry(u).or_insert((src, t));
                    if src < e.0 {
                        *e = (src, t);
                    }
                }
                Some(second) if second.0 != me => {
                    let cand = ((src, t), second);
                    let e = self.pairs.entry(u).or_insert(cand);
                    if (src, second.0) < (e.0 .0, e.1 .0) {
                        *e = cand;
                    }
                }
                Some(_) => {}
            },
            BbMsg::Assign { far, first, second } if first.0 == me => {
                self.records.push(ConnectorEntry { node: me, from: far, to: src, via: second.map(|s| s.0) });
                if let Some((g2, f2)) = second {
                    self.relays.push(BbMsg::Relay { far, near: src, to: g2, round: f2 });
                }
            }
            BbMsg::Relay { far, near, to, .. } if to == me => {
                self.records.push(ConnectorEntry { node: me, from: far, to: near, via: Some(src) });
            }
            BbMsg::Backbone => {
                if self.in_backbone() {
                    self.backbone_neighbors.insert(src);
                } else {
                    self.heard_backbone.insert(src);
                }
            }
            BbMsg::Register { master } if master == me && self.in_backbone() => self.slaves.push(src),
            BbMsg::Ack { slave } if slave == me && self.master == Some(src) && self.sigma.is_none() => {
                let l = self.layout.light.len() as u64;
                self.sigma = Some(((t - self.layout.bounds[ACK]) / l) as u32);
            }
            _ => {}
        }
    }
}

/// Identifies a cached family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FamilyRef {
    pub name_space: u32,
    #[serde(flatten)]
    pub kind: FamilyKind,
    pub seed: u64,
    pub constant: f64,
}

/// Leaders, connectors, master assignment and the backbone schedules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneResult {
    pub name_space: u32,
    pub leaders: Vec<Name>,
    pub connectors: Vec<ConnectorEntry>,
    /// Non-backbone node to backbone node.
    pub masters: BTreeMap<Name, Name>,
    /// Position of each slave in its master's list.
    pub sigma: BTreeMap<Name, u32>,
    /// Backbone neighbours each backbone node recorded.
    pub neighbors: BTreeMap<Name, Vec<Name>>,
    pub a1: u64,
    pub a2: u64,
    pub inter_family: FamilyRef,
    pub intra_family: FamilyRef,
}

impl BackboneResult {
    pub fn connector_names(&self) -> BTreeSet<Name> {
        self.connectors.iter().map(|c| c.node).collect()
    }

    /// Leaders and connectors.
    pub fn backbone(&self) -> BTreeSet<Name> {
        let mut h = self.connector_names();
        h.extend(self.leaders.iter().copied());
        h
    }

    /// Leader pairs served per connector.
    pub fn max_pairs_per_connector(&self) -> usize {
        let mut per: BTreeMap<Name, BTreeSet<(Name, Name)>> = BTreeMap::new();
        for c in &self.connectors {
            per.entry(c.node).or_default().insert((c.from.min(c.to), c.from.max(c.to)));
        }
        per.values().map(|s| s.len()).max().unwrap_or(0)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

fn family_ref(name_space: u32, fam: &SelectionFamily, params: &Params) -> FamilyRef {
    FamilyRef { name_space, kind: fam.kind(), seed: params.family_seed, constant: params.c_ssf }
}

/// Collect the result from finished cores, indexed like `network`.
pub fn collect(network: &Network, layout: &ConnectLayout, params: &Params, cores: &[&ConnectCore]) -> BackboneResult {
    let mut res = BackboneResult {
        name_space: network.name_space(),
        leaders: Vec::new(),
        connectors: Vec::new(),
        masters: BTreeMap::new(),
        sigma: BTreeMap::new(),
        neighbors: BTreeMap::new(),
        a1: layout.a1(),
        a2: layout.a2(),
        inter_family: family_ref(network.name_space(), &layout.backbone, params),
        intra_family: family_ref(network.name_space(), &layout.light, params),
    };
    for (i, c) in cores.iter().enumerate() {
        let v = network.name(i);
        if c.leader {
            res.leaders.push(v);
        }
        res.connectors.extend(c.records.iter().copied());
        if c.in_backbone() {
            res.neighbors.insert(v, c.backbone_neighbors.iter().copied().collect());
        } else {
            if let Some(m) = c.master {
                res.masters.insert(v, m);
            }
            if let Some(s) = c.sigma {
                res.sigma.insert(v, s);
            }
        }
    }
    res.connectors.sort_unstable();
    res.connectors.dedup();
    res
}

#[derive(Debug, Clone)]
pub struct ConnectNode {
    pub core: ConnectCore,
}

impl Behavior for ConnectNode {
    type Msg = BbMsg;

    fn act(&mut self, ctx: &mut NodeCtx<'_>, round: u64) -> Action<BbMsg> {
        match self.core.act(round, ctx.rng) {
            (Some(m), p) => Action::Transmit(m, p),
            (None, p) => Action::Listen(p),
        }
    }

    fn receive(&mut self, _: &mut NodeCtx<'_>, round: u64, msg: &Message<BbMsg>) -> Option<Poll> {
        self.core.receive(round, msg.src, &msg.payload);
        None
    }
}

pub fn connect_layout(network: &Network, params: &Params, start: u64) -> Result<Arc<ConnectLayout>, ProtocolError> {
    let n = network.name_space();
    Ok(Arc::new(ConnectLayout::new(start, network.max_degree(), n, params, Families::new(n, params)?)))
}

/// Run ConnectBB from a given MIS; `masters` optionally carries the
/// master of each non-leader.
pub fn connect_bb(
    network: &Network,
    leaders: &[Name],
    masters: &BTreeMap<Name, Name>,
    params: &Params,
    seed: u64,
    round_limit: u64,
) -> Result<(Summary, BackboneResult), ProtocolError> {
    let layout = connect_layout(network, params, 0)?;
    let nodes: Vec<ConnectNode> = network
        .names()
        .iter()
        .map(|&v| ConnectNode {
            core: ConnectCore::new(v, layout.clone(), leaders.contains(&v), masters.get(&v).copied()),
        })
        .collect();
    let (summary, nodes) = engine::run(network, nodes, &StartMode::Synchronized, seed, round_limit)?;
    let cores: Vec<&ConnectCore> = nodes.iter().map(|n| &n.core).collect();
    Ok((summary, collect(network, &layout, params, &cores)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BackboneMsg {
    Mis(MisMsg),
    Bb(BbMsg),
}

impl Payload for BackboneMsg {
    fn control_bits(&self, s: &BitSizes) -> u32 {
        match self {
            BackboneMsg::Mis(m) => m.control_bits(s),
            BackboneMsg::Bb(m) => m.control_bits(s),
        }
    }
}

/// The election followed by connector selection in one schedule.
#[derive(Debug, Clone)]
pub struct BackboneCore {
    pub mis: MisCore,
    pub connect: Option<ConnectCore>,
    layout: Arc<ConnectLayout>,
}

impl BackboneCore {
    pub fn new(name: Name, mis_sched: Arc<MisSchedule>, layout: Arc<ConnectLayout>) -> Self {
        BackboneCore { mis: MisCore::new(name, mis_sched), connect: None, layout }
    }

    pub fn first_poll(&self) -> u64 {
        self.mis.first_poll()
    }

    pub fn act(&mut self, t: u64, rng: &mut BitStream) -> (Option<BackboneMsg>, Poll) {
        let switch = self.layout.start();
        if t < switch {
            let (m, p) = self.mis.act(t, rng);
            let p = match p {
                Poll::At(r) if r < switch => Poll::At(r),
                _ => Poll::At(switch),
            };
            return (m.map(BackboneMsg::Mis), p);
        }
        let mis = &self.mis;
        let c = self.connect.get_or_insert_with(|| {
            let leader = mis.status == MisStatus::Leader;
            ConnectCore::new(mis.name(), self.layout.clone(), leader, mis.master)
        });
        let (m, p) = c.act(t, rng);
        (m.map(BackboneMsg::Bb), p)
    }

    pub fn receive(&mut self, t: u64, src: Name, msg: &BackboneMsg) {
        match msg {
            BackboneMsg::Mis(m) if t < self.layout.start() => self.mis.receive(t, src, *m),
            BackboneMsg::Bb(m) => {
                if let Some(c) = self.connect.as_mut() {
                    c.receive(t, src, m)
                }
            }
            _ => {}
        }
    }
}

#[derive(Debug, Clone)]
pub struct BackboneNode {
    pub core: BackboneCore,
}

impl Behavior for BackboneNode {
    type Msg = BackboneMsg;

    fn act(&mut self, ctx: &mut NodeCtx<'_>, round: u64) -> Action<BackboneMsg> {
        match self.core.act(round, ctx.rng) {
            (Some(m), p) => Action::Transmit(m, p),
            (None, p) => Action::Listen(p),
        }
    }

    fn receive(&mut self, _: &mut NodeCtx<'_>, round: u64, msg: &Message<BackboneMsg>) -> Option<Poll> {
        self.core.receive(round, msg.src, &msg.payload);
        None
    }

    fn status(&self) -> &'static str {
        match &self.core.connect {
            None => mis::status_label(self.core.mis.status),
            Some(c) if c.leader => "leader",
            Some(c) if c.in_backbone() => "connector",
            Some(_) => "slave",
        }
    }
}

/// Layouts for a Backbone run that starts at `start`.
pub fn backbone_plan(
    network: &Network,
    params: &Params,
    start: u64,
) -> Result<(Arc<MisSchedule>, Arc<ConnectLayout>), ProtocolError> {
    let n = network.name_space();
    let families = Families::new(n, params)?;
    let sched = Arc::new(MisSchedule::new(start, network.max_degree(), n, params, families.heavy.clone()));
    let layout = Arc::new(ConnectLayout::new(sched.end(), network.max_degree(), n, params, families));
    Ok((sched, layout))
}

pub fn backbone_nodes(network: &Network, sched: &Arc<MisSchedule>, layout: &Arc<ConnectLayout>) -> Vec<BackboneNode> {
    network
        .names()
        .iter()
        .map(|&v| BackboneNode { core: BackboneCore::new(v, sched.clone(), layout.clone()) })
        .collect()
}

#[derive(Debug, Clone)]
pub struct BackboneRun {
    pub summary: Summary,
    pub mis: MisOutcome,
    pub result: BackboneResult,
}

/// Summarize finished Backbone cores; `None` marks nodes that never joined.
pub fn backbone_outcome(
    network: &Network,
    params: &Params,
    sched: &MisSchedule,
    layout: &Arc<ConnectLayout>,
    cores: &[Option<&BackboneCore>],
) -> (MisOutcome, BackboneResult) {
    let mis_cores: Vec<Option<&MisCore>> = cores.iter().map(|c| c.map(|c| &c.mis)).collect();
    let mis = mis::outcome(network, sched, &mis_cores);
    let idle: Vec<ConnectCore> =
        network.names().iter().map(|&v| ConnectCore::new(v, layout.clone(), false, None)).collect();
    let connect: Vec<&ConnectCore> = cores
        .iter()
        .enumerate()
        .map(|(i, c)| c.and_then(|c| c.connect.as_ref()).unwrap_or(&idle[i]))
        .collect();
    (mis, collect(network, layout, params, &connect))
}

/// MIS election followed by ConnectBB, under a synchronized start.
pub fn backbone(network: &Network, params: &Params, seed: u64, round_limit: u64) -> Result<BackboneRun, ProtocolError> {
    let (sched, layout) = backbone_plan(network, params, 0)?;
    let nodes = backbone_nodes(network, &sched, &layout);
    let (summary, nodes) = engine::run(network, nodes, &StartMode::Synchronized, seed, round_limit)?;
    let cores: Vec<Option<&BackboneCore>> = nodes.iter().map(|n| Some(&n.core)).collect();
    let (mis, result) = backbone_outcome(network, params, &sched, &layout, &cores);
    Ok(BackboneRun { summary, mis, result })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum InterMsg {
    /// A backbone node's own message.
    Own,
    /// A master relaying the message of `origin` to its slaves.
    Relay { origin: Name },
}

impl Payload for InterMsg {
    fn control_bits(&self, s: &BitSizes) -> u32 {
        TAG_BITS + if let InterMsg::Relay { .. } = self { s.name } else { 0 }
    }
}

#[derive(Debug, Clone)]
struct InterNode {
    name: Name,
    backbone: bool,
    master: Option<Name>,
    light: Arc<SelectionFamily>,
    relay_cap: usize,
    heard: Vec<Name>,
    relayed: Vec<Name>,
    queue: VecDeque<(u64, InterMsg)>,
    planned: bool,
}

impl Behavior for InterNode {
    type Msg = InterMsg;

    fn act(&mut self, _: &mut NodeCtx<'_>, t: u64) -> Action<InterMsg> {
        let l = self.light.len() as u64;
        if !self.planned && t >= l {
            self.planned = true;
            if self.backbone {
                let mut origins = self.heard.clone();
                origins.sort_unstable();
                origins.dedup();
                for (k, origin) in origins.into_iter().take(self.relay_cap).enumerate() {
                    self.queue.push_back((l + k as u64 * l, InterMsg::Relay { origin }));
                }
            }
        }
        let name = self.name;
        let slot = |start: u64, from: u64| next_slot_round(&self.light, name, start, from).filter(|&r| r < start + l);
        let mut tx = None;
        while let Some(&(start, msg)) = self.queue.front() {
            match slot(start, t.max(start)) {
                None => {
                    self.queue.pop_front();
                }
                Some(r) => {
                    if r == t {
                        tx = Some(msg);
                    }
                    break;
                }
            }
        }
        let mut next = self.queue.iter().find_map(|&(s, _)| slot(s, (t + 1).max(s)));
        if !self.planned {
            next = Some(next.map_or(l, |r| r.min(l)));
        }
        let poll = next.map_or(Poll::Never, Poll::At);
        match tx {
            Some(m) => Action::Transmit(m, poll),
            None => Action::Listen(poll),
        }
    }

    fn receive(&mut self, _: &mut NodeCtx<'_>, t: u64, msg: &Message<InterMsg>) -> Option<Poll> {
        let l = self.light.len() as u64;
        match msg.payload {
            InterMsg::Own if t < l => self.heard.push(msg.src),
            InterMsg::Relay { origin } if Some(msg.src) == self.master && !self.relayed.contains(&origin) => {
                self.relayed.push(origin)
            }
            _ => {}
        }
        None
    }
}

/// Delivery report of one Inter_H multi-round and the relay to slaves.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InterReport {
    /// Backbone pairs adjacent in the communication graph.
    pub pairs: usize,
    /// Of those, pairs where each side heard the other.
    pub exchanged: usize,
    pub slaves: usize,
    /// Slaves that received every message their master relayed.
    pub relayed: usize,
    pub rounds: u64,
}

impl InterReport {
    pub fn complete(&self) -> bool {
        self.pairs == self.exchanged && self.slaves == self.relayed
    }
}

/// One Inter_H multi-round among backbone nodes, then `relay_cap` light
/// executions in which masters forward what they heard to their slaves.
pub fn run_inter_h(
    network: &Network,
    bb: &BackboneResult,
    params: &Params,
    seed: u64,
) -> Result<(Summary, InterReport), ProtocolError> {
    let light = backbone_family(network.name_space(), params)?;
    let h = bb.backbone();
    let nodes: Vec<InterNode> = network
        .names()
        .iter()
        .map(|&v| {
            let backbone = h.contains(&v);
            InterNode {
                name: v,
                backbone,
                master: bb.masters.get(&v).copied(),
                light: light.clone(),
                relay_cap: params.relay_cap as usize,
                heard: Vec::new(),
                relayed: Vec::new(),
                queue: if backbone { VecDeque::from([(0, InterMsg::Own)]) } else { VecDeque::new() },
                planned: false,
            }
        })
        .collect();
    let (summary, nodes) = engine::run(network, nodes, &StartMode::Synchronized, seed, super::dfs::UNBOUNDED)?;
    let mut report = InterReport { pairs: 0, exchanged: 0, slaves: 0, relayed: 0, rounds: summary.rounds };
    for (a, b) in network.edges() {
        if h.contains(&a) && h.contains(&b) {
            report.pairs += 1;
            let (ia, ib) = (network.index(a).unwrap(), network.index(b).unwrap());
            if nodes[ia].heard.contains(&b) && nodes[ib].heard.contains(&a) {
                report.exchanged += 1;
            }
        }
    }
    for node in &nodes {
        if node.backbone {
            continue;
        }
        report.slaves += 1;
        let expected: Vec<Name> = match node.master.and_then(|m| network.index(m)) {
            Some(m) => {
                let mut o = nodes[m].heard.clone();
                o.sort_unstable();
                o.dedup();
                o.truncate(params.relay_cap as usize);
                o
            }
            None => continue,
        };
        if expected.iter().all(|o| node.relayed.contains(o)) {
            report.relayed += 1;
        }
    }
    Ok((summary, report))
}

#[derive(Debug, Clone)]
struct IntraNode {
    name: Name,
    master: Option<Name>,
    sigma: Option<u32>,
    light: Arc<SelectionFamily>,
    heard: Vec<Name>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct IntraMsg {
    pub master: Name,
}

impl Payload for IntraMsg {
    fn control_bits(&self, s: &BitSizes) -> u32 {
        TAG_BITS + s.name
    }
}

impl Behavior for IntraNode {
    type Msg = IntraMsg;

    fn act(&mut self, _: &mut NodeCtx<'_>, t: u64) -> Action<IntraMsg> {
        let (Some(sigma), Some(master)) = (self.sigma, self.master) else {
            return Action::Listen(Poll::Never);
        };
        let l = self.light.len() as u64;
        let start = sigma as u64 * l;
        let slot = |from: u64| next_slot_round(&self.light, self.name, start, from).filter(|&r| r < start + l);
        let tx = slot(t) == Some(t);
        let poll = slot(t + 1).map_or(Poll::Never, Poll::At);
        if tx {
            Action::Transmit(IntraMsg { master }, poll)
        } else {
            Action::Listen(poll)
        }
    }

    fn receive(&mut self, _: &mut NodeCtx<'_>, _: u64, msg: &Message<IntraMsg>) -> Option<Poll> {
        if msg.payload.master == self.name {
            self.heard.push(msg.src);
        }
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntraReport {
    pub slaves: usize,
    pub delivered: usize,
    /// Every master's slaves hold distinct positions.
    pub unique_sigma: bool,
    pub rounds: u64,
}

impl IntraReport {
    pub fn complete(&self) -> bool {
        self.slaves == self.delivered && self.unique_sigma
    }
}

/// Every slave transmits to its master in rounds `[σ z, σ z + z)` of the
/// light family of length `z`; all must arrive within `a2` rounds.
pub fn run_intra_h(
    network: &Network,
    bb: &BackboneResult,
    params: &Params,
    seed: u64,
) -> Result<(Summary, IntraReport), ProtocolError> {
    let light = light_family(network.name_space(), params)?;
    let nodes: Vec<IntraNode> = network
        .names()
        .iter()
        .map(|&v| IntraNode {
            name: v,
            master: bb.masters.get(&v).copied(),
            sigma: bb.sigma.get(&v).copied(),
            light: light.clone(),
            heard: Vec::new(),
        })
        .collect();
    let (summary, nodes) = engine::run(network, nodes, &StartMode::Synchronized, seed, super::dfs::UNBOUNDED)?;
    let h = bb.backbone();
    let mut seen: BTreeSet<(Name, u32)> = BTreeSet::new();
    let mut unique_sigma = true;
    for (&v, &s) in &bb.sigma {
        if let Some(&m) = bb.masters.get(&v) {
            unique_sigma &= seen.insert((m, s));
        }
    }
    let mut report = IntraReport { slaves: 0, delivered: 0, unique_sigma, rounds: summary.rounds };
    for &v in network.names() {
        if h.contains(&v) {
            continue;
        }
        report.slaves += 1;
        let ok = bb.masters.get(&v).and_then(|&m| network.index(m)).is_some_and(|m| nodes[m].heard.contains(&v));
        if ok && summary.rounds <= bb.a2 {
            report.delivered += 1;
        }
    }
    Ok((summary, report))
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

    fn path(n: usize) -> Network {
        let step = 0.95 * PhysicalConfig::default().comm_radius();
        net(&(0..n).map(|i| (i as f64 * step, 0.0)).collect::<Vec<_>>())
    }

    #[test]
    fn star_single_leader_has_no_connectors() {
        let r = 0.9 * PhysicalConfig::default().comm_radius();
        let mut pts = vec![(0.0, 0.0)];
        for k in 0..5 {
            let a = 2.0 * std::f64::consts::PI * k as f64 / 5.0;
            pts.push((r * a.cos(), r * a.sin()));
        }
        let n = net(&pts);
        let masters: BTreeMap<Name, Name> = (2..=6).map(|v| (v, 1)).collect();
        let (_, bb) = connect_bb(&n, &[1], &masters, &Params::default(), 3, 1 << 40).unwrap();
        assert!(bb.connectors.is_empty());
        assert_eq!(bb.backbone(), BTreeSet::from([1]));
        assert_eq!(bb.masters, masters);
    }

    #[test]
    fn path_of_five_connectors() {
        let n = path(5);
        let masters = BTreeMap::from([(2, 1), (4, 3)]);
        let (_, bb) = connect_bb(&n, &[1, 3, 5], &masters, &Params::default(), 7, 1 << 40).unwrap();
        assert_eq!(bb.connector_names(), BTreeSet::from([2, 4]));
        assert_eq!(bb.backbone(), (1..=5).collect());
        assert!(bb.masters.is_empty());
    }

    #[test]
    fn distance_three_pair() {
        let n = path(4);
        let masters = BTreeMap::from([(2, 1), (3, 4)]);
        let (_, bb) = connect_bb(&n, &[1, 4], &masters, &Params::default(), 2, 1 << 40).unwrap();
        assert_eq!(bb.connector_names(), BTreeSet::from([2, 3]));
        let from_1: Vec<&ConnectorEntry> = bb.connectors.iter().filter(|c| c.to == 1).collect();
        assert_eq!(from_1.len(), 2);
        assert!(from_1.iter().any(|c| c.node == 2 && c.via == Some(3)));
        assert!(from_1.iter().any(|c| c.node == 3 && c.via == Some(2)));
    }

    #[test]
    fn backbone_on_path_and_schedules() {
        let n = path(6);
        let run = backbone(&n, &Params::default(), 5, 1 << 40).unwrap();
        assert!(run.mis.complete);
        let h = run.result.backbone();
        assert!(h.len() >= 4);
        let (_, inter) = run_inter_h(&n, &run.result, &Params::default(), 1).unwrap();
        assert!(inter.complete(), "{inter:?}");
        let (_, intra) = run_intra_h(&n, &run.result, &Params::default(), 1).unwrap();
        assert!(intra.complete(), "{intra:?}");
        let back = BackboneResult::from_json(&run.result.to_json()).unwrap();
        assert_eq!(back, run.result);
    }

    #[test]
    fn single_backbone_node_inter_vacuous() {
        let n = net(&[(0.0, 0.0)]);
        let run = backbone(&n, &Params::default(), 1, 1 << 40).unwrap();
        let (_, inter) = run_inter_h(&n, &run.result, &Params::default(), 1).unwrap();
        assert_eq!(inter.pairs, 0);
        assert!(inter.complete());
    }
}
