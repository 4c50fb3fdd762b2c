//! Network generators, exhaustive oracles, scenario execution and metrics.

use std::collections::{BTreeSet, VecDeque};
use std::io::Write;
use std::path::PathBuf;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{self, Engine, EngineError, StartMode, Summary};
use crate::phys::{self, Name, Network, PhysError, PhysicalConfig, Placement, Point};
use crate::protocols::connect::{self, BackboneCore, BackboneResult};
use crate::protocols::dfs::{self, DfsCore, DfsMode};
use crate::protocols::emulated::{self, EmuPlan};
use crate::protocols::mis::{self, MisCore};
use crate::protocols::{Params, ProtocolError};

/// Attempts at drawing a connected random placement.
pub const GENERATE_RETRIES: u64 = 20;
/// Largest instance on which the minimum connected dominating set is
/// computed exhaustively.
pub const MIN_CDS_LIMIT: usize = 12;
/// Bound on the number of backbone neighbours of a backbone node.
pub const BACKBONE_DEGREE_BOUND: usize = 64;
/// Documented bound on per-node random bits, as a multiple of `log2^3 N`.
/// One ESUN participation costs up to about `8 log^3 N`; in an emulated
/// search a node takes part again each time a higher source takes it over.
pub const C_BITS: f64 = 32.0;
/// Documented bound on message control bits, as a multiple of `log2 N`.
pub const B_MSG: f64 = 32.0;
/// Scenario file format version.
pub const SCHEMA: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Phys(#[from] PhysError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("no connected placement after {0} attempts")]
    Disconnected(u64),
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error("fit: {0}")]
    Fit(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl From<EngineError> for HarnessError {
    fn from(e: EngineError) -> Self {
        HarnessError::Protocol(ProtocolError::Engine(e))
    }
}

/// Placement generators. Lengths are in units of the communication radius
/// `(1 - eps_c) r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Generator {
    /// `n` nodes uniformly in a square, with distinct random names.
    UniformSquare { n: usize, side: f64 },
    /// Names `1..=n` along a horizontal line.
    Path { n: usize, spacing: f64 },
    /// A `k x k` lattice, names row by row.
    Grid { k: usize, spacing: f64 },
    /// Name 1 at the centre, `n - 1` leaves evenly on a circle.
    Star {
        n: usize,
        #[serde(default = "default_star_radius")]
        radius: f64,
    },
    File { path: PathBuf },
}

fn default_star_radius() -> f64 {
    0.9
}

impl Generator {
    pub fn node_count(&self) -> Option<usize> {
        match self {
            Generator::UniformSquare { n, .. } | Generator::Path { n, .. } | Generator::Star { n, .. } => Some(*n),
            Generator::Grid { k, .. } => Some(k * k),
            Generator::File { .. } => None,
        }
    }

    /// Side of a square holding `n` uniform nodes with the given mean degree.
    pub fn square_side_for_degree(n: usize, mean_degree: f64) -> f64 {
        (n as f64 * std::f64::consts::PI / mean_degree).sqrt()
    }
}

fn line_placements(points: impl Iterator<Item = (f64, f64)>) -> Vec<Placement> {
    points.enumerate().map(|(i, (x, y))| Placement { name: i as Name + 1, pos: Point::new(x, y) }).collect()
}

/// A connected network for `seed`; random generators redraw up to
/// [`GENERATE_RETRIES`] times.
pub fn generate(gen: &Generator, name_space: u32, config: PhysicalConfig, seed: u64) -> Result<Network, HarnessError> {
    config.validate()?;
    let rc = config.comm_radius();
    let build = |pl: Vec<Placement>| -> Result<Network, HarnessError> {
        let net = Network::build(&pl, name_space, config)?;
        if graph_stats(&net).components > 1 {
            return Err(HarnessError::Disconnected(1));
        }
        Ok(net)
    };
    match gen {
        Generator::Path { n, spacing } => build(line_placements((0..*n).map(|i| (i as f64 * spacing * rc, 0.0)))),
        Generator::Grid { k, spacing } => build(line_placements(
            (0..k * k).map(|i| ((i % k) as f64 * spacing * rc, (i / k) as f64 * spacing * rc)),
        )),
        Generator::Star { n, radius } => {
            let leaves = n.saturating_sub(1);
            let pts = std::iter::once((0.0, 0.0)).chain((0..leaves).map(|k| {
                let a = 2.0 * std::f64::consts::PI * k as f64 / leaves as f64;
                (radius * rc * a.cos(), radius * rc * a.sin())
            }));
            build(line_placements(pts.take(*n)))
        }
        Generator::File { path } => build(phys::read_placements(path)?),
        Generator::UniformSquare { n, side } => {
            if *n as u64 > name_space as u64 {
                return Err(HarnessError::Scenario(format!("{n} nodes exceed name space {name_space}")));
            }
            let min_sep = 1e-6 * config.max_range();
            for attempt in 0..GENERATE_RETRIES {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(attempt);
                let names = sample(&mut rng, name_space as usize, *n);
                let pl: Vec<Placement> = names
                    .iter()
                    .map(|v| Placement {
                        name: v as Name + 1,
                        pos: Point::new(rng.gen::<f64>() * side * rc, rng.gen::<f64>() * side * rc),
                    })
                    .collect();
                let close = pl.iter().enumerate().any(|(i, a)| pl[i + 1..].iter().any(|b| a.pos.dist(&b.pos) < min_sep));
                if close {
                    continue;
                }
                if let Ok(net) = build(pl) {
                    return Ok(net);
                }
            }
            Err(HarnessError::Disconnected(GENERATE_RETRIES))
        }
    }
}

fn bfs(adj: &dyn Fn(usize) -> Vec<usize>, n: usize, src: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; n];
    dist[src] = Some(0);
    let mut q = VecDeque::from([src]);
    while let Some(u) = q.pop_front() {
        let d = dist[u].expect("queued nodes have a distance");
        for v in adj(u) {
            if dist[v].is_none() {
                dist[v] = Some(d + 1);
                q.push_back(v);
            }
        }
    }
    dist
}

fn neighbors_of(net: &Network, i: usize) -> Vec<usize> {
    net.neighbors(i).iter().map(|&j| j as usize).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GraphStats {
    pub max_degree: usize,
    /// `None` when the graph is disconnected.
    pub diameter: Option<usize>,
    pub components: usize,
}

pub fn graph_stats(net: &Network) -> GraphStats {
    let n = net.len();
    let adj = |u: usize| neighbors_of(net, u);
    let mut comp = vec![usize::MAX; n];
    let mut components = 0;
    for s in 0..n {
        if comp[s] == usize::MAX {
            for (v, d) in bfs(&adj, n, s).iter().enumerate() {
                if d.is_some() {
                    comp[v] = components;
                }
            }
            components += 1;
        }
    }
    let diameter = (components <= 1).then(|| {
        (0..n).map(|s| bfs(&adj, n, s).iter().flatten().copied().max().unwrap_or(0)).max().unwrap_or(0)
    });
    GraphStats { max_degree: net.max_degree(), diameter, components }
}

/// Independent, and every node outside `set` has a neighbour in it.
pub fn oracle_is_mis(net: &Network, set: &[Name]) -> bool {
    let Some(idx) = set.iter().map(|&v| net.index(v)).collect::<Option<BTreeSet<usize>>>() else {
        return false;
    };
    let independent = idx.iter().all(|&i| net.neighbors(i).iter().all(|&j| !idx.contains(&(j as usize))));
    let maximal = (0..net.len()).all(|i| idx.contains(&i) || net.neighbors(i).iter().any(|&j| idx.contains(&(j as usize))));
    independent && maximal
}

fn induced_diameter(net: &Network, members: &BTreeSet<usize>) -> Option<usize> {
    let n = net.len();
    let adj = |u: usize| neighbors_of(net, u).into_iter().filter(|v| members.contains(v)).collect::<Vec<_>>();
    let mut diameter = 0;
    for &s in members {
        let dist = bfs(&adj, n, s);
        for &v in members {
            diameter = diameter.max(dist[v]?);
        }
    }
    Some(diameter)
}

fn is_cds(net: &Network, members: &BTreeSet<usize>) -> bool {
    let dominating =
        (0..net.len()).all(|i| members.contains(&i) || net.neighbors(i).iter().any(|&j| members.contains(&(j as usize))));
    dominating && !members.is_empty() && induced_diameter(net, members).is_some()
}

/// Size of a minimum connected dominating set, by subset enumeration.
pub fn min_cds(net: &Network) -> Option<usize> {
    let n = net.len();
    if n == 0 || n > MIN_CDS_LIMIT {
        return None;
    }
    (1..=n).find(|&k| {
        (0u32..1 << n).filter(|m| m.count_ones() as usize == k).any(|m| {
            let set: BTreeSet<usize> = (0..n).filter(|i| m >> i & 1 == 1).collect();
            is_cds(net, &set)
        })
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BackboneReport {
    pub dominating: bool,
    pub connected: bool,
    pub degree_bounded: bool,
    pub masters_valid: bool,
    pub leaders_independent: bool,
    pub size: usize,
    pub max_degree: usize,
    pub diameter: Option<usize>,
    pub min_cds: Option<usize>,
    pub size_ratio: Option<f64>,
    pub diameter_ratio: Option<f64>,
}

impl BackboneReport {
    pub fn valid(&self) -> bool {
        self.dominating && self.connected && self.degree_bounded && self.masters_valid && self.leaders_independent
    }
}

pub fn oracle_backbone(net: &Network, bb: &BackboneResult) -> BackboneReport {
    let h: BTreeSet<usize> = bb.backbone().iter().filter_map(|&v| net.index(v)).collect();
    let known = h.len() == bb.backbone().len();
    let dominating =
        known && (0..net.len()).all(|i| h.contains(&i) || net.neighbors(i).iter().any(|&j| h.contains(&(j as usize))));
    let diameter = if known && !h.is_empty() { induced_diameter(net, &h) } else { None };
    let max_degree = h
        .iter()
        .map(|&i| net.neighbors(i).iter().filter(|&&j| h.contains(&(j as usize))).count())
        .max()
        .unwrap_or(0);
    let masters_valid = (0..net.len()).filter(|i| !h.contains(i)).all(|i| {
        bb.masters
            .get(&net.name(i))
            .and_then(|&m| net.index(m))
            .is_some_and(|m| h.contains(&m) && net.is_edge(i, m))
    });
    let leaders_independent = oracle_independent(net, &bb.leaders);
    let min = min_cds(net);
    let d = graph_stats(net).diameter;
    BackboneReport {
        dominating,
        connected: diameter.is_some(),
        degree_bounded: max_degree <= BACKBONE_DEGREE_BOUND,
        masters_valid,
        leaders_independent,
        size: h.len(),
        max_degree,
        diameter,
        min_cds: min,
        size_ratio: min.map(|m| h.len() as f64 / m as f64),
        diameter_ratio: match (diameter, d) {
            (Some(a), Some(b)) if b > 0 => Some(a as f64 / b as f64),
            (Some(_), Some(_)) => Some(0.0),
            _ => None,
        },
    }
}

fn oracle_independent(net: &Network, set: &[Name]) -> bool {
    let idx: BTreeSet<usize> = set.iter().filter_map(|&v| net.index(v)).collect();
    idx.len() == set.len() && idx.iter().all(|&i| net.neighbors(i).iter().all(|&j| !idx.contains(&(j as usize))))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitReport {
    pub c: f64,
    /// Largest of `max(y / (c f), c f / y)` over the rows.
    pub max_residual_ratio: f64,
    pub flagged: bool,
}

/// Least-squares `c` in `y = c f` over `(f, y)` points.
pub fn scaling_fit(points: &[(f64, f64)]) -> Result<FitReport, HarnessError> {
    let distinct: BTreeSet<u64> = points.iter().map(|p| p.0.to_bits()).collect();
    if distinct.len() < 3 {
        return Err(HarnessError::Fit(format!("need at least 3 distinct sizes, got {}", distinct.len())));
    }
    if points.iter().any(|&(f, y)| !(f > 0.0 && y > 0.0)) {
        return Err(HarnessError::Fit("model values and rounds must be positive".into()));
    }
    let c = points.iter().map(|&(f, y)| f * y).sum::<f64>() / points.iter().map(|&(f, _)| f * f).sum::<f64>();
    let max_residual_ratio =
        points.iter().map(|&(f, y)| (y / (c * f)).max(c * f / y)).fold(1.0, f64::max);
    Ok(FitReport { c, max_residual_ratio, flagged: max_residual_ratio > 2.0 })
}

/// Which nodes start an emulated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartSet {
    All,
    /// This many nodes, drawn per seed.
    Count(usize),
    Names(Vec<Name>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum Protocol {
    /// Size estimate by `initiator` (default: smallest name).
    Esun { initiator: Option<Name> },
    Lun { x: u32, initiator: Option<Name> },
    /// Token search from `source` (default: drawn per seed).
    Dfs { source: Option<Name> },
    Mis,
    /// MIS, ConnectBB, then one Inter_H and one Intra_H run.
    Backbone,
    Emulated { start: StartSet },
}

impl Protocol {
    pub fn label(&self) -> &'static str {
        match self {
            Protocol::Esun { .. } => "esun",
            Protocol::Lun { .. } => "lun",
            Protocol::Dfs { .. } => "dfs",
            Protocol::Mis => "mis",
            Protocol::Backbone => "backbone",
            Protocol::Emulated { .. } => "emulated",
        }
    }
}

fn default_physical() -> PhysicalConfig {
    PhysicalConfig::default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema: u32,
    pub generator: Generator,
    #[serde(default = "default_physical")]
    pub physical: PhysicalConfig,
    pub name_space: u32,
    pub seeds: Vec<u64>,
    pub round_limit: u64,
    pub protocol: Protocol,
    #[serde(default)]
    pub params: Params,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| HarnessError::Scenario(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.schema != SCHEMA {
            return Err(HarnessError::Scenario(format!("unsupported schema {} (expected {SCHEMA})", self.schema)));
        }
        if self.round_limit == 0 {
            return Err(HarnessError::Scenario("round_limit must be positive".into()));
        }
        if self.name_space == 0 {
            return Err(HarnessError::Scenario("name_space must be positive".into()));
        }
        self.physical.validate()?;
        self.params.validate().map_err(HarnessError::Scenario)?;
        Ok(())
    }
}

/// Whether a row stays within [`C_BITS`] and [`B_MSG`].
pub fn within_resource_bounds(row: &MetricsRow) -> bool {
    let l = (row.name_space.max(2) as f64).log2();
    row.max_random_bits as f64 <= C_BITS * l.powi(3) && row.max_control_bits as f64 <= B_MSG * l
}

/// One CSV row per (scenario, seed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub protocol: String,
    pub seed: u64,
    pub n: usize,
    pub name_space: u32,
    pub delta: usize,
    pub diameter: Option<usize>,
    pub rounds: u64,
    pub complete: bool,
    pub success: bool,
    pub max_random_bits: u64,
    pub max_control_bits: u32,
    pub transmissions: u64,
    pub estimate: Option<u32>,
    pub backbone_size: Option<usize>,
    pub backbone_degree: Option<usize>,
    pub backbone_diameter: Option<usize>,
    pub max_active_sources: Option<usize>,
}

pub const CSV_HEADER: &str = "protocol,seed,n,name_space,delta,diameter,rounds,complete,success,max_random_bits,\
max_control_bits,transmissions,estimate,backbone_size,backbone_degree,backbone_diameter,max_active_sources";

pub fn write_csv<W: Write>(out: W, rows: &[MetricsRow]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(CSV_HEADER.split(','))?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(text: &str) -> Result<Vec<MetricsRow>, HarnessError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

fn run_engine<B: engine::Behavior>(
    net: &Network,
    nodes: Vec<B>,
    start: &StartMode,
    seed: u64,
    limit: u64,
    protocol: &str,
    trace: Option<Box<dyn Write + '_>>,
) -> Result<(Summary, Vec<B>), EngineError> {
    let mut eng = Engine::new(net, nodes, start, seed, limit)?;
    if let Some(out) = trace {
        eng = eng.with_trace(out, engine::trace_header(net, seed, start, protocol))?;
    }
    eng.run()
}

fn known(net: &Network, name: Name) -> Result<Name, HarnessError> {
    net.index(name).map(|_| name).ok_or_else(|| HarnessError::Scenario(format!("node {name} is not in the network")))
}

fn pick(net: &Network, seed: u64, stream: u64) -> Name {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    net.name(rng.gen_range(0..net.len()))
}

fn start_names(net: &Network, set: &StartSet, seed: u64) -> Vec<Name> {
    match set {
        StartSet::All => net.names().to_vec(),
        StartSet::Names(v) => v.clone(),
        StartSet::Count(k) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(2);
            let mut names: Vec<Name> =
                sample(&mut rng, net.len(), (*k).clamp(1, net.len())).iter().map(|i| net.name(i)).collect();
            names.sort_unstable();
            names
        }
    }
}

/// Details beyond the metrics row, for callers that check more.
#[derive(Debug, Clone)]
pub enum Detail {
    Esun { initiator: Name, degree: usize, estimate: u32 },
    Lun { learned: Vec<Name> },
    Dfs(dfs::DfsReport),
    Mis(mis::MisOutcome),
    Backbone {
        mis: mis::MisOutcome,
        result: BackboneResult,
        report: BackboneReport,
        inter: connect::InterReport,
        intra: connect::IntraReport,
    },
    Emulated { outcome: emulated::EmulatedOutcome, report: BackboneReport },
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub row: MetricsRow,
    pub detail: Detail,
    pub summary: Summary,
}

/// Generate the network for `seed` and run the scenario's protocol on it,
/// optionally writing a trace.
pub fn run_one(sc: &Scenario, seed: u64, trace: Option<Box<dyn Write + '_>>) -> Result<RunRecord, HarnessError> {
    let net = generate(&sc.generator, sc.name_space, sc.physical, seed)?;
    run_on(&net, sc, seed, trace)
}

pub fn run_on(net: &Network, sc: &Scenario, seed: u64, trace: Option<Box<dyn Write + '_>>) -> Result<RunRecord, HarnessError> {
    let p = &sc.params;
    let label = sc.protocol.label();
    let stats = graph_stats(net);
    let smallest = net.names()[0];
    let (summary, detail, success) = match &sc.protocol {
        Protocol::Esun { initiator } => {
            let s = known(net, initiator.unwrap_or(smallest))?;
            let nodes = dfs::dfs_nodes(net, s, p, DfsMode::EsunOnly);
            let (summary, nodes) =
                run_engine(net, nodes, &StartMode::Uncoordinated(s), seed, sc.round_limit, label, trace)?;
            let i = net.index(s).expect("checked above");
            let est = nodes[i].core.estimate.unwrap_or(0);
            let d = net.degree(i);
            let ok = if d == 0 { est == 0 } else { (d as u64..=16 * d as u64).contains(&(est as u64)) };
            (summary, Detail::Esun { initiator: s, degree: d, estimate: est }, ok)
        }
        Protocol::Lun { x, initiator } => {
            let s = known(net, initiator.unwrap_or(smallest))?;
            let nodes = dfs::dfs_nodes(net, s, p, DfsMode::LunOnly(*x));
            let (summary, nodes) =
                run_engine(net, nodes, &StartMode::Uncoordinated(s), seed, sc.round_limit, label, trace)?;
            let i = net.index(s).expect("checked above");
            let mut learned = nodes[i].core.viewed.clone();
            learned.sort_unstable();
            let truth: Vec<Name> = net.neighbor_names(s)?.into_iter().collect();
            let ok = learned == truth;
            (summary, Detail::Lun { learned }, ok)
        }
        Protocol::Dfs { source } => {
            let s = known(net, source.unwrap_or_else(|| pick(net, seed, 1)))?;
            let nodes = dfs::dfs_nodes(net, s, p, DfsMode::Full);
            let (summary, nodes) =
                run_engine(net, nodes, &StartMode::Uncoordinated(s), seed, sc.round_limit, label, trace)?;
            let cores: Vec<&DfsCore> = nodes.iter().map(|n| &n.core).collect();
            let report = dfs::check_dfs(net, s, &summary, &cores);
            let ok = report.success && summary.complete;
            (summary, Detail::Dfs(report), ok)
        }
        Protocol::Mis => {
            let (sched, nodes) = mis::mis_nodes(net, p, 0)?;
            let (summary, nodes) = run_engine(net, nodes, &StartMode::Synchronized, seed, sc.round_limit, label, trace)?;
            let cores: Vec<Option<&MisCore>> = nodes.iter().map(|n| Some(&n.core)).collect();
            let out = mis::outcome(net, &sched, &cores);
            let ok = out.complete && oracle_is_mis(net, &out.leaders) && out.invariants.all() && summary.complete;
            (summary, Detail::Mis(out), ok)
        }
        Protocol::Backbone => {
            let (sched, layout) = connect::backbone_plan(net, p, 0)?;
            let nodes = connect::backbone_nodes(net, &sched, &layout);
            let (summary, nodes) = run_engine(net, nodes, &StartMode::Synchronized, seed, sc.round_limit, label, trace)?;
            let cores: Vec<Option<&BackboneCore>> = nodes.iter().map(|n| Some(&n.core)).collect();
            let (mis, result) = connect::backbone_outcome(net, p, &sched, &layout, &cores);
            let report = oracle_backbone(net, &result);
            let (_, inter) = connect::run_inter_h(net, &result, p, seed)?;
            let (_, intra) = connect::run_intra_h(net, &result, p, seed)?;
            let ok = report.valid() && inter.complete() && intra.complete() && summary.complete;
            (summary, Detail::Backbone { mis, result, report, inter, intra }, ok)
        }
        Protocol::Emulated { start } => {
            let names = start_names(net, start, seed);
            if names.is_empty() {
                return Err(HarnessError::Scenario("empty start set".into()));
            }
            for &v in &names {
                known(net, v)?;
            }
            let plan = std::sync::Arc::new(EmuPlan::new(net, p)?);
            let nodes = emulated::emulated_nodes(net, &plan);
            let (summary, nodes) =
                run_engine(net, nodes, &StartMode::Partly(names), seed, sc.round_limit, label, trace)?;
            let outcome = emulated::emulated_outcome(net, p, &plan, &nodes);
            let report = oracle_backbone(net, &outcome.result);
            let ok = report.valid() && outcome.all_woken && outcome.invariants.max_active_per_box <= 25 && summary.complete;
            (summary, Detail::Emulated { outcome, report }, ok)
        }
    };
    let (bb_size, bb_deg, bb_diam, active) = match &detail {
        Detail::Backbone { report, .. } => (Some(report.size), Some(report.max_degree), report.diameter, None),
        Detail::Emulated { outcome, report } => (
            Some(report.size),
            Some(report.max_degree),
            report.diameter,
            Some(outcome.invariants.max_active_per_box),
        ),
        _ => (None, None, None, None),
    };
    let estimate = match &detail {
        Detail::Esun { estimate, .. } => Some(*estimate),
        _ => None,
    };
    let row = MetricsRow {
        protocol: label.to_string(),
        seed,
        n: net.len(),
        name_space: net.name_space(),
        delta: stats.max_degree,
        diameter: stats.diameter,
        rounds: summary.rounds,
        complete: summary.complete,
        success,
        max_random_bits: summary.max_bits(),
        max_control_bits: summary.max_control_bits,
        transmissions: summary.transmissions,
        estimate,
        backbone_size: bb_size,
        backbone_degree: bb_deg,
        backbone_diameter: bb_diam,
        max_active_sources: active,
    };
    Ok(RunRecord { row, detail, summary })
}
