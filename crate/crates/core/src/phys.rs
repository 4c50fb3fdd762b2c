//! SINR arithmetic, the weak-sensitivity reception rule, and the geometry the
//! protocols are analysed against (communication graph and pivotal grid).

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A node name in `[1, name_space]`.
pub type Name = u32;

#[derive(Debug, Error, PartialEq)]
pub enum PhysError {
    #[error("invalid physical configuration: {0}")]
    InvalidConfig(String),
    #[error("duplicate node name {0}")]
    DuplicateName(Name),
    #[error("node name {name} outside [1, {name_space}]")]
    NameOutOfRange { name: Name, name_space: u32 },
    #[error("nodes {0} and {1} share a position")]
    CoincidentPositions(Name, Name),
    #[error("non-finite coordinate for node {0}")]
    NonFinite(Name),
    #[error("unknown node {0}")]
    UnknownNode(Name),
    #[error("invalid SINR query: {0}")]
    InvalidQuery(String),
    #[error("placement file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("io error: {0}")]
    Io(String),
}

/// All scalars of the SINR model with uniform transmission power.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicalConfig {
    pub alpha: f64,
    pub noise: f64,
    pub beta: f64,
    pub power: f64,
    pub eps_s: f64,
    pub eps_c: f64,
    /// Permit `eps_c != eps_s`. Weak connectivity is the only supported model.
    #[serde(default)]
    pub allow_strong_connectivity: bool,
}

impl Default for PhysicalConfig {
    fn default() -> Self {
        PhysicalConfig {
            alpha: 3.0,
            noise: 1.0,
            beta: 1.0,
            power: 1.0,
            eps_s: 0.3,
            eps_c: 0.3,
            allow_strong_connectivity: false,
        }
    }
}

impl PhysicalConfig {
    pub fn validate(&self) -> Result<(), PhysError> {
        let bad = |m: &str| Err(PhysError::InvalidConfig(m.to_string()));
        let finite = [self.alpha, self.noise, self.beta, self.power, self.eps_s, self.eps_c];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("all parameters must be finite");
        }
        if self.alpha <= 2.0 {
            return bad("alpha must exceed 2");
        }
        if self.noise <= 0.0 {
            return bad("noise must be positive");
        }
        if self.beta < 1.0 {
            return bad("beta must be at least 1");
        }
        if self.power <= 0.0 {
            return bad("power must be positive");
        }
        if !(0.0 <= self.eps_s && self.eps_s <= self.eps_c && self.eps_c < 1.0) {
            return bad("require 0 <= eps_s <= eps_c < 1");
        }
        if self.eps_c != self.eps_s && !self.allow_strong_connectivity {
            return bad("eps_c must equal eps_s (weak connectivity)");
        }
        Ok(())
    }

    /// Largest distance at which a lone transmitter can be received:
    /// `(P / (noise * beta))^(1/alpha)`.
    pub fn max_range(&self) -> f64 {
        (self.power / (self.noise * self.beta)).powf(1.0 / self.alpha)
    }

    /// Radius of the weak-sensitivity gate, `(1 - eps_s) r`.
    pub fn sensitivity_radius(&self) -> f64 {
        (1.0 - self.eps_s) * self.max_range()
    }

    /// Radius of communication-graph edges, `(1 - eps_c) r`.
    pub fn comm_radius(&self) -> f64 {
        (1.0 - self.eps_c) * self.max_range()
    }

    /// Side of the grid boxes used by every protocol analysis. Two nodes in
    /// one box are at most `(1 - eps_c) r` apart and therefore adjacent.
    pub fn box_side(&self) -> f64 {
        self.comm_radius() / std::f64::consts::SQRT_2
    }

    /// Received power of a single transmission over distance `d`.
    #[inline]
    pub fn received_power(&self, d: f64) -> f64 {
        self.power * d.powf(-self.alpha)
    }
}

/// Free-function form of [`PhysicalConfig::max_range`].
pub fn max_range(config: &PhysicalConfig) -> Result<f64, PhysError> {
    config.validate()?;
    Ok(config.max_range())
}

/// The SINR closed form on raw distances, without config validation:
/// signal `P d^-alpha` over noise plus the summed interferer powers.
pub fn sinr_from_distances(power: f64, noise: f64, alpha: f64, signal: f64, interferers: &[f64]) -> f64 {
    let interference: f64 = interferers.iter().map(|d| power * d.powf(-alpha)).sum();
    power * signal.powf(-alpha) / (noise + interference)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dist(&self, other: &Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        (dx * dx + dy * dy).sqrt()
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// Grid box containing `p`. Left and bottom box edges belong to the box.
pub fn box_of(p: Point, box_side: f64) -> (i64, i64) {
    assert!(box_side > 0.0, "box side must be positive");
    ((p.x / box_side).floor() as i64, (p.y / box_side).floor() as i64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub name: Name,
    pub pos: Point,
}

/// Gain matrices are kept dense up to this many nodes.
const DENSE_GAIN_LIMIT: usize = 2048;

/// Immutable node placement plus everything derived from it.
///
/// Nodes are stored sorted by name; the position of a node in that order is
/// its *index*, which the engine uses internally.
#[derive(Debug, Clone)]
pub struct Network {
    config: PhysicalConfig,
    name_space: u32,
    names: Vec<Name>,
    positions: Vec<Point>,
    index_of: Vec<u32>,
    adjacency: Vec<Vec<u32>>,
    hearing: Vec<Vec<u32>>,
    boxes: Vec<(i64, i64)>,
    gain: Option<Vec<f64>>,
    max_degree: usize,
}

const NO_INDEX: u32 = u32::MAX;

impl Network {
    /// Build the communication graph, the hearing lists (nodes within the
    /// sensitivity radius) and the box index.
    pub fn build(
        placements: &[Placement],
        name_space: u32,
        config: PhysicalConfig,
    ) -> Result<Network, PhysError> {
        config.validate()?;
        let mut sorted = placements.to_vec();
        sorted.sort_by_key(|p| p.name);
        for w in sorted.windows(2) {
            if w[0].name == w[1].name {
                return Err(PhysError::DuplicateName(w[0].name));
            }
        }
        for p in &sorted {
            if p.name == 0 || p.name > name_space {
                return Err(PhysError::NameOutOfRange { name: p.name, name_space });
            }
            if !p.pos.x.is_finite() || !p.pos.y.is_finite() {
                return Err(PhysError::NonFinite(p.name));
            }
        }
        let n = sorted.len();
        let names: Vec<Name> = sorted.iter().map(|p| p.name).collect();
        let positions: Vec<Point> = sorted.iter().map(|p| p.pos).collect();
        let mut index_of = vec![NO_INDEX; name_space as usize + 1];
        for (i, &name) in names.iter().enumerate() {
            index_of[name as usize] = i as u32;
        }

        let comm = config.comm_radius();
        let sens = config.sensitivity_radius();
        let side = config.box_side();
        let boxes: Vec<(i64, i64)> = positions.iter().map(|&p| box_of(p, side)).collect();

        // Candidate pairs come from a bucket grid with cell >= max(comm, sens).
        let cell = comm.max(sens);
        let mut buckets: std::collections::HashMap<(i64, i64), Vec<u32>> = Default::default();
        for (i, p) in positions.iter().enumerate() {
            buckets.entry(box_of(*p, cell)).or_default().push(i as u32);
        }
        let mut adjacency = vec![Vec::new(); n];
        let mut hearing = vec![Vec::new(); n];
        for i in 0..n {
            let (bx, by) = box_of(positions[i], cell);
            let mut near: Vec<u32> = Vec::new();
            for dx in -1..=1 {
                for dy in -1..=1 {
                    if let Some(b) = buckets.get(&(bx + dx, by + dy)) {
                        near.extend(b.iter().copied());
                    }
                }
            }
            near.sort_unstable();
            for j in near {
                let j = j as usize;
                if j == i {
                    continue;
                }
                let d = positions[i].dist(&positions[j]);
                if d == 0.0 {
                    let (a, b) = (names[i.min(j)], names[i.max(j)]);
                    return Err(PhysError::CoincidentPositions(a, b));
                }
                if d <= comm {
                    adjacency[i].push(j as u32);
                }
                if d <= sens {
                    hearing[i].push(j as u32);
                }
            }
        }
        let max_degree = adjacency.iter().map(Vec::len).max().unwrap_or(0);

        let gain = (n <= DENSE_GAIN_LIMIT).then(|| {
            let mut g = vec![0.0; n * n];
            for s in 0..n {
                for u in 0..n {
                    if s != u {
                        g[s * n + u] = config.received_power(positions[s].dist(&positions[u]));
                    }
                }
            }
            g
        });

        Ok(Network {
            config,
            name_space,
            names,
            positions,
            index_of,
            adjacency,
            hearing,
            boxes,
            gain,
            max_degree,
        })
    }

    pub fn config(&self) -> &PhysicalConfig {
        &self.config
    }

    pub fn name_space(&self) -> u32 {
        self.name_space
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Maximum degree of the communication graph.
    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    pub fn box_side(&self) -> f64 {
        self.config.box_side()
    }

    pub fn names(&self) -> &[Name] {
        &self.names
    }

    pub fn name(&self, index: usize) -> Name {
        self.names[index]
    }

    pub fn index(&self, name: Name) -> Option<usize> {
        match self.index_of.get(name as usize) {
            Some(&i) if i != NO_INDEX => Some(i as usize),
            _ => None,
        }
    }

    pub fn position(&self, index: usize) -> Point {
        self.positions[index]
    }

    pub fn placements(&self) -> Vec<Placement> {
        self.names
            .iter()
            .zip(&self.positions)
            .map(|(&name, &pos)| Placement { name, pos })
            .collect()
    }

    /// Communication-graph neighbours of `index`, ascending.
    pub fn neighbors(&self, index: usize) -> &[u32] {
        &self.adjacency[index]
    }

    /// Nodes within the sensitivity radius of `index`, ascending.
    pub fn hearing(&self, index: usize) -> &[u32] {
        &self.hearing[index]
    }

    pub fn degree(&self, index: usize) -> usize {
        self.adjacency[index].len()
    }

    pub fn is_edge(&self, a: usize, b: usize) -> bool {
        self.adjacency[a].binary_search(&(b as u32)).is_ok()
    }

    pub fn box_index(&self, index: usize) -> (i64, i64) {
        self.boxes[index]
    }

    pub fn dist(&self, a: usize, b: usize) -> f64 {
        self.positions[a].dist(&self.positions[b])
    }

    /// Power received at `to` from a transmission by `from`.
    #[inline]
    pub fn gain(&self, from: usize, to: usize) -> f64 {
        match &self.gain {
            Some(g) => g[from * self.names.len() + to],
            None => self.config.received_power(self.dist(from, to)),
        }
    }

    /// Communication-graph edges as name pairs `(a, b)` with `a < b`.
    pub fn edges(&self) -> Vec<(Name, Name)> {
        let mut out = Vec::new();
        for (i, adj) in self.adjacency.iter().enumerate() {
            for &j in adj {
                if (j as usize) > i {
                    out.push((self.names[i], self.names[j as usize]));
                }
            }
        }
        out
    }

    fn require(&self, name: Name) -> Result<usize, PhysError> {
        self.index(name).ok_or(PhysError::UnknownNode(name))
    }

    /// SINR of `sender` at `receiver` when exactly `transmitters` transmit.
    pub fn sinr(&self, sender: Name, receiver: Name, transmitters: &[Name]) -> Result<f64, PhysError> {
        let s = self.require(sender)?;
        let u = self.require(receiver)?;
        if s == u {
            return Err(PhysError::InvalidQuery("sender equals receiver".into()));
        }
        let mut idx = Vec::with_capacity(transmitters.len());
        for &t in transmitters {
            idx.push(self.require(t)?);
        }
        idx.sort_unstable();
        idx.dedup();
        if idx.binary_search(&u).is_ok() {
            return Err(PhysError::InvalidQuery(format!("receiver {receiver} is transmitting")));
        }
        if idx.binary_search(&s).is_err() {
            return Err(PhysError::InvalidQuery(format!("sender {sender} is not transmitting")));
        }
        Ok(self.sinr_indexed(s, u, &idx))
    }

    /// SINR over node indices; `transmitters` must be ascending and contain
    /// `s` but not `u`. The summation order is fixed so that every caller
    /// gets bit-identical values.
    pub(crate) fn sinr_indexed(&self, s: usize, u: usize, transmitters: &[usize]) -> f64 {
        let mut interference = 0.0;
        for &w in transmitters {
            if w != s {
                interference += self.gain(w, u);
            }
        }
        self.gain(s, u) / (self.config.noise + interference)
    }

    /// Weak-sensitivity reception: SINR at least beta and sender within the
    /// sensitivity radius.
    pub fn receives(&self, sender: Name, receiver: Name, transmitters: &[Name]) -> Result<bool, PhysError> {
        let sinr = self.sinr(sender, receiver, transmitters)?;
        let s = self.require(sender)?;
        let u = self.require(receiver)?;
        Ok(sinr >= self.config.beta && self.dist(s, u) <= self.config.sensitivity_radius())
    }

    /// Resolve one round: for every non-transmitting node, the unique sender
    /// it receives (if any). `transmitters` are indices, ascending.
    ///
    /// Returns `(receiver, sender)` pairs sorted by receiver, and the number
    /// of receivers for which more than one sender passed the reception test
    /// (always zero when `beta >= 1`).
    pub fn resolve(&self, transmitters: &[usize]) -> (Vec<(usize, usize)>, usize) {
        debug_assert!(transmitters.windows(2).all(|w| w[0] < w[1]));
        let mut candidates: Vec<usize> = Vec::new();
        for &t in transmitters {
            candidates.extend(self.hearing[t].iter().map(|&j| j as usize));
        }
        candidates.sort_unstable();
        candidates.dedup();
        let sens = self.config.sensitivity_radius();
        let beta = self.config.beta;
        let mut out = Vec::new();
        let mut violations = 0;
        for u in candidates {
            if transmitters.binary_search(&u).is_ok() {
                continue;
            }
            // SINR is increasing in the sender's own signal, so the two
            // strongest senders decide both reception and uniqueness.
            let mut best: Option<(usize, f64)> = None;
            let mut second: Option<(usize, f64)> = None;
            for &t in transmitters {
                let g = self.gain(t, u);
                if best.map_or(true, |(_, b)| g > b) {
                    second = best;
                    best = Some((t, g));
                } else if second.map_or(true, |(_, b)| g > b) {
                    second = Some((t, g));
                }
            }
            let passes = |s: usize| {
                self.sinr_indexed(s, u, transmitters) >= beta && self.dist(s, u) <= sens
            };
            if let Some((s, _)) = best {
                if passes(s) {
                    out.push((u, s));
                    if let Some((s2, _)) = second {
                        if passes(s2) {
                            violations += 1;
                        }
                    }
                }
            }
        }
        (out, violations)
    }

    /// Names of all nodes within the communication radius of `name`.
    pub fn neighbor_names(&self, name: Name) -> Result<BTreeSet<Name>, PhysError> {
        let i = self.require(name)?;
        Ok(self.adjacency[i].iter().map(|&j| self.names[j as usize]).collect())
    }
}

/// Free-function form of [`Network::build`].
pub fn build_comm_graph(
    placements: &[Placement],
    name_space: u32,
    config: PhysicalConfig,
) -> Result<Network, PhysError> {
    Network::build(placements, name_space, config)
}

/// Parse a placement file: one `<name> <x> <y>` per line, `#` comments.
pub fn parse_placements(text: &str) -> Result<Vec<Placement>, PhysError> {
    let mut out = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: &str| PhysError::Parse { line: no + 1, msg: msg.to_string() };
        let mut parts = line.split_whitespace();
        let (Some(n), Some(x), Some(y), None) = (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(err("expected `<name> <x> <y>`"));
        };
        let name: Name = n.parse().map_err(|_| err("bad name"))?;
        let x: f64 = x.parse().map_err(|_| err("bad x coordinate"))?;
        let y: f64 = y.parse().map_err(|_| err("bad y coordinate"))?;
        out.push(Placement { name, pos: Point::new(x, y) });
    }
    Ok(out)
}

pub fn read_placements(path: &Path) -> Result<Vec<Placement>, PhysError> {
    let text = std::fs::read_to_string(path).map_err(|e| PhysError::Io(format!("{}: {e}", path.display())))?;
    parse_placements(&text)
}

/// Render placements in the file format read by [`parse_placements`].
/// Coordinates use Rust's shortest round-trip float formatting.
pub fn format_placements(placements: &[Placement]) -> String {
    let mut s = String::from("# name x y\n");
    for p in placements {
        s.push_str(&format!("{} {:?} {:?}\n", p.name, p.pos.x, p.pos.y));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(alpha: f64, noise: f64, beta: f64, power: f64, eps: f64) -> PhysicalConfig {
        PhysicalConfig { alpha, noise, beta, power, eps_s: eps, eps_c: eps, allow_strong_connectivity: false }
    }

    fn net(points: &[(f64, f64)], config: PhysicalConfig) -> Network {
        let pl: Vec<Placement> = points
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| Placement { name: i as Name + 1, pos: Point::new(x, y) })
            .collect();
        Network::build(&pl, points.len() as u32 + 4, config).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn max_range_examples() {
        assert_eq!(cfg(4.0, 1.0, 1.0, 1.0, 0.0).max_range(), 1.0);
        assert!(rel(cfg(4.0, 1.0, 1.0, 16.0, 0.0).max_range(), 2.0) < 1e-12);
        assert!(rel(cfg(2.5, 2.0, 2.0, 1.0, 0.0).max_range(), 0.25f64.powf(1.0 / 2.5)) < 1e-12);
    }

    #[test]
    fn alpha_two_is_rejected() {
        // The closed form at alpha = 2 gives r = 0.5 for P=1, noise=2, beta=2,
        // but the model requires alpha > 2.
        let c = cfg(2.0, 2.0, 2.0, 1.0, 0.0);
        assert_eq!((c.power / (c.noise * c.beta)).powf(1.0 / c.alpha), 0.5);
        assert!(max_range(&c).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(PhysicalConfig::default().validate().is_ok());
        let mut c = PhysicalConfig::default();
        c.eps_c = 0.4;
        assert!(c.validate().is_err());
        c.allow_strong_connectivity = true;
        assert!(c.validate().is_ok());
        c.eps_s = 0.5;
        assert!(c.validate().is_err());
        assert!(cfg(3.0, 0.0, 1.0, 1.0, 0.1).validate().is_err());
        assert!(cfg(3.0, 1.0, 0.5, 1.0, 0.1).validate().is_err());
        assert!(cfg(3.0, 1.0, 1.0, -1.0, 0.1).validate().is_err());
        assert!(cfg(3.0, 1.0, 1.0, 1.0, 1.0).validate().is_err());
    }

    #[test]
    fn closed_form_quadratic_loss() {
        assert!(rel(sinr_from_distances(1.0, 1.0, 2.0, 0.5, &[]), 4.0) < 1e-12);
    }

    #[test]
    fn single_transmitter_sinr() {
        // alpha must exceed 2, so evaluate the d = 0.5 example at alpha = 3:
        // SINR = 0.5^-3 / 1 = 8.
        let n = net(&[(0.0, 0.0), (0.5, 0.0)], cfg(3.0, 1.0, 1.0, 1.0, 0.0));
        assert!(rel(n.sinr(1, 2, &[1]).unwrap(), 8.0) < 1e-12);
    }

    #[test]
    fn sinr_at_max_range_equals_beta() {
        let c = cfg(3.0, 1.0, 2.0, 5.0, 0.1);
        let r = c.max_range();
        let n = net(&[(0.0, 0.0), (r, 0.0)], c);
        assert!(rel(n.sinr(1, 2, &[1]).unwrap(), 2.0) < 1e-12);
        // The distance gate rejects it even though SINR equals beta.
        assert!(!n.receives(1, 2, &[1]).unwrap());
    }

    #[test]
    fn receives_at_sensitivity_boundary() {
        let c = cfg(3.0, 1.0, 1.0, 1.0, 0.1);
        let d = c.sensitivity_radius();
        let n = net(&[(0.0, 0.0), (d, 0.0)], c);
        assert!(n.receives(1, 2, &[1]).unwrap());
    }

    #[test]
    fn symmetric_pair_blocks_reception() {
        let c = cfg(3.0, 1.0, 1.0, 1.0, 0.1);
        let n = net(&[(-0.5, 0.0), (0.5, 0.0), (0.0, 0.0)], c);
        let s = n.sinr(1, 3, &[1, 2]).unwrap();
        let expected = 0.5f64.powf(-3.0) / (1.0 + 0.5f64.powf(-3.0));
        assert!(rel(s, expected) < 1e-12);
        assert!(s < 1.0);
        assert!(!n.receives(1, 3, &[1, 2]).unwrap());
        assert!(!n.receives(2, 3, &[1, 2]).unwrap());
    }

    #[test]
    fn half_duplex_query_rejected() {
        let n = net(&[(0.0, 0.0), (0.5, 0.0)], PhysicalConfig::default());
        assert!(n.sinr(1, 2, &[1, 2]).is_err());
        assert!(n.sinr(1, 2, &[]).is_err());
        assert!(n.sinr(1, 1, &[1]).is_err());
    }

    #[test]
    fn comm_graph_boundaries() {
        let c = PhysicalConfig::default();
        let r = c.comm_radius();
        let on = net(&[(0.0, 0.0), (r, 0.0)], c);
        assert_eq!(on.edges(), vec![(1, 2)]);
        let off = net(&[(0.0, 0.0), (r + 1e-6, 0.0)], c);
        assert!(off.edges().is_empty());
    }

    #[test]
    fn path_of_five() {
        // eps = 0.5 keeps the spacing and its multiples exact in binary.
        let c = cfg(3.0, 1.0, 1.0, 1.0, 0.5);
        let r = c.comm_radius();
        let pts: Vec<(f64, f64)> = (0..5).map(|i| (i as f64 * r, 0.0)).collect();
        let n = net(&pts, c);
        assert_eq!(n.edges(), vec![(1, 2), (2, 3), (3, 4), (4, 5)]);
        assert_eq!(n.max_degree(), 2);
    }

    #[test]
    fn construction_errors() {
        let c = PhysicalConfig::default();
        let p = |name, x, y| Placement { name, pos: Point::new(x, y) };
        assert_eq!(
            Network::build(&[p(1, 0.0, 0.0), p(1, 1.0, 0.0)], 4, c).unwrap_err(),
            PhysError::DuplicateName(1)
        );
        assert_eq!(
            Network::build(&[p(1, 0.0, 0.0), p(2, 0.0, 0.0)], 4, c).unwrap_err(),
            PhysError::CoincidentPositions(1, 2)
        );
        assert!(matches!(
            Network::build(&[p(5, 0.0, 0.0)], 4, c).unwrap_err(),
            PhysError::NameOutOfRange { .. }
        ));
        assert!(matches!(Network::build(&[p(0, 0.0, 0.0)], 4, c), Err(PhysError::NameOutOfRange { .. })));
    }

    #[test]
    fn box_of_examples() {
        assert_eq!(box_of(Point::new(0.0, 0.0), 1.0), (0, 0));
        assert_eq!(box_of(Point::new(1.0, 0.0), 1.0), (1, 0));
        assert_eq!(box_of(Point::new(-0.5, 2.3), 1.0), (-1, 2));
        assert_eq!(box_of(Point::new(0.999, 0.999), 1.0), (0, 0));
    }

    #[test]
    fn placement_file_roundtrip() {
        let text = "# header\n1 0.5 -2\n\n7 1e-3 3.25\n";
        let pl = parse_placements(text).unwrap();
        assert_eq!(pl.len(), 2);
        assert_eq!(pl[1].name, 7);
        assert_eq!(parse_placements(&format_placements(&pl)).unwrap(), pl);
        assert!(parse_placements("1 2").is_err());
        assert!(parse_placements("x 1 2").is_err());
    }
}
