//! Distributed protocols as per-node state machines.
//!
//! Every protocol is written against absolute round numbers. Nodes that start
//! together agree on round zero, and nodes woken later adopt the sender's
//! counter, so all phase boundaries are common knowledge.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::combinat::{self, log2_ceil, FamilyError, FamilyKind, SelectionFamily};
use crate::engine::EngineError;

pub mod connect;
pub mod dfs;
pub mod emulated;
pub mod mis;

#[derive(Debug, thiserror::Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Family(#[from] FamilyError),
    #[error("invalid parameters: {0}")]
    Params(String),
}

/// Named constants of all protocols.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    /// Rounds per ESUN sub-stage, as a multiple of `ceil(log2 N)`.
    pub esun_d: u32,
    /// Slack in the ESUN success threshold `(d log N / 8)(1 - eps)`.
    pub esun_eps: f64,
    /// Fraction of an estimated neighbourhood one LUN selector must learn.
    pub lun_c: f64,
    /// MIS sub-phases per phase, as a multiple of `ceil(log2 N)`.
    pub c_phases: u32,
    /// ssf parameter for constant-density contexts.
    pub x_light: u32,
    /// ssf parameter for transmissions by backbone nodes, which may have
    /// more backbone neighbours than `x_light` near one receiver.
    pub x_backbone: u32,
    /// Cap on the ssf parameter `ceil(log2^3 N)` for logarithmic-density contexts.
    pub x_heavy_cap: u32,
    /// Length constant of protocol ssfs (`c * x^2 * ceil(log2 N)` sets).
    pub c_ssf: f64,
    /// Length constant of LUN selectors (`c * x * ceil(log2 N)` sets).
    pub c_sel: f64,
    /// Seed of every shared family; families are common knowledge.
    pub family_seed: u64,
    /// Range of the connector-discovery slot `t_v`, as a multiple of Δ.
    pub tv_factor: u32,
    /// Range of the registration slot, as a multiple of `Δ ceil(log2 N)`.
    pub intra_factor: u32,
    /// Leaders a non-leader remembers.
    pub leader_slots: u32,
    /// Leaders within two hops a node forwards.
    pub two_hop_slots: u32,
    /// Leaders within three hops a leader reports, and relay executions.
    pub relay_slots: u32,
    /// Messages a master relays to its slaves after one Inter_H exchange.
    pub relay_cap: u32,
    /// Emulated search window in original rounds, as a multiple of `N ceil(log2 N)^2`.
    pub dfs_window: f64,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            esun_d: 16,
            esun_eps: 0.25,
            lun_c: 0.99,
            c_phases: 4,
            x_light: 4,
            x_backbone: 16,
            x_heavy_cap: 8,
            c_ssf: 3.0,
            c_sel: 8.0,
            family_seed: 1,
            tv_factor: 8,
            intra_factor: 8,
            leader_slots: 25,
            two_hop_slots: 49,
            relay_slots: 121,
            relay_cap: 32,
            dfs_window: 32.0,
        }
    }
}

impl Params {
    pub fn validate(&self) -> Result<(), String> {
        if self.esun_d == 0 || !(0.0..1.0).contains(&self.esun_eps) {
            return Err("esun_d must be positive and esun_eps in [0, 1)".into());
        }
        if !(self.lun_c > 0.0 && self.lun_c < 1.0) {
            return Err("lun_c must lie in (0, 1)".into());
        }
        if self.c_phases == 0 || self.x_light == 0 || self.x_backbone == 0 || self.x_heavy_cap == 0 {
            return Err("c_phases and ssf parameters must be positive".into());
        }
        if self.c_ssf <= 0.0 || self.c_sel <= 0.0 || self.dfs_window <= 0.0 {
            return Err("length constants must be positive".into());
        }
        if self.tv_factor == 0 || self.intra_factor == 0 {
            return Err("slot ranges must be positive".into());
        }
        if self.leader_slots == 0 || self.two_hop_slots == 0 || self.relay_slots == 0 {
            return Err("slot counts must be positive".into());
        }
        Ok(())
    }
}

/// `2^ceil(log2(Δ + 1))`: the smallest power of two that bounds the number
/// of nodes in one grid box (they form a clique, so at most Δ + 1).
pub fn delta_pow2(max_degree: usize) -> u64 {
    (max_degree as u64 + 1).next_power_of_two()
}

/// The shared ssfs of the synchronized-start protocols.
#[derive(Debug, Clone)]
pub struct Families {
    pub light: Arc<SelectionFamily>,
    pub heavy: Arc<SelectionFamily>,
    pub backbone: Arc<SelectionFamily>,
}

impl Families {
    pub fn new(name_space: u32, params: &Params) -> Result<Self, FamilyError> {
        Ok(Families {
            light: light_family(name_space, params)?,
            heavy: heavy_family(name_space, params)?,
            backbone: backbone_family(name_space, params)?,
        })
    }
}

pub fn heavy_x(name_space: u32, params: &Params) -> u32 {
    let l = log2_ceil(name_space as u64);
    (l.saturating_pow(3)).min(params.x_heavy_cap).min(name_space).max(1)
}

pub fn light_family(name_space: u32, params: &Params) -> Result<Arc<SelectionFamily>, FamilyError> {
    let x = params.x_light.min(name_space).max(1);
    combinat::cached(name_space, FamilyKind::Ssf { x }, params.family_seed, params.c_ssf)
}

pub fn backbone_family(name_space: u32, params: &Params) -> Result<Arc<SelectionFamily>, FamilyError> {
    let x = params.x_backbone.min(name_space).max(1);
    combinat::cached(name_space, FamilyKind::Ssf { x }, params.family_seed, params.c_ssf)
}

pub fn heavy_family(name_space: u32, params: &Params) -> Result<Arc<SelectionFamily>, FamilyError> {
    let x = heavy_x(name_space, params);
    combinat::cached(name_space, FamilyKind::Ssf { x }, params.family_seed, params.c_ssf)
}

/// Bits needed for a message-kind tag.
pub(crate) const TAG_BITS: u32 = 4;

/// Round of `slot` in an execution of `family` that starts at `start`,
/// for the first slot of `name` at or after `from`.
pub(crate) fn next_slot_round(family: &SelectionFamily, name: u32, start: u64, from: u64) -> Option<u64> {
    let offset = from.saturating_sub(start) as usize;
    family.next_slot(name, offset).map(|s| start + s as u64)
}
