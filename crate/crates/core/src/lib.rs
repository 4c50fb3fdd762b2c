//! Simulation of bare-bones SINR wireless networks under weak sensitivity
//! and weak connectivity, with distributed broadcast, MIS and backbone
//! protocols and the oracles used to check them.

pub mod combinat;
pub mod engine;
pub mod harness;
pub mod phys;
pub mod protocols;

