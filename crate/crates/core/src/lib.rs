//! Deterministic discrete-time simulator for proof-of-work peer-to-peer
//! networks with miners, home full nodes and SPV clients.

pub mod adversary;
pub mod game;
pub mod engine;
pub mod ledger;
pub mod policy;
pub mod rng;
pub mod surplus;
pub mod topology;
