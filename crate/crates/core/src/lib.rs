//! Embodied reference games: procedurally generated rooms with two agents
//! and a few identical balls, a closed referring-expression grammar,
//! speaker and listener agents, an adversarial placement policy, learning
//! from communicative success, and evaluation.

pub mod adversary;
pub mod agents;
pub mod eval;
pub mod geom;
pub mod language;
pub mod learn;
pub mod render;
pub mod rng;
pub mod scenegen;
