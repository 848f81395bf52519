//! Persistence, dataset builds, the play service and shared pipelines for
//! the embodied reference game. The `embref` binary wraps these.

pub mod config;
pub mod dataset;
pub mod judgments;
pub mod pipeline;
pub mod service;
pub mod store;
