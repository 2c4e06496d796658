//! Deterministic closed-loop driving simulator with a language-mediated
//! hierarchical policy: navigation instruction → mid-level command →
//! waypoints → control.

pub mod benchmark;
pub mod cli;
pub mod controller;
pub mod dataset;
pub mod geometry;
pub mod hierarchy;
pub mod metrics;
pub mod planner;
pub mod world;
