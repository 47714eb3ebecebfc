//! Portable, fail-closed authorization enforcement for autonomous agents.
//!
//! Signed credentials carry an authorization payload (agent, issuer,
//! permissions, constraints). A receiver evaluates them against its own
//! request context, local policy and governance material and reaches exactly
//! one of ALLOW or DENY with a typed reason.

pub mod canonical;
pub mod constraint;
pub mod container;
pub mod crypto;
pub mod glob;
pub mod model;
pub mod semantic;
pub mod stateful;
pub mod value;
pub mod audit;
pub mod pipeline;
pub mod registry;
pub mod config;
pub mod scenario;
pub mod discovery;
pub mod conformance;
pub mod suite;
