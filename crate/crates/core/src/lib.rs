//! Adaptive information control for search-augmented reasoning agents.
//!
//! Step-level information utility, selective expansion of hierarchical
//! evidence, stop/continue control triggers, a composite trajectory
//! reward, and an annealed rollout runner, together with a deterministic
//! synthetic environment to drive them.

pub mod cli;
pub mod control;
pub mod evidence;
pub mod reward;
pub mod rollout;
pub mod simenv;
pub mod utility;
