//! Deterministic multi-agent traffic-flow simulation with social value
//! orientation (SVO) contexts.

pub mod communication;
pub mod dynamics;
pub mod env;
pub mod geometry;
pub mod idm;
pub mod metrics;
pub mod observation;
pub mod policy;
pub mod reward;
pub mod rollout;
pub mod scenario;
pub mod seed;
