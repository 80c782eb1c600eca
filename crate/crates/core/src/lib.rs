//! Multi-domain cyberspace simulator and reinforcement-learning engine for
//! discovering hidden shortest attack paths under a security configuration.
//!
//! The crate models a cyberspace spanning physical spaces, devices, ports,
//! services, files and information items, exposes it as a deterministic MDP
//! with state-dependent action masking, and trains agents (improved DDPG
//! plus DDPG/DQN/A2C baselines) to find the shortest sequence of attacker
//! actions that captures a goal credential. A breadth-first oracle computes
//! ground-truth shortest paths for verification.

pub mod actions;
pub mod agents;
pub mod benchmark;
pub mod env;
pub mod model;
pub mod neural;
pub mod oracle;
pub mod scenario;
pub mod testing;
pub mod util;

pub use actions::{ActionTable, ActionTarget, ActionVerb, AttackAction};
pub use env::{AclState, AttackEnv, EnvError, EnvState, StepOutcome};
pub use model::{
    legal_kinds, AclRule, CyberspaceModel, Entity, EntityClass, PermissionAtom, PermissionKind,
    SecurityRule,
};
pub use scenario::{load_scenario, save_scenario, ScenarioError};
