//! Multi-agent reinforcement learning with hybrid quantum-classical policies.
//!
//! Two cooperating agents play pong. Each agent's policy is either a
//! variational-circuit network simulated on a statevector or a small CNN, and
//! is trained with PPO under one of three ownership strategies: a joint policy
//! over both agents, a parameter-shared actor with a centralized critic, or
//! fully independent learners.

pub mod config;
pub mod env;
pub mod inspect;
pub mod marl;
pub mod metrics;
pub mod policy;
pub mod ppo;
pub mod qsim;
pub mod runtime;
