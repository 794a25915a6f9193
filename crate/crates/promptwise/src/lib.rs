//! Cost-aware contextual bandit library and simulation harness.
//!
//! The crate models the interaction where each incoming context (a prompt)
//! may be answered by repeatedly querying candidate models, each pull paying
//! that arm's fixed cost, until a success arrives, the caller gives up, or
//! the per-context round budget runs out. It provides:
//!
//! - the PromptWise policies (inner-round updates, per-step updates, and a
//!   kernelized variant), the closed-form oracle, and standard baselines;
//! - logistic and kernel-logistic reward models with optimistic estimates;
//! - synthetic environments with known ground truth plus trace replay of
//!   recorded model outcomes;
//! - metric/regret analytics and a config-driven, seeded experiment runner
//!   with CSV/JSON outputs (see the `promptwise` binary).

pub mod analysis;
pub mod config;
pub mod domain;
pub mod env;
pub mod error;
pub mod experiment;
pub mod glm;
pub mod kernel;
pub mod policies;
pub mod rng;

pub use error::{Error, Result};
