//! Batched LinUCB under local, central and shuffle-model differential privacy.
//!
//! The engine ([`engine::run_episode`]) plays a linear contextual bandit and
//! updates its ridge model once per batch from the output of a pluggable
//! [`engine::ShuffleProtocol`]. Protocols live in [`protocol`]; privacy
//! calculators in [`accounting`]; the experiment runner in [`experiment`].

pub mod accounting;
pub mod engine;
pub mod env;
pub mod error;
pub mod experiment;
pub mod model;
pub mod protocol;
pub mod rng;

pub use engine::{run_episode, BatchStatistics, EngineConfig, Episode, IdentityProtocol, ShuffleProtocol};
pub use env::{generate_instance, BanditInstance, ContextArmSet, ContextMode, RegretTrace};
pub use error::{Error, Result};
pub use model::{FeatureVector, GramMatrix, ModelState, RidgeConfig};
