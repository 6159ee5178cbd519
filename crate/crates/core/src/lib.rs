//! Discrete-event simulation and learned resource management for
//! single-hop underwater acoustic sensor networks.
//!
//! The acoustic channel ([`channel`]) and modem ([`modem`]) models feed a
//! slot-gated, continuous-time network simulator ([`simcore`]). A
//! multi-objective genetic search ([`sso`]) reduces the ⟨mode, power⟩ space
//! to a small Pareto action set; agents with a recurrent Q-network
//! ([`valuenet`]) trained by additive value decomposition ([`marl`]) pick
//! from it using overheard neighbor load ([`loadaware`]). Baselines live in
//! [`policies`] and experiment orchestration in [`harness`].

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod error;
pub mod harness;
pub mod loadaware;
pub mod marl;
pub mod modem;
pub mod policies;
pub mod seed;
pub mod simcore;
pub mod sso;
pub mod valuenet;
pub mod world;

pub use error::{Error, Result};
pub use harness::{ExperimentConfig, Preset, ResultRow};
pub use marl::{ObservationEncoder, ObservationVariant, TarmAgent, TrainConfig};
pub use modem::{ModeTable, TransmissionMode};
pub use policies::Policy;
pub use simcore::{run_episode, Decision, EpisodeResult, LocalObservation, MetricsReport, Scenario, Simulation};
pub use sso::{ActionSpace, ParetoSolution};
pub use world::Position;
