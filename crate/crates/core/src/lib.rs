//! Distributed hypothesis testing over directed agent networks.
//!
//! Every agent keeps two beliefs over a finite hypothesis set: a *local*
//! belief updated by Bayes' rule from its own private signals, and an
//! *actual* belief that it shares. The actual belief is the normalized
//! per-hypothesis minimum of the agent's fresh local belief and its
//! neighbors' actual beliefs ([`beliefs::min_rule_update`]). Under Byzantine
//! neighbors the minimum runs over trimmed values
//! ([`beliefs::lfrhe_update`]).
//!
//! The crate also checks the graph/signal conditions under which learning
//! is guaranteed ([`engine::precondition_report`]), runs deterministic
//! simulations ([`engine::run`]) and analyses the resulting traces
//! ([`analysis`]).

pub mod adversary;
pub mod analysis;
pub mod beliefs;
pub mod engine;
pub mod error;
pub mod graph;
pub mod model;

pub use adversary::{AdversaryConfig, AdversaryMessage, Strategy};
pub use analysis::{ConvergenceSummary, DecayEstimate, TraceFormat};
pub use beliefs::BeliefVector;
pub use engine::{AgentPrior, PreconditionReport, Rule, SimulationConfig, Trace, TraceStep};
pub use error::{Error, Result};
pub use graph::{AgentSet, DirectedGraph};
pub use model::{HypothesisSet, ObservationKind, ObservationModel, SignalStructure};
