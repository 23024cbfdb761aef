//! Generalized bandwidth allocation kernel.
//!
//! Every model is expressed as a set of per-class pools plus the list of
//! pools each class may charge ([`GbamConfig::admissible_pools`]). A link
//! keeps a charge matrix recording which class occupies which pool, so
//! loans can be returned (devolution) or reclaimed (preemption) explicitly.

mod config;
mod flow;
mod state;

use thiserror::Error;

pub use config::{BamModel, GbamConfig};
pub use state::{Admission, ChargePlan, Deficit, LinkState, LspCharge, Recharge, SwitchPolicy, SwitchReport};

use crate::domain::{LspId, TrafficClass, ValidationError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KernelError {
    #[error("traffic class {tc} out of range (class count {class_count})")]
    ClassOutOfRange { tc: TrafficClass, class_count: usize },
    #[error("requested bandwidth must be positive")]
    ZeroBandwidth,
    #[error("stale charge plan: {0}")]
    StalePlan(&'static str),
    #[error("unknown {0}")]
    UnknownLsp(LspId),
    #[error("{0} is already established on this link")]
    DuplicateLsp(LspId),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Validation(#[from] ValidationError),
}
