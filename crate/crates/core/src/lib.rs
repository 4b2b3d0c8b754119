//! Attribution of black-box fine-tuned text generators to their base models.
//!
//! Every model (base or fine-tuned) is interrogated with the same query
//! corpus; responses are then compared with one of four strategies:
//!
//! * translation metrics ([`textmetrics::bleu`], [`textmetrics::ter`]),
//! * a TF-IDF vector space model ([`vsm`]),
//! * a multiclass text classifier ([`classify`]),
//! * one-vs-all binary classifiers with abstention.
//!
//! [`simnet`] provides deterministic synthetic model families with known
//! ground truth and a mock HTTP server speaking the same wire protocol as
//! [`interrogator`]; [`harness`] ties everything together into repeatable
//! experiments.

pub mod attribute;
pub mod classify;
pub mod corpus;
mod error;
pub mod exec;
pub mod harness;
pub mod interrogator;
pub mod seed;
pub mod simnet;
pub mod textmetrics;
pub mod vsm;

pub use error::{Error, Result};

/// Version string embedded in every report.
pub const VERSION: &str = concat!("lmattr/", env!("CARGO_PKG_VERSION"));
