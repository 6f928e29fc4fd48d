//! Influence-guided training subset selection for empirical risk minimization.

pub mod dataio;
pub mod error;
pub mod evaluators;
pub mod experiment;
pub mod influence;
pub mod losskernels;
pub mod numkit;
pub mod selector;
pub mod tuner;
pub mod verify;

pub use error::{Error, Result};
