//! File formats, reporting, parameter sweeps and the command line for
//! [`lambdanet_core`].

pub mod cli;
pub mod report;
pub mod sweep;
pub mod topology_doc;

pub use lambdanet_core as core;
