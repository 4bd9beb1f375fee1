#![cfg_attr(not(test), no_std)]

//! Protocol model and discrete-event simulator for WDM all-optical networks
//! that reserve a subset of each link's wavelengths as *control wavelengths*.
//!
//! Traffic riding a control wavelength is converted to the electrical domain
//! at every routing node and packet-routed. All other wavelengths are
//! switched optically along lightpaths that the control traffic sets up hop
//! by hop. Two protocols are modeled on top of that substrate:
//!
//! * connection-oriented: a `Request` travels on control wavelengths and
//!   reserves one data wavelength per link; data flits then cross the network
//!   without ever leaving the optical domain;
//! * datagram: every message rides control wavelengths, store-and-forward.
//!
//! A baseline "electronic switching with trial-and-failure retries" model is
//! included for comparison.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, reporting and
//! the command line live in the `lambdanet` companion crate.

extern crate alloc;

pub mod metrics;
pub mod protocol;
pub mod rwa;
pub mod simkernel;
pub mod time;
pub mod topology;
pub mod workload;

pub use metrics::{Metrics, Observation, Summary};
pub use protocol::{Message, MessageKind, RequestId};
pub use rwa::{LinkState, Path, WavelengthId};
pub use simkernel::{run, run_with, Mode, RunOptions, RunReport, SimConfig, SimError, StartMode, TimingConfig, Transmission};
pub use time::SimTime;
pub use topology::{build_graph, DirectedLink, LinkId, NetworkGraph, NodeId, TopologySpec};
pub use workload::{BaselineConfig, RequestSpec, WorkloadSpec};
