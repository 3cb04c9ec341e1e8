//! Operator surface for herdid: the label store and HTTP label-assist
//! service. The `herdid` binary wires these to the command line.

pub mod labels;
pub mod server;
