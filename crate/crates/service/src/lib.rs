//! HTTP inference service and command line for the caspian surrogate.

pub mod api;
pub mod cli;
