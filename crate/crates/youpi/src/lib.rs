//! HTTP service, command-line client and mock tools built on `youpi-core`.

pub mod api;
pub mod cli;
pub mod client;
pub mod server;
