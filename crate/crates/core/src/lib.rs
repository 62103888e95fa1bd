//! Core of the youpi pipeline service.
//!
//! Everything that is not HTTP or command-line plumbing lives here: FITS
//! header parsing and ingestion, the image catalog, permissions, plugins and
//! processing carts, and the embedded cluster.

pub mod accounts;
pub mod authz;
pub mod catalog;
pub mod checksum;
pub mod clock;
pub mod cluster;
pub mod error;
pub mod fits;
pub mod fixtures;
pub mod ingest;
pub mod instrument;
pub mod mock_tool;
pub mod objects;
pub mod plugin;
pub mod service;
pub mod store;

pub use error::{Error, Result};
pub use service::{ServiceConfig, Youpi};
