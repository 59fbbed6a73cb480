//! Store registry, HTTP API and command line front end for pyramem stores.

pub mod cli;
pub mod error;
pub mod http;
pub mod registry;
