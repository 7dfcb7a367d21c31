//! Files, configuration, thread pools and the command-line driver around
//! [`dispreg_core`].

pub mod cli;
pub mod config;
pub mod error;
pub mod exec;
pub mod io;
pub mod report;
pub mod selftest;

pub use error::{Error, Result};
