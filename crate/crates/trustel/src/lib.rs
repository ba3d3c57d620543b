//! Std companion of `trustel-core`: bank loading, speech adapters, the
//! SQLite store, corpus export, the HTTP service, the simulated-subject
//! driver and the offline analyses behind the `trustel` CLI.

pub mod bank;
pub mod speech;
pub mod analyze;
pub mod api;
pub mod config;
pub mod data;
pub mod export;
pub mod service;
pub mod simulate;
pub mod store;
