//! IO, file formats, clients, and command wiring around `shield-core`.

pub mod cache;
pub mod checkpoint;
pub mod clients;
pub mod commands;
pub mod config;
pub mod error;
pub mod extract;
pub mod io;
pub mod lock;
pub mod report;
