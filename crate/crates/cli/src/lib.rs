//! Command-line and HTTP front end for the card-based query rewriting
//! pipeline.

pub mod commands;
pub mod config;
pub mod server;
