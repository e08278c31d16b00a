//! `steerkit` command line and HTTP service.

pub mod cli;
pub mod config;
pub mod engine;
pub mod error;
pub mod service;
pub mod storage;
pub mod wire_server;
