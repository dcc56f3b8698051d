//! Configuration loading, trace and metric files, the `riskcost` command
//! line and the HTTP scoring service.

pub mod cli;
pub mod config;
pub mod evaluate;
pub mod metrics;
pub mod service;
