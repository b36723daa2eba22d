//! Gateway, replay, evaluation and ledger commands for the `biopay` binary.

pub mod backend;
pub mod commands;
pub mod config;
pub mod eval;
pub mod pipeline;
pub mod reports;
pub mod http;
pub mod serve;
