//! Command line and HTTP front ends for the memory engine.

pub mod commands;
pub mod service;
