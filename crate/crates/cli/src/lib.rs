//! Command line and HTTP service front ends for the augchain runtime.

pub mod commands;
pub mod config;
pub mod exit;
pub mod refs;
pub mod service;
