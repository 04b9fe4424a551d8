//! Experiment harness, file formats and HTTP session service built on
//! `symdisc-core`.

pub mod config;
pub mod harness;
pub mod service;
