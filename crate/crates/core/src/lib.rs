//! Joint search over small convolutional networks and dataflow accelerators.

pub mod config;
pub mod cosearch;
pub mod costmodel;
pub mod das;
pub mod dns;
pub mod error;
pub mod gads;
pub mod optim;
pub mod rng;
pub mod workload;

pub use error::{Error, Result};
