//! Downlink resource management for LoRa gateways powered by a grid
//! connection and an energy-harvesting battery.

pub mod assignment;
pub mod channel;
pub mod config;
pub mod csm;
pub mod ddpg;
pub mod energy;
pub mod error;
pub mod harness;
pub mod nn;
pub mod planner;
pub mod ppo;
pub mod rng;

pub use error::{Error, Result};
