//! Utility-optimal scheduling over partially observable Markov ON/OFF channels.

pub mod capacity;
pub mod cli;
pub mod channel;
pub mod controller;
pub mod lp;
pub mod policy;
pub mod rng;
pub mod sim;
pub mod utility;
