//! Finite-key decoy-state BB84 over a simulated fibre link.

pub mod channel;
pub mod cli;
pub mod evaluate;
pub mod finitekey;
pub mod lp;
pub mod optimize;
pub mod params;
pub mod selftest;
