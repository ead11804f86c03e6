pub mod bitkernels;
pub mod bnc;
pub mod data;
pub mod harness;
mod manifest;
pub mod quantdnn;
