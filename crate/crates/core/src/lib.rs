//! Register demotion to shared memory for a SASS-like GPU assembly dialect,
//! with register compaction, post-spill optimizations, a static stall
//! predictor and a single-warp interpreter used as a correctness oracle.

pub mod asm;
pub mod compact;
pub mod config;
pub mod demote;
pub mod flow;
pub mod occupancy;
pub mod oracle;
pub mod pipeline;
pub mod postopt;
pub mod predict;
