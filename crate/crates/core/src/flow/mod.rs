//! Control-flow graph, liveness, access counts, operand conflicts and the
//! barrier tracker.

mod cfg;
mod conflicts;
mod counts;
mod liveness;
mod regset;
mod tracker;

pub use cfg::{build_cfg, BasicBlock, BlockId, Cfg, CfgError, Edge};
pub use conflicts::{operand_conflicts, ConflictGraph};
pub use counts::{access_counts, loop_weight, CountStrategy, LOOP_FACTOR};
pub use liveness::{register_liveness, Liveness};
pub use regset::RegSet;
pub use tracker::{BarrierTracker, TrackerEntry};
