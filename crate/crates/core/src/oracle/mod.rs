//! Reference checkers: a warp-level interpreter, a static barrier scoreboard
//! and a shared-memory bank check.

mod bank;
mod interp;
mod scoreboard;

pub use bank::{bank_conflict_check, BankFinding, SHARED_BANKS};
pub use interp::{execute, ExecConfig, ExecError, WarpState, WARP_SIZE};
pub use scoreboard::{normalize_waits, outstanding_barriers, scoreboard_check, Hazard, HazardKind};
