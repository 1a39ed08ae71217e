//! Block-local clean-ups of demoted code: redundant load/store removal,
//! value-register substitution and load hoisting.
//!
//! Every step is checked against the barrier scoreboard and undone if it
//! would introduce a hazard.

mod redundant;
mod resched;
mod subst;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::asm::{Item, Kernel, LatencyTable};
use crate::demote::DemotionInfo;
use crate::oracle::{normalize_waits, scoreboard_check};

pub use redundant::eliminate_redundant;
pub use resched::reschedule;
pub use subst::substitute_value_registers;

/// Optional passes applied to a demoted kernel. `bank` selects bank-aware
/// value-register choice and compaction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct OptSet {
    pub redundant: bool,
    pub subst: bool,
    pub resched: bool,
    pub bank: bool,
}

impl OptSet {
    pub const NAMES: [&'static str; 4] = ["redundant", "subst", "resched", "bank"];

    pub fn from_bits(bits: u8) -> OptSet {
        OptSet { redundant: bits & 1 != 0, subst: bits & 2 != 0, resched: bits & 4 != 0, bank: bits & 8 != 0 }
    }

    pub fn bits(self) -> u8 {
        u8::from(self.redundant) | u8::from(self.subst) << 1 | u8::from(self.resched) << 2 | u8::from(self.bank) << 3
    }

    /// All 16 subsets, empty first.
    pub fn all() -> impl Iterator<Item = OptSet> {
        (0..16).map(OptSet::from_bits)
    }

    pub fn count(self) -> usize {
        self.bits().count_ones() as usize
    }

    fn flags(self) -> [bool; 4] {
        [self.redundant, self.subst, self.resched, self.bank]
    }
}

impl fmt::Display for OptSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = OptSet::NAMES.iter().zip(self.flags()).filter(|(_, on)| *on).map(|(n, _)| *n).collect();
        if names.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&names.join(","))
        }
    }
}

impl FromStr for OptSet {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut set = OptSet::default();
        for name in s.split(',').map(str::trim).filter(|n| !n.is_empty() && *n != "none") {
            match name {
                "redundant" => set.redundant = true,
                "subst" => set.subst = true,
                "resched" => set.resched = true,
                "bank" => set.bank = true,
                _ => return Err(format!("unknown option `{name}` (expected redundant, subst, resched, bank)")),
            }
        }
        Ok(set)
    }
}

/// Runs the enabled passes in order: redundant elimination, substitution,
/// rescheduling.
pub fn apply_post_opts(k: &Kernel, info: &DemotionInfo, opts: OptSet, table: &LatencyTable) -> Kernel {
    let mut out = k.clone();
    if opts.redundant {
        out = eliminate_redundant(&out, info, table);
    }
    if opts.subst {
        out = substitute_value_registers(&out, info, table);
    }
    if opts.resched {
        out = reschedule(&out, info, table);
    }
    out
}

/// Keeps `candidate` only if it adds no hazard over `base`.
fn accept(base: &Kernel, candidate: Kernel, table: &LatencyTable) -> Option<Kernel> {
    let candidate = normalize_waits(&candidate);
    let before = scoreboard_check(base, table).len();
    let after = scoreboard_check(&candidate, table);
    (after.len() <= before && (before > 0 || after.is_empty())).then_some(candidate)
}

/// Removes body item `idx`, handing its waits to the next instruction.
fn remove_item(body: &mut Vec<Item>, idx: usize) {
    let Item::Instr(removed) = body.remove(idx) else { return };
    if let Some(next) = body[idx..].iter_mut().find_map(Item::as_instr_mut) {
        next.control.wait = next.control.wait.union(removed.control.wait);
        for b in next.control.sets().iter() {
            next.control.wait.remove(b);
        }
    }
}

/// Body indices at which a new basic block starts within a linear scan.
fn starts_block(item: &Item) -> bool {
    matches!(item, Item::Label(_))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn optset_round_trip() {
        for o in OptSet::all() {
            assert_eq!(o.to_string().parse::<OptSet>().unwrap(), o);
        }
        assert_eq!(OptSet::all().count(), 16);
        let o: OptSet = "redundant,bank".parse().unwrap();
        assert_eq!(o.count(), 2);
        assert!("fast".parse::<OptSet>().is_err());
    }
}
