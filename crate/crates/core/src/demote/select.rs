use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::asm::{bank_of, Kernel, RegisterRef, REG_BANKS, RZ_INDEX};
use crate::compact::register_units;
use crate::flow::{access_counts, build_cfg, operand_conflicts, CfgError, CountStrategy};

/// How demotion candidates are ordered.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Fewest static occurrences first.
    Static,
    /// Fewest loop-weighted occurrences first.
    Cfg,
    /// Fewest operand conflicts first.
    Conflict,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Static, Strategy::Cfg, Strategy::Conflict];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Static => "static",
            Strategy::Cfg => "cfg",
            Strategy::Conflict => "conflict",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| format!("unknown strategy `{s}` (expected static, cfg or conflict)"))
    }
}

/// Demotable registers in the order they would be demoted. Registers in
/// `reserved` are never candidates.
pub fn select_candidates_excluding(
    k: &Kernel,
    strategy: Strategy,
    reserved: &[u8],
) -> Result<Vec<RegisterRef>, CfgError> {
    let cfg = build_cfg(k)?;
    let static_counts = access_counts(k, &cfg, CountStrategy::Static);
    let weighted = access_counts(k, &cfg, CountStrategy::CfgWeighted);
    let graph = operand_conflicts(k);
    let mut units: Vec<RegisterRef> = register_units(k)
        .into_iter()
        .filter(|u| u.index != RZ_INDEX && !u.words().any(|w| reserved.contains(&w)))
        .collect();
    let count = |m: &BTreeMap<u8, u64>, u: &RegisterRef| m.get(&u.index).copied().unwrap_or(0);
    match strategy {
        Strategy::Static => units.sort_by_key(|u| (count(&static_counts, u), u.index)),
        Strategy::Cfg => units.sort_by_key(|u| (count(&weighted, u), u.index)),
        Strategy::Conflict => units.sort_by_key(|u| (graph.degree(*u), count(&static_counts, u), u.index)),
    }
    Ok(units)
}

pub fn select_candidates(k: &Kernel, strategy: Strategy) -> Result<Vec<RegisterRef>, CfgError> {
    select_candidates_excluding(k, strategy, &[])
}

/// Per bank, the number of instructions in which a demoted register appears
/// together with a non-demoted register operand from that bank.
pub fn rdv_bank_conflicts(k: &Kernel, demoted: &[RegisterRef]) -> [usize; REG_BANKS as usize] {
    let is_demoted = |w: u8| demoted.iter().any(|d| d.words().any(|x| x == w));
    let mut out = [0; REG_BANKS as usize];
    for inst in k.instructions() {
        let words = inst.words();
        if !words.iter().any(|w| is_demoted(*w)) {
            continue;
        }
        let mut banks = [false; REG_BANKS as usize];
        for w in words.iter().filter(|w| !is_demoted(**w)) {
            banks[bank_of(*w) as usize] = true;
        }
        for (b, hit) in banks.iter().enumerate() {
            out[b] += usize::from(*hit);
        }
    }
    out
}

/// Picks the value register among free indices at or above `lowest`: the one
/// whose banks see the fewest conflicts with co-occurring operands, lowest
/// index on ties. `width` 2 requires an even index.
pub fn choose_rdv_bank(k: &Kernel, demoted: &[RegisterRef], lowest: u8, width: u8) -> Option<RegisterRef> {
    let costs = rdv_bank_conflicts(k, demoted);
    feasible_rdv(lowest, width)
        .take(REG_BANKS as usize)
        .min_by_key(|r| (r.words().map(|w| costs[bank_of(w) as usize]).sum::<usize>(), r.index))
}

/// The lowest free value register at or above `lowest`.
pub fn first_rdv(lowest: u8, width: u8) -> Option<RegisterRef> {
    feasible_rdv(lowest, width).next()
}

fn feasible_rdv(lowest: u8, width: u8) -> impl Iterator<Item = RegisterRef> {
    (lowest as u32..RZ_INDEX as u32)
        .filter(move |i| width == 1 || i % 2 == 0)
        .filter(move |i| i + (width as u32) <= RZ_INDEX as u32)
        .map(move |i| RegisterRef { index: i as u8, width })
}
