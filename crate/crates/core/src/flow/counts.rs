use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Cfg;
use crate::asm::Kernel;

/// Weight applied per loop nesting level.
pub const LOOP_FACTOR: u64 = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CountStrategy {
    Static,
    CfgWeighted,
}

/// `LOOP_FACTOR^depth`.
pub fn loop_weight(depth: u32) -> u64 {
    LOOP_FACTOR.pow(depth)
}

/// Operand occurrences per register word. Each occurrence of a pair counts
/// for both of its words.
pub fn access_counts(k: &Kernel, cfg: &Cfg, strategy: CountStrategy) -> BTreeMap<u8, u64> {
    let mut counts = BTreeMap::new();
    for b in &cfg.blocks {
        let weight = match strategy {
            CountStrategy::Static => 1,
            CountStrategy::CfgWeighted => loop_weight(cfg.loop_depth(b.id)),
        };
        for (_, inst) in cfg.block_instructions(k, b.id) {
            for r in inst.reg_operands() {
                for w in r.words() {
                    *counts.entry(w).or_insert(0) += weight;
                }
            }
        }
    }
    counts
}
