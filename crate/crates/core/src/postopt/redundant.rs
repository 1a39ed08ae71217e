use std::collections::BTreeMap;

use crate::asm::{Instruction, Kernel, LatencyTable, Opcode};
use crate::demote::DemotionInfo;

use super::{accept, remove_item, starts_block};

fn is_user_shared(inst: &Instruction, info: &DemotionInfo) -> bool {
    matches!(inst.opcode, Opcode::Lds | Opcode::Sts) && info.slot_of(inst).is_none()
}

/// Demoted loads whose value register already holds the slot, within a block.
fn redundant_loads(k: &Kernel, info: &DemotionInfo) -> Vec<usize> {
    // Register word -> slot whose current value it holds.
    let mut holds: BTreeMap<u8, u32> = BTreeMap::new();
    let mut out = Vec::new();
    for (idx, item) in k.body.iter().enumerate() {
        if starts_block(item) {
            holds.clear();
        }
        let Some(inst) = item.as_instr() else { continue };
        match (info.slot_of(inst), inst.opcode) {
            (Some(slot), Opcode::Lds) => {
                let d = inst.dest_words()[0];
                if holds.get(&d) == Some(&slot) {
                    out.push(idx);
                    continue;
                }
                holds.remove(&d);
                if inst.guard.is_none() {
                    holds.insert(d, slot);
                }
            }
            (Some(slot), _) => {
                holds.retain(|_, s| *s != slot);
                if inst.guard.is_none() {
                    holds.insert(inst.src_words()[1], slot);
                }
            }
            _ => {
                for w in inst.dest_words() {
                    holds.remove(&w);
                }
                if is_user_shared(inst, info) || info.rda.words().any(|w| inst.writes_word(w)) {
                    holds.clear();
                }
            }
        }
        if inst.opcode.is_jump() {
            holds.clear();
        }
    }
    out
}

/// Demoted stores overwritten by a later unguarded store to the same slot in
/// the same block, with no load of the slot in between.
fn dead_stores(k: &Kernel, info: &DemotionInfo) -> Vec<usize> {
    let mut out = Vec::new();
    for (idx, item) in k.body.iter().enumerate() {
        let Some(inst) = item.as_instr() else { continue };
        let Some(slot) = info.slot_of(inst).filter(|_| inst.opcode == Opcode::Sts) else { continue };
        for later in &k.body[idx + 1..] {
            if starts_block(later) {
                break;
            }
            let Some(l) = later.as_instr() else { continue };
            if l.opcode.is_jump() || is_user_shared(l, info) || info.rda.words().any(|w| l.writes_word(w)) {
                break;
            }
            match (info.slot_of(l), l.opcode) {
                (Some(s), Opcode::Lds) if s == slot => break,
                (Some(s), Opcode::Sts) if s == slot && l.guard.is_none() => {
                    out.push(idx);
                    break;
                }
                _ => {}
            }
        }
    }
    out
}

/// Removes demoted loads of a slot the value register still holds and
/// demoted stores overwritten before any load, block by block.
pub fn eliminate_redundant(k: &Kernel, info: &DemotionInfo, table: &LatencyTable) -> Kernel {
    let mut targets = redundant_loads(k, info);
    targets.extend(dead_stores(k, info));
    targets.sort_unstable();
    targets.dedup();
    let mut current = k.clone();
    for idx in targets.into_iter().rev() {
        let mut next = current.clone();
        remove_item(&mut next.body, idx);
        if let Some(ok) = accept(&current, next, table) {
            current = ok;
        }
    }
    current
}
