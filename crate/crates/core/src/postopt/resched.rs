use crate::asm::{Barrier, BarrierSet, Instruction, Item, Kernel, LatencyTable, Opcode};
use crate::demote::DemotionInfo;
use crate::oracle::outstanding_barriers;

use super::{accept, starts_block};

/// Whether a demoted load may not move above `j`.
fn blocks_hoist(j: &Instruction, lds: &Instruction, slot: u32, info: &DemotionInfo) -> bool {
    let dest = lds.dest_words();
    j.opcode.is_jump()
        || dest.iter().any(|w| j.touches_word(*w))
        || info.rda.words().any(|w| j.writes_word(w))
        || lds.guard.is_some_and(|g| j.dest_pred() == Some(g.pred))
        || (matches!(j.opcode, Opcode::Lds | Opcode::Sts) && info.slot_of(j).is_none())
        || (j.opcode == Opcode::Sts && info.slot_of(j) == Some(slot))
}

/// Nearest instruction before `j` in the body that sets `b`.
fn setter_before(body: &[Item], j: usize, b: Barrier) -> Option<&Instruction> {
    body[..j].iter().rev().filter_map(Item::as_instr).find(|i| i.control.sets().contains(b))
}

fn referenced(items: &[Item]) -> BarrierSet {
    items
        .iter()
        .filter_map(Item::as_instr)
        .fold(BarrierSet::EMPTY, |acc, i| acc.union(i.control.wait).union(i.control.sets()))
}

/// First instruction after `from` waiting on `b`, before the next jump.
fn first_waiter(body: &[Item], from: usize, b: Barrier) -> Option<usize> {
    for (i, item) in body.iter().enumerate().skip(from + 1) {
        let Some(inst) = item.as_instr() else { continue };
        if inst.control.wait.contains(b) {
            return Some(i);
        }
        if inst.opcode.is_jump() {
            return None;
        }
    }
    None
}

/// Moves the demoted load at `i` up to `p` with the given waits, renaming its barriers where the
/// old ones are in use along the way. `None` if no barrier is available.
fn hoist(k: &Kernel, i: usize, p: usize, waits: BarrierSet) -> Option<Kernel> {
    let mut lds = k.body[i].as_instr()?.clone();
    lds.control.wait = waits;
    let mut taken = referenced(&k.body[p..i]).union(outstanding_barriers(k, p)).union(lds.control.wait);
    let mut moves: Vec<(Barrier, Barrier, Option<usize>)> = Vec::new();
    for old in lds.control.sets().iter() {
        let waiter = first_waiter(&k.body, i, old);
        let mut busy = taken;
        match waiter {
            Some(w) => {
                let wi = k.body[w].as_instr()?;
                let mut waits = wi.control.wait;
                // The waiter's own wait on `old` is what gets renamed.
                waits.remove(old);
                busy = busy.union(referenced(&k.body[i + 1..w])).union(wi.control.sets()).union(waits);
            }
            None => busy = busy.union(referenced(&k.body[i + 1..])),
        }
        let new = if !busy.contains(old) { old } else { Barrier::all().find(|b| !busy.contains(*b))? };
        taken.insert(new);
        moves.push((old, new, waiter));
    }
    let mut out = k.clone();
    let mut moved = lds;
    moved.control.read_barrier = moved.control.read_barrier.map(|b| rename(b, &moves));
    moved.control.write_barrier = moved.control.write_barrier.map(|b| rename(b, &moves));
    for (old, new, waiter) in &moves {
        if let Some(w) = waiter {
            let wi = out.body[*w].as_instr_mut()?;
            wi.control.wait.remove(*old);
            wi.control.wait.insert(*new);
        }
    }
    out.body.remove(i);
    out.body.insert(p, Item::Instr(moved));
    Some(out)
}

fn rename(b: Barrier, moves: &[(Barrier, Barrier, Option<usize>)]) -> Barrier {
    moves.iter().find(|m| m.0 == b).map_or(b, |m| m.1)
}

/// Stall cycles from issuing the store at `i` to the next write of its value
/// register; `None` when a label comes first. A jump or the end of the
/// program drains the store.
fn distance_to_overwrite(k: &Kernel, i: usize, words: &[u8]) -> Option<u64> {
    let mut dist = k.body[i].as_instr()?.control.stall as u64;
    for item in &k.body[i + 1..] {
        if starts_block(item) {
            return None;
        }
        let Some(inst) = item.as_instr() else { continue };
        if words.iter().any(|w| inst.writes_word(*w)) {
            return Some(dist);
        }
        if inst.opcode.is_jump() {
            return Some(u64::MAX);
        }
        dist += inst.control.stall as u64;
    }
    Some(u64::MAX)
}

/// Hoists each demoted load as far up its block as its dependences allow,
/// then drops read barriers of demoted stores whose value register is not
/// rewritten within the shared-memory latency.
pub fn reschedule(k: &Kernel, info: &DemotionInfo, table: &LatencyTable) -> Kernel {
    let mut current = k.clone();
    let mut i = 0;
    while i < current.body.len() {
        let Some(lds) = current.body[i].as_instr() else {
            i += 1;
            continue;
        };
        let slot = match info.slot_of(lds) {
            Some(s) if lds.opcode == Opcode::Lds => s,
            _ => {
                i += 1;
                continue;
            }
        };
        // Waits the load must take over from the instructions it passes:
        // those guarding an in-flight access of its destination.
        let mut waits = lds.control.wait;
        let mut p = i;
        while p > 0 {
            match &current.body[p - 1] {
                Item::Label(_) => break,
                Item::Comment(_) => p -= 1,
                Item::Instr(j) => {
                    if blocks_hoist(j, lds, slot, info) || j.control.sets().iter().any(|b| waits.contains(b)) {
                        break;
                    }
                    for b in j.control.wait.iter() {
                        let dest = lds.dest_words();
                        if setter_before(&current.body, p - 1, b).is_some_and(|s| dest.iter().any(|w| s.touches_word(*w))) {
                            waits.insert(b);
                        }
                    }
                    p -= 1;
                }
            }
        }
        if p < i {
            if let Some(ok) = hoist(&current, i, p, waits).and_then(|h| accept(&current, h, table)) {
                current = ok;
            }
        }
        i += 1;
    }

    for i in 0..current.body.len() {
        let Some(sts) = current.body[i].as_instr() else { continue };
        if sts.opcode != Opcode::Sts || info.slot_of(sts).is_none() || sts.control.read_barrier.is_none() {
            continue;
        }
        let words = sts.src_words();
        let value_words: Vec<u8> = words.iter().copied().filter(|w| !info.rda.words().any(|a| a == *w)).collect();
        let Some(dist) = distance_to_overwrite(&current, i, &value_words) else { continue };
        if dist < table.shared_latency as u64 {
            continue;
        }
        let mut next = current.clone();
        if let Some(s) = next.body[i].as_instr_mut() {
            s.control.read_barrier = None;
        }
        if let Some(ok) = accept(&current, next, table) {
            current = ok;
        }
    }
    current
}
