use std::collections::BTreeSet;

use crate::asm::{InstrClass, Item, Kernel, LatencyTable, RegisterRef};
use crate::demote::DemotionInfo;
use crate::flow::{build_cfg, register_liveness};

use super::accept;

/// Registers that may stand in for the value register: single words already
/// in use, never touched by a memory instruction and not reserved.
fn temporaries(k: &Kernel, info: &DemotionInfo) -> BTreeSet<u8> {
    let mut excluded: BTreeSet<u8> = info.rda.words().chain(info.rdv.words()).collect();
    for inst in k.instructions() {
        if InstrClass::of(inst.opcode).is_variable_latency() {
            excluded.extend(inst.words());
        }
        for r in inst.reg_operands().iter().filter(|r| r.width > 1) {
            excluded.extend(r.words());
        }
    }
    k.used_words().into_iter().filter(|w| !excluded.contains(w) && *w != crate::asm::RZ_INDEX).collect()
}

/// From an unguarded write of `v` at `start`, the index of the last reader
/// before the next write of `v`, within the block.
fn range_end(k: &Kernel, start: usize, v: u8) -> Option<usize> {
    let mut last = None;
    for (i, item) in k.body.iter().enumerate().skip(start + 1) {
        let Item::Instr(inst) = item else {
            if matches!(item, Item::Label(_)) {
                break;
            }
            continue;
        };
        if inst.reads_word(v) {
            last = Some(i);
        }
        if inst.writes_word(v) || inst.opcode.is_jump() {
            break;
        }
    }
    last
}

/// Within each block, moves short-lived values of the value register into
/// dead registers the kernel already uses, so several demoted values can be
/// live at once without raising the register count.
pub fn substitute_value_registers(k: &Kernel, info: &DemotionInfo, table: &LatencyTable) -> Kernel {
    if info.rdv.width != 1 || info.demoted.is_empty() {
        return k.clone();
    }
    let v = info.rdv.index;
    let temps = temporaries(k, info);
    let mut current = k.clone();
    let mut start = 0;
    while start < current.body.len() {
        let idx = start;
        start += 1;
        let Some(inst) = current.body[idx].as_instr() else { continue };
        if inst.guard.is_some() || !inst.writes_word(v) {
            continue;
        }
        let Some(end) = range_end(&current, idx, v) else { continue };
        let Ok(cfg) = build_cfg(&current) else { return current };
        let live = register_liveness(&current, &cfg);
        if live.live_after(end).contains(v) {
            continue;
        }
        let free = temps.iter().copied().find(|t| {
            !live.live_after(end).contains(*t)
                && (idx..=end).all(|i| {
                    !live.live_before(i).contains(*t)
                        && current.body[i].as_instr().is_none_or(|x| !x.touches_word(*t))
                })
        });
        let Some(t) = free else { continue };
        let mut next = current.clone();
        for item in &mut next.body[idx..=end] {
            if let Some(x) = item.as_instr_mut() {
                x.map_regs(|r| if r == info.rdv { RegisterRef::single(t) } else { r });
            }
        }
        if let Some(ok) = accept(&current, next, table) {
            current = ok;
            start = end + 1;
        }
    }
    current
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::{parse_kernel, Opcode};
    use crate::demote::{demote, plan_demotion, DemoteConfig, DemotedRegister, Strategy};
    use crate::oracle::scoreboard_check;

    fn demoted(body: &str, regs: &[u8]) -> (Kernel, DemotionInfo) {
        let k = parse_kernel(&format!(".kernel k\n.blockdim 32\n.shared 0\n{body}")).unwrap();
        let mut plan = plan_demotion(&k, &DemoteConfig::new(32, Strategy::Static)).unwrap();
        plan.demoted = regs
            .iter()
            .enumerate()
            .map(|(i, r)| DemotedRegister { register: RegisterRef::single(*r), slots: vec![i as u32] })
            .collect();
        let d = demote(&k, &plan, &LatencyTable::default());
        (d.kernel, d.info)
    }

    #[test]
    fn dead_register_serves_a_slot() {
        // R4 is dead between its last use and its redefinition.
        let (k, info) = demoted(
            "B--:-:-:-:6 MOV R4, 1 ;\nB--:-:-:-:6 IADD R5, R4, 1 ;\nB--:-:-:-:6 IADD R6, R2, R3 ;\nB--:-:-:-:6 MOV R4, 3 ;\nB--:-:-:-:6 IADD R5, R4, R5 ;\nB--:-:-:-:6 IADD R6, R6, R5 ;\nB--:-:-:-:1 STG [R0+0x0], R6 ;\nB--:-:-:-:1 EXIT ;\n",
            &[2, 3],
        );
        let out = substitute_value_registers(&k, &info, &LatencyTable::default());
        assert_eq!(out.reg_count(), k.reg_count());
        let via_r4 = out
            .instructions()
            .filter(|i| i.opcode == Opcode::Lds && i.dest_words() == vec![4])
            .count();
        assert_eq!(via_r4, 1);
        assert!(scoreboard_check(&out, &LatencyTable::default()).is_empty());
    }

    #[test]
    fn no_free_register_no_change() {
        let (k, info) = demoted(
            "B--:-:-:-:6 IADD R4, R2, R3 ;\nB--:-:-:-:1 STG [R4+0x0], R4 ;\nB--:-:-:-:1 EXIT ;\n",
            &[2, 3],
        );
        let out = substitute_value_registers(&k, &info, &LatencyTable::default());
        assert_eq!(out, k);
    }

    #[test]
    fn reserved_registers_never_used() {
        let (k, info) = demoted("B--:-:-:-:6 IADD R4, R2, R3 ;\nB--:-:-:-:1 EXIT ;\n", &[2, 3]);
        let t = temporaries(&k, &info);
        assert!(!t.contains(&info.rda.index));
        assert!(!t.contains(&info.rdv.index));
    }
}
