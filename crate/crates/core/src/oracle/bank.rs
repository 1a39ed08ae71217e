//! Shared-memory bank check for demoted accesses.

use serde::Serialize;

use crate::asm::{Instruction, Kernel, Opcode, Operand, SpecialReg};
use crate::demote::DemotionInfo;

use super::interp::WARP_SIZE;

/// Number of 4-byte shared-memory banks.
pub const SHARED_BANKS: u32 = 32;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BankFinding {
    /// Two lanes of one warp access different words in the same bank.
    LaneConflict { item: usize, line: usize, lanes: (u32, u32), bank: u32 },
    /// A demoted access uses an offset outside the slot layout.
    StrayOffset { item: usize, line: usize, offset: u32 },
    /// The base-address register is not a function of the thread index alone.
    UnknownBase { item: usize, line: usize },
}

fn eval(inst: &Instruction, vals: &[u32; WARP_SIZE], info: &DemotionInfo) -> Option<[u32; WARP_SIZE]> {
    if inst.guard.is_some() {
        return None;
    }
    let operand = |op: &Operand, lane: usize| -> Option<u32> {
        match op {
            Operand::Reg(r) if *r == info.rda => Some(vals[lane]),
            Operand::Reg(r) if r.is_zero() => Some(0),
            Operand::Imm(i) => Some(i.bits()),
            Operand::Special(SpecialReg::TidX) => Some(lane as u32),
            _ => None,
        }
    };
    let mut out = [0; WARP_SIZE];
    for (lane, slot) in out.iter_mut().enumerate() {
        let a = |i: usize| operand(&inst.operands[i], lane);
        *slot = match inst.opcode {
            Opcode::Mov | Opcode::S2r => a(1)?,
            Opcode::Iadd => a(1)?.wrapping_add(a(2)?),
            Opcode::Imul => a(1)?.wrapping_mul(a(2)?),
            Opcode::Shl => a(1)?.wrapping_shl(a(2)? & 31),
            _ => return None,
        };
    }
    Some(out)
}

/// Checks every demoted shared access of the first warp: the per-thread base
/// is evaluated from the instructions defining it, and each access must hit
/// 32 distinct banks (lanes reading the same word are a broadcast, not a
/// conflict).
pub fn bank_conflict_check(k: &Kernel, info: &DemotionInfo) -> Vec<BankFinding> {
    let mut findings = Vec::new();
    let mut base: Option<[u32; WARP_SIZE]> = Some([0; WARP_SIZE]);
    for (item, inst) in k.body.iter().enumerate().filter_map(|(i, it)| it.as_instr().map(|x| (i, x))) {
        let line = inst.line;
        let demoted_access = matches!(inst.opcode, Opcode::Lds | Opcode::Sts)
            && inst.mem_operand().is_some_and(|(b, _)| b == info.rda);
        if demoted_access {
            let (_, offset) = inst.mem_operand().expect("memory operand");
            if info.slot_of(inst).is_none() {
                findings.push(BankFinding::StrayOffset { item, line, offset });
            }
            match &base {
                None => findings.push(BankFinding::UnknownBase { item, line }),
                Some(vals) => {
                    let addr: Vec<u32> = vals.iter().map(|v| v.wrapping_add(offset)).collect();
                    'lanes: for i in 0..WARP_SIZE {
                        for j in i + 1..WARP_SIZE {
                            let bank = (addr[i] / 4) % SHARED_BANKS;
                            if addr[i] / 4 != addr[j] / 4 && bank == (addr[j] / 4) % SHARED_BANKS {
                                findings.push(BankFinding::LaneConflict {
                                    item,
                                    line,
                                    lanes: (i as u32, j as u32),
                                    bank,
                                });
                                break 'lanes;
                            }
                        }
                    }
                }
            }
        }
        if info.rda.words().any(|w| inst.writes_word(w)) {
            base = base.and_then(|v| eval(inst, &v, info));
        }
    }
    findings
}
