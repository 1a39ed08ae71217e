//! Register demotion: moves selected registers into per-thread shared-memory
//! slots, accessed through a base-address register (RDA) and a single value
//! register (RDV).

mod layout;
mod rewrite;
mod select;

pub use layout::{shared_location, SharedLayout};
pub use rewrite::INSERTED_STALL;
pub use select::{
    choose_rdv_bank, first_rdv, rdv_bank_conflicts, select_candidates, select_candidates_excluding, Strategy,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::asm::{ControlInfo, Imm, Instruction, Item, Kernel, LatencyTable, Opcode, Operand, RegisterRef, SpecialReg, RZ_INDEX};
use crate::compact::{compacted_len, register_units, CompactMode, RenameMap};
use crate::flow::{operand_conflicts, CfgError};
use crate::occupancy::FULL_OCCUPANCY_REGS;
use crate::oracle::normalize_waits;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DemoteError {
    #[error(transparent)]
    Cfg(#[from] CfgError),
    #[error("no register can be demoted")]
    NothingDemotable,
    #[error("one demoted slot needs {needed} bytes of shared memory, budget is {budget}")]
    SharedBudget { needed: u32, budget: u32 },
    #[error("no free register index left for the base-address and value registers")]
    RegisterSpace,
}

#[derive(Clone, Debug)]
pub struct DemoteConfig {
    pub target_regs: u32,
    pub strategy: Strategy,
    /// Demotion stops once the register count is at or below this floor.
    pub reg_floor: u32,
    /// Bytes available for demoted slots; `None` means unlimited.
    pub max_shared: Option<u32>,
    /// Pick the value register's bank to avoid register-bank conflicts.
    pub bank_aware_rdv: bool,
    pub latency: LatencyTable,
}

impl DemoteConfig {
    pub fn new(target_regs: u32, strategy: Strategy) -> Self {
        DemoteConfig {
            target_regs,
            strategy,
            reg_floor: FULL_OCCUPANCY_REGS,
            max_shared: None,
            bank_aware_rdv: false,
            latency: LatencyTable::default(),
        }
    }
}

/// One register moved to shared memory and the slots its words occupy.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemotedRegister {
    pub register: RegisterRef,
    pub slots: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationLog {
    pub register: RegisterRef,
    /// Register count expected after compaction once this register is demoted.
    pub projected_regs: u32,
    /// Candidates dropped because they share an instruction with this register.
    pub pruned: Vec<RegisterRef>,
}

/// The selection phase's result: which registers go where.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemotionPlan {
    pub target_reg_count: u32,
    pub strategy: Strategy,
    pub rda: RegisterRef,
    pub rdv: RegisterRef,
    pub demoted: Vec<DemotedRegister>,
    pub layout: SharedLayout,
    pub log: Vec<IterationLog>,
    pub diagnostics: Vec<String>,
    pub reached_target: bool,
}

impl DemotionPlan {
    pub fn slot_count(&self) -> u32 {
        self.demoted.iter().map(|d| d.slots.len() as u32).sum()
    }
}

/// Sidecar describing a demoted kernel, kept up to date through renaming.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemotionInfo {
    pub rda: RegisterRef,
    pub rdv: RegisterRef,
    pub layout: SharedLayout,
    pub demoted: Vec<DemotedRegister>,
    pub dynamic_shared: u32,
}

impl DemotionInfo {
    pub fn slot_count(&self) -> u32 {
        self.demoted.iter().map(|d| d.slots.len() as u32).sum()
    }

    pub fn renamed(&self, map: &RenameMap) -> DemotionInfo {
        DemotionInfo { rda: map.rename(self.rda), rdv: map.rename(self.rdv), ..self.clone() }
    }

    /// Slot addressed by a demoted load or store, `None` for any other instruction.
    pub fn slot_of(&self, inst: &Instruction) -> Option<u32> {
        if !matches!(inst.opcode, Opcode::Lds | Opcode::Sts) {
            return None;
        }
        let (base, offset) = inst.mem_operand()?;
        if base != self.rda {
            return None;
        }
        self.layout.slot_of_offset(offset).filter(|s| *s < self.slot_count())
    }
}

#[derive(Clone, Debug)]
pub struct Demotion {
    pub kernel: Kernel,
    pub info: DemotionInfo,
    pub plan: DemotionPlan,
}

/// Register count after compacting the kernel's registers minus `demoted`,
/// plus the base-address and value registers when anything is demoted.
fn projected_regs(units: &[RegisterRef], demoted: &[RegisterRef]) -> u32 {
    let mut rest: Vec<RegisterRef> = units.iter().filter(|u| !demoted.contains(u)).copied().collect();
    if !demoted.is_empty() {
        let top = units.iter().map(|u| u.index as u32 + u.width as u32).max().unwrap_or(0) as u8;
        let width = demoted.iter().map(|d| d.width).max().unwrap_or(1);
        rest.push(RegisterRef::single(top));
        let rdv = top + 1 + u8::from(width == 2 && (top + 1) % 2 == 1);
        rest.push(RegisterRef { index: rdv, width });
    }
    compacted_len(&rest, CompactMode::Full)
}

/// Selection phase: dequeues candidates until the projected register count
/// reaches the target or the floor, pruning candidates that share an
/// instruction with a demoted register.
pub fn plan_demotion(k: &Kernel, config: &DemoteConfig) -> Result<DemotionPlan, DemoteError> {
    let mut diagnostics = Vec::new();
    let mut target = config.target_regs;
    if target < config.reg_floor {
        diagnostics.push(format!("target {target} is below {}; using {}", config.reg_floor, config.reg_floor));
        log::info!("demotion target {target} clamped to {}", config.reg_floor);
        target = config.reg_floor;
    }
    let units = register_units(k);
    let mut candidates = std::collections::VecDeque::from(select_candidates(k, config.strategy)?);
    let graph = operand_conflicts(k);
    let layout = SharedLayout::new(k.static_shared + k.dynamic_shared, k.block_dim);
    let mut demoted: Vec<RegisterRef> = Vec::new();
    let mut log = Vec::new();
    let mut slots = 0u32;
    let reached_target = loop {
        let current = projected_regs(&units, &demoted);
        if current <= target || current <= config.reg_floor {
            break true;
        }
        let Some(r) = candidates.pop_front() else {
            diagnostics.push(format!("candidate list exhausted at {current} registers (target {target})"));
            break false;
        };
        let needed = (slots + r.width as u32) * layout.slot_stride();
        if let Some(budget) = config.max_shared {
            if needed > budget {
                diagnostics.push(format!("R{} skipped: {needed} bytes exceed the shared budget {budget}", r.index));
                if demoted.is_empty() && candidates.iter().all(|c| (c.width as u32) * layout.slot_stride() > budget) {
                    return Err(DemoteError::SharedBudget { needed: layout.slot_stride(), budget });
                }
                continue;
            }
        }
        slots += r.width as u32;
        demoted.push(r);
        let pruned: Vec<RegisterRef> = candidates.iter().filter(|c| graph.conflicts(**c, r)).copied().collect();
        candidates.retain(|c| !pruned.contains(c));
        log.push(IterationLog { register: r, projected_regs: projected_regs(&units, &demoted), pruned });
    };
    if demoted.is_empty() && !reached_target {
        return Err(DemoteError::NothingDemotable);
    }

    let top = k.reg_count();
    if top + 3 >= RZ_INDEX as u32 {
        return Err(DemoteError::RegisterSpace);
    }
    let rda = RegisterRef::single(top as u8);
    let width = demoted.iter().map(|d| d.width).max().unwrap_or(1);
    let rdv = if config.bank_aware_rdv {
        choose_rdv_bank(k, &demoted, rda.index + 1, width)
    } else {
        first_rdv(rda.index + 1, width)
    }
    .ok_or(DemoteError::RegisterSpace)?;

    let mut next_slot = 0;
    let demoted = demoted
        .into_iter()
        .map(|register| {
            let slots = (next_slot..next_slot + register.width as u32).collect();
            next_slot += register.width as u32;
            DemotedRegister { register, slots }
        })
        .collect();
    Ok(DemotionPlan {
        target_reg_count: target,
        strategy: config.strategy,
        rda,
        rdv,
        demoted,
        layout,
        log,
        diagnostics,
        reached_target,
    })
}

/// Transformation phase: applies the plan register by register, then inserts
/// the prologue computing the per-thread base address.
pub fn demote(k: &Kernel, plan: &DemotionPlan, table: &LatencyTable) -> Demotion {
    let mut body = k.body.clone();
    for d in &plan.demoted {
        let sweep = rewrite::Sweep {
            table,
            rda: plan.rda,
            rdv: plan.rdv,
            reg: d.register,
            offsets: d.slots.iter().map(|s| plan.layout.slot_offset(*s)).collect(),
        };
        body = sweep.run(&body);
    }
    let mut out = k.clone();
    out.body = body;
    let slots = plan.slot_count();
    let info = DemotionInfo {
        rda: plan.rda,
        rdv: plan.rdv,
        layout: plan.layout,
        demoted: plan.demoted.clone(),
        dynamic_shared: 0,
    };
    if slots == 0 {
        return Demotion { kernel: out, info, plan: plan.clone() };
    }
    let prologue = [
        Instruction::new(
            Opcode::S2r,
            vec![Operand::Reg(plan.rda), Operand::Special(SpecialReg::TidX)],
            ControlInfo::with_stall(6),
        ),
        Instruction::new(
            Opcode::Shl,
            vec![Operand::Reg(plan.rda), Operand::Reg(plan.rda), Operand::Imm(Imm::dec(2))],
            ControlInfo::with_stall(6),
        ),
    ];
    let at = out.body.iter().position(|i| !matches!(i, Item::Comment(_))).unwrap_or(out.body.len());
    out.body.splice(at..at, prologue.into_iter().map(Item::Instr));
    out.dynamic_shared = plan.layout.end(slots) - k.static_shared;
    let out = normalize_waits(&out);
    let info = DemotionInfo { dynamic_shared: out.dynamic_shared, ..info };
    Demotion { kernel: out, info, plan: plan.clone() }
}

/// Selection and transformation in one call.
pub fn demote_kernel(k: &Kernel, config: &DemoteConfig) -> Result<Demotion, DemoteError> {
    let plan = plan_demotion(k, config)?;
    Ok(demote(k, &plan, &config.latency))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::parse_kernel;
    use crate::oracle::scoreboard_check;

    fn kernel(body: &str) -> Kernel {
        parse_kernel(&format!(".kernel k\n.blockdim 64\n.shared 0\n{body}")).unwrap()
    }

    fn demote_one(k: &Kernel, r: RegisterRef) -> Demotion {
        let mut plan = plan_demotion(k, &DemoteConfig::new(32, Strategy::Static)).unwrap();
        plan.demoted = vec![DemotedRegister { register: r, slots: (0..r.width as u32).collect() }];
        plan.rdv = first_rdv(plan.rda.index + 1, r.width).unwrap();
        demote(k, &plan, &LatencyTable::default())
    }

    fn ops(k: &Kernel) -> Vec<Opcode> {
        k.instructions().map(|i| i.opcode).collect()
    }

    #[test]
    fn def_then_use() {
        let k = kernel("B--:-:-:-:6 MOV R3, 1 ;\nB--:-:-:-:6 IADD R4, R3, R3 ;\nB--:-:-:-:1 EXIT ;\n");
        let d = demote_one(&k, RegisterRef::single(3));
        assert_eq!(
            ops(&d.kernel),
            [Opcode::S2r, Opcode::Shl, Opcode::Mov, Opcode::Sts, Opcode::Lds, Opcode::Iadd, Opcode::Exit]
        );
        let insts: Vec<&Instruction> = d.kernel.instructions().collect();
        let (sts, lds, user) = (insts[3], insts[4], insts[5]);
        assert!(lds.control.wait.contains(sts.control.read_barrier.unwrap()));
        assert!(user.control.wait.contains(lds.control.write_barrier.unwrap()));
        assert_eq!(user.operands[1], Operand::Reg(d.info.rdv));
        assert_eq!(d.info.rda, RegisterRef::single(5));
        assert_eq!(d.kernel.dynamic_shared, 256);
        assert!(scoreboard_check(&d.kernel, &LatencyTable::default()).is_empty());
    }

    #[test]
    fn load_definer_gains_write_barrier() {
        let k = kernel("B--:-:-:-:2 LDG R3, [R0+0x0] ;\nB--:-:-:-:6 MOV R1, 0 ;\nB--:-:-:-:1 EXIT ;\n");
        let d = demote_one(&k, RegisterRef::single(3));
        let insts: Vec<&Instruction> = d.kernel.instructions().collect();
        let wb = insts[2].control.write_barrier.expect("write barrier added");
        assert_eq!(insts[3].opcode, Opcode::Sts);
        assert!(insts[3].control.wait.contains(wb));
        assert!(scoreboard_check(&d.kernel, &LatencyTable::default()).is_empty());
    }

    #[test]
    fn pair_uses_two_slots() {
        let k = kernel("B--:-:-:-:6 DADD R8, R2, R2 ;\nB--:-:-:-:6 DMUL R2, R8, R8 ;\nB--:-:-:-:1 EXIT ;\n");
        let d = demote_one(&k, RegisterRef::pair(8));
        assert_eq!(d.info.rdv.width, 2);
        assert_eq!(d.info.rdv.index % 2, 0);
        let stores: Vec<u32> = d.kernel.instructions().filter_map(|i| d.info.slot_of(i)).collect();
        assert_eq!(stores, vec![0, 1, 0, 1]);
        assert_eq!(d.kernel.dynamic_shared, 512);
        assert!(scoreboard_check(&d.kernel, &LatencyTable::default()).is_empty());
    }

    #[test]
    fn guard_is_copied() {
        let k = kernel("B--:-:-:-:6 @P1 MOV R3, 1 ;\nB--:-:-:-:6 @!P1 IADD R4, R3, 1 ;\nB--:-:-:-:1 EXIT ;\n");
        let d = demote_one(&k, RegisterRef::single(3));
        let insts: Vec<&Instruction> = d.kernel.instructions().collect();
        assert_eq!(insts[3].guard, insts[2].guard);
        assert_eq!(insts[4].guard, insts[5].guard);
    }

    #[test]
    fn target_below_floor_is_clamped() {
        let body: String = (0..40).map(|i| format!("B--:-:-:-:1 MOV R{i}, {i} ;\n")).collect();
        let k = kernel(&format!("{body}B--:-:-:-:1 EXIT ;\n"));
        let plan = plan_demotion(&k, &DemoteConfig::new(20, Strategy::Static)).unwrap();
        assert_eq!(plan.target_reg_count, 32);
        assert!(plan.reached_target);
        assert!(!plan.diagnostics.is_empty());
        // 40 registers, 32 target: 40 - 32 + 2 demoted.
        assert_eq!(plan.demoted.len(), 10);
    }

    #[test]
    fn rdv_readers_block_overwrite() {
        // The store reads the value register asynchronously; the later
        // redefinition must wait for that read.
        let k = kernel(
            "B--:-:-:-:6 MOV R3, 1 ;\nB--:-:-:-:1 STG [R0+0x0], R3 ;\nB--:-:-:-:6 MOV R3, 2 ;\nB--:-:-:-:1 STG [R0+0x4], R3 ;\nB--:-:-:-:1 EXIT ;\n",
        );
        let d = demote_one(&k, RegisterRef::single(3));
        assert!(scoreboard_check(&d.kernel, &LatencyTable::default()).is_empty());
    }
}
