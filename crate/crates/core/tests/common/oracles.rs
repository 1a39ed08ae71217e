//! Reference computations written independently of the library code they
//! check.

use shmspill::asm::{Barrier, ControlInfo, Instruction, Item, Kernel, LatencyTable, Opcode, RegisterRef};
use shmspill::compact::RenameMap;
use shmspill::demote::DemotionInfo;
use shmspill::occupancy::ArchProfile;
use shmspill::oracle::{execute, ExecConfig};

/// Occupancy by trying every resident block count.
pub fn brute_force_occupancy(regs: u32, shared: u32, block_dim: u32, arch: &ArchProfile) -> f64 {
    let regs_per_block = regs.div_ceil(arch.reg_alloc_granularity) * arch.reg_alloc_granularity * block_dim;
    let shared_per_block = shared.div_ceil(arch.shared_alloc_granularity) * arch.shared_alloc_granularity;
    let fits = |b: u32| {
        b <= arch.max_blocks_per_sm
            && b * block_dim <= arch.max_threads_per_sm
            && b as u64 * regs_per_block as u64 <= arch.regs_per_sm as u64
            && (shared == 0 || (shared <= arch.shared_per_block_limit && b * shared_per_block <= arch.shared_per_sm))
    };
    let mut best = 0;
    for b in 1..=4096 {
        if fits(b) {
            best = b;
        }
    }
    (best * block_dim) as f64 / arch.max_threads_per_sm as f64
}

/// Checks a compaction renaming of `units`: injective, groups stay
/// contiguous and aligned, and every hole below the top is a single padding
/// word directly before a group. Returns the compacted length.
pub fn check_compaction(units: &[RegisterRef], map: &RenameMap) -> Result<usize, String> {
    let mut taken: Vec<Option<u8>> = Vec::new();
    for u in units {
        let lead = map.get(u.index);
        if u.width > 1 && !lead.is_multiple_of(u.width) {
            return Err(format!("R{} lands on misaligned R{lead}", u.index));
        }
        for (k, w) in u.words().enumerate() {
            let to = map.get(w) as usize;
            if to != lead as usize + k {
                return Err(format!("R{w} of the group at R{} is not contiguous", u.index));
            }
            if taken.len() <= to {
                taken.resize(to + 1, None);
            }
            if let Some(prev) = taken[to] {
                return Err(format!("R{w} and R{prev} both map to R{to}"));
            }
            taken[to] = Some(w);
        }
    }
    let wide_leads: Vec<usize> =
        units.iter().filter(|u| u.width > 1).map(|u| map.get(u.index) as usize).collect();
    for (i, t) in taken.iter().enumerate() {
        if t.is_none() && !wide_leads.contains(&(i + 1)) {
            return Err(format!("hole at R{i} is not alignment padding"));
        }
    }
    Ok(taken.len())
}

/// Per-lane base address, from running the straight-line code ahead of the
/// first label, jump or demoted access.
fn lane_bases(k: &Kernel, info: &DemotionInfo) -> Result<Vec<u32>, String> {
    let cut = k
        .body
        .iter()
        .position(|i| match i {
            Item::Label(_) => true,
            Item::Instr(inst) => {
                inst.opcode.is_jump() || inst.opcode == Opcode::Exit || inst.mem_operand().is_some_and(|(b, _)| b == info.rda)
            }
            Item::Comment(_) => false,
        })
        .ok_or("no demoted access")?;
    let mut prefix = k.clone();
    prefix.body.truncate(cut);
    prefix.body.push(Item::Instr(Instruction::new(Opcode::Nop, vec![], drain())));
    prefix.body.push(Item::Instr(Instruction::new(Opcode::Exit, vec![], ControlInfo::with_stall(1))));
    let state = execute(&prefix, &vec![0u8; 0x20000], &ExecConfig::default()).map_err(|e| e.to_string())?;
    Ok((0..32).map(|l| state.reg(l, info.rda.index)).collect())
}

fn drain() -> ControlInfo {
    let mut c = ControlInfo::with_stall(1);
    for b in Barrier::all() {
        c.wait.insert(b);
    }
    c
}

/// Every demoted access hits 32 distinct banks (or repeats a word). Returns
/// the number of accesses checked.
pub fn lane_bank_check(k: &Kernel, info: &DemotionInfo) -> Result<usize, String> {
    let bases = lane_bases(k, info)?;
    let mut checked = 0;
    for inst in k.instructions() {
        if !matches!(inst.opcode, Opcode::Lds | Opcode::Sts) {
            continue;
        }
        let Some((base, offset)) = inst.mem_operand() else { continue };
        if base != info.rda {
            continue;
        }
        checked += 1;
        let mut bank_word = [None::<u32>; 32];
        for (lane, b) in bases.iter().enumerate() {
            let addr = b.wrapping_add(offset);
            let bank = ((addr / 4) % 32) as usize;
            match bank_word[bank] {
                Some(w) if w != addr / 4 => {
                    return Err(format!("line {}: lane {lane} conflicts in bank {bank}", inst.line));
                }
                _ => bank_word[bank] = Some(addr / 4),
            }
        }
    }
    Ok(checked)
}

/// Resident warps per scheduler at full occupancy (64 warps over 4 schedulers).
const WARPS_PER_SCHEDULER: f64 = 16.0;

/// Throughput-aware timing of a kernel from one interpreted warp: latency
/// hiding across the warps resident per scheduler against the issue cycles
/// one warp's instruction mix costs a scheduler.
pub fn oracle_time(k: &Kernel, global: &[u8], occupancy: f64, table: &LatencyTable) -> f64 {
    let state = execute(k, global, &ExecConfig::default()).expect("oracle kernels execute");
    let issue: f64 = state
        .class_counts
        .iter()
        .map(|(class, n)| {
            let per_scheduler = table.info(*class).throughput as f64 / 4.0;
            *n as f64 * 32.0 / per_scheduler
        })
        .sum();
    let warps = occupancy * WARPS_PER_SCHEDULER;
    (state.cycles as f64 / warps).max(issue)
}

/// Straight-line blocks split at labels (an empty labelled block counts)
/// and after control transfers, with
/// their loop nesting depth from backward branches. Returns item ranges and
/// depths.
fn text_blocks(k: &Kernel) -> (Vec<(usize, usize)>, Vec<u32>) {
    let mut blocks = Vec::new();
    let mut labels = std::collections::HashMap::new();
    let mut start = 0;
    let mut has_instr = false;
    let mut has_label = false;
    for (i, item) in k.body.iter().enumerate() {
        match item {
            Item::Label(name) => {
                if has_instr || has_label {
                    blocks.push((start, i));
                    start = i;
                    has_instr = false;
                }
                has_label = true;
                labels.insert(name.clone(), blocks.len());
            }
            Item::Instr(inst) => {
                has_instr = true;
                if inst.opcode.is_jump() || inst.opcode == Opcode::Exit {
                    blocks.push((start, i + 1));
                    start = i + 1;
                    has_instr = false;
                    has_label = false;
                }
            }
            Item::Comment(_) => {}
        }
    }
    if has_instr || has_label {
        blocks.push((start, k.body.len()));
    }
    let mut depth = vec![0u32; blocks.len()];
    for (j, &(_, end)) in blocks.iter().enumerate() {
        let Some(Item::Instr(last)) = end.checked_sub(1).and_then(|e| k.body.get(e)) else { continue };
        if !last.opcode.is_jump() {
            continue;
        }
        let Some(shmspill::asm::Operand::Label(target)) = last.operands.first() else { continue };
        if let Some(&head) = labels.get(target) {
            if head <= j {
                for d in &mut depth[head..=j] {
                    *d += 1;
                }
            }
        }
    }
    (blocks, depth)
}

/// Stall cycles per block, loop weighted by ten per nesting level. Each
/// block runs on a clock that advances by the scaled stall of every
/// instruction; a wait on a memory barrier costs whatever part of the
/// latency that clock has not yet covered since the barrier was set.
pub fn reference_stalls(k: &Kernel, occupancy: f64, table: &LatencyTable) -> Vec<f64> {
    let (blocks, depth) = text_blocks(k);
    blocks
        .iter()
        .zip(&depth)
        .map(|(&(s, e), &d)| {
            let mut clock = 0.0;
            let mut set_at: [Option<(f64, u32)>; 7] = [None; 7];
            let mut total = 0.0;
            for item in &k.body[s..e] {
                let Item::Instr(inst) = item else { continue };
                let info = table.info(shmspill::asm::InstrClass::of(inst.opcode));
                let latency = match inst.opcode {
                    Opcode::Ldg | Opcode::Stg => table.global_latency,
                    Opcode::Lds | Opcode::Sts => table.shared_latency,
                    _ => 0,
                };
                for b in [inst.control.read_barrier, inst.control.write_barrier].into_iter().flatten() {
                    set_at[b.index() as usize] = Some((clock, latency));
                }
                for b in inst.control.wait.iter() {
                    if let Some((t, lat)) = set_at[b.index() as usize].take() {
                        total += (lat as f64 - (clock - t)).max(0.0);
                    }
                }
                let stall = inst.control.stall as f64 * occupancy * table.max_throughput as f64 / info.throughput as f64;
                clock += stall;
                total += stall;
            }
            total * 10f64.powi(d as i32)
        })
        .collect()
}
