use std::collections::{BTreeMap, HashMap};

use serde::Serialize;
use thiserror::Error;

use crate::asm::{BarrierSet, InstrClass, Instruction, Item, Kernel, LatencyTable, Opcode, Operand, SpecialReg, RZ_INDEX};

pub const WARP_SIZE: usize = 32;
const NUM_PREDS: usize = 7;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ExecError {
    #[error("fuel exhausted after {0} issued instructions")]
    FuelExhausted(u64),
    #[error("line {line}: {space} access of 4 bytes at {addr:#x} is out of bounds ({size} bytes)")]
    OutOfBounds { space: &'static str, addr: u64, size: usize, line: usize },
    #[error("branch to unknown label `{0}`")]
    UnknownLabel(String),
    #[error("warp threads {tid_base}..{} exceed block size {block_dim}", tid_base + 32)]
    ThreadRange { tid_base: u32, block_dim: u32 },
}

#[derive(Clone, Debug)]
pub struct ExecConfig {
    /// Thread index of lane 0.
    pub tid_base: u32,
    pub ctaid: u32,
    /// Maximum number of issued instructions.
    pub fuel: u64,
    pub latency: LatencyTable,
}

impl Default for ExecConfig {
    fn default() -> Self {
        ExecConfig { tid_base: 0, ctaid: 0, fuel: 1_000_000, latency: LatencyTable::default() }
    }
}

/// Final state of one warp.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct WarpState {
    /// `regs[lane][index]`.
    #[serde(skip)]
    pub regs: Vec<[u32; 256]>,
    #[serde(skip)]
    pub preds: Vec<[bool; NUM_PREDS]>,
    #[serde(with = "hex_bytes")]
    pub shared: Vec<u8>,
    #[serde(with = "hex_bytes")]
    pub global: Vec<u8>,
    /// Warp clock when the last instruction retired.
    pub cycles: u64,
    pub issued: u64,
    pub class_counts: BTreeMap<InstrClass, u64>,
}

impl WarpState {
    pub fn reg(&self, lane: usize, index: u8) -> u32 {
        if index == RZ_INDEX {
            0
        } else {
            self.regs[lane][index as usize]
        }
    }

    /// Global memory plus the first `user_shared` bytes of shared memory:
    /// everything a transformation must leave unchanged.
    pub fn observable(&self, user_shared: u32) -> (&[u8], &[u8]) {
        let n = (user_shared as usize).min(self.shared.len());
        (&self.global, &self.shared[..n])
    }
}

mod hex_bytes {
    use serde::Serializer;

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        let text: String = bytes.iter().map(|b| format!("{b:02x}")).collect();
        s.serialize_str(&text)
    }
}

struct InFlight {
    done: u64,
    seq: u64,
    pc: usize,
    lanes: u32,
    barriers: BarrierSet,
}

struct Machine<'k> {
    code: Vec<&'k Instruction>,
    state: WarpState,
    in_flight: Vec<InFlight>,
    seq: u64,
    clock: u64,
    tid_base: u32,
    ctaid: u32,
}

fn lane_bit(l: usize) -> u32 {
    1 << l
}

impl Machine<'_> {
    fn value(&self, lane: usize, op: &Operand) -> u32 {
        match op {
            Operand::Reg(r) => self.state.reg(lane, r.index),
            Operand::Imm(i) => i.bits(),
            Operand::Special(SpecialReg::TidX) => self.tid_base + lane as u32,
            Operand::Special(SpecialReg::CtaidX) => self.ctaid,
            _ => 0,
        }
    }

    fn value64(&self, lane: usize, op: &Operand) -> f64 {
        match op {
            Operand::Reg(r) if !r.is_zero() => {
                let lo = self.state.reg(lane, r.index) as u64;
                let hi = self.state.reg(lane, r.index + 1) as u64;
                f64::from_bits(lo | (hi << 32))
            }
            _ => 0.0,
        }
    }

    fn set(&mut self, lane: usize, op: &Operand, v: u32) {
        if let Operand::Reg(r) = op {
            if !r.is_zero() {
                self.state.regs[lane][r.index as usize] = v;
            }
        }
    }

    fn set64(&mut self, lane: usize, op: &Operand, v: f64) {
        let bits = v.to_bits();
        if let Operand::Reg(r) = op {
            if !r.is_zero() {
                self.state.regs[lane][r.index as usize] = bits as u32;
                self.state.regs[lane][r.index as usize + 1] = (bits >> 32) as u32;
            }
        }
    }

    fn guard_passes(&self, lane: usize, inst: &Instruction) -> bool {
        inst.guard.is_none_or(|g| self.state.preds[lane][g.pred as usize] != g.negated)
    }

    fn address(&self, lane: usize, inst: &Instruction) -> u64 {
        let (base, offset) = inst.mem_operand().expect("memory instruction");
        self.state.reg(lane, base.index) as u64 + offset as u64
    }

    fn memory(&mut self, shared: bool) -> (&mut Vec<u8>, &'static str) {
        if shared {
            (&mut self.state.shared, "shared")
        } else {
            (&mut self.state.global, "global")
        }
    }

    /// Applies a completed memory operation: sources and addresses are read now.
    fn complete(&mut self, op: &InFlight) -> Result<(), ExecError> {
        let inst = self.code[op.pc];
        let shared = matches!(inst.opcode, Opcode::Lds | Opcode::Sts);
        for lane in (0..WARP_SIZE).filter(|l| op.lanes & lane_bit(*l) != 0) {
            let addr = self.address(lane, inst);
            let line = inst.line;
            match inst.opcode {
                Opcode::Ldg | Opcode::Lds => {
                    let (mem, space) = self.memory(shared);
                    let v = load(mem, addr).ok_or(ExecError::OutOfBounds { space, addr, size: mem.len(), line })?;
                    self.set(lane, &inst.operands[0], v);
                }
                Opcode::Stg | Opcode::Sts => {
                    let v = self.value(lane, &inst.operands[1]);
                    let (mem, space) = self.memory(shared);
                    let size = mem.len();
                    store(mem, addr, v).ok_or(ExecError::OutOfBounds { space, addr, size, line })?;
                }
                _ => unreachable!("only memory instructions are in flight"),
            }
        }
        Ok(())
    }

    /// Retires every in-flight operation finishing at or before the clock.
    fn retire(&mut self) -> Result<(), ExecError> {
        loop {
            let next = self
                .in_flight
                .iter()
                .enumerate()
                .filter(|(_, f)| f.done <= self.clock)
                .min_by_key(|(_, f)| (f.done, f.seq))
                .map(|(i, _)| i);
            let Some(i) = next else { return Ok(()) };
            let op = self.in_flight.swap_remove(i);
            self.complete(&op)?;
        }
    }

    fn wait_for(&mut self, pred: impl Fn(&InFlight) -> bool) -> Result<(), ExecError> {
        if let Some(t) = self.in_flight.iter().filter(|f| pred(f)).map(|f| f.done).max() {
            self.clock = self.clock.max(t);
        }
        self.retire()
    }

    fn exec_sync(&mut self, lane: usize, inst: &Instruction) {
        let ops = &inst.operands;
        let f32_of = |m: &Self, o| f32::from_bits(m.value(lane, o));
        match inst.opcode {
            Opcode::Mov | Opcode::S2r => {
                let v = self.value(lane, &ops[1]);
                self.set(lane, &ops[0], v);
            }
            Opcode::Iadd => {
                let v = self.value(lane, &ops[1]).wrapping_add(self.value(lane, &ops[2]));
                self.set(lane, &ops[0], v);
            }
            Opcode::Imul => {
                let v = self.value(lane, &ops[1]).wrapping_mul(self.value(lane, &ops[2]));
                self.set(lane, &ops[0], v);
            }
            Opcode::Shl => {
                let v = self.value(lane, &ops[1]).wrapping_shl(self.value(lane, &ops[2]) & 31);
                self.set(lane, &ops[0], v);
            }
            Opcode::Isetp(c) => {
                let a = self.value(lane, &ops[1]) as i32;
                let b = self.value(lane, &ops[2]) as i32;
                if let Operand::Pred(p) = ops[0] {
                    self.state.preds[lane][p as usize] = c.eval(a, b);
                }
            }
            Opcode::Fadd => {
                let v = f32_of(self, &ops[1]) + f32_of(self, &ops[2]);
                self.set(lane, &ops[0], v.to_bits());
            }
            Opcode::Fmul => {
                let v = f32_of(self, &ops[1]) * f32_of(self, &ops[2]);
                self.set(lane, &ops[0], v.to_bits());
            }
            Opcode::Ffma => {
                let v = f32_of(self, &ops[1]) * f32_of(self, &ops[2]) + f32_of(self, &ops[3]);
                self.set(lane, &ops[0], v.to_bits());
            }
            Opcode::Dadd => {
                let v = self.value64(lane, &ops[1]) + self.value64(lane, &ops[2]);
                self.set64(lane, &ops[0], v);
            }
            Opcode::Dmul => {
                let v = self.value64(lane, &ops[1]) * self.value64(lane, &ops[2]);
                self.set64(lane, &ops[0], v);
            }
            Opcode::Nop | Opcode::Bra | Opcode::Exit => {}
            Opcode::Ldg | Opcode::Stg | Opcode::Lds | Opcode::Sts => unreachable!("memory operations are asynchronous"),
        }
    }
}

fn load(mem: &[u8], addr: u64) -> Option<u32> {
    let a = usize::try_from(addr).ok()?;
    let bytes = mem.get(a..a.checked_add(4)?)?;
    Some(u32::from_le_bytes(bytes.try_into().ok()?))
}

fn store(mem: &mut [u8], addr: u64, v: u32) -> Option<()> {
    let a = usize::try_from(addr).ok()?;
    mem.get_mut(a..a.checked_add(4)?)?.copy_from_slice(&v.to_le_bytes());
    Some(())
}

/// Runs one warp of `k` to completion.
///
/// Lanes follow their own program counters; at each step the lanes at the
/// lowest counter issue together, which reconverges structured branches.
/// Arithmetic completes at issue. Memory operations complete after their
/// class latency, reading their sources and writing their destination at that
/// point, so a consumer that skips the barrier wait observes stale data.
/// Waiting on a barrier advances the clock to the completion of every
/// operation that set it; jumps and the end of the program drain everything.
pub fn execute(k: &Kernel, global: &[u8], config: &ExecConfig) -> Result<WarpState, ExecError> {
    if config.tid_base + WARP_SIZE as u32 > k.block_dim {
        return Err(ExecError::ThreadRange { tid_base: config.tid_base, block_dim: k.block_dim });
    }
    let mut code = Vec::new();
    let mut labels = HashMap::new();
    for item in &k.body {
        match item {
            Item::Label(l) => {
                labels.insert(l.as_str(), code.len());
            }
            Item::Instr(i) => code.push(i),
            Item::Comment(_) => {}
        }
    }
    let mut targets = vec![None; code.len()];
    for (pc, inst) in code.iter().enumerate() {
        if let Some(l) = inst.branch_target() {
            targets[pc] = Some(*labels.get(l).ok_or_else(|| ExecError::UnknownLabel(l.to_string()))?);
        }
    }

    let mut m = Machine {
        code,
        state: WarpState {
            regs: vec![[0; 256]; WARP_SIZE],
            preds: vec![[false; NUM_PREDS]; WARP_SIZE],
            shared: vec![0; (k.static_shared + k.dynamic_shared) as usize],
            global: global.to_vec(),
            cycles: 0,
            issued: 0,
            class_counts: BTreeMap::new(),
        },
        in_flight: Vec::new(),
        seq: 0,
        clock: 0,
        tid_base: config.tid_base,
        ctaid: config.ctaid,
    };
    let mut pcs = [0usize; WARP_SIZE];
    let mut alive = [true; WARP_SIZE];
    let table = &config.latency;

    loop {
        let Some(pc) = (0..WARP_SIZE).filter(|l| alive[*l]).map(|l| pcs[l]).min() else { break };
        if pc >= m.code.len() {
            for l in 0..WARP_SIZE {
                alive[l] &= pcs[l] < m.code.len();
            }
            continue;
        }
        if m.state.issued >= config.fuel {
            return Err(ExecError::FuelExhausted(m.state.issued));
        }
        let here: Vec<usize> = (0..WARP_SIZE).filter(|l| alive[*l] && pcs[*l] == pc).collect();
        let inst = m.code[pc];
        let wait = inst.control.wait;
        m.wait_for(|f| f.barriers.iter().any(|b| wait.contains(b)))?;
        if inst.opcode.is_jump() {
            m.wait_for(|_| true)?;
        }
        let taken: Vec<usize> = here.iter().copied().filter(|l| m.guard_passes(*l, inst)).collect();
        let class = InstrClass::of(inst.opcode);
        if class.is_variable_latency() {
            if !taken.is_empty() {
                let lanes = taken.iter().fold(0u32, |acc, l| acc | lane_bit(*l));
                m.in_flight.push(InFlight {
                    done: m.clock + table.latency(inst.opcode) as u64,
                    seq: m.seq,
                    pc,
                    lanes,
                    barriers: inst.control.sets(),
                });
                m.seq += 1;
            }
        } else {
            for &l in &taken {
                m.exec_sync(l, inst);
            }
        }
        for &l in &here {
            let took = taken.contains(&l);
            match inst.opcode {
                Opcode::Bra if took => pcs[l] = targets[pc].expect("resolved"),
                Opcode::Exit if took => alive[l] = false,
                _ => pcs[l] = pc + 1,
            }
        }
        m.state.issued += 1;
        *m.state.class_counts.entry(class).or_insert(0) += 1;
        m.clock += inst.control.stall as u64;
    }
    m.wait_for(|_| true)?;
    m.state.cycles = m.clock;
    Ok(m.state)
}
