//! The SASS-like assembly dialect: register and operand model, control
//! annotations, kernels, and the textual parser/printer.

mod class;
mod parse;
mod print;

pub use class::{instruction_class, ClassInfo, InstrClass, LatencyTable};
pub use parse::{parse_kernel, ParseError, ParseErrorKind};
pub use print::print_kernel;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Index of the zero register `RZ`.
pub const RZ_INDEX: u8 = 255;
/// Number of instruction barriers.
pub const NUM_BARRIERS: u8 = 6;
/// Number of register-file banks.
pub const REG_BANKS: u8 = 4;

/// A general-purpose register operand, possibly a 64-bit aligned pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RegisterRef {
    pub index: u8,
    /// Word count: 1 for 32-bit, 2 for a 64-bit pair (`index`, `index + 1`).
    pub width: u8,
}

impl RegisterRef {
    pub const fn single(index: u8) -> Self {
        RegisterRef { index, width: 1 }
    }

    pub const fn pair(index: u8) -> Self {
        RegisterRef { index, width: 2 }
    }

    pub const fn zero() -> Self {
        RegisterRef { index: RZ_INDEX, width: 1 }
    }

    pub fn is_zero(&self) -> bool {
        self.index == RZ_INDEX
    }

    /// Physical word indices covered by this operand (empty for RZ).
    pub fn words(&self) -> impl Iterator<Item = u8> {
        let (start, n) = if self.is_zero() { (0, 0) } else { (self.index, self.width) };
        (0..n).map(move |k| start + k)
    }

    pub fn bank(&self) -> u8 {
        bank_of(self.index)
    }
}

pub fn bank_of(index: u8) -> u8 {
    index % REG_BANKS
}

impl fmt::Display for RegisterRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            write!(f, "RZ")
        } else {
            write!(f, "R{}", self.index)
        }
    }
}

/// Instruction barrier index in `1..=6`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Barrier(u8);

impl Barrier {
    pub fn new(index: u8) -> Option<Self> {
        (1..=NUM_BARRIERS).contains(&index).then_some(Barrier(index))
    }

    pub fn index(self) -> u8 {
        self.0
    }

    pub fn all() -> impl Iterator<Item = Barrier> {
        (1..=NUM_BARRIERS).map(Barrier)
    }
}

/// A subset of the six barriers, stored as a bitmask.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct BarrierSet(u8);

impl BarrierSet {
    pub const EMPTY: BarrierSet = BarrierSet(0);

    pub fn contains(self, b: Barrier) -> bool {
        self.0 & (1 << b.0) != 0
    }

    pub fn insert(&mut self, b: Barrier) {
        self.0 |= 1 << b.0;
    }

    pub fn remove(&mut self, b: Barrier) {
        self.0 &= !(1 << b.0);
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn union(self, other: BarrierSet) -> BarrierSet {
        BarrierSet(self.0 | other.0)
    }

    pub fn iter(self) -> impl Iterator<Item = Barrier> {
        Barrier::all().filter(move |b| self.contains(*b))
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }
}

impl FromIterator<Barrier> for BarrierSet {
    fn from_iter<T: IntoIterator<Item = Barrier>>(iter: T) -> Self {
        let mut s = BarrierSet::EMPTY;
        for b in iter {
            s.insert(b);
        }
        s
    }
}

/// Scheduling annotation attached to every instruction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct ControlInfo {
    pub stall: u8,
    pub read_barrier: Option<Barrier>,
    pub write_barrier: Option<Barrier>,
    pub wait: BarrierSet,
    pub yield_flag: bool,
}

impl ControlInfo {
    pub fn with_stall(stall: u8) -> Self {
        ControlInfo { stall, ..Default::default() }
    }

    /// Barriers this instruction sets.
    pub fn sets(&self) -> BarrierSet {
        self.read_barrier.into_iter().chain(self.write_barrier).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl CmpOp {
    pub fn mnemonic(self) -> &'static str {
        match self {
            CmpOp::Lt => "LT",
            CmpOp::Le => "LE",
            CmpOp::Gt => "GT",
            CmpOp::Ge => "GE",
            CmpOp::Eq => "EQ",
            CmpOp::Ne => "NE",
        }
    }

    pub fn eval(self, a: i32, b: i32) -> bool {
        match self {
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Gt => a > b,
            CmpOp::Ge => a >= b,
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Opcode {
    Mov,
    Iadd,
    Imul,
    Shl,
    Isetp(CmpOp),
    Fadd,
    Fmul,
    Ffma,
    Dadd,
    Dmul,
    S2r,
    Ldg,
    Stg,
    Lds,
    Sts,
    Bra,
    Exit,
    Nop,
}

impl Opcode {
    pub fn mnemonic(self) -> String {
        match self {
            Opcode::Isetp(c) => format!("ISETP.{}", c.mnemonic()),
            other => other.base_mnemonic().to_string(),
        }
    }

    fn base_mnemonic(self) -> &'static str {
        match self {
            Opcode::Mov => "MOV",
            Opcode::Iadd => "IADD",
            Opcode::Imul => "IMUL",
            Opcode::Shl => "SHL",
            Opcode::Isetp(_) => "ISETP",
            Opcode::Fadd => "FADD",
            Opcode::Fmul => "FMUL",
            Opcode::Ffma => "FFMA",
            Opcode::Dadd => "DADD",
            Opcode::Dmul => "DMUL",
            Opcode::S2r => "S2R",
            Opcode::Ldg => "LDG",
            Opcode::Stg => "STG",
            Opcode::Lds => "LDS",
            Opcode::Sts => "STS",
            Opcode::Bra => "BRA",
            Opcode::Exit => "EXIT",
            Opcode::Nop => "NOP",
        }
    }

    /// Register operand width implied by the opcode.
    pub fn reg_width(self) -> u8 {
        match self {
            Opcode::Dadd | Opcode::Dmul => 2,
            _ => 1,
        }
    }

    /// Whether operand 0 is a general-register destination.
    pub fn writes_reg(self) -> bool {
        matches!(
            self,
            Opcode::Mov
                | Opcode::Iadd
                | Opcode::Imul
                | Opcode::Shl
                | Opcode::Fadd
                | Opcode::Fmul
                | Opcode::Ffma
                | Opcode::Dadd
                | Opcode::Dmul
                | Opcode::S2r
                | Opcode::Ldg
                | Opcode::Lds
        )
    }

    pub fn is_jump(self) -> bool {
        matches!(self, Opcode::Bra | Opcode::Exit)
    }

    pub fn is_memory(self) -> bool {
        matches!(self, Opcode::Ldg | Opcode::Stg | Opcode::Lds | Opcode::Sts)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SpecialReg {
    TidX,
    CtaidX,
}

impl SpecialReg {
    pub fn name(self) -> &'static str {
        match self {
            SpecialReg::TidX => "SR_TID.X",
            SpecialReg::CtaidX => "SR_CTAID.X",
        }
    }
}

/// Immediate value; the radix is kept so printing reproduces the source.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Imm {
    pub value: i64,
    pub hex: bool,
}

impl Imm {
    pub fn hex(value: u32) -> Self {
        Imm { value: value as i64, hex: true }
    }

    pub fn dec(value: i64) -> Self {
        Imm { value, hex: false }
    }

    pub fn bits(self) -> u32 {
        self.value as u32
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Operand {
    Reg(RegisterRef),
    Pred(u8),
    Imm(Imm),
    Mem { base: RegisterRef, offset: u32 },
    Special(SpecialReg),
    Label(String),
}

/// Predicate guard `@P<n>` or `@!P<n>`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Guard {
    pub pred: u8,
    pub negated: bool,
}

#[derive(Clone, Debug)]
pub struct Instruction {
    pub control: ControlInfo,
    pub guard: Option<Guard>,
    pub opcode: Opcode,
    pub operands: Vec<Operand>,
    /// Source line (1-based), 0 for synthesized instructions.
    pub line: usize,
    pub comment: Option<String>,
}

// Structural equality: source positions do not participate.
impl PartialEq for Instruction {
    fn eq(&self, other: &Self) -> bool {
        self.control == other.control
            && self.guard == other.guard
            && self.opcode == other.opcode
            && self.operands == other.operands
            && self.comment == other.comment
    }
}

impl Eq for Instruction {}

impl Instruction {
    pub fn new(opcode: Opcode, operands: Vec<Operand>, control: ControlInfo) -> Self {
        Instruction { control, guard: None, opcode, operands, line: 0, comment: None }
    }

    /// Register destination (operand 0), if the opcode writes one.
    pub fn dest(&self) -> Option<RegisterRef> {
        if !self.opcode.writes_reg() {
            return None;
        }
        match self.operands.first() {
            Some(Operand::Reg(r)) if !r.is_zero() => Some(*r),
            _ => None,
        }
    }

    /// Predicate written by ISETP.
    pub fn dest_pred(&self) -> Option<u8> {
        match (self.opcode, self.operands.first()) {
            (Opcode::Isetp(_), Some(Operand::Pred(p))) => Some(*p),
            _ => None,
        }
    }

    /// Register operands read by the instruction (memory bases included, RZ excluded).
    pub fn src_regs(&self) -> Vec<RegisterRef> {
        let skip = usize::from(self.opcode.writes_reg() || matches!(self.opcode, Opcode::Isetp(_)));
        let mut out = Vec::new();
        for (i, op) in self.operands.iter().enumerate() {
            match op {
                Operand::Reg(r) if i >= skip && !r.is_zero() => out.push(*r),
                Operand::Mem { base, .. } if !base.is_zero() => out.push(*base),
                _ => {}
            }
        }
        out
    }

    /// Word indices written.
    pub fn dest_words(&self) -> Vec<u8> {
        self.dest().map(|r| r.words().collect()).unwrap_or_default()
    }

    /// Word indices read.
    pub fn src_words(&self) -> Vec<u8> {
        self.src_regs().iter().flat_map(|r| r.words()).collect()
    }

    /// Every general-register operand (destination, sources, memory bases), RZ excluded.
    pub fn reg_operands(&self) -> Vec<RegisterRef> {
        let mut out = Vec::new();
        for op in &self.operands {
            match op {
                Operand::Reg(r) if !r.is_zero() => out.push(*r),
                Operand::Mem { base, .. } if !base.is_zero() => out.push(*base),
                _ => {}
            }
        }
        out
    }

    pub fn words(&self) -> BTreeSet<u8> {
        self.reg_operands().iter().flat_map(|r| r.words()).collect()
    }

    pub fn reads_word(&self, w: u8) -> bool {
        self.src_regs().iter().any(|r| r.words().any(|x| x == w))
    }

    pub fn writes_word(&self, w: u8) -> bool {
        self.dest().is_some_and(|r| r.words().any(|x| x == w))
    }

    pub fn touches_word(&self, w: u8) -> bool {
        self.reads_word(w) || self.writes_word(w)
    }

    /// Predicates read (guard and nothing else in this dialect).
    pub fn pred_reads(&self) -> Option<u8> {
        self.guard.map(|g| g.pred)
    }

    pub fn mem_operand(&self) -> Option<(RegisterRef, u32)> {
        self.operands.iter().find_map(|op| match op {
            Operand::Mem { base, offset } => Some((*base, *offset)),
            _ => None,
        })
    }

    pub fn branch_target(&self) -> Option<&str> {
        match (self.opcode, self.operands.first()) {
            (Opcode::Bra, Some(Operand::Label(l))) => Some(l),
            _ => None,
        }
    }

    /// Applies `f` to every general-register operand in place.
    pub fn map_regs(&mut self, mut f: impl FnMut(RegisterRef) -> RegisterRef) {
        for op in &mut self.operands {
            match op {
                Operand::Reg(r) if !r.is_zero() => *r = f(*r),
                Operand::Mem { base, .. } if !base.is_zero() => *base = f(*base),
                _ => {}
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Item {
    Label(String),
    Instr(Instruction),
    Comment(String),
}

impl Item {
    pub fn as_instr(&self) -> Option<&Instruction> {
        match self {
            Item::Instr(i) => Some(i),
            _ => None,
        }
    }

    pub fn as_instr_mut(&mut self) -> Option<&mut Instruction> {
        match self {
            Item::Instr(i) => Some(i),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Kernel {
    pub name: String,
    pub block_dim: u32,
    pub static_shared: u32,
    pub dynamic_shared: u32,
    pub body: Vec<Item>,
}

impl Kernel {
    pub fn new(name: impl Into<String>, block_dim: u32) -> Self {
        Kernel {
            name: name.into(),
            block_dim,
            static_shared: 0,
            dynamic_shared: 0,
            body: Vec::new(),
        }
    }

    pub fn instructions(&self) -> impl Iterator<Item = &Instruction> {
        self.body.iter().filter_map(Item::as_instr)
    }

    pub fn instructions_mut(&mut self) -> impl Iterator<Item = &mut Instruction> {
        self.body.iter_mut().filter_map(Item::as_instr_mut)
    }

    /// Architectural register count: one past the highest register word referenced.
    pub fn reg_count(&self) -> u32 {
        self.instructions()
            .flat_map(|i| i.reg_operands())
            .map(|r| r.index as u32 + r.width as u32)
            .max()
            .unwrap_or(0)
    }

    /// Register words referenced anywhere in the body.
    pub fn used_words(&self) -> BTreeSet<u8> {
        self.instructions().flat_map(|i| i.words()).collect()
    }

    /// Total shared memory per block.
    pub fn shared_bytes(&self) -> u32 {
        self.static_shared + self.dynamic_shared
    }

    pub fn instruction_count(&self) -> usize {
        self.instructions().count()
    }
}
