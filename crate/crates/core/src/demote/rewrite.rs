//! One demotion sweep: renames a register to the value register and inserts
//! the shared-memory loads and stores around its accesses.

use crate::asm::{
    BarrierSet, ControlInfo, NUM_BARRIERS, InstrClass, Instruction, Item, LatencyTable, Opcode, Operand, RegisterRef,
};
use crate::flow::BarrierTracker;

/// Stall assigned to inserted loads and stores.
pub const INSERTED_STALL: u8 = 1;

pub(crate) struct Sweep<'a> {
    pub table: &'a LatencyTable,
    pub rda: RegisterRef,
    pub rdv: RegisterRef,
    /// Register being demoted and the slot offset of each of its words.
    pub reg: RegisterRef,
    pub offsets: Vec<u32>,
}

fn is_async(inst: &Instruction) -> bool {
    InstrClass::of(inst.opcode).is_variable_latency()
}

impl Sweep<'_> {
    fn in_reg(&self, w: u8) -> bool {
        self.reg.words().any(|x| x == w)
    }

    fn writes_rdv(&self, inst: &Instruction) -> bool {
        self.rdv.words().any(|w| inst.writes_word(w))
    }

    fn reads_rdv(&self, inst: &Instruction) -> bool {
        self.rdv.words().any(|w| inst.reads_word(w))
    }

    fn rename(&self, inst: &mut Instruction) {
        let (reg, rdv) = (self.reg, self.rdv);
        inst.map_regs(|x| {
            if x.index >= reg.index && x.index < reg.index + reg.width {
                RegisterRef { index: rdv.index + (x.index - reg.index), width: x.width }
            } else {
                x
            }
        });
    }

    /// Barriers set or awaited by original instructions from `from` up to and
    /// including the next one that will wait for the value register (a jump, a
    /// writer of the value register, or an access of the demoted register).
    fn lookahead_barriers(&self, body: &[Item], from: usize) -> BarrierSet {
        let mut acc = BarrierSet::EMPTY;
        for item in &body[from..] {
            let Some(inst) = item.as_instr() else { continue };
            acc = acc.union(inst.control.sets()).union(inst.control.wait);
            if inst.opcode.is_jump() || self.writes_rdv(inst) || inst.words().iter().any(|w| self.in_reg(*w)) {
                break;
            }
        }
        acc
    }

    /// Barriers set or awaited by the first instruction at or after `from`.
    fn next_barriers(body: &[Item], from: usize) -> BarrierSet {
        body[from..].iter().find_map(Item::as_instr).map_or(BarrierSet::EMPTY, |i| i.control.sets().union(i.control.wait))
    }

    fn access(&self, opcode: Opcode, word: usize, guard: Option<crate::asm::Guard>) -> Instruction {
        let v = Operand::Reg(RegisterRef::single(self.rdv.index + word as u8));
        let m = Operand::Mem { base: self.rda, offset: self.offsets[word] };
        let ops = if opcode == Opcode::Lds { vec![v, m] } else { vec![m, v] };
        let mut i = Instruction::new(opcode, ops, ControlInfo::with_stall(INSERTED_STALL));
        i.guard = guard;
        i
    }

    pub fn run(&self, body: &[Item]) -> Vec<Item> {
        let mut st = State { out: Vec::with_capacity(body.len() + 8), ..State::default() };
        for (idx, item) in body.iter().enumerate() {
            let orig = match item {
                Item::Instr(i) => i,
                Item::Label(_) => {
                    st.tracker.reset();
                    st.out.push(item.clone());
                    continue;
                }
                Item::Comment(_) => {
                    st.out.push(item.clone());
                    continue;
                }
            };
            let mut inst = orig.clone();
            if inst.opcode.is_jump() {
                st.tracker.reset();
            }
            let used: Vec<usize> = self.reg.words().enumerate().filter(|(_, w)| inst.reads_word(*w)).map(|(k, _)| k).collect();
            let defined: Vec<usize> =
                self.reg.words().enumerate().filter(|(_, w)| inst.writes_word(*w)).map(|(k, _)| k).collect();
            if used.is_empty() && defined.is_empty() {
                st.prepare(self, &mut inst);
                st.push(self, inst);
                continue;
            }
            self.rename(&mut inst);

            // A demoted load before the use, waited on through both of its barriers.
            for &k in &used {
                let mut lds = self.access(Opcode::Lds, k, inst.guard);
                st.prepare(self, &mut lds);
                let mut exclude = lds.control.wait.union(inst.control.wait).union(inst.control.sets());
                let rb = st.tracker.get_barrier(exclude, self.table);
                exclude.insert(rb);
                let wb = st.tracker.get_barrier(exclude, self.table);
                lds.control.read_barrier = Some(rb);
                lds.control.write_barrier = Some(wb);
                inst.control.wait.insert(rb);
                inst.control.wait.insert(wb);
                st.push(self, lds);
            }

            st.prepare(self, &mut inst);
            if !defined.is_empty() && is_async(&inst) && inst.control.write_barrier.is_none() {
                let exclude = inst.control.wait.union(inst.control.sets());
                inst.control.write_barrier = Some(st.tracker.get_barrier(exclude, self.table));
            }
            if !used.is_empty() && is_async(&inst) && self.reads_rdv(&inst) && inst.control.read_barrier.is_none() {
                let own = inst.control.wait.union(inst.control.sets());
                let exclude = own.union(self.lookahead_barriers(body, idx + 1));
                if exclude.len() < NUM_BARRIERS as usize {
                    inst.control.read_barrier = Some(st.tracker.get_barrier(exclude, self.table));
                } else {
                    // Every barrier is taken before the value register is rewritten:
                    // the next instruction waits instead.
                    let rb = st.tracker.get_barrier(own.union(Self::next_barriers(body, idx + 1)), self.table);
                    inst.control.read_barrier = Some(rb);
                    st.pending_next.insert(rb);
                }
            }
            let (guard, def_wb) = (inst.guard, inst.control.write_barrier);
            st.push(self, inst);

            // A demoted store after the definition; the next instruction waits
            // until the store has read the value register.
            let mut next_wait = BarrierSet::EMPTY;
            for &k in &defined {
                let mut sts = self.access(Opcode::Sts, k, guard);
                if let Some(b) = def_wb {
                    sts.control.wait.insert(b);
                }
                let exclude = sts.control.wait.union(Self::next_barriers(body, idx + 1)).union(next_wait);
                let rb = st.tracker.get_barrier(exclude, self.table);
                sts.control.read_barrier = Some(rb);
                next_wait.insert(rb);
                st.push(self, sts);
            }
            st.pending_next = st.pending_next.union(next_wait);
        }
        st.out
    }
}

#[derive(Default)]
struct State {
    out: Vec<Item>,
    tracker: BarrierTracker,
    /// Waits owed by the next instruction.
    pending_next: BarrierSet,
    /// Read barriers of in-flight instructions that read the value register.
    rdv_readers: BarrierSet,
}

impl State {
    /// Adds the waits an instruction owes before it issues.
    fn prepare(&mut self, sweep: &Sweep, inst: &mut Instruction) {
        inst.control.wait = inst.control.wait.union(self.pending_next);
        self.pending_next = BarrierSet::EMPTY;
        if inst.opcode.is_jump() || sweep.writes_rdv(inst) {
            inst.control.wait = inst.control.wait.union(self.rdv_readers);
        }
        // Never wait on a barrier the instruction itself sets.
        for b in inst.control.sets().iter() {
            inst.control.wait.remove(b);
        }
    }

    fn push(&mut self, sweep: &Sweep, inst: Instruction) {
        self.tracker.update(&inst);
        for b in inst.control.wait.iter() {
            self.rdv_readers.remove(b);
        }
        if is_async(&inst) && sweep.reads_rdv(&inst) {
            if let Some(rb) = inst.control.read_barrier {
                self.rdv_readers.insert(rb);
            }
        }
        if inst.opcode.is_jump() {
            self.rdv_readers = BarrierSet::EMPTY;
        }
        self.out.push(Item::Instr(inst));
    }
}
