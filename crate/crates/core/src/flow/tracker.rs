use crate::asm::{Barrier, BarrierSet, InstrClass, Instruction, LatencyTable, NUM_BARRIERS};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrackerEntry {
    /// Class of the last instruction that set the barrier.
    pub class: InstrClass,
    /// Source line of the setter (0 for synthesized instructions).
    pub line: usize,
    /// Stall cycles accumulated since the setter issued.
    pub elapsed: u32,
}

/// Last setter and elapsed stall per barrier.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BarrierTracker {
    entries: [Option<TrackerEntry>; NUM_BARRIERS as usize],
}

impl BarrierTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reset(&mut self) {
        *self = Self::default();
    }

    pub fn entry(&self, b: Barrier) -> Option<&TrackerEntry> {
        self.entries[slot(b)].as_ref()
    }

    pub fn is_free(&self, b: Barrier) -> bool {
        self.entry(b).is_none()
    }

    /// Records `inst`: its barriers restart at zero, every entry advances by
    /// its stall, waited barriers become free, and a jump clears everything.
    pub fn update(&mut self, inst: &Instruction) {
        let class = InstrClass::of(inst.opcode);
        for b in inst.control.sets().iter() {
            self.entries[slot(b)] = Some(TrackerEntry { class, line: inst.line, elapsed: 0 });
        }
        for e in self.entries.iter_mut().flatten() {
            e.elapsed += inst.control.stall as u32;
        }
        for b in inst.control.wait.iter() {
            self.entries[slot(b)] = None;
        }
        if inst.opcode.is_jump() {
            self.reset();
        }
    }

    /// Cycles still outstanding on `b`, clamped at zero.
    pub fn remaining(&self, b: Barrier, table: &LatencyTable) -> u32 {
        self.entry(b)
            .map(|e| table.info(e.class).latency.saturating_sub(e.elapsed))
            .unwrap_or(0)
    }

    /// The lowest free barrier outside `exclude`, otherwise the one with the
    /// least remaining latency (lowest index on ties). When every barrier is
    /// excluded the exclusion is ignored.
    pub fn get_barrier(&self, exclude: BarrierSet, table: &LatencyTable) -> Barrier {
        let pick = |allowed: &dyn Fn(Barrier) -> bool| {
            if let Some(b) = Barrier::all().find(|b| allowed(*b) && self.is_free(*b)) {
                return Some(b);
            }
            Barrier::all().filter(|b| allowed(*b)).min_by_key(|b| (self.remaining(*b, table), b.index()))
        };
        pick(&|b| !exclude.contains(b)).or_else(|| pick(&|_| true)).expect("six barriers exist")
    }
}

fn slot(b: Barrier) -> usize {
    b.index() as usize - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::parse_kernel;

    fn insts(body: &str) -> Vec<Instruction> {
        parse_kernel(&format!(".kernel k\n.blockdim 32\n.shared 0\n{body}"))
            .unwrap()
            .instructions()
            .cloned()
            .collect()
    }

    fn b(i: u8) -> Barrier {
        Barrier::new(i).unwrap()
    }

    #[test]
    fn stall_advances_every_entry() {
        let v = insts("B--:-:W1:-:2 LDG R1, [R0+0x0] ;\nB--:-:-:-:6 MOV R2, 0 ;\n");
        let mut t = BarrierTracker::new();
        t.update(&v[0]);
        t.update(&v[1]);
        assert_eq!(t.entry(b(1)).unwrap().elapsed, 8);
    }

    #[test]
    fn wait_frees_entry() {
        let v = insts("B--:-:W2:-:1 LDS R1, [R0+0x0] ;\nB2:-:-:-:1 MOV R2, R1 ;\n");
        let mut t = BarrierTracker::new();
        t.update(&v[0]);
        assert!(!t.is_free(b(2)));
        t.update(&v[1]);
        assert!(t.is_free(b(2)));
    }

    #[test]
    fn jump_resets() {
        let v = insts("B--:-:W3:-:1 LDG R1, [R0+0x0] ;\nB--:-:-:-:1 @P0 BRA L ;\nL:\n");
        let mut t = BarrierTracker::new();
        t.update(&v[0]);
        t.update(&v[1]);
        assert_eq!(t, BarrierTracker::new());
        assert_eq!(t.get_barrier(BarrierSet::EMPTY, &LatencyTable::default()), b(1));
    }

    #[test]
    fn all_free_returns_lowest() {
        let t = BarrierTracker::new();
        assert_eq!(t.get_barrier(BarrierSet::EMPTY, &LatencyTable::default()), b(1));
        assert_eq!(t.get_barrier([b(1)].into_iter().collect(), &LatencyTable::default()), b(2));
    }

    #[test]
    fn least_remaining_latency_wins() {
        // Barrier 1: LDG with 150 elapsed (50 left). Barrier 2: LDS just issued (24 left).
        // Barriers 3..6: LDG just issued (200 left).
        let mut t = BarrierTracker::new();
        let entry = |class, elapsed| Some(TrackerEntry { class, line: 0, elapsed });
        t.entries = [
            entry(InstrClass::GlobalMemory, 150),
            entry(InstrClass::SharedMemory, 0),
            entry(InstrClass::GlobalMemory, 0),
            entry(InstrClass::GlobalMemory, 0),
            entry(InstrClass::GlobalMemory, 0),
            entry(InstrClass::GlobalMemory, 0),
        ];
        let table = LatencyTable::default();
        assert_eq!(t.remaining(b(1), &table), 50);
        assert_eq!(t.get_barrier(BarrierSet::EMPTY, &table), b(2));
        assert_eq!(t.get_barrier([b(2)].into_iter().collect(), &table), b(1));
    }

    #[test]
    fn remaining_clamps_at_zero() {
        let mut t = BarrierTracker::new();
        t.entries[0] = Some(TrackerEntry { class: InstrClass::SharedMemory, line: 0, elapsed: 30 });
        assert_eq!(t.remaining(b(1), &LatencyTable::default()), 0);
    }
}
