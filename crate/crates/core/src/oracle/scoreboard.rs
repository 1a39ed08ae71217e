//! Static barrier checking over the linear instruction stream.
//!
//! Execution between two jumps is a contiguous run of the body, so the walk
//! resets its state after every `BRA`/`EXIT` and carries it across labels.

use serde::Serialize;

use crate::asm::{Barrier, BarrierSet, InstrClass, Item, Kernel, LatencyTable, NUM_BARRIERS};

// Counters indexed by barrier number; entry 0 is unused.
const SLOTS: usize = NUM_BARRIERS as usize + 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum HazardKind {
    /// Reads a register an in-flight operation will still write.
    ReadAfterWrite,
    /// Writes a register an in-flight operation has not read yet.
    WriteAfterRead,
    /// Writes a register an in-flight operation will still write.
    WriteAfterWrite,
    /// A barrier is set but never waited on before the next jump or the end.
    UnclearedBarrier,
    /// An instruction waits on a barrier it sets itself.
    SelfWait,
    /// Read and write barriers are the same.
    SharedBarrier,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Hazard {
    pub kind: HazardKind,
    /// Index into the kernel body.
    pub item: usize,
    pub line: usize,
    pub register: Option<u8>,
    pub barrier: Option<u8>,
}

struct InFlight {
    done: u64,
    barriers: BarrierSet,
    reads: Vec<u8>,
    writes: Vec<u8>,
}

/// Walks the body tracking in-flight memory operations with the given
/// latencies and reports every register hazard and barrier misuse.
///
/// A wait advances time to the completion of every operation that set the
/// barrier; operations complete `latency` cycles after issue and access their
/// registers at completion.
pub fn scoreboard_check(k: &Kernel, table: &LatencyTable) -> Vec<Hazard> {
    let mut hazards = Vec::new();
    let mut in_flight: Vec<InFlight> = Vec::new();
    let mut counts = [0u32; SLOTS];
    let mut now = 0u64;
    let mut last = (0, 0);
    let hazard = |kind, item, line, register, barrier| Hazard { kind, item, line, register, barrier };

    for (idx, item) in k.body.iter().enumerate() {
        let Item::Instr(inst) = item else { continue };
        let line = inst.line;
        last = (idx, line);
        let c = &inst.control;
        if c.read_barrier.is_some() && c.read_barrier == c.write_barrier {
            hazards.push(hazard(HazardKind::SharedBarrier, idx, line, None, c.read_barrier.map(Barrier::index)));
        }
        for b in c.wait.iter() {
            if c.sets().contains(b) {
                hazards.push(hazard(HazardKind::SelfWait, idx, line, None, Some(b.index())));
            }
            let slot = &mut counts[b.index() as usize];
            *slot = slot.saturating_sub(1);
            if let Some(t) = in_flight.iter().filter(|f| f.barriers.contains(b)).map(|f| f.done).max() {
                now = now.max(t);
            }
            in_flight.retain(|f| !f.barriers.contains(b));
        }
        in_flight.retain(|f| f.done > now);

        for w in inst.src_words() {
            if in_flight.iter().any(|f| f.writes.contains(&w)) {
                hazards.push(hazard(HazardKind::ReadAfterWrite, idx, line, Some(w), None));
            }
        }
        for w in inst.dest_words() {
            if in_flight.iter().any(|f| f.reads.contains(&w)) {
                hazards.push(hazard(HazardKind::WriteAfterRead, idx, line, Some(w), None));
            }
            if in_flight.iter().any(|f| f.writes.contains(&w)) {
                hazards.push(hazard(HazardKind::WriteAfterWrite, idx, line, Some(w), None));
            }
        }
        for b in c.sets().iter() {
            counts[b.index() as usize] += 1;
        }
        if InstrClass::of(inst.opcode).is_variable_latency() {
            in_flight.push(InFlight {
                done: now + table.latency(inst.opcode) as u64,
                barriers: c.sets(),
                reads: inst.src_words(),
                writes: inst.dest_words(),
            });
        }
        now += c.stall as u64;
        if inst.opcode.is_jump() {
            flush_counts(&mut counts, &mut hazards, idx, line);
            in_flight.clear();
        }
    }
    flush_counts(&mut counts, &mut hazards, last.0, last.1);
    hazards
}

fn flush_counts(counts: &mut [u32], hazards: &mut Vec<Hazard>, item: usize, line: usize) {
    for (b, n) in counts.iter_mut().enumerate() {
        if *n > 0 {
            hazards.push(Hazard {
                kind: HazardKind::UnclearedBarrier,
                item,
                line,
                register: None,
                barrier: Some(b as u8),
            });
        }
        *n = 0;
    }
}

/// Barrier indices still unmatched when the instruction at body index `at`
/// issues, before its own waits are applied.
pub fn outstanding_barriers(k: &Kernel, at: usize) -> BarrierSet {
    let mut counts = [0u32; SLOTS];
    for item in &k.body[..at] {
        let Item::Instr(inst) = item else { continue };
        for b in inst.control.wait.iter() {
            let slot = &mut counts[b.index() as usize];
            *slot = slot.saturating_sub(1);
        }
        for b in inst.control.sets().iter() {
            counts[b.index() as usize] += 1;
        }
        if inst.opcode.is_jump() {
            counts = [0; SLOTS];
        }
    }
    Barrier::all().filter(|b| counts[b.index() as usize] > 0).collect()
}

/// Drops waits on barriers with nothing outstanding. Such waits can never
/// stall: every operation that set the barrier was already waited on.
pub fn normalize_waits(k: &Kernel) -> Kernel {
    let mut out = k.clone();
    let mut counts = [0u32; SLOTS];
    for item in &mut out.body {
        let Some(inst) = item.as_instr_mut() else { continue };
        let mut kept = BarrierSet::EMPTY;
        for b in inst.control.wait.iter() {
            let slot = &mut counts[b.index() as usize];
            if *slot > 0 {
                *slot -= 1;
                kept.insert(b);
            }
        }
        inst.control.wait = kept;
        for b in inst.control.sets().iter() {
            counts[b.index() as usize] += 1;
        }
        if inst.opcode.is_jump() {
            counts = [0; SLOTS];
        }
    }
    out
}
