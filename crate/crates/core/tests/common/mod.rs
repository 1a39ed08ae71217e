//! Shared helpers for integration tests: fixture loading, a random kernel
//! generator and interpreter-based equivalence.

#![allow(dead_code)]

pub mod oracles;

use std::fmt::Write as _;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use shmspill::asm::{parse_kernel, Kernel, LatencyTable};
use shmspill::oracle::{execute, ExecConfig, ExecError, WarpState};

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures")
}

pub fn fixture_text(name: &str) -> String {
    std::fs::read_to_string(fixture_dir().join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn fixture(name: &str) -> Kernel {
    parse_kernel(&fixture_text(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

/// Every `.sass` fixture, sorted by file name.
pub fn all_fixtures() -> Vec<(String, String)> {
    let mut names: Vec<String> = std::fs::read_dir(fixture_dir())
        .unwrap()
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".sass"))
        .collect();
    names.sort();
    names.into_iter().map(|n| (n.clone(), fixture_text(&n))).collect()
}

/// Global memory image large enough for fixtures and generated kernels.
pub const GLOBAL_BYTES: usize = 0x20000;

pub fn global_image(seed: u64) -> Vec<u8> {
    let mut bytes = vec![0u8; GLOBAL_BYTES];
    ChaCha8Rng::seed_from_u64(seed).fill_bytes(&mut bytes);
    bytes
}

pub fn run_with(k: &Kernel, global: &[u8], latency: LatencyTable) -> Result<WarpState, ExecError> {
    execute(k, global, &ExecConfig { latency, ..ExecConfig::default() })
}

pub fn run(k: &Kernel, global: &[u8]) -> WarpState {
    run_with(k, global, LatencyTable::default()).unwrap_or_else(|e| panic!("{}: {e}", k.name))
}

/// Global memory and user shared memory after running both kernels agree.
pub fn same_observable(original: &Kernel, variant: &Kernel, global: &[u8]) -> bool {
    let a = run(original, global);
    let b = run(variant, global);
    a.observable(original.static_shared) == b.observable(original.static_shared)
}

#[derive(Clone, Debug)]
pub struct GenConfig {
    /// Data registers R2.. initialised up front.
    pub data_regs: std::ops::RangeInclusive<u8>,
    /// Random operations after initialisation.
    pub ops: std::ops::RangeInclusive<usize>,
    pub allow_loop: bool,
    pub allow_branch: bool,
    pub allow_fp64: bool,
    pub block_dim: u32,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            data_regs: 3..=8,
            ops: 2..=18,
            allow_loop: true,
            allow_branch: true,
            allow_fp64: true,
            block_dim: 64,
        }
    }
}

/// Input words are read from `[R1+0x80*j]`, results written to `OUT_BASE+0x80*j`.
const OUT_BASE: u32 = 0x1000;
const USER_SHARED: u32 = 128;

struct Pending {
    barrier: u8,
    /// Registers that may not be read or written until the wait.
    blocks_access: Vec<u8>,
    /// Registers that may not be written until the wait.
    blocks_write: Vec<u8>,
}

struct Emitter<'r> {
    rng: &'r mut ChaCha8Rng,
    lines: Vec<String>,
    pending: Vec<Pending>,
    count: usize,
}

impl Emitter<'_> {
    /// A barrier that is neither pending nor in `wait`. When all are taken,
    /// a `NOP` first absorbs `wait` plus the oldest pending barrier.
    fn free_barrier(&mut self, wait: &mut String) -> u8 {
        let taken = |e: &Self, w: &str, b: u8| e.pending.iter().any(|p| p.barrier == b) || w.contains(char::from(b'0' + b));
        if let Some(b) = (1..=6u8).find(|b| !taken(self, wait, *b)) {
            return b;
        }
        let mut mask = std::mem::take(wait);
        if let Some(b) = (1..=6u8).find(|b| !mask.contains(char::from(b'0' + b))) {
            self.pending.retain(|p| p.barrier != b);
            mask.push(char::from(b'0' + b));
        }
        self.push(&mask, None, None, 1, "NOP");
        (1..=6u8).find(|b| !taken(self, "", *b)).expect("a barrier was just freed")
    }

    /// Waits owed by an instruction reading `reads` and writing `writes`.
    fn owed(&mut self, reads: &[u8], writes: &[u8]) -> String {
        let mut mask = String::new();
        self.pending.retain(|p| {
            let hit = reads.iter().chain(writes).any(|r| p.blocks_access.contains(r))
                || writes.iter().any(|r| p.blocks_write.contains(r));
            if hit {
                mask.push_str(&p.barrier.to_string());
            }
            !hit
        });
        mask
    }

    fn drain(&mut self) -> String {
        let mut bs: Vec<u8> = self.pending.drain(..).map(|p| p.barrier).collect();
        bs.sort_unstable();
        bs.iter().map(|b| b.to_string()).collect()
    }

    fn push(&mut self, wait: &str, rb: Option<u8>, wb: Option<u8>, stall: u8, text: &str) {
        let mut w: Vec<char> = wait.chars().collect();
        w.sort_unstable();
        w.dedup();
        let w: String = w.into_iter().collect();
        let rb = rb.map_or("-".to_string(), |b| format!("R{b}"));
        let wb = wb.map_or("-".to_string(), |b| format!("W{b}"));
        let wait = if w.is_empty() { "--".to_string() } else { w };
        self.lines.push(format!("B{wait}:{rb}:{wb}:-:{stall} {text} ;"));
        self.count += 1;
    }

    fn alu(&mut self, reads: &[u8], writes: &[u8], text: &str) {
        let wait = self.owed(reads, writes);
        let stall = self.rng.gen_range(6..=9);
        self.push(&wait, None, None, stall, text);
    }

    fn load(&mut self, dest: u8, text: &str) {
        let mut wait = self.owed(&[1], &[dest]);
        let b = self.free_barrier(&mut wait);
        self.push(&wait, None, Some(b), 1, text);
        self.pending.push(Pending { barrier: b, blocks_access: vec![dest], blocks_write: vec![] });
    }

    fn store(&mut self, src: u8, text: &str) {
        let mut wait = self.owed(&[1, src], &[]);
        let b = self.free_barrier(&mut wait);
        self.push(&wait, Some(b), None, 1, text);
        self.pending.push(Pending { barrier: b, blocks_access: vec![], blocks_write: vec![src] });
    }

    fn drain_nop(&mut self) {
        let wait = self.drain();
        if !wait.is_empty() {
            self.push(&wait, None, None, 1, "NOP");
        }
    }
}

/// A random, hazard-free, terminating kernel. Barriers are set and awaited
/// in matched pairs; memory accesses stay in bounds for one warp with a
/// global image of [`GLOBAL_BYTES`].
pub fn random_kernel(seed: u64, config: &GenConfig) -> Kernel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(config.data_regs.clone());
    let data: Vec<u8> = (2..2 + n).collect();
    let counter = 2 + n;
    let pairs = if config.allow_fp64 && rng.gen_bool(0.3) {
        let a = counter + 1 + (counter + 1) % 2;
        Some((a, a + 2))
    } else {
        None
    };
    let user_shared = rng.gen_bool(0.3);
    let with_loop = config.allow_loop && rng.gen_bool(0.4);
    let with_branch = config.allow_branch && rng.gen_bool(0.3);
    let ops = rng.gen_range(config.ops.clone());

    let mut e = Emitter { rng: &mut rng, lines: Vec::new(), pending: Vec::new(), count: 0 };
    e.alu(&[], &[0], "S2R R0, SR_TID.X");
    e.alu(&[0], &[1], "SHL R1, R0, 2");
    for &r in &data {
        if e.rng.gen_bool(0.5) {
            let off = 0x80 * e.rng.gen_range(0..16u32);
            e.load(r, &format!("LDG R{r}, [R1+{off:#x}]"));
        } else {
            let v: i32 = e.rng.gen_range(-1000..1000);
            e.alu(&[], &[r], &format!("MOV R{r}, {v}"));
        }
    }
    if let Some((a, b)) = pairs {
        for w in a..a + 4 {
            let v: u32 = e.rng.gen();
            e.alu(&[], &[w], &format!("MOV R{w}, {v:#x}"));
        }
        let _ = b;
    }
    e.alu(&[0], &[], "ISETP.LT P1, R0, 13");

    let mut labels = 0;
    let loop_at = with_loop.then(|| e.rng.gen_range(0..=ops));
    let branch_at = with_branch.then(|| e.rng.gen_range(0..=ops));
    let mut loop_open = false;
    let mut loop_left = 0usize;
    let mut branch_state: Option<(usize, u32)> = None;
    for i in 0..=ops {
        if loop_at == Some(i) && branch_state.is_none() {
            e.alu(&[], &[counter], &format!("MOV R{counter}, 0"));
            e.drain_nop();
            e.lines.push("LOOP:".to_string());
            loop_open = true;
            loop_left = e.rng.gen_range(1..=6);
        }
        if branch_at == Some(i) && branch_state.is_none() {
            labels += 1;
            let wait = e.drain();
            let guard = if e.rng.gen_bool(0.5) { "@P1" } else { "@!P1" };
            e.push(&wait, None, None, 1, &format!("{guard} BRA ELSE{labels}"));
            branch_state = Some((e.rng.gen_range(1..=4), labels));
        }
        if i == ops {
            break;
        }
        random_op(&mut e, &data, pairs, user_shared);
        if let Some((left, id)) = branch_state.as_mut() {
            *left -= 1;
            if *left == 0 {
                let id = *id;
                let wait = e.drain();
                e.push(&wait, None, None, 1, &format!("BRA JOIN{id}"));
                e.lines.push(format!("ELSE{id}:"));
                for _ in 0..e.rng.gen_range(1..=3) {
                    random_op(&mut e, &data, pairs, user_shared);
                }
                e.drain_nop();
                e.lines.push(format!("JOIN{id}:"));
                branch_state = None;
            }
        }
        if loop_open {
            loop_left = loop_left.saturating_sub(1);
            if loop_left == 0 && branch_state.is_none() {
                close_loop(&mut e, counter);
                loop_open = false;
            }
        }
    }
    if let Some((_, id)) = branch_state {
        let wait = e.drain();
        e.push(&wait, None, None, 1, &format!("BRA JOIN{id}"));
        e.lines.push(format!("ELSE{id}:"));
        e.drain_nop();
        e.lines.push(format!("JOIN{id}:"));
    }
    if loop_open {
        close_loop(&mut e, counter);
    }
    e.drain_nop();
    let mut outs: Vec<u8> = data.clone();
    if with_loop {
        outs.push(counter);
    }
    if let Some((a, _)) = pairs {
        outs.extend(a..a + 4);
    }
    for (j, r) in outs.iter().enumerate() {
        let off = OUT_BASE + 0x80 * j as u32;
        e.push("", None, None, 1, &format!("STG [R1+{off:#x}], R{r}"));
    }
    e.push("", None, None, 1, "EXIT");

    let shared = if user_shared { USER_SHARED } else { 0 };
    let mut text = String::new();
    writeln!(text, ".kernel gen{seed}\n.blockdim {}\n.shared {shared}", config.block_dim).unwrap();
    for l in &e.lines {
        writeln!(text, "{l}").unwrap();
    }
    parse_kernel(&text).unwrap_or_else(|err| panic!("generated kernel does not parse: {err}\n{text}"))
}

fn close_loop(e: &mut Emitter, counter: u8) {
    let trips = e.rng.gen_range(2..=3);
    e.alu(&[counter], &[counter], &format!("IADD R{counter}, R{counter}, 1"));
    e.alu(&[counter], &[], &format!("ISETP.LT P0, R{counter}, {trips}"));
    let wait = e.drain();
    e.push(&wait, None, None, 1, "@P0 BRA LOOP");
}

fn random_op(e: &mut Emitter, data: &[u8], pairs: Option<(u8, u8)>, user_shared: bool) {
    let d = *data.choose(e.rng).unwrap();
    let a = *data.choose(e.rng).unwrap();
    let b = *data.choose(e.rng).unwrap();
    let c = *data.choose(e.rng).unwrap();
    let guard = if e.rng.gen_bool(0.15) {
        if e.rng.gen_bool(0.5) { "@P1 " } else { "@!P1 " }
    } else {
        ""
    };
    match e.rng.gen_range(0..14) {
        0 => {
            let v: i32 = e.rng.gen_range(-50..50);
            e.alu(&[a], &[d], &format!("{guard}IADD R{d}, R{a}, {v}"))
        }
        1 => e.alu(&[a, b], &[d], &format!("{guard}IADD R{d}, R{a}, R{b}")),
        2 => e.alu(&[a, b], &[d], &format!("{guard}IMUL R{d}, R{a}, R{b}")),
        3 => {
            let s = e.rng.gen_range(0..8);
            e.alu(&[a], &[d], &format!("{guard}SHL R{d}, R{a}, {s}"))
        }
        4 => e.alu(&[a], &[d], &format!("{guard}MOV R{d}, R{a}")),
        5 => e.alu(&[a, b], &[d], &format!("{guard}FADD R{d}, R{a}, R{b}")),
        6 => e.alu(&[a, b], &[d], &format!("{guard}FMUL R{d}, R{a}, R{b}")),
        7 => e.alu(&[a, b, c], &[d], &format!("{guard}FFMA R{d}, R{a}, R{b}, R{c}")),
        8 => {
            let cmp = ["LT", "LE", "GT", "GE", "EQ", "NE"].choose(e.rng).unwrap();
            e.alu(&[a, b], &[], &format!("ISETP.{cmp} P1, R{a}, R{b}"))
        }
        9 => {
            let off = 0x80 * e.rng.gen_range(0..16u32);
            e.load(d, &format!("{guard}LDG R{d}, [R1+{off:#x}]"))
        }
        10 => {
            let off = OUT_BASE + 0x800 + 0x80 * e.rng.gen_range(0..8u32);
            e.store(a, &format!("{guard}STG [R1+{off:#x}], R{a}"))
        }
        11 if user_shared => e.store(a, &format!("{guard}STS [R1+0x0], R{a}")),
        12 if user_shared => e.load(d, &format!("{guard}LDS R{d}, [R1+0x0]")),
        13 if pairs.is_some() => {
            let (p, q) = pairs.unwrap();
            let op = if e.rng.gen_bool(0.5) { "DADD" } else { "DMUL" };
            e.alu(&[p, p + 1, q, q + 1], &[p, p + 1], &format!("{guard}{op} R{p}, R{p}, R{q}"))
        }
        _ => e.alu(&[a, b], &[d], &format!("{guard}IADD R{d}, R{a}, R{b}")),
    }
}

/// A generated kernel with many simultaneously live registers, for
/// occupancy-sensitive experiments.
pub fn wide_kernel(seed: u64, live: u8, rounds: usize, block_dim: u32) -> Kernel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let regs: Vec<u8> = (2..2 + live).collect();
    let mut lines = vec!["B--:-:-:-:6 S2R R0, SR_TID.X ;".to_string(), "B--:-:-:-:6 SHL R1, R0, 2 ;".to_string()];
    for chunk in regs.chunks(6) {
        for (b, r) in chunk.iter().enumerate() {
            let off = 0x80 * rng.gen_range(0..32u32);
            lines.push(format!("B--:-:W{}:-:1 LDG R{r}, [R1+{off:#x}] ;", b + 1));
        }
        let mask: String = (1..=chunk.len()).map(|b| b.to_string()).collect();
        lines.push(format!("B{mask}:-:-:-:1 NOP ;"));
    }
    let with_loop = rng.gen_bool(0.5);
    if with_loop {
        lines.push("B--:-:-:-:6 MOV R0, 0 ;".to_string());
        lines.push("TOP:".to_string());
    }
    for _ in 0..rounds {
        for &r in &regs {
            let s = *regs.choose(&mut rng).unwrap();
            let op = ["IADD", "IMUL", "FADD", "FMUL", "FFMA"].choose(&mut rng).unwrap();
            let stall = rng.gen_range(1..=8);
            if *op == "FFMA" {
                let t = *regs.choose(&mut rng).unwrap();
                lines.push(format!("B--:-:-:-:{stall} FFMA R{r}, R{r}, R{s}, R{t} ;"));
            } else {
                lines.push(format!("B--:-:-:-:{stall} {op} R{r}, R{r}, R{s} ;"));
            }
        }
        if rng.gen_bool(0.3) {
            lines.push("B--:-:-:-:1 DADD R2, R2, R4 ;".to_string());
        }
    }
    if with_loop {
        lines.push("B--:-:-:-:6 IADD R0, R0, 1 ;".to_string());
        lines.push("B--:-:-:-:6 ISETP.LT P0, R0, 3 ;".to_string());
        lines.push("B--:-:-:-:1 @P0 BRA TOP ;".to_string());
    }
    for (j, r) in regs.iter().enumerate() {
        lines.push(format!("B--:-:-:-:1 STG [R1+{:#x}], R{r} ;", 0x8000 + 0x80 * j as u32));
    }
    lines.push("B--:-:-:-:1 EXIT ;".to_string());
    let text = format!(".kernel wide{seed}\n.blockdim {block_dim}\n.shared 0\n{}\n", lines.join("\n"));
    parse_kernel(&text).unwrap()
}
