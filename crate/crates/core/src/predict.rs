//! Static stall-cycle predictor and variant selection.
//!
//! Each instruction contributes its annotated stall scaled by occupancy and
//! by the contention of its class; waits on barriers set by memory
//! instructions add the latency not yet covered by elapsed stalls. Blocks
//! inside loops are weighted by [`LOOP_FACTOR`](crate::flow::LOOP_FACTOR) per nesting level and all
//! blocks are summed. Variants with different occupancy are compared through
//! an occupancy curve.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::asm::{instruction_class, InstrClass, Instruction, Kernel, LatencyTable, NUM_BARRIERS};
use crate::config::{ConfigError, KeyValues};
use crate::flow::{build_cfg, loop_weight, Cfg, CfgError};
use crate::occupancy::{kernel_occupancy, ArchProfile, OccupancyError};

#[derive(Debug, Error, PartialEq)]
pub enum PredictError {
    #[error(transparent)]
    Cfg(#[from] CfgError),
    #[error(transparent)]
    Occupancy(#[from] OccupancyError),
    #[error("occupancy {0} is outside (0, 1]")]
    OccupancyRange(f64),
    #[error("no variants to select from")]
    NoVariants,
}

/// Relative execution time as a function of occupancy, interpolated linearly
/// between points and extrapolated from the outermost segments.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OccupancyCurve {
    /// `(occupancy, factor)` sorted by occupancy.
    points: Vec<(f64, f64)>,
}

impl Default for OccupancyCurve {
    fn default() -> Self {
        OccupancyCurve { points: vec![(0.25, 2.8), (0.5, 1.6), (0.75, 1.15), (1.0, 1.0)] }
    }
}

impl OccupancyCurve {
    /// Builds a curve normalized so that `f(1.0) = 1`. Needs at least two
    /// distinct occupancies in (0, 1] and a factor that never grows with
    /// occupancy.
    pub fn new(mut points: Vec<(f64, f64)>) -> Result<Self, String> {
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        if points.len() < 2 {
            return Err("an occupancy curve needs at least two points".into());
        }
        for w in points.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(format!("occupancy {} appears twice", w[0].0));
            }
            if w[1].1 > w[0].1 {
                return Err(format!("factor rises from {} to {} between occupancy {} and {}", w[0].1, w[1].1, w[0].0, w[1].0));
            }
        }
        if let Some(p) = points.iter().find(|p| !(p.0 > 0.0 && p.0 <= 1.0) || p.1 <= 0.0) {
            return Err(format!("point ({}, {}) is out of range", p.0, p.1));
        }
        let mut curve = OccupancyCurve { points };
        let norm = curve.raw(1.0);
        if norm <= 0.0 {
            return Err("factor at full occupancy must be positive".into());
        }
        for p in &mut curve.points {
            p.1 /= norm;
        }
        Ok(curve)
    }

    /// Reads `curve.<occupancy> = <factor>` keys; other keys are ignored so a
    /// profile file can carry its curve.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let kv = KeyValues::parse(text)?;
        let mut points = Vec::new();
        let mut last_line = 0;
        for (key, line) in kv.keys() {
            let Some(x) = key.strip_prefix("curve.") else { continue };
            let x: f64 = x.parse().map_err(|_| ConfigError::Invalid { line, message: format!("`{key}`: bad occupancy") })?;
            let y = kv.get_f64(key)?.expect("key present");
            points.push((x, y));
            last_line = line;
        }
        OccupancyCurve::new(points).map_err(|message| ConfigError::Invalid { line: last_line, message })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    fn raw(&self, x: f64) -> f64 {
        let p = &self.points;
        let i = p.iter().position(|q| q.0 >= x).unwrap_or(p.len() - 1).clamp(1, p.len() - 1);
        let ((x0, y0), (x1, y1)) = (p[i - 1], p[i]);
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    }

    pub fn eval(&self, x: f64) -> Result<f64, PredictError> {
        if !(x > 0.0 && x <= 1.0) {
            return Err(PredictError::OccupancyRange(x));
        }
        Ok(self.raw(x))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StallReport {
    /// Loop-weighted stall cycles per basic block.
    pub per_block: BTreeMap<usize, f64>,
    pub stall_count: f64,
    pub occupancy: f64,
    /// Occupancy-adjusted score; equals `stall_count` until adjusted.
    pub stall_program: f64,
}

/// Annotated stall scaled by occupancy and class contention.
pub fn instruction_stall(inst: &Instruction, occupancy: f64, table: &LatencyTable) -> f64 {
    let info = instruction_class(inst, table);
    inst.control.stall as f64 * occupancy * table.max_throughput as f64 / info.throughput as f64
}

#[derive(Clone, Copy)]
struct Setter {
    class: InstrClass,
    elapsed: f64,
}

/// Unweighted stall cycles of every block. The barrier state starts empty at
/// each block: barriers never live across jumps.
pub fn block_stalls(k: &Kernel, cfg: &Cfg, occupancy: f64, table: &LatencyTable) -> Vec<f64> {
    cfg.blocks
        .iter()
        .map(|b| {
            let mut tracker: [Option<Setter>; NUM_BARRIERS as usize + 1] = [None; NUM_BARRIERS as usize + 1];
            let mut total = 0.0;
            for (_, inst) in cfg.block_instructions(k, b.id) {
                let stall = instruction_stall(inst, occupancy, table);
                let class = InstrClass::of(inst.opcode);
                for bar in inst.control.sets().iter() {
                    tracker[bar.index() as usize] = Some(Setter { class, elapsed: 0.0 });
                }
                for w in inst.control.wait.iter() {
                    if let Some(s) = tracker[w.index() as usize].take() {
                        let latency = match s.class {
                            InstrClass::GlobalMemory => table.global_latency as f64,
                            InstrClass::SharedMemory => table.shared_latency as f64,
                            _ => continue,
                        };
                        if s.elapsed < latency {
                            total += latency - s.elapsed;
                        }
                    }
                }
                for s in tracker.iter_mut().flatten() {
                    s.elapsed += stall;
                }
                total += stall;
            }
            total
        })
        .collect()
}

/// Multiplies each block by [`LOOP_FACTOR`](crate::flow::LOOP_FACTOR) once per loop containing it.
pub fn weight_loops(cfg: &Cfg, per_block: &[f64]) -> Vec<f64> {
    per_block.iter().enumerate().map(|(b, s)| s * loop_weight(cfg.loop_depth(b)) as f64).collect()
}

/// Stall report at a given occupancy.
pub fn program_stalls_at(k: &Kernel, occupancy: f64, table: &LatencyTable) -> Result<StallReport, PredictError> {
    let cfg = build_cfg(k)?;
    let weighted = weight_loops(&cfg, &block_stalls(k, &cfg, occupancy, table));
    let stall_count = weighted.iter().sum();
    Ok(StallReport {
        per_block: weighted.into_iter().enumerate().collect(),
        stall_count,
        occupancy,
        stall_program: stall_count,
    })
}

/// Stall report at the kernel's theoretical occupancy.
pub fn program_stalls(k: &Kernel, arch: &ArchProfile, table: &LatencyTable) -> Result<StallReport, PredictError> {
    program_stalls_at(k, kernel_occupancy(k, arch)?, table)
}

/// Scales `stall_count` by the slowdown of the report's occupancy relative to
/// the best occupancy among the compared variants.
pub fn adjust_occupancy(report: &StallReport, occ_max: f64, curve: &OccupancyCurve) -> Result<f64, PredictError> {
    Ok(curve.eval(report.occupancy)? / curve.eval(occ_max)? * report.stall_count)
}

/// Relative tolerance under which two scores count as tied.
pub const TIE_EPSILON: f64 = 1e-9;

/// Index of the best `(stall_program, enabled option count)`: lowest score,
/// then most options, then earliest.
pub fn select_variant(scores: &[(f64, usize)]) -> Result<usize, PredictError> {
    let mut best: Option<usize> = None;
    for (i, &(score, opts)) in scores.iter().enumerate() {
        let Some(b) = best else {
            best = Some(i);
            continue;
        };
        let (bs, bo) = scores[b];
        let tied = (score - bs).abs() <= TIE_EPSILON * score.abs().max(bs.abs());
        if (!tied && score < bs) || (tied && opts > bo) {
            best = Some(i);
        }
    }
    best.ok_or(PredictError::NoVariants)
}

/// Reports for a set of variants with `stall_program` adjusted against the
/// best occupancy in the set.
pub fn score_variants(
    kernels: &[&Kernel],
    arch: &ArchProfile,
    table: &LatencyTable,
    curve: &OccupancyCurve,
) -> Result<Vec<StallReport>, PredictError> {
    let mut reports = kernels.iter().map(|k| program_stalls(k, arch, table)).collect::<Result<Vec<_>, _>>()?;
    let occ_max = reports.iter().map(|r| r.occupancy).fold(0.0, f64::max);
    for r in &mut reports {
        r.stall_program = adjust_occupancy(r, occ_max, curve)?;
    }
    Ok(reports)
}
