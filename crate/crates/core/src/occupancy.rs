//! Theoretical occupancy from register, shared-memory and thread limits.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::asm::Kernel;
use crate::config::{ConfigError, KeyValues};

/// Register count at which a kernel reaches full occupancy on the default profile.
pub const FULL_OCCUPANCY_REGS: u32 = 32;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchProfile {
    pub regs_per_sm: u32,
    pub max_threads_per_sm: u32,
    pub max_blocks_per_sm: u32,
    pub shared_per_sm: u32,
    pub shared_per_block_limit: u32,
    pub warp_size: u32,
    pub reg_alloc_granularity: u32,
    pub shared_alloc_granularity: u32,
}

impl Default for ArchProfile {
    fn default() -> Self {
        ArchProfile {
            regs_per_sm: 65536,
            max_threads_per_sm: 2048,
            max_blocks_per_sm: 32,
            shared_per_sm: 96 * 1024,
            shared_per_block_limit: 48 * 1024,
            warp_size: 32,
            reg_alloc_granularity: 1,
            shared_alloc_granularity: 256,
        }
    }
}

impl ArchProfile {
    /// Reads `key = value` lines named after the struct fields. Missing keys keep
    /// their defaults; unknown keys and zero values are rejected. Keys
    /// beginning with `curve.` are left for the occupancy curve reader.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let kv = KeyValues::parse(text)?;
        let mut p = ArchProfile::default();
        for (key, line) in kv.keys() {
            if key.starts_with("curve.") {
                continue;
            }
            let v = kv.get_u32(key)?.unwrap_or_default();
            if v == 0 {
                return Err(ConfigError::Invalid { line, message: format!("{key} must be positive") });
            }
            let field = match key {
                "regs_per_sm" => &mut p.regs_per_sm,
                "max_threads_per_sm" => &mut p.max_threads_per_sm,
                "max_blocks_per_sm" => &mut p.max_blocks_per_sm,
                "shared_per_sm" => &mut p.shared_per_sm,
                "shared_per_block_limit" => &mut p.shared_per_block_limit,
                "warp_size" => &mut p.warp_size,
                "reg_alloc_granularity" => &mut p.reg_alloc_granularity,
                "shared_alloc_granularity" => &mut p.shared_alloc_granularity,
                _ => return Err(ConfigError::UnknownKey { line, key: key.to_string() }),
            };
            *field = v;
        }
        if p.max_threads_per_sm % p.warp_size != 0 {
            return Err(ConfigError::Invalid {
                line: 0,
                message: "warp_size must divide max_threads_per_sm".into(),
            });
        }
        Ok(p)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OccupancyError {
    #[error("block size {block_dim} is not a positive multiple of the warp size {warp_size}")]
    BlockDim { block_dim: u32, warp_size: u32 },
    #[error("register count must be at least 1")]
    NoRegisters,
    #[error("no block can be resident (limited by {0})")]
    CannotLaunch(Limiter),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Limiter {
    Registers,
    SharedMemory,
    Threads,
    Blocks,
}

impl std::fmt::Display for Limiter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Limiter::Registers => "registers",
            Limiter::SharedMemory => "shared memory",
            Limiter::Threads => "threads",
            Limiter::Blocks => "blocks",
        })
    }
}

/// Resident-block limits and the resulting occupancy.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OccupancyReport {
    pub blocks_by_registers: u32,
    /// `None` when the kernel uses no shared memory.
    pub blocks_by_shared: Option<u32>,
    pub blocks_by_threads: u32,
    pub blocks_by_limit: u32,
    pub resident_blocks: u32,
    pub limiter: Limiter,
    pub occupancy: f64,
}

fn round_up(x: u32, g: u32) -> u32 {
    x.div_ceil(g) * g
}

pub fn occupancy_report(
    regs_per_thread: u32,
    shared_per_block: u32,
    block_dim: u32,
    arch: &ArchProfile,
) -> Result<OccupancyReport, OccupancyError> {
    if block_dim == 0 || !block_dim.is_multiple_of(arch.warp_size) {
        return Err(OccupancyError::BlockDim { block_dim, warp_size: arch.warp_size });
    }
    if regs_per_thread == 0 {
        return Err(OccupancyError::NoRegisters);
    }
    let regs_per_block = round_up(regs_per_thread, arch.reg_alloc_granularity) as u64 * block_dim as u64;
    let by_regs = (arch.regs_per_sm as u64 / regs_per_block) as u32;
    let by_shared = (shared_per_block > 0).then(|| {
        if shared_per_block > arch.shared_per_block_limit {
            0
        } else {
            arch.shared_per_sm / round_up(shared_per_block, arch.shared_alloc_granularity)
        }
    });
    let by_threads = arch.max_threads_per_sm / block_dim;
    let limits = [
        (by_regs, Limiter::Registers),
        (by_shared.unwrap_or(u32::MAX), Limiter::SharedMemory),
        (by_threads, Limiter::Threads),
        (arch.max_blocks_per_sm, Limiter::Blocks),
    ];
    let (resident, limiter) = limits.into_iter().min_by_key(|(n, _)| *n).unwrap();
    if resident == 0 {
        return Err(OccupancyError::CannotLaunch(limiter));
    }
    Ok(OccupancyReport {
        blocks_by_registers: by_regs,
        blocks_by_shared: by_shared,
        blocks_by_threads: by_threads,
        blocks_by_limit: arch.max_blocks_per_sm,
        resident_blocks: resident,
        limiter,
        occupancy: (resident * block_dim) as f64 / arch.max_threads_per_sm as f64,
    })
}

/// Fraction of the SM's thread slots filled by resident blocks.
pub fn occupancy(
    regs_per_thread: u32,
    shared_per_block: u32,
    block_dim: u32,
    arch: &ArchProfile,
) -> Result<f64, OccupancyError> {
    occupancy_report(regs_per_thread, shared_per_block, block_dim, arch).map(|r| r.occupancy)
}

/// Occupancy of a kernel as written.
pub fn kernel_occupancy(k: &Kernel, arch: &ArchProfile) -> Result<f64, OccupancyError> {
    occupancy(k.reg_count().max(1), k.shared_bytes(), k.block_dim, arch)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CliffTarget {
    pub target_regs: u32,
    pub occupancy: f64,
    /// Single-word registers to demote to reach the target after compaction
    /// (the base-address and value registers cost two).
    pub demoted: u32,
    /// Shared bytes the demoted slots occupy.
    pub demoted_bytes: u32,
}

/// Demoted single-word registers needed to bring `reg_count` down to `target`.
pub fn demotions_needed(reg_count: u32, target: u32) -> u32 {
    reg_count.saturating_sub(target) + 2
}

/// Register counts below the current one at which occupancy steps up, largest
/// first, restricted to those whose demoted slots fit in `shared_budget`.
pub fn occupancy_cliff_targets(k: &Kernel, arch: &ArchProfile, shared_budget: u32) -> Vec<CliffTarget> {
    let regs = k.reg_count();
    if regs <= FULL_OCCUPANCY_REGS {
        return Vec::new();
    }
    let static_rounded = round_up(k.static_shared, 4);
    let mut best = kernel_occupancy(k, arch).unwrap_or(0.0);
    let mut out = Vec::new();
    for r in (FULL_OCCUPANCY_REGS..regs).rev() {
        let demoted = demotions_needed(regs, r);
        let bytes = demoted * k.block_dim * 4;
        if bytes > shared_budget {
            continue;
        }
        let Ok(occ) = occupancy(r, static_rounded + bytes, k.block_dim, arch) else { continue };
        if occ > best {
            best = occ;
            out.push(CliffTarget { target_regs: r, occupancy: occ, demoted, demoted_bytes: bytes });
        }
    }
    out
}
