//! End-to-end variant generation: occupancy targets × demotion strategies ×
//! post-pass options, validated, scored and ranked.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::asm::{Kernel, LatencyTable};
use crate::compact::{apply_renaming, build_relocation_space, compact, compact_bank_aware, CompactError, RenameMap};
use crate::demote::{demote_kernel, DemoteConfig, DemoteError, DemotionInfo, DemotionPlan, Strategy};
use crate::occupancy::{occupancy_cliff_targets, ArchProfile, CliffTarget, FULL_OCCUPANCY_REGS};
use crate::oracle::{bank_conflict_check, scoreboard_check};
use crate::postopt::{apply_post_opts, OptSet};
use crate::predict::{score_variants, select_variant, OccupancyCurve, PredictError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Predict(#[from] PredictError),
    #[error(transparent)]
    Demote(#[from] DemoteError),
    #[error(transparent)]
    Compact(#[from] CompactError),
}

#[derive(Clone, Debug)]
pub struct PipelineConfig {
    pub arch: ArchProfile,
    pub latency: LatencyTable,
    pub curve: OccupancyCurve,
    /// Cap on generated variants, the original included.
    pub max_variants: usize,
    /// Forces a single register target instead of the occupancy cliffs.
    pub target_regs: Option<u32>,
    pub strategies: Vec<Strategy>,
    pub options: Vec<OptSet>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            arch: ArchProfile::default(),
            latency: LatencyTable::default(),
            curve: OccupancyCurve::default(),
            max_variants: 64,
            target_regs: None,
            strategies: Strategy::ALL.to_vec(),
            options: OptSet::all().collect(),
        }
    }
}

/// How a variant was produced; `None` target means the untouched input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct VariantSpec {
    pub target_regs: Option<u32>,
    pub strategy: Option<Strategy>,
    #[serde(serialize_with = "opts_string")]
    pub options: OptSet,
}

fn opts_string<S: serde::Serializer>(o: &OptSet, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&o.to_string())
}

impl VariantSpec {
    pub const ORIGINAL: VariantSpec = VariantSpec { target_regs: None, strategy: None, options: OptSet {
        redundant: false,
        subst: false,
        resched: false,
        bank: false,
    } };

    pub fn name(&self) -> String {
        match (self.target_regs, self.strategy) {
            (Some(t), Some(s)) => format!("r{t}-{s}-{}", self.options.to_string().replace(',', "+")),
            _ => "original".to_string(),
        }
    }
}

/// Sidecar written next to every demoted variant.
#[derive(Clone, Debug, Serialize)]
pub struct Sidecar {
    pub spec: VariantSpec,
    pub info: DemotionInfo,
    pub plan: DemotionPlan,
    pub renaming: RenameMap,
}

#[derive(Clone, Debug)]
pub struct Variant {
    pub spec: VariantSpec,
    pub kernel: Kernel,
    pub sidecar: Option<Sidecar>,
}

/// Renaming that compacts the kernel's registers.
pub fn compaction_map(k: &Kernel, bank_aware: bool) -> Result<RenameMap, CompactError> {
    let space = build_relocation_space(k)?;
    Ok(if bank_aware { compact_bank_aware(&space) } else { compact(&space) })
}

/// Demotes to `target`, applies the post passes in `options` and compacts.
pub fn build_variant(
    k: &Kernel,
    target: u32,
    strategy: Strategy,
    options: OptSet,
    config: &PipelineConfig,
) -> Result<Variant, PipelineError> {
    let mut dc = DemoteConfig::new(target, strategy);
    dc.bank_aware_rdv = options.bank;
    dc.latency = config.latency.clone();
    dc.max_shared = Some(config.arch.shared_per_block_limit.saturating_sub(k.shared_bytes()));
    build_variant_with(k, &dc, options)
}

/// [`build_variant`] with explicit demotion settings; `options.bank` only
/// selects the compaction mode here.
pub fn build_variant_with(k: &Kernel, dc: &DemoteConfig, options: OptSet) -> Result<Variant, PipelineError> {
    let d = demote_kernel(k, dc)?;
    let post = apply_post_opts(&d.kernel, &d.info, options, &dc.latency);
    let map = compaction_map(&post, options.bank)?;
    let kernel = apply_renaming(&post, &map)?;
    let spec = VariantSpec { target_regs: Some(dc.target_regs), strategy: Some(dc.strategy), options };
    let info = d.info.renamed(&map);
    Ok(Variant { spec, kernel, sidecar: Some(Sidecar { spec, info, plan: d.plan, renaming: map }) })
}

/// Why a variant was excluded from ranking.
#[derive(Clone, Debug, Serialize)]
pub struct Dropped {
    pub name: String,
    pub reason: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct Ranked {
    /// Position in generation order (0 is the original kernel).
    pub index: usize,
    pub name: String,
    pub spec: VariantSpec,
    pub reg_count: u32,
    pub shared_bytes: u32,
    pub occupancy: f64,
    pub stall_count: f64,
    pub stall_program: f64,
    pub rank: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct PipelineReport {
    pub kernel: String,
    pub original_regs: u32,
    pub cliff_targets: Vec<CliffTarget>,
    pub notices: Vec<String>,
    pub chosen: String,
    /// Best first.
    pub ranking: Vec<Ranked>,
    pub dropped: Vec<Dropped>,
}

pub struct PipelineOutput {
    pub report: PipelineReport,
    /// Ranked variants in generation order.
    pub variants: Vec<Variant>,
    /// Index into `variants` of the selected one.
    pub chosen: usize,
}

/// Demotion specs in generation order, before the cap.
pub fn enumerate_specs(targets: &[u32], config: &PipelineConfig) -> Vec<VariantSpec> {
    let mut out = Vec::new();
    for &t in targets {
        for &s in &config.strategies {
            for &o in &config.options {
                out.push(VariantSpec { target_regs: Some(t), strategy: Some(s), options: o });
            }
        }
    }
    out
}

/// Every defect that keeps a variant out of the ranking.
pub fn validate(v: &Variant, table: &LatencyTable) -> Vec<String> {
    let mut defects: Vec<String> = scoreboard_check(&v.kernel, table)
        .iter()
        .map(|h| format!("{:?} at line {} (item {})", h.kind, h.line, h.item))
        .collect();
    if let Some(side) = &v.sidecar {
        defects.extend(bank_conflict_check(&v.kernel, &side.info).iter().map(|f| format!("{f:?}")));
    }
    defects
}

/// Generates, validates, scores and ranks all variants of `k`.
pub fn run_pipeline(k: &Kernel, config: &PipelineConfig) -> Result<PipelineOutput, PipelineError> {
    let mut notices = Vec::new();
    let cliffs = occupancy_cliff_targets(k, &config.arch, config.arch.shared_per_block_limit.saturating_sub(k.shared_bytes()));
    let targets: Vec<u32> = match config.target_regs {
        Some(t) => vec![t],
        None if k.reg_count() <= FULL_OCCUPANCY_REGS => {
            notices.push(format!(
                "kernel uses {} registers; demotion has no effect at or below {FULL_OCCUPANCY_REGS}",
                k.reg_count()
            ));
            Vec::new()
        }
        None => cliffs.iter().map(|c| c.target_regs).collect(),
    };
    if targets.is_empty() && notices.is_empty() {
        notices.push("no register target improves occupancy within the shared-memory budget".to_string());
    }
    let mut specs = enumerate_specs(&targets, config);
    let cap = config.max_variants.max(1) - 1;
    if specs.len() > cap {
        notices.push(format!("{} variants generated, capped at {}", specs.len() + 1, cap + 1));
        specs.truncate(cap);
    }

    let checked: Vec<(Result<Variant, PipelineError>, Vec<String>)> = specs
        .par_iter()
        .map(|s| {
            let r = build_variant(k, s.target_regs.unwrap_or(0), s.strategy.unwrap_or(Strategy::Static), s.options, config);
            let defects = r.as_ref().map(|v| validate(v, &config.latency)).unwrap_or_default();
            (r, defects)
        })
        .collect();
    let mut variants = vec![Variant { spec: VariantSpec::ORIGINAL, kernel: k.clone(), sidecar: None }];
    let mut dropped = Vec::new();
    for (spec, (result, defects)) in specs.iter().zip(checked) {
        match result {
            Err(e) => dropped.push(Dropped { name: spec.name(), reason: e.to_string() }),
            Ok(_) if !defects.is_empty() => {
                log::warn!("variant {} dropped: {}", spec.name(), defects.join("; "));
                dropped.push(Dropped { name: spec.name(), reason: defects.join("; ") });
            }
            Ok(v) => variants.push(v),
        }
    }

    let kernels: Vec<&Kernel> = variants.iter().map(|v| &v.kernel).collect();
    let reports = score_variants(&kernels, &config.arch, &config.latency, &config.curve)?;
    let scores: Vec<(f64, usize)> =
        reports.iter().zip(&variants).map(|(r, v)| (r.stall_program, v.spec.options.count())).collect();
    let chosen = select_variant(&scores)?;

    let mut order: Vec<usize> = (0..variants.len()).collect();
    order.sort_by(|&a, &b| {
        if a == chosen || b == chosen {
            return (b == chosen).cmp(&(a == chosen));
        }
        scores[a].0.total_cmp(&scores[b].0).then(scores[b].1.cmp(&scores[a].1)).then(a.cmp(&b))
    });
    let ranking = order
        .iter()
        .enumerate()
        .map(|(rank, &i)| {
            let v = &variants[i];
            Ranked {
                index: i,
                name: v.spec.name(),
                spec: v.spec,
                reg_count: v.kernel.reg_count(),
                shared_bytes: v.kernel.shared_bytes(),
                occupancy: reports[i].occupancy,
                stall_count: reports[i].stall_count,
                stall_program: reports[i].stall_program,
                rank: rank + 1,
            }
        })
        .collect();
    let report = PipelineReport {
        kernel: k.name.clone(),
        original_regs: k.reg_count(),
        cliff_targets: cliffs,
        notices,
        chosen: variants[chosen].spec.name(),
        ranking,
        dropped,
    };
    Ok(PipelineOutput { report, variants, chosen })
}
