//! `shmspill` command-line driver.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use shmspill::asm::{parse_kernel, print_kernel, Kernel, LatencyTable};
use shmspill::compact::apply_renaming;
use shmspill::demote::{DemoteConfig, DemotionInfo, Strategy};
use shmspill::flow::build_cfg;
use shmspill::occupancy::{occupancy_cliff_targets, occupancy_report, ArchProfile};
use shmspill::oracle::{bank_conflict_check, execute, scoreboard_check, ExecConfig};
use shmspill::pipeline::{build_variant_with, compaction_map, run_pipeline, PipelineConfig, Sidecar};
use shmspill::postopt::OptSet;
use shmspill::predict::{program_stalls, score_variants, select_variant, OccupancyCurve};

#[derive(Parser)]
#[command(name = "shmspill", version, about = "Register demotion to shared memory for GPU assembly kernels")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Architecture profile (`key = value`).
    #[arg(long, global = true)]
    profile: Option<PathBuf>,
    /// Instruction latency/throughput table (`key = value`).
    #[arg(long, global = true)]
    latency_table: Option<PathBuf>,
    /// Occupancy slowdown curve (`curve.<occupancy> = <factor>`).
    #[arg(long, global = true)]
    curve: Option<PathBuf>,
    /// Directory for JSON reports and sidecars.
    #[arg(long, global = true)]
    json_out: Option<PathBuf>,
    /// Write the input kernel's control-flow graph in DOT format.
    #[arg(long, global = true)]
    dump_cfg: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Demote registers to shared memory, apply post passes and compact.
    Demote {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        target_regs: u32,
        #[arg(long, default_value = "static")]
        strategy: Strategy,
        /// Shared-memory bytes available for slots.
        #[arg(long)]
        max_shared: Option<u32>,
        /// Post passes: any of redundant,subst,resched,bank.
        #[arg(long, default_value = "none")]
        opt: OptSet,
        /// Output kernel; stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Compact register numbering.
    Compact {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        bank_aware: bool,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Estimate stall cycles.
    Predict {
        #[arg(long)]
        input: PathBuf,
    },
    /// Rank kernels by predicted stall cycles.
    Select {
        #[arg(long, num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        /// Also generate demoted variants of every input.
        #[arg(long)]
        auto_variants: bool,
    },
    /// Occupancy breakdown and register cliffs.
    Occupancy {
        #[arg(long)]
        input: PathBuf,
    },
    /// Execute one warp in the interpreter and dump its final state.
    Run {
        #[arg(long)]
        input: PathBuf,
        /// Global memory image as hex text (whitespace ignored).
        #[arg(long, conflicts_with = "seed")]
        mem: Option<PathBuf>,
        /// Fill a random global image of `--mem-size` bytes instead.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 65536)]
        mem_size: usize,
        #[arg(long, default_value_t = 0)]
        tid_base: u32,
        #[arg(long, default_value_t = 0)]
        ctaid: u32,
        #[arg(long, default_value_t = 1_000_000)]
        fuel: u64,
    },
    /// Hazard and bank checks; exits non-zero on findings.
    Check {
        #[arg(long)]
        input: PathBuf,
        /// Sidecar written by `demote` or `pipeline`, enabling the bank check.
        #[arg(long)]
        sidecar: Option<PathBuf>,
    },
    /// Generate, validate, rank and emit variants.
    Pipeline {
        #[arg(long)]
        input: PathBuf,
        /// Use one register target instead of the occupancy cliffs.
        #[arg(long)]
        target_regs: Option<u32>,
        #[arg(long, default_value_t = 64)]
        max_variants: usize,
        /// Chosen kernel; `<json-out>/chosen.sass` when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

struct Settings {
    arch: ArchProfile,
    latency: LatencyTable,
    curve: OccupancyCurve,
    json_out: Option<PathBuf>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_kernel(path: &Path) -> Result<Kernel> {
    parse_kernel(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "kernel".to_string(), |s| s.to_string_lossy().into_owned())
}

fn settings(g: &Global) -> Result<Settings> {
    let profile = g.profile.as_ref().map(|p| read(p).map(|t| (p, t))).transpose()?;
    let arch = match &profile {
        Some((p, text)) => ArchProfile::parse(text).with_context(|| format!("profile {}", p.display()))?,
        None => ArchProfile::default(),
    };
    let latency = match &g.latency_table {
        Some(p) => LatencyTable::parse(&read(p)?).with_context(|| format!("latency table {}", p.display()))?,
        None => LatencyTable::default(),
    };
    let curve = match (&g.curve, &profile) {
        (Some(p), _) => OccupancyCurve::parse(&read(p)?).with_context(|| format!("curve {}", p.display()))?,
        (None, Some((p, text))) if text.lines().any(|l| l.trim_start().starts_with("curve.")) => {
            OccupancyCurve::parse(text).with_context(|| format!("curve in profile {}", p.display()))?
        }
        _ => OccupancyCurve::default(),
    };
    Ok(Settings { arch, latency, curve, json_out: g.json_out.clone() })
}

/// Prints to stdout; a closed pipe ends the process quietly.
fn stdout(text: &str) -> Result<()> {
    use std::io::Write;
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => std::process::exit(0),
        r => Ok(r?),
    }
}

/// Writes `kernel` to `output` or stdout, and `report` to the JSON directory,
/// next to `output`, or stdout, in that order of preference.
fn emit(s: &Settings, name: &str, kernel: Option<&Kernel>, output: Option<&Path>, report: &Value) -> Result<()> {
    if let Some(k) = kernel {
        match output {
            Some(p) => write(p, &print_kernel(k))?,
            None => stdout(&print_kernel(k))?,
        }
    }
    let text = serde_json::to_string_pretty(report)? + "\n";
    match (&s.json_out, output) {
        (Some(dir), _) => write(&dir.join(format!("{name}.json")), &text),
        (None, Some(p)) if kernel.is_some() => write(&p.with_extension("json"), &text),
        _ => {
            stdout(&text)
        }
    }
}

fn parse_hex_image(text: &str) -> Result<Vec<u8>> {
    let digits: String = text.split_whitespace().collect();
    hex::decode(digits.trim_start_matches("0x")).context("memory image is not valid hex")
}

fn run(cli: Cli) -> Result<i32> {
    let s = settings(&cli.global)?;
    let input = match &cli.command {
        Command::Demote { input, .. }
        | Command::Compact { input, .. }
        | Command::Predict { input }
        | Command::Occupancy { input }
        | Command::Run { input, .. }
        | Command::Check { input, .. }
        | Command::Pipeline { input, .. } => Some(input.clone()),
        Command::Select { inputs, .. } => inputs.first().cloned(),
    };
    if let (Some(dot), Some(input)) = (&cli.global.dump_cfg, &input) {
        let k = load_kernel(input)?;
        write(dot, &build_cfg(&k)?.to_dot(&k))?;
    }

    match cli.command {
        Command::Demote { input, target_regs, strategy, max_shared, opt, output } => {
            let k = load_kernel(&input)?;
            let mut dc = DemoteConfig::new(target_regs, strategy);
            dc.bank_aware_rdv = opt.bank;
            dc.latency = s.latency.clone();
            dc.max_shared =
                Some(max_shared.unwrap_or_else(|| s.arch.shared_per_block_limit.saturating_sub(k.shared_bytes())));
            let v = build_variant_with(&k, &dc, opt)?;
            let sidecar = serde_json::to_value(v.sidecar.as_ref())?;
            emit(&s, &format!("{}.demote", stem(&input)), Some(&v.kernel), output.as_deref(), &sidecar)?;
        }
        Command::Compact { input, bank_aware, output } => {
            let k = load_kernel(&input)?;
            let map = compaction_map(&k, bank_aware)?;
            let out = apply_renaming(&k, &map)?;
            let report = json!({ "reg_count_before": k.reg_count(), "reg_count_after": out.reg_count(), "renaming": map });
            emit(&s, &format!("{}.compact", stem(&input)), Some(&out), output.as_deref(), &report)?;
        }
        Command::Predict { input } => {
            let k = load_kernel(&input)?;
            let report = program_stalls(&k, &s.arch, &s.latency)?;
            emit(&s, &format!("{}.predict", stem(&input)), None, None, &serde_json::to_value(report)?)?;
        }
        Command::Select { inputs, auto_variants } => select(&s, &inputs, auto_variants)?,
        Command::Occupancy { input } => {
            let k = load_kernel(&input)?;
            let report = occupancy_report(k.reg_count().max(1), k.shared_bytes(), k.block_dim, &s.arch)?;
            let budget = s.arch.shared_per_block_limit.saturating_sub(k.shared_bytes());
            let value = json!({
                "kernel": k.name,
                "reg_count": k.reg_count(),
                "shared_bytes": k.shared_bytes(),
                "block_dim": k.block_dim,
                "report": report,
                "cliff_targets": occupancy_cliff_targets(&k, &s.arch, budget),
            });
            emit(&s, &format!("{}.occupancy", stem(&input)), None, None, &value)?;
        }
        Command::Run { input, mem, seed, mem_size, tid_base, ctaid, fuel } => {
            let k = load_kernel(&input)?;
            let global = match (mem, seed) {
                (Some(p), _) => parse_hex_image(&read(&p)?)?,
                (None, Some(seed)) => {
                    let mut bytes = vec![0u8; mem_size];
                    ChaCha8Rng::seed_from_u64(seed).fill_bytes(&mut bytes);
                    bytes
                }
                (None, None) => vec![0u8; mem_size],
            };
            let config = ExecConfig { tid_base, ctaid, fuel, latency: s.latency.clone() };
            let state = execute(&k, &global, &config)?;
            let registers: serde_json::Map<String, Value> = k
                .used_words()
                .into_iter()
                .filter(|w| *w != shmspill::asm::RZ_INDEX)
                .map(|w| (format!("R{w}"), json!((0..32).map(|l| state.reg(l, w)).collect::<Vec<_>>())))
                .collect();
            let mut value = serde_json::to_value(&state)?;
            value["registers"] = Value::Object(registers);
            emit(&s, &format!("{}.run", stem(&input)), None, None, &value)?;
        }
        Command::Check { input, sidecar } => {
            let k = load_kernel(&input)?;
            let hazards = scoreboard_check(&k, &s.latency);
            let bank = match &sidecar {
                Some(p) => {
                    let v: Value = serde_json::from_str(&read(p)?).with_context(|| format!("parsing {}", p.display()))?;
                    let info: DemotionInfo = serde_json::from_value(v.get("info").cloned().unwrap_or(v))
                        .with_context(|| format!("{} has no demotion info", p.display()))?;
                    Some(bank_conflict_check(&k, &info))
                }
                None => None,
            };
            let clean = hazards.is_empty() && bank.as_ref().is_none_or(Vec::is_empty);
            let value = json!({ "clean": clean, "hazards": hazards, "bank_findings": bank });
            emit(&s, &format!("{}.check", stem(&input)), None, None, &value)?;
            return Ok(if clean { 0 } else { 1 });
        }
        Command::Pipeline { input, target_regs, max_variants, output } => {
            let k = load_kernel(&input)?;
            let config = PipelineConfig {
                arch: s.arch.clone(),
                latency: s.latency.clone(),
                curve: s.curve.clone(),
                max_variants,
                target_regs,
                ..PipelineConfig::default()
            };
            let out = run_pipeline(&k, &config)?;
            for n in &out.report.notices {
                eprintln!("note: {n}");
            }
            let dir = s.json_out.clone().unwrap_or_else(|| PathBuf::from(format!("{}.out", stem(&input))));
            let chosen = &out.variants[out.chosen];
            let chosen_path = output.unwrap_or_else(|| dir.join("chosen.sass"));
            write(&chosen_path, &print_kernel(&chosen.kernel))?;
            write(&dir.join("report.json"), &(serde_json::to_string_pretty(&out.report)? + "\n"))?;
            for v in out.variants.iter().filter(|v| v.sidecar.is_some()) {
                let name = v.spec.name();
                write(&dir.join("variants").join(format!("{name}.sass")), &print_kernel(&v.kernel))?;
                let side: Option<&Sidecar> = v.sidecar.as_ref();
                write(&dir.join("variants").join(format!("{name}.json")), &(serde_json::to_string_pretty(&side)? + "\n"))?;
            }
            println!("{} -> {} ({})", input.display(), chosen_path.display(), out.report.chosen);
        }
    }
    Ok(0)
}

/// Option count recorded in a kernel's sidecar (`<file>.json`), if any.
fn recorded_options(path: &Path) -> usize {
    fs::read_to_string(path.with_extension("json"))
        .ok()
        .and_then(|t| serde_json::from_str::<Value>(&t).ok())
        .and_then(|v| v.pointer("/spec/options").and_then(Value::as_str).map(str::to_string))
        .and_then(|o| o.parse::<OptSet>().ok())
        .map_or(0, OptSet::count)
}

fn select(s: &Settings, inputs: &[PathBuf], auto_variants: bool) -> Result<()> {
    let mut names = Vec::new();
    let mut kernels = Vec::new();
    let mut options = Vec::new();
    for path in inputs {
        let k = load_kernel(path)?;
        names.push(path.display().to_string());
        options.push(recorded_options(path));
        kernels.push(k.clone());
        if auto_variants {
            let config = PipelineConfig {
                arch: s.arch.clone(),
                latency: s.latency.clone(),
                curve: s.curve.clone(),
                ..PipelineConfig::default()
            };
            for v in run_pipeline(&k, &config)?.variants.into_iter().skip(1) {
                names.push(format!("{}:{}", path.display(), v.spec.name()));
                options.push(v.spec.options.count());
                kernels.push(v.kernel);
            }
        }
    }
    let refs: Vec<&Kernel> = kernels.iter().collect();
    let reports = score_variants(&refs, &s.arch, &s.latency, &s.curve)?;
    let scores: Vec<(f64, usize)> = reports.iter().zip(&options).map(|(r, o)| (r.stall_program, *o)).collect();
    let chosen = select_variant(&scores)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        (b == chosen)
            .cmp(&(a == chosen))
            .then(scores[a].0.total_cmp(&scores[b].0))
            .then(scores[b].1.cmp(&scores[a].1))
            .then(a.cmp(&b))
    });
    println!("{:>4}  {:>12}  {:>9}  {:>5}  {:>4}  name", "rank", "stall", "occupancy", "regs", "opts");
    for (rank, &i) in order.iter().enumerate() {
        println!(
            "{:>4}  {:>12.1}  {:>9.4}  {:>5}  {:>4}  {}",
            rank + 1,
            reports[i].stall_program,
            reports[i].occupancy,
            kernels[i].reg_count(),
            options[i],
            names[i]
        );
    }
    println!("chosen: {}", names[chosen]);
    if let Some(dir) = &s.json_out {
        let ranking: Vec<Value> = order
            .iter()
            .enumerate()
            .map(|(rank, &i)| json!({ "rank": rank + 1, "name": names[i], "options": options[i], "report": reports[i] }))
            .collect();
        let value = json!({ "chosen": names[chosen], "ranking": ranking });
        write(&dir.join("select.json"), &(serde_json::to_string_pretty(&value)? + "\n"))?;
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(2);
        }
    }
}
