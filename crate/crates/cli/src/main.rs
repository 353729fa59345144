use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use stocorient::corralg::kdo::KdoMode;
use stocorient::corralg::lp::LpMode;
use stocorient::corralg::pipeline::{end_to_end, E2eParams, Scale};
use stocorient::field::{parse_rational, rational_to_f64};
use stocorient::gapsearch::{gap_report_with, BeamParams, SearchMode};
use stocorient::lowerbound::{build_tree, check_structure, rational_p, to_rational_instance, Variant};
use stocorient::policy::{eval_na_exact, eval_na_mc};
use stocorient::reduce::{run_reduce, StarParams};
use stocorient::report::{export_gap_csv_tagged, policy_from_json, policy_to_json};
use stocorient::selftest::run_selftest;
use stocorient::{validate_instance, Instance, Rational};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(name = "stocorient", version, about = "Stochastic orienteering experiments")]
struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (falls back to STOCORIENT_THREADS).
    #[arg(long, global = true, env = "STOCORIENT_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a lower-bound instance.
    GenLb(GenLb),
    /// Check an instance file.
    Validate(Validate),
    /// Evaluate a non-adaptive policy.
    Eval(Eval),
    /// Adaptivity-gap table as CSV.
    Gap(Gap),
    /// Adaptive-to-non-adaptive reduction.
    Reduce(Reduce),
    /// LP-based approximation for correlated instances.
    CorrApprox(CorrApprox),
    /// Run the invariant suite.
    Selftest,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Dtree,
    Utree,
    Line,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Dtree => Variant::DirectedTree,
            VariantArg::Utree => Variant::UndirectedTree,
            VariantArg::Line => Variant::Line,
        }
    }
}

#[derive(Args)]
struct GenLb {
    #[arg(long = "L")]
    levels: u32,
    #[arg(long, value_enum)]
    variant: VariantArg,
    #[arg(long)]
    out: PathBuf,
    /// Also write the structural claim report.
    #[arg(long)]
    claims: Option<PathBuf>,
}

#[derive(Args)]
struct Validate {
    instance: PathBuf,
}

#[derive(Args)]
struct Eval {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long)]
    policy: PathBuf,
    /// Exact evaluation (the default unless --mc is given).
    #[arg(long)]
    exact: bool,
    /// Monte Carlo samples.
    #[arg(long)]
    mc: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Auto,
    Exhaustive,
    Structured,
    Heuristic,
}

#[derive(Args)]
struct Gap {
    /// Height or inclusive range such as `2..4`.
    #[arg(long = "L", value_parser = parse_range)]
    levels: (u32, u32),
    #[arg(long, value_enum, num_args = 1.., default_values_t = [VariantArg::Line])]
    variant: Vec<VariantArg>,
    #[arg(long, value_enum, default_value = "auto")]
    mode: ModeArg,
    #[arg(long, default_value_t = 16)]
    beam_width: usize,
    #[arg(long, default_value_t = 1024)]
    samples: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Reduce {
    #[arg(long)]
    instance: PathBuf,
    /// `auto` or a rational at least 12.
    #[arg(long = "K", default_value = "auto")]
    k: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum LpModeArg {
    Dense,
    Mwu,
}

#[derive(Clone, Copy, ValueEnum)]
enum OracleArg {
    Exact,
    Greedy,
}

#[derive(Args)]
struct CorrApprox {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long = "K", default_value = "auto")]
    k: String,
    #[arg(long, default_value_t = 0.05)]
    eps: f64,
    #[arg(long, value_enum, default_value = "dense")]
    mode: LpModeArg,
    #[arg(long, value_enum, default_value = "exact")]
    oracle: OracleArg,
    /// Rounding trials per guess.
    #[arg(long, default_value_t = 32)]
    seeds: u64,
    /// Number of sampled guesses; enumerates all guesses when omitted and
    /// the instance is small.
    #[arg(long)]
    guesses: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

/// Failure after argument parsing.
#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn invalid(e: impl std::fmt::Display) -> CliError {
    CliError::Invalid(e.to_string())
}

fn parse_range(s: &str) -> Result<(u32, u32), String> {
    let bad = || format!("expected N or A..B, got `{s}`");
    match s.split_once("..") {
        Some((a, b)) => {
            let a: u32 = a.parse().map_err(|_| bad())?;
            let b: u32 = b.trim_start_matches('=').parse().map_err(|_| bad())?;
            if a > b {
                return Err(bad());
            }
            Ok((a, b))
        }
        None => s.parse().map(|v| (v, v)).map_err(|_| bad()),
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, data: &[u8]) -> Result<(), CliError> {
    fs::write(path, data).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json(path: &Path, v: &Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(v).expect("json serialises");
    text.push('\n');
    write(path, text.as_bytes())
}

fn load_instance(path: &Path) -> Result<Instance<Rational>, CliError> {
    Instance::from_json_str(&read(path)?).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

/// Tool version and a hash of the settings that determine the output.
fn provenance(config: Value) -> Value {
    let hash = hex::encode(Sha256::digest(config.to_string().as_bytes()));
    json!({ "tool": "stocorient", "version": VERSION, "config_hash": hash, "config": config })
}

fn file_hash(path: &Path) -> Result<String, CliError> {
    Ok(hex::encode(Sha256::digest(read(path)?.as_bytes())))
}

fn parse_k(s: &str, inst: &Instance<Rational>) -> Result<Rational, CliError> {
    if s == "auto" {
        return Ok(StarParams::default_k(inst.budget()));
    }
    parse_rational(s).ok_or_else(|| CliError::Invalid(format!("bad K `{s}`")))
}

fn gen_lb(a: &GenLb) -> Result<(), CliError> {
    let variant = Variant::from(a.variant);
    let tree = build_tree(a.levels).map_err(invalid)?;
    let inst = to_rational_instance(&tree, variant);
    let meta = provenance(json!({
        "command": "gen-lb",
        "L": a.levels,
        "variant": variant.to_string(),
    }));
    let mut meta = meta;
    meta["p"] = json!(rational_p(a.levels).to_string());
    write_json(&a.out, &inst.to_json_value(Some(meta.clone())))?;
    if let Some(path) = &a.claims {
        let report = check_structure(&tree);
        let mut v = serde_json::to_value(&report).expect("report serialises");
        v["meta"] = meta;
        write_json(path, &v)?;
        if !report.all_passed() {
            return Err(CliError::Invalid("structural claims failed".into()));
        }
    }
    Ok(())
}

fn validate(a: &Validate) -> Result<(), CliError> {
    let inst = load_instance(&a.instance)?;
    let report = validate_instance(&inst);
    if report.is_valid() {
        println!("valid: n = {}, budget = {}", inst.n(), inst.budget());
        Ok(())
    } else {
        let text = serde_json::to_string_pretty(&report).expect("report serialises");
        Err(CliError::Invalid(format!("invalid instance:\n{text}")))
    }
}

fn eval(a: &Eval, seed: u64) -> Result<(), CliError> {
    let inst = load_instance(&a.instance)?;
    let raw: Value = serde_json::from_str(&read(&a.policy)?).map_err(invalid)?;
    let pol = policy_from_json(raw).map_err(invalid)?;
    pol.validate(inst.n()).map_err(invalid)?;
    if a.exact || a.mc.is_none() {
        let v = eval_na_exact(&inst, &pol).map_err(invalid)?;
        println!("exact {v} {:.12}", rational_to_f64(&v));
    }
    if let Some(samples) = a.mc {
        let est = eval_na_mc(&inst, &pol, samples, seed);
        println!("mc {:.12} stderr {:.12} samples {}", est.mean, est.stderr, est.samples);
    }
    Ok(())
}

fn gap(a: &Gap, seed: u64) -> Result<(), CliError> {
    let params = BeamParams {
        width: a.beam_width,
        samples: a.samples,
        seed,
        ..BeamParams::default()
    };
    let mode = match a.mode {
        ModeArg::Auto => None,
        ModeArg::Exhaustive => Some(SearchMode::Exhaustive),
        ModeArg::Structured => Some(SearchMode::Structured),
        ModeArg::Heuristic => Some(SearchMode::Heuristic),
    };
    let variants: Vec<Variant> = a.variant.iter().map(|&v| v.into()).collect();
    let mut reports = Vec::new();
    for levels in a.levels.0..=a.levels.1 {
        for &v in &variants {
            reports.push(gap_report_with(levels, v, mode, params).map_err(invalid)?);
        }
    }
    let meta = provenance(json!({
        "command": "gap",
        "L": [a.levels.0, a.levels.1],
        "variant": variants.iter().map(|v| v.to_string()).collect::<Vec<_>>(),
        "mode": mode.map(|m| m.to_string()),
        "beam_width": a.beam_width,
        "samples": a.samples,
        "seed": seed,
    }));
    let tags = [
        ("tool_version", VERSION.to_string()),
        ("config_hash", meta["config_hash"].as_str().unwrap_or_default().to_string()),
    ];
    let mut buf = Vec::new();
    export_gap_csv_tagged(&reports, &tags, &mut buf).map_err(invalid)?;
    write(&a.out, &buf)
}

fn reduce(a: &Reduce) -> Result<(), CliError> {
    let inst = load_instance(&a.instance)?;
    let k = parse_k(&a.k, &inst)?;
    let params = StarParams::new(&inst, k.clone()).map_err(invalid)?;
    let out = run_reduce(&inst, params).map_err(invalid)?;
    let meta = provenance(json!({
        "command": "reduce",
        "instance_sha256": file_hash(&a.instance)?,
        "K": k.to_string(),
    }));
    let mut pol = policy_to_json(&out.policy);
    pol["meta"] = meta.clone();
    write_json(&a.out, &pol)?;
    if let Some(path) = &a.report {
        let ratio = if out.policy_value > Rational::from_integer(0.into()) {
            json!((out.dp_value.clone() / out.policy_value.clone()).to_string())
        } else {
            Value::Null
        };
        let report = json!({
            "meta": meta,
            "K": out.params.k.to_string(),
            "bands": out.params.bands,
            "dp_value": out.dp_value.to_string(),
            "star_nodes": out.stars,
            "sigma": out.sigma.nodes.iter().map(|n| json!({
                "tree_node": n.tree_node,
                "vertex": n.vertex,
                "travel": n.travel.to_string(),
                "observed": n.observed.to_string(),
                "rbar": n.rbar.to_string(),
            })).collect::<Vec<_>>(),
            "truncation_loss": out.sigma.lost.to_string(),
            "portals": {
                "positions": out.portals.positions,
                "locations": out.portals.locations,
            },
            "segments": out.segments.iter().map(|s| json!({
                "j": s.j,
                "start": s.start,
                "end": s.end,
                "mid": s.mid,
                "e": s.e,
                "length_bound": s.length_bound.to_string(),
                "path": s.path,
                "profit": s.profit.to_string(),
                "kept_profit": s.kept_profit.to_string(),
            })).collect::<Vec<_>>(),
            "policy_value": out.policy_value.to_string(),
            "policy_value_f64": rational_to_f64(&out.policy_value),
            "dp_over_policy": ratio,
        });
        write_json(path, &report)?;
    }
    println!("policy value {} ({:.12})", out.policy_value, rational_to_f64(&out.policy_value));
    Ok(())
}

fn corr_approx(a: &CorrApprox, seed: u64) -> Result<(), CliError> {
    let inst = load_instance(&a.instance)?;
    let k = parse_k(&a.k, &inst)?;
    let params = E2eParams {
        k: Some(k.clone()),
        eps: a.eps,
        lp_mode: match a.mode {
            LpModeArg::Dense => LpMode::Dense,
            LpModeArg::Mwu => LpMode::Mwu,
        },
        oracle: match a.oracle {
            OracleArg::Exact => KdoMode::Exact,
            OracleArg::Greedy => KdoMode::Greedy,
        },
        trials: a.seeds,
        seed,
        scale: a.guesses.map(|guesses| Scale::Sampled { guesses }),
    };
    let r = end_to_end(&inst, &params).map_err(invalid)?;
    let meta = provenance(json!({
        "command": "corr-approx",
        "instance_sha256": file_hash(&a.instance)?,
        "K": k.to_string(),
        "eps": a.eps,
        "mode": params.lp_mode,
        "oracle": params.oracle,
        "seeds": a.seeds,
        "guesses": a.guesses,
        "seed": seed,
    }));
    let result = json!({
        "meta": meta,
        "scale": r.scale,
        "K": r.k.to_string(),
        "guesses": r.guesses,
        "best_guess": r.best_guess,
        "best_lp_objective": r.best_lp_objective,
        "policy": policy_to_json(&r.policy),
        "value": r.value.to_string(),
        "value_f64": rational_to_f64(&r.value),
        "dp_value": r.dp_value.as_ref().map(|v| v.to_string()),
        "ratio": r.ratio().filter(|x| x.is_finite()),
    });
    write_json(&a.out, &result)?;
    println!("value {} ({:.12})", r.value, rational_to_f64(&r.value));
    Ok(())
}

fn selftest() -> Result<(), CliError> {
    let mut failed = 0;
    for c in run_selftest() {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        failed += usize::from(!c.passed);
    }
    if failed > 0 {
        return Err(CliError::Invalid(format!("{failed} checks failed")));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let res = match &cli.command {
        Command::GenLb(a) => gen_lb(a),
        Command::Validate(a) => validate(a),
        Command::Eval(a) => eval(a, cli.seed),
        Command::Gap(a) => gap(a, cli.seed),
        Command::Reduce(a) => reduce(a),
        Command::CorrApprox(a) => corr_approx(a, cli.seed),
        Command::Selftest => selftest(),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
