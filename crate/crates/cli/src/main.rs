//! Command-line front door: graph generation, assumption checks, spectral
//! reports, single simulations and the Monte Carlo studies, all driven by
//! JSON config files. Human-readable summaries go to stdout; machine
//! outputs (CSV/JSON) go to files under the output directory.
//!
//! Exit codes: 0 success, 1 config/validation failure, 2 runtime failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Deserialize;

use sumweight::engine::{run, Mode, RunConfig};
use sumweight::experiments::{
    clock_sweep, failure_study, failure_table_to_csv, manifest_json, slope_table_to_csv,
    slope_vs_bound_study, substream_seed, sweep_to_csv, Algorithm, GraphSpec, X0Spec,
};
use sumweight::models::{check_assumptions, pushsum_kempe_set};
use sumweight::spectral::kappa;
use sumweight::Graph;

#[derive(Parser)]
#[command(name = "sumweight", version, about = "Sum-weight gossip simulator and analyzer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random geometric graph and write it as JSON
    GenGraph(CommonArgs),
    /// Check assumptions (A1), (A2), (B) for a configured update family
    Check(CommonArgs),
    /// Compute the spectral convergence report for a configured family
    Spectral(CommonArgs),
    /// Run one simulation and write its trace CSV
    Simulate(CommonArgs),
    /// Empirical slope vs the kappa bound across graph sizes
    SlopeStudy(CommonArgs),
    /// Convergence rate under i.i.d. link failures
    FailureStudy(CommonArgs),
    /// Averaged MSE curves across clock tuning coefficients
    ClockSweep(CommonArgs),
}

#[derive(clap::Args)]
struct CommonArgs {
    /// Path to the JSON config for this subcommand
    #[arg(long)]
    config: PathBuf,
    /// Override the config's master seed
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for all file outputs (created if missing)
    #[arg(long, default_value = ".")]
    output_dir: PathBuf,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FamilySpec {
    algorithm: Algorithm,
    #[serde(default)]
    graph: Option<GraphSpec>,
    /// Node count, for the complete-graph push-sum family
    #[serde(default)]
    n: Option<usize>,
    /// Broadcast-gossip mixing weight
    #[serde(default)]
    gamma: Option<f64>,
    /// Link-failure probability for the BWGossip failure family
    #[serde(default)]
    p_e: Option<f64>,
}

impl FamilySpec {
    fn build(&self) -> anyhow::Result<sumweight::UpdateMatrixSet> {
        if let Algorithm::PushSum = self.algorithm {
            let n = match (self.n, &self.graph) {
                (Some(n), _) => n,
                (None, Some(spec)) => spec.build()?.n(),
                (None, None) => anyhow::bail!("push-sum needs `n` or a graph"),
            };
            return Ok(pushsum_kempe_set(n)?);
        }
        let spec = self.graph.as_ref().ok_or_else(|| anyhow::anyhow!("missing `graph`"))?;
        let g = spec.build()?;
        Ok(sumweight::experiments::build_family(
            self.algorithm,
            &g,
            self.gamma.unwrap_or(0.5),
            self.p_e,
        )?)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GenGraphConfig {
    #[serde(rename = "version")]
    _version: u32,
    n: usize,
    r0: f64,
    seed: u64,
    #[serde(default = "default_graph_output")]
    output: String,
}

fn default_graph_output() -> String {
    "graph.json".into()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FamilyConfig {
    #[serde(rename = "version")]
    _version: u32,
    family: FamilySpec,
    /// Optional JSON report output file
    #[serde(default)]
    output: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateConfig {
    #[serde(rename = "version")]
    _version: u32,
    family: FamilySpec,
    x0: X0Spec,
    mode: ModeSpec,
    ticks: u64,
    seed: u64,
    #[serde(default = "default_alpha")]
    alpha: f64,
    #[serde(default)]
    diagnostics: bool,
    #[serde(default = "default_trace_output")]
    output: String,
}

fn default_alpha() -> f64 {
    1.0
}

fn default_trace_output() -> String {
    "trace.csv".into()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
enum ModeSpec {
    Average,
    Sum { trigger: usize },
    SingleVariate,
}

impl ModeSpec {
    fn to_mode(&self) -> Mode {
        match self {
            ModeSpec::Average => Mode::Average,
            ModeSpec::Sum { trigger } => Mode::Sum { trigger: *trigger },
            ModeSpec::SingleVariate => Mode::SingleVariate,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SlopeStudyConfig {
    #[serde(rename = "version")]
    _version: u32,
    ns: Vec<usize>,
    r0: f64,
    algorithm: Algorithm,
    replicas: usize,
    seed: u64,
    #[serde(default = "default_slope_output")]
    output: String,
}

fn default_slope_output() -> String {
    "slope_study.csv".into()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FailureStudyConfig {
    #[serde(rename = "version")]
    _version: u32,
    graph: GraphSpec,
    p_e: Vec<f64>,
    replicas: usize,
    ticks: u64,
    seed: u64,
    #[serde(default = "default_failure_output")]
    output: String,
}

fn default_failure_output() -> String {
    "failure_study.csv".into()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ClockSweepConfig {
    #[serde(rename = "version")]
    _version: u32,
    graph: GraphSpec,
    alphas: Vec<f64>,
    replicas: usize,
    ticks: u64,
    seed: u64,
    #[serde(default = "default_sweep_output")]
    output: String,
}

fn default_sweep_output() -> String {
    "clock_sweep.csv".into()
}

fn write_output(dir: &Path, name: &str, bytes: &[u8]) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, bytes)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn mark(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "FAILED"
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // help/version requests are not errors
            use clap::error::ErrorKind;
            let kind = err.kind();
            let _ = err.print();
            return if matches!(kind, ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            };
        }
    };
    let (args, runner): (&CommonArgs, fn(&CommonArgs, serde_json::Value) -> anyhow::Result<()>) =
        match &cli.command {
            Command::GenGraph(a) => (a, run_gen_graph),
            Command::Check(a) => (a, run_check),
            Command::Spectral(a) => (a, run_spectral),
            Command::Simulate(a) => (a, run_simulate),
            Command::SlopeStudy(a) => (a, run_slope_study),
            Command::FailureStudy(a) => (a, run_failure_study),
            Command::ClockSweep(a) => (a, run_clock_sweep),
        };
    // config loading and schema validation: exit 1 on failure
    let raw = match std::fs::read_to_string(&args.config)
        .map_err(anyhow::Error::from)
        .and_then(|text| Ok(serde_json::from_str::<serde_json::Value>(&text)?))
    {
        Ok(raw) => raw,
        Err(err) => {
            eprintln!("config error: {err:#}");
            return ExitCode::from(1);
        }
    };
    match runner(args, raw) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let validation = err.is::<serde_json::Error>()
                || matches!(
                    err.downcast_ref::<sumweight::Error>(),
                    Some(
                        sumweight::Error::InvalidParameter(_)
                            | sumweight::Error::InvalidGraph(_)
                            | sumweight::Error::InvalidFamily(_)
                            | sumweight::Error::DimensionMismatch { .. }
                    )
                )
                || err.to_string().starts_with("config must declare");
            eprintln!("error: {err:#}");
            ExitCode::from(if validation { 1 } else { 2 })
        }
    }
}

fn parse<T: serde::de::DeserializeOwned>(raw: &serde_json::Value) -> anyhow::Result<T> {
    if raw.get("version").and_then(|v| v.as_u64()) != Some(1) {
        anyhow::bail!("config must declare \"version\": 1");
    }
    Ok(serde_json::from_value(raw.clone())?)
}

fn run_gen_graph(args: &CommonArgs, raw: serde_json::Value) -> anyhow::Result<()> {
    let mut cfg: GenGraphConfig = parse(&raw)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let g = Graph::generate_rgg(cfg.n, cfg.r0, cfg.seed)?;
    let doc = serde_json::to_string_pretty(&g.to_json())?;
    write_output(&args.output_dir, &cfg.output, doc.as_bytes())?;
    println!(
        "rgg n={} r0={} seed={}: {} edges, connected={}",
        cfg.n,
        cfg.r0,
        cfg.seed,
        g.edges().count(),
        g.is_connected()
    );
    Ok(())
}

fn run_check(args: &CommonArgs, raw: serde_json::Value) -> anyhow::Result<()> {
    let cfg: FamilyConfig = parse(&raw)?;
    let _ = args;
    let set = cfg.family.build()?;
    let report = check_assumptions(&set)?;
    println!("A1 row-stochastic:    {}", mark(report.a1_row_stochastic));
    println!("A2 positive diagonal: {}", mark(report.a2_positive_diagonal));
    println!("B  E[K] primitive:    {}", mark(report.b_primitive));
    if let Some(w) = report.witness_exponent {
        println!("   witness exponent:  {w}");
    }
    println!("m_K = {:.6}", report.m_k);
    println!("p_K = {:.6e}", report.p_k);
    if report.moments_estimated {
        println!("note: second moments are Monte Carlo estimates");
    }
    if let Some(name) = &cfg.output {
        let doc = serde_json::to_string_pretty(&serde_json::to_value(&report)?)?;
        write_output(&args.output_dir, name, doc.as_bytes())?;
    }
    Ok(())
}

fn run_spectral(args: &CommonArgs, raw: serde_json::Value) -> anyhow::Result<()> {
    let cfg: FamilyConfig = parse(&raw)?;
    let set = cfg.family.build()?;
    let report = kappa(&set)?;
    println!("n       = {}", report.n);
    println!("rho_R   = {:.12}", report.rho_r);
    println!("kappa   = {:.12}", report.kappa);
    println!("rho_sv  = {:.12}", report.rho_sv);
    println!("kappa'  = {:.12} (deflated bound)", report.boyd_kappa);
    if let Some(name) = &cfg.output {
        let doc = serde_json::to_string_pretty(&report.to_json())?;
        write_output(&args.output_dir, name, doc.as_bytes())?;
    }
    Ok(())
}

fn run_simulate(args: &CommonArgs, raw: serde_json::Value) -> anyhow::Result<()> {
    let mut cfg: SimulateConfig = parse(&raw)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let set = cfg.family.build()?;
    let x0 = cfg.x0.materialize(set.n(), substream_seed(cfg.seed, 1))?;
    let mut run_cfg = RunConfig::new(cfg.ticks, cfg.seed)
        .with_alpha(cfg.alpha)
        .with_diagnostics(cfg.diagnostics);
    run_cfg.seed = substream_seed(cfg.seed, 0);
    let trace = run(&set, &x0, cfg.mode.to_mode(), &run_cfg)?;
    let csv = trace.to_csv();
    write_output(&args.output_dir, &cfg.output, csv.as_bytes())?;
    let last = trace.records.last().expect("at least the t=0 record");
    println!(
        "{} ticks, target {:.6}, final se {:.3e}, final inf err {:.3e}",
        cfg.ticks, trace.target, last.se, last.inf_err
    );
    if let Some(w) = &trace.window {
        println!(
            "window diagnostics: L={}, {} positivity hits, bounds {}",
            w.window_len,
            w.positivity_hits.len(),
            mark(w.min_nonzero_bound_ok && w.weight_bound_ok && trace.product_bound_ok)
        );
    }
    Ok(())
}

fn run_slope_study(args: &CommonArgs, raw: serde_json::Value) -> anyhow::Result<()> {
    let mut cfg: SlopeStudyConfig = parse(&raw)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let rows = slope_vs_bound_study(&cfg.ns, cfg.r0, cfg.algorithm, cfg.replicas, cfg.seed)?;
    let csv = slope_table_to_csv(&rows);
    write_output(&args.output_dir, &cfg.output, csv.as_bytes())?;
    let manifest = manifest_json(&raw, cfg.seed, &[(&cfg.output, csv.as_bytes())]);
    write_output(
        &args.output_dir,
        "slope_study_manifest.json",
        serde_json::to_string_pretty(&manifest)?.as_bytes(),
    )?;
    for row in &rows {
        match &row.slope {
            Some(s) => println!(
                "n={:2}  |slope|={:.4}  kappa={:.4}  kappa'={:.4}",
                row.n,
                s.slope.abs(),
                row.report.kappa,
                row.report.boyd_kappa
            ),
            None => println!("n={:2}  exact mixing (kappa = inf)", row.n),
        }
    }
    Ok(())
}

fn run_failure_study(args: &CommonArgs, raw: serde_json::Value) -> anyhow::Result<()> {
    let mut cfg: FailureStudyConfig = parse(&raw)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let g = cfg.graph.build()?;
    let rows = failure_study(&g, &cfg.p_e, cfg.replicas, cfg.ticks, cfg.seed)?;
    let csv = failure_table_to_csv(&rows);
    write_output(&args.output_dir, &cfg.output, csv.as_bytes())?;
    let manifest = manifest_json(&raw, cfg.seed, &[(&cfg.output, csv.as_bytes())]);
    write_output(
        &args.output_dir,
        "failure_study_manifest.json",
        serde_json::to_string_pretty(&manifest)?.as_bytes(),
    )?;
    for row in &rows {
        println!(
            "p_e={:.2}  |slope|={:.4}  kappa={:.4}",
            row.p_e,
            row.slope.slope.abs(),
            row.report.kappa
        );
        if row.report.assumptions.moments_estimated {
            println!("        (second moments Monte Carlo estimated)");
        }
    }
    Ok(())
}

fn run_clock_sweep(args: &CommonArgs, raw: serde_json::Value) -> anyhow::Result<()> {
    let mut cfg: ClockSweepConfig = parse(&raw)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let g = cfg.graph.build()?;
    let curves = clock_sweep(&g, &cfg.alphas, cfg.replicas, cfg.ticks, cfg.seed)?;
    let csv = sweep_to_csv(&cfg.alphas, &curves);
    write_output(&args.output_dir, &cfg.output, csv.as_bytes())?;
    let manifest = manifest_json(&raw, cfg.seed, &[(&cfg.output, csv.as_bytes())]);
    write_output(
        &args.output_dir,
        "clock_sweep_manifest.json",
        serde_json::to_string_pretty(&manifest)?.as_bytes(),
    )?;
    for (alpha, curve) in cfg.alphas.iter().zip(&curves) {
        println!("alpha={alpha}: terminal mse {:.3e}", curve.last().unwrap());
    }
    Ok(())
}
