//! Monte Carlo studies: averaged MSE curves, log-slope regression against
//! the spectral rate `kappa`, clock-coefficient sweeps and the link-failure
//! sweep. All randomness flows from a single 64-bit seed through
//! [`substream_seed`].

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::engine::{run, Mode, RunConfig};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::models::{
    broadcast_gossip_set, bwgossip_failure_set, bwgossip_set, pushsum_kempe_set,
    random_gossip_set, UpdateMatrixSet,
};
use crate::spectral::{contraction_matrix, gelfand_spectral_radius, kappa, SpectralReport};

/// MSE values below this are treated as the floating-point floor and
/// excluded from slope regression windows.
pub const MSE_FLOOR: f64 = 1e-24;

/// Deterministic substream derivation (splitmix64 finalizer over the seed
/// and the stream index); recorded in manifests so every figure is
/// reproducible.
pub fn substream_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum GraphSpec {
    Rgg { n: usize, r0: f64, seed: u64 },
    Edges { n: usize, edges: Vec<[usize; 2]> },
}

impl GraphSpec {
    pub fn build(&self) -> Result<Graph> {
        match self {
            GraphSpec::Rgg { n, r0, seed } => Graph::generate_rgg(*n, *r0, *seed),
            GraphSpec::Edges { n, edges } => {
                let list: Vec<(usize, usize)> = edges.iter().map(|e| (e[0], e[1])).collect();
                Graph::from_edge_list(*n, &list)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Bwgossip,
    RandomGossip,
    PushSum,
    BroadcastGossip,
}

/// Build the update family for an algorithm on a graph. `gamma` is the
/// broadcast-gossip mixing weight; `p_e` switches BWGossip to the
/// link-failure family.
pub fn build_family(
    algorithm: Algorithm,
    g: &Graph,
    gamma: f64,
    p_e: Option<f64>,
) -> Result<UpdateMatrixSet> {
    match algorithm {
        Algorithm::Bwgossip => match p_e {
            Some(p) => bwgossip_failure_set(g, p),
            None => bwgossip_set(g),
        },
        Algorithm::RandomGossip => random_gossip_set(g),
        Algorithm::PushSum => pushsum_kempe_set(g.n()),
        Algorithm::BroadcastGossip => broadcast_gossip_set(g, gamma),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum X0Spec {
    Explicit(Vec<f64>),
    /// Per-replica i.i.d. standard normal initial values.
    Normal,
}

impl X0Spec {
    pub fn materialize(&self, n: usize, replica_seed: u64) -> Result<Vec<f64>> {
        match self {
            X0Spec::Explicit(v) => {
                if v.len() != n {
                    return Err(Error::DimensionMismatch { expected: n, got: v.len() });
                }
                Ok(v.clone())
            }
            X0Spec::Normal => {
                let mut rng = ChaCha12Rng::seed_from_u64(replica_seed);
                Ok((0..n).map(|_| StandardNormal.sample(&mut rng)).collect())
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct MonteCarloConfig {
    pub replicas: usize,
    pub ticks: u64,
    pub alpha: f64,
    pub seed: u64,
}

/// Average the per-tick squared error over independent replicas. Replica
/// `r` runs with seed `substream_seed(seed, 2r)` and draws its initial
/// values (when `Normal`) with `substream_seed(seed, 2r + 1)`.
pub fn monte_carlo_mse(
    set: &UpdateMatrixSet,
    x0: &X0Spec,
    mode: Mode,
    cfg: &MonteCarloConfig,
) -> Result<Vec<f64>> {
    if cfg.replicas < 1 || cfg.ticks < 1 {
        return Err(Error::InvalidParameter("need replicas >= 1 and ticks >= 1".into()));
    }
    let n = set.n();
    let curves: Vec<Vec<f64>> = (0..cfg.replicas)
        .into_par_iter()
        .map(|r| -> Result<Vec<f64>> {
            let run_seed = substream_seed(cfg.seed, 2 * r as u64);
            let x0_vec = x0.materialize(n, substream_seed(cfg.seed, 2 * r as u64 + 1))?;
            let run_cfg = RunConfig::new(cfg.ticks, run_seed).with_alpha(cfg.alpha);
            let trace = run(set, &x0_vec, mode, &run_cfg)?;
            Ok(trace.records.iter().map(|rec| rec.se).collect())
        })
        .collect::<Result<_>>()?;
    let len = cfg.ticks as usize + 1;
    let mut mse = vec![0.0; len];
    for curve in &curves {
        for (acc, v) in mse.iter_mut().zip(curve) {
            *acc += v;
        }
    }
    for v in &mut mse {
        *v /= cfg.replicas as f64;
    }
    Ok(mse)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlopeEstimate {
    /// Per-tick decay rate of `ln(MSE)` (negative for decaying curves).
    pub slope: f64,
    pub fit_window: (usize, usize),
    pub r_squared: f64,
}

/// Ordinary least squares of `ln(curve[t])` against `t` over the inclusive
/// window. Rejects windows containing non-positive values.
pub fn empirical_slope(curve: &[f64], window: (usize, usize)) -> Result<SlopeEstimate> {
    let (lo, hi) = window;
    if lo >= hi || hi >= curve.len() {
        return Err(Error::InvalidParameter(format!(
            "bad fit window [{lo}, {hi}] for curve of length {}",
            curve.len()
        )));
    }
    if curve[lo..=hi].iter().any(|&v| v <= 0.0) {
        return Err(Error::NonPositiveInWindow);
    }
    let m = (hi - lo + 1) as f64;
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for t in lo..=hi {
        let x = t as f64;
        let y = curve[t].ln();
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
        syy += y * y;
    }
    let denom = m * sxx - sx * sx;
    let slope = (m * sxy - sx * sy) / denom;
    let ss_tot = syy - sy * sy / m;
    let r_squared = if ss_tot <= 0.0 {
        1.0
    } else {
        let intercept = (sy - slope * sx) / m;
        let mut ss_res = 0.0;
        for t in lo..=hi {
            let resid = curve[t].ln() - (slope * t as f64 + intercept);
            ss_res += resid * resid;
        }
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    };
    Ok(SlopeEstimate { slope, fit_window: window, r_squared })
}

/// Late-region window: skip the initial transient (first 20% of the
/// horizon) and everything at or below the floating-point floor.
pub fn default_fit_window(curve: &[f64]) -> Option<(usize, usize)> {
    let lo = curve.len() / 5;
    let hi = curve.iter().rposition(|&v| v > MSE_FLOOR)?;
    if hi > lo + 4 {
        Some((lo, hi))
    } else {
        None
    }
}

/// One row of the slope-vs-bound table.
#[derive(Debug, Clone)]
pub struct SlopeRow {
    pub n: usize,
    /// Absent when the family mixes in finite time (`kappa = +inf`).
    pub slope: Option<SlopeEstimate>,
    pub report: SpectralReport,
    /// Gelfand-limit recomputation of `rho(R)`, for cross-checking.
    pub rho_r_gelfand: f64,
    /// How many RGG seeds were skipped because the sample was disconnected.
    pub resampled: u32,
}

/// Sample a connected RGG, resampling with incremented seeds.
pub fn connected_rgg(n: usize, r0: f64, seed: u64) -> Result<(Graph, u32)> {
    for attempt in 0..200u32 {
        let g = Graph::generate_rgg(n, r0, seed + attempt as u64)?;
        if g.is_connected() {
            return Ok((g, attempt));
        }
    }
    Err(Error::Disconnected)
}

/// Per node count: build a connected RGG, compute the spectral report, run
/// the Monte Carlo MSE curve and regress its logarithm.
pub fn slope_vs_bound_study(
    ns: &[usize],
    r0: f64,
    algorithm: Algorithm,
    replicas: usize,
    seed: u64,
) -> Result<Vec<SlopeRow>> {
    ns.iter()
        .enumerate()
        .map(|(idx, &n)| {
            let (g, resampled) = connected_rgg(n, r0, substream_seed(seed, idx as u64))?;
            let set = build_family(algorithm, &g, 0.5, None)?;
            let report = kappa(&set)?;
            let rho_r_gelfand = gelfand_spectral_radius(&contraction_matrix(&set)?, 30);
            let slope = if report.kappa.is_finite() {
                // enough horizon to traverse ~45 nats of decay
                let ticks = ((45.0 / report.kappa).ceil() as u64).clamp(200, 60_000);
                let mc = MonteCarloConfig {
                    replicas,
                    ticks,
                    alpha: 1.0,
                    seed: substream_seed(seed, 1000 + idx as u64),
                };
                let curve = monte_carlo_mse(&set, &X0Spec::Normal, Mode::Average, &mc)?;
                let window = default_fit_window(&curve)
                    .ok_or_else(|| Error::InvalidParameter("curve decayed too fast".into()))?;
                Some(empirical_slope(&curve, window)?)
            } else {
                None
            };
            Ok(SlopeRow { n, slope, report, rho_r_gelfand, resampled })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct FailureRow {
    pub p_e: f64,
    pub slope: SlopeEstimate,
    pub report: SpectralReport,
    pub rho_r_gelfand: f64,
}

/// Link-failure sweep on a fixed graph: for each failure probability,
/// build the modified family, compute its rate and regress the empirical
/// curve.
pub fn failure_study(
    g: &Graph,
    p_e_list: &[f64],
    replicas: usize,
    ticks: u64,
    seed: u64,
) -> Result<Vec<FailureRow>> {
    p_e_list
        .iter()
        .enumerate()
        .map(|(idx, &p_e)| {
            let set = bwgossip_failure_set(g, p_e)?;
            let report = kappa(&set)?;
            let rho_r_gelfand = gelfand_spectral_radius(&contraction_matrix(&set)?, 30);
            let mc = MonteCarloConfig {
                replicas,
                ticks,
                alpha: 1.0,
                seed: substream_seed(seed, idx as u64),
            };
            let curve = monte_carlo_mse(&set, &X0Spec::Normal, Mode::Average, &mc)?;
            let window = default_fit_window(&curve)
                .ok_or_else(|| Error::InvalidParameter("curve decayed too fast".into()))?;
            let slope = empirical_slope(&curve, window)?;
            Ok(FailureRow { p_e, slope, report, rho_r_gelfand })
        })
        .collect()
}

/// One averaged MSE curve per clock coefficient, under identical replica
/// seeds so `alpha = 1` reproduces the plain run.
pub fn clock_sweep(
    g: &Graph,
    alphas: &[f64],
    replicas: usize,
    ticks: u64,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let set = bwgossip_set(g)?;
    alphas
        .iter()
        .map(|&alpha| {
            let mc = MonteCarloConfig { replicas, ticks, alpha, seed };
            monte_carlo_mse(&set, &X0Spec::Normal, Mode::Average, &mc)
        })
        .collect()
}

fn fmt(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.16e}")
    }
}

/// CSV for a single averaged curve: `t,mse`.
pub fn curve_to_csv(curve: &[f64]) -> String {
    let mut out = String::from("t,mse\n");
    for (t, &v) in curve.iter().enumerate() {
        out.push_str(&format!("{t},{}\n", fmt(v)));
    }
    out
}

/// CSV for a clock sweep: `t,mse_<alpha>...` columns in input order.
pub fn sweep_to_csv(alphas: &[f64], curves: &[Vec<f64>]) -> String {
    let mut out = String::from("t");
    for a in alphas {
        out.push_str(&format!(",mse_alpha{a}"));
    }
    out.push('\n');
    let len = curves.first().map_or(0, |c| c.len());
    for t in 0..len {
        out.push_str(&t.to_string());
        for c in curves {
            out.push(',');
            out.push_str(&fmt(c[t]));
        }
        out.push('\n');
    }
    out
}

/// CSV for the slope-vs-bound table: `n,slope,kappa,boyd_kappa`.
pub fn slope_table_to_csv(rows: &[SlopeRow]) -> String {
    let mut out = String::from("n,slope,kappa,boyd_kappa,r_squared,resampled\n");
    for row in rows {
        let (slope, r2) = match &row.slope {
            Some(s) => (fmt(s.slope), fmt(s.r_squared)),
            None => ("exact".into(), "exact".into()),
        };
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.n,
            slope,
            fmt(row.report.kappa),
            fmt(row.report.boyd_kappa),
            r2,
            row.resampled
        ));
    }
    out
}

/// CSV for the failure sweep: `p_e,slope,kappa`.
pub fn failure_table_to_csv(rows: &[FailureRow]) -> String {
    let mut out = String::from("p_e,slope,kappa,r_squared\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.p_e,
            fmt(row.slope.slope),
            fmt(row.report.kappa),
            fmt(row.slope.r_squared)
        ));
    }
    out
}

/// Study manifest: the configuration document, the master seed, and a
/// SHA-256 content hash per emitted output.
pub fn manifest_json(
    config: &serde_json::Value,
    seed: u64,
    outputs: &[(&str, &[u8])],
) -> serde_json::Value {
    let hashes: serde_json::Map<String, serde_json::Value> = outputs
        .iter()
        .map(|(name, bytes)| {
            let mut hasher = Sha256::new();
            hasher.update(bytes);
            (name.to_string(), serde_json::json!(format!("{:x}", hasher.finalize())))
        })
        .collect();
    serde_json::json!({
        "config": config,
        "seed": seed,
        "outputs": hashes,
    })
}
