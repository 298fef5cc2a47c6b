//! Sum-weight gossip execution: maintain the `(s, w)` pair, sample
//! activations (uniform or weight-managed clocks), apply sampled update
//! matrices, and record the error diagnostics per tick.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::models::{b2_window_bound, UpdateMatrixSet};

/// What the run estimates and how the state is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// `s(0) = x(0)`, `w(0) = 1`; estimates converge to the average.
    Average,
    /// `w(0) = e_trigger`; estimates converge to the sum of the initial
    /// values.
    Sum { trigger: usize },
    /// Doubly-stochastic families exchanging a single variable; the weights
    /// stay exactly 1 and are never updated.
    SingleVariate,
}

/// Per-node `(s, w)` pair plus the tick counter.
#[derive(Debug, Clone)]
pub struct SumWeightState {
    pub s: DVector<f64>,
    pub w: DVector<f64>,
    pub t: u64,
    pub mode: Mode,
}

/// Initialize a run from the initial measurements.
pub fn init_state(x0: &[f64], mode: Mode) -> Result<SumWeightState> {
    let n = x0.len();
    if n < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 nodes, got {n}")));
    }
    let s = DVector::from_column_slice(x0);
    let w = match mode {
        Mode::Average | Mode::SingleVariate => DVector::from_element(n, 1.0),
        Mode::Sum { trigger } => {
            if trigger >= n {
                return Err(Error::InvalidParameter(format!(
                    "trigger node {trigger} out of range for n = {n}"
                )));
            }
            let mut w = DVector::zeros(n);
            w[trigger] = 1.0;
            w
        }
    };
    Ok(SumWeightState { s, w, t: 0, mode })
}

/// Apply one sampled update matrix in the row-vector convention.
pub fn step(state: &mut SumWeightState, k: &DMatrix<f64>) -> Result<()> {
    let n = state.s.len();
    if k.nrows() != n || k.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, got: k.nrows() });
    }
    if state.mode == Mode::SingleVariate {
        for j in 0..n {
            let col_sum: f64 = k.column(j).iter().sum();
            if (col_sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidFamily(
                    "single-variate mode needs doubly-stochastic updates".into(),
                ));
            }
        }
        state.s = (state.s.transpose() * k).transpose();
    } else {
        state.s = (state.s.transpose() * k).transpose();
        state.w = (state.w.transpose() * k).transpose();
    }
    state.t += 1;
    Ok(())
}

/// Per-node estimates `s_i / w_i`; a non-positive weight yields `None`
/// (legitimate at early ticks of Sum mode).
pub fn estimates(state: &SumWeightState) -> Vec<Option<f64>> {
    state
        .s
        .iter()
        .zip(state.w.iter())
        .map(|(&s, &w)| if w > 0.0 { Some(s / w) } else { None })
        .collect()
}

/// Activation rates `lambda_i = alpha + (1 - alpha) w_i`, normalized into
/// sampling probabilities.
pub fn activation_probabilities(weights: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if weights.iter().any(|&w| w < 0.0) {
        return Err(Error::InvalidParameter("negative weight".into()));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidParameter(format!("alpha must be in [0,1], got {alpha}")));
    }
    let rates: Vec<f64> = weights.iter().map(|&w| alpha + (1.0 - alpha) * w).collect();
    let total: f64 = rates.iter().sum();
    Ok(rates.iter().map(|r| r / total).collect())
}

/// Draw the waking node under the weight-managed clocks.
pub fn sample_activation<R: Rng>(weights: &[f64], alpha: f64, rng: &mut R) -> Result<usize> {
    let probs = activation_probabilities(weights, alpha)?;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return Ok(i);
        }
    }
    Ok(probs.len() - 1)
}

/// One recorded tick of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub t: u64,
    /// Squared error over defined estimates, against the mode's target.
    pub se: f64,
    pub inf_err: f64,
    pub sum_s: f64,
    pub sum_w: f64,
    pub min_w: f64,
    pub psi1: Option<f64>,
    pub psi2: Option<f64>,
}

/// Positivity tracking of disjoint length-`L` window products.
#[derive(Debug, Clone)]
pub struct WindowDiagnostics {
    pub window_len: usize,
    /// Tick indices at which a window product was elementwise positive.
    pub positivity_hits: Vec<u64>,
    /// All positive window-product entries were at least `m_K^L`.
    pub min_nonzero_bound_ok: bool,
    /// At every positivity hit the minimum weight was at least `m_K^L`
    /// (checked in Average mode only, where the weights sum to `N`).
    pub weight_bound_ok: bool,
}

/// Full record of one run.
#[derive(Debug, Clone)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
    /// Consensus target: the initial average, or the initial sum in Sum mode.
    pub target: f64,
    pub window: Option<WindowDiagnostics>,
    /// All positive entries of the running product `P(t)` stayed at least
    /// `m_K^t` (tracked only with diagnostics enabled).
    pub product_bound_ok: bool,
}

impl Trace {
    /// CSV export with a 17-significant-digit float format.
    pub fn to_csv(&self) -> String {
        let with_psi = self.records.first().is_some_and(|r| r.psi1.is_some());
        let mut out = String::from("t,se,inf_err,sum_s,sum_w,min_w");
        if with_psi {
            out.push_str(",psi1,psi2");
        }
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                r.t, r.se, r.inf_err, r.sum_s, r.sum_w, r.min_w
            ));
            if with_psi {
                out.push_str(&format!(
                    ",{:.16e},{:.16e}",
                    r.psi1.unwrap_or(f64::INFINITY),
                    r.psi2.unwrap_or(f64::INFINITY)
                ));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub ticks: u64,
    /// Clock tuning coefficient; 1 is the plain uniform clock.
    pub alpha: f64,
    pub seed: u64,
    /// Maintain the running matrix product and the Psi1/Psi2 bound terms
    /// (costs O(N^3) per tick).
    pub diagnostics: bool,
    /// Window length for positivity tracking; defaults to the constructive
    /// B2 bound when unset.
    pub window_len: Option<usize>,
}

impl RunConfig {
    pub fn new(ticks: u64, seed: u64) -> RunConfig {
        RunConfig { ticks, alpha: 1.0, seed, diagnostics: false, window_len: None }
    }

    pub fn with_alpha(mut self, alpha: f64) -> RunConfig {
        self.alpha = alpha;
        self
    }

    pub fn with_diagnostics(mut self, on: bool) -> RunConfig {
        self.diagnostics = on;
        self
    }
}

/// Execute a run: `ticks` sequential draws and updates, recording one trace
/// row per tick (plus the initial row). Identical configuration gives an
/// identical trace.
pub fn run(
    set: &UpdateMatrixSet,
    x0: &[f64],
    mode: Mode,
    cfg: &RunConfig,
) -> Result<Trace> {
    let n = set.n();
    if x0.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: x0.len() });
    }
    let mut state = init_state(x0, mode)?;
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let target = match mode {
        Mode::Sum { .. } => x0.iter().sum::<f64>(),
        _ => x0.iter().sum::<f64>() / n as f64,
    };
    let x0_sq: f64 = x0.iter().map(|v| v * v).sum();
    let m_k = set.min_positive_entry();

    let mut diag = if cfg.diagnostics {
        let window_len = match cfg.window_len {
            Some(l) if l >= 1 => l,
            Some(_) => return Err(Error::InvalidParameter("window length must be >= 1".into())),
            None => b2_window_bound(set)?,
        };
        Some(DiagnosticState::new(n, window_len))
    } else {
        None
    };

    let mut records = Vec::with_capacity(cfg.ticks as usize + 1);
    records.push(observe(&state, target, x0_sq, diag.as_ref()));

    for _ in 0..cfg.ticks {
        let k = if set.broadcaster_indexed() {
            let weights: Vec<f64> = state.w.iter().copied().collect();
            let i = sample_activation(&weights, cfg.alpha, &mut rng)?;
            set.sample_for_broadcaster(i, &mut rng)?
        } else {
            set.sample(&mut rng)
        };
        step(&mut state, &k)?;
        if let Some(d) = diag.as_mut() {
            d.absorb(&k, m_k, state.t, &state);
        }
        records.push(observe(&state, target, x0_sq, diag.as_ref()));
    }

    let (window, product_ok) = match diag {
        Some(d) => (Some(d.window), d.product_bound_ok),
        None => (None, true),
    };
    Ok(Trace { records, target, window, product_bound_ok: product_ok })
}

fn observe(
    state: &SumWeightState,
    target: f64,
    x0_sq: f64,
    diag: Option<&DiagnosticState>,
) -> TraceRecord {
    let est = estimates(state);
    let mut se = 0.0;
    let mut inf_err: f64 = 0.0;
    for x in est.iter().flatten() {
        let e = x - target;
        se += e * e;
        inf_err = inf_err.max(e.abs());
    }
    let min_w = state.w.iter().copied().fold(f64::INFINITY, f64::min);
    let (psi1, psi2) = match diag {
        Some(d) => {
            let psi1 = if min_w > 0.0 { x0_sq / (min_w * min_w) } else { f64::INFINITY };
            (Some(psi1), Some(d.psi2()))
        }
        None => (None, None),
    };
    TraceRecord {
        t: state.t,
        se,
        inf_err,
        sum_s: state.s.iter().sum(),
        sum_w: state.w.iter().sum(),
        min_w,
        psi1,
        psi2,
    }
}

struct DiagnosticState {
    n: usize,
    /// Running product K(1)...K(t).
    product: DMatrix<f64>,
    /// Product over the current length-L window.
    window_product: DMatrix<f64>,
    window: WindowDiagnostics,
    product_bound_ok: bool,
}

impl DiagnosticState {
    fn new(n: usize, window_len: usize) -> DiagnosticState {
        DiagnosticState {
            n,
            product: DMatrix::identity(n, n),
            window_product: DMatrix::identity(n, n),
            window: WindowDiagnostics {
                window_len,
                positivity_hits: Vec::new(),
                min_nonzero_bound_ok: true,
                weight_bound_ok: true,
            },
            product_bound_ok: true,
        }
    }

    fn absorb(&mut self, k: &DMatrix<f64>, m_k: f64, t: u64, state: &SumWeightState) {
        self.product = &self.product * k;
        self.window_product = &self.window_product * k;
        // fp slack on top of the exact-arithmetic bound
        let slack = 1.0 - 1e-9;
        let bound_t = m_k.powi(t as i32) * slack;
        if self.product.iter().any(|&v| v > 0.0 && v < bound_t) {
            self.product_bound_ok = false;
        }
        let l = self.window.window_len;
        if t % l as u64 == 0 {
            let bound_l = m_k.powi(l as i32) * slack;
            let positive = self.window_product.iter().all(|&v| v > 0.0);
            if self.window_product.iter().any(|&v| v > 0.0 && v < bound_l) {
                self.window.min_nonzero_bound_ok = false;
            }
            if positive {
                self.window.positivity_hits.push(t);
                if state.mode == Mode::Average {
                    let min_w = state.w.iter().copied().fold(f64::INFINITY, f64::min);
                    if min_w < m_k.powi(l as i32) * slack {
                        self.window.weight_bound_ok = false;
                    }
                }
            }
            self.window_product = DMatrix::identity(self.n, self.n);
        }
    }

    /// `Psi2 = ||(I - J) P(t)||_F^2`.
    fn psi2(&self) -> f64 {
        let proj = DMatrix::identity(self.n, self.n) - crate::spectral::ones_projector(self.n);
        (proj * &self.product).norm_squared()
    }
}
