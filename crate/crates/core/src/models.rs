//! Update-matrix families for the gossip algorithms and the checks for the
//! assumptions they must satisfy (row-stochasticity, positive diagonals,
//! primitivity of the expected update).
//!
//! All matrices act in the row-vector convention: `s(t+1)^T = s(t)^T K`.

use std::borrow::Cow;

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;

/// Row-stochasticity tolerance for mass-conserving families.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Degree above which the link-failure family stops enumerating failure
/// subsets and falls back to a sampler with Monte Carlo moments.
pub const FAILURE_ENUMERATION_THRESHOLD: usize = 15;

/// Number of samples used for Monte Carlo moment estimation in the
/// sampler fallback.
pub const MOMENT_SAMPLES: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SetKind {
    Explicit,
    ImplicitSynchronous,
}

/// Implicit families whose matrix set is never enumerated.
#[derive(Debug, Clone)]
pub enum ImplicitFamily {
    /// Synchronous push-sum on the complete graph with self-loops: every
    /// node halves its pair and sends one half to a uniformly chosen target.
    /// The family has `N^N` members; moments come from closed forms.
    KempePushSum,
    /// Broadcast gossip with link failures on a graph where some degree
    /// exceeds the enumeration threshold; moments are Monte Carlo estimates.
    BwFailureSampled { graph: Graph, p_e: f64 },
}

/// A finite family `{K_i, p_i}` of update matrices, or an implicit sampler
/// with known moments. Immutable after construction.
#[derive(Debug, Clone)]
pub struct UpdateMatrixSet {
    n: usize,
    kind: SetKind,
    matrices: Vec<DMatrix<f64>>,
    probs: Vec<f64>,
    /// Per-matrix broadcaster index, for families driven by a waking node.
    broadcaster: Option<Vec<usize>>,
    mass_conserving: bool,
    implicit: Option<ImplicitFamily>,
}

impl UpdateMatrixSet {
    /// Build an explicit family, validating non-negativity, probability
    /// normalization and (when claimed) row-stochasticity.
    pub fn explicit(
        matrices: Vec<DMatrix<f64>>,
        probs: Vec<f64>,
        mass_conserving: bool,
    ) -> Result<UpdateMatrixSet> {
        Self::explicit_indexed(matrices, probs, mass_conserving, None)
    }

    pub fn explicit_indexed(
        matrices: Vec<DMatrix<f64>>,
        probs: Vec<f64>,
        mass_conserving: bool,
        broadcaster: Option<Vec<usize>>,
    ) -> Result<UpdateMatrixSet> {
        if matrices.is_empty() {
            return Err(Error::EmptyFamily);
        }
        if matrices.len() != probs.len() {
            return Err(Error::InvalidFamily(format!(
                "{} matrices but {} probabilities",
                matrices.len(),
                probs.len()
            )));
        }
        let n = matrices[0].nrows();
        for m in &matrices {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::InvalidFamily("matrices must be square of equal size".into()));
            }
            for (idx, &v) in m.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::NonFiniteEntry(idx % n, idx / n));
                }
                if v < 0.0 {
                    return Err(Error::InvalidFamily("negative matrix entry".into()));
                }
            }
            if mass_conserving {
                for i in 0..n {
                    let row_sum: f64 = m.row(i).iter().sum();
                    if (row_sum - 1.0).abs() > ROW_SUM_TOL {
                        return Err(Error::InvalidFamily(format!(
                            "row {i} sums to {row_sum}, not 1"
                        )));
                    }
                }
            }
        }
        let total: f64 = probs.iter().sum();
        if probs.iter().any(|&p| p <= 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidFamily(
                "probabilities must be positive and sum to 1".into(),
            ));
        }
        if let Some(ref b) = broadcaster {
            if b.len() != matrices.len() || b.iter().any(|&i| i >= n) {
                return Err(Error::InvalidFamily("bad broadcaster index".into()));
            }
        }
        Ok(UpdateMatrixSet {
            n,
            kind: SetKind::Explicit,
            matrices,
            probs,
            broadcaster,
            mass_conserving,
            implicit: None,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> SetKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty() && self.implicit.is_none()
    }

    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.matrices
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn mass_conserving(&self) -> bool {
        self.mass_conserving
    }

    pub fn implicit(&self) -> Option<&ImplicitFamily> {
        self.implicit.as_ref()
    }

    pub fn is_explicit(&self) -> bool {
        self.kind == SetKind::Explicit
    }

    /// True when matrix draws are indexed by a waking broadcaster node, so
    /// the engine's weight-managed clocks apply.
    pub fn broadcaster_indexed(&self) -> bool {
        self.broadcaster.is_some()
    }

    pub fn broadcaster_of(&self, matrix_idx: usize) -> Option<usize> {
        self.broadcaster.as_ref().map(|b| b[matrix_idx])
    }

    /// Draw one update matrix.
    pub fn sample<'a, R: Rng>(&'a self, rng: &mut R) -> Cow<'a, DMatrix<f64>> {
        match &self.implicit {
            None => Cow::Borrowed(&self.matrices[categorical(&self.probs, rng)]),
            Some(ImplicitFamily::KempePushSum) => Cow::Owned(kempe_sample(self.n, rng)),
            Some(ImplicitFamily::BwFailureSampled { graph, p_e }) => {
                let i = rng.random_range(0..self.n);
                Cow::Owned(sample_failure_matrix(graph, i, *p_e, rng))
            }
        }
    }

    /// Draw an update matrix conditioned on broadcaster `i`. Only valid for
    /// broadcaster-indexed families.
    pub fn sample_for_broadcaster<'a, R: Rng>(
        &'a self,
        i: usize,
        rng: &mut R,
    ) -> Result<Cow<'a, DMatrix<f64>>> {
        if let Some(ImplicitFamily::BwFailureSampled { graph, p_e }) = &self.implicit {
            return Ok(Cow::Owned(sample_failure_matrix(graph, i, *p_e, rng)));
        }
        let Some(ref owners) = self.broadcaster else {
            return Err(Error::InvalidFamily("family is not broadcaster-indexed".into()));
        };
        let candidates: Vec<usize> =
            (0..self.matrices.len()).filter(|&k| owners[k] == i).collect();
        if candidates.is_empty() {
            return Err(Error::InvalidFamily(format!("no matrix for broadcaster {i}")));
        }
        let weights: Vec<f64> = candidates.iter().map(|&k| self.probs[k]).collect();
        let total: f64 = weights.iter().sum();
        let normalized: Vec<f64> = weights.iter().map(|w| w / total).collect();
        Ok(Cow::Borrowed(&self.matrices[candidates[categorical(&normalized, rng)]]))
    }

    /// Smallest positive entry over the whole family (`m_K`).
    pub fn min_positive_entry(&self) -> f64 {
        match &self.implicit {
            None => self
                .matrices
                .iter()
                .flat_map(|m| m.iter())
                .copied()
                .filter(|&v| v > 0.0)
                .fold(f64::INFINITY, f64::min),
            // entries are 1/2 (or 1 on a self-chosen diagonal)
            Some(ImplicitFamily::KempePushSum) => 0.5,
            Some(ImplicitFamily::BwFailureSampled { graph, .. }) => {
                // worst case: broadcaster of maximum degree with all links live
                1.0 / (graph.max_degree() as f64 + 1.0)
            }
        }
    }

    /// Smallest member probability (`p_K`).
    pub fn min_probability(&self) -> f64 {
        match &self.implicit {
            None => self.probs.iter().copied().fold(f64::INFINITY, f64::min),
            Some(ImplicitFamily::KempePushSum) => (self.n as f64).powi(-(self.n as i32)),
            Some(ImplicitFamily::BwFailureSampled { graph, p_e }) => {
                let d = graph.max_degree() as i32;
                let tail = p_e.min(1.0 - p_e);
                (1.0 / self.n as f64) * tail.powi(d)
            }
        }
    }

    /// Export as `{kind, n, matrices, probs}` for interchange; explicit only.
    pub fn to_json(&self) -> Result<serde_json::Value> {
        if !self.is_explicit() {
            return Err(Error::InvalidFamily("only explicit families serialize".into()));
        }
        let doc = FamilyDoc {
            kind: self.kind,
            n: self.n,
            matrices: self.matrices.iter().map(|m| row_major(m)).collect(),
            probs: self.probs.clone(),
        };
        Ok(serde_json::to_value(doc)?)
    }

    pub fn from_json(value: &serde_json::Value) -> Result<UpdateMatrixSet> {
        let doc: FamilyDoc = serde_json::from_value(value.clone())?;
        if doc.kind != SetKind::Explicit {
            return Err(Error::InvalidFamily("only explicit families deserialize".into()));
        }
        let matrices: Vec<DMatrix<f64>> = doc
            .matrices
            .iter()
            .map(|rows| {
                if rows.len() != doc.n * doc.n {
                    return Err(Error::InvalidFamily("matrix size mismatch".into()));
                }
                Ok(DMatrix::from_row_slice(doc.n, doc.n, rows))
            })
            .collect::<Result<_>>()?;
        // imported families may or may not conserve mass; detect it
        let mass = matrices.iter().all(|m| {
            (0..doc.n).all(|i| (m.row(i).iter().sum::<f64>() - 1.0).abs() <= ROW_SUM_TOL)
        });
        UpdateMatrixSet::explicit(matrices, doc.probs, mass)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FamilyDoc {
    kind: SetKind,
    n: usize,
    matrices: Vec<Vec<f64>>,
    probs: Vec<f64>,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            out.push(m[(i, j)]);
        }
    }
    out
}

fn categorical<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.len() - 1
}

/// Broadcast update of node `i` over the live neighbors `live`: the
/// broadcaster splits its pair by `|live| + 1` and every live neighbor adds
/// the received share.
fn broadcast_split_matrix(n: usize, i: usize, live: &[usize]) -> DMatrix<f64> {
    let share = 1.0 / (live.len() as f64 + 1.0);
    let mut k = DMatrix::identity(n, n);
    k[(i, i)] = share;
    for &j in live {
        k[(i, j)] = share;
    }
    k
}

/// The update matrix of node `i` waking up in BWGossip; equals
/// `I - e_i e_i^T (D + I)^{-1} L`.
pub fn bwgossip_matrix(g: &Graph, i: usize) -> DMatrix<f64> {
    broadcast_split_matrix(g.n(), i, g.neighbors(i))
}

/// BWGossip family: one matrix per node, uniform activation.
pub fn bwgossip_set(g: &Graph) -> Result<UpdateMatrixSet> {
    if !g.is_connected() {
        return Err(Error::Disconnected);
    }
    let n = g.n();
    let matrices = (0..n).map(|i| bwgossip_matrix(g, i)).collect();
    let probs = vec![1.0 / n as f64; n];
    UpdateMatrixSet::explicit_indexed(matrices, probs, true, Some((0..n).collect()))
}

/// Random gossip family: one pairwise-averaging matrix per edge,
/// `K = I - (e_i - e_j)(e_i - e_j)^T / 2`, uniform over edges.
pub fn random_gossip_set(g: &Graph) -> Result<UpdateMatrixSet> {
    if !g.is_connected() {
        return Err(Error::Disconnected);
    }
    let n = g.n();
    let mut matrices = Vec::with_capacity(g.edge_count());
    for (i, j) in g.edges() {
        let mut k = DMatrix::identity(n, n);
        k[(i, i)] = 0.5;
        k[(j, j)] = 0.5;
        k[(i, j)] = 0.5;
        k[(j, i)] = 0.5;
        matrices.push(k);
    }
    let m = matrices.len();
    UpdateMatrixSet::explicit(matrices, vec![1.0 / m as f64; m], true)
}

/// Broadcast gossip (biased baseline): broadcaster `i` makes every neighbor
/// mix `x_j <- gamma x_j + (1 - gamma) x_i`. Column-stochastic but not
/// row-stochastic, so the sum of the values drifts.
pub fn broadcast_gossip_set(g: &Graph, gamma: f64) -> Result<UpdateMatrixSet> {
    if !g.is_connected() {
        return Err(Error::Disconnected);
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidParameter(format!("gamma must be in (0,1), got {gamma}")));
    }
    let n = g.n();
    let mut matrices = Vec::with_capacity(n);
    for i in 0..n {
        let mut k = DMatrix::identity(n, n);
        for &j in g.neighbors(i) {
            k[(j, j)] = gamma;
            k[(i, j)] = 1.0 - gamma;
        }
        matrices.push(k);
    }
    let probs = vec![1.0 / n as f64; n];
    UpdateMatrixSet::explicit_indexed(matrices, probs, false, Some((0..n).collect()))
}

/// Synchronous push-sum on the complete graph with self-loops. The family
/// has `N^N` members and is kept implicit; moments come from closed forms.
pub fn pushsum_kempe_set(n: usize) -> Result<UpdateMatrixSet> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!("need n >= 2, got {n}")));
    }
    Ok(UpdateMatrixSet {
        n,
        kind: SetKind::ImplicitSynchronous,
        matrices: Vec::new(),
        probs: Vec::new(),
        broadcaster: None,
        mass_conserving: true,
        implicit: Some(ImplicitFamily::KempePushSum),
    })
}

/// Fully enumerated push-sum family: all `N^N` target assignments with
/// uniform probability. Only viable for tiny `n`; used to validate the
/// closed-form moments.
pub fn pushsum_enumerated_set(n: usize) -> Result<UpdateMatrixSet> {
    if n < 2 || n > 5 {
        return Err(Error::SizeCapExceeded(format!("enumeration wants 2 <= n <= 5, got {n}")));
    }
    let count = n.pow(n as u32);
    let mut matrices = Vec::with_capacity(count);
    for code in 0..count {
        let mut targets = Vec::with_capacity(n);
        let mut c = code;
        for _ in 0..n {
            targets.push(c % n);
            c /= n;
        }
        matrices.push(kempe_matrix(n, &targets));
    }
    UpdateMatrixSet::explicit(matrices, vec![1.0 / count as f64; count], true)
}

fn kempe_matrix(n: usize, targets: &[usize]) -> DMatrix<f64> {
    let mut k = DMatrix::from_diagonal_element(n, n, 0.5);
    for (i, &j) in targets.iter().enumerate() {
        k[(i, j)] += 0.5;
    }
    k
}

fn kempe_sample<R: Rng>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let targets: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    kempe_matrix(n, &targets)
}

fn sample_failure_matrix<R: Rng>(g: &Graph, i: usize, p_e: f64, rng: &mut R) -> DMatrix<f64> {
    let live: Vec<usize> =
        g.neighbors(i).iter().copied().filter(|_| rng.random::<f64>() >= p_e).collect();
    broadcast_split_matrix(g.n(), i, &live)
}

/// BWGossip with i.i.d. link failures of probability `p_e` per activation:
/// the broadcaster renormalizes its split over the live links, so the family
/// stays row-stochastic. Enumerates every failure subset unless some degree
/// exceeds `FAILURE_ENUMERATION_THRESHOLD`, in which case a sampler with
/// Monte Carlo moments is returned.
pub fn bwgossip_failure_set(g: &Graph, p_e: f64) -> Result<UpdateMatrixSet> {
    if !(0.0..1.0).contains(&p_e) {
        return Err(Error::InvalidParameter(format!("p_e must be in [0,1), got {p_e}")));
    }
    if !g.is_connected() {
        return Err(Error::Disconnected);
    }
    if p_e == 0.0 {
        return bwgossip_set(g);
    }
    let n = g.n();
    if g.max_degree() > FAILURE_ENUMERATION_THRESHOLD {
        return Ok(UpdateMatrixSet {
            n,
            kind: SetKind::ImplicitSynchronous,
            matrices: Vec::new(),
            probs: Vec::new(),
            broadcaster: None,
            mass_conserving: true,
            implicit: Some(ImplicitFamily::BwFailureSampled { graph: g.clone(), p_e }),
        });
    }
    let mut matrices = Vec::new();
    let mut probs = Vec::new();
    let mut owners = Vec::new();
    for i in 0..n {
        let nbrs = g.neighbors(i);
        let d = nbrs.len();
        for mask in 0u64..(1u64 << d) {
            let failed = mask.count_ones() as i32;
            let live: Vec<usize> = nbrs
                .iter()
                .enumerate()
                .filter(|&(b, _)| mask & (1 << b) == 0)
                .map(|(_, &j)| j)
                .collect();
            matrices.push(broadcast_split_matrix(n, i, &live));
            probs.push(
                (1.0 / n as f64) * p_e.powi(failed) * (1.0 - p_e).powi(d as i32 - failed),
            );
            owners.push(i);
        }
    }
    UpdateMatrixSet::explicit_indexed(matrices, probs, true, Some(owners))
}

/// Verdicts for the three assumptions a family must satisfy, plus the
/// spectral-support witness and the extreme constants `m_K`, `p_K`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub a1_row_stochastic: bool,
    pub a2_positive_diagonal: bool,
    pub b_primitive: bool,
    /// Smallest `m` with `support(E[K])^m > 0`, when primitive.
    pub witness_exponent: Option<usize>,
    pub m_k: f64,
    pub p_k: f64,
    /// True when moments came from a Monte Carlo sampler fallback.
    pub moments_estimated: bool,
}

impl AssumptionReport {
    pub fn all_hold(&self) -> bool {
        self.a1_row_stochastic && self.a2_positive_diagonal && self.b_primitive
    }
}

/// Check assumptions A1 (row-stochastic i.i.d. draws with positive
/// probabilities), A2 (strictly positive diagonals) and B (primitive
/// expected update).
pub fn check_assumptions(set: &UpdateMatrixSet) -> Result<AssumptionReport> {
    if set.is_empty() {
        return Err(Error::EmptyFamily);
    }
    match set.implicit() {
        Some(ImplicitFamily::KempePushSum) => {
            // E[K] = I/2 + J/2 > 0: primitive with witness 1
            return Ok(AssumptionReport {
                a1_row_stochastic: true,
                a2_positive_diagonal: true,
                b_primitive: true,
                witness_exponent: Some(1),
                m_k: set.min_positive_entry(),
                p_k: set.min_probability(),
                moments_estimated: false,
            });
        }
        Some(ImplicitFamily::BwFailureSampled { graph, .. }) => {
            // every member keeps a positive diagonal and renormalizes its
            // row split; support of E[K] is A + I of the connected graph
            let support = graph.adjacency_matrix() + DMatrix::identity(graph.n(), graph.n());
            let witness = primitivity_witness(&support, wielandt_bound(graph.n()));
            return Ok(AssumptionReport {
                a1_row_stochastic: true,
                a2_positive_diagonal: true,
                b_primitive: witness.is_some(),
                witness_exponent: witness,
                m_k: set.min_positive_entry(),
                p_k: set.min_probability(),
                moments_estimated: true,
            });
        }
        None => {}
    }
    let n = set.n();
    let a1 = set.matrices().iter().all(|m| {
        (0..n).all(|i| (m.row(i).iter().sum::<f64>() - 1.0).abs() <= ROW_SUM_TOL)
    }) && set.probs().iter().all(|&p| p > 0.0)
        && (set.probs().iter().sum::<f64>() - 1.0).abs() <= 1e-9;
    let a2 = set.matrices().iter().all(|m| (0..n).all(|i| m[(i, i)] > 0.0));
    let expected = crate::spectral::expected_matrix(set)?;
    let witness = primitivity_witness(&expected, wielandt_bound(n));
    Ok(AssumptionReport {
        a1_row_stochastic: a1,
        a2_positive_diagonal: a2,
        b_primitive: witness.is_some(),
        witness_exponent: witness,
        m_k: set.min_positive_entry(),
        p_k: set.min_probability(),
        moments_estimated: false,
    })
}

/// Wielandt exponent bound for a primitive `n x n` support.
pub fn wielandt_bound(n: usize) -> usize {
    n * n - 2 * n + 2
}

/// Numeric check of assumption B3: smallest `k <= max_power` such that
/// `support(E[K (x) K])^k > 0`. Cross-checks B <=> B3 on small instances.
pub fn check_b3_numeric(set: &UpdateMatrixSet, max_power: usize) -> Result<Option<usize>> {
    if !set.is_explicit() {
        return Err(Error::InvalidFamily("B3 check wants an explicit family".into()));
    }
    if set.n() > 12 {
        return Err(Error::SizeCapExceeded(
            "B3 check capped at N <= 12; use check_assumptions instead".into(),
        ));
    }
    let kron = crate::spectral::expected_kron(set)?;
    Ok(primitivity_witness(&kron, max_power))
}

/// Smallest `m <= cap` with `support(M)^m` elementwise positive.
pub fn primitivity_witness(m: &DMatrix<f64>, cap: usize) -> Option<usize> {
    let support = BoolMat::support(m);
    let mut power = support.clone();
    for exp in 1..=cap {
        if power.all_true() {
            return Some(exp);
        }
        power = power.multiply(&support);
    }
    if power.all_true() {
        Some(cap)
    } else {
        None
    }
}

/// Default diagnostic window length: the constructive B2 bound, the sum of
/// shortest support-path lengths over all ordered node pairs, capped at
/// `2 N^2`.
pub fn b2_window_bound(set: &UpdateMatrixSet) -> Result<usize> {
    let expected = crate::spectral::expected_matrix(set)?;
    let n = set.n();
    let support = BoolMat::support(&expected);
    let mut total = 0usize;
    for i in 0..n {
        let dist = support.bfs_distances(i);
        for j in 0..n {
            match dist[j] {
                Some(d) => total += d,
                None => return Ok(2 * n * n),
            }
        }
    }
    Ok(total.clamp(1, 2 * n * n))
}

/// Dense boolean matrix with bit-packed rows, for support powering.
#[derive(Debug, Clone)]
pub(crate) struct BoolMat {
    n: usize,
    words: usize,
    rows: Vec<u64>,
}

impl BoolMat {
    pub(crate) fn support(m: &DMatrix<f64>) -> BoolMat {
        let n = m.nrows();
        let words = n.div_ceil(64);
        let mut rows = vec![0u64; n * words];
        for i in 0..n {
            for j in 0..n {
                if m[(i, j)] > 0.0 {
                    rows[i * words + j / 64] |= 1 << (j % 64);
                }
            }
        }
        BoolMat { n, words, rows }
    }

    fn row(&self, i: usize) -> &[u64] {
        &self.rows[i * self.words..(i + 1) * self.words]
    }

    pub(crate) fn multiply(&self, other: &BoolMat) -> BoolMat {
        let mut out = vec![0u64; self.n * self.words];
        for i in 0..self.n {
            let row = self.row(i);
            let acc = &mut out[i * self.words..(i + 1) * self.words];
            for j in 0..self.n {
                if row[j / 64] & (1 << (j % 64)) != 0 {
                    for (a, b) in acc.iter_mut().zip(other.row(j)) {
                        *a |= b;
                    }
                }
            }
        }
        BoolMat { n: self.n, words: self.words, rows: out }
    }

    pub(crate) fn all_true(&self) -> bool {
        for i in 0..self.n {
            let row = self.row(i);
            for j in 0..self.n {
                if row[j / 64] & (1 << (j % 64)) == 0 {
                    return false;
                }
            }
        }
        true
    }

    fn bfs_distances(&self, start: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.n];
        dist[start] = Some(0);
        let mut queue = std::collections::VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            let row = self.row(i);
            for j in 0..self.n {
                if row[j / 64] & (1 << (j % 64)) != 0 && dist[j].is_none() {
                    dist[j] = Some(dist[i].unwrap() + 1);
                    queue.push_back(j);
                }
            }
        }
        dist
    }
}

/// Deterministic Monte Carlo moment estimates for sampler-backed families:
/// `(E[K], E[K (x) K])` averaged over `MOMENT_SAMPLES` draws.
pub(crate) fn monte_carlo_moments(
    g: &Graph,
    p_e: f64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = g.n();
    let mut rng = ChaCha12Rng::seed_from_u64(0x6d6f6d656e74);
    let mut ek = DMatrix::zeros(n, n);
    let mut ekk = DMatrix::zeros(n * n, n * n);
    for _ in 0..MOMENT_SAMPLES {
        let i = rng.random_range(0..n);
        let k = sample_failure_matrix(g, i, p_e, &mut rng);
        ek += &k;
        ekk += k.kronecker(&k);
    }
    (ek / MOMENT_SAMPLES as f64, ekk / MOMENT_SAMPLES as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn p3() -> Graph {
        Graph::from_edge_list(3, &[(0, 1), (1, 2)]).unwrap()
    }

    fn k2() -> Graph {
        Graph::from_edge_list(2, &[(0, 1)]).unwrap()
    }

    #[test]
    fn bwgossip_p3_matrices() {
        let set = bwgossip_set(&p3()).unwrap();
        let k0 = &set.matrices()[0];
        let expected0 =
            DMatrix::from_row_slice(3, 3, &[0.5, 0.5, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        assert_abs_diff_eq!(k0, &expected0, epsilon = 1e-15);
        let k1 = &set.matrices()[1];
        let third = 1.0 / 3.0;
        let expected1 = DMatrix::from_row_slice(
            3,
            3,
            &[1.0, 0.0, 0.0, third, third, third, 0.0, 0.0, 1.0],
        );
        assert_abs_diff_eq!(k1, &expected1, epsilon = 1e-15);
    }

    #[test]
    fn bwgossip_matches_laplacian_form() {
        // K_i = I - e_i e_i^T (D + I)^{-1} L
        let g = Graph::generate_rgg(8, 2.0, 3).unwrap();
        assert!(g.is_connected());
        let n = g.n();
        let dinv = DMatrix::from_fn(n, n, |i, j| {
            if i == j { 1.0 / (g.degree(i) as f64 + 1.0) } else { 0.0 }
        });
        let l = g.laplacian();
        for i in 0..n {
            let mut e = DMatrix::zeros(n, n);
            e[(i, i)] = 1.0;
            let reference = DMatrix::identity(n, n) - e * &dinv * &l;
            assert_abs_diff_eq!(&bwgossip_matrix(&g, i), &reference, epsilon = 1e-14);
        }
    }

    #[test]
    fn bwgossip_rejects_disconnected() {
        let g = Graph::from_edge_list(4, &[(0, 1), (2, 3)]).unwrap();
        assert!(matches!(bwgossip_set(&g), Err(Error::Disconnected)));
    }

    #[test]
    fn random_gossip_k2() {
        let set = random_gossip_set(&k2()).unwrap();
        assert_eq!(set.len(), 1);
        let expected = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        assert_abs_diff_eq!(&set.matrices()[0], &expected, epsilon = 1e-15);
    }

    #[test]
    fn random_gossip_edge_matrices_doubly_stochastic() {
        let set = random_gossip_set(&p3()).unwrap();
        assert_eq!(set.len(), 2);
        assert_abs_diff_eq!(set.probs()[0], 0.5, epsilon = 1e-15);
        for k in set.matrices() {
            assert_abs_diff_eq!(k, &k.transpose(), epsilon = 1e-15);
            for i in 0..3 {
                assert_abs_diff_eq!(k.row(i).iter().sum::<f64>(), 1.0, epsilon = 1e-15);
                assert_abs_diff_eq!(k.column(i).iter().sum::<f64>(), 1.0, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn broadcast_gossip_mixing_rule() {
        let set = broadcast_gossip_set(&p3(), 0.5).unwrap();
        let k0 = &set.matrices()[0];
        let x = nalgebra::RowDVector::from_row_slice(&[1.0, 2.0, 3.0]);
        let next = &x * k0;
        assert_abs_diff_eq!(next[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(next[1], 1.5, epsilon = 1e-15);
        assert_abs_diff_eq!(next[2], 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(next.iter().sum::<f64>(), 5.5, epsilon = 1e-15);
        // row sum of the broadcaster row documents the mass violation
        let row_sum: f64 = k0.row(0).iter().sum();
        assert_abs_diff_eq!(row_sum, 1.0 + 1.0 * 0.5, epsilon = 1e-15);
        // consensus input is preserved (column-stochasticity)
        let c = nalgebra::RowDVector::from_element(3, 4.2);
        for k in set.matrices() {
            assert_abs_diff_eq!(&(&c * k), &c, epsilon = 1e-12);
        }
    }

    #[test]
    fn broadcast_gossip_rejects_bad_gamma() {
        assert!(broadcast_gossip_set(&p3(), 0.0).is_err());
        assert!(broadcast_gossip_set(&p3(), 1.0).is_err());
    }

    #[test]
    fn pushsum_sampled_structure() {
        let set = pushsum_kempe_set(4).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        for _ in 0..20 {
            let k = set.sample(&mut rng);
            for i in 0..4 {
                assert_abs_diff_eq!(k.row(i).iter().sum::<f64>(), 1.0, epsilon = 1e-15);
                assert!(k[(i, i)] >= 0.5);
            }
        }
    }

    #[test]
    fn pushsum_enumeration_count() {
        let set = pushsum_enumerated_set(2).unwrap();
        assert_eq!(set.len(), 4);
        let set3 = pushsum_enumerated_set(3).unwrap();
        assert_eq!(set3.len(), 27);
    }

    #[test]
    fn failure_set_zero_pe_is_plain_bwgossip() {
        let g = p3();
        let plain = bwgossip_set(&g).unwrap();
        let with_failures = bwgossip_failure_set(&g, 0.0).unwrap();
        assert_eq!(plain.len(), with_failures.len());
        for (a, b) in plain.matrices().iter().zip(with_failures.matrices()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn failure_set_k2_half() {
        let set = bwgossip_failure_set(&k2(), 0.5).unwrap();
        assert_eq!(set.len(), 4);
        // broadcaster 0: full broadcast and isolated variants, 1/4 each
        let full = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.0, 1.0]);
        let isolated = DMatrix::identity(2, 2);
        let mut seen_full = false;
        let mut seen_isolated = false;
        for (k, (&p, &owner)) in set
            .matrices()
            .iter()
            .zip(set.probs().iter().zip(set.broadcaster.as_ref().unwrap()))
        {
            if owner != 0 {
                continue;
            }
            assert_abs_diff_eq!(p, 0.25, epsilon = 1e-15);
            if (k - &full).abs().max() < 1e-15 {
                seen_full = true;
            }
            if (k - &isolated).abs().max() < 1e-15 {
                seen_isolated = true;
            }
        }
        assert!(seen_full && seen_isolated);
        // renormalized split keeps every member row-stochastic
        for k in set.matrices() {
            for i in 0..2 {
                assert_abs_diff_eq!(k.row(i).iter().sum::<f64>(), 1.0, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn assumptions_bwgossip_p3() {
        let set = bwgossip_set(&p3()).unwrap();
        let report = check_assumptions(&set).unwrap();
        assert!(report.all_hold());
        assert_abs_diff_eq!(report.m_k, 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(report.p_k, 1.0 / 3.0, epsilon = 1e-15);
        let w = report.witness_exponent.unwrap();
        assert!(w <= wielandt_bound(3));
    }

    #[test]
    fn assumptions_disconnected_support() {
        let g = Graph::from_edge_list(4, &[(0, 1), (2, 3)]).unwrap();
        let matrices: Vec<_> = (0..4).map(|i| bwgossip_matrix(&g, i)).collect();
        let set = UpdateMatrixSet::explicit(matrices, vec![0.25; 4], true).unwrap();
        let report = check_assumptions(&set).unwrap();
        assert!(report.a1_row_stochastic && report.a2_positive_diagonal);
        assert!(!report.b_primitive);
        assert!(report.witness_exponent.is_none());
    }

    #[test]
    fn assumptions_pushsum_witness_one() {
        let report = check_assumptions(&pushsum_kempe_set(5).unwrap()).unwrap();
        assert!(report.all_hold());
        assert_eq!(report.witness_exponent, Some(1));
        assert_abs_diff_eq!(report.m_k, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn b3_finite_for_connected_families() {
        let set = bwgossip_set(&k2()).unwrap();
        assert!(check_b3_numeric(&set, 64).unwrap().is_some());
        let pushsum = pushsum_enumerated_set(2).unwrap();
        let k = check_b3_numeric(&pushsum, 8).unwrap().unwrap();
        assert!(k <= 2);
    }

    #[test]
    fn b3_absent_for_disconnected_families() {
        let g = Graph::from_edge_list(4, &[(0, 1), (2, 3)]).unwrap();
        let matrices: Vec<_> = (0..4).map(|i| bwgossip_matrix(&g, i)).collect();
        let set = UpdateMatrixSet::explicit(matrices, vec![0.25; 4], true).unwrap();
        assert!(check_b3_numeric(&set, 128).unwrap().is_none());
    }

    #[test]
    fn b3_size_cap() {
        let g = Graph::generate_rgg(13, 4.0, 1).unwrap();
        let set = bwgossip_set(&g).unwrap();
        assert!(matches!(check_b3_numeric(&set, 8), Err(Error::SizeCapExceeded(_))));
    }

    #[test]
    fn family_json_round_trip() {
        let set = bwgossip_set(&p3()).unwrap();
        let doc = set.to_json().unwrap();
        let back = UpdateMatrixSet::from_json(&doc).unwrap();
        assert_eq!(back.len(), set.len());
        assert!(back.mass_conserving());
        for (a, b) in set.matrices().iter().zip(back.matrices()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn conditional_broadcaster_sampling() {
        let set = bwgossip_failure_set(&k2(), 0.3).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for _ in 0..10 {
            let k = set.sample_for_broadcaster(1, &mut rng).unwrap();
            // broadcaster 1 never touches row 0
            assert_abs_diff_eq!(k[(0, 0)], 1.0, epsilon = 1e-15);
            assert_abs_diff_eq!(k[(0, 1)], 0.0, epsilon = 1e-15);
        }
    }
}
