//! Acceptance gate: one test per release criterion, each printing a
//! `criterion N ... PASS` line (visible with `cargo test -- --nocapture`).
//! Tolerances are part of the contract and are asserted, not logged.

use nalgebra::DMatrix;
use sumweight::engine::{estimates, run, Mode, RunConfig};
use sumweight::experiments::{
    connected_rgg, failure_study, monte_carlo_mse, slope_vs_bound_study, Algorithm,
    MonteCarloConfig, X0Spec,
};
use sumweight::graph::Graph;
use sumweight::models::{
    broadcast_gossip_set, bwgossip_failure_set, bwgossip_matrix, bwgossip_set,
    check_assumptions, check_b3_numeric, pushsum_enumerated_set, pushsum_kempe_set,
    random_gossip_set, wielandt_bound, UpdateMatrixSet,
};
use sumweight::spectral::{
    contraction_matrix, gelfand_spectral_radius, kappa, kempe_closed_forms, spectral_radius,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

fn pass(id: u32, what: &str) {
    println!("criterion {id} ({what}): PASS");
}

fn p3() -> Graph {
    Graph::from_edge_list(3, &[(0, 1), (1, 2)]).unwrap()
}

fn normal_x0(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

#[test]
fn criterion_01_pushsum_rate_closed_form() {
    for n in 2..=3usize {
        let set = pushsum_enumerated_set(n).unwrap();
        let rho = spectral_radius(&contraction_matrix(&set).unwrap()).unwrap();
        let expected = 0.5 - 1.0 / (4.0 * n as f64);
        assert!(
            (rho - expected).abs() <= 1e-9,
            "enumerated n={n}: rho {rho} vs {expected}"
        );
    }
    for n in 4..=10usize {
        let set = pushsum_kempe_set(n).unwrap();
        let rho = spectral_radius(&contraction_matrix(&set).unwrap()).unwrap();
        let expected = 0.5 - 1.0 / (4.0 * n as f64);
        assert!(
            (rho - expected).abs() <= 1e-9,
            "closed-form n={n}: rho {rho} vs {expected}"
        );
    }
    pass(1, "push-sum rho(R) = 1/2 - 1/(4N)");
}

#[test]
fn criterion_02_pushsum_second_moment() {
    for n in 2..=3usize {
        let set = pushsum_enumerated_set(n).unwrap();
        let mut e_kkt = DMatrix::zeros(n, n);
        for (k, &p) in set.matrices().iter().zip(set.probs()) {
            e_kkt += k * k.transpose() * p;
        }
        let closed = kempe_closed_forms(n).unwrap().e_kkt;
        let err = (&e_kkt - &closed).abs().max();
        assert!(err <= 1e-12, "n={n}: E[KK^T] deviates by {err}");
    }
    pass(2, "push-sum E[KK^T] closed form");
}

#[test]
fn criterion_03_bwgossip_k2_rate() {
    let g = Graph::from_edge_list(2, &[(0, 1)]).unwrap();
    let report = kappa(&bwgossip_set(&g).unwrap()).unwrap();
    assert!((report.rho_r - 0.25).abs() <= 1e-9, "rho_r = {}", report.rho_r);
    assert!(
        (report.kappa - 4f64.ln()).abs() <= 1e-9,
        "kappa = {}",
        report.kappa
    );
    pass(3, "BWGossip K2 rho(R) = 1/4, kappa = ln 4");
}

#[test]
fn criterion_04_convergence_on_rgg() {
    let mc = MonteCarloConfig { replicas: 50, ticks: 5000, alpha: 1.0, seed: 0xC4 };
    for graph_seed in 0..10u64 {
        let (g, _) = connected_rgg(20, 4.0, graph_seed).unwrap();
        for algorithm in [Algorithm::Bwgossip, Algorithm::RandomGossip] {
            let set = match algorithm {
                Algorithm::Bwgossip => bwgossip_set(&g).unwrap(),
                _ => random_gossip_set(&g).unwrap(),
            };
            let curve = monte_carlo_mse(&set, &X0Spec::Normal, Mode::Average, &mc).unwrap();
            let (first, last) = (curve[0], *curve.last().unwrap());
            assert!(
                last < 1e-12 * first,
                "{algorithm:?} seed {graph_seed}: {last} vs initial {first}"
            );
        }
    }
    pass(4, "BWGossip and Random Gossip converge on N=20 RGGs");
}

#[test]
fn criterion_05_slope_vs_kappa() {
    let ns = [4usize, 8, 12, 16];
    let rows = slope_vs_bound_study(&ns, 2.0, Algorithm::Bwgossip, 160, 0xF3).unwrap();
    for row in &rows {
        let kappa = row.report.kappa;
        let slope = row.slope.as_ref().expect("finite rate").slope.abs();
        assert!(
            slope >= 0.75 * kappa,
            "n={}: |slope| {slope} < 0.75 kappa {kappa}",
            row.n
        );
        assert!(
            (slope - kappa).abs() <= 0.30 * kappa,
            "n={}: |slope| {slope} not within 30% of kappa {kappa}",
            row.n
        );
        // independent Gelfand recomputation of the emitted radius
        let rel = (row.rho_r_gelfand - row.report.rho_r).abs() / row.report.rho_r;
        assert!(rel <= 1e-6, "n={}: Gelfand mismatch {rel}", row.n);
    }
    // Boyd-style deflated bound is never tighter than kappa (Random Gossip)
    for (idx, &n) in ns.iter().enumerate() {
        let (g, _) = connected_rgg(n, 2.0, 0xF30 + idx as u64).unwrap();
        let report = kappa(&random_gossip_set(&g).unwrap()).unwrap();
        assert!(
            report.kappa - report.boyd_kappa >= -1e-9,
            "n={n}: kappa {} < boyd {}",
            report.kappa,
            report.boyd_kappa
        );
    }
    pass(5, "empirical slopes track kappa; kappa >= Boyd bound");
}

#[test]
fn criterion_06_per_tick_invariants() {
    let p3 = p3();
    let (rgg5, _) = connected_rgg(5, 2.0, 0x66).unwrap();
    let cases: Vec<(UpdateMatrixSet, bool)> = vec![
        (bwgossip_set(&p3).unwrap(), false),
        (bwgossip_set(&rgg5).unwrap(), false),
        (random_gossip_set(&p3).unwrap(), true),
        (random_gossip_set(&rgg5).unwrap(), true),
        (pushsum_kempe_set(4).unwrap(), false),
    ];
    for (set, doubly_stochastic) in &cases {
        let n = set.n();
        let x0 = normal_x0(n, 7 + n as u64);
        let cfg = RunConfig::new(300, 0x11).with_diagnostics(true);
        let trace = run(set, &x0, Mode::Average, &cfg).unwrap();
        let sum_s0 = trace.records[0].sum_s;
        let mut prev_inf = f64::INFINITY;
        for r in &trace.records {
            assert!(
                (r.sum_s - sum_s0).abs() <= 1e-9 * sum_s0.abs().max(1.0),
                "sum conservation broke at t={}",
                r.t
            );
            assert!(
                (r.sum_w - n as f64).abs() <= 1e-9 * n as f64,
                "weight conservation broke at t={}",
                r.t
            );
            assert!(
                r.inf_err <= prev_inf * (1.0 + 1e-12) + 1e-15,
                "inf error grew at t={}",
                r.t
            );
            prev_inf = r.inf_err;
            let bound = r.psi1.unwrap() * r.psi2.unwrap();
            assert!(r.se <= bound * (1.0 + 1e-9) + 1e-15, "SE bound broke at t={}", r.t);
            if *doubly_stochastic {
                assert!((r.min_w - 1.0).abs() <= 1e-12, "weights drifted from 1");
            }
        }
        assert!(trace.product_bound_ok, "running-product entry bound failed");
    }
    pass(6, "mass conservation, inf-error monotonicity, Psi and product bounds");
}

#[test]
fn criterion_07_assumption_checker_coherence() {
    let mut rng = ChaCha12Rng::seed_from_u64(0x77);
    let mut disconnected_seen = 0;
    for _ in 0..50 {
        let n = rng.random_range(2..=8usize);
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.random::<f64>() < 0.3 {
                    edges.push((i, j));
                }
            }
        }
        let g = Graph::from_edge_list(n, &edges).unwrap();
        let matrices: Vec<_> = (0..n).map(|i| bwgossip_matrix(&g, i)).collect();
        let set = UpdateMatrixSet::explicit(matrices, vec![1.0 / n as f64; n], true).unwrap();
        let report = check_assumptions(&set).unwrap();
        let b3 = check_b3_numeric(&set, wielandt_bound(n * n)).unwrap();
        assert_eq!(
            report.b_primitive,
            b3.is_some(),
            "B vs B3 disagree on n={n}, edges={edges:?}"
        );
        assert_eq!(report.b_primitive, g.is_connected());
        if !g.is_connected() {
            disconnected_seen += 1;
        }
    }
    assert!(disconnected_seen > 0, "sample never hit a disconnected graph");
    pass(7, "B and B3 agree on 50 random graphs");
}

#[test]
fn criterion_08_sum_mode_targets_initial_sum() {
    let (rgg, _) = connected_rgg(10, 1.5, 0x88).unwrap();
    for g in [p3(), rgg] {
        let n = g.n();
        let set = bwgossip_set(&g).unwrap();
        let x0 = normal_x0(n, 0x80 + n as u64);
        let total: f64 = x0.iter().sum();
        let cfg = RunConfig::new(2000, 0x8);
        let trace = run(&set, &x0, Mode::Sum { trigger: 0 }, &cfg).unwrap();
        assert!((trace.target - total).abs() <= 1e-12);
        // replay the final state to inspect every defined estimate
        let mut state = sumweight::engine::init_state(&x0, Mode::Sum { trigger: 0 }).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
        for _ in 0..cfg.ticks {
            let k = set.sample(&mut rng).into_owned();
            sumweight::engine::step(&mut state, &k).unwrap();
        }
        let mut defined = 0;
        for est in estimates(&state).into_iter().flatten() {
            assert!((est - total).abs() <= 1e-10, "estimate {est} vs sum {total} (n={n})");
            defined += 1;
        }
        assert!(defined > 0);
        let last = trace.records.last().unwrap();
        assert!(last.se <= 1e-20, "trace SE {} at the horizon", last.se);
    }
    pass(8, "Sum mode drives defined estimates to the initial sum");
}

#[test]
fn criterion_09_broadcast_gossip_bias() {
    let mut biased = 0;
    let seeds = 21u64;
    for seed in 0..seeds {
        let (g, _) = connected_rgg(20, 4.0, 0x900 + seed).unwrap();
        let set = broadcast_gossip_set(&g, 0.5).unwrap();
        let x0 = normal_x0(20, 0x990 + seed);
        let x_ave: f64 = x0.iter().sum::<f64>() / 20.0;
        let cfg = RunConfig::new(8000, seed);
        let trace = run(&set, &x0, Mode::SingleVariate, &cfg).unwrap();
        // re-run the state to read the final per-node values
        let mut state = sumweight::engine::init_state(&x0, Mode::SingleVariate).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
        for _ in 0..cfg.ticks {
            let k = set.sample(&mut rng).into_owned();
            sumweight::engine::step(&mut state, &k).unwrap();
        }
        let max = state.s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = state.s.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(max - min < 1e-8, "seed {seed}: dispersion {} too large", max - min);
        let consensus = state.s.iter().sum::<f64>() / 20.0;
        if (consensus - x_ave).abs() > 1e-3 {
            biased += 1;
        }
        drop(trace);
    }
    assert!(
        2 * biased > seeds,
        "bias > 1e-3 in only {biased}/{seeds} seeds"
    );
    pass(9, "Broadcast Gossip reaches consensus but off the average");
}

#[test]
fn criterion_10_link_failure_sweep() {
    let (g, _) = connected_rgg(10, 1.0, 0xA0).unwrap();
    let p_e = [0.0, 0.1, 0.2, 0.3];
    let rows = failure_study(&g, &p_e, 120, 3000, 0xA1).unwrap();
    for pair in rows.windows(2) {
        assert!(
            pair[0].report.kappa > pair[1].report.kappa + 1e-12,
            "kappa not strictly decreasing: {} -> {}",
            pair[0].report.kappa,
            pair[1].report.kappa
        );
    }
    for row in &rows {
        let slope = row.slope.slope.abs();
        assert!(
            slope >= 0.7 * row.report.kappa,
            "p_e={}: |slope| {slope} < 0.7 kappa {}",
            row.p_e,
            row.report.kappa
        );
    }
    // p_e = 0 must reduce to the plain BWGossip family, matrix for matrix
    let zero = bwgossip_failure_set(&g, 0.0).unwrap();
    let plain = bwgossip_set(&g).unwrap();
    assert_eq!(zero.len(), plain.len());
    for (a, b) in zero.matrices().iter().zip(plain.matrices()) {
        assert_eq!(a, b);
    }
    assert_eq!(zero.probs(), plain.probs());
    pass(10, "kappa decreases with link failures; slopes track it");
}

#[test]
fn gelfand_path_agrees_on_pushsum() {
    // sanity tie between the eigensolve and the norm-limit moment paths
    let set = pushsum_kempe_set(3).unwrap();
    let g = gelfand_spectral_radius(&contraction_matrix(&set).unwrap(), 40);
    assert!((g - (0.5 - 1.0 / 12.0)).abs() < 1e-6);
}
