//! Acceptance suite: one test per criterion, each printing a PASS line with
//! its headline numbers (run with `--nocapture` to see them all).

use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use riskshare::conjugate::{
    conj_table, conj_table_of_cost, detect_degeneracy, finiteness_certificate, ConjParams,
    ConjValue,
};
use riskshare::convexify::{
    minkowski_nonconvexity, run_replication, ReplicationExperiment, SlopeFit,
};
use riskshare::infconv::{
    dual_lower_bound, group_convolve, improperness_probe, solve_exact, solve_heuristic,
    conditional_reduction, Agent, AgentPopulation, Mode, ProbeVerdict, SolverParams,
};
use riskshare::ordering::{consistency_spot_check, dilatation_monotone_check};
use riskshare::riskmeasures::{check_axioms, Distortion};
use riskshare::{FiniteProbSpace, PartitionAlgebra, ProbMeasure, RiskMeasure, Rv, Value};

fn unweighted(measures: Vec<RiskMeasure>) -> AgentPopulation {
    AgentPopulation::new(
        measures.into_iter().map(|m| Agent::new(1.0, m)).collect(),
        Mode::Unweighted,
    )
    .unwrap()
}

fn random_payoff(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> Rv {
    Rv::new((0..d).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

fn min_fixture(space: &FiniteProbSpace) -> RiskMeasure {
    RiskMeasure::min_of(
        RiskMeasure::EssSup,
        RiskMeasure::shifted(1.0, RiskMeasure::expectation(space.reference_measure())),
    )
}

/// Criterion 1: on four uniform atoms with beta = 1/(2N), value at risk
/// coincides with the worst case on 200 seeded payoffs (exactly), and the
/// two-agent convolution at an atom indicator returns 1 while the
/// summed-level quantile returns 0. Runtime < 1 s.
#[test]
fn criterion_1_two_agent_quantile_identity_failure() {
    let start = Instant::now();
    let space = FiniteProbSpace::uniform(4);
    let beta = 1.0 / 8.0;
    let var = RiskMeasure::var(beta);

    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for _ in 0..200 {
        let x = random_payoff(&mut rng, 4, 5.0);
        let lhs = var.evaluate(&space, &x).unwrap();
        let rhs = RiskMeasure::EssSup.evaluate(&space, &x).unwrap();
        assert_eq!(lhs, rhs, "quantile at {beta} differed from the worst case");
    }

    let pop = unweighted(vec![var.clone(), var.clone()]);
    let x = Rv::indicator(4, 0);
    let out = solve_exact(&pop, &space, &x, &SolverParams::default()).unwrap();
    assert_eq!(out.value, Value::Finite(1.0));
    let at_sum_level = RiskMeasure::var(2.0 * beta).evaluate(&space, &x).unwrap();
    assert_eq!(at_sum_level, 0.0);

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 1.0, "criterion 1 took {elapsed:.2} s");
    println!(
        "ACCEPTANCE 1 PASS — convolution value 1 vs summed-level quantile 0 ({elapsed:.2} s)"
    );
}

/// Criterion 2: the degeneracy detector flags VaR(beta) whenever beta
/// reaches the largest atom probability (uniform d = 2, 3, 4) and clears
/// EssSup / ES(0.5) / Entropic(1) with witness values matching closed
/// forms. Runtime < 30 s.
#[test]
fn criterion_2_degeneracy_detection() {
    let start = Instant::now();
    let params = ConjParams {
        simplex_resolution: Some(10),
        ..ConjParams::default()
    };
    for d in [2usize, 3, 4] {
        let space = FiniteProbSpace::uniform(d);
        let max_atom = 1.0 / d as f64;
        for beta in [max_atom, (max_atom + 0.2).min(0.9)] {
            let verdict =
                detect_degeneracy(&RiskMeasure::var(beta), &space, &params, None).unwrap();
            assert!(
                verdict.degenerate,
                "VaR({beta}) on uniform {d} should be degenerate"
            );
            assert!(verdict.escape_direction.is_some());
        }
        for (name, spec, tol) in [
            ("esssup", RiskMeasure::EssSup, 1e-9),
            ("es(0.5)", RiskMeasure::es(0.5), 1e-9),
            ("entropic(1)", RiskMeasure::entropic(1.0), 1e-3),
        ] {
            let verdict = detect_degeneracy(&spec, &space, &params, None).unwrap();
            assert!(!verdict.degenerate, "{name} flagged degenerate on d={d}");
            let witness = verdict.witness.unwrap();
            // First finite point scanned is the reference measure, where all
            // three conjugates vanish (relative entropy of P from P is 0).
            assert!(
                witness.q.approx_eq(&space.reference_measure(), 1e-12),
                "{name} witnessed away from the reference"
            );
            assert!(
                witness.value.abs() <= tol,
                "{name} witness value {} beyond {tol}",
                witness.value
            );
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 30.0, "criterion 2 took {elapsed:.2} s");
    println!("ACCEPTANCE 2 PASS — quantile degeneracy at atom-mass levels, convex catalog clear ({elapsed:.2} s)");
}

/// Criterion 3: the improperness probe certifies −∞ for two VaR(0.5)
/// agents on two uniform atoms via the explicit ±(K, −K) transfers
/// reaching −2·10⁶, and for two degenerate Choquet agents on four atoms.
/// Runtime < 5 s.
#[test]
fn criterion_3_improperness_probe() {
    let start = Instant::now();
    let s2 = FiniteProbSpace::uniform(2);
    let var_pair = unweighted(vec![RiskMeasure::var(0.5), RiskMeasure::var(0.5)]);
    match improperness_probe(&var_pair, &s2, 8).unwrap() {
        ProbeVerdict::MinusInf {
            objectives,
            witness,
            ..
        } => {
            let final_obj = objectives.last().unwrap().1;
            assert!(final_obj <= -2e6, "final objective {final_obj}");
            // the witness transfers are the advertised ±(K, −K)
            let w0 = witness[0].values();
            let w1 = witness[1].values();
            assert_eq!(w0[0], -w0[1]);
            assert_eq!(w0[0], -w1[0]);
            assert_eq!(w1[0], -w1[1]);
            // and the trace decreases at every scaling
            for pair in objectives.windows(2) {
                assert!(pair[1].1 < pair[0].1);
            }
        }
        other => panic!("expected MinusInf, got {other:?}"),
    }

    let s4 = FiniteProbSpace::uniform(4);
    let choquet = RiskMeasure::choquet(Distortion::two_sided_half());
    let choquet_pair = unweighted(vec![choquet.clone(), choquet]);
    assert!(matches!(
        improperness_probe(&choquet_pair, &s4, 8).unwrap(),
        ProbeVerdict::MinusInf { .. }
    ));

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 5.0, "criterion 3 took {elapsed:.2} s");
    println!("ACCEPTANCE 3 PASS — zero-sum transfers certify the collapse to −∞ ({elapsed:.2} s)");
}

/// Criterion 4: with an all-ES(0.5) population, the certified affine
/// minorant at the reference measure holds for every solver value on 100
/// seeded payoffs.
#[test]
fn criterion_4_finiteness_certificate_bounds_the_solver() {
    let space = FiniteProbSpace::uniform(4);
    let p = space.reference_measure();
    let pop = unweighted(vec![
        RiskMeasure::es(0.5),
        RiskMeasure::es(0.5),
        RiskMeasure::es(0.5),
    ]);
    let conj_params = ConjParams {
        simplex_resolution: Some(10),
        ..ConjParams::default()
    };
    let minorant =
        finiteness_certificate(&pop, &space, &p, &[0.0, 0.0, 0.0], &conj_params).unwrap();

    let solver = SolverParams {
        points_per_axis: 3,
        ..SolverParams::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    for _ in 0..100 {
        let x = random_payoff(&mut rng, 4, 4.0);
        let value = solve_exact(&pop, &space, &x, &solver)
            .unwrap()
            .value
            .finite()
            .expect("certified population is globally finite");
        let bound = minorant.lower_bound(&x).unwrap();
        assert!(
            value >= bound - 1e-9,
            "solver value {value} undercut the certified minorant {bound}"
        );
    }
    println!("ACCEPTANCE 4 PASS — certified minorant E[X] holds on 100 seeded payoffs");
}

/// Criterion 5: the conjugate of the solver-computed value function agrees
/// with the weighted sum of agent conjugates on every simplex grid point
/// (step 1/20) within 5e-2, for ES+ES and Entropic+ES pairs on d = 2, 3.
/// Runtime < 2 min.
#[test]
fn criterion_5_value_function_conjugate_formula() {
    let start = Instant::now();
    for d in [2usize, 3] {
        let space = FiniteProbSpace::uniform(d);
        let cases = [
            vec![RiskMeasure::es(0.25), RiskMeasure::es(0.5)],
            vec![RiskMeasure::entropic(1.0), RiskMeasure::es(0.5)],
        ];
        for measures in cases {
            let pop = unweighted(measures.clone());
            let solver = SolverParams {
                restarts: 0,
                polish_rounds: 20,
                polish_points: 5,
                polish_sweeps: 2,
                ..SolverParams::default()
            };
            let conj_params = ConjParams {
                simplex_resolution: Some(20),
                ..ConjParams::default()
            };
            // numerical conjugate of the computed value function
            let cost = |x: &[f64]| {
                let target = Rv::new(x.to_vec()).unwrap();
                solve_exact(&pop, &space, &target, &solver)
                    .unwrap()
                    .value
                    .finite()
                    .expect("these populations are globally finite")
            };
            let shell_points: Vec<usize> = if d == 2 {
                vec![41, 9, 9]
            } else {
                vec![33, 9, 9]
            };
            let value_table =
                conj_table_of_cost(cost, &space, &conj_params, &shell_points).unwrap();
            // the additive formula, one table per agent
            let agent_tables: Vec<_> = pop
                .agents()
                .iter()
                .map(|a| conj_table(&a.measure, &space, &conj_params).unwrap())
                .collect();
            for (idx, q) in value_table.grid().iter().enumerate() {
                let lhs = &value_table.values()[idx];
                let rhs: Option<f64> = agent_tables
                    .iter()
                    .zip(pop.agents())
                    .map(|(t, a)| t.values()[idx].finite().map(|v| a.weight * v))
                    .sum();
                match (lhs, rhs) {
                    (ConjValue::Finite(l), Some(r)) => assert!(
                        (l - r).abs() <= 5e-2,
                        "value-function conjugate {l} vs additive formula {r} at {q:?} (d={d}, {measures:?})"
                    ),
                    (ConjValue::Diverged { .. }, None) => {}
                    (lhs, rhs) => panic!(
                        "divergence mismatch at {q:?} (d={d}, {measures:?}): {lhs:?} vs {rhs:?}"
                    ),
                }
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 120.0, "criterion 5 took {elapsed:.2} s");
    println!("ACCEPTANCE 5 PASS — value-function conjugate is the weighted sum of agent conjugates ({elapsed:.2} s)");
}

/// Criterion 6: replicating the non-convex min fixture with weights 1/n
/// decays its convexity violation at a fitted log-log slope <= −0.8 from a
/// violation >= 0.1 at n = 1, and the duality gap to the biconjugate floor
/// is bounded by gap(1)·(2/n). Runtime < 5 min.
#[test]
fn criterion_6_duality_gap_decay_under_replication() {
    let start = Instant::now();
    let space = FiniteProbSpace::uniform(2);
    let experiment = ReplicationExperiment {
        base: min_fixture(&space),
        n_list: vec![1, 2, 4, 8, 16],
        segment: (
            Rv::new(vec![0.0, 4.0]).unwrap(),
            Rv::new(vec![0.0, 0.0]).unwrap(),
        ),
        lambda_grid: vec![0.0, 0.25, 0.5, 0.75, 1.0],
    };
    let solver = SolverParams {
        restarts: 4,
        ..SolverParams::default()
    };
    let conj_params = ConjParams {
        simplex_resolution: Some(20),
        ..ConjParams::default()
    };
    let out = run_replication(&experiment, &space, &solver, &conj_params).unwrap();
    let rows = &out.report.per_n;

    assert!(
        rows[0].convexity_violation >= 0.1,
        "violation at n=1 is {}",
        rows[0].convexity_violation
    );
    for pair in rows.windows(2) {
        assert!(
            pair[1].convexity_violation <= pair[0].convexity_violation + 1e-9,
            "violation increased from n={} to n={}",
            pair[0].n,
            pair[1].n
        );
    }
    match out.report.fitted_slope {
        SlopeFit::Fitted(slope) => {
            assert!(slope <= -0.8, "fitted slope {slope} > -0.8");
        }
        SlopeFit::Saturated => panic!("non-convex fixture saturated"),
    }
    let gap1 = rows[0].duality_gap;
    for row in rows {
        assert!(
            row.duality_gap <= gap1 * 2.0 / row.n as f64 + 1e-9,
            "gap {} at n={} exceeds {}",
            row.duality_gap,
            row.n,
            gap1 * 2.0 / row.n as f64
        );
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 300.0, "criterion 6 took {elapsed:.2} s");
    let slope = match out.report.fitted_slope {
        SlopeFit::Fitted(s) => s,
        SlopeFit::Saturated => unreachable!(),
    };
    println!(
        "ACCEPTANCE 6 PASS — violation {:.3} at n=1, slope {slope:.3}, gaps within 2·gap(1)/n ({elapsed:.2} s)",
        rows[0].convexity_violation
    );
}

/// Criterion 7: two-point clouds convexify exactly at rate ‖a−b‖/(2n).
#[test]
fn criterion_7_two_point_minkowski_average() {
    let a = vec![0.0, 0.0];
    let b = vec![1.0, 3.0];
    let gap = 3.0;
    for n in [1usize, 2, 4, 8] {
        let nc = minkowski_nonconvexity(&[a.clone(), b.clone()], n, 0.0).unwrap();
        let expect = gap / (2.0 * n as f64);
        assert!(
            (nc - expect).abs() <= 1e-12,
            "nonconvexity {nc} at n={n}, expected {expect}"
        );
    }
    println!("ACCEPTANCE 7 PASS — two-point averages decay exactly as ‖a−b‖/(2n)");
}

/// Criterion 8: convolving 4 ES agents by groups of 2+2 matches the direct
/// solve within twice the grid tolerance on 20 seeded payoffs.
#[test]
fn criterion_8_grouped_convolution() {
    let space = FiniteProbSpace::uniform(4);
    let pop = unweighted(vec![
        RiskMeasure::es(0.25),
        RiskMeasure::es(0.5),
        RiskMeasure::es(0.3),
        RiskMeasure::es(0.4),
    ]);
    // Light polish: the ES optima are located by the structured starts, so
    // the nested outer-times-inner refinement only needs a short tail.
    let solver = SolverParams {
        points_per_axis: 3,
        restarts: 2,
        bcd_sweeps: 8,
        polish_sweeps: 1,
        polish_rounds: 12,
        polish_points: 5,
        ..SolverParams::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let x = random_payoff(&mut rng, 4, 3.0);
        let grouped =
            group_convolve(&pop, &[vec![0, 1], vec![2, 3]], &space, &x, &solver).unwrap();
        let direct = solve_heuristic(&pop, &space, &x, &solver).unwrap();
        let diff = (grouped.value.finite().unwrap() - direct.value.finite().unwrap()).abs();
        let grid_tolerance =
            solver.initial_radius * (1.0 + x.sup_norm()) / (solver.points_per_axis - 1) as f64;
        assert!(
            diff <= 2.0 * grid_tolerance,
            "grouped vs direct differ by {diff} (allowed {})",
            2.0 * grid_tolerance
        );
        worst = worst.max(diff);
    }
    println!("ACCEPTANCE 8 PASS — 2+2 grouping matches the direct solve (worst diff {worst:.2e})");
}

/// Criterion 9: block-constant and unrestricted solves agree for ES
/// populations on every partition of the 4-atom space (50 seeded
/// block-constant payoffs), while a VaR pair only satisfies the inequality
/// valueAll <= valueG.
#[test]
fn criterion_9_conditional_reduction() {
    let space = FiniteProbSpace::uniform(4);
    let q = space.reference_measure();
    let es_pop = unweighted(vec![RiskMeasure::es(0.25), RiskMeasure::es(0.5)]);
    let solver = SolverParams::default();
    let partitions = riskshare::probspace::enumerate_partitions(4);
    assert_eq!(partitions.len(), 15);
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let mut cases = 0;
    'outer: loop {
        for g in &partitions {
            let blocks = g.num_blocks();
            let block_values: Vec<f64> = (0..blocks).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let mut values = vec![0.0; 4];
            for (v, block) in block_values.iter().zip(g.blocks()) {
                for &a in block {
                    values[a] = *v;
                }
            }
            let x = Rv::new(values).unwrap();
            let out = conditional_reduction(&es_pop, &space, g, &q, &x, &solver).unwrap();
            let va = out.value_all.finite().unwrap();
            let vg = out.value_g.finite().unwrap();
            assert!(
                (va - vg).abs() <= 1e-6,
                "ES population disagreed on {g:?}: {va} vs {vg}"
            );
            cases += 1;
            if cases >= 50 {
                break 'outer;
            }
        }
    }

    let var_pop = unweighted(vec![RiskMeasure::var(0.25), RiskMeasure::var(0.25)]);
    let g = PartitionAlgebra::new(4, vec![vec![0, 1], vec![2, 3]]).unwrap();
    let fixtures = [
        vec![0.0, 0.0, 4.0, 4.0],
        vec![2.0, 2.0, -1.0, -1.0],
        vec![1.0, 1.0, 1.0, 1.0],
    ];
    let mut strict = false;
    for v in fixtures {
        let x = Rv::new(v).unwrap();
        let out = conditional_reduction(&var_pop, &space, &g, &q, &x, &solver).unwrap();
        assert!(
            out.value_all.total_cmp(out.value_g) != std::cmp::Ordering::Greater,
            "valueAll exceeded valueG on {x:?}"
        );
        if let (Value::Finite(va), Value::Finite(vg)) = (out.value_all, out.value_g) {
            if va < vg - 1e-6 {
                strict = true;
            }
        }
    }
    assert!(strict, "no fixture showed a strictly smaller unrestricted value");
    println!("ACCEPTANCE 9 PASS — ES populations agree on all 15 partitions; VaR pair only one-sided");
}

/// Criterion 10: ES is dilatation monotone across all 15 partitions of the
/// 4-atom space on 1000 seeded payoffs; VaR(0.25) fails with the recorded
/// flattened-spike counterexample. Runtime < 1 min.
#[test]
fn criterion_10_dilatation_monotonicity() {
    let start = Instant::now();
    let space = FiniteProbSpace::uniform(4);
    let q = space.reference_measure();

    let es = dilatation_monotone_check(&RiskMeasure::es(0.5), &space, &q, 1000, 1010).unwrap();
    assert!(es.pass, "{es:?}");
    assert_eq!(es.partitions_checked, 15);

    let var = dilatation_monotone_check(&RiskMeasure::var(0.25), &space, &q, 1000, 1010).unwrap();
    assert!(!var.pass);
    let ce = var.counterexample.unwrap();
    assert_eq!(ce.x.values(), &[0.0, 0.0, 0.0, 4.0]);
    assert_eq!(ce.partition, PartitionAlgebra::trivial(4));
    assert_eq!(ce.direct_risk, 0.0);
    assert_eq!(ce.conditioned_risk, 1.0);

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "criterion 10 took {elapsed:.2} s");
    println!("ACCEPTANCE 10 PASS — ES dilatation monotone, quantile fails at the flattened spike ({elapsed:.2} s)");
}

/// Companion gate: the axiom, Fenchel-inequality, weak-duality, and
/// consistency suites must pass on every catalog spec.
#[test]
fn catalog_wide_property_suites() {
    let space = FiniteProbSpace::uniform(4);
    let p = space.reference_measure();
    let catalog = [
        RiskMeasure::var(0.25),
        RiskMeasure::es(0.5),
        RiskMeasure::entropic(1.0),
        RiskMeasure::choquet(Distortion::two_sided_half()),
        RiskMeasure::EssSup,
        RiskMeasure::expectation(p.clone()),
        RiskMeasure::min_of(RiskMeasure::EssSup, RiskMeasure::es(0.5)),
        RiskMeasure::scaled(2.0, RiskMeasure::es(0.5)),
        RiskMeasure::shifted(1.0, RiskMeasure::expectation(p.clone())),
    ];
    for spec in &catalog {
        let report = check_axioms(spec, &space, 1000, 77).unwrap();
        assert!(report.is_pass(), "axioms failed for {spec:?}: {report:?}");
    }

    // Fenchel inequality through a computed table on a spec whose conjugate
    // the grid represents exactly.
    let conj_params = ConjParams {
        simplex_resolution: Some(10),
        ..ConjParams::default()
    };
    let table = conj_table(&RiskMeasure::es(0.5), &space, &conj_params).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7777);
    for _ in 0..50 {
        let x = random_payoff(&mut rng, 4, 4.0);
        let rho = RiskMeasure::es(0.5).evaluate(&space, &x).unwrap();
        for (q, v) in table.grid().iter().zip(table.values()) {
            if let ConjValue::Finite(c) = v {
                assert!(rho >= q.expectation(&x).unwrap() - c - 1e-9);
            }
        }
        let bi = table.biconjugate(&x).unwrap().finite().unwrap();
        assert!(bi <= rho + 1e-9);
    }

    // Weak duality on a mixed population.
    let pop = unweighted(vec![RiskMeasure::es(0.25), RiskMeasure::es(0.5)]);
    let tables: Vec<_> = pop
        .agents()
        .iter()
        .map(|a| conj_table(&a.measure, &space, &conj_params).unwrap())
        .collect();
    for _ in 0..20 {
        let x = random_payoff(&mut rng, 4, 4.0);
        let out = solve_exact(&pop, &space, &x, &SolverParams::default()).unwrap();
        let bound = dual_lower_bound(&pop, &space, &x, &tables).unwrap();
        if let (Value::Finite(v), Value::Finite(b)) = (out.value, bound) {
            assert!(v >= b - 1e-9, "weak duality violated: {v} < {b}");
        }
    }

    // Consistency spot checks pass for the consistent part of the catalog.
    for spec in [
        RiskMeasure::es(0.5),
        RiskMeasure::entropic(1.0),
        RiskMeasure::EssSup,
    ] {
        let report = consistency_spot_check(&spec, &space, &p, 300, 99).unwrap();
        assert!(report.pass, "{spec:?} failed the consistency spot check");
    }

    // On finite spaces convergence in probability is convergence everywhere,
    // so the continuity axioms hold for the whole catalog by construction;
    // they are documentation, not tests.
    println!("ACCEPTANCE PROPERTY SUITES PASS — axioms, Fenchel inequality, weak duality, consistency");
}

/// A conjugate-degenerate spec makes the finiteness certificate fail for
/// every proposed bound — the negative side of criterion 2/4.
#[test]
fn degenerate_specs_never_certify() {
    let s2 = FiniteProbSpace::uniform(2);
    let pop = AgentPopulation::new(
        vec![Agent::new(1.0, RiskMeasure::var(0.5))],
        Mode::Unweighted,
    )
    .unwrap();
    let conj_params = ConjParams {
        simplex_resolution: Some(10),
        ..ConjParams::default()
    };
    for q in [
        ProbMeasure::uniform(2),
        ProbMeasure::new(vec![0.9, 0.1]).unwrap(),
        ProbMeasure::point_mass(2, 0),
    ] {
        for bound in [0.0, 100.0, 1e5] {
            assert!(finiteness_certificate(&pop, &s2, &q, &[bound], &conj_params).is_err());
        }
    }
    println!("ACCEPTANCE NEGATIVE CONTROL PASS — degenerate quantile never certifies");
}
