//! Property tests for the structural invariants: seeded regeneration,
//! kinematic consistency, event inversion, oracle exactness, and the
//! variance-recursion properties on randomized graphs.

use dopcomp::gbp::{GbpEngine, MessageInit};
use dopcomp::lsbp::{self, PrecisionVector, VarianceRecursion};
use dopcomp::netsim::Engine;
use dopcomp::oracle;
use dopcomp::scenario::{
    apply_event, generate_connected, generate_tree, sample_measurements, synthesize_truth,
    DynamicEvent, EventKind, JoinEdge, Kinematics, NoiseSpec, Scenario, TruthMode,
};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn scenarios_regenerate_bit_identically(seed in any::<u64>(), n in 2usize..20) {
        let build = || {
            let topo = generate_connected(n, 0.3, NoiseSpec::default(), seed).unwrap();
            let truth = synthesize_truth(
                &topo,
                TruthMode::Uniform { lo: -500.0, hi: 500.0, anchor_value: 0.0 },
                seed,
            )
            .unwrap();
            Scenario::new(topo, truth, seed, false).unwrap()
        };
        prop_assert_eq!(build(), build());
    }

    #[test]
    fn kinematic_truth_decomposes_pairwise_sums_exactly(
        seed in any::<u64>(),
        n in 2usize..12,
    ) {
        let kin = Kinematics::random(n, (2000.0, 2000.0), (-40.0, 40.0), seed);
        let Ok(topo) = dopcomp::scenario::generate_geometric(
            &kin, (2000.0, 2000.0), 1500.0, NoiseSpec::default(), 1.0, seed,
        ) else { return Ok(()); };
        let truth = synthesize_truth(
            &topo,
            TruthMode::Kinematic { f0: 5.9e9, c: 3e8, kinematics: &kin },
            seed,
        )
        .unwrap();
        let noiseless = sample_measurements(&topo, &truth, seed, true).unwrap();
        for (edge, r) in noiseless.values() {
            let vi = kin.get(edge.a()).unwrap().vx;
            let vj = kin.get(edge.b()).unwrap().vx;
            // r - n == (v_i + v_j) * f0 / c, bit-for-bit at n = 0 up to the
            // one shared multiplication ordering.
            let expected = vi * 5.9e9 / 3e8 + vj * 5.9e9 / 3e8;
            prop_assert!((r - expected).abs() <= 1e-9 * expected.abs().max(1.0));
        }
    }

    #[test]
    fn leave_join_inverse_restores_topology(seed in any::<u64>(), n in 3usize..14) {
        let topo = generate_connected(n, 0.4, NoiseSpec::default(), seed).unwrap();
        let truth = synthesize_truth(
            &topo,
            TruthMode::Uniform { lo: -10.0, hi: 10.0, anchor_value: 0.0 },
            seed,
        )
        .unwrap();
        let victim = (n as u32).max(2);
        let edges: Vec<JoinEdge> = topo
            .edges()
            .iter()
            .filter(|(e, _)| e.touches(victim))
            .map(|(e, p)| JoinEdge {
                to: e.other(victim),
                noise_var: p.noise_var,
                reliability: p.reliability,
            })
            .collect();
        let offset = truth.get(victim).unwrap();
        let leave = DynamicEvent { at_iteration: 1, kind: EventKind::Leave(victim) };
        let (t1, g1) = apply_event(&topo, &truth, &leave).unwrap();
        let rejoin = DynamicEvent {
            at_iteration: 2,
            kind: EventKind::Join { id: victim, truth_offset: offset, edges },
        };
        let (t2, g2) = apply_event(&t1, &g1, &rejoin).unwrap();
        prop_assert_eq!(t2, topo);
        prop_assert_eq!(g2, truth);
    }

    #[test]
    fn ml_is_exact_on_noiseless_random_trees(seed in any::<u64>(), n in 2usize..16) {
        let topo = generate_tree(n, NoiseSpec::default(), seed).unwrap();
        let truth = synthesize_truth(
            &topo,
            TruthMode::Uniform { lo: -500.0, hi: 500.0, anchor_value: 3.0 },
            seed,
        )
        .unwrap();
        let m = sample_measurements(&topo, &truth, seed, true).unwrap();
        let sys = oracle::build_system(&topo, &m).unwrap();
        let est = oracle::ml_estimate(&sys, 3.0).unwrap();
        for (node, value) in est {
            prop_assert!((value - truth.get(node).unwrap()).abs() < 1e-10);
        }
    }

    #[test]
    fn variance_recursion_properties_hold(
        seed in any::<u64>(),
        n in 2usize..30,
        alpha in 1.0001f64..10.0,
    ) {
        let topo = generate_connected(n, 0.3, NoiseSpec::default(), seed).unwrap();
        let map = VarianceRecursion::from_topology(&topo);
        let mut rng = dopcomp::seeds::stream(seed, &[0x7e57]);
        use rand::Rng;
        let p = PrecisionVector::from_entries(
            map.nodes().iter().map(|&v| (v, 10f64.powf(rng.random_range(-2.0..2.0)))).collect(),
        );
        let image = map.apply(&p);
        let envelope = map.upper_envelope();
        for (i, (&fi, &ui)) in image.values().iter().zip(envelope.values()).enumerate() {
            prop_assert!(fi > 0.0);
            if map.has_var_neighbor(i) {
                prop_assert!(fi < ui);
            } else {
                prop_assert!(fi <= ui);
            }
        }
        // Scalability.
        let scaled = PrecisionVector::from_entries(
            map.nodes().iter().zip(p.values()).map(|(&v, &x)| (v, alpha * x)).collect(),
        );
        let lhs = map.apply(&p);
        let rhs = map.apply(&scaled);
        for (a, b) in lhs.values().iter().zip(rhs.values()) {
            prop_assert!(alpha * a > *b);
        }
        // Monotonicity against a dominated partner.
        let q = PrecisionVector::from_entries(
            map.nodes()
                .iter()
                .zip(p.values())
                .map(|(&v, &x)| (v, x * rng.random_range(0.0..1.0)))
                .collect(),
        );
        prop_assert!(map.apply(&p).ge(&map.apply(&q)));
    }

    #[test]
    fn gbp_runs_never_produce_negative_precision(seed in any::<u64>(), n in 3usize..12) {
        let topo = generate_connected(n, 0.5, NoiseSpec::default(), seed).unwrap();
        let truth = synthesize_truth(
            &topo,
            TruthMode::Uniform { lo: -100.0, hi: 100.0, anchor_value: 0.0 },
            seed,
        )
        .unwrap();
        let scenario = Scenario::new(topo, truth, seed, false).unwrap();
        let mut engine = GbpEngine::new(&scenario, MessageInit { precision: 0.5, mean: 1.0 }).unwrap();
        for _ in 0..15 {
            let outgoing = engine.begin_iteration();
            for (link, payload) in outgoing {
                prop_assert!(payload.precision >= 0.0);
                engine.receive(link, payload);
            }
            engine.end_iteration();
            for belief in engine.beliefs().values() {
                prop_assert!(belief.precision >= 0.0);
            }
        }
    }

    #[test]
    fn lsbp_fixed_points_match_from_any_uniform_start(
        seed in any::<u64>(),
        n in 3usize..20,
    ) {
        let topo = generate_connected(n, 0.3, NoiseSpec::default(), seed).unwrap();
        let nodes: Vec<u32> = topo.nodes().iter().copied().filter(|&v| v != 1).collect();
        let reference = lsbp::variance_fixed_point(
            &topo,
            &PrecisionVector::zeros(nodes.clone()),
            1e-12,
            200_000,
        )
        .unwrap();
        for init_variance in [100.0, 0.01] {
            let p0 = PrecisionVector::uniform(nodes.clone(), 1.0 / init_variance);
            let p = lsbp::variance_fixed_point(&topo, &p0, 1e-12, 200_000).unwrap();
            prop_assert!(p.max_abs_diff(&reference) < 1e-8);
        }
    }
}
