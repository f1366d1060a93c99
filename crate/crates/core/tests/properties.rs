use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use shuffle_linucb::accounting::{advanced_composition, amplified_epsilon};
use shuffle_linucb::experiment::{csv_string, grid, run_matrix_with, Algo, ExperimentConfig};
use shuffle_linucb::protocol::amp::{analyze_amp_vectors, AmpMessage};
use shuffle_linucb::protocol::central::{make_central_protocol, CentralProtocol, TreeAggregator};
use shuffle_linucb::protocol::local::make_local_protocol;
use shuffle_linucb::protocol::vec::{analyze_vector_vec, randomize_vector_vec, shuffle_vec, VecParams};
use shuffle_linucb::rng::{stream, Purpose};
use shuffle_linucb::{
    generate_instance, run_episode, BatchStatistics, EngineConfig, GramMatrix, IdentityProtocol, RidgeConfig,
};

fn engine(horizon: usize, batch: usize, lambda: f64) -> EngineConfig {
    EngineConfig::new(horizon, batch, RidgeConfig::new(lambda, 0.1).unwrap()).unwrap()
}

#[test]
fn noiseless_central_matches_identity() {
    for &batch in &[1usize, 7, 20] {
        for seed in 0..3 {
            let inst = generate_instance(5, 30, seed).unwrap();
            let cfg = engine(300, batch, 1.0);
            let plain = run_episode(&inst, &mut IdentityProtocol, &cfg, seed).unwrap();
            let mut central = CentralProtocol::new(300usize.div_ceil(batch), 0.0);
            let tree = run_episode(&inst, &mut central, &cfg, seed).unwrap();
            assert_eq!(plain.actions, tree.actions, "B={batch} seed={seed}");
            assert_eq!(central.tree().unwrap().leaf_count(), 300usize.div_ceil(batch));
            let diff = (plain.ledger.v_running().as_matrix() - tree.ledger.v_running().as_matrix()).amax();
            assert!(diff < 1e-9, "{diff}");
        }
    }
}

#[test]
fn central_protocol_sizes_tree_by_batches() {
    let inst = generate_instance(4, 10, 9).unwrap();
    let cfg = engine(100, 10, 200.0);
    let mut p = make_central_protocol(1.0, 0.1, 100, 10, 1).unwrap();
    run_episode(&inst, &mut p, &cfg, 9).unwrap();
    let tree = p.tree().unwrap();
    assert_eq!(tree.leaf_count(), 10);
    assert_eq!(tree.capacity(), 16);
}

#[test]
fn local_protocol_runs_sequentially_and_batched() {
    let inst = generate_instance(5, 20, 4).unwrap();
    for &b in &[1usize, 20] {
        let mut p = make_local_protocol(1.0, 0.1, b).unwrap();
        let ep = run_episode(&inst, &mut p, &engine(200, b, 500.0), 4).unwrap();
        assert_eq!(ep.update_times.len(), 200 / b);
        assert!(ep.trace.cumulative().windows(2).all(|w| w[0] <= w[1]));
    }
}

#[test]
fn parallel_and_serial_runs_agree() {
    let cfg = ExperimentConfig {
        algos: Algo::ALL.to_vec(),
        epsilons: vec![0.2, 1.0],
        horizon: 200,
        batch_size: 20,
        seeds: (0..3).collect(),
        num_arms: 20,
        ..ExperimentConfig::default()
    };
    let a = csv_string(&run_matrix_with(&cfg, false).unwrap()).unwrap();
    let b = csv_string(&run_matrix_with(&cfg, true).unwrap()).unwrap();
    let c = csv_string(&run_matrix_with(&cfg, false).unwrap()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, c);
}

#[test]
fn run_records_are_monotone() {
    let cfg = ExperimentConfig {
        algos: vec![Algo::SdpVec, Algo::Jdp],
        epsilons: vec![1.0],
        horizon: 500,
        seeds: vec![1, 2],
        grid_points: 50,
        ..ExperimentConfig::default()
    };
    for r in run_matrix_with(&cfg, true).unwrap() {
        assert_eq!(r.t.len(), 50);
        assert!(r.regret.windows(2).all(|w| w[0] <= w[1]));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn noiseless_tree_prefix_is_exact(
        leaves in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 2), 1..40),
        extra in 0usize..10,
    ) {
        let stats: Vec<BatchStatistics> = leaves
            .iter()
            .map(|l| {
                let u = DVector::from_column_slice(l);
                BatchStatistics { v: GramMatrix::new(&u * u.transpose()).unwrap(), u }
            })
            .collect();
        let mut tree = TreeAggregator::new(2, stats.len() + extra, 0.0).unwrap();
        let mut rng = stream(0, 0, Purpose::PrivacyNoise);
        for s in &stats {
            prop_assert!(tree.insert(s, &mut rng).unwrap() <= tree.depth());
        }
        for t in 1..=stats.len() {
            let (p, read) = tree.prefix(t).unwrap();
            prop_assert_eq!(read, t.count_ones() as usize);
            let u: DVector<f64> = stats[..t].iter().fold(DVector::zeros(2), |acc, s| acc + &s.u);
            let v: DMatrix<f64> = stats[..t].iter().fold(DMatrix::zeros(2, 2), |acc, s| acc + s.v.as_matrix());
            prop_assert!((p.u - u).amax() < 1e-12);
            prop_assert!((p.v.as_matrix() - v).amax() < 1e-12);
        }
    }

    #[test]
    fn vec_shuffle_is_order_invariant(
        xs in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 1..15),
        seed in any::<u64>(),
        rot in 0usize..15,
    ) {
        let params = VecParams::explicit(6, 40, 0.25, xs.len()).unwrap();
        let mut rng = stream(seed, 1, Purpose::PrivacyNoise);
        let msgs: Vec<_> = xs
            .iter()
            .map(|x| randomize_vector_vec(&DVector::from_column_slice(x), &params, &mut rng).unwrap())
            .collect();
        let mut rotated = msgs.clone();
        rotated.rotate_left(rot % msgs.len());
        let a = shuffle_vec(msgs, &mut rng).unwrap();
        let b = shuffle_vec(rotated, &mut rng).unwrap();
        prop_assert_eq!(&a, &b);
        for c in a.counts.values() {
            prop_assert_eq!(c.total_bits, xs.len() as u64 * (2 * 6 + 40));
            prop_assert!(c.ones <= c.total_bits);
        }
        prop_assert!(analyze_vector_vec(&a, 3, &params).is_ok());
    }

    #[test]
    fn amp_analyzer_is_additive(
        xs in prop::collection::vec(prop::collection::vec(-0.5f64..0.5, 3), 1..20),
    ) {
        let msgs: Vec<_> = xs.iter().map(|x| AmpMessage { payload: DVector::from_column_slice(x) }).collect();
        let sum = analyze_amp_vectors(&msgs).unwrap();
        let direct = xs.iter().fold(DVector::zeros(3), |acc, x| acc + DVector::from_column_slice(x));
        prop_assert!((sum - direct).amax() < 1e-12);
    }

    #[test]
    fn calculators_are_pure(eps0 in 0.01f64..5.0, n in 1usize..100_000, dp in 1e-6f64..0.5, k in 1usize..1000) {
        let a = amplified_epsilon(eps0, 1e-8, n, dp).unwrap();
        let b = amplified_epsilon(eps0, 1e-8, n, dp).unwrap();
        prop_assert_eq!(a.epsilon.to_bits(), b.epsilon.to_bits());
        prop_assert!(a.epsilon > 0.0);
        let c = advanced_composition(0.5, dp, k).unwrap();
        prop_assert_eq!(c.to_bits(), advanced_composition(0.5, dp, k).unwrap().to_bits());
    }

    #[test]
    fn grid_is_increasing_and_bounded(horizon in 1usize..50_000, points in 1usize..1000) {
        let g = grid(horizon, points);
        prop_assert!(g.len() <= points.max(1).min(horizon));
        prop_assert_eq!(*g.last().unwrap(), horizon);
        prop_assert!(g[0] >= 1);
        prop_assert!(g.windows(2).all(|w| w[0] < w[1]));
    }
}
