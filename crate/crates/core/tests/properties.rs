use aggstab::datasets::{parse_movielens_str, Rating, RatingsTable};
use aggstab::filters::{certify_filter, circulant_from_coeffs, estimate_lipschitz, frechet_derivative_poly, frechet_fd_oracle, stability_bound};
use aggstab::graph::{eigendecompose_symmetric, random_graph, spectral_norm, RandomGraphModel};
use aggstab::model::{aggregate, Nonlinearity, Pooling, ReadoutKind};
use aggstab::stability::{output_difference, random_probes, BoundLayer};
use aggstab::training::{lipschitz_penalty, LossSpec};
use aggstab::{AggGnnModel, CnnLayerSpec, FirstLayerMode, Graph, GraphSignal, Matrix, Omega, PolyFilter};
use proptest::prelude::*;

fn coeffs(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, 1..=max_len)
}

fn symmetric(n: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-1.0f64..1.0, n * n).prop_map(move |v| {
        let m = Matrix::from_vec(n, n, v);
        (&m + m.transpose()) * 0.5
    })
}

fn sized_symmetric() -> impl Strategy<Value = Matrix> {
    (1usize..=7).prop_flat_map(symmetric)
}

proptest! {
    #[test]
    fn cyclic_shifts_form_a_group(c in coeffs(12), m1 in 0usize..30, m2 in 0usize..30) {
        let f = PolyFilter::new(c).unwrap();
        let len = f.taps();
        prop_assert_eq!(f.cyclic_shift(m1).cyclic_shift(m2), f.cyclic_shift(m1 + m2));
        prop_assert_eq!(f.cyclic_shift(len), f.clone());
        prop_assert_eq!(f.cyclic_shift(0), f);
    }

    #[test]
    fn circulant_columns_are_shifts(c in coeffs(10)) {
        let f = PolyFilter::new(c).unwrap();
        let h = circulant_from_coeffs(&f);
        for m in 0..f.taps() {
            let col: Vec<f64> = h.column(m).iter().copied().collect();
            let shifted = f.cyclic_shift(m);
            prop_assert_eq!(col.as_slice(), shifted.coeffs());
        }
    }

    #[test]
    fn first_layer_matches_shift_polynomials(c in coeffs(6), s in symmetric(5), x in prop::collection::vec(-1.0f64..1.0, 5)) {
        let f = PolyFilter::new(c).unwrap();
        let a = f.order();
        let model = AggGnnModel::from_filters(
            a,
            &aggstab::model::FilterBank::Shared(vec![f.clone()]),
            Nonlinearity::Identity,
            Pooling::None,
            aggstab::model::Readout::Sum,
        ).unwrap();
        let x = GraphSignal(x);
        let out = model.first_layer_output(&s, &x).unwrap();
        for m in 0..=a {
            let want = f.cyclic_shift(m).eval_matrix(&s).unwrap() * x.to_vector();
            for i in 0..5 {
                prop_assert!((out.at(i, 0, m) - want[i]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn frechet_matches_central_difference(s in symmetric(5), xi in symmetric(5), c in coeffs(7)) {
        let f = PolyFilter::new(c).unwrap();
        let exact = frechet_derivative_poly(&f, &s, &xi).unwrap();
        let fd = frechet_fd_oracle(&f, &s, &xi, 1e-6).unwrap();
        prop_assert!((exact - fd).amax() <= 1e-5);
    }

    #[test]
    fn grid_refinement_never_lowers_estimate(c in coeffs(8), half in 0.1f64..2.0, g in 2usize..200) {
        let f = PolyFilter::new(c).unwrap();
        let coarse = estimate_lipschitz(&f, &Omega::new(-half, half, g).unwrap(), true);
        let fine = estimate_lipschitz(&f, &Omega::new(-half, half, 2 * g).unwrap(), true);
        prop_assert!(fine.l0 >= coarse.l0 && fine.l1 >= coarse.l1);
    }

    #[test]
    fn bound_is_monotone_and_linear(
        n in 1usize..50, a in 0usize..20,
        l0 in 0.0f64..5.0, l1 in 0.0f64..5.0,
        t0 in 0.0f64..1.0, t1 in 0.0f64..1.0, k in 1.0f64..4.0,
    ) {
        let b = stability_bound(n, a, l0, l1, t0, t1).unwrap();
        let bigger = stability_bound(n, a, l0, l1, t0 * k, t1 * k).unwrap();
        let larger_n = stability_bound(n + 1, a + 1, l0, l1, t0, t1).unwrap();
        prop_assert!(bigger.total >= b.total && larger_n.total >= b.total);
        prop_assert!((bigger.total - k * b.total).abs() <= 1e-12 * bigger.total.max(1.0));
    }

    #[test]
    fn penalty_vanishes_exactly_when_certified(c in coeffs(5), l0 in 0.0f64..3.0, l1 in 0.0f64..3.0) {
        let f = PolyFilter::new(c).unwrap();
        let omega = Omega::new(-1.0, 1.0, 64).unwrap();
        let spec = LossSpec {
            penalty_l0_weight: 1.0,
            penalty_l1_weight: 1.0,
            l0_target: l0,
            l1_target: l1,
            ..LossSpec::unpenalized(omega)
        };
        let cert = certify_filter(&f, &omega, l0, l1).unwrap();
        prop_assert_eq!(lipschitz_penalty(&[f], &spec) == 0.0, cert.pass);
    }

    #[test]
    fn aggregation_is_linear(s in symmetric(6), x in prop::collection::vec(-1.0f64..1.0, 6), y in prop::collection::vec(-1.0f64..1.0, 6), k in -3.0f64..3.0) {
        let combo = GraphSignal(x.iter().zip(&y).map(|(u, v)| u + k * v).collect());
        let ax = aggregate(&s, &GraphSignal(x), 5).unwrap();
        let ay = aggregate(&s, &GraphSignal(y), 5).unwrap();
        let ac = aggregate(&s, &combo, 5).unwrap();
        prop_assert!((ac.data - (ax.data + ay.data * k)).amax() <= 1e-10);
    }

    #[test]
    fn eigendecomposition_reconstructs(s in sized_symmetric()) {
        let d = eigendecompose_symmetric(&s).unwrap();
        prop_assert!((d.reconstruct() - &s).amax() <= 1e-10 * spectral_norm(&s).unwrap().max(1.0));
        prop_assert!(d.eigenvalues.as_slice().windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn random_graphs_are_symmetric_and_seeded(n in 1usize..20, p in 0.0f64..=1.0, seed in any::<u64>()) {
        let model = RandomGraphModel::ErdosRenyi { p };
        let g = random_graph(&model, n, seed).unwrap();
        prop_assert_eq!(g.shift(), &g.shift().transpose());
        prop_assert_eq!(g, random_graph(&model, n, seed).unwrap());
    }

    #[test]
    fn graph_json_round_trips(s in sized_symmetric()) {
        let g = Graph::new(s, None).unwrap();
        prop_assert_eq!(Graph::from_json(&g.to_json().unwrap()).unwrap(), g);
    }

    #[test]
    fn ratings_round_trip(cells in prop::collection::btree_map((1u32..30, 1u32..40), (1u8..=5, 0i64..2_000_000_000), 1..80)) {
        let entries = cells
            .into_iter()
            .map(|((user, item), (rating, timestamp))| Rating { user, item, rating: rating as f64, timestamp })
            .collect();
        let table = RatingsTable::new(entries).unwrap();
        prop_assert_eq!(parse_movielens_str(&table.to_udata()).unwrap(), table);
    }

    #[test]
    fn model_json_round_trips(a in 1usize..6, features in 1usize..4, seed in any::<u64>()) {
        let specs = [CnnLayerSpec { taps: a + 1, features_in: 1, features_out: features, nonlinearity: Nonlinearity::Tanh, pool: Pooling::Avg { stride: 2 } }];
        let m = AggGnnModel::init(a, FirstLayerMode::PerNode, &specs, ReadoutKind::Linear, Some(4), seed).unwrap();
        prop_assert_eq!(AggGnnModel::from_json(&m.to_json().unwrap()).unwrap(), m);
    }

    #[test]
    fn output_difference_is_scale_invariant(s in symmetric(5), d in symmetric(5), k in 0.01f64..100.0, seed in any::<u64>()) {
        let specs = [CnnLayerSpec { taps: 4, features_in: 1, features_out: 2, nonlinearity: Nonlinearity::Identity, pool: Pooling::None }];
        let model = AggGnnModel::init(3, FirstLayerMode::Shared, &specs, ReadoutKind::Sum, None, seed).unwrap();
        let st = &s + d * 1e-2;
        let probes = random_probes(5, 4, seed);
        let scaled: Vec<GraphSignal> = probes.iter().map(|p| GraphSignal(p.0.iter().map(|v| v * k).collect())).collect();
        let base = output_difference(&model, &s, &st, &probes, BoundLayer::FullNetwork).unwrap();
        let other = output_difference(&model, &s, &st, &scaled, BoundLayer::FullNetwork).unwrap();
        prop_assert!((base - other).abs() <= 1e-12 * base.max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn nonlinearities_are_one_lipschitz(x in -50.0f64..50.0, y in -50.0f64..50.0) {
        for nl in [Nonlinearity::Relu, Nonlinearity::Abs, Nonlinearity::Tanh, Nonlinearity::Identity] {
            prop_assert!((nl.apply(x) - nl.apply(y)).abs() <= (x - y).abs() + 1e-15);
        }
    }
}
