use gravnet::dataset::{decode_dataset, encode_dataset, record_simulation, split_indices, Dataset, DatasetHeader};
use gravnet::graph::{build_graph, knn_neighbors, GraphConfig};
use gravnet::model::{init_params, model_forward, ModelConfig};
use gravnet::nn::{mse_loss, AdamConfig, AdamState, Matrix, ParamBlocks};
use gravnet::physics::{pairwise_accelerations, simulate, ParticleSet, PhysicsParams};
use gravnet::rollout::{cumulative_errors, StepErrors};
use gravnet::scenarios::{random_cloud, spiral_galaxy, GalaxyParams, Seed};
use gravnet::train::evaluate_loss;
use gravnet::Vec3;
use proptest::prelude::*;

fn dyadic_points(max: usize) -> impl Strategy<Value = Vec<Vec3>> {
    prop::collection::vec((-16i32..16, -16i32..16, -16i32..16), 2..max).prop_map(|v| {
        v.into_iter()
            .map(|(x, y, z)| Vec3::new(x as f64 * 0.25, y as f64 * 0.25, z as f64 * 0.25))
            .collect()
    })
}

fn cloud(max: usize) -> impl Strategy<Value = Vec<(Vec3, f64)>> {
    prop::collection::vec(
        ((-5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0), 0.01f64..2.0),
        2..max,
    )
    .prop_map(|v| v.into_iter().map(|((x, y, z), m)| (Vec3::new(x, y, z), m)).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn knn_is_translation_invariant(points in dyadic_points(120), k in 1usize..10, shift in (-8i32..8, -8i32..8, -8i32..8)) {
        let t = Vec3::new(shift.0 as f64, shift.1 as f64 * 0.5, shift.2 as f64 * 0.25);
        let moved: Vec<Vec3> = points.iter().map(|p| *p + t).collect();
        prop_assert_eq!(knn_neighbors(&points, k).unwrap(), knn_neighbors(&moved, k).unwrap());
    }

    #[test]
    fn knn_lists_are_sorted_and_complete(points in dyadic_points(150), k in 1usize..12) {
        let nb = knn_neighbors(&points, k).unwrap();
        for (i, list) in nb.iter().enumerate() {
            prop_assert_eq!(list.len(), k.min(points.len() - 1));
            prop_assert!(!list.contains(&i));
            let d: Vec<(f64, usize)> = list.iter().map(|&j| ((points[j] - points[i]).norm_squared(), j)).collect();
            prop_assert!(d.windows(2).all(|w| w[0] < w[1]));
            // nothing outside the list is strictly closer than its last entry
            let last = *d.last().unwrap();
            for j in (0..points.len()).filter(|j| *j != i && !list.contains(j)) {
                prop_assert!(((points[j] - points[i]).norm_squared(), j) > last);
            }
        }
    }

    #[test]
    fn graph_in_degree_is_k(points in dyadic_points(80), k in 1usize..9) {
        let n = points.len();
        let g = build_graph(&points, Matrix::zeros(n, 4), Matrix::zeros(n, 3), &GraphConfig { k, with_edge_attrs: true }).unwrap();
        prop_assert!(g.in_degrees().iter().all(|&d| d == k.min(n - 1)));
        let attrs = g.edge_attrs.as_ref().unwrap();
        for (e, &(s, d)) in g.edges.iter().enumerate() {
            prop_assert_eq!(attrs[e], (points[d] - points[s]).norm());
        }
    }

    #[test]
    fn forces_obey_action_reaction(bodies in cloud(60), eps in 0.0f64..0.2) {
        let pos: Vec<Vec3> = bodies.iter().map(|b| b.0).collect();
        let m: Vec<f64> = bodies.iter().map(|b| b.1).collect();
        prop_assume!(eps > 0.0 || pos.iter().enumerate().all(|(i, p)| pos[..i].iter().all(|q| (*p - *q).norm() > 1e-3)));
        let a = pairwise_accelerations(&pos, &m, 1.0, eps).unwrap();
        let mut net = Vec3::ZERO;
        let mut scale = 0.0;
        for (ai, mi) in a.iter().zip(&m) {
            net += *ai * *mi;
            scale += ai.norm() * mi;
        }
        prop_assert!(net.norm() <= 1e-12 * scale.max(1e-300));
    }

    #[test]
    fn dataset_roundtrip_is_bitwise(n in 1usize..12, steps in 1usize..6, seed in 0u64..1000) {
        let init = random_cloud(n, 2.0, 1.0, Seed(seed)).unwrap();
        let params = PhysicsParams { steps, g: 1.0, ..Default::default() };
        let scene = record_simulation(&simulate(&init, &params).unwrap(), 0).unwrap();
        let data = Dataset { header: DatasetHeader::from(&params), scenes: vec![scene] };
        let bytes = encode_dataset(&data).unwrap();
        let back = decode_dataset(&bytes).unwrap();
        prop_assert_eq!(&back, &data);
        prop_assert_eq!(encode_dataset(&back).unwrap(), bytes);
    }

    #[test]
    fn split_is_a_partition(len in 2usize..200, frac in 0.05f64..0.95, seed in 0u64..100) {
        let (train, test) = split_indices(len, frac, Seed(seed)).unwrap();
        prop_assert!(!train.is_empty() && !test.is_empty());
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort();
        prop_assert_eq!(all, (0..len).collect::<Vec<_>>());
    }

    #[test]
    fn cumulative_errors_never_decrease(values in prop::collection::vec(0.0f64..10.0, 1..300)) {
        let e = StepErrors { pos: values.clone(), vel: values.clone(), acc: values.clone() };
        let c = cumulative_errors(&e);
        prop_assert!(c.pos.windows(2).all(|w| w[0] <= w[1]));
        // independent summation with compensation
        let (mut s, mut comp) = (0.0f64, 0.0f64);
        for v in &values {
            let y = v - comp;
            let t = s + y;
            comp = (t - s) - y;
            s = t;
        }
        prop_assert!((c.pos.last().unwrap() - s).abs() <= 1e-12 * s.max(1.0));
    }

    #[test]
    fn adam_with_zero_gradient_is_identity(values in prop::collection::vec(-5.0f64..5.0, 1..50), steps in 1usize..10) {
        let mut p = values.clone();
        let zero = vec![0.0; values.len()];
        let mut adam = AdamState::new(&p, AdamConfig::default());
        for _ in 0..steps {
            adam.step(&mut p, &zero).unwrap();
        }
        prop_assert_eq!(p, values);
    }

    #[test]
    fn mse_is_zero_only_for_equal_inputs(a in prop::collection::vec(-3.0f64..3.0, 3..30), b in prop::collection::vec(-3.0f64..3.0, 3..30)) {
        let len = a.len().min(b.len()) / 3 * 3;
        let x = Matrix::from_vec(len / 3, 3, a[..len].to_vec()).unwrap();
        let y = Matrix::from_vec(len / 3, 3, b[..len].to_vec()).unwrap();
        let l = mse_loss(&x, &y).unwrap();
        prop_assert!(l >= 0.0);
        prop_assert_eq!(l == 0.0, a[..len] == b[..len]);
        prop_assert_eq!(mse_loss(&x, &x).unwrap(), 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn model_outputs_are_finite_and_scene_loss_nonnegative(n in 3usize..20, seed in 0u64..50) {
        let init: ParticleSet = spiral_galaxy(n, &GalaxyParams::default(), Seed(seed)).unwrap();
        let trace = simulate(&init, &PhysicsParams { steps: 3, ..Default::default() }).unwrap();
        let graphs = record_simulation(&trace, 1).unwrap().graphs(&GraphConfig::default()).unwrap();
        let p = init_params(&ModelConfig { d_in: 7, d: 8, seed, ..Default::default() }).unwrap();
        prop_assert!(graphs.iter().all(|g| model_forward(g, &p).unwrap().is_finite()));
        let loss = evaluate_loss(&p, &[graphs]).unwrap();
        prop_assert!(loss[0] >= 0.0 && loss[0].is_finite());
        prop_assert!(p.all_finite());
    }
}
