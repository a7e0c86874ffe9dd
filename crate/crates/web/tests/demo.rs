use gravnet::dataset::DatasetHeader;
use gravnet::graph::knn_neighbors;
use gravnet::model::{encode_checkpoint, init_params, Checkpoint, ModelConfig};
use gravnet::physics::simulate;
use gravnet::scenarios::{spiral_galaxy, GalaxyParams, Seed};
use gravnet::PhysicsParams;
use gravnet_web::{error_curve, Simulation};

#[test]
fn stepping_matches_the_batch_integrator() {
    let mut sim = Simulation::create("spiral", 40, 3, 1.0, 0.005).unwrap();
    sim.advance(7).unwrap();
    sim.advance(13).unwrap();
    assert_eq!(sim.step_count(), 20);

    let galaxy = GalaxyParams { g: 1.0, ..Default::default() };
    let init = spiral_galaxy(40, &galaxy, Seed(3)).unwrap();
    let params = PhysicsParams { g: 1.0, dt: 0.005, steps: 20, ..Default::default() };
    let trace = simulate(&init, &params).unwrap();
    let expect: Vec<f64> = trace.frames[19].positions.iter().flat_map(|p| p.to_array()).collect();
    assert_eq!(sim.positions(), expect);
    assert_eq!(sim.masses(), init.masses);
}

#[test]
fn energy_stays_close() {
    let mut sim = Simulation::create("cloud", 30, 1, 1.0, 1e-3).unwrap();
    let e0 = sim.total_energy().unwrap();
    sim.advance(500).unwrap();
    let drift = ((sim.total_energy().unwrap() - e0) / e0).abs();
    assert!(drift < 1e-3, "drift {drift}");
}

#[test]
fn edges_are_the_knn_lists() {
    let sim = Simulation::create("disc", 25, 2, 1.0, 0.01).unwrap();
    let edges = sim.edges(4).unwrap();
    assert_eq!(edges.len(), 2 * 25 * 4);
    let pos: Vec<_> = sim
        .positions()
        .chunks(3)
        .map(|c| gravnet::Vec3::from_array([c[0], c[1], c[2]]))
        .collect();
    let lists = knn_neighbors(&pos, 4).unwrap();
    for (e, pair) in edges.chunks(2).enumerate() {
        let (dst, slot) = (e / 4, e % 4);
        assert_eq!(pair, [lists[dst][slot] as u32, dst as u32]);
    }
    assert!(sim.edges(0).is_err());
}

#[test]
fn bad_inputs_are_rejected() {
    assert!(Simulation::create("torus", 10, 0, 1.0, 0.01).is_err());
    assert!(Simulation::create("spiral", 0, 0, 1.0, 0.01).is_err());
    assert!(Simulation::create("spiral", 10, 0, 1.0, -1.0).is_err());
    assert!(error_curve(b"garbage", 10, 5, 0).is_err());
}

#[test]
fn error_curve_from_checkpoint_bytes() {
    let params = init_params(&ModelConfig { d: 8, layers: 1, ..Default::default() }).unwrap();
    let ckpt = Checkpoint {
        params,
        history_depth: 0,
        k: 4,
        physics: DatasetHeader::from(&PhysicsParams::default()),
    };
    let bytes = encode_checkpoint(&ckpt).unwrap();
    let curve = error_curve(&bytes, 12, 30, 5).unwrap();
    assert_eq!(curve.len(), 31);
    assert_eq!((curve.pos[0], curve.vel[0]), (0.0, 0.0));
    assert!(curve.acc[0] > 0.0);
    assert!(curve.pos.iter().chain(&curve.vel).all(|v| v.is_finite() && *v >= 0.0));
    assert!(curve.pos[30] > 0.0);
}
