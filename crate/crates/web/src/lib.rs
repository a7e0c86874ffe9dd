//! Browser bindings for the gravnet simulator: step a galaxy, show its KNN graph,
//! and score an uploaded checkpoint against exact gravity.

use gravnet::graph::knn_neighbors;
use gravnet::model::decode_checkpoint;
use gravnet::physics::{leapfrog_step, pairwise_accelerations, simulate, total_energy};
use gravnet::rollout::{rollout, rollout_errors, StepErrors};
use gravnet::scenarios::{disc_3d, multi_disc, random_cloud, spiral_galaxy, GalaxyParams, Seed};
use gravnet::{ParticleSet, PhysicsParams, Vec3};
use wasm_bindgen::prelude::*;

fn js(e: gravnet::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn initial(scenario: &str, n: usize, seed: u64, galaxy: &GalaxyParams) -> gravnet::Result<ParticleSet> {
    let seed = Seed(seed);
    match scenario {
        "spiral" => spiral_galaxy(n, galaxy, seed),
        "disc" => disc_3d(n, galaxy, seed),
        "cloud" => random_cloud(n, 5.0, galaxy.total_mass, seed),
        "multi-disc" => multi_disc(2, n, galaxy, 30.0, seed),
        other => Err(gravnet::Error::Argument(format!("unknown scenario {other:?}"))),
    }
}

fn flatten(v: &[Vec3]) -> Vec<f64> {
    v.iter().flat_map(|p| p.to_array()).collect()
}

/// A live exact-gravity simulation.
#[wasm_bindgen]
pub struct Simulation {
    state: ParticleSet,
    accel: Vec<Vec3>,
    params: PhysicsParams,
    steps: usize,
}

impl Simulation {
    pub fn create(scenario: &str, n: usize, seed: u64, g: f64, dt: f64) -> gravnet::Result<Self> {
        let params = PhysicsParams { g, dt, parallel: false, ..Default::default() };
        params.validate()?;
        let galaxy = GalaxyParams { g, eps: params.eps, ..Default::default() };
        let state = initial(scenario, n, seed, &galaxy)?;
        let accel = pairwise_accelerations(&state.positions, &state.masses, g, params.eps)?;
        Ok(Self { state, accel, params, steps: 0 })
    }

    pub fn advance(&mut self, steps: usize) -> gravnet::Result<()> {
        for _ in 0..steps {
            let (next, accel) = leapfrog_step(self.state.clone(), &self.accel, &self.params)?;
            self.state = next;
            self.accel = accel;
        }
        self.steps += steps;
        Ok(())
    }

    pub fn total_energy(&self) -> gravnet::Result<f64> {
        total_energy(&self.state, self.params.g, self.params.eps)
    }

    /// Directed `(src, dst)` pairs of the current KNN graph, flattened.
    pub fn edges(&self, k: usize) -> gravnet::Result<Vec<u32>> {
        let lists = knn_neighbors(&self.state.positions, k)?;
        Ok(lists
            .iter()
            .enumerate()
            .flat_map(|(dst, srcs)| srcs.iter().flat_map(move |&src| [src as u32, dst as u32]))
            .collect())
    }
}

#[wasm_bindgen]
impl Simulation {
    /// `scenario` is one of `spiral`, `disc`, `cloud`, `multi-disc`.
    #[wasm_bindgen(constructor)]
    pub fn new(scenario: &str, n: usize, seed: u32, g: f64, dt: f64) -> Result<Simulation, JsError> {
        Self::create(scenario, n, seed.into(), g, dt).map_err(js)
    }

    pub fn step(&mut self, steps: usize) -> Result<(), JsError> {
        self.advance(steps).map_err(js)
    }

    /// `x, y, z` per particle.
    pub fn positions(&self) -> Vec<f64> {
        flatten(&self.state.positions)
    }

    pub fn masses(&self) -> Vec<f64> {
        self.state.masses.clone()
    }

    pub fn energy(&self) -> Result<f64, JsError> {
        self.total_energy().map_err(js)
    }

    #[wasm_bindgen(js_name = stepCount)]
    pub fn step_count(&self) -> usize {
        self.steps
    }

    #[wasm_bindgen(js_name = knnEdges)]
    pub fn knn_edges(&self, k: usize) -> Result<Vec<u32>, JsError> {
        self.edges(k).map_err(js)
    }
}

/// Per-step errors of a surrogate rollout, index 0 being the initial condition.
#[wasm_bindgen]
pub struct ErrorCurve {
    errors: StepErrors,
}

/// Rolls a checkpoint out on a fresh spiral galaxy and compares with exact gravity.
pub fn error_curve(checkpoint: &[u8], n: usize, steps: usize, seed: u64) -> gravnet::Result<StepErrors> {
    let ckpt = decode_checkpoint(checkpoint)?;
    let params = PhysicsParams {
        dt: ckpt.physics.dt,
        g: ckpt.physics.g,
        eps: ckpt.physics.eps,
        steps,
        parallel: false,
    };
    let galaxy = GalaxyParams { g: params.g, eps: params.eps, ..Default::default() };
    let init = spiral_galaxy(n, &galaxy, Seed(seed))?;
    let truth = simulate(&init, &params)?;
    let pred = rollout(&ckpt, &init, &params, &ckpt.graph_config())?;
    rollout_errors(&pred, &truth)
}

#[wasm_bindgen]
impl ErrorCurve {
    #[wasm_bindgen(constructor)]
    pub fn new(checkpoint: &[u8], n: usize, steps: usize, seed: u32) -> Result<ErrorCurve, JsError> {
        error_curve(checkpoint, n, steps, seed.into()).map(|errors| ErrorCurve { errors }).map_err(js)
    }

    pub fn pos(&self) -> Vec<f64> {
        self.errors.pos.clone()
    }

    pub fn vel(&self) -> Vec<f64> {
        self.errors.vel.clone()
    }

    pub fn acc(&self) -> Vec<f64> {
        self.errors.acc.clone()
    }
}
