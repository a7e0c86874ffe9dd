//! Closed-loop rollouts driven by a learned acceleration model, plus error and
//! timing reports against the exact integrator.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::time::Instant;

use crate::dataset::{assemble_features, feature_dim};
use crate::error::{Error, Result};
use crate::graph::{build_graph, FrameGraph, GraphConfig};
use crate::model::{model_forward, Checkpoint};
use crate::nn::Matrix;
use crate::physics::{simulate_with, AccelerationField, Frame, Newtonian, ParticleSet, PhysicsParams, Trace, Vec3};

/// Something that turns a frame graph into per-node accelerations.
pub trait AccelerationModel {
    /// Number of past position frames in the node features.
    fn history_depth(&self) -> usize;

    fn predict(&mut self, graph: &FrameGraph, positions: &[Vec3], masses: &[f64]) -> Result<Vec<Vec3>>;
}

impl AccelerationModel for &Checkpoint {
    fn history_depth(&self) -> usize {
        self.history_depth
    }

    fn predict(&mut self, graph: &FrameGraph, _: &[Vec3], _: &[f64]) -> Result<Vec<Vec3>> {
        let out = model_forward(graph, &self.params)?;
        Ok((0..out.rows())
            .map(|i| Vec3::from_array([out[(i, 0)], out[(i, 1)], out[(i, 2)]]))
            .collect())
    }
}

/// Acceleration field that rebuilds the KNN graph at every call and asks a model.
///
/// History features come from the positions of earlier calls; before enough
/// calls have happened the oldest available frame is repeated.
pub struct Surrogate<M> {
    model: M,
    graph: GraphConfig,
    past: VecDeque<Vec<Vec3>>,
}

impl<M: AccelerationModel> Surrogate<M> {
    pub fn new(model: M, graph: GraphConfig) -> Self {
        Self {
            model,
            graph,
            past: VecDeque::new(),
        }
    }

    /// Graph the model sees for `positions`, given the current history.
    pub fn graph_for(&self, positions: &[Vec3], masses: &[f64]) -> Result<FrameGraph> {
        let h = self.model.history_depth();
        let history: Vec<&[Vec3]> = (1..=h)
            .map(|lag| {
                if self.past.is_empty() {
                    positions
                } else {
                    let at = self.past.len().saturating_sub(lag);
                    self.past[at].as_slice()
                }
            })
            .collect();
        let features = assemble_features(positions, masses, &history);
        build_graph(positions, features, Matrix::zeros(positions.len(), 3), &self.graph)
    }
}

impl<M: AccelerationModel> AccelerationField for Surrogate<M> {
    fn accelerations(&mut self, positions: &[Vec3], masses: &[f64]) -> Result<Vec<Vec3>> {
        let graph = self.graph_for(positions, masses)?;
        let a = self.model.predict(&graph, positions, masses)?;
        let h = self.model.history_depth();
        if h > 0 {
            if self.past.len() == h {
                self.past.pop_front();
            }
            self.past.push_back(positions.to_vec());
        }
        Ok(a)
    }
}

fn check_rollout(ckpt: &Checkpoint, graph: &GraphConfig) -> Result<()> {
    ckpt.validate().map_err(|e| Error::arg(e.to_string()))?;
    if ckpt.params.config.d_in != feature_dim(ckpt.history_depth) {
        return Err(Error::arg("model input width does not match its history depth"));
    }
    if graph.with_edge_attrs != ckpt.params.config.use_edge_encoder {
        return Err(Error::arg(format!(
            "graph edge attributes ({}) do not match the model's edge encoder ({})",
            graph.with_edge_attrs, ckpt.params.config.use_edge_encoder
        )));
    }
    if graph.k == 0 {
        return Err(Error::arg("k must be at least 1"));
    }
    Ok(())
}

/// Leapfrog integration with model-predicted accelerations, one prediction per step.
pub fn rollout(
    ckpt: &Checkpoint,
    initial: &ParticleSet,
    params: &PhysicsParams,
    graph: &GraphConfig,
) -> Result<Trace> {
    check_rollout(ckpt, graph)?;
    rollout_model(ckpt, initial, params, graph)
}

/// [`rollout`] for any [`AccelerationModel`].
pub fn rollout_model<M: AccelerationModel>(
    model: M,
    initial: &ParticleSet,
    params: &PhysicsParams,
    graph: &GraphConfig,
) -> Result<Trace> {
    params.validate()?;
    simulate_with(initial, params.dt, params.steps, &mut Surrogate::new(model, *graph))
}

/// Per-step mean squared errors; index 0 is the initial condition.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepErrors {
    pub pos: Vec<f64>,
    pub vel: Vec<f64>,
    pub acc: Vec<f64>,
}

impl StepErrors {
    pub fn len(&self) -> usize {
        self.pos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pos.is_empty()
    }
}

fn mse_vectors(a: &[Vec3], b: &[Vec3]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = *x - *y;
        s += d.dot(d);
    }
    s / (3 * a.len()) as f64
}

/// MSE over all particles and components of each quantity, per step.
pub fn rollout_errors(pred: &Trace, truth: &Trace) -> Result<StepErrors> {
    if pred.particle_count() != truth.particle_count() || pred.frame_count() != truth.frame_count() {
        return Err(Error::arg(format!(
            "trace shapes differ: {} x {} vs {} x {}",
            pred.frame_count(),
            pred.particle_count(),
            truth.frame_count(),
            truth.particle_count()
        )));
    }
    let mut out = StepErrors::default();
    let check = |f: &Frame| {
        f.positions.len() == pred.particle_count()
            && f.velocities.len() == pred.particle_count()
            && f.accelerations.len() == pred.particle_count()
    };
    for (p, t) in pred.frames_with_initial().zip(truth.frames_with_initial()) {
        if !check(p) || !check(t) {
            return Err(Error::arg("frame length does not match the particle count"));
        }
        out.pos.push(mse_vectors(&p.positions, &t.positions));
        out.vel.push(mse_vectors(&p.velocities, &t.velocities));
        out.acc.push(mse_vectors(&p.accelerations, &t.accelerations));
    }
    Ok(out)
}

pub fn prefix_sums(series: &[f64]) -> Vec<f64> {
    series
        .iter()
        .scan(0.0, |acc, x| {
            *acc += x;
            Some(*acc)
        })
        .collect()
}

/// Running sums of each error series.
pub fn cumulative_errors(errors: &StepErrors) -> StepErrors {
    StepErrors {
        pos: prefix_sums(&errors.pos),
        vel: prefix_sums(&errors.vel),
        acc: prefix_sums(&errors.acc),
    }
}

/// Step-wise mean of several equally long series.
pub fn mean_errors(series: &[StepErrors]) -> Result<StepErrors> {
    let first = series.first().ok_or_else(|| Error::arg("no error series"))?;
    if series.iter().any(|s| s.len() != first.len()) {
        return Err(Error::arg("error series have different lengths"));
    }
    let n = series.len() as f64;
    let avg = |pick: fn(&StepErrors) -> &Vec<f64>| -> Vec<f64> {
        (0..first.len())
            .map(|t| series.iter().map(|s| pick(s)[t]).sum::<f64>() / n)
            .collect()
    };
    Ok(StepErrors {
        pos: avg(|s| &s.pos),
        vel: avg(|s| &s.vel),
        acc: avg(|s| &s.acc),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutReport {
    pub errors: StepErrors,
    pub cumulative: StepErrors,
    pub surrogate_seconds: f64,
    pub reference_seconds: f64,
}

fn serial(params: &PhysicsParams) -> Newtonian {
    Newtonian {
        parallel: false,
        ..Newtonian::from_params(params)
    }
}

/// Rolls the model out next to the exact integrator and compares the two.
pub fn evaluate_rollout(
    ckpt: &Checkpoint,
    initial: &ParticleSet,
    params: &PhysicsParams,
) -> Result<(RolloutReport, Trace, Trace)> {
    let graph = ckpt.graph_config();
    check_rollout(ckpt, &graph)?;
    params.validate()?;
    let start = Instant::now();
    let truth = simulate_with(initial, params.dt, params.steps, &mut Newtonian::from_params(params))?;
    let reference_seconds = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let pred = rollout_model(ckpt, initial, params, &graph)?;
    let surrogate_seconds = start.elapsed().as_secs_f64();
    let errors = rollout_errors(&pred, &truth)?;
    let report = RolloutReport {
        cumulative: cumulative_errors(&errors),
        errors,
        surrogate_seconds,
        reference_seconds,
    };
    Ok((report, pred, truth))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedupRow {
    pub scene: usize,
    pub n: usize,
    pub t_classical: f64,
    pub t_surrogate: f64,
    pub speedup: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

/// Median wall-clock of `params.steps` full steps, exact versus surrogate.
///
/// Both paths run single-threaded; the surrogate time includes graph
/// construction and feature assembly.
pub fn benchmark_speedup<M: AccelerationModel + Clone>(
    model: &M,
    graph: &GraphConfig,
    scenes: &[ParticleSet],
    params: &PhysicsParams,
    repetitions: usize,
) -> Result<Vec<SpeedupRow>> {
    if repetitions < 3 {
        return Err(Error::arg(format!("need at least 3 repetitions, got {repetitions}")));
    }
    params.validate()?;
    let mut rows = Vec::with_capacity(scenes.len());
    for (scene, initial) in scenes.iter().enumerate() {
        let mut classical = Vec::with_capacity(repetitions);
        let mut surrogate = Vec::with_capacity(repetitions);
        for _ in 0..repetitions {
            let start = Instant::now();
            let a = simulate_with(initial, params.dt, params.steps, &mut serial(params))?;
            classical.push(start.elapsed().as_secs_f64());
            let start = Instant::now();
            let field = &mut Surrogate::new(model.clone(), *graph);
            let b = simulate_with(initial, params.dt, params.steps, field)?;
            surrogate.push(start.elapsed().as_secs_f64());
            if a.frame_count() != b.frame_count() {
                return Err(Error::config("timed traces differ in length"));
            }
        }
        let (t_classical, t_surrogate) = (median(classical), median(surrogate));
        rows.push(SpeedupRow {
            scene,
            n: initial.len(),
            t_classical,
            t_surrogate,
            speedup: t_classical / t_surrogate,
        });
    }
    Ok(rows)
}

/// Least-squares slope of `ln t` against `ln n`.
pub fn loglog_slope(ns: &[usize], times: &[f64]) -> Result<f64> {
    if ns.len() != times.len() || ns.len() < 2 {
        return Err(Error::arg("need at least two matching (n, t) points"));
    }
    if ns.iter().any(|&n| n == 0) || times.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::arg("sizes and times must be positive"));
    }
    let xs: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = times.iter().map(|t| t.ln()).collect();
    let k = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / k, ys.iter().sum::<f64>() / k);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::arg("all sizes are equal"));
    }
    Ok(sxy / sxx)
}

pub const STEP_CSV_HEADER: &str = "step,mse_pos,mse_vel,mse_acc";
pub const SPEEDUP_CSV_HEADER: &str = "scene,n,t_classical_s,t_surrogate_s,speedup";

/// One row per step; a `scene` column is added when more than one series is given.
pub fn step_errors_csv(series: &[StepErrors]) -> String {
    let tagged = series.len() > 1;
    let mut out = String::from(STEP_CSV_HEADER);
    if tagged {
        out.push_str(",scene");
    }
    out.push('\n');
    for (scene, s) in series.iter().enumerate() {
        for t in 0..s.len() {
            let _ = write!(out, "{t},{:e},{:e},{:e}", s.pos[t], s.vel[t], s.acc[t]);
            if tagged {
                let _ = write!(out, ",{scene}");
            }
            out.push('\n');
        }
    }
    out
}

pub fn speedup_csv(rows: &[SpeedupRow]) -> String {
    let mut out = format!("{SPEEDUP_CSV_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{:e},{:e},{:.6}",
            r.scene, r.n, r.t_classical, r.t_surrogate, r.speedup
        );
    }
    out
}
