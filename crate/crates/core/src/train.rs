//! Mini-batch Adam training of the surrogate on per-frame graphs.

use std::time::Instant;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::graph::FrameGraph;
use crate::model::{init_params, model_backward, model_forward, ModelConfig, ModelParams};
use crate::nn::{mse_loss, AdamConfig, AdamState, ParamBlocks};
use crate::scenarios::Seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Graphs per optimizer step.
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub shuffle_seed: u64,
    /// Share of scenes used for training when a dataset is split by scene.
    pub train_fraction: f64,
    /// Compute the graphs of a batch on the rayon pool.
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 8,
            adam: AdamConfig::default(),
            shuffle_seed: 0,
            train_fraction: 0.9,
            parallel: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::arg(format!(
                "epochs and batch size must be at least 1 (got {}, {})",
                self.epochs, self.batch_size
            )));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::arg(format!(
                "train fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        self.adam.validate()
    }
}

/// One finished epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-graph MSE over the epoch, measured before each step.
    pub mean_loss: f64,
    pub seconds: f64,
}

impl EpochRecord {
    pub fn csv_line(&self) -> String {
        format!("{},{:e},{:.6}", self.epoch, self.mean_loss, self.seconds)
    }
}

pub const EPOCH_CSV_HEADER: &str = "epoch,mean_loss,seconds";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub epoch_losses: Vec<f64>,
    pub epoch_seconds: Vec<f64>,
    /// Mean MSE per held-out scene after the last epoch.
    pub test_losses: Vec<f64>,
    pub optimizer_steps: usize,
}

fn check_graphs(graphs: &[FrameGraph], model: &ModelConfig) -> Result<()> {
    if graphs.is_empty() {
        return Err(Error::arg("no training graphs"));
    }
    if let Some((i, g)) = graphs
        .iter()
        .enumerate()
        .find(|(_, g)| g.node_features.cols() != model.d_in)
    {
        return Err(Error::arg(format!(
            "graph {i} has {} features per node, model expects {}",
            g.node_features.cols(),
            model.d_in
        )));
    }
    Ok(())
}

fn batch_gradients(
    batch: &[&FrameGraph],
    params: &ModelParams,
    parallel: bool,
) -> Result<Vec<(f64, ModelParams)>> {
    let one = |g: &&FrameGraph| model_backward(g, params, &g.labels);
    #[cfg(feature = "parallel")]
    if parallel {
        use rayon::prelude::*;
        return batch.par_iter().map(one).collect();
    }
    let _ = parallel;
    batch.iter().map(one).collect()
}

/// Trains a freshly initialised model; see [`train_with`].
pub fn train(
    graphs: &[FrameGraph],
    config: &TrainConfig,
    model_config: &ModelConfig,
) -> Result<(ModelParams, TrainHistory)> {
    train_with(graphs, &[], config, model_config, |_| {})
}

/// Shuffled mini-batch training.
///
/// Every epoch visits each graph once. A batch's loss is the mean of its per-graph
/// MSEs and the step uses the matching mean gradient, summed in batch order so the
/// result does not depend on the thread count. `test_scenes` are only evaluated,
/// after the final epoch.
pub fn train_with(
    graphs: &[FrameGraph],
    test_scenes: &[Vec<FrameGraph>],
    config: &TrainConfig,
    model_config: &ModelConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(ModelParams, TrainHistory)> {
    config.validate()?;
    check_graphs(graphs, model_config)?;
    let mut params = init_params(model_config)?;
    let mut adam = AdamState::new(&params, config.adam);
    let mut rng = Seed(config.shuffle_seed).rng();
    let mut order: Vec<usize> = (0..graphs.len()).collect();
    let mut history = TrainHistory::default();

    for epoch in 1..=config.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&FrameGraph> = chunk.iter().map(|&i| &graphs[i]).collect();
            let results = batch_gradients(&batch, &params, config.parallel)?;
            let mut grad = params.zeros_like();
            for (loss, g) in &results {
                loss_sum += loss;
                grad.accumulate(g);
            }
            grad.scale(1.0 / batch.len() as f64);
            if !grad.all_finite() {
                return Err(Error::NumericalDomain(format!(
                    "non-finite gradient in epoch {epoch}"
                )));
            }
            adam.step(&mut params, &grad)?;
            history.optimizer_steps += 1;
        }
        let record = EpochRecord {
            epoch,
            mean_loss: loss_sum / graphs.len() as f64,
            seconds: start.elapsed().as_secs_f64(),
        };
        history.epoch_losses.push(record.mean_loss);
        history.epoch_seconds.push(record.seconds);
        on_epoch(&record);
    }
    if !test_scenes.is_empty() {
        history.test_losses = evaluate_loss(&params, test_scenes)?;
    }
    Ok((params, history))
}

/// Mean per-graph MSE of each scene. Never touches the parameters.
pub fn evaluate_loss(model: &ModelParams, scenes: &[Vec<FrameGraph>]) -> Result<Vec<f64>> {
    scenes
        .iter()
        .enumerate()
        .map(|(s, graphs)| {
            if graphs.is_empty() {
                return Err(Error::arg(format!("scene {s} has no graphs")));
            }
            let mut total = 0.0;
            for g in graphs {
                total += mse_loss(&model_forward(g, model)?, &g.labels)?;
            }
            Ok(total / graphs.len() as f64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::record_simulation;
    use crate::graph::GraphConfig;
    use crate::physics::{simulate, PhysicsParams};
    use crate::scenarios::{spiral_galaxy, GalaxyParams};

    fn scene_graphs(n: usize, steps: usize, seed: u64) -> Vec<FrameGraph> {
        let init = spiral_galaxy(n, &GalaxyParams::default(), Seed(seed)).unwrap();
        let trace = simulate(&init, &PhysicsParams { steps, ..Default::default() }).unwrap();
        record_simulation(&trace, 0)
            .unwrap()
            .graphs(&GraphConfig { k: 4, with_edge_attrs: false })
            .unwrap()
    }

    fn small_model() -> ModelConfig {
        ModelConfig { d: 8, ..Default::default() }
    }

    #[test]
    fn identical_seeds_give_identical_params() {
        let graphs = scene_graphs(10, 12, 1);
        let cfg = TrainConfig { epochs: 3, batch_size: 4, ..Default::default() };
        let (a, ha) = train(&graphs, &cfg, &small_model()).unwrap();
        let (b, hb) = train(&graphs, &cfg, &small_model()).unwrap();
        assert_eq!(a, b);
        assert_eq!(ha.epoch_losses, hb.epoch_losses);
        let (c, _) = train(&graphs, &TrainConfig { shuffle_seed: 9, ..cfg }, &small_model()).unwrap();
        assert_ne!(a, c);
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn parallel_batches_match_serial() {
        let graphs = scene_graphs(10, 12, 1);
        let cfg = TrainConfig { epochs: 2, batch_size: 5, ..Default::default() };
        let (a, _) = train(&graphs, &cfg, &small_model()).unwrap();
        let (b, _) = train(&graphs, &TrainConfig { parallel: true, ..cfg }, &small_model()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn full_batch_means_one_step_per_epoch() {
        let graphs = scene_graphs(6, 5, 2);
        let cfg = TrainConfig { epochs: 4, batch_size: 50, ..Default::default() };
        let (_, h) = train(&graphs, &cfg, &small_model()).unwrap();
        assert_eq!(h.optimizer_steps, 4);
        assert_eq!(h.epoch_losses.len(), 4);
        assert_eq!(h.epoch_seconds.len(), 4);
        let cfg = TrainConfig { epochs: 2, batch_size: 2, ..cfg };
        assert_eq!(train(&graphs, &cfg, &small_model()).unwrap().1.optimizer_steps, 6);
    }

    #[test]
    fn full_batch_step_ignores_shuffle() {
        let graphs = scene_graphs(6, 7, 3);
        let cfg = TrainConfig { epochs: 1, batch_size: 7, ..Default::default() };
        let (a, _) = train(&graphs, &cfg, &small_model()).unwrap();
        let (b, _) = train(&graphs, &TrainConfig { shuffle_seed: 77, ..cfg }, &small_model()).unwrap();
        for (x, y) in a.flatten().iter().zip(b.flatten()) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let graphs = scene_graphs(5, 3, 4);
        let cfg = TrainConfig::default();
        assert!(matches!(train(&[], &cfg, &small_model()), Err(Error::Argument(_))));
        let wrong = ModelConfig { d_in: 7, ..small_model() };
        assert!(matches!(train(&graphs, &cfg, &wrong), Err(Error::Argument(_))));
        let zero = TrainConfig { epochs: 0, ..cfg };
        assert!(train(&graphs, &zero, &small_model()).is_err());
    }

    #[test]
    fn zero_head_loss_is_mean_square_label() {
        let graphs = scene_graphs(7, 4, 5);
        let mut p = init_params(&small_model()).unwrap();
        p.output.fill(0.0);
        let losses = evaluate_loss(&p, &[graphs.clone(), graphs[..1].to_vec()]).unwrap();
        let ms = |g: &FrameGraph| g.labels.data().iter().map(|a| a * a).sum::<f64>() / g.labels.data().len() as f64;
        let expect0 = graphs.iter().map(ms).sum::<f64>() / graphs.len() as f64;
        assert!((losses[0] - expect0).abs() <= 1e-12 * expect0);
        assert!((losses[1] - ms(&graphs[0])).abs() <= 1e-12 * expect0);
        assert_eq!(losses, evaluate_loss(&p, &[graphs.clone(), graphs[..1].to_vec()]).unwrap());
        assert!(matches!(evaluate_loss(&p, &[vec![]]), Err(Error::Argument(_))));
    }

    #[test]
    fn test_scenes_do_not_touch_training() {
        let graphs = scene_graphs(6, 6, 6);
        let other = scene_graphs(9, 3, 7);
        let cfg = TrainConfig { epochs: 2, batch_size: 3, ..Default::default() };
        let (a, ha) = train(&graphs, &cfg, &small_model()).unwrap();
        let (b, hb) = train_with(&graphs, &[other.clone()], &cfg, &small_model(), |_| {}).unwrap();
        assert_eq!(a, b);
        assert_eq!(ha.epoch_losses, hb.epoch_losses);
        assert_eq!(hb.test_losses, evaluate_loss(&b, &[other]).unwrap());
    }

    #[test]
    fn loss_drops_and_log_lines_are_csv() {
        let graphs = scene_graphs(12, 20, 8);
        let cfg = TrainConfig { epochs: 15, batch_size: 4, ..Default::default() };
        let mut lines = Vec::new();
        let (_, h) = train_with(&graphs, &[], &cfg, &small_model(), |r| lines.push(r.csv_line())).unwrap();
        assert!(h.epoch_losses.last().unwrap() < &h.epoch_losses[0]);
        assert_eq!(lines.len(), 15);
        let fields: Vec<&str> = lines[0].split(',').collect();
        assert_eq!(fields[0], "1");
        assert!(fields[1].parse::<f64>().unwrap() > 0.0);
        assert!(fields[2].parse::<f64>().unwrap() >= 0.0);
    }
}
