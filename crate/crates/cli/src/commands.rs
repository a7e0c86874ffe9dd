use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use gravnet::dataset::{load_dataset, record_simulation, save_dataset, split_indices, Dataset, DatasetHeader, SceneDataset};
use gravnet::graph::FrameGraph;
use gravnet::model::{load_checkpoint, save_checkpoint, Checkpoint};
use gravnet::physics::{simulate as run_simulation, total_energy, ParticleSet, PhysicsParams, Trace};
use gravnet::rollout::{benchmark_speedup, evaluate_rollout, loglog_slope, speedup_csv, step_errors_csv};
use gravnet::scenarios::{disc_3d, multi_disc, random_cloud, spiral_galaxy, GalaxyParams, Seed};
use gravnet::train::{evaluate_loss, train_with, EPOCH_CSV_HEADER};

use crate::config::{RunConfig, Scenario};
use crate::CliError;

type Result<T = ()> = std::result::Result<T, CliError>;

fn write_file(path: &Path, text: &str) -> Result {
    fs::write(path, text).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn initial_state(cfg: &RunConfig, galaxy: &GalaxyParams, n: usize, seed: Seed) -> gravnet::Result<ParticleSet> {
    match cfg.scenario {
        Scenario::Spiral => spiral_galaxy(n, galaxy, seed),
        Scenario::Disc => disc_3d(n, galaxy, seed),
        Scenario::Cloud => random_cloud(n, cfg.half_width, cfg.total_mass, seed),
        Scenario::MultiDisc => multi_disc(cfg.disc_count, n, galaxy, cfg.separation, seed),
    }
}

fn trajectory_csv(masses: &[f64], frames: &[gravnet::Frame]) -> String {
    let mut out = String::from("frame,particle,mass,x,y,z,vx,vy,vz,ax,ay,az\n");
    for (t, f) in frames.iter().enumerate() {
        for i in 0..masses.len() {
            let (r, v, a) = (f.positions[i], f.velocities[i], f.accelerations[i]);
            let _ = writeln!(
                out,
                "{t},{i},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
                masses[i], r.x, r.y, r.z, v.x, v.y, v.z, a.x, a.y, a.z
            );
        }
    }
    out
}

fn energy_drift(trace: &Trace, params: &PhysicsParams) -> Result<f64> {
    let first = ParticleSet {
        positions: trace.initial.positions.clone(),
        velocities: trace.initial.velocities.clone(),
        masses: trace.masses.clone(),
    };
    let e0 = total_energy(&first, params.g, params.eps)?;
    let e1 = total_energy(&trace.state(trace.frame_count() - 1), params.g, params.eps)?;
    Ok(((e1 - e0) / e0).abs())
}

pub fn simulate(cfg: &RunConfig, out: &Path, csv: Option<&Path>) -> Result {
    let params = cfg.physics();
    let init = initial_state(cfg, &cfg.galaxy(), cfg.n, Seed(cfg.seed))?;
    let trace = run_simulation(&init, &params)?;
    let data = Dataset {
        header: DatasetHeader::from(&params),
        scenes: vec![record_simulation(&trace, 0)?],
    };
    save_dataset(&data, out)?;
    if let Some(path) = csv {
        write_file(path, &trajectory_csv(&trace.masses, &trace.frames))?;
    }
    println!(
        "simulated {} particles for {} steps; relative energy drift {:e}; wrote {}",
        init.len(),
        params.steps,
        energy_drift(&trace, &params)?,
        out.display()
    );
    Ok(())
}

pub fn gen_dataset(cfg: &RunConfig, out: &Path) -> Result {
    let params = cfg.physics();
    let galaxy = cfg.galaxy();
    let mut jobs = Vec::new();
    for (i, &n) in cfg.scene_sizes.iter().enumerate() {
        for j in 0..cfg.scenes_per_size {
            jobs.push((n, Seed(cfg.seed).derive((i * cfg.scenes_per_size + j) as u64)));
        }
    }
    if jobs.is_empty() {
        return Err(CliError::Usage("scene_sizes and scenes_per_size describe no scenes".into()));
    }
    let one = |&(n, seed): &(usize, Seed)| -> gravnet::Result<SceneDataset> {
        let init = initial_state(cfg, &galaxy, n, seed)?;
        record_simulation(&run_simulation(&init, &PhysicsParams { parallel: false, ..params })?, 0)
    };
    let scenes: gravnet::Result<Vec<SceneDataset>> = if cfg.parallel {
        use rayon::prelude::*;
        jobs.par_iter().map(one).collect()
    } else {
        jobs.iter().map(one).collect()
    };
    let data = Dataset {
        header: DatasetHeader::from(&params),
        scenes: scenes?,
    };
    save_dataset(&data, out)?;
    println!("wrote {} scenes ({} steps each) to {}", data.scene_count(), params.steps, out.display());
    Ok(())
}

fn scene_graphs(scenes: &[SceneDataset], ckpt_graph: &gravnet::graph::GraphConfig) -> Result<Vec<Vec<FrameGraph>>> {
    Ok(scenes
        .iter()
        .map(|s| s.graphs(ckpt_graph))
        .collect::<gravnet::Result<_>>()?)
}

fn with_history(data: Dataset, h: usize) -> Result<Vec<SceneDataset>> {
    Ok(data
        .scenes
        .into_iter()
        .map(|s| s.with_history_depth(h))
        .collect::<gravnet::Result<_>>()?)
}

pub fn train(cfg: &RunConfig, data_path: &Path, out: &Path, log: Option<&Path>) -> Result {
    let data = load_dataset(data_path)?;
    let header = data.header;
    let scenes = with_history(data, cfg.history_depth)?;
    let train_cfg = cfg.train();
    train_cfg.validate()?;
    let (train_idx, test_idx) = if scenes.len() >= 2 {
        split_indices(scenes.len(), train_cfg.train_fraction, Seed(cfg.seed))?
    } else {
        (vec![0], Vec::new())
    };
    let graph = cfg.graph();
    let pick = |idx: &[usize]| idx.iter().map(|&i| scenes[i].clone()).collect::<Vec<_>>();
    let train_graphs: Vec<FrameGraph> = scene_graphs(&pick(&train_idx), &graph)?.into_iter().flatten().collect();
    let test_graphs = scene_graphs(&pick(&test_idx), &graph)?;

    let mut log_text = format!("{EPOCH_CSV_HEADER}\n");
    if log.is_none() {
        println!("{EPOCH_CSV_HEADER}");
    }
    let (params, history) = train_with(&train_graphs, &test_graphs, &train_cfg, &cfg.model(), |r| {
        if log.is_some() {
            log_text.push_str(&r.csv_line());
            log_text.push('\n');
        } else {
            println!("{}", r.csv_line());
            let _ = std::io::stdout().flush();
        }
    })?;
    if let Some(path) = log {
        write_file(path, &log_text)?;
    }
    let ckpt = Checkpoint {
        params,
        history_depth: cfg.history_depth,
        k: cfg.k,
        physics: header,
    };
    save_checkpoint(&ckpt, out)?;
    eprintln!(
        "trained on {} graphs from {} scenes, {} optimizer steps; wrote {}",
        train_graphs.len(),
        train_idx.len(),
        history.optimizer_steps,
        out.display()
    );
    for (i, loss) in test_idx.iter().zip(&history.test_losses) {
        eprintln!("held-out scene {i}: mean MSE {loss:e}");
    }
    Ok(())
}

pub fn eval(model: &Path, data_path: &Path) -> Result {
    let ckpt = load_checkpoint(model)?;
    let scenes = with_history(load_dataset(data_path)?, ckpt.history_depth)?;
    let graphs = scene_graphs(&scenes, &ckpt.graph_config())?;
    let losses = evaluate_loss(&ckpt.params, &graphs)?;
    println!("scene,n,frames,mse");
    for (i, (s, l)) in scenes.iter().zip(&losses).enumerate() {
        println!("{i},{},{},{l:e}", s.particle_count(), s.frame_count());
    }
    Ok(())
}

/// Physics of a checkpoint with the step count of the run config.
fn checkpoint_physics(ckpt: &Checkpoint, cfg: &RunConfig) -> PhysicsParams {
    PhysicsParams {
        dt: ckpt.physics.dt,
        g: ckpt.physics.g,
        eps: ckpt.physics.eps,
        steps: cfg.steps,
        parallel: cfg.parallel,
    }
}

fn checkpoint_galaxy(ckpt: &Checkpoint, cfg: &RunConfig) -> GalaxyParams {
    GalaxyParams {
        g: ckpt.physics.g,
        eps: ckpt.physics.eps,
        ..cfg.galaxy()
    }
}

pub fn rollout(cfg: &RunConfig, model: &Path, scene_seed: u64, csv: Option<&Path>, cumulative: Option<&Path>) -> Result {
    let ckpt = load_checkpoint(model)?;
    let params = checkpoint_physics(&ckpt, cfg);
    let init = initial_state(cfg, &checkpoint_galaxy(&ckpt, cfg), cfg.n, Seed(scene_seed))?;
    let (report, _, _) = evaluate_rollout(&ckpt, &init, &params)?;
    if let Some(path) = csv {
        write_file(path, &step_errors_csv(std::slice::from_ref(&report.errors)))?;
    } else {
        print!("{}", step_errors_csv(std::slice::from_ref(&report.errors)));
    }
    if let Some(path) = cumulative {
        write_file(path, &step_errors_csv(std::slice::from_ref(&report.cumulative)))?;
    }
    let last = report.errors.len() - 1;
    eprintln!(
        "{} particles, {} steps: final MSE pos {:e} vel {:e} acc {:e}; cumulative pos {:e}; exact {:.4}s, surrogate {:.4}s",
        init.len(),
        params.steps,
        report.errors.pos[last],
        report.errors.vel[last],
        report.errors.acc[last],
        report.cumulative.pos[last],
        report.reference_seconds,
        report.surrogate_seconds
    );
    Ok(())
}

pub fn bench(cfg: &RunConfig, model: &Path, csv: Option<&Path>) -> Result {
    let ckpt = load_checkpoint(model)?;
    let params = PhysicsParams { parallel: false, ..checkpoint_physics(&ckpt, cfg) };
    let galaxy = checkpoint_galaxy(&ckpt, cfg);
    let scenes = cfg
        .scene_sizes
        .iter()
        .enumerate()
        .map(|(i, &n)| initial_state(cfg, &galaxy, n, Seed(cfg.seed).derive(i as u64)))
        .collect::<gravnet::Result<Vec<_>>>()?;
    let rows = benchmark_speedup(&&ckpt, &ckpt.graph_config(), &scenes, &params, cfg.repetitions)?;
    let table = speedup_csv(&rows);
    match csv {
        Some(path) => write_file(path, &table)?,
        None => print!("{table}"),
    }
    if rows.len() >= 2 {
        let ns: Vec<usize> = rows.iter().map(|r| r.n).collect();
        let tc: Vec<f64> = rows.iter().map(|r| r.t_classical).collect();
        let ts: Vec<f64> = rows.iter().map(|r| r.t_surrogate).collect();
        eprintln!(
            "log-log slope of step time versus N: exact {:.2}, surrogate {:.2}",
            loglog_slope(&ns, &tc)?,
            loglog_slope(&ns, &ts)?
        );
    }
    Ok(())
}

pub fn export_csv(data_path: &Path, scene: usize, out: &Path) -> Result {
    let data = load_dataset(data_path)?;
    let s = data.scenes.get(scene).ok_or_else(|| {
        CliError::Usage(format!("scene {scene} out of range for {} scenes", data.scene_count()))
    })?;
    write_file(out, &trajectory_csv(&s.masses, &s.frames))?;
    println!("wrote {} frames of {} particles to {}", s.frame_count(), s.particle_count(), out.display());
    Ok(())
}
