//! `key = value` run configuration shared by every subcommand.

use std::fmt::Write as _;
use std::path::Path;

use gravnet::graph::GraphConfig;
use gravnet::model::ModelConfig;
use gravnet::nn::AdamConfig;
use gravnet::physics::PhysicsParams;
use gravnet::scenarios::GalaxyParams;
use gravnet::train::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    Spiral,
    Disc,
    Cloud,
    MultiDisc,
}

impl Scenario {
    fn parse(s: &str) -> Result<Self, String> {
        match s {
            "spiral" => Ok(Self::Spiral),
            "disc" => Ok(Self::Disc),
            "cloud" => Ok(Self::Cloud),
            "multi-disc" => Ok(Self::MultiDisc),
            _ => Err(format!("unknown scenario {s:?} (spiral, disc, cloud, multi-disc)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dt: f64,
    pub g: f64,
    pub eps: f64,
    pub steps: usize,
    pub scenario: Scenario,
    pub n: usize,
    pub seed: u64,
    pub k: usize,
    pub history_depth: usize,
    pub d: usize,
    pub layers: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub train_fraction: f64,
    pub with_edge_attrs: bool,
    pub project_back: bool,
    pub total_mass: f64,
    pub radial_scale: f64,
    pub vertical_scale: f64,
    pub bh_fraction: f64,
    pub arms: u32,
    pub scene_sizes: Vec<usize>,
    pub scenes_per_size: usize,
    pub half_width: f64,
    pub separation: f64,
    pub disc_count: usize,
    pub repetitions: usize,
    pub parallel: bool,
}

/// Where a default value comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    /// The published simulation profile.
    Reference,
    /// Chosen by this project.
    Project,
}

pub struct KeyInfo {
    pub name: &'static str,
    pub default: &'static str,
    pub source: Source,
    pub help: &'static str,
}

use Source::{Project, Reference};

pub const KEYS: &[KeyInfo] = &[
    KeyInfo { name: "dt", default: "0.0001", source: Reference, help: "integration time step" },
    KeyInfo { name: "G", default: "4.5e-6", source: Reference, help: "gravitational constant" },
    KeyInfo { name: "eps", default: "0.05", source: Project, help: "force softening length" },
    KeyInfo { name: "steps", default: "1000", source: Reference, help: "leapfrog steps per simulation" },
    KeyInfo { name: "scenario", default: "spiral", source: Project, help: "spiral, disc, cloud or multi-disc" },
    KeyInfo { name: "n", default: "25", source: Project, help: "particles per scene" },
    KeyInfo { name: "seed", default: "0", source: Project, help: "master seed" },
    KeyInfo { name: "k", default: "8", source: Project, help: "neighbours per node in the KNN graph" },
    KeyInfo { name: "history_depth", default: "0", source: Project, help: "past position frames in node features" },
    KeyInfo { name: "d", default: "64", source: Project, help: "latent width of the node encoder" },
    KeyInfo { name: "L", default: "2", source: Project, help: "message-passing layers" },
    KeyInfo { name: "epochs", default: "100", source: Project, help: "training epochs" },
    KeyInfo { name: "batch_size", default: "8", source: Project, help: "graphs per optimizer step" },
    KeyInfo { name: "lr", default: "0.001", source: Project, help: "Adam learning rate" },
    KeyInfo { name: "train_fraction", default: "0.9", source: Reference, help: "share of scenes used for training" },
    KeyInfo { name: "with_edge_attrs", default: "false", source: Project, help: "encode neighbour distances on edges" },
    KeyInfo { name: "project_back", default: "false", source: Project, help: "project each layer back to width d" },
    KeyInfo { name: "total_mass", default: "1.0", source: Reference, help: "galaxy mass" },
    KeyInfo { name: "radial_scale", default: "3.0", source: Reference, help: "disc scale radius" },
    KeyInfo { name: "vertical_scale", default: "0.3", source: Reference, help: "disc scale height" },
    KeyInfo { name: "bh_fraction", default: "0.01", source: Reference, help: "central black hole share of the mass" },
    KeyInfo { name: "arms", default: "2", source: Reference, help: "spiral arms" },
    KeyInfo { name: "scene_sizes", default: "3,25,50,100,250,500", source: Reference, help: "particle counts for gen-dataset and bench" },
    KeyInfo { name: "scenes_per_size", default: "10", source: Reference, help: "scenes per particle count in gen-dataset" },
    KeyInfo { name: "half_width", default: "5.0", source: Project, help: "cube half width of the cloud scenario" },
    KeyInfo { name: "separation", default: "30.0", source: Project, help: "centre distance in the multi-disc scenario" },
    KeyInfo { name: "disc_count", default: "2", source: Project, help: "discs in the multi-disc scenario" },
    KeyInfo { name: "repetitions", default: "5", source: Project, help: "timing repetitions in bench (at least 3)" },
    KeyInfo { name: "parallel", default: "false", source: Project, help: "use the thread pool for forces and batches" },
];

/// The key table shown in `--help`.
pub fn key_table() -> String {
    let mut out = String::from("Configuration keys (config file `key = value`, or --set key=value):\n");
    for k in KEYS {
        let src = match k.source {
            Reference => "reference profile",
            Project => "project default",
        };
        let _ = writeln!(out, "  {:<16} {:<22} {:<18} {}", k.name, k.default, src, k.help);
    }
    out
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("invalid value {v:?} for {key}"))
}

fn boolean(key: &str, v: &str) -> Result<bool, String> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(format!("invalid boolean {v:?} for {key}")),
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut c = RunConfig {
            dt: 0.0,
            g: 0.0,
            eps: 0.0,
            steps: 0,
            scenario: Scenario::Spiral,
            n: 0,
            seed: 0,
            k: 0,
            history_depth: 0,
            d: 0,
            layers: 0,
            epochs: 0,
            batch_size: 0,
            lr: 0.0,
            train_fraction: 0.0,
            with_edge_attrs: false,
            project_back: false,
            total_mass: 0.0,
            radial_scale: 0.0,
            vertical_scale: 0.0,
            bh_fraction: 0.0,
            arms: 0,
            scene_sizes: Vec::new(),
            scenes_per_size: 0,
            half_width: 0.0,
            separation: 0.0,
            disc_count: 0,
            repetitions: 0,
            parallel: false,
        };
        for k in KEYS {
            c.set(k.name, k.default).expect("defaults parse");
        }
        c
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        let v = v.trim();
        match key {
            "dt" => self.dt = num(key, v)?,
            "G" => self.g = num(key, v)?,
            "eps" => self.eps = num(key, v)?,
            "steps" => self.steps = num(key, v)?,
            "scenario" => self.scenario = Scenario::parse(v)?,
            "n" => self.n = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "k" => self.k = num(key, v)?,
            "history_depth" => self.history_depth = num(key, v)?,
            "d" => self.d = num(key, v)?,
            "L" => self.layers = num(key, v)?,
            "epochs" => self.epochs = num(key, v)?,
            "batch_size" => self.batch_size = num(key, v)?,
            "lr" => self.lr = num(key, v)?,
            "train_fraction" => self.train_fraction = num(key, v)?,
            "with_edge_attrs" => self.with_edge_attrs = boolean(key, v)?,
            "project_back" => self.project_back = boolean(key, v)?,
            "total_mass" => self.total_mass = num(key, v)?,
            "radial_scale" => self.radial_scale = num(key, v)?,
            "vertical_scale" => self.vertical_scale = num(key, v)?,
            "bh_fraction" => self.bh_fraction = num(key, v)?,
            "arms" => self.arms = num(key, v)?,
            "scene_sizes" => {
                self.scene_sizes = v
                    .split(',')
                    .map(|s| num(key, s.trim()))
                    .collect::<Result<_, _>>()?
            }
            "scenes_per_size" => self.scenes_per_size = num(key, v)?,
            "half_width" => self.half_width = num(key, v)?,
            "separation" => self.separation = num(key, v)?,
            "disc_count" => self.disc_count = num(key, v)?,
            "repetitions" => self.repetitions = num(key, v)?,
            "parallel" => self.parallel = boolean(key, v)?,
            _ => return Err(format!("unknown configuration key {key:?}")),
        }
        Ok(())
    }

    /// Applies a config file: one `key = value` per line, `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), String> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("{origin}:{}: expected `key = value`", i + 1))?;
            self.set(key.trim(), value)
                .map_err(|e| format!("{origin}:{}: {e}", i + 1))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        self.apply_text(&text, &path.display().to_string())
    }

    pub fn physics(&self) -> PhysicsParams {
        PhysicsParams {
            dt: self.dt,
            g: self.g,
            eps: self.eps,
            steps: self.steps,
            parallel: self.parallel,
        }
    }

    pub fn galaxy(&self) -> GalaxyParams {
        GalaxyParams {
            total_mass: self.total_mass,
            radial_scale: self.radial_scale,
            vertical_scale: self.vertical_scale,
            bh_mass_fraction: self.bh_fraction,
            arms: self.arms,
            g: self.g,
            eps: self.eps,
        }
    }

    pub fn graph(&self) -> GraphConfig {
        GraphConfig {
            k: self.k,
            with_edge_attrs: self.with_edge_attrs,
        }
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            d_in: gravnet::dataset::feature_dim(self.history_depth),
            d: self.d,
            layers: self.layers,
            use_edge_encoder: self.with_edge_attrs,
            project_back: self.project_back,
            seed: self.seed,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            adam: AdamConfig {
                lr: self.lr,
                ..AdamConfig::default()
            },
            shuffle_seed: self.seed,
            train_fraction: self.train_fraction,
            parallel: self.parallel,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_key_table() {
        let c = RunConfig::default();
        assert_eq!(c.dt, 1e-4);
        assert_eq!(c.g, 4.5e-6);
        assert_eq!(c.total_mass, 1.0);
        assert_eq!(c.radial_scale, 3.0);
        assert_eq!(c.vertical_scale, 0.3);
        assert_eq!(c.bh_fraction, 0.01);
        assert_eq!(c.arms, 2);
        assert_eq!(c.scene_sizes, vec![3, 25, 50, 100, 250, 500]);
        assert_eq!((c.d, c.layers, c.k, c.epochs, c.batch_size), (64, 2, 8, 100, 8));
        assert_eq!(c.train().adam.lr, 1e-3);
    }

    #[test]
    fn file_values_and_comments() {
        let mut c = RunConfig::default();
        c.apply_text("# profile\nsteps = 20  # short\n\nscenario = cloud\nwith_edge_attrs = true\n", "t").unwrap();
        assert_eq!(c.steps, 20);
        assert_eq!(c.scenario, Scenario::Cloud);
        assert!(c.with_edge_attrs && c.model().use_edge_encoder);
    }

    #[test]
    fn unknown_and_malformed_lines_are_rejected() {
        let mut c = RunConfig::default();
        let e = c.apply_text("steps = 5\ncolour = red\n", "f.cfg").unwrap_err();
        assert!(e.contains("f.cfg:2") && e.contains("colour"));
        assert!(c.apply_text("steps 5", "f").is_err());
        assert!(c.apply_text("steps = five", "f").is_err());
        assert!(c.apply_text("parallel = maybe", "f").is_err());
    }

    #[test]
    fn help_table_lists_every_key() {
        let t = key_table();
        for k in KEYS {
            assert!(t.contains(k.name) && t.contains(k.default));
        }
        assert!(t.contains("reference profile") && t.contains("project default"));
    }
}
