//! Labelled learning data and the `NBDS` dataset file.
//!
//! A scene keeps the raw trajectory; node features are materialised on demand as
//! `[r(t), m, r(t-1), ..., r(t-h)]`, with frames before the first replaced by the
//! first frame. Labels are the stored accelerations of the same frame.
//!
//! File layout, all little-endian:
//!
//! ```text
//! "NBDS" | version u32 = 1 | G f64 | eps f64 | dt f64 | scene_count u32
//! per scene: N u32 | T u32 | masses N*f64
//!            | positions T*N*3 f64 | velocities T*N*3 f64 | accelerations T*N*3 f64
//! ```

use std::path::Path;

use rand::seq::SliceRandom;

use crate::codec::{write_atomic, Reader, Writer};
use crate::error::{Error, Result};
use crate::graph::{build_graph, FrameGraph, GraphConfig};
use crate::nn::Matrix;
use crate::physics::{Frame, PhysicsParams, Trace, Vec3};
use crate::scenarios::Seed;

pub const DATASET_MAGIC: &[u8; 4] = b"NBDS";
pub const DATASET_VERSION: u32 = 1;

/// Width of the node feature vector for a given history depth.
pub fn feature_dim(history_depth: usize) -> usize {
    3 + 1 + 3 * history_depth
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneDataset {
    pub masses: Vec<f64>,
    pub frames: Vec<Frame>,
    pub history_depth: usize,
}

impl SceneDataset {
    pub fn particle_count(&self) -> usize {
        self.masses.len()
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn feature_dim(&self) -> usize {
        feature_dim(self.history_depth)
    }

    /// The same trajectory with a different feature history.
    pub fn with_history_depth(mut self, history_depth: usize) -> Result<Self> {
        check_history(history_depth, self.frame_count())?;
        self.history_depth = history_depth;
        Ok(self)
    }

    /// `N x d_in` node features of frame `t`.
    pub fn features(&self, t: usize) -> Result<Matrix> {
        if t >= self.frame_count() {
            return Err(Error::arg(format!(
                "frame {t} out of range for {} frames",
                self.frame_count()
            )));
        }
        let history: Vec<&[Vec3]> = (1..=self.history_depth)
            .map(|lag| self.frames[t.saturating_sub(lag)].positions.as_slice())
            .collect();
        Ok(assemble_features(
            &self.frames[t].positions,
            &self.masses,
            &history,
        ))
    }

    /// `N x 3` acceleration labels of frame `t`.
    pub fn labels(&self, t: usize) -> Matrix {
        vectors_to_matrix(&self.frames[t].accelerations)
    }

    pub fn graph(&self, t: usize, config: &GraphConfig) -> Result<FrameGraph> {
        build_graph(
            &self.frames[t].positions,
            self.features(t)?,
            self.labels(t),
            config,
        )
    }

    /// One graph per frame, in frame order.
    pub fn graphs(&self, config: &GraphConfig) -> Result<Vec<FrameGraph>> {
        (0..self.frame_count())
            .map(|t| self.graph(t, config))
            .collect()
    }
}

/// Rows `[r_i, m_i, history[0][i], history[1][i], ...]`.
pub fn assemble_features(positions: &[Vec3], masses: &[f64], history: &[&[Vec3]]) -> Matrix {
    let n = positions.len();
    let d = feature_dim(history.len());
    let mut data = Vec::with_capacity(n * d);
    for i in 0..n {
        data.extend_from_slice(&positions[i].to_array());
        data.push(masses[i]);
        for past in history {
            data.extend_from_slice(&past[i].to_array());
        }
    }
    Matrix::from_vec(n, d, data).expect("sized by construction")
}

pub fn vectors_to_matrix(v: &[Vec3]) -> Matrix {
    Matrix::from_vec(v.len(), 3, v.iter().flat_map(|a| a.to_array()).collect())
        .expect("sized by construction")
}

fn check_history(history_depth: usize, frames: usize) -> Result<()> {
    if history_depth >= frames {
        return Err(Error::arg(format!(
            "history depth {history_depth} must be smaller than the frame count {frames}"
        )));
    }
    Ok(())
}

/// Labelled scene from a simulation trace (the initial condition is not a sample).
pub fn record_simulation(trace: &Trace, history_depth: usize) -> Result<SceneDataset> {
    check_history(history_depth, trace.frame_count())?;
    Ok(SceneDataset {
        masses: trace.masses.clone(),
        frames: trace.frames.clone(),
        history_depth,
    })
}

/// Physical constants shared by every scene of a file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetHeader {
    pub g: f64,
    pub eps: f64,
    pub dt: f64,
}

impl From<&PhysicsParams> for DatasetHeader {
    fn from(p: &PhysicsParams) -> Self {
        Self {
            g: p.g,
            eps: p.eps,
            dt: p.dt,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub scenes: Vec<SceneDataset>,
}

impl Dataset {
    pub fn scene_count(&self) -> usize {
        self.scenes.len()
    }
}

fn push_vectors(w: &mut Writer, frames: &[Frame], pick: fn(&Frame) -> &[Vec3]) {
    for f in frames {
        for v in pick(f) {
            w.f64(v.x);
            w.f64(v.y);
            w.f64(v.z);
        }
    }
}

pub fn encode_dataset(dataset: &Dataset) -> Result<Vec<u8>> {
    let mut w = Writer::new();
    w.bytes(DATASET_MAGIC);
    w.u32(DATASET_VERSION);
    w.f64(dataset.header.g);
    w.f64(dataset.header.eps);
    w.f64(dataset.header.dt);
    w.u32(to_u32(dataset.scenes.len(), "scene count")?);
    for (s, scene) in dataset.scenes.iter().enumerate() {
        let n = scene.particle_count();
        if scene
            .frames
            .iter()
            .any(|f| f.positions.len() != n || f.velocities.len() != n || f.accelerations.len() != n)
        {
            return Err(Error::arg(format!("scene {s} has frames of inconsistent size")));
        }
        w.u32(to_u32(n, "particle count")?);
        w.u32(to_u32(scene.frame_count(), "frame count")?);
        w.f64s(&scene.masses);
        push_vectors(&mut w, &scene.frames, |f| &f.positions);
        push_vectors(&mut w, &scene.frames, |f| &f.velocities);
        push_vectors(&mut w, &scene.frames, |f| &f.accelerations);
    }
    Ok(w.into_inner())
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::arg(format!("{what} {v} does not fit in u32")))
}

fn read_vectors(r: &mut Reader<'_>, t: usize, n: usize, what: &str) -> Result<Vec<Vec<Vec3>>> {
    let flat = r.f64s(t * n * 3, what)?;
    Ok(flat
        .chunks_exact(n * 3)
        .map(|frame| {
            frame
                .chunks_exact(3)
                .map(|c| Vec3::new(c[0], c[1], c[2]))
                .collect()
        })
        .collect())
}

/// Decodes a whole dataset; scenes come back with `history_depth = 0`.
pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut r = Reader::new(bytes);
    r.expect_magic(DATASET_MAGIC)?;
    let at = r.offset();
    let version = r.u32("version")?;
    if version != DATASET_VERSION {
        return Err(Error::format(at, format!("unsupported dataset version {version}")));
    }
    let header = DatasetHeader {
        g: r.f64("G")?,
        eps: r.f64("eps")?,
        dt: r.f64("dt")?,
    };
    let count = r.u32("scene count")? as usize;
    let mut scenes = Vec::with_capacity(count.min(1 << 16));
    for s in 0..count {
        let at = r.offset();
        let n = r.u32("particle count")? as usize;
        if n == 0 {
            return Err(Error::format(at, format!("scene {s} has no particles")));
        }
        let t = r.u32("frame count")? as usize;
        let masses = r.f64s(n, &format!("scene {s} masses"))?;
        let pos = read_vectors(&mut r, t, n, &format!("scene {s} positions"))?;
        let vel = read_vectors(&mut r, t, n, &format!("scene {s} velocities"))?;
        let acc = read_vectors(&mut r, t, n, &format!("scene {s} accelerations"))?;
        let frames = pos
            .into_iter()
            .zip(vel)
            .zip(acc)
            .map(|((positions, velocities), accelerations)| Frame {
                positions,
                velocities,
                accelerations,
            })
            .collect();
        scenes.push(SceneDataset {
            masses,
            frames,
            history_depth: 0,
        });
    }
    r.expect_end()?;
    Ok(Dataset { header, scenes })
}

/// Writes the dataset atomically (temporary file, then rename).
pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_dataset(dataset)?)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    decode_dataset(&std::fs::read(path)?)
}

/// Scene-level shuffled split; `round(train_fraction * len)` indices go to training.
pub fn split_indices(len: usize, train_fraction: f64, seed: Seed) -> Result<(Vec<usize>, Vec<usize>)> {
    if len < 2 {
        return Err(Error::arg(format!("need at least 2 scenes to split, got {len}")));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::arg(format!(
            "train_fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let n_train = ((train_fraction * len as f64).round() as usize).clamp(1, len - 1);
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut seed.rng());
    let test = order.split_off(n_train);
    Ok((order, test))
}

/// Partitions whole scenes into `(train, test)`.
pub fn split_train_test<T: Clone>(
    scenes: &[T],
    train_fraction: f64,
    seed: Seed,
) -> Result<(Vec<T>, Vec<T>)> {
    let (train, test) = split_indices(scenes.len(), train_fraction, seed)?;
    Ok((
        train.iter().map(|&i| scenes[i].clone()).collect(),
        test.iter().map(|&i| scenes[i].clone()).collect(),
    ))
}
