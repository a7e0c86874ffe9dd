//! `NBDM` checkpoint: architecture, feature layout, physics constants and weights.
//!
//! ```text
//! "NBDM" | version u32 = 1
//! | d_in u32 | d u32 | L u32 | d_out u32 | use_edge_encoder u8 | project_back u8
//! | history_depth u32 | k u32 | G f64 | eps f64 | dt f64
//! | block_count u32
//! | per block: name_len u16 | name utf-8 | rank u8 | dims u32[rank] | values f64[prod(dims)]
//! ```

use std::collections::HashMap;
use std::path::Path;

use super::{init_params, ModelConfig, ModelParams, D_OUT};
use crate::codec::{write_atomic, Reader, Writer};
use crate::dataset::{feature_dim, DatasetHeader};
use crate::error::{Error, Result};
use crate::graph::GraphConfig;
use crate::nn::ParamBlocks;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"NBDM";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A trained model with everything a rollout needs to use it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub history_depth: usize,
    pub k: usize,
    pub physics: DatasetHeader,
}

impl Checkpoint {
    pub fn graph_config(&self) -> GraphConfig {
        GraphConfig {
            k: self.k,
            with_edge_attrs: self.params.config.use_edge_encoder,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.params.config.d_in != feature_dim(self.history_depth) {
            return Err(Error::config(format!(
                "d_in {} does not match history depth {} (expected {})",
                self.params.config.d_in,
                self.history_depth,
                feature_dim(self.history_depth)
            )));
        }
        if self.k == 0 {
            return Err(Error::config("k must be at least 1"));
        }
        Ok(())
    }
}

fn u32_of(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::arg(format!("{what} {v} does not fit in u32")))
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    ckpt.validate()?;
    let c = &ckpt.params.config;
    let mut w = Writer::new();
    w.bytes(CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION);
    w.u32(u32_of(c.d_in, "d_in")?);
    w.u32(u32_of(c.d, "d")?);
    w.u32(u32_of(c.layers, "L")?);
    w.u32(D_OUT as u32);
    w.u8(c.use_edge_encoder as u8);
    w.u8(c.project_back as u8);
    w.u32(u32_of(ckpt.history_depth, "history_depth")?);
    w.u32(u32_of(ckpt.k, "k")?);
    w.f64(ckpt.physics.g);
    w.f64(ckpt.physics.eps);
    w.f64(ckpt.physics.dt);

    let mut blocks = Vec::new();
    ckpt.params
        .visit(&mut |name, dims, values| blocks.push((name.to_owned(), dims.to_vec(), values.to_vec())));
    w.u32(u32_of(blocks.len(), "block count")?);
    for (name, dims, values) in &blocks {
        let len = u16::try_from(name.len())
            .map_err(|_| Error::arg(format!("block name {name} is too long")))?;
        w.u16(len);
        w.bytes(name.as_bytes());
        w.u8(dims.len() as u8);
        for &d in dims {
            w.u32(u32_of(d, "block dimension")?);
        }
        w.f64s(values);
    }
    Ok(w.into_inner())
}

fn read_flag(r: &mut Reader<'_>, what: &str) -> Result<bool> {
    let at = r.offset();
    match r.u8(what)? {
        0 => Ok(false),
        1 => Ok(true),
        v => Err(Error::format(at, format!("{what} must be 0 or 1, got {v}"))),
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::new(bytes);
    r.expect_magic(CHECKPOINT_MAGIC)?;
    let at = r.offset();
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(at, format!("unsupported checkpoint version {version}")));
    }
    let config_at = r.offset();
    let d_in = r.u32("d_in")? as usize;
    let d = r.u32("d")? as usize;
    let layers = r.u32("L")? as usize;
    let d_out_at = r.offset();
    let d_out = r.u32("d_out")? as usize;
    if d_out != D_OUT {
        return Err(Error::format(d_out_at, format!("d_out must be {D_OUT}, got {d_out}")));
    }
    let use_edge_encoder = read_flag(&mut r, "use_edge_encoder")?;
    let project_back = read_flag(&mut r, "project_back")?;
    let history_depth = r.u32("history_depth")? as usize;
    let k = r.u32("k")? as usize;
    let physics = DatasetHeader {
        g: r.f64("G")?,
        eps: r.f64("eps")?,
        dt: r.f64("dt")?,
    };
    let config = ModelConfig {
        d_in,
        d,
        layers,
        use_edge_encoder,
        project_back,
        seed: 0,
    };
    // Bound the skeleton size by the bytes actually present before allocating it.
    let widths = if config.validate().is_ok() && layers <= 32 && d <= 1 << 16 && d_in <= 1 << 20 {
        config.widths()
    } else {
        return Err(Error::format(config_at, "implausible architecture in config block"));
    };
    let approx: usize = widths.iter().map(|w| w.saturating_mul(*w)).fold(0, usize::saturating_add);
    if approx.saturating_add(d_in.saturating_mul(d)).saturating_mul(8) > r.remaining() {
        return Err(Error::format(config_at, "config block describes more weights than the file holds"));
    }
    let mut params = init_params(&config).map_err(|e| Error::format(config_at, e.to_string()))?;

    let count_at = r.offset();
    let count = r.u32("block count")? as usize;
    let mut blocks: HashMap<String, (Vec<usize>, Vec<f64>)> = HashMap::new();
    for _ in 0..count {
        let name_at = r.offset();
        let len = r.u16("block name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "block name")?)
            .map_err(|_| Error::format(name_at, "block name is not UTF-8"))?
            .to_owned();
        let rank = r.u8("block rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32("block dimension")? as usize);
        }
        let n = dims.iter().try_fold(1usize, |a, &b| a.checked_mul(b));
        let n = n.ok_or_else(|| Error::format(name_at, format!("block {name} is too large")))?;
        let values = r.f64s(n, &format!("block {name}"))?;
        if blocks.insert(name.clone(), (dims, values)).is_some() {
            return Err(Error::format(name_at, format!("duplicate block {name}")));
        }
    }
    r.expect_end()?;

    let mut expected = Vec::new();
    params.visit(&mut |name, dims, _| expected.push((name.to_owned(), dims.to_vec())));
    if expected.len() != blocks.len() {
        return Err(Error::format(
            count_at,
            format!("expected {} parameter blocks, found {}", expected.len(), blocks.len()),
        ));
    }
    for (name, dims) in &expected {
        match blocks.get(name) {
            Some((d, _)) if d == dims => {}
            Some((d, _)) => {
                return Err(Error::format(
                    count_at,
                    format!("block {name} has dims {d:?}, expected {dims:?}"),
                ))
            }
            None => return Err(Error::format(count_at, format!("missing block {name}"))),
        }
    }
    params.visit_mut(&mut |name, values| values.copy_from_slice(&blocks[name].1));

    let ckpt = Checkpoint {
        params,
        history_depth,
        k,
        physics,
    };
    ckpt.validate()
        .map_err(|e| Error::format(config_at, e.to_string()))?;
    Ok(ckpt)
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_checkpoint(ckpt)?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode_checkpoint(&std::fs::read(path)?)
}
