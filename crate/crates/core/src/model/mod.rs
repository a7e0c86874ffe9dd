//! EdgeConv acceleration surrogate.
//!
//! ```text
//! h0_i      = f_node(x_i)                                  Tanh MLP, d_in -> d -> d
//! z_ij      = f_edge(e_ij)                                 optional, 1 -> d -> d
//! m_ij      = phi_l(h_i, h_j - h_i [, z_ij])               Tanh MLP, -> w_l -> w_l
//! m_i       = sum_{j in N(i)} m_ij                         ascending source index
//! h'_i      = LayerNorm(concat(h_i, m_i))                  width 2 w_l
//! h'_i      = P_l h'_i + c_l                               only with project_back
//! a_i       = W_out h_i(L) + b_out
//! ```
//!
//! Layer widths therefore double every layer (`w_{l+1} = 2 w_l`, `w_0 = d`)
//! unless `project_back` maps each layer back to `d`.

mod checkpoint;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};

use rand::SeedableRng;
use rand_xoshiro::SplitMix64;

use crate::error::{Error, Result};
use crate::graph::FrameGraph;
use crate::nn::{glorot_uniform, mse_loss_grad, Dense, LayerNorm, LayerNormCache, Matrix, Mlp, MlpCache, ParamBlocks};

/// Output width: one 3D acceleration per node.
pub const D_OUT: usize = 3;
/// Edge attribute width (the scalar neighbour distance).
pub const EDGE_ATTR_DIM: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub d_in: usize,
    /// Latent width of the node encoder.
    pub d: usize,
    /// Number of message-passing layers.
    pub layers: usize,
    pub use_edge_encoder: bool,
    pub project_back: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_in: 4,
            d: 64,
            layers: 2,
            use_edge_encoder: false,
            project_back: false,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_in == 0 || self.d == 0 || self.layers == 0 {
            return Err(Error::config(format!(
                "d_in, d and L must be positive (got {}, {}, {})",
                self.d_in, self.d, self.layers
            )));
        }
        Ok(())
    }

    /// Node-state widths `w_0 ..= w_L`.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.d];
        for _ in 0..self.layers {
            let last = *w.last().unwrap();
            w.push(if self.project_back { self.d } else { 2 * last });
        }
        w
    }
}

/// Parameters of one message-passing layer.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeConv {
    pub message: Mlp,
    pub norm: LayerNorm,
    pub project: Option<Dense>,
}

impl EdgeConv {
    pub fn input_width(&self) -> usize {
        self.norm.width() / 2
    }

    pub fn output_width(&self) -> usize {
        self.project
            .as_ref()
            .map_or(self.norm.width(), Dense::output_dim)
    }

    fn zeros_like(&self) -> Self {
        Self {
            message: self.message.zeros_like(),
            norm: self.norm.zeros_like(),
            project: self.project.as_ref().map(Dense::zeros_like),
        }
    }
}

impl ParamBlocks for EdgeConv {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.message
            .visit(&mut |n, d, v| f(&format!("message.{n}"), d, v));
        self.norm.visit(&mut |n, d, v| f(&format!("norm.{n}"), d, v));
        if let Some(p) = &self.project {
            p.visit(&mut |n, d, v| f(&format!("project.{n}"), d, v));
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.message
            .visit_mut(&mut |n, v| f(&format!("message.{n}"), v));
        self.norm.visit_mut(&mut |n, v| f(&format!("norm.{n}"), v));
        if let Some(p) = &mut self.project {
            p.visit_mut(&mut |n, v| f(&format!("project.{n}"), v));
        }
    }
}

/// Every learnable weight of the surrogate plus the architecture it realises.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub node_encoder: Mlp,
    pub edge_encoder: Option<Mlp>,
    pub layers: Vec<EdgeConv>,
    pub output: Dense,
}

impl ParamBlocks for ModelParams {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.node_encoder
            .visit(&mut |n, d, v| f(&format!("node_encoder.{n}"), d, v));
        if let Some(e) = &self.edge_encoder {
            e.visit(&mut |n, d, v| f(&format!("edge_encoder.{n}"), d, v));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            layer.visit(&mut |n, d, v| f(&format!("layers.{l}.{n}"), d, v));
        }
        self.output.visit(&mut |n, d, v| f(&format!("output.{n}"), d, v));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.node_encoder
            .visit_mut(&mut |n, v| f(&format!("node_encoder.{n}"), v));
        if let Some(e) = &mut self.edge_encoder {
            e.visit_mut(&mut |n, v| f(&format!("edge_encoder.{n}"), v));
        }
        for (l, layer) in self.layers.iter_mut().enumerate() {
            layer.visit_mut(&mut |n, v| f(&format!("layers.{l}.{n}"), v));
        }
        self.output.visit_mut(&mut |n, v| f(&format!("output.{n}"), v));
    }
}

/// Seeded Glorot-uniform initialisation; LayerNorm starts at `gamma = 1, beta = 0`.
pub fn init_params(config: &ModelConfig) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = SplitMix64::seed_from_u64(config.seed);
    let d = config.d;
    let node_encoder = Mlp::new(&[config.d_in, d, d], true, &mut rng)?;
    let edge_encoder = if config.use_edge_encoder {
        Some(Mlp::new(&[EDGE_ATTR_DIM, d, d], true, &mut rng)?)
    } else {
        None
    };
    let widths = config.widths();
    let edge_width = if config.use_edge_encoder { d } else { 0 };
    let mut layers = Vec::with_capacity(config.layers);
    for &w in &widths[..config.layers] {
        let message = Mlp::new(&[2 * w + edge_width, w, w], true, &mut rng)?;
        let project = config
            .project_back
            .then(|| glorot_uniform(2 * w, d, &mut rng));
        layers.push(EdgeConv {
            message,
            norm: LayerNorm::new(2 * w),
            project,
        });
    }
    let output = glorot_uniform(widths[config.layers], D_OUT, &mut rng);
    Ok(ModelParams {
        config: *config,
        node_encoder,
        edge_encoder,
        layers,
        output,
    })
}

impl ModelParams {
    /// Checks that every block matches the width chain implied by `config`.
    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        c.validate()?;
        let bad = |what: String| Err(Error::config(what));
        if self.node_encoder.input_dim() != c.d_in || self.node_encoder.output_dim() != c.d {
            return bad(format!(
                "node encoder maps {} -> {}, expected {} -> {}",
                self.node_encoder.input_dim(),
                self.node_encoder.output_dim(),
                c.d_in,
                c.d
            ));
        }
        match (&self.edge_encoder, c.use_edge_encoder) {
            (Some(e), true) if e.input_dim() == EDGE_ATTR_DIM && e.output_dim() == c.d => {}
            (None, false) => {}
            _ => return bad("edge encoder does not match use_edge_encoder".into()),
        }
        if self.layers.len() != c.layers {
            return bad(format!("{} layers, config says {}", self.layers.len(), c.layers));
        }
        let widths = c.widths();
        let edge_width = if c.use_edge_encoder { c.d } else { 0 };
        for (l, layer) in self.layers.iter().enumerate() {
            let w = widths[l];
            if layer.message.input_dim() != 2 * w + edge_width
                || layer.message.output_dim() != w
                || layer.norm.width() != 2 * w
                || layer.output_width() != widths[l + 1]
                || layer.project.is_some() != c.project_back
                || layer.project.as_ref().is_some_and(|p| p.input_dim() != 2 * w)
            {
                return bad(format!("layer {l} does not follow the width chain {widths:?}"));
            }
        }
        if self.output.input_dim() != widths[c.layers] || self.output.output_dim() != D_OUT {
            return bad(format!(
                "output head maps {} -> {}, expected {} -> {D_OUT}",
                self.output.input_dim(),
                self.output.output_dim(),
                widths[c.layers]
            ));
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config,
            node_encoder: self.node_encoder.zeros_like(),
            edge_encoder: self.edge_encoder.as_ref().map(Mlp::zeros_like),
            layers: self.layers.iter().map(EdgeConv::zeros_like).collect(),
            output: self.output.zeros_like(),
        }
    }

    /// Element-wise `self += other`; shapes must match.
    pub fn accumulate(&mut self, other: &ModelParams) {
        let flat = other.flatten();
        let mut at = 0;
        self.visit_mut(&mut |_, v| {
            for x in v.iter_mut() {
                *x += flat[at];
                at += 1;
            }
        });
    }

    pub fn scale(&mut self, s: f64) {
        self.visit_mut(&mut |_, v| v.iter_mut().for_each(|x| *x *= s));
    }
}

/// `h0 = f_node(x)`.
pub fn encode_nodes(features: &Matrix, params: &ModelParams) -> Result<Matrix> {
    check_features(features, params)?;
    params.node_encoder.apply(features)
}

/// `z = f_edge(e)` for an `E x 1` attribute column.
pub fn encode_edges(edge_attrs: &[f64], params: &ModelParams) -> Result<Matrix> {
    let enc = params
        .edge_encoder
        .as_ref()
        .ok_or_else(|| Error::config("edge encoder is disabled in this model"))?;
    enc.apply(&Matrix::from_vec(edge_attrs.len(), EDGE_ATTR_DIM, edge_attrs.to_vec())?)
}

fn check_features(features: &Matrix, params: &ModelParams) -> Result<()> {
    if features.cols() != params.config.d_in {
        return Err(Error::config(format!(
            "model expects {} input features, graph provides {}",
            params.config.d_in,
            features.cols()
        )));
    }
    Ok(())
}

/// Edge visiting order for the sum: destination-major, ascending source index.
struct Aggregation {
    order: Vec<usize>,
}

impl Aggregation {
    fn new(edges: &[(usize, usize)], nodes: usize) -> Result<Self> {
        if let Some(&(s, d)) = edges.iter().find(|&&(s, d)| s >= nodes || d >= nodes) {
            return Err(Error::arg(format!(
                "edge ({s} -> {d}) references a node outside 0..{nodes}"
            )));
        }
        let mut order: Vec<usize> = (0..edges.len()).collect();
        order.sort_by_key(|&e| (edges[e].1, edges[e].0, e));
        Ok(Self { order })
    }

    fn sum(&self, edges: &[(usize, usize)], messages: &Matrix, nodes: usize) -> Matrix {
        let mut out = Matrix::zeros(nodes, messages.cols());
        for &e in &self.order {
            let dst = edges[e].1;
            let src_row = messages.row(e);
            for (o, m) in out.row_mut(dst).iter_mut().zip(src_row) {
                *o += m;
            }
        }
        out
    }
}

struct LayerCache {
    message: MlpCache,
    norm: LayerNormCache,
    normed: Matrix,
}

struct ForwardCache {
    encoder: MlpCache,
    edge: Option<(MlpCache, Matrix)>,
    layers: Vec<LayerCache>,
    last_hidden: Matrix,
}

fn edge_inputs(h: &Matrix, edges: &[(usize, usize)], z: Option<&Matrix>) -> Matrix {
    let w = h.cols();
    let zc = z.map_or(0, Matrix::cols);
    let mut x = Matrix::zeros(edges.len(), 2 * w + zc);
    for (e, &(src, dst)) in edges.iter().enumerate() {
        let (hi, hj) = (h.row(dst), h.row(src));
        let row = x.row_mut(e);
        row[..w].copy_from_slice(hi);
        for c in 0..w {
            row[w + c] = hj[c] - hi[c];
        }
        if let Some(z) = z {
            row[2 * w..].copy_from_slice(z.row(e));
        }
    }
    x
}

fn layer_forward(
    layer: &EdgeConv,
    h: &Matrix,
    edges: &[(usize, usize)],
    agg: &Aggregation,
    z: Option<&Matrix>,
) -> Result<(Matrix, LayerCache)> {
    if h.cols() != layer.input_width() {
        return Err(Error::config(format!(
            "layer expects node width {}, got {}",
            layer.input_width(),
            h.cols()
        )));
    }
    let x = edge_inputs(h, edges, z);
    let (messages, message_cache) = layer.message.forward(&x)?;
    let summed = agg.sum(edges, &messages, h.rows());
    let (normed, norm_cache) = layer.norm.forward(&h.hcat(&summed)?)?;
    let out = match &layer.project {
        Some(p) => p.forward(&normed)?,
        None => normed.clone(),
    };
    Ok((
        out,
        LayerCache {
            message: message_cache,
            norm: norm_cache,
            normed,
        },
    ))
}

/// Returns `(dparams, dL/dh, dL/dz)` for one layer.
fn layer_backward(
    layer: &EdgeConv,
    cache: &LayerCache,
    edges: &[(usize, usize)],
    z_width: usize,
    d_out: &Matrix,
) -> Result<(EdgeConv, Matrix, Option<Matrix>)> {
    let (project, d_normed) = match &layer.project {
        Some(p) => {
            let (gp, dn) = p.backward(&cache.normed, d_out)?;
            (Some(gp), dn)
        }
        None => (None, d_out.clone()),
    };
    let (norm, d_cat) = layer.norm.backward(&cache.norm, &d_normed)?;
    let w = layer.input_width();
    let (mut dh, d_sum) = d_cat.hsplit(w);
    // each edge's message feeds its destination's sum
    let dst: Vec<usize> = edges.iter().map(|e| e.1).collect();
    let d_msg = d_sum.gather_rows(&dst);
    let (message, dx) = layer.message.backward(&cache.message, &d_msg)?;
    let mut dz = (z_width > 0).then(|| Matrix::zeros(edges.len(), z_width));
    for (e, &(src, dst)) in edges.iter().enumerate() {
        let row = dx.row(e);
        let (d_hi, rest) = row.split_at(w);
        let (d_diff, d_z) = rest.split_at(w);
        for c in 0..w {
            dh[(dst, c)] += d_hi[c] - d_diff[c];
            dh[(src, c)] += d_diff[c];
        }
        if let Some(dz) = dz.as_mut() {
            dz.row_mut(e).copy_from_slice(d_z);
        }
    }
    Ok((
        EdgeConv {
            message,
            norm,
            project,
        },
        dh,
        dz,
    ))
}

/// One EdgeConv layer applied to node states `h`.
pub fn edge_conv_layer(
    h: &Matrix,
    edges: &[(usize, usize)],
    edge_codes: Option<&Matrix>,
    layer: &EdgeConv,
) -> Result<Matrix> {
    let agg = Aggregation::new(edges, h.rows())?;
    Ok(layer_forward(layer, h, edges, &agg, edge_codes)?.0)
}

fn forward_cached(graph: &FrameGraph, params: &ModelParams) -> Result<(Matrix, ForwardCache)> {
    check_features(&graph.node_features, params)?;
    let n = graph.node_count();
    let agg = Aggregation::new(&graph.edges, n)?;
    let edge = match &params.edge_encoder {
        Some(enc) => {
            let attrs = graph
                .edge_attrs
                .as_ref()
                .ok_or_else(|| Error::config("model uses edge attributes but the graph has none"))?;
            if attrs.len() != graph.edge_count() {
                return Err(Error::arg("edge attribute count does not match edge count"));
            }
            let e = Matrix::from_vec(attrs.len(), EDGE_ATTR_DIM, attrs.clone())?;
            let (z, cache) = enc.forward(&e)?;
            Some((cache, z))
        }
        None => None,
    };
    let (mut h, encoder) = params.node_encoder.forward(&graph.node_features)?;
    let mut layers = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let (next, cache) = layer_forward(layer, &h, &graph.edges, &agg, edge.as_ref().map(|e| &e.1))?;
        layers.push(cache);
        h = next;
    }
    let pred = params.output.forward(&h)?;
    Ok((
        pred,
        ForwardCache {
            encoder,
            edge,
            layers,
            last_hidden: h,
        },
    ))
}

/// Predicted accelerations, `N x 3`.
pub fn model_forward(graph: &FrameGraph, params: &ModelParams) -> Result<Matrix> {
    Ok(forward_cached(graph, params)?.0)
}

/// MSE against `labels` and its exact gradient with respect to every parameter.
pub fn model_backward(
    graph: &FrameGraph,
    params: &ModelParams,
    labels: &Matrix,
) -> Result<(f64, ModelParams)> {
    let (pred, cache) = forward_cached(graph, params)?;
    if labels.shape() != pred.shape() {
        return Err(Error::arg(format!(
            "labels are {:?}, predictions {:?}",
            labels.shape(),
            pred.shape()
        )));
    }
    let (loss, d_pred) = mse_loss_grad(&pred, labels)?;
    let (output, mut dh) = params.output.backward(&cache.last_hidden, &d_pred)?;
    let z_width = params.edge_encoder.as_ref().map_or(0, Mlp::output_dim);
    let mut dz_total = (z_width > 0).then(|| Matrix::zeros(graph.edge_count(), z_width));
    let mut layer_grads = Vec::with_capacity(params.layers.len());
    for (layer, lc) in params.layers.iter().zip(&cache.layers).rev() {
        let (g, dh_in, dz) = layer_backward(layer, lc, &graph.edges, z_width, &dh)?;
        if let (Some(total), Some(dz)) = (dz_total.as_mut(), dz) {
            total.add_assign(&dz);
        }
        layer_grads.push(g);
        dh = dh_in;
    }
    layer_grads.reverse();
    let (node_encoder, _) = params.node_encoder.backward(&cache.encoder, &dh)?;
    let edge_encoder = match (&params.edge_encoder, &cache.edge, dz_total) {
        (Some(enc), Some((ec, _)), Some(dz)) => Some(enc.backward(ec, &dz)?.0),
        _ => None,
    };
    Ok((
        loss,
        ModelParams {
            config: params.config,
            node_encoder,
            edge_encoder,
            layers: layer_grads,
            output,
        },
    ))
}
