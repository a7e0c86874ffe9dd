use rand::Rng;

use super::matrix::Matrix;
use super::params::ParamBlocks;
use crate::error::{Error, Result};

/// Affine layer `y = x W^T + b` with `W` stored `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// Glorot-uniform weights in `+-sqrt(6 / (fan_in + fan_out))`, zero bias.
pub fn glorot_uniform<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Dense {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-limit..=limit))
        .collect();
    Dense {
        weight: Matrix::from_vec(fan_out, fan_in, data).expect("sized by construction"),
        bias: vec![0.0; fan_out],
    }
}

impl Dense {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Matrix::zeros(fan_out, fan_in),
            bias: vec![0.0; fan_out],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.input_dim() {
            return Err(Error::arg(format!(
                "dense layer expects {} inputs, got {}",
                self.input_dim(),
                x.cols()
            )));
        }
        let mut y = x.matmul_t(&self.weight)?;
        for r in 0..y.rows() {
            for (v, b) in y.row_mut(r).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        Ok(y)
    }

    /// Gradients for `dy = dL/dy` at input `x`; returns `(dparams, dL/dx)`.
    pub fn backward(&self, x: &Matrix, dy: &Matrix) -> Result<(Dense, Matrix)> {
        let weight = dy.t_matmul(x)?;
        let bias = dy.sum_rows();
        let dx = dy.matmul(&self.weight)?;
        Ok((Dense { weight, bias }, dx))
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim(), self.output_dim())
    }
}

impl ParamBlocks for Dense {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        f("weight", &[self.weight.rows(), self.weight.cols()], self.weight.data());
        f("bias", &[self.bias.len()], &self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        f("weight", self.weight.data_mut());
        f("bias", &mut self.bias);
    }
}

/// Stack of dense layers with Tanh after each hidden layer and, when
/// `activate_output` is set, after the last one too.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub activate_output: bool,
}

/// Per-layer inputs and outputs saved by [`Mlp::forward`].
#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<Matrix>,
    outputs: Vec<Matrix>,
}

impl Mlp {
    /// Chains `dims[0] -> dims[1] -> ...` with Glorot-uniform weights.
    pub fn new<R: Rng>(dims: &[usize], activate_output: bool, rng: &mut R) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::arg("an MLP needs at least an input and an output width"));
        }
        if dims.contains(&0) {
            return Err(Error::arg(format!("MLP widths must be positive: {dims:?}")));
        }
        let layers = dims
            .windows(2)
            .map(|w| glorot_uniform(w[0], w[1], rng))
            .collect();
        Ok(Self {
            layers,
            activate_output,
        })
    }

    /// Validates that consecutive layer widths chain.
    pub fn from_layers(layers: Vec<Dense>, activate_output: bool) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::arg("an MLP needs at least one layer"));
        }
        for (i, w) in layers.windows(2).enumerate() {
            if w[0].output_dim() != w[1].input_dim() {
                return Err(Error::arg(format!(
                    "layer {i} outputs {} values but layer {} expects {}",
                    w[0].output_dim(),
                    i + 1,
                    w[1].input_dim()
                )));
            }
        }
        Ok(Self {
            layers,
            activate_output,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").output_dim()
    }

    fn activated(&self, layer: usize) -> bool {
        layer + 1 < self.layers.len() || self.activate_output
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, MlpCache)> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut y = layer.forward(&h)?;
            if self.activated(i) {
                y.map_inplace(f64::tanh);
            }
            inputs.push(h);
            outputs.push(y.clone());
            h = y;
        }
        Ok((h, MlpCache { inputs, outputs }))
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h)?;
            if self.activated(i) {
                h.map_inplace(f64::tanh);
            }
        }
        Ok(h)
    }

    /// Returns `(dparams, dL/dx)` given `dy = dL/d(output)`.
    pub fn backward(&self, cache: &MlpCache, dy: &Matrix) -> Result<(Mlp, Matrix)> {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = dy.clone();
        for i in (0..self.layers.len()).rev() {
            if self.activated(i) {
                // d tanh(u) / du = 1 - tanh(u)^2
                for (gv, y) in g.data_mut().iter_mut().zip(cache.outputs[i].data()) {
                    *gv *= 1.0 - y * y;
                }
            }
            let (dl, dx) = self.layers[i].backward(&cache.inputs[i], &g)?;
            grads.push(dl);
            g = dx;
        }
        grads.reverse();
        Ok((
            Mlp {
                layers: grads,
                activate_output: self.activate_output,
            },
            g,
        ))
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(Dense::zeros_like).collect(),
            activate_output: self.activate_output,
        }
    }
}

impl ParamBlocks for Mlp {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        for (i, layer) in self.layers.iter().enumerate() {
            layer.visit(&mut |name, dims, v| f(&format!("{i}.{name}"), dims, v));
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.visit_mut(&mut |name, v| f(&format!("{i}.{name}"), v));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_check, mse_loss_grad};
    use rand::SeedableRng;
    use rand_xoshiro::SplitMix64;

    #[test]
    fn zero_params_give_zero_output() {
        let mut rng = SplitMix64::seed_from_u64(0);
        let mut mlp = Mlp::new(&[3, 5, 2], true, &mut rng).unwrap();
        mlp.fill(0.0);
        let x = Matrix::from_vec(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.1, 9.0]).unwrap();
        assert_eq!(mlp.apply(&x).unwrap(), Matrix::zeros(2, 2));
    }

    #[test]
    fn identity_layer_is_tanh() {
        let layer = Dense {
            weight: Matrix::identity(1),
            bias: vec![0.0],
        };
        let mlp = Mlp::from_layers(vec![layer], true).unwrap();
        let y = mlp.apply(&Matrix::from_vec(1, 1, vec![0.5]).unwrap()).unwrap();
        assert!((y[(0, 0)] - 0.46211715726).abs() < 1e-11);
    }

    #[test]
    fn broken_chain_is_rejected() {
        let err = Mlp::from_layers(vec![Dense::zeros(3, 4), Dense::zeros(5, 2)], false);
        assert!(err.is_err());
        let x = Matrix::zeros(1, 7);
        assert!(Mlp::from_layers(vec![Dense::zeros(3, 4)], false).unwrap().apply(&x).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        for seed in 0..20 {
            let mut rng = SplitMix64::seed_from_u64(seed);
            let mlp = Mlp::new(&[4, 6, 3], seed % 2 == 0, &mut rng).unwrap();
            let x = Matrix::from_vec(5, 4, (0..20).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let t = Matrix::from_vec(5, 3, (0..15).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let f = |p: &Mlp| {
                let (y, cache) = p.forward(&x).unwrap();
                let (loss, dy) = mse_loss_grad(&y, &t).unwrap();
                (loss, p.backward(&cache, &dy).unwrap().0)
            };
            let err = grad_check(f, &mlp, 1e-6);
            assert!(err <= 1e-5, "seed {seed}: {err}");
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = SplitMix64::seed_from_u64(17);
        let mlp = Mlp::new(&[3, 4, 2], true, &mut rng).unwrap();
        let x = vec![0.3, -0.7, 0.2, 0.9, 0.1, -0.4];
        let f = |v: &Vec<f64>| {
            let xm = Matrix::from_vec(2, 3, v.clone()).unwrap();
            let (y, cache) = mlp.forward(&xm).unwrap();
            let loss = y.data().iter().map(|a| a * a).sum::<f64>();
            let mut dy = y.clone();
            dy.scale(2.0);
            (loss, mlp.backward(&cache, &dy).unwrap().1.into_vec())
        };
        assert!(grad_check(f, &x, 1e-6) <= 1e-5);
    }
}
