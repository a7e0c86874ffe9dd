use super::matrix::Matrix;
use super::params::ParamBlocks;
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Per-row normalisation with a learnable affine map:
/// `(x - mean) / sqrt(var + eps) * gamma + beta`, `var` the population variance.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    normalized: Matrix,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(width: usize) -> Self {
        Self {
            gamma: vec![1.0; width],
            beta: vec![0.0; width],
            eps: LAYER_NORM_EPS,
        }
    }

    pub fn width(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, LayerNormCache)> {
        let w = self.width();
        if x.cols() != w || w == 0 {
            return Err(Error::arg(format!(
                "layer norm of width {w} applied to {} columns",
                x.cols()
            )));
        }
        let mut normalized = Matrix::zeros(x.rows(), w);
        let mut out = Matrix::zeros(x.rows(), w);
        let mut inv_std = Vec::with_capacity(x.rows());
        for r in 0..x.rows() {
            let row = x.row(r);
            let mean = row.iter().sum::<f64>() / w as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / w as f64;
            let s = 1.0 / (var + self.eps).sqrt();
            inv_std.push(s);
            let nrow = normalized.row_mut(r);
            for (n, v) in nrow.iter_mut().zip(row) {
                *n = (v - mean) * s;
            }
            let nrow = normalized.row(r).to_vec();
            for (c, o) in out.row_mut(r).iter_mut().enumerate() {
                *o = nrow[c] * self.gamma[c] + self.beta[c];
            }
        }
        Ok((out, LayerNormCache { normalized, inv_std }))
    }

    /// Returns `(dparams, dL/dx)`.
    pub fn backward(&self, cache: &LayerNormCache, dy: &Matrix) -> Result<(LayerNorm, Matrix)> {
        let w = self.width();
        if dy.shape() != cache.normalized.shape() {
            return Err(Error::arg("layer norm backward: gradient shape mismatch"));
        }
        let mut gamma = vec![0.0; w];
        let mut beta = vec![0.0; w];
        let mut dx = Matrix::zeros(dy.rows(), w);
        let n = w as f64;
        for r in 0..dy.rows() {
            let g = dy.row(r);
            let xh = cache.normalized.row(r);
            let mut sum_dxh = 0.0;
            let mut sum_dxh_xh = 0.0;
            for c in 0..w {
                gamma[c] += g[c] * xh[c];
                beta[c] += g[c];
                let dxh = g[c] * self.gamma[c];
                sum_dxh += dxh;
                sum_dxh_xh += dxh * xh[c];
            }
            let s = cache.inv_std[r];
            for (c, d) in dx.row_mut(r).iter_mut().enumerate() {
                let dxh = g[c] * self.gamma[c];
                *d = s / n * (n * dxh - sum_dxh - xh[c] * sum_dxh_xh);
            }
        }
        Ok((
            LayerNorm {
                gamma,
                beta,
                eps: self.eps,
            },
            dx,
        ))
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            gamma: vec![0.0; self.width()],
            beta: vec![0.0; self.width()],
            eps: self.eps,
        }
    }
}

impl ParamBlocks for LayerNorm {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        f("gamma", &[self.gamma.len()], &self.gamma);
        f("beta", &[self.beta.len()], &self.beta);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        f("gamma", &mut self.gamma);
        f("beta", &mut self.beta);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_check, mse_loss_grad};
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::SplitMix64;

    #[test]
    fn constant_row_maps_to_zero() {
        let ln = LayerNorm::new(4);
        let (y, _) = ln.forward(&Matrix::from_vec(1, 4, vec![2.5; 4]).unwrap()).unwrap();
        assert!(y.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn two_values_normalise_to_unit_spread() {
        let ln = LayerNorm { eps: 0.0, ..LayerNorm::new(2) };
        let (y, _) = ln.forward(&Matrix::from_vec(1, 2, vec![1.0, 3.0]).unwrap()).unwrap();
        assert_eq!(y.data(), &[-1.0, 1.0]);
    }

    #[test]
    fn random_rows_have_zero_mean_unit_variance() {
        let mut rng = SplitMix64::seed_from_u64(4);
        let ln = LayerNorm::new(64);
        for _ in 0..20 {
            let x = Matrix::from_vec(1, 64, (0..64).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
            let (y, _) = ln.forward(&x).unwrap();
            let stats = |d: &[f64]| {
                let mean = d.iter().sum::<f64>() / 64.0;
                (mean, d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 64.0)
            };
            let (_, var_x) = stats(x.data());
            let (mean, var) = stats(y.data());
            assert!(mean.abs() <= 1e-12);
            // eps shrinks the variance slightly below one
            assert!((var - var_x / (var_x + LAYER_NORM_EPS)).abs() <= 1e-12);
            assert!((var - 1.0).abs() <= 1e-5);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        for seed in 0..20 {
            let mut rng = SplitMix64::seed_from_u64(100 + seed);
            let mut ln = LayerNorm::new(6);
            ln.gamma.iter_mut().for_each(|g| *g = rng.random_range(0.5..1.5));
            ln.beta.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
            let x = Matrix::from_vec(3, 6, (0..18).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
            let t = Matrix::from_vec(3, 6, (0..18).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let f = |p: &LayerNorm| {
                let (y, cache) = p.forward(&x).unwrap();
                let (loss, dy) = mse_loss_grad(&y, &t).unwrap();
                (loss, p.backward(&cache, &dy).unwrap().0)
            };
            assert!(grad_check(f, &ln, 1e-6) <= 1e-5);

            let fx = |v: &Vec<f64>| {
                let xm = Matrix::from_vec(3, 6, v.clone()).unwrap();
                let (y, cache) = ln.forward(&xm).unwrap();
                let (loss, dy) = mse_loss_grad(&y, &t).unwrap();
                (loss, ln.backward(&cache, &dy).unwrap().1.into_vec())
            };
            assert!(grad_check(fx, &x.data().to_vec(), 1e-6) <= 1e-5);
        }
    }
}
