use super::params::ParamBlocks;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |b: f64| (0.0..1.0).contains(&b);
        if !(self.lr.is_finite() && self.lr > 0.0 && unit(self.beta1) && unit(self.beta2) && self.eps > 0.0) {
            return Err(Error::arg(format!("invalid Adam settings {self:?}")));
        }
        Ok(())
    }
}

/// Bias-corrected Adam moments, one accumulator per parameter block.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    pub t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new<P: ParamBlocks>(params: &P, config: AdamConfig) -> Self {
        let mut m = Vec::new();
        params.visit(&mut |_, _, v| m.push(vec![0.0; v.len()]));
        Self {
            config,
            t: 0,
            v: m.clone(),
            m,
        }
    }

    pub fn step<P: ParamBlocks>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let mut g_blocks: Vec<Vec<f64>> = Vec::with_capacity(self.m.len());
        grads.visit(&mut |_, _, v| g_blocks.push(v.to_vec()));
        if g_blocks.len() != self.m.len()
            || g_blocks.iter().zip(&self.m).any(|(g, m)| g.len() != m.len())
        {
            return Err(Error::arg("adam: gradient blocks do not mirror the optimizer state"));
        }
        let mut shape_ok = true;
        let mut b = 0;
        params.visit(&mut |_, _, v| {
            shape_ok &= b < self.m.len() && v.len() == self.m[b].len();
            b += 1;
        });
        if !shape_ok || b != self.m.len() {
            return Err(Error::arg("adam: parameter blocks do not mirror the optimizer state"));
        }

        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        let (ms, vs) = (&mut self.m, &mut self.v);
        let mut b = 0;
        params.visit_mut(&mut |_, p| {
            let (m, v, g) = (&mut ms[b], &mut vs[b], &g_blocks[b]);
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            b += 1;
        });
        Ok(())
    }
}
