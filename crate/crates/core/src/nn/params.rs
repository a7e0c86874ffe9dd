/// A model-shaped collection of parameter blocks, visited in a fixed order.
///
/// Gradients use the same type as the parameters they belong to, so any
/// `ParamBlocks` value doubles as a gradient container.
pub trait ParamBlocks {
    /// Calls `f(name, dims, values)` for every block.
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64]));

    /// Calls `f(name, values)` for every block, in the same order as [`ParamBlocks::visit`].
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64]));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, _, v| n += v.len());
        n
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.visit(&mut |_, _, v| out.extend_from_slice(v));
        out
    }

    /// Overwrites every block from a flat vector produced by [`ParamBlocks::flatten`].
    fn assign_flat(&mut self, flat: &[f64]) {
        let mut at = 0;
        self.visit_mut(&mut |_, v| {
            v.copy_from_slice(&flat[at..at + v.len()]);
            at += v.len();
        });
        assert_eq!(at, flat.len(), "flat vector length does not match parameters");
    }

    fn fill(&mut self, value: f64) {
        self.visit_mut(&mut |_, v| v.iter_mut().for_each(|x| *x = value));
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit(&mut |_, _, v| ok &= v.iter().all(|x| x.is_finite()));
        ok
    }
}

impl ParamBlocks for Vec<f64> {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        f("values", &[self.len()], self);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        f("values", self);
    }
}

/// Agreement between an analytic gradient and central finite differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// Largest `|a - n| / max(|a|, |n|, 1e-8)` over all parameters.
    pub max_component: f64,
    /// `|a - n|_2 / max(|a|_2, |n|_2, 1e-300)` over the whole parameter vector.
    pub norm_wise: f64,
}

/// Largest component-wise relative gap between the analytic gradient of `f`
/// and central finite differences of step `fd_step`.
///
/// `f` returns the loss and its reverse-mode gradient.
pub fn grad_check<P, F>(f: F, params: &P, fd_step: f64) -> f64
where
    P: ParamBlocks + Clone,
    F: FnMut(&P) -> (f64, P),
{
    grad_check_report(f, params, fd_step).max_component
}

pub fn grad_check_report<P, F>(mut f: F, params: &P, fd_step: f64) -> GradCheck
where
    P: ParamBlocks + Clone,
    F: FnMut(&P) -> (f64, P),
{
    let (_, grad) = f(params);
    let analytic = grad.flatten();
    let base = params.flatten();
    let mut probe = params.clone();
    let mut flat = base.clone();
    let mut worst = 0.0f64;
    let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
    for i in 0..base.len() {
        flat[i] = base[i] + fd_step;
        probe.assign_flat(&flat);
        let up = f(&probe).0;
        flat[i] = base[i] - fd_step;
        probe.assign_flat(&flat);
        let down = f(&probe).0;
        flat[i] = base[i];
        let numeric = (up - down) / (2.0 * fd_step);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
        diff2 += (analytic[i] - numeric).powi(2);
        a2 += analytic[i] * analytic[i];
        n2 += numeric * numeric;
    }
    GradCheck {
        max_component: worst,
        norm_wise: diff2.sqrt() / a2.sqrt().max(n2.sqrt()).max(1e-300),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_matches() {
        let f = |w: &Vec<f64>| {
            let loss = w.iter().map(|x| x * x).sum();
            (loss, w.iter().map(|x| 2.0 * x).collect::<Vec<_>>())
        };
        let (_, g) = f(&vec![1.0, 2.0]);
        assert_eq!(g, vec![2.0, 4.0]);
        assert!(grad_check(f, &vec![1.0, 2.0], 1e-6) <= 1e-8);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let f = |w: &Vec<f64>| (3.0, vec![0.0; w.len()]);
        assert_eq!(grad_check(f, &vec![0.5, -1.0, 2.0], 1e-6), 0.0);
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let f = |w: &Vec<f64>| (w[0] * w[0], vec![w[0]]);
        assert!(grad_check(f, &vec![1.0], 1e-6) > 0.4);
    }

    #[test]
    fn flatten_roundtrip() {
        let mut v = vec![1.0, 2.0, 3.0];
        v.assign_flat(&[4.0, 5.0, 6.0]);
        assert_eq!(v.flatten(), vec![4.0, 5.0, 6.0]);
        assert_eq!(v.param_count(), 3);
    }
}
