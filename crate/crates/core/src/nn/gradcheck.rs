//! Central finite-difference gradient checking for `f64` networks.

use super::layers::Module;

/// Outcome of comparing analytic and numeric gradients.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub checked: usize,
}

/// Relative error with an absolute floor so that near-zero gradients do not
/// blow up the ratio.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Compare the accumulated `.grad` of every parameter of `module` (up to
/// `per_param` entries each, evenly strided) against central differences of
/// `loss`. The caller must have run one forward/backward pass already.
pub fn check_params<M: Module<f64>>(
    module: &mut M,
    loss: &mut dyn FnMut(&M) -> f64,
    per_param: usize,
    h: f64,
) -> GradCheck {
    let mut entries: Vec<(String, usize, f64)> = Vec::new();
    module.visit("", &mut |name, p| {
        let n = p.value.len();
        let stride = (n / per_param.max(1)).max(1);
        for i in (0..n).step_by(stride).take(per_param) {
            entries.push((name.to_string(), i, p.grad.as_slice().unwrap()[i]));
        }
    });
    let mut max_rel_err: f64 = 0.0;
    for (name, i, analytic) in &entries {
        let orig = get(module, name, *i);
        set(module, name, *i, orig + h);
        let lp = loss(module);
        set(module, name, *i, orig - h);
        let lm = loss(module);
        set(module, name, *i, orig);
        let numeric = (lp - lm) / (2.0 * h);
        max_rel_err = max_rel_err.max(rel_err(*analytic, numeric));
    }
    GradCheck {
        max_rel_err,
        checked: entries.len(),
    }
}

fn get<M: Module<f64>>(m: &M, name: &str, i: usize) -> f64 {
    let mut out = f64::NAN;
    m.visit("", &mut |n, p| {
        if n == name {
            out = p.value.as_slice().unwrap()[i];
        }
    });
    out
}

fn set<M: Module<f64>>(m: &mut M, name: &str, i: usize, v: f64) {
    m.visit_mut("", &mut |n, p| {
        if n == name {
            p.value.as_slice_mut().unwrap()[i] = v;
        }
    });
}
