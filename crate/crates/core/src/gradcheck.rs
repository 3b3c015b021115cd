//! Central finite-difference verification of analytic gradients.
//!
//! Meant to run in f64 on tie-free inputs (no two compared elements of a
//! min/max/softmax path near a tie), where the subgradient choice cannot
//! flip between the two probe points.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::Result;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Outcome of one gradient check. Failures are reported, not thrown.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub name: String,
    pub max_rel_err: f64,
    /// (input index, flat element index) of the worst element.
    pub worst: (usize, usize),
    pub tolerance: f64,
    pub elements_checked: usize,
    pub passed: bool,
}

impl GradCheckReport {
    fn empty(name: String, tolerance: f64) -> Self {
        GradCheckReport {
            name,
            max_rel_err: 0.0,
            worst: (0, 0),
            tolerance,
            elements_checked: 0,
            passed: true,
        }
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    let diff = (a - n).abs();
    let scale = a.abs().max(n.abs());
    if scale > 1e-6 {
        diff / scale
    } else {
        diff
    }
}

/// Checks analytic gradients of a scalar-valued function against central
/// differences. When `sample` is `Some((k, seed))`, at most `k` random
/// elements per input are probed, which keeps expensive compositions
/// (whole models) tractable.
pub fn check<F>(
    name: &str,
    inputs: &[Tensor<f64>],
    epsilon: f64,
    tolerance: f64,
    sample: Option<(usize, u64)>,
    f: F,
) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    // Analytic gradients.
    let analytic: Vec<Tensor<f64>> = {
        let tape = Tape::new();
        let vars: Vec<Var<'_, f64>> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
        let loss = f(&tape, &vars)?;
        tape.backward(loss)?;
        vars.iter().map(|v| v.grad()).collect()
    };

    let eval = |probe: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_, f64>> = probe.iter().map(|t| tape.leaf(t.clone(), false)).collect();
        Ok(f(&tape, &vars)?.scalar_value())
    };

    let mut report = GradCheckReport::empty(name.into(), tolerance);
    let mut rng = sample.map(|(_, seed)| Rng::new(seed));
    let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
    for (ti, t) in inputs.iter().enumerate() {
        let elems: Vec<usize> = match sample {
            Some((k, _)) if t.numel() > k => {
                let r = rng.as_mut().expect("rng");
                r.choose_distinct(t.numel(), k)
            }
            _ => (0..t.numel()).collect(),
        };
        for ei in elems {
            let x0 = t.data()[ei];
            let h = epsilon * (1.0 + x0.abs());
            probe[ti].data_mut()[ei] = x0 + h;
            let fp = eval(&probe)?;
            probe[ti].data_mut()[ei] = x0 - h;
            let fm = eval(&probe)?;
            probe[ti].data_mut()[ei] = x0;
            let numeric = (fp - fm) / (2.0 * h);
            let e = rel_err(analytic[ti].data()[ei], numeric);
            report.elements_checked += 1;
            if e > report.max_rel_err {
                report.max_rel_err = e;
                report.worst = (ti, ei);
            }
        }
    }
    report.passed = report.max_rel_err <= tolerance;
    Ok(report)
}

/// Random tensor whose entries are pairwise separated by at least 1e-3,
/// so no min/max/softmax comparison sits near a tie under small
/// finite-difference probes. Values are a jittered, shuffled grid with
/// spacing 2e-3, centered on zero.
pub fn tie_free_tensor<T: Scalar>(shape: &[usize], rng: &mut Rng) -> Tensor<T> {
    let numel: usize = shape.iter().product();
    let delta = 2e-3;
    let mut vals: Vec<f64> = (0..numel)
        .map(|i| (i as f64 - numel as f64 / 2.0) * delta)
        .collect();
    rng.shuffle(&mut vals);
    for v in vals.iter_mut() {
        *v += rng.uniform_in(-delta / 4.0, delta / 4.0);
    }
    Tensor::from_f64_slice(shape, &vals).expect("shape")
}
