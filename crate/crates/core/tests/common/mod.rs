//! Test-only oracles shared by the integration suites.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seismogpt::{Graph, Tensor, Var};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Agreement rule: relative 1e-4 with a 1e-6 absolute floor.
pub fn grad_close(analytic: f64, numeric: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= f64::max(1e-4 * analytic.abs().max(numeric.abs()), 1e-6)
}

#[derive(Debug, Default)]
pub struct GradReport {
    pub checked: usize,
    pub worst_rel: f64,
    pub failures: Vec<String>,
}

impl GradReport {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Compares reverse-mode gradients of `Σ probe ⊙ f(inputs)` with central
/// differences (`h = 1e-5`) over every element of every input.
pub fn check_gradients<F>(inputs: &[Tensor], seed: u64, f: F) -> GradReport
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let h = 1e-5;
    let mut probe_rng = rng(seed ^ 0x9e37_79b9);
    let probe = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars);
        random_tensor(g.shape(out), &mut probe_rng)
    };
    let objective = |g: &mut Graph, vars: &[Var]| -> Var {
        let out = f(g, vars);
        let w = g.constant(probe.clone());
        let prod = g.mul(out, w).expect("probe shape");
        g.sum(prod)
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = objective(&mut g, &vars);
    g.backward(loss).unwrap();
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| g.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; g.value(v).numel()]))
        .collect();

    let eval = |perturbed: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| g.constant(t.clone())).collect();
        let l = objective(&mut g, &vars);
        g.value(l).data()[0]
    };

    let mut report = GradReport::default();
    let mut work = inputs.to_vec();
    for (ti, t) in inputs.iter().enumerate() {
        for k in 0..t.numel() {
            let orig = t.data()[k];
            work[ti].data_mut()[k] = orig + h;
            let up = eval(&work);
            work[ti].data_mut()[k] = orig - h;
            let down = eval(&work);
            work[ti].data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[ti][k];
            report.checked += 1;
            let scale = a.abs().max(numeric.abs());
            if scale > 0.0 {
                report.worst_rel = report.worst_rel.max((a - numeric).abs() / scale);
            }
            if !grad_close(a, numeric) {
                report
                    .failures
                    .push(format!("input {ti}[{k}]: analytic {a:.3e} vs numeric {numeric:.3e}"));
            }
        }
    }
    report
}

/// Direct triple-loop product of `[n, k] x [k, m]` row-major buffers.
pub fn naive_matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            let mut acc = 0.0;
            for t in 0..k {
                acc += a[i * k + t] * b[t * m + j];
            }
            out[i * m + j] = acc;
        }
    }
    out
}
