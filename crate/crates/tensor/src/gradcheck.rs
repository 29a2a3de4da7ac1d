//! Central finite-difference verification of analytic gradients.
//!
//! The numerical side only ever calls forward ops, so it shares no code with
//! the backward pass it checks.

use crate::{Element, Graph, Result, Tensor, Var};

#[derive(Clone, Debug)]
pub struct GradReport {
    pub analytic: Vec<Vec<f64>>,
    pub numeric: Vec<Vec<f64>>,
}

impl GradReport {
    /// Norm-wise relative error `|a - n| / max(|a|, |n|)` per input.
    pub fn relative_errors(&self) -> Vec<f64> {
        self.analytic.iter().zip(&self.numeric).map(|(a, n)| relative_error(a, n)).collect()
    }

    /// Norm-wise relative error over all inputs' gradients concatenated.
    pub fn total_relative_error(&self) -> f64 {
        relative_error(&self.analytic.concat(), &self.numeric.concat())
    }
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Compare backward against central differences with step `h` for every
/// element of every input. `f` must build a scalar from the given leaves and
/// be deterministic (reseed any RNG inside it).
pub fn check<T, F>(inputs: &[Tensor<T>], h: f64, f: F) -> Result<GradReport>
where
    T: Element,
    F: Fn(&mut Graph<'_, T>, &[Var]) -> Result<Var>,
{
    let mut graph = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| graph.variable(t.clone())).collect();
    let loss = f(&mut graph, &vars)?;
    graph.backward(loss)?;
    let analytic = vars.iter().map(|&v| graph.grad_or_zeros(v).into_iter().map(T::as_f64).collect()).collect();

    let eval = |values: &[Tensor<T>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item().as_f64())
    };
    let mut numeric = Vec::with_capacity(inputs.len());
    let mut work = inputs.to_vec();
    for i in 0..inputs.len() {
        let mut grads = Vec::with_capacity(inputs[i].numel());
        for j in 0..inputs[i].numel() {
            let orig = inputs[i].data()[j];
            // the step actually taken after rounding to T
            let up = T::from_f64(orig.as_f64() + h);
            let down = T::from_f64(orig.as_f64() - h);
            work[i].data_mut()[j] = up;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = down;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            grads.push((plus - minus) / (up.as_f64() - down.as_f64()));
        }
        numeric.push(grads);
    }
    Ok(GradReport { analytic, numeric })
}

/// Result of checking one primitive on one random configuration.
#[derive(Clone, Debug)]
pub struct CaseResult {
    pub op: &'static str,
    pub seed: u64,
    pub shapes: Vec<Vec<usize>>,
    pub rel_err: f64,
}

/// Names of every primitive covered by [`primitive_suite`].
pub const PRIMITIVES: &[&str] = &[
    "conv2d",
    "conv_transpose2d",
    "max_pool2d",
    "adaptive_avg_pool2d",
    "relu",
    "sigmoid",
    "dropout",
    "linear",
    "concat_channels",
    "flatten",
    "log_softmax",
    "mse",
    "cross_entropy",
    "add",
];

/// Reduce any tensor to a scalar through a fixed random linear functional,
/// keeping gradient entries O(1) so `f32` differences stay well conditioned.
fn project<T: Element>(g: &mut Graph<'_, T>, x: Var, seed: u64) -> Result<Var> {
    let n = g.value(x).numel();
    let flat = g.reshape(x, &[1, n])?;
    let weights = random_tensor::<T>(&[1, n], seed ^ 0x9e37_79b9, -1.0, 1.0);
    let w = g.constant(weights);
    let b = g.constant(Tensor::zeros([1]));
    g.linear(flat, w, b)
}

fn random_tensor<T: Element>(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<T> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64(rng.gen_range(lo..hi))).collect();
    Tensor::new(shape, data).expect("shape matches")
}

/// Values bounded away from zero, for ops with a kink at the origin.
fn signed_away_from_zero<T: Element>(shape: &[usize], seed: u64) -> Tensor<T> {
    let mut t = random_tensor::<T>(shape, seed, 0.1, 1.0);
    let signs = random_tensor::<T>(shape, seed ^ 0x5555, -1.0, 1.0);
    for (v, s) in t.data_mut().iter_mut().zip(signs.data()) {
        if *s < T::zero() {
            *v = -*v;
        }
    }
    t
}

/// Distinct values spaced far beyond the difference step, so no maximum flips.
fn distinct_values<T: Element>(shape: &[usize], seed: u64) -> Tensor<T> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let n: usize = shape.iter().product();
    let mut ranks: Vec<usize> = (0..n).collect();
    ranks.shuffle(&mut rand::rngs::StdRng::seed_from_u64(seed));
    let data = ranks.into_iter().map(|r| T::from_f64(r as f64 * 0.05 - 0.4)).collect();
    Tensor::new(shape, data).expect("shape matches")
}

/// Finite-difference check of `op` (one of [`PRIMITIVES`]) on a random
/// configuration with all spatial extents at most 4x4.
pub fn check_primitive<T: Element>(op: &'static str, seed: u64, step: f64) -> Result<CaseResult> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed.wrapping_mul(0x2545_f491_4f6c_dd1d) ^ op.len() as u64);
    let mut pick = |lo: usize, hi: usize| rng.gen_range(lo..=hi);
    let s = seed.wrapping_mul(1000);
    let inputs: Vec<Tensor<T>>;
    let report = match op {
        "conv2d" => {
            let (n, ci, co) = (pick(1, 2), pick(1, 3), pick(1, 3));
            let (h, w) = (pick(2, 4), pick(2, 4));
            let k = pick(1, h.min(w).min(3));
            let (stride, pad) = (pick(1, 2), pick(0, 1));
            inputs = vec![
                random_tensor(&[n, ci, h, w], s + 1, -1.0, 1.0),
                random_tensor(&[co, ci, k, k], s + 2, -1.0, 1.0),
                random_tensor(&[co], s + 3, -1.0, 1.0),
            ];
            check(&inputs, step, |g, v| {
                let y = g.conv2d(v[0], v[1], v[2], stride, pad)?;
                project(g, y, seed)
            })?
        }
        "conv_transpose2d" => {
            let (n, ci, co) = (pick(1, 2), pick(1, 3), pick(1, 3));
            let (h, w) = (pick(1, 3), pick(1, 3));
            let (k, stride) = (pick(1, 3), pick(1, 2));
            inputs = vec![
                random_tensor(&[n, ci, h, w], s + 1, -1.0, 1.0),
                random_tensor(&[ci, co, k, k], s + 2, -1.0, 1.0),
                random_tensor(&[co], s + 3, -1.0, 1.0),
            ];
            check(&inputs, step, |g, v| {
                let y = g.conv_transpose2d(v[0], v[1], v[2], stride)?;
                project(g, y, seed)
            })?
        }
        "max_pool2d" => {
            let (n, c) = (pick(1, 2), pick(1, 2));
            let (h, w) = (pick(2, 4), pick(2, 4));
            let k = pick(1, h.min(w).min(3));
            let stride = pick(1, 2);
            inputs = vec![distinct_values(&[n, c, h, w], s + 1)];
            check(&inputs, step, |g, v| {
                let y = g.max_pool2d(v[0], k, stride)?;
                project(g, y, seed)
            })?
        }
        "adaptive_avg_pool2d" => {
            let (n, c) = (pick(1, 2), pick(1, 2));
            let (h, w, oh, ow) = (pick(1, 4), pick(1, 4), pick(1, 3), pick(1, 3));
            inputs = vec![random_tensor(&[n, c, h, w], s + 1, -1.0, 1.0)];
            check(&inputs, step, |g, v| {
                let y = g.adaptive_avg_pool2d(v[0], oh, ow)?;
                project(g, y, seed)
            })?
        }
        "relu" | "sigmoid" | "flatten" => {
            let shape = [pick(1, 2), pick(1, 2), pick(1, 4), pick(1, 4)];
            inputs = vec![signed_away_from_zero(&shape, s + 1)];
            check(&inputs, step, |g, v| {
                let y = match op {
                    "relu" => g.relu(v[0]),
                    "sigmoid" => g.sigmoid(v[0]),
                    _ => g.flatten(v[0])?,
                };
                project(g, y, seed)
            })?
        }
        "dropout" => {
            let shape = [pick(1, 2), pick(1, 3), pick(1, 4), pick(1, 4)];
            inputs = vec![random_tensor(&shape, s + 1, -1.0, 1.0)];
            check(&inputs, step, |g, v| {
                let mut mask_rng = rand::rngs::StdRng::seed_from_u64(seed);
                let y = g.dropout(v[0], 0.5, true, &mut mask_rng)?;
                project(g, y, seed)
            })?
        }
        "linear" => {
            let (n, f, o) = (pick(1, 4), pick(1, 4), pick(1, 4));
            inputs = vec![
                random_tensor(&[n, f], s + 1, -1.0, 1.0),
                random_tensor(&[o, f], s + 2, -1.0, 1.0),
                random_tensor(&[o], s + 3, -1.0, 1.0),
            ];
            check(&inputs, step, |g, v| {
                let y = g.linear(v[0], v[1], v[2])?;
                project(g, y, seed)
            })?
        }
        "concat_channels" => {
            let (n, h, w) = (pick(1, 2), pick(1, 4), pick(1, 4));
            inputs = vec![
                random_tensor(&[n, pick(1, 3), h, w], s + 1, -1.0, 1.0),
                random_tensor(&[n, pick(1, 3), h, w], s + 2, -1.0, 1.0),
            ];
            check(&inputs, step, |g, v| {
                let y = g.concat_channels(v[0], v[1])?;
                project(g, y, seed)
            })?
        }
        "log_softmax" => {
            let (n, c) = (pick(1, 4), pick(2, 4));
            inputs = vec![random_tensor(&[n, c], s + 1, -2.0, 2.0)];
            check(&inputs, step, |g, v| {
                let y = g.log_softmax(v[0])?;
                project(g, y, seed)
            })?
        }
        "mse" => {
            let shape = [pick(1, 2), pick(1, 2), pick(1, 4), pick(1, 4)];
            inputs = vec![random_tensor(&shape, s + 1, -1.0, 1.0), random_tensor(&shape, s + 2, -1.0, 1.0)];
            check(&inputs, step, |g, v| g.mse(v[0], v[1]))?
        }
        "cross_entropy" => {
            let (n, c) = (pick(1, 4), pick(2, 4));
            let targets: Vec<usize> = (0..n).map(|_| pick(0, c - 1)).collect();
            inputs = vec![random_tensor(&[n, c], s + 1, -2.0, 2.0)];
            check(&inputs, step, |g, v| g.cross_entropy(v[0], &targets))?
        }
        "add" => {
            let shape = [pick(1, 2), pick(1, 3), pick(1, 4), pick(1, 4)];
            inputs = vec![random_tensor(&shape, s + 1, -1.0, 1.0), random_tensor(&shape, s + 2, -1.0, 1.0)];
            check(&inputs, step, |g, v| {
                let y = g.add(v[0], v[1])?;
                project(g, y, seed)
            })?
        }
        other => {
            return Err(crate::TensorError::InvalidArgument(format!("unknown primitive {other}")));
        }
    };
    Ok(CaseResult {
        op,
        seed,
        shapes: inputs.iter().map(|t| t.shape().to_vec()).collect(),
        rel_err: report.total_relative_error(),
    })
}
