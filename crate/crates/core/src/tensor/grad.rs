use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Tensor;
use crate::error::{Error, Result};

/// Gradients returned by a differentiable operator's backward pass.
#[derive(Clone, Debug)]
pub struct OpGradient {
    pub input: Tensor,
    pub params: Vec<f32>,
}

/// An operator with a hand-written reverse pass.
///
/// `forward` returns the output together with the state its backward pass
/// needs; `backward` consumes that state, so it can only run after a forward.
pub trait DifferentiableOp {
    type Cache;

    fn name(&self) -> String;

    fn forward(&self, input: &Tensor, params: &[f32]) -> Result<(Tensor, Self::Cache)>;

    fn backward(&self, cache: Self::Cache, grad_out: &Tensor) -> Result<OpGradient>;
}

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

/// Passes `grad` through where `input > 0`.
pub fn relu_backward(input: &Tensor, grad: &Tensor) -> Result<Tensor> {
    input.zip_map(grad, |x, g| if x > 0.0 { g } else { 0.0 })
}

const REL_EPS: f64 = 1e-8;

fn projection(op_out: &Tensor) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6772_6164);
    let (h, w, c) = op_out.shape();
    Tensor::from_fn(h, w, c, |_, _, _| 0.5 + rng.random::<f32>())
}

fn objective<Op: DifferentiableOp + ?Sized>(
    op: &Op,
    input: &Tensor,
    params: &[f32],
    proj: &Tensor,
) -> Result<f64> {
    let (out, _) = op.forward(input, params)?;
    if !out.is_finite() {
        return Err(Error::NonFinite { op: op.name() });
    }
    out.dot(proj)
}

/// Rounds `step` down to a power of two so every stencil point below is
/// exactly representable.
fn stencil_step(step: f32) -> f32 {
    2f32.powi(step.log2().floor() as i32)
}

/// Fourth-order central difference `(-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h`.
///
/// The centre is first snapped to a multiple of `h / 1024` (a shift of at
/// most `h / 2048`) so the four evaluation points sit exactly `h` apart in
/// f32 arithmetic.
fn five_point(h: f32, x: f32, mut f: impl FnMut(f32) -> Result<f64>) -> Result<f64> {
    let q = h / 1024.0;
    let c = (x / q).round() * q;
    let fp2 = f(c + 2.0 * h)?;
    let fp1 = f(c + h)?;
    let fm1 = f(c - h)?;
    let fm2 = f(c - 2.0 * h)?;
    Ok((-fp2 + 8.0 * fp1 - 8.0 * fm1 + fm2) / (12.0 * h as f64))
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (numeric.abs() + REL_EPS)
}

/// Maximum relative error between the analytic gradient of `op` and central
/// finite differences with the given `step`, over every input and parameter
/// coordinate.
///
/// The scalar being differentiated is a fixed positive random projection of
/// the operator output, accumulated in f64. Numeric derivatives use a
/// fourth-order central stencil with `step` rounded down to a power of two.
pub fn check_gradient<Op: DifferentiableOp + ?Sized>(
    op: &Op,
    input: &Tensor,
    params: &[f32],
    step: f32,
) -> Result<f64> {
    check_gradient_sampled(op, input, params, step, usize::MAX, 0)
}

/// Like [`check_gradient`] but checks at most `max_coords` randomly chosen
/// input coordinates and `max_coords` parameter coordinates.
pub fn check_gradient_sampled<Op: DifferentiableOp + ?Sized>(
    op: &Op,
    input: &Tensor,
    params: &[f32],
    step: f32,
    max_coords: usize,
    seed: u64,
) -> Result<f64> {
    if !(step > 0.0) {
        return Err(Error::Config(format!("gradient check step must be > 0, got {step}")));
    }
    let (out, cache) = op.forward(input, params)?;
    if !out.is_finite() {
        return Err(Error::NonFinite { op: op.name() });
    }
    let proj = projection(&out);
    let grads = op.backward(cache, &proj)?;
    if grads.input.shape() != input.shape() || grads.params.len() != params.len() {
        return Err(Error::shape(
            "check_gradient",
            format!("{} returned gradients of the wrong shape", op.name()),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pick = |n: usize| -> Vec<usize> {
        if n <= max_coords {
            (0..n).collect()
        } else {
            let mut v = sample(&mut rng, n, max_coords).into_vec();
            v.sort_unstable();
            v
        }
    };

    let mut worst = 0.0f64;
    let h = stencil_step(step);
    for i in pick(input.len()) {
        let numeric = five_point(h, input.data()[i], |v| {
            let mut x = input.clone();
            x.data_mut()[i] = v;
            objective(op, &x, params, &proj)
        })?;
        worst = worst.max(rel_err(grads.input.data()[i] as f64, numeric));
    }
    for i in pick(params.len()) {
        let numeric = five_point(h, params[i], |v| {
            let mut p = params.to_vec();
            p[i] = v;
            objective(op, input, &p, &proj)
        })?;
        worst = worst.max(rel_err(grads.params[i] as f64, numeric));
    }
    Ok(worst)
}
