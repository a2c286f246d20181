//! Modules that are differentiable in closed form and so run inside the
//! search graph without a proxy.
//!
//! Parameters are normalised to `[0, 1]`; gradients are returned with
//! respect to the normalised values.

use super::demosaic::LinearDemosaic;
use super::{tone, white_balance, ModuleId};
use crate::error::{Error, Result};
use crate::tensor::{DifferentiableOp, OpGradient, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AnalyticOp {
    id: ModuleId,
}

/// State saved by [`AnalyticOp::forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct AnalyticCache {
    input: Tensor,
    actual: Vec<f32>,
}

impl AnalyticOp {
    /// Fails with `UnknownModule` for modules without a closed-form gradient.
    pub fn new(id: ModuleId) -> Result<Self> {
        let desc = id.descriptor();
        if !desc.differentiable || matches!(id, ModuleId::LearnedBayerDenoiser | ModuleId::LearnedDemosaic | ModuleId::LearnedSrgbDenoiser) {
            return Err(Error::Config(format!("{id} has no closed-form gradient")));
        }
        Ok(Self { id })
    }

    pub fn id(&self) -> ModuleId {
        self.id
    }

    fn actual(&self, params: &[f32]) -> Result<Vec<f32>> {
        let desc = self.id.descriptor();
        desc.check_params(params)?;
        Ok(desc.params.iter().zip(params).map(|(s, &v)| s.to_actual(v)).collect())
    }

    /// Forward pass without keeping a cache.
    pub fn apply(&self, input: &Tensor, params: &[f32]) -> Result<Tensor> {
        let actual = self.actual(params)?;
        self.eval(input, &actual)
    }

    fn eval(&self, x: &Tensor, a: &[f32]) -> Result<Tensor> {
        let expect_ch = |n: usize| -> Result<()> {
            if x.channels() != n {
                return Err(Error::shape(
                    self.id.as_str(),
                    format!("expected {n} channels, got {}", x.channels()),
                ));
            }
            Ok(())
        };
        Ok(match self.id {
            ModuleId::Nearest => LinearDemosaic::nearest(x.height(), x.width()).forward(x)?,
            ModuleId::Bilinear => LinearDemosaic::bilinear(x.height(), x.width()).forward(x)?,
            ModuleId::Gamma => tone::gamma(x, a[0]),
            ModuleId::Manual => tone::manual(x, a),
            ModuleId::Grayworld => {
                expect_ch(3)?;
                white_balance::grayworld(x)
            }
            ModuleId::Linear => {
                expect_ch(3)?;
                white_balance::linear(x, a)
            }
            ModuleId::Quadratic => {
                expect_ch(3)?;
                white_balance::quadratic(x, a)
            }
            ModuleId::Skip => x.clone(),
            _ => unreachable!("rejected in AnalyticOp::new"),
        })
    }
}

impl DifferentiableOp for AnalyticOp {
    type Cache = AnalyticCache;

    fn name(&self) -> String {
        self.id.as_str().to_string()
    }

    fn forward(&self, input: &Tensor, params: &[f32]) -> Result<(Tensor, AnalyticCache)> {
        let actual = self.actual(params)?;
        let out = self.eval(input, &actual)?;
        Ok((out, AnalyticCache { input: input.clone(), actual }))
    }

    fn backward(&self, cache: AnalyticCache, grad_out: &Tensor) -> Result<OpGradient> {
        let AnalyticCache { input: x, actual: a } = cache;
        let (dx, dactual) = match self.id {
            ModuleId::Nearest => {
                (LinearDemosaic::nearest(x.height(), x.width()).backward(grad_out)?, vec![])
            }
            ModuleId::Bilinear => {
                (LinearDemosaic::bilinear(x.height(), x.width()).backward(grad_out)?, vec![])
            }
            ModuleId::Gamma => {
                let mut dg = 0.0f64;
                let mut dx = grad_out.clone();
                for (g, &v) in dx.data_mut().iter_mut().zip(x.data()) {
                    let (ddx, ddg) = tone::gamma_grad(v, a[0]);
                    dg += (*g * ddg) as f64;
                    *g *= ddx;
                }
                (dx, vec![dg as f32])
            }
            ModuleId::Manual => manual_backward(&x, &a, grad_out),
            ModuleId::Grayworld => (white_balance::grayworld_backward(&x, grad_out), vec![]),
            ModuleId::Linear => white_balance::linear_backward(&x, &a, grad_out),
            ModuleId::Quadratic => white_balance::quadratic_backward(&x, &a, grad_out),
            ModuleId::Skip => (grad_out.clone(), vec![]),
            _ => unreachable!("rejected in AnalyticOp::new"),
        };
        let params = self
            .id
            .descriptor()
            .params
            .iter()
            .zip(dactual)
            .map(|(s, d)| d * s.span())
            .collect();
        Ok(OpGradient { input: dx, params })
    }
}

fn manual_backward(x: &Tensor, knots: &[f32], grad_out: &Tensor) -> (Tensor, Vec<f32>) {
    let (sorted, order) = tone::sorted_knots(knots);
    let ys = [0.0, sorted[0], sorted[1], sorted[2], 1.0];
    let mut dys = [0.0f64; 5];
    let mut dx = grad_out.clone();
    for (g, &v) in dx.data_mut().iter_mut().zip(x.data()) {
        let (_, seg, t) = tone::manual_eval(v, &ys);
        dys[seg] += (*g * (1.0 - t)) as f64;
        dys[seg + 1] += (*g * t) as f64;
        *g = if v > 0.0 && v < 1.0 { *g * 4.0 * (ys[seg + 1] - ys[seg]) } else { 0.0 };
    }
    let mut dknots = vec![0.0f32; 3];
    for (sorted_idx, &param_idx) in order.iter().enumerate() {
        dknots[param_idx] = dys[sorted_idx + 1] as f32;
    }
    (dx, dknots)
}
