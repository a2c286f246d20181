//! Small convolutional networks with manual backpropagation, plus the
//! optimizers used to train them.

mod optim;

pub use optim::{Adam, Optimizer, OptimizerKind, Sgd};

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{conv2d, conv2d_backward, conv2d_backward_input, relu, Conv2d, Tensor};
use crate::weights::WeightTensor;

/// A chain of same-padded convolutions with ReLU between layers and a
/// linear final layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvNet {
    pub layers: Vec<Conv2d>,
}

/// Activations saved for the backward pass: the input to every layer.
#[derive(Clone, Debug)]
pub struct NetCache {
    inputs: Vec<Tensor>,
}

/// `(kernel, out_channels)` for each layer.
pub type LayerSpec = [(usize, usize)];

impl ConvNet {
    /// He-initialised network. With `zero_last` the final layer starts at
    /// zero so a residual net begins as its base mapping.
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        spec: &LayerSpec,
        zero_last: bool,
        rng: &mut R,
    ) -> Self {
        let mut layers = Vec::with_capacity(spec.len());
        let mut cin = in_channels;
        for (i, &(k, cout)) in spec.iter().enumerate() {
            let layer = if zero_last && i + 1 == spec.len() {
                Conv2d::zeros(k, cin, cout)
            } else {
                Conv2d::he_init(k, cin, cout, rng)
            };
            layers.push(layer);
            cin = cout;
        }
        Self { layers }
    }

    pub fn in_channels(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_channels)
    }

    pub fn out_channels(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_channels)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Conv2d::param_count).sum()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = conv2d(&h, layer)?;
            if i + 1 < self.layers.len() {
                h = relu(&h);
            }
        }
        Ok(h)
    }

    pub fn forward_cached(&self, x: &Tensor) -> Result<(Tensor, NetCache)> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let out = conv2d(&h, layer)?;
            inputs.push(h);
            h = if i + 1 < self.layers.len() { relu(&out) } else { out };
        }
        Ok((h, NetCache { inputs }))
    }

    /// Backpropagates `grad_out`. Returns the input gradient and, when
    /// requested, the flattened parameter gradient in [`Self::params`] order.
    pub fn backward(
        &self,
        cache: &NetCache,
        grad_out: &Tensor,
        want_params: bool,
    ) -> Result<(Tensor, Option<Vec<f32>>)> {
        let n = self.layers.len();
        let mut per_layer: Vec<(Vec<f32>, Vec<f32>)> = Vec::new();
        let mut g = grad_out.clone();
        for i in (0..n).rev() {
            let layer = &self.layers[i];
            let input = &cache.inputs[i];
            if want_params {
                let grads = conv2d_backward(input, layer, &g)?;
                per_layer.push((grads.weight, grads.bias));
                g = grads.input;
            } else {
                g = conv2d_backward_input(input, layer, &g)?;
            }
            // the layer input is a ReLU output (except for the first layer),
            // so it is positive exactly where the ReLU was active
            if i > 0 {
                for (gv, &a) in g.data_mut().iter_mut().zip(input.data()) {
                    if a <= 0.0 {
                        *gv = 0.0;
                    }
                }
            }
        }
        let flat = want_params.then(|| {
            let mut flat = Vec::with_capacity(self.param_count());
            for (w, b) in per_layer.into_iter().rev() {
                flat.extend(w);
                flat.extend(b);
            }
            flat
        });
        Ok((g, flat))
    }

    /// Flattened parameters: weights then bias, layer by layer.
    pub fn params(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weight);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f32]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::shape(
                "ConvNet::set_params",
                format!("{} values for {} parameters", flat.len(), self.param_count()),
            ));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weight.len();
            l.weight.copy_from_slice(&flat[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    /// Two records per layer: weight `[k, k, cin, cout]` and bias `[cout]`.
    pub fn to_weight_tensors(&self) -> Vec<WeightTensor> {
        self.layers
            .iter()
            .flat_map(|l| {
                let k = l.kernel as u32;
                [
                    WeightTensor::new(
                        vec![k, k, l.in_channels as u32, l.out_channels as u32],
                        l.weight.clone(),
                    ),
                    WeightTensor::new(vec![l.out_channels as u32], l.bias.clone()),
                ]
            })
            .collect()
    }

    pub fn from_weight_tensors(tensors: &[WeightTensor]) -> Result<Self> {
        if tensors.is_empty() || tensors.len() % 2 != 0 {
            return Err(Error::Parse {
                what: "network weights".into(),
                offset: 0,
                detail: format!("expected weight/bias pairs, got {} tensors", tensors.len()),
            });
        }
        let mut layers = Vec::new();
        for pair in tensors.chunks_exact(2) {
            let (w, b) = (&pair[0], &pair[1]);
            let bad = |detail: String| Error::Parse { what: "network weights".into(), offset: 0, detail };
            let [k, k2, cin, cout] = w.dims[..] else {
                return Err(bad(format!("weight rank {}", w.dims.len())));
            };
            if k != k2 || k % 2 == 0 || b.dims != [cout] {
                return Err(bad(format!("inconsistent layer dims {:?} / {:?}", w.dims, b.dims)));
            }
            if let Some(prev) = layers.last().map(|l: &Conv2d| l.out_channels) {
                if prev != cin as usize {
                    return Err(bad(format!("layer expects {cin} inputs after {prev} outputs")));
                }
            }
            let mut conv = Conv2d::zeros(k as usize, cin as usize, cout as usize);
            conv.weight.copy_from_slice(&w.data);
            conv.bias.copy_from_slice(&b.data);
            layers.push(conv);
        }
        Ok(Self { layers })
    }
}

/// Mean squared error and its gradient with respect to `pred`.
pub fn mse_with_grad(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    pred.ensure_same_shape(target, "mse")?;
    let n = pred.len() as f64;
    let loss = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&a, &b)| {
            let d = (a - b) as f64;
            d * d
        })
        .sum::<f64>()
        / n;
    let scale = (2.0 / n) as f32;
    let grad = pred.zip_map(target, |a, b| scale * (a - b))?;
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn reflect(i: isize, n: usize) -> usize {
        crate::tensor::reflect(i, n)
    }

    /// Nested-loop f64 forward pass used as a finite-difference oracle.
    fn forward_f64(net: &ConvNet, x: &[f64], h: usize, w: usize) -> Vec<f64> {
        let mut cur = x.to_vec();
        for (li, l) in net.layers.iter().enumerate() {
            let (k, cin, cout) = (l.kernel, l.in_channels, l.out_channels);
            let r = (k / 2) as isize;
            let mut out = vec![0.0f64; h * w * cout];
            for y in 0..h {
                for xx in 0..w {
                    for co in 0..cout {
                        let mut acc = l.bias[co] as f64;
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = reflect(y as isize + ky as isize - r, h);
                                let ix = reflect(xx as isize + kx as isize - r, w);
                                for ci in 0..cin {
                                    acc += cur[(iy * w + ix) * cin + ci]
                                        * l.weight[l.weight_index(ky, kx, ci, co)] as f64;
                                }
                            }
                        }
                        out[(y * w + xx) * cout + co] =
                            if li + 1 < net.layers.len() { acc.max(0.0) } else { acc };
                    }
                }
            }
            cur = out;
        }
        cur
    }

    #[test]
    fn input_gradient_matches_f64_differences() {
        let mut rng = seeded(3);
        let net = ConvNet::new(2, &[(3, 4), (3, 3), (1, 2)], false, &mut rng);
        let x = Tensor::from_fn(6, 6, 2, |y, xx, c| ((y * 5 + xx * 3 + c * 7) % 13) as f32 / 13.0);
        let proj: Vec<f64> = (0..72).map(|i| 0.5 + ((i * 37) % 17) as f64 / 17.0).collect();
        let (_, cache) = net.forward_cached(&x).unwrap();
        let g = Tensor::from_vec(6, 6, 2, proj.iter().map(|&v| v as f32).collect()).unwrap();
        let (dx, _) = net.backward(&cache, &g, false).unwrap();
        let x64: Vec<f64> = x.data().iter().map(|&v| v as f64).collect();
        let obj = |v: &[f64]| -> f64 {
            forward_f64(&net, v, 6, 6).iter().zip(&proj).map(|(a, b)| a * b).sum()
        };
        let h = 1e-6;
        for i in 0..x64.len() {
            let mut p = x64.clone();
            let mut m = x64.clone();
            p[i] += h;
            m[i] -= h;
            let fd = (obj(&p) - obj(&m)) / (2.0 * h);
            let rel = (dx.data()[i] as f64 - fd).abs() / (fd.abs() + 1e-8);
            assert!(rel < 1e-3, "coord {i}: {} vs {fd}", dx.data()[i]);
        }
    }

    #[test]
    fn zero_last_layer_outputs_zero() {
        let mut rng = seeded(1);
        let net = ConvNet::new(3, &[(3, 8), (3, 3)], true, &mut rng);
        let x = Tensor::filled(5, 5, 3, 0.5);
        assert!(net.forward(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn params_roundtrip() {
        let mut rng = seeded(2);
        let net = ConvNet::new(3, &[(3, 4), (1, 3)], false, &mut rng);
        let mut other = ConvNet::new(3, &[(3, 4), (1, 3)], true, &mut rng);
        other.set_params(&net.params()).unwrap();
        assert_eq!(net, other);
        let back = ConvNet::from_weight_tensors(&net.to_weight_tensors()).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn param_gradient_matches_differences() {
        let mut rng = seeded(5);
        let net = ConvNet::new(1, &[(3, 3), (3, 1)], false, &mut rng);
        let x = Tensor::from_fn(5, 5, 1, |y, xx, _| ((y * 3 + xx * 2) % 7) as f32 / 7.0);
        let target = Tensor::filled(5, 5, 1, 0.2);
        let loss = |n: &ConvNet| mse_with_grad(&n.forward(&x).unwrap(), &target).unwrap().0;
        let (y, cache) = net.forward_cached(&x).unwrap();
        let (_, g) = mse_with_grad(&y, &target).unwrap();
        let (_, dp) = net.backward(&cache, &g, true).unwrap();
        let dp = dp.unwrap();
        let p = net.params();
        for i in (0..p.len()).step_by(5) {
            let h = 1e-2f32;
            let mut a = net.clone();
            let mut b = net.clone();
            let mut pa = p.clone();
            let mut pb = p.clone();
            pa[i] += h;
            pb[i] -= h;
            a.set_params(&pa).unwrap();
            b.set_params(&pb).unwrap();
            let fd = (loss(&a) - loss(&b)) / (pa[i] - pb[i]) as f64;
            assert!((fd - dp[i] as f64).abs() < 1e-3 * (1.0 + fd.abs()), "{i}: {fd} vs {}", dp[i]);
        }
    }
}
