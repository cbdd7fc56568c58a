use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::layers::{Architecture, Init, LayerSpec};
use super::ops;
use super::tensor::Tensor;
use super::Scalar;
use crate::error::{Error, Result};

/// Which representation a denoiser was trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Domain {
    /// x-y slices of a volume.
    Image,
    /// s-z planes of a sinogram, one per view.
    Sinogram,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are updated.
    Train,
    /// Running statistics; no side effects.
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams<T> {
    None,
    Conv { weight: Vec<T>, bias: Vec<T> },
    Norm { gamma: Vec<T>, beta: Vec<T>, running_mean: Vec<T>, running_var: Vec<T> },
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerGrads<T> {
    None,
    Conv { weight: Vec<T>, bias: Vec<T> },
    Norm { gamma: Vec<T>, beta: Vec<T> },
}

/// Parameter gradients, one entry per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<LayerGrads<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// Trainable gradient blocks in the order of [`Model::trainable_mut`].
    pub fn blocks(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::new();
        for g in &self.layers {
            match g {
                LayerGrads::None => {}
                LayerGrads::Conv { weight, bias } => {
                    out.push(weight);
                    out.push(bias);
                }
                LayerGrads::Norm { gamma, beta } => {
                    out.push(gamma);
                    out.push(beta);
                }
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.blocks()
            .iter()
            .flat_map(|b| b.iter())
            .map(|v| v.abs().to_f64().unwrap_or(f64::NAN))
            .fold(0.0, f64::max)
    }
}

/// Everything a train-mode forward pass keeps for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    input: Tensor<T>,
    outputs: Vec<Tensor<T>>,
    /// Batch mean and inverse standard deviation of each batch-norm layer.
    moments: Vec<Option<(Vec<T>, Vec<T>)>>,
}

impl<T: Scalar> Trace<T> {
    pub fn output(&self) -> &Tensor<T> {
        self.outputs.last().unwrap_or(&self.input)
    }
}

/// A layer graph with its weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub architecture: Architecture,
    pub domain: Domain,
    /// Inputs are multiplied by this factor before the network and outputs
    /// divided by it afterwards, keeping activations near unit scale.
    pub data_scale: f64,
    pub params: Vec<LayerParams<T>>,
}

impl<T: Scalar> Model<T> {
    pub fn new(architecture: Architecture, domain: Domain, seed: u64) -> Result<Self> {
        architecture.validate()?;
        let channels = architecture.channels();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(architecture.layers.len());
        for (i, layer) in architecture.layers.iter().enumerate() {
            let cin = if i == 0 { architecture.in_channels } else { channels[i - 1] };
            params.push(match *layer {
                LayerSpec::Conv3x3 { out_channels, .. } | LayerSpec::Conv1x1 { out_channels, .. } => {
                    let k = if matches!(layer, LayerSpec::Conv3x3 { .. }) { 9 } else { 1 };
                    let fan_in = cin * k;
                    let std = (2.0 / fan_in as f64).sqrt();
                    let weight = (0..out_channels * fan_in)
                        .map(|_| match architecture.init {
                            Init::He => {
                                let z: f64 = StandardNormal.sample(&mut rng);
                                T::of(std * z)
                            }
                            Init::Zero => T::zero(),
                        })
                        .collect();
                    LayerParams::Conv {
                        weight,
                        bias: vec![T::zero(); out_channels],
                    }
                }
                LayerSpec::BatchNorm { channels } => LayerParams::Norm {
                    gamma: vec![T::one(); channels],
                    beta: vec![T::zero(); channels],
                    running_mean: vec![T::zero(); channels],
                    running_var: vec![T::one(); channels],
                },
                _ => LayerParams::None,
            });
        }
        Ok(Self {
            architecture,
            domain,
            data_scale: 1.0,
            params,
        })
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        let c = |v: &Vec<T>| v.iter().map(|x| U::of(x.to_f64().unwrap_or(f64::NAN))).collect::<Vec<U>>();
        Model {
            architecture: self.architecture.clone(),
            domain: self.domain,
            data_scale: self.data_scale,
            params: self
                .params
                .iter()
                .map(|p| match p {
                    LayerParams::None => LayerParams::None,
                    LayerParams::Conv { weight, bias } => LayerParams::Conv {
                        weight: c(weight),
                        bias: c(bias),
                    },
                    LayerParams::Norm {
                        gamma,
                        beta,
                        running_mean,
                        running_var,
                    } => LayerParams::Norm {
                        gamma: c(gamma),
                        beta: c(beta),
                        running_mean: c(running_mean),
                        running_var: c(running_var),
                    },
                })
                .collect(),
        }
    }

    /// Trainable parameter blocks: conv weight and bias, batch-norm scale
    /// and shift, in layer order.
    pub fn trainable_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut out = Vec::new();
        for p in &mut self.params {
            match p {
                LayerParams::None => {}
                LayerParams::Conv { weight, bias } => {
                    out.push(weight);
                    out.push(bias);
                }
                LayerParams::Norm { gamma, beta, .. } => {
                    out.push(gamma);
                    out.push(beta);
                }
            }
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.params
            .iter()
            .map(|p| match p {
                LayerParams::None => 0,
                LayerParams::Conv { weight, bias } => weight.len() + bias.len(),
                LayerParams::Norm { gamma, .. } => 2 * gamma.len(),
            })
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| match p {
            LayerParams::None => true,
            LayerParams::Conv { weight, bias } => weight.iter().chain(bias).all(|v| v.is_finite()),
            LayerParams::Norm {
                gamma,
                beta,
                running_mean,
                running_var,
            } => gamma.iter().chain(beta).chain(running_mean).chain(running_var).all(|v| v.is_finite()),
        })
    }

    pub fn check_input(&self, shape: [usize; 4]) -> Result<()> {
        let [_, c, h, w] = shape;
        if c != self.architecture.in_channels {
            return Err(Error::Shape(format!(
                "network expects {} channels, got {c}",
                self.architecture.in_channels
            )));
        }
        let m = 1usize << self.architecture.depth();
        if h % m != 0 || w % m != 0 || h == 0 || w == 0 {
            return Err(Error::Shape(format!(
                "spatial size {h}x{w} must be a positive multiple of 2^depth = {m}"
            )));
        }
        Ok(())
    }

    /// Eval-mode forward pass in network units; no side effects.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x.shape())?;
        let layers = &self.architecture.layers;
        let mut keep = vec![false; layers.len()];
        for l in layers {
            if let LayerSpec::Concat { skip } = l {
                keep[*skip] = true;
            }
        }
        let mut saved: Vec<Option<Tensor<T>>> = vec![None; layers.len()];
        let mut current = x.clone();
        for i in 0..layers.len() {
            let skip = match layers[i] {
                LayerSpec::Concat { skip } => saved[skip].as_ref(),
                _ => None,
            };
            let (out, _) = self.layer_forward(i, &current, skip, None)?;
            if keep[i] {
                saved[i] = Some(out.clone());
            }
            current = out;
        }
        Ok(current)
    }

    /// Forward pass in the given mode. Train mode updates batch-norm running
    /// statistics.
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        match mode {
            Mode::Eval => self.predict(x),
            Mode::Train => Ok(self.forward_train(x)?.output().clone()),
        }
    }

    /// Train-mode forward pass keeping every intermediate for [`Model::backward`].
    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<Trace<T>> {
        self.check_input(x.shape())?;
        let n = self.architecture.layers.len();
        let mut outputs: Vec<Tensor<T>> = Vec::with_capacity(n);
        let mut moments = Vec::with_capacity(n);
        for i in 0..n {
            let input = if i == 0 { x } else { &outputs[i - 1] };
            let skip = match self.architecture.layers[i] {
                LayerSpec::Concat { skip } => Some(&outputs[skip]),
                _ => None,
            };
            let mut batch_stats = None;
            let (out, m) = self.layer_forward(i, input, skip, Some(&mut batch_stats))?;
            if let (Some((mean, var)), LayerParams::Norm { running_mean, running_var, .. }) = (batch_stats, &mut self.params[i]) {
                let k = T::of(ops::BN_MOMENTUM);
                let count = (input.shape()[0] * input.shape()[2] * input.shape()[3]) as f64;
                let unbias = T::of(if count > 1.0 { count / (count - 1.0) } else { 1.0 });
                for c in 0..mean.len() {
                    running_mean[c] = (T::one() - k) * running_mean[c] + k * mean[c];
                    running_var[c] = (T::one() - k) * running_var[c] + k * var[c] * unbias;
                }
            }
            outputs.push(out);
            moments.push(m);
        }
        Ok(Trace {
            input: x.clone(),
            outputs,
            moments,
        })
    }

    /// Runs layer `i`. With `batch_stats` set, batch-norm normalizes with
    /// batch moments and reports them.
    #[allow(clippy::type_complexity)]
    fn layer_forward(
        &self,
        i: usize,
        x: &Tensor<T>,
        skip: Option<&Tensor<T>>,
        batch_stats: Option<&mut Option<(Vec<T>, Vec<T>)>>,
    ) -> Result<(Tensor<T>, Option<(Vec<T>, Vec<T>)>)> {
        let [n, c, h, w] = x.shape();
        let padding = self.architecture.padding;
        let layer = self.architecture.layers[i];
        Ok(match (layer, &self.params[i]) {
            (LayerSpec::Conv3x3 { out_channels, .. } | LayerSpec::Conv1x1 { out_channels, .. }, LayerParams::Conv { weight, bias }) => {
                let k = if matches!(layer, LayerSpec::Conv3x3 { .. }) { 3 } else { 1 };
                let mut out = Tensor::zeros([n, out_channels, h, w]);
                let per_in = c * h * w;
                let per_out = out_channels * h * w;
                out.data_mut().par_chunks_mut(per_out).enumerate().for_each(|(s, o)| {
                    ops::conv_forward(&x.data()[s * per_in..(s + 1) * per_in], c, h, w, k, weight, bias, padding, o);
                });
                (out, None)
            }
            (LayerSpec::BatchNorm { .. }, LayerParams::Norm { gamma, beta, running_mean, running_var }) => {
                let eps = T::of(ops::BN_EPS);
                let mut out = Tensor::zeros(x.shape());
                if let Some(stats) = batch_stats {
                    let (mean, var) = ops::channel_moments(x.data(), n, c, h * w);
                    let inv: Vec<T> = var.iter().map(|v| T::one() / (*v + eps).sqrt()).collect();
                    ops::affine_normalize(x.data(), n, c, h * w, &mean, &inv, gamma, beta, out.data_mut());
                    *stats = Some((mean.clone(), var));
                    (out, Some((mean, inv)))
                } else {
                    let inv: Vec<T> = running_var.iter().map(|v| T::one() / (*v + eps).sqrt()).collect();
                    ops::affine_normalize(x.data(), n, c, h * w, running_mean, &inv, gamma, beta, out.data_mut());
                    (out, None)
                }
            }
            (LayerSpec::Relu, _) => {
                let mut out = x.clone();
                out.data_mut().iter_mut().for_each(|v| *v = v.max(T::zero()));
                (out, None)
            }
            (LayerSpec::Downsample, _) => {
                let mut out = Tensor::zeros([n, c, h / 2, w / 2]);
                let (pi, po) = (c * h * w, c * h * w / 4);
                out.data_mut().par_chunks_mut(po).enumerate().for_each(|(s, o)| {
                    ops::maxpool_forward(&x.data()[s * pi..(s + 1) * pi], c, h, w, o);
                });
                (out, None)
            }
            (LayerSpec::Upsample, _) => {
                let mut out = Tensor::zeros([n, c, 2 * h, 2 * w]);
                let (pi, po) = (c * h * w, 4 * c * h * w);
                out.data_mut().par_chunks_mut(po).enumerate().for_each(|(s, o)| {
                    ops::upsample_forward(&x.data()[s * pi..(s + 1) * pi], c, h, w, o);
                });
                (out, None)
            }
            (LayerSpec::Concat { skip: j }, _) => {
                let s = skip.ok_or_else(|| Error::Contract(format!("layer {i}: missing output of layer {j}")))?;
                let [sn, sc, sh, sw] = s.shape();
                if (sn, sh, sw) != (n, h, w) {
                    return Err(Error::Shape(format!("layer {i}: cannot concat {:?} with {:?}", s.shape(), x.shape())));
                }
                let mut data = Vec::with_capacity((sc + c) * h * w * n);
                for k in 0..n {
                    data.extend_from_slice(s.sample(k));
                    data.extend_from_slice(x.sample(k));
                }
                (Tensor::from_vec([n, sc + c, h, w], data)?, None)
            }
            (spec, _) => return Err(Error::Contract(format!("layer {i} ({spec:?}) has mismatched parameters"))),
        })
    }

    /// Gradients of `<grad_out, output>` with respect to every trainable
    /// parameter, for the pass recorded in `trace`.
    pub fn backward(&self, trace: &Trace<T>, grad_out: &Tensor<T>) -> Result<Gradients<T>> {
        let layers = &self.architecture.layers;
        if grad_out.shape() != trace.output().shape() {
            return Err(Error::Shape(format!(
                "output gradient {:?} does not match output {:?}",
                grad_out.shape(),
                trace.output().shape()
            )));
        }
        let padding = self.architecture.padding;
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; layers.len()];
        let mut pgrads: Vec<LayerGrads<T>> = vec![LayerGrads::None; layers.len()];
        let last = layers.len();
        if last == 0 {
            return Ok(Gradients { layers: pgrads });
        }
        grads[last - 1] = Some(grad_out.clone());
        let accumulate = |slot: &mut Option<Tensor<T>>, g: Tensor<T>| match slot {
            Some(t) => t.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += *b),
            None => *slot = Some(g),
        };
        for i in (0..last).rev() {
            let Some(dy) = grads[i].take() else {
                continue;
            };
            let x = if i == 0 { &trace.input } else { &trace.outputs[i - 1] };
            let [n, c, h, w] = x.shape();
            let need_dx = i > 0;
            let dx: Option<Tensor<T>> = match (layers[i], &self.params[i]) {
                (LayerSpec::Conv3x3 { out_channels, .. } | LayerSpec::Conv1x1 { out_channels, .. }, LayerParams::Conv { weight, .. }) => {
                    let k = if matches!(layers[i], LayerSpec::Conv3x3 { .. }) { 3 } else { 1 };
                    let (pi, po) = (c * h * w, out_channels * h * w);
                    let parts: Vec<(Vec<T>, Vec<T>, Option<Vec<T>>)> = (0..n)
                        .into_par_iter()
                        .map(|s| {
                            let mut dw = vec![T::zero(); weight.len()];
                            let mut db = vec![T::zero(); out_channels];
                            let mut dxs = need_dx.then(|| vec![T::zero(); pi]);
                            ops::conv_backward(
                                &x.data()[s * pi..(s + 1) * pi],
                                &dy.data()[s * po..(s + 1) * po],
                                c,
                                h,
                                w,
                                k,
                                weight,
                                padding,
                                &mut dw,
                                &mut db,
                                dxs.as_deref_mut(),
                            );
                            (dw, db, dxs)
                        })
                        .collect();
                    let mut dw = vec![T::zero(); weight.len()];
                    let mut db = vec![T::zero(); out_channels];
                    let mut dx = need_dx.then(|| Vec::with_capacity(n * pi));
                    for (pw, pb, px) in parts {
                        dw.iter_mut().zip(&pw).for_each(|(a, b)| *a += *b);
                        db.iter_mut().zip(&pb).for_each(|(a, b)| *a += *b);
                        if let (Some(dx), Some(px)) = (dx.as_mut(), px) {
                            dx.extend_from_slice(&px);
                        }
                    }
                    pgrads[i] = LayerGrads::Conv { weight: dw, bias: db };
                    dx.map(|d| Tensor::from_vec(x.shape(), d)).transpose()?
                }
                (LayerSpec::BatchNorm { .. }, LayerParams::Norm { gamma, .. }) => {
                    let (mean, inv) = trace.moments[i]
                        .as_ref()
                        .ok_or_else(|| Error::Contract(format!("layer {i}: no batch statistics recorded")))?;
                    let (d, dg, db) = ops::batchnorm_backward(x.data(), dy.data(), n, c, h * w, mean, inv, gamma);
                    pgrads[i] = LayerGrads::Norm { gamma: dg, beta: db };
                    Some(Tensor::from_vec(x.shape(), d)?)
                }
                (LayerSpec::Relu, _) => {
                    let y = &trace.outputs[i];
                    let mut d = dy;
                    d.data_mut().iter_mut().zip(y.data()).for_each(|(g, v)| {
                        if *v <= T::zero() {
                            *g = T::zero();
                        }
                    });
                    Some(d)
                }
                (LayerSpec::Downsample, _) => {
                    let mut d = Tensor::zeros(x.shape());
                    let (pi, po) = (c * h * w, c * h * w / 4);
                    d.data_mut().par_chunks_mut(pi).enumerate().for_each(|(s, o)| {
                        ops::maxpool_backward(&x.data()[s * pi..(s + 1) * pi], &dy.data()[s * po..(s + 1) * po], c, h, w, o);
                    });
                    Some(d)
                }
                (LayerSpec::Upsample, _) => {
                    let mut d = Tensor::zeros(x.shape());
                    let (pi, po) = (c * h * w, 4 * c * h * w);
                    d.data_mut().par_chunks_mut(pi).enumerate().for_each(|(s, o)| {
                        ops::upsample_backward(&dy.data()[s * po..(s + 1) * po], c, h, w, o);
                    });
                    Some(d)
                }
                (LayerSpec::Concat { skip }, _) => {
                    let sc = trace.outputs[skip].shape()[1];
                    let hw = h * w;
                    let mut ds = Vec::with_capacity(n * sc * hw);
                    let mut dc = Vec::with_capacity(n * c * hw);
                    for k in 0..n {
                        let g = dy.sample(k);
                        ds.extend_from_slice(&g[..sc * hw]);
                        dc.extend_from_slice(&g[sc * hw..]);
                    }
                    accumulate(&mut grads[skip], Tensor::from_vec([n, sc, h, w], ds)?);
                    Some(Tensor::from_vec(x.shape(), dc)?)
                }
                (spec, _) => return Err(Error::Contract(format!("layer {i} ({spec:?}) has mismatched parameters"))),
            };
            if let (Some(d), true) = (dx, i > 0) {
                accumulate(&mut grads[i - 1], d);
            }
        }
        Ok(Gradients { layers: pgrads })
    }

    /// One SGD step: `w -= lr * (g + weight_decay * w)`, with decay applied
    /// to convolution weights only.
    pub fn sgd_step(&mut self, grads: &Gradients<T>, lr: f64, weight_decay: f64) {
        let (lr, wd) = (T::of(lr), T::of(weight_decay));
        for (p, g) in self.params.iter_mut().zip(&grads.layers) {
            match (p, g) {
                (LayerParams::Conv { weight, bias }, LayerGrads::Conv { weight: gw, bias: gb }) => {
                    weight.iter_mut().zip(gw).for_each(|(w, g)| *w = *w - lr * (*g + wd * *w));
                    bias.iter_mut().zip(gb).for_each(|(b, g)| *b = *b - lr * *g);
                }
                (LayerParams::Norm { gamma, beta, .. }, LayerGrads::Norm { gamma: gg, beta: gb }) => {
                    gamma.iter_mut().zip(gg).for_each(|(w, g)| *w = *w - lr * *g);
                    beta.iter_mut().zip(gb).for_each(|(b, g)| *b = *b - lr * *g);
                }
                _ => {}
            }
        }
    }
}

impl Model<f32> {
    /// Applies the network in eval mode to physical-unit samples, in
    /// batches of `batch`, handling the data scale.
    pub fn denoise(&self, x: &Tensor<f32>, batch: usize) -> Result<Tensor<f32>> {
        self.check_input(x.shape())?;
        let [n, c, h, w] = x.shape();
        let s = self.data_scale as f32;
        let mut out = Vec::with_capacity(x.len());
        for start in (0..n).step_by(batch.max(1)) {
            let end = (start + batch.max(1)).min(n);
            let chunk: Vec<f32> = x.data()[start * c * h * w..end * c * h * w].iter().map(|v| v * s).collect();
            let y = self.predict(&Tensor::from_vec([end - start, c, h, w], chunk)?)?;
            out.extend(y.data().iter().map(|v| v / s));
        }
        Tensor::from_vec([n, self.architecture.out_channels, h, w], out)
    }
}

/// Largest discrepancy between analytic and central-difference gradients
/// of `½||forward_train(x) - target||²`, relative to the largest analytic
/// gradient entry.
pub fn gradient_check(model: &Model<f64>, x: &Tensor<f64>, target: &Tensor<f64>, step: f64) -> Result<f64> {
    let loss = |m: &Model<f64>| -> Result<f64> { Ok(0.5 * m.clone().forward_train(x)?.output().sum_sq_diff(target)) };
    let mut probe = model.clone();
    let trace = probe.forward_train(x)?;
    let mut residual = trace.output().clone();
    residual.data_mut().iter_mut().zip(target.data()).for_each(|(r, t)| *r -= *t);
    let analytic = model.backward(&trace, &residual)?;
    let blocks: Vec<Vec<f64>> = analytic.blocks().iter().map(|b| b.to_vec()).collect();
    let scale = analytic.max_abs().max(f64::MIN_POSITIVE);
    let mut worst = 0.0f64;
    for (bi, block) in blocks.iter().enumerate() {
        for (j, g) in block.iter().enumerate() {
            let mut plus = model.clone();
            plus.trainable_mut()[bi][j] += step;
            let mut minus = model.clone();
            minus.trainable_mut()[bi][j] -= step;
            let fd = (loss(&plus)? - loss(&minus)?) / (2.0 * step);
            worst = worst.max((fd - g).abs() / scale);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::super::layers::{unet, Padding};
    use super::*;
    use rand::Rng;

    fn random_tensor(shape: [usize; 4], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn gradients_match_finite_differences() {
        use super::super::layers::LayerSpec as L;
        let tiny = Architecture {
            layers: vec![
                L::Conv3x3 { in_channels: 2, out_channels: 3 },
                L::BatchNorm { channels: 3 },
                L::Relu,
                L::Conv3x3 { in_channels: 3, out_channels: 2 },
            ],
            in_channels: 2,
            out_channels: 2,
            padding: Padding::Zero,
            init: Init::He,
        };
        for (seed, arch) in [(1, tiny), (2, unet(2, 2, 1, Padding::Circular))] {
            let m = Model::<f64>::new(arch, Domain::Image, seed).unwrap();
            let x = random_tensor([2, 2, 8, 8], seed + 10);
            let t = random_tensor([2, 2, 8, 8], seed + 20);
            let err = gradient_check(&m, &x, &t, 1e-5).unwrap();
            assert!(err < 1e-4, "relative gradient error {err}");
        }
    }

    #[test]
    fn shape_contract_and_divisibility() {
        let m = Model::<f32>::new(unet(2, 4, 2, Padding::Zero), Domain::Image, 1).unwrap();
        let y = m.predict(&Tensor::zeros([4, 2, 64, 64])).unwrap();
        assert_eq!(y.shape(), [4, 2, 64, 64]);
        let err = m.predict(&Tensor::zeros([1, 2, 6, 8])).unwrap_err().to_string();
        assert!(err.contains("2^depth = 4"), "{err}");
        assert!(m.predict(&Tensor::zeros([1, 3, 8, 8])).is_err());
    }

    #[test]
    fn zero_network_gives_zero() {
        let mut arch = unet(2, 4, 1, Padding::Zero);
        arch.init = Init::Zero;
        let m = Model::<f64>::new(arch, Domain::Image, 0).unwrap();
        let y = m.predict(&random_tensor([2, 2, 8, 8], 3)).unwrap();
        assert!(y.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn eval_is_pure_and_train_updates_statistics() {
        let mut m = Model::<f32>::new(unet(2, 4, 1, Padding::Zero), Domain::Image, 5).unwrap();
        let x = random_tensor([2, 2, 8, 8], 1).cast::<f32>();
        let before = m.clone();
        let a = m.forward(&x, Mode::Eval).unwrap();
        let b = m.forward(&x, Mode::Eval).unwrap();
        assert_eq!(a, b);
        assert_eq!(m, before);
        m.forward(&x, Mode::Train).unwrap();
        assert_ne!(m, before);
    }

    #[test]
    fn backward_is_linear_in_output_gradient() {
        let mut m = Model::<f64>::new(unet(2, 3, 1, Padding::Zero), Domain::Image, 2).unwrap();
        let x = random_tensor([2, 2, 4, 4], 4);
        let trace = m.forward_train(&x).unwrap();
        let zero = m.backward(&trace, &Tensor::zeros(trace.output().shape())).unwrap();
        assert_eq!(zero.max_abs(), 0.0);
        let g = random_tensor(trace.output().shape(), 8);
        let mut g2 = g.clone();
        g2.data_mut().iter_mut().for_each(|v| *v *= 2.0);
        let a = m.backward(&trace, &g).unwrap();
        let b = m.backward(&trace, &g2).unwrap();
        for (x, y) in a.blocks().iter().zip(b.blocks()) {
            for (u, v) in x.iter().zip(y) {
                assert!((2.0 * u - v).abs() <= 1e-12 * v.abs().max(1.0));
            }
        }
    }
}
