use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::Padding;
use super::model::{Domain, Model};
use super::tensor::Tensor;
use super::Scalar;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub lr_initial: f64,
    pub lr_final: f64,
    /// Patch `(h, w, channels)` cropped from each training sample.
    pub patch: [usize; 3],
    pub seed: u64,
    /// Channels at the finest U-Net level.
    pub base_channels: usize,
    /// Number of poolings.
    pub depth: usize,
    pub padding: Padding,
}

impl TrainConfig {
    /// Published settings: 200 epochs, batches of 12, weight decay 1e-4,
    /// learning rate 1e-3 down to 1e-5, 256x256x2 image and 768x384x2
    /// sinogram patches.
    pub fn paper(domain: Domain) -> Self {
        Self {
            epochs: 200,
            batch_size: 12,
            weight_decay: 1e-4,
            lr_initial: 1e-3,
            lr_final: 1e-5,
            patch: match domain {
                Domain::Image => [256, 256, 2],
                Domain::Sinogram => [768, 384, 2],
            },
            seed: 0,
            base_channels: 32,
            depth: 4,
            padding: Padding::Zero,
        }
    }

    /// Laptop-sized settings for the desk geometry with 8 slices. The image
    /// model sees only ~112 slices per epoch, so it takes small batches for
    /// more steps; the sinogram model overfits the measured angles with them.
    pub fn desk(domain: Domain) -> Self {
        Self {
            epochs: 30,
            batch_size: match domain {
                Domain::Image => 2,
                Domain::Sinogram => 8,
            },
            weight_decay: 1e-4,
            lr_initial: 0.05,
            lr_final: 0.005,
            patch: match domain {
                Domain::Image => [64, 64, 2],
                Domain::Sinogram => [8, 128, 2],
            },
            seed: 0,
            base_channels: 16,
            depth: 3,
            padding: Padding::Zero,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if !(self.lr_final >= 0.0 && self.lr_initial >= self.lr_final && self.lr_initial.is_finite()) {
            return Err(Error::config(
                "lr_initial",
                format!("need lr_initial >= lr_final >= 0, got {} and {}", self.lr_initial, self.lr_final),
            ));
        }
        if self.lr_final == 0.0 && self.lr_initial != 0.0 {
            return Err(Error::config("lr_final", "must be positive unless training is disabled"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("weight_decay", "must be non-negative"));
        }
        let m = 1usize << self.depth;
        if self.patch[0] % m != 0 || self.patch[1] % m != 0 || self.patch[0] == 0 || self.patch[1] == 0 {
            return Err(Error::config(
                "patch",
                format!("{}x{} is not a positive multiple of 2^depth = {m}", self.patch[0], self.patch[1]),
            ));
        }
        if self.base_channels == 0 {
            return Err(Error::config("base_channels", "must be positive"));
        }
        Ok(())
    }
}

/// Learning rate of epoch `e`: geometric from `lr_initial` to `lr_final`.
pub fn lr_at_epoch(cfg: &TrainConfig, epoch: usize) -> f64 {
    if cfg.epochs <= 1 || cfg.lr_initial == 0.0 {
        return cfg.lr_initial;
    }
    let t = epoch as f64 / (cfg.epochs - 1) as f64;
    cfg.lr_initial * (cfg.lr_final / cfg.lr_initial).powf(t)
}

/// Paired samples in physical units; patches are cropped at train time.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet<T> {
    pub inputs: Tensor<T>,
    pub labels: Tensor<T>,
}

impl<T: Scalar> PatchSet<T> {
    pub fn new(inputs: Tensor<T>, labels: Tensor<T>) -> Result<Self> {
        if inputs.shape() != labels.shape() {
            return Err(Error::Shape(format!(
                "inputs {:?} and labels {:?} differ",
                inputs.shape(),
                labels.shape()
            )));
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.inputs.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Root mean square of the labels.
    pub fn label_rms(&self) -> f64 {
        let n = self.labels.len().max(1) as f64;
        (self.labels.data().iter().map(|v| v.to_f64().unwrap_or(0.0).powi(2)).sum::<f64>() / n).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean training loss (in network units) of each epoch.
    pub epoch_loss: Vec<f64>,
    pub learning_rates: Vec<f64>,
    pub seconds: f64,
}

fn crop<T: Scalar>(src: &[T], c: usize, h: usize, w: usize, y0: usize, x0: usize, ph: usize, pw: usize, scale: T, out: &mut Vec<T>) {
    for ch in 0..c {
        for y in y0..y0 + ph {
            let row = &src[(ch * h + y) * w + x0..][..pw];
            out.extend(row.iter().map(|v| *v * scale));
        }
    }
}

/// Minibatch SGD on the mean squared error. Every random choice (sample
/// order, crop offsets) comes from `cfg.seed`, so a run is reproducible
/// bit for bit.
pub fn sgd_train<T: Scalar>(model: &mut Model<T>, data: &PatchSet<T>, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let [n, c, h, w] = data.inputs.shape();
    let [ph, pw, pc] = cfg.patch;
    if pc != c || ph > h || pw > w {
        return Err(Error::Shape(format!("patch {ph}x{pw}x{pc} does not fit samples of {c}x{h}x{w}")));
    }
    model.check_input([1, c, ph, pw])?;
    let start = Instant::now();
    let scale = T::of(model.data_scale);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut report = TrainReport {
        epoch_loss: Vec::with_capacity(cfg.epochs),
        learning_rates: Vec::with_capacity(cfg.epochs),
        seconds: 0.0,
    };
    for epoch in 0..cfg.epochs {
        let lr = lr_at_epoch(cfg, epoch);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut xin = Vec::with_capacity(chunk.len() * c * ph * pw);
            let mut lab = Vec::with_capacity(xin.capacity());
            for &i in chunk {
                let y0 = rng.gen_range(0..=h - ph);
                let x0 = rng.gen_range(0..=w - pw);
                crop(data.inputs.sample(i), c, h, w, y0, x0, ph, pw, scale, &mut xin);
                crop(data.labels.sample(i), c, h, w, y0, x0, ph, pw, scale, &mut lab);
            }
            let shape = [chunk.len(), c, ph, pw];
            let x = Tensor::from_vec(shape, xin)?;
            let t = Tensor::from_vec(shape, lab)?;
            let trace = model.forward_train(&x)?;
            let y = trace.output();
            let count = y.len() as f64;
            let loss = y.sum_sq_diff(&t) / count;
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch, batch: b, loss });
            }
            let k = T::of(2.0 / count);
            let grad = Tensor::from_vec(shape, y.data().iter().zip(t.data()).map(|(a, b)| (*a - *b) * k).collect())?;
            let grads = model.backward(&trace, &grad)?;
            model.sgd_step(&grads, lr, cfg.weight_decay);
            total += loss;
            batches += 1;
        }
        report.epoch_loss.push(total / batches as f64);
        report.learning_rates.push(lr);
    }
    if !model.is_finite() {
        return Err(Error::TrainingDiverged {
            epoch: cfg.epochs - 1,
            batch: 0,
            loss: f64::NAN,
        });
    }
    report.seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::super::layers::unet;
    use super::*;

    #[test]
    fn presets_and_schedule() {
        let p = TrainConfig::paper(Domain::Image);
        assert_eq!((p.epochs, p.batch_size, p.weight_decay), (200, 12, 1e-4));
        assert_eq!(p.patch, [256, 256, 2]);
        assert_eq!(TrainConfig::paper(Domain::Sinogram).patch, [768, 384, 2]);
        p.validate().unwrap();
        TrainConfig::desk(Domain::Sinogram).validate().unwrap();
        assert!((lr_at_epoch(&p, 0) - 1e-3).abs() < 1e-18);
        assert!((lr_at_epoch(&p, 199) - 1e-5).abs() < 1e-15);
        assert!(lr_at_epoch(&p, 100) < lr_at_epoch(&p, 99));
        let bad = TrainConfig {
            lr_initial: 1e-5,
            lr_final: 1e-3,
            ..p.clone()
        };
        assert!(bad.validate().is_err());
        assert!(TrainConfig { epochs: 0, ..p }.validate().is_err());
    }

    #[test]
    fn zero_learning_rate_keeps_loss_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::<f64>::from_fn([4, 2, 8, 8], |_| rng.gen_range(-1.0..1.0));
        let data = PatchSet::new(x.clone(), x).unwrap();
        let cfg = TrainConfig {
            epochs: 4,
            batch_size: 4,
            lr_initial: 0.0,
            lr_final: 0.0,
            patch: [8, 8, 2],
            depth: 1,
            base_channels: 4,
            ..TrainConfig::desk(Domain::Image)
        };
        let mut m = Model::new(unet(2, 4, 1, Padding::Zero), Domain::Image, 1).unwrap();
        let r = sgd_train(&mut m, &data, &cfg).unwrap();
        for l in &r.epoch_loss {
            assert!((l - r.epoch_loss[0]).abs() <= 1e-12 * r.epoch_loss[0]);
        }
    }

    #[test]
    fn rejects_mismatched_patches() {
        let data = PatchSet::new(Tensor::<f32>::zeros([2, 2, 8, 8]), Tensor::zeros([2, 2, 8, 8])).unwrap();
        let mut m = Model::new(unet(2, 4, 1, Padding::Zero), Domain::Image, 1).unwrap();
        let cfg = TrainConfig {
            patch: [16, 16, 2],
            depth: 1,
            ..TrainConfig::desk(Domain::Image)
        };
        assert!(sgd_train(&mut m, &data, &cfg).is_err());
        assert!(PatchSet::new(Tensor::<f32>::zeros([2, 2, 8, 8]), Tensor::zeros([1, 2, 8, 8])).is_err());
    }
}
