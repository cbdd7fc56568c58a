//! The dual-domain method: MBIR labels, an image-domain denoiser trained on
//! x-y slices of the right inverse, a sinogram-domain denoiser trained on
//! s-z view planes against the measured views, and inference that ends in
//! dense-view FBP.

use ndarray::{s, Array4, Axis};
use serde::{Deserialize, Serialize};

use crate::analytic::{fbp, right_inverse, FbpConfig};
use crate::data::{Sinogram, Volume};
use crate::error::{Error, Result};
use crate::geometry::{AngleSet, FanBeamGeometry};
use crate::mbir::{mbir_tv, tv_denoise_slice, MbirConfig};
use crate::neural::{sgd_train, unet, Domain, Model, PatchSet, Tensor, TrainConfig, TrainReport};
use crate::projector::forward_project;

/// Dual-prox iterations used by [`tv_post_denoise`].
pub const TV_POST_ITERATIONS: usize = 200;

/// Samples per batch when applying a trained network.
const INFERENCE_BATCH: usize = 8;

/// One acquisition. Synthetic cases also carry their phantom and clean
/// dense sinogram, which only evaluation reads.
#[derive(Debug, Clone, PartialEq)]
pub struct Case {
    pub id: String,
    /// Sinogram on the measured angles.
    pub measured: Sinogram,
    pub label: Option<Volume>,
    pub truth: Option<Volume>,
    pub dense: Option<Sinogram>,
}

impl Case {
    pub fn new(id: impl Into<String>, measured: Sinogram) -> Self {
        Self {
            id: id.into(),
            measured,
            label: None,
            truth: None,
            dense: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub geometry: FanBeamGeometry,
    pub fbp: FbpConfig,
    pub cases: Vec<Case>,
}

impl TrainingSet {
    /// Checks that every case shares the geometry and slice count and, when
    /// asked, carries a label of matching shape.
    pub fn validate(&self, require_labels: bool) -> Result<()> {
        let Some(first) = self.cases.first() else {
            return Err(Error::InvalidArgument("training set has no cases".into()));
        };
        let nz = first.measured.n_slices();
        for case in &self.cases {
            let ctx = |e: Error| e.in_stage("training-set", &case.id);
            case.measured.check_geometry(&self.geometry).map_err(ctx)?;
            if case.measured.n_slices() != nz || case.measured.angles != first.measured.angles {
                return Err(ctx(Error::Shape("slice count or measured angles differ from the first case".into())));
            }
            match &case.label {
                Some(l) => {
                    l.check_geometry(&self.geometry).map_err(ctx)?;
                    if l.n_slices() != nz || l.n_energy() != case.measured.n_energy() {
                        return Err(ctx(Error::Shape("label volume does not match the sinogram".into())));
                    }
                }
                None if require_labels => return Err(ctx(Error::InvalidArgument("label missing".into()))),
                None => {}
            }
        }
        Ok(())
    }
}

/// MBIR-TV reconstruction of every case, used as training labels.
pub fn make_labels(cases: &[Case], geometry: &FanBeamGeometry, cfg: &MbirConfig) -> Result<Vec<Volume>> {
    cases
        .iter()
        .map(|c| {
            mbir_tv(&c.measured, geometry, cfg)
                .map(|r| r.volume)
                .map_err(|e| e.in_stage("labels", &c.id))
        })
        .collect()
}

/// Label quality of one data weight: mean over cases and energies of the
/// dense-view sinogram NMSE of the MBIR reconstruction against the clean
/// dense sinogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MuTrial {
    pub mu_fid: f64,
    pub dense_nmse: f64,
}

/// Picks the data weight from `grid` that gives the best labels on cases
/// with a known dense sinogram.
pub fn select_mu_fid(cases: &[Case], geometry: &FanBeamGeometry, base: &MbirConfig, grid: &[f64]) -> Result<(f64, Vec<MuTrial>)> {
    if grid.is_empty() {
        return Err(Error::config("mu_grid", "is empty"));
    }
    let mut trials = Vec::with_capacity(grid.len());
    for &mu in grid {
        let cfg = MbirConfig { mu_fid: mu, ..base.clone() };
        let mut sum = 0.0;
        let mut count = 0usize;
        for c in cases {
            let dense = c
                .dense
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument(format!("case {} has no dense sinogram", c.id)))?;
            let r = mbir_tv(&c.measured, geometry, &cfg).map_err(|e| e.in_stage("mu-search", &c.id))?;
            let proj = forward_project(&r.volume, geometry, &dense.angles)?;
            for v in crate::eval::nmse(&proj, dense)? {
                sum += v;
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::InvalidArgument("no cases for the data-weight search".into()));
        }
        trials.push(MuTrial {
            mu_fid: mu,
            dense_nmse: sum / count as f64,
        });
    }
    let best = trials
        .iter()
        .min_by(|a, b| a.dense_nmse.total_cmp(&b.dense_nmse))
        .map(|t| t.mu_fid)
        .unwrap_or(base.mu_fid);
    Ok((best, trials))
}

/// Volume `(e, z, y, x)` as a batch of x-y slices `(z, e, y, x)`.
pub fn volume_to_slices(vol: &Volume) -> Tensor<f32> {
    let (ne, nz, ny, nx) = vol.data.dim();
    Tensor::from_fn([nz, ne, ny, nx], |[z, e, y, x]| vol.data[(e, z, y, x)] as f32)
}

pub fn slices_to_volume(t: &Tensor<f32>) -> Volume {
    let [nz, ne, ny, nx] = t.shape();
    Volume {
        data: Array4::from_shape_fn((ne, nz, ny, nx), |(e, z, y, x)| t.get([z, e, y, x]) as f64),
    }
}

/// Sinogram `(e, v, z, s)` as a batch of s-z planes `(v, e, z, s)`.
pub fn sinogram_to_planes(sino: &Sinogram) -> Tensor<f32> {
    let (ne, nv, nz, nd) = sino.data.dim();
    Tensor::from_fn([nv, ne, nz, nd], |[v, e, z, d]| sino.data[(e, v, z, d)] as f32)
}

pub fn planes_to_sinogram(t: &Tensor<f32>, angles: AngleSet) -> Result<Sinogram> {
    let [nv, ne, nz, nd] = t.shape();
    Sinogram::new(Array4::from_shape_fn((ne, nv, nz, nd), |(e, v, z, d)| t.get([v, e, z, d]) as f64), angles)
}

/// Applies `model` to every sample, padding each plane by edge
/// replication up to a multiple of the network's pooling factor.
pub fn apply_model(model: &Model<f32>, x: &Tensor<f32>) -> Result<Tensor<f32>> {
    let [n, c, h, w] = x.shape();
    let m = 1usize << model.architecture.depth();
    let (ph, pw) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
    if (ph, pw) == (h, w) {
        return model.denoise(x, INFERENCE_BATCH);
    }
    let padded = Tensor::from_fn([n, c, ph, pw], |[i, ch, y, xx]| x.get([i, ch, y.min(h - 1), xx.min(w - 1)]));
    let out = model.denoise(&padded, INFERENCE_BATCH)?;
    let oc = out.shape()[1];
    Ok(Tensor::from_fn([n, oc, h, w], |[i, ch, y, xx]| out.get([i, ch, y, xx])))
}

/// Q^I on every x-y slice, both energies jointly.
pub fn denoise_volume(model: &Model<f32>, vol: &Volume) -> Result<Volume> {
    Ok(slices_to_volume(&apply_model(model, &volume_to_slices(vol))?))
}

/// Q^S on every s-z view plane.
pub fn denoise_sinogram(model: &Model<f32>, sino: &Sinogram) -> Result<Sinogram> {
    planes_to_sinogram(&apply_model(model, &sinogram_to_planes(sino))?, sino.angles.clone())
}

fn concat_samples(parts: Vec<Tensor<f32>>) -> Result<Tensor<f32>> {
    let Some(first) = parts.first() else {
        return Err(Error::InvalidArgument("no samples".into()));
    };
    let [_, c, h, w] = first.shape();
    let mut n = 0;
    let mut data = Vec::new();
    for p in parts {
        let [pn, pc, ph, pw] = p.shape();
        if (pc, ph, pw) != (c, h, w) {
            return Err(Error::Shape(format!("sample shape {:?} differs from {:?}", p.shape(), [c, h, w])));
        }
        n += pn;
        data.extend(p.into_vec());
    }
    Tensor::from_vec([n, c, h, w], data)
}

/// Image-domain pairs: x-y slices of the right inverse against the labels.
pub fn image_pairs(ts: &TrainingSet) -> Result<PatchSet<f32>> {
    ts.validate(true)?;
    let mut inputs = Vec::with_capacity(ts.cases.len());
    let mut labels = Vec::with_capacity(ts.cases.len());
    for c in &ts.cases {
        let ri = right_inverse(&c.measured, &ts.geometry, &ts.fbp).map_err(|e| e.in_stage("right-inverse", &c.id))?;
        inputs.push(volume_to_slices(&ri));
        labels.push(volume_to_slices(c.label.as_ref().expect("validated")));
    }
    PatchSet::new(concat_samples(inputs)?, concat_samples(labels)?)
}

/// Sinogram-domain pairs: s-z planes of the reprojected Q^I output on the
/// measured angles against the measured views.
pub fn sinogram_pairs(ts: &TrainingSet, image_model: &Model<f32>) -> Result<PatchSet<f32>> {
    ts.validate(false)?;
    let mut inputs = Vec::with_capacity(ts.cases.len());
    let mut labels = Vec::with_capacity(ts.cases.len());
    for c in &ts.cases {
        let ri = right_inverse(&c.measured, &ts.geometry, &ts.fbp).map_err(|e| e.in_stage("right-inverse", &c.id))?;
        let den = denoise_volume(image_model, &ri).map_err(|e| e.in_stage("image-denoiser", &c.id))?;
        let synth = forward_project(&den, &ts.geometry, &c.measured.angles).map_err(|e| e.in_stage("reprojection", &c.id))?;
        inputs.push(sinogram_to_planes(&synth));
        labels.push(sinogram_to_planes(&c.measured));
    }
    PatchSet::new(concat_samples(inputs)?, concat_samples(labels)?)
}

fn fresh_model(domain: Domain, cfg: &TrainConfig, data: &PatchSet<f32>) -> Result<Model<f32>> {
    let channels = data.inputs.shape()[1];
    let mut model = Model::new(unet(channels, cfg.base_channels, cfg.depth, cfg.padding), domain, cfg.seed)?;
    let rms = data.label_rms();
    model.data_scale = if rms > 0.0 { 1.0 / rms } else { 1.0 };
    Ok(model)
}

/// Trains Q^I to map the right inverse to the MBIR labels.
pub fn train_image_denoiser(ts: &TrainingSet, cfg: &TrainConfig) -> Result<(Model<f32>, TrainReport)> {
    let data = image_pairs(ts)?;
    let mut model = fresh_model(Domain::Image, cfg, &data)?;
    let report = sgd_train(&mut model, &data, cfg).map_err(|e| e.in_stage("train-image", "all"))?;
    Ok((model, report))
}

/// Trains Q^S on the measured views, with Q^I held fixed.
pub fn train_sinogram_denoiser(ts: &TrainingSet, image_model: &Model<f32>, cfg: &TrainConfig) -> Result<(Model<f32>, TrainReport)> {
    if image_model.domain != Domain::Image {
        return Err(Error::InvalidArgument("the first-stage model is not an image-domain model".into()));
    }
    let data = sinogram_pairs(ts, image_model)?;
    let mut model = fresh_model(Domain::Sinogram, cfg, &data)?;
    let report = sgd_train(&mut model, &data, cfg).map_err(|e| e.in_stage("train-sino", "all"))?;
    Ok((model, report))
}

/// Trained denoisers plus the reconstruction settings they run with.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineModels {
    pub image: Model<f32>,
    pub sinogram: Model<f32>,
    pub geometry: FanBeamGeometry,
    pub fbp: FbpConfig,
    /// TV weight of the optional post-denoising step.
    pub tv_weight: Option<f64>,
}

impl PipelineModels {
    pub fn validate(&self) -> Result<()> {
        if self.image.domain != Domain::Image {
            return Err(Error::config("image_model", "is not an image-domain model"));
        }
        if self.sinogram.domain != Domain::Sinogram {
            return Err(Error::config("sinogram_model", "is not a sinogram-domain model"));
        }
        if let Some(w) = self.tv_weight {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::config("tv_weight", format!("must be non-negative, got {w}")));
            }
        }
        self.fbp.validate(&self.geometry)
    }
}

/// Every stage output of one inference.
#[derive(Debug, Clone, PartialEq)]
pub struct Intermediates {
    pub right_inverse: Volume,
    pub image_denoised: Volume,
    pub dense_sinogram: Sinogram,
    pub dense_denoised: Sinogram,
    pub fbp: Volume,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub volume: Volume,
    pub intermediates: Option<Intermediates>,
}

/// Right inverse, Q^I per slice, reprojection onto every dense angle, Q^S
/// per view, FBP, then optional TV denoising.
pub fn infer(g_sparse: &Sinogram, models: &PipelineModels, keep_intermediates: bool) -> Result<Inference> {
    models.validate()?;
    let geometry = &models.geometry;
    let ri = right_inverse(g_sparse, geometry, &models.fbp).map_err(|e| e.in_stage("right-inverse", "input"))?;
    let den = denoise_volume(&models.image, &ri).map_err(|e| e.in_stage("image-denoiser", "input"))?;
    let dense = forward_project(&den, geometry, &AngleSet::full(geometry.n_views_full)).map_err(|e| e.in_stage("reprojection", "input"))?;
    let dense_den = denoise_sinogram(&models.sinogram, &dense).map_err(|e| e.in_stage("sinogram-denoiser", "input"))?;
    let recon = fbp(&dense_den, geometry, &models.fbp).map_err(|e| e.in_stage("fbp", "input"))?;
    let volume = match models.tv_weight {
        Some(w) if w > 0.0 => tv_post_denoise(&recon, w)?,
        _ => recon.clone(),
    };
    Ok(Inference {
        volume,
        intermediates: keep_intermediates.then_some(Intermediates {
            right_inverse: ri,
            image_denoised: den,
            dense_sinogram: dense,
            dense_denoised: dense_den,
            fbp: recon,
        }),
    })
}

/// The image-domain baseline: right inverse followed by Q^I only.
pub fn image_cnn(g_sparse: &Sinogram, image_model: &Model<f32>, geometry: &FanBeamGeometry, fbp_cfg: &FbpConfig) -> Result<Volume> {
    let ri = right_inverse(g_sparse, geometry, fbp_cfg)?;
    denoise_volume(image_model, &ri)
}

/// Per-slice TV denoising `argmin ½||f - v||² + weight * TV(f)`.
pub fn tv_post_denoise(vol: &Volume, weight: f64) -> Result<Volume> {
    if !(weight >= 0.0 && weight.is_finite()) {
        return Err(Error::InvalidArgument(format!("TV weight must be non-negative, got {weight}")));
    }
    if weight == 0.0 {
        return Ok(vol.clone());
    }
    let (ne, nz, ny, nx) = vol.data.dim();
    let mut out = vol.clone();
    for e in 0..ne {
        for z in 0..nz {
            let slice: Vec<f64> = vol.data.slice(s![e, z, .., ..]).iter().copied().collect();
            let den = tv_denoise_slice(&slice, nx, ny, weight, TV_POST_ITERATIONS);
            out.data
                .index_axis_mut(Axis(0), e)
                .index_axis_mut(Axis(0), z)
                .iter_mut()
                .zip(den)
                .for_each(|(d, v)| *d = v);
        }
    }
    Ok(out)
}
