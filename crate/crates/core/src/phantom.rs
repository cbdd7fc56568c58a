//! Synthetic dual-energy bag phantoms and simulated acquisition.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Sinogram, Volume};
use crate::error::{Error, Result};
use crate::geometry::{AngleSet, FanBeamGeometry};
use crate::projector::forward_project;

/// Sub-samples per pixel side used by rasterization.
const SUPERSAMPLE: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Shape {
    Disk { center: [f64; 2], radius: f64 },
    Rectangle { center: [f64; 2], half_size: [f64; 2] },
    RotatedRectangle { center: [f64; 2], half_size: [f64; 2], rotation: f64 },
    Annulus { center: [f64; 2], inner: f64, outer: f64 },
}

impl Shape {
    fn center(&self) -> [f64; 2] {
        match self {
            Shape::Disk { center, .. }
            | Shape::Rectangle { center, .. }
            | Shape::RotatedRectangle { center, .. }
            | Shape::Annulus { center, .. } => *center,
        }
    }

    /// Radius of a disk around the center containing the shape.
    fn reach(&self) -> f64 {
        match self {
            Shape::Disk { radius, .. } => *radius,
            Shape::Rectangle { half_size, .. } | Shape::RotatedRectangle { half_size, .. } => {
                half_size[0].hypot(half_size[1])
            }
            Shape::Annulus { outer, .. } => *outer,
        }
    }

    /// Largest distance from the isocenter of any point of the shape.
    pub fn max_radius(&self) -> f64 {
        let rect_corners = |center: [f64; 2], half: [f64; 2], rotation: f64| {
            let (s, c) = rotation.sin_cos();
            [(-1.0, -1.0), (-1.0, 1.0), (1.0, -1.0), (1.0, 1.0)]
                .iter()
                .map(|(a, b)| {
                    let u = a * half[0];
                    let v = b * half[1];
                    (center[0] + c * u - s * v).hypot(center[1] + s * u + c * v)
                })
                .fold(0.0, f64::max)
        };
        match self {
            Shape::Rectangle { center, half_size } => rect_corners(*center, *half_size, 0.0),
            Shape::RotatedRectangle {
                center,
                half_size,
                rotation,
            } => rect_corners(*center, *half_size, *rotation),
            _ => {
                let c = self.center();
                c[0].hypot(c[1]) + self.reach()
            }
        }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        match self {
            Shape::Disk { center, radius } => {
                (x - center[0]).powi(2) + (y - center[1]).powi(2) <= radius * radius
            }
            Shape::Rectangle { center, half_size } => {
                (x - center[0]).abs() <= half_size[0] && (y - center[1]).abs() <= half_size[1]
            }
            Shape::RotatedRectangle {
                center,
                half_size,
                rotation,
            } => {
                let (s, c) = rotation.sin_cos();
                let dx = x - center[0];
                let dy = y - center[1];
                let u = c * dx + s * dy;
                let v = -s * dx + c * dy;
                u.abs() <= half_size[0] && v.abs() <= half_size[1]
            }
            Shape::Annulus { center, inner, outer } => {
                let r2 = (x - center[0]).powi(2) + (y - center[1]).powi(2);
                r2 <= outer * outer && r2 >= inner * inner
            }
        }
    }

    /// Closed-form area in mm².
    pub fn area(&self) -> f64 {
        use std::f64::consts::PI;
        match self {
            Shape::Disk { radius, .. } => PI * radius * radius,
            Shape::Rectangle { half_size, .. } | Shape::RotatedRectangle { half_size, .. } => {
                4.0 * half_size[0] * half_size[1]
            }
            Shape::Annulus { inner, outer, .. } => PI * (outer * outer - inner * inner),
        }
    }

    fn check_sizes(&self) -> std::result::Result<(), String> {
        let ok = match self {
            Shape::Disk { radius, .. } => *radius > 0.0,
            Shape::Rectangle { half_size, .. } | Shape::RotatedRectangle { half_size, .. } => {
                half_size[0] > 0.0 && half_size[1] > 0.0
            }
            Shape::Annulus { inner, outer, .. } => *inner >= 0.0 && outer > inner,
        };
        if ok {
            Ok(())
        } else {
            Err("non-positive size parameter".into())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    #[serde(flatten)]
    pub shape: Shape,
    /// Attenuation `(low, high)` energy in mm⁻¹.
    pub mu: [f64; 2],
    /// Longitudinal extent `[start, end]` in mm.
    pub z_mm: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhantomKind {
    Simple,
    Bag,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub name: String,
    pub kind: PhantomKind,
    pub seed: u64,
    pub primitives: Vec<Primitive>,
}

impl PhantomSpec {
    pub fn new(name: impl Into<String>, primitives: Vec<Primitive>) -> Self {
        Self {
            name: name.into(),
            kind: PhantomKind::Custom,
            seed: 0,
            primitives,
        }
    }

    /// Checks every primitive lies within the inscribed ROI circle with
    /// non-negative attenuation.
    pub fn validate(&self, geometry: &FanBeamGeometry) -> Result<()> {
        let roi_radius = geometry.roi_nx.min(geometry.roi_ny) as f64 * geometry.pixel_mm / 2.0;
        for (i, p) in self.primitives.iter().enumerate() {
            let item = || format!("{} primitive {i}", self.name);
            p.shape.check_sizes().map_err(|reason| Error::Validation { item: item(), reason })?;
            if p.shape.max_radius() > roi_radius + 1e-9 {
                return Err(Error::Validation {
                    item: item(),
                    reason: format!("extends beyond the {roi_radius} mm ROI circle"),
                });
            }
            if p.mu.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
                return Err(Error::Validation {
                    item: item(),
                    reason: "attenuation must be finite and non-negative".into(),
                });
            }
            if !(p.z_mm[1] > p.z_mm[0]) {
                return Err(Error::Validation {
                    item: item(),
                    reason: "empty z extent".into(),
                });
            }
        }
        Ok(())
    }

    /// Additionally requires `mu_low >= mu_high` for every primitive.
    pub fn validate_physical(&self, geometry: &FanBeamGeometry) -> Result<()> {
        self.validate(geometry)?;
        for (i, p) in self.primitives.iter().enumerate() {
            if p.mu[0] < p.mu[1] {
                return Err(Error::Validation {
                    item: format!("{} primitive {i}", self.name),
                    reason: "low-energy attenuation below high-energy attenuation".into(),
                });
            }
        }
        Ok(())
    }
}

/// Center z coordinate (mm) of slice `k`; slices are one pixel thick.
pub fn slice_center_mm(geometry: &FanBeamGeometry, k: usize) -> f64 {
    (k as f64 + 0.5) * geometry.pixel_mm
}

/// Area-sampled rasterization of a phantom into `n_slices` slices.
pub fn rasterize(spec: &PhantomSpec, geometry: &FanBeamGeometry, n_slices: usize) -> Result<Volume> {
    spec.validate(geometry)?;
    let (ny, nx, p) = (geometry.roi_ny, geometry.roi_nx, geometry.pixel_mm);
    let mut volume = Volume::zeros(2, n_slices, ny, nx);
    let sub = SUPERSAMPLE as f64;
    let weight = 1.0 / (sub * sub);
    let x0 = -(nx as f64) * p / 2.0;
    let y0 = -(ny as f64) * p / 2.0;

    for prim in &spec.primitives {
        // Coverage fraction over the bounding pixel box, shared by all slices.
        let c = prim.shape.center();
        let r = prim.shape.reach();
        let ix0 = (((c[0] - r - x0) / p).floor().max(0.0)) as usize;
        let ix1 = ((((c[0] + r - x0) / p).ceil()) as usize).min(nx);
        let iy0 = (((c[1] - r - y0) / p).floor().max(0.0)) as usize;
        let iy1 = ((((c[1] + r - y0) / p).ceil()) as usize).min(ny);
        let mut coverage = Vec::with_capacity((iy1 - iy0) * (ix1 - ix0));
        for iy in iy0..iy1 {
            for ix in ix0..ix1 {
                let mut hits = 0usize;
                for sy in 0..SUPERSAMPLE {
                    let y = y0 + (iy as f64 + (sy as f64 + 0.5) / sub) * p;
                    for sx in 0..SUPERSAMPLE {
                        let x = x0 + (ix as f64 + (sx as f64 + 0.5) / sub) * p;
                        if prim.shape.contains(x, y) {
                            hits += 1;
                        }
                    }
                }
                coverage.push(hits as f64 * weight);
            }
        }
        for k in 0..n_slices {
            let zc = slice_center_mm(geometry, k);
            if zc < prim.z_mm[0] || zc >= prim.z_mm[1] {
                continue;
            }
            for (e, mu) in prim.mu.iter().enumerate() {
                let mut idx = 0;
                for iy in iy0..iy1 {
                    for ix in ix0..ix1 {
                        volume.data[(e, k, iy, ix)] += mu * coverage[idx];
                        idx += 1;
                    }
                }
            }
        }
    }
    Ok(volume)
}

/// Post-log Gaussian approximation of Poisson counting noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Unattenuated photon count per detector sample.
    pub incident_counts: f64,
    pub seed: u64,
}

impl NoiseModel {
    /// Standard deviation of a post-log sample with clean value `line_integral`.
    pub fn sigma(&self, line_integral: f64) -> f64 {
        (line_integral.exp() / self.incident_counts).sqrt()
    }
}

/// Forward projection followed by optional noise, clamped at zero.
pub fn simulate_acquisition(
    volume: &Volume,
    geometry: &FanBeamGeometry,
    angles: &AngleSet,
    noise: Option<NoiseModel>,
) -> Result<Sinogram> {
    let mut sino = forward_project(volume, geometry, angles)?;
    if let Some(model) = noise {
        if !(model.incident_counts > 0.0) {
            return Err(Error::InvalidArgument("incident counts must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
        for v in sino.data.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = (*v + model.sigma(*v) * z).max(0.0);
        }
    }
    Ok(sino)
}

/// Representative `(80 kVp, 120 kVp)` attenuation pairs in mm⁻¹.
const MATERIALS: [[f64; 2]; 7] = [
    [0.0180, 0.0160], // plastic
    [0.0215, 0.0185], // water / organic
    [0.0250, 0.0205], // dense organic
    [0.0170, 0.0150], // rubber
    [0.0420, 0.0320], // glass
    [0.0620, 0.0440], // aluminum
    [0.0950, 0.0620], // light alloy
];

/// Size parameters of a randomized corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    /// Radius of the disk, in mm, all primitives must fit in.
    pub radius_mm: f64,
    /// Longitudinal extent of the scanned volume in mm.
    pub z_extent_mm: f64,
}

impl CorpusConfig {
    pub fn for_geometry(geometry: &FanBeamGeometry, n_slices: usize) -> Self {
        Self {
            radius_mm: 0.92 * geometry.roi_nx.min(geometry.roi_ny) as f64 * geometry.pixel_mm / 2.0,
            z_extent_mm: n_slices as f64 * geometry.pixel_mm,
        }
    }
}

fn random_point_within(rng: &mut ChaCha8Rng, radius: f64) -> [f64; 2] {
    let r = radius * rng.gen::<f64>().sqrt();
    let t = rng.gen_range(0.0..std::f64::consts::TAU);
    [r * t.cos(), r * t.sin()]
}

fn random_z(rng: &mut ChaCha8Rng, extent: f64) -> [f64; 2] {
    if rng.gen_bool(0.6) {
        [0.0, extent]
    } else {
        let a = rng.gen_range(0.0..0.5) * extent;
        let b = rng.gen_range(0.5..1.0) * extent;
        [a, b.max(a + 0.25 * extent).min(extent)]
    }
}

fn random_object(rng: &mut ChaCha8Rng, cfg: &CorpusConfig, max_size: f64) -> Primitive {
    let size = rng.gen_range(0.12..1.0) * max_size;
    let mu = MATERIALS[rng.gen_range(0..MATERIALS.len())];
    let z_mm = random_z(rng, cfg.z_extent_mm);
    let shape = match rng.gen_range(0..4) {
        0 => Shape::Disk {
            center: [0.0, 0.0],
            radius: size,
        },
        1 => Shape::Rectangle {
            center: [0.0, 0.0],
            half_size: [size, size * rng.gen_range(0.3..1.0)],
        },
        2 => Shape::RotatedRectangle {
            center: [0.0, 0.0],
            half_size: [size, size * rng.gen_range(0.15..0.6)],
            rotation: rng.gen_range(0.0..std::f64::consts::PI),
        },
        _ => Shape::Annulus {
            center: [0.0, 0.0],
            inner: size * rng.gen_range(0.4..0.8),
            outer: size,
        },
    };
    // Place the shape so it stays inside the allowed disk.
    let room = (cfg.radius_mm - shape.reach()).max(0.0);
    let center = random_point_within(rng, room);
    let shape = match shape {
        Shape::Disk { radius, .. } => Shape::Disk { center, radius },
        Shape::Rectangle { half_size, .. } => Shape::Rectangle { center, half_size },
        Shape::RotatedRectangle {
            half_size, rotation, ..
        } => Shape::RotatedRectangle {
            center,
            half_size,
            rotation,
        },
        Shape::Annulus { inner, outer, .. } => Shape::Annulus { center, inner, outer },
    };
    Primitive { shape, mu, z_mm }
}

fn simple_object(rng: &mut ChaCha8Rng, cfg: &CorpusConfig, index: usize) -> PhantomSpec {
    let n = rng.gen_range(1..=3);
    let primitives = (0..n)
        .map(|_| random_object(rng, cfg, 0.45 * cfg.radius_mm))
        .collect();
    PhantomSpec {
        name: format!("simple-{index:03}"),
        kind: PhantomKind::Simple,
        seed: 0,
        primitives,
    }
}

fn bag_object(rng: &mut ChaCha8Rng, cfg: &CorpusConfig, index: usize) -> PhantomSpec {
    // Thin rectangular frame made of four bars, plus a fabric-like fill.
    let half_w = rng.gen_range(0.55..0.68) * cfg.radius_mm;
    let half_h = rng.gen_range(0.45..0.6) * cfg.radius_mm;
    let bar = rng.gen_range(0.015..0.03) * cfg.radius_mm;
    let rotation = rng.gen_range(-0.3..0.3);
    let frame_mu = MATERIALS[5];
    let full_z = [0.0, cfg.z_extent_mm];
    let (s, c) = f64::sin_cos(rotation);
    let rot = |u: f64, v: f64| [c * u - s * v, s * u + c * v];
    let mut primitives = vec![
        Primitive {
            shape: Shape::RotatedRectangle {
                center: rot(0.0, half_h - bar),
                half_size: [half_w, bar],
                rotation,
            },
            mu: frame_mu,
            z_mm: full_z,
        },
        Primitive {
            shape: Shape::RotatedRectangle {
                center: rot(0.0, -(half_h - bar)),
                half_size: [half_w, bar],
                rotation,
            },
            mu: frame_mu,
            z_mm: full_z,
        },
        Primitive {
            shape: Shape::RotatedRectangle {
                center: rot(half_w - bar, 0.0),
                half_size: [bar, half_h - 2.0 * bar],
                rotation,
            },
            mu: frame_mu,
            z_mm: full_z,
        },
        Primitive {
            shape: Shape::RotatedRectangle {
                center: rot(-(half_w - bar), 0.0),
                half_size: [bar, half_h - 2.0 * bar],
                rotation,
            },
            mu: frame_mu,
            z_mm: full_z,
        },
    ];
    let inner = CorpusConfig {
        radius_mm: (half_h - 2.0 * bar).min(half_w - 2.0 * bar),
        ..*cfg
    };
    let n_contents = rng.gen_range(2..=11);
    for _ in 0..n_contents {
        primitives.push(random_object(rng, &inner, 0.5 * inner.radius_mm));
    }
    PhantomSpec {
        name: format!("bag-{index:03}"),
        kind: PhantomKind::Bag,
        seed: 0,
        primitives,
    }
}

/// Reproducible list of `n_simple` simple objects followed by `n_bags` bags.
pub fn generate_corpus(n_simple: usize, n_bags: usize, seed: u64, cfg: &CorpusConfig) -> Vec<PhantomSpec> {
    let mut out = Vec::with_capacity(n_simple + n_bags);
    for i in 0..n_simple {
        let case_seed = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(case_seed);
        let mut spec = simple_object(&mut rng, cfg, i);
        spec.seed = case_seed;
        out.push(spec);
    }
    for i in 0..n_bags {
        let case_seed = seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(0x1000_0000 + i as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(case_seed);
        let mut spec = bag_object(&mut rng, cfg, i);
        spec.seed = case_seed;
        out.push(spec);
    }
    out
}

/// Train / validation / test membership, as indices into a corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Counts of simple and bag cases assigned to training and validation; the
/// remainder goes to test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train: [usize; 2],
    pub validation: [usize; 2],
}

impl SplitPlan {
    /// 28 simple + 13 bags for training, 2 + 1 for validation.
    pub const PAPER: SplitPlan = SplitPlan {
        train: [28, 13],
        validation: [2, 1],
    };

    /// 7 + 7 for training, 1 + 1 for validation, leaving 4 + 4 test cases
    /// of a 12 + 12 corpus.
    pub const DESK: SplitPlan = SplitPlan {
        train: [7, 7],
        validation: [1, 1],
    };
}

/// Splits a corpus laid out as `n_simple` simple objects then `n_bags` bags.
pub fn split_corpus(n_simple: usize, n_bags: usize, plan: SplitPlan) -> Result<CorpusSplit> {
    if plan.train[0] + plan.validation[0] > n_simple || plan.train[1] + plan.validation[1] > n_bags {
        return Err(Error::InvalidArgument(format!(
            "split {plan:?} needs more cases than {n_simple} simple + {n_bags} bags"
        )));
    }
    let simple: Vec<usize> = (0..n_simple).collect();
    let bags: Vec<usize> = (n_simple..n_simple + n_bags).collect();
    let take = |v: &[usize], a: usize, b: usize| v[a..b].to_vec();
    let mut train = take(&simple, 0, plan.train[0]);
    train.extend(take(&bags, 0, plan.train[1]));
    let mut validation = take(&simple, plan.train[0], plan.train[0] + plan.validation[0]);
    validation.extend(take(&bags, plan.train[1], plan.train[1] + plan.validation[1]));
    let mut test = take(&simple, plan.train[0] + plan.validation[0], n_simple);
    test.extend(take(&bags, plan.train[1] + plan.validation[1], n_bags));
    Ok(CorpusSplit {
        train,
        validation,
        test,
    })
}
