//! Fan-beam filtered backprojection for the flat detector.
//!
//! Projections are rescaled to a virtual detector through the isocenter,
//! cosine weighted, ramp filtered by zero-padded FFT convolution and
//! backprojected with the `1/U²` distance weight of the divergent beam.

use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::data::{Sinogram, Volume};
use crate::error::{Error, Result};
use crate::geometry::FanBeamGeometry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterKind {
    RamLak,
    SheppLogan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FbpConfig {
    pub filter: FilterKind,
    /// Fraction of the Nyquist frequency kept by the filter, in (0, 1].
    pub cutoff: f64,
    /// Convolution length; `None` picks the next power of two ≥ 2·n_detectors.
    pub padding: Option<usize>,
}

impl Default for FbpConfig {
    fn default() -> Self {
        Self {
            filter: FilterKind::RamLak,
            cutoff: 1.0,
            padding: None,
        }
    }
}

impl FbpConfig {
    pub fn validate(&self, geometry: &FanBeamGeometry) -> Result<()> {
        if !(self.cutoff > 0.0 && self.cutoff <= 1.0) {
            return Err(Error::config("cutoff", format!("must lie in (0, 1], got {}", self.cutoff)));
        }
        if let Some(p) = self.padding {
            if p < geometry.n_detectors {
                return Err(Error::config(
                    "padding",
                    format!("{p} is shorter than the {} detector cells", geometry.n_detectors),
                ));
            }
        }
        Ok(())
    }

    fn padded_len(&self, n_detectors: usize) -> usize {
        self.padding
            .unwrap_or_else(|| (2 * n_detectors).next_power_of_two())
    }
}

/// Frequency response of the windowed discrete ramp filter, including the
/// sample spacing factor of the convolution.
struct RampFilter {
    len: usize,
    response: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl RampFilter {
    fn new(cfg: &FbpConfig, n_detectors: usize, spacing: f64) -> Self {
        let len = cfg.padded_len(n_detectors);
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(len);
        let inverse = planner.plan_fft_inverse(len);

        // Band-limited ramp in the spatial domain, wrapped circularly.
        let mut kernel = vec![Complex::new(0.0, 0.0); len];
        let reach = (n_detectors as isize - 1).min(len as isize / 2);
        for n in -reach..=reach {
            let value = if n == 0 {
                1.0 / (4.0 * spacing * spacing)
            } else if n % 2 != 0 {
                -1.0 / (std::f64::consts::PI * std::f64::consts::PI * (n * n) as f64 * spacing * spacing)
            } else {
                0.0
            };
            kernel[n.rem_euclid(len as isize) as usize].re = value;
        }
        forward.process(&mut kernel);

        let nyquist_cut = 0.5 * cfg.cutoff;
        let response = kernel
            .iter()
            .enumerate()
            .map(|(k, h)| {
                let nu = (k.min(len - k)) as f64 / len as f64;
                if nu > nyquist_cut + 1e-12 {
                    return 0.0;
                }
                let window = match cfg.filter {
                    FilterKind::RamLak => 1.0,
                    FilterKind::SheppLogan => {
                        let arg = std::f64::consts::PI * nu / (2.0 * nyquist_cut);
                        if arg == 0.0 {
                            1.0
                        } else {
                            arg.sin() / arg
                        }
                    }
                };
                // Scale by the spacing (convolution integral) and 1/len (unnormalized IFFT).
                h.re * window * spacing / len as f64
            })
            .collect();
        Self {
            len,
            response,
            forward,
            inverse,
        }
    }

    fn apply(&self, row: &[f64], out: &mut [f64], scratch: &mut Vec<Complex<f64>>) {
        scratch.clear();
        scratch.extend(row.iter().map(|&v| Complex::new(v, 0.0)));
        scratch.resize(self.len, Complex::new(0.0, 0.0));
        self.forward.process(scratch);
        for (c, h) in scratch.iter_mut().zip(&self.response) {
            *c *= *h;
        }
        self.inverse.process(scratch);
        for (o, c) in out.iter_mut().zip(scratch.iter()) {
            *o = c.re;
        }
    }
}

/// Filters and backprojects the views of `sino` with angular weight `step`.
fn weighted_backprojection(sino: &Sinogram, geometry: &FanBeamGeometry, cfg: &FbpConfig, step: f64) -> Result<Volume> {
    sino.check_geometry(geometry)?;
    cfg.validate(geometry)?;
    let (ne, nv, nz, nd) = sino.data.dim();
    let lanes = ne * nz;
    let dso = geometry.dso_mm;
    let magnification = geometry.dsd_mm / dso;
    let spacing = geometry.det_pitch_mm / magnification;
    let filter = RampFilter::new(cfg, nd, spacing);
    let center = (nd as f64 - 1.0) / 2.0;

    let cosine: Vec<f64> = (0..nd)
        .map(|j| {
            let s = geometry.detector_offset(j) / magnification;
            dso / (dso * dso + s * s).sqrt()
        })
        .collect();

    // Filtered projections laid out as [view][cell][lane].
    let filtered: Vec<Vec<f64>> = (0..nv)
        .into_par_iter()
        .map_init(
            || (vec![0.0; nd], vec![0.0; nd], Vec::new()),
            |(row, q, scratch), v| {
                let mut out = vec![0.0; nd * lanes];
                for e in 0..ne {
                    for z in 0..nz {
                        for j in 0..nd {
                            row[j] = sino.data[(e, v, z, j)] * cosine[j];
                        }
                        filter.apply(row, q, scratch);
                        let lane = e * nz + z;
                        for j in 0..nd {
                            out[j * lanes + lane] = q[j];
                        }
                    }
                }
                out
            },
        )
        .collect();

    let trig: Vec<(f64, f64)> = sino
        .angles
        .indices()
        .iter()
        .map(|&i| geometry.angle(i).sin_cos())
        .collect();
    let (ny, nx) = (geometry.roi_ny, geometry.roi_nx);
    let rows: Vec<Vec<f64>> = (0..ny)
        .into_par_iter()
        .map(|iy| {
            let mut acc = vec![0.0; nx * lanes];
            for (v, &(sin, cos)) in trig.iter().enumerate() {
                let q = &filtered[v];
                for ix in 0..nx {
                    let p = geometry.pixel_center(iy, ix);
                    let depth = dso - (p.x * cos + p.y * sin);
                    let s_virtual = dso * (-p.x * sin + p.y * cos) / depth;
                    let u = depth / dso;
                    let pos = s_virtual / spacing + center;
                    if pos < 0.0 || pos > (nd - 1) as f64 {
                        continue;
                    }
                    let i0 = (pos.floor() as usize).min(nd.saturating_sub(2));
                    let frac = pos - i0 as f64;
                    let w = 1.0 / (u * u);
                    let a = &q[i0 * lanes..(i0 + 1) * lanes];
                    let b = if nd > 1 { &q[(i0 + 1) * lanes..(i0 + 2) * lanes] } else { a };
                    let dst = &mut acc[ix * lanes..(ix + 1) * lanes];
                    for l in 0..lanes {
                        dst[l] += w * ((1.0 - frac) * a[l] + frac * b[l]);
                    }
                }
            }
            acc
        })
        .collect();

    let scale = step / 2.0;
    let mut volume = Volume::zeros(ne, nz, ny, nx);
    for ((e, z, y, x), v) in volume.data.indexed_iter_mut() {
        *v = scale * rows[y][x * lanes + e * nz + z];
    }
    Ok(volume)
}

/// Reconstructs a volume from a sinogram on the full dense view grid.
pub fn fbp(sino: &Sinogram, geometry: &FanBeamGeometry, cfg: &FbpConfig) -> Result<Volume> {
    if !sino.angles.is_full() {
        return Err(Error::Contract(format!(
            "fbp needs all {} dense views but got {}; use right_inverse for sparse data",
            sino.angles.n_full(),
            sino.angles.len()
        )));
    }
    weighted_backprojection(sino, geometry, cfg, geometry.angular_step())
}

/// FBP of the zero-padded sparse sinogram with the sparse angular step.
///
/// Zero-padded views contribute nothing to the backprojection, so only the
/// measured views are filtered.
pub fn right_inverse(g_sparse: &Sinogram, geometry: &FanBeamGeometry, cfg: &FbpConfig) -> Result<Volume> {
    weighted_backprojection(g_sparse, geometry, cfg, g_sparse.angles.angular_step())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{sparse_angles, AngleSet};
    use crate::projector::{forward_project, zero_pad_views};

    fn small() -> FanBeamGeometry {
        FanBeamGeometry {
            dsd_mm: 400.0,
            dso_mm: 250.0,
            n_detectors: 96,
            det_pitch_mm: 1.0,
            roi_nx: 48,
            roi_ny: 48,
            pixel_mm: 1.0,
            n_views_full: 90,
        }
    }

    #[test]
    fn zero_in_zero_out() {
        let g = small();
        let s = Sinogram::zeros(2, AngleSet::full(g.n_views_full), 2, g.n_detectors);
        let v = fbp(&s, &g, &FbpConfig::default()).unwrap();
        assert!(v.data.iter().all(|x| *x == 0.0));
        let sparse = Sinogram::zeros(2, sparse_angles(&g, 9).unwrap(), 2, g.n_detectors);
        assert!(right_inverse(&sparse, &g, &FbpConfig::default())
            .unwrap()
            .data
            .iter()
            .all(|x| *x == 0.0));
    }

    #[test]
    fn sparse_input_rejected_by_fbp() {
        let g = small();
        let sparse = Sinogram::zeros(1, sparse_angles(&g, 9).unwrap(), 1, g.n_detectors);
        assert!(matches!(fbp(&sparse, &g, &FbpConfig::default()), Err(Error::Contract(_))));
    }

    #[test]
    fn config_validation() {
        let g = small();
        let mut cfg = FbpConfig::default();
        cfg.cutoff = 0.0;
        assert!(cfg.validate(&g).is_err());
        cfg.cutoff = 1.0;
        cfg.padding = Some(10);
        assert!(cfg.validate(&g).is_err());
    }

    #[test]
    fn full_set_right_inverse_equals_fbp() {
        let g = small();
        let mut vol = Volume::zeros(1, 1, g.roi_ny, g.roi_nx);
        vol.data[(0, 0, 20, 25)] = 1.0;
        vol.data[(0, 0, 30, 10)] = 0.5;
        let full = AngleSet::full(g.n_views_full);
        let s = forward_project(&vol, &g, &full).unwrap();
        let a = fbp(&s, &g, &FbpConfig::default()).unwrap();
        let b = right_inverse(&s, &g, &FbpConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn right_inverse_matches_fbp_of_padded_views() {
        let g = small();
        let mut vol = Volume::zeros(1, 1, g.roi_ny, g.roi_nx);
        vol.data[(0, 0, 24, 24)] = 1.0;
        let sparse_set = sparse_angles(&g, 9).unwrap();
        let s = forward_project(&vol, &g, &sparse_set).unwrap();
        let padded = zero_pad_views(&s, &g).unwrap();
        let dense = fbp(&padded, &g, &FbpConfig::default()).unwrap();
        let ri = right_inverse(&s, &g, &FbpConfig::default()).unwrap();
        // Same backprojection; only the angular weight differs.
        let ratio = g.n_views_full as f64 / 9.0;
        for (a, b) in dense.data.iter().zip(ri.data.iter()) {
            assert!((a * ratio - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn linear_in_sinogram() {
        let g = small();
        let full = AngleSet::full(g.n_views_full);
        let mut a = Volume::zeros(1, 1, g.roi_ny, g.roi_nx);
        let mut b = a.clone();
        a.data[(0, 0, 10, 12)] = 1.0;
        b.data[(0, 0, 33, 29)] = 2.0;
        let sa = forward_project(&a, &g, &full).unwrap();
        let sb = forward_project(&b, &g, &full).unwrap();
        let mut sum = sa.clone();
        sum.data += &sb.data;
        let cfg = FbpConfig {
            filter: FilterKind::SheppLogan,
            ..FbpConfig::default()
        };
        let fa = fbp(&sa, &g, &cfg).unwrap();
        let fb = fbp(&sb, &g, &cfg).unwrap();
        let fs = fbp(&sum, &g, &cfg).unwrap();
        for ((x, y), z) in fa.data.iter().zip(fb.data.iter()).zip(fs.data.iter()) {
            assert!((x + y - z).abs() < 1e-12);
        }
    }
}
