//! Ray-driven fan-beam projector and its matched adjoint.
//!
//! Every ray runs from the source to the center of one detector cell and is
//! traversed with Siddon's algorithm, which yields the exact intersection
//! length of the ray with each pixel it crosses. Forward projection, back
//! projection and [`SystemMatrix`] all consume the same traversal, so they
//! form an exactly matched operator pair.

use ndarray::{Array4, Axis};
use rayon::prelude::*;

use crate::data::{Sinogram, Volume};
use crate::error::{Error, Result};
use crate::geometry::{AngleSet, FanBeamGeometry, Point2};

/// Pixel index (row-major `iy * nx + ix`) and intersection length in mm.
pub type RayWeight = (u32, f64);

/// Appends the pixels crossed by the segment `src -> dst` to `out`.
pub fn trace_segment(geometry: &FanBeamGeometry, src: Point2, dst: Point2, out: &mut Vec<RayWeight>) {
    let nx = geometry.roi_nx;
    let ny = geometry.roi_ny;
    let p = geometry.pixel_mm;
    let x0 = -(nx as f64) * p / 2.0;
    let y0 = -(ny as f64) * p / 2.0;
    let dx = dst.x - src.x;
    let dy = dst.y - src.y;
    let length = dx.hypot(dy);
    if length == 0.0 {
        return;
    }

    let (mut a_min, mut a_max) = (0.0f64, 1.0f64);
    for (s, d, lo, n) in [(src.x, dx, x0, nx), (src.y, dy, y0, ny)] {
        let hi = lo + n as f64 * p;
        if d == 0.0 {
            if s <= lo || s >= hi {
                return;
            }
        } else {
            let a0 = (lo - s) / d;
            let a1 = (hi - s) / d;
            a_min = a_min.max(a0.min(a1));
            a_max = a_max.min(a0.max(a1));
        }
    }
    if a_min >= a_max {
        return;
    }

    // Entry cell, taken at the midpoint of the first sub-step to avoid
    // landing exactly on a boundary.
    let probe = a_min + 1e-9 * (a_max - a_min);
    let px = src.x + probe * dx;
    let py = src.y + probe * dy;
    let mut ix = (((px - x0) / p).floor() as isize).clamp(0, nx as isize - 1);
    let mut iy = (((py - y0) / p).floor() as isize).clamp(0, ny as isize - 1);

    let step_x: isize = if dx > 0.0 { 1 } else { -1 };
    let step_y: isize = if dy > 0.0 { 1 } else { -1 };
    let inc_x = if dx != 0.0 { p / dx.abs() } else { f64::INFINITY };
    let inc_y = if dy != 0.0 { p / dy.abs() } else { f64::INFINITY };
    let mut next_x = if dx > 0.0 {
        (x0 + (ix + 1) as f64 * p - src.x) / dx
    } else if dx < 0.0 {
        (x0 + ix as f64 * p - src.x) / dx
    } else {
        f64::INFINITY
    };
    let mut next_y = if dy > 0.0 {
        (y0 + (iy + 1) as f64 * p - src.y) / dy
    } else if dy < 0.0 {
        (y0 + iy as f64 * p - src.y) / dy
    } else {
        f64::INFINITY
    };

    let mut alpha = a_min;
    loop {
        let next = next_x.min(next_y).min(a_max);
        let seg = (next - alpha) * length;
        if seg > 0.0 {
            out.push(((iy as usize * nx + ix as usize) as u32, seg));
        }
        if next >= a_max {
            break;
        }
        alpha = next;
        if next_x <= next_y {
            ix += step_x;
            next_x += inc_x;
        } else {
            iy += step_y;
            next_y += inc_y;
        }
        if ix < 0 || iy < 0 || ix >= nx as isize || iy >= ny as isize {
            break;
        }
    }
}

/// Traversal of the ray hitting detector cell `cell` at dense view `view`.
pub fn trace_ray(geometry: &FanBeamGeometry, view: usize, cell: usize, out: &mut Vec<RayWeight>) {
    let beta = geometry.angle(view);
    trace_segment(
        geometry,
        geometry.source_position(beta),
        geometry.detector_position(beta, cell),
        out,
    );
}

fn check_angles(angles: &AngleSet, geometry: &FanBeamGeometry) -> Result<()> {
    if angles.n_full() != geometry.n_views_full {
        return Err(Error::Shape(format!(
            "angle set is defined on a {}-view grid, geometry has {}",
            angles.n_full(),
            geometry.n_views_full
        )));
    }
    Ok(())
}

/// Gathers `(energy, z)` slices into a pixel-major buffer with one lane per slice.
fn interleave_volume(volume: &Volume) -> (Vec<f64>, usize) {
    let (ne, nz, ny, nx) = volume.data.dim();
    let lanes = ne * nz;
    let mut buf = vec![0.0; ny * nx * lanes];
    for ((e, z, y, x), v) in volume.data.indexed_iter() {
        buf[(y * nx + x) * lanes + e * nz + z] = *v;
    }
    (buf, lanes)
}

/// Line integrals of every `(energy, z)` slice along the rays of `angles`.
pub fn forward_project(volume: &Volume, geometry: &FanBeamGeometry, angles: &AngleSet) -> Result<Sinogram> {
    volume.check_geometry(geometry)?;
    check_angles(angles, geometry)?;
    let (ne, nz, _, _) = volume.data.dim();
    let nd = geometry.n_detectors;
    let (image, lanes) = interleave_volume(volume);

    let views: Vec<Vec<f64>> = angles
        .indices()
        .par_iter()
        .map_init(Vec::new, |ray, &view| {
            let mut acc = vec![0.0; nd * lanes];
            for cell in 0..nd {
                ray.clear();
                trace_ray(geometry, view, cell, ray);
                let out = &mut acc[cell * lanes..(cell + 1) * lanes];
                for &(pix, len) in ray.iter() {
                    let src = &image[pix as usize * lanes..(pix as usize + 1) * lanes];
                    for (o, v) in out.iter_mut().zip(src) {
                        *o += len * v;
                    }
                }
            }
            acc
        })
        .collect();

    let mut data = Array4::zeros((ne, angles.len(), nz, nd));
    for (v, acc) in views.iter().enumerate() {
        for e in 0..ne {
            for z in 0..nz {
                for cell in 0..nd {
                    data[(e, v, z, cell)] = acc[cell * lanes + e * nz + z];
                }
            }
        }
    }
    Sinogram::new(data, angles.clone())
}

/// Number of independent partial volumes used by [`back_project`]. Fixed so
/// the floating-point summation order does not depend on the thread count.
const BACKPROJECT_CHUNKS: usize = 8;

/// Adjoint of [`forward_project`]: smears every sample back along its ray.
pub fn back_project(sino: &Sinogram, geometry: &FanBeamGeometry) -> Result<Volume> {
    sino.check_geometry(geometry)?;
    let (ne, nv, nz, nd) = sino.data.dim();
    let lanes = ne * nz;
    let npix = geometry.roi_nx * geometry.roi_ny;

    // Sinogram values regrouped per (view, cell) with one lane per slice.
    let mut samples = vec![0.0; nv * nd * lanes];
    for ((e, v, z, cell), g) in sino.data.indexed_iter() {
        samples[(v * nd + cell) * lanes + e * nz + z] = *g;
    }

    let chunk = nv.div_ceil(BACKPROJECT_CHUNKS).max(1);
    let partials: Vec<Vec<f64>> = (0..nv)
        .step_by(chunk)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|start| {
            let mut acc = vec![0.0; npix * lanes];
            let mut ray = Vec::new();
            for v in start..(start + chunk).min(nv) {
                let view = sino.angles.indices()[v];
                for cell in 0..nd {
                    let g = &samples[(v * nd + cell) * lanes..(v * nd + cell + 1) * lanes];
                    if g.iter().all(|x| *x == 0.0) {
                        continue;
                    }
                    ray.clear();
                    trace_ray(geometry, view, cell, &mut ray);
                    for &(pix, len) in &ray {
                        let dst = &mut acc[pix as usize * lanes..(pix as usize + 1) * lanes];
                        for (d, s) in dst.iter_mut().zip(g) {
                            *d += len * s;
                        }
                    }
                }
            }
            acc
        })
        .collect();

    let mut total = vec![0.0; npix * lanes];
    for part in &partials {
        for (t, p) in total.iter_mut().zip(part) {
            *t += p;
        }
    }
    let mut volume = Volume::zeros(ne, nz, geometry.roi_ny, geometry.roi_nx);
    for ((e, z, y, x), v) in volume.data.indexed_iter_mut() {
        *v = total[(y * geometry.roi_nx + x) * lanes + e * nz + z];
    }
    Ok(volume)
}

/// Restricts a dense sinogram to the views in `angles`.
pub fn sample_views(full: &Sinogram, angles: &AngleSet) -> Result<Sinogram> {
    if angles.n_full() != full.angles.n_full() {
        return Err(Error::Range(format!(
            "requested views live on a {}-view grid, sinogram on {}",
            angles.n_full(),
            full.angles.n_full()
        )));
    }
    let rows = angles
        .indices()
        .iter()
        .map(|&i| {
            full.angles
                .position(i)
                .ok_or_else(|| Error::Range(format!("view {i} is not present in the source sinogram")))
        })
        .collect::<Result<Vec<_>>>()?;
    Sinogram::new(full.data.select(Axis(1), &rows), angles.clone())
}

/// Embeds a sparse sinogram in the dense grid, zero on unmeasured views.
pub fn zero_pad_views(sparse: &Sinogram, geometry: &FanBeamGeometry) -> Result<Sinogram> {
    if sparse.angles.n_full() != geometry.n_views_full {
        return Err(Error::Range(format!(
            "sparse views live on a {}-view grid, geometry has {}",
            sparse.angles.n_full(),
            geometry.n_views_full
        )));
    }
    let (ne, _, nz, nd) = sparse.data.dim();
    let mut dense = Sinogram::zeros(ne, AngleSet::full(geometry.n_views_full), nz, nd);
    for (row, &view) in sparse.angles.indices().iter().enumerate() {
        dense
            .data
            .index_axis_mut(Axis(1), view)
            .assign(&sparse.data.index_axis(Axis(1), row));
    }
    Ok(dense)
}

/// Cached compressed-row projection matrix for one angle set.
///
/// Row `v * n_detectors + cell` holds the traversal of that ray. Used by the
/// iterative solvers, which apply the same sparse operator many times.
#[derive(Debug, Clone)]
pub struct SystemMatrix {
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
    n_cols: usize,
}

impl SystemMatrix {
    pub fn build(geometry: &FanBeamGeometry, angles: &AngleSet) -> Result<Self> {
        check_angles(angles, geometry)?;
        let nd = geometry.n_detectors;
        let per_view: Vec<(Vec<usize>, Vec<RayWeight>)> = angles
            .indices()
            .par_iter()
            .map(|&view| {
                let mut lens = Vec::with_capacity(nd);
                let mut entries = Vec::new();
                for cell in 0..nd {
                    let before = entries.len();
                    trace_ray(geometry, view, cell, &mut entries);
                    lens.push(entries.len() - before);
                }
                (lens, entries)
            })
            .collect();
        let mut row_ptr = Vec::with_capacity(angles.len() * nd + 1);
        row_ptr.push(0);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        for (lens, entries) in per_view {
            for len in lens {
                row_ptr.push(row_ptr.last().unwrap() + len);
            }
            for (c, v) in entries {
                cols.push(c);
                vals.push(v);
            }
        }
        Ok(Self {
            row_ptr,
            cols,
            vals,
            n_cols: geometry.roi_nx * geometry.roi_ny,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// `out = A x`
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_cols);
        for (r, o) in out.iter_mut().enumerate() {
            let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
            *o = self.cols[a..b]
                .iter()
                .zip(&self.vals[a..b])
                .map(|(&c, &w)| w * x[c as usize])
                .sum();
        }
    }

    /// `out = Aᵀ y`
    pub fn apply_adjoint(&self, y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (r, &g) in y.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                out[self.cols[k] as usize] += self.vals[k] * g;
            }
        }
    }

    /// Largest singular value, estimated by power iteration on `AᵀA`.
    pub fn norm_estimate(&self, iterations: usize) -> f64 {
        let mut x = vec![1.0 / (self.n_cols as f64).sqrt(); self.n_cols];
        let mut y = vec![0.0; self.n_rows()];
        let mut sigma = 0.0;
        for _ in 0..iterations {
            self.apply(&x, &mut y);
            self.apply_adjoint(&y, &mut x);
            let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n == 0.0 {
                return 0.0;
            }
            sigma = n.sqrt();
            x.iter_mut().for_each(|v| *v /= n);
        }
        sigma
    }
}
