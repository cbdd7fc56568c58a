//! Total-variation regularized iterative reconstruction.
//!
//! Each `(energy, z)` slice solves
//!
//! ```text
//! min_f  mu_fid * ||A f - g||² + sum_pixels |∇f|₂   (optionally f >= 0)
//! ```
//!
//! Two solvers are available. The default is monotone FISTA with the TV
//! prox computed by fast gradient projection on the dual; its objective
//! never increases. The first-order primal-dual method of Chambolle and Pock
//! on the stacked operator `K = [A / ||A||; ∇]` is kept as an alternative:
//! it is cheaper per iteration but its objective oscillates.

use ndarray::{Array2, Array3, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Sinogram, Volume};
use crate::error::{Error, Result};
use crate::geometry::FanBeamGeometry;
use crate::projector::SystemMatrix;

/// Upper bound on `||K||²` for the normalized projector stacked with the
/// forward-difference gradient (`||∇||² <= 8`).
pub const STACKED_NORM_SQ_BOUND: f64 = 9.0;

/// Iterations excluded from the monotonicity contract.
pub const WARMUP_ITERATIONS: usize = 5;

/// Window used for the relative-change stopping rule.
pub const CONVERGENCE_WINDOW: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MbirSolver {
    Mfista,
    PrimalDual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MbirConfig {
    /// Weight of the squared data misfit against isotropic TV.
    pub mu_fid: f64,
    pub max_iterations: usize,
    pub solver: MbirSolver,
    /// Dual iterations of the TV prox per outer MFISTA iteration.
    pub inner_iterations: usize,
    /// Primal step size (primal-dual only).
    pub tau: f64,
    /// Dual step size (primal-dual only).
    pub sigma: f64,
    /// Stop once the objective changes by less than this fraction over
    /// [`CONVERGENCE_WINDOW`] iterations.
    pub tolerance: f64,
    pub non_negative: bool,
}

impl Default for MbirConfig {
    fn default() -> Self {
        // Attenuation images are O(1e-2) while the TV dual is O(1): favor
        // small primal and large dual steps, keeping tau * sigma * 9 = 1.
        let ratio = 0.02;
        let step = 1.0 / STACKED_NORM_SQ_BOUND.sqrt();
        Self {
            mu_fid: 10.0,
            max_iterations: 150,
            solver: MbirSolver::Mfista,
            inner_iterations: 5,
            tau: step * ratio,
            sigma: step / ratio,
            tolerance: 1e-5,
            non_negative: true,
        }
    }
}

impl MbirConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, value) in [
            ("mu_fid", self.mu_fid),
            ("tau", self.tau),
            ("sigma", self.sigma),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::config(field, format!("must be positive and finite, got {value}")));
            }
        }
        // Zero disables early stopping.
        if !(self.tolerance.is_finite() && self.tolerance >= 0.0) {
            return Err(Error::config("tolerance", format!("must be finite and non-negative, got {}", self.tolerance)));
        }
        if self.max_iterations == 0 {
            return Err(Error::config("max_iterations", "must be at least 1"));
        }
        if self.solver == MbirSolver::Mfista && self.inner_iterations == 0 {
            return Err(Error::config("inner_iterations", "must be at least 1"));
        }
        if self.tau * self.sigma * STACKED_NORM_SQ_BOUND > 1.0 + 1e-12 {
            return Err(Error::config(
                "tau",
                format!(
                    "tau * sigma * ||K||² = {} violates the primal-dual step condition",
                    self.tau * self.sigma * STACKED_NORM_SQ_BOUND
                ),
            ));
        }
        Ok(())
    }
}

/// Forward differences along x and y with zero difference on the last
/// column and row.
pub fn tv_gradient(image: &Array2<f64>) -> Array3<f64> {
    let (ny, nx) = image.dim();
    let mut out = Array3::zeros((2, ny, nx));
    let flat = image.as_slice().map(<[f64]>::to_vec).unwrap_or_else(|| image.iter().copied().collect());
    let mut gx = vec![0.0; ny * nx];
    let mut gy = vec![0.0; ny * nx];
    gradient(&flat, nx, ny, &mut gx, &mut gy);
    for (o, v) in out.index_axis_mut(Axis(0), 0).iter_mut().zip(&gx) {
        *o = *v;
    }
    for (o, v) in out.index_axis_mut(Axis(0), 1).iter_mut().zip(&gy) {
        *o = *v;
    }
    out
}

/// Divergence, the negative adjoint of [`tv_gradient`].
pub fn tv_divergence(field: &Array3<f64>) -> Array2<f64> {
    let (_, ny, nx) = field.dim();
    let gx: Vec<f64> = field.index_axis(Axis(0), 0).iter().copied().collect();
    let gy: Vec<f64> = field.index_axis(Axis(0), 1).iter().copied().collect();
    let mut out = vec![0.0; ny * nx];
    divergence(&gx, &gy, nx, ny, &mut out);
    Array2::from_shape_vec((ny, nx), out).expect("shape matches")
}

/// Isotropic total variation `sum |∇f|₂` of a slice.
pub fn total_variation(image: &[f64], nx: usize, ny: usize) -> f64 {
    let mut tv = 0.0;
    for y in 0..ny {
        for x in 0..nx {
            let i = y * nx + x;
            let dx = if x + 1 < nx { image[i + 1] - image[i] } else { 0.0 };
            let dy = if y + 1 < ny { image[i + nx] - image[i] } else { 0.0 };
            tv += dx.hypot(dy);
        }
    }
    tv
}

/// Sum of the slice-wise total variation over every `(energy, z)` slice.
pub fn volume_total_variation(volume: &Volume) -> f64 {
    let (_, _, ny, nx) = volume.data.dim();
    volume
        .data
        .outer_iter()
        .flat_map(|e| e.outer_iter().map(|s| s.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>())
        .map(|s| total_variation(&s, nx, ny))
        .sum()
}

fn gradient(f: &[f64], nx: usize, ny: usize, gx: &mut [f64], gy: &mut [f64]) {
    for y in 0..ny {
        for x in 0..nx {
            let i = y * nx + x;
            gx[i] = if x + 1 < nx { f[i + 1] - f[i] } else { 0.0 };
            gy[i] = if y + 1 < ny { f[i + nx] - f[i] } else { 0.0 };
        }
    }
}

fn divergence(gx: &[f64], gy: &[f64], nx: usize, ny: usize, out: &mut [f64]) {
    for y in 0..ny {
        for x in 0..nx {
            let i = y * nx + x;
            let mut d = 0.0;
            if x + 1 < nx {
                d += gx[i];
            }
            if x > 0 {
                d -= gx[i - 1];
            }
            if y + 1 < ny {
                d += gy[i];
            }
            if y > 0 {
                d -= gy[i - nx];
            }
            out[i] = d;
        }
    }
}

/// Outcome of one slice solve.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceSolve {
    pub image: Vec<f64>,
    /// Objective after each iteration.
    pub objective: Vec<f64>,
}

/// Reconstruction plus per-slice objective histories, indexed `[energy][z]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MbirResult {
    pub volume: Volume,
    pub history: Vec<Vec<Vec<f64>>>,
}

impl MbirResult {
    pub fn iterations(&self) -> usize {
        self.history.iter().flatten().map(Vec::len).max().unwrap_or(0)
    }
}

/// TV-regularized least squares for a single slice.
pub struct SliceSolver<'a> {
    matrix: &'a SystemMatrix,
    norm: f64,
    nx: usize,
    ny: usize,
}

impl<'a> SliceSolver<'a> {
    pub fn new(matrix: &'a SystemMatrix, geometry: &FanBeamGeometry) -> Self {
        let norm = matrix.norm_estimate(40) * 1.01;
        Self {
            matrix,
            norm: if norm > 0.0 { norm } else { 1.0 },
            nx: geometry.roi_nx,
            ny: geometry.roi_ny,
        }
    }

    pub fn objective(&self, f: &[f64], g: &[f64], mu_fid: f64, residual: &mut [f64]) -> f64 {
        self.matrix.apply(f, residual);
        let misfit: f64 = residual.iter().zip(g).map(|(r, g)| (r - g) * (r - g)).sum();
        mu_fid * misfit + total_variation(f, self.nx, self.ny)
    }

    pub fn solve(&self, g: &[f64], cfg: &MbirConfig) -> Result<SliceSolve> {
        match cfg.solver {
            MbirSolver::Mfista => self.solve_mfista(g, cfg),
            MbirSolver::PrimalDual => self.solve_primal_dual(g, cfg),
        }
    }

    pub fn solve_primal_dual(&self, g: &[f64], cfg: &MbirConfig) -> Result<SliceSolve> {
        let npix = self.nx * self.ny;
        let nrows = self.matrix.n_rows();
        let a = self.norm;
        // Fidelity in normalized units: c * ||Â f - ĝ||² with Â = A/a, ĝ = g/a.
        let c = cfg.mu_fid * a * a;
        let g_hat: Vec<f64> = g.iter().map(|v| v / a).collect();
        let (tau, sigma) = (cfg.tau, cfg.sigma);

        let mut f = vec![0.0; npix];
        let mut f_prev = vec![0.0; npix];
        let mut f_bar = vec![0.0; npix];
        let mut p = vec![0.0; nrows];
        let mut qx = vec![0.0; npix];
        let mut qy = vec![0.0; npix];
        // A f and A f_prev, so that A f_bar = 2 A f - A f_prev needs no product.
        let mut af = vec![0.0; nrows];
        let mut af_prev = vec![0.0; nrows];
        let mut back = vec![0.0; npix];
        let mut gx = vec![0.0; npix];
        let mut gy = vec![0.0; npix];
        let mut div = vec![0.0; npix];
        let mut objective = Vec::with_capacity(cfg.max_iterations);
        let shrink = 1.0 / (1.0 + sigma / (2.0 * c));

        for it in 0..cfg.max_iterations {
            // Dual ascent on the data term: prox of the conjugate of c||y - ĝ||².
            for i in 0..nrows {
                let y = (2.0 * af[i] - af_prev[i]) / a;
                p[i] = (p[i] + sigma * (y - g_hat[i])) * shrink;
            }
            // Dual ascent on TV: pointwise projection onto the unit ball.
            gradient(&f_bar, self.nx, self.ny, &mut gx, &mut gy);
            for i in 0..npix {
                let ux = qx[i] + sigma * gx[i];
                let uy = qy[i] + sigma * gy[i];
                let n = ux.hypot(uy).max(1.0);
                qx[i] = ux / n;
                qy[i] = uy / n;
            }
            // Primal descent.
            self.matrix.apply_adjoint(&p, &mut back);
            divergence(&qx, &qy, self.nx, self.ny, &mut div);
            std::mem::swap(&mut f, &mut f_prev);
            for i in 0..npix {
                let mut v = f_prev[i] - tau * (back[i] / a - div[i]);
                if cfg.non_negative && v < 0.0 {
                    v = 0.0;
                }
                f[i] = v;
                f_bar[i] = 2.0 * v - f_prev[i];
            }
            std::mem::swap(&mut af, &mut af_prev);
            self.matrix.apply(&f, &mut af);

            let misfit: f64 = af.iter().zip(g).map(|(r, g)| (r - g) * (r - g)).sum();
            let value = cfg.mu_fid * misfit + total_variation(&f, self.nx, self.ny);
            if !value.is_finite() {
                return Err(Error::Diverged {
                    iteration: it,
                    reason: format!("objective became {value}"),
                });
            }
            objective.push(value);
            if it >= WARMUP_ITERATIONS + CONVERGENCE_WINDOW {
                let old = objective[it - CONVERGENCE_WINDOW];
                if (old - value).abs() <= cfg.tolerance * value.abs().max(f64::MIN_POSITIVE) {
                    break;
                }
            }
        }
        Ok(SliceSolve { image: f, objective })
    }
}

/// Proximal map of `w * TV + indicator(x >= 0)` at `b` by the fast gradient
/// projection method on the dual. `dual` holds the warm-started dual field
/// `(qx, qy)` and is updated in place.
pub fn tv_prox(
    b: &[f64],
    nx: usize,
    ny: usize,
    w: f64,
    non_negative: bool,
    iterations: usize,
    dual: &mut (Vec<f64>, Vec<f64>),
    out: &mut [f64],
) {
    let npix = nx * ny;
    if w == 0.0 {
        for (o, v) in out.iter_mut().zip(b) {
            *o = if non_negative { v.max(0.0) } else { *v };
        }
        return;
    }
    let clamp = |v: f64| if non_negative { v.max(0.0) } else { v };
    let (qx, qy) = dual;
    let mut rx = qx.clone();
    let mut ry = qy.clone();
    let mut div = vec![0.0; npix];
    let mut x = vec![0.0; npix];
    let mut gx = vec![0.0; npix];
    let mut gy = vec![0.0; npix];
    let step = 1.0 / (8.0 * w);
    let mut t = 1.0f64;
    for _ in 0..iterations {
        divergence(&rx, &ry, nx, ny, &mut div);
        for i in 0..npix {
            x[i] = clamp(b[i] + w * div[i]);
        }
        gradient(&x, nx, ny, &mut gx, &mut gy);
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let momentum = (t - 1.0) / t_next;
        for i in 0..npix {
            let ux = rx[i] + step * gx[i];
            let uy = ry[i] + step * gy[i];
            let n = ux.hypot(uy).max(1.0);
            let (nqx, nqy) = (ux / n, uy / n);
            rx[i] = nqx + momentum * (nqx - qx[i]);
            ry[i] = nqy + momentum * (nqy - qy[i]);
            qx[i] = nqx;
            qy[i] = nqy;
        }
        t = t_next;
    }
    divergence(qx, qy, nx, ny, &mut div);
    for i in 0..npix {
        out[i] = clamp(b[i] + w * div[i]);
    }
}

impl SliceSolver<'_> {
    /// Monotone FISTA: accelerated proximal gradient on the data term with
    /// the TV prox, keeping the better of the new and previous iterate.
    pub fn solve_mfista(&self, g: &[f64], cfg: &MbirConfig) -> Result<SliceSolve> {
        let inner = cfg.inner_iterations.max(1);
        let npix = self.nx * self.ny;
        let nrows = self.matrix.n_rows();
        let lipschitz = 2.0 * cfg.mu_fid * self.norm * self.norm;
        let mut x = vec![0.0; npix];
        let mut x_prev = vec![0.0; npix];
        let mut y = vec![0.0; npix];
        let mut z = vec![0.0; npix];
        let mut ax = vec![0.0; nrows];
        let mut ax_prev = vec![0.0; nrows];
        let mut ay = vec![0.0; nrows];
        let mut az = vec![0.0; nrows];
        let mut back = vec![0.0; npix];
        let mut b = vec![0.0; npix];
        let mut dual = (vec![0.0; npix], vec![0.0; npix]);
        let mut t = 1.0f64;
        let misfit = |ar: &[f64]| -> f64 { ar.iter().zip(g).map(|(r, g)| (r - g) * (r - g)).sum() };
        let mut fx = cfg.mu_fid * misfit(&ax) + total_variation(&x, self.nx, self.ny);
        let mut objective = Vec::with_capacity(cfg.max_iterations);
        for it in 0..cfg.max_iterations {
            for i in 0..nrows {
                ay[i] -= g[i];
            }
            self.matrix.apply_adjoint(&ay, &mut back);
            for i in 0..npix {
                b[i] = y[i] - 2.0 * cfg.mu_fid * back[i] / lipschitz;
            }
            tv_prox(&b, self.nx, self.ny, 1.0 / lipschitz, cfg.non_negative, inner, &mut dual, &mut z);
            self.matrix.apply(&z, &mut az);
            let fz = cfg.mu_fid * misfit(&az) + total_variation(&z, self.nx, self.ny);
            if !fz.is_finite() {
                return Err(Error::Diverged {
                    iteration: it,
                    reason: format!("objective became {fz}"),
                });
            }
            x_prev.copy_from_slice(&x);
            ax_prev.copy_from_slice(&ax);
            if fz <= fx {
                x.copy_from_slice(&z);
                ax.copy_from_slice(&az);
                fx = fz;
            }
            let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
            let (cz, cx) = (t / t_next, (t - 1.0) / t_next);
            for i in 0..npix {
                y[i] = x[i] + cz * (z[i] - x[i]) + cx * (x[i] - x_prev[i]);
            }
            for i in 0..nrows {
                ay[i] = ax[i] + cz * (az[i] - ax[i]) + cx * (ax[i] - ax_prev[i]);
            }
            t = t_next;
            objective.push(fx);
            if it >= WARMUP_ITERATIONS + CONVERGENCE_WINDOW {
                let old = objective[it - CONVERGENCE_WINDOW];
                if (old - fx).abs() <= cfg.tolerance * fx.abs().max(f64::MIN_POSITIVE) {
                    break;
                }
            }
        }
        Ok(SliceSolve { image: x, objective })
    }
}

/// Reconstructs every slice of a sparse-view sinogram with TV-MBIR.
pub fn mbir_tv(g_sparse: &Sinogram, geometry: &FanBeamGeometry, cfg: &MbirConfig) -> Result<MbirResult> {
    cfg.validate()?;
    g_sparse.check_geometry(geometry)?;
    let matrix = SystemMatrix::build(geometry, &g_sparse.angles)?;
    let solver = SliceSolver::new(&matrix, geometry);
    let (ne, nv, nz, nd) = g_sparse.data.dim();
    let jobs: Vec<(usize, usize)> = (0..ne).flat_map(|e| (0..nz).map(move |z| (e, z))).collect();
    let solves: Vec<SliceSolve> = jobs
        .par_iter()
        .map(|&(e, z)| {
            let mut g = Vec::with_capacity(nv * nd);
            for v in 0..nv {
                for d in 0..nd {
                    g.push(g_sparse.data[(e, v, z, d)]);
                }
            }
            solver.solve(&g, cfg)
        })
        .collect::<Result<_>>()?;

    let mut volume = Volume::zeros(ne, nz, geometry.roi_ny, geometry.roi_nx);
    let mut history = vec![vec![Vec::new(); nz]; ne];
    for (&(e, z), solve) in jobs.iter().zip(solves) {
        for (dst, src) in volume.data.index_axis_mut(Axis(0), e).index_axis_mut(Axis(0), z).iter_mut().zip(&solve.image) {
            *dst = *src;
        }
        history[e][z] = solve.objective;
    }
    Ok(MbirResult { volume, history })
}

/// Whether `history` never increases by more than `slack` (relative) after
/// the warm-up iterations.
pub fn is_monotone_after_warmup(history: &[f64], slack: f64) -> bool {
    history
        .windows(2)
        .skip(WARMUP_ITERATIONS)
        .all(|w| w[1] <= w[0] + slack * w[0].abs())
}

/// Per-slice TV denoising: `argmin_f ½||f - v||² + weight * TV(f)`.
pub fn tv_denoise_slice(v: &[f64], nx: usize, ny: usize, weight: f64, iterations: usize) -> Vec<f64> {
    let mut out = vec![0.0; nx * ny];
    let mut dual = (vec![0.0; nx * ny], vec![0.0; nx * ny]);
    tv_prox(v, nx, ny, weight, false, iterations, &mut dual, &mut out);
    out
}
