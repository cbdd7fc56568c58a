//! Stationary multi-source fan-beam scanner geometry.
//!
//! The scanner is modeled slice by slice as a flat-detector fan beam. A
//! view angle `beta` places the source at `dso * (cos beta, sin beta)` and
//! the detector line, perpendicular to the central ray, at distance
//! `dsd - dso` on the opposite side of the isocenter. Detector cell `j` sits
//! at signed offset `(j - (n - 1) / 2) * pitch` along `(-sin beta, cos beta)`.
//!
//! Image pixel `(iy, ix)` is centered at
//! `((ix - (nx - 1) / 2) * pixel, (iy - (ny - 1) / 2) * pixel)`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use ndarray::{s, Array4};
use serde::{Deserialize, Serialize};

use crate::data::Sinogram;
use crate::error::{Error, Result};

/// Two-dimensional point or direction in mm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, other: Point2) -> f64 {
        self.x * other.x + self.y * other.y
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FanBeamGeometry {
    pub dsd_mm: f64,
    pub dso_mm: f64,
    pub n_detectors: usize,
    pub det_pitch_mm: f64,
    pub roi_nx: usize,
    pub roi_ny: usize,
    pub pixel_mm: f64,
    pub n_views_full: usize,
}

impl FanBeamGeometry {
    /// Constants of the published 9-source baggage scanner.
    pub fn paper() -> Self {
        Self {
            dsd_mm: 1202.6,
            dso_mm: 648.2,
            n_detectors: 384,
            det_pitch_mm: 1.5,
            roi_nx: 256,
            roi_ny: 256,
            pixel_mm: 2.0,
            n_views_full: 720,
        }
    }

    /// Laptop-sized geometry: 128x128 ROI of 1 mm pixels, fully inside the
    /// fan of 256 detector cells, with 252 dense views (a multiple of 9).
    pub fn desk() -> Self {
        Self {
            dsd_mm: 1202.6,
            dso_mm: 648.2,
            n_detectors: 256,
            det_pitch_mm: 1.5,
            roi_nx: 128,
            roi_ny: 128,
            pixel_mm: 1.0,
            n_views_full: 252,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dsd_mm", self.dsd_mm),
            ("dso_mm", self.dso_mm),
            ("det_pitch_mm", self.det_pitch_mm),
            ("pixel_mm", self.pixel_mm),
        ];
        for (field, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::config(field, format!("must be a positive length, got {value}")));
            }
        }
        let counts = [
            ("n_detectors", self.n_detectors),
            ("roi_nx", self.roi_nx),
            ("roi_ny", self.roi_ny),
            ("n_views_full", self.n_views_full),
        ];
        for (field, value) in counts {
            if value == 0 {
                return Err(Error::config(field, "must be at least 1"));
            }
        }
        if self.dsd_mm <= self.dso_mm {
            return Err(Error::config(
                "dsd_mm",
                format!("must exceed dso_mm ({} <= {})", self.dsd_mm, self.dso_mm),
            ));
        }
        Ok(())
    }

    pub fn angle(&self, index: usize) -> f64 {
        2.0 * PI * index as f64 / self.n_views_full as f64
    }

    pub fn angles_full(&self) -> Vec<f64> {
        (0..self.n_views_full).map(|i| self.angle(i)).collect()
    }

    pub fn angular_step(&self) -> f64 {
        2.0 * PI / self.n_views_full as f64
    }

    pub fn source_position(&self, beta: f64) -> Point2 {
        Point2::new(self.dso_mm * beta.cos(), self.dso_mm * beta.sin())
    }

    /// Signed offset of detector cell `j` from the central ray, in mm.
    pub fn detector_offset(&self, j: usize) -> f64 {
        (j as f64 - (self.n_detectors as f64 - 1.0) / 2.0) * self.det_pitch_mm
    }

    pub fn detector_position(&self, beta: f64, j: usize) -> Point2 {
        let back = self.dsd_mm - self.dso_mm;
        let s = self.detector_offset(j);
        let (sin, cos) = beta.sin_cos();
        Point2::new(-back * cos - s * sin, -back * sin + s * cos)
    }

    /// Signed distance between the isocenter and the ray through cell `j`.
    pub fn ray_isocenter_distance(&self, j: usize) -> f64 {
        let s = self.detector_offset(j);
        self.dso_mm * s / (self.dsd_mm * self.dsd_mm + s * s).sqrt()
    }

    pub fn pixel_center(&self, iy: usize, ix: usize) -> Point2 {
        Point2::new(
            (ix as f64 - (self.roi_nx as f64 - 1.0) / 2.0) * self.pixel_mm,
            (iy as f64 - (self.roi_ny as f64 - 1.0) / 2.0) * self.pixel_mm,
        )
    }

    pub fn fan_half_angle(&self) -> f64 {
        (self.n_detectors as f64 * self.det_pitch_mm / 2.0 / self.dsd_mm).atan()
    }

    pub fn roi_circumradius(&self) -> f64 {
        let hx = self.roi_nx as f64 * self.pixel_mm / 2.0;
        let hy = self.roi_ny as f64 * self.pixel_mm / 2.0;
        hx.hypot(hy)
    }

    /// Radius of the isocentric disk seen by every detector view.
    pub fn covered_radius(&self) -> f64 {
        self.dso_mm * self.fan_half_angle().sin()
    }

    /// Whether the detector fan spans the ROI circumcircle at every angle.
    pub fn covers_roi(&self) -> bool {
        self.roi_circumradius() < self.dso_mm
            && self.fan_half_angle() >= (self.roi_circumradius() / self.dso_mm).asin()
    }

    /// Stable digest of the geometry constants, used in file metadata.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let text = serde_json::to_string(self).expect("geometry serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Scanner description read from `key = value` text.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScannerConfig {
    entries: BTreeMap<String, String>,
}

impl ScannerConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}", lineno + 1), "expected `key = value`")
            })?;
            entries.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|_| Error::config(key, format!("cannot parse `{v}`")))
            })
            .transpose()
    }

    fn base_geometry(&self) -> Result<Option<FanBeamGeometry>> {
        match self.get("defaults") {
            None => Ok(None),
            Some("paper") => Ok(Some(FanBeamGeometry::paper())),
            Some("desk") => Ok(Some(FanBeamGeometry::desk())),
            Some(other) => Err(Error::config("defaults", format!("unknown preset `{other}`"))),
        }
    }
}

impl fmt::Display for ScannerConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

/// Builds a geometry from a scanner config.
///
/// Keys missing from the config are taken from the preset named by the
/// `defaults` key; without one, every geometry key is required.
pub fn build_fan_geometry(config: &ScannerConfig) -> Result<FanBeamGeometry> {
    let base = config.base_geometry()?;
    fn pick<T: std::str::FromStr>(
        config: &ScannerConfig,
        key: &str,
        fallback: Option<T>,
    ) -> Result<T> {
        match config.parsed(key)? {
            Some(v) => Ok(v),
            None => fallback.ok_or_else(|| Error::config(key, "missing and no `defaults` preset given")),
        }
    }
    let b = base.as_ref();
    let geometry = FanBeamGeometry {
        dsd_mm: pick(config, "dsd_mm", b.map(|g| g.dsd_mm))?,
        dso_mm: pick(config, "dso_mm", b.map(|g| g.dso_mm))?,
        n_detectors: pick(config, "n_detectors", b.map(|g| g.n_detectors))?,
        det_pitch_mm: pick(config, "det_pitch_mm", b.map(|g| g.det_pitch_mm))?,
        roi_nx: pick(config, "roi_nx", b.map(|g| g.roi_nx))?,
        roi_ny: pick(config, "roi_ny", b.map(|g| g.roi_ny))?,
        pixel_mm: pick(config, "pixel_mm", b.map(|g| g.pixel_mm))?,
        n_views_full: pick(config, "n_views_full", b.map(|g| g.n_views_full))?,
    };
    geometry.validate()?;
    Ok(geometry)
}

/// Ordered subset of the dense view grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AngleSet {
    indices: Vec<usize>,
    n_full: usize,
}

impl AngleSet {
    pub fn new(indices: Vec<usize>, n_full: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Range("angle set is empty".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= n_full) {
            return Err(Error::Range(format!("index {bad} outside grid of {n_full} views")));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Range("angle indices must be strictly increasing".into()));
        }
        Ok(Self { indices, n_full })
    }

    pub fn full(n_full: usize) -> Self {
        Self {
            indices: (0..n_full).collect(),
            n_full,
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn n_full(&self) -> usize {
        self.n_full
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.indices.len() == self.n_full
    }

    /// Position of a dense-grid index within this set.
    pub fn position(&self, full_index: usize) -> Option<usize> {
        self.indices.binary_search(&full_index).ok()
    }

    /// Angular weight per view used by backprojection: `2π / |set|`.
    pub fn angular_step(&self) -> f64 {
        2.0 * PI / self.indices.len() as f64
    }
}

/// Equispaced `n_sparse`-view subset starting at view 0.
pub fn sparse_angles(geometry: &FanBeamGeometry, n_sparse: usize) -> Result<AngleSet> {
    let n_full = geometry.n_views_full;
    if n_sparse == 0 || n_full % n_sparse != 0 {
        return Err(Error::InvalidArgument(format!(
            "{n_sparse} sparse views do not divide the {n_full}-view grid"
        )));
    }
    let stride = n_full / n_sparse;
    AngleSet::new((0..n_sparse).map(|k| k * stride).collect(), n_full)
}

/// Placement of the stationary sources around the ring and along the belt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryLayout {
    pub n_sources: usize,
    /// View angle of each source in radians, listed in z order.
    pub angular_positions: Vec<f64>,
    /// Longitudinal offset of each source plane, non-decreasing.
    pub z_offsets_mm: Vec<f64>,
    pub belt_mm_per_frame: f64,
    pub n_frames: usize,
}

impl StationaryLayout {
    /// Synthetic layout: 9 sources 40° apart, interleaved in angle along z,
    /// with planes two belt frames apart.
    pub fn synthetic(n_sources: usize, belt_mm_per_frame: f64, n_frames: usize) -> Self {
        let step = 2.0 * PI / n_sources as f64;
        // Stride coprime with the source count so that z order differs from angular order.
        let stride = (1..n_sources)
            .rev()
            .find(|s| gcd(*s, n_sources) == 1 && *s * 2 <= n_sources)
            .unwrap_or(1);
        Self {
            n_sources,
            angular_positions: (0..n_sources)
                .map(|i| ((i * stride) % n_sources) as f64 * step)
                .collect(),
            z_offsets_mm: (0..n_sources)
                .map(|i| 2.0 * i as f64 * belt_mm_per_frame)
                .collect(),
            belt_mm_per_frame,
            n_frames,
        }
    }

    pub fn from_config(config: &ScannerConfig, n_frames: usize) -> Result<Self> {
        let n_sources: usize = config.parsed("n_sources")?.unwrap_or(9);
        let belt: f64 = config.parsed("belt_mm_per_frame")?.unwrap_or(2.0);
        let mut layout = Self::synthetic(n_sources, belt, n_frames);
        if let Some(list) = config.get("z_offsets_mm") {
            layout.z_offsets_mm = list
                .split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::config("z_offsets_mm", format!("cannot parse `{v}`")))
                })
                .collect::<Result<_>>()?;
        }
        layout.validate()?;
        Ok(layout)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sources == 0 {
            return Err(Error::config("n_sources", "must be at least 1"));
        }
        if self.angular_positions.len() != self.n_sources || self.z_offsets_mm.len() != self.n_sources {
            return Err(Error::config(
                "n_sources",
                "angular_positions and z_offsets_mm need one entry per source",
            ));
        }
        if !(self.belt_mm_per_frame > 0.0) {
            return Err(Error::config("belt_mm_per_frame", "must be positive"));
        }
        if self.z_offsets_mm.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::config("z_offsets_mm", "must be non-decreasing"));
        }
        let step = 2.0 * PI / self.n_sources as f64;
        let mut slots: Vec<usize> = self
            .angular_positions
            .iter()
            .map(|a| (a.rem_euclid(2.0 * PI) / step).round() as usize % self.n_sources)
            .collect();
        for (a, slot) in self.angular_positions.iter().zip(&slots) {
            if (a.rem_euclid(2.0 * PI) - *slot as f64 * step).abs() > 1e-9
                && (a.rem_euclid(2.0 * PI) - 2.0 * PI).abs() > 1e-9
            {
                return Err(Error::config(
                    "angular_positions",
                    format!("{a} rad is not on the {}-source equispaced ring", self.n_sources),
                ));
            }
        }
        slots.sort_unstable();
        slots.dedup();
        if slots.len() != self.n_sources {
            return Err(Error::config("angular_positions", "two sources share an angle"));
        }
        Ok(())
    }

    /// Integer frame delay of each source plane.
    pub fn frame_shifts(&self) -> Result<Vec<usize>> {
        let base = self.z_offsets_mm[0];
        self.z_offsets_mm
            .iter()
            .map(|z| {
                let frames = (z - base) / self.belt_mm_per_frame;
                let rounded = frames.round();
                if (frames - rounded).abs() > 1e-9 {
                    Err(Error::config(
                        "z_offsets_mm",
                        format!("offset {z} mm is not a whole number of belt frames"),
                    ))
                } else {
                    Ok(rounded as usize)
                }
            })
            .collect()
    }

    /// Dense-grid view index of each source (in z order).
    pub fn view_indices(&self, geometry: &FanBeamGeometry) -> Result<Vec<usize>> {
        let step = geometry.angular_step();
        self.angular_positions
            .iter()
            .map(|a| {
                let pos = a.rem_euclid(2.0 * PI) / step;
                let idx = pos.round();
                if (pos - idx).abs() > 1e-6 {
                    Err(Error::config(
                        "angular_positions",
                        format!("{a} rad is not on the {}-view grid", geometry.n_views_full),
                    ))
                } else {
                    Ok(idx as usize % geometry.n_views_full)
                }
            })
            .collect()
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Post-log detector samples indexed `(energy, source, frame, detector)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawAcquisition {
    pub data: Array4<f64>,
}

impl RawAcquisition {
    pub fn new(data: Array4<f64>) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument(
                "raw samples must be finite non-negative line integrals".into(),
            ));
        }
        Ok(Self { data })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RebinOutput {
    pub sinogram: Sinogram,
    /// Slices seen by only some of the sources, dropped from the output.
    pub incomplete_slices: usize,
}

/// Source indices sorted by their position on the dense view grid.
pub fn angular_order(layout: &StationaryLayout, geometry: &FanBeamGeometry) -> Result<Vec<usize>> {
    let views = layout.view_indices(geometry)?;
    let mut order: Vec<usize> = (0..layout.n_sources).collect();
    order.sort_by_key(|&i| views[i]);
    Ok(order)
}

/// Regroups staggered acquisitions into per-slice sparse-view sinograms.
///
/// Object slice `z` crosses the plane of source `i` at frame `z + shift_i`;
/// only slices seen by every source are emitted. Samples are copied.
pub fn rebin(raw: &RawAcquisition, layout: &StationaryLayout, geometry: &FanBeamGeometry) -> Result<RebinOutput> {
    layout.validate()?;
    let (n_energy, n_sources, n_frames, n_det) = raw.data.dim();
    if n_sources != layout.n_sources {
        return Err(Error::Shape(format!(
            "raw data has {n_sources} sources, layout has {}",
            layout.n_sources
        )));
    }
    if n_frames != layout.n_frames {
        return Err(Error::Shape(format!(
            "raw data has {n_frames} frames, layout has {}",
            layout.n_frames
        )));
    }
    if n_det != geometry.n_detectors {
        return Err(Error::Shape(format!(
            "raw data has {n_det} detector cells, geometry has {}",
            geometry.n_detectors
        )));
    }
    let shifts = layout.frame_shifts()?;
    let views = layout.view_indices(geometry)?;
    let order = angular_order(layout, geometry)?;
    let max_shift = *shifts.iter().max().expect("non-empty");

    // Object slices z (relative to source 0) span -max_shift..n_frames; keep
    // those with 0 <= z + shift_i < n_frames for all i.
    let total_slices = n_frames + max_shift;
    if n_frames <= max_shift {
        return Err(Error::InvalidArgument(format!(
            "no slice is covered by all {n_sources} sources ({n_frames} frames, stagger {max_shift})"
        )));
    }
    let n_out = n_frames - max_shift;
    let sorted_views: Vec<usize> = order.iter().map(|&i| views[i]).collect();
    let angles = AngleSet::new(sorted_views, geometry.n_views_full)?;
    let mut out = Array4::zeros((n_energy, n_sources, n_out, n_det));
    for (view, &source) in order.iter().enumerate() {
        let shift = shifts[source];
        out.slice_mut(s![.., view, .., ..])
            .assign(&raw.data.slice(s![.., source, shift..shift + n_out, ..]));
    }
    Ok(RebinOutput {
        sinogram: Sinogram::new(out, angles)?,
        incomplete_slices: total_slices - n_out,
    })
}
