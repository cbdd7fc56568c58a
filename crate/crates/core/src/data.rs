//! In-memory dual-energy volumes and sinograms.
//!
//! Volumes are indexed `(energy, z, y, x)` in mm⁻¹; sinograms are indexed
//! `(energy, view, z, detector)` and hold dimensionless line integrals.

use ndarray::{Array4, Axis};

use crate::error::{Error, Result};
use crate::geometry::{AngleSet, FanBeamGeometry};

/// Display labels of the two energy channels, low first.
pub const ENERGY_LABELS: [&str; 2] = ["80kVp", "120kVp"];

#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub data: Array4<f64>,
}

impl Volume {
    pub fn zeros(n_energy: usize, n_slices: usize, ny: usize, nx: usize) -> Self {
        Self {
            data: Array4::zeros((n_energy, n_slices, ny, nx)),
        }
    }

    pub fn from_array(data: Array4<f64>) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("volume contains non-finite values".into()));
        }
        Ok(Self { data })
    }

    pub fn n_energy(&self) -> usize {
        self.data.dim().0
    }

    pub fn n_slices(&self) -> usize {
        self.data.dim().1
    }

    pub fn ny(&self) -> usize {
        self.data.dim().2
    }

    pub fn nx(&self) -> usize {
        self.data.dim().3
    }

    pub fn check_geometry(&self, geometry: &FanBeamGeometry) -> Result<()> {
        if self.ny() != geometry.roi_ny || self.nx() != geometry.roi_nx {
            return Err(Error::Shape(format!(
                "volume slices are {}x{} but geometry ROI is {}x{}",
                self.ny(),
                self.nx(),
                geometry.roi_ny,
                geometry.roi_nx
            )));
        }
        Ok(())
    }

    /// Rounds every sample through `f32`, the on-disk precision.
    pub fn to_storage_precision(&self) -> Self {
        Self {
            data: self.data.mapv(|v| v as f32 as f64),
        }
    }

    /// Sum of squared samples of one energy channel.
    pub fn energy_norm_sq(&self, energy: usize) -> f64 {
        self.data
            .index_axis(Axis(0), energy)
            .iter()
            .map(|v| v * v)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram {
    pub data: Array4<f64>,
    pub angles: AngleSet,
}

impl Sinogram {
    pub fn zeros(n_energy: usize, angles: AngleSet, n_slices: usize, n_detectors: usize) -> Self {
        Self {
            data: Array4::zeros((n_energy, angles.len(), n_slices, n_detectors)),
            angles,
        }
    }

    pub fn new(data: Array4<f64>, angles: AngleSet) -> Result<Self> {
        if data.dim().1 != angles.len() {
            return Err(Error::Shape(format!(
                "sinogram has {} view rows but the angle set has {} entries",
                data.dim().1,
                angles.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("sinogram contains non-finite values".into()));
        }
        Ok(Self { data, angles })
    }

    pub fn n_energy(&self) -> usize {
        self.data.dim().0
    }

    pub fn n_views(&self) -> usize {
        self.data.dim().1
    }

    pub fn n_slices(&self) -> usize {
        self.data.dim().2
    }

    pub fn n_detectors(&self) -> usize {
        self.data.dim().3
    }

    pub fn check_geometry(&self, geometry: &FanBeamGeometry) -> Result<()> {
        if self.n_detectors() != geometry.n_detectors {
            return Err(Error::Shape(format!(
                "sinogram has {} detector columns but geometry has {}",
                self.n_detectors(),
                geometry.n_detectors
            )));
        }
        if self.angles.n_full() != geometry.n_views_full {
            return Err(Error::Shape(format!(
                "sinogram angle grid has {} views but geometry has {}",
                self.angles.n_full(),
                geometry.n_views_full
            )));
        }
        Ok(())
    }

    pub fn to_storage_precision(&self) -> Self {
        Self {
            data: self.data.mapv(|v| v as f32 as f64),
            angles: self.angles.clone(),
        }
    }
}
