//! Named bundles of defaults for every stage.

use serde::{Deserialize, Serialize};

use crate::analytic::FbpConfig;
use crate::error::{Error, Result};
use crate::geometry::FanBeamGeometry;
use crate::mbir::MbirConfig;
use crate::neural::{Domain, TrainConfig};
use crate::phantom::SplitPlan;

/// Number of measured views of the stationary scanner.
pub const SPARSE_VIEWS: usize = 9;

/// Data weights tried when choosing the label solver setting.
pub const MU_GRID: [f64; 5] = [0.1, 1.0, 10.0, 100.0, 1000.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub name: String,
    pub geometry: FanBeamGeometry,
    pub n_slices: usize,
    pub n_simple: usize,
    pub n_bags: usize,
    pub split: SplitPlan,
    /// Unattenuated photons per detector sample of the simulated scan.
    pub incident_counts: f64,
    pub fbp: FbpConfig,
    pub mbir: MbirConfig,
    pub mu_grid: Vec<f64>,
    pub train_image: TrainConfig,
    pub train_sinogram: TrainConfig,
    pub tv_weight: Option<f64>,
}

impl Preset {
    /// Published scanner and network settings with a corpus of 32 simple
    /// objects and 15 bags.
    pub fn paper() -> Self {
        Self {
            name: "paper".into(),
            geometry: FanBeamGeometry::paper(),
            n_slices: 768,
            n_simple: 32,
            n_bags: 15,
            split: SplitPlan::PAPER,
            incident_counts: 2e4,
            fbp: FbpConfig::default(),
            mbir: MbirConfig::default(),
            mu_grid: MU_GRID.to_vec(),
            train_image: TrainConfig::paper(Domain::Image),
            train_sinogram: TrainConfig::paper(Domain::Sinogram),
            tv_weight: None,
        }
    }

    /// Laptop-sized run: 128x128x8 volumes, 252 dense views, 24 cases.
    pub fn desk() -> Self {
        Self {
            name: "desk".into(),
            geometry: FanBeamGeometry::desk(),
            n_slices: 8,
            n_simple: 12,
            n_bags: 12,
            split: SplitPlan::DESK,
            incident_counts: 2e4,
            fbp: FbpConfig::default(),
            mbir: MbirConfig {
                max_iterations: 100,
                ..MbirConfig::default()
            },
            mu_grid: MU_GRID.to_vec(),
            train_image: TrainConfig::desk(Domain::Image),
            train_sinogram: TrainConfig::desk(Domain::Sinogram),
            tv_weight: None,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper()),
            "desk" => Ok(Self::desk()),
            other => Err(Error::config("preset", format!("unknown preset `{other}` (expected paper or desk)"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid() {
        for p in [Preset::paper(), Preset::desk()] {
            p.geometry.validate().unwrap();
            p.mbir.validate().unwrap();
            p.train_image.validate().unwrap();
            p.train_sinogram.validate().unwrap();
            assert_eq!(Preset::by_name(&p.name).unwrap(), p);
            let [ph, pw, _] = p.train_sinogram.patch;
            assert!(ph <= p.n_slices && pw <= p.geometry.n_detectors);
            assert_eq!(p.geometry.n_views_full % SPARSE_VIEWS, 0);
        }
        assert!(Preset::by_name("huge").is_err());
    }
}
