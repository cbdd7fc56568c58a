//! Sparse-view dual-energy CT reconstruction for stationary multi-source
//! scanners.
//!
//! The crate covers the whole chain: scanner geometry and rebinning, a
//! matched Siddon projector pair, fan-beam FBP, TV-regularized iterative
//! reconstruction, a small CNN framework with a U-Net denoiser, the
//! image-then-sinogram dual-domain pipeline, synthetic phantoms, and
//! sinogram-domain evaluation with file persistence.

pub mod analytic;
pub mod data;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod manifest;
pub mod mbir;
pub mod neural;
pub mod phantom;
pub mod pipeline;
pub mod preset;
pub mod projector;
pub mod storage;

pub use data::{Sinogram, Volume, ENERGY_LABELS};
pub use error::{Error, Result};
pub use geometry::{build_fan_geometry, rebin, sparse_angles, AngleSet, FanBeamGeometry, RawAcquisition, ScannerConfig, StationaryLayout};
pub use projector::{back_project, forward_project, sample_views, zero_pad_views, SystemMatrix};
pub use analytic::{fbp, right_inverse, FbpConfig, FilterKind};
pub use mbir::{mbir_tv, MbirConfig, MbirSolver};
pub use neural::{Domain, Model, TrainConfig};
pub use pipeline::{infer, make_labels, train_image_denoiser, train_sinogram_denoiser, tv_post_denoise, Case, PipelineModels, TrainingSet};
pub use eval::{compare_methods, evaluate_method, nmse, CompareConfig, Method, MethodReport};
pub use storage::{load_sinogram, load_volume, save_sinogram, save_volume, Metadata};
pub use manifest::RunManifest;
pub use preset::Preset;
