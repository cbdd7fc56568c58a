//! Sinogram-domain NMSE on the measured views and method comparison.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use ndarray::Axis;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::{right_inverse, FbpConfig};
use crate::data::{Sinogram, Volume, ENERGY_LABELS};
use crate::error::{Error, Result};
use crate::geometry::FanBeamGeometry;
use crate::mbir::{mbir_tv, MbirConfig};
use crate::pipeline::{image_cnn, infer, Case, PipelineModels};
use crate::projector::forward_project;

/// NMSE values of the published real-data comparison, `[80 kVp, 120 kVp]`,
/// for context only: the synthetic desk corpus is not expected to match
/// their magnitudes.
pub const PUBLISHED_NMSE: [(Method, [f64; 2]); 4] = [
    (Method::Fbp, [16.647, 10.536]),
    (Method::MbirTv, [0.58247, 0.60440]),
    (Method::ImageCnn, [0.33207, 0.32249]),
    (Method::Ours, [0.06845, 0.05450]),
];

/// `||estimate - reference||² / ||reference||²` per energy channel.
pub fn nmse(estimate: &Sinogram, reference: &Sinogram) -> Result<Vec<f64>> {
    if estimate.data.dim() != reference.data.dim() {
        return Err(Error::Shape(format!(
            "estimate {:?} vs reference {:?}",
            estimate.data.dim(),
            reference.data.dim()
        )));
    }
    if estimate.angles != reference.angles {
        return Err(Error::Shape("estimate and reference are on different angles".into()));
    }
    (0..reference.n_energy())
        .map(|e| {
            let r = reference.data.index_axis(Axis(0), e);
            let x = estimate.data.index_axis(Axis(0), e);
            let den: f64 = r.iter().map(|v| v * v).sum();
            if den == 0.0 {
                return Err(Error::UndefinedMetric(format!("reference energy channel {e} is identically zero")));
            }
            let num: f64 = x.iter().zip(r.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            Ok(num / den)
        })
        .collect()
}

/// NMSE of the reconstruction's projections on the measured angles against
/// the measurement.
pub fn evaluate_method(recon: &Volume, g_measured: &Sinogram, geometry: &FanBeamGeometry) -> Result<Vec<f64>> {
    g_measured.check_geometry(geometry)?;
    let proj = forward_project(recon, geometry, &g_measured.angles)?;
    nmse(&proj, g_measured)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "FBP")]
    Fbp,
    #[serde(rename = "MBIR-TV")]
    MbirTv,
    #[serde(rename = "Image CNN")]
    ImageCnn,
    #[serde(rename = "Ours")]
    Ours,
}

impl Method {
    /// Worst to best, in the order the comparison expects NMSE to fall.
    pub const ALL: [Method; 4] = [Method::Fbp, Method::MbirTv, Method::ImageCnn, Method::Ours];

    pub fn name(self) -> &'static str {
        match self {
            Method::Fbp => "FBP",
            Method::MbirTv => "MBIR-TV",
            Method::ImageCnn => "Image CNN",
            Method::Ours => "Ours",
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            Method::Fbp => "fbp",
            Method::MbirTv => "mbir-tv",
            Method::ImageCnn => "image-cnn",
            Method::Ours => "ours",
        }
    }

    pub fn is_learned(self) -> bool {
        matches!(self, Method::ImageCnn | Method::Ours)
    }
}

/// Result of one method on one case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub method: Method,
    pub nmse: Option<Vec<f64>>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRow {
    pub id: String,
    pub cells: Vec<Cell>,
    /// NMSE strictly falls along the method order in every energy.
    pub ordered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodMean {
    pub method: Method,
    /// Mean over the cases that succeeded, per energy.
    pub nmse: Vec<f64>,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub methods: Vec<Method>,
    pub energies: Vec<String>,
    pub cases: Vec<CaseRow>,
    pub mean: Vec<MethodMean>,
    /// Case means fall strictly along the method order in every energy.
    pub mean_ordered: bool,
    /// Wall-clock seconds per method over all cases.
    pub runtime_seconds: BTreeMap<String, f64>,
    pub geometry_fingerprint: String,
    pub seeds: BTreeMap<String, u64>,
}

fn strictly_falling(values: &[&Vec<f64>]) -> bool {
    values.windows(2).all(|w| w[0].iter().zip(w[1].iter()).all(|(a, b)| b < a))
}

impl MethodReport {
    pub fn mean_of(&self, method: Method) -> Option<&[f64]> {
        self.mean.iter().find(|m| m.method == method).map(|m| m.nmse.as_slice())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Fixed-width table: one row per case and method, then the means.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<14} {:<10}", "case", "method");
        for e in &self.energies {
            let _ = write!(out, " {e:>12}");
        }
        out.push('\n');
        let row = |out: &mut String, id: &str, method: Method, values: Option<&[f64]>, note: &str| {
            let _ = write!(out, "{id:<14} {:<10}", method.name());
            match values {
                Some(v) => v.iter().for_each(|x| {
                    let _ = write!(out, " {x:>12.5e}");
                }),
                None => {
                    let _ = write!(out, " failed: {note}");
                }
            }
            out.push('\n');
        };
        for c in &self.cases {
            for cell in &c.cells {
                row(&mut out, &c.id, cell.method, cell.nmse.as_deref(), cell.error.as_deref().unwrap_or(""));
            }
        }
        for m in &self.mean {
            row(&mut out, "mean", m.method, Some(&m.nmse), "");
        }
        let order: Vec<&str> = self.methods.iter().map(|m| m.name()).collect();
        let _ = writeln!(out, "mean ordering {}: {}", order.join(" > "), self.mean_ordered);
        out
    }
}

/// Assembles a report from per-case, per-method reconstructions; `None`
/// entries carry the error of a failed method.
pub fn build_report(
    cases: &[Case],
    methods: &[Method],
    recons: &[Vec<std::result::Result<Volume, String>>],
    geometry: &FanBeamGeometry,
) -> Result<MethodReport> {
    if recons.len() != cases.len() || recons.iter().any(|r| r.len() != methods.len()) {
        return Err(Error::Shape("one reconstruction slot per case and method is required".into()));
    }
    let rows: Vec<CaseRow> = cases
        .par_iter()
        .zip(recons.par_iter())
        .map(|(case, per_method)| {
            let cells: Vec<Cell> = methods
                .iter()
                .zip(per_method)
                .map(|(&method, r)| {
                    let outcome = r
                        .as_ref()
                        .map_err(Clone::clone)
                        .and_then(|v| evaluate_method(v, &case.measured, geometry).map_err(|e| e.to_string()));
                    match outcome {
                        Ok(v) => Cell {
                            method,
                            nmse: Some(v),
                            error: None,
                        },
                        Err(e) => Cell {
                            method,
                            nmse: None,
                            error: Some(e),
                        },
                    }
                })
                .collect();
            let values: Option<Vec<&Vec<f64>>> = cells.iter().map(|c| c.nmse.as_ref()).collect();
            CaseRow {
                id: case.id.clone(),
                ordered: values.is_some_and(|v| strictly_falling(&v)),
                cells,
            }
        })
        .collect();
    let n_energy = cases.first().map_or(ENERGY_LABELS.len(), |c| c.measured.n_energy());
    let mean: Vec<MethodMean> = methods
        .iter()
        .enumerate()
        .map(|(k, &method)| {
            let ok: Vec<&Vec<f64>> = rows.iter().filter_map(|r| r.cells[k].nmse.as_ref()).collect();
            let nmse = (0..n_energy)
                .map(|e| {
                    if ok.is_empty() {
                        f64::NAN
                    } else {
                        ok.iter().map(|v| v[e]).sum::<f64>() / ok.len() as f64
                    }
                })
                .collect();
            MethodMean {
                method,
                nmse,
                failures: rows.len() - ok.len(),
            }
        })
        .collect();
    let mean_ordered = mean.iter().all(|m| m.failures == 0) && strictly_falling(&mean.iter().map(|m| &m.nmse).collect::<Vec<_>>());
    Ok(MethodReport {
        methods: methods.to_vec(),
        energies: ENERGY_LABELS.iter().take(n_energy).map(|s| s.to_string()).collect(),
        cases: rows,
        mean,
        mean_ordered,
        runtime_seconds: BTreeMap::new(),
        geometry_fingerprint: geometry.fingerprint(),
        seeds: BTreeMap::new(),
    })
}

/// Settings shared by every method of a comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareConfig {
    pub geometry: FanBeamGeometry,
    pub fbp: FbpConfig,
    pub mbir: MbirConfig,
    pub models: Option<PipelineModels>,
    pub methods: Vec<Method>,
}

/// Reconstructions of a comparison, rounded to storage precision, indexed
/// `[case][method]`.
pub struct Comparison {
    pub report: MethodReport,
    pub reconstructions: Vec<Vec<std::result::Result<Volume, String>>>,
}

/// Runs every method on every case and evaluates them on the measured views.
pub fn compare_methods(cases: &[Case], cfg: &CompareConfig) -> Result<Comparison> {
    if cfg.methods.is_empty() {
        return Err(Error::config("methods", "no methods selected"));
    }
    if cfg.methods.iter().any(|m| m.is_learned()) {
        match &cfg.models {
            None => return Err(Error::config("models", "learned methods need trained models")),
            Some(m) => m.validate()?,
        }
    }
    let geometry = &cfg.geometry;
    let mut recons: Vec<Vec<std::result::Result<Volume, String>>> = vec![Vec::with_capacity(cfg.methods.len()); cases.len()];
    let mut runtime = BTreeMap::new();
    for &method in &cfg.methods {
        let start = Instant::now();
        let outputs: Vec<std::result::Result<Volume, String>> = cases
            .par_iter()
            .map(|case| {
                let g = &case.measured;
                let r = match method {
                    Method::Fbp => right_inverse(g, geometry, &cfg.fbp),
                    Method::MbirTv => mbir_tv(g, geometry, &cfg.mbir).map(|r| r.volume),
                    Method::ImageCnn => {
                        let m = cfg.models.as_ref().expect("checked");
                        image_cnn(g, &m.image, geometry, &cfg.fbp)
                    }
                    Method::Ours => infer(g, cfg.models.as_ref().expect("checked"), false).map(|r| r.volume),
                };
                r.map(|v| v.to_storage_precision())
                    .map_err(|e| e.in_stage(method.slug(), &case.id).to_string())
            })
            .collect();
        runtime.insert(method.name().to_string(), start.elapsed().as_secs_f64());
        for (slot, out) in recons.iter_mut().zip(outputs) {
            slot.push(out);
        }
    }
    let mut report = build_report(cases, &cfg.methods, &recons, geometry)?;
    report.runtime_seconds = runtime;
    Ok(Comparison {
        report,
        reconstructions: recons,
    })
}
