//! Run-directory layout, the corpus record, and manifest bookkeeping.
//!
//! ```text
//! <run>/corpus.json
//! <run>/cases/<id>/{measured,truth,dense}.dtn
//! <run>/labels/<id>.dtn, labels/mu_search.json
//! <run>/models/{image,sinogram}.dcnn, models/*-loss.json
//! <run>/eval/<id>/<method>.dtn, eval/report.{json,txt}
//! <run>/manifests/<stage>.json
//! <run>/timings/<stage>.json
//! ```
//!
//! Everything except `timings/` is a pure function of the inputs, flags and
//! seed, so re-running a stage rewrites identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dect_core::manifest::{file_sha256, FileRecord, ParentRecord};
use dect_core::phantom::{CorpusSplit, PhantomSpec, SplitPlan};
use dect_core::storage::{load_sinogram, load_volume, Metadata};
use dect_core::{AngleSet, Case, FanBeamGeometry, Preset, RunManifest, Sinogram, Volume};
use serde::{Deserialize, Serialize};

/// What `simulate` produced; every later stage reads its geometry from here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub preset: String,
    pub seed: u64,
    pub geometry: FanBeamGeometry,
    pub n_slices: usize,
    pub incident_counts: Option<f64>,
    pub angles: AngleSet,
    pub plan: SplitPlan,
    pub split: CorpusSplit,
    pub cases: Vec<String>,
    pub specs: Vec<PhantomSpec>,
}

impl CorpusRecord {
    pub fn ids(&self, indices: &[usize]) -> Vec<String> {
        indices.iter().map(|&i| self.cases[i].clone()).collect()
    }
}

pub struct Run {
    pub dir: PathBuf,
    pub preset: Preset,
    pub seed: u64,
}

impl Run {
    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    pub fn case_file(&self, id: &str, what: &str) -> PathBuf {
        self.dir.join("cases").join(id).join(format!("{what}.dtn"))
    }

    pub fn label_file(&self, id: &str) -> PathBuf {
        self.dir.join("labels").join(format!("{id}.dtn"))
    }

    pub fn manifest_file(&self, stage: &str) -> PathBuf {
        self.dir.join("manifests").join(format!("{stage}.json"))
    }

    /// Path relative to the run directory when inside it.
    pub fn rel(&self, p: &Path) -> String {
        p.strip_prefix(&self.dir).unwrap_or(p).to_string_lossy().replace('\\', "/")
    }

    pub fn record(&self, p: &Path) -> Result<FileRecord> {
        Ok(FileRecord {
            path: self.rel(p),
            sha256: file_sha256(p).with_context(|| format!("hashing {}", p.display()))?,
        })
    }

    pub fn corpus(&self) -> Result<CorpusRecord> {
        let p = self.path("corpus.json");
        if !p.exists() {
            bail!("{} does not exist; run `dect simulate` first (or pass --run-dir)", p.display());
        }
        let rec: CorpusRecord = serde_json::from_str(&fs::read_to_string(&p)?).with_context(|| format!("reading {}", p.display()))?;
        if rec.preset != self.preset.name {
            bail!("run directory {} holds a `{}` corpus but --preset is `{}`", self.dir.display(), rec.preset, self.preset.name);
        }
        if rec.seed != self.seed {
            bail!("run directory {} was simulated with seed {} but --seed is {}", self.dir.display(), rec.seed, self.seed);
        }
        Ok(rec)
    }

    /// Reference to a finished stage's manifest; errors if it never ran.
    pub fn parent(&self, stage: &str) -> Result<ParentRecord> {
        let p = self.manifest_file(stage);
        if !p.exists() {
            bail!("stage `{stage}` has not run in {} (missing {})", self.dir.display(), p.display());
        }
        let (_, sha) = RunManifest::load(&p)?;
        Ok(ParentRecord {
            stage: stage.into(),
            manifest: self.rel(&p),
            sha256: sha,
        })
    }

    /// Manifest under `manifests/` whose outputs include a file with this
    /// digest, if any.
    pub fn producer_of(&self, sha: &str) -> Result<Option<ParentRecord>> {
        let dir = self.path("manifests");
        let Ok(entries) = fs::read_dir(&dir) else {
            return Ok(None);
        };
        let mut paths: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
        paths.sort();
        for p in paths {
            if p.extension().is_some_and(|e| e == "json") {
                let (m, msha) = RunManifest::load(&p)?;
                if m.outputs.iter().any(|o| o.sha256 == sha) {
                    return Ok(Some(ParentRecord {
                        stage: m.stage,
                        manifest: self.rel(&p),
                        sha256: msha,
                    }));
                }
            }
        }
        Ok(None)
    }

    pub fn write_timing(&self, stage: &str, seconds: &BTreeMap<String, f64>) -> Result<()> {
        let p = self.path(&format!("timings/{stage}.json"));
        write_json(&p, seconds)
    }

    /// Loads cases with their measured sinograms, plus truth and dense
    /// sinograms when asked.
    pub fn load_cases(&self, corpus: &CorpusRecord, ids: &[String], with_reference: bool) -> Result<Vec<Case>> {
        ids.iter()
            .map(|id| {
                let measured = self.load_sino(&self.case_file(id, "measured"), &corpus.geometry)?;
                let mut case = Case::new(id.clone(), measured);
                if with_reference {
                    case.truth = Some(self.load_vol(&self.case_file(id, "truth"), &corpus.geometry)?);
                    case.dense = Some(self.load_sino(&self.case_file(id, "dense"), &corpus.geometry)?);
                }
                Ok(case)
            })
            .collect()
    }

    pub fn load_sino(&self, p: &Path, geometry: &FanBeamGeometry) -> Result<Sinogram> {
        let (s, meta) = load_sinogram(p).with_context(|| format!("loading {}", p.display()))?;
        check_fingerprint(p, &meta, geometry)?;
        s.check_geometry(geometry).with_context(|| format!("{}", p.display()))?;
        Ok(s)
    }

    pub fn load_vol(&self, p: &Path, geometry: &FanBeamGeometry) -> Result<Volume> {
        let (v, meta) = load_volume(p).with_context(|| format!("loading {}", p.display()))?;
        check_fingerprint(p, &meta, geometry)?;
        v.check_geometry(geometry).with_context(|| format!("{}", p.display()))?;
        Ok(v)
    }

    pub fn metadata(&self, geometry: &FanBeamGeometry, notes: &[(&str, &str)]) -> Metadata {
        let mut m = Metadata::new(Some(geometry.fingerprint()));
        m.seeds.insert("run".into(), self.seed);
        for (k, v) in notes {
            m.notes.insert(k.to_string(), v.to_string());
        }
        m
    }
}

pub fn check_fingerprint(p: &Path, meta: &Metadata, geometry: &FanBeamGeometry) -> Result<()> {
    if let Some(fp) = &meta.geometry_fingerprint {
        if *fp != geometry.fingerprint() {
            bail!("{} was made for geometry {fp}, not {}", p.display(), geometry.fingerprint());
        }
    }
    Ok(())
}

pub fn write_json<T: Serialize>(p: &Path, value: &T) -> Result<()> {
    if let Some(dir) = p.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(p, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", p.display()))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(p: &Path) -> Result<T> {
    let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
}
