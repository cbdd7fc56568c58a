//! One function per subcommand.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use clap::Args;
use dect_core::eval::{build_report, Comparison};
use dect_core::neural::{load_model, save_model};
use dect_core::phantom::{generate_corpus, rasterize, simulate_acquisition, split_corpus, CorpusConfig, NoiseModel, SplitPlan};
use dect_core::pipeline::{image_cnn, select_mu_fid, MuTrial};
use dect_core::preset::SPARSE_VIEWS;
use dect_core::storage::{load_sinogram, load_volume, save_sinogram, save_volume, sidecar_path, Metadata};
use dect_core::{
    compare_methods, forward_project, infer, mbir_tv, right_inverse, sparse_angles, train_image_denoiser, train_sinogram_denoiser,
    AngleSet, CompareConfig, Domain, FanBeamGeometry, MbirConfig, Method, MethodReport, PipelineModels, RunManifest,
    TrainConfig, TrainingSet, Volume,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::pgm;
use crate::run::{read_json, write_json, CorpusRecord, Run};
use crate::Global;

fn timing(run: &Run, stage: &str, start: Instant) -> Result<f64> {
    let s = start.elapsed().as_secs_f64();
    run.write_timing(stage, &BTreeMap::from([("seconds".to_string(), s)]))?;
    Ok(s)
}

fn save_manifest(m: &RunManifest, p: &Path) -> Result<()> {
    m.save(p).with_context(|| format!("writing {}", p.display()))?;
    Ok(())
}

fn noise_seed(seed: u64, case: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(case as u64 + 1)
}

pub fn parse_method(s: &str) -> Result<Method, String> {
    Method::ALL
        .iter()
        .copied()
        .find(|m| m.slug() == s || m.name().eq_ignore_ascii_case(s))
        .ok_or_else(|| format!("unknown method `{s}` (expected fbp, mbir-tv, image-cnn or ours)"))
}

// ---------------------------------------------------------------- simulate

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Number of simple-object phantoms (preset default otherwise).
    #[arg(long)]
    pub n_simple: Option<usize>,
    /// Number of bag phantoms.
    #[arg(long)]
    pub n_bags: Option<usize>,
    /// Slices per volume.
    #[arg(long)]
    pub slices: Option<usize>,
    /// Split counts `train_simple,train_bags,val_simple,val_bags`; the rest is test.
    #[arg(long, value_delimiter = ',')]
    pub split: Option<Vec<usize>>,
    /// Unattenuated photons per detector sample.
    #[arg(long)]
    pub incident_counts: Option<f64>,
    /// Skip the counting noise.
    #[arg(long)]
    pub noiseless: bool,
}

pub fn simulate(g: &Global, a: &SimulateArgs) -> Result<()> {
    let start = Instant::now();
    let run = g.run()?;
    let p = &run.preset;
    let geo = &p.geometry;
    let n_simple = a.n_simple.unwrap_or(p.n_simple);
    let n_bags = a.n_bags.unwrap_or(p.n_bags);
    let n_slices = a.slices.unwrap_or(p.n_slices);
    ensure!(n_slices > 0, "--slices must be positive");
    ensure!(n_simple + n_bags > 0, "the corpus is empty");
    let plan = match &a.split {
        Some(v) if v.len() != 4 => bail!("--split takes four counts, got {}", v.len()),
        Some(v) => SplitPlan {
            train: [v[0], v[1]],
            validation: [v[2], v[3]],
        },
        None => p.split,
    };
    let split = split_corpus(n_simple, n_bags, plan).context("--split")?;
    let counts = (!a.noiseless).then(|| a.incident_counts.unwrap_or(p.incident_counts));
    let specs = generate_corpus(n_simple, n_bags, run.seed, &CorpusConfig::for_geometry(geo, n_slices));
    let angles = sparse_angles(geo, SPARSE_VIEWS)?;
    let full = AngleSet::full(geo.n_views_full);
    fs::create_dir_all(&run.dir).with_context(|| format!("creating {}", run.dir.display()))?;

    let files: Vec<Vec<PathBuf>> = specs
        .par_iter()
        .enumerate()
        .map(|(k, spec)| -> Result<Vec<PathBuf>> {
            let id = &spec.name;
            let stage = |e: dect_core::Error| e.in_stage("simulate", id);
            let truth = rasterize(spec, geo, n_slices).map_err(stage)?;
            let noise = counts.map(|c| NoiseModel {
                incident_counts: c,
                seed: noise_seed(run.seed, k),
            });
            let measured = simulate_acquisition(&truth, geo, &angles, noise).map_err(stage)?;
            let dense = forward_project(&truth, geo, &full).map_err(stage)?;
            let mut meta = run.metadata(geo, &[("case", id)]);
            meta.seeds.insert("phantom".into(), spec.seed);
            if let Some(n) = noise {
                meta.seeds.insert("noise".into(), n.seed);
            }
            let out = [run.case_file(id, "measured"), run.case_file(id, "truth"), run.case_file(id, "dense")];
            save_sinogram(&out[0], &measured, &meta)?;
            save_volume(&out[1], &truth, &meta)?;
            save_sinogram(&out[2], &dense, &meta)?;
            Ok(out.to_vec())
        })
        .collect::<Result<_>>()?;

    let record = CorpusRecord {
        preset: p.name.clone(),
        seed: run.seed,
        geometry: geo.clone(),
        n_slices,
        incident_counts: counts,
        angles,
        plan,
        split: split.clone(),
        cases: specs.iter().map(|s| s.name.clone()).collect(),
        specs,
    };
    let corpus_path = run.path("corpus.json");
    write_json(&corpus_path, &record)?;

    let config = serde_json::json!({
        "n_simple": n_simple,
        "n_bags": n_bags,
        "n_slices": n_slices,
        "split": plan,
        "incident_counts": counts,
        "sparse_views": SPARSE_VIEWS,
    });
    let mut m = RunManifest::new("simulate", &p.name, run.seed, geo, config);
    m.outputs.push(run.record(&corpus_path)?);
    for f in files.iter().flatten() {
        m.outputs.push(run.record(f)?);
    }
    m.metrics.insert("cases".into(), record.cases.len() as f64);
    m.metrics.insert("train_cases".into(), split.train.len() as f64);
    m.metrics.insert("validation_cases".into(), split.validation.len() as f64);
    m.metrics.insert("test_cases".into(), split.test.len() as f64);
    save_manifest(&m, &run.manifest_file("simulate"))?;
    let s = timing(&run, "simulate", start)?;
    eprintln!(
        "dect simulate: {} cases ({} train, {} validation, {} test) in {} [{s:.1}s]",
        record.cases.len(),
        split.train.len(),
        split.validation.len(),
        split.test.len(),
        run.dir.display()
    );
    Ok(())
}

// ------------------------------------------------------------------ labels

#[derive(Args, Debug)]
pub struct LabelsArgs {
    /// Use this data weight instead of searching the grid on the validation split.
    #[arg(long)]
    pub mu_fid: Option<f64>,
    /// Data weights tried by the search.
    #[arg(long, value_delimiter = ',')]
    pub mu_grid: Option<Vec<f64>>,
    /// MBIR iteration cap.
    #[arg(long)]
    pub iterations: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MuSearch {
    pub mu_fid: f64,
    pub searched_on: Vec<String>,
    pub trials: Vec<MuTrial>,
    pub mbir: MbirConfig,
}

pub fn labels(g: &Global, a: &LabelsArgs) -> Result<()> {
    let start = Instant::now();
    let run = g.run()?;
    let corpus = run.corpus()?;
    let geo = &corpus.geometry;
    let parent = run.parent("simulate")?;
    let mut base = run.preset.mbir.clone();
    if let Some(n) = a.iterations {
        base.max_iterations = n;
    }
    base.validate().context("MBIR settings")?;

    let val_ids = corpus.ids(&corpus.split.validation);
    let mut inputs = Vec::new();
    let (mu, trials, searched_on) = match a.mu_fid {
        Some(mu) => (mu, Vec::new(), Vec::new()),
        None => {
            ensure!(!val_ids.is_empty(), "the validation split is empty; pass --mu-fid");
            let grid = a.mu_grid.clone().unwrap_or_else(|| run.preset.mu_grid.clone());
            let val = run.load_cases(&corpus, &val_ids, true)?;
            for id in &val_ids {
                inputs.push(run.record(&run.case_file(id, "measured"))?);
                inputs.push(run.record(&run.case_file(id, "dense"))?);
            }
            let (mu, trials) = select_mu_fid(&val, geo, &base, &grid)?;
            eprintln!("dect labels: data weight {mu} chosen on {} validation cases", val.len());
            (mu, trials, val_ids)
        }
    };
    let cfg = MbirConfig { mu_fid: mu, ..base };
    cfg.validate().context("--mu-fid")?;

    let train_ids = corpus.ids(&corpus.split.train);
    ensure!(!train_ids.is_empty(), "the training split is empty");
    let train = run.load_cases(&corpus, &train_ids, false)?;
    for id in &train_ids {
        inputs.push(run.record(&run.case_file(id, "measured"))?);
    }
    let objectives: Vec<f64> = train
        .par_iter()
        .map(|c| -> Result<f64> {
            let r = mbir_tv(&c.measured, geo, &cfg).map_err(|e| e.in_stage("labels", &c.id))?;
            let meta = run.metadata(geo, &[("case", &c.id), ("method", "mbir-tv")]);
            save_volume(&run.label_file(&c.id), &r.volume, &meta)?;
            Ok(r.history.iter().flatten().filter_map(|h| h.last()).sum::<f64>())
        })
        .collect::<Result<_>>()?;

    let search_path = run.path("labels/mu_search.json");
    let search = MuSearch {
        mu_fid: mu,
        searched_on,
        trials: trials.clone(),
        mbir: cfg.clone(),
    };
    write_json(&search_path, &search)?;

    let mut m = RunManifest::new("labels", &run.preset.name, run.seed, geo, serde_json::json!({ "mbir": cfg }));
    m.parents.push(parent);
    m.inputs = inputs;
    m.outputs.push(run.record(&search_path)?);
    for id in &train_ids {
        m.outputs.push(run.record(&run.label_file(id))?);
    }
    m.metrics.insert("mu_fid".into(), mu);
    for t in &trials {
        m.metrics.insert(format!("dense_nmse.mu={}", t.mu_fid), t.dense_nmse);
    }
    m.metrics.insert("mean_final_objective".into(), objectives.iter().sum::<f64>() / objectives.len() as f64);
    save_manifest(&m, &run.manifest_file("labels"))?;
    let s = timing(&run, "labels", start)?;
    eprintln!("dect labels: {} labels at mu_fid = {mu} [{s:.1}s]", train_ids.len());
    Ok(())
}

// ------------------------------------------------------------------- train

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Passes over the training crops.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Initial learning rate; the final rate keeps the preset's ratio unless given.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Learning rate of the last epoch.
    #[arg(long)]
    pub lr_final: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Patch `height,width` cropped from each sample.
    #[arg(long, value_delimiter = ',')]
    pub patch: Option<Vec<usize>>,
    /// Channels of the first U-Net level; doubled per level.
    #[arg(long)]
    pub base_channels: Option<usize>,
    /// Number of pooling levels.
    #[arg(long)]
    pub depth: Option<usize>,
}

impl TrainArgs {
    fn apply(&self, preset: &TrainConfig, seed: u64) -> TrainConfig {
        let mut c = preset.clone();
        c.seed = seed;
        if let Some(e) = self.epochs {
            c.epochs = e;
        }
        if let Some(lr) = self.lr {
            c.lr_final = lr * preset.lr_final / preset.lr_initial;
            c.lr_initial = lr;
        }
        if let Some(lr) = self.lr_final {
            c.lr_final = lr;
        }
        if let Some(b) = self.batch_size {
            c.batch_size = b;
        }
        if let Some(p) = &self.patch {
            c.patch = [p[0], p[1], c.patch[2]];
        }
        if let Some(b) = self.base_channels {
            c.base_channels = b;
        }
        if let Some(d) = self.depth {
            c.depth = d;
        }
        c
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LossHistory {
    epoch_loss: Vec<f64>,
    learning_rates: Vec<f64>,
}

pub fn model_path(run: &Run, domain: Domain) -> PathBuf {
    match domain {
        Domain::Image => run.path("models/image.dcnn"),
        Domain::Sinogram => run.path("models/sinogram.dcnn"),
    }
}

pub fn train(g: &Global, a: &TrainArgs, domain: Domain) -> Result<()> {
    let start = Instant::now();
    let run = g.run()?;
    let corpus = run.corpus()?;
    let geo = &corpus.geometry;
    let (stage, preset_cfg, tag) = match domain {
        Domain::Image => ("train-image", &run.preset.train_image, "image"),
        Domain::Sinogram => ("train-sino", &run.preset.train_sinogram, "sinogram"),
    };
    if a.patch.as_ref().is_some_and(|p| p.len() != 2) {
        bail!("--patch takes `height,width`");
    }
    let cfg = a.apply(preset_cfg, run.seed);
    cfg.validate().context("training settings")?;

    let mut parents = vec![run.parent("simulate")?, run.parent("labels")?];
    let ids = corpus.ids(&corpus.split.train);
    ensure!(!ids.is_empty(), "the training split is empty");
    let mut cases = run.load_cases(&corpus, &ids, false)?;
    let mut inputs = Vec::new();
    for c in cases.iter_mut() {
        let lp = run.label_file(&c.id);
        ensure!(lp.exists(), "label {} is missing; rerun `dect labels`", lp.display());
        c.label = Some(run.load_vol(&lp, geo)?);
        inputs.push(run.record(&run.case_file(&c.id, "measured"))?);
        inputs.push(run.record(&lp)?);
    }
    let ts = TrainingSet {
        geometry: geo.clone(),
        fbp: run.preset.fbp.clone(),
        cases,
    };
    let (model, report) = match domain {
        Domain::Image => train_image_denoiser(&ts, &cfg)?,
        Domain::Sinogram => {
            parents.push(run.parent("train-image")?);
            let ip = model_path(&run, Domain::Image);
            let image = load_model(&ip).with_context(|| format!("loading {}", ip.display()))?;
            inputs.push(run.record(&ip)?);
            train_sinogram_denoiser(&ts, &image, &cfg)?
        }
    };

    let mp = model_path(&run, domain);
    fs::create_dir_all(mp.parent().expect("models dir"))?;
    save_model(&model, &mp).with_context(|| format!("writing {}", mp.display()))?;
    let lp = run.path(&format!("models/{tag}-loss.json"));
    write_json(
        &lp,
        &LossHistory {
            epoch_loss: report.epoch_loss.clone(),
            learning_rates: report.learning_rates.clone(),
        },
    )?;

    let mut m = RunManifest::new(stage, &run.preset.name, run.seed, geo, serde_json::to_value(&cfg)?);
    m.parents = parents;
    m.inputs = inputs;
    m.outputs = vec![run.record(&mp)?, run.record(&lp)?];
    let first = report.epoch_loss.first().copied().unwrap_or(f64::NAN);
    let last = report.epoch_loss.last().copied().unwrap_or(f64::NAN);
    m.metrics.insert("first_epoch_loss".into(), first);
    m.metrics.insert("final_epoch_loss".into(), last);
    m.metrics.insert("parameters".into(), model.parameter_count() as f64);
    m.metrics.insert("data_scale".into(), model.data_scale);
    save_manifest(&m, &run.manifest_file(stage))?;
    let s = timing(&run, stage, start)?;
    eprintln!("dect {stage}: {} epochs, loss {first:.4e} -> {last:.4e}, model {} [{s:.1}s]", cfg.epochs, mp.display());
    Ok(())
}

// ------------------------------------------------------------- reconstruct

#[derive(Args, Debug)]
pub struct ReconstructArgs {
    /// Measured sinogram file.
    #[arg(long)]
    pub input: PathBuf,
    /// fbp, mbir-tv, image-cnn or ours.
    #[arg(long, default_value = "ours", value_parser = parse_method)]
    pub method: Method,
    /// Image-domain model; defaults to the run directory's.
    #[arg(long)]
    pub image_model: Option<PathBuf>,
    /// Sinogram-domain model; defaults to the run directory's.
    #[arg(long)]
    pub sino_model: Option<PathBuf>,
    /// Output volume; defaults to `<run>/recon/<input stem>-<method>.dtn`.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Also write every intermediate of the dual-domain pipeline.
    #[arg(long)]
    pub keep_intermediates: bool,
    /// Weight of the optional TV post-denoising of `ours`.
    #[arg(long)]
    pub tv_weight: Option<f64>,
    /// MBIR data weight; defaults to the run's label search result.
    #[arg(long)]
    pub mu_fid: Option<f64>,
}

fn resolve_model(flag: &str, given: &Option<PathBuf>, default: PathBuf, method: Method) -> Result<PathBuf> {
    match given {
        Some(p) if p.is_file() => Ok(p.clone()),
        Some(p) => bail!("{flag}: model file {} does not exist", p.display()),
        None if default.is_file() => Ok(default),
        None => bail!("{flag} is required for method `{}` (no model at {})", method.slug(), default.display()),
    }
}

fn run_geometry(run: &Run) -> Result<FanBeamGeometry> {
    if run.path("corpus.json").exists() {
        Ok(run.corpus()?.geometry)
    } else {
        Ok(run.preset.geometry.clone())
    }
}

fn run_mbir(run: &Run, mu: Option<f64>) -> Result<MbirConfig> {
    let p = run.path("labels/mu_search.json");
    let mut cfg = if p.exists() {
        read_json::<MuSearch>(&p)?.mbir
    } else {
        run.preset.mbir.clone()
    };
    if let Some(mu) = mu {
        cfg.mu_fid = mu;
    }
    cfg.validate().context("--mu-fid")?;
    Ok(cfg)
}

fn with_suffix(p: &Path, suffix: &str) -> PathBuf {
    let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    p.with_file_name(format!("{stem}.{suffix}.dtn"))
}

pub fn reconstruct(g: &Global, a: &ReconstructArgs) -> Result<()> {
    let start = Instant::now();
    let run = g.run()?;
    let geo = run_geometry(&run)?;
    ensure!(a.input.is_file(), "--input: {} does not exist", a.input.display());
    let (sino, meta) = load_sinogram(&a.input).with_context(|| format!("--input {}", a.input.display()))?;
    crate::run::check_fingerprint(&a.input, &meta, &geo)?;
    sino.check_geometry(&geo).with_context(|| format!("--input {}", a.input.display()))?;

    let method = a.method;
    let stem = a.input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "input".into());
    let out = a.output.clone().unwrap_or_else(|| run.path(&format!("recon/{stem}-{}.dtn", method.slug())));
    let mut model_files = Vec::new();
    let mut config = serde_json::json!({ "method": method, "input": a.input });
    let mut intermediates = Vec::new();
    let volume = match method {
        Method::Fbp => right_inverse(&sino, &geo, &run.preset.fbp).map_err(|e| e.in_stage("fbp", &stem))?,
        Method::MbirTv => {
            let cfg = run_mbir(&run, a.mu_fid)?;
            config["mbir"] = serde_json::to_value(&cfg)?;
            mbir_tv(&sino, &geo, &cfg).map_err(|e| e.in_stage("mbir-tv", &stem))?.volume
        }
        Method::ImageCnn => {
            let ip = resolve_model("--image-model", &a.image_model, model_path(&run, Domain::Image), method)?;
            let image = load_model(&ip).with_context(|| format!("--image-model {}", ip.display()))?;
            model_files.push(ip);
            image_cnn(&sino, &image, &geo, &run.preset.fbp).map_err(|e| e.in_stage("image-cnn", &stem))?
        }
        Method::Ours => {
            let ip = resolve_model("--image-model", &a.image_model, model_path(&run, Domain::Image), method)?;
            let sp = resolve_model("--sino-model", &a.sino_model, model_path(&run, Domain::Sinogram), method)?;
            let models = PipelineModels {
                image: load_model(&ip).with_context(|| format!("--image-model {}", ip.display()))?,
                sinogram: load_model(&sp).with_context(|| format!("--sino-model {}", sp.display()))?,
                geometry: geo.clone(),
                fbp: run.preset.fbp.clone(),
                tv_weight: a.tv_weight.or(run.preset.tv_weight),
            };
            model_files.extend([ip, sp]);
            config["tv_weight"] = serde_json::json!(models.tv_weight);
            let r = infer(&sino, &models, a.keep_intermediates).map_err(|e| e.in_stage("ours", &stem))?;
            if let Some(i) = &r.intermediates {
                let meta = run.metadata(&geo, &[("input", &stem)]);
                let vols: [(&str, &Volume); 3] = [("right-inverse", &i.right_inverse), ("image-denoised", &i.image_denoised), ("fbp", &i.fbp)];
                for (name, v) in vols {
                    let p = with_suffix(&out, name);
                    save_volume(&p, v, &meta)?;
                    intermediates.push(p);
                }
                for (name, s) in [("dense-sinogram", &i.dense_sinogram), ("dense-denoised", &i.dense_denoised)] {
                    let p = with_suffix(&out, name);
                    save_sinogram(&p, s, &meta)?;
                    intermediates.push(p);
                }
            }
            r.volume
        }
    };
    let meta = run.metadata(&geo, &[("input", &stem), ("method", method.slug())]);
    save_volume(&out, &volume, &meta).with_context(|| format!("--output {}", out.display()))?;

    let mut m = RunManifest::new("reconstruct", &run.preset.name, run.seed, &geo, config);
    let mut inputs = vec![a.input.clone()];
    inputs.extend(model_files);
    for f in &inputs {
        let rec = run.record(f)?;
        if let Some(parent) = run.producer_of(&rec.sha256)? {
            if !m.parents.contains(&parent) {
                m.parents.push(parent);
            }
        }
        m.inputs.push(rec);
    }
    m.outputs.push(run.record(&out)?);
    for p in &intermediates {
        m.outputs.push(run.record(p)?);
    }
    let nmse = dect_core::evaluate_method(&volume.to_storage_precision(), &sino, &geo)?;
    for (e, v) in dect_core::ENERGY_LABELS.iter().zip(&nmse) {
        m.metrics.insert(format!("measured_view_nmse.{e}"), *v);
    }
    let mp = PathBuf::from(format!("{}.manifest.json", out.display()));
    save_manifest(&m, &mp)?;
    eprintln!(
        "dect reconstruct: {} -> {} (measured-view NMSE {:?}) [{:.1}s]",
        method.slug(),
        out.display(),
        nmse,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

// ---------------------------------------------------------------- evaluate

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Comma-separated subset of fbp, mbir-tv, image-cnn, ours.
    #[arg(long, value_delimiter = ',', value_parser = parse_method)]
    pub methods: Option<Vec<Method>>,
    /// Rebuild the report from the saved reconstructions and check it
    /// against the live one instead of reconstructing.
    #[arg(long)]
    pub from_artifacts: bool,
    /// Weight of the optional TV post-denoising of `ours`.
    #[arg(long)]
    pub tv_weight: Option<f64>,
}

fn recon_file(run: &Run, id: &str, method: Method) -> PathBuf {
    run.dir.join("eval").join(id).join(format!("{}.dtn", method.slug()))
}

fn report_metrics(m: &mut RunManifest, report: &MethodReport) {
    for mean in &report.mean {
        for (e, v) in report.energies.iter().zip(&mean.nmse) {
            m.metrics.insert(format!("nmse.{}.{e}", mean.method.slug()), *v);
        }
        m.metrics.insert(format!("failures.{}", mean.method.slug()), mean.failures as f64);
    }
    m.metrics.insert("mean_ordered".into(), f64::from(u8::from(report.mean_ordered)));
    m.metrics.insert("ordered_cases".into(), report.cases.iter().filter(|c| c.ordered).count() as f64);
}

pub fn evaluate(g: &Global, a: &EvaluateArgs) -> Result<()> {
    if a.from_artifacts {
        return evaluate_from_artifacts(g);
    }
    let start = Instant::now();
    let run = g.run()?;
    let corpus = run.corpus()?;
    let geo = &corpus.geometry;
    let methods = a.methods.clone().unwrap_or_else(|| Method::ALL.to_vec());
    ensure!(!methods.is_empty(), "--methods is empty");
    let mut parents = vec![run.parent("simulate")?];
    let mut inputs = Vec::new();
    let mbir = if methods.contains(&Method::MbirTv) {
        parents.push(run.parent("labels")?);
        run_mbir(&run, None)?
    } else {
        run.preset.mbir.clone()
    };
    let models = if methods.iter().any(|m| m.is_learned()) {
        parents.push(run.parent("train-image")?);
        parents.push(run.parent("train-sino")?);
        let ip = model_path(&run, Domain::Image);
        let sp = model_path(&run, Domain::Sinogram);
        inputs.push(run.record(&ip)?);
        inputs.push(run.record(&sp)?);
        Some(PipelineModels {
            image: load_model(&ip).with_context(|| format!("loading {}", ip.display()))?,
            sinogram: load_model(&sp).with_context(|| format!("loading {}", sp.display()))?,
            geometry: geo.clone(),
            fbp: run.preset.fbp.clone(),
            tv_weight: a.tv_weight.or(run.preset.tv_weight),
        })
    } else {
        None
    };
    let ids = corpus.ids(&corpus.split.test);
    ensure!(!ids.is_empty(), "the test split is empty");
    let cases = run.load_cases(&corpus, &ids, false)?;
    for id in &ids {
        inputs.push(run.record(&run.case_file(id, "measured"))?);
    }
    let cfg = CompareConfig {
        geometry: geo.clone(),
        fbp: run.preset.fbp.clone(),
        mbir,
        models,
        methods: methods.clone(),
    };
    let tv_weight = cfg.models.as_ref().and_then(|m| m.tv_weight);
    let Comparison {
        mut report,
        reconstructions,
    } = compare_methods(&cases, &cfg)?;

    let mut outputs = Vec::new();
    for (case, per_method) in cases.iter().zip(&reconstructions) {
        for (&method, r) in methods.iter().zip(per_method) {
            let p = recon_file(&run, &case.id, method);
            match r {
                Ok(v) => {
                    save_volume(&p, v, &run.metadata(geo, &[("case", &case.id), ("method", method.slug())]))?;
                    outputs.push(p);
                }
                Err(_) => {
                    let _ = fs::remove_file(&p);
                    let _ = fs::remove_file(sidecar_path(&p));
                }
            }
        }
    }
    let mut timings = std::mem::take(&mut report.runtime_seconds);
    report.seeds = BTreeMap::from([("run".to_string(), run.seed)]);
    let json_path = run.path("eval/report.json");
    let text_path = run.path("eval/report.txt");
    fs::write(&json_path, report.to_json()? + "\n")?;
    fs::write(&text_path, report.to_text())?;
    outputs.push(json_path);
    outputs.push(text_path);

    let config = serde_json::json!({
        "methods": methods,
        "mbir": cfg.mbir,
        "fbp": cfg.fbp,
        "tv_weight": tv_weight,
        "test_cases": ids,
    });
    let mut m = RunManifest::new("evaluate", &run.preset.name, run.seed, geo, config);
    m.parents = parents;
    m.inputs = inputs;
    for p in &outputs {
        m.outputs.push(run.record(p)?);
    }
    report_metrics(&mut m, &report);
    save_manifest(&m, &run.manifest_file("evaluate"))?;
    timings.insert("seconds".into(), start.elapsed().as_secs_f64());
    run.write_timing("evaluate", &timings)?;
    print!("{}", report.to_text());
    for failure in report.cases.iter().flat_map(|c| c.cells.iter().filter_map(|x| x.error.as_ref())) {
        eprintln!("dect evaluate: warning: {failure}");
    }
    Ok(())
}

fn evaluate_from_artifacts(g: &Global) -> Result<()> {
    let run = g.run()?;
    let corpus = run.corpus()?;
    let geo = &corpus.geometry;
    let live_path = run.path("eval/report.json");
    ensure!(live_path.exists(), "{} does not exist; run `dect evaluate` first", live_path.display());
    let live = MethodReport::from_json(&fs::read_to_string(&live_path)?).with_context(|| format!("parsing {}", live_path.display()))?;
    let ids: Vec<String> = live.cases.iter().map(|c| c.id.clone()).collect();
    let cases = run.load_cases(&corpus, &ids, false)?;
    let mut inputs = vec![run.record(&live_path)?];
    let mut recons = Vec::with_capacity(cases.len());
    for row in &live.cases {
        let mut per_method = Vec::with_capacity(live.methods.len());
        for (&method, cell) in live.methods.iter().zip(&row.cells) {
            if let Some(err) = &cell.error {
                per_method.push(Err(err.clone()));
                continue;
            }
            let p = recon_file(&run, &row.id, method);
            let (v, meta) = load_volume(&p).with_context(|| format!("loading {}", p.display()))?;
            crate::run::check_fingerprint(&p, &meta, geo)?;
            inputs.push(run.record(&p)?);
            per_method.push(Ok(v));
        }
        recons.push(per_method);
    }
    let mut regenerated = build_report(&cases, &live.methods, &recons, geo)?;
    regenerated.seeds = live.seeds.clone();
    let mut mismatches = Vec::new();
    for (a, b) in live.cases.iter().zip(&regenerated.cases) {
        for (x, y) in a.cells.iter().zip(&b.cells) {
            let same = match (&x.nmse, &y.nmse) {
                (Some(p), Some(q)) => p.len() == q.len() && p.iter().zip(q).all(|(u, v)| u.to_bits() == v.to_bits()),
                (None, None) => true,
                _ => false,
            };
            if !same {
                mismatches.push(format!("{}/{}", a.id, x.method.slug()));
            }
        }
    }
    let out = run.path("eval/report-regenerated.json");
    fs::write(&out, regenerated.to_json()? + "\n")?;

    let mut m = RunManifest::new(
        "evaluate-from-artifacts",
        &run.preset.name,
        run.seed,
        geo,
        serde_json::json!({ "methods": live.methods }),
    );
    m.parents.push(run.parent("evaluate")?);
    m.inputs = inputs;
    m.outputs.push(run.record(&out)?);
    report_metrics(&mut m, &regenerated);
    m.metrics.insert("mismatched_cells".into(), mismatches.len() as f64);
    save_manifest(&m, &run.manifest_file("evaluate-from-artifacts"))?;
    print!("{}", regenerated.to_text());
    if !mismatches.is_empty() {
        bail!("regenerated NMSE differs from the live report for {}", mismatches.join(", "));
    }
    println!("regenerated report matches the live run exactly ({} cases)", live.cases.len());
    Ok(())
}

// ----------------------------------------------------------- export-slices

#[derive(Args, Debug)]
pub struct ExportArgs {
    /// Volume or sinogram tensor file.
    #[arg(long)]
    pub input: PathBuf,
    /// Directory receiving the PGM files.
    #[arg(long)]
    pub output: PathBuf,
    /// Value mapped to black; defaults to the channel minimum.
    #[arg(long, allow_hyphen_values = true)]
    pub window_min: Option<f64>,
    /// Value mapped to white; defaults to the channel maximum.
    #[arg(long, allow_hyphen_values = true)]
    pub window_max: Option<f64>,
    /// Only this energy channel (0-based).
    #[arg(long)]
    pub energy: Option<usize>,
}

pub fn export_slices(g: &Global, a: &ExportArgs) -> Result<()> {
    let run = g.run()?;
    let side = sidecar_path(&a.input);
    ensure!(a.input.is_file(), "--input: {} does not exist", a.input.display());
    let meta: Metadata = read_json(&side)?;
    // (energy, z, rows, cols) with a row-major image per (energy, z).
    let (data, dims) = match meta.kind.as_str() {
        "volume" => {
            let (v, _) = load_volume(&a.input)?;
            let d = v.data.dim();
            (v.data, [d.0, d.1, d.2, d.3])
        }
        "sinogram" => {
            let (s, _) = load_sinogram(&a.input)?;
            // Stored (energy, view, z, detector); one image per slice shows
            // views down and detectors across.
            let p = s.data.permuted_axes([0, 2, 1, 3]).as_standard_layout().into_owned();
            let d = p.dim();
            (p, [d.0, d.1, d.2, d.3])
        }
        other => bail!("--input: {} holds an unknown kind `{other}`", a.input.display()),
    };
    let [ne, nz, rows, cols] = dims;
    let energies: Vec<usize> = match a.energy {
        Some(e) if e < ne => vec![e],
        Some(e) => bail!("--energy {e} out of range (file has {ne} channels)"),
        None => (0..ne).collect(),
    };
    if let (Some(lo), Some(hi)) = (a.window_min, a.window_max) {
        ensure!(hi > lo, "--window-max must exceed --window-min");
    }
    fs::create_dir_all(&a.output).with_context(|| format!("--output {}", a.output.display()))?;
    let stem = a.input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let mut windows = BTreeMap::new();
    let mut written = Vec::new();
    for e in energies {
        let channel: Vec<f64> = data.index_axis(ndarray::Axis(0), e).iter().copied().collect();
        let lo = a.window_min.unwrap_or_else(|| channel.iter().copied().fold(f64::INFINITY, f64::min));
        let hi = a.window_max.unwrap_or_else(|| channel.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        let label = meta.energy_labels.get(e).cloned().unwrap_or_else(|| format!("e{e}"));
        windows.insert(label.clone(), [lo, hi]);
        for z in 0..nz {
            let img = &channel[z * rows * cols..(z + 1) * rows * cols];
            let p = a.output.join(format!("{stem}-{label}-z{z:03}.pgm"));
            pgm::write_pgm(&p, cols, rows, &pgm::window(img, lo, hi))?;
            written.push(p);
        }
    }
    let geo = run_geometry(&run).unwrap_or_else(|_| run.preset.geometry.clone());
    let mut m = RunManifest::new(
        "export-slices",
        &run.preset.name,
        run.seed,
        &geo,
        serde_json::json!({ "input": a.input, "kind": meta.kind, "windows": windows }),
    );
    let rec = run.record(&a.input)?;
    if let Some(parent) = run.producer_of(&rec.sha256)? {
        m.parents.push(parent);
    }
    m.inputs.push(rec);
    for p in &written {
        m.outputs.push(run.record(p)?);
    }
    m.metrics.insert("images".into(), written.len() as f64);
    save_manifest(&m, &a.output.join("manifest.json"))?;
    eprintln!("dect export-slices: {} images in {}", written.len(), a.output.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn methods_parse_by_slug_and_name() {
        assert_eq!(parse_method("mbir-tv"), Ok(Method::MbirTv));
        assert_eq!(parse_method("image cnn"), Ok(Method::ImageCnn));
        assert!(parse_method("sart").is_err());
    }

    #[test]
    fn noise_seeds_differ_per_case() {
        assert_ne!(noise_seed(7, 0), noise_seed(7, 1));
        assert_ne!(noise_seed(7, 0), noise_seed(8, 0));
    }

    #[test]
    fn train_overrides_keep_lr_ratio() {
        let base = TrainConfig::desk(Domain::Image);
        let a = TrainArgs {
            epochs: Some(2),
            lr: Some(base.lr_initial * 2.0),
            lr_final: None,
            batch_size: None,
            patch: Some(vec![32, 32]),
            base_channels: None,
            depth: None,
        };
        let c = a.apply(&base, 3);
        assert_eq!(c.epochs, 2);
        assert_eq!(c.seed, 3);
        assert!((c.lr_final / c.lr_initial - base.lr_final / base.lr_initial).abs() < 1e-12);
        assert_eq!(c.patch, [32, 32, base.patch[2]]);
    }

    #[test]
    fn intermediate_names() {
        assert_eq!(with_suffix(Path::new("/a/b/x-ours.dtn"), "fbp"), PathBuf::from("/a/b/x-ours.fbp.dtn"));
    }
}
