//! End-to-end use of the public API on a small scanner.

use dect_core::eval::{build_report, compare_methods, CompareConfig, Method};
use dect_core::neural::{load_model, save_model};
use dect_core::phantom::{generate_corpus, rasterize, simulate_acquisition, CorpusConfig, NoiseModel};
use dect_core::pipeline::{select_mu_fid, Case, PipelineModels, TrainingSet};
use dect_core::{
    fbp, forward_project, infer, make_labels, mbir_tv, nmse, right_inverse, sparse_angles, train_image_denoiser,
    train_sinogram_denoiser, AngleSet, Domain, FanBeamGeometry, FbpConfig, MbirConfig, TrainConfig,
};

fn scanner() -> FanBeamGeometry {
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

fn cases(g: &FanBeamGeometry, n: usize, seed: u64) -> Vec<Case> {
    let specs = generate_corpus(n, n, seed, &CorpusConfig::for_geometry(g, 4));
    let angles = sparse_angles(g, 9).unwrap();
    let full = AngleSet::full(g.n_views_full);
    specs
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let truth = rasterize(s, g, 4).unwrap();
            let noise = NoiseModel {
                incident_counts: 5e4,
                seed: k as u64,
            };
            let measured = simulate_acquisition(&truth, g, &angles, Some(noise)).unwrap().to_storage_precision();
            let mut c = Case::new(s.name.clone(), measured);
            c.dense = Some(forward_project(&truth, g, &full).unwrap());
            c.truth = Some(truth);
            c
        })
        .collect()
}

fn small_training(domain: Domain) -> TrainConfig {
    TrainConfig {
        epochs: 3,
        batch_size: 4,
        patch: match domain {
            Domain::Image => [16, 16, 2],
            Domain::Sinogram => [4, 32, 2],
        },
        base_channels: 4,
        depth: 2,
        lr_initial: 0.02,
        lr_final: 0.005,
        ..TrainConfig::desk(domain)
    }
}

#[test]
fn dense_fbp_beats_sparse_right_inverse() {
    let g = scanner();
    let c = &cases(&g, 1, 4)[1];
    let truth = c.truth.as_ref().unwrap();
    let dense = fbp(c.dense.as_ref().unwrap(), &g, &FbpConfig::default()).unwrap();
    let sparse = right_inverse(&c.measured, &g, &FbpConfig::default()).unwrap();
    let err = |v: &dect_core::Volume| v.data.iter().zip(truth.data.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    assert!(err(&dense) < 0.5 * err(&sparse), "{} vs {}", err(&dense), err(&sparse));
}

#[test]
fn mbir_fits_measured_views_better_than_fbp() {
    let g = scanner();
    for c in cases(&g, 1, 9) {
        let cfg = MbirConfig {
            max_iterations: 60,
            ..MbirConfig::default()
        };
        let r = mbir_tv(&c.measured, &g, &cfg).unwrap();
        let score = |v: &dect_core::Volume| nmse(&forward_project(v, &g, &c.measured.angles).unwrap(), &c.measured).unwrap();
        let m = score(&r.volume);
        let f = score(&right_inverse(&c.measured, &g, &FbpConfig::default()).unwrap());
        assert!(m.iter().zip(&f).all(|(a, b)| a < b), "{m:?} vs {f:?}");
    }
}

#[test]
fn train_infer_compare_and_reload() {
    let g = scanner();
    let all = cases(&g, 2, 21);
    let base = MbirConfig {
        max_iterations: 30,
        ..MbirConfig::default()
    };
    let (mu, trials) = select_mu_fid(&all[..1], &g, &base, &[1.0, 10.0]).unwrap();
    assert_eq!(trials.len(), 2);
    assert!(trials.iter().any(|t| t.mu_fid == mu));
    let mbir = MbirConfig { mu_fid: mu, ..base };

    let mut train: Vec<Case> = all[..3].to_vec();
    let labels = make_labels(&train, &g, &mbir).unwrap();
    for (c, l) in train.iter_mut().zip(labels) {
        c.label = Some(l);
    }
    let ts = TrainingSet {
        geometry: g.clone(),
        fbp: FbpConfig::default(),
        cases: train,
    };
    let (qi, ri) = train_image_denoiser(&ts, &small_training(Domain::Image)).unwrap();
    let (qs, rs) = train_sinogram_denoiser(&ts, &qi, &small_training(Domain::Sinogram)).unwrap();
    assert_eq!(ri.epoch_loss.len(), 3);
    assert!(rs.epoch_loss.iter().all(|l| l.is_finite()));
    assert!(train_sinogram_denoiser(&ts, &qs, &small_training(Domain::Sinogram)).is_err(), "first stage must be an image model");

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("qi.dcnn");
    save_model(&qi, &p).unwrap();
    assert_eq!(load_model(&p).unwrap(), qi);

    let models = PipelineModels {
        image: qi,
        sinogram: qs,
        geometry: g.clone(),
        fbp: FbpConfig::default(),
        tv_weight: Some(1e-3),
    };
    let test = &all[3..];
    let r = infer(&test[0].measured, &models, true).unwrap();
    let i = r.intermediates.unwrap();
    assert_eq!(i.dense_sinogram.n_views(), g.n_views_full);
    assert_eq!(r.volume.data.dim(), i.fbp.data.dim());

    let cmp = compare_methods(
        test,
        &CompareConfig {
            geometry: g.clone(),
            fbp: FbpConfig::default(),
            mbir,
            models: Some(models),
            methods: Method::ALL.to_vec(),
        },
    )
    .unwrap();
    let report = &cmp.report;
    assert_eq!(report.cases.len(), 1);
    assert!(report.mean.iter().all(|m| m.failures == 0 && m.nmse.iter().all(|v| v.is_finite())));
    let fbp_mean = report.mean_of(Method::Fbp).unwrap();
    let mbir_mean = report.mean_of(Method::MbirTv).unwrap();
    assert!(mbir_mean.iter().zip(fbp_mean).all(|(a, b)| a < b));

    // The report is a pure function of the stored reconstructions.
    let again = build_report(test, &Method::ALL, &cmp.reconstructions, &g).unwrap();
    assert_eq!(again.cases, report.cases);
    let text = report.to_json().unwrap();
    assert_eq!(&dect_core::MethodReport::from_json(&text).unwrap(), report);
}
