use dect_core::storage::{decode_tensor, encode_tensor, load_sinogram, load_volume, save_sinogram, save_volume, ByteOrder, Metadata, TensorFile};
use dect_core::{sample_views, zero_pad_views, AngleSet, FanBeamGeometry, Sinogram, Volume};
use proptest::prelude::*;

fn tiny() -> FanBeamGeometry {
    FanBeamGeometry {
        dsd_mm: 400.0,
        dso_mm: 250.0,
        n_detectors: 12,
        det_pitch_mm: 2.0,
        roi_nx: 6,
        roi_ny: 6,
        pixel_mm: 2.0,
        n_views_full: 18,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn tensor_codec_is_lossless(dims in prop::collection::vec(1usize..5, 1..5), seed in any::<u32>(), big in any::<bool>()) {
        let n: usize = dims.iter().product();
        let data: Vec<f32> = (0..n).map(|i| f32::from_bits((seed as u64 * 2654435761 + i as u64 * 40503) as u32 & 0x7f7f_ffff)).collect();
        let t = TensorFile {
            labels: (0..dims.len()).map(|i| format!("axis{i}")).collect(),
            dims,
            data,
        };
        let order = if big { ByteOrder::Big } else { ByteOrder::Little };
        let bytes = encode_tensor(&t, order).unwrap();
        let back = decode_tensor(&bytes).unwrap();
        prop_assert_eq!(&back.dims, &t.dims);
        prop_assert_eq!(&back.labels, &t.labels);
        prop_assert!(back.data.iter().zip(&t.data).all(|(a, b)| a.to_bits() == b.to_bits()));
        // Any truncation is rejected rather than misread.
        let cut = bytes.len() / 2;
        prop_assert!(decode_tensor(&bytes[..cut]).is_err());
    }

    #[test]
    fn sparse_views_survive_padding(stride in prop::sample::select(vec![1usize, 2, 3, 6, 9]), seed in any::<u64>()) {
        let g = tiny();
        let angles = AngleSet::new((0..g.n_views_full).step_by(stride).collect(), g.n_views_full).unwrap();
        let mut s = Sinogram::zeros(2, angles.clone(), 2, g.n_detectors);
        s.data.iter_mut().enumerate().for_each(|(i, v)| *v = ((seed.wrapping_add(i as u64) % 97) as f64) / 7.0);
        let padded = zero_pad_views(&s, &g).unwrap();
        prop_assert_eq!(padded.n_views(), g.n_views_full);
        let back = sample_views(&padded, &angles).unwrap();
        prop_assert_eq!(back.data, s.data);
    }
}

#[test]
fn files_round_trip_with_metadata() {
    let g = tiny();
    let dir = tempfile::tempdir().unwrap();
    let mut vol = Volume::zeros(2, 3, g.roi_ny, g.roi_nx);
    vol.data.iter_mut().enumerate().for_each(|(i, v)| *v = (i as f64 * 0.37).sin());
    let vol = vol.to_storage_precision();
    let mut meta = Metadata::new(Some(g.fingerprint()));
    meta.seeds.insert("noise".into(), 11);
    let p = dir.path().join("nested/v.dtn");
    save_volume(&p, &vol, &meta).unwrap();
    let (back, m) = load_volume(&p).unwrap();
    assert_eq!(back, vol);
    assert_eq!(m.seeds["noise"], 11);
    assert_eq!(m.kind, "volume");
    assert!(load_sinogram(&p).is_err(), "kind mismatch must be reported");

    let angles = AngleSet::new(vec![0, 2, 11], g.n_views_full).unwrap();
    let mut s = Sinogram::zeros(2, angles, 3, g.n_detectors);
    s.data.iter_mut().enumerate().for_each(|(i, v)| *v = i as f64 / 8.0);
    let q = dir.path().join("s.dtn");
    save_sinogram(&q, &s, &meta).unwrap();
    let (sb, _) = load_sinogram(&q).unwrap();
    assert_eq!(sb, s);
    let bytes = std::fs::read(&q).unwrap();
    save_sinogram(&q, &sb, &meta).unwrap();
    assert_eq!(std::fs::read(&q).unwrap(), bytes);
}
