//! Dataset files on disk: round trips, damaged inputs and the generator.

use std::fs;
use std::path::Path;

use hopa_core::data::pnm::{decode, Raster};
use hopa_core::data::synthetic::{
    class_moments, gen_synthetic, generate_split, Split, SyntheticSpec, SPEC_FILE,
};
use hopa_core::data::{load_all, read_index, write_split, SegSample};
use hopa_core::Error;
use hopa_tensor::Array4;
use proptest::prelude::*;

fn small(mut spec: SyntheticSpec, n: usize) -> SyntheticSpec {
    spec.height = 16;
    spec.width = 24;
    spec.train_count = n;
    spec.val_count = n;
    spec
}

fn write_small_split(dir: &Path) -> Vec<SegSample> {
    let samples = generate_split(&small(SyntheticSpec::order3(), 3), 1, Split::Train).unwrap();
    write_split(dir, &samples).unwrap();
    samples
}

#[test]
fn split_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let samples = write_small_split(dir.path());
    let back = load_all(dir.path(), 4).unwrap();
    assert_eq!(back, samples, "generated pixels are already 8-bit levels");
}

#[test]
fn truncated_image_reports_offset() {
    let dir = tempfile::tempdir().unwrap();
    write_small_split(dir.path());
    let img = dir.path().join("00001.ppm");
    let bytes = fs::read(&img).unwrap();
    fs::write(&img, &bytes[..bytes.len() - 10]).unwrap();
    match load_all(dir.path(), 4) {
        Err(Error::Parse { path, offset, msg }) => {
            assert_eq!(path, img);
            assert_eq!(offset, bytes.len() as u64 - 10);
            assert!(msg.contains("truncated"), "{msg}");
        }
        other => panic!("expected parse error, got {other:?}"),
    }
}

#[test]
fn wrong_magic_is_reported_at_zero() {
    let dir = tempfile::tempdir().unwrap();
    write_small_split(dir.path());
    let lbl = dir.path().join("00000.pgm");
    let mut bytes = fs::read(&lbl).unwrap();
    bytes[1] = b'6';
    fs::write(&lbl, bytes).unwrap();
    assert!(matches!(
        load_all(dir.path(), 4),
        Err(Error::Parse { offset: 0, .. })
    ));
}

#[test]
fn out_of_range_label_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    write_small_split(dir.path());
    let lbl = dir.path().join("00002.pgm");
    let mut raster = Raster::read(&lbl, 1).unwrap();
    raster.data[5] = 9;
    raster.write(&lbl).unwrap();
    match load_all(dir.path(), 4) {
        Err(Error::Validation(msg)) => {
            assert!(msg.contains("00002.pgm"), "{msg}");
            assert!(msg.contains("label 9"), "{msg}");
        }
        other => panic!("expected validation error, got {other:?}"),
    }
}

#[test]
fn ignore_label_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    write_small_split(dir.path());
    let lbl = dir.path().join("00000.pgm");
    let mut raster = Raster::read(&lbl, 1).unwrap();
    raster.data[0] = 255;
    raster.write(&lbl).unwrap();
    assert_eq!(load_all(dir.path(), 4).unwrap()[0].label[0], 255);
}

#[test]
fn missing_file_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    write_small_split(dir.path());
    fs::remove_file(dir.path().join("00001.pgm")).unwrap();
    assert!(matches!(load_all(dir.path(), 4), Err(Error::Io { .. })));
}

#[test]
fn size_mismatch_between_image_and_label() {
    let dir = tempfile::tempdir().unwrap();
    write_small_split(dir.path());
    let lbl = dir.path().join("00000.pgm");
    Raster {
        width: 3,
        height: 3,
        channels: 1,
        data: vec![0; 9],
    }
    .write(&lbl)
    .unwrap();
    assert!(matches!(load_all(dir.path(), 4), Err(Error::Validation(_))));
}

#[test]
fn malformed_index_line() {
    let dir = tempfile::tempdir().unwrap();
    write_small_split(dir.path());
    let index = dir.path().join("index.txt");
    let text = fs::read_to_string(&index).unwrap();
    let first = text.lines().next().unwrap().len() as u64 + 1;
    fs::write(&index, text.replacen("00001.ppm 00001.pgm", "00001.ppm", 1)).unwrap();
    match read_index(dir.path()) {
        Err(Error::Parse { offset, .. }) => assert_eq!(offset, first),
        other => panic!("expected parse error, got {other:?}"),
    }
}

#[test]
fn comments_in_header_are_skipped() {
    let r = decode(b"P5\n# made by hand\n2 1\n255\n\x01\x02", 1).unwrap();
    assert_eq!((r.width, r.height, r.data), (2, 1, vec![1, 2]));
}

#[test]
fn generator_writes_both_splits_and_spec() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small(SyntheticSpec::first_order(), 2);
    gen_synthetic(&spec, 3, dir.path()).unwrap();
    assert!(dir.path().join(SPEC_FILE).is_file());
    assert_eq!(load_all(&dir.path().join("train"), 2).unwrap().len(), 2);
    assert_eq!(load_all(&dir.path().join("val"), 2).unwrap().len(), 2);
}

#[test]
fn generation_is_seeded() {
    let spec = small(SyntheticSpec::order3(), 2);
    let a = generate_split(&spec, 5, Split::Val).unwrap();
    assert_eq!(a, generate_split(&spec, 5, Split::Val).unwrap());
    assert_ne!(a, generate_split(&spec, 6, Split::Val).unwrap());
    assert_ne!(a, generate_split(&spec, 5, Split::Train).unwrap());
}

/// Classes of an order-3 pair share means and variances and differ only in
/// the joint third central moment.
#[test]
fn order3_pairs_differ_only_in_third_moment() {
    let mut spec = SyntheticSpec::order3();
    spec.train_count = 64;
    let m = class_moments(&generate_split(&spec, 0, Split::Train).unwrap(), 4);
    for (a, b) in [(0, 1), (2, 3)] {
        for c in 0..3 {
            assert!(
                (m[a].mean[c] - m[b].mean[c]).abs() < 0.03,
                "{:?} {:?}",
                m[a],
                m[b]
            );
            assert!(
                (m[a].var[c] - m[b].var[c]).abs() < 0.01,
                "{:?} {:?}",
                m[a],
                m[b]
            );
        }
        assert!(
            (m[a].third - m[b].third).abs() > 0.03,
            "{:?} {:?}",
            m[a],
            m[b]
        );
    }
}

#[test]
fn first_order_classes_differ_in_mean() {
    let mut spec = SyntheticSpec::first_order();
    spec.train_count = 16;
    let m = class_moments(&generate_split(&spec, 0, Split::Train).unwrap(), 2);
    assert!((0..3).any(|c| (m[0].mean[c] - m[1].mean[c]).abs() > 0.2));
}

proptest! {
    #[test]
    fn pnm_round_trip(w in 1usize..9, h in 1usize..9, gray in any::<bool>(), seed in any::<u8>()) {
        let channels = if gray { 1 } else { 3 };
        let data: Vec<u8> = (0..w * h * channels).map(|i| (i as u8).wrapping_mul(31).wrapping_add(seed)).collect();
        let r = Raster { width: w, height: h, channels, data };
        prop_assert_eq!(decode(&r.encode(), channels).unwrap(), r);
    }

    /// Any strict prefix of a valid file fails to decode.
    #[test]
    fn every_truncation_is_rejected(cut in 0usize..30) {
        let r = Raster { width: 2, height: 2, channels: 3, data: (0..12).collect() };
        let bytes = r.encode();
        prop_assume!(cut < bytes.len());
        prop_assert!(decode(&bytes[..cut], 3).is_err());
    }

    #[test]
    fn sample_rasters_round_trip(levels in prop::collection::vec(any::<u8>(), 3 * 6), labels in prop::collection::vec(0u8..4, 6)) {
        let img = Array4::from_fn([1, 3, 2, 3], |_, c, y, x| levels[(c * 2 + y) * 3 + x] as f64 / 255.0);
        let s = SegSample::new(img, labels).unwrap();
        prop_assert_eq!(SegSample::from_rasters(&s.image_raster(), &s.label_raster()).unwrap(), s);
    }
}
