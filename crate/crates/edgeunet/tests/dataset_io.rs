use edgeunet::dataset::{load_images, read_json, write_synth, SynthConfig, MANIFEST};
use edgeunet::pnm;
use edgeunet_core::datagen::{DatasetManifest, Split};
use edgeunet_core::metrics::cdr;

#[test]
fn synth_writes_consistent_manifest_and_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig { count: 3, augment_to: Some(8), seed: 5, ..SynthConfig::default() };
    let m = write_synth(dir.path(), &cfg).unwrap();
    assert_eq!((m.augmented_count, m.train_count, m.test_count), (8, 6, 2));
    assert_eq!(m.variants_per_source, [3, 3, 2]);
    let back: DatasetManifest = read_json(&dir.path().join(MANIFEST)).unwrap();
    assert_eq!(back, m);
    assert_eq!(m.items.iter().filter(|i| i.split == Split::Train).count(), 6);

    for item in m.items.iter().filter(|i| i.variant == 0) {
        let disc = pnm::read_mask(&dir.path().join(&item.disc_mask)).unwrap();
        let cup = pnm::read_mask(&dir.path().join(&item.cup_mask)).unwrap();
        assert!((cdr(&cup, &disc).unwrap() - item.truth.cdr).abs() <= 0.03);
    }
    let (paths, batch) = load_images(dir.path(), None).unwrap();
    assert_eq!(paths.len(), 8);
    assert_eq!(batch.dims(), [8, 128, 128, 3]);
}

#[test]
fn synth_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = SynthConfig { count: 2, augment_to: Some(4), ..SynthConfig::default() };
    write_synth(a.path(), &cfg).unwrap();
    write_synth(b.path(), &cfg).unwrap();
    for rel in ["images/s0001_v01.ppm", "masks/s0000_v01_cup.pgm", "manifest.json"] {
        assert_eq!(std::fs::read(a.path().join(rel)).unwrap(), std::fs::read(b.path().join(rel)).unwrap(), "{rel}");
    }
}

#[test]
fn image_files_round_trip_byte_exactly() {
    let dir = tempfile::tempdir().unwrap();
    write_synth(dir.path(), &SynthConfig { count: 1, ..SynthConfig::default() }).unwrap();
    let img_path = dir.path().join("images/s0000_v00.ppm");
    let bytes = std::fs::read(&img_path).unwrap();
    let image = pnm::read_image(&img_path).unwrap();
    assert_eq!(pnm::encode_ppm(&image).unwrap(), bytes);
    let mask_path = dir.path().join("masks/s0000_v00_disc.pgm");
    let mask = pnm::read_mask(&mask_path).unwrap();
    assert_eq!(pnm::encode_pgm_mask(&mask), std::fs::read(&mask_path).unwrap());
}

#[test]
fn mixed_sizes_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let small = edgeunet_core::Tensor::zeros([1, 32, 32, 3]);
    let big = edgeunet_core::Tensor::zeros([1, 64, 32, 3]);
    pnm::write_image(&dir.path().join("a.ppm"), &small).unwrap();
    pnm::write_image(&dir.path().join("b.ppm"), &big).unwrap();
    let err = load_images(dir.path(), None).unwrap_err();
    assert!(err.to_string().contains("expected 32x32"), "{err}");
    assert!(load_images(tempfile::tempdir().unwrap().path(), None).is_err());
}
