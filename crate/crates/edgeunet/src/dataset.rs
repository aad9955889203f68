//! Synthetic dataset export and image-directory loading.
//!
//! A dataset directory holds `images/*.ppm`, `masks/*_disc.pgm`,
//! `masks/*_cup.pgm` and `manifest.json`.

use std::fs;
use std::path::{Path, PathBuf};

use edgeunet_core::datagen::{
    augment, gen_sample, plan_augmentation, split, AugmentConfig, DatasetManifest, ManifestItem, Split,
    SynthSpec, Transform,
};
use edgeunet_core::{Error as CoreError, Tensor};

use crate::{pnm, Error, Result};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub name: String,
    pub count: usize,
    pub seed: u64,
    /// Total items after augmentation; `None` keeps only the sources.
    pub augment_to: Option<usize>,
    pub train_fraction: f64,
    pub size: usize,
    pub noise: f32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            name: "synth".into(),
            count: 8,
            seed: 0,
            augment_to: None,
            train_fraction: 0.75,
            size: 128,
            noise: 0.03,
        }
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Generates, augments, splits and writes a dataset; returns its manifest.
/// Variant 0 of every source is the unmodified sample.
pub fn write_synth(out: &Path, cfg: &SynthConfig) -> Result<DatasetManifest> {
    if cfg.count == 0 {
        return Err(CoreError::EmptyDataset.into());
    }
    let total = cfg.augment_to.unwrap_or(cfg.count);
    let variants = plan_augmentation(cfg.count, total)?;
    let (train, _) = split(total, cfg.train_fraction, cfg.seed)?;
    let mut is_train = vec![false; total];
    train.iter().for_each(|&i| is_train[i] = true);

    create_dir(&out.join("images"))?;
    create_dir(&out.join("masks"))?;
    let mut items = Vec::with_capacity(total);
    for (source, &k) in variants.iter().enumerate() {
        let mut spec = SynthSpec::random(cfg.seed, source as u64, cfg.size, cfg.size);
        spec.noise = cfg.noise;
        let sample = gen_sample(&spec)?;
        let masks = [sample.disc.clone(), sample.cup.clone()];
        let aug_seed = cfg.seed ^ (source as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let mut outs = vec![(sample.image.clone(), masks.to_vec(), Transform::IDENTITY)];
        if k > 1 {
            let extra = augment(&sample.image, &masks, k - 1, aug_seed, &AugmentConfig::default())?;
            outs.extend(extra.into_iter().map(|a| (a.image, a.masks, a.transform)));
        }
        for (variant, (image, masks, transform)) in outs.into_iter().enumerate() {
            let id = format!("s{source:04}_v{variant:02}");
            let rel = |dir: &str, suffix: &str, ext: &str| format!("{dir}/{id}{suffix}.{ext}");
            let (img, disc, cup) = (rel("images", "", "ppm"), rel("masks", "_disc", "pgm"), rel("masks", "_cup", "pgm"));
            pnm::write_image(&out.join(&img), &image)?;
            pnm::write_mask(&out.join(&disc), &masks[0])?;
            pnm::write_mask(&out.join(&cup), &masks[1])?;
            let index = items.len();
            items.push(ManifestItem {
                id,
                source,
                variant,
                image: img,
                disc_mask: disc,
                cup_mask: cup,
                split: if is_train[index] { Split::Train } else { Split::Test },
                truth: sample.truth,
                transform,
            });
        }
    }
    let manifest = DatasetManifest {
        name: cfg.name.clone(),
        seed: cfg.seed,
        source_count: cfg.count,
        augmented_count: total,
        train_count: train.len(),
        test_count: total - train.len(),
        train_fraction: cfg.train_fraction,
        variants_per_source: variants,
        items,
    };
    manifest.check()?;
    write_json(&out.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Json { path: path.into(), source: e })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json { path: path.into(), source: e })
}

/// Sorted `*.ppm` files directly inside `dir`, or inside `dir/images` when
/// that exists.
pub fn image_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let dir = if dir.join("images").is_dir() { dir.join("images") } else { dir.to_path_buf() };
    let mut paths = Vec::new();
    for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
        let path = entry.map_err(|e| Error::io(&dir, e))?.path();
        if path.extension().is_some_and(|x| x == "ppm") && path.is_file() {
            paths.push(path);
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Data { path: dir, msg: "no .ppm images found".into() });
    }
    Ok(paths)
}

/// Loads every image of a directory into one (N, H, W, 3) batch. All images
/// must share the first image's size.
pub fn load_images(dir: &Path, limit: Option<usize>) -> Result<(Vec<PathBuf>, Tensor)> {
    let mut paths = image_paths(dir)?;
    if let Some(n) = limit {
        paths.truncate(n.max(1));
    }
    let first = pnm::read_image(&paths[0])?;
    let (h, w) = (first.height(), first.width());
    let mut items = vec![first];
    for p in &paths[1..] {
        items.push(pnm::read_image_sized(p, h, w)?);
    }
    Ok((paths, Tensor::stack(&items)?))
}
