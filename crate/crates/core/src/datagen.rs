//! Synthetic fundus-like samples with exact ground truth, augmentation and
//! train/test split accounting.
//!
//! Images are RGB with 8-bit channel values scaled into [0, 1], so they
//! survive a round trip through an 8-bit file unchanged.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::metrics::Laterality;
use crate::{Error, Mask, Result, Tensor};

/// Geometry and rendering parameters of one synthetic sample.
///
/// Radii are integers and centers are pixel coordinates, so the vertical
/// diameter of each rasterized ellipse is exactly `2 * ry + 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SynthSpec {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    /// Disc center as (row, column).
    pub disc_center: (i64, i64),
    /// (vertical, horizontal) disc radii.
    pub disc_radii: (i64, i64),
    /// (vertical, horizontal) cup radii.
    pub cup_radii: (i64, i64),
    /// Cup displacement from the disc center as (right, up) in pixels.
    pub cup_offset: (i64, i64),
    /// Standard deviation of the additive texture noise.
    pub noise: f32,
    pub laterality: Laterality,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            height: 128,
            width: 128,
            disc_center: (64, 64),
            disc_radii: (40, 36),
            cup_radii: (20, 22),
            cup_offset: (0, 0),
            noise: 0.03,
            laterality: Laterality::Right,
        }
    }
}

impl SynthSpec {
    /// Cup center as (row, column).
    pub fn cup_center(&self) -> (i64, i64) {
        (self.disc_center.0 - self.cup_offset.1, self.disc_center.1 + self.cup_offset.0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.height == 0 || self.width == 0 || self.height % 32 != 0 || self.width % 32 != 0 {
            return bad(format!("image size {}x{} must be a positive multiple of 32", self.height, self.width));
        }
        let (dry, drx) = self.disc_radii;
        let (cry, crx) = self.cup_radii;
        if dry <= 0 || drx <= 0 || cry <= 0 || crx <= 0 {
            return bad("radii must be positive".into());
        }
        let (cy, cx) = self.disc_center;
        if cy - dry < 0 || cx - drx < 0 || cy + dry >= self.height as i64 || cx + drx >= self.width as i64 {
            return bad("disc must lie inside the image".into());
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad(format!("noise must be finite and >= 0, got {}", self.noise));
        }
        // every point of the cup boundary strictly inside the disc ellipse
        let (uy, ux) = self.cup_center();
        for k in 0..720 {
            let a = (k as f64 * 0.5).to_radians();
            let y = uy as f64 + cry as f64 * libm::sin(a) - cy as f64;
            let x = ux as f64 + crx as f64 * libm::cos(a) - cx as f64;
            if (y / dry as f64) * (y / dry as f64) + (x / drx as f64) * (x / drx as f64) >= 1.0 {
                return bad("cup ellipse must lie strictly inside the disc ellipse".into());
            }
        }
        Ok(())
    }

    /// Analytic vertical CDR of the rasterized ellipses.
    pub fn truth_cdr(&self) -> f64 {
        (2 * self.cup_radii.0 + 1) as f64 / (2 * self.disc_radii.0 + 1) as f64
    }

    /// Varied geometry for sample `index` of a suite. Each index draws from
    /// its own stream of `seed`. Disc vertical radius is at least 20 px for
    /// 128-pixel images and scales with the image.
    pub fn random(seed: u64, index: u64, height: usize, width: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        let side = height.min(width) as f64;
        let dry = libm::round(rng.random_range(side * 0.16..=side * 0.31)) as i64;
        let drx = libm::round(dry as f64 * rng.random_range(0.82..=0.98)) as i64;
        let cy = rng.random_range(dry + 2..height as i64 - dry - 2);
        let cx = rng.random_range(drx + 2..width as i64 - drx - 2);
        let cry = libm::round(dry as f64 * rng.random_range(0.3..=0.72)).max(1.0) as i64;
        let crx = libm::round(cry as f64 * rng.random_range(1.0..=1.2)).min(drx as f64 - 3.0).max(1.0) as i64;
        let mut spec = Self {
            seed: rng.random(),
            height,
            width,
            disc_center: (cy, cx),
            disc_radii: (dry, drx),
            cup_radii: (cry, crx),
            cup_offset: (0, 0),
            noise: 0.03,
            laterality: if rng.random() { Laterality::Right } else { Laterality::Left },
        };
        let (max_v, max_h) = ((dry - cry - 2).max(0), (drx - crx - 2).max(0));
        for _ in 0..16 {
            spec.cup_offset = (rng.random_range(-max_h..=max_h) / 2, rng.random_range(-max_v..=max_v) / 2);
            if spec.validate().is_ok() {
                return spec;
            }
        }
        spec.cup_offset = (0, 0);
        spec
    }
}

/// Ellipse rasterization: pixel (y, x) is set when
/// `((y - cy) / ry)^2 + ((x - cx) / rx)^2 <= 1`.
pub fn ellipse_mask(height: usize, width: usize, center: (i64, i64), radii: (i64, i64)) -> Mask {
    let (cy, cx) = center;
    let (ry, rx) = (radii.0 as f64, radii.1 as f64);
    Mask::from_fn(height, width, |y, x| {
        let dy = (y as i64 - cy) as f64 / ry;
        let dx = (x as i64 - cx) as f64 / rx;
        dy * dy + dx * dx <= 1.0
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SampleTruth {
    pub disc_center: (i64, i64),
    pub disc_radii: (i64, i64),
    pub cup_center: (i64, i64),
    pub cup_radii: (i64, i64),
    pub cdr: f64,
    pub laterality: Laterality,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// (1, H, W, 3) in [0, 1].
    pub image: Tensor,
    pub disc: Mask,
    pub cup: Mask,
    pub truth: SampleTruth,
}

const BACKGROUND: [f32; 3] = [0.47, 0.19, 0.08];
const DISC: [f32; 3] = [0.90, 0.62, 0.36];
const CUP: [f32; 3] = [0.98, 0.86, 0.63];

fn to_byte_grid(v: f32) -> f32 {
    libm::roundf(v.clamp(0.0, 1.0) * 255.0) / 255.0
}

/// Renders a bright disc ellipse with a brighter cup inside on a darker
/// vignetted, noisy background.
pub fn gen_sample(s: &SynthSpec) -> Result<Sample> {
    s.validate()?;
    let (h, w) = (s.height, s.width);
    let disc = ellipse_mask(h, w, s.disc_center, s.disc_radii);
    let cup = ellipse_mask(h, w, s.cup_center(), s.cup_radii);
    if !cup.is_subset_of(&disc) {
        return Err(Error::InvalidArgument("cup mask is not inside the disc mask".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let (my, mx) = ((h as f32 - 1.0) / 2.0, (w as f32 - 1.0) / 2.0);
    let rmax2 = my * my + mx * mx;
    let mut data = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            let (dy, dx) = (y as f32 - my, x as f32 - mx);
            let vignette = 1.0 - 0.35 * (dy * dy + dx * dx) / rmax2;
            let base = if cup.get(y, x) {
                CUP
            } else if disc.get(y, x) {
                DISC
            } else {
                BACKGROUND
            };
            for c in base {
                let n: f32 = if s.noise > 0.0 { rng.sample::<f32, _>(StandardNormal) * s.noise } else { 0.0 };
                data.push(to_byte_grid(c * vignette + n));
            }
        }
    }
    Ok(Sample {
        image: Tensor::new([1, h, w, 3], data)?,
        disc,
        cup,
        truth: SampleTruth {
            disc_center: s.disc_center,
            disc_radii: s.disc_radii,
            cup_center: s.cup_center(),
            cup_radii: s.cup_radii,
            cdr: s.truth_cdr(),
            laterality: s.laterality,
        },
    })
}

/// One geometric/photometric augmentation. Applied in the order flip,
/// rotation about the image center, shift; brightness scales the image only.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Transform {
    pub flip_horizontal: bool,
    pub rotation_deg: f64,
    /// (down, right) in pixels.
    pub shift: (i64, i64),
    pub brightness: f32,
}

impl Transform {
    pub const IDENTITY: Transform = Transform {
        flip_horizontal: false,
        rotation_deg: 0.0,
        shift: (0, 0),
        brightness: 1.0,
    };
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub max_rotation_deg: f64,
    pub max_shift: i64,
    pub max_brightness_delta: f32,
    pub allow_flip: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            max_rotation_deg: 15.0,
            max_shift: 10,
            max_brightness_delta: 0.1,
            allow_flip: true,
        }
    }
}

impl AugmentConfig {
    /// Draws only the identity transform.
    pub const IDENTITY: AugmentConfig = AugmentConfig {
        max_rotation_deg: 0.0,
        max_shift: 0,
        max_brightness_delta: 0.0,
        allow_flip: false,
    };

    pub fn draw(&self, rng: &mut impl Rng) -> Transform {
        let sym = |rng: &mut dyn rand::RngCore, m: f64| if m > 0.0 { rng.random_range(-m..=m) } else { 0.0 };
        Transform {
            flip_horizontal: self.allow_flip && rng.random(),
            rotation_deg: sym(rng, self.max_rotation_deg),
            shift: (
                rng.random_range(-self.max_shift..=self.max_shift),
                rng.random_range(-self.max_shift..=self.max_shift),
            ),
            brightness: 1.0 + sym(rng, self.max_brightness_delta as f64) as f32,
        }
    }
}

/// Applies `t` to a (1, H, W, C) image and its masks with nearest-neighbour
/// inverse mapping. Pixels mapped from outside the frame become 0.
pub fn apply_transform(image: &Tensor, masks: &[Mask], t: &Transform) -> Result<(Tensor, Vec<Mask>)> {
    let [b, h, w, c] = image.dims();
    if b != 1 {
        return Err(Error::InvalidArgument("augmentation expects a single image".into()));
    }
    if masks.iter().any(|m| m.height() != h || m.width() != w) {
        return Err(Error::Shape(format!("masks must be {}x{}", h, w)));
    }
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let rad = t.rotation_deg.to_radians();
    let (sin, cos) = (libm::sin(rad), libm::cos(rad));
    // source pixel of each output pixel
    let mut source = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let py = y as f64 - t.shift.0 as f64 - cy;
            let px = x as f64 - t.shift.1 as f64 - cx;
            let sy = cos * py - sin * px + cy;
            let mut sx = sin * py + cos * px + cx;
            if t.flip_horizontal {
                sx = w as f64 - 1.0 - sx;
            }
            let (iy, ix) = (libm::floor(sy + 0.5), libm::floor(sx + 0.5));
            let inside = iy >= 0.0 && ix >= 0.0 && iy < h as f64 && ix < w as f64;
            source.push(inside.then_some((iy as usize, ix as usize)));
        }
    }
    let mut data = Vec::with_capacity(h * w * c);
    for src in &source {
        for ch in 0..c {
            let v = src.map_or(0.0, |(y, x)| image.get(0, y, x, ch));
            data.push(if t.brightness == 1.0 { v } else { to_byte_grid(v * t.brightness) });
        }
    }
    let out_masks = masks
        .iter()
        .map(|m| {
            let d = source.iter().map(|s| s.is_some_and(|(y, x)| m.get(y, x)) as u8).collect();
            Mask::new(h, w, d)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((Tensor::new([1, h, w, c], data)?, out_masks))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Augmented {
    pub image: Tensor,
    pub masks: Vec<Mask>,
    pub transform: Transform,
}

/// `count` random variants of one sample, deterministic per seed.
pub fn augment(image: &Tensor, masks: &[Mask], count: usize, seed: u64, config: &AugmentConfig) -> Result<Vec<Augmented>> {
    if count == 0 {
        return Err(Error::InvalidArgument("augmentation count must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let transform = config.draw(&mut rng);
            let (image, masks) = apply_transform(image, masks, &transform)?;
            Ok(Augmented {
                image,
                masks,
                transform,
            })
        })
        .collect()
}

/// Per-source variant counts reaching exactly `target` items: every source
/// gets `target / sources`, the first `target % sources` one more.
pub fn plan_augmentation(sources: usize, target: usize) -> Result<Vec<usize>> {
    if sources == 0 || target < sources {
        return Err(Error::InvalidArgument(format!(
            "cannot spread {} items over {} sources",
            target, sources
        )));
    }
    let (base, extra) = (target / sources, target % sources);
    Ok((0..sources).map(|i| base + (i < extra) as usize).collect())
}

/// Deterministic shuffled split of `0..n`; the train side gets
/// `round(n * train_fraction)` items. Both halves are returned sorted.
pub fn split(n: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("train fraction {} outside (0, 1)", train_fraction)));
    }
    let n_train = crate::round_half_away(n as f64 * train_fraction) as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut test = idx.split_off(n_train);
    idx.sort_unstable();
    test.sort_unstable();
    Ok((idx, test))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ManifestItem {
    pub id: String,
    pub source: usize,
    pub variant: usize,
    pub image: String,
    pub disc_mask: String,
    pub cup_mask: String,
    pub split: Split,
    /// Geometry of the source sample, before augmentation.
    pub truth: SampleTruth,
    pub transform: Transform,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DatasetManifest {
    pub name: String,
    pub seed: u64,
    pub source_count: usize,
    pub augmented_count: usize,
    pub train_count: usize,
    pub test_count: usize,
    pub train_fraction: f64,
    pub variants_per_source: Vec<usize>,
    pub items: Vec<ManifestItem>,
}

impl DatasetManifest {
    pub fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("manifest `{}`: {}", self.name, m)));
        if self.items.len() != self.augmented_count {
            return bad("item count differs from augmented_count");
        }
        if self.train_count + self.test_count != self.augmented_count {
            return bad("train + test differs from the total");
        }
        if self.variants_per_source.len() != self.source_count
            || self.variants_per_source.iter().sum::<usize>() != self.augmented_count
        {
            return bad("per-source variant counts do not add up");
        }
        let train = self.items.iter().filter(|i| i.split == Split::Train).count();
        if train != self.train_count {
            return bad("split labels disagree with train_count");
        }
        let expect = self.augmented_count as f64 * self.train_fraction;
        if (train as f64 - expect).abs() > 1.0 {
            return bad("split fraction not honored");
        }
        Ok(())
    }
}
