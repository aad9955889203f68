//! Segmentation quality and optic nerve head indicators.

use crate::error::shape_err;
use crate::{Error, Mask, Result};

fn same_dims(a: &Mask, b: &Mask) -> Result<()> {
    if a.height() != b.height() || a.width() != b.width() {
        return Err(shape_err!(
            "mask dims differ: {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        ));
    }
    Ok(())
}

/// Sørensen–Dice coefficient `2|a ∩ b| / (|a| + |b|)`; two empty masks score 1.
pub fn dice(a: &Mask, b: &Mask) -> Result<f64> {
    same_dims(a, b)?;
    let (mut inter, mut total) = (0u64, 0u64);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        inter += (x & y) as u64;
        total += (x + y) as u64;
    }
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

/// Largest per-column vertical extent (`last_row - first_row + 1`) of the set pixels.
pub fn vertical_diameter(m: &Mask) -> usize {
    (0..m.width())
        .filter_map(|x| {
            let first = (0..m.height()).find(|&y| m.get(y, x))?;
            let last = (0..m.height()).rev().find(|&y| m.get(y, x))?;
            Some(last - first + 1)
        })
        .max()
        .unwrap_or(0)
}

/// Vertical cup-to-disc ratio.
pub fn cdr(cup: &Mask, disc: &Mask) -> Result<f64> {
    same_dims(cup, disc)?;
    let d = vertical_diameter(disc);
    if d == 0 {
        return Err(Error::EmptyDisc);
    }
    Ok(vertical_diameter(cup) as f64 / d as f64)
}

/// Population CDR bands as (mean, standard deviation).
pub const HEALTHY_CDR: (f64, f64) = (0.39, 0.15);
pub const GLAUCOMA_CDR: (f64, f64) = (0.65, 0.13);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum CdrClass {
    HealthyRange,
    GlaucomaRange,
    Indeterminate,
}

fn within_one_sigma(c: f64, (mean, sd): (f64, f64)) -> bool {
    (mean - sd..=mean + sd).contains(&c)
}

/// Healthy or glaucoma range when `c` lies within one standard deviation of
/// exactly one band; otherwise indeterminate.
pub fn classify_cdr(c: f64) -> CdrClass {
    match (within_one_sigma(c, HEALTHY_CDR), within_one_sigma(c, GLAUCOMA_CDR)) {
        (true, false) => CdrClass::HealthyRange,
        (false, true) => CdrClass::GlaucomaRange,
        _ => CdrClass::Indeterminate,
    }
}

/// Which eye an image shows; decides which horizontal side is nasal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Laterality {
    /// Left eye: nasal side is the image's left (-x).
    Left,
    /// Right eye: nasal side is the image's right (+x).
    Right,
}

impl Laterality {
    pub fn mirrored(self) -> Self {
        match self {
            Laterality::Left => Laterality::Right,
            Laterality::Right => Laterality::Left,
        }
    }
}

impl core::str::FromStr for Laterality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "left" | "os" | "OS" => Ok(Laterality::Left),
            "right" | "od" | "OD" => Ok(Laterality::Right),
            _ => Err(Error::InvalidArgument(alloc::format!("laterality must be left or right, got `{}`", s))),
        }
    }
}

/// Mean neuroretinal rim thickness, in pixels, over four 90° sectors.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RimProfile {
    pub inferior: f64,
    pub superior: f64,
    pub nasal: f64,
    pub temporal: f64,
    /// Cup pixels lying outside the disc. Rim values are clamped at zero
    /// along rays where the cup reaches past the disc.
    pub cup_outside_disc: usize,
}

/// Number of rays, one per degree, centered on half-degree angles so that no
/// ray lies on a sector boundary.
const RAYS: usize = 360;
/// Radial sampling step; dyadic so distances sum exactly.
const STEP: f64 = 0.125;

/// Farthest sampled distance along the ray at which the mask is set.
fn ray_extent(m: &Mask, cy: f64, cx: f64, dy: f64, dx: f64) -> f64 {
    let limit = (m.height() + m.width()) as f64;
    let mut best = 0.0;
    let mut j = 0u32;
    loop {
        let t = j as f64 * STEP;
        if t > limit {
            break;
        }
        let y = libm::floor(cy + t * dy + 0.5) as isize;
        let x = libm::floor(cx + t * dx + 0.5) as isize;
        if m.get_signed(y, x) {
            best = t;
        }
        j += 1;
    }
    best
}

/// Rim thickness profile: rays from the disc centroid every degree; along
/// each ray the rim is the disc extent minus the cup extent (0 if the ray
/// misses the cup). Sectors are 90° wide, inferior pointing down the image.
pub fn rim_profile(cup: &Mask, disc: &Mask, laterality: Laterality) -> Result<RimProfile> {
    same_dims(cup, disc)?;
    let (cy, cx) = disc.centroid().ok_or(Error::EmptyDisc)?;
    let mut sums = [0.0f64; 4]; // inferior, superior, right, left
    let mut counts = [0u32; 4];
    for k in 0..RAYS {
        let deg = k as f64 + 0.5;
        let rad = deg.to_radians();
        let (dy, dx) = (libm::sin(rad), libm::cos(rad));
        let rim = (ray_extent(disc, cy, cx, dy, dx) - ray_extent(cup, cy, cx, dy, dx)).max(0.0);
        let sector = if (45.0..135.0).contains(&deg) {
            0
        } else if (225.0..315.0).contains(&deg) {
            1
        } else if (135.0..225.0).contains(&deg) {
            3
        } else {
            2
        };
        sums[sector] += rim;
        counts[sector] += 1;
    }
    let mean = |i: usize| sums[i] / counts[i] as f64;
    let (right, left) = (mean(2), mean(3));
    let (nasal, temporal) = match laterality {
        Laterality::Right => (right, left),
        Laterality::Left => (left, right),
    };
    let cup_outside_disc = cup
        .data()
        .iter()
        .zip(disc.data())
        .filter(|&(&c, &d)| c == 1 && d == 0)
        .count();
    Ok(RimProfile {
        inferior: mean(0),
        superior: mean(1),
        nasal,
        temporal,
        cup_outside_disc,
    })
}

/// Healthy rim ordering `I > S > N > T`, strict.
pub fn istn_check(p: &RimProfile) -> bool {
    p.inferior > p.superior && p.superior > p.nasal && p.nasal > p.temporal
}

/// Otsu's threshold over 256 equal-width bins: the bin edge maximizing the
/// between-class variance. `None` for empty or constant input.
pub fn otsu_threshold(values: &[f32]) -> Option<f32> {
    let (lo, hi) = values
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !(hi > lo) {
        return None;
    }
    let mut hist = [0u64; 256];
    for &v in values {
        let bin = ((v - lo) / (hi - lo) * 256.0) as usize;
        hist[bin.min(255)] += 1;
    }
    let total = values.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &h)| i as f64 * h as f64).sum();
    let (mut w_low, mut sum_low) = (0.0, 0.0);
    let (mut best, mut best_bin) = (-1.0, 0);
    for (i, &h) in hist.iter().enumerate().take(255) {
        w_low += h as f64;
        sum_low += i as f64 * h as f64;
        let w_high = total - w_low;
        if w_low == 0.0 || w_high == 0.0 {
            continue;
        }
        let d = sum_low / w_low - (sum_all - sum_low) / w_high;
        let between = w_low * w_high * d * d;
        if between > best {
            best = between;
            best_bin = i;
        }
    }
    Some(lo + (best_bin + 1) as f32 / 256.0 * (hi - lo))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn circle(n: usize, cy: isize, cx: isize, r: isize) -> Mask {
        Mask::from_fn(n, n, |y, x| {
            let (dy, dx) = (y as isize - cy, x as isize - cx);
            dy * dy + dx * dx <= r * r
        })
    }

    #[test]
    fn dice_examples() {
        let a = circle(16, 8, 8, 4);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        let b = circle(16, 2, 2, 1);
        let c = circle(16, 12, 12, 2);
        assert_eq!(dice(&b, &c).unwrap(), 0.0);
        let p = Mask::new(1, 3, vec![1, 1, 0]).unwrap();
        let q = Mask::new(1, 3, vec![0, 1, 1]).unwrap();
        assert_eq!(dice(&p, &q).unwrap(), 0.5);
        assert_eq!(dice(&Mask::empty(3, 3), &Mask::empty(3, 3)).unwrap(), 1.0);
        assert!(dice(&Mask::empty(3, 3), &Mask::empty(3, 4)).is_err());
    }

    #[test]
    fn vertical_diameter_examples() {
        assert_eq!(vertical_diameter(&Mask::from_fn(5, 5, |y, x| y == 2 && x == 3)), 1);
        assert_eq!(vertical_diameter(&Mask::empty(5, 5)), 0);
        for r in [3, 10, 20, 31] {
            let d = vertical_diameter(&circle(80, 40, 40, r));
            assert!((d as isize - (2 * r + 1)).abs() <= 1, "r {r} d {d}");
        }
    }

    #[test]
    fn cdr_examples() {
        let disc = circle(100, 50, 50, 40);
        assert_eq!(cdr(&disc, &disc).unwrap(), 1.0);
        let c = cdr(&circle(100, 50, 50, 20), &disc).unwrap();
        assert!((c - 0.5).abs() <= 0.03, "{c}");
        assert_eq!(cdr(&Mask::empty(100, 100), &disc).unwrap(), 0.0);
        assert_eq!(cdr(&disc, &Mask::empty(100, 100)), Err(Error::EmptyDisc));
    }

    #[test]
    fn cdr_classes() {
        assert_eq!(classify_cdr(0.30), CdrClass::HealthyRange);
        assert_eq!(classify_cdr(0.75), CdrClass::GlaucomaRange);
        // 0.53 is inside [0.24, 0.54] and [0.52, 0.78]
        assert_eq!(classify_cdr(0.53), CdrClass::Indeterminate);
        assert_eq!(classify_cdr(0.95), CdrClass::Indeterminate);
        assert_eq!(classify_cdr(0.1), CdrClass::Indeterminate);
    }

    #[test]
    fn concentric_rim_is_uniform() {
        let disc = circle(101, 50, 50, 30);
        let cup = circle(101, 50, 50, 12);
        let p = rim_profile(&cup, &disc, Laterality::Right).unwrap();
        assert_eq!(p.inferior, p.superior);
        assert_eq!(p.superior, p.nasal);
        assert_eq!(p.nasal, p.temporal);
        assert!((p.inferior - 18.0).abs() < 1.0);
        assert!(!istn_check(&p));
        assert_eq!(p.cup_outside_disc, 0);
    }

    #[test]
    fn upward_cup_thickens_inferior_rim() {
        let disc = circle(101, 50, 50, 30);
        let cup = circle(101, 44, 50, 12);
        let p = rim_profile(&cup, &disc, Laterality::Left).unwrap();
        assert!(p.inferior > p.superior, "{p:?}");
    }

    #[test]
    fn cup_equal_to_disc_has_no_rim() {
        let disc = circle(64, 30, 33, 15);
        let p = rim_profile(&disc, &disc, Laterality::Right).unwrap();
        assert_eq!((p.inferior, p.superior, p.nasal, p.temporal), (0.0, 0.0, 0.0, 0.0));
        assert_eq!(rim_profile(&disc, &Mask::empty(64, 64), Laterality::Right), Err(Error::EmptyDisc));
    }

    #[test]
    fn istn_ordering_on_a_healthy_shape() {
        // vertically oval disc, cup shifted up and toward the temporal (left
        // for a right eye) side
        let disc = Mask::from_fn(101, 101, |y, x| {
            let (dy, dx) = (y as f64 - 50.0, x as f64 - 50.0);
            (dy / 38.0).powi(2) + (dx / 28.0).powi(2) <= 1.0
        });
        let cup = Mask::from_fn(101, 101, |y, x| {
            let (dy, dx) = (y as f64 - 46.0, x as f64 - 46.0);
            (dy / 12.0).powi(2) + (dx / 16.0).powi(2) <= 1.0
        });
        let p = rim_profile(&cup, &disc, Laterality::Right).unwrap();
        assert!(istn_check(&p), "{p:?}");
        assert!(!istn_check(&rim_profile(&cup, &disc, Laterality::Left).unwrap()));
    }

    #[test]
    fn otsu_splits_two_clusters() {
        let mut v = alloc::vec![0.1f32; 300];
        v.extend([0.9f32; 100]);
        v.extend([0.12, 0.88, 0.11]);
        let t = otsu_threshold(&v).unwrap();
        assert!(t > 0.12 && t < 0.88, "{t}");
        assert_eq!(otsu_threshold(&[1.0, 1.0]), None);
        assert_eq!(otsu_threshold(&[]), None);
    }

    fn random_mask() -> impl Strategy<Value = Mask> {
        (1usize..12, 1usize..12).prop_flat_map(|(h, w)| {
            proptest::collection::vec(0u8..=1, h * w).prop_map(move |d| Mask::new(h, w, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn dice_properties(a in random_mask(), seed in any::<u64>()) {
            let b = Mask::from_fn(a.height(), a.width(), |y, x| {
                (seed.rotate_left((y * 7 + x) as u32 % 64) & 1) == 1
            });
            let ab = dice(&a, &b).unwrap();
            prop_assert_eq!(ab, dice(&b, &a).unwrap());
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(ab == 1.0, a == b);
            prop_assert_eq!(dice(&a, &a).unwrap(), 1.0);
        }

        #[test]
        fn cdr_is_translation_invariant(r_disc in 8isize..20, r_cup in 1isize..8, dy in -10isize..10, dx in -10isize..10) {
            let disc = circle(64, 32, 32, r_disc);
            let cup = circle(64, 30, 33, r_cup);
            let base = cdr(&cup, &disc).unwrap();
            let moved = cdr(&cup.translate(dy, dx), &disc.translate(dy, dx)).unwrap();
            prop_assert_eq!(base, moved);
        }

        #[test]
        fn mirroring_swaps_nasal_and_temporal(r_disc in 12isize..25, r_cup in 2isize..8, oy in -4isize..4, ox in -4isize..4) {
            let disc = circle(64, 31, 30, r_disc);
            let cup = circle(64, 31 + oy, 30 + ox, r_cup);
            let p = rim_profile(&cup, &disc, Laterality::Right).unwrap();
            let m = rim_profile(&cup.flip_horizontal(), &disc.flip_horizontal(), Laterality::Right).unwrap();
            let close = |a: f64, b: f64| (a - b).abs() < 1e-9;
            prop_assert!(close(p.nasal, m.temporal) && close(p.temporal, m.nasal), "{:?} {:?}", p, m);
            prop_assert!(close(p.inferior, m.inferior) && close(p.superior, m.superior), "{:?} {:?}", p, m);
        }
    }
}
