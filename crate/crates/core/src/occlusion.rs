//! Binary facial masks: occluding masks hide regions (membership and
//! identity attacks), preserving masks keep a few features and hide the
//! rest (extraction attack).

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::faces::{BoundingBox, LandmarkMap, Region};
use crate::image::{Image, Shape};

/// `1 = visible`. Broadcast across channels when applied.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
    visible_count: usize,
    label: String,
    preserved: Vec<Region>,
}

impl PixelMask {
    pub fn from_bits(height: usize, width: usize, bits: Vec<bool>, label: impl Into<String>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::ShapeMismatch {
                expected: format!("{} mask bits", height * width),
                found: format!("{} bits", bits.len()),
            });
        }
        let visible_count = bits.iter().filter(|&&b| b).count();
        Ok(Self {
            height,
            width,
            bits,
            visible_count,
            label: label.into(),
            preserved: Vec::new(),
        })
    }

    /// The all-visible mask.
    pub fn full(height: usize, width: usize) -> Self {
        Self::from_bits(height, width, vec![true; height * width], "identity").expect("sized")
    }

    /// Hides every pixel covered by `boxes`.
    pub fn occluding(height: usize, width: usize, boxes: &[BoundingBox], label: impl Into<String>) -> Result<Self> {
        let mut bits = vec![true; height * width];
        for b in boxes {
            check_box(b, height, width)?;
            b.pixels().for_each(|(y, x)| bits[y * width + x] = false);
        }
        Self::from_bits(height, width, bits, label)
    }

    /// Shows only pixels covered by `boxes`.
    pub fn preserving(height: usize, width: usize, boxes: &[BoundingBox], label: impl Into<String>) -> Result<Self> {
        let mut bits = vec![false; height * width];
        for b in boxes {
            check_box(b, height, width)?;
            b.pixels().for_each(|(y, x)| bits[y * width + x] = true);
        }
        Self::from_bits(height, width, bits, label)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn is_visible(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    /// `N_i`, the number of visible pixels.
    pub fn visible_count(&self) -> usize {
        self.visible_count
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Feature regions kept by a preserving mask; empty otherwise.
    pub fn preserved(&self) -> &[Region] {
        &self.preserved
    }

    pub fn check_image(&self, shape: Shape) -> Result<()> {
        if shape.height != self.height || shape.width != self.width {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{} image for mask `{}`", self.height, self.width, self.label),
                found: shape.to_string(),
            });
        }
        Ok(())
    }

    /// Per-element mask weights expanded to `H·W·C`.
    pub fn expanded(&self, channels: usize) -> Vec<f64> {
        self.bits
            .iter()
            .flat_map(|&b| std::iter::repeat_n(if b { 1.0 } else { 0.0 }, channels))
            .collect()
    }

    pub fn to_image(&self) -> Image {
        let pixels = self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Image::new(Shape::new(self.height, self.width, 1), pixels).expect("sized")
    }

    /// P5 export, visible = 255.
    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        self.to_image().save_pnm(path)
    }
}

fn check_box(b: &BoundingBox, height: usize, width: usize) -> Result<()> {
    if !b.within(height, width) {
        return Err(Error::OutOfFrame(format!("box {b:?} exceeds {height}x{width} frame")));
    }
    Ok(())
}

/// `x ⊙ M`: occluded pixels become exactly 0 in every channel.
pub fn apply_mask(x: &Image, mask: &PixelMask) -> Result<Image> {
    mask.check_image(x.shape())?;
    let c = x.shape().channels;
    let pixels = x
        .pixels()
        .iter()
        .enumerate()
        .map(|(i, &v)| if mask.bits[i / c] { v } else { 0.0 })
        .collect();
    Image::new(x.shape(), pixels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuiteKind {
    Occluding,
    Preserving,
}

impl std::fmt::Display for SuiteKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SuiteKind::Occluding => "occluding",
            SuiteKind::Preserving => "preserving",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskSuite {
    pub kind: SuiteKind,
    pub masks: Vec<PixelMask>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskManifestEntry {
    pub label: String,
    pub subset: Vec<Region>,
    pub visible_count: usize,
}

impl MaskSuite {
    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn expect_kind(&self, kind: SuiteKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::SuiteKind {
                expected: kind.to_string(),
                found: self.kind.to_string(),
            });
        }
        if self.masks.is_empty() {
            return Err(Error::InsufficientData("mask suite is empty".into()));
        }
        Ok(())
    }

    pub fn manifest(&self) -> Vec<MaskManifestEntry> {
        self.masks
            .iter()
            .map(|m| MaskManifestEntry {
                label: m.label.clone(),
                subset: m.preserved.clone(),
                visible_count: m.visible_count,
            })
            .collect()
    }

    /// Writes `mask_NN.pgm` files and `masks.json` into `dir`.
    pub fn export(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (i, m) in self.masks.iter().enumerate() {
            m.save_pgm(&dir.join(format!("mask_{i:02}.pgm")))?;
        }
        let path = dir.join("masks.json");
        let json = serde_json::to_string_pretty(&self.manifest()).expect("serializable");
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }
}

/// Six single-region occlusions, two grouped occlusions, then
/// `n_random_patches` random square patches.
pub fn build_occluding_suite(
    landmarks: &LandmarkMap,
    shape: Shape,
    n_random_patches: usize,
    patch_size: usize,
    seed: u64,
) -> Result<MaskSuite> {
    let (h, w) = (shape.height, shape.width);
    landmarks.validate_frame(h, w)?;
    if n_random_patches > 0
        && (patch_size == 0 || patch_size > h || patch_size > w || (patch_size == h && patch_size == w))
    {
        return Err(Error::InvalidRange(format!(
            "patch size {patch_size} does not fit strictly inside a {h}x{w} frame"
        )));
    }
    use Region::*;
    let groups: [(&str, &[Region]); 8] = [
        ("eyes", &[LeftEye, RightEye]),
        ("nose", &[Nose]),
        ("mouth", &[Mouth]),
        ("forehead", &[Forehead]),
        ("cheeks", &[LeftCheek, RightCheek]),
        ("chin", &[Chin]),
        ("eyes+nose", &[LeftEye, RightEye, Nose]),
        ("nose+mouth", &[Nose, Mouth]),
    ];
    let mut masks = Vec::with_capacity(groups.len() + n_random_patches);
    for (name, regions) in groups {
        let boxes: Vec<BoundingBox> = regions.iter().map(|&r| landmarks.get(r)).collect();
        masks.push(PixelMask::occluding(h, w, &boxes, format!("occlude:{name}"))?);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..n_random_patches {
        let x0 = rng.random_range(0..=w - patch_size);
        let y0 = rng.random_range(0..=h - patch_size);
        let b = BoundingBox::new(x0, y0, x0 + patch_size, y0 + patch_size);
        masks.push(PixelMask::occluding(h, w, &[b], format!("occlude:patch@{x0},{y0}"))?);
    }
    Ok(MaskSuite {
        kind: SuiteKind::Occluding,
        masks,
        seed,
    })
}

/// Masks that keep a random non-empty subset of the eyes, nose and mouth.
/// Consecutive masks never repeat a subset.
pub fn build_preserving_suite(
    landmarks: &LandmarkMap,
    shape: Shape,
    n_masks: usize,
    seed: u64,
) -> Result<MaskSuite> {
    if n_masks == 0 {
        return Err(Error::InvalidRange("preserving suite needs at least one mask".into()));
    }
    landmarks.validate_frame(shape.height, shape.width)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut masks = Vec::with_capacity(n_masks);
    let mut last = 0u8;
    for _ in 0..n_masks {
        let subset = loop {
            let s = rng.random_range(1u8..16);
            if s != last {
                break s;
            }
        };
        last = subset;
        masks.push(preserving_mask(landmarks, shape, subset_regions(subset))?);
    }
    Ok(MaskSuite {
        kind: SuiteKind::Preserving,
        masks,
        seed,
    })
}

/// Preserving mask for an explicit feature subset.
pub fn preserving_mask(landmarks: &LandmarkMap, shape: Shape, regions: Vec<Region>) -> Result<PixelMask> {
    let boxes: Vec<BoundingBox> = regions.iter().map(|&r| landmarks.get(r)).collect();
    let names: Vec<&str> = regions.iter().map(|r| r.name()).collect();
    let mut mask = PixelMask::preserving(
        shape.height,
        shape.width,
        &boxes,
        format!("preserve:{}", names.join("+")),
    )?;
    mask.preserved = regions;
    Ok(mask)
}

fn subset_regions(bits: u8) -> Vec<Region> {
    Region::FEATURES
        .into_iter()
        .enumerate()
        .filter(|(i, _)| bits & (1 << i) != 0)
        .map(|(_, r)| r)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn landmarks() -> LandmarkMap {
        LandmarkMap::new([
            BoundingBox::new(8, 10, 12, 13),  // left eye
            BoundingBox::new(19, 10, 23, 13), // right eye
            BoundingBox::new(14, 13, 18, 18), // nose
            BoundingBox::new(12, 20, 20, 22), // mouth
            BoundingBox::new(9, 4, 23, 9),    // forehead
            BoundingBox::new(7, 14, 13, 19),  // left cheek
            BoundingBox::new(19, 14, 25, 19), // right cheek
            BoundingBox::new(12, 23, 20, 27), // chin
        ])
        .unwrap()
    }

    const SHAPE: Shape = Shape::new(32, 32, 1);

    #[test]
    fn occluding_suite_size_and_order() {
        let suite = build_occluding_suite(&landmarks(), SHAPE, 3, 8, 1).unwrap();
        assert_eq!(suite.len(), 11);
        let labels: Vec<&str> = suite.masks.iter().map(|m| m.label()).take(8).collect();
        assert_eq!(
            labels,
            [
                "occlude:eyes",
                "occlude:nose",
                "occlude:mouth",
                "occlude:forehead",
                "occlude:cheeks",
                "occlude:chin",
                "occlude:eyes+nose",
                "occlude:nose+mouth"
            ]
        );
        assert!(suite.masks[8..].iter().all(|m| m.visible_count() == 1024 - 64));
    }

    #[test]
    fn eye_mask_zeros_exactly_the_eye_boxes() {
        let lm = landmarks();
        let suite = build_occluding_suite(&lm, SHAPE, 0, 8, 1).unwrap();
        let eyes = &suite.masks[0];
        let (l, r) = (lm.get(Region::LeftEye), lm.get(Region::RightEye));
        for y in 0..32 {
            for x in 0..32 {
                let hidden = l.contains(y, x) || r.contains(y, x);
                assert_eq!(eyes.is_visible(y, x), !hidden);
            }
        }
        assert_eq!(eyes.visible_count(), 1024 - l.area() - r.area());
        assert_eq!(suite.masks[6].visible_count(), 1024 - l.area() - r.area() - lm.get(Region::Nose).area());
    }

    #[test]
    fn oversized_patch_is_rejected() {
        assert!(build_occluding_suite(&landmarks(), SHAPE, 1, 33, 0).is_err());
        assert!(build_occluding_suite(&landmarks(), SHAPE, 1, 32, 0).is_err());
    }

    #[test]
    fn preserving_counts() {
        let lm = landmarks();
        let all = preserving_mask(&lm, SHAPE, Region::FEATURES.to_vec()).unwrap();
        let area: usize = Region::FEATURES.iter().map(|&r| lm.get(r).area()).sum();
        assert_eq!(all.visible_count(), area);
        let nose = preserving_mask(&lm, SHAPE, vec![Region::Nose]).unwrap();
        let b = lm.get(Region::Nose);
        for y in 0..32 {
            for x in 0..32 {
                assert_eq!(nose.is_visible(y, x), b.contains(y, x));
            }
        }
    }

    #[test]
    fn preserving_suite_is_reproducible_and_alternates() {
        let a = build_preserving_suite(&landmarks(), SHAPE, 10, 42).unwrap();
        let b = build_preserving_suite(&landmarks(), SHAPE, 10, 42).unwrap();
        assert_eq!(a, b);
        assert!(a.masks.windows(2).all(|w| w[0].preserved() != w[1].preserved()));
        assert!(a.masks.iter().all(|m| !m.preserved().is_empty()));
        assert!(build_preserving_suite(&landmarks(), SHAPE, 0, 42).is_err());
    }

    #[test]
    fn occluding_and_preserving_are_complements() {
        let lm = landmarks();
        for region in Region::FEATURES {
            let b = lm.get(region);
            let occ = PixelMask::occluding(32, 32, &[b], "o").unwrap();
            let pre = preserving_mask(&lm, SHAPE, vec![region]).unwrap();
            for (y, x) in b.pixels() {
                assert_ne!(occ.is_visible(y, x), pre.is_visible(y, x));
            }
        }
    }

    #[test]
    fn apply_mask_zeroes_hidden_pixels_in_every_channel() {
        let shape = Shape::new(2, 2, 3);
        let x = Image::new(shape, (1..=12).map(|v| v as f64 / 12.0).collect()).unwrap();
        let m = PixelMask::from_bits(2, 2, vec![true, false, true, true], "m").unwrap();
        let out = apply_mask(&x, &m).unwrap();
        assert_eq!(&out.pixels()[3..6], &[0.0, 0.0, 0.0]);
        assert_eq!(&out.pixels()[..3], &x.pixels()[..3]);
        assert_eq!(apply_mask(&x, &PixelMask::full(2, 2)).unwrap(), x);
        assert!(apply_mask(&x, &PixelMask::full(3, 2)).is_err());
    }

    #[test]
    fn manifest_lists_subsets() {
        let suite = build_preserving_suite(&landmarks(), SHAPE, 3, 9).unwrap();
        let manifest = suite.manifest();
        assert_eq!(manifest.len(), 3);
        assert_eq!(manifest[0].subset, suite.masks[0].preserved());
        let dir = tempfile::tempdir().unwrap();
        suite.export(dir.path()).unwrap();
        assert!(dir.path().join("mask_02.pgm").exists());
        assert!(dir.path().join("masks.json").exists());
    }
}
