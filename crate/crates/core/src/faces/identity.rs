//! Procedural face-like renders with exact landmark geometry.
//!
//! Geometry is expressed as fractions of the frame (x as a fraction of the
//! width, y of the height) so the same identity renders at any resolution.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::landmarks::{BoundingBox, LandmarkMap};
use crate::error::{Error, Result};
use crate::image::{Image, Shape};

/// Subsamples per pixel axis.
const SUPERSAMPLE: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceParams {
    pub face_cx: f64,
    pub face_cy: f64,
    pub face_rx: f64,
    pub face_ry: f64,
    /// Hair band depth as a fraction of the oval height.
    pub hair_depth: f64,
    /// Eye centers sit at `(cx ± eye_dx, cy − eye_dy)`.
    pub eye_dx: f64,
    pub eye_dy: f64,
    pub eye_r: f64,
    /// Gap between the bottom of the eyes and the nose apex.
    pub nose_gap: f64,
    pub nose_len: f64,
    pub nose_hw: f64,
    /// Mouth center sits at `cy + mouth_dy`.
    pub mouth_dy: f64,
    pub mouth_hw: f64,
    pub mouth_h: f64,
    pub background: f64,
    pub skin: f64,
    pub hair: f64,
    pub eye: f64,
    pub nose: f64,
    pub mouth: f64,
    /// Per-channel gain for colour renders.
    pub tint: [f64; 3],
}

/// Documented sampling ranges, `(min, max)`.
pub mod ranges {
    pub const FACE_CX: (f64, f64) = (0.47, 0.53);
    pub const FACE_CY: (f64, f64) = (0.48, 0.52);
    pub const FACE_RX: (f64, f64) = (0.34, 0.41);
    pub const FACE_RY: (f64, f64) = (0.41, 0.45);
    pub const HAIR_DEPTH: (f64, f64) = (0.08, 0.22);
    pub const EYE_DX: (f64, f64) = (0.15, 0.20);
    pub const EYE_DY: (f64, f64) = (0.09, 0.13);
    pub const EYE_R: (f64, f64) = (0.04, 0.065);
    pub const NOSE_GAP: (f64, f64) = (0.02, 0.05);
    pub const NOSE_LEN: (f64, f64) = (0.09, 0.14);
    pub const NOSE_HW: (f64, f64) = (0.04, 0.07);
    pub const MOUTH_DY: (f64, f64) = (0.22, 0.27);
    pub const MOUTH_HW: (f64, f64) = (0.08, 0.15);
    pub const MOUTH_H: (f64, f64) = (0.035, 0.06);
    pub const BACKGROUND: (f64, f64) = (0.0, 0.25);
    pub const SKIN: (f64, f64) = (0.55, 0.9);
    pub const HAIR: (f64, f64) = (0.05, 0.45);
    pub const EYE: (f64, f64) = (0.0, 0.25);
    /// Nose shade is `skin − NOSE_DROP`.
    pub const NOSE_DROP: (f64, f64) = (0.15, 0.3);
    pub const MOUTH: (f64, f64) = (0.1, 0.4);
    pub const TINT: (f64, f64) = (0.8, 1.0);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceIdentity {
    pub id: usize,
    pub params: FaceParams,
}

fn draw<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

impl FaceIdentity {
    pub fn random<R: Rng>(id: usize, rng: &mut R) -> Self {
        use ranges::*;
        let skin = draw(rng, SKIN);
        let params = FaceParams {
            face_cx: draw(rng, FACE_CX),
            face_cy: draw(rng, FACE_CY),
            face_rx: draw(rng, FACE_RX),
            face_ry: draw(rng, FACE_RY),
            hair_depth: draw(rng, HAIR_DEPTH),
            eye_dx: draw(rng, EYE_DX),
            eye_dy: draw(rng, EYE_DY),
            eye_r: draw(rng, EYE_R),
            nose_gap: draw(rng, NOSE_GAP),
            nose_len: draw(rng, NOSE_LEN),
            nose_hw: draw(rng, NOSE_HW),
            mouth_dy: draw(rng, MOUTH_DY),
            mouth_hw: draw(rng, MOUTH_HW),
            mouth_h: draw(rng, MOUTH_H),
            background: draw(rng, BACKGROUND),
            skin,
            hair: draw(rng, HAIR),
            eye: draw(rng, EYE),
            nose: skin - draw(rng, NOSE_DROP),
            mouth: draw(rng, MOUTH),
            tint: [draw(rng, TINT), draw(rng, TINT), draw(rng, TINT)],
        };
        Self { id, params }
    }

    /// Renders one photo of this identity. `jitter` scales a global shift,
    /// small per-feature shifts, size changes and a brightness offset, all
    /// drawn from `variation_seed`; `jitter = 0` always gives the same image.
    pub fn render(&self, shape: Shape, variation_seed: u64, jitter: f64) -> Result<(Image, LandmarkMap)> {
        if !(jitter >= 0.0 && jitter <= 0.2) {
            return Err(Error::InvalidRange(format!("jitter {jitter} outside [0, 0.2]")));
        }
        if shape.height < 8 || shape.width < 8 || !(shape.channels == 1 || shape.channels == 3) {
            return Err(Error::InvalidRange(format!(
                "face renders need at least 8x8 with 1 or 3 channels, got {shape}"
            )));
        }
        let geo = Geometry::jittered(&self.params, shape, variation_seed, jitter);
        let landmarks = geo.landmarks(shape)?;
        Ok((geo.paint(&self.params, shape), landmarks))
    }
}

/// Face geometry in pixel units after jitter.
struct Geometry {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    hairline: f64,
    eye_y: f64,
    eye_lx: f64,
    eye_rx: f64,
    eye_r: f64,
    nose_top: f64,
    nose_bottom: f64,
    nose_cx: f64,
    nose_hw: f64,
    mouth_cx: f64,
    mouth_cy: f64,
    mouth_hw: f64,
    mouth_hh: f64,
    brightness: f64,
}

impl Geometry {
    fn jittered(p: &FaceParams, shape: Shape, seed: u64, jitter: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut u = |scale: f64| {
            if jitter == 0.0 {
                0.0
            } else {
                scale * jitter * (2.0 * rng.random::<f64>() - 1.0)
            }
        };
        let (w, h) = (shape.width as f64, shape.height as f64);
        let (gdx, gdy) = (u(1.0) * w, u(1.0) * h);
        let size = 1.0 + u(0.5);
        let (eyes_dx, eyes_dy) = (u(0.3) * w, u(0.3) * h);
        let (nose_dx, nose_dy) = (u(0.3) * w, u(0.3) * h);
        let (mouth_dx, mouth_dy) = (u(0.3) * w, u(0.3) * h);
        let eye_scale = 1.0 + u(1.0);
        let brightness = u(0.5);

        let cx = p.face_cx * w + gdx;
        let cy = p.face_cy * h + gdy;
        let ry = p.face_ry * h * size;
        let eye_y = cy - p.eye_dy * h + eyes_dy;
        let eye_r = p.eye_r * w.min(h) * eye_scale;
        let nose_top = eye_y + eye_r + p.nose_gap * h + nose_dy;
        Self {
            cx,
            cy,
            rx: p.face_rx * w * size,
            ry,
            hairline: cy - ry + p.hair_depth * 2.0 * ry,
            eye_y,
            eye_lx: cx - p.eye_dx * w + eyes_dx,
            eye_rx: cx + p.eye_dx * w + eyes_dx,
            eye_r,
            nose_top,
            nose_bottom: nose_top + p.nose_len * h,
            nose_cx: cx + nose_dx,
            nose_hw: p.nose_hw * w,
            mouth_cx: cx + mouth_dx,
            mouth_cy: cy + p.mouth_dy * h + mouth_dy,
            mouth_hw: p.mouth_hw * w,
            mouth_hh: p.mouth_h * h / 2.0,
            brightness,
        }
    }

    fn intensity_at(&self, p: &FaceParams, x: f64, y: f64) -> f64 {
        let (dx, dy) = ((x - self.cx) / self.rx, (y - self.cy) / self.ry);
        if dx * dx + dy * dy > 1.0 {
            return p.background;
        }
        let in_eye = |ex: f64| (x - ex).powi(2) + (y - self.eye_y).powi(2) <= self.eye_r * self.eye_r;
        if in_eye(self.eye_lx) || in_eye(self.eye_rx) {
            return p.eye;
        }
        if (x - self.mouth_cx).abs() <= self.mouth_hw && (y - self.mouth_cy).abs() <= self.mouth_hh {
            return p.mouth;
        }
        if y >= self.nose_top && y <= self.nose_bottom {
            let frac = (y - self.nose_top) / (self.nose_bottom - self.nose_top);
            if (x - self.nose_cx).abs() <= self.nose_hw * frac {
                return p.nose;
            }
        }
        if y < self.hairline {
            return p.hair;
        }
        p.skin
    }

    fn paint(&self, p: &FaceParams, shape: Shape) -> Image {
        let mut img = Image::zeros(shape);
        let step = 1.0 / SUPERSAMPLE as f64;
        let norm = (SUPERSAMPLE * SUPERSAMPLE) as f64;
        for y in 0..shape.height {
            for x in 0..shape.width {
                let mut acc = 0.0;
                for sy in 0..SUPERSAMPLE {
                    for sx in 0..SUPERSAMPLE {
                        let px = x as f64 + (sx as f64 + 0.5) * step;
                        let py = y as f64 + (sy as f64 + 0.5) * step;
                        acc += self.intensity_at(p, px, py);
                    }
                }
                let v = acc / norm + self.brightness;
                for c in 0..shape.channels {
                    let gain = if shape.channels == 1 { 1.0 } else { p.tint[c] };
                    img.set(y, x, c, (v * gain).clamp(0.0, 1.0));
                }
            }
        }
        img
    }

    fn landmarks(&self, shape: Shape) -> Result<LandmarkMap> {
        let (w, h) = (shape.width as i64, shape.height as i64);
        let rect = |name: &str, x0: f64, y0: f64, x1: f64, y1: f64| -> Result<[i64; 4]> {
            let r = [x0.floor() as i64, y0.floor() as i64, x1.ceil() as i64, y1.ceil() as i64];
            if r[0] < 0 || r[1] < 0 || r[2] > w || r[3] > h {
                return Err(Error::OutOfFrame(format!("{name} at {r:?} leaves {h}x{w} frame")));
            }
            Ok(r)
        };
        let r = self.eye_r;
        let le = rect("left_eye", self.eye_lx - r, self.eye_y - r, self.eye_lx + r, self.eye_y + r)?;
        let re = rect("right_eye", self.eye_rx - r, self.eye_y - r, self.eye_rx + r, self.eye_y + r)?;
        let mut nose = rect(
            "nose",
            self.nose_cx - self.nose_hw,
            self.nose_top,
            self.nose_cx + self.nose_hw,
            self.nose_bottom,
        )?;
        let mut mouth = rect(
            "mouth",
            self.mouth_cx - self.mouth_hw,
            self.mouth_cy - self.mouth_hh,
            self.mouth_cx + self.mouth_hw,
            self.mouth_cy + self.mouth_hh,
        )?;
        let eyes_bottom = le[3].max(re[3]);
        let eyes_top = le[1].min(re[1]);
        // Keep the feature boxes row-disjoint where rounding could make them touch.
        nose[1] = nose[1].max(eyes_bottom);
        mouth[1] = mouth[1].max(nose[3]);
        let oval_top = (self.cy - self.ry).floor() as i64 + 1;
        let oval_bottom = ((self.cy + self.ry).ceil() as i64 - 1).min(h);
        let forehead = [le[0], oval_top.max(0), re[2], eyes_top];
        let left_cheek = [le[0], eyes_bottom, nose[0], mouth[1]];
        let right_cheek = [nose[2], eyes_bottom, re[2], mouth[1]];
        let chin = [mouth[0], mouth[3], mouth[2], oval_bottom];

        let to_box = |name: &str, b: [i64; 4]| -> Result<BoundingBox> {
            if b[0] < 0 || b[1] < 0 || b[2] > w || b[3] > h || b[2] <= b[0] || b[3] <= b[1] {
                return Err(Error::OutOfFrame(format!("{name} box {b:?} is empty or outside {h}x{w}")));
            }
            Ok(BoundingBox::new(b[0] as usize, b[1] as usize, b[2] as usize, b[3] as usize))
        };
        LandmarkMap::new([
            to_box("left_eye", le)?,
            to_box("right_eye", re)?,
            to_box("nose", nose)?,
            to_box("mouth", mouth)?,
            to_box("forehead", forehead)?,
            to_box("left_cheek", left_cheek)?,
            to_box("right_cheek", right_cheek)?,
            to_box("chin", chin)?,
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::faces::Region;

    const SHAPE: Shape = Shape::new(32, 32, 1);

    fn identity(seed: u64) -> FaceIdentity {
        FaceIdentity::random(0, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn zero_jitter_ignores_the_variation_seed() {
        let id = identity(1);
        assert_eq!(id.render(SHAPE, 1, 0.0).unwrap(), id.render(SHAPE, 2, 0.0).unwrap());
    }

    #[test]
    fn jittered_renders_differ_but_stay_close() {
        for s in 0..20 {
            let id = identity(s);
            let (a, _) = id.render(SHAPE, 10, 0.05).unwrap();
            let (b, _) = id.render(SHAPE, 11, 0.05).unwrap();
            assert_ne!(a, b);
            assert!(a.mean_abs_diff(&b).unwrap() < 0.2);
        }
    }

    #[test]
    fn eyes_contrast_with_surrounding_skin() {
        for s in 0..20 {
            let id = identity(s);
            let (img, lm) = id.render(SHAPE, 0, 0.0).unwrap();
            let eye = lm.get(Region::LeftEye);
            let mean_in = eye.pixels().map(|(y, x)| img.get(y, x, 0)).sum::<f64>() / eye.area() as f64;
            let cheek = lm.get(Region::LeftCheek);
            let mean_skin =
                cheek.pixels().map(|(y, x)| img.get(y, x, 0)).sum::<f64>() / cheek.area() as f64;
            assert!((mean_skin - mean_in).abs() > 0.1, "identity {s}: {mean_in} vs {mean_skin}");
        }
    }

    #[test]
    fn landmarks_are_disjoint_and_in_frame() {
        for s in 0..200 {
            let id = identity(s);
            let (_, lm) = id.render(SHAPE, s, 0.05).unwrap();
            lm.validate_frame(32, 32).unwrap();
            let boxes: Vec<_> = lm.iter().collect();
            for (i, (ra, a)) in boxes.iter().enumerate() {
                for (rb, b) in &boxes[i + 1..] {
                    assert!(!a.intersects(b), "identity {s}: {ra:?} {a:?} overlaps {rb:?} {b:?}");
                }
            }
        }
    }

    #[test]
    fn large_jitter_is_rejected() {
        assert!(identity(0).render(SHAPE, 0, 0.5).is_err());
        assert!(identity(0).render(SHAPE, 0, -0.1).is_err());
    }

    #[test]
    fn colour_render_has_three_channels() {
        let (img, _) = identity(3).render(Shape::new(24, 24, 3), 0, 0.02).unwrap();
        assert_eq!(img.len(), 24 * 24 * 3);
        assert!(img.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
