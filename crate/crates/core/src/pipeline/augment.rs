use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::imaging::sample_bilinear;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub enabled: bool,
    /// Maximum absolute rotation in degrees.
    pub rotate_deg: f64,
    /// Zoom factor drawn from `[1 - zoom, 1 + zoom]`.
    pub zoom: f64,
    pub flip: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig { enabled: true, rotate_deg: 5.0, zoom: 0.1, flip: true }
    }
}

/// A concrete draw of the augmentation parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform {
    pub angle_deg: f64,
    pub zoom: f64,
    pub flip: bool,
}

impl Transform {
    pub const IDENTITY: Transform = Transform { angle_deg: 0.0, zoom: 1.0, flip: false };

    pub fn sample<R: Rng>(cfg: &AugmentConfig, rng: &mut R) -> Transform {
        // Always consume three draws so the stream layout does not depend on the config.
        let a: f64 = rng.random();
        let z: f64 = rng.random();
        let f: f64 = rng.random();
        if !cfg.enabled {
            return Transform::IDENTITY;
        }
        Transform {
            angle_deg: (2.0 * a - 1.0) * cfg.rotate_deg,
            zoom: 1.0 + (2.0 * z - 1.0) * cfg.zoom,
            flip: cfg.flip && f < 0.5,
        }
    }
}

/// Rotates (counter-clockwise for positive angles in image coordinates) and
/// zooms about the slice center, then mirrors left-right if requested.
/// Samples falling outside the slice read as 0; the result is clipped to `[0, 1]`.
pub fn transform_slice(src: &[f32], h: usize, w: usize, t: &Transform) -> Vec<f32> {
    assert_eq!(src.len(), h * w);
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let (sin, cos) = t.angle_deg.to_radians().sin_cos();
    let mut out = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            let xf = if t.flip { w - 1 - x } else { x };
            let u = xf as f64 - cx;
            let v = y as f64 - cy;
            let sx = (cos * u + sin * v) / t.zoom + cx;
            let sy = (-sin * u + cos * v) / t.zoom + cy;
            out[y * w + x] = sample_bilinear(src, h, w, sx, sy, 0.0).clamp(0.0, 1.0);
        }
    }
    out
}

pub fn augment_slice<R: Rng>(src: &[f32], h: usize, w: usize, cfg: &AugmentConfig, rng: &mut R) -> Vec<f32> {
    let t = Transform::sample(cfg, rng);
    if t == Transform::IDENTITY {
        return src.to_vec();
    }
    transform_slice(src, h, w, &t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;

    fn blob(h: usize, w: usize) -> Vec<f32> {
        let (cx, cy) = (w as f64 * 0.45, h as f64 * 0.55);
        (0..h * w)
            .map(|i| {
                let (x, y) = ((i % w) as f64, (i / w) as f64);
                (0.9 * (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * 36.0)).exp()) as f32
            })
            .collect()
    }

    #[test]
    fn identity_transform() {
        let img = blob(40, 48);
        let out = transform_slice(&img, 40, 48, &Transform::IDENTITY);
        assert!(img.iter().zip(&out).all(|(a, b)| (a - b).abs() <= 1e-6));
    }

    #[test]
    fn double_flip_is_exact() {
        let img = blob(33, 32);
        let flip = Transform { flip: true, ..Transform::IDENTITY };
        let once = transform_slice(&img, 33, 32, &flip);
        assert_ne!(once, img);
        assert_eq!(transform_slice(&once, 33, 32, &flip), img);
    }

    #[test]
    fn rotation_round_trip_on_smooth_blob() {
        let img = blob(64, 64);
        let fwd = transform_slice(&img, 64, 64, &Transform { angle_deg: 5.0, ..Transform::IDENTITY });
        let back = transform_slice(&fwd, 64, 64, &Transform { angle_deg: -5.0, ..Transform::IDENTITY });
        let worst = img.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        assert!(worst <= 0.02, "max error {worst}");
    }

    #[test]
    fn sampled_parameters_stay_in_range() {
        let cfg = AugmentConfig::default();
        let mut rng = rng_for(4, &[]);
        let mut flips = 0;
        for _ in 0..2000 {
            let t = Transform::sample(&cfg, &mut rng);
            assert!(t.angle_deg.abs() <= 5.0 && (0.9..=1.1).contains(&t.zoom));
            flips += t.flip as usize;
        }
        assert!((900..1100).contains(&flips));
    }
}
