//! Procedural target images for tests and demos.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::Image;

/// Soft-edged rotated ellipse with a vertical shading ramp.
struct Blob {
    center: [f64; 2],
    radii: [f64; 2],
    angle: f64,
    color: [f64; 3],
    /// Width of the edge transition relative to the radius.
    softness: f64,
}

const SCENE_SEED: u64 = 0x5eed_0f_5ce7e;
const BLOBS: usize = 18;

/// A natural-looking still life: a sky-to-ground gradient, a wavy horizon,
/// overlapping soft and hard-edged ellipses and a striped patch. Coordinates
/// are relative to the image size, so every resolution shows the same content.
pub fn toy_scene(width: usize, height: usize) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(SCENE_SEED);
    let blobs: Vec<Blob> = (0..BLOBS)
        .map(|_| Blob {
            center: [rng.random_range(0.05..0.95), rng.random_range(0.05..0.95)],
            radii: [rng.random_range(0.04..0.2), rng.random_range(0.04..0.2)],
            angle: rng.random_range(0.0..std::f64::consts::PI),
            color: [rng.random(), rng.random(), rng.random()],
            softness: rng.random_range(0.05..0.4),
        })
        .collect();

    Image::from_fn(width, height, |x, y| {
        let u = (x as f64 + 0.5) / width as f64;
        let v = (y as f64 + 0.5) / height as f64;
        let horizon = 0.55 + 0.05 * (9.0 * u).sin();
        let ground = smoothstep(horizon - 0.01, horizon + 0.01, v);
        let sky = [0.45 + 0.3 * v, 0.65 - 0.1 * v, 0.95 - 0.3 * v];
        let soil = [0.45 - 0.2 * v, 0.35 - 0.1 * v, 0.2];
        let mut rgb = [0.0; 3];
        for c in 0..3 {
            rgb[c] = mix(sky[c], soil[c], ground);
        }
        let stripes = 0.5 + 0.5 * (40.0 * (u + 0.4 * v)).sin();
        let patch = smoothstep(0.2, 0.17, ((u - 0.78).powi(2) + (v - 0.82).powi(2)).sqrt());
        for c in 0..3 {
            rgb[c] = mix(rgb[c], 0.2 + 0.6 * stripes, patch * 0.9);
        }
        for b in &blobs {
            let (sin, cos) = b.angle.sin_cos();
            let dx = u - b.center[0];
            let dy = v - b.center[1];
            let px = (cos * dx + sin * dy) / b.radii[0];
            let py = (-sin * dx + cos * dy) / b.radii[1];
            let r = (px * px + py * py).sqrt();
            let w = smoothstep(1.0, 1.0 - b.softness, r);
            let shade = 1.0 - 0.3 * py.clamp(-1.0, 1.0);
            for c in 0..3 {
                rgb[c] = mix(rgb[c], (b.color[c] * shade).clamp(0.0, 1.0), w);
            }
        }
        rgb.map(|c| c.clamp(0.0, 1.0))
    })
}

fn mix(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Hermite step from 0 at `edge0` to 1 at `edge1`; works for `edge0 > edge1`.
fn smoothstep(edge0: f64, edge1: f64, x: f64) -> f64 {
    let t = ((x - edge0) / (edge1 - edge0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn values_in_unit_range() {
        let img = toy_scene(40, 30);
        assert_eq!((img.width, img.height), (40, 30));
        assert!(img.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn scene_is_not_flat() {
        let img = toy_scene(32, 32);
        let mean = img.data.iter().sum::<f64>() / img.data.len() as f64;
        let var = img.data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / img.data.len() as f64;
        assert!(var > 0.01, "{var}");
    }

    #[test]
    fn deterministic() {
        assert_eq!(toy_scene(16, 12), toy_scene(16, 12));
    }
}
