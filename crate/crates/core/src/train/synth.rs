//! Procedural stand-in for a portrait dataset: one smooth "subject" shape over
//! a noise-textured background, with its exact mask.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{SamplePair, TrainError};
use crate::image::RasterImage;

const BACKGROUND_NOISE: i32 = 60;
const SUBJECT_NOISE: i32 = 6;
const MIN_COVERAGE: f64 = 0.10;
const MAX_COVERAGE: f64 = 0.60;

#[derive(Debug, Clone, Copy)]
enum Shape {
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64 },
    RoundedRect { cx: f64, cy: f64, hw: f64, hh: f64, corner: f64 },
}

impl Shape {
    fn random(rng: &mut ChaCha8Rng, size: f64) -> Shape {
        let cx = rng.random_range(0.2..0.8) * size;
        let cy = rng.random_range(0.2..0.8) * size;
        let a = rng.random_range(0.15..0.45) * size;
        let b = rng.random_range(0.15..0.45) * size;
        if rng.random_bool(0.5) {
            Shape::Ellipse { cx, cy, rx: a, ry: b }
        } else {
            let corner = a.min(b) * rng.random_range(0.2..0.6);
            Shape::RoundedRect { cx, cy, hw: a, hh: b, corner }
        }
    }

    fn contains(&self, px: f64, py: f64) -> bool {
        match *self {
            Shape::Ellipse { cx, cy, rx, ry } => {
                let (u, v) = ((px - cx) / rx, (py - cy) / ry);
                u * u + v * v <= 1.0
            }
            Shape::RoundedRect { cx, cy, hw, hh, corner } => {
                let (dx, dy) = ((px - cx).abs(), (py - cy).abs());
                if dx > hw || dy > hh {
                    return false;
                }
                let (qx, qy) = (dx - (hw - corner), dy - (hh - corner));
                qx <= 0.0 || qy <= 0.0 || qx * qx + qy * qy <= corner * corner
            }
        }
    }
}

fn jitter(rng: &mut ChaCha8Rng, base: u8, amplitude: i32) -> u8 {
    (i32::from(base) + rng.random_range(-amplitude..=amplitude)).clamp(0, 255) as u8
}

fn sample(rng: &mut ChaCha8Rng, size: usize, name: String) -> SamplePair {
    let mask: Vec<u8> = loop {
        let shape = Shape::random(rng, size as f64);
        let mask: Vec<u8> = (0..size * size)
            .map(|i| {
                let (x, y) = ((i % size) as f64 + 0.5, (i / size) as f64 + 0.5);
                if shape.contains(x, y) { 255 } else { 0 }
            })
            .collect();
        let coverage = mask.iter().filter(|&&v| v == 255).count() as f64 / mask.len() as f64;
        if (MIN_COVERAGE..=MAX_COVERAGE).contains(&coverage) {
            break mask;
        }
    };
    let background: [u8; 3] = rng.random();
    let subject: [u8; 3] = rng.random();
    let mut data = Vec::with_capacity(size * size * 3);
    for &m in &mask {
        let (base, amplitude) = if m == 255 { (subject, SUBJECT_NOISE) } else { (background, BACKGROUND_NOISE) };
        for b in base {
            data.push(jitter(rng, b, amplitude));
        }
    }
    let image = RasterImage::new(size, size, 3, data).expect("square RGB raster");
    let mask = RasterImage::new(size, size, 1, mask).expect("square gray raster");
    SamplePair::new(name, image, mask).expect("generated pair is well formed")
}

/// `n` square samples of side `size` (at least 16), fully determined by `seed`.
///
/// Every mask is strictly binary with the subject covering 10–60% of pixels.
pub fn generate_synthetic_dataset(n: usize, size: usize, seed: u64) -> Result<Vec<SamplePair>, TrainError> {
    if size < 16 {
        return Err(TrainError::Config(format!("synthetic image size must be at least 16, got {size}")));
    }
    Ok((0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            sample(&mut rng, size, format!("synth_{i:05}"))
        })
        .collect())
}
