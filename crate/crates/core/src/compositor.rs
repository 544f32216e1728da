//! Background blur and matte-driven compositing.
//!
//! Blurs are separable (horizontal, then vertical) with replicated borders and
//! run in `f64`; 8-bit outputs are rounded once at the end.

use rayon::prelude::*;

use crate::image::{quantize, AlphaMatte, RasterImage};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CompositeError {
    #[error("gaussian sigma must be positive and finite, got {0}")]
    InvalidSigma(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("channel mismatch: foreground has {foreground}, background has {background}")]
    ChannelMismatch { foreground: usize, background: usize },
}

/// Normalized, symmetric 1-D Gaussian weights over `[-radius, radius]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKernel {
    radius: usize,
    sigma: f64,
    weights: Vec<f64>,
}

impl GaussianKernel {
    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// All `2·radius + 1` weights, index `radius` is the center.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weight at signed offset from the center.
    pub fn weight(&self, offset: isize) -> f64 {
        self.weights[(self.radius as isize + offset) as usize]
    }
}

/// Radius `⌈3σ⌉`, weights `∝ exp(−i² / 2σ²)`, renormalized to sum to 1.
pub fn build_kernel(sigma: f64) -> Result<GaussianKernel, CompositeError> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(CompositeError::InvalidSigma(sigma));
    }
    let radius = (3.0 * sigma).ceil() as usize;
    let half: Vec<f64> = (0..=radius)
        .map(|i| {
            let d = i as f64;
            (-(d * d) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total = half[0] + 2.0 * half[1..].iter().sum::<f64>();
    let mut weights = Vec::with_capacity(2 * radius + 1);
    weights.extend(half.iter().rev().map(|w| w / total));
    weights.extend(half[1..].iter().map(|w| w / total));
    Ok(GaussianKernel { radius, sigma, weights })
}

// One 1-D pass over `len` samples spaced `step` apart, replicate borders.
// Written as c + Σ w_i((x₋ᵢ − c) + (x₊ᵢ − c)) with c the center sample, so a
// constant line is reproduced exactly and mirroring the line is bit-exact.
#[inline]
fn smooth_line(src: &[f64], kernel: &GaussianKernel, out: &mut [f64]) {
    let n = src.len();
    let last = n as isize - 1;
    let at = |i: isize| src[i.clamp(0, last) as usize];
    for (x, o) in out.iter_mut().enumerate() {
        let c = src[x];
        let mut acc = 0.0;
        for i in 1..=kernel.radius {
            let d = i as isize;
            let xi = x as isize;
            acc += kernel.weights[kernel.radius + i] * ((at(xi - d) - c) + (at(xi + d) - c));
        }
        *o = c + acc;
    }
}

/// Separable Gaussian smoothing of a single `width × height` plane.
fn smooth_plane(plane: &[f64], width: usize, height: usize, kernel: &GaussianKernel) -> Vec<f64> {
    let mut horizontal = vec![0.0; plane.len()];
    horizontal
        .par_chunks_mut(width)
        .zip(plane.par_chunks(width))
        .for_each(|(dst, src)| smooth_line(src, kernel, dst));

    let mut transposed = vec![0.0; plane.len()];
    transposed.par_chunks_mut(height).enumerate().for_each(|(x, dst)| {
        let column: Vec<f64> = (0..height).map(|y| horizontal[y * width + x]).collect();
        smooth_line(&column, kernel, dst);
    });
    let mut out = vec![0.0; plane.len()];
    for x in 0..width {
        for y in 0..height {
            out[y * width + x] = transposed[x * height + y];
        }
    }
    out
}

pub fn gaussian_blur(img: &RasterImage, kernel: &GaussianKernel) -> RasterImage {
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let mut data = vec![0u8; w * h * c];
    for ch in 0..c {
        let plane: Vec<f64> = img.data().iter().skip(ch).step_by(c).map(|&s| f64::from(s)).collect();
        let blurred = smooth_plane(&plane, w, h, kernel);
        for (i, v) in blurred.into_iter().enumerate() {
            data[i * c + ch] = quantize(v);
        }
    }
    RasterImage::new(w, h, c, data).expect("dimensions preserved")
}

/// Soften matte edges with a Gaussian of σ = max(radius / 2, 0.5); radius 0 is the identity.
pub fn feather_matte(matte: &AlphaMatte, radius: usize) -> AlphaMatte {
    if radius == 0 {
        return matte.clone();
    }
    let sigma = (radius as f64 / 2.0).max(0.5);
    let kernel = build_kernel(sigma).expect("sigma is positive");
    let values = smooth_plane(matte.values(), matte.width(), matte.height(), &kernel)
        .into_iter()
        .map(|v| v.clamp(0.0, 1.0))
        .collect();
    AlphaMatte::from_raw(matte.width(), matte.height(), values)
}

/// `I = α·F + (1 − α)·B` per channel, rounded to 8 bits.
pub fn alpha_blend(
    foreground: &RasterImage,
    background: &RasterImage,
    matte: &AlphaMatte,
) -> Result<RasterImage, CompositeError> {
    if !foreground.same_dimensions(background) || !matte.matches(foreground) {
        return Err(CompositeError::DimensionMismatch(format!(
            "foreground {}x{}, background {}x{}, matte {}x{}",
            foreground.width(),
            foreground.height(),
            background.width(),
            background.height(),
            matte.width(),
            matte.height()
        )));
    }
    if foreground.channels() != background.channels() {
        return Err(CompositeError::ChannelMismatch {
            foreground: foreground.channels(),
            background: background.channels(),
        });
    }
    let c = foreground.channels();
    let data = foreground
        .data()
        .iter()
        .zip(background.data())
        .enumerate()
        .map(|(i, (&f, &b))| {
            let a = matte.values()[i / c];
            quantize(a * f64::from(f) + (1.0 - a) * f64::from(b))
        })
        .collect();
    Ok(RasterImage::new(foreground.width(), foreground.height(), c, data).expect("dimensions checked"))
}

/// The image composited over black: subject kept, everything else masked out.
pub fn extract_foreground(img: &RasterImage, matte: &AlphaMatte) -> Result<RasterImage, CompositeError> {
    let black = RasterImage::filled(img.width(), img.height(), img.channels(), 0).expect("valid dimensions");
    alpha_blend(img, &black, matte)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Direct 2-D convolution with the unnormalized Gaussian, replicate borders.
    fn brute_force_blur(img: &RasterImage, sigma: f64) -> Vec<f64> {
        let r = (3.0 * sigma).ceil() as isize;
        let g = |d: isize| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp();
        let z: f64 = (-r..=r).map(g).sum();
        let (w, h, c) = (img.width() as isize, img.height() as isize, img.channels());
        let mut out = Vec::new();
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    let mut acc = 0.0;
                    for dy in -r..=r {
                        for dx in -r..=r {
                            let sy = (y + dy).clamp(0, h - 1) as usize;
                            let sx = (x + dx).clamp(0, w - 1) as usize;
                            acc += g(dy) * g(dx) * f64::from(img.sample(sx, sy, ch));
                        }
                    }
                    out.push(acc / (z * z));
                }
            }
        }
        out
    }

    #[test]
    fn kernel_is_normalized_and_symmetric() {
        for sigma in [0.3, 0.5, 1.0, 2.0, 3.7, 8.0] {
            let k = build_kernel(sigma).unwrap();
            assert_eq!(k.weights().len(), 2 * k.radius() + 1);
            assert!((k.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for i in 0..=k.radius() as isize {
                assert_eq!(k.weight(i), k.weight(-i));
                assert!(k.weight(i) > 0.0);
            }
        }
    }

    #[test]
    fn unit_sigma_kernel_shape() {
        let k = build_kernel(1.0).unwrap();
        assert_eq!(k.radius(), 3);
        let raw: Vec<f64> = (0..4).map(|i: i32| (-(i * i) as f64 / 2.0).exp()).collect();
        let z = raw[0] + 2.0 * (raw[1] + raw[2] + raw[3]);
        for i in 0..4 {
            assert!((k.weight(i as isize) - raw[i] / z).abs() < 1e-15);
        }
        assert!(k.weight(0) > k.weight(1) && k.weight(1) > k.weight(2) && k.weight(2) > k.weight(3));
        // 1/√(2π) ≈ 0.39894 is the continuous peak; truncation leaves Z·w₀ = 1.
        assert!((k.weight(0) * z - 1.0).abs() < 1e-15);
        assert!((k.weight(0) - 0.39894).abs() < 5e-3);
    }

    #[test]
    fn rejects_non_positive_sigma() {
        assert_eq!(build_kernel(0.0).unwrap_err(), CompositeError::InvalidSigma(0.0));
        assert!(build_kernel(-1.0).is_err());
        assert!(build_kernel(f64::NAN).is_err());
    }

    #[test]
    fn constant_image_is_fixed_point() {
        let img = RasterImage::filled(9, 5, 3, 77).unwrap();
        for sigma in [0.5, 1.0, 4.0] {
            assert_eq!(gaussian_blur(&img, &build_kernel(sigma).unwrap()), img);
        }
    }

    #[test]
    fn single_bright_pixel_spreads_and_preserves_energy() {
        let n = 15;
        let mut data = vec![0u8; n * n];
        data[7 * n + 7] = 255;
        let img = RasterImage::new(n, n, 1, data).unwrap();
        let out = gaussian_blur(&img, &build_kernel(1.0).unwrap());
        let centre = out.sample(7, 7, 0);
        for (dx, dy) in [(1, 0), (0, 1), (1, 1), (-1, 0), (0, -1)] {
            let v = out.sample((7 + dx) as usize, (7 + dy) as usize, 0);
            assert!(centre > v, "centre {centre} neighbour {v}");
        }
        let reference = brute_force_blur(&img, 1.0);
        let total: f64 = reference.iter().sum();
        assert!((total - 255.0).abs() < 1e-9);
        let rounded: i64 = out.data().iter().map(|&v| i64::from(v)).sum();
        // each of the 49 touched samples rounds by at most 0.5
        assert!((rounded - 255).abs() <= 25);
    }

    #[test]
    fn separable_blur_matches_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let data: Vec<u8> = (0..20 * 13 * 3).map(|_| rng.random()).collect();
        let img = RasterImage::new(20, 13, 3, data).unwrap();
        let out = gaussian_blur(&img, &build_kernel(2.0).unwrap());
        for (fast, slow) in out.data().iter().zip(brute_force_blur(&img, 2.0)) {
            assert!((f64::from(*fast) - slow).abs() <= 1.0);
        }
    }

    #[test]
    fn feather_identity_and_softening() {
        let mut values = vec![0.0; 8 * 8];
        for y in 0..8 {
            for x in 4..8 {
                values[y * 8 + x] = 1.0;
            }
        }
        let hard = AlphaMatte::new(8, 8, values).unwrap();
        assert_eq!(feather_matte(&hard, 0), hard);
        let soft = feather_matte(&hard, 2);
        assert!(soft.values().iter().any(|&v| v > 0.0 && v < 1.0));
        assert!(soft.values().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let ones = AlphaMatte::filled(6, 4, 1.0).unwrap();
        assert_eq!(feather_matte(&ones, 3), ones);
    }

    #[test]
    fn blend_laws() {
        let f = RasterImage::filled(2, 2, 3, 200).unwrap();
        let b = RasterImage::filled(2, 2, 3, 100).unwrap();
        let half = AlphaMatte::filled(2, 2, 0.5).unwrap();
        assert!(alpha_blend(&f, &b, &half).unwrap().data().iter().all(|&v| v == 150));
        assert_eq!(alpha_blend(&f, &b, &AlphaMatte::filled(2, 2, 0.0).unwrap()).unwrap(), b);
        assert_eq!(alpha_blend(&f, &b, &AlphaMatte::filled(2, 2, 1.0).unwrap()).unwrap(), f);
    }

    #[test]
    fn blend_errors() {
        let f = RasterImage::filled(2, 2, 3, 0).unwrap();
        let small = RasterImage::filled(1, 2, 3, 0).unwrap();
        let gray = RasterImage::filled(2, 2, 1, 0).unwrap();
        let m = AlphaMatte::filled(2, 2, 0.5).unwrap();
        assert!(matches!(alpha_blend(&f, &small, &m), Err(CompositeError::DimensionMismatch(_))));
        assert!(matches!(alpha_blend(&f, &gray, &m), Err(CompositeError::ChannelMismatch { .. })));
        let m3 = AlphaMatte::filled(3, 2, 0.5).unwrap();
        assert!(alpha_blend(&f, &f, &m3).is_err());
        assert!(extract_foreground(&f, &m3).is_err());
    }

    #[test]
    fn extraction_over_black() {
        let img = RasterImage::new(2, 1, 3, vec![10, 20, 30, 40, 50, 60]).unwrap();
        let ones = AlphaMatte::filled(2, 1, 1.0).unwrap();
        assert_eq!(extract_foreground(&img, &ones).unwrap(), img);
        let zeros = AlphaMatte::filled(2, 1, 0.0).unwrap();
        assert!(extract_foreground(&img, &zeros).unwrap().data().iter().all(|&v| v == 0));
        let binary = AlphaMatte::new(2, 1, vec![1.0, 0.0]).unwrap();
        assert_eq!(extract_foreground(&img, &binary).unwrap().data(), &[10, 20, 30, 0, 0, 0]);
    }

    fn image_pair() -> impl Strategy<Value = (RasterImage, RasterImage, AlphaMatte)> {
        (1usize..7, 1usize..7, prop_oneof![Just(1usize), Just(3usize)]).prop_flat_map(|(w, h, c)| {
            (
                proptest::collection::vec(any::<u8>(), w * h * c),
                proptest::collection::vec(any::<u8>(), w * h * c),
                proptest::collection::vec(0.0f64..=1.0, w * h),
            )
                .prop_map(move |(f, b, a)| {
                    (
                        RasterImage::new(w, h, c, f).unwrap(),
                        RasterImage::new(w, h, c, b).unwrap(),
                        AlphaMatte::new(w, h, a).unwrap(),
                    )
                })
        })
    }

    proptest! {
        #[test]
        fn blend_is_bounded_by_inputs((f, b, m) in image_pair()) {
            let out = alpha_blend(&f, &b, &m).unwrap();
            for ((&o, &x), &y) in out.data().iter().zip(f.data()).zip(b.data()) {
                prop_assert!(o >= x.min(y) && o <= x.max(y));
            }
        }

        #[test]
        fn blend_swaps_with_inverted_matte((f, b, m) in image_pair()) {
            let a = alpha_blend(&f, &b, &m).unwrap();
            let swapped = alpha_blend(&b, &f, &m.inverted()).unwrap();
            for (x, y) in a.data().iter().zip(swapped.data()) {
                prop_assert!((i16::from(*x) - i16::from(*y)).abs() <= 1);
            }
        }

        #[test]
        fn blur_commutes_with_mirroring_and_channel_permutation(
            (img, _, _) in image_pair(), sigma in 0.4f64..3.0
        ) {
            let k = build_kernel(sigma).unwrap();
            let (w, h, c) = (img.width(), img.height(), img.channels());
            let mirror = |im: &RasterImage| {
                let mut d = vec![0u8; w * h * c];
                for y in 0..h { for x in 0..w { for ch in 0..c {
                    d[(y * w + (w - 1 - x)) * c + ch] = im.sample(x, y, ch);
                }}}
                RasterImage::new(w, h, c, d).unwrap()
            };
            prop_assert_eq!(gaussian_blur(&mirror(&img), &k), mirror(&gaussian_blur(&img, &k)));
            if c == 3 {
                let rotate = |im: &RasterImage| {
                    let d = im.data().chunks(3).flat_map(|p| [p[2], p[0], p[1]]).collect();
                    RasterImage::new(w, h, 3, d).unwrap()
                };
                prop_assert_eq!(gaussian_blur(&rotate(&img), &k), rotate(&gaussian_blur(&img, &k)));
            }
        }

        #[test]
        fn feather_stays_in_unit_range(values in proptest::collection::vec(0.0f64..=1.0, 30), radius in 0usize..6) {
            let m = AlphaMatte::new(6, 5, values).unwrap();
            let out = feather_matte(&m, radius);
            prop_assert!(out.values().iter().all(|v| (0.0..=1.0).contains(v)));
        }

        #[test]
        fn feather_preserves_constants(value in 0.0f64..=1.0, radius in 0usize..6) {
            let m = AlphaMatte::filled(7, 4, value).unwrap();
            prop_assert_eq!(feather_matte(&m, radius), m);
        }
    }
}
