//! Segment, blur and blend: the full portrait pipeline.

use std::path::PathBuf;

use crate::compositor::{alpha_blend, build_kernel, feather_matte, gaussian_blur, CompositeError};
use crate::fcn::{foreground_probability, FcnError, FcnModel};
use crate::image::{image_to_tensor, AlphaMatte, RasterImage};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid pipeline configuration: {0}")]
    Config(String),
    #[error("segment stage: {0}")]
    Segment(String),
    #[error("segment stage: {0}")]
    Network(#[from] FcnError),
    #[error("{stage} stage: {source}")]
    Composite { stage: &'static str, source: CompositeError },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub model_path: Option<PathBuf>,
    pub blur_sigma: f64,
    pub feather_radius: usize,
    pub mask_threshold: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self { model_path: None, blur_sigma: 8.0, feather_radius: 3, mask_threshold: 0.5 }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if !(self.blur_sigma > 0.0 && self.blur_sigma.is_finite()) {
            return Err(PipelineError::Config(format!("blur sigma must be positive, got {}", self.blur_sigma)));
        }
        if !(self.mask_threshold > 0.0 && self.mask_threshold < 1.0) {
            return Err(PipelineError::Config(format!(
                "mask threshold must lie strictly between 0 and 1, got {}",
                self.mask_threshold
            )));
        }
        Ok(())
    }
}

/// Soft foreground matte: per-pixel softmax probability of the subject class.
pub fn segment(model: &FcnModel, img: &RasterImage) -> Result<AlphaMatte, PipelineError> {
    if img.channels() != model.input_channels() {
        return Err(PipelineError::Segment(format!(
            "model expects {} channels, image has {}",
            model.input_channels(),
            img.channels()
        )));
    }
    let logits = model.infer(&image_to_tensor(img))?;
    let prob = foreground_probability(&logits)?;
    AlphaMatte::new(img.width(), img.height(), prob.into_data()).map_err(|e| PipelineError::Segment(e.to_string()))
}

/// Threshold, feather, blur the original and blend it back over the blur.
pub fn composite_portrait(
    img: &RasterImage,
    matte: &AlphaMatte,
    config: &PipelineConfig,
) -> Result<RasterImage, PipelineError> {
    config.validate()?;
    if !matte.matches(img) {
        return Err(PipelineError::Composite {
            stage: "feather",
            source: CompositeError::DimensionMismatch(format!(
                "image {}x{}, matte {}x{}",
                img.width(),
                img.height(),
                matte.width(),
                matte.height()
            )),
        });
    }
    let feathered = feather_matte(&matte.threshold(config.mask_threshold), config.feather_radius);
    let kernel = build_kernel(config.blur_sigma).map_err(|source| PipelineError::Composite { stage: "blur", source })?;
    let blurred = gaussian_blur(img, &kernel);
    alpha_blend(img, &blurred, &feathered).map_err(|source| PipelineError::Composite { stage: "blend", source })
}

pub fn run_portrait(img: &RasterImage, model: &FcnModel, config: &PipelineConfig) -> Result<RasterImage, PipelineError> {
    config.validate()?;
    let matte = segment(model, img)?;
    composite_portrait(img, &matte, config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient_image(w: usize, h: usize) -> RasterImage {
        let data = (0..w * h * 3).map(|i| ((i * 37) % 256) as u8).collect();
        RasterImage::new(w, h, 3, data).unwrap()
    }

    fn sharp(sigma: f64) -> PipelineConfig {
        PipelineConfig { blur_sigma: sigma, feather_radius: 0, ..PipelineConfig::default() }
    }

    #[test]
    fn opaque_matte_returns_input() {
        let img = gradient_image(12, 9);
        let ones = AlphaMatte::filled(12, 9, 1.0).unwrap();
        assert_eq!(composite_portrait(&img, &ones, &PipelineConfig::default()).unwrap(), img);
    }

    #[test]
    fn transparent_matte_returns_blur() {
        let img = gradient_image(12, 9);
        let zeros = AlphaMatte::filled(12, 9, 0.0).unwrap();
        let expected = gaussian_blur(&img, &build_kernel(8.0).unwrap());
        assert_eq!(composite_portrait(&img, &zeros, &PipelineConfig::default()).unwrap(), expected);
    }

    #[test]
    fn binary_matte_selects_per_pixel() {
        let (w, h) = (10, 6);
        let img = gradient_image(w, h);
        let values: Vec<f64> = (0..w * h).map(|i| if (i % w) < 4 { 0.9 } else { 0.2 }).collect();
        let matte = AlphaMatte::new(w, h, values).unwrap();
        let out = composite_portrait(&img, &matte, &sharp(2.0)).unwrap();
        let blurred = gaussian_blur(&img, &build_kernel(2.0).unwrap());
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    let src = if x < 4 { &img } else { &blurred };
                    assert_eq!(out.sample(x, y, c), src.sample(x, y, c));
                }
            }
        }
    }

    #[test]
    fn segment_produces_unit_interval_matte() {
        let img = gradient_image(16, 12);
        let matte = segment(&FcnModel::with_seed(3), &img).unwrap();
        assert!(matte.matches(&img));
        assert!(matte.values().iter().all(|v| (0.0..=1.0).contains(v)));
        let gray = RasterImage::filled(16, 12, 1, 0).unwrap();
        assert!(matches!(segment(&FcnModel::with_seed(3), &gray), Err(PipelineError::Segment(_))));
    }

    #[test]
    fn config_and_stage_errors() {
        let img = gradient_image(4, 4);
        let m = AlphaMatte::filled(4, 4, 1.0).unwrap();
        for bad in [
            PipelineConfig { blur_sigma: 0.0, ..PipelineConfig::default() },
            PipelineConfig { mask_threshold: 1.0, ..PipelineConfig::default() },
            PipelineConfig { mask_threshold: 0.0, ..PipelineConfig::default() },
        ] {
            assert!(matches!(composite_portrait(&img, &m, &bad), Err(PipelineError::Config(_))));
        }
        let small = AlphaMatte::filled(3, 4, 1.0).unwrap();
        let err = composite_portrait(&img, &small, &PipelineConfig::default()).unwrap_err();
        assert!(err.to_string().starts_with("feather stage"));
    }

    #[test]
    fn run_portrait_is_deterministic() {
        let img = gradient_image(16, 16);
        let model = FcnModel::with_seed(11);
        let a = run_portrait(&img, &model, &PipelineConfig::default()).unwrap();
        let b = run_portrait(&img, &model, &PipelineConfig::default()).unwrap();
        assert_eq!(a, b);
    }
}
