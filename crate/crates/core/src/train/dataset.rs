use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::TrainError;
use crate::fcn::LabelMask;
use crate::image::{decode_image, encode_image, image_to_tensor, RasterImage};
use crate::io::write_atomic;
use crate::tensor::Tensor;

const MASK_SUFFIX: &str = "_mask.pgm";
const IMAGE_SUFFIX: &str = ".ppm";

/// An RGB image and its binary foreground mask (255 = subject).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplePair {
    pub name: String,
    image: RasterImage,
    mask: RasterImage,
}

impl SamplePair {
    pub fn new(name: impl Into<String>, image: RasterImage, mask: RasterImage) -> Result<Self, TrainError> {
        let name = name.into();
        let fail = |reason: String| TrainError::Sample { name: name.clone(), reason };
        if image.channels() != 3 {
            return Err(fail(format!("image has {} channels, expected 3", image.channels())));
        }
        if mask.channels() != 1 {
            return Err(fail(format!("mask has {} channels, expected 1", mask.channels())));
        }
        if !image.same_dimensions(&mask) {
            return Err(fail(format!(
                "dimension mismatch: image {}x{}, mask {}x{}",
                image.width(),
                image.height(),
                mask.width(),
                mask.height()
            )));
        }
        if mask.data().iter().any(|&v| v != 0 && v != 255) {
            return Err(fail("mask is not strictly 0/255".into()));
        }
        Ok(Self { name, image, mask })
    }

    pub fn image(&self) -> &RasterImage {
        &self.image
    }

    pub fn mask(&self) -> &RasterImage {
        &self.mask
    }

    pub fn input_tensor(&self) -> Tensor {
        image_to_tensor(&self.image)
    }

    pub fn labels(&self) -> LabelMask {
        let values = self.mask.data().iter().map(|&v| u8::from(v == 255)).collect();
        LabelMask::new(1, self.mask.height(), self.mask.width(), values).expect("mask is binary")
    }

    /// Fraction of pixels marked foreground.
    pub fn coverage(&self) -> f64 {
        let fg = self.mask.data().iter().filter(|&&v| v == 255).count();
        fg as f64 / self.mask.data().len() as f64
    }
}

fn read_raster(path: &Path, name: &str) -> Result<RasterImage, TrainError> {
    let bytes = fs::read(path).map_err(|e| TrainError::Sample { name: name.into(), reason: format!("{}: {e}", path.display()) })?;
    decode_image(&bytes).map_err(|e| TrainError::Sample { name: name.into(), reason: format!("{}: {e}", path.display()) })
}

/// Read `<name>.ppm` / `<name>_mask.pgm` pairs in lexicographic name order.
///
/// Mask samples are snapped to {0, 255} at threshold 128.
pub fn load_dataset(dir: &Path) -> Result<Vec<SamplePair>, TrainError> {
    let io_err = |source| TrainError::Io { path: dir.display().to_string(), source };
    let mut images = BTreeMap::new();
    let mut masks = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(io_err)? {
        let entry = entry.map_err(io_err)?;
        if !entry.file_type().map_err(io_err)?.is_file() {
            continue;
        }
        let file = entry.file_name().to_string_lossy().into_owned();
        if let Some(name) = file.strip_suffix(MASK_SUFFIX) {
            masks.insert(name.to_string(), entry.path());
        } else if let Some(name) = file.strip_suffix(IMAGE_SUFFIX) {
            images.insert(name.to_string(), entry.path());
        }
    }
    if let Some(name) = masks.keys().find(|n| !images.contains_key(*n)) {
        return Err(TrainError::Sample { name: name.clone(), reason: format!("orphan mask: no {name}{IMAGE_SUFFIX}") });
    }
    let mut pairs = Vec::with_capacity(images.len());
    for (name, image_path) in &images {
        let mask_path = masks.get(name).ok_or_else(|| TrainError::Sample {
            name: name.clone(),
            reason: format!("orphan image: no {name}{MASK_SUFFIX}"),
        })?;
        let image = read_raster(image_path, name)?;
        let mut mask = read_raster(mask_path, name)?;
        for v in mask.data_mut() {
            *v = if *v >= 128 { 255 } else { 0 };
        }
        pairs.push(SamplePair::new(name.clone(), image, mask)?);
    }
    Ok(pairs)
}

/// Write each pair as `<name>.ppm` + `<name>_mask.pgm` under `dir`.
pub fn save_dataset(dir: &Path, pairs: &[SamplePair]) -> Result<(), TrainError> {
    let io_err = |path: &Path, source| TrainError::Io { path: path.display().to_string(), source };
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    for pair in pairs {
        let image_path = dir.join(format!("{}{IMAGE_SUFFIX}", pair.name));
        let mask_path = dir.join(format!("{}{MASK_SUFFIX}", pair.name));
        write_atomic(&image_path, &encode_image(&pair.image)?).map_err(|e| io_err(&image_path, e))?;
        write_atomic(&mask_path, &encode_image(&pair.mask)?).map_err(|e| io_err(&mask_path, e))?;
    }
    Ok(())
}
