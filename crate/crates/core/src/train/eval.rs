use super::{SamplePair, TrainError};
use crate::fcn::{foreground_probability, FcnModel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    /// Fraction of all pixels classified correctly.
    pub pixel_accuracy: f64,
    /// Foreground IoU averaged over samples.
    pub mean_iou: f64,
}

/// `|pred ∩ truth| / |pred ∪ truth|`, 1 when both are empty.
pub fn foreground_iou(pred: &[bool], truth: &[bool]) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &t) in pred.iter().zip(truth) {
        inter += usize::from(p && t);
        union += usize::from(p || t);
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Score thresholded foreground probabilities against the ground-truth masks.
pub fn evaluate(model: &FcnModel, dataset: &[SamplePair], threshold: f64) -> Result<Metrics, TrainError> {
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let (mut correct, mut total, mut iou_sum) = (0usize, 0usize, 0.0);
    for pair in dataset {
        let prob = foreground_probability(&model.infer(&pair.input_tensor())?)?;
        let pred: Vec<bool> = prob.data().iter().map(|&p| p >= threshold).collect();
        let truth: Vec<bool> = pair.mask().data().iter().map(|&v| v == 255).collect();
        correct += pred.iter().zip(&truth).filter(|(p, t)| p == t).count();
        total += truth.len();
        iou_sum += foreground_iou(&pred, &truth);
    }
    Ok(Metrics { pixel_accuracy: correct as f64 / total as f64, mean_iou: iou_sum / dataset.len() as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fcn::{ConvSpec, LayerSpec};
    use crate::image::RasterImage;
    use crate::tensor::Tensor;

    fn grid(n: usize, f: impl Fn(usize, usize) -> bool) -> Vec<bool> {
        (0..n * n).map(|i| f(i % n, i / n)).collect()
    }

    #[test]
    fn iou_cases() {
        let a = grid(4, |x, _| x < 2);
        assert_eq!(foreground_iou(&a, &a), 1.0);
        assert_eq!(foreground_iou(&a, &grid(4, |x, _| x >= 2)), 0.0);
        assert_eq!(foreground_iou(&grid(4, |_, _| false), &grid(4, |_, _| false)), 1.0);
    }

    // top half vs left half: |∩| = n²/4, |∪| = 3n²/4
    #[test]
    fn top_half_against_left_half_is_one_third() {
        for n in [2, 4, 10, 64] {
            let top = grid(n, |_, y| y < n / 2);
            let left = grid(n, |x, _| x < n / 2);
            let brute_inter = (0..n * n).filter(|&i| top[i] && left[i]).count();
            let brute_union = (0..n * n).filter(|&i| top[i] || left[i]).count();
            assert_eq!((brute_inter * 4, brute_union * 4), (n * n, 3 * n * n));
            assert!((foreground_iou(&top, &left) - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    // A 1×1 conv whose foreground logit is (red − 0.5)·k classifies by the red channel.
    fn red_detector() -> FcnModel {
        let layers = vec![LayerSpec::Conv(ConvSpec::square(1, 3, 2, 1, 0))];
        let w = Tensor::from_vec([2, 3, 1, 1], vec![0.0, 0.0, 0.0, 40.0, 0.0, 0.0]).unwrap();
        let b = Tensor::from_vec([2, 1, 1, 1], vec![0.0, -20.0]).unwrap();
        FcnModel::from_parts(layers, vec![w, b]).unwrap()
    }

    #[test]
    fn perfect_and_disjoint_predictions() {
        let mut img = vec![0u8; 4 * 4 * 3];
        let mut mask = vec![0u8; 16];
        for i in 0..8 {
            img[i * 3] = 255;
            mask[i] = 255;
        }
        let image = RasterImage::new(4, 4, 3, img).unwrap();
        let pair = SamplePair::new("p", image.clone(), RasterImage::new(4, 4, 1, mask.clone()).unwrap()).unwrap();
        let m = evaluate(&red_detector(), &[pair], 0.5).unwrap();
        assert_eq!(m, Metrics { pixel_accuracy: 1.0, mean_iou: 1.0 });

        let flipped: Vec<u8> = mask.iter().map(|&v| 255 - v).collect();
        let pair = SamplePair::new("q", image, RasterImage::new(4, 4, 1, flipped).unwrap()).unwrap();
        let m = evaluate(&red_detector(), &[pair], 0.5).unwrap();
        assert_eq!(m, Metrics { pixel_accuracy: 0.0, mean_iou: 0.0 });
        assert!(matches!(evaluate(&red_detector(), &[], 0.5), Err(TrainError::EmptyDataset)));
    }
}
