//! Central finite-difference oracle for backpropagated gradients.
//!
//! A ±ε probe that flips a ReLU state or changes a pooling winner straddles a
//! point where the loss is not differentiable, and the plain central
//! difference there measures the jump rather than the derivative. Such probes
//! are detected by comparing activation patterns, and the difference is
//! re-taken at the same ε with every gate pinned to its state at the
//! unperturbed point. Both numbers are kept in the report.

use rand::Rng;

use super::layers::{softmax_pixel_loss, LabelMask};
use super::model::FcnModel;
use super::FcnError;
use crate::tensor::Tensor;

/// Relative error `|a − n| / max(|a|, |n|, 1e−8)`.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// `(f(x + ε·e_i) − f(x − ε·e_i)) / 2ε`.
pub fn central_difference<F>(x: &Tensor, index: usize, eps: f64, mut f: F) -> f64
where
    F: FnMut(&Tensor) -> f64,
{
    let mut probe = x.clone();
    probe.data_mut()[index] = x.data()[index] + eps;
    let plus = f(&probe);
    probe.data_mut()[index] = x.data()[index] - eps;
    let minus = f(&probe);
    (plus - minus) / (2.0 * eps)
}

/// Uniform values in `[-1, 1)`.
pub fn random_tensor<R: Rng + ?Sized>(rng: &mut R, shape: [usize; 4]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::from_vec(shape, data).expect("length matches shape")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    /// Index into [`FcnModel::parameters`].
    pub tensor: usize,
    pub element: usize,
    pub analytic: f64,
    /// Central difference the verdict is based on.
    pub numeric: f64,
    pub rel_error: f64,
    /// Central difference with gates free to switch.
    pub plain_numeric: f64,
    /// Gates that switched across the ±ε probe; 0 when the probe stayed smooth.
    pub gates_switched: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checks: Vec<ParamCheck>,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub failures: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    /// Parameters whose probe crossed a ReLU or pooling kink.
    pub fn kinked(&self) -> usize {
        self.checks.iter().filter(|c| c.gates_switched > 0).count()
    }

    /// Worst relative error against the plain (ungated) central differences.
    pub fn max_plain_rel_error(&self) -> f64 {
        self.checks.iter().fold(0.0, |m: f64, c| m.max(rel_error(c.analytic, c.plain_numeric)))
    }
}

/// Compare backpropagated gradients of the mean pixel loss against central
/// differences over every parameter of `model`.
pub fn gradient_check(
    model: &mut FcnModel,
    input: &Tensor,
    labels: &LabelMask,
    epsilon: f64,
    tolerance: f64,
) -> Result<GradCheckReport, FcnError> {
    let logits = model.forward(input)?;
    let (_, grad_logits) = softmax_pixel_loss(&logits, labels)?;
    let analytic = model.backward(&grad_logits)?;
    compare_gradients(model, input, labels, epsilon, tolerance, &analytic)
}

/// Gradient check of the default architecture on a seeded `(1, 3, size, size)`
/// input with random binary labels.
pub fn seeded_default_check(seed: u64, size: usize, epsilon: f64, tolerance: f64) -> Result<GradCheckReport, FcnError> {
    use rand::SeedableRng;
    let mut model = FcnModel::with_seed(seed);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let input = random_tensor(&mut rng, [1, 3, size, size]);
    let labels = LabelMask::new(1, size, size, (0..size * size).map(|_| u8::from(rng.random_bool(0.5))).collect())?;
    gradient_check(&mut model, &input, &labels, epsilon, tolerance)
}

/// Check caller-supplied gradients against central differences.
pub fn compare_gradients(
    model: &mut FcnModel,
    input: &Tensor,
    labels: &LabelMask,
    epsilon: f64,
    tolerance: f64,
    analytic: &[Tensor],
) -> Result<GradCheckReport, FcnError> {
    if analytic.len() != model.parameters().len() {
        return Err(FcnError::Shape(format!(
            "{} gradient tensors for {} parameters",
            analytic.len(),
            model.parameters().len()
        )));
    }
    let (_, base) = model.infer_with_pattern(input)?;
    let mut checks = Vec::with_capacity(model.parameter_count());
    for (t, grad) in analytic.iter().enumerate() {
        grad.ensure_shape(model.parameters()[t].shape(), "analytic gradient")?;
        for e in 0..grad.len() {
            let original = model.parameters()[t].data()[e];
            let probe = |model: &mut FcnModel, value: f64, pinned: bool| -> Result<(f64, usize), FcnError> {
                model.parameters_mut()[t].data_mut()[e] = value;
                let (logits, switched) = if pinned {
                    (model.infer_gated(input, &base)?, 0)
                } else {
                    let (logits, pattern) = model.infer_with_pattern(input)?;
                    (logits, pattern.differences(&base))
                };
                Ok((softmax_pixel_loss(&logits, labels)?.0, switched))
            };
            let result = (|| {
                let (plus, sp) = probe(model, original + epsilon, false)?;
                let (minus, sm) = probe(model, original - epsilon, false)?;
                let plain = (plus - minus) / (2.0 * epsilon);
                let switched = sp + sm;
                let numeric = if switched > 0 {
                    let (gp, _) = probe(model, original + epsilon, true)?;
                    let (gm, _) = probe(model, original - epsilon, true)?;
                    (gp - gm) / (2.0 * epsilon)
                } else {
                    plain
                };
                Ok::<_, FcnError>((numeric, plain, switched))
            })();
            model.parameters_mut()[t].data_mut()[e] = original;
            let (numeric, plain_numeric, gates_switched) = result?;
            let a = grad.data()[e];
            checks.push(ParamCheck {
                tensor: t,
                element: e,
                analytic: a,
                numeric,
                rel_error: rel_error(a, numeric),
                plain_numeric,
                gates_switched,
            });
        }
    }
    let max_rel_error = checks.iter().fold(0.0, |m: f64, c| m.max(c.rel_error));
    let failures = checks.iter().filter(|c| !(c.rel_error <= tolerance)).cloned().collect();
    Ok(GradCheckReport { checks, max_rel_error, tolerance, failures })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fcn::model::{ConvSpec, LayerSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_model(rng: &mut ChaCha8Rng) -> FcnModel {
        let layers = vec![
            LayerSpec::Conv(ConvSpec::square(3, 3, 4, 1, 1)),
            LayerSpec::Relu,
            LayerSpec::MaxPool { window: 2, stride: 2 },
            LayerSpec::Deconv(ConvSpec::square(2, 4, 2, 2, 0)),
        ];
        FcnModel::new(layers, rng).unwrap()
    }

    fn labels(n: usize) -> LabelMask {
        LabelMask::new(1, n, n, (0..n * n).map(|i| (i % 3 == 1) as u8).collect()).unwrap()
    }

    #[test]
    fn rel_error_floor() {
        assert_eq!(rel_error(0.0, 0.0), 0.0);
        assert!((rel_error(1e-9, 0.0) - 0.1).abs() < 1e-12);
        assert!((rel_error(2.0, 1.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn correct_backprop_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut m = small_model(&mut rng);
        let x = random_tensor(&mut rng, [1, 3, 6, 6]);
        let report = gradient_check(&mut m, &x, &labels(6), 1e-3, 1e-3).unwrap();
        assert!(report.passed(), "max rel error {}", report.max_rel_error);
        assert!(report.max_rel_error < 1e-3);
    }

    #[test]
    fn sign_flipped_conv_gradient_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let mut m = small_model(&mut rng);
        let x = random_tensor(&mut rng, [1, 3, 6, 6]);
        let lbl = labels(6);
        let logits = m.forward(&x).unwrap();
        let (_, g) = softmax_pixel_loss(&logits, &lbl).unwrap();
        let mut corrupted = m.backward(&g).unwrap();
        for v in corrupted[0].data_mut() {
            *v = -*v;
        }
        let report = compare_gradients(&mut m, &x, &lbl, 1e-3, 1e-3, &corrupted).unwrap();
        assert!(!report.passed());
        assert!(report.failures.iter().all(|f| f.tensor == 0));
        assert!(report.max_rel_error > 1.0);
    }

    #[test]
    fn parameters_are_restored_after_probing() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut m = small_model(&mut rng);
        let before = m.clone();
        let x = random_tensor(&mut rng, [1, 3, 4, 4]);
        gradient_check(&mut m, &x, &labels(4), 1e-3, 1e-3).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn parameter_free_model_gives_empty_report() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let mut m = FcnModel::from_parts(vec![LayerSpec::Relu], vec![]).unwrap();
        let x = random_tensor(&mut rng, [1, 2, 4, 4]);
        let report = gradient_check(&mut m, &x, &labels(4), 1e-3, 1e-3).unwrap();
        assert!(report.checks.is_empty());
        assert!(report.passed());
        assert_eq!(report.max_rel_error, 0.0);
    }

    #[test]
    fn mismatched_gradient_set_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let mut m = small_model(&mut rng);
        let x = random_tensor(&mut rng, [1, 3, 4, 4]);
        assert!(compare_gradients(&mut m, &x, &labels(4), 1e-3, 1e-3, &[]).is_err());
    }
}
