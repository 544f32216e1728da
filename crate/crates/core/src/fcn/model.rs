use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::layers::{
    conv_backward, conv_forward, deconv_backward, deconv_forward, maxpool_backward, maxpool_forward, maxpool_gather, relu_backward,
    relu_forward, ConvGeometry, PoolIndices,
};
use super::FcnError;
use crate::tensor::Tensor;

/// Kernel geometry of a convolution or transposed convolution layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    pub fn square(kernel: usize, in_channels: usize, out_channels: usize, stride: usize, padding: usize) -> Self {
        Self { kernel_h: kernel, kernel_w: kernel, in_channels, out_channels, stride, padding }
    }

    fn geometry(&self) -> ConvGeometry {
        ConvGeometry::new(self.stride, self.padding)
    }

    fn validate(&self, layer: usize) -> Result<(), FcnError> {
        let dims = [self.kernel_h, self.kernel_w, self.in_channels, self.out_channels, self.stride];
        if dims.contains(&0) {
            return Err(FcnError::Architecture(format!(
                "layer {layer}: kernel dims, channel counts and stride must be at least 1, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Conv(ConvSpec),
    Relu,
    MaxPool { window: usize, stride: usize },
    Deconv(ConvSpec),
    /// Training-time marker; identity at inference.
    SoftmaxLoss,
}

impl LayerSpec {
    fn weight_shape(&self) -> Option<[usize; 4]> {
        match self {
            LayerSpec::Conv(c) => Some([c.out_channels, c.in_channels, c.kernel_h, c.kernel_w]),
            LayerSpec::Deconv(c) => Some([c.in_channels, c.out_channels, c.kernel_h, c.kernel_w]),
            _ => None,
        }
    }

    fn bias_shape(&self) -> Option<[usize; 4]> {
        match self {
            LayerSpec::Conv(c) | LayerSpec::Deconv(c) => Some([c.out_channels, 1, 1, 1]),
            _ => None,
        }
    }

    fn fan_in(&self) -> usize {
        match self {
            LayerSpec::Conv(c) | LayerSpec::Deconv(c) => c.in_channels * c.kernel_h * c.kernel_w,
            _ => 0,
        }
    }
}

/// Parameter tensor shapes implied by an architecture, weight then bias per
/// parametrized layer, in layer order.
pub fn parameter_shapes(layers: &[LayerSpec]) -> Vec<[usize; 4]> {
    layers
        .iter()
        .filter_map(|l| Some([l.weight_shape()?, l.bias_shape()?]))
        .flatten()
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
enum Gate {
    Smooth,
    Relu(Vec<bool>),
    Pool(PoolIndices),
}

/// ReLU on/off states and max-pool winners of one forward pass, layer by layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationPattern {
    gates: Vec<Gate>,
}

impl ActivationPattern {
    /// Number of gates (ReLU units plus pooling windows) that differ.
    pub fn differences(&self, other: &ActivationPattern) -> usize {
        self.gates
            .iter()
            .zip(&other.gates)
            .map(|(a, b)| match (a, b) {
                (Gate::Relu(x), Gate::Relu(y)) => x.iter().zip(y).filter(|(p, q)| p != q).count(),
                (Gate::Pool(x), Gate::Pool(y)) => {
                    x.argmax().iter().zip(y.argmax()).filter(|(p, q)| p != q).count()
                }
                (Gate::Smooth, Gate::Smooth) => 0,
                _ => 1,
            })
            .sum()
    }
}

fn gate_relu(x: &Tensor, mask: &[bool]) -> Tensor {
    let mut y = x.clone();
    for (v, &on) in y.data_mut().iter_mut().zip(mask) {
        if !on {
            *v = 0.0;
        }
    }
    y
}

#[derive(Debug, Clone)]
struct ForwardCache {
    inputs: Vec<Tensor>,
    pools: Vec<Option<PoolIndices>>,
    output_shape: [usize; 4],
}

/// Ordered layer list plus its parameters.
///
/// Parameters are held at single precision (every value is exactly
/// representable as `f32`) while arithmetic runs in `f64`.
#[derive(Debug, Clone)]
pub struct FcnModel {
    layers: Vec<LayerSpec>,
    params: Vec<Tensor>,
    cache: Option<ForwardCache>,
}

impl PartialEq for FcnModel {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers && self.params == other.params
    }
}

impl FcnModel {
    /// conv 3×3 (3→16) → ReLU → maxpool 2/2 → conv 3×3 (16→32) → ReLU →
    /// deconv 2×2 stride 2 (32→16) → ReLU → conv 1×1 (16→2).
    pub fn default_architecture() -> Vec<LayerSpec> {
        vec![
            LayerSpec::Conv(ConvSpec::square(3, 3, 16, 1, 1)),
            LayerSpec::Relu,
            LayerSpec::MaxPool { window: 2, stride: 2 },
            LayerSpec::Conv(ConvSpec::square(3, 16, 32, 1, 1)),
            LayerSpec::Relu,
            LayerSpec::Deconv(ConvSpec::square(2, 32, 16, 2, 0)),
            LayerSpec::Relu,
            LayerSpec::Conv(ConvSpec::square(1, 16, 2, 1, 0)),
            LayerSpec::SoftmaxLoss,
        ]
    }

    /// He-normal weights (std `sqrt(2 / fan_in)`), zero biases.
    pub fn new<R: Rng + ?Sized>(layers: Vec<LayerSpec>, rng: &mut R) -> Result<Self, FcnError> {
        validate_architecture(&layers)?;
        let mut params = Vec::new();
        for layer in &layers {
            if let (Some(ws), Some(bs)) = (layer.weight_shape(), layer.bias_shape()) {
                let std = (2.0 / layer.fan_in() as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("positive standard deviation");
                let mut w = Tensor::zeros(ws);
                for v in w.data_mut() {
                    *v = normal.sample(rng);
                }
                w.round_to_f32();
                params.push(w);
                params.push(Tensor::zeros(bs));
            }
        }
        Ok(Self { layers, params, cache: None })
    }

    /// Default architecture with seeded initialization.
    pub fn with_seed(seed: u64) -> Self {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Self::new(Self::default_architecture(), &mut rng).expect("default architecture is valid")
    }

    /// Assemble a model from an architecture and explicit parameters.
    pub fn from_parts(layers: Vec<LayerSpec>, params: Vec<Tensor>) -> Result<Self, FcnError> {
        validate_architecture(&layers)?;
        let shapes = parameter_shapes(&layers);
        if shapes.len() != params.len() {
            return Err(FcnError::Architecture(format!(
                "architecture needs {} parameter tensors, got {}",
                shapes.len(),
                params.len()
            )));
        }
        for (i, (shape, p)) in shapes.iter().zip(&params).enumerate() {
            p.ensure_shape(*shape, &format!("parameter {i}"))?;
        }
        Ok(Self { layers, params, cache: None })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn parameters(&self) -> &[Tensor] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Channel count expected by the first parametrized layer.
    pub fn input_channels(&self) -> usize {
        self.layers
            .iter()
            .find_map(|l| match l {
                LayerSpec::Conv(c) | LayerSpec::Deconv(c) => Some(c.in_channels),
                _ => None,
            })
            .unwrap_or(2)
    }

    /// Forward pass retaining activations for [`FcnModel::backward`].
    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor, FcnError> {
        let mut cache = ForwardCache { inputs: Vec::new(), pools: Vec::new(), output_shape: [0; 4] };
        let (out, _) = self.run(input, Some(&mut cache), None)?;
        cache.output_shape = out.shape();
        self.cache = Some(cache);
        Ok(out)
    }

    /// Forward pass without retaining activations.
    pub fn infer(&self, input: &Tensor) -> Result<Tensor, FcnError> {
        Ok(self.run(input, None, None)?.0)
    }

    /// Forward pass that also reports the ReLU states and pooling winners.
    pub fn infer_with_pattern(&self, input: &Tensor) -> Result<(Tensor, ActivationPattern), FcnError> {
        self.run(input, None, None)
    }

    /// Forward pass with every ReLU state and pooling winner pinned to
    /// `pattern`, making the network smooth in its parameters.
    pub fn infer_gated(&self, input: &Tensor, pattern: &ActivationPattern) -> Result<Tensor, FcnError> {
        if pattern.gates.len() != self.layers.len() {
            return Err(FcnError::Shape(format!(
                "activation pattern covers {} layers, model has {}",
                pattern.gates.len(),
                self.layers.len()
            )));
        }
        Ok(self.run(input, None, Some(pattern))?.0)
    }

    fn run(
        &self,
        input: &Tensor,
        mut cache: Option<&mut ForwardCache>,
        fixed: Option<&ActivationPattern>,
    ) -> Result<(Tensor, ActivationPattern), FcnError> {
        if input.channels() != self.input_channels() {
            return Err(FcnError::Shape(format!(
                "model expects {} input channels, got {}",
                self.input_channels(),
                input.channels()
            )));
        }
        let mut x = input.clone();
        let mut p = 0;
        let mut gates = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let pinned = fixed.map(|f| &f.gates[i]);
            let (next, gate) = match layer {
                LayerSpec::Conv(spec) => {
                    let y = conv_forward(&x, &self.params[p], self.params[p + 1].data(), spec.geometry())?;
                    p += 2;
                    (y, Gate::Smooth)
                }
                LayerSpec::Deconv(spec) => {
                    let y = deconv_forward(&x, &self.params[p], self.params[p + 1].data(), spec.geometry())?;
                    p += 2;
                    (y, Gate::Smooth)
                }
                LayerSpec::Relu => {
                    let mask: Vec<bool> = x.data().iter().map(|&v| v > 0.0).collect();
                    let y = match pinned {
                        Some(Gate::Relu(m)) if m.len() == x.len() => gate_relu(&x, m),
                        Some(_) => return Err(FcnError::Shape(format!("pinned pattern does not fit layer {i}"))),
                        None => relu_forward(&x),
                    };
                    (y, Gate::Relu(mask))
                }
                LayerSpec::MaxPool { window, stride } => {
                    let (y, idx) = maxpool_forward(&x, *window, *stride)?;
                    let y = match pinned {
                        Some(Gate::Pool(fixed_idx)) => maxpool_gather(&x, fixed_idx)?,
                        Some(_) => return Err(FcnError::Shape(format!("pinned pattern does not fit layer {i}"))),
                        None => y,
                    };
                    (y, Gate::Pool(idx))
                }
                LayerSpec::SoftmaxLoss => (x.clone(), Gate::Smooth),
            };
            match cache.as_deref_mut() {
                Some(c) => {
                    c.pools.push(match &gate {
                        Gate::Pool(idx) => Some(idx.clone()),
                        _ => None,
                    });
                    c.inputs.push(std::mem::replace(&mut x, next));
                }
                None => x = next,
            }
            gates.push(gate);
        }
        if x.shape() != [input.batch(), 2, input.height(), input.width()] {
            return Err(FcnError::Shape(format!(
                "network maps input {:?} to {:?}; expected 2 channels at input resolution",
                input.shape(),
                x.shape()
            )));
        }
        Ok((x, ActivationPattern { gates }))
    }

    /// Gradients of every parameter tensor given dLoss/dLogits, aligned with
    /// [`FcnModel::parameters`]. Requires a prior [`FcnModel::forward`].
    pub fn backward(&self, grad_logits: &Tensor) -> Result<Vec<Tensor>, FcnError> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| FcnError::State("backward called before forward".into()))?;
        grad_logits.ensure_shape(cache.output_shape, "loss gradient")?;
        let mut grads: Vec<Tensor> = self.params.iter().map(|t| Tensor::zeros(t.shape())).collect();
        let mut p = self.params.len();
        let mut g = grad_logits.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &cache.inputs[i];
            g = match layer {
                LayerSpec::Conv(spec) | LayerSpec::Deconv(spec) => {
                    p -= 2;
                    let pg = if matches!(layer, LayerSpec::Conv(_)) {
                        conv_backward(input, &self.params[p], &g, spec.geometry())?
                    } else {
                        deconv_backward(input, &self.params[p], &g, spec.geometry())?
                    };
                    grads[p] = pg.grad_weights;
                    grads[p + 1] = Tensor::from_vec(self.params[p + 1].shape(), pg.grad_bias)?;
                    pg.grad_input
                }
                LayerSpec::Relu => relu_backward(input, &g)?,
                LayerSpec::MaxPool { .. } => {
                    let idx = cache.pools[i].as_ref().expect("pool indices cached with the layer");
                    maxpool_backward(idx, &g)?
                }
                LayerSpec::SoftmaxLoss => g,
            };
        }
        Ok(grads)
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

fn validate_architecture(layers: &[LayerSpec]) -> Result<(), FcnError> {
    if layers.is_empty() {
        return Err(FcnError::Architecture("no layers".into()));
    }
    let mut channels: Option<usize> = None;
    for (i, layer) in layers.iter().enumerate() {
        match layer {
            LayerSpec::Conv(spec) | LayerSpec::Deconv(spec) => {
                spec.validate(i)?;
                if let Some(c) = channels {
                    if c != spec.in_channels {
                        return Err(FcnError::Architecture(format!(
                            "layer {i} expects {} input channels but receives {c}",
                            spec.in_channels
                        )));
                    }
                }
                channels = Some(spec.out_channels);
            }
            LayerSpec::MaxPool { window, stride } => {
                if *window == 0 || *stride == 0 {
                    return Err(FcnError::Architecture(format!("layer {i}: pool window and stride must be at least 1")));
                }
            }
            LayerSpec::Relu => {}
            LayerSpec::SoftmaxLoss => {
                if i + 1 != layers.len() {
                    return Err(FcnError::Architecture(format!("layer {i}: softmax loss must be the last layer")));
                }
            }
        }
    }
    match channels {
        Some(2) => Ok(()),
        Some(c) => Err(FcnError::Architecture(format!("final output has {c} channels, expected 2"))),
        // Parameter-free stacks act on two-channel input directly.
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fcn::gradcheck::{gradient_check, random_tensor};
    use crate::fcn::layers::{softmax_pixel_loss, LabelMask};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_model() -> FcnModel {
        let layers = vec![LayerSpec::Conv(ConvSpec::square(1, 2, 2, 1, 0))];
        let w = Tensor::from_vec([2, 2, 1, 1], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        FcnModel::from_parts(layers, vec![w, Tensor::zeros([2, 1, 1, 1])]).unwrap()
    }

    #[test]
    fn identity_model_reproduces_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_tensor(&mut rng, [2, 2, 5, 3]);
        let mut m = identity_model();
        assert_eq!(m.forward(&x).unwrap(), x);
    }

    #[test]
    fn default_architecture_preserves_resolution() {
        let mut m = FcnModel::with_seed(3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_tensor(&mut rng, [1, 3, 32, 32]);
        let y = m.forward(&x).unwrap();
        assert_eq!(y.shape(), [1, 2, 32, 32]);
        assert!(y.is_finite());
        assert_eq!(m.infer(&x).unwrap(), y);
        // Odd sizes cannot survive the 2× pool/upsample round trip.
        assert!(m.infer(&random_tensor(&mut rng, [1, 3, 9, 9])).is_err());
        assert!(m.infer(&random_tensor(&mut rng, [1, 1, 8, 8])).is_err());
    }

    #[test]
    fn parameters_start_single_precision_with_zero_bias() {
        let m = FcnModel::with_seed(5);
        assert_eq!(m.parameters().len(), 8);
        for (i, p) in m.parameters().iter().enumerate() {
            assert!(p.data().iter().all(|&v| f64::from(v as f32) == v));
            if i % 2 == 1 {
                assert_eq!(p.max_abs(), 0.0);
            }
        }
        let conv1 = &m.parameters()[0];
        let n = conv1.len() as f64;
        let var = conv1.data().iter().map(|v| v * v).sum::<f64>() / n;
        let expected = 2.0 / 27.0;
        assert!((var - expected).abs() < 0.35 * expected, "variance {var}");
    }

    #[test]
    fn rejects_incompatible_architectures() {
        let bad_channels = vec![
            LayerSpec::Conv(ConvSpec::square(3, 3, 8, 1, 1)),
            LayerSpec::Conv(ConvSpec::square(1, 4, 2, 1, 0)),
        ];
        assert!(matches!(FcnModel::from_parts(bad_channels, vec![]), Err(FcnError::Architecture(_))));
        let three_out = vec![LayerSpec::Conv(ConvSpec::square(1, 3, 3, 1, 0))];
        assert!(FcnModel::from_parts(three_out, vec![]).is_err());
        let zero_stride = vec![LayerSpec::Conv(ConvSpec::square(1, 3, 2, 0, 0))];
        assert!(FcnModel::from_parts(zero_stride, vec![]).is_err());
        let loss_first = vec![LayerSpec::SoftmaxLoss, LayerSpec::Conv(ConvSpec::square(1, 3, 2, 1, 0))];
        assert!(FcnModel::from_parts(loss_first, vec![]).is_err());
    }

    #[test]
    fn backward_requires_forward() {
        let m = identity_model();
        let err = m.backward(&Tensor::zeros([1, 2, 2, 2])).unwrap_err();
        assert!(matches!(err, FcnError::State(_)));
    }

    #[test]
    fn zero_loss_gradient_gives_zero_parameter_gradients() {
        let mut m = FcnModel::with_seed(4);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_tensor(&mut rng, [1, 3, 8, 8]);
        let y = m.forward(&x).unwrap();
        let grads = m.backward(&Tensor::zeros(y.shape())).unwrap();
        assert_eq!(grads.len(), m.parameters().len());
        assert!(grads.iter().all(|g| g.max_abs() == 0.0));
        assert!(m.backward(&Tensor::zeros([1, 2, 4, 4])).is_err());
    }

    #[test]
    fn gradients_are_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random_tensor(&mut rng, [2, 3, 8, 8]);
        let labels = LabelMask::new(2, 8, 8, (0..128).map(|i| (i % 5 == 0) as u8).collect()).unwrap();
        let run = || {
            let mut m = FcnModel::with_seed(9);
            let y = m.forward(&x).unwrap();
            let (_, g) = softmax_pixel_loss(&y, &labels).unwrap();
            m.backward(&g).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn three_layer_model_matches_finite_differences() {
        let layers = vec![
            LayerSpec::Conv(ConvSpec::square(3, 2, 4, 1, 1)),
            LayerSpec::Relu,
            LayerSpec::Conv(ConvSpec::square(3, 4, 3, 2, 1)),
            LayerSpec::Relu,
            LayerSpec::Deconv(ConvSpec::square(2, 3, 2, 2, 0)),
            LayerSpec::SoftmaxLoss,
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut m = FcnModel::new(layers, &mut rng).unwrap();
        for p in m.parameters_mut().iter_mut().skip(1).step_by(2) {
            for v in p.data_mut() {
                *v = 0.05;
            }
        }
        let x = random_tensor(&mut rng, [1, 2, 8, 8]);
        let labels = LabelMask::new(1, 8, 8, (0..64).map(|i| ((i / 8 + i % 8) % 3 == 0) as u8).collect()).unwrap();
        let report = gradient_check(&mut m, &x, &labels, 1e-3, 1e-3).unwrap();
        assert_eq!(report.checks.len(), m.parameter_count());
        assert!(report.passed(), "max rel error {}", report.max_rel_error);
    }
}
