//! Forward and backward passes of the individual layer families.
//!
//! Every output element is accumulated in a fixed order that does not depend on
//! how the work is split across threads, so results are bitwise reproducible.

use rayon::prelude::*;

use super::FcnError;
use crate::tensor::Tensor;

/// Geometry shared by convolution and transposed convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn new(stride: usize, padding: usize) -> Self {
        Self { stride, padding }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub grad_input: Tensor,
    pub grad_weights: Tensor,
    pub grad_bias: Vec<f64>,
}

/// Output extent of a strided correlation, `None` when it would be empty.
pub fn conv_output_len(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || kernel == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Output extent of a transposed convolution, `None` when it would be empty.
pub fn deconv_output_len(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    if stride == 0 || kernel == 0 || input == 0 {
        return None;
    }
    let full = (input - 1) * stride + kernel;
    full.checked_sub(2 * padding).filter(|&n| n > 0)
}

// Positions i in [0, n) for which i*stride + offset - padding lands in [0, limit).
#[inline]
fn valid_range(n: usize, limit: usize, stride: usize, offset: usize, padding: usize) -> (usize, usize) {
    let lo = if padding > offset { (padding - offset).div_ceil(stride) } else { 0 };
    let reach = limit + padding;
    let hi = if reach > offset { ((reach - offset - 1) / stride + 1).min(n) } else { 0 };
    (lo, hi.max(lo))
}

// out[b,o] = bias[o] + Σ_{c,ky,kx} w[o,c,ky,kx] · in[b,c, y·s+ky−p, x·s+kx−p]
fn correlate(
    input: &Tensor,
    weights: &Tensor,
    bias: Option<&[f64]>,
    geom: ConvGeometry,
    out_h: usize,
    out_w: usize,
) -> Tensor {
    let [batch, in_c, h, w] = input.shape();
    let [out_c, _, kh, kw] = weights.shape();
    let (s, p) = (geom.stride, geom.padding);
    let wts = weights.data();
    let mut out = Tensor::zeros([batch, out_c, out_h, out_w]);
    out.data_mut().par_chunks_mut(out_h * out_w).enumerate().for_each(|(bo, plane)| {
        let (b, o) = (bo / out_c, bo % out_c);
        if let Some(bias) = bias {
            plane.fill(bias[o]);
        }
        for c in 0..in_c {
            let src = input.plane(b, c);
            for ky in 0..kh {
                let (y0, y1) = valid_range(out_h, h, s, ky, p);
                for kx in 0..kw {
                    let wv = wts[((o * in_c + c) * kh + ky) * kw + kx];
                    let (x0, x1) = valid_range(out_w, w, s, kx, p);
                    for y in y0..y1 {
                        let row = &src[(y * s + ky - p) * w..];
                        let dst = &mut plane[y * out_w..(y + 1) * out_w];
                        for x in x0..x1 {
                            dst[x] += wv * row[x * s + kx - p];
                        }
                    }
                }
            }
        }
    });
    out
}

// Adjoint of `correlate`: weights laid out (in_c, out_c, kh, kw), scatter-add.
fn scatter(
    input: &Tensor,
    weights: &Tensor,
    bias: Option<&[f64]>,
    geom: ConvGeometry,
    out_h: usize,
    out_w: usize,
) -> Tensor {
    let [batch, in_c, h, w] = input.shape();
    let [_, out_c, kh, kw] = weights.shape();
    let (s, p) = (geom.stride, geom.padding);
    let wts = weights.data();
    let mut out = Tensor::zeros([batch, out_c, out_h, out_w]);
    out.data_mut().par_chunks_mut(out_h * out_w).enumerate().for_each(|(bo, plane)| {
        let (b, o) = (bo / out_c, bo % out_c);
        if let Some(bias) = bias {
            plane.fill(bias[o]);
        }
        for c in 0..in_c {
            let src = input.plane(b, c);
            for ky in 0..kh {
                let (y0, y1) = valid_range(h, out_h, s, ky, p);
                for kx in 0..kw {
                    let wv = wts[((c * out_c + o) * kh + ky) * kw + kx];
                    let (x0, x1) = valid_range(w, out_w, s, kx, p);
                    for y in y0..y1 {
                        let row = &src[y * w..(y + 1) * w];
                        let dst = &mut plane[(y * s + ky - p) * out_w..];
                        for x in x0..x1 {
                            dst[x * s + kx - p] += wv * row[x];
                        }
                    }
                }
            }
        }
    });
    out
}

// g[o,c,ky,kx] = Σ_{n,y,x} outer[n,o,y,x] · inner[n,c, y·s+ky−p, x·s+kx−p]
// `outer` is the map indexed at unit stride; `inner` is the strided one.
fn kernel_gradient(outer: &Tensor, inner: &Tensor, geom: ConvGeometry, kh: usize, kw: usize) -> Tensor {
    let [batch, oc, oh, ow] = outer.shape();
    let [_, ic, h, w] = inner.shape();
    let (s, p) = (geom.stride, geom.padding);
    let mut grad = Tensor::zeros([oc, ic, kh, kw]);
    grad.data_mut().par_chunks_mut(kh * kw).enumerate().for_each(|(idx, cell)| {
        let (o, c) = (idx / ic, idx % ic);
        for ky in 0..kh {
            let (y0, y1) = valid_range(oh, h, s, ky, p);
            for kx in 0..kw {
                let (x0, x1) = valid_range(ow, w, s, kx, p);
                let mut acc = 0.0;
                for b in 0..batch {
                    let g = outer.plane(b, o);
                    let src = inner.plane(b, c);
                    for y in y0..y1 {
                        let grow = &g[y * ow..(y + 1) * ow];
                        let srow = &src[(y * s + ky - p) * w..];
                        for x in x0..x1 {
                            acc += grow[x] * srow[x * s + kx - p];
                        }
                    }
                }
                cell[ky * kw + kx] = acc;
            }
        }
    });
    grad
}

fn channel_sums(t: &Tensor) -> Vec<f64> {
    let [batch, c, _, _] = t.shape();
    (0..c)
        .map(|ch| (0..batch).map(|b| t.plane(b, ch).iter().sum::<f64>()).sum())
        .collect()
}

fn check_bias(bias: &[f64], channels: usize) -> Result<(), FcnError> {
    if bias.len() != channels {
        return Err(FcnError::Shape(format!("bias has {} entries, expected {channels}", bias.len())));
    }
    Ok(())
}

fn check_kernel(weights: &Tensor) -> Result<(), FcnError> {
    if weights.shape().contains(&0) {
        return Err(FcnError::Shape(format!("kernel dimensions must be positive, got {:?}", weights.shape())));
    }
    Ok(())
}

fn check_stride(geom: ConvGeometry) -> Result<(), FcnError> {
    if geom.stride == 0 {
        return Err(FcnError::Shape("stride must be at least 1".into()));
    }
    Ok(())
}

/// Zero-padded strided cross-correlation. `weights` is (out_c, in_c, kh, kw).
pub fn conv_forward(input: &Tensor, weights: &Tensor, bias: &[f64], geom: ConvGeometry) -> Result<Tensor, FcnError> {
    check_kernel(weights)?;
    check_stride(geom)?;
    let [_, in_c, h, w] = input.shape();
    let [out_c, w_in, kh, kw] = weights.shape();
    if in_c != w_in {
        return Err(FcnError::Shape(format!("conv expects {w_in} input channels, got {in_c}")));
    }
    check_bias(bias, out_c)?;
    let (oh, ow) = match (
        conv_output_len(h, kh, geom.stride, geom.padding),
        conv_output_len(w, kw, geom.stride, geom.padding),
    ) {
        (Some(oh), Some(ow)) => (oh, ow),
        _ => {
            return Err(FcnError::Shape(format!(
                "conv of {h}x{w} input with {kh}x{kw} kernel, {geom:?} has no output"
            )))
        }
    };
    Ok(correlate(input, weights, Some(bias), geom, oh, ow))
}

pub fn conv_backward(
    input: &Tensor,
    weights: &Tensor,
    grad_out: &Tensor,
    geom: ConvGeometry,
) -> Result<ParamGrads, FcnError> {
    check_kernel(weights)?;
    check_stride(geom)?;
    let [batch, in_c, h, w] = input.shape();
    let [out_c, w_in, kh, kw] = weights.shape();
    if in_c != w_in {
        return Err(FcnError::Shape(format!("conv expects {w_in} input channels, got {in_c}")));
    }
    let oh = conv_output_len(h, kh, geom.stride, geom.padding);
    let ow = conv_output_len(w, kw, geom.stride, geom.padding);
    match (oh, ow) {
        (Some(oh), Some(ow)) => grad_out.ensure_shape([batch, out_c, oh, ow], "conv grad_out")?,
        _ => return Err(FcnError::Shape("conv backward on an input with no output".into())),
    }
    Ok(ParamGrads {
        grad_input: scatter(grad_out, weights, None, geom, h, w),
        grad_weights: kernel_gradient(grad_out, input, geom, kh, kw),
        grad_bias: channel_sums(grad_out),
    })
}

pub fn relu_forward(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    for v in out.data_mut() {
        *v = v.max(0.0);
    }
    out
}

/// Passes the gradient where the input is strictly positive.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor, FcnError> {
    grad_out.ensure_shape(input.shape(), "relu grad_out")?;
    let mut grad = grad_out.clone();
    for (g, &x) in grad.data_mut().iter_mut().zip(input.data()) {
        if x <= 0.0 {
            *g = 0.0;
        }
    }
    Ok(grad)
}

/// Argmax bookkeeping from a max-pool forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolIndices {
    input_shape: [usize; 4],
    output_shape: [usize; 4],
    // Flat input index of the winning cell, one per output element.
    argmax: Vec<usize>,
}

impl PoolIndices {
    pub fn input_shape(&self) -> [usize; 4] {
        self.input_shape
    }

    pub fn output_shape(&self) -> [usize; 4] {
        self.output_shape
    }

    pub fn argmax(&self) -> &[usize] {
        &self.argmax
    }
}

/// Max over `window × window` cells; ties go to the first cell in row-major order.
pub fn maxpool_forward(input: &Tensor, window: usize, stride: usize) -> Result<(Tensor, PoolIndices), FcnError> {
    if window == 0 || stride == 0 {
        return Err(FcnError::Shape("pool window and stride must be at least 1".into()));
    }
    let [batch, c, h, w] = input.shape();
    if window > h || window > w {
        return Err(FcnError::Shape(format!("pool window {window} larger than {h}x{w} input")));
    }
    let (oh, ow) = ((h - window) / stride + 1, (w - window) / stride + 1);
    let plane_len = oh * ow;
    let mut out = Tensor::zeros([batch, c, oh, ow]);
    let mut argmax = vec![0usize; batch * c * plane_len];
    out.data_mut()
        .par_chunks_mut(plane_len)
        .zip(argmax.par_chunks_mut(plane_len))
        .enumerate()
        .for_each(|(bc, (vals, idxs))| {
            let src = &input.data()[bc * h * w..(bc + 1) * h * w];
            for y in 0..oh {
                for x in 0..ow {
                    let mut best = y * stride * w + x * stride;
                    for dy in 0..window {
                        for dx in 0..window {
                            let i = (y * stride + dy) * w + x * stride + dx;
                            if src[i] > src[best] {
                                best = i;
                            }
                        }
                    }
                    vals[y * ow + x] = src[best];
                    idxs[y * ow + x] = bc * h * w + best;
                }
            }
        });
    let indices = PoolIndices { input_shape: input.shape(), output_shape: out.shape(), argmax };
    Ok((out, indices))
}

pub fn maxpool_backward(indices: &PoolIndices, grad_out: &Tensor) -> Result<Tensor, FcnError> {
    grad_out.ensure_shape(indices.output_shape, "maxpool grad_out (stale indices?)")?;
    let mut grad = Tensor::zeros(indices.input_shape);
    let dst = grad.data_mut();
    for (&i, &g) in indices.argmax.iter().zip(grad_out.data()) {
        dst[i] += g;
    }
    Ok(grad)
}

/// Max-pool forward with winners fixed by earlier `indices`.
pub fn maxpool_gather(input: &Tensor, indices: &PoolIndices) -> Result<Tensor, FcnError> {
    input.ensure_shape(indices.input_shape, "maxpool input (stale indices?)")?;
    let data = indices.argmax.iter().map(|&i| input.data()[i]).collect();
    Tensor::from_vec(indices.output_shape, data)
}

/// Transposed convolution. `weights` is (in_c, out_c, kh, kw).
pub fn deconv_forward(input: &Tensor, weights: &Tensor, bias: &[f64], geom: ConvGeometry) -> Result<Tensor, FcnError> {
    check_kernel(weights)?;
    check_stride(geom)?;
    let [_, in_c, h, w] = input.shape();
    let [w_in, out_c, kh, kw] = weights.shape();
    if in_c != w_in {
        return Err(FcnError::Shape(format!("deconv expects {w_in} input channels, got {in_c}")));
    }
    check_bias(bias, out_c)?;
    let (oh, ow) = match (
        deconv_output_len(h, kh, geom.stride, geom.padding),
        deconv_output_len(w, kw, geom.stride, geom.padding),
    ) {
        (Some(oh), Some(ow)) => (oh, ow),
        _ => {
            return Err(FcnError::Shape(format!(
                "deconv of {h}x{w} input with {kh}x{kw} kernel, {geom:?} has no output"
            )))
        }
    };
    Ok(scatter(input, weights, Some(bias), geom, oh, ow))
}

pub fn deconv_backward(
    input: &Tensor,
    weights: &Tensor,
    grad_out: &Tensor,
    geom: ConvGeometry,
) -> Result<ParamGrads, FcnError> {
    check_kernel(weights)?;
    check_stride(geom)?;
    let [batch, in_c, h, w] = input.shape();
    let [w_in, out_c, kh, kw] = weights.shape();
    if in_c != w_in {
        return Err(FcnError::Shape(format!("deconv expects {w_in} input channels, got {in_c}")));
    }
    let oh = deconv_output_len(h, kh, geom.stride, geom.padding);
    let ow = deconv_output_len(w, kw, geom.stride, geom.padding);
    match (oh, ow) {
        (Some(oh), Some(ow)) => grad_out.ensure_shape([batch, out_c, oh, ow], "deconv grad_out")?,
        _ => return Err(FcnError::Shape("deconv backward on an input with no output".into())),
    }
    Ok(ParamGrads {
        grad_input: correlate(grad_out, weights, None, geom, h, w),
        grad_weights: kernel_gradient(input, grad_out, geom, kh, kw),
        grad_bias: channel_sums(grad_out),
    })
}

/// Per-pixel class labels, 0 = background, 1 = foreground.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    batch: usize,
    height: usize,
    width: usize,
    values: Vec<u8>,
}

impl LabelMask {
    pub fn new(batch: usize, height: usize, width: usize, values: Vec<u8>) -> Result<Self, FcnError> {
        if values.len() != batch * height * width {
            return Err(FcnError::Shape(format!(
                "{} labels cannot fill ({batch}, {height}, {width})",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|&&v| v > 1) {
            return Err(FcnError::Shape(format!("label {v} is not a class index in {{0, 1}}")));
        }
        Ok(Self { batch, height, width, values })
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.batch, self.height, self.width]
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn stack(items: &[&LabelMask]) -> Result<LabelMask, FcnError> {
        let first = items.first().ok_or_else(|| FcnError::Shape("cannot stack zero label masks".into()))?;
        let mut values = Vec::new();
        let mut batch = 0;
        for m in items {
            if (m.height, m.width) != (first.height, first.width) {
                return Err(FcnError::Shape("cannot stack label masks of different sizes".into()));
            }
            batch += m.batch;
            values.extend_from_slice(&m.values);
        }
        Ok(LabelMask { batch, height: first.height, width: first.width, values })
    }
}

/// Mean per-pixel softmax cross-entropy over a two-channel logit map.
///
/// Returns the loss and its gradient with respect to the logits,
/// `(softmax − onehot) / pixel_count`.
pub fn softmax_pixel_loss(logits: &Tensor, labels: &LabelMask) -> Result<(f64, Tensor), FcnError> {
    let [batch, c, h, w] = logits.shape();
    if c != 2 {
        return Err(FcnError::Shape(format!("loss expects 2 logit channels, got {c}")));
    }
    if labels.shape() != [batch, h, w] {
        return Err(FcnError::Shape(format!(
            "labels {:?} do not match logits {:?}",
            labels.shape(),
            logits.shape()
        )));
    }
    let pixels = batch * h * w;
    let scale = 1.0 / pixels as f64;
    let mut grad = Tensor::zeros(logits.shape());
    let mut total = 0.0;
    for b in 0..batch {
        for i in 0..h * w {
            let (y, x) = (i / w, i % w);
            let z0 = logits.get(b, 0, y, x);
            let z1 = logits.get(b, 1, y, x);
            let m = z0.max(z1);
            let (e0, e1) = ((z0 - m).exp(), (z1 - m).exp());
            let sum = e0 + e1;
            let label = labels.values[b * h * w + i];
            let z_label = if label == 1 { z1 } else { z0 };
            // One of e0, e1 is exactly 1.
            let log_sum = if z0 >= z1 { e1.ln_1p() } else { e0.ln_1p() };
            total += (m - z_label) + log_sum;
            let (p0, p1) = (e0 / sum, e1 / sum);
            let (t0, t1) = if label == 1 { (0.0, 1.0) } else { (1.0, 0.0) };
            grad.set(b, 0, y, x, (p0 - t0) * scale);
            grad.set(b, 1, y, x, (p1 - t1) * scale);
        }
    }
    Ok((total * scale, grad))
}

/// Foreground probability `softmax(z)[1]` at every pixel of a two-channel map.
pub fn foreground_probability(logits: &Tensor) -> Result<Tensor, FcnError> {
    let [batch, c, h, w] = logits.shape();
    if c != 2 {
        return Err(FcnError::Shape(format!("expected 2 logit channels, got {c}")));
    }
    let mut out = Tensor::zeros([batch, 1, h, w]);
    for b in 0..batch {
        for y in 0..h {
            for x in 0..w {
                let d = logits.get(b, 0, y, x) - logits.get(b, 1, y, x);
                // σ(z1 − z0)
                out.set(b, 0, y, x, 1.0 / (1.0 + d.exp()));
            }
        }
    }
    Ok(out)
}
