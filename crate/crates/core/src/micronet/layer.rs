use serde::{Deserialize, Serialize};

use super::NetError;
use crate::tensor::{Tensor, TensorError};

/// One valid-padding convolution, optionally followed by ReLU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayerSpec {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub has_relu: bool,
}

impl ConvLayerSpec {
    pub const fn new(kernel: usize, in_channels: usize, out_channels: usize, has_relu: bool) -> Self {
        ConvLayerSpec {
            kernel_h: kernel,
            kernel_w: kernel,
            in_channels,
            out_channels,
            stride: 1,
            has_relu,
        }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if self.kernel_h == 0
            || self.kernel_w == 0
            || self.in_channels == 0
            || self.out_channels == 0
            || self.stride == 0
        {
            return Err(NetError::Architecture(format!(
                "kernel, channel and stride sizes must be at least 1: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.kernel_h, self.kernel_w, self.in_channels, self.out_channels]
    }

    pub fn weight_len(&self) -> usize {
        self.kernel_h * self.kernel_w * self.in_channels * self.out_channels
    }

    pub fn fan_in(&self) -> usize {
        self.kernel_h * self.kernel_w * self.in_channels
    }

    /// Output spatial size for an `h x w` input, `None` if the kernel does not fit.
    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        if h < self.kernel_h || w < self.kernel_w {
            return None;
        }
        Some((
            (h - self.kernel_h) / self.stride + 1,
            (w - self.kernel_w) / self.stride + 1,
        ))
    }
}

/// Upper bound on the im2col scratch, in floats; large inputs are lowered a
/// band of output rows at a time.
const COLS_BUDGET: usize = 1 << 18;

fn rows_per_band(spec: &ConvLayerSpec, ow: usize) -> usize {
    (COLS_BUDGET / (ow * spec.weight_len() / spec.out_channels)).max(1)
}

/// Lowers the receptive fields of output rows `oy0..oy1` into `cols`, one row
/// of `kh * kw * cin` values per output position, in weight order.
fn im2col(spec: &ConvLayerSpec, input: &[f32], w: usize, ow: usize, (oy0, oy1): (usize, usize), cols: &mut Vec<f32>) {
    let cin = spec.in_channels;
    let row_len = spec.kernel_w * cin;
    let s = spec.stride;
    cols.clear();
    for oy in oy0..oy1 {
        for ox in 0..ow {
            for dy in 0..spec.kernel_h {
                let start = ((oy * s + dy) * w + ox * s) * cin;
                cols.extend_from_slice(&input[start..start + row_len]);
            }
        }
    }
}

/// `c = a * b` (`beta` 0) or `c += a * b` (`beta` 1) for row-major operands
/// described by their `(row, col)` strides.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f32], (rsa, csa): (usize, usize), b: &[f32], (rsb, csb): (usize, usize), beta: f32, c: &mut [f32]) {
    assert!(m == 0 || k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    assert!(k == 0 || n == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    assert!(m * n <= c.len());
    // SAFETY: the asserts above keep every strided access inside its slice.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Raw kernel: `out` is `[oh, ow, cout]`, overwritten.
pub(crate) fn conv_kernel(
    spec: &ConvLayerSpec,
    input: &[f32],
    (h, w): (usize, usize),
    weights: &[f32],
    bias: &[f32],
    out: &mut [f32],
) -> (usize, usize) {
    let (oh, ow) = spec.output_hw(h, w).expect("kernel larger than input");
    let cout = spec.out_channels;
    let k = spec.weight_len() / cout;
    debug_assert_eq!(out.len(), oh * ow * cout);
    let band = rows_per_band(spec, ow);
    let mut cols = Vec::with_capacity(band.min(oh) * ow * k);
    for oy0 in (0..oh).step_by(band) {
        let oy1 = (oy0 + band).min(oh);
        im2col(spec, input, w, ow, (oy0, oy1), &mut cols);
        let m = (oy1 - oy0) * ow;
        let dst = &mut out[oy0 * ow * cout..oy1 * ow * cout];
        gemm(m, k, cout, &cols, (k, 1), weights, (cout, 1), 0.0, dst);
        for px in dst.chunks_exact_mut(cout) {
            for (a, &b) in px.iter_mut().zip(bias) {
                *a += b;
                if spec.has_relu && *a < 0.0 {
                    *a = 0.0;
                }
            }
        }
    }
    (oh, ow)
}

/// Backward through one conv layer. `grad_pre` is the loss gradient w.r.t. the
/// pre-activation output. Accumulates into `grad_w`/`grad_b`; writes
/// `grad_input` (overwritten) when given.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward_kernel(
    spec: &ConvLayerSpec,
    input: &[f32],
    (h, w): (usize, usize),
    weights: &[f32],
    grad_pre: &[f32],
    grad_w: &mut [f32],
    grad_b: &mut [f32],
    mut grad_input: Option<&mut [f32]>,
) {
    let (oh, ow) = spec.output_hw(h, w).expect("kernel larger than input");
    let cin = spec.in_channels;
    let cout = spec.out_channels;
    let k = spec.weight_len() / cout;
    let row_len = spec.kernel_w * cin;
    let s = spec.stride;
    for g in grad_pre.chunks_exact(cout) {
        for (b, &gv) in grad_b.iter_mut().zip(g) {
            *b += gv;
        }
    }
    if let Some(gi) = grad_input.as_deref_mut() {
        gi.fill(0.0);
    }
    let band = rows_per_band(spec, ow);
    let mut cols = Vec::with_capacity(band.min(oh) * ow * k);
    let mut dcols = Vec::new();
    for oy0 in (0..oh).step_by(band) {
        let oy1 = (oy0 + band).min(oh);
        let m = (oy1 - oy0) * ow;
        let g = &grad_pre[oy0 * ow * cout..oy1 * ow * cout];
        im2col(spec, input, w, ow, (oy0, oy1), &mut cols);
        // grad_w += cols^T * g
        gemm(k, m, cout, &cols, (1, k), g, (cout, 1), 1.0, grad_w);
        let Some(gi) = grad_input.as_deref_mut() else {
            continue;
        };
        // dcols = g * weights^T, then scattered back onto the input
        dcols.resize(m * k, 0.0);
        gemm(m, cout, k, g, (cout, 1), weights, (1, cout), 0.0, &mut dcols);
        let mut rows = dcols.chunks_exact(k);
        for oy in oy0..oy1 {
            for ox in 0..ow {
                let d = rows.next().expect("one row per position");
                for (dy, part) in d.chunks_exact(row_len).enumerate() {
                    let start = ((oy * s + dy) * w + ox * s) * cin;
                    for (a, &v) in gi[start..start + row_len].iter_mut().zip(part) {
                        *a += v;
                    }
                }
            }
        }
    }
}

/// Valid convolution of an `[H, W, Cin]` tensor with weights `[kh, kw, Cin, Cout]`.
pub fn conv_forward(
    input: &Tensor,
    spec: &ConvLayerSpec,
    weights: &Tensor,
    bias: &Tensor,
) -> Result<Tensor, NetError> {
    spec.validate()?;
    let (h, w, c) = input.hwc()?;
    if c != spec.in_channels {
        return Err(NetError::Tensor(TensorError::ShapeMismatch {
            left: input.shape().to_vec(),
            right: spec.weight_shape().to_vec(),
        }));
    }
    if weights.shape() != spec.weight_shape() {
        return Err(NetError::Tensor(TensorError::ShapeMismatch {
            left: weights.shape().to_vec(),
            right: spec.weight_shape().to_vec(),
        }));
    }
    if bias.shape() != [spec.out_channels] {
        return Err(NetError::Tensor(TensorError::ShapeMismatch {
            left: bias.shape().to_vec(),
            right: vec![spec.out_channels],
        }));
    }
    let (oh, ow) = spec.output_hw(h, w).ok_or_else(|| {
        NetError::Tensor(TensorError::ShapeMismatch {
            left: input.shape().to_vec(),
            right: spec.weight_shape().to_vec(),
        })
    })?;
    let mut out = vec![0.0; oh * ow * spec.out_channels];
    conv_kernel(spec, input.data(), (h, w), weights.data(), bias.data(), &mut out);
    Ok(Tensor::from_vec(&[oh, ow, spec.out_channels], out)?)
}

/// Two-class softmax with max subtraction.
pub fn softmax(logits: [f32; 2]) -> Result<[f32; 2], NetError> {
    if !logits.iter().all(|v| v.is_finite()) {
        return Err(NetError::NonFinite("softmax logits"));
    }
    let m = logits[0].max(logits[1]) as f64;
    let e0 = (logits[0] as f64 - m).exp();
    let e1 = (logits[1] as f64 - m).exp();
    let z = e0 + e1;
    Ok([(e0 / z) as f32, (e1 / z) as f32])
}

pub const LOSS_EPSILON: f64 = 1e-12;

/// `-ln(p[label])` with the probability clamped at [`LOSS_EPSILON`].
pub fn cross_entropy_loss(probs: [f32; 2], label: usize) -> f32 {
    let p = (probs[label] as f64).max(LOSS_EPSILON);
    (-p.ln()) as f32
}
