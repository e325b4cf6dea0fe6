//! Model file layout (all integers and reals little-endian):
//!
//! ```text
//! "BSCN" | version u16 | layer count u8
//! per layer: kh u16 | kw u16 | in_c u16 | out_c u16 | stride u16 | relu u8
//! normalization tag u8 | seed u64
//! per layer: weights f32[kh*kw*in_c*out_c] ([dy,dx,in,out] row-major) | biases f32[out_c]
//! ```

use super::{ConvLayerSpec, NetError, NetworkModel, Normalization};
use crate::binfmt::{FormatError, Reader, Writer};
use crate::tensor::Tensor;

pub const MODEL_MAGIC: &[u8; 4] = b"BSCN";
pub const MODEL_VERSION: u16 = 1;

pub(super) fn encode(model: &NetworkModel) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(MODEL_MAGIC);
    w.u16(MODEL_VERSION);
    w.u8(model.layers.len() as u8);
    for l in &model.layers {
        for v in [l.kernel_h, l.kernel_w, l.in_channels, l.out_channels, l.stride] {
            w.u16(v as u16);
        }
        w.u8(l.has_relu as u8);
    }
    w.u8(model.normalization.tag());
    w.u64(model.seed);
    for (wt, b) in model.weights.iter().zip(&model.biases) {
        w.f32_slice(wt.data());
        w.f32_slice(b.data());
    }
    w.buf
}

pub(super) fn decode(bytes: &[u8]) -> Result<NetworkModel, NetError> {
    let mut r = Reader::new(bytes);
    r.magic(MODEL_MAGIC)?;
    let at = r.offset();
    let version = r.u16("version")?;
    if version != MODEL_VERSION {
        return Err(FormatError::new(
            at,
            format!("unsupported model version {version}, expected {MODEL_VERSION}"),
        )
        .into());
    }
    let count = r.u8("layer count")? as usize;
    let mut layers = Vec::with_capacity(count);
    for i in 0..count {
        let what = format!("layer {} spec", i + 1);
        let kernel_h = r.u16(&what)? as usize;
        let kernel_w = r.u16(&what)? as usize;
        let in_channels = r.u16(&what)? as usize;
        let out_channels = r.u16(&what)? as usize;
        let stride = r.u16(&what)? as usize;
        let at = r.offset();
        let has_relu = match r.u8(&what)? {
            0 => false,
            1 => true,
            other => {
                return Err(FormatError::new(at, format!("invalid relu flag {other}")).into())
            }
        };
        layers.push(ConvLayerSpec {
            kernel_h,
            kernel_w,
            in_channels,
            out_channels,
            stride,
            has_relu,
        });
    }
    let at = r.offset();
    let tag = r.u8("normalization tag")?;
    let normalization = Normalization::from_tag(tag)
        .ok_or_else(|| FormatError::new(at, format!("unknown normalization tag {tag}")))?;
    let seed = r.u64("seed")?;
    let mut weights = Vec::with_capacity(count);
    let mut biases = Vec::with_capacity(count);
    for (i, l) in layers.iter().enumerate() {
        let w = r.f32_vec(l.weight_len(), &format!("layer {} weights", i + 1))?;
        let b = r.f32_vec(l.out_channels, &format!("layer {} biases", i + 1))?;
        weights.push(Tensor::from_vec(&l.weight_shape(), w).map_err(|e| FormatError::new(r.offset(), e.to_string()))?);
        biases.push(Tensor::from_vec(&[l.out_channels], b).map_err(|e| FormatError::new(r.offset(), e.to_string()))?);
    }
    r.finish()?;
    NetworkModel::from_parts(layers, weights, biases, seed, normalization)
}
