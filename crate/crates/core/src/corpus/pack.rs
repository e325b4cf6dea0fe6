//! Patch pack layout (little-endian):
//!
//! ```text
//! "BPAT" | count u32
//! per sample: label u8 | slide id (len u16 + utf-8) | viewfield u16 | top u16 | left u16 | 1200 bytes RGB
//! ```

use super::{CorpusError, Label, PatchOrigin, PatchSample};
use crate::binfmt::{FormatError, Reader, Writer};
use crate::micronet::{PATCH_CHANNELS, PATCH_SIZE};
use crate::tensor::Tensor;

pub const PACK_MAGIC: &[u8; 4] = b"BPAT";
const PATCH_BYTES: usize = PATCH_SIZE * PATCH_SIZE * PATCH_CHANNELS;

fn u16_field(v: usize, what: &str) -> Result<u16, CorpusError> {
    u16::try_from(v).map_err(|_| CorpusError::Layout(format!("{what} {v} does not fit in u16")))
}

pub fn write_pack(samples: &[PatchSample]) -> Result<Vec<u8>, CorpusError> {
    let mut w = Writer::default();
    w.bytes(PACK_MAGIC);
    w.u32(u32::try_from(samples.len()).map_err(|_| CorpusError::Layout("too many samples".into()))?);
    for s in samples {
        if s.pixels.shape() != [PATCH_SIZE, PATCH_SIZE, PATCH_CHANNELS] {
            return Err(CorpusError::Layout(format!(
                "patch shape {:?} is not 20x20x3",
                s.pixels.shape()
            )));
        }
        w.u8(s.label.index() as u8);
        let id = s.origin.slide_id.as_bytes();
        w.u16(u16_field(id.len(), "slide id length")?);
        w.bytes(id);
        w.u16(u16_field(s.origin.viewfield, "viewfield index")?);
        w.u16(u16_field(s.origin.top, "top")?);
        w.u16(u16_field(s.origin.left, "left")?);
        for &v in s.pixels.data() {
            w.u8(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    Ok(w.buf)
}

pub fn read_pack(bytes: &[u8]) -> Result<Vec<PatchSample>, CorpusError> {
    let mut r = Reader::new(bytes);
    r.magic(PACK_MAGIC)?;
    let count = r.u32("sample count")? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for i in 0..count {
        let at = r.offset();
        let label = match r.u8("label")? {
            0 => Label::Negative,
            1 => Label::Positive,
            other => return Err(FormatError::new(at, format!("sample {i}: invalid label {other}")).into()),
        };
        let len = r.u16("slide id length")? as usize;
        let at = r.offset();
        let slide_id = std::str::from_utf8(r.bytes(len, "slide id")?)
            .map_err(|e| FormatError::new(at, format!("slide id is not utf-8: {e}")))?
            .to_string();
        let viewfield = r.u16("viewfield index")? as usize;
        let top = r.u16("top")? as usize;
        let left = r.u16("left")? as usize;
        let raw = r.bytes(PATCH_BYTES, "patch pixels")?;
        out.push(PatchSample {
            pixels: Tensor::from_vec(
                &[PATCH_SIZE, PATCH_SIZE, PATCH_CHANNELS],
                raw.iter().map(|&b| b as f32).collect(),
            )?,
            label,
            origin: PatchOrigin {
                slide_id,
                viewfield,
                top,
                left,
            },
        });
    }
    r.finish()?;
    Ok(out)
}
