//! Cascade file layout (little-endian):
//!
//! ```text
//! "BCSC" | version u16 | threshold_1 f32 | threshold_2 f32
//! stage-1 model blob: length u32 | BSCN bytes
//! stage-2 model blob: length u32 | BSCN bytes (length 0 = pass-through)
//! ```

use super::{CascadeError, CascadeModel, Stage2};
use crate::binfmt::{FormatError, Reader, Writer};
use crate::micronet::{NetError, NetworkModel};

pub const CASCADE_MAGIC: &[u8; 4] = b"BCSC";
pub const CASCADE_VERSION: u16 = 1;

pub(super) fn encode(model: &CascadeModel) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(CASCADE_MAGIC);
    w.u16(CASCADE_VERSION);
    w.f32(model.threshold_1);
    w.f32(model.threshold_2);
    let s1 = model.stage1.to_bytes();
    w.u32(s1.len() as u32);
    w.bytes(&s1);
    match &model.stage2 {
        Stage2::Network(m) => {
            let s2 = m.to_bytes();
            w.u32(s2.len() as u32);
            w.bytes(&s2);
        }
        Stage2::PassThrough => w.u32(0),
    }
    w.buf
}

fn embedded(r: &mut Reader, what: &str, len: usize) -> Result<NetworkModel, CascadeError> {
    let start = r.offset();
    let blob = r.bytes(len, what)?;
    NetworkModel::from_bytes(blob).map_err(|e| match e {
        // re-anchor offsets inside the blob to the cascade file
        NetError::Format(f) => FormatError::new(start + f.offset, format!("{what}: {}", f.message)).into(),
        other => CascadeError::Net(other),
    })
}

pub(super) fn decode(bytes: &[u8]) -> Result<CascadeModel, CascadeError> {
    let mut r = Reader::new(bytes);
    r.magic(CASCADE_MAGIC)?;
    let at = r.offset();
    let version = r.u16("version")?;
    if version != CASCADE_VERSION {
        return Err(FormatError::new(
            at,
            format!("unsupported cascade version {version}, expected {CASCADE_VERSION}"),
        )
        .into());
    }
    let threshold_1 = r.f32("threshold_1")?;
    let threshold_2 = r.f32("threshold_2")?;
    let len1 = r.u32("stage-1 length")? as usize;
    if len1 == 0 {
        return Err(FormatError::new(r.offset() - 4, "stage-1 model blob is empty").into());
    }
    let stage1 = embedded(&mut r, "stage-1 model", len1)?;
    let len2 = r.u32("stage-2 length")? as usize;
    let stage2 = if len2 == 0 {
        Stage2::PassThrough
    } else {
        Stage2::Network(embedded(&mut r, "stage-2 model", len2)?)
    };
    r.finish()?;
    CascadeModel::new(stage1, stage2, threshold_1, threshold_2)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cascade(pass: bool) -> CascadeModel {
        let s1 = NetworkModel::with_default_architecture(1, 1.0).unwrap();
        let s2 = if pass {
            Stage2::PassThrough
        } else {
            Stage2::Network(NetworkModel::with_default_architecture(2, 1.0).unwrap())
        };
        CascadeModel::new(s1, s2, 0.5, 0.7).unwrap()
    }

    #[test]
    fn roundtrip_bit_exact() {
        for pass in [false, true] {
            let c = cascade(pass);
            let bytes = c.to_bytes();
            let back = CascadeModel::from_bytes(&bytes).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.to_bytes(), bytes);
        }
    }

    #[test]
    fn header_layout() {
        let c = cascade(true);
        let bytes = c.to_bytes();
        assert_eq!(&bytes[..4], b"BCSC");
        assert_eq!(&bytes[4..6], &CASCADE_VERSION.to_le_bytes());
        assert_eq!(&bytes[6..10], &0.5f32.to_le_bytes());
        assert_eq!(&bytes[10..14], &0.7f32.to_le_bytes());
        let len1 = u32::from_le_bytes(bytes[14..18].try_into().unwrap()) as usize;
        assert_eq!(&bytes[18..22], b"BSCN");
        assert_eq!(&bytes[18 + len1..], &0u32.to_le_bytes());
    }

    #[test]
    fn corruption_located() {
        let bytes = cascade(false).to_bytes();
        let mut bad = bytes.clone();
        bad[2] = 0;
        assert!(matches!(CascadeModel::from_bytes(&bad), Err(CascadeError::Format(e)) if e.offset == 0));

        // corrupt the embedded stage-1 magic
        let mut bad = bytes.clone();
        bad[18] = b'X';
        assert!(matches!(CascadeModel::from_bytes(&bad), Err(CascadeError::Format(e)) if e.offset == 18));

        let cut = &bytes[..bytes.len() / 2];
        match CascadeModel::from_bytes(cut) {
            Err(CascadeError::Format(e)) => {
                assert!(e.message.contains("expected") && e.message.contains("found"), "{e}");
            }
            other => panic!("expected format error, got {other:?}"),
        }

        let mut bad = bytes;
        bad.push(0);
        assert!(matches!(CascadeModel::from_bytes(&bad), Err(CascadeError::Format(_))));
    }
}
