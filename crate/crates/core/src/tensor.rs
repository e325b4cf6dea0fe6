//! Dense row-major tensors of `f32`.
//!
//! Images use the channels-last layout `[H, W, C]`; conv weights use
//! `[kh, kw, in, out]`. There is no broadcasting: every binary operation
//! requires identical shapes.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("invalid shape {0:?}: every dimension must be at least 1")]
    InvalidShape(Vec<usize>),
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },
    #[error("data length {len} does not match shape {shape:?}")]
    LengthMismatch { shape: Vec<usize>, len: usize },
    #[error("window {h}x{w} at ({top}, {left}) exceeds image {height}x{width}")]
    OutOfBounds {
        top: usize,
        left: usize,
        h: usize,
        w: usize,
        height: usize,
        width: usize,
    },
    #[error("expected a rank-{expected} tensor, got shape {shape:?}")]
    Rank { expected: usize, shape: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

fn check_shape(shape: &[usize]) -> Result<usize, TensorError> {
    if shape.is_empty() || shape.iter().any(|&d| d == 0) {
        return Err(TensorError::InvalidShape(shape.to_vec()));
    }
    Ok(shape.iter().product())
}

impl Tensor {
    pub fn new(shape: &[usize], fill: f32) -> Result<Self, TensorError> {
        let len = check_shape(shape)?;
        Ok(Tensor {
            shape: shape.to_vec(),
            data: vec![fill; len],
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self, TensorError> {
        Self::new(shape, 0.0)
    }

    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Result<Self, TensorError> {
        let len = check_shape(shape)?;
        if len != data.len() {
            return Err(TensorError::LengthMismatch {
                shape: shape.to_vec(),
                len: data.len(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Flat row-major offset of a multi-index. Panics on rank or bounds errors.
    pub fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank mismatch");
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &d)| {
                assert!(i < d, "index {i} out of bounds for dimension {d}");
                acc * d + i
            })
    }

    pub fn get(&self, index: &[usize]) -> f32 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f32) {
        let off = self.offset(index);
        self.data[off] = value;
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip(&self, other: &Tensor, f: impl Fn(f32, f32) -> f32) -> Result<Tensor, TensorError> {
        self.same_shape(other)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// In-place `self += scale * other`; used by the optimizer.
    pub fn add_scaled(&mut self, other: &Tensor, scale: f32) -> Result<(), TensorError> {
        self.same_shape(other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn fill(&mut self, value: f32) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    fn same_shape(&self, other: &Tensor) -> Result<(), TensorError> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch {
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(())
    }

    /// `(H, W, C)` of a rank-3 image tensor.
    pub fn hwc(&self) -> Result<(usize, usize, usize), TensorError> {
        match self.shape[..] {
            [h, w, c] => Ok((h, w, c)),
            _ => Err(TensorError::Rank {
                expected: 3,
                shape: self.shape.clone(),
            }),
        }
    }

    /// Copies the `h x w` window at `(top, left)` out of an `[H, W, C]` image.
    pub fn slice_patch(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Tensor, TensorError> {
        let (height, width, c) = self.hwc()?;
        if h == 0 || w == 0 || top + h > height || left + w > width {
            return Err(TensorError::OutOfBounds {
                top,
                left,
                h,
                w,
                height,
                width,
            });
        }
        let mut data = Vec::with_capacity(h * w * c);
        for y in top..top + h {
            let start = (y * width + left) * c;
            data.extend_from_slice(&self.data[start..start + w * c]);
        }
        Ok(Tensor {
            shape: vec![h, w, c],
            data,
        })
    }

    /// Writes `patch` back into this image at `(top, left)`.
    pub fn embed_patch(&mut self, patch: &Tensor, top: usize, left: usize) -> Result<(), TensorError> {
        let (height, width, c) = self.hwc()?;
        let (h, w, pc) = patch.hwc()?;
        if pc != c {
            return Err(TensorError::ShapeMismatch {
                left: self.shape.clone(),
                right: patch.shape.clone(),
            });
        }
        if top + h > height || left + w > width {
            return Err(TensorError::OutOfBounds {
                top,
                left,
                h,
                w,
                height,
                width,
            });
        }
        for y in 0..h {
            let dst = ((top + y) * width + left) * c;
            let src = y * w * c;
            self.data[dst..dst + w * c].copy_from_slice(&patch.data[src..src + w * c]);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(h: usize, w: usize, c: usize) -> Tensor {
        Tensor::from_vec(&[h, w, c], (0..h * w * c).map(|v| v as f32).collect()).unwrap()
    }

    #[test]
    fn new_fills() {
        assert_eq!(Tensor::new(&[2, 2], 0.0).unwrap().data(), &[0.0; 4]);
        assert_eq!(Tensor::new(&[1], 3.5).unwrap().data(), &[3.5]);
        assert_eq!(
            Tensor::new(&[3, 0], 1.0),
            Err(TensorError::InvalidShape(vec![3, 0]))
        );
        assert!(Tensor::new(&[], 1.0).is_err());
    }

    #[test]
    fn map_and_zip() {
        let t = Tensor::from_vec(&[3], vec![1.0, -2.0, 3.0]).unwrap();
        assert_eq!(t.map(f32::abs).data(), &[1.0, 2.0, 3.0]);
        let a = Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::from_vec(&[2], vec![3.0, 4.0]).unwrap();
        assert_eq!(a.zip(&b, |x, y| x + y).unwrap().data(), &[4.0, 6.0]);
        let c = Tensor::new(&[3], 0.0).unwrap();
        assert!(matches!(
            a.zip(&c, |x, y| x + y),
            Err(TensorError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn row_major_offsets() {
        let t = ramp(3, 4, 1);
        for i in 0..3 {
            for j in 0..4 {
                assert_eq!(t.get(&[i, j, 0]), (i * 4 + j) as f32);
            }
        }
    }

    #[test]
    fn slice_examples() {
        let img = ramp(4, 4, 1);
        let p = img.slice_patch(1, 1, 2, 2).unwrap();
        assert_eq!(p.shape(), &[2, 2, 1]);
        assert_eq!(p.data(), &[5.0, 6.0, 9.0, 10.0]);
        assert_eq!(img.slice_patch(0, 0, 4, 4).unwrap(), img);
        assert!(matches!(
            img.slice_patch(3, 3, 2, 2),
            Err(TensorError::OutOfBounds { .. })
        ));
    }

    #[test]
    fn slice_preserves_channels() {
        let img = ramp(3, 3, 3);
        let p = img.slice_patch(1, 2, 1, 1).unwrap();
        assert_eq!(p.data(), &[15.0, 16.0, 17.0]);
    }

    proptest! {
        #[test]
        fn map_identity_is_bit_exact(v in proptest::collection::vec(any::<f32>(), 1..64)) {
            let t = Tensor::from_vec(&[v.len()], v.clone()).unwrap();
            let m = t.map(|x| x);
            for (a, b) in t.data().iter().zip(m.data()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }

        #[test]
        fn slice_then_embed_roundtrips(
            (h, w, c, top, left, ph, pw) in (1usize..12, 1usize..12, 1usize..4)
                .prop_flat_map(|(h, w, c)| (Just(h), Just(w), Just(c), 0..h, 0..w))
                .prop_flat_map(|(h, w, c, t, l)| (Just(h), Just(w), Just(c), Just(t), Just(l), 1..=h - t, 1..=w - l))
        ) {
            let img = ramp(h, w, c);
            let patch = img.slice_patch(top, left, ph, pw).unwrap();
            let mut blank = Tensor::new(&[h, w, c], -1.0).unwrap();
            blank.embed_patch(&patch, top, left).unwrap();
            for y in 0..h {
                for x in 0..w {
                    for k in 0..c {
                        let inside = y >= top && y < top + ph && x >= left && x < left + pw;
                        let expected = if inside { img.get(&[y, x, k]) } else { -1.0 };
                        prop_assert_eq!(blank.get(&[y, x, k]), expected);
                    }
                }
            }
        }
    }
}
