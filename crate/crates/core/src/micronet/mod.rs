//! Small fully-convolutional binary classifier over 20x20 RGB patches.
//!
//! The network is a chain of valid-padding convolutions with ReLU on every
//! layer but the last; the last layer collapses the patch to a `1x1x2` logit
//! pair that goes through a two-way softmax. Gradients are derived by hand.

mod format;
mod layer;
mod train;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binfmt::FormatError;
use crate::tensor::{Tensor, TensorError};

pub use format::{MODEL_MAGIC, MODEL_VERSION};
pub use layer::{conv_forward, cross_entropy_loss, softmax, ConvLayerSpec, LOSS_EPSILON};
pub use train::{sgd_train, TrainConfig, TrainOutcome};

/// Patch edge length in pixels.
pub const PATCH_SIZE: usize = 20;
/// Patch channel count (RGB).
pub const PATCH_CHANNELS: usize = 3;
/// Output classes: negative, positive.
pub const NUM_CLASSES: usize = 2;

#[derive(Debug, Error)]
pub enum NetError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid architecture: {0}")]
    Architecture(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("degenerate training data: {0}")]
    DegenerateData(String),
    #[error("model format: {0}")]
    Format(#[from] FormatError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// How byte-scale pixels are mapped to network inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Normalization {
    /// Values passed through unchanged.
    Identity,
    /// `pixel / 255`.
    UnitScale,
    /// `pixel / 127.5 - 1`, i.e. zero-centred on [-1, 1].
    Centered,
}

impl Normalization {
    pub fn tag(self) -> u8 {
        match self {
            Normalization::Identity => 0,
            Normalization::UnitScale => 1,
            Normalization::Centered => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Normalization::Identity),
            1 => Some(Normalization::UnitScale),
            2 => Some(Normalization::Centered),
            _ => None,
        }
    }

    pub fn apply(self, v: f32) -> f32 {
        match self {
            Normalization::Identity => v,
            Normalization::UnitScale => v / 255.0,
            Normalization::Centered => v / 127.5 - 1.0,
        }
    }
}

/// The default five-layer stack: 20 -> 16 -> 12 -> 8 -> 4 -> 1.
pub fn default_architecture() -> Vec<ConvLayerSpec> {
    vec![
        ConvLayerSpec::new(5, 3, 16, true),
        ConvLayerSpec::new(5, 16, 32, true),
        ConvLayerSpec::new(5, 32, 32, true),
        ConvLayerSpec::new(5, 32, 64, true),
        ConvLayerSpec::new(4, 64, 2, false),
    ]
}

/// Checks that `layers` chain channel-wise and map a 20x20x3 patch to 1x1x2,
/// with ReLU on every layer except the last. Returns per-layer input sizes.
pub fn validate_architecture(layers: &[ConvLayerSpec]) -> Result<Vec<(usize, usize)>, NetError> {
    if layers.is_empty() {
        return Err(NetError::Architecture("no layers".into()));
    }
    let mut hw = (PATCH_SIZE, PATCH_SIZE);
    let mut channels = PATCH_CHANNELS;
    let mut sizes = Vec::with_capacity(layers.len());
    for (i, l) in layers.iter().enumerate() {
        l.validate()?;
        if l.in_channels != channels {
            return Err(NetError::Architecture(format!(
                "layer {} expects {} input channels, previous layer gives {}",
                i + 1,
                l.in_channels,
                channels
            )));
        }
        let last = i + 1 == layers.len();
        if l.has_relu == last {
            return Err(NetError::Architecture(format!(
                "layer {} must {}have ReLU",
                i + 1,
                if last { "not " } else { "" }
            )));
        }
        sizes.push(hw);
        hw = l.output_hw(hw.0, hw.1).ok_or_else(|| {
            NetError::Architecture(format!(
                "layer {} kernel {}x{} does not fit a {}x{} input",
                i + 1,
                l.kernel_h,
                l.kernel_w,
                hw.0,
                hw.1
            ))
        })?;
        channels = l.out_channels;
    }
    if hw != (1, 1) || channels != NUM_CLASSES {
        return Err(NetError::Architecture(format!(
            "network maps {PATCH_SIZE}x{PATCH_SIZE}x{PATCH_CHANNELS} to {}x{}x{}, expected 1x1x{NUM_CLASSES}",
            hw.0, hw.1, channels
        )));
    }
    Ok(sizes)
}

/// Parameters of one conv classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    layers: Vec<ConvLayerSpec>,
    weights: Vec<Tensor>,
    biases: Vec<Tensor>,
    seed: u64,
    normalization: Normalization,
    input_sizes: Vec<(usize, usize)>,
}

/// Gradients (or any per-parameter quantity) laid out like a model's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Tensor>,
    pub biases: Vec<Tensor>,
}

impl Gradients {
    pub fn zeros_like(model: &NetworkModel) -> Self {
        Gradients {
            weights: model
                .weights
                .iter()
                .map(|w| Tensor::zeros(w.shape()).unwrap())
                .collect(),
            biases: model
                .biases
                .iter()
                .map(|b| Tensor::zeros(b.shape()).unwrap())
                .collect(),
        }
    }

    fn clear(&mut self) {
        self.weights.iter_mut().for_each(|t| t.fill(0.0));
        self.biases.iter_mut().for_each(|t| t.fill(0.0));
    }
}

/// Positive-class probability of every window of an image, from one dense
/// pass. Entry `(r, c)` belongs to the 20x20 window at `(r * step, c * step)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    pub rows: usize,
    pub cols: usize,
    pub step: usize,
    pub data: Vec<f32>,
}

impl ProbabilityMap {
    pub fn at(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    /// Probability of the window whose top-left corner is `(top, left)`, if
    /// that window lies on the map's grid.
    pub fn window(&self, top: usize, left: usize) -> Option<f32> {
        if top % self.step != 0 || left % self.step != 0 {
            return None;
        }
        let (r, c) = (top / self.step, left / self.step);
        (r < self.rows && c < self.cols).then(|| self.at(r, c))
    }
}

/// Layer outputs kept from a forward pass for backprop.
struct ForwardTrace {
    /// `activations[0]` is the input; `activations[i + 1]` the output of layer `i`.
    activations: Vec<Vec<f32>>,
}

impl NetworkModel {
    /// Seeded uniform fan-in init in `[-s, s]`, `s = scale / sqrt(kh*kw*in)`; zero biases.
    pub fn initialize(layers: Vec<ConvLayerSpec>, seed: u64, weight_init_scale: f32) -> Result<Self, NetError> {
        let input_sizes = validate_architecture(&layers)?;
        if !(weight_init_scale.is_finite() && weight_init_scale >= 0.0) {
            return Err(NetError::Config(format!(
                "weight_init_scale must be finite and non-negative, got {weight_init_scale}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(layers.len());
        let mut biases = Vec::with_capacity(layers.len());
        for l in &layers {
            let bound = weight_init_scale / (l.fan_in() as f32).sqrt();
            let data = (0..l.weight_len())
                .map(|_| (rng.random::<f32>() * 2.0 - 1.0) * bound)
                .collect();
            weights.push(Tensor::from_vec(&l.weight_shape(), data)?);
            biases.push(Tensor::zeros(&[l.out_channels])?);
        }
        Ok(NetworkModel {
            layers,
            weights,
            biases,
            seed,
            normalization: Normalization::Centered,
            input_sizes,
        })
    }

    /// The default five-layer network.
    pub fn with_default_architecture(seed: u64, weight_init_scale: f32) -> Result<Self, NetError> {
        Self::initialize(default_architecture(), seed, weight_init_scale)
    }

    /// Builds a model from explicit parameters, validating every shape.
    pub fn from_parts(
        layers: Vec<ConvLayerSpec>,
        weights: Vec<Tensor>,
        biases: Vec<Tensor>,
        seed: u64,
        normalization: Normalization,
    ) -> Result<Self, NetError> {
        let input_sizes = validate_architecture(&layers)?;
        if weights.len() != layers.len() || biases.len() != layers.len() {
            return Err(NetError::Architecture(format!(
                "{} layers but {} weight and {} bias tensors",
                layers.len(),
                weights.len(),
                biases.len()
            )));
        }
        for ((l, w), b) in layers.iter().zip(&weights).zip(&biases) {
            if w.shape() != l.weight_shape() || b.shape() != [l.out_channels] {
                return Err(NetError::Architecture(format!(
                    "parameter shapes {:?}/{:?} do not match layer {:?}",
                    w.shape(),
                    b.shape(),
                    l
                )));
            }
        }
        Ok(NetworkModel {
            layers,
            weights,
            biases,
            seed,
            normalization,
            input_sizes,
        })
    }

    pub fn layers(&self) -> &[ConvLayerSpec] {
        &self.layers
    }
    pub fn weights(&self) -> &[Tensor] {
        &self.weights
    }
    pub fn biases(&self) -> &[Tensor] {
        &self.biases
    }
    pub fn weights_mut(&mut self) -> &mut [Tensor] {
        &mut self.weights
    }
    pub fn biases_mut(&mut self) -> &mut [Tensor] {
        &mut self.biases
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().chain(&self.biases).map(Tensor::len).sum()
    }

    /// Applies the model's pixel normalization to a byte-scale patch.
    pub fn normalize(&self, raw_patch: &Tensor) -> Tensor {
        let n = self.normalization;
        raw_patch.map(|v| n.apply(v))
    }

    fn check_patch(patch: &Tensor) -> Result<(), NetError> {
        if patch.shape() != [PATCH_SIZE, PATCH_SIZE, PATCH_CHANNELS] {
            return Err(NetError::Tensor(TensorError::ShapeMismatch {
                left: patch.shape().to_vec(),
                right: vec![PATCH_SIZE, PATCH_SIZE, PATCH_CHANNELS],
            }));
        }
        Ok(())
    }

    fn run(&self, patch: &Tensor) -> Result<ForwardTrace, NetError> {
        Self::check_patch(patch)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(patch.data().to_vec());
        for (i, l) in self.layers.iter().enumerate() {
            let (h, w) = self.input_sizes[i];
            let (oh, ow) = l.output_hw(h, w).unwrap();
            let mut out = vec![0.0; oh * ow * l.out_channels];
            layer::conv_kernel(
                l,
                &activations[i],
                (h, w),
                self.weights[i].data(),
                self.biases[i].data(),
                &mut out,
            );
            activations.push(out);
        }
        Ok(ForwardTrace { activations })
    }

    /// Final-layer logits for an already-normalized patch.
    pub fn logits(&self, patch: &Tensor) -> Result<[f32; 2], NetError> {
        let trace = self.run(patch)?;
        let last = trace.activations.last().unwrap();
        Ok([last[0], last[1]])
    }

    /// Class probabilities `[negative, positive]` for a normalized 20x20x3 patch.
    pub fn forward(&self, patch: &Tensor) -> Result<[f32; 2], NetError> {
        softmax(self.logits(patch)?)
    }

    /// Normalizes a byte-scale patch, then runs [`forward`](Self::forward).
    pub fn predict(&self, raw_patch: &Tensor) -> Result<[f32; 2], NetError> {
        self.forward(&self.normalize(raw_patch))
    }

    /// Multiply-accumulates of one forward pass over an `h x w` input.
    pub fn forward_macs(&self, h: usize, w: usize) -> usize {
        let (mut h, mut w) = (h, w);
        let mut total = 0;
        for l in &self.layers {
            let Some((oh, ow)) = l.output_hw(h, w) else {
                return 0;
            };
            total += oh * ow * l.weight_len();
            (h, w) = (oh, ow);
        }
        total
    }

    /// Runs the network convolutionally over a whole byte-scale `[H, W, 3]`
    /// image. Every entry equals, bit for bit, `predict` on the corresponding
    /// window: the per-output accumulation order is the same.
    pub fn probability_map(&self, raw_image: &Tensor) -> Result<ProbabilityMap, NetError> {
        let (h, w, c) = raw_image.hwc()?;
        if c != PATCH_CHANNELS || h < PATCH_SIZE || w < PATCH_SIZE {
            return Err(NetError::Tensor(TensorError::ShapeMismatch {
                left: raw_image.shape().to_vec(),
                right: vec![PATCH_SIZE, PATCH_SIZE, PATCH_CHANNELS],
            }));
        }
        let mut act = self.normalize(raw_image).into_data();
        let (mut ih, mut iw) = (h, w);
        let mut step = 1;
        for (i, l) in self.layers.iter().enumerate() {
            let (oh, ow) = l.output_hw(ih, iw).expect("image at least one patch");
            let mut out = vec![0.0; oh * ow * l.out_channels];
            layer::conv_kernel(l, &act, (ih, iw), self.weights[i].data(), self.biases[i].data(), &mut out);
            act = out;
            (ih, iw) = (oh, ow);
            step *= l.stride;
        }
        let data = act
            .chunks_exact(NUM_CLASSES)
            .map(|z| softmax([z[0], z[1]]).map(|p| p[1]))
            .collect::<Result<_, _>>()?;
        Ok(ProbabilityMap {
            rows: ih,
            cols: iw,
            step,
            data,
        })
    }

    /// Positive probability of every window at `(r * stride, c * stride)` of a
    /// byte-scale image, row-major. Uses one dense pass when that is cheaper
    /// than classifying the windows one by one; the values are identical
    /// either way.
    pub fn tiled_probabilities(&self, raw_image: &Tensor, stride: usize) -> Result<Vec<(usize, usize, f32)>, NetError> {
        assert!(stride >= 1, "stride must be at least 1");
        let (h, w, _) = raw_image.hwc()?;
        if h < PATCH_SIZE || w < PATCH_SIZE {
            return Err(NetError::Tensor(TensorError::ShapeMismatch {
                left: raw_image.shape().to_vec(),
                right: vec![PATCH_SIZE, PATCH_SIZE, PATCH_CHANNELS],
            }));
        }
        let rows = (h - PATCH_SIZE) / stride + 1;
        let cols = (w - PATCH_SIZE) / stride + 1;
        let positions = (0..rows).flat_map(|r| (0..cols).map(move |c| (r * stride, c * stride)));
        let grid_step: usize = self.layers.iter().map(|l| l.stride).product();
        let dense_cheaper = stride % grid_step == 0
            && self.forward_macs(h, w) < rows * cols * self.forward_macs(PATCH_SIZE, PATCH_SIZE);
        if dense_cheaper {
            let map = self.probability_map(raw_image)?;
            Ok(positions
                .map(|(t, l)| (t, l, map.window(t, l).expect("window on grid")))
                .collect())
        } else {
            positions
                .map(|(t, l)| Ok((t, l, self.predict(&raw_image.slice_patch(t, l, PATCH_SIZE, PATCH_SIZE)?)?[1])))
                .collect()
        }
    }

    /// Loss and its gradient w.r.t. every parameter for one normalized patch.
    pub fn backward(&self, patch: &Tensor, label: usize) -> Result<(Gradients, f32), NetError> {
        let mut grads = Gradients::zeros_like(self);
        let loss = self.accumulate_gradients(patch, label, &mut grads)?;
        Ok((grads, loss))
    }

    /// Adds this sample's gradients into `grads` and returns its loss.
    pub(crate) fn accumulate_gradients(
        &self,
        patch: &Tensor,
        label: usize,
        grads: &mut Gradients,
    ) -> Result<f32, NetError> {
        assert!(label < NUM_CLASSES, "label out of range");
        let trace = self.run(patch)?;
        let last = trace.activations.last().unwrap();
        let probs = softmax([last[0], last[1]])?;
        let loss = cross_entropy_loss(probs, label);

        // d(loss)/d(logits) for softmax + cross-entropy.
        let mut grad_pre: Vec<f32> = probs.to_vec();
        grad_pre[label] -= 1.0;

        for i in (0..self.layers.len()).rev() {
            let l = &self.layers[i];
            if l.has_relu {
                for (g, &a) in grad_pre.iter_mut().zip(&trace.activations[i + 1]) {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            let mut grad_in = if i > 0 {
                Some(vec![0.0; trace.activations[i].len()])
            } else {
                None
            };
            layer::conv_backward_kernel(
                l,
                &trace.activations[i],
                self.input_sizes[i],
                self.weights[i].data(),
                &grad_pre,
                grads.weights[i].data_mut(),
                grads.biases[i].data_mut(),
                grad_in.as_deref_mut(),
            );
            if let Some(g) = grad_in {
                grad_pre = g;
            }
        }
        Ok(loss)
    }

    pub(crate) fn apply_update(&mut self, grads: &Gradients, scale: f32) {
        for (w, g) in self.weights.iter_mut().zip(&grads.weights) {
            w.add_scaled(g, scale).unwrap();
        }
        for (b, g) in self.biases.iter_mut().zip(&grads.biases) {
            b.add_scaled(g, scale).unwrap();
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        format::encode(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NetError> {
        format::decode(bytes)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<(), NetError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, NetError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probability_map_matches_windows_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let image = Tensor::from_vec(&[31, 26, 3], (0..31 * 26 * 3).map(|_| rng.random_range(0.0..255.0f32)).collect()).unwrap();
        let mut strided = ConvLayerSpec::new(4, 3, 4, true);
        strided.stride = 4;
        let nets = [
            NetworkModel::with_default_architecture(4, 2.0).unwrap(),
            NetworkModel::initialize(vec![strided, ConvLayerSpec::new(5, 4, 2, false)], 4, 2.0).unwrap(),
        ];
        for (net, step) in nets.iter().zip([1, 4]) {
            let map = net.probability_map(&image).unwrap();
            assert_eq!(map.step, step);
            assert_eq!((map.rows, map.cols), ((31 - 20) / step + 1, (26 - 20) / step + 1));
            for r in 0..map.rows {
                for c in 0..map.cols {
                    let p = net.predict(&image.slice_patch(r * step, c * step, 20, 20).unwrap()).unwrap()[1];
                    assert_eq!(map.at(r, c).to_bits(), p.to_bits());
                }
            }
            assert_eq!(map.window(step, 0), Some(map.at(1, 0)));
            if step > 1 {
                assert_eq!(map.window(1, 0), None);
            }
        }
        assert!(nets[0].probability_map(&Tensor::zeros(&[19, 40, 3]).unwrap()).is_err());
    }

    #[test]
    fn tiled_probabilities_agree_across_paths() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let image = Tensor::from_vec(&[60, 45, 3], (0..60 * 45 * 3).map(|_| rng.random_range(0.0..255.0f32)).collect()).unwrap();
        let net = NetworkModel::with_default_architecture(2, 2.0).unwrap();
        // stride 1 goes dense, stride 20 goes window by window
        for stride in [1, 3, 20] {
            let got = net.tiled_probabilities(&image, stride).unwrap();
            let positions = crate::corpus::tile_positions(60, 45, stride);
            assert_eq!(got.len(), positions.len());
            for ((t, l, p), (et, el)) in got.into_iter().zip(positions) {
                assert_eq!((t, l), (et, el));
                let q = net.predict(&image.slice_patch(t, l, 20, 20).unwrap()).unwrap()[1];
                assert_eq!(p.to_bits(), q.to_bits());
            }
        }
    }

    #[test]
    fn normalization_maps_and_tags() {
        for n in [Normalization::Identity, Normalization::UnitScale, Normalization::Centered] {
            assert_eq!(Normalization::from_tag(n.tag()), Some(n));
        }
        assert_eq!(Normalization::from_tag(3), None);
        assert_eq!(Normalization::UnitScale.apply(255.0), 1.0);
        assert_eq!(Normalization::Centered.apply(0.0), -1.0);
        assert_eq!(Normalization::Centered.apply(255.0), 1.0);
        assert_eq!(Normalization::Identity.apply(17.0), 17.0);
    }

    #[test]
    fn mac_count() {
        let m = NetworkModel::with_default_architecture(0, 1.0).unwrap();
        let expected = 16 * 16 * 75 * 16 + 12 * 12 * 400 * 32 + 8 * 8 * 800 * 32 + 4 * 4 * 800 * 64 + 1024 * 2;
        assert_eq!(m.forward_macs(20, 20), expected);
    }

    fn patch(seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_vec(
            &[PATCH_SIZE, PATCH_SIZE, PATCH_CHANNELS],
            (0..PATCH_SIZE * PATCH_SIZE * PATCH_CHANNELS)
                .map(|_| rng.random::<f32>())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn default_architecture_maps_patch_to_logit_pair() {
        let sizes = validate_architecture(&default_architecture()).unwrap();
        assert_eq!(sizes, vec![(20, 20), (16, 16), (12, 12), (8, 8), (4, 4)]);
        let m = NetworkModel::with_default_architecture(1, 1.0).unwrap();
        assert_eq!(m.layers().len(), 5);
        assert!(m.layers()[..4].iter().all(|l| l.has_relu));
        assert!(!m.layers()[4].has_relu);
        let trace = m.run(&patch(0)).unwrap();
        assert_eq!(trace.activations.last().unwrap().len(), 2);
    }

    #[test]
    fn architecture_violations_rejected() {
        let mut layers = default_architecture();
        layers[4].out_channels = 3;
        assert!(validate_architecture(&layers).is_err());
        let mut layers = default_architecture();
        layers[2].has_relu = false;
        assert!(validate_architecture(&layers).is_err());
        let mut layers = default_architecture();
        layers[4].has_relu = true;
        assert!(validate_architecture(&layers).is_err());
        let mut layers = default_architecture();
        layers[1].kernel_h = 3;
        assert!(validate_architecture(&layers).is_err());
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let m = NetworkModel::with_default_architecture(3, 1.0).unwrap();
        for (l, w) in m.layers().iter().zip(m.weights()) {
            let bound = 1.0 / (l.fan_in() as f32).sqrt();
            assert!(w.data().iter().all(|v| v.abs() <= bound));
        }
        assert!(m.biases().iter().all(|b| b.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn zero_network_is_indifferent() {
        let m = NetworkModel::with_default_architecture(0, 0.0).unwrap();
        let p = Tensor::zeros(&[20, 20, 3]).unwrap();
        assert_eq!(m.forward(&p).unwrap(), [0.5, 0.5]);
    }

    #[test]
    fn forward_is_deterministic() {
        let m = NetworkModel::with_default_architecture(9, 1.0).unwrap();
        let p = patch(4);
        let a = m.forward(&p).unwrap();
        let b = m.forward(&p).unwrap();
        assert_eq!(a[0].to_bits(), b[0].to_bits());
        assert_eq!(a[1].to_bits(), b[1].to_bits());
    }

    #[test]
    fn wrong_patch_size_is_shape_error() {
        let m = NetworkModel::with_default_architecture(9, 1.0).unwrap();
        let p = Tensor::zeros(&[19, 20, 3]).unwrap();
        assert!(matches!(m.forward(&p), Err(NetError::Tensor(_))));
    }

    #[test]
    fn backward_loss_matches_forward() {
        let m = NetworkModel::with_default_architecture(5, 1.0).unwrap();
        let p = patch(8);
        for label in 0..2 {
            let (_, loss) = m.backward(&p, label).unwrap();
            assert_eq!(loss, cross_entropy_loss(m.forward(&p).unwrap(), label));
        }
    }

    #[test]
    fn dead_relu_unit_has_zero_incoming_gradient() {
        // Two-layer net where hidden unit 0 is forced dead by a large negative bias.
        let layers = vec![
            ConvLayerSpec::new(5, 3, 2, true),
            ConvLayerSpec::new(16, 2, 2, false),
        ];
        let mut m = NetworkModel::initialize(layers, 7, 1.0).unwrap();
        m.biases_mut()[0].set(&[0], -1e3);
        let (g, _) = m.backward(&patch(1), 1).unwrap();
        let gw = &g.weights[0];
        for dy in 0..5 {
            for dx in 0..5 {
                for i in 0..3 {
                    assert_eq!(gw.get(&[dy, dx, i, 0]), 0.0);
                }
            }
        }
        assert_eq!(g.biases[0].get(&[0]), 0.0);
        assert!(gw.data().iter().any(|&v| v != 0.0));
    }
}
