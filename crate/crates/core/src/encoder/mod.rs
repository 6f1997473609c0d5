//! A small fully-convolutional encoder, trained from scratch, that maps a
//! rendered scene to the per-cell probability of lying on the shortest path.
//!
//! Everything runs in `f64` on the CPU with fixed summation orders, so a
//! given seed reproduces a training run bit for bit.

mod checkpoint;
mod conv;
mod gradcheck;
mod loss;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ImageRgb, Pos, COLOR_FREE, COLOR_GOAL, COLOR_OBSTACLE, COLOR_START};

pub use checkpoint::{load_model, read_model, save_model, write_model, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::grad_check;
pub use loss::{loss, manhattan_distance_transform, Weighting, BCE_EPS};
pub use train::{backward, train, train_with, Gradients, Optimizer, Sample, TrainConfig};

use conv::ConvShape;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    /// Only valid on the final layer.
    Logistic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Odd square kernel size; padding is always "same".
    pub kernel: usize,
    pub dilation: usize,
    pub activation: Activation,
}

impl ConvLayer {
    pub const fn new(in_channels: usize, out_channels: usize, activation: Activation) -> Self {
        ConvLayer {
            in_channels,
            out_channels,
            kernel: 3,
            dilation: 1,
            activation,
        }
    }

    pub const fn with_kernel(mut self, kernel: usize) -> Self {
        self.kernel = kernel;
        self
    }

    pub const fn with_dilation(mut self, dilation: usize) -> Self {
        self.dilation = dilation;
        self
    }

    pub fn weight_count(&self) -> usize {
        self.in_channels * self.out_channels * self.kernel * self.kernel
    }

    pub fn param_count(&self) -> usize {
        self.weight_count() + self.out_channels
    }
}

/// How a rendered image becomes the network input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputFeatures {
    /// The three color channels scaled to `[0, 1]`.
    Rgb,
    /// Color channels plus three geometry planes located from the start and
    /// goal pixels: the Euclidean detour `|s−c| + |c−g| − |s−g|` (in units of
    /// [`DETOUR_SCALE`] cells) and the distances `|s−c|`, `|c−g|` normalized by
    /// `width + height`.
    RgbDetour,
}

pub const DETOUR_SCALE: f64 = 10.0;

impl InputFeatures {
    pub fn channels(self) -> usize {
        match self {
            InputFeatures::Rgb => 3,
            InputFeatures::RgbDetour => 6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input: InputFeatures,
    pub layers: Vec<ConvLayer>,
}

impl Default for Architecture {
    /// `6 → 12 → 12 → 12 → 1`, 3×3 same-padded convolutions, ReLU between
    /// layers and a logistic head; the input carries the detour geometry.
    fn default() -> Self {
        let c = 12;
        Architecture {
            input: InputFeatures::RgbDetour,
            layers: vec![
                ConvLayer::new(InputFeatures::RgbDetour.channels(), c, Activation::Relu),
                ConvLayer::new(c, c, Activation::Relu),
                ConvLayer::new(c, c, Activation::Relu),
                ConvLayer::new(c, 1, Activation::Logistic),
            ],
        }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::IncompatibleArchitecture(m));
        let Some(last) = self.layers.last() else {
            return bad("no layers".into());
        };
        let mut channels = self.input.channels();
        for (i, l) in self.layers.iter().enumerate() {
            if l.in_channels != channels {
                return bad(format!(
                    "layer {i} expects {} input channels but receives {channels}",
                    l.in_channels
                ));
            }
            if l.out_channels == 0 || l.kernel % 2 == 0 || l.dilation == 0 {
                return bad(format!("layer {i} has a degenerate shape"));
            }
            if l.activation == Activation::Logistic && i + 1 != self.layers.len() {
                return bad(format!("logistic activation on hidden layer {i}"));
            }
            channels = l.out_channels;
        }
        if last.out_channels != 1 || last.activation != Activation::Logistic {
            return bad("final layer must emit one channel through a logistic".into());
        }
        Ok(())
    }

    /// `Σ (in · out · k² + out)` over layers.
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(ConvLayer::param_count).sum()
    }
}

/// Dense `channels × height × width` tensor, row-major per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Tensor {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }
}

/// Per-cell probability of lying on the shortest path, each in `(0, 1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionProbabilities {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl RegionProbabilities {
    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        RegionProbabilities {
            width,
            height,
            values: vec![value; width * height],
        }
    }

    pub fn get(&self, p: Pos) -> f64 {
        self.values[p.row * self.width + p.col]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderModel {
    pub arch: Architecture,
    pub params: Vec<LayerParams>,
    pub init_seed: u64,
    pub version: u32,
}

/// He-normal weights (`σ = √(2 / fan_in)`), zero biases.
pub fn init_model(arch: &Architecture, seed: u64) -> Result<EncoderModel> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = arch
        .layers
        .iter()
        .map(|l| {
            let fan_in = (l.in_channels * l.kernel * l.kernel) as f64;
            let std = (2.0 / fan_in).sqrt();
            LayerParams {
                weights: (0..l.weight_count())
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        z * std
                    })
                    .collect(),
                bias: vec![0.0; l.out_channels],
            }
        })
        .collect();
    Ok(EncoderModel {
        arch: arch.clone(),
        params,
        init_seed: seed,
        version: CHECKPOINT_VERSION,
    })
}

#[inline]
fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Activations of every layer from one forward pass. `outputs[l]` is the
/// post-activation of layer `l`, except the last entry which holds logits.
pub(crate) struct ForwardTrace {
    pub outputs: Vec<Vec<f64>>,
}

impl EncoderModel {
    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.weights.len() + p.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params
            .iter()
            .all(|p| p.weights.iter().chain(&p.bias).all(|v| v.is_finite()))
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        let want = self.arch.input.channels();
        if input.channels != want || input.data.len() != want * input.height * input.width {
            return Err(Error::shape(
                format!("{want} channels"),
                format!("{} channels ({} values)", input.channels, input.data.len()),
            ));
        }
        Ok(())
    }

    pub(crate) fn forward_trace(&self, input: &Tensor) -> ForwardTrace {
        let (h, w) = (input.height, input.width);
        let mut outputs: Vec<Vec<f64>> = Vec::with_capacity(self.arch.layers.len());
        for (li, (layer, p)) in self.arch.layers.iter().zip(&self.params).enumerate() {
            let src = if li == 0 { &input.data } else { &outputs[li - 1] };
            let mut out = vec![0.0; layer.out_channels * h * w];
            conv::forward(shape(layer, h, w), src, &p.weights, &p.bias, &mut out);
            if layer.activation == Activation::Relu {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            outputs.push(out);
        }
        ForwardTrace { outputs }
    }

    /// Region probabilities for one input, clamped to `[BCE_EPS, 1 − BCE_EPS]`.
    pub fn forward(&self, input: &Tensor) -> Result<RegionProbabilities> {
        self.check_input(input)?;
        let trace = self.forward_trace(input);
        let logits = trace.outputs.last().expect("validated architecture");
        Ok(RegionProbabilities {
            width: input.width,
            height: input.height,
            values: logits
                .iter()
                .map(|&z| logistic(z).clamp(BCE_EPS, 1.0 - BCE_EPS))
                .collect(),
        })
    }

    /// Encodes an image according to the architecture and runs [`Self::forward`].
    pub fn predict(&self, image: &ImageRgb) -> Result<RegionProbabilities> {
        self.forward(&encode_image(image, self.arch.input)?)
    }
}

pub(crate) fn shape(layer: &ConvLayer, height: usize, width: usize) -> ConvShape {
    ConvShape {
        in_ch: layer.in_channels,
        out_ch: layer.out_channels,
        height,
        width,
        kernel: layer.kernel,
        dilation: layer.dilation,
    }
}

/// Builds the network input for a rendered scene.
pub fn encode_image(image: &ImageRgb, features: InputFeatures) -> Result<Tensor> {
    let (h, w) = (image.height, image.width);
    let n = h * w;
    let mut t = Tensor::zeros(features.channels(), h, w);
    let (mut start, mut goal) = (None, None);
    for (i, px) in image.pixels.iter().enumerate() {
        for c in 0..3 {
            t.data[c * n + i] = f64::from(px[c]) / 255.0;
        }
        match *px {
            COLOR_START => start = Some(i),
            COLOR_GOAL => goal = Some(i),
            COLOR_FREE | COLOR_OBSTACLE => {}
            other => return Err(Error::MalformedImage(format!("unexpected color {other:?}"))),
        }
    }
    if features == InputFeatures::RgbDetour {
        let missing = || Error::MalformedImage("image lacks a start or goal pixel".into());
        let s = start.ok_or_else(missing)?;
        let g = goal.ok_or_else(missing)?;
        let at = |i: usize| ((i / w) as f64, (i % w) as f64);
        let (sr, sc) = at(s);
        let (gr, gc) = at(g);
        let direct = (gr - sr).hypot(gc - sc);
        let norm = (h + w) as f64;
        for i in 0..n {
            let (r, c) = at(i);
            let ds = (r - sr).hypot(c - sc);
            let dg = (r - gr).hypot(c - gc);
            t.data[3 * n + i] = (ds + dg - direct) / DETOUR_SCALE;
            t.data[4 * n + i] = ds / norm;
            t.data[5 * n + i] = dg / norm;
        }
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{generate_scene, render_scene, ScenarioFamily};

    fn small_arch() -> Architecture {
        Architecture {
            input: InputFeatures::Rgb,
            layers: vec![
                ConvLayer::new(3, 4, Activation::Relu),
                ConvLayer::new(4, 1, Activation::Logistic),
            ],
        }
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_model(&Architecture::default(), 0).unwrap();
        let b = init_model(&Architecture::default(), 0).unwrap();
        assert_eq!(a, b);
        let c = init_model(&Architecture::default(), 1).unwrap();
        assert_ne!(a.params, c.params);
        assert!(a.params.iter().all(|p| p.bias.iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn mismatched_channels_are_rejected() {
        let mut arch = small_arch();
        arch.layers[1].in_channels = 5;
        assert!(matches!(
            init_model(&arch, 0),
            Err(Error::IncompatibleArchitecture(_))
        ));
        let mut arch = small_arch();
        arch.layers[1].activation = Activation::Relu;
        assert!(arch.validate().is_err());
        let mut arch = small_arch();
        arch.layers[0].activation = Activation::Logistic;
        assert!(arch.validate().is_err());
    }

    #[test]
    fn param_count_matches_formula() {
        let arch = Architecture::default();
        let formula: usize = arch
            .layers
            .iter()
            .map(|l| l.in_channels * l.out_channels * 9 + l.out_channels)
            .sum();
        assert_eq!(arch.param_count(), formula);
        assert_eq!(init_model(&arch, 3).unwrap().param_count(), formula);
    }

    #[test]
    fn zero_model_outputs_one_half() {
        let mut m = init_model(&small_arch(), 0).unwrap();
        for p in &mut m.params {
            p.weights.fill(0.0);
        }
        let x = Tensor {
            channels: 3,
            height: 5,
            width: 4,
            data: (0..60).map(|i| i as f64 / 60.0).collect(),
        };
        let out = m.forward(&x).unwrap();
        assert!(out.values.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn forward_shape_and_range_on_full_scene() {
        let scene = generate_scene(ScenarioFamily::UniformClutter { density: 0.2 }, 1).unwrap();
        let m = init_model(&Architecture::default(), 5).unwrap();
        let x = encode_image(&render_scene(&scene), m.arch.input).unwrap();
        assert_eq!((x.channels, x.height, x.width), (6, 60, 60));
        let a = m.forward(&x).unwrap();
        assert_eq!((a.width, a.height, a.values.len()), (60, 60, 3600));
        assert!(a.values.iter().all(|&v| v > 0.0 && v < 1.0));
        let b = m.forward(&x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn forward_rejects_wrong_channels() {
        let m = init_model(&small_arch(), 0).unwrap();
        let x = Tensor::zeros(2, 4, 4);
        assert!(matches!(m.forward(&x), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn detour_plane_is_zero_on_segment_endpoints() {
        let scene = generate_scene(ScenarioFamily::UniformClutter { density: 0.1 }, 2).unwrap();
        let x = encode_image(&render_scene(&scene), InputFeatures::RgbDetour).unwrap();
        let detour = x.plane(3);
        assert!(detour[scene.index(scene.start)].abs() < 1e-12);
        assert!(detour[scene.index(scene.goal)].abs() < 1e-12);
        assert!(detour.iter().all(|&v| v >= -1e-12));
    }
}
