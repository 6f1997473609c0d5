use std::borrow::Borrow;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Mask;

use super::loss::weighted_bce;
use super::{conv, logistic, shape, Activation, EncoderModel, LayerParams, Tensor, Weighting};

/// One training example: encoded input and its path label mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub input: Tensor,
    pub label: Mask,
}

impl Sample {
    pub fn new(input: Tensor, label: Mask) -> Result<Self> {
        if input.height != label.height() || input.width != label.width() {
            return Err(Error::shape(
                format!("{}x{}", input.width, input.height),
                format!("{}x{}", label.width(), label.height()),
            ));
        }
        Ok(Sample { input, label })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub const fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub weighting: Weighting,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 4,
            batch_size: 16,
            learning_rate: 3e-3,
            optimizer: Optimizer::adam(),
            weighting: Weighting::Gaussian { sigma: 1.35 },
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// A zero learning rate is accepted and freezes the weights.
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch_size must be positive".into()));
        }
        if let Optimizer::Adam { beta1, beta2, eps } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || eps <= 0.0 {
                return Err(Error::InvalidParameter("adam hyperparameters out of range".into()));
            }
        }
        self.weighting.validate()
    }
}

/// Parameter gradients, shaped like [`EncoderModel::params`], plus the
/// batch-mean loss they were taken from.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerParams>,
    pub loss: f64,
}

impl Gradients {
    fn zeros_like(model: &EncoderModel) -> Self {
        Gradients {
            layers: model
                .params
                .iter()
                .map(|p| LayerParams {
                    weights: vec![0.0; p.weights.len()],
                    bias: vec![0.0; p.bias.len()],
                })
                .collect(),
            loss: 0.0,
        }
    }

    fn add(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.iter_mut().zip(&b.weights).for_each(|(x, y)| *x += y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += y);
        }
        self.loss += other.loss;
    }

    fn scale(&mut self, k: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().chain(l.bias.iter_mut()).for_each(|x| *x *= k);
        }
        self.loss *= k;
    }

    /// Flattened `(weights, bias)` per layer, in layer order.
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }
}

fn check_sample(model: &EncoderModel, s: &Sample) -> Result<()> {
    let want = model.arch.input.channels();
    if s.input.channels != want {
        return Err(Error::shape(format!("{want} channels"), format!("{} channels", s.input.channels)));
    }
    if s.input.height != s.label.height() || s.input.width != s.label.width() {
        return Err(Error::shape("label matching input", "different label size"));
    }
    Ok(())
}

fn sample_gradients(model: &EncoderModel, s: &Sample, weighting: Weighting) -> Gradients {
    let (h, w) = (s.input.height, s.input.width);
    let n = h * w;
    let mut trace = model.forward_trace(&s.input);
    let logits = trace.outputs.pop().expect("validated architecture");
    let target: Vec<f64> = s.label.bits().iter().map(|&b| f64::from(u8::from(b))).collect();
    let weights = weighting.weights(&s.label);
    let probs: Vec<f64> = logits.iter().map(|&z| logistic(z)).collect();
    let loss = weighted_bce(&probs, &target, &weights);

    // d(mean w·BCE)/dz = w (p − y) / n for a logistic head
    let mut grad: Vec<f64> = probs
        .iter()
        .zip(&target)
        .zip(&weights)
        .map(|((&p, &y), &wt)| wt * (p - y) / n as f64)
        .collect();

    let mut out = Gradients::zeros_like(model);
    out.loss = loss;
    let layers = &model.arch.layers;
    for li in (0..layers.len()).rev() {
        let layer = &layers[li];
        let input = if li == 0 { &s.input.data } else { &trace.outputs[li - 1] };
        let mut grad_in = (li > 0).then(|| vec![0.0; layer.in_channels * n]);
        let g = &mut out.layers[li];
        conv::backward(
            shape(layer, h, w),
            input,
            &model.params[li].weights,
            &grad,
            &mut g.weights,
            &mut g.bias,
            grad_in.as_deref_mut(),
        );
        if let Some(mut gi) = grad_in {
            if layers[li - 1].activation == Activation::Relu {
                for (gv, &a) in gi.iter_mut().zip(&trace.outputs[li - 1]) {
                    if a <= 0.0 {
                        *gv = 0.0;
                    }
                }
            }
            grad = gi;
        }
    }
    out
}

/// Gradients of the batch-mean loss with respect to every parameter.
///
/// Per-sample gradients may be computed in parallel; they are always summed
/// in batch order.
pub fn backward(model: &EncoderModel, batch: &[Sample], weighting: Weighting) -> Result<Gradients> {
    let refs: Vec<&Sample> = batch.iter().collect();
    backward_refs(model, &refs, weighting)
}

fn backward_refs(model: &EncoderModel, batch: &[&Sample], weighting: Weighting) -> Result<Gradients> {
    if batch.is_empty() {
        return Err(Error::InvalidParameter("empty batch".into()));
    }
    weighting.validate()?;
    for s in batch {
        check_sample(model, s)?;
    }
    let parts: Vec<Gradients> = batch
        .par_iter()
        .map(|s| sample_gradients(model, s, weighting))
        .collect();
    let mut total = Gradients::zeros_like(model);
    for p in &parts {
        total.add(p);
    }
    total.scale(1.0 / batch.len() as f64);
    Ok(total)
}

struct AdamState {
    m: Vec<LayerParams>,
    v: Vec<LayerParams>,
    t: i32,
}

fn apply_update(
    model: &mut EncoderModel,
    grads: &Gradients,
    cfg: &TrainConfig,
    state: &mut Option<AdamState>,
) {
    let lr = cfg.learning_rate;
    match cfg.optimizer {
        Optimizer::Sgd => {
            for (p, g) in model.params.iter_mut().zip(&grads.layers) {
                for (x, d) in p.weights.iter_mut().zip(&g.weights) {
                    *x -= lr * d;
                }
                for (x, d) in p.bias.iter_mut().zip(&g.bias) {
                    *x -= lr * d;
                }
            }
        }
        Optimizer::Adam { beta1, beta2, eps } => {
            let st = state.get_or_insert_with(|| {
                let zeros = Gradients::zeros_like(model).layers;
                AdamState {
                    m: zeros.clone(),
                    v: zeros,
                    t: 0,
                }
            });
            st.t += 1;
            let c1 = 1.0 - beta1.powi(st.t);
            let c2 = 1.0 - beta2.powi(st.t);
            let step = |x: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *x -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            };
            for li in 0..model.params.len() {
                let p = &mut model.params[li];
                let g = &grads.layers[li];
                let (m, v) = (&mut st.m[li], &mut st.v[li]);
                for i in 0..p.weights.len() {
                    step(&mut p.weights[i], &mut m.weights[i], &mut v.weights[i], g.weights[i]);
                }
                for i in 0..p.bias.len() {
                    step(&mut p.bias[i], &mut m.bias[i], &mut v.bias[i], g.bias[i]);
                }
            }
        }
    }
}

/// Mini-batch training. Sample order is reshuffled every epoch from
/// `cfg.seed`; the returned history holds the mean per-sample loss of each
/// epoch, measured before each batch's update.
pub fn train<S: Borrow<Sample>>(
    model: &EncoderModel,
    dataset: &[S],
    cfg: &TrainConfig,
) -> Result<(EncoderModel, Vec<f64>)> {
    train_with(model, dataset, cfg, |_, _| true)
}

/// [`train`] with a callback after every epoch, given the epoch index and
/// its mean loss. Training stops early once the callback returns `false`.
pub fn train_with<S: Borrow<Sample>>(
    model: &EncoderModel,
    dataset: &[S],
    cfg: &TrainConfig,
    mut keep_going: impl FnMut(usize, f64) -> bool,
) -> Result<(EncoderModel, Vec<f64>)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidParameter("empty training set".into()));
    }
    for s in dataset {
        check_sample(model, s.borrow())?;
    }
    let mut model = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut state = None;
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| dataset[i].borrow()).collect();
            let grads = backward_refs(&model, &batch, cfg.weighting)?;
            total += grads.loss * chunk.len() as f64;
            apply_update(&mut model, &grads, cfg, &mut state);
        }
        let mean = total / dataset.len() as f64;
        log::debug!("epoch {epoch}: loss {mean:.6}");
        if !mean.is_finite() || !model.is_finite() {
            return Err(Error::DivergenceDetected { epoch, loss: mean });
        }
        history.push(mean);
        if !keep_going(epoch, mean) {
            break;
        }
    }
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{init_model, Architecture, ConvLayer, InputFeatures};
    use crate::grid::Pos;

    fn tiny_arch() -> Architecture {
        Architecture {
            input: InputFeatures::Rgb,
            layers: vec![
                ConvLayer::new(3, 3, Activation::Relu),
                ConvLayer::new(3, 1, Activation::Logistic),
            ],
        }
    }

    fn sample(seed: u64) -> Sample {
        let (h, w) = (6, 6);
        let data = (0..3 * h * w)
            .map(|i| (((i as u64 + 1) * (seed + 3) * 2654435761) % 997) as f64 / 997.0)
            .collect();
        let mut label = Mask::new(w, h);
        for c in 0..w {
            label.set(Pos::new((seed as usize) % h, c), true);
        }
        Sample::new(
            Tensor {
                channels: 3,
                height: h,
                width: w,
                data,
            },
            label,
        )
        .unwrap()
    }

    #[test]
    fn zero_model_bias_gradient_is_mean_residual() {
        let mut m = init_model(&tiny_arch(), 1).unwrap();
        for p in &mut m.params {
            p.weights.fill(0.0);
        }
        let s = sample(2);
        let g = backward(&m, std::slice::from_ref(&s), Weighting::Uniform).unwrap();
        let n = s.label.bits().len() as f64;
        let mean_residual: f64 = s
            .label
            .bits()
            .iter()
            .map(|&b| 0.5 - f64::from(u8::from(b)))
            .sum::<f64>()
            / n;
        let head_bias = g.layers.last().unwrap().bias[0];
        assert!((head_bias - mean_residual).abs() < 1e-15);
    }

    #[test]
    fn duplicated_batch_matches_single() {
        let m = init_model(&tiny_arch(), 4).unwrap();
        let s = sample(1);
        let one = backward(&m, std::slice::from_ref(&s), Weighting::Uniform).unwrap();
        let two = backward(&m, &[s.clone(), s], Weighting::Uniform).unwrap();
        assert_eq!(one, two);
    }

    #[test]
    fn empty_batch_is_rejected() {
        let m = init_model(&tiny_arch(), 4).unwrap();
        assert!(backward(&m, &[], Weighting::Uniform).is_err());
    }

    #[test]
    fn zero_learning_rate_freezes_weights() {
        let m = init_model(&tiny_arch(), 5).unwrap();
        let data: Vec<Sample> = (0..4).map(sample).collect();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 2,
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        let (trained, history) = train(&m, &data, &cfg).unwrap();
        assert_eq!(trained, m);
        assert_eq!(history.len(), 3);
        // batches are reshuffled, so only summation order differs between epochs
        assert!(history.iter().all(|&l| (l - history[0]).abs() <= 1e-15 * history[0]));
    }

    #[test]
    fn sgd_and_adam_reduce_loss() {
        let data: Vec<Sample> = (0..4).map(sample).collect();
        for optimizer in [Optimizer::Sgd, Optimizer::adam()] {
            let m = init_model(&tiny_arch(), 6).unwrap();
            let cfg = TrainConfig {
                epochs: 30,
                batch_size: 4,
                learning_rate: if optimizer == Optimizer::Sgd { 0.5 } else { 0.01 },
                optimizer,
                weighting: Weighting::Uniform,
                seed: 1,
            };
            let (_, history) = train(&m, &data, &cfg).unwrap();
            assert!(history.last().unwrap() < &history[0], "{optimizer:?}");
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let m = init_model(&tiny_arch(), 5).unwrap();
        let data = vec![sample(0)];
        let bad_lr = TrainConfig {
            learning_rate: -1.0,
            ..TrainConfig::default()
        };
        assert!(train(&m, &data, &bad_lr).is_err());
        let bad_sigma = TrainConfig {
            weighting: Weighting::Gaussian { sigma: -2.0 },
            ..TrainConfig::default()
        };
        assert!(train(&m, &data, &bad_sigma).is_err());
        assert!(train::<Sample>(&m, &[], &TrainConfig::default()).is_err());
    }

    #[test]
    fn non_finite_loss_is_reported_as_divergence() {
        let m = init_model(&tiny_arch(), 7).unwrap();
        let mut bad = sample(0);
        bad.input.data[5] = f64::NAN;
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 1,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&m, &[sample(1), bad], &cfg),
            Err(Error::DivergenceDetected { epoch: 0, .. })
        ));
    }
}
