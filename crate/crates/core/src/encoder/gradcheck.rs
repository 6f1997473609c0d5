use crate::error::Result;

use super::loss::weighted_bce;
use super::{backward, logistic, EncoderModel, Sample, Weighting};

/// Upper bound on the number of parameters probed per check.
const MAX_PROBES: usize = 256;

fn sample_loss(model: &EncoderModel, s: &Sample, weighting: Weighting) -> f64 {
    let trace = model.forward_trace(&s.input);
    let probs: Vec<f64> = trace
        .outputs
        .last()
        .expect("validated architecture")
        .iter()
        .map(|&z| logistic(z))
        .collect();
    let target: Vec<f64> = s.label.bits().iter().map(|&b| f64::from(u8::from(b))).collect();
    weighted_bce(&probs, &target, &weighting.weights(&s.label))
}

fn param_mut(model: &mut EncoderModel, mut index: usize) -> &mut f64 {
    for p in &mut model.params {
        if index < p.weights.len() {
            return &mut p.weights[index];
        }
        index -= p.weights.len();
        if index < p.bias.len() {
            return &mut p.bias[index];
        }
        index -= p.bias.len();
    }
    panic!("parameter index out of range");
}

/// Largest relative error between backpropagated gradients and central
/// finite differences with step `h`, over an evenly spaced subset of at most
/// 256 parameters (every parameter when the model is smaller).
///
/// Relative error is `|a − n| / max(|a|, |n|, 1e−12)`.
pub fn grad_check(model: &EncoderModel, sample: &Sample, weighting: Weighting, h: f64) -> Result<f64> {
    let analytic = backward(model, std::slice::from_ref(sample), weighting)?.flatten();
    let total = analytic.len();
    let stride = total.div_ceil(MAX_PROBES).max(1);
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for index in (0..total).step_by(stride).chain(std::iter::once(total - 1)) {
        let original = *param_mut(&mut probe, index);
        *param_mut(&mut probe, index) = original + h;
        let up = sample_loss(&probe, sample, weighting);
        *param_mut(&mut probe, index) = original - h;
        let down = sample_loss(&probe, sample, weighting);
        *param_mut(&mut probe, index) = original;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[index];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{init_model, Activation, Architecture, ConvLayer, InputFeatures, Tensor};
    use crate::grid::{Mask, Pos};

    fn sample(h: usize, w: usize) -> Sample {
        let data = (0..3 * h * w).map(|i| ((i * 37 % 101) as f64) / 101.0).collect();
        let mut label = Mask::new(w, h);
        for r in 0..h {
            label.set(Pos::new(r, r.min(w - 1)), true);
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
    fn linear_pointwise_layer_is_near_exact() {
        let arch = Architecture {
            input: InputFeatures::Rgb,
            layers: vec![ConvLayer::new(3, 1, Activation::Logistic).with_kernel(1)],
        };
        let m = init_model(&arch, 2).unwrap();
        let err = grad_check(&m, &sample(8, 8), Weighting::Uniform, 1e-5).unwrap();
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn coarse_step_is_less_accurate() {
        let arch = Architecture {
            input: InputFeatures::Rgb,
            layers: vec![
                ConvLayer::new(3, 4, Activation::Relu),
                ConvLayer::new(4, 1, Activation::Logistic),
            ],
        };
        let m = init_model(&arch, 9).unwrap();
        let s = sample(8, 8);
        let fine = grad_check(&m, &s, Weighting::Uniform, 1e-5).unwrap();
        let coarse = grad_check(&m, &s, Weighting::Uniform, 1e-1).unwrap();
        assert!(fine < 1e-4, "{fine}");
        assert!(coarse > fine, "coarse {coarse} fine {fine}");
    }

    #[test]
    fn gaussian_weighting_gradients_check_out() {
        let arch = Architecture {
            input: InputFeatures::Rgb,
            layers: vec![
                ConvLayer::new(3, 3, Activation::Relu).with_dilation(2),
                ConvLayer::new(3, 1, Activation::Logistic),
            ],
        };
        let m = init_model(&arch, 4).unwrap();
        let err = grad_check(&m, &sample(8, 8), Weighting::Gaussian { sigma: 1.5 }, 1e-5).unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
