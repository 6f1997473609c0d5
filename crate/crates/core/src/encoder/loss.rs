//! Weighted binary cross-entropy between predicted region probabilities and a
//! path label.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Mask, PathLabel};

use super::RegionProbabilities;

/// Predictions are clamped to `[BCE_EPS, 1 - BCE_EPS]` before taking logs.
pub const BCE_EPS: f64 = 1e-7;

/// Per-cell loss weighting.
///
/// `Gaussian` weights cell `c` by `exp(-d(c)² / 2σ²)`, where `d(c)` is the
/// Manhattan distance from `c` to the nearest labelled path cell. Path cells
/// keep weight 1 and off-path cells far from the path are penalized less.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Weighting {
    Uniform,
    Gaussian { sigma: f64 },
}

impl Weighting {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Weighting::Gaussian { sigma } if !(sigma > 0.0 && sigma.is_finite()) => Err(
                Error::InvalidParameter(format!("gaussian sigma must be positive, got {sigma}")),
            ),
            _ => Ok(()),
        }
    }

    /// Per-cell weights for a label mask, row-major.
    pub fn weights(&self, mask: &Mask) -> Vec<f64> {
        match *self {
            Weighting::Uniform => vec![1.0; mask.bits().len()],
            Weighting::Gaussian { sigma } => {
                let denom = 2.0 * sigma * sigma;
                manhattan_distance_transform(mask)
                    .into_iter()
                    .map(|d| (-(d * d) / denom).exp())
                    .collect()
            }
        }
    }
}

/// L1 distance from every cell to the nearest set cell of `mask`
/// (obstacles ignored). Cells of an empty mask get `f64::INFINITY`.
pub fn manhattan_distance_transform(mask: &Mask) -> Vec<f64> {
    let (w, h) = (mask.width(), mask.height());
    let mut d: Vec<f64> = mask
        .bits()
        .iter()
        .map(|&b| if b { 0.0 } else { f64::INFINITY })
        .collect();
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            if r > 0 {
                d[i] = d[i].min(d[i - w] + 1.0);
            }
            if c > 0 {
                d[i] = d[i].min(d[i - 1] + 1.0);
            }
        }
    }
    for r in (0..h).rev() {
        for c in (0..w).rev() {
            let i = r * w + c;
            if r + 1 < h {
                d[i] = d[i].min(d[i + w] + 1.0);
            }
            if c + 1 < w {
                d[i] = d[i].min(d[i + 1] + 1.0);
            }
        }
    }
    d
}

#[inline]
pub(crate) fn bce(p: f64, y: f64) -> f64 {
    let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Mean over cells of `weight · BCE`, summed left to right.
pub(crate) fn weighted_bce(pred: &[f64], target: &[f64], weights: &[f64]) -> f64 {
    let total: f64 = pred
        .iter()
        .zip(target)
        .zip(weights)
        .map(|((&p, &y), &w)| w * bce(p, y))
        .sum();
    total / pred.len() as f64
}

/// Mean weighted binary cross-entropy; `Uniform` is plain BCE.
pub fn loss(pred: &RegionProbabilities, label: &PathLabel, weighting: Weighting) -> Result<f64> {
    weighting.validate()?;
    let mask = &label.mask;
    if pred.width != mask.width() || pred.height != mask.height() {
        return Err(Error::shape(
            format!("{}x{}", mask.width(), mask.height()),
            format!("{}x{}", pred.width, pred.height),
        ));
    }
    let target: Vec<f64> = mask.bits().iter().map(|&b| f64::from(u8::from(b))).collect();
    Ok(weighted_bce(&pred.values, &target, &weighting.weights(mask)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{compute_label, generate_scene, ScenarioFamily};

    fn label() -> PathLabel {
        let s = generate_scene(ScenarioFamily::UniformClutter { density: 0.2 }, 42).unwrap();
        compute_label(&s).unwrap()
    }

    fn probs(label: &PathLabel, f: impl Fn(bool) -> f64) -> RegionProbabilities {
        RegionProbabilities {
            width: label.mask.width(),
            height: label.mask.height(),
            values: label.mask.bits().iter().map(|&b| f(b)).collect(),
        }
    }

    #[test]
    fn perfect_prediction_has_near_zero_loss() {
        let l = label();
        let p = probs(&l, |b| if b { 1.0 } else { 0.0 });
        assert!(loss(&p, &l, Weighting::Uniform).unwrap() <= 1e-6);
    }

    #[test]
    fn half_everywhere_gives_ln_two() {
        let l = label();
        let p = probs(&l, |_| 0.5);
        let v = loss(&p, &l, Weighting::Uniform).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn huge_sigma_matches_uniform() {
        let l = label();
        let p = probs(&l, |b| if b { 0.7 } else { 0.2 });
        let u = loss(&p, &l, Weighting::Uniform).unwrap();
        let g = loss(&p, &l, Weighting::Gaussian { sigma: 1e6 }).unwrap();
        assert!((u - g).abs() < 1e-9);
    }

    #[test]
    fn gaussian_weights_decay_with_distance() {
        let l = label();
        let w = Weighting::Gaussian { sigma: 2.0 }.weights(&l.mask);
        let d = manhattan_distance_transform(&l.mask);
        for (wi, di) in w.iter().zip(&d) {
            assert!((wi - (-(di * di) / 8.0).exp()).abs() < 1e-15);
        }
        assert!(l.path_cells.iter().all(|&p| w[p.row * 60 + p.col] == 1.0));
    }

    #[test]
    fn distance_transform_matches_brute_force() {
        let l = label();
        let d = manhattan_distance_transform(&l.mask);
        for i in (0..3600).step_by(37) {
            let (r, c) = (i / 60, i % 60);
            let brute = l
                .path_cells
                .iter()
                .map(|p| p.row.abs_diff(r) + p.col.abs_diff(c))
                .min()
                .unwrap();
            assert_eq!(d[i], brute as f64);
        }
    }

    #[test]
    fn rejects_bad_sigma_and_shape() {
        let l = label();
        let p = probs(&l, |_| 0.5);
        assert!(loss(&p, &l, Weighting::Gaussian { sigma: 0.0 }).is_err());
        let small = RegionProbabilities {
            width: 3,
            height: 3,
            values: vec![0.5; 9],
        };
        assert!(matches!(
            loss(&small, &l, Weighting::Uniform),
            Err(Error::ShapeMismatch { .. })
        ));
    }
}
