//! Encoder shift, incremental fine-tuning and RL shift experiments.

use std::time::Instant;

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::bench::mask_quality;
use super::config::{ExperimentConfig, RlShiftConfig};
use super::dataset::{generate_items, samples, DatasetItem};
use super::derive_seed;
use crate::encoder::{init_model, train, Architecture, EncoderModel, Sample, TrainConfig};
use crate::error::{Error, Result};
use crate::grid::{generate_scene_sized, perturb_scene, ScenarioFamily, DEFAULT_SIZE};
use crate::masked::MaskConfig;
use crate::rl::{shift_experiment, NavMdp, ShiftReport};

// Seed streams; each experiment part draws from its own stream.
const TRAIN_SCENES: u64 = 1;
const HELD_OUT_SEEN: u64 = 2;
const HELD_OUT_UNSEEN: u64 = 3;
const MODEL_INIT: u64 = 4;
const TRAIN_ORDER: u64 = 5;
const NEW_FAMILY_SCENES: u64 = 6;
const REPLAY_PICK: u64 = 7;
const SCRATCH_INIT: u64 = 8;
const RL_ENV: u64 = 10;
const RL_PERTURB: u64 = 11;
const RL_TRAIN: u64 = 12;

fn items(families: &[ScenarioFamily], count: usize, seed: u64) -> Result<Vec<DatasetItem>> {
    generate_items(families, count, seed, DEFAULT_SIZE, DEFAULT_SIZE)
}

/// Trains a freshly initialised default encoder; init and shuffle seeds are
/// derived from `seed`.
pub fn train_encoder(items: &[DatasetItem], cfg: &TrainConfig, seed: u64) -> Result<EncoderModel> {
    let arch = Architecture::default();
    let model = init_model(&arch, derive_seed(seed, MODEL_INIT))?;
    let data = samples(items, arch.input)?;
    let cfg = TrainConfig {
        seed: derive_seed(seed, TRAIN_ORDER),
        ..*cfg
    };
    Ok(train(&model, &data, &cfg)?.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderShiftRow {
    pub seed: u64,
    pub family: String,
    /// `seen` for training families, `unseen` otherwise.
    pub split: String,
    pub recall: f64,
    pub precision: f64,
    pub scenes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderShiftReport {
    pub rows: Vec<EncoderShiftRow>,
    /// Seconds spent training, per seed.
    pub train_time_s: Vec<f64>,
}

impl EncoderShiftReport {
    /// Mean over seeds of (mean seen recall − mean unseen recall).
    pub fn recall_gap(&self) -> f64 {
        let mut seeds: Vec<u64> = self.rows.iter().map(|r| r.seed).collect();
        seeds.dedup();
        let mean = |seed: u64, split: &str| {
            let v: Vec<f64> = self
                .rows
                .iter()
                .filter(|r| r.seed == seed && r.split == split)
                .map(|r| r.recall)
                .collect();
            v.iter().sum::<f64>() / v.len().max(1) as f64
        };
        seeds.iter().map(|&s| mean(s, "seen") - mean(s, "unseen")).sum::<f64>() / seeds.len().max(1) as f64
    }

    pub fn write_csv(&self, out: impl std::io::Write) -> Result<()> {
        write_rows(&self.rows, out)
    }
}

pub(crate) fn write_rows<T: Serialize>(rows: &[T], out: impl std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

fn quality_rows(
    model: &EncoderModel,
    held_out: &[DatasetItem],
    families: &[ScenarioFamily],
    split: &str,
    seed: u64,
    mask: &MaskConfig,
) -> Result<Vec<EncoderShiftRow>> {
    families
        .iter()
        .map(|f| {
            let subset: Vec<DatasetItem> = held_out.iter().filter(|it| it.family == f.name()).cloned().collect();
            let q = mask_quality(model, &subset, mask)?;
            Ok(EncoderShiftRow {
                seed,
                family: f.name().to_string(),
                split: split.to_string(),
                recall: q.recall,
                precision: q.precision,
                scenes: q.scenes,
            })
        })
        .collect()
}

/// For each seed: trains on the training families, then measures mask
/// quality on held-out scenes of the training families and of the unseen
/// evaluation families.
pub fn encoder_shift(cfg: &ExperimentConfig, seeds: &[u64]) -> Result<EncoderShiftReport> {
    cfg.validate()?;
    let seen = cfg.train_family_params()?;
    let unseen = cfg.eval_family_params()?;
    let mut rows = Vec::new();
    let mut train_time_s = Vec::new();
    for &seed in seeds {
        let started = Instant::now();
        let model = {
            let train_items = items(&seen, cfg.train_count, derive_seed(seed, TRAIN_SCENES))?;
            train_encoder(&train_items, &cfg.train, seed)?
        };
        train_time_s.push(started.elapsed().as_secs_f64());
        let held_seen = items(&seen, cfg.eval_count, derive_seed(seed, HELD_OUT_SEEN))?;
        let held_unseen = items(&unseen, cfg.eval_count, derive_seed(seed, HELD_OUT_UNSEEN))?;
        rows.extend(quality_rows(&model, &held_seen, &seen, "seen", seed, &cfg.mask)?);
        rows.extend(quality_rows(&model, &held_unseen, &unseen, "unseen", seed, &cfg.mask)?);
    }
    Ok(EncoderShiftReport { rows, train_time_s })
}

/// New samples followed by `round(ρ / (1 − ρ) · |new|)` replayed samples
/// (capped at the buffer size) picked without replacement.
pub fn mix_replay<'a>(
    new: &'a [Sample],
    replay: &'a [Sample],
    replay_ratio: f64,
    seed: u64,
) -> Result<Vec<&'a Sample>> {
    if !(0.0..1.0).contains(&replay_ratio) {
        return Err(Error::InvalidParameter(format!(
            "replay ratio must lie in [0, 1), got {replay_ratio}"
        )));
    }
    let want = (replay_ratio / (1.0 - replay_ratio) * new.len() as f64).round() as usize;
    let take = want.min(replay.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = sample_indices(&mut rng, replay.len(), take).into_vec();
    picked.sort_unstable();
    Ok(new.iter().chain(picked.into_iter().map(|i| &replay[i])).collect())
}

/// Fine-tunes `model` on `new` samples mixed with replayed old samples.
/// Zero epochs return the model unchanged.
pub fn incremental_update(
    model: &EncoderModel,
    new: &[Sample],
    replay: &[Sample],
    replay_ratio: f64,
    cfg: &TrainConfig,
) -> Result<EncoderModel> {
    if new.is_empty() {
        return Err(Error::InvalidParameter("no new-family samples".into()));
    }
    let mixed = mix_replay(new, replay, replay_ratio, derive_seed(cfg.seed, REPLAY_PICK))?;
    if cfg.epochs == 0 {
        cfg.validate()?;
        return Ok(model.clone());
    }
    Ok(train(model, &mixed, cfg)?.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IncrementalRow {
    /// `base`, `incremental` or `scratch`.
    pub model: String,
    pub family: String,
    pub recall: f64,
    pub precision: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IncrementalReport {
    pub rows: Vec<IncrementalRow>,
    pub replay_ratio: f64,
    pub train_time_s: f64,
}

impl IncrementalReport {
    pub fn recall(&self, model: &str, family: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.model == model && r.family == family)
            .map(|r| r.recall)
    }

    pub fn write_csv(&self, out: impl std::io::Write) -> Result<()> {
        write_rows(&self.rows, out)
    }
}

/// Trains on the first training family (A), fine-tunes on the first
/// evaluation family (B) with replay, and trains a from-scratch B model on
/// the same B samples for reference.
pub fn incremental_experiment(cfg: &ExperimentConfig, seed: u64) -> Result<IncrementalReport> {
    cfg.validate()?;
    let fam_a = cfg.train_family_params()?[0];
    let fam_b = cfg.eval_family_params()?[0];
    let inc = &cfg.incremental;
    let arch = Architecture::default();
    let started = Instant::now();

    let train_a = items(&[fam_a], cfg.train_count, derive_seed(seed, TRAIN_SCENES))?;
    let base = train_encoder(&train_a, &cfg.train, seed)?;
    let replay = samples(&train_a, arch.input)?;
    drop(train_a);

    let new_b = items(&[fam_b], inc.new_samples, derive_seed(seed, NEW_FAMILY_SCENES))?;
    let new_samples = samples(&new_b, arch.input)?;
    let fine_cfg = TrainConfig {
        seed: derive_seed(seed, TRAIN_ORDER),
        ..inc.fine_tune
    };
    let updated = incremental_update(&base, &new_samples, &replay, inc.replay_ratio, &fine_cfg)?;
    drop(replay);

    let scratch = {
        let init = init_model(&arch, derive_seed(seed, SCRATCH_INIT))?;
        let cfg = TrainConfig {
            seed: derive_seed(seed, TRAIN_ORDER),
            ..cfg.train
        };
        train(&init, &new_samples, &cfg)?.0
    };
    drop(new_samples);
    let train_time_s = started.elapsed().as_secs_f64();

    let held_a = items(&[fam_a], cfg.eval_count, derive_seed(seed, HELD_OUT_SEEN))?;
    let held_b = items(&[fam_b], cfg.eval_count, derive_seed(seed, HELD_OUT_UNSEEN))?;
    let mut rows = Vec::new();
    for (name, model, sets) in [
        ("base", &base, vec![(&held_a, fam_a), (&held_b, fam_b)]),
        ("incremental", &updated, vec![(&held_a, fam_a), (&held_b, fam_b)]),
        ("scratch", &scratch, vec![(&held_b, fam_b)]),
    ] {
        for (held, fam) in sets {
            let q = mask_quality(model, held, &cfg.mask)?;
            rows.push(IncrementalRow {
                model: name.to_string(),
                family: fam.name().to_string(),
                recall: q.recall,
                precision: q.precision,
            });
        }
    }
    Ok(IncrementalReport {
        rows,
        replay_ratio: inc.replay_ratio,
        train_time_s,
    })
}

/// Builds environment A from the configured clutter density and B by
/// toggling `perturb` cells of A, then runs the shift experiment.
pub fn rl_shift(cfg: &RlShiftConfig, seed: u64) -> Result<ShiftReport> {
    let family = ScenarioFamily::UniformClutter { density: cfg.density };
    let a = generate_scene_sized(family, derive_seed(seed, RL_ENV), cfg.width, cfg.height)?;
    let b = perturb_scene(&a, cfg.perturb, derive_seed(seed, RL_PERTURB))?;
    let env_a = NavMdp::new(a, cfg.rewards.clone())?;
    let env_b = NavMdp::new(b, cfg.rewards.clone())?;
    shift_experiment(&env_a, &env_b, &cfg.hyper, derive_seed(seed, RL_TRAIN), cfg.eval_episodes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{encode_image, InputFeatures, Tensor};
    use crate::grid::Mask;

    fn dummy(n: usize, tag: f64) -> Vec<Sample> {
        (0..n)
            .map(|i| {
                let mut t = Tensor::zeros(3, 3, 3);
                t.data[0] = tag + i as f64;
                Sample::new(t, Mask::new(3, 3)).unwrap()
            })
            .collect()
    }

    #[test]
    fn replay_mix_sizes() {
        let new = dummy(10, 0.0);
        let old = dummy(30, 100.0);
        assert_eq!(mix_replay(&new, &old, 0.0, 1).unwrap().len(), 10);
        let half = mix_replay(&new, &old, 0.5, 1).unwrap();
        assert_eq!(half.len(), 20);
        assert_eq!(half.iter().filter(|s| s.input.data[0] >= 100.0).count(), 10);
        assert_eq!(mix_replay(&new, &old[..4], 0.5, 1).unwrap().len(), 14);
        assert_eq!(mix_replay(&new, &old, 0.75, 1).unwrap().len(), 40);
        assert!(mix_replay(&new, &old, 1.0, 1).is_err());
        assert_eq!(mix_replay(&new, &old, 0.5, 9).unwrap(), mix_replay(&new, &old, 0.5, 9).unwrap());
    }

    #[test]
    fn zero_epochs_is_identity() {
        let fam = ScenarioFamily::Maze { min_chamber: 3, clutter: 0.01 };
        let its = generate_items(&[fam], 2, 4, 12, 12).unwrap();
        let data: Vec<Sample> = its
            .iter()
            .map(|it| {
                let img = crate::grid::render_scene(&it.scene);
                Sample::new(encode_image(&img, InputFeatures::RgbDetour).unwrap(), it.label.mask.clone()).unwrap()
            })
            .collect();
        let model = init_model(&Architecture::default(), 3).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let out = incremental_update(&model, &data, &data, 0.5, &cfg).unwrap();
        assert_eq!(out, model);
    }

    #[test]
    fn rl_shift_is_deterministic() {
        let cfg = RlShiftConfig::default();
        let a = rl_shift(&cfg, 4).unwrap();
        let b = rl_shift(&cfg, 4).unwrap();
        assert_eq!(a.to_csv_string().unwrap().lines().count(), 3);
        let strip = |r: &ShiftReport| r.rows.iter().map(|x| (x.env_id.clone(), x.win_rate_pct)).collect::<Vec<_>>();
        assert_eq!(strip(&a), strip(&b));
    }
}
