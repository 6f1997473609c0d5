//! Paired full-grid vs masked planning benchmark and mask quality metrics.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::DatasetItem;
use crate::encoder::{EncoderModel, RegionProbabilities, BCE_EPS};
use crate::error::{Error, Result};
use crate::grid::{render_scene, Mask};
use crate::masked::{binarize, dilate, plan_with_mask_timed, reduction_percent, MaskConfig};
use crate::planners::Planner;

/// Anything that can score every cell of a scene.
pub trait ProbabilitySource: Sync {
    fn probabilities(&self, item: &DatasetItem) -> Result<RegionProbabilities>;
}

impl ProbabilitySource for EncoderModel {
    fn probabilities(&self, item: &DatasetItem) -> Result<RegionProbabilities> {
        self.predict(&render_scene(&item.scene))
    }
}

/// Scores the true label path as certain and everything else as impossible.
pub struct OracleLabels;

impl ProbabilitySource for OracleLabels {
    fn probabilities(&self, item: &DatasetItem) -> Result<RegionProbabilities> {
        let s = &item.scene;
        Ok(RegionProbabilities {
            width: s.width,
            height: s.height,
            values: item
                .label
                .mask
                .bits()
                .iter()
                .map(|&b| if b { 1.0 - BCE_EPS } else { BCE_EPS })
                .collect(),
        })
    }
}

/// Scores every cell as certain.
pub struct FullRegion;

impl ProbabilitySource for FullRegion {
    fn probabilities(&self, item: &DatasetItem) -> Result<RegionProbabilities> {
        Ok(RegionProbabilities::filled(item.scene.width, item.scene.height, 1.0 - BCE_EPS))
    }
}

/// Recall and precision of `region` against `label`; both are 0 for an empty
/// region.
pub fn region_quality(region: &Mask, label: &Mask) -> (f64, f64) {
    let size = region.count();
    if size == 0 {
        return (0.0, 0.0);
    }
    let hit = region.intersection_count(label) as f64;
    (hit / label.count() as f64, hit / size as f64)
}

fn quality_region(probs: &RegionProbabilities, cfg: &MaskConfig) -> Result<Mask> {
    Ok(dilate(&binarize(probs, cfg.threshold)?, cfg.dilation))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskQuality {
    pub recall: f64,
    pub precision: f64,
    pub scenes: usize,
}

/// Mean recall and precision of the thresholded and dilated region (without
/// forced endpoints) over `items`.
pub fn mask_quality(source: &dyn ProbabilitySource, items: &[DatasetItem], cfg: &MaskConfig) -> Result<MaskQuality> {
    cfg.validate()?;
    if items.is_empty() {
        return Err(Error::InvalidParameter("mask quality needs at least one scene".into()));
    }
    let per: Vec<(f64, f64)> = items
        .par_iter()
        .map(|it| Ok(region_quality(&quality_region(&source.probabilities(it)?, cfg)?, &it.label.mask)))
        .collect::<Result<_>>()?;
    let n = per.len() as f64;
    Ok(MaskQuality {
        recall: per.iter().map(|q| q.0).sum::<f64>() / n,
        precision: per.iter().map(|q| q.1).sum::<f64>() / n,
        scenes: per.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub scene_id: String,
    pub full_expansions: usize,
    /// Restricted search plus any fallback rerun.
    pub masked_expansions: usize,
    pub used_fallback: bool,
    pub mask_size: usize,
    pub recall: f64,
    pub precision: f64,
    /// Seconds; median over the timing repeats.
    pub full_time_s: f64,
    pub masked_time_s: f64,
    /// Encoder inference plus region construction.
    pub encoder_time_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchAggregates {
    pub scenes: usize,
    pub skipped: usize,
    pub mean_reduction_expansions_pct: f64,
    pub mean_reduction_time_planner_pct: f64,
    pub mean_reduction_time_end_to_end_pct: f64,
    pub fallback_rate_pct: f64,
    pub mask_recall: f64,
    pub mask_precision: f64,
}

impl BenchAggregates {
    pub fn from_rows(rows: &[BenchRow], skipped: usize) -> Self {
        let n = rows.len().max(1) as f64;
        let mean = |f: &dyn Fn(&BenchRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
        BenchAggregates {
            scenes: rows.len(),
            skipped,
            mean_reduction_expansions_pct: mean(&|r| {
                reduction_percent(r.full_expansions as f64, r.masked_expansions as f64)
            }),
            mean_reduction_time_planner_pct: mean(&|r| reduction_percent(r.full_time_s, r.masked_time_s)),
            mean_reduction_time_end_to_end_pct: mean(&|r| {
                reduction_percent(r.full_time_s, r.masked_time_s + r.encoder_time_s)
            }),
            fallback_rate_pct: 100.0 * rows.iter().filter(|r| r.used_fallback).count() as f64 / n,
            mask_recall: mean(&|r| r.recall),
            mask_precision: mean(&|r| r.precision),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub rows: Vec<BenchRow>,
    /// Scenes with no path at all, excluded from the rows.
    pub skipped: Vec<String>,
    pub aggregates: BenchAggregates,
}

/// CSV columns holding wall-clock measurements; every other column is
/// reproducible from the seeds.
pub const BENCH_TIME_COLUMNS: [&str; 3] = ["full_time_s", "masked_time_s", "encoder_time_s"];

#[derive(Serialize, Deserialize)]
struct Sidecar {
    config: serde_json::Value,
    skipped: Vec<String>,
    aggregates: BenchAggregates,
}

/// Path of the JSON sidecar written next to a CSV report.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

impl BenchmarkReport {
    pub fn write_csv(&self, out: impl std::io::Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(r)?;
        }
        if self.rows.is_empty() {
            w.write_record([
                "scene_id",
                "full_expansions",
                "masked_expansions",
                "used_fallback",
                "mask_size",
                "recall",
                "precision",
                "full_time_s",
                "masked_time_s",
                "encoder_time_s",
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// Writes the CSV and its JSON sidecar holding `config` and the aggregates.
    pub fn save(&self, csv_path: &Path, config: serde_json::Value) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        fs::write(csv_path, buf).map_err(|e| Error::io(csv_path, e))?;
        let side = Sidecar {
            config,
            skipped: self.skipped.clone(),
            aggregates: self.aggregates.clone(),
        };
        let path = sidecar_path(csv_path);
        fs::write(&path, serde_json::to_string_pretty(&side)?).map_err(|e| Error::io(&path, e))
    }

    /// Reads a saved report and checks that the stored aggregates equal a
    /// fresh recomputation from the rows.
    pub fn load(csv_path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(csv_path)?;
        let rows = rdr.deserialize().collect::<std::result::Result<Vec<BenchRow>, _>>()?;
        let path = sidecar_path(csv_path);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let side: Sidecar = serde_json::from_str(&text)?;
        let recomputed = BenchAggregates::from_rows(&rows, side.skipped.len());
        if recomputed != side.aggregates {
            return Err(Error::Report(format!(
                "aggregates in {} do not match the rows in {}",
                path.display(),
                csv_path.display()
            )));
        }
        Ok(BenchmarkReport {
            rows,
            skipped: side.skipped,
            aggregates: recomputed,
        })
    }
}

/// Runs the full-grid baseline and the masked pipeline on every scene.
/// Scenes are processed in parallel and reported in input order.
pub fn speedup_bench(
    source: &dyn ProbabilitySource,
    items: &[DatasetItem],
    cfg: &MaskConfig,
    planner: Planner,
    repeats: usize,
) -> Result<BenchmarkReport> {
    cfg.validate()?;
    if items.is_empty() {
        return Err(Error::InvalidParameter("benchmark needs at least one scene".into()));
    }
    let outcomes: Vec<Option<BenchRow>> = items
        .par_iter()
        .map(|it| {
            let started = Instant::now();
            let probs = source.probabilities(it)?;
            let inference = started.elapsed().as_secs_f64();
            let out = match plan_with_mask_timed(&it.scene, &probs, cfg, planner, repeats) {
                Ok(o) => o,
                Err(Error::NoPathAnywhere) => {
                    log::warn!("skipping {}: no path on the full grid", it.id);
                    return Ok(None);
                }
                Err(e) => return Err(e),
            };
            let (recall, precision) = region_quality(&quality_region(&probs, cfg)?, &it.label.mask);
            Ok(Some(BenchRow {
                scene_id: it.id.clone(),
                full_expansions: out.baseline.expansions,
                masked_expansions: out.masked_expansions,
                used_fallback: out.used_fallback,
                mask_size: out.mask_size,
                recall,
                precision,
                full_time_s: out.baseline.wall_time,
                masked_time_s: out.masked_time,
                encoder_time_s: inference + out.region_time,
            }))
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(items.len());
    let mut skipped = Vec::new();
    for (it, o) in items.iter().zip(outcomes) {
        match o {
            Some(r) => rows.push(r),
            None => skipped.push(it.id.clone()),
        }
    }
    let aggregates = BenchAggregates::from_rows(&rows, skipped.len());
    Ok(BenchmarkReport {
        rows,
        skipped,
        aggregates,
    })
}
