//! Encoder-guided planning: threshold the region probabilities, grow the
//! result, and search inside it, falling back to the full grid if needed.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::encoder::RegionProbabilities;
use crate::error::{Error, Result};
use crate::grid::{Direction, GridScene, Mask};
use crate::planners::{PlanResult, Planner};

/// Lower bound applied to reduction percentages.
pub const REDUCTION_FLOOR: f64 = -999.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    FullGrid,
    Fail,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskConfig {
    pub threshold: f64,
    /// Number of 4-neighbor dilation steps.
    pub dilation: usize,
    pub fallback: Fallback,
}

impl Default for MaskConfig {
    fn default() -> Self {
        MaskConfig {
            threshold: 0.5,
            dilation: 2,
            fallback: Fallback::FullGrid,
        }
    }
}

impl MaskConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "threshold must lie in (0, 1), got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskedPlanOutcome {
    /// The answer returned to the caller: the restricted result, or the
    /// full-grid rerun when the fallback fired.
    pub result: PlanResult,
    /// The paired unrestricted run used as the baseline.
    pub baseline: PlanResult,
    pub used_fallback: bool,
    /// Cells in the search region, start and goal included.
    pub mask_size: usize,
    /// Total expansions spent by the masked pipeline (restricted search plus
    /// any fallback rerun).
    pub masked_expansions: usize,
    /// Seconds spent searching by the masked pipeline, fallback included.
    pub masked_time: f64,
    /// Seconds spent turning probabilities into the region.
    pub region_time: f64,
    pub reduction_expansions: f64,
    pub reduction_time: f64,
}

/// `mask[c] = 1 ⇔ probs[c] ≥ τ`.
pub fn binarize(probs: &RegionProbabilities, threshold: f64) -> Result<Mask> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "threshold must lie in (0, 1), got {threshold}"
        )));
    }
    Mask::from_bits(
        probs.width,
        probs.height,
        probs.values.iter().map(|&p| p >= threshold).collect(),
    )
}

/// `steps` rounds of 4-neighbor morphological dilation, clipped at the border.
pub fn dilate(mask: &Mask, steps: usize) -> Mask {
    let (w, h) = (mask.width(), mask.height());
    let mut cur = mask.clone();
    for _ in 0..steps {
        let mut next = cur.clone();
        for p in cur.iter_set() {
            for d in Direction::ALL {
                let (dr, dc) = d.delta();
                if let (Some(r), Some(c)) = (p.row.checked_add_signed(dr), p.col.checked_add_signed(dc)) {
                    if r < h && c < w {
                        next.set(crate::grid::Pos::new(r, c), true);
                    }
                }
            }
        }
        cur = next;
    }
    cur
}

/// `dilate(binarize(probs, τ), r) ∪ {start, goal}`.
pub fn build_region(scene: &GridScene, probs: &RegionProbabilities, cfg: &MaskConfig) -> Result<Mask> {
    if probs.width != scene.width || probs.height != scene.height {
        return Err(Error::shape(
            format!("{}x{}", scene.width, scene.height),
            format!("{}x{}", probs.width, probs.height),
        ));
    }
    let mut region = dilate(&binarize(probs, cfg.threshold)?, cfg.dilation);
    region.set(scene.start, true);
    region.set(scene.goal, true);
    Ok(region)
}

/// `100 · (full − masked) / full`, floored at [`REDUCTION_FLOOR`].
pub fn reduction_percent(full: f64, masked: f64) -> f64 {
    if full <= 0.0 {
        return 0.0;
    }
    (100.0 * (full - masked) / full).max(REDUCTION_FLOOR)
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}

/// Runs the masked pipeline once against a fresh full-grid baseline.
pub fn plan_with_mask(
    scene: &GridScene,
    probs: &RegionProbabilities,
    cfg: &MaskConfig,
    planner: Planner,
) -> Result<MaskedPlanOutcome> {
    plan_with_mask_timed(scene, probs, cfg, planner, 1)
}

/// Like [`plan_with_mask`], but repeats the baseline and masked searches
/// back to back `repeats` times and reports median wall times. Searches are
/// deterministic, so only the timings differ between repeats.
pub fn plan_with_mask_timed(
    scene: &GridScene,
    probs: &RegionProbabilities,
    cfg: &MaskConfig,
    planner: Planner,
    repeats: usize,
) -> Result<MaskedPlanOutcome> {
    cfg.validate()?;
    let repeats = repeats.max(1);

    let started = Instant::now();
    let region = build_region(scene, probs, cfg)?;
    let region_time = started.elapsed().as_secs_f64();
    let mask_size = region.count();

    let mut baseline_times = Vec::with_capacity(repeats);
    let mut masked_times = Vec::with_capacity(repeats);
    let mut last = None;
    for _ in 0..repeats {
        let baseline = planner.run(scene, None)?;
        if !baseline.found() {
            return Err(Error::NoPathAnywhere);
        }
        let restricted = planner.run(scene, Some(&region))?;
        let (result, used_fallback, expansions, time) = if restricted.found() {
            let (e, t) = (restricted.expansions, restricted.wall_time);
            (restricted, false, e, t)
        } else {
            match cfg.fallback {
                Fallback::Fail => return Err(Error::MaskFailed),
                Fallback::FullGrid => {
                    let rerun = planner.run(scene, None)?;
                    let e = restricted.expansions + rerun.expansions;
                    let t = restricted.wall_time + rerun.wall_time;
                    (rerun, true, e, t)
                }
            }
        };
        baseline_times.push(baseline.wall_time);
        masked_times.push(time);
        last = Some((baseline, result, used_fallback, expansions));
    }
    let (baseline, result, used_fallback, masked_expansions) = last.expect("at least one repeat");
    let full_time = median(baseline_times);
    let masked_time = median(masked_times);
    let mut baseline = baseline;
    baseline.wall_time = full_time;
    Ok(MaskedPlanOutcome {
        reduction_expansions: reduction_percent(
            baseline.expansions as f64,
            masked_expansions as f64,
        ),
        reduction_time: reduction_percent(full_time, masked_time),
        result,
        baseline,
        used_fallback,
        mask_size,
        masked_expansions,
        masked_time,
        region_time,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::BCE_EPS;
    use crate::grid::{compute_label, generate_scene, Pos, ScenarioFamily};
    use crate::planners::Heuristic;

    fn probs(w: usize, h: usize, v: f64) -> RegionProbabilities {
        RegionProbabilities::filled(w, h, v)
    }

    #[test]
    fn binarize_threshold_rules() {
        assert_eq!(binarize(&probs(4, 3, 0.4), 0.5).unwrap().count(), 0);
        assert_eq!(binarize(&probs(4, 3, 0.5), 0.5).unwrap().count(), 12);
        let mixed = RegionProbabilities {
            width: 3,
            height: 2,
            values: vec![0.1, 0.7, 0.5, 0.49, 0.99, 0.2],
        };
        assert_eq!(binarize(&mixed, 0.5).unwrap().count(), 3);
        assert!(binarize(&mixed, 1.0).is_err());
        assert!(binarize(&mixed, 0.0).is_err());
    }

    #[test]
    fn dilation_of_a_single_cell_is_a_plus() {
        let mut m = Mask::new(5, 5);
        m.set(Pos::new(2, 2), true);
        let d = dilate(&m, 1);
        assert_eq!(d.count(), 5);
        for p in [Pos::new(1, 2), Pos::new(3, 2), Pos::new(2, 1), Pos::new(2, 3)] {
            assert!(d.get(p));
        }
        let mut corner = Mask::new(5, 5);
        corner.set(Pos::new(0, 0), true);
        assert_eq!(dilate(&corner, 1).count(), 3);
        assert_eq!(dilate(&m, 0), m);
        assert_eq!(dilate(&dilate(&m, 1), 1), dilate(&m, 2));
        assert_eq!(dilate(&m, 2).count(), 13);
    }

    #[test]
    fn full_mask_matches_unrestricted_planner() {
        let scene = generate_scene(ScenarioFamily::UniformClutter { density: 0.2 }, 4).unwrap();
        let p = probs(60, 60, 1.0 - BCE_EPS);
        let out = plan_with_mask(&scene, &p, &MaskConfig::default(), Planner::Dijkstra).unwrap();
        assert!(!out.used_fallback);
        assert!(out.result.same_outcome(&out.baseline));
        assert_eq!(out.reduction_expansions, 0.0);
        assert_eq!(out.mask_size, 3600);
    }

    #[test]
    fn empty_mask_falls_back_to_full_grid() {
        let scene = generate_scene(ScenarioFamily::UniformClutter { density: 0.2 }, 4).unwrap();
        let p = probs(60, 60, BCE_EPS);
        let out = plan_with_mask(&scene, &p, &MaskConfig::default(), Planner::Dijkstra).unwrap();
        assert!(out.used_fallback);
        assert!(out.result.same_outcome(&out.baseline));
        assert!(out.masked_expansions > out.baseline.expansions);
        assert!(out.reduction_expansions < 0.0);

        let strict = MaskConfig {
            fallback: Fallback::Fail,
            ..MaskConfig::default()
        };
        assert!(matches!(
            plan_with_mask(&scene, &p, &strict, Planner::Dijkstra),
            Err(Error::MaskFailed)
        ));
    }

    #[test]
    fn label_mask_keeps_optimal_cost() {
        let scene = generate_scene(ScenarioFamily::UniformClutter { density: 0.2 }, 8).unwrap();
        let label = compute_label(&scene).unwrap();
        let p = RegionProbabilities {
            width: 60,
            height: 60,
            values: label.mask.bits().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        };
        let cfg = MaskConfig {
            dilation: 1,
            ..MaskConfig::default()
        };
        for planner in [Planner::Dijkstra, Planner::Astar(Heuristic::Manhattan)] {
            let out = plan_with_mask(&scene, &p, &cfg, planner).unwrap();
            assert!(!out.used_fallback);
            assert_eq!(out.result.cost, label.cost());
            assert!(out.result.expansions <= out.mask_size);
            assert!(out.reduction_expansions > 0.0);
        }
    }

    #[test]
    fn mismatched_probabilities_are_rejected() {
        let scene = generate_scene(ScenarioFamily::UniformClutter { density: 0.2 }, 4).unwrap();
        assert!(matches!(
            plan_with_mask(&scene, &probs(10, 10, 0.9), &MaskConfig::default(), Planner::Dijkstra),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn reduction_is_floored() {
        assert_eq!(reduction_percent(10.0, 5.0), 50.0);
        assert_eq!(reduction_percent(1.0, 1000.0), REDUCTION_FLOOR);
        assert_eq!(reduction_percent(0.0, 3.0), 0.0);
    }

    #[test]
    fn timed_repeats_keep_search_results() {
        let scene = generate_scene(ScenarioFamily::Rooms {
            room_size: 12,
            door_width: 3,
            clutter: 0.05,
        }, 2)
        .unwrap();
        let p = probs(60, 60, 0.9);
        let once = plan_with_mask(&scene, &p, &MaskConfig::default(), Planner::Dijkstra).unwrap();
        let thrice =
            plan_with_mask_timed(&scene, &p, &MaskConfig::default(), Planner::Dijkstra, 3).unwrap();
        assert!(once.result.same_outcome(&thrice.result));
        assert_eq!(once.masked_expansions, thrice.masked_expansions);
    }
}
