//! Benchmark and experiment behaviour at reduced scale.

use ppe_core::encoder::{backward, init_model, train, Architecture, TrainConfig};
use ppe_core::grid::ScenarioFamily;
use ppe_core::harness::{
    generate_items, incremental_update, mask_quality, samples, speedup_bench, FullRegion,
    OracleLabels,
};
use ppe_core::masked::{Fallback, MaskConfig};
use ppe_core::planners::{Heuristic, Planner};

fn clutter(n: usize, seed: u64, size: usize) -> Vec<ppe_core::harness::DatasetItem> {
    generate_items(&[ScenarioFamily::UniformClutter { density: 0.2 }], n, seed, size, size).unwrap()
}

#[test]
fn oracle_masks_cut_expansions_on_20x20_and_larger() {
    let cfg = MaskConfig { threshold: 0.5, dilation: 1, fallback: Fallback::FullGrid };
    for size in [20, 32, 60] {
        let items = clutter(30, size as u64, size);
        for planner in [Planner::Dijkstra, Planner::Bfs, Planner::Astar(Heuristic::Manhattan)] {
            let report = speedup_bench(&OracleLabels, &items, &cfg, planner, 1).unwrap();
            let a = &report.aggregates;
            assert!(a.mean_reduction_expansions_pct > 0.0, "{size} {planner:?}: {a:?}");
            assert_eq!(a.fallback_rate_pct, 0.0);
            assert_eq!(a.mask_recall, 1.0);
            for row in &report.rows {
                assert!(row.masked_expansions <= row.mask_size + 2);
            }
        }
    }
}

#[test]
fn full_region_changes_nothing() {
    let items = clutter(20, 4, 24);
    let report = speedup_bench(&FullRegion, &items, &MaskConfig::default(), Planner::Dijkstra, 1).unwrap();
    assert_eq!(report.aggregates.mean_reduction_expansions_pct, 0.0);
    assert_eq!(report.aggregates.fallback_rate_pct, 0.0);
    for row in &report.rows {
        assert_eq!(row.full_expansions, row.masked_expansions);
    }
}

#[test]
fn quality_conventions() {
    let items = clutter(10, 5, 20);
    let cfg = MaskConfig { threshold: 0.5, dilation: 0, fallback: Fallback::FullGrid };
    let q = mask_quality(&OracleLabels, &items, &cfg).unwrap();
    assert_eq!((q.recall, q.precision), (1.0, 1.0));

    // an untrained head scores everything near 0.5; a threshold above that
    // empties the region
    let model = init_model(&Architecture::default(), 0).unwrap();
    let strict = MaskConfig { threshold: 0.999, ..cfg };
    let q = mask_quality(&model, &items, &strict).unwrap();
    assert_eq!((q.recall, q.precision), (0.0, 0.0));
}

#[test]
fn zero_epoch_update_is_a_no_op() {
    let items = clutter(6, 6, 20);
    let arch = Architecture::default();
    let data = samples(&items, arch.input).unwrap();
    let model = init_model(&arch, 1).unwrap();
    let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
    let same = incremental_update(&model, &data[..3], &data[3..], 0.5, &cfg).unwrap();
    assert_eq!(same, model);
    let mask = MaskConfig::default();
    assert_eq!(
        mask_quality(&model, &items, &mask).unwrap(),
        mask_quality(&same, &items, &mask).unwrap()
    );
}

fn family(name: &str, n: usize, seed: u64) -> Vec<ppe_core::harness::DatasetItem> {
    generate_items(&[ScenarioFamily::by_name(name).unwrap()], n, seed, 60, 60).unwrap()
}

#[test]
fn replay_limits_forgetting_and_fine_tuning_helps_the_new_family() {
    let arch = Architecture::default();
    let train_cfg = TrainConfig::default();
    let mask = MaskConfig::default();
    for seed in 1..=3u64 {
        let old = samples(&family("uniform_clutter", 200, 100 + seed), arch.input).unwrap();
        let held_old = samples(&family("uniform_clutter", 40, 200 + seed), arch.input).unwrap();
        let new_items = family("diagonal_walls", 80, 300 + seed);
        let new = samples(&new_items, arch.input).unwrap();
        let held_new = family("diagonal_walls", 40, 400 + seed);

        let base = train(&init_model(&arch, seed).unwrap(), &old, &train_cfg).unwrap().0;
        let old_loss = |m| backward(m, &held_old, train_cfg.weighting).unwrap().loss;
        let fine = |rho| incremental_update(&base, &new, &old, rho, &TrainConfig { seed, ..train_cfg }).unwrap();
        let (plain, replay) = (fine(0.0), fine(0.5));

        // forgetting: held-out loss on the old family rises, less so with replay
        let (l_base, l_plain, l_replay) = (old_loss(&base), old_loss(&plain), old_loss(&replay));
        assert!(l_plain > l_base, "seed {seed}: {l_base} -> {l_plain}");
        assert!(l_plain >= l_replay, "seed {seed}: plain {l_plain} < replay {l_replay}");

        let recall = |m| mask_quality(m, &held_new, &mask).unwrap().recall;
        assert!(recall(&replay) >= recall(&base), "seed {seed}: {} < {}", recall(&replay), recall(&base));
    }
}
