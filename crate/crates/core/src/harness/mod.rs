//! Dataset and report persistence plus the end-to-end experiments.

pub mod bench;
pub mod config;
pub mod dataset;
pub mod experiments;
pub mod netpbm;

pub use bench::{
    mask_quality, region_quality, sidecar_path, speedup_bench, BenchAggregates, BenchRow,
    BenchmarkReport, BENCH_TIME_COLUMNS,
    FullRegion, MaskQuality, OracleLabels, ProbabilitySource,
};
pub use config::{ExperimentConfig, IncrementalConfig, PlannerChoice, RlShiftConfig};
pub use dataset::{
    gen_dataset, gen_dataset_sized, generate_items, load_dataset, parse_families, read_manifest,
    samples, DatasetItem, DatasetManifest, FamilyEntry, SceneEntry, MANIFEST_FILE,
    MANIFEST_FORMAT_VERSION,
};
pub use experiments::{
    encoder_shift, incremental_experiment, incremental_update, mix_replay, rl_shift, train_encoder,
    EncoderShiftReport, EncoderShiftRow, IncrementalReport, IncrementalRow,
};

use crate::error::{Error, Result};

/// Environment variable capping the worker pool size.
pub const THREADS_ENV: &str = "PPE_THREADS";

/// Mixes `stream` into `base` (SplitMix64 finaliser) so that independent
/// parts of an experiment draw from unrelated seeds.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Configures the global worker pool from `PPE_THREADS` if set. Results never
/// depend on the pool size.
pub fn init_thread_pool() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got `{raw}`")))?;
    // a pool that already exists keeps its size
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Writes a CSV report and its JSON sidecar (same stem, `.json`).
pub fn write_report(csv_path: &std::path::Path, csv: &[u8], sidecar: &serde_json::Value) -> Result<()> {
    std::fs::write(csv_path, csv).map_err(|e| Error::io(csv_path, e))?;
    let side = bench::sidecar_path(csv_path);
    let text = serde_json::to_string_pretty(sidecar)?;
    std::fs::write(&side, text).map_err(|e| Error::io(&side, e))
}
