use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use ppe_core::encoder::{load_model, save_model};
use ppe_core::grid::parse_image;
use ppe_core::harness::{
    self, encoder_shift, gen_dataset_sized, generate_items, incremental_experiment, load_dataset,
    parse_families, rl_shift, speedup_bench, train_encoder, write_report, BenchmarkReport,
    ExperimentConfig, PlannerChoice,
};
use ppe_core::harness::netpbm::decode_ppm;
use ppe_core::masked::plan_with_mask_timed;
use ppe_core::{Error, Result};

#[derive(Parser)]
#[command(name = "ppe", version, about = "Learned search-region pruning and generalization benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON experiment config; command-line flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labelled dataset with a checksummed manifest.
    Gen {
        /// `all` or a comma-separated list of family names.
        #[arg(long)]
        families: String,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 60)]
        width: usize,
        #[arg(long, default_value_t = 60)]
        height: usize,
    },
    /// Train an encoder and write a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset directory; without it, training scenes are generated in memory.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Plan on one rendered scene with encoder guidance.
    Plan {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
        /// P6 image of the scene.
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, value_enum)]
        planner: Option<PlannerArg>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Paired full vs masked planning over a dataset.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum)]
        planner: Option<PlannerArg>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on the training families and compare mask recall on unseen ones.
    ShiftEncoder {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: u64,
        /// Number of consecutive seeds starting at --seed.
        #[arg(long, default_value_t = 3)]
        runs: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a tabular agent on one grid and evaluate it on a perturbed copy.
    ShiftRl {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fine-tune on an unseen family with replay and measure recovery.
    Incr {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reload a benchmark report, verify its aggregates and print them.
    Report {
        #[arg(long)]
        input: PathBuf,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum PlannerArg {
    Bfs,
    Dijkstra,
    Astar,
    AstarZero,
}

impl From<PlannerArg> for PlannerChoice {
    fn from(p: PlannerArg) -> Self {
        match p {
            PlannerArg::Bfs => PlannerChoice::Bfs,
            PlannerArg::Dijkstra => PlannerChoice::Dijkstra,
            PlannerArg::Astar => PlannerChoice::Astar,
            PlannerArg::AstarZero => PlannerChoice::AstarZero,
        }
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    match &common.config {
        Some(path) => ExperimentConfig::load(path),
        None => Ok(ExperimentConfig::default()),
    }
}

fn config_json(cfg: &ExperimentConfig) -> serde_json::Value {
    serde_json::to_value(cfg).expect("config serializes")
}

fn csv_bytes(write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(buf)
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        _ => Ok(()),
    }
}

fn run(cli: Cli) -> Result<()> {
    harness::init_thread_pool()?;
    match cli.command {
        Command::Gen {
            families,
            count,
            seed,
            out,
            width,
            height,
        } => {
            let fams = parse_families(&families)?;
            let manifest = gen_dataset_sized(&fams, count, seed, &out, width, height)?;
            println!(
                "wrote {} scenes ({} families) to {}",
                manifest.entries.len(),
                manifest.families.len(),
                out.display()
            );
        }
        Command::Train {
            common,
            data,
            seed,
            out,
            epochs,
        } => {
            let mut cfg = load_config(&common)?;
            cfg.seed = seed;
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            let data = data.or_else(|| cfg.train_dataset.clone());
            let items = match &data {
                Some(dir) => load_dataset(dir)?.1,
                None => generate_items(
                    &cfg.train_family_params()?,
                    cfg.train_count,
                    harness::derive_seed(seed, 1),
                    60,
                    60,
                )?,
            };
            let started = std::time::Instant::now();
            let model = train_encoder(&items, &cfg.train, seed)?;
            ensure_parent(&out)?;
            save_model(&model, &out)?;
            let side = json!({
                "config": config_json(&cfg),
                "seed": seed,
                "scenes": items.len(),
                "train_time_s": started.elapsed().as_secs_f64(),
            });
            let side_path = out.with_extension("json");
            fs::write(&side_path, serde_json::to_string_pretty(&side)?).map_err(|e| Error::io(&side_path, e))?;
            println!("trained on {} scenes, wrote {}", items.len(), out.display());
        }
        Command::Plan {
            common,
            model,
            scene,
            planner,
            out,
        } => {
            let mut cfg = load_config(&common)?;
            if model.is_some() {
                cfg.model = model;
            }
            if let Some(p) = planner {
                cfg.planner = p.into();
            }
            let model = load_model(cfg.require_model()?)?;
            let bytes = fs::read(&scene).map_err(|e| Error::io(&scene, e))?;
            let image = decode_ppm(&bytes)?;
            let grid = parse_image(&image, None, 0)?;
            let probs = model.predict(&image)?;
            let outcome = plan_with_mask_timed(&grid, &probs, &cfg.mask, cfg.planner.planner(), cfg.timing_repeats)?;
            println!(
                "cost {} | expansions full {} masked {} ({:.1}% fewer) | fallback {}",
                outcome.result.cost,
                outcome.baseline.expansions,
                outcome.masked_expansions,
                outcome.reduction_expansions,
                outcome.used_fallback
            );
            if let Some(path) = out {
                ensure_parent(&path)?;
                fs::write(&path, serde_json::to_string_pretty(&outcome)?).map_err(|e| Error::io(&path, e))?;
            }
        }
        Command::Bench {
            common,
            model,
            data,
            planner,
            out,
        } => {
            let mut cfg = load_config(&common)?;
            if model.is_some() {
                cfg.model = model;
            }
            if data.is_some() {
                cfg.eval_dataset = data;
            }
            if let Some(p) = planner {
                cfg.planner = p.into();
            }
            let model_path = cfg.require_model()?.to_path_buf();
            let data = cfg
                .eval_dataset
                .clone()
                .ok_or_else(|| Error::Config("missing field `eval_dataset` (or --data)".into()))?;
            let model = load_model(&model_path)?;
            let (_, items) = load_dataset(&data)?;
            let report = speedup_bench(&model, &items, &cfg.mask, cfg.planner.planner(), cfg.timing_repeats)?;
            ensure_parent(&out)?;
            report.save(&out, config_json(&cfg))?;
            let a = &report.aggregates;
            println!(
                "{} scenes ({} skipped) | expansions -{:.1}% | planner time -{:.1}% | end-to-end time -{:.1}% | fallback {:.1}% | recall {:.3} precision {:.3}",
                a.scenes,
                a.skipped,
                a.mean_reduction_expansions_pct,
                a.mean_reduction_time_planner_pct,
                a.mean_reduction_time_end_to_end_pct,
                a.fallback_rate_pct,
                a.mask_recall,
                a.mask_precision
            );
        }
        Command::ShiftEncoder {
            common,
            seed,
            runs,
            out,
        } => {
            let mut cfg = load_config(&common)?;
            cfg.seed = seed;
            if runs == 0 {
                return Err(Error::Config("--runs must be positive".into()));
            }
            let seeds: Vec<u64> = (0..runs).map(|i| seed.wrapping_add(i)).collect();
            let report = encoder_shift(&cfg, &seeds)?;
            ensure_parent(&out)?;
            let side = json!({
                "config": config_json(&cfg),
                "seeds": seeds,
                "recall_gap": report.recall_gap(),
                "train_time_s": report.train_time_s,
            });
            write_report(&out, &csv_bytes(|b| report.write_csv(b))?, &side)?;
            println!("seen − unseen recall gap: {:.3}", report.recall_gap());
        }
        Command::ShiftRl { common, seed, out } => {
            let mut cfg = load_config(&common)?;
            cfg.seed = seed;
            let report = rl_shift(&cfg.rl, seed)?;
            ensure_parent(&out)?;
            let side = json!({
                "config": config_json(&cfg),
                "seed": seed,
                "train_time_s": report.train_time_s,
                "train_win_rate_pct": report.train_win_rate_pct,
            });
            write_report(&out, &csv_bytes(|b| report.write_csv(b))?, &side)?;
            for r in &report.rows {
                println!("env {}: win rate {:.1}% over {} episodes", r.env_id, r.win_rate_pct, r.episodes);
            }
        }
        Command::Incr { common, seed, out } => {
            let mut cfg = load_config(&common)?;
            cfg.seed = seed;
            let report = incremental_experiment(&cfg, seed)?;
            ensure_parent(&out)?;
            let side = json!({
                "config": config_json(&cfg),
                "seed": seed,
                "train_time_s": report.train_time_s,
            });
            write_report(&out, &csv_bytes(|b| report.write_csv(b))?, &side)?;
            for r in &report.rows {
                println!("{:<12} {:<16} recall {:.3}", r.model, r.family, r.recall);
            }
        }
        Command::Report { input } => {
            let report = BenchmarkReport::load(&input)?;
            println!("{}", serde_json::to_string_pretty(&report.aggregates)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 2 } else { 1 })
        }
    }
}
