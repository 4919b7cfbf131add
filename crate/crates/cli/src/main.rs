use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pvrbench_core::evalharness::aggregate_seeds;
use pvrbench_core::Error;

use pvrbench_cli::config::{standard_suite, ExperimentConfig};
use pvrbench_cli::figure::{collect_entries, emit_figure, render_table};
use pvrbench_cli::runner::{
    ensure_corpus, ensure_dataset, ensure_pretrained_backbone, read_records, run_experiment,
};

#[derive(Parser)]
#[command(name = "pvrbench", about = "Pretrained-visual-representation control benchmark")]
struct Cli {
    /// Workspace root for caches, runs, results, and figures.
    #[arg(long, global = true, default_value = ".")]
    root: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build (or reuse) the pretraining corpus and backbone for a config.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        /// Retrain even if a cached backbone exists.
        #[arg(long)]
        force: bool,
    },
    /// Collect (or reuse) the demonstration dataset for a config.
    Collect {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train and evaluate every seed of a config, recording results.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Run only this seed instead of the config's full seed list.
        #[arg(long)]
        seed: Option<u64>,
        /// Rerun seeds that already have results.
        #[arg(long)]
        force: bool,
    },
    /// Aggregate recorded scores for a config and print the summary.
    Eval {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run every config of a standard figure grid (fig3..fig7).
    Suite {
        name: String,
        #[arg(long)]
        force: bool,
        /// Write the grid's config files to this directory instead of running.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Emit the PNG chart and text table for a standard figure grid.
    Plot {
        name: String,
        /// Output directory; defaults to <root>/figures.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: &PathBuf) -> pvrbench_core::Result<ExperimentConfig> {
    let cfg: ExperimentConfig = serde_json::from_str(&fs::read_to_string(path)?)?;
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> pvrbench_core::Result<()> {
    let root = cli.root;
    match cli.cmd {
        Cmd::Pretrain { config, force } => {
            let cfg = load_config(&config)?;
            let corpus = ensure_corpus(&cfg, &root)?;
            println!("corpus ready: {} frames, checksum {}", corpus.len(), corpus.checksum());
            if cfg.pvr.method.has_backbone() {
                let dir = ensure_pretrained_backbone(&cfg, &root, force)?;
                println!("backbone ready: {}", dir.display());
            } else {
                println!("method {} needs no pretraining", cfg.pvr.method.as_str());
            }
        }
        Cmd::Collect { config } => {
            let cfg = load_config(&config)?;
            let dir = ensure_dataset(&cfg, &root)?;
            println!("dataset ready: {}", dir.display());
        }
        Cmd::Train { config, seed, force } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = seed {
                cfg.seeds = vec![s];
            }
            for outcome in run_experiment(&cfg, &root, force)? {
                let tag = if outcome.reused { "reused" } else { "trained" };
                println!(
                    "{} seed {}: score {:.2} ({tag})",
                    cfg.experiment_id, outcome.seed, outcome.report.score
                );
            }
        }
        Cmd::Eval { config } => {
            let cfg = load_config(&config)?;
            let records = read_records(&root)?;
            let hash = cfg.hash();
            let per_seed: Vec<f64> = cfg
                .seeds
                .iter()
                .filter_map(|&s| {
                    records
                        .iter()
                        .find(|r| r.config_hash == hash && r.seed == s)
                        .map(|r| r.report.score)
                })
                .collect();
            if per_seed.len() < cfg.seeds.len() {
                return Err(Error::InvalidInput(format!(
                    "{} of {} seeds have results; run `pvrbench train` first",
                    per_seed.len(),
                    cfg.seeds.len()
                )));
            }
            let agg = aggregate_seeds(&per_seed)?;
            match agg.ci_half_width {
                Some(ci) => println!(
                    "{}: {:.2} +/- {:.2} (n={})",
                    cfg.experiment_id, agg.mean, ci, agg.n_seeds
                ),
                None => println!("{}: {:.2} (n=1)", cfg.experiment_id, agg.mean),
            }
        }
        Cmd::Suite { name, force, dump } => {
            if let Some(dir) = dump {
                fs::create_dir_all(&dir)?;
                for cfg in standard_suite(&name)? {
                    let path = dir.join(format!("{}.json", cfg.experiment_id));
                    fs::write(&path, serde_json::to_string_pretty(&cfg)?)?;
                    println!("wrote {}", path.display());
                }
                return Ok(());
            }
            for cfg in standard_suite(&name)? {
                println!("== {}", cfg.experiment_id);
                for outcome in run_experiment(&cfg, &root, force)? {
                    let tag = if outcome.reused { "reused" } else { "trained" };
                    println!("   seed {}: score {:.2} ({tag})", outcome.seed, outcome.report.score);
                }
            }
        }
        Cmd::Plot { name, out } => {
            let configs = standard_suite(&name)?;
            let records = read_records(&root)?;
            let entries = collect_entries(&configs, &records)?;
            let out_dir = out.unwrap_or_else(|| root.join("figures"));
            emit_figure(&name, &entries, &out_dir)?;
            print!("{}", render_table(&name, &entries));
            println!("wrote {}", out_dir.join(format!("{name}.png")).display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidConfig(_)
                | Error::InvalidSpec(_)
                | Error::InvalidInput(_)
                | Error::InvalidLayer(_)
                | Error::InvalidProtocol(_)
                | Error::Serde(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
