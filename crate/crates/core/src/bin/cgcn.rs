use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cgcn::checkpoint;
use cgcn::config::{parse_list, RunConfig};
use cgcn::graph::{generate_sbm, read_labels};
use cgcn::metrics::{evaluate, Contingency};
use cgcn::report::{
    ensure_dir, losses_csv, write_ablation_outputs, write_run_outputs, write_sweep_outputs,
};
use cgcn::trainer::{self, PreparedData, DEFAULT_GRID};
use cgcn::{Error, Result};

#[derive(Parser)]
#[command(
    name = "cgcn",
    version,
    about = "Deep graph clustering with contrastive pre-training and multi-order fusion"
)]
struct Cli {
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set epochs_train=50`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a stochastic-block-model dataset (features.txt, edges.txt, labels.txt).
    Synth,
    /// Run both pre-training phases and write checkpoint.bin.
    Pretrain,
    /// Full pipeline, or phase 3 only when a checkpoint is given.
    Train {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Score predicted labels against ground truth.
    Eval {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        pred: PathBuf,
    },
    /// base, +C, +S and full variants with identical seeds.
    Ablate {
        /// Comma-separated seeds; defaults to the config seed.
        #[arg(long)]
        seeds: Option<String>,
    },
    /// α × β grid from one shared pre-trained model.
    Sweep {
        #[arg(long)]
        alphas: Option<String>,
        #[arg(long)]
        betas: Option<String>,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    for kv in &cli.overrides {
        cfg.apply_override(kv)?;
    }
    if let Some(dir) = &cli.out_dir {
        cfg.out_dir = dir.clone();
    }
    Ok(cfg)
}

fn write_checkpoint(
    dir: &Path,
    cfg: &RunConfig,
    data: &PreparedData,
    model: &cgcn::model::Model,
) -> Result<()> {
    let meta = trainer::checkpoint_meta(cfg, data, model);
    checkpoint::save(&dir.join("checkpoint.bin"), &model.params, &meta)
}

fn execute(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let out = cfg.out_dir.clone();
    match &cli.command {
        Command::Synth => {
            cfg.validate()?;
            let ds = generate_sbm(&cfg.sbm_spec())?;
            ensure_dir(&out)?;
            ds.save(
                &out.join("features.txt"),
                &out.join("edges.txt"),
                Some(&out.join("labels.txt")),
            )?;
            println!(
                "{}",
                serde_json::json!({ "n": ds.n_nodes(), "k": ds.k, "edges": ds.edges.len(), "dim": ds.n_features() })
            );
        }
        Command::Pretrain => {
            let data = trainer::prepare_data(&cfg)?;
            let pre = trainer::pretrain(&cfg, &data)?;
            ensure_dir(&out)?;
            write_checkpoint(&out, &cfg, &data, &pre.model)?;
            std::fs::write(out.join("pretrain_losses.csv"), losses_csv(&pre.trace)).map_err(
                |e| Error::Io {
                    path: out.join("pretrain_losses.csv"),
                    source: e,
                },
            )?;
        }
        Command::Train { checkpoint: ckpt } => {
            let data = trainer::prepare_data(&cfg)?;
            let (model, trace) = match ckpt {
                Some(path) => {
                    let (params, meta) = checkpoint::load(path)?;
                    if meta.n_nodes != data.dataset.n_nodes() {
                        return Err(Error::Validation(format!(
                            "checkpoint was trained on {} nodes, dataset has {}",
                            meta.n_nodes,
                            data.dataset.n_nodes()
                        )));
                    }
                    (
                        trainer::model_from_checkpoint(&cfg, &data, &params)?,
                        Vec::new(),
                    )
                }
                None => {
                    let pre = trainer::pretrain(&cfg, &data)?;
                    (pre.model, pre.trace)
                }
            };
            let (report, model) = trainer::train(&cfg, &data, model, trace)?;
            write_run_outputs(&out, &report)?;
            write_checkpoint(&out, &cfg, &data, &model)?;
            if let Some(m) = report.metrics {
                println!("{}", serde_json::to_string(&m)?);
            }
        }
        Command::Eval { truth, pred } => {
            let t = read_labels(truth)?;
            let p = read_labels(pred)?;
            let scores = evaluate(&t, &p)?;
            let k = Contingency::new(&t, &p)?.k_true();
            println!(
                "{}",
                serde_json::json!({
                    "acc": scores.acc, "nmi": scores.nmi, "ari": scores.ari, "f1": scores.f1,
                    "n": t.len(), "k": k,
                })
            );
        }
        Command::Ablate { seeds } => {
            let seeds = match seeds {
                Some(s) => parse_list::<u64>("seeds", s)?,
                None => vec![cfg.seed],
            };
            let rows = trainer::ablate(&cfg, &seeds)?;
            write_ablation_outputs(&out, &rows)?;
            for (variant, s) in cgcn::report::ablation_means(&rows) {
                println!(
                    "{variant}: acc {:.4} nmi {:.4} ari {:.4} f1 {:.4}",
                    s.acc, s.nmi, s.ari, s.f1
                );
            }
        }
        Command::Sweep { alphas, betas } => {
            let grid = |name: &str, v: &Option<String>| match v {
                Some(s) => parse_list::<f64>(name, s),
                None => Ok(DEFAULT_GRID.to_vec()),
            };
            let cells = trainer::sweep(&cfg, &grid("alphas", alphas)?, &grid("betas", betas)?)?;
            write_sweep_outputs(&out, &cells)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!(
                "{}",
                serde_json::json!({ "error": e.kind(), "message": e.to_string() })
            );
            ExitCode::FAILURE
        }
    }
}
