use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use manifold_gain::harness::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use manifold_gain::harness::config::ExperimentConfig;
use manifold_gain::harness::report::{self, Column, Pick, Target};
use manifold_gain::harness::train::{metric_batch, TrainState};
use manifold_gain::harness::{self as h, load_dataset};
use manifold_gain::manifold::{barrier_samples, ManifoldEstimate, ManifoldMetric, MetricSeeds};
use manifold_gain::proxies::{compute_proxies, parse_kinds};
use manifold_gain::{expand, BatchLoss, Error, ExpansionPlan, Model, Result, WidenPlan};

#[derive(Parser)]
#[command(name = "manifold-gain", version, about = "Minima-manifold size as a predictor of expansion gains")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file, or `default` for the built-in desk-scale setup.
    #[arg(long, global = true, default_value = "default")]
    config: PathBuf,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides `[output] dir`).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a base model to early stopping and save its best checkpoint.
    Train,
    /// Widen or deepen a checkpoint and verify function preservation.
    Expand {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Width multiplier for `--layer`.
        #[arg(long, conflicts_with = "deepen_after")]
        factor: Option<f64>,
        #[arg(long)]
        layer: Option<usize>,
        /// Insert an identity conv after this ReLU layer.
        #[arg(long)]
        deepen_after: Option<usize>,
    },
    /// Barrier chain and edge ratio of a checkpoint; `--base` adds the metric M.
    Manifold {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        base: Option<PathBuf>,
        #[arg(long)]
        q: Option<f64>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        layer: Option<usize>,
        #[arg(long)]
        batch_index: Option<usize>,
    },
    /// Zero-cost proxies (and SoTL-E from the stored history) for checkpoints.
    Proxies {
        #[arg(long, required = true, num_args = 1..)]
        checkpoint: Vec<PathBuf>,
        #[arg(long, default_value = "gradnorm,jacov,snip,grasp,synflow,sotl_e")]
        metrics: String,
        #[arg(long)]
        batch_index: Option<usize>,
    },
    /// (q, n) sensitivity grid of M at t = 0.
    Sweep {
        /// experiments.csv from a previous `run`, to correlate each cell with G*_T.
        #[arg(long)]
        gains: Option<PathBuf>,
    },
    /// Rank correlations of metric columns with G*_T from experiments.csv.
    Correlate {
        #[arg(long)]
        input: PathBuf,
        /// Correlate against the final gain G_T instead of G*_T.
        #[arg(long)]
        final_gain: bool,
    },
    /// The full expansion protocol.
    Run {
        /// Run seeds and chain evaluations on the rayon pool.
        #[arg(long)]
        parallel: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&cli.common.config)?;
    if let Some(dir) = &cli.common.out_dir {
        cfg.out_dir = dir.clone();
    }
    let out = cfg.out_dir.clone();
    std::fs::create_dir_all(&out).map_err(|e| Error::Io {
        path: out.clone(),
        source: e,
    })?;
    let seed = cli.common.seed;
    match cli.command {
        Command::Train => {
            let seed = seed.unwrap_or(cfg.seeds[0]);
            let splits = load_dataset(&cfg.data)?;
            let (_, outcome) = h::experiment::train_base(&cfg, &splits, seed)?;
            save_checkpoint(out.join("base.ckpt"), &Checkpoint::from_state(&outcome.best))?;
            let mut csv = String::from("epoch,val_acc,loss_sum\n");
            for e in &outcome.history {
                csv.push_str(&format!("{},{},{}\n", e.epoch, e.val_acc, e.loss_sum()));
            }
            report::write_file(out.join("train_history.csv"), &csv)?;
            println!(
                "best validation accuracy {:.4} at epoch {} (stopped at {}); saved {}",
                outcome.best_acc,
                outcome.best_epoch,
                outcome.stopped_epoch,
                out.join("base.ckpt").display()
            );
        }
        Command::Expand {
            checkpoint,
            factor,
            layer,
            deepen_after,
        } => {
            let splits = load_dataset(&cfg.data)?;
            let state = load_checkpoint(&checkpoint)?.into_state()?;
            let plan = match (factor, deepen_after) {
                (_, Some(after)) => ExpansionPlan::Deepen { after },
                (Some(f), None) => ExpansionPlan::Widen(
                    WidenPlan::by_factor(&state.model, layer.unwrap_or(cfg.widen_layer), f, seed.unwrap_or(0))?
                        .with_split_noise(cfg.split_noise),
                ),
                (None, None) => return Err(Error::InvalidArgument("give --factor or --deepen-after".into())),
            };
            let (model, params) = expand(&state.model, &state.params, &plan)?;
            let before = state.model.forward(&state.params, splits.val.inputs())?;
            let after = model.forward(&params, splits.val.inputs())?;
            let acc_before = state.model.accuracy(&state.params, &splits.val)?;
            let acc_after = model.accuracy(&params, &splits.val)?;
            let expanded = TrainState::new(model, params, cfg.optimizer, state.shuffle_seed);
            save_checkpoint(out.join("expanded.ckpt"), &Checkpoint::from_state(&expanded))?;
            println!(
                "{plan}: {} -> {}; accuracy {acc_before} -> {acc_after}; max logit difference {}",
                state.model.spec().arch_string(),
                expanded.model.spec().arch_string(),
                before.max_abs_diff(&after)?
            );
        }
        Command::Manifold {
            checkpoint,
            base,
            q,
            n,
            layer,
            batch_index,
        } => {
            let q = q.unwrap_or(cfg.q);
            let n = n.unwrap_or(cfg.n);
            let layer = layer.unwrap_or(cfg.permutation_layer());
            let seeds = MetricSeeds::derived(seed.unwrap_or(cfg.experiment_seed));
            let splits = load_dataset(&cfg.data)?;
            let state = load_checkpoint(&checkpoint)?.into_state()?;
            let (base_model, base_params, shuffle) = match &base {
                Some(path) => {
                    let b = load_checkpoint(path)?.into_state()?;
                    (b.model, b.params, b.shuffle_seed)
                }
                None => (state.model.clone(), state.params.clone(), state.shuffle_seed),
            };
            let batch = metric_batch(&splits.train, cfg.batch_size, shuffle, batch_index.unwrap_or(cfg.metric_batch_index))?;
            let chain = |model: &Model, params, seed| barrier_samples(model, &BatchLoss::new(model, &batch), params, layer, n, seed);
            let base_set = chain(&base_model, &base_params, seeds.base)?;
            let lambda = base_set.quantile(q)?;
            let (estimate, metric) = if base.is_some() {
                let cand = chain(&state.model, &state.params, seeds.candidate)?;
                let m = ManifoldMetric::from_samples(&base_set, &cand, q, n)?;
                (ManifoldEstimate::score(&cand, lambda, n)?, Some(m))
            } else {
                (ManifoldEstimate::score(&base_set, lambda, n)?, None)
            };
            report::write_file(
                out.join("edges.csv"),
                &report::edges_to_csv(&[("checkpoint".into(), estimate.edge_log())]),
            )?;
            let summary = serde_json::json!({
                "m": estimate.ratio,
                "lambda": lambda,
                "e": estimate.edges,
                "n": n,
                "q": q,
                "M_percent": metric.map(|m| m.value),
            });
            report::write_file(out.join("manifold.json"), &serde_json::to_string_pretty(&summary).unwrap())?;
            println!("{summary}");
        }
        Command::Proxies {
            checkpoint,
            metrics,
            batch_index,
        } => {
            let kinds = parse_kinds(&metrics)?;
            let splits = load_dataset(&cfg.data)?;
            let mut csv = String::from("candidate,metric,value\n");
            for path in &checkpoint {
                let state = load_checkpoint(path)?.into_state()?;
                let batch = metric_batch(
                    &splits.train,
                    cfg.batch_size,
                    state.shuffle_seed,
                    batch_index.unwrap_or(cfg.metric_batch_index),
                )?;
                let losses = state.history.last().map(|e| e.batch_losses.clone());
                let kinds: Vec<_> = kinds
                    .iter()
                    .copied()
                    .filter(|k| *k != manifold_gain::ProxyKind::SotlE || losses.is_some())
                    .collect();
                for s in compute_proxies(&state.model, &state.params, &batch, &kinds, losses.as_deref())? {
                    csv.push_str(&format!("{},{},{}\n", path.display(), s.kind, s.value));
                }
            }
            report::write_file(out.join("proxies.csv"), &csv)?;
            print!("{csv}");
        }
        Command::Sweep { gains } => {
            if let Some(s) = seed {
                cfg.experiment_seed = s;
            }
            let splits = load_dataset(&cfg.data)?;
            let grid = h::run_sweep(&cfg, &splits)?;
            let records = gains.as_deref().map(read_records).transpose()?;
            h::write_sweep(&grid, records.as_deref(), &out)?;
            println!("wrote {}", out.join("sweep.csv").display());
        }
        Command::Correlate { input, final_gain } => {
            let records = read_records(&input)?;
            let target = if final_gain { Target::FinalGain } else { Target::BestGain };
            let reports: Vec<_> = Column::all_metrics()
                .into_iter()
                .map(|c| report::correlate(&records, c, Pick::Earliest, target))
                .collect();
            let table = report::correlation_table(&reports);
            report::write_file(out.join("fig2_correlations.csv"), &table)?;
            report::write_file(out.join("correlations.json"), &serde_json::to_string_pretty(&reports).unwrap())?;
            print!("{table}");
        }
        Command::Run { parallel } => {
            if let Some(s) = seed {
                cfg.experiment_seed = s;
            }
            cfg.parallel |= parallel;
            let summary = h::run_and_write(&cfg, &out)?;
            for c in &summary.correlations {
                let k = &c.kendall;
                println!(
                    "{:>16}: kendall mean {} std {} ({} degenerate)",
                    c.column,
                    k.mean.map_or("n/a".into(), |v| format!("{v:+.3}")),
                    k.std.map_or("n/a".into(), |v| format!("{v:.3}")),
                    k.degenerate
                );
            }
            for f in &summary.failures {
                eprintln!("skipped: {f}");
            }
            println!("wrote {}", out.join("experiments.csv").display());
        }
    }
    Ok(())
}

fn read_records(path: &Path) -> Result<Vec<manifold_gain::harness::ExperimentRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    report::parse_records(&text)
}
