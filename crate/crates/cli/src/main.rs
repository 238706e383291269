//! Command-line front end: synthesize corpora, train, evaluate, run the
//! design grid, and query recommendations.
//!
//! Exit codes: 0 on success, 2 for configuration or argument problems,
//! 1 for runtime failures.

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use tgrec_core::data::{
    generate_synthetic, load_checkpoint, load_citation_dataset, save_checkpoint,
    CitationDataset, SyntheticConfig,
};
use tgrec_core::train::{EvalSplit, StepOutcome, TrainConfig, Trainer};
use tgrec_core::Error;

#[derive(Parser)]
#[command(name = "tgrec", about = "Temporal citation-network recommender", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct DatasetArgs {
    /// Papers file: one `id|YYYY-MM-DD|ref1,ref2,...` line per paper.
    #[arg(long)]
    papers: PathBuf,
    /// Optional embeddings file (`dim D` header, then `id v1 .. vD`).
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat `key value` config file; defaults apply for missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Individual overrides, e.g. `--set epochs=5` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<TrainConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => TrainConfig::from_kv(&std::fs::read_to_string(p)?)?,
            None => TrainConfig::default(),
        };
        for kv in &self.overrides {
            let (k, v) = kv.split_once('=').ok_or_else(|| {
                Error::InvalidArgument(format!("--set expects KEY=VALUE, got '{kv}'"))
            })?;
            cfg.apply_kv(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic citation corpus.
    Synth {
        /// Output papers file.
        #[arg(long)]
        papers: PathBuf,
        /// Output embeddings file.
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long, default_value_t = 500)]
        count: usize,
        #[arg(long, default_value_t = 10)]
        refs: usize,
        #[arg(long, default_value_t = 12)]
        seed_papers: usize,
        #[arg(long, default_value_t = 5)]
        clusters: usize,
        #[arg(long, default_value_t = 16)]
        feat_dim: usize,
        #[arg(long, default_value_t = 1.0)]
        attach_exponent: f64,
        #[arg(long, default_value_t = 180.0)]
        recency_half_life: f64,
        #[arg(long, default_value_t = 3.0)]
        cluster_affinity: f64,
        #[arg(long, default_value_t = 3.0)]
        mean_gap: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Train a model and write a checkpoint.
    Train {
        #[command(flatten)]
        dataset: DatasetArgs,
        #[command(flatten)]
        config: ConfigArgs,
        /// Checkpoint output path.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Optional CSV of per-epoch loss and validation metrics.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a held-out split.
    Eval {
        #[command(flatten)]
        dataset: DatasetArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Which split to score: val or test.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Train every message/aggregator/initialization combination and
    /// print a CSV of test metrics.
    Ablate {
        #[command(flatten)]
        dataset: DatasetArgs,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Rank candidate papers for a citing paper at a given date.
    Recommend {
        #[command(flatten)]
        dataset: DatasetArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Paper id to recommend references for.
        #[arg(long)]
        paper: String,
        /// Query date (YYYY-MM-DD); defaults to the day after the last
        /// event in the corpus.
        #[arg(long)]
        date: Option<String>,
        #[arg(short, default_value_t = 10)]
        k: usize,
    },
}

fn load_dataset(args: &DatasetArgs) -> Result<CitationDataset, Error> {
    load_citation_dataset(&args.papers, args.embeddings.as_deref())
}

fn cmd_train(
    dataset: &DatasetArgs,
    config: &ConfigArgs,
    checkpoint: &PathBuf,
    history: Option<&PathBuf>,
) -> Result<(), Error> {
    let cfg = config.resolve()?;
    let ds = load_dataset(dataset)?;
    println!(
        "loaded {} papers, {} citation events ({} references dropped)",
        ds.graph.node_count(),
        ds.graph.events().len(),
        ds.dropped_refs
    );
    println!("seed {}", cfg.seed);
    let mut trainer: Trainer<'_, f64> = Trainer::new(&ds.graph, cfg)?;
    loop {
        match trainer.step()? {
            StepOutcome::Batch { .. } => {}
            StepOutcome::EpochEnd(s) => {
                println!(
                    "epoch {} loss {:.6} val_mrr {:.4} val_ap {:.4} val_auc {:.4}",
                    s.epoch + 1,
                    s.loss,
                    s.val_mrr,
                    s.val_ap,
                    s.val_auc
                );
            }
            StepOutcome::Finished => break,
        }
    }
    save_checkpoint(checkpoint, trainer.config(), trainer.state())?;
    println!("checkpoint written to {}", checkpoint.display());
    if let Some(path) = history {
        let mut csv = String::from("epoch,loss,val_mrr,val_ap,val_auc\n");
        for s in trainer.history() {
            csv.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6}\n",
                s.epoch + 1,
                s.loss,
                s.val_mrr,
                s.val_ap,
                s.val_auc
            ));
        }
        std::fs::write(path, csv)?;
        println!("history written to {}", path.display());
    }
    Ok(())
}

fn cmd_eval(dataset: &DatasetArgs, checkpoint: &PathBuf, split: &str) -> Result<(), Error> {
    let which = match split {
        "val" => EvalSplit::Val,
        "test" => EvalSplit::Test,
        other => {
            return Err(Error::InvalidArgument(format!(
                "split must be 'val' or 'test', got '{other}'"
            )))
        }
    };
    let ds = load_dataset(dataset)?;
    let (cfg, state) = load_checkpoint::<f64>(checkpoint)?;
    let trainer = Trainer::from_state(&ds.graph, cfg, state)?;
    let report = trainer.evaluate(which)?;
    print!("{}", report.to_text());
    Ok(())
}

fn cmd_recommend(
    dataset: &DatasetArgs,
    checkpoint: &PathBuf,
    paper: &str,
    date: Option<&str>,
    k: usize,
) -> Result<(), Error> {
    let ds = load_dataset(dataset)?;
    let (cfg, state) = load_checkpoint::<f64>(checkpoint)?;
    let &src = ds
        .index
        .get(paper)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown paper id '{paper}'")))?;
    let t = match date {
        Some(d) => {
            let date = chrono::NaiveDate::parse_from_str(d, "%Y-%m-%d")
                .map_err(|e| Error::InvalidArgument(format!("bad date '{d}': {e}")))?;
            (date - ds.base_date).num_days() as f64
        }
        None => {
            ds.graph
                .events()
                .last()
                .map(|e| e.t)
                .unwrap_or(0.0)
                + 1.0
        }
    };
    let candidates: Vec<usize> = (0..ds.graph.node_count())
        .filter(|&v| v != src && ds.graph.first_seen(v).is_some_and(|f| f < t))
        .collect();
    if candidates.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no candidate papers exist before the query time {t}"
        )));
    }
    let ranked = tgrec_core::model::recommend(
        &state.params,
        &state.memory,
        &ds.graph,
        src,
        t,
        &candidates,
        k,
        cfg.n_neighbors,
    )?;
    for (i, c) in ranked.iter().enumerate() {
        println!(
            "{} {} {:.6} {:.6}",
            i + 1,
            ds.ids[c.dst],
            c.score,
            c.probability
        );
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match &cli.command {
        Command::Synth {
            papers,
            embeddings,
            count,
            refs,
            seed_papers,
            clusters,
            feat_dim,
            attach_exponent,
            recency_half_life,
            cluster_affinity,
            mean_gap,
            seed,
        } => {
            let data = generate_synthetic(&SyntheticConfig {
                papers: *count,
                refs_per_paper: *refs,
                seed_papers: *seed_papers,
                clusters: *clusters,
                feat_dim: *feat_dim,
                attach_exponent: *attach_exponent,
                recency_half_life: *recency_half_life,
                cluster_affinity: *cluster_affinity,
                mean_gap: *mean_gap,
                seed: *seed,
            })?;
            std::fs::write(papers, data.papers_text())?;
            std::fs::write(embeddings, data.embeddings_text())?;
            let events: usize = data.records.iter().map(|r| r.refs.len()).sum();
            println!(
                "wrote {} papers with {} citations to {} (embeddings: {})",
                data.records.len(),
                events,
                papers.display(),
                embeddings.display()
            );
            Ok(())
        }
        Command::Train {
            dataset,
            config,
            checkpoint,
            history,
        } => cmd_train(dataset, config, checkpoint, history.as_ref()),
        Command::Eval {
            dataset,
            checkpoint,
            split,
        } => cmd_eval(dataset, checkpoint, split),
        Command::Ablate { dataset, config } => {
            let cfg = config.resolve()?;
            let ds = load_dataset(dataset)?;
            let cells = tgrec_core::train::run_ablation::<f64>(&ds.graph, &cfg)?;
            print!("{}", tgrec_core::train::ablation_csv(&cells, &cfg.k_list));
            Ok(())
        }
        Command::Recommend {
            dataset,
            checkpoint,
            paper,
            date,
            k,
        } => cmd_recommend(dataset, checkpoint, paper, date.as_deref(), *k),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidConfig(_) | Error::InvalidArgument(_) | Error::Parse { .. } => {
                    ExitCode::from(2)
                }
                _ => ExitCode::FAILURE,
            }
        }
    }
}
