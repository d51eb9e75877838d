use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use estm::config::ExperimentConfig;
use estm::data::corpus::open_corpus;
use estm::data::{synth_generate, ClipRecord, DataSplit};
use estm::metrics::evaluate;
use estm::pipeline::{self, ablation_csv};
use estm::ssm::bench::{bench_csv, bench_scan};
use estm::train::RunOutputs;
use estm::{Precision, Real};

#[derive(Parser)]
#[command(name = "estm", version, about = "Anomalous machine sound detection with spectral-temporal state-space models")]
struct Cli {
    /// TOML experiment configuration; replaces the preset entirely.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in configuration used when no --config is given.
    #[arg(long, global = true, value_enum, default_value_t = Preset::Full)]
    preset: Preset,
    /// Overrides the training seed (and the generator seed for `synth`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Caps worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    precision: Option<Precision>,
    /// Log more (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// 10 s clips with the full-size model.
    Full,
    /// 2 s synthetic clips with a small model.
    Toy,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
    All,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print the effective configuration as TOML.
    Config,
    /// Generate the synthetic machine-sound corpus.
    Synth {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Extract and cache 3-channel feature blocks for every clip.
    Features {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        cache_dir: Option<PathBuf>,
        /// Take the time-domain front end from a trained checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train the machine-ID classifier on the training split.
    Train {
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Continue from the configured checkpoint.
        #[arg(long)]
        resume: bool,
    },
    /// Write per-clip anomaly scores.
    Score {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// AUC and pAUC per machine, per type and on average.
    Eval {
        /// Scores written by `score`; without it the corpus is scored first.
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Feature by backbone ablation matrix on the synthetic corpus.
    Ablate {
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Comma-separated seeds; defaults to the training seed.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Scan throughput for sequential and chunked kernels.
    BenchScan {
        #[arg(long, value_delimiter = ',', default_value = "64,256,1024,4096")]
        seq_lens: Vec<usize>,
        /// Chunk sizes; 0 is the sequential reference.
        #[arg(long, value_delimiter = ',', default_value = "0,16,64,256")]
        chunks: Vec<usize>,
        #[arg(long, default_value_t = 64)]
        d_inner: usize,
        #[arg(long, default_value_t = 16)]
        d_state: usize,
        #[arg(long, default_value_t = 200)]
        budget_ms: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Exit status for an error: 1 when the data cannot define a metric,
/// 2 for I/O, configuration and everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<estm::Error>() {
        Some(e) if e.is_degenerate_data() => 1,
        _ => 2,
    }
}

/// The error chain joined with ": ", dropping causes whose text the
/// previous message already contains.
fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    let mut last = String::new();
    for cause in err.chain() {
        let msg = cause.to_string();
        if !last.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
        last = msg;
    }
    out
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => match cli.preset {
            Preset::Full => ExperimentConfig::default(),
            Preset::Toy => ExperimentConfig::toy(),
        },
    };
    if let Some(s) = cli.seed {
        cfg.train.seed = s;
        cfg.synth.seed = s;
    }
    if let Some(p) = cli.precision {
        cfg.train.precision = p;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| estm::Error::Io { path: dir.into(), source: e })?;
    }
    fs::write(path, text).map_err(|e| estm::Error::Io { path: path.into(), source: e })?;
    Ok(())
}

/// Echoes the effective configuration next to the reports it produced.
fn echo_config(cfg: &ExperimentConfig) -> Result<()> {
    write(&cfg.paths.report_dir.join("config.toml"), &cfg.to_toml()?)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    let mut cfg = load_config(&cli)?;
    match cli.cmd {
        Cmd::Config => print!("{}", cfg.to_toml()?),
        Cmd::Synth { out } => {
            let out = out.unwrap_or_else(|| cfg.paths.corpus.clone());
            let records = synth_generate(&cfg.synth, &out).context("generating the synthetic corpus")?;
            log::info!("wrote {} clips under {}", records.len(), out.display());
        }
        Cmd::Features {
            corpus,
            cache_dir,
            checkpoint,
        } => {
            if let Some(c) = corpus {
                cfg.paths.corpus = c;
            }
            let cache_dir = cache_dir.unwrap_or_else(|| cfg.paths.cache_dir.clone());
            match cfg.train.precision {
                Precision::F32 => features::<f32>(&cfg, &cache_dir, checkpoint.as_deref())?,
                Precision::F64 => features::<f64>(&cfg, &cache_dir, checkpoint.as_deref())?,
            }
        }
        Cmd::Train { corpus, resume } => {
            if let Some(c) = corpus {
                cfg.paths.corpus = c;
            }
            match cfg.train.precision {
                Precision::F32 => train::<f32>(&cfg, resume)?,
                Precision::F64 => train::<f64>(&cfg, resume)?,
            }
        }
        Cmd::Score {
            corpus,
            checkpoint,
            split,
            out,
        } => {
            if let Some(c) = corpus {
                cfg.paths.corpus = c;
            }
            if let Some(c) = checkpoint {
                cfg.paths.checkpoint = c;
            }
            let out = out.unwrap_or_else(|| cfg.paths.report_dir.join("scores.csv"));
            let text = match cfg.train.precision {
                Precision::F32 => score::<f32>(&cfg, split)?.0,
                Precision::F64 => score::<f64>(&cfg, split)?.0,
            };
            write(&out, &text)?;
            log::info!("scores written to {}", out.display());
        }
        Cmd::Eval {
            scores,
            corpus,
            checkpoint,
        } => {
            if let Some(c) = corpus {
                cfg.paths.corpus = c;
            }
            if let Some(c) = checkpoint {
                cfg.paths.checkpoint = c;
            }
            let clips = match scores {
                Some(p) => pipeline::read_scores_csv(&p)?,
                None => match cfg.train.precision {
                    Precision::F32 => score::<f32>(&cfg, SplitArg::Test)?.1,
                    Precision::F64 => score::<f64>(&cfg, SplitArg::Test)?.1,
                },
            };
            let report = evaluate(&clips, cfg.eval.p)?;
            let dir = &cfg.paths.report_dir;
            write(&dir.join("metrics.csv"), &report.to_csv())?;
            write(
                &dir.join("summary.json"),
                &serde_json::to_string_pretty(&report.summary_json(cfg.to_json()))?,
            )?;
            echo_config(&cfg)?;
            for t in &report.types {
                println!("{:<12} auc {:.4}  pauc {:.4}", t.machine_type, t.auc, t.pauc);
            }
            println!("{:<12} auc {:.4}  pauc {:.4}", "Average", report.average_auc, report.average_pauc);
        }
        Cmd::Ablate { corpus, seeds, out } => {
            if let Some(c) = corpus {
                cfg.paths.corpus = c;
            }
            let seeds = if seeds.is_empty() { vec![cfg.train.seed] } else { seeds };
            if !cfg.paths.corpus.exists() {
                log::info!("no corpus at {}, generating the synthetic one", cfg.paths.corpus.display());
                synth_generate(&cfg.synth, &cfg.paths.corpus)?;
            }
            let corpus = open_corpus(&cfg.paths.corpus)?;
            let rows = match cfg.train.precision {
                Precision::F32 => pipeline::ablate::<f32>(&cfg, &corpus, &seeds)?,
                Precision::F64 => pipeline::ablate::<f64>(&cfg, &corpus, &seeds)?,
            };
            let text = ablation_csv(&rows);
            let out = out.unwrap_or_else(|| cfg.paths.report_dir.join("ablation.csv"));
            write(&out, &text)?;
            echo_config(&cfg)?;
            print!("{text}");
        }
        Cmd::BenchScan {
            seq_lens,
            chunks,
            d_inner,
            d_state,
            budget_ms,
            out,
        } => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
            let budget = Duration::from_millis(budget_ms);
            let rows = match cfg.train.precision {
                Precision::F32 => bench_scan::<f32>(&seq_lens, &chunks, d_inner, d_state, budget, &mut rng)?,
                Precision::F64 => bench_scan::<f64>(&seq_lens, &chunks, d_inner, d_state, budget, &mut rng)?,
            };
            let text = bench_csv(&rows);
            if let Some(p) = out {
                write(&p, &text)?;
            }
            print!("{text}");
        }
    }
    Ok(())
}

fn features<T: Real>(cfg: &ExperimentConfig, cache_dir: &Path, checkpoint: Option<&Path>) -> Result<()> {
    let corpus = open_corpus(&cfg.paths.corpus)?;
    let (model, store) = match checkpoint {
        Some(p) => {
            let labels = p.with_file_name("label_map.json");
            let (t, _) = pipeline::load_trained::<T>(p, &labels)?;
            (t.model, t.store)
        }
        None => pipeline::build_model::<T>(cfg, corpus.label_map().len().max(2))?,
    };
    let run = pipeline::cache_features(&corpus, &model, &store, cache_dir)?;
    log::info!(
        "features: {} computed, {} up to date, {} failed",
        run.computed,
        run.skipped,
        run.failed.len()
    );
    if let Some((path, err)) = run.failed.into_iter().next() {
        return Err(anyhow::Error::new(err).context(format!("feature extraction failed for {}", path.display())));
    }
    Ok(())
}

fn train<T: Real>(cfg: &ExperimentConfig, resume: bool) -> Result<()> {
    let corpus = open_corpus(&cfg.paths.corpus)?;
    let ckpt = &cfg.paths.checkpoint;
    if let Some(dir) = ckpt.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| estm::Error::Io { path: dir.into(), source: e })?;
    }
    fs::create_dir_all(&cfg.paths.report_dir)
        .map_err(|e| estm::Error::Io { path: cfg.paths.report_dir.clone(), source: e })?;
    let out = RunOutputs {
        metrics_csv: Some(cfg.paths.metrics_csv()),
        checkpoint: Some(ckpt.clone()),
        config: cfg.to_json(),
    };
    let trained = pipeline::train_corpus::<T>(cfg, &corpus, &out, resume.then_some(ckpt.as_path()))?;
    trained.labels.save(&cfg.paths.label_map())?;
    echo_config(cfg)?;
    match trained.history.last() {
        Some(s) => println!("epoch {} loss {:.5} accuracy {:.4}", s.epoch, s.loss, s.accuracy),
        None => println!("nothing to do: checkpoint already has {} epochs", cfg.train.epochs),
    }
    Ok(())
}

fn score<T: Real>(cfg: &ExperimentConfig, split: SplitArg) -> Result<(String, Vec<estm::metrics::ScoredClip>)> {
    let ckpt = &cfg.paths.checkpoint;
    if !ckpt.is_file() {
        return Err(anyhow!(estm::Error::Io {
            path: ckpt.clone(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "checkpoint not found"),
        }));
    }
    let (trained, stored) = pipeline::load_trained::<T>(ckpt, &cfg.paths.label_map())?;
    if stored.features != cfg.features || stored.model != cfg.model {
        log::warn!(
            "{} was trained with different feature/model settings; using the stored ones",
            ckpt.display()
        );
    }
    let corpus = open_corpus(&cfg.paths.corpus)?;
    let records: Vec<ClipRecord> = corpus
        .records
        .iter()
        .filter(|r| match split {
            SplitArg::Train => r.split == DataSplit::Train,
            SplitArg::Test => r.split == DataSplit::Test,
            SplitArg::All => true,
        })
        .cloned()
        .collect();
    let scored = pipeline::score_records(&trained.model, &trained.store, &trained.labels, &records)?;
    Ok((pipeline::scores_csv(&records, &scored)?, scored))
}
