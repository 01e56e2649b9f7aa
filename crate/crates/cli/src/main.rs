//! `vpsn`: ingest datasets, train and evaluate models, predict, and serve.
//!
//! Exit codes: 0 success, 1 operation failure, 2 usage error.

mod config;

use std::io::IsTerminal;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use vpsn_core::corpus::{
    check_dataset, downsample_negatives, format_language_table, read_dataset, synthetic_corpus, write_dataset, Aspect,
    CommitRecord, InputVariant,
};
use vpsn_core::decode::GenerationConfig;
use vpsn_core::nn::{save_checkpoint, Architecture, ModelConfig};
use vpsn_core::text::Vocabulary;
use vpsn_core::training::{
    classifier_auc, corpus_vocab, encode_classifier_examples, run_cross_validation, train_classifier, train_generator,
    CvSettings, TrainConfig,
};
use vpsn_serve::predictor::vocab_path;
use vpsn_serve::{AlertStore, AppState, Predictor};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "vpsn", version, about = "Silent vulnerability patch detection with aspect explanations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Task {
    Classify,
    Generate,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a raw JSONL dataset and write the cleaned copy.
    Ingest {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic JSONL dataset.
    Synth {
        #[arg(long, default_value_t = 200)]
        records: usize,
        #[arg(long, default_value_t = 20)]
        repos: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one classifier or one aspect generator.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum)]
        task: Task,
        /// Required with `--task generate`.
        #[arg(long)]
        aspect: Option<Aspect>,
        #[arg(long)]
        arch: Architecture,
        #[arg(long, default_value = "message-and-all-code")]
        variant: InputVariant,
        /// JSON hyperparameter file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Reuse this vocabulary instead of building one from the dataset.
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Checkpoint path; `vocab.txt` and `<stem>.history.csv` go next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Repository-grouped k-fold cross-validation over an architecture x variant grid.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, value_delimiter = ',', required = true)]
        archs: Vec<Architecture>,
        /// Comma-separated, or `all`.
        #[arg(long, value_delimiter = ',', default_value = "all", value_parser = parse_variant)]
        variants: Vec<Option<InputVariant>>,
        /// Aspects scored for generator architectures.
        #[arg(long, value_delimiter = ',')]
        aspects: Option<Vec<Aspect>>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Report CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Classify one commit and explain it; prints JSON.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        generators: Option<PathBuf>,
        #[arg(long)]
        message_file: PathBuf,
        #[arg(long)]
        diff_file: PathBuf,
        #[arg(long, default_value_t = 1)]
        beam_width: usize,
    },
    /// Run the HTTP service until interrupted.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Without a checkpoint the queue works but `/v1/predict` answers 503.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        generators: Option<PathBuf>,
        #[arg(long)]
        store: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let filter = tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into());
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", error_chain(&e));
            ExitCode::FAILURE
        }
    }
}

/// Joins the causes with ": ", skipping any already spelled out by the
/// message before it.
fn error_chain(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if out.contains(&text) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&text);
    }
    out
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Ingest { input, out } => ingest(&input, &out),
        Command::Synth { records, repos, seed, out } => {
            write_dataset(&synthetic_corpus(records, repos, seed), &out)?;
            println!("wrote {records} records over {repos} repositories to {}", out.display());
            Ok(())
        }
        Command::Train { dataset, task, aspect, arch, variant, config, vocab, seed, out } => {
            train(&dataset, task, aspect, arch, variant, config.as_deref(), vocab.as_deref(), seed, &out)
        }
        Command::Eval { dataset, k, archs, variants, aspects, config, jobs, seed, out } => {
            eval(&dataset, k, archs, &variants, aspects, config.as_deref(), jobs, seed, out.as_deref())
        }
        Command::Predict { checkpoint, generators, message_file, diff_file, beam_width } => {
            let predictor = Predictor::load(&checkpoint, generators.as_deref())
                .with_context(|| format!("loading {}", checkpoint.display()))?
                .with_generation(GenerationConfig { beam_width, ..GenerationConfig::default() })?;
            let message = read_text(&message_file)?;
            let diff = read_text(&diff_file)?;
            let prediction = predictor.predict(&message, &diff)?;
            println!("{}", serde_json::to_string_pretty(&prediction)?);
            Ok(())
        }
        Command::Serve { port, host, checkpoint, generators, store } => serve(&host, port, checkpoint, generators, &store),
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn ingest(input: &Path, out: &Path) -> Result<()> {
    let file = std::fs::File::open(input).with_context(|| format!("opening {}", input.display()))?;
    let (records, errors) = check_dataset(file);
    if !errors.is_empty() {
        for e in &errors {
            eprintln!("{}: {e}", input.display());
        }
        bail!("{} invalid line(s) in {}", errors.len(), input.display());
    }
    write_dataset(&records, out)?;
    let hunk_lines: usize = records.iter().map(|r| r.segments.total_lines()).sum();
    print!("{}", format_language_table(&records));
    println!("{} records, {hunk_lines} hunk lines, written to {}", records.len(), out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train(
    dataset: &Path,
    task: Task,
    aspect: Option<Aspect>,
    arch: Architecture,
    variant: InputVariant,
    config: Option<&Path>,
    vocab: Option<&Path>,
    seed: u64,
    out: &Path,
) -> Result<()> {
    match (task, arch.is_generator(), aspect) {
        (Task::Classify, true, _) => bail!("{arch} is a generator; use --task generate"),
        (Task::Generate, false, _) => bail!("{arch} is a classifier; use --task classify"),
        (Task::Classify, false, Some(_)) => bail!("--aspect only applies to --task generate"),
        (Task::Generate, true, None) => bail!("--task generate needs --aspect"),
        _ => {}
    }
    let rc = RunConfig::load(config)?;
    let records = read_dataset(dataset).with_context(|| format!("reading {}", dataset.display()))?;
    let all: Vec<&CommitRecord> = records.iter().collect();
    let vocab = match vocab {
        Some(p) => Vocabulary::load(p)?,
        None => {
            let (min_freq, max_size) = rc.vocab_limits();
            corpus_vocab(&all, min_freq, max_size)?
        }
    };

    let mut train_cfg = match aspect {
        Some(a) => TrainConfig::generator(arch, variant, a),
        None => TrainConfig::new(arch, variant),
    };
    train_cfg.seed = seed;
    rc.apply_train(&mut train_cfg);
    train_cfg.validate()?;
    let mut model_cfg = ModelConfig::new(arch, vocab.len());
    rc.apply_model(&mut model_cfg);

    let outcome = match task {
        Task::Classify => {
            let (pos, neg): (Vec<&CommitRecord>, Vec<&CommitRecord>) = all.iter().copied().partition(|r| r.label.is_positive());
            let balanced = downsample_negatives(&pos, &neg, seed)?;
            let outcome = train_classifier(&balanced, &vocab, &model_cfg, &train_cfg)?;
            let examples = encode_classifier_examples(&outcome.model, &balanced, &vocab, &train_cfg);
            let (_, auc) = classifier_auc(&outcome.model, &examples)?;
            println!("train auc {auc:.4} on {} balanced records", balanced.len());
            outcome
        }
        Task::Generate => train_generator(&all, &vocab, &model_cfg, &train_cfg)?,
    };

    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    save_checkpoint(&outcome.model, out)?;
    vocab.save(vocab_path(out))?;
    let history = out.with_extension("history.csv");
    outcome.history.save_csv(&history)?;
    println!(
        "{arch} trained for {} epochs, final train loss {:.5}; checkpoint {}, history {}",
        outcome.history.epochs.len(),
        outcome.history.final_train_loss().unwrap_or(f64::NAN),
        out.display(),
        history.display()
    );
    if outcome.rejected > 0 {
        println!("{} records lacked the target aspect and were skipped", outcome.rejected);
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn eval(
    dataset: &Path,
    k: usize,
    archs: Vec<Architecture>,
    variants: &[Option<InputVariant>],
    aspects: Option<Vec<Aspect>>,
    config: Option<&Path>,
    jobs: Option<usize>,
    seed: u64,
    out: Option<&Path>,
) -> Result<()> {
    let variants = expand_variants(variants);
    let rc = RunConfig::load(config)?;
    let records = read_dataset(dataset).with_context(|| format!("reading {}", dataset.display()))?;
    let mut settings = CvSettings::new(k, seed, archs, variants);
    if let Some(a) = aspects {
        settings.aspects = a;
    }
    settings.jobs = jobs;
    settings.train.seed = seed;
    rc.apply_train(&mut settings.train);
    rc.apply_model(&mut settings.model);
    rc.apply_generation(&mut settings.generation);
    (settings.vocab_min_freq, settings.vocab_max_size) = rc.vocab_limits();

    let outcome = run_cross_validation(&records, &settings)?;
    print!("{}", outcome.report.format_table());
    if let Some(path) = out {
        outcome.report.save_csv(path)?;
        println!("{} models trained; report written to {}", outcome.models_trained, path.display());
    }
    Ok(())
}

/// `None` stands for `all`.
fn parse_variant(s: &str) -> std::result::Result<Option<InputVariant>, String> {
    if s == "all" {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|e: vpsn_core::Error| e.to_string())
}

fn expand_variants(chosen: &[Option<InputVariant>]) -> Vec<InputVariant> {
    if chosen.contains(&None) {
        return InputVariant::ALL.to_vec();
    }
    let mut out = Vec::new();
    for v in chosen.iter().flatten() {
        if !out.contains(v) {
            out.push(*v);
        }
    }
    out
}

fn serve(host: &str, port: u16, checkpoint: Option<PathBuf>, generators: Option<PathBuf>, store: &Path) -> Result<()> {
    let predictor = match &checkpoint {
        Some(c) => Some(Predictor::load(c, generators.as_deref()).with_context(|| format!("loading {}", c.display()))?),
        None => {
            if generators.is_some() {
                bail!("--generators needs --checkpoint");
            }
            None
        }
    };
    let store = AlertStore::open(store)?;
    let state = AppState::new(predictor, store);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let addr: SocketAddr = format!("{host}:{port}").parse().with_context(|| format!("bad address {host}:{port}"))?;
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .with_context(|| format!("cannot listen on {addr}"))?;
        let local = listener.local_addr()?;
        tracing::info!(%local, model_loaded = checkpoint.is_some(), "listening");
        println!("listening on http://{local}");
        vpsn_serve::serve(listener, state, shutdown_signal()).await?;
        tracing::info!("shut down cleanly");
        Ok(())
    })
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}
