//! Command-line interface: synthetic corpus generation, statistics,
//! training, conversion, evaluation, and gradient checking.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical
//! divergence (including a failed gradient check).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use cyclevae::autodiff::{grad_check, NamedTensors, Tensor};
use cyclevae::eval::{eval_corpus, EvalError};
use cyclevae::features::{
    compute_stats, gen_synthetic_corpus, load_corpus, read_features, write_features,
    FeatureError, SynthesisSpec,
};
use cyclevae::net::{BoundParams, CheckpointError, ModelParams, NetConfig, NetError};
use cyclevae::objective::{
    cyclevae_loss, ObjectiveError, PassStates, RngStreams, SegmentInput,
};
use cyclevae::trainer::{
    train, init_model_params, TrainConfig, TrainError, TrainMode, TrainingCheckpoint,
};

#[derive(Parser)]
#[command(
    name = "cyclevae",
    version,
    about = "Cycle-consistent variational spectral conversion toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a deterministic synthetic two-speaker corpus
    Gen {
        /// Output directory for the .vcft feature files
        out_dir: PathBuf,
        /// Corpus seed; identical seeds yield identical files
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Utterances per speaker (at least 2)
        #[arg(long, default_value_t = 10)]
        utts: usize,
        /// Frames per utterance (5 ms shift)
        #[arg(long, default_value_t = 200)]
        frames: usize,
    },
    /// Compute normalization / log-F0 / global-variance statistics
    Stats {
        /// Directory of .vcft feature files
        corpus_dir: PathBuf,
        /// Path of the stats JSON to write
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a spectral model
    Train(TrainArgs),
    /// Convert one utterance to a target speaker
    Convert {
        /// Trained checkpoint (.cvck)
        #[arg(long)]
        checkpoint: PathBuf,
        /// Input feature file
        #[arg(long)]
        input: PathBuf,
        /// Target speaker id (must exist in the checkpoint)
        #[arg(long)]
        target: String,
        /// Output feature file
        #[arg(long)]
        output: PathBuf,
        /// Apply the global-variance postfilter to the converted spectra
        #[arg(long)]
        postfilter: bool,
    },
    /// Evaluate a checkpoint over a corpus (reconstruction MCD, converted
    /// MCD against parallel references, latent cosine similarity)
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory of .vcft feature files
        #[arg(long)]
        corpus: PathBuf,
        /// Path of the JSON report to write
        #[arg(long)]
        report: PathBuf,
        /// Evaluate GV-postfiltered converted spectra
        #[arg(long)]
        postfilter: bool,
    },
    /// Check analytic gradients of the full cyclic loss against central
    /// finite differences on a small random model
    Gradcheck {
        /// Number of conversion cycles
        #[arg(long, default_value_t = 2)]
        cycles: usize,
        /// Segment length in frames
        #[arg(long, default_value_t = 4)]
        frames: usize,
        /// Hidden units of the probe model
        #[arg(long, default_value_t = 8)]
        hidden: usize,
        /// Latent dimensions of the probe model
        #[arg(long, default_value_t = 4)]
        latent: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Maximum acceptable relative error
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// JSON config file with flat keys; flags override file values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory of training feature files
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Stats JSON produced by `stats`
    #[arg(long)]
    stats: Option<PathBuf>,
    /// Output directory for checkpoints and the metrics log
    #[arg(long)]
    out: Option<PathBuf>,
    /// Objective: conventional "vae" or cyclic "cyclevae"
    #[arg(long)]
    mode: Option<String>,
    /// Conversion cycles per segment [reference optimum: 3]
    #[arg(long)]
    cycles: Option<usize>,
    /// Latent dimensions [reference optimum: 16]
    #[arg(long)]
    latent_dim: Option<usize>,
    /// GRU hidden units [reference model: 1024; desk default: 32]
    #[arg(long)]
    hidden: Option<usize>,
    /// Frames per truncated-backpropagation segment [reference: 80]
    #[arg(long)]
    batch_frames: Option<usize>,
    /// Adam learning rate [reference: 0.0001]
    #[arg(long)]
    lr: Option<f64>,
    /// Training epochs [reference charts: 180]
    #[arg(long)]
    epochs: Option<usize>,
    /// Dropout probability after conv and GRU layers [reference: 0.5]
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Resume from an earlier checkpoint of the same run
    #[arg(long)]
    resume: Option<PathBuf>,
}

/// Flat run configuration; serializes canonically (sorted, one line) so a
/// run is reproducible from its echoed config alone.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    mode: TrainMode,
    cycles: usize,
    latent_dim: usize,
    hidden: usize,
    batch_frames: usize,
    learning_rate: f64,
    epochs: usize,
    dropout: f64,
    seed: u64,
    corpus_dir: PathBuf,
    stats_path: PathBuf,
    out_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    resume_from: Option<PathBuf>,
}

enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => m,
        }
    }
}

impl From<FeatureError> for CliError {
    fn from(e: FeatureError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<NetError> for CliError {
    fn from(e: NetError) -> Self {
        match e {
            NetError::Config(_) => CliError::Usage(e.to_string()),
            NetError::NonFinite { .. } => CliError::Numeric(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<ObjectiveError> for CliError {
    fn from(e: ObjectiveError) -> Self {
        match e {
            ObjectiveError::Divergence { .. } => CliError::Numeric(e.to_string()),
            ObjectiveError::ZeroCycles => CliError::Usage(e.to_string()),
            ObjectiveError::Net(inner) => CliError::from(inner),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Net(inner) => CliError::from(inner),
            EvalError::Objective(inner) => CliError::from(inner),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Divergence { .. } | TrainError::NonFiniteGradient(_) => {
                CliError::Numeric(e.to_string())
            }
            TrainError::Config(_) => CliError::Usage(e.to_string()),
            TrainError::Feature(inner) => CliError::from(inner),
            TrainError::Net(inner) => CliError::from(inner),
            TrainError::Objective(inner) => CliError::from(inner),
            TrainError::Eval(inner) => CliError::from(inner),
            TrainError::Checkpoint(inner) => CliError::from(inner),
            other => CliError::Data(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are successful exits
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Gen {
            out_dir,
            seed,
            utts,
            frames,
        } => cmd_gen(&out_dir, seed, utts, frames),
        Command::Stats { corpus_dir, out } => cmd_stats(&corpus_dir, &out),
        Command::Train(args) => cmd_train(args),
        Command::Convert {
            checkpoint,
            input,
            target,
            output,
            postfilter,
        } => cmd_convert(&checkpoint, &input, &target, &output, postfilter),
        Command::Eval {
            checkpoint,
            corpus,
            report,
            postfilter,
        } => cmd_eval(&checkpoint, &corpus, &report, postfilter),
        Command::Gradcheck {
            cycles,
            frames,
            hidden,
            latent,
            seed,
            tolerance,
        } => cmd_gradcheck(cycles, frames, hidden, latent, seed, tolerance),
    }
}

fn cmd_gen(out_dir: &Path, seed: u64, utts: usize, frames: usize) -> Result<(), CliError> {
    if utts < 2 {
        return Err(CliError::Usage(format!(
            "--utts must be at least 2 (one train + one validation per speaker), got {utts}"
        )));
    }
    let corpus = gen_synthetic_corpus(&SynthesisSpec {
        seed,
        utterances_per_speaker: utts,
        frames_per_utterance: frames,
    })?;
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", out_dir.display())))?;
    let mut counters: BTreeMap<String, usize> = BTreeMap::new();
    for utt in &corpus {
        let n = counters.entry(utt.speaker_id.clone()).or_insert(0);
        let path = out_dir.join(format!("{}_{:03}.vcft", utt.speaker_id, n));
        write_features(utt, &path)?;
        *n += 1;
    }
    println!(
        "wrote {} utterances for speakers A and B to {}",
        corpus.len(),
        out_dir.display()
    );
    Ok(())
}

fn cmd_stats(corpus_dir: &Path, out: &Path) -> Result<(), CliError> {
    let corpus = load_corpus(corpus_dir)?;
    corpus.check_dims()?;
    let stats = compute_stats(&corpus.utterances())?;
    std::fs::write(out, stats.to_json()?)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", out.display())))?;
    println!(
        "stats for {} speakers over {} utterances -> {}",
        stats.speakers.len(),
        corpus.entries.len(),
        out.display()
    );
    Ok(())
}

fn merge_train_config(args: &TrainArgs) -> Result<RunConfig, CliError> {
    #[derive(Default, Deserialize)]
    #[serde(deny_unknown_fields)]
    struct PartialConfig {
        mode: Option<TrainMode>,
        cycles: Option<usize>,
        latent_dim: Option<usize>,
        hidden: Option<usize>,
        batch_frames: Option<usize>,
        learning_rate: Option<f64>,
        epochs: Option<usize>,
        dropout: Option<f64>,
        seed: Option<u64>,
        corpus_dir: Option<PathBuf>,
        stats_path: Option<PathBuf>,
        out_dir: Option<PathBuf>,
        resume_from: Option<PathBuf>,
    }

    let file: PartialConfig = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?
        }
        None => PartialConfig::default(),
    };

    let mode = match &args.mode {
        Some(m) => match m.as_str() {
            "vae" => TrainMode::Vae,
            "cyclevae" => TrainMode::CycleVae,
            other => {
                return Err(CliError::Usage(format!(
                    "--mode must be \"vae\" or \"cyclevae\", got {other}"
                )))
            }
        },
        None => file.mode.unwrap_or(TrainMode::CycleVae),
    };
    let required_path = |flag: Option<&PathBuf>, file: Option<PathBuf>, name: &str| {
        flag.cloned()
            .or(file)
            .ok_or_else(|| CliError::Usage(format!("missing {name} (flag or config key)")))
    };

    Ok(RunConfig {
        mode,
        cycles: args.cycles.or(file.cycles).unwrap_or(3),
        latent_dim: args.latent_dim.or(file.latent_dim).unwrap_or(16),
        hidden: args.hidden.or(file.hidden).unwrap_or(32),
        batch_frames: args.batch_frames.or(file.batch_frames).unwrap_or(80),
        learning_rate: args.lr.or(file.learning_rate).unwrap_or(1e-4),
        epochs: args.epochs.or(file.epochs).unwrap_or(180),
        dropout: args.dropout.or(file.dropout).unwrap_or(0.5),
        seed: args.seed.or(file.seed).unwrap_or(1),
        corpus_dir: required_path(args.corpus.as_ref(), file.corpus_dir, "--corpus")?,
        stats_path: required_path(args.stats.as_ref(), file.stats_path, "--stats")?,
        out_dir: required_path(args.out.as_ref(), file.out_dir, "--out")?,
        resume_from: args.resume.clone().or(file.resume_from),
    })
}

/// Excitation/spectra widths of the first feature file in a directory.
fn peek_corpus_dims(corpus_dir: &Path) -> Result<(usize, usize), CliError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(corpus_dir)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", corpus_dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "vcft"))
        .collect();
    paths.sort();
    let first = paths.first().ok_or_else(|| {
        CliError::Data(format!("no .vcft files in {}", corpus_dir.display()))
    })?;
    let utt = read_features(first)?;
    Ok((utt.excitation_dim(), utt.spectra_dim()))
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let run_config = merge_train_config(&args)?;
    // the merged config echoes as one canonical JSON line; a run is
    // reproducible from this line alone
    println!(
        "{}",
        serde_json::to_string(&run_config).expect("config serializes")
    );

    let (d_e, d_s) = peek_corpus_dims(&run_config.corpus_dir)?;
    let config = TrainConfig {
        mode: run_config.mode,
        cycles: run_config.cycles,
        learning_rate: run_config.learning_rate,
        batch_frames: run_config.batch_frames,
        epochs: run_config.epochs,
        seed: run_config.seed,
        net: NetConfig {
            excitation_dim: d_e,
            spectra_dim: d_s,
            latent_dim: run_config.latent_dim,
            speaker_code_dim: 1,
            hidden_units: run_config.hidden,
            conv_kernel: 3,
            conv_dilations: vec![1, 3],
            dropout_prob: run_config.dropout,
        },
        corpus_dir: run_config.corpus_dir,
        stats_path: run_config.stats_path,
        out_dir: run_config.out_dir,
        resume_from: run_config.resume_from,
    };
    let outcome = train(&config)?;
    println!(
        "trained {} epochs; train_loss {:.4}, val_loss {:.4}; checkpoints at {} / {}",
        outcome.epochs_run,
        outcome.final_metrics.train_loss,
        outcome.final_metrics.val_loss,
        outcome.last_checkpoint.display(),
        outcome.best_checkpoint.display()
    );
    Ok(())
}

fn cmd_convert(
    checkpoint: &Path,
    input: &Path,
    target: &str,
    output: &Path,
    postfilter: bool,
) -> Result<(), CliError> {
    let ckpt = TrainingCheckpoint::load(checkpoint)?;
    let utt = read_features(input)?;
    let converted =
        cyclevae::eval::convert_utterance(&ckpt.params, &ckpt.stats, &utt, target, postfilter)?;
    write_features(&converted, output)?;
    println!(
        "converted {} ({} frames) {} -> {} at {}",
        input.display(),
        converted.frames(),
        utt.speaker_id,
        target,
        output.display()
    );
    Ok(())
}

fn cmd_eval(
    checkpoint: &Path,
    corpus_dir: &Path,
    report_path: &Path,
    postfilter: bool,
) -> Result<(), CliError> {
    let ckpt = TrainingCheckpoint::load(checkpoint)?;
    let corpus = load_corpus(corpus_dir)?;
    corpus.check_dims()?;
    let report = eval_corpus(&ckpt.params, &ckpt.stats, &corpus, postfilter)?;
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    std::fs::write(report_path, text)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", report_path.display())))?;
    print!(
        "evaluated {} utterances: rec_mcd {:.3} dB",
        report.aggregate.utterances, report.aggregate.rec_mcd_db
    );
    if let Some(cv) = report.aggregate.cv_mcd_db {
        print!(", cv_mcd {cv:.3} dB");
    }
    if let Some(cos) = report.aggregate.latent_cosine {
        print!(", latent_cosine {cos:.3}");
    }
    println!(" -> {}", report_path.display());
    Ok(())
}

fn cmd_gradcheck(
    cycles: usize,
    frames: usize,
    hidden: usize,
    latent: usize,
    seed: u64,
    tolerance: f64,
) -> Result<(), CliError> {
    use rand::Rng;
    if cycles == 0 || frames == 0 {
        return Err(CliError::Usage("--cycles and --frames must be positive".into()));
    }
    let cfg = NetConfig {
        excitation_dim: 4,
        spectra_dim: 6,
        latent_dim: latent,
        speaker_code_dim: 1,
        hidden_units: hidden,
        conv_kernel: 3,
        conv_dilations: vec![1, 3],
        dropout_prob: 0.5,
    };
    let d = cfg.feature_dim();
    let mean: Vec<f64> = (0..d).map(|i| 0.1 * i as f64).collect();
    let std: Vec<f64> = (0..d).map(|i| 0.9 + 0.02 * i as f64).collect();
    let params = init_model_params(cfg.clone(), &mean, &std, seed).map_err(CliError::from)?;

    let mut data_rng = cyclevae::rng::stream(seed, &[0xda7a]);
    let mut excitation = Vec::new();
    let mut spectra = Vec::new();
    let mut conv = Vec::new();
    for t in 0..frames {
        let voiced = (t % 2 == 0) as u8 as f64;
        excitation.push(vec![
            5.0 + 0.2 * data_rng.random::<f64>(),
            voiced,
            data_rng.random::<f64>() - 0.5,
            data_rng.random::<f64>() - 0.5,
        ]);
        spectra.push((0..6).map(|_| data_rng.random::<f64>() - 0.5).collect());
        conv.push(vec![
            5.5 + 0.2 * data_rng.random::<f64>(),
            voiced,
            data_rng.random::<f64>() - 0.5,
            data_rng.random::<f64>() - 0.5,
        ]);
    }
    let code_x = Tensor::vector(vec![0.0]);
    let code_y = Tensor::vector(vec![1.0]);
    let input = SegmentInput {
        excitation: &excitation,
        spectra: &spectra,
        conv_excitation: &conv,
        code_x: &code_x,
        code_y: &code_y,
    };
    let trainable: NamedTensors = params
        .tensors()
        .iter()
        .filter(|(n, _)| ModelParams::is_trainable(n))
        .map(|(n, t)| (n.clone(), t.clone()))
        .collect();
    let report = grad_check::<ObjectiveError, _>(&trainable, 1e-5, |tape, nodes| {
        let bound = BoundParams::from_nodes(tape, &params, nodes);
        let mut states = PassStates::fresh();
        let mut streams = RngStreams::for_segment(seed, 0, 0);
        let (breakdown, _) =
            cyclevae_loss(tape, &bound, &input, cycles, &mut states, Some(&mut streams))?;
        Ok(breakdown.root)
    })
    .map_err(CliError::from)?;

    let pass = report.max_relative_error < tolerance;
    println!(
        "{}",
        serde_json::json!({
            "max_relative_error": report.max_relative_error,
            "worst_parameter": report.worst_parameter,
            "worst_index": report.worst_index,
            "tolerance": tolerance,
            "pass": pass,
        })
    );
    if pass {
        Ok(())
    } else {
        Err(CliError::Numeric(format!(
            "gradient check failed: max relative error {} >= {tolerance}",
            report.max_relative_error
        )))
    }
}
