//! Parameter initialization, Adam optimization, batch-frame segmentation,
//! the epoch loop, checkpointing, and deterministic seeding.
//!
//! Determinism contract: the checkpoint bytes are a pure function of
//! (seed, config, corpus). Every stochastic draw comes from a stream
//! derived from the seed and a structural position, utterance order is
//! shuffled by a per-epoch derived stream, and parameters update in
//! sorted-name order.

mod adam;
mod init;
mod segments;

pub use adam::{clip_global_norm, global_norm, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON};
pub use init::{glorot_init, init_model_params};
pub use segments::make_segments;

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{NamedTensors, Tape, Tensor};
use crate::eval::{
    conversion_mcd, default_c0_threshold, latent_cosine, mcd, AlignmentPath, EvalError,
};
use crate::features::{
    build_converted_excitation, load_corpus, CorpusEntry, CorpusStats, FeatureError,
    SpeakerStats, UtteranceFeatures,
};
use crate::net::{
    read_checkpoint, write_checkpoint, BoundParams, CheckpointError, ModelParams, NetConfig,
    NetError,
};
use crate::objective::{
    cyclevae_loss, vae_loss, LossTerms, ObjectiveError, PassStates, RngStreams, SegmentInput,
    SpeakerPair,
};
use crate::rng::{purpose, stream};

/// Gradient clipping threshold (global L2 norm) applied before every Adam
/// step; recurrent backpropagation through several cycles occasionally
/// spikes.
pub const GRAD_CLIP_NORM: f64 = 10.0;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Objective(ObjectiveError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),
    #[error("training diverged at epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("checkpoint does not match the training config: {0}")]
    ResumeMismatch(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    Vae,
    CycleVae,
}

impl std::fmt::Display for TrainMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TrainMode::Vae => write!(f, "vae"),
            TrainMode::CycleVae => write!(f, "cyclevae"),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: TrainMode,
    /// Number of conversion cycles per segment (cyclevae mode).
    pub cycles: usize,
    pub learning_rate: f64,
    pub batch_frames: usize,
    pub epochs: usize,
    pub seed: u64,
    pub net: NetConfig,
    pub corpus_dir: PathBuf,
    pub stats_path: PathBuf,
    pub out_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resume_from: Option<PathBuf>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.cycles == 0 {
            return Err(TrainError::Config(
                "cycles must be at least 1; use mode=vae for the conventional objective".into(),
            ));
        }
        if !(self.learning_rate > 0.0) {
            return Err(TrainError::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_frames == 0 {
            return Err(TrainError::Config("batch_frames must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be at least 1".into()));
        }
        self.net.validate()?;
        Ok(())
    }
}

/// One line of the per-epoch metrics log. Loss terms are per frame.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub kl_real: f64,
    pub kl_converted: f64,
    pub loglik_rec: f64,
    pub loglik_cyc: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub rec_mcd: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cyc_mcd: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cv_mcd: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latent_cosine: Option<f64>,
}

/// Everything a checkpoint stores: model tensors, optimizer state, and
/// run metadata, flattened into the named-tensor container.
#[derive(Clone, Debug)]
pub struct TrainingCheckpoint {
    pub params: ModelParams,
    pub adam: AdamState,
    /// Completed epochs.
    pub epoch: usize,
    pub best_val: f64,
    pub seed: u64,
    pub mode: TrainMode,
    pub cycles: usize,
    pub learning_rate: f64,
    pub batch_frames: usize,
    pub stats: CorpusStats,
}

impl TrainingCheckpoint {
    fn to_tensors(&self) -> NamedTensors {
        let mut t = self.params.tensors().clone();
        for (name, m) in &self.adam.m {
            t.insert(format!("adam.m.{name}"), m.clone());
        }
        for (name, v) in &self.adam.v {
            t.insert(format!("adam.v.{name}"), v.clone());
        }
        t.insert("adam.step".into(), Tensor::scalar(self.adam.step as f64));

        let cfg = self.params.config();
        t.insert(
            "meta.netconfig".into(),
            Tensor::vector(vec![
                cfg.excitation_dim as f64,
                cfg.spectra_dim as f64,
                cfg.latent_dim as f64,
                cfg.speaker_code_dim as f64,
                cfg.hidden_units as f64,
                cfg.conv_kernel as f64,
                cfg.dropout_prob,
            ]),
        );
        t.insert(
            "meta.conv_dilations".into(),
            Tensor::vector(cfg.conv_dilations.iter().map(|&d| d as f64).collect()),
        );
        let mode = match self.mode {
            TrainMode::Vae => 0.0,
            TrainMode::CycleVae => 1.0,
        };
        t.insert("meta.mode".into(), Tensor::scalar(mode));
        t.insert("meta.cycles".into(), Tensor::scalar(self.cycles as f64));
        t.insert("meta.epoch".into(), Tensor::scalar(self.epoch as f64));
        t.insert("meta.best_val".into(), Tensor::scalar(self.best_val));
        t.insert("meta.learning_rate".into(), Tensor::scalar(self.learning_rate));
        t.insert(
            "meta.batch_frames".into(),
            Tensor::scalar(self.batch_frames as f64),
        );
        t.insert(
            "meta.seed".into(),
            Tensor::vector(self.seed.to_le_bytes().iter().map(|&b| b as f64).collect()),
        );
        for (id, spk) in &self.stats.speakers {
            t.insert(
                format!("meta.speaker.{id}.logf0"),
                Tensor::vector(vec![spk.logf0_mean, spk.logf0_std]),
            );
            t.insert(format!("meta.speaker.{id}.gv"), Tensor::vector(spk.gv.clone()));
        }
        t
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        write_checkpoint(path, &self.to_tensors())
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let tensors = read_checkpoint(path)?;
        Self::from_tensors(&tensors)
    }

    fn meta_scalar(tensors: &NamedTensors, name: &str) -> Result<f64, TrainError> {
        tensors
            .get(name)
            .and_then(|t| t.scalar_value().ok())
            .ok_or_else(|| TrainError::ResumeMismatch(format!("missing scalar {name}")))
    }

    pub fn from_tensors(tensors: &NamedTensors) -> Result<Self, TrainError> {
        let get = |name: &str| -> Result<&Tensor, TrainError> {
            tensors
                .get(name)
                .ok_or_else(|| TrainError::ResumeMismatch(format!("missing tensor {name}")))
        };
        let nc = get("meta.netconfig")?.data().to_vec();
        if nc.len() != 7 {
            return Err(TrainError::ResumeMismatch("meta.netconfig malformed".into()));
        }
        let config = NetConfig {
            excitation_dim: nc[0] as usize,
            spectra_dim: nc[1] as usize,
            latent_dim: nc[2] as usize,
            speaker_code_dim: nc[3] as usize,
            hidden_units: nc[4] as usize,
            conv_kernel: nc[5] as usize,
            conv_dilations: get("meta.conv_dilations")?
                .data()
                .iter()
                .map(|&d| d as usize)
                .collect(),
            dropout_prob: nc[6],
        };
        let params = ModelParams::from_tensors(config, tensors)?;

        let mut adam = AdamState::new(&params);
        for name in params.trainable_names() {
            let m = get(&format!("adam.m.{name}"))?;
            let v = get(&format!("adam.v.{name}"))?;
            adam.m.insert(name.clone(), m.clone());
            adam.v.insert(name, v.clone());
        }
        adam.step = Self::meta_scalar(tensors, "adam.step")? as u64;

        let seed_bytes = get("meta.seed")?.data().to_vec();
        if seed_bytes.len() != 8 {
            return Err(TrainError::ResumeMismatch("meta.seed malformed".into()));
        }
        let mut bytes = [0u8; 8];
        for (b, v) in bytes.iter_mut().zip(&seed_bytes) {
            *b = *v as u8;
        }

        let mut speakers = BTreeMap::new();
        for name in tensors.keys() {
            if let Some(rest) = name.strip_prefix("meta.speaker.") {
                if let Some(id) = rest.strip_suffix(".logf0") {
                    let lf = get(name)?.data();
                    let gv = get(&format!("meta.speaker.{id}.gv"))?.data().to_vec();
                    speakers.insert(
                        id.to_string(),
                        SpeakerStats {
                            logf0_mean: lf[0],
                            logf0_std: lf[1],
                            gv,
                        },
                    );
                }
            }
        }
        let stats = CorpusStats {
            feat_mean: params["enc.norm.mean"].data().to_vec(),
            feat_std: params["enc.norm.std"].data().to_vec(),
            speakers,
        };
        stats.validate()?;

        let mode = if Self::meta_scalar(tensors, "meta.mode")? == 0.0 {
            TrainMode::Vae
        } else {
            TrainMode::CycleVae
        };
        Ok(TrainingCheckpoint {
            epoch: Self::meta_scalar(tensors, "meta.epoch")? as usize,
            best_val: Self::meta_scalar(tensors, "meta.best_val")?,
            seed: u64::from_le_bytes(bytes),
            mode,
            cycles: Self::meta_scalar(tensors, "meta.cycles")? as usize,
            learning_rate: Self::meta_scalar(tensors, "meta.learning_rate")?,
            batch_frames: Self::meta_scalar(tensors, "meta.batch_frames")? as usize,
            params,
            adam,
            stats,
        })
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub last_checkpoint: PathBuf,
    pub best_checkpoint: PathBuf,
    pub metrics_path: PathBuf,
    pub epochs_run: usize,
    pub final_metrics: EpochMetrics,
}

struct ValEntry {
    entry: CorpusEntry,
    reference: Option<UtteranceFeatures>,
}

fn map_loss_err(err: ObjectiveError, epoch: usize) -> TrainError {
    match err {
        ObjectiveError::Divergence { .. } | ObjectiveError::Net(NetError::NonFinite { .. }) => {
            TrainError::Divergence { epoch }
        }
        other => TrainError::Objective(other),
    }
}

fn segment_loss(
    tape: &mut Tape,
    bound: &BoundParams,
    mode: TrainMode,
    input: &SegmentInput<'_>,
    cycles: usize,
    states: &mut PassStates,
    streams: Option<&mut RngStreams>,
) -> Result<(crate::objective::LossBreakdown, Option<crate::objective::CycleTrace>), ObjectiveError>
{
    match mode {
        TrainMode::Vae => {
            let (breakdown, _) = vae_loss(tape, bound, input, states, streams)?;
            Ok((breakdown, None))
        }
        TrainMode::CycleVae => {
            let (breakdown, trace) = cyclevae_loss(tape, bound, input, cycles, states, streams)?;
            Ok((breakdown, Some(trace)))
        }
    }
}

fn speech_rows(rows: &[Vec<f64>], mask: &[bool]) -> Vec<Vec<f64>> {
    rows.iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(r, _)| r.clone())
        .collect()
}

/// Identity-aligned MCD over speech frames between predicted node values
/// and observed spectra.
fn identity_mcd(
    predicted: &[Vec<f64>],
    observed: &[Vec<f64>],
    mask: &[bool],
) -> Result<f64, EvalError> {
    let p = speech_rows(predicted, mask);
    let o = speech_rows(observed, mask);
    if p.is_empty() {
        return Err(EvalError::NoSpeechFrames);
    }
    Ok(mcd(&p, &o, AlignmentPath::identity(p.len()))?.mcd_db)
}

struct EpochAccumulator {
    terms: LossTerms,
    objective: f64,
    frames: usize,
}

impl EpochAccumulator {
    fn new() -> Self {
        EpochAccumulator {
            terms: LossTerms::default(),
            objective: 0.0,
            frames: 0,
        }
    }

    fn add(&mut self, breakdown: &crate::objective::LossBreakdown) {
        for c in &breakdown.cycles {
            self.terms.kl_real += c.kl_real;
            self.terms.kl_converted += c.kl_converted;
            self.terms.loglik_rec += c.loglik_rec;
            self.terms.loglik_cyc += c.loglik_cyc;
        }
        self.objective += breakdown.objective;
        self.frames += breakdown.frames;
    }
}

/// Run the optimization loop: per epoch, iterate shuffled utterances,
/// accumulate the mode's objective per batch-frame segment, backpropagate,
/// clip, and apply Adam; then score the held-out utterances, append a
/// metrics line, and checkpoint (always `last.cvck`, plus `best.cvck` at
/// the best validation loss so far).
pub fn train(config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let corpus = load_corpus(&config.corpus_dir)?;
    let (d_e, d_s) = corpus.check_dims()?;
    if d_e != config.net.excitation_dim || d_s != config.net.spectra_dim {
        return Err(TrainError::Config(format!(
            "corpus dims ({d_e}, {d_s}) do not match net config ({}, {})",
            config.net.excitation_dim, config.net.spectra_dim
        )));
    }
    let stats_text =
        std::fs::read_to_string(&config.stats_path).map_err(|source| TrainError::Io {
            path: config.stats_path.clone(),
            source,
        })?;
    let stats = CorpusStats::from_json(&stats_text)?;
    if stats.feature_dim() != config.net.feature_dim() {
        return Err(TrainError::Config(format!(
            "stats dim {} does not match net feature dim {}",
            stats.feature_dim(),
            config.net.feature_dim()
        )));
    }
    let pair = SpeakerPair::from_stats(&stats).map_err(TrainError::Objective)?;
    for entry in &corpus.entries {
        pair.index_of(&entry.features.speaker_id)
            .map_err(TrainError::Objective)?;
    }

    // Hold out the last utterance (sorted key order) of each speaker.
    let mut train_entries: Vec<CorpusEntry> = Vec::new();
    let mut val_entries: Vec<ValEntry> = Vec::new();
    for speaker in pair.ids.iter() {
        let mut own: Vec<CorpusEntry> = corpus.by_speaker(speaker).cloned().collect();
        own.sort_by(|a, b| a.key.cmp(&b.key));
        if own.len() < 2 {
            return Err(TrainError::Config(format!(
                "speaker {speaker} needs at least 2 utterances (1 train + 1 validation)"
            )));
        }
        let val = own.pop().expect("nonempty");
        let reference = corpus
            .paired(&val, pair.other(speaker).map_err(TrainError::Objective)?)
            .map(|e| e.features.clone());
        val_entries.push(ValEntry { entry: val, reference });
        train_entries.extend(own);
    }
    train_entries.sort_by(|a, b| (&a.key, &a.features.speaker_id).cmp(&(&b.key, &b.features.speaker_id)));

    std::fs::create_dir_all(&config.out_dir).map_err(|source| TrainError::Io {
        path: config.out_dir.clone(),
        source,
    })?;
    let last_path = config.out_dir.join("last.cvck");
    let best_path = config.out_dir.join("best.cvck");
    let metrics_path = config.out_dir.join("metrics.jsonl");

    // Fresh start or resume.
    let (mut params, mut adam, epoch_start, mut best_val) = match &config.resume_from {
        Some(path) => {
            let ckpt = TrainingCheckpoint::load(path)?;
            if ckpt.params.config() != &config.net {
                return Err(TrainError::ResumeMismatch("net config differs".into()));
            }
            for (what, ours, theirs) in [
                ("seed", config.seed as f64, ckpt.seed as f64),
                ("cycles", config.cycles as f64, ckpt.cycles as f64),
                ("learning_rate", config.learning_rate, ckpt.learning_rate),
                ("batch_frames", config.batch_frames as f64, ckpt.batch_frames as f64),
            ] {
                if ours != theirs {
                    return Err(TrainError::ResumeMismatch(format!(
                        "{what} differs (config {ours}, checkpoint {theirs})"
                    )));
                }
            }
            if ckpt.mode != config.mode {
                return Err(TrainError::ResumeMismatch("mode differs".into()));
            }
            if ckpt.epoch >= config.epochs {
                return Err(TrainError::Config(format!(
                    "checkpoint already at epoch {} of {}",
                    ckpt.epoch, config.epochs
                )));
            }
            (ckpt.params, ckpt.adam, ckpt.epoch, ckpt.best_val)
        }
        None => {
            let params =
                init_model_params(config.net.clone(), &stats.feat_mean, &stats.feat_std, config.seed)?;
            let adam = AdamState::new(&params);
            // truncate any stale metrics log
            std::fs::write(&metrics_path, "").map_err(|source| TrainError::Io {
                path: metrics_path.clone(),
                source,
            })?;
            (params, AdamState { ..adam }, 0, f64::INFINITY)
        }
    };

    let c0_threshold = default_c0_threshold(&corpus);
    let frame_counts: Vec<usize> = train_entries.iter().map(|e| e.features.frames()).collect();
    let segment_plan = make_segments(&frame_counts, config.batch_frames)?;

    let mut metrics_file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&metrics_path)
        .map_err(|source| TrainError::Io {
            path: metrics_path.clone(),
            source,
        })?;

    let mut last_metrics: Option<EpochMetrics> = None;
    for epoch in epoch_start..config.epochs {
        let mut order: Vec<usize> = (0..train_entries.len()).collect();
        order.shuffle(&mut stream(config.seed, &[purpose::SHUFFLE, epoch as u64]));

        let mut acc = EpochAccumulator::new();
        let mut segment_counter = 0u64;
        for &utt_idx in &order {
            let utt = &train_entries[utt_idx].features;
            let (src, tgt) = pair.direction(&utt.speaker_id).map_err(TrainError::Objective)?;
            let conv_excitation =
                build_converted_excitation(&utt.excitation, pair.logf0[src], pair.logf0[tgt])?;
            let mut states = PassStates::fresh();
            for range in &segment_plan[utt_idx] {
                let input = SegmentInput {
                    excitation: &utt.excitation[range.clone()],
                    spectra: &utt.spectra[range.clone()],
                    conv_excitation: &conv_excitation[range.clone()],
                    code_x: &pair.codes[src],
                    code_y: &pair.codes[tgt],
                };
                let mut streams = RngStreams::for_segment(config.seed, epoch as u64, segment_counter);
                segment_counter += 1;

                let mut tape = Tape::new();
                let bound = BoundParams::bind(&mut tape, &params);
                let (breakdown, _) = segment_loss(
                    &mut tape,
                    &bound,
                    config.mode,
                    &input,
                    config.cycles,
                    &mut states,
                    Some(&mut streams),
                )
                .map_err(|e| map_loss_err(e, epoch + 1))?;
                tape.backward(breakdown.root).map_err(|e| {
                    TrainError::Objective(ObjectiveError::Autodiff(e))
                })?;

                let mut grads = NamedTensors::new();
                for (name, node) in bound.trainable() {
                    grads.insert(name.clone(), tape.grad_tensor(node));
                }
                clip_global_norm(&mut grads, GRAD_CLIP_NORM);
                adam.apply(&mut params, &grads, config.learning_rate)?;
                acc.add(&breakdown);
            }
        }

        // Validation: deterministic (eval-mode) loss and metrics on the
        // held-out utterances.
        let mut val_acc = EpochAccumulator::new();
        let mut rec_sum = 0.0;
        let mut cyc_sum = 0.0;
        let mut cyc_count = 0usize;
        let mut cv_sum = 0.0;
        let mut cv_count = 0usize;
        let mut cos_sum = 0.0;
        let mut cos_count = 0usize;
        for val in &val_entries {
            let utt = &val.entry.features;
            let (src, tgt) = pair.direction(&utt.speaker_id).map_err(TrainError::Objective)?;
            let conv_excitation =
                build_converted_excitation(&utt.excitation, pair.logf0[src], pair.logf0[tgt])?;
            let input = SegmentInput {
                excitation: &utt.excitation,
                spectra: &utt.spectra,
                conv_excitation: &conv_excitation,
                code_x: &pair.codes[src],
                code_y: &pair.codes[tgt],
            };
            let mut states = PassStates::fresh();
            let mut tape = Tape::new();
            let bound = BoundParams::bind(&mut tape, &params);
            let (breakdown, trace) = segment_loss(
                &mut tape,
                &bound,
                config.mode,
                &input,
                config.cycles,
                &mut states,
                None,
            )
            .map_err(|e| map_loss_err(e, epoch + 1))?;
            val_acc.add(&breakdown);

            let mask = utt.speech_mask(c0_threshold);
            let values = |nodes: &[crate::autodiff::NodeId]| -> Vec<Vec<f64>> {
                nodes.iter().map(|&id| tape.value(id).data().to_vec()).collect()
            };
            match (&trace, config.mode) {
                (Some(trace), _) => {
                    let first = &trace.cycles[0];
                    rec_sum += identity_mcd(&values(&first.rec_spectra), &utt.spectra, &mask)?;
                    cyc_sum += identity_mcd(&values(&first.cyc_spectra), &utt.spectra, &mask)?;
                    cyc_count += 1;
                    if let Some(reference) = &val.reference {
                        let converted = UtteranceFeatures {
                            speaker_id: pair.ids[tgt].clone(),
                            excitation: conv_excitation.clone(),
                            spectra: values(&first.cv_spectra),
                            speech_flags: utt.speech_flags.clone(),
                            frame_shift_us: utt.frame_shift_us,
                        };
                        cv_sum += conversion_mcd(&converted, reference, c0_threshold)?.mcd_db;
                        cv_count += 1;
                    }
                }
                (None, _) => {
                    // vae mode: reconstruct deterministically for the metric
                    let mut states = PassStates::fresh();
                    let mut vae_tape = Tape::new();
                    let vae_bound = BoundParams::bind(&mut vae_tape, &params);
                    let (_, vtrace) = vae_loss(
                        &mut vae_tape,
                        &vae_bound,
                        &input,
                        &mut states,
                        None,
                    )
                    .map_err(|e| map_loss_err(e, epoch + 1))?;
                    let rec: Vec<Vec<f64>> = vtrace
                        .rec_spectra
                        .iter()
                        .map(|&id| vae_tape.value(id).data().to_vec())
                        .collect();
                    rec_sum += identity_mcd(&rec, &utt.spectra, &mask)?;
                }
            }
            if let Some(reference) = &val.reference {
                cos_sum += latent_cosine(&params, utt, reference, c0_threshold)?.mean_cosine;
                cos_count += 1;
            }
        }

        let n_val = val_entries.len() as f64;
        let val_loss = val_acc.objective / val_acc.frames as f64;
        let metrics = EpochMetrics {
            epoch: epoch + 1,
            kl_real: acc.terms.kl_real / acc.frames as f64,
            kl_converted: acc.terms.kl_converted / acc.frames as f64,
            loglik_rec: acc.terms.loglik_rec / acc.frames as f64,
            loglik_cyc: acc.terms.loglik_cyc / acc.frames as f64,
            train_loss: acc.objective / acc.frames as f64,
            val_loss,
            rec_mcd: rec_sum / n_val,
            cyc_mcd: (cyc_count > 0).then(|| cyc_sum / cyc_count as f64),
            cv_mcd: (cv_count > 0).then(|| cv_sum / cv_count as f64),
            latent_cosine: (cos_count > 0).then(|| cos_sum / cos_count as f64),
        };
        let line = serde_json::to_string(&metrics).expect("metrics serialize");
        writeln!(metrics_file, "{line}").map_err(|source| TrainError::Io {
            path: metrics_path.clone(),
            source,
        })?;

        if val_loss < best_val {
            best_val = val_loss;
        }
        let ckpt = TrainingCheckpoint {
            params: params.clone(),
            adam: adam.clone(),
            epoch: epoch + 1,
            best_val,
            seed: config.seed,
            mode: config.mode,
            cycles: config.cycles,
            learning_rate: config.learning_rate,
            batch_frames: config.batch_frames,
            stats: stats.clone(),
        };
        ckpt.save(&last_path)?;
        if val_loss <= best_val {
            ckpt.save(&best_path)?;
        }
        last_metrics = Some(metrics);
    }

    Ok(TrainOutcome {
        last_checkpoint: last_path,
        best_checkpoint: best_path,
        metrics_path,
        epochs_run: config.epochs - epoch_start,
        final_metrics: last_metrics.expect("at least one epoch"),
    })
}
