//! Variational and cycle-consistent training objectives.
//!
//! The conventional objective regularizes the per-frame latent posterior
//! toward a standard-normal prior and rewards reconstruction under the
//! input speaker's code. The cyclic objective additionally decodes every
//! latent with the *other* speaker's code, re-encodes those converted
//! features together with transformed excitation, and decodes back with
//! the original code; the cyclic reconstruction is supervised by the
//! observed spectra, so the conversion path receives gradient even though
//! no parallel target exists. Cycles chain by feeding each cyclic
//! reconstruction in as the next cycle's spectra input, with gradients
//! kept attached through the whole recursion.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{AutodiffError, NodeId, Tape, Tensor};
use crate::features::{
    build_converted_excitation, CorpusStats, FeatureError, LogF0Stats, UtteranceFeatures,
};
use crate::net::{decoder_forward, encoder_forward, BoundParams, GruState, NetError};
use crate::rng::{purpose, stream, ChaCha12Rng};

#[derive(Debug, thiserror::Error)]
pub enum ObjectiveError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("non-finite loss in cycle {cycle}")]
    Divergence { cycle: usize },
    #[error("cycle count must be at least 1")]
    ZeroCycles,
    #[error("loss batch is empty")]
    EmptyBatch,
    #[error("unknown speaker id {0}")]
    UnknownSpeaker(String),
    #[error("training pair needs exactly 2 speakers, stats file has {0}")]
    SpeakerCount(usize),
}

/// The independent RNG streams a training segment consumes. Keeping the
/// epsilon draws of the real path, the epsilon draws of the converted
/// path, and the dropout masks in separate streams means a run that never
/// touches the converted path (the plain VAE) still sees bit-identical
/// real-path draws.
pub struct RngStreams {
    pub eps_real: ChaCha12Rng,
    pub eps_conv: ChaCha12Rng,
    pub dropout: ChaCha12Rng,
}

impl RngStreams {
    /// Streams for one (epoch, segment) position of a seeded run.
    pub fn for_segment(seed: u64, epoch: u64, segment: u64) -> Self {
        RngStreams {
            eps_real: stream(seed, &[purpose::EPS_REAL, epoch, segment]),
            eps_conv: stream(seed, &[purpose::EPS_CONVERTED, epoch, segment]),
            dropout: stream(seed, &[purpose::DROPOUT, epoch, segment]),
        }
    }
}

/// Which forward pass of a cycle a recurrent state belongs to. Passes are
/// keyed so state carries across segments of an utterance independently
/// per pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum PassRole {
    EncodeReal,
    DecodeRecon,
    DecodeConvert,
    EncodeConverted,
    DecodeCyclic,
}

/// Recurrent states for every (cycle, pass) of an utterance in progress.
/// Fresh (zero) states begin each utterance; updated states are detached,
/// so backpropagation truncates at segment boundaries.
#[derive(Clone, Debug, Default)]
pub struct PassStates {
    states: BTreeMap<(usize, PassRole), GruState>,
}

impl PassStates {
    pub fn fresh() -> Self {
        Self::default()
    }

    fn get(&self, cycle: usize, role: PassRole, hidden: usize, output_dim: usize) -> GruState {
        self.states
            .get(&(cycle, role))
            .cloned()
            .unwrap_or_else(|| GruState::zeros(hidden, output_dim))
    }

    fn put(&mut self, cycle: usize, role: PassRole, state: GruState) {
        self.states.insert((cycle, role), state);
    }
}

/// Per-cycle scalar loss values (data for reporting; the graph nodes live
/// in [`CycleNodes`]).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub kl_real: f64,
    pub kl_converted: f64,
    pub loglik_rec: f64,
    pub loglik_cyc: f64,
}

impl LossTerms {
    /// Contribution to the variational lower bound.
    pub fn lower_bound(&self) -> f64 {
        -self.kl_real - self.kl_converted + self.loglik_rec + self.loglik_cyc
    }
}

/// Graph handles for one cycle of the recursion.
#[derive(Clone, Debug)]
pub struct CycleNodes {
    pub z_real: Vec<NodeId>,
    pub z_converted: Vec<NodeId>,
    pub mu_real: Vec<NodeId>,
    pub mu_converted: Vec<NodeId>,
    pub rec_spectra: Vec<NodeId>,
    pub cv_spectra: Vec<NodeId>,
    pub cyc_spectra: Vec<NodeId>,
    /// Converted input frames `[converted excitation ; converted spectra]`.
    pub converted_input: Vec<NodeId>,
    /// Next cycle's input frames `[observed excitation ; cyclic spectra]`.
    pub next_input: Vec<NodeId>,
    pub kl_real: NodeId,
    pub kl_converted: NodeId,
    pub loglik_rec: NodeId,
    pub loglik_cyc: NodeId,
}

#[derive(Debug, Default)]
pub struct CycleTrace {
    pub cycles: Vec<CycleNodes>,
}

/// Loss summary for one segment or utterance.
#[derive(Clone, Debug)]
pub struct LossBreakdown {
    pub cycles: Vec<LossTerms>,
    /// Sum over cycles of the four-term lower bound.
    pub lower_bound: f64,
    /// Negated lower bound: the scalar minimized by gradient descent.
    pub objective: f64,
    pub frames: usize,
    /// Node of `objective` on the tape.
    pub root: NodeId,
}

impl LossBreakdown {
    /// Loss per input frame, comparable across utterance lengths.
    pub fn per_frame(&self) -> f64 {
        self.objective / self.frames as f64
    }
}

/// KL divergence of a diagonal Gaussian to the standard normal, summed
/// over frames and dimensions: `0.5 * sum(exp(lv) + mu^2 - 1 - lv)`.
pub fn kl_to_standard_normal(
    tape: &mut Tape,
    mu: &[NodeId],
    logvar: &[NodeId],
) -> Result<NodeId, AutodiffError> {
    assert_eq!(mu.len(), logvar.len(), "mu/logvar frame counts");
    let dim = tape.value(mu[0]).numel();
    let ones = tape.leaf(Tensor::ones(vec![dim]));
    let mut total: Option<NodeId> = None;
    for (&m, &lv) in mu.iter().zip(logvar) {
        let e = tape.exp(lv)?;
        let m2 = tape.square(m)?;
        let s = tape.add(e, m2)?;
        let s = tape.sub(s, ones)?;
        let s = tape.sub(s, lv)?;
        let frame = tape.sum(s)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, frame)?,
            None => frame,
        });
    }
    tape.scale(total.expect("at least one frame"), 0.5)
}

/// Reparameterized sample `z = mu + exp(logvar/2) * eps`, differentiable
/// in `mu` and `logvar`.
pub fn sample_latent(
    tape: &mut Tape,
    mu: NodeId,
    logvar: NodeId,
    eps: NodeId,
) -> Result<NodeId, AutodiffError> {
    let half = tape.scale(logvar, 0.5)?;
    let sigma = tape.exp(half)?;
    let noise = tape.mul(sigma, eps)?;
    tape.add(mu, noise)
}

/// Gaussian log-likelihood of observations under a unit-variance decoder,
/// up to the dropped additive constant `-(D/2) ln(2 pi)` per frame:
/// `-0.5 * sum_t ||obs_t - pred_t||^2`.
pub fn recon_loglik(
    tape: &mut Tape,
    predicted: &[NodeId],
    observed: &[NodeId],
) -> Result<NodeId, AutodiffError> {
    assert_eq!(predicted.len(), observed.len(), "frame counts");
    let mut total: Option<NodeId> = None;
    for (&p, &o) in predicted.iter().zip(observed) {
        let diff = tape.sub(o, p)?;
        let sq = tape.square(diff)?;
        let frame = tape.sum(sq)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, frame)?,
            None => frame,
        });
    }
    tape.scale(total.expect("at least one frame"), -0.5)
}

/// One utterance segment prepared for loss evaluation, with the
/// conversion direction already bound: `code_x` identifies the segment's
/// own speaker, `code_y` the conversion target.
pub struct SegmentInput<'a> {
    pub excitation: &'a [Vec<f64>],
    pub spectra: &'a [Vec<f64>],
    /// Excitation after the log-F0 mean/variance transform toward the
    /// target speaker.
    pub conv_excitation: &'a [Vec<f64>],
    pub code_x: &'a Tensor,
    pub code_y: &'a Tensor,
}

impl SegmentInput<'_> {
    pub fn frames(&self) -> usize {
        self.spectra.len()
    }
}

fn draw_eps(
    tape: &mut Tape,
    rng: Option<&mut ChaCha12Rng>,
    frames: usize,
    dim: usize,
) -> Vec<NodeId> {
    match rng {
        Some(rng) => (0..frames)
            .map(|_| {
                let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
                tape.leaf(Tensor::vector(v))
            })
            .collect(),
        None => (0..frames)
            .map(|_| tape.leaf(Tensor::zeros(vec![dim])))
            .collect(),
    }
}

fn check_finite(tape: &Tape, node: NodeId, cycle: usize) -> Result<f64, ObjectiveError> {
    let v = tape
        .value(node)
        .scalar_value()
        .map_err(ObjectiveError::Autodiff)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(ObjectiveError::Divergence { cycle })
    }
}

struct CycleStepOutcome {
    nodes: CycleNodes,
    terms: LossTerms,
}

/// One full cycle: encode the cycle's input, decode reconstructed and
/// converted spectra, re-encode the converted features, decode the cyclic
/// reconstruction, and score the four loss terms against the observed
/// spectra. `x_frames` is the cycle's input sequence (observed features
/// for the first cycle, recursed features afterward).
#[allow(clippy::too_many_arguments)]
fn cycle_step(
    tape: &mut Tape,
    bound: &BoundParams,
    input: &SegmentInput<'_>,
    x_frames: &[NodeId],
    e_x: &[NodeId],
    e_conv: &[NodeId],
    obs_spectra: &[NodeId],
    cycle: usize,
    states: &mut PassStates,
    mut streams: Option<&mut RngStreams>,
) -> Result<CycleStepOutcome, ObjectiveError> {
    let cfg = bound.config().clone();
    let (hidden, prob) = (cfg.hidden_units, cfg.dropout_prob);
    let enc_dim = cfg.encoder_output_dim();
    let dec_dim = cfg.decoder_output_dim();
    let frames = x_frames.len();

    // Real path: encode, then reconstruct with the segment's own code and
    // convert with the other speaker's code.
    let state = states.get(cycle, PassRole::EncodeReal, hidden, enc_dim);
    let enc_real = encoder_forward(
        tape,
        bound,
        x_frames,
        &state,
        streams.as_mut().map(|s| (&mut s.dropout, prob)),
    )?;
    states.put(cycle, PassRole::EncodeReal, enc_real.final_state.clone());

    let eps = draw_eps(
        tape,
        streams.as_mut().map(|s| &mut s.eps_real),
        frames,
        cfg.latent_dim,
    );
    let mut z_real = Vec::with_capacity(frames);
    for t in 0..frames {
        z_real.push(sample_latent(tape, enc_real.mu[t], enc_real.logvar[t], eps[t])?);
    }

    let state = states.get(cycle, PassRole::DecodeRecon, hidden, dec_dim);
    let dec_rec = decoder_forward(
        tape,
        bound,
        &z_real,
        input.code_x,
        &state,
        streams.as_mut().map(|s| (&mut s.dropout, prob)),
    )?;
    states.put(cycle, PassRole::DecodeRecon, dec_rec.final_state.clone());

    let state = states.get(cycle, PassRole::DecodeConvert, hidden, dec_dim);
    let dec_cv = decoder_forward(
        tape,
        bound,
        &z_real,
        input.code_y,
        &state,
        streams.as_mut().map(|s| (&mut s.dropout, prob)),
    )?;
    states.put(cycle, PassRole::DecodeConvert, dec_cv.final_state.clone());

    // Converted path: assemble converted input features and run them back
    // through encoder and decoder. Gradients flow into the converted
    // spectra through this path, which is what optimizes conversion.
    let mut converted_input = Vec::with_capacity(frames);
    for t in 0..frames {
        converted_input.push(tape.concat(&[e_conv[t], dec_cv.spectra[t]])?);
    }
    let state = states.get(cycle, PassRole::EncodeConverted, hidden, enc_dim);
    let enc_conv = encoder_forward(
        tape,
        bound,
        &converted_input,
        &state,
        streams.as_mut().map(|s| (&mut s.dropout, prob)),
    )?;
    states.put(cycle, PassRole::EncodeConverted, enc_conv.final_state.clone());

    let eps = draw_eps(
        tape,
        streams.as_mut().map(|s| &mut s.eps_conv),
        frames,
        cfg.latent_dim,
    );
    let mut z_converted = Vec::with_capacity(frames);
    for t in 0..frames {
        z_converted.push(sample_latent(
            tape,
            enc_conv.mu[t],
            enc_conv.logvar[t],
            eps[t],
        )?);
    }

    let state = states.get(cycle, PassRole::DecodeCyclic, hidden, dec_dim);
    let dec_cyc = decoder_forward(
        tape,
        bound,
        &z_converted,
        input.code_x,
        &state,
        streams.as_mut().map(|s| (&mut s.dropout, prob)),
    )?;
    states.put(cycle, PassRole::DecodeCyclic, dec_cyc.final_state.clone());

    let mut next_input = Vec::with_capacity(frames);
    for t in 0..frames {
        next_input.push(tape.concat(&[e_x[t], dec_cyc.spectra[t]])?);
    }

    let kl_real = kl_to_standard_normal(tape, &enc_real.mu, &enc_real.logvar)?;
    let kl_converted = kl_to_standard_normal(tape, &enc_conv.mu, &enc_conv.logvar)?;
    let loglik_rec = recon_loglik(tape, &dec_rec.spectra, obs_spectra)?;
    let loglik_cyc = recon_loglik(tape, &dec_cyc.spectra, obs_spectra)?;

    let terms = LossTerms {
        kl_real: check_finite(tape, kl_real, cycle)?,
        kl_converted: check_finite(tape, kl_converted, cycle)?,
        loglik_rec: check_finite(tape, loglik_rec, cycle)?,
        loglik_cyc: check_finite(tape, loglik_cyc, cycle)?,
    };

    Ok(CycleStepOutcome {
        nodes: CycleNodes {
            z_real,
            z_converted,
            mu_real: enc_real.mu,
            mu_converted: enc_conv.mu,
            rec_spectra: dec_rec.spectra,
            cv_spectra: dec_cv.spectra,
            cyc_spectra: dec_cyc.spectra,
            converted_input,
            next_input,
            kl_real,
            kl_converted,
            loglik_rec,
            loglik_cyc,
        },
        terms,
    })
}

fn feature_leaves(tape: &mut Tape, rows: &[Vec<f64>]) -> Vec<NodeId> {
    rows.iter()
        .map(|r| tape.leaf(Tensor::vector(r.clone())))
        .collect()
}

/// The cycle-consistent loss over `n_cycles` cycles, negated for
/// minimization. The first cycle consumes the observed features; each
/// later cycle consumes `[observed excitation ; previous cyclic
/// reconstruction]` with gradients attached through the recursion.
pub fn cyclevae_loss(
    tape: &mut Tape,
    bound: &BoundParams,
    input: &SegmentInput<'_>,
    n_cycles: usize,
    states: &mut PassStates,
    mut streams: Option<&mut RngStreams>,
) -> Result<(LossBreakdown, CycleTrace), ObjectiveError> {
    if n_cycles == 0 {
        return Err(ObjectiveError::ZeroCycles);
    }
    let frames = input.frames();
    let e_x = feature_leaves(tape, input.excitation);
    let e_conv = feature_leaves(tape, input.conv_excitation);
    let obs_spectra = feature_leaves(tape, input.spectra);

    // first cycle input: the observed [excitation ; spectra] frames
    let mut x_frames: Vec<NodeId> = (0..frames)
        .map(|t| tape.concat(&[e_x[t], obs_spectra[t]]))
        .collect::<Result<_, _>>()?;

    let mut trace = CycleTrace::default();
    let mut cycles = Vec::with_capacity(n_cycles);
    let mut root: Option<NodeId> = None;
    for cycle in 0..n_cycles {
        let outcome = cycle_step(
            tape,
            bound,
            input,
            &x_frames,
            &e_x,
            &e_conv,
            &obs_spectra,
            cycle,
            states,
            streams.as_deref_mut(),
        )?;
        // objective contribution: kl_real + kl_converted - loglik_rec - loglik_cyc
        let kl = tape.add(outcome.nodes.kl_real, outcome.nodes.kl_converted)?;
        let ll = tape.add(outcome.nodes.loglik_rec, outcome.nodes.loglik_cyc)?;
        let contribution = tape.sub(kl, ll)?;
        root = Some(match root {
            Some(acc) => tape.add(acc, contribution)?,
            None => contribution,
        });
        x_frames = outcome.nodes.next_input.clone();
        cycles.push(outcome.terms);
        trace.cycles.push(outcome.nodes);
    }
    let root = root.expect("n_cycles >= 1");
    let objective = check_finite(tape, root, n_cycles - 1)?;
    let lower_bound: f64 = cycles.iter().map(LossTerms::lower_bound).sum();
    Ok((
        LossBreakdown {
            cycles,
            lower_bound,
            objective,
            frames,
            root,
        },
        trace,
    ))
}

/// Graph handles from a conventional VAE loss evaluation.
#[derive(Debug)]
pub struct VaeTrace {
    pub mu: Vec<NodeId>,
    pub logvar: Vec<NodeId>,
    pub z: Vec<NodeId>,
    pub rec_spectra: Vec<NodeId>,
}

/// The conventional variational objective: KL to the prior plus
/// reconstruction under the input speaker's code, negated for
/// minimization. Consumes the same real-path RNG draws as the first cycle
/// of [`cyclevae_loss`], so the two agree bit-exactly on shared terms
/// when given identical streams.
pub fn vae_loss(
    tape: &mut Tape,
    bound: &BoundParams,
    input: &SegmentInput<'_>,
    states: &mut PassStates,
    mut streams: Option<&mut RngStreams>,
) -> Result<(LossBreakdown, VaeTrace), ObjectiveError> {
    let cfg = bound.config().clone();
    let frames = input.frames();
    let e_x = feature_leaves(tape, input.excitation);
    let obs_spectra = feature_leaves(tape, input.spectra);
    let x_frames: Vec<NodeId> = (0..frames)
        .map(|t| tape.concat(&[e_x[t], obs_spectra[t]]))
        .collect::<Result<_, _>>()?;

    let state = states.get(
        0,
        PassRole::EncodeReal,
        cfg.hidden_units,
        cfg.encoder_output_dim(),
    );
    let enc = encoder_forward(
        tape,
        bound,
        &x_frames,
        &state,
        streams.as_mut().map(|s| (&mut s.dropout, cfg.dropout_prob)),
    )?;
    states.put(0, PassRole::EncodeReal, enc.final_state.clone());

    let eps = draw_eps(
        tape,
        streams.as_mut().map(|s| &mut s.eps_real),
        frames,
        cfg.latent_dim,
    );
    let mut z = Vec::with_capacity(frames);
    for t in 0..frames {
        z.push(sample_latent(tape, enc.mu[t], enc.logvar[t], eps[t])?);
    }

    let state = states.get(
        0,
        PassRole::DecodeRecon,
        cfg.hidden_units,
        cfg.decoder_output_dim(),
    );
    let dec = decoder_forward(
        tape,
        bound,
        &z,
        input.code_x,
        &state,
        streams.as_mut().map(|s| (&mut s.dropout, cfg.dropout_prob)),
    )?;
    states.put(0, PassRole::DecodeRecon, dec.final_state.clone());

    let kl = kl_to_standard_normal(tape, &enc.mu, &enc.logvar)?;
    let ll = recon_loglik(tape, &dec.spectra, &obs_spectra)?;
    let root = tape.sub(kl, ll)?;

    let terms = LossTerms {
        kl_real: check_finite(tape, kl, 0)?,
        kl_converted: 0.0,
        loglik_rec: check_finite(tape, ll, 0)?,
        loglik_cyc: 0.0,
    };
    let objective = check_finite(tape, root, 0)?;
    Ok((
        LossBreakdown {
            cycles: vec![terms],
            lower_bound: terms.lower_bound(),
            objective,
            frames,
            root,
        },
        VaeTrace {
            mu: enc.mu,
            logvar: enc.logvar,
            z,
            rec_spectra: dec.spectra,
        },
    ))
}

/// The two speakers of a conversion pair with their binary codes (sorted
/// id order: first id gets code 0) and log-F0 statistics.
#[derive(Clone, Debug)]
pub struct SpeakerPair {
    pub ids: [String; 2],
    pub codes: [Tensor; 2],
    pub logf0: [LogF0Stats; 2],
}

impl SpeakerPair {
    pub fn from_stats(stats: &CorpusStats) -> Result<Self, ObjectiveError> {
        if stats.speakers.len() != 2 {
            return Err(ObjectiveError::SpeakerCount(stats.speakers.len()));
        }
        let mut ids = stats.speakers.keys().cloned();
        let first = ids.next().unwrap();
        let second = ids.next().unwrap();
        let logf0 = [
            stats.speakers[&first].logf0(),
            stats.speakers[&second].logf0(),
        ];
        Ok(SpeakerPair {
            ids: [first, second],
            codes: [Tensor::vector(vec![0.0]), Tensor::vector(vec![1.0])],
            logf0,
        })
    }

    pub fn index_of(&self, speaker_id: &str) -> Result<usize, ObjectiveError> {
        self.ids
            .iter()
            .position(|id| id == speaker_id)
            .ok_or_else(|| ObjectiveError::UnknownSpeaker(speaker_id.to_string()))
    }

    /// `(source index, target index)` for an utterance of `speaker_id`.
    pub fn direction(&self, speaker_id: &str) -> Result<(usize, usize), ObjectiveError> {
        let src = self.index_of(speaker_id)?;
        Ok((src, 1 - src))
    }

    pub fn other(&self, speaker_id: &str) -> Result<&str, ObjectiveError> {
        let (_, tgt) = self.direction(speaker_id)?;
        Ok(&self.ids[tgt])
    }
}

/// Sum of per-utterance cyclic losses over a batch containing utterances
/// of either speaker; each utterance is bound to the direction (its own
/// speaker as source, the other as target). Streams are consumed in batch
/// order, so the sum equals sequential individual evaluations exactly.
pub fn bidirectional_loss(
    tape: &mut Tape,
    bound: &BoundParams,
    pair: &SpeakerPair,
    batch: &[&UtteranceFeatures],
    n_cycles: usize,
    mut streams: Option<&mut RngStreams>,
) -> Result<(NodeId, Vec<LossBreakdown>), ObjectiveError> {
    if batch.is_empty() {
        return Err(ObjectiveError::EmptyBatch);
    }
    let mut breakdowns = Vec::with_capacity(batch.len());
    let mut root: Option<NodeId> = None;
    for utt in batch {
        let (src, tgt) = pair.direction(&utt.speaker_id)?;
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
        let (breakdown, _) = cyclevae_loss(
            tape,
            bound,
            &input,
            n_cycles,
            &mut states,
            streams.as_deref_mut(),
        )?;
        root = Some(match root {
            Some(acc) => tape.add(acc, breakdown.root)?,
            None => breakdown.root,
        });
        breakdowns.push(breakdown);
    }
    Ok((root.expect("nonempty batch"), breakdowns))
}
