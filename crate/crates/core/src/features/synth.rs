//! Synthetic two-speaker corpus for desk-scale experiments.
//!
//! Both speakers realize the same smooth latent trajectories through
//! distinct fixed affine maps, so utterances with the same index are
//! frame-aligned translations of each other: a pseudo parallel pair with
//! known correspondence, usable as ground truth without DTW.

use rand::Rng;

use super::{FeatureError, UtteranceFeatures, DEFAULT_FRAME_SHIFT_US};
use crate::rng::{stream, ChaCha12Rng};

/// Shape of the generated corpus. The feature layout matches the real
/// extractor: 4 excitation dims, 35 mel-cepstral coefficients, 5 ms shift.
#[derive(Clone, Debug)]
pub struct SynthesisSpec {
    pub seed: u64,
    pub utterances_per_speaker: usize,
    pub frames_per_utterance: usize,
}

pub const SPEAKER_A: &str = "A";
pub const SPEAKER_B: &str = "B";

const LATENT_DIM: usize = 6;
const SPECTRA_DIM: usize = 35;
const SINUSOIDS_PER_DIM: usize = 3;
/// Syllable-rate voicing alternation so even short utterances contain both
/// voiced and unvoiced frames.
const VOICING_HZ: f64 = 4.5;
const FRAME_SHIFT_S: f64 = 0.005;
/// Leading/trailing frames marked non-speech (and forced unvoiced).
const SILENCE_FRAMES: usize = 4;

struct SpeakerModel {
    id: &'static str,
    /// `D_s x K` mixing matrix, rows scaled like a cepstrum (low-order
    /// coefficients carry most of the energy).
    spectra_map: Vec<Vec<f64>>,
    spectra_bias: Vec<f64>,
    aperiodicity_map: [Vec<f64>; 2],
    logf0_mean: f64,
    logf0_scale: f64,
}

fn draw_speaker(rng: &mut ChaCha12Rng, id: &'static str, logf0_mean: f64, logf0_scale: f64) -> SpeakerModel {
    let mut spectra_map = Vec::with_capacity(SPECTRA_DIM);
    for d in 0..SPECTRA_DIM {
        let amplitude = 0.5 / (1.0 + d as f64 / 4.0);
        spectra_map.push(
            (0..LATENT_DIM)
                .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * amplitude)
                .collect(),
        );
    }
    let spectra_bias = (0..SPECTRA_DIM)
        .map(|d| {
            let amplitude = 0.5 / (1.0 + d as f64 / 4.0);
            (rng.random::<f64>() * 2.0 - 1.0) * amplitude
        })
        .collect();
    let aperiodicity_map = [
        (0..LATENT_DIM).map(|_| (rng.random::<f64>() * 2.0 - 1.0) * 0.1).collect(),
        (0..LATENT_DIM).map(|_| (rng.random::<f64>() * 2.0 - 1.0) * 0.1).collect(),
    ];
    SpeakerModel {
        id,
        spectra_map,
        spectra_bias,
        aperiodicity_map,
        logf0_mean,
        logf0_scale,
    }
}

struct Sinusoid {
    amplitude: f64,
    frequency_hz: f64,
    phase: f64,
}

/// One latent trajectory: per dimension, a sum of random sinusoids.
fn draw_trajectory(rng: &mut ChaCha12Rng, frames: usize) -> Vec<Vec<f64>> {
    let dims: Vec<Vec<Sinusoid>> = (0..LATENT_DIM)
        .map(|_| {
            (0..SINUSOIDS_PER_DIM)
                .map(|_| Sinusoid {
                    amplitude: (0.4 + 0.6 * rng.random::<f64>()) / SINUSOIDS_PER_DIM as f64,
                    frequency_hz: 0.4 + 3.6 * rng.random::<f64>(),
                    phase: rng.random::<f64>() * std::f64::consts::TAU,
                })
                .collect()
        })
        .collect();
    (0..frames)
        .map(|t| {
            let time = t as f64 * FRAME_SHIFT_S;
            dims.iter()
                .map(|sins| {
                    sins.iter()
                        .map(|s| s.amplitude * (std::f64::consts::TAU * s.frequency_hz * time + s.phase).sin())
                        .sum::<f64>()
                        * 2.0
                })
                .collect()
        })
        .collect()
}

/// Values are quantized to f32 precision so that in-memory corpora match
/// their on-disk form exactly.
fn q(v: f64) -> f64 {
    v as f32 as f64
}

fn realize(
    model: &SpeakerModel,
    index: usize,
    latents: &[Vec<f64>],
    voicing_phase: f64,
) -> UtteranceFeatures {
    let frames = latents.len();
    let mut excitation = Vec::with_capacity(frames);
    let mut spectra = Vec::with_capacity(frames);
    let mut speech_flags = Vec::with_capacity(frames);
    for (t, l) in latents.iter().enumerate() {
        let time = t as f64 * FRAME_SHIFT_S;
        let speech = t >= SILENCE_FRAMES && t + SILENCE_FRAMES < frames;
        let voiced = speech
            && (std::f64::consts::TAU * VOICING_HZ * time + voicing_phase).sin() > -0.3;
        // continuous log-F0: smooth curve shared through unvoiced regions
        let logf0 = model.logf0_mean + model.logf0_scale * 0.5 * l[0];
        let ap0 = model.aperiodicity_map[0].iter().zip(l).map(|(w, x)| w * x).sum::<f64>();
        let ap1 = model.aperiodicity_map[1].iter().zip(l).map(|(w, x)| w * x).sum::<f64>();
        excitation.push(vec![q(logf0), voiced as u8 as f64, q(ap0), q(ap1)]);

        let mut row = Vec::with_capacity(SPECTRA_DIM);
        for d in 0..SPECTRA_DIM {
            let mut v = model.spectra_bias[d]
                + model.spectra_map[d].iter().zip(l).map(|(w, x)| w * x).sum::<f64>();
            if d == 0 {
                // coefficient 0 tracks frame power: clearly above the
                // corpus mean during speech, well below in silence
                v += if speech { 1.0 } else { -1.0 };
            }
            row.push(q(v));
        }
        spectra.push(row);
        speech_flags.push(speech);
    }
    let _ = index;
    UtteranceFeatures {
        speaker_id: model.id.to_string(),
        excitation,
        spectra,
        speech_flags: Some(speech_flags),
        frame_shift_us: DEFAULT_FRAME_SHIFT_US,
    }
}

/// Generate the paired corpus: speakers "A" and "B", each with
/// `utterances_per_speaker` utterances of `frames_per_utterance` frames.
/// Utterance `i` of A and utterance `i` of B share latent trajectories.
/// Deterministic given the seed.
pub fn gen_synthetic_corpus(spec: &SynthesisSpec) -> Result<Vec<UtteranceFeatures>, FeatureError> {
    if spec.utterances_per_speaker < 2 {
        return Err(FeatureError::Invalid(format!(
            "need at least 2 utterances per speaker, got {}",
            spec.utterances_per_speaker
        )));
    }
    if spec.frames_per_utterance < 6 * SILENCE_FRAMES {
        return Err(FeatureError::Invalid(format!(
            "need at least {} frames per utterance, got {}",
            6 * SILENCE_FRAMES,
            spec.frames_per_utterance
        )));
    }

    let mut speaker_rng = stream(spec.seed, &[0x5eed, 0]);
    let speaker_a = draw_speaker(&mut speaker_rng, SPEAKER_A, 5.00, 0.15);
    let speaker_b = draw_speaker(&mut speaker_rng, SPEAKER_B, 5.55, 0.25);

    let mut utterances = Vec::with_capacity(2 * spec.utterances_per_speaker);
    for index in 0..spec.utterances_per_speaker {
        let mut rng = stream(spec.seed, &[0x5eed, 1, index as u64]);
        let latents = draw_trajectory(&mut rng, spec.frames_per_utterance);
        let voicing_phase = rng.random::<f64>() * std::f64::consts::TAU;
        utterances.push(realize(&speaker_a, index, &latents, voicing_phase));
        utterances.push(realize(&speaker_b, index, &latents, voicing_phase));
    }
    Ok(utterances)
}
