//! Feature-file I/O, corpus statistics, excitation conversion, and a
//! synthetic two-speaker corpus generator.
//!
//! The toolkit consumes pre-extracted vocoder features: per frame, a
//! 4-dimensional excitation vector (continuous log-F0, a binary
//! unvoiced/voiced flag, two aperiodicity coding coefficients) followed by
//! 35 mel-cepstral coefficients. Aperiodicity coefficients are opaque
//! pass-through dimensions.

mod corpus;
mod format;
mod stats;
mod synth;

pub use corpus::{load_corpus, Corpus, CorpusEntry};
pub use format::{read_features, write_features, FEATURE_MAGIC, FEATURE_VERSION};
pub use stats::{
    build_converted_excitation, compute_stats, transform_logf0, CorpusStats, LogF0Stats,
    SpeakerStats,
};
pub use synth::{gen_synthetic_corpus, SynthesisSpec};

/// Index of continuous log-F0 within the excitation vector.
pub const LOG_F0: usize = 0;
/// Index of the binary unvoiced/voiced flag within the excitation vector.
pub const VOICED_FLAG: usize = 1;

/// Default excitation dimensionality.
pub const DEFAULT_EXCITATION_DIM: usize = 4;
/// Default mel-cepstrum dimensionality (coefficients 0 through 34).
pub const DEFAULT_SPECTRA_DIM: usize = 35;
/// Default frame shift (5 ms).
pub const DEFAULT_FRAME_SHIFT_US: u32 = 5_000;

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { found: [u8; 4], expected: [u8; 4] },
    #[error("unsupported feature file version {0}")]
    Version(u32),
    #[error("unknown header flags {0:#x}")]
    UnknownFlags(u32),
    #[error("truncated file: need {needed} more bytes")]
    Truncated { needed: usize },
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("{context}: value must be finite")]
    NonFinite { context: String },
    #[error("{context}: flag must be 0 or 1, got {value}")]
    NotBinary { context: String, value: f64 },
    #[error("utterance must have at least one frame")]
    Empty,
    #[error("zero variance in feature dimension {dim}")]
    ZeroVariance { dim: usize },
    #[error("speaker {speaker}: {problem}")]
    SpeakerStats { speaker: String, problem: String },
    #[error("log-F0 std must be positive, got {0}")]
    NonPositiveStd(f64),
    #[error("unknown speaker id {0}")]
    UnknownSpeaker(String),
    #[error("{0}")]
    Invalid(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("stats file: {0}")]
    StatsJson(#[from] serde_json::Error),
}

/// One utterance worth of vocoder features.
#[derive(Clone, Debug, PartialEq)]
pub struct UtteranceFeatures {
    pub speaker_id: String,
    /// `T x D_e` excitation rows: `[log_f0, voiced_flag, ap0, ap1]`.
    pub excitation: Vec<Vec<f64>>,
    /// `T x D_s` mel-cepstrum rows.
    pub spectra: Vec<Vec<f64>>,
    /// Per-frame speech/non-speech marks, if the extractor provided them.
    pub speech_flags: Option<Vec<bool>>,
    pub frame_shift_us: u32,
}

impl UtteranceFeatures {
    pub fn frames(&self) -> usize {
        self.excitation.len()
    }

    pub fn excitation_dim(&self) -> usize {
        self.excitation.first().map_or(0, |r| r.len())
    }

    pub fn spectra_dim(&self) -> usize {
        self.spectra.first().map_or(0, |r| r.len())
    }

    /// Full feature row `[excitation ; spectra]` at frame `t`.
    pub fn frame(&self, t: usize) -> Vec<f64> {
        let mut row = self.excitation[t].clone();
        row.extend_from_slice(&self.spectra[t]);
        row
    }

    pub fn is_voiced(&self, t: usize) -> bool {
        self.excitation[t][VOICED_FLAG] != 0.0
    }

    /// Speech-frame mask: explicit flags when present, otherwise frames
    /// whose zeroth mel-cepstral coefficient exceeds `c0_threshold`.
    pub fn speech_mask(&self, c0_threshold: f64) -> Vec<bool> {
        match &self.speech_flags {
            Some(flags) => flags.clone(),
            None => self.spectra.iter().map(|row| row[0] > c0_threshold).collect(),
        }
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        if self.excitation.is_empty() {
            return Err(FeatureError::Empty);
        }
        if self.excitation.len() != self.spectra.len() {
            return Err(FeatureError::DimMismatch(format!(
                "excitation has {} frames, spectra {}",
                self.excitation.len(),
                self.spectra.len()
            )));
        }
        if let Some(flags) = &self.speech_flags {
            if flags.len() != self.excitation.len() {
                return Err(FeatureError::DimMismatch(format!(
                    "speech_flags has {} entries for {} frames",
                    flags.len(),
                    self.excitation.len()
                )));
            }
        }
        let d_e = self.excitation_dim();
        let d_s = self.spectra_dim();
        for (t, (e, s)) in self.excitation.iter().zip(&self.spectra).enumerate() {
            if e.len() != d_e || s.len() != d_s {
                return Err(FeatureError::DimMismatch(format!(
                    "ragged row at frame {t}"
                )));
            }
            for (context, row) in [("excitation", e), ("spectra", s)] {
                if row.iter().any(|v| !v.is_finite()) {
                    return Err(FeatureError::NonFinite {
                        context: format!("{context} frame {t}"),
                    });
                }
            }
            let uv = e[VOICED_FLAG];
            if uv != 0.0 && uv != 1.0 {
                return Err(FeatureError::NotBinary {
                    context: format!("voiced flag at frame {t}"),
                    value: uv,
                });
            }
        }
        Ok(())
    }
}

/// Time-invariant binary speaker identity code.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpeakerCode(pub f64);

impl SpeakerCode {
    pub fn new(value: f64) -> Result<Self, FeatureError> {
        if value == 0.0 || value == 1.0 {
            Ok(SpeakerCode(value))
        } else {
            Err(FeatureError::NotBinary {
                context: "speaker code".to_string(),
                value,
            })
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn speaker_codes_are_binary() {
        assert_eq!(SpeakerCode::new(0.0).unwrap().value(), 0.0);
        assert_eq!(SpeakerCode::new(1.0).unwrap().value(), 1.0);
        assert!(SpeakerCode::new(0.5).is_err());
    }

    #[test]
    fn speech_mask_falls_back_to_c0_threshold() {
        let utt = UtteranceFeatures {
            speaker_id: "s".into(),
            excitation: vec![vec![5.0, 1.0, 0.0, 0.0]; 3],
            spectra: vec![vec![1.0], vec![-1.0], vec![0.4]],
            speech_flags: None,
            frame_shift_us: DEFAULT_FRAME_SHIFT_US,
        };
        assert_eq!(utt.speech_mask(0.0), vec![true, false, true]);
        let flagged = UtteranceFeatures {
            speech_flags: Some(vec![false, true, true]),
            ..utt
        };
        // explicit flags take precedence over the threshold
        assert_eq!(flagged.speech_mask(0.0), vec![false, true, true]);
    }
}
