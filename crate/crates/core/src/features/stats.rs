//! Corpus statistics and the log-F0 mean/variance excitation transform.
//!
//! All variances use the population (divide-by-N) convention.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{FeatureError, UtteranceFeatures, LOG_F0, VOICED_FLAG};

/// Per-speaker voiced log-F0 statistics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogF0Stats {
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeakerStats {
    pub logf0_mean: f64,
    pub logf0_std: f64,
    /// Global variance of each mel-cepstral dimension: the per-utterance
    /// variance averaged over the speaker's utterances.
    pub gv: Vec<f64>,
}

impl SpeakerStats {
    pub fn logf0(&self) -> LogF0Stats {
        LogF0Stats {
            mean: self.logf0_mean,
            std: self.logf0_std,
        }
    }
}

/// Normalization and conversion statistics for a training corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    /// Mean over all training frames, both speakers pooled; `D_e + D_s` wide.
    pub feat_mean: Vec<f64>,
    pub feat_std: Vec<f64>,
    pub speakers: BTreeMap<String, SpeakerStats>,
}

impl CorpusStats {
    pub fn feature_dim(&self) -> usize {
        self.feat_mean.len()
    }

    pub fn speaker(&self, id: &str) -> Result<&SpeakerStats, FeatureError> {
        self.speakers
            .get(id)
            .ok_or_else(|| FeatureError::UnknownSpeaker(id.to_string()))
    }

    /// Mean/std restricted to the spectra block, given the excitation width.
    pub fn spectra_mean(&self, d_e: usize) -> &[f64] {
        &self.feat_mean[d_e..]
    }

    pub fn spectra_std(&self, d_e: usize) -> &[f64] {
        &self.feat_std[d_e..]
    }

    pub fn to_json(&self) -> Result<String, FeatureError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, FeatureError> {
        let stats: CorpusStats = serde_json::from_str(text)?;
        stats.validate()?;
        Ok(stats)
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        if self.feat_mean.len() != self.feat_std.len() {
            return Err(FeatureError::DimMismatch(format!(
                "feat_mean has {} dims, feat_std {}",
                self.feat_mean.len(),
                self.feat_std.len()
            )));
        }
        for (dim, &s) in self.feat_std.iter().enumerate() {
            if !(s > 0.0) {
                return Err(FeatureError::ZeroVariance { dim });
            }
        }
        for (id, spk) in &self.speakers {
            if !(spk.logf0_std > 0.0) {
                return Err(FeatureError::SpeakerStats {
                    speaker: id.clone(),
                    problem: format!("log-F0 std must be positive, got {}", spk.logf0_std),
                });
            }
            if spk.gv.iter().any(|&g| g < 0.0 || !g.is_finite()) {
                return Err(FeatureError::SpeakerStats {
                    speaker: id.clone(),
                    problem: "global variance must be finite and nonnegative".to_string(),
                });
            }
        }
        Ok(())
    }
}

fn population_moments(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Pooled mean/std plus per-speaker log-F0 and global-variance statistics.
pub fn compute_stats(utterances: &[UtteranceFeatures]) -> Result<CorpusStats, FeatureError> {
    if utterances.is_empty() {
        return Err(FeatureError::Empty);
    }
    for utt in utterances {
        utt.validate()?;
    }
    let d_e = utterances[0].excitation_dim();
    let d_s = utterances[0].spectra_dim();
    for utt in utterances {
        if utt.excitation_dim() != d_e || utt.spectra_dim() != d_s {
            return Err(FeatureError::DimMismatch(format!(
                "speaker {} has dims ({}, {}), expected ({}, {})",
                utt.speaker_id,
                utt.excitation_dim(),
                utt.spectra_dim(),
                d_e,
                d_s
            )));
        }
    }
    let dim = d_e + d_s;

    // Pooled per-dimension moments over every frame of every utterance.
    let total_frames: usize = utterances.iter().map(|u| u.frames()).sum();
    let mut mean = vec![0.0; dim];
    for utt in utterances {
        for t in 0..utt.frames() {
            for (d, v) in utt.frame(t).into_iter().enumerate() {
                mean[d] += v;
            }
        }
    }
    for m in &mut mean {
        *m /= total_frames as f64;
    }
    let mut var = vec![0.0; dim];
    for utt in utterances {
        for t in 0..utt.frames() {
            for (d, v) in utt.frame(t).into_iter().enumerate() {
                let diff = v - mean[d];
                var[d] += diff * diff;
            }
        }
    }
    let mut std = vec![0.0; dim];
    for d in 0..dim {
        var[d] /= total_frames as f64;
        if var[d] == 0.0 {
            return Err(FeatureError::ZeroVariance { dim: d });
        }
        std[d] = var[d].sqrt();
    }

    // Per-speaker statistics.
    let mut speaker_ids: Vec<String> = utterances.iter().map(|u| u.speaker_id.clone()).collect();
    speaker_ids.sort();
    speaker_ids.dedup();

    let mut speakers = BTreeMap::new();
    for id in speaker_ids {
        let utts: Vec<&UtteranceFeatures> = utterances
            .iter()
            .filter(|u| u.speaker_id == id)
            .collect();
        let frames: usize = utts.iter().map(|u| u.frames()).sum();
        if frames < 2 {
            return Err(FeatureError::SpeakerStats {
                speaker: id,
                problem: format!("needs at least 2 frames, got {frames}"),
            });
        }

        let voiced: Vec<f64> = utts
            .iter()
            .flat_map(|u| {
                u.excitation
                    .iter()
                    .filter(|e| e[VOICED_FLAG] != 0.0)
                    .map(|e| e[LOG_F0])
            })
            .collect();
        if voiced.is_empty() {
            return Err(FeatureError::SpeakerStats {
                speaker: id,
                problem: "needs at least one voiced frame".to_string(),
            });
        }
        let (logf0_mean, logf0_var) = population_moments(&voiced);
        if logf0_var == 0.0 {
            return Err(FeatureError::SpeakerStats {
                speaker: id,
                problem: "voiced log-F0 values have zero variance".to_string(),
            });
        }

        let mut gv = vec![0.0; d_s];
        for utt in &utts {
            for d in 0..d_s {
                let track: Vec<f64> = utt.spectra.iter().map(|row| row[d]).collect();
                let (_, v) = population_moments(&track);
                gv[d] += v;
            }
        }
        for g in &mut gv {
            *g /= utts.len() as f64;
        }

        speakers.insert(
            id,
            SpeakerStats {
                logf0_mean,
                logf0_std: logf0_var.sqrt(),
                gv,
            },
        );
    }

    let stats = CorpusStats {
        feat_mean: mean,
        feat_std: std,
        speakers,
    };
    stats.validate()?;
    Ok(stats)
}

/// Mean/variance transform of a voiced log-F0 value from the source to the
/// target speaker's distribution.
pub fn transform_logf0(x: f64, src: LogF0Stats, tgt: LogF0Stats) -> Result<f64, FeatureError> {
    if !(src.std > 0.0) {
        return Err(FeatureError::NonPositiveStd(src.std));
    }
    Ok(tgt.mean + (tgt.std / src.std) * (x - src.mean))
}

/// Converted excitation: voiced log-F0 transformed to the target
/// distribution, the voiced flag and aperiodicity coefficients copied
/// unchanged.
pub fn build_converted_excitation(
    excitation: &[Vec<f64>],
    src: LogF0Stats,
    tgt: LogF0Stats,
) -> Result<Vec<Vec<f64>>, FeatureError> {
    excitation
        .iter()
        .map(|row| {
            let mut out = row.clone();
            if row[VOICED_FLAG] != 0.0 {
                out[LOG_F0] = transform_logf0(row[LOG_F0], src, tgt)?;
            }
            Ok(out)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::DEFAULT_FRAME_SHIFT_US;

    fn utt(id: &str, excitation: Vec<Vec<f64>>, spectra: Vec<Vec<f64>>) -> UtteranceFeatures {
        UtteranceFeatures {
            speaker_id: id.to_string(),
            excitation,
            spectra,
            speech_flags: None,
            frame_shift_us: DEFAULT_FRAME_SHIFT_US,
        }
    }

    /// Four frames with variation in every dimension and two distinct
    /// voiced log-F0 values, the minimum well-posed single-speaker input.
    fn well_posed(id: &str) -> UtteranceFeatures {
        utt(
            id,
            vec![
                vec![5.0, 1.0, 0.10, 0.00],
                vec![5.5, 1.0, 0.00, 0.10],
                vec![5.2, 0.0, 0.20, 0.05],
                vec![5.3, 0.0, 0.30, 0.15],
            ],
            vec![
                vec![1.0, 0.5],
                vec![3.0, 0.25],
                vec![1.0, 0.75],
                vec![3.0, 0.00],
            ],
        )
    }

    #[test]
    fn population_convention() {
        // values {1, 3, 1, 3} in the first spectra dim: mean 2, std 1
        let u = well_posed("s");
        let stats = compute_stats(std::slice::from_ref(&u)).unwrap();
        let d = 4; // first spectra dim
        assert_eq!(stats.feat_mean[d], 2.0);
        assert_eq!(stats.feat_std[d], 1.0);
    }

    #[test]
    fn constant_dim_is_an_error() {
        let mut u = well_posed("s");
        for row in &mut u.excitation {
            row[2] = 0.25; // aperiodicity dim 2 held constant
        }
        match compute_stats(std::slice::from_ref(&u)) {
            Err(FeatureError::ZeroVariance { dim }) => assert_eq!(dim, 2),
            other => panic!("expected zero-variance error, got {other:?}"),
        }
    }

    #[test]
    fn gv_of_constant_track_is_zero() {
        // dim 0 is constant within each speaker but differs across them,
        // so pooled normalization stays well posed while the per-speaker
        // global variance vanishes.
        let mut a = well_posed("a");
        for row in &mut a.spectra {
            row[0] = 2.5;
        }
        let mut b = well_posed("b");
        for row in &mut b.spectra {
            row[0] = 3.5;
        }
        let stats = compute_stats(&[a, b]).unwrap();
        assert_eq!(stats.speakers["a"].gv[0], 0.0);
        assert!(stats.speakers["a"].gv[1] > 0.0);
    }

    #[test]
    fn logf0_transform_examples() {
        let src = LogF0Stats { mean: 5.0, std: 0.2 };
        let tgt = LogF0Stats { mean: 5.5, std: 0.3 };
        // centered input maps to the target mean
        assert_eq!(transform_logf0(5.0, src, tgt).unwrap(), 5.5);
        // hand-evaluated: 5.5 + (0.3/0.2)*(5.2-5.0) = 5.8
        let y = transform_logf0(5.2, src, tgt).unwrap();
        assert!((y - 5.8).abs() < 1e-12);
        // identical stats: identity
        assert_eq!(transform_logf0(4.9, src, src).unwrap(), 4.9);
        // degenerate source std
        let bad = LogF0Stats { mean: 5.0, std: 0.0 };
        assert!(transform_logf0(5.0, bad, tgt).is_err());
    }

    #[test]
    fn converted_excitation_rules() {
        let src = LogF0Stats { mean: 5.0, std: 0.2 };
        let tgt = LogF0Stats { mean: 5.5, std: 0.3 };
        let exc = vec![
            vec![5.0, 1.0, 0.25, -0.5], // voiced, at the source mean
            vec![4.8, 0.0, 0.5, 0.5],   // unvoiced
        ];
        let out = build_converted_excitation(&exc, src, tgt).unwrap();
        assert_eq!(out[0], vec![5.5, 1.0, 0.25, -0.5]);
        assert_eq!(out[1], exc[1]);

        // all-unvoiced input is unchanged
        let silent = vec![vec![4.0, 0.0, 0.0, 0.0]; 3];
        assert_eq!(
            build_converted_excitation(&silent, src, tgt).unwrap(),
            silent
        );
        // identical stats: idempotent
        assert_eq!(build_converted_excitation(&exc, src, src).unwrap(), exc);
    }

    #[test]
    fn transform_matches_target_stats_exactly_on_the_training_sample() {
        // applying the transform to the very sample that defined the
        // source statistics reproduces the target statistics
        let sample = [4.8, 5.1, 5.3, 4.9, 5.6, 5.02];
        let (mean, var) = {
            let n = sample.len() as f64;
            let m = sample.iter().sum::<f64>() / n;
            let v = sample.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
            (m, v)
        };
        let src = LogF0Stats {
            mean,
            std: var.sqrt(),
        };
        let tgt = LogF0Stats {
            mean: 5.45,
            std: 0.31,
        };
        let mapped: Vec<f64> = sample
            .iter()
            .map(|&x| transform_logf0(x, src, tgt).unwrap())
            .collect();
        let n = mapped.len() as f64;
        let m = mapped.iter().sum::<f64>() / n;
        let s = (mapped.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt();
        assert!((m - tgt.mean).abs() < 1e-9, "mean {m}");
        assert!((s - tgt.std).abs() < 1e-9, "std {s}");
    }

    #[test]
    fn json_roundtrip_and_determinism() {
        let u1 = well_posed("b");
        let u2 = well_posed("a");
        let stats = compute_stats(&[u1, u2]).unwrap();
        let json = stats.to_json().unwrap();
        assert_eq!(stats.to_json().unwrap(), json);
        let back = CorpusStats::from_json(&json).unwrap();
        assert_eq!(back, stats);
        // speakers serialize in sorted order
        assert!(json.find("\"a\"").unwrap() < json.find("\"b\"").unwrap());
    }
}
