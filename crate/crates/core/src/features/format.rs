//! Binary feature-file format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   b"VCFT"
//! version u32 = 1
//! n_frames u32
//! d_e     u32
//! d_s     u32
//! flags   u32          bit 0: speech flags present
//! frame_shift_us u32
//! spk_len u16, speaker id UTF-8 bytes
//! rows    n_frames x (d_e + d_s) f32   [excitation ; spectra]
//! flags?  n_frames bytes of 0/1        only when flags bit 0 set
//! ```

use std::fs;
use std::path::Path;

use super::{FeatureError, UtteranceFeatures};

pub const FEATURE_MAGIC: [u8; 4] = *b"VCFT";
pub const FEATURE_VERSION: u32 = 1;

const FLAG_SPEECH: u32 = 1;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FeatureError> {
        if self.pos + n > self.bytes.len() {
            return Err(FeatureError::Truncated {
                needed: self.pos + n - self.bytes.len(),
            });
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u16(&mut self) -> Result<u16, FeatureError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, FeatureError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, FeatureError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode_features(bytes: &[u8]) -> Result<UtteranceFeatures, FeatureError> {
    let mut r = Reader { bytes, pos: 0 };

    let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
    if magic != FEATURE_MAGIC {
        return Err(FeatureError::BadMagic {
            found: magic,
            expected: FEATURE_MAGIC,
        });
    }
    let version = r.u32()?;
    if version != FEATURE_VERSION {
        return Err(FeatureError::Version(version));
    }
    let n_frames = r.u32()? as usize;
    let d_e = r.u32()? as usize;
    let d_s = r.u32()? as usize;
    let flags = r.u32()?;
    if flags & !FLAG_SPEECH != 0 {
        return Err(FeatureError::UnknownFlags(flags));
    }
    let frame_shift_us = r.u32()?;
    let spk_len = r.u16()? as usize;
    let speaker_id = std::str::from_utf8(r.take(spk_len)?)
        .map_err(|e| FeatureError::Invalid(format!("speaker id is not UTF-8: {e}")))?
        .to_string();

    let mut excitation = Vec::with_capacity(n_frames);
    let mut spectra = Vec::with_capacity(n_frames);
    for _ in 0..n_frames {
        let mut e = Vec::with_capacity(d_e);
        for _ in 0..d_e {
            e.push(r.f32()? as f64);
        }
        let mut s = Vec::with_capacity(d_s);
        for _ in 0..d_s {
            s.push(r.f32()? as f64);
        }
        excitation.push(e);
        spectra.push(s);
    }

    let speech_flags = if flags & FLAG_SPEECH != 0 {
        let raw = r.take(n_frames)?;
        let mut out = Vec::with_capacity(n_frames);
        for (t, &b) in raw.iter().enumerate() {
            match b {
                0 => out.push(false),
                1 => out.push(true),
                other => {
                    return Err(FeatureError::NotBinary {
                        context: format!("speech flag at frame {t}"),
                        value: other as f64,
                    })
                }
            }
        }
        Some(out)
    } else {
        None
    };

    if r.pos != bytes.len() {
        return Err(FeatureError::Invalid(format!(
            "{} trailing bytes after payload",
            bytes.len() - r.pos
        )));
    }

    let utt = UtteranceFeatures {
        speaker_id,
        excitation,
        spectra,
        speech_flags,
        frame_shift_us,
    };
    utt.validate()?;
    Ok(utt)
}

pub fn encode_features(utt: &UtteranceFeatures) -> Result<Vec<u8>, FeatureError> {
    utt.validate()?;
    let n_frames = utt.frames();
    let d_e = utt.excitation_dim();
    let d_s = utt.spectra_dim();
    let spk = utt.speaker_id.as_bytes();
    if spk.len() > u16::MAX as usize {
        return Err(FeatureError::Invalid("speaker id longer than 65535 bytes".into()));
    }

    let mut out = Vec::with_capacity(30 + spk.len() + n_frames * (d_e + d_s) * 4 + n_frames);
    out.extend_from_slice(&FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&(n_frames as u32).to_le_bytes());
    out.extend_from_slice(&(d_e as u32).to_le_bytes());
    out.extend_from_slice(&(d_s as u32).to_le_bytes());
    let flags: u32 = if utt.speech_flags.is_some() { FLAG_SPEECH } else { 0 };
    out.extend_from_slice(&flags.to_le_bytes());
    out.extend_from_slice(&utt.frame_shift_us.to_le_bytes());
    out.extend_from_slice(&(spk.len() as u16).to_le_bytes());
    out.extend_from_slice(spk);

    for t in 0..n_frames {
        for &v in utt.excitation[t].iter().chain(&utt.spectra[t]) {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    if let Some(fl) = &utt.speech_flags {
        out.extend(fl.iter().map(|&b| b as u8));
    }
    Ok(out)
}

pub fn read_features(path: &Path) -> Result<UtteranceFeatures, FeatureError> {
    let bytes = fs::read(path).map_err(|source| FeatureError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_features(&bytes)
}

pub fn write_features(utt: &UtteranceFeatures, path: &Path) -> Result<(), FeatureError> {
    let bytes = encode_features(utt)?;
    fs::write(path, bytes).map_err(|source| FeatureError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::DEFAULT_FRAME_SHIFT_US;

    fn sample(speech: bool) -> UtteranceFeatures {
        UtteranceFeatures {
            speaker_id: "spk".to_string(),
            excitation: vec![vec![5.25, 1.0, 0.125, -0.5], vec![5.0, 0.0, 0.25, 0.75]],
            spectra: vec![vec![1.5, -0.25, 0.0625], vec![0.5, 0.125, -1.0]],
            speech_flags: speech.then(|| vec![true, false]),
            frame_shift_us: DEFAULT_FRAME_SHIFT_US,
        }
    }

    #[test]
    fn roundtrip_bit_exact() {
        for speech in [false, true] {
            let utt = sample(speech);
            let bytes = encode_features(&utt).unwrap();
            let back = decode_features(&bytes).unwrap();
            assert_eq!(back, utt);
            assert_eq!(encode_features(&back).unwrap(), bytes);
        }
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode_features(&sample(false)).unwrap();
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(
            decode_features(&bytes),
            Err(FeatureError::BadMagic { .. })
        ));
    }

    #[test]
    fn truncated_payload() {
        let bytes = encode_features(&sample(false)).unwrap();
        assert!(matches!(
            decode_features(&bytes[..bytes.len() - 3]),
            Err(FeatureError::Truncated { .. })
        ));
    }

    #[test]
    fn payload_length_matches_header_arithmetic() {
        // T=100 frames of (4 + 35) f32 values
        let utt = UtteranceFeatures {
            speaker_id: "s".to_string(),
            excitation: vec![vec![5.0, 1.0, 0.0, 0.0]; 100],
            spectra: vec![vec![0.25; 35]; 100],
            speech_flags: None,
            frame_shift_us: DEFAULT_FRAME_SHIFT_US,
        };
        let bytes = encode_features(&utt).unwrap();
        let header = 4 + 4 * 6 + 2 + 1;
        assert_eq!(bytes.len() - header, 100 * 39 * 4);
    }

    #[test]
    fn nonbinary_voiced_flag_rejected() {
        let mut utt = sample(false);
        utt.excitation[0][1] = 0.5;
        assert!(matches!(
            encode_features(&utt),
            Err(FeatureError::NotBinary { .. })
        ));
    }
}
