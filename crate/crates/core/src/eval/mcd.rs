//! Mel-cepstral distortion.

use super::dtw::AlignmentPath;
use super::EvalError;

/// dB conversion constant: `10 / ln(10)`.
pub const MCD_DB_FACTOR: f64 = 10.0 / std::f64::consts::LN_10;

/// Per-frame-pair distortion in dB over mel-cepstral coefficients 1..D-1
/// (the power coefficient 0 is excluded):
/// `(10 / ln 10) * sqrt(2 * sum_d (a_d - b_d)^2)`.
pub fn mcd_frame_db(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let sq: f64 = a[1..]
        .iter()
        .zip(&b[1..])
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    MCD_DB_FACTOR * (2.0 * sq).sqrt()
}

#[derive(Clone, Debug)]
pub struct McdReport {
    pub mcd_db: f64,
    pub frames_used: usize,
    pub path: AlignmentPath,
}

/// Mean distortion over the aligned pairs of `path`.
pub fn mcd(a: &[Vec<f64>], b: &[Vec<f64>], path: AlignmentPath) -> Result<McdReport, EvalError> {
    if a.is_empty() || b.is_empty() {
        return Err(EvalError::EmptySequence);
    }
    let dim = a[0].len();
    if dim < 2 {
        return Err(EvalError::DimTooSmall { got: dim, need: 2 });
    }
    if a.iter().chain(b).any(|f| f.len() != dim) {
        return Err(EvalError::InvalidPath(format!(
            "frames must share dimension {dim}"
        )));
    }
    path.validate(a.len(), b.len())?;
    let total: f64 = path
        .pairs
        .iter()
        .map(|&(i, j)| mcd_frame_db(&a[i], &b[j]))
        .sum();
    let frames_used = path.len();
    Ok(McdReport {
        mcd_db: total / frames_used as f64,
        frames_used,
        path,
    })
}
