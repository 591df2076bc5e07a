//! Global-variance postfilter for converted mel-cepstra.

use super::EvalError;

/// Rescale each mel-cepstral trajectory (coefficients 1..D-1) around its
/// own utterance mean so its variance matches the target speaker's global
/// variance; coefficient 0 passes through. Dimensions whose utterance
/// variance is zero are left unchanged (with a warning) and reported.
pub fn gv_postfilter(
    spectra: &[Vec<f64>],
    target_gv: &[f64],
) -> Result<(Vec<Vec<f64>>, Vec<usize>), EvalError> {
    if spectra.is_empty() {
        return Err(EvalError::EmptySequence);
    }
    let dim = spectra[0].len();
    if target_gv.len() != dim {
        return Err(EvalError::Degenerate(format!(
            "global variance has {} dims, spectra {}",
            target_gv.len(),
            dim
        )));
    }
    let frames = spectra.len() as f64;
    let mut out = spectra.to_vec();
    let mut skipped = Vec::new();
    for d in 1..dim {
        let mean = spectra.iter().map(|f| f[d]).sum::<f64>() / frames;
        let var = spectra
            .iter()
            .map(|f| (f[d] - mean) * (f[d] - mean))
            .sum::<f64>()
            / frames;
        if var == 0.0 {
            log::warn!("gv postfilter: dimension {d} has zero variance, left unchanged");
            skipped.push(d);
            continue;
        }
        let ratio = (target_gv[d] / var).sqrt();
        for frame in &mut out {
            frame[d] = ratio * (frame[d] - mean) + mean;
        }
    }
    Ok((out, skipped))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn track_stats(spectra: &[Vec<f64>], d: usize) -> (f64, f64) {
        let n = spectra.len() as f64;
        let mean = spectra.iter().map(|f| f[d]).sum::<f64>() / n;
        let var = spectra.iter().map(|f| (f[d] - mean) * (f[d] - mean)).sum::<f64>() / n;
        (mean, var)
    }

    fn sample() -> Vec<Vec<f64>> {
        vec![
            vec![2.0, 0.4, -0.3],
            vec![1.5, -0.2, 0.6],
            vec![2.5, 0.9, 0.1],
            vec![1.0, 0.1, -0.8],
        ]
    }

    #[test]
    fn output_variance_matches_target() {
        let spectra = sample();
        let gv = vec![0.0, 0.5, 0.25];
        let (out, skipped) = gv_postfilter(&spectra, &gv).unwrap();
        assert!(skipped.is_empty());
        for d in 1..3 {
            let (mean_in, _) = track_stats(&spectra, d);
            let (mean_out, var_out) = track_stats(&out, d);
            assert!((var_out - gv[d]).abs() < 1e-9, "dim {d}");
            assert!((mean_out - mean_in).abs() < 1e-9, "dim {d}");
        }
        // coefficient 0 untouched
        for (i, frame) in out.iter().enumerate() {
            assert_eq!(frame[0], spectra[i][0]);
        }
    }

    #[test]
    fn matching_variance_is_identity() {
        let spectra = sample();
        let (_, v1) = track_stats(&spectra, 1);
        let (_, v2) = track_stats(&spectra, 2);
        let gv = vec![0.0, v1, v2];
        let (out, _) = gv_postfilter(&spectra, &gv).unwrap();
        for (a, b) in out.iter().zip(&spectra) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn idempotent_within_tolerance() {
        let spectra = sample();
        let gv = vec![0.0, 0.7, 0.1];
        let (once, _) = gv_postfilter(&spectra, &gv).unwrap();
        let (twice, _) = gv_postfilter(&once, &gv).unwrap();
        for (a, b) in once.iter().zip(&twice) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_variance_dimension_is_skipped() {
        let spectra = vec![vec![1.0, 0.5, 0.25]; 3];
        let gv = vec![0.0, 0.5, 0.5];
        let (out, skipped) = gv_postfilter(&spectra, &gv).unwrap();
        assert_eq!(skipped, vec![1, 2]);
        assert_eq!(out, spectra);
    }
}
