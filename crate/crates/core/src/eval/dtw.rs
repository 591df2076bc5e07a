//! Dynamic time warping over frame sequences.

use super::EvalError;

/// Monotonic alignment between two sequences. Pairs are 0-based indexes;
/// a valid path starts at `(0, 0)`, ends at `(|A|-1, |B|-1)`, and moves by
/// steps from `{(1,0), (0,1), (1,1)}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AlignmentPath {
    pub pairs: Vec<(usize, usize)>,
}

impl AlignmentPath {
    /// Frame-synchronous diagonal path for equal-length sequences.
    pub fn identity(len: usize) -> Self {
        AlignmentPath {
            pairs: (0..len).map(|i| (i, i)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn validate(&self, len_a: usize, len_b: usize) -> Result<(), EvalError> {
        let bad = |msg: String| Err(EvalError::InvalidPath(msg));
        match (self.pairs.first(), self.pairs.last()) {
            (Some(&(0, 0)), Some(&(i, j))) if i + 1 == len_a && j + 1 == len_b => {}
            _ => return bad(format!(
                "path must run from (0,0) to ({},{})",
                len_a.saturating_sub(1),
                len_b.saturating_sub(1)
            )),
        }
        for w in self.pairs.windows(2) {
            let (i0, j0) = w[0];
            let (i1, j1) = w[1];
            let (di, dj) = (i1 as isize - i0 as isize, j1 as isize - j0 as isize);
            if !matches!((di, dj), (1, 0) | (0, 1) | (1, 1)) {
                return bad(format!("illegal step ({di},{dj}) at ({i0},{j0})"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct DtwResult {
    pub path: AlignmentPath,
    pub cost: f64,
}

/// Minimum-cost monotonic alignment under the given per-frame distance.
/// Costs accumulate start-to-end (`prefix + d`), and ties prefer the
/// diagonal, then the vertical predecessor, so the result is fully
/// deterministic.
pub fn dtw_align(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    dist: impl Fn(&[f64], &[f64]) -> f64,
) -> Result<DtwResult, EvalError> {
    if a.is_empty() || b.is_empty() {
        return Err(EvalError::EmptySequence);
    }
    let (la, lb) = (a.len(), b.len());
    let mut cost = vec![0.0f64; la * lb];
    // 0 = diagonal, 1 = up (i-1, j), 2 = left (i, j-1)
    let mut from = vec![0u8; la * lb];
    for i in 0..la {
        for j in 0..lb {
            let d = dist(&a[i], &b[j]);
            let idx = i * lb + j;
            let prefix = match (i, j) {
                (0, 0) => 0.0,
                (0, _) => {
                    from[idx] = 2;
                    cost[idx - 1]
                }
                (_, 0) => {
                    from[idx] = 1;
                    cost[idx - lb]
                }
                _ => {
                    let diag = cost[idx - lb - 1];
                    let up = cost[idx - lb];
                    let left = cost[idx - 1];
                    let mut best = diag;
                    let mut step = 0u8;
                    if up < best {
                        best = up;
                        step = 1;
                    }
                    if left < best {
                        best = left;
                        step = 2;
                    }
                    from[idx] = step;
                    best
                }
            };
            cost[idx] = prefix + d;
        }
    }

    let mut pairs = Vec::with_capacity(la.max(lb));
    let (mut i, mut j) = (la - 1, lb - 1);
    loop {
        pairs.push((i, j));
        if i == 0 && j == 0 {
            break;
        }
        match from[i * lb + j] {
            0 => {
                i -= 1;
                j -= 1;
            }
            1 => i -= 1,
            _ => j -= 1,
        }
    }
    pairs.reverse();
    Ok(DtwResult {
        path: AlignmentPath { pairs },
        cost: cost[la * lb - 1],
    })
}

/// Euclidean distance, the alignment kernel for latent sequences.
pub fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_frames(values: &[f64]) -> Vec<Vec<f64>> {
        values.iter().map(|&v| vec![v]).collect()
    }

    #[test]
    fn identical_sequences_align_diagonally_at_zero_cost() {
        let a = scalar_frames(&[0.5, 1.0, -2.0]);
        let result = dtw_align(&a, &a, l2_distance).unwrap();
        assert_eq!(result.cost, 0.0);
        assert_eq!(result.path, AlignmentPath::identity(3));
    }

    #[test]
    fn hand_worked_alignment() {
        // A=[0,1], B=[0,1,1]: cost 0 via (0,0),(1,1),(1,2)
        let a = scalar_frames(&[0.0, 1.0]);
        let b = scalar_frames(&[0.0, 1.0, 1.0]);
        let result = dtw_align(&a, &b, l2_distance).unwrap();
        assert_eq!(result.cost, 0.0);
        assert_eq!(result.path.pairs, vec![(0, 0), (1, 1), (1, 2)]);
        result.path.validate(2, 3).unwrap();
    }

    #[test]
    fn empty_input_is_an_error() {
        let a = scalar_frames(&[1.0]);
        assert!(matches!(
            dtw_align(&a, &[], l2_distance),
            Err(EvalError::EmptySequence)
        ));
    }

    #[test]
    fn path_validation_catches_bad_paths() {
        let p = AlignmentPath {
            pairs: vec![(0, 0), (2, 1)],
        };
        assert!(p.validate(3, 2).is_err());
        let p = AlignmentPath {
            pairs: vec![(0, 0), (1, 1)],
        };
        assert!(p.validate(3, 2).is_err()); // does not reach the end
    }
}
