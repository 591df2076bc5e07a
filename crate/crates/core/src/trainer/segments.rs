use std::ops::Range;

use super::TrainError;

/// Split each utterance into consecutive `batch_frames`-sized segments
/// (the final short remainder is kept). Segment order within an utterance
/// is fixed — recurrent state carries forward through it — while the
/// epoch loop shuffles at utterance granularity.
pub fn make_segments(
    frame_counts: &[usize],
    batch_frames: usize,
) -> Result<Vec<Vec<Range<usize>>>, TrainError> {
    if batch_frames == 0 {
        return Err(TrainError::Config("batch_frames must be positive".into()));
    }
    if frame_counts.is_empty() {
        return Err(TrainError::Config("corpus has no utterances".into()));
    }
    Ok(frame_counts
        .iter()
        .map(|&frames| {
            let mut ranges = Vec::with_capacity(frames.div_ceil(batch_frames));
            let mut start = 0;
            while start < frames {
                let end = (start + batch_frames).min(frames);
                ranges.push(start..end);
                start = end;
            }
            ranges
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_with_short_tail() {
        let segs = make_segments(&[200], 80).unwrap();
        assert_eq!(segs[0], vec![0..80, 80..160, 160..200]);
    }

    #[test]
    fn exact_fit_is_one_segment() {
        let segs = make_segments(&[80], 80).unwrap();
        assert_eq!(segs[0], vec![0..80]);
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(make_segments(&[], 80).is_err());
    }
}
