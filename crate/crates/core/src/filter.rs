//! Median filtering of per-timestep label sequences, following the
//! diarization practice of smoothing single-timestep assignment noise.

use crate::cluster::LabelSequence;
use crate::error::{Error, Result};

/// How the window is padded at sequence boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryMode {
    /// Replicate the edge label (default; zero padding would bias borders
    /// toward label 0, an artifact of the integer encoding).
    EdgeReplicate,
    /// Zero padding, matching `scipy.signal.medfilt`.
    ZeroPad,
}

/// Sliding median with an odd, centered window. The output at each position
/// is an order statistic of its (padded) input window, so it is always an
/// element of that window.
pub fn median_filter_labels(
    labels: &LabelSequence,
    window: usize,
    boundary: BoundaryMode,
) -> Result<LabelSequence> {
    if window % 2 == 0 || window == 0 {
        return Err(Error::InvalidArgument(format!(
            "median filter window must be odd and >= 1, got {window}"
        )));
    }
    let seq = &labels.labels;
    let t_len = seq.len();
    if window == 1 || t_len == 0 {
        return Ok(labels.clone());
    }
    let half = window / 2;
    let mut out = Vec::with_capacity(t_len);
    let mut buf = Vec::with_capacity(window);
    for t in 0..t_len {
        buf.clear();
        for offset in -(half as isize)..=(half as isize) {
            let idx = t as isize + offset;
            let v = if idx < 0 {
                match boundary {
                    BoundaryMode::EdgeReplicate => seq[0],
                    BoundaryMode::ZeroPad => 0,
                }
            } else if idx >= t_len as isize {
                match boundary {
                    BoundaryMode::EdgeReplicate => seq[t_len - 1],
                    BoundaryMode::ZeroPad => 0,
                }
            } else {
                seq[idx as usize]
            };
            buf.push(v);
        }
        buf.sort_unstable();
        out.push(buf[half]);
    }
    Ok(LabelSequence {
        trajectory_id: labels.trajectory_id.clone(),
        labels: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(labels: Vec<i32>) -> LabelSequence {
        LabelSequence {
            trajectory_id: "t".into(),
            labels,
        }
    }

    #[test]
    fn constant_sequence_unchanged() {
        let s = seq(vec![3; 9]);
        let out = median_filter_labels(&s, 7, BoundaryMode::EdgeReplicate).unwrap();
        assert_eq!(out.labels, vec![3; 9]);
    }

    #[test]
    fn lone_spike_removed() {
        // Hand-evaluated sliding medians with edge replication: the single
        // 1 in a sea of 0s never reaches the window median.
        let s = seq(vec![0, 0, 0, 1, 0, 0, 0]);
        let out = median_filter_labels(&s, 7, BoundaryMode::EdgeReplicate).unwrap();
        assert_eq!(out.labels, vec![0; 7]);
    }

    #[test]
    fn window_one_is_identity() {
        let s = seq(vec![4, 1, 2, 2, 0]);
        let out = median_filter_labels(&s, 1, BoundaryMode::EdgeReplicate).unwrap();
        assert_eq!(out.labels, s.labels);
    }

    #[test]
    fn even_window_rejected() {
        let s = seq(vec![0, 1]);
        assert!(median_filter_labels(&s, 4, BoundaryMode::EdgeReplicate).is_err());
    }

    #[test]
    fn zero_pad_biases_edges_toward_zero() {
        // On a short run the zero padding outvotes the real labels; edge
        // replication leaves the sequence intact.
        let s = seq(vec![5, 5, 5]);
        let out = median_filter_labels(&s, 7, BoundaryMode::ZeroPad).unwrap();
        assert_eq!(out.labels, vec![0, 0, 0]);
        let edge = median_filter_labels(&s, 7, BoundaryMode::EdgeReplicate).unwrap();
        assert_eq!(edge.labels, vec![5; 3]);
    }
}
