use serde::Serialize;

use crate::corpus::AudioFeatures;
use crate::error::{Error, Result};

/// Monotone alignment between two sequences together with its total cost.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignmentPath {
    pub pairs: Vec<(usize, usize)>,
    /// Sum of local distances along `pairs`, accumulated in path order.
    pub cost: f64,
}

impl AlignmentPath {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Dynamic time warping over `ta × tb` local distances given by `dist`.
///
/// Steps are (1,1), (1,0) and (0,1). Among equal-cost predecessors the
/// backtrack prefers the diagonal, then (1,0), then (0,1).
pub fn dtw_by<F>(ta: usize, tb: usize, mut dist: F) -> Result<AlignmentPath>
where
    F: FnMut(usize, usize) -> f64,
{
    if ta == 0 || tb == 0 {
        return Err(Error::Argument(format!("cannot align {ta} frames with {tb}")));
    }
    let mut acc = vec![f64::INFINITY; ta * tb];
    for i in 0..ta {
        for j in 0..tb {
            let d = dist(i, j);
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let diag = if i > 0 && j > 0 {
                    acc[(i - 1) * tb + j - 1]
                } else {
                    f64::INFINITY
                };
                let up = if i > 0 { acc[(i - 1) * tb + j] } else { f64::INFINITY };
                let left = if j > 0 { acc[i * tb + j - 1] } else { f64::INFINITY };
                diag.min(up).min(left)
            };
            acc[i * tb + j] = best + d;
        }
    }
    let cost = acc[ta * tb - 1];
    if !cost.is_finite() {
        return Err(Error::NonFinite("alignment cost".into()));
    }

    let (mut i, mut j) = (ta - 1, tb - 1);
    let mut pairs = vec![(i, j)];
    while i > 0 || j > 0 {
        let diag = if i > 0 && j > 0 {
            acc[(i - 1) * tb + j - 1]
        } else {
            f64::INFINITY
        };
        let up = if i > 0 { acc[(i - 1) * tb + j] } else { f64::INFINITY };
        let left = if j > 0 { acc[i * tb + j - 1] } else { f64::INFINITY };
        if diag <= up && diag <= left {
            i -= 1;
            j -= 1;
        } else if up <= left {
            i -= 1;
        } else {
            j -= 1;
        }
        pairs.push((i, j));
    }
    pairs.reverse();
    Ok(AlignmentPath { pairs, cost })
}

fn euclidean(a: impl Iterator<Item = f64>, b: impl Iterator<Item = f64>) -> f64 {
    a.zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Aligns two feature matrices using the Euclidean distance between the
/// given channels of each frame.
pub fn dtw_channels(a: &AudioFeatures, b: &AudioFeatures, channels: std::ops::Range<usize>) -> Result<AlignmentPath> {
    if a.channels() != b.channels() {
        return Err(Error::Shape(format!("{} vs {} channels", a.channels(), b.channels())));
    }
    if channels.is_empty() || channels.end > a.channels() {
        return Err(Error::Argument(format!(
            "channel range {channels:?} for {} channels",
            a.channels()
        )));
    }
    dtw_by(a.frames(), b.frames(), |i, j| {
        euclidean(
            a.frame(i)[channels.clone()].iter().copied(),
            b.frame(j)[channels.clone()].iter().copied(),
        )
    })
}

/// Alignment over full feature rows.
pub fn dtw_align(a: &AudioFeatures, b: &AudioFeatures) -> Result<AlignmentPath> {
    dtw_channels(a, b, 0..a.channels())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(values: &[f64]) -> AudioFeatures {
        // Channel 1 is energy and must be non-negative; keep it constant.
        let data = values.iter().flat_map(|&v| [v, 0.0]).collect();
        AudioFeatures::new(values.len(), 2, data).unwrap()
    }

    #[test]
    fn identical_sequences_align_diagonally() {
        let a = seq(&[1.0, 4.0, 2.0, 7.0]);
        let p = dtw_align(&a, &a).unwrap();
        assert_eq!(p.cost, 0.0);
        assert_eq!(p.pairs, vec![(0, 0), (1, 1), (2, 2), (3, 3)]);
    }

    #[test]
    fn small_hand_case() {
        // a = [1,2,3], b = [1,3]: the best path pays |2-1| or |2-3| once.
        let p = dtw_align(&seq(&[1.0, 2.0, 3.0]), &seq(&[1.0, 3.0])).unwrap();
        assert_eq!(p.cost, 1.0);
        // Both (1,0) and (1,1) reach (2,1) at cost 1; the diagonal step wins.
        assert_eq!(p.pairs, vec![(0, 0), (1, 0), (2, 1)]);
    }

    #[test]
    fn single_frame_visits_every_column() {
        let p = dtw_align(&seq(&[0.5]), &seq(&[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(p.pairs, (0..4).map(|j| (0, j)).collect::<Vec<_>>());
    }

    #[test]
    fn empty_input_is_an_argument_error() {
        assert!(matches!(dtw_by(0, 3, |_, _| 0.0), Err(Error::Argument(_))));
    }
}
