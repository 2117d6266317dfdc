//! Top-K masking and summation of classifier score vectors.

use crate::drosonet::{argmax, ScoreVector};
use crate::error::{Error, Result};

/// Element-wise sum of masked score vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct VoteVector(pub Vec<f64>);

impl VoteVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Retrieved place and its confidence `votes[place] / T`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Retrieval {
    pub place: usize,
    pub confidence: f64,
}

/// The K-th largest value of `s`, or `None` when `k >= s.len()`.
fn kth_largest(s: &[f64], k: usize) -> Option<f64> {
    if k >= s.len() {
        return None;
    }
    let mut buf = s.to_vec();
    let (_, kth, _) = buf.select_nth_unstable_by(k - 1, |a, b| b.total_cmp(a));
    Some(*kth)
}

/// Keeps every score at least as large as the K-th largest and zeroes the
/// rest. Scores tying the K-th value are all kept.
pub fn top_k_mask(s: &[f64], k: usize) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::invalid("K must be at least 1"));
    }
    Ok(match kth_largest(s, k) {
        None => s.to_vec(),
        Some(cut) => s.iter().map(|&v| if v >= cut { v } else { 0.0 }).collect(),
    })
}

/// Sums equal-length vectors element-wise, in list order.
pub fn aggregate<V: AsRef<[f64]>>(masked: &[V]) -> Result<VoteVector> {
    let first = masked
        .first()
        .ok_or_else(|| Error::invalid("cannot aggregate an empty list of votes"))?;
    let n = first.as_ref().len();
    let mut votes = vec![0.0; n];
    for (t, v) in masked.iter().enumerate() {
        let v = v.as_ref();
        if v.len() != n {
            return Err(Error::invalid(format!(
                "vote vector {t} has length {}, expected {n}",
                v.len()
            )));
        }
        for (acc, &x) in votes.iter_mut().zip(v) {
            *acc += x;
        }
    }
    Ok(VoteVector(votes))
}

/// Most voted place, lowest index on ties.
pub fn retrieve(v: &VoteVector, voters: usize) -> Retrieval {
    let place = argmax(&v.0);
    Retrieval {
        place,
        confidence: v.0[place] / voters as f64,
    }
}

/// Masks, sums and retrieves in one pass without materializing each masked
/// vector. Produces the same votes as `aggregate` over `top_k_mask`.
pub fn vote(scores: &[ScoreVector], k: usize) -> Result<(Retrieval, VoteVector)> {
    if k == 0 {
        return Err(Error::invalid("K must be at least 1"));
    }
    let first = scores
        .first()
        .ok_or_else(|| Error::invalid("cannot vote with no score vectors"))?;
    let n = first.len();
    let mut votes = vec![0.0; n];
    let mut scratch = Vec::with_capacity(n);
    for (t, s) in scores.iter().enumerate() {
        let s = s.as_slice();
        if s.len() != n {
            return Err(Error::invalid(format!(
                "score vector {t} has length {}, expected {n}",
                s.len()
            )));
        }
        let cut = if k >= n {
            f64::NEG_INFINITY
        } else {
            scratch.clear();
            scratch.extend_from_slice(s);
            *scratch.select_nth_unstable_by(k - 1, |a, b| b.total_cmp(a)).1
        };
        for (acc, &x) in votes.iter_mut().zip(s) {
            *acc += if x >= cut { x } else { 0.0 };
        }
    }
    let votes = VoteVector(votes);
    Ok((retrieve(&votes, scores.len()), votes))
}
