use serde::{Deserialize, Serialize};

use super::{EvalError, RemovalDetection};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderAccuracy {
    pub score: f64,
    /// Pairs whose ground-truth levels differ.
    pub n_prime: usize,
    pub n_inv: usize,
    pub n_eq: usize,
}

/// Pairwise ordering score over cross-level pairs. A missing `t_star`
/// sorts after every frame, so two never-removed objects tie and a
/// never-removed lower level counts as inverted.
pub fn order_accuracy(detections: &[RemovalDetection]) -> Result<OrderAccuracy, EvalError> {
    let key = |d: &RemovalDetection| d.t_star.unwrap_or(usize::MAX);
    let (mut n_prime, mut n_inv, mut n_eq) = (0, 0, 0);
    for (i, a) in detections.iter().enumerate() {
        for b in &detections[i + 1..] {
            if a.level == b.level {
                continue;
            }
            n_prime += 1;
            let (low, high) = if a.level < b.level { (a, b) } else { (b, a) };
            match key(high).cmp(&key(low)) {
                std::cmp::Ordering::Less => n_inv += 1,
                std::cmp::Ordering::Equal => n_eq += 1,
                std::cmp::Ordering::Greater => {}
            }
        }
    }
    if n_prime == 0 {
        return Err(EvalError::NoCrossLevelPairs);
    }
    Ok(OrderAccuracy { score: 1.0 - (n_inv + n_eq) as f64 / n_prime as f64, n_prime, n_inv, n_eq })
}

fn tie_pairs<T: PartialEq>(sorted: &[T]) -> u64 {
    sorted
        .chunk_by(|a, b| a == b)
        .map(|run| {
            let t = run.len() as u64;
            t * (t - 1) / 2
        })
        .sum()
}

/// Sorts `v` and returns the number of inversions (pairs out of order).
fn merge_count<T: Ord + Copy>(v: &mut [T], buf: &mut Vec<T>) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut v[..mid], buf) + merge_count(&mut v[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            swaps += (mid - i) as u64;
            buf.push(v[j]);
            j += 1;
        } else {
            buf.push(v[i]);
            i += 1;
        }
    }
    buf.extend_from_slice(&v[i..mid]);
    buf.extend_from_slice(&v[j..n]);
    v.copy_from_slice(buf);
    swaps
}

/// Tie-corrected Kendall rank correlation, computed in O(n log n).
pub fn kendall_tau_b<T: Ord + Copy>(x: &[T], y: &[T]) -> Result<f64, EvalError> {
    if x.len() != y.len() {
        return Err(EvalError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len() as u64;
    if n < 2 {
        return Err(EvalError::DegenerateRanking);
    }
    let mut pairs: Vec<(T, T)> = x.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_unstable();
    let n0 = n * (n - 1) / 2;
    let xs: Vec<T> = pairs.iter().map(|p| p.0).collect();
    let n1 = tie_pairs(&xs);
    let n3 = tie_pairs(&pairs);
    let mut ys: Vec<T> = pairs.iter().map(|p| p.1).collect();
    let mut buf = Vec::with_capacity(ys.len());
    let swaps = merge_count(&mut ys, &mut buf);
    let n2 = tie_pairs(&ys);
    let denom = ((n0 - n1) as f64) * ((n0 - n2) as f64);
    if denom == 0.0 {
        return Err(EvalError::DegenerateRanking);
    }
    let s = n0 as i64 - n1 as i64 - n2 as i64 + n3 as i64 - 2 * swaps as i64;
    Ok(s as f64 / denom.sqrt())
}
