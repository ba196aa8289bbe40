use alloc::vec::Vec;
use core::cmp::Ordering;

use super::{PeltParams, SignalError};

/// Largest number of points used by the median heuristic.
const MEDIAN_SUBSAMPLE: usize = 256;

/// Relative tolerance under which two objective values count as tied.
const TIE_REL_TOL: f64 = 1e-9;

fn tied(a: f64, b: f64) -> bool {
    libm::fabs(a - b) <= TIE_REL_TOL * (1.0 + libm::fabs(a).max(libm::fabs(b)))
}

#[inline]
fn rbf(gamma: f64, a: f64, b: f64) -> f64 {
    let d = a - b;
    libm::exp(-gamma * d * d)
}

/// `1 / median(pairwise squared distance)` over an evenly strided subsample
/// of at most 256 points. Falls back to 1 when the median is zero.
pub fn median_heuristic_gamma(series: &[f64]) -> f64 {
    let n = series.len();
    let sample: Vec<f64> = if n <= MEDIAN_SUBSAMPLE {
        series.to_vec()
    } else {
        (0..MEDIAN_SUBSAMPLE)
            .map(|i| series[i * n / MEDIAN_SUBSAMPLE])
            .collect()
    };
    let mut dists = Vec::with_capacity(sample.len() * sample.len().saturating_sub(1) / 2);
    for (i, &a) in sample.iter().enumerate() {
        for &b in &sample[i + 1..] {
            dists.push((a - b) * (a - b));
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    dists.sort_unstable_by(f64::total_cmp);
    let m = dists.len();
    let median = if m % 2 == 1 {
        dists[m / 2]
    } else {
        0.5 * (dists[m / 2 - 1] + dists[m / 2])
    };
    if median > 0.0 && median.is_finite() {
        1.0 / median
    } else {
        1.0
    }
}

/// RBF kernel cost of one segment by direct summation:
/// `m - (1/m) * sum_ij exp(-gamma (x_i - x_j)^2)`.
pub fn rbf_segment_cost(segment: &[f64], gamma: f64) -> f64 {
    let m = segment.len();
    if m == 0 {
        return 0.0;
    }
    let mut gram = 0.0;
    for &a in segment {
        for &b in segment {
            gram += rbf(gamma, a, b);
        }
    }
    m as f64 - gram / m as f64
}

/// Exact penalized segmentation under the RBF kernel cost.
///
/// Minimizes `sum(segment cost) + penalty * changepoints` and returns the
/// segment start positions, excluding `0` and `series.len()`. Candidates are
/// pruned only when strictly dominated, so the result equals optimal
/// partitioning. Ties go to fewer changepoints, then to the lexicographically
/// earlier index list.
pub fn pelt_changepoints(series: &[f64], params: &PeltParams) -> Result<Vec<usize>, SignalError> {
    params.validate()?;
    let n = series.len();
    if n < 2 {
        return Err(SignalError::SeriesTooShort { len: n });
    }
    let gamma = params.gamma.unwrap_or_else(|| median_heuristic_gamma(series));
    let beta = params.penalty;

    // best[t]: objective of series[..t]; prev[t]: start of its last segment;
    // count[t]: changepoints on that path.
    let mut best = Vec::with_capacity(n + 1);
    let mut prev = Vec::with_capacity(n + 1);
    let mut count = Vec::with_capacity(n + 1);
    best.push(-beta);
    prev.push(0usize);
    count.push(0usize);

    // Live candidates (ascending) and their within-segment Gram sums over
    // [s, t).
    let mut cands: Vec<usize> = alloc::vec![0];
    let mut gram: Vec<f64> = alloc::vec![0.0];

    for t in 1..=n {
        let j = t - 1;
        let xj = series[j];
        let mut acc = 0.0;
        let mut i = j;
        for idx in (0..cands.len()).rev() {
            let s = cands[idx];
            while i > s {
                i -= 1;
                acc += rbf(gamma, series[i], xj);
            }
            gram[idx] += 2.0 * acc + 1.0;
        }

        let mut seg_cost = Vec::with_capacity(cands.len());
        let mut chosen: Option<(usize, f64, usize)> = None;
        for (idx, &s) in cands.iter().enumerate() {
            let m = (t - s) as f64;
            let c = m - gram[idx] / m;
            seg_cost.push(c);
            let value = best[s] + c + beta;
            let cps = count[s] + usize::from(s > 0);
            chosen = match chosen {
                None => Some((s, value, cps)),
                Some(cur) => {
                    if prefer(&prev, (s, value, cps), cur) {
                        Some((s, value, cps))
                    } else {
                        Some(cur)
                    }
                }
            };
        }
        let (s_best, f_t, cps) = chosen.expect("candidate set is never empty");
        best.push(f_t);
        prev.push(s_best);
        count.push(cps);

        let mut keep = 0;
        for idx in 0..cands.len() {
            let s = cands[idx];
            let bound = best[s] + seg_cost[idx];
            if bound <= f_t || tied(bound, f_t) {
                cands[keep] = s;
                gram[keep] = gram[idx];
                keep += 1;
            }
        }
        cands.truncate(keep);
        gram.truncate(keep);
        cands.push(t);
        gram.push(0.0);
    }

    let mut cps = Vec::new();
    let mut t = n;
    while t > 0 {
        let s = prev[t];
        if s > 0 {
            cps.push(s);
        }
        t = s;
    }
    cps.reverse();
    Ok(cps)
}

/// True when candidate `a` beats `b` under (objective, changepoint count,
/// earlier indices).
fn prefer(prev: &[usize], a: (usize, f64, usize), b: (usize, f64, usize)) -> bool {
    if !tied(a.1, b.1) {
        return a.1 < b.1;
    }
    match a.2.cmp(&b.2) {
        Ordering::Less => true,
        Ordering::Greater => false,
        Ordering::Equal => path_through(prev, a.0) < path_through(prev, b.0),
    }
}

/// Changepoints on the best path ending with a segment that starts at `s`.
fn path_through(prev: &[usize], s: usize) -> Vec<usize> {
    let mut path = Vec::new();
    let mut t = s;
    while t > 0 {
        path.push(t);
        t = prev[t];
    }
    path.reverse();
    path
}
