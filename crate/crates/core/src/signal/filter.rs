use alloc::vec::Vec;

use super::FilterParams;

/// Result of [`rolling_outlier_filter`]. `kept` and `removed` partition the
/// input.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FilterOutcome {
    pub kept: Vec<f64>,
    /// Input positions of removed points, ascending.
    pub removed: Vec<usize>,
}

impl FilterOutcome {
    /// Input positions of the kept points, ascending.
    pub fn kept_indices(&self, input_len: usize) -> Vec<usize> {
        let mut removed = self.removed.iter().copied().peekable();
        (0..input_len)
            .filter(|&i| {
                if removed.peek() == Some(&i) {
                    removed.next();
                    false
                } else {
                    true
                }
            })
            .collect()
    }
}

/// Removes points further than `k_sigma` population standard deviations from
/// the mean of the trailing window.
///
/// The window for point `i` is the up-to-`window` input points immediately
/// before it; `x[i]` itself is excluded so a spike cannot inflate its own
/// threshold. Points with fewer than `min_window` predecessors are kept.
pub fn rolling_outlier_filter(series: &[f64], params: &FilterParams) -> FilterOutcome {
    let mut out = FilterOutcome {
        kept: Vec::with_capacity(series.len()),
        removed: Vec::new(),
    };
    for (i, &x) in series.iter().enumerate() {
        let trailing = &series[i.saturating_sub(params.window)..i];
        if trailing.len() < params.min_window || trailing.is_empty() {
            out.kept.push(x);
            continue;
        }
        let (mean, std) = mean_std(trailing);
        if libm::fabs(x - mean) > params.k_sigma * std {
            out.removed.push(i);
        } else {
            out.kept.push(x);
        }
    }
    out
}

fn mean_std(window: &[f64]) -> (f64, f64) {
    let n = window.len() as f64;
    let mean = window.iter().sum::<f64>() / n;
    let var = window.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, libm::sqrt(var))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand::Rng;

    // Direct per-index recomputation, written independently of the
    // implementation's slicing.
    #[allow(clippy::implicit_saturating_sub)]
    fn oracle_window_stats(series: &[f64], i: usize, window: usize) -> Option<(f64, f64, usize)> {
        let start = if i > window { i - window } else { 0 };
        let mut count = 0usize;
        let mut sum = 0.0;
        let mut j = start;
        while j < i {
            sum += series[j];
            count += 1;
            j += 1;
        }
        if count == 0 {
            return None;
        }
        let mean = sum / count as f64;
        let mut ss = 0.0;
        let mut j = start;
        while j < i {
            ss += (series[j] - mean) * (series[j] - mean);
            j += 1;
        }
        Some((mean, (ss / count as f64).sqrt(), count))
    }

    fn oracle_removed(series: &[f64], p: &FilterParams) -> Vec<usize> {
        let mut removed = vec![];
        for i in 0..series.len() {
            if let Some((mean, std, count)) = oracle_window_stats(series, i, p.window)
                && count >= p.min_window
                && (series[i] - mean).abs() > p.k_sigma * std
            {
                removed.push(i);
            }
        }
        removed
    }

    fn gaussian_noise(seed: u64, n: usize) -> Vec<f64> {
        // Box-Muller on a seeded stream.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let u1: f64 = rng.random::<f64>().max(1e-12);
                let u2: f64 = rng.random();
                (-2.0 * u1.ln()).sqrt() * (2.0 * core::f64::consts::PI * u2).cos()
            })
            .collect()
    }

    #[test]
    fn constant_series_is_untouched() {
        let s = vec![5.0; 150];
        let out = rolling_outlier_filter(&s, &FilterParams::default());
        assert_eq!(out.kept, s);
        assert!(out.removed.is_empty());
    }

    #[test]
    fn short_series_is_kept() {
        let s = vec![1.0, 1000.0, -50.0];
        let out = rolling_outlier_filter(&s, &FilterParams::default());
        assert_eq!(out.kept, s);
        assert!(out.removed.is_empty());
    }

    #[test]
    fn ten_sigma_spike_is_removed() {
        let p = FilterParams::default();
        let mut s = gaussian_noise(7, 150);
        let (mean, std, _) = oracle_window_stats(&s, 120, p.window).unwrap();
        s[120] = mean + 10.0 * std;
        let expected = oracle_removed(&s, &p);
        assert!(expected.contains(&120));
        let out = rolling_outlier_filter(&s, &p);
        assert_eq!(out.removed, expected);
        assert_eq!(out.kept.len() + out.removed.len(), s.len());
    }

    #[test]
    fn warmup_points_are_never_removed() {
        let p = FilterParams::default();
        let mut s = vec![0.0; 30];
        s[3] = 1e6;
        let out = rolling_outlier_filter(&s, &p);
        assert!(!out.removed.contains(&3));
        s[5] = 1e6;
        let out = rolling_outlier_filter(&s, &p);
        // index 5 has exactly min_window predecessors (one of them the earlier spike)
        assert_eq!(out.removed, oracle_removed(&s, &p));
    }

    #[test]
    fn kept_indices_complement_removed() {
        let out = FilterOutcome {
            kept: vec![1.0, 2.0, 3.0],
            removed: vec![1, 3],
        };
        assert_eq!(out.kept_indices(5), vec![0, 2, 4]);
    }

    proptest! {
        #[test]
        fn matches_oracle_and_partitions(
            s in proptest::collection::vec(-100.0f64..100.0, 0..260),
            window in 5usize..120,
            k in 0.5f64..4.0,
        ) {
            let p = FilterParams { window, k_sigma: k, min_window: 5 };
            let out = rolling_outlier_filter(&s, &p);
            prop_assert_eq!(&out.removed, &oracle_removed(&s, &p));
            let kept_at = out.kept_indices(s.len());
            prop_assert_eq!(kept_at.len(), out.kept.len());
            for (&i, &v) in kept_at.iter().zip(&out.kept) {
                prop_assert_eq!(s[i], v);
            }
        }

        #[test]
        fn constant_output_is_a_fixed_point(v in -1e6f64..1e6, n in 0usize..300) {
            let s = vec![v; n];
            let p = FilterParams::default();
            let once = rolling_outlier_filter(&s, &p);
            let twice = rolling_outlier_filter(&once.kept, &p);
            prop_assert_eq!(&twice.kept, &once.kept);
            prop_assert!(twice.removed.is_empty());
        }
    }
}
