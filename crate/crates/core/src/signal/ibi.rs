use alloc::vec::Vec;

use super::{BpmSample, IbiEvent, SignalError};

/// One inter-beat interval per BPM reading, `ibi_ms = 60000 / bpm`.
///
/// Each event keeps its source sample's timestamp; replay only uses the
/// cumulative intervals, so the absolute instant just orders events.
pub fn bpm_to_ibi(samples: &[BpmSample]) -> Result<Vec<IbiEvent>, SignalError> {
    if samples.is_empty() {
        return Err(SignalError::EmptySeries);
    }
    let mut out = Vec::with_capacity(samples.len());
    let mut prev_t = None;
    for (index, s) in samples.iter().enumerate() {
        if s.bpm.is_nan() || s.bpm <= 0.0 {
            return Err(SignalError::NonPositiveBpm { t: s.t, bpm: s.bpm });
        }
        if prev_t.is_some_and(|p| s.t <= p) {
            return Err(SignalError::NonMonotonicTime { index });
        }
        prev_t = Some(s.t);
        out.push(IbiEvent {
            t: s.t,
            ibi_ms: 60_000.0 / s.bpm,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn sixty_bpm_is_one_second() {
        let ibi = bpm_to_ibi(&[BpmSample::new(0, 60.0)]).unwrap();
        assert_eq!(ibi, vec![IbiEvent { t: 0, ibi_ms: 1000.0 }]);
    }

    #[test]
    fn intervals_follow_each_sample() {
        let ibi = bpm_to_ibi(&[BpmSample::new(0, 120.0), BpmSample::new(500, 75.0)]).unwrap();
        assert_eq!(
            ibi,
            vec![
                IbiEvent { t: 0, ibi_ms: 500.0 },
                IbiEvent { t: 500, ibi_ms: 800.0 }
            ]
        );
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(bpm_to_ibi(&[]), Err(SignalError::EmptySeries));
        assert_eq!(
            bpm_to_ibi(&[BpmSample::new(0, 0.0)]),
            Err(SignalError::NonPositiveBpm { t: 0, bpm: 0.0 })
        );
        assert!(matches!(
            bpm_to_ibi(&[BpmSample::new(0, f64::NAN)]),
            Err(SignalError::NonPositiveBpm { .. })
        ));
        assert_eq!(
            bpm_to_ibi(&[BpmSample::new(10, 60.0), BpmSample::new(10, 61.0)]),
            Err(SignalError::NonMonotonicTime { index: 1 })
        );
    }

    proptest! {
        #[test]
        fn bpm_recovers_from_ibi(bpms in proptest::collection::vec(20.5f64..249.5, 1..200)) {
            let samples: Vec<_> = bpms
                .iter()
                .enumerate()
                .map(|(i, &b)| BpmSample::new(i as u64 * 700, b))
                .collect();
            let ibi = bpm_to_ibi(&samples).unwrap();
            prop_assert_eq!(ibi.len(), samples.len());
            for (e, s) in ibi.iter().zip(&samples) {
                prop_assert_eq!(e.t, s.t);
                let back = 60_000.0 / e.ibi_ms;
                prop_assert!((back - s.bpm).abs() <= 1e-12 * s.bpm);
            }
        }
    }
}
