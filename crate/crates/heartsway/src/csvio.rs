//! CSV formats for offline analysis and export.

use std::fmt::Write as _;
use std::io::{Read, Write};

use heartsway_core::replay::{EventKind, ReplaySchedule};
use heartsway_core::signal::{self, FilterParams, PeltParams, SignalError, StretchSample};
use heartsway_core::{EpochMs, SessionRecord};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("line {line}: {reason}")]
    Parse { line: u64, reason: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

/// Reads `t_ms,value` rows. A header row is allowed; blank lines are not
/// data. Timestamps must strictly increase.
pub fn read_series<R: Read>(input: R) -> Result<Vec<StretchSample>, CsvError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut out: Vec<StretchSample> = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| CsvError::Parse {
            line: e.position().map_or(i as u64 + 1, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = row.position().map_or(i as u64 + 1, |p| p.line());
        let bad = |reason: String| CsvError::Parse { line, reason };
        if i == 0 && row.get(0).is_some_and(|f| f.parse::<u64>().is_err() && f.starts_with(|c: char| c.is_alphabetic())) {
            continue;
        }
        if row.len() != 2 {
            return Err(bad(format!("expected 2 fields (t_ms,value), found {}", row.len())));
        }
        let t: EpochMs = row[0].parse().map_err(|_| bad(format!("bad timestamp {:?}", &row[0])))?;
        let value: f64 = row[1].parse().map_err(|_| bad(format!("bad value {:?}", &row[1])))?;
        if !value.is_finite() {
            return Err(bad(format!("value {value} is not finite")));
        }
        if out.last().is_some_and(|p| t <= p.t) {
            return Err(bad(format!("timestamp {t} does not increase")));
        }
        out.push(StretchSample::new(t, value));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Analysis {
    pub changepoints: Vec<EpochMs>,
    pub kept: Vec<StretchSample>,
    pub removed: Vec<EpochMs>,
}

/// Filter then changepoint detection, the same pipeline used to prepare
/// swing schedules.
pub fn analyze(series: &[StretchSample], filter: &FilterParams, pelt: &PeltParams) -> Result<Analysis, CsvError> {
    let values: Vec<f64> = series.iter().map(|s| s.value).collect();
    let outcome = signal::rolling_outlier_filter(&values, filter);
    let kept_idx = outcome.kept_indices(values.len());
    let kept = kept_idx.iter().map(|&i| series[i]).collect();
    let removed = outcome.removed.iter().map(|&i| series[i].t).collect();
    let changepoints = signal::movement_moments(series, filter, pelt)?
        .into_iter()
        .map(|m| m.t)
        .collect();
    Ok(Analysis {
        changepoints,
        kept,
        removed,
    })
}

pub fn write_changepoints<W: Write>(out: W, changepoints: &[EpochMs]) -> Result<(), CsvError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t_ms"])?;
    for t in changepoints {
        w.write_record([t.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Two-column CSV with the given value header.
pub fn write_pairs<W: Write>(out: W, value_header: &str, rows: impl IntoIterator<Item = (EpochMs, f64)>) -> Result<(), CsvError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t_ms", value_header])?;
    for (t, v) in rows {
        w.write_record([t.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_session<W1: Write, W2: Write>(record: &SessionRecord, bpm: W1, stretch: W2) -> Result<(), CsvError> {
    write_pairs(bpm, "bpm", record.bpm.iter().map(|s| (s.t, s.bpm)))?;
    write_pairs(stretch, "stretch", record.stretch.iter().map(|s| (s.t, s.value)))
}

/// `kind,offset_ms` rows in fire order (swing first on ties).
pub fn write_schedule<W: Write>(out: W, schedule: &ReplaySchedule) -> Result<(), CsvError> {
    let mut rows: Vec<(u64, EventKind)> = schedule
        .beat_offsets_ms
        .iter()
        .map(|&o| (o, EventKind::Beat))
        .chain(schedule.swing_offsets_ms.iter().map(|&o| (o, EventKind::Swing)))
        .collect();
    rows.sort_unstable();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["kind", "offset_ms"])?;
    for (offset, kind) in rows {
        let kind = match kind {
            EventKind::Beat => "beat",
            EventKind::Swing => "swing",
        };
        w.write_record([kind, &offset.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn clock(ms: u64) -> String {
    format!("{:02}:{:02}.{:03}", ms / 60_000, ms / 1000 % 60, ms % 1000)
}

/// Plain-text sheet for rehearsing string pulls: one line per swing with
/// its time into the loop and when the cue would appear.
pub fn cue_sheet(swing_offsets_ms: &[u64], loop_period_ms: u64, lead_ms: u64) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# swing cues, loop {} ({} ms), lead {} ms", clock(loop_period_ms), loop_period_ms, lead_ms);
    let _ = writeln!(s, "# n  pull_at    cue_at     offset_ms");
    for (n, &o) in swing_offsets_ms.iter().enumerate() {
        let _ = writeln!(s, "{:>3}  {}  {}  {}", n + 1, clock(o), clock(o.saturating_sub(lead_ms)), o);
    }
    if swing_offsets_ms.is_empty() {
        let _ = writeln!(s, "# no swings");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_level_csv() -> String {
        let mut s = String::from("t_ms,value\n");
        for k in 0..120u64 {
            let v = if k < 60 { 100 } else { 400 };
            let _ = writeln!(s, "{},{}", k * 1000, v);
        }
        s
    }

    #[test]
    fn two_level_series_has_one_changepoint() {
        let series = read_series(two_level_csv().as_bytes()).unwrap();
        assert_eq!(series.len(), 120);
        let a = analyze(&series, &FilterParams::default(), &PeltParams::default()).unwrap();
        assert_eq!(a.changepoints, vec![60_000]);
    }

    #[test]
    fn constant_series_has_none() {
        let text: String = (0..50).map(|k| format!("{},7\n", k * 1000)).collect();
        let series = read_series(text.as_bytes()).unwrap();
        let a = analyze(&series, &FilterParams::default(), &PeltParams::default()).unwrap();
        assert!(a.changepoints.is_empty());
        assert!(a.removed.is_empty());
    }

    #[test]
    fn parse_errors_carry_the_line() {
        let mut text = String::from("t_ms,value\n");
        for k in 0..5 {
            let _ = writeln!(text, "{},1", k * 1000);
        }
        text.push_str("6000,abc\n");
        match read_series(text.as_bytes()) {
            Err(CsvError::Parse { line, .. }) => assert_eq!(line, 7),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            read_series("0,1\n0,2\n".as_bytes()),
            Err(CsvError::Parse { line: 2, .. })
        ));
        assert!(matches!(read_series("0,1,2\n".as_bytes()), Err(CsvError::Parse { line: 1, .. })));
    }

    #[test]
    fn schedule_rows_put_swings_first() {
        let s = ReplaySchedule {
            source_session: "x".into(),
            beat_offsets_ms: vec![1000, 2000],
            swing_offsets_ms: vec![1000],
            loop_period_ms: 3000,
        };
        let mut out = Vec::new();
        write_schedule(&mut out, &s).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "kind,offset_ms\nswing,1000\nbeat,1000\nbeat,2000\n");
    }

    #[test]
    fn cue_sheet_lines() {
        let sheet = cue_sheet(&[60_000, 200_500], 600_000, 3000);
        assert!(sheet.contains("  1  01:00.000  00:57.000  60000\n"), "{sheet}");
        assert!(sheet.contains("  2  03:20.500  03:17.500  200500\n"), "{sheet}");
    }
}
