//! Timestamped univariate stream samples and their CSV form.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Result, TdxError};

/// One observation: a feature value at a normalized time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamSample {
    pub t: f64,
    pub x: f64,
}

/// Writes samples as CSV with header `t,x`.
///
/// Times are printed with 12 decimal digits, feature values with the
/// shortest round-trippable representation; output bytes are a pure
/// function of the samples.
pub fn write_stream_csv(path: &Path, samples: &[StreamSample]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "t,x")?;
    for s in samples {
        writeln!(out, "{:.12},{}", s.t, s.x)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a stream written by [`write_stream_csv`] (or any CSV with a
/// `t,x` header). Times may be raw timestamps; normalize before fitting.
pub fn read_stream_csv(path: &Path) -> Result<Vec<StreamSample>> {
    let mut reader = csv::Reader::from_reader(BufReader::new(File::open(path)?));
    let headers = reader.headers()?.clone();
    if headers.len() != 2 || &headers[0] != "t" || &headers[1] != "x" {
        return Err(TdxError::Schema(format!(
            "expected stream header 't,x', got '{}'",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut samples = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let t: f64 = record[0].parse().map_err(|_| {
            TdxError::Schema(format!("row {}: unparseable time '{}'", line + 2, &record[0]))
        })?;
        let x: f64 = record[1].parse().map_err(|_| {
            TdxError::Schema(format!(
                "row {}: unparseable feature '{}'",
                line + 2,
                &record[1]
            ))
        })?;
        if !t.is_finite() || !x.is_finite() {
            return Err(TdxError::Schema(format!(
                "row {}: non-finite values ({t}, {x})",
                line + 2
            )));
        }
        samples.push(StreamSample { t, x });
    }
    if samples.is_empty() {
        return Err(TdxError::InsufficientData("stream file has no rows".into()));
    }
    Ok(samples)
}

/// Rescales times so the earliest maps to 0 and the latest to 1.
pub fn normalize_time(samples: &mut [StreamSample]) -> Result<()> {
    let lo = samples.iter().map(|s| s.t).fold(f64::INFINITY, f64::min);
    let hi = samples.iter().map(|s| s.t).fold(f64::NEG_INFINITY, f64::max);
    if !(lo < hi) {
        return Err(TdxError::InvalidArgument(
            "cannot normalize a stream with a single distinct time".into(),
        ));
    }
    let span = hi - lo;
    for s in samples.iter_mut() {
        s.t = (s.t - lo) / span;
    }
    Ok(())
}

/// Sorted distinct time values of the stream.
pub fn distinct_times(samples: &[StreamSample]) -> Vec<f64> {
    let mut times: Vec<f64> = samples.iter().map(|s| s.t).collect();
    times.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
    times.dedup();
    times
}

/// Feature values and times of the samples with `lo <= t < hi`
/// (`t <= hi` when `include_hi` is set).
pub fn window(
    samples: &[StreamSample],
    lo: f64,
    hi: f64,
    include_hi: bool,
) -> (Vec<f64>, Vec<f64>) {
    let mut xs = Vec::new();
    let mut ts = Vec::new();
    for s in samples {
        let inside = s.t >= lo && (s.t < hi || (include_hi && s.t == hi));
        if inside {
            xs.push(s.x);
            ts.push(s.t);
        }
    }
    (xs, ts)
}

/// Samples grouped by distinct time value, for window operations that
/// address the stream by time index.
#[derive(Debug, Clone)]
pub struct TimeIndexedStream {
    times: Vec<f64>,
    xs_by_time: Vec<Vec<f64>>,
}

impl TimeIndexedStream {
    pub fn new(samples: &[StreamSample]) -> Result<Self> {
        if samples.is_empty() {
            return Err(TdxError::InsufficientData(
                "cannot index an empty stream".into(),
            ));
        }
        let times = distinct_times(samples);
        let mut xs_by_time = vec![Vec::new(); times.len()];
        for s in samples {
            let idx = times
                .binary_search_by(|probe| probe.partial_cmp(&s.t).expect("finite times"))
                .expect("time present by construction");
            xs_by_time[idx].push(s.x);
        }
        Ok(Self { times, xs_by_time })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values_at(&self, index: usize) -> &[f64] {
        &self.xs_by_time[index]
    }

    /// Index of the distinct time closest to `t`.
    pub fn nearest_index(&self, t: f64) -> usize {
        let mut best = 0;
        let mut best_dist = f64::INFINITY;
        for (i, &ti) in self.times.iter().enumerate() {
            let d = (ti - t).abs();
            if d < best_dist {
                best_dist = d;
                best = i;
            }
        }
        best
    }
}
