use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::SimError;

/// Piecewise-constant bandwidth `b(t)` in bytes per second. Each rate holds
/// from its breakpoint until the next one (the last until `duration`).
#[derive(Clone, Debug, PartialEq)]
pub struct BandwidthTrace {
    times: Vec<f64>,
    rates: Vec<f64>,
    duration: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceRow {
    t_seconds: f64,
    rate_bytes_per_second: f64,
}

impl BandwidthTrace {
    pub fn new(breakpoints: Vec<(f64, f64)>, duration: f64) -> Result<Self, SimError> {
        if breakpoints.is_empty() {
            return Err(SimError::Trace(
                "trace needs at least one breakpoint".into(),
            ));
        }
        for w in breakpoints.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(SimError::Trace(format!(
                    "breakpoints must strictly increase ({} then {})",
                    w[0].0, w[1].0
                )));
            }
        }
        if breakpoints
            .iter()
            .any(|&(t, r)| !t.is_finite() || !r.is_finite() || r < 0.0)
        {
            return Err(SimError::Trace(
                "times and rates must be finite, rates >= 0".into(),
            ));
        }
        let last = breakpoints[breakpoints.len() - 1].0;
        if !(duration > last) || !duration.is_finite() {
            return Err(SimError::Trace(format!(
                "duration {duration} must exceed the last breakpoint {last}"
            )));
        }
        let (times, rates) = breakpoints.into_iter().unzip();
        Ok(Self {
            times,
            rates,
            duration,
        })
    }

    pub fn constant(rate: f64, duration: f64) -> Result<Self, SimError> {
        Self::new(vec![(0.0, rate)], duration)
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn breakpoints(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.times.iter().copied().zip(self.rates.iter().copied())
    }

    pub fn segments(&self) -> usize {
        self.times.len()
    }

    /// Rate in force at `t`.
    pub fn rate_at(&self, t: f64) -> f64 {
        self.rates[self.segment_index(t)]
    }

    /// Mean rate over the whole trace.
    pub fn mean_rate(&self) -> f64 {
        self.integral(self.start(), self.duration) / (self.duration - self.start())
    }

    /// Every rate multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self, SimError> {
        Self::new(
            self.breakpoints().map(|(t, r)| (t, r * factor)).collect(),
            self.duration,
        )
    }

    fn segment_index(&self, t: f64) -> usize {
        self.times.partition_point(|&s| s <= t).saturating_sub(1)
    }

    fn segment_end(&self, i: usize) -> f64 {
        self.times.get(i + 1).copied().unwrap_or(self.duration)
    }

    fn integral(&self, a: f64, b: f64) -> f64 {
        let mut total = 0.0;
        let mut i = self.segment_index(a);
        let mut t = a;
        while t < b && i < self.times.len() {
            let end = self.segment_end(i).min(b);
            total += self.rates[i] * (end - t);
            t = end;
            i += 1;
        }
        total
    }

    /// `S = ∫_{t_start}^{t_end} b(t) dt`, exact for piecewise-constant traces.
    pub fn available_bytes(&self, t_start: f64, t_end: f64) -> Result<f64, SimError> {
        if !(t_start <= t_end) || t_start < self.start() || t_end > self.duration {
            return Err(SimError::Range {
                start: t_start,
                end: t_end,
                trace_start: self.start(),
                trace_end: self.duration,
            });
        }
        Ok(self.integral(t_start, t_end))
    }

    /// Earliest `t >= now` with `∫_now^t b = bytes`, or `None` if the trace
    /// ends first.
    pub fn completion_time(&self, bytes: f64, now: f64) -> Option<f64> {
        if now < self.start() || now > self.duration {
            return None;
        }
        let mut remaining = bytes;
        let mut i = self.segment_index(now);
        let mut t = now;
        if remaining <= 0.0 {
            return Some(now);
        }
        while i < self.times.len() {
            let end = self.segment_end(i);
            let rate = self.rates[i];
            let capacity = rate * (end - t);
            if rate > 0.0 && capacity >= remaining {
                return Some(t + remaining / rate);
            }
            remaining -= capacity;
            t = end;
            i += 1;
        }
        None
    }

    /// CSV with header `t_seconds,rate_bytes_per_second`. The trace ends at
    /// `duration`, which is not part of the file.
    pub fn from_csv<R: Read>(reader: R, duration: f64) -> Result<Self, SimError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let rows = rdr
            .deserialize::<TraceRow>()
            .map(|r| r.map(|row| (row.t_seconds, row.rate_bytes_per_second)))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(rows, duration)
    }

    pub fn to_csv<W: Write>(&self, writer: W) -> Result<(), SimError> {
        let mut w = csv::Writer::from_writer(writer);
        for (t, r) in self.breakpoints() {
            w.serialize(TraceRow {
                t_seconds: t,
                rate_bytes_per_second: r,
            })?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Event-granular view of a trace: grants whole blocks in order.
#[derive(Clone, Debug)]
pub struct SimChannel {
    trace: BandwidthTrace,
    cursor: f64,
}

impl SimChannel {
    pub fn new(trace: BandwidthTrace) -> Self {
        let cursor = trace.start();
        Self { trace, cursor }
    }

    pub fn trace(&self) -> &BandwidthTrace {
        &self.trace
    }

    /// Time up to which the link is busy.
    pub fn cursor(&self) -> f64 {
        self.cursor
    }

    /// Transmits `block_size` bytes starting no earlier than `now` or the
    /// end of the previous grant. Returns the completion time and advances
    /// the cursor; `None` means the trace ends before the block completes.
    pub fn grant_block(&mut self, block_size: usize, now: f64) -> Option<f64> {
        assert!(block_size > 0, "block size must be positive");
        let start = now.max(self.cursor);
        match self.trace.completion_time(block_size as f64, start) {
            Some(t) => {
                self.cursor = t;
                Some(t)
            }
            None => {
                self.cursor = self.trace.duration;
                None
            }
        }
    }
}
