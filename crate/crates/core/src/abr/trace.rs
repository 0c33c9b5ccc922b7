//! Bandwidth traces: CSV loading, synthetic generators and piecewise
//! integration of download times.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Piecewise-constant bandwidth: sample `i` holds from its timestamp until
/// the next one; the last sample holds forever.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthTrace {
    samples: Vec<(f64, f64)>,
}

impl BandwidthTrace {
    pub fn new(samples: Vec<(f64, f64)>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Parse { row: 0, message: "trace has no samples".into() });
        }
        for (i, &(t, bw)) in samples.iter().enumerate() {
            if !t.is_finite() || !bw.is_finite() {
                return Err(Error::Parse { row: i + 1, message: "non-finite value".into() });
            }
            if bw <= 0.0 {
                return Err(Error::Parse { row: i + 1, message: format!("bandwidth {bw} must be positive") });
            }
            if i > 0 && t <= samples[i - 1].0 {
                return Err(Error::Parse {
                    row: i + 1,
                    message: format!("timestamp {t} is not after {}", samples[i - 1].0),
                });
            }
        }
        Ok(Self { samples })
    }

    pub fn fixed(kbps: f64) -> Result<Self> {
        Self::new(vec![(0.0, kbps)])
    }

    pub fn samples(&self) -> &[(f64, f64)] {
        &self.samples
    }

    pub fn bandwidth_at(&self, t: f64) -> f64 {
        let idx = self.samples.partition_point(|&(ts, _)| ts <= t);
        self.samples[idx.saturating_sub(1)].1
    }

    /// Seconds needed to move `kbits` starting at time `start`.
    pub fn download_time(&self, start: f64, kbits: f64) -> f64 {
        if kbits <= 0.0 {
            return 0.0;
        }
        let mut idx = self.samples.partition_point(|&(ts, _)| ts <= start).saturating_sub(1);
        let mut t = start;
        let mut remaining = kbits;
        loop {
            let bw = self.samples[idx].1;
            let seg_end = self.samples.get(idx + 1).map_or(f64::INFINITY, |s| s.0);
            let capacity = bw * (seg_end - t);
            if capacity >= remaining {
                t += remaining / bw;
                return t - start;
            }
            remaining -= capacity;
            t = seg_end;
            idx += 1;
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("timestamp_s,bandwidth_kbps\n");
        for (t, bw) in &self.samples {
            out.push_str(&format!("{t},{bw}\n"));
        }
        out
    }
}

/// Parse `timestamp_s,bandwidth_kbps` rows. A non-numeric first row is
/// treated as a header. Row numbers in errors are 1-based source lines.
pub fn parse_trace(text: &str) -> Result<BandwidthTrace> {
    let mut samples = Vec::new();
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split(',').map(str::trim);
        let (a, b) = match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), None) => (a, b),
            _ => {
                return Err(Error::Parse { row: lineno + 1, message: format!("expected two columns in `{line}`") })
            }
        };
        match (a.parse::<f64>(), b.parse::<f64>()) {
            (Ok(t), Ok(bw)) => {
                samples.push((t, bw));
                rows.push(lineno + 1);
            }
            _ if samples.is_empty() && rows.is_empty() && lineno == 0 => continue,
            _ => return Err(Error::Parse { row: lineno + 1, message: format!("non-numeric row `{line}`") }),
        }
    }
    BandwidthTrace::new(samples).map_err(|e| match e {
        Error::Parse { row, message } if row > 0 => Error::Parse { row: rows[row - 1], message },
        other => other,
    })
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<BandwidthTrace> {
    parse_trace(&std::fs::read_to_string(path)?)
}

/// Synthetic trace families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceKind {
    Fixed { kbps: f64 },
    /// Square wave between two levels; the seed picks the starting phase.
    Step { low_kbps: f64, high_kbps: f64, period_s: f64 },
    /// Walk between adjacent levels of a fixed set with exponential dwell times
    /// and ±10 % per-second noise.
    Markov,
}

pub const MARKOV_LEVELS_KBPS: [f64; 8] = [1000.0, 1300.0, 1700.0, 2200.0, 2900.0, 3800.0, 5000.0, 6500.0];
const MARKOV_MEAN_DWELL_S: f64 = 20.0;
const SYNTH_DURATION_S: f64 = 900.0;

pub fn synth_trace(kind: &TraceKind, seed: u64) -> Result<BandwidthTrace> {
    match *kind {
        TraceKind::Fixed { kbps } => BandwidthTrace::fixed(kbps),
        TraceKind::Step { low_kbps, high_kbps, period_s } => {
            if period_s <= 0.0 {
                return Err(Error::Parse { row: 0, message: "step period must be positive".into() });
            }
            let mut rng = seed::rng(seed, 0x57e9);
            let mut high = rng.gen_bool(0.5);
            let mut samples = Vec::new();
            let mut t = 0.0;
            while t < SYNTH_DURATION_S {
                samples.push((t, if high { high_kbps } else { low_kbps }));
                high = !high;
                t += period_s;
            }
            BandwidthTrace::new(samples)
        }
        TraceKind::Markov => {
            let mut rng = seed::rng(seed, 0x3a7c);
            let n = MARKOV_LEVELS_KBPS.len();
            let mut level = rng.gen_range(0..n);
            let mut dwell_left = -MARKOV_MEAN_DWELL_S * (1.0 - rng.gen::<f64>()).ln();
            let mut samples = Vec::new();
            let mut t = 0.0;
            while t < SYNTH_DURATION_S {
                let noise = 1.0 + rng.gen_range(-0.1..0.1);
                samples.push((t, MARKOV_LEVELS_KBPS[level] * noise));
                t += 1.0;
                dwell_left -= 1.0;
                if dwell_left <= 0.0 {
                    let up = if level == 0 {
                        true
                    } else if level == n - 1 {
                        false
                    } else {
                        rng.gen_bool(0.5)
                    };
                    level = if up { (level + 1).min(n - 1) } else { level.saturating_sub(1) };
                    dwell_left = -MARKOV_MEAN_DWELL_S * (1.0 - rng.gen::<f64>()).ln();
                }
            }
            BandwidthTrace::new(samples)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_trace_is_constant() {
        let t = synth_trace(&TraceKind::Fixed { kbps: 3000.0 }, 9).unwrap();
        assert!(t.samples().iter().all(|&(_, bw)| bw == 3000.0));
        assert_eq!(t.bandwidth_at(1e6), 3000.0);
    }

    #[test]
    fn csv_two_rows() {
        let t = parse_trace("0,1000\n2,5000").unwrap();
        assert_eq!(t.samples(), &[(0.0, 1000.0), (2.0, 5000.0)]);
        let h = parse_trace("timestamp_s,bandwidth_kbps\n0,1000\n2,5000\n").unwrap();
        assert_eq!(h, t);
    }

    #[test]
    fn csv_errors_carry_row_numbers() {
        match parse_trace("0,1000\n2,5000\n1,300") {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 3),
            other => panic!("unexpected {other:?}"),
        }
        match parse_trace("0,1000\n1,-4") {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 2),
            other => panic!("unexpected {other:?}"),
        }
        match parse_trace("0,1000\n1,abc") {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn markov_is_deterministic_per_seed() {
        let a = synth_trace(&TraceKind::Markov, 1).unwrap();
        let b = synth_trace(&TraceKind::Markov, 1).unwrap();
        let c = synth_trace(&TraceKind::Markov, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn piecewise_download_matches_fine_step_integration() {
        let trace = parse_trace("0,1000\n2,5000").unwrap();
        let kbits = 1850.0 * 4.0;
        let analytic = trace.download_time(0.0, kbits);
        // 1 ms forward integration oracle
        let dt = 1e-3;
        let mut t = 0.0;
        let mut moved = 0.0;
        while moved < kbits {
            moved += trace.bandwidth_at(t) * dt;
            t += dt;
        }
        assert!((analytic - t).abs() < 1e-3, "{analytic} vs {t}");
        assert!((analytic - 3.08).abs() < 1e-12);
    }

    #[test]
    fn download_from_mid_segment() {
        let trace = parse_trace("0,1000\n2,5000").unwrap();
        // 1 s left at 1000 kbps gives 1000 kbit, rest at 5000
        assert!((trace.download_time(1.0, 6000.0) - 2.0).abs() < 1e-12);
    }
}
