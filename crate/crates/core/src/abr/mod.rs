//! Chunked video streaming over a bandwidth trace.
//!
//! The observation layout is fixed by [`features`]: last chunk bitrate,
//! an 8-deep throughput history (most recent first), buffer level, last
//! download time and remaining chunk count.

mod env;
mod mpc;
pub mod suite;
mod trace;

pub use env::{AbrEnv, AbrState};
pub use mpc::{MpcTeacher, RungSkippingTeacher};
pub use trace::{load_trace, parse_trace, synth_trace, BandwidthTrace, TraceKind, MARKOV_LEVELS_KBPS};

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::seed;

pub const DEFAULT_LADDER_KBPS: [f64; 6] = [300.0, 750.0, 1200.0, 1850.0, 2850.0, 4300.0];
pub const REBUFFER_PENALTY: f64 = 4.3;
pub const DEFAULT_BUFFER_CAP_S: f64 = 60.0;
pub const THROUGHPUT_HISTORY: usize = 8;

/// Feature indices of the ABR observation.
pub mod features {
    pub const LAST_BITRATE: usize = 0;
    pub const THROUGHPUT: usize = 1;
    pub const BUFFER: usize = 1 + super::THROUGHPUT_HISTORY;
    pub const DOWNLOAD_TIME: usize = BUFFER + 1;
    pub const REMAINING: usize = DOWNLOAD_TIME + 1;
    pub const COUNT: usize = REMAINING + 1;
}

pub fn feature_names() -> Vec<String> {
    let mut names = vec!["last_bitrate_kbps".to_string()];
    names.extend((0..THROUGHPUT_HISTORY).map(|i| format!("throughput_kbps_{i}")));
    names.extend(["buffer_s", "last_download_s", "remaining_chunks"].map(String::from));
    names
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoSpec {
    pub chunk_duration_s: f64,
    pub bitrates_kbps: Vec<f64>,
    pub n_chunks: usize,
    #[serde(default)]
    pub jitter: bool,
}

impl Default for VideoSpec {
    fn default() -> Self {
        Self { chunk_duration_s: 4.0, bitrates_kbps: DEFAULT_LADDER_KBPS.to_vec(), n_chunks: 48, jitter: false }
    }
}

impl VideoSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_chunks == 0 {
            return domain("video needs at least one chunk");
        }
        if !(self.chunk_duration_s > 0.0) {
            return domain("chunk duration must be positive");
        }
        if self.bitrates_kbps.is_empty() || self.bitrates_kbps[0] <= 0.0 {
            return domain("bitrate ladder must be non-empty and positive");
        }
        if self.bitrates_kbps.windows(2).any(|w| w[1] <= w[0]) {
            return domain("bitrate ladder must be strictly increasing");
        }
        Ok(())
    }

    /// Chunk sizes in kbit, `[chunk][rung]`; ±10 % uniform jitter when enabled.
    pub fn chunk_kbits(&self, seed: u64) -> Vec<Vec<f64>> {
        use rand::Rng;
        let mut rng = seed::rng(seed, 0xc4a7);
        (0..self.n_chunks)
            .map(|_| {
                self.bitrates_kbps
                    .iter()
                    .map(|&r| {
                        let base = r * self.chunk_duration_s;
                        if self.jitter {
                            base * (1.0 + rng.gen_range(-0.1..0.1))
                        } else {
                            base
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

/// Linear QoE of one chunk: bitrate in Mbps minus rebuffer and smoothness
/// penalties.
pub fn qoe(bitrate_kbps: f64, rebuffer_s: f64, prev_bitrate_kbps: f64) -> f64 {
    let q = bitrate_kbps / 1000.0;
    let q_prev = prev_bitrate_kbps / 1000.0;
    q - REBUFFER_PENALTY * rebuffer_s - (q - q_prev).abs()
}

/// Harmonic mean of the most recent `window` positive throughput samples,
/// or `None` when there are none.
pub fn harmonic_mean_throughput(state_features: &[f64], window: usize) -> Option<f64> {
    let hist = &state_features[features::THROUGHPUT..features::THROUGHPUT + THROUGHPUT_HISTORY];
    let recent: Vec<f64> = hist.iter().copied().filter(|&x| x > 0.0).take(window).collect();
    if recent.is_empty() {
        None
    } else {
        Some(recent.len() as f64 / recent.iter().map(|x| 1.0 / x).sum::<f64>())
    }
}
