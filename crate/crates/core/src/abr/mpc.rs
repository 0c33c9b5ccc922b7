use super::{features, harmonic_mean_throughput, qoe, VideoSpec, DEFAULT_BUFFER_CAP_S};
use crate::env::{Action, Policy, State};

/// Throughput samples averaged by the predictor.
pub const PREDICTION_WINDOW: usize = 5;

/// Receding-horizon controller: enumerates every bitrate sequence over the
/// lookahead, simulates the buffer under a harmonic-mean throughput forecast
/// and plays the first rung of the best sequence. Ties go to the lower rung.
#[derive(Debug, Clone)]
pub struct MpcTeacher {
    ladder_kbps: Vec<f64>,
    chunk_duration_s: f64,
    lookahead: usize,
    buffer_cap_s: f64,
}

impl MpcTeacher {
    pub fn new(video: &VideoSpec, lookahead: usize) -> Self {
        Self {
            ladder_kbps: video.bitrates_kbps.clone(),
            chunk_duration_s: video.chunk_duration_s,
            lookahead: lookahead.max(1),
            buffer_cap_s: DEFAULT_BUFFER_CAP_S,
        }
    }

    pub fn lookahead(&self) -> usize {
        self.lookahead
    }

    pub fn predicted_throughput(&self, state: &State) -> f64 {
        harmonic_mean_throughput(&state.features, PREDICTION_WINDOW).unwrap_or(self.ladder_kbps[0])
    }

    /// Best first rung among `allowed` together with its sequence score.
    pub fn plan(&self, state: &State, allowed: &[bool]) -> (usize, f64) {
        let f = &state.features;
        let remaining = f[features::REMAINING].max(0.0) as usize;
        let depth = self.lookahead.min(remaining);
        if depth == 0 {
            return (0, 0.0);
        }
        let throughput = self.predicted_throughput(state);
        let search = Search {
            ladder: &self.ladder_kbps,
            allowed,
            d: self.chunk_duration_s,
            cap: self.buffer_cap_s,
            download_s: self.ladder_kbps.iter().map(|r| r * self.chunk_duration_s / throughput).collect(),
        };
        let last = f[features::LAST_BITRATE];
        let startup = last <= 0.0;
        let mut best = (0, f64::NEG_INFINITY);
        for rung in 0..self.ladder_kbps.len() {
            if !allowed[rung] {
                continue;
            }
            let (r, b) = search.chunk(rung, f[features::BUFFER], last, startup);
            let score = r + search.best(depth - 1, b, search.ladder[rung]);
            if score > best.1 {
                best = (rung, score);
            }
        }
        best
    }
}

struct Search<'a> {
    ladder: &'a [f64],
    allowed: &'a [bool],
    d: f64,
    cap: f64,
    download_s: Vec<f64>,
}

impl Search<'_> {
    fn chunk(&self, rung: usize, buffer: f64, prev: f64, startup: bool) -> (f64, f64) {
        let bitrate = self.ladder[rung];
        let t = self.download_s[rung];
        let rebuffer = (t - buffer).max(0.0);
        let next = ((buffer - t).max(0.0) + self.d).min(self.cap);
        let r = if startup { bitrate / 1000.0 } else { qoe(bitrate, rebuffer, prev) };
        (r, next)
    }

    fn best(&self, depth: usize, buffer: f64, prev: f64) -> f64 {
        if depth == 0 {
            return 0.0;
        }
        let mut best = f64::NEG_INFINITY;
        for rung in 0..self.ladder.len() {
            if !self.allowed[rung] {
                continue;
            }
            let (r, b) = self.chunk(rung, buffer, prev, false);
            let tail = if depth == 1 { 0.0 } else { self.best(depth - 1, b, self.ladder[rung]) };
            best = best.max(r + tail);
        }
        best
    }
}

impl Policy for MpcTeacher {
    fn act(&self, state: &State) -> Action {
        let all = vec![true; self.ladder_kbps.len()];
        Action::Discrete(self.plan(state, &all).0)
    }
}

/// Controller that shuns a set of rungs except while the throughput forecast
/// sits inside `window_kbps`. Outside the window it plans over the remaining
/// rungs only, which makes the shunned rungs rare in its demonstrations.
#[derive(Debug, Clone)]
pub struct RungSkippingTeacher {
    mpc: MpcTeacher,
    allowed: Vec<bool>,
    window_kbps: (f64, f64),
}

impl RungSkippingTeacher {
    pub fn new(mpc: MpcTeacher, skipped: &[usize], window_kbps: (f64, f64)) -> Self {
        let mut allowed = vec![true; mpc.ladder_kbps.len()];
        for &s in skipped {
            if s < allowed.len() {
                allowed[s] = false;
            }
        }
        Self { mpc, allowed, window_kbps }
    }
}

impl Policy for RungSkippingTeacher {
    fn act(&self, state: &State) -> Action {
        let t = self.mpc.predicted_throughput(state);
        if t >= self.window_kbps.0 && t < self.window_kbps.1 {
            return self.mpc.act(state);
        }
        Action::Discrete(self.mpc.plan(state, &self.allowed).0)
    }
}
