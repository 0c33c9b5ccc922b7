use serde::{Deserialize, Serialize};

use super::{features, qoe, BandwidthTrace, VideoSpec, DEFAULT_BUFFER_CAP_S, THROUGHPUT_HISTORY};
use crate::env::{Action, ActionSpace, Environment, State, Transition};
use crate::error::{domain, Error, Result};

/// Full dynamic state of a streaming session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbrState {
    pub last_bitrate_kbps: f64,
    /// Most recent first.
    pub throughput_kbps: [f64; THROUGHPUT_HISTORY],
    pub buffer_s: f64,
    pub last_download_s: f64,
    pub chunk_index: usize,
    /// Trace clock in seconds.
    pub clock_s: f64,
    /// Seconds of content played so far.
    pub play_head_s: f64,
    pub last_rung: Option<usize>,
}

impl AbrState {
    fn initial() -> Self {
        Self {
            last_bitrate_kbps: 0.0,
            throughput_kbps: [0.0; THROUGHPUT_HISTORY],
            buffer_s: 0.0,
            last_download_s: 0.0,
            chunk_index: 0,
            clock_s: 0.0,
            play_head_s: 0.0,
            last_rung: None,
        }
    }
}

const INTERNAL_LEN: usize = 6;

/// Outcome details of the most recent chunk download.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ChunkOutcome {
    pub download_s: f64,
    pub rebuffer_s: f64,
    pub wait_s: f64,
}

#[derive(Debug, Clone)]
pub struct AbrEnv {
    video: VideoSpec,
    trace: BandwidthTrace,
    buffer_cap_s: f64,
    episode_seed: u64,
    chunk_kbits: Vec<Vec<f64>>,
    random_start: bool,
    state: AbrState,
    last_outcome: ChunkOutcome,
}

impl AbrEnv {
    pub fn new(video: VideoSpec, trace: BandwidthTrace) -> Result<Self> {
        video.validate()?;
        let chunk_kbits = video.chunk_kbits(0);
        Ok(Self {
            video,
            trace,
            buffer_cap_s: DEFAULT_BUFFER_CAP_S,
            episode_seed: 0,
            chunk_kbits,
            random_start: false,
            state: AbrState::initial(),
            last_outcome: ChunkOutcome::default(),
        })
    }

    pub fn with_buffer_cap(mut self, cap_s: f64) -> Self {
        self.buffer_cap_s = cap_s;
        self
    }

    /// Start each episode at a seed-chosen point of the trace instead of at
    /// its beginning.
    pub fn with_random_start(mut self, on: bool) -> Self {
        self.random_start = on;
        self
    }

    pub fn video(&self) -> &VideoSpec {
        &self.video
    }

    pub fn trace(&self) -> &BandwidthTrace {
        &self.trace
    }

    pub fn buffer_cap_s(&self) -> f64 {
        self.buffer_cap_s
    }

    pub fn state(&self) -> &AbrState {
        &self.state
    }

    pub fn last_outcome(&self) -> ChunkOutcome {
        self.last_outcome
    }

    /// Content time played, counting the drained buffer once the episode ends.
    pub fn play_head_s(&self) -> f64 {
        if self.is_done() {
            self.state.play_head_s + self.state.buffer_s
        } else {
            self.state.play_head_s
        }
    }

    /// Overwrite the dynamic state directly.
    pub fn set_state(&mut self, state: AbrState) -> Result<()> {
        if state.chunk_index > self.video.n_chunks {
            return domain("chunk index beyond the end of the video");
        }
        if !(state.buffer_s >= 0.0 && state.buffer_s <= self.buffer_cap_s) {
            return domain(format!("buffer {} outside [0, {}]", state.buffer_s, self.buffer_cap_s));
        }
        self.state = state;
        Ok(())
    }

    fn regenerate_sizes(&mut self, seed: u64) {
        if self.episode_seed != seed {
            self.episode_seed = seed;
            if self.video.jitter {
                self.chunk_kbits = self.video.chunk_kbits(seed);
            }
        }
    }

    fn encode(&self) -> State {
        let s = &self.state;
        let mut f = Vec::with_capacity(features::COUNT);
        f.push(s.last_bitrate_kbps);
        f.extend_from_slice(&s.throughput_kbps);
        f.push(s.buffer_s);
        f.push(s.last_download_s);
        f.push((self.video.n_chunks - s.chunk_index) as f64);
        let internal = vec![
            s.clock_s,
            s.play_head_s,
            s.last_rung.map_or(-1.0, |r| r as f64),
            s.chunk_index as f64,
            (self.episode_seed >> 32) as f64,
            (self.episode_seed & 0xffff_ffff) as f64,
        ];
        State::with_internal(f, internal)
    }

    /// Advance by one chunk at `rung`, returning the reward.
    pub fn download(&mut self, rung: usize) -> Result<f64> {
        if self.is_done() {
            return domain("episode already finished");
        }
        let ladder = &self.video.bitrates_kbps;
        if rung >= ladder.len() {
            return domain(format!("bitrate index {rung} outside ladder of {}", ladder.len()));
        }
        let d = self.video.chunk_duration_s;
        let kbits = self.chunk_kbits[self.state.chunk_index][rung];
        let s = &mut self.state;
        let download = self.trace.download_time(s.clock_s, kbits);
        let rebuffer = (download - s.buffer_s).max(0.0);
        s.play_head_s += download.min(s.buffer_s);
        s.clock_s += download;
        let mut buffer = (s.buffer_s - download).max(0.0) + d;
        let mut wait = 0.0;
        if buffer > self.buffer_cap_s {
            wait = buffer - self.buffer_cap_s;
            buffer = self.buffer_cap_s;
            s.clock_s += wait;
            s.play_head_s += wait;
        }
        let bitrate = ladder[rung];
        let reward = match s.last_rung {
            None => bitrate / 1000.0,
            Some(_) => qoe(bitrate, rebuffer, s.last_bitrate_kbps),
        };
        s.throughput_kbps.rotate_right(1);
        s.throughput_kbps[0] = kbits / download;
        s.buffer_s = buffer;
        s.last_download_s = download;
        s.last_bitrate_kbps = bitrate;
        s.last_rung = Some(rung);
        s.chunk_index += 1;
        self.last_outcome = ChunkOutcome { download_s: download, rebuffer_s: rebuffer, wait_s: wait };
        Ok(reward)
    }
}

impl Environment for AbrEnv {
    fn reset(&mut self, seed: u64) -> State {
        self.regenerate_sizes(seed);
        self.state = AbrState::initial();
        if self.random_start {
            use rand::Rng;
            let end = self.trace.samples().last().map_or(0.0, |s| s.0);
            if end > 0.0 {
                self.state.clock_s = crate::seed::rng(seed, 0x57a7).gen_range(0.0..end);
            }
        }
        self.last_outcome = ChunkOutcome::default();
        self.encode()
    }

    fn observe(&self) -> State {
        self.encode()
    }

    fn step(&mut self, action: Action) -> Result<Transition> {
        let rung = match action {
            Action::Discrete(i) => i,
            Action::Continuous(_) => return domain("streaming actions are discrete bitrate indices"),
        };
        let reward = self.download(rung)?;
        Ok(Transition { next: self.encode(), reward, done: self.is_done() })
    }

    fn is_done(&self) -> bool {
        self.state.chunk_index >= self.video.n_chunks
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Discrete(self.video.bitrates_kbps.len())
    }

    fn restore(&mut self, state: &State) -> Result<()> {
        if state.internal.len() != INTERNAL_LEN || state.features.len() != features::COUNT {
            return Err(Error::UnsupportedState("state lacks a streaming snapshot".into()));
        }
        let f = &state.features;
        let i = &state.internal;
        let seed = ((i[4] as u64) << 32) | (i[5] as u64);
        self.regenerate_sizes(seed);
        let mut throughput = [0.0; THROUGHPUT_HISTORY];
        throughput.copy_from_slice(&f[features::THROUGHPUT..features::THROUGHPUT + THROUGHPUT_HISTORY]);
        let restored = AbrState {
            last_bitrate_kbps: f[features::LAST_BITRATE],
            throughput_kbps: throughput,
            buffer_s: f[features::BUFFER],
            last_download_s: f[features::DOWNLOAD_TIME],
            chunk_index: i[3] as usize,
            clock_s: i[0],
            play_head_s: i[1],
            last_rung: if i[2] < 0.0 { None } else { Some(i[2] as usize) },
        };
        self.set_state(restored).map_err(|e| Error::UnsupportedState(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{rollout, Policy};

    fn env(kbps: f64) -> AbrEnv {
        AbrEnv::new(VideoSpec::default(), BandwidthTrace::fixed(kbps).unwrap()).unwrap()
    }

    fn warm(env: &mut AbrEnv, buffer: f64) {
        env.reset(0);
        let mut s = env.state().clone();
        s.buffer_s = buffer;
        s.chunk_index = 1;
        s.last_rung = Some(4);
        s.last_bitrate_kbps = 2850.0;
        env.set_state(s).unwrap();
    }

    #[test]
    fn closed_form_step_on_3000_link() {
        let mut e = env(3000.0);
        warm(&mut e, 10.0);
        let r = e.download(4).unwrap();
        let out = e.last_outcome();
        assert!((out.download_s - 3.8).abs() < 1e-12);
        assert_eq!(out.rebuffer_s, 0.0);
        assert!((e.state().buffer_s - 10.2).abs() < 1e-12);
        assert!((r - 2.85).abs() < 1e-12);
    }

    #[test]
    fn closed_form_rebuffer_on_300_link() {
        let mut e = env(300.0);
        warm(&mut e, 2.0);
        e.download(5).unwrap();
        let expected = 4300.0 * 4.0 / 300.0 - 2.0;
        assert!((e.last_outcome().rebuffer_s - expected).abs() < 1e-9);
        assert!((expected - 55.333333).abs() < 1e-5);
    }

    #[test]
    fn out_of_range_action() {
        let mut e = env(3000.0);
        e.reset(0);
        assert!(e.step(Action::Discrete(6)).is_err());
        assert!(e.step(Action::Continuous(1.0)).is_err());
    }

    #[test]
    fn first_chunk_rebuffer_not_penalized() {
        let mut e = env(300.0);
        e.reset(0);
        let r = e.download(0).unwrap();
        assert!(e.last_outcome().rebuffer_s > 0.0);
        assert!((r - 0.3).abs() < 1e-12);
    }

    #[test]
    fn buffer_capped_with_wait() {
        let mut e = env(100_000.0);
        e.reset(0);
        for _ in 0..20 {
            e.download(0).unwrap();
            assert!(e.state().buffer_s <= 60.0 + 1e-12);
        }
        assert!((e.state().buffer_s - 60.0).abs() < 1e-9);
        assert!(e.last_outcome().wait_s > 0.0);
    }

    struct Cycle;
    impl Policy for Cycle {
        fn act(&self, s: &State) -> Action {
            Action::Discrete((s.features[features::REMAINING] as usize * 7) % 6)
        }
    }

    #[test]
    fn play_head_covers_whole_video() {
        for kbps in [300.0, 2000.0, 9000.0] {
            let mut e = env(kbps);
            let t = rollout(&mut e, &Cycle, 1000, 1.0, 3).unwrap();
            assert_eq!(t.len(), 48);
            assert!((e.play_head_s() - 48.0 * 4.0).abs() < 1e-6);
        }
    }

    #[test]
    fn restore_round_trips() {
        let mut e = env(2000.0);
        e.reset(0);
        for a in [0, 3, 5, 1] {
            e.download(a).unwrap();
        }
        let snap = e.observe();
        let mut other = env(2000.0);
        other.restore(&snap).unwrap();
        assert_eq!(other.state(), e.state());
        assert!(other.restore(&State::new(snap.features.clone())).is_err());
    }
}
