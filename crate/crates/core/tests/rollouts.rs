use metis_kit::abr::{features, AbrEnv, AbrState, BandwidthTrace, MpcTeacher, TraceKind, VideoSpec, THROUGHPUT_HISTORY};
use metis_kit::env::{self, Action, Environment, McConfig, Policy, State};
use proptest::prelude::*;

/// Independent fixed-link session: chunk size is bitrate × duration and a
/// download takes size / rate, so every quantity has a closed form.
#[derive(Clone)]
struct Oracle {
    rate: f64,
    ladder: Vec<f64>,
    d: f64,
    cap: f64,
    n_chunks: usize,
    chunk: usize,
    buffer: f64,
    last: Option<f64>,
    history: Vec<f64>,
    last_download: f64,
}

impl Oracle {
    fn new(rate: f64, chunk: usize, buffer: f64, last: Option<f64>) -> Self {
        let v = VideoSpec::default();
        let history = if last.is_some() { vec![rate; THROUGHPUT_HISTORY] } else { vec![0.0; THROUGHPUT_HISTORY] };
        let last_download = last.map_or(0.0, |b| b * v.chunk_duration_s / rate);
        Self { rate, ladder: v.bitrates_kbps, d: v.chunk_duration_s, cap: 60.0, n_chunks: v.n_chunks, chunk, buffer, last, history, last_download }
    }

    fn observation(&self) -> State {
        let mut f = vec![self.last.unwrap_or(0.0)];
        f.extend(&self.history);
        f.extend([self.buffer, self.last_download, (self.n_chunks - self.chunk) as f64]);
        State::new(f)
    }

    fn done(&self) -> bool {
        self.chunk == self.n_chunks
    }

    fn step(&mut self, rung: usize) -> f64 {
        let b = self.ladder[rung];
        let dl = b * self.d / self.rate;
        let stall = (dl - self.buffer).max(0.0);
        let reward = match self.last {
            None => b / 1000.0,
            Some(p) => b / 1000.0 - 4.3 * stall - (b - p).abs() / 1000.0,
        };
        self.buffer = ((self.buffer - dl).max(0.0) + self.d).min(self.cap);
        self.history.rotate_right(1);
        self.history[0] = self.rate;
        self.last = Some(b);
        self.last_download = dl;
        self.chunk += 1;
        reward
    }

    /// Discounted return of `first` then `teacher` for `horizon` chunks.
    fn q(&self, teacher: &dyn Policy, first: Option<usize>, horizon: usize, gamma: f64) -> f64 {
        let mut sim = self.clone();
        let (mut total, mut disc) = (0.0, 1.0);
        for k in 0..horizon {
            if sim.done() {
                break;
            }
            let rung = match (k, first) {
                (0, Some(a)) => a,
                _ => teacher.act(&sim.observation()).index().unwrap(),
            };
            total += disc * sim.step(rung);
            disc *= gamma;
        }
        total
    }

    /// The library environment positioned at the same session state.
    fn env(&self) -> (AbrEnv, State) {
        let mut env = AbrEnv::new(VideoSpec::default(), BandwidthTrace::fixed(self.rate).unwrap()).unwrap();
        env.reset(0);
        let mut throughput = [0.0; THROUGHPUT_HISTORY];
        throughput.copy_from_slice(&self.history);
        env.set_state(AbrState {
            last_bitrate_kbps: self.last.unwrap_or(0.0),
            throughput_kbps: throughput,
            buffer_s: self.buffer,
            last_download_s: self.last_download,
            chunk_index: self.chunk,
            clock_s: 0.0,
            play_head_s: 0.0,
            last_rung: self.last.map(|b| self.ladder.iter().position(|&r| r == b).unwrap()),
        })
        .unwrap();
        let s = env.observe();
        (env, s)
    }
}

fn mpc() -> MpcTeacher {
    MpcTeacher::new(&VideoSpec::default(), 5)
}

fn mc(horizon: usize) -> McConfig {
    McConfig { horizon, ..McConfig::default() }
}

#[test]
fn teacher_value_matches_independent_simulation() {
    let o = Oracle::new(3000.0, 10, 20.0, Some(2850.0));
    let (env, s) = o.env();
    assert_eq!(s.features, o.observation().features);
    let got = env::estimate_value(&env, &mpc(), &s, &mc(10)).unwrap();
    let want = o.q(&mpc(), None, 10, 0.99);
    assert!((got - want).abs() < 1e-9, "{got} vs {want}");
}

#[test]
fn q_vector_matches_enumerated_action_prefixes() {
    let o = Oracle::new(3000.0, 10, 20.0, Some(2850.0));
    let (env, s) = o.env();
    let got = env::q_vector(&env, &mpc(), &s, &mc(20)).unwrap();
    assert_eq!(got.len(), 6);
    for (a, q) in got.iter().enumerate() {
        let want = o.q(&mpc(), Some(a), 20, 0.99);
        assert!((q - want).abs() < 1e-9, "action {a}: {q} vs {want}");
    }
}

#[test]
fn near_stall_state_weighs_more_than_a_full_buffer() {
    let weight = |buffer: f64| {
        let o = Oracle::new(3000.0, 10, buffer, Some(2850.0));
        let (env, s) = o.env();
        let got = env::advantage_weight(&env, &mpc(), &s, &mc(20)).unwrap();
        let q: Vec<f64> = (0..6).map(|a| o.q(&mpc(), Some(a), 20, 0.99)).collect();
        let teacher = mpc().act(&o.observation()).index().unwrap();
        let want = q[teacher] - q.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!((got - want).abs() < 1e-9, "buffer {buffer}: {got} vs {want}");
        got
    };
    let (stall, full) = (weight(0.5), weight(20.0));
    assert!(stall > full, "near-stall {stall} vs full buffer {full}");
}

#[test]
fn rollout_on_fixed_link_is_repeatable() {
    let mut env = AbrEnv::new(VideoSpec::default(), BandwidthTrace::fixed(3000.0).unwrap()).unwrap();
    let a = env::rollout(&mut env, &mpc(), usize::MAX, 0.99, 7).unwrap();
    let b = env::rollout(&mut env, &mpc(), usize::MAX, 0.99, 7).unwrap();
    assert_eq!(a.steps, b.steps);
    assert_eq!(a.total_return.to_bits(), b.total_return.to_bits());
}

/// Picks a rung by hashing the observation, so it is arbitrary but repeatable.
struct Scrambled(u64);

impl Policy for Scrambled {
    fn act(&self, s: &State) -> Action {
        let mut h = self.0;
        for x in &s.features {
            h = (h ^ x.to_bits()).wrapping_mul(0x100_0000_01b3);
        }
        Action::Discrete((h >> 33) as usize % 6)
    }
}

#[test]
fn total_return_is_the_discounted_step_sum() {
    let trace = metis_kit::abr::synth_trace(&TraceKind::Markov, 4).unwrap();
    let mut env = AbrEnv::new(VideoSpec::default(), trace).unwrap();
    let t = env::rollout(&mut env, &Scrambled(9), usize::MAX, 0.95, 2).unwrap();
    assert_eq!(t.len(), 48);
    let mut want = 0.0;
    for (k, s) in t.steps.iter().enumerate() {
        want += 0.95f64.powi(k as i32) * s.reward;
    }
    assert!((t.total_return - want).abs() < 1e-9 * want.abs().max(1.0));
}

fn run_rungs(env: &mut AbrEnv, rungs: impl Fn(usize) -> usize) -> (f64, Vec<f64>) {
    env.reset(0);
    let (mut qoe, mut buffers) = (0.0, Vec::new());
    let mut k = 0;
    while !env.is_done() {
        qoe += env.step(Action::Discrete(rungs(k))).unwrap().reward;
        buffers.push(env.state().buffer_s);
        k += 1;
    }
    (qoe, buffers)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn buffer_stays_within_cap_and_play_head_covers_video(
        seed in any::<u64>(),
        cap in 5.0f64..60.0,
        rungs in proptest::collection::vec(0usize..6, 48),
    ) {
        let trace = metis_kit::abr::synth_trace(&TraceKind::Markov, seed).unwrap();
        let mut env = AbrEnv::new(VideoSpec::default(), trace).unwrap().with_buffer_cap(cap);
        let (_, buffers) = run_rungs(&mut env, |k| rungs[k]);
        for b in buffers {
            prop_assert!((0.0..=cap).contains(&b), "buffer {b} outside [0, {cap}]");
        }
        prop_assert!((env.play_head_s() - 48.0 * 4.0).abs() < 1e-6);
    }

    #[test]
    fn constant_rung_beats_oscillation_between_neighbours(
        low in 0usize..5,
        high_first in any::<bool>(),
        n_chunks in 4usize..60,
    ) {
        let video = VideoSpec { n_chunks, ..VideoSpec::default() };
        let ladder = video.bitrates_kbps.clone();
        let rate = (ladder[low] + ladder[low + 1]) / 2.0;
        let mut env = AbrEnv::new(video, BandwidthTrace::fixed(rate).unwrap()).unwrap();
        let (flat, _) = run_rungs(&mut env, |_| low);
        let (osc, _) = run_rungs(&mut env, |k| if (k % 2 == 0) == high_first { low + 1 } else { low });
        prop_assert!(flat >= osc, "constant {flat} vs oscillating {osc} at {rate} kbps");
    }
}

#[test]
fn observation_layout_matches_feature_indices() {
    let o = Oracle::new(2000.0, 3, 7.5, Some(1200.0));
    let (_, s) = o.env();
    assert_eq!(s.features[features::BUFFER], 7.5);
    assert_eq!(s.features[features::LAST_BITRATE], 1200.0);
    assert_eq!(s.features[features::REMAINING], 45.0);
}
