//! Reproducible trace collections.

use super::{synth_trace, BandwidthTrace, TraceKind};
use crate::error::Result;
use crate::seed;

pub const EVAL_SUITE_SIZE: usize = 30;
const EVAL_STREAM: u64 = 0xe7a1;
const TRAIN_STREAM: u64 = 0x7a19;

/// Markov traces drawn from a dedicated seed stream so evaluation and
/// training traces never coincide for the same base seed.
pub fn eval_suite(base_seed: u64) -> Result<Vec<BandwidthTrace>> {
    eval_suite_of(base_seed, EVAL_SUITE_SIZE)
}

/// The first `n` traces of the evaluation stream.
pub fn eval_suite_of(base_seed: u64, n: usize) -> Result<Vec<BandwidthTrace>> {
    markov_suite(seed::derive(base_seed, EVAL_STREAM), n)
}

pub fn training_suite(base_seed: u64, n: usize) -> Result<Vec<BandwidthTrace>> {
    markov_suite(seed::derive(base_seed, TRAIN_STREAM), n)
}

fn markov_suite(stream: u64, n: usize) -> Result<Vec<BandwidthTrace>> {
    (0..n).map(|i| synth_trace(&TraceKind::Markov, seed::derive(stream, i as u64))).collect()
}

pub fn fixed_link_suite(rates_kbps: &[f64]) -> Result<Vec<BandwidthTrace>> {
    rates_kbps.iter().map(|&r| BandwidthTrace::fixed(r)).collect()
}
