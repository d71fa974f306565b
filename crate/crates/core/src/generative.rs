//! Generative model: seeded per-(state, action) next-state sampling and
//! empirical kernel construction.
//!
//! # Seed-derivation rule
//!
//! All randomness in the crate flows through one documented scheme built
//! on the SplitMix64 finalizer [`mix64`]:
//!
//! * a *stream seed* is derived by absorbing words into the master seed
//!   one at a time, `h ← mix64(h ^ (word + GOLDEN))` — see
//!   [`derive_stream_seed`]. Next-state sampling for a pair `(s, a)` in
//!   trial `t` uses the words `(DOMAIN_TRANSITION, t, s, a)`; reward
//!   perturbation uses `(DOMAIN_PERTURB, t, s, a)`; instance generation
//!   uses `DOMAIN_GENERATE`.
//! * the stream itself is counter-based: draw `i` of a stream with seed
//!   `z` is `mix64(z + (i+1)·GOLDEN)` ([`SeedStream`]), so any draw can be
//!   produced independently of the others and sampling order never
//!   affects results.
//!
//! # Uniform-to-index rule
//!
//! A draw is mapped to `[0, 1)` by taking the top 53 bits
//! ([`unit_uniform`]), then to a state index by walking the cumulative
//! sums of the transition row and picking the first index whose
//! cumulative sum strictly exceeds the uniform value ([`sample_index`]).
//! If accumulated rounding leaves the final cumulative sum at or below
//! the draw, the last index with positive probability is returned.
//!
//! Bit-exact reproducibility is promised within this implementation, not
//! across languages.

use crate::mdp::Mdp;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

/// Weyl-sequence increment of SplitMix64 (the golden ratio times `2^64`).
pub const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// Stream-seed domain for next-state sampling.
pub const DOMAIN_TRANSITION: u64 = 1;
/// Stream-seed domain for reward perturbation.
pub const DOMAIN_PERTURB: u64 = 2;
/// Stream-seed domain for instance generators.
pub const DOMAIN_GENERATE: u64 = 3;
/// Stream-seed domain for per-trial experiment seeds.
pub const DOMAIN_TRIAL: u64 = 4;

#[derive(Debug, Error)]
pub enum GenError {
    #[error("index (s={s}, a={a}) out of range for a {num_states}x{num_actions} model")]
    IndexOutOfRange {
        s: usize,
        a: usize,
        num_states: usize,
        num_actions: usize,
    },
    #[error("sample count per state-action pair must be at least 1")]
    EmptySample,
}

/// SplitMix64 finalizer: a bijective avalanche mix on 64 bits.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a stream seed from a master seed and a sequence of words.
pub fn derive_stream_seed(master: u64, words: &[u64]) -> u64 {
    let mut h = master;
    for &w in words {
        h = mix64(h ^ w.wrapping_add(GOLDEN));
    }
    h
}

/// Counter-based SplitMix64 stream. Draw `i` is `mix64(seed + (i+1)·GOLDEN)`.
#[derive(Debug, Clone, Copy)]
pub struct SeedStream {
    seed: u64,
    next: u64,
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        SeedStream { seed, next: 0 }
    }

    /// Random access to draw `i`, independent of stream position.
    #[inline]
    pub fn draw(&self, i: u64) -> u64 {
        mix64(self.seed.wrapping_add(i.wrapping_add(1).wrapping_mul(GOLDEN)))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let v = self.draw(self.next);
        self.next += 1;
        v
    }

    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        unit_uniform(self.next_u64())
    }

    /// A uniform index in `[0, n)`.
    #[inline]
    pub fn next_index(&mut self, n: usize) -> usize {
        (self.next_f64() * n as f64) as usize % n.max(1)
    }
}

/// Maps 64 random bits to `[0, 1)` using the top 53 bits.
#[inline]
pub fn unit_uniform(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// First index whose cumulative probability strictly exceeds `u`; falls
/// back to the last index with positive mass if rounding leaves the total
/// at or below `u`.
pub fn sample_index(row: &[f64], u: f64) -> usize {
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (i, &p) in row.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
        }
        cum += p;
        if cum > u {
            return i;
        }
    }
    last_positive
}

/// A hidden true MDP together with a master seed. Sampling never mutates
/// the model; identical `(master_seed, trial, s, a, draw)` tuples yield
/// identical samples.
#[derive(Debug, Clone)]
pub struct GenerativeModel {
    mdp: Mdp,
    master_seed: u64,
}

impl GenerativeModel {
    pub fn new(mdp: Mdp, master_seed: u64) -> Self {
        GenerativeModel { mdp, master_seed }
    }

    pub fn mdp(&self) -> &Mdp {
        &self.mdp
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    fn check_index(&self, s: usize, a: usize) -> Result<(), GenError> {
        if s >= self.mdp.num_states() || a >= self.mdp.num_actions() {
            return Err(GenError::IndexOutOfRange {
                s,
                a,
                num_states: self.mdp.num_states(),
                num_actions: self.mdp.num_actions(),
            });
        }
        Ok(())
    }

    /// Draws one next state distributed according to `P(· | s, a)`.
    pub fn sample_next_state(
        &self,
        s: usize,
        a: usize,
        trial: u64,
        draw: u64,
    ) -> Result<usize, GenError> {
        self.check_index(s, a)?;
        let stream = SeedStream::new(derive_stream_seed(
            self.master_seed,
            &[DOMAIN_TRANSITION, trial, s as u64, a as u64],
        ));
        let u = unit_uniform(stream.draw(draw));
        Ok(sample_index(self.mdp.row(s, a), u))
    }

    /// Draws exactly `n` samples per state-action pair (draw indices
    /// `0..n`) and forms the empirical kernel `P̂(s'|s,a) = counts/n`.
    /// Rows of distinct pairs are sampled in parallel; the result is
    /// independent of scheduling.
    pub fn build_empirical_model(&self, n: u64, trial: u64) -> Result<EmpiricalModel, GenError> {
        if n == 0 {
            return Err(GenError::EmptySample);
        }
        let s_count = self.mdp.num_states();
        let a_count = self.mdp.num_actions();

        let pairs: Vec<(usize, usize)> = (0..s_count)
            .flat_map(|s| (0..a_count).map(move |a| (s, a)))
            .collect();
        let rows: Vec<Vec<u64>> = pairs
            .par_iter()
            .map(|&(s, a)| {
                let stream = SeedStream::new(derive_stream_seed(
                    self.master_seed,
                    &[DOMAIN_TRANSITION, trial, s as u64, a as u64],
                ));
                let row = self.mdp.row(s, a);
                let mut counts = vec![0u64; s_count];
                for draw in 0..n {
                    counts[sample_index(row, unit_uniform(stream.draw(draw)))] += 1;
                }
                counts
            })
            .collect();

        let mut counts = vec![vec![vec![0u64; s_count]; a_count]; s_count];
        for (&(s, a), row) in pairs.iter().zip(rows) {
            counts[s][a] = row;
        }
        let transitions: Vec<Vec<Vec<f64>>> = counts
            .iter()
            .map(|per_action| {
                per_action
                    .iter()
                    .map(|row| row.iter().map(|&c| c as f64 / n as f64).collect())
                    .collect()
            })
            .collect();
        let p_hat = Mdp::new(s_count, a_count, transitions, self.mdp.rewards().to_vec())
            .expect("empirical rows are exact rationals over n");
        Ok(EmpiricalModel { counts, n, p_hat })
    }
}

/// Per-(s,a) sample counts and the empirical kernel they induce. Rewards
/// are copied from the hidden truth (rewards are known, only `P` is not).
#[derive(Debug, Clone)]
pub struct EmpiricalModel {
    counts: Vec<Vec<Vec<u64>>>,
    n: u64,
    p_hat: Mdp,
}

#[derive(Serialize)]
struct CountsDocument<'a> {
    n: u64,
    counts: &'a [Vec<Vec<u64>>],
}

impl EmpiricalModel {
    pub fn counts(&self) -> &[Vec<Vec<u64>>] {
        &self.counts
    }

    pub fn samples_per_pair(&self) -> u64 {
        self.n
    }

    pub fn kernel(&self) -> &Mdp {
        &self.p_hat
    }

    /// The empirical kernel in the standard MDP document format.
    pub fn kernel_document(&self) -> String {
        crate::mdp::codec_save(&self.p_hat)
    }

    /// Sidecar document holding `n` and the raw counts tensor.
    pub fn counts_document(&self) -> String {
        let mut out = serde_json::to_string_pretty(&CountsDocument {
            n: self.n,
            counts: &self.counts,
        })
        .expect("counts serialization cannot fail");
        out.push('\n');
        out
    }
}
