//! Counter-addressed random streams.
//!
//! A stream is keyed by `(master_seed, replication)` and split into
//! sub-streams (noise, initial condition, ...). Inside a sub-stream the draws
//! for step `n` live at a fixed word offset `n * stride`, so a step's draws
//! depend only on `(seed, replication, n)` and never on how many words earlier
//! steps happened to consume.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Sub-stream identifiers.
pub const NOISE_STREAM: u64 = 0;
pub const INIT_STREAM: u64 = 1;
pub const AUX_STREAM: u64 = 2;

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 256-bit key derived from `(master_seed, replication)`.
pub fn stream_key(master_seed: u64, replication: u64) -> [u8; 32] {
    let mut state = master_seed ^ replication.wrapping_mul(0xD1B5_4A32_D192_ED03);
    // decorrelate neighbouring replication indices before expanding
    let _ = splitmix64(&mut state);
    state ^= replication;
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    key
}

/// A ChaCha8 stream positioned by step index.
#[derive(Debug, Clone)]
pub struct StepRng {
    inner: ChaCha8Rng,
    /// 32-bit words reserved per step.
    stride: u128,
    spare_normal: Option<f64>,
}

impl StepRng {
    /// `draws_per_step` is the number of `f64` variates a step may consume.
    pub fn new(master_seed: u64, replication: u64, stream: u64, draws_per_step: usize) -> Self {
        let mut inner = ChaCha8Rng::from_seed(stream_key(master_seed, replication));
        inner.set_stream(stream);
        // each variate is built from one u64, i.e. two words; normals come
        // in Box-Muller pairs
        let per_step = draws_per_step.max(1).next_multiple_of(2) as u128;
        Self { inner, stride: 2 * per_step, spare_normal: None }
    }

    /// Position the stream at the start of step `n`'s block.
    #[inline]
    pub fn begin_step(&mut self, n: u64) {
        self.spare_normal = None;
        let pos = n as u128 * self.stride;
        if self.inner.get_word_pos() != pos {
            self.inner.set_word_pos(pos);
        }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on the open interval `(0, 1)` with 53 random bits.
    #[inline]
    pub fn uniform_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via Box-Muller; consumes two words per pair.
    #[inline]
    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = self.uniform_open();
        let u2 = self.uniform_open();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        self.spare_normal = Some(r * s);
        r * c
    }

    pub fn fill_standard_normal(&mut self, out: &mut [f64]) {
        for z in out.iter_mut() {
            *z = self.standard_normal();
        }
    }

    /// Independent sign with probability 1/2 each.
    #[inline]
    pub fn rademacher(&mut self) -> f64 {
        if self.next_u64() >> 63 == 0 {
            1.0
        } else {
            -1.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_key_same_draws() {
        let mut a = StepRng::new(7, 3, NOISE_STREAM, 3);
        let mut b = StepRng::new(7, 3, NOISE_STREAM, 3);
        for n in 1..100 {
            a.begin_step(n);
            b.begin_step(n);
            for _ in 0..3 {
                assert_eq!(a.standard_normal().to_bits(), b.standard_normal().to_bits());
            }
        }
    }

    #[test]
    fn step_draws_are_addressable() {
        // sequential consumption and random access give the same step block
        let mut seq = StepRng::new(11, 0, NOISE_STREAM, 2);
        let mut recorded = Vec::new();
        for n in 1..=50 {
            seq.begin_step(n);
            recorded.push((seq.standard_normal(), seq.standard_normal()));
        }
        let mut jump = StepRng::new(11, 0, NOISE_STREAM, 2);
        for n in [37u64, 3, 50, 1] {
            jump.begin_step(n);
            let got = (jump.standard_normal(), jump.standard_normal());
            assert_eq!(got, recorded[(n - 1) as usize]);
        }
    }

    #[test]
    fn under_consumption_does_not_shift_later_steps() {
        let mut full = StepRng::new(5, 9, NOISE_STREAM, 4);
        let mut lazy = StepRng::new(5, 9, NOISE_STREAM, 4);
        for n in 1..20 {
            full.begin_step(n);
            lazy.begin_step(n);
            let f: Vec<f64> = (0..4).map(|_| full.standard_normal()).collect();
            let l = lazy.standard_normal();
            assert_eq!(f[0], l);
        }
    }

    #[test]
    fn replications_and_streams_differ() {
        let mut a = StepRng::new(1, 0, NOISE_STREAM, 1);
        let mut b = StepRng::new(1, 1, NOISE_STREAM, 1);
        let mut c = StepRng::new(1, 0, INIT_STREAM, 1);
        a.begin_step(1);
        b.begin_step(1);
        c.begin_step(1);
        let (x, y, z) = (a.next_u64(), b.next_u64(), c.next_u64());
        assert!(x != y && x != z && y != z);
    }

    #[test]
    fn normal_moments() {
        let mut r = StepRng::new(2024, 0, NOISE_STREAM, 2);
        let n = 200_000;
        let (mut s1, mut s2, mut s4) = (0.0, 0.0, 0.0);
        for k in 0..n {
            r.begin_step(k);
            let z = r.standard_normal();
            s1 += z;
            s2 += z * z;
            s4 += z * z * z * z;
        }
        let nf = n as f64;
        assert!((s1 / nf).abs() < 4.0 / nf.sqrt());
        assert!((s2 / nf - 1.0).abs() < 4.0 * (2.0 / nf).sqrt());
        assert!((s4 / nf - 3.0).abs() < 0.1);
    }
}
