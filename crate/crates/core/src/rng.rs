//! Counter-based random streams.
//!
//! A stream is a ChaCha8 keystream keyed by `master_seed` with the 64-bit
//! ChaCha stream selector set to `stream_id`. Output is a pure function of
//! `(master_seed, stream_id, position)`, so replicate `k` draws the same
//! numbers no matter which worker runs it or in what order.

use alloc::vec::Vec;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{precondition, Result};

/// Provenance of a random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct SeedTag {
    pub master_seed: u64,
    pub stream_id: u64,
}

#[derive(Debug, Clone)]
pub struct RngStream {
    tag: SeedTag,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(master_seed);
        inner.set_stream(stream_id);
        Self {
            tag: SeedTag {
                master_seed,
                stream_id,
            },
            inner,
        }
    }

    /// Stream for replicate `index` of the experiment named `label`.
    pub fn for_replicate(master_seed: u64, label: &str, index: u64) -> Self {
        Self::new(master_seed, derive_stream_id(label, index))
    }

    /// Child stream, e.g. one per particle of an ensemble.
    pub fn child(&self, index: u64) -> Self {
        Self::new(self.tag.master_seed, mix64(self.tag.stream_id ^ mix64(index.wrapping_add(1))))
    }

    pub fn tag(&self) -> SeedTag {
        self.tag
    }

    #[inline]
    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / 9007199254740992.0)
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        ((self.uniform() * n as f64) as usize).min(n.saturating_sub(1))
    }

    /// Fills `out` with independent `N(0, dt)` draws.
    #[inline]
    pub fn fill_increments(&mut self, sqrt_dt: f64, out: &mut [f64]) {
        for o in out.iter_mut() {
            *o = sqrt_dt * self.standard_normal();
        }
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// SplitMix64 finaliser.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over the label bytes.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// `stream_id = splitmix64(fnv1a(label) ^ splitmix64(index))`.
///
/// External tools can recompute this to replay a single replicate.
pub fn derive_stream_id(label: &str, index: u64) -> u64 {
    mix64(fnv1a(label.as_bytes()) ^ mix64(index))
}

/// `n_steps` independent Gaussian vectors of dimension `d`, each coordinate `N(0, dt)`.
pub fn brownian_increments(stream: &mut RngStream, d: usize, dt: f64, n_steps: usize) -> Result<Vec<Vec<f64>>> {
    if !(dt > 0.0) || !dt.is_finite() {
        return precondition("brownian_increments requires dt > 0");
    }
    if d == 0 {
        return precondition("brownian_increments requires d >= 1");
    }
    let sqrt_dt = libm::sqrt(dt);
    Ok((0..n_steps)
        .map(|_| {
            let mut v = alloc::vec![0.0; d];
            stream.fill_increments(sqrt_dt, &mut v);
            v
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_steps_is_empty() {
        let mut s = RngStream::new(1, 2);
        assert!(brownian_increments(&mut s, 3, 0.1, 0).unwrap().is_empty());
    }

    #[test]
    fn rejects_nonpositive_dt() {
        let mut s = RngStream::new(1, 2);
        assert!(brownian_increments(&mut s, 1, 0.0, 5).is_err());
    }

    #[test]
    fn same_key_same_sequence_bitwise() {
        let a = brownian_increments(&mut RngStream::new(42, 7), 2, 0.01, 1000).unwrap();
        let b = brownian_increments(&mut RngStream::new(42, 7), 2, 0.01, 1000).unwrap();
        let bits = |v: &Vec<Vec<f64>>| v.iter().flatten().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn distinct_streams_differ_and_are_uncorrelated() {
        let n = 200_000;
        let a = brownian_increments(&mut RngStream::new(42, 7), 1, 1.0, n).unwrap();
        let b = brownian_increments(&mut RngStream::new(42, 8), 1, 1.0, n).unwrap();
        assert_ne!(a[0][0].to_bits(), b[0][0].to_bits());
        let corr: f64 = a.iter().zip(&b).map(|(x, y)| x[0] * y[0]).sum::<f64>() / n as f64;
        // 5 standard errors of the sample correlation
        assert!(corr.abs() < 5.0 / libm::sqrt(n as f64));
    }

    #[test]
    fn moments_match_clt_window() {
        // mean within 4 sigma/sqrt(n), variance within 1 %
        let n = 1_000_000;
        let dt = 0.01;
        let inc = brownian_increments(&mut RngStream::new(2024, 0), 1, dt, n).unwrap();
        let mean = inc.iter().map(|v| v[0]).sum::<f64>() / n as f64;
        let var = inc.iter().map(|v| (v[0] - mean) * (v[0] - mean)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 4e-4, "mean {mean}");
        assert!((var - dt).abs() < 0.01 * dt, "var {var}");
    }

    #[test]
    fn stream_id_derivation_is_stable() {
        assert_eq!(derive_stream_id("exit", 3), derive_stream_id("exit", 3));
        assert_ne!(derive_stream_id("exit", 3), derive_stream_id("exit", 4));
        assert_ne!(derive_stream_id("exit", 3), derive_stream_id("exits", 3));
    }
}
