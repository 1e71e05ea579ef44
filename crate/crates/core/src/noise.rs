//! Reproducible Brownian increment streams.
//!
//! Every replica owns two ChaCha8 streams keyed by `(seed, 2·replica)` and
//! `(seed, 2·replica + 1)`: the first drives `X` and `X̃` together, the second
//! drives the independent evaluation path `X̄`.

use std::fs;
use std::io;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::Vector;

/// A single stream of standard normal draws.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
}

impl NoiseStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng }
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Fills `out` with independent `N(0, dt)` increments.
    pub fn fill_increment(&mut self, sqrt_dt: f64, out: &mut Vector) {
        for v in out.iter_mut() {
            *v = sqrt_dt * self.rng.sample::<f64, _>(StandardNormal);
        }
    }
}

/// The `(W, W̄)` streams of one replica.
#[derive(Debug, Clone)]
pub struct StreamPair {
    pub main: NoiseStream,
    pub bar: NoiseStream,
}

impl StreamPair {
    pub fn new(seed: u64, replica: u64) -> Self {
        Self {
            main: NoiseStream::new(seed, 2 * replica),
            bar: NoiseStream::new(seed, 2 * replica + 1),
        }
    }
}

pub fn make_noise_streams(seed: u64, n_replicas: usize) -> Vec<StreamPair> {
    (0..n_replicas.max(1) as u64)
        .map(|r| StreamPair::new(seed, r))
        .collect()
}

/// Mixes a base seed with a tag into a new seed (SplitMix64 finalizer).
pub fn derive_seed(base: u64, tag: u64) -> u64 {
    let mut z = base ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Writes increments as little-endian `f64`, row-major `[step][component]`.
pub fn write_noise_sidecar(path: &Path, values: &[f64]) -> io::Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes)
}

/// Reads a sidecar written by [`write_noise_sidecar`] into rows of `width`.
pub fn read_noise_sidecar(path: &Path, width: usize) -> io::Result<Vec<Vec<f64>>> {
    let bytes = fs::read(path)?;
    if width == 0 || bytes.len() % (8 * width) != 0 {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!(
                "sidecar length {} is not a multiple of {} rows",
                bytes.len(),
                8 * width
            ),
        ));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok(values.chunks(width).map(|r| r.to_vec()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn draws(stream: &mut NoiseStream, n: usize) -> Vec<f64> {
        (0..n).map(|_| stream.standard_normal()).collect()
    }

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let mut a = make_noise_streams(42, 2);
        let mut b = make_noise_streams(42, 2);
        let xa = draws(&mut a[1].main, 1000);
        let xb = draws(&mut b[1].main, 1000);
        assert!(xa.iter().zip(&xb).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn replicas_and_bar_streams_are_uncorrelated() {
        // |ρ| < 0.02 is about 6 standard errors at n = 1e5
        let n = 100_000;
        let mut s = make_noise_streams(7, 2);
        let r0 = draws(&mut s[0].main, n);
        let r1 = draws(&mut s[1].main, n);
        let bar0 = draws(&mut s[0].bar, n);
        assert!(correlation(&r0, &r1).abs() < 0.02);
        assert!(correlation(&r0, &bar0).abs() < 0.02);
    }

    #[test]
    fn increment_variance_is_dt() {
        let mut s = NoiseStream::new(3, 0);
        let dt: f64 = 0.01;
        let mut v = Vector::zeros(1);
        let n = 100_000;
        let mut ss = 0.0;
        for _ in 0..n {
            s.fill_increment(dt.sqrt(), &mut v);
            ss += v[0] * v[0];
        }
        let var = ss / n as f64;
        // standard error of the variance estimate is dt·sqrt(2/n) ≈ 4.5e-5
        assert!((var - dt).abs() < 3e-4, "{var}");
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
        assert_ne!(derive_seed(1, 0), derive_seed(2, 0));
        assert_eq!(derive_seed(5, 9), derive_seed(5, 9));
    }

    #[test]
    fn sidecar_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("noise.bin");
        write_noise_sidecar(&p, &[1.0, -2.5, 3.25, 0.0]).unwrap();
        let rows = read_noise_sidecar(&p, 2).unwrap();
        assert_eq!(rows, vec![vec![1.0, -2.5], vec![3.25, 0.0]]);
        assert!(read_noise_sidecar(&p, 3).is_err());
    }
}
