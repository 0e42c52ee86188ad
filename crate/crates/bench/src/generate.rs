//! Synthetic random-walk datasets.
//!
//! Series `i` of a dataset with seed `s` is drawn from ChaCha8 seeded with
//! `s` on stream `i`, so any series can be regenerated independently and the
//! output is identical on every platform.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use hercules::series::z_normalize_in_place;
use hercules::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::io_err;

/// Series `index` of the dataset `seed`: a cumulative sum of N(0, 1) steps, z-normalized.
pub fn random_walk(n: usize, seed: u64, index: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let mut x = 0f64;
    let mut out: Vec<f32> = (0..n)
        .map(|_| {
            let step: f64 = StandardNormal.sample(&mut rng);
            x += step;
            x as f32
        })
        .collect();
    z_normalize_in_place(&mut out);
    out
}

pub fn random_walks(count: usize, n: usize, seed: u64) -> Vec<f32> {
    (0..count as u64).flat_map(|i| random_walk(n, seed, i)).collect()
}

/// Streams `count` random walks to a raw series file.
pub fn write_random_walks(path: &Path, count: usize, n: usize, seed: u64) -> Result<()> {
    if count == 0 || n == 0 {
        return Err(Error::Config("count and length must be at least 1".into()));
    }
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let mut bytes = Vec::with_capacity(n * 4);
    for i in 0..count as u64 {
        bytes.clear();
        hercules::raw::encode_f32s(&random_walk(n, seed, i), &mut bytes);
        w.write_all(&bytes).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lag1(s: &[f32]) -> f64 {
        let m = s.iter().map(|&v| v as f64).sum::<f64>() / s.len() as f64;
        let num: f64 = s.windows(2).map(|w| (w[0] as f64 - m) * (w[1] as f64 - m)).sum();
        let den: f64 = s.iter().map(|&v| (v as f64 - m).powi(2)).sum();
        num / den
    }

    #[test]
    fn deterministic_and_normalized() {
        assert_eq!(random_walk(4, 9, 0), random_walk(4, 9, 0));
        assert_ne!(random_walk(4, 9, 0), random_walk(4, 9, 1));
        assert_ne!(random_walk(4, 9, 0), random_walk(4, 10, 0));
        for i in 0..20 {
            let s = random_walk(256, 3, i);
            let m = s.iter().map(|&v| v as f64).sum::<f64>() / 256.0;
            let sd = (s.iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / 256.0).sqrt();
            assert!(m.abs() < 1e-4 && (sd - 1.0).abs() < 1e-4, "mean {m} sd {sd}");
        }
    }

    #[test]
    fn walks_are_strongly_autocorrelated() {
        let mut r: Vec<f64> = (0..100).map(|i| lag1(&random_walk(256, 5, i))).collect();
        r.sort_by(f64::total_cmp);
        assert!(r[50] > 0.8, "median lag-1 autocorrelation {}", r[50]);
    }

    #[test]
    fn file_matches_in_memory() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rw.bin");
        write_random_walks(&p, 7, 16, 1).unwrap();
        let a = hercules::raw::read_series_file(&p, 16).unwrap();
        assert_eq!(a, random_walks(7, 16, 1));
        write_random_walks(&p, 1, 4, 1).unwrap();
        let first = std::fs::read(&p).unwrap();
        write_random_walks(&p, 1, 4, 1).unwrap();
        assert_eq!(first, std::fs::read(&p).unwrap());
    }
}
