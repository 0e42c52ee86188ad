#![allow(dead_code)]

use std::path::{Path, PathBuf};

use hercules::build::{build_index, BuildConfig};
use hercules::persist::{write_index, Index, IndexSettings};
use hercules::raw;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// `count` z-normalized Gaussian random walks of length `n`.
pub fn random_walks(count: usize, n: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count * n);
    for _ in 0..count {
        let mut x = 0f64;
        let walk: Vec<f64> = (0..n)
            .map(|_| {
                let step: f64 = StandardNormal.sample(&mut rng);
                x += step;
                x
            })
            .collect();
        let m = walk.iter().sum::<f64>() / n as f64;
        let sd = (walk.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64).sqrt();
        out.extend(walk.iter().map(|v| ((v - m) / sd) as f32));
    }
    out
}

pub fn write_dataset(dir: &Path, values: &[f32]) -> PathBuf {
    let path = dir.join("dataset.bin");
    raw::write_series_file(&path, values).unwrap();
    path
}

/// Builds and writes an index over `values` in `dir/index`.
pub fn make_index(dir: &Path, values: &[f32], n: usize, tau: usize, threads: usize) -> Index {
    let data = write_dataset(dir, values);
    let cfg = BuildConfig::for_dataset(values.len() / n, threads, dir.join("scratch"));
    let built = build_index(&data, IndexSettings::new(n, tau).unwrap(), &cfg).unwrap();
    write_index(built, &dir.join("index"), threads).unwrap()
}

/// Squared distances of the k nearest series, by plain double-precision scan.
pub fn brute_force(values: &[f32], n: usize, query: &[f32], k: usize) -> Vec<f64> {
    let mut d: Vec<f64> = values
        .chunks_exact(n)
        .map(|s| s.iter().zip(query).map(|(a, b)| (*a as f64 - *b as f64).powi(2)).sum())
        .collect();
    d.sort_by(f64::total_cmp);
    d.truncate(k);
    d
}

pub fn assert_close(got: &[f32], expect: &[f64], rel: f64) {
    assert_eq!(got.len(), expect.len());
    for (g, e) in got.iter().zip(expect) {
        let g = *g as f64;
        assert!((g - e).abs() <= rel * e.max(1e-6), "distance {g} vs oracle {e}");
    }
}

/// Sorted series as bit patterns, for multiset comparison.
pub fn multiset(values: &[f32], n: usize) -> Vec<Vec<u32>> {
    let mut rows: Vec<Vec<u32>> = values
        .chunks_exact(n)
        .map(|s| s.iter().map(|v| v.to_bits()).collect())
        .collect();
    rows.sort();
    rows
}

/// Population mean and sd of a slice, computed in double precision.
pub fn mean_sd(points: &[f32]) -> (f64, f64) {
    let w = points.len() as f64;
    let m = points.iter().map(|&p| p as f64).sum::<f64>() / w;
    let v = points.iter().map(|&p| (p as f64 - m).powi(2)).sum::<f64>() / w;
    (m, v.sqrt())
}
