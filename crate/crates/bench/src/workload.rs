//! Query workloads: noisy copies of dataset series, or held-out series.

use std::path::Path;

use hercules::raw;
use hercules::series::z_normalize_in_place;
use hercules::{Error, Result};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub const DEFAULT_QUERIES: usize = 100;
pub const MIN_SIGMA2: f64 = 0.01;
pub const MAX_SIGMA2: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WorkloadKind {
    /// Dataset series plus i.i.d. N(0, sigma2) noise, re-normalized.
    Noise { sigma2: f64 },
    /// Series removed from the dataset before indexing.
    OutOfDataset,
}

impl WorkloadKind {
    /// The labelled noise levels: 1%, 2%, 5% and 10%.
    pub fn noise_percent(p: u32) -> Self {
        WorkloadKind::Noise { sigma2: p as f64 / 100.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkloadSpec {
    pub count: usize,
    pub kind: WorkloadKind,
    pub seed: u64,
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Config("workload needs at least one query".into()));
        }
        if let WorkloadKind::Noise { sigma2 } = self.kind {
            if !(MIN_SIGMA2..=MAX_SIGMA2).contains(&sigma2) {
                return Err(Error::Config(format!(
                    "noise variance {sigma2} outside [{MIN_SIGMA2}, {MAX_SIGMA2}]"
                )));
            }
        }
        Ok(())
    }
}

/// A generated workload. `reduced` is the dataset without the held-out
/// series for out-of-dataset workloads.
#[derive(Debug, Clone, PartialEq)]
pub struct Workload {
    pub queries: Vec<f32>,
    pub reduced: Option<Vec<f32>>,
}

pub fn generate(dataset: &[f32], n: usize, spec: &WorkloadSpec) -> Result<Workload> {
    spec.validate()?;
    if n == 0 || !dataset.len().is_multiple_of(n) || dataset.is_empty() {
        return Err(Error::Config(format!("dataset of {} values is not a set of length-{n} series", dataset.len())));
    }
    let total = dataset.len() / n;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    match spec.kind {
        WorkloadKind::Noise { sigma2 } => {
            let noise = Normal::new(0.0, sigma2.sqrt()).map_err(|e| Error::Config(e.to_string()))?;
            let mut queries = Vec::with_capacity(spec.count * n);
            for _ in 0..spec.count {
                let i = rng.random_range(0..total);
                let mut q: Vec<f32> = dataset[i * n..(i + 1) * n]
                    .iter()
                    .map(|&v| (v as f64 + noise.sample(&mut rng)) as f32)
                    .collect();
                z_normalize_in_place(&mut q);
                queries.extend_from_slice(&q);
            }
            Ok(Workload { queries, reduced: None })
        }
        WorkloadKind::OutOfDataset => {
            if spec.count >= total {
                return Err(Error::Config(format!(
                    "cannot hold out {} of {total} series",
                    spec.count
                )));
            }
            let mut held: Vec<usize> = index::sample(&mut rng, total, spec.count).into_vec();
            let queries = held.iter().flat_map(|&i| dataset[i * n..(i + 1) * n].iter().copied()).collect();
            held.sort_unstable();
            let mut reduced = Vec::with_capacity((total - spec.count) * n);
            let mut skip = held.iter().peekable();
            for (i, s) in dataset.chunks_exact(n).enumerate() {
                if skip.peek() == Some(&&i) {
                    skip.next();
                } else {
                    reduced.extend_from_slice(s);
                }
            }
            Ok(Workload {
                queries,
                reduced: Some(reduced),
            })
        }
    }
}

/// File-level workload generation. Out-of-dataset workloads also write the
/// reduced dataset, which is the one to index.
pub fn generate_files(dataset: &Path, n: usize, spec: &WorkloadSpec, out: &Path, reduced_out: Option<&Path>) -> Result<()> {
    if spec.kind == WorkloadKind::OutOfDataset && reduced_out.is_none() {
        return Err(Error::Config("out-of-dataset workloads need a reduced dataset path".into()));
    }
    let data = raw::read_series_file(dataset, n)?;
    let w = generate(&data, n, spec)?;
    raw::write_series_file(out, &w.queries)?;
    if let (Some(path), Some(reduced)) = (reduced_out, &w.reduced) {
        raw::write_series_file(path, reduced)?;
    }
    Ok(())
}
