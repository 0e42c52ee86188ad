//! PSCAN: parallel brute-force k-NN over a raw dataset file.
//!
//! A reader thread streams the file chunk by chunk through a rendezvous
//! channel, so one chunk is being read while the previous one is scanned.
//! Workers claim blocks of a chunk and compare every series in the block
//! against every query with early abandoning, sharing one result set (and
//! so one BSF) per query.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use hercules::query::ResultSet;
use hercules::raw::SeriesReader;
use hercules::series::euclidean_sq_early_abandon;
use hercules::{Error, Result};
use parking_lot::RwLock;

use crate::io_err;

const CHUNK_SERIES: usize = 4096;
const BLOCK_SERIES: usize = 64;

#[derive(Debug, Clone)]
pub struct PscanReport {
    /// One result set per query, in query order.
    pub results: Vec<ResultSet>,
    pub wall_secs: f64,
    pub input_secs: f64,
    pub bytes_read: u64,
}

/// Exact k-NN of every query (`queries` holds `count * n` values) against
/// the dataset file, in a single pass.
pub fn pscan(dataset: &Path, n: usize, queries: &[f32], k: usize, num_threads: usize) -> Result<PscanReport> {
    if k == 0 || num_threads == 0 {
        return Err(Error::Config("k and thread count must be at least 1".into()));
    }
    if n == 0 || !queries.len().is_multiple_of(n) {
        return Err(Error::Config(format!("{} query values do not form length-{n} series", queries.len())));
    }
    let start = Instant::now();
    let mut reader = SeriesReader::open(dataset, n)?;
    let total = reader.remaining();
    let shared: Vec<RwLock<ResultSet>> = queries.chunks_exact(n).map(|_| RwLock::new(ResultSet::new(k))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(num_threads)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;

    let (tx, rx) = mpsc::sync_channel::<(usize, Vec<f32>)>(0);
    let input = thread::scope(|scope| -> Result<Duration> {
        let producer = scope.spawn(move || -> Result<Duration> {
            let mut spent = Duration::ZERO;
            let mut first = 0;
            while first < total {
                let mut buf = Vec::new();
                let t = Instant::now();
                let got = reader.read_chunk(CHUNK_SERIES, &mut buf).map_err(|e| io_err(dataset, e))?;
                spent += t.elapsed();
                if tx.send((first, buf)).is_err() {
                    break;
                }
                first += got;
            }
            Ok(spent)
        });
        for (first, chunk) in rx {
            let next = AtomicUsize::new(0);
            let rows = chunk.len() / n;
            pool.broadcast(|_| loop {
                let b = next.fetch_add(1, Ordering::Relaxed) * BLOCK_SERIES;
                if b >= rows {
                    break;
                }
                for r in b..(b + BLOCK_SERIES).min(rows) {
                    let s = &chunk[r * n..(r + 1) * n];
                    for (q, res) in queries.chunks_exact(n).zip(&shared) {
                        let bsf = res.read().bsf();
                        if let Ok(Some(d)) = euclidean_sq_early_abandon(q, s, bsf) {
                            res.write().insert(d, (first + r) as u64);
                        }
                    }
                }
            });
        }
        producer.join().expect("reader thread panicked")
    })?;

    Ok(PscanReport {
        results: shared.into_iter().map(RwLock::into_inner).collect(),
        wall_secs: start.elapsed().as_secs_f64(),
        input_secs: input.as_secs_f64(),
        bytes_read: (total * n * 4) as u64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::random_walks;

    fn naive(data: &[f32], n: usize, q: &[f32], k: usize) -> Vec<f32> {
        let mut d: Vec<f32> = data
            .chunks_exact(n)
            .map(|s| s.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum())
            .collect();
        d.sort_by(f32::total_cmp);
        d.truncate(k);
        d
    }

    fn dists(r: &ResultSet) -> Vec<f32> {
        r.neighbors().iter().map(|x| x.dist_sq).collect()
    }

    #[test]
    fn matches_nested_loop_for_any_thread_count() {
        let dir = tempfile::tempdir().unwrap();
        let n = 32;
        let data = random_walks(9_000, n, 1);
        let path = dir.path().join("d.bin");
        hercules::raw::write_series_file(&path, &data).unwrap();
        let queries = random_walks(5, n, 2);
        let mut per_threads = Vec::new();
        for threads in [1, 4, 8] {
            let rep = pscan(&path, n, &queries, 10, threads).unwrap();
            for (q, r) in queries.chunks_exact(n).zip(&rep.results) {
                let expect = naive(&data, n, q, 10);
                for (g, e) in dists(r).iter().zip(&expect) {
                    assert!((g - e).abs() <= 1e-4 * e.max(1e-6));
                }
            }
            per_threads.push(rep.results.iter().map(dists).collect::<Vec<_>>());
            assert_eq!(rep.bytes_read, (data.len() * 4) as u64);
        }
        assert_eq!(per_threads[0], per_threads[1]);
        assert_eq!(per_threads[0], per_threads[2]);
    }

    #[test]
    fn self_query_finds_itself() {
        let dir = tempfile::tempdir().unwrap();
        let data = random_walks(100, 16, 3);
        let path = dir.path().join("d.bin");
        hercules::raw::write_series_file(&path, &data).unwrap();
        let rep = pscan(&path, 16, &data[37 * 16..38 * 16], 1, 2).unwrap();
        assert_eq!(rep.results[0].neighbors()[0].pos, 37);
        assert_eq!(rep.results[0].neighbors()[0].dist_sq, 0.0);
        assert!(pscan(&path, 16, &data[..15], 1, 2).is_err());
    }
}
