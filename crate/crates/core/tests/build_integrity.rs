mod common;

use std::collections::HashSet;

use common::{multiset, random_walks, write_dataset};
use hercules::build::{build_index, BuildConfig};
use hercules::persist::{write_index_traced, IndexSettings};
use hercules::summary::{isax, Breakpoints};

const N: usize = 64;

fn stress(threads: usize, count: usize, tau: usize, flush_threshold: usize, seed: u64) {
    let dir = tempfile::tempdir().unwrap();
    let values = random_walks(count, N, seed);
    let data = write_dataset(dir.path(), &values);
    let workers = threads - 1;
    let mut cfg = BuildConfig::for_dataset(count, threads, dir.path().join("scratch"));
    cfg.db_size = 50;
    cfg.hbuffer_series = 2 * cfg.db_size * workers;
    cfg.flush_threshold = flush_threshold;
    cfg.record_claims = true;
    let built = build_index(&data, IndexSettings::new(N, tau).unwrap(), &cfg).unwrap();
    let report = built.report().clone();

    assert!(report.flushes >= 3, "only {} flushes", report.flushes);
    assert_eq!(report.writes_during_flush, 0);
    assert!(report.flush_counters.iter().all(|&c| c < workers));

    // every dataset position claimed exactly once
    let rounds = count.div_ceil(cfg.db_size);
    let mut seen = HashSet::new();
    for c in &report.claims {
        assert!(c.worker < workers);
        assert!(seen.insert((c.round, c.pos)), "{c:?} claimed twice");
    }
    assert_eq!(seen.len(), count);
    assert!(report.claims.iter().all(|c| c.round < rounds));

    let snapshots = built.leaf_snapshots().unwrap();
    assert!(snapshots.iter().all(|l| l.size <= tau));
    let members: Vec<f32> = snapshots.iter().flat_map(|l| l.members.iter().copied()).collect();
    assert_eq!(multiset(&members, N), multiset(&values, N));
    for l in &snapshots {
        for s in l.members.chunks_exact(N) {
            assert!(l.synopsis.contains_series(&l.segmentation, s));
        }
    }

    let (index, wr) = write_index_traced(built, &dir.path().join("index"), threads).unwrap();
    assert_eq!(wr.order_violations, 0);
    let ranks: Vec<usize> = wr.claims.iter().map(|c| c.1).collect();
    assert_eq!(ranks, (0..index.tree().leaves().len()).collect::<Vec<_>>());

    let lrd = hercules::raw::read_series_file(&index.dir().join("lrd.bin"), N).unwrap();
    assert_eq!(multiset(&lrd, N), multiset(&values, N));
    // leaves occupy consecutive, increasing slices and hold what the build put there
    let mut next = 0;
    for (&leaf, snap) in index.tree().leaves().iter().zip(&snapshots) {
        let pos = index.tree().node(leaf).file_position().unwrap();
        assert_eq!(pos.first, next);
        assert_eq!(pos.count as usize, snap.size);
        let slice = &lrd[pos.first as usize * N..(pos.first + pos.count) as usize * N];
        assert_eq!(slice, &snap.members[..]);
        next += pos.count;
    }
    assert_eq!(next as usize, count);

    let bp = Breakpoints::normal(256).unwrap();
    for (p, s) in lrd.chunks_exact(N).enumerate() {
        assert_eq!(index.word(p as u64), &isax(s, 16, &bp).unwrap()[..]);
    }
    assert!(!dir.path().join("scratch").read_dir().unwrap().any(|_| true));
}

#[test]
fn two_threads_threshold_one() {
    stress(2, 2_000, 40, 1, 1);
}

#[test]
fn eight_threads_half_threshold() {
    stress(8, 3_000, 40, 4, 2);
}

#[test]
fn eight_threads_threshold_one() {
    stress(8, 3_000, 25, 1, 3);
}

#[test]
fn many_threads_small_leaves() {
    stress(24, 4_000, 16, 12, 4);
}

#[test]
fn build_rejects_bad_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_dataset(dir.path(), &random_walks(10, N, 5));
    let mut cfg = BuildConfig::for_dataset(10, 1, dir.path().join("s"));
    assert!(build_index(&data, IndexSettings::new(N, 4).unwrap(), &cfg).is_err());
    cfg.num_threads = 3;
    cfg.hbuffer_series = 1;
    assert!(build_index(&data, IndexSettings::new(N, 4).unwrap(), &cfg).is_err());
    let cfg = BuildConfig::for_dataset(10, 2, dir.path().join("s"));
    assert!(build_index(&data, IndexSettings::new(48, 4).unwrap(), &cfg).is_err());
}
