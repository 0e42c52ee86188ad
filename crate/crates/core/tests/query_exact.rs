mod common;

use std::collections::BTreeSet;

use common::{assert_close, brute_force, make_index, random_walks};
use hercules::persist::load_index;
use hercules::query::{Frontier, Phase, QueryConfig, QueryEngine, ResultSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const N: usize = 64;

fn noisy_queries(values: &[f32], count: usize, sigma: f32, seed: u64) -> Vec<Vec<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = values.len() / N;
    (0..count)
        .map(|_| {
            let i = rng.random_range(0..total);
            let q: Vec<f32> = values[i * N..(i + 1) * N]
                .iter()
                .map(|v| v + sigma * rng.random_range(-1.0f32..1.0))
                .collect();
            hercules::series::z_normalize(&q)
        })
        .collect()
}

#[test]
fn matches_brute_force() {
    let dir = tempfile::tempdir().unwrap();
    let values = random_walks(10_000, N, 21);
    let index = make_index(dir.path(), &values, N, 100, 3);
    let mut queries = noisy_queries(&values, 40, 0.3, 22);
    queries.extend(random_walks(20, N, 23).chunks_exact(N).map(<[f32]>::to_vec));
    for k in [1, 10, 100] {
        let engine = QueryEngine::new(&index, QueryConfig { k, num_threads: 2, ..Default::default() }).unwrap();
        for q in &queries {
            let (res, stats) = engine.knn(q).unwrap();
            let got: Vec<f32> = res.neighbors().iter().map(|n| n.dist_sq).collect();
            assert_close(&got, &brute_force(&values, N, q, k), 1e-3);
            assert!((0.0..=1.0).contains(&stats.eapca_pr));
            assert!(stats.sax_pr.is_none_or(|p| (0.0..=1.0).contains(&p)));
            assert!((0.0..=1.0).contains(&stats.fraction_accessed));
        }
    }
}

#[test]
fn self_match_is_distance_zero() {
    let dir = tempfile::tempdir().unwrap();
    let values = random_walks(2_000, N, 31);
    let index = make_index(dir.path(), &values, N, 50, 2);
    let engine = QueryEngine::new(&index, QueryConfig::default()).unwrap();
    let lrd = hercules::raw::read_series_file(&index.dir().join("lrd.bin"), N).unwrap();
    for p in [0usize, 17, 1999] {
        let (res, _) = engine.knn(&lrd[p * N..(p + 1) * N]).unwrap();
        assert_eq!(res.neighbors()[0].dist_sq, 0.0);
        assert_eq!(res.neighbors()[0].pos, p as u64);
    }
    assert!(engine.knn(&lrd[..N - 1]).is_err());
}

#[test]
fn answers_do_not_depend_on_path_or_threads() {
    let dir = tempfile::tempdir().unwrap();
    let values = random_walks(5_000, N, 41);
    let index = make_index(dir.path(), &values, N, 60, 3);
    let mut queries = noisy_queries(&values, 10, 0.5, 42);
    queries.extend(random_walks(10, N, 43).chunks_exact(N).map(<[f32]>::to_vec));
    let mut reference: Option<Vec<Vec<f32>>> = None;
    let mut phases = BTreeSet::new();
    for eapca_th in [0.0, 0.25, 1.0] {
        for sax_th in [0.0, 0.5, 1.0] {
            for num_threads in [1, 8] {
                let cfg = QueryConfig { k: 10, eapca_th, sax_th, num_threads, ..Default::default() };
                let engine = QueryEngine::new(&index, cfg).unwrap();
                let answers: Vec<Vec<f32>> = queries
                    .iter()
                    .map(|q| {
                        let (r, s) = engine.knn(q).unwrap();
                        phases.insert(s.phase.label());
                        r.neighbors().iter().map(|n| n.dist_sq).collect()
                    })
                    .collect();
                match &reference {
                    None => reference = Some(answers),
                    Some(r) => assert_eq!(r, &answers, "eapca_th={eapca_th} sax_th={sax_th} threads={num_threads}"),
                }
            }
        }
    }
    assert!(phases.contains("scan2") && phases.contains("4"), "{phases:?}");
}

#[test]
fn approximate_phase_respects_lmax() {
    let dir = tempfile::tempdir().unwrap();
    let values = random_walks(3_000, N, 51);
    let index = make_index(dir.path(), &values, N, 40, 2);
    let q = &random_walks(1, N, 52);
    let engine = QueryEngine::new(&index, QueryConfig { k: 5, l_max: 1, ..Default::default() }).unwrap();
    let mut frontier = Frontier::default();
    let mut results = ResultSet::new(5);
    let before = index.raw().bytes_read();
    assert_eq!(engine.approx_knn(q, &mut frontier, &mut results).unwrap(), 1);
    let read = index.raw().bytes_read() - before;
    let leaf_bytes: Vec<u64> = index
        .tree()
        .leaves()
        .iter()
        .map(|&l| index.tree().node(l).size * N as u64 * 4)
        .collect();
    assert!(leaf_bytes.contains(&read));
    assert!(!frontier.is_empty());

    // with every leaf allowed and an unprunable bound, phase 1 alone is exact
    let all = index.tree().leaves().len();
    let engine = QueryEngine::new(&index, QueryConfig { k: 5, l_max: all, ..Default::default() }).unwrap();
    let (res, stats) = engine.knn(q).unwrap();
    let got: Vec<f32> = res.neighbors().iter().map(|n| n.dist_sq).collect();
    assert_close(&got, &brute_force(&values, N, q, 5), 1e-3);
    assert!(stats.leaves_visited <= all);
}

#[test]
fn candidate_leaves_are_sound_and_ordered() {
    let dir = tempfile::tempdir().unwrap();
    let values = random_walks(4_000, N, 61);
    let index = make_index(dir.path(), &values, N, 50, 2);
    let engine = QueryEngine::new(&index, QueryConfig { k: 3, l_max: 2, ..Default::default() }).unwrap();
    let lrd = hercules::raw::read_series_file(&index.dir().join("lrd.bin"), N).unwrap();
    for q in noisy_queries(&values, 10, 0.8, 62) {
        let mut frontier = Frontier::default();
        let mut results = ResultSet::new(3);
        engine.approx_knn(&q, &mut frontier, &mut results).unwrap();
        let visited_before: Vec<usize> = Vec::new();
        let bsf = results.bsf();
        let lclist = engine.find_candidate_leaves(&q, &mut frontier, bsf);
        let firsts: Vec<u64> = lclist
            .iter()
            .map(|c| index.tree().node(c.leaf).file_position().unwrap().first)
            .collect();
        assert!(firsts.windows(2).all(|w| w[0] < w[1]));
        // any series strictly closer than the BSF is in a candidate or an already visited leaf
        let visited: std::collections::HashSet<usize> = results.neighbors().iter().map(|n| n.pos as usize).collect();
        let _ = visited_before;
        for (p, s) in lrd.chunks_exact(N).enumerate() {
            let d: f32 = s.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < bsf * 0.999 && !visited.contains(&p) {
                let in_candidate = lclist.iter().any(|c| {
                    let fp = index.tree().node(c.leaf).file_position().unwrap();
                    (fp.first..fp.first + fp.count).contains(&(p as u64))
                });
                assert!(in_candidate, "series {p} at {d} < bsf {bsf} was dismissed");
            }
        }
        // with an infinite BSF nothing is pruned
        let mut f2 = Frontier::default();
        let mut r2 = ResultSet::new(3);
        let engine_all = QueryEngine::new(&index, QueryConfig { k: 3, l_max: 1, ..Default::default() }).unwrap();
        engine_all.approx_knn(&q, &mut f2, &mut r2).unwrap();
        let everything = engine_all.find_candidate_leaves(&q, &mut f2, f32::INFINITY);
        assert_eq!(everything.len(), index.tree().leaves().len() - 1);
    }
}

#[test]
fn candidate_series_independent_of_threads() {
    let dir = tempfile::tempdir().unwrap();
    let values = random_walks(4_000, N, 71);
    let index = make_index(dir.path(), &values, N, 50, 2);
    let q = noisy_queries(&values, 1, 0.5, 72).remove(0);
    let mut sets = Vec::new();
    for threads in [1, 8] {
        let engine = QueryEngine::new(&index, QueryConfig { k: 1, l_max: 1, num_threads: threads, ..Default::default() }).unwrap();
        let mut f = Frontier::default();
        let mut r = ResultSet::new(1);
        engine.approx_knn(&q, &mut f, &mut r).unwrap();
        let lc = engine.find_candidate_leaves(&q, &mut f, r.bsf());
        let sc = engine.find_candidate_series(&q, r.bsf(), &lc).unwrap();
        assert_eq!(sc.len(), threads);
        let mut all: Vec<u64> = sc.iter().flatten().map(|c| c.pos).collect();
        all.sort();
        let before = all.len();
        all.dedup();
        assert_eq!(before, all.len());
        sets.push(all);

        let inf = engine.find_candidate_series(&q, f32::INFINITY, &lc).unwrap();
        let expect: u64 = lc.iter().map(|c| index.tree().node(c.leaf).size).sum();
        assert_eq!(inf.iter().map(Vec::len).sum::<usize>() as u64, expect);
    }
    assert_eq!(sets[0], sets[1]);
}

#[test]
fn skip_scan_skips_pruned_leaves() {
    let dir = tempfile::tempdir().unwrap();
    let values = random_walks(3_000, N, 81);
    let index = make_index(dir.path(), &values, N, 40, 2);
    let engine = QueryEngine::new(&index, QueryConfig { k: 1, l_max: 1, ..Default::default() }).unwrap();
    let q = noisy_queries(&values, 1, 0.1, 82).remove(0);
    let mut f = Frontier::default();
    let mut r = ResultSet::new(1);
    engine.approx_knn(&q, &mut f, &mut r).unwrap();
    let lc = engine.find_candidate_leaves(&q, &mut f, f32::INFINITY);
    let before = index.raw().bytes_read();
    engine.skip_sequential_scan(&q, &lc, &mut r).unwrap();
    let read = index.raw().bytes_read() - before;
    let all: u64 = lc.iter().map(|c| index.tree().node(c.leaf).size * N as u64 * 4).sum();
    assert!(read < all, "scan read every candidate leaf");
    let got: Vec<f32> = r.neighbors().iter().map(|n| n.dist_sq).collect();
    assert_close(&got, &brute_force(&values, N, &q, 1), 1e-3);

    let mut untouched = r.clone();
    engine.skip_sequential_scan(&q, &[], &mut untouched).unwrap();
    assert_eq!(untouched, r);
}

#[test]
fn reload_gives_identical_answers() {
    let dir = tempfile::tempdir().unwrap();
    let values = random_walks(3_000, N, 91);
    let written = make_index(dir.path(), &values, N, 40, 3);
    let loaded = load_index(&dir.path().join("index")).unwrap();
    assert_eq!(written.tree(), loaded.tree());
    assert_eq!(written.settings(), loaded.settings());
    assert_eq!(written.words(), loaded.words());
    let cfg = QueryConfig { k: 10, num_threads: 4, ..Default::default() };
    let a = QueryEngine::new(&written, cfg).unwrap();
    let b = QueryEngine::new(&loaded, cfg).unwrap();
    for q in noisy_queries(&values, 20, 0.4, 92) {
        let (ra, sa) = a.knn(&q).unwrap();
        let (rb, sb) = b.knn(&q).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(sa.phase, sb.phase);
        assert_eq!(sa.bytes_read, sb.bytes_read);
    }
    assert!(Phase::Refine.label() == "4");
}
