//! Exact k-NN search over a written index.
//!
//! A query goes through up to four phases:
//! 1. approximate search: best-first descent by EAPCA lower bound, scanning
//!    at most `l_max` leaves to get a good best-so-far (BSF);
//! 2. leaf filtering: the rest of the frontier is drained into a candidate
//!    leaf list (LCList) of leaves whose bound is below the BSF;
//! 3. series filtering: in parallel, each candidate leaf's series are
//!    checked against the BSF with their iSAX lower bound (SCList);
//! 4. refinement: surviving series are read and compared, in parallel.
//!
//! When a filter prunes too little, the engine instead scans the candidate
//! leaves sequentially in file order.

use std::cmp::Ordering as CmpOrdering;
use std::collections::BinaryHeap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use parking_lot::{Mutex, RwLock};

use crate::error::{Error, Result};
use crate::persist::Index;
use crate::series::sq_dist_bounded;
use crate::summary::{lb_eapca_unchecked, Breakpoints, SaxQueryTable};
use crate::tree::NodeKind;

pub const DEFAULT_L_MAX: usize = 80;
pub const DEFAULT_EAPCA_TH: f64 = 0.25;
pub const DEFAULT_SAX_TH: f64 = 0.50;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryConfig {
    pub k: usize,
    /// Leaves visited at most by the approximate phase.
    pub l_max: usize,
    pub eapca_th: f64,
    pub sax_th: f64,
    pub num_threads: usize,
}

impl Default for QueryConfig {
    fn default() -> Self {
        QueryConfig {
            k: 1,
            l_max: DEFAULT_L_MAX,
            eapca_th: DEFAULT_EAPCA_TH,
            sax_th: DEFAULT_SAX_TH,
            num_threads: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

impl QueryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.l_max == 0 || self.num_threads == 0 {
            return Err(Error::Config(format!("k, l_max and num_threads must be at least 1: {self:?}")));
        }
        for (name, v) in [("eapca_th", self.eapca_th), ("sax_th", self.sax_th)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

/// One answer: squared Euclidean distance and series position in `lrd.bin`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub dist_sq: f32,
    pub pos: u64,
}

impl Neighbor {
    pub fn distance(&self) -> f32 {
        self.dist_sq.sqrt()
    }
}

/// The k best answers found so far, ascending by distance.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultSet {
    k: usize,
    entries: Vec<Neighbor>,
}

impl ResultSet {
    pub fn new(k: usize) -> Self {
        ResultSet {
            k,
            entries: Vec::with_capacity(k + 1),
        }
    }

    /// Squared distance of the k-th answer; infinite until k answers exist.
    pub fn bsf(&self) -> f32 {
        if self.entries.len() < self.k {
            f32::INFINITY
        } else {
            self.entries[self.k - 1].dist_sq
        }
    }

    /// Inserts if strictly better than the BSF. Among equal distances the
    /// earlier entry stays first.
    pub fn insert(&mut self, dist_sq: f32, pos: u64) -> bool {
        if !(dist_sq < self.bsf()) {
            return false;
        }
        let at = self.entries.partition_point(|e| e.dist_sq <= dist_sq);
        self.entries.insert(at, Neighbor { dist_sq, pos });
        self.entries.truncate(self.k);
        true
    }

    pub fn neighbors(&self) -> &[Neighbor] {
        &self.entries
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Euclidean (not squared) distances, ascending.
    pub fn distances(&self) -> Vec<f32> {
        self.entries.iter().map(Neighbor::distance).collect()
    }
}

/// Where a query's answer was completed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Nothing left after the approximate search.
    Approximate,
    /// Leaf filtering left no candidates.
    LeafFilter,
    SeriesFilter,
    Refine,
    /// Sequential scan after leaf filtering pruned too little.
    Scan2,
    /// Sequential scan after series filtering pruned too little.
    Scan3,
}

impl Phase {
    pub fn label(self) -> &'static str {
        match self {
            Phase::Approximate => "1",
            Phase::LeafFilter => "2",
            Phase::SeriesFilter => "3",
            Phase::Refine => "4",
            Phase::Scan2 => "scan2",
            Phase::Scan3 => "scan3",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryStats {
    pub phase: Phase,
    pub leaves_visited: usize,
    pub candidate_leaves: usize,
    pub candidate_series: usize,
    /// `1 - |LCList| / leaves`; 1 when not computed.
    pub eapca_pr: f64,
    /// `1 - |SCList| / series`; `None` when phase 3 was not reached.
    pub sax_pr: Option<f64>,
    pub bytes_read: u64,
    /// Fraction of `lrd.bin` read.
    pub fraction_accessed: f64,
    pub wall_secs: f64,
    pub input_secs: f64,
}

impl QueryStats {
    pub fn cpu_secs(&self) -> f64 {
        (self.wall_secs - self.input_secs).max(0.0)
    }
}

/// Priority-queue entry ordered by ascending bound, FIFO among equal bounds.
#[derive(Debug, Clone, Copy)]
struct Pending {
    lb: f64,
    seq: u64,
    node: usize,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == CmpOrdering::Equal
    }
}

impl Eq for Pending {}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<CmpOrdering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pending {
    fn cmp(&self, other: &Self) -> CmpOrdering {
        other
            .lb
            .total_cmp(&self.lb)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// The best-first search frontier shared by phases 1 and 2.
#[derive(Debug, Default)]
pub struct Frontier {
    heap: BinaryHeap<Pending>,
    seq: u64,
}

impl Frontier {
    fn push(&mut self, node: usize, lb: f64) {
        self.heap.push(Pending { lb, seq: self.seq, node });
        self.seq += 1;
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

/// A candidate leaf and its EAPCA bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateLeaf {
    pub leaf: usize,
    pub lb: f64,
}

/// A candidate series and its iSAX bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateSeries {
    pub pos: u64,
    pub lb: f64,
}

/// Answers queries against one index with a persistent worker pool.
/// Queries on one engine should run one at a time: I/O statistics are
/// taken from the index's shared counters.
pub struct QueryEngine<'a> {
    index: &'a Index,
    cfg: QueryConfig,
    bp: Breakpoints,
    pool: rayon::ThreadPool,
}

impl<'a> QueryEngine<'a> {
    pub fn new(index: &'a Index, cfg: QueryConfig) -> Result<Self> {
        cfg.validate()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.num_threads)
            .thread_name(|i| format!("hercules-query-{i}"))
            .build()
            .map_err(|e| Error::Config(format!("cannot start query pool: {e}")))?;
        Ok(QueryEngine {
            index,
            cfg,
            bp: Breakpoints::normal(index.settings().alphabet)?,
            pool,
        })
    }

    pub fn config(&self) -> &QueryConfig {
        &self.cfg
    }

    fn check_query(&self, query: &[f32]) -> Result<()> {
        let n = self.index.settings().series_len;
        if query.len() != n {
            return Err(Error::Contract(format!("query has {} points, index series have {n}", query.len())));
        }
        if let Some(i) = query.iter().position(|v| !v.is_finite()) {
            return Err(Error::Contract(format!("query point {i} is not finite")));
        }
        Ok(())
    }

    fn node_lb(&self, query: &[f32], node: usize) -> f64 {
        let nd = self.index.tree().node(node);
        lb_eapca_unchecked(query, &nd.segmentation, &nd.synopsis)
    }

    /// Exact k nearest neighbors of `query` (which must be z-normalized like the data).
    pub fn knn(&self, query: &[f32]) -> Result<(ResultSet, QueryStats)> {
        self.check_query(query)?;
        let start = Instant::now();
        let raw = self.index.raw();
        let (bytes0, nanos0) = (raw.bytes_read(), raw.read_nanos());

        let mut results = ResultSet::new(self.cfg.k);
        let mut frontier = Frontier::default();
        let leaves_visited = self.approx_knn(query, &mut frontier, &mut results)?;
        let mut stats = QueryStats {
            phase: Phase::Approximate,
            leaves_visited,
            candidate_leaves: 0,
            candidate_series: 0,
            eapca_pr: 1.0,
            sax_pr: None,
            bytes_read: 0,
            fraction_accessed: 0.0,
            wall_secs: 0.0,
            input_secs: 0.0,
        };

        if !frontier.is_empty() {
            let lclist = self.find_candidate_leaves(query, &mut frontier, results.bsf());
            let total_leaves = self.index.tree().leaves().len();
            stats.phase = Phase::LeafFilter;
            stats.candidate_leaves = lclist.len();
            stats.eapca_pr = 1.0 - lclist.len() as f64 / total_leaves as f64;
            if !lclist.is_empty() {
                if stats.eapca_pr < self.cfg.eapca_th {
                    stats.phase = Phase::Scan2;
                    self.skip_sequential_scan(query, &lclist, &mut results)?;
                } else {
                    let sclist = self.find_candidate_series(query, results.bsf(), &lclist)?;
                    let count: usize = sclist.iter().map(Vec::len).sum();
                    let sax_pr = 1.0 - count as f64 / self.index.num_series() as f64;
                    stats.candidate_series = count;
                    stats.sax_pr = Some(sax_pr);
                    stats.phase = Phase::SeriesFilter;
                    if sax_pr < self.cfg.sax_th {
                        stats.phase = Phase::Scan3;
                        self.skip_sequential_scan(query, &lclist, &mut results)?;
                    } else if count > 0 {
                        stats.phase = Phase::Refine;
                        results = self.compute_results(query, results, &sclist)?;
                    }
                }
            }
        }

        stats.bytes_read = raw.bytes_read() - bytes0;
        let total = self.index.settings().lrd_bytes();
        stats.fraction_accessed = if total == 0 { 0.0 } else { stats.bytes_read as f64 / total as f64 };
        stats.input_secs = (raw.read_nanos() - nanos0) as f64 * 1e-9;
        stats.wall_secs = start.elapsed().as_secs_f64();
        Ok((results, stats))
    }

    fn scan_slice(&self, query: &[f32], first: u64, members: &[f32], results: &mut ResultSet) {
        let n = query.len();
        for (i, s) in members.chunks_exact(n).enumerate() {
            if let Some(d) = sq_dist_bounded(query, s, results.bsf()) {
                results.insert(d, first + i as u64);
            }
        }
    }

    /// Phase 1. Visits at most `l_max` leaves best-first; stops early once the
    /// smallest pending bound exceeds the BSF. Returns the number of leaves visited.
    pub fn approx_knn(&self, query: &[f32], frontier: &mut Frontier, results: &mut ResultSet) -> Result<usize> {
        self.check_query(query)?;
        let tree = self.index.tree();
        frontier.push(tree.root(), self.node_lb(query, tree.root()));
        let mut visited = 0;
        let mut buf = Vec::new();
        while visited < self.cfg.l_max {
            let Some(top) = frontier.heap.pop() else { break };
            if top.lb > results.bsf() as f64 {
                break;
            }
            match tree.node(top.node).kind {
                NodeKind::Leaf(pos) => {
                    self.index.raw().read_range(pos.first, pos.count, &mut buf)?;
                    self.scan_slice(query, pos.first, &buf, results);
                    visited += 1;
                }
                NodeKind::Internal { left, right, .. } => {
                    for child in [left, right] {
                        let lb = self.node_lb(query, child);
                        if lb < results.bsf() as f64 {
                            frontier.push(child, lb);
                        }
                    }
                }
            }
        }
        Ok(visited)
    }

    /// Phase 2. Drains the frontier with the BSF fixed and returns the
    /// surviving leaves sorted by file position.
    pub fn find_candidate_leaves(&self, query: &[f32], frontier: &mut Frontier, bsf: f32) -> Vec<CandidateLeaf> {
        let tree = self.index.tree();
        let bsf = bsf as f64;
        let mut out = Vec::new();
        while let Some(top) = frontier.heap.pop() {
            if top.lb > bsf {
                break;
            }
            match tree.node(top.node).kind {
                NodeKind::Leaf(_) => out.push(CandidateLeaf {
                    leaf: top.node,
                    lb: top.lb,
                }),
                NodeKind::Internal { left, right, .. } => {
                    for child in [left, right] {
                        let lb = self.node_lb(query, child);
                        if lb < bsf {
                            frontier.push(child, lb);
                        }
                    }
                }
            }
        }
        out.sort_by_key(|c| tree.node(c.leaf).file_position().map(|p| p.first));
        out
    }

    /// Phase 3. Workers claim candidate leaves and keep the series whose iSAX
    /// bound is below `bsf`. Returns one list per worker.
    pub fn find_candidate_series(&self, query: &[f32], bsf: f32, lclist: &[CandidateLeaf]) -> Result<Vec<Vec<CandidateSeries>>> {
        self.check_query(query)?;
        let l = self.index.settings().isax_segments;
        let table = SaxQueryTable::new(query, l, &self.bp)?;
        let tree = self.index.tree();
        let next = AtomicUsize::new(0);
        let bsf = bsf as f64;
        Ok(self.pool.broadcast(|_| {
            let mut local = Vec::new();
            loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(c) = lclist.get(i) else { break };
                let pos = tree.node(c.leaf).file_position().expect("candidate is a leaf");
                for p in pos.first..pos.first + pos.count {
                    let lb = table.lower_bound(self.index.word(p));
                    if lb < bsf {
                        local.push(CandidateSeries { pos: p, lb });
                    }
                }
            }
            local
        }))
    }

    /// Phase 4. Each worker refines its own candidate list against the shared,
    /// improving BSF.
    pub fn compute_results(&self, query: &[f32], results: ResultSet, sclist: &[Vec<CandidateSeries>]) -> Result<ResultSet> {
        self.check_query(query)?;
        let shared = RwLock::new(results);
        let error = Mutex::new(None);
        let next = AtomicUsize::new(0);
        self.pool.broadcast(|_| {
            let mut buf = Vec::new();
            loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(list) = sclist.get(i) else { break };
                for c in list {
                    let bsf = shared.read().bsf();
                    if !(c.lb < bsf as f64) {
                        continue;
                    }
                    if let Err(e) = self.index.raw().read_range(c.pos, 1, &mut buf) {
                        error.lock().get_or_insert(e);
                        return;
                    }
                    if let Some(d) = sq_dist_bounded(query, &buf, bsf) {
                        shared.write().insert(d, c.pos);
                    }
                }
            }
        });
        if let Some(e) = error.into_inner() {
            return Err(e);
        }
        Ok(shared.into_inner())
    }

    /// Reads candidate leaves in file order, skipping those whose bound is
    /// no longer below the BSF.
    pub fn skip_sequential_scan(&self, query: &[f32], lclist: &[CandidateLeaf], results: &mut ResultSet) -> Result<()> {
        self.check_query(query)?;
        let tree = self.index.tree();
        let mut buf = Vec::new();
        for c in lclist {
            if c.lb >= results.bsf() as f64 {
                continue;
            }
            let pos = tree.node(c.leaf).file_position().expect("candidate is a leaf");
            self.index.raw().read_range(pos.first, pos.count, &mut buf)?;
            self.scan_slice(query, pos.first, &buf, results);
        }
        Ok(())
    }
}
