//! Parallel index construction.
//!
//! One coordinator thread streams the dataset through a two-slot read buffer
//! (`DBuffer`). Insert workers claim series from the slot the coordinator is
//! not filling with a fetch-add cursor, route them to a leaf and copy the raw
//! points into their own region of a preallocated store (`HBuffer`); leaves
//! only keep handles into it (`SBuffer`). Rounds are separated by a barrier.
//! After each round worker 0 acts as flush coordinator: when its region or
//! enough other regions are full, every leaf's in-memory series are appended
//! to that leaf's spill file and all regions are reset.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU32, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Barrier, OnceLock};
use std::thread;
use std::time::{SystemTime, UNIX_EPOCH};

use parking_lot::{Mutex, MutexGuard, RwLock};

use crate::error::{Error, Result};
use crate::persist::IndexSettings;
use crate::raw::{self, SeriesReader};
use crate::sync::spin_until;
use crate::tree::{best_split_policy, split_node, Segmentation, SplitPolicy, Synopsis};

/// Paper-scale read-buffer size, used as-is for datasets of a million series or more.
pub const FULL_SCALE_DB_SIZE: usize = 120_000;
pub const DEFAULT_BUSY_WAIT: u32 = 1000;

/// Tunables of a build run.
#[derive(Debug, Clone)]
pub struct BuildConfig {
    /// Total threads: one read coordinator plus `num_threads - 1` insert workers.
    pub num_threads: usize,
    /// Series per read-buffer slot.
    pub db_size: usize,
    /// Total HBuffer capacity in series, split evenly among insert workers.
    pub hbuffer_series: usize,
    /// Number of full worker regions that triggers a flush.
    pub flush_threshold: usize,
    /// Parent directory for the build's spill files.
    pub scratch_dir: PathBuf,
    pub busy_wait: u32,
    /// Record per-series claims in the [`BuildReport`] (test instrumentation).
    pub record_claims: bool,
}

impl BuildConfig {
    /// Defaults for a dataset of `dataset_size` series: read-buffer slots scaled
    /// down from 120K proportionally below a million series and an HBuffer able
    /// to hold the whole dataset.
    pub fn for_dataset(dataset_size: usize, num_threads: usize, scratch_dir: impl Into<PathBuf>) -> Self {
        let db_size = default_db_size(dataset_size);
        let workers = num_threads.saturating_sub(1).max(1);
        BuildConfig {
            num_threads,
            db_size,
            hbuffer_series: dataset_size.max(db_size * workers),
            flush_threshold: workers.div_ceil(2),
            scratch_dir: scratch_dir.into(),
            busy_wait: DEFAULT_BUSY_WAIT,
            record_claims: false,
        }
    }

    pub fn insert_workers(&self) -> usize {
        self.num_threads.saturating_sub(1)
    }

    pub fn region_capacity(&self) -> usize {
        self.hbuffer_series / self.insert_workers().max(1)
    }

    fn validate(&self) -> Result<()> {
        if self.num_threads < 2 {
            return Err(Error::Config(format!(
                "need at least 2 threads (coordinator + insert worker), got {}",
                self.num_threads
            )));
        }
        if self.db_size == 0 {
            return Err(Error::Config("read-buffer size must be positive".into()));
        }
        if self.region_capacity() < self.db_size {
            return Err(Error::Config(format!(
                "HBuffer region of {} series cannot hold one read-buffer slot of {} series",
                self.region_capacity(),
                self.db_size
            )));
        }
        if self.flush_threshold == 0 {
            return Err(Error::Config("flush threshold must be at least 1".into()));
        }
        Ok(())
    }
}

pub fn default_db_size(dataset_size: usize) -> usize {
    let scaled = FULL_SCALE_DB_SIZE as u128 * dataset_size.min(1_000_000) as u128 / 1_000_000;
    (scaled as usize).max(1)
}

/// A series claimed from the read buffer, for claim audits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Claim {
    pub round: usize,
    pub worker: usize,
    pub pos: usize,
}

/// What happened during a build.
#[derive(Debug, Clone, Default)]
pub struct BuildReport {
    pub rounds: usize,
    pub flushes: usize,
    /// `FlushCounter` value seen by the coordinator in each round.
    pub flush_counters: Vec<usize>,
    /// HBuffer writes observed while a flush was in progress (must stay 0).
    pub writes_during_flush: usize,
    pub splits: usize,
    pub claims: Vec<Claim>,
}

/// Reference to one series stored in an HBuffer region.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeriesHandle {
    pub worker: u32,
    pub slot: u32,
}

/// One insert worker's private store. Points are held as `f32` bits in
/// relaxed atomics: only the owner writes, and readers on other threads
/// obtain handles through a leaf lock, which orders the accesses.
struct Region {
    data: Box<[AtomicU32]>,
    fill: AtomicUsize,
    capacity: usize,
}

impl Region {
    fn new(capacity: usize, n: usize) -> Self {
        Region {
            data: (0..capacity * n).map(|_| AtomicU32::new(0)).collect(),
            fill: AtomicUsize::new(0),
            capacity,
        }
    }

    fn free(&self) -> usize {
        self.capacity - self.fill.load(Ordering::Relaxed)
    }

    fn push(&self, series: &[f32]) -> u32 {
        let slot = self.fill.load(Ordering::Relaxed);
        assert!(slot < self.capacity, "HBuffer region overflow");
        let n = series.len();
        for (cell, &v) in self.data[slot * n..(slot + 1) * n].iter().zip(series) {
            cell.store(v.to_bits(), Ordering::Relaxed);
        }
        self.fill.store(slot + 1, Ordering::Relaxed);
        slot as u32
    }

    fn read(&self, slot: u32, n: usize, out: &mut Vec<f32>) {
        let base = slot as usize * n;
        out.extend(
            self.data[base..base + n]
                .iter()
                .map(|c| f32::from_bits(c.load(Ordering::Relaxed))),
        );
    }
}

struct HBuffer {
    n: usize,
    regions: Vec<Region>,
}

impl HBuffer {
    fn read(&self, h: SeriesHandle, out: &mut Vec<f32>) {
        self.regions[h.worker as usize].read(h.slot, self.n, out);
    }
}

struct LeafState {
    synopsis: Synopsis,
    size: usize,
    /// In-memory members (the leaf's SBuffer).
    sbuffer: Vec<SeriesHandle>,
    /// Members already appended to this node's spill file.
    spilled: usize,
}

struct Children {
    policy: SplitPolicy,
    left: Arc<BuildNode>,
    right: Arc<BuildNode>,
}

/// A construction-time tree node. It stays a leaf until `children` is set,
/// which happens exactly once, under `state`'s lock, at the end of a split.
pub(crate) struct BuildNode {
    id: u64,
    segmentation: Segmentation,
    state: Mutex<LeafState>,
    children: OnceLock<Children>,
}

impl BuildNode {
    fn leaf(id: u64, segmentation: Segmentation, synopsis: Synopsis, size: usize, sbuffer: Vec<SeriesHandle>, spilled: usize) -> Self {
        BuildNode {
            id,
            segmentation,
            state: Mutex::new(LeafState {
                synopsis,
                size,
                sbuffer,
                spilled,
            }),
            children: OnceLock::new(),
        }
    }

    fn is_leaf(&self) -> bool {
        self.children.get().is_none()
    }
}

/// Follows split policies from `start` to the leaf `series` belongs in.
fn route_to_leaf(start: &Arc<BuildNode>, series: &[f32]) -> Arc<BuildNode> {
    let mut node = Arc::clone(start);
    while let Some(ch) = node.children.get() {
        let next = if ch.policy.goes_left(&node.segmentation, series) {
            &ch.left
        } else {
            &ch.right
        };
        node = Arc::clone(next);
    }
    node
}

/// Index-wide state shared by all construction threads.
struct Shared {
    n: usize,
    leaf_threshold: usize,
    root: Arc<BuildNode>,
    hbuffer: HBuffer,
    spill_dir: PathBuf,
    next_id: AtomicU64,
    splits: AtomicUsize,
    flushing: AtomicBool,
    writes_during_flush: AtomicUsize,
}

/// A leaf's members gathered for a split: raw values plus where each came from.
struct Members {
    values: Vec<f32>,
    memory: Vec<Option<SeriesHandle>>,
}

impl Shared {
    fn new(n: usize, leaf_threshold: usize, regions: usize, region_capacity: usize, spill_dir: PathBuf) -> Self {
        Shared {
            n,
            leaf_threshold,
            root: Arc::new(BuildNode::leaf(0, Segmentation::whole(n), Synopsis::empty(1), 0, Vec::new(), 0)),
            hbuffer: HBuffer {
                n,
                regions: (0..regions).map(|_| Region::new(region_capacity, n)).collect(),
            },
            spill_dir,
            next_id: AtomicU64::new(1),
            splits: AtomicUsize::new(0),
            flushing: AtomicBool::new(false),
            writes_during_flush: AtomicUsize::new(0),
        }
    }

    fn spill_path(&self, id: u64) -> PathBuf {
        spill_path(&self.spill_dir, id)
    }

    /// Inserts one series on behalf of `worker`: route, lock, re-route while
    /// the locked node turned internal, append, and split once over capacity.
    fn insert(&self, worker: usize, series: &[f32]) -> Result<()> {
        let mut node = route_to_leaf(&self.root, series);
        loop {
            let mut guard = node.state.lock();
            if !node.is_leaf() {
                drop(guard);
                node = route_to_leaf(&node, series);
                continue;
            }
            guard.synopsis.widen_with_series(&node.segmentation, series);
            guard.size += 1;
            if self.flushing.load(Ordering::Relaxed) {
                self.writes_during_flush.fetch_add(1, Ordering::Relaxed);
            }
            let slot = self.hbuffer.regions[worker].push(series);
            guard.sbuffer.push(SeriesHandle {
                worker: worker as u32,
                slot,
            });
            if guard.size > self.leaf_threshold {
                self.split_leaf(&node, &mut guard)?;
            }
            return Ok(());
        }
    }

    fn gather_members(&self, node: &BuildNode, state: &LeafState) -> Result<Members> {
        let n = self.n;
        let mut values = Vec::with_capacity(state.size * n);
        let mut memory = Vec::with_capacity(state.size);
        if state.spilled > 0 {
            let path = self.spill_path(node.id);
            let disk = raw::read_series_file(&path, n)?;
            if disk.len() != state.spilled * n {
                return Err(Error::integrity(
                    path.display().to_string(),
                    format!("expected {} spilled series, found {}", state.spilled, disk.len() / n),
                ));
            }
            values.extend_from_slice(&disk);
            memory.extend(std::iter::repeat_n(None, state.spilled));
        }
        for &h in &state.sbuffer {
            self.hbuffer.read(h, &mut values);
            memory.push(Some(h));
        }
        Ok(Members { values, memory })
    }

    /// Splits a leaf that exceeded capacity. Children that still exceed it are
    /// split again as long as the chosen policy separates their members.
    fn split_leaf(&self, node: &Arc<BuildNode>, state: &mut MutexGuard<'_, LeafState>) -> Result<()> {
        let members = self.gather_members(node, state)?;
        let all: Vec<usize> = (0..members.memory.len()).collect();
        let (policy, left, right) = self
            .partition(&node.segmentation, &members, &all, true)?
            .expect("forced split");
        if state.spilled > 0 {
            let path = self.spill_path(node.id);
            fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
        }
        state.sbuffer = Vec::new();
        state.spilled = 0;
        node.children
            .set(Children { policy, left, right })
            .unwrap_or_else(|_| unreachable!("split of an internal node"));
        Ok(())
    }

    /// Chooses a policy for `ids` and partitions them. Returns `None` when the
    /// policy leaves one side empty and `allow_degenerate` is false.
    fn partition(
        &self,
        seg: &Segmentation,
        members: &Members,
        ids: &[usize],
        allow_degenerate: bool,
    ) -> Result<Option<(SplitPolicy, Arc<BuildNode>, Arc<BuildNode>)>> {
        let n = self.n;
        let refs: Vec<&[f32]> = ids.iter().map(|&k| &members.values[k * n..(k + 1) * n]).collect();
        let policy = best_split_policy(seg, &refs).policy;
        let out = split_node(seg, &policy, &refs)?;
        if !allow_degenerate && (out.left.members.is_empty() || out.right.members.is_empty()) {
            return Ok(None);
        }
        self.splits.fetch_add(1, Ordering::Relaxed);
        let left_ids: Vec<usize> = out.left.members.iter().map(|&i| ids[i]).collect();
        let right_ids: Vec<usize> = out.right.members.iter().map(|&i| ids[i]).collect();
        let left = self.make_subtree(&out.segmentation, out.left.synopsis, members, &left_ids)?;
        let right = self.make_subtree(&out.segmentation, out.right.synopsis, members, &right_ids)?;
        Ok(Some((policy, left, right)))
    }

    fn make_subtree(&self, seg: &Segmentation, synopsis: Synopsis, members: &Members, ids: &[usize]) -> Result<Arc<BuildNode>> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        // Members a policy cannot separate stay together in one oversized leaf.
        if ids.len() > self.leaf_threshold {
            if let Some((policy, left, right)) = self.partition(seg, members, ids, false)? {
                let node = BuildNode::leaf(id, seg.clone(), synopsis, ids.len(), Vec::new(), 0);
                node.children
                    .set(Children { policy, left, right })
                    .unwrap_or_else(|_| unreachable!());
                return Ok(Arc::new(node));
            }
        }
        let mut sbuffer = Vec::new();
        let mut spilled = Vec::new();
        for &k in ids {
            match members.memory[k] {
                Some(h) => sbuffer.push(h),
                None => spilled.extend_from_slice(&members.values[k * self.n..(k + 1) * self.n]),
            }
        }
        let spill_count = spilled.len() / self.n;
        if spill_count > 0 {
            append_spill(&self.spill_path(id), &spilled)?;
        }
        Ok(Arc::new(BuildNode::leaf(id, seg.clone(), synopsis, ids.len(), sbuffer, spill_count)))
    }

    /// Appends every leaf's in-memory series to its spill file and resets all
    /// SBuffers and HBuffer regions. Callers guarantee no concurrent inserts.
    fn flush_all(&self) -> Result<()> {
        let mut scratch = Vec::new();
        let mut first_err = None;
        for_each_leaf(&self.root, &mut |leaf| {
            if first_err.is_some() {
                return;
            }
            let mut st = leaf.state.lock();
            if st.sbuffer.is_empty() {
                return;
            }
            scratch.clear();
            for &h in &st.sbuffer {
                self.hbuffer.read(h, &mut scratch);
            }
            match append_spill(&self.spill_path(leaf.id), &scratch) {
                Ok(()) => {
                    st.spilled += st.sbuffer.len();
                    st.sbuffer.clear();
                }
                Err(e) => first_err = Some(e),
            }
        });
        if let Some(e) = first_err {
            return Err(e);
        }
        for r in &self.hbuffer.regions {
            r.fill.store(0, Ordering::Relaxed);
        }
        Ok(())
    }
}

fn spill_path(dir: &Path, id: u64) -> PathBuf {
    dir.join(format!("leaf_{id}.bin"))
}

fn append_spill(path: &Path, values: &[f32]) -> Result<()> {
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    raw::write_f32s(&mut w, values).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn for_each_leaf(root: &Arc<BuildNode>, f: &mut impl FnMut(&Arc<BuildNode>)) {
    let mut stack = vec![Arc::clone(root)];
    while let Some(node) = stack.pop() {
        match node.children.get() {
            Some(ch) => {
                stack.push(Arc::clone(&ch.right));
                stack.push(Arc::clone(&ch.left));
            }
            None => f(&node),
        }
    }
}

/// Synchronization state of the read/insert/flush rounds.
struct Rounds {
    dbuffer: [RwLock<Vec<f32>>; 2],
    db_size: [AtomicUsize; 2],
    db_counter: [AtomicUsize; 2],
    finished: [AtomicBool; 2],
    d_barrier: Barrier,
    continue_barrier: Barrier,
    flush_barrier: Barrier,
    flush_counter: AtomicUsize,
    flush_order: AtomicBool,
    handshakes: Vec<AtomicBool>,
    abort: AtomicBool,
    error: Mutex<Option<Error>>,
    flushes: AtomicUsize,
    flush_counters: Mutex<Vec<usize>>,
    claims: Option<Mutex<Vec<Claim>>>,
}

impl Rounds {
    fn fail(&self, e: Error) {
        self.abort.store(true, Ordering::SeqCst);
        let mut slot = self.error.lock();
        if slot.is_none() {
            *slot = Some(e);
        }
    }
}

/// An index whose tree is complete but whose data still lives in HBuffer
/// regions and per-leaf spill files. Pass it to [`crate::persist::write_index`].
pub struct BuiltIndex {
    pub(crate) settings: IndexSettings,
    shared: Shared,
    report: BuildReport,
    scratch: PathBuf,
}

/// Per-leaf view of a built (not yet written) index.
#[derive(Debug, Clone)]
pub struct LeafSnapshot {
    pub id: u64,
    pub segmentation: Segmentation,
    pub synopsis: Synopsis,
    pub size: usize,
    /// Members as `size * n` values, spilled ones first.
    pub members: Vec<f32>,
}

/// Builds the in-memory index from a raw dataset file (Algorithms 1-5).
pub fn build_index(dataset: &Path, settings: IndexSettings, config: &BuildConfig) -> Result<BuiltIndex> {
    settings.validate()?;
    config.validate()?;
    let n = settings.series_len;
    let mut reader = SeriesReader::open(dataset, n)?;
    let total = reader.remaining();
    if total == 0 {
        return Err(Error::Config(format!("{} holds no series", dataset.display())));
    }
    let settings = IndexSettings {
        dataset_size: total as u64,
        ..settings
    };

    let scratch = make_scratch_dir(&config.scratch_dir)?;
    let workers = config.insert_workers();
    let shared = Shared::new(n, settings.leaf_threshold, workers, config.region_capacity(), scratch.clone());
    let rounds = Rounds {
        dbuffer: [RwLock::new(Vec::new()), RwLock::new(Vec::new())],
        db_size: [AtomicUsize::new(0), AtomicUsize::new(0)],
        db_counter: [AtomicUsize::new(0), AtomicUsize::new(0)],
        finished: [AtomicBool::new(false), AtomicBool::new(false)],
        d_barrier: Barrier::new(workers + 1),
        continue_barrier: Barrier::new(workers),
        flush_barrier: Barrier::new(workers),
        flush_counter: AtomicUsize::new(0),
        flush_order: AtomicBool::new(false),
        handshakes: (0..workers).map(|_| AtomicBool::new(false)).collect(),
        abort: AtomicBool::new(false),
        error: Mutex::new(None),
        flushes: AtomicUsize::new(0),
        flush_counters: Mutex::new(Vec::new()),
        claims: config.record_claims.then(|| Mutex::new(Vec::new())),
    };

    let mut round_count = 0;
    thread::scope(|scope| {
        let mut toggle = 0;
        let first = config.db_size.min(total);
        rounds.db_size[toggle].store(first, Ordering::SeqCst);
        if let Err(e) = reader.read_chunk(first, &mut rounds.dbuffer[toggle].write()) {
            rounds.fail(Error::io(dataset, e));
        }
        toggle = 1 - toggle;

        for id in 0..workers {
            let (shared, rounds) = (&shared, &rounds);
            scope.spawn(move || insert_worker(shared, rounds, config, id));
        }

        let mut i = first;
        while i < total && !rounds.abort.load(Ordering::SeqCst) {
            let size = config.db_size.min(total - i);
            rounds.db_size[toggle].store(size, Ordering::SeqCst);
            if let Err(e) = reader.read_chunk(size, &mut rounds.dbuffer[toggle].write()) {
                rounds.fail(Error::io(dataset, e));
            }
            rounds.db_counter[toggle].store(0, Ordering::SeqCst);
            toggle = 1 - toggle;
            rounds.d_barrier.wait();
            round_count += 1;
            i += size;
        }
        rounds.finished[toggle].store(true, Ordering::SeqCst);
        rounds.d_barrier.wait();
        round_count += 1;
    });

    if let Some(e) = rounds.error.lock().take() {
        let _ = fs::remove_dir_all(&scratch);
        return Err(e);
    }

    let mut claims = rounds.claims.map(|c| c.into_inner()).unwrap_or_default();
    claims.sort();
    let report = BuildReport {
        rounds: round_count,
        flushes: rounds.flushes.load(Ordering::SeqCst),
        flush_counters: rounds.flush_counters.into_inner(),
        writes_during_flush: shared.writes_during_flush.load(Ordering::SeqCst),
        splits: shared.splits.load(Ordering::SeqCst),
        claims,
    };
    Ok(BuiltIndex {
        settings,
        shared,
        report,
        scratch,
    })
}

fn make_scratch_dir(parent: &Path) -> Result<PathBuf> {
    static SEQ: AtomicU64 = AtomicU64::new(0);
    fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    let stamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_nanos())
        .unwrap_or(0);
    let dir = parent.join(format!(
        "hercules-build-{}-{stamp}-{}",
        std::process::id(),
        SEQ.fetch_add(1, Ordering::Relaxed)
    ));
    fs::create_dir(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

/// InsertWorker (Algorithm 2).
fn insert_worker(shared: &Shared, rounds: &Rounds, config: &BuildConfig, id: usize) {
    let n = shared.n;
    let region = &shared.hbuffer.regions[id];
    let mut toggle = 0;
    let mut round = 0;
    while !rounds.finished[toggle].load(Ordering::SeqCst) {
        let size = rounds.db_size[toggle].load(Ordering::SeqCst);
        if region.free() >= size && !rounds.abort.load(Ordering::Relaxed) {
            let slot = rounds.dbuffer[toggle].read();
            loop {
                let pos = rounds.db_counter[toggle].fetch_add(1, Ordering::SeqCst);
                if pos >= size {
                    break;
                }
                if let Some(c) = &rounds.claims {
                    c.lock().push(Claim { round, worker: id, pos });
                }
                if let Err(e) = shared.insert(id, &slot[pos * n..(pos + 1) * n]) {
                    rounds.fail(e);
                    break;
                }
            }
        }
        rounds.d_barrier.wait();
        if id == 0 {
            flush_coordinator(shared, rounds, config);
        } else {
            flush_worker(shared, rounds, config, id);
        }
        toggle = 1 - toggle;
        round += 1;
    }
}

/// FlushCoordinator (Algorithm 3), run by worker 0 after each round.
fn flush_coordinator(shared: &Shared, rounds: &Rounds, config: &BuildConfig) {
    rounds.handshakes[0].store(true, Ordering::SeqCst);
    for hs in &rounds.handshakes {
        spin_until(config.busy_wait, || hs.load(Ordering::SeqCst));
    }
    let counter = rounds.flush_counter.load(Ordering::SeqCst);
    rounds.flush_counters.lock().push(counter);
    let own_full = shared.hbuffer.regions[0].free() < config.db_size;
    if own_full || counter >= config.flush_threshold {
        rounds.flush_order.store(true, Ordering::SeqCst);
    }
    rounds.flush_counter.store(0, Ordering::SeqCst);
    rounds.continue_barrier.wait();
    rounds.handshakes[0].store(false, Ordering::SeqCst);
    if rounds.flush_order.load(Ordering::SeqCst) {
        shared.flushing.store(true, Ordering::SeqCst);
        if let Err(e) = shared.flush_all() {
            rounds.fail(e);
        }
        shared.flushing.store(false, Ordering::SeqCst);
        rounds.flushes.fetch_add(1, Ordering::SeqCst);
        rounds.flush_barrier.wait();
        // Cleared only once every worker has read it and reached the barrier.
        rounds.flush_order.store(false, Ordering::SeqCst);
    }
}

/// FlushWorker (Algorithm 4).
fn flush_worker(shared: &Shared, rounds: &Rounds, config: &BuildConfig, id: usize) {
    if shared.hbuffer.regions[id].free() < config.db_size {
        rounds.flush_counter.fetch_add(1, Ordering::SeqCst);
    }
    rounds.handshakes[id].store(true, Ordering::SeqCst);
    rounds.continue_barrier.wait();
    rounds.handshakes[id].store(false, Ordering::SeqCst);
    if rounds.flush_order.load(Ordering::SeqCst) {
        rounds.flush_barrier.wait();
    }
}

impl BuiltIndex {
    pub fn settings(&self) -> &IndexSettings {
        &self.settings
    }

    pub fn report(&self) -> &BuildReport {
        &self.report
    }

    pub fn num_leaves(&self) -> usize {
        let mut count = 0;
        for_each_leaf(&self.shared.root, &mut |_| count += 1);
        count
    }

    /// Snapshot of every leaf in inorder, with members read back from
    /// memory and spill files.
    pub fn leaf_snapshots(&self) -> Result<Vec<LeafSnapshot>> {
        let mut leaves = Vec::new();
        for_each_leaf(&self.shared.root, &mut |l| leaves.push(Arc::clone(l)));
        leaves
            .iter()
            .map(|l| {
                let st = l.state.lock();
                let members = self.shared.gather_members(l, &st)?.values;
                Ok(LeafSnapshot {
                    id: l.id,
                    segmentation: l.segmentation.clone(),
                    synopsis: st.synopsis.clone(),
                    size: st.size,
                    members,
                })
            })
            .collect()
    }

    /// Construction tree flattened for index writing. Nodes are listed in
    /// preorder with parent links; leaves carry their member sources.
    pub(crate) fn flatten(&self) -> Vec<FlatNode> {
        let mut out: Vec<FlatNode> = Vec::new();
        let mut stack: Vec<(Arc<BuildNode>, Option<usize>, bool)> = vec![(Arc::clone(&self.shared.root), None, false)];
        while let Some((node, parent, is_right)) = stack.pop() {
            let idx = out.len();
            if let Some(p) = parent {
                match &mut out[p].kind {
                    FlatKind::Internal { left, right, .. } => {
                        if is_right {
                            *right = idx;
                        } else {
                            *left = idx;
                        }
                    }
                    FlatKind::Leaf { .. } => unreachable!(),
                }
            }
            let st = node.state.lock();
            let kind = match node.children.get() {
                Some(ch) => {
                    stack.push((Arc::clone(&ch.right), Some(idx), true));
                    stack.push((Arc::clone(&ch.left), Some(idx), false));
                    FlatKind::Internal {
                        policy: ch.policy,
                        left: usize::MAX,
                        right: usize::MAX,
                    }
                }
                None => FlatKind::Leaf {
                    spill: (st.spilled > 0).then(|| self.shared.spill_path(node.id)),
                    spilled: st.spilled,
                    memory: st.sbuffer.clone(),
                },
            };
            out.push(FlatNode {
                segmentation: node.segmentation.clone(),
                synopsis: st.synopsis.clone(),
                size: st.size,
                parent,
                kind,
            });
        }
        out
    }

    /// Reads one flattened leaf's members (spilled first, then in-memory).
    pub(crate) fn read_leaf(&self, spill: Option<&Path>, spilled: usize, memory: &[SeriesHandle], out: &mut Vec<f32>) -> Result<()> {
        let n = self.shared.n;
        out.clear();
        if let Some(path) = spill {
            let mut bytes = Vec::new();
            File::open(path)
                .and_then(|mut f| f.read_to_end(&mut bytes))
                .map_err(|e| Error::io(path, e))?;
            let values = raw::decode_dataset(&bytes, n)?;
            if values.len() != spilled * n {
                return Err(Error::integrity(path.display().to_string(), "spill file size changed"));
            }
            out.extend_from_slice(&values);
        }
        for &h in memory {
            self.shared.hbuffer.read(h, out);
        }
        Ok(())
    }

    pub fn scratch_dir(&self) -> &Path {
        &self.scratch
    }
}

impl Drop for BuiltIndex {
    fn drop(&mut self) {
        let _ = fs::remove_dir_all(&self.scratch);
    }
}

pub(crate) struct FlatNode {
    pub segmentation: Segmentation,
    pub synopsis: Synopsis,
    pub size: usize,
    pub parent: Option<usize>,
    pub kind: FlatKind,
}

pub(crate) enum FlatKind {
    Leaf {
        spill: Option<PathBuf>,
        spilled: usize,
        memory: Vec<SeriesHandle>,
    },
    Internal {
        policy: SplitPolicy,
        left: usize,
        right: usize,
    },
}
