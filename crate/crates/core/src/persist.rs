//! Index writing and loading.
//!
//! Writing turns a [`BuiltIndex`] into three files:
//! - `lrd.bin`: every raw series, leaves concatenated in inorder;
//! - `lsd.bin`: one iSAX word (one byte per segment) per series, aligned with `lrd.bin`;
//! - `htree.bin`: a settings header followed by the tree's nodes in postorder.
//!
//! Write workers claim leaves in inorder, compute iSAX words and propagate
//! synopses to the ancestors; the calling thread appends each processed leaf
//! to the data files in order and releases the worker that produced it.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::thread;
use std::time::Instant;

use parking_lot::Mutex;

use crate::build::{BuiltIndex, FlatKind, FlatNode};
use crate::error::{Error, Result};
use crate::raw;
use crate::summary::{isax, stats_unchecked, Breakpoints, DEFAULT_ALPHABET, DEFAULT_SEGMENTS};
use crate::sync::spin_until;
use crate::tree::{
    Attribute, Envelope, FilePosition, NodeKind, Segmentation, SplitKind, SplitPolicy, Synopsis, Tree, TreeNode,
};

pub const FORMAT_VERSION: u32 = 1;
pub const HTREE_FILE: &str = "htree.bin";
pub const LRD_FILE: &str = "lrd.bin";
pub const LSD_FILE: &str = "lsd.bin";

const MAGIC: &[u8; 8] = b"HERCULES";
pub const HEADER_BYTES: usize = 8 + 4 + 4 + 8 + 4 + 4 + 4 + 8;

const FLAG_LEAF: u8 = 1;
const FLAG_SD: u8 = 1 << 1;
const FLAG_VSPLIT: u8 = 1 << 2;
const FLAG_UPPER: u8 = 1 << 3;

/// Self-describing parameters stored in the `htree.bin` header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndexSettings {
    pub series_len: usize,
    pub dataset_size: u64,
    pub leaf_threshold: usize,
    pub isax_segments: usize,
    pub alphabet: usize,
    pub format_version: u32,
}

impl IndexSettings {
    /// Settings with the default iSAX parameters; `dataset_size` is filled in by the build.
    pub fn new(series_len: usize, leaf_threshold: usize) -> Result<Self> {
        let s = IndexSettings {
            series_len,
            dataset_size: 0,
            leaf_threshold,
            isax_segments: DEFAULT_SEGMENTS,
            alphabet: DEFAULT_ALPHABET,
            format_version: FORMAT_VERSION,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.series_len == 0 || self.leaf_threshold == 0 || self.isax_segments == 0 {
            return Err(Error::Config(format!(
                "series length, leaf threshold and segment count must be positive: {self:?}"
            )));
        }
        if !self.series_len.is_multiple_of(self.isax_segments) {
            return Err(Error::Config(format!(
                "series length {} is not a multiple of the {} iSAX segments",
                self.series_len, self.isax_segments
            )));
        }
        if self.alphabet != DEFAULT_ALPHABET {
            return Err(Error::Config(format!(
                "alphabet {} unsupported (words are stored one byte per symbol with alphabet {DEFAULT_ALPHABET})",
                self.alphabet
            )));
        }
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Config(format!("unsupported format version {}", self.format_version)));
        }
        Ok(())
    }

    pub fn lrd_bytes(&self) -> u64 {
        self.dataset_size.saturating_mul(self.series_len as u64).saturating_mul(4)
    }

    pub fn lsd_bytes(&self) -> u64 {
        self.dataset_size.saturating_mul(self.isax_segments as u64)
    }
}

/// Size in bytes of `htree.bin` for a given tree.
pub fn htree_bytes(tree: &Tree) -> u64 {
    HEADER_BYTES as u64 + tree.nodes().iter().map(|n| node_record_bytes(n) as u64).sum::<u64>()
}

fn node_record_bytes(node: &TreeNode) -> usize {
    let m = node.segmentation.len();
    let tail = if node.is_leaf() { 16 } else { 12 };
    1 + 4 + 4 * m + 16 * m + 8 + tail
}

/// Raw-series store backed by `lrd.bin`, read on demand with positioned reads.
#[derive(Debug)]
pub struct RawStore {
    file: File,
    path: PathBuf,
    n: usize,
    count: u64,
    bytes_read: AtomicU64,
    read_nanos: AtomicU64,
}

impl RawStore {
    fn open(path: &Path, n: usize, count: u64) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(RawStore {
            file,
            path: path.to_path_buf(),
            n,
            count,
            bytes_read: AtomicU64::new(0),
            read_nanos: AtomicU64::new(0),
        })
    }

    /// Reads `count` consecutive series starting at series index `first` into `out` (cleared).
    pub fn read_range(&self, first: u64, count: u64, out: &mut Vec<f32>) -> Result<()> {
        if first + count > self.count {
            return Err(Error::Contract(format!(
                "series range {first}..{} beyond {} stored series",
                first + count,
                self.count
            )));
        }
        let len = count as usize * self.n * 4;
        let mut bytes = vec![0u8; len];
        let t = Instant::now();
        self.file
            .read_exact_at(&mut bytes, first * self.n as u64 * 4)
            .map_err(|e| Error::io(&self.path, e))?;
        self.read_nanos.fetch_add(t.elapsed().as_nanos() as u64, Ordering::Relaxed);
        self.bytes_read.fetch_add(len as u64, Ordering::Relaxed);
        out.clear();
        out.extend(
            bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])),
        );
        Ok(())
    }

    /// Total bytes read since opening.
    pub fn bytes_read(&self) -> u64 {
        self.bytes_read.load(Ordering::Relaxed)
    }

    /// Total time spent in reads since opening, in nanoseconds.
    pub fn read_nanos(&self) -> u64 {
        self.read_nanos.load(Ordering::Relaxed)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// A written index: tree and iSAX words in memory, raw series on disk.
#[derive(Debug)]
pub struct Index {
    settings: IndexSettings,
    tree: Tree,
    words: Vec<u8>,
    raw: RawStore,
    dir: PathBuf,
}

impl Index {
    pub fn settings(&self) -> &IndexSettings {
        &self.settings
    }

    pub fn tree(&self) -> &Tree {
        &self.tree
    }

    pub fn raw(&self) -> &RawStore {
        &self.raw
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn num_series(&self) -> u64 {
        self.settings.dataset_size
    }

    /// The iSAX word of the series at `pos`.
    pub fn word(&self, pos: u64) -> &[u8] {
        let l = self.settings.isax_segments;
        &self.words[pos as usize * l..(pos as usize + 1) * l]
    }

    pub fn words(&self) -> &[u8] {
        &self.words
    }

    /// Raw members of a leaf, in file order.
    pub fn read_leaf(&self, leaf: usize) -> Result<Vec<f32>> {
        let pos = self.tree.node(leaf).file_position().ok_or_else(|| {
            Error::Contract(format!("node {leaf} is not a leaf"))
        })?;
        let mut out = Vec::new();
        self.raw.read_range(pos.first, pos.count, &mut out)?;
        Ok(out)
    }
}

/// Instrumentation collected while writing.
#[derive(Debug, Clone, Default)]
pub struct WriteReport {
    /// `(worker, inorder rank)` for every claimed leaf.
    pub claims: Vec<(usize, usize)>,
    /// Leaves the writer found not yet processed when it was about to append
    /// them (it waited); appending before processing would be a bug.
    pub writer_waits: usize,
    /// Leaves whose written flag was set before their processed flag (must stay 0).
    pub order_violations: usize,
}

/// Writes `built` into `out_dir` (created if missing) with `num_threads` write workers.
pub fn write_index(built: BuiltIndex, out_dir: &Path, num_threads: usize) -> Result<Index> {
    write_index_traced(built, out_dir, num_threads).map(|(idx, _)| idx)
}

pub fn write_index_traced(built: BuiltIndex, out_dir: &Path, num_threads: usize) -> Result<(Index, WriteReport)> {
    if num_threads == 0 {
        return Err(Error::Config("write needs at least one worker thread".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let result = write_files(&built, out_dir, num_threads);
    if result.is_err() {
        for f in [HTREE_FILE, LRD_FILE, LSD_FILE] {
            let _ = fs::remove_file(out_dir.join(f));
        }
    }
    let (tree, words, report) = result?;
    let settings = built.settings;
    drop(built);
    let raw = RawStore::open(&out_dir.join(LRD_FILE), settings.series_len, settings.dataset_size)?;
    Ok((
        Index {
            settings,
            tree,
            words,
            raw,
            dir: out_dir.to_path_buf(),
        },
        report,
    ))
}

/// A leaf's output, handed from the worker that processed it to the writer.
struct Staged {
    values: Vec<f32>,
    words: Vec<u8>,
}

struct WriteState<'a> {
    built: &'a BuiltIndex,
    nodes: Vec<FlatNode>,
    /// Synopses under construction, one lock per node.
    synopses: Vec<Mutex<Synopsis>>,
    /// Flat ids of the leaves in inorder.
    leaves: Vec<usize>,
    leaf_counter: AtomicUsize,
    processed: Vec<AtomicBool>,
    written: Vec<AtomicBool>,
    staged: Vec<Mutex<Option<Staged>>>,
    abort: AtomicBool,
    error: Mutex<Option<Error>>,
    claims: Mutex<Vec<(usize, usize)>>,
    order_violations: AtomicUsize,
    bp: Breakpoints,
}

impl WriteState<'_> {
    fn fail(&self, e: Error) {
        self.abort.store(true, Ordering::SeqCst);
        self.error.lock().get_or_insert(e);
    }

    /// Widens every V-split ancestor's split segment with `series`' stats on it.
    fn vsplit_synopsis(&self, leaf: usize, series: &[f32]) {
        let mut child = leaf;
        while let Some(p) = self.nodes[child].parent {
            if let FlatKind::Internal { policy, .. } = &self.nodes[p].kind {
                if policy.is_vertical() {
                    let (s, e) = self.nodes[p].segmentation.range(policy.segment_index);
                    let st = stats_unchecked(&series[s..e]);
                    self.synopses[p].lock().envelope_mut(policy.segment_index).widen(st);
                }
            }
            child = p;
        }
    }

    /// Merges child envelopes into each ancestor for segments the ancestor
    /// did not split vertically, from the leaf up to the root.
    fn hsplit_synopsis(&self, leaf: usize) {
        let mut child = leaf;
        let mut child_syn = self.synopses[leaf].lock().clone();
        while let Some(p) = self.nodes[child].parent {
            let split = match &self.nodes[p].kind {
                FlatKind::Internal { policy, .. } if policy.is_vertical() => Some(policy.segment_index),
                _ => None,
            };
            let mut syn = self.synopses[p].lock();
            for j in 0..syn.len() {
                let c = match split {
                    Some(i) if j == i => continue,
                    Some(i) if j > i => j + 1,
                    _ => j,
                };
                syn.envelope_mut(j).merge(&child_syn.envelopes()[c]);
            }
            child_syn = syn.clone();
            drop(syn);
            child = p;
        }
    }

    fn process_leaf(&self, rank: usize) -> Result<Staged> {
        let id = self.leaves[rank];
        let FlatKind::Leaf { spill, spilled, memory } = &self.nodes[id].kind else {
            unreachable!("inorder list holds leaves only")
        };
        let mut values = Vec::new();
        self.built.read_leaf(spill.as_deref(), *spilled, memory, &mut values)?;
        let n = self.built.settings.series_len;
        let l = self.built.settings.isax_segments;
        let mut words = Vec::with_capacity(values.len() / n * l);
        for s in values.chunks_exact(n) {
            words.extend_from_slice(&isax(s, l, &self.bp)?);
            self.vsplit_synopsis(id, s);
        }
        self.hsplit_synopsis(id);
        Ok(Staged { values, words })
    }

    /// WriteIndexWorker: claim the next inorder leaf, process it, stage its
    /// output and wait for the writer before claiming another.
    fn worker(&self, wid: usize, busy_wait: u32) {
        loop {
            let rank = self.leaf_counter.fetch_add(1, Ordering::SeqCst);
            if rank >= self.leaves.len() {
                return;
            }
            self.claims.lock().push((wid, rank));
            if !self.abort.load(Ordering::SeqCst) {
                match self.process_leaf(rank) {
                    Ok(st) => *self.staged[rank].lock() = Some(st),
                    Err(e) => self.fail(e),
                }
            }
            self.processed[rank].store(true, Ordering::SeqCst);
            spin_until(busy_wait, || self.written[rank].load(Ordering::SeqCst));
        }
    }
}

type Written = (Tree, Vec<u8>, WriteReport);

fn write_files(built: &BuiltIndex, dir: &Path, num_threads: usize) -> Result<Written> {
    let settings = built.settings;
    let nodes = built.flatten();
    let leaves: Vec<usize> = (0..nodes.len())
        .filter(|&i| matches!(nodes[i].kind, FlatKind::Leaf { .. }))
        .collect();
    let state = WriteState {
        built,
        synopses: nodes.iter().map(|n| Mutex::new(n.synopsis.clone())).collect(),
        processed: leaves.iter().map(|_| AtomicBool::new(false)).collect(),
        written: leaves.iter().map(|_| AtomicBool::new(false)).collect(),
        staged: leaves.iter().map(|_| Mutex::new(None)).collect(),
        nodes,
        leaves,
        leaf_counter: AtomicUsize::new(0),
        abort: AtomicBool::new(false),
        error: Mutex::new(None),
        claims: Mutex::new(Vec::new()),
        order_violations: AtomicUsize::new(0),
        bp: Breakpoints::normal(settings.alphabet)?,
    };

    let lrd_path = dir.join(LRD_FILE);
    let lsd_path = dir.join(LSD_FILE);
    let mut lrd = BufWriter::new(File::create(&lrd_path).map_err(|e| Error::io(&lrd_path, e))?);
    let mut lsd = BufWriter::new(File::create(&lsd_path).map_err(|e| Error::io(&lsd_path, e))?);
    let mut all_words = Vec::with_capacity(settings.lsd_bytes() as usize);
    let mut writer_waits = 0;
    let busy_wait = crate::build::DEFAULT_BUSY_WAIT;

    thread::scope(|scope| {
        for wid in 0..num_threads {
            let state = &state;
            scope.spawn(move || state.worker(wid, busy_wait));
        }
        // WriteLeafData, in inorder.
        for rank in 0..state.leaves.len() {
            if !state.processed[rank].load(Ordering::SeqCst) {
                writer_waits += 1;
                spin_until(busy_wait, || state.processed[rank].load(Ordering::SeqCst));
            }
            if let Some(st) = state.staged[rank].lock().take() {
                let res = raw::write_f32s(&mut lrd, &st.values)
                    .map_err(|e| Error::io(&lrd_path, e))
                    .and_then(|_| lsd.write_all(&st.words).map_err(|e| Error::io(&lsd_path, e)));
                match res {
                    Ok(()) => all_words.extend_from_slice(&st.words),
                    Err(e) => state.fail(e),
                }
            }
            if !state.processed[rank].load(Ordering::SeqCst) {
                state.order_violations.fetch_add(1, Ordering::SeqCst);
            }
            state.written[rank].store(true, Ordering::SeqCst);
        }
    });
    if let Some(e) = state.error.lock().take() {
        return Err(e);
    }
    lrd.flush().map_err(|e| Error::io(&lrd_path, e))?;
    lsd.flush().map_err(|e| Error::io(&lsd_path, e))?;

    let tree = freeze(&settings, &state)?;
    let htree_path = dir.join(HTREE_FILE);
    let mut bytes = Vec::with_capacity(htree_bytes(&tree) as usize);
    encode_htree(&settings, &tree, &mut bytes);
    fs::write(&htree_path, &bytes).map_err(|e| Error::io(&htree_path, e))?;

    let mut claims = state.claims.into_inner();
    claims.sort_by_key(|&(_, r)| r);
    let report = WriteReport {
        claims,
        writer_waits,
        order_violations: state.order_violations.load(Ordering::SeqCst),
    };
    Ok((tree, all_words, report))
}

/// Builds the final tree: inorder file positions for leaves, subtree sizes
/// for internal nodes and the propagated synopses.
fn freeze(settings: &IndexSettings, state: &WriteState<'_>) -> Result<Tree> {
    let mut positions = vec![FilePosition::default(); state.nodes.len()];
    let mut next = 0u64;
    for &id in &state.leaves {
        let count = state.nodes[id].size as u64;
        positions[id] = FilePosition { first: next, count };
        next += count;
    }
    if next != settings.dataset_size {
        return Err(Error::Contract(format!(
            "leaves hold {next} series but {} were inserted",
            settings.dataset_size
        )));
    }
    let mut nodes: Vec<TreeNode> = state
        .nodes
        .iter()
        .enumerate()
        .map(|(i, f)| TreeNode {
            segmentation: f.segmentation.clone(),
            synopsis: state.synopses[i].lock().clone(),
            size: f.size as u64,
            parent: f.parent,
            kind: match &f.kind {
                FlatKind::Leaf { .. } => NodeKind::Leaf(positions[i]),
                FlatKind::Internal { policy, left, right } => NodeKind::Internal {
                    policy: *policy,
                    left: *left,
                    right: *right,
                },
            },
        })
        .collect();
    // Preorder ids: children always follow their parent, so a reverse sweep
    // settles subtree sizes bottom-up.
    for i in (0..nodes.len()).rev() {
        if let NodeKind::Internal { left, right, .. } = nodes[i].kind {
            nodes[i].size = nodes[left].size + nodes[right].size;
        }
    }
    let preorder = Tree::from_nodes(settings.series_len, nodes, 0)?;
    renumber_postorder(preorder)
}

/// Re-indexes the arena so node ids follow postorder, as in a loaded tree.
fn renumber_postorder(tree: Tree) -> Result<Tree> {
    let order = tree.postorder();
    let mut new_id = vec![0; order.len()];
    for (i, &old) in order.iter().enumerate() {
        new_id[old] = i;
    }
    let nodes = order
        .iter()
        .map(|&old| {
            let mut node = tree.node(old).clone();
            node.parent = node.parent.map(|p| new_id[p]);
            if let NodeKind::Internal { left, right, .. } = &mut node.kind {
                *left = new_id[*left];
                *right = new_id[*right];
            }
            node
        })
        .collect();
    Tree::from_nodes(tree.series_len(), nodes, new_id[tree.root()])
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f32(out: &mut Vec<u8>, v: f32) {
    out.extend_from_slice(&v.to_le_bytes());
}

/// Serializes the header and the nodes in postorder.
pub fn encode_htree(settings: &IndexSettings, tree: &Tree, out: &mut Vec<u8>) {
    out.extend_from_slice(MAGIC);
    put_u32(out, settings.format_version);
    put_u32(out, settings.series_len as u32);
    put_u64(out, settings.dataset_size);
    put_u32(out, settings.leaf_threshold as u32);
    put_u32(out, settings.isax_segments as u32);
    put_u32(out, settings.alphabet as u32);
    put_u64(out, tree.len() as u64);
    for id in tree.postorder() {
        let node = tree.node(id);
        let mut flags = 0u8;
        if let NodeKind::Internal { policy, .. } = node.kind {
            if policy.attribute == Attribute::Sd {
                flags |= FLAG_SD;
            }
            if let SplitKind::VSplit { upper_half, .. } = policy.kind {
                flags |= FLAG_VSPLIT;
                if upper_half {
                    flags |= FLAG_UPPER;
                }
            }
        } else {
            flags |= FLAG_LEAF;
        }
        out.push(flags);
        put_u32(out, node.segmentation.len() as u32);
        for &e in node.segmentation.ends() {
            put_u32(out, e as u32);
        }
        for env in node.synopsis.envelopes() {
            put_f32(out, env.mean_min);
            put_f32(out, env.mean_max);
            put_f32(out, env.sd_min);
            put_f32(out, env.sd_max);
        }
        put_u64(out, node.size);
        match node.kind {
            NodeKind::Leaf(pos) => {
                put_u64(out, pos.first);
                put_u64(out, pos.count);
            }
            NodeKind::Internal { policy, .. } => {
                put_u32(out, policy.segment_index as u32);
                let point = match policy.kind {
                    SplitKind::VSplit { split_point, .. } => split_point as u32,
                    SplitKind::HSplit => 0,
                };
                put_u32(out, point);
                put_f32(out, policy.threshold);
            }
        }
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.at < len {
            return Err(Error::integrity(HTREE_FILE, format!("truncated at byte {}", self.at)));
        }
        let s = &self.bytes[self.at..self.at + len];
        self.at += len;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

fn bad(reason: impl Into<String>) -> Error {
    Error::integrity(HTREE_FILE, reason)
}

/// Parses `htree.bin` into settings and a validated tree.
pub fn decode_htree(bytes: &[u8]) -> Result<(IndexSettings, Tree)> {
    let mut c = Cursor { bytes, at: 0 };
    if c.take(8)? != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = c.u32()?;
    if version != FORMAT_VERSION {
        return Err(bad(format!("format version {version}, expected {FORMAT_VERSION}")));
    }
    let settings = IndexSettings {
        format_version: version,
        series_len: c.u32()? as usize,
        dataset_size: c.u64()?,
        leaf_threshold: c.u32()? as usize,
        isax_segments: c.u32()? as usize,
        alphabet: c.u32()? as usize,
    };
    settings.validate().map_err(|e| bad(e.to_string()))?;
    let n = settings.series_len;
    let count = c.u64()?;
    // Smallest record is 1 + 4 + 4 + 16 + 8 + 12 bytes.
    if count == 0 || count > (bytes.len() / 45) as u64 {
        return Err(bad(format!("implausible node count {count}")));
    }

    let mut nodes: Vec<TreeNode> = Vec::with_capacity(count as usize);
    let mut stack: Vec<usize> = Vec::new();
    let mut next_first = 0u64;
    for id in 0..count as usize {
        let flags = c.u8()?;
        if flags & !(FLAG_LEAF | FLAG_SD | FLAG_VSPLIT | FLAG_UPPER) != 0 {
            return Err(bad(format!("node {id}: unknown flags {flags:#x}")));
        }
        let m = c.u32()? as usize;
        if m == 0 || m > n {
            return Err(bad(format!("node {id}: {m} segments for series length {n}")));
        }
        if m.saturating_mul(20) > bytes.len() - c.at {
            return Err(bad(format!("node {id}: {m} segments overrun the file")));
        }
        let mut ends = Vec::with_capacity(m);
        for _ in 0..m {
            ends.push(c.u32()? as usize);
        }
        if ends.last() != Some(&n) {
            return Err(bad(format!("node {id}: segmentation does not end at {n}")));
        }
        let segmentation = Segmentation::new(ends).map_err(|e| bad(format!("node {id}: {e}")))?;
        let mut envs = Vec::with_capacity(m);
        for _ in 0..m {
            let env = Envelope {
                mean_min: c.f32()?,
                mean_max: c.f32()?,
                sd_min: c.f32()?,
                sd_max: c.f32()?,
            };
            if [env.mean_min, env.mean_max, env.sd_min, env.sd_max].iter().any(|v| v.is_nan()) {
                return Err(bad(format!("node {id}: NaN in synopsis")));
            }
            envs.push(env);
        }
        let size = c.u64()?;
        let kind = if flags & FLAG_LEAF != 0 {
            if flags != FLAG_LEAF {
                return Err(bad(format!("node {id}: leaf with split flags")));
            }
            let pos = FilePosition {
                first: c.u64()?,
                count: c.u64()?,
            };
            if pos.first != next_first || pos.count != size {
                return Err(bad(format!("node {id}: file position {pos:?} breaks inorder layout")));
            }
            next_first = next_first
                .checked_add(pos.count)
                .ok_or_else(|| bad(format!("node {id}: leaf sizes overflow")))?;
            stack.push(id);
            NodeKind::Leaf(pos)
        } else {
            let segment_index = c.u32()? as usize;
            let point = c.u32()? as usize;
            let threshold = c.f32()?;
            if threshold.is_nan() {
                return Err(bad(format!("node {id}: NaN threshold")));
            }
            let kind = if flags & FLAG_VSPLIT != 0 {
                SplitKind::VSplit {
                    split_point: point,
                    upper_half: flags & FLAG_UPPER != 0,
                }
            } else if flags & FLAG_UPPER != 0 || point != 0 {
                return Err(bad(format!("node {id}: H-split with V-split fields")));
            } else {
                SplitKind::HSplit
            };
            let policy = SplitPolicy {
                segment_index,
                attribute: if flags & FLAG_SD != 0 { Attribute::Sd } else { Attribute::Mean },
                kind,
                threshold,
            };
            let (Some(right), Some(left)) = (stack.pop(), stack.pop()) else {
                return Err(bad(format!("node {id}: internal node without two children")));
            };
            if nodes[left].size.checked_add(nodes[right].size) != Some(size) {
                return Err(bad(format!("node {id}: size {size} is not the sum of its children")));
            }
            nodes[left].parent = Some(id);
            nodes[right].parent = Some(id);
            stack.push(id);
            NodeKind::Internal { policy, left, right }
        };
        nodes.push(TreeNode {
            segmentation,
            synopsis: Synopsis::from_envelopes(envs),
            size,
            parent: None,
            kind,
        });
    }
    if c.at != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - c.at)));
    }
    if stack.len() != 1 {
        return Err(bad(format!("records form {} trees, expected 1", stack.len())));
    }
    if next_first != settings.dataset_size {
        return Err(bad(format!(
            "leaves hold {next_first} series, header says {}",
            settings.dataset_size
        )));
    }
    let root = stack[0];
    let tree = Tree::from_nodes(n, nodes, root).map_err(|e| bad(e.to_string()))?;
    Ok((settings, tree))
}

/// Opens an index directory: tree and iSAX words are loaded into memory,
/// raw series stay on disk.
pub fn load_index(dir: &Path) -> Result<Index> {
    let htree_path = dir.join(HTREE_FILE);
    let bytes = fs::read(&htree_path).map_err(|e| Error::io(&htree_path, e))?;
    let (settings, tree) = decode_htree(&bytes)?;

    let lrd_path = dir.join(LRD_FILE);
    let lrd_len = fs::metadata(&lrd_path).map_err(|e| Error::io(&lrd_path, e))?.len();
    if lrd_len != settings.lrd_bytes() {
        return Err(Error::integrity(
            LRD_FILE,
            format!("{lrd_len} bytes, expected {}", settings.lrd_bytes()),
        ));
    }
    let lsd_path = dir.join(LSD_FILE);
    let words = fs::read(&lsd_path).map_err(|e| Error::io(&lsd_path, e))?;
    if words.len() as u64 != settings.lsd_bytes() {
        return Err(Error::integrity(
            LSD_FILE,
            format!("{} bytes, expected {}", words.len(), settings.lsd_bytes()),
        ));
    }
    let raw = RawStore::open(&lrd_path, settings.series_len, settings.dataset_size)?;
    Ok(Index {
        settings,
        tree,
        words,
        raw,
        dir: dir.to_path_buf(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::build::{build_index, BuildConfig};

    fn settings_err(n: usize) -> bool {
        IndexSettings::new(n, 10).is_err()
    }

    #[test]
    fn settings_divisibility() {
        assert!(!settings_err(96));
        assert!(matches!(IndexSettings::new(100, 10), Err(Error::Config(_))));
        assert!(settings_err(0));
    }

    fn small_dataset(dir: &Path, rows: &[[f32; 16]]) -> PathBuf {
        let path = dir.join("data.bin");
        let flat: Vec<f32> = rows.iter().flatten().copied().collect();
        raw::write_series_file(&path, &flat).unwrap();
        path
    }

    #[test]
    fn single_leaf_index_keeps_insertion_order() {
        let dir = tempfile::tempdir().unwrap();
        let rows: Vec<[f32; 16]> = (0..5).map(|i| [i as f32; 16]).collect();
        let data = small_dataset(dir.path(), &rows);
        let cfg = BuildConfig::for_dataset(5, 2, dir.path().join("scratch"));
        let built = build_index(&data, IndexSettings::new(16, 10).unwrap(), &cfg).unwrap();
        let out = dir.path().join("idx");
        let idx = write_index(built, &out, 2).unwrap();
        assert_eq!(idx.tree().len(), 1);
        let lrd = raw::read_series_file(&out.join(LRD_FILE), 16).unwrap();
        let expect: Vec<f32> = rows.iter().flatten().copied().collect();
        assert_eq!(lrd, expect);
        let bytes = fs::read(out.join(HTREE_FILE)).unwrap();
        assert_eq!(bytes.len() as u64, htree_bytes(idx.tree()));
        assert_eq!(bytes.len(), HEADER_BYTES + 1 + 4 + 4 + 16 + 8 + 16);
    }

    #[test]
    fn decode_rejects_truncation_and_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let rows: Vec<[f32; 16]> = (0..9)
            .map(|i| {
                let mut r = [0f32; 16];
                for (j, v) in r.iter_mut().enumerate() {
                    *v = ((i * 7 + j * 3) % 11) as f32 - 5.0;
                }
                r
            })
            .collect();
        let data = small_dataset(dir.path(), &rows);
        let cfg = BuildConfig::for_dataset(9, 2, dir.path().join("scratch"));
        let built = build_index(&data, IndexSettings::new(16, 2).unwrap(), &cfg).unwrap();
        let out = dir.path().join("idx");
        let idx = write_index(built, &out, 1).unwrap();
        let bytes = fs::read(out.join(HTREE_FILE)).unwrap();
        let (s, t) = decode_htree(&bytes).unwrap();
        assert_eq!(&s, idx.settings());
        assert_eq!(t.nodes().len(), idx.tree().nodes().len());
        for cut in [0, 7, HEADER_BYTES, bytes.len() - 1] {
            assert!(decode_htree(&bytes[..cut]).is_err(), "cut {cut}");
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_htree(&extra).is_err());
        let mut bad_magic = bytes.clone();
        bad_magic[0] ^= 1;
        assert!(decode_htree(&bad_magic).is_err());
    }

    #[test]
    fn load_names_the_bad_file() {
        let dir = tempfile::tempdir().unwrap();
        let rows: Vec<[f32; 16]> = (0..4).map(|i| [i as f32 * 0.5; 16]).collect();
        let data = small_dataset(dir.path(), &rows);
        let cfg = BuildConfig::for_dataset(4, 2, dir.path().join("scratch"));
        let built = build_index(&data, IndexSettings::new(16, 8).unwrap(), &cfg).unwrap();
        let out = dir.path().join("idx");
        drop(write_index(built, &out, 1).unwrap());
        assert!(load_index(&out).is_ok());

        let lsd = out.join(LSD_FILE);
        let mut words = fs::read(&lsd).unwrap();
        words.pop();
        fs::write(&lsd, &words).unwrap();
        match load_index(&out) {
            Err(Error::Integrity { file, .. }) => assert_eq!(file, LSD_FILE),
            other => panic!("expected integrity error, got {other:?}"),
        }
    }
}
