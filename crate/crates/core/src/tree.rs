//! The index tree: EAPCA segmentations, per-node synopses, split policies and
//! the frozen (post-construction) node arena used for writing and querying.

use crate::error::{Error, Result};
use crate::summary::{stats_unchecked, SegmentStats};

/// Right endpoints `r_1 < ... < r_m = n` of a node's segments (`r_0 = 0` implied).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segmentation {
    ends: Vec<usize>,
}

impl Segmentation {
    pub fn new(ends: Vec<usize>) -> Result<Self> {
        if ends.is_empty() {
            return Err(Error::Contract("segmentation needs at least one segment".into()));
        }
        let mut prev = 0;
        for &e in &ends {
            if e <= prev {
                return Err(Error::Contract(format!(
                    "segment endpoints must be strictly increasing and positive: {ends:?}"
                )));
            }
            prev = e;
        }
        Ok(Segmentation { ends })
    }

    /// A single segment `[0, n)`.
    pub fn whole(n: usize) -> Self {
        Segmentation { ends: vec![n] }
    }

    pub fn len(&self) -> usize {
        self.ends.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ends.is_empty()
    }

    pub fn series_len(&self) -> usize {
        *self.ends.last().expect("non-empty segmentation")
    }

    pub fn ends(&self) -> &[usize] {
        &self.ends
    }

    pub fn range(&self, i: usize) -> (usize, usize) {
        let start = if i == 0 { 0 } else { self.ends[i - 1] };
        (start, self.ends[i])
    }

    pub fn ranges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.ends.len()).map(move |i| self.range(i))
    }

    /// Splits segment `i` at `point`, which must lie strictly inside it.
    pub fn refine(&self, i: usize, point: usize) -> Result<Segmentation> {
        let (s, e) = self.range(i);
        if point <= s || point >= e {
            return Err(Error::Contract(format!(
                "split point {point} not strictly inside segment [{s}, {e})"
            )));
        }
        let mut ends = self.ends.clone();
        ends.insert(i, point);
        Ok(Segmentation { ends })
    }

    pub fn stats(&self, series: &[f32]) -> Vec<SegmentStats> {
        self.ranges().map(|(s, e)| stats_unchecked(&series[s..e])).collect()
    }
}

/// Min/max envelope of segment means and standard deviations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Envelope {
    pub mean_min: f32,
    pub mean_max: f32,
    pub sd_min: f32,
    pub sd_max: f32,
}

impl Envelope {
    /// The identity for widening: contains nothing.
    pub const EMPTY: Envelope = Envelope {
        mean_min: f32::INFINITY,
        mean_max: f32::NEG_INFINITY,
        sd_min: f32::INFINITY,
        sd_max: f32::NEG_INFINITY,
    };

    pub fn is_empty(&self) -> bool {
        self.mean_min > self.mean_max
    }

    pub fn widen(&mut self, st: SegmentStats) {
        self.mean_min = self.mean_min.min(st.mean);
        self.mean_max = self.mean_max.max(st.mean);
        self.sd_min = self.sd_min.min(st.sd);
        self.sd_max = self.sd_max.max(st.sd);
    }

    pub fn merge(&mut self, other: &Envelope) {
        self.mean_min = self.mean_min.min(other.mean_min);
        self.mean_max = self.mean_max.max(other.mean_max);
        self.sd_min = self.sd_min.min(other.sd_min);
        self.sd_max = self.sd_max.max(other.sd_max);
    }

    pub fn contains(&self, st: SegmentStats) -> bool {
        self.mean_min <= st.mean
            && st.mean <= self.mean_max
            && self.sd_min <= st.sd
            && st.sd <= self.sd_max
    }
}

/// One envelope per segment of the owning node's segmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct Synopsis {
    envs: Vec<Envelope>,
}

impl Synopsis {
    pub fn empty(segments: usize) -> Self {
        Synopsis {
            envs: vec![Envelope::EMPTY; segments],
        }
    }

    pub fn from_envelopes(envs: Vec<Envelope>) -> Self {
        Synopsis { envs }
    }

    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }

    pub fn envelopes(&self) -> &[Envelope] {
        &self.envs
    }

    pub fn envelope_mut(&mut self, i: usize) -> &mut Envelope {
        &mut self.envs[i]
    }

    /// Widens every segment envelope to include `series` (never narrows).
    pub fn widen_with_series(&mut self, seg: &Segmentation, series: &[f32]) {
        debug_assert_eq!(seg.len(), self.envs.len());
        for (env, (s, e)) in self.envs.iter_mut().zip(seg.ranges()) {
            env.widen(stats_unchecked(&series[s..e]));
        }
    }

    pub fn contains_series(&self, seg: &Segmentation, series: &[f32]) -> bool {
        self.envs
            .iter()
            .zip(seg.ranges())
            .all(|(env, (s, e))| env.contains(stats_unchecked(&series[s..e])))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Attribute {
    Mean,
    Sd,
}

impl Attribute {
    #[inline]
    pub fn of(self, st: SegmentStats) -> f32 {
        match self {
            Attribute::Mean => st.mean,
            Attribute::Sd => st.sd,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitKind {
    /// Children keep the parent's segmentation.
    HSplit,
    /// Segment is cut at `split_point`; routing uses the lower (`upper_half ==
    /// false`) or upper half.
    VSplit { split_point: usize, upper_half: bool },
}

/// How an internal node routes a series to one of its two children.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitPolicy {
    pub segment_index: usize,
    pub attribute: Attribute,
    pub kind: SplitKind,
    pub threshold: f32,
}

impl SplitPolicy {
    /// Point range whose statistic drives routing.
    pub fn routing_range(&self, parent: &Segmentation) -> (usize, usize) {
        let (s, e) = parent.range(self.segment_index);
        match self.kind {
            SplitKind::HSplit => (s, e),
            SplitKind::VSplit {
                split_point,
                upper_half: false,
            } => (s, split_point),
            SplitKind::VSplit {
                split_point,
                upper_half: true,
            } => (split_point, e),
        }
    }

    pub fn child_segmentation(&self, parent: &Segmentation) -> Result<Segmentation> {
        match self.kind {
            SplitKind::HSplit => Ok(parent.clone()),
            SplitKind::VSplit { split_point, .. } => {
                parent.refine(self.segment_index, split_point)
            }
        }
    }

    /// The routing value of `series` under this policy.
    #[inline]
    pub fn value(&self, parent: &Segmentation, series: &[f32]) -> f32 {
        let (s, e) = self.routing_range(parent);
        self.attribute.of(stats_unchecked(&series[s..e]))
    }

    /// Strictly-below-threshold goes left.
    #[inline]
    pub fn goes_left(&self, parent: &Segmentation, series: &[f32]) -> bool {
        self.value(parent, series) < self.threshold
    }

    pub fn is_vertical(&self) -> bool {
        matches!(self.kind, SplitKind::VSplit { .. })
    }

    pub fn validate(&self, parent: &Segmentation) -> Result<()> {
        if self.segment_index >= parent.len() {
            return Err(Error::Contract(format!(
                "policy segment {} out of range for {} segments",
                self.segment_index,
                parent.len()
            )));
        }
        if let SplitKind::VSplit { split_point, .. } = self.kind {
            let (s, e) = parent.range(self.segment_index);
            if split_point <= s || split_point >= e {
                return Err(Error::Contract(format!(
                    "V-split point {split_point} not inside segment [{s}, {e})"
                )));
            }
        }
        Ok(())
    }
}

/// A candidate policy together with its quality gain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredPolicy {
    pub policy: SplitPolicy,
    pub gain: f64,
}

/// Per-member statistics over the parent segments and their V-split halves.
struct MemberStats {
    /// `seg[j]` for each parent segment.
    seg: Vec<SegmentStats>,
    /// `halves[j]` for segments at least 2 points wide.
    halves: Vec<Option<(SegmentStats, SegmentStats)>>,
}

fn member_stats(seg: &Segmentation, series: &[f32]) -> MemberStats {
    let mut segs = Vec::with_capacity(seg.len());
    let mut halves = Vec::with_capacity(seg.len());
    for (s, e) in seg.ranges() {
        segs.push(stats_unchecked(&series[s..e]));
        halves.push(if e - s >= 2 {
            let mid = vsplit_point(s, e);
            Some((stats_unchecked(&series[s..mid]), stats_unchecked(&series[mid..e])))
        } else {
            None
        });
    }
    MemberStats { seg: segs, halves }
}

/// V-split point of segment `[s, e)`: its midpoint, rounded down.
pub fn vsplit_point(s: usize, e: usize) -> usize {
    s + (e - s) / 2
}

/// Quality measure of a member set at a segmentation with segment widths
/// `widths`: `sum_j w_j * ((mean range)^2 + (sd range)^2)`, 0 for an empty set.
fn qos(widths: &[usize], set: &[usize], stat: impl Fn(usize, usize) -> SegmentStats) -> f64 {
    if set.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for (j, &w) in widths.iter().enumerate() {
        let mut env = Envelope::EMPTY;
        for &k in set {
            env.widen(stat(k, j));
        }
        let dm = (env.mean_max - env.mean_min) as f64;
        let ds = (env.sd_max - env.sd_min) as f64;
        total += w as f64 * (dm * dm + ds * ds);
    }
    total
}

/// Candidate policies in tie-break order: by segment, Mean before Sd, H-split
/// before V-split, lower half before upper half. Thresholds are not yet set.
fn candidate_shapes(seg: &Segmentation) -> Vec<(usize, Attribute, SplitKind)> {
    let mut out = Vec::new();
    for (i, (s, e)) in seg.ranges().enumerate() {
        for attr in [Attribute::Mean, Attribute::Sd] {
            out.push((i, attr, SplitKind::HSplit));
            if e - s >= 2 {
                let split_point = vsplit_point(s, e);
                for upper_half in [false, true] {
                    out.push((i, attr, SplitKind::VSplit { split_point, upper_half }));
                }
            }
        }
    }
    out
}

/// Scores every candidate policy for a full leaf with segmentation `seg`.
///
/// The gain of a candidate is `Q(all) - (n_l Q(left) + n_r Q(right)) / n`,
/// where `Q` is evaluated at the children's segmentation (the parent's for an
/// H-split, the refined one for a V-split) and the partition is the one the
/// candidate's threshold actually produces.
pub fn score_candidates(seg: &Segmentation, members: &[&[f32]]) -> Vec<ScoredPolicy> {
    let stats: Vec<MemberStats> = members.iter().map(|m| member_stats(seg, m)).collect();
    let total = members.len() as f64;
    let mut out = Vec::new();
    for (i, attribute, kind) in candidate_shapes(seg) {
        // Column accessor over the child segmentation for member `k`.
        let child_stat = |k: usize, j: usize| -> SegmentStats {
            match kind {
                SplitKind::HSplit => stats[k].seg[j],
                SplitKind::VSplit { .. } => {
                    if j < i {
                        stats[k].seg[j]
                    } else if j == i {
                        stats[k].halves[i].expect("wide segment").0
                    } else if j == i + 1 {
                        stats[k].halves[i].expect("wide segment").1
                    } else {
                        stats[k].seg[j - 1]
                    }
                }
            }
        };
        let routing = |k: usize| -> f32 {
            match kind {
                SplitKind::HSplit => attribute.of(stats[k].seg[i]),
                SplitKind::VSplit { upper_half, .. } => {
                    let (lo, hi) = stats[k].halves[i].expect("wide segment");
                    attribute.of(if upper_half { hi } else { lo })
                }
            }
        };
        let widths: Vec<usize> = match kind {
            SplitKind::HSplit => seg.ranges().map(|(s, e)| e - s).collect(),
            SplitKind::VSplit { split_point, .. } => {
                let refined = seg.refine(i, split_point).expect("valid split point");
                refined.ranges().map(|(s, e)| e - s).collect()
            }
        };

        let values: Vec<f32> = (0..members.len()).map(routing).collect();
        let (lo, hi) = values
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let threshold = midpoint(lo, hi);
        let left: Vec<usize> = (0..members.len()).filter(|&k| values[k] < threshold).collect();
        let right: Vec<usize> = (0..members.len()).filter(|&k| values[k] >= threshold).collect();

        let all: Vec<usize> = (0..members.len()).collect();
        let q_all = qos(&widths, &all, child_stat);
        let q_l = qos(&widths, &left, child_stat);
        let q_r = qos(&widths, &right, child_stat);
        let gain = q_all - (left.len() as f64 * q_l + right.len() as f64 * q_r) / total;
        out.push(ScoredPolicy {
            policy: SplitPolicy {
                segment_index: i,
                attribute,
                kind,
                threshold,
            },
            gain,
        });
    }
    out
}

/// Midpoint of a value range, computed in `f32` like the stored thresholds.
pub fn midpoint(lo: f32, hi: f32) -> f32 {
    (lo + hi) / 2.0
}

/// Picks the split policy with the largest gain (first in tie-break order on
/// ties). When no candidate has a positive gain, falls back to an H-split on
/// the mean of segment 0.
pub fn best_split_policy(seg: &Segmentation, members: &[&[f32]]) -> ScoredPolicy {
    let scored = score_candidates(seg, members);
    let mut best = scored[0];
    for c in &scored[1..] {
        if c.gain > best.gain {
            best = *c;
        }
    }
    if best.gain > 0.0 {
        best
    } else {
        // candidate 0 is always the H-split on the mean of segment 0
        scored[0]
    }
}

/// Result of distributing a full leaf's members to two new children.
#[derive(Debug, Clone)]
pub struct SplitOutcome {
    pub segmentation: Segmentation,
    pub left: ChildPart,
    pub right: ChildPart,
}

#[derive(Debug, Clone)]
pub struct ChildPart {
    pub synopsis: Synopsis,
    /// Indices into the member slice passed to [`split_node`].
    pub members: Vec<usize>,
}

/// Routes every member through `policy` and computes fresh child synopses
/// over the children's segmentation. Both children exist even if one is empty.
pub fn split_node(seg: &Segmentation, policy: &SplitPolicy, members: &[&[f32]]) -> Result<SplitOutcome> {
    policy.validate(seg)?;
    let child_seg = policy.child_segmentation(seg)?;
    let mut left = ChildPart {
        synopsis: Synopsis::empty(child_seg.len()),
        members: Vec::new(),
    };
    let mut right = left.clone();
    for (k, m) in members.iter().enumerate() {
        let part = if policy.goes_left(seg, m) {
            &mut left
        } else {
            &mut right
        };
        part.synopsis.widen_with_series(&child_seg, m);
        part.members.push(k);
    }
    Ok(SplitOutcome {
        segmentation: child_seg,
        left,
        right,
    })
}

/// Location of a leaf's series in the LRD file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FilePosition {
    /// Series index (not byte offset) of the leaf's first series.
    pub first: u64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    Leaf(FilePosition),
    Internal {
        policy: SplitPolicy,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub segmentation: Segmentation,
    pub synopsis: Synopsis,
    /// Number of series in the subtree.
    pub size: u64,
    pub parent: Option<usize>,
    pub kind: NodeKind,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        matches!(self.kind, NodeKind::Leaf(_))
    }

    pub fn file_position(&self) -> Option<FilePosition> {
        match self.kind {
            NodeKind::Leaf(p) => Some(p),
            NodeKind::Internal { .. } => None,
        }
    }
}

/// An immutable index tree stored as an arena. Node ids are arena indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    series_len: usize,
    nodes: Vec<TreeNode>,
    root: usize,
    /// Leaf ids in inorder (equivalently, LRD file) order.
    leaves: Vec<usize>,
}

impl Tree {
    /// Assembles a tree and checks its structural invariants.
    pub fn from_nodes(series_len: usize, nodes: Vec<TreeNode>, root: usize) -> Result<Self> {
        if root >= nodes.len() {
            return Err(Error::Contract("root id out of range".into()));
        }
        let mut tree = Tree {
            series_len,
            nodes,
            root,
            leaves: Vec::new(),
        };
        tree.leaves = tree.collect_inorder_leaves()?;
        Ok(tree)
    }

    fn collect_inorder_leaves(&self) -> Result<Vec<usize>> {
        let mut leaves = Vec::new();
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![self.root];
        while let Some(id) = stack.pop() {
            if std::mem::replace(&mut seen[id], true) {
                return Err(Error::Contract(format!("node {id} reachable twice")));
            }
            let node = &self.nodes[id];
            if node.segmentation.series_len() != self.series_len
                || node.synopsis.len() != node.segmentation.len()
            {
                return Err(Error::Contract(format!("node {id} has inconsistent segmentation")));
            }
            match node.kind {
                NodeKind::Leaf(_) => leaves.push(id),
                NodeKind::Internal { policy, left, right } => {
                    if left >= self.nodes.len() || right >= self.nodes.len() {
                        return Err(Error::Contract(format!("node {id} has dangling children")));
                    }
                    policy.validate(&node.segmentation)?;
                    let expect = policy.child_segmentation(&node.segmentation)?;
                    for c in [left, right] {
                        if self.nodes[c].segmentation != expect {
                            return Err(Error::Contract(format!(
                                "child {c} segmentation does not follow parent {id}'s policy"
                            )));
                        }
                        if self.nodes[c].parent != Some(id) {
                            return Err(Error::Contract(format!("child {c} parent link broken")));
                        }
                    }
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Contract("unreachable nodes in arena".into()));
        }
        Ok(leaves)
    }

    pub fn series_len(&self) -> usize {
        self.series_len
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn node(&self, id: usize) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf ids in inorder.
    pub fn leaves(&self) -> &[usize] {
        &self.leaves
    }

    /// Follows split policies from `start` down to a leaf.
    pub fn route_to_leaf(&self, start: usize, series: &[f32]) -> usize {
        let mut id = start;
        loop {
            let node = &self.nodes[id];
            match node.kind {
                NodeKind::Leaf(_) => return id,
                NodeKind::Internal { policy, left, right } => {
                    id = if policy.goes_left(&node.segmentation, series) {
                        left
                    } else {
                        right
                    };
                }
            }
        }
    }

    /// Node ids in postorder (children before parents).
    pub fn postorder(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![(self.root, false)];
        while let Some((id, expanded)) = stack.pop() {
            match self.nodes[id].kind {
                NodeKind::Internal { left, right, .. } if !expanded => {
                    stack.push((id, true));
                    stack.push((right, false));
                    stack.push((left, false));
                }
                _ => out.push(id),
            }
        }
        out
    }

    /// Ancestors of `id`, nearest first.
    pub fn ancestors(&self, id: usize) -> impl Iterator<Item = usize> + '_ {
        std::iter::successors(self.nodes[id].parent, move |&p| self.nodes[p].parent)
    }

    pub fn depth(&self) -> usize {
        self.leaves
            .iter()
            .map(|&l| self.ancestors(l).count())
            .max()
            .unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn constant(v: f32, n: usize) -> Vec<f32> {
        vec![v; n]
    }

    #[test]
    fn segmentation_basics() {
        let s = Segmentation::whole(8);
        assert_eq!(s.ranges().collect::<Vec<_>>(), vec![(0, 8)]);
        let r = s.refine(0, 4).unwrap();
        assert_eq!(r.ends(), &[4, 8]);
        assert_eq!(r.refine(1, 6).unwrap().ends(), &[4, 6, 8]);
        assert!(r.refine(0, 4).is_err());
        assert!(Segmentation::new(vec![3, 3]).is_err());
        assert!(Segmentation::new(vec![]).is_err());
    }

    #[test]
    fn synopsis_update_examples() {
        let seg = Segmentation::new(vec![2, 4]).unwrap();
        let a = [1.0f32, 3.0, -2.0, -2.0];
        let mut syn = Synopsis::empty(2);
        syn.widen_with_series(&seg, &a);
        let e = syn.envelopes();
        assert_eq!((e[0].mean_min, e[0].mean_max, e[0].sd_min, e[0].sd_max), (2.0, 2.0, 1.0, 1.0));
        assert_eq!((e[1].mean_min, e[1].mean_max, e[1].sd_min, e[1].sd_max), (-2.0, -2.0, 0.0, 0.0));

        let before = syn.clone();
        syn.widen_with_series(&seg, &a);
        assert_eq!(syn, before);
    }

    #[test]
    fn synopsis_equals_recomputed_envelope() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let seg = Segmentation::new(vec![3, 10, 16]).unwrap();
        let members: Vec<Vec<f32>> = (0..40)
            .map(|_| (0..16).map(|_| rng.random_range(-2.0f32..2.0)).collect())
            .collect();
        let mut syn = Synopsis::empty(3);
        for m in &members {
            syn.widen_with_series(&seg, m);
        }
        for (j, (s, e)) in seg.ranges().enumerate() {
            let st: Vec<SegmentStats> = members.iter().map(|m| stats_unchecked(&m[s..e])).collect();
            let env = syn.envelopes()[j];
            assert_eq!(env.mean_min, st.iter().map(|x| x.mean).fold(f32::INFINITY, f32::min));
            assert_eq!(env.mean_max, st.iter().map(|x| x.mean).fold(f32::NEG_INFINITY, f32::max));
            assert_eq!(env.sd_min, st.iter().map(|x| x.sd).fold(f32::INFINITY, f32::min));
            assert_eq!(env.sd_max, st.iter().map(|x| x.sd).fold(f32::NEG_INFINITY, f32::max));
        }
    }

    #[test]
    fn routing_uses_strict_less_than() {
        // midpoint of [-0.25, 0.10] routes mean -0.2 left
        let seg = Segmentation::whole(4);
        let p = SplitPolicy {
            segment_index: 0,
            attribute: Attribute::Mean,
            kind: SplitKind::HSplit,
            threshold: midpoint(-0.25, 0.10),
        };
        assert!((p.threshold - -0.075).abs() < 1e-7);
        assert!(p.goes_left(&seg, &constant(-0.2, 4)));
        assert!(!p.goes_left(&seg, &constant(p.threshold, 4)));
        assert!(!p.goes_left(&seg, &constant(0.05, 4)));
    }

    #[test]
    fn separating_mean_wins() {
        // segment-0 means at -1 / +1, all sds 0.5 at every resolution
        let members: Vec<Vec<f32>> = (0..64)
            .map(|k| {
                let c = if k % 2 == 0 { -1.0 } else { 1.0 };
                (0..8).map(|j| c + if j % 2 == 0 { 0.5 } else { -0.5 }).collect()
            })
            .collect();
        let refs: Vec<&[f32]> = members.iter().map(|m| m.as_slice()).collect();
        let best = best_split_policy(&Segmentation::whole(8), &refs);
        assert_eq!(best.policy.segment_index, 0);
        assert_eq!(best.policy.attribute, Attribute::Mean);
        assert_eq!(best.policy.kind, SplitKind::HSplit);
        assert_eq!(best.policy.threshold, 0.0);
    }

    #[test]
    fn identical_members_fall_back() {
        let members = vec![constant(0.5, 8); 4];
        let refs: Vec<&[f32]> = members.iter().map(|m| m.as_slice()).collect();
        let best = best_split_policy(&Segmentation::whole(8), &refs);
        assert_eq!(best.gain, 0.0);
        assert_eq!(best.policy.segment_index, 0);
        assert_eq!(best.policy.attribute, Attribute::Mean);
        assert_eq!(best.policy.kind, SplitKind::HSplit);
        let out = split_node(&Segmentation::whole(8), &best.policy, &refs).unwrap();
        assert!(out.left.members.is_empty());
        assert_eq!(out.right.members.len(), 4);
    }

    #[test]
    fn chosen_gain_is_maximal() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..50 {
            let seg = Segmentation::new(vec![5, 12, 16]).unwrap();
            let members: Vec<Vec<f32>> = (0..20)
                .map(|_| (0..16).map(|_| rng.random_range(-2.0f32..2.0)).collect())
                .collect();
            let refs: Vec<&[f32]> = members.iter().map(|m| m.as_slice()).collect();
            let best = best_split_policy(&seg, &refs);
            let all = score_candidates(&seg, &refs);
            assert_eq!(all.len(), 3 * 6);
            assert!(all.iter().all(|c| c.gain <= best.gain));
        }
    }

    #[test]
    fn split_examples() {
        let seg = Segmentation::whole(8);
        let members = [constant(-1.0, 8), constant(1.0, 8), constant(-1.0, 8), constant(1.0, 8)];
        let refs: Vec<&[f32]> = members.iter().map(|m| m.as_slice()).collect();
        let h = SplitPolicy {
            segment_index: 0,
            attribute: Attribute::Mean,
            kind: SplitKind::HSplit,
            threshold: 0.0,
        };
        let out = split_node(&seg, &h, &refs).unwrap();
        assert_eq!(out.left.members, vec![0, 2]);
        assert_eq!(out.right.members, vec![1, 3]);
        assert_eq!(out.segmentation, seg);

        let v = SplitPolicy {
            segment_index: 0,
            attribute: Attribute::Mean,
            kind: SplitKind::VSplit {
                split_point: 4,
                upper_half: false,
            },
            threshold: 0.0,
        };
        let out = split_node(&seg, &v, &refs).unwrap();
        assert_eq!(out.segmentation.ends(), &[4, 8]);
        assert_eq!(out.left.synopsis.len(), 2);
        let mut union: Vec<usize> = out.left.members.iter().chain(&out.right.members).copied().collect();
        union.sort();
        assert_eq!(union, vec![0, 1, 2, 3]);
    }

    fn leaf(seg: Segmentation, parent: Option<usize>, first: u64, count: u64) -> TreeNode {
        TreeNode {
            synopsis: Synopsis::empty(seg.len()),
            segmentation: seg,
            size: count,
            parent,
            kind: NodeKind::Leaf(FilePosition { first, count }),
        }
    }

    #[test]
    fn tree_routing_and_orders() {
        let root_seg = Segmentation::whole(4);
        let policy = SplitPolicy {
            segment_index: 0,
            attribute: Attribute::Mean,
            kind: SplitKind::VSplit {
                split_point: 2,
                upper_half: true,
            },
            threshold: 0.0,
        };
        let child_seg = policy.child_segmentation(&root_seg).unwrap();
        let nodes = vec![
            TreeNode {
                synopsis: Synopsis::empty(1),
                segmentation: root_seg,
                size: 3,
                parent: None,
                kind: NodeKind::Internal {
                    policy,
                    left: 1,
                    right: 2,
                },
            },
            leaf(child_seg.clone(), Some(0), 0, 1),
            leaf(child_seg, Some(0), 1, 2),
        ];
        let tree = Tree::from_nodes(4, nodes, 0).unwrap();
        assert_eq!(tree.leaves(), &[1, 2]);
        assert_eq!(tree.postorder(), vec![1, 2, 0]);
        assert_eq!(tree.route_to_leaf(0, &[5.0, 5.0, -1.0, -1.0]), 1);
        assert_eq!(tree.route_to_leaf(0, &[-5.0, -5.0, 1.0, 1.0]), 2);
        assert_eq!(tree.route_to_leaf(2, &[0.0; 4]), 2);
        assert_eq!(tree.ancestors(2).collect::<Vec<_>>(), vec![0]);
        assert_eq!(tree.depth(), 1);

        let single = Tree::from_nodes(4, vec![leaf(Segmentation::whole(4), None, 0, 0)], 0).unwrap();
        assert_eq!(single.route_to_leaf(0, &[1.0; 4]), 0);
    }

    #[test]
    fn tree_rejects_inconsistent_children() {
        let policy = SplitPolicy {
            segment_index: 0,
            attribute: Attribute::Sd,
            kind: SplitKind::HSplit,
            threshold: 0.5,
        };
        let nodes = vec![
            TreeNode {
                synopsis: Synopsis::empty(1),
                segmentation: Segmentation::whole(4),
                size: 0,
                parent: None,
                kind: NodeKind::Internal {
                    policy,
                    left: 1,
                    right: 2,
                },
            },
            leaf(Segmentation::new(vec![2, 4]).unwrap(), Some(0), 0, 0),
            leaf(Segmentation::whole(4), Some(0), 0, 0),
        ];
        assert!(Tree::from_nodes(4, nodes, 0).is_err());
    }
}
