//! Two-step state tying.
//!
//! The first step grows one binary decision tree per state position. All
//! trees share a single max-priority queue keyed by the best question's
//! likelihood gain, so positions compete for the leaf budget. The second
//! step pools the resulting leaves bottom-up, always merging the pair whose
//! pooling loses the least likelihood, until exactly the target number of
//! tied states remains.

use std::collections::{BTreeMap, BinaryHeap};
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::binio;
use crate::error::{Error, Result};
use crate::gstats::{pooling_cost, split_gain, GaussStats, StateStats, DEFAULT_VARIANCE_FLOOR};
use crate::order::{MaxByGain, MinByLoss};
use crate::questions::QuestionSet;

/// Maps every `(char, position)` onto a tied-state id in `0..n_total`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateTying {
    vocab: usize,
    positions: usize,
    map: Vec<usize>,
    n_total: usize,
}

impl StateTying {
    /// Builds a tying from a dense map, checking that ids are dense.
    pub fn new(vocab: usize, positions: usize, map: Vec<usize>) -> Result<Self> {
        if map.len() != vocab * positions {
            return Err(Error::CountMismatch {
                what: "tying entries vs vocab*positions",
                left: map.len(),
                right: vocab * positions,
            });
        }
        let n_total = map.iter().map(|&t| t + 1).max().unwrap_or(0);
        let mut used = vec![false; n_total];
        for &t in &map {
            used[t] = true;
        }
        if used.iter().any(|u| !u) {
            return Err(Error::InvalidArgument("tied-state ids are not dense".into()));
        }
        Ok(StateTying {
            vocab,
            positions,
            map,
            n_total,
        })
    }

    /// One tied state per `(char, position)`.
    pub fn untied(vocab: usize, positions: usize) -> Self {
        StateTying {
            vocab,
            positions,
            map: (0..vocab * positions).collect(),
            n_total: vocab * positions,
        }
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn positions(&self) -> usize {
        self.positions
    }

    pub fn n_total(&self) -> usize {
        self.n_total
    }

    /// Average number of tied states per character.
    pub fn states_per_char(&self) -> f64 {
        self.n_total as f64 / self.vocab as f64
    }

    pub fn tied(&self, ch: usize, pos: usize) -> usize {
        self.map[ch * self.positions + pos]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.map
    }

    /// `(char, position)` pairs sharing each tied state.
    pub fn users(&self) -> Vec<Vec<(usize, usize)>> {
        let mut out = vec![Vec::new(); self.n_total];
        for c in 0..self.vocab {
            for p in 0..self.positions {
                out[self.tied(c, p)].push((c, p));
            }
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("PHMT v1 N={}\n", self.n_total);
        for c in 0..self.vocab {
            for p in 0..self.positions {
                let _ = writeln!(out, "{c} {p} {}", self.tied(c, p));
            }
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        binio::write_text(path, &self.to_text())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&binio::read_text(path)?)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::MalformedHeader("empty tying file".into()))?;
        let n_total = header
            .strip_prefix("PHMT v1 N=")
            .and_then(|v| v.trim().parse::<usize>().ok())
            .ok_or_else(|| Error::MalformedHeader(header.to_owned()))?;
        let entries = parse_triples(lines)?;
        let vocab = entries.keys().map(|k| k.0 + 1).max().unwrap_or(0);
        let positions = entries.keys().map(|k| k.1 + 1).max().unwrap_or(0);
        if entries.len() != vocab * positions {
            return Err(Error::MalformedRecord("tying table is not a full grid".into()));
        }
        let tying = StateTying::new(vocab, positions, entries.into_values().collect())?;
        if tying.n_total != n_total {
            return Err(Error::CountMismatch {
                what: "tied states in header vs table",
                left: n_total,
                right: tying.n_total,
            });
        }
        Ok(tying)
    }
}

fn parse_triples<'a>(lines: impl Iterator<Item = &'a str>) -> Result<BTreeMap<(usize, usize), usize>> {
    let mut out = BTreeMap::new();
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let nums = line
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::MalformedRecord(line.to_owned()))?;
        let [c, p, v] = nums[..] else {
            return Err(Error::MalformedRecord(line.to_owned()));
        };
        if out.insert((c, p), v).is_some() {
            return Err(Error::MalformedRecord(format!("duplicate entry {c} {p}")));
        }
    }
    Ok(out)
}

/// The generator's state sharing: `(char, position)` → identity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruthTying {
    ids: Vec<Vec<usize>>,
}

impl GroundTruthTying {
    pub fn new(ids: Vec<Vec<usize>>) -> Result<Self> {
        if ids.iter().any(Vec::is_empty) {
            return Err(Error::InvalidArgument("character without states".into()));
        }
        Ok(GroundTruthTying { ids })
    }

    pub fn vocab(&self) -> usize {
        self.ids.len()
    }

    pub fn positions_of(&self, ch: usize) -> usize {
        self.ids[ch].len()
    }

    pub fn identity(&self, ch: usize, pos: usize) -> usize {
        self.ids[ch][pos]
    }

    /// Number of distinct identities actually used.
    pub fn n_identities(&self) -> usize {
        let mut seen: Vec<usize> = self.ids.iter().flatten().copied().collect();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("PHMG v1 K={}\n", self.n_identities());
        for (c, row) in self.ids.iter().enumerate() {
            for (p, id) in row.iter().enumerate() {
                let _ = writeln!(out, "{c} {p} {id}");
            }
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        binio::write_text(path, &self.to_text())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = binio::read_text(path)?;
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        if !header.starts_with("PHMG v1") {
            return Err(Error::MalformedHeader(header.to_owned()));
        }
        let mut ids: Vec<Vec<usize>> = Vec::new();
        for ((c, p), v) in parse_triples(lines)? {
            if c >= ids.len() {
                ids.resize(c + 1, Vec::new());
            }
            if p != ids[c].len() {
                return Err(Error::MalformedRecord(format!("gap at char {c} position {p}")));
            }
            ids[c].push(v);
        }
        Self::new(ids)
    }
}

/// Fraction of `(char, position)` keys whose cluster's majority identity
/// matches their own, i.e. the size-weighted mean cluster purity.
pub fn tying_purity(tying: &StateTying, truth: &GroundTruthTying) -> Result<f64> {
    if truth.vocab() != tying.vocab() || (0..truth.vocab()).any(|c| truth.positions_of(c) != tying.positions()) {
        return Err(Error::KeySetMismatch);
    }
    let mut counts: Vec<BTreeMap<usize, usize>> = vec![BTreeMap::new(); tying.n_total()];
    for c in 0..tying.vocab() {
        for p in 0..tying.positions() {
            *counts[tying.tied(c, p)].entry(truth.identity(c, p)).or_default() += 1;
        }
    }
    let majority: usize = counts.iter().map(|m| m.values().copied().max().unwrap_or(0)).sum();
    Ok(majority as f64 / (tying.vocab() * tying.positions()) as f64)
}

/// An applied split of a tree node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeSplit {
    pub question: usize,
    /// Child holding the question's members.
    pub yes: usize,
    pub no: usize,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub id: usize,
    pub position: usize,
    /// Sorted char ids whose state at `position` falls in this node.
    pub members: Vec<usize>,
    pub stats: GaussStats,
    /// Best admissible question and its gain, if any.
    pub best: Option<(usize, f64)>,
    pub split: Option<NodeSplit>,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.split.is_none()
    }
}

/// The first-step trees, one root per position.
#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    pub nodes: Vec<TreeNode>,
    pub roots: Vec<usize>,
    /// Split node ids in the order they were applied.
    pub applied: Vec<usize>,
}

impl Forest {
    pub fn leaves(&self) -> impl Iterator<Item = &TreeNode> {
        self.nodes.iter().filter(|n| n.is_leaf())
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves().count()
    }

    pub fn root_loglik(&self, floor: f64) -> f64 {
        self.roots
            .iter()
            .map(|&r| self.nodes[r].stats.expected_loglik(floor))
            .sum()
    }

    pub fn applied_gains(&self) -> impl Iterator<Item = f64> + '_ {
        self.applied
            .iter()
            .map(|&n| self.nodes[n].split.expect("applied node is split").gain)
    }

    /// Graphviz rendering of the tree at one position.
    pub fn to_dot(&self, position: usize) -> String {
        let mut out = format!("digraph position{position} {{\n");
        for n in self.nodes.iter().filter(|n| n.position == position) {
            let label = match n.split {
                Some(s) => format!("q{} n={} gain={:.3}", s.question, n.stats.count(), s.gain),
                None => format!("leaf n={} chars={:?}", n.stats.count(), n.members),
            };
            let _ = writeln!(out, "  n{} [label=\"{}\"];", n.id, label);
            if let Some(s) = n.split {
                let _ = writeln!(out, "  n{} -> n{} [label=\"yes\"];", n.id, s.yes);
                let _ = writeln!(out, "  n{} -> n{} [label=\"no\"];", n.id, s.no);
            }
        }
        out.push_str("}\n");
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrowOptions {
    pub max_leaves: usize,
    pub min_count: f64,
    pub floor: f64,
    /// Characters left out of the trees.
    pub exclude: Vec<usize>,
}

/// Best admissible question for a node: both sides non-empty with at least
/// `min_count` frames, positive gain. Ties go to the smaller question id.
fn best_question(
    stats: &StateStats,
    questions: &QuestionSet,
    position: usize,
    members: &[usize],
    node_stats: &GaussStats,
    min_count: f64,
    floor: f64,
) -> Option<(usize, f64)> {
    questions
        .questions()
        .par_iter()
        .filter_map(|q| {
            let (yes, no): (Vec<usize>, Vec<usize>) = members.iter().partition(|&&c| q.contains(c));
            if yes.is_empty() || no.is_empty() {
                return None;
            }
            let ys = stats.pooled(position, &yes);
            let ns = stats.pooled(position, &no);
            if ys.is_empty() || ns.is_empty() || ys.count() < min_count || ns.count() < min_count {
                return None;
            }
            let gain = split_gain(node_stats, &ys, &ns, floor).ok()?;
            (gain > 0.0).then_some((q.id, gain))
        })
        .reduce_with(|a, b| if b.1 > a.1 || (b.1 == a.1 && b.0 < a.0) { b } else { a })
}

/// Grows per-position trees under one global max-priority queue until the
/// forest has `max_leaves` leaves or no admissible split remains.
pub fn grow_trees(stats: &StateStats, questions: &QuestionSet, opts: &GrowOptions) -> Result<Forest> {
    if stats.total_frames() == 0.0 {
        return Err(Error::EmptyStats);
    }
    if questions.vocab() != stats.vocab() {
        return Err(Error::VocabularyMismatch {
            what: "question set vs statistics",
            left: questions.vocab(),
            right: stats.vocab(),
        });
    }
    let positions = stats.positions();
    if opts.max_leaves < positions {
        return Err(Error::InvalidArgument(format!(
            "leaf budget {} below position count {positions}",
            opts.max_leaves
        )));
    }
    if !(opts.min_count >= 0.0) {
        return Err(Error::InvalidArgument("min_count must be non-negative".into()));
    }
    let members: Vec<usize> = (0..stats.vocab()).filter(|c| !opts.exclude.contains(c)).collect();
    if members.is_empty() {
        return Err(Error::InvalidArgument("every character is excluded".into()));
    }

    let make_node = |id: usize, position: usize, members: Vec<usize>, node_stats: GaussStats| {
        let best = best_question(
            stats,
            questions,
            position,
            &members,
            &node_stats,
            opts.min_count,
            opts.floor,
        );
        TreeNode {
            id,
            position,
            members,
            stats: node_stats,
            best,
            split: None,
        }
    };

    let mut nodes = Vec::new();
    let mut heap = BinaryHeap::new();
    for p in 0..positions {
        let node = make_node(p, p, members.clone(), stats.pooled(p, &members));
        if let Some((_, gain)) = node.best {
            heap.push(MaxByGain::new(gain, node.id));
        }
        nodes.push(node);
    }
    let roots: Vec<usize> = (0..positions).collect();
    let mut applied = Vec::new();
    let mut leaves = positions;
    while leaves < opts.max_leaves {
        let Some(top) = heap.pop() else { break };
        let id = top.id;
        let (question, gain) = nodes[id].best.expect("queued node has a question");
        let position = nodes[id].position;
        let q = questions.get(question);
        let (yes, no): (Vec<usize>, Vec<usize>) = nodes[id].members.iter().partition(|&&c| q.contains(c));
        let yes_id = nodes.len();
        let no_id = yes_id + 1;
        let yes_stats = stats.pooled(position, &yes);
        let no_stats = stats.pooled(position, &no);
        nodes[id].split = Some(NodeSplit {
            question,
            yes: yes_id,
            no: no_id,
            gain,
        });
        for (child_id, child_members, child_stats) in [(yes_id, yes, yes_stats), (no_id, no, no_stats)] {
            let child = make_node(child_id, position, child_members, child_stats);
            if let Some((_, g)) = child.best {
                heap.push(MaxByGain::new(g, child_id));
            }
            nodes.push(child);
        }
        applied.push(id);
        leaves += 1;
    }
    Ok(Forest { nodes, roots, applied })
}

/// A group of `(char, position)` keys pooled into one state.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub position: usize,
    /// Sorted `(char, position)` keys.
    pub members: Vec<(usize, usize)>,
    pub stats: GaussStats,
}

impl Cluster {
    pub fn from_leaf(node: &TreeNode) -> Self {
        Cluster {
            position: node.position,
            members: node.members.iter().map(|&c| (c, node.position)).collect(),
            stats: node.stats.clone(),
        }
    }
}

/// One second-step merge. Cluster ids index the initial leaves first, then
/// merged clusters in creation order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergeStep {
    pub a: usize,
    pub b: usize,
    pub merged: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reclustering {
    /// Final clusters, ordered by their smallest `(position, char)` key.
    pub clusters: Vec<Cluster>,
    pub merges: Vec<MergeStep>,
}

impl Reclustering {
    pub fn total_loglik(&self, floor: f64) -> f64 {
        self.clusters.iter().map(|c| c.stats.expected_loglik(floor)).sum()
    }
}

/// Greedily pools the cheapest pair of clusters until `target` remain.
/// Unless `cross_position` is set, only clusters of equal position pool.
pub fn recluster(leaves: &[Cluster], target: usize, cross_position: bool, floor: f64) -> Result<Reclustering> {
    if target == 0 {
        return Err(Error::InvalidArgument("target must be at least 1".into()));
    }
    if target > leaves.len() {
        return Err(Error::Infeasible(format!(
            "target {target} exceeds {} leaves",
            leaves.len()
        )));
    }
    if !cross_position {
        let mut positions: Vec<usize> = leaves.iter().map(|l| l.position).collect();
        positions.sort_unstable();
        positions.dedup();
        if target < positions.len() {
            return Err(Error::Infeasible(format!(
                "target {target} below {} positions without cross-position merging",
                positions.len()
            )));
        }
    }
    let mut clusters: Vec<Option<Cluster>> = leaves.iter().cloned().map(Some).collect();
    let mut heap = BinaryHeap::new();
    let admissible = |a: &Cluster, b: &Cluster| cross_position || a.position == b.position;
    for i in 0..leaves.len() {
        for j in i + 1..leaves.len() {
            if admissible(&leaves[i], &leaves[j]) {
                let loss = pooling_cost(&leaves[i].stats, &leaves[j].stats, floor);
                heap.push(MinByLoss { loss, a: i, b: j });
            }
        }
    }
    let mut alive = leaves.len();
    let mut merges = Vec::new();
    while alive > target {
        let Some(MinByLoss { loss, a, b }) = heap.pop() else {
            return Err(Error::Infeasible("no admissible merge left".into()));
        };
        if clusters[a].is_none() || clusters[b].is_none() {
            continue;
        }
        let ca = clusters[a].take().expect("alive");
        let cb = clusters[b].take().expect("alive");
        let mut members = ca.members;
        members.extend(cb.members);
        members.sort_unstable();
        let merged = Cluster {
            position: ca.position.min(cb.position),
            members,
            stats: ca.stats.merge(&cb.stats)?,
        };
        let id = clusters.len();
        for (k, other) in clusters.iter().enumerate() {
            if let Some(other) = other {
                if admissible(other, &merged) {
                    let loss = pooling_cost(&other.stats, &merged.stats, floor);
                    heap.push(MinByLoss { loss, a: k, b: id });
                }
            }
        }
        clusters.push(Some(merged));
        merges.push(MergeStep { a, b, merged: id, loss });
        alive -= 1;
    }
    let mut clusters: Vec<Cluster> = clusters.into_iter().flatten().collect();
    clusters.sort_by_key(|c| {
        c.members
            .iter()
            .map(|&(ch, p)| (p, ch))
            .min()
            .expect("clusters are non-empty")
    });
    Ok(Reclustering { clusters, merges })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TyingOptions {
    /// First-step leaf budget as a multiple of the target.
    pub expansion: f64,
    pub min_count: f64,
    pub floor: f64,
    pub cross_position: bool,
    /// Characters kept untied, e.g. blank models.
    pub exclude: Vec<usize>,
}

impl Default for TyingOptions {
    fn default() -> Self {
        TyingOptions {
            expansion: 2.0,
            min_count: 10.0,
            floor: DEFAULT_VARIANCE_FLOOR,
            cross_position: false,
            exclude: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TyingOutcome {
    pub tying: StateTying,
    pub forest: Forest,
    pub reclustering: Reclustering,
    /// Leaves handed to the second step, in cluster-id order.
    pub leaves: Vec<Cluster>,
}

/// Runs both steps and returns a tying with exactly `target_n` states.
pub fn tie_states(
    stats: &StateStats,
    questions: &QuestionSet,
    target_n: usize,
    opts: &TyingOptions,
) -> Result<TyingOutcome> {
    let vocab = stats.vocab();
    let positions = stats.positions();
    if !(opts.expansion >= 1.0) {
        return Err(Error::InvalidArgument("expansion must be at least 1".into()));
    }
    let mut exclude = opts.exclude.clone();
    exclude.sort_unstable();
    exclude.dedup();
    if let Some(&bad) = exclude.iter().find(|&&c| c >= vocab) {
        return Err(Error::VocabularyMismatch {
            what: "excluded char vs vocabulary",
            left: bad,
            right: vocab,
        });
    }
    let fixed = exclude.len() * positions;
    let tied_chars = vocab - exclude.len();
    if target_n <= fixed {
        return Err(Error::Infeasible(format!(
            "target {target_n} leaves no states for tying after {fixed} excluded states"
        )));
    }
    let target = target_n - fixed;
    let budget = ((opts.expansion * target as f64).ceil() as usize)
        .min(tied_chars * positions)
        .max(positions);
    let forest = grow_trees(
        stats,
        questions,
        &GrowOptions {
            max_leaves: budget,
            min_count: opts.min_count,
            floor: opts.floor,
            exclude: exclude.clone(),
        },
    )?;
    let leaves: Vec<Cluster> = forest.leaves().map(Cluster::from_leaf).collect();
    if leaves.len() < target {
        return Err(Error::Infeasible(format!(
            "first step reached only {} leaves for a target of {target}",
            leaves.len()
        )));
    }
    let reclustering = recluster(&leaves, target, opts.cross_position, opts.floor)?;

    let mut map = vec![usize::MAX; vocab * positions];
    for (id, cluster) in reclustering.clusters.iter().enumerate() {
        for &(c, p) in &cluster.members {
            map[c * positions + p] = id;
        }
    }
    let mut next = reclustering.clusters.len();
    for &c in &exclude {
        for p in 0..positions {
            map[c * positions + p] = next;
            next += 1;
        }
    }
    let tying = StateTying::new(vocab, positions, map)?;
    debug_assert_eq!(tying.n_total(), target_n);
    Ok(TyingOutcome {
        tying,
        forest,
        reclustering,
        leaves,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats_from(cells: &[&[&[f64]]]) -> StateStats {
        // cells[char][pos] = samples (D = 1)
        let positions = cells[0].len();
        let mut st = StateStats::new(cells.len(), positions, 1);
        for (c, row) in cells.iter().enumerate() {
            for (p, samples) in row.iter().enumerate() {
                for &x in samples.iter() {
                    st.get_mut(c, p).accumulate(&[x]).unwrap();
                }
            }
        }
        st
    }

    fn singletons_and_root(v: usize) -> QuestionSet {
        let mut sets = vec![(0..v).collect::<Vec<_>>()];
        sets.extend((0..v).map(|c| vec![c]));
        QuestionSet::from_members(v, sets).unwrap()
    }

    fn opts(max_leaves: usize) -> GrowOptions {
        GrowOptions {
            max_leaves,
            min_count: 0.0,
            floor: 1e-4,
            exclude: vec![],
        }
    }

    #[test]
    fn budget_equal_to_positions_grows_nothing() {
        let st = stats_from(&[&[&[0.0, 1.0], &[5.0, 6.0]], &[&[9.0, 8.0], &[1.0, 2.0]]]);
        let f = grow_trees(&st, &singletons_and_root(2), &opts(2)).unwrap();
        assert_eq!(f.leaf_count(), 2);
        assert!(f.applied.is_empty());
    }

    #[test]
    fn identical_position_is_not_split() {
        let same: &[f64] = &[0.0, 1.0, 2.0];
        let st = stats_from(&[&[same, &[10.0, 11.0, 12.0]], &[same, &[-10.0, -11.0, -12.0]]]);
        let f = grow_trees(&st, &singletons_and_root(2), &opts(3)).unwrap();
        assert_eq!(f.applied.len(), 1);
        assert_eq!(f.nodes[f.applied[0]].position, 1);
        // Further budget cannot split position 0: its only split gains 0.
        let f = grow_trees(&st, &singletons_and_root(2), &opts(4)).unwrap();
        assert_eq!(f.leaf_count(), 3);
    }

    #[test]
    fn vocabulary_mismatch() {
        let st = stats_from(&[&[&[0.0, 1.0]], &[&[2.0, 3.0]]]);
        assert!(matches!(
            grow_trees(&st, &singletons_and_root(3), &opts(2)),
            Err(Error::VocabularyMismatch { .. })
        ));
        assert!(matches!(
            grow_trees(&StateStats::new(2, 1, 1), &singletons_and_root(2), &opts(2)),
            Err(Error::EmptyStats)
        ));
    }

    fn leaf(position: usize, ch: usize, mean: f64) -> Cluster {
        // Ten samples with variance 1 around `mean`.
        let mut stats = GaussStats::new(1);
        for k in 0..10 {
            let x = mean + if k % 2 == 0 { 1.0 } else { -1.0 };
            stats.accumulate(&[x]).unwrap();
        }
        Cluster {
            position,
            members: vec![(ch, position)],
            stats,
        }
    }

    #[test]
    fn recluster_merges_closest_pair() {
        let leaves = vec![leaf(0, 0, 0.0), leaf(0, 1, 0.1), leaf(0, 2, 10.0)];
        // Exhaustive oracle over the three pairings.
        let pairs = [(0, 1), (0, 2), (1, 2)];
        let cheapest = pairs
            .iter()
            .min_by(|x, y| {
                pooling_cost(&leaves[x.0].stats, &leaves[x.1].stats, 1e-4).total_cmp(&pooling_cost(
                    &leaves[y.0].stats,
                    &leaves[y.1].stats,
                    1e-4,
                ))
            })
            .unwrap();
        assert_eq!(*cheapest, (0, 1));
        let r = recluster(&leaves, 2, false, 1e-4).unwrap();
        assert_eq!(r.clusters[0].members, vec![(0, 0), (1, 0)]);
        assert_eq!(r.clusters[1].members, vec![(2, 0)]);
    }

    #[test]
    fn recluster_identity_and_errors() {
        let leaves = vec![leaf(0, 0, 0.0), leaf(1, 0, 3.0)];
        let r = recluster(&leaves, 2, false, 1e-4).unwrap();
        assert!(r.merges.is_empty());
        assert!(matches!(recluster(&leaves, 3, false, 1e-4), Err(Error::Infeasible(_))));
        assert!(matches!(recluster(&leaves, 1, false, 1e-4), Err(Error::Infeasible(_))));
        assert_eq!(recluster(&leaves, 1, true, 1e-4).unwrap().clusters.len(), 1);
    }

    #[test]
    fn identical_leaves_merge_first_at_zero_cost() {
        let leaves = vec![leaf(0, 0, 0.0), leaf(0, 1, 5.0), leaf(0, 2, 5.0)];
        let r = recluster(&leaves, 2, false, 1e-4).unwrap();
        assert_eq!((r.merges[0].a, r.merges[0].b), (1, 2));
        assert!(r.merges[0].loss.abs() < 1e-9);
    }

    #[test]
    fn full_target_with_unit_expansion_is_untied() {
        let st = stats_from(&[
            &[&[0.0, 1.0, 2.0], &[5.0, 6.0, 7.5]],
            &[&[9.0, 8.0, 8.5], &[1.0, 2.0, 0.0]],
            &[&[-9.0, -8.0, -8.5], &[21.0, 22.0, 20.0]],
        ]);
        let opts = TyingOptions {
            expansion: 1.0,
            min_count: 0.0,
            ..TyingOptions::default()
        };
        let out = tie_states(&st, &singletons_and_root(3), 6, &opts).unwrap();
        let mut ids = out.tying.as_slice().to_vec();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 6);
    }

    #[test]
    fn excluded_chars_keep_their_own_states() {
        let st = stats_from(&[
            &[&[0.0, 1.0, 2.0], &[5.0, 6.0, 7.5]],
            &[&[0.5, 1.5, 2.5], &[5.5, 6.5, 7.0]],
            &[&[-9.0, -8.0, -8.5], &[21.0, 22.0, 20.0]],
        ]);
        let opts = TyingOptions {
            min_count: 0.0,
            exclude: vec![2],
            ..TyingOptions::default()
        };
        let out = tie_states(&st, &singletons_and_root(3), 4, &opts).unwrap();
        let t = &out.tying;
        assert_eq!(t.n_total(), 4);
        assert_eq!(t.tied(0, 0), t.tied(1, 0));
        assert_eq!(t.tied(0, 1), t.tied(1, 1));
        assert_ne!(t.tied(2, 0), t.tied(2, 1));
        assert_eq!(t.users()[t.tied(2, 0)], vec![(2, 0)]);
    }

    #[test]
    fn purity_examples() {
        let truth = GroundTruthTying::new(vec![vec![0, 1], vec![0, 2]]).unwrap();
        let same = StateTying::new(2, 2, vec![1, 0, 1, 2]).unwrap();
        assert_eq!(tying_purity(&same, &truth).unwrap(), 1.0);
        let lumped = StateTying::new(2, 2, vec![0, 0, 0, 0]).unwrap();
        let two = GroundTruthTying::new(vec![vec![0, 0], vec![1, 1]]).unwrap();
        assert_eq!(tying_purity(&lumped, &two).unwrap(), 0.5);
        let wrong = GroundTruthTying::new(vec![vec![0], vec![0]]).unwrap();
        assert!(matches!(tying_purity(&same, &wrong), Err(Error::KeySetMismatch)));
    }

    #[test]
    fn random_tying_purity_is_about_one_over_k() {
        use rand::Rng;
        let mut rng = crate::corpus::seeded_rng(4);
        let (vocab, k) = (4000, 4);
        let truth = GroundTruthTying::new((0..vocab).map(|c| vec![c % k]).collect()).unwrap();
        // Monte Carlo: assign keys to k clusters uniformly at random.
        let map: Vec<usize> = (0..vocab).map(|_| rng.random_range(0..k)).collect();
        let t = StateTying::new(vocab, 1, map).unwrap();
        let purity = tying_purity(&t, &truth).unwrap();
        assert!((purity - 1.0 / k as f64).abs() < 0.03, "{purity}");
    }

    #[test]
    fn tying_file_round_trip() {
        let t = StateTying::new(2, 3, vec![0, 1, 2, 0, 3, 2]).unwrap();
        assert_eq!(StateTying::parse(&t.to_text()).unwrap(), t);
        assert!(StateTying::parse("PHMT v1 N=9\n0 0 0\n").is_err());
        let g = GroundTruthTying::new(vec![vec![0, 1], vec![2]]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.txt");
        g.write(&p).unwrap();
        assert_eq!(GroundTruthTying::read(&p).unwrap(), g);
    }

    proptest::proptest! {
        #[test]
        fn tie_states_invariants(
            seed in 0u64..1000,
            vocab in 2usize..9,
            positions in 1usize..4,
            frac in 0.0f64..1.0,
            cross in proptest::bool::ANY,
        ) {
            use rand::Rng;
            let mut rng = crate::corpus::seeded_rng(seed);
            let mut stats = StateStats::new(vocab, positions, 1);
            for c in 0..vocab {
                for p in 0..positions {
                    let centre = rng.random_range(-5.0..5.0);
                    for _ in 0..rng.random_range(3..12) {
                        stats.get_mut(c, p).accumulate(&[centre + rng.random_range(-1.0..1.0)]).unwrap();
                    }
                }
            }
            let lowest = if cross { 1 } else { positions };
            let target = lowest + (frac * (vocab * positions - lowest) as f64) as usize;
            let opts = TyingOptions {
                min_count: 0.0,
                cross_position: cross,
                ..TyingOptions::default()
            };
            let out = tie_states(&stats, &singletons_and_root(vocab), target, &opts).unwrap();
            proptest::prop_assert_eq!(out.tying.n_total(), target);
            for (id, users) in out.tying.users().iter().enumerate() {
                proptest::prop_assert!(!users.is_empty(), "state {} unused", id);
                if !cross {
                    proptest::prop_assert!(users.iter().all(|&(_, p)| p == users[0].1));
                }
            }
            let gains: f64 = out.forest.applied_gains().sum();
            let losses: f64 = out.reclustering.merges.iter().map(|m| m.loss).sum();
            let total = out.reclustering.total_loglik(opts.floor);
            let expected = out.forest.root_loglik(opts.floor) + gains - losses;
            proptest::prop_assert!((total - expected).abs() <= 1e-6 * total.abs().max(1.0));
        }
    }
}
