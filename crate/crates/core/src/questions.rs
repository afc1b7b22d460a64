//! Data-driven question sets.
//!
//! Characters are embedded by their per-position state means and split top
//! down with repeated 2-means; every node of the resulting binary tree is a
//! question (the set of characters below it).

use std::collections::{BTreeSet, BinaryHeap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use crate::binio;
use crate::corpus::seeded_rng;
use crate::error::{Error, Result};
use crate::gstats::{split_gain, GaussStats, StateStats, DEFAULT_VARIANCE_FLOOR};
use crate::order::MaxByGain;

/// A character's concatenated per-position means.
#[derive(Debug, Clone, PartialEq)]
pub struct CharEmbedding {
    pub ch: usize,
    pub vector: Vec<f64>,
    /// Total frame count over all positions.
    pub weight: f64,
}

/// Embeds every character of the statistics dump. Positions a character
/// never occupied fall back to that position's global mean.
pub fn embed_characters(stats: &StateStats) -> Result<Vec<CharEmbedding>> {
    if stats.vocab() == 0 || stats.positions() == 0 || stats.total_frames() == 0.0 {
        return Err(Error::EmptyStats);
    }
    let all: Vec<usize> = (0..stats.vocab()).collect();
    let global: Vec<Vec<f64>> = (0..stats.positions()).map(|p| stats.pooled(p, &all).mean()).collect();
    Ok((0..stats.vocab())
        .map(|ch| {
            let mut vector = Vec::with_capacity(stats.dim() * stats.positions());
            for (p, fallback) in global.iter().enumerate() {
                let s = stats.get(ch, p);
                if s.is_empty() {
                    vector.extend_from_slice(fallback);
                } else {
                    vector.extend(s.mean());
                }
            }
            CharEmbedding {
                ch,
                vector,
                weight: stats.char_frames(ch),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Question {
    pub id: usize,
    /// Sorted char ids.
    pub members: Vec<usize>,
    pub parent: Option<usize>,
    pub children: Option<(usize, usize)>,
}

impl Question {
    pub fn contains(&self, ch: usize) -> bool {
        self.members.binary_search(&ch).is_ok()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuestionSet {
    vocab: usize,
    questions: Vec<Question>,
}

impl QuestionSet {
    /// Builds a set from member lists, dropping duplicates (first kept) and
    /// inferring parent/child links from set inclusion.
    pub fn from_members(vocab: usize, sets: Vec<Vec<usize>>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut questions = Vec::new();
        for mut members in sets {
            members.sort_unstable();
            members.dedup();
            if members.is_empty() {
                return Err(Error::InvalidArgument("empty question".into()));
            }
            if let Some(&bad) = members.iter().find(|&&c| c >= vocab) {
                return Err(Error::VocabularyMismatch {
                    what: "question member vs vocabulary",
                    left: bad,
                    right: vocab,
                });
            }
            if seen.insert(members.clone()) {
                questions.push(Question {
                    id: questions.len(),
                    members,
                    parent: None,
                    children: None,
                });
            }
        }
        let mut set = QuestionSet { vocab, questions };
        set.link_tree();
        Ok(set)
    }

    fn link_tree(&mut self) {
        let sets: Vec<BTreeSet<usize>> = self
            .questions
            .iter()
            .map(|q| q.members.iter().copied().collect())
            .collect();
        for i in 0..sets.len() {
            let parent = (0..sets.len())
                .filter(|&j| j != i && sets[j].len() > sets[i].len() && sets[i].is_subset(&sets[j]))
                .min_by_key(|&j| (sets[j].len(), j));
            self.questions[i].parent = parent;
        }
        for i in 0..sets.len() {
            let kids: Vec<usize> = (0..sets.len())
                .filter(|&j| self.questions[j].parent == Some(i))
                .collect();
            if let [a, b] = kids[..] {
                let union: BTreeSet<usize> = sets[a].union(&sets[b]).copied().collect();
                if sets[a].is_disjoint(&sets[b]) && union == sets[i] {
                    self.questions[i].children = Some((a, b));
                }
            }
        }
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }

    pub fn questions(&self) -> &[Question] {
        &self.questions
    }

    pub fn get(&self, id: usize) -> &Question {
        &self.questions[id]
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        binio::write_text(path, &self.to_text())
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("PHMQ v1 V={}\n", self.vocab);
        for q in &self.questions {
            let _ = write!(out, "{}:", q.id);
            for c in &q.members {
                let _ = write!(out, " {c}");
            }
            out.push('\n');
        }
        out
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&binio::read_text(path)?)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::MalformedHeader("empty question file".into()))?;
        let vocab = header
            .strip_prefix("PHMQ v1 V=")
            .and_then(|v| v.trim().parse::<usize>().ok())
            .ok_or_else(|| Error::MalformedHeader(header.to_owned()))?;
        let mut sets = Vec::new();
        for (k, line) in lines.filter(|l| !l.trim().is_empty()).enumerate() {
            let (id, rest) = line
                .split_once(':')
                .ok_or_else(|| Error::MalformedRecord(line.to_owned()))?;
            if id.trim().parse::<usize>().ok() != Some(k) {
                return Err(Error::MalformedRecord(format!("question id out of order: {line}")));
            }
            let members = rest
                .split_whitespace()
                .map(|t| t.parse::<usize>().map_err(|_| Error::MalformedRecord(line.to_owned())))
                .collect::<Result<Vec<_>>>()?;
            sets.push(members);
        }
        Self::from_members(vocab, sets)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuestionOptions {
    pub restarts: usize,
    pub max_iters: usize,
    pub floor: f64,
    pub seed: u64,
}

impl Default for QuestionOptions {
    fn default() -> Self {
        QuestionOptions {
            restarts: 10,
            max_iters: 50,
            floor: DEFAULT_VARIANCE_FLOOR,
            seed: 0,
        }
    }
}

/// Weighted single-Gaussian statistics of a group of embeddings.
fn weighted_stats(emb: &[CharEmbedding], members: &[usize]) -> GaussStats {
    let dim = emb[0].vector.len();
    let mut n = 0.0;
    let mut sum = vec![0.0; dim];
    let mut sumsq = vec![0.0; dim];
    for &i in members {
        let e = &emb[i];
        // Characters never seen in training still need to be separable.
        let w = e.weight.max(1.0);
        n += w;
        for (d, &x) in e.vector.iter().enumerate() {
            sum[d] += w * x;
            sumsq[d] += w * x * x;
        }
    }
    GaussStats::from_parts(n, sum, sumsq).expect("weights are positive")
}

/// Likelihood gain of splitting `members` into `left` and the rest.
fn bipartition_gain(emb: &[CharEmbedding], left: &[usize], right: &[usize], floor: f64) -> f64 {
    let l = weighted_stats(emb, left);
    let r = weighted_stats(emb, right);
    let parent = l.merge(&r).expect("uniform dimension");
    split_gain(&parent, &l, &r, floor).expect("children are non-empty")
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn weighted_center(emb: &[CharEmbedding], members: &[usize]) -> Vec<f64> {
    weighted_stats(emb, members).mean()
}

/// One 2-means run from the given pair of seed members. Both sides of the
/// result are non-empty; the side holding the smallest member comes first.
fn two_means(
    emb: &[CharEmbedding],
    members: &[usize],
    init: (usize, usize),
    max_iters: usize,
) -> (Vec<usize>, Vec<usize>) {
    let mut centers = [emb[init.0].vector.clone(), emb[init.1].vector.clone()];
    let mut assign: Vec<u8> = vec![2; members.len()];
    for _ in 0..max_iters.max(1) {
        let next: Vec<u8> = members
            .iter()
            .map(|&i| {
                let v = &emb[i].vector;
                u8::from(sq_dist(v, &centers[1]) < sq_dist(v, &centers[0]))
            })
            .collect();
        let mut next = next;
        for side in 0..2u8 {
            if next.iter().all(|&a| a != side) {
                // Re-seed an empty side with the member farthest from the
                // other center; the lowest index wins ties.
                let other = &centers[usize::from(1 - side)];
                let mut far = 0;
                let mut far_d = f64::NEG_INFINITY;
                for (k, &i) in members.iter().enumerate() {
                    let d = sq_dist(&emb[i].vector, other);
                    if d > far_d {
                        far = k;
                        far_d = d;
                    }
                }
                next[far] = side;
            }
        }
        let converged = next == assign;
        assign = next;
        for (side, center) in centers.iter_mut().enumerate() {
            let group: Vec<usize> = members
                .iter()
                .zip(&assign)
                .filter(|(_, &a)| usize::from(a) == side)
                .map(|(&i, _)| i)
                .collect();
            *center = weighted_center(emb, &group);
        }
        if converged {
            break;
        }
    }
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for (&i, &s) in members.iter().zip(&assign) {
        if s == 0 {
            a.push(i);
        } else {
            b.push(i);
        }
    }
    if b.first() < a.first() {
        std::mem::swap(&mut a, &mut b);
    }
    (a, b)
}

struct Split {
    left: Vec<usize>,
    right: Vec<usize>,
    gain: f64,
}

/// Best of `restarts` 2-means runs, scored by likelihood gain; ties go to
/// the lexicographically smallest left side.
fn best_split(emb: &[CharEmbedding], members: &[usize], node: usize, opts: &QuestionOptions) -> Split {
    let mut rng = seeded_rng(opts.seed);
    rng.set_stream(node as u64);
    let m = members.len() as u32;
    let inits: Vec<(usize, usize)> = (0..opts.restarts.max(1))
        .map(|_| {
            let a = rng.random_range(0..m);
            let mut b = rng.random_range(0..m - 1);
            if b >= a {
                b += 1;
            }
            (members[a as usize], members[b as usize])
        })
        .collect();
    let candidates: Vec<Split> = inits
        .par_iter()
        .map(|&init| {
            let (left, right) = two_means(emb, members, init, opts.max_iters);
            let gain = bipartition_gain(emb, &left, &right, opts.floor);
            Split { left, right, gain }
        })
        .collect();
    candidates
        .into_iter()
        .reduce(|best, c| {
            if c.gain > best.gain || (c.gain == best.gain && c.left < best.left) {
                c
            } else {
                best
            }
        })
        .expect("at least one restart")
}

/// Grows the question tree until every leaf is a single character, always
/// splitting the frontier node with the largest likelihood gain next.
pub fn build_question_set(embeddings: &[CharEmbedding], opts: &QuestionOptions) -> Result<QuestionSet> {
    if embeddings.is_empty() {
        return Err(Error::EmptyStats);
    }
    if opts.restarts == 0 {
        return Err(Error::InvalidArgument("restarts must be at least 1".into()));
    }
    let dim = embeddings[0].vector.len();
    for (i, e) in embeddings.iter().enumerate() {
        if e.ch != i {
            return Err(Error::InvalidArgument("embeddings must be ordered by char id".into()));
        }
        if e.vector.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: e.vector.len(),
            });
        }
        if e.vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("embedding {i} not finite")));
        }
    }
    let vocab = embeddings.len();
    let mut questions = vec![Question {
        id: 0,
        members: (0..vocab).collect(),
        parent: None,
        children: None,
    }];
    let mut pending: Vec<Option<Split>> = vec![None];
    let mut heap = BinaryHeap::new();

    let schedule =
        |node: usize, questions: &[Question], pending: &mut Vec<Option<Split>>, heap: &mut BinaryHeap<MaxByGain>| {
            if questions[node].members.len() >= 2 {
                let split = best_split(embeddings, &questions[node].members, node, opts);
                heap.push(MaxByGain::new(split.gain, node));
                pending[node] = Some(split);
            }
        };
    schedule(0, &questions, &mut pending, &mut heap);
    while let Some(top) = heap.pop() {
        let node = top.id;
        let split = pending[node].take().expect("scheduled node has a split");
        let l = questions.len();
        let r = l + 1;
        questions[node].children = Some((l, r));
        for (id, members) in [(l, split.left), (r, split.right)] {
            questions.push(Question {
                id,
                members,
                parent: Some(node),
                children: None,
            });
            pending.push(None);
        }
        schedule(l, &questions, &mut pending, &mut heap);
        schedule(r, &questions, &mut pending, &mut heap);
    }
    Ok(QuestionSet { vocab, questions })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emb1(values: &[f64]) -> Vec<CharEmbedding> {
        values
            .iter()
            .enumerate()
            .map(|(ch, &v)| CharEmbedding {
                ch,
                vector: vec![v],
                weight: 1.0,
            })
            .collect()
    }

    #[test]
    fn embedding_concatenates_means() {
        let mut st = StateStats::new(1, 2, 1);
        st.get_mut(0, 0).accumulate(&[0.0]).unwrap();
        st.get_mut(0, 1).accumulate(&[3.0]).unwrap();
        let e = embed_characters(&st).unwrap();
        assert_eq!(e[0].vector, vec![0.0, 3.0]);
        assert_eq!(e[0].weight, 2.0);
    }

    #[test]
    fn missing_position_uses_global_mean() {
        let mut st = StateStats::new(2, 2, 1);
        st.get_mut(0, 0).accumulate(&[1.0]).unwrap();
        st.get_mut(0, 1).accumulate(&[2.0]).unwrap();
        st.get_mut(1, 0).accumulate(&[5.0]).unwrap();
        st.get_mut(0, 1).accumulate(&[4.0]).unwrap();
        let e = embed_characters(&st).unwrap();
        assert_eq!(e[1].vector, vec![5.0, 3.0]);
        assert!(matches!(
            embed_characters(&StateStats::new(2, 2, 1)),
            Err(Error::EmptyStats)
        ));
    }

    #[test]
    fn sizes_follow_full_binary_tree() {
        let one = build_question_set(&emb1(&[4.0]), &QuestionOptions::default()).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one.get(0).members, vec![0]);
        let three = build_question_set(&emb1(&[0.0, 0.1, 10.0]), &QuestionOptions::default()).unwrap();
        assert_eq!(three.len(), 5);
    }

    #[test]
    fn first_split_isolates_outlier() {
        let emb = emb1(&[0.0, 0.1, 10.0]);
        // Exhaustive oracle over the three bipartitions.
        let parts: [(&[usize], &[usize]); 3] = [(&[0], &[1, 2]), (&[1], &[0, 2]), (&[2], &[0, 1])];
        let best = parts
            .iter()
            .max_by(|a, b| bipartition_gain(&emb, a.0, a.1, 1e-4).total_cmp(&bipartition_gain(&emb, b.0, b.1, 1e-4)))
            .unwrap();
        assert_eq!(best.0, &[2]);
        let qs = build_question_set(&emb, &QuestionOptions::default()).unwrap();
        let (l, r) = qs.get(0).children.unwrap();
        assert_eq!(qs.get(l).members, vec![0, 1]);
        assert_eq!(qs.get(r).members, vec![2]);
    }

    #[test]
    fn identical_embeddings_still_split() {
        let qs = build_question_set(&emb1(&[1.0; 4]), &QuestionOptions::default()).unwrap();
        assert_eq!(qs.len(), 7);
    }

    #[test]
    fn text_round_trip_keeps_tree() {
        let emb = emb1(&[0.0, 0.5, 9.0, 9.5, 20.0]);
        let qs = build_question_set(&emb, &QuestionOptions::default()).unwrap();
        let back = QuestionSet::parse(&qs.to_text()).unwrap();
        assert_eq!(back, qs);
        assert!(QuestionSet::parse("PHMQ v2 V=3\n").is_err());
    }

    #[test]
    fn duplicates_are_dropped() {
        let qs = QuestionSet::from_members(3, vec![vec![0, 1], vec![1, 0], vec![2]]).unwrap();
        assert_eq!(qs.len(), 2);
    }
}
