//! Left-to-right GMM-HMMs over tied states: flat start, forced alignment,
//! Viterbi training with mixture growing, and tying statistics collection.
//!
//! Every character has `P` emitting positions traversed strictly left to
//! right without skips. A position either loops on itself or advances; the
//! advance out of the last position leaves the character. Emissions live on
//! tied states, so all positions mapped to one tied state share a single
//! [`Gmm`].
//!
//! Frame scores use the best mixture component rather than the component
//! sum, so that hard re-estimation never lowers the training objective.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use byteorder::{LittleEndian, WriteBytesExt};
use rayon::prelude::*;

use crate::binio;
use crate::corpus::{Corpus, FeatureSequence, Transcription};
use crate::error::{Error, Result};
use crate::gstats::{GaussStats, StateStats, DEFAULT_VARIANCE_FLOOR};
use crate::tying::StateTying;

const MODEL_MAGIC: &[u8; 4] = b"PHMM";
const MODEL_VERSION: u32 = 1;

/// Relative offset, in standard deviations, of the two halves of a split
/// mixture component.
const SPLIT_OFFSET: f64 = 0.2;

/// Diagonal Gaussian with cached normaliser.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    mean: Vec<f64>,
    var: Vec<f64>,
    inv_var: Vec<f64>,
    log_norm: f64,
}

impl Gaussian {
    pub fn new(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mean.len() != var.len() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                found: var.len(),
            });
        }
        if var.iter().any(|&v| !(v > 0.0) || !v.is_finite()) || mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidArgument("invalid Gaussian parameters".into()));
        }
        let log_norm = -0.5 * (mean.len() as f64 * (2.0 * PI).ln() + var.iter().map(|v| v.ln()).sum::<f64>());
        let inv_var = var.iter().map(|v| 1.0 / v).collect();
        Ok(Gaussian {
            mean,
            var,
            inv_var,
            log_norm,
        })
    }

    /// MLE fit with variance floor.
    pub fn from_stats(stats: &GaussStats, floor: f64) -> Result<Self> {
        if stats.is_empty() {
            return Err(Error::EmptyOperand("Gaussian fit"));
        }
        Gaussian::new(stats.mean(), stats.variance(floor))
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn var(&self) -> &[f64] {
        &self.var
    }

    pub fn log_density(&self, x: &[f32]) -> f64 {
        let mut q = 0.0;
        for ((&xi, m), iv) in x.iter().zip(&self.mean).zip(&self.inv_var) {
            let d = f64::from(xi) - m;
            q += d * d * iv;
        }
        self.log_norm - 0.5 * q
    }
}

/// Gaussian mixture emission of one tied state.
#[derive(Debug, Clone, PartialEq)]
pub struct Gmm {
    weights: Vec<f64>,
    log_weights: Vec<f64>,
    components: Vec<Gaussian>,
}

impl Gmm {
    pub fn new(weights: Vec<f64>, components: Vec<Gaussian>) -> Result<Self> {
        if weights.len() != components.len() || weights.is_empty() {
            return Err(Error::InvalidArgument("mixture weights and components differ".into()));
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|&w| !(w >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("mixture weights sum to {total}")));
        }
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        Ok(Gmm {
            weights,
            log_weights,
            components,
        })
    }

    pub fn single(g: Gaussian) -> Self {
        Gmm::new(vec![1.0], vec![g]).expect("one unit-weight component")
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[Gaussian] {
        &self.components
    }

    pub fn dim(&self) -> usize {
        self.components[0].mean.len()
    }

    /// Best component and its weighted log density.
    pub fn best_component(&self, x: &[f32]) -> (usize, f64) {
        let mut best = (0, f64::NEG_INFINITY);
        for (k, (g, lw)) in self.components.iter().zip(&self.log_weights).enumerate() {
            if *lw == f64::NEG_INFINITY {
                continue;
            }
            let s = lw + g.log_density(x);
            if s > best.1 {
                best = (k, s);
            }
        }
        best
    }

    pub fn log_density(&self, x: &[f32]) -> f64 {
        self.best_component(x).1
    }

    /// Splits the heaviest components (lowest index on ties) until the
    /// mixture has `target` components. Each split moves the two halves
    /// `±0.2σ` away from the mean and halves the weight.
    pub fn split_to(&mut self, target: usize) {
        while self.components.len() < target {
            let k =
                (0..self.weights.len()).fold(0, |best, i| if self.weights[i] > self.weights[best] { i } else { best });
            let g = &self.components[k];
            let sd: Vec<f64> = g.var.iter().map(|v| v.sqrt()).collect();
            let plus = g.mean.iter().zip(&sd).map(|(m, s)| m + SPLIT_OFFSET * s).collect();
            let minus = g.mean.iter().zip(&sd).map(|(m, s)| m - SPLIT_OFFSET * s).collect();
            let var = g.var.clone();
            let w = self.weights[k] / 2.0;
            self.components[k] = Gaussian::new(plus, var.clone()).expect("finite");
            self.components.push(Gaussian::new(minus, var).expect("finite"));
            self.weights[k] = w;
            self.weights.push(w);
        }
        self.log_weights = self.weights.iter().map(|w| w.ln()).collect();
    }

    pub fn parameter_count(&self) -> usize {
        self.components.len() * (2 * self.dim() + 1)
    }
}

/// Log-probabilities of staying in and leaving one position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub log_stay: f64,
    pub log_next: f64,
}

impl Transition {
    /// Add-one smoothed estimate from self-loop and advance counts.
    pub fn from_counts(stay: f64, next: f64) -> Self {
        let p = (stay + 1.0) / (stay + next + 2.0);
        Transition {
            log_stay: p.ln(),
            log_next: (1.0 - p).ln(),
        }
    }
}

/// Character HMMs over a tied-state pool.
#[derive(Debug, Clone, PartialEq)]
pub struct HmmModelSet {
    dim: usize,
    floor: f64,
    tying: StateTying,
    transitions: Vec<Transition>,
    emissions: Vec<Gmm>,
}

impl HmmModelSet {
    pub fn new(
        dim: usize,
        floor: f64,
        tying: StateTying,
        transitions: Vec<Transition>,
        emissions: Vec<Gmm>,
    ) -> Result<Self> {
        let keys = tying.vocab() * tying.positions();
        if transitions.len() != keys {
            return Err(Error::CountMismatch {
                what: "transitions vs states",
                left: transitions.len(),
                right: keys,
            });
        }
        if emissions.len() != tying.n_total() {
            return Err(Error::CountMismatch {
                what: "emissions vs tied states",
                left: emissions.len(),
                right: tying.n_total(),
            });
        }
        if let Some(g) = emissions.iter().find(|g| g.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: g.dim(),
            });
        }
        for t in &transitions {
            let total = t.log_stay.exp() + t.log_next.exp();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!("transition mass {total}")));
            }
        }
        Ok(HmmModelSet {
            dim,
            floor,
            tying,
            transitions,
            emissions,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn positions(&self) -> usize {
        self.tying.positions()
    }

    pub fn vocab(&self) -> usize {
        self.tying.vocab()
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn tying(&self) -> &StateTying {
        &self.tying
    }

    pub fn n_tied(&self) -> usize {
        self.emissions.len()
    }

    pub fn transition(&self, ch: usize, pos: usize) -> Transition {
        self.transitions[ch * self.positions() + pos]
    }

    pub fn emission(&self, tied: usize) -> &Gmm {
        &self.emissions[tied]
    }

    pub fn emission_mut(&mut self, tied: usize) -> &mut Gmm {
        &mut self.emissions[tied]
    }

    pub fn emission_for(&self, ch: usize, pos: usize) -> &Gmm {
        &self.emissions[self.tying.tied(ch, pos)]
    }

    pub fn emissions(&self) -> &[Gmm] {
        &self.emissions
    }

    pub fn max_mixtures(&self) -> usize {
        self.emissions.iter().map(Gmm::len).max().unwrap_or(0)
    }

    /// Emission parameters plus one free transition parameter per position.
    pub fn parameter_count(&self) -> usize {
        self.emissions.iter().map(Gmm::parameter_count).sum::<usize>() + self.transitions.len()
    }

    fn split_mixtures(&mut self, target: usize) {
        for g in &mut self.emissions {
            g.split_to(target);
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = binio::create(path)?;
        self.write_to(&mut w).map_err(|e| Error::io(path, e))
    }

    fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        binio::write_preamble(w, MODEL_MAGIC, MODEL_VERSION)?;
        for v in [self.dim, self.positions(), self.vocab(), self.n_tied()] {
            w.write_u32::<LittleEndian>(v as u32)?;
        }
        w.write_f64::<LittleEndian>(self.floor)?;
        for &t in self.tying.as_slice() {
            w.write_u32::<LittleEndian>(t as u32)?;
        }
        for t in &self.transitions {
            w.write_f64::<LittleEndian>(t.log_stay)?;
            w.write_f64::<LittleEndian>(t.log_next)?;
        }
        for g in &self.emissions {
            w.write_u32::<LittleEndian>(g.len() as u32)?;
            for (wt, c) in g.weights.iter().zip(&g.components) {
                w.write_f64::<LittleEndian>(*wt)?;
                binio::put_f64s(w, &c.mean)?;
                binio::put_f64s(w, &c.var)?;
            }
        }
        w.flush()
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = binio::open(path)?;
        binio::read_preamble(&mut r, MODEL_MAGIC, MODEL_VERSION)?;
        let dim = binio::u32_of(&mut r, "dimension")? as usize;
        let positions = binio::u32_of(&mut r, "positions")? as usize;
        let vocab = binio::u32_of(&mut r, "vocabulary")? as usize;
        let n_tied = binio::u32_of(&mut r, "tied-state count")? as usize;
        let floor = binio::f64_of(&mut r, "floor")?;
        if dim == 0 || positions == 0 || vocab == 0 {
            return Err(Error::MalformedHeader("zero model dimension".into()));
        }
        let map = (0..vocab * positions)
            .map(|_| binio::u32_of(&mut r, "tying entry").map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let tying = StateTying::new(vocab, positions, map)?;
        if tying.n_total() != n_tied {
            return Err(Error::MalformedRecord("tying table does not match header".into()));
        }
        let transitions = (0..vocab * positions)
            .map(|_| {
                Ok(Transition {
                    log_stay: binio::f64_of(&mut r, "transition")?,
                    log_next: binio::f64_of(&mut r, "transition")?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut emissions = Vec::with_capacity(n_tied);
        for _ in 0..n_tied {
            let m = binio::u32_of(&mut r, "mixture count")? as usize;
            let mut weights = Vec::with_capacity(m);
            let mut comps = Vec::with_capacity(m);
            for _ in 0..m {
                weights.push(binio::f64_of(&mut r, "weight")?);
                let mean = binio::f64s_of(&mut r, dim, "mean")?;
                let var = binio::f64s_of(&mut r, dim, "variance")?;
                comps.push(Gaussian::new(mean, var)?);
            }
            emissions.push(Gmm::new(weights, comps)?);
        }
        binio::expect_eof(&mut r)?;
        HmmModelSet::new(dim, floor, tying, transitions, emissions)
    }
}

/// One aligned frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AlignedFrame {
    /// Index of the character within the transcription.
    pub char_index: usize,
    pub ch: usize,
    pub pos: usize,
    pub tied: usize,
}

/// Frame-level state assignment of one sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alignment(pub Vec<AlignedFrame>);

impl Alignment {
    pub fn frames(&self) -> &[AlignedFrame] {
        &self.0
    }

    /// Durations of each `(char_index, pos)` run in order.
    pub fn runs(&self) -> Vec<(AlignedFrame, usize)> {
        let mut out: Vec<(AlignedFrame, usize)> = Vec::new();
        for f in &self.0 {
            match out.last_mut() {
                Some((g, n)) if g.char_index == f.char_index && g.pos == f.pos => *n += 1,
                _ => out.push((*f, 1)),
            }
        }
        out
    }
}

/// Renders alignments as `seq_id: (char,pos,tied) ...` lines.
pub fn alignments_to_text(alignments: &[Alignment]) -> String {
    let mut out = String::new();
    for (i, a) in alignments.iter().enumerate() {
        let _ = write!(out, "{i}:");
        for f in &a.0 {
            let _ = write!(out, " ({},{},{})", f.ch, f.pos, f.tied);
        }
        out.push('\n');
    }
    out
}

/// Builds the alignment in which every character state of the line gets
/// an equal share of the frames.
fn uniform_alignment(tying: &StateTying, len: usize, labels: &Transcription) -> Alignment {
    let p = tying.positions();
    let states = labels.len() * p;
    let mut frames = Vec::with_capacity(len);
    for k in 0..states {
        let (start, end) = (k * len / states, (k + 1) * len / states);
        let (char_index, pos) = (k / p, k % p);
        let ch = labels.0[char_index];
        for _ in start..end {
            frames.push(AlignedFrame {
                char_index,
                ch,
                pos,
                tied: tying.tied(ch, pos),
            });
        }
    }
    Alignment(frames)
}

/// Hard-assignment statistics for re-estimation.
struct Accumulators {
    /// Per tied state, per mixture component.
    emission: Vec<Vec<GaussStats>>,
    stay: Vec<f64>,
    next: Vec<f64>,
}

impl Accumulators {
    fn new(dim: usize, tying: &StateTying, mixtures: &[usize]) -> Self {
        Accumulators {
            emission: mixtures.iter().map(|&m| vec![GaussStats::new(dim); m]).collect(),
            stay: vec![0.0; tying.vocab() * tying.positions()],
            next: vec![0.0; tying.vocab() * tying.positions()],
        }
    }

    fn add<F>(&mut self, positions: usize, seq: &FeatureSequence, alignment: &Alignment, mut component: F)
    where
        F: FnMut(usize, &[f32]) -> usize,
    {
        for (t, f) in alignment.0.iter().enumerate() {
            let x = seq.frame(t);
            let k = component(f.tied, x);
            self.emission[f.tied][k].accumulate(x).expect("uniform dimension");
        }
        for (f, n) in alignment.runs() {
            let key = f.ch * positions + f.pos;
            self.stay[key] += (n - 1) as f64;
            self.next[key] += 1.0;
        }
    }

    /// New emissions; states or components that saw no frames keep their
    /// previous parameters (with zero weight for components).
    fn emissions(&self, previous: Option<&[Gmm]>, floor: f64) -> Result<Vec<Gmm>> {
        self.emission
            .iter()
            .enumerate()
            .map(|(u, comps)| {
                let total: f64 = comps.iter().map(GaussStats::count).sum();
                if total == 0.0 {
                    return match previous {
                        Some(prev) => {
                            log::warn!("tied state {u} received no frames; keeping its emission");
                            Ok(prev[u].clone())
                        }
                        None => Err(Error::Infeasible(format!("tied state {u} has no frames"))),
                    };
                }
                let mut weights = Vec::with_capacity(comps.len());
                let mut gaussians = Vec::with_capacity(comps.len());
                for (k, s) in comps.iter().enumerate() {
                    weights.push(s.count() / total);
                    gaussians.push(if s.is_empty() {
                        previous.expect("components only exist after training")[u].components[k].clone()
                    } else {
                        Gaussian::from_stats(s, floor)?
                    });
                }
                Gmm::new(weights, gaussians)
            })
            .collect()
    }

    fn transitions(&self) -> Vec<Transition> {
        self.stay
            .iter()
            .zip(&self.next)
            .map(|(&s, &n)| Transition::from_counts(s, n))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShortSequencePolicy {
    Fail,
    Skip,
}

/// Flat start: segments every line uniformly over its characters' states
/// and fits single Gaussians and transitions to that segmentation.
pub fn flat_start(
    corpus: &Corpus,
    tying: &StateTying,
    floor: f64,
    policy: ShortSequencePolicy,
) -> Result<(HmmModelSet, Vec<Option<Alignment>>)> {
    if tying.positions() == 0 {
        return Err(Error::InvalidArgument("at least one state per character".into()));
    }
    if tying.vocab() != corpus.vocab() {
        return Err(Error::VocabularyMismatch {
            what: "tying vs corpus",
            left: tying.vocab(),
            right: corpus.vocab(),
        });
    }
    let p = tying.positions();
    let mut acc = Accumulators::new(corpus.dim(), tying, &vec![1; tying.n_total()]);
    let mut alignments = Vec::with_capacity(corpus.len());
    for (index, (seq, labels)) in corpus.iter().enumerate() {
        let states = labels.len() * p;
        if seq.len() < states {
            let err = Error::SequenceTooShort {
                index,
                frames: seq.len(),
                states,
            };
            match policy {
                ShortSequencePolicy::Fail => return Err(err),
                ShortSequencePolicy::Skip => {
                    log::warn!("{err}; skipped");
                    alignments.push(None);
                    continue;
                }
            }
        }
        let a = uniform_alignment(tying, seq.len(), labels);
        acc.add(p, seq, &a, |_, _| 0);
        alignments.push(Some(a));
    }
    let mut global = GaussStats::new(corpus.dim());
    for s in &acc.emission {
        global.merge_in(&s[0])?;
    }
    for (u, s) in acc.emission.iter_mut().enumerate() {
        if s[0].is_empty() {
            log::warn!("tied state {u} has no flat-start frames; using global statistics");
            s[0] = global.clone();
        }
    }
    let emissions = acc.emissions(None, floor)?;
    let model = HmmModelSet::new(corpus.dim(), floor, tying.clone(), acc.transitions(), emissions)?;
    Ok((model, alignments))
}

/// Viterbi forced alignment through the concatenated character HMMs.
/// Returns the best path and its log-probability, including the exit from
/// the final character.
pub fn align(model: &HmmModelSet, seq: &FeatureSequence, labels: &Transcription) -> Result<(Alignment, f64)> {
    if seq.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: seq.dim(),
        });
    }
    if labels.is_empty() {
        return Err(Error::InvalidArgument("empty transcription".into()));
    }
    if let Some(&bad) = labels.0.iter().find(|&&c| c >= model.vocab()) {
        return Err(Error::VocabularyMismatch {
            what: "label vs model vocabulary",
            left: bad,
            right: model.vocab(),
        });
    }
    let p = model.positions();
    let n_states = labels.len() * p;
    let len = seq.len();
    if len < n_states {
        return Err(Error::Infeasible(format!(
            "{len} frames cannot cover {n_states} states"
        )));
    }
    let keys: Vec<(usize, usize)> = (0..n_states).map(|s| (labels.0[s / p], s % p)).collect();

    // Emission cache keyed by tied state.
    let mut slot = vec![usize::MAX; model.n_tied()];
    let mut used = Vec::new();
    for &(c, q) in &keys {
        let u = model.tying().tied(c, q);
        if slot[u] == usize::MAX {
            slot[u] = used.len();
            used.push(u);
        }
    }
    let mut emit = vec![0.0; len * used.len()];
    for t in 0..len {
        let x = seq.frame(t);
        for (k, &u) in used.iter().enumerate() {
            emit[t * used.len() + k] = model.emission(u).log_density(x);
        }
    }
    let state_slot: Vec<usize> = keys.iter().map(|&(c, q)| slot[model.tying().tied(c, q)]).collect();
    let trans: Vec<Transition> = keys.iter().map(|&(c, q)| model.transition(c, q)).collect();

    let mut prev = vec![f64::NEG_INFINITY; n_states];
    let mut cur = vec![f64::NEG_INFINITY; n_states];
    // true = advanced into this state at time t.
    let mut advanced = vec![false; len * n_states];
    prev[0] = emit[state_slot[0]];
    for t in 1..len {
        let lo = (n_states + t).saturating_sub(len);
        let hi = t.min(n_states - 1);
        cur.iter_mut().for_each(|v| *v = f64::NEG_INFINITY);
        for s in lo..=hi {
            let stay = prev[s] + trans[s].log_stay;
            let adv = if s > 0 {
                prev[s - 1] + trans[s - 1].log_next
            } else {
                f64::NEG_INFINITY
            };
            let (best, moved) = if adv > stay { (adv, true) } else { (stay, false) };
            cur[s] = best + emit[t * used.len() + state_slot[s]];
            advanced[t * n_states + s] = moved;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let score = prev[n_states - 1] + trans[n_states - 1].log_next;
    let mut path = vec![0usize; len];
    let mut s = n_states - 1;
    for t in (0..len).rev() {
        path[t] = s;
        if t > 0 && advanced[t * n_states + s] {
            s -= 1;
        }
    }
    let frames = path
        .into_iter()
        .map(|s| {
            let (ch, pos) = keys[s];
            AlignedFrame {
                char_index: s / p,
                ch,
                pos,
                tied: model.tying().tied(ch, pos),
            }
        })
        .collect();
    Ok((Alignment(frames), score))
}

/// Aligns every sequence in parallel; results keep corpus order.
fn align_corpus(
    model: &HmmModelSet,
    corpus: &Corpus,
    policy: ShortSequencePolicy,
) -> Result<Vec<Option<(Alignment, f64)>>> {
    let p = model.positions();
    corpus
        .sequences()
        .par_iter()
        .zip(corpus.transcripts())
        .enumerate()
        .map(|(index, (seq, labels))| {
            let states = labels.len() * p;
            if seq.len() < states {
                let err = Error::SequenceTooShort {
                    index,
                    frames: seq.len(),
                    states,
                };
                return match policy {
                    ShortSequencePolicy::Fail => Err(err),
                    ShortSequencePolicy::Skip => Ok(None),
                };
            }
            align(model, seq, labels).map(Some)
        })
        .collect()
}

/// Mixture count per training iteration: the stages of `targets` spread
/// evenly over `iters` iterations.
pub fn mixture_plan(iters: usize, targets: &[usize]) -> Vec<usize> {
    if targets.is_empty() {
        return vec![1; iters];
    }
    (0..iters).map(|i| targets[i * targets.len() / iters]).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub iters: usize,
    /// Mixture targets, e.g. `[1, 2, 4]`, spread over the iterations.
    pub mixtures: Vec<usize>,
    pub short_sequences: ShortSequencePolicy,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            iters: 9,
            mixtures: vec![1, 2, 4],
            short_sequences: ShortSequencePolicy::Fail,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Total Viterbi log-likelihood of the alignment step of each iteration.
    pub logliks: Vec<f64>,
    /// Mixture count used in each iteration.
    pub mixtures: Vec<usize>,
    /// Total log-likelihood of the final model.
    pub final_loglik: f64,
}

/// Viterbi training: align, then re-estimate emissions (hard component
/// assignment, MLE, floored) and transitions (add-one smoothed durations).
pub fn viterbi_train(
    mut model: HmmModelSet,
    corpus: &Corpus,
    opts: &TrainOptions,
) -> Result<(HmmModelSet, TrainReport)> {
    if opts.iters == 0 {
        return Err(Error::InvalidArgument("at least one training iteration".into()));
    }
    if corpus.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: corpus.dim(),
        });
    }
    let plan = mixture_plan(opts.iters, &opts.mixtures);
    let mut logliks = Vec::with_capacity(opts.iters);
    for &target in &plan {
        if target > model.max_mixtures() {
            model.split_mixtures(target);
        }
        let aligned = align_corpus(&model, corpus, opts.short_sequences)?;
        let mixtures: Vec<usize> = model.emissions.iter().map(Gmm::len).collect();
        let mut acc = Accumulators::new(model.dim(), model.tying(), &mixtures);
        let mut total = 0.0;
        for ((seq, _), a) in corpus.iter().zip(&aligned) {
            if let Some((alignment, score)) = a {
                total += score;
                acc.add(model.positions(), seq, alignment, |u, x| {
                    model.emissions[u].best_component(x).0
                });
            }
        }
        logliks.push(total);
        let emissions = acc.emissions(Some(&model.emissions), model.floor)?;
        model = HmmModelSet::new(
            model.dim,
            model.floor,
            model.tying.clone(),
            acc.transitions(),
            emissions,
        )?;
    }
    let final_loglik = align_corpus(&model, corpus, opts.short_sequences)?
        .iter()
        .flatten()
        .map(|(_, s)| s)
        .sum();
    Ok((
        model,
        TrainReport {
            logliks,
            mixtures: plan,
            final_loglik,
        },
    ))
}

/// Per-(char, position) statistics of the frames each position receives
/// under forced alignment, accumulated in corpus order.
pub fn collect_tying_stats(model: &HmmModelSet, corpus: &Corpus) -> Result<(StateStats, Vec<Alignment>)> {
    let aligned = align_corpus(model, corpus, ShortSequencePolicy::Fail)?;
    let mut stats = StateStats::new(model.vocab(), model.positions(), model.dim());
    let mut alignments = Vec::with_capacity(aligned.len());
    for ((seq, _), a) in corpus.iter().zip(aligned) {
        let (alignment, _) = a.expect("short sequences fail above");
        for (t, f) in alignment.0.iter().enumerate() {
            stats.get_mut(f.ch, f.pos).accumulate(seq.frame(t))?;
        }
        alignments.push(alignment);
    }
    Ok((stats, alignments))
}

/// Untied flat start with the default floor; a convenience for tests and
/// small tools.
pub fn flat_start_untied(corpus: &Corpus, positions: usize) -> Result<HmmModelSet> {
    let tying = StateTying::untied(corpus.vocab(), positions);
    Ok(flat_start(corpus, &tying, DEFAULT_VARIANCE_FLOOR, ShortSequencePolicy::Fail)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{standard_benchmark, synth_corpus, SynthOptions};

    fn corpus_1d(seqs: &[&[f32]], labels: &[&[usize]], vocab: usize) -> Corpus {
        Corpus::new(
            vocab,
            seqs.iter()
                .map(|s| FeatureSequence::new(1, s.to_vec()).unwrap())
                .collect(),
            labels.iter().map(|l| Transcription(l.to_vec())).collect(),
        )
        .unwrap()
    }

    #[test]
    fn flat_start_uniform_segments() {
        let frames: Vec<f32> = (0..10).map(|v| v as f32).collect();
        let c = corpus_1d(&[&frames], &[&[0]], 1);
        let (model, al) = flat_start(&c, &StateTying::untied(1, 5), 1e-4, ShortSequencePolicy::Fail).unwrap();
        let al = al[0].as_ref().unwrap();
        assert!(al.runs().iter().all(|(_, n)| *n == 2));
        // Means equal the per-segment sample means.
        for pos in 0..5 {
            let mean = (2 * pos) as f64 + 0.5;
            assert_eq!(model.emission_for(0, pos).components()[0].mean(), &[mean]);
        }
    }

    #[test]
    fn flat_start_one_frame_per_state() {
        let c = corpus_1d(&[&[1.0, 2.0, 3.0, 4.0]], &[&[0, 1]], 2);
        let (_, al) = flat_start(&c, &StateTying::untied(2, 2), 1e-4, ShortSequencePolicy::Fail).unwrap();
        assert!(al[0].as_ref().unwrap().runs().iter().all(|(_, n)| *n == 1));
    }

    #[test]
    fn flat_start_short_sequence_policy() {
        let c = corpus_1d(&[&[1.0, 2.0], &[1.0, 2.0, 3.0, 4.0]], &[&[0], &[0]], 1);
        let t = StateTying::untied(1, 3);
        assert!(matches!(
            flat_start(&c, &t, 1e-4, ShortSequencePolicy::Fail),
            Err(Error::SequenceTooShort { index: 0, .. })
        ));
        let (_, al) = flat_start(&c, &t, 1e-4, ShortSequencePolicy::Skip).unwrap();
        assert!(al[0].is_none() && al[1].is_some());
    }

    #[test]
    fn align_forced_and_infeasible() {
        let c = corpus_1d(&[&[0.0, 5.0, 0.5, 5.5, 0.2, 5.2]], &[&[0]], 1);
        let model = flat_start_untied(&c, 2).unwrap();
        let seq = FeatureSequence::new(1, vec![0.0, 5.0]).unwrap();
        let (a, _) = align(&model, &seq, &Transcription(vec![0])).unwrap();
        assert_eq!(a.0.iter().map(|f| f.pos).collect::<Vec<_>>(), vec![0, 1]);
        let short = FeatureSequence::new(1, vec![0.0]).unwrap();
        assert!(matches!(
            align(&model, &short, &Transcription(vec![0])),
            Err(Error::Infeasible(_))
        ));
    }

    /// Log-probability of a given state path, computed directly.
    fn path_score(model: &HmmModelSet, seq: &FeatureSequence, a: &Alignment) -> f64 {
        let mut s = 0.0;
        for (t, f) in a.0.iter().enumerate() {
            s += model.emission(f.tied).log_density(seq.frame(t));
            if t + 1 < a.0.len() {
                let g = a.0[t + 1];
                let tr = model.transition(f.ch, f.pos);
                s += if g.char_index == f.char_index && g.pos == f.pos {
                    tr.log_stay
                } else {
                    tr.log_next
                };
            }
        }
        let last = a.0.last().unwrap();
        s + model.transition(last.ch, last.pos).log_next
    }

    proptest::proptest! {
        #[test]
        fn alignment_is_a_valid_best_path(
            frames in proptest::collection::vec(-4.0f32..4.0, 6..30),
            labels in proptest::collection::vec(0usize..3, 1..4),
            positions in 1usize..3,
        ) {
            proptest::prop_assume!(frames.len() >= labels.len() * positions);
            let train = corpus_1d(&[&frames, &frames], &[&labels, &[0, 1, 2]], 3);
            let Ok((model, _)) = flat_start(&train, &StateTying::untied(3, positions), 1e-4, ShortSequencePolicy::Skip)
            else {
                return Ok(());
            };
            let seq = FeatureSequence::new(1, frames.clone()).unwrap();
            let labels = Transcription(labels);
            let (a, score) = align(&model, &seq, &labels).unwrap();
            proptest::prop_assert_eq!(a.0.len(), frames.len());
            let (first, last) = (a.0[0], *a.0.last().unwrap());
            proptest::prop_assert_eq!((first.char_index, first.pos), (0, 0));
            proptest::prop_assert_eq!((last.char_index, last.pos), (labels.0.len() - 1, positions - 1));
            for w in a.0.windows(2) {
                let (f, g) = (w[0], w[1]);
                let stay = (g.char_index, g.pos) == (f.char_index, f.pos);
                let next = if f.pos + 1 < positions {
                    (g.char_index, g.pos) == (f.char_index, f.pos + 1)
                } else {
                    (g.char_index, g.pos) == (f.char_index + 1, 0)
                };
                proptest::prop_assert!(stay || next);
                proptest::prop_assert_eq!(g.ch, labels.0[g.char_index]);
            }
            proptest::prop_assert!((path_score(&model, &seq, &a) - score).abs() <= 1e-9 * score.abs().max(1.0));
            let uniform = uniform_alignment(model.tying(), seq.len(), &labels);
            proptest::prop_assert!(score >= path_score(&model, &seq, &uniform) - 1e-9 * score.abs().max(1.0));
        }
    }

    #[test]
    fn viterbi_beats_uniform_path() {
        let bench = standard_benchmark(1).unwrap();
        let opts = SynthOptions {
            n_lines: 6,
            line_len: 3,
            dur_jitter: 0.5,
            seed: 2,
        };
        let (corpus, _) = synth_corpus(&bench.inventory, &bench.chars, &opts).unwrap();
        let model = flat_start_untied(&corpus, 5).unwrap();
        for (seq, labels) in corpus.iter() {
            let (a, score) = align(&model, seq, labels).unwrap();
            assert!((path_score(&model, seq, &a) - score).abs() < 1e-6 * score.abs());
            let uniform = uniform_alignment(model.tying(), seq.len(), labels);
            assert!(score >= path_score(&model, seq, &uniform) - 1e-9);
        }
    }

    #[test]
    fn noiseless_alignment_recovers_boundaries() {
        let bench = standard_benchmark(3).unwrap();
        let mut inv = bench.inventory.clone();
        for r in &mut inv.radicals {
            for s in &mut r.states {
                s.variance.iter_mut().for_each(|v| *v = 1e-6);
            }
        }
        let opts = SynthOptions {
            n_lines: 60,
            line_len: 4,
            dur_jitter: 0.2,
            seed: 8,
        };
        let (corpus, _) = synth_corpus(&inv, &bench.chars, &opts).unwrap();
        let (model, _) = viterbi_train(
            flat_start_untied(&corpus, 5).unwrap(),
            &corpus,
            &TrainOptions {
                iters: 6,
                mixtures: vec![1],
                ..TrainOptions::default()
            },
        )
        .unwrap();
        // Boundaries are where the generating state changes, i.e. where the
        // noiseless frame value jumps.
        for (seq, labels) in corpus.iter() {
            let (a, _) = align(&model, seq, labels).unwrap();
            for t in 1..seq.len() {
                let step: f32 = seq
                    .frame(t)
                    .iter()
                    .zip(seq.frame(t - 1))
                    .map(|(a, b)| (a - b).abs())
                    .sum();
                let moved = (a.0[t].char_index, a.0[t].pos) != (a.0[t - 1].char_index, a.0[t - 1].pos);
                // A one-state radical repeated across a character boundary
                // leaves no visible jump, so only jumps are checked.
                if step > 1.0 {
                    assert!(moved, "frame {t}");
                }
            }
        }
    }

    #[test]
    fn one_iteration_is_a_fixed_point_when_alignment_is_unchanged() {
        let c = corpus_1d(&[&[0.0, 0.1, 9.0, 9.1], &[0.05, -0.1, 9.2, 8.9]], &[&[0], &[0]], 1);
        let t = StateTying::untied(1, 2);
        let (start, _) = flat_start(&c, &t, 1e-4, ShortSequencePolicy::Fail).unwrap();
        let opts = TrainOptions {
            iters: 1,
            mixtures: vec![1],
            ..TrainOptions::default()
        };
        let (trained, _) = viterbi_train(start.clone(), &c, &opts).unwrap();
        assert_eq!(trained, start);
    }

    #[test]
    fn mixture_split_rule() {
        let g = Gaussian::new(vec![1.0], vec![4.0]).unwrap();
        let mut m = Gmm::single(g);
        m.split_to(2);
        assert_eq!(m.weights(), &[0.5, 0.5]);
        assert_eq!(m.components()[0].mean(), &[1.4]);
        assert_eq!(m.components()[1].mean(), &[0.6]);
        m.split_to(4);
        assert_eq!(m.weights(), &[0.25; 4]);
        assert_eq!(mixture_plan(9, &[1, 2, 4]), vec![1, 1, 1, 2, 2, 2, 4, 4, 4]);
    }

    #[test]
    fn training_recovers_generator_means() {
        let bench = standard_benchmark(5).unwrap();
        let opts = SynthOptions {
            n_lines: 120,
            line_len: 5,
            dur_jitter: 0.2,
            seed: 6,
        };
        let (corpus, _) = synth_corpus(&bench.inventory, &bench.chars, &opts).unwrap();
        let train = TrainOptions {
            iters: 5,
            mixtures: vec![1],
            ..TrainOptions::default()
        };
        let (model, _) = viterbi_train(flat_start_untied(&corpus, 5).unwrap(), &corpus, &train).unwrap();
        let (stats, _) = collect_tying_stats(&model, &corpus).unwrap();
        let (mut checked, mut within) = (0usize, 0usize);
        let mut worst = 0.0f64;
        for ch in &bench.chars {
            for (pos, (r, s)) in ch.states(&bench.inventory).unwrap().into_iter().enumerate() {
                let state = &bench.inventory.radicals[r].states[s];
                let n = stats.get(ch.id, pos).count();
                if n == 0.0 {
                    continue;
                }
                let got = model.emission_for(ch.id, pos).components()[0].mean();
                for ((g, m), v) in got.iter().zip(&state.mean).zip(&state.variance) {
                    let z = (g - m).abs() / (v / n).sqrt();
                    worst = worst.max(z);
                    checked += 1;
                    within += usize::from(z <= 3.0);
                }
            }
        }
        // 3 standard errors per coordinate; over ~1600 coordinates a few
        // exceedances are expected by chance alone.
        assert!(within as f64 >= 0.99 * checked as f64, "{within}/{checked}");
        assert!(worst < 5.0, "worst deviation {worst} standard errors");
    }

    #[test]
    fn tying_stats_partition_the_frames() {
        let bench = standard_benchmark(7).unwrap();
        let opts = SynthOptions {
            n_lines: 10,
            line_len: 3,
            dur_jitter: 0.3,
            seed: 1,
        };
        let (corpus, _) = synth_corpus(&bench.inventory, &bench.chars, &opts).unwrap();
        let model = flat_start_untied(&corpus, 5).unwrap();
        let (stats, alignments) = collect_tying_stats(&model, &corpus).unwrap();
        assert_eq!(stats.total_frames(), corpus.total_frames() as f64);
        // Independent re-accumulation from the dumped alignments.
        let mut again = StateStats::new(corpus.vocab(), 5, corpus.dim());
        for ((seq, _), a) in corpus.iter().zip(&alignments) {
            for (t, f) in a.frames().iter().enumerate() {
                again.get_mut(f.ch, f.pos).accumulate(seq.frame(t)).unwrap();
            }
        }
        assert_eq!(again, stats);
    }

    #[test]
    fn single_forced_frame_per_state_stats() {
        let c = corpus_1d(&[&[1.0, 2.0, 3.0]], &[&[0]], 1);
        let model = flat_start_untied(&c, 3).unwrap();
        let (stats, _) = collect_tying_stats(&model, &c).unwrap();
        for p in 0..3 {
            assert_eq!(stats.get(0, p).count(), 1.0);
            assert_eq!(stats.get(0, p).sum(), &[(p + 1) as f64]);
        }
    }

    #[test]
    fn tied_states_share_one_emission() {
        let c = corpus_1d(&[&[0.0, 1.0, 2.0, 3.0], &[0.5, 1.5, 2.5, 3.5]], &[&[0, 1], &[1, 0]], 2);
        let tying = StateTying::new(2, 2, vec![0, 1, 0, 2]).unwrap();
        let (mut model, _) = flat_start(&c, &tying, 1e-4, ShortSequencePolicy::Fail).unwrap();
        assert_eq!(model.emission_for(0, 0), model.emission_for(1, 0));
        *model.emission_mut(0) = Gmm::single(Gaussian::new(vec![42.0], vec![1.0]).unwrap());
        for &(ch, pos) in &model.tying().users()[0] {
            assert_eq!(model.emission_for(ch, pos).components()[0].mean(), &[42.0]);
        }
        assert_ne!(model.emission_for(1, 1).components()[0].mean(), &[42.0]);
    }

    #[test]
    fn model_file_round_trip() {
        let bench = standard_benchmark(2).unwrap();
        let opts = SynthOptions {
            n_lines: 8,
            line_len: 3,
            dur_jitter: 0.3,
            seed: 4,
        };
        let (corpus, _) = synth_corpus(&bench.inventory, &bench.chars, &opts).unwrap();
        let train = TrainOptions {
            iters: 2,
            mixtures: vec![1, 2],
            ..TrainOptions::default()
        };
        let (model, _) = viterbi_train(flat_start_untied(&corpus, 5).unwrap(), &corpus, &train).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.phmm");
        model.write(&path).unwrap();
        assert_eq!(HmmModelSet::read(&path).unwrap(), model);
        for t in &model.transitions {
            assert!((t.log_stay.exp() + t.log_next.exp() - 1.0).abs() < 1e-9);
        }
    }
}
