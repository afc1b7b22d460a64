//! Character n-gram language model, token-passing Viterbi decoding over
//! concatenated character HMMs, and character error rate.

use std::fmt::Write as _;
use std::path::Path;

use crate::binio;
use crate::corpus::{FeatureSequence, Transcription};
use crate::error::{Error, Result};
use crate::hmm::HmmModelSet;

/// Character LM of order 1 or 2 with add-k smoothing.
///
/// Symbol `V` stands for the sentence boundary: as a context it is the
/// line start, as a target it is the line end.
#[derive(Debug, Clone, PartialEq)]
pub struct CharNgramLm {
    order: usize,
    vocab: usize,
    /// Row-major `(V+1) x (V+1)` table indexed by context then target; a
    /// single row for order 1.
    logprob: Vec<f64>,
}

pub const DEFAULT_ADD_K: f64 = 0.1;

/// Trains an add-k smoothed LM. Unigram counts cover characters only; the
/// boundary keeps its smoothing mass.
pub fn train_lm(transcripts: &[Transcription], vocab: usize, order: usize, add_k: f64) -> Result<CharNgramLm> {
    if transcripts.is_empty() {
        return Err(Error::EmptyTranscripts);
    }
    if !(order == 1 || order == 2) {
        return Err(Error::InvalidArgument(format!("LM order {order} not in {{1, 2}}")));
    }
    if !(add_k > 0.0) {
        return Err(Error::InvalidArgument(format!("add-k {add_k} must be positive")));
    }
    if let Some(&bad) = transcripts.iter().flat_map(|t| &t.0).find(|&&c| c >= vocab) {
        return Err(Error::VocabularyMismatch {
            what: "transcript label vs vocabulary",
            left: bad,
            right: vocab,
        });
    }
    let width = vocab + 1;
    let rows = if order == 1 { 1 } else { width };
    let mut counts = vec![0.0f64; rows * width];
    for t in transcripts {
        if order == 1 {
            for &c in &t.0 {
                counts[c] += 1.0;
            }
        } else {
            let mut prev = vocab;
            for &c in t.0.iter().chain(std::iter::once(&vocab)) {
                counts[prev * width + c] += 1.0;
                prev = c;
            }
        }
    }
    let mut logprob = vec![0.0; rows * width];
    for r in 0..rows {
        let row = &counts[r * width..(r + 1) * width];
        let total: f64 = row.iter().sum();
        let denom = total + add_k * width as f64;
        for (c, n) in row.iter().enumerate() {
            logprob[r * width + c] = ((n + add_k) / denom).ln();
        }
    }
    Ok(CharNgramLm { order, vocab, logprob })
}

impl CharNgramLm {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn boundary(&self) -> usize {
        self.vocab
    }

    /// `log P(target | context)`; either may be the boundary symbol.
    pub fn logprob(&self, context: usize, target: usize) -> f64 {
        let row = if self.order == 1 { 0 } else { context };
        self.logprob[row * (self.vocab + 1) + target]
    }

    /// Score of ending a line after `last`. A unigram model does not
    /// predict line ends.
    pub fn end_logprob(&self, last: usize) -> f64 {
        if self.order == 1 {
            0.0
        } else {
            self.logprob(last, self.boundary())
        }
    }

    /// Log-probability of a whole line, including its end for order 2.
    pub fn score(&self, labels: &[usize]) -> f64 {
        let mut prev = self.boundary();
        let mut s = 0.0;
        for &c in labels {
            s += self.logprob(prev, c);
            prev = c;
        }
        s + self.end_logprob(prev)
    }

    /// Per-symbol perplexity; for order 2 each line end counts as a symbol.
    pub fn perplexity(&self, transcripts: &[Transcription]) -> f64 {
        let (mut lp, mut n) = (0.0, 0usize);
        for t in transcripts {
            lp += self.score(&t.0);
            n += t.len() + usize::from(self.order == 2);
        }
        (-lp / n as f64).exp()
    }

    pub fn to_text(&self) -> String {
        let name = |c: usize| {
            if c == self.vocab {
                "</s>".to_string()
            } else {
                c.to_string()
            }
        };
        let width = self.vocab + 1;
        let mut out = format!("PHML v1 order={}\n", self.order);
        let rows = if self.order == 1 { 1 } else { width };
        for r in 0..rows {
            let ctx = match (self.order, r == self.vocab) {
                (1, _) => "-".to_string(),
                (_, true) => "<s>".to_string(),
                _ => r.to_string(),
            };
            for c in 0..width {
                let _ = writeln!(out, "{ctx} {} {}", name(c), self.logprob[r * width + c]);
            }
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        binio::write_text(path, &self.to_text())
    }

    pub fn read(path: &Path) -> Result<Self> {
        CharNgramLm::parse(&binio::read_text(path)?)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        let order = header
            .strip_prefix("PHML v1 order=")
            .and_then(|o| o.trim().parse::<usize>().ok())
            .filter(|o| *o == 1 || *o == 2)
            .ok_or_else(|| Error::MalformedHeader(format!("LM header {header:?}")))?;
        let mut entries = Vec::new();
        let mut max_id = None::<usize>;
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let bad = || Error::MalformedRecord(format!("LM line {line:?}"));
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 3 {
                return Err(bad());
            }
            let sym = |s: &str, boundary: &str| -> Result<Option<usize>> {
                if s == boundary {
                    Ok(None)
                } else {
                    s.parse().map(Some).map_err(|_| bad())
                }
            };
            let ctx = if order == 1 {
                if f[0] != "-" {
                    return Err(bad());
                }
                None
            } else {
                sym(f[0], "<s>")?
            };
            let target = sym(f[1], "</s>")?;
            let lp: f64 = f[2].parse().map_err(|_| bad())?;
            for id in [ctx, target].into_iter().flatten() {
                max_id = Some(max_id.map_or(id, |m| m.max(id)));
            }
            entries.push((ctx, target, lp));
        }
        let vocab = max_id.map_or(0, |m| m + 1);
        let width = vocab + 1;
        let rows = if order == 1 { 1 } else { width };
        if entries.len() != rows * width {
            return Err(Error::MalformedRecord(format!(
                "expected {} LM entries, found {}",
                rows * width,
                entries.len()
            )));
        }
        let mut logprob = vec![f64::NAN; rows * width];
        for (ctx, target, lp) in entries {
            let r = if order == 1 { 0 } else { ctx.unwrap_or(vocab) };
            logprob[r * width + target.unwrap_or(vocab)] = lp;
        }
        if logprob.iter().any(|v| !v.is_finite()) {
            return Err(Error::MalformedRecord("LM table incomplete or non-finite".into()));
        }
        Ok(CharNgramLm { order, vocab, logprob })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    pub chars: Transcription,
    pub score: f64,
    /// Half-open frame span of each recognised character.
    pub spans: Vec<(usize, usize)>,
}

impl DecodeResult {
    /// Hypothesis line: labels, then the spans in a trailing comment.
    pub fn to_line(&self) -> String {
        let spans: Vec<String> = self.spans.iter().map(|(a, b)| format!("{a}-{b}")).collect();
        format!("{} # spans {}", self.chars.to_line(), spans.join(" "))
    }
}

/// Parses the label part of hypothesis lines, ignoring trailing comments.
pub fn parse_hypotheses(text: &str) -> Result<Vec<Transcription>> {
    text.lines()
        .map(|l| {
            let labels = l.split('#').next().unwrap_or_default();
            labels
                .split_whitespace()
                .map(|t| {
                    t.parse()
                        .map_err(|_| Error::MalformedRecord(format!("hypothesis {l:?}")))
                })
                .collect::<Result<Vec<usize>>>()
                .map(Transcription)
        })
        .collect()
}

pub fn write_hypotheses(path: &Path, results: &[DecodeResult]) -> Result<()> {
    let mut text = String::new();
    for r in results {
        text.push_str(&r.to_line());
        text.push('\n');
    }
    binio::write_text(path, &text)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeOptions {
    pub lm_weight: f64,
    /// Log-score beam relative to the best active state; `None` keeps every
    /// state.
    pub beam: Option<f64>,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        DecodeOptions {
            lm_weight: 1.0,
            beam: None,
        }
    }
}

/// Character history shared by tokens.
#[derive(Debug, Clone, Copy)]
struct Link {
    prev: Option<usize>,
    ch: usize,
    start: usize,
}

/// Token-passing Viterbi over all character HMMs at once. The LM score is
/// added, scaled by `lm_weight`, whenever a character is entered and once
/// for the line end. Without a beam the result is the exact joint optimum.
/// Equal scores resolve towards the smaller character id.
pub fn decode(
    model: &HmmModelSet,
    lm: &CharNgramLm,
    seq: &FeatureSequence,
    opts: &DecodeOptions,
) -> Result<DecodeResult> {
    if seq.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: seq.dim(),
        });
    }
    if seq.is_empty() {
        return Err(Error::EmptySequence);
    }
    if lm.vocab() != model.vocab() {
        return Err(Error::VocabularyMismatch {
            what: "LM vs model vocabulary",
            left: lm.vocab(),
            right: model.vocab(),
        });
    }
    if !(opts.lm_weight >= 0.0) {
        return Err(Error::InvalidArgument("LM weight must be non-negative".into()));
    }
    if let Some(b) = opts.beam {
        if !(b > 0.0) {
            return Err(Error::InvalidArgument("beam must be positive".into()));
        }
    }
    let v = model.vocab();
    let p = model.positions();
    let len = seq.len();
    if len < p {
        return Err(Error::Infeasible(format!(
            "{len} frames cannot cover one character of {p} states"
        )));
    }
    let n = v * p;
    let tied: Vec<usize> = (0..n).map(|k| model.tying().tied(k / p, k % p)).collect();
    let stay: Vec<f64> = (0..n).map(|k| model.transition(k / p, k % p).log_stay).collect();
    let next: Vec<f64> = (0..n).map(|k| model.transition(k / p, k % p).log_next).collect();
    let lmw = opts.lm_weight;
    let bos = lm.boundary();
    // Weighted LM table with the boundary context as the last row.
    let lm_table: Vec<f64> = (0..=v)
        .flat_map(|ctx| (0..=v).map(move |c| (ctx, c)))
        .map(|(ctx, c)| lmw * lm.logprob(ctx, c))
        .collect();
    let lmp = |ctx: usize, c: usize| lm_table[ctx * (v + 1) + c];

    let mut emit = vec![0.0; model.n_tied()];
    let fill_emit = |t: usize, emit: &mut Vec<f64>| {
        let x = seq.frame(t);
        for (u, e) in emit.iter_mut().enumerate() {
            *e = model.emission(u).log_density(x);
        }
    };

    let mut links: Vec<Link> = Vec::new();
    let mut score = vec![f64::NEG_INFINITY; n];
    let mut token = vec![usize::MAX; n];
    fill_emit(0, &mut emit);
    for c in 0..v {
        let k = c * p;
        links.push(Link {
            prev: None,
            ch: c,
            start: 0,
        });
        score[k] = lmp(bos, c) + emit[tied[k]];
        token[k] = links.len() - 1;
    }
    let mut new_score = vec![f64::NEG_INFINITY; n];
    let mut new_token = vec![usize::MAX; n];
    let mut exit = vec![f64::NEG_INFINITY; v];
    for t in 1..len {
        if let Some(beam) = opts.beam {
            let best = score.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for s in score.iter_mut() {
                if *s < best - beam {
                    *s = f64::NEG_INFINITY;
                }
            }
        }
        fill_emit(t, &mut emit);
        for c in 0..v {
            exit[c] = score[c * p + p - 1] + next[c * p + p - 1];
        }
        for c in 0..v {
            // Best predecessor character; the smaller id wins ties.
            let mut entry = (f64::NEG_INFINITY, usize::MAX);
            if lm.order() == 1 {
                let lp = lmp(bos, c);
                for (c2, &e) in exit.iter().enumerate() {
                    if e + lp > entry.0 {
                        entry = (e + lp, c2);
                    }
                }
            } else {
                for (c2, &e) in exit.iter().enumerate() {
                    let s = e + lmp(c2, c);
                    if s > entry.0 {
                        entry = (s, c2);
                    }
                }
            }
            for q in 0..p {
                let k = c * p + q;
                let mut best = (score[k] + stay[k], token[k]);
                if q > 0 {
                    let adv = score[k - 1] + next[k - 1];
                    if adv > best.0 {
                        best = (adv, token[k - 1]);
                    }
                } else if entry.0 > best.0 {
                    links.push(Link {
                        prev: Some(token[entry.1 * p + p - 1]),
                        ch: c,
                        start: t,
                    });
                    best = (entry.0, links.len() - 1);
                }
                new_score[k] = if best.0 == f64::NEG_INFINITY {
                    f64::NEG_INFINITY
                } else {
                    best.0 + emit[tied[k]]
                };
                new_token[k] = best.1;
            }
        }
        std::mem::swap(&mut score, &mut new_score);
        std::mem::swap(&mut token, &mut new_token);
    }
    let mut best = (f64::NEG_INFINITY, usize::MAX);
    for c in 0..v {
        let k = c * p + p - 1;
        let s = score[k] + next[k] + lmw * lm.end_logprob(c);
        if s > best.0 {
            best = (s, token[k]);
        }
    }
    if best.0 == f64::NEG_INFINITY {
        return Err(Error::Infeasible("no complete path survived the beam".into()));
    }
    let mut chars = Vec::new();
    let mut starts = Vec::new();
    let mut cur = Some(best.1);
    while let Some(i) = cur {
        chars.push(links[i].ch);
        starts.push(links[i].start);
        cur = links[i].prev;
    }
    chars.reverse();
    starts.reverse();
    let spans = starts
        .iter()
        .enumerate()
        .map(|(i, &s)| (s, starts.get(i + 1).copied().unwrap_or(len)))
        .collect();
    Ok(DecodeResult {
        chars: Transcription(chars),
        score: best.0,
        spans,
    })
}

/// Edit-distance breakdown between a reference and a hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EditCounts {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub ref_len: usize,
}

impl EditCounts {
    pub fn errors(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }

    pub fn rate(&self) -> f64 {
        self.errors() as f64 / self.ref_len as f64
    }

    pub fn add(&mut self, other: &EditCounts) {
        self.substitutions += other.substitutions;
        self.insertions += other.insertions;
        self.deletions += other.deletions;
        self.ref_len += other.ref_len;
    }
}

/// Unit-cost Levenshtein alignment. Among minimum-cost alignments the one
/// with the fewest insertions plus deletions (hence the most substitutions)
/// is reported.
pub fn cer(reference: &[usize], hypothesis: &[usize]) -> Result<EditCounts> {
    if reference.is_empty() {
        return Err(Error::EmptyReference);
    }
    let (n, m) = (reference.len(), hypothesis.len());
    // (cost, indels), compared lexicographically.
    let mut d = vec![(0usize, 0usize); (n + 1) * (m + 1)];
    let at = |i: usize, j: usize| i * (m + 1) + j;
    for i in 0..=n {
        d[at(i, 0)] = (i, i);
    }
    for j in 0..=m {
        d[at(0, j)] = (j, j);
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = usize::from(reference[i - 1] != hypothesis[j - 1]);
            let diag = (d[at(i - 1, j - 1)].0 + sub, d[at(i - 1, j - 1)].1);
            let del = (d[at(i - 1, j)].0 + 1, d[at(i - 1, j)].1 + 1);
            let ins = (d[at(i, j - 1)].0 + 1, d[at(i, j - 1)].1 + 1);
            d[at(i, j)] = diag.min(del).min(ins);
        }
    }
    let mut counts = EditCounts {
        ref_len: n,
        ..EditCounts::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[at(i, j)];
        if i > 0 && j > 0 {
            let sub = usize::from(reference[i - 1] != hypothesis[j - 1]);
            let prev = d[at(i - 1, j - 1)];
            if (prev.0 + sub, prev.1) == here {
                counts.substitutions += sub;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 {
            let prev = d[at(i - 1, j)];
            if (prev.0 + 1, prev.1 + 1) == here {
                counts.deletions += 1;
                i -= 1;
                continue;
            }
        }
        counts.insertions += 1;
        j -= 1;
    }
    Ok(counts)
}

/// Corpus-level counts over line pairs, with excluded classes (blanks,
/// separators) removed from both sides first.
pub fn corpus_cer(references: &[Transcription], hypotheses: &[Transcription], exclude: &[usize]) -> Result<EditCounts> {
    if references.len() != hypotheses.len() {
        return Err(Error::CountMismatch {
            what: "references vs hypotheses",
            left: references.len(),
            right: hypotheses.len(),
        });
    }
    let keep = |t: &Transcription| -> Vec<usize> { t.0.iter().copied().filter(|c| !exclude.contains(c)).collect() };
    let mut total = EditCounts::default();
    for (r, h) in references.iter().zip(hypotheses) {
        let (r, h) = (keep(r), keep(h));
        if r.is_empty() {
            total.insertions += h.len();
            continue;
        }
        total.add(&cer(&r, &h)?);
    }
    if total.ref_len == 0 {
        return Err(Error::EmptyReference);
    }
    Ok(total)
}
