//! Gaussian sufficient statistics and the expected log-likelihood algebra
//! used by every clustering step.
//!
//! A cluster of frames is summarised by its count, per-dimension sum and
//! per-dimension sum of squares. Under a diagonal Gaussian fitted by maximum
//! likelihood, the log-likelihood of the cluster's own data is a function of
//! these three quantities alone:
//!
//! ```text
//! L(S) = -(n/2) * [ (1 + ln 2π) * D + Σ_d ln σ²_d ]
//! ```
//!
//! Splitting a cluster can only raise this total, and pooling two clusters can
//! only lower it; [`split_gain`] and [`merge_loss`] measure by how much.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use byteorder::{LittleEndian, WriteBytesExt};

use crate::binio;
use crate::error::{Error, Result};

/// Default variance floor applied before taking logarithms.
pub const DEFAULT_VARIANCE_FLOOR: f64 = 1e-4;

const SUM_TOLERANCE: f64 = 1e-9;

/// Zeroth, first and second order statistics of a set of frames.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussStats {
    n: f64,
    sum: Vec<f64>,
    sumsq: Vec<f64>,
}

impl GaussStats {
    pub fn new(dim: usize) -> Self {
        GaussStats {
            n: 0.0,
            sum: vec![0.0; dim],
            sumsq: vec![0.0; dim],
        }
    }

    /// Builds statistics from raw parts, checking the invariants.
    pub fn from_parts(n: f64, sum: Vec<f64>, sumsq: Vec<f64>) -> Result<Self> {
        if sum.len() != sumsq.len() {
            return Err(Error::DimensionMismatch {
                expected: sum.len(),
                found: sumsq.len(),
            });
        }
        if !(n >= 0.0) || !n.is_finite() {
            return Err(Error::InvalidArgument(format!("frame count {n}")));
        }
        if n == 0.0 && sum.iter().chain(&sumsq).any(|&v| v != 0.0) {
            return Err(Error::InvalidArgument("empty statistics with non-zero sums".into()));
        }
        Ok(GaussStats { n, sum, sumsq })
    }

    /// Accumulates frames in iteration order.
    pub fn from_frames<'a, T, I>(dim: usize, frames: I) -> Result<Self>
    where
        T: Copy + Into<f64> + 'a,
        I: IntoIterator<Item = &'a [T]>,
    {
        let mut stats = GaussStats::new(dim);
        for frame in frames {
            stats.accumulate(frame)?;
        }
        Ok(stats)
    }

    pub fn dim(&self) -> usize {
        self.sum.len()
    }

    pub fn count(&self) -> f64 {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0.0
    }

    pub fn sum(&self) -> &[f64] {
        &self.sum
    }

    pub fn sumsq(&self) -> &[f64] {
        &self.sumsq
    }

    pub fn accumulate<T: Copy + Into<f64>>(&mut self, frame: &[T]) -> Result<()> {
        if frame.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: frame.len(),
            });
        }
        self.n += 1.0;
        for ((s, q), &x) in self.sum.iter_mut().zip(&mut self.sumsq).zip(frame) {
            let x: f64 = x.into();
            *s += x;
            *q += x * x;
        }
        Ok(())
    }

    /// Componentwise sum of two statistics.
    pub fn merge(&self, other: &GaussStats) -> Result<GaussStats> {
        let mut out = self.clone();
        out.merge_in(other)?;
        Ok(out)
    }

    pub fn merge_in(&mut self, other: &GaussStats) -> Result<()> {
        if other.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        self.n += other.n;
        for (a, b) in self.sum.iter_mut().zip(&other.sum) {
            *a += b;
        }
        for (a, b) in self.sumsq.iter_mut().zip(&other.sumsq) {
            *a += b;
        }
        Ok(())
    }

    /// Maximum-likelihood mean; zeros for empty statistics.
    pub fn mean(&self) -> Vec<f64> {
        if self.n == 0.0 {
            return vec![0.0; self.dim()];
        }
        self.sum.iter().map(|s| s / self.n).collect()
    }

    /// Biased (divide-by-n) variance per dimension, not floored.
    pub fn raw_variance(&self) -> Vec<f64> {
        if self.n == 0.0 {
            return vec![0.0; self.dim()];
        }
        self.sum
            .iter()
            .zip(&self.sumsq)
            .map(|(s, q)| {
                let m = s / self.n;
                q / self.n - m * m
            })
            .collect()
    }

    pub fn variance(&self, floor: f64) -> Vec<f64> {
        self.raw_variance().into_iter().map(|v| v.max(floor)).collect()
    }

    /// `Σ_d ln σ²_d` under flooring.
    pub fn log_det(&self, floor: f64) -> f64 {
        self.variance(floor).iter().map(|v| v.ln()).sum()
    }

    /// Expected log-likelihood of the cluster under its own MLE Gaussian.
    pub fn expected_loglik(&self, floor: f64) -> f64 {
        if self.n == 0.0 {
            return 0.0;
        }
        let d = self.dim() as f64;
        -0.5 * self.n * ((1.0 + (2.0 * PI).ln()) * d + self.log_det(floor))
    }

    fn sums_to(&self, left: &GaussStats, right: &GaussStats) -> bool {
        let close = |p: f64, l: f64, r: f64| {
            let scale = p.abs() + l.abs() + r.abs();
            (p - (l + r)).abs() <= SUM_TOLERANCE * scale.max(f64::MIN_POSITIVE)
        };
        close(self.n, left.n, right.n)
            && (0..self.dim()).all(|d| {
                close(self.sum[d], left.sum[d], right.sum[d]) && close(self.sumsq[d], left.sumsq[d], right.sumsq[d])
            })
    }
}

/// Increase in expected log-likelihood from splitting `parent` into
/// `left` and `right`.
pub fn split_gain(parent: &GaussStats, left: &GaussStats, right: &GaussStats, floor: f64) -> Result<f64> {
    for s in [left, right] {
        if s.dim() != parent.dim() {
            return Err(Error::DimensionMismatch {
                expected: parent.dim(),
                found: s.dim(),
            });
        }
    }
    if left.is_empty() || right.is_empty() {
        return Err(Error::EmptyOperand("split child"));
    }
    if !parent.sums_to(left, right) {
        return Err(Error::ChildrenMismatch);
    }
    Ok(left.expected_loglik(floor) + right.expected_loglik(floor) - parent.expected_loglik(floor))
}

/// Decrease in expected log-likelihood from pooling `a` and `b`.
pub fn merge_loss(a: &GaussStats, b: &GaussStats, floor: f64) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyOperand("merge operand"));
    }
    let pooled = a.merge(b)?;
    split_gain(&pooled, a, b, floor)
}

/// Pooling cost that treats empty operands as free; agrees with
/// [`merge_loss`] whenever both operands are non-empty.
pub(crate) fn pooling_cost(a: &GaussStats, b: &GaussStats, floor: f64) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let pooled = a.merge(b).expect("dimensions checked by caller");
    a.expected_loglik(floor) + b.expected_loglik(floor) - pooled.expected_loglik(floor)
}

const STATS_MAGIC: &[u8; 4] = b"PHMS";
const STATS_VERSION: u32 = 1;

/// Per-(character, state position) statistics, the input to tying and
/// question generation.
#[derive(Debug, Clone, PartialEq)]
pub struct StateStats {
    vocab: usize,
    positions: usize,
    dim: usize,
    cells: Vec<GaussStats>,
}

impl StateStats {
    pub fn new(vocab: usize, positions: usize, dim: usize) -> Self {
        StateStats {
            vocab,
            positions,
            dim,
            cells: vec![GaussStats::new(dim); vocab * positions],
        }
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn positions(&self) -> usize {
        self.positions
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, ch: usize, pos: usize) -> &GaussStats {
        &self.cells[ch * self.positions + pos]
    }

    pub fn get_mut(&mut self, ch: usize, pos: usize) -> &mut GaussStats {
        &mut self.cells[ch * self.positions + pos]
    }

    pub fn set(&mut self, ch: usize, pos: usize, stats: GaussStats) -> Result<()> {
        if stats.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: stats.dim(),
            });
        }
        self.cells[ch * self.positions + pos] = stats;
        Ok(())
    }

    pub fn total_frames(&self) -> f64 {
        self.cells.iter().map(GaussStats::count).sum()
    }

    /// Frame count of one character over all positions.
    pub fn char_frames(&self, ch: usize) -> f64 {
        (0..self.positions).map(|p| self.get(ch, p).count()).sum()
    }

    /// Pooled statistics of `members` at one position, in member order.
    pub fn pooled<'a, I: IntoIterator<Item = &'a usize>>(&self, pos: usize, members: I) -> GaussStats {
        let mut out = GaussStats::new(self.dim);
        for &c in members {
            out.merge_in(self.get(c, pos)).expect("uniform dimension");
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = binio::create(path)?;
        self.write_to(&mut w).map_err(|e| Error::io(path, e))
    }

    fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        binio::write_preamble(w, STATS_MAGIC, STATS_VERSION)?;
        w.write_u32::<LittleEndian>((self.vocab * self.positions) as u32)?;
        for c in 0..self.vocab {
            for p in 0..self.positions {
                let s = self.get(c, p);
                w.write_u32::<LittleEndian>(c as u32)?;
                w.write_u32::<LittleEndian>(p as u32)?;
                w.write_u32::<LittleEndian>(self.dim as u32)?;
                w.write_f64::<LittleEndian>(s.n)?;
                binio::put_f64s(w, &s.sum)?;
                binio::put_f64s(w, &s.sumsq)?;
            }
        }
        w.flush()
    }

    /// Reads a statistics dump. Records may appear in any order; cells
    /// without a record are empty.
    pub fn read(path: &Path) -> Result<Self> {
        let mut r = binio::open(path)?;
        binio::read_preamble(&mut r, STATS_MAGIC, STATS_VERSION)?;
        let count = binio::u32_of(&mut r, "record count")? as usize;
        let mut records = Vec::with_capacity(count);
        let mut dim = None;
        for _ in 0..count {
            let c = binio::u32_of(&mut r, "char id")? as usize;
            let p = binio::u32_of(&mut r, "position")? as usize;
            let d = binio::u32_of(&mut r, "dimension")? as usize;
            match dim {
                None => dim = Some(d),
                Some(expected) if expected != d => return Err(Error::DimensionMismatch { expected, found: d }),
                _ => {}
            }
            let n = binio::f64_of(&mut r, "count")?;
            let sum = binio::f64s_of(&mut r, d, "sum")?;
            let sumsq = binio::f64s_of(&mut r, d, "sumsq")?;
            let stats = GaussStats::from_parts(n, sum, sumsq).map_err(|e| Error::MalformedRecord(e.to_string()))?;
            records.push((c, p, stats));
        }
        binio::expect_eof(&mut r)?;
        let dim = dim.ok_or(Error::EmptyStats)?;
        let vocab = records.iter().map(|r| r.0 + 1).max().unwrap_or(0);
        let positions = records.iter().map(|r| r.1 + 1).max().unwrap_or(0);
        let mut out = StateStats::new(vocab, positions, dim);
        for (c, p, s) in records {
            out.set(c, p, s)?;
        }
        Ok(out)
    }
}
