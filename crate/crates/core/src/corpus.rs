//! Feature-sequence corpora: file formats, and a synthetic generator that
//! composes characters out of shared radicals with known state sharing.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::binio;
use crate::error::{Error, Result};
use crate::tying::GroundTruthTying;

const FEATURE_MAGIC: &[u8; 4] = b"PHMF";
const FEATURE_VERSION: u32 = 1;

/// Generator used for every seeded random draw in the crate. ChaCha8 is
/// counter based and its output stream is fixed across platforms.
pub type SeededRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A `T × D` matrix of frames, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    dim: usize,
    frames: Vec<f32>,
}

impl FeatureSequence {
    pub fn new(dim: usize, frames: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("feature dimension 0".into()));
        }
        if frames.is_empty() {
            return Err(Error::EmptySequence);
        }
        if !frames.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: frames.len() % dim,
            });
        }
        if frames.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite feature value".into()));
        }
        Ok(FeatureSequence { dim, frames })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.frames.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.frames[t * self.dim..(t + 1) * self.dim]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[f32]> {
        self.frames.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.frames
    }
}

/// Character ids of one line.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Transcription(pub Vec<usize>);

impl Transcription {
    pub fn labels(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn parse(line: &str) -> Result<Self> {
        line.split_whitespace()
            .map(|tok| {
                tok.parse::<usize>()
                    .map_err(|_| Error::MalformedRecord(format!("bad char id {tok:?}")))
            })
            .collect::<Result<Vec<_>>>()
            .map(Transcription)
    }

    pub fn to_line(&self) -> String {
        let mut out = String::new();
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(&c.to_string());
        }
        out
    }
}

/// Feature sequences paired with their transcriptions.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    dim: usize,
    vocab: usize,
    sequences: Vec<FeatureSequence>,
    transcripts: Vec<Transcription>,
}

impl Corpus {
    pub fn new(vocab: usize, sequences: Vec<FeatureSequence>, transcripts: Vec<Transcription>) -> Result<Self> {
        if sequences.len() != transcripts.len() {
            return Err(Error::CountMismatch {
                what: "sequences vs transcripts",
                left: sequences.len(),
                right: transcripts.len(),
            });
        }
        let dim = sequences.first().map_or(0, FeatureSequence::dim);
        for s in &sequences {
            if s.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: s.dim(),
                });
            }
        }
        for t in &transcripts {
            if t.is_empty() {
                return Err(Error::MalformedRecord("empty transcription".into()));
            }
            if let Some(&bad) = t.0.iter().find(|&&c| c >= vocab) {
                return Err(Error::VocabularyMismatch {
                    what: "char id vs vocabulary",
                    left: bad,
                    right: vocab,
                });
            }
        }
        Ok(Corpus {
            dim,
            vocab,
            sequences,
            transcripts,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn sequences(&self) -> &[FeatureSequence] {
        &self.sequences
    }

    pub fn transcripts(&self) -> &[Transcription] {
        &self.transcripts
    }

    pub fn iter(&self) -> impl Iterator<Item = (&FeatureSequence, &Transcription)> {
        self.sequences.iter().zip(&self.transcripts)
    }

    pub fn total_frames(&self) -> usize {
        self.sequences.iter().map(FeatureSequence::len).sum()
    }

    /// Widens the vocabulary, e.g. to match a label table.
    pub fn with_vocab(mut self, vocab: usize) -> Result<Self> {
        let needed = self
            .transcripts
            .iter()
            .flat_map(|t| t.0.iter())
            .map(|&c| c + 1)
            .max()
            .unwrap_or(0);
        if vocab < needed {
            return Err(Error::VocabularyMismatch {
                what: "vocabulary smaller than used ids",
                left: vocab,
                right: needed,
            });
        }
        self.vocab = vocab;
        Ok(self)
    }

    pub fn write(&self, feature_path: &Path, transcript_path: &Path) -> Result<()> {
        write_features(feature_path, &self.sequences)?;
        write_transcripts(transcript_path, &self.transcripts)
    }
}

/// Loads a corpus; the vocabulary is one past the largest char id seen.
pub fn load_corpus(feature_path: &Path, transcript_path: &Path) -> Result<Corpus> {
    let sequences = read_features(feature_path)?;
    let transcripts = read_transcripts(transcript_path)?;
    let vocab = transcripts
        .iter()
        .flat_map(|t| t.0.iter())
        .map(|&c| c + 1)
        .max()
        .unwrap_or(0);
    Corpus::new(vocab, sequences, transcripts)
}

pub fn write_features(path: &Path, sequences: &[FeatureSequence]) -> Result<()> {
    let mut w = binio::create(path)?;
    let body = |w: &mut dyn Write| -> std::io::Result<()> {
        binio::write_preamble(w, FEATURE_MAGIC, FEATURE_VERSION)?;
        w.write_u32::<LittleEndian>(sequences.len() as u32)?;
        for s in sequences {
            w.write_u32::<LittleEndian>(s.len() as u32)?;
            w.write_u32::<LittleEndian>(s.dim() as u32)?;
            for &v in &s.frames {
                w.write_f32::<LittleEndian>(v)?;
            }
        }
        w.flush()
    };
    body(&mut w).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: &Path) -> Result<Vec<FeatureSequence>> {
    let mut r = binio::open(path)?;
    binio::read_preamble(&mut r, FEATURE_MAGIC, FEATURE_VERSION)?;
    let count = binio::u32_of(&mut r, "sequence count")? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    let mut dim = None;
    for i in 0..count {
        let t = binio::u32_of(&mut r, "frame count")? as usize;
        let d = binio::u32_of(&mut r, "dimension")? as usize;
        if t == 0 {
            return Err(Error::MalformedHeader(format!("sequence {i} declares T=0")));
        }
        if d == 0 {
            return Err(Error::MalformedHeader(format!("sequence {i} declares D=0")));
        }
        match dim {
            None => dim = Some(d),
            Some(expected) if expected != d => return Err(Error::DimensionMismatch { expected, found: d }),
            _ => {}
        }
        let mut frames = vec![0f32; t * d];
        r.read_f32_into::<LittleEndian>(&mut frames)
            .map_err(|_| Error::MalformedRecord(format!("sequence {i} truncated")))?;
        out.push(FeatureSequence::new(d, frames)?);
    }
    binio::expect_eof(&mut r)?;
    Ok(out)
}

pub fn write_transcripts(path: &Path, transcripts: &[Transcription]) -> Result<()> {
    let mut text = String::new();
    for t in transcripts {
        text.push_str(&t.to_line());
        text.push('\n');
    }
    binio::write_text(path, &text)
}

pub fn read_transcripts(path: &Path) -> Result<Vec<Transcription>> {
    binio::read_text(path)?.lines().map(Transcription::parse).collect()
}

/// Display labels, line `k` naming char id `k`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabelTable(pub Vec<String>);

impl LabelTable {
    pub fn read(path: &Path) -> Result<Self> {
        Ok(LabelTable(binio::read_text(path)?.lines().map(str::to_owned).collect()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = self.0.join("\n");
        text.push('\n');
        binio::write_text(path, &text)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// One emitting state of a radical.
#[derive(Debug, Clone, PartialEq)]
pub struct RadicalState {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// Nominal duration in frames, at least 1.
    pub duration: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Radical {
    pub states: Vec<RadicalState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadicalInventory {
    pub dim: usize,
    pub radicals: Vec<Radical>,
    pub seed: u64,
}

impl RadicalInventory {
    pub fn validate(&self) -> Result<()> {
        for (i, r) in self.radicals.iter().enumerate() {
            if r.states.is_empty() {
                return Err(Error::InvalidArgument(format!("radical {i} has no states")));
            }
            for s in &r.states {
                if s.mean.len() != self.dim || s.variance.len() != self.dim {
                    return Err(Error::DimensionMismatch {
                        expected: self.dim,
                        found: s.mean.len().max(s.variance.len()),
                    });
                }
                if s.variance.iter().any(|&v| !(v > 0.0)) {
                    return Err(Error::InvalidArgument(format!(
                        "radical {i} has a non-positive variance"
                    )));
                }
                if s.duration == 0 {
                    return Err(Error::InvalidArgument(format!("radical {i} has a zero duration")));
                }
            }
        }
        Ok(())
    }
}

/// A character as an ordered list of radicals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CharacterDefinition {
    pub id: usize,
    pub radicals: Vec<usize>,
}

impl CharacterDefinition {
    /// Ground-truth states as `(radical, state within radical)`.
    pub fn states(&self, inv: &RadicalInventory) -> Result<Vec<(usize, usize)>> {
        let mut out = Vec::new();
        for &r in &self.radicals {
            let radical = inv.radicals.get(r).ok_or(Error::InvalidRadical {
                character: self.id,
                radical: r,
            })?;
            out.extend((0..radical.states.len()).map(|s| (r, s)));
        }
        if out.is_empty() {
            return Err(Error::InvalidArgument(format!("character {} has no states", self.id)));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthOptions {
    pub n_lines: usize,
    pub line_len: usize,
    pub dur_jitter: f64,
    pub seed: u64,
}

/// Draws a duration uniformly from `[nominal(1-j), nominal(1+j)]`, rounded,
/// never below one frame.
fn jittered_duration(rng: &mut SeededRng, nominal: usize, jitter: f64) -> usize {
    let nominal = nominal as f64;
    let u: f64 = rng.random();
    let d = nominal * (1.0 - jitter) + u * 2.0 * jitter * nominal;
    (d.round() as usize).max(1)
}

/// Generates `n_lines` lines of uniformly random characters. Each
/// ground-truth state emits a run of frames from its radical's Gaussian.
///
/// The returned ground truth identifies `(char, position)` with the
/// `(radical, radical state, position)` it was generated from, so two
/// characters only share an identity where the same radical occupies the
/// same state positions.
pub fn synth_corpus(
    inv: &RadicalInventory,
    chars: &[CharacterDefinition],
    opts: &SynthOptions,
) -> Result<(Corpus, GroundTruthTying)> {
    inv.validate()?;
    if !(0.0..1.0).contains(&opts.dur_jitter) {
        return Err(Error::InvalidArgument(format!(
            "duration jitter {} outside [0, 1)",
            opts.dur_jitter
        )));
    }
    if opts.n_lines == 0 || opts.line_len == 0 {
        return Err(Error::InvalidArgument("empty corpus requested".into()));
    }
    if chars.is_empty() {
        return Err(Error::InvalidArgument("no characters defined".into()));
    }
    for (i, c) in chars.iter().enumerate() {
        if c.id != i {
            return Err(Error::InvalidArgument(format!(
                "character ids must be dense; slot {i} holds {}",
                c.id
            )));
        }
    }
    let layouts = chars.iter().map(|c| c.states(inv)).collect::<Result<Vec<_>>>()?;

    let mut identities = BTreeMap::new();
    let truth: Vec<Vec<usize>> = layouts
        .iter()
        .map(|states| {
            states
                .iter()
                .enumerate()
                .map(|(pos, &(r, s))| {
                    let next = identities.len();
                    *identities.entry((r, s, pos)).or_insert(next)
                })
                .collect()
        })
        .collect();
    let truth = GroundTruthTying::new(truth)?;

    let mut rng = seeded_rng(opts.seed);
    let v = chars.len() as u32;
    let mut sequences = Vec::with_capacity(opts.n_lines);
    let mut transcripts = Vec::with_capacity(opts.n_lines);
    for _ in 0..opts.n_lines {
        let line: Vec<usize> = (0..opts.line_len).map(|_| rng.random_range(0..v) as usize).collect();
        let mut frames = Vec::new();
        for &c in &line {
            for &(r, s) in &layouts[c] {
                let state = &inv.radicals[r].states[s];
                let dur = jittered_duration(&mut rng, state.duration, opts.dur_jitter);
                for _ in 0..dur {
                    for (m, var) in state.mean.iter().zip(&state.variance) {
                        let z: f64 = rng.sample(StandardNormal);
                        frames.push((m + var.sqrt() * z) as f32);
                    }
                }
            }
        }
        sequences.push(FeatureSequence::new(inv.dim, frames)?);
        transcripts.push(Transcription(line));
    }
    Ok((Corpus::new(chars.len(), sequences, transcripts)?, truth))
}

/// Design of the synthetic benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkDesign {
    pub dim: usize,
    /// Number of states of each radical; its length is the radical count.
    pub radical_states: Vec<usize>,
    pub n_chars: usize,
    /// Ground-truth states per character.
    pub positions: usize,
    /// Minimum distance between any two state means, in units of the
    /// largest per-dimension standard deviation.
    pub separation: f64,
    pub nominal_duration: usize,
}

impl Default for BenchmarkDesign {
    fn default() -> Self {
        BenchmarkDesign {
            dim: 8,
            radical_states: vec![1, 1, 2, 2, 2, 2, 3, 3],
            n_chars: 40,
            positions: 5,
            separation: 10.0,
            nominal_duration: 3,
        }
    }
}

/// Radicals and characters of the standard benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub inventory: RadicalInventory,
    pub chars: Vec<CharacterDefinition>,
}

impl BenchmarkDesign {
    /// Builds an inventory whose state means are pairwise at least
    /// `separation` standard deviations apart, and characters as distinct
    /// ordered sequences of distinct radicals spanning `positions` states.
    pub fn build(&self, seed: u64) -> Result<Benchmark> {
        let mut rng = seeded_rng(seed);
        let sigma_max = 1.0f64;
        let total_states: usize = self.radical_states.iter().sum();
        // Isotropic spread large enough that rejection terminates quickly.
        let spread = self.separation * sigma_max * 1.5 / (self.dim as f64).sqrt();
        let mut means: Vec<Vec<f64>> = Vec::with_capacity(total_states);
        let mut attempts = 0usize;
        while means.len() < total_states {
            attempts += 1;
            if attempts > 1_000_000 {
                return Err(Error::Infeasible("cannot place separated means".into()));
            }
            let cand: Vec<f64> = (0..self.dim)
                .map(|_| spread * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let ok = means.iter().all(|m| {
                let d2: f64 = m.iter().zip(&cand).map(|(a, b)| (a - b).powi(2)).sum();
                d2.sqrt() >= self.separation * sigma_max
            });
            if ok {
                means.push(cand);
            }
        }
        let mut means = means.into_iter();
        let radicals = self
            .radical_states
            .iter()
            .map(|&k| Radical {
                states: (0..k)
                    .map(|_| RadicalState {
                        mean: means.next().expect("counted above"),
                        variance: (0..self.dim)
                            .map(|_| rng.random_range(0.5..=1.0) * sigma_max * sigma_max)
                            .collect(),
                        duration: self.nominal_duration,
                    })
                    .collect(),
            })
            .collect();

        let mut layouts = Vec::new();
        let mut prefix = Vec::new();
        compositions(&self.radical_states, self.positions, &mut prefix, &mut layouts);
        if layouts.len() < self.n_chars {
            return Err(Error::Infeasible(format!(
                "only {} radical compositions span {} states",
                layouts.len(),
                self.positions
            )));
        }
        layouts.shuffle(&mut rng);
        layouts.truncate(self.n_chars);
        layouts.sort();
        let chars = layouts
            .into_iter()
            .enumerate()
            .map(|(id, radicals)| CharacterDefinition { id, radicals })
            .collect();
        Ok(Benchmark {
            inventory: RadicalInventory {
                dim: self.dim,
                radicals,
                seed,
            },
            chars,
        })
    }
}

/// All ordered sequences of distinct radicals whose state counts sum to
/// `remaining`.
fn compositions(sizes: &[usize], remaining: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if remaining == 0 {
        if !prefix.is_empty() {
            out.push(prefix.clone());
        }
        return;
    }
    for (r, &k) in sizes.iter().enumerate() {
        if k <= remaining && !prefix.contains(&r) {
            prefix.push(r);
            compositions(sizes, remaining - k, prefix, out);
            prefix.pop();
        }
    }
}

/// The standard benchmark at its default design.
pub fn standard_benchmark(seed: u64) -> Result<Benchmark> {
    BenchmarkDesign::default().build(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_state_inventory(duration: usize) -> RadicalInventory {
        RadicalInventory {
            dim: 2,
            radicals: vec![Radical {
                states: vec![RadicalState {
                    mean: vec![1.0, -1.0],
                    variance: vec![0.5, 0.5],
                    duration,
                }],
            }],
            seed: 0,
        }
    }

    #[test]
    fn round_trip_single_sequence() {
        let seq = FeatureSequence::new(2, vec![1.0, 2.0, 3.0, 4.0, 5.5, -6.25]).unwrap();
        let corpus = Corpus::new(1, vec![seq], vec![Transcription(vec![0])]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (f, t) = (dir.path().join("f.phmf"), dir.path().join("t.txt"));
        corpus.write(&f, &t).unwrap();
        let back = load_corpus(&f, &t).unwrap();
        assert_eq!(back, corpus);
        assert_eq!(back.len(), 1);
    }

    #[test]
    fn count_mismatch_is_reported() {
        let seq = FeatureSequence::new(1, vec![1.0]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (f, t) = (dir.path().join("f.phmf"), dir.path().join("t.txt"));
        write_features(&f, &[seq]).unwrap();
        std::fs::write(&t, "0\n0\n").unwrap();
        assert!(matches!(load_corpus(&f, &t), Err(Error::CountMismatch { .. })));
    }

    #[test]
    fn zero_dimension_header_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("f.phmf");
        let mut bytes = b"PHMF".to_vec();
        for v in [1u32, 1, 3, 0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(&f, bytes).unwrap();
        assert!(matches!(read_features(&f), Err(Error::MalformedHeader(_))));
    }

    #[test]
    fn mixed_dimensions_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("f.phmf");
        let a = FeatureSequence::new(1, vec![1.0]).unwrap();
        let b = FeatureSequence::new(2, vec![1.0, 2.0]).unwrap();
        write_features(&f, &[a, b]).unwrap();
        assert!(matches!(read_features(&f), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn no_jitter_gives_nominal_durations() {
        let inv = one_state_inventory(4);
        let chars = vec![CharacterDefinition {
            id: 0,
            radicals: vec![0],
        }];
        let opts = SynthOptions {
            n_lines: 5,
            line_len: 1,
            dur_jitter: 0.0,
            seed: 3,
        };
        let (corpus, _) = synth_corpus(&inv, &chars, &opts).unwrap();
        assert!(corpus.sequences().iter().all(|s| s.len() == 4));
    }

    #[test]
    fn shared_radicals_share_identities() {
        let mut inv = one_state_inventory(2);
        inv.radicals.push(inv.radicals[0].clone());
        inv.radicals[1].states[0].mean = vec![20.0, 20.0];
        let chars = vec![
            CharacterDefinition {
                id: 0,
                radicals: vec![0, 1],
            },
            CharacterDefinition {
                id: 1,
                radicals: vec![0, 0],
            },
        ];
        let opts = SynthOptions {
            n_lines: 1,
            line_len: 2,
            dur_jitter: 0.2,
            seed: 1,
        };
        let (_, truth) = synth_corpus(&inv, &chars, &opts).unwrap();
        assert_eq!(truth.identity(0, 0), truth.identity(1, 0));
        assert_ne!(truth.identity(0, 1), truth.identity(1, 1));
    }

    #[test]
    fn invalid_radical_reference() {
        let inv = one_state_inventory(2);
        let chars = vec![CharacterDefinition {
            id: 0,
            radicals: vec![3],
        }];
        let opts = SynthOptions {
            n_lines: 1,
            line_len: 1,
            dur_jitter: 0.0,
            seed: 1,
        };
        assert!(matches!(
            synth_corpus(&inv, &chars, &opts),
            Err(Error::InvalidRadical {
                character: 0,
                radical: 3
            })
        ));
    }

    #[test]
    fn generation_is_deterministic() {
        let bench = standard_benchmark(11).unwrap();
        let opts = SynthOptions {
            n_lines: 4,
            line_len: 5,
            dur_jitter: 0.3,
            seed: 5,
        };
        let a = synth_corpus(&bench.inventory, &bench.chars, &opts).unwrap();
        let b = synth_corpus(&bench.inventory, &bench.chars, &opts).unwrap();
        assert_eq!(a, b);
        assert_eq!(standard_benchmark(11).unwrap(), bench);
    }

    #[test]
    fn benchmark_is_separated() {
        let bench = standard_benchmark(2).unwrap();
        assert_eq!(bench.inventory.radicals.len(), 8);
        assert_eq!(bench.chars.len(), 40);
        let means: Vec<&Vec<f64>> = bench
            .inventory
            .radicals
            .iter()
            .flat_map(|r| r.states.iter().map(|s| &s.mean))
            .collect();
        for (i, a) in means.iter().enumerate() {
            for b in &means[i + 1..] {
                let d: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum();
                assert!(d.sqrt() >= 10.0);
            }
        }
        for c in &bench.chars {
            assert_eq!(c.states(&bench.inventory).unwrap().len(), 5);
        }
    }

    #[test]
    fn empirical_means_converge() {
        let inv = one_state_inventory(1);
        let chars = vec![CharacterDefinition {
            id: 0,
            radicals: vec![0],
        }];
        let opts = SynthOptions {
            n_lines: 12_000,
            line_len: 1,
            dur_jitter: 0.0,
            seed: 9,
        };
        let (corpus, _) = synth_corpus(&inv, &chars, &opts).unwrap();
        let n = corpus.total_frames() as f64;
        let state = &inv.radicals[0].states[0];
        for d in 0..2 {
            let mean: f64 = corpus
                .sequences()
                .iter()
                .flat_map(|s| s.frames())
                .map(|f| f[d] as f64)
                .sum::<f64>()
                / n;
            let se = (state.variance[d] / n).sqrt();
            assert!((mean - state.mean[d]).abs() <= 5.0 * se);
        }
    }
}
