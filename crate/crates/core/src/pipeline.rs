//! End-to-end pipeline: configuration, per-stage commands over a work
//! directory, and the evaluation report.
//!
//! Every stage reads its inputs from and writes its outputs to the work
//! directory, so stages can be run one at a time or all at once. All
//! artifacts except `timing.txt` are pure functions of the configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use crate::binio;
use crate::corpus::{load_corpus, standard_benchmark, synth_corpus, Corpus, LabelTable, SynthOptions};
use crate::decode::{
    corpus_cer, decode, parse_hypotheses, train_lm, write_hypotheses, CharNgramLm, DecodeOptions, DecodeResult,
    EditCounts,
};
use crate::error::{Error, Result};
use crate::gstats::{StateStats, DEFAULT_VARIANCE_FLOOR};
use crate::hmm::{
    alignments_to_text, collect_tying_stats, flat_start, viterbi_train, HmmModelSet, ShortSequencePolicy, TrainOptions,
    TrainReport,
};
use crate::questions::{build_question_set, embed_characters, QuestionOptions, QuestionSet};
use crate::tying::{tie_states, tying_purity, GroundTruthTying, StateTying, TyingOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Tied,
    Untied,
}

/// State budget: an absolute tied-state count or an average per character.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Budget {
    Total(usize),
    PerChar(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub workdir: PathBuf,
    pub train_features: Option<PathBuf>,
    pub train_transcripts: Option<PathBuf>,
    pub eval_features: Option<PathBuf>,
    pub eval_transcripts: Option<PathBuf>,
    pub seed: u64,
    pub train_lines: usize,
    pub eval_lines: usize,
    pub line_len: usize,
    pub dur_jitter: f64,
    pub mode: Mode,
    /// Positions per character for tied models; untied models use the
    /// per-character budget instead.
    pub positions: usize,
    pub budget: Option<Budget>,
    pub expansion: f64,
    pub min_count: f64,
    pub floor: f64,
    pub cross_position: bool,
    pub exclude: Vec<usize>,
    pub restarts: usize,
    pub kmeans_iters: usize,
    pub iters: usize,
    pub mixtures: Vec<usize>,
    pub short_sequences: ShortSequencePolicy,
    pub lm_order: usize,
    pub add_k: f64,
    pub lm_weight: f64,
    pub beam: Option<f64>,
    pub timing_runs: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            workdir: PathBuf::from("work"),
            train_features: None,
            train_transcripts: None,
            eval_features: None,
            eval_transcripts: None,
            seed: 0,
            train_lines: 200,
            eval_lines: 50,
            line_len: 5,
            dur_jitter: 0.2,
            mode: Mode::Tied,
            positions: 5,
            budget: None,
            expansion: 2.0,
            min_count: 10.0,
            floor: DEFAULT_VARIANCE_FLOOR,
            cross_position: false,
            exclude: Vec::new(),
            restarts: 10,
            kmeans_iters: 50,
            iters: 9,
            mixtures: vec![1, 2, 4],
            short_sequences: ShortSequencePolicy::Fail,
            lm_order: 2,
            add_k: 0.1,
            lm_weight: 1.0,
            beam: None,
            timing_runs: 3,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_value(key, s))
        .collect()
}

impl PipelineConfig {
    /// Parses `key=value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        let mut pairs = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", no + 1)))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        cfg.apply(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        PipelineConfig::parse(&binio::read_text(path)?)
    }

    /// Applies overrides, then re-validates.
    pub fn apply<'a, I: IntoIterator<Item = (&'a str, &'a str)>>(&mut self, pairs: I) -> Result<()> {
        let mut target_n = None;
        let mut n_s = None;
        for (k, v) in pairs {
            match k {
                "workdir" => self.workdir = PathBuf::from(v),
                "train_features" => self.train_features = Some(PathBuf::from(v)),
                "train_transcripts" => self.train_transcripts = Some(PathBuf::from(v)),
                "eval_features" => self.eval_features = Some(PathBuf::from(v)),
                "eval_transcripts" => self.eval_transcripts = Some(PathBuf::from(v)),
                "seed" => self.seed = parse_value(k, v)?,
                "train_lines" | "n_lines" => self.train_lines = parse_value(k, v)?,
                "eval_lines" => self.eval_lines = parse_value(k, v)?,
                "line_len" => self.line_len = parse_value(k, v)?,
                "dur_jitter" => self.dur_jitter = parse_value(k, v)?,
                "mode" => {
                    self.mode = match v {
                        "tied" => Mode::Tied,
                        "untied" => Mode::Untied,
                        _ => return Err(Error::Config(format!("mode must be tied or untied, not {v:?}"))),
                    }
                }
                "positions" => self.positions = parse_value(k, v)?,
                "target_n" => target_n = Some(parse_value::<usize>(k, v)?),
                "n_s" => n_s = Some(parse_value::<f64>(k, v)?),
                "expansion" => self.expansion = parse_value(k, v)?,
                "min_count" => self.min_count = parse_value(k, v)?,
                "floor" => self.floor = parse_value(k, v)?,
                "cross_position" => self.cross_position = parse_value(k, v)?,
                "exclude" => self.exclude = parse_list(k, v)?,
                "restarts" => self.restarts = parse_value(k, v)?,
                "kmeans_iters" => self.kmeans_iters = parse_value(k, v)?,
                "iters" => self.iters = parse_value(k, v)?,
                "mixtures" => self.mixtures = parse_list(k, v)?,
                "short_sequences" => {
                    self.short_sequences = match v {
                        "fail" => ShortSequencePolicy::Fail,
                        "skip" => ShortSequencePolicy::Skip,
                        _ => {
                            return Err(Error::Config(format!(
                                "short_sequences must be fail or skip, not {v:?}"
                            )))
                        }
                    }
                }
                "lm_order" => self.lm_order = parse_value(k, v)?,
                "add_k" => self.add_k = parse_value(k, v)?,
                "lm_weight" => self.lm_weight = parse_value(k, v)?,
                "beam" => {
                    self.beam = match v {
                        "none" | "inf" | "" => None,
                        _ => Some(parse_value(k, v)?),
                    }
                }
                "timing_runs" => self.timing_runs = parse_value(k, v)?,
                _ => return Err(Error::Config(format!("unknown key {k:?}"))),
            }
        }
        match (target_n, n_s) {
            (Some(_), Some(_)) => return Err(Error::Config("give only one of target_n and n_s".into())),
            (Some(t), None) => self.budget = Some(Budget::Total(t)),
            (None, Some(s)) => self.budget = Some(Budget::PerChar(s)),
            (None, None) => {}
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(1..=10).contains(&self.positions) {
            return bad(format!("positions {} outside 1..=10", self.positions));
        }
        match self.budget {
            Some(Budget::Total(0)) => return bad("target_n must be at least 1".into()),
            Some(Budget::PerChar(s)) if !(s > 0.0) || !s.is_finite() => {
                return bad(format!("n_s {s} must be positive"));
            }
            Some(Budget::PerChar(s)) if self.mode == Mode::Untied && (s.fract() != 0.0 || s > 10.0) => {
                return bad(format!("untied models need a whole n_s in 1..=10, not {s}"));
            }
            _ => {}
        }
        if self.iters == 0 || self.mixtures.is_empty() || self.mixtures.contains(&0) {
            return bad("iters and mixture counts must be positive".into());
        }
        if !(self.lm_order == 1 || self.lm_order == 2) {
            return bad(format!("lm_order {} not in {{1, 2}}", self.lm_order));
        }
        if !(self.expansion >= 1.0) || !(self.floor > 0.0) || !(self.add_k > 0.0) || !(self.lm_weight >= 0.0) {
            return bad("expansion >= 1, floor > 0, add_k > 0 and lm_weight >= 0 are required".into());
        }
        if self.timing_runs == 0 {
            return bad("timing_runs must be positive".into());
        }
        Ok(())
    }

    pub fn paths(&self) -> Paths {
        Paths::new(self)
    }

    fn budget(&self) -> Result<Budget> {
        self.budget
            .ok_or_else(|| Error::Config("one of target_n and n_s is required".into()))
    }

    /// States per character of the untied model of this configuration.
    pub fn untied_positions(&self) -> Result<usize> {
        match self.mode {
            Mode::Tied => Ok(self.positions),
            Mode::Untied => match self.budget {
                None => Ok(self.positions),
                Some(Budget::PerChar(s)) => Ok(s as usize),
                Some(Budget::Total(_)) => Err(Error::Config("untied models take n_s, not target_n".into())),
            },
        }
    }

    /// Tied-state count for a vocabulary of `vocab` characters.
    pub fn target_n(&self, vocab: usize) -> Result<usize> {
        let n = match self.budget()? {
            Budget::Total(t) => t,
            Budget::PerChar(s) => (s * vocab as f64).round() as usize,
        };
        if n == 0 {
            return Err(Error::Config("state budget rounds to zero".into()));
        }
        Ok(n)
    }

    fn train_options(&self) -> TrainOptions {
        TrainOptions {
            iters: self.iters,
            mixtures: self.mixtures.clone(),
            short_sequences: self.short_sequences,
        }
    }

    fn decode_options(&self) -> DecodeOptions {
        DecodeOptions {
            lm_weight: self.lm_weight,
            beam: self.beam,
        }
    }
}

/// Artifact locations inside the work directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Paths {
    pub workdir: PathBuf,
    pub train_features: PathBuf,
    pub train_transcripts: PathBuf,
    pub eval_features: PathBuf,
    pub eval_transcripts: PathBuf,
    pub labels: PathBuf,
    pub truth: PathBuf,
    pub untied_model: PathBuf,
    pub untied_log: PathBuf,
    pub stats: PathBuf,
    pub alignments: PathBuf,
    pub questions: PathBuf,
    pub tying: PathBuf,
    pub trees: PathBuf,
    pub tied_model: PathBuf,
    pub tied_log: PathBuf,
    pub lm: PathBuf,
    pub hypotheses: PathBuf,
    pub report: PathBuf,
    pub timing: PathBuf,
}

impl Paths {
    fn new(cfg: &PipelineConfig) -> Self {
        let w = |name: &str| cfg.workdir.join(name);
        Paths {
            workdir: cfg.workdir.clone(),
            train_features: cfg.train_features.clone().unwrap_or_else(|| w("train.phmf")),
            train_transcripts: cfg.train_transcripts.clone().unwrap_or_else(|| w("train.txt")),
            eval_features: cfg.eval_features.clone().unwrap_or_else(|| w("eval.phmf")),
            eval_transcripts: cfg.eval_transcripts.clone().unwrap_or_else(|| w("eval.txt")),
            labels: w("labels.txt"),
            truth: w("truth.txt"),
            untied_model: w("untied.phmm"),
            untied_log: w("untied_train.log"),
            stats: w("stats.phms"),
            alignments: w("alignments.txt"),
            questions: w("questions.txt"),
            tying: w("tying.txt"),
            trees: w("trees"),
            tied_model: w("tied.phmm"),
            tied_log: w("tied_train.log"),
            lm: w("lm.txt"),
            hypotheses: w("hyp.txt"),
            report: w("report.txt"),
            timing: w("timing.txt"),
        }
    }

    /// Model decoded in the given mode.
    pub fn model(&self, mode: Mode) -> &Path {
        match mode {
            Mode::Tied => &self.tied_model,
            Mode::Untied => &self.untied_model,
        }
    }
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn load_train(p: &Paths) -> Result<Corpus> {
    load_corpus(&p.train_features, &p.train_transcripts)
}

/// Eval corpus sharing the model's vocabulary.
fn load_eval(p: &Paths, vocab: usize) -> Result<Corpus> {
    load_corpus(&p.eval_features, &p.eval_transcripts)?.with_vocab(vocab)
}

/// Synthesises the standard benchmark: training and evaluation corpora,
/// labels and the ground-truth tying of the training characters.
pub fn cmd_synth(cfg: &PipelineConfig) -> Result<()> {
    if cfg.train_lines == 0 || cfg.eval_lines == 0 {
        return Err(Error::Config("train_lines and eval_lines must be positive".into()));
    }
    let p = cfg.paths();
    ensure_dir(&p.workdir)?;
    let bench = standard_benchmark(cfg.seed)?;
    let mut opts = SynthOptions {
        n_lines: cfg.train_lines,
        line_len: cfg.line_len,
        dur_jitter: cfg.dur_jitter,
        seed: cfg.seed.wrapping_mul(2).wrapping_add(1),
    };
    let (train, truth) = synth_corpus(&bench.inventory, &bench.chars, &opts)?;
    opts.n_lines = cfg.eval_lines;
    opts.seed = cfg.seed.wrapping_mul(2).wrapping_add(2);
    let (eval, _) = synth_corpus(&bench.inventory, &bench.chars, &opts)?;
    train.write(&p.train_features, &p.train_transcripts)?;
    eval.write(&p.eval_features, &p.eval_transcripts)?;
    LabelTable((0..train.vocab()).map(|c| format!("c{c}")).collect()).write(&p.labels)?;
    truth.write(&p.truth)
}

fn training_log(report: &TrainReport) -> String {
    let mut out = String::new();
    for (i, (ll, m)) in report.logliks.iter().zip(&report.mixtures).enumerate() {
        let _ = writeln!(out, "iter {i} mixtures {m} loglik {ll}");
    }
    let _ = writeln!(out, "final loglik {}", report.final_loglik);
    out
}

fn train(cfg: &PipelineConfig, corpus: &Corpus, tying: &StateTying) -> Result<(HmmModelSet, TrainReport)> {
    let (start, _) = flat_start(corpus, tying, cfg.floor, cfg.short_sequences)?;
    viterbi_train(start, corpus, &cfg.train_options())
}

pub fn cmd_train_untied(cfg: &PipelineConfig) -> Result<HmmModelSet> {
    let p = cfg.paths();
    let corpus = load_train(&p)?;
    let tying = StateTying::untied(corpus.vocab(), cfg.untied_positions()?);
    let (model, report) = train(cfg, &corpus, &tying)?;
    model.write(&p.untied_model)?;
    binio::write_text(&p.untied_log, &training_log(&report))?;
    Ok(model)
}

pub fn cmd_collect_stats(cfg: &PipelineConfig) -> Result<StateStats> {
    let p = cfg.paths();
    let model = HmmModelSet::read(&p.untied_model)?;
    let corpus = load_train(&p)?.with_vocab(model.vocab())?;
    let (stats, alignments) = collect_tying_stats(&model, &corpus)?;
    stats.write(&p.stats)?;
    binio::write_text(&p.alignments, &alignments_to_text(&alignments))?;
    Ok(stats)
}

pub fn cmd_build_questions(cfg: &PipelineConfig) -> Result<QuestionSet> {
    let p = cfg.paths();
    let stats = StateStats::read(&p.stats)?;
    let opts = QuestionOptions {
        restarts: cfg.restarts,
        max_iters: cfg.kmeans_iters,
        floor: cfg.floor,
        seed: cfg.seed,
    };
    let questions = build_question_set(&embed_characters(&stats)?, &opts)?;
    questions.write(&p.questions)?;
    Ok(questions)
}

pub fn cmd_tie(cfg: &PipelineConfig) -> Result<StateTying> {
    let p = cfg.paths();
    let stats = StateStats::read(&p.stats)?;
    let questions = QuestionSet::read(&p.questions)?;
    let target = cfg.target_n(stats.vocab())?;
    ensure_dir(&p.trees)?;
    let tying = if target == stats.vocab() * stats.positions() {
        log::info!("budget covers every state; tying is the identity");
        StateTying::untied(stats.vocab(), stats.positions())
    } else {
        let opts = TyingOptions {
            expansion: cfg.expansion,
            min_count: cfg.min_count,
            floor: cfg.floor,
            cross_position: cfg.cross_position,
            exclude: cfg.exclude.clone(),
        };
        let outcome = tie_states(&stats, &questions, target, &opts)?;
        for pos in 0..stats.positions() {
            binio::write_text(&p.trees.join(format!("pos{pos}.dot")), &outcome.forest.to_dot(pos))?;
        }
        outcome.tying
    };
    tying.write(&p.tying)?;
    Ok(tying)
}

pub fn cmd_train_tied(cfg: &PipelineConfig) -> Result<HmmModelSet> {
    let p = cfg.paths();
    let tying = StateTying::read(&p.tying)?;
    let corpus = load_train(&p)?.with_vocab(tying.vocab())?;
    let (model, report) = train(cfg, &corpus, &tying)?;
    model.write(&p.tied_model)?;
    binio::write_text(&p.tied_log, &training_log(&report))?;
    Ok(model)
}

pub fn cmd_train_lm(cfg: &PipelineConfig) -> Result<CharNgramLm> {
    let p = cfg.paths();
    let corpus = load_train(&p)?;
    let lm = train_lm(corpus.transcripts(), corpus.vocab(), cfg.lm_order, cfg.add_k)?;
    lm.write(&p.lm)?;
    Ok(lm)
}

fn decode_all(
    model: &HmmModelSet,
    lm: &CharNgramLm,
    corpus: &Corpus,
    opts: &DecodeOptions,
) -> Result<Vec<DecodeResult>> {
    corpus
        .sequences()
        .par_iter()
        .map(|seq| decode(model, lm, seq, opts))
        .collect()
}

/// Decodes the eval set with the model of the configured mode and writes
/// hypotheses plus the median wall-clock time over `timing_runs` runs.
pub fn cmd_decode(cfg: &PipelineConfig) -> Result<f64> {
    let p = cfg.paths();
    let model = HmmModelSet::read(p.model(cfg.mode))?;
    let lm = CharNgramLm::read(&p.lm)?;
    let corpus = load_eval(&p, model.vocab())?;
    let opts = cfg.decode_options();
    let mut times = Vec::with_capacity(cfg.timing_runs);
    let mut results = None;
    for _ in 0..cfg.timing_runs {
        let start = Instant::now();
        let r = decode_all(&model, &lm, &corpus, &opts)?;
        times.push(start.elapsed().as_secs_f64());
        results.get_or_insert(r);
    }
    write_hypotheses(&p.hypotheses, &results.expect("at least one run"))?;
    times.sort_by(f64::total_cmp);
    let median = times[times.len() / 2];
    binio::write_text(&p.timing, &format!("decode_seconds {median}\nruns {}\n", times.len()))?;
    Ok(median)
}

/// Corpus CER of a hypothesis file against a transcript file.
pub fn cmd_eval(reference: &Path, hypotheses: &Path, exclude: &[usize]) -> Result<EditCounts> {
    let refs = crate::corpus::read_transcripts(reference)?;
    let hyps = parse_hypotheses(&binio::read_text(hypotheses)?)?;
    corpus_cer(&refs, &hyps, exclude)
}

/// Report fields, all recomputable from the artifacts.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub mode: Mode,
    pub vocab: usize,
    pub positions: usize,
    pub n_total: usize,
    pub mixtures: usize,
    pub parameters: usize,
    pub counts: EditCounts,
    /// Agreement with the generator's state identities, when known.
    pub purity: Option<f64>,
}

impl Report {
    pub fn cer(&self) -> f64 {
        self.counts.rate()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mode = match self.mode {
            Mode::Tied => "tied",
            Mode::Untied => "untied",
        };
        let _ = writeln!(out, "mode {mode}");
        let _ = writeln!(out, "vocabulary {}", self.vocab);
        let _ = writeln!(out, "positions {}", self.positions);
        let _ = writeln!(out, "n_total {}", self.n_total);
        let _ = writeln!(out, "states_per_char {}", self.n_total as f64 / self.vocab as f64);
        let _ = writeln!(out, "mixtures {}", self.mixtures);
        let _ = writeln!(out, "parameters {}", self.parameters);
        let _ = writeln!(out, "cer {}", self.cer());
        let _ = writeln!(out, "substitutions {}", self.counts.substitutions);
        let _ = writeln!(out, "insertions {}", self.counts.insertions);
        let _ = writeln!(out, "deletions {}", self.counts.deletions);
        let _ = writeln!(out, "reference_chars {}", self.counts.ref_len);
        if let Some(purity) = self.purity {
            let _ = writeln!(out, "tying_purity {purity}");
        }
        out
    }
}

/// Builds `report.txt` from the model, hypotheses and references.
pub fn cmd_report(cfg: &PipelineConfig) -> Result<Report> {
    let p = cfg.paths();
    let model = HmmModelSet::read(p.model(cfg.mode))?;
    let counts = cmd_eval(&p.eval_transcripts, &p.hypotheses, &cfg.exclude)?;
    let purity = match (cfg.mode, p.truth.exists()) {
        (Mode::Tied, true) => {
            let truth = GroundTruthTying::read(&p.truth)?;
            let uniform = (0..truth.vocab()).all(|c| truth.positions_of(c) == model.positions());
            if uniform {
                Some(tying_purity(model.tying(), &truth)?)
            } else {
                None
            }
        }
        _ => None,
    };
    let report = Report {
        mode: cfg.mode,
        vocab: model.vocab(),
        positions: model.positions(),
        n_total: model.n_tied(),
        mixtures: model.max_mixtures(),
        parameters: model.parameter_count(),
        counts,
        purity,
    };
    binio::write_text(&p.report, &report.to_text())?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutcome {
    pub report: Report,
    pub decode_seconds: f64,
}

/// Runs every stage on an existing corpus. Errors carry the stage name.
pub fn cmd_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutcome> {
    cfg.validate()?;
    if cfg.mode == Mode::Tied {
        cfg.budget()?;
    }
    ensure_dir(&cfg.workdir)?;
    cmd_train_untied(cfg).map_err(|e| e.in_stage("train-untied"))?;
    if cfg.mode == Mode::Tied {
        cmd_collect_stats(cfg).map_err(|e| e.in_stage("collect-stats"))?;
        cmd_build_questions(cfg).map_err(|e| e.in_stage("build-questions"))?;
        cmd_tie(cfg).map_err(|e| e.in_stage("tie"))?;
        cmd_train_tied(cfg).map_err(|e| e.in_stage("train-tied"))?;
    }
    cmd_train_lm(cfg).map_err(|e| e.in_stage("train-lm"))?;
    let decode_seconds = cmd_decode(cfg).map_err(|e| e.in_stage("decode"))?;
    let report = cmd_report(cfg).map_err(|e| e.in_stage("report"))?;
    Ok(PipelineOutcome { report, decode_seconds })
}

/// Parses `key value` report lines.
pub fn parse_report(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .filter_map(|l| l.split_once(' '))
        .map(|(k, v)| (k.to_string(), v.trim().to_string()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(dir: &Path) -> PipelineConfig {
        let mut cfg = PipelineConfig {
            workdir: dir.to_path_buf(),
            train_lines: 60,
            eval_lines: 8,
            line_len: 4,
            iters: 4,
            mixtures: vec![1, 2],
            restarts: 3,
            timing_runs: 1,
            ..PipelineConfig::default()
        };
        cfg.apply([("n_s", "3")]).unwrap();
        cfg
    }

    #[test]
    fn config_parsing() {
        let cfg = PipelineConfig::parse("# comment\nseed = 7\nn_s=1.5\nmixtures=1,2\nbeam=40\nexclude=3, 4\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.budget, Some(Budget::PerChar(1.5)));
        assert_eq!(cfg.mixtures, vec![1, 2]);
        assert_eq!(cfg.beam, Some(40.0));
        assert_eq!(cfg.exclude, vec![3, 4]);
        assert_eq!(cfg.target_n(40).unwrap(), 60);
        assert!(matches!(
            PipelineConfig::parse("n_s=1\ntarget_n=4"),
            Err(Error::Config(_))
        ));
        assert!(matches!(PipelineConfig::parse("bogus=1"), Err(Error::Config(_))));
        assert!(matches!(
            PipelineConfig::parse("mode=untied\nn_s=0.5"),
            Err(Error::Config(_))
        ));
        assert!(matches!(PipelineConfig::parse("target_n=0"), Err(Error::Config(_))));
    }

    #[test]
    fn synth_is_deterministic_and_rejects_empty() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        cmd_synth(&small(a.path())).unwrap();
        cmd_synth(&small(b.path())).unwrap();
        for f in [
            "train.phmf",
            "train.txt",
            "eval.phmf",
            "eval.txt",
            "labels.txt",
            "truth.txt",
        ] {
            assert_eq!(
                std::fs::read(a.path().join(f)).unwrap(),
                std::fs::read(b.path().join(f)).unwrap(),
                "{f}"
            );
        }
        let mut cfg = small(a.path());
        cfg.train_lines = 0;
        assert!(cmd_synth(&cfg).is_err());
    }

    #[test]
    fn pipeline_writes_every_artifact() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(dir.path());
        cmd_synth(&cfg).unwrap();
        let out = cmd_pipeline(&cfg).unwrap();
        assert_eq!(out.report.n_total, 120);
        let p = cfg.paths();
        for f in [
            &p.untied_model,
            &p.stats,
            &p.questions,
            &p.tying,
            &p.tied_model,
            &p.lm,
            &p.hypotheses,
            &p.report,
            &p.timing,
        ] {
            assert!(f.exists(), "{}", f.display());
        }
        assert!(p.trees.join("pos0.dot").exists());
        let fields = parse_report(&std::fs::read_to_string(&p.report).unwrap());
        assert_eq!(fields["n_total"], "120");
        assert_eq!(fields["parameters"], out.report.parameters.to_string());
    }

    #[test]
    fn stage_errors_name_the_stage() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(dir.path());
        match cmd_pipeline(&cfg) {
            Err(Error::Stage { stage, .. }) => assert_eq!(stage, "train-untied"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn eval_of_identical_files_is_zero() {
        let dir = tempfile::tempdir().unwrap();
        let r = dir.path().join("ref.txt");
        let h = dir.path().join("hyp.txt");
        std::fs::write(&r, "1 2 3\n4 5\n").unwrap();
        std::fs::write(&h, "1 2 3 # spans 0-1 1-2 2-3\n4 5\n").unwrap();
        assert_eq!(cmd_eval(&r, &h, &[]).unwrap().rate(), 0.0);
        std::fs::write(&h, "1 2 9\n4 5\n").unwrap();
        assert_eq!(cmd_eval(&r, &h, &[]).unwrap().rate(), 1.0 / 5.0);
    }
}
