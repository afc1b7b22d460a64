//! Benchmark fixtures: a trained untied model on the synthetic benchmark,
//! its tying statistics and question set, and a bigram LM.

use phmm_core::corpus::{standard_benchmark, synth_corpus, SynthOptions};
use phmm_core::decode::{train_lm, CharNgramLm, DEFAULT_ADD_K};
use phmm_core::gstats::DEFAULT_VARIANCE_FLOOR;
use phmm_core::hmm::{collect_tying_stats, flat_start, viterbi_train, ShortSequencePolicy, TrainOptions};
use phmm_core::questions::{build_question_set, embed_characters, QuestionOptions};
use phmm_core::tying::{tie_states, TyingOptions};
use phmm_core::{Corpus, HmmModelSet, QuestionSet, Result, StateStats, StateTying};

pub const POSITIONS: usize = 5;

pub struct Fixture {
    pub train: Corpus,
    pub eval: Corpus,
    pub untied: HmmModelSet,
    pub stats: StateStats,
    pub questions: QuestionSet,
    pub lm: CharNgramLm,
}

/// Flat start plus the default training schedule (ending at 4 components).
fn train_model(corpus: &Corpus, tying: &StateTying) -> Result<HmmModelSet> {
    let (start, _) = flat_start(corpus, tying, DEFAULT_VARIANCE_FLOOR, ShortSequencePolicy::Fail)?;
    Ok(viterbi_train(start, corpus, &TrainOptions::default())?.0)
}

/// Benchmark tying setup used by the pipeline acceptance runs.
pub fn tying_options() -> TyingOptions {
    TyingOptions {
        expansion: 6.0,
        cross_position: true,
        ..TyingOptions::default()
    }
}

impl Fixture {
    pub fn new(seed: u64, train_lines: usize, eval_lines: usize) -> Result<Self> {
        let bench = standard_benchmark(seed)?;
        let mut opts = SynthOptions {
            n_lines: train_lines,
            line_len: 5,
            dur_jitter: 0.2,
            seed: 2 * seed + 1,
        };
        let (train, _) = synth_corpus(&bench.inventory, &bench.chars, &opts)?;
        opts.n_lines = eval_lines;
        opts.seed = 2 * seed + 2;
        let (eval, _) = synth_corpus(&bench.inventory, &bench.chars, &opts)?;
        let untied = train_model(&train, &StateTying::untied(train.vocab(), POSITIONS))?;
        let (stats, _) = collect_tying_stats(&untied, &train)?;
        let questions = build_question_set(&embed_characters(&stats)?, &QuestionOptions::default())?;
        let lm = train_lm(train.transcripts(), train.vocab(), 2, DEFAULT_ADD_K)?;
        Ok(Fixture {
            train,
            eval,
            untied,
            stats,
            questions,
            lm,
        })
    }

    pub fn vocab(&self) -> usize {
        self.train.vocab()
    }

    pub fn tie(&self, target: usize) -> Result<StateTying> {
        Ok(tie_states(&self.stats, &self.questions, target, &tying_options())?.tying)
    }

    /// Tied model trained from a flat start.
    pub fn tied_model(&self, target: usize) -> Result<HmmModelSet> {
        train_model(&self.train, &self.tie(target)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_models_are_consistent() {
        let fx = Fixture::new(3, 60, 2).unwrap();
        assert_eq!(fx.untied.n_tied(), fx.vocab() * POSITIONS);
        let tied = fx.tied_model(2 * fx.vocab()).unwrap();
        assert_eq!(tied.n_tied(), 2 * fx.vocab());
        assert!(tied.parameter_count() < fx.untied.parameter_count());
    }
}
