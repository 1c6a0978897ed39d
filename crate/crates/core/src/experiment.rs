//! The sentinel overfitting run: a model must learn to pick the sentences
//! carrying a marker token, in position order, then stop.

use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{EncoderKind, Preset, RunConfig};
use crate::data::{prepare_with_plan, PreparedDoc};
use crate::decoder::{beam_decode, Constraints};
use crate::error::Result;
use crate::model::Model;
use crate::plan::{PlanStep, Task};
use crate::synthetic::sentinel_corpus;
use crate::text::Vocab;
use crate::train::{train, EvalPoint, TrainReport};

#[derive(Clone, Debug, Serialize)]
pub struct OverfitSettings {
    pub docs: usize,
    pub sentences: usize,
    pub marked: usize,
    pub filler_vocab: usize,
    pub accuracy_target: f64,
    pub exact_target: f64,
}

impl Default for OverfitSettings {
    fn default() -> Self {
        OverfitSettings { docs: 64, sentences: 12, marked: 3, filler_vocab: 40, accuracy_target: 0.99, exact_target: 0.95 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct OverfitReport {
    pub encoder: EncoderKind,
    pub train: TrainReport,
    /// Next-step accuracy and exact plan match after training.
    pub accuracy: f64,
    pub exact_match: f64,
    pub steps: usize,
    pub seconds: f64,
}

impl OverfitReport {
    pub fn passed(&self, settings: &OverfitSettings, max_steps: usize) -> bool {
        self.accuracy >= settings.accuracy_target && self.exact_match >= settings.exact_target && self.steps <= max_steps
    }
}

/// Fraction of documents whose decoded plan equals the gold plan.
pub fn exact_match(model: &Model, docs: &[PreparedDoc]) -> Result<f64> {
    let d = &model.config.decode;
    let constraints = Constraints { no_repeat: d.no_repeat, ..Constraints::default() };
    let mut hits = 0;
    for doc in docs {
        let result = beam_decode(&model.scorer(&doc.input), d.beam, d.max_steps, &constraints)?;
        if result.hypothesis.steps == doc.gold {
            hits += 1;
        }
    }
    Ok(hits as f64 / docs.len().max(1) as f64)
}

pub fn sentinel_docs(model: &Model, settings: &OverfitSettings, corpus_seed: u64) -> Result<Vec<PreparedDoc>> {
    let mut rng = ChaCha8Rng::seed_from_u64(corpus_seed);
    let corpus = sentinel_corpus(&mut rng, settings.docs, settings.sentences, settings.marked, settings.filler_vocab);
    corpus
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let plan: Vec<PlanStep> = d.gold.iter().map(|&g| PlanStep::Unit(g)).collect();
            prepare_with_plan(model, &format!("sentinel-{i}"), &d.sentences, &plan, Vec::new())
        })
        .collect()
}

/// Desk-preset model for the sentinel corpus, with the vocabulary built from
/// the corpus itself.
pub fn sentinel_model(encoder: EncoderKind, settings: &OverfitSettings, corpus_seed: u64) -> Result<Model> {
    let config = RunConfig::preset(Preset::Desk, Task::Cnndm, encoder);
    let mut rng = ChaCha8Rng::seed_from_u64(corpus_seed);
    let corpus = sentinel_corpus(&mut rng, settings.docs, settings.sentences, settings.marked, settings.filler_vocab);
    let tokens = corpus.iter().flat_map(|d| d.sentences.iter().flatten().map(String::as_str));
    let vocab = Vocab::build(tokens, config.data.vocab_min_count, Some(config.data.max_vocab));
    Model::new(config, vocab)
}

/// Trains on the corpus and validates on the same documents, stopping once
/// both targets are met at an evaluation or after `time_limit`.
pub fn overfit(encoder: EncoderKind, settings: &OverfitSettings, corpus_seed: u64, time_limit: Option<Duration>) -> Result<OverfitReport> {
    let mut model = sentinel_model(encoder, settings, corpus_seed)?;
    let docs = sentinel_docs(&model, settings, corpus_seed)?;
    let start = Instant::now();
    let mut stop = |m: &Model, p: &EvalPoint| {
        if time_limit.is_some_and(|t| start.elapsed() > t) {
            return true;
        }
        p.accuracy >= settings.accuracy_target && exact_match(m, &docs).is_ok_and(|e| e >= settings.exact_target)
    };
    let report = train(&mut model, &docs, &docs, None, &mut stop)?;
    let best = report.best.clone().expect("at least one evaluation");
    Ok(OverfitReport {
        encoder,
        accuracy: best.accuracy,
        exact_match: exact_match(&model, &docs)?,
        steps: best.step,
        seconds: start.elapsed().as_secs_f64(),
        train: report,
    })
}
