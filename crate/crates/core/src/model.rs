//! A configured encoder with its parameters and vocabulary, the batch loss,
//! and an adapter that lets the decoders query it.

use std::cell::RefCell;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{EncoderKind, RunConfig};
use crate::decoder::StepScorer;
use crate::encoder::{EtcEncoder, HibertEncoder, ModelInput, StepwiseEncoder};
use crate::error::{Error, Result};
use crate::oracle::StepwiseExample;
use crate::plan::{Candidates, PlanStep};
use crate::tensor::{ParamStore, Tape, Var};
use crate::text::Vocab;

#[derive(Clone, Debug)]
pub enum Encoder {
    Hibert(HibertEncoder),
    Etc(EtcEncoder),
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: RunConfig,
    pub vocab: Vocab,
    pub encoder: Encoder,
    pub store: ParamStore,
}

/// Loss and bookkeeping for one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchOutcome {
    /// Sum of per-example cross-entropies.
    pub loss_sum: f64,
    pub examples: usize,
    /// Examples whose highest logit is the target.
    pub correct: usize,
}

impl Model {
    /// Fresh parameters drawn from a generator seeded with `config.seed`.
    pub fn new(config: RunConfig, vocab: Vocab) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let encoder = match config.encoder {
            EncoderKind::Hibert => Encoder::Hibert(HibertEncoder::new(&mut store, config.hibert(vocab.len()), &mut rng)?),
            EncoderKind::Etc => Encoder::Etc(EtcEncoder::new(&mut store, config.etc(vocab.len()), &mut rng)?),
        };
        Ok(Model { config, vocab, encoder, store })
    }

    pub fn encoder(&self) -> &dyn StepwiseEncoder {
        match &self.encoder {
            Encoder::Hibert(e) => e,
            Encoder::Etc(e) => e,
        }
    }

    /// Encodes token lists and truncates them to what the encoder takes.
    pub fn prepare<S: AsRef<str>>(&self, units: &[Vec<S>]) -> Result<ModelInput> {
        let ids = units.iter().map(|u| self.vocab.encode(u)).collect();
        self.encoder().prepare(self.config.task, ids)
    }

    /// Records the cross-entropy of every example on `tape`; all examples
    /// share `input`. Returns the summed loss node.
    pub fn example_losses(&self, tape: &mut Tape, input: &ModelInput, examples: &[&StepwiseExample], outcome: &mut BatchOutcome) -> Result<Var> {
        let candidates = input.candidates();
        let prefixes: Vec<&[PlanStep]> = examples.iter().map(|e| e.prefix.as_slice()).collect();
        let logits = self.encoder().step_logits(tape, &self.store, input, &prefixes)?;
        let mut terms = Vec::with_capacity(examples.len());
        for (ex, &l) in examples.iter().zip(&logits) {
            let target = candidates.index(ex.target).ok_or_else(|| Error::Input(format!("target {:?} is not a candidate", ex.target)))?;
            let ce = tape.cross_entropy(l, target)?;
            outcome.loss_sum += tape.value(ce).data()[0];
            outcome.examples += 1;
            if argmax(tape.value(l).data()) == target {
                outcome.correct += 1;
            }
            terms.push(ce);
        }
        let (&first, rest) = terms.split_first().ok_or_else(|| Error::Input("no examples".into()))?;
        rest.iter().try_fold(first, |acc, &t| tape.add(acc, t))
    }

    pub fn scorer<'a>(&'a self, input: &'a ModelInput) -> BoundModel<'a> {
        BoundModel { model: self, input, cache: RefCell::new(None) }
    }
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// A model fixed to one input. HiBERT unit vectors are computed once and
/// reused across prefixes.
pub struct BoundModel<'a> {
    model: &'a Model,
    input: &'a ModelInput,
    cache: RefCell<Option<(Tape, Var)>>,
}

impl StepScorer for BoundModel<'_> {
    fn candidates(&self) -> Candidates {
        self.input.candidates()
    }

    fn logits(&self, prefix: &[PlanStep]) -> Result<Vec<f64>> {
        let store = &self.model.store;
        match &self.model.encoder {
            Encoder::Hibert(h) => {
                let mut cache = self.cache.borrow_mut();
                if cache.is_none() {
                    let mut tape = Tape::new();
                    let reps = h.encode_units(&mut tape, store, self.input)?;
                    *cache = Some((tape, reps));
                }
                let (tape, reps) = cache.as_mut().expect("filled above");
                let mark = tape.len();
                let out = h.logits_from_units(tape, store, self.input.task, *reps, prefix);
                let values = out.map(|v| tape.value(v).data().to_vec());
                tape.truncate(mark);
                values
            }
            Encoder::Etc(e) => {
                let mut tape = Tape::new();
                let v = e.logits(&mut tape, store, self.input, prefix)?;
                Ok(tape.value(v).data().to_vec())
            }
        }
    }
}
