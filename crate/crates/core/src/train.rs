//! Minibatch cross-entropy training with Adam, periodic validation and
//! best-by-validation-loss model selection.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::PreparedDoc;
use crate::error::{Error, Result};
use crate::model::{BatchOutcome, Model};
use crate::oracle::StepwiseExample;
use crate::tensor::{AdamConfig, AdamState, Tape};

/// Offset mixed into the seed so shuffling does not share a stream with
/// parameter initialisation.
const SHUFFLE_STREAM: u64 = 0x5eed_5eed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: usize,
    /// Mean next-step cross-entropy.
    pub loss: f64,
    /// Fraction of examples whose argmax is the target.
    pub accuracy: f64,
    pub examples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: usize,
    /// Mean batch loss at every step.
    pub train_loss: Vec<f64>,
    pub valid: Vec<EvalPoint>,
    pub best: Option<EvalPoint>,
    pub stopped_early: bool,
}

/// Example positions as (document, example) pairs.
fn example_index(docs: &[PreparedDoc]) -> Vec<(usize, usize)> {
    docs.iter().enumerate().flat_map(|(d, doc)| (0..doc.examples.len()).map(move |e| (d, e))).collect()
}

/// Groups a batch by document so each input is encoded once.
fn group(batch: &[(usize, usize)]) -> BTreeMap<usize, Vec<usize>> {
    let mut out: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &(d, e) in batch {
        out.entry(d).or_default().push(e);
    }
    out
}

/// Adds gradients of `scale * sum(loss)` over the batch into the store and
/// returns the batch bookkeeping.
pub fn accumulate_batch(model: &mut Model, docs: &[PreparedDoc], batch: &[(usize, usize)], scale: f64) -> Result<BatchOutcome> {
    let mut outcome = BatchOutcome { loss_sum: 0.0, examples: 0, correct: 0 };
    for (d, idx) in group(batch) {
        let doc = &docs[d];
        let examples: Vec<&StepwiseExample> = idx.iter().map(|&e| &doc.examples[e]).collect();
        let mut tape = Tape::new();
        let loss = model.example_losses(&mut tape, &doc.input, &examples, &mut outcome)?;
        let scaled = tape.scale(loss, scale);
        tape.backward(scaled)?;
        model.store.accumulate_grads(&tape);
    }
    Ok(outcome)
}

/// Loss and accuracy over every example of `docs`, without updating.
pub fn evaluate(model: &Model, docs: &[PreparedDoc], step: usize) -> Result<EvalPoint> {
    let mut outcome = BatchOutcome { loss_sum: 0.0, examples: 0, correct: 0 };
    for doc in docs.iter().filter(|d| !d.examples.is_empty()) {
        let examples: Vec<&StepwiseExample> = doc.examples.iter().collect();
        let mut tape = Tape::new();
        model.example_losses(&mut tape, &doc.input, &examples, &mut outcome)?;
    }
    let n = outcome.examples.max(1) as f64;
    Ok(EvalPoint { step, loss: outcome.loss_sum / n, accuracy: outcome.correct as f64 / n, examples: outcome.examples })
}

fn snapshot(model: &Model) -> Vec<Vec<f64>> {
    model.store.iter().map(|p| p.tensor.data().to_vec()).collect()
}

fn restore(model: &mut Model, params: &[Vec<f64>]) {
    let ids: Vec<_> = model.store.ids().collect();
    for (id, values) in ids.into_iter().zip(params) {
        model.store.get_mut(id).data_mut().copy_from_slice(values);
    }
}

/// Trains `model` in place. Every `eval_every` steps (and after the last
/// step) the validation set is scored; `best.ckpt` and `last.ckpt` are
/// written to `out_dir` when given. `stop` sees each evaluation and may end
/// training early. On return the model holds the best validated parameters.
///
/// A non-finite batch loss aborts with `NonFiniteLoss`, after restoring the
/// best parameters seen so far.
pub fn train(
    model: &mut Model,
    train_docs: &[PreparedDoc],
    valid_docs: &[PreparedDoc],
    out_dir: Option<&Path>,
    stop: &mut dyn FnMut(&Model, &EvalPoint) -> bool,
) -> Result<TrainReport> {
    let index = example_index(train_docs);
    if index.is_empty() {
        return Err(Error::Input("no training examples".into()));
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let o = model.config.optim.clone();
    let adam_config = AdamConfig { learning_rate: o.learning_rate, beta1: o.beta1, beta2: o.beta2, epsilon: o.epsilon };
    let mut adam = AdamState::new(adam_config, &model.store);
    let mut rng = ChaCha8Rng::seed_from_u64(model.config.seed ^ SHUFFLE_STREAM);
    let batch_size = o.batch_size.min(index.len());

    let mut report = TrainReport { steps: 0, train_loss: Vec::new(), valid: Vec::new(), best: None, stopped_early: false };
    let mut best_params = snapshot(model);
    let mut order = Vec::new();
    let mut cursor = 0;
    let mut since_best = 0;

    for step in 1..=o.max_steps {
        let mut batch = Vec::with_capacity(batch_size);
        while batch.len() < batch_size {
            if cursor == order.len() {
                order = index.clone();
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        model.store.zero_grad();
        let outcome = accumulate_batch(model, train_docs, &batch, 1.0 / batch.len() as f64)?;
        let loss = outcome.loss_sum / batch.len() as f64;
        if !loss.is_finite() {
            restore(model, &best_params);
            return Err(Error::NonFiniteLoss(step));
        }
        adam.update(&mut model.store)?;
        report.train_loss.push(loss);
        report.steps = step;

        if step % o.eval_every != 0 && step != o.max_steps {
            continue;
        }
        let point = evaluate(model, valid_docs, step)?;
        let improved = report.best.as_ref().is_none_or(|b| point.loss < b.loss);
        if improved {
            best_params = snapshot(model);
            report.best = Some(point.clone());
            since_best = 0;
        } else {
            since_best += 1;
        }
        if let Some(dir) = out_dir {
            let ckpt = Checkpoint::from_model(model, step);
            ckpt.save(&dir.join("last.ckpt"))?;
            if improved {
                ckpt.save(&dir.join("best.ckpt"))?;
            }
        }
        report.valid.push(point.clone());
        if stop(model, &point) || (o.patience > 0 && since_best >= o.patience) {
            report.stopped_early = step != o.max_steps;
            break;
        }
    }
    restore(model, &best_params);
    Ok(report)
}

#[cfg(test)]
mod tests;
