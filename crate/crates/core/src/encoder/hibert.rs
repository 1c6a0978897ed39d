//! Hierarchical encoder: a sentence encoder pooled at each sentence's first
//! token, followed by document layers that read the partial summary.

use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{block_diagonal_pattern, dense_pattern, EncoderLayer, ModelInput, StepwiseEncoder};
use crate::attention::{AttentionConfig, AttentionParams};
use crate::error::{Error, Result};
use crate::layers::{FeedForward, LayerNorm, Scorer, INIT_STD};
use crate::plan::{PlanStep, Task};
use crate::tensor::{ParamId, ParamStore, Tape, Var};
use crate::text::{EOS, EOT, PAD};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HibertConfig {
    pub vocab_size: usize,
    pub dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub sent_layers: usize,
    pub doc_layers: usize,
    pub max_sent_len: usize,
    pub max_doc_units: usize,
    pub max_plan_len: usize,
}

impl HibertConfig {
    fn attention(&self) -> AttentionConfig {
        AttentionConfig { num_heads: self.heads, model_dim: self.dim, local_radius: 0, relpos_vocab_size: 3 }
    }

    pub fn validate(&self) -> Result<()> {
        self.attention().validate()?;
        for (name, v) in [
            ("vocab_size", self.vocab_size),
            ("ffn_dim", self.ffn_dim),
            ("max_sent_len", self.max_sent_len),
            ("max_doc_units", self.max_doc_units),
            ("max_plan_len", self.max_plan_len),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("hibert {name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Token ids of each sentence padded to a common width, with true lengths.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SentenceBatch {
    pub token_ids: Vec<Vec<usize>>,
    pub lengths: Vec<usize>,
}

impl SentenceBatch {
    pub fn new(token_ids: Vec<Vec<usize>>, lengths: Vec<usize>) -> Result<Self> {
        if token_ids.len() != lengths.len() || token_ids.is_empty() {
            return Err(Error::Input(format!("{} sentences with {} lengths", token_ids.len(), lengths.len())));
        }
        for (i, (row, &len)) in token_ids.iter().zip(&lengths).enumerate() {
            if len == 0 || len > row.len() {
                return Err(Error::Input(format!("sentence {i} has length {len} of width {}", row.len())));
            }
        }
        Ok(SentenceBatch { token_ids, lengths })
    }

    /// Pads each unit with `<pad>` to the longest one.
    pub fn from_units(units: &[Vec<usize>]) -> Result<Self> {
        let width = units.iter().map(Vec::len).max().unwrap_or(0);
        let rows = units
            .iter()
            .map(|u| {
                let mut r = u.clone();
                r.resize(width, PAD);
                r
            })
            .collect();
        Self::new(rows, units.iter().map(Vec::len).collect())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EmbeddingTables {
    pub token: ParamId,
    pub pos_token: ParamId,
    pub pos_doc: ParamId,
    pub pos_sum: ParamId,
    pub begin_summary: ParamId,
}

/// One document layer. The document and summary streams run through the same
/// self-attention and norm; only the document stream reads the summary.
#[derive(Clone, Copy, Debug)]
pub struct DocLayer {
    pub self_attn: AttentionParams,
    pub self_norm: LayerNorm,
    pub cross_attn: AttentionParams,
    pub cross_norm: LayerNorm,
    pub ffn: FeedForward,
    pub ffn_norm: LayerNorm,
}

#[derive(Clone, Debug)]
pub struct HibertEncoder {
    pub config: HibertConfig,
    pub embeddings: EmbeddingTables,
    pub sent_layers: Vec<EncoderLayer>,
    pub doc_layers: Vec<DocLayer>,
    pub scorer: Scorer,
}

/// Pseudo-unit token sequences placed before the real units.
fn pseudo_units(task: Task) -> &'static [usize] {
    match task {
        Task::Cnndm => &[EOT],
        Task::Rotowire => &[EOS, EOT],
    }
}

impl HibertEncoder {
    pub fn new<R: Rng>(store: &mut ParamStore, config: HibertConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.dim;
        let att = config.attention();
        let embeddings = EmbeddingTables {
            token: store.add_normal("hibert.token_embedding", &[config.vocab_size, d], INIT_STD, rng)?,
            pos_token: store.add_normal("hibert.token_position", &[config.max_sent_len, d], INIT_STD, rng)?,
            pos_doc: store.add_normal("hibert.document_position", &[config.max_doc_units + 2, d], INIT_STD, rng)?,
            pos_sum: store.add_normal("hibert.summary_position", &[config.max_plan_len + 1, d], INIT_STD, rng)?,
            begin_summary: store.add_normal("hibert.begin_summary", &[1, d], INIT_STD, rng)?,
        };
        let sent_layers = (0..config.sent_layers)
            .map(|i| EncoderLayer::new(store, &format!("hibert.sentence.{i}"), &att, config.ffn_dim, rng))
            .collect::<Result<_>>()?;
        let doc_layers = (0..config.doc_layers)
            .map(|i| {
                let name = format!("hibert.document.{i}");
                Ok(DocLayer {
                    self_attn: AttentionParams::new(store, &format!("{name}.self_attn"), &att, false, rng)?,
                    self_norm: LayerNorm::new(store, &format!("{name}.self_norm"), d)?,
                    cross_attn: AttentionParams::new(store, &format!("{name}.cross_attn"), &att, false, rng)?,
                    cross_norm: LayerNorm::new(store, &format!("{name}.cross_norm"), d)?,
                    ffn: FeedForward::new(store, &format!("{name}.ffn"), d, config.ffn_dim, rng)?,
                    ffn_norm: LayerNorm::new(store, &format!("{name}.ffn_norm"), d)?,
                })
            })
            .collect::<Result<_>>()?;
        let scorer = Scorer::new(store, "hibert.scorer", d, rng)?;
        Ok(HibertEncoder { config, embeddings, sent_layers, doc_layers, scorer })
    }

    /// One vector per sentence: the final hidden state of its first token.
    /// Padding beyond each length is never read.
    pub fn encode_sentences(&self, tape: &mut Tape, store: &ParamStore, batch: &SentenceBatch) -> Result<Var> {
        let mut ids = Vec::new();
        let mut positions = Vec::new();
        let mut firsts = Vec::with_capacity(batch.lengths.len());
        for (row, &len) in batch.token_ids.iter().zip(&batch.lengths) {
            if len > self.config.max_sent_len {
                return Err(Error::Input(format!("sentence of {len} tokens exceeds max_sent_len {}", self.config.max_sent_len)));
            }
            firsts.push(ids.len());
            ids.extend_from_slice(&row[..len]);
            positions.extend(0..len);
        }
        let tok = tape.param(store, self.embeddings.token);
        let pos = tape.param(store, self.embeddings.pos_token);
        let e = tape.gather_rows(tok, &ids)?;
        let p = tape.gather_rows(pos, &positions)?;
        let mut x = tape.add(e, p)?;
        let pattern = Rc::new(block_diagonal_pattern(&batch.lengths)?);
        for layer in &self.sent_layers {
            x = layer.forward(tape, store, x, &pattern)?;
        }
        tape.select_rows(x, &firsts)
    }

    /// Sentence vectors of the pseudo-units followed by the input's units.
    pub fn encode_units(&self, tape: &mut Tape, store: &ParamStore, input: &ModelInput) -> Result<Var> {
        if input.units.len() > self.config.max_doc_units {
            return Err(Error::Input(format!("{} units exceed max_doc_units {}", input.units.len(), self.config.max_doc_units)));
        }
        let mut all: Vec<Vec<usize>> = pseudo_units(input.task).iter().map(|&t| vec![t]).collect();
        all.extend(input.units.iter().cloned());
        self.encode_sentences(tape, store, &SentenceBatch::from_units(&all)?)
    }

    /// Document layers over `doc_reps` (positions already added) reading
    /// `summary_reps`, whose first row stands for the empty plan.
    pub fn encode_document_stepwise(&self, tape: &mut Tape, store: &ParamStore, doc_reps: Var, summary_reps: Var) -> Result<Var> {
        let n = tape.shape(doc_reps)[0];
        let k = tape.shape(summary_reps)[0];
        if k == 0 {
            return Err(Error::Input("summary stream needs at least the begin-summary row".into()));
        }
        let doc_self = Rc::new(dense_pattern(n, n)?);
        let sum_self = Rc::new(dense_pattern(k, k)?);
        let cross = Rc::new(dense_pattern(n, k)?);
        let (mut d, mut s) = (doc_reps, summary_reps);
        for layer in &self.doc_layers {
            let da = layer.self_attn.forward(tape, store, d, d, &doc_self)?;
            let sa = layer.self_attn.forward(tape, store, s, s, &sum_self)?;
            let d1 = layer.self_norm.residual(tape, store, d, da)?;
            let s1 = layer.self_norm.residual(tape, store, s, sa)?;
            let c = layer.cross_attn.forward(tape, store, d1, s1, &cross)?;
            let d2 = layer.cross_norm.residual(tape, store, d1, c)?;
            let f = layer.ffn.forward(tape, store, d2)?;
            d = layer.ffn_norm.residual(tape, store, d2, f)?;
            s = s1;
        }
        Ok(d)
    }

    /// Logits for one prefix given the unit vectors from [`Self::encode_units`].
    pub fn logits_from_units(&self, tape: &mut Tape, store: &ParamStore, task: Task, unit_reps: Var, prefix: &[PlanStep]) -> Result<Var> {
        let specials = pseudo_units(task);
        let c = specials.len();
        let rows = tape.shape(unit_reps)[0];
        let n = rows - c;
        let candidates = crate::plan::Candidates::new(n, task);
        candidates.validate_prefix(prefix)?;
        if prefix.len() > self.config.max_plan_len {
            return Err(Error::Input(format!("plan prefix of {} exceeds max_plan_len {}", prefix.len(), self.config.max_plan_len)));
        }
        let special_row = |tok: usize| specials.iter().position(|&t| t == tok).expect("task special");

        let doc = if task == Task::Rotowire {
            unit_reps
        } else {
            let pos = tape.param(store, self.embeddings.pos_doc);
            let p = tape.gather_rows(pos, &(0..rows).collect::<Vec<_>>())?;
            tape.add(unit_reps, p)?
        };

        let begin = tape.param(store, self.embeddings.begin_summary);
        let summary_rows: Vec<usize> = prefix
            .iter()
            .map(|s| match s {
                PlanStep::Unit(i) => c + i,
                _ => special_row(EOS),
            })
            .collect();
        let stream = if summary_rows.is_empty() {
            begin
        } else {
            let sel = tape.select_rows(unit_reps, &summary_rows)?;
            tape.concat_rows(&[begin, sel])?
        };
        let pos = tape.param(store, self.embeddings.pos_sum);
        let p = tape.gather_rows(pos, &(0..=prefix.len()).collect::<Vec<_>>())?;
        let summary = tape.add(stream, p)?;

        let out = self.encode_document_stepwise(tape, store, doc, summary)?;
        let order: Vec<usize> = (c..rows)
            .chain(task.stop_candidates().iter().map(|s| match s {
                PlanStep::EndOfPlan => special_row(EOT),
                _ => special_row(EOS),
            }))
            .collect();
        let ordered = tape.select_rows(out, &order)?;
        self.scorer.forward(tape, store, ordered)
    }
}

impl StepwiseEncoder for HibertEncoder {
    fn name(&self) -> &'static str {
        "hibert"
    }

    fn step_logits(&self, tape: &mut Tape, store: &ParamStore, input: &ModelInput, prefixes: &[&[PlanStep]]) -> Result<Vec<Var>> {
        let reps = self.encode_units(tape, store, input)?;
        prefixes.iter().map(|p| self.logits_from_units(tape, store, input.task, reps, p)).collect()
    }

    fn fit_units(&self, _task: Task, units: &[Vec<usize>]) -> Result<usize> {
        Ok(units.len().min(self.config.max_doc_units))
    }

    fn prepare(&self, task: Task, mut units: Vec<Vec<usize>>) -> Result<ModelInput> {
        units.truncate(self.fit_units(task, &units)?);
        for u in &mut units {
            u.truncate(self.config.max_sent_len);
        }
        ModelInput::new(task, units)
    }
}

#[cfg(test)]
mod tests;
