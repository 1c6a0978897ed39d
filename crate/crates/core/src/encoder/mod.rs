//! Stepwise encoders: map an input and a plan prefix to one logit per
//! candidate.

use std::rc::Rc;

use rand::Rng;

use crate::attention::{AttentionConfig, AttentionParams, AttentionPattern, ScorePart};
use crate::error::{Error, Result};
use crate::layers::{FeedForward, LayerNorm};
use crate::plan::{Candidates, PlanStep, Task};
use crate::tensor::{ParamStore, Tape, Var};

pub mod etc;
pub mod hibert;

pub use etc::{assemble_input, EtcAssembly, EtcConfig, EtcEncoder};
pub use hibert::{HibertConfig, HibertEncoder, SentenceBatch};

/// Token ids of the content units of one input, in input order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelInput {
    pub task: Task,
    pub units: Vec<Vec<usize>>,
}

impl ModelInput {
    pub fn new(task: Task, units: Vec<Vec<usize>>) -> Result<Self> {
        if let Some(i) = units.iter().position(Vec::is_empty) {
            return Err(Error::Input(format!("unit {i} is empty")));
        }
        Ok(ModelInput { task, units })
    }

    pub fn candidates(&self) -> Candidates {
        Candidates::new(self.units.len(), self.task)
    }
}

/// Post-norm transformer layer: attention then feed-forward, each wrapped in
/// a residual connection and layer normalization.
#[derive(Clone, Copy, Debug)]
pub struct EncoderLayer {
    pub attn: AttentionParams,
    pub attn_norm: LayerNorm,
    pub ffn: FeedForward,
    pub ffn_norm: LayerNorm,
}

impl EncoderLayer {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, cfg: &AttentionConfig, ffn_dim: usize, rng: &mut R) -> Result<Self> {
        Ok(EncoderLayer {
            attn: AttentionParams::new(store, &format!("{name}.attn"), cfg, false, rng)?,
            attn_norm: LayerNorm::new(store, &format!("{name}.attn_norm"), cfg.model_dim)?,
            ffn: FeedForward::new(store, &format!("{name}.ffn"), cfg.model_dim, ffn_dim, rng)?,
            ffn_norm: LayerNorm::new(store, &format!("{name}.ffn_norm"), cfg.model_dim)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, pattern: &Rc<AttentionPattern>) -> Result<Var> {
        let a = self.attn.forward(tape, store, x, x, pattern)?;
        let h = self.attn_norm.residual(tape, store, x, a)?;
        let f = self.ffn.forward(tape, store, h)?;
        self.ffn_norm.residual(tape, store, h, f)
    }
}

/// Every query attends to every key.
pub fn dense_pattern(q_len: usize, k_len: usize) -> Result<AttentionPattern> {
    let mut b = AttentionPattern::builder(k_len);
    for _ in 0..q_len {
        for j in 0..k_len {
            b.push(j, 0, ScorePart::Dense);
        }
        b.end_row()?;
    }
    Ok(b.finish())
}

/// Independent dense attention inside each contiguous block of rows.
pub fn block_diagonal_pattern(lengths: &[usize]) -> Result<AttentionPattern> {
    let total = lengths.iter().sum();
    let mut b = AttentionPattern::builder(total);
    let mut start = 0;
    for &len in lengths {
        for _ in 0..len {
            for j in start..start + len {
                b.push(j, 0, ScorePart::Dense);
            }
            b.end_row()?;
        }
        start += len;
    }
    Ok(b.finish())
}

/// A stepwise encoder with its parameters registered in a [`ParamStore`].
pub trait StepwiseEncoder {
    fn name(&self) -> &'static str;

    /// Candidate logits for each prefix, in [`Candidates`] order.
    fn step_logits(&self, tape: &mut Tape, store: &ParamStore, input: &ModelInput, prefixes: &[&[PlanStep]]) -> Result<Vec<Var>>;

    /// Largest number of leading units of `units` the encoder can take.
    fn fit_units(&self, task: Task, units: &[Vec<usize>]) -> Result<usize>;

    /// Truncates tokens and units to what the encoder accepts.
    fn prepare(&self, task: Task, units: Vec<Vec<usize>>) -> Result<ModelInput>;
}
