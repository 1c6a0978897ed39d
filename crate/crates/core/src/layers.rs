//! Parameterised building blocks shared by both encoders.

use rand::Rng;

use crate::error::Result;
use crate::tensor::{ParamId, ParamStore, Tape, Var};

pub const INIT_STD: f64 = 0.02;
pub const LAYER_NORM_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, rng: &mut R) -> Result<Self> {
        Ok(Linear {
            weight: store.add_normal(&format!("{name}.weight"), &[d_in, d_out], INIT_STD, rng)?,
            bias: store.add_filled(&format!("{name}.bias"), &[d_out], 0.0)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let y = tape.matmul(x, w)?;
        tape.add_row(y, b)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(LayerNorm {
            gain: store.add_filled(&format!("{name}.gain"), &[dim], 1.0)?,
            bias: store.add_filled(&format!("{name}.bias"), &[dim], 0.0)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let g = tape.param(store, self.gain);
        let b = tape.param(store, self.bias);
        tape.layer_norm(x, g, b, LAYER_NORM_EPS)
    }

    /// `norm(x + sublayer_out)`.
    pub fn residual(&self, tape: &mut Tape, store: &ParamStore, x: Var, sublayer_out: Var) -> Result<Var> {
        let s = tape.add(x, sublayer_out)?;
        self.forward(tape, store, s)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

impl FeedForward {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, dim: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        Ok(FeedForward {
            inner: Linear::new(store, &format!("{name}.inner"), dim, hidden, rng)?,
            outer: Linear::new(store, &format!("{name}.outer"), hidden, dim, rng)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.inner.forward(tape, store, x)?;
        let h = tape.gelu(h);
        self.outer.forward(tape, store, h)
    }
}

/// Linear map from each row to a single salience logit.
#[derive(Clone, Copy, Debug)]
pub struct Scorer {
    pub proj: Linear,
}

impl Scorer {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, dim: usize, rng: &mut R) -> Result<Self> {
        Ok(Scorer { proj: Linear::new(store, name, dim, 1, rng)? })
    }

    /// `[n×dim] -> [n]` logits.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, rows: Var) -> Result<Var> {
        let n = tape.shape(rows)[0];
        let y = self.proj.forward(tape, store, rows)?;
        tape.reshape(y, &[n])
    }
}
