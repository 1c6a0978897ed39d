//! Multi-head attention over sparse score patterns.
//!
//! Every attention in this crate runs through one fused kernel that only
//! computes scores for the `(query, key)` pairs listed in an
//! [`AttentionPattern`]. Pairs left out of a pattern behave exactly like an
//! additive `-1e30` mask: their softmax weight underflows to zero, and they
//! are never touched, so masked key/value rows cannot influence the output.
//!
//! Relative position label layout (shared by every pattern builder):
//! `0..=2k` encode the clipped offset `j - i` in `[-k, k]` (label `k` is
//! offset 0), `2k+1` marks a token belonging to a global token's sentence and
//! `2k+2` marks any other token/global pair.

use std::cell::RefCell;
use std::rc::Rc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::{FeedForward, LayerNorm, Linear, INIT_STD};
use crate::tensor::{CustomOp, ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionConfig {
    pub num_heads: usize,
    pub model_dim: usize,
    pub local_radius: usize,
    pub relpos_vocab_size: usize,
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_heads == 0 || self.model_dim == 0 || !self.model_dim.is_multiple_of(self.num_heads) {
            return Err(Error::Config(format!(
                "model_dim {} must be a positive multiple of num_heads {}",
                self.model_dim, self.num_heads
            )));
        }
        if self.relpos_vocab_size < 3 {
            return Err(Error::Config(format!("relpos_vocab_size {} < 3", self.relpos_vocab_size)));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.num_heads
    }

    pub fn layout(&self) -> RelPosLayout {
        RelPosLayout::for_vocab(self.relpos_vocab_size)
    }
}

/// Label assignment for a relative-position vocabulary.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RelPosLayout {
    pub max_distance: usize,
    pub vocab_size: usize,
}

impl RelPosLayout {
    /// Largest clipping distance that leaves room for the two relational
    /// labels.
    pub fn for_vocab(vocab_size: usize) -> Self {
        RelPosLayout { max_distance: vocab_size.saturating_sub(3) / 2, vocab_size }
    }

    pub fn position(&self, i: usize, j: usize) -> usize {
        relative_position_bucket(i, j, self.max_distance)
    }

    pub fn member(&self) -> usize {
        2 * self.max_distance + 1
    }

    pub fn other(&self) -> usize {
        2 * self.max_distance + 2
    }
}

/// `clip(j - i, -max_distance, max_distance) + max_distance`.
pub fn relative_position_bucket(i: usize, j: usize, max_distance: usize) -> usize {
    let offset = j as i64 - i as i64;
    let k = max_distance as i64;
    (offset.clamp(-k, k) + k) as usize
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionMask {
    q_len: usize,
    k_len: usize,
    allowed: Vec<bool>,
}

impl AttentionMask {
    pub fn new(q_len: usize, k_len: usize, allowed: Vec<bool>) -> Result<Self> {
        if allowed.len() != q_len * k_len || q_len == 0 || k_len == 0 {
            return Err(Error::InvalidMask(format!("{} entries for a {q_len}x{k_len} mask", allowed.len())));
        }
        if let Some(row) = (0..q_len).find(|&i| !allowed[i * k_len..(i + 1) * k_len].iter().any(|&a| a)) {
            return Err(Error::InvalidMask(format!("query row {row} has no allowed key")));
        }
        Ok(AttentionMask { q_len, k_len, allowed })
    }

    pub fn from_fn(q_len: usize, k_len: usize, f: impl Fn(usize, usize) -> bool) -> Result<Self> {
        let allowed = (0..q_len * k_len).map(|e| f(e / k_len, e % k_len)).collect();
        Self::new(q_len, k_len, allowed)
    }

    pub fn dense(q_len: usize, k_len: usize) -> Result<Self> {
        Self::new(q_len, k_len, vec![true; q_len * k_len])
    }

    pub fn q_len(&self) -> usize {
        self.q_len
    }

    pub fn k_len(&self) -> usize {
        self.k_len
    }

    pub fn allowed(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.k_len + j]
    }

    pub fn count(&self) -> usize {
        self.allowed.iter().filter(|&&a| a).count()
    }
}

/// `allowed[i][j] <=> |i - j| <= radius`.
pub fn local_attention_mask(n: usize, radius: usize) -> Result<AttentionMask> {
    AttentionMask::from_fn(n, n, |i, j| i.abs_diff(j) <= radius)
}

/// Closed-form number of `(i, j)` pairs with `|i - j| <= radius` in a
/// length-`n` sequence.
pub fn local_window_count(n: usize, radius: usize) -> usize {
    (0..n).map(|i| (i + radius).min(n - 1) - i.saturating_sub(radius) + 1).sum()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelPosLabels {
    q_len: usize,
    k_len: usize,
    labels: Vec<usize>,
}

impl RelPosLabels {
    pub fn new(q_len: usize, k_len: usize, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != q_len * k_len {
            return Err(Error::InvalidMask(format!("{} labels for a {q_len}x{k_len} matrix", labels.len())));
        }
        Ok(RelPosLabels { q_len, k_len, labels })
    }

    pub fn from_fn(q_len: usize, k_len: usize, f: impl Fn(usize, usize) -> usize) -> Self {
        let labels = (0..q_len * k_len).map(|e| f(e / k_len, e % k_len)).collect();
        RelPosLabels { q_len, k_len, labels }
    }

    /// Clipped-offset labels for a self-attention over `n` positions.
    pub fn relative(n: usize, max_distance: usize) -> Self {
        Self::from_fn(n, n, |i, j| relative_position_bucket(i, j, max_distance))
    }

    pub fn get(&self, i: usize, j: usize) -> usize {
        self.labels[i * self.k_len + j]
    }
}

/// Which of the attention parts a computed score belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScorePart {
    Dense = 0,
    LongToLong = 1,
    LongToGlobal = 2,
    GlobalToLong = 3,
    GlobalToGlobal = 4,
}

/// Per-thread count of attention scores the kernel has computed, by part.
/// Each `(query, key)` pair counts once regardless of the number of heads.
pub mod score_counter {
    use super::{RefCell, ScorePart};

    thread_local! {
        static COUNTS: RefCell<[u64; 5]> = const { RefCell::new([0; 5]) };
    }

    pub fn reset() {
        COUNTS.with(|c| *c.borrow_mut() = [0; 5]);
    }

    pub fn get(part: ScorePart) -> u64 {
        COUNTS.with(|c| c.borrow()[part as usize])
    }

    pub fn total() -> u64 {
        COUNTS.with(|c| c.borrow().iter().sum())
    }

    pub(super) fn add(counts: &[u64; 5]) {
        COUNTS.with(|c| {
            let mut c = c.borrow_mut();
            for (a, b) in c.iter_mut().zip(counts) {
                *a += b;
            }
        });
    }
}

/// Compressed-row list of the `(key, label, part)` entries each query scores.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionPattern {
    q_len: usize,
    k_len: usize,
    offsets: Vec<usize>,
    keys: Vec<usize>,
    labels: Vec<usize>,
    parts: Vec<ScorePart>,
}

impl AttentionPattern {
    pub fn builder(k_len: usize) -> PatternBuilder {
        PatternBuilder { pattern: AttentionPattern { q_len: 0, k_len, offsets: vec![0], keys: vec![], labels: vec![], parts: vec![] } }
    }

    pub fn from_mask(mask: &AttentionMask, labels: Option<&RelPosLabels>, part: ScorePart) -> Result<Self> {
        if let Some(l) = labels {
            if (l.q_len, l.k_len) != (mask.q_len, mask.k_len) {
                return Err(Error::InvalidMask(format!(
                    "labels {}x{} vs mask {}x{}",
                    l.q_len, l.k_len, mask.q_len, mask.k_len
                )));
            }
        }
        let mut b = Self::builder(mask.k_len);
        for i in 0..mask.q_len {
            for j in 0..mask.k_len {
                if mask.allowed(i, j) {
                    b.push(j, labels.map_or(0, |l| l.get(i, j)), part);
                }
            }
            b.end_row()?;
        }
        Ok(b.finish())
    }

    pub fn q_len(&self) -> usize {
        self.q_len
    }

    pub fn k_len(&self) -> usize {
        self.k_len
    }

    pub fn nnz(&self) -> usize {
        self.keys.len()
    }

    pub fn count(&self, part: ScorePart) -> usize {
        self.parts.iter().filter(|&&p| p == part).count()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, usize, ScorePart)> + '_ {
        let (a, b) = (self.offsets[i], self.offsets[i + 1]);
        (a..b).map(move |e| (self.keys[e], self.labels[e], self.parts[e]))
    }

    pub fn max_label(&self) -> Option<usize> {
        self.labels.iter().copied().max()
    }
}

pub struct PatternBuilder {
    pattern: AttentionPattern,
}

impl PatternBuilder {
    pub fn push(&mut self, key: usize, label: usize, part: ScorePart) {
        debug_assert!(key < self.pattern.k_len);
        self.pattern.keys.push(key);
        self.pattern.labels.push(label);
        self.pattern.parts.push(part);
    }

    pub fn end_row(&mut self) -> Result<()> {
        let p = &mut self.pattern;
        if *p.offsets.last().expect("non-empty") == p.keys.len() {
            return Err(Error::InvalidMask(format!("query row {} has no allowed key", p.q_len)));
        }
        p.offsets.push(p.keys.len());
        p.q_len += 1;
        Ok(())
    }

    pub fn finish(self) -> AttentionPattern {
        self.pattern
    }
}

/// Fused scaled dot-product attention over a sparse pattern.
struct SparseAttention {
    pattern: Rc<AttentionPattern>,
    heads: usize,
    probs: Vec<f64>,
    has_bias: bool,
}

/// `q: [Lq×d]`, `k`/`v: [Lk×d]`, optional `bias: [heads×vocab]` indexed by
/// pattern labels. Returns heads concatenated, `[Lq×d]`.
pub fn sparse_attention(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    bias: Option<Var>,
    pattern: &Rc<AttentionPattern>,
    heads: usize,
) -> Result<Var> {
    let (qv, kv, vv) = (tape.value(q), tape.value(k), tape.value(v));
    let d = qv.cols();
    if qv.rank() != 2 || qv.shape()[0] != pattern.q_len {
        return Err(Error::ShapeMismatch { op: "attention(q)", lhs: qv.shape().to_vec(), rhs: vec![pattern.q_len, d] });
    }
    for t in [kv, vv] {
        if t.rank() != 2 || t.shape()[0] != pattern.k_len || t.cols() != d {
            return Err(Error::ShapeMismatch { op: "attention(k/v)", lhs: t.shape().to_vec(), rhs: vec![pattern.k_len, d] });
        }
    }
    if heads == 0 || d % heads != 0 {
        return Err(Error::Config(format!("dim {d} not divisible by {heads} heads")));
    }
    let bias_vals = match bias {
        Some(b) => {
            let bt = tape.value(b);
            if bt.rank() != 2 || bt.shape()[0] != heads || pattern.max_label().is_some_and(|m| m >= bt.cols()) {
                return Err(Error::ShapeMismatch { op: "attention(bias)", lhs: bt.shape().to_vec(), rhs: vec![heads] });
            }
            Some(bt)
        }
        None => None,
    };
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let nnz = pattern.nnz();
    let mut probs = vec![0.0; heads * nnz];
    let mut out = vec![0.0; pattern.q_len * d];
    let mut counts = [0u64; 5];
    let (qd, kd, vd) = (qv.data(), kv.data(), vv.data());
    for i in 0..pattern.q_len {
        let (lo, hi) = (pattern.offsets[i], pattern.offsets[i + 1]);
        for e in lo..hi {
            counts[pattern.parts[e] as usize] += 1;
        }
        for h in 0..heads {
            let qrow = &qd[i * d + h * dh..i * d + (h + 1) * dh];
            let p = &mut probs[h * nnz + lo..h * nnz + hi];
            let mut max = f64::NEG_INFINITY;
            for (slot, e) in p.iter_mut().zip(lo..hi) {
                let j = pattern.keys[e];
                let krow = &kd[j * d + h * dh..j * d + (h + 1) * dh];
                let mut s = qrow.iter().zip(krow).map(|(a, b)| a * b).sum::<f64>() * scale;
                if let Some(bt) = bias_vals {
                    s += bt.data()[h * bt.cols() + pattern.labels[e]];
                }
                *slot = s;
                max = max.max(s);
            }
            let mut z = 0.0;
            for s in p.iter_mut() {
                *s = (*s - max).exp();
                z += *s;
            }
            let orow = &mut out[i * d + h * dh..i * d + (h + 1) * dh];
            for (w, e) in p.iter_mut().zip(lo..hi) {
                *w /= z;
                let j = pattern.keys[e];
                let vrow = &vd[j * d + h * dh..j * d + (h + 1) * dh];
                for (o, x) in orow.iter_mut().zip(vrow) {
                    *o += *w * x;
                }
            }
        }
    }
    score_counter::add(&counts);
    let mut inputs = vec![q, k, v];
    inputs.extend(bias);
    let op = SparseAttention { pattern: Rc::clone(pattern), heads, probs, has_bias: bias.is_some() };
    let output = Tensor::new(vec![pattern.q_len, d], out)?;
    Ok(tape.custom(inputs, output, Rc::new(op)))
}

impl CustomOp for SparseAttention {
    fn name(&self) -> &'static str {
        "sparse_attention"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let (q, k, v) = (inputs[0], inputs[1], inputs[2]);
        let d = q.cols();
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let pat = &*self.pattern;
        let nnz = pat.nnz();
        let mut dq = vec![0.0; q.numel()];
        let mut dk = vec![0.0; k.numel()];
        let mut dv = vec![0.0; v.numel()];
        let mut dbias = self.has_bias.then(|| vec![0.0; inputs[3].numel()]);
        let bias_cols = if self.has_bias { inputs[3].cols() } else { 0 };
        let mut dscore = Vec::new();
        for i in 0..pat.q_len {
            let (lo, hi) = (pat.offsets[i], pat.offsets[i + 1]);
            for h in 0..self.heads {
                let grow = &g[i * d + h * dh..i * d + (h + 1) * dh];
                let p = &self.probs[h * nnz + lo..h * nnz + hi];
                dscore.clear();
                let mut dot = 0.0;
                for (w, e) in p.iter().zip(lo..hi) {
                    let j = pat.keys[e];
                    let vrow = &v.data()[j * d + h * dh..j * d + (h + 1) * dh];
                    let dp: f64 = grow.iter().zip(vrow).map(|(a, b)| a * b).sum();
                    dscore.push(dp);
                    dot += w * dp;
                    for (t, gv) in dv[j * d + h * dh..j * d + (h + 1) * dh].iter_mut().zip(grow) {
                        *t += w * gv;
                    }
                }
                let qrow = &q.data()[i * d + h * dh..i * d + (h + 1) * dh];
                for ((w, ds), e) in p.iter().zip(dscore.iter_mut()).zip(lo..hi) {
                    *ds = w * (*ds - dot);
                    let j = pat.keys[e];
                    if let Some(db) = &mut dbias {
                        db[h * bias_cols + pat.labels[e]] += *ds;
                    }
                    let krow = &k.data()[j * d + h * dh..j * d + (h + 1) * dh];
                    for (t, kv) in dq[i * d + h * dh..i * d + (h + 1) * dh].iter_mut().zip(krow) {
                        *t += *ds * scale * kv;
                    }
                    for (t, qv) in dk[j * d + h * dh..j * d + (h + 1) * dh].iter_mut().zip(qrow) {
                        *t += *ds * scale * qv;
                    }
                }
            }
        }
        let mut grads = vec![Some(dq), Some(dk), Some(dv)];
        if let Some(db) = dbias {
            grads.push(Some(db));
        }
        grads
    }
}

/// Query/key/value/output projections plus an optional per-head bias table
/// indexed by relative position label.
#[derive(Clone, Copy, Debug)]
pub struct AttentionParams {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub relpos_bias: Option<ParamId>,
    pub heads: usize,
}

impl AttentionParams {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, cfg: &AttentionConfig, relpos: bool, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.model_dim;
        Ok(AttentionParams {
            query: Linear::new(store, &format!("{name}.query"), d, d, rng)?,
            key: Linear::new(store, &format!("{name}.key"), d, d, rng)?,
            value: Linear::new(store, &format!("{name}.value"), d, d, rng)?,
            output: Linear::new(store, &format!("{name}.output"), d, d, rng)?,
            relpos_bias: if relpos {
                Some(store.add_normal(&format!("{name}.relpos_bias"), &[cfg.num_heads, cfg.relpos_vocab_size], INIT_STD, rng)?)
            } else {
                None
            },
            heads: cfg.num_heads,
        })
    }

    /// Attention of `queries` over `keys_values` restricted to `pattern`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, queries: Var, keys_values: Var, pattern: &Rc<AttentionPattern>) -> Result<Var> {
        self.forward_kv(tape, store, queries, keys_values, keys_values, pattern)
    }

    pub fn forward_kv(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        q_in: Var,
        k_in: Var,
        v_in: Var,
        pattern: &Rc<AttentionPattern>,
    ) -> Result<Var> {
        let q = self.query.forward(tape, store, q_in)?;
        let k = self.key.forward(tape, store, k_in)?;
        let v = self.value.forward(tape, store, v_in)?;
        let bias = self.relpos_bias.map(|b| tape.param(store, b));
        let a = sparse_attention(tape, q, k, v, bias, pattern, self.heads)?;
        self.output.forward(tape, store, a)
    }
}

/// Standard multi-head attention with a dense boolean mask and optional
/// relative position labels.
#[allow(clippy::too_many_arguments)]
pub fn multi_head_attention(
    tape: &mut Tape,
    store: &ParamStore,
    params: &AttentionParams,
    q_in: Var,
    k_in: Var,
    v_in: Var,
    mask: &AttentionMask,
    labels: Option<&RelPosLabels>,
) -> Result<Var> {
    if labels.is_some() && params.relpos_bias.is_none() {
        return Err(Error::Config("relative labels given to attention without a bias table".into()));
    }
    let pattern = Rc::new(AttentionPattern::from_mask(mask, labels, ScorePart::Dense)?);
    params.forward_kv(tape, store, q_in, k_in, v_in, &pattern)
}

/// Describes the long and global streams of one global-local attention input.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GlobalLocalLayout {
    /// Absolute position of each long row, strictly increasing.
    pub long_positions: Vec<usize>,
    /// Global token each long row belongs to, if any.
    pub sentence_id: Vec<Option<usize>>,
    pub global_count: usize,
    pub radius: usize,
    /// When false, every long-to-global and global-to-long pair is masked.
    pub link_globals: bool,
}

impl GlobalLocalLayout {
    pub fn contiguous(sentence_id: Vec<Option<usize>>, global_count: usize, radius: usize) -> Self {
        GlobalLocalLayout {
            long_positions: (0..sentence_id.len()).collect(),
            sentence_id,
            global_count,
            radius,
            link_globals: true,
        }
    }

    pub fn long_len(&self) -> usize {
        self.long_positions.len()
    }

    /// Pattern over the stacked rows `[long; global]`: long rows score the
    /// local window plus every global; global rows score everything.
    pub fn pattern(&self, layout: &RelPosLayout) -> Result<AttentionPattern> {
        let l = self.long_len();
        let g = self.global_count;
        if g == 0 {
            return Err(Error::Input("global-local attention needs at least one global token".into()));
        }
        if self.sentence_id.len() != l {
            return Err(Error::Input(format!("{} sentence ids for {l} long rows", self.sentence_id.len())));
        }
        if let Some(bad) = self.sentence_id.iter().flatten().find(|&&s| s >= g) {
            return Err(Error::Input(format!("sentence id {bad} >= global count {g}")));
        }
        if self.long_positions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Input("long positions must be strictly increasing".into()));
        }
        let pos = &self.long_positions;
        let mut b = AttentionPattern::builder(l + g);
        let mut lo = 0;
        for i in 0..l {
            while pos[i] - pos[lo] > self.radius {
                lo += 1;
            }
            let mut j = lo;
            while j < l && pos[j] <= pos[i] + self.radius {
                b.push(j, layout.position(pos[i], pos[j]), ScorePart::LongToLong);
                j += 1;
            }
            if self.link_globals {
                for s in 0..g {
                    let label = if self.sentence_id[i] == Some(s) { layout.member() } else { layout.other() };
                    b.push(l + s, label, ScorePart::LongToGlobal);
                }
            }
            b.end_row()?;
        }
        for s in 0..g {
            if self.link_globals {
                for j in 0..l {
                    let label = if self.sentence_id[j] == Some(s) { layout.member() } else { layout.other() };
                    b.push(j, label, ScorePart::GlobalToLong);
                }
            }
            for t in 0..g {
                b.push(l + t, layout.position(s, t), ScorePart::GlobalToGlobal);
            }
            b.end_row()?;
        }
        Ok(b.finish())
    }
}

/// Pattern for a long stream alone: clipped-offset labels within `radius`.
pub fn local_pattern(positions: &[usize], radius: usize, layout: &RelPosLayout) -> Result<AttentionPattern> {
    let mut b = AttentionPattern::builder(positions.len());
    for &pi in positions {
        for (j, &pj) in positions.iter().enumerate() {
            if pi.abs_diff(pj) <= radius {
                b.push(j, layout.position(pi, pj), ScorePart::LongToLong);
            }
        }
        b.end_row()?;
    }
    Ok(b.finish())
}

/// One global-local transformer layer. With `global_stream` set, global rows
/// use their own projections; otherwise both streams share them.
#[derive(Clone, Copy, Debug)]
pub struct GlobalLocalLayer {
    pub long_attn: AttentionParams,
    pub global_attn: Option<AttentionParams>,
    pub attn_norm: LayerNorm,
    pub ffn: FeedForward,
    pub ffn_norm: LayerNorm,
}

impl GlobalLocalLayer {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        cfg: &AttentionConfig,
        ffn_dim: usize,
        separate_global: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let long_attn = AttentionParams::new(store, &format!("{name}.attn"), cfg, true, rng)?;
        let global_attn = if separate_global {
            Some(AttentionParams::new(store, &format!("{name}.global_attn"), cfg, false, rng)?)
        } else {
            None
        };
        Ok(GlobalLocalLayer {
            long_attn,
            global_attn,
            attn_norm: LayerNorm::new(store, &format!("{name}.attn_norm"), cfg.model_dim)?,
            ffn: FeedForward::new(store, &format!("{name}.ffn"), cfg.model_dim, ffn_dim, rng)?,
            ffn_norm: LayerNorm::new(store, &format!("{name}.ffn_norm"), cfg.model_dim)?,
        })
    }
}

fn project_streams(tape: &mut Tape, store: &ParamStore, shared: &Linear, global: Option<&Linear>, long: Var, glob: Var, stacked: Var) -> Result<Var> {
    match global {
        None => shared.forward(tape, store, stacked),
        Some(gl) => {
            let a = shared.forward(tape, store, long)?;
            let b = gl.forward(tape, store, glob)?;
            tape.concat_rows(&[a, b])
        }
    }
}

/// Four-part global-local attention followed by the feed-forward sub-layer.
/// `pattern` must come from [`GlobalLocalLayout::pattern`] for these streams.
pub fn etc_global_local_attention(
    tape: &mut Tape,
    store: &ParamStore,
    layer: &GlobalLocalLayer,
    long: Var,
    global: Var,
    pattern: &Rc<AttentionPattern>,
) -> Result<(Var, Var)> {
    let l = tape.shape(long)[0];
    let g = tape.shape(global)[0];
    if pattern.q_len != l + g {
        return Err(Error::ShapeMismatch { op: "global_local", lhs: vec![l, g], rhs: vec![pattern.q_len] });
    }
    let x = tape.concat_rows(&[long, global])?;
    let la = &layer.long_attn;
    let ga = layer.global_attn.as_ref();
    let q = project_streams(tape, store, &la.query, ga.map(|p| &p.query), long, global, x)?;
    let k = project_streams(tape, store, &la.key, ga.map(|p| &p.key), long, global, x)?;
    let v = project_streams(tape, store, &la.value, ga.map(|p| &p.value), long, global, x)?;
    let bias = la.relpos_bias.map(|b| tape.param(store, b));
    let a = sparse_attention(tape, q, k, v, bias, pattern, la.heads)?;
    let attn_out = match ga {
        None => la.output.forward(tape, store, a)?,
        Some(gp) => {
            let al = tape.slice_rows(a, 0, l)?;
            let ag = tape.slice_rows(a, l, g)?;
            let ol = la.output.forward(tape, store, al)?;
            let og = gp.output.forward(tape, store, ag)?;
            tape.concat_rows(&[ol, og])?
        }
    };
    let h = layer.attn_norm.residual(tape, store, x, attn_out)?;
    let f = layer.ffn.forward(tape, store, h)?;
    let y = layer.ffn_norm.residual(tape, store, h, f)?;
    let long_out = tape.slice_rows(y, 0, l)?;
    let global_out = tape.slice_rows(y, l, g)?;
    Ok((long_out, global_out))
}
