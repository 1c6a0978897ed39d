//! Global-local encoder over the flat input `[CLS] units [SEP] plan [SEP]`
//! with one global token per unit and per delimiter.

use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ModelInput, StepwiseEncoder};
use crate::attention::{etc_global_local_attention, AttentionConfig, GlobalLocalLayer, GlobalLocalLayout, RelPosLayout};
use crate::error::{Error, Result};
use crate::layers::{Scorer, INIT_STD};
use crate::plan::{Candidates, PlanStep, Task};
use crate::tensor::{ParamId, ParamStore, Tape, Var};
use crate::text::{BEG, CLS, EOS, EOT, PAD, SEP};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EtcConfig {
    pub vocab_size: usize,
    pub dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub layers: usize,
    pub long_budget: usize,
    pub summary_budget: usize,
    pub global_cap: usize,
    pub local_radius: usize,
    pub relpos_vocab_size: usize,
    pub separate_global_projections: bool,
}

impl EtcConfig {
    pub fn attention(&self) -> AttentionConfig {
        AttentionConfig {
            num_heads: self.heads,
            model_dim: self.dim,
            local_radius: self.local_radius,
            relpos_vocab_size: self.relpos_vocab_size,
        }
    }

    pub fn budgets(&self) -> Budgets {
        Budgets { long: self.long_budget, summary: self.summary_budget, global_cap: self.global_cap }
    }

    pub fn validate(&self) -> Result<()> {
        self.attention().validate()?;
        if self.vocab_size == 0 || self.ffn_dim == 0 || self.global_cap == 0 || self.summary_budget == 0 {
            return Err(Error::Config("etc vocab_size, ffn_dim, global_cap and summary_budget must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Budgets {
    pub long: usize,
    pub summary: usize,
    pub global_cap: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Segment {
    Special = 0,
    Document = 1,
    Summary = 2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GlobalKind {
    Delimiter = 0,
    Special = 1,
    Document = 2,
    Summary = 3,
}

/// The padded long input with its global-token bookkeeping.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EtcAssembly {
    pub long_ids: Vec<usize>,
    pub segment: Vec<Segment>,
    pub sentence_id: Vec<Option<usize>>,
    /// Positions holding real tokens; everything else is padding.
    pub active: Vec<usize>,
    pub global_kinds: Vec<GlobalKind>,
    /// Long position of each candidate's first token, in candidate order.
    pub candidate_anchor: Vec<usize>,
    /// Positions of `[CLS]` and the two `[SEP]`s.
    pub delimiters: [usize; 3],
}

impl EtcAssembly {
    pub fn total_len(&self) -> usize {
        self.long_ids.len()
    }

    pub fn global_count(&self) -> usize {
        self.global_kinds.len()
    }
}

/// Candidate pseudo-units at the head of the flat input.
fn head_specials(task: Task) -> &'static [usize] {
    match task {
        Task::Cnndm => &[EOT],
        Task::Rotowire => &[EOS, EOT, BEG],
    }
}

/// Number of leading units that fit in the long budget after the head
/// specials. A unit that could never fit is an error.
pub fn fit_units(task: Task, units: &[Vec<usize>], long_budget: usize) -> Result<usize> {
    let room = long_budget.saturating_sub(head_specials(task).len());
    let mut used = 0;
    for (i, u) in units.iter().enumerate() {
        if u.len() > room {
            return Err(Error::UnitTooLong { unit: i, len: u.len(), budget: room });
        }
        if used + u.len() > room {
            return Ok(i);
        }
        used += u.len();
    }
    Ok(units.len())
}

struct Builder {
    ids: Vec<usize>,
    segment: Vec<Segment>,
    sentence_id: Vec<Option<usize>>,
    active: Vec<usize>,
    kinds: Vec<GlobalKind>,
    cap: usize,
}

impl Builder {
    /// Appends one unit and gives it the next global token if any remain.
    fn unit(&mut self, tokens: &[usize], segment: Segment, kind: GlobalKind) -> usize {
        let gid = (self.kinds.len() < self.cap).then(|| {
            self.kinds.push(kind);
            self.kinds.len() - 1
        });
        let start = self.ids.len();
        for &t in tokens {
            self.active.push(self.ids.len());
            self.ids.push(t);
            self.segment.push(segment);
            self.sentence_id.push(gid);
        }
        start
    }

    fn pad_to(&mut self, len: usize, segment: Segment) {
        while self.ids.len() < len {
            self.ids.push(PAD);
            self.segment.push(segment);
            self.sentence_id.push(None);
        }
    }
}

/// Lays out `[CLS] specials units pad [SEP] <beg> plan pad [SEP]`.
/// When the plan overflows its budget the oldest plan units are left out.
pub fn assemble_input(units: &[Vec<usize>], task: Task, prefix: &[PlanStep], budgets: Budgets) -> Result<EtcAssembly> {
    let candidates = Candidates::new(units.len(), task);
    candidates.validate_prefix(prefix)?;
    if fit_units(task, units, budgets.long)? < units.len() {
        return Err(Error::Input(format!("{} units do not fit the long budget {}", units.len(), budgets.long)));
    }
    if budgets.summary == 0 || budgets.global_cap == 0 {
        return Err(Error::Config("summary budget and global cap must be positive".into()));
    }
    let mut b = Builder { ids: vec![], segment: vec![], sentence_id: vec![], active: vec![], kinds: vec![], cap: budgets.global_cap };
    let cls = b.unit(&[CLS], Segment::Special, GlobalKind::Delimiter);
    let mut special_pos = Vec::new();
    for &s in head_specials(task) {
        special_pos.push((s, b.unit(&[s], Segment::Special, GlobalKind::Special)));
    }
    let unit_pos: Vec<usize> = units.iter().map(|u| b.unit(u, Segment::Document, GlobalKind::Document)).collect();
    b.pad_to(1 + budgets.long, Segment::Document);
    let sep1 = b.unit(&[SEP], Segment::Special, GlobalKind::Delimiter);

    let plan_units: Vec<&[usize]> = prefix
        .iter()
        .map(|s| match s {
            PlanStep::Unit(i) => units[*i].as_slice(),
            _ => &[EOS][..],
        })
        .collect();
    let room = budgets.summary - 1;
    let mut keep_from = plan_units.len();
    let mut used = 0;
    while keep_from > 0 {
        let len = plan_units[keep_from - 1].len();
        if len > room {
            return Err(Error::UnitTooLong { unit: keep_from - 1, len, budget: room });
        }
        if used + len > room {
            break;
        }
        used += len;
        keep_from -= 1;
    }
    b.unit(&[BEG], Segment::Summary, GlobalKind::Special);
    for u in &plan_units[keep_from..] {
        b.unit(u, Segment::Summary, GlobalKind::Summary);
    }
    b.pad_to(budgets.long + budgets.summary + 2, Segment::Summary);
    let sep2 = b.unit(&[SEP], Segment::Special, GlobalKind::Delimiter);

    let anchor_of = |tok: usize| special_pos.iter().find(|(s, _)| *s == tok).map(|(_, p)| *p).expect("task special");
    let candidate_anchor = (0..candidates.len())
        .map(|i| match candidates.step(i) {
            PlanStep::Unit(u) => unit_pos[u],
            PlanStep::EndOfPlan => anchor_of(EOT),
            PlanStep::SentenceBreak => anchor_of(EOS),
        })
        .collect();
    Ok(EtcAssembly {
        long_ids: b.ids,
        segment: b.segment,
        sentence_id: b.sentence_id,
        active: b.active,
        global_kinds: b.kinds,
        candidate_anchor,
        delimiters: [cls, sep1, sep2],
    })
}

#[derive(Clone, Debug)]
pub struct EtcEncoder {
    pub config: EtcConfig,
    pub token: ParamId,
    pub segment: ParamId,
    pub global_kind: ParamId,
    pub layers: Vec<GlobalLocalLayer>,
    pub scorer: Scorer,
}

impl EtcEncoder {
    pub fn new<R: Rng>(store: &mut ParamStore, config: EtcConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.dim;
        let token = store.add_normal("etc.token_embedding", &[config.vocab_size, d], INIT_STD, rng)?;
        let segment = store.add_normal("etc.segment_embedding", &[3, d], INIT_STD, rng)?;
        let global_kind = store.add_normal("etc.global_embedding", &[4, d], INIT_STD, rng)?;
        let att = config.attention();
        let layers = (0..config.layers)
            .map(|i| GlobalLocalLayer::new(store, &format!("etc.layer.{i}"), &att, config.ffn_dim, config.separate_global_projections, rng))
            .collect::<Result<_>>()?;
        let scorer = Scorer::new(store, "etc.scorer", d, rng)?;
        Ok(EtcEncoder { config, token, segment, global_kind, layers, scorer })
    }

    pub fn relpos_layout(&self) -> RelPosLayout {
        RelPosLayout::for_vocab(self.config.relpos_vocab_size)
    }

    /// Final long-stream vectors at each candidate anchor.
    pub fn etc_encode(&self, tape: &mut Tape, store: &ParamStore, asm: &EtcAssembly) -> Result<Var> {
        self.etc_encode_with(tape, store, asm, true)
    }

    /// As [`Self::etc_encode`]; `link_globals = false` masks every
    /// long/global pair.
    pub fn etc_encode_with(&self, tape: &mut Tape, store: &ParamStore, asm: &EtcAssembly, link_globals: bool) -> Result<Var> {
        let long = self.embed_long(tape, store, asm)?;
        self.encode_embedded(tape, store, asm, long, link_globals)
    }

    /// Token plus segment embeddings of the active long positions.
    pub fn embed_long(&self, tape: &mut Tape, store: &ParamStore, asm: &EtcAssembly) -> Result<Var> {
        let ids: Vec<usize> = asm.active.iter().map(|&p| asm.long_ids[p]).collect();
        let segs: Vec<usize> = asm.active.iter().map(|&p| asm.segment[p] as usize).collect();
        let tok = tape.param(store, self.token);
        let seg = tape.param(store, self.segment);
        let e = tape.gather_rows(tok, &ids)?;
        let s = tape.gather_rows(seg, &segs)?;
        tape.add(e, s)
    }

    /// Runs the layers from already embedded active long rows.
    pub fn encode_embedded(&self, tape: &mut Tape, store: &ParamStore, asm: &EtcAssembly, mut long: Var, link_globals: bool) -> Result<Var> {
        let kinds: Vec<usize> = asm.global_kinds.iter().map(|&k| k as usize).collect();
        let gk = tape.param(store, self.global_kind);
        let mut global = tape.gather_rows(gk, &kinds)?;
        let layout = GlobalLocalLayout {
            long_positions: asm.active.clone(),
            sentence_id: asm.active.iter().map(|&p| asm.sentence_id[p]).collect(),
            global_count: asm.global_count(),
            radius: self.config.local_radius,
            link_globals,
        };
        let pattern = Rc::new(layout.pattern(&self.relpos_layout())?);
        for layer in &self.layers {
            (long, global) = etc_global_local_attention(tape, store, layer, long, global, &pattern)?;
        }
        let rows: Vec<usize> = asm
            .candidate_anchor
            .iter()
            .map(|a| asm.active.binary_search(a).expect("anchors are active positions"))
            .collect();
        tape.select_rows(long, &rows)
    }

    pub fn logits(&self, tape: &mut Tape, store: &ParamStore, input: &ModelInput, prefix: &[PlanStep]) -> Result<Var> {
        let asm = assemble_input(&input.units, input.task, prefix, self.config.budgets())?;
        let reps = self.etc_encode(tape, store, &asm)?;
        self.scorer.forward(tape, store, reps)
    }
}

impl StepwiseEncoder for EtcEncoder {
    fn name(&self) -> &'static str {
        "etc"
    }

    fn step_logits(&self, tape: &mut Tape, store: &ParamStore, input: &ModelInput, prefixes: &[&[PlanStep]]) -> Result<Vec<Var>> {
        prefixes.iter().map(|p| self.logits(tape, store, input, p)).collect()
    }

    fn fit_units(&self, task: Task, units: &[Vec<usize>]) -> Result<usize> {
        fit_units(task, units, self.config.long_budget)
    }

    fn prepare(&self, task: Task, mut units: Vec<Vec<usize>>) -> Result<ModelInput> {
        units.truncate(self.fit_units(task, &units)?);
        ModelInput::new(task, units)
    }
}
