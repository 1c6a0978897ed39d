//! Extractive oracles and the stepwise examples derived from them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::mean_rouge_f1;
use crate::plan::PlanStep;

/// Largest document the exhaustive oracle accepts.
pub const BRUTE_FORCE_MAX_SENTENCES: usize = 15;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    /// Sentence indices in the order they were chosen.
    pub selected: Vec<usize>,
    pub score: f64,
    /// `(sentence, score after adding it)` per greedy round.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<(usize, f64)>,
}

impl OracleResult {
    /// Selected indices in document order.
    pub fn positions(&self) -> Vec<usize> {
        let mut p = self.selected.clone();
        p.sort_unstable();
        p
    }
}

/// Mean Rouge F1 of the given sentences, concatenated in document order.
pub fn subset_score<S: AsRef<str>>(doc: &[Vec<S>], reference: &[S], subset: &[usize]) -> f64 {
    if subset.is_empty() {
        return 0.0;
    }
    let mut idx = subset.to_vec();
    idx.sort_unstable();
    let summary: Vec<&str> = idx.iter().flat_map(|&i| doc[i].iter().map(AsRef::as_ref)).collect();
    let reference: Vec<&str> = reference.iter().map(AsRef::as_ref).collect();
    mean_rouge_f1(&summary, &reference)
}

/// Greedy oracle: keep adding the sentence that raises the score most until
/// nothing strictly improves it or `max_size` is reached.
pub fn oracle_full<S: AsRef<str>>(doc: &[Vec<S>], reference: &[S], max_size: usize) -> OracleResult {
    let mut result = OracleResult::default();
    while result.selected.len() < max_size {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..doc.len() {
            if result.selected.contains(&i) {
                continue;
            }
            let mut trial = result.selected.clone();
            trial.push(i);
            let s = subset_score(doc, reference, &trial);
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        match best {
            Some((i, s)) if s > result.score => {
                result.selected.push(i);
                result.score = s;
                result.trace.push((i, s));
            }
            _ => break,
        }
    }
    result
}

/// Sentences of `doc` that fit within `token_budget` tokens, counted from the start.
pub fn fitting_prefix<S>(doc: &[Vec<S>], token_budget: usize) -> usize {
    let mut used = 0;
    for (i, s) in doc.iter().enumerate() {
        used += s.len();
        if used > token_budget {
            return i;
        }
    }
    doc.len()
}

/// [`oracle_full`] over the leading sentences that fit `token_budget`.
pub fn oracle_truncated<S: AsRef<str>>(doc: &[Vec<S>], reference: &[S], token_budget: usize, max_size: usize) -> OracleResult {
    oracle_full(&doc[..fitting_prefix(doc, token_budget)], reference, max_size)
}

/// Exact best subset of at most `max_size` sentences. Ties go to the
/// lexicographically smallest index set; `trace` is left empty.
pub fn brute_force_oracle<S: AsRef<str>>(doc: &[Vec<S>], reference: &[S], max_size: usize) -> Result<OracleResult> {
    if doc.len() > BRUTE_FORCE_MAX_SENTENCES {
        return Err(Error::Input(format!("brute-force oracle takes at most {BRUTE_FORCE_MAX_SENTENCES} sentences, got {}", doc.len())));
    }
    let mut best = OracleResult::default();
    let mut current = Vec::new();
    search(doc, reference, max_size, 0, &mut current, &mut best);
    Ok(best)
}

/// Depth-first in lexicographic order, replacing only on strict improvement.
fn search<S: AsRef<str>>(doc: &[Vec<S>], reference: &[S], max_size: usize, from: usize, current: &mut Vec<usize>, best: &mut OracleResult) {
    if current.len() == max_size {
        return;
    }
    for i in from..doc.len() {
        current.push(i);
        let s = subset_score(doc, reference, current);
        if s > best.score {
            best.selected = current.clone();
            best.score = s;
        }
        search(doc, reference, max_size, i + 1, current, best);
        current.pop();
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetOrder {
    /// Targets follow sentence position in the document.
    #[default]
    Document,
    /// Targets follow the order the greedy oracle picked them.
    Selection,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepwiseExample {
    pub prefix: Vec<PlanStep>,
    pub target: PlanStep,
}

/// One example per oracle sentence plus the closing `EndOfPlan`.
pub fn make_stepwise_examples(oracle: &OracleResult, order: TargetOrder) -> Vec<StepwiseExample> {
    let steps: Vec<PlanStep> = match order {
        TargetOrder::Document => oracle.positions(),
        TargetOrder::Selection => oracle.selected.clone(),
    }
    .into_iter()
    .map(PlanStep::Unit)
    .collect();
    plan_examples(&steps)
}

/// One example per element of `plan`, closing with `EndOfPlan` if the plan
/// does not already end with it.
pub fn plan_examples(plan: &[PlanStep]) -> Vec<StepwiseExample> {
    let mut steps = plan.to_vec();
    if steps.last() != Some(&PlanStep::EndOfPlan) {
        steps.push(PlanStep::EndOfPlan);
    }
    (0..steps.len()).map(|k| StepwiseExample { prefix: steps[..k].to_vec(), target: steps[k] }).collect()
}
