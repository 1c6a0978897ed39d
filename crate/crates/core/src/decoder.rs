//! Turning a step scorer into plans: step distributions, beam search with
//! constraints, the repeat-exception greedy decoder and trigram blocking.

use std::cmp::Ordering;
use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::plan::{Candidates, PlanStep};

/// Anything that scores the next plan step given a prefix.
pub trait StepScorer {
    fn candidates(&self) -> Candidates;

    /// Unnormalized scores in [`Candidates`] order.
    fn logits(&self, prefix: &[PlanStep]) -> Result<Vec<f64>>;
}

/// Numerically stable `log softmax`.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

fn step_log_probs(model: &dyn StepScorer, prefix: &[PlanStep]) -> Result<Vec<f64>> {
    let candidates = model.candidates();
    candidates.validate_prefix(prefix)?;
    let logits = model.logits(prefix)?;
    if logits.len() != candidates.len() {
        return Err(Error::Input(format!("scorer returned {} logits for {} candidates", logits.len(), candidates.len())));
    }
    Ok(log_softmax(&logits))
}

/// `p(next | prefix)` over the candidates.
pub fn next_step_distribution(model: &dyn StepScorer, prefix: &[PlanStep]) -> Result<Vec<f64>> {
    Ok(step_log_probs(model, prefix)?.into_iter().map(f64::exp).collect())
}

/// Sum of step log-probabilities of `steps` under `model`.
pub fn plan_log_prob(model: &dyn StepScorer, steps: &[PlanStep]) -> Result<f64> {
    let candidates = model.candidates();
    let mut total = 0.0;
    for k in 0..steps.len() {
        let lp = step_log_probs(model, &steps[..k])?;
        let idx = candidates.index(steps[k]).ok_or_else(|| Error::Input(format!("{:?} is not a candidate", steps[k])))?;
        total += lp[idx];
    }
    Ok(total)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub steps: Vec<PlanStep>,
    pub log_prob: f64,
    pub finished: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeResult {
    pub hypothesis: Hypothesis,
    /// Set when no hypothesis finished and the best unfinished one is returned.
    pub warning: Option<String>,
}

/// Pruning rules applied to expansions before ranking.
#[derive(Clone, Debug, Default)]
pub struct Constraints {
    /// Forbid a unit that is already in the prefix.
    pub no_repeat: bool,
    /// Units exempt from `no_repeat`.
    pub repeatable: HashSet<usize>,
    /// Lowercased tokens of each unit; enables trigram blocking.
    pub trigram_units: Option<Vec<Vec<String>>>,
}

impl Constraints {
    pub fn no_repeat() -> Self {
        Constraints { no_repeat: true, ..Self::default() }
    }

    fn allows(&self, prefix: &[PlanStep], step: PlanStep) -> bool {
        let PlanStep::Unit(u) = step else { return true };
        if self.no_repeat && !self.repeatable.contains(&u) && prefix.contains(&step) {
            return false;
        }
        if let Some(units) = &self.trigram_units {
            let summary: Vec<String> = prefix
                .iter()
                .filter_map(|s| match s {
                    PlanStep::Unit(i) => Some(units[*i].iter().cloned()),
                    _ => None,
                })
                .flatten()
                .collect();
            if trigram_block(&units[u], &summary) {
                return false;
            }
        }
        true
    }
}

/// True iff the two token lists share a trigram.
pub fn trigram_block<S: AsRef<str>>(candidate: &[S], summary: &[S]) -> bool {
    if candidate.len() < 3 || summary.len() < 3 {
        return false;
    }
    let grams: HashSet<[&str; 3]> = summary.windows(3).map(|w| [w[0].as_ref(), w[1].as_ref(), w[2].as_ref()]).collect();
    candidate.windows(3).any(|w| grams.contains(&[w[0].as_ref(), w[1].as_ref(), w[2].as_ref()]))
}

/// Higher log-prob first; ties go to the lower candidate-index sequence, then
/// to the shorter plan.
fn rank(candidates: &Candidates, a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.log_prob
        .total_cmp(&a.log_prob)
        .then_with(|| {
            let ia = a.steps.iter().map(|s| candidates.index(*s));
            let ib = b.steps.iter().map(|s| candidates.index(*s));
            ia.cmp(ib)
        })
        .then(a.steps.len().cmp(&b.steps.len()))
}

fn beam_search(model: &dyn StepScorer, beam_size: usize, max_steps: usize, constraints: &Constraints) -> Result<DecodeResult> {
    let candidates = model.candidates();
    let mut beam = vec![Hypothesis { steps: vec![], log_prob: 0.0, finished: max_steps == 0 }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    let mut last_unfinished = beam.clone();
    if max_steps == 0 {
        finished = beam.clone();
        beam.clear();
    }
    while !beam.is_empty() {
        let mut expansions = Vec::new();
        for hyp in &beam {
            let lp = step_log_probs(model, &hyp.steps)?;
            for (c, &l) in lp.iter().enumerate() {
                let step = candidates.step(c);
                if !constraints.allows(&hyp.steps, step) {
                    continue;
                }
                let mut steps = hyp.steps.clone();
                steps.push(step);
                let done = step == PlanStep::EndOfPlan || steps.len() >= max_steps;
                expansions.push(Hypothesis { steps, log_prob: hyp.log_prob + l, finished: done });
            }
        }
        expansions.sort_by(|a, b| rank(&candidates, a, b));
        expansions.truncate(beam_size);
        last_unfinished = beam;
        beam = Vec::new();
        for h in expansions {
            if h.finished {
                finished.push(h);
            } else {
                beam.push(h);
            }
        }
        if !beam.is_empty() {
            last_unfinished = beam.clone();
        }
    }
    finished.sort_by(|a, b| rank(&candidates, a, b));
    match finished.into_iter().next() {
        Some(h) => Ok(DecodeResult { hypothesis: h, warning: None }),
        None => {
            last_unfinished.sort_by(|a, b| rank(&candidates, a, b));
            let h = last_unfinished.into_iter().next().expect("beam starts non-empty");
            Ok(DecodeResult { warning: Some(format!("no hypothesis finished; returning a {}-step prefix", h.steps.len())), hypothesis: h })
        }
    }
}

/// Beam search over plans. The greedy plan under the same constraints also
/// competes, so the result never scores below it.
pub fn beam_decode(model: &dyn StepScorer, beam_size: usize, max_steps: usize, constraints: &Constraints) -> Result<DecodeResult> {
    if beam_size == 0 {
        return Err(Error::Config("beam_size must be at least 1".into()));
    }
    let beam = beam_search(model, beam_size, max_steps, constraints)?;
    if beam_size == 1 {
        return Ok(beam);
    }
    let greedy = beam_search(model, 1, max_steps, constraints)?;
    let candidates = model.candidates();
    let better = match (beam.warning.is_some(), greedy.warning.is_some()) {
        (true, false) => greedy,
        (false, true) => beam,
        _ => {
            if rank(&candidates, &greedy.hypothesis, &beam.hypothesis) == Ordering::Less {
                greedy
            } else {
                beam
            }
        }
    };
    Ok(better)
}

/// Greedy decoding where each unit may appear once unless `repeatable`
/// allows it; a forbidden top choice falls through to the next best.
pub fn greedy_decode_with_repeat_exceptions(model: &dyn StepScorer, max_steps: usize, repeatable: &dyn Fn(usize) -> bool) -> Result<DecodeResult> {
    let candidates = model.candidates();
    let mut steps = Vec::new();
    let mut log_prob = 0.0;
    while steps.len() < max_steps {
        let lp = step_log_probs(model, &steps)?;
        let mut order: Vec<usize> = (0..lp.len()).collect();
        order.sort_by(|&a, &b| lp[b].total_cmp(&lp[a]).then(a.cmp(&b)));
        let pick = order.into_iter().find(|&c| match candidates.step(c) {
            PlanStep::Unit(u) => repeatable(u) || !steps.contains(&PlanStep::Unit(u)),
            _ => true,
        });
        let Some(c) = pick else {
            steps.push(PlanStep::EndOfPlan);
            break;
        };
        log_prob += lp[c];
        steps.push(candidates.step(c));
        if candidates.step(c) == PlanStep::EndOfPlan {
            break;
        }
    }
    Ok(DecodeResult { hypothesis: Hypothesis { steps, log_prob, finished: true }, warning: None })
}
