//! Plan steps and the candidate set a scorer ranks at each step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Extractive summarization over document sentences.
    Cnndm,
    /// Content planning over box-score records with sentence breaks.
    Rotowire,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Cnndm => "cnndm",
            Task::Rotowire => "rotowire",
        }
    }

    /// Non-unit candidates, in the order they follow the units.
    pub fn stop_candidates(self) -> &'static [PlanStep] {
        match self {
            Task::Cnndm => &[PlanStep::EndOfPlan],
            Task::Rotowire => &[PlanStep::EndOfPlan, PlanStep::SentenceBreak],
        }
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cnndm" => Ok(Task::Cnndm),
            "rotowire" => Ok(Task::Rotowire),
            _ => Err(Error::Config(format!("unknown task `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PlanStep {
    Unit(usize),
    SentenceBreak,
    EndOfPlan,
}

/// Candidate layout for one input: units `0..units`, then the task's stop
/// candidates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Candidates {
    pub units: usize,
    pub task: Task,
}

impl Candidates {
    pub fn new(units: usize, task: Task) -> Self {
        Candidates { units, task }
    }

    pub fn len(&self) -> usize {
        self.units + self.task.stop_candidates().len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn step(&self, index: usize) -> PlanStep {
        if index < self.units {
            PlanStep::Unit(index)
        } else {
            self.task.stop_candidates()[index - self.units]
        }
    }

    pub fn index(&self, step: PlanStep) -> Option<usize> {
        match step {
            PlanStep::Unit(i) => (i < self.units).then_some(i),
            s => self.task.stop_candidates().iter().position(|&t| t == s).map(|p| self.units + p),
        }
    }

    /// Checks that `prefix` is an unfinished plan over these candidates.
    pub fn validate_prefix(&self, prefix: &[PlanStep]) -> Result<()> {
        for &s in prefix {
            if s == PlanStep::EndOfPlan {
                return Err(Error::FinishedPrefix);
            }
            if self.index(s).is_none() {
                return Err(Error::Input(format!("plan step {s:?} is not a candidate ({} units, {})", self.units, self.task.name())));
            }
        }
        Ok(())
    }
}
