//! Dataset files and their conversion into encoder inputs with stepwise
//! supervision.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::{EncoderKind, RunConfig};
use crate::encoder::ModelInput;
use crate::error::{Error, Result};
use crate::metrics::RecordRef;
use crate::model::Model;
use crate::oracle::{make_stepwise_examples, oracle_full, oracle_truncated, plan_examples, StepwiseExample};
use crate::plan::{PlanStep, Task};
use crate::rotowire::{self, PlanItem, RotowireGame};
use crate::text::{normalize_tokens, tokenize, Vocab};

/// One line of a document file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DocRecord {
    pub id: String,
    pub sentences: Vec<Vec<String>>,
    #[serde(rename = "abstract", default)]
    pub reference: Vec<Vec<String>>,
}

impl DocRecord {
    pub fn normalized(&self) -> DocRecord {
        DocRecord {
            id: self.id.clone(),
            sentences: self.sentences.iter().map(|s| normalize_tokens(s)).collect(),
            reference: self.reference.iter().map(|s| normalize_tokens(s)).collect(),
        }
    }

    pub fn reference_tokens(&self) -> Vec<String> {
        self.reference.iter().flatten().cloned().collect()
    }
}

/// Parsed lines plus `line N: message` for each line that failed.
#[derive(Clone, Debug)]
pub struct Lines<T> {
    pub items: Vec<T>,
    pub errors: Vec<String>,
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Lines<T>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut items = Vec::new();
    let mut errors = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(v) => items.push(v),
            Err(e) => errors.push(format!("{}: line {}: {e}", path.display(), i + 1)),
        }
    }
    Ok(Lines { items, errors })
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// An input ready for training or decoding.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedDoc {
    pub id: String,
    pub input: ModelInput,
    /// Tokens of each visible unit.
    pub unit_tokens: Vec<Vec<String>>,
    /// Box-score records behind each unit (Rotowire only).
    pub records: Option<Vec<RecordRef>>,
    /// Full gold plan ending in `EndOfPlan`, empty when unknown.
    pub gold: Vec<PlanStep>,
    pub examples: Vec<StepwiseExample>,
    pub reference: Vec<String>,
}

/// Unit token lists of a document before vocabulary lookup.
pub enum RawInput {
    Doc(DocRecord),
    Game { game: RotowireGame, plan: Option<Vec<PlanItem>> },
}

/// Head specials the encoder puts before the units, used to size the
/// Rotowire prefilter.
pub fn head_specials(config: &RunConfig) -> usize {
    match (config.task, config.encoder) {
        (Task::Cnndm, _) => 1,
        (Task::Rotowire, EncoderKind::Hibert) => 2,
        (Task::Rotowire, EncoderKind::Etc) => 3,
    }
}

/// Templated unit tokens and records of a game after prefiltering.
pub fn game_unit_tokens(game: &RotowireGame, config: &RunConfig) -> Result<(Vec<Vec<String>>, Vec<RecordRef>)> {
    let units = rotowire::game_units(game, config.data.rotowire_max_units, head_specials(config))?;
    let mut tokens = Vec::with_capacity(units.len());
    for u in &units {
        tokens.push(tokenize(&rotowire::templated_text(u)?));
    }
    Ok((tokens, units.into_iter().map(|u| u.record).collect()))
}

/// All tokens a vocabulary should be built from.
pub fn vocabulary_tokens(inputs: &[RawInput], config: &RunConfig) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for raw in inputs {
        match raw {
            RawInput::Doc(d) => out.extend(d.sentences.iter().flat_map(|s| normalize_tokens(s))),
            RawInput::Game { game, .. } => out.extend(game_unit_tokens(game, config)?.0.into_iter().flatten()),
        }
    }
    Ok(out)
}

pub fn build_vocab(inputs: &[RawInput], config: &RunConfig) -> Result<Vocab> {
    let tokens = vocabulary_tokens(inputs, config)?;
    Ok(Vocab::build(tokens.iter().map(String::as_str), config.data.vocab_min_count, Some(config.data.max_vocab)))
}

/// Encodes one input for `model`, computing the oracle over the units the
/// encoder actually sees (CNN/DM) or resolving the supplied plan (Rotowire).
pub fn prepare(model: &Model, raw: &RawInput) -> Result<PreparedDoc> {
    let config = &model.config;
    match raw {
        RawInput::Doc(doc) => {
            let doc = doc.normalized();
            let input = model.prepare(&doc.sentences)?;
            let visible = &doc.sentences[..input.units.len()];
            let reference = doc.reference_tokens();
            let oracle = if config.oracle.token_budget > 0 {
                oracle_truncated(visible, &reference, config.oracle.token_budget, config.oracle.max_size)
            } else {
                oracle_full(visible, &reference, config.oracle.max_size)
            };
            let examples = make_stepwise_examples(&oracle, config.oracle.order);
            let gold = examples.last().map(|e| [e.prefix.clone(), vec![e.target]].concat()).unwrap_or_default();
            Ok(PreparedDoc { id: doc.id.clone(), input, unit_tokens: visible.to_vec(), records: None, gold, examples, reference })
        }
        RawInput::Game { game, plan } => {
            let (tokens, records) = game_unit_tokens(game, config)?;
            let input = model.prepare(&tokens)?;
            let n = input.units.len();
            let records: Vec<RecordRef> = records.into_iter().take(n).collect();
            let id = game.id.clone().unwrap_or_default();
            let (gold, examples) = match plan.as_ref().or(game.reference_plan.as_ref()) {
                Some(p) => {
                    let steps = rotowire::resolve_plan(p, &records).map_err(|e| Error::Input(format!("game {id}: {e}")))?;
                    let examples = plan_examples(&steps);
                    let gold = examples.last().map(|e| [e.prefix.clone(), vec![e.target]].concat()).unwrap_or_default();
                    (gold, examples)
                }
                None => (Vec::new(), Vec::new()),
            };
            let reference = game.reference_summary.clone().unwrap_or_default();
            Ok(PreparedDoc { id, input, unit_tokens: tokens[..n].to_vec(), records: Some(records), gold, examples, reference })
        }
    }
}

/// Reads a CNN/DM document file or a Rotowire game file, attaching plans
/// from `plans` by id when given.
pub fn load_inputs(task: Task, path: &Path, plans: Option<&Path>) -> Result<Lines<RawInput>> {
    match task {
        Task::Cnndm => {
            let lines = read_jsonl::<DocRecord>(path)?;
            Ok(Lines { items: lines.items.into_iter().map(RawInput::Doc).collect(), errors: lines.errors })
        }
        Task::Rotowire => {
            let raw = read_jsonl::<serde_json::Value>(path)?;
            let mut errors = raw.errors;
            let plan_map: HashMap<String, Vec<PlanItem>> = match plans {
                Some(p) => {
                    let lines = read_jsonl::<rotowire::PlanLine>(p)?;
                    errors.extend(lines.errors);
                    lines.items.into_iter().map(|l| (l.id, l.plan)).collect()
                }
                None => HashMap::new(),
            };
            let mut items = Vec::new();
            for (i, v) in raw.items.into_iter().enumerate() {
                match rotowire::parse_game(&v) {
                    Ok(mut game) => {
                        if game.id.is_none() {
                            game.id = Some(format!("game-{i}"));
                        }
                        let plan = game.id.as_ref().and_then(|id| plan_map.get(id)).cloned();
                        items.push(RawInput::Game { game, plan });
                    }
                    Err(e) => errors.push(format!("{}: game {}: {e}", path.display(), i + 1)),
                }
            }
            Ok(Lines { items, errors })
        }
    }
}

/// Prepares every input, collecting per-input failures instead of stopping.
pub fn prepare_all(model: &Model, inputs: &[RawInput]) -> (Vec<PreparedDoc>, Vec<String>) {
    let mut docs = Vec::new();
    let mut errors = Vec::new();
    for raw in inputs {
        match prepare(model, raw) {
            Ok(d) => docs.push(d),
            Err(e) => errors.push(e.to_string()),
        }
    }
    (docs, errors)
}

/// Prepares token units supervised by an explicit plan instead of an oracle.
pub fn prepare_with_plan<S: AsRef<str>>(model: &Model, id: &str, units: &[Vec<S>], plan: &[PlanStep], reference: Vec<String>) -> Result<PreparedDoc> {
    let input = model.prepare(units)?;
    let candidates = input.candidates();
    if let Some(bad) = plan.iter().find(|&&s| candidates.index(s).is_none()) {
        return Err(Error::Input(format!("{id}: plan step {bad:?} is not visible to the encoder")));
    }
    let examples = plan_examples(plan);
    let gold = examples.last().map(|e| [e.prefix.clone(), vec![e.target]].concat()).unwrap_or_default();
    let unit_tokens = units[..input.units.len()].iter().map(|u| u.iter().map(|t| t.as_ref().to_string()).collect()).collect();
    Ok(PreparedDoc { id: id.to_string(), input, unit_tokens, records: None, gold, examples, reference })
}
