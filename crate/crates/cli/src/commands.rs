//! Command bodies. Each returns the recoverable per-line errors it skipped
//! over; a hard failure aborts with `Err`.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stepwise::checkpoint::Checkpoint;
use stepwise::config::RunConfig;
use stepwise::data::{self, read_jsonl, write_jsonl, DocRecord, PreparedDoc};
use stepwise::decoder::{beam_decode, greedy_decode_with_repeat_exceptions, Constraints, DecodeResult};
use stepwise::metrics::{bleu, co_score_with, cs_scores, rouge_l, rouge_n, stem_tokens, CsScore, DldVariant, RecordRef};
use stepwise::model::Model;
use stepwise::oracle::{oracle_full, oracle_truncated};
use stepwise::plan::{PlanStep, Task};
use stepwise::rotowire::{self, PlanItem, PlanLine};
use stepwise::text::normalize_tokens;
use stepwise::{selfcheck, Error, Result};

use crate::DldArg;

type Errors = Vec<String>;

#[derive(Serialize)]
struct OracleLine {
    id: String,
    selected: Vec<usize>,
    positions: Vec<usize>,
    score: f64,
    trace: Vec<(usize, f64)>,
}

pub fn oracle(config: &Path, input: &Path, out: &Path) -> Result<Errors> {
    let config = RunConfig::load(config)?;
    let lines = read_jsonl::<DocRecord>(input)?;
    let o = &config.oracle;
    let results: Vec<OracleLine> = lines
        .items
        .iter()
        .map(|doc| {
            let doc = doc.normalized();
            let reference = doc.reference_tokens();
            let r = if o.token_budget > 0 {
                oracle_truncated(&doc.sentences, &reference, o.token_budget, o.max_size)
            } else {
                oracle_full(&doc.sentences, &reference, o.max_size)
            };
            OracleLine { id: doc.id, positions: r.positions(), selected: r.selected, score: r.score, trace: r.trace }
        })
        .collect();
    write_jsonl(out, &results)?;
    Ok(lines.errors)
}

pub fn train(config: &Path, train: &Path, valid: &Path, out: &Path, train_plans: Option<&Path>, valid_plans: Option<&Path>) -> Result<Errors> {
    let config = RunConfig::load(config)?;
    let train_raw = data::load_inputs(config.task, train, train_plans)?;
    let valid_raw = data::load_inputs(config.task, valid, valid_plans)?;
    let mut errors = train_raw.errors;
    errors.extend(valid_raw.errors);
    let vocab = data::build_vocab(&train_raw.items, &config)?;
    let mut model = Model::new(config, vocab)?;
    let (train_docs, e) = data::prepare_all(&model, &train_raw.items);
    errors.extend(e);
    let (valid_docs, e) = data::prepare_all(&model, &valid_raw.items);
    errors.extend(e);
    let report = stepwise::train::train(&mut model, &train_docs, &valid_docs, Some(out), &mut |_, p| {
        eprintln!("step {} valid loss {:.6} accuracy {:.4}", p.step, p.loss, p.accuracy);
        false
    })?;
    std::fs::write(out.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    if let Some(best) = &report.best {
        println!("best step {} valid loss {:.6} accuracy {:.4}", best.step, best.loss, best.accuracy);
    }
    Ok(errors)
}

#[derive(Serialize)]
struct SummaryLine {
    id: String,
    plan: Vec<usize>,
    log_prob: f64,
    summary: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    warning: Option<String>,
}

#[derive(Serialize)]
struct RotowirePlanLine {
    id: String,
    plan: Vec<PlanItem>,
    log_prob: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    warning: Option<String>,
}

fn decode_doc(model: &Model, doc: &PreparedDoc) -> Result<DecodeResult> {
    let d = &model.config.decode;
    let scorer = model.scorer(&doc.input);
    match &doc.records {
        Some(records) if d.repeat_exceptions => {
            greedy_decode_with_repeat_exceptions(&scorer, d.max_steps, &|u| records.get(u).is_some_and(rotowire::repeatable_unit))
        }
        records => {
            let repeatable = records.iter().flatten().enumerate().filter(|(_, r)| rotowire::repeatable_unit(r)).map(|(i, _)| i).collect();
            let trigram_units = d.triblk.then(|| doc.unit_tokens.iter().map(|u| normalize_tokens(u)).collect());
            let constraints = Constraints { no_repeat: d.no_repeat, repeatable, trigram_units };
            beam_decode(&scorer, d.beam, d.max_steps, &constraints)
        }
    }
}

pub fn decode(
    config: &Path,
    ckpt: &Path,
    input: &Path,
    out: &Path,
    beam: Option<usize>,
    max_steps: Option<usize>,
    triblk: bool,
) -> Result<Errors> {
    let mut config = RunConfig::load(config)?;
    config.decode.beam = beam.unwrap_or(config.decode.beam);
    config.decode.max_steps = max_steps.unwrap_or(config.decode.max_steps);
    config.decode.triblk |= triblk;
    config.validate()?;
    let model = Checkpoint::load(ckpt)?.into_model(Some(&config))?;
    let raw = data::load_inputs(config.task, input, None)?;
    let mut errors = raw.errors;
    let (docs, e) = data::prepare_all(&model, &raw.items);
    errors.extend(e);
    let mut summaries = Vec::new();
    let mut plans = Vec::new();
    for doc in &docs {
        let result = match decode_doc(&model, doc) {
            Ok(r) => r,
            Err(e) => {
                errors.push(format!("{}: {e}", doc.id));
                continue;
            }
        };
        let h = result.hypothesis;
        match &doc.records {
            Some(records) => plans.push(RotowirePlanLine {
                id: doc.id.clone(),
                plan: rotowire::plan_items(&h.steps, records)?,
                log_prob: h.log_prob,
                warning: result.warning,
            }),
            None => {
                let units: Vec<usize> = h.steps.iter().filter_map(|s| if let PlanStep::Unit(u) = s { Some(*u) } else { None }).collect();
                let summary = units.iter().flat_map(|&u| doc.unit_tokens[u].iter().cloned()).collect();
                summaries.push(SummaryLine { id: doc.id.clone(), plan: units, log_prob: h.log_prob, summary, warning: result.warning });
            }
        }
    }
    match config.task {
        Task::Cnndm => write_jsonl(out, &summaries)?,
        Task::Rotowire => write_jsonl(out, &plans)?,
    }
    Ok(errors)
}

pub struct EvalOptions {
    pub stem: bool,
    pub dld: DldArg,
    pub drop_name_city_date: bool,
    pub games: Option<PathBuf>,
}

/// A generated or reference text: decoder output carries `summary` tokens,
/// document files carry `abstract` sentences.
#[derive(Deserialize)]
struct TextLine {
    id: String,
    #[serde(default)]
    summary: Option<Vec<String>>,
    #[serde(default, rename = "abstract")]
    sentences: Option<Vec<Vec<String>>>,
}

impl TextLine {
    fn tokens(&self, stem: bool) -> Vec<String> {
        let raw: Vec<String> = match (&self.summary, &self.sentences) {
            (Some(s), _) => s.clone(),
            (None, Some(s)) => s.concat(),
            (None, None) => Vec::new(),
        };
        let tokens = normalize_tokens(&raw);
        if stem {
            stem_tokens(&tokens)
        } else {
            tokens
        }
    }
}

/// Pairs generated lines with references by id, in generated order.
fn pair_by_id<'a, T>(gen: &'a [T], refs: &'a [T], id: impl Fn(&T) -> &str, errors: &mut Errors) -> Vec<(&'a T, &'a T)> {
    let by_id: HashMap<&str, &T> = refs.iter().map(|r| (id(r), r)).collect();
    let mut out = Vec::new();
    for g in gen {
        match by_id.get(id(g)) {
            Some(r) => out.push((g, *r)),
            None => errors.push(format!("no reference for id {:?}", id(g))),
        }
    }
    out
}

#[derive(Serialize)]
struct RougeExample {
    id: String,
    rouge_1: f64,
    rouge_2: f64,
    rouge_3: f64,
    rouge_4: f64,
    rouge_l: f64,
}

#[derive(Serialize)]
struct RougeReport {
    examples: usize,
    stem: bool,
    rouge_1: f64,
    rouge_2: f64,
    rouge_3: f64,
    rouge_4: f64,
    rouge_l: f64,
    bleu: f64,
    per_example: Vec<RougeExample>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub fn eval_rouge(gen: &Path, reference: &Path, out: &Path, options: &EvalOptions) -> Result<Errors> {
    let gen_lines = read_jsonl::<TextLine>(gen)?;
    let ref_lines = read_jsonl::<TextLine>(reference)?;
    let mut errors = gen_lines.errors;
    errors.extend(ref_lines.errors);
    let pairs = pair_by_id(&gen_lines.items, &ref_lines.items, |l| &l.id, &mut errors);
    let mut per_example = Vec::new();
    let (mut cands, mut refs) = (Vec::new(), Vec::new());
    for (g, r) in pairs {
        let (c, t) = (g.tokens(options.stem), r.tokens(options.stem));
        per_example.push(RougeExample {
            id: g.id.clone(),
            rouge_1: rouge_n(&c, &t, 1).f1,
            rouge_2: rouge_n(&c, &t, 2).f1,
            rouge_3: rouge_n(&c, &t, 3).f1,
            rouge_4: rouge_n(&c, &t, 4).f1,
            rouge_l: rouge_l(&c, &t).f1,
        });
        cands.push(c);
        refs.push(t);
    }
    let report = RougeReport {
        examples: per_example.len(),
        stem: options.stem,
        rouge_1: mean(per_example.iter().map(|e| e.rouge_1)),
        rouge_2: mean(per_example.iter().map(|e| e.rouge_2)),
        rouge_3: mean(per_example.iter().map(|e| e.rouge_3)),
        rouge_4: mean(per_example.iter().map(|e| e.rouge_4)),
        rouge_l: mean(per_example.iter().map(|e| e.rouge_l)),
        bleu: bleu(&cands, &refs),
        per_example,
    };
    std::fs::write(out, serde_json::to_string_pretty(&report)? + "\n")?;
    println!("R1 {:.4} R2 {:.4} RL {:.4} BLEU {:.4} over {} examples", report.rouge_1, report.rouge_2, report.rouge_l, report.bleu, report.examples);
    Ok(errors)
}

#[derive(Serialize)]
struct PlanExample {
    id: String,
    cs: CsScore,
    co: f64,
}

#[derive(Serialize)]
struct PlanReport {
    examples: usize,
    dld: DldVariant,
    drop_name_city_date: bool,
    cs_precision: f64,
    cs_recall: f64,
    cs_f1: f64,
    co: f64,
    empty_generations: usize,
    per_example: Vec<PlanExample>,
}

pub fn eval_plan(gen: &Path, reference: &Path, out: &Path, options: &EvalOptions) -> Result<Errors> {
    let gen_lines = read_jsonl::<PlanLine>(gen)?;
    let ref_lines = read_jsonl::<PlanLine>(reference)?;
    let mut errors = gen_lines.errors;
    errors.extend(ref_lines.errors);
    let mut units: HashMap<String, Vec<RecordRef>> = HashMap::new();
    if let Some(path) = &options.games {
        let games = data::load_inputs(Task::Rotowire, path, None)?;
        errors.extend(games.errors);
        for raw in games.items {
            if let data::RawInput::Game { game, .. } = raw {
                units.insert(game.id.clone().unwrap_or_default(), game.records());
            }
        }
    }
    let variant = match options.dld {
        DldArg::Restricted => DldVariant::Restricted,
        DldArg::Unrestricted => DldVariant::Unrestricted,
    };
    let none = Vec::new();
    let mut per_example = Vec::new();
    for (g, r) in pair_by_id(&gen_lines.items, &ref_lines.items, |l| &l.id, &mut errors) {
        let u = units.get(&g.id).unwrap_or(&none);
        let (gr, rr) = (rotowire::plan_records(&g.plan, u), rotowire::plan_records(&r.plan, u));
        let key = |v: &[RecordRef]| v.iter().map(|x| (x.entity.clone(), x.record_type.clone())).collect::<Vec<_>>();
        per_example.push(PlanExample {
            id: g.id.clone(),
            cs: cs_scores(&gr, &rr, options.drop_name_city_date),
            co: co_score_with(variant, &key(&gr), &key(&rr)),
        });
    }
    let report = PlanReport {
        examples: per_example.len(),
        dld: variant,
        drop_name_city_date: options.drop_name_city_date,
        cs_precision: mean(per_example.iter().map(|e| e.cs.precision)),
        cs_recall: mean(per_example.iter().map(|e| e.cs.recall)),
        cs_f1: mean(per_example.iter().map(|e| e.cs.f1)),
        co: mean(per_example.iter().map(|e| e.co)),
        empty_generations: per_example.iter().filter(|e| e.cs.empty_generation).count(),
        per_example,
    };
    std::fs::write(out, serde_json::to_string_pretty(&report)? + "\n")?;
    println!("CS P {:.4} R {:.4} F1 {:.4} CO {:.4} over {} plans", report.cs_precision, report.cs_recall, report.cs_f1, report.co, report.examples);
    Ok(errors)
}

#[derive(Serialize)]
struct UnitsLine {
    id: String,
    units: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    plan: Option<Vec<String>>,
}

pub fn linearize(input: &Path, out: &Path) -> Result<Errors> {
    let raw = data::load_inputs(Task::Rotowire, input, None)?;
    let mut errors = raw.errors;
    let mut lines = Vec::new();
    for item in raw.items {
        let data::RawInput::Game { game, .. } = item else { continue };
        let id = game.id.clone().unwrap_or_default();
        let mut units = Vec::new();
        for record in rotowire::rank_records(&game) {
            match rotowire::templated_text(&record) {
                Ok(text) => units.push(text),
                Err(e) => errors.push(format!("{id}: {e}")),
            }
        }
        let plan = match &game.reference_plan {
            Some(p) => Some(rotowire::linearize_plan(p)?),
            None => None,
        };
        lines.push(UnitsLine { id, units, plan });
    }
    write_jsonl(out, &lines)?;
    Ok(errors)
}

pub fn selfcheck(out: Option<&Path>) -> Result<Errors> {
    let checks = selfcheck::run_all();
    for c in &checks {
        println!("{} [{}] {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.criterion, c.name, c.detail);
    }
    if let Some(path) = out {
        std::fs::write(path, serde_json::to_string_pretty(&checks)? + "\n")?;
    }
    Ok(checks.iter().filter(|c| !c.passed).map(|c| format!("check failed: {}", c.name)).collect())
}

#[derive(Serialize)]
struct HistogramRow<'a> {
    measure: &'a str,
    length: usize,
    count: usize,
    density: f64,
}

pub fn stats(input: &Path, out: &Path) -> Result<Errors> {
    let lines = read_jsonl::<PlanLine>(input)?;
    let plans: Vec<Vec<PlanItem>> = lines.items.into_iter().map(|l| l.plan).collect();
    let stats = rotowire::plan_stats(&plans);
    let mut writer = csv::Writer::from_path(out).map_err(|e| Error::Input(e.to_string()))?;
    let total = stats.plans.max(1) as f64;
    let histograms: BTreeMap<&str, &Vec<(usize, usize)>> = [("entries", &stats.entry_histogram), ("sentences", &stats.sentence_histogram)].into();
    for (measure, hist) in histograms {
        for &(length, count) in hist {
            writer.serialize(HistogramRow { measure, length, count, density: count as f64 / total }).map_err(|e| Error::Input(e.to_string()))?;
        }
    }
    writer.flush()?;
    println!("{} plans, mean {:.2} entries, mean {:.2} sentences", stats.plans, stats.mean_entries, stats.mean_sentences);
    Ok(lines.errors)
}
