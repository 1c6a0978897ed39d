//! Prints one PASS/FAIL line per acceptance criterion, with the evidence
//! indented underneath, and exits nonzero if any criterion fails.

mod common;

use std::path::Path;
use std::time::{Duration, Instant};

use common::*;
use stepwise::checkpoint::Checkpoint;
use stepwise::config::EncoderKind;
use stepwise::experiment::{overfit, OverfitSettings};
use stepwise::selfcheck::{self, Check};

struct Outcome {
    criterion: u8,
    title: &'static str,
    passed: bool,
    lines: Vec<String>,
}

fn from_checks(criterion: u8, title: &'static str, checks: Vec<Check>, extra: Vec<(bool, String)>) -> Outcome {
    let mut lines: Vec<String> = checks.iter().map(|c| format!("{} {}: {}", mark(c.passed), c.name, c.detail)).collect();
    lines.extend(extra.iter().map(|(ok, l)| format!("{} {l}", mark(*ok))));
    let passed = !checks.is_empty() && checks.iter().all(|c| c.passed) && extra.iter().all(|(ok, _)| *ok);
    Outcome { criterion, title, passed, lines }
}

fn mark(ok: bool) -> &'static str {
    if ok {
        "ok  "
    } else {
        "FAIL"
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}

fn gradient_suite() -> Outcome {
    let (checks, took) = timed(selfcheck::gradient_checks);
    let runtime = (took < Duration::from_secs(120), format!("runtime {:.1}s (limit 120s)", took.as_secs_f64()));
    from_checks(1, "gradient suite", checks, vec![runtime])
}

fn overfit_run() -> Outcome {
    let settings = OverfitSettings::default();
    let max_steps = 5000;
    let budget = Duration::from_secs(15 * 60);
    let start = Instant::now();
    let mut lines = Vec::new();
    let mut passed = true;
    for encoder in [EncoderKind::Hibert, EncoderKind::Etc] {
        let remaining = budget.saturating_sub(start.elapsed());
        match overfit(encoder, &settings, 2024, Some(remaining)) {
            Ok(r) => {
                let ok = r.passed(&settings, max_steps);
                passed &= ok;
                lines.push(format!(
                    "{} {encoder:?}: next-step accuracy {:.4}, exact plan match {:.4} after {} steps in {:.0}s",
                    mark(ok),
                    r.accuracy,
                    r.exact_match,
                    r.steps,
                    r.seconds
                ));
            }
            Err(e) => {
                passed = false;
                lines.push(format!("FAIL {encoder:?}: {e}"));
            }
        }
    }
    let took = start.elapsed();
    let in_time = took < budget;
    passed &= in_time;
    lines.push(format!("{} total runtime {:.0}s (limit 900s)", mark(in_time), took.as_secs_f64()));
    Outcome {
        criterion: 4,
        title: "overfit learning check (64 docs x 12 sentences, 3 sentinel sentences, desk preset)",
        passed,
        lines,
    }
}

fn formatting() -> Outcome {
    let note = "cmd_stats mean plan length against 59.24 entries / 12.72 sentences needs the real dataset and reference plans; not run here".to_string();
    let mut o = from_checks(8, "rotowire formatting fidelity", selfcheck::formatting_checks(), vec![]);
    o.lines.push(format!("info {note}"));
    o
}

/// Runs every command of one replay and returns the bytes of each output.
fn replay(dir: &Path, f: &Fixtures) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut outputs = Vec::new();
    let mut go = |name: &str, args: Vec<String>, files: Vec<std::path::PathBuf>| -> Result<(), String> {
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        let o = run(&refs);
        if !o.status.success() {
            return Err(format!("{name} failed: {}", stderr(&o)));
        }
        outputs.push((format!("{name} stdout"), o.stdout));
        for file in files {
            let bytes = std::fs::read(&file).map_err(|e| format!("{}: {e}", file.display()))?;
            outputs.push((file.file_name().unwrap().to_string_lossy().into_owned(), bytes));
        }
        Ok(())
    };
    let p = |name: &str| dir.join(name);
    let a = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    go("oracle", a(&["oracle", "--config", s(&f.cnndm_config), "--in", s(&f.docs), "--out", s(&p("oracles.jsonl"))]), vec![p("oracles.jsonl")])?;
    let ck = p("cnndm");
    go(
        "train cnndm",
        a(&["train", "--config", s(&f.cnndm_config), "--train", s(&f.docs), "--valid", s(&f.docs), "--out", s(&ck)]),
        vec![ck.join("best.ckpt"), ck.join("last.ckpt"), ck.join("report.json")],
    )?;
    go(
        "decode cnndm",
        a(&["decode", "--config", s(&f.cnndm_config), "--ckpt", s(&ck.join("best.ckpt")), "--in", s(&f.docs), "--out", s(&p("summaries.jsonl")), "--triblk"]),
        vec![p("summaries.jsonl")],
    )?;
    go(
        "eval rouge",
        a(&["eval", "--task", "rouge", "--gen", s(&p("summaries.jsonl")), "--ref", s(&f.docs), "--out", s(&p("rouge.json")), "--stem"]),
        vec![p("rouge.json")],
    )?;
    let rk = p("rotowire");
    go(
        "train rotowire",
        a(&[
            "train", "--config", s(&f.rotowire_config), "--train", s(&f.games), "--valid", s(&f.games), "--out", s(&rk),
            "--train-plans", s(&f.plans), "--valid-plans", s(&f.plans),
        ]),
        vec![rk.join("best.ckpt"), rk.join("report.json")],
    )?;
    go(
        "decode rotowire",
        a(&["decode", "--config", s(&f.rotowire_config), "--ckpt", s(&rk.join("best.ckpt")), "--in", s(&f.games), "--out", s(&p("plans.jsonl"))]),
        vec![p("plans.jsonl")],
    )?;
    go(
        "eval plan",
        a(&["eval", "--task", "plan", "--gen", s(&p("plans.jsonl")), "--ref", s(&f.plans), "--out", s(&p("plan.json")), "--games", s(&f.games)]),
        vec![p("plan.json")],
    )?;
    go("linearize", a(&["linearize", "--in", s(&f.games), "--out", s(&p("units.jsonl"))]), vec![p("units.jsonl")])?;
    go("stats", a(&["stats", "--in", s(&f.plans), "--out", s(&p("hist.csv"))]), vec![p("hist.csv")])?;
    go("selfcheck", a(&["selfcheck", "--out", s(&p("selfcheck.json"))]), vec![p("selfcheck.json")])?;
    Ok(outputs)
}

fn checkpoint_round_trip(path: &Path) -> Result<String, String> {
    let bytes = std::fs::read(path).map_err(|e| e.to_string())?;
    let ckpt = Checkpoint::from_bytes(&bytes).map_err(|e| e.to_string())?;
    if ckpt.to_bytes() != bytes {
        return Err("load then save changed the bytes".into());
    }
    let step = ckpt.manifest.step;
    let model = ckpt.into_model(None).map_err(|e| e.to_string())?;
    if Checkpoint::from_model(&model, step).to_bytes() != bytes {
        return Err("rebuilding the model then saving changed the bytes".into());
    }
    Ok(format!("{} bytes identical after load/save and after model rebuild", bytes.len()))
}

fn reproducibility() -> Outcome {
    let mut lines = Vec::new();
    let mut passed = true;
    let runs: Vec<_> = (0..2)
        .map(|i| {
            let dir = workdir(&format!("accept-replay-{i}"));
            let f = fixtures(&dir);
            (replay(&dir, &f), dir)
        })
        .collect();
    match (&runs[0].0, &runs[1].0) {
        (Ok(a), Ok(b)) => {
            let differing: Vec<&str> = a.iter().zip(b).filter(|(x, y)| x.1 != y.1).map(|(x, _)| x.0.as_str()).collect();
            let ok = differing.is_empty() && a.len() == b.len();
            passed &= ok;
            lines.push(format!("{} {} outputs of 10 commands byte-identical across two runs{}", mark(ok), a.len(), if ok { String::new() } else { format!("; differing: {differing:?}") }));
        }
        (Err(e), _) | (_, Err(e)) => {
            passed = false;
            lines.push(format!("FAIL {e}"));
        }
    }
    for name in ["cnndm/best.ckpt", "rotowire/best.ckpt"] {
        match checkpoint_round_trip(&runs[0].1.join(name)) {
            Ok(detail) => lines.push(format!("ok   {name}: {detail}")),
            Err(e) => {
                passed = false;
                lines.push(format!("FAIL {name}: {e}"));
            }
        }
    }
    Outcome { criterion: 9, title: "reproducibility", passed, lines }
}

fn main() {
    let start = Instant::now();
    let mut outcomes = vec![
        gradient_suite(),
        from_checks(2, "sparsity accounting", selfcheck::sparsity_checks(), vec![]),
        from_checks(3, "reachability", selfcheck::reachability_checks(), vec![]),
    ];
    outcomes.push(overfit_run());
    outcomes.push(from_checks(5, "decoder exactness", selfcheck::decoder_checks(), vec![]));
    outcomes.push(from_checks(6, "oracle quality", selfcheck::oracle_checks(), vec![]));
    outcomes.push(from_checks(7, "metric oracles", selfcheck::metric_checks(), vec![]));
    outcomes.push(formatting());
    outcomes.push(reproducibility());

    for o in &outcomes {
        println!("{} criterion {}: {}", if o.passed { "PASS" } else { "FAIL" }, o.criterion, o.title);
        for l in &o.lines {
            println!("    {l}");
        }
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    println!("{} of {} criteria passed in {:.0}s", outcomes.len() - failed, outcomes.len(), start.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
