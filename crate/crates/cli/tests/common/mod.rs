#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Output;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stepwise::data::{write_jsonl, DocRecord};
use stepwise::rotowire::{BreakToken, PlanItem, PlanLine};
use stepwise::selfcheck::{worked_example_first_sentence, worked_example_game};
use stepwise::synthetic::overlapping_doc;

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_stepwise")
}

pub fn run(args: &[&str]) -> Output {
    std::process::Command::new(bin()).args(args).output().expect("binary runs")
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A fresh, empty directory under the system temp dir.
pub fn workdir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("stepwise-cli-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

pub struct Fixtures {
    pub cnndm_config: PathBuf,
    pub rotowire_config: PathBuf,
    pub docs: PathBuf,
    pub games: PathBuf,
    pub plans: PathBuf,
}

const SMALL_MODEL: &str = "
seed = 3

[model]
dim = 16
heads = 2
ffn_dim = 32

[optim]
max_steps = 12
eval_every = 4
batch_size = 4
";

/// Small configs, eight synthetic documents, and the worked-example game
/// with a two-sentence plan.
pub fn fixtures(dir: &Path) -> Fixtures {
    let cnndm_config = dir.join("cnndm.toml");
    std::fs::write(&cnndm_config, format!("task = \"cnndm\"\nencoder = \"hibert\"\n{SMALL_MODEL}")).unwrap();
    let rotowire_config = dir.join("rotowire.toml");
    std::fs::write(&rotowire_config, format!("task = \"rotowire\"\nencoder = \"etc\"\n{SMALL_MODEL}\n[decode]\nmax_steps = 12\n")).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let docs: Vec<DocRecord> = (0..8)
        .map(|i| {
            let d = overlapping_doc(&mut rng, 6, 20);
            DocRecord { id: format!("doc-{i}"), sentences: d.sentences, reference: vec![d.reference] }
        })
        .collect();
    let docs_path = dir.join("docs.jsonl");
    write_jsonl(&docs_path, &docs).unwrap();

    let games = dir.join("games.jsonl");
    std::fs::write(&games, format!("{}\n", worked_example_game())).unwrap();
    let mut plan = worked_example_first_sentence();
    plan.extend([
        PlanItem::record("Michael_Jordan", "PLAYER-PTS"),
        PlanItem::record("Michael_Jordan", "PLAYER-REB"),
        PlanItem::Break(BreakToken::Eos),
        PlanItem::Break(BreakToken::Eot),
    ]);
    let plans = dir.join("plans.jsonl");
    write_jsonl(&plans, &[PlanLine { id: "worked-example".into(), plan }]).unwrap();
    Fixtures { cnndm_config, rotowire_config, docs: docs_path, games, plans }
}
