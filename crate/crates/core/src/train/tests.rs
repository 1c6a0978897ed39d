use rand::SeedableRng;

use super::*;
use crate::config::{EncoderKind, Preset, RunConfig};
use crate::data::prepare_with_plan;
use crate::plan::{PlanStep, Task};
use crate::synthetic::sentinel_corpus;
use crate::text::Vocab;

fn setup(encoder: EncoderKind, docs: usize) -> (Model, Vec<PreparedDoc>) {
    let mut c = RunConfig::preset(Preset::Desk, Task::Cnndm, encoder);
    c.model.dim = 16;
    c.model.ffn_dim = 32;
    c.optim.batch_size = 4;
    c.optim.max_steps = 6;
    c.optim.eval_every = 2;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let corpus = sentinel_corpus(&mut rng, docs, 5, 2, 10);
    let tokens: Vec<&str> = corpus.iter().flat_map(|d| d.sentences.iter().flatten().map(String::as_str)).collect();
    let model = Model::new(c, Vocab::build(tokens, 1, None)).unwrap();
    let prepared = corpus
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let plan: Vec<PlanStep> = d.gold.iter().map(|&g| PlanStep::Unit(g)).collect();
            prepare_with_plan(&model, &format!("d{i}"), &d.sentences, &plan, Vec::new()).unwrap()
        })
        .collect();
    (model, prepared)
}

#[test]
fn one_small_step_reduces_the_example_loss() {
    for encoder in [EncoderKind::Hibert, EncoderKind::Etc] {
        let (mut model, docs) = setup(encoder, 1);
        let batch = [(0, 0)];
        let before = evaluate(&model, &docs[..1], 0).unwrap();
        model.store.zero_grad();
        accumulate_batch(&mut model, &docs, &batch, 1.0).unwrap();
        let config = AdamConfig { learning_rate: 1e-4, ..AdamConfig::default() };
        AdamState::new(config, &model.store).update(&mut model.store).unwrap();
        let mut one = docs[0].clone();
        one.examples.truncate(1);
        let after = evaluate(&model, &[one.clone()], 0).unwrap();
        let mut original = setup(encoder, 1).1[0].clone();
        original.examples.truncate(1);
        let before_one = evaluate(&setup(encoder, 1).0, &[original], 0).unwrap();
        assert!(after.loss < before_one.loss, "{encoder:?}: {} !< {}", after.loss, before_one.loss);
        assert!(before.examples > 1);
    }
}

#[test]
fn identical_seeds_give_identical_curves() {
    let run = || {
        let (mut model, docs) = setup(EncoderKind::Hibert, 6);
        let report = train(&mut model, &docs[..4], &docs[4..], None, &mut |_, _| false).unwrap();
        let params: Vec<Vec<f64>> = model.store.iter().map(|p| p.tensor.data().to_vec()).collect();
        (report, params)
    };
    let (a, pa) = run();
    let (b, pb) = run();
    assert_eq!(a, b);
    assert_eq!(pa, pb);
    assert_eq!(a.valid.iter().map(|p| p.step).collect::<Vec<_>>(), vec![2, 4, 6]);
    assert_eq!(a.train_loss.len(), 6);
}

#[test]
fn model_returns_with_the_best_parameters() {
    let (mut model, docs) = setup(EncoderKind::Etc, 6);
    let report = train(&mut model, &docs[..4], &docs[4..], None, &mut |_, _| false).unwrap();
    let best = report.best.unwrap();
    let now = evaluate(&model, &docs[4..], best.step).unwrap();
    assert_eq!(now.loss.to_bits(), best.loss.to_bits());
}

#[test]
fn stop_callback_and_checkpoints() {
    let dir = std::env::temp_dir().join(format!("stepwise-train-{}", std::process::id()));
    let (mut model, docs) = setup(EncoderKind::Hibert, 4);
    let report = train(&mut model, &docs, &docs, Some(&dir), &mut |_, p| p.step >= 2).unwrap();
    assert_eq!(report.steps, 2);
    assert!(report.stopped_early);
    let best = Checkpoint::load(&dir.join("best.ckpt")).unwrap();
    assert_eq!(best.manifest.step, 2);
    assert!(dir.join("last.ckpt").exists());
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn non_finite_loss_aborts() {
    let (mut model, docs) = setup(EncoderKind::Hibert, 2);
    let id = model.store.ids().next().unwrap();
    model.store.get_mut(id).data_mut().fill(f64::NAN);
    match train(&mut model, &docs, &docs, None, &mut |_, _| false) {
        Err(Error::NonFiniteLoss(1)) => {}
        other => panic!("expected NonFiniteLoss(1), got {other:?}"),
    }
}
