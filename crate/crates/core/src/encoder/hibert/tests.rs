use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::attention::{score_counter, ScorePart};
use crate::tensor::gradcheck::{check_params, random_projection, random_tensor, REL_TOLERANCE};
use crate::tensor::Tensor;

fn toy_config() -> HibertConfig {
    HibertConfig {
        vocab_size: 50,
        dim: 16,
        heads: 2,
        ffn_dim: 32,
        sent_layers: 2,
        doc_layers: 2,
        max_sent_len: 6,
        max_doc_units: 4,
        max_plan_len: 2,
    }
}

fn toy(seed: u64) -> (ParamStore, HibertEncoder) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let enc = HibertEncoder::new(&mut store, toy_config(), &mut rng).unwrap();
    (store, enc)
}

fn toy_input() -> ModelInput {
    let units = (0..4).map(|s| (0..6).map(|t| 7 + (s * 11 + t * 5) % 43).collect()).collect();
    ModelInput::new(Task::Cnndm, units).unwrap()
}

#[test]
fn identical_sentences_give_identical_rows() {
    let (store, enc) = toy(1);
    let mut tape = Tape::new();
    let batch = SentenceBatch::from_units(&[vec![8, 9, 10], vec![11, 12], vec![8, 9, 10]]).unwrap();
    let out = enc.encode_sentences(&mut tape, &store, &batch).unwrap();
    let v = tape.value(out);
    assert_eq!(v.row(0), v.row(2));
    assert_ne!(v.row(0), v.row(1));
}

#[test]
fn padding_beyond_length_is_ignored() {
    let (store, enc) = toy(2);
    let base = SentenceBatch::new(vec![vec![8, 9, 10], vec![11, 12, 0]], vec![3, 2]).unwrap();
    let padded = SentenceBatch::new(vec![vec![8, 9, 10, 0, 0, 0], vec![11, 12, 13, 14, 15, 16]], vec![3, 2]).unwrap();
    let mut tape = Tape::new();
    let a = enc.encode_sentences(&mut tape, &store, &base).unwrap();
    let b = enc.encode_sentences(&mut tape, &store, &padded).unwrap();
    assert_eq!(tape.value(a).data(), tape.value(b).data());
}

#[test]
fn sentence_encoder_scores_only_within_sentences() {
    let (store, enc) = toy(3);
    let lengths = [3usize, 6, 1, 4];
    let units: Vec<Vec<usize>> = lengths.iter().map(|&l| (0..l).map(|t| 10 + t).collect()).collect();
    score_counter::reset();
    let mut tape = Tape::new();
    enc.encode_sentences(&mut tape, &store, &SentenceBatch::from_units(&units).unwrap()).unwrap();
    let per_layer: usize = lengths.iter().map(|l| l * l).sum();
    assert_eq!(score_counter::get(ScorePart::Dense), (per_layer * toy_config().sent_layers) as u64);
    assert_eq!(score_counter::total(), score_counter::get(ScorePart::Dense));
}

#[test]
fn empty_sentence_rejected() {
    assert!(SentenceBatch::new(vec![vec![0, 0]], vec![0]).is_err());
    assert!(ModelInput::new(Task::Cnndm, vec![vec![3], vec![]]).is_err());
}

#[test]
fn single_unit_single_row_is_finite() {
    let (store, enc) = toy(4);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut tape = Tape::new();
    let d = tape.constant(random_tensor(&[1, 16], &mut rng, 1.0));
    let s = tape.constant(random_tensor(&[1, 16], &mut rng, 1.0));
    let out = enc.encode_document_stepwise(&mut tape, &store, d, s).unwrap();
    assert_eq!(tape.shape(out), &[1, 16]);
    assert!(tape.value(out).is_finite());
}

#[test]
fn document_rows_are_permutation_equivariant() {
    let (store, enc) = toy(5);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let doc = random_tensor(&[3, 16], &mut rng, 1.0);
    let sum = random_tensor(&[2, 16], &mut rng, 1.0);
    let perm = [2usize, 0, 1];
    let permuted = Tensor::from_rows(&perm.iter().map(|&i| doc.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
    let run = |d: &Tensor| {
        let mut tape = Tape::new();
        let dv = tape.constant(d.clone());
        let sv = tape.constant(sum.clone());
        let out = enc.encode_document_stepwise(&mut tape, &store, dv, sv).unwrap();
        tape.value(out).clone()
    };
    let a = run(&doc);
    let b = run(&permuted);
    for (k, &i) in perm.iter().enumerate() {
        for (x, y) in a.row(i).iter().zip(b.row(k)) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn every_output_row_depends_on_every_summary_row() {
    let (store, enc) = toy(6);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let doc = random_tensor(&[3, 16], &mut rng, 1.0);
    let sum = random_tensor(&[3, 16], &mut rng, 1.0);
    for i in 0..3 {
        let mut tape = Tape::new();
        let dv = tape.constant(doc.clone());
        let sv = tape.leaf(sum.clone().with_grad());
        let out = enc.encode_document_stepwise(&mut tape, &store, dv, sv).unwrap();
        let row = tape.slice_rows(out, i, 1).unwrap();
        let loss = random_projection(&mut tape, row, 7).unwrap();
        tape.backward(loss).unwrap();
        let g = tape.grad(sv).unwrap();
        for j in 0..3 {
            assert!(g[j * 16..(j + 1) * 16].iter().any(|x| x.abs() > 1e-12), "row {i} ignores summary {j}");
        }
    }
}

#[test]
fn self_attention_is_shared_with_the_summary_stream() {
    let (mut store, enc) = toy(7);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let doc = random_tensor(&[1, 16], &mut rng, 1.0);
    let sum = random_tensor(&[3, 16], &mut rng, 1.0);
    let run = |store: &ParamStore| {
        let mut tape = Tape::new();
        let dv = tape.constant(doc.clone());
        let sv = tape.constant(sum.clone());
        let out = enc.encode_document_stepwise(&mut tape, store, dv, sv).unwrap();
        tape.value(out).clone()
    };
    let before = run(&store);
    // With one document row its self-attention weight is always 1, so any
    // effect of the query weights must come through the summary stream.
    let q = enc.doc_layers[0].self_attn.query.weight;
    store.get_mut(q).data_mut()[0] += 0.5;
    let after = run(&store);
    assert_ne!(before.data(), after.data());
    let names: Vec<&str> = store.iter().map(|p| p.name.as_str()).filter(|n| n.contains("document.0") && n.contains("attn.query.weight")).collect();
    assert_eq!(names, ["hibert.document.0.self_attn.query.weight", "hibert.document.0.cross_attn.query.weight"]);
}

#[test]
fn tied_rows_give_tied_logits() {
    let (store, enc) = toy(8);
    let input = ModelInput::new(Task::Cnndm, vec![vec![9, 10], vec![9, 10]]).unwrap();
    let mut store = store;
    let pos = enc.embeddings.pos_doc;
    store.get_mut(pos).data_mut().iter_mut().for_each(|x| *x = 0.0);
    let mut tape = Tape::new();
    let l = enc.step_logits(&mut tape, &store, &input, &[&[]]).unwrap()[0];
    let v = tape.value(l).data();
    assert_eq!(v.len(), 3);
    assert_eq!(v[0], v[1]);
}

#[test]
fn rotowire_mode_adds_sentence_break_and_skips_document_positions() {
    let (mut store, enc) = toy(9);
    let input = ModelInput::new(Task::Rotowire, vec![vec![9, 10], vec![11]]).unwrap();
    let prefix = [PlanStep::Unit(1), PlanStep::SentenceBreak];
    let run = |store: &ParamStore| {
        let mut tape = Tape::new();
        let l = enc.step_logits(&mut tape, store, &input, &[&prefix]).unwrap()[0];
        tape.value(l).clone()
    };
    let before = run(&store);
    assert_eq!(before.numel(), 4);
    store.get_mut(enc.embeddings.pos_doc).data_mut()[0] += 1.0;
    assert_eq!(before.data(), run(&store).data());
    store.get_mut(enc.embeddings.pos_sum).data_mut()[0] += 1.0;
    assert_ne!(before.data(), run(&store).data());
}

#[test]
fn replaying_a_prefix_is_bitwise_stable() {
    let (store, enc) = toy(10);
    let input = toy_input();
    let prefix = [PlanStep::Unit(2)];
    let mut t1 = Tape::new();
    let a = enc.step_logits(&mut t1, &store, &input, &[&prefix]).unwrap()[0];
    let mut t2 = Tape::new();
    let b = enc.step_logits(&mut t2, &store, &input, &[&[], &prefix]).unwrap()[1];
    assert_eq!(t1.value(a).data(), t2.value(b).data());
}

#[test]
fn limits_are_enforced() {
    let (store, enc) = toy(11);
    let mut tape = Tape::new();
    let too_many = ModelInput::new(Task::Cnndm, vec![vec![9]; 5]).unwrap();
    assert!(enc.step_logits(&mut tape, &store, &too_many, &[&[]]).is_err());
    let input = toy_input();
    let long_prefix = [PlanStep::Unit(0), PlanStep::Unit(1), PlanStep::Unit(2)];
    assert!(enc.step_logits(&mut tape, &store, &input, &[&long_prefix]).is_err());
    assert!(matches!(enc.step_logits(&mut tape, &store, &input, &[&[PlanStep::EndOfPlan]]), Err(Error::FinishedPrefix)));
    let prepared = enc.prepare(Task::Cnndm, vec![vec![9; 8]; 6]).unwrap();
    assert_eq!(prepared.units.len(), 4);
    assert!(prepared.units.iter().all(|u| u.len() == 6));
}

#[test]
fn full_model_gradients_match_finite_differences() {
    let (mut store, enc) = toy(12);
    let input = toy_input();
    let prefix = [PlanStep::Unit(1)];
    let report = check_params(
        &mut store,
        |s, t| {
            let l = enc.step_logits(t, s, &input, &[&prefix])?[0];
            t.cross_entropy(l, 3)
        },
        1e-6,
    )
    .unwrap();
    assert!(report.passed(REL_TOLERANCE), "{report:?}");
}
