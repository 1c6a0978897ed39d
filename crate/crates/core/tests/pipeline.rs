use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stepwise::checkpoint::Checkpoint;
use stepwise::config::{EncoderKind, Preset, RunConfig};
use stepwise::data::{build_vocab, prepare_all, DocRecord, RawInput};
use stepwise::decoder::{beam_decode, Constraints};
use stepwise::model::Model;
use stepwise::oracle::{brute_force_oracle, oracle_full};
use stepwise::plan::{PlanStep, Task};
use stepwise::synthetic::{disjoint_doc, overlapping_doc};
use stepwise::train::train;

fn corpus() -> Vec<RawInput> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    (0..6)
        .map(|i| {
            let d = disjoint_doc(&mut rng, 5, &[i % 5, (i + 2) % 5]);
            RawInput::Doc(DocRecord { id: format!("d{i}"), sentences: d.sentences, reference: vec![d.reference] })
        })
        .collect()
}

fn small(encoder: EncoderKind) -> RunConfig {
    let mut c = RunConfig::preset(Preset::Desk, Task::Cnndm, encoder);
    c.model.dim = 16;
    c.model.ffn_dim = 32;
    c.optim.max_steps = 6;
    c.optim.eval_every = 3;
    c.optim.batch_size = 4;
    c
}

#[test]
fn trained_model_decodes_identically_after_a_checkpoint_round_trip() {
    for encoder in [EncoderKind::Hibert, EncoderKind::Etc] {
        let raw = corpus();
        let config = small(encoder);
        let mut model = Model::new(config.clone(), build_vocab(&raw, &config).unwrap()).unwrap();
        let (docs, errors) = prepare_all(&model, &raw);
        assert!(errors.is_empty(), "{errors:?}");
        let report = train(&mut model, &docs, &docs, None, &mut |_, _| false).unwrap();
        assert_eq!(report.valid.len(), 2);

        let bytes = Checkpoint::from_model(&model, report.steps).to_bytes();
        let restored = Checkpoint::from_bytes(&bytes).unwrap().into_model(Some(&config)).unwrap();
        for doc in &docs {
            let a = beam_decode(&model.scorer(&doc.input), 3, 4, &Constraints::no_repeat()).unwrap();
            let b = beam_decode(&restored.scorer(&doc.input), 3, 4, &Constraints::no_repeat()).unwrap();
            assert_eq!(a.hypothesis.steps, b.hypothesis.steps);
            assert_eq!(a.hypothesis.log_prob.to_bits(), b.hypothesis.log_prob.to_bits());
        }
    }
}

#[test]
fn oracle_gold_plans_end_with_the_stop_step() {
    let raw = corpus();
    let config = small(EncoderKind::Hibert);
    let model = Model::new(config.clone(), build_vocab(&raw, &config).unwrap()).unwrap();
    let (docs, _) = prepare_all(&model, &raw);
    for (i, doc) in docs.iter().enumerate() {
        let mut want = vec![i % 5, (i + 2) % 5];
        want.sort();
        let mut expected: Vec<PlanStep> = want.into_iter().map(PlanStep::Unit).collect();
        expected.push(PlanStep::EndOfPlan);
        assert_eq!(doc.gold, expected);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn greedy_oracle_never_beats_brute_force(seed in any::<u64>(), n in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let doc = overlapping_doc(&mut rng, n, 10);
        let greedy = oracle_full(&doc.sentences, &doc.reference, 3);
        let brute = brute_force_oracle(&doc.sentences, &doc.reference, 3).unwrap();
        prop_assert!(greedy.score <= brute.score + 1e-12);
        prop_assert!(greedy.selected.len() <= 3);
        let trace_scores: Vec<f64> = greedy.trace.iter().map(|t| t.1).collect();
        prop_assert!(trace_scores.windows(2).all(|w| w[1] > w[0]));
    }
}
