use super::*;

#[test]
fn closed_form_matches_a_row_sum() {
    for n in 0..40 {
        for r in 0..45 {
            let direct: usize = (0..n).map(|i: usize| (0..n).filter(|&j: &usize| i.abs_diff(j) <= r).count()).sum();
            assert_eq!(clipped_window_closed_form(n, r), direct, "n={n} r={r}");
        }
    }
}

#[test]
fn restricted_search_handles_the_metric_counterexample() {
    assert_eq!(restricted_search(b"ca", b"abc"), 3);
    assert_eq!(edit_bfs(b"ca", b"abc", 4)[&b"abc".to_vec()], 2);
}

#[test]
fn formatting_checks_pass() {
    for c in formatting_checks() {
        assert!(c.passed, "{}: {}", c.name, c.detail);
    }
}

#[test]
fn metric_checks_pass() {
    for c in metric_checks() {
        assert!(c.passed, "{}: {}", c.name, c.detail);
    }
}

#[test]
fn decoder_checks_pass() {
    for c in decoder_checks() {
        assert!(c.passed, "{}: {}", c.name, c.detail);
    }
}

#[test]
fn dense_reference_sees_the_window() {
    let (l, g, r) = (20, 3, 2);
    let layout = RelPosLayout::for_vocab(9);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut store = ParamStore::new();
    let layer = GlobalLocalLayer::new(&mut store, "layer", &layer_config(8, r), 16, false, &mut rng).unwrap();
    let spec = GlobalLocalLayout::contiguous(sentence_ids(l, g), g, r);
    let pattern = Rc::new(spec.pattern(&layout).unwrap());
    let long = random_tensor(&[l, 8], &mut rng, 1.0);
    let global = random_tensor(&[g, 8], &mut rng, 1.0);
    let mut tape = Tape::new();
    let lv = tape.constant(long.clone());
    let gv = tape.constant(global.clone());
    let (lo, _) = etc_global_local_attention(&mut tape, &store, &layer, lv, gv, &pattern).unwrap();
    let stacked = [rows_of(&long), rows_of(&global)].concat();
    let label = |i: usize, j: usize| if i < l && j < l { layout.position(i, j) } else { layout.other() };
    let unmasked = naive_global_local_layer(&store, &layer, &stacked, &|_, _| true, &label);
    let diff = rows_of(tape.value(lo)).iter().flatten().zip(unmasked.iter().flatten()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(diff > 1e-3, "{diff}");
}
