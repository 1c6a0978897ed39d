use std::collections::{HashMap, VecDeque};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn toks(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-12
}

#[test]
fn rouge_hand_cases() {
    let r2 = rouge_n(&toks("a b c"), &toks("a b d"), 2);
    assert!(close(r2.precision, 0.5) && close(r2.recall, 0.5) && close(r2.f1, 0.5));
    let rl = rouge_l(&toks("a b c"), &toks("a c"));
    assert!(close(rl.precision, 2.0 / 3.0) && close(rl.recall, 1.0) && close(rl.f1, 0.8));
    let r1 = rouge_n(&toks("the the the"), &toks("the cat"), 1);
    assert!(close(r1.precision, 1.0 / 3.0) && close(r1.recall, 0.5));
}

#[test]
fn rouge_empty_reference_is_flagged() {
    let r = rouge_n(&toks("a b"), &toks("a"), 2);
    assert!(r.empty_reference);
    assert_eq!(r.f1, 0.0);
    assert!(!rouge_n(&toks("a b"), &toks("a b"), 2).empty_reference);
}

#[test]
fn mean_rouge_of_identical_text_is_one() {
    let t = toks("x y z w");
    assert!(close(mean_rouge_f1(&t, &t), 1.0));
}

#[test]
fn stemming_merges_inflections() {
    assert_eq!(stem_tokens(&["running", "runs"]), stem_tokens(&["run", "run"]));
}

#[test]
fn dld_hand_cases() {
    assert_eq!(dld(&["a", "b"], &["b", "a"]), 1);
    assert!(close(co_score(&["a", "b"], &["b", "a"]), 0.5));
    assert_eq!(dld(b"kitten", b"sitting"), 3);
    assert_eq!(dld(b"ca", b"abc"), 3);
    assert_eq!(dld_unrestricted(b"ca", b"abc"), 2);
    assert!(close(co_score::<u8>(&[], &[]), 1.0));
    assert!(close(co_score(b"abc", b""), 0.0));
}

#[test]
fn cs_hand_cases() {
    let r = |e: &str, t: &str| RecordRef::new(e, t, "1");
    let gen = vec![r("A", "PLAYER-PTS"), r("B", "PLAYER-AST"), r("A", "PLAYER-PTS")];
    let gold = vec![r("A", "PLAYER-PTS"), r("C", "TEAM-PTS")];
    let s = cs_scores(&gen, &gold, false);
    assert!(close(s.precision, 1.0 / 3.0) && close(s.recall, 0.5));

    let gen = vec![r("A", "PLAYER-PTS"), r("A", "PLAYER-FIRST_NAME"), r("Heat", "TEAM-CITY")];
    let gold = vec![r("A", "PLAYER-PTS"), r("A", "PLAYER-FIRST_NAME")];
    let filtered = cs_scores(&gen, &gold, true);
    assert!(close(filtered.precision, 1.0) && close(filtered.recall, 1.0));
    let unfiltered = cs_scores(&gen, &gold, false);
    assert!(close(unfiltered.precision, 2.0 / 3.0));

    let empty = cs_scores(&[], &gold, false);
    assert!(empty.empty_generation && empty.precision == 0.0 && empty.recall == 0.0);
}

#[test]
fn record_ref_serializes_type_field() {
    let v = serde_json::to_value(RecordRef::new("Heat", "TEAM-PTS", "99")).unwrap();
    assert_eq!(v["type"], "TEAM-PTS");
    assert_eq!(v["entity"], "Heat");
}

/// Reference BLEU computed straight from the formula on a two-sentence corpus.
#[test]
fn bleu_hand_case() {
    let cands = vec![toks("a b c d e"), toks("x y z w")];
    let refs = vec![toks("a b c d f"), toks("x y z w v")];
    // 1-grams 8/9, 2-grams 6/7, 3-grams 4/5, 4-grams 2/3; c=9 r=10.
    let p: f64 = (8.0f64 / 9.0).ln() + (6.0f64 / 7.0).ln() + (4.0f64 / 5.0).ln() + (2.0f64 / 3.0).ln();
    let expected = (1.0 - 10.0 / 9.0f64).exp() * (p / 4.0).exp();
    assert!(close(bleu(&cands, &refs), expected));
    assert!(close(bleu(&[toks("a b c d")], &[toks("a b c d")]), 1.0));
    assert_eq!(bleu(&[toks("a b c")], &[toks("a b c")]), 0.0);
}

/// Minimum-cost edit script where every symbol is touched at most once:
/// brute-force recursion over the first operation, no memo table.
fn osa_oracle(a: &[u8], b: &[u8]) -> usize {
    if a.is_empty() || b.is_empty() {
        return a.len() + b.len();
    }
    let mut best = 1 + osa_oracle(&a[1..], b);
    best = best.min(1 + osa_oracle(a, &b[1..]));
    best = best.min(usize::from(a[0] != b[0]) + osa_oracle(&a[1..], &b[1..]));
    if a.len() >= 2 && b.len() >= 2 && a[0] == b[1] && a[1] == b[0] {
        best = best.min(1 + osa_oracle(&a[2..], &b[2..]));
    }
    best
}

/// Shortest sequence of single-symbol edits and adjacent swaps, found by BFS
/// over actual strings.
fn bfs_distances(src: &[u8], alphabet: &[u8], max_len: usize) -> HashMap<Vec<u8>, usize> {
    let mut dist = HashMap::from([(src.to_vec(), 0)]);
    let mut queue = VecDeque::from([src.to_vec()]);
    while let Some(s) = queue.pop_front() {
        let d = dist[&s];
        let mut next = Vec::new();
        for i in 0..s.len() {
            let mut t = s.clone();
            t.remove(i);
            next.push(t);
            for &c in alphabet {
                if c != s[i] {
                    let mut t = s.clone();
                    t[i] = c;
                    next.push(t);
                }
            }
            if i + 1 < s.len() {
                let mut t = s.clone();
                t.swap(i, i + 1);
                next.push(t);
            }
        }
        if s.len() < max_len {
            for i in 0..=s.len() {
                for &c in alphabet {
                    let mut t = s.clone();
                    t.insert(i, c);
                    next.push(t);
                }
            }
        }
        for t in next {
            if !dist.contains_key(&t) {
                dist.insert(t.clone(), d + 1);
                queue.push_back(t);
            }
        }
    }
    dist
}

fn all_strings(alphabet: &[u8], max_len: usize) -> Vec<Vec<u8>> {
    let mut out = vec![vec![]];
    let mut frontier = vec![vec![]];
    for _ in 0..max_len {
        let mut grown = Vec::new();
        for s in &frontier {
            for &c in alphabet {
                let mut t: Vec<u8> = s.clone();
                t.push(c);
                grown.push(t);
            }
        }
        out.extend(grown.iter().cloned());
        frontier = grown;
    }
    out
}

#[test]
fn restricted_dld_matches_exhaustive_alignment_search() {
    let strings = all_strings(b"abc", 5);
    assert_eq!(strings.len(), 364);
    for a in &strings {
        for b in &strings {
            assert_eq!(dld(a, b), osa_oracle(a, b), "{a:?} {b:?}");
        }
    }
}

#[test]
fn unrestricted_dld_matches_edit_bfs() {
    let strings = all_strings(b"abc", 5);
    for a in &strings {
        let dist = bfs_distances(a, b"abc", 6);
        for b in &strings {
            assert_eq!(dld_unrestricted(a, b), dist[b], "{a:?} {b:?}");
        }
    }
}

#[test]
fn metric_axioms_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let words = ["a", "b", "c", "d", "e"];
    for _ in 0..1000 {
        let draw = |rng: &mut ChaCha8Rng| -> Vec<&str> { (0..rng.gen_range(0..8)).map(|_| words[rng.gen_range(0..5)]).collect() };
        let x = draw(&mut rng);
        let y = draw(&mut rng);
        for n in 1..=2 {
            let s = rouge_n(&x, &y, n);
            assert!((0.0..=1.0).contains(&s.precision) && (0.0..=1.0).contains(&s.recall) && (0.0..=1.0).contains(&s.f1));
            let t = rouge_n(&y, &x, n);
            assert!(close(s.precision, t.recall) && close(s.recall, t.precision));
        }
        let l = rouge_l(&x, &y);
        assert!((0.0..=1.0).contains(&l.f1));
        assert_eq!(dld(&x, &y), dld(&y, &x));
        let co = co_score(&x, &y);
        assert!((0.0..=1.0).contains(&co));
        let bl = bleu(std::slice::from_ref(&x), std::slice::from_ref(&y));
        assert!((0.0..=1.0).contains(&bl));

        let recs = |v: &[&str]| v.iter().map(|w| RecordRef::new(*w, "PLAYER-PTS", "1")).collect::<Vec<_>>();
        let (gx, gy) = (recs(&x), recs(&y));
        let a = cs_scores(&gx, &gy, false);
        let b = cs_scores(&gy, &gx, false);
        assert!(close(a.precision, b.recall) && close(a.recall, b.precision));
        assert!((0.0..=1.0).contains(&a.f1));
    }
}

proptest! {
    #[test]
    fn unrestricted_dld_is_a_metric(
        a in prop::collection::vec(0u8..4, 0..7),
        b in prop::collection::vec(0u8..4, 0..7),
        c in prop::collection::vec(0u8..4, 0..7),
    ) {
        prop_assert_eq!(dld_unrestricted(&a, &a), 0);
        prop_assert_eq!(dld_unrestricted(&a, &b), dld_unrestricted(&b, &a));
        prop_assert!(dld_unrestricted(&a, &c) <= dld_unrestricted(&a, &b) + dld_unrestricted(&b, &c));
        prop_assert!(dld_unrestricted(&a, &b) <= dld(&a, &b));
    }

    #[test]
    fn restricted_dld_identity_and_symmetry(
        a in prop::collection::vec(0u8..4, 0..8),
        b in prop::collection::vec(0u8..4, 0..8),
    ) {
        prop_assert_eq!(dld(&a, &a), 0);
        prop_assert_eq!(dld(&a, &b) == 0, a == b);
        prop_assert_eq!(dld(&a, &b), dld(&b, &a));
        prop_assert!(dld(&a, &b) <= a.len().max(b.len()));
    }
}

/// The restricted form breaks the triangle inequality; pin the textbook case.
#[test]
fn restricted_dld_triangle_counterexample() {
    assert!(dld(b"ca", b"abc") > dld(b"ca", b"ac") + dld(b"ac", b"abc"));
}

#[test]
fn remaining_hand_cases() {
    let rl = rouge_l(&toks("a b"), &toks("b a"));
    assert!(close(rl.precision, 0.5) && close(rl.recall, 0.5) && close(rl.f1, 0.5));
    assert_eq!(rouge_n(&toks("a b"), &toks("c d"), 1).f1, 0.0);
    assert_eq!(mean_rouge_f1(&toks("a b"), &toks("c d")), 0.0);
    // Rouge-1 4/5 and 4/5, Rouge-2 2/4 and 2/4, LCS 4 of 5 and 5.
    let m = mean_rouge_f1(&toks("a b x c d"), &toks("a b y c d"));
    assert!(close(m, (0.8 + 0.5 + 0.8) / 3.0));

    let r = |e: &str| RecordRef::new(e, "PLAYER-PTS", "10");
    let s = cs_scores(&[r("1"), r("2"), r("3")], &[r("2"), r("3"), r("4")], false);
    assert!(close(s.precision, 2.0 / 3.0) && close(s.recall, 2.0 / 3.0));
    let s = cs_scores(&[r("1"), r("1")], &[r("1")], false);
    assert!(close(s.precision, 0.5) && close(s.recall, 1.0));
    assert!(!s.empty_generation);

    assert!(close(co_score(&["a"], &["b"]), 0.0));
    assert!(close(co_score(&["a", "b"], &["a", "b"]), 1.0));
    assert_eq!(dld(b"abc", b""), 3);

    // Clipped counts 5/6, 3/5, 2/4, 1/3 and equal lengths.
    let b = bleu(&[toks("the cat sat on the mat")], &[toks("the cat sat on a mat")]);
    assert!(close(b, (1.0f64 / 12.0).powf(0.25)));
    assert_eq!(bleu(&[toks("a b c d")], &[toks("e f g h")]), 0.0);
    assert_eq!(bleu::<&str>(&[vec![]], &[toks("a")]), 0.0);
}

#[test]
fn rouge_of_self_is_one_for_every_order() {
    let t = toks("p q r s t");
    for n in 1..=4 {
        assert!(close(rouge_n(&t, &t, n).f1, 1.0));
    }
}

proptest! {
    #[test]
    fn co_is_one_iff_identical(
        a in prop::collection::vec(0u8..3, 0..6),
        b in prop::collection::vec(0u8..3, 0..6),
    ) {
        let co = co_score(&a, &b);
        prop_assert!((0.0..=1.0).contains(&co));
        prop_assert_eq!(co == 1.0, a == b);
    }
}
