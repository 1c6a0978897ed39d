//! Seeded synthetic documents for oracle checks and overfitting runs.

use rand::seq::SliceRandom;
use rand::Rng;

/// A tokenized document and a reference summary.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SyntheticDoc {
    pub sentences: Vec<Vec<String>>,
    pub reference: Vec<String>,
}

fn word(prefix: &str, i: usize) -> String {
    format!("{prefix}{i}")
}

/// Sentences over a small shared vocabulary; the reference mixes copied
/// fragments of a few sentences with unrelated words.
pub fn overlapping_doc<R: Rng>(rng: &mut R, sentences: usize, vocab: usize) -> SyntheticDoc {
    let sentences: Vec<Vec<String>> = (0..sentences)
        .map(|_| (0..rng.gen_range(4..10)).map(|_| word("w", rng.gen_range(0..vocab))).collect())
        .collect();
    let mut reference = Vec::new();
    let mut picks: Vec<usize> = (0..sentences.len()).collect();
    picks.shuffle(rng);
    picks.truncate(rng.gen_range(1..=3.min(sentences.len())));
    picks.sort_unstable();
    for &p in &picks {
        let s = &sentences[p];
        let start = rng.gen_range(0..s.len());
        let end = rng.gen_range(start + 1..=s.len());
        reference.extend(s[start..end].iter().cloned());
        for _ in 0..rng.gen_range(0..3) {
            reference.push(word("w", rng.gen_range(0..vocab)));
        }
    }
    SyntheticDoc { sentences, reference }
}

/// Sentences with pairwise disjoint vocabularies. The reference copies
/// `gold` sentences verbatim in document order, padded with words found in
/// no sentence.
pub fn disjoint_doc<R: Rng>(rng: &mut R, sentences: usize, gold: &[usize]) -> SyntheticDoc {
    let sentences: Vec<Vec<String>> =
        (0..sentences).map(|i| (0..rng.gen_range(3..8)).map(|j| format!("s{i}t{j}")).collect()).collect();
    let mut gold = gold.to_vec();
    gold.sort_unstable();
    let mut reference = Vec::new();
    for (k, &g) in gold.iter().enumerate() {
        reference.extend(sentences[g].iter().cloned());
        for j in 0..rng.gen_range(0..3) {
            reference.push(format!("noise{k}x{j}"));
        }
    }
    SyntheticDoc { sentences, reference }
}

pub const SENTINEL: &str = "sentinel";

/// A document whose gold plan is the sentences carrying [`SENTINEL`], in
/// position order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SentinelDoc {
    pub sentences: Vec<Vec<String>>,
    pub gold: Vec<usize>,
}

/// `docs` documents of `sentences` short sentences over `vocab` filler
/// words; `marked` sentences per document contain the sentinel at a random
/// position.
pub fn sentinel_corpus<R: Rng>(rng: &mut R, docs: usize, sentences: usize, marked: usize, vocab: usize) -> Vec<SentinelDoc> {
    (0..docs)
        .map(|_| {
            let mut gold: Vec<usize> = (0..sentences).collect();
            gold.shuffle(rng);
            gold.truncate(marked);
            gold.sort_unstable();
            let sentences = (0..sentences)
                .map(|i| {
                    let mut s: Vec<String> = (0..rng.gen_range(3..7)).map(|_| word("w", rng.gen_range(0..vocab))).collect();
                    if gold.contains(&i) {
                        let at = rng.gen_range(0..=s.len());
                        s.insert(at, SENTINEL.to_string());
                    }
                    s
                })
                .collect();
            SentinelDoc { sentences, gold }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sentinel_marks_exactly_the_gold_sentences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for doc in sentinel_corpus(&mut rng, 20, 12, 3, 30) {
            assert_eq!(doc.gold.len(), 3);
            let marked: Vec<usize> =
                (0..doc.sentences.len()).filter(|&i| doc.sentences[i].iter().any(|t| t == SENTINEL)).collect();
            assert_eq!(marked, doc.gold);
        }
    }

    #[test]
    fn disjoint_doc_reference_covers_gold() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let doc = disjoint_doc(&mut rng, 6, &[4, 1]);
        for t in doc.sentences[1].iter().chain(&doc.sentences[4]) {
            assert!(doc.reference.contains(t));
        }
        assert!(!doc.reference.iter().any(|t| t.starts_with("s0")));
    }
}
