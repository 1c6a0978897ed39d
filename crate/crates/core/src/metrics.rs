//! Rouge, BLEU, content selection and content ordering.

use std::collections::HashMap;
use std::hash::Hash;

use rust_stemmers::{Algorithm, Stemmer};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// The reference had no n-grams of the requested order.
    #[serde(default)]
    pub empty_reference: bool,
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

impl RougeScore {
    fn from_counts(overlap: usize, cand_total: usize, ref_total: usize) -> Self {
        let precision = if cand_total == 0 { 0.0 } else { overlap as f64 / cand_total as f64 };
        let recall = if ref_total == 0 { 0.0 } else { overlap as f64 / ref_total as f64 };
        RougeScore { precision, recall, f1: f1(precision, recall), empty_reference: ref_total == 0 }
    }
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
        }
    }
    counts
}

/// Overlap with each n-gram counted at most as often as in the other side.
fn clipped_overlap<S: AsRef<str>>(candidate: &[S], reference: &[S], n: usize) -> (usize, usize, usize) {
    let c = ngram_counts(candidate, n);
    let r = ngram_counts(reference, n);
    let overlap = c.iter().map(|(g, &k)| k.min(r.get(g).copied().unwrap_or(0))).sum();
    (overlap, candidate.len().saturating_sub(n - 1), reference.len().saturating_sub(n - 1))
}

pub fn rouge_n<S: AsRef<str>>(candidate: &[S], reference: &[S], n: usize) -> RougeScore {
    assert!(n >= 1, "rouge order must be positive");
    let (overlap, c, r) = clipped_overlap(candidate, reference, n);
    RougeScore::from_counts(overlap, c, r)
}

fn lcs_len<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Longest-common-subsequence Rouge over the concatenated token lists.
pub fn rouge_l<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> RougeScore {
    RougeScore::from_counts(lcs_len(candidate, reference), candidate.len(), reference.len())
}

/// Mean of the Rouge-1, Rouge-2 and Rouge-L F1 scores.
pub fn mean_rouge_f1<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> f64 {
    (rouge_n(candidate, reference, 1).f1 + rouge_n(candidate, reference, 2).f1 + rouge_l(candidate, reference).f1) / 3.0
}

/// English Snowball stemming of each token.
pub fn stem_tokens<S: AsRef<str>>(tokens: &[S]) -> Vec<String> {
    let stemmer = Stemmer::create(Algorithm::English);
    tokens.iter().map(|t| stemmer.stem(t.as_ref()).into_owned()).collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DldVariant {
    /// Optimal string alignment: no span is edited twice.
    #[default]
    Restricted,
    Unrestricted,
}

/// Damerau-Levenshtein distance in the optimal-string-alignment form.
pub fn dld<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (m, n) = (a.len(), b.len());
    let w = n + 1;
    let mut d = vec![0usize; (m + 1) * w];
    for i in 0..=m {
        d[i * w] = i;
    }
    for (j, cell) in d.iter_mut().enumerate().take(n + 1) {
        *cell = j;
    }
    for i in 1..=m {
        for j in 1..=n {
            let cost = usize::from(a[i - 1] != b[j - 1]);
            let mut v = (d[(i - 1) * w + j] + 1).min(d[i * w + j - 1] + 1).min(d[(i - 1) * w + j - 1] + cost);
            if i > 1 && j > 1 && a[i - 1] == b[j - 2] && a[i - 2] == b[j - 1] {
                v = v.min(d[(i - 2) * w + j - 2] + 1);
            }
            d[i * w + j] = v;
        }
    }
    d[m * w + n]
}

/// Damerau-Levenshtein distance allowing edits between transposed symbols.
pub fn dld_unrestricted<T: Eq + Hash>(a: &[T], b: &[T]) -> usize {
    let (m, n) = (a.len(), b.len());
    let inf = m + n;
    let w = n + 2;
    let mut h = vec![0usize; (m + 2) * w];
    h[0] = inf;
    for i in 0..=m {
        h[(i + 1) * w] = inf;
        h[(i + 1) * w + 1] = i;
    }
    for j in 0..=n {
        h[j + 1] = inf;
        h[w + j + 1] = j;
    }
    let mut last_row: HashMap<&T, usize> = HashMap::new();
    for i in 1..=m {
        let mut last_col = 0;
        for j in 1..=n {
            let k = last_row.get(&b[j - 1]).copied().unwrap_or(0);
            let l = last_col;
            let cost = if a[i - 1] == b[j - 1] {
                last_col = j;
                0
            } else {
                1
            };
            h[(i + 1) * w + j + 1] = (h[i * w + j] + cost)
                .min(h[(i + 1) * w + j] + 1)
                .min(h[i * w + j + 1] + 1)
                .min(h[k * w + l] + (i - k - 1) + 1 + (j - l - 1));
        }
        last_row.insert(&a[i - 1], i);
    }
    h[(m + 1) * w + n + 1]
}

pub fn dld_with<T: Eq + Hash>(variant: DldVariant, a: &[T], b: &[T]) -> usize {
    match variant {
        DldVariant::Restricted => dld(a, b),
        DldVariant::Unrestricted => dld_unrestricted(a, b),
    }
}

/// `1 - dld / max(|gen|, |ref|)`, and 1 when both are empty.
pub fn co_score<T: Eq + Hash>(generated: &[T], reference: &[T]) -> f64 {
    co_score_with(DldVariant::Restricted, generated, reference)
}

pub fn co_score_with<T: Eq + Hash>(variant: DldVariant, generated: &[T], reference: &[T]) -> f64 {
    let longest = generated.len().max(reference.len());
    if longest == 0 {
        return 1.0;
    }
    1.0 - dld_with(variant, generated, reference) as f64 / longest as f64
}

/// One box-score cell.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RecordRef {
    pub entity: String,
    #[serde(rename = "type")]
    pub record_type: String,
    #[serde(default)]
    pub value: String,
}

impl RecordRef {
    pub fn new(entity: impl Into<String>, record_type: impl Into<String>, value: impl Into<String>) -> Self {
        RecordRef { entity: entity.into(), record_type: record_type.into(), value: value.into() }
    }
}

/// Record types left out of content-selection counts when filtering.
pub const NAME_CITY_DATE_TYPES: [&str; 5] = ["TEAM-NAME", "TEAM-CITY", "PLAYER-FIRST_NAME", "PLAYER-SECOND_NAME", "MATCH-DATE"];

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CsScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// The (filtered) generated plan was empty, so precision is 0 by fiat.
    pub empty_generation: bool,
}

/// Multiset precision/recall of generated records against the reference.
pub fn cs_scores(generated: &[RecordRef], reference: &[RecordRef], drop_name_city_date: bool) -> CsScore {
    let keep = |r: &&RecordRef| !drop_name_city_date || !NAME_CITY_DATE_TYPES.contains(&r.record_type.as_str());
    let g: Vec<&RecordRef> = generated.iter().filter(keep).collect();
    let r: Vec<&RecordRef> = reference.iter().filter(keep).collect();
    let mut counts: HashMap<&RecordRef, usize> = HashMap::new();
    for x in &r {
        *counts.entry(x).or_default() += 1;
    }
    let mut matched = 0;
    for x in &g {
        if let Some(c) = counts.get_mut(x) {
            if *c > 0 {
                *c -= 1;
                matched += 1;
            }
        }
    }
    let precision = if g.is_empty() { 0.0 } else { matched as f64 / g.len() as f64 };
    let recall = if r.is_empty() { 0.0 } else { matched as f64 / r.len() as f64 };
    CsScore { precision, recall, f1: f1(precision, recall), empty_generation: g.is_empty() }
}

/// Corpus BLEU-4 with brevity penalty and no smoothing, in `[0, 1]`.
pub fn bleu<S: AsRef<str>>(candidates: &[Vec<S>], references: &[Vec<S>]) -> f64 {
    assert_eq!(candidates.len(), references.len(), "one reference per candidate");
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let (mut c_len, mut r_len) = (0, 0);
    for (c, r) in candidates.iter().zip(references) {
        c_len += c.len();
        r_len += r.len();
        for n in 1..=4 {
            let (o, ct, _) = clipped_overlap(c, r, n);
            matched[n - 1] += o;
            total[n - 1] += ct;
        }
    }
    if c_len == 0 || matched.iter().zip(&total).any(|(&m, &t)| m == 0 || t == 0) {
        return 0.0;
    }
    let log_p: f64 = matched.iter().zip(&total).map(|(&m, &t)| (m as f64 / t as f64).ln()).sum::<f64>() / 4.0;
    let bp = if c_len > r_len { 1.0 } else { (1.0 - r_len as f64 / c_len as f64).exp() };
    bp * log_p.exp()
}

#[cfg(test)]
mod tests;
