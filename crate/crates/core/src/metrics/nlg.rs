use std::collections::HashMap;

use serde::{Deserialize, Serialize};

/// Utterance-level comparison of a generated utterance with its target.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UtteranceScore {
    pub bleu: f64,
    pub rouge_l: f64,
    pub meteor_lite: f64,
    pub cosine: f64,
    pub intent_cosine: f64,
    pub masked_cosine: f64,
    pub ent_p: f64,
    pub ent_r: f64,
    pub ent_f1: f64,
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    for window in tokens.windows(n) {
        *counts
            .entry(window.iter().map(AsRef::as_ref).collect::<Vec<_>>())
            .or_insert(0) += 1;
    }
    counts
}

/// Sentence BLEU: geometric mean of clipped n-gram precisions up to
/// `min(max_n, |candidate|)`, times the brevity penalty. A zero count for
/// n >= 2 is smoothed to `1 / (total + 1)`; a zero unigram count gives 0.
pub fn bleu<S: AsRef<str>>(candidate: &[S], reference: &[S], max_n: usize) -> f64 {
    if candidate.is_empty() || reference.is_empty() || max_n == 0 {
        return 0.0;
    }
    let orders = max_n.min(candidate.len());
    let mut log_sum = 0.0;
    for n in 1..=orders {
        let cand = ngram_counts(candidate, n);
        let refs = ngram_counts(reference, n);
        let total = candidate.len() + 1 - n;
        let matched: usize = cand
            .iter()
            .map(|(gram, &c)| c.min(refs.get(gram).copied().unwrap_or(0)))
            .sum();
        let precision = match (matched, n) {
            (0, 1) => return 0.0,
            (0, _) => 1.0 / (total as f64 + 1.0),
            _ => matched as f64 / total as f64,
        };
        log_sum += precision.ln();
    }
    let (c, r) = (candidate.len() as f64, reference.len() as f64);
    let brevity = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    brevity * (log_sum / orders as f64).exp()
}

fn lcs_len<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F1 over the longest common subsequence.
pub fn rouge_l<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(candidate, reference) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let p = lcs / candidate.len() as f64;
    let r = lcs / reference.len() as f64;
    2.0 * p * r / (p + r)
}

/// Exact-match METEOR. Candidate tokens align greedily to the earliest
/// unused equal reference token; chunks are maximal runs that are
/// contiguous on both sides. A full single-chunk alignment of equal-length
/// sequences carries no fragmentation penalty.
pub fn meteor_lite<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> f64 {
    let mut used = vec![false; reference.len()];
    let mut alignment = Vec::new();
    for (i, tok) in candidate.iter().enumerate() {
        let hit = reference
            .iter()
            .enumerate()
            .position(|(j, r)| !used[j] && r.as_ref() == tok.as_ref());
        if let Some(j) = hit {
            used[j] = true;
            alignment.push((i, j));
        }
    }
    let matches = alignment.len();
    if matches == 0 {
        return 0.0;
    }
    let chunks = 1 + alignment
        .windows(2)
        .filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1))
        .count();
    let m = matches as f64;
    let p = m / candidate.len() as f64;
    let r = m / reference.len() as f64;
    let f_mean = 10.0 * p * r / (r + 9.0 * p);
    let exact = chunks == 1 && matches == candidate.len() && matches == reference.len();
    let penalty = if exact { 0.0 } else { 0.5 * (chunks as f64 / m).powi(3) };
    f_mean * (1.0 - penalty)
}
