use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::MetricError;

/// Type-token ratio at which an MTLD factor is closed.
pub const MTLD_THRESHOLD: f64 = 0.72;

const MIN_MTLD_TOKENS: usize = 10;

fn is_apostrophe(c: char) -> bool {
    matches!(c, '\'' | '\u{2019}')
}

/// Lower-cases, drops punctuation (apostrophes survive only between word
/// characters) and splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter_map(|chunk| {
            let chars: Vec<char> = chunk
                .to_lowercase()
                .chars()
                .filter(|&c| c.is_alphanumeric() || is_apostrophe(c))
                .collect();
            let mut token = String::with_capacity(chars.len());
            for (i, &c) in chars.iter().enumerate() {
                if is_apostrophe(c) {
                    let inner = i > 0
                        && chars[i - 1].is_alphanumeric()
                        && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric());
                    if inner {
                        token.push('\'');
                    }
                } else {
                    token.push(c);
                }
            }
            (!token.is_empty()).then_some(token)
        })
        .collect()
}

/// Full factors plus the trailing partial factor of one MTLD pass.
fn factor_total<'a>(tokens: impl Iterator<Item = &'a str>, threshold: f64) -> f64 {
    let mut types = HashSet::new();
    let mut count = 0usize;
    let mut factors = 0.0;
    for token in tokens {
        count += 1;
        types.insert(token);
        if types.len() as f64 / count as f64 <= threshold {
            factors += 1.0;
            types.clear();
            count = 0;
        }
    }
    if count > 0 {
        let ttr = types.len() as f64 / count as f64;
        factors += (1.0 - ttr) / (1.0 - threshold);
    }
    factors
}

/// Bidirectional MTLD: the mean of the forward and backward pass scores,
/// each being the token count over the factor total.
pub fn mtld<S: AsRef<str>>(tokens: &[S], threshold: f64) -> Result<f64, MetricError> {
    if tokens.len() < MIN_MTLD_TOKENS {
        return Err(MetricError::DegenerateDiversity(format!(
            "{} tokens, at least {MIN_MTLD_TOKENS} required",
            tokens.len()
        )));
    }
    let forward = factor_total(tokens.iter().map(AsRef::as_ref), threshold);
    let backward = factor_total(tokens.iter().rev().map(AsRef::as_ref), threshold);
    if forward == 0.0 || backward == 0.0 {
        return Err(MetricError::DegenerateDiversity("no factor completed".into()));
    }
    let n = tokens.len() as f64;
    Ok((n / forward + n / backward) / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    /// `None` when the stream is too short or too diverse for a factor.
    pub mtld: Option<f64>,
    pub unigram_count: usize,
    pub avg_utt_len: f64,
}

/// Diversity of a set of user utterances. MTLD runs over the concatenated
/// token stream, so utterance order matters for it and for nothing else.
/// A degenerate MTLD leaves the count fields intact and `mtld` unset.
pub fn diversity_report<S: AsRef<str>>(utterances: &[S]) -> Result<DiversityReport, MetricError> {
    if utterances.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let per_utt: Vec<Vec<String>> = utterances.iter().map(|u| tokenize(u.as_ref())).collect();
    let stream: Vec<&str> = per_utt.iter().flatten().map(String::as_str).collect();
    let unigram_count = stream.iter().collect::<HashSet<_>>().len();
    Ok(DiversityReport {
        mtld: match mtld(&stream, MTLD_THRESHOLD) {
            Ok(v) => Some(v),
            Err(MetricError::DegenerateDiversity(_)) => None,
            Err(e) => return Err(e),
        },
        unigram_count,
        avg_utt_len: stream.len() as f64 / utterances.len() as f64,
    })
}
