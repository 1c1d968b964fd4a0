use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use serde_json::json;

use crate::dialogue::Utterance;
use crate::goal::normalize_value;

use super::{tokenize, Extractor, MetricError, Prf};

/// Placeholder substituted for entity values before masked comparison.
pub const MASK_TOKEN: &str = "entity";

#[derive(Debug, Clone, PartialEq)]
pub enum Embedding {
    Dense(Vec<f64>),
    /// Open-vocabulary vector keyed by feature name.
    Sparse(BTreeMap<String, f64>),
}

pub trait EmbeddingProvider: Send + Sync {
    /// `None` for open-vocabulary sparse providers.
    fn dimension(&self) -> Option<usize>;
    fn embed(&self, text: &str) -> Result<Embedding, MetricError>;
}

/// Bag-of-words term counts over the shared tokenizer. Stateless.
#[derive(Debug, Clone, Copy, Default)]
pub struct TermFrequencyProvider;

impl EmbeddingProvider for TermFrequencyProvider {
    fn dimension(&self) -> Option<usize> {
        None
    }

    fn embed(&self, text: &str) -> Result<Embedding, MetricError> {
        let mut counts = BTreeMap::new();
        for token in tokenize(text) {
            *counts.entry(token).or_insert(0.0) += 1.0;
        }
        Ok(Embedding::Sparse(counts))
    }
}

/// Calls an embeddings endpoint with the common `{model, input}` request
/// shape and reads `data[0].embedding`.
#[derive(Debug, Clone)]
pub struct RemoteEmbeddingProvider {
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub dimension: usize,
    pub timeout: Duration,
}

impl EmbeddingProvider for RemoteEmbeddingProvider {
    fn dimension(&self) -> Option<usize> {
        Some(self.dimension)
    }

    fn embed(&self, text: &str) -> Result<Embedding, MetricError> {
        let url = format!("{}/embeddings", self.base_url.trim_end_matches('/'));
        let mut request = ureq::post(&url).timeout(self.timeout);
        if let Some(key) = &self.api_key {
            request = request.set("Authorization", &format!("Bearer {key}"));
        }
        let body: serde_json::Value = request
            .send_json(json!({ "model": self.model, "input": text }))
            .map_err(|e| MetricError::ProviderFailure(e.to_string()))?
            .into_json()
            .map_err(|e| MetricError::ProviderFailure(e.to_string()))?;
        let vector: Vec<f64> = body["data"][0]["embedding"]
            .as_array()
            .ok_or_else(|| MetricError::ProviderFailure("response has no data[0].embedding".into()))?
            .iter()
            .map(|v| {
                v.as_f64()
                    .ok_or_else(|| MetricError::ProviderFailure("non-numeric embedding".into()))
            })
            .collect::<Result<_, _>>()?;
        if vector.len() != self.dimension {
            return Err(MetricError::ProviderFailure(format!(
                "expected {} dimensions, got {}",
                self.dimension,
                vector.len()
            )));
        }
        Ok(Embedding::Dense(vector))
    }
}

fn cosine(a: &Embedding, b: &Embedding) -> Result<f64, MetricError> {
    let (dot, na, nb) = match (a, b) {
        (Embedding::Dense(x), Embedding::Dense(y)) => {
            if x.len() != y.len() {
                return Err(MetricError::ProviderFailure("embedding dimensions differ".into()));
            }
            let dot = x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
            (
                dot,
                x.iter().map(|v| v * v).sum::<f64>(),
                y.iter().map(|v| v * v).sum::<f64>(),
            )
        }
        (Embedding::Sparse(x), Embedding::Sparse(y)) => {
            let dot = x.iter().filter_map(|(k, v)| y.get(k).map(|w| v * w)).sum::<f64>();
            (
                dot,
                x.values().map(|v| v * v).sum::<f64>(),
                y.values().map(|v| v * v).sum::<f64>(),
            )
        }
        _ => return Err(MetricError::ProviderFailure("mixed dense and sparse embeddings".into())),
    };
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// Cosine similarity of the two embedded texts; 0 when either is a zero
/// vector.
pub fn cosine_similarity(a: &str, b: &str, provider: &dyn EmbeddingProvider) -> Result<f64, MetricError> {
    cosine(&provider.embed(a)?, &provider.embed(b)?)
}

/// Cosine similarity between the embedded intent labels of both utterances.
pub fn intent_similarity(
    generated: &Utterance,
    target: &Utterance,
    extractor: &dyn Extractor,
    provider: &dyn EmbeddingProvider,
) -> Result<f64, MetricError> {
    let intent = |u: &Utterance| -> Result<String, MetricError> {
        match extractor.intent(u) {
            Ok(Some(label)) => Ok(label),
            Ok(None) | Err(MetricError::NoActsAvailable) => Err(MetricError::NoIntentExtracted(u.text.clone())),
            Err(e) => Err(e),
        }
    };
    cosine_similarity(&intent(generated)?, &intent(target)?, provider)
}

fn mask(text: &str, values: &BTreeSet<String>) -> String {
    let tokens = tokenize(&normalize_value(text));
    let mut patterns: Vec<Vec<String>> = values.iter().map(|v| tokenize(v)).filter(|p| !p.is_empty()).collect();
    patterns.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
    let mut out = Vec::with_capacity(tokens.len());
    let mut i = 0;
    while i < tokens.len() {
        match patterns.iter().find(|p| tokens[i..].starts_with(p)) {
            Some(p) => {
                out.push(MASK_TOKEN.to_string());
                i += p.len();
            }
            None => {
                out.push(tokens[i].clone());
                i += 1;
            }
        }
    }
    out.join(" ")
}

/// Cosine similarity after replacing every extracted entity value on both
/// sides with [`MASK_TOKEN`].
pub fn masked_similarity(
    generated: &Utterance,
    target: &Utterance,
    extractor: &dyn Extractor,
    provider: &dyn EmbeddingProvider,
) -> Result<f64, MetricError> {
    let values = |u: &Utterance| -> Result<BTreeSet<String>, MetricError> {
        Ok(extractor.entities(u)?.into_iter().map(|(_, v)| v).collect())
    };
    let (gv, tv) = (values(generated)?, values(target)?);
    if gv.is_empty() && tv.is_empty() {
        return cosine_similarity(&generated.text, &target.text, provider);
    }
    cosine_similarity(&mask(&generated.text, &gv), &mask(&target.text, &tv), provider)
}

/// Set P/R/F1 of the generated utterance's entities, target as reference.
pub fn nlu_entity_prf(
    generated: &Utterance,
    target: &Utterance,
    extractor: &dyn Extractor,
) -> Result<Prf, MetricError> {
    let gen: BTreeSet<_> = extractor.entities(generated)?.into_iter().collect();
    let tgt: BTreeSet<_> = extractor.entities(target)?.into_iter().collect();
    Ok(Prf::of_sets(&gen, &tgt))
}
