//! Goal-fulfillment, lexical-diversity and utterance-level metrics.

use thiserror::Error;

mod embedding;
pub(crate) mod extract;
mod fulfillment;
mod lexical;
mod nlg;

pub use embedding::{
    cosine_similarity, intent_similarity, masked_similarity, nlu_entity_prf, Embedding, EmbeddingProvider,
    RemoteEmbeddingProvider, TermFrequencyProvider, MASK_TOKEN,
};
pub use extract::{extract_expressed_entities, ActsExtractor, Extractor, LexicalExtractor};
pub use fulfillment::{aggregate_campaign, entity_prf, evaluate_fulfillment, CampaignTable, FulfillmentReport, Prf};
pub use lexical::{diversity_report, mtld, tokenize, DiversityReport, MTLD_THRESHOLD};
pub use nlg::{bleu, meteor_lite, rouge_l, UtteranceScore};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("lexical diversity is undefined for this input: {0}")]
    DegenerateDiversity(String),
    #[error("transcript carries no dialogue acts")]
    NoActsAvailable,
    #[error("no intent could be extracted from `{0}`")]
    NoIntentExtracted(String),
    #[error("embedding provider failed: {0}")]
    ProviderFailure(String),
    #[error("empty input")]
    EmptyInput,
    #[error("dialogue `{0}` has not terminated")]
    NotTerminated(String),
}

impl MetricError {
    pub fn kind(&self) -> &'static str {
        match self {
            MetricError::DegenerateDiversity(_) => "DegenerateDiversity",
            MetricError::NoActsAvailable => "NoActsAvailable",
            MetricError::NoIntentExtracted(_) => "NoIntentExtracted",
            MetricError::ProviderFailure(_) => "ProviderFailure",
            MetricError::EmptyInput => "EmptyInput",
            MetricError::NotTerminated(_) => "NotTerminated",
        }
    }
}
