//! Conflict-dataset and proxy-SFT construction.
//!
//! Everything that would call a hosted model or a corpus-frequency service
//! sits behind the [`GenerationClient`] / [`FrequencyClient`] traits, with
//! deterministic stubs so the whole pipeline runs offline.

mod clients;
mod pipeline;
mod sft;

pub use clients::{
    CachedFrequencyClient, FrequencyClient, GenerationClient, HttpClientConfig,
    HttpGenerationClient, StubFrequencyClient, StubGenerationClient,
};
pub use pipeline::{
    assemble_conflict_item, build_conflict_dataset, closed_book_filter, default_answer_matcher,
    generate_context, load_source_qa, perturb_answer, write_provenance, BuildOptions, BuildOutput,
    GeneratedContext, ItemProvenance, Perturbation, RankPlan, SINGLE_SENTENCE_MAX_CHARS,
};
pub use sft::{
    build_proxy_sft, load_choice_qa, write_sft_records, ChoiceQA, LexicalScorer, LlmScorer,
    Polarity, RelatednessScorer, SftOptions, SftRecord,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One source QA pair the pipeline starts from.
///
/// JSON-Lines fields: `id, question, answer, subject, relation, object`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceQA {
    pub id: String,
    pub question: String,
    pub answer: String,
    pub subject: String,
    pub relation: String,
    pub object: String,
}

impl SourceQA {
    pub fn validate(&self) -> Result<()> {
        if self.answer.trim().is_empty() {
            return Err(Error::InvalidInput(format!(
                "item {}: gold answer must be non-empty",
                self.id
            )));
        }
        if self.subject.trim().is_empty() {
            return Err(Error::InvalidInput(format!(
                "item {}: subject must be non-empty",
                self.id
            )));
        }
        Ok(())
    }
}

/// Corpus-frequency bin of a subject.
///
/// At most `10^3` occurrences is rank 1, strictly between `10^3` and `10^5`
/// is rank 2, and `10^5` or more is rank 3.
pub fn popularity_rank(freq: u64) -> u8 {
    if freq <= 1_000 {
        1
    } else if freq < 100_000 {
        2
    } else {
        3
    }
}
