//! Steering a language model's reliance on context via proxy distributions.
//!
//! At each decode step the base model's next-token scores are shifted by the
//! scaled difference between a context-faithful proxy and a parametric-
//! faithful one: `base + alpha * (pos - neg)`. Positive alpha pulls the
//! output toward the context, negative alpha toward the model's built-in
//! knowledge, and the magnitude sets how hard.
//!
//! The crate provides the numeric core, pluggable distribution sources
//! (table models, HTTP backends, black-box top-k wrappers), the greedy
//! steered decoder, a conflict-set evaluation harness with sensitivity
//! scoring and alpha sweeps, and the dataset construction pipeline.
//!
//! With the default `parallel` feature, evaluation fans out across items and
//! per-step source queries are joined concurrently; disable it for a fully
//! sequential build.

pub mod dataset;
pub mod decode;
pub mod error;
pub mod eval;
pub mod exec;
pub mod logits;
pub mod sources;
pub mod toy;
pub mod util;
pub mod vocab;

pub use error::{Error, ErrorClass, Result};
pub use logits::{
    argmax_token, combine, combine_with_floor, log_softmax, topk_reweight,
    topk_reweight_with_floor, LogProbVector, LogitVector, SteerMode, SteeringConfig, TopKLogProbs,
    DEFAULT_LOGIT_FLOOR,
};
pub use vocab::{check_vocab_compat, TokenId, Vocabulary};

pub use decode::{
    answer_bundle, extract_choice_label, greedy_generate_tokens, render_prompt, score_option,
    steered_generate, steered_generate_tokens, steered_step, ChoiceLabel, Generation, PromptBundle,
    ScoringMode, SourceTriple, StepTrace, StopRule, TemplateSet,
};
pub use sources::{
    http_next, load_table_lm, restrict_topk, HttpBackendConfig, HttpSource, LogitSource,
    RequestPayload, StepOutput, TableLm, TopKRestricted, WireMode,
};

pub use eval::{
    accuracy_by_rank, alpha_sweep, answer_choice, difficulty_score, evaluate_items,
    evaluate_items_seq, load_conflict_items, parse_conflict_items, sensitivity_score, sweep_point,
    write_conflict_items, write_report_csv, write_sweep_csv, write_sweep_series, ConflictItem,
    CreditSide, Dimension, EvalOptions, EvalReport, ItemResult, OptionOrder, RankCell, SweepPoint,
    SweepReport,
};

pub use dataset::{
    assemble_conflict_item, build_conflict_dataset, build_proxy_sft, closed_book_filter,
    default_answer_matcher, generate_context, load_choice_qa, load_source_qa, perturb_answer,
    popularity_rank, write_provenance, write_sft_records, BuildOptions, BuildOutput,
    CachedFrequencyClient, ChoiceQA, FrequencyClient, GenerationClient, ItemProvenance,
    LexicalScorer, LlmScorer, Polarity, RelatednessScorer, SftOptions, SftRecord, SourceQA,
    StubFrequencyClient, StubGenerationClient,
};
