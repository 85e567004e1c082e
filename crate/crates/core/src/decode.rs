//! The steered generation loop.
//!
//! Prompts are rendered from templates, encoded over the shared vocabulary,
//! and extended one token at a time: at each step the base and both proxies
//! are queried, their scores combined, and the best token taken greedily.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::logits::{
    argmax_token, combine_with_floor, log_softmax, LogitVector, SteerMode, SteeringConfig,
    TopKLogProbs,
};
use crate::sources::{LogitSource, StepOutput};
use crate::vocab::{check_vocab_compat, TokenId, Vocabulary};

/// One question with its context and the two candidate answers, plus the
/// template used to lay them out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub query: String,
    /// Empty means closed-book.
    pub context: String,
    pub option_a: String,
    pub option_b: String,
    pub template_id: String,
}

impl PromptBundle {
    pub fn new(
        query: impl Into<String>,
        context: impl Into<String>,
        option_a: impl Into<String>,
        option_b: impl Into<String>,
        template_id: impl Into<String>,
    ) -> Result<Self> {
        let bundle = PromptBundle {
            query: query.into(),
            context: context.into(),
            option_a: option_a.into(),
            option_b: option_b.into(),
            template_id: template_id.into(),
        };
        if bundle.option_a.is_empty() || bundle.option_b.is_empty() {
            return Err(Error::InvalidInput("options must be non-empty".into()));
        }
        if bundle.option_a == bundle.option_b {
            return Err(Error::InvalidInput("options must be distinct".into()));
        }
        Ok(bundle)
    }
}

pub const TEMPLATE_BINARY_CONTEXT: &str = "binary-context";
pub const TEMPLATE_BINARY_CLOSED: &str = "binary-closed";

/// Named prompt templates with `{context}`, `{question}`, `{option_a}`,
/// `{option_b}` placeholders. Ships with binary-choice defaults; more can be
/// loaded from a directory of `.txt` files named after their template id.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: BTreeMap<String, String>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        let shipped = [
            (
                TEMPLATE_BINARY_CONTEXT,
                include_str!("../assets/templates/binary-context.txt"),
            ),
            (
                TEMPLATE_BINARY_CLOSED,
                include_str!("../assets/templates/binary-closed.txt"),
            ),
            (
                "perturb-minor",
                include_str!("../assets/templates/perturb-minor.txt"),
            ),
            (
                "perturb-major",
                include_str!("../assets/templates/perturb-major.txt"),
            ),
            (
                "context-short",
                include_str!("../assets/templates/context-short.txt"),
            ),
            (
                "context-long",
                include_str!("../assets/templates/context-long.txt"),
            ),
            (
                "explain-support",
                include_str!("../assets/templates/explain-support.txt"),
            ),
            (
                "explain-refute",
                include_str!("../assets/templates/explain-refute.txt"),
            ),
            (
                "relatedness",
                include_str!("../assets/templates/relatedness.txt"),
            ),
            (
                "sft-prompt",
                include_str!("../assets/templates/sft-prompt.txt"),
            ),
        ];
        let templates = shipped
            .into_iter()
            .map(|(id, text)| (id.to_string(), text.to_string()))
            .collect();
        TemplateSet { templates }
    }
}

impl TemplateSet {
    /// Defaults plus every `*.txt` in `dir` (file stem becomes the id,
    /// overriding any default with the same name).
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut set = TemplateSet::default();
        let entries = std::fs::read_dir(dir).map_err(|source| Error::Io {
            path: dir.display().to_string(),
            source,
        })?;
        for entry in entries {
            let entry = entry.map_err(|source| Error::Io {
                path: dir.display().to_string(),
                source,
            })?;
            let path = entry.path();
            if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            let text = std::fs::read_to_string(&path).map_err(|source| Error::Io {
                path: path.display().to_string(),
                source,
            })?;
            set.templates.insert(stem.to_string(), text);
        }
        Ok(set)
    }

    pub fn insert(&mut self, id: impl Into<String>, text: impl Into<String>) {
        self.templates.insert(id.into(), text.into());
    }

    pub fn get(&self, id: &str) -> Option<&str> {
        self.templates.get(id).map(String::as_str)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }

    /// Fill `{name}` placeholders from the variable map.
    pub fn render_vars(&self, id: &str, vars: &BTreeMap<&str, &str>) -> Result<String> {
        let template = self
            .get(id)
            .ok_or_else(|| Error::InvalidInput(format!("unknown template id {id:?}")))?;
        let mut text = template.to_string();
        for (name, value) in vars {
            text = text.replace(&format!("{{{name}}}"), value);
        }
        Ok(text)
    }
}

/// Fill the bundle's template. Same bundle, same text, every time.
pub fn render_prompt(bundle: &PromptBundle, templates: &TemplateSet) -> Result<String> {
    let template = templates.get(&bundle.template_id).ok_or_else(|| {
        Error::InvalidInput(format!("unknown template id {:?}", bundle.template_id))
    })?;
    Ok(template
        .replace("{context}", &bundle.context)
        .replace("{question}", &bundle.query)
        .replace("{option_a}", &bundle.option_a)
        .replace("{option_b}", &bundle.option_b))
}

/// The three distribution providers of a steered decode: the model being
/// steered plus the positive and negative proxies.
#[derive(Clone, Copy)]
pub struct SourceTriple<'a> {
    pub base: &'a dyn LogitSource,
    pub pos: &'a dyn LogitSource,
    pub neg: &'a dyn LogitSource,
}

impl<'a> SourceTriple<'a> {
    pub fn new(
        base: &'a dyn LogitSource,
        pos: &'a dyn LogitSource,
        neg: &'a dyn LogitSource,
    ) -> Self {
        SourceTriple { base, pos, neg }
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        self.base.vocabulary()
    }

    /// All three sources must share one vocabulary.
    pub fn check_compat(&self) -> Result<()> {
        check_vocab_compat(self.base.vocabulary(), self.pos.vocabulary())?;
        check_vocab_compat(self.base.vocabulary(), self.neg.vocabulary())
    }
}

/// Stop conditions for a generation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StopRule {
    pub max_tokens: usize,
    /// Generation ends after emitting any of these.
    pub stop_tokens: Vec<TokenId>,
}

impl StopRule {
    pub fn max(max_tokens: usize) -> Self {
        StopRule {
            max_tokens,
            stop_tokens: Vec::new(),
        }
    }
}

/// `(token id, value)` pair in a trace summary, highest value first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub id: TokenId,
    pub value: f64,
}

/// Top-j summaries of each per-step vector, recorded when tracing is on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub chosen: TokenId,
    pub base: Vec<TraceEntry>,
    pub pos: Vec<TraceEntry>,
    pub neg: Vec<TraceEntry>,
    pub combined: Vec<TraceEntry>,
}

/// A finished (or aborted-and-salvaged) generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub tokens: Vec<TokenId>,
    pub text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<StepTrace>>,
}

fn top_entries(values: &[f64], j: usize) -> Vec<TraceEntry> {
    let mut pairs: Vec<TraceEntry> = values
        .iter()
        .enumerate()
        .map(|(id, &value)| TraceEntry {
            id: id as TokenId,
            value,
        })
        .collect();
    pairs.sort_by(|a, b| b.value.partial_cmp(&a.value).unwrap().then(a.id.cmp(&b.id)));
    pairs.truncate(j);
    pairs
}

fn pair_entries(pairs: &[(TokenId, f64)], j: usize) -> Vec<TraceEntry> {
    let mut out: Vec<TraceEntry> = pairs
        .iter()
        .map(|&(id, value)| TraceEntry { id, value })
        .collect();
    out.sort_by(|a, b| b.value.partial_cmp(&a.value).unwrap().then(a.id.cmp(&b.id)));
    out.truncate(j);
    out
}

fn named<T>(result: Result<T>, name: &str) -> Result<T> {
    result.map_err(|e| Error::Backend {
        name: name.to_string(),
        source: Box::new(e),
    })
}

fn query_sources(
    sources: &SourceTriple<'_>,
    prefix: &[TokenId],
) -> Result<(StepOutput, StepOutput, StepOutput)> {
    // The three backends are queried concurrently and joined before combining;
    // a step fails if any backend fails.
    let (base, pos, neg) = exec::join3(
        || named(sources.base.next_step(prefix), "base"),
        || named(sources.pos.next_step(prefix), "pos"),
        || named(sources.neg.next_step(prefix), "neg"),
    );
    Ok((base?, pos?, neg?))
}

fn require_full(out: StepOutput, role: &str) -> Result<LogitVector> {
    match out {
        StepOutput::Full(v) => Ok(v),
        StepOutput::TopK(_) => Err(Error::InvalidInput(format!(
            "{role} source returned top-k output where a full vector is required"
        ))),
    }
}

fn base_topk(out: StepOutput, k: usize) -> Result<TopKLogProbs> {
    match out {
        StepOutput::TopK(t) => Ok(t),
        StepOutput::Full(v) => {
            let lp = log_softmax(&v)?;
            let mut pairs: Vec<(TokenId, f64)> = lp
                .values()
                .iter()
                .enumerate()
                .map(|(id, &x)| (id as TokenId, x))
                .collect();
            pairs.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            pairs.truncate(k);
            TopKLogProbs::new(pairs)
        }
    }
}

/// One steered step: query all three sources, combine, pick greedily.
pub fn steered_step(
    sources: &SourceTriple<'_>,
    cfg: &SteeringConfig,
    prefix: &[TokenId],
    trace_top: Option<usize>,
) -> Result<(TokenId, Option<StepTrace>)> {
    cfg.validate()?;
    let (base_out, pos_out, neg_out) = query_sources(sources, prefix)?;
    match cfg.mode {
        SteerMode::Full => {
            let base = require_full(base_out, "base")?;
            let pos = require_full(pos_out, "pos")?;
            let neg = require_full(neg_out, "neg")?;
            let combined = combine_with_floor(&base, &pos, &neg, cfg.alpha, cfg.logit_floor)?;
            let token = argmax_token(&combined)?;
            let trace = trace_top.map(|j| StepTrace {
                chosen: token,
                base: top_entries(base.values(), j),
                pos: top_entries(pos.values(), j),
                neg: top_entries(neg.values(), j),
                combined: top_entries(combined.values(), j),
            });
            Ok((token, trace))
        }
        SteerMode::TopK => {
            let base = base_topk(base_out, cfg.k)?;
            let pos = log_softmax(&require_full(pos_out, "pos")?)?;
            let neg = log_softmax(&require_full(neg_out, "neg")?)?;
            let probs = crate::logits::topk_reweight_with_floor(
                &base,
                &pos,
                &neg,
                cfg.alpha,
                cfg.logit_floor,
            )?;
            let mut best: Option<(TokenId, f64)> = None;
            for &(id, p) in &probs {
                let better = match best {
                    None => true,
                    Some((bid, bp)) => p > bp || (p == bp && id < bid),
                };
                if better {
                    best = Some((id, p));
                }
            }
            let (token, _) = best.ok_or(Error::DegenerateDistribution)?;
            let trace = trace_top.map(|j| {
                let candidate_values = |lp: &crate::logits::LogProbVector| {
                    base.entries()
                        .iter()
                        .filter_map(|&(id, _)| lp.get(id).map(|v| (id, v)))
                        .collect::<Vec<_>>()
                };
                StepTrace {
                    chosen: token,
                    base: pair_entries(base.entries(), j),
                    pos: pair_entries(&candidate_values(&pos), j),
                    neg: pair_entries(&candidate_values(&neg), j),
                    combined: pair_entries(&probs, j),
                }
            });
            Ok((token, trace))
        }
    }
}

/// Greedy decode from token ids until a stop token or the budget.
///
/// On a mid-generation failure the error carries the partial [`Generation`].
pub fn steered_generate_tokens(
    sources: &SourceTriple<'_>,
    cfg: &SteeringConfig,
    prompt: &[TokenId],
    stop: &StopRule,
    trace_top: Option<usize>,
) -> Result<Generation> {
    if stop.max_tokens < 1 {
        return Err(Error::InvalidInput("max_tokens must be at least 1".into()));
    }
    cfg.validate()?;
    sources.check_compat()?;

    let vocab = sources.vocabulary();
    let mut prefix = prompt.to_vec();
    let mut tokens = Vec::new();
    let mut traces = trace_top.map(|_| Vec::new());

    for _ in 0..stop.max_tokens {
        match steered_step(sources, cfg, &prefix, trace_top) {
            Ok((token, trace)) => {
                tokens.push(token);
                prefix.push(token);
                if let (Some(ts), Some(t)) = (traces.as_mut(), trace) {
                    ts.push(t);
                }
                if stop.stop_tokens.contains(&token) {
                    break;
                }
            }
            Err(e) => {
                let partial = Generation {
                    text: vocab.decode(&tokens)?,
                    tokens,
                    trace: traces,
                };
                return Err(Error::Generation {
                    partial: Box::new(partial),
                    source: Box::new(e),
                });
            }
        }
    }

    Ok(Generation {
        text: vocab.decode(&tokens)?,
        tokens,
        trace: traces,
    })
}

/// Render, encode, and decode a full bundle.
pub fn steered_generate(
    sources: &SourceTriple<'_>,
    cfg: &SteeringConfig,
    templates: &TemplateSet,
    bundle: &PromptBundle,
    stop: &StopRule,
    trace_top: Option<usize>,
) -> Result<Generation> {
    let prompt = render_prompt(bundle, templates)?;
    let prompt_tokens = sources.vocabulary().encode_text(&prompt)?;
    steered_generate_tokens(sources, cfg, &prompt_tokens, stop, trace_top)
}

/// Unsteered reference: greedy decode on the base source alone.
pub fn greedy_generate_tokens(
    base: &dyn LogitSource,
    prompt: &[TokenId],
    stop: &StopRule,
) -> Result<Generation> {
    if stop.max_tokens < 1 {
        return Err(Error::InvalidInput("max_tokens must be at least 1".into()));
    }
    let vocab = base.vocabulary();
    let mut prefix = prompt.to_vec();
    let mut tokens = Vec::new();
    for _ in 0..stop.max_tokens {
        let token = match base.next_step(&prefix)? {
            StepOutput::Full(v) => argmax_token(&v)?,
            StepOutput::TopK(t) => t.entries()[0].0,
        };
        tokens.push(token);
        prefix.push(token);
        if stop.stop_tokens.contains(&token) {
            break;
        }
    }
    Ok(Generation {
        text: vocab.decode(&tokens)?,
        tokens,
        trace: None,
    })
}

/// Summed steered log-probability of `option_tokens` continuing `prompt`.
///
/// In top-k mode an option token outside the candidate set scores `-inf`.
pub fn score_option(
    sources: &SourceTriple<'_>,
    cfg: &SteeringConfig,
    prompt: &[TokenId],
    option_tokens: &[TokenId],
) -> Result<f64> {
    if option_tokens.is_empty() {
        return Err(Error::InvalidInput("option has no tokens".into()));
    }
    cfg.validate()?;
    let mut prefix = prompt.to_vec();
    let mut total = 0.0f64;
    for &token in option_tokens {
        let (base_out, pos_out, neg_out) = query_sources(sources, &prefix)?;
        let step_lp = match cfg.mode {
            SteerMode::Full => {
                let base = require_full(base_out, "base")?;
                let pos = require_full(pos_out, "pos")?;
                let neg = require_full(neg_out, "neg")?;
                let combined = combine_with_floor(&base, &pos, &neg, cfg.alpha, cfg.logit_floor)?;
                log_softmax(&combined)?.get(token).ok_or_else(|| {
                    Error::InvalidInput(format!("option token {token} out of vocabulary"))
                })?
            }
            SteerMode::TopK => {
                let base = base_topk(base_out, cfg.k)?;
                let pos = log_softmax(&require_full(pos_out, "pos")?)?;
                let neg = log_softmax(&require_full(neg_out, "neg")?)?;
                let probs = crate::logits::topk_reweight_with_floor(
                    &base,
                    &pos,
                    &neg,
                    cfg.alpha,
                    cfg.logit_floor,
                )?;
                probs
                    .iter()
                    .find(|(id, _)| *id == token)
                    .map(|&(_, p)| p.ln())
                    .unwrap_or(f64::NEG_INFINITY)
            }
        };
        total += step_lp;
        if total == f64::NEG_INFINITY {
            return Ok(total);
        }
        prefix.push(token);
    }
    Ok(total)
}

/// Which lettered option an evaluation chose.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChoiceLabel {
    A,
    B,
}

impl std::fmt::Display for ChoiceLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ChoiceLabel::A => write!(f, "A"),
            ChoiceLabel::B => write!(f, "B"),
        }
    }
}

/// How a binary choice is extracted from the steered model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoringMode {
    /// Generate text and take the first option-label token.
    Generate,
    /// Score both options' token sequences and take the higher sum.
    OptionScore,
}

/// First generated token that reads as an option label, if any.
///
/// A label token is `A` or `B`, optionally carrying one trailing
/// `.`, `:`, `)` or `,`.
pub fn extract_choice_label(vocab: &Vocabulary, generation: &Generation) -> Option<ChoiceLabel> {
    for &id in &generation.tokens {
        let tok = vocab.token(id)?;
        let trimmed = tok.trim_end_matches(['.', ':', ')', ',']);
        match trimmed {
            "A" => return Some(ChoiceLabel::A),
            "B" => return Some(ChoiceLabel::B),
            _ => {}
        }
    }
    None
}

/// Answer a rendered binary-choice bundle.
///
/// `id` only labels errors. Option-score ties resolve to `A`.
pub fn answer_bundle(
    sources: &SourceTriple<'_>,
    cfg: &SteeringConfig,
    templates: &TemplateSet,
    bundle: &PromptBundle,
    scoring: ScoringMode,
    max_tokens: usize,
    id: &str,
) -> Result<ChoiceLabel> {
    sources.check_compat()?;
    match scoring {
        ScoringMode::Generate => {
            let generation = steered_generate(
                sources,
                cfg,
                templates,
                bundle,
                &StopRule::max(max_tokens),
                None,
            )?;
            extract_choice_label(sources.vocabulary(), &generation).ok_or_else(|| {
                Error::UnparseableAnswer {
                    item_id: id.to_string(),
                }
            })
        }
        ScoringMode::OptionScore => {
            let prompt = render_prompt(bundle, templates)?;
            let vocab = sources.vocabulary();
            let prompt_tokens = vocab.encode_text(&prompt)?;
            let a_tokens = vocab.encode_text(&bundle.option_a)?;
            let b_tokens = vocab.encode_text(&bundle.option_b)?;
            let score_a = score_option(sources, cfg, &prompt_tokens, &a_tokens)?;
            let score_b = score_option(sources, cfg, &prompt_tokens, &b_tokens)?;
            if score_b > score_a {
                Ok(ChoiceLabel::B)
            } else {
                Ok(ChoiceLabel::A)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sources::TableLm;

    fn vocab4() -> Vocabulary {
        Vocabulary::new(["t0", "t1", "t2", "t3"]).unwrap()
    }

    fn order0(vocab: &Vocabulary, logits: &[f64]) -> TableLm {
        TableLm::new(
            vocab.clone(),
            0,
            vec![],
            LogitVector::new(logits.to_vec()).unwrap(),
        )
        .unwrap()
    }

    fn worked_triple() -> (TableLm, TableLm, TableLm) {
        let v = vocab4();
        (
            order0(&v, &[2.0, 1.0, 0.0, -1.0]),
            order0(&v, &[0.0, 3.0, 0.0, 0.0]),
            order0(&v, &[0.0, 1.0, 0.0, 0.0]),
        )
    }

    fn cfg(alpha: f64) -> SteeringConfig {
        SteeringConfig {
            alpha,
            ..SteeringConfig::default()
        }
    }

    #[test]
    fn render_is_deterministic_and_places_options_once() {
        let templates = TemplateSet::default();
        let bundle = PromptBundle::new(
            "what color",
            "the sky is green",
            "green",
            "blue",
            TEMPLATE_BINARY_CONTEXT,
        )
        .unwrap();
        let a = render_prompt(&bundle, &templates).unwrap();
        let b = render_prompt(&bundle, &templates).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.matches("blue").count(), 1);
        assert!(a.contains("A. green"));
        assert!(a.contains("B. blue"));
    }

    #[test]
    fn closed_template_has_no_context_header() {
        let templates = TemplateSet::default();
        let bundle = PromptBundle::new("q", "", "x", "y", TEMPLATE_BINARY_CLOSED).unwrap();
        let text = render_prompt(&bundle, &templates).unwrap();
        assert!(!text.contains("Context:"));
    }

    #[test]
    fn unknown_template_id_errors() {
        let templates = TemplateSet::default();
        let bundle = PromptBundle::new("q", "", "x", "y", "missing").unwrap();
        assert!(render_prompt(&bundle, &templates).is_err());
    }

    #[test]
    fn bundle_rejects_equal_or_empty_options() {
        assert!(PromptBundle::new("q", "", "x", "x", "t").is_err());
        assert!(PromptBundle::new("q", "", "", "y", "t").is_err());
    }

    #[test]
    fn step_alpha_zero_matches_base_greedy() {
        let (base, pos, neg) = worked_triple();
        let sources = SourceTriple::new(&base, &pos, &neg);
        let (token, _) = steered_step(&sources, &cfg(0.0), &[], None).unwrap();
        assert_eq!(token, 0);
    }

    #[test]
    fn step_worked_example_at_alpha_one() {
        let (base, pos, neg) = worked_triple();
        let sources = SourceTriple::new(&base, &pos, &neg);
        let (token, _) = steered_step(&sources, &cfg(1.0), &[], None).unwrap();
        assert_eq!(token, 1);
    }

    #[test]
    fn step_same_source_as_both_proxies_cancels() {
        let (base, pos, _) = worked_triple();
        let sources = SourceTriple::new(&base, &pos, &pos);
        for alpha in [-5.0, 0.3, 2.0] {
            let (token, _) = steered_step(&sources, &cfg(alpha), &[], None).unwrap();
            assert_eq!(token, 0);
        }
    }

    #[test]
    fn generate_respects_max_tokens_and_stop() {
        let (base, pos, neg) = worked_triple();
        let sources = SourceTriple::new(&base, &pos, &neg);
        let one =
            steered_generate_tokens(&sources, &cfg(1.0), &[], &StopRule::max(1), None).unwrap();
        assert_eq!(one.tokens.len(), 1);

        // Token 1 is the first prediction at alpha=1; stopping on it ends the
        // generation at length 1.
        let stop = StopRule {
            max_tokens: 8,
            stop_tokens: vec![1],
        };
        let gen = steered_generate_tokens(&sources, &cfg(1.0), &[], &stop, None).unwrap();
        assert_eq!(gen.tokens, vec![1]);
        assert_eq!(gen.text, "t1");
    }

    #[test]
    fn generate_zero_budget_is_input_error() {
        let (base, pos, neg) = worked_triple();
        let sources = SourceTriple::new(&base, &pos, &neg);
        assert!(
            steered_generate_tokens(&sources, &cfg(1.0), &[], &StopRule::max(0), None).is_err()
        );
    }

    #[test]
    fn trace_records_every_token() {
        let (base, pos, neg) = worked_triple();
        let sources = SourceTriple::new(&base, &pos, &neg);
        let gen =
            steered_generate_tokens(&sources, &cfg(1.0), &[], &StopRule::max(4), Some(3)).unwrap();
        let trace = gen.trace.as_ref().unwrap();
        assert_eq!(trace.len(), gen.tokens.len());
        for (step, tok) in trace.iter().zip(&gen.tokens) {
            assert_eq!(step.chosen, *tok);
            assert_eq!(step.combined.len(), 3);
        }
    }

    #[test]
    fn incompatible_proxies_rejected() {
        let (base, pos, _) = worked_triple();
        let other = order0(&Vocabulary::new(["x", "y"]).unwrap(), &[0.0, 0.0]);
        let sources = SourceTriple::new(&base, &pos, &other);
        assert!(matches!(
            steered_generate_tokens(&sources, &cfg(1.0), &[], &StopRule::max(2), None),
            Err(Error::VocabIncompatible { .. })
        ));
    }

    #[test]
    fn topk_mode_restricts_to_base_candidates() {
        let (base, pos, neg) = worked_triple();
        let sources = SourceTriple::new(&base, &pos, &neg);
        let mut config = cfg(1.0);
        config.mode = SteerMode::TopK;
        config.k = 2;
        // Candidates are ids 0 and 1; at alpha=1 token 1 wins as in full mode.
        let (token, trace) = steered_step(&sources, &config, &[], Some(2)).unwrap();
        assert_eq!(token, 1);
        let trace = trace.unwrap();
        assert_eq!(trace.base.len(), 2);
    }

    #[test]
    fn extract_label_handles_punctuation() {
        let vocab = Vocabulary::new(["B.", "x"]).unwrap();
        let gen = Generation {
            tokens: vec![1, 0],
            text: "x B.".into(),
            trace: None,
        };
        assert_eq!(extract_choice_label(&vocab, &gen), Some(ChoiceLabel::B));
    }

    #[test]
    fn option_score_swap_antisymmetry() {
        // Vocabulary covering the closed template scaffold plus two options.
        let vocab =
            Vocabulary::new(["Question:", "q", "A.", "B.", "Answer:", "left", "right"]).unwrap();
        let base = order0(&vocab, &[0.0, 0.0, 0.0, 0.0, 0.0, 0.4, 0.0]);
        let pos = order0(&vocab, &[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let neg = order0(&vocab, &[0.0; 7]);
        let sources = SourceTriple::new(&base, &pos, &neg);
        let templates = TemplateSet::default();

        let forward = PromptBundle::new("q", "", "left", "right", TEMPLATE_BINARY_CLOSED).unwrap();
        let swapped = PromptBundle::new("q", "", "right", "left", TEMPLATE_BINARY_CLOSED).unwrap();
        for alpha in [-2.0, 0.0, 1.5] {
            let f = answer_bundle(
                &sources,
                &cfg(alpha),
                &templates,
                &forward,
                ScoringMode::OptionScore,
                4,
                "t",
            )
            .unwrap();
            let s = answer_bundle(
                &sources,
                &cfg(alpha),
                &templates,
                &swapped,
                ScoringMode::OptionScore,
                4,
                "t",
            )
            .unwrap();
            assert_ne!(f, s, "label must follow content, not position");
        }
    }

    #[test]
    fn generate_mode_reads_hardwired_label() {
        let vocab = Vocabulary::new(["Question:", "q", "A.", "B.", "Answer:", "x", "y"]).unwrap();
        // Base strongly prefers emitting the "A." token.
        let base = order0(&vocab, &[0.0, 0.0, 9.0, 0.0, 0.0, 0.0, 0.0]);
        let uniform = order0(&vocab, &[0.0; 7]);
        let sources = SourceTriple::new(&base, &uniform, &uniform);
        let bundle = PromptBundle::new("q", "", "x", "y", TEMPLATE_BINARY_CLOSED).unwrap();
        let label = answer_bundle(
            &sources,
            &cfg(0.0),
            &TemplateSet::default(),
            &bundle,
            ScoringMode::Generate,
            4,
            "t",
        )
        .unwrap();
        assert_eq!(label, ChoiceLabel::A);
    }

    #[test]
    fn generate_mode_unparseable_when_no_label() {
        let vocab = Vocabulary::new(["Question:", "q", "A.", "B.", "Answer:", "x", "y"]).unwrap();
        let base = order0(&vocab, &[0.0, 0.0, 0.0, 0.0, 0.0, 9.0, 0.0]);
        let uniform = order0(&vocab, &[0.0; 7]);
        let sources = SourceTriple::new(&base, &uniform, &uniform);
        let bundle = PromptBundle::new("q", "", "x", "y", TEMPLATE_BINARY_CLOSED).unwrap();
        let err = answer_bundle(
            &sources,
            &cfg(0.0),
            &TemplateSet::default(),
            &bundle,
            ScoringMode::Generate,
            3,
            "item-9",
        )
        .unwrap_err();
        assert!(matches!(err, Error::UnparseableAnswer { item_id } if item_id == "item-9"));
    }
}
