//! Proxy fine-tune file construction.
//!
//! From multiple-choice QA items, the positive side pairs each question with
//! the distractor least related to the gold answer, a short supporting
//! context, and an explanation backing that contextual answer; the negative
//! side uses the most related distractor, a long detailed context, and
//! targets the original correct answer with a refuting explanation.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::clients::lexical_relatedness;
use crate::dataset::{generate_context, GenerationClient};
use crate::decode::TemplateSet;
use crate::error::{Error, Result};

/// Multiple-choice QA input: gold answer plus wrong options.
///
/// JSON-Lines fields: `id, question, answer, distractors`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceQA {
    pub id: String,
    pub question: String,
    pub answer: String,
    pub distractors: Vec<String>,
}

impl ChoiceQA {
    pub fn validate(&self) -> Result<()> {
        if self.answer.trim().is_empty() {
            return Err(Error::InvalidInput(format!(
                "item {}: answer must be non-empty",
                self.id
            )));
        }
        if self.distractors.is_empty() {
            return Err(Error::InvalidInput(format!(
                "item {}: at least one distractor required",
                self.id
            )));
        }
        Ok(())
    }
}

/// Which proxy a record trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

/// One fine-tune sample: `{polarity, prompt, target}` in JSON Lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftRecord {
    pub polarity: Polarity,
    pub prompt: String,
    pub target: String,
}

/// How related a candidate answer is to the gold one; higher is closer.
pub trait RelatednessScorer: Send + Sync {
    fn score(&self, gold: &str, candidate: &str) -> Result<f64>;
}

/// Deterministic offline scorer based on character-bigram overlap.
#[derive(Debug, Default, Clone)]
pub struct LexicalScorer;

impl RelatednessScorer for LexicalScorer {
    fn score(&self, gold: &str, candidate: &str) -> Result<f64> {
        Ok(lexical_relatedness(gold, candidate))
    }
}

/// Scorer that asks a generation client to rate relatedness 0-100.
pub struct LlmScorer<'c> {
    client: &'c dyn GenerationClient,
}

impl<'c> LlmScorer<'c> {
    pub fn new(client: &'c dyn GenerationClient) -> Self {
        LlmScorer { client }
    }
}

impl RelatednessScorer for LlmScorer<'_> {
    fn score(&self, gold: &str, candidate: &str) -> Result<f64> {
        let vars = BTreeMap::from([("first", gold), ("second", candidate)]);
        let text = self.client.generate("relatedness", &vars)?;
        let digits: String = text
            .chars()
            .skip_while(|c| !c.is_ascii_digit())
            .take_while(|c| c.is_ascii_digit() || *c == '.')
            .collect();
        digits
            .parse::<f64>()
            .map(|v| v / 100.0)
            .map_err(|_| Error::Client(format!("unparseable relatedness reply {text:?}")))
    }
}

#[derive(Debug, Clone)]
pub struct SftOptions {
    /// Cap on emitted records; `None` keeps everything buildable.
    pub size: Option<usize>,
    pub max_retries: u32,
}

impl Default for SftOptions {
    fn default() -> Self {
        SftOptions {
            size: None,
            max_retries: 3,
        }
    }
}

fn pick_distractor(
    item: &ChoiceQA,
    polarity: Polarity,
    scorer: &dyn RelatednessScorer,
) -> Result<String> {
    let mut best: Option<(usize, f64)> = None;
    for (idx, candidate) in item.distractors.iter().enumerate() {
        let score = scorer.score(&item.answer, candidate)?;
        let better = match (polarity, best) {
            (_, None) => true,
            // Least related for the positive proxy, most related for the negative.
            (Polarity::Positive, Some((_, s))) => score < s,
            (Polarity::Negative, Some((_, s))) => score > s,
        };
        if better {
            best = Some((idx, score));
        }
    }
    let (idx, _) = best
        .ok_or_else(|| Error::InvalidInput(format!("item {}: no distractors to score", item.id)))?;
    Ok(item.distractors[idx].clone())
}

fn build_one(
    item: &ChoiceQA,
    polarity: Polarity,
    client: &dyn GenerationClient,
    scorer: &dyn RelatednessScorer,
    templates: &TemplateSet,
    opts: &SftOptions,
) -> Result<SftRecord> {
    item.validate()?;
    let contextual_answer = pick_distractor(item, polarity, scorer)?;
    let detail_rank = match polarity {
        Polarity::Positive => 1,
        Polarity::Negative => 2,
    };
    let context = generate_context(
        &item.question,
        &contextual_answer,
        detail_rank,
        client,
        opts.max_retries,
        &item.id,
    )?;

    let (target_answer, explain_template) = match polarity {
        Polarity::Positive => (contextual_answer.as_str(), "explain-support"),
        Polarity::Negative => (item.answer.as_str(), "explain-refute"),
    };
    let vars = BTreeMap::from([
        ("context", context.text.as_str()),
        ("question", item.question.as_str()),
        ("answer", target_answer),
    ]);
    let explanation = client.generate(explain_template, &vars)?;

    let prompt_vars = BTreeMap::from([
        ("context", context.text.as_str()),
        ("question", item.question.as_str()),
    ]);
    let prompt = templates.render_vars("sft-prompt", &prompt_vars)?;

    Ok(SftRecord {
        polarity,
        prompt,
        target: format!("{target_answer}. {}", explanation.trim()),
    })
}

/// Build fine-tune records of one polarity. Items that fail scoring or
/// generation are skipped with a log line; output order matches input.
pub fn build_proxy_sft(
    items: &[ChoiceQA],
    polarity: Polarity,
    client: &dyn GenerationClient,
    scorer: &dyn RelatednessScorer,
    opts: &SftOptions,
) -> Result<Vec<SftRecord>> {
    let templates = TemplateSet::default();
    let mut records = Vec::new();
    for item in items {
        if let Some(limit) = opts.size {
            if records.len() >= limit {
                break;
            }
        }
        match build_one(item, polarity, client, scorer, &templates, opts) {
            Ok(record) => records.push(record),
            Err(e) => log::warn!("sft item {} skipped: {e}", item.id),
        }
    }
    Ok(records)
}

/// Parse choice QA items from JSON Lines.
pub fn load_choice_qa(path: impl AsRef<Path>) -> Result<Vec<ChoiceQA>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut items = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let item: ChoiceQA = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: lineno + 1,
            message: e.to_string(),
        })?;
        item.validate().map_err(|e| Error::Schema {
            path: path.display().to_string(),
            message: format!("line {}: {e}", lineno + 1),
        })?;
        items.push(item);
    }
    Ok(items)
}

/// Write records as JSON Lines.
pub fn write_sft_records(path: impl AsRef<Path>, records: &[SftRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for record in records {
        out.push_str(&serde_json::to_string(record).expect("sft record serializes"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::StubGenerationClient;

    struct FixedScorer;

    impl RelatednessScorer for FixedScorer {
        fn score(&self, _gold: &str, candidate: &str) -> Result<f64> {
            // Fixed ranking: "near" is most related, "far" least.
            Ok(match candidate {
                "near" => 0.9,
                "mid" => 0.5,
                "far" => 0.1,
                _ => 0.0,
            })
        }
    }

    fn item() -> ChoiceQA {
        ChoiceQA {
            id: "c1".into(),
            question: "which one".into(),
            answer: "gold".into(),
            distractors: vec!["near".into(), "mid".into(), "far".into()],
        }
    }

    #[test]
    fn positive_picks_least_related_and_supports_it() {
        let stub = StubGenerationClient::new();
        let records = build_proxy_sft(
            &[item()],
            Polarity::Positive,
            &stub,
            &FixedScorer,
            &SftOptions::default(),
        )
        .unwrap();
        assert_eq!(records.len(), 1);
        let record = &records[0];
        assert_eq!(record.polarity, Polarity::Positive);
        assert!(record.target.starts_with("far."));
        assert!(record.target.contains("The context directly states far"));
        assert!(record.prompt.contains("far is the answer"));
        assert!(record.prompt.contains("which one"));
    }

    #[test]
    fn negative_picks_most_related_and_targets_gold() {
        let stub = StubGenerationClient::new();
        let records = build_proxy_sft(
            &[item()],
            Polarity::Negative,
            &stub,
            &FixedScorer,
            &SftOptions::default(),
        )
        .unwrap();
        let record = &records[0];
        assert_eq!(record.polarity, Polarity::Negative);
        assert!(record.target.starts_with("gold."));
        assert!(record.target.contains("correct answer remains gold"));
        // Long context for the negative proxy mentions the chosen distractor.
        assert!(record.prompt.contains("near"));
    }

    #[test]
    fn size_cap_limits_output() {
        let items: Vec<ChoiceQA> = (0..5)
            .map(|i| ChoiceQA {
                id: format!("c{i}"),
                ..item()
            })
            .collect();
        let stub = StubGenerationClient::new();
        let opts = SftOptions {
            size: Some(3),
            ..SftOptions::default()
        };
        let records =
            build_proxy_sft(&items, Polarity::Positive, &stub, &FixedScorer, &opts).unwrap();
        assert_eq!(records.len(), 3);
    }

    #[test]
    fn scorer_failure_skips_item() {
        struct Flaky;
        impl RelatednessScorer for Flaky {
            fn score(&self, _gold: &str, candidate: &str) -> Result<f64> {
                if candidate == "near" {
                    Err(Error::Client("scorer down".into()))
                } else {
                    Ok(0.5)
                }
            }
        }
        let stub = StubGenerationClient::new();
        let records = build_proxy_sft(
            &[item()],
            Polarity::Positive,
            &stub,
            &Flaky,
            &SftOptions::default(),
        )
        .unwrap();
        assert!(records.is_empty());
    }

    #[test]
    fn llm_scorer_parses_stub_number() {
        let stub = StubGenerationClient::new();
        let scorer = LlmScorer::new(&stub);
        let same = scorer.score("red wine", "red vine").unwrap();
        let diff = scorer.score("red wine", "quantum").unwrap();
        assert!(same > diff);
    }

    #[test]
    fn jsonl_round_trip() {
        let records = vec![SftRecord {
            polarity: Polarity::Negative,
            prompt: "p".into(),
            target: "t".into(),
        }];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sft.jsonl");
        write_sft_records(&path, &records).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text.trim(),
            "{\"polarity\":\"negative\",\"prompt\":\"p\",\"target\":\"t\"}"
        );
    }
}
