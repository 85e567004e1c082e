//! The conflict-construction pipeline: filter to confidently-known answers,
//! perturb them, generate supporting context, bin popularity, and assemble
//! validated conflict items with per-item provenance.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{popularity_rank, FrequencyClient, GenerationClient, SourceQA};
use crate::error::{Error, Result};
use crate::eval::ConflictItem;
use crate::exec;
use crate::util::fnv1a64;

/// Character cap enforced on rank-1 (single sentence) contexts.
pub const SINGLE_SENTENCE_MAX_CHARS: usize = 300;

const DEFAULT_MAX_RETRIES: u32 = 3;

/// Case-, whitespace- and leading-article-insensitive exact match.
pub fn default_answer_matcher(a: &str, b: &str) -> bool {
    fn normalize(s: &str) -> String {
        let lowered = s.to_lowercase();
        let mut words: Vec<&str> = lowered.split_whitespace().collect();
        if matches!(words.first(), Some(&"a") | Some(&"an") | Some(&"the")) {
            words.remove(0);
        }
        words.join(" ")
    }
    normalize(a) == normalize(b)
}

/// Keep items whose closed-book answer matches gold.
///
/// `answerer` failures skip the item (logged), they do not abort the run.
pub fn closed_book_filter<F, M>(items: &[SourceQA], answerer: F, matcher: M) -> Vec<SourceQA>
where
    F: Fn(&SourceQA) -> Result<String>,
    M: Fn(&str, &str) -> bool,
{
    let mut retained = Vec::new();
    for item in items {
        match answerer(item) {
            Ok(answer) => {
                if matcher(&answer, &item.answer) {
                    retained.push(item.clone());
                }
            }
            Err(e) => {
                log::warn!(
                    "closed-book answerer failed on {}: {e}; item skipped",
                    item.id
                );
            }
        }
    }
    retained
}

/// A perturbed answer plus how it was obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub text: String,
    pub template_id: String,
    pub attempts: u32,
}

fn perturb_template(rank: u8) -> Result<&'static str> {
    match rank {
        1 => Ok("perturb-minor"),
        2 => Ok("perturb-major"),
        other => Err(Error::InvalidInput(format!(
            "perturbation rank must be 1 or 2, got {other}"
        ))),
    }
}

/// Ask the client for a perturbed answer that differs from gold, retrying up
/// to `max_retries` times before giving up on the item.
pub fn perturb_answer(
    item: &SourceQA,
    rank: u8,
    client: &dyn GenerationClient,
    max_retries: u32,
) -> Result<Perturbation> {
    let template_id = perturb_template(rank)?;
    let vars = BTreeMap::from([
        ("question", item.question.as_str()),
        ("answer", item.answer.as_str()),
    ]);
    let attempts = max_retries.max(1);
    for attempt in 1..=attempts {
        let text = match client.generate(template_id, &vars) {
            Ok(t) => t.trim().to_string(),
            Err(e) => {
                log::warn!(
                    "perturbation client failed on {} (attempt {attempt}): {e}",
                    item.id
                );
                return Err(Error::Perturbation {
                    item_id: item.id.clone(),
                    attempts: attempt,
                });
            }
        };
        if !text.is_empty() && !default_answer_matcher(&text, &item.answer) {
            return Ok(Perturbation {
                text,
                template_id: template_id.to_string(),
                attempts: attempt,
            });
        }
    }
    Err(Error::Perturbation {
        item_id: item.id.clone(),
        attempts,
    })
}

/// A generated supporting context plus how it was obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedContext {
    pub text: String,
    pub template_id: String,
    pub attempts: u32,
}

fn context_template(rank: u8) -> Result<&'static str> {
    match rank {
        1 => Ok("context-short"),
        2 => Ok("context-long"),
        other => Err(Error::InvalidInput(format!(
            "context rank must be 1 or 2, got {other}"
        ))),
    }
}

/// Mechanical single-sentence gate: one line, capped length, exactly one
/// terminal punctuation mark sitting at the end.
fn is_single_sentence(text: &str) -> bool {
    let text = text.trim();
    if text.is_empty() || text.len() > SINGLE_SENTENCE_MAX_CHARS || text.contains('\n') {
        return false;
    }
    let terminals = text
        .chars()
        .filter(|c| matches!(c, '.' | '!' | '?'))
        .count();
    terminals == 1 && text.ends_with(['.', '!', '?'])
}

fn contains_answer(context: &str, answer: &str) -> bool {
    context.to_lowercase().contains(&answer.to_lowercase())
}

/// Generate a context supporting the perturbed answer at the given detail
/// rank. Rank 1 must pass the single-sentence gate; both ranks must contain
/// the answer string. Failed gates are retried.
pub fn generate_context(
    question: &str,
    perturbed: &str,
    rank: u8,
    client: &dyn GenerationClient,
    max_retries: u32,
    id: &str,
) -> Result<GeneratedContext> {
    let template_id = context_template(rank)?;
    let vars = BTreeMap::from([("question", question), ("answer", perturbed)]);
    let attempts = max_retries.max(1);
    for attempt in 1..=attempts {
        let text = match client.generate(template_id, &vars) {
            Ok(t) => t.trim().to_string(),
            Err(e) => {
                log::warn!("context client failed on {id} (attempt {attempt}): {e}");
                return Err(Error::ContextGeneration {
                    item_id: id.to_string(),
                    attempts: attempt,
                });
            }
        };
        let shape_ok = match rank {
            1 => is_single_sentence(&text),
            _ => !text.is_empty(),
        };
        if shape_ok && contains_answer(&text, perturbed) {
            return Ok(GeneratedContext {
                text,
                template_id: template_id.to_string(),
                attempts: attempt,
            });
        }
    }
    Err(Error::ContextGeneration {
        item_id: id.to_string(),
        attempts,
    })
}

/// Which lettered slot the context-supported option landed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptionASide {
    Context,
    Parametric,
}

/// Build sidecar: everything needed to audit or replay one item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemProvenance {
    pub item_id: String,
    pub source_id: String,
    pub perturb_template: String,
    pub perturb_attempts: u32,
    pub context_template: String,
    pub context_attempts: u32,
    /// Seeded-shuffle outcome for presentation.
    pub option_a: OptionASide,
    pub seed: u64,
}

/// Assemble one validated conflict item; the A/B side is drawn from `rng`.
/// `ranks` is the (perturbation, detail) pair; popularity comes from `freq`.
pub fn assemble_conflict_item(
    source: &SourceQA,
    item_id: &str,
    perturbed: &str,
    context: &str,
    ranks: (u8, u8),
    freq: u64,
    rng: &mut impl Rng,
) -> Result<(ConflictItem, OptionASide)> {
    let (r_pert, r_det) = ranks;
    if default_answer_matcher(perturbed, &source.answer) {
        return Err(Error::Assembly(format!(
            "item {}: perturbed answer equals gold answer {:?}",
            source.id, source.answer
        )));
    }
    if !contains_answer(context, perturbed) {
        return Err(Error::Assembly(format!(
            "item {}: context does not contain the perturbed answer {perturbed:?}",
            source.id
        )));
    }
    let option_a = if rng.random_bool(0.5) {
        OptionASide::Context
    } else {
        OptionASide::Parametric
    };
    let item = ConflictItem {
        id: item_id.to_string(),
        question: source.question.clone(),
        context: context.to_string(),
        option_context: perturbed.to_string(),
        option_parametric: source.answer.clone(),
        r_pert,
        r_det,
        r_pop: popularity_rank(freq),
        subject: source.subject.clone(),
        relation: source.relation.clone(),
        object: source.object.clone(),
        subject_freq: Some(freq),
    };
    item.validate()
        .map_err(|e| Error::Assembly(e.to_string()))?;
    Ok((item, option_a))
}

/// How (perturbation, detail) rank pairs are assigned to source items.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankPlan {
    /// Every source item yields all four rank combinations.
    Cross,
    /// One combination per item, cycling through the four in input order.
    Cycle,
}

const RANK_COMBOS: [(u8, u8); 4] = [(1, 1), (1, 2), (2, 1), (2, 2)];

#[derive(Debug, Clone)]
pub struct BuildOptions {
    pub seed: u64,
    pub rank_plan: RankPlan,
    pub max_retries: u32,
    /// Cap on concurrent client calls; `None` uses the default pool.
    pub max_in_flight: Option<usize>,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            seed: 0,
            rank_plan: RankPlan::Cross,
            max_retries: DEFAULT_MAX_RETRIES,
            max_in_flight: None,
        }
    }
}

/// Built items (input order), their provenance, and per-item skips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildOutput {
    pub items: Vec<ConflictItem>,
    pub provenance: Vec<ItemProvenance>,
    pub skipped: Vec<(String, String)>,
}

fn build_one(
    source: &SourceQA,
    item_id: &str,
    r_pert: u8,
    r_det: u8,
    gen_client: &dyn GenerationClient,
    freq_client: &dyn FrequencyClient,
    opts: &BuildOptions,
) -> Result<(ConflictItem, ItemProvenance)> {
    source.validate()?;
    let freq = freq_client.count(&source.subject)?;
    let perturbation = perturb_answer(source, r_pert, gen_client, opts.max_retries)?;
    let context = generate_context(
        &source.question,
        &perturbation.text,
        r_det,
        gen_client,
        opts.max_retries,
        item_id,
    )?;
    // Per-item rng keyed by id so output is independent of scheduling.
    let item_seed = opts.seed ^ fnv1a64(item_id.as_bytes());
    let mut rng = ChaCha8Rng::seed_from_u64(item_seed);
    let (item, option_a) = assemble_conflict_item(
        source,
        item_id,
        &perturbation.text,
        &context.text,
        (r_pert, r_det),
        freq,
        &mut rng,
    )?;
    let provenance = ItemProvenance {
        item_id: item_id.to_string(),
        source_id: source.id.clone(),
        perturb_template: perturbation.template_id,
        perturb_attempts: perturbation.attempts,
        context_template: context.template_id,
        context_attempts: context.attempts,
        option_a,
        seed: item_seed,
    };
    Ok((item, provenance))
}

/// Run the full pipeline over already-filtered source items.
///
/// Item failures are recorded in `skipped` and do not abort the build.
/// Output order equals input order regardless of scheduling.
pub fn build_conflict_dataset(
    sources: &[SourceQA],
    gen_client: &dyn GenerationClient,
    freq_client: &dyn FrequencyClient,
    opts: &BuildOptions,
) -> Result<BuildOutput> {
    let mut plan: Vec<(usize, String, u8, u8)> = Vec::new();
    match opts.rank_plan {
        RankPlan::Cross => {
            for (idx, source) in sources.iter().enumerate() {
                for (r_pert, r_det) in RANK_COMBOS {
                    plan.push((
                        idx,
                        format!("{}-p{r_pert}d{r_det}", source.id),
                        r_pert,
                        r_det,
                    ));
                }
            }
        }
        RankPlan::Cycle => {
            for (idx, source) in sources.iter().enumerate() {
                let (r_pert, r_det) = RANK_COMBOS[idx % RANK_COMBOS.len()];
                plan.push((idx, source.id.clone(), r_pert, r_det));
            }
        }
    }

    let run = || {
        exec::map_items(&plan, |(idx, item_id, r_pert, r_det)| {
            build_one(
                &sources[*idx],
                item_id,
                *r_pert,
                *r_det,
                gen_client,
                freq_client,
                opts,
            )
            .map_err(|e| (item_id.clone(), e.to_string()))
        })
    };

    #[cfg(feature = "parallel")]
    let built = match opts.max_in_flight {
        Some(cap) => rayon::ThreadPoolBuilder::new()
            .num_threads(cap.max(1))
            .build()
            .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    };
    #[cfg(not(feature = "parallel"))]
    let built = run();

    let mut output = BuildOutput {
        items: Vec::new(),
        provenance: Vec::new(),
        skipped: Vec::new(),
    };
    for result in built {
        match result {
            Ok((item, provenance)) => {
                output.items.push(item);
                output.provenance.push(provenance);
            }
            Err((id, reason)) => {
                log::warn!("item {id} skipped: {reason}");
                output.skipped.push((id, reason));
            }
        }
    }
    Ok(output)
}

/// Parse source QA pairs from JSON Lines.
pub fn load_source_qa(path: impl AsRef<Path>) -> Result<Vec<SourceQA>> {
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
        let item: SourceQA = serde_json::from_str(line).map_err(|e| Error::Parse {
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

/// Write the provenance sidecar as JSON Lines next to the dataset.
pub fn write_provenance(path: impl AsRef<Path>, records: &[ItemProvenance]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for record in records {
        out.push_str(&serde_json::to_string(record).expect("provenance serializes"));
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
    use crate::dataset::{StubFrequencyClient, StubGenerationClient};

    fn qa(id: &str, answer: &str) -> SourceQA {
        SourceQA {
            id: id.into(),
            question: format!("what about {id}"),
            answer: answer.into(),
            subject: format!("subject-{id}"),
            relation: "rel".into(),
            object: answer.into(),
        }
    }

    #[test]
    fn matcher_normalizes_case_space_articles() {
        assert!(default_answer_matcher("The  Eiffel Tower", "eiffel tower"));
        assert!(default_answer_matcher("A cat", "cat"));
        assert!(!default_answer_matcher("cat", "dog"));
        assert!(!default_answer_matcher("thecat", "cat"));
    }

    #[test]
    fn closed_book_filter_stub_behaviors() {
        let items: Vec<SourceQA> = (0..6).map(|i| qa(&format!("q{i}"), "gold")).collect();
        let all = closed_book_filter(&items, |i| Ok(i.answer.clone()), default_answer_matcher);
        assert_eq!(all.len(), 6);

        let none = closed_book_filter(&items, |_| Ok("wrong".into()), default_answer_matcher);
        assert!(none.is_empty());

        let odd = closed_book_filter(
            &items,
            |i| {
                let n: usize = i.id[1..].parse().unwrap();
                Ok(if n % 2 == 1 {
                    i.answer.clone()
                } else {
                    "miss".into()
                })
            },
            default_answer_matcher,
        );
        assert_eq!(
            odd.iter().map(|i| i.id.as_str()).collect::<Vec<_>>(),
            vec!["q1", "q3", "q5"]
        );
    }

    #[test]
    fn closed_book_filter_skips_failures() {
        let items = vec![qa("a", "x"), qa("b", "x")];
        let kept = closed_book_filter(
            &items,
            |i| {
                if i.id == "a" {
                    Err(Error::Client("down".into()))
                } else {
                    Ok(i.answer.clone())
                }
            },
            default_answer_matcher,
        );
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].id, "b");
    }

    #[test]
    fn perturb_uses_rank_template_and_differs_from_gold() {
        let stub = StubGenerationClient::new();
        let item = qa("p", "Paris");
        let minor = perturb_answer(&item, 1, &stub, 3).unwrap();
        assert_eq!(minor.template_id, "perturb-minor");
        assert_ne!(minor.text, "Paris");
        let major = perturb_answer(&item, 2, &stub, 3).unwrap();
        assert_eq!(major.template_id, "perturb-major");
        assert!(perturb_answer(&item, 3, &stub, 3).is_err());
    }

    #[test]
    fn perturb_exhausts_retries_when_stub_echoes_gold() {
        let stub = StubGenerationClient::new();
        for _ in 0..4 {
            stub.push_response("perturb-minor", "Paris");
        }
        let err = perturb_answer(&qa("p", "Paris"), 1, &stub, 4).unwrap_err();
        match err {
            Error::Perturbation { item_id, attempts } => {
                assert_eq!(item_id, "p");
                assert_eq!(attempts, 4);
            }
            other => panic!("expected perturbation error, got {other:?}"),
        }
    }

    #[test]
    fn context_rank1_enforces_single_sentence() {
        let stub = StubGenerationClient::new();
        stub.push_response(
            "context-short",
            "Two sentences. Here is another with lisbon.",
        );
        stub.push_response("context-short", "A single clean sentence naming lisbon.");
        let ctx = generate_context("q", "lisbon", 1, &stub, 3, "id1").unwrap();
        assert_eq!(ctx.attempts, 2);
        assert!(ctx.text.starts_with("A single"));
    }

    #[test]
    fn context_requires_answer_containment() {
        let stub = StubGenerationClient::new();
        for _ in 0..3 {
            stub.push_response("context-short", "A sentence that names nothing useful.");
        }
        let err = generate_context("q", "lisbon", 1, &stub, 3, "id2").unwrap_err();
        assert!(matches!(err, Error::ContextGeneration { attempts: 3, .. }));
    }

    #[test]
    fn context_rank1_rejects_overlong_and_multiline() {
        assert!(is_single_sentence("Short and sweet."));
        assert!(!is_single_sentence("No terminal punctuation"));
        assert!(!is_single_sentence("Two.\nLines."));
        let long = format!("{}.", "x".repeat(SINGLE_SENTENCE_MAX_CHARS + 10));
        assert!(!is_single_sentence(&long));
    }

    #[test]
    fn assemble_rejects_equal_answers_and_missing_containment() {
        let source = qa("a", "gold");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            assemble_conflict_item(
                &source,
                "a-1",
                "gold",
                "gold is here.",
                (1, 1),
                50,
                &mut rng
            ),
            Err(Error::Assembly(_))
        ));
        assert!(matches!(
            assemble_conflict_item(&source, "a-1", "alt", "nothing here.", (1, 1), 50, &mut rng),
            Err(Error::Assembly(_))
        ));
        let (item, _) = assemble_conflict_item(
            &source,
            "a-1",
            "alt",
            "alt is the answer.",
            (1, 1),
            50,
            &mut rng,
        )
        .unwrap();
        assert_eq!(item.option_context, "alt");
        assert_eq!(item.option_parametric, "gold");
        assert_eq!(item.r_pop, 1);
        assert_eq!(item.subject_freq, Some(50));
    }

    #[test]
    fn assemble_shuffle_is_seed_deterministic() {
        let source = qa("a", "gold");
        let sides: Vec<OptionASide> = (0..2)
            .map(|_| {
                let mut rng = ChaCha8Rng::seed_from_u64(99);
                assemble_conflict_item(&source, "a-1", "alt", "alt.", (1, 1), 10, &mut rng)
                    .unwrap()
                    .1
            })
            .collect();
        assert_eq!(sides[0], sides[1]);
    }

    #[test]
    fn build_is_byte_deterministic_and_validates() {
        let sources: Vec<SourceQA> = (0..5).map(|i| qa(&format!("s{i}"), "gold")).collect();
        let opts = BuildOptions {
            seed: 7,
            ..BuildOptions::default()
        };
        let run = || {
            let gen = StubGenerationClient::new();
            let freq = StubFrequencyClient::new();
            let out = build_conflict_dataset(&sources, &gen, &freq, &opts).unwrap();
            let mut bytes = String::new();
            for item in &out.items {
                bytes.push_str(&serde_json::to_string(item).unwrap());
                bytes.push('\n');
            }
            (out, bytes)
        };
        let (out1, bytes1) = run();
        let (_, bytes2) = run();
        assert_eq!(bytes1, bytes2);
        assert_eq!(out1.items.len(), 20, "cross plan: 5 sources x 4 combos");
        assert!(out1.skipped.is_empty());
        for item in &out1.items {
            item.validate().unwrap();
        }
        // All four rank combos appear.
        let combos: std::collections::HashSet<(u8, u8)> =
            out1.items.iter().map(|i| (i.r_pert, i.r_det)).collect();
        assert_eq!(combos.len(), 4);
    }

    #[test]
    fn cycle_plan_yields_one_item_per_source() {
        let sources: Vec<SourceQA> = (0..6).map(|i| qa(&format!("s{i}"), "gold")).collect();
        let gen = StubGenerationClient::new();
        let freq = StubFrequencyClient::new();
        let opts = BuildOptions {
            rank_plan: RankPlan::Cycle,
            ..BuildOptions::default()
        };
        let out = build_conflict_dataset(&sources, &gen, &freq, &opts).unwrap();
        assert_eq!(out.items.len(), 6);
        assert_eq!(out.items[0].id, "s0");
        assert_eq!((out.items[1].r_pert, out.items[1].r_det), (1, 2));
    }

    #[test]
    fn build_records_skips_without_aborting() {
        struct FailingFreq;
        impl FrequencyClient for FailingFreq {
            fn count(&self, term: &str) -> Result<u64> {
                if term.contains("s1") {
                    Err(Error::Client("rate limited".into()))
                } else {
                    Ok(10)
                }
            }
        }
        let sources: Vec<SourceQA> = (0..3).map(|i| qa(&format!("s{i}"), "gold")).collect();
        let gen = StubGenerationClient::new();
        let opts = BuildOptions {
            rank_plan: RankPlan::Cycle,
            ..BuildOptions::default()
        };
        let out = build_conflict_dataset(&sources, &gen, &FailingFreq, &opts).unwrap();
        assert_eq!(out.items.len(), 2);
        assert_eq!(out.skipped.len(), 1);
        assert_eq!(out.skipped[0].0, "s1");
    }
}
