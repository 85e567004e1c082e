//! Conflict-set evaluation: difficulty and sensitivity scores, per-rank
//! accuracy tables, and alpha sweeps.
//!
//! An item is answered correctly when the model picks the option supported
//! by the context; a flag flips that for parametric-faithfulness studies.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::popularity_rank;
use crate::decode::{
    answer_bundle, ChoiceLabel, PromptBundle, ScoringMode, SourceTriple, TemplateSet,
    TEMPLATE_BINARY_CLOSED, TEMPLATE_BINARY_CONTEXT,
};
use crate::error::{Error, Result};
use crate::exec;
use crate::logits::SteeringConfig;
use crate::util::fnv1a64;

/// One binary-choice conflict question with its three difficulty ranks.
///
/// Serialized as one JSON object per line; field names are the file format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictItem {
    pub id: String,
    pub question: String,
    pub context: String,
    /// The answer the context supports (the perturbed answer).
    pub option_context: String,
    /// The model's original (parametric) answer.
    pub option_parametric: String,
    pub r_pert: u8,
    pub r_det: u8,
    pub r_pop: u8,
    pub subject: String,
    pub relation: String,
    pub object: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject_freq: Option<u64>,
}

impl ConflictItem {
    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.r_pert) {
            return Err(Error::InvalidInput(format!(
                "item {}: r_pert must be 1 or 2, got {}",
                self.id, self.r_pert
            )));
        }
        if !(1..=2).contains(&self.r_det) {
            return Err(Error::InvalidInput(format!(
                "item {}: r_det must be 1 or 2, got {}",
                self.id, self.r_det
            )));
        }
        if !(1..=3).contains(&self.r_pop) {
            return Err(Error::InvalidInput(format!(
                "item {}: r_pop must be 1, 2 or 3, got {}",
                self.id, self.r_pop
            )));
        }
        if self.option_context.is_empty() || self.option_parametric.is_empty() {
            return Err(Error::InvalidInput(format!(
                "item {}: options must be non-empty",
                self.id
            )));
        }
        if self.option_context == self.option_parametric {
            return Err(Error::InvalidInput(format!(
                "item {}: option_context must differ from option_parametric",
                self.id
            )));
        }
        if let Some(freq) = self.subject_freq {
            let expected = popularity_rank(freq);
            if expected != self.r_pop {
                return Err(Error::InvalidInput(format!(
                    "item {}: subject_freq {} implies popularity rank {}, but r_pop is {}",
                    self.id, freq, expected, self.r_pop
                )));
            }
        }
        Ok(())
    }
}

/// Parse a JSON-Lines conflict set, validating every item.
pub fn load_conflict_items(path: impl AsRef<Path>) -> Result<Vec<ConflictItem>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_conflict_items(&text, &path.display().to_string())
}

pub fn parse_conflict_items(text: &str, origin: &str) -> Result<Vec<ConflictItem>> {
    let mut items = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let item: ConflictItem = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: origin.to_string(),
            line: lineno + 1,
            message: e.to_string(),
        })?;
        item.validate().map_err(|e| Error::Schema {
            path: origin.to_string(),
            message: format!("line {}: {e}", lineno + 1),
        })?;
        items.push(item);
    }
    Ok(items)
}

/// Serialize items as JSON Lines, one object per line, stable field order.
pub fn write_conflict_items(path: impl AsRef<Path>, items: &[ConflictItem]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("conflict item serializes"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Outcome of one evaluated item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemResult {
    pub item_id: String,
    /// `None` when the generation produced no readable label.
    pub chosen: Option<ChoiceLabel>,
    pub correct: bool,
    pub difficulty: u8,
}

/// Sum of the three ranks; always in `[3, 7]`.
pub fn difficulty_score(item: &ConflictItem) -> Result<u8> {
    item.validate()?;
    Ok(item.r_pert + item.r_det + item.r_pop)
}

/// `100 * (total difficulty of correct items) / (total difficulty of all)`.
pub fn sensitivity_score(results: &[ItemResult]) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::InvalidInput(
            "sensitivity score needs at least one result".into(),
        ));
    }
    let total: u64 = results.iter().map(|r| r.difficulty as u64).sum();
    let correct: u64 = results
        .iter()
        .filter(|r| r.correct)
        .map(|r| r.difficulty as u64)
        .sum();
    Ok(100.0 * correct as f64 / total as f64)
}

/// The three difficulty dimensions of a conflict item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dimension {
    Perturbation,
    Detail,
    Popularity,
}

impl Dimension {
    pub const ALL: [Dimension; 3] = [
        Dimension::Perturbation,
        Dimension::Detail,
        Dimension::Popularity,
    ];

    pub fn rank_of(&self, item: &ConflictItem) -> u8 {
        match self {
            Dimension::Perturbation => item.r_pert,
            Dimension::Detail => item.r_det,
            Dimension::Popularity => item.r_pop,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Dimension::Perturbation => "perturbation",
            Dimension::Detail => "detail",
            Dimension::Popularity => "popularity",
        }
    }
}

/// Percent correct per rank value of one dimension; ranks with no items are
/// simply absent.
pub fn accuracy_by_rank(
    results: &[ItemResult],
    items: &[ConflictItem],
    dimension: Dimension,
) -> Result<BTreeMap<u8, f64>> {
    let by_id: HashMap<&str, &ConflictItem> = items.iter().map(|i| (i.id.as_str(), i)).collect();
    let mut totals: BTreeMap<u8, (usize, usize)> = BTreeMap::new();
    for result in results {
        let item = by_id.get(result.item_id.as_str()).ok_or_else(|| {
            Error::InvalidInput(format!("result references unknown item {}", result.item_id))
        })?;
        let slot = totals.entry(dimension.rank_of(item)).or_insert((0, 0));
        slot.0 += 1;
        if result.correct {
            slot.1 += 1;
        }
    }
    Ok(totals
        .into_iter()
        .map(|(rank, (n, correct))| (rank, 100.0 * correct as f64 / n as f64))
        .collect())
}

/// Count and accuracy for one rank bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankCell {
    pub n: usize,
    pub accuracy: f64,
}

/// Aggregated evaluation of one conflict set at one alpha.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub alpha: f64,
    pub n_items: usize,
    pub n_correct: usize,
    /// Percent correct over all items.
    pub accuracy: f64,
    pub sensitivity: f64,
    pub perturbation: BTreeMap<u8, RankCell>,
    pub detail: BTreeMap<u8, RankCell>,
    pub popularity: BTreeMap<u8, RankCell>,
    pub by_difficulty: BTreeMap<u8, RankCell>,
    pub results: Vec<ItemResult>,
}

impl EvalReport {
    pub fn dimension_table(&self, dimension: Dimension) -> &BTreeMap<u8, RankCell> {
        match dimension {
            Dimension::Perturbation => &self.perturbation,
            Dimension::Detail => &self.detail,
            Dimension::Popularity => &self.popularity,
        }
    }
}

/// Which option the letters credit as correct.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CreditSide {
    /// Correct means choosing the context-supported option.
    Context,
    /// Inverted mode: correct means sticking with the parametric answer.
    Parametric,
}

/// Position of the context-supported option in the rendered prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptionOrder {
    ContextFirst,
    ParametricFirst,
}

/// Evaluation settings; `seed` drives the per-item option shuffle.
#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub scoring: ScoringMode,
    pub credit: CreditSide,
    pub seed: u64,
    pub max_tokens: usize,
    pub context_template: String,
    pub closed_template: String,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            scoring: ScoringMode::OptionScore,
            credit: CreditSide::Context,
            seed: 0,
            max_tokens: 16,
            context_template: TEMPLATE_BINARY_CONTEXT.to_string(),
            closed_template: TEMPLATE_BINARY_CLOSED.to_string(),
        }
    }
}

/// Deterministic per-item presentation order derived from the seed.
pub fn presentation_order(seed: u64, item_id: &str) -> OptionOrder {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a64(item_id.as_bytes()));
    if rand::RngCore::next_u32(&mut rng) & 1 == 0 {
        OptionOrder::ContextFirst
    } else {
        OptionOrder::ParametricFirst
    }
}

/// Answer one conflict item with an explicit option order.
pub fn answer_choice(
    sources: &SourceTriple<'_>,
    cfg: &SteeringConfig,
    templates: &TemplateSet,
    item: &ConflictItem,
    order: OptionOrder,
    scoring: ScoringMode,
    max_tokens: usize,
) -> Result<ChoiceLabel> {
    item.validate()?;
    let (option_a, option_b) = match order {
        OptionOrder::ContextFirst => (&item.option_context, &item.option_parametric),
        OptionOrder::ParametricFirst => (&item.option_parametric, &item.option_context),
    };
    let template_id = if item.context.is_empty() {
        TEMPLATE_BINARY_CLOSED
    } else {
        TEMPLATE_BINARY_CONTEXT
    };
    let bundle = PromptBundle::new(
        item.question.clone(),
        item.context.clone(),
        option_a.clone(),
        option_b.clone(),
        template_id,
    )?;
    answer_bundle(
        sources, cfg, templates, &bundle, scoring, max_tokens, &item.id,
    )
}

fn answer_with_templates(
    sources: &SourceTriple<'_>,
    cfg: &SteeringConfig,
    templates: &TemplateSet,
    item: &ConflictItem,
    opts: &EvalOptions,
) -> Result<Option<ChoiceLabel>> {
    let order = presentation_order(opts.seed, &item.id);
    let (option_a, option_b) = match order {
        OptionOrder::ContextFirst => (&item.option_context, &item.option_parametric),
        OptionOrder::ParametricFirst => (&item.option_parametric, &item.option_context),
    };
    let template_id = if item.context.is_empty() {
        opts.closed_template.as_str()
    } else {
        opts.context_template.as_str()
    };
    let bundle = PromptBundle::new(
        item.question.clone(),
        item.context.clone(),
        option_a.clone(),
        option_b.clone(),
        template_id,
    )?;
    match answer_bundle(
        sources,
        cfg,
        templates,
        &bundle,
        opts.scoring,
        opts.max_tokens,
        &item.id,
    ) {
        Ok(label) => Ok(Some(label)),
        // Unreadable generations count as incorrect rather than aborting.
        Err(Error::UnparseableAnswer { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

fn evaluate_one(
    sources: &SourceTriple<'_>,
    cfg: &SteeringConfig,
    templates: &TemplateSet,
    item: &ConflictItem,
    opts: &EvalOptions,
) -> Result<ItemResult> {
    let difficulty = difficulty_score(item)?;
    let label = answer_with_templates(sources, cfg, templates, item, opts)?;
    let order = presentation_order(opts.seed, &item.id);
    let chose_context = match (label, order) {
        (Some(ChoiceLabel::A), OptionOrder::ContextFirst) => true,
        (Some(ChoiceLabel::B), OptionOrder::ParametricFirst) => true,
        (Some(_), _) => false,
        (None, _) => false,
    };
    let correct = match opts.credit {
        CreditSide::Context => chose_context,
        // An unreadable answer is incorrect under either crediting rule.
        CreditSide::Parametric => label.is_some() && !chose_context,
    };
    Ok(ItemResult {
        item_id: item.id.clone(),
        chosen: label,
        correct,
        difficulty,
    })
}

fn build_report(
    alpha: f64,
    items: &[ConflictItem],
    results: Vec<ItemResult>,
) -> Result<EvalReport> {
    let n_items = results.len();
    let n_correct = results.iter().filter(|r| r.correct).count();
    let sensitivity = sensitivity_score(&results)?;

    let mut tables: [BTreeMap<u8, RankCell>; 3] = Default::default();
    for (slot, dimension) in tables.iter_mut().zip(Dimension::ALL) {
        let mut counts: BTreeMap<u8, (usize, usize)> = BTreeMap::new();
        for (item, result) in items.iter().zip(&results) {
            let cell = counts.entry(dimension.rank_of(item)).or_insert((0, 0));
            cell.0 += 1;
            cell.1 += result.correct as usize;
        }
        *slot = counts
            .into_iter()
            .map(|(rank, (n, c))| {
                (
                    rank,
                    RankCell {
                        n,
                        accuracy: 100.0 * c as f64 / n as f64,
                    },
                )
            })
            .collect();
    }
    let [perturbation, detail, popularity] = tables;

    let mut difficulty_counts: BTreeMap<u8, (usize, usize)> = BTreeMap::new();
    for result in &results {
        let cell = difficulty_counts.entry(result.difficulty).or_insert((0, 0));
        cell.0 += 1;
        cell.1 += result.correct as usize;
    }
    let by_difficulty = difficulty_counts
        .into_iter()
        .map(|(d, (n, c))| {
            (
                d,
                RankCell {
                    n,
                    accuracy: 100.0 * c as f64 / n as f64,
                },
            )
        })
        .collect();

    Ok(EvalReport {
        alpha,
        n_items,
        n_correct,
        accuracy: 100.0 * n_correct as f64 / n_items as f64,
        sensitivity,
        perturbation,
        detail,
        popularity,
        by_difficulty,
        results,
    })
}

/// Evaluate every item; fans out across threads when available, with
/// results gathered in input order.
pub fn evaluate_items(
    sources: &SourceTriple<'_>,
    cfg: &SteeringConfig,
    templates: &TemplateSet,
    items: &[ConflictItem],
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if items.is_empty() {
        return Err(Error::InvalidInput("no items to evaluate".into()));
    }
    sources.check_compat()?;
    let results: Result<Vec<ItemResult>> = exec::map_items(items, |item| {
        evaluate_one(sources, cfg, templates, item, opts)
    })
    .into_iter()
    .collect();
    build_report(cfg.alpha, items, results?)
}

/// Always-sequential variant of [`evaluate_items`]; same output.
pub fn evaluate_items_seq(
    sources: &SourceTriple<'_>,
    cfg: &SteeringConfig,
    templates: &TemplateSet,
    items: &[ConflictItem],
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if items.is_empty() {
        return Err(Error::InvalidInput("no items to evaluate".into()));
    }
    sources.check_compat()?;
    let results: Result<Vec<ItemResult>> = exec::map_items_seq(items, |item| {
        evaluate_one(sources, cfg, templates, item, opts)
    })
    .into_iter()
    .collect();
    build_report(cfg.alpha, items, results?)
}

/// One alpha's outcome inside a sweep: a report, or the error that stopped it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub alpha: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<EvalReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Evaluations of the same set at several alphas, in the order requested.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub points: Vec<SweepPoint>,
    /// True when the sweep was cut short (interrupt) before covering every
    /// requested alpha.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub partial: bool,
}

impl SweepReport {
    /// `(alpha, sensitivity)` pairs; failed alphas yield `None`.
    pub fn sensitivity_series(&self) -> Vec<(f64, Option<f64>)> {
        self.points
            .iter()
            .map(|p| (p.alpha, p.report.as_ref().map(|r| r.sensitivity)))
            .collect()
    }
}

/// Evaluate one alpha of a sweep, capturing any failure on the point.
pub fn sweep_point(
    sources: &SourceTriple<'_>,
    cfg_base: &SteeringConfig,
    templates: &TemplateSet,
    items: &[ConflictItem],
    alpha: f64,
    opts: &EvalOptions,
) -> SweepPoint {
    let cfg = SteeringConfig {
        alpha,
        ..cfg_base.clone()
    };
    match evaluate_items(sources, &cfg, templates, items, opts) {
        Ok(report) => SweepPoint {
            alpha,
            report: Some(report),
            error: None,
        },
        Err(e) => SweepPoint {
            alpha,
            report: None,
            error: Some(e.to_string()),
        },
    }
}

/// Evaluate at each alpha with everything else held fixed. A failure at one
/// alpha is recorded on its point and does not abort the others.
pub fn alpha_sweep(
    sources: &SourceTriple<'_>,
    cfg_base: &SteeringConfig,
    templates: &TemplateSet,
    items: &[ConflictItem],
    alphas: &[f64],
    opts: &EvalOptions,
) -> Result<SweepReport> {
    if alphas.is_empty() {
        return Err(Error::InvalidInput("alpha list must be non-empty".into()));
    }
    let points = alphas
        .iter()
        .map(|&alpha| sweep_point(sources, cfg_base, templates, items, alpha, opts))
        .collect();
    Ok(SweepReport {
        points,
        partial: false,
    })
}

/// Flat per-rank table: `dimension,rank,n,accuracy` with 2-decimal accuracy.
pub fn write_report_csv<W: Write>(report: &EvalReport, writer: W) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    let io_err = |e: csv::Error| Error::Io {
        path: "<csv>".into(),
        source: std::io::Error::other(e),
    };
    csv.write_record(["dimension", "rank", "n", "accuracy"])
        .map_err(io_err)?;
    for dimension in Dimension::ALL {
        for (rank, cell) in report.dimension_table(dimension) {
            csv.write_record([
                dimension.name().to_string(),
                rank.to_string(),
                cell.n.to_string(),
                format!("{:.2}", cell.accuracy),
            ])
            .map_err(io_err)?;
        }
    }
    csv.flush().map_err(|e| Error::Io {
        path: "<csv>".into(),
        source: e,
    })
}

/// Sweep CSV: `alpha,sensitivity`, one row per point, 2-decimal sensitivity.
/// Failed points leave sensitivity empty.
pub fn write_sweep_csv<W: Write>(sweep: &SweepReport, writer: W) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    let io_err = |e: csv::Error| Error::Io {
        path: "<csv>".into(),
        source: std::io::Error::other(e),
    };
    csv.write_record(["alpha", "sensitivity"]).map_err(io_err)?;
    for point in &sweep.points {
        let sensitivity = point
            .report
            .as_ref()
            .map(|r| format!("{:.2}", r.sensitivity))
            .unwrap_or_default();
        csv.write_record([point.alpha.to_string(), sensitivity])
            .map_err(io_err)?;
    }
    csv.flush().map_err(|e| Error::Io {
        path: "<csv>".into(),
        source: e,
    })
}

/// Plot-ready series: `alpha<TAB>sensitivity` at full precision, no header,
/// failed points omitted.
pub fn write_sweep_series<W: Write>(sweep: &SweepReport, mut writer: W) -> Result<()> {
    for (alpha, sensitivity) in sweep.sensitivity_series() {
        if let Some(s) = sensitivity {
            writeln!(writer, "{alpha}\t{s}").map_err(|e| Error::Io {
                path: "<series>".into(),
                source: e,
            })?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn item(id: &str, ranks: (u8, u8, u8)) -> ConflictItem {
        ConflictItem {
            id: id.into(),
            question: "q".into(),
            context: "c".into(),
            option_context: "ctx".into(),
            option_parametric: "par".into(),
            r_pert: ranks.0,
            r_det: ranks.1,
            r_pop: ranks.2,
            subject: "s".into(),
            relation: "rel".into(),
            object: "o".into(),
            subject_freq: None,
        }
    }

    fn result(id: &str, correct: bool, difficulty: u8) -> ItemResult {
        ItemResult {
            item_id: id.into(),
            chosen: Some(ChoiceLabel::A),
            correct,
            difficulty,
        }
    }

    #[test]
    fn difficulty_bounds_and_sum() {
        assert_eq!(difficulty_score(&item("a", (1, 1, 1))).unwrap(), 3);
        assert_eq!(difficulty_score(&item("b", (2, 2, 3))).unwrap(), 7);
        assert_eq!(difficulty_score(&item("c", (2, 1, 2))).unwrap(), 5);
        assert!(difficulty_score(&item("d", (0, 1, 1))).is_err());
        assert!(difficulty_score(&item("e", (1, 3, 1))).is_err());
    }

    #[test]
    fn sensitivity_worked_case() {
        let results = vec![
            result("a", true, 3),
            result("b", false, 5),
            result("c", true, 7),
        ];
        let s = sensitivity_score(&results).unwrap();
        assert!((s - 100.0 * 10.0 / 15.0).abs() < 1e-12);
    }

    #[test]
    fn sensitivity_extremes_and_empty() {
        let all = vec![result("a", true, 3), result("b", true, 7)];
        assert_eq!(sensitivity_score(&all).unwrap(), 100.0);
        let none = vec![result("a", false, 3)];
        assert_eq!(sensitivity_score(&none).unwrap(), 0.0);
        assert!(sensitivity_score(&[]).is_err());
    }

    #[test]
    fn accuracy_by_rank_small_cases() {
        let items = vec![item("a", (1, 1, 1)), item("b", (1, 2, 3))];
        let results = vec![result("a", true, 3), result("b", false, 6)];
        let by_pert = accuracy_by_rank(&results, &items, Dimension::Perturbation).unwrap();
        assert_eq!(by_pert.len(), 1);
        assert!((by_pert[&1] - 50.0).abs() < 1e-12);
        let by_pop = accuracy_by_rank(&results, &items, Dimension::Popularity).unwrap();
        assert_eq!(by_pop[&1], 100.0);
        assert_eq!(by_pop[&3], 0.0);
    }

    #[test]
    fn accuracy_by_rank_dangling_id() {
        let items = vec![item("a", (1, 1, 1))];
        let results = vec![result("zzz", true, 3)];
        assert!(accuracy_by_rank(&results, &items, Dimension::Detail).is_err());
    }

    #[test]
    fn accuracy_by_rank_matches_group_by_oracle() {
        // Brute-force oracle: group ids by rank, count correct per group.
        let mut items = Vec::new();
        let mut results = Vec::new();
        for i in 0..60 {
            let ranks = (
                1 + (i % 2) as u8,
                1 + ((i / 2) % 2) as u8,
                1 + ((i / 4) % 3) as u8,
            );
            let id = format!("i{i}");
            items.push(item(&id, ranks));
            results.push(result(&id, i % 3 == 0, 3));
        }
        for dimension in Dimension::ALL {
            let got = accuracy_by_rank(&results, &items, dimension).unwrap();
            let mut expect: BTreeMap<u8, (usize, usize)> = BTreeMap::new();
            for (it, r) in items.iter().zip(&results) {
                let e = expect.entry(dimension.rank_of(it)).or_insert((0, 0));
                e.0 += 1;
                e.1 += r.correct as usize;
            }
            for (rank, (n, c)) in expect {
                assert!((got[&rank] - 100.0 * c as f64 / n as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn validation_catches_freq_rank_mismatch() {
        let mut bad = item("a", (1, 1, 1));
        bad.subject_freq = Some(2_000_000);
        assert!(bad.validate().is_err());
        bad.r_pop = 3;
        assert!(bad.validate().is_ok());
    }

    #[test]
    fn jsonl_round_trip_with_line_errors() {
        let items = vec![item("a", (1, 2, 3)), item("b", (2, 1, 1))];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.jsonl");
        write_conflict_items(&path, &items).unwrap();
        let loaded = load_conflict_items(&path).unwrap();
        assert_eq!(loaded, items);

        std::fs::write(&path, "{\"id\": oops}\n").unwrap();
        match load_conflict_items(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn presentation_order_is_stable_and_mixed() {
        let first = presentation_order(7, "item-1");
        for _ in 0..5 {
            assert_eq!(presentation_order(7, "item-1"), first);
        }
        let orders: Vec<OptionOrder> = (0..64)
            .map(|i| presentation_order(7, &format!("item-{i}")))
            .collect();
        assert!(orders.contains(&OptionOrder::ContextFirst));
        assert!(orders.contains(&OptionOrder::ParametricFirst));
    }

    #[test]
    fn partition_consistency_across_dimensions() {
        let mut items = Vec::new();
        let mut results = Vec::new();
        for i in 0..48 {
            let ranks = (
                1 + (i % 2) as u8,
                1 + ((i / 2) % 2) as u8,
                1 + ((i / 4) % 3) as u8,
            );
            let id = format!("i{i}");
            items.push(item(&id, ranks));
            results.push(result(&id, i % 5 != 0, 3));
        }
        let total_correct = results.iter().filter(|r| r.correct).count();
        for dimension in Dimension::ALL {
            let table = accuracy_by_rank(&results, &items, dimension).unwrap();
            let weighted: f64 = table
                .iter()
                .map(|(rank, acc)| {
                    let n = items
                        .iter()
                        .filter(|i| dimension.rank_of(i) == *rank)
                        .count();
                    acc * n as f64
                })
                .sum();
            assert!((weighted - 100.0 * total_correct as f64).abs() < 1e-9);
        }
    }
}
