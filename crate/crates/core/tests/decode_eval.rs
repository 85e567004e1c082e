//! End-to-end decoder and harness behavior on table-model triples.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use steer_core::decode::{
    greedy_generate_tokens, score_option, steered_generate_tokens, ScoringMode, SourceTriple,
    StopRule, TemplateSet,
};
use steer_core::eval::{
    alpha_sweep, evaluate_items, presentation_order, sensitivity_score, CreditSide, EvalOptions,
    ItemResult, OptionOrder,
};
use steer_core::logits::{LogitVector, SteeringConfig};
use steer_core::sources::{LogitSource, TableLm};
use steer_core::toy;
use steer_core::vocab::Vocabulary;
use steer_core::ChoiceLabel;

fn random_logits(rng: &mut ChaCha8Rng, size: usize) -> LogitVector {
    LogitVector::new((0..size).map(|_| rng.random_range(-6.0..6.0)).collect()).unwrap()
}

fn random_table(rng: &mut ChaCha8Rng, vocab: &Vocabulary) -> TableLm {
    let order = rng.random_range(0..=2usize);
    let n_entries = rng.random_range(0..4usize);
    let entries = (0..n_entries)
        .map(|_| {
            let len = rng.random_range(1..=order.max(1)).min(order);
            let prefix = (0..len)
                .map(|_| rng.random_range(0..vocab.size() as u32))
                .collect();
            (prefix, random_logits(rng, vocab.size()))
        })
        .collect();
    let default = random_logits(rng, vocab.size());
    TableLm::new(vocab.clone(), order, entries, default).unwrap()
}

#[test]
fn alpha_zero_equals_base_greedy_on_random_triples() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for _ in 0..100 {
        let size = rng.random_range(2..=16usize);
        let vocab = Vocabulary::new((0..size).map(|i| format!("w{i}"))).unwrap();
        let base = random_table(&mut rng, &vocab);
        let pos = random_table(&mut rng, &vocab);
        let neg = random_table(&mut rng, &vocab);
        let sources = SourceTriple::new(&base, &pos, &neg);

        let prompt: Vec<u32> = (0..rng.random_range(0..5usize))
            .map(|_| rng.random_range(0..size as u32))
            .collect();
        let stop = StopRule::max(8);
        let cfg = SteeringConfig {
            alpha: 0.0,
            ..SteeringConfig::default()
        };
        let steered = steered_generate_tokens(&sources, &cfg, &prompt, &stop, None).unwrap();
        let plain = greedy_generate_tokens(&base, &prompt, &stop).unwrap();
        assert_eq!(steered.tokens, plain.tokens);
        assert_eq!(steered.text, plain.text);
    }
}

#[test]
fn option_score_gap_is_nondecreasing_in_alpha() {
    // pos uniformly up-weights the target token, neg down-weights it.
    let vocab = Vocabulary::new(["a", "b", "filler"]).unwrap();
    let base = TableLm::new(
        vocab.clone(),
        0,
        vec![],
        LogitVector::new(vec![1.0, 0.0, 0.3]).unwrap(),
    )
    .unwrap();
    let pos = TableLm::new(
        vocab.clone(),
        0,
        vec![],
        LogitVector::new(vec![0.0, 0.8, 0.0]).unwrap(),
    )
    .unwrap();
    let neg = TableLm::new(
        vocab.clone(),
        0,
        vec![],
        LogitVector::new(vec![0.0, -0.8, 0.0]).unwrap(),
    )
    .unwrap();
    let sources = SourceTriple::new(&base, &pos, &neg);

    let a = vocab.encode_text("a").unwrap();
    let b = vocab.encode_text("b").unwrap();
    let mut last_gap = f64::NEG_INFINITY;
    for step in 0..=24 {
        let alpha = -3.0 + 0.25 * step as f64;
        let cfg = SteeringConfig {
            alpha,
            ..SteeringConfig::default()
        };
        let score_a = score_option(&sources, &cfg, &[], &a).unwrap();
        let score_b = score_option(&sources, &cfg, &[], &b).unwrap();
        let gap = score_b - score_a;
        assert!(gap >= last_gap, "gap decreased at alpha {alpha}");
        last_gap = gap;
    }
}

#[test]
fn toy_sweep_matches_construction_oracle_and_trends_up() {
    let fixture = toy::load_packaged().unwrap();
    let sources = SourceTriple::new(&fixture.base, &fixture.pos, &fixture.neg);
    let templates = TemplateSet::default();
    let opts = EvalOptions::default();
    let alphas = [-2.0, -1.0, 0.0, 1.0, 2.0];
    let sweep = alpha_sweep(
        &sources,
        &SteeringConfig::default(),
        &templates,
        &fixture.items,
        &alphas,
        &opts,
    )
    .unwrap();

    let mut last = -1.0f64;
    for (point, &alpha) in sweep.points.iter().zip(&alphas) {
        let report = point.report.as_ref().expect("toy eval succeeds");

        // Independent oracle: item i flips when its base gap + 2*alpha turns
        // positive; exact ties resolve to option A.
        let oracle: Vec<ItemResult> = fixture
            .items
            .iter()
            .enumerate()
            .map(|(i, item)| {
                let diff = toy::base_gap(i) + 2.0 * alpha;
                let order = presentation_order(opts.seed, &item.id);
                let chose_context = if diff == 0.0 {
                    order == OptionOrder::ContextFirst
                } else {
                    diff > 0.0
                };
                ItemResult {
                    item_id: item.id.clone(),
                    chosen: Some(ChoiceLabel::A),
                    correct: chose_context,
                    difficulty: item.r_pert + item.r_det + item.r_pop,
                }
            })
            .collect();
        let expected = sensitivity_score(&oracle).unwrap();
        assert!(
            (report.sensitivity - expected).abs() < 1e-9,
            "alpha {alpha}: sensitivity {} vs oracle {expected}",
            report.sensitivity
        );
        for (got, want) in report.results.iter().zip(&oracle) {
            assert_eq!(
                got.correct, want.correct,
                "item {} at alpha {alpha}",
                got.item_id
            );
        }

        assert!(
            report.sensitivity >= last,
            "sensitivity decreased at alpha {alpha}"
        );
        last = report.sensitivity;

        // The per-difficulty table covers every item exactly once.
        let difficulty_n: usize = report.by_difficulty.values().map(|c| c.n).sum();
        assert_eq!(difficulty_n, fixture.items.len());
    }

    let s = sweep.sensitivity_series();
    let first = s.first().unwrap().1.unwrap();
    let final_ = s.last().unwrap().1.unwrap();
    assert!(final_ - first >= 40.0, "margin {}", final_ - first);
}

#[test]
fn single_alpha_sweep_equals_plain_evaluation() {
    let fixture = toy::load_packaged().unwrap();
    let sources = SourceTriple::new(&fixture.base, &fixture.pos, &fixture.neg);
    let templates = TemplateSet::default();
    let opts = EvalOptions::default();
    let cfg = SteeringConfig::default();

    let sweep = alpha_sweep(&sources, &cfg, &templates, &fixture.items, &[0.0], &opts).unwrap();
    let plain = evaluate_items(
        &sources,
        &SteeringConfig { alpha: 0.0, ..cfg },
        &templates,
        &fixture.items,
        &opts,
    )
    .unwrap();
    assert_eq!(sweep.points.len(), 1);
    assert_eq!(sweep.points[0].report.as_ref().unwrap(), &plain);
}

#[test]
fn repeated_alpha_gives_identical_reports() {
    let fixture = toy::load_packaged().unwrap();
    let sources = SourceTriple::new(&fixture.base, &fixture.pos, &fixture.neg);
    let sweep = alpha_sweep(
        &sources,
        &SteeringConfig::default(),
        &TemplateSet::default(),
        &fixture.items,
        &[0.5, 0.5],
        &EvalOptions::default(),
    )
    .unwrap();
    assert_eq!(sweep.points[0].report, sweep.points[1].report);
}

#[test]
fn parallel_and_sequential_evaluation_agree() {
    let fixture = toy::load_packaged().unwrap();
    let sources = SourceTriple::new(&fixture.base, &fixture.pos, &fixture.neg);
    let templates = TemplateSet::default();
    let opts = EvalOptions::default();
    let cfg = SteeringConfig::default();
    let par = evaluate_items(&sources, &cfg, &templates, &fixture.items, &opts).unwrap();
    let seq =
        steer_core::eval::evaluate_items_seq(&sources, &cfg, &templates, &fixture.items, &opts)
            .unwrap();
    assert_eq!(par, seq);
}

#[test]
fn sweep_records_per_alpha_failures_without_aborting() {
    let fixture = toy::load_packaged().unwrap();
    let sources = SourceTriple::new(&fixture.base, &fixture.pos, &fixture.neg);
    // Items whose words are not in the toy vocabulary fail to encode.
    let mut broken = fixture.items.clone();
    for item in &mut broken {
        item.question = "unknown words everywhere".into();
    }
    let sweep = alpha_sweep(
        &sources,
        &SteeringConfig::default(),
        &TemplateSet::default(),
        &broken,
        &[-1.0, 1.0],
        &EvalOptions::default(),
    )
    .unwrap();
    assert_eq!(sweep.points.len(), 2);
    for point in &sweep.points {
        assert!(point.report.is_none());
        assert!(point.error.is_some());
    }
}

#[test]
fn parametric_credit_inverts_correctness() {
    let fixture = toy::load_packaged().unwrap();
    let sources = SourceTriple::new(&fixture.base, &fixture.pos, &fixture.neg);
    let templates = TemplateSet::default();
    let cfg = SteeringConfig {
        alpha: 2.0,
        ..SteeringConfig::default()
    };
    let context = evaluate_items(
        &sources,
        &cfg,
        &templates,
        &fixture.items,
        &EvalOptions::default(),
    )
    .unwrap();
    let parametric = evaluate_items(
        &sources,
        &cfg,
        &templates,
        &fixture.items,
        &EvalOptions {
            credit: CreditSide::Parametric,
            ..EvalOptions::default()
        },
    )
    .unwrap();
    // At alpha = +2 every toy item goes contextual.
    assert_eq!(context.n_correct, fixture.items.len());
    assert_eq!(parametric.n_correct, 0);
}

#[test]
fn unreadable_generation_counts_incorrect() {
    let fixture = toy::load_packaged().unwrap();
    // In generate mode the toy base emits content words, never "A."/"B.".
    let sources = SourceTriple::new(&fixture.base, &fixture.pos, &fixture.neg);
    let report = evaluate_items(
        &sources,
        &SteeringConfig::default(),
        &TemplateSet::default(),
        &fixture.items[..4],
        &EvalOptions {
            scoring: ScoringMode::Generate,
            max_tokens: 3,
            ..EvalOptions::default()
        },
    )
    .unwrap();
    assert_eq!(report.n_correct, 0);
    assert!(report
        .results
        .iter()
        .all(|r| r.chosen.is_none() && !r.correct));
}

#[test]
fn replacing_the_negative_proxy_with_the_untuned_model_still_steers() {
    // Ablation wiring: instead of a parametric-tuned negative proxy, pass the
    // original (untuned) small model; the positive proxy alone carries the
    // signal through the same difference term.
    let fixture = toy::load_packaged().unwrap();
    let vocab = fixture.base.vocabulary().clone();
    let untuned = TableLm::new(
        vocab.clone(),
        0,
        vec![],
        LogitVector::new(vec![0.0; vocab.size()]).unwrap(),
    )
    .unwrap();
    let sources = SourceTriple::new(&fixture.base, &fixture.pos, &untuned);
    let templates = TemplateSet::default();
    let opts = EvalOptions::default();

    // Proxy delta is now 1 logit per unit alpha instead of 2, so steering is
    // weaker but still monotone and still reaches every item by alpha 6.
    let alphas = [-4.0, 0.0, 6.0];
    let sweep = alpha_sweep(
        &sources,
        &SteeringConfig::default(),
        &templates,
        &fixture.items,
        &alphas,
        &opts,
    )
    .unwrap();
    let series: Vec<f64> = sweep
        .sensitivity_series()
        .into_iter()
        .map(|(_, s)| s.unwrap())
        .collect();
    assert_eq!(series[0], 0.0);
    assert!(series[1] > series[0]);
    assert_eq!(series[2], 100.0);
}

#[test]
fn flipping_one_result_raises_sensitivity_by_its_share() {
    let results: Vec<ItemResult> = (0..10)
        .map(|i| ItemResult {
            item_id: format!("i{i}"),
            chosen: Some(ChoiceLabel::A),
            correct: i % 3 == 0,
            difficulty: 3 + (i % 5) as u8,
        })
        .collect();
    let total: f64 = results.iter().map(|r| r.difficulty as f64).sum();
    let base = sensitivity_score(&results).unwrap();
    for i in 0..results.len() {
        let mut flipped = results.clone();
        flipped[i].correct = true;
        let s = sensitivity_score(&flipped).unwrap();
        if results[i].correct {
            assert_eq!(s, base);
        } else {
            let expected = base + 100.0 * results[i].difficulty as f64 / total;
            assert!((s - expected).abs() < 1e-9);
        }
    }
}
