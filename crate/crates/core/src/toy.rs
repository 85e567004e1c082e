//! Packaged desk-scale fixture: a 24-item conflict set over three engineered
//! table models.
//!
//! Per item `i` the base model scores the context answer `g_i = -3 + 0.25 i`
//! logits above/below the parametric answer, while the proxies move the pair
//! apart by exactly 2 logits per unit of alpha. Steered score difference is
//! therefore `g_i + 2*alpha`: every item flips from parametric to contextual
//! at `alpha = -g_i / 2`, thresholds spread across `[-1.375, 1.5]`. At
//! `alpha = -2` no item is contextual, at `alpha = +2` all are.

use crate::error::Result;
use crate::eval::{parse_conflict_items, ConflictItem};
use crate::logits::LogitVector;
use crate::sources::TableLm;
use crate::vocab::{TokenId, Vocabulary};

pub const ITEM_COUNT: usize = 24;

/// Packaged copies of the fixture, byte-identical to the generator output.
pub const ITEMS_JSONL: &str = include_str!("../assets/toy/items.jsonl");
pub const BASE_LM_JSON: &str = include_str!("../assets/toy/base.lm.json");
pub const POS_LM_JSON: &str = include_str!("../assets/toy/pos.lm.json");
pub const NEG_LM_JSON: &str = include_str!("../assets/toy/neg.lm.json");

/// The toy conflict set plus its three table models.
#[derive(Debug, Clone)]
pub struct ToyFixture {
    pub items: Vec<ConflictItem>,
    pub base: TableLm,
    pub pos: TableLm,
    pub neg: TableLm,
}

const SCAFFOLD: [&str; 7] = [
    "Context:",
    "Question:",
    "A.",
    "B.",
    "Answer:",
    "evidence",
    "says",
];

fn vocabulary() -> Vocabulary {
    let mut tokens: Vec<String> = SCAFFOLD.iter().map(|s| s.to_string()).collect();
    for i in 0..ITEM_COUNT {
        tokens.push(format!("q{i}"));
    }
    for i in 0..ITEM_COUNT {
        tokens.push(format!("ctx{i}"));
    }
    for i in 0..ITEM_COUNT {
        tokens.push(format!("par{i}"));
    }
    Vocabulary::new(tokens).expect("toy vocabulary is valid")
}

fn ctx_id(i: usize) -> TokenId {
    (SCAFFOLD.len() + ITEM_COUNT + i) as TokenId
}

fn par_id(i: usize) -> TokenId {
    (SCAFFOLD.len() + 2 * ITEM_COUNT + i) as TokenId
}

/// Base gap of item `i`: contextual minus parametric logit before steering.
pub fn base_gap(i: usize) -> f64 {
    -3.0 + 0.25 * i as f64
}

fn rank_combo(i: usize) -> (u8, u8, u8) {
    // 12 combos, each appearing twice across the 24 items.
    let c = i % 12;
    (
        1 + (c % 2) as u8,
        1 + ((c / 2) % 2) as u8,
        1 + (c / 4) as u8,
    )
}

fn freq_for_rank(r_pop: u8) -> u64 {
    match r_pop {
        1 => 500,
        2 => 50_000,
        _ => 2_000_000,
    }
}

/// Build the fixture from scratch; [`load_packaged`] parses the shipped copy.
pub fn build_fixture() -> ToyFixture {
    let vocab = vocabulary();
    let size = vocab.size();

    let mut items = Vec::with_capacity(ITEM_COUNT);
    let mut base_entries = Vec::new();
    let answer_id = vocab.id_of("Answer:").expect("scaffold token");

    for i in 0..ITEM_COUNT {
        let (r_pert, r_det, r_pop) = rank_combo(i);
        let freq = freq_for_rank(r_pop);
        items.push(ConflictItem {
            id: format!("toy-{i:02}"),
            question: format!("q{i}"),
            context: format!("evidence says ctx{i}"),
            option_context: format!("ctx{i}"),
            option_parametric: format!("par{i}"),
            r_pert,
            r_det,
            r_pop,
            subject: format!("q{i}"),
            relation: "fact-of".into(),
            object: format!("par{i}"),
            subject_freq: Some(freq),
        });

        // Seen right before the answer slot, score this item's two options;
        // the entry is keyed on whichever option was listed last.
        let mut logits = vec![-8.0; size];
        logits[ctx_id(i) as usize] = base_gap(i);
        logits[par_id(i) as usize] = 0.0;
        let logits = LogitVector::new(logits).expect("toy logits are valid");
        base_entries.push((vec![ctx_id(i), answer_id], logits.clone()));
        base_entries.push((vec![par_id(i), answer_id], logits));
    }

    let base = TableLm::new(
        vocab.clone(),
        2,
        base_entries,
        LogitVector::new(vec![0.0; size]).unwrap(),
    )
    .expect("toy base model is valid");

    // The positive proxy favors every contextual token by +0.5 and dislikes
    // every parametric token by -0.5; the negative proxy is its mirror.
    let mut pos_default = vec![0.0; size];
    let mut neg_default = vec![0.0; size];
    for i in 0..ITEM_COUNT {
        pos_default[ctx_id(i) as usize] = 0.5;
        pos_default[par_id(i) as usize] = -0.5;
        neg_default[ctx_id(i) as usize] = -0.5;
        neg_default[par_id(i) as usize] = 0.5;
    }
    let pos = TableLm::new(
        vocab.clone(),
        0,
        vec![],
        LogitVector::new(pos_default).unwrap(),
    )
    .expect("toy positive proxy is valid");
    let neg = TableLm::new(vocab, 0, vec![], LogitVector::new(neg_default).unwrap())
        .expect("toy negative proxy is valid");

    ToyFixture {
        items,
        base,
        pos,
        neg,
    }
}

/// Render the fixture's dataset exactly as packaged in `assets/toy`.
pub fn items_jsonl(items: &[ConflictItem]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("toy item serializes"));
        out.push('\n');
    }
    out
}

/// Parse the packaged fixture files.
pub fn load_packaged() -> Result<ToyFixture> {
    Ok(ToyFixture {
        items: parse_conflict_items(ITEMS_JSONL, "assets/toy/items.jsonl")?,
        base: TableLm::from_json(BASE_LM_JSON, "assets/toy/base.lm.json")?,
        pos: TableLm::from_json(POS_LM_JSON, "assets/toy/pos.lm.json")?,
        neg: TableLm::from_json(NEG_LM_JSON, "assets/toy/neg.lm.json")?,
    })
}
