//! Shared fixtures: a small vocabulary, schema and random examples.
#![allow(dead_code)]

use adaprompt::prompt::{required_tokens, Example, PromptTemplate, TemplateForm};
use adaprompt::verbalizer::{build_schema, RelationSchema, RuleConfig};
use adaprompt::{ToyMlm, ToyMlmConfig, Vocab};
use rand::seq::SliceRandom;
use rand::Rng;

pub const LABELS: [&str; 4] = ["per:city_of_death", "org:city_of_headquarters", "per:employee_of", "no_relation"];

/// Plain sentence words. `headquarters` and `chairmanship` only exist as
/// pieces, and `zyzzyva` is unknown.
pub const WORDS: [&str; 20] = [
    "alice", "bob", "acme", "paris", "works", "for", "died", "in", "born", "founded", "company", "said", "on",
    "monday", "a", "of", "headquarters", "chairmanship", "zyzzyva", "city",
];

pub fn vocab() -> Vocab {
    let mut tokens = required_tokens(&PromptTemplate::new(TemplateForm::Copula));
    tokens.extend(
        [
            "alice", "bob", "acme", "paris", "works", "for", "died", "in", "born", "founded", "company", "said",
            "on", "monday", "a", "of", "person", "city", "death", "organization", "head", "##quarters",
            "employee", "none", "chair", "##man", "##ship",
        ]
        .map(String::from),
    );
    Vocab::new(tokens)
}

pub fn schema() -> RelationSchema {
    build_schema(&LABELS, Some("no_relation"), RuleConfig::default()).unwrap()
}

pub fn model(config: ToyMlmConfig) -> ToyMlm {
    ToyMlm::new(config, vocab()).unwrap()
}

pub fn small_config(seed: u64) -> ToyMlmConfig {
    ToyMlmConfig {
        d: 16,
        layers: 1,
        heads: 2,
        ffn: 32,
        vocab_size: 64,
        max_len: 64,
        seed,
    }
}

/// A random example of `len` words with two disjoint entity spans in
/// either order.
pub fn random_example<R: Rng>(rng: &mut R, id: String, len: usize) -> Example {
    assert!(len >= 2);
    let tokens: Vec<String> = (0..len).map(|_| WORDS.choose(rng).unwrap().to_string()).collect();
    let cut = rng.gen_range(1..len);
    let a = rng.gen_range(0..cut);
    let a_end = rng.gen_range(a + 1..=cut);
    let b = rng.gen_range(cut..len);
    let b_end = rng.gen_range(b + 1..=len);
    let (subj_span, obj_span) = if rng.gen_bool(0.5) {
        ((a, a_end), (b, b_end))
    } else {
        ((b, b_end), (a, a_end))
    };
    Example {
        id,
        tokens,
        subj_span,
        obj_span,
        relation: LABELS.choose(rng).unwrap().to_string(),
    }
}
