mod common;

use adaprompt::verbalizer::{build_schema, decompose_raw, RuleConfig, TACRED_LABELS};
use adaprompt::Error;
use proptest::prelude::*;

fn fragment() -> impl Strategy<Value = String> {
    prop_oneof![
        "[a-z]{1,8}",
        Just("per".to_string()),
        Just("org".to_string()),
        Just("of".to_string()),
        Just("by".to_string()),
        Just("City".to_string()),
    ]
}

fn label() -> impl Strategy<Value = String> {
    (fragment(), prop::collection::vec(fragment(), 1..4))
        .prop_map(|(head, rest)| format!("{head}:{}", rest.join("_")))
}

proptest! {
    #[test]
    fn words_are_lowercase_unique_and_stopword_free(raw in label()) {
        let rules = RuleConfig::default();
        match decompose_raw(&raw, false, &rules) {
            Ok(words) => {
                prop_assert!(!words.is_empty());
                for (i, w) in words.iter().enumerate() {
                    prop_assert_eq!(w, &w.to_lowercase());
                    prop_assert!(!rules.stopwords.contains(w));
                    prop_assert!(!words[..i].contains(w));
                }
            }
            Err(e) => prop_assert!(matches!(e, Error::EmptyDecomposition(_))),
        }
    }

    #[test]
    fn decomposition_is_deterministic(raw in label()) {
        let rules = RuleConfig::default();
        prop_assert_eq!(
            decompose_raw(&raw, false, &rules).ok(),
            decompose_raw(&raw, false, &rules).ok()
        );
    }

    #[test]
    fn schema_indices_follow_input_order(labels in prop::collection::btree_set(label(), 1..8)) {
        let labels: Vec<String> = labels.into_iter().collect();
        if let Ok(schema) = build_schema(&labels, None, RuleConfig::tacred()) {
            for (i, raw) in labels.iter().enumerate() {
                prop_assert_eq!(schema.index_of(raw).unwrap(), i);
                prop_assert_eq!(&schema.word_sets()[i].label.raw, raw);
            }
        }
    }
}

#[test]
fn abbreviations_expand() {
    let words = decompose_raw("org:city_of_headquarters", false, &RuleConfig::default()).unwrap();
    assert_eq!(words, ["organization", "city", "headquarters"]);
    let words = decompose_raw("per:country_of_birth", false, &RuleConfig::default()).unwrap();
    assert_eq!(words, ["person", "country", "birth"]);
}

#[test]
fn na_label_maps_to_none() {
    let schema = common::schema();
    let na = schema.na_index().unwrap();
    assert_eq!(schema.word_sets()[na].words, ["none"]);
}

#[test]
fn collisions_are_reported() {
    let err = build_schema(&["org:founded_by", "org:founded"], None, RuleConfig::default()).unwrap_err();
    assert_eq!(err.kind(), "duplicate_word_set");
    assert!(build_schema(&["org:founded_by", "org:founded"], None, RuleConfig::tacred()).is_ok());
}

#[test]
fn tacred_inventory_has_distinct_word_sets() {
    let schema = build_schema(&TACRED_LABELS, Some("no_relation"), RuleConfig::tacred()).unwrap();
    let mut sets: Vec<&Vec<String>> = schema.word_sets().iter().map(|ws| &ws.words).collect();
    sets.sort();
    sets.dedup();
    assert_eq!(sets.len(), 42);
}

#[test]
fn rules_load_from_json() {
    let rules = RuleConfig::from_json(r#"{"stopwords": ["of"], "na_word": "nothing"}"#).unwrap();
    assert_eq!(decompose_raw("x", true, &rules).unwrap(), ["nothing"]);
    assert_eq!(decompose_raw("per:made_by", false, &rules).unwrap(), ["person", "made", "by"]);
    assert!(RuleConfig::from_json(r#"{"stopword": []}"#).is_err());
}
