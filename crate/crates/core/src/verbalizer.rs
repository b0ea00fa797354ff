//! Label-word mapping: turns relation label strings such as
//! `per:city_of_death` into sets of ordinary words (`person city death`)
//! that the masked language model can predict at the mask slot.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backend::ModelBackend;
use crate::error::{Error, Result};

/// Rewriting rules applied to label fragments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RuleConfig {
    /// Fragment → expansion word, e.g. `per` → `person`.
    pub abbreviations: BTreeMap<String, String>,
    /// Fragments dropped from the decomposition.
    pub stopwords: Vec<String>,
    /// The single label word used for the N/A class.
    pub na_word: String,
}

impl Default for RuleConfig {
    fn default() -> Self {
        let abbreviations = [("per", "person"), ("org", "organization"), ("gpe", "country")]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        RuleConfig {
            abbreviations,
            stopwords: ["of", "by", "in", "and", "or"].map(String::from).to_vec(),
            na_word: "none".to_string(),
        }
    }
}

impl RuleConfig {
    /// Defaults with `by` kept as a word. Under the default stopwords
    /// `org:founded_by` and `org:founded` collapse to the same set.
    pub fn tacred() -> Self {
        let mut rules = RuleConfig::default();
        rules.stopwords.retain(|s| s != "by");
        rules
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RelationLabel {
    pub raw: String,
    pub class_index: usize,
}

/// The label words of one relation. `vocab_ids` stays empty until the set
/// is resolved against a backend vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelWordSet {
    pub label: RelationLabel,
    pub words: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub vocab_ids: Vec<Vec<u32>>,
}

impl LabelWordSet {
    pub fn is_resolved(&self) -> bool {
        self.vocab_ids.len() == self.words.len() && self.vocab_ids.iter().all(|ids| !ids.is_empty())
    }
}

/// Row of the exported schema JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaEntry {
    pub label: String,
    pub class_index: usize,
    pub words: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelationSchema {
    labels: Vec<RelationLabel>,
    na_label: Option<usize>,
    rules: RuleConfig,
    word_sets: Vec<LabelWordSet>,
    by_raw: HashMap<String, usize>,
}

fn check_label(raw: &str) -> Result<()> {
    if raw.is_empty() || raw.chars().any(char::is_whitespace) {
        return Err(Error::InvalidLabel(raw.to_string()));
    }
    Ok(())
}

/// Applies the decomposition rules to a raw label string. Fragment matching
/// against the abbreviation table and stopword list is case-insensitive.
pub fn decompose_raw(raw: &str, is_na: bool, rules: &RuleConfig) -> Result<Vec<String>> {
    if is_na {
        return Ok(vec![rules.na_word.to_lowercase()]);
    }
    let mut words: Vec<String> = Vec::new();
    for fragment in raw.split([':', '_']).filter(|f| !f.is_empty()) {
        let key = fragment.to_lowercase();
        let expanded = rules
            .abbreviations
            .get(&key)
            .map(String::as_str)
            .unwrap_or(fragment);
        for piece in expanded.split_whitespace() {
            let piece = piece.to_lowercase();
            if rules.stopwords.iter().any(|s| s.eq_ignore_ascii_case(&piece)) {
                continue;
            }
            if !words.contains(&piece) {
                words.push(piece);
            }
        }
    }
    if words.is_empty() {
        return Err(Error::EmptyDecomposition(raw.to_string()));
    }
    Ok(words)
}

impl RelationSchema {
    pub fn labels(&self) -> &[RelationLabel] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn na_label(&self) -> Option<&RelationLabel> {
        self.na_label.map(|i| &self.labels[i])
    }

    pub fn na_index(&self) -> Option<usize> {
        self.na_label
    }

    pub fn rules(&self) -> &RuleConfig {
        &self.rules
    }

    pub fn label(&self, class_index: usize) -> Option<&RelationLabel> {
        self.labels.get(class_index)
    }

    pub fn lookup(&self, raw: &str) -> Result<&RelationLabel> {
        self.by_raw
            .get(raw)
            .map(|&i| &self.labels[i])
            .ok_or_else(|| Error::UnknownLabel(raw.to_string()))
    }

    pub fn index_of(&self, raw: &str) -> Result<usize> {
        self.lookup(raw).map(|l| l.class_index)
    }

    /// Unresolved word sets in class order.
    pub fn word_sets(&self) -> &[LabelWordSet] {
        &self.word_sets
    }

    pub fn export(&self) -> Vec<SchemaEntry> {
        self.word_sets
            .iter()
            .map(|ws| SchemaEntry {
                label: ws.label.raw.clone(),
                class_index: ws.label.class_index,
                words: ws.words.clone(),
            })
            .collect()
    }

    pub fn export_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.export())?)
    }

    /// Resolves every class's word set against the backend vocabulary.
    pub fn resolve(&self, backend: &dyn ModelBackend) -> Result<Vec<LabelWordSet>> {
        self.word_sets
            .iter()
            .map(|ws| resolve_vocab(ws, backend))
            .collect()
    }
}

/// Creates a schema with class indices in input order. Every label is
/// decomposed up front so that collisions surface here.
pub fn build_schema<S: AsRef<str>>(
    label_strings: &[S],
    na_string: Option<&str>,
    rules: RuleConfig,
) -> Result<RelationSchema> {
    if label_strings.is_empty() {
        return Err(Error::EmptySchema);
    }
    let mut labels = Vec::with_capacity(label_strings.len());
    let mut by_raw = HashMap::new();
    for (class_index, raw) in label_strings.iter().enumerate() {
        let raw = raw.as_ref();
        check_label(raw)?;
        if by_raw.insert(raw.to_string(), class_index).is_some() {
            return Err(Error::DuplicateLabel(raw.to_string()));
        }
        labels.push(RelationLabel {
            raw: raw.to_string(),
            class_index,
        });
    }
    let na_label = match na_string {
        Some(na) => Some(
            *by_raw
                .get(na)
                .ok_or_else(|| Error::UnknownLabel(na.to_string()))?,
        ),
        None => None,
    };

    let mut schema = RelationSchema {
        labels,
        na_label,
        rules,
        word_sets: Vec::new(),
        by_raw,
    };
    let mut seen: HashMap<Vec<String>, usize> = HashMap::new();
    for label in &schema.labels {
        let words = decompose_raw(&label.raw, na_label == Some(label.class_index), &schema.rules)?;
        let mut key = words.clone();
        key.sort();
        if let Some(&other) = seen.get(&key) {
            return Err(Error::DuplicateWordSet {
                first: schema.labels[other].raw.clone(),
                second: label.raw.clone(),
                words,
            });
        }
        seen.insert(key, label.class_index);
        schema.word_sets.push(LabelWordSet {
            label: label.clone(),
            words,
            vocab_ids: Vec::new(),
        });
    }
    Ok(schema)
}

/// Decomposes one label of `schema` into its word set.
pub fn decompose(label: &RelationLabel, schema: &RelationSchema) -> Result<LabelWordSet> {
    let own = schema.lookup(&label.raw)?;
    let words = decompose_raw(&own.raw, schema.na_index() == Some(own.class_index), schema.rules())?;
    let mut key = words.clone();
    key.sort();
    for other in schema.labels().iter().filter(|l| l.raw != own.raw) {
        let other_words =
            decompose_raw(&other.raw, schema.na_index() == Some(other.class_index), schema.rules())?;
        let mut other_key = other_words;
        other_key.sort();
        if other_key == key {
            return Err(Error::DuplicateWordSet {
                first: other.raw.clone(),
                second: own.raw.clone(),
                words,
            });
        }
    }
    Ok(LabelWordSet {
        label: own.clone(),
        words,
        vocab_ids: Vec::new(),
    })
}

/// Fills `vocab_ids` with the backend's units for each word, in order.
pub fn resolve_vocab(word_set: &LabelWordSet, backend: &dyn ModelBackend) -> Result<LabelWordSet> {
    let vocab = backend.vocab();
    let unk = vocab.special().unk;
    let vocab_ids = word_set
        .words
        .iter()
        .map(|w| match vocab.tokenize_word(w) {
            Some(ids) if !ids.is_empty() && !ids.contains(&unk) => Ok(ids),
            _ => Err(Error::UnresolvableWord(w.clone())),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LabelWordSet {
        vocab_ids,
        ..word_set.clone()
    })
}

/// The 42 relation types of the TACRED label inventory, `no_relation` last.
pub const TACRED_LABELS: [&str; 42] = [
    "per:title",
    "org:top_members/employees",
    "per:employee_of",
    "org:alternate_names",
    "org:country_of_headquarters",
    "per:countries_of_residence",
    "org:city_of_headquarters",
    "per:cities_of_residence",
    "per:age",
    "per:stateorprovinces_of_residence",
    "per:origin",
    "org:subsidiaries",
    "org:parents",
    "per:spouse",
    "org:stateorprovince_of_headquarters",
    "per:children",
    "per:other_family",
    "per:alternate_names",
    "org:members",
    "per:siblings",
    "per:schools_attended",
    "per:parents",
    "per:date_of_death",
    "org:member_of",
    "org:founded_by",
    "org:website",
    "per:cause_of_death",
    "org:political/religious_affiliation",
    "org:founded",
    "per:city_of_death",
    "org:shareholders",
    "org:number_of_employees/members",
    "per:date_of_birth",
    "per:city_of_birth",
    "per:charges",
    "per:stateorprovince_of_death",
    "per:religion",
    "per:stateorprovince_of_birth",
    "per:country_of_birth",
    "org:dissolved",
    "per:country_of_death",
    "no_relation",
];

#[cfg(test)]
mod tests {
    use super::*;

    fn words(raw: &str) -> Vec<String> {
        decompose_raw(raw, false, &RuleConfig::default()).unwrap()
    }

    #[test]
    fn city_of_death() {
        assert_eq!(words("per:city_of_death"), ["person", "city", "death"]);
    }

    #[test]
    fn founded_by_drops_stopword() {
        assert_eq!(words("org:founded_by"), ["organization", "founded"]);
    }

    #[test]
    fn single_fragment_passes_through() {
        assert_eq!(words("title"), ["title"]);
    }

    #[test]
    fn all_abbreviation_fragments_keep_both_expansions() {
        assert_eq!(words("per:org"), ["person", "organization"]);
    }

    #[test]
    fn duplicates_keep_first_occurrence() {
        assert_eq!(words("per:person_of_per"), ["person"]);
    }

    #[test]
    fn all_stopwords_is_empty_decomposition() {
        let err = decompose_raw("of_by", false, &RuleConfig::default()).unwrap_err();
        assert!(matches!(err, Error::EmptyDecomposition(_)));
    }

    #[test]
    fn na_label_maps_to_na_word() {
        assert_eq!(
            decompose_raw("no_relation", true, &RuleConfig::default()).unwrap(),
            ["none"]
        );
    }

    #[test]
    fn two_label_schema() {
        let schema =
            build_schema(&["per:title", "no_relation"], Some("no_relation"), RuleConfig::default())
                .unwrap();
        assert_eq!(schema.len(), 2);
        assert_eq!(schema.na_label().unwrap().raw, "no_relation");
        assert_eq!(schema.word_sets()[0].words, ["person", "title"]);
    }

    #[test]
    fn empty_schema_is_rejected() {
        let labels: [&str; 0] = [];
        assert!(matches!(
            build_schema(&labels, None, RuleConfig::default()),
            Err(Error::EmptySchema)
        ));
    }

    #[test]
    fn duplicate_raw_label_is_rejected() {
        assert!(matches!(
            build_schema(&["a", "a"], None, RuleConfig::default()),
            Err(Error::DuplicateLabel(_))
        ));
    }

    #[test]
    fn colliding_word_sets_are_rejected() {
        // "per:city" and "person_city" both become {person, city}
        let err = build_schema(&["per:city", "person_city"], None, RuleConfig::default()).unwrap_err();
        assert!(matches!(err, Error::DuplicateWordSet { .. }));
    }

    #[test]
    fn whitespace_in_label_is_rejected() {
        assert!(matches!(
            build_schema(&["per title"], None, RuleConfig::default()),
            Err(Error::InvalidLabel(_))
        ));
    }

    #[test]
    fn tacred_inventory_collides_under_default_stopwords() {
        let err = build_schema(&TACRED_LABELS, Some("no_relation"), RuleConfig::default()).unwrap_err();
        match err {
            Error::DuplicateWordSet { first, second, .. } => {
                assert_eq!((first.as_str(), second.as_str()), ("org:founded_by", "org:founded"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn decompose_matches_schema_word_sets() {
        let schema = build_schema(&TACRED_LABELS, Some("no_relation"), RuleConfig::tacred()).unwrap();
        for (label, ws) in schema.labels().iter().zip(schema.word_sets()) {
            assert_eq!(&decompose(label, &schema).unwrap(), ws);
        }
    }

    #[test]
    fn rule_config_json() {
        let cfg = RuleConfig::from_json(
            r#"{"abbreviations": {"loc": "location"}, "stopwords": ["of"], "na_word": "nothing"}"#,
        )
        .unwrap();
        assert_eq!(cfg.abbreviations["loc"], "location");
        assert!(RuleConfig::from_json(r#"{"bogus": 1}"#).is_err());
    }
}
