//! Synthetic templated relation corpus for end-to-end runs of the toy
//! backend.
//!
//! A seeded world of fixed facts (each person has a birth city, a death
//! city and an employer; each organization a founder and a headquarters
//! city) is described by sentences drawn from per-relation patterns. Six
//! relations share entity-type pairs (two person–city relations, and a
//! `no_relation` class over pairs no fact links), so entity types alone do
//! not decide the label.
//!
//! The companion pretraining corpus contains plain sentences plus
//! "knowledge" documents that follow a sentence with a cloze statement
//! naming its relation's most specific label word. Some patterns are
//! withheld from the knowledge documents, so part of the task can only be
//! learned from labelled data.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::vocab::SEP;
use crate::backend::{AdamConfig, PretrainOptions, ToyMlmConfig, Vocab};
use crate::data::Dataset;
use crate::error::Result;
use crate::prompt::{template_words, Example, Markers};
use crate::verbalizer::{build_schema, decompose_raw, RelationSchema, RuleConfig};

pub const NA_RELATION: &str = "no_relation";

/// Relation labels in class order, N/A last.
pub const RELATIONS: [&str; 6] = [
    "per:city_of_birth",
    "per:city_of_death",
    "per:employee_of",
    "org:founded_by",
    "org:city_of_headquarters",
    NA_RELATION,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Person,
    City,
    Org,
}

const PERSONS: &[&str] = &[
    "alice", "bruno", "carla", "dmitri", "elena", "farid", "greta", "hiro", "ines", "jonas", "kemal", "lena", "marco",
    "nadia", "oskar", "priya", "quentin", "rosa", "stefan", "tara", "umar", "vera", "walter", "xenia", "yusuf",
    "zora", "anton", "bianca", "cyrus", "dalia", "emil", "fiona", "goran", "hanna", "igor", "julia", "karim", "luisa",
    "mateo", "nora",
];

const CITIES: &[&str] = &[
    "paris", "lagos", "lima", "oslo", "cairo", "dublin", "kyoto", "quito", "riga", "sofia", "turin", "vienna",
    "zagreb", "austin", "boston", "denver", "geneva", "hanoi", "jakarta", "kiev", "lisbon", "madrid", "nairobi",
    "porto", "seoul", "tunis", "warsaw", "bergen", "malmo", "leeds",
];

const ORG_NAMES: &[&str] = &[
    "acme", "globex", "initech", "umbrella", "vandelay", "hooli", "stark", "wayne", "tyrell", "cyberdyne", "soylent",
    "gringotts", "monarch", "oscorp", "zorg", "aperture", "blackmesa", "virtucon", "duff", "wonka", "nakatomi",
    "ollivander", "pendant", "sirius", "veridian",
];

const ORG_SUFFIXES: &[&str] = &["corp", "group", "labs", "bank"];

const PREFIXES: &[&str] = &[
    "yesterday ,",
    "according to reports ,",
    "in 1998 ,",
    "as the paper noted ,",
    "last year ,",
    "reportedly ,",
];

const SUFFIXES: &[&str] = &[
    ", sources said",
    "in the spring",
    ", officials confirmed",
    "long ago",
    ", the article says",
];

/// Sentence patterns per relation with `S` and `O` as entity slots.
struct RelationSpec {
    label: &'static str,
    types: &'static [(Kind, Kind)],
    patterns: &'static [&'static str],
}

const SPECS: &[RelationSpec] = &[
    RelationSpec {
        label: "per:city_of_birth",
        types: &[(Kind::Person, Kind::City)],
        patterns: &[
            "S was born in O",
            "S is a native of O",
            "O is the birthplace of S",
            "S came into the world in O",
            "the birth of S took place in O",
            "S , born and raised in O , smiled",
            "O saw the birth of young S",
            "S entered life at a hospital in O",
        ],
    },
    RelationSpec {
        label: "per:city_of_death",
        types: &[(Kind::Person, Kind::City)],
        patterns: &[
            "S died in O",
            "S passed away in O",
            "O is where S died",
            "S was killed in O",
            "the death of S occurred in O",
            "S spent final days in O before dying",
            "S perished during a storm in O",
            "O mourned the sudden loss of S",
        ],
    },
    RelationSpec {
        label: "per:employee_of",
        types: &[(Kind::Person, Kind::Org)],
        patterns: &[
            "S works for O",
            "S is employed by O",
            "O hired S",
            "S joined O as an engineer",
            "S is a manager at O",
            "O employs S",
            "S took a job at O",
            "S is on the payroll of O",
        ],
    },
    RelationSpec {
        label: "org:founded_by",
        types: &[(Kind::Org, Kind::Person)],
        patterns: &[
            "S was founded by O",
            "O founded S",
            "O established S",
            "O created S from scratch",
            "S , started by O , grew fast",
            "the founder of S is O",
            "O launched S with friends",
            "S was set up by O",
        ],
    },
    RelationSpec {
        label: "org:city_of_headquarters",
        types: &[(Kind::Org, Kind::City)],
        patterns: &[
            "S is headquartered in O",
            "S is based in O",
            "S has its headquarters in O",
            "O hosts the main office of S",
            "the headquarters of S are in O",
            "S runs its operations from O",
            "S moved its central office to O",
            "O is home to the offices of S",
        ],
    },
    RelationSpec {
        label: NA_RELATION,
        types: &[
            (Kind::Person, Kind::City),
            (Kind::Person, Kind::Org),
            (Kind::Org, Kind::Person),
            (Kind::Org, Kind::City),
        ],
        patterns: &[
            "S visited O",
            "S talked about O",
            "S wrote a report on O",
            "S and O were mentioned in the news",
            "S never heard of O",
            "S criticized O",
            "S sent a letter to O",
            "S read a story about O",
        ],
    },
];

/// Words the tokenizer must split: the vocabulary holds the pieces only.
const SPLIT_WORDS: &[(&str, &[&str])] = &[("headquarters", &["head", "##quarters"])];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub train_per_class: usize,
    /// Size of the official dev set per class; 0 means no dev set.
    pub dev_per_class: usize,
    pub test_per_class: usize,
    pub pretrain_documents: usize,
    /// Patterns per relation that never appear in knowledge documents.
    pub withheld_patterns: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            train_per_class: 160,
            dev_per_class: 20,
            test_per_class: 50,
            pretrain_documents: 3000,
            withheld_patterns: 2,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub dataset: Dataset,
    pub vocab: Vocab,
    /// Token-id sequences for masked-token pretraining.
    pub pretrain: Vec<Vec<u32>>,
}

impl SynthCorpus {
    pub fn schema(&self) -> Result<RelationSchema> {
        synth_schema()
    }
}

/// Toy encoder size used for the synthetic corpus.
pub fn model_config() -> ToyMlmConfig {
    ToyMlmConfig {
        max_len: 64,
        ..ToyMlmConfig::default()
    }
}

/// Pretraining schedule for the synthetic corpus: 500 steps with large
/// batches, a raised learning rate and a 30% masking rate, so the cloze
/// statements are learned within the step budget.
pub fn pretrain_options() -> PretrainOptions {
    PretrainOptions {
        steps: 500,
        batch_size: 256,
        mask_prob: 0.3,
        adam: AdamConfig {
            learning_rate: 8e-3,
            ..AdamConfig::default()
        },
        seed: 0,
    }
}

pub fn synth_schema() -> Result<RelationSchema> {
    build_schema(&RELATIONS, Some(NA_RELATION), RuleConfig::default())
}

/// Fixed facts that sentences and pretraining documents describe.
#[derive(Debug, Clone)]
struct World {
    persons: Vec<Vec<String>>,
    cities: Vec<Vec<String>>,
    orgs: Vec<Vec<String>>,
    /// Per person: birth city, death city, employer.
    person_facts: Vec<(usize, usize, usize)>,
    /// Per organization: founder, headquarters city.
    org_facts: Vec<(usize, usize)>,
    linked: HashSet<(Vec<String>, Vec<String>)>,
}

impl World {
    fn new(rng: &mut ChaCha8Rng) -> Self {
        let one = |list: &[&str]| list.iter().map(|w| vec![w.to_string()]).collect::<Vec<_>>();
        let orgs: Vec<Vec<String>> = ORG_NAMES
            .iter()
            .map(|name| {
                let mut v = vec![name.to_string()];
                if rng.gen_bool(0.5) {
                    v.push(ORG_SUFFIXES.choose(rng).expect("non-empty").to_string());
                }
                v
            })
            .collect();
        let (np, nc, no) = (PERSONS.len(), CITIES.len(), orgs.len());
        let person_facts: Vec<(usize, usize, usize)> = (0..np)
            .map(|_| {
                let birth = rng.gen_range(0..nc);
                let death = (birth + rng.gen_range(1..nc)) % nc;
                (birth, death, rng.gen_range(0..no))
            })
            .collect();
        let org_facts: Vec<(usize, usize)> = (0..no).map(|_| (rng.gen_range(0..np), rng.gen_range(0..nc))).collect();
        let mut world = World {
            persons: one(PERSONS),
            cities: one(CITIES),
            orgs,
            person_facts,
            org_facts,
            linked: HashSet::new(),
        };
        for r in 0..SPECS.len() - 1 {
            for i in 0..world.fact_count(r) {
                let pair = world.fact(r, i);
                world.linked.insert(pair);
            }
        }
        world
    }

    fn fact_count(&self, relation: usize) -> usize {
        if relation < 3 {
            self.persons.len()
        } else {
            self.orgs.len()
        }
    }

    /// The `i`-th fact of a positive relation, in `SPECS` order.
    fn fact(&self, relation: usize, i: usize) -> (Vec<String>, Vec<String>) {
        let (p, o) = (self.person_facts.get(i), self.org_facts.get(i));
        match relation {
            0 => (self.persons[i].clone(), self.cities[p.expect("person").0].clone()),
            1 => (self.persons[i].clone(), self.cities[p.expect("person").1].clone()),
            2 => (self.persons[i].clone(), self.orgs[p.expect("person").2].clone()),
            3 => (self.orgs[i].clone(), self.persons[o.expect("org").0].clone()),
            _ => (self.orgs[i].clone(), self.cities[o.expect("org").1].clone()),
        }
    }

    fn entity(&self, kind: Kind, rng: &mut ChaCha8Rng) -> Vec<String> {
        let list = match kind {
            Kind::Person => &self.persons,
            Kind::City => &self.cities,
            Kind::Org => &self.orgs,
        };
        list.choose(rng).expect("non-empty").clone()
    }

    /// A true fact for a positive relation; for `no_relation`, a pair of
    /// entities no fact links.
    fn pair(&self, relation: usize, rng: &mut ChaCha8Rng) -> (Vec<String>, Vec<String>) {
        let spec = &SPECS[relation];
        if spec.label != NA_RELATION {
            return self.fact(relation, rng.gen_range(0..self.fact_count(relation)));
        }
        loop {
            let &(sk, ok) = spec.types.choose(rng).expect("non-empty");
            let pair = (self.entity(sk, rng), self.entity(ok, rng));
            if pair.0 != pair.1 && !self.linked.contains(&pair) {
                return pair;
            }
        }
    }
}

/// Fills a pattern with a pair for `relation`; returns tokens and the two
/// spans.
fn instantiate(
    world: &World,
    relation: usize,
    pattern: &str,
    rng: &mut ChaCha8Rng,
) -> (Vec<String>, (usize, usize), (usize, usize)) {
    let (subj, obj) = world.pair(relation, rng);
    let mut tokens: Vec<String> = Vec::new();
    if rng.gen_bool(0.3) {
        tokens.extend(PREFIXES.choose(rng).expect("non-empty").split_whitespace().map(String::from));
    }
    let (mut s_span, mut o_span) = ((0, 0), (0, 0));
    for word in pattern.split_whitespace() {
        match word {
            "S" => {
                s_span = (tokens.len(), tokens.len() + subj.len());
                tokens.extend(subj.iter().cloned());
            }
            "O" => {
                o_span = (tokens.len(), tokens.len() + obj.len());
                tokens.extend(obj.iter().cloned());
            }
            w => tokens.push(w.to_string()),
        }
    }
    if rng.gen_bool(0.3) {
        tokens.extend(SUFFIXES.choose(rng).expect("non-empty").split_whitespace().map(String::from));
    }
    (tokens, s_span, o_span)
}

fn examples(world: &World, prefix: &str, per_class: usize, rng: &mut ChaCha8Rng) -> Vec<Example> {
    let mut out = Vec::with_capacity(per_class * SPECS.len());
    for (r, spec) in SPECS.iter().enumerate() {
        for i in 0..per_class {
            let pattern = spec.patterns.choose(rng).expect("non-empty");
            let (tokens, subj_span, obj_span) = instantiate(world, r, pattern, rng);
            out.push(Example {
                id: format!("{prefix}-{}-{i}", spec.label.replace(':', "_")),
                tokens,
                subj_span,
                obj_span,
                relation: spec.label.to_string(),
            });
        }
    }
    out
}

fn build_vocab(schema: &RelationSchema) -> Vocab {
    let mut words: Vec<String> = Markers::default().all().iter().map(|s| s.to_string()).collect();
    words.extend(template_words().iter().map(|s| s.to_string()));
    for ws in schema.word_sets() {
        words.extend(ws.words.iter().cloned());
    }
    words.extend(PERSONS.iter().chain(CITIES).chain(ORG_NAMES).chain(ORG_SUFFIXES).map(|s| s.to_string()));
    for text in PREFIXES.iter().chain(SUFFIXES) {
        words.extend(text.split_whitespace().map(String::from));
    }
    for spec in SPECS {
        for p in spec.patterns {
            words.extend(p.split_whitespace().filter(|w| *w != "S" && *w != "O").map(String::from));
        }
    }
    let mut tokens: Vec<String> = Vec::new();
    for w in words {
        match SPLIT_WORDS.iter().find(|(whole, _)| *whole == w) {
            Some((_, pieces)) => tokens.extend(pieces.iter().map(|p| p.to_string())),
            None => tokens.push(w),
        }
    }
    Vocab::new(tokens)
}

/// A pretraining document. Knowledge documents append a cloze statement
/// in one of the two template forms with `slot_word` in the slot and,
/// half the time, entity markers.
fn pretrain_document(
    vocab: &Vocab,
    world: &World,
    relation: usize,
    slot_word: &str,
    pattern: &str,
    knowledge: bool,
    rng: &mut ChaCha8Rng,
) -> Vec<u32> {
    let (tokens, s, o) = instantiate(world, relation, pattern, rng);
    if !knowledge {
        return vocab.encode_words(&tokens);
    }
    let marked = rng.gen_bool(0.5);
    let m = Markers::default();
    let wrap = |span: (usize, usize), open: &str, close: &str| {
        let mut v = Vec::new();
        if marked {
            v.push(open.to_string());
        }
        v.extend(tokens[span.0..span.1].iter().cloned());
        if marked {
            v.push(close.to_string());
        }
        v
    };
    let mut sentence: Vec<String> = Vec::new();
    for (i, t) in tokens.iter().enumerate() {
        if marked && i == s.0 {
            sentence.push(m.subj_open.clone());
        }
        if marked && i == o.0 {
            sentence.push(m.obj_open.clone());
        }
        sentence.push(t.clone());
        if marked && i + 1 == s.1 {
            sentence.push(m.subj_close.clone());
        }
        if marked && i + 1 == o.1 {
            sentence.push(m.obj_close.clone());
        }
    }
    let subj = wrap(s, &m.subj_open, &m.subj_close);
    let obj = wrap(o, &m.obj_open, &m.obj_close);
    let word = slot_word.to_string();
    let mut cloze: Vec<String> = Vec::new();
    if rng.gen_bool(0.5) {
        cloze.extend(subj);
        cloze.push("is".into());
        cloze.push(word);
        cloze.extend(obj);
    } else {
        cloze.extend(["the", "relation", "between"].map(String::from));
        cloze.extend(subj);
        cloze.push("and".into());
        cloze.extend(obj);
        cloze.push("is".into());
        cloze.push(word);
    }
    cloze.push(".".into());
    let mut ids = vocab.encode_words(&sentence);
    ids.push(vocab.id(SEP).expect("control token"));
    ids.extend(vocab.encode_words(&cloze));
    ids
}

/// Generates the labelled dataset, its vocabulary and a pretraining corpus.
pub fn generate(config: &SynthConfig) -> Result<SynthCorpus> {
    let schema = synth_schema()?;
    let vocab = build_vocab(&schema);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let world = World::new(&mut rng);
    let train = examples(&world, "train", config.train_per_class, &mut rng);
    let dev = (config.dev_per_class > 0).then(|| examples(&world, "dev", config.dev_per_class, &mut rng));
    let test = examples(&world, "test", config.test_per_class, &mut rng);
    let dataset = Dataset::new(train, dev, test)?;

    let rules = RuleConfig::default();
    let mut pretrain = Vec::with_capacity(config.pretrain_documents);
    for _ in 0..config.pretrain_documents {
        let relation = rng.gen_range(0..SPECS.len());
        let spec = &SPECS[relation];
        let pattern_index = rng.gen_range(0..spec.patterns.len());
        let known = pattern_index < spec.patterns.len().saturating_sub(config.withheld_patterns);
        let words = decompose_raw(spec.label, spec.label == NA_RELATION, &rules)?;
        let slot_word = words.last().expect("decomposition is non-empty");
        pretrain.push(pretrain_document(
            &vocab,
            &world,
            relation,
            slot_word,
            spec.patterns[pattern_index],
            known,
            &mut rng,
        ));
    }
    Ok(SynthCorpus {
        dataset,
        vocab,
        pretrain,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            train_per_class: 12,
            dev_per_class: 2,
            test_per_class: 3,
            pretrain_documents: 50,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn deterministic() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.pretrain, b.pretrain);
    }

    #[test]
    fn vocabulary_fits_and_covers_everything() {
        let c = generate(&SynthConfig::default()).unwrap();
        assert!(c.vocab.len() <= 512, "{}", c.vocab.len());
        let unk = c.vocab.special().unk;
        for ex in c.dataset.all() {
            assert!(!c.vocab.encode_words(&ex.tokens).contains(&unk), "{:?}", ex.tokens);
        }
        assert!(c.pretrain.iter().flatten().all(|&id| id != unk));
    }

    #[test]
    fn headquarters_is_split_into_pieces() {
        let c = generate(&small()).unwrap();
        assert!(c.vocab.id("headquarters").is_none());
        assert_eq!(c.vocab.tokenize_word("headquarters").unwrap().len(), 2);
    }

    #[test]
    fn spans_cover_entities() {
        let c = generate(&small()).unwrap();
        for ex in c.dataset.all() {
            ex.validate().unwrap();
            let s = ex.subject().join(" ");
            assert!(!s.is_empty());
        }
        assert_eq!(c.dataset.relations().len(), 6);
    }
}
