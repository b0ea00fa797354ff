//! Seeded K-per-class training splits.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::prompt::Example;

/// Seed of the dev holdout drawn when a dataset ships no dev set. It is
/// independent of the split seeds so the dev set stays fixed.
pub const HOLDOUT_SEED: u64 = 0x5eed_de75;

/// Fraction of each class held out as dev when no dev set is given.
pub const HOLDOUT_FRACTION: f64 = 0.1;

/// Shots per class, or the whole training pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Shots {
    PerClass(usize),
    All,
}

impl fmt::Display for Shots {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shots::PerClass(k) => write!(f, "{k}"),
            Shots::All => f.write_str("all"),
        }
    }
}

impl std::str::FromStr for Shots {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("all") {
            return Ok(Shots::All);
        }
        match s.parse::<usize>() {
            Ok(k) if k >= 1 => Ok(Shots::PerClass(k)),
            _ => Err(Error::InvalidConfig(format!("shots must be a positive integer or `all`, got `{s}`"))),
        }
    }
}

impl Serialize for Shots {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Shots::PerClass(k) => s.serialize_u64(*k as u64),
            Shots::All => s.serialize_str("all"),
        }
    }
}

impl<'de> Deserialize<'de> for Shots {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(usize),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(k) => format!("{k}").parse(),
            Raw::Str(s) => s.parse(),
        }
        .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotSplit {
    pub k: Shots,
    pub seed: u64,
    pub train_ids: Vec<String>,
    pub dev_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

/// Training pool and dev set after the holdout step.
#[derive(Debug, Clone)]
pub struct Pools<'a> {
    pub train: Vec<&'a Example>,
    pub dev: Vec<&'a Example>,
}

fn by_class<'a>(examples: impl IntoIterator<Item = &'a Example>) -> BTreeMap<&'a str, Vec<&'a Example>> {
    let mut out: BTreeMap<&str, Vec<&Example>> = BTreeMap::new();
    for ex in examples {
        out.entry(ex.relation.as_str()).or_default().push(ex);
    }
    out
}

/// Splits off the dev set. The official dev set is used when present;
/// otherwise a seeded, per-class 10% of the training data is held out
/// (at least one instance for classes with two or more).
pub fn dev_pools(dataset: &Dataset) -> Pools<'_> {
    if let Some(dev) = &dataset.dev {
        return Pools {
            train: dataset.train.iter().collect(),
            dev: dev.iter().collect(),
        };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(HOLDOUT_SEED);
    let mut held: HashSet<&str> = HashSet::new();
    for (_, mut members) in by_class(&dataset.train) {
        if members.len() < 2 {
            continue;
        }
        let n = ((members.len() as f64 * HOLDOUT_FRACTION).round() as usize).max(1);
        members.shuffle(&mut rng);
        held.extend(members[..n].iter().map(|e| e.id.as_str()));
    }
    let (dev, train) = dataset.train.iter().partition(|e| held.contains(e.id.as_str()));
    Pools { train, dev }
}

/// Draws `k` training instances per class with a generator seeded by
/// `seed`. Classes are visited in sorted label order. Every relation that
/// occurs anywhere in the dataset must have at least `k` instances in the
/// training pool.
pub fn sample_split(dataset: &Dataset, k: Shots, seed: u64) -> Result<FewShotSplit> {
    let pools = dev_pools(dataset);
    let ids = |v: &[&Example]| v.iter().map(|e| e.id.clone()).collect::<Vec<_>>();
    let train_ids = match k {
        Shots::All => ids(&pools.train),
        Shots::PerClass(0) => return Err(Error::InvalidConfig("k must be at least 1".into())),
        Shots::PerClass(k) => {
            let classes = by_class(pools.train.iter().copied());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut out = Vec::new();
            for label in dataset.relations() {
                let members = classes.get(label.as_str()).map(Vec::as_slice).unwrap_or(&[]);
                if members.len() < k {
                    return Err(Error::InsufficientClassInstances {
                        label,
                        available: members.len(),
                        k,
                    });
                }
                out.extend(members.choose_multiple(&mut rng, k).map(|e| e.id.clone()));
            }
            out
        }
    };
    Ok(FewShotSplit {
        k,
        seed,
        train_ids,
        dev_ids: ids(&pools.dev),
        test_ids: dataset.test.iter().map(|e| e.id.clone()).collect(),
    })
}

/// Examples of a split, looked up by id.
#[derive(Debug, Clone)]
pub struct SplitData<'a> {
    pub train: Vec<&'a Example>,
    pub dev: Vec<&'a Example>,
    pub test: Vec<&'a Example>,
}

pub fn materialize<'a>(split: &FewShotSplit, dataset: &'a Dataset) -> Result<SplitData<'a>> {
    let index: HashMap<&str, &Example> = dataset.all().map(|e| (e.id.as_str(), e)).collect();
    let get = |ids: &[String]| {
        ids.iter()
            .map(|id| index.get(id.as_str()).copied().ok_or_else(|| Error::UnknownExample(id.clone())))
            .collect::<Result<Vec<_>>>()
    };
    Ok(SplitData {
        train: get(&split.train_ids)?,
        dev: get(&split.dev_ids)?,
        test: get(&split.test_ids)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(id: String, rel: &str) -> Example {
        Example {
            id,
            tokens: vec!["a".into(), "b".into()],
            subj_span: (0, 1),
            obj_span: (1, 2),
            relation: rel.into(),
        }
    }

    fn dataset(classes: &[&str], per_class: usize, with_dev: bool) -> Dataset {
        let make = |prefix: &str, n: usize| {
            classes
                .iter()
                .flat_map(|c| (0..n).map(move |i| ex(format!("{prefix}-{c}-{i}"), c)))
                .collect::<Vec<_>>()
        };
        Dataset::new(make("tr", per_class), with_dev.then(|| make("dv", 2)), make("te", 3)).unwrap()
    }

    #[test]
    fn two_per_class() {
        let ds = dataset(&["a", "b", "c"], 10, true);
        let s = sample_split(&ds, Shots::PerClass(2), 1).unwrap();
        assert_eq!(s.train_ids.len(), 6);
        for c in ["a", "b", "c"] {
            assert_eq!(s.train_ids.iter().filter(|id| id.contains(&format!("-{c}-"))).count(), 2);
        }
        assert_eq!(s.dev_ids.len(), 6);
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let ds = dataset(&["a", "b"], 30, false);
        let a = sample_split(&ds, Shots::PerClass(4), 7).unwrap();
        assert_eq!(a, sample_split(&ds, Shots::PerClass(4), 7).unwrap());
        assert_ne!(a.train_ids, sample_split(&ds, Shots::PerClass(4), 8).unwrap().train_ids);
    }

    #[test]
    fn holdout_is_fixed_across_seeds_and_disjoint() {
        let ds = dataset(&["a", "b"], 30, false);
        let a = sample_split(&ds, Shots::PerClass(4), 1).unwrap();
        let b = sample_split(&ds, Shots::PerClass(4), 2).unwrap();
        assert_eq!(a.dev_ids, b.dev_ids);
        assert_eq!(a.dev_ids.len(), 6);
        let dev: HashSet<_> = a.dev_ids.iter().collect();
        assert!(a.train_ids.iter().all(|id| !dev.contains(id)));
    }

    #[test]
    fn too_few_instances_is_an_error() {
        let ds = dataset(&["a"], 3, true);
        match sample_split(&ds, Shots::PerClass(4), 1) {
            Err(Error::InsufficientClassInstances { available, k, .. }) => assert_eq!((available, k), (3, 4)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn all_uses_whole_pool() {
        let ds = dataset(&["a", "b"], 5, true);
        assert_eq!(sample_split(&ds, Shots::All, 1).unwrap().train_ids.len(), 10);
    }

    #[test]
    fn shots_serde() {
        assert_eq!(serde_json::to_string(&Shots::All).unwrap(), "\"all\"");
        assert_eq!(serde_json::from_str::<Shots>("8").unwrap(), Shots::PerClass(8));
        assert_eq!(serde_json::from_str::<Shots>("\"ALL\"").unwrap(), Shots::All);
        assert!(serde_json::from_str::<Shots>("0").is_err());
    }
}
