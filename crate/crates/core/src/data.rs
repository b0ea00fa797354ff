//! Dataset ingestion.
//!
//! The native format is JSON lines with one record per line, either
//! sentence-level:
//!
//! ```json
//! {"id": "s1", "tokens": ["..."], "subj_span": [0, 2], "obj_span": [5, 6], "relation": "per:title"}
//! ```
//!
//! or dialogue-level:
//!
//! ```json
//! {"id": "d1", "turns": [{"speaker": "Speaker 1", "tokens": ["..."]}], "subj": "Speaker 1", "obj": "Emma", "relations": ["per:friends"]}
//! ```
//!
//! Dialogues are flattened to `speaker : utterance` segments in turn order
//! and expanded into one example per gold relation.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompt::{Example, Span};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SentenceRecord {
    pub id: String,
    pub tokens: Vec<String>,
    pub subj_span: [usize; 2],
    pub obj_span: [usize; 2],
    pub relation: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Turn {
    pub speaker: String,
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DialogueRecord {
    pub id: String,
    pub turns: Vec<Turn>,
    pub subj: String,
    pub obj: String,
    pub relations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Record {
    Sentence(SentenceRecord),
    Dialogue(DialogueRecord),
}

impl From<&Example> for SentenceRecord {
    fn from(ex: &Example) -> Self {
        SentenceRecord {
            id: ex.id.clone(),
            tokens: ex.tokens.clone(),
            subj_span: [ex.subj_span.0, ex.subj_span.1],
            obj_span: [ex.obj_span.0, ex.obj_span.1],
            relation: ex.relation.clone(),
        }
    }
}

/// Tokens of a dialogue in turn order, each turn as `speaker : utterance`.
pub fn flatten_dialogue(turns: &[Turn]) -> Vec<String> {
    let mut out = Vec::new();
    for turn in turns {
        out.extend(turn.speaker.split_whitespace().map(String::from));
        out.push(":".to_string());
        out.extend(turn.tokens.iter().cloned());
    }
    out
}

fn find_last(tokens: &[String], needle: &[String], avoid: Option<Span>) -> Option<Span> {
    if needle.is_empty() || needle.len() > tokens.len() {
        return None;
    }
    (0..=tokens.len() - needle.len()).rev().find_map(|s| {
        let span = (s, s + needle.len());
        let overlaps = avoid.is_some_and(|a| span.0 < a.1 && a.0 < span.1);
        let matches = tokens[s..s + needle.len()]
            .iter()
            .zip(needle)
            .all(|(a, b)| a.eq_ignore_ascii_case(b));
        (matches && !overlaps).then_some(span)
    })
}

impl Record {
    /// Converts the record to validated examples.
    pub fn into_examples(self) -> Result<Vec<Example>> {
        match self {
            Record::Sentence(r) => {
                let ex = Example {
                    id: r.id,
                    tokens: r.tokens,
                    subj_span: (r.subj_span[0], r.subj_span[1]),
                    obj_span: (r.obj_span[0], r.obj_span[1]),
                    relation: r.relation,
                };
                ex.validate()?;
                Ok(vec![ex])
            }
            Record::Dialogue(r) => {
                let tokens = flatten_dialogue(&r.turns);
                let words = |s: &str| s.split_whitespace().map(String::from).collect::<Vec<_>>();
                let not_found = |entity: &str| Error::EntityNotFound {
                    id: r.id.clone(),
                    entity: entity.to_string(),
                };
                // Latest mentions survive left truncation.
                let subj = find_last(&tokens, &words(&r.subj), None).ok_or_else(|| not_found(&r.subj))?;
                let obj = find_last(&tokens, &words(&r.obj), Some(subj)).ok_or_else(|| not_found(&r.obj))?;
                let single = r.relations.len() == 1;
                r.relations
                    .iter()
                    .enumerate()
                    .map(|(i, rel)| {
                        let ex = Example {
                            id: if single { r.id.clone() } else { format!("{}#{i}", r.id) },
                            tokens: tokens.clone(),
                            subj_span: subj,
                            obj_span: obj,
                            relation: rel.clone(),
                        };
                        ex.validate()?;
                        Ok(ex)
                    })
                    .collect()
            }
        }
    }
}

/// Reads native JSON-lines records. Blank lines are skipped.
pub fn read_records(path: &Path) -> Result<Vec<Record>> {
    let file = fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| Error::Record {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

/// Reads and validates examples from a JSON-lines file.
pub fn load_examples(path: &Path) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for record in read_records(path)? {
        out.extend(record.into_examples()?);
    }
    check_unique_ids(&out)?;
    Ok(out)
}

pub fn write_examples(path: &Path, examples: &[Example]) -> Result<()> {
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    for ex in examples {
        serde_json::to_writer(&mut w, &SentenceRecord::from(ex))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn check_unique_ids<'a>(examples: impl IntoIterator<Item = &'a Example>) -> Result<()> {
    let mut seen = HashSet::new();
    for ex in examples {
        if !seen.insert(ex.id.as_str()) {
            return Err(Error::DuplicateId(ex.id.clone()));
        }
    }
    Ok(())
}

/// Train / dev / test partitions of a relation dataset.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub train: Vec<Example>,
    /// Official dev set, if the corpus ships one.
    pub dev: Option<Vec<Example>>,
    pub test: Vec<Example>,
}

pub const TRAIN_FILE: &str = "train.jsonl";
pub const DEV_FILE: &str = "dev.jsonl";
pub const TEST_FILE: &str = "test.jsonl";

impl Dataset {
    pub fn new(train: Vec<Example>, dev: Option<Vec<Example>>, test: Vec<Example>) -> Result<Self> {
        let ds = Dataset { train, dev, test };
        ds.validate()?;
        Ok(ds)
    }

    /// Ids must be unique across all partitions.
    pub fn validate(&self) -> Result<()> {
        for ex in self.all() {
            ex.validate()?;
        }
        check_unique_ids(self.all())
    }

    pub fn all(&self) -> impl Iterator<Item = &Example> {
        self.train
            .iter()
            .chain(self.dev.iter().flatten())
            .chain(self.test.iter())
    }

    /// Relation strings in sorted order.
    pub fn relations(&self) -> Vec<String> {
        self.all()
            .map(|e| e.relation.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Loads `train.jsonl`, `test.jsonl` and, if present, `dev.jsonl`.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let path = |f: &str| -> PathBuf { dir.join(f) };
        let train = load_examples(&path(TRAIN_FILE))?;
        let dev = if path(DEV_FILE).exists() {
            Some(load_examples(&path(DEV_FILE))?)
        } else {
            None
        };
        let test = load_examples(&path(TEST_FILE))?;
        Dataset::new(train, dev, test)
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_examples(&dir.join(TRAIN_FILE), &self.train)?;
        if let Some(dev) = &self.dev {
            write_examples(&dir.join(DEV_FILE), dev)?;
        }
        write_examples(&dir.join(TEST_FILE), &self.test)?;
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
struct TacredRow {
    id: String,
    token: Vec<String>,
    subj_start: usize,
    subj_end: usize,
    obj_start: usize,
    obj_end: usize,
    relation: String,
}

/// Converts the public TACRED JSON layout (an array of objects with
/// inclusive `subj_end`/`obj_end`) to native records.
pub fn convert_tacred(json: &str) -> Result<Vec<SentenceRecord>> {
    let rows: Vec<TacredRow> = serde_json::from_str(json)?;
    Ok(rows
        .into_iter()
        .map(|r| SentenceRecord {
            id: r.id,
            tokens: r.token,
            subj_span: [r.subj_start, r.subj_end + 1],
            obj_span: [r.obj_start, r.obj_end + 1],
            relation: r.relation,
        })
        .collect())
}

#[derive(Debug, Deserialize)]
struct DialogReRelation {
    x: String,
    y: String,
    r: Vec<String>,
}

/// Converts the public DialogRE JSON layout: an array of
/// `[turns, relations]` pairs where each turn is `"Speaker 1: text"`.
pub fn convert_dialogre(json: &str) -> Result<Vec<DialogueRecord>> {
    let docs: Vec<(Vec<String>, Vec<DialogReRelation>)> = serde_json::from_str(json)?;
    let mut out = Vec::new();
    for (d, (turns, relations)) in docs.into_iter().enumerate() {
        let turns: Vec<Turn> = turns
            .iter()
            .map(|t| {
                let (speaker, text) = t.split_once(':').unwrap_or(("", t));
                Turn {
                    speaker: speaker.trim().to_string(),
                    tokens: text.split_whitespace().map(String::from).collect(),
                }
            })
            .collect();
        for (k, rel) in relations.into_iter().enumerate() {
            out.push(DialogueRecord {
                id: format!("d{d}_{k}"),
                turns: turns.clone(),
                subj: rel.x,
                obj: rel.y,
                relations: rel.r,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sentence_record_parses() {
        let r: Record = serde_json::from_str(
            r#"{"id":"a","tokens":["x","y","z"],"subj_span":[0,1],"obj_span":[2,3],"relation":"r"}"#,
        )
        .unwrap();
        let ex = r.into_examples().unwrap();
        assert_eq!(ex[0].subj_span, (0, 1));
    }

    #[test]
    fn dialogue_expands_per_relation_and_finds_latest_mentions() {
        let r: Record = serde_json::from_str(
            r#"{"id":"d","turns":[{"speaker":"Speaker 1","tokens":["hi","Emma"]},{"speaker":"Speaker 2","tokens":["Emma","is","here"]}],
               "subj":"Speaker 1","obj":"Emma","relations":["per:friends","per:neighbor"]}"#,
        )
        .unwrap();
        let ex = r.into_examples().unwrap();
        assert_eq!(ex.len(), 2);
        assert_eq!(ex[0].id, "d#0");
        assert_eq!(ex[1].relation, "per:neighbor");
        assert_eq!(
            ex[0].tokens.join(" "),
            "Speaker 1 : hi Emma Speaker 2 : Emma is here"
        );
        assert_eq!(ex[0].subj_span, (0, 2));
        assert_eq!(ex[0].obj_span, (8, 9));
    }

    #[test]
    fn missing_dialogue_entity_is_an_error() {
        let r = Record::Dialogue(DialogueRecord {
            id: "d".into(),
            turns: vec![Turn {
                speaker: "A".into(),
                tokens: vec!["x".into()],
            }],
            subj: "A".into(),
            obj: "Bob".into(),
            relations: vec!["r".into()],
        });
        assert!(matches!(r.into_examples(), Err(Error::EntityNotFound { .. })));
    }

    #[test]
    fn tacred_spans_become_half_open() {
        let recs = convert_tacred(
            r#"[{"id":"t1","token":["Bill","Gates","founded","Microsoft"],"subj_start":0,"subj_end":1,
                "obj_start":3,"obj_end":3,"relation":"org:founded_by","stanford_ner":[]}]"#,
        )
        .unwrap();
        assert_eq!(recs[0].subj_span, [0, 2]);
        assert_eq!(recs[0].obj_span, [3, 4]);
    }

    #[test]
    fn dialogre_layout_converts() {
        let recs = convert_dialogre(
            r#"[[["Speaker 1: Hey Pheebs", "Speaker 2: Hi"], [{"x":"Speaker 2","y":"Pheebs","r":["per:alternate_names"],"rid":[30],"t":[""],"x_type":"PER","y_type":"PER"}]]]"#,
        )
        .unwrap();
        assert_eq!(recs[0].turns[0].speaker, "Speaker 1");
        let ex = Record::Dialogue(recs[0].clone()).into_examples().unwrap();
        assert_eq!(ex[0].subject().join(" "), "Speaker 2");
        assert_eq!(ex[0].object(), ["Pheebs"]);
    }

    #[test]
    fn bad_line_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.jsonl");
        fs::write(&p, "\n{\"id\": 1}\n").unwrap();
        match read_records(&p) {
            Err(Error::Record { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_across_partitions_are_rejected() {
        let ex = Example {
            id: "same".into(),
            tokens: vec!["a".into(), "b".into()],
            subj_span: (0, 1),
            obj_span: (1, 2),
            relation: "r".into(),
        };
        assert!(matches!(
            Dataset::new(vec![ex.clone()], None, vec![ex]),
            Err(Error::DuplicateId(_))
        ));
    }
}
