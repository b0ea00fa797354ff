//! Cloze prompt construction.
//!
//! A prompt is `[CLS] sentence [SEP] template [SEP]`. Entity markers wrap
//! both entity mentions in the sentence, and the template repeats the
//! entity surface text around a single relation slot.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{MaskedSequence, ModelBackend, Vocab};
use crate::error::{Error, Result};
use crate::verbalizer::LabelWordSet;

/// Half-open token span `[start, end)`.
pub type Span = (usize, usize);

/// One labelled relation instance over a tokenized text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub tokens: Vec<String>,
    pub subj_span: Span,
    pub obj_span: Span,
    pub relation: String,
}

impl Example {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Error::InvalidSpan {
            id: self.id.clone(),
            reason,
        };
        for (name, (s, e)) in [("subject", self.subj_span), ("object", self.obj_span)] {
            if s >= e {
                return Err(bad(format!("{name} span [{s}, {e}) is empty")));
            }
            if e > self.tokens.len() {
                return Err(bad(format!(
                    "{name} span [{s}, {e}) exceeds {} tokens",
                    self.tokens.len()
                )));
            }
        }
        let (a, b) = (self.subj_span, self.obj_span);
        if a.0 < b.1 && b.0 < a.1 {
            return Err(bad("subject and object spans overlap".into()));
        }
        Ok(())
    }

    pub fn subject(&self) -> &[String] {
        &self.tokens[self.subj_span.0..self.subj_span.1]
    }

    pub fn object(&self) -> &[String] {
        &self.tokens[self.obj_span.0..self.obj_span.1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemplateForm {
    /// `[E1] s [/E1] is [MASK] [E2] o [/E2] .`
    Copula,
    /// `the relation between [E1] s [/E1] and [E2] o [/E2] is [MASK] .`
    RelationBetween,
}

impl std::str::FromStr for TemplateForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "copula" => Ok(TemplateForm::Copula),
            "relation-between" => Ok(TemplateForm::RelationBetween),
            _ => Err(Error::InvalidConfig(format!(
                "template must be `copula` or `relation-between`, got `{s}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Markers {
    pub subj_open: String,
    pub subj_close: String,
    pub obj_open: String,
    pub obj_close: String,
}

impl Default for Markers {
    fn default() -> Self {
        Markers {
            subj_open: "[E1]".into(),
            subj_close: "[/E1]".into(),
            obj_open: "[E2]".into(),
            obj_close: "[/E2]".into(),
        }
    }
}

impl Markers {
    pub fn all(&self) -> [&str; 4] {
        [&self.subj_open, &self.subj_close, &self.obj_open, &self.obj_close]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub form: TemplateForm,
    pub markers: Markers,
}

impl PromptTemplate {
    pub fn new(form: TemplateForm) -> Self {
        PromptTemplate {
            form,
            markers: Markers::default(),
        }
    }
}

/// Plain words used by the templates; vocabularies should contain them.
pub fn template_words() -> &'static [&'static str] {
    &["the", "relation", "between", "and", "is", "."]
}

/// Marker and template tokens a vocabulary needs for `template`.
pub fn required_tokens(template: &PromptTemplate) -> Vec<String> {
    let mut out: Vec<String> = template.markers.all().iter().map(|s| s.to_string()).collect();
    out.extend(template_words().iter().map(|s| s.to_string()));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityRole {
    Subject,
    Object,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntityChoice {
    Fixed(EntityRole),
    Random,
}

/// A rendered cloze input with exactly one mask token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptInstance {
    pub token_ids: Vec<u32>,
    pub mask_position: usize,
    /// In-sentence positions of the subject (`[0]`) and object (`[1]`).
    pub entity_token_positions: [Vec<usize>; 2],
    pub source_id: String,
    pub truncated: bool,
}

impl MaskedSequence for PromptInstance {
    fn token_ids(&self) -> &[u32] {
        &self.token_ids
    }

    fn query_positions(&self) -> Vec<usize> {
        vec![self.mask_position]
    }
}

/// A prompt whose relation slot carries the gold label words and where one
/// entity has been replaced by mask tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityMaskedInstance {
    pub token_ids: Vec<u32>,
    /// In-sentence positions of the masked entity; the prediction targets.
    pub masked_positions: Vec<usize>,
    /// Original ids at `masked_positions`.
    pub target_ids: Vec<u32>,
    pub masked_entity: EntityRole,
    pub source_id: String,
    pub truncated: bool,
}

impl MaskedSequence for EntityMaskedInstance {
    fn token_ids(&self) -> &[u32] {
        &self.token_ids
    }

    fn query_positions(&self) -> Vec<usize> {
        self.masked_positions.clone()
    }
}

enum Slot<'a> {
    Mask,
    Words(&'a [Vec<u32>]),
}

struct Rendered {
    ids: Vec<u32>,
    slot: Vec<usize>,
    sentence_entities: [Vec<usize>; 2],
    template_entities: [Vec<usize>; 2],
    truncated: bool,
}

fn marker_id(vocab: &Vocab, marker: &str) -> u32 {
    vocab.id(marker).unwrap_or(vocab.special().unk)
}

/// Sentence ids with markers around both entities, plus the positions of
/// each entity's tokens.
fn marked_sentence(example: &Example, m: &Markers, vocab: &Vocab) -> (Vec<u32>, [Vec<usize>; 2]) {
    let (e1, e1c, e2, e2c) = (
        marker_id(vocab, &m.subj_open),
        marker_id(vocab, &m.subj_close),
        marker_id(vocab, &m.obj_open),
        marker_id(vocab, &m.obj_close),
    );
    let mut sentence: Vec<u32> = Vec::new();
    let mut sent_ents: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    let (subj, obj) = (example.subj_span, example.obj_span);
    for (i, word) in example.tokens.iter().enumerate() {
        if i == subj.0 {
            sentence.push(e1);
        }
        if i == obj.0 {
            sentence.push(e2);
        }
        let pieces = vocab.encode_word(word);
        let role = if (subj.0..subj.1).contains(&i) {
            Some(0)
        } else if (obj.0..obj.1).contains(&i) {
            Some(1)
        } else {
            None
        };
        for id in pieces {
            if let Some(r) = role {
                sent_ents[r].push(sentence.len());
            }
            sentence.push(id);
        }
        if i + 1 == subj.1 {
            sentence.push(e1c);
        }
        if i + 1 == obj.1 {
            sentence.push(e2c);
        }
    }

    (sentence, sent_ents)
}

fn render(
    example: &Example,
    template: &PromptTemplate,
    vocab: &Vocab,
    max_len: usize,
    slot: Slot,
) -> Result<Rendered> {
    example.validate()?;
    let sp = vocab.special();
    let m = &template.markers;
    let (e1, e1c, e2, e2c) = (
        marker_id(vocab, &m.subj_open),
        marker_id(vocab, &m.subj_close),
        marker_id(vocab, &m.obj_open),
        marker_id(vocab, &m.obj_close),
    );

    let (sentence, sent_ents) = marked_sentence(example, m, vocab);

    // Template region; positions are relative to its start.
    let subj_ids = vocab.encode_words(example.subject());
    let obj_ids = vocab.encode_words(example.object());
    let mut tmpl: Vec<u32> = Vec::new();
    let mut tmpl_ents: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    let mut slot_pos = Vec::new();
    let word = |w: &str| vocab.encode_word(w);
    let push_entity = |tmpl: &mut Vec<u32>, ents: &mut [Vec<usize>; 2], r: usize, open, ids: &[u32], close| {
        tmpl.push(open);
        for &id in ids {
            ents[r].push(tmpl.len());
            tmpl.push(id);
        }
        tmpl.push(close);
    };
    let push_slot = |tmpl: &mut Vec<u32>, slot_pos: &mut Vec<usize>| match slot {
        Slot::Mask => {
            slot_pos.push(tmpl.len());
            tmpl.push(sp.mask);
        }
        Slot::Words(words) => {
            for id in words.iter().flatten() {
                slot_pos.push(tmpl.len());
                tmpl.push(*id);
            }
        }
    };
    match template.form {
        TemplateForm::Copula => {
            push_entity(&mut tmpl, &mut tmpl_ents, 0, e1, &subj_ids, e1c);
            tmpl.extend(word("is"));
            push_slot(&mut tmpl, &mut slot_pos);
            push_entity(&mut tmpl, &mut tmpl_ents, 1, e2, &obj_ids, e2c);
            tmpl.extend(word("."));
        }
        TemplateForm::RelationBetween => {
            for w in ["the", "relation", "between"] {
                tmpl.extend(word(w));
            }
            push_entity(&mut tmpl, &mut tmpl_ents, 0, e1, &subj_ids, e1c);
            tmpl.extend(word("and"));
            push_entity(&mut tmpl, &mut tmpl_ents, 1, e2, &obj_ids, e2c);
            tmpl.extend(word("is"));
            push_slot(&mut tmpl, &mut slot_pos);
            tmpl.extend(word("."));
        }
    }

    let fixed = tmpl.len() + 3;
    if fixed > max_len {
        return Err(Error::TemplateOverflow {
            needed: fixed,
            budget: max_len,
        });
    }
    let room = max_len - fixed;
    let mut drop = 0;
    if sentence.len() > room {
        drop = sentence.len() - room;
        // Markers open each entity, so the first marker bounds the cut.
        let first_marker = sentence
            .iter()
            .position(|&id| id == e1 || id == e2)
            .unwrap_or(sentence.len());
        if drop > first_marker {
            return Err(Error::SpanLost(example.id.clone()));
        }
    }

    let mut ids = Vec::with_capacity(max_len);
    ids.push(sp.cls);
    ids.extend_from_slice(&sentence[drop..]);
    ids.push(sp.sep);
    let tmpl_start = ids.len();
    ids.extend_from_slice(&tmpl);
    ids.push(sp.sep);

    let shift = |v: &[usize], by: isize| v.iter().map(|&p| (p as isize + by) as usize).collect();
    let sent_shift = 1 - drop as isize;
    Ok(Rendered {
        ids,
        slot: shift(&slot_pos, tmpl_start as isize),
        sentence_entities: [shift(&sent_ents[0], sent_shift), shift(&sent_ents[1], sent_shift)],
        template_entities: [
            shift(&tmpl_ents[0], tmpl_start as isize),
            shift(&tmpl_ents[1], tmpl_start as isize),
        ],
        truncated: drop > 0,
    })
}

/// Builds the cloze input for relation classification.
pub fn render_prompt<B: ModelBackend + ?Sized>(
    example: &Example,
    template: &PromptTemplate,
    backend: &B,
) -> Result<PromptInstance> {
    let r = render(example, template, backend.vocab(), backend.max_len(), Slot::Mask)?;
    Ok(PromptInstance {
        token_ids: r.ids,
        mask_position: r.slot[0],
        entity_token_positions: r.sentence_entities,
        source_id: example.id.clone(),
        truncated: r.truncated,
    })
}

/// `[CLS] sentence [SEP]` with entity markers and no template, as used by
/// a classification head over `[CLS]`. Truncates from the left like
/// [`render_prompt`].
pub fn render_sentence<B: ModelBackend + ?Sized>(example: &Example, markers: &Markers, backend: &B) -> Result<Vec<u32>> {
    example.validate()?;
    let vocab = backend.vocab();
    let sp = vocab.special();
    let (sentence, ents) = marked_sentence(example, markers, vocab);
    let room = backend.max_len().saturating_sub(2);
    let drop = sentence.len().saturating_sub(room);
    // The opening marker sits just before the first entity token.
    let first_entity = ents.iter().flatten().min().copied().unwrap_or(0);
    if drop + 1 > first_entity && drop > 0 {
        return Err(Error::SpanLost(example.id.clone()));
    }
    let mut ids = Vec::with_capacity(sentence.len() - drop + 2);
    ids.push(sp.cls);
    ids.extend_from_slice(&sentence[drop..]);
    ids.push(sp.sep);
    Ok(ids)
}

/// Builds the entity-masked input for the entity discrimination objective.
///
/// The relation slot holds the gold label words (`gold` must be resolved).
/// The chosen entity is masked in the sentence, where its tokens are the
/// prediction targets, and in its template copy.
pub fn render_entity_masked<B, R>(
    example: &Example,
    template: &PromptTemplate,
    backend: &B,
    gold: &LabelWordSet,
    which: EntityChoice,
    rng: &mut R,
) -> Result<EntityMaskedInstance>
where
    B: ModelBackend + ?Sized,
    R: Rng + ?Sized,
{
    if !gold.is_resolved() {
        return Err(Error::UnresolvableWord(gold.words.join(" ")));
    }
    let role = match which {
        EntityChoice::Fixed(role) => role,
        EntityChoice::Random => {
            if rng.gen_bool(0.5) {
                EntityRole::Subject
            } else {
                EntityRole::Object
            }
        }
    };
    let r = render(
        example,
        template,
        backend.vocab(),
        backend.max_len(),
        Slot::Words(&gold.vocab_ids),
    )?;
    let idx = match role {
        EntityRole::Subject => 0,
        EntityRole::Object => 1,
    };
    let mask = backend.vocab().special().mask;
    let mut token_ids = r.ids;
    let masked_positions = r.sentence_entities[idx].clone();
    let target_ids = masked_positions.iter().map(|&p| token_ids[p]).collect();
    for &p in masked_positions.iter().chain(&r.template_entities[idx]) {
        token_ids[p] = mask;
    }
    Ok(EntityMaskedInstance {
        token_ids,
        masked_positions,
        target_ids,
        masked_entity: role,
        source_id: example.id.clone(),
        truncated: r.truncated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ToyMlm, ToyMlmConfig};

    fn vocab() -> Vocab {
        let mut words: Vec<String> = required_tokens(&PromptTemplate::new(TemplateForm::Copula));
        words.extend(
            "people close to situation said chief financial officer douglas flint will replace departing stephen green as chairman of banking giant person title"
                .split(' ')
                .map(String::from),
        );
        Vocab::new(words)
    }

    fn backend(max_len: usize) -> ToyMlm {
        let config = ToyMlmConfig {
            d: 8,
            layers: 1,
            heads: 2,
            max_len,
            ..ToyMlmConfig::default()
        };
        ToyMlm::new(config, vocab()).unwrap()
    }

    fn flint() -> Example {
        let text = "people close to the situation said chief financial officer douglas flint will replace departing stephen green as chairman of the banking giant .";
        Example {
            id: "flint".into(),
            tokens: text.split(' ').map(String::from).collect(),
            subj_span: (9, 11),
            obj_span: (6, 9),
            relation: "per:title".into(),
        }
    }

    #[test]
    fn copula_suffix_matches_the_worked_example() {
        let b = backend(64);
        let p = render_prompt(&flint(), &PromptTemplate::new(TemplateForm::Copula), &b).unwrap();
        let toks = b.vocab().decode(&p.token_ids);
        let sep = toks.iter().position(|&t| t == "[SEP]").unwrap();
        assert_eq!(
            toks[sep..].join(" "),
            "[SEP] [E1] douglas flint [/E1] is [MASK] [E2] chief financial officer [/E2] . [SEP]"
        );
        assert_eq!(toks[p.mask_position], "[MASK]");
        assert!(!p.truncated);
    }

    #[test]
    fn relation_between_three_token_sentence() {
        let b = backend(64);
        let ex = Example {
            id: "t".into(),
            tokens: vec!["flint".into(), "chairman".into(), "giant".into()],
            subj_span: (0, 1),
            obj_span: (2, 3),
            relation: "per:title".into(),
        };
        let p = render_prompt(&ex, &PromptTemplate::new(TemplateForm::RelationBetween), &b).unwrap();
        let v = b.vocab();
        let id = |t: &str| v.id(t).unwrap();
        let expected: Vec<u32> = [
            "[CLS]", "[E1]", "flint", "[/E1]", "chairman", "[E2]", "giant", "[/E2]", "[SEP]", "the", "relation",
            "between", "[E1]", "flint", "[/E1]", "and", "[E2]", "giant", "[/E2]", "is", "[MASK]", ".", "[SEP]",
        ]
        .iter()
        .map(|t| id(t))
        .collect();
        assert_eq!(p.token_ids, expected);
        assert_eq!(p.mask_position, 20);
        assert_eq!(p.entity_token_positions, [vec![2], vec![6]]);
    }

    #[test]
    fn left_truncation_keeps_template_and_spans() {
        let ex = flint();
        let full = render_prompt(&ex, &PromptTemplate::new(TemplateForm::Copula), &backend(64)).unwrap();
        let b = backend(full.token_ids.len() - 3);
        let p = render_prompt(&ex, &PromptTemplate::new(TemplateForm::Copula), &b).unwrap();
        assert!(p.truncated);
        assert_eq!(p.token_ids.len(), b.max_len());
        assert_eq!(p.token_ids[0], b.vocab().special().cls);
        assert_eq!(&p.token_ids[p.token_ids.len() - 14..], &full.token_ids[full.token_ids.len() - 14..]);
        let subj: Vec<&str> = p.entity_token_positions[0].iter().map(|&i| b.vocab().decode(&[p.token_ids[i]])[0]).collect();
        assert_eq!(subj, ["douglas", "flint"]);
    }

    #[test]
    fn truncating_into_a_span_is_span_lost() {
        let ex = flint();
        // 12 template tokens + 3 specials leave room for 7 sentence tokens.
        let b = backend(22);
        assert!(matches!(
            render_prompt(&ex, &PromptTemplate::new(TemplateForm::Copula), &b),
            Err(Error::SpanLost(_))
        ));
    }

    #[test]
    fn oversized_template_overflows() {
        let b = backend(10);
        assert!(matches!(
            render_prompt(&flint(), &PromptTemplate::new(TemplateForm::Copula), &b),
            Err(Error::TemplateOverflow { needed: 15, budget: 10 })
        ));
    }

    #[test]
    fn invalid_spans_are_rejected() {
        let mut ex = flint();
        ex.obj_span = (8, 10);
        assert!(matches!(ex.validate(), Err(Error::InvalidSpan { .. })));
        ex.obj_span = (3, 3);
        assert!(ex.validate().is_err());
        ex.obj_span = (20, 40);
        assert!(ex.validate().is_err());
    }
}
