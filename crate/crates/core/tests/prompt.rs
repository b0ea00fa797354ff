mod common;

use adaprompt::prompt::{render_entity_masked, render_prompt, render_sentence, EntityChoice, EntityRole, Markers};
use adaprompt::{ModelBackend, PromptTemplate, TemplateForm, ToyMlmConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn backend(max_len: usize) -> adaprompt::ToyMlm {
    common::model(ToyMlmConfig {
        max_len,
        ..common::small_config(0)
    })
}

fn form(copula: bool) -> TemplateForm {
    if copula {
        TemplateForm::Copula
    } else {
        TemplateForm::RelationBetween
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn prompt_has_one_mask_inside_the_template(seed in any::<u64>(), len in 2usize..40, max_len in 20usize..80, copula in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ex = common::random_example(&mut rng, "p".into(), len);
        let b = backend(max_len);
        let sp = b.vocab().special();
        if let Ok(p) = render_prompt(&ex, &PromptTemplate::new(form(copula)), &b) {
            prop_assert!(p.token_ids.len() <= max_len);
            prop_assert_eq!(p.token_ids.iter().filter(|&&t| t == sp.mask).count(), 1);
            let seps: Vec<usize> = (0..p.token_ids.len()).filter(|&i| p.token_ids[i] == sp.sep).collect();
            prop_assert_eq!(seps.len(), 2);
            prop_assert!(seps[0] < p.mask_position && p.mask_position < seps[1]);
            for (r, words) in [ex.subject(), ex.object()].into_iter().enumerate() {
                let ids: Vec<u32> = p.entity_token_positions[r].iter().map(|&i| p.token_ids[i]).collect();
                prop_assert_eq!(ids, b.vocab().encode_words(words));
            }
        }
    }

    #[test]
    fn entity_masking_hides_one_entity_everywhere(seed in any::<u64>(), len in 2usize..20, copula in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ex = common::random_example(&mut rng, "e".into(), len);
        let b = backend(128);
        let classes = common::schema().resolve(&b).unwrap();
        let gold = &classes[common::schema().index_of(&ex.relation).unwrap()];
        let template = PromptTemplate::new(form(copula));
        for role in [EntityRole::Subject, EntityRole::Object] {
            let inst = render_entity_masked(&ex, &template, &b, gold, EntityChoice::Fixed(role), &mut rng).unwrap();
            let words = if role == EntityRole::Subject { ex.subject() } else { ex.object() };
            let entity = b.vocab().encode_words(words);
            prop_assert_eq!(&inst.target_ids, &entity);
            let mask = b.vocab().special().mask;
            prop_assert_eq!(inst.token_ids.iter().filter(|&&t| t == mask).count(), 2 * entity.len());
            prop_assert!(inst.masked_positions.iter().all(|&p| inst.token_ids[p] == mask));
        }
    }
}

#[test]
fn copula_layout() {
    let b = backend(64);
    let ex = adaprompt::Example {
        id: "c".into(),
        tokens: ["alice", "died", "in", "paris"].map(String::from).to_vec(),
        subj_span: (0, 1),
        obj_span: (3, 4),
        relation: "per:city_of_death".into(),
    };
    let p = render_prompt(&ex, &PromptTemplate::new(TemplateForm::Copula), &b).unwrap();
    let text = b.vocab().decode(&p.token_ids).join(" ");
    assert_eq!(
        text,
        "[CLS] [E1] alice [/E1] died in [E2] paris [/E2] [SEP] [E1] alice [/E1] is [MASK] [E2] paris [/E2] . [SEP]"
    );
    let p = render_prompt(&ex, &PromptTemplate::new(TemplateForm::RelationBetween), &b).unwrap();
    let text = b.vocab().decode(&p.token_ids).join(" ");
    assert!(text.ends_with(
        "[SEP] the relation between [E1] alice [/E1] and [E2] paris [/E2] is [MASK] . [SEP]"
    ));
}

#[test]
fn truncation_keeps_the_right_end() {
    let b = backend(24);
    let mut tokens: Vec<String> = vec!["said".into(); 12];
    tokens.extend(["alice", "died", "in", "paris"].map(String::from));
    let ex = adaprompt::Example {
        id: "t".into(),
        tokens,
        subj_span: (12, 13),
        obj_span: (15, 16),
        relation: "per:city_of_death".into(),
    };
    let p = render_prompt(&ex, &PromptTemplate::new(TemplateForm::Copula), &b).unwrap();
    assert!(p.truncated);
    assert_eq!(p.token_ids.len(), 24);
    let text = b.vocab().decode(&p.token_ids).join(" ");
    assert!(text.contains("said [E1] alice [/E1] died in [E2] paris [/E2] [SEP]"));

    let early = adaprompt::Example {
        subj_span: (0, 1),
        ..ex
    };
    assert_eq!(render_prompt(&early, &PromptTemplate::new(TemplateForm::Copula), &b).unwrap_err().kind(), "span_lost");
}

#[test]
fn sentence_rendering_for_the_head_baseline() {
    let b = backend(64);
    let ex = adaprompt::Example {
        id: "s".into(),
        tokens: ["acme", "headquarters", "paris"].map(String::from).to_vec(),
        subj_span: (0, 1),
        obj_span: (2, 3),
        relation: "org:city_of_headquarters".into(),
    };
    let ids = render_sentence(&ex, &Markers::default(), &b).unwrap();
    assert_eq!(
        b.vocab().decode(&ids).join(" "),
        "[CLS] [E1] acme [/E1] head ##quarters [E2] paris [/E2] [SEP]"
    );
}
