mod common;

use adaprompt::backend::{checkpoint, masked_token_accuracy, pretrain_toy, PretrainOptions};
use adaprompt::prompt::render_prompt;
use adaprompt::{score_classes, ModelBackend, PromptTemplate, TemplateForm};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn corpus(n: usize) -> Vec<Vec<u32>> {
    let v = common::vocab();
    let sentences = ["alice died in paris", "bob works for acme", "acme head ##quarters paris", "bob born in paris"];
    (0..n)
        .map(|i| sentences[i % sentences.len()].split(' ').map(|w| v.id(w).unwrap()).collect())
        .collect()
}

#[test]
fn checkpoint_round_trip_preserves_scores() {
    let tmp = tempfile::tempdir().unwrap();
    let model = common::model(common::small_config(5));
    checkpoint::save(&model, tmp.path()).unwrap();
    let loaded = checkpoint::load(tmp.path()).unwrap();
    assert_eq!(loaded.parameters(), model.parameters());
    assert_eq!(loaded.vocab(), model.vocab());

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let classes = common::schema().resolve(&model).unwrap();
    for i in 0..5 {
        let ex = common::random_example(&mut rng, format!("r{i}"), 8);
        let p = render_prompt(&ex, &PromptTemplate::new(TemplateForm::Copula), &model).unwrap();
        let a = score_classes(&p, &classes, &model).unwrap();
        let b = score_classes(&p, &classes, &loaded).unwrap();
        assert_eq!(a.probs, b.probs);
    }
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let model = common::model(common::small_config(5));
    checkpoint::save(&model, tmp.path()).unwrap();
    let params = tmp.path().join(checkpoint::PARAMS_FILE);
    let mut bytes = std::fs::read(&params).unwrap();
    bytes.truncate(bytes.len() - 8);
    std::fs::write(&params, bytes).unwrap();
    assert_eq!(checkpoint::load(tmp.path()).unwrap_err().kind(), "checkpoint");
}

#[test]
fn pretraining_reduces_masked_token_loss() {
    let options = PretrainOptions {
        steps: 60,
        batch_size: 16,
        mask_prob: 0.3,
        ..PretrainOptions::default()
    };
    let data = corpus(64);
    let (model, report) = pretrain_toy(&data, common::vocab(), common::small_config(2), &options).unwrap();
    assert_eq!(report.losses.len(), 60);
    assert!(report.final_loss < report.initial_loss, "{report:?}");
    let untrained = common::model(common::small_config(2));
    let before = masked_token_accuracy(&untrained, &data, 0.3, 1).unwrap();
    let after = masked_token_accuracy(&model, &data, 0.3, 1).unwrap();
    assert!(after > before, "accuracy {before} -> {after}");
}

#[test]
fn pretraining_is_reproducible() {
    let options = PretrainOptions {
        steps: 5,
        batch_size: 8,
        ..PretrainOptions::default()
    };
    let run = || pretrain_toy(&corpus(16), common::vocab(), common::small_config(3), &options).unwrap().0;
    assert_eq!(run().parameters(), run().parameters());
}

#[test]
fn adding_tokens_preserves_existing_outputs() {
    let mut model = common::model(common::small_config(4));
    let before = model.clone();
    let ids: Vec<u32> = ["[CLS]", "alice", "died", "[MASK]", "[SEP]"].iter().map(|t| model.vocab().id(t).unwrap()).collect();
    assert_eq!(model.add_tokens(&["<s>", "</s>", "alice"], 11).unwrap(), 2);
    assert_eq!(model.vocab().len(), before.vocab().len() + 2);
    assert_eq!(model.encode(&ids).unwrap(), before.encode(&ids).unwrap());
    for id in 0..before.vocab().len() as u32 {
        assert_eq!(model.output_embedding(id).unwrap(), before.output_embedding(id).unwrap());
    }
    let h = before.encode(&ids).unwrap().row(3).to_vec();
    let old = before.vocab_logits(&h).unwrap();
    let new = model.vocab_logits(&h).unwrap();
    assert_eq!(&new[..old.len()], &old[..]);
}
