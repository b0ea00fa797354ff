//! Pretrains the toy encoder on the synthetic corpus and compares prompt
//! tuning against the majority and classification-head baselines.
//!
//! ```text
//! cargo run --release -p adaprompt --example synthetic
//! ```

use std::time::Instant;

use adaprompt::backend::{masked_token_accuracy, pretrain_toy};
use adaprompt::harness::{
    format_table, run_experiment, HeadFinetune, HparamGrid, Majority, PromptTuning, Shots, TrainConfig, DEFAULT_SEEDS,
};
use adaprompt::synth::{generate, model_config, pretrain_options, SynthConfig};

fn main() -> adaprompt::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let start = Instant::now();
    let corpus = generate(&SynthConfig::default())?;
    let schema = corpus.schema()?;
    let (model, report) = pretrain_toy(&corpus.pretrain, corpus.vocab.clone(), model_config(), &pretrain_options())?;
    println!(
        "vocab {} | pretraining loss {:.3} -> {:.3} | masked accuracy {:.3} | {:.1?}",
        corpus.vocab.len(),
        report.initial_loss,
        report.final_loss,
        masked_token_accuracy(&model, &corpus.pretrain[..500], 0.15, 1)?,
        start.elapsed()
    );

    let ks = [Shots::PerClass(8), Shots::PerClass(32)];
    let grid = HparamGrid::toy_default();
    let config = TrainConfig::default();
    let prompt = PromptTuning::new(model.clone(), schema.clone(), config.clone())?;
    let head = HeadFinetune::new(model, schema.clone(), config)?;
    let majority = Majority::new(schema);
    let reports = vec![
        run_experiment(&majority, &corpus.dataset, &ks, &DEFAULT_SEEDS, &grid)?,
        run_experiment(&head, &corpus.dataset, &ks, &DEFAULT_SEEDS, &grid)?,
        run_experiment(&prompt, &corpus.dataset, &ks, &DEFAULT_SEEDS, &grid)?,
    ];
    print!("{}", format_table(&reports));
    println!("elapsed {:.1?}", start.elapsed());
    Ok(())
}
