//! Subcommand implementations. Each validates its inputs fully before it
//! creates the output directory.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use adaprompt::backend::{checkpoint, pretrain_toy, PretrainOptions};
use adaprompt::harness::{
    dev_pools, format_table, prf_counts, run_experiment, run_experiment_with, sample_split, ExperimentReport,
    HeadFinetune, HparamGrid, Majority, PromptTuning, Shots, StepLogger,
};
use adaprompt::prompt::{render_prompt, Example};
use adaprompt::scoring::{score, ScoreRecord};
use adaprompt::synth::{self, SynthConfig};
use adaprompt::{Error, ToyMlm, ToyMlmConfig, Vocab};
use clap::{Args, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{load_dataset, schema_for, BaseModel, Resolved, RunArgs, RunConfig, CACHE_ENV};
use crate::error::CliError;

pub const CONFIG_FILE: &str = "config.json";
pub const STEP_LOG_FILE: &str = "steps.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const TABLE_FILE: &str = "report.txt";
pub const BASE_DIR: &str = "base";
pub const MODELS_DIR: &str = "models";
pub const SPLITS_DIR: &str = "splits";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const EVAL_FILE: &str = "eval.json";

fn run_err(e: Error) -> CliError {
    CliError::from_run(e)
}

fn cache_key(vocab: &Vocab, corpus: &[Vec<u32>], model: &ToyMlmConfig, options: &PretrainOptions) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&(vocab.tokens(), model, options)).expect("plain data serializes"));
    for seq in corpus {
        h.update((seq.len() as u64).to_le_bytes());
        for id in seq {
            h.update(id.to_le_bytes());
        }
    }
    let digest = format!("{:x}", h.finalize());
    format!("toy-{}", &digest[..16])
}

/// Pretrains a toy encoder, reusing a cached checkpoint under
/// `ADAPROMPT_CACHE` when one exists for the same inputs.
pub fn pretrained(
    vocab: Vocab,
    corpus: &[Vec<u32>],
    model: &ToyMlmConfig,
    options: &PretrainOptions,
) -> Result<ToyMlm, CliError> {
    let cached = std::env::var_os(CACHE_ENV).map(|dir| PathBuf::from(dir).join(cache_key(&vocab, corpus, model, options)));
    if let Some(dir) = &cached {
        if dir.join(checkpoint::CONFIG_FILE).is_file() {
            log::info!("using cached encoder {}", dir.display());
            return checkpoint::load(dir).map_err(run_err);
        }
    }
    log::info!("pretraining toy encoder for {} steps on {} sequences", options.steps, corpus.len());
    let (encoder, report) = pretrain_toy(corpus, vocab, model.clone(), options).map_err(run_err)?;
    log::info!("pretraining loss {:.3} -> {:.3}", report.initial_loss, report.final_loss);
    if let Some(dir) = &cached {
        checkpoint::save(&encoder, dir).map_err(run_err)?;
    }
    Ok(encoder)
}

fn split_dir_name(k: Shots, seed: u64) -> String {
    format!("k{k}_seed{seed}")
}

fn write_reports(out: &Path, reports: &[ExperimentReport]) -> Result<(), CliError> {
    fs::write(out.join(REPORT_FILE), serde_json::to_string_pretty(reports)?)?;
    fs::write(out.join(TABLE_FILE), format_table(reports))?;
    Ok(())
}

/// Keeps a partial report from a failed experiment and passes the error on.
fn collect(reports: &mut Vec<ExperimentReport>, result: adaprompt::Result<ExperimentReport>) -> Result<(), CliError> {
    match result {
        Ok(r) => {
            reports.push(r);
            Ok(())
        }
        Err(Error::Experiment { partial, source, completed }) => {
            let method = partial.method.clone();
            if !partial.reports.is_empty() {
                reports.push(*partial);
            }
            Err(CliError::run(
                source.kind(),
                format!("{method} failed after {completed} completed splits: {source}"),
            ))
        }
        Err(e) => Err(run_err(e)),
    }
}

pub fn train(args: &RunArgs) -> Result<(), CliError> {
    let resolved = Resolved::new(args.merged()?)?;
    resolved.check_splits()?;
    let base = resolved.base_model()?;

    let out = &resolved.output_dir;
    fs::create_dir_all(out)?;
    fs::write(out.join(CONFIG_FILE), serde_json::to_string_pretty(&resolved.config)?)?;
    let config = &resolved.config;
    let encoder = match base {
        BaseModel::Loaded(m) => m,
        BaseModel::Pretrain { vocab, corpus } => pretrained(vocab, &corpus, &config.model, &config.pretrain)?,
    };
    checkpoint::save(&encoder, &out.join(BASE_DIR)).map_err(run_err)?;

    let mut reports = Vec::new();
    let result = run_methods(&resolved, encoder, &mut reports);
    write_reports(out, &reports)?;
    result?;
    print!("{}", format_table(&reports));
    Ok(())
}

fn run_methods(resolved: &Resolved, encoder: ToyMlm, reports: &mut Vec<ExperimentReport>) -> Result<(), CliError> {
    let config = &resolved.config;
    let out = &resolved.output_dir;
    let logger = StepLogger::create(&out.join(STEP_LOG_FILE)).map_err(run_err)?;
    let prompt = PromptTuning::new(encoder.clone(), resolved.schema.clone(), config.train.clone())
        .map_err(run_err)?
        .with_logger(logger);
    let models = out.join(MODELS_DIR).join(adaprompt::harness::FewShotMethod::name(&prompt));
    let result = run_experiment_with(
        &prompt,
        &resolved.dataset,
        &config.k_values,
        &config.seeds,
        &resolved.grid,
        &mut |ctx, model| checkpoint::save(model, &models.join(split_dir_name(ctx.k, ctx.seed))),
    );
    if let Some(logger) = prompt.logger() {
        logger.flush().map_err(run_err)?;
    }
    collect(reports, result)?;

    if config.baselines {
        let majority = Majority::new(resolved.schema.clone());
        let result = run_experiment(&majority, &resolved.dataset, &config.k_values, &config.seeds, &resolved.grid);
        collect(reports, result)?;
        let head = HeadFinetune::new(encoder, resolved.schema.clone(), config.train.clone()).map_err(run_err)?;
        let result = run_experiment(&head, &resolved.dataset, &config.k_values, &config.seeds, &resolved.grid);
        collect(reports, result)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum EvalSplit {
    Dev,
    #[default]
    Test,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Which part of the dataset to score.
    #[arg(long, value_enum, default_value_t = EvalSplit::Test)]
    pub split: EvalSplit,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalSummary {
    pub checkpoint: PathBuf,
    pub examples: usize,
    pub micro_f1: f64,
    pub precision: f64,
    pub recall: f64,
}

pub fn eval(args: &EvalArgs) -> Result<(), CliError> {
    let resolved = Resolved::new(args.run.merged()?)?;
    let checkpoint_path = resolved
        .config
        .checkpoint
        .clone()
        .ok_or_else(|| CliError::config("invalid_config", "eval needs a checkpoint; pass --checkpoint"))?;
    let BaseModel::Loaded(model) = resolved.base_model()? else {
        unreachable!("a checkpoint is configured")
    };
    let examples: Vec<&Example> = match args.split {
        EvalSplit::Test => resolved.dataset.test.iter().collect(),
        EvalSplit::Dev => dev_pools(&resolved.dataset).dev,
    };
    let classes = resolved.schema.resolve(&model).map_err(CliError::from_config)?;

    let out = &resolved.output_dir;
    fs::create_dir_all(out)?;
    let template = resolved.config.train.prompt_template();
    let mut rows = BufWriter::new(fs::File::create(out.join(PREDICTIONS_FILE))?);
    let mut preds = Vec::with_capacity(examples.len());
    let mut golds = Vec::with_capacity(examples.len());
    for ex in &examples {
        let instance = render_prompt(ex, &template, &model).map_err(run_err)?;
        let scores = score(resolved.config.train.scoring, &instance, &classes, &model).map_err(run_err)?;
        serde_json::to_writer(&mut rows, &ScoreRecord::new(ex.id.clone(), &scores))?;
        rows.write_all(b"\n")?;
        preds.push(scores.argmax);
        golds.push(resolved.schema.index_of(&ex.relation).map_err(run_err)?);
    }
    rows.flush()?;
    let counts = prf_counts(&preds, &golds, resolved.schema.na_index()).map_err(run_err)?;
    let summary = EvalSummary {
        checkpoint: checkpoint_path,
        examples: examples.len(),
        micro_f1: counts.f1(),
        precision: counts.precision(),
        recall: counts.recall(),
    };
    let json = serde_json::to_string_pretty(&summary)?;
    fs::write(out.join(EVAL_FILE), &json)?;
    println!("{json}");
    Ok(())
}

/// Writes one split file per K and seed. `all` is drawn once, with the
/// first seed.
pub fn split(args: &RunArgs) -> Result<(), CliError> {
    let resolved = Resolved::new(args.merged()?)?;
    let config = &resolved.config;
    let mut splits = Vec::new();
    for &k in &config.k_values {
        let seeds = if k == Shots::All { &config.seeds[..1] } else { &config.seeds[..] };
        for &seed in seeds {
            splits.push(sample_split(&resolved.dataset, k, seed).map_err(CliError::from_config)?);
        }
    }
    let dir = resolved.output_dir.join(SPLITS_DIR);
    fs::create_dir_all(&dir)?;
    for s in &splits {
        let path = dir.join(format!("{}.json", split_dir_name(s.k, s.seed)));
        fs::write(&path, serde_json::to_string_pretty(s)?)?;
        println!("{}", path.display());
    }
    Ok(())
}

#[derive(Debug, Clone, Default, Args)]
pub struct VerbalizeArgs {
    /// Run config JSON file; its labels, rules and dataset are used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Relation labels in class order, comma separated.
    #[arg(long, value_delimiter = ',', conflicts_with = "labels_file")]
    pub labels: Option<Vec<String>>,
    /// File with a JSON array of labels or one label per line.
    #[arg(long)]
    pub labels_file: Option<PathBuf>,
    #[arg(long)]
    pub na_label: Option<String>,
    #[arg(long)]
    pub rules: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub rules_preset: Option<crate::config::RulesPreset>,
    /// Take the labels from this dataset directory.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Also resolve the words to vocabulary ids of this checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

fn read_labels(path: &Path) -> Result<Vec<String>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::config("io", format!("cannot read labels {}: {e}", path.display())))?;
    if text.trim_start().starts_with('[') {
        return serde_json::from_str(&text)
            .map_err(|e| CliError::config("invalid_labels", format!("{}: {e}", path.display())));
    }
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

/// Prints the label-word set of every relation as JSON.
pub fn verbalize(args: &VerbalizeArgs) -> Result<(), CliError> {
    let mut config = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(labels) = &args.labels {
        config.labels = Some(labels.clone());
    }
    if let Some(path) = &args.labels_file {
        config.labels = Some(read_labels(path)?);
    }
    if args.na_label.is_some() {
        config.na_label = args.na_label.clone();
    }
    if args.rules.is_some() || args.rules_preset.is_some() {
        config.rules = args.rules.clone();
        config.rules_preset = args.rules_preset;
    }
    if args.dataset.is_some() {
        config.dataset = args.dataset.clone();
    }
    if args.checkpoint.is_some() {
        config.checkpoint = args.checkpoint.clone();
    }
    let fallback = match (&config.labels, &config.dataset) {
        (None, Some(_)) => Some(load_dataset(&config)?.relations()),
        _ => None,
    };
    let schema = schema_for(&config, fallback)?;
    let json = match &config.checkpoint {
        Some(path) => {
            let model = crate::config::load_checkpoint(path)?;
            serde_json::to_string_pretty(&schema.resolve(&model).map_err(CliError::from_config)?)?
        }
        None => schema.export_json().map_err(run_err)?,
    };
    println!("{json}");
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub output_dir: PathBuf,
    /// Also pretrain the toy encoder and save it as a checkpoint.
    #[arg(long)]
    pub pretrain: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub train_per_class: Option<usize>,
    #[arg(long)]
    pub test_per_class: Option<usize>,
}

/// Writes the synthetic dataset, a run config for it and optionally a
/// pretrained encoder.
pub fn synth(args: &SynthArgs) -> Result<(), CliError> {
    let mut sc = SynthConfig::default();
    if let Some(seed) = args.seed {
        sc.seed = seed;
    }
    if let Some(n) = args.train_per_class {
        sc.train_per_class = n;
    }
    if let Some(n) = args.test_per_class {
        sc.test_per_class = n;
    }
    if args.output_dir.is_file() {
        return Err(CliError::config(
            "invalid_config",
            format!("output path {} is a file", args.output_dir.display()),
        ));
    }
    let corpus = synth::generate(&sc).map_err(CliError::from_config)?;
    let schema = synth::synth_schema().map_err(CliError::from_config)?;

    let out = &args.output_dir;
    fs::create_dir_all(out)?;
    corpus.dataset.save_dir(&out.join("data")).map_err(run_err)?;
    let run = RunConfig {
        dataset: Some("data".into()),
        labels: Some(schema.labels().iter().map(|l| l.raw.clone()).collect()),
        k_values: vec![Shots::PerClass(8), Shots::PerClass(32)],
        grid: Some(HparamGrid::toy_default()),
        checkpoint: args.pretrain.then(|| "checkpoint".into()),
        model: synth::model_config(),
        pretrain: synth::pretrain_options(),
        baselines: true,
        output_dir: Some("runs".into()),
        ..RunConfig::default()
    };
    fs::write(out.join("run.json"), serde_json::to_string_pretty(&run)?)?;
    if args.pretrain {
        let encoder = pretrained(corpus.vocab, &corpus.pretrain, &run.model, &run.pretrain)?;
        checkpoint::save(&encoder, &out.join("checkpoint")).map_err(run_err)?;
    }
    println!("{}", out.join("run.json").display());
    Ok(())
}
