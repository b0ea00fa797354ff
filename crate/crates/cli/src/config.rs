//! Run configuration: a JSON file plus command-line overrides, resolved and
//! validated before any output is written.

use std::path::{Path, PathBuf};

use adaprompt::backend::checkpoint;
use adaprompt::backend::{BackendKind, PretrainOptions};
use adaprompt::data::Dataset;
use adaprompt::harness::{sample_split, Budget, EntityTarget, HparamGrid, Shots, TrainConfig, DEFAULT_SEEDS};
use adaprompt::prompt::{render_prompt, required_tokens, TemplateForm};
use adaprompt::verbalizer::{build_schema, RelationSchema, RuleConfig};
use adaprompt::{ScoringMode, ToyMlm, ToyMlmConfig, Vocab};
use clap::Args;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Environment variable naming the checkpoint cache directory.
pub const CACHE_ENV: &str = "ADAPROMPT_CACHE";

/// Seed for embedding rows of tokens added to a loaded checkpoint.
const ADDED_TOKEN_SEED: u64 = 0x70_6b;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum RulesPreset {
    Default,
    Tacred,
}

impl RulesPreset {
    pub fn rules(self) -> RuleConfig {
        match self {
            RulesPreset::Default => RuleConfig::default(),
            RulesPreset::Tacred => RuleConfig::tacred(),
        }
    }
}

/// Contents of a run config file. Relative paths are taken relative to the
/// file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Directory holding train.jsonl, test.jsonl and optionally dev.jsonl.
    pub dataset: Option<PathBuf>,
    /// Relation labels in class order. Defaults to the sorted labels of
    /// the dataset.
    pub labels: Option<Vec<String>>,
    /// The N/A label. Defaults to `no_relation` when that label exists.
    pub na_label: Option<String>,
    /// Rule config file for label decomposition.
    pub rules: Option<PathBuf>,
    pub rules_preset: Option<RulesPreset>,
    pub train: TrainConfig,
    pub k_values: Vec<Shots>,
    pub seeds: Vec<u64>,
    /// Defaults to the grid for the selected backend.
    pub grid: Option<HparamGrid>,
    pub backend: String,
    /// Existing checkpoint. Without one, a toy model is pretrained on the
    /// dataset text.
    pub checkpoint: Option<PathBuf>,
    pub model: ToyMlmConfig,
    pub pretrain: PretrainOptions,
    /// Also run the majority and classification-head baselines.
    pub baselines: bool,
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: None,
            labels: None,
            na_label: None,
            rules: None,
            rules_preset: None,
            train: TrainConfig::default(),
            k_values: vec![Shots::PerClass(8), Shots::PerClass(16), Shots::PerClass(32)],
            seeds: DEFAULT_SEEDS.to_vec(),
            grid: None,
            backend: "toy".into(),
            checkpoint: None,
            model: ToyMlmConfig::default(),
            pretrain: PretrainOptions::default(),
            baselines: false,
            output_dir: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config("io", format!("cannot read config {}: {e}", path.display())))?;
        let mut config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::config("invalid_config", format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut config.dataset, &mut config.rules, &mut config.checkpoint, &mut config.output_dir]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }
}

/// Command-line flags shared by `train`, `eval` and `split`. Every flag
/// overrides the matching config entry.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// Run config JSON file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Relation labels in class order, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub labels: Option<Vec<String>>,
    #[arg(long)]
    pub na_label: Option<String>,
    #[arg(long)]
    pub rules: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub rules_preset: Option<RulesPreset>,
    /// copula or relation-between.
    #[arg(long)]
    pub template: Option<TemplateForm>,
    /// summed-logit or marginal.
    #[arg(long)]
    pub scoring: Option<ScoringMode>,
    /// Train with the relation objective only.
    #[arg(long)]
    pub no_entity_loss: bool,
    #[arg(long)]
    pub lambda_e: Option<f64>,
    #[arg(long, value_enum)]
    pub entity_target: Option<EntityTargetArg>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Shots per class, comma separated; `all` uses the full training set.
    #[arg(long = "k", value_delimiter = ',')]
    pub k_values: Option<Vec<Shots>>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',')]
    pub learning_rates: Option<Vec<f64>>,
    /// Step budgets of the grid, comma separated.
    #[arg(long, value_delimiter = ',', conflicts_with = "epochs")]
    pub steps: Option<Vec<usize>>,
    /// Epoch budgets of the grid, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub epochs: Option<Vec<usize>>,
    /// `toy` or `external:<adapter>`.
    #[arg(long)]
    pub backend: Option<String>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub pretrain_steps: Option<usize>,
    #[arg(long)]
    pub baselines: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum EntityTargetArg {
    Subject,
    Object,
    Random,
}

impl From<EntityTargetArg> for EntityTarget {
    fn from(a: EntityTargetArg) -> Self {
        match a {
            EntityTargetArg::Subject => EntityTarget::Subject,
            EntityTargetArg::Object => EntityTarget::Object,
            EntityTargetArg::Random => EntityTarget::Random,
        }
    }
}

impl RunArgs {
    /// Loads the config file, if any, and applies the flags on top.
    pub fn merged(&self) -> Result<RunConfig, CliError> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($field:expr, $flag:expr) => {
                if let Some(v) = $flag.clone() {
                    $field = v;
                }
            };
        }
        set!(c.dataset, self.dataset.as_ref().map(|p| Some(p.clone())));
        set!(c.output_dir, self.output_dir.as_ref().map(|p| Some(p.clone())));
        set!(c.labels, self.labels.as_ref().map(|l| Some(l.clone())));
        set!(c.na_label, self.na_label.as_ref().map(|l| Some(l.clone())));
        if self.rules.is_some() || self.rules_preset.is_some() {
            c.rules = self.rules.clone();
            c.rules_preset = self.rules_preset;
        }
        set!(c.train.template, self.template);
        set!(c.train.scoring, self.scoring);
        set!(c.train.lambda_e, self.lambda_e);
        set!(c.train.entity_target, self.entity_target.map(EntityTarget::from));
        set!(c.train.batch_size, self.batch_size);
        set!(c.k_values, self.k_values);
        set!(c.seeds, self.seeds);
        set!(c.backend, self.backend);
        set!(c.checkpoint, self.checkpoint.as_ref().map(|p| Some(p.clone())));
        set!(c.pretrain.steps, self.pretrain_steps);
        if self.no_entity_loss {
            c.train.entity_loss = false;
        }
        if self.baselines {
            c.baselines = true;
        }
        let budgets = match (&self.steps, &self.epochs) {
            (Some(s), _) => Some(s.iter().map(|&n| Budget::Steps(n)).collect::<Vec<_>>()),
            (None, Some(e)) => Some(e.iter().map(|&n| Budget::Epochs(n)).collect()),
            (None, None) => None,
        };
        if self.learning_rates.is_some() || budgets.is_some() {
            let mut grid = c.grid.clone().unwrap_or_else(HparamGrid::toy_default);
            set!(grid.learning_rates, self.learning_rates);
            set!(grid.budgets, budgets);
            c.grid = Some(grid);
        }
        Ok(c)
    }
}

/// Where the encoder of a run comes from.
#[derive(Debug, Clone)]
pub enum BaseModel {
    /// A checkpoint, with the marker and template tokens added.
    Loaded(ToyMlm),
    /// Pretrained on the dataset text once the run starts.
    Pretrain { vocab: Vocab, corpus: Vec<Vec<u32>> },
}

/// A validated run: everything loaded, nothing written.
#[derive(Debug)]
pub struct Resolved {
    pub config: RunConfig,
    pub dataset: Dataset,
    pub schema: RelationSchema,
    pub grid: HparamGrid,
    pub output_dir: PathBuf,
}

fn invalid(message: impl Into<String>) -> CliError {
    CliError::config("invalid_config", message)
}

fn check_backend(config: &RunConfig) -> Result<(), CliError> {
    let kind: BackendKind = config.backend.parse().map_err(CliError::from_config)?;
    match kind {
        BackendKind::Toy => Ok(()),
        BackendKind::External(name) => Err(CliError::config(
            "unsupported_backend",
            format!("external backend `{name}` is not available in this build; use `toy`"),
        )),
    }
}

/// Resolves `path` against the cache directory when it does not exist as
/// given.
pub fn locate_checkpoint(path: &Path) -> PathBuf {
    if path.is_relative() && !path.exists() {
        if let Some(cache) = std::env::var_os(CACHE_ENV) {
            let cached = Path::new(&cache).join(path);
            if cached.exists() {
                return cached;
            }
        }
    }
    path.to_path_buf()
}

pub fn load_checkpoint(path: &Path) -> Result<ToyMlm, CliError> {
    let dir = locate_checkpoint(path);
    if !dir.is_dir() {
        return Err(CliError::config("missing_checkpoint", format!("checkpoint {} not found", dir.display())));
    }
    checkpoint::load(&dir).map_err(CliError::from_config)
}

pub fn load_dataset(config: &RunConfig) -> Result<Dataset, CliError> {
    let dir = config
        .dataset
        .as_ref()
        .ok_or_else(|| invalid("no dataset given; set `dataset` or pass --dataset"))?;
    if !dir.is_dir() {
        return Err(CliError::config("missing_dataset", format!("dataset directory {} not found", dir.display())));
    }
    for file in ["train.jsonl", "test.jsonl"] {
        if !dir.join(file).is_file() {
            return Err(CliError::config(
                "missing_dataset",
                format!("dataset directory {} has no {file}", dir.display()),
            ));
        }
    }
    Dataset::load_dir(dir).map_err(CliError::from_config)
}

/// Builds the schema from the configured labels, or from `fallback` when
/// none are configured.
pub fn schema_for(config: &RunConfig, fallback: Option<Vec<String>>) -> Result<RelationSchema, CliError> {
    let rules = match (&config.rules, config.rules_preset) {
        (Some(_), Some(_)) => return Err(invalid("set either `rules` or `rules_preset`, not both")),
        (Some(path), None) => RuleConfig::load(path)
            .map_err(|e| CliError::config("invalid_rules", format!("{}: {e}", path.display())))?,
        (None, Some(preset)) => preset.rules(),
        (None, None) => RuleConfig::default(),
    };
    let labels = config
        .labels
        .clone()
        .or(fallback)
        .ok_or_else(|| invalid("no relation labels given"))?;
    let na = match &config.na_label {
        Some(na) => Some(na.as_str()),
        None => labels.iter().any(|l| l == "no_relation").then_some("no_relation"),
    };
    build_schema(&labels, na, rules).map_err(CliError::from_config)
}

/// Vocabulary and corpus for pretraining a toy encoder on the dataset.
/// The vocabulary holds every dataset word, every label word and the
/// template tokens; the corpus is the training and dev sentences.
pub fn dataset_corpus(dataset: &Dataset, schema: &RelationSchema, config: &RunConfig) -> (Vocab, Vec<Vec<u32>>) {
    let mut words: Vec<String> = required_tokens(&config.train.prompt_template());
    words.extend(schema.word_sets().iter().flat_map(|ws| ws.words.iter().cloned()));
    words.extend(dataset.all().flat_map(|e| e.tokens.iter().cloned()));
    let vocab = Vocab::new(words);
    let corpus = dataset
        .train
        .iter()
        .chain(dataset.dev.iter().flatten())
        .map(|e| vocab.encode_words(&e.tokens))
        .collect();
    (vocab, corpus)
}

impl Resolved {
    /// Validates `config` for a command that writes into the output
    /// directory. Nothing touches the file system besides reads.
    pub fn new(config: RunConfig) -> Result<Self, CliError> {
        check_backend(&config)?;
        let output_dir = config
            .output_dir
            .clone()
            .ok_or_else(|| invalid("no output directory given; set `output_dir` or pass --output-dir"))?;
        if output_dir.is_file() {
            return Err(invalid(format!("output path {} is a file", output_dir.display())));
        }
        config.train.validate().map_err(CliError::from_config)?;
        config.model.validate().map_err(CliError::from_config)?;
        if config.k_values.is_empty() {
            return Err(invalid("`k_values` is empty"));
        }
        if config.seeds.is_empty() {
            return Err(invalid("`seeds` is empty"));
        }
        let grid = config.grid.clone().unwrap_or_else(HparamGrid::toy_default);
        grid.validate().map_err(CliError::from_config)?;
        if let Some(cp) = &config.checkpoint {
            let dir = locate_checkpoint(cp);
            if !dir.is_dir() {
                return Err(CliError::config("missing_checkpoint", format!("checkpoint {} not found", dir.display())));
            }
        }
        let dataset = load_dataset(&config)?;
        let schema = schema_for(&config, Some(dataset.relations()))?;
        for label in dataset.relations() {
            schema.lookup(&label).map_err(CliError::from_config)?;
        }
        Ok(Resolved {
            config,
            dataset,
            schema,
            grid,
            output_dir,
        })
    }

    /// Checks that every K can be drawn from the training pool.
    pub fn check_splits(&self) -> Result<(), CliError> {
        for &k in &self.config.k_values {
            sample_split(&self.dataset, k, self.config.seeds[0]).map_err(CliError::from_config)?;
        }
        Ok(())
    }

    /// Loads the checkpoint or prepares the pretraining corpus, and checks
    /// that every label word and template token can be encoded.
    pub fn base_model(&self) -> Result<BaseModel, CliError> {
        let base = match &self.config.checkpoint {
            Some(path) => {
                let mut model = load_checkpoint(path)?;
                model
                    .add_tokens(&required_tokens(&self.config.train.prompt_template()), ADDED_TOKEN_SEED)
                    .map_err(CliError::from_config)?;
                self.schema.resolve(&model).map_err(CliError::from_config)?;
                check_prompts(&self.dataset, &self.config, &model)?;
                BaseModel::Loaded(model)
            }
            None => {
                let (vocab, corpus) = dataset_corpus(&self.dataset, &self.schema, &self.config);
                let probe = ToyMlm::new(self.config.model.clone(), vocab.clone()).map_err(CliError::from_config)?;
                check_prompts(&self.dataset, &self.config, &probe)?;
                BaseModel::Pretrain { vocab, corpus }
            }
        };
        Ok(base)
    }
}

/// Renders every prompt once so that truncation failures surface before
/// training starts.
fn check_prompts(dataset: &Dataset, config: &RunConfig, model: &ToyMlm) -> Result<(), CliError> {
    let template = config.train.prompt_template();
    for ex in dataset.all() {
        render_prompt(ex, &template, model).map_err(CliError::from_config)?;
    }
    Ok(())
}
