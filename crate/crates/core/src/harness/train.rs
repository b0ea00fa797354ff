//! Training methods compared by the harness: prompt tuning, a
//! classification head over `[CLS]`, and a majority-class predictor.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{finetune_step, Adam, AdamConfig, Graph, Matrix, ParamId, Trainable};
use crate::backend::tensor::{argmax, dot};
use crate::error::{Error, Result};
use crate::harness::split::Shots;
use crate::objectives::TrainItem;
use crate::prompt::{
    render_entity_masked, render_prompt, render_sentence, EntityChoice, EntityMaskedInstance, EntityRole, Example,
    Markers, PromptInstance, PromptTemplate, TemplateForm,
};
use crate::scoring::{score, ScoringMode};
use crate::verbalizer::{LabelWordSet, RelationSchema};

/// Which entity the entity-discrimination objective masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityTarget {
    Subject,
    Object,
    #[default]
    Random,
}

impl From<EntityTarget> for EntityChoice {
    fn from(t: EntityTarget) -> Self {
        match t {
            EntityTarget::Subject => EntityChoice::Fixed(EntityRole::Subject),
            EntityTarget::Object => EntityChoice::Fixed(EntityRole::Object),
            EntityTarget::Random => EntityChoice::Random,
        }
    }
}

/// Settings shared by every grid point. The learning rate and step count
/// come from the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub template: TemplateForm,
    pub scoring: ScoringMode,
    pub entity_loss: bool,
    pub lambda_e: f64,
    pub entity_target: EntityTarget,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub markers: Markers,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            template: TemplateForm::RelationBetween,
            scoring: ScoringMode::SummedLogit,
            entity_loss: true,
            lambda_e: 1.0,
            entity_target: EntityTarget::Random,
            batch_size: 8,
            adam: AdamConfig::default(),
            markers: Markers::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if !(self.lambda_e.is_finite() && self.lambda_e >= 0.0) {
            return Err(Error::InvalidConfig(format!("lambda_e must be finite and non-negative, got {}", self.lambda_e)));
        }
        for (i, m) in self.markers.all().iter().enumerate() {
            if m.is_empty() || m.chars().any(char::is_whitespace) {
                return Err(Error::InvalidConfig(format!("entity marker `{m}` must be a non-empty token")));
            }
            if self.markers.all()[..i].contains(m) {
                return Err(Error::InvalidConfig(format!("entity marker `{m}` is used twice")));
            }
        }
        Ok(())
    }

    pub fn prompt_template(&self) -> PromptTemplate {
        PromptTemplate {
            form: self.template,
            markers: self.markers.clone(),
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub k: Shots,
    pub seed: u64,
    pub learning_rate: f64,
    pub step: usize,
    pub l_r: f64,
    pub l_e: f64,
    pub total: f64,
}

/// Writes [`StepLog`] records as JSON lines.
pub struct StepLogger {
    out: Mutex<Box<dyn Write + Send>>,
}

impl StepLogger {
    pub fn new(out: Box<dyn Write + Send>) -> Self {
        StepLogger { out: Mutex::new(out) }
    }

    pub fn create(path: &Path) -> Result<Self> {
        Ok(Self::new(Box::new(BufWriter::new(fs::File::create(path)?))))
    }

    pub fn log(&self, record: &StepLog) -> Result<()> {
        let mut out = self.out.lock().unwrap_or_else(|e| e.into_inner());
        serde_json::to_writer(&mut *out, record)?;
        out.write_all(b"\n")?;
        Ok(())
    }

    pub fn flush(&self) -> Result<()> {
        self.out.lock().unwrap_or_else(|e| e.into_inner()).flush()?;
        Ok(())
    }
}

impl std::fmt::Debug for StepLogger {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("StepLogger")
    }
}

/// Identifies the split a training run belongs to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainContext {
    pub k: Shots,
    pub seed: u64,
}

/// Snapshot callback: receives the step count and the model after it.
pub type OnSnapshot<'a, M> = dyn FnMut(usize, &M) -> Result<()> + 'a;

pub trait FewShotMethod {
    type Model: Clone;

    fn name(&self) -> &str;

    /// Examples per optimizer step, used to convert epoch budgets.
    fn batch_size(&self) -> usize;

    /// Trains one model at `learning_rate` and reports it after each step
    /// count in `snapshots` (ascending). Runs are deterministic in
    /// `ctx.seed`, so the model after `n` steps does not depend on how far
    /// training continues.
    fn train(
        &self,
        ctx: &TrainContext,
        train: &[&Example],
        learning_rate: f64,
        snapshots: &[usize],
        on_snapshot: &mut OnSnapshot<'_, Self::Model>,
    ) -> Result<()>;

    fn predict(&self, model: &Self::Model, examples: &[&Example]) -> Result<Vec<usize>>;

    fn gold_indices(&self, examples: &[&Example]) -> Result<Vec<usize>> {
        examples.iter().map(|e| self.schema().index_of(&e.relation)).collect()
    }

    fn schema(&self) -> &RelationSchema;
}

/// Cycles through shuffled epochs and yields batches of indices.
struct BatchCursor {
    order: Vec<usize>,
    pos: usize,
    batch_size: usize,
}

impl BatchCursor {
    fn new(n: usize, batch_size: usize) -> Self {
        BatchCursor {
            order: (0..n).collect(),
            pos: n,
            batch_size,
        }
    }

    /// Returns the next batch and whether it starts a new epoch.
    fn next(&mut self, rng: &mut ChaCha8Rng) -> (Vec<usize>, bool) {
        let fresh = self.pos >= self.order.len();
        if fresh {
            self.order.shuffle(rng);
            self.pos = 0;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let batch = self.order[self.pos..end].to_vec();
        self.pos = end;
        (batch, fresh)
    }
}

fn check_snapshots(snapshots: &[usize]) -> Result<usize> {
    if snapshots.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig("snapshot steps must be strictly ascending".into()));
    }
    snapshots.last().copied().ok_or(Error::EmptyGrid)
}

/// Cloze prompt tuning with the relation and entity objectives.
#[derive(Debug)]
pub struct PromptTuning<B> {
    base: B,
    schema: RelationSchema,
    classes: Vec<LabelWordSet>,
    template: PromptTemplate,
    config: TrainConfig,
    logger: Option<StepLogger>,
}

impl<B: Trainable> PromptTuning<B> {
    /// Resolves every label word against `base`'s vocabulary.
    pub fn new(base: B, schema: RelationSchema, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let classes = schema.resolve(&base)?;
        Ok(PromptTuning {
            template: config.prompt_template(),
            base,
            schema,
            classes,
            config,
            logger: None,
        })
    }

    pub fn with_logger(mut self, logger: StepLogger) -> Self {
        self.logger = Some(logger);
        self
    }

    pub fn logger(&self) -> Option<&StepLogger> {
        self.logger.as_ref()
    }

    pub fn classes(&self) -> &[LabelWordSet] {
        &self.classes
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn base(&self) -> &B {
        &self.base
    }

    fn draw_entities(&self, train: &[&Example], golds: &[usize], rng: &mut ChaCha8Rng) -> Result<Vec<EntityMaskedInstance>> {
        let which = EntityChoice::from(self.config.entity_target);
        train
            .iter()
            .zip(golds)
            .map(|(ex, &g)| render_entity_masked(ex, &self.template, &self.base, &self.classes[g], which, rng))
            .collect()
    }
}

impl<B: Trainable> FewShotMethod for PromptTuning<B> {
    type Model = B;

    fn name(&self) -> &str {
        if self.config.entity_loss {
            "adaprompt"
        } else {
            "adaprompt-rd"
        }
    }

    fn batch_size(&self) -> usize {
        self.config.batch_size
    }

    fn schema(&self) -> &RelationSchema {
        &self.schema
    }

    fn train(
        &self,
        ctx: &TrainContext,
        train: &[&Example],
        learning_rate: f64,
        snapshots: &[usize],
        on_snapshot: &mut OnSnapshot<'_, B>,
    ) -> Result<()> {
        let last = check_snapshots(snapshots)?;
        if train.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let prompts: Vec<PromptInstance> = train
            .iter()
            .map(|ex| render_prompt(ex, &self.template, &self.base))
            .collect::<Result<_>>()?;
        let golds = self.gold_indices(train)?;
        let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
        let mut model = self.base.clone();
        let adam_config = AdamConfig {
            learning_rate,
            ..self.config.adam
        };
        let mut adam = Adam::new(adam_config, model.param_store());
        let mut cursor = BatchCursor::new(train.len(), self.config.batch_size);
        let mut entities: Vec<EntityMaskedInstance> = Vec::new();
        let mut next_snapshot = snapshots.iter().peekable();
        if next_snapshot.peek() == Some(&&0) {
            on_snapshot(0, &model)?;
            next_snapshot.next();
        }
        for step in 0..last {
            let (batch, new_epoch) = cursor.next(&mut rng);
            if new_epoch && self.config.entity_loss {
                entities = self.draw_entities(train, &golds, &mut rng)?;
            }
            let items: Vec<TrainItem> = batch
                .iter()
                .map(|&i| TrainItem {
                    prompt: &prompts[i],
                    entity: entities.get(i),
                    gold: golds[i],
                })
                .collect();
            let loss = finetune_step(&items, &self.classes, &mut adam, &mut model, self.config.lambda_e)?;
            if let Some(logger) = &self.logger {
                logger.log(&StepLog {
                    k: ctx.k,
                    seed: ctx.seed,
                    learning_rate,
                    step,
                    l_r: loss.l_r,
                    l_e: loss.l_e,
                    total: loss.total,
                })?;
            }
            if next_snapshot.peek() == Some(&&(step + 1)) {
                on_snapshot(step + 1, &model)?;
                next_snapshot.next();
            }
        }
        if let Some(logger) = &self.logger {
            logger.flush()?;
        }
        Ok(())
    }

    fn predict(&self, model: &B, examples: &[&Example]) -> Result<Vec<usize>> {
        examples
            .iter()
            .map(|ex| {
                let prompt = render_prompt(ex, &self.template, model)?;
                Ok(score(self.config.scoring, &prompt, &self.classes, model)?.argmax)
            })
            .collect()
    }
}

/// A backend with a linear classifier over the `[CLS]` hidden state.
#[derive(Debug, Clone)]
pub struct HeadModel<B> {
    pub backend: B,
    weight: ParamId,
    bias: ParamId,
}

impl<B: Trainable> HeadModel<B> {
    pub fn logits(&self, token_ids: &[u32]) -> Result<Vec<f64>> {
        let states = self.backend.encode(token_ids)?;
        let store = self.backend.param_store();
        let (w, b) = (store.get(self.weight), store.get(self.bias));
        Ok((0..w.rows).map(|c| dot(w.row(c), states.row(0)) + b.data[c]).collect())
    }
}

/// Standard fine-tuning: a randomly initialized head on `[CLS]`, trained
/// jointly with the encoder by cross-entropy. Inputs carry entity markers
/// but no template.
#[derive(Debug)]
pub struct HeadFinetune<B> {
    base: B,
    schema: RelationSchema,
    config: TrainConfig,
}

/// Standard deviation of the head's initial weights.
const HEAD_INIT_STD: f64 = 0.02;

impl<B: Trainable> HeadFinetune<B> {
    pub fn new(base: B, schema: RelationSchema, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(HeadFinetune { base, schema, config })
    }

    fn inputs(&self, backend: &B, examples: &[&Example]) -> Result<Vec<Vec<u32>>> {
        let markers = &self.config.markers;
        examples.iter().map(|ex| render_sentence(ex, markers, backend)).collect()
    }
}

impl<B: Trainable> FewShotMethod for HeadFinetune<B> {
    type Model = HeadModel<B>;

    fn name(&self) -> &str {
        "head-finetune"
    }

    fn batch_size(&self) -> usize {
        self.config.batch_size
    }

    fn schema(&self) -> &RelationSchema {
        &self.schema
    }

    fn train(
        &self,
        ctx: &TrainContext,
        train: &[&Example],
        learning_rate: f64,
        snapshots: &[usize],
        on_snapshot: &mut OnSnapshot<'_, HeadModel<B>>,
    ) -> Result<()> {
        let last = check_snapshots(snapshots)?;
        if train.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let inputs = self.inputs(&self.base, train)?;
        let golds = self.gold_indices(train)?;
        let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
        let mut backend = self.base.clone();
        let (c, d) = (self.schema.len(), backend.hidden_dim());
        let weight = backend
            .param_store_mut()
            .add("head.w", Matrix::randn(c, d, HEAD_INIT_STD, &mut rng));
        let bias = backend.param_store_mut().add("head.b", Matrix::zeros(1, c));
        let mut model = HeadModel { backend, weight, bias };
        let mut adam = Adam::new(
            AdamConfig {
                learning_rate,
                ..self.config.adam
            },
            model.backend.param_store(),
        );
        let mut cursor = BatchCursor::new(train.len(), self.config.batch_size);
        let mut next_snapshot = snapshots.iter().peekable();
        if next_snapshot.peek() == Some(&&0) {
            on_snapshot(0, &model)?;
            next_snapshot.next();
        }
        for step in 0..last {
            let (batch, _) = cursor.next(&mut rng);
            let n = batch.len() as f64;
            let mut loss = 0.0;
            let mut grads = model.backend.param_store().zero_grads();
            for &i in &batch {
                let mut g = Graph::new(model.backend.param_store());
                let hidden = model.backend.encode_graph(&mut g, &inputs[i])?;
                let cls = g.gather(hidden, &[0]);
                let w = g.param(weight);
                let b = g.param(bias);
                let logits = g.matmul_bt(cls, w);
                let logits = g.add_row(logits, b);
                let xent = g.softmax_xent(logits, &[golds[i]]);
                let scaled = g.scale(xent, 1.0 / n);
                loss += g.scalar(scaled);
                grads.add_scaled(&g.backward(scaled), 1.0);
            }
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::NonFiniteLoss { step, l_r: loss, l_e: 0.0 });
            }
            adam.step(model.backend.param_store_mut(), &grads);
            if next_snapshot.peek() == Some(&&(step + 1)) {
                on_snapshot(step + 1, &model)?;
                next_snapshot.next();
            }
        }
        Ok(())
    }

    fn predict(&self, model: &HeadModel<B>, examples: &[&Example]) -> Result<Vec<usize>> {
        self.inputs(&model.backend, examples)?
            .iter()
            .map(|ids| Ok(argmax(&model.logits(ids)?)))
            .collect()
    }
}

/// Predicts the most frequent training class; ties go to the lowest
/// class index.
#[derive(Debug, Clone)]
pub struct Majority {
    schema: RelationSchema,
}

impl Majority {
    pub fn new(schema: RelationSchema) -> Self {
        Majority { schema }
    }
}

impl FewShotMethod for Majority {
    type Model = usize;

    fn name(&self) -> &str {
        "majority"
    }

    fn batch_size(&self) -> usize {
        1
    }

    fn schema(&self) -> &RelationSchema {
        &self.schema
    }

    fn train(
        &self,
        _ctx: &TrainContext,
        train: &[&Example],
        _learning_rate: f64,
        snapshots: &[usize],
        on_snapshot: &mut OnSnapshot<'_, usize>,
    ) -> Result<()> {
        check_snapshots(snapshots)?;
        let mut counts = vec![0.0; self.schema.len()];
        for g in self.gold_indices(train)? {
            counts[g] += 1.0;
        }
        let class = argmax(&counts);
        for &s in snapshots {
            on_snapshot(s, &class)?;
        }
        Ok(())
    }

    fn predict(&self, model: &usize, examples: &[&Example]) -> Result<Vec<usize>> {
        Ok(vec![*model; examples.len()])
    }
}
