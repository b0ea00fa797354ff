//! Grid search over hyper-parameters and the multi-seed evaluation loop.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::harness::metrics::micro_f1;
use crate::harness::split::{materialize, sample_split, Shots};
use crate::harness::train::{FewShotMethod, TrainContext};
use crate::prompt::Example;

/// Default split seeds.
pub const DEFAULT_SEEDS: [u64; 5] = [13, 21, 42, 87, 100];

/// Training length of one grid point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Budget {
    Steps(usize),
    /// Passes over the training set, rounded up to whole batches.
    Epochs(usize),
}

impl Budget {
    pub fn steps(&self, train_len: usize, batch_size: usize) -> usize {
        match *self {
            Budget::Steps(n) => n,
            Budget::Epochs(e) => e * train_len.div_ceil(batch_size.max(1)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HparamPoint {
    pub learning_rate: f64,
    pub budget: Budget,
}

/// Cartesian grid of learning rates and budgets, enumerated learning-rate
/// major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HparamGrid {
    pub learning_rates: Vec<f64>,
    pub budgets: Vec<Budget>,
}

impl HparamGrid {
    /// Grid for the built-in toy backend.
    pub fn toy_default() -> Self {
        HparamGrid {
            learning_rates: vec![1e-3],
            budgets: vec![Budget::Steps(200), Budget::Steps(500)],
        }
    }

    /// Grid for a large pretrained encoder.
    pub fn external_default() -> Self {
        HparamGrid {
            learning_rates: vec![1e-5, 3e-5],
            budgets: vec![Budget::Epochs(10), Budget::Epochs(20)],
        }
    }

    pub fn points(&self) -> Vec<HparamPoint> {
        self.learning_rates
            .iter()
            .flat_map(|&learning_rate| {
                self.budgets
                    .iter()
                    .map(move |&budget| HparamPoint { learning_rate, budget })
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.learning_rates.is_empty() || self.budgets.is_empty() {
            return Err(Error::EmptyGrid);
        }
        if let Some(lr) = self.learning_rates.iter().find(|lr| !(lr.is_finite() && **lr > 0.0)) {
            return Err(Error::InvalidConfig(format!("learning rate must be positive, got {lr}")));
        }
        Ok(())
    }
}

/// Best grid point with its trained model.
#[derive(Debug, Clone)]
pub struct GridOutcome<M> {
    pub best: HparamPoint,
    pub dev_f1: f64,
    pub model: M,
    /// Dev F1 of every point that trained successfully, in grid order.
    pub evaluated: Vec<(HparamPoint, f64)>,
}

/// Trains one model per grid point and keeps the one with the highest dev
/// micro-F1, the first in grid order on ties. Points sharing a learning
/// rate share one training run and are read off as snapshots. Failed
/// points are logged and skipped.
pub fn grid_search<M: FewShotMethod>(
    method: &M,
    ctx: &TrainContext,
    train: &[&Example],
    dev: &[&Example],
    points: &[HparamPoint],
) -> Result<GridOutcome<M::Model>> {
    if points.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let steps_of = |p: &HparamPoint| p.budget.steps(train.len(), method.batch_size());
    let dev_golds = method.gold_indices(dev)?;

    // Unique learning rates in order of first appearance.
    let mut rates: Vec<f64> = Vec::new();
    for p in points {
        if !rates.iter().any(|r| r.to_bits() == p.learning_rate.to_bits()) {
            rates.push(p.learning_rate);
        }
    }
    let mut results: BTreeMap<(u64, usize), (f64, M::Model)> = BTreeMap::new();
    for &lr in &rates {
        let mut wanted: Vec<usize> = points
            .iter()
            .filter(|p| p.learning_rate.to_bits() == lr.to_bits())
            .map(steps_of)
            .collect();
        wanted.sort_unstable();
        wanted.dedup();
        let mut on_snapshot = |steps: usize, model: &M::Model| -> Result<()> {
            let preds = method.predict(model, dev)?;
            let f1 = micro_f1(&preds, &dev_golds, method.schema())?;
            log::info!(
                "{} k={} seed={} lr={lr:e} steps={steps}: dev F1 {f1:.4}",
                method.name(),
                ctx.k,
                ctx.seed
            );
            results.insert((lr.to_bits(), steps), (f1, model.clone()));
            Ok(())
        };
        if let Err(e) = method.train(ctx, train, lr, &wanted, &mut on_snapshot) {
            log::warn!(
                "{} k={} seed={} lr={lr:e}: training failed, skipping remaining points: {e}",
                method.name(),
                ctx.k,
                ctx.seed
            );
        }
    }

    let mut evaluated = Vec::new();
    let mut best: Option<(HparamPoint, f64, (u64, usize))> = None;
    for p in points {
        let key = (p.learning_rate.to_bits(), steps_of(p));
        let Some((f1, _)) = results.get(&key) else { continue };
        evaluated.push((*p, *f1));
        if best.as_ref().is_none_or(|(_, b, _)| *f1 > *b) {
            best = Some((*p, *f1, key));
        }
    }
    let (best, dev_f1, key) = best.ok_or(Error::AllPointsFailed)?;
    let model = results.remove(&key).expect("best point was evaluated").1;
    Ok(GridOutcome {
        best,
        dev_f1,
        model,
        evaluated,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitResult {
    pub seed: u64,
    pub dev_f1: f64,
    pub test_f1: f64,
    pub best_hparams: HparamPoint,
}

/// Per-split scores for one K with their mean and sample standard
/// deviation (zero for a single split).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub k: Shots,
    pub per_split: Vec<SplitResult>,
    pub mean_dev: f64,
    pub mean_test: f64,
    pub std_dev: f64,
    pub std_test: f64,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl EvalReport {
    pub fn from_splits(k: Shots, per_split: Vec<SplitResult>) -> Self {
        let (mean_dev, std_dev) = mean_std(&per_split.iter().map(|s| s.dev_f1).collect::<Vec<_>>());
        let (mean_test, std_test) = mean_std(&per_split.iter().map(|s| s.test_f1).collect::<Vec<_>>());
        EvalReport {
            k,
            per_split,
            mean_dev,
            mean_test,
            std_dev,
            std_test,
        }
    }
}

/// Reports for every K of one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub method: String,
    pub reports: Vec<EvalReport>,
}

impl ExperimentReport {
    pub fn report(&self, k: Shots) -> Option<&EvalReport> {
        self.reports.iter().find(|r| r.k == k)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Plain-text table with one row per method and K: mean ± std of dev and
/// test micro-F1, in percent.
pub fn format_table(reports: &[ExperimentReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<16} {:>5}  {:>13}  {:>13}", "Method", "K", "Dev", "Test");
    for r in reports {
        for e in &r.reports {
            let cell = |m: f64, s: f64| format!("{:.1} ± {:.1}", 100.0 * m, 100.0 * s);
            let _ = writeln!(
                out,
                "{:<16} {:>5}  {:>13}  {:>13}",
                r.method,
                e.k.to_string(),
                cell(e.mean_dev, e.std_dev),
                cell(e.mean_test, e.std_test)
            );
        }
    }
    out
}

/// For each K and seed: sample a split, grid-search on dev, and score the
/// selected model on test. `Shots::All` runs once, with the first seed.
///
/// On failure the completed splits are returned inside
/// [`Error::Experiment`].
pub fn run_experiment<M: FewShotMethod>(
    method: &M,
    dataset: &Dataset,
    k_values: &[Shots],
    seeds: &[u64],
    grid: &HparamGrid,
) -> Result<ExperimentReport> {
    run_experiment_with(method, dataset, k_values, seeds, grid, &mut |_, _| Ok(()))
}

/// [`run_experiment`] that also hands each split's selected model to
/// `on_selected`, for example to save it.
pub fn run_experiment_with<M: FewShotMethod>(
    method: &M,
    dataset: &Dataset,
    k_values: &[Shots],
    seeds: &[u64],
    grid: &HparamGrid,
    on_selected: &mut dyn FnMut(&TrainContext, &M::Model) -> Result<()>,
) -> Result<ExperimentReport> {
    grid.validate()?;
    if seeds.is_empty() {
        return Err(Error::InvalidConfig("at least one seed is required".into()));
    }
    let points = grid.points();
    let mut report = ExperimentReport {
        method: method.name().to_string(),
        reports: Vec::new(),
    };
    let mut completed = 0;
    for &k in k_values {
        let seeds_for_k = if k == Shots::All { &seeds[..1] } else { seeds };
        let mut per_split = Vec::new();
        for &seed in seeds_for_k {
            let mut run = || -> Result<SplitResult> {
                let split = sample_split(dataset, k, seed)?;
                let data = materialize(&split, dataset)?;
                let ctx = TrainContext { k, seed };
                let outcome = grid_search(method, &ctx, &data.train, &data.dev, &points)?;
                let preds = method.predict(&outcome.model, &data.test)?;
                let golds = method.gold_indices(&data.test)?;
                let test_f1 = micro_f1(&preds, &golds, method.schema())?;
                on_selected(&ctx, &outcome.model)?;
                log::info!(
                    "{} k={k} seed={seed}: best {:?}, dev {:.4}, test {test_f1:.4}",
                    method.name(),
                    outcome.best,
                    outcome.dev_f1
                );
                Ok(SplitResult {
                    seed,
                    dev_f1: outcome.dev_f1,
                    test_f1,
                    best_hparams: outcome.best,
                })
            };
            match run() {
                Ok(r) => {
                    per_split.push(r);
                    completed += 1;
                }
                Err(source) => {
                    if !per_split.is_empty() {
                        report.reports.push(EvalReport::from_splits(k, per_split));
                    }
                    return Err(Error::Experiment {
                        completed,
                        partial: Box::new(report),
                        source: Box::new(source),
                    });
                }
            }
        }
        report.reports.push(EvalReport::from_splits(k, per_split));
    }
    Ok(report)
}
