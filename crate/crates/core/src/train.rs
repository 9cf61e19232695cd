//! Mini-batch Adam training and evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{FimError, Result};
use crate::metrics::ScoredSet;
use crate::model::{Example, FimModel};
use crate::numerics::bce;
use crate::numerics::{adam_step, AdamConfig, AdamState, ParamStore};

pub fn task_names(tasks: usize) -> &'static [&'static str] {
    match tasks {
        1 => &["purchase"],
        _ => &["click", "purchase"],
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { batch_size: 256, epochs: 1, adam: AdamConfig::default(), seed: 1 }
    }
}

/// One CSV row: after `step` optimizer updates, the mean training loss of a
/// task and its test AUC/GAUC.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub step: usize,
    pub task: &'static str,
    pub loss: f64,
    pub auc: Option<f64>,
    pub gauc: Option<f64>,
}

pub const CSV_HEADER: &str = "step,task,loss,auc,gauc";

impl MetricRow {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(String::new, |v| format!("{v:.6}"));
        format!("{},{},{:.6},{},{}", self.step, self.task, self.loss, opt(self.auc), opt(self.gauc))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskEval {
    pub task: &'static str,
    pub loss: f64,
    pub auc: Option<f64>,
    pub gauc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub tasks: Vec<TaskEval>,
    pub sets: Vec<ScoredSet>,
}

impl EvalReport {
    pub fn task(&self, name: &str) -> Option<&TaskEval> {
        self.tasks.iter().find(|t| t.task == name)
    }
}

pub fn evaluate(model: &FimModel, store: &ParamStore, examples: &[Example]) -> Result<EvalReport> {
    let names = task_names(model.cfg.tasks);
    let mut sets = vec![ScoredSet::default(); names.len()];
    let mut losses = vec![0.0; names.len()];
    for ex in examples {
        let probs = model.predict(store, ex)?;
        for (t, (&p, &y)) in probs.iter().zip(&ex.labels).enumerate() {
            sets[t].push(p, y > 0.5, &ex.user_id)?;
            losses[t] += bce(p, y);
        }
    }
    let n = examples.len().max(1) as f64;
    let tasks = names
        .iter()
        .zip(&sets)
        .zip(&losses)
        .map(|((&task, set), &l)| TaskEval { task, loss: l / n, auc: set.auc(), gauc: set.gauc() })
        .collect();
    Ok(EvalReport { tasks, sets })
}

/// Per-task mean BCE over the examples at the current parameters.
fn task_losses(model: &FimModel, store: &ParamStore, batch: &[&Example]) -> Result<Vec<f64>> {
    let mut sums = vec![0.0; model.cfg.tasks];
    for ex in batch {
        for (t, (p, y)) in model.predict(store, ex)?.iter().zip(&ex.labels).enumerate() {
            sums[t] += bce(*p, *y);
        }
    }
    Ok(sums.iter().map(|s| s / batch.len().max(1) as f64).collect())
}

pub struct TrainOutcome {
    pub rows: Vec<MetricRow>,
    pub steps: usize,
    pub final_eval: EvalReport,
}

/// Trains in place. Rows: step 0 (loss of the first batch at
/// initialisation) and one per epoch.
pub fn train(
    model: &FimModel,
    store: &mut ParamStore,
    train: &[Example],
    test: &[Example],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(FimError::EmptyInput("training set"));
    }
    if cfg.batch_size == 0 {
        return Err(FimError::config("batch_size", "must be at least 1"));
    }
    let names = task_names(model.cfg.tasks);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = AdamState::new(store);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut rows = Vec::new();
    let mut steps = 0;

    let first: Vec<&Example> = train.iter().take(cfg.batch_size).collect();
    let init_loss = task_losses(model, store, &first)?;
    let init_eval = evaluate(model, store, test)?;
    for (t, &task) in names.iter().enumerate() {
        let e = &init_eval.tasks[t];
        rows.push(MetricRow { step: 0, task, loss: init_loss[t], auc: e.auc, gauc: e.gauc });
    }

    let mut final_eval = init_eval;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut task_sums = vec![0.0; names.len()];
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train[i]).collect();
            let (loss, grads, per_task) = model.batch_loss_by_task(store, &batch)?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(FimError::NonFinite(format!("training loss at step {steps}")));
            }
            for (s, l) in task_sums.iter_mut().zip(per_task) {
                *s += l;
            }
            adam_step(store, &grads, &mut state, &cfg.adam)?;
            steps += 1;
        }
        final_eval = evaluate(model, store, test)?;
        for (t, &task) in names.iter().enumerate() {
            let e = &final_eval.tasks[t];
            let loss = task_sums[t] / train.len() as f64;
            rows.push(MetricRow { step: steps, task, loss, auc: e.auc, gauc: e.gauc });
        }
    }
    Ok(TrainOutcome { rows, steps, final_eval })
}
