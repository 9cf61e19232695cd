//! The commands behind the `fim` binary: generate, train, eval, ablate and
//! gradcheck. Each takes a [`RunConfig`] and writes plain files.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::{hash_text, RunConfig};
use crate::data::{generate_synthetic, load_jsonl, split_temporal, target_step_range, write_jsonl, Dataset, Sample};
use crate::embeddings::FeatureEncoder;
use crate::error::{FimError, Result};
use crate::model::{encode_samples, Example, FimModel, ModelConfig};
use crate::mss::ViewKey;
use crate::numerics::checkpoint;
use crate::numerics::{adam_step, grad_check, AdamConfig, AdamState, GradCheckOptions, ParamStore};
use crate::train::{evaluate, train, EvalReport, MetricRow, CSV_HEADER};

pub const DATA_FILE: &str = "data.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.txt";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const VOCAB_DIR: &str = "vocab";

/// Generator settings only, so the data hash ignores model keys.
const DATA_KEYS: &[&str] = &["gen.", "seed"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub users: usize,
    pub events: usize,
    pub samples: usize,
    pub data_sha256: String,
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| FimError::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| FimError::io(dir, e))
}

fn sha256_file(path: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    let bytes = std::fs::read(path).map_err(|e| FimError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

/// Accepts either a dataset directory or the JSONL file itself.
pub fn data_file(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(DATA_FILE)
    } else {
        path.to_path_buf()
    }
}

pub fn cmd_generate(cfg: &RunConfig, out: &Path) -> Result<Manifest> {
    let gen = cfg.synthetic()?;
    let ds = generate_synthetic(&gen)?;
    create_dir(out)?;
    let data = out.join(DATA_FILE);
    write_jsonl(&ds, &data)?;
    let manifest = Manifest {
        config_hash: hash_text(&cfg.to_text_filtered(DATA_KEYS)),
        seed: gen.seed,
        users: ds.users.len(),
        events: ds.num_events(),
        samples: ds.samples.len(),
        data_sha256: sha256_file(&data)?,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| FimError::Data(e.to_string()))?;
    write_file(&out.join(MANIFEST_FILE), json + "\n")?;
    write_file(&out.join(CONFIG_FILE), cfg.to_text_filtered(DATA_KEYS))?;
    Ok(manifest)
}

/// Train and test samples under the configured temporal cutoff. The default
/// holds out the last target step.
pub fn split<'a>(cfg: &RunConfig, ds: &'a Dataset) -> Result<(Vec<&'a Sample>, Vec<&'a Sample>)> {
    let (_, hi) = target_step_range(ds).ok_or(FimError::EmptyInput("samples"))?;
    let cutoff = cfg.cutoff()?.unwrap_or(hi - 1);
    let (train, test) = split_temporal(ds, cutoff)?;
    if train.is_empty() {
        return Err(FimError::Data(format!("no training samples at or before step {cutoff}")));
    }
    Ok((train, test))
}

pub fn fit_encoder(ds: &Dataset) -> Result<FeatureEncoder> {
    FeatureEncoder::fit(ds.records(), ds.profiles())
}

/// Everything one training run needs, already encoded.
pub struct Prepared {
    pub model_cfg: ModelConfig,
    pub encoder: FeatureEncoder,
    pub train: Vec<Example>,
    pub test: Vec<Example>,
}

pub fn prepare(cfg: &RunConfig, ds: &Dataset) -> Result<Prepared> {
    let model_cfg = cfg.model()?;
    let encoder = fit_encoder(ds)?;
    let (tr, te) = split(cfg, ds)?;
    let train = encode_samples(ds, &tr, &encoder, model_cfg.max_len, model_cfg.tasks)?;
    let test = encode_samples(ds, &te, &encoder, model_cfg.max_len, model_cfg.tasks)?;
    Ok(Prepared { model_cfg, encoder, train, test })
}

pub struct RunResult {
    pub model: FimModel,
    pub store: ParamStore,
    pub rows: Vec<MetricRow>,
    pub eval: EvalReport,
}

/// Trains in memory without touching the filesystem.
pub fn run(cfg: &RunConfig, ds: &Dataset) -> Result<RunResult> {
    let p = prepare(cfg, ds)?;
    let (model, mut store) = FimModel::new(&p.model_cfg, &p.encoder, cfg.seed()?)?;
    let outcome = train(&model, &mut store, &p.train, &p.test, &cfg.train()?)?;
    Ok(RunResult { model, store, rows: outcome.rows, eval: outcome.final_eval })
}

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for r in rows {
        out.push_str(&r.to_csv());
        out.push('\n');
    }
    out
}

pub fn cmd_train(cfg: &RunConfig, data: &Path, out: &Path) -> Result<RunResult> {
    let ds = load_jsonl(&data_file(data))?;
    let result = run(cfg, &ds)?;
    create_dir(out)?;
    checkpoint::save(&result.store, &out.join(CHECKPOINT_FILE))?;
    write_file(&out.join(METRICS_FILE), metrics_csv(&result.rows))?;
    write_file(&out.join(CONFIG_FILE), cfg.to_text())?;
    fit_encoder(&ds)?.write_dir(&out.join(VOCAB_DIR))?;
    Ok(result)
}

/// Scores the test split with a trained model directory. Returns one CSV
/// line per task: `task,loss,auc,gauc`.
pub fn cmd_eval(model_dir: &Path, data: &Path) -> Result<String> {
    let cfg = RunConfig::load(&model_dir.join(CONFIG_FILE))?;
    let model_cfg = cfg.model()?;
    let encoder = FeatureEncoder::read_dir(&model_dir.join(VOCAB_DIR))?;
    let (model, mut store) = FimModel::new(&model_cfg, &encoder, cfg.seed()?)?;
    checkpoint::restore_into(&mut store, &checkpoint::load(&model_dir.join(CHECKPOINT_FILE))?)?;
    let ds = load_jsonl(&data_file(data))?;
    let (_, te) = split(&cfg, &ds)?;
    let test = encode_samples(&ds, &te, &encoder, model_cfg.max_len, model_cfg.tasks)?;
    let report = evaluate(&model, &store, &test)?;
    let opt = |v: Option<f64>| v.map_or_else(String::new, |v| format!("{v:.6}"));
    let mut out = String::from("task,loss,auc,gauc\n");
    for t in &report.tasks {
        let _ = writeln!(out, "{},{:.6},{},{}", t.task, t.loss, opt(t.auc), opt(t.gauc));
    }
    Ok(out)
}

/// One ablation axis: a key and the values it takes.
#[derive(Clone, Debug, PartialEq)]
pub struct GridAxis {
    pub key: String,
    pub values: Vec<String>,
}

impl GridAxis {
    /// `key=a|b|c`; `views=powerset` expands to every subset of the four views.
    pub fn parse(spec: &str) -> Result<Self> {
        let (key, values) = spec.split_once('=').ok_or_else(|| FimError::config(spec, "expected `key=a|b|...`"))?;
        let key = key.trim();
        if !RunConfig::is_key(key) {
            return Err(FimError::config(key, "unknown key"));
        }
        let values: Vec<String> = if key == "views" && values.trim() == "powerset" {
            views_powerset()
        } else {
            values.split('|').map(|v| v.trim().to_string()).collect()
        };
        Ok(Self { key: key.to_string(), values })
    }
}

/// Grid file: one `key = a|b|c` axis per line, `#` comments.
pub fn parse_grid(text: &str) -> Result<Vec<GridAxis>> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(GridAxis::parse)
        .collect()
}

pub fn views_powerset() -> Vec<String> {
    (0..16u32)
        .map(|mask| {
            let names: Vec<&str> =
                ViewKey::ALL.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, v)| v.name()).collect();
            if names.is_empty() {
                "none".to_string()
            } else {
                names.join(",")
            }
        })
        .collect()
}

/// Cartesian product of the axes applied on top of `base`.
pub fn expand_grid(base: &RunConfig, axes: &[GridAxis]) -> Result<Vec<RunConfig>> {
    let mut configs = vec![base.clone()];
    for axis in axes {
        let mut next = Vec::with_capacity(configs.len() * axis.values.len());
        for c in &configs {
            for v in &axis.values {
                let mut c = c.clone();
                c.set(&axis.key, v)?;
                c.validate()?;
                next.push(c);
            }
        }
        configs = next;
    }
    Ok(configs)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub config_hash: String,
    /// Settings that differ from the defaults, `;`-separated.
    pub settings: String,
    pub auc: Option<f64>,
    pub gauc: Option<f64>,
    pub wall_seconds: f64,
}

pub const ABLATION_HEADER: &str = "config_hash,settings,auc,gauc,wall_seconds";

impl AblationRow {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(String::new, |v| format!("{v:.6}"));
        format!(
            "{},\"{}\",{},{},{:.3}",
            self.config_hash,
            self.settings,
            opt(self.auc),
            opt(self.gauc),
            self.wall_seconds
        )
    }
}

/// One training run per grid point, scored on the purchase task. Rows are
/// sorted by config hash.
pub fn cmd_ablate(base: &RunConfig, axes: &[GridAxis], ds: &Dataset) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    let mut seen = BTreeSet::new();
    for cfg in expand_grid(base, axes)? {
        let hash = cfg.hash();
        if !seen.insert(hash.clone()) {
            continue;
        }
        let start = Instant::now();
        let result = run(&cfg, ds)?;
        let purchase = result.eval.task("purchase").ok_or(FimError::EmptyInput("purchase task"))?;
        rows.push(AblationRow {
            config_hash: hash,
            settings: cfg.diff_from_default().join(";"),
            auc: purchase.auc,
            gauc: purchase.gauc,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
    }
    rows.sort_by(|a, b| a.config_hash.cmp(&b.config_hash));
    Ok(rows)
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = format!("{ABLATION_HEADER}\n");
    for r in rows {
        out.push_str(&r.to_csv());
        out.push('\n');
    }
    out
}

/// Parameter groups by name prefix, in report order.
pub const PARAM_GROUPS: &[&str] = &["emb", "side", "mss", "fpem", "mmoe"];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GroupReport {
    pub tensors: usize,
    pub coordinates: usize,
    pub max_rel_err: f64,
    pub exempt: usize,
    pub exempt_max_fd: f64,
    pub exempt_max_tape: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckSummary {
    pub loss: f64,
    /// `None` marks a group with no parameters under this config.
    pub groups: BTreeMap<&'static str, Option<GroupReport>>,
    pub max_rel_err: f64,
}

/// Size of the toy batch.
pub const GRADCHECK_BATCH: usize = 4;
/// Tolerance a group must meet.
pub const GRADCHECK_TOL: f64 = 1e-4;

impl GradcheckSummary {
    pub fn passed(&self) -> bool {
        self.max_rel_err < GRADCHECK_TOL
    }

    pub fn render(&self) -> String {
        let mut out = format!("loss {:.9}\n", self.loss);
        for &g in PARAM_GROUPS {
            match &self.groups[g] {
                None => {
                    let _ = writeln!(out, "{g:<5} absent");
                }
                Some(r) => {
                    let status = if r.max_rel_err < GRADCHECK_TOL { "ok" } else { "FAIL" };
                    let _ = write!(
                        out,
                        "{g:<5} {status:<4} tensors {} coords {} max_rel_err {:.3e}",
                        r.tensors, r.coordinates, r.max_rel_err
                    );
                    if r.exempt > 0 {
                        let _ = write!(
                            out,
                            " exempt {} (tape max {:.3e}, fd max {:.3e})",
                            r.exempt, r.exempt_max_tape, r.exempt_max_fd
                        );
                    }
                    out.push('\n');
                }
            }
        }
        let _ = writeln!(out, "max_rel_err {:.3e}", self.max_rel_err);
        out
    }
}

fn group_of(name: &str) -> &str {
    name.split('.').next().unwrap_or(name)
}

/// Finite-difference check of the whole model on a toy batch drawn from a
/// small generated dataset. Parameters are moved off their initial values by
/// two Adam steps first, since the zero-initialised heads would otherwise
/// zero every upstream gradient.
pub fn cmd_gradcheck(cfg: &RunConfig) -> Result<GradcheckSummary> {
    let mut small = cfg.clone();
    small.set("gen.users", &GRADCHECK_BATCH.to_string())?;
    let mut gen = small.synthetic()?;
    gen.targets_per_step = 1;
    gen.horizon = 1;
    let ds = generate_synthetic(&gen)?;
    let model_cfg = cfg.model()?;
    let encoder = fit_encoder(&ds)?;
    let samples: Vec<&Sample> = ds.samples.iter().take(GRADCHECK_BATCH).collect();
    let examples = encode_samples(&ds, &samples, &encoder, model_cfg.max_len, model_cfg.tasks)?;
    let batch: Vec<&Example> = examples.iter().collect();
    let (model, mut store) = FimModel::new(&model_cfg, &encoder, cfg.seed()?)?;

    let adam = AdamConfig { lr: 0.05, ..AdamConfig::default() };
    let mut state = AdamState::new(&store);
    for _ in 0..2 {
        let (_, grads) = model.batch_loss(&store, &batch)?;
        adam_step(&mut store, &grads, &mut state, &adam)?;
    }

    let mut opts = GradCheckOptions::default();
    for id in model.stopped_tables() {
        opts.exempt.extend((0..store.get(id).len()).map(|j| (id, j)));
    }
    let (loss, grads) = model.batch_loss(&store, &batch)?;
    let report = grad_check(&grads, |p| model.batch_loss_value(p, &batch), &mut store, &opts)?;

    let mut groups: BTreeMap<&'static str, Option<GroupReport>> = PARAM_GROUPS.iter().map(|&g| (g, None)).collect();
    for (name, r) in &report.params {
        let key = PARAM_GROUPS
            .iter()
            .copied()
            .find(|&g| g == group_of(name))
            .ok_or_else(|| FimError::invalid(format!("parameter `{name}` belongs to no group")))?;
        let g = groups.get_mut(key).unwrap().get_or_insert_with(GroupReport::default);
        g.tensors += 1;
        g.coordinates += r.coordinates;
        g.max_rel_err = g.max_rel_err.max(r.max_rel_err);
        g.exempt += r.exempt;
        g.exempt_max_fd = g.exempt_max_fd.max(r.exempt_max_fd);
        g.exempt_max_tape = g.exempt_max_tape.max(r.exempt_max_tape);
    }
    Ok(GradcheckSummary { loss, groups, max_rel_err: report.max_rel_err })
}
