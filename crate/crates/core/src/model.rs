//! The assembled model: embeddings, multi-view search, the frequency module,
//! fusion, and the mixture-of-experts heads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, Sample};
use crate::embeddings::{
    embed_sequence, embed_side_info, side_info_slots, EmbeddingTables, EncodedRecord, FeatureEncoder, SideInfoMode,
};
use crate::error::{FimError, Result};
use crate::fpem::{fpem_forward, BandMasks, FilterKind, FpemParams, FusionMode};
use crate::mss::{multi_view_forward, MssConfig, MssParams};
use crate::numerics::bce;
use crate::numerics::{Gradients, ParamId, ParamStore, Tape, Var};
use crate::prediction::{fuse, mean_pool, mmoe_forward, Linear, MmoeParams};

#[derive(Clone, Debug, PartialEq)]
pub struct FpemConfig {
    pub enabled: bool,
    pub filter: FilterKind,
    pub fusion: FusionMode,
    pub sideinfo: SideInfoMode,
    pub share_gates: bool,
}

impl Default for FpemConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            filter: FilterKind::Trunc { p: 5 },
            fusion: FusionMode::Beta,
            sideinfo: SideInfoMode::NoGrad,
            share_gates: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Width of each attribute embedding; the record embedding is nine times wider.
    pub dims: usize,
    pub max_len: usize,
    pub alpha: f64,
    pub mss: MssConfig,
    pub fpem: FpemConfig,
    pub experts: usize,
    pub tasks: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dims: 4,
            max_len: 64,
            alpha: 0.5,
            mss: MssConfig::default(),
            fpem: FpemConfig::default(),
            experts: 4,
            tasks: 2,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dims == 0 {
            return Err(FimError::config("dims", "must be at least 1"));
        }
        if self.max_len == 0 {
            return Err(FimError::config("max_len", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(FimError::config("alpha", format!("{} outside [0, 1]", self.alpha)));
        }
        if !(1..=2).contains(&self.tasks) {
            return Err(FimError::config("mmoe.tasks", "must be 1 (purchase) or 2 (click, purchase)"));
        }
        if self.experts == 0 {
            return Err(FimError::config("mmoe.experts", "must be at least 1"));
        }
        if self.mss.top_k == 0 {
            return Err(FimError::config("top_k", "must be at least 1"));
        }
        Ok(())
    }
}

/// A sample reduced to table rows: the left-padded window of the most recent
/// `max_len` events before the target step.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub user_id: String,
    pub history: Vec<Option<EncodedRecord>>,
    pub target: EncodedRecord,
    pub profile: (usize, usize),
    pub purchase_count: usize,
    pub labels: Vec<f64>,
}

impl Example {
    pub fn mask(&self) -> Vec<bool> {
        self.history.iter().map(Option::is_some).collect()
    }
}

pub fn encode_sample(
    ds: &Dataset,
    sample: &Sample,
    enc: &FeatureEncoder,
    max_len: usize,
    tasks: usize,
) -> Result<Example> {
    let events = ds.history(sample);
    if events.is_empty() {
        return Err(FimError::Data(format!(
            "sample for user {} at step {} has no earlier events",
            sample.user_id, sample.step
        )));
    }
    let window = &events[events.len().saturating_sub(max_len)..];
    let mut history = vec![None; max_len - window.len()];
    let mut purchase_count = 0;
    for e in window {
        let r = enc.encode(&e.record)?;
        purchase_count += r.purchase as usize;
        history.push(Some(r));
    }
    let profile = enc.encode_profile(ds.users.get(&sample.user_id).and_then(|u| u.profile.as_ref()));
    Ok(Example {
        user_id: sample.user_id.clone(),
        history,
        target: enc.encode(&sample.target)?,
        profile,
        purchase_count,
        labels: sample.labels.as_targets(tasks),
    })
}

pub fn encode_samples(
    ds: &Dataset,
    samples: &[&Sample],
    enc: &FeatureEncoder,
    max_len: usize,
    tasks: usize,
) -> Result<Vec<Example>> {
    samples.iter().map(|s| encode_sample(ds, s, enc, max_len, tasks)).collect()
}

#[derive(Clone, Debug)]
pub struct FimModel {
    pub cfg: ModelConfig,
    pub tables: EmbeddingTables,
    pub mss: Option<(MssParams, Linear)>,
    pub fpem: Option<(FpemParams, BandMasks)>,
    pub mmoe: MmoeParams,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// `1 x T` task probabilities.
    pub probs: Var,
    pub beta: Option<(Var, Var)>,
}

impl FimModel {
    /// Registers every parameter in a fresh store, initialised from `seed`.
    pub fn new(cfg: &ModelConfig, enc: &FeatureEncoder, seed: u64) -> Result<(Self, ParamStore)> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let tables = EmbeddingTables::register(&mut store, enc, cfg.dims, &mut rng)?;
        let d = tables.total_dim();
        let mss = if cfg.mss.views.is_empty() {
            None
        } else {
            let params = MssParams::register(&mut store, &cfg.mss, cfg.dims, &mut rng)?;
            let width = params.view_dim * cfg.mss.views.len();
            let proj = Linear::register(&mut store, "mss.proj", width, d, &mut rng)?;
            Some((params, proj))
        };
        let fpem = if cfg.fpem.enabled {
            let side_dim = side_info_slots(cfg.fpem.sideinfo) * cfg.dims;
            let params = FpemParams::register(&mut store, d, side_dim, cfg.fpem.share_gates, &mut rng)?;
            Some((params, BandMasks::new(cfg.max_len, cfg.fpem.filter)?))
        } else {
            None
        };
        let mmoe = MmoeParams::register(&mut store, d, cfg.experts, cfg.tasks, &mut rng)?;
        Ok((Self { cfg: cfg.clone(), tables, mss, fpem, mmoe }, store))
    }

    /// Side-information tables whose gradient the gate path stops.
    pub fn stopped_tables(&self) -> Vec<ParamId> {
        match (&self.fpem, self.cfg.fpem.fusion, self.cfg.fpem.sideinfo) {
            (Some(_), FusionMode::Beta, SideInfoMode::NoGrad) => {
                let t = &self.tables;
                vec![t.user_age, t.user_gender, t.item_brand, t.item_price]
            }
            _ => Vec::new(),
        }
    }

    pub fn forward(&self, tape: &mut Tape, ex: &Example) -> Result<ForwardOutput> {
        if ex.history.len() != self.cfg.max_len {
            return Err(FimError::Shape(format!("window of {} for max_len {}", ex.history.len(), self.cfg.max_len)));
        }
        let mask = ex.mask();
        let seq = embed_sequence(tape, &ex.history, &self.tables)?;
        let interest = match &self.mss {
            Some((params, proj)) => {
                let target = embed_sequence(tape, &[Some(ex.target)], &self.tables)?;
                let out = multi_view_forward(tape, &seq, &ex.history, &target, &ex.target, params, &self.cfg.mss)?;
                match out.interest {
                    Some(h) => Some(proj.forward(tape, h)?),
                    None => None,
                }
            }
            None => None,
        };
        let (pooled, beta) = match &self.fpem {
            Some((params, masks)) => {
                let side = match self.cfg.fpem.fusion {
                    FusionMode::Beta => {
                        let info = embed_side_info(
                            tape,
                            &self.tables,
                            ex.profile,
                            &ex.target,
                            ex.purchase_count,
                            self.cfg.fpem.sideinfo,
                        )?;
                        Some(info.assemble(tape)?)
                    }
                    FusionMode::Direct => None,
                };
                let out = fpem_forward(tape, seq.full, side, params, masks, self.cfg.fpem.fusion)?;
                let beta = out.beta_band.zip(out.beta_high);
                (Some(mean_pool(tape, out.out, &mask)?), beta)
            }
            None => (None, None),
        };
        let z = match (interest, pooled) {
            (Some(h), Some(f)) => fuse(tape, h, f, self.cfg.alpha)?,
            (Some(h), None) => h,
            (None, Some(f)) => f,
            (None, None) => mean_pool(tape, seq.full, &mask)?,
        };
        let probs = mmoe_forward(tape, z, &self.mmoe)?.probs;
        Ok(ForwardOutput { probs, beta })
    }

    /// Mean summed-over-tasks BCE of a batch and its gradient.
    pub fn batch_loss(&self, store: &ParamStore, batch: &[&Example]) -> Result<(f64, Gradients)> {
        let (loss, grads, _) = self.batch_loss_by_task(store, batch)?;
        Ok((loss, grads))
    }

    /// Like [`FimModel::batch_loss`], also returning per-task BCE sums.
    pub fn batch_loss_by_task(&self, store: &ParamStore, batch: &[&Example]) -> Result<(f64, Gradients, Vec<f64>)> {
        if batch.is_empty() {
            return Err(FimError::EmptyInput("batch"));
        }
        let mut grads = Gradients::zeros_like(store);
        let mut per_task = vec![0.0; self.cfg.tasks];
        let mut total = 0.0;
        for ex in batch {
            let mut tape = Tape::new(store);
            let out = self.forward(&mut tape, ex)?;
            let loss = tape.bce(out.probs, &ex.labels)?;
            total += tape.value(loss).item();
            for (s, (&p, &y)) in per_task.iter_mut().zip(tape.value(out.probs).data().iter().zip(&ex.labels)) {
                *s += bce(p, y);
            }
            tape.backward_into(loss, &mut grads)?;
        }
        let n = batch.len() as f64;
        grads.scale(1.0 / n);
        Ok((total / n, grads, per_task))
    }

    /// Forward-only version of [`FimModel::batch_loss`].
    pub fn batch_loss_value(&self, store: &ParamStore, batch: &[&Example]) -> Result<f64> {
        if batch.is_empty() {
            return Err(FimError::EmptyInput("batch"));
        }
        let mut total = 0.0;
        for ex in batch {
            let mut tape = Tape::new(store);
            let out = self.forward(&mut tape, ex)?;
            let loss = tape.bce(out.probs, &ex.labels)?;
            total += tape.value(loss).item();
        }
        Ok(total / batch.len() as f64)
    }

    /// Task probabilities for one example.
    pub fn predict(&self, store: &ParamStore, ex: &Example) -> Result<Vec<f64>> {
        let mut tape = Tape::new(store);
        let out = self.forward(&mut tape, ex)?;
        Ok(tape.value(out.probs).data().to_vec())
    }
}
