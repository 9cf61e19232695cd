//! Pooling, projection, the alpha blend of the two user representations, and
//! the multi-gate mixture of experts with one sigmoid head per task.

use rand::Rng;

use crate::error::{FimError, Result};
use crate::numerics::{ParamId, ParamStore, Tape, Tensor, Var};

/// Mean over the rows whose mask entry is `true`.
pub fn mean_pool(tape: &mut Tape, x: Var, mask: &[bool]) -> Result<Var> {
    let n = tape.value(x).rows();
    if mask.len() != n {
        return Err(FimError::Shape(format!("{} mask entries for {n} rows", mask.len())));
    }
    let rows: Vec<usize> = (0..n).filter(|&i| mask[i]).collect();
    if rows.is_empty() {
        return Err(FimError::EmptyInput("unpadded positions"));
    }
    tape.mean_rows(x, rows)
}

/// Affine map `x W + b`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        output: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            w: store.insert_glorot(format!("{prefix}.w"), input, output, rng)?,
            b: store.insert(format!("{prefix}.b"), Tensor::zeros(&[1, output]))?,
        })
    }

    pub fn register_zero(store: &mut ParamStore, prefix: &str, input: usize, output: usize) -> Result<Self> {
        Ok(Self {
            w: store.insert(format!("{prefix}.w"), Tensor::zeros(&[input, output]))?,
            b: store.insert(format!("{prefix}.b"), Tensor::zeros(&[1, output]))?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let (w, b) = (tape.param(self.w), tape.param(self.b));
        let y = tape.matmul(x, w)?;
        tape.add_row(y, b)
    }
}

/// `Z = (1 - alpha) * h + alpha * f`.
pub fn fuse(tape: &mut Tape, h: Var, f: Var, alpha: f64) -> Result<Var> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(FimError::invalid(format!("alpha {alpha} outside [0, 1]")));
    }
    let (hs, fs) = (tape.value(h).shape(), tape.value(f).shape());
    if hs != fs {
        return Err(FimError::Shape(format!("fuse {hs:?} vs {fs:?}")));
    }
    let a = tape.scale(h, 1.0 - alpha);
    let b = tape.scale(f, alpha);
    tape.add(a, b)
}

#[derive(Clone, Debug)]
pub struct Expert {
    pub l1: Linear,
    pub l2: Linear,
}

#[derive(Clone, Debug)]
pub struct MmoeParams {
    pub experts: Vec<Expert>,
    pub gates: Vec<Linear>,
    pub heads: Vec<Linear>,
    pub dim: usize,
}

impl MmoeParams {
    /// Heads start at zero so every task initially predicts 0.5.
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        dim: usize,
        experts: usize,
        tasks: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if experts == 0 || tasks == 0 {
            return Err(FimError::invalid("mixture needs at least one expert and one task"));
        }
        let experts = (0..experts)
            .map(|e| {
                Ok(Expert {
                    l1: Linear::register(store, &format!("mmoe.expert{e}.l1"), dim, dim, rng)?,
                    l2: Linear::register(store, &format!("mmoe.expert{e}.l2"), dim, dim, rng)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let e = experts.len();
        let gates = (0..tasks)
            .map(|t| Linear::register(store, &format!("mmoe.gate{t}"), dim, e, rng))
            .collect::<Result<Vec<_>>>()?;
        let heads = (0..tasks)
            .map(|t| Linear::register_zero(store, &format!("mmoe.head{t}"), dim, 1))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { experts, gates, heads, dim })
    }
}

#[derive(Clone, Debug)]
pub struct MmoeOutput {
    /// `1 x T` probabilities.
    pub probs: Var,
    /// Per-task `1 x E` gate weights.
    pub gate_weights: Vec<Var>,
}

/// Task `t` sees `Z + sum_e g_te(Z) expert_e(Z)`.
pub fn mmoe_forward(tape: &mut Tape, z: Var, params: &MmoeParams) -> Result<MmoeOutput> {
    if tape.value(z).cols() != params.dim {
        return Err(FimError::Shape(format!("mixture input width {} vs {}", tape.value(z).cols(), params.dim)));
    }
    let mut outs = Vec::with_capacity(params.experts.len());
    for ex in &params.experts {
        let h = ex.l1.forward(tape, z)?;
        let h = tape.relu(h);
        outs.push(ex.l2.forward(tape, h)?);
    }
    let stacked = tape.concat_rows(&outs)?;
    let mut probs = Vec::with_capacity(params.heads.len());
    let mut gate_weights = Vec::with_capacity(params.heads.len());
    for (gate, head) in params.gates.iter().zip(&params.heads) {
        let logits = gate.forward(tape, z)?;
        let g = tape.softmax_rows(logits);
        let mix = tape.matmul(g, stacked)?;
        let mix = tape.add(mix, z)?;
        let logit = head.forward(tape, mix)?;
        probs.push(tape.sigmoid(logit));
        gate_weights.push(g);
    }
    let probs = tape.concat_cols(&probs)?;
    Ok(MmoeOutput { probs, gate_weights })
}
