//! Frequency-domain periodic enhancement: split a sequence embedding into
//! low, band and high frequency components, gate the band and high parts,
//! and add the fused signal back onto the input through a LayerNorm.

use std::rc::Rc;

use rand::Rng;

use crate::error::{FimError, Result};
use crate::numerics::fft::{half_len, symmetric_gains};
use crate::numerics::{ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FilterKind {
    /// Hard truncation at bin `p` from each end of the half spectrum.
    Trunc { p: usize },
    /// Butterworth responses with cutoff `fc * L` and order `order`.
    Butter { fc: f64, order: u32 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FusionMode {
    /// `low + beta_band * band + beta_high * high`.
    Beta,
    /// `low + band + high`.
    Direct,
}

impl FusionMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "beta" => Some(Self::Beta),
            "direct" => Some(Self::Direct),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Beta => "beta",
            Self::Direct => "direct",
        }
    }
}

/// Half-spectrum gains of the three bands for one sequence length.
#[derive(Clone, Debug, PartialEq)]
pub struct BandMasks {
    pub n: usize,
    pub low: Vec<f64>,
    pub band: Vec<f64>,
    pub high: Vec<f64>,
    full: [Rc<Vec<f64>>; 3],
}

impl BandMasks {
    fn from_gains(n: usize, low: Vec<f64>, band: Vec<f64>, high: Vec<f64>) -> Self {
        let full =
            [Rc::new(symmetric_gains(&low, n)), Rc::new(symmetric_gains(&band, n)), Rc::new(symmetric_gains(&high, n))];
        Self { n, low, band, high, full }
    }

    pub fn len(&self) -> usize {
        self.low.len()
    }

    pub fn is_empty(&self) -> bool {
        self.low.is_empty()
    }

    pub fn new(n: usize, kind: FilterKind) -> Result<Self> {
        if n == 0 {
            return Err(FimError::EmptyInput("sequence"));
        }
        let l = half_len(n);
        let (low, band, high) = match kind {
            FilterKind::Trunc { p } => trunc_gains(l, p)?,
            FilterKind::Butter { fc, order } => butter_gains(l, fc, order)?,
        };
        Ok(Self::from_gains(n, low, band, high))
    }
}

type Gains = (Vec<f64>, Vec<f64>, Vec<f64>);

/// Indicator masks: low `[0, p)`, band `[p, L-p)`, high `[L-p, L)`.
pub fn trunc_gains(l: usize, p: usize) -> Result<Gains> {
    if p == 0 || p > l / 2 {
        return Err(FimError::invalid(format!("truncation p={p} must lie in [1, {}] for L={l}", l / 2)));
    }
    let ind = |f: &dyn Fn(usize) -> bool| (0..l).map(|c| if f(c) { 1.0 } else { 0.0 }).collect();
    Ok((ind(&|c| c < p), ind(&|c| c >= p && c < l - p), ind(&|c| c >= l - p)))
}

/// Butterworth low response `1/sqrt(1 + (c/(fc L))^(2r))`, its mirror image as
/// the high response, and the clamped remainder as the band.
pub fn butter_gains(l: usize, fc: f64, order: u32) -> Result<Gains> {
    if !(fc > 0.0 && fc < 0.5) {
        return Err(FimError::invalid(format!("butterworth cutoff {fc} must lie in (0, 0.5)")));
    }
    if order == 0 {
        return Err(FimError::invalid("butterworth order must be at least 1"));
    }
    let cutoff = fc * l as f64;
    let g = |c: usize| 1.0 / (1.0 + (c as f64 / cutoff).powi(2 * order as i32)).sqrt();
    let low: Vec<f64> = (0..l).map(g).collect();
    let high: Vec<f64> = (0..l).map(|c| g(l - 1 - c)).collect();
    let band = low.iter().zip(&high).map(|(a, b)| (1.0 - a - b).clamp(0.0, 1.0)).collect();
    Ok((low, band, high))
}

/// Filters every column of an `N x D` variable with the three masks.
pub fn split_bands(tape: &mut Tape, e: Var, masks: &BandMasks) -> Result<(Var, Var, Var)> {
    let n = tape.value(e).rows();
    if n != masks.n {
        return Err(FimError::Shape(format!("masks built for N={} applied to N={n}", masks.n)));
    }
    let [lo, ba, hi] = &masks.full;
    Ok((
        tape.spectral_filter(e, lo.clone())?,
        tape.spectral_filter(e, ba.clone())?,
        tape.spectral_filter(e, hi.clone())?,
    ))
}

/// Two-layer gate `sigmoid(relu(x W1 + b1) W2 + b2)`.
#[derive(Clone, Copy, Debug)]
pub struct GateParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl GateParams {
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            w1: store.insert_glorot(format!("{prefix}.w1"), input, hidden, rng)?,
            b1: store.insert(format!("{prefix}.b1"), Tensor::zeros(&[1, hidden]))?,
            w2: store.insert_glorot(format!("{prefix}.w2"), hidden, 1, rng)?,
            b2: store.insert(format!("{prefix}.b2"), Tensor::zeros(&[1, 1]))?,
        })
    }

    pub fn input_dim(&self, store: &ParamStore) -> usize {
        store.get(self.w1).rows()
    }
}

/// Gate input: side information next to the per-dimension power of the
/// component, pooled over time.
pub fn gate_input(tape: &mut Tape, side: Var, component: Var) -> Result<Var> {
    let n = tape.value(component).rows();
    let power = tape.square(component);
    let pooled = tape.mean_rows(power, (0..n).collect())?;
    tape.concat_cols(&[side, pooled])
}

/// `beta = sigmoid(MLP(x))`, a `1 x 1` variable in `(0, 1)`.
pub fn gate_beta(tape: &mut Tape, x: Var, gate: &GateParams) -> Result<Var> {
    let w1 = tape.param(gate.w1);
    if tape.value(x).cols() != tape.value(w1).rows() {
        return Err(FimError::Shape(format!(
            "gate input width {} vs expected {}",
            tape.value(x).cols(),
            tape.value(w1).rows()
        )));
    }
    let (b1, w2, b2) = (tape.param(gate.b1), tape.param(gate.w2), tape.param(gate.b2));
    let h = tape.matmul(x, w1)?;
    let h = tape.add_row(h, b1)?;
    let h = tape.relu(h);
    let o = tape.matmul(h, w2)?;
    let o = tape.add_row(o, b2)?;
    Ok(tape.sigmoid(o))
}

#[derive(Clone, Debug)]
pub struct FpemParams {
    pub band_gate: GateParams,
    pub high_gate: GateParams,
    pub ln_gamma: ParamId,
    pub ln_beta: ParamId,
}

impl FpemParams {
    /// Gates take `side_dim + dim` inputs through `max(dim / 2, 1)` hidden units.
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        dim: usize,
        side_dim: usize,
        share_gates: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let hidden = (dim / 2).max(1);
        let input = side_dim + dim;
        let (band_gate, high_gate) = if share_gates {
            let g = GateParams::register(store, "fpem.gate", input, hidden, rng)?;
            (g, g)
        } else {
            (
                GateParams::register(store, "fpem.gate_band", input, hidden, rng)?,
                GateParams::register(store, "fpem.gate_high", input, hidden, rng)?,
            )
        };
        Ok(Self {
            band_gate,
            high_gate,
            ln_gamma: store.insert("fpem.ln.gamma", Tensor::full(&[1, dim], 1.0))?,
            ln_beta: store.insert("fpem.ln.beta", Tensor::zeros(&[1, dim]))?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct FpemOutput {
    pub out: Var,
    pub low: Var,
    pub band: Var,
    pub high: Var,
    pub beta_band: Option<Var>,
    pub beta_high: Option<Var>,
}

pub const LN_EPS: f64 = 1e-5;

/// `LayerNorm(f_fuse + E)` row by row. `side` is required in [`FusionMode::Beta`].
pub fn fpem_forward(
    tape: &mut Tape,
    e: Var,
    side: Option<Var>,
    params: &FpemParams,
    masks: &BandMasks,
    fusion: FusionMode,
) -> Result<FpemOutput> {
    let (low, band, high) = split_bands(tape, e, masks)?;
    let (fused, beta_band, beta_high) = match fusion {
        FusionMode::Direct => {
            let s = tape.add(low, band)?;
            (tape.add(s, high)?, None, None)
        }
        FusionMode::Beta => {
            let side = side.ok_or_else(|| FimError::invalid("beta fusion needs side information"))?;
            let xb = gate_input(tape, side, band)?;
            let bb = gate_beta(tape, xb, &params.band_gate)?;
            let xh = gate_input(tape, side, high)?;
            let bh = gate_beta(tape, xh, &params.high_gate)?;
            let sb = tape.scale_by(band, bb)?;
            let sh = tape.scale_by(high, bh)?;
            let s = tape.add(low, sb)?;
            (tape.add(s, sh)?, Some(bb), Some(bh))
        }
    };
    let residual = tape.add(fused, e)?;
    let (g, b) = (tape.param(params.ln_gamma), tape.param(params.ln_beta));
    let out = tape.layer_norm(residual, g, b, LN_EPS)?;
    Ok(FpemOutput { out, low, band, high, beta_band, beta_high })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trunc_masks_example() {
        let (lo, ba, hi) = trunc_gains(14, 3).unwrap();
        let on = |m: &[f64]| m.iter().enumerate().filter(|(_, &g)| g == 1.0).map(|(i, _)| i).collect::<Vec<_>>();
        assert_eq!(on(&lo), vec![0, 1, 2]);
        assert_eq!(on(&ba), (3..11).collect::<Vec<_>>());
        assert_eq!(on(&hi), vec![11, 12, 13]);
    }

    #[test]
    fn trunc_masks_partition_every_valid_p() {
        for l in 2..40 {
            for p in 1..=l / 2 {
                let (lo, ba, hi) = trunc_gains(l, p).unwrap();
                for c in 0..l {
                    assert_eq!(lo[c] + ba[c] + hi[c], 1.0, "l={l} p={p} c={c}");
                }
            }
            assert!(trunc_gains(l, 0).is_err());
            assert!(trunc_gains(l, l / 2 + 1).is_err());
        }
    }

    #[test]
    fn butter_masks_are_bounded_and_validated() {
        let (lo, ba, hi) = butter_gains(33, 0.25, 4).unwrap();
        assert_eq!(lo[0], 1.0);
        assert_eq!(hi[32], 1.0);
        for c in 0..33 {
            for g in [lo[c], ba[c], hi[c]] {
                assert!((0.0..=1.0).contains(&g));
            }
        }
        assert!(lo.windows(2).all(|w| w[1] <= w[0]));
        assert!(butter_gains(33, 0.0, 4).is_err());
        assert!(butter_gains(33, 0.5, 4).is_err());
        assert!(butter_gains(33, 0.2, 0).is_err());
    }
}
