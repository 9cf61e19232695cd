//! Multi-view sequence search: per-view Top-K retrieval of behaviors relevant
//! to the target item, pooled by target attention.

use std::fmt;

use rand::Rng;

use crate::embeddings::{Attribute, EncodedRecord, SequenceEmbedding};
use crate::error::{FimError, Result};
use crate::numerics::{ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ViewKey {
    Author,
    Brand,
    Category,
    PriceBucket,
}

impl ViewKey {
    pub const ALL: [ViewKey; 4] = [ViewKey::Author, ViewKey::Brand, ViewKey::Category, ViewKey::PriceBucket];

    pub fn attribute(self) -> Attribute {
        match self {
            ViewKey::Author => Attribute::Author,
            ViewKey::Brand => Attribute::Brand,
            ViewKey::Category => Attribute::Category,
            ViewKey::PriceBucket => Attribute::Price,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ViewKey::Author => "author",
            ViewKey::Brand => "brand",
            ViewKey::Category => "category",
            ViewKey::PriceBucket => "price",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }
}

impl fmt::Display for ViewKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SearchMode {
    Hard,
    Soft,
}

impl SearchMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "hard" => Some(Self::Hard),
            "soft" => Some(Self::Soft),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Hard => "hard",
            Self::Soft => "soft",
        }
    }
}

/// Which attribute columns make up a behavior's view embedding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViewAttrs {
    /// The whole `D`-wide record embedding.
    All,
    /// The view's own attribute plus the goods id.
    Own,
}

impl ViewAttrs {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "all" => Some(Self::All),
            "own" => Some(Self::Own),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::All => "all",
            Self::Own => "own",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ScorerKind {
    /// Small MLP over `[q, k, q*k]`.
    Mlp { hidden: usize },
    /// `scale * <q, k>`.
    Dot { scale: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct MssConfig {
    pub views: Vec<ViewKey>,
    pub mode: SearchMode,
    pub top_k: usize,
    pub view_attrs: ViewAttrs,
    pub scorer: ScorerKind,
    /// Share the soft-search projections across views.
    pub share_proj: bool,
}

impl Default for MssConfig {
    fn default() -> Self {
        Self {
            views: ViewKey::ALL.to_vec(),
            mode: SearchMode::Hard,
            top_k: 16,
            view_attrs: ViewAttrs::All,
            scorer: ScorerKind::Mlp { hidden: 16 },
            share_proj: false,
        }
    }
}

/// Hard relevance: 1 when the view attribute matches the target's, else 0.
/// Unknown values (row 0) never match.
pub fn hard_score(record: &EncodedRecord, target: &EncodedRecord, view: ViewKey) -> f64 {
    let attr = view.attribute();
    let (a, b) = (record.row(attr), target.row(attr));
    if a != 0 && a == b {
        1.0
    } else {
        0.0
    }
}

/// Soft relevance `<W_b e_i, W_t e_t>` on plain values.
pub fn soft_score(e_i: &[f64], e_t: &[f64], w_b: &Tensor, w_t: &Tensor) -> Result<f64> {
    let a = Tensor::row(e_i.to_vec()).matmul(w_b)?;
    let b = Tensor::row(e_t.to_vec()).matmul(w_t)?;
    if a.len() != b.len() {
        return Err(FimError::Shape(format!("projections {} vs {}", a.len(), b.len())));
    }
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum())
}

/// Positions of the (at most) `k` highest-scoring valid behaviors, in
/// increasing time order. Ties go to the later position. In hard mode only
/// positive scores qualify.
pub fn topk_select(scores: &[f64], valid: &[bool], k: usize, mode: SearchMode) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(FimError::invalid("top_k must be at least 1"));
    }
    if scores.len() != valid.len() {
        return Err(FimError::Shape(format!("{} scores vs {} mask entries", scores.len(), valid.len())));
    }
    if !valid.iter().any(|&v| v) {
        return Err(FimError::EmptyInput("sequence after padding"));
    }
    let mut cand: Vec<usize> =
        (0..scores.len()).filter(|&i| valid[i] && (mode == SearchMode::Soft || scores[i] > 0.0)).collect();
    cand.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(b.cmp(&a)));
    cand.truncate(k);
    cand.sort_unstable();
    Ok(cand)
}

#[derive(Clone, Debug)]
pub enum AttentionParams {
    Mlp { w1: ParamId, b1: ParamId, w2: ParamId, b2: ParamId },
    Dot { scale: f64 },
}

impl AttentionParams {
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        kind: ScorerKind,
        dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(match kind {
            ScorerKind::Dot { scale } => Self::Dot { scale },
            ScorerKind::Mlp { hidden } => {
                if hidden == 0 {
                    return Err(FimError::invalid("attention hidden width must be positive"));
                }
                Self::Mlp {
                    w1: store.insert_glorot(format!("{prefix}.w1"), 3 * dim, hidden, rng)?,
                    b1: store.insert(format!("{prefix}.b1"), Tensor::zeros(&[1, hidden]))?,
                    w2: store.insert_glorot(format!("{prefix}.w2"), hidden, 1, rng)?,
                    b2: store.insert(format!("{prefix}.b2"), Tensor::zeros(&[1, 1]))?,
                }
            }
        })
    }
}

/// Softmax-weighted sum of `keys` (`K x d`) under scores against `query`
/// (`1 x d`). `bias` (`K x 1`) is added to the logits. An empty key set
/// yields the zero vector.
pub fn target_attention(
    tape: &mut Tape,
    query: Var,
    keys: Option<Var>,
    bias: Option<Var>,
    params: &AttentionParams,
) -> Result<Var> {
    let d = tape.value(query).cols();
    let Some(keys) = keys else {
        return Ok(tape.constant(Tensor::zeros(&[1, d])));
    };
    let k = tape.value(keys).rows();
    if tape.value(keys).cols() != d {
        return Err(FimError::Shape(format!("query width {d} vs key width {}", tape.value(keys).cols())));
    }
    let logits = match *params {
        AttentionParams::Dot { scale } => {
            let qt = tape.transpose(query);
            let raw = tape.matmul(keys, qt)?;
            tape.scale(raw, scale)
        }
        AttentionParams::Mlp { w1, b1, w2, b2 } => {
            let q = tape.repeat_rows(query, k)?;
            let qk = tape.mul(q, keys)?;
            let input = tape.concat_cols(&[q, keys, qk])?;
            let (w1, b1, w2, b2) = (tape.param(w1), tape.param(b1), tape.param(w2), tape.param(b2));
            let h = tape.matmul(input, w1)?;
            let h = tape.add_row(h, b1)?;
            let h = tape.relu(h);
            let o = tape.matmul(h, w2)?;
            tape.add_row(o, b2)?
        }
    };
    let logits = match bias {
        Some(b) => tape.add(logits, b)?,
        None => logits,
    };
    let row = tape.transpose(logits);
    let weights = tape.softmax_rows(row);
    tape.matmul(weights, keys)
}

#[derive(Clone, Debug)]
pub struct ViewParams {
    pub view: ViewKey,
    pub attention: AttentionParams,
    /// Soft-search projections `(W_b, W_t)`.
    pub proj: Option<(ParamId, ParamId)>,
}

#[derive(Clone, Debug)]
pub struct MssParams {
    pub views: Vec<ViewParams>,
    pub view_dim: usize,
}

pub fn view_dim(attrs: ViewAttrs, attr_dim: usize) -> usize {
    match attrs {
        ViewAttrs::All => attr_dim * Attribute::ALL.len(),
        ViewAttrs::Own => 2 * attr_dim,
    }
}

impl MssParams {
    pub fn register<R: Rng>(store: &mut ParamStore, cfg: &MssConfig, attr_dim: usize, rng: &mut R) -> Result<Self> {
        if cfg.top_k == 0 {
            return Err(FimError::invalid("top_k must be at least 1"));
        }
        let dv = view_dim(cfg.view_attrs, attr_dim);
        let mut shared = None;
        let mut views = Vec::with_capacity(cfg.views.len());
        for &view in &cfg.views {
            let attention = AttentionParams::register(store, &format!("mss.{view}.att"), cfg.scorer, dv, rng)?;
            let proj = match cfg.mode {
                SearchMode::Hard => None,
                SearchMode::Soft if cfg.share_proj && shared.is_some() => shared,
                SearchMode::Soft => {
                    let prefix = if cfg.share_proj { "mss.shared".to_string() } else { format!("mss.{view}") };
                    let p = (
                        store.insert_glorot(format!("{prefix}.w_b"), dv, dv, rng)?,
                        store.insert_glorot(format!("{prefix}.w_t"), dv, dv, rng)?,
                    );
                    shared = Some(p);
                    Some(p)
                }
            };
            views.push(ViewParams { view, attention, proj });
        }
        Ok(Self { views, view_dim: dv })
    }
}

/// Concatenated per-view interests (`1 x V*dv`), or `None` with no views.
#[derive(Clone, Debug)]
pub struct MssOutput {
    pub interest: Option<Var>,
    pub selections: Vec<(ViewKey, Vec<usize>)>,
}

fn view_features(
    tape: &mut Tape,
    e: &SequenceEmbedding,
    view: ViewKey,
    attrs: ViewAttrs,
    rows: Option<Vec<usize>>,
) -> Result<Var> {
    match (attrs, rows) {
        (ViewAttrs::All, None) => Ok(e.full),
        (ViewAttrs::All, Some(r)) => tape.select_rows(e.full, r),
        (ViewAttrs::Own, rows) => {
            let own = e.attrs[view.attribute().index()];
            let goods = e.attrs[Attribute::Goods.index()];
            let (own, goods) = match rows {
                None => (own, goods),
                Some(r) => (tape.select_rows(own, r.clone())?, tape.select_rows(goods, r)?),
            };
            tape.concat_cols(&[own, goods])
        }
    }
}

pub fn multi_view_forward(
    tape: &mut Tape,
    seq: &SequenceEmbedding,
    records: &[Option<EncodedRecord>],
    target: &SequenceEmbedding,
    target_rec: &EncodedRecord,
    params: &MssParams,
    cfg: &MssConfig,
) -> Result<MssOutput> {
    if records.len() != seq.len {
        return Err(FimError::Shape(format!("{} records vs {} embedded rows", records.len(), seq.len)));
    }
    let valid: Vec<bool> = records.iter().map(Option::is_some).collect();
    let mut parts = Vec::with_capacity(params.views.len());
    let mut selections = Vec::with_capacity(params.views.len());
    for vp in &params.views {
        let query = view_features(tape, target, vp.view, cfg.view_attrs, None)?;
        let (idx, bias) = match vp.proj {
            None => {
                let scores: Vec<f64> =
                    records.iter().map(|r| r.map_or(0.0, |r| hard_score(&r, target_rec, vp.view))).collect();
                (topk_select(&scores, &valid, cfg.top_k, SearchMode::Hard)?, None)
            }
            Some((w_b, w_t)) => {
                let feats = view_features(tape, seq, vp.view, cfg.view_attrs, None)?;
                let (w_b, w_t) = (tape.param(w_b), tape.param(w_t));
                let pb = tape.matmul(feats, w_b)?;
                let pt = tape.matmul(query, w_t)?;
                let ptt = tape.transpose(pt);
                let scores = tape.matmul(pb, ptt)?;
                let idx = topk_select(tape.value(scores).data(), &valid, cfg.top_k, SearchMode::Soft)?;
                let bias = if idx.is_empty() { None } else { Some(tape.select_rows(scores, idx.clone())?) };
                (idx, bias)
            }
        };
        let keys = if idx.is_empty() {
            None
        } else {
            Some(view_features(tape, seq, vp.view, cfg.view_attrs, Some(idx.clone()))?)
        };
        parts.push(target_attention(tape, query, keys, bias, &vp.attention)?);
        selections.push((vp.view, idx));
    }
    let interest = if parts.is_empty() { None } else { Some(tape.concat_cols(&parts)?) };
    Ok(MssOutput { interest, selections })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hard_topk_example() {
        let scores = [1.0, 0.0, 1.0, 1.0];
        let got = topk_select(&scores, &[true; 4], 2, SearchMode::Hard).unwrap();
        assert_eq!(got, vec![2, 3]);
    }

    #[test]
    fn hard_mode_returns_only_matches_and_skips_padding() {
        let scores = [1.0, 1.0, 0.0, 1.0];
        let valid = [false, true, true, true];
        assert_eq!(topk_select(&scores, &valid, 16, SearchMode::Hard).unwrap(), vec![1, 3]);
        assert!(topk_select(&[0.0; 3], &[true; 3], 4, SearchMode::Hard).unwrap().is_empty());
        assert!(topk_select(&scores, &valid, 0, SearchMode::Hard).is_err());
        assert!(topk_select(&scores, &[false; 4], 2, SearchMode::Soft).is_err());
    }

    #[test]
    fn soft_mode_fills_k_by_score_then_recency() {
        let scores = [0.3, -1.0, 0.3, 0.9, -2.0];
        let got = topk_select(&scores, &[true; 5], 3, SearchMode::Soft).unwrap();
        assert_eq!(got, vec![0, 2, 3]);
        let got = topk_select(&scores, &[true; 5], 2, SearchMode::Soft).unwrap();
        assert_eq!(got, vec![2, 3]);
    }

    #[test]
    fn unknown_values_never_match() {
        let mut a = EncodedRecord { rows: [1; 9], purchase: false };
        let b = a;
        assert_eq!(hard_score(&a, &b, ViewKey::Brand), 1.0);
        a.rows[Attribute::Brand.index()] = 0;
        let mut c = b;
        c.rows[Attribute::Brand.index()] = 0;
        assert_eq!(hard_score(&a, &c, ViewKey::Brand), 0.0);
    }

    #[test]
    fn soft_score_is_bilinear() {
        let w = Tensor::eye(2);
        assert_eq!(soft_score(&[1.0, 2.0], &[3.0, -1.0], &w, &w).unwrap(), 1.0);
        let w2 = Tensor::matrix(2, 2, vec![2.0, 0.0, 0.0, 2.0]).unwrap();
        assert_eq!(soft_score(&[1.0, 2.0], &[3.0, -1.0], &w2, &w).unwrap(), 2.0);
    }

    #[test]
    fn dot_attention_example() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let q = tape.constant(Tensor::row(vec![2.0, 0.0]));
        let keys = tape.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
        let out = target_attention(&mut tape, q, Some(keys), None, &AttentionParams::Dot { scale: 1.0 }).unwrap();
        let e2 = 2f64.exp();
        let expected = [e2 / (e2 + 1.0), 1.0 / (e2 + 1.0)];
        for (g, e) in tape.value(out).data().iter().zip(expected) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_selection_gives_zero_vector() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let q = tape.constant(Tensor::row(vec![2.0, 0.0, 1.0]));
        let out = target_attention(&mut tape, q, None, None, &AttentionParams::Dot { scale: 1.0 }).unwrap();
        assert_eq!(tape.value(out).data(), &[0.0, 0.0, 0.0]);
    }
}
