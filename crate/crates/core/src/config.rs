//! Flat `key = value` run configuration covering model, training, split and
//! synthetic-data settings.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::data::{default_categories, PromoWindow, SyntheticConfig};
use crate::embeddings::SideInfoMode;
use crate::error::{FimError, Result};
use crate::fpem::{FilterKind, FusionMode};
use crate::model::{FpemConfig, ModelConfig};
use crate::mss::{MssConfig, ScorerKind, SearchMode, ViewAttrs, ViewKey};
use crate::numerics::AdamConfig;
use crate::train::TrainConfig;

/// Every accepted key with its default value.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "1"),
    ("lr", "0.01"),
    ("batch_size", "256"),
    ("epochs", "1"),
    ("adam.beta1", "0.9"),
    ("adam.beta2", "0.999"),
    ("adam.eps", "1e-8"),
    ("dims", "4"),
    ("max_len", "64"),
    ("alpha", "0.5"),
    ("baseline", "false"),
    ("views", "author,brand,category,price"),
    ("search", "hard"),
    ("top_k", "16"),
    ("view_attrs", "all"),
    ("attention", "mlp"),
    ("attention.hidden", "16"),
    ("attention.scale", "1"),
    ("mss.share_proj", "false"),
    ("fpem.enabled", "true"),
    ("fpem.mode", "trunc"),
    ("fpem.p", "5"),
    ("fpem.fc", "0.25"),
    ("fpem.order", "4"),
    ("fpem.fusion", "beta"),
    ("fpem.sideinfo", "nograd"),
    ("fpem.share_gates", "false"),
    ("mmoe.experts", "4"),
    ("mmoe.tasks", "2"),
    ("split.cutoff", "auto"),
    ("gen.seed", "auto"),
    ("gen.users", "2000"),
    ("gen.seq_len", "64"),
    ("gen.horizon", "4"),
    ("gen.targets_per_step", "2"),
    ("gen.categories", "12"),
    ("gen.periods", "3,5,7,11"),
    ("gen.price_base", "2"),
    ("gen.price_growth", "1.4"),
    ("gen.categories_per_user", "3"),
    ("gen.irregular_per_user", "2"),
    ("gen.irregular_rate", "0.5"),
    ("gen.goods_per_category", "12"),
    ("gen.authors_per_category", "4"),
    ("gen.brands_per_category", "3"),
    ("gen.exploration_rate", "0.1"),
    ("gen.impulse_rate", "0.3"),
    ("gen.favorite_rate", "0.8"),
    ("gen.hard_negative_rate", "0.2"),
    ("gen.decoy_rate", "0.5"),
    ("gen.click_noise", "0.1"),
    ("gen.promo", ""),
];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunConfig {
    values: BTreeMap<&'static str, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { values: KEYS.iter().map(|&(k, v)| (k, v.to_string())).collect() }
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "on" | "1" | "yes" => Ok(true),
        "false" | "off" | "0" | "no" => Ok(false),
        _ => Err(FimError::config(key, format!("expected a boolean, got `{v}`"))),
    }
}

pub fn parse_views(v: &str) -> Result<Vec<ViewKey>> {
    if matches!(v, "" | "none") {
        return Ok(Vec::new());
    }
    let mut views = Vec::new();
    for name in v.split(',').map(str::trim) {
        let view = ViewKey::parse(name).ok_or_else(|| FimError::config("views", format!("unknown view `{name}`")))?;
        if views.contains(&view) {
            return Err(FimError::config("views", format!("view `{name}` listed twice")));
        }
        views.push(view);
    }
    views.sort();
    Ok(views)
}

impl RunConfig {
    pub fn is_key(key: &str) -> bool {
        KEYS.iter().any(|&(k, _)| k == key)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (k, _) = KEYS.iter().find(|&&(k, _)| k == key).ok_or_else(|| FimError::config(key, "unknown key"))?;
        self.values.insert(k, value.trim().to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map_or("", String::as_str)
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for raw in text.lines() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| FimError::config(line, "expected `key = value`"))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| FimError::io(path, e))?;
        Self::parse_str(&text)
    }

    /// `key=value` overrides, as given on a command line.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o.split_once('=').ok_or_else(|| FimError::config(o, "expected `key=value`"))?;
            self.set(k.trim(), v)?;
        }
        self.validate()
    }

    /// Parses every typed section so bad values surface early, naming their key.
    pub fn validate(&self) -> Result<()> {
        self.model()?.validate()?;
        self.train()?;
        self.synthetic()?.validate()?;
        self.cutoff()?;
        Ok(())
    }

    fn parsed<T: FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get(key);
        v.parse().map_err(|_| FimError::config(key, format!("cannot parse `{v}`")))
    }

    fn flag(&self, key: &str) -> Result<bool> {
        parse_bool(key, self.get(key))
    }

    fn choice<T>(&self, key: &str, parse: impl Fn(&str) -> Option<T>) -> Result<T> {
        let v = self.get(key);
        parse(v).ok_or_else(|| FimError::config(key, format!("unsupported value `{v}`")))
    }

    pub fn seed(&self) -> Result<u64> {
        self.parsed("seed")
    }

    pub fn model(&self) -> Result<ModelConfig> {
        let scorer = match self.get("attention") {
            "mlp" => ScorerKind::Mlp { hidden: self.parsed("attention.hidden")? },
            "dot" => ScorerKind::Dot { scale: self.parsed("attention.scale")? },
            other => return Err(FimError::config("attention", format!("unsupported value `{other}`"))),
        };
        let filter = match self.get("fpem.mode") {
            "trunc" => FilterKind::Trunc { p: self.parsed("fpem.p")? },
            "butter" => FilterKind::Butter { fc: self.parsed("fpem.fc")?, order: self.parsed("fpem.order")? },
            other => return Err(FimError::config("fpem.mode", format!("unsupported value `{other}`"))),
        };
        let mut cfg = ModelConfig {
            dims: self.parsed("dims")?,
            max_len: self.parsed("max_len")?,
            alpha: self.parsed("alpha")?,
            mss: MssConfig {
                views: parse_views(self.get("views"))?,
                mode: self.choice("search", SearchMode::parse)?,
                top_k: self.parsed("top_k")?,
                view_attrs: self.choice("view_attrs", ViewAttrs::parse)?,
                scorer,
                share_proj: self.flag("mss.share_proj")?,
            },
            fpem: FpemConfig {
                enabled: self.flag("fpem.enabled")?,
                filter,
                fusion: self.choice("fpem.fusion", FusionMode::parse)?,
                sideinfo: self.choice("fpem.sideinfo", SideInfoMode::parse)?,
                share_gates: self.flag("fpem.share_gates")?,
            },
            experts: self.parsed("mmoe.experts")?,
            tasks: self.parsed("mmoe.tasks")?,
        };
        if self.flag("baseline")? {
            cfg.fpem.enabled = false;
            cfg.mss.views = vec![ViewKey::Category];
            cfg.mss.mode = SearchMode::Hard;
        }
        if cfg.fpem.enabled {
            crate::fpem::BandMasks::new(cfg.max_len, cfg.fpem.filter).map_err(|e| {
                let key = if matches!(cfg.fpem.filter, FilterKind::Trunc { .. }) { "fpem.p" } else { "fpem.fc" };
                FimError::config(key, e.to_string())
            })?;
        }
        Ok(cfg)
    }

    pub fn train(&self) -> Result<TrainConfig> {
        let lr: f64 = self.parsed("lr")?;
        if !(lr.is_finite() && lr > 0.0) {
            return Err(FimError::config("lr", "must be positive"));
        }
        let batch_size = self.parsed("batch_size")?;
        if batch_size == 0 {
            return Err(FimError::config("batch_size", "must be at least 1"));
        }
        Ok(TrainConfig {
            batch_size,
            epochs: self.parsed("epochs")?,
            adam: AdamConfig {
                lr,
                beta1: self.parsed("adam.beta1")?,
                beta2: self.parsed("adam.beta2")?,
                eps: self.parsed("adam.eps")?,
            },
            seed: self.seed()?,
        })
    }

    /// `None` selects the last target step as the test set.
    pub fn cutoff(&self) -> Result<Option<i64>> {
        match self.get("split.cutoff") {
            "auto" => Ok(None),
            _ => self.parsed("split.cutoff").map(Some),
        }
    }

    pub fn synthetic(&self) -> Result<SyntheticConfig> {
        let periods = self
            .get("gen.periods")
            .split(',')
            .map(|p| p.trim().parse::<u32>().map_err(|_| FimError::config("gen.periods", format!("bad period `{p}`"))))
            .collect::<Result<Vec<_>>>()?;
        let n_cat: usize = self.parsed("gen.categories")?;
        let seed = match self.get("gen.seed") {
            "auto" => self.seed()?,
            _ => self.parsed("gen.seed")?,
        };
        let mut promo_windows = Vec::new();
        for w in self.get("gen.promo").split(';').map(str::trim).filter(|w| !w.is_empty()) {
            let bad = || FimError::config("gen.promo", format!("expected start:end:boost, got `{w}`"));
            let parts: Vec<&str> = w.split(':').collect();
            let [s, e, b] = parts.as_slice() else { return Err(bad()) };
            promo_windows.push(PromoWindow {
                start: s.parse().map_err(|_| bad())?,
                end: e.parse().map_err(|_| bad())?,
                boost: b.parse().map_err(|_| bad())?,
            });
        }
        Ok(SyntheticConfig {
            n_users: self.parsed("gen.users")?,
            seq_len: self.parsed("gen.seq_len")?,
            horizon: self.parsed("gen.horizon")?,
            targets_per_step: self.parsed("gen.targets_per_step")?,
            categories: default_categories(
                n_cat,
                &periods,
                self.parsed("gen.price_base")?,
                self.parsed("gen.price_growth")?,
            ),
            categories_per_user: self.parsed("gen.categories_per_user")?,
            irregular_per_user: self.parsed("gen.irregular_per_user")?,
            irregular_rate: self.parsed("gen.irregular_rate")?,
            goods_per_category: self.parsed("gen.goods_per_category")?,
            authors_per_category: self.parsed("gen.authors_per_category")?,
            brands_per_category: self.parsed("gen.brands_per_category")?,
            exploration_rate: self.parsed("gen.exploration_rate")?,
            impulse_rate: self.parsed("gen.impulse_rate")?,
            favorite_rate: self.parsed("gen.favorite_rate")?,
            hard_negative_rate: self.parsed("gen.hard_negative_rate")?,
            decoy_rate: self.parsed("gen.decoy_rate")?,
            click_noise: self.parsed("gen.click_noise")?,
            promo_windows,
            seed,
        })
    }

    /// Every key in sorted order, one `key = value` line each.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Keys with the given prefixes only (all keys for an empty list).
    pub fn to_text_filtered(&self, prefixes: &[&str]) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            if prefixes.is_empty() || prefixes.iter().any(|p| k.starts_with(p)) {
                let _ = writeln!(out, "{k} = {v}");
            }
        }
        out
    }

    /// SHA-256 of the canonical text.
    pub fn hash(&self) -> String {
        hash_text(&self.to_text())
    }

    /// Settings that differ from the defaults, as `key=value` pairs.
    pub fn diff_from_default(&self) -> Vec<String> {
        let base = Self::default();
        self.values.iter().filter(|(k, v)| base.values.get(*k) != Some(v)).map(|(k, v)| format!("{k}={v}")).collect()
    }
}

pub fn hash_text(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}
