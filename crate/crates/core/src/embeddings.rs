//! Behavior records, vocabularies, bucketing, and the embedding tables that
//! turn a sequence into an `N x D` matrix and side information into `I_u`.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FimError, Result};
use crate::numerics::{ParamId, ParamStore, Tape, Var};

/// The nine per-event attributes, in embedding (column) order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Attribute {
    Goods,
    Author,
    SourceDomain,
    Action,
    Brand,
    Category,
    TimeSpan,
    Price,
    Payment,
}

impl Attribute {
    pub const ALL: [Attribute; 9] = [
        Attribute::Goods,
        Attribute::Author,
        Attribute::SourceDomain,
        Attribute::Action,
        Attribute::Brand,
        Attribute::Category,
        Attribute::TimeSpan,
        Attribute::Price,
        Attribute::Payment,
    ];

    /// Attributes carried as opaque string tokens.
    pub const TOKENS: [Attribute; 6] = [
        Attribute::Goods,
        Attribute::Author,
        Attribute::SourceDomain,
        Attribute::Action,
        Attribute::Brand,
        Attribute::Category,
    ];

    pub fn field(self) -> &'static str {
        match self {
            Attribute::Goods => "goods_id",
            Attribute::Author => "author_id",
            Attribute::SourceDomain => "source_domain",
            Attribute::Action => "action",
            Attribute::Brand => "brand",
            Attribute::Category => "category",
            Attribute::TimeSpan => "time_span",
            Attribute::Price => "price",
            Attribute::Payment => "payment_amount",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.field())
    }
}

/// One behavior event.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub goods_id: String,
    pub author_id: String,
    pub source_domain: String,
    pub action: String,
    pub brand: String,
    pub category: String,
    pub time_span: u32,
    pub price: f64,
    pub payment_amount: f64,
}

impl InteractionRecord {
    pub fn token(&self, attr: Attribute) -> Option<&str> {
        match attr {
            Attribute::Goods => Some(&self.goods_id),
            Attribute::Author => Some(&self.author_id),
            Attribute::SourceDomain => Some(&self.source_domain),
            Attribute::Action => Some(&self.action),
            Attribute::Brand => Some(&self.brand),
            Attribute::Category => Some(&self.category),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("price", self.price), ("payment_amount", self.payment_amount)] {
            if !v.is_finite() || v < 0.0 {
                return Err(FimError::Data(format!("{name} must be a nonnegative number, got {v}")));
            }
        }
        Ok(())
    }

    pub fn is_purchase(&self) -> bool {
        self.action == PURCHASE
    }
}

pub const PURCHASE: &str = "purchase";

/// Token vocabulary. Index 0 is reserved for out-of-vocabulary and padding.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

pub const RESERVED_TOKEN: &str = "<unk>";

impl Vocab {
    /// Builds a vocabulary from the distinct tokens, in sorted order.
    pub fn from_tokens<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Self {
        let mut sorted: Vec<&str> = tokens.into_iter().collect();
        sorted.sort_unstable();
        sorted.dedup();
        let mut v = Self { tokens: vec![RESERVED_TOKEN.to_string()], index: HashMap::new() };
        for t in sorted {
            v.index.insert(t.to_string(), v.tokens.len() as u32);
            v.tokens.push(t.to_string());
        }
        v
    }

    /// Number of table rows, including the reserved row.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 1
    }

    pub fn lookup(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(0)
    }

    pub fn token(&self, idx: u32) -> &str {
        &self.tokens[idx as usize]
    }

    /// One token per line; line 0 is the reserved slot and its text is ignored.
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| FimError::io(path, e))?;
        let mut v = Self { tokens: vec![RESERVED_TOKEN.to_string()], index: HashMap::new() };
        for (i, line) in text.lines().enumerate().skip(1) {
            if v.index.insert(line.to_string(), i as u32).is_some() {
                return Err(FimError::Parse { line: i + 1, message: format!("duplicate token `{line}`") });
            }
            v.tokens.push(line.to_string());
        }
        Ok(v)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| FimError::io(path, e))?;
        for t in &self.tokens {
            writeln!(f, "{t}").map_err(|e| FimError::io(path, e))?;
        }
        Ok(())
    }
}

/// Log-spaced half-open price buckets over `[0, max_price]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PriceBuckets {
    edges: Vec<f64>,
    max_price: f64,
}

pub const PRICE_BUCKETS: usize = 10;

impl PriceBuckets {
    pub fn new(max_price: f64, buckets: usize) -> Result<Self> {
        if !(max_price.is_finite() && max_price > 0.0) || buckets == 0 {
            return Err(FimError::invalid(format!(
                "price buckets need a positive max price and count, got {max_price}, {buckets}"
            )));
        }
        let top = max_price.ln_1p();
        let edges = (1..buckets).map(|b| (top * b as f64 / buckets as f64).exp_m1()).collect();
        Ok(Self { edges, max_price })
    }

    pub fn count(&self) -> usize {
        self.edges.len() + 1
    }

    pub fn max_price(&self) -> f64 {
        self.max_price
    }

    /// Interior edges; bucket `b` covers `[edge[b-1], edge[b])`.
    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn bucket(&self, price: f64) -> Result<usize> {
        if price.is_nan() || price < 0.0 {
            return Err(FimError::invalid(format!("negative price {price}")));
        }
        Ok(self.edges.partition_point(|&e| e <= price))
    }
}

pub const TIME_SPAN_BUCKETS: usize = 12;

/// `floor(log2(span + 1))`, capped.
pub fn time_span_bucket(span: u32) -> usize {
    ((span as u64 + 1).ilog2() as usize).min(TIME_SPAN_BUCKETS - 1)
}

/// Upper-inclusive edges for the purchase-count buckets; larger counts clamp
/// to the last bucket.
pub const PAY_LEN_EDGES: [usize; 8] = [0, 1, 2, 4, 8, 16, 32, 64];

pub fn pay_len_bucket(count: usize) -> usize {
    PAY_LEN_EDGES.iter().position(|&e| count <= e).unwrap_or(PAY_LEN_EDGES.len() - 1)
}

/// A record reduced to table row indices (all shifted by one so row 0 stays
/// reserved).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct EncodedRecord {
    pub rows: [u32; 9],
    pub purchase: bool,
}

impl EncodedRecord {
    pub fn row(&self, attr: Attribute) -> usize {
        self.rows[attr.index()] as usize
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct UserProfile {
    pub age: String,
    pub gender: String,
}

/// Vocabularies and bucketers that map raw records to table rows.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureEncoder {
    pub tokens: [Vocab; 6],
    pub age: Vocab,
    pub gender: Vocab,
    pub price: PriceBuckets,
}

impl FeatureEncoder {
    pub fn fit<'a>(
        records: impl IntoIterator<Item = &'a InteractionRecord>,
        profiles: impl IntoIterator<Item = &'a UserProfile>,
    ) -> Result<Self> {
        let mut seen: [Vec<&str>; 6] = Default::default();
        let mut max_price: f64 = 0.0;
        for r in records {
            for (slot, attr) in seen.iter_mut().zip(Attribute::TOKENS) {
                slot.push(r.token(attr).unwrap());
            }
            max_price = max_price.max(r.price).max(r.payment_amount);
        }
        let tokens = seen.map(Vocab::from_tokens);
        let (mut ages, mut genders) = (Vec::new(), Vec::new());
        for p in profiles {
            ages.push(p.age.as_str());
            genders.push(p.gender.as_str());
        }
        Ok(Self {
            tokens,
            age: Vocab::from_tokens(ages),
            gender: Vocab::from_tokens(genders),
            price: PriceBuckets::new(max_price.max(1.0), PRICE_BUCKETS)?,
        })
    }

    /// Rows per attribute table.
    pub fn table_rows(&self, attr: Attribute) -> usize {
        match attr {
            Attribute::TimeSpan => TIME_SPAN_BUCKETS + 1,
            Attribute::Price | Attribute::Payment => self.price.count() + 1,
            _ => self.tokens[attr.index()].len(),
        }
    }

    pub fn encode(&self, r: &InteractionRecord) -> Result<EncodedRecord> {
        let mut rows = [0u32; 9];
        for attr in Attribute::TOKENS {
            rows[attr.index()] = self.tokens[attr.index()].lookup(r.token(attr).unwrap());
        }
        rows[Attribute::TimeSpan.index()] = 1 + time_span_bucket(r.time_span) as u32;
        rows[Attribute::Price.index()] = 1 + self.price.bucket(r.price)? as u32;
        rows[Attribute::Payment.index()] = 1 + self.price.bucket(r.payment_amount)? as u32;
        Ok(EncodedRecord { rows, purchase: r.is_purchase() })
    }

    pub fn encode_profile(&self, p: Option<&UserProfile>) -> (usize, usize) {
        p.map_or((0, 0), |p| (self.age.lookup(&p.age) as usize, self.gender.lookup(&p.gender) as usize))
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| FimError::io(dir, e))?;
        for attr in Attribute::TOKENS {
            self.tokens[attr.index()].write(&dir.join(format!("{}.txt", attr.field())))?;
        }
        self.age.write(&dir.join("user_age.txt"))?;
        self.gender.write(&dir.join("user_gender.txt"))?;
        let meta = dir.join("price_max.txt");
        std::fs::write(&meta, format!("{:?}\n", self.price.max_price())).map_err(|e| FimError::io(&meta, e))
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let tokens = Attribute::TOKENS.map(|attr| Vocab::read(&dir.join(format!("{}.txt", attr.field()))));
        let [a, b, c, d, e, f] = tokens;
        let meta = dir.join("price_max.txt");
        let text = std::fs::read_to_string(&meta).map_err(|e| FimError::io(&meta, e))?;
        let max_price: f64 = text
            .trim()
            .parse()
            .map_err(|_| FimError::Parse { line: 1, message: format!("bad price max `{}`", text.trim()) })?;
        Ok(Self {
            tokens: [a?, b?, c?, d?, e?, f?],
            age: Vocab::read(&dir.join("user_age.txt"))?,
            gender: Vocab::read(&dir.join("user_gender.txt"))?,
            price: PriceBuckets::new(max_price, PRICE_BUCKETS)?,
        })
    }
}

/// Parameter ids for the nine attribute tables and the side-information
/// tables. Side information has tables of its own so that stopping its
/// gradient never touches the sequence embeddings.
#[derive(Clone, Debug)]
pub struct EmbeddingTables {
    pub attrs: [ParamId; 9],
    pub user_age: ParamId,
    pub user_gender: ParamId,
    pub item_brand: ParamId,
    pub item_price: ParamId,
    pub pay_len: ParamId,
    pub dim: usize,
}

const EMB_SCALE: f64 = 0.1;

impl EmbeddingTables {
    pub fn table_name(attr: Attribute) -> String {
        format!("emb.{}", attr.field())
    }

    pub fn register<R: Rng>(store: &mut ParamStore, enc: &FeatureEncoder, dim: usize, rng: &mut R) -> Result<Self> {
        let mut attrs = Vec::with_capacity(9);
        for attr in Attribute::ALL {
            let rows = enc.table_rows(attr);
            attrs.push(store.insert_uniform(Self::table_name(attr), &[rows, dim], EMB_SCALE, rng)?);
        }
        let user_age = store.insert_uniform("side.user_age", &[enc.age.len(), dim], EMB_SCALE, rng)?;
        let user_gender = store.insert_uniform("side.user_gender", &[enc.gender.len(), dim], EMB_SCALE, rng)?;
        let item_brand =
            store.insert_uniform("side.item_brand", &[enc.table_rows(Attribute::Brand), dim], EMB_SCALE, rng)?;
        let item_price =
            store.insert_uniform("side.item_price", &[enc.table_rows(Attribute::Price), dim], EMB_SCALE, rng)?;
        let pay_len = store.insert_uniform("side.pay_len", &[PAY_LEN_EDGES.len() + 1, dim], EMB_SCALE, rng)?;
        Ok(Self { attrs: attrs.try_into().unwrap(), user_age, user_gender, item_brand, item_price, pay_len, dim })
    }

    /// Looks the tables up by name in an existing store.
    pub fn from_store(store: &ParamStore) -> Result<Self> {
        let find = |name: String| {
            store.id(&name).ok_or_else(|| FimError::invalid(format!("missing embedding table `{name}`")))
        };
        let mut attrs = Vec::with_capacity(9);
        for attr in Attribute::ALL {
            attrs.push(find(Self::table_name(attr))?);
        }
        let dim = store.get(attrs[0]).cols();
        Ok(Self {
            attrs: attrs.try_into().unwrap(),
            user_age: find("side.user_age".into())?,
            user_gender: find("side.user_gender".into())?,
            item_brand: find("side.item_brand".into())?,
            item_price: find("side.item_price".into())?,
            pay_len: find("side.pay_len".into())?,
            dim,
        })
    }

    pub fn total_dim(&self) -> usize {
        self.dim * Attribute::ALL.len()
    }
}

/// Embedded sequence: the full `N x D` matrix plus the per-attribute blocks.
#[derive(Clone, Debug)]
pub struct SequenceEmbedding {
    pub full: Var,
    pub attrs: [Var; 9],
    pub len: usize,
}

/// Row `i` is the concatenation of the nine attribute embeddings of record
/// `i`; padding (`None`) rows are all zero.
pub fn embed_sequence(
    tape: &mut Tape,
    records: &[Option<EncodedRecord>],
    tables: &EmbeddingTables,
) -> Result<SequenceEmbedding> {
    if records.is_empty() {
        return Err(FimError::EmptyInput("sequence"));
    }
    let mut attrs = Vec::with_capacity(9);
    for attr in Attribute::ALL {
        let rows = records.iter().map(|r| r.map(|r| r.row(attr))).collect();
        attrs.push(tape.gather(tables.attrs[attr.index()], rows)?);
    }
    let full = tape.concat_cols(&attrs)?;
    Ok(SequenceEmbedding { full, attrs: attrs.try_into().unwrap(), len: records.len() })
}

/// Which side-information slices enter the gate and whether they pass
/// gradient back.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SideInfoMode {
    /// Only the purchase-count slice.
    None,
    /// All slices, all trainable through the gate.
    Grad,
    /// All slices; only the purchase-count slice passes gradient.
    NoGrad,
}

impl SideInfoMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(Self::None),
            "grad" => Some(Self::Grad),
            "nograd" => Some(Self::NoGrad),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Grad => "grad",
            Self::NoGrad => "nograd",
        }
    }
}

#[derive(Clone, Debug)]
pub struct SideSlice {
    pub name: &'static str,
    pub var: Var,
    pub grad_flows: bool,
    /// Table row the slice was read from.
    pub source: (ParamId, usize),
}

/// `I_u`: slices in the fixed order user age, user gender, item brand,
/// item price bucket, purchase count (always last).
#[derive(Clone, Debug)]
pub struct SideInfo {
    pub slices: Vec<SideSlice>,
}

impl SideInfo {
    /// Concatenates the slices, detaching those with `grad_flows == false`.
    pub fn assemble(&self, tape: &mut Tape) -> Result<Var> {
        let parts: Vec<Var> =
            self.slices.iter().map(|s| if s.grad_flows { s.var } else { tape.stop_gradient(s.var) }).collect();
        tape.concat_cols(&parts)
    }

    pub fn dim(&self, tape: &Tape) -> usize {
        self.slices.iter().map(|s| tape.value(s.var).cols()).sum()
    }

    /// Tables whose gradient through this side info is stopped.
    pub fn stopped_tables(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.slices.iter().filter(|s| !s.grad_flows).map(|s| s.source.0)
    }
}

/// Width of `I_u` for a mode, in units of the embedding dimension.
pub fn side_info_slots(mode: SideInfoMode) -> usize {
    match mode {
        SideInfoMode::None => 1,
        SideInfoMode::Grad | SideInfoMode::NoGrad => 5,
    }
}

pub fn embed_side_info(
    tape: &mut Tape,
    tables: &EmbeddingTables,
    profile: (usize, usize),
    target: &EncodedRecord,
    purchase_count: usize,
    mode: SideInfoMode,
) -> Result<SideInfo> {
    let mut slices = Vec::with_capacity(5);
    let side_flows = mode == SideInfoMode::Grad;
    if mode != SideInfoMode::None {
        for (name, table, row) in [
            ("user_age", tables.user_age, profile.0),
            ("user_gender", tables.user_gender, profile.1),
            ("item_brand", tables.item_brand, target.row(Attribute::Brand)),
            ("item_price", tables.item_price, target.row(Attribute::Price)),
        ] {
            let var = tape.gather(table, vec![Some(row)])?;
            slices.push(SideSlice { name, var, grad_flows: side_flows, source: (table, row) });
        }
    }
    let bucket = 1 + pay_len_bucket(purchase_count);
    let var = tape.gather(tables.pay_len, vec![Some(bucket)])?;
    slices.push(SideSlice { name: "pay_len", var, grad_flows: true, source: (tables.pay_len, bucket) });
    Ok(SideInfo { slices })
}
