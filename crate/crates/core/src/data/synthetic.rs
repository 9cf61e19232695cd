//! Synthetic logs with planted per-category purchase periods.
//!
//! Each user follows a few categories; category `c` is bought at every step
//! `t` with `t = phase (mod period_c)`. Such a scheduled purchase is swapped
//! for a random category with probability `exploration_rate`. Users also
//! have a few irregular interests, bought at random times. Steps with no
//! scheduled purchase carry one event: an irregular purchase, or a browse or
//! impulse purchase from a category outside the schedule. Targets are shown
//! after `seq_len` steps; a target is positive for purchase exactly when its
//! category is due at that step.

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Dataset, Event, Labels, Sample, UserLog};
use crate::embeddings::{InteractionRecord, UserProfile, PURCHASE};
use crate::error::{FimError, Result};

pub const BROWSE: &str = "click";
const DOMAINS: [&str; 4] = ["feed", "search", "live", "mall"];
const AGES: [&str; 4] = ["18-24", "25-34", "35-44", "45+"];
const GENDERS: [&str; 2] = ["f", "m"];

#[derive(Clone, Debug, PartialEq)]
pub struct CategorySpec {
    pub name: String,
    pub period: u32,
    pub price_range: (f64, f64),
}

/// Steps in `[start, end)` scale purchase probabilities by `boost`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PromoWindow {
    pub start: i64,
    pub end: i64,
    pub boost: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub n_users: usize,
    pub seq_len: usize,
    /// Number of target steps after the first `seq_len` steps.
    pub horizon: usize,
    pub targets_per_step: usize,
    pub categories: Vec<CategorySpec>,
    pub categories_per_user: usize,
    /// Categories each user buys at random times rather than on a schedule.
    pub irregular_per_user: usize,
    /// Chance that an unscheduled step is a purchase from an irregular interest.
    pub irregular_rate: f64,
    pub goods_per_category: usize,
    pub authors_per_category: usize,
    pub brands_per_category: usize,
    pub exploration_rate: f64,
    /// Chance that an unscheduled step is a purchase rather than a browse.
    pub impulse_rate: f64,
    /// Chance that a scheduled purchase comes from the user's favourite author.
    pub favorite_rate: f64,
    /// Chance that a negative target is a followed category that is not due.
    pub hard_negative_rate: f64,
    /// Chance that a remaining negative target is an irregular interest.
    pub decoy_rate: f64,
    /// Chance of a click label with no other reason for one.
    pub click_noise: f64,
    pub promo_windows: Vec<PromoWindow>,
    pub seed: u64,
}

/// `n` categories cycling through `periods`, with geometric price ranges
/// `[base * growth^c, 2 * base * growth^c]`.
pub fn default_categories(n: usize, periods: &[u32], base: f64, growth: f64) -> Vec<CategorySpec> {
    (0..n)
        .map(|c| {
            let lo = base * growth.powi(c as i32);
            CategorySpec { name: format!("cat{c:02}"), period: periods[c % periods.len()], price_range: (lo, 2.0 * lo) }
        })
        .collect()
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_users: 2000,
            seq_len: 64,
            horizon: 4,
            targets_per_step: 2,
            categories: default_categories(12, &[3, 5, 7, 11], 2.0, 1.4),
            categories_per_user: 3,
            irregular_per_user: 2,
            irregular_rate: 0.5,
            goods_per_category: 12,
            authors_per_category: 4,
            brands_per_category: 3,
            exploration_rate: 0.1,
            impulse_rate: 0.3,
            favorite_rate: 0.8,
            hard_negative_rate: 0.2,
            decoy_rate: 0.5,
            click_noise: 0.1,
            promo_windows: Vec::new(),
            seed: 1,
        }
    }
}

fn probability(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(FimError::config(name, format!("probability {p} outside [0, 1]")))
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("gen.users", self.n_users),
            ("gen.seq_len", self.seq_len),
            ("gen.horizon", self.horizon),
            ("gen.targets_per_step", self.targets_per_step),
            ("gen.categories", self.categories.len()),
            ("gen.categories_per_user", self.categories_per_user),
            ("gen.goods_per_category", self.goods_per_category),
            ("gen.authors_per_category", self.authors_per_category),
            ("gen.brands_per_category", self.brands_per_category),
        ] {
            if v == 0 {
                return Err(FimError::config(name, "must be at least 1"));
            }
        }
        if self.categories_per_user + self.irregular_per_user > self.categories.len() {
            return Err(FimError::config(
                "gen.irregular_per_user",
                "scheduled plus irregular categories exceed the number of categories",
            ));
        }
        for c in &self.categories {
            if c.period == 0 {
                return Err(FimError::config("gen.periods", format!("period of {} must be at least 1", c.name)));
            }
            let (lo, hi) = c.price_range;
            if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi) {
                return Err(FimError::config("gen.price_base", format!("bad price range for {}", c.name)));
            }
        }
        probability("gen.exploration_rate", self.exploration_rate)?;
        probability("gen.impulse_rate", self.impulse_rate)?;
        probability("gen.favorite_rate", self.favorite_rate)?;
        probability("gen.hard_negative_rate", self.hard_negative_rate)?;
        probability("gen.decoy_rate", self.decoy_rate)?;
        probability("gen.irregular_rate", self.irregular_rate)?;
        probability("gen.click_noise", self.click_noise)?;
        for w in &self.promo_windows {
            if w.start > w.end || !(w.boost.is_finite() && w.boost >= 0.0) {
                return Err(FimError::config("gen.promo", format!("bad window {}:{}:{}", w.start, w.end, w.boost)));
            }
        }
        Ok(())
    }

    fn boost(&self, step: i64) -> f64 {
        self.promo_windows.iter().filter(|w| w.start <= step && step < w.end).map(|w| w.boost).product()
    }

    pub fn total_steps(&self) -> usize {
        self.seq_len + self.horizon
    }
}

/// SplitMix64 finalizer, used to derive independent stream seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn user_seed(seed: u64, user: usize) -> u64 {
    mix(mix(seed) ^ user as u64)
}

struct Good {
    id: String,
    author: String,
    brand: String,
    price: f64,
}

struct Catalog {
    /// `goods[c][j]`; author `j % A`, brand `j % B`.
    goods: Vec<Vec<Good>>,
}

impl Catalog {
    fn new(cfg: &SyntheticConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed ^ 0x0CA7_A106));
        let goods = cfg
            .categories
            .iter()
            .enumerate()
            .map(|(c, spec)| {
                (0..cfg.goods_per_category)
                    .map(|j| {
                        let (lo, hi) = spec.price_range;
                        let raw = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
                        Good {
                            id: format!("g{c:02}_{j:03}"),
                            author: format!("a{c:02}_{}", j % cfg.authors_per_category),
                            brand: format!("b{c:02}_{}", j % cfg.brands_per_category),
                            price: (raw * 100.0).round() / 100.0,
                        }
                    })
                    .collect()
            })
            .collect();
        Self { goods }
    }

    /// A good of category `c`; `favorite` restricts to that author's goods.
    fn pick(&self, cfg: &SyntheticConfig, c: usize, favorite: Option<usize>, u: u64) -> &Good {
        let goods = &self.goods[c];
        match favorite {
            Some(f) if f < goods.len() => {
                let a = cfg.authors_per_category;
                let count = (goods.len() - f).div_ceil(a);
                &goods[f + a * (u % count as u64) as usize]
            }
            _ => &goods[(u % goods.len() as u64) as usize],
        }
    }
}

/// A user's planted schedule: `(category, phase)` pairs and favourite
/// authors, in category order, plus irregular interests with their
/// favourite authors.
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    pub entries: Vec<(usize, u32)>,
    pub favorites: Vec<usize>,
    pub irregular: Vec<(usize, usize)>,
}

impl Schedule {
    pub fn due(&self, cfg: &SyntheticConfig, step: i64) -> Vec<usize> {
        self.entries
            .iter()
            .filter(|&&(c, phase)| (step - phase as i64).rem_euclid(cfg.categories[c].period as i64) == 0)
            .map(|&(c, _)| c)
            .collect()
    }

    pub fn follows(&self, c: usize) -> bool {
        self.entries.iter().any(|&(s, _)| s == c)
    }

    fn favorite(&self, c: usize) -> Option<usize> {
        match self.entries.iter().position(|&(s, _)| s == c) {
            Some(i) => Some(self.favorites[i]),
            None => self.irregular.iter().find(|&&(s, _)| s == c).map(|&(_, f)| f),
        }
    }
}

struct UserGen<'a> {
    cfg: &'a SyntheticConfig,
    catalog: &'a Catalog,
    rng: ChaCha8Rng,
    schedule: Schedule,
    outside: Vec<usize>,
}

impl<'a> UserGen<'a> {
    fn new(cfg: &'a SyntheticConfig, catalog: &'a Catalog, user: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(user_seed(cfg.seed, user));
        let n_cat = cfg.categories.len();
        let picked = sample_indices(&mut rng, n_cat, cfg.categories_per_user + cfg.irregular_per_user).into_vec();
        let (mut cats, mut irregular_cats) =
            (picked[..cfg.categories_per_user].to_vec(), picked[cfg.categories_per_user..].to_vec());
        cats.sort_unstable();
        irregular_cats.sort_unstable();
        let entries: Vec<(usize, u32)> =
            cats.iter().map(|&c| (c, rng.gen_range(0..cfg.categories[c].period))).collect();
        let favorites = cats.iter().map(|_| rng.gen_range(0..cfg.authors_per_category)).collect();
        let irregular = irregular_cats.iter().map(|&c| (c, rng.gen_range(0..cfg.authors_per_category))).collect();
        let outside = (0..n_cat).filter(|c| !picked.contains(c)).collect();
        Self { cfg, catalog, rng, schedule: Schedule { entries, favorites, irregular }, outside }
    }

    fn record(&self, c: usize, good: &Good, action: &str, domain: usize, time_span: u32) -> InteractionRecord {
        let purchase = action == PURCHASE;
        InteractionRecord {
            goods_id: good.id.clone(),
            author_id: good.author.clone(),
            source_domain: DOMAINS[domain].to_string(),
            action: action.to_string(),
            brand: good.brand.clone(),
            category: self.cfg.categories[c].name.clone(),
            time_span,
            price: good.price,
            payment_amount: if purchase { good.price } else { 0.0 },
        }
    }

    fn favorite_for(&self, c: usize, u: f64) -> Option<usize> {
        self.schedule.favorite(c).filter(|_| u < self.cfg.favorite_rate)
    }

    /// Every random draw happens regardless of the branch taken, so a neutral
    /// promo boost leaves the stream unchanged.
    fn events(&mut self) -> Vec<Event> {
        let cfg = self.cfg;
        let n_cat = cfg.categories.len();
        let mut events = Vec::new();
        let mut last: Option<i64> = None;
        for step in 0..cfg.total_steps() as i64 {
            let boost = cfg.boost(step);
            let mut push =
                |this: &Self, c: usize, good: &Good, action: &str, domain: usize, events: &mut Vec<Event>| {
                    let span = last.map_or(0, |l| (step - l) as u32);
                    last = Some(step);
                    events.push(Event { step, record: this.record(c, good, action, domain, span) });
                };
            let due = self.schedule.due(cfg, step);
            for &c in &due {
                let (u_keep, u_cat, u_good, u_fav, domain): (f64, usize, u64, f64, usize) = (
                    self.rng.gen(),
                    self.rng.gen_range(0..n_cat),
                    self.rng.gen(),
                    self.rng.gen(),
                    self.rng.gen_range(0..DOMAINS.len()),
                );
                let keep = ((1.0 - cfg.exploration_rate) * boost).min(1.0);
                let (cat, fav) = if u_keep < keep { (c, self.favorite_for(c, u_fav)) } else { (u_cat, None) };
                let good = self.catalog.pick(cfg, cat, fav, u_good);
                push(self, cat, good, PURCHASE, domain, &mut events);
            }
            let (u_irr, u_imp, u_cat, u_good, u_fav, domain): (f64, f64, usize, u64, f64, usize) = (
                self.rng.gen(),
                self.rng.gen(),
                self.rng.gen_range(0..n_cat),
                self.rng.gen(),
                self.rng.gen(),
                self.rng.gen_range(0..DOMAINS.len()),
            );
            if !due.is_empty() {
                continue;
            }
            let irregular = &self.schedule.irregular;
            if !irregular.is_empty() && u_irr < (cfg.irregular_rate * boost).min(1.0) {
                let c = irregular[u_cat % irregular.len()].0;
                let good = self.catalog.pick(cfg, c, self.favorite_for(c, u_fav), u_good);
                push(self, c, good, PURCHASE, domain, &mut events);
            } else if !self.outside.is_empty() {
                let c = self.outside[u_cat % self.outside.len()];
                let action = if u_imp < (cfg.impulse_rate * boost).min(1.0) { PURCHASE } else { BROWSE };
                let good = self.catalog.pick(cfg, c, None, u_good);
                push(self, c, good, action, domain, &mut events);
            }
        }
        events
    }

    fn samples(&mut self, user_id: &str) -> Vec<Sample> {
        let cfg = self.cfg;
        let n_cat = cfg.categories.len();
        let mut out = Vec::new();
        for step in cfg.seq_len as i64..cfg.total_steps() as i64 {
            let due = self.schedule.due(cfg, step);
            let followed_idle: Vec<usize> =
                self.schedule.entries.iter().map(|&(c, _)| c).filter(|c| !due.contains(c)).collect();
            let others: Vec<usize> = (0..n_cat).filter(|c| !due.contains(c)).collect();
            for _ in 0..cfg.targets_per_step {
                let (u_pos, u_hard, u_decoy, u_pick, u_good, u_fav, u_click, domain): (
                    f64,
                    f64,
                    f64,
                    usize,
                    u64,
                    f64,
                    f64,
                    usize,
                ) = (
                    self.rng.gen(),
                    self.rng.gen(),
                    self.rng.gen(),
                    self.rng.gen_range(0..n_cat),
                    self.rng.gen(),
                    self.rng.gen(),
                    self.rng.gen(),
                    self.rng.gen_range(0..DOMAINS.len()),
                );
                let c = if u_pos < 0.5 && !due.is_empty() {
                    due[u_pick % due.len()]
                } else if u_hard < cfg.hard_negative_rate && !followed_idle.is_empty() {
                    followed_idle[u_pick % followed_idle.len()]
                } else if u_decoy < cfg.decoy_rate && !self.schedule.irregular.is_empty() {
                    let irregular = &self.schedule.irregular;
                    irregular[u_pick % irregular.len()].0
                } else if !self.outside.is_empty() {
                    self.outside[u_pick % self.outside.len()]
                } else {
                    others[u_pick % others.len().max(1)]
                };
                let good = self.catalog.pick(cfg, c, self.favorite_for(c, u_fav), u_good);
                let purchase = due.contains(&c);
                let click = purchase || (self.schedule.follows(c) && u_click < 0.5) || u_click < cfg.click_noise;
                out.push(Sample {
                    user_id: user_id.to_string(),
                    step,
                    target: self.record(c, good, PURCHASE, domain, 0),
                    labels: Labels { click, purchase },
                });
            }
        }
        out
    }
}

pub fn user_id(user: usize) -> String {
    format!("u{user:05}")
}

/// The planted schedule of user index `user`, as the generator draws it.
pub fn user_schedule(cfg: &SyntheticConfig, user: usize) -> Schedule {
    let catalog = Catalog { goods: Vec::new() };
    UserGen::new(cfg, &catalog, user).schedule
}

pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Dataset> {
    cfg.validate()?;
    let catalog = Catalog::new(cfg);
    let mut ds = Dataset::default();
    for user in 0..cfg.n_users {
        let id = user_id(user);
        let mut gen = UserGen::new(cfg, &catalog, user);
        let profile = UserProfile {
            age: AGES[gen.rng.gen_range(0..AGES.len())].to_string(),
            gender: GENDERS[gen.rng.gen_range(0..GENDERS.len())].to_string(),
        };
        let events = gen.events();
        ds.samples.extend(gen.samples(&id));
        ds.users.insert(id, UserLog { profile: Some(profile), events });
    }
    Ok(ds)
}
