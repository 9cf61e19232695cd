use fim_core::data::{
    default_categories, generate_synthetic, load_jsonl, split_temporal, target_step_range, user_id, user_schedule,
    write_jsonl, PromoWindow, SyntheticConfig,
};
use proptest::prelude::*;

fn small(users: usize, seed: u64) -> SyntheticConfig {
    SyntheticConfig { n_users: users, seq_len: 40, seed, ..SyntheticConfig::default() }
}

#[test]
fn same_seed_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(30, 9);
    let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    write_jsonl(&generate_synthetic(&cfg).unwrap(), &a).unwrap();
    write_jsonl(&generate_synthetic(&cfg).unwrap(), &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let other = SyntheticConfig { seed: 10, ..cfg };
    write_jsonl(&generate_synthetic(&other).unwrap(), &b).unwrap();
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn no_exploration_period_three_phase_zero() {
    let base = SyntheticConfig {
        n_users: 1,
        seq_len: 30,
        horizon: 1,
        categories: default_categories(2, &[3], 2.0, 1.4),
        categories_per_user: 1,
        irregular_per_user: 0,
        exploration_rate: 0.0,
        ..SyntheticConfig::default()
    };
    // find a seed whose only user follows a category at phase 0
    let cfg = (0..200)
        .map(|seed| SyntheticConfig { seed, ..base.clone() })
        .find(|c| user_schedule(c, 0).entries[0].1 == 0)
        .expect("some seed draws phase 0");
    let (cat, _) = user_schedule(&cfg, 0).entries[0];
    let name = &cfg.categories[cat].name;
    let ds = generate_synthetic(&cfg).unwrap();
    let steps: Vec<i64> = ds.users[&user_id(0)]
        .events
        .iter()
        .filter(|e| e.step < 30 && &e.record.category == name)
        .map(|e| e.step)
        .collect();
    assert_eq!(steps, (0..30).step_by(3).collect::<Vec<i64>>());
}

#[test]
fn neutral_promo_matches_no_promo() {
    let cfg = small(25, 4);
    let promo = SyntheticConfig { promo_windows: vec![PromoWindow { start: 5, end: 30, boost: 1.0 }], ..cfg.clone() };
    assert_eq!(generate_synthetic(&cfg).unwrap(), generate_synthetic(&promo).unwrap());

    let strong = SyntheticConfig { promo_windows: vec![PromoWindow { start: 5, end: 30, boost: 3.0 }], ..cfg.clone() };
    assert_ne!(generate_synthetic(&cfg).unwrap(), generate_synthetic(&strong).unwrap());
}

#[test]
fn jsonl_roundtrip_is_lossless() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    let ds = generate_synthetic(&small(20, 3)).unwrap();
    write_jsonl(&ds, &path).unwrap();
    assert_eq!(load_jsonl(&path).unwrap(), ds);
}

#[test]
fn planted_period_is_the_autocorrelation_peak() {
    let cfg = SyntheticConfig { n_users: 300, seq_len: 64, exploration_rate: 0.1, ..SyntheticConfig::default() };
    let ds = generate_synthetic(&cfg).unwrap();
    let (mut hits, mut total) = (0, 0);
    for u in 0..cfg.n_users {
        let log = &ds.users[&user_id(u)];
        for &(c, _) in &user_schedule(&cfg, u).entries {
            let mut x = vec![0.0; cfg.seq_len];
            for e in log.events.iter().filter(|e| e.step < cfg.seq_len as i64) {
                if e.record.category == cfg.categories[c].name && e.record.is_purchase() {
                    x[e.step as usize] = 1.0;
                }
            }
            let mean = x.iter().sum::<f64>() / x.len() as f64;
            let acf = |lag: usize| -> f64 { (lag..x.len()).map(|t| (x[t] - mean) * (x[t - lag] - mean)).sum() };
            // harmonics of a periodic indicator tie with its period up to
            // noise, so read the fundamental: the first lag near the maximum
            let peak = (1..=24).map(acf).fold(f64::NEG_INFINITY, f64::max);
            let best = (1..=24).find(|&k| acf(k) >= 0.8 * peak).unwrap();
            hits += (best == cfg.categories[c].period as usize) as usize;
            total += 1;
        }
    }
    let rate = hits as f64 / total as f64;
    assert!(rate > 0.95, "peak at planted period for {hits}/{total}");
}

#[test]
fn temporal_split_edges() {
    let ds = generate_synthetic(&small(10, 2)).unwrap();
    let (lo, hi) = target_step_range(&ds).unwrap();
    let (train, test) = split_temporal(&ds, hi).unwrap();
    assert_eq!((train.len(), test.len()), (ds.samples.len(), 0));
    let (train, test) = split_temporal(&ds, lo - 1).unwrap();
    assert_eq!((train.len(), test.len()), (0, ds.samples.len()));
    assert!(split_temporal(&ds, hi + 1).is_err());
    assert!(split_temporal(&ds, lo - 2).is_err());
}

#[test]
fn history_never_reaches_the_target_step() {
    let ds = generate_synthetic(&small(15, 6)).unwrap();
    for s in &ds.samples {
        let h = ds.history(s);
        assert!(!h.is_empty());
        assert!(h.iter().all(|e| e.step < s.step));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn split_is_a_partition(seed in 0u64..1000, offset in 0i64..6) {
        let ds = generate_synthetic(&SyntheticConfig { n_users: 6, seq_len: 16, seed, ..SyntheticConfig::default() }).unwrap();
        let (lo, hi) = target_step_range(&ds).unwrap();
        let cutoff = (lo - 1 + offset).min(hi);
        let (train, test) = split_temporal(&ds, cutoff).unwrap();
        prop_assert_eq!(train.len() + test.len(), ds.samples.len());
        prop_assert!(train.iter().all(|s| s.step <= cutoff));
        prop_assert!(test.iter().all(|s| s.step > cutoff));
    }

    #[test]
    fn labels_follow_the_schedule(seed in 0u64..1000) {
        let cfg = SyntheticConfig { n_users: 5, seq_len: 16, seed, ..SyntheticConfig::default() };
        let ds = generate_synthetic(&cfg).unwrap();
        for s in &ds.samples {
            let u: usize = s.user_id[1..].parse().unwrap();
            let sched = user_schedule(&cfg, u);
            let cat = cfg.categories.iter().position(|c| c.name == s.target.category).unwrap();
            prop_assert_eq!(s.labels.purchase, sched.due(&cfg, s.step).contains(&cat));
            prop_assert!(!s.labels.purchase || s.labels.click);
        }
    }
}
