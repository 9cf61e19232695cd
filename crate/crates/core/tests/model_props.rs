use fim_core::config::RunConfig;
use fim_core::fpem::{split_bands, trunc_gains, BandMasks, FilterKind};
use fim_core::harness::{cmd_gradcheck, GRADCHECK_TOL};
use fim_core::mss::{topk_select, SearchMode};
use fim_core::numerics::{ParamStore, Tape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(n: usize, d: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::matrix(n, d, (0..n * d).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn truncation_bands_reconstruct(n in 2usize..80, d in 1usize..6, p_frac in 0.0f64..1.0, seed in any::<u64>()) {
        let l = n / 2 + 1;
        prop_assume!(l >= 2);
        let p = 1 + ((l / 2 - 1) as f64 * p_frac) as usize;
        let masks = BandMasks::new(n, FilterKind::Trunc { p }).unwrap();
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let x = random_matrix(n, d, seed);
        let e = tape.constant(x.clone());
        let (lo, ba, hi) = split_bands(&mut tape, e, &masks).unwrap();
        let s1 = tape.add(lo, ba).unwrap();
        let sum = tape.add(s1, hi).unwrap();
        prop_assert!(tape.value(sum).max_abs_diff(&x) < 1e-9);
    }

    #[test]
    fn truncation_masks_partition_the_spectrum(l in 2usize..60, p_frac in 0.0f64..1.0) {
        let p = 1 + ((l / 2 - 1) as f64 * p_frac) as usize;
        let (lo, ba, hi) = trunc_gains(l, p).unwrap();
        for c in 0..l {
            prop_assert_eq!(lo[c] + ba[c] + hi[c], 1.0);
        }
        prop_assert_eq!(lo.iter().sum::<f64>(), p as f64);
        prop_assert_eq!(hi.iter().sum::<f64>(), p as f64);
    }

    #[test]
    fn topk_returns_the_best_valid_positions(
        scores in prop::collection::vec(0u8..4, 1..40),
        valid_bits in any::<u64>(),
        k in 1usize..10,
    ) {
        let n = scores.len();
        let s: Vec<f64> = scores.iter().map(|&v| v as f64).collect();
        let mut valid: Vec<bool> = (0..n).map(|i| valid_bits >> (i % 64) & 1 == 1).collect();
        valid[n - 1] = true;
        for mode in [SearchMode::Hard, SearchMode::Soft] {
            let sel = topk_select(&s, &valid, k, mode).unwrap();
            prop_assert!(sel.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(sel.iter().all(|&i| valid[i]));
            let eligible: Vec<usize> =
                (0..n).filter(|&i| valid[i] && (mode == SearchMode::Soft || s[i] > 0.0)).collect();
            prop_assert_eq!(sel.len(), k.min(eligible.len()));
            // nothing left out scores strictly higher than something kept
            let worst_kept = sel.iter().map(|&i| s[i]).fold(f64::INFINITY, f64::min);
            for &i in eligible.iter().filter(|i| !sel.contains(i)) {
                prop_assert!(s[i] <= worst_kept);
            }
        }
    }
}

#[test]
fn paper_book_setting_reconstructs() {
    let masks = BandMasks::new(26, FilterKind::Trunc { p: 5 }).unwrap();
    assert_eq!(masks.len(), 14);
    let store = ParamStore::new();
    let mut tape = Tape::new(&store);
    let x = random_matrix(26, 16, 7);
    let e = tape.constant(x.clone());
    let (lo, ba, hi) = split_bands(&mut tape, e, &masks).unwrap();
    let s = tape.add(lo, ba).unwrap();
    let s = tape.add(s, hi).unwrap();
    assert!(tape.value(s).max_abs_diff(&x) < 1e-9);
}

fn short_window(extra: &[&str]) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.apply_overrides(&["dims=2", "max_len=16", "gen.seq_len=16", "fpem.p=3", "attention.hidden=6"]).unwrap();
    cfg.apply_overrides(extra).unwrap();
    cfg
}

#[test]
fn full_pipeline_gradients_match_finite_differences() {
    let cfg = short_window(&[]);
    let report = cmd_gradcheck(&cfg).unwrap();
    assert!(report.max_rel_err < GRADCHECK_TOL, "{}", report.render());
    for g in fim_core::harness::PARAM_GROUPS {
        assert!(report.groups[g].is_some(), "{g} missing");
    }
    let side = report.groups["side"].as_ref().unwrap();
    assert!(side.exempt > 0);
    assert_eq!(side.exempt_max_tape, 0.0);
    assert!(side.exempt_max_fd > 0.0, "{}", report.render());
    assert_eq!(report, cmd_gradcheck(&cfg).unwrap());
}

#[test]
fn gradcheck_without_fpem_reports_it_absent() {
    // every position fits in top_k, so soft selection cannot flip under perturbation
    let cfg = short_window(&["fpem.enabled=false", "search=soft", "attention=dot"]);
    let report = cmd_gradcheck(&cfg).unwrap();
    assert!(report.groups["fpem"].is_none());
    assert!(report.max_rel_err < GRADCHECK_TOL, "{}", report.render());
    assert_eq!(report.groups["side"].as_ref().unwrap().exempt, 0);
}
