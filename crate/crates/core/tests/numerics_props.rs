use std::rc::Rc;

use fim_core::numerics::fft::{self, half_spectrum_energy};
use fim_core::numerics::{
    grad_check, irfft, layer_norm, rfft, GradCheckOptions, Gradients, ParamId, ParamStore, Tape, Tensor, Var,
};
use fim_core::Result;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn signal(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, len)
}

proptest! {
    #[test]
    fn roundtrip(x in signal(1..130)) {
        let back = irfft(&rfft(&x).unwrap(), x.len()).unwrap();
        for (a, b) in x.iter().zip(&back) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn parseval(x in signal(1..130)) {
        let energy: f64 = x.iter().map(|v| v * v).sum();
        let spectral = half_spectrum_energy(&rfft(&x).unwrap(), x.len());
        prop_assert!((energy - spectral).abs() < 1e-9 * energy.max(1.0));
    }

    #[test]
    fn linearity(pair in (1usize..100).prop_flat_map(|n| (signal(n..n + 1), signal(n..n + 1))),
                 a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let (x, y) = pair;
        let mixed: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
        let lhs = rfft(&mixed).unwrap();
        let (fx, fy) = (rfft(&x).unwrap(), rfft(&y).unwrap());
        for ((l, u), v) in lhs.iter().zip(&fx).zip(&fy) {
            prop_assert!((l - (u * a + v * b)).norm() < 1e-9);
        }
    }

    #[test]
    fn layer_norm_is_scale_invariant(x in signal(2..20), k in 0.1f64..50.0) {
        let d = x.len();
        let gamma = vec![1.0; d];
        let shift = vec![0.0; d];
        let scaled: Vec<f64> = x.iter().map(|v| v * k).collect();
        let a = layer_norm(&x, &gamma, &shift, 1e-12).unwrap();
        let b = layer_norm(&scaled, &gamma, &shift, 1e-12).unwrap();
        let var = {
            let m = x.iter().sum::<f64>() / d as f64;
            x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / d as f64
        };
        prop_assume!(var > 1e-3);
        for (u, v) in a.iter().zip(&b) {
            prop_assert!((u - v).abs() < 1e-6);
        }
    }
}

#[test]
fn layer_norm_examples() {
    assert_eq!(layer_norm(&[1.0, 1.0], &[1.0, 1.0], &[0.0, 0.0], 1e-5).unwrap(), vec![0.0, 0.0]);
    // mean 1, std 1
    let out = layer_norm(&[0.0, 2.0], &[1.0, 1.0], &[0.0, 0.0], 1e-15).unwrap();
    assert!((out[0] + 1.0).abs() < 1e-12 && (out[1] - 1.0).abs() < 1e-12);
    assert!(layer_norm(&[1.0], &[1.0, 2.0], &[0.0], 1e-5).is_err());
}

#[test]
fn rfft_agrees_with_naive_dft_on_awkward_lengths() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for n in [26usize, 100, 61, 97, 33, 1, 2] {
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let complex: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let naive = fft::dft_naive(&complex);
        let got = rfft(&x).unwrap();
        for (k, g) in got.iter().enumerate() {
            assert!((g - naive[k % n]).norm() < 1e-9, "n={n} k={k}");
        }
    }
}

/// Random parameters for one op-level gradient check.
fn store_with(shapes: &[(&str, &[usize])], seed: u64) -> (ParamStore, Vec<ParamId>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let ids = shapes.iter().map(|(name, shape)| store.insert_uniform(*name, shape, 1.0, &mut rng).unwrap()).collect();
    (store, ids)
}

fn check<F>(store: &mut ParamStore, build: F) -> f64
where
    F: Fn(&mut Tape) -> Result<Var>,
{
    let eval = |p: &ParamStore| -> Result<(f64, Gradients)> {
        let mut tape = Tape::new(p);
        let out = build(&mut tape)?;
        let g = tape.backward(out)?;
        Ok((tape.value(out).item(), g))
    };
    let (_, grads) = eval(store).unwrap();
    grad_check(&grads, |p| eval(p).map(|r| r.0), store, &GradCheckOptions::default()).unwrap().max_rel_err
}

/// Contract every scalar output with a fixed pseudo-random weighting so each
/// output coordinate gets a distinct upstream gradient.
fn contract(tape: &mut Tape, x: Var) -> Result<Var> {
    let shape = tape.value(x).shape().to_vec();
    let n: usize = shape.iter().product();
    let w: Vec<f64> = (0..n).map(|i| ((i * 7919) % 13) as f64 / 6.0 - 1.0).collect();
    let w = tape.constant(Tensor::new(shape, w)?);
    let prod = tape.mul(x, w)?;
    Ok(tape.sum_all(prod))
}

#[test]
fn elementwise_and_matmul_ops_match_finite_differences() {
    let (mut store, ids) = store_with(&[("a", &[3, 4]), ("b", &[4, 2]), ("r", &[1, 2])], 1);
    let (a, b, r) = (ids[0], ids[1], ids[2]);
    let err = check(&mut store, |t| {
        let (va, vb, vr) = (t.param(a), t.param(b), t.param(r));
        let m = t.matmul(va, vb)?;
        let m = t.add_row(m, vr)?;
        let s = t.sigmoid(m);
        let sq = t.square(m);
        let p = t.mul(s, sq)?;
        let d = t.sub(p, m)?;
        let e = t.scale(d, 0.3);
        let tr = t.transpose(e);
        contract(t, tr)
    });
    assert!(err < 1e-4, "{err}");
}

#[test]
fn softmax_concat_and_row_ops_match_finite_differences() {
    let (mut store, ids) = store_with(&[("x", &[4, 3]), ("q", &[1, 3]), ("s", &[1, 1])], 2);
    let (x, q, s) = (ids[0], ids[1], ids[2]);
    let err = check(&mut store, |t| {
        let (vx, vq, vs) = (t.param(x), t.param(q), t.param(s));
        let rep = t.repeat_rows(vq, 4)?;
        let cat = t.concat_cols(&[rep, vx])?;
        let sm = t.softmax_rows(cat);
        let picked = t.select_rows(sm, vec![3, 0, 3])?;
        let mean = t.mean_rows(vx, vec![0, 2, 3])?;
        let scaled = t.scale_by(mean, vs)?;
        let picked_mean = t.mean_rows(picked, vec![0, 1, 2])?;
        let both = t.concat_cols(&[scaled, picked_mean])?;
        let rows = t.concat_rows(&[vq, vq])?;
        let rows = t.sigmoid(rows);
        let c1 = contract(t, both)?;
        let c2 = contract(t, rows)?;
        t.add(c1, c2)
    });
    assert!(err < 1e-4, "{err}");
}

#[test]
fn layer_norm_and_spectral_filter_match_finite_differences() {
    let n = 26;
    let (mut store, ids) = store_with(&[("x", &[n, 3]), ("gamma", &[1, 3]), ("beta", &[1, 3])], 3);
    let (x, g, b) = (ids[0], ids[1], ids[2]);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let gains: Vec<f64> = (0..fft::half_len(n)).map(|_| rng.gen_range(0.0..1.0)).collect();
    let full = Rc::new(fft::symmetric_gains(&gains, n));
    let err = check(&mut store, |t| {
        let (vx, vg, vb) = (t.param(x), t.param(g), t.param(b));
        let f = t.spectral_filter(vx, full.clone())?;
        let ln = t.layer_norm(f, vg, vb, 1e-5)?;
        let r = t.relu(ln);
        contract(t, r)
    });
    assert!(err < 1e-4, "{err}");
}

#[test]
fn gather_and_bce_match_finite_differences() {
    let (mut store, ids) = store_with(&[("table", &[5, 2]), ("w", &[2, 3])], 4);
    let (table, w) = (ids[0], ids[1]);
    let err = check(&mut store, |t| {
        let rows = t.gather(table, vec![Some(1), None, Some(4), Some(1)])?;
        let vw = t.param(w);
        let logits = t.matmul(rows, vw)?;
        let pooled = t.mean_rows(logits, vec![0, 1, 2, 3])?;
        let p = t.sigmoid(pooled);
        t.bce(p, &[1.0, 0.0, 1.0])
    });
    assert!(err < 1e-4, "{err}");
}

#[test]
fn unused_rows_and_parameters_get_exact_zero() {
    let (store, ids) = store_with(&[("table", &[5, 2]), ("unused", &[2, 2])], 6);
    let mut tape = Tape::new(&store);
    let rows = tape.gather(ids[0], vec![Some(2), None]).unwrap();
    let out = tape.sum_all(rows);
    let grads = tape.backward(out).unwrap();
    let g = grads.dense(ids[0], &store);
    for r in [0, 1, 3, 4] {
        assert_eq!(g.row_slice(r), &[0.0, 0.0]);
    }
    assert_eq!(g.row_slice(2), &[1.0, 1.0]);
    assert!(grads.get(ids[1]).is_none());
    assert_eq!(grads.dense(ids[1], &store), Tensor::zeros(&[2, 2]));
}

#[test]
fn replaying_the_tape_is_deterministic() {
    let (store, ids) = store_with(&[("x", &[8, 4]), ("gamma", &[1, 4]), ("beta", &[1, 4])], 9);
    let full = Rc::new(fft::symmetric_gains(&[1.0, 0.5, 0.0, 0.0, 1.0], 8));
    let mut tape = Tape::new(&store);
    let x = tape.param(ids[0]);
    let f = tape.spectral_filter(x, full).unwrap();
    let (g, b) = (tape.param(ids[1]), tape.param(ids[2]));
    let ln = tape.layer_norm(f, g, b, 1e-5).unwrap();
    let out = tape.sum_all(ln);
    let first = tape.backward(out).unwrap();
    let second = tape.backward(out).unwrap();
    assert_eq!(first, second);
}
