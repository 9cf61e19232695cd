//! Complex FFT plans and the real transform pair used along the sequence axis.
//!
//! Sizes whose prime factors are all small run through a recursive
//! mixed-radix decimation-in-time kernel (radix 4, 2 and a generic odd
//! butterfly). Sizes with a prime factor above [`MAX_DIRECT_RADIX`] go through
//! Bluestein's chirp-z reduction onto a power-of-two plan, so every length is
//! `O(N log N)` and no zero padding leaks into the caller's bins.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::rc::Rc;

use num_complex::Complex64;

use crate::error::{FimError, Result};

const MAX_DIRECT_RADIX: usize = 23;

/// Number of half-spectrum bins kept for a length-`n` signal: `ceil(n/2) + 1`.
pub fn half_len(n: usize) -> usize {
    n.div_ceil(2) + 1
}

#[derive(Debug)]
pub struct FftPlan {
    n: usize,
    algo: Algo,
}

#[derive(Debug)]
enum Algo {
    Radix {
        // (radix, remaining length after this stage)
        stages: Vec<(usize, usize)>,
        twiddles: Vec<Complex64>,
        // per stage, w^(q k stride) laid out contiguously as [k][q-1]
        stage_twiddles: Vec<Vec<Complex64>>,
    },
    Bluestein {
        inner: Box<FftPlan>,
        chirp: Vec<Complex64>,
        kernel_spectrum: Vec<Complex64>,
    },
}

fn factorize(mut n: usize) -> Vec<usize> {
    let mut out = Vec::new();
    // a lone factor of 2 goes first so the leaves stay radix 4
    if n > 0 && n.trailing_zeros() % 2 == 1 {
        out.push(2);
        n /= 2;
    }
    while n.is_multiple_of(4) {
        out.push(4);
        n /= 4;
    }
    let mut p = 2;
    while n > 1 {
        while n.is_multiple_of(p) {
            out.push(p);
            n /= p;
        }
        p += if p == 2 { 1 } else { 2 };
        if p * p > n && n > 1 {
            out.push(n);
            break;
        }
    }
    out
}

impl FftPlan {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "fft length must be positive");
        let factors = factorize(n);
        if factors.iter().any(|&p| p > MAX_DIRECT_RADIX) {
            return Self::bluestein(n);
        }
        let mut stages = Vec::with_capacity(factors.len());
        let mut rem = n;
        for p in factors {
            rem /= p;
            stages.push((p, rem));
        }
        if stages.is_empty() {
            stages.push((1, 1));
        }
        let twiddles: Vec<Complex64> =
            (0..n).map(|i| Complex64::from_polar(1.0, -2.0 * PI * i as f64 / n as f64)).collect();
        let mut stride = 1;
        let mut stage_twiddles = Vec::with_capacity(stages.len());
        for &(p, m) in &stages {
            let table = (0..m).flat_map(|k| (1..p).map(move |q| (q * k * stride) % n)).map(|i| twiddles[i]).collect();
            stage_twiddles.push(table);
            stride *= p;
        }
        Self { n, algo: Algo::Radix { stages, twiddles, stage_twiddles } }
    }

    fn bluestein(n: usize) -> Self {
        let m = (2 * n - 1).next_power_of_two();
        let inner = Box::new(FftPlan::new(m));
        let two_n = 2 * n as u128;
        let chirp: Vec<Complex64> = (0..n)
            .map(|k| {
                let k2 = (k as u128 * k as u128) % two_n;
                Complex64::from_polar(1.0, -PI * k2 as f64 / n as f64)
            })
            .collect();
        let mut kernel = vec![Complex64::new(0.0, 0.0); m];
        kernel[0] = chirp[0].conj();
        for k in 1..n {
            kernel[k] = chirp[k].conj();
            kernel[m - k] = chirp[k].conj();
        }
        let mut kernel_spectrum = vec![Complex64::new(0.0, 0.0); m];
        inner.forward(&kernel, &mut kernel_spectrum);
        Self { n, algo: Algo::Bluestein { inner, chirp, kernel_spectrum } }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Unnormalized forward DFT, `X[k] = sum_i x[i] e^{-2 pi j k i / n}`.
    pub fn forward(&self, input: &[Complex64], output: &mut [Complex64]) {
        assert_eq!(input.len(), self.n);
        assert_eq!(output.len(), self.n);
        match &self.algo {
            Algo::Radix { stages, twiddles, stage_twiddles } => {
                if stages[0].0 == 1 {
                    output[0] = input[0];
                } else {
                    let tables = Tables { full: twiddles, stages: stage_twiddles, n: self.n };
                    radix_work(output, input, 0, 1, 0, stages, &tables);
                }
            }
            Algo::Bluestein { inner, chirp, kernel_spectrum } => {
                let m = inner.len();
                let mut a = vec![Complex64::new(0.0, 0.0); m];
                for (k, (x, w)) in input.iter().zip(chirp).enumerate() {
                    a[k] = x * w;
                }
                let mut spec = vec![Complex64::new(0.0, 0.0); m];
                inner.forward(&a, &mut spec);
                for (s, b) in spec.iter_mut().zip(kernel_spectrum) {
                    *s *= b;
                }
                inner.inverse(&spec, &mut a);
                for (k, out) in output.iter_mut().enumerate() {
                    *out = a[k] * chirp[k];
                }
            }
        }
    }

    /// Normalized inverse DFT (divides by `n`).
    pub fn inverse(&self, input: &[Complex64], output: &mut [Complex64]) {
        let conj: Vec<Complex64> = input.iter().map(|c| c.conj()).collect();
        self.forward(&conj, output);
        let scale = 1.0 / self.n as f64;
        for o in output.iter_mut() {
            *o = o.conj() * scale;
        }
    }
}

struct Tables<'a> {
    full: &'a [Complex64],
    stages: &'a [Vec<Complex64>],
    n: usize,
}

fn radix_work(
    out: &mut [Complex64],
    input: &[Complex64],
    offset: usize,
    fstride: usize,
    stage: usize,
    stages: &[(usize, usize)],
    tw: &Tables,
) {
    let (p, m) = stages[stage];
    if m == 1 {
        for (q, o) in out.iter_mut().take(p).enumerate() {
            *o = input[offset + q * fstride];
        }
    } else {
        for q in 0..p {
            radix_work(&mut out[q * m..(q + 1) * m], input, offset + q * fstride, fstride * p, stage + 1, stages, tw);
        }
    }
    let local = &tw.stages[stage];
    match p {
        2 => butterfly2(out, m, local),
        4 => butterfly4(out, m, local),
        _ => butterfly_generic(out, fstride, m, p, tw.full, tw.n),
    }
}

fn butterfly2(out: &mut [Complex64], m: usize, tw: &[Complex64]) {
    let (lo, hi) = out.split_at_mut(m);
    for ((a, b), w) in lo.iter_mut().zip(hi.iter_mut()).zip(tw) {
        let t = *b * w;
        *b = *a - t;
        *a += t;
    }
}

fn butterfly4(out: &mut [Complex64], m: usize, tw: &[Complex64]) {
    for k in 0..m {
        let w = &tw[3 * k..3 * k + 3];
        let s0 = out[k + m] * w[0];
        let s1 = out[k + 2 * m] * w[1];
        let s2 = out[k + 3 * m] * w[2];
        let s5 = out[k] - s1;
        let f0 = out[k] + s1;
        let s3 = s0 + s2;
        let s4 = s0 - s2;
        out[k + 2 * m] = f0 - s3;
        out[k] = f0 + s3;
        out[k + m] = Complex64::new(s5.re + s4.im, s5.im - s4.re);
        out[k + 3 * m] = Complex64::new(s5.re - s4.im, s5.im + s4.re);
    }
}

fn butterfly_generic(out: &mut [Complex64], fstride: usize, m: usize, p: usize, tw: &[Complex64], n: usize) {
    let mut scratch = vec![Complex64::new(0.0, 0.0); p];
    for u in 0..m {
        for (q, s) in scratch.iter_mut().enumerate() {
            *s = out[u + q * m];
        }
        for q1 in 0..p {
            let k = u + q1 * m;
            let mut acc = scratch[0];
            let mut idx = 0;
            for s in &scratch[1..] {
                idx += fstride * k;
                idx %= n;
                acc += s * tw[idx];
            }
            out[k] = acc;
        }
    }
}

thread_local! {
    static PLANS: RefCell<HashMap<usize, Rc<FftPlan>>> = RefCell::new(HashMap::new());
}

/// Cached plan for length `n` (per thread).
pub fn plan(n: usize) -> Rc<FftPlan> {
    PLANS.with(|plans| plans.borrow_mut().entry(n).or_insert_with(|| Rc::new(FftPlan::new(n))).clone())
}

/// Half-spectrum DFT of a real signal: bins `0..ceil(n/2)+1`.
///
/// For odd `n` the last bin is the conjugate of its neighbour and is still
/// returned so that the output length matches [`half_len`].
pub fn rfft(x: &[f64]) -> Result<Vec<Complex64>> {
    if x.is_empty() {
        return Err(FimError::EmptyInput("rfft input"));
    }
    let n = x.len();
    let input: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    plan(n).forward(&input, &mut out);
    let l = half_len(n);
    // n = 1 keeps one real bin; pad the trailing redundant bin with its mirror.
    let spectrum = (0..l).map(|k| if k < n { out[k] } else { out[(n - k % n) % n].conj() });
    Ok(spectrum.collect())
}

/// Inverse of [`rfft`]: rebuilds the conjugate-symmetric spectrum from the
/// `ceil(n/2)+1` supplied bins (bins `k >= L` are `conj(X[n-k])`), inverts it,
/// and drops the imaginary residue.
pub fn irfft(spectrum: &[Complex64], n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(FimError::EmptyInput("irfft length"));
    }
    let l = half_len(n);
    if spectrum.len() != l {
        return Err(FimError::Shape(format!("irfft of length {n} needs {l} bins, got {}", spectrum.len())));
    }
    let full: Vec<Complex64> = (0..n).map(|k| if k < l { spectrum[k] } else { spectrum[n - k].conj() }).collect();
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    plan(n).inverse(&full, &mut out);
    Ok(out.into_iter().map(|c| c.re).collect())
}

/// Energy of a signal computed from its half spectrum: DC and (even-length)
/// Nyquist bins count once, interior bins twice, and the redundant trailing bin
/// of odd lengths is skipped. Equals `sum |x|^2` by Parseval.
pub fn half_spectrum_energy(spectrum: &[Complex64], n: usize) -> f64 {
    let unique = n / 2 + 1;
    let total: f64 = spectrum
        .iter()
        .take(unique)
        .enumerate()
        .map(|(k, c)| {
            let w = if k == 0 || (n.is_multiple_of(2) && k == n / 2) { 1.0 } else { 2.0 };
            w * c.norm_sqr()
        })
        .sum();
    total / n as f64
}

/// Expands half-spectrum gains (length `ceil(n/2)+1`) into the real,
/// symmetric full-length multiplier that `irfft(gains * rfft(x))` applies.
///
/// For odd `n` the two bins sharing a conjugate pair are averaged, which is
/// exactly what taking the real part after reconstruction does.
pub fn symmetric_gains(gains: &[f64], n: usize) -> Vec<f64> {
    let l = half_len(n);
    debug_assert_eq!(gains.len(), l);
    let full: Vec<f64> = (0..n).map(|k| if k < l { gains[k] } else { gains[n - k] }).collect();
    (0..n).map(|k| 0.5 * (full[k] + full[(n - k) % n])).collect()
}

/// Applies a real symmetric spectral multiplier to every column of a row-major
/// `n x d` matrix. Columns are packed two at a time into one complex
/// transform; the multiplier is real and even, so both halves stay separable.
///
/// The resulting linear map is symmetric, so it is its own adjoint.
pub fn filter_columns(x: &[f64], n: usize, d: usize, full_gains: &[f64]) -> Vec<f64> {
    debug_assert_eq!(x.len(), n * d);
    debug_assert_eq!(full_gains.len(), n);
    let plan = plan(n);
    // work column-major so each transform reads contiguous memory
    let mut cols = vec![0.0; n * d];
    for i in 0..n {
        for j in 0..d {
            cols[j * n + i] = x[i * d + j];
        }
    }
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut spec = vec![Complex64::new(0.0, 0.0); n];
    for pair in cols.chunks_mut(2 * n) {
        let (re, im) = pair.split_at_mut(n);
        let has_im = !im.is_empty();
        for i in 0..n {
            buf[i] = Complex64::new(re[i], if has_im { im[i] } else { 0.0 });
        }
        plan.forward(&buf, &mut spec);
        for (s, g) in spec.iter_mut().zip(full_gains) {
            // conjugating here turns the forward plan into an unscaled inverse
            *s = (*s * g).conj();
        }
        plan.forward(&spec, &mut buf);
        let scale = 1.0 / n as f64;
        for i in 0..n {
            re[i] = buf[i].re * scale;
            if has_im {
                im[i] = -buf[i].im * scale;
            }
        }
    }
    let mut out = vec![0.0; n * d];
    for j in 0..d {
        for i in 0..n {
            out[i * d + j] = cols[j * n + i];
        }
    }
    out
}

/// Naive `O(n^2)` DFT, kept as an independent reference.
pub fn dft_naive(x: &[Complex64]) -> Vec<Complex64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(i, v)| {
                    let angle = -2.0 * PI * ((k * i) % n) as f64 / n as f64;
                    v * Complex64::from_polar(1.0, angle)
                })
                .sum()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn close(a: &[Complex64], b: &[Complex64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).norm() < tol)
    }

    #[test]
    fn factorization_covers_n() {
        for n in 1..200usize {
            assert_eq!(factorize(n).iter().product::<usize>().max(1), n, "n={n}");
        }
    }

    #[test]
    fn complex_plan_matches_naive_dft() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in (1..=130).chain([256, 243, 310, 499, 512]) {
            let x: Vec<Complex64> = (0..n).map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
            let mut out = vec![c(0.0, 0.0); n];
            FftPlan::new(n).forward(&x, &mut out);
            assert!(close(&out, &dft_naive(&x), 1e-9 * n as f64), "n={n}");
        }
    }

    #[test]
    fn rfft_examples() {
        let ones = rfft(&[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert!(close(&ones, &[c(4.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)], 1e-12));
        let zeros = rfft(&[0.0; 4]).unwrap();
        assert!(close(&zeros, &[c(0.0, 0.0); 3], 1e-12));
        // naive DFT: X0 = 10, X1 = -2+2j, X2 = -2
        let ramp = rfft(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(close(&ramp, &[c(10.0, 0.0), c(-2.0, 2.0), c(-2.0, 0.0)], 1e-12));
        assert!(matches!(rfft(&[]), Err(FimError::EmptyInput(_))));
    }

    #[test]
    fn irfft_examples() {
        let dc = irfft(&[c(4.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)], 4).unwrap();
        assert!(dc.iter().all(|v| (v - 1.0).abs() < 1e-12));
        let ramp = irfft(&[c(10.0, 0.0), c(-2.0, 2.0), c(-2.0, 0.0)], 4).unwrap();
        for (got, want) in ramp.iter().zip([1.0, 2.0, 3.0, 4.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!(matches!(irfft(&[c(1.0, 0.0); 2], 4), Err(FimError::Shape(_))));
    }

    #[test]
    fn odd_and_tiny_lengths_roundtrip() {
        for n in [1usize, 2, 3, 5, 7, 13, 26, 29, 61] {
            let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin() + 0.1 * i as f64).collect();
            let spec = rfft(&x).unwrap();
            assert_eq!(spec.len(), half_len(n));
            let back = irfft(&spec, n).unwrap();
            for (a, b) in x.iter().zip(&back) {
                assert!((a - b).abs() < 1e-9, "n={n}");
            }
        }
    }

    #[test]
    fn filter_columns_matches_masked_rfft_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (n, d) in [(26usize, 3usize), (7, 2), (16, 5), (1, 1)] {
            let l = half_len(n);
            let gains: Vec<f64> = (0..l).map(|_| rng.gen_range(0.0..1.0)).collect();
            let x: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let fast = filter_columns(&x, n, d, &symmetric_gains(&gains, n));
            for col in 0..d {
                let column: Vec<f64> = (0..n).map(|i| x[i * d + col]).collect();
                let spec: Vec<Complex64> = rfft(&column).unwrap().iter().zip(&gains).map(|(s, g)| s * g).collect();
                let slow = irfft(&spec, n).unwrap();
                for i in 0..n {
                    assert!((fast[i * d + col] - slow[i]).abs() < 1e-10, "n={n} d={d}");
                }
            }
        }
    }
}
