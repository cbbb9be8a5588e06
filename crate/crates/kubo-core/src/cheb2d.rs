//! Bivariate Chebyshev coefficients, truncation sets and series evaluation.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::confunc::{f_zeta_real, ConductivityParams, DecayRates};
use crate::{invalid, Error, Result, C64};

/// Dense `(kmax+1) x (kmax+1)` grid of coefficients `c[k1][k2]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoeffMatrix {
    kmax: usize,
    data: Vec<C64>,
}

impl CoeffMatrix {
    pub fn from_fn(kmax: usize, f: impl Fn(usize, usize) -> C64) -> Self {
        let m = kmax + 1;
        let data = (0..m * m).map(|i| f(i / m, i % m)).collect();
        Self { kmax, data }
    }

    pub fn kmax(&self) -> usize {
        self.kmax
    }

    pub fn get(&self, k1: usize, k2: usize) -> C64 {
        self.data[k1 * (self.kmax + 1) + k2]
    }

    /// Entries as `(k1, k2, c)` in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        let m = self.kmax + 1;
        self.data.iter().enumerate().map(move |(i, &c)| (i / m, i % m, c))
    }

    pub fn scaled(&self, s: C64) -> Self {
        Self { kmax: self.kmax, data: self.data.iter().map(|&c| c * s).collect() }
    }

    /// Number of entries with `|c| / |c00|` strictly above `threshold`.
    pub fn count_above(&self, threshold: f64) -> usize {
        let c00 = self.get(0, 0).norm();
        self.data.iter().filter(|c| c.norm() > threshold * c00).count()
    }

    /// `sum |c|` over entries outside `k`.
    pub fn dropped_mass(&self, k: &IndexSet) -> f64 {
        let total: f64 = self.data.iter().map(|c| c.norm()).sum();
        let kept: f64 = k.pairs().iter().map(|&(a, b)| self.get(a, b).norm()).sum();
        (total - kept).max(0.0)
    }
}

/// Chebyshev-Lobatto points `cos(pi j / n)`, `j = 0..=n`.
pub fn lobatto_nodes(n: usize) -> Vec<f64> {
    (0..=n).map(|j| (PI * j as f64 / n as f64).cos()).collect()
}

/// DCT-I matrix with the interpolation weights folded in: row `k` maps
/// samples to the coefficient of `T_k`.
fn dct1_matrix(n: usize) -> Vec<f64> {
    let m = n + 1;
    let mut w = vec![0.0; m * m];
    for k in 0..m {
        let hk = if k == 0 || k == n { 0.5 } else { 1.0 };
        for j in 0..m {
            let hj = if j == 0 || j == n { 0.5 } else { 1.0 };
            let phase = (k * j) % (2 * n);
            w[k * m + j] = 2.0 / n as f64 * hk * hj * (PI * phase as f64 / n as f64).cos();
        }
    }
    w
}

/// Coefficients of the tensor interpolant through `samples[j1][j2] =
/// f(x_j1, x_j2)` on the Lobatto grid of size `(n+1)^2`, stored row-major.
pub fn transform2d(samples: &[C64], n: usize) -> Result<CoeffMatrix> {
    if n < 1 {
        return invalid("transform size must be at least 1");
    }
    let m = n + 1;
    if samples.len() != m * m {
        return Err(Error::Dimension { expected: m * m, got: samples.len() });
    }
    if samples.iter().any(|s| !s.re.is_finite() || !s.im.is_finite()) {
        return Err(Error::Numerical("non-finite sample in Chebyshev transform".into()));
    }
    let w = dct1_matrix(n);
    // first axis: t[k1][j2] = sum_j1 w[k1][j1] s[j1][j2]
    let mut t = vec![C64::new(0.0, 0.0); m * m];
    t.par_chunks_mut(m).enumerate().for_each(|(k1, row)| {
        for j1 in 0..m {
            let wk = w[k1 * m + j1];
            let src = &samples[j1 * m..(j1 + 1) * m];
            for (r, s) in row.iter_mut().zip(src) {
                *r += wk * s;
            }
        }
    });
    // second axis: c[k1][k2] = sum_j2 t[k1][j2] w[k2][j2]
    let mut data = vec![C64::new(0.0, 0.0); m * m];
    data.par_chunks_mut(m).enumerate().for_each(|(k1, row)| {
        let src = &t[k1 * m..(k1 + 1) * m];
        for (k2, out) in row.iter_mut().enumerate() {
            let wr = &w[k2 * m..(k2 + 1) * m];
            let mut acc = C64::new(0.0, 0.0);
            for (s, &wk) in src.iter().zip(wr) {
                acc += s * wk;
            }
            *out = acc;
        }
    });
    Ok(CoeffMatrix { kmax: n, data })
}

/// Interpolation coefficients of `f` of degree `kmax` in each variable.
pub fn coeffs_of(f: impl Fn(f64, f64) -> C64 + Sync, kmax: usize) -> Result<CoeffMatrix> {
    let x = lobatto_nodes(kmax);
    let m = kmax + 1;
    let mut samples = vec![C64::new(0.0, 0.0); m * m];
    samples.par_chunks_mut(m).enumerate().for_each(|(j1, row)| {
        for (j2, s) in row.iter_mut().enumerate() {
            *s = f(x[j1], x[j2]);
        }
    });
    transform2d(&samples, kmax)
}

/// Coefficients of the conductivity function.
#[allow(non_snake_case)]
pub fn coeffs_of_F(p: &ConductivityParams, kmax: usize) -> Result<CoeffMatrix> {
    coeffs_of(|a, b| f_zeta_real(a, b, p), kmax)
}

/// Set of kept index pairs, ordered by ascending `(k2, k1)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexSet {
    pairs: Vec<(usize, usize)>,
    k1: Vec<usize>,
    k2: Vec<usize>,
}

impl IndexSet {
    pub fn new(mut pairs: Vec<(usize, usize)>) -> Self {
        pairs.sort_by_key(|&(a, b)| (b, a));
        pairs.dedup();
        let mut k1: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let mut k2: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        k1.sort_unstable();
        k1.dedup();
        k2.sort_unstable();
        k2.dedup();
        Self { pairs, k1, k2 }
    }

    /// All pairs with both indices at most `kmax`.
    pub fn square(kmax: usize) -> Self {
        Self::new((0..=kmax).flat_map(|a| (0..=kmax).map(move |b| (a, b))).collect())
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn k1(&self) -> &[usize] {
        &self.k1
    }

    pub fn k2(&self) -> &[usize] {
        &self.k2
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn contains(&self, k1: usize, k2: usize) -> bool {
        self.pairs.binary_search_by_key(&(k2, k1), |&(a, b)| (b, a)).is_ok()
    }

    pub fn max_sum(&self) -> usize {
        self.pairs.iter().map(|&(a, b)| a + b).max().unwrap_or(0)
    }

    /// Smallest parallelogram half-width at which Chebyshev recurrences
    /// seeded at the origin never see the cut-out boundary.
    pub fn recommended_r(&self) -> u32 {
        (self.max_sum() + 2).div_ceil(2) as u32
    }

    /// Largest number of `k1` sharing one `k2`.
    pub fn band_width(&self) -> usize {
        let mut best = 0;
        let mut i = 0;
        while i < self.pairs.len() {
            let k2 = self.pairs[i].1;
            let j = self.pairs[i..].iter().take_while(|p| p.1 == k2).count();
            best = best.max(j);
            i += j;
        }
        best
    }
}

/// `exp(-alpha_diag (k1+k2) - alpha_anti |k1-k2|)`.
pub fn coeff_bound(rates: &DecayRates, k1: usize, k2: usize) -> f64 {
    let s = (k1 + k2) as f64;
    let d = k1.abs_diff(k2) as f64;
    (-rates.alpha_diag * s - rates.alpha_anti * d).exp()
}

/// Index pairs whose predicted coefficient bound is at least `tau`.
pub fn truncation_set_rate(rates: &DecayRates, tau: f64) -> Result<IndexSet> {
    if !(tau > 0.0) {
        return invalid(format!("tau must be positive, got {tau}"));
    }
    if tau >= 1.0 {
        return Ok(IndexSet::new(vec![(0, 0)]));
    }
    if !(rates.alpha_diag > 0.0) {
        return invalid("rate truncation needs alpha_diag > 0");
    }
    let smax = (-tau.ln() / rates.alpha_diag).floor() as usize;
    let mut pairs = Vec::new();
    for s in 0..=smax {
        for k1 in 0..=s {
            let k2 = s - k1;
            if coeff_bound(rates, k1, k2) >= tau {
                pairs.push((k1, k2));
            }
        }
    }
    Ok(IndexSet::new(pairs))
}

/// Drop coefficients in ascending `|c|` (ties by `(k1+k2, k1)`) while the
/// dropped sum stays within `eps`; keep the rest.
pub fn truncation_set_greedy(coeffs: &CoeffMatrix, eps: f64) -> Result<IndexSet> {
    if !(eps >= 0.0) {
        return invalid(format!("eps must be >= 0, got {eps}"));
    }
    let mut entries: Vec<(f64, usize, usize)> = coeffs.iter().map(|(a, b, c)| (c.norm(), a, b)).collect();
    entries.sort_by(|x, y| x.0.total_cmp(&y.0).then((x.1 + x.2).cmp(&(y.1 + y.2))).then(x.1.cmp(&y.1)));
    let mut dropped = 0.0;
    let mut first_kept = entries.len();
    for (i, e) in entries.iter().enumerate() {
        if dropped + e.0 <= eps {
            dropped += e.0;
        } else {
            first_kept = i;
            break;
        }
    }
    Ok(IndexSet::new(entries[first_kept..].iter().map(|e| (e.1, e.2)).collect()))
}

/// Largest coefficient grid tried by [`adaptive_coeffs`].
pub const ADAPTIVE_KMAX_CAP: usize = 2048;

/// Coefficients of `f` and their greedy set at `eps`, doubling the grid from
/// `kstart` until the set stays in the lower three quarters of the grid.
pub fn adaptive_coeffs(
    f: impl Fn(f64, f64) -> C64 + Sync,
    eps: f64,
    kstart: usize,
) -> Result<(CoeffMatrix, IndexSet)> {
    let mut kmax = kstart.max(8);
    loop {
        let c = coeffs_of(&f, kmax)?;
        let k = truncation_set_greedy(&c, eps)?;
        let top = k.k1().last().copied().unwrap_or(0).max(k.k2().last().copied().unwrap_or(0));
        if 4 * top <= 3 * kmax {
            return Ok((c, k));
        }
        if kmax >= ADAPTIVE_KMAX_CAP {
            return Err(Error::Numerical(format!(
                "coefficients not resolved at eps = {eps} within degree {ADAPTIVE_KMAX_CAP}"
            )));
        }
        kmax = (2 * kmax).min(ADAPTIVE_KMAX_CAP);
    }
}

/// Threshold `tau` for a target accuracy `eps`, inverting `tau |log tau|`.
/// With `alpha_anti = 0` the diagonal rate stands in for it.
pub fn tau_for_eps(rates: &DecayRates, eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return invalid(format!("eps must be positive, got {eps}"));
    }
    let anti = if rates.alpha_anti > 0.0 { rates.alpha_anti } else { rates.alpha_diag };
    let x = rates.alpha_diag * anti * eps;
    if !(x > 0.0) {
        return invalid("decay rates must be positive");
    }
    Ok(x / x.ln().abs().max(1.0))
}

/// `sum_n a_n T_n(x)` by Clenshaw.
fn clenshaw(a: &[C64], x: f64) -> C64 {
    let mut b1 = C64::new(0.0, 0.0);
    let mut b2 = C64::new(0.0, 0.0);
    for k in (1..a.len()).rev() {
        let b0 = a[k] + 2.0 * x * b1 - b2;
        b2 = b1;
        b1 = b0;
    }
    match a.first() {
        Some(&a0) => a0 + x * b1 - b2,
        None => C64::new(0.0, 0.0),
    }
}

/// Truncated series `sum_{(k1,k2) in K} c T_k1(e1) T_k2(e2)`.
pub fn eval_series(coeffs: &CoeffMatrix, k: &IndexSet, e1: f64, e2: f64) -> C64 {
    let Some(&top1) = k.k1().last() else {
        return C64::new(0.0, 0.0);
    };
    let top2 = *k.k2().last().unwrap();
    let mut rows = vec![vec![C64::new(0.0, 0.0); top2 + 1]; top1 + 1];
    for &(a, b) in k.pairs() {
        rows[a][b] = coeffs.get(a, b);
    }
    let outer: Vec<C64> = rows.iter().map(|r| clenshaw(r, e2)).collect();
    clenshaw(&outer, e1)
}
