//! Local conductivity from a truncated bivariate Chebyshev series via
//! three-term recurrences and inner products.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cheb2d::{CoeffMatrix, IndexSet};
use crate::hamiltonian::SparseOperator;
use crate::poles::resolvent_apply;
use crate::{invalid, Error, Result, C64};

/// Work performed by one evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounters {
    pub matvecs: u64,
    pub inner_products: u64,
    pub resolvent_solves: u64,
    pub peak_cached_vectors: u64,
}

impl OpCounters {
    /// Accumulate work done after `self`: counts add, peaks take the max.
    pub fn absorb(&mut self, other: &OpCounters) {
        self.matvecs += other.matvecs;
        self.inner_products += other.inner_products;
        self.resolvent_solves += other.resolvent_solves;
        self.peak_cached_vectors = self.peak_cached_vectors.max(other.peak_cached_vectors);
    }
}

/// Tensor `sigma[p][p']` with per-entry and total counters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalConductivityResult {
    pub sigma: [[C64; 2]; 2],
    pub counters: OpCounters,
    pub entry_counters: [[OpCounters; 2]; 2],
    pub truncation_mass_dropped: f64,
}

/// Streams `T_k(H) v0` for `k = 0, 1, ...`.
pub struct ChebSequence<'a> {
    h: &'a SparseOperator,
    prev: Vec<C64>,
    cur: Vec<C64>,
    scratch: Vec<C64>,
    k: usize,
    kmax: usize,
    yielded: usize,
    matvecs: u64,
}

impl<'a> ChebSequence<'a> {
    pub fn new(h: &'a SparseOperator, v0: &[C64], kmax: usize) -> Result<Self> {
        if v0.len() != h.dim() {
            return Err(Error::Dimension { expected: h.dim(), got: v0.len() });
        }
        let zero = vec![C64::new(0.0, 0.0); h.dim()];
        Ok(Self { h, prev: zero.clone(), cur: v0.to_vec(), scratch: zero, k: 0, kmax, yielded: 0, matvecs: 0 })
    }

    /// Current index `k` of `current()`.
    pub fn index(&self) -> usize {
        self.k
    }

    pub fn current(&self) -> &[C64] {
        &self.cur
    }

    pub fn matvecs(&self) -> u64 {
        self.matvecs
    }

    /// Move from `T_k v0` to `T_{k+1} v0` with one matvec.
    pub fn advance(&mut self) {
        self.h.matvec(&self.cur, &mut self.scratch);
        if self.k > 0 {
            for (s, p) in self.scratch.iter_mut().zip(&self.prev) {
                *s = 2.0 * *s - p;
            }
        }
        std::mem::swap(&mut self.prev, &mut self.cur);
        std::mem::swap(&mut self.cur, &mut self.scratch);
        self.k += 1;
        self.matvecs += 1;
    }

    /// Advance until `index() == k`.
    pub fn advance_to(&mut self, k: usize) {
        while self.k < k {
            self.advance();
        }
    }
}

impl Iterator for ChebSequence<'_> {
    type Item = Vec<C64>;

    fn next(&mut self) -> Option<Vec<C64>> {
        if self.yielded > self.kmax {
            return None;
        }
        if self.yielded > 0 {
            self.advance();
        }
        self.yielded += 1;
        Some(self.cur.clone())
    }
}

/// `T_0(H) v0, ..., T_kmax(H) v0`; `k` matvecs are spent after `k + 1` items.
pub fn cheb_apply_sequence<'a>(h: &'a SparseOperator, v0: &[C64], kmax: usize) -> Result<ChebSequence<'a>> {
    ChebSequence::new(h, v0, kmax)
}

/// Working vectors held by one recurrence.
const RECURRENCE_VECTORS: u64 = 3;

/// Evaluation strategy for one entry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Cache both chains, then contract.
    Standard,
    /// Cache the `k1` chain and stream `k2` in ascending order.
    LowMemory,
    /// Stream both chains, keeping only the `k1` band still needed.
    Wedge,
}

fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn unit(n: usize, seed: usize) -> Vec<C64> {
    let mut e = vec![C64::new(0.0, 0.0); n];
    e[seed] = C64::new(1.0, 0.0);
    e
}

fn check_inputs(h: &SparseOperator, ops: &[&SparseOperator], coeffs: &CoeffMatrix, k: &IndexSet, seed: usize) -> Result<()> {
    let n = h.dim();
    for m in ops {
        if m.dim() != n {
            return Err(Error::Dimension { expected: n, got: m.dim() });
        }
    }
    if k.is_empty() {
        return invalid("empty truncation set");
    }
    if seed >= n {
        return invalid(format!("seed {seed} outside dimension {n}"));
    }
    let top = k.k1().last().copied().unwrap_or(0).max(k.k2().last().copied().unwrap_or(0));
    if top > coeffs.kmax() {
        return invalid(format!("truncation set reaches degree {top} beyond coefficient grid {}", coeffs.kmax()));
    }
    Ok(())
}

/// `sum_{(k1,k2) in K} c[k1][k2] <M T_k1(H) a | T_k2(H) b>`, accumulated in
/// ascending `(k2, k1)` order.
pub(crate) fn contract_chains(
    h: &SparseOperator,
    m_left: &SparseOperator,
    a: &[C64],
    b: &[C64],
    coeffs: &CoeffMatrix,
    k: &IndexSet,
    variant: Variant,
) -> Result<(C64, OpCounters)> {
    match variant {
        Variant::Standard => contract_standard(h, m_left, a, b, coeffs, k),
        Variant::LowMemory => contract_lowmem(h, m_left, a, b, coeffs, k),
        Variant::Wedge => contract_wedge(h, m_left, a, b, coeffs, k),
    }
}

fn left_cache(h: &SparseOperator, m_left: &SparseOperator, a: &[C64], k: &IndexSet) -> Result<(Vec<Vec<C64>>, u64)> {
    let k1 = k.k1();
    let mut seq = ChebSequence::new(h, a, *k1.last().unwrap())?;
    let mut cache = Vec::with_capacity(k1.len());
    for &i in k1 {
        seq.advance_to(i);
        cache.push(m_left.apply(seq.current()));
    }
    Ok((cache, seq.matvecs()))
}

fn contract_standard(
    h: &SparseOperator,
    m_left: &SparseOperator,
    a: &[C64],
    b: &[C64],
    coeffs: &CoeffMatrix,
    k: &IndexSet,
) -> Result<(C64, OpCounters)> {
    let (v, mv_left) = left_cache(h, m_left, a, k)?;
    let k2 = k.k2();
    let mut seq = ChebSequence::new(h, b, *k2.last().unwrap())?;
    let mut w = Vec::with_capacity(k2.len());
    for &i in k2 {
        seq.advance_to(i);
        w.push(seq.current().to_vec());
    }
    let mut sigma = C64::new(0.0, 0.0);
    for &(i1, i2) in k.pairs() {
        let a = k.k1().binary_search(&i1).unwrap();
        let b = k2.binary_search(&i2).unwrap();
        sigma += coeffs.get(i1, i2) * dot(&v[a], &w[b]);
    }
    let counters = OpCounters {
        matvecs: mv_left + seq.matvecs(),
        inner_products: k.len() as u64,
        resolvent_solves: 0,
        peak_cached_vectors: (v.len() + w.len()) as u64 + RECURRENCE_VECTORS,
    };
    Ok((sigma, counters))
}

fn contract_lowmem(
    h: &SparseOperator,
    m_left: &SparseOperator,
    a: &[C64],
    b: &[C64],
    coeffs: &CoeffMatrix,
    k: &IndexSet,
) -> Result<(C64, OpCounters)> {
    let (v, mv_left) = left_cache(h, m_left, a, k)?;
    let mut seq = ChebSequence::new(h, b, *k.k2().last().unwrap())?;
    let mut sigma = C64::new(0.0, 0.0);
    for &(i1, i2) in k.pairs() {
        seq.advance_to(i2);
        let a = k.k1().binary_search(&i1).unwrap();
        sigma += coeffs.get(i1, i2) * dot(&v[a], seq.current());
    }
    let counters = OpCounters {
        matvecs: mv_left + seq.matvecs(),
        inner_products: k.len() as u64,
        resolvent_solves: 0,
        peak_cached_vectors: v.len() as u64 + RECURRENCE_VECTORS,
    };
    Ok((sigma, counters))
}

fn contract_wedge(
    h: &SparseOperator,
    m_left: &SparseOperator,
    a: &[C64],
    b: &[C64],
    coeffs: &CoeffMatrix,
    k: &IndexSet,
) -> Result<(C64, OpCounters)> {
    // rows of K grouped by k2
    let pairs = k.pairs();
    let mut rows: Vec<(usize, usize, usize)> = Vec::new(); // (k2, start, end)
    let mut start = 0;
    while start < pairs.len() {
        let k2 = pairs[start].1;
        let len = pairs[start..].iter().take_while(|p| p.1 == k2).count();
        rows.push((k2, start, start + len));
        start += len;
    }
    // last row that reads each k1
    let mut last_use: BTreeMap<usize, usize> = BTreeMap::new();
    for (row, &(_, s, e)) in rows.iter().enumerate() {
        for &(i1, _) in &pairs[s..e] {
            last_use.insert(i1, row);
        }
    }
    let k1_set = k.k1();
    let mut left = ChebSequence::new(h, a, *k1_set.last().unwrap())?;
    let mut right = ChebSequence::new(h, b, *k.k2().last().unwrap())?;
    let mut stored: BTreeMap<usize, Vec<C64>> = BTreeMap::new();
    let mut next_k1 = 0usize; // position in k1_set of the next vector to compute
    let mut peak = 0u64;
    let mut sigma = C64::new(0.0, 0.0);
    for (row, &(k2, s, e)) in rows.iter().enumerate() {
        stored.retain(|i, _| last_use[i] >= row);
        let hi = pairs[e - 1].0;
        while next_k1 < k1_set.len() && k1_set[next_k1] <= hi {
            let i = k1_set[next_k1];
            left.advance_to(i);
            if last_use[&i] >= row {
                stored.insert(i, m_left.apply(left.current()));
                peak = peak.max(stored.len() as u64 + 2 * RECURRENCE_VECTORS);
            }
            next_k1 += 1;
        }
        right.advance_to(k2);
        for &(i1, i2) in &pairs[s..e] {
            sigma += coeffs.get(i1, i2) * dot(&stored[&i1], right.current());
        }
    }
    let counters = OpCounters {
        matvecs: left.matvecs() + right.matvecs(),
        inner_products: k.len() as u64,
        resolvent_solves: 0,
        peak_cached_vectors: peak,
    };
    Ok((sigma, counters))
}

/// One entry `sum c[k1][k2] (T_k1(H) M_p T_k2(H) M_p')_{seed,seed}`.
pub fn local_conductivity_entry(
    h: &SparseOperator,
    m_p: &SparseOperator,
    m_q: &SparseOperator,
    coeffs: &CoeffMatrix,
    k: &IndexSet,
    seed: usize,
    variant: Variant,
) -> Result<(C64, OpCounters)> {
    check_inputs(h, &[m_p, m_q], coeffs, k, seed)?;
    let e = unit(h.dim(), seed);
    contract_chains(h, m_p, &e, &m_q.apply(&e), coeffs, k, variant)
}

/// Full tensor with the chosen variant, entries evaluated independently.
pub fn local_tensor(
    h: &SparseOperator,
    velocity: [&SparseOperator; 2],
    coeffs: &CoeffMatrix,
    k: &IndexSet,
    seed: usize,
    variant: Variant,
) -> Result<LocalConductivityResult> {
    let mut sigma = [[C64::new(0.0, 0.0); 2]; 2];
    let mut entry_counters = [[OpCounters::default(); 2]; 2];
    let mut counters = OpCounters::default();
    for p in 0..2 {
        for q in 0..2 {
            let (s, c) = local_conductivity_entry(h, velocity[p], velocity[q], coeffs, k, seed, variant)?;
            sigma[p][q] = s;
            entry_counters[p][q] = c;
            counters.absorb(&c);
        }
    }
    Ok(LocalConductivityResult { sigma, counters, entry_counters, truncation_mass_dropped: coeffs.dropped_mass(k) })
}

/// Tensor with both chains cached.
pub fn local_conductivity(
    h: &SparseOperator,
    velocity: [&SparseOperator; 2],
    coeffs: &CoeffMatrix,
    k: &IndexSet,
    seed: usize,
) -> Result<LocalConductivityResult> {
    local_tensor(h, velocity, coeffs, k, seed, Variant::Standard)
}

/// Tensor with only the `k1` chain cached.
pub fn local_conductivity_lowmem(
    h: &SparseOperator,
    velocity: [&SparseOperator; 2],
    coeffs: &CoeffMatrix,
    k: &IndexSet,
    seed: usize,
) -> Result<LocalConductivityResult> {
    local_tensor(h, velocity, coeffs, k, seed, Variant::LowMemory)
}

/// One entry of `sum c[k1][k2] (T_k1(H) q(H) M_p T_k2(H) q(H) M_p')_{seed,seed}`
/// with `q(E) = prod_z (E - z)^{-1}`.
///
/// `(H - conj z)^{-1}` is applied to the seed of the `k1` chain and
/// `(H - z)^{-1}` to the seed of the `k2` chain.
#[allow(clippy::too_many_arguments)]
pub fn weighted_local_conductivity(
    h: &SparseOperator,
    m_p: &SparseOperator,
    m_q: &SparseOperator,
    coeffs: &CoeffMatrix,
    k: &IndexSet,
    seed: usize,
    zs: &[C64],
    resolvent_tol: f64,
    variant: Variant,
) -> Result<(C64, OpCounters)> {
    check_inputs(h, &[m_p, m_q], coeffs, k, seed)?;
    if let Some(z) = zs.iter().find(|z| z.im == 0.0) {
        return invalid(format!("weight pole {z} lies on the real axis"));
    }
    let e = unit(h.dim(), seed);
    let mut a = e.clone();
    let mut b = m_q.apply(&e);
    let mut extra = OpCounters::default();
    for &z in zs {
        let (x, mv) = resolvent_apply(h, z.conj(), &a, resolvent_tol)?;
        a = x;
        let (y, mw) = resolvent_apply(h, z, &b, resolvent_tol)?;
        b = y;
        extra.matvecs += mv + mw;
        extra.resolvent_solves += 2;
    }
    let (sigma, mut counters) = contract_chains(h, m_p, &a, &b, coeffs, k, variant)?;
    counters.matvecs += extra.matvecs;
    counters.resolvent_solves += extra.resolvent_solves;
    Ok((sigma, counters))
}
