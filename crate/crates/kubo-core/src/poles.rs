//! Subtraction of Fermi-Dirac poles near the real axis, leaving a remainder
//! with faster Chebyshev decay, plus polynomial resolvents for the pole terms.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::cheb2d::{adaptive_coeffs, CoeffMatrix, IndexSet};
use crate::confunc::{decay_rates, f_relax, f_temp, ConductivityParams, DecayRates};
use crate::hamiltonian::SparseOperator;
use crate::kpm::{local_tensor, weighted_local_conductivity, ChebSequence, LocalConductivityResult, Variant};
use crate::{invalid, Error, Result, C64};

/// Largest admissible `max|q| / min|q|` of a pole group on `[-1, 1]`.
pub const MAX_GROUP_RATIO: f64 = 1e12;

/// Grid size for the group stability ratio.
const RATIO_GRID: usize = 1001;

/// The `2k` poles `E_F + l pi i / beta`, `l` odd with `|l| <= 2k - 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoleSet {
    pub k: usize,
    /// Odd multipliers in ascending order.
    pub ells: Vec<i64>,
    pub poles: Vec<C64>,
}

/// Empty for `beta = 0`, where the occupation has no poles.
pub fn pole_set(k: usize, p: &ConductivityParams) -> PoleSet {
    if p.beta == 0.0 {
        return PoleSet { k: 0, ells: vec![], poles: vec![] };
    }
    let ells: Vec<i64> = (0..2 * k as i64).map(|j| 2 * j - 2 * k as i64 + 1).collect();
    let poles = ells.iter().map(|&l| C64::new(p.e_fermi, l as f64 * PI / p.beta)).collect();
    PoleSet { k, ells, poles }
}

/// `sum_{z in Z_k} (1/beta) / ((E1 - z)(E2 - z))`.
pub fn pole_part(e1: f64, e2: f64, p: &ConductivityParams, ps: &PoleSet) -> C64 {
    let mut s = C64::new(0.0, 0.0);
    for &z in &ps.poles {
        s += 1.0 / ((e1 - z) * (e2 - z));
    }
    s / p.beta
}

/// Analytic remainder `(E1 - E2 + omega + i eta) F - pole_part`.
pub fn remainder_eval(e1: f64, e2: f64, p: &ConductivityParams, k: usize) -> C64 {
    let ps = pole_set(k, p);
    remainder_with(e1, e2, p, &ps)
}

fn remainder_with(e1: f64, e2: f64, p: &ConductivityParams, ps: &PoleSet) -> C64 {
    let t = f_temp(C64::new(e1, 0.0), C64::new(e2, 0.0), p);
    if ps.poles.is_empty() {
        t
    } else {
        t - pole_part(e1, e2, p, ps)
    }
}

/// Number of poles to remove, with unit constants in each cost regime.
pub fn optimal_k(p: &ConductivityParams) -> usize {
    let (b, e) = (p.beta, p.eta);
    if b <= e.powf(-0.5) {
        return if b * e.sqrt() <= 0.5 { 0 } else { 1 };
    }
    if e < 1.0 && b > e.powf(-1.5) {
        (b.powf(2.0 / 3.0) * e.sqrt()).ceil() as usize
    } else {
        (b.sqrt() * e.powf(0.25)).ceil() as usize
    }
}

fn joukowsky_root(z: C64) -> (C64, C64) {
    let one = C64::new(1.0, 0.0);
    let s = (z - one).sqrt() * (z + one).sqrt();
    (s, z - s)
}

/// Degree cap for the polynomial resolvent at `z`.
pub fn resolvent_degree_cap(z: C64, tol: f64) -> usize {
    let base = 20 * (1.0 / z.im.abs()).ceil() as usize;
    base * ((1.0 / tol).ln() / 10.0).ceil().max(1.0) as usize
}

/// Smallest degree whose truncated expansion of `1/(E - z)` keeps
/// `|(E - z) p(E) - 1| <= tol` on `[-1, 1]`.
pub fn resolvent_degree(z: C64, tol: f64) -> Result<usize> {
    if z.im == 0.0 {
        return invalid(format!("resolvent point {z} on the real axis"));
    }
    if !(tol > 0.0) {
        return invalid(format!("resolvent tolerance must be positive, got {tol}"));
    }
    let (s, rho) = joukowsky_root(z);
    let r = rho.norm();
    let scale = (1.0 + z.norm()) * 2.0 / (s.norm() * (1.0 - r));
    let cap = resolvent_degree_cap(z, tol);
    let mut d = 0;
    let mut tail = scale * r;
    while tail > tol {
        d += 1;
        tail *= r;
        if d > cap {
            return Err(Error::Numerical(format!("resolvent at {z} needs degree above {cap} for tol {tol}")));
        }
    }
    Ok(d)
}

/// `(H - z)^{-1} v` by a Chebyshev polynomial of `1/(E - z)`; returns the
/// vector and the matvecs spent, including the residual check.
pub fn resolvent_apply(h: &SparseOperator, z: C64, v: &[C64], tol: f64) -> Result<(Vec<C64>, u64)> {
    let d = resolvent_degree(z, tol)?;
    let (s, rho) = joukowsky_root(z);
    let mut seq = ChebSequence::new(h, v, d)?;
    let mut x: Vec<C64> = v.iter().map(|&vi| -vi / s).collect();
    let mut coef = -1.0 / s;
    for _ in 1..=d {
        seq.advance();
        coef *= rho;
        let c = 2.0 * coef;
        for (xi, ti) in x.iter_mut().zip(seq.current()) {
            *xi += c * ti;
        }
    }
    let hx = h.apply(&x);
    let vnorm = v.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    let rnorm = hx.iter().zip(&x).zip(v).map(|((a, b), c)| (a - z * b - c).norm_sqr()).sum::<f64>().sqrt();
    if rnorm > 10.0 * tol * vnorm {
        return Err(Error::Numerical(format!("resolvent residual {:.3e} above {:.3e}", rnorm / vnorm, 10.0 * tol)));
    }
    Ok((x, seq.matvecs() + 1))
}

/// A set of poles sharing one weight `q(E) = prod (E - z)^{-1}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoleGroup {
    pub poles: Vec<C64>,
    pub stability_ratio: f64,
}

/// `max|q| / min|q|` of `q(E) = prod (E - z)^{-1}` on a 1001-point grid.
pub fn stability_ratio(poles: &[C64]) -> f64 {
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for i in 0..RATIO_GRID {
        let e = -1.0 + 2.0 * i as f64 / (RATIO_GRID - 1) as f64;
        let q = poles.iter().map(|&z| 1.0 / (e - z).norm()).product::<f64>();
        lo = lo.min(q);
        hi = hi.max(q);
    }
    hi / lo
}

/// Conjugate pairs in ascending `|l|`, merged while the group stays within
/// `max_group` poles and the stability ratio bound. `max_group = 1` gives
/// singletons in ascending `l`.
pub fn group_poles(ps: &PoleSet, max_group: usize) -> Result<Vec<PoleGroup>> {
    if max_group == 0 {
        return invalid("max_group must be at least 1");
    }
    let single = |z: C64| PoleGroup { poles: vec![z], stability_ratio: stability_ratio(&[z]) };
    if max_group == 1 {
        return Ok(ps.poles.iter().map(|&z| single(z)).collect());
    }
    let mut groups = Vec::new();
    let mut current: Vec<C64> = Vec::new();
    for j in 0..ps.k {
        // l = -(2j+1) sits at index k-1-j, l = 2j+1 at k+j
        let pair = [ps.poles[ps.k - 1 - j], ps.poles[ps.k + j]];
        let mut trial = current.clone();
        trial.extend_from_slice(&pair);
        if trial.len() <= max_group && stability_ratio(&trial) <= MAX_GROUP_RATIO {
            current = trial;
            continue;
        }
        if !current.is_empty() {
            groups.push(PoleGroup { stability_ratio: stability_ratio(&current), poles: std::mem::take(&mut current) });
        }
        if stability_ratio(&pair) <= MAX_GROUP_RATIO {
            current = pair.to_vec();
        } else {
            groups.extend(pair.iter().map(|&z| single(z)));
        }
    }
    if !current.is_empty() {
        groups.push(PoleGroup { stability_ratio: stability_ratio(&current), poles: current });
    }
    Ok(groups)
}

/// Accuracy targets; `series_eps` is split evenly between the remainder
/// series and the pole-term series when poles are present.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoleTolerances {
    pub series_eps: f64,
    pub resolvent_tol: f64,
}

impl Default for PoleTolerances {
    fn default() -> Self {
        Self { series_eps: 1e-3, resolvent_tol: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolePlan {
    pub pole_set: PoleSet,
    pub group_size: usize,
    pub groups: Vec<PoleGroup>,
    pub remainder_rates: DecayRates,
    pub tolerances: PoleTolerances,
}

impl PolePlan {
    pub fn new(p: &ConductivityParams, k: usize, group_size: usize, tolerances: PoleTolerances) -> Result<Self> {
        if !(tolerances.series_eps > 0.0) || !(tolerances.resolvent_tol > 0.0) {
            return invalid("pole plan tolerances must be positive");
        }
        let pole_set = pole_set(k, p);
        let groups = group_poles(&pole_set, group_size)?;
        if let Some(g) = groups.iter().find(|g| g.stability_ratio > MAX_GROUP_RATIO) {
            return invalid(format!("pole group stability ratio {:.3e} exceeds {MAX_GROUP_RATIO:e}", g.stability_ratio));
        }
        let m = (2 * pole_set.k + 1) as u32;
        Ok(Self { remainder_rates: decay_rates(p, m), pole_set, group_size, groups, tolerances })
    }
}

/// `sum_{z in G} prod_{z' != z} (E1 - z')(E2 - z')`.
fn group_numerator(e1: f64, e2: f64, g: &[C64]) -> C64 {
    let mut s = C64::new(0.0, 0.0);
    for (i, _) in g.iter().enumerate() {
        let mut prod = C64::new(1.0, 0.0);
        for (j, &w) in g.iter().enumerate() {
            if j != i {
                prod *= (e1 - w) * (e2 - w);
            }
        }
        s += prod;
    }
    s
}

/// One pole group with its truncated coefficient series.
#[derive(Clone, Debug)]
pub struct GroupSeries {
    pub group: PoleGroup,
    pub coeffs: CoeffMatrix,
    pub set: IndexSet,
}

/// Precomputed coefficient series for a plan; reusable across
/// configurations.
#[derive(Clone, Debug)]
pub struct PoleExpansion {
    pub plan: PolePlan,
    pub remainder_coeffs: CoeffMatrix,
    pub remainder_set: IndexSet,
    pub groups: Vec<GroupSeries>,
    pub warnings: Vec<String>,
}

impl PoleExpansion {
    pub fn build(p: &ConductivityParams, plan: &PolePlan) -> Result<Self> {
        let has_poles = !plan.groups.is_empty();
        let eps = if has_poles { plan.tolerances.series_eps / 2.0 } else { plan.tolerances.series_eps };
        let ps = plan.pole_set.clone();
        let (remainder_coeffs, remainder_set) =
            adaptive_coeffs(|a, b| remainder_with(a, b, p, &ps) * f_relax(a, b, p), eps, 64)?;
        let mut groups = Vec::new();
        let mut shared: Option<(CoeffMatrix, IndexSet)> = None;
        for g in &plan.groups {
            let (coeffs, set) = if g.poles.len() == 1 {
                if shared.is_none() {
                    shared = Some(adaptive_coeffs(|a, b| f_relax(a, b, p) / p.beta, eps, 32)?);
                }
                shared.clone().unwrap()
            } else {
                let zs = g.poles.clone();
                adaptive_coeffs(|a, b| group_numerator(a, b, &zs) * f_relax(a, b, p) / p.beta, eps, 32)?
            };
            groups.push(GroupSeries { group: g.clone(), coeffs, set });
        }
        let mut warnings = Vec::new();
        let budget = p.eta.powf(-1.5);
        for g in &plan.groups {
            for &z in &g.poles {
                let d = resolvent_degree(z, plan.tolerances.resolvent_tol)?;
                if d as f64 > budget {
                    warnings.push(format!(
                        "resolvent degree {d} at pole {z} exceeds the eta^(-3/2) = {budget:.1} inner-product budget"
                    ));
                }
            }
        }
        Ok(Self { plan: plan.clone(), remainder_coeffs, remainder_set, groups, warnings })
    }

    /// Kept coefficients over the remainder and every pole term.
    pub fn kept_coefficients(&self) -> usize {
        self.remainder_set.len() + self.groups.iter().map(|g| g.set.len()).sum::<usize>()
    }

    /// Largest `(k1 + k2 + 2) / 2` over the remainder and group sets.
    /// Resolvent factors reach further, but their tails decay like
    /// `|rho|^d` and are below the resolvent tolerance.
    pub fn recommended_r(&self) -> u32 {
        self.groups.iter().map(|g| g.set.recommended_r()).fold(self.remainder_set.recommended_r(), u32::max)
    }

    pub fn dropped_mass(&self) -> f64 {
        self.remainder_coeffs.dropped_mass(&self.remainder_set)
            + self.groups.iter().map(|g| g.coeffs.dropped_mass(&g.set)).sum::<f64>()
    }

    /// Remainder series plus every pole term, summed in ascending `l`.
    pub fn evaluate(
        &self,
        h: &SparseOperator,
        velocity: [&SparseOperator; 2],
        seed: usize,
        variant: Variant,
    ) -> Result<LocalConductivityResult> {
        let mut res = local_tensor(h, velocity, &self.remainder_coeffs, &self.remainder_set, seed, variant)?;
        for g in &self.groups {
            for p in 0..2 {
                for q in 0..2 {
                    let (s, c) = weighted_local_conductivity(
                        h,
                        velocity[p],
                        velocity[q],
                        &g.coeffs,
                        &g.set,
                        seed,
                        &g.group.poles,
                        self.plan.tolerances.resolvent_tol,
                        variant,
                    )?;
                    res.sigma[p][q] += s;
                    res.entry_counters[p][q].absorb(&c);
                    res.counters.absorb(&c);
                }
            }
        }
        res.truncation_mass_dropped = self.dropped_mass();
        Ok(res)
    }
}

/// Build the series for `plan` and evaluate at one configuration.
pub fn local_conductivity_via_poles(
    h: &SparseOperator,
    velocity: [&SparseOperator; 2],
    p: &ConductivityParams,
    plan: &PolePlan,
    seed: usize,
) -> Result<LocalConductivityResult> {
    PoleExpansion::build(p, plan)?.evaluate(h, velocity, seed, Variant::Standard)
}
