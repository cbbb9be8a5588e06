//! Configuration-space integration of local conductivities with the periodic
//! trapezoidal rule.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cheb2d::{adaptive_coeffs, coeffs_of_F, truncation_set_greedy, CoeffMatrix, IndexSet};
use crate::confunc::{f_zeta_real, ConductivityParams};
use crate::geometry::{BilayerGeometry, BravaisLattice, ConfigShift, CutOut, Layer, Vec2};
use crate::hamiltonian::{environment_window, HamiltonianModel, LocalSystem, SpectralWindow};
use crate::kpm::{local_tensor, OpCounters, Variant};
use crate::oracle::{dense_eig, local_tensor_exact};
use crate::poles::{optimal_k, PoleExpansion, PolePlan, PoleTolerances};
use crate::{invalid, Error, Result, C64};

/// Uniform `q x q` grid over one unit cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadGrid {
    pub q: usize,
    pub nodes: Vec<Vec2>,
    pub weight: f64,
}

/// Nodes `A (i/q, j/q)`, `i, j < q`, each with weight `|det A| / q^2`.
pub fn trapezoid_grid(q: usize, lat: &BravaisLattice) -> Result<QuadGrid> {
    if q < 1 {
        return invalid("quadrature needs q >= 1");
    }
    let mut nodes = Vec::with_capacity(q * q);
    for i in 0..q {
        for j in 0..q {
            nodes.push(lat.to_cartesian([i as f64 / q as f64, j as f64 / q as f64]));
        }
    }
    Ok(QuadGrid { q, nodes, weight: lat.cell_area() / (q * q) as f64 })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Kpm,
    Poles,
    Exact,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kpm" => Ok(Method::Kpm),
            "poles" => Ok(Method::Poles),
            "exact" => Ok(Method::Exact),
            _ => invalid(format!("unknown method '{s}'")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegralSettings {
    pub method: Method,
    /// Parallelogram half-width of the cut-out.
    pub r: u32,
    pub q: usize,
    /// Series accuracy for greedy truncation.
    pub eps: f64,
    /// Fixed coefficient grid; adaptive when `None`.
    pub kmax: Option<usize>,
    /// Removed pole pairs; `optimal_k` when `None`.
    pub k_poles: Option<usize>,
    pub group_size: usize,
    pub resolvent_tol: f64,
    pub variant: Variant,
    /// Worker threads; rayon's default when `None`.
    pub threads: Option<usize>,
}

impl Default for IntegralSettings {
    fn default() -> Self {
        Self {
            method: Method::Kpm,
            r: 10,
            q: 4,
            eps: 1e-3,
            kmax: None,
            k_poles: None,
            group_size: 1,
            resolvent_tol: 1e-8,
            variant: Variant::Standard,
            threads: None,
        }
    }
}

/// Local conductivity at one configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub layer: Layer,
    pub b: Vec2,
    pub weight: f64,
    pub sigma: [[C64; 2]; 2],
    pub counters: OpCounters,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConductivityTensor {
    pub sigma: [[C64; 2]; 2],
    /// `1 / (|Gamma_1| + |Gamma_2|)` for one orbital per site.
    pub nu: f64,
    pub counters: OpCounters,
    pub nodes: Vec<NodeRecord>,
}

enum Series {
    Kpm { coeffs: CoeffMatrix, set: IndexSet },
    Poles(Box<PoleExpansion>),
    Exact,
}

/// Everything shared by the nodes of one integration: model window and
/// coefficient series.
pub struct LocalEvaluator {
    params: ConductivityParams,
    model: HamiltonianModel,
    window: SpectralWindow,
    cut: CutOut,
    variant: Variant,
    series: Series,
}

impl LocalEvaluator {
    pub fn new(
        geom: &BilayerGeometry,
        model: &HamiltonianModel,
        params: &ConductivityParams,
        settings: &IntegralSettings,
    ) -> Result<Self> {
        if settings.r < 1 {
            return invalid("cut-out half-width r must be >= 1");
        }
        if !(settings.eps > 0.0) {
            return invalid(format!("eps must be positive, got {}", settings.eps));
        }
        let series = match settings.method {
            Method::Kpm => {
                let (coeffs, set) = match settings.kmax {
                    Some(kmax) => {
                        let c = coeffs_of_F(params, kmax)?;
                        let k = truncation_set_greedy(&c, settings.eps)?;
                        (c, k)
                    }
                    None => adaptive_coeffs(|a, b| f_zeta_real(a, b, params), settings.eps, 64)?,
                };
                Series::Kpm { coeffs, set }
            }
            Method::Poles => {
                let k = settings.k_poles.unwrap_or_else(|| optimal_k(params));
                let tol = PoleTolerances { series_eps: settings.eps, resolvent_tol: settings.resolvent_tol };
                let plan = PolePlan::new(params, k, settings.group_size, tol)?;
                Series::Poles(Box::new(PoleExpansion::build(params, &plan)?))
            }
            Method::Exact => Series::Exact,
        };
        Ok(Self {
            params: *params,
            model: *model,
            window: environment_window(geom, model),
            cut: CutOut::Parallelogram(settings.r),
            variant: settings.variant,
            series,
        })
    }

    /// Change the cut-out half-width without rebuilding the series.
    pub fn set_r(&mut self, r: u32) -> Result<()> {
        if r < 1 {
            return invalid("cut-out half-width r must be >= 1");
        }
        self.cut = CutOut::Parallelogram(r);
        Ok(())
    }

    pub fn params(&self) -> &ConductivityParams {
        &self.params
    }

    /// Truncation set of the plain Chebyshev path.
    pub fn index_set(&self) -> Option<&IndexSet> {
        match &self.series {
            Series::Kpm { set, .. } => Some(set),
            _ => None,
        }
    }

    pub fn pole_expansion(&self) -> Option<&PoleExpansion> {
        match &self.series {
            Series::Poles(p) => Some(p),
            _ => None,
        }
    }

    /// Smallest cut-out half-width at which the evaluation no longer
    /// depends on `r`; `None` for the dense path.
    pub fn recommended_r(&self) -> Option<u32> {
        match &self.series {
            Series::Kpm { set, .. } => Some(set.recommended_r()),
            Series::Poles(p) => Some(p.recommended_r()),
            Series::Exact => None,
        }
    }

    pub fn dropped_mass(&self) -> f64 {
        match &self.series {
            Series::Kpm { coeffs, set } => coeffs.dropped_mass(set),
            Series::Poles(p) => p.dropped_mass(),
            Series::Exact => 0.0,
        }
    }

    pub fn system(&self, geom: &BilayerGeometry, shift: ConfigShift) -> Result<LocalSystem> {
        LocalSystem::build(geom, &self.model, self.cut, shift, &self.window)
    }

    /// Local tensor and counters at one shift.
    pub fn evaluate(&self, geom: &BilayerGeometry, shift: ConfigShift) -> Result<([[C64; 2]; 2], OpCounters)> {
        let s = self.system(geom, shift)?;
        let v = [&s.velocity[0], &s.velocity[1]];
        match &self.series {
            Series::Kpm { coeffs, set } => {
                let r = local_tensor(&s.h, v, coeffs, set, s.seed, self.variant)?;
                Ok((r.sigma, r.counters))
            }
            Series::Poles(p) => {
                let r = p.evaluate(&s.h, v, s.seed, self.variant)?;
                Ok((r.sigma, r.counters))
            }
            Series::Exact => {
                let eig = dense_eig(&s.h)?;
                Ok((local_tensor_exact(&eig, v, &self.params, s.seed)?, OpCounters::default()))
            }
        }
    }
}

/// `nu (sum_{b in Gamma_2 grid} w sigma_1[b] + sum_{b in Gamma_1 grid} w sigma_2[b])`.
///
/// Nodes run in parallel; the reduction follows node order, so results do
/// not depend on the thread count.
pub fn conductivity_integral(
    geom: &BilayerGeometry,
    model: &HamiltonianModel,
    params: &ConductivityParams,
    settings: &IntegralSettings,
) -> Result<ConductivityTensor> {
    let eval = LocalEvaluator::new(geom, model, params, settings)?;
    integrate_with(geom, &eval, settings.q, settings.threads)
}

/// Integration with a prepared evaluator.
pub fn integrate_with(
    geom: &BilayerGeometry,
    eval: &LocalEvaluator,
    q: usize,
    threads: Option<usize>,
) -> Result<ConductivityTensor> {
    let mut jobs = Vec::new();
    for layer in [Layer::First, Layer::Second] {
        let grid = trapezoid_grid(q, geom.lattice(layer.other()))?;
        for b in grid.nodes {
            jobs.push((layer, b, grid.weight));
        }
    }
    let run = || -> Vec<Result<NodeRecord>> {
        jobs.par_iter()
            .map(|&(layer, b, weight)| {
                let t = Instant::now();
                let (sigma, counters) = eval.evaluate(geom, ConfigShift { b, focal_layer: layer })?;
                Ok(NodeRecord { layer, b, weight, sigma, counters, wall_ms: t.elapsed().as_secs_f64() * 1e3 })
            })
            .collect()
    };
    let results = match threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    };
    let nodes = results.into_iter().collect::<Result<Vec<_>>>()?;
    let nu = 1.0 / (geom.lattice1.cell_area() + geom.lattice2.cell_area());
    let mut sigma = [[C64::new(0.0, 0.0); 2]; 2];
    let mut counters = OpCounters::default();
    for n in &nodes {
        for p in 0..2 {
            for q in 0..2 {
                sigma[p][q] += n.weight * n.sigma[p][q];
            }
        }
        counters.absorb(&n.counters);
    }
    for row in sigma.iter_mut() {
        for v in row.iter_mut() {
            *v *= nu;
        }
    }
    Ok(ConductivityTensor { sigma, nu, counters, nodes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::make_twisted_pair;
    use std::f64::consts::PI;

    fn geom() -> BilayerGeometry {
        make_twisted_pair(BravaisLattice::hexagonal(), 2.5, 1.0).unwrap()
    }

    #[test]
    fn grid_basics() {
        let lat = BravaisLattice::hexagonal();
        let g1 = trapezoid_grid(1, &lat).unwrap();
        assert_eq!(g1.nodes, vec![[0.0, 0.0]]);
        assert_eq!(g1.weight, lat.cell_area());
        assert!(trapezoid_grid(0, &lat).is_err());
        for q in 1..7 {
            let g = trapezoid_grid(q, &lat).unwrap();
            assert_eq!(g.nodes.len(), q * q);
            assert!((g.weight * (q * q) as f64 - lat.cell_area()).abs() < 1e-15);
            // exp(2 pi i m x1) integrates to zero once q > |m|
            for m in 1..q as i32 {
                let s: C64 = g
                    .nodes
                    .iter()
                    .map(|&b| {
                        let x = lat.to_fractional(b)[0];
                        C64::from_polar(g.weight, 2.0 * PI * m as f64 * x)
                    })
                    .sum();
                assert!(s.norm() < 1e-12);
            }
        }
    }

    fn settings(method: Method, r: u32, q: usize) -> IntegralSettings {
        IntegralSettings { method, r, q, eps: 1e-8, ..Default::default() }
    }

    #[test]
    fn one_node_rule() {
        let g = geom();
        let m = HamiltonianModel::default();
        let p = ConductivityParams::new(1.0, 0.5, 0.0, 0.0).unwrap();
        let s = settings(Method::Kpm, 3, 1);
        let t = conductivity_integral(&g, &m, &p, &s).unwrap();
        let ev = LocalEvaluator::new(&g, &m, &p, &s).unwrap();
        let (s1, _) = ev.evaluate(&g, ConfigShift { b: [0.0, 0.0], focal_layer: Layer::First }).unwrap();
        let (s2, _) = ev.evaluate(&g, ConfigShift { b: [0.0, 0.0], focal_layer: Layer::Second }).unwrap();
        let nu = 1.0 / (g.lattice1.cell_area() + g.lattice2.cell_area());
        for a in 0..2 {
            for b in 0..2 {
                let want = nu * (s1[a][b] * g.lattice2.cell_area() + s2[a][b] * g.lattice1.cell_area());
                assert!((t.sigma[a][b] - want).norm() <= 1e-15 * want.norm().max(1e-300));
            }
        }
        assert_eq!(t.nodes.len(), 2);
    }

    #[test]
    fn exact_and_kpm_agree_on_small_cutout() {
        let g = geom();
        let m = HamiltonianModel::default();
        let p = ConductivityParams::new(1.0, 0.5, 0.0, 0.0).unwrap();
        let a = conductivity_integral(&g, &m, &p, &settings(Method::Exact, 2, 2)).unwrap();
        let s = IntegralSettings { eps: 1e-6, ..settings(Method::Kpm, 2, 2) };
        let b = conductivity_integral(&g, &m, &p, &s).unwrap();
        let ev = LocalEvaluator::new(&g, &m, &p, &s).unwrap();
        assert_eq!(a.counters, OpCounters::default());
        for i in 0..2 {
            for j in 0..2 {
                let scale = a.sigma[0][0].norm();
                assert!((a.sigma[i][j] - b.sigma[i][j]).norm() <= 10.0 * ev.dropped_mass() * 25.0 + 1e-9 * scale);
            }
        }
    }

    #[test]
    fn lattice_shift_of_nodes_changes_nothing() {
        let g = geom();
        let m = HamiltonianModel::default();
        let p = ConductivityParams::new(2.0, 0.3, 0.0, 0.1).unwrap();
        let ev = LocalEvaluator::new(&g, &m, &p, &settings(Method::Kpm, 4, 1)).unwrap();
        for (layer, lat) in [(Layer::First, &g.lattice2), (Layer::Second, &g.lattice1)] {
            let b = lat.to_cartesian([0.3, 0.6]);
            let a1 = lat.vector(0);
            let (x, _) = ev.evaluate(&g, ConfigShift { b, focal_layer: layer }).unwrap();
            let (y, _) = ev.evaluate(&g, ConfigShift { b: [b[0] + a1[0], b[1] + a1[1]], focal_layer: layer }).unwrap();
            for i in 0..2 {
                for j in 0..2 {
                    assert!((x[i][j] - y[i][j]).norm() <= 1e-12 * x[i][j].norm().max(1e-300));
                }
            }
        }
    }

    #[test]
    fn layer_swap_is_a_reflected_rotation() {
        // layer-2 focal system = R(theta) S (layer-1 focal system), S: y -> -y
        let g = geom();
        let m = HamiltonianModel::default();
        let p = ConductivityParams::new(1.0, 0.5, 0.1, 0.05).unwrap();
        let s = IntegralSettings { eps: 1e-9, ..settings(Method::Kpm, 3, 1) };
        let mut ev = LocalEvaluator::new(&g, &m, &p, &s).unwrap();
        let r = ev.recommended_r().unwrap();
        ev.set_r(r + 1).unwrap();
        let (s1, _) = ev.evaluate(&g, ConfigShift { b: [0.0, 0.0], focal_layer: Layer::First }).unwrap();
        let (s2, _) = ev.evaluate(&g, ConfigShift { b: [0.0, 0.0], focal_layer: Layer::Second }).unwrap();
        let th = g.twist.to_radians();
        let q = [[th.cos(), th.sin()], [th.sin(), -th.cos()]];
        for a in 0..2 {
            for b in 0..2 {
                let mut want = C64::new(0.0, 0.0);
                for c in 0..2 {
                    for d in 0..2 {
                        want += q[a][c] * s1[c][d] * q[b][d];
                    }
                }
                assert!((s2[a][b] - want).norm() <= 1e-8 * s1[0][0].norm(), "{a}{b}");
            }
        }
    }

    #[test]
    fn thread_count_does_not_change_bits() {
        let g = geom();
        let m = HamiltonianModel::default();
        let p = ConductivityParams::new(1.0, 0.5, 0.0, 0.0).unwrap();
        let one = conductivity_integral(&g, &m, &p, &IntegralSettings { threads: Some(1), ..settings(Method::Kpm, 2, 2) }).unwrap();
        let four = conductivity_integral(&g, &m, &p, &IntegralSettings { threads: Some(4), ..settings(Method::Kpm, 2, 2) }).unwrap();
        assert_eq!(one.sigma, four.sigma);
        assert_eq!(one.counters, four.counters);
    }
}
