//! Dense-diagonalisation references and brute-force coefficient quadrature.

use std::f64::consts::PI;

use faer::{Mat, Side};

use crate::confunc::{f_zeta_real, ConductivityParams};
use crate::hamiltonian::SparseOperator;
use crate::{invalid, Error, Result, C64};

/// Largest dimension the dense paths accept.
pub const MAX_DENSE_DIM: usize = 5000;

#[derive(Clone, Debug)]
enum Vectors {
    Real(Mat<f64>),
    Complex(Mat<C64>),
}

/// Eigenvalues in ascending order with orthonormal eigenvectors as columns.
#[derive(Clone, Debug)]
pub struct EigenDecomposition {
    pub eigenvalues: Vec<f64>,
    vectors: Vectors,
}

impl EigenDecomposition {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Component `i` of eigenvector `k`.
    pub fn vector_entry(&self, i: usize, k: usize) -> C64 {
        match &self.vectors {
            Vectors::Real(v) => C64::new(v[(i, k)], 0.0),
            Vectors::Complex(v) => v[(i, k)],
        }
    }

    pub fn eigenvectors(&self) -> Mat<C64> {
        let n = self.dim();
        Mat::from_fn(n, n, |i, k| self.vector_entry(i, k))
    }

    /// `V^H x`.
    pub fn coords(&self, x: &[C64]) -> Vec<C64> {
        let n = self.dim();
        (0..n)
            .map(|k| (0..n).map(|i| self.vector_entry(i, k).conj() * x[i]).sum())
            .collect()
    }

    /// `V^H A V` for a sparse operator.
    pub fn project(&self, a: &SparseOperator) -> Mat<C64> {
        let n = self.dim();
        match &self.vectors {
            Vectors::Real(v) => {
                let (mut has_re, mut has_im) = (false, false);
                for i in 0..n {
                    for (_, x) in a.row(i) {
                        has_re |= x.re != 0.0;
                        has_im |= x.im != 0.0;
                    }
                }
                // W = A V column by column, real and imaginary parts apart
                let part = |take: fn(C64) -> f64| -> Mat<f64> {
                    let mut w = Mat::<f64>::zeros(n, n);
                    for k in 0..n {
                        let vk = v.col(k);
                        let mut wk = w.col_mut(k);
                        for i in 0..n {
                            let mut acc = 0.0;
                            for (j, x) in a.row(i) {
                                acc += take(x) * vk[j];
                            }
                            wk[i] = acc;
                        }
                    }
                    v.transpose() * &w
                };
                let pr = if has_re { Some(part(|x| x.re)) } else { None };
                let pi = if has_im { Some(part(|x| x.im)) } else { None };
                let at = |m: &Option<Mat<f64>>, i: usize, k: usize| m.as_ref().map_or(0.0, |m| m[(i, k)]);
                Mat::from_fn(n, n, |i, k| C64::new(at(&pr, i, k), at(&pi, i, k)))
            }
            Vectors::Complex(v) => {
                let mut w = Mat::<C64>::zeros(n, n);
                for k in 0..n {
                    let vk = v.col(k);
                    let mut wk = w.col_mut(k);
                    for i in 0..n {
                        let mut acc = C64::new(0.0, 0.0);
                        for (j, x) in a.row(i) {
                            acc += x * vk[j];
                        }
                        wk[i] = acc;
                    }
                }
                v.adjoint() * &w
            }
        }
    }

    /// `max |H V - V diag(lambda)|`.
    pub fn residual(&self, h: &SparseOperator) -> f64 {
        let n = self.dim();
        let mut worst = 0.0f64;
        for k in 0..n {
            let col: Vec<C64> = (0..n).map(|i| self.vector_entry(i, k)).collect();
            let hv = h.apply(&col);
            for i in 0..n {
                worst = worst.max((hv[i] - self.eigenvalues[k] * col[i]).norm());
            }
        }
        worst
    }

    /// `max |V^H V - I|`.
    pub fn orthonormality_defect(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0f64;
        for a in 0..n {
            for b in 0..n {
                let dot: C64 = (0..n).map(|i| self.vector_entry(i, a).conj() * self.vector_entry(i, b)).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((dot - want).norm());
            }
        }
        worst
    }
}

fn guard(n: usize) -> Result<()> {
    if n > MAX_DENSE_DIM {
        return invalid(format!("dense oracle limited to dimension {MAX_DENSE_DIM}, got {n}"));
    }
    Ok(())
}

/// Full Hermitian eigendecomposition; real symmetric input takes a real
/// solver.
pub fn dense_eig(h: &SparseOperator) -> Result<EigenDecomposition> {
    let n = h.dim();
    guard(n)?;
    faer::set_global_parallelism(faer::Par::Seq);
    let fail = |e| Error::Numerical(format!("eigensolver failed: {e:?}"));
    if h.is_real() {
        let mut m = Mat::<f64>::zeros(n, n);
        for i in 0..n {
            for (j, v) in h.row(i) {
                m[(i, j)] = v.re;
            }
        }
        let e = m.self_adjoint_eigen(Side::Lower).map_err(fail)?;
        let eigenvalues = (0..n).map(|i| e.S()[i]).collect();
        Ok(EigenDecomposition { eigenvalues, vectors: Vectors::Real(e.U().to_owned()) })
    } else {
        let mut m = Mat::<C64>::zeros(n, n);
        for i in 0..n {
            for (j, v) in h.row(i) {
                m[(i, j)] = v;
            }
        }
        let e = m.self_adjoint_eigen(Side::Lower).map_err(fail)?;
        let eigenvalues = (0..n).map(|i| e.S()[i].re).collect();
        Ok(EigenDecomposition { eigenvalues, vectors: Vectors::Complex(e.U().to_owned()) })
    }
}

fn unit(n: usize, seed: usize) -> Vec<C64> {
    let mut e = vec![C64::new(0.0, 0.0); n];
    e[seed] = C64::new(1.0, 0.0);
    e
}

/// Local conductivities `sigma[p][p']` for every pair of velocity
/// operators from one decomposition:
/// `sum F(e_i1, e_i2) <v_i1|M_p|v_i2> <v_i2|M_p'|e> <e|v_i1>`.
pub fn local_tensor_exact(
    eig: &EigenDecomposition,
    velocity: [&SparseOperator; 2],
    params: &ConductivityParams,
    seed: usize,
) -> Result<[[C64; 2]; 2]> {
    let n = eig.dim();
    for m in velocity {
        if m.dim() != n {
            return Err(Error::Dimension { expected: n, got: m.dim() });
        }
    }
    if seed >= n {
        return invalid(format!("seed {seed} outside dimension {n}"));
    }
    let e = unit(n, seed);
    let c: Vec<C64> = (0..n).map(|k| eig.vector_entry(seed, k)).collect();
    let b: Vec<Vec<C64>> = velocity.iter().map(|m| eig.coords(&m.apply(&e))).collect();
    let lam = &eig.eigenvalues;
    let f = Mat::<C64>::from_fn(n, n, |i1, i2| f_zeta_real(lam[i1], lam[i2], params));
    let mut out = [[C64::new(0.0, 0.0); 2]; 2];
    for p in 0..2 {
        let a = eig.project(velocity[p]);
        // column-wise sweep over the column-major matrices
        for i2 in 0..n {
            let (fc, ac) = (f.col(i2), a.col(i2));
            let mut acc = C64::new(0.0, 0.0);
            for i1 in 0..n {
                acc += c[i1] * fc[i1] * ac[i1];
            }
            out[p][0] += acc * b[0][i2];
            out[p][1] += acc * b[1][i2];
        }
    }
    Ok(out)
}

/// Single local conductivity entry from a dense eigendecomposition.
pub fn local_conductivity_exact(
    h: &SparseOperator,
    m_p: &SparseOperator,
    m_q: &SparseOperator,
    params: &ConductivityParams,
    seed: usize,
) -> Result<C64> {
    let eig = dense_eig(h)?;
    let n = eig.dim();
    if m_p.dim() != n || m_q.dim() != n {
        return Err(Error::Dimension { expected: n, got: m_p.dim().max(m_q.dim()) });
    }
    if seed >= n {
        return invalid(format!("seed {seed} outside dimension {n}"));
    }
    let c: Vec<C64> = (0..n).map(|k| eig.vector_entry(seed, k)).collect();
    let b = eig.coords(&m_q.apply(&unit(n, seed)));
    let a = eig.project(m_p);
    let mut out = C64::new(0.0, 0.0);
    for i1 in 0..n {
        let mut acc = C64::new(0.0, 0.0);
        for i2 in 0..n {
            acc += f_zeta_real(eig.eigenvalues[i1], eig.eigenvalues[i2], params) * a[(i1, i2)] * b[i2];
        }
        out += c[i1] * acc;
    }
    Ok(out)
}

/// Supercell conductivity `(1/n) sum F(e_i, e_j) <v_i|M_p|v_j> <v_j|M_p'|v_i>`.
pub fn global_conductivity_exact(
    h: &SparseOperator,
    velocity: [&SparseOperator; 2],
    params: &ConductivityParams,
) -> Result<[[C64; 2]; 2]> {
    let eig = dense_eig(h)?;
    let n = eig.dim();
    let a: Vec<Mat<C64>> = velocity.iter().map(|m| eig.project(m)).collect();
    let mut out = [[C64::new(0.0, 0.0); 2]; 2];
    for i in 0..n {
        for j in 0..n {
            let f = f_zeta_real(eig.eigenvalues[i], eig.eigenvalues[j], params);
            for p in 0..2 {
                for q in 0..2 {
                    out[p][q] += f * a[p][(i, j)] * a[q][(j, i)];
                }
            }
        }
    }
    for row in out.iter_mut() {
        for v in row.iter_mut() {
            *v /= n as f64;
        }
    }
    Ok(out)
}

/// Single Chebyshev coefficient by `n_quad`-point Gauss-Chebyshev
/// quadrature per axis.
pub fn cheb_coeffs_bruteforce(
    f: impl Fn(f64, f64) -> C64,
    k1: usize,
    k2: usize,
    n_quad: usize,
) -> Result<C64> {
    if n_quad <= 2 * k1.max(k2) {
        return invalid(format!("n_quad = {n_quad} too small for degree ({k1}, {k2})"));
    }
    let theta: Vec<f64> = (0..n_quad).map(|j| PI * (j as f64 + 0.5) / n_quad as f64).collect();
    let mut acc = C64::new(0.0, 0.0);
    for &t1 in &theta {
        let w1 = (k1 as f64 * t1).cos();
        for &t2 in &theta {
            acc += f(t1.cos(), t2.cos()) * (w1 * (k2 as f64 * t2).cos());
        }
    }
    let pre = |k: usize| if k == 0 { 1.0 } else { 2.0 };
    Ok(acc * (pre(k1) * pre(k2) / (n_quad * n_quad) as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_twisted_pair, BravaisLattice, ConfigShift, CutOut, Layer};
    use crate::hamiltonian::{environment_window, HamiltonianModel, LocalSystem};

    fn c(x: f64) -> C64 {
        C64::new(x, 0.0)
    }

    fn bilayer(r: u32) -> LocalSystem {
        let g = make_twisted_pair(BravaisLattice::hexagonal(), 2.5, 1.0).unwrap();
        let m = HamiltonianModel::default();
        let w = environment_window(&g, &m);
        LocalSystem::build(&g, &m, CutOut::Parallelogram(r), ConfigShift { b: [0.2, 0.35], focal_layer: Layer::First }, &w).unwrap()
    }

    #[test]
    fn diagonal_and_pauli_x() {
        let d = SparseOperator::from_dense(3, &[c(0.5), c(0.0), c(0.0), c(0.0), c(-0.2), c(0.0), c(0.0), c(0.0), c(0.1)], true).unwrap();
        let e = dense_eig(&d).unwrap();
        assert_eq!(e.eigenvalues, vec![-0.2, 0.1, 0.5]);
        for k in 0..3 {
            let nonzero: Vec<usize> = (0..3).filter(|&i| e.vector_entry(i, k).norm() > 0.5).collect();
            assert_eq!(nonzero.len(), 1);
        }
        let x = SparseOperator::from_dense(2, &[c(0.0), c(1.0), c(1.0), c(0.0)], true).unwrap();
        let e = dense_eig(&x).unwrap();
        assert!((e.eigenvalues[0] + 1.0).abs() < 1e-15 && (e.eigenvalues[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn complex_hermitian_path() {
        let i = C64::new(0.0, 1.0);
        let a = SparseOperator::from_dense(2, &[c(0.0), -i, i, c(0.0)], true).unwrap();
        let e = dense_eig(&a).unwrap();
        assert!((e.eigenvalues[0] + 1.0).abs() < 1e-14 && (e.eigenvalues[1] - 1.0).abs() < 1e-14);
        assert!(e.residual(&a) < 1e-14);
        assert!(e.orthonormality_defect() < 1e-14);
    }

    #[test]
    fn bilayer_decomposition_invariants() {
        let s = bilayer(2);
        let e = dense_eig(&s.h).unwrap();
        assert!(e.residual(&s.h) <= 1e-10);
        assert!(e.orthonormality_defect() <= 1e-10);
        assert!(e.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn rescaled_bilayer_spectrum_in_unit_interval() {
        let s = bilayer(4);
        let e = dense_eig(&s.h).unwrap();
        assert!(e.eigenvalues.iter().all(|x| x.abs() <= 1.0));
    }

    #[test]
    fn two_by_two_local_sum_by_hand() {
        // H = diag(a, b), M = [[0, i m], [-i m, 0]], seed 0:
        // sigma = F(a, b) <0|M|1> <1|M|0> = F(a, b) m^2
        let (a, b, m) = (0.3, -0.4, 0.7);
        let h = SparseOperator::from_dense(2, &[c(a), c(0.0), c(0.0), c(b)], true).unwrap();
        let mv = SparseOperator::from_dense(2, &[c(0.0), C64::new(0.0, m), C64::new(0.0, -m), c(0.0)], true).unwrap();
        let p = ConductivityParams::new(2.0, 0.5, 0.1, 0.0).unwrap();
        let got = local_conductivity_exact(&h, &mv, &mv, &p, 0).unwrap();
        let want = f_zeta_real(a, b, &p) * m * m;
        assert!((got - want).norm() < 1e-15);
        let zero = ConductivityParams::new(0.0, 0.5, 0.0, 0.0).unwrap();
        assert_eq!(local_conductivity_exact(&h, &mv, &mv, &zero, 0).unwrap(), c(0.0));
    }

    #[test]
    fn tensor_matches_single_entries() {
        let s = bilayer(1);
        let p = ConductivityParams::new(1.0, 0.5, 0.0, 0.0).unwrap();
        let eig = dense_eig(&s.h).unwrap();
        let t = local_tensor_exact(&eig, [&s.velocity[0], &s.velocity[1]], &p, s.seed).unwrap();
        for a in 0..2 {
            for b in 0..2 {
                let one = local_conductivity_exact(&s.h, &s.velocity[a], &s.velocity[b], &p, s.seed).unwrap();
                assert!((t[a][b] - one).norm() <= 1e-14 * one.norm().max(1e-300) + 1e-18);
            }
        }
    }

    #[test]
    fn global_equals_average_of_site_values() {
        // 32 sites: a 4x4 parallelogram per layer
        let g = make_twisted_pair(BravaisLattice::hexagonal(), 2.5, 1.0).unwrap();
        let m = HamiltonianModel::default();
        let w = environment_window(&g, &m);
        let sites = crate::geometry::SiteList {
            positions: (0..32)
                .map(|i| {
                    let l = if i < 16 { &g.lattice1 } else { &g.lattice2 };
                    let k = (i % 16) as i64;
                    let p = l.site([k / 4, k % 4]);
                    [p[0], p[1], if i < 16 { 0.0 } else { 1.0 }]
                })
                .collect(),
            layer: (0..32).map(|i| if i < 16 { Layer::First } else { Layer::Second }).collect(),
            seed_index: 0,
        };
        let raw = crate::hamiltonian::assemble(&sites, &m).unwrap();
        let h = crate::hamiltonian::rescale(&raw, &w).unwrap();
        let v = [crate::hamiltonian::velocity(&h, &sites, 1).unwrap(), crate::hamiltonian::velocity(&h, &sites, 2).unwrap()];
        let p = ConductivityParams::new(3.0, 0.2, 0.05, 0.1).unwrap();
        let glob = global_conductivity_exact(&h, [&v[0], &v[1]], &p).unwrap();
        let eig = dense_eig(&h).unwrap();
        let mut sum = [[c(0.0); 2]; 2];
        for seed in 0..32 {
            let t = local_tensor_exact(&eig, [&v[0], &v[1]], &p, seed).unwrap();
            for a in 0..2 {
                for b in 0..2 {
                    sum[a][b] += t[a][b] / 32.0;
                }
            }
        }
        for a in 0..2 {
            for b in 0..2 {
                assert!((glob[a][b] - sum[a][b]).norm() <= 1e-10 * glob[a][b].norm().max(1e-12), "{a}{b}");
            }
        }
        let one = SparseOperator::from_dense(1, &[c(0.2)], true).unwrap();
        let zero = SparseOperator::from_dense(1, &[c(0.0)], true).unwrap();
        assert_eq!(global_conductivity_exact(&one, [&zero, &zero], &p).unwrap()[0][0], c(0.0));
    }

    #[test]
    fn bruteforce_coefficients() {
        let t = |k: usize, x: f64| (k as f64 * x.acos()).cos();
        let f = |x: f64, y: f64| c(t(3, x) * t(2, y));
        assert!((cheb_coeffs_bruteforce(f, 3, 2, 16).unwrap() - c(1.0)).norm() < 1e-14);
        assert!(cheb_coeffs_bruteforce(f, 2, 3, 16).unwrap().norm() < 1e-14);
        assert!((cheb_coeffs_bruteforce(|_, _| c(1.0), 0, 0, 4).unwrap() - c(1.0)).norm() < 1e-15);
        assert!(cheb_coeffs_bruteforce(f, 5, 0, 10).is_err());
    }

    #[test]
    fn size_guard() {
        let big = SparseOperator::from_rows(MAX_DENSE_DIM + 1, vec![vec![]; MAX_DENSE_DIM + 1], true).unwrap();
        assert!(dense_eig(&big).is_err());
    }
}
