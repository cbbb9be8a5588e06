//! Sparse tight-binding Hamiltonian, spectral rescaling and velocity
//! operators.

use std::collections::HashMap;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::geometry::{enumerate_sites, BilayerGeometry, ConfigShift, CutOut, Layer, SiteList};
use crate::{invalid, Error, Result, C64};

/// Compressed-row complex matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseOperator {
    n: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<C64>,
    hermitian: bool,
}

impl SparseOperator {
    /// Build from per-row `(column, value)` lists. Columns are sorted and
    /// duplicates summed.
    pub fn from_rows(n: usize, rows: Vec<Vec<(usize, C64)>>, hermitian: bool) -> Result<Self> {
        if rows.len() != n {
            return Err(Error::Dimension { expected: n, got: rows.len() });
        }
        let mut row_offsets = Vec::with_capacity(n + 1);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        row_offsets.push(0);
        for mut row in rows {
            row.sort_by_key(|&(j, _)| j);
            for (j, v) in row {
                if j >= n {
                    return invalid(format!("column index {j} out of range for dimension {n}"));
                }
                if col_indices.len() > *row_offsets.last().unwrap() && *col_indices.last().unwrap() == j {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_indices.push(j);
                    values.push(v);
                }
            }
            row_offsets.push(col_indices.len());
        }
        Ok(Self { n, row_offsets, col_indices, values, hermitian })
    }

    pub fn from_dense(n: usize, a: &[C64], hermitian: bool) -> Result<Self> {
        if a.len() != n * n {
            return Err(Error::Dimension { expected: n * n, got: a.len() });
        }
        let rows = (0..n)
            .map(|i| (0..n).filter(|&j| a[i * n + j] != C64::new(0.0, 0.0)).map(|j| (j, a[i * n + j])).collect())
            .collect();
        Self::from_rows(n, rows, hermitian)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn is_flagged_hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, C64)> + '_ {
        let r = self.row_offsets[i]..self.row_offsets[i + 1];
        self.col_indices[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        let r = self.row_offsets[i]..self.row_offsets[i + 1];
        match self.col_indices[r.clone()].binary_search(&j) {
            Ok(k) => self.values[r.start + k],
            Err(_) => C64::new(0.0, 0.0),
        }
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &[C64], y: &mut [C64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = C64::new(0.0, 0.0);
            for k in self.row_offsets[i]..self.row_offsets[i + 1] {
                acc += self.values[k] * x[self.col_indices[k]];
            }
            *yi = acc;
        }
    }

    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        let mut y = vec![C64::new(0.0, 0.0); self.n];
        self.matvec(x, &mut y);
        y
    }

    /// Largest entrywise deviation `|a_ij - conj(a_ji)|`.
    pub fn hermitian_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i).conj()).norm());
            }
        }
        worst
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermitian_defect() <= tol
    }

    /// Row-major dense copy.
    pub fn to_dense(&self) -> Vec<C64> {
        let mut a = vec![C64::new(0.0, 0.0); self.n * self.n];
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                a[i * self.n + j] = v;
            }
        }
        a
    }

    /// `true` when every stored value has zero imaginary part.
    pub fn is_real(&self) -> bool {
        self.values.iter().all(|v| v.im == 0.0)
    }

    fn map_values(&self, f: impl Fn(usize, usize, C64) -> C64) -> Self {
        let mut out = self.clone();
        for i in 0..self.n {
            for k in self.row_offsets[i]..self.row_offsets[i + 1] {
                out.values[k] = f(i, self.col_indices[k], self.values[k]);
            }
        }
        out
    }

    /// Matrix Market coordinate format, complex general.
    pub fn write_matrix_market<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate complex general")?;
        writeln!(w, "{} {} {}", self.n, self.n, self.nnz())?;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                writeln!(w, "{} {} {:e} {:e}", i + 1, j + 1, v.re, v.im)?;
            }
        }
        Ok(())
    }
}

/// Interval enclosing the spectrum of an unscaled operator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralWindow {
    pub e_min: f64,
    pub e_max: f64,
}

impl SpectralWindow {
    pub fn new(e_min: f64, e_max: f64) -> Result<Self> {
        if !(e_min < e_max) || !e_min.is_finite() || !e_max.is_finite() {
            return invalid(format!("empty spectral window [{e_min}, {e_max}]"));
        }
        Ok(Self { e_min, e_max })
    }

    fn half_width(&self) -> f64 {
        0.5 * (self.e_max - self.e_min)
    }

    fn center(&self) -> f64 {
        0.5 * (self.e_max + self.e_min)
    }

    /// Energy of the unscaled operator mapped into `[-1, 1]`.
    pub fn to_unit(&self, e: f64) -> f64 {
        (e - self.center()) / self.half_width()
    }

    pub fn from_unit(&self, x: f64) -> f64 {
        self.center() + x * self.half_width()
    }

    pub fn contains(&self, other: &SpectralWindow) -> bool {
        self.e_min <= other.e_min && other.e_max <= self.e_max
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianModel {
    pub r_cut: f64,
}

impl Default for HamiltonianModel {
    fn default() -> Self {
        Self { r_cut: 3f64.sqrt() }
    }
}

impl HamiltonianModel {
    pub fn new(r_cut: f64) -> Result<Self> {
        if !(r_cut > 0.0) || !r_cut.is_finite() {
            return invalid(format!("r_cut must be positive, got {r_cut}"));
        }
        Ok(Self { r_cut })
    }

    pub fn coupling(&self, d: f64) -> f64 {
        coupling(d, self.r_cut)
    }

    /// Upper bound on `|h'(d)|` over `[0, r_cut)`.
    fn max_slope(&self) -> f64 {
        let c2 = self.r_cut * self.r_cut;
        let mut worst = 0.0f64;
        let steps = 100_000;
        for s in 0..steps {
            let d = self.r_cut * s as f64 / steps as f64;
            let g = c2 - d * d;
            worst = worst.max(coupling(d, self.r_cut) * 2.0 * d * c2 / (g * g));
        }
        // grid maximum of a smooth unimodal slope, padded
        1.01 * worst
    }
}

/// Smooth compactly supported hopping `exp(-d^2 / (r_cut^2 - d^2))`.
pub fn coupling(d: f64, r_cut: f64) -> f64 {
    if d >= r_cut {
        return 0.0;
    }
    let d2 = d * d;
    (-d2 / (r_cut * r_cut - d2)).exp()
}

fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let (dx, dy, dz) = (a[0] - b[0], a[1] - b[1], a[2] - b[2]);
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Tight-binding matrix with `H[i][j] = h(|pos_i - pos_j|)`, diagonal
/// included.
pub fn assemble(sites: &SiteList, model: &HamiltonianModel) -> Result<SparseOperator> {
    if sites.is_empty() {
        return invalid("cannot assemble a Hamiltonian on an empty site list");
    }
    let cell = model.r_cut;
    let key = |p: &[f64; 3]| ((p[0] / cell).floor() as i64, (p[1] / cell).floor() as i64);
    let mut bins: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, p) in sites.positions.iter().enumerate() {
        bins.entry(key(p)).or_default().push(i);
    }
    let mut rows = Vec::with_capacity(sites.len());
    for p in &sites.positions {
        let (kx, ky) = key(p);
        let mut row = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(bin) = bins.get(&(kx + dx, ky + dy)) {
                    for &j in bin {
                        let h = model.coupling(distance(p, &sites.positions[j]));
                        if h != 0.0 {
                            row.push((j, C64::new(h, 0.0)));
                        }
                    }
                }
            }
        }
        rows.push(row);
    }
    SparseOperator::from_rows(sites.len(), rows, true)
}

/// Gershgorin enclosure widened by `1e-12` on both sides.
pub fn spectral_bounds(a: &SparseOperator) -> SpectralWindow {
    const DELTA: f64 = 1e-12;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..a.dim() {
        let mut diag = 0.0;
        let mut off = 0.0;
        for (j, v) in a.row(i) {
            if i == j {
                diag = v.re;
            } else {
                off += v.norm();
            }
        }
        lo = lo.min(diag - off);
        hi = hi.max(diag + off);
    }
    SpectralWindow { e_min: lo - DELTA, e_max: hi + DELTA }
}

/// `2/(e_max - e_min) * (A - (e_max + e_min)/2 * I)`.
pub fn rescale(a: &SparseOperator, w: &SpectralWindow) -> Result<SparseOperator> {
    let w = SpectralWindow::new(w.e_min, w.e_max)?;
    let (c, s) = (w.center(), 1.0 / w.half_width());
    let mut rows: Vec<Vec<(usize, C64)>> = (0..a.dim()).map(|i| a.row(i).collect()).collect();
    for (i, row) in rows.iter_mut().enumerate() {
        if !row.iter().any(|&(j, _)| j == i) {
            row.push((i, C64::new(0.0, 0.0)));
        }
        for (j, v) in row.iter_mut() {
            if *j == i {
                *v -= c;
            }
            *v *= s;
        }
    }
    SparseOperator::from_rows(a.dim(), rows, a.hermitian)
}

/// Velocity operator `M_p[i][j] = i (pos_j - pos_i)_p A[i][j]`, `p` in {1, 2}.
pub fn velocity(a: &SparseOperator, sites: &SiteList, p: usize) -> Result<SparseOperator> {
    if a.dim() != sites.len() {
        return Err(Error::Dimension { expected: sites.len(), got: a.dim() });
    }
    if !(1..=2).contains(&p) {
        return invalid(format!("velocity direction must be 1 or 2, got {p}"));
    }
    let c = p - 1;
    let pos = &sites.positions;
    Ok(a.map_values(|i, j, v| C64::new(0.0, pos[j][c] - pos[i][c]) * v))
}

/// Spectral window valid for every finite cut-out and every shift of the
/// bilayer: Gershgorin row sums are bounded by the sum over the full
/// infinite environment of a site, maximised over all shifts.
///
/// The shift supremum is taken on a uniform grid over the opposite cell and
/// padded by a Lipschitz margin, so the window is a guaranteed enclosure.
/// Using one window for all cut-outs and shifts makes results independent
/// of `r` once the Chebyshev recurrences stop reaching the boundary, and
/// keeps the shift integrand smooth.
pub fn environment_window(geom: &BilayerGeometry, model: &HamiltonianModel) -> SpectralWindow {
    const GRID: usize = 512;
    let diag = model.coupling(0.0);
    let slope = model.max_slope();
    let mut worst = 0.0f64;
    for focal in [Layer::First, Layer::Second] {
        let own = geom.lattice(focal);
        let other = geom.lattice(focal.other());
        let bound = own.index_bound(model.r_cut);
        let mut intra = 0.0;
        for m0 in -bound..=bound {
            for m1 in -bound..=bound {
                if (m0, m1) != (0, 0) {
                    let p = own.site([m0, m1]);
                    intra += model.coupling(p[0].hypot(p[1]));
                }
            }
        }
        let gap = geom.interlayer_gap;
        let inter = if gap >= model.r_cut {
            0.0
        } else {
            let reach = (model.r_cut * model.r_cut - gap * gap).sqrt() + other.cell_diameter();
            let bound = other.index_bound(reach);
            let mut cand = Vec::new();
            for m0 in -bound..=bound {
                for m1 in -bound..=bound {
                    let p = other.site([m0, m1]);
                    if p[0].hypot(p[1]) <= reach {
                        cand.push(p);
                    }
                }
            }
            let mut sup = 0.0f64;
            for g0 in 0..GRID {
                for g1 in 0..GRID {
                    let b = other.to_cartesian([g0 as f64 / GRID as f64, g1 as f64 / GRID as f64]);
                    let s: f64 = cand
                        .iter()
                        .map(|p| {
                            let (x, y) = (p[0] + b[0], p[1] + b[1]);
                            model.coupling((x * x + y * y + gap * gap).sqrt())
                        })
                        .sum();
                    sup = sup.max(s);
                }
            }
            sup + cand.len() as f64 * slope * other.cell_diameter() / GRID as f64
        };
        worst = worst.max(intra + inter);
    }
    SpectralWindow { e_min: diag - worst, e_max: diag + worst }
}

/// Rescaled Hamiltonian, velocity operators and seed for one local
/// configuration.
#[derive(Clone, Debug)]
pub struct LocalSystem {
    pub sites: SiteList,
    pub h: SparseOperator,
    pub velocity: [SparseOperator; 2],
    pub window: SpectralWindow,
    pub seed: usize,
}

impl LocalSystem {
    pub fn build(
        geom: &BilayerGeometry,
        model: &HamiltonianModel,
        cut: CutOut,
        shift: ConfigShift,
        window: &SpectralWindow,
    ) -> Result<Self> {
        let sites = enumerate_sites(geom, cut, shift)?;
        let raw = assemble(&sites, model)?;
        let h = rescale(&raw, window)?;
        let velocity = [velocity(&h, &sites, 1)?, velocity(&h, &sites, 2)?];
        let seed = sites.seed_index;
        Ok(Self { sites, h, velocity, window: *window, seed })
    }

    pub fn dim(&self) -> usize {
        self.h.dim()
    }
}
