//! Twisted bilayer lattices, finite cut-outs and layer shifts.

use serde::{Deserialize, Serialize};

use crate::{invalid, Result};

pub type Vec2 = [f64; 2];

/// Fractional coordinates closer than this to an integer are snapped to it
/// when wrapping into the unit cell.
const SNAP: f64 = 1e-12;
/// Wrapped fractional coordinates are rounded to this grid so that `b` and
/// `b + A n` produce bit-identical positions.
const FRAC_GRID: f64 = 17592186044416.0; // 2^44

/// A two-dimensional Bravais lattice `{A m : m in Z^2}`.
///
/// `basis[i][j]` is row `i`, column `j` of `A`; the columns are the
/// primitive vectors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BravaisLattice {
    basis: [[f64; 2]; 2],
}

impl BravaisLattice {
    pub fn new(basis: [[f64; 2]; 2]) -> Result<Self> {
        let det = basis[0][0] * basis[1][1] - basis[0][1] * basis[1][0];
        if !det.is_finite() || det.abs() <= 1e-12 {
            return invalid(format!("singular lattice basis (det = {det:e})"));
        }
        Ok(Self { basis })
    }

    /// Triangular lattice with unit nearest-neighbour distance.
    pub fn hexagonal() -> Self {
        let s = 3f64.sqrt() / 2.0;
        Self { basis: [[1.0, 0.5], [0.0, s]] }
    }

    pub fn square() -> Self {
        Self { basis: [[1.0, 0.0], [0.0, 1.0]] }
    }

    pub fn basis(&self) -> [[f64; 2]; 2] {
        self.basis
    }

    pub fn det(&self) -> f64 {
        self.basis[0][0] * self.basis[1][1] - self.basis[0][1] * self.basis[1][0]
    }

    /// Area of the unit cell.
    pub fn cell_area(&self) -> f64 {
        self.det().abs()
    }

    pub fn vector(&self, i: usize) -> Vec2 {
        [self.basis[0][i], self.basis[1][i]]
    }

    /// `A x` for real coordinates `x`.
    pub fn to_cartesian(&self, x: Vec2) -> Vec2 {
        let a = &self.basis;
        [a[0][0] * x[0] + a[0][1] * x[1], a[1][0] * x[0] + a[1][1] * x[1]]
    }

    /// `A^{-1} p`.
    pub fn to_fractional(&self, p: Vec2) -> Vec2 {
        let a = &self.basis;
        let d = self.det();
        [
            (a[1][1] * p[0] - a[0][1] * p[1]) / d,
            (-a[1][0] * p[0] + a[0][0] * p[1]) / d,
        ]
    }

    pub fn site(&self, m: [i64; 2]) -> Vec2 {
        self.to_cartesian([m[0] as f64, m[1] as f64])
    }

    /// Longer diagonal of the unit cell.
    pub fn cell_diameter(&self) -> f64 {
        let (a, b) = (self.vector(0), self.vector(1));
        let p = (a[0] + b[0]).hypot(a[1] + b[1]);
        let m = (a[0] - b[0]).hypot(a[1] - b[1]);
        p.max(m)
    }

    /// Rotated copy of the lattice.
    pub fn rotated(&self, degrees: f64) -> Self {
        let (s, c) = degrees.to_radians().sin_cos();
        let a = &self.basis;
        Self {
            basis: [
                [c * a[0][0] - s * a[1][0], c * a[0][1] - s * a[1][1]],
                [s * a[0][0] + c * a[1][0], s * a[0][1] + c * a[1][1]],
            ],
        }
    }

    /// Integer bound `R` such that every lattice point within `radius` of a
    /// point of the unit cell has `|m_i| <= R`.
    pub(crate) fn index_bound(&self, radius: f64) -> i64 {
        // rows of A^{-1} bound |m_i| <= |row_i| * |p|
        let a = &self.basis;
        let d = self.det().abs();
        let r0 = a[1][1].hypot(a[0][1]) / d;
        let r1 = a[1][0].hypot(a[0][0]) / d;
        let reach = radius + self.cell_diameter();
        (r0.max(r1) * reach).ceil() as i64 + 1
    }
}

/// Map `point` into the half-open cell `{A x : x in [0,1)^2}` by a lattice
/// translation. Idempotent.
pub fn wrap_to_cell(point: Vec2, lat: &BravaisLattice) -> Vec2 {
    let f = lat.to_fractional(point);
    let wrap = |x: f64| {
        let n = x.round();
        let x = if (x - n).abs() < SNAP { n } else { x };
        let x = x - x.floor();
        let x = (x * FRAC_GRID).round() / FRAC_GRID;
        if x >= 1.0 { 0.0 } else { x }
    };
    let w = [wrap(f[0]), wrap(f[1])];
    if w == f {
        return point;
    }
    lat.to_cartesian(w)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Layer {
    First,
    Second,
}

impl Layer {
    pub fn other(self) -> Self {
        match self {
            Layer::First => Layer::Second,
            Layer::Second => Layer::First,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Layer::First => 0,
            Layer::Second => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BilayerGeometry {
    pub lattice1: BravaisLattice,
    pub lattice2: BravaisLattice,
    /// Relative twist in degrees.
    pub twist: f64,
    /// Out-of-plane distance between the layers.
    pub interlayer_gap: f64,
}

impl BilayerGeometry {
    pub fn lattice(&self, layer: Layer) -> &BravaisLattice {
        match layer {
            Layer::First => &self.lattice1,
            Layer::Second => &self.lattice2,
        }
    }

    pub fn height(&self, layer: Layer) -> f64 {
        match layer {
            Layer::First => 0.0,
            Layer::Second => self.interlayer_gap,
        }
    }
}

/// Second layer is `base` rotated by `twist_degrees` about the origin.
pub fn make_twisted_pair(
    base: BravaisLattice,
    twist_degrees: f64,
    gap: f64,
) -> Result<BilayerGeometry> {
    let base = BravaisLattice::new(base.basis)?;
    if !(gap >= 0.0) || !gap.is_finite() {
        return invalid(format!("interlayer gap must be finite and >= 0, got {gap}"));
    }
    if !twist_degrees.is_finite() {
        return invalid("twist angle must be finite");
    }
    Ok(BilayerGeometry {
        lattice1: base,
        lattice2: base.rotated(twist_degrees),
        twist: twist_degrees,
        interlayer_gap: gap,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum CutOut {
    /// Sites with in-plane distance at most `r` from the origin.
    Disc(f64),
    /// Integer lattice coordinates `m in {-r..r}^2`.
    Parallelogram(u32),
}

/// Relative shift `b` of the non-focal layer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigShift {
    pub b: Vec2,
    pub focal_layer: Layer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SiteList {
    pub positions: Vec<[f64; 3]>,
    pub layer: Vec<Layer>,
    pub seed_index: usize,
}

impl SiteList {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Sites of the focal layer sit on its lattice with one site at the
/// origin; the other layer is translated by `b` wrapped into its own cell.
/// Layer-1 sites come first, each layer in lexicographic `m` order.
pub fn enumerate_sites(geom: &BilayerGeometry, cut: CutOut, shift: ConfigShift) -> Result<SiteList> {
    match cut {
        CutOut::Disc(r) if !(r >= 1.0) => return invalid(format!("cut-out radius must be >= 1, got {r}")),
        CutOut::Parallelogram(0) => return invalid("cut-out half-width must be >= 1"),
        _ => {}
    }
    let focal = shift.focal_layer;
    let other = focal.other();
    let b = wrap_to_cell(shift.b, geom.lattice(other));

    let mut positions = Vec::new();
    let mut layer = Vec::new();
    let mut seed_index = None;
    for l in [Layer::First, Layer::Second] {
        let lat = geom.lattice(l);
        let offset = if l == focal { [0.0, 0.0] } else { b };
        let z = geom.height(l);
        let range = match cut {
            CutOut::Parallelogram(r) => r as i64,
            CutOut::Disc(r) => lat.index_bound(r),
        };
        for m0 in -range..=range {
            for m1 in -range..=range {
                let p = lat.site([m0, m1]);
                let p = [p[0] + offset[0], p[1] + offset[1]];
                if let CutOut::Disc(r) = cut {
                    if p[0].hypot(p[1]) > r {
                        continue;
                    }
                }
                if l == focal && m0 == 0 && m1 == 0 {
                    seed_index = Some(positions.len());
                }
                positions.push([p[0], p[1], z]);
                layer.push(l);
            }
        }
    }
    let seed_index = seed_index.expect("focal origin is always inside the cut-out");
    Ok(SiteList { positions, layer, seed_index })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: Vec2, b: Vec2, tol: f64) -> bool {
        (a[0] - b[0]).abs() <= tol && (a[1] - b[1]).abs() <= tol
    }

    #[test]
    fn zero_twist_gives_identical_lattices() {
        let g = make_twisted_pair(BravaisLattice::hexagonal(), 0.0, 1.0).unwrap();
        assert_eq!(g.lattice1, g.lattice2);
    }

    #[test]
    fn twist_rotates_basis_and_keeps_det() {
        let base = BravaisLattice::hexagonal();
        let g = make_twisted_pair(base, 2.5, 1.0).unwrap();
        let (s, c) = 2.5f64.to_radians().sin_cos();
        for i in 0..2 {
            let v = base.vector(i);
            let w = g.lattice2.vector(i);
            assert!(close(w, [c * v[0] - s * v[1], s * v[0] + c * v[1]], 1e-15));
        }
        assert!((g.lattice2.det() - base.det()).abs() < 1e-15);
    }

    #[test]
    fn quarter_turn_square_lattice_is_same_set() {
        let g = make_twisted_pair(BravaisLattice::square(), 90.0, 1.0).unwrap();
        for m0 in -3..=3 {
            for m1 in -3..=3 {
                let p = g.lattice2.site([m0, m1]);
                let f = g.lattice1.to_fractional(p);
                assert!((f[0] - f[0].round()).abs() < 1e-12);
                assert!((f[1] - f[1].round()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn singular_basis_rejected() {
        assert!(BravaisLattice::new([[1.0, 2.0], [2.0, 4.0]]).is_err());
        assert!(make_twisted_pair(BravaisLattice::hexagonal(), 1.0, -0.5).is_err());
    }

    #[test]
    fn parallelogram_counts() {
        let g = make_twisted_pair(BravaisLattice::hexagonal(), 2.5, 1.0).unwrap();
        let s0 = enumerate_sites(&g, CutOut::Parallelogram(1), ConfigShift { b: [0.0, 0.0], focal_layer: Layer::First }).unwrap();
        assert_eq!(s0.len(), 18);
        let s1 = enumerate_sites(&g, CutOut::Parallelogram(1), ConfigShift { b: [0.3, 0.2], focal_layer: Layer::First }).unwrap();
        assert_eq!(s1.len(), 18);
        for i in 0..18 {
            let d = [s1.positions[i][0] - s0.positions[i][0], s1.positions[i][1] - s0.positions[i][1]];
            match s0.layer[i] {
                Layer::First => assert_eq!(d, [0.0, 0.0]),
                Layer::Second => assert!(close(d, [0.3, 0.2], 1e-13)),
            }
        }
        assert_eq!(s0.positions[s0.seed_index], [0.0, 0.0, 0.0]);
        assert!(enumerate_sites(&g, CutOut::Parallelogram(0), ConfigShift { b: [0.0; 2], focal_layer: Layer::First }).is_err());
    }

    #[test]
    fn disc_count_matches_brute_force() {
        let g = make_twisted_pair(BravaisLattice::hexagonal(), 2.5, 1.0).unwrap();
        let s = enumerate_sites(&g, CutOut::Disc(2.05), ConfigShift { b: [0.0, 0.0], focal_layer: Layer::First }).unwrap();
        for (idx, lat) in [(Layer::First, g.lattice1), (Layer::Second, g.lattice2)] {
            let mut brute = 0;
            for m0 in -5..=5 {
                for m1 in -5..=5 {
                    let p = lat.site([m0, m1]);
                    if p[0].hypot(p[1]) <= 2.05 {
                        brute += 1;
                    }
                }
            }
            let got = s.layer.iter().filter(|&&l| l == idx).count();
            assert_eq!(got, brute);
            // the hexagonal lattice has 1 + 6 + 6 + 6 points within radius 2.05
            assert_eq!(brute, 19);
        }
    }

    #[test]
    fn seed_sits_at_origin_of_second_layer() {
        let g = make_twisted_pair(BravaisLattice::hexagonal(), 2.5, 1.0).unwrap();
        let s = enumerate_sites(&g, CutOut::Parallelogram(2), ConfigShift { b: [0.4, -0.1], focal_layer: Layer::Second }).unwrap();
        assert_eq!(s.positions[s.seed_index], [0.0, 0.0, 1.0]);
        assert_eq!(s.layer[s.seed_index], Layer::Second);
    }

    #[test]
    fn wrap_examples() {
        let lat = BravaisLattice::hexagonal();
        let inside = lat.to_cartesian([0.3, 0.6]);
        assert!(close(wrap_to_cell(inside, &lat), inside, 1e-13));
        let once = wrap_to_cell([3.7, -2.2], &lat);
        assert_eq!(wrap_to_cell(once, &lat), once);
        assert_eq!(wrap_to_cell(lat.vector(0), &lat), [0.0, 0.0]);
        let p = wrap_to_cell(lat.to_cartesian([1.25, -0.5]), &lat);
        assert!(close(p, lat.to_cartesian([0.25, 0.5]), 1e-14));
    }
}
