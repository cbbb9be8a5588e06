//! The conductivity function, its temperature factor, and the Chebyshev
//! decay rates predicted by Bernstein-ellipse geometry.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::{invalid, Result, C64};

/// Inverse temperature, inverse relaxation time, frequency, Fermi level.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConductivityParams {
    pub beta: f64,
    pub eta: f64,
    pub omega: f64,
    pub e_fermi: f64,
}

impl ConductivityParams {
    /// `beta = 0` is accepted and gives the infinite-temperature limit.
    pub fn new(beta: f64, eta: f64, omega: f64, e_fermi: f64) -> Result<Self> {
        if !(beta >= 0.0) || !beta.is_finite() {
            return invalid(format!("beta must be finite and >= 0, got {beta}"));
        }
        if !(eta > 0.0) || !eta.is_finite() {
            return invalid(format!("eta must be finite and > 0, got {eta}"));
        }
        if !omega.is_finite() || !e_fermi.is_finite() {
            return invalid("omega and e_fermi must be finite");
        }
        Ok(Self { beta, eta, omega, e_fermi })
    }

    /// `omega + i eta`.
    pub fn shift(&self) -> C64 {
        C64::new(self.omega, self.eta)
    }
}

/// Fermi-Dirac occupation `1 / (1 + exp(beta (E - E_F)))`.
pub fn fermi(e: f64, p: &ConductivityParams) -> f64 {
    let x = p.beta * (e - p.e_fermi);
    if x > 0.0 {
        let t = (-x).exp();
        t / (1.0 + t)
    } else {
        1.0 / (1.0 + x.exp())
    }
}

/// `sech z`, overflow-free for large `|Re z|`.
fn sech(z: C64) -> C64 {
    let z = if z.re < 0.0 { -z } else { z };
    let t = (-z).exp();
    2.0 * t / (1.0 + t * t)
}

/// `sinh(d) / d` for `|d| < 1`.
fn sinhc_small(d: C64) -> C64 {
    if d == C64::new(0.0, 0.0) {
        C64::new(1.0, 0.0)
    } else {
        d.sinh() / d
    }
}

/// `sinh(a - b) / (a - b) * sech(a) * sech(b)` with exponentials combined so
/// nothing overflows.
fn sinhc_sech_sech(a: C64, b: C64) -> C64 {
    let d = a - b;
    if d.norm() < 1.0 {
        return sinhc_small(d) * sech(a) * sech(b);
    }
    let sgn = |z: C64| if z.re < 0.0 { -1.0 } else { 1.0 };
    let (sa, sb, sd) = (sgn(a), sgn(b), sgn(d));
    // every exponent below has non-positive real part
    let head = (sd * d - sa * a - sb * b).exp();
    let sinh_tail = 1.0 - (-2.0 * sd * d).exp();
    let sech_a = 1.0 + (-2.0 * sa * a).exp();
    let sech_b = 1.0 + (-2.0 * sb * b).exp();
    sd * 2.0 * head * sinh_tail / (sech_a * sech_b * d)
}

/// Divided difference `(f(E1) - f(E2)) / (E1 - E2)` of the Fermi-Dirac
/// function, continuous across `E1 = E2`.
///
/// Written as `-(beta/4) shc(A - B) sech(A) sech(B)` with
/// `A = beta (E1 - E_F)/2`, `B = beta (E2 - E_F)/2`, which has no cancellation
/// near the diagonal.
pub fn f_temp(e1: C64, e2: C64, p: &ConductivityParams) -> C64 {
    if p.beta == 0.0 {
        return C64::new(0.0, 0.0);
    }
    let a = 0.5 * p.beta * (e1 - p.e_fermi);
    let b = 0.5 * p.beta * (e2 - p.e_fermi);
    -0.25 * p.beta * sinhc_sech_sech(a, b)
}

/// `f_temp(E1, E2) / (E1 - E2 + omega + i eta)`.
pub fn f_zeta(e1: C64, e2: C64, p: &ConductivityParams) -> C64 {
    f_temp(e1, e2, p) / (e1 - e2 + p.shift())
}

/// Real-argument convenience wrapper of [`f_zeta`].
pub fn f_zeta_real(e1: f64, e2: f64, p: &ConductivityParams) -> C64 {
    f_zeta(C64::new(e1, 0.0), C64::new(e2, 0.0), p)
}

/// `1 / (E1 - E2 + omega + i eta)`.
pub fn f_relax(e1: f64, e2: f64, p: &ConductivityParams) -> C64 {
    1.0 / (C64::new(e1 - e2, 0.0) + p.shift())
}

/// Parameter of the Bernstein ellipse of `[-1, 1]` through `x`.
pub fn alpha_param(x: C64) -> f64 {
    if x.im == 0.0 && x.re.abs() <= 1.0 {
        return 0.0;
    }
    let one = C64::new(1.0, 0.0);
    let w = x + (x - one).sqrt() * (x + one).sqrt();
    w.norm().ln().abs()
}

fn alpha_pole(p: &ConductivityParams, m: u32) -> f64 {
    if p.beta == 0.0 {
        return f64::INFINITY;
    }
    alpha_param(C64::new(p.e_fermi, m as f64 * PI / p.beta))
}

fn alpha_relax(p: &ConductivityParams) -> f64 {
    alpha_param(C64::new(1.0 - p.omega.abs(), p.eta))
}

/// `min(alpha(1 - |omega| + i eta), alpha(E_F + i pi / beta))`.
pub fn alpha_max(p: &ConductivityParams) -> f64 {
    alpha_max_m(p, 1)
}

fn alpha_max_m(p: &ConductivityParams, m: u32) -> f64 {
    alpha_relax(p).min(alpha_pole(p, m))
}

/// Relative slack for the equalities in the classification; exact ties
/// (e.g. the lowest point of the shifted ellipse coinciding with the pole
/// ellipse) are otherwise decided by roundoff.
const TIE: f64 = 1e-9;

fn leq(a: f64, b: f64) -> bool {
    a <= b + TIE * a.abs().max(b.abs())
}

/// Point on the boundary of the Bernstein ellipse `E(alpha)` shifted by `s`.
fn shifted_ellipse(alpha: f64, s: C64, theta: f64) -> C64 {
    C64::new(alpha.cosh() * theta.cos(), alpha.sinh() * theta.sin()) + s
}

/// Ellipse parameter relative to the deformed cut: negative for boundary
/// points that dipped below the real axis.
fn signed_alpha(x: C64) -> f64 {
    let a = alpha_param(x);
    if x.im < 0.0 {
        -a
    } else {
        a
    }
}

/// Minimum of the signed parameter over the whole boundary of
/// `E(alpha) + s`, and the minimiser.
fn geometric_min(alpha: f64, s: C64) -> (f64, C64) {
    const GRID: usize = 2048;
    let g = |t: f64| signed_alpha(shifted_ellipse(alpha, s, t));
    let h = 2.0 * PI / GRID as f64;
    let mut best = (f64::INFINITY, 0.0);
    for i in 0..GRID {
        let t = i as f64 * h;
        let v = g(t);
        if v < best.0 {
            best = (v, t);
        }
    }
    // golden-section refinement on the bracketing grid cells
    let (mut a, mut b) = (best.1 - h, best.1 + h);
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (g(c), g(d));
    while b - a > 1e-10 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = g(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = g(d);
        }
    }
    let t = 0.5 * (a + b);
    let v = g(t);
    if v < best.0 {
        best = (v, t);
    }
    (best.0, shifted_ellipse(alpha, s, best.1))
}

/// `alpha_min` and the minimising point `x*`.
pub fn alpha_min_xstar(p: &ConductivityParams) -> (f64, C64) {
    let r = decay_rates(p, 1);
    (r.alpha_min, r.x_star)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Class {
    Relaxation,
    Mixed,
    Temperature,
}

impl std::fmt::Display for Class {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Class::Relaxation => "relaxation",
            Class::Mixed => "mixed",
            Class::Temperature => "temperature",
        };
        f.write_str(s)
    }
}

pub fn classify(p: &ConductivityParams) -> Class {
    decay_rates(p, 1).klass
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayRates {
    pub alpha_diag: f64,
    pub alpha_anti: f64,
    pub alpha_max: f64,
    pub alpha_min: f64,
    pub klass: Class,
    pub x_star: C64,
    /// `min(eta, 1/beta)`.
    pub lambda: f64,
}

/// Decay rates with the first Fermi pole replaced by the pole at height
/// `m pi / beta` (`m` odd); `m = 1` is the plain conductivity function.
pub fn decay_rates(p: &ConductivityParams, m: u32) -> DecayRates {
    let relax = alpha_relax(p);
    let pole = alpha_pole(p, m);
    let amax = alpha_max_m(p, m);
    let (geo, x_star) = geometric_min(amax, p.shift());
    let amin = geo.min(pole);
    let klass = if leq(relax, pole) {
        Class::Relaxation
    } else if leq(pole, geo) {
        Class::Temperature
    } else {
        Class::Mixed
    };
    let lambda = if p.beta == 0.0 { p.eta } else { p.eta.min(1.0 / p.beta) };
    DecayRates {
        alpha_diag: 0.5 * (amax + amin),
        alpha_anti: (0.5 * (amax - amin)).max(0.0),
        alpha_max: amax,
        alpha_min: amin,
        klass,
        x_star,
        lambda,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(beta: f64, eta: f64, omega: f64, ef: f64) -> ConductivityParams {
        ConductivityParams::new(beta, eta, omega, ef).unwrap()
    }

    fn rel(a: C64, b: C64) -> f64 {
        (a - b).norm() / b.norm()
    }

    #[test]
    fn fermi_examples() {
        let p = params(3.0, 1.0, 0.0, 0.2);
        assert_eq!(fermi(0.2, &p), 0.5);
        let p0 = params(0.0, 1.0, 0.0, 0.2);
        assert!([-5.0, 0.0, 0.7].iter().all(|&e| fermi(e, &p0) == 0.5));
        // 1 / (1 + e^100) from a 40-digit evaluation
        let want = 3.720075976020835962959695803863118337358874e-44;
        let got = fermi(1.0, &params(100.0, 1.0, 0.0, 0.0));
        assert!((got - want).abs() / want <= 1e-14);
        assert_eq!(fermi(-1.0, &params(1000.0, 1.0, 0.0, 0.0)), 1.0);
    }

    #[test]
    fn f_temp_examples() {
        let z = C64::new(0.0, 0.0);
        assert!((f_temp(z, z, &params(4.0, 1.0, 0.0, 0.0)) + 1.0).norm() < 1e-15);
        assert_eq!(f_temp(C64::new(0.4, 0.0), C64::new(-0.1, 0.0), &params(0.0, 1.0, 0.0, 0.0)), z);
        let want = C64::new(-0.7615941559557648881194582826047935904128, 0.0);
        let got = f_temp(C64::new(0.5, 0.0), C64::new(-0.5, 0.0), &params(4.0, 1.0, 0.0, 0.0));
        assert!(rel(got, want) <= 1e-13);
    }

    #[test]
    fn f_temp_complex_arguments() {
        let want = C64::new(-1.592329175626936312131539032034806334651, 0.3257497121250794018872037698894834245811);
        let got = f_temp(C64::new(0.3, 0.2), C64::new(-0.1, -0.05), &params(7.0, 1.0, 0.0, 0.1));
        assert!(rel(got, want) <= 1e-13);
        // nearly coincident arguments, no cancellation
        let want = C64::new(-0.00001529510666747260798156947814434527149407, 0.0);
        let got = f_temp(C64::new(0.3, 1e-9), C64::new(0.3, -1e-9), &params(50.0, 1.0, 0.0, 0.0));
        assert!(rel(got, want) <= 1e-12);
    }

    #[test]
    fn f_temp_large_beta_is_finite() {
        let p = params(1e6, 1.0, 0.0, 0.0);
        for (a, b) in [(0.9, -0.9), (0.5, 0.5), (1e-7, -1e-7), (0.3, 0.3000001)] {
            let v = f_temp(C64::new(a, 0.0), C64::new(b, 0.0), &p);
            assert!(v.re.is_finite() && v.im.is_finite());
        }
    }

    #[test]
    fn f_zeta_examples() {
        let z = C64::new(0.0, 0.0);
        let got = f_zeta(z, z, &params(4.0, 1.0, 0.0, 0.0));
        assert!((got - C64::new(0.0, 1.0)).norm() < 1e-15);
        assert_eq!(f_zeta_real(0.2, -0.7, &params(0.0, 1.0, 0.0, 0.0)), z);
        let want = C64::new(-0.2191145986577662138148363647075764030795, 0.1369466241611038836342727279422352519247);
        assert!(rel(f_zeta_real(0.3, -0.4, &params(1.0, 0.5, 0.1, 0.2)), want) <= 1e-13);
    }

    #[test]
    fn alpha_param_examples() {
        assert_eq!(alpha_param(C64::new(0.37, 0.0)), 0.0);
        assert!((alpha_param(C64::new(0.0, 0.06)) - 0.06f64.asinh()).abs() < 1e-15);
        assert!((0.06f64.asinh() - 0.0599641).abs() < 1e-7);
        for k in 0..32 {
            let t = 2.0 * PI * k as f64 / 32.0;
            let x = C64::new(0.3f64.cosh() * t.cos(), 0.3f64.sinh() * t.sin());
            assert!((alpha_param(x) - 0.3).abs() < 1e-14);
        }
    }

    #[test]
    fn alpha_max_branches() {
        let eta = 0.06f64;
        let p = params(PI / eta.sqrt(), eta, 0.0, 0.0);
        let a = alpha_param(C64::new(1.0, eta));
        let b = alpha_param(C64::new(0.0, eta.sqrt()));
        assert_eq!(alpha_max(&p), a.min(b));
        let hot = params(1e-3, eta, 0.0, 0.0);
        assert_eq!(alpha_max(&hot), a);
        let zero = params(0.0, eta, 0.0, 0.0);
        assert_eq!(alpha_max(&zero), a);
        let cold = params(1e4, 5.0, 0.0, 0.0);
        assert_eq!(alpha_max(&cold), alpha_param(C64::new(0.0, PI / 1e4)));
    }

    #[test]
    fn temperature_case_has_zero_anti_rate() {
        let eta = 0.06;
        let p = params(2.0 * PI / eta, eta, 0.0, 0.0);
        let r = decay_rates(&p, 1);
        assert_eq!(r.klass, Class::Temperature);
        assert!((r.alpha_min - r.alpha_max).abs() < 1e-12);
        assert!(r.alpha_anti < 1e-12);
        // lowest point of the shifted ellipse is i eta/2
        assert!((r.x_star - C64::new(0.0, eta / 2.0)).norm() < 1e-6);
    }

    #[test]
    fn mixed_and_near_critical_cases() {
        let eta = 0.06f64;
        assert_eq!(classify(&params(PI / (2.0 * eta), eta, 0.0, 0.0)), Class::Mixed);
        assert_eq!(classify(&params(PI / (5.0 * eta.sqrt()), eta, 0.0, 0.0)), Class::Relaxation);
        // alpha(1 + 0.06i) = 0.24616 exceeds alpha(i sqrt(0.06)) = 0.24256, so
        // beta = pi/sqrt(eta) sits just on the mixed side of the boundary
        let r = decay_rates(&params(PI / eta.sqrt(), eta, 0.0, 0.0), 1);
        assert_eq!(r.klass, Class::Mixed);
        assert!(r.alpha_min < 0.0);
    }

    #[test]
    fn empty_penetration_gives_nonnegative_geometric_branch() {
        // the pole ellipse is thin enough that the shifted copy stays above the axis
        let p = params(4.0 * PI / 0.5, 0.5, 0.0, 0.0);
        let r = decay_rates(&p, 1);
        assert!(r.alpha_min >= 0.0);
        assert!(r.x_star.im >= 0.0);
    }

    #[test]
    fn pole_multiplier_one_is_plain() {
        let p = params(20.0, 1.0, 0.0, -0.2);
        let r = decay_rates(&p, 1);
        assert_eq!(r.alpha_max, alpha_max(&p));
        assert_eq!((r.alpha_min, r.x_star), alpha_min_xstar(&p));
        assert_eq!(r.klass, classify(&p));
        let r7 = decay_rates(&p, 7);
        assert!(r7.alpha_diag > r.alpha_diag);
    }

    #[test]
    fn classification_monotone_in_beta() {
        let eta = 0.06;
        let mut rank = 0;
        for i in 0..200 {
            let beta = 0.5 * 1.04f64.powi(i);
            let k = match classify(&params(beta, eta, 0.0, 0.0)) {
                Class::Relaxation => 0,
                Class::Mixed => 1,
                Class::Temperature => 2,
            };
            assert!(k >= rank, "classification went backwards at beta = {beta}");
            rank = k;
        }
        assert_eq!(rank, 2);
    }
}
