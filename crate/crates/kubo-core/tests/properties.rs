use kubo::cheb2d::{coeffs_of, coeffs_of_F, truncation_set_greedy, truncation_set_rate};
use kubo::confunc::{alpha_param, decay_rates, f_temp, f_zeta_real, ConductivityParams};
use kubo::geometry::{enumerate_sites, make_twisted_pair, wrap_to_cell, BravaisLattice, ConfigShift, CutOut, Layer};
use kubo::hamiltonian::{environment_window, HamiltonianModel, LocalSystem, SparseOperator};
use kubo::kpm::{local_tensor, Variant};
use kubo::poles::{pole_part, pole_set, remainder_eval};
use kubo::C64;
use proptest::prelude::*;

fn cfg(cases: u32) -> ProptestConfig {
    ProptestConfig { cases, ..ProptestConfig::default() }
}

fn system(r: u32, b: [f64; 2], layer: Layer) -> LocalSystem {
    let g = make_twisted_pair(BravaisLattice::hexagonal(), 2.5, 1.0).unwrap();
    let m = HamiltonianModel::default();
    let w = environment_window(&g, &m);
    LocalSystem::build(&g, &m, CutOut::Parallelogram(r), ConfigShift { b, focal_layer: layer }, &w).unwrap()
}

fn max_hermitian_defect(a: &SparseOperator) -> f64 {
    let n = a.dim();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for (j, v) in a.row(i) {
            worst = worst.max((v - a.get(j, i).conj()).norm());
        }
    }
    worst
}

fn layer_strategy() -> impl Strategy<Value = Layer> {
    prop_oneof![Just(Layer::First), Just(Layer::Second)]
}

proptest! {
    #![proptest_config(cfg(256))]

    #[test]
    fn wrap_is_idempotent(x in -50.0..50.0f64, y in -50.0..50.0f64, twist in -30.0..30.0f64) {
        let lat = BravaisLattice::hexagonal().rotated(twist);
        let once = wrap_to_cell([x, y], &lat);
        let twice = wrap_to_cell(once, &lat);
        prop_assert_eq!(once, twice);
        let f = lat.to_fractional(once);
        prop_assert!(f.iter().all(|&t| (0.0..1.0).contains(&t)));
    }

    #[test]
    fn alpha_param_zero_exactly_on_interval(x in -1.0..=1.0f64) {
        prop_assert_eq!(alpha_param(C64::new(x, 0.0)), 0.0);
    }

    #[test]
    fn alpha_param_symmetric_and_nonnegative(x in -3.0..3.0f64, y in -3.0..3.0f64) {
        let z = C64::new(x, y);
        let a = alpha_param(z);
        prop_assert!(a >= 0.0);
        if y != 0.0 || x.abs() > 1.0 {
            prop_assert!(a > 0.0);
        }
        prop_assert!((alpha_param(z.conj()) - a).abs() <= 1e-12 * (1.0 + a));
        prop_assert!((alpha_param(-z) - a).abs() <= 1e-12 * (1.0 + a));
    }

    #[test]
    fn rate_ordering(beta in 0.0..200.0f64, eta in 0.01..2.0f64, omega in -0.5..0.5f64, ef in -0.8..0.8f64) {
        let p = ConductivityParams::new(beta, eta, omega, ef).unwrap();
        let r = decay_rates(&p, 1);
        prop_assert!(r.alpha_anti >= 0.0);
        prop_assert!(r.alpha_max >= r.alpha_diag);
        prop_assert!(r.alpha_diag >= r.alpha_min);
    }

    #[test]
    fn conductivity_function_antisymmetry(e1 in -1.0..1.0f64, e2 in -1.0..1.0f64, beta in 0.0..50.0f64, eta in 0.01..1.0f64, ef in -0.5..0.5f64) {
        let p = ConductivityParams::new(beta, eta, 0.0, ef).unwrap();
        let a = f_zeta_real(e1, e2, &p);
        let b = f_zeta_real(e2, e1, &p);
        prop_assert!((a + b.conj()).norm() <= 1e-12 * (1.0 + a.norm()));
    }

    #[test]
    fn pole_reconstruction(e1 in -1.0..1.0f64, e2 in -1.0..1.0f64, k in 0usize..4, beta in 1.0..50.0f64, ef in -0.3..0.3f64) {
        let p = ConductivityParams::new(beta, 0.1, 0.0, ef).unwrap();
        let ps = pole_set(k, &p);
        let full = f_temp(C64::new(e1, 0.0), C64::new(e2, 0.0), &p);
        let split = pole_part(e1, e2, &p, &ps) + remainder_eval(e1, e2, &p, k);
        prop_assert!((full - split).norm() <= 1e-10 * (1.0 + full.norm()));
        for z in &ps.poles {
            prop_assert!(z.im.abs() >= std::f64::consts::PI / beta * (1.0 - 1e-12));
        }
    }
}

proptest! {
    #![proptest_config(cfg(16))]

    #[test]
    fn site_count_and_seed(r in 1u32..6, bx in -3.0..3.0f64, by in -3.0..3.0f64, layer in layer_strategy()) {
        let g = make_twisted_pair(BravaisLattice::hexagonal(), 2.5, 1.0).unwrap();
        let s = enumerate_sites(&g, CutOut::Parallelogram(r), ConfigShift { b: [bx, by], focal_layer: layer }).unwrap();
        let side = (2 * r + 1) as usize;
        prop_assert_eq!(s.len(), 2 * side * side);
        prop_assert_eq!(s.positions[s.seed_index], [0.0, 0.0, g.height(layer)]);
        prop_assert_eq!(s.layer[s.seed_index], layer);
    }

    #[test]
    fn operators_are_hermitian(r in 1u32..5, bx in -1.0..1.0f64, by in -1.0..1.0f64, layer in layer_strategy()) {
        let s = system(r, [bx, by], layer);
        prop_assert!(max_hermitian_defect(&s.h) <= 1e-14);
        for m in &s.velocity {
            prop_assert!(max_hermitian_defect(m) <= 1e-14);
        }
    }

    #[test]
    fn contraction_variants_agree(bx in 0.0..1.0f64, by in 0.0..1.0f64, layer in layer_strategy(), eta in 0.3..1.0f64) {
        let s = system(4, [bx, by], layer);
        let p = ConductivityParams::new(1.0, eta, 0.0, 0.0).unwrap();
        let c = coeffs_of_F(&p, 24).unwrap();
        let k = truncation_set_greedy(&c, 1e-3).unwrap();
        let v = [&s.velocity[0], &s.velocity[1]];
        let a = local_tensor(&s.h, v, &c, &k, s.seed, Variant::Standard).unwrap().sigma;
        for variant in [Variant::LowMemory, Variant::Wedge] {
            let b = local_tensor(&s.h, v, &c, &k, s.seed, variant).unwrap().sigma;
            for (x, y) in a.iter().flatten().zip(b.iter().flatten()) {
                prop_assert!((x - y).norm() <= 1e-12 * x.norm().max(1e-12));
            }
        }
    }

    #[test]
    fn real_kernel_has_real_coefficients(a in -1.0..1.0f64, b in -1.0..1.0f64) {
        let c = coeffs_of(|x, y| C64::new((a * x + b * y).exp() / (2.0 + x * y), 0.0), 24).unwrap();
        for (_, _, v) in c.iter() {
            prop_assert!(v.im.abs() <= 1e-12);
        }
    }

    #[test]
    fn rate_sets_nest(beta in 0.5..20.0f64, eta in 0.05..1.0f64, t1 in 1e-8..1e-2f64, t2 in 1e-8..1e-2f64) {
        let p = ConductivityParams::new(beta, eta, 0.0, 0.0).unwrap();
        let r = decay_rates(&p, 1);
        let (big, small) = if t1 >= t2 { (t1, t2) } else { (t2, t1) };
        let coarse = truncation_set_rate(&r, big).unwrap();
        let fine = truncation_set_rate(&r, small).unwrap();
        for &(k1, k2) in coarse.pairs() {
            prop_assert!(fine.contains(k1, k2));
        }
    }

    #[test]
    fn greedy_drops_at_most_eps(beta in 0.5..20.0f64, eta in 0.1..1.0f64, eps in 1e-6..1e-1f64) {
        let p = ConductivityParams::new(beta, eta, 0.0, 0.0).unwrap();
        let c = coeffs_of_F(&p, 48).unwrap();
        let k = truncation_set_greedy(&c, eps).unwrap();
        prop_assert!(c.dropped_mass(&k) <= eps * (1.0 + 1e-12));
    }
}
