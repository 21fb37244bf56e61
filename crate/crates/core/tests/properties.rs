//! Property tests for the operator, calculus, cone and flow invariants.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use conic_fpme::cone::{
    assemble_cone_laplacian, dilation_covariance_check, spectrum_check, weight_window, ConeError, ConeFunction,
    ConeGrid, ConeOperator, CrossSection, Extension,
};
use conic_fpme::fpme::{build_frac_generator, chain_rule_rate, run_with_generator, step_semi_implicit, FpmeConfig};
use conic_fpme::funcalc::{
    frac_power, frac_resolvent_apply, inv_frac_power, FuncalcError, PowerMethod, PowerSpec, QuadratureRule, ResolventPath,
};
use conic_fpme::linop::{spectral_norm, CMatrix, CVector, DenseOperator, C64};
use conic_fpme::sectorial::{
    laurent_coefficients, rademacher_rbound_estimate, sectorial_bound_probe, verify_laurent_identities,
};

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

fn complex_matrix(dim: usize) -> impl Strategy<Value = CMatrix> {
    prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), dim * dim)
        .prop_map(move |v| CMatrix::from_iterator(dim, dim, v.into_iter().map(|(a, b)| C64::new(a, b))))
}

/// `Q diag(d) Q^*` with a unitary from the QR factor of a random matrix.
fn hermitian(dim: usize, lo: f64, hi: f64) -> impl Strategy<Value = (CMatrix, Vec<f64>)> {
    (complex_matrix(dim), prop::collection::vec(lo.ln()..hi.ln(), dim)).prop_map(|(g, logs)| {
        let n = g.nrows();
        let q = (g + CMatrix::identity(n, n) * c(0.1)).qr().q();
        let d: Vec<f64> = logs.into_iter().map(f64::exp).collect();
        let diag = CMatrix::from_diagonal(&DVector::from_iterator(d.len(), d.iter().map(|&x| c(x))));
        (&q * diag * q.adjoint(), d)
    })
}

fn spd(max_dim: usize, lo: f64, hi: f64) -> impl Strategy<Value = DenseOperator> {
    (1..=max_dim).prop_flat_map(move |n| hermitian(n, lo, hi)).prop_map(|(a, _)| DenseOperator::new(a).unwrap())
}

fn rel(a: &CMatrix, b: &CMatrix) -> f64 {
    (a - b).norm() / b.norm()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn shifted_solve_reproduces_rhs(a in spd(32, 1e-2, 1e3), re in 1e-3..1e2f64, im in -1e2..1e2f64, seed in 0u64..1000) {
        let lambda = C64::new(re, im);
        let v = CVector::from_fn(a.dim(), |i, _| C64::new(((i as u64 + seed) % 7) as f64 - 3.0, 1.0));
        let x = a.shifted_solve(lambda, &v).unwrap();
        let back = a.entries() * &x + &x * lambda;
        prop_assert!((back - &v).norm() <= 1e-10 * v.norm());
    }

    #[test]
    fn operator_norm_is_submultiplicative(n in 1usize..10, seed in any::<u64>()) {
        let mut s = seed;
        let mut next = || { s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407); ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5 };
        let a = CMatrix::from_fn(n, n, |_, _| C64::new(next(), next()));
        let b = CMatrix::from_fn(n, n, |_, _| C64::new(next(), next()));
        let (oa, ob) = (DenseOperator::new(a.clone()).unwrap(), DenseOperator::new(b.clone()).unwrap());
        let ab = DenseOperator::new(a * b).unwrap();
        prop_assert!(ab.operator_norm() <= oa.operator_norm() * ob.operator_norm() + 1e-10);
    }

    #[test]
    fn normal_eigenvectors_are_metric_unitary((h, _) in (2usize..10).prop_flat_map(|n| hermitian(n, 1e-1, 1e1)), ws in prop::collection::vec(0.1..10.0f64, 10)) {
        // A = W^{-1/2} H W^{1/2} is self-adjoint in the W-weighted inner product.
        let n = h.nrows();
        let w: Vec<f64> = ws[..n].to_vec();
        let a = CMatrix::from_fn(n, n, |i, j| h[(i, j)] * (w[j].sqrt() / w[i].sqrt()));
        let op = DenseOperator::new(a).unwrap().with_weights(w.clone()).unwrap();
        let eig = op.eigen_decompose().unwrap();
        let v = &eig.right_vectors;
        let wm = CMatrix::from_diagonal(&DVector::from_iterator(n, w.iter().map(|&x| c(x))));
        let gram = v.adjoint() * wm * v;
        prop_assert!((gram - CMatrix::identity(n, n)).norm() <= 1e-8);
    }

    #[test]
    fn power_semigroup(a in spd(8, 1e-2, 1e2), s in 0.05..0.45f64, t in 0.05..0.45f64) {
        let ps = frac_power(&a, &PowerSpec::balakrishnan(s), None).unwrap();
        let pt = frac_power(&a, &PowerSpec::balakrishnan(t), None).unwrap();
        let pst = frac_power(&a, &PowerSpec::balakrishnan(s + t), None).unwrap();
        prop_assert!(rel(&(ps.entries() * pt.entries()), pst.entries()) <= 1e-7);
    }

    #[test]
    fn power_times_inverse_power_is_identity(a in spd(8, 1e-2, 1e2), s in 0.05..0.95f64) {
        let p = frac_power(&a, &PowerSpec::balakrishnan(s), None).unwrap();
        let q = inv_frac_power(&a, &PowerSpec::balakrishnan(s), None).unwrap();
        let id = CMatrix::identity(a.dim(), a.dim());
        prop_assert!((p.entries() * q.entries() - &id).norm() / id.norm() <= 1e-8);
    }

    #[test]
    fn resolvent_paths_agree(a in spd(8, 1e-2, 1e3), sigma in 0.1..0.9f64, r in -2.0..3.0f64, frac in -0.95..0.95f64) {
        let lambda = C64::from_polar(10f64.powf(r), frac * PI * (1.0 - sigma));
        let v = CVector::from_element(a.dim(), c(1.0));
        let half = frac_resolvent_apply(&a, sigma, lambda, &v, ResolventPath::HalfLine).unwrap();
        let ray = frac_resolvent_apply(&a, sigma, lambda, &v, ResolventPath::Ray(0.3)).unwrap();
        prop_assert!((&half - &ray).norm() <= 1e-7 * ray.norm());
    }

    #[test]
    fn sector_bound_of_spd_is_one(a in spd(6, 1e-2, 1e2), theta in 0.0..(PI / 2.0)) {
        let r = sectorial_bound_probe(&a, theta, 16, (1e-3, 1e3)).unwrap();
        prop_assert!(!r.unbounded);
        prop_assert!(r.estimated_k <= 1.0 + 1e-8, "K = {}", r.estimated_k);
    }

    #[test]
    fn rbound_of_scalar_family_is_the_largest_scalar(scalars in prop::collection::vec(-3.0..3.0f64, 1..7), dim in 1usize..5, seed in any::<u64>()) {
        let family: Vec<DenseOperator> = scalars.iter().map(|&s| DenseOperator::identity(dim).scaled(c(s))).collect();
        let est = rademacher_rbound_estimate(&family, 4, 2, seed).unwrap();
        let sup = scalars.iter().map(|s| s.abs()).fold(0.0, f64::max);
        prop_assert!(est.max_ratio <= sup + 1e-8);
        prop_assert!(est.max_ratio >= sup - 1e-8);
    }

    #[test]
    fn rbound_of_normal_family_within_sup(a in spd(6, 1e-1, 1e1), seed in any::<u64>()) {
        let family: Vec<DenseOperator> = (0..5)
            .map(|k| {
                let lambda = C64::from_polar(10f64.powf(k as f64 - 2.0), 0.3 * (k as f64 - 2.0));
                a.with_entries(a.shifted_inverse(lambda).unwrap() * lambda).unwrap()
            })
            .collect();
        let sup = family.iter().map(|t| t.operator_norm()).fold(0.0, f64::max);
        let est = rademacher_rbound_estimate(&family, 6, 3, seed).unwrap();
        prop_assert!(est.max_ratio <= sup + 1e-8);
    }

    #[test]
    fn laurent_resummation_matches_resolvent(rest in prop::collection::vec(1.0..5.0f64, 1..5), re in -0.3..0.3f64, im in -0.3..0.3f64) {
        prop_assume!(re.hypot(im) > 0.05);
        let mut d = vec![0.0];
        d.extend(rest);
        let a = DenseOperator::diagonal(&d);
        let exp = laurent_coefficients(&a, c(0.0), 1, 40, None, 128).unwrap();
        let lambda = C64::new(re, im);
        let exact = a.shifted_inverse(lambda).unwrap();
        prop_assert!(spectral_norm(&(exp.resum(lambda) - &exact)) <= 1e-8 * spectral_norm(&exact));
    }
}

/// Error of the explicit exp-substituted rule as the node count doubles. Rules
/// whose embedded half-rule check fails report that difference, which is the
/// error estimate of the coarser rule.
#[test]
fn doubling_nodes_converges_fast() {
    let d = [0.05, 0.7, 3.0, 40.0];
    let a = DenseOperator::diagonal(&d);
    let sigma = 0.5;
    let exact = CMatrix::from_diagonal(&DVector::from_iterator(4, d.iter().map(|x| c(x.sqrt()))));
    let errs: Vec<f64> = [49, 97, 193, 385, 769]
        .iter()
        .map(|&n| {
            let rule = QuadratureRule::half_line_exp(0.05f64.ln() - 64.0, 40f64.ln() + 64.0, n).unwrap();
            match frac_power(&a, &PowerSpec::balakrishnan(sigma), Some(&rule)) {
                Ok(p) => rel(p.entries(), &exact),
                Err(FuncalcError::QuadratureNotConverged { difference }) => difference,
                Err(e) => panic!("{e}"),
            }
        })
        .collect();
    for w in errs.windows(2) {
        assert!(w[1] <= (w[0] / 10.0).max(1e-10), "{errs:?}");
    }
}

#[test]
fn laurent_residuals_shrink_with_nodes() {
    let a = DenseOperator::from_rows(&[&[0.0, 1.0, 0.0], &[0.0, 2.0, 1.0], &[0.0, 0.0, 3.0]]).unwrap();
    let worst = |nodes| {
        let e = laurent_coefficients(&a, c(0.0), 1, 3, Some(1.8), nodes).unwrap();
        verify_laurent_identities(&e, &a).values().copied().fold(0.0, f64::max)
    };
    // Contour radius 1.8 against the eigenvalue 2 makes the geometric rate slow.
    let (coarse, fine) = (worst(64), worst(128));
    assert!(fine * 4.0 <= coarse || fine <= 1e-13, "{coarse:e} -> {fine:e}");
}

fn circle_cone(count: usize, gamma: f64, max_mode: usize, ext: Extension) -> Result<ConeOperator, ConeError> {
    let grid = ConeGrid::new(1e-3, count, gamma)?;
    let cs = CrossSection::circle(Some(max_mode));
    if !weight_window(&cs)?.contains(gamma) {
        return Err(ConeError::GammaOutsideWindow { gamma, lo: -1.0, hi: 0.0 });
    }
    assemble_cone_laplacian(&cs, &grid, ext)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn kernel_dichotomy_across_window(gamma in -0.99..-0.01f64, count in 32usize..80) {
        let with = circle_cone(count, gamma, 3, Extension::WithCOmega).unwrap();
        let without = circle_cone(count, gamma, 3, Extension::Minimal).unwrap();
        prop_assert_eq!(spectrum_check(&with).kernel_dimension, 1);
        prop_assert_eq!(spectrum_check(&without).kernel_dimension, 0);
    }

    #[test]
    fn dilation_covariance_holds(re in 0.1..5.0f64, im in -5.0..5.0f64, k in 1usize..5, gamma in -0.9..-0.1f64) {
        let op = circle_cone(128, gamma, 3, Extension::WithCOmega).unwrap();
        let r = dilation_covariance_check(&op, C64::new(re, im), k).unwrap();
        prop_assert!(r <= 1e-10, "residual {r:e}");
    }

    #[test]
    fn constants_are_fixed_points(m in 0.5..3.0f64, sigma in 0.55..0.95f64, dt in 1e-4..1e-1f64, level in 0.1..10.0f64) {
        let op = circle_cone(40, -0.5, 0, Extension::WithCOmega).unwrap();
        let gen = build_frac_generator(&op, sigma, 0, PowerMethod::EigenOracle).unwrap();
        let cfg = FpmeConfig::new(sigma, m, dt, 10.0 * dt, -0.5);
        let mut w = ConeFunction::radial(&op, &[0.0; 40], level.powf(m)).unwrap();
        for _ in 0..5 {
            w = step_semi_implicit(&w, &cfg, &gen).unwrap().0;
        }
        prop_assert!((w.c_omega_part[0] - c(level.powf(m))).norm() <= 1e-10 * level.powf(m));
        prop_assert!(w.mode(0, 0).unwrap().norm() <= 1e-10 * level.powf(m));
    }
}

#[test]
fn sector_bound_stable_under_refinement() {
    let ks: Vec<f64> = [64, 128, 256]
        .iter()
        .map(|&n| {
            let op = circle_cone(n, -0.5, 0, Extension::WithCOmega).unwrap();
            let r = sectorial_bound_probe(&op.positive_block(0), 0.75 * PI, 16, (1e-3, 1e3)).unwrap();
            assert!(!r.unbounded);
            r.estimated_k
        })
        .collect();
    for w in ks.windows(2) {
        assert!((w[1] - w[0]).abs() <= 0.2 * w[0], "{ks:?}");
    }
}

/// Away from the tip, where `L_σ w` of this data is bounded, the chain-rule
/// rate matches the implicit difference quotient to first order in `dt`.
#[test]
fn chain_rule_matches_implicit_step() {
    let op = circle_cone(64, -0.5, 0, Extension::WithCOmega).unwrap();
    let sigma = 0.75;
    let m = 2.0;
    let gen = build_frac_generator(&op, sigma, 0, PowerMethod::EigenOracle).unwrap();
    let xs = op.grid.points();
    let u0: Vec<f64> = xs.iter().map(|x| x * (1.0 - x)).collect();
    let w0: Vec<f64> = u0.iter().map(|u| (1.0 + u).powf(m) - 1.0).collect();
    let w0 = ConeFunction::radial(&op, &w0, 1.0).unwrap();
    let rate = chain_rule_rate(&w0, &FpmeConfig::new(sigma, m, 1e-3, 1e-3, -0.5), &gen).unwrap();
    let start = ConeFunction::radial(&op, &u0, 1.0).unwrap();
    let interior: Vec<usize> = (0..xs.len()).filter(|&i| xs[i] >= 0.05).collect();
    let err = |dt: f64| {
        let cfg = FpmeConfig::new(sigma, m, dt, dt, -0.5);
        let rec = run_with_generator(&start, &cfg, &op, &gen).unwrap();
        let (a, b) = (&rec.physical[0][0], &rec.physical[1][0]);
        interior.iter().map(|&i| ((b[i] - a[i]) / dt - rate[0][i]).abs()).fold(0.0, f64::max)
    };
    let (e1, e2) = (err(1e-4), err(5e-5));
    let scale = interior.iter().map(|&i| rate[0][i].abs()).fold(0.0, f64::max);
    assert!(e1 <= 0.05 * scale, "{e1:e} vs {scale:e}");
    let ratio = e1 / e2;
    assert!((1.6..=2.4).contains(&ratio), "ratio {ratio}");
}

#[test]
fn weighted_symmetric_real_blocks() {
    // Real-valued check that the radial block is symmetric in its metric.
    let op = circle_cone(48, -0.5, 2, Extension::WithCOmega).unwrap();
    for j in 0..op.mode_count() {
        let b = op.block(j);
        let w = b.inner_weights().unwrap();
        let n = b.dim();
        let s = DMatrix::from_fn(n, n, |i, k| b.entries()[(i, k)].re * w[i]);
        assert!((&s - s.transpose()).norm() <= 1e-9 * s.norm());
    }
}
