//! Invariant suite behind `conic-fpme verify`, plus the FPME scenarios shared
//! with the `fpme` and `decay` subcommands.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::config::{InitialData, RunConfig};
use crate::cone::{
    asymptotics_exponents, assemble_cone_laplacian, dilation_covariance_check, mu_exponents, spectrum_check,
    weight_window, ConeFunction, ConeGrid, ConeOperator, CrossSection, Extension,
};
use crate::fpme::{build_frac_generator, commutator_decay_scan, run_with_generator, FpmeConfig, FracGenerator};
use crate::funcalc::{
    frac_power, frac_resolvent_apply, shift_comparison_probe, PowerMethod, PowerSpec, ResolventPath,
};
use crate::linop::{c64, CMatrix, CVector, DenseOperator, C64};
use crate::sectorial::{
    laurent_coefficients, power_resolvent_decay_fit, rademacher_rbound_estimate_with, simple_pole_check,
    verify_laurent_identities, SignSampling, MONTE_CARLO_DRAWS,
};

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub id: u32,
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub limit: f64,
    pub detail: String,
}

impl Check {
    fn new(id: u32, name: &str, value: f64, limit: f64, passed: bool, detail: String) -> Self {
        Self {
            id,
            name: name.into(),
            passed,
            value,
            limit,
            detail,
        }
    }

    fn failed(id: u32, name: &str, err: impl std::fmt::Display) -> Self {
        Self::new(id, name, f64::NAN, f64::NAN, false, format!("error: {err}"))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub all_passed: bool,
    pub checks: Vec<Check>,
}

/// Hermitian positive matrix `Q diag(d) Q^*` with `d` log-uniform in `[lo, hi]`,
/// returned with its eigenvalues and eigenvectors.
pub fn random_normal(rng: &mut ChaCha8Rng, dim: usize, lo: f64, hi: f64) -> (CMatrix, Vec<f64>, CMatrix) {
    let g = CMatrix::from_fn(dim, dim, |_, _| c64(rng.sample(StandardNormal), rng.sample(StandardNormal)));
    let q = g.qr().q();
    let d: Vec<f64> = (0..dim)
        .map(|_| (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp())
        .collect();
    (spectral(&q, &d, |x| x), d, q)
}

/// `Q diag(f(d)) Q^*`.
pub fn spectral(q: &CMatrix, d: &[f64], f: impl Fn(f64) -> f64) -> CMatrix {
    let diag = CMatrix::from_diagonal(&CVector::from_iterator(d.len(), d.iter().map(|&x| c64(f(x), 0.0))));
    q * diag * q.adjoint()
}

fn rel(a: &CMatrix, b: &CMatrix) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

fn vec_rel(a: &CVector, b: &CVector) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

/// Lowest eigenpair of the radial part of `-Δ_0`, scaled so that `max ψ = 1`.
pub fn lowest_radial_mode(op: &ConeOperator) -> Result<(Vec<f64>, f64), crate::linop::LinopError> {
    let m = op.grid.count;
    let eig = op.positive_block(0).eigen_decompose()?;
    // The kernel vector lives on the constant unknown; radial modes on the grid.
    let (k, kappa) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .filter(|(k, z)| {
            let col = eig.right_vectors.column(*k);
            z.re > 0.0 && col.rows(0, m).norm() > 0.5 * col.norm()
        })
        .min_by(|a, b| a.1.re.total_cmp(&b.1.re))
        .map(|(k, z)| (k, z.re))
        .expect("radial block has positive eigenvalues");
    let col = eig.right_vectors.column(k);
    let peak = (0..m).map(|i| col[i].re).fold(0.0, |a: f64, b| if b.abs() > a.abs() { b } else { a });
    Ok(((0..m).map(|i| col[i].re / peak).collect(), kappa))
}

pub fn initial_data(op: &ConeOperator, kind: InitialData, amplitude: f64) -> Result<ConeFunction, crate::linop::LinopError> {
    let xs = op.grid.points();
    let m = op.grid.count;
    let (h, c): (Vec<f64>, f64) = match kind {
        InitialData::Constant => (vec![0.0; m], amplitude),
        InitialData::Bump => (xs.iter().map(|x| amplitude * x * (1.0 - x)).collect(), 1.0),
        InitialData::Eigenmode => {
            let (psi, _) = lowest_radial_mode(op)?;
            (psi.iter().map(|p| amplitude * p).collect(), 1.0)
        }
    };
    Ok(ConeFunction::radial(op, &h, c).expect("grid-sized profile"))
}

/// Coefficient of `ψ` in the radial part of `u` (metric projection).
pub fn mode_amplitude(op: &ConeOperator, u: &ConeFunction, psi: &[f64]) -> f64 {
    let w = op.block(0).inner_weights().expect("cone blocks carry weights");
    let v = u.mode(0, 0).expect("radial mode present");
    let num: f64 = psi.iter().enumerate().map(|(i, p)| w[i] * p * v[i].re).sum();
    let den: f64 = psi.iter().enumerate().map(|(i, p)| w[i] * p * p).sum();
    num / den
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayReport {
    pub t_mid: f64,
    pub alpha_mid: Option<f64>,
    pub predicted_lower_bound: f64,
    pub passed: bool,
    pub times: Vec<f64>,
    pub alphas: Vec<Option<f64>>,
}

/// Tip exponent of `u_H` at mid-trajectory against `γ + 2σ - (n+1)/2 - 0.1`.
pub fn decay_report(cfg: &FpmeConfig, op: &ConeOperator, u0: &ConeFunction, gen: &FracGenerator) -> Result<DecayReport, crate::fpme::FpmeError> {
    let rec = run_with_generator(u0, cfg, op, gen)?;
    if let Some(e) = rec.failure {
        return Err(e);
    }
    let t_mid = 0.5 * cfg.t_end;
    let k = rec
        .times
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - t_mid).abs().total_cmp(&(b.1 - t_mid).abs()))
        .map(|(k, _)| k)
        .unwrap_or(0);
    let n = op.cross_section.n as f64;
    let bound = cfg.gamma + 2.0 * cfg.sigma - (n + 1.0) / 2.0 - 0.1;
    let alpha_mid = rec.diagnostics[k].tip_alpha;
    Ok(DecayReport {
        t_mid: rec.times[k],
        alpha_mid,
        predicted_lower_bound: bound,
        passed: alpha_mid.is_some_and(|a| a >= bound),
        times: rec.times.clone(),
        alphas: rec.diagnostics.iter().map(|d| d.tip_alpha).collect(),
    })
}

fn check_fracpow(rng: &mut ChaCha8Rng) -> Check {
    const NAME: &str = "fractional power vs eigen oracle";
    let mut worst: f64 = 0.0;
    for k in 0..50 {
        let dim = 1 + (k * 7) % 16;
        let (a, d, q) = random_normal(rng, dim, 1e-2, 1e4);
        let op = match DenseOperator::new(a) {
            Ok(op) => op,
            Err(e) => return Check::failed(1, NAME, e),
        };
        for sigma in [0.25, 0.5, 0.75] {
            match frac_power(&op, &PowerSpec::balakrishnan(sigma), None) {
                Ok(p) => worst = worst.max(rel(p.entries(), &spectral(&q, &d, |x| x.powf(sigma)))),
                Err(e) => return Check::failed(1, NAME, e),
            }
        }
    }
    Check::new(1, NAME, worst, 1e-8, worst <= 1e-8, "50 random normal matrices, sigma in {0.25, 0.5, 0.75}".into())
}

fn check_resolvent(rng: &mut ChaCha8Rng) -> Check {
    const NAME: &str = "fractional resolvent identity and path independence";
    let mut worst_identity: f64 = 0.0;
    let mut worst_paths: f64 = 0.0;
    for (k, sigma) in [0.25, 0.5, 0.75].into_iter().enumerate() {
        let (a, _, _) = random_normal(rng, 3 + 2 * k, 1e-2, 1e4);
        let op = DenseOperator::new(a).expect("finite");
        let power = match frac_power(&op, &PowerSpec::balakrishnan(sigma), None) {
            Ok(p) => p,
            Err(e) => return Check::failed(2, NAME, e),
        };
        for _ in 0..20 {
            let r = 10f64.powf(-2.0 + 4.0 * rng.random::<f64>());
            let psi = (2.0 * rng.random::<f64>() - 1.0) * 0.9 * PI * (1.0 - sigma);
            let lambda = C64::from_polar(r, psi);
            let v = CVector::from_fn(op.dim(), |_, _| c64(rng.sample(StandardNormal), rng.sample(StandardNormal)));
            let run = || -> Result<(f64, f64), String> {
                let auto = frac_resolvent_apply(&op, sigma, lambda, &v, ResolventPath::Auto).map_err(|e| e.to_string())?;
                let direct = power.shifted_solve(lambda, &v).map_err(|e| e.to_string())?;
                let half = frac_resolvent_apply(&op, sigma, lambda, &v, ResolventPath::HalfLine).map_err(|e| e.to_string())?;
                let ray = frac_resolvent_apply(&op, sigma, lambda, &v, ResolventPath::Ray(0.5)).map_err(|e| e.to_string())?;
                Ok((vec_rel(&auto, &direct), vec_rel(&half, &ray)))
            };
            match run() {
                Ok((i, p)) => {
                    worst_identity = worst_identity.max(i);
                    worst_paths = worst_paths.max(p);
                }
                Err(e) => return Check::failed(2, NAME, e),
            }
        }
    }
    let worst = worst_identity.max(worst_paths);
    Check::new(
        2,
        NAME,
        worst,
        1e-7,
        worst <= 1e-7,
        format!("identity {worst_identity:.3e}, half-line vs ray {worst_paths:.3e}"),
    )
}

fn check_shift_law() -> Check {
    const NAME: &str = "shifted power scaling law";
    let a = DenseOperator::diagonal(&[0.0, 1.0]);
    let cs: Vec<f64> = (0..7).map(|k| 10f64.powf(-4.0 + 0.5 * k as f64)).collect();
    let mut worst: f64 = 0.0;
    let mut detail = Vec::new();
    for sigma in [0.25, 0.5] {
        match shift_comparison_probe(&a, sigma, &cs) {
            Ok(r) => {
                worst = worst.max((r.slope - sigma).abs());
                detail.push(format!("sigma {sigma}: slope {:.4}", r.slope));
            }
            Err(e) => return Check::failed(3, NAME, e),
        }
    }
    Check::new(3, NAME, worst, 0.02, worst <= 0.02, detail.join(", "))
}

fn check_decay_fit(rng: &mut ChaCha8Rng) -> Check {
    const NAME: &str = "power-resolvent decay";
    let mut worst = f64::NEG_INFINITY;
    for k in 0..10 {
        let (a, _, _) = random_normal(rng, 2 + k, 1e-1, 1e2);
        let op = DenseOperator::new(a.map(|z| c64(z.re, 0.0))).expect("finite");
        let op = op.with_entries((op.entries() + op.entries().adjoint()) * c64(0.5, 0.0)).expect("same dim");
        let sigma = [0.25, 0.5, 0.75][k % 3];
        for theta in [0.0, PI / 2.0] {
            match power_resolvent_decay_fit(&op, sigma, theta, 24) {
                Ok(fit) => worst = worst.max(fit.exponent_fit + (1.0 - sigma)),
                Err(e) => return Check::failed(4, NAME, e),
            }
        }
    }
    Check::new(
        4,
        NAME,
        worst,
        0.05,
        worst <= 0.05,
        "max of slope + (1 - sigma) over SPD samples".into(),
    )
}

fn check_laurent(op: &ConeOperator) -> Check {
    const NAME: &str = "Laurent identities and simple pole at 0";
    let nil = DenseOperator::from_rows(&[&[0.0, 1.0], &[0.0, 0.0]]).expect("2x2");
    let cases: [(DenseOperator, usize); 3] = [
        (DenseOperator::diagonal(&[0.0, 2.0]), 1),
        (DenseOperator::identity(2), 1),
        (nil, 2),
    ];
    let mut small: f64 = 0.0;
    for (a, order) in &cases {
        match laurent_coefficients(a, c64(0.0, 0.0), *order, 2, None, 64) {
            Ok(exp) => {
                let r = verify_laurent_identities(&exp, a);
                small = small.max(r.values().copied().fold(0.0, f64::max));
            }
            Err(e) => return Check::failed(5, NAME, e),
        }
    }
    let block = op.positive_block(0);
    let (cone_res, below, simple) = match laurent_coefficients(&block, c64(0.0, 0.0), 1, 2, None, 64)
        .map_err(|e| e.to_string())
        .and_then(|exp| {
            let r = verify_laurent_identities(&exp, &block);
            let pole = simple_pole_check(&block, 1e-6).map_err(|e| e.to_string())?;
            Ok((r.values().copied().fold(0.0, f64::max), exp.below_order_norm, pole.is_simple))
        }) {
        Ok(t) => t,
        Err(e) => return Check::failed(5, NAME, e),
    };
    let passed = small <= 1e-8 && cone_res <= 1e-6 && below <= 1e-8 && simple;
    Check::new(
        5,
        NAME,
        cone_res,
        1e-6,
        passed,
        format!("examples {small:.3e}; cone {cone_res:.3e}, B[-2] {below:.3e}, simple {simple}"),
    )
}

fn check_rbound(gen: &FracGenerator, theta: f64, seed: u64) -> Check {
    const NAME: &str = "R-bound of the fractional resolvent family";
    let a = &gen.operator;
    let psi_max = PI - (PI - theta) * gen.sigma;
    let mut family = Vec::new();
    let mut sup: f64 = 0.0;
    for k in 0..8 {
        let psi = 0.9 * psi_max * (2.0 * k as f64 / 7.0 - 1.0);
        let lambda = C64::from_polar(10f64.powf(-1.0 + 0.5 * k as f64), psi);
        let t = match a.shifted_inverse(lambda) {
            Ok(inv) => a.with_entries(inv * lambda).expect("same dim"),
            Err(e) => return Check::failed(6, NAME, e),
        };
        sup = sup.max(t.operator_norm());
        family.push(t);
    }
    let ex = rademacher_rbound_estimate_with(&family, 8, 2, seed, SignSampling::Exhaustive);
    let mc = rademacher_rbound_estimate_with(&family, 8, 2, seed, SignSampling::MonteCarlo(MONTE_CARLO_DRAWS));
    let (ex, mc) = match (ex, mc) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return Check::failed(6, NAME, e),
    };
    let spread = (ex.max_ratio - mc.max_ratio).abs() / ex.max_ratio;
    let passed = ex.max_ratio.is_finite() && ex.max_ratio <= sup + 1e-6 && spread <= 0.05;
    Check::new(
        6,
        NAME,
        ex.max_ratio,
        sup + 1e-6,
        passed,
        format!("sup norm {sup:.6}, Monte Carlo {:.6} (spread {spread:.3e})", mc.max_ratio),
    )
}

fn check_geometry() -> Check {
    const NAME: &str = "cone geometry formulas";
    let circle = CrossSection::circle(Some(4));
    let sphere = CrossSection::sphere(Some(4));
    let mut err: f64 = 0.0;
    err = err.max((mu_exponents(&circle)[1] - 1.0).abs());
    err = err.max((mu_exponents(&sphere)[1] - 1.5).abs());
    for (cs, lo, hi) in [(&circle, -1.0, 0.0), (&sphere, -0.5, 0.5)] {
        match weight_window(cs) {
            Ok(w) => {
                err = err.max((w.gamma_lo - lo).abs()).max((w.gamma_hi - hi).abs()).max((w.sigma0 - 0.5).abs());
            }
            Err(e) => return Check::failed(7, NAME, e),
        }
    }
    let qs = |cs: &CrossSection, g: f64| -> Vec<f64> {
        let mut q: Vec<f64> = asymptotics_exponents(cs, g).iter().map(|e| e.q).collect();
        q.dedup();
        q
    };
    let q_ok = qs(&circle, -0.5) == vec![0.0, 1.0] && qs(&sphere, 0.0) == vec![0.0, 1.0];
    Check::new(7, NAME, err, 1e-14, err <= 1e-14 && q_ok, format!("exponent sets match: {q_ok}"))
}

fn check_dilation(cs: &CrossSection, x_min: f64, gamma: f64) -> Check {
    const NAME: &str = "dilation covariance on the model cone";
    let grid = match ConeGrid::new(x_min, 256, gamma) {
        Ok(g) => g,
        Err(e) => return Check::failed(8, NAME, e),
    };
    let op = match assemble_cone_laplacian(&cs.truncated(4), &grid, Extension::WithCOmega) {
        Ok(op) => op,
        Err(e) => return Check::failed(8, NAME, e),
    };
    let mut worst: f64 = 0.0;
    for k in [1, 2, 4] {
        match dilation_covariance_check(&op, c64(1.0, 0.5), k) {
            Ok(r) => worst = worst.max(r),
            Err(e) => return Check::failed(8, NAME, e),
        }
    }
    Check::new(8, NAME, worst, 1e-10, worst <= 1e-10, "k in {1, 2, 4}, 256 points".into())
}

fn check_dichotomy(x_min: f64, count: usize) -> Check {
    const NAME: &str = "extension kernel dichotomy";
    let cs = CrossSection::circle(Some(4));
    let mut ok = true;
    let mut detail = Vec::new();
    for gamma in [-0.75, -0.5, -0.25] {
        let grid = match ConeGrid::new(x_min, count, gamma) {
            Ok(g) => g,
            Err(e) => return Check::failed(9, NAME, e),
        };
        for (ext, expected) in [(Extension::WithCOmega, cs.components), (Extension::Minimal, 0)] {
            match assemble_cone_laplacian(&cs, &grid, ext) {
                Ok(op) => {
                    let r = spectrum_check(&op);
                    ok &= r.kernel_dimension == expected && r.ok;
                    detail.push(format!("{gamma}/{ext:?}: {}", r.kernel_dimension));
                }
                Err(e) => return Check::failed(9, NAME, e),
            }
        }
    }
    Check::new(9, NAME, if ok { 0.0 } else { 1.0 }, 0.0, ok, detail.join(", "))
}

fn check_linear_mode(op: &ConeOperator, gen: &FracGenerator) -> Check {
    const NAME: &str = "linear-mode benchmark";
    let t_end = 0.5;
    let run = || -> Result<(f64, f64), String> {
        let (psi, kappa) = lowest_radial_mode(op).map_err(|e| e.to_string())?;
        let half: Vec<f64> = psi.iter().map(|p| 0.5 * p).collect();
        let u0 = ConeFunction::radial(op, &half, 1.0).map_err(|e| e.to_string())?;
        let exact = (-kappa.powf(gen.sigma) * t_end).exp();
        let mut errs = Vec::new();
        for dt in [4e-4, 2e-4, 1e-4] {
            let cfg = FpmeConfig {
                record_every: usize::MAX,
                ..FpmeConfig::new(gen.sigma, 1.0, dt, t_end, op.grid.gamma)
            };
            let rec = run_with_generator(&u0, &cfg, op, gen).map_err(|e| e.to_string())?;
            if let Some(e) = rec.failure {
                return Err(e.to_string());
            }
            let a = mode_amplitude(op, rec.snapshots.last().expect("final snapshot"), &half);
            errs.push(a - exact);
        }
        Ok((errs[2].abs() / exact, (errs[0] - errs[1]) / (errs[1] - errs[2])))
    };
    match run() {
        Ok((err, ratio)) => Check::new(
            10,
            NAME,
            err,
            1e-3,
            err <= 1e-3 && (1.8..=2.2).contains(&ratio),
            format!("sigma {}, dt 1e-4: relative error {err:.3e}, Richardson ratio {ratio:.4}", gen.sigma),
        ),
        Err(e) => Check::failed(10, NAME, e),
    }
}

fn check_steady_and_positive(op: &ConeOperator, gen: &FracGenerator, cfg: &FpmeConfig) -> (Check, Option<DecayReport>) {
    const NAME: &str = "steady state and positivity";
    let steady = || -> Result<f64, String> {
        let u0 = ConeFunction::radial(op, &vec![0.0; op.grid.count], 2.0).map_err(|e| e.to_string())?;
        let c = FpmeConfig {
            dt: 1e-3,
            t_end: 1.0,
            record_every: usize::MAX,
            ..cfg.clone()
        };
        let rec = run_with_generator(&u0, &c, op, gen).map_err(|e| e.to_string())?;
        if let Some(e) = rec.failure {
            return Err(e.to_string());
        }
        let last = rec.physical.last().expect("final snapshot");
        Ok(last.iter().flatten().map(|v| (v - 2.0).abs()).fold(0.0, f64::max))
    };
    let drift = match steady() {
        Ok(d) => d,
        Err(e) => return (Check::failed(11, NAME, e), None),
    };
    let u0 = match initial_data(op, InitialData::Bump, 1.0) {
        Ok(u) => u,
        Err(e) => return (Check::failed(11, NAME, e), None),
    };
    let bump = FpmeConfig {
        record_every: 1,
        ..cfg.clone()
    };
    let rec = match run_with_generator(&u0, &bump, op, gen) {
        Ok(r) if r.failure.is_none() => r,
        Ok(r) => return (Check::failed(11, NAME, r.failure.expect("checked")), None),
        Err(e) => return (Check::failed(11, NAME, e), None),
    };
    let sup: Vec<f64> = rec.diagnostics.iter().map(|d| d.sup_norm).collect();
    let rise = sup.windows(2).skip(1).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    let min = rec.diagnostics.iter().map(|d| d.min_value).fold(f64::INFINITY, f64::min);
    let passed = drift <= 1e-10 && rec.clamp_count == 0 && min >= cfg.positivity_floor && rise <= 1e-8;
    let check = Check::new(
        11,
        NAME,
        drift,
        1e-10,
        passed,
        format!(
            "drift over 1000 steps {drift:.3e}; m = {}: clamps {}, min {min:.6}, largest sup increase {rise:.3e}",
            cfg.m, rec.clamp_count
        ),
    );
    let decay = decay_report(&bump, op, &u0, gen).ok();
    (check, decay)
}

fn check_tip_decay(decay: Option<DecayReport>) -> Check {
    const NAME: &str = "tip decay at mid-trajectory";
    match decay {
        Some(r) => Check::new(
            12,
            NAME,
            r.alpha_mid.unwrap_or(f64::NAN),
            r.predicted_lower_bound,
            r.passed,
            format!("t = {:.4}", r.t_mid),
        ),
        None => Check::failed(12, NAME, "trajectory failed"),
    }
}

fn check_commutator(cfg: &RunConfig) -> Check {
    const NAME: &str = "commutator grid stability and decay";
    let p = &cfg.probe;
    let mut norms = Vec::new();
    let mut mu_exp = f64::NEG_INFINITY;
    for count in [64, 128] {
        let op = match ConeGrid::new(cfg.grid.x_min, count, cfg.grid.gamma)
            .and_then(|g| assemble_cone_laplacian(&CrossSection::circle(Some(0)), &g, Extension::WithCOmega))
        {
            Ok(op) => op,
            Err(e) => return Check::failed(13, NAME, e),
        };
        let xs = op.grid.points();
        let prof: Vec<f64> = xs.iter().map(|x| 0.5 * x * (1.0 - x)).collect();
        let w = ConeFunction::radial(&op, &prof, 1.0).expect("grid-sized profile");
        match commutator_decay_scan(&w, &op, 0.5, p.nu, p.rho, &p.samples, p.shift_c, PowerMethod::Balakrishnan) {
            Ok(r) => {
                norms.push(r.commutator_norm);
                mu_exp = mu_exp.max(r.mu_exponent.unwrap_or(f64::INFINITY));
            }
            Err(e) => return Check::failed(13, NAME, e),
        }
    }
    let change = (norms[1] - norms[0]).abs() / norms[1];
    let passed = norms.iter().all(|n| n.is_finite()) && change < 0.25 && mu_exp < -1.0;
    Check::new(
        13,
        NAME,
        change,
        0.25,
        passed,
        format!("norms {:.6} / {:.6}, mu-exponent {mu_exp:.4}", norms[0], norms[1]),
    )
}

/// Runs every check; deterministic for a given config.
pub fn run_suite(cfg: &RunConfig) -> Result<VerifyReport, crate::config::ConfigError> {
    use crate::config::ConfigError;
    cfg.validate()?;
    let op = cfg.operator()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut checks = vec![
        check_fracpow(&mut rng),
        check_resolvent(&mut rng),
        check_shift_law(),
        check_decay_fit(&mut rng),
        check_laurent(&op),
    ];
    let numerical = |e: crate::fpme::FpmeError| ConfigError::Numerical(e.to_string());
    let gen_half = build_frac_generator(&op, cfg.power.sigma, 0, PowerMethod::Balakrishnan).map_err(numerical)?;
    checks.push(check_rbound(&gen_half, PI / 2.0, cfg.seed));
    checks.push(check_geometry());
    checks.push(check_dilation(&op.cross_section, cfg.grid.x_min, cfg.grid.gamma));
    checks.push(check_dichotomy(cfg.grid.x_min, cfg.grid.count));
    let gen_linear = if cfg.power.sigma == 0.5 {
        gen_half
    } else {
        build_frac_generator(&op, 0.5, 0, PowerMethod::Balakrishnan).map_err(numerical)?
    };
    checks.push(check_linear_mode(&op, &gen_linear));
    drop(gen_linear);
    let fcfg = cfg.fpme_config();
    let gen = build_frac_generator(&op, fcfg.sigma, 0, fcfg.method).map_err(numerical)?;
    let (steady, decay) = check_steady_and_positive(&op, &gen, &fcfg);
    checks.push(steady);
    checks.push(check_tip_decay(decay));
    checks.push(check_commutator(cfg));
    Ok(VerifyReport {
        seed: cfg.seed,
        all_passed: checks.iter().all(|c| c.passed),
        checks,
    })
}

/// `‖X - Y‖_F / ‖Y‖_F` on real matrices, used by the suite's oracles.
pub fn real_rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_normal_is_hermitian_with_given_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (a, d, q) = random_normal(&mut rng, 6, 1e-2, 1e4);
        assert!((&a - a.adjoint()).norm() <= 1e-10 * a.norm());
        assert!((q.adjoint() * &q - CMatrix::identity(6, 6)).norm() < 1e-12);
        let back = spectral(&q, &d, |x| x);
        assert!(rel(&back, &a) < 1e-15);
        assert!(d.iter().all(|&x| (1e-2..=1e4).contains(&x)));
    }

    #[test]
    fn light_checks_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(check_fracpow(&mut rng).passed);
        assert!(check_shift_law().passed);
        assert!(check_geometry().passed);
        assert!(check_dichotomy(1e-3, 48).passed);
    }

    #[test]
    fn eigenmode_initial_data_is_positive() {
        let cs = CrossSection::circle(Some(1));
        let grid = ConeGrid::new(1e-3, 48, -0.5).unwrap();
        let op = assemble_cone_laplacian(&cs, &grid, Extension::WithCOmega).unwrap();
        let (psi, kappa) = lowest_radial_mode(&op).unwrap();
        assert!(kappa > 1.0);
        assert!(psi.iter().all(|p| *p >= -1e-12));
        let u = initial_data(&op, InitialData::Eigenmode, 0.5).unwrap();
        assert!((mode_amplitude(&op, &u, &psi) - 0.5).abs() < 1e-12);
    }
}
