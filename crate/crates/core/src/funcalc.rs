//! Quadrature-based functional calculus: fractional, imaginary and complex
//! powers, fractional resolvents and the Cauchy-integral (H∞) evaluation.
//!
//! Every integral is mapped to the real line by an exponential substitution and
//! integrated with the trapezoid rule, which converges exponentially for these
//! integrands. Automatic rules pick the step from the distance of the nearest
//! singularity to the path and refine until the full rule and its
//! every-other-node subrule agree.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linop::{c64, spectral_norm, CMatrix, CVector, DenseOperator, LinopError, C64};

/// Relative agreement required between a rule and its every-other-node subrule.
pub const CONVERGENCE_TOL: f64 = 1e-7;
/// Tail margin in units of the decay rate: e^{-32} ≈ 1.3e-14.
const TAIL: f64 = 32.0;
/// Target exponent for the discretization error exp(-2πd/h).
const STEP_TARGET: f64 = 37.0;
const MAX_REFINE: usize = 4;
const MIN_NODES: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FuncalcError {
    #[error(transparent)]
    Linop(#[from] LinopError),
    #[error("spectrum is not in the required sector (eigenvalue {eigenvalue})")]
    SpectrumNotSectorial { eigenvalue: C64 },
    #[error("quadrature did not converge (relative change {difference:.3e})")]
    QuadratureNotConverged { difference: f64 },
    #[error("kernel pole on the integration path at s = {node}")]
    KernelPoleOnPath { node: C64 },
    #[error("integration path not admissible: {0}")]
    PathNotAdmissible(String),
    #[error("integrand does not decay on the contour: {0}")]
    DecayViolated(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

type Result<T> = std::result::Result<T, FuncalcError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    HalfLineExp,
    SectorContour,
    Circle,
}

/// Explicit quadrature rule: `∫ g(s) ds ≈ Σ weights[k] g(nodes[k])`.
///
/// The rules built here are uniform in the transformed variable, with an odd
/// number of points per segment so that the even-indexed nodes form the
/// same rule at twice the step.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub kind: RuleKind,
    pub nodes: Vec<C64>,
    pub weights: Vec<C64>,
    pub truncation: (f64, f64),
    pub node_count: usize,
}

fn odd_at_least(n: usize) -> usize {
    let n = n.max(MIN_NODES + 1);
    if n % 2 == 0 {
        n + 1
    } else {
        n
    }
}

impl QuadratureRule {
    fn from_segments(kind: RuleKind, truncation: (f64, f64), parts: Vec<(Vec<C64>, Vec<C64>)>) -> Self {
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        for (n, w) in parts {
            nodes.extend(n);
            weights.extend(w);
        }
        let node_count = nodes.len();
        Self {
            kind,
            nodes,
            weights,
            truncation,
            node_count,
        }
    }

    /// Uniform trapezoid points in `t` for a path `s(t)` with derivative `ds/dt`.
    fn segment<F>(t_min: f64, t_max: f64, n: usize, sign: f64, path: F) -> (Vec<C64>, Vec<C64>)
    where
        F: Fn(f64) -> (C64, C64),
    {
        let h = (t_max - t_min) / (n - 1) as f64;
        let mut nodes = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for k in 0..n {
            let t = t_min + k as f64 * h;
            let (s, ds) = path(t);
            let end = if k == 0 || k == n - 1 { 0.5 } else { 1.0 };
            nodes.push(s);
            weights.push(ds * (sign * end * h));
        }
        (nodes, weights)
    }

    /// `s = e^t`, `t ∈ [t_min, t_max]`.
    pub fn half_line_exp(t_min: f64, t_max: f64, n: usize) -> Result<Self> {
        check_window(t_min, t_max)?;
        let n = odd_at_least(n);
        let seg = Self::segment(t_min, t_max, n, 1.0, |t| {
            let s = c64(t.exp(), 0.0);
            (s, s)
        });
        Ok(Self::from_segments(RuleKind::HalfLineExp, (t_min, t_max), vec![seg]))
    }

    /// Outgoing ray `s = e^{t + i·angle}`.
    pub fn sector_ray(angle: f64, t_min: f64, t_max: f64, n: usize) -> Result<Self> {
        check_window(t_min, t_max)?;
        let n = odd_at_least(n);
        let e = C64::from_polar(1.0, angle);
        let seg = Self::segment(t_min, t_max, n, 1.0, |t| {
            let s = e * t.exp();
            (s, s)
        });
        Ok(Self::from_segments(RuleKind::SectorContour, (t_min, t_max), vec![seg]))
    }

    /// The two-ray contour `Γ_θ`: in along `arg λ = -θ`, out along `arg λ = θ`.
    /// It encircles `{|arg λ| > θ}` counterclockwise. `n` points per ray.
    pub fn gamma_theta(theta: f64, t_min: f64, t_max: f64, n: usize) -> Result<Self> {
        check_window(t_min, t_max)?;
        let n = odd_at_least(n);
        let lo = C64::from_polar(1.0, -theta);
        let hi = C64::from_polar(1.0, theta);
        let lower = Self::segment(t_min, t_max, n, -1.0, |t| {
            let s = lo * t.exp();
            (s, s)
        });
        // inward traversal: reverse so the nodes run from far to near
        let lower = (
            lower.0.into_iter().rev().collect(),
            lower.1.into_iter().rev().collect(),
        );
        let upper = Self::segment(t_min, t_max, n, 1.0, |t| {
            let s = hi * t.exp();
            (s, s)
        });
        Ok(Self::from_segments(RuleKind::SectorContour, (t_min, t_max), vec![lower, upper]))
    }

    /// Counterclockwise circle `center + r e^{iφ}` with `n` (even) equispaced points.
    pub fn circle(center: C64, radius: f64, n: usize) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(FuncalcError::InvalidArgument(format!("circle radius {radius}")));
        }
        let n = n.max(MIN_NODES) + n % 2;
        let mut nodes = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for j in 0..n {
            let e = C64::from_polar(1.0, 2.0 * PI * j as f64 / n as f64);
            nodes.push(center + e * radius);
            weights.push(C64::i() * e * (radius * 2.0 * PI / n as f64));
        }
        Ok(Self::from_segments(RuleKind::Circle, (0.0, 2.0 * PI), vec![(nodes, weights)]))
    }

    /// Left-opening hyperbola `λ(u) = -ρ cos(β + iu)`, `u ∈ [-u_max, u_max]`,
    /// vertex at `-ρ cos β`, asymptotic angles `±(π - β)`, traversed upward.
    pub fn hyperbola(rho: f64, beta: f64, u_max: f64, n: usize) -> Result<Self> {
        check_window(-u_max, u_max)?;
        let n = odd_at_least(n);
        let seg = Self::segment(-u_max, u_max, n, 1.0, |u| hyperbola_point(rho, beta, u));
        Ok(Self::from_segments(RuleKind::SectorContour, (-u_max, u_max), vec![seg]))
    }

    /// `(Σ w g, Σ_{even} 2w g, Σ |w| ‖g‖)`.
    fn integrate<F>(&self, mut g: F) -> Result<(CMatrix, CMatrix, f64)>
    where
        F: FnMut(C64) -> Result<CMatrix>,
    {
        let mut full: Option<CMatrix> = None;
        let mut sub: Option<CMatrix> = None;
        let mut mass = 0.0;
        for (k, (&s, &w)) in self.nodes.iter().zip(&self.weights).enumerate() {
            let term = g(s)?;
            mass += w.norm() * term.norm();
            accumulate(&mut full, &term, w);
            if k % 2 == 0 {
                accumulate(&mut sub, &term, w * 2.0);
            }
        }
        let full = full.ok_or_else(|| FuncalcError::InvalidArgument("empty rule".into()))?;
        let sub = sub.unwrap_or_else(|| full.clone());
        Ok((full, sub, mass))
    }
}

fn check_window(t_min: f64, t_max: f64) -> Result<()> {
    if !(t_min.is_finite() && t_max.is_finite() && t_max > t_min) {
        return Err(FuncalcError::InvalidArgument(format!(
            "bad truncation window [{t_min}, {t_max}]"
        )));
    }
    Ok(())
}

fn accumulate(acc: &mut Option<CMatrix>, term: &CMatrix, w: C64) {
    match acc {
        Some(a) => a.zip_apply(term, |x, y| *x += y * w),
        None => *acc = Some(term * w),
    }
}

fn hyperbola_point(rho: f64, beta: f64, u: f64) -> (C64, C64) {
    let w = c64(beta, u);
    (-w.cos() * rho, C64::i() * w.sin() * rho)
}

/// Change between a rule and its subrule relative to the result, with an
/// absolute floor tied to the integral of the absolute integrand (results that
/// cancel to zero would otherwise never converge).
fn relative_change(full: &CMatrix, sub: &CMatrix, mass: f64) -> f64 {
    let scale = full.norm().max(1e-6 * mass);
    let diff = (full - sub).norm();
    if diff == 0.0 {
        0.0
    } else if scale == 0.0 {
        f64::INFINITY
    } else {
        diff / scale
    }
}

/// A path `t ↦ Σ_i (s_i(t), ds_i/dt)` integrated over `[t_min, t_max]`.
/// The Γ_θ contour contributes two points per `t` (one per ray).
struct AutoPlan {
    t_min: f64,
    t_max: f64,
    h: f64,
}

impl AutoPlan {
    fn new(t_min: f64, t_max: f64, h: f64) -> Result<Self> {
        check_window(t_min, t_max)?;
        let h = h.min((t_max - t_min) / MIN_NODES as f64);
        if !(h > 0.0) {
            return Err(FuncalcError::InvalidArgument("non-positive quadrature step".into()));
        }
        Ok(Self { t_min, t_max, h })
    }

    /// Adaptive trapezoid rule; refining halves the step and reuses all
    /// previous evaluations.
    fn integrate<P, G>(&self, path: P, mut g: G) -> Result<CMatrix>
    where
        P: Fn(f64) -> Vec<(C64, C64)>,
        G: FnMut(C64) -> Result<CMatrix>,
    {
        let mut term = |t: f64| -> Result<Option<(CMatrix, f64)>> {
            let mut acc: Option<CMatrix> = None;
            let mut mass = 0.0;
            for (s, ds) in path(t) {
                let v = g(s)?;
                mass += ds.norm() * v.norm();
                accumulate(&mut acc, &v, ds);
            }
            Ok(acc.map(|a| (a, mass)))
        };
        let span = self.t_max - self.t_min;
        let mut intervals = ((span / self.h).ceil() as usize).max(MIN_NODES);
        intervals += intervals % 2;
        let mut h = span / intervals as f64;
        let mut even: Option<CMatrix> = None;
        let mut odd: Option<CMatrix> = None;
        let mut mass = 0.0;
        for k in 0..=intervals {
            let w = if k == 0 || k == intervals { 0.5 } else { 1.0 };
            if let Some((v, m)) = term(self.t_min + k as f64 * h)? {
                mass += w * m;
                if k % 2 == 0 {
                    accumulate(&mut even, &v, c64(w, 0.0));
                } else {
                    accumulate(&mut odd, &v, c64(w, 0.0));
                }
            }
        }
        let mut last = f64::INFINITY;
        for level in 0..=MAX_REFINE {
            let (Some(e), Some(o)) = (&even, &odd) else {
                return Err(FuncalcError::InvalidArgument("empty path".into()));
            };
            let full = (e + o) * c64(h, 0.0);
            let sub = e * c64(2.0 * h, 0.0);
            last = relative_change(&full, &sub, h * mass);
            if last <= CONVERGENCE_TOL {
                return Ok(full);
            }
            if level == MAX_REFINE {
                break;
            }
            // previous nodes become the even set; midpoints are the new odd set
            let merged = e + o;
            let mut mids: Option<CMatrix> = None;
            for k in 0..intervals {
                if let Some((v, m)) = term(self.t_min + (k as f64 + 0.5) * h)? {
                    mass += m;
                    accumulate(&mut mids, &v, c64(1.0, 0.0));
                }
            }
            even = Some(merged);
            odd = mids;
            intervals *= 2;
            h *= 0.5;
        }
        Err(FuncalcError::QuadratureNotConverged { difference: last })
    }
}

fn step_for(distance: f64, extra: f64) -> f64 {
    (2.0 * PI * distance / (STEP_TARGET + extra)).min(0.5)
}

/// Resolvent evaluations `(A + s)^{-1}`, in real arithmetic when possible.
/// Inner solves inside quadratures are allowed to be ill-conditioned (the
/// kernels compensate), so only exact breakdown is reported.
pub(crate) struct Resolver {
    complex: CMatrix,
    real: Option<DMatrix<f64>>,
}

impl Resolver {
    pub(crate) fn new(a: &DenseOperator) -> Self {
        Self {
            complex: a.entries().clone(),
            real: a.is_real().then(|| a.entries().map(|z| z.re)),
        }
    }

    fn singular(s: C64) -> FuncalcError {
        FuncalcError::Linop(LinopError::SingularShift {
            shift: s,
            condition: f64::INFINITY,
        })
    }

    pub(crate) fn inverse(&self, s: C64) -> Result<CMatrix> {
        let n = self.complex.nrows();
        if let (Some(r), true) = (&self.real, s.im == 0.0) {
            let mut m = r.clone();
            for i in 0..n {
                m[(i, i)] += s.re;
            }
            let inv = m.lu().try_inverse().ok_or_else(|| Self::singular(s))?;
            return finite(inv.map(|x| c64(x, 0.0)), s);
        }
        let mut m = self.complex.clone();
        for i in 0..n {
            m[(i, i)] += s;
        }
        let inv = m.lu().try_inverse().ok_or_else(|| Self::singular(s))?;
        finite(inv, s)
    }

    /// `(A + s)^{-1} B`.
    pub(crate) fn solve_matrix(&self, s: C64, b: &CMatrix) -> Result<CMatrix> {
        let n = self.complex.nrows();
        let b_real = b.iter().all(|z| z.im == 0.0);
        if let (Some(r), true, true) = (&self.real, s.im == 0.0, b_real) {
            let mut m = r.clone();
            for i in 0..n {
                m[(i, i)] += s.re;
            }
            let x = m.lu().solve(&b.map(|z| z.re)).ok_or_else(|| Self::singular(s))?;
            return finite(x.map(|x| c64(x, 0.0)), s);
        }
        let mut m = self.complex.clone();
        for i in 0..n {
            m[(i, i)] += s;
        }
        let x = m.lu().solve(b).ok_or_else(|| Self::singular(s))?;
        finite(x, s)
    }

    pub(crate) fn solve(&self, s: C64, v: &CVector) -> Result<CVector> {
        let n = self.complex.nrows();
        if let (Some(r), true) = (&self.real, s.im == 0.0) {
            let mut m = r.clone();
            for i in 0..n {
                m[(i, i)] += s.re;
            }
            let lu = m.lu();
            let re = lu.solve(&v.map(|z| z.re)).ok_or_else(|| Self::singular(s))?;
            let im = lu.solve(&v.map(|z| z.im)).ok_or_else(|| Self::singular(s))?;
            let out = CVector::from_fn(n, |i, _| c64(re[i], im[i]));
            return finite(out, s);
        }
        let mut m = self.complex.clone();
        for i in 0..n {
            m[(i, i)] += s;
        }
        let out = m.lu().solve(v).ok_or_else(|| Self::singular(s))?;
        finite(out, s)
    }
}

fn finite<R: nalgebra::Dim, Cc: nalgebra::Dim, S: nalgebra::RawStorage<C64, R, Cc>>(
    m: nalgebra::Matrix<C64, R, Cc, S>,
    s: C64,
) -> Result<nalgebra::Matrix<C64, R, Cc, S>> {
    if m.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(m)
    } else {
        Err(Resolver::singular(s))
    }
}

/// Spectral summary used to place quadrature windows.
#[derive(Debug, Clone)]
pub(crate) struct SpectrumInfo {
    pub eigenvalues: Vec<C64>,
    pub zero_tol: f64,
    /// Smallest modulus among the non-zero eigenvalues (1 if there are none).
    pub min_nonzero: f64,
    pub max_modulus: f64,
    /// Largest |arg| over non-zero eigenvalues.
    pub max_arg: f64,
    pub has_zero: bool,
}

/// Eigenvalues below this fraction of the spectral radius count as zero.
const ZERO_REL_TOL: f64 = 256.0 * f64::EPSILON;

impl SpectrumInfo {
    pub(crate) fn of(a: &DenseOperator) -> Result<Self> {
        let eigenvalues = a.eigenvalues()?;
        let max_modulus = eigenvalues.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let zero_tol = ZERO_REL_TOL * max_modulus.max(f64::MIN_POSITIVE);
        let mut min_nonzero = f64::INFINITY;
        let mut max_arg: f64 = 0.0;
        let mut has_zero = false;
        for z in &eigenvalues {
            if z.norm() <= zero_tol {
                has_zero = true;
            } else {
                min_nonzero = min_nonzero.min(z.norm());
                max_arg = max_arg.max(z.arg().abs());
            }
        }
        if !min_nonzero.is_finite() {
            min_nonzero = 1.0;
        }
        Ok(Self {
            eigenvalues,
            zero_tol,
            min_nonzero,
            max_modulus: max_modulus.max(min_nonzero),
            max_arg,
            has_zero,
        })
    }

    /// Spectrum of `A + c` for real `c > 0`; computed zeros become exactly `c`.
    fn shifted(&self, c: f64) -> Self {
        let eigenvalues: Vec<C64> = self
            .eigenvalues
            .iter()
            .map(|&z| if z.norm() <= self.zero_tol { c64(c, 0.0) } else { z + c })
            .collect();
        let moduli = eigenvalues.iter().map(|z| z.norm());
        Self {
            zero_tol: 0.0,
            min_nonzero: moduli.clone().fold(f64::INFINITY, f64::min),
            max_modulus: moduli.fold(0.0, f64::max),
            max_arg: eigenvalues.iter().map(|z| z.arg().abs()).fold(0.0, f64::max),
            has_zero: false,
            eigenvalues,
        }
    }

    /// Error unless every eigenvalue has positive real part (beyond roundoff).
    fn require_right_half_plane(&self) -> Result<()> {
        for &z in &self.eigenvalues {
            if z.norm() <= self.zero_tol || z.re <= 0.0 {
                return Err(FuncalcError::SpectrumNotSectorial { eigenvalue: z });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PowerMethod {
    #[default]
    Balakrishnan,
    EigenOracle,
    ResolventLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerSpec {
    pub sigma: f64,
    #[serde(default)]
    pub shift_c: f64,
    #[serde(default)]
    pub method: PowerMethod,
}

impl PowerSpec {
    pub fn new(sigma: f64, shift_c: f64, method: PowerMethod) -> Self {
        Self {
            sigma,
            shift_c,
            method,
        }
    }

    pub fn balakrishnan(sigma: f64) -> Self {
        Self::new(sigma, 0.0, PowerMethod::Balakrishnan)
    }

    fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma < 1.0) {
            return Err(FuncalcError::InvalidArgument(format!(
                "sigma must lie in (0,1), got {}",
                self.sigma
            )));
        }
        if !(self.shift_c >= 0.0 && self.shift_c.is_finite()) {
            return Err(FuncalcError::InvalidArgument(format!(
                "shift_c must be finite and >= 0, got {}",
                self.shift_c
            )));
        }
        Ok(())
    }
}

/// Principal power with `0^p = 0` for `Re p > 0`.
pub fn principal_pow(z: C64, p: C64) -> C64 {
    if z == c64(0.0, 0.0) {
        if p.re > 0.0 {
            return c64(0.0, 0.0);
        }
        return c64(f64::INFINITY, 0.0);
    }
    if p.im == 0.0 {
        z.powf(p.re)
    } else {
        z.powc(p)
    }
}

/// `(A + cI)^σ`.
pub fn frac_power(a: &DenseOperator, spec: &PowerSpec, rule: Option<&QuadratureRule>) -> Result<DenseOperator> {
    spec.validate()?;
    let shifted = a.shifted(c64(spec.shift_c, 0.0));
    let m = match spec.method {
        PowerMethod::Balakrishnan => balakrishnan(&shifted, spec.sigma, rule)?,
        PowerMethod::EigenOracle => eigen_power(&shifted, c64(spec.sigma, 0.0))?,
        PowerMethod::ResolventLimit => resolvent_limit_power(&shifted, spec.sigma, rule)?,
    };
    Ok(a.with_entries(m)?)
}

/// `(A + cI)^{-σ}`.
pub fn inv_frac_power(a: &DenseOperator, spec: &PowerSpec, rule: Option<&QuadratureRule>) -> Result<DenseOperator> {
    spec.validate()?;
    let shifted = a.shifted(c64(spec.shift_c, 0.0));
    let m = match spec.method {
        PowerMethod::EigenOracle => {
            let info = SpectrumInfo::of(&shifted)?;
            if info.has_zero {
                return Err(FuncalcError::SpectrumNotSectorial {
                    eigenvalue: c64(0.0, 0.0),
                });
            }
            eigen_power(&shifted, c64(-spec.sigma, 0.0))?
        }
        _ => inverse_balakrishnan(&shifted, spec.sigma, rule)?,
    };
    Ok(a.with_entries(m)?)
}

fn eigen_power(a: &DenseOperator, p: C64) -> Result<CMatrix> {
    let eig = a.eigen_decompose()?;
    let tol = ZERO_REL_TOL * eig.eigenvalues.iter().map(|z| z.norm()).fold(0.0, f64::max);
    Ok(eig.apply_function(|z| {
        if z.norm() <= tol {
            c64(0.0, 0.0)
        } else {
            principal_pow(z, p)
        }
    }))
}

/// `sin(πσ)/π ∫₀^∞ s^{σ-1} A (A+s)^{-1} ds`; `(A+s)^{-1}A` is formed by a
/// direct solve because `I - s(A+s)^{-1}` cancels catastrophically for large `s`.
fn balakrishnan(a: &DenseOperator, sigma: f64, rule: Option<&QuadratureRule>) -> Result<CMatrix> {
    balakrishnan_with(a, sigma, rule, &SpectrumInfo::of(a)?)
}

fn balakrishnan_with(a: &DenseOperator, sigma: f64, rule: Option<&QuadratureRule>, info: &SpectrumInfo) -> Result<CMatrix> {
    info.require_right_half_plane()?;
    let res = Resolver::new(a);
    let kernel = |s: C64| -> Result<CMatrix> {
        let ar = res.solve_matrix(s, a.entries())?;
        Ok(ar * principal_pow(s, c64(sigma - 1.0, 0.0)))
    };
    let pref = (PI * sigma).sin() / PI;
    let result = match rule {
        Some(rule) => checked(rule.integrate(kernel)?)?,
        None => {
            let plan = AutoPlan::new(
                info.min_nonzero.ln() - TAIL / sigma,
                info.max_modulus.ln() + TAIL / (1.0 - sigma),
                step_for(PI - info.max_arg, 0.0),
            )?;
            plan.integrate(real_axis, kernel)?
        }
    };
    Ok(result * c64(pref, 0.0))
}

/// `sin(πσ)/π ∫₀^∞ s^{-σ} (A+s)^{-1} ds`.
fn inverse_balakrishnan(a: &DenseOperator, sigma: f64, rule: Option<&QuadratureRule>) -> Result<CMatrix> {
    let info = SpectrumInfo::of(a)?;
    info.require_right_half_plane()?;
    let res = Resolver::new(a);
    let kernel = |s: C64| -> Result<CMatrix> { Ok(res.inverse(s)? * principal_pow(s, c64(-sigma, 0.0))) };
    let pref = (PI * sigma).sin() / PI;
    let result = match rule {
        Some(rule) => checked(rule.integrate(kernel)?)?,
        None => {
            let plan = AutoPlan::new(
                info.min_nonzero.ln() - TAIL / (1.0 - sigma),
                info.max_modulus.ln() + TAIL / sigma,
                step_for(PI - info.max_arg, 0.0),
            )?;
            plan.integrate(real_axis, kernel)?
        }
    };
    Ok(result * c64(pref, 0.0))
}

fn real_axis(t: f64) -> Vec<(C64, C64)> {
    let s = c64(t.exp(), 0.0);
    vec![(s, s)]
}

fn checked((full, sub, mass): (CMatrix, CMatrix, f64)) -> Result<CMatrix> {
    let difference = relative_change(&full, &sub, mass);
    if difference > CONVERGENCE_TOL {
        return Err(FuncalcError::QuadratureNotConverged { difference });
    }
    Ok(full)
}

/// Shifts for the Richardson extrapolation of `(A + c_k)^σ`, `c_k = c_0 q^k`.
const LIMIT_RATIO: f64 = 0.5;
const LIMIT_ORDERS: [f64; 4] = [1.0, 2.0, 3.0, 4.0];

/// `A^σ` for possibly singular `A`: Richardson extrapolation of `(A + c_k)^σ`
/// as `c_k → 0`, eliminating the error terms `c^σ, c, c², c³, c⁴`.
fn resolvent_limit_power(a: &DenseOperator, sigma: f64, rule: Option<&QuadratureRule>) -> Result<CMatrix> {
    let info = SpectrumInfo::of(a)?;
    if !info.has_zero {
        return balakrishnan(a, sigma, rule);
    }
    for &z in &info.eigenvalues {
        if z.norm() > info.zero_tol && z.re <= 0.0 {
            return Err(FuncalcError::SpectrumNotSectorial { eigenvalue: z });
        }
    }
    if info.max_modulus <= info.zero_tol || info.eigenvalues.iter().all(|z| z.norm() <= info.zero_tol) {
        return Ok(CMatrix::zeros(a.dim(), a.dim()));
    }
    let c0 = 1e-2 * info.min_nonzero;
    let mut exponents = vec![sigma];
    exponents.extend(LIMIT_ORDERS);
    let mut table = (0..=exponents.len())
        .map(|k| {
            let c = c0 * LIMIT_RATIO.powi(k as i32);
            balakrishnan_with(&a.shifted(c64(c, 0.0)), sigma, rule, &info.shifted(c))
        })
        .collect::<Result<Vec<_>>>()?;
    for &e in &exponents {
        let f = LIMIT_RATIO.powf(e);
        table = table
            .windows(2)
            .map(|w| (&w[1] - &w[0] * c64(f, 0.0)) / c64(1.0 - f, 0.0))
            .collect();
    }
    Ok(table.swap_remove(0))
}

/// Path choice for the fractional resolvent.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum ResolventPath {
    /// Half-line when `|arg λ| < π(1-σ) - 0.05`, else a ray on the side of `arg λ`.
    #[default]
    Auto,
    HalfLine,
    /// Ray `s = r e^{±iθ}`, sign taken from `arg λ`.
    Ray(f64),
}

/// Margin that decides between the half-line and the rotated ray.
pub const PATH_SWITCH_MARGIN: f64 = 0.05;

/// `(A^σ + λ)^{-1} v` from
/// `sin(πσ)/π ∫ s^σ / ((s^σ + λe^{iπσ})(s^σ + λe^{-iπσ})) (A+s)^{-1} v ds`.
pub fn frac_resolvent_apply(
    a: &DenseOperator,
    sigma: f64,
    lambda: C64,
    v: &CVector,
    path: ResolventPath,
) -> Result<CVector> {
    if !(sigma > 0.0 && sigma < 1.0) {
        return Err(FuncalcError::InvalidArgument(format!("sigma {sigma} not in (0,1)")));
    }
    if v.len() != a.dim() {
        return Err(LinopError::DimensionMismatch {
            expected: a.dim(),
            got: v.len(),
        }
        .into());
    }
    let info = SpectrumInfo::of(a)?;
    for &z in &info.eigenvalues {
        if z.norm() > info.zero_tol && z.re <= 0.0 {
            return Err(FuncalcError::SpectrumNotSectorial { eigenvalue: z });
        }
    }
    if lambda.norm() == 0.0 && info.has_zero {
        return Err(LinopError::SingularShift {
            shift: lambda,
            condition: f64::INFINITY,
        }
        .into());
    }
    let phi = info.max_arg;
    let alpha = lambda.arg();
    let side = if alpha < 0.0 { -1.0 } else { 1.0 };
    let alpha_abs = alpha.abs();
    // angle of the kernel pole (on the side of λ), when it exists
    let pole_angle = if lambda.norm() > 0.0 && alpha_abs > PI * (1.0 - 2.0 * sigma) {
        Some((alpha_abs - PI * (1.0 - sigma)) / sigma)
    } else {
        None
    };
    let path = match path {
        ResolventPath::Auto if alpha_abs < PI * (1.0 - sigma) - PATH_SWITCH_MARGIN => ResolventPath::HalfLine,
        ResolventPath::Auto => {
            let beta = pole_angle.unwrap_or(0.0).max(0.0);
            ResolventPath::Ray(0.5 * (beta + PI - phi))
        }
        p => p,
    };
    let (angle, distance) = match path {
        ResolventPath::HalfLine => {
            let d = match pole_angle {
                Some(b) if b >= 0.0 => {
                    return Err(FuncalcError::PathNotAdmissible(format!(
                        "kernel pole at angle {b:.4} lies on or above the half-line"
                    )))
                }
                Some(b) => (-b).min(PI - phi),
                None => PI - phi,
            };
            (0.0, d)
        }
        ResolventPath::Ray(theta) => {
            let theta = theta.abs();
            if theta >= PI - phi {
                return Err(FuncalcError::PathNotAdmissible(format!(
                    "ray angle {theta:.4} reaches the spectrum (sector half-angle {phi:.4})"
                )));
            }
            let d = match pole_angle {
                Some(b) if b >= theta => {
                    return Err(FuncalcError::PathNotAdmissible(format!(
                        "kernel pole at angle {b:.4} is not below the ray {theta:.4}"
                    )))
                }
                Some(b) => (theta - b).min(PI - phi - theta),
                None => PI - phi - theta,
            };
            (side * theta, d)
        }
        ResolventPath::Auto => unreachable!(),
    };
    if !(distance > 0.0) {
        return Err(FuncalcError::PathNotAdmissible("zero analyticity strip".into()));
    }
    let e_plus = C64::from_polar(1.0, PI * sigma);
    let e_minus = e_plus.conj();
    let res = Resolver::new(a);
    let v = v.clone();
    let kernel = |s: C64| -> Result<CMatrix> {
        let ss = principal_pow(s, c64(sigma, 0.0));
        let d1 = ss + lambda * e_plus;
        let d2 = ss + lambda * e_minus;
        if d1.norm() < 1e-12 || d2.norm() < 1e-12 {
            return Err(FuncalcError::KernelPoleOnPath { node: s });
        }
        let w = res.solve(s, &v)?;
        let k = ss / (d1 * d2);
        Ok(CMatrix::from_iterator(w.len(), 1, w.iter().map(|z| z * k)))
    };
    let log_l = if lambda.norm() > 0.0 {
        lambda.norm().ln() / sigma
    } else {
        f64::NAN
    };
    let lo = if info.has_zero {
        log_l
    } else {
        info.min_nonzero.ln().min(if log_l.is_nan() { f64::INFINITY } else { log_l })
    };
    let hi = info.max_modulus.ln().max(if log_l.is_nan() { f64::NEG_INFINITY } else { log_l });
    let plan = AutoPlan::new(
        lo - TAIL / sigma.min(1.0 - sigma),
        hi + TAIL / sigma,
        step_for(distance, 0.0),
    )?;
    let dir = C64::from_polar(1.0, angle);
    let out = plan.integrate(
        |t| {
            let s = dir * t.exp();
            vec![(s, s)]
        },
        kernel,
    )?;
    let pref = (PI * sigma).sin() / PI;
    Ok(CVector::from_iterator(out.nrows(), out.column(0).iter().map(|z| z * pref)))
}

/// `(A + cI)^{it}` from `sinh(πt)/(πt) ∫₀^∞ s^{it} (A+c)(A+c+s)^{-2} ds`.
pub fn imaginary_power(a: &DenseOperator, t: f64, c: f64, rule: Option<&QuadratureRule>) -> Result<DenseOperator> {
    if !(c >= 0.0 && c.is_finite() && t.is_finite()) {
        return Err(FuncalcError::InvalidArgument(format!("t = {t}, c = {c}")));
    }
    let shifted = a.shifted(c64(c, 0.0));
    let info = SpectrumInfo::of(&shifted)?;
    info.require_right_half_plane()?;
    let res = Resolver::new(&shifted);
    let p = c64(0.0, t);
    // (A+c)(A+c+s)^{-2} = R - sR²
    let kernel = |s: C64| -> Result<CMatrix> {
        let r = res.inverse(s)?;
        let r2 = &r * &r;
        Ok((r - r2 * s) * principal_pow(s, p))
    };
    let x = PI * t;
    let pref = if x.abs() < 1e-6 { 1.0 + x * x / 6.0 } else { x.sinh() / x };
    let d = PI - info.max_arg;
    let m = match rule {
        Some(rule) => checked(rule.integrate(kernel)?)?,
        None => {
            let plan = AutoPlan::new(
                info.min_nonzero.ln() - TAIL - 5.0 - PI * t.abs(),
                info.max_modulus.ln() + TAIL + 5.0 + PI * t.abs(),
                step_for(d, t.abs() * (d + PI)),
            )?;
            plan.integrate(real_axis, kernel)?
        }
    };
    Ok(a.with_entries(m * c64(pref, 0.0))?)
}

/// Scalar proxy for `‖f(λ) λ (A+λ)^{-1}‖` used to size the contour window.
fn envelope<F: Fn(C64) -> C64>(f: &F, lam: C64, scale: f64) -> f64 {
    f(lam).norm() * lam.norm() / (lam.norm() + scale)
}

/// `f(-A) = (1/2πi) ∫_{Γ_θ} f(λ) (A+λ)^{-1} dλ`.
pub fn hinfty_eval<F>(a: &DenseOperator, f: F, theta: f64, rule: Option<&QuadratureRule>) -> Result<DenseOperator>
where
    F: Fn(C64) -> C64,
{
    let info = SpectrumInfo::of(a)?;
    let phi = info.max_arg;
    for &z in &info.eigenvalues {
        if z.norm() > info.zero_tol && z.re <= 0.0 && phi >= PI / 2.0 && z.arg().abs() >= PI - theta {
            return Err(FuncalcError::SpectrumNotSectorial { eigenvalue: z });
        }
    }
    if !(theta > 0.0 && theta < PI - phi) {
        return Err(FuncalcError::PathNotAdmissible(format!(
            "θ = {theta:.4} must lie in (0, π - {phi:.4})"
        )));
    }
    let res = Resolver::new(a);
    let n = a.dim();
    let kernel = |lam: C64| -> Result<CMatrix> {
        let fl = f(lam);
        if !(fl.re.is_finite() && fl.im.is_finite()) {
            return Err(FuncalcError::DecayViolated(format!("f({lam}) is not finite")));
        }
        if fl == c64(0.0, 0.0) {
            return Ok(CMatrix::zeros(n, n));
        }
        Ok(res.inverse(lam)? * fl)
    };
    let pref = c64(0.0, -1.0 / (2.0 * PI));
    let m = match rule {
        Some(rule) => checked(rule.integrate(kernel)?)?,
        None => {
            let scale = info.min_nonzero;
            let (lo, hi) = decay_window(&f, theta, info.min_nonzero.ln(), info.max_modulus.ln(), scale)?;
            let d = (PI - theta - phi).min(theta);
            let plan = AutoPlan::new(lo, hi, step_for(d, 0.0))?;
            let up = C64::from_polar(1.0, theta);
            let down = up.conj();
            plan.integrate(
                |t| {
                    let r = t.exp();
                    let (lu, ld) = (up * r, down * r);
                    vec![(lu, lu), (ld, -ld)]
                },
                kernel,
            )?
        }
    };
    Ok(a.with_entries(m * pref)?)
}

/// Extends `[lo, hi]` (in `log|λ|`) until the integrand envelope at both ends
/// is negligible relative to its maximum.
fn decay_window<F: Fn(C64) -> C64>(f: &F, theta: f64, lo: f64, hi: f64, scale: f64) -> Result<(f64, f64)> {
    const STEP: f64 = 2.0;
    const LIMIT: f64 = 300.0;
    let at = |t: f64| {
        let r = t.exp();
        envelope(f, C64::from_polar(r, theta), scale).max(envelope(f, C64::from_polar(r, -theta), scale))
    };
    let mut lo = lo - 5.0;
    let mut hi = hi + 5.0;
    let mut peak: f64 = 0.0;
    let mut t = lo;
    while t <= hi {
        peak = peak.max(at(t));
        t += 0.25;
    }
    let (lo0, hi0) = (lo, hi);
    loop {
        let v = at(lo);
        if !v.is_finite() {
            return Err(FuncalcError::DecayViolated(format!("non-finite values near |λ| = e^{lo:.1}")));
        }
        peak = peak.max(v);
        if v <= 1e-15 * peak {
            break;
        }
        lo -= STEP;
        if lo0 - lo > LIMIT {
            return Err(FuncalcError::DecayViolated("no decay as |λ| → 0".into()));
        }
    }
    loop {
        let v = at(hi);
        if !v.is_finite() {
            return Err(FuncalcError::DecayViolated(format!("non-finite values near |λ| = e^{hi:.1}")));
        }
        peak = peak.max(v);
        if v <= 1e-15 * peak {
            break;
        }
        hi += STEP;
        if hi - hi0 > LIMIT {
            return Err(FuncalcError::DecayViolated("no decay as |λ| → ∞".into()));
        }
    }
    Ok((lo, hi))
}

/// `(A + cI)^z` for `Re z ≤ 0` via `(1/2πi) ∫ (-λ)^z (A+c+λ)^{-1} dλ` on a
/// hyperbolic contour around `-spec(A+c)`; `Re z = 0` uses [`imaginary_power`].
pub fn complex_power(a: &DenseOperator, z: C64, c: f64, rule: Option<&QuadratureRule>) -> Result<DenseOperator> {
    if z.re > 0.0 {
        return Err(FuncalcError::InvalidArgument(format!("Re z must be <= 0, got {z}")));
    }
    if z.re == 0.0 {
        return imaginary_power(a, z.im, c, rule);
    }
    let shifted = a.shifted(c64(c, 0.0));
    let info = SpectrumInfo::of(&shifted)?;
    info.require_right_half_plane()?;
    let phi = info.max_arg;
    if phi >= PI / 2.0 - 1e-3 {
        return Err(FuncalcError::SpectrumNotSectorial {
            eigenvalue: info
                .eigenvalues
                .iter()
                .copied()
                .max_by(|x, y| x.arg().abs().total_cmp(&y.arg().abs()))
                .unwrap_or_default(),
        });
    }
    let res = Resolver::new(&shifted);
    let kernel = |lam: C64| -> Result<CMatrix> { Ok(res.inverse(lam)? * principal_pow(-lam, z)) };
    let pref = c64(0.0, -1.0 / (2.0 * PI));
    let m = match rule {
        Some(rule) => checked(rule.integrate(kernel)?)?,
        None => {
            let beta = 0.5 * (phi + PI / 2.0);
            let rho = 0.5 * info.min_nonzero / beta.cos();
            let vertex_room = beta - (2.0 * beta.cos()).min(1.0).acos();
            let d = (PI / 2.0 - beta).min(beta - phi).min(vertex_room.max(1e-3));
            let u_max = (4.0 * info.max_modulus / rho).ln() + (TAIL + z.im.abs() * beta) / z.re.abs();
            let plan = AutoPlan::new(-u_max, u_max, step_for(d, z.im.abs() * d))?;
            plan.integrate(|u| vec![hyperbola_point(rho, beta, u)], kernel)?
        }
    };
    Ok(a.with_entries(m * pref)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct ShiftComparison {
    /// `(c, ‖(A+c)^σ - A^σ‖, M_fit c^σ)` in the order given.
    pub rows: Vec<(f64, f64, f64)>,
    pub m_fit: f64,
    /// Least-squares slope of log(measured) vs log(c).
    pub slope: f64,
    /// measured ≤ 1.05 M_fit c^σ for every c below the two largest.
    pub law_holds: bool,
}

/// `‖(A+c)^σ - A^σ‖` against the envelope `M c^σ`.
pub fn shift_comparison_probe(a: &DenseOperator, sigma: f64, c_values: &[f64]) -> Result<ShiftComparison> {
    if c_values.is_empty() || c_values.iter().any(|&c| !(c > 0.0 && c.is_finite())) {
        return Err(FuncalcError::InvalidArgument("c values must be positive".into()));
    }
    let base = if is_normal(a) {
        frac_power(a, &PowerSpec::new(sigma, 0.0, PowerMethod::EigenOracle), None)?
    } else {
        frac_power(a, &PowerSpec::new(sigma, 0.0, PowerMethod::ResolventLimit), None)?
    };
    let measured = c_values
        .iter()
        .map(|&c| {
            let p = frac_power(a, &PowerSpec::new(sigma, c, PowerMethod::Balakrishnan), None)?;
            Ok(a.norm_of(&(p.entries() - base.entries())))
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut order: Vec<usize> = (0..c_values.len()).collect();
    order.sort_by(|&i, &j| c_values[j].total_cmp(&c_values[i]));
    let m_fit = order
        .iter()
        .take(2)
        .map(|&i| measured[i] / c_values[i].powf(sigma))
        .fold(0.0, f64::max);
    let rows: Vec<(f64, f64, f64)> = c_values
        .iter()
        .zip(&measured)
        .map(|(&c, &m)| (c, m, m_fit * c.powf(sigma)))
        .collect();
    let law_holds = order.iter().skip(2).all(|&i| rows[i].1 <= 1.05 * rows[i].2);
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.1 > 0.0)
        .map(|r| (r.0.ln(), r.1.ln()))
        .collect();
    Ok(ShiftComparison {
        rows,
        m_fit,
        slope: least_squares_slope(&pts).0,
        law_holds,
    })
}

/// `A A* = A* A` in the operator metric, to roundoff.
pub fn is_normal(a: &DenseOperator) -> bool {
    let s = a.standard_form();
    let sh = s.adjoint();
    let scale = spectral_norm(&s).powi(2).max(f64::MIN_POSITIVE);
    spectral_norm(&(&s * &sh - &sh * &s)) <= 1e-12 * scale
}

/// `(slope, intercept)` of the least-squares line through the points.
pub fn least_squares_slope(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return (f64::NAN, f64::NAN);
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}
