//! Numerical probes of sectoriality, R-boundedness, resolvent decay of
//! fractional powers, and Laurent expansions of the resolvent at a pole.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use thiserror::Error;

use crate::funcalc::{frac_power, is_normal, least_squares_slope, FuncalcError, PowerSpec, Resolver, SpectrumInfo};
use crate::linop::{c64, CMatrix, CVector, DenseOperator, LinopError, C64};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SectorialError {
    #[error(transparent)]
    Linop(#[from] LinopError),
    #[error(transparent)]
    Funcalc(#[from] FuncalcError),
    #[error("contour node {node} is on the spectrum")]
    ContourHitsSpectrum { node: C64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

type Result<T> = std::result::Result<T, SectorialError>;

/// Sample count per ray and number of rays used by default.
pub const DEFAULT_RADIAL_SAMPLES: usize = 40;
pub const DEFAULT_RAYS: usize = 9;
/// Reports above this bound are treated as "not sectorial".
pub const UNBOUNDED_K: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SectorSample {
    pub lambda: C64,
    pub bound_value: f64,
}

/// Serialization shim for complex numbers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct C64Serde {
    pub re: f64,
    pub im: f64,
}

impl From<C64> for C64Serde {
    fn from(z: C64) -> Self {
        Self { re: z.re, im: z.im }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SectorProbeReport {
    pub angle_theta: f64,
    pub samples: Vec<SectorSample>,
    pub estimated_k: f64,
    pub min_modulus_sampled: f64,
    pub max_modulus_sampled: f64,
    /// Points where `A + λ` was singular; they are not in `samples`.
    pub skipped: Vec<C64>,
    /// Set when a sample hit the spectrum or the bound exceeds [`UNBOUNDED_K`].
    pub unbounded: bool,
}

#[derive(Serialize)]
struct JsonSample {
    re: f64,
    im: f64,
    value: f64,
}

#[derive(Serialize)]
struct JsonReport<'a> {
    theta: f64,
    samples: Vec<JsonSample>,
    #[serde(rename = "estimated_K")]
    estimated_k: f64,
    min_modulus_sampled: f64,
    max_modulus_sampled: f64,
    unbounded: bool,
    skipped: &'a [C64Serde],
}

impl SectorProbeReport {
    pub fn to_json(&self) -> String {
        let skipped: Vec<C64Serde> = self.skipped.iter().map(|&z| z.into()).collect();
        let report = JsonReport {
            theta: self.angle_theta,
            samples: self
                .samples
                .iter()
                .map(|s| JsonSample {
                    re: s.lambda.re,
                    im: s.lambda.im,
                    value: s.bound_value,
                })
                .collect(),
            estimated_k: self.estimated_k,
            min_modulus_sampled: self.min_modulus_sampled,
            max_modulus_sampled: self.max_modulus_sampled,
            unbounded: self.unbounded,
            skipped: &skipped,
        };
        serde_json::to_string_pretty(&report).expect("report serializes")
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "lambda_re,lambda_im,bound")?;
        for s in &self.samples {
            writeln!(out, "{:.16e},{:.16e},{:.16e}", s.lambda.re, s.lambda.im, s.bound_value)?;
        }
        Ok(())
    }
}

fn ray_angles(theta: f64, count: usize) -> Vec<f64> {
    if theta == 0.0 || count < 2 {
        return vec![0.0];
    }
    (0..count)
        .map(|j| -theta + 2.0 * theta * j as f64 / (count - 1) as f64)
        .collect()
}

fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp())
        .collect()
}

/// `|λ| ‖(A+λ)^{-1}‖`, or `None` when `A + λ` is singular.
fn resolvent_bound(a: &DenseOperator, lambda: C64) -> Option<f64> {
    let inv = a.shifted_inverse(lambda).ok()?;
    let v = lambda.norm() * a.norm_of(&inv);
    v.is_finite().then_some(v)
}

/// `|λ| / min_i |μ_i + λ|`: the resolvent bound of a normal operator with spectrum `μ`.
fn normal_resolvent_bound(spectrum: &[C64], lambda: C64) -> Option<f64> {
    let dist = spectrum.iter().map(|&mu| (mu + lambda).norm()).fold(f64::INFINITY, f64::min);
    let v = lambda.norm() / dist;
    (dist > 0.0 && v.is_finite()).then_some(v)
}

/// Samples `|λ| ‖(A+λ)^{-1}‖` over the sector `|arg λ| ≤ θ`.
///
/// Every ray is sampled at `radial_samples` log-spaced moduli; the largest
/// value on each ray is then refined by golden-section search in `log|λ|`
/// so that nearby spectrum of `-A` cannot hide between samples. When `A` is
/// normal in its metric the scan uses the spectral formula, and each ray's
/// maximizer is re-evaluated with an explicit inverse.
pub fn sectorial_bound_probe(
    a: &DenseOperator,
    theta: f64,
    radial_samples: usize,
    modulus_range: (f64, f64),
) -> Result<SectorProbeReport> {
    let (r_min, r_max) = modulus_range;
    if !(0.0..PI).contains(&theta) {
        return Err(SectorialError::InvalidArgument(format!("θ = {theta} not in [0, π)")));
    }
    if !(r_min > 0.0 && r_max >= r_min && r_max.is_finite()) {
        return Err(SectorialError::InvalidArgument(format!(
            "bad modulus range ({r_min}, {r_max})"
        )));
    }
    let radii = log_space(r_min, r_max, radial_samples.max(2));
    let spectrum = if is_normal(a) { Some(a.eigenvalues()?) } else { None };
    let scan = |lambda: C64| match &spectrum {
        Some(mu) => normal_resolvent_bound(mu, lambda),
        None => resolvent_bound(a, lambda),
    };
    let mut samples = Vec::new();
    let mut skipped = Vec::new();
    for psi in ray_angles(theta, DEFAULT_RAYS) {
        let dir = C64::from_polar(1.0, psi);
        let mut best: Option<(usize, f64)> = None;
        for (k, &r) in radii.iter().enumerate() {
            let lambda = dir * r;
            match scan(lambda) {
                Some(v) => {
                    samples.push(SectorSample {
                        lambda,
                        bound_value: v,
                    });
                    if best.is_none_or(|b| v > b.1) {
                        best = Some((k, v));
                    }
                }
                None => skipped.push(lambda),
            }
        }
        if let Some((k, _)) = best {
            let lo = radii[k.saturating_sub(1)].ln();
            let hi = radii[(k + 1).min(radii.len() - 1)].ln();
            if hi > lo {
                let f = |t: f64| scan(dir * t.exp()).unwrap_or(f64::INFINITY);
                let t = golden_max(f, lo, hi, GOLDEN_TOL);
                let lambda = dir * t.exp();
                match resolvent_bound(a, lambda) {
                    Some(v) => samples.push(SectorSample {
                        lambda,
                        bound_value: v,
                    }),
                    None => skipped.push(lambda),
                }
            }
        }
    }
    let estimated_k = samples.iter().map(|s| s.bound_value).fold(0.0, f64::max);
    let moduli = samples.iter().map(|s| s.lambda.norm());
    let min_modulus_sampled = moduli.clone().fold(f64::INFINITY, f64::min);
    let max_modulus_sampled = moduli.fold(0.0, f64::max);
    if !skipped.is_empty() {
        log::warn!("{} sector samples hit the spectrum", skipped.len());
    }
    Ok(SectorProbeReport {
        angle_theta: theta,
        unbounded: !skipped.is_empty() || estimated_k > UNBOUNDED_K,
        samples,
        estimated_k,
        min_modulus_sampled,
        max_modulus_sampled,
        skipped,
    })
}

/// Bracket width in `log|λ|` at which the golden-section refinement stops.
const GOLDEN_TOL: f64 = 1e-10;

/// Golden-section search for a maximum of `f` on `[lo, hi]`, to bracket width `tol`.
fn golden_max<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let iters = ((tol / (hi - lo)).ln() / g.ln()).ceil().max(0.0) as usize;
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..iters {
        if f1 >= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 >= f2 {
        x1
    } else {
        x2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RBoundEstimate {
    pub family_size: usize,
    pub trials: usize,
    pub vector_dim: usize,
    pub max_ratio: f64,
    pub uniform_norm_bound: f64,
    /// Whether every evaluated trial enumerated all sign patterns.
    pub exhaustive: bool,
}

/// How sign patterns are averaged in [`rademacher_rbound_estimate_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SignSampling {
    /// Exhaustive when at most [`EXHAUSTIVE_LIMIT`] operators, else Monte Carlo.
    #[default]
    Auto,
    Exhaustive,
    MonteCarlo(usize),
}

pub const EXHAUSTIVE_LIMIT: usize = 12;
pub const MONTE_CARLO_DRAWS: usize = 4096;

/// Ratio `‖Σ ε_k T_k x_k‖ / ‖Σ ε_k x_k‖` with both sides in `L²` over the signs.
///
/// The singletons `{T_k}` are evaluated first, so the estimate is never below
/// the largest single-operator ratio; `trials` further trials draw random
/// subsets of the family. All randomness comes from one seeded stream that is
/// consumed sequentially.
pub fn rademacher_rbound_estimate(
    family: &[DenseOperator],
    trials: usize,
    vectors_per_trial: usize,
    seed: u64,
) -> Result<RBoundEstimate> {
    rademacher_rbound_estimate_with(family, trials, vectors_per_trial, seed, SignSampling::Auto)
}

pub fn rademacher_rbound_estimate_with(
    family: &[DenseOperator],
    trials: usize,
    vectors_per_trial: usize,
    seed: u64,
    sampling: SignSampling,
) -> Result<RBoundEstimate> {
    let Some(first) = family.first() else {
        return Err(SectorialError::InvalidArgument("empty operator family".into()));
    };
    if trials == 0 {
        return Err(SectorialError::InvalidArgument("trials must be >= 1".into()));
    }
    let dim = first.dim();
    for op in family {
        if op.dim() != dim {
            return Err(LinopError::DimensionMismatch {
                expected: dim,
                got: op.dim(),
            }
            .into());
        }
    }
    let metric = first;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vectors = vectors_per_trial.max(1);
    let gauss = |rng: &mut ChaCha8Rng| -> CVector {
        CVector::from_fn(dim, |_, _| {
            c64(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal))
        })
    };

    let mut subsets: Vec<Vec<usize>> = (0..family.len()).map(|k| vec![k]).collect();
    for _ in 0..trials {
        let size = rng.random_range(1..=family.len());
        let mut idx: Vec<usize> = (0..family.len()).collect();
        // partial Fisher-Yates
        for i in 0..size {
            let j = rng.random_range(i..idx.len());
            idx.swap(i, j);
        }
        idx.truncate(size);
        idx.sort_unstable();
        subsets.push(idx);
    }

    let mut max_ratio: f64 = 0.0;
    let mut all_exhaustive = true;
    for subset in &subsets {
        for _ in 0..vectors {
            let xs: Vec<CVector> = subset.iter().map(|_| gauss(&mut rng)).collect();
            let ys: Vec<CVector> = subset
                .iter()
                .zip(&xs)
                .map(|(&k, x)| family[k].entries() * x)
                .collect();
            let n = subset.len();
            let exhaustive = match sampling {
                SignSampling::Auto => n <= EXHAUSTIVE_LIMIT,
                SignSampling::Exhaustive => true,
                SignSampling::MonteCarlo(_) => false,
            };
            let patterns: Vec<u64> = if exhaustive {
                (0..(1u64 << n)).collect()
            } else {
                let draws = match sampling {
                    SignSampling::MonteCarlo(d) => d.max(1),
                    _ => MONTE_CARLO_DRAWS,
                };
                (0..draws).map(|_| rng.random::<u64>()).collect()
            };
            all_exhaustive &= exhaustive;
            let (mut lhs, mut rhs) = (0.0, 0.0);
            let mut sy = CVector::zeros(dim);
            let mut sx = CVector::zeros(dim);
            for &bits in &patterns {
                sy.fill(c64(0.0, 0.0));
                sx.fill(c64(0.0, 0.0));
                for k in 0..n {
                    let sign = if (bits >> (k % 64)) & 1 == 1 { 1.0 } else { -1.0 };
                    sy.axpy(c64(sign, 0.0), &ys[k], c64(1.0, 0.0));
                    sx.axpy(c64(sign, 0.0), &xs[k], c64(1.0, 0.0));
                }
                lhs += metric.vector_norm(&sy).powi(2);
                rhs += metric.vector_norm(&sx).powi(2);
            }
            if rhs > 0.0 {
                max_ratio = max_ratio.max((lhs / rhs).sqrt());
            }
        }
    }
    let uniform_norm_bound = family.iter().map(|op| metric.norm_of(op.entries())).fold(0.0, f64::max);
    Ok(RBoundEstimate {
        family_size: family.len(),
        trials,
        vector_dim: dim,
        max_ratio,
        uniform_norm_bound,
        exhaustive: all_exhaustive,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayFit {
    pub c_fit: f64,
    pub exponent_fit: f64,
    /// `(|λ|, sup over rays of ‖A^σ(A+λ)^{-1}‖)`.
    pub points: Vec<(f64, f64)>,
}

/// Fits `log ‖A^σ(A+λ)^{-1}‖ ≈ log C + p log(1+|λ|)` over `|λ| ∈ [a_min, 1e5 a_max]`
/// on the rays `arg λ ∈ {-θ, 0, θ}`.
pub fn power_resolvent_decay_fit(a: &DenseOperator, sigma: f64, theta: f64, samples: usize) -> Result<DecayFit> {
    if !(sigma > 0.0 && sigma <= 1.0) {
        return Err(SectorialError::InvalidArgument(format!("σ = {sigma} not in (0,1]")));
    }
    let power = if sigma == 1.0 {
        a.entries().clone()
    } else {
        frac_power(a, &PowerSpec::balakrishnan(sigma), None)?.entries().clone()
    };
    let info = SpectrumInfo::of(a)?;
    let radii = log_space(info.min_nonzero, 1e5 * info.max_modulus, samples.max(8));
    let rays = if theta == 0.0 { vec![0.0] } else { vec![-theta, 0.0, theta] };
    let mut points = Vec::with_capacity(radii.len());
    for &r in &radii {
        let mut v: f64 = 0.0;
        for &psi in &rays {
            let inv = a.shifted_inverse(C64::from_polar(r, psi))?;
            v = v.max(a.norm_of(&(&power * inv)));
        }
        points.push((r, v));
    }
    let pts: Vec<(f64, f64)> = points.iter().map(|&(r, v)| ((1.0 + r).ln(), v.ln())).collect();
    let (slope, intercept) = least_squares_slope(&pts);
    Ok(DecayFit {
        c_fit: intercept.exp(),
        exponent_fit: slope,
        points,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaurentExpansion {
    pub pole: C64,
    pub order: usize,
    /// `B_k` for `k = -order ..= k_max`.
    pub coefficients: BTreeMap<i32, CMatrix>,
    pub contour_radius: f64,
    /// `‖B_{-order-1}‖`: zero when the pole order is at most `order`.
    pub below_order_norm: f64,
}

impl LaurentExpansion {
    pub fn coefficient(&self, k: i32) -> Option<&CMatrix> {
        self.coefficients.get(&k)
    }

    /// `Σ_k (λ-λ₀)^k B_k`.
    pub fn resum(&self, lambda: C64) -> CMatrix {
        let d = lambda - self.pole;
        let mut acc: Option<CMatrix> = None;
        for (&k, b) in &self.coefficients {
            let term = b * d.powi(k);
            acc = Some(match acc {
                Some(a) => a + term,
                None => term,
            });
        }
        acc.expect("at least one coefficient")
    }
}

/// Default contour radius: half the distance from `λ₀` to the nearest other
/// point of `-spec(A)` (1 when there is none).
pub fn default_laurent_radius(a: &DenseOperator, lambda0: C64) -> Result<f64> {
    let info = SpectrumInfo::of(a)?;
    let tol = info.zero_tol.max(1e-12 * lambda0.norm());
    let nearest = info
        .eigenvalues
        .iter()
        .map(|&z| (-z - lambda0).norm())
        .filter(|&d| d > tol)
        .fold(f64::INFINITY, f64::min);
    Ok(if nearest.is_finite() { 0.5 * nearest } else { 1.0 })
}

/// `B_k = (1/2πi) ∮ (λ-λ₀)^{-k-1} (A+λ)^{-1} dλ` by the trapezoid rule on a circle.
pub fn laurent_coefficients(
    a: &DenseOperator,
    lambda0: C64,
    order: usize,
    k_max: i32,
    contour_radius: Option<f64>,
    contour_nodes: usize,
) -> Result<LaurentExpansion> {
    if order == 0 {
        return Err(SectorialError::InvalidArgument("pole order must be >= 1".into()));
    }
    if contour_nodes < 64 {
        return Err(SectorialError::InvalidArgument(format!(
            "need at least 64 contour nodes, got {contour_nodes}"
        )));
    }
    let radius = match contour_radius {
        Some(r) if r > 0.0 && r.is_finite() => r,
        Some(r) => return Err(SectorialError::InvalidArgument(format!("contour radius {r}"))),
        None => default_laurent_radius(a, lambda0)?,
    };
    let info = SpectrumInfo::of(a)?;
    let res = Resolver::new(a);
    let n = a.dim();
    let k_min = -(order as i32) - 1;
    let mut sums: BTreeMap<i32, CMatrix> = (k_min..=k_max).map(|k| (k, CMatrix::zeros(n, n))).collect();
    let hit_tol = 1e-10 * radius.max(info.max_modulus * 1e-6);
    for j in 0..contour_nodes {
        let e = C64::from_polar(1.0, 2.0 * PI * j as f64 / contour_nodes as f64);
        let node = lambda0 + e * radius;
        if info.eigenvalues.iter().any(|&z| (node + z).norm() <= hit_tol) {
            return Err(SectorialError::ContourHitsSpectrum { node });
        }
        let r = res
            .inverse(node)
            .map_err(|_| SectorialError::ContourHitsSpectrum { node })?;
        let base = (e * radius).inv();
        for (&k, acc) in sums.iter_mut() {
            let f = base.powi(k);
            acc.zip_apply(&r, |x, y| *x += y * f);
        }
    }
    let scale = c64(1.0 / contour_nodes as f64, 0.0);
    let mut coefficients: BTreeMap<i32, CMatrix> = sums.into_iter().map(|(k, m)| (k, m * scale)).collect();
    let below = coefficients.remove(&k_min).expect("computed");
    Ok(LaurentExpansion {
        pole: lambda0,
        order,
        coefficients,
        contour_radius: radius,
        below_order_norm: a.norm_of(&below),
    })
}

/// Residual norms of `(A+λ₀)B_{-μ} = 0`, `(A+λ₀)B_0 + B_{-1} = I` and
/// `(A+λ₀)B_k + B_{k-1} = 0`, keyed by a readable identity name.
pub fn verify_laurent_identities(exp: &LaurentExpansion, a: &DenseOperator) -> BTreeMap<String, f64> {
    let shifted = a.shifted(exp.pole);
    let m = shifted.entries();
    let n = a.dim();
    let mu = exp.order as i32;
    let mut out = BTreeMap::new();
    if let Some(b) = exp.coefficients.get(&-mu) {
        out.insert(format!("(A+l0)B[{}]", -mu), a.norm_of(&(m * b)));
    }
    for (&k, b) in &exp.coefficients {
        let Some(prev) = exp.coefficients.get(&(k - 1)) else {
            continue;
        };
        let mut r = m * b + prev;
        if k == 0 {
            r -= CMatrix::identity(n, n);
            out.insert("(A+l0)B[0]+B[-1]-I".to_string(), a.norm_of(&r));
        } else {
            out.insert(format!("(A+l0)B[{k}]+B[{}]", k - 1), a.norm_of(&r));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoleCheck {
    pub is_simple: bool,
    pub sup_value: f64,
    /// Largest ratio of `sup‖λ(A+λ)^{-1}‖` between consecutive decades.
    pub max_growth_per_decade: f64,
}

pub const SIMPLE_POLE_GROWTH: f64 = 1.05;

/// Samples `‖λ(A+λ)^{-1}‖` on the rays `arg λ ∈ {0, ±π/4}` for `|λ|` from 1
/// down to `modulus_floor` (at least six decades); the pole at 0 is simple
/// when no decade grows the sup by a factor 1.05 or more.
pub fn simple_pole_check(a: &DenseOperator, modulus_floor: f64) -> Result<PoleCheck> {
    if !(modulus_floor > 0.0 && modulus_floor < 1.0) {
        return Err(SectorialError::InvalidArgument(format!("modulus floor {modulus_floor}")));
    }
    let decades = (-modulus_floor.log10()).ceil().max(6.0) as usize;
    const PER_DECADE: usize = 4;
    let rays = [0.0, PI / 4.0, -PI / 4.0];
    let mut values = Vec::with_capacity(decades * PER_DECADE + 1);
    // shifts approach the pole on purpose, so no conditioning guard here
    let res = Resolver::new(a);
    for i in 0..=decades * PER_DECADE {
        let r = 10f64.powf(-(i as f64) / PER_DECADE as f64);
        let mut v: f64 = 0.0;
        for &psi in &rays {
            let lambda = C64::from_polar(r, psi);
            let inv = res.inverse(lambda)?;
            v = v.max(r * a.norm_of(&inv));
        }
        values.push(v);
    }
    let mut growth: f64 = 0.0;
    for i in PER_DECADE..values.len() {
        growth = growth.max(values[i] / values[i - PER_DECADE]);
    }
    Ok(PoleCheck {
        is_simple: growth < SIMPLE_POLE_GROWTH,
        sup_value: values.iter().copied().fold(0.0, f64::max),
        max_growth_per_decade: growth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linop::spectral_norm;

    #[test]
    fn sector_probe_examples() {
        let r = sectorial_bound_probe(&DenseOperator::diagonal(&[1.0]), PI / 2.0, 40, (1e-3, 1e3)).unwrap();
        assert!(r.estimated_k <= 1.0 + 1e-9 && !r.unbounded);
        assert!(r.samples.len() >= 9 * 40);

        let r = sectorial_bound_probe(&DenseOperator::diagonal(&[1.0, 10.0, 100.0]), 3.0 * PI / 4.0, 40, (1e-3, 1e3))
            .unwrap();
        let bound = 1.0 / (PI / 4.0).sin();
        assert!(r.estimated_k <= bound + 1e-6, "{}", r.estimated_k);
        assert!(r.estimated_k >= bound - 1e-3, "{}", r.estimated_k);

        let r = sectorial_bound_probe(&DenseOperator::diagonal(&[-1.0, 2.0]), PI / 2.0, 40, (1e-3, 1e3)).unwrap();
        assert!(r.unbounded);
        assert!(r.estimated_k > UNBOUNDED_K || !r.skipped.is_empty());
    }

    #[test]
    fn sector_report_serialization() {
        let r = sectorial_bound_probe(&DenseOperator::diagonal(&[2.0]), 0.5, 4, (0.1, 10.0)).unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["theta"], 0.5);
        assert!(v["estimated_K"].as_f64().unwrap() > 0.0);
        assert!(v["samples"][0]["re"].is_number() && v["samples"][0]["value"].is_number());
        let mut csv = Vec::new();
        r.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("lambda_re,lambda_im,bound\n"));
        assert_eq!(text.lines().count(), r.samples.len() + 1);
    }

    #[test]
    fn rbound_examples() {
        let fam: Vec<_> = [2.0, 3.0, 5.0]
            .iter()
            .map(|&c| DenseOperator::identity(4).scaled(c64(c, 0.0)))
            .collect();
        let e = rademacher_rbound_estimate(&fam, 8, 4, 7).unwrap();
        assert!(e.max_ratio >= 4.9 && e.max_ratio <= 5.0 + 1e-9, "{}", e.max_ratio);
        assert!(e.exhaustive);

        let e = rademacher_rbound_estimate(&[DenseOperator::identity(3)], 3, 2, 1).unwrap();
        assert!((e.max_ratio - 1.0).abs() < 1e-12);

        let e = rademacher_rbound_estimate(&[DenseOperator::zeros(2), DenseOperator::zeros(2)], 3, 2, 1).unwrap();
        assert_eq!(e.max_ratio, 0.0);

        let bad = [DenseOperator::identity(2), DenseOperator::identity(3)];
        assert!(rademacher_rbound_estimate(&bad, 1, 1, 0).is_err());
    }

    #[test]
    fn rbound_is_seed_deterministic() {
        let fam: Vec<_> = (1..=5)
            .map(|k| DenseOperator::from_rows(&[&[k as f64, 1.0], &[0.0, 1.0]]).unwrap())
            .collect();
        let a = rademacher_rbound_estimate(&fam, 5, 3, 42).unwrap();
        let b = rademacher_rbound_estimate(&fam, 5, 3, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn decay_fit_examples() {
        // scalar closed form a^σ/(a+λ): slope -1 in log(1+|λ|)
        let f = power_resolvent_decay_fit(&DenseOperator::diagonal(&[1.0]), 0.5, 0.0, 40).unwrap();
        assert!((f.exponent_fit + 1.0).abs() < 0.02, "{}", f.exponent_fit);
        assert!(f.exponent_fit <= -0.5 + 0.05);
        for &(r, v) in &f.points {
            assert!((v - 1.0 / (1.0 + r)).abs() < 1e-10 * (1.0 / (1.0 + r)).max(1e-300) + 1e-14);
        }

        let f = power_resolvent_decay_fit(&DenseOperator::diagonal(&[1.0, 100.0]), 0.25, 0.0, 40).unwrap();
        assert!(f.exponent_fit <= -0.70, "{}", f.exponent_fit);

        let f = power_resolvent_decay_fit(&DenseOperator::diagonal(&[1.0, 3.0]), 1.0, PI / 2.0, 40).unwrap();
        assert!(f.exponent_fit <= 0.05);
        assert!(f.points[0].1 <= 1.0 + 1e-12);
    }

    #[test]
    fn laurent_examples() {
        let a = DenseOperator::diagonal(&[0.0, 2.0]);
        let e = laurent_coefficients(&a, c64(0.0, 0.0), 1, 3, None, 64).unwrap();
        let bm1 = e.coefficient(-1).unwrap();
        let b0 = e.coefficient(0).unwrap();
        let want_m1 = CMatrix::from_diagonal(&CVector::from_vec(vec![c64(1.0, 0.0), c64(0.0, 0.0)]));
        let want_0 = CMatrix::from_diagonal(&CVector::from_vec(vec![c64(0.0, 0.0), c64(0.5, 0.0)]));
        assert!(spectral_norm(&(bm1 - want_m1)) < 1e-12);
        assert!(spectral_norm(&(b0 - want_0)) < 1e-12);
        assert!(e.below_order_norm < 1e-12);
        let res = verify_laurent_identities(&e, &a);
        assert!(res.values().all(|&r| r <= 1e-10), "{res:?}");

        let id = DenseOperator::identity(2);
        let e = laurent_coefficients(&id, c64(0.0, 0.0), 1, 2, None, 64).unwrap();
        assert!(spectral_norm(e.coefficient(-1).unwrap()) <= 1e-10);
        assert!(spectral_norm(&(e.coefficient(0).unwrap() - CMatrix::identity(2, 2))) <= 1e-10);
        let res = verify_laurent_identities(&e, &id);
        assert!(res["(A+l0)B[0]+B[-1]-I"] <= 1e-10);

        let nil = DenseOperator::from_rows(&[&[0.0, 1.0], &[0.0, 0.0]]).unwrap();
        let e = laurent_coefficients(&nil, c64(0.0, 0.0), 2, 2, None, 64).unwrap();
        assert!(spectral_norm(&(e.coefficient(-2).unwrap() + nil.entries())) < 1e-12);
        assert!(spectral_norm(&(e.coefficient(-1).unwrap() - CMatrix::identity(2, 2))) < 1e-12);
        assert!(spectral_norm(e.coefficient(0).unwrap()) < 1e-12);
    }

    #[test]
    fn laurent_resummation() {
        let a = DenseOperator::from_rows(&[&[0.0, 1.0, 0.0], &[0.0, 3.0, 1.0], &[0.0, 0.0, 5.0]]).unwrap();
        let e = laurent_coefficients(&a, c64(0.0, 0.0), 1, 20, None, 128).unwrap();
        let lam = c64(0.4, 0.3);
        let exact = a.shifted_inverse(lam).unwrap();
        let err = spectral_norm(&(e.resum(lam) - &exact)) / spectral_norm(&exact);
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn laurent_contour_on_spectrum() {
        let a = DenseOperator::diagonal(&[0.0, 1.0]);
        assert!(matches!(
            laurent_coefficients(&a, c64(0.0, 0.0), 1, 1, Some(1.0), 64),
            Err(SectorialError::ContourHitsSpectrum { .. })
        ));
    }

    #[test]
    fn simple_pole_examples() {
        let p = simple_pole_check(&DenseOperator::diagonal(&[0.0, 1.0]), 1e-6).unwrap();
        assert!(p.is_simple && (p.sup_value - 1.0).abs() < 1e-6);
        let nil = DenseOperator::from_rows(&[&[0.0, 1.0], &[0.0, 0.0]]).unwrap();
        assert!(!simple_pole_check(&nil, 1e-6).unwrap().is_simple);
        assert!(simple_pole_check(&DenseOperator::diagonal(&[0.0, 0.0, 3.0]), 1e-6).unwrap().is_simple);
    }
}
