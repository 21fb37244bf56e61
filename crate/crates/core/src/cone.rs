//! Cone geometry: cross-section spectra, weight windows, the per-mode
//! log-radial Laplacian with the optional constant-function extension,
//! Mellin–Sobolev norms, tip-decay fits and the dilation covariance of the
//! model cone.
//!
//! Grid layout: `count` points `t_i = log x_min + i·h`, `t_{count-1} = 0`.
//! Points `0..count-1` carry the radial unknowns; the last one (`x = 1`) is the
//! Dirichlet node, kept as a decoupled diagonal row so every block has
//! `count` rows and the stored value stays pinned to zero under any
//! evolution. The tip ghost `t_{-1}` holds zero (decay condition).
//! Under the constant-function extension mode 0 gets one more unknown `c`:
//! the physical function is `v + c`, and since constants are harmonic the
//! block is `blockdiag(Δ_v, 0)`.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::funcalc::least_squares_slope;
use crate::linop::{c64, CVector, DenseOperator, LinopError, C64};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConeError {
    #[error(transparent)]
    Linop(#[from] LinopError),
    #[error("invalid cross-section: {0}")]
    InvalidCrossSection(String),
    #[error("empty weight window: -1 + mu_1 = {upper} <= (n-3)/2 = {lower}")]
    EmptyWindow { lower: f64, upper: f64 },
    #[error("gamma = {gamma} outside the weight window ({lo}, {hi})")]
    GammaOutsideWindow { gamma: f64, lo: f64, hi: f64 },
    #[error("grid too coarse: {count} points (need >= {min})")]
    GridTooCoarse { count: usize, min: usize },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("unsupported smoothness s = {0} (use 0, 1 or 2)")]
    UnsupportedSmoothness(u32),
    #[error("no usable grid points in the requested window")]
    WindowEmpty,
    #[error("shift of {k} steps too large (must be < {limit})")]
    ShiftTooLarge { k: usize, limit: usize },
    #[error("function does not match the operator layout: {0}")]
    LayoutMismatch(String),
    #[error("cross-section file: {0}")]
    Io(String),
}

type Result<T> = std::result::Result<T, ConeError>;

pub const MIN_GRID_POINTS: usize = 32;
/// Mode truncation for the builtin cross-sections: stop once |λ_J| ≥ 1e4 or J = 64.
pub const MODE_EIGENVALUE_CAP: f64 = 1e4;
pub const MODE_COUNT_CAP: usize = 64;

/// Spectrum of the cross-section Laplacian: distinct eigenvalues `0 = λ_0 > λ_1 > …`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossSection {
    pub n: usize,
    pub eigenvalues: Vec<f64>,
    pub multiplicities: Vec<usize>,
    pub components: usize,
}

impl CrossSection {
    pub fn new(n: usize, eigenvalues: Vec<f64>, multiplicities: Vec<usize>, components: usize) -> Result<Self> {
        let cs = Self {
            n,
            eigenvalues,
            multiplicities,
            components,
        };
        cs.validate()?;
        Ok(cs)
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ConeError::InvalidCrossSection(m));
        if self.n == 0 {
            return bad("n must be >= 1".into());
        }
        if self.components == 0 {
            return bad("components must be >= 1".into());
        }
        if self.eigenvalues.is_empty() || self.eigenvalues.len() != self.multiplicities.len() {
            return bad("eigenvalues and multiplicities must be non-empty and of equal length".into());
        }
        if self.eigenvalues[0] != 0.0 {
            return bad("the first eigenvalue must be 0".into());
        }
        if self.multiplicities[0] != self.components {
            return bad(format!(
                "eigenvalue 0 must have multiplicity k_B = {} (got {})",
                self.components, self.multiplicities[0]
            ));
        }
        if self.multiplicities.iter().any(|&m| m == 0) {
            return bad("multiplicities must be positive".into());
        }
        if self.eigenvalues.iter().any(|x| !x.is_finite() || *x > 0.0) {
            return bad("eigenvalues must be finite and non-positive".into());
        }
        if self.eigenvalues.windows(2).any(|w| w[1] >= w[0]) {
            return bad("eigenvalues must be strictly decreasing".into());
        }
        Ok(())
    }

    /// Unit circle, `λ_j = -j²` (multiplicity 2 for j ≥ 1).
    pub fn circle(max_mode: Option<usize>) -> Self {
        let j_max = max_mode.unwrap_or_else(|| default_mode_limit(|j| (j * j) as f64));
        let eigenvalues = (0..=j_max).map(|j| -((j * j) as f64)).collect();
        let multiplicities = (0..=j_max).map(|j| if j == 0 { 1 } else { 2 }).collect();
        Self::new(1, eigenvalues, multiplicities, 1).expect("circle spectrum is valid")
    }

    /// Unit 2-sphere, `λ_l = -l(l+1)` with multiplicity `2l+1`.
    pub fn sphere(max_mode: Option<usize>) -> Self {
        let l_max = max_mode.unwrap_or_else(|| default_mode_limit(|l| (l * (l + 1)) as f64));
        let eigenvalues = (0..=l_max).map(|l| -((l * (l + 1)) as f64)).collect();
        let multiplicities = (0..=l_max).map(|l| 2 * l + 1).collect();
        Self::new(2, eigenvalues, multiplicities, 1).expect("sphere spectrum is valid")
    }

    pub fn builtin(name: &str, max_mode: Option<usize>) -> Option<Self> {
        match name {
            "circle" => Some(Self::circle(max_mode)),
            "sphere" => Some(Self::sphere(max_mode)),
            _ => None,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cs: Self = toml::from_str(text).map_err(|e| ConeError::Io(e.to_string()))?;
        cs.validate()?;
        Ok(cs)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ConeError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Keep modes `0..=max_mode`.
    pub fn truncated(&self, max_mode: usize) -> Self {
        let keep = (max_mode + 1).min(self.eigenvalues.len());
        Self {
            n: self.n,
            eigenvalues: self.eigenvalues[..keep].to_vec(),
            multiplicities: self.multiplicities[..keep].to_vec(),
            components: self.components,
        }
    }

    pub fn mode_count(&self) -> usize {
        self.eigenvalues.len()
    }
}

fn default_mode_limit(lambda: impl Fn(usize) -> f64) -> usize {
    (1..=MODE_COUNT_CAP)
        .find(|&j| lambda(j) >= MODE_EIGENVALUE_CAP)
        .unwrap_or(MODE_COUNT_CAP)
}

/// `μ_j = √(((n-1)/2)² - λ_j)` for every distinct eigenvalue.
pub fn mu_exponents(cs: &CrossSection) -> Vec<f64> {
    let a = (cs.n as f64 - 1.0) / 2.0;
    cs.eigenvalues.iter().map(|&l| (a * a - l).sqrt()).collect()
}

/// `μ_j` repeated by multiplicity.
pub fn mu_list_expanded(cs: &CrossSection) -> Vec<f64> {
    mu_exponents(cs)
        .into_iter()
        .zip(&cs.multiplicities)
        .flat_map(|(mu, &m)| std::iter::repeat_n(mu, m))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeightWindow {
    pub gamma_lo: f64,
    pub gamma_hi: f64,
    pub sigma0: f64,
}

impl WeightWindow {
    pub fn contains(&self, gamma: f64) -> bool {
        gamma > self.gamma_lo && gamma < self.gamma_hi
    }
}

/// `(n-3)/2 < γ < min(-1 + μ_1, (n+1)/2)` and `σ₀ = max(0, ((n+3)/2 - μ_1)/2)`.
pub fn weight_window(cs: &CrossSection) -> Result<WeightWindow> {
    let n = cs.n as f64;
    let mu = mu_exponents(cs);
    let mu1 = mu.get(1).copied().unwrap_or(f64::INFINITY);
    let lower = (n - 3.0) / 2.0;
    if -1.0 + mu1 <= lower {
        return Err(ConeError::EmptyWindow {
            lower,
            upper: -1.0 + mu1,
        });
    }
    let sigma0 = if mu1.is_finite() {
        (0.5 * ((n + 3.0) / 2.0 - mu1)).max(0.0)
    } else {
        0.0
    };
    Ok(WeightWindow {
        gamma_lo: lower,
        gamma_hi: (-1.0 + mu1).min((n + 1.0) / 2.0),
        sigma0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Sign {
    #[serde(rename = "+")]
    Plus,
    #[serde(rename = "-")]
    Minus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AsymptoticExponent {
    pub q: f64,
    pub j: usize,
    pub sign: Sign,
}

/// `q_j^± = (n-1)/2 ± μ_j` inside `I_γ = ((n-3)/2 - γ, (n+1)/2 - γ)`, sorted by `q`.
pub fn asymptotics_exponents(cs: &CrossSection, gamma: f64) -> Vec<AsymptoticExponent> {
    let n = cs.n as f64;
    let (lo, hi) = ((n - 3.0) / 2.0 - gamma, (n + 1.0) / 2.0 - gamma);
    let a = (n - 1.0) / 2.0;
    let mut out = Vec::new();
    for (j, mu) in mu_exponents(cs).into_iter().enumerate() {
        for (q, sign) in [(a + mu, Sign::Plus), (a - mu, Sign::Minus)] {
            if q > lo && q < hi {
                out.push(AsymptoticExponent { q, j, sign });
            }
        }
    }
    out.sort_by(|x, y| x.q.total_cmp(&y.q).then(x.j.cmp(&y.j)));
    out
}

/// Distinct `q` values of [`asymptotics_exponents`].
pub fn distinct_exponents(cs: &CrossSection, gamma: f64) -> Vec<f64> {
    let mut qs: Vec<f64> = asymptotics_exponents(cs, gamma).iter().map(|e| e.q).collect();
    qs.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    qs
}

/// Log-uniform radial grid on `[x_min, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConeGrid {
    pub x_min: f64,
    pub count: usize,
    pub gamma: f64,
    pub h: f64,
}

impl ConeGrid {
    pub fn new(x_min: f64, count: usize, gamma: f64) -> Result<Self> {
        if count < MIN_GRID_POINTS {
            return Err(ConeError::GridTooCoarse {
                count,
                min: MIN_GRID_POINTS,
            });
        }
        if !(x_min > 0.0 && x_min < 1.0) {
            return Err(ConeError::InvalidGrid(format!("x_min = {x_min} must lie in (0,1)")));
        }
        if !gamma.is_finite() {
            return Err(ConeError::InvalidGrid("gamma must be finite".into()));
        }
        Ok(Self {
            x_min,
            count,
            gamma,
            h: -x_min.ln() / (count - 1) as f64,
        })
    }

    pub fn t(&self, i: usize) -> f64 {
        if i + 1 == self.count {
            0.0
        } else {
            self.x_min.ln() + i as f64 * self.h
        }
    }

    pub fn x(&self, i: usize) -> f64 {
        self.t(i).exp()
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.count).map(|i| self.x(i)).collect()
    }

    /// Trapezoid weights in `t`.
    pub fn trapezoid(&self) -> Vec<f64> {
        (0..self.count)
            .map(|i| if i == 0 || i + 1 == self.count { 0.5 * self.h } else { self.h })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Extension {
    Minimal,
    #[default]
    WithCOmega,
}

/// Tridiagonal radial stencil of one mode (rows `0..count`).
#[derive(Debug, Clone, PartialEq)]
pub struct Stencil {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConeOperator {
    pub cross_section: CrossSection,
    pub grid: ConeGrid,
    pub extension: Extension,
    /// `Δ_j` (negative semidefinite) for each distinct cross-section eigenvalue.
    pub mode_blocks: Vec<DenseOperator>,
    stencils: Vec<Stencil>,
}

/// Per-mode radial matrices of `x^{-2}((x∂_x)² + (n-1)x∂_x + λ_j)`.
pub fn assemble_cone_laplacian(cs: &CrossSection, grid: &ConeGrid, extension: Extension) -> Result<ConeOperator> {
    let window = weight_window(cs)?;
    if extension == Extension::WithCOmega && !window.contains(grid.gamma) {
        return Err(ConeError::GammaOutsideWindow {
            gamma: grid.gamma,
            lo: window.gamma_lo,
            hi: window.gamma_hi,
        });
    }
    let m = grid.count;
    let h = grid.h;
    let a = (cs.n as f64 - 1.0) * h / 2.0;
    if a >= 1.0 {
        return Err(ConeError::InvalidGrid(format!(
            "step h = {h} too large for n = {} (need (n-1)h/2 < 1)",
            cs.n
        )));
    }
    let xs = grid.points();
    let inv_h2 = 1.0 / (h * h);
    let mut blocks = Vec::with_capacity(cs.mode_count());
    let mut stencils = Vec::with_capacity(cs.mode_count());
    // symmetrizing weights: d_{i+1}/d_i = upper_i / lower_{i+1}
    let lower_coef = |i: usize| inv_h2 * (1.0 - a) / (xs[i] * xs[i]);
    let upper_coef = |i: usize| inv_h2 * (1.0 + a) / (xs[i] * xs[i]);
    let mut weights = Vec::with_capacity(m);
    weights.push(h * grid.x_min.powi(cs.n as i32 + 1));
    for i in 0..m - 1 {
        let next = weights[i] * upper_coef(i) / lower_coef(i + 1);
        weights.push(next);
    }
    for (j, &lam) in cs.eigenvalues.iter().enumerate() {
        let mut st = Stencil {
            lower: vec![0.0; m],
            diag: vec![0.0; m],
            upper: vec![0.0; m],
        };
        for i in 0..m {
            let x2 = xs[i] * xs[i];
            st.diag[i] = (-2.0 * inv_h2 + lam) / x2;
            if i + 1 == m {
                // Dirichlet node: decoupled
                st.diag[i] = -2.0 * inv_h2 / x2;
                continue;
            }
            if i > 0 {
                st.lower[i] = lower_coef(i);
            }
            if i + 2 < m {
                st.upper[i] = upper_coef(i);
            }
        }
        let augmented = j == 0 && extension == Extension::WithCOmega;
        let dim = if augmented { m + 1 } else { m };
        let mut mat = DMatrix::<f64>::zeros(dim, dim);
        for i in 0..m {
            mat[(i, i)] = st.diag[i];
            if i > 0 {
                mat[(i, i - 1)] = st.lower[i];
            }
            if i + 1 < m {
                mat[(i, i + 1)] = st.upper[i];
            }
        }
        let mut w = weights.clone();
        if augmented {
            // ‖1‖² in the same discrete metric
            w.push(weights[..m - 1].iter().sum());
        }
        let op = DenseOperator::from_real(&mat)?
            .with_weights(w)?
            .with_label(format!("cone mode {j}"));
        blocks.push(op);
        stencils.push(st);
    }
    Ok(ConeOperator {
        cross_section: cs.clone(),
        grid: grid.clone(),
        extension,
        mode_blocks: blocks,
        stencils,
    })
}

impl ConeOperator {
    pub fn mode_count(&self) -> usize {
        self.mode_blocks.len()
    }

    /// `Δ_j`.
    pub fn block(&self, j: usize) -> &DenseOperator {
        &self.mode_blocks[j]
    }

    /// `-Δ_j`, the positive operator used by the functional calculus.
    pub fn positive_block(&self, j: usize) -> DenseOperator {
        self.mode_blocks[j].scaled(c64(-1.0, 0.0))
    }

    pub fn stencil(&self, j: usize) -> &Stencil {
        &self.stencils[j]
    }

    pub fn is_augmented(&self, j: usize) -> bool {
        j == 0 && self.extension == Extension::WithCOmega
    }

    /// Index of the constant-function unknown in mode 0, if present.
    pub fn c_index(&self) -> Option<usize> {
        (self.extension == Extension::WithCOmega).then_some(self.grid.count)
    }

    /// `max_i x_i² (|lower| + |diag| + |upper|)`, the size of the unscaled stencil.
    pub fn stencil_scale(&self, j: usize) -> f64 {
        let st = &self.stencils[j];
        (0..self.grid.count)
            .map(|i| {
                let x2 = self.grid.x(i).powi(2);
                x2 * (st.lower[i].abs() + st.diag[i].abs() + st.upper[i].abs())
            })
            .fold(0.0, f64::max)
    }

    /// `Δ_j` applied to the radial part only (ghost and Dirichlet values zero).
    pub fn apply_radial(&self, j: usize, v: &CVector) -> CVector {
        let st = &self.stencils[j];
        let m = self.grid.count;
        CVector::from_fn(m, |i, _| {
            let mut acc = v[i] * st.diag[i];
            if i > 0 {
                acc += v[i - 1] * st.lower[i];
            }
            if i + 1 < m {
                acc += v[i + 1] * st.upper[i];
            }
            acc
        })
    }
}

/// A function on the cone, stored per mode copy `(j, copy)` as radial values
/// on the grid, plus the constant-function coefficients per boundary component.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeFunction {
    pub coefficients: BTreeMap<(usize, usize), CVector>,
    pub c_omega_part: Vec<C64>,
}

impl ConeFunction {
    pub fn zeros(op: &ConeOperator) -> Self {
        let m = op.grid.count;
        let mut coefficients = BTreeMap::new();
        for (j, &mult) in op.cross_section.multiplicities.iter().enumerate() {
            for copy in 0..mult {
                coefficients.insert((j, copy), CVector::zeros(m));
            }
        }
        let c = match op.extension {
            Extension::WithCOmega => vec![c64(0.0, 0.0); op.cross_section.components],
            Extension::Minimal => Vec::new(),
        };
        Self {
            coefficients,
            c_omega_part: c,
        }
    }

    /// Radial profile in mode `(0, 0)` with constant part `c`.
    pub fn radial(op: &ConeOperator, values: &[f64], c: f64) -> Result<Self> {
        let mut u = Self::zeros(op);
        u.set_mode(0, 0, crate::linop::real_vector(values))?;
        if let Some(slot) = u.c_omega_part.first_mut() {
            *slot = c64(c, 0.0);
        }
        Ok(u)
    }

    pub fn set_mode(&mut self, j: usize, copy: usize, values: CVector) -> Result<()> {
        let slot = self
            .coefficients
            .get_mut(&(j, copy))
            .ok_or_else(|| ConeError::LayoutMismatch(format!("no mode ({j}, {copy})")))?;
        if slot.len() != values.len() {
            return Err(ConeError::LayoutMismatch(format!(
                "mode vector has {} entries, grid has {}",
                values.len(),
                slot.len()
            )));
        }
        *slot = values;
        Ok(())
    }

    pub fn mode(&self, j: usize, copy: usize) -> Option<&CVector> {
        self.coefficients.get(&(j, copy))
    }

    pub fn scaled(&self, f: f64) -> Self {
        Self {
            coefficients: self.coefficients.iter().map(|(k, v)| (*k, v * c64(f, 0.0))).collect(),
            c_omega_part: self.c_omega_part.iter().map(|z| z * f).collect(),
        }
    }
}

/// Discrete `H^{s,γ}` norm of the `u_H` part:
/// `max_{k≤s} Σ_j Σ_i x_i^{n+1-2γ} |(x∂_x)^k u_j|² (1+|λ_j|)^{s-k} Δt`.
pub fn mellin_norm(u: &ConeFunction, s: u32, gamma: f64, op: &ConeOperator) -> Result<f64> {
    if s > 2 {
        return Err(ConeError::UnsupportedSmoothness(s));
    }
    let grid = &op.grid;
    let m = grid.count;
    let n = op.cross_section.n as f64;
    let xs = grid.points();
    let tw = grid.trapezoid();
    let weight: Vec<f64> = (0..m).map(|i| xs[i].powf(n + 1.0 - 2.0 * gamma) * tw[i]).collect();
    let h = grid.h;
    let mut best: f64 = 0.0;
    for k in 0..=s {
        let mut total = 0.0;
        for (&(j, _), v) in &u.coefficients {
            if v.len() != m {
                return Err(ConeError::LayoutMismatch(format!("mode {j} has {} entries", v.len())));
            }
            let lam = op.cross_section.eigenvalues[j].abs();
            let multiplier = (1.0 + lam).powi((s - k) as i32);
            let at = |i: isize| -> C64 {
                if i < 0 || i as usize >= m {
                    c64(0.0, 0.0)
                } else {
                    v[i as usize]
                }
            };
            for i in 0..m {
                let ii = i as isize;
                let d = match k {
                    0 => at(ii),
                    1 => (at(ii + 1) - at(ii - 1)) / (2.0 * h),
                    _ => (at(ii + 1) - at(ii) * 2.0 + at(ii - 1)) / (h * h),
                };
                total += weight[i] * d.norm_sqr() * multiplier;
            }
        }
        best = best.max(total);
    }
    Ok(best.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayFitResult {
    pub alpha: f64,
    pub r2: f64,
}

/// Slope of `log max_j |u_{H,j}(x)|` against `log x` over grid points in the window.
pub fn tip_decay_fit(u: &ConeFunction, grid: &ConeGrid, fit_window: (f64, f64)) -> Result<DecayFitResult> {
    let (xa, xb) = fit_window;
    let mut pts = Vec::new();
    for i in 0..grid.count {
        let x = grid.x(i);
        if x < xa * (1.0 - 1e-12) || x > xb * (1.0 + 1e-12) {
            continue;
        }
        let v = u
            .coefficients
            .values()
            .filter_map(|c| c.get(i).map(|z| z.norm()))
            .fold(0.0, f64::max);
        if v > 0.0 && v.is_finite() {
            pts.push((x.ln(), v.ln()));
        }
    }
    if pts.len() < 2 {
        return Err(ConeError::WindowEmpty);
    }
    let (slope, intercept) = least_squares_slope(&pts);
    let mean = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
    let ss_tot: f64 = pts.iter().map(|p| (p.1 - mean).powi(2)).sum();
    let ss_res: f64 = pts.iter().map(|p| (p.1 - slope * p.0 - intercept).powi(2)).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(DecayFitResult { alpha: slope, r2 })
}

const DILATION_TRIALS: usize = 20;
const DILATION_SEED: u64 = 0x5eed_d11a;

/// Max relative mismatch of `(λ - Δ) f = ρ² κ_ρ (λ/ρ² - Δ) κ_ρ^{-1} f` over all
/// modes and random interior-supported `f`, with `ρ = e^{k h}` and
/// `(κ_ρ u)(x) = ρ^η u(ρx)`, `η = (n+1)/2 - γ`.
pub fn dilation_covariance_check(op: &ConeOperator, lambda: C64, shift_steps: usize) -> Result<f64> {
    let m = op.grid.count;
    let limit = m / 4;
    if shift_steps >= limit {
        return Err(ConeError::ShiftTooLarge { k: shift_steps, limit });
    }
    let k = shift_steps;
    // support of f: rows whose images and stencil neighbours stay interior
    let (lo, hi) = (2 * k + 2, m.saturating_sub(2 * k + 3));
    if lo >= hi {
        return Err(ConeError::WindowEmpty);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(DILATION_SEED);
    let mut worst: f64 = 0.0;
    for j in 0..op.mode_count() {
        for _ in 0..DILATION_TRIALS {
            let mut f = CVector::zeros(m);
            for i in lo..hi {
                f[i] = c64(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
            }
            worst = worst.max(dilation_residual(op, j, lambda, k, &f)?);
        }
    }
    Ok(worst)
}

/// Residual of the dilation identity for one mode and one vector; compares
/// rows that stay at least `k + 1` away from both ends.
pub fn dilation_residual(op: &ConeOperator, j: usize, lambda: C64, k: usize, f: &CVector) -> Result<f64> {
    let m = op.grid.count;
    if f.len() != m {
        return Err(ConeError::LayoutMismatch(format!("vector has {} entries", f.len())));
    }
    let rows = (k + 1)..m.saturating_sub(k + 2);
    if rows.is_empty() {
        return Err(ConeError::WindowEmpty);
    }
    // f must vanish where the shifted copies would leave the grid
    let support_ok = (0..m).all(|i| f[i] == c64(0.0, 0.0) || (i >= 2 * k + 2 && i + 2 * k + 3 <= m));
    if !support_ok || f.iter().all(|z| *z == c64(0.0, 0.0)) {
        return Err(ConeError::WindowEmpty);
    }
    let eta = (op.cross_section.n as f64 + 1.0) / 2.0 - op.grid.gamma;
    let rho = (k as f64 * op.grid.h).exp();
    let rho_eta = rho.powf(eta);
    let lhs = f * lambda - op.apply_radial(j, f);
    // g = κ^{-1} f: g_i = ρ^{-η} f_{i-k}
    let mut g = CVector::zeros(m);
    for i in k..m {
        g[i] = f[i - k] / rho_eta;
    }
    let w = &g * (lambda / (rho * rho)) - op.apply_radial(j, &g);
    let mut num: f64 = 0.0;
    let mut den: f64 = 0.0;
    for i in rows {
        let rhs = if i + k < m { w[i + k] * rho_eta * rho * rho } else { c64(0.0, 0.0) };
        num = num.max((lhs[i] - rhs).norm());
        den = den.max(lhs[i].norm());
    }
    Ok(if den > 0.0 { num / den } else { num })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeSpectrum {
    pub mode: usize,
    pub multiplicity: usize,
    /// Smallest and largest eigenvalue of `-Δ_j`.
    pub min_eig: f64,
    pub max_eig: f64,
    pub kernel_count: usize,
    /// ‖S - Sᵀ‖/‖S‖ for the symmetrized block.
    pub symmetry_defect: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumReport {
    pub modes: Vec<ModeSpectrum>,
    /// Kernel dimension of `-Δ` counted with cross-section multiplicity.
    pub kernel_dimension: usize,
    pub expected_kernel: usize,
    pub nonnegative: bool,
    pub symmetric: bool,
    pub ok: bool,
}

/// Eigenvalue audit of every block of `-Δ`.
///
/// Blocks are symmetric after the weighted similarity, so the spectrum is
/// real by construction; the smallest eigenvalue of the radial part is taken
/// from the inverse (accurate for graded matrices) and the constant-function
/// unknown contributes its structural zero.
pub fn spectrum_check(op: &ConeOperator) -> SpectrumReport {
    let m = op.grid.count;
    let mut modes = Vec::new();
    let mut kernel_dimension = 0;
    let mut nonnegative = true;
    let mut symmetric = true;
    for j in 0..op.mode_count() {
        let neg = op.positive_block(j);
        let s = neg.standard_form().map(|z| z.re);
        let norm = s.norm().max(f64::MIN_POSITIVE);
        let symmetry_defect = (&s - s.transpose()).norm() / norm;
        let radial = s.view((0, 0), (m, m)).into_owned();
        let scale = op.stencil_scale(j);
        let tol = 1e-8 * scale;
        let sym = (&radial + radial.transpose()) * 0.5;
        let max_eig = nalgebra::SymmetricEigen::new(sym.clone())
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let (min_radial, radial_kernel) = match sym.clone().lu().try_inverse() {
            Some(inv) => {
                let inv = (&inv + inv.transpose()) * 0.5;
                let ev = nalgebra::SymmetricEigen::new(inv).eigenvalues;
                let largest = ev.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let smallest = ev.iter().copied().fold(f64::INFINITY, f64::min);
                // negative inverse eigenvalues mean negative eigenvalues of the block
                let min = if smallest < 0.0 { 1.0 / smallest } else { 1.0 / largest };
                let kernel = ev.iter().filter(|&&e| e.abs() >= 1.0 / tol).count();
                (min, kernel)
            }
            None => (0.0, 1),
        };
        let mut min_eig = min_radial;
        let mut kernel_count = radial_kernel;
        if op.is_augmented(j) {
            min_eig = min_eig.min(0.0);
            kernel_count += 1;
        }
        nonnegative &= min_eig >= -tol;
        symmetric &= symmetry_defect <= 1e-10;
        kernel_dimension += kernel_count * op.cross_section.multiplicities[j];
        modes.push(ModeSpectrum {
            mode: j,
            multiplicity: op.cross_section.multiplicities[j],
            min_eig,
            max_eig,
            kernel_count,
            symmetry_defect,
            scale,
        });
    }
    let expected_kernel = match op.extension {
        Extension::WithCOmega => op.cross_section.components,
        Extension::Minimal => 0,
    };
    SpectrumReport {
        ok: nonnegative && symmetric && kernel_dimension == expected_kernel,
        modes,
        kernel_dimension,
        expected_kernel,
        nonnegative,
        symmetric,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linop::real_vector;

    fn circle_op(count: usize, gamma: f64, ext: Extension) -> ConeOperator {
        let cs = CrossSection::circle(Some(4));
        let grid = ConeGrid::new(1e-3, count, gamma).unwrap();
        assemble_cone_laplacian(&cs, &grid, ext).unwrap()
    }

    #[test]
    fn mu_examples() {
        let mu = mu_exponents(&CrossSection::circle(Some(5)));
        for (j, m) in mu.iter().enumerate() {
            assert!((m - j as f64).abs() < 1e-15);
        }
        let mu = mu_exponents(&CrossSection::sphere(Some(3)));
        assert_eq!(mu[0], 0.5);
        assert!((mu[1] - 1.5).abs() < 1e-15);
        let cs = CrossSection::new(3, vec![0.0, -3.0], vec![1, 4], 1).unwrap();
        assert_eq!(mu_exponents(&cs)[0], 1.0);
        assert_eq!(mu_list_expanded(&CrossSection::circle(Some(2))), vec![0.0, 1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn window_examples() {
        let w = weight_window(&CrossSection::circle(None)).unwrap();
        assert_eq!((w.gamma_lo, w.gamma_hi, w.sigma0), (-1.0, 0.0, 0.5));
        let w = weight_window(&CrossSection::sphere(None)).unwrap();
        assert_eq!((w.gamma_lo, w.gamma_hi, w.sigma0), (-0.5, 0.5, 0.5));
        // n = 3 with μ_1 = 2: λ_1 = 1 - 4 = -3
        let cs = CrossSection::new(3, vec![0.0, -3.0], vec![1, 4], 1).unwrap();
        let w = weight_window(&cs).unwrap();
        assert_eq!((w.gamma_lo, w.gamma_hi, w.sigma0), (0.0, 1.0, 0.5));
        // only reachable when λ_1 = 0, which validated sections exclude
        let cs = CrossSection {
            n: 3,
            eigenvalues: vec![0.0, 0.0],
            multiplicities: vec![1, 1],
            components: 1,
        };
        assert!(matches!(weight_window(&cs), Err(ConeError::EmptyWindow { .. })));
    }

    #[test]
    fn asymptotics_examples() {
        let qs = distinct_exponents(&CrossSection::circle(Some(6)), -0.5);
        assert_eq!(qs, vec![0.0, 1.0]);
        let qs = distinct_exponents(&CrossSection::sphere(Some(6)), 0.0);
        assert_eq!(qs, vec![0.0, 1.0]);
        let w = weight_window(&CrossSection::sphere(None)).unwrap();
        for gamma in [w.gamma_lo + 1e-9, w.gamma_hi - 1e-9] {
            assert!(distinct_exponents(&CrossSection::sphere(Some(6)), gamma).contains(&0.0));
        }
    }

    #[test]
    fn cross_section_validation_and_toml() {
        assert!(CrossSection::new(1, vec![0.0, -1.0, -1.0], vec![1, 2, 2], 1).is_err());
        assert!(CrossSection::new(1, vec![-1.0], vec![1], 1).is_err());
        assert!(CrossSection::new(1, vec![0.0, -1.0], vec![2, 2], 1).is_err());
        let cs = CrossSection::from_toml_str(
            "n = 1\neigenvalues = [0.0, -1.0, -4.0]\nmultiplicities = [1, 2, 2]\ncomponents = 1\n",
        )
        .unwrap();
        assert_eq!(cs, CrossSection::circle(Some(2)));
        assert_eq!(CrossSection::circle(None).mode_count(), 65);
        assert_eq!(CrossSection::sphere(None).mode_count(), 65);
    }

    #[test]
    fn grid_is_log_uniform() {
        let g = ConeGrid::new(1e-6, 128, -0.5).unwrap();
        for i in 0..g.count - 1 {
            assert!((g.t(i + 1) - g.t(i) - g.h).abs() < 1e-14);
        }
        assert_eq!(g.x(g.count - 1), 1.0);
        assert!(matches!(ConeGrid::new(1e-3, 16, 0.0), Err(ConeError::GridTooCoarse { .. })));
    }

    #[test]
    fn kernel_dichotomy() {
        let minimal = circle_op(64, -0.5, Extension::Minimal);
        let r = spectrum_check(&minimal);
        assert_eq!(r.kernel_dimension, 0);
        assert!(r.modes[0].min_eig > 0.0 && r.ok);

        let ext = circle_op(64, -0.5, Extension::WithCOmega);
        let r = spectrum_check(&ext);
        assert_eq!(r.kernel_dimension, 1);
        assert!(r.ok && r.symmetric && r.nonnegative, "{r:?}");

        // kernel vector is the constant function
        let eig = ext.positive_block(0).eigen_decompose().unwrap();
        let (k, _) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
            .unwrap();
        let v = eig.right_vectors.column(k);
        let c = ext.c_index().unwrap();
        assert!(v[c].norm() > 0.0);
        assert!((0..64).all(|i| v[i].norm() < 1e-8 * v[c].norm()));
    }

    #[test]
    fn gamma_outside_window_rejected() {
        let cs = CrossSection::circle(Some(2));
        let grid = ConeGrid::new(1e-3, 64, 0.3).unwrap();
        assert!(matches!(
            assemble_cone_laplacian(&cs, &grid, Extension::WithCOmega),
            Err(ConeError::GammaOutsideWindow { .. })
        ));
        assert!(assemble_cone_laplacian(&cs, &grid, Extension::Minimal).is_ok());
    }

    #[test]
    fn high_mode_rayleigh_bound() {
        let cs = CrossSection::new(1, vec![0.0, -1.0, -100.0], vec![1, 2, 2], 1).unwrap();
        let grid = ConeGrid::new(1e-3, 64, -0.5).unwrap();
        let op = assemble_cone_laplacian(&cs, &grid, Extension::Minimal).unwrap();
        let ev = op.positive_block(2).eigenvalues().unwrap();
        assert!(ev.iter().all(|z| z.re >= 100.0), "{:?}", ev.iter().map(|z| z.re).fold(f64::INFINITY, f64::min));
    }

    #[test]
    fn blocks_symmetric_in_metric() {
        let cs = CrossSection::sphere(Some(3));
        let grid = ConeGrid::new(1e-3, 48, 0.0).unwrap();
        let op = assemble_cone_laplacian(&cs, &grid, Extension::WithCOmega).unwrap();
        let r = spectrum_check(&op);
        assert!(r.symmetric && r.ok, "{r:?}");
    }

    #[test]
    fn x_dx_is_second_order() {
        // discrete t-derivative of x^β against β x^β at interior points
        let beta = 0.7;
        let err = |count: usize| {
            let g = ConeGrid::new(1e-2, count, 0.0).unwrap();
            let u: Vec<f64> = g.points().iter().map(|x| x.powf(beta)).collect();
            (1..count - 1)
                .map(|i| ((u[i + 1] - u[i - 1]) / (2.0 * g.h) - beta * u[i]).abs() / u[i])
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err(64), err(128));
        let order = (e1 / e2).log2();
        assert!(order > 1.9 && order < 2.1, "{order}");
    }

    #[test]
    fn mellin_examples() {
        let op = {
            let cs = CrossSection::circle(Some(2));
            let grid = ConeGrid::new(1e-3, 256, -0.5).unwrap();
            assemble_cone_laplacian(&cs, &grid, Extension::WithCOmega).unwrap()
        };
        let zero = ConeFunction::zeros(&op);
        assert_eq!(mellin_norm(&zero, 2, -0.5, &op).unwrap(), 0.0);

        let beta = 0.3;
        let gamma = -0.5;
        let vals: Vec<f64> = op.grid.points().iter().map(|x| x.powf(beta)).collect();
        let u = ConeFunction::radial(&op, &vals, 0.0).unwrap();
        let p = 2.0 * beta + 1.0 + 1.0 - 2.0 * gamma;
        let exact = (1.0 - op.grid.x_min.powf(p)) / p;
        let got = mellin_norm(&u, 0, gamma, &op).unwrap().powi(2);
        assert!((got - exact).abs() < 0.01 * exact, "{got} vs {exact}");

        let n1 = mellin_norm(&u, 1, gamma, &op).unwrap();
        let n2 = mellin_norm(&u.scaled(2.0), 1, gamma, &op).unwrap();
        assert!((n2 - 2.0 * n1).abs() < 1e-12 * n1);
        assert!(matches!(mellin_norm(&u, 3, gamma, &op), Err(ConeError::UnsupportedSmoothness(3))));
    }

    #[test]
    fn tip_decay_examples() {
        let op = circle_op(128, -0.5, Extension::WithCOmega);
        let xs = op.grid.points();
        let fit = |f: &dyn Fn(f64) -> f64, win: (f64, f64)| {
            let vals: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
            tip_decay_fit(&ConeFunction::radial(&op, &vals, 0.0).unwrap(), &op.grid, win).unwrap()
        };
        let r = fit(&|x| x.powf(0.8), (op.grid.x_min, 1.0));
        assert!((r.alpha - 0.8).abs() < 1e-6 && r.r2 > 0.9999);
        let r = fit(&|x| x.powf(0.8) + 0.01 * x * x, (op.grid.x_min, 0.1));
        assert!(r.alpha >= 0.79 && r.alpha <= 0.81);
        let r = fit(&|_| 3.0, (op.grid.x_min, 1.0));
        assert!(r.alpha.abs() < 1e-10);
        let u = ConeFunction::radial(&op, &vec![1.0; 128], 0.0).unwrap();
        assert!(matches!(tip_decay_fit(&u, &op.grid, (2.0, 3.0)), Err(ConeError::WindowEmpty)));
    }

    #[test]
    fn dilation_examples() {
        let op = circle_op(256, -0.5, Extension::WithCOmega);
        assert_eq!(dilation_covariance_check(&op, c64(1.0, 0.0), 0).unwrap(), 0.0);
        for k in [1, 2, 4] {
            let r = dilation_covariance_check(&op, c64(1.0, 0.5), k).unwrap();
            assert!(r <= 1e-10, "k = {k}: {r}");
        }
        let mut f = CVector::zeros(256);
        f[1] = c64(1.0, 0.0);
        assert!(matches!(dilation_residual(&op, 0, c64(1.0, 0.0), 2, &f), Err(ConeError::WindowEmpty)));
        assert!(matches!(dilation_covariance_check(&op, c64(1.0, 0.0), 64), Err(ConeError::ShiftTooLarge { .. })));
    }

    #[test]
    fn mode_decoupling() {
        let op = circle_op(64, -0.5, Extension::WithCOmega);
        let v = real_vector(&(0..64).map(|i| (i as f64 * 0.1).sin()).collect::<Vec<_>>());
        for j in 1..op.mode_count() {
            let full = op.block(j).apply(&v).unwrap();
            assert_eq!(full, op.apply_radial(j, &v));
        }
    }
}
