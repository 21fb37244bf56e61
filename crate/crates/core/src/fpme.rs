//! Fractional porous medium flow `u' + (-Δ)^σ u^m = 0` on the cone.
//!
//! The solver advances `w = u^m` with the frozen-coefficient implicit step
//! `(I + dt·M_w·L_σ) w⁺ = w`, `M_w = m·w^{(m-1)/m}` acting by multiplication
//! in physical space, and reports `u = w^{1/m}`.
//!
//! State layout ("modal"): the radial vectors of every retained mode copy,
//! followed by the constant-function coefficient `c`. Physical values sit on
//! the radial grid times `K` angular collocation points (`K = 1` for radial
//! data, `K = 2J+1` equispaced angles for the circle with modes up to `J`).
//! A multiplier `w = w_H + w_C` acts on `v + c` as
//! `(v, c) ↦ (w·v + c·w_H, w_C·c)`.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cone::{mellin_norm, tip_decay_fit, weight_window, ConeError, ConeFunction, ConeOperator, Extension};
use crate::funcalc::{frac_power, inv_frac_power, least_squares_slope, FuncalcError, PowerMethod, PowerSpec};
use crate::linop::{c64, CMatrix, CVector, DenseOperator, LinopError, C64};
use crate::sectorial::{
    rademacher_rbound_estimate, sectorial_bound_probe, RBoundEstimate, SectorialError, DEFAULT_RADIAL_SAMPLES,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FpmeError {
    #[error(transparent)]
    Cone(#[from] ConeError),
    #[error(transparent)]
    Funcalc(#[from] FuncalcError),
    #[error(transparent)]
    Linop(#[from] LinopError),
    #[error(transparent)]
    Sectorial(#[from] SectorialError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("implicit step at t = {t} failed (singular system); try dt = {suggested_dt}")]
    SolveFailed { t: f64, suggested_dt: f64 },
    #[error("state minimum {min} below the positivity floor {floor}")]
    NonPositiveState { min: f64, floor: f64 },
    #[error("precondition violated: {0}")]
    PreconditionViolated(String),
    #[error("layout mismatch: {0}")]
    Layout(String),
}

type Result<T> = std::result::Result<T, FpmeError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    SemiImplicitEuler,
}

fn default_floor() -> f64 {
    1e-10
}

fn default_record_every() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpmeConfig {
    pub sigma: f64,
    pub m: f64,
    pub dt: f64,
    pub t_end: f64,
    #[serde(default = "default_floor")]
    pub positivity_floor: f64,
    pub gamma: f64,
    #[serde(default)]
    pub scheme: Scheme,
    /// Highest angular mode kept (0 = radial flow).
    #[serde(default)]
    pub max_mode: usize,
    /// Keep every k-th step in the trajectory (the final time is always kept).
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    /// Radial window for the tip-decay fit; defaults to `[10·x_min, 0.1]`.
    #[serde(default)]
    pub tip_window: Option<(f64, f64)>,
    #[serde(default)]
    pub method: PowerMethod,
}

impl FpmeConfig {
    pub fn new(sigma: f64, m: f64, dt: f64, t_end: f64, gamma: f64) -> Self {
        Self {
            sigma,
            m,
            dt,
            t_end,
            positivity_floor: default_floor(),
            gamma,
            scheme: Scheme::default(),
            max_mode: 0,
            record_every: 1,
            tip_window: None,
            method: PowerMethod::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FpmeError::InvalidConfig(m));
        if !(self.sigma > 0.0 && self.sigma <= 1.0) {
            return bad(format!("sigma = {} must lie in (0,1]", self.sigma));
        }
        if !(self.m > 0.0 && self.m.is_finite()) {
            return bad(format!("m = {} must be positive", self.m));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt = {} must be positive", self.dt));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return bad(format!("t_end = {} must be >= 0", self.t_end));
        }
        if !(self.positivity_floor > 0.0) {
            return bad("positivity_floor must be > 0".into());
        }
        if self.record_every == 0 {
            return bad("record_every must be >= 1".into());
        }
        Ok(())
    }
}

/// Order of mode copies in the modal layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalLayout {
    pub count: usize,
    pub copies: Vec<(usize, usize)>,
    pub has_c: bool,
}

impl ModalLayout {
    pub fn new(op: &ConeOperator, max_mode: usize) -> Result<Self> {
        let cs = &op.cross_section;
        if max_mode >= cs.mode_count() {
            return Err(FpmeError::Layout(format!(
                "max_mode {max_mode} exceeds the {} assembled modes",
                cs.mode_count()
            )));
        }
        if max_mode > 0 && cs.n != 1 {
            return Err(FpmeError::Layout(
                "angular modes need a collocation rule; only the circle (n = 1) provides one".into(),
            ));
        }
        if cs.components != 1 {
            return Err(FpmeError::Layout("one boundary component expected".into()));
        }
        let copies = (0..=max_mode)
            .flat_map(|j| (0..cs.multiplicities[j]).map(move |c| (j, c)))
            .collect();
        Ok(Self {
            count: op.grid.count,
            copies,
            has_c: op.extension == Extension::WithCOmega,
        })
    }

    pub fn dim(&self) -> usize {
        self.count * self.copies.len() + usize::from(self.has_c)
    }

    fn c_slot(&self) -> Option<usize> {
        self.has_c.then_some(self.count * self.copies.len())
    }

    pub fn to_vector(&self, u: &ConeFunction) -> Result<CVector> {
        let mut out = CVector::zeros(self.dim());
        for (k, key) in self.copies.iter().enumerate() {
            let v = u
                .coefficients
                .get(key)
                .ok_or_else(|| FpmeError::Layout(format!("missing mode {key:?}")))?;
            if v.len() != self.count {
                return Err(FpmeError::Layout(format!("mode {key:?} has {} entries", v.len())));
            }
            out.rows_mut(k * self.count, self.count).copy_from(v);
        }
        for (key, v) in &u.coefficients {
            if !self.copies.contains(key) && v.iter().any(|z| z.norm() > 0.0) {
                return Err(FpmeError::Layout(format!("mode {key:?} is not retained by the solver")));
            }
        }
        if let Some(s) = self.c_slot() {
            out[s] = u.c_omega_part.first().copied().unwrap_or_default();
        }
        Ok(out)
    }

    pub fn to_function(&self, x: &CVector, op: &ConeOperator) -> ConeFunction {
        let mut u = ConeFunction::zeros(op);
        for (k, key) in self.copies.iter().enumerate() {
            u.coefficients.insert(*key, x.rows(k * self.count, self.count).into_owned());
        }
        if let Some(s) = self.c_slot() {
            u.c_omega_part = vec![x[s]];
        }
        u
    }
}

/// `L_σ = (-Δ)^σ` on the retained modes, block diagonal in the modal layout.
#[derive(Debug, Clone)]
pub struct FracGenerator {
    pub layout: ModalLayout,
    pub sigma: f64,
    pub operator: DenseOperator,
}

impl FracGenerator {
    pub fn norm(&self) -> f64 {
        self.operator.operator_norm()
    }
}

/// Per-mode `(-Δ_j)^σ`; the singular mode-0 block (constant-function
/// extension) goes through the resolvent limit so its kernel is kept.
pub fn build_frac_generator(op: &ConeOperator, sigma: f64, max_mode: usize, method: PowerMethod) -> Result<FracGenerator> {
    if op.extension != Extension::WithCOmega {
        return Err(FpmeError::PreconditionViolated(
            "the generator needs the constant-function extension".into(),
        ));
    }
    let window = weight_window(&op.cross_section)?;
    if !window.contains(op.grid.gamma) {
        return Err(FpmeError::Cone(ConeError::GammaOutsideWindow {
            gamma: op.grid.gamma,
            lo: window.gamma_lo,
            hi: window.gamma_hi,
        }));
    }
    if !(sigma > 0.0 && sigma <= 1.0) {
        return Err(FpmeError::InvalidConfig(format!("sigma = {sigma} must lie in (0,1]")));
    }
    let layout = ModalLayout::new(op, max_mode)?;
    let mut blocks = Vec::with_capacity(max_mode + 1);
    for j in 0..=max_mode {
        let a = op.positive_block(j);
        let block = if sigma == 1.0 {
            a.entries().clone()
        } else {
            let m = match method {
                PowerMethod::Balakrishnan if op.is_augmented(j) => PowerMethod::ResolventLimit,
                other => other,
            };
            frac_power(&a, &PowerSpec::new(sigma, 0.0, m), None)?.entries().clone()
        };
        blocks.push(block);
    }
    let m = layout.count;
    let dim = layout.dim();
    let mut full = CMatrix::zeros(dim, dim);
    let mut weights = Vec::with_capacity(dim);
    for (k, &(j, _)) in layout.copies.iter().enumerate() {
        full.view_mut((k * m, k * m), (m, m)).copy_from(&blocks[j].view((0, 0), (m, m)));
        weights.extend_from_slice(&op.block(j).inner_weights().expect("cone blocks carry weights")[..m]);
    }
    if let Some(s) = layout.c_slot() {
        let b0 = &blocks[0];
        full.view_mut((0, s), (m, 1)).copy_from(&b0.view((0, m), (m, 1)));
        full.view_mut((s, 0), (1, m)).copy_from(&b0.view((m, 0), (1, m)));
        full[(s, s)] = b0[(m, m)];
        weights.push(op.block(0).inner_weights().expect("cone blocks carry weights")[m]);
    }
    let operator = DenseOperator::new(full)?
        .with_weights(weights)?
        .with_label(format!("(-Δ)^{sigma}"));
    Ok(FracGenerator { layout, sigma, operator })
}

/// Real Fourier synthesis from mode copies to angular collocation points.
#[derive(Debug, Clone)]
struct Synthesis {
    angles: usize,
    forward: DMatrix<f64>,
    inverse: DMatrix<f64>,
}

impl Synthesis {
    fn new(layout: &ModalLayout) -> Self {
        let k = layout.copies.len();
        let y = |i: usize| 2.0 * PI * i as f64 / k as f64;
        let forward = DMatrix::from_fn(k, k, |row, col| {
            let (j, copy) = layout.copies[col];
            match (j, copy) {
                (0, _) => 1.0,
                (j, 0) => (j as f64 * y(row)).cos(),
                (j, _) => (j as f64 * y(row)).sin(),
            }
        });
        let inverse = forward.clone().try_inverse().expect("equispaced Fourier synthesis is invertible");
        Self { angles: k, forward, inverse }
    }

    /// Physical values `[angle][radius]` of the H-part.
    fn to_physical(&self, layout: &ModalLayout, x: &CVector) -> Vec<Vec<f64>> {
        let m = layout.count;
        (0..self.angles)
            .map(|a| {
                (0..m)
                    .map(|i| (0..self.angles).map(|k| self.forward[(a, k)] * x[k * m + i].re).sum())
                    .collect()
            })
            .collect()
    }

    fn to_modal(&self, layout: &ModalLayout, phys: &[Vec<f64>], out: &mut CVector) {
        let m = layout.count;
        for k in 0..self.angles {
            for i in 0..m {
                let v: f64 = (0..self.angles).map(|a| self.inverse[(k, a)] * phys[a][i]).sum();
                out[k * m + i] = c64(v, 0.0);
            }
        }
    }
}

/// Physical view of a modal state: constant part plus H-part on the collocation grid.
#[derive(Debug, Clone, PartialEq)]
struct Physical {
    c: f64,
    h: Vec<Vec<f64>>,
}

impl Physical {
    fn value(&self, a: usize, i: usize) -> f64 {
        self.h[a][i] + self.c
    }

    fn min(&self) -> f64 {
        self.h
            .iter()
            .flat_map(|row| row.iter().map(|v| v + self.c))
            .fold(f64::INFINITY, f64::min)
    }

    fn sup(&self) -> f64 {
        self.h
            .iter()
            .flat_map(|row| row.iter().map(|v| (v + self.c).abs()))
            .fold(0.0, f64::max)
    }

    /// Pointwise map `g` with the constant part taken from the value at `x = 1`.
    fn map(&self, g: impl Fn(f64) -> f64) -> Physical {
        let c = g(self.c);
        let h = self
            .h
            .iter()
            .map(|row| row.iter().map(|v| g(v + self.c) - c).collect())
            .collect();
        Physical { c, h }
    }
}

struct Stepper<'a> {
    cfg: &'a FpmeConfig,
    gen: &'a FracGenerator,
    synth: Synthesis,
    cached: Option<(Physical, nalgebra::LU<C64, nalgebra::Dyn, nalgebra::Dyn>)>,
}

impl<'a> Stepper<'a> {
    fn new(cfg: &'a FpmeConfig, gen: &'a FracGenerator) -> Self {
        Self {
            cfg,
            gen,
            synth: Synthesis::new(&gen.layout),
            cached: None,
        }
    }

    fn physical(&self, x: &CVector) -> Physical {
        let layout = &self.gen.layout;
        Physical {
            c: layout.c_slot().map_or(0.0, |s| x[s].re),
            h: self.synth.to_physical(layout, x),
        }
    }

    fn modal(&self, p: &Physical) -> CVector {
        let layout = &self.gen.layout;
        let mut out = CVector::zeros(layout.dim());
        self.synth.to_modal(layout, &p.h, &mut out);
        if let Some(s) = layout.c_slot() {
            out[s] = c64(p.c, 0.0);
        }
        out
    }

    /// Modal matrix of multiplication by `mult`.
    fn multiplication(&self, mult: &Physical) -> CMatrix {
        let layout = &self.gen.layout;
        let m = layout.count;
        let k = self.synth.angles;
        let dim = layout.dim();
        let mut out = CMatrix::zeros(dim, dim);
        for i in 0..m {
            for r in 0..k {
                for s in 0..k {
                    let v: f64 = (0..k)
                        .map(|a| self.synth.inverse[(r, a)] * mult.value(a, i) * self.synth.forward[(a, s)])
                        .sum();
                    out[(r * m + i, s * m + i)] = c64(v, 0.0);
                }
            }
        }
        if let Some(slot) = layout.c_slot() {
            for r in 0..k {
                for i in 0..m {
                    let v: f64 = (0..k).map(|a| self.synth.inverse[(r, a)] * mult.h[a][i]).sum();
                    out[(r * m + i, slot)] = c64(v, 0.0);
                }
            }
            out[(slot, slot)] = c64(mult.c, 0.0);
        }
        out
    }

    fn step(&mut self, w: &CVector, t: f64) -> Result<(CVector, usize)> {
        let cfg = self.cfg;
        let phys = self.physical(w);
        let min = phys.min();
        if !(min >= cfg.positivity_floor * (1.0 - 1e-12)) {
            return Err(FpmeError::NonPositiveState {
                min,
                floor: cfg.positivity_floor,
            });
        }
        let e = (cfg.m - 1.0) / cfg.m;
        let mult = phys.map(|v| cfg.m * v.powf(e));
        let reuse = matches!(&self.cached, Some((p, _)) if *p == mult);
        if !reuse {
            let mw = self.multiplication(&mult);
            let dim = w.len();
            let g = CMatrix::identity(dim, dim) + mw * self.gen.operator.entries() * c64(cfg.dt, 0.0);
            self.cached = Some((mult, g.lu()));
        }
        let lu = &self.cached.as_ref().expect("factor cached above").1;
        let next = lu.solve(w).filter(|x| x.iter().all(|z| z.re.is_finite() && z.im.is_finite()));
        let Some(next) = next else {
            return Err(FpmeError::SolveFailed {
                t,
                suggested_dt: cfg.dt / 2.0,
            });
        };
        let mut p = self.physical(&next);
        let mut clamped = 0;
        if p.c < cfg.positivity_floor {
            p.c = cfg.positivity_floor;
            clamped += 1;
        }
        let c = p.c;
        for row in p.h.iter_mut() {
            for v in row.iter_mut() {
                if *v + c < cfg.positivity_floor {
                    *v = cfg.positivity_floor - c;
                    clamped += 1;
                }
            }
        }
        if clamped == 0 {
            Ok((next, 0))
        } else {
            Ok((self.modal(&p), clamped))
        }
    }
}

/// One frozen-coefficient implicit Euler step for `w`.
pub fn step_semi_implicit(w: &ConeFunction, cfg: &FpmeConfig, gen: &FracGenerator) -> Result<(ConeFunction, usize)> {
    cfg.validate()?;
    let layout = &gen.layout;
    let x = layout.to_vector(w)?;
    let mut stepper = Stepper::new(cfg, gen);
    let (next, clamped) = stepper.step(&x, 0.0)?;
    let mut out = w.clone();
    for (k, key) in layout.copies.iter().enumerate() {
        out.coefficients.insert(*key, next.rows(k * layout.count, layout.count).into_owned());
    }
    if let Some(s) = layout.c_slot() {
        out.c_omega_part = vec![next[s]];
    }
    Ok((out, clamped))
}

/// Chain-rule rate `u' = (1/m) w^{(1-m)/m} w'` with `w' = -m w^{(m-1)/m} L_σ w`,
/// at the state `w`, as physical values `[angle][radius]`.
pub fn chain_rule_rate(w: &ConeFunction, cfg: &FpmeConfig, gen: &FracGenerator) -> Result<Vec<Vec<f64>>> {
    let stepper = Stepper::new(cfg, gen);
    let x = gen.layout.to_vector(w)?;
    let lw = gen.operator.apply(&x)?;
    let phys = stepper.physical(&x);
    let lphys = stepper.physical(&lw);
    let m = cfg.m;
    Ok((0..stepper.synth.angles)
        .map(|a| {
            (0..gen.layout.count)
                .map(|i| {
                    let v = phys.value(a, i);
                    let w_rate = -m * v.powf((m - 1.0) / m) * lphys.value(a, i);
                    v.powf((1.0 - m) / m) * w_rate / m
                })
                .collect()
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepDiagnostics {
    pub min_value: f64,
    pub sup_norm: f64,
    pub h0gamma_norm: f64,
    pub tip_alpha: Option<f64>,
    pub clamped: usize,
}

#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    /// `u` at the recorded times.
    pub snapshots: Vec<ConeFunction>,
    pub diagnostics: Vec<StepDiagnostics>,
    pub clamp_count: usize,
    /// `dt·‖L_σ‖`.
    pub dt_generator_norm: f64,
    /// Step error that ended the run early, if any.
    pub failure: Option<FpmeError>,
    /// Physical `u` values `[angle][radius]` at the recorded times.
    pub physical: Vec<Vec<Vec<f64>>>,
}

impl TrajectoryRecord {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,min_value,sup_norm,h0gamma_norm,tip_alpha")?;
        for (t, d) in self.times.iter().zip(&self.diagnostics) {
            writeln!(
                out,
                "{:.16e},{:.16e},{:.16e},{:.16e},{}",
                t,
                d.min_value,
                d.sup_norm,
                d.h0gamma_norm,
                d.tip_alpha.map_or("nan".to_string(), |a| format!("{a:.16e}"))
            )?;
        }
        Ok(())
    }

    /// Physical values of snapshot `k`: one row per radius, one column per angle.
    pub fn write_snapshot_csv<W: Write>(&self, k: usize, xs: &[f64], mut out: W) -> std::io::Result<()> {
        let phys = &self.physical[k];
        let header: Vec<String> = (0..phys.len()).map(|a| format!("u{a}")).collect();
        writeln!(out, "x,{}", header.join(","))?;
        for (i, x) in xs.iter().enumerate() {
            let row: Vec<String> = phys.iter().map(|col| format!("{:.16e}", col[i])).collect();
            writeln!(out, "{x:.16e},{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Runs the flow from `u0`, building the generator first.
pub fn run(u0: &ConeFunction, cfg: &FpmeConfig, op: &ConeOperator) -> Result<TrajectoryRecord> {
    cfg.validate()?;
    let gen = build_frac_generator(op, cfg.sigma, cfg.max_mode, cfg.method)?;
    run_with_generator(u0, cfg, op, &gen)
}

pub fn run_with_generator(u0: &ConeFunction, cfg: &FpmeConfig, op: &ConeOperator, gen: &FracGenerator) -> Result<TrajectoryRecord> {
    cfg.validate()?;
    if (gen.sigma - cfg.sigma).abs() > 0.0 {
        return Err(FpmeError::InvalidConfig(format!(
            "generator built for sigma = {}, config has {}",
            gen.sigma, cfg.sigma
        )));
    }
    if let Ok(w) = weight_window(&op.cross_section) {
        if cfg.sigma <= w.sigma0 {
            log::warn!("sigma = {} is not above sigma0 = {}", cfg.sigma, w.sigma0);
        }
    }
    let mut stepper = Stepper::new(cfg, gen);
    let layout = &gen.layout;
    let u_phys = stepper.physical(&layout.to_vector(u0)?);
    if !(u_phys.min() > 0.0) {
        return Err(FpmeError::PreconditionViolated(format!(
            "initial data must be strictly positive (min = {})",
            u_phys.min()
        )));
    }
    let m = cfg.m;
    let mut w = stepper.modal(&u_phys.map(|v| v.powf(m)));
    let window = cfg
        .tip_window
        .unwrap_or((10.0 * op.grid.x_min, 0.1));
    let mut record = TrajectoryRecord {
        times: Vec::new(),
        snapshots: Vec::new(),
        diagnostics: Vec::new(),
        clamp_count: 0,
        dt_generator_norm: cfg.dt * gen.norm(),
        failure: None,
        physical: Vec::new(),
    };
    let push = |record: &mut TrajectoryRecord, stepper: &Stepper, w: &CVector, t: f64, clamped: usize| {
        let u = stepper.physical(w).map(|v| v.max(0.0).powf(1.0 / m));
        let uf = layout.to_function(&stepper.modal(&u), op);
        let h0 = mellin_norm(&uf, 0, cfg.gamma, op).unwrap_or(f64::NAN);
        let mut hpart = uf.clone();
        hpart.c_omega_part.iter_mut().for_each(|c| *c = c64(0.0, 0.0));
        let tip_alpha = tip_decay_fit(&hpart, &op.grid, window).ok().map(|f| f.alpha);
        record.diagnostics.push(StepDiagnostics {
            min_value: u.min(),
            sup_norm: u.sup(),
            h0gamma_norm: h0,
            tip_alpha,
            clamped,
        });
        record.times.push(t);
        record.physical.push(
            (0..u.h.len())
                .map(|a| (0..layout.count).map(|i| u.value(a, i)).collect())
                .collect(),
        );
        record.snapshots.push(uf);
    };
    push(&mut record, &stepper, &w, 0.0, 0);
    let steps = (cfg.t_end / cfg.dt - 1e-9).ceil().max(0.0) as usize;
    let mut t = 0.0;
    let mut pending = 0;
    for step in 1..=steps {
        let dt = if step == steps { cfg.t_end - t } else { cfg.dt };
        let local = FpmeConfig { dt, ..cfg.clone() };
        let mut s = Stepper {
            cfg: &local,
            gen,
            synth: stepper.synth.clone(),
            cached: if dt == cfg.dt { stepper.cached.take() } else { None },
        };
        let outcome = s.step(&w, t);
        if dt == cfg.dt {
            stepper.cached = s.cached.take();
        }
        match outcome {
            Ok((next, clamped)) => {
                w = next;
                t = if step == steps { cfg.t_end } else { step as f64 * cfg.dt };
                record.clamp_count += clamped;
                pending += clamped;
                if step % cfg.record_every == 0 || step == steps {
                    push(&mut record, &stepper, &w, t, pending);
                    pending = 0;
                }
            }
            Err(e) => {
                record.failure = Some(e);
                break;
            }
        }
    }
    Ok(record)
}

/// Modal matrix of multiplication by a radial or angular profile.
fn multiplier_matrix(w_mult: &ConeFunction, layout: &ModalLayout) -> Result<(CMatrix, f64)> {
    let gen_stub = FracGenerator {
        layout: layout.clone(),
        sigma: 1.0,
        operator: DenseOperator::zeros(layout.dim()),
    };
    let cfg = FpmeConfig::new(0.5, 1.0, 1.0, 0.0, 0.0);
    let stepper = Stepper::new(&cfg, &gen_stub);
    let phys = stepper.physical(&layout.to_vector(w_mult)?);
    Ok((stepper.multiplication(&phys), phys.min()))
}

#[derive(Debug, Clone, Serialize)]
pub struct CommutatorReport {
    pub sigma: f64,
    pub nu: f64,
    pub rho: f64,
    pub shift_c: f64,
    /// `‖A^ρ [W, A^σ] A^{-ν}‖`.
    pub commutator_norm: f64,
    /// `‖[W, A^σ]‖`.
    pub raw_commutator_norm: f64,
    pub alpha: f64,
    /// `(λ, μ, ‖[A^σ, (W+μ)^{-1}](A^σ+λ)^{-1}‖)`.
    pub samples: Vec<(f64, f64, f64)>,
    pub lambda_exponent: Option<f64>,
    pub mu_exponent: Option<f64>,
    pub lambda_bound: f64,
    pub lambda_ok: bool,
    pub mu_ok: bool,
}

/// Commutator of a multiplier with `A^σ`, `A = c - Δ` on the radial block.
#[allow(clippy::too_many_arguments)]
pub fn commutator_decay_scan(
    w_mult: &ConeFunction,
    op: &ConeOperator,
    sigma: f64,
    nu: f64,
    rho: f64,
    sample_grid: &[f64],
    shift_c: f64,
    method: PowerMethod,
) -> Result<CommutatorReport> {
    if !(sigma > 0.0 && sigma < 1.0) || !(rho >= 0.0 && rho < 1.0) || !(nu > 0.0 && nu < 2.0) {
        return Err(FpmeError::InvalidConfig(format!(
            "need σ ∈ (0,1), ρ ∈ [0,1), ν ∈ (0,2); got σ = {sigma}, ρ = {rho}, ν = {nu}"
        )));
    }
    if nu <= sigma - 0.5 {
        return Err(FpmeError::PreconditionViolated(format!(
            "ν = {nu} must exceed σ + η - 1 for some η ∈ (1/2, 1)"
        )));
    }
    if !(shift_c > 0.0) {
        return Err(FpmeError::InvalidConfig("shift c must be > 0".into()));
    }
    if sample_grid.len() < 2 || sample_grid.iter().any(|s| !(*s > 0.0)) {
        return Err(FpmeError::InvalidConfig("need at least two positive samples".into()));
    }
    let layout = ModalLayout::new(op, 0)?;
    let base = op.positive_block(0);
    let a_sigma = frac_power(&base, &PowerSpec::new(sigma, shift_c, method), None)?;
    let a_rho = if rho == 0.0 {
        CMatrix::identity(base.dim(), base.dim())
    } else {
        frac_power(&base, &PowerSpec::new(rho, shift_c, method), None)?.entries().clone()
    };
    let a_neg_nu = if nu < 1.0 {
        inv_frac_power(&base, &PowerSpec::new(nu, shift_c, method), None)?.entries().clone()
    } else {
        let inv = base.shifted_inverse(c64(shift_c, 0.0))?;
        if nu == 1.0 {
            inv
        } else {
            inv * inv_frac_power(&base, &PowerSpec::new(nu - 1.0, shift_c, method), None)?.entries()
        }
    };
    let (w, _) = multiplier_matrix(w_mult, &layout)?;
    let comm = &w * a_sigma.entries() - a_sigma.entries() * &w;
    let raw_commutator_norm = base.norm_of(&comm);
    let commutator_norm = base.norm_of(&(a_rho * &comm * a_neg_nu));
    let dim = base.dim();
    let mut samples = Vec::new();
    for &lam in sample_grid {
        let res_a = a_sigma.shifted_inverse(c64(lam, 0.0))?;
        for &mu in sample_grid {
            let wm = (&w + CMatrix::identity(dim, dim) * c64(mu, 0.0))
                .try_inverse()
                .ok_or(FpmeError::Linop(LinopError::SingularShift {
                    shift: c64(mu, 0.0),
                    condition: f64::INFINITY,
                }))?;
            let val = base.norm_of(&(&wm * &comm * &wm * &res_a));
            samples.push((lam, mu, val));
        }
    }
    let fit = |pts: Vec<(f64, f64)>| -> Option<f64> {
        let pts: Vec<(f64, f64)> = pts.into_iter().filter(|p| p.1 > 0.0).map(|(x, y)| (x.ln(), y.ln())).collect();
        (pts.len() >= 2).then(|| least_squares_slope(&pts).0)
    };
    let (l0, m0) = (sample_grid[0], sample_grid[0]);
    let lambda_exponent = fit(samples.iter().filter(|s| s.1 == m0).map(|s| (s.0, s.2)).collect());
    let mu_exponent = fit(samples.iter().filter(|s| s.0 == l0).map(|s| (s.1, s.2)).collect());
    let alpha = nu / sigma;
    let lambda_bound = -(1.0 - alpha) + 0.1;
    Ok(CommutatorReport {
        sigma,
        nu,
        rho,
        shift_c,
        commutator_norm,
        raw_commutator_norm,
        alpha,
        lambda_ok: lambda_exponent.is_none_or(|e| e <= lambda_bound),
        mu_ok: mu_exponent.is_none_or(|e| e < -1.0),
        lambda_exponent,
        mu_exponent,
        lambda_bound,
        samples,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ShiftProbe {
    pub c: f64,
    pub estimated_k: f64,
    pub unbounded: bool,
    pub stable: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct LinearizationReport {
    pub theta: f64,
    pub probes: Vec<ShiftProbe>,
    pub c_star: Option<f64>,
    pub rbound: Option<RBoundEstimate>,
}

pub const DEFAULT_C_GRID: [f64; 5] = [0.25, 1.0, 4.0, 16.0, 64.0];

/// Sector probe of `W·L_σ + c` for each `c`, with an R-bound estimate at the
/// smallest `c` whose bound stays within a factor 2 across the modulus range.
pub fn linearization_sectoriality_probe(
    w_mult: &ConeFunction,
    gen: &FracGenerator,
    c_grid: &[f64],
    theta: f64,
    seed: u64,
) -> Result<LinearizationReport> {
    let (w, min) = multiplier_matrix(w_mult, &gen.layout)?;
    if !(min > 0.0) {
        return Err(FpmeError::PreconditionViolated(format!(
            "multiplier must be bounded below by a positive constant (min = {min})"
        )));
    }
    let wl = &w * gen.operator.entries();
    let dim = wl.nrows();
    let base = gen.operator.with_entries(wl)?;
    let mut probes = Vec::new();
    let mut c_star = None;
    for &c in c_grid {
        let a = base.shifted(c64(c, 0.0));
        let r_max = 10.0 * (a.operator_norm() + c).max(1.0);
        let r_min = 1e-3;
        let report = sectorial_bound_probe(&a, theta, DEFAULT_RADIAL_SAMPLES, (r_min, r_max))?;
        let mid = (r_min * r_max).sqrt();
        let lower = report
            .samples
            .iter()
            .filter(|s| s.lambda.norm() <= mid)
            .map(|s| s.bound_value)
            .fold(0.0, f64::max);
        let stable = !report.unbounded && report.estimated_k < 2.0 * lower;
        if stable && c_star.is_none() {
            c_star = Some(c);
        }
        probes.push(ShiftProbe {
            c,
            estimated_k: report.estimated_k,
            unbounded: report.unbounded,
            stable,
        });
    }
    let rbound = match c_star {
        Some(c) => {
            let a = base.shifted(c64(c, 0.0));
            let family = sector_family(&a, theta, 8)?;
            Some(rademacher_rbound_estimate(&family, 16, 4, seed)?)
        }
        None => None,
    };
    let _ = dim;
    Ok(LinearizationReport {
        theta,
        probes,
        c_star,
        rbound,
    })
}

/// `{λ_k (A + λ_k)^{-1}}` for `count` points spread over `|arg λ| ≤ θ`, moduli `10^{-1..}`.
pub fn sector_family(a: &DenseOperator, theta: f64, count: usize) -> Result<Vec<DenseOperator>> {
    (0..count)
        .map(|k| {
            let frac = if count > 1 { k as f64 / (count - 1) as f64 } else { 0.5 };
            let angle = theta * 0.9 * (2.0 * frac - 1.0);
            let lambda = C64::from_polar(10f64.powf(-1.0 + 0.75 * k as f64), angle);
            let inv = a.shifted_inverse(lambda)?;
            Ok(a.with_entries(inv * lambda)?)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cone::{assemble_cone_laplacian, ConeGrid, CrossSection};

    fn flat(count: usize) -> ConeOperator {
        let cs = CrossSection::circle(Some(2));
        let grid = ConeGrid::new(1e-3, count, -0.5).unwrap();
        assemble_cone_laplacian(&cs, &grid, Extension::WithCOmega).unwrap()
    }

    fn kernel_vector(op: &ConeOperator) -> ConeFunction {
        ConeFunction::radial(op, &vec![0.0; op.grid.count], 1.0).unwrap()
    }

    #[test]
    fn first_power_is_the_operator() {
        let op = flat(48);
        let gen = build_frac_generator(&op, 1.0, 0, PowerMethod::Balakrishnan).unwrap();
        let diff = gen.operator.entries() - op.positive_block(0).entries();
        assert!(diff.norm() <= 1e-9 * op.positive_block(0).entries().norm());
    }

    #[test]
    fn generator_kills_constants() {
        let op = flat(48);
        let gen = build_frac_generator(&op, 0.5, 0, PowerMethod::Balakrishnan).unwrap();
        let k = gen.layout.to_vector(&kernel_vector(&op)).unwrap();
        let out = gen.operator.apply(&k).unwrap();
        assert!(out.norm() <= 1e-7, "{}", out.norm());
        // against the eigen oracle on the radial part
        let oracle = crate::funcalc::frac_power(
            &op.positive_block(0),
            &PowerSpec::new(0.5, 0.0, PowerMethod::EigenOracle),
            None,
        )
        .unwrap();
        let rel = (gen.operator.entries() - oracle.entries()).norm() / oracle.entries().norm();
        assert!(rel < 1e-7, "{rel}");
    }

    #[test]
    fn linear_mode_step() {
        let op = flat(48);
        let gen = build_frac_generator(&op, 0.5, 0, PowerMethod::EigenOracle).unwrap();
        let eig = op.positive_block(0).eigen_decompose().unwrap();
        let (k, kappa) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .filter(|(_, z)| z.re > 1e-6)
            .min_by(|a, b| a.1.re.total_cmp(&b.1.re))
            .map(|(k, z)| (k, z.re))
            .unwrap();
        let mut psi = eig.right_vectors.column(k).rows(0, 48).map(|z| c64(z.re, 0.0));
        let peak = psi.iter().map(|z| z.re).fold(0.0, |a: f64, b| if b.abs() > a.abs() { b } else { a });
        psi /= c64(2.0 * peak, 0.0);
        let w = ConeFunction::radial(&op, &psi.iter().map(|z| z.re).collect::<Vec<_>>(), 1.0).unwrap();
        let cfg = FpmeConfig::new(0.5, 1.0, 1e-2, 1e-2, -0.5);
        let (next, clamped) = step_semi_implicit(&w, &cfg, &gen).unwrap();
        assert_eq!(clamped, 0);
        let expected = &psi / c64(1.0 + cfg.dt * kappa.sqrt(), 0.0);
        assert!((next.mode(0, 0).unwrap() - expected).norm() <= 1e-9 * psi.norm());
        assert!((next.c_omega_part[0] - c64(1.0, 0.0)).norm() <= 1e-12);
    }

    #[test]
    fn constants_are_steady() {
        let op = flat(48);
        let gen = build_frac_generator(&op, 0.5, 0, PowerMethod::Balakrishnan).unwrap();
        for m in [0.5, 1.0, 2.0, 3.0] {
            let cfg = FpmeConfig::new(0.5, m, 0.1, 0.1, -0.5);
            let w = kernel_vector(&op).scaled(2.5);
            let (next, clamped) = step_semi_implicit(&w, &cfg, &gen).unwrap();
            assert_eq!(clamped, 0);
            assert!((next.c_omega_part[0] - c64(2.5, 0.0)).norm() <= 1e-10);
            assert!(next.mode(0, 0).unwrap().norm() <= 1e-10);
        }
    }

    #[test]
    fn nonpositive_state_rejected() {
        let op = flat(48);
        let gen = build_frac_generator(&op, 0.5, 0, PowerMethod::EigenOracle).unwrap();
        let w = kernel_vector(&op).scaled(-1.0);
        let cfg = FpmeConfig::new(0.5, 2.0, 0.1, 0.1, -0.5);
        assert!(matches!(
            step_semi_implicit(&w, &cfg, &gen),
            Err(FpmeError::NonPositiveState { .. })
        ));
    }

    #[test]
    fn zero_horizon_single_snapshot() {
        let op = flat(48);
        let cfg = FpmeConfig {
            method: PowerMethod::EigenOracle,
            ..FpmeConfig::new(0.5, 2.0, 0.1, 0.0, -0.5)
        };
        let rec = run(&kernel_vector(&op), &cfg, &op).unwrap();
        assert_eq!(rec.times, vec![0.0]);
        assert_eq!(rec.snapshots.len(), 1);
    }

    #[test]
    fn angular_modes_decay_and_stay_positive() {
        let op = flat(40);
        let cfg = FpmeConfig {
            max_mode: 2,
            method: PowerMethod::EigenOracle,
            ..FpmeConfig::new(0.75, 2.0, 1e-2, 5e-2, -0.5)
        };
        let mut u0 = kernel_vector(&op);
        let xs = op.grid.points();
        let bump: Vec<f64> = xs.iter().map(|x| 0.3 * x * (1.0 - x)).collect();
        u0.set_mode(1, 0, crate::linop::real_vector(&bump)).unwrap();
        u0.set_mode(0, 0, crate::linop::real_vector(&bump)).unwrap();
        let rec = run(&u0, &cfg, &op).unwrap();
        assert!(rec.failure.is_none());
        assert_eq!(rec.clamp_count, 0);
        let first = rec.snapshots[0].mode(1, 0).unwrap().norm();
        let last = rec.snapshots.last().unwrap().mode(1, 0).unwrap().norm();
        assert!(last < first);
        assert_eq!(rec.physical[0].len(), 5);
    }

    #[test]
    fn constant_multiplier_commutes() {
        let op = flat(40);
        let w = kernel_vector(&op).scaled(3.0);
        let r = commutator_decay_scan(&w, &op, 0.5, 0.6, 0.05, &[1.0, 10.0, 100.0], 1.0, PowerMethod::EigenOracle)
            .unwrap();
        assert!(r.commutator_norm <= 1e-9 * 3.0 && r.raw_commutator_norm <= 1e-9);
        assert!(r.samples.iter().all(|s| s.2 <= 1e-9));
    }

    #[test]
    fn linearization_probe_identity_multiplier() {
        let op = flat(40);
        let gen = build_frac_generator(&op, 0.5, 0, PowerMethod::EigenOracle).unwrap();
        let w = kernel_vector(&op);
        let theta = 0.75 * PI;
        let r = linearization_sectoriality_probe(&w, &gen, &[0.0], theta, 7).unwrap();
        assert!(r.probes[0].estimated_k <= 1.0 / (PI - theta).sin() + 1e-6, "{:?}", r.probes);
        let zero = kernel_vector(&op).scaled(0.0);
        assert!(matches!(
            linearization_sectoriality_probe(&zero, &gen, &[1.0], theta, 7),
            Err(FpmeError::PreconditionViolated(_))
        ));
    }

    #[test]
    fn trajectory_csv_header() {
        let op = flat(40);
        let cfg = FpmeConfig {
            method: PowerMethod::EigenOracle,
            ..FpmeConfig::new(0.5, 1.0, 0.1, 0.2, -0.5)
        };
        let rec = run(&kernel_vector(&op), &cfg, &op).unwrap();
        let mut buf = Vec::new();
        rec.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,min_value,sup_norm,h0gamma_norm,tip_alpha\n"));
        assert_eq!(text.lines().count(), 1 + rec.times.len());
    }
}
