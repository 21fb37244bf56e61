//! Batch driver: `conic-fpme <command> [--config PATH] [--out DIR] [--seed N] [--nodes N]`.
//!
//! Every command writes machine-readable JSON (and CSV where tabular) into the
//! output directory. Exit codes: 0 success, 2 invalid configuration or input,
//! 3 numerical failure or unwritable output.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::config::{ConfigError, InitialData, RunConfig};
use crate::cone::{distinct_exponents, mu_list_expanded, spectrum_check, weight_window, ConeFunction, ConeOperator};
use crate::fpme::{
    build_frac_generator, commutator_decay_scan, linearization_sectoriality_probe, run_with_generator, sector_family,
};
use crate::funcalc::{frac_power, frac_resolvent_apply, PowerMethod, PowerSpec, QuadratureRule, ResolventPath};
use crate::linop::{c64, CVector, DenseOperator};
use crate::sectorial::{
    laurent_coefficients, rademacher_rbound_estimate, sectorial_bound_probe, simple_pole_check,
    verify_laurent_identities,
};
use crate::verify::{decay_report, initial_data, lowest_radial_mode, mode_amplitude, run_suite};

#[derive(Debug, Parser)]
#[command(name = "conic-fpme", version, about = "Fractional powers, cone Laplacians and the fractional porous medium flow")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Random seed (overrides `seed`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Quadrature node count (overrides `nodes`).
    #[arg(long, global = true)]
    pub nodes: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Assemble the cone Laplacian and summarize its spectrum.
    Assemble,
    /// Run the invariant suite.
    Verify,
    /// Fractional power of the configured matrix.
    Fracpow,
    /// Apply the fractional resolvent at the configured λ.
    Resolvent,
    /// Sample the sectorial bound over a sector.
    Sectorial,
    /// Estimate the R-bound of a resolvent family.
    Rbound,
    /// Laurent coefficients of the resolvent at 0.
    Laurent,
    /// Commutator decay and linearization probes.
    Commutator,
    /// Run the fractional porous medium flow.
    Fpme,
    /// Tip decay of the flow at mid-trajectory.
    Decay,
}

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Numerical(String),
    Output(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(e) => e.exit_code(),
            CliError::Numerical(_) | CliError::Output(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "{e}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::Output(m) => write!(f, "cannot write output: {m}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

fn numerical(e: impl std::fmt::Display) -> CliError {
    CliError::Numerical(e.to_string())
}

fn invalid(m: impl Into<String>) -> CliError {
    CliError::Config(ConfigError::Invalid(m.into()))
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn load_config(cli: &Cli) -> Result<RunConfig, ConfigError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if cli.nodes.is_some() {
        cfg.nodes = cli.nodes;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let cfg = load_config(cli)?;
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| CliError::Output(format!("{}: {e}", cfg.output_dir.display())))?;
    match cli.command {
        Command::Assemble => cmd_assemble(&cfg),
        Command::Verify => cmd_verify(&cfg),
        Command::Fracpow => cmd_fracpow(&cfg),
        Command::Resolvent => cmd_resolvent(&cfg),
        Command::Sectorial => cmd_sectorial(&cfg),
        Command::Rbound => cmd_rbound(&cfg),
        Command::Laurent => cmd_laurent(&cfg),
        Command::Commutator => cmd_commutator(&cfg),
        Command::Fpme => cmd_fpme(&cfg),
        Command::Decay => cmd_decay(&cfg),
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    let path = dir.join(name);
    File::create(&path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Output(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), CliError> {
    let mut out = create(dir, name)?;
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Output(e.to_string()))?;
    writeln!(out, "{text}")
        .and_then(|_| out.flush())
        .map_err(|e| CliError::Output(format!("{name}: {e}")))
}

fn write_with<F>(dir: &Path, name: &str, f: F) -> Result<(), CliError>
where
    F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
{
    let mut out = create(dir, name)?;
    f(&mut out)
        .and_then(|_| out.flush())
        .map_err(|e| CliError::Output(format!("{name}: {e}")))
}

/// The configured matrix, or the mode-0 block of `-Δ`.
fn target_matrix(cfg: &RunConfig) -> Result<DenseOperator, CliError> {
    match &cfg.power.matrix {
        Some(p) => {
            let file = File::open(p).map_err(|e| invalid(format!("cannot open {}: {e}", p.display())))?;
            DenseOperator::read_csv(BufReader::new(file)).map_err(|e| invalid(format!("{}: {e}", p.display())))
        }
        None => Ok(cfg.operator()?.positive_block(0)),
    }
}

fn is_singular(a: &DenseOperator) -> Result<bool, CliError> {
    let eig = a.eigenvalues().map_err(numerical)?;
    let scale = eig.iter().map(|z| z.norm()).fold(0.0, f64::max);
    Ok(eig.iter().any(|z| z.norm() <= 1e-9 * scale))
}

/// Fixed half-line rule over the spectrum's span when `--nodes` is given.
fn node_rule(cfg: &RunConfig, a: &DenseOperator, sigma: f64) -> Result<Option<QuadratureRule>, CliError> {
    let Some(n) = cfg.nodes else { return Ok(None) };
    let eig = a.eigenvalues().map_err(numerical)?;
    let scale = eig.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let lo = eig.iter().map(|z| z.norm()).filter(|&r| r > 1e-9 * scale).fold(scale, f64::min);
    QuadratureRule::half_line_exp(lo.ln() - 32.0 / sigma, scale.ln() + 32.0 / (1.0 - sigma), n)
        .map(Some)
        .map_err(numerical)
}

fn effective_method(cfg: &RunConfig, a: &DenseOperator) -> Result<PowerMethod, CliError> {
    let m = cfg.power.method;
    if m == PowerMethod::Balakrishnan && cfg.power.shift_c == 0.0 && is_singular(a)? {
        log::info!("matrix is singular; using the resolvent limit");
        return Ok(PowerMethod::ResolventLimit);
    }
    Ok(m)
}

fn modal_operator(cfg: &RunConfig) -> Result<ConeOperator, CliError> {
    Ok(cfg.operator()?)
}

fn cmd_assemble(cfg: &RunConfig) -> Result<(), CliError> {
    let op = modal_operator(cfg)?;
    let report = spectrum_check(&op);
    let window = weight_window(&op.cross_section).map_err(ConfigError::from)?;
    let min_eig = report.modes.iter().map(|m| m.min_eig).fold(f64::INFINITY, f64::min);
    let max_eig = report.modes.iter().map(|m| m.max_eig).fold(f64::NEG_INFINITY, f64::max);
    let summary = json!({
        "kernel_dim": report.kernel_dimension,
        "expected_kernel_dim": report.expected_kernel,
        "min_eig": min_eig,
        "max_eig": max_eig,
        "gamma_window": [window.gamma_lo, window.gamma_hi],
        "sigma0": window.sigma0,
        "mu_list": mu_list_expanded(&op.cross_section),
        "q_list": distinct_exponents(&op.cross_section, cfg.grid.gamma),
        "grid": { "x_min": op.grid.x_min, "count": op.grid.count, "gamma": op.grid.gamma, "h": op.grid.h },
        "extension": op.extension,
        "modes": report.modes,
        "nonnegative": report.nonnegative,
        "symmetric": report.symmetric,
        "ok": report.ok,
    });
    write_json(&cfg.output_dir, "assemble.json", &summary)?;
    if !report.ok {
        return Err(numerical("spectrum check failed; see assemble.json"));
    }
    Ok(())
}

fn cmd_verify(cfg: &RunConfig) -> Result<(), CliError> {
    let report = run_suite(cfg)?;
    write_json(&cfg.output_dir, "verify.json", &report)?;
    for c in &report.checks {
        eprintln!(
            "[{}] {:>2} {}: {:.6e} (limit {:.6e}) {}",
            if c.passed { "pass" } else { "FAIL" },
            c.id,
            c.name,
            c.value,
            c.limit,
            c.detail
        );
    }
    if !report.all_passed {
        return Err(numerical("invariant suite reported failures"));
    }
    Ok(())
}

fn cmd_fracpow(cfg: &RunConfig) -> Result<(), CliError> {
    let a = target_matrix(cfg)?;
    let method = effective_method(cfg, &a)?;
    let sigma = cfg.power.sigma;
    let rule = node_rule(cfg, &a, sigma)?;
    let spec = PowerSpec::new(sigma, cfg.power.shift_c, method);
    let p = frac_power(&a, &spec, rule.as_ref()).map_err(numerical)?;
    let oracle = frac_power(&a, &PowerSpec::new(sigma, cfg.power.shift_c, PowerMethod::EigenOracle), None).ok();
    let oracle_rel = oracle.map(|o| (p.entries() - o.entries()).norm() / o.entries().norm().max(f64::MIN_POSITIVE));
    write_with(&cfg.output_dir, "fracpow.csv", |out| p.write_csv(out))?;
    write_json(
        &cfg.output_dir,
        "fracpow.json",
        &json!({
            "sigma": sigma,
            "shift_c": cfg.power.shift_c,
            "method": method,
            "dim": a.dim(),
            "nodes": cfg.nodes,
            "operator_norm": p.operator_norm(),
            "eigen_oracle_rel_error": oracle_rel,
        }),
    )
}

fn cmd_resolvent(cfg: &RunConfig) -> Result<(), CliError> {
    let a = target_matrix(cfg)?;
    let sigma = cfg.power.sigma;
    let lambda = c64(cfg.power.lambda[0], cfg.power.lambda[1]);
    let v = CVector::from_element(a.dim(), c64(1.0, 0.0));
    let x = frac_resolvent_apply(&a, sigma, lambda, &v, ResolventPath::Auto).map_err(numerical)?;
    let method = effective_method(cfg, &a)?;
    let p = frac_power(&a, &PowerSpec::new(sigma, 0.0, method), None).map_err(numerical)?;
    let residual = (p.entries() * &x + &x * lambda - &v).norm() / v.norm();
    write_with(&cfg.output_dir, "resolvent.csv", |out| {
        writeln!(out, "re,im")?;
        for z in x.iter() {
            writeln!(out, "{:.16e},{:.16e}", z.re, z.im)?;
        }
        Ok(())
    })?;
    write_json(
        &cfg.output_dir,
        "resolvent.json",
        &json!({
            "sigma": sigma,
            "lambda": [lambda.re, lambda.im],
            "rhs": "ones",
            "dim": a.dim(),
            "solution_norm": x.norm(),
            "relative_residual": residual,
        }),
    )
}

fn cmd_sectorial(cfg: &RunConfig) -> Result<(), CliError> {
    let a = target_matrix(cfg)?;
    let [r0, r1] = cfg.probe.modulus_range;
    let report = sectorial_bound_probe(&a, cfg.probe.theta, cfg.probe.radial_samples, (r0, r1)).map_err(numerical)?;
    write_with(&cfg.output_dir, "sectorial.csv", |out| report.write_csv(out))?;
    write_with(&cfg.output_dir, "sectorial.json", |out| writeln!(out, "{}", report.to_json()))
}

fn cmd_rbound(cfg: &RunConfig) -> Result<(), CliError> {
    let a = target_matrix(cfg)?;
    let family = sector_family(&a, cfg.probe.theta, cfg.probe.family_size).map_err(numerical)?;
    let sup = family.iter().map(|t| t.operator_norm()).fold(0.0, f64::max);
    let est = rademacher_rbound_estimate(&family, cfg.probe.trials, cfg.probe.vectors_per_trial, cfg.seed)
        .map_err(numerical)?;
    write_json(
        &cfg.output_dir,
        "rbound.json",
        &json!({ "theta": cfg.probe.theta, "seed": cfg.seed, "sup_norm": sup, "estimate": est }),
    )
}

fn cmd_laurent(cfg: &RunConfig) -> Result<(), CliError> {
    let a = target_matrix(cfg)?;
    let nodes = cfg.nodes.unwrap_or(64);
    let exp = laurent_coefficients(&a, c64(0.0, 0.0), 1, cfg.probe.laurent_k_max, None, nodes).map_err(numerical)?;
    let residuals = verify_laurent_identities(&exp, &a);
    let pole = simple_pole_check(&a, 1e-6).map_err(numerical)?;
    let norms: Vec<(i32, f64)> = exp.coefficients.iter().map(|(k, b)| (*k, a.norm_of(b))).collect();
    write_json(
        &cfg.output_dir,
        "laurent.json",
        &json!({
            "pole": [exp.pole.re, exp.pole.im],
            "order": exp.order,
            "contour_radius": exp.contour_radius,
            "contour_nodes": nodes,
            "coefficient_norms": norms,
            "below_order_norm": exp.below_order_norm,
            "identity_residuals": residuals,
            "simple_pole": pole,
        }),
    )
}

/// Multiplier `1 + amplitude·x(1-x)` on the radial block.
fn bump_multiplier(op: &ConeOperator, amplitude: f64) -> ConeFunction {
    let prof: Vec<f64> = op.grid.points().iter().map(|x| amplitude * x * (1.0 - x)).collect();
    ConeFunction::radial(op, &prof, 1.0).expect("grid-sized profile")
}

fn cmd_commutator(cfg: &RunConfig) -> Result<(), CliError> {
    let op = modal_operator(cfg)?;
    let p = &cfg.probe;
    let w = bump_multiplier(&op, cfg.fpme.amplitude);
    let scan = commutator_decay_scan(&w, &op, cfg.power.sigma, p.nu, p.rho, &p.samples, p.shift_c, cfg.power.method)
        .map_err(numerical)?;
    let gen = build_frac_generator(&op, cfg.power.sigma, 0, cfg.power.method).map_err(numerical)?;
    let lin = linearization_sectoriality_probe(&w, &gen, &p.c_grid, p.theta, cfg.seed).map_err(numerical)?;
    write_json(
        &cfg.output_dir,
        "commutator.json",
        &json!({ "multiplier_amplitude": cfg.fpme.amplitude, "commutator": scan, "linearization": lin }),
    )
}

fn cmd_fpme(cfg: &RunConfig) -> Result<(), CliError> {
    let op = modal_operator(cfg)?;
    let fcfg = cfg.fpme_config();
    let u0 = initial_data(&op, cfg.fpme.initial, cfg.fpme.amplitude).map_err(numerical)?;
    let gen = build_frac_generator(&op, fcfg.sigma, fcfg.max_mode, fcfg.method).map_err(numerical)?;
    let rec = run_with_generator(&u0, &fcfg, &op, &gen).map_err(numerical)?;
    let xs = op.grid.points();
    write_with(&cfg.output_dir, "trajectory.csv", |out| rec.write_csv(out))?;
    for k in 0..rec.physical.len() {
        write_with(&cfg.output_dir, &format!("snapshot_{k:05}.csv"), |out| rec.write_snapshot_csv(k, &xs, out))?;
    }
    let eigen_check = if cfg.fpme.initial == InitialData::Eigenmode && fcfg.m == 1.0 && rec.failure.is_none() {
        let (psi, kappa) = lowest_radial_mode(&op).map_err(numerical)?;
        let t = *rec.times.last().expect("initial time recorded");
        let last = rec.snapshots.last().expect("initial snapshot recorded");
        let measured = mode_amplitude(&op, last, &psi) / cfg.fpme.amplitude;
        let predicted = (-kappa.powf(fcfg.sigma) * t).exp();
        Some(json!({
            "kappa": kappa,
            "t": t,
            "predicted": predicted,
            "measured": measured,
            "relative_error": (measured - predicted).abs() / predicted,
        }))
    } else {
        None
    };
    write_json(
        &cfg.output_dir,
        "fpme.json",
        &json!({
            "config": fcfg,
            "initial": cfg.fpme.initial,
            "amplitude": cfg.fpme.amplitude,
            "snapshots": rec.times.len(),
            "final_time": rec.times.last(),
            "clamp_count": rec.clamp_count,
            "dt_generator_norm": rec.dt_generator_norm,
            "failure": rec.failure.as_ref().map(|e| e.to_string()),
            "eigen_check": eigen_check,
        }),
    )?;
    match rec.failure {
        Some(e) => Err(numerical(e)),
        None => Ok(()),
    }
}

fn cmd_decay(cfg: &RunConfig) -> Result<(), CliError> {
    let op = modal_operator(cfg)?;
    let fcfg = cfg.fpme_config();
    let u0 = initial_data(&op, cfg.fpme.initial, cfg.fpme.amplitude).map_err(numerical)?;
    let gen = build_frac_generator(&op, fcfg.sigma, fcfg.max_mode, fcfg.method).map_err(numerical)?;
    let report = decay_report(&fcfg, &op, &u0, &gen).map_err(numerical)?;
    write_json(
        &cfg.output_dir,
        "decay.json",
        &json!({ "sigma": fcfg.sigma, "gamma": fcfg.gamma, "n": op.cross_section.n, "report": report }),
    )
}
