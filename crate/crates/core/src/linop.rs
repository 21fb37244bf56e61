//! Dense operator backend.
//!
//! Every operator carries an optional positive weight vector `w` that defines
//! the inner product `<u, v>_w = sum_i w_i conj(u_i) v_i`. Norms and spectral
//! decompositions are computed on the similar matrix `D^{1/2} A D^{-1/2}`
//! (`D = diag(w)`), so the weighted metric never needs a separate code path.

use std::io::{BufRead, Write};

use nalgebra::{Complex, DMatrix, DVector, Schur, SymmetricEigen};
use thiserror::Error;

pub type C64 = Complex<f64>;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Condition numbers above this make a shifted system numerically singular.
pub const SINGULAR_CONDITION: f64 = 1e14;
/// Eigenvector matrices worse conditioned than this are reported as defective.
pub const DEFECTIVE_CONDITION: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinopError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("operator must be square with dim >= 1 (got {rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("operator entries must be finite")]
    NonFinite,
    #[error("inner-product weights must be strictly positive and finite")]
    InvalidWeights,
    #[error("A + ({shift}) I is numerically singular (condition estimate {condition:.3e})")]
    SingularShift { shift: C64, condition: f64 },
    #[error("matrix is defective to working precision (eigenvector condition {condition:.3e}, residual {residual:.3e})")]
    DefectiveMatrix { condition: f64, residual: f64 },
    #[error("eigenvalue iteration did not converge")]
    EigenNotConverged,
    #[error("csv: {0}")]
    Csv(String),
}

/// Square complex matrix with an optional weighted-L² metric.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseOperator {
    entries: CMatrix,
    inner_weights: Option<Vec<f64>>,
    label: String,
}

/// Eigenvalues and right eigenvectors, `A V = V diag(eigenvalues)`.
#[derive(Debug, Clone)]
pub struct EigenData {
    pub eigenvalues: Vec<C64>,
    pub right_vectors: CMatrix,
    /// 2-norm condition number of the eigenvector matrix in the operator metric.
    pub condition_estimate: f64,
    pub residual: f64,
}

impl EigenData {
    /// `V f(Λ) V^{-1}` for a scalar function of the eigenvalues.
    pub fn apply_function<F>(&self, f: F) -> CMatrix
    where
        F: Fn(C64) -> C64,
    {
        let n = self.eigenvalues.len();
        let v = &self.right_vectors;
        let v_inv = v
            .clone()
            .lu()
            .try_inverse()
            .unwrap_or_else(|| CMatrix::identity(n, n));
        let mut scaled = v.clone();
        for (k, &lam) in self.eigenvalues.iter().enumerate() {
            let fk = f(lam);
            for i in 0..n {
                scaled[(i, k)] *= fk;
            }
        }
        scaled * v_inv
    }
}

impl DenseOperator {
    pub fn new(entries: CMatrix) -> Result<Self, LinopError> {
        if entries.nrows() != entries.ncols() || entries.nrows() == 0 {
            return Err(LinopError::NotSquare {
                rows: entries.nrows(),
                cols: entries.ncols(),
            });
        }
        if entries.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(LinopError::NonFinite);
        }
        Ok(Self {
            entries,
            inner_weights: None,
            label: String::new(),
        })
    }

    pub fn from_real(entries: &DMatrix<f64>) -> Result<Self, LinopError> {
        Self::new(entries.map(|x| C64::new(x, 0.0)))
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self, LinopError> {
        let n = rows.len();
        let m = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != m) {
            return Err(LinopError::NotSquare { rows: n, cols: m });
        }
        Self::from_real(&DMatrix::from_fn(n, m, |i, j| rows[i][j]))
    }

    pub fn identity(dim: usize) -> Self {
        Self::new(CMatrix::identity(dim, dim)).expect("identity of positive dimension")
    }

    pub fn zeros(dim: usize) -> Self {
        Self::new(CMatrix::zeros(dim, dim)).expect("zero operator of positive dimension")
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let d = DVector::from_iterator(values.len(), values.iter().map(|&x| C64::new(x, 0.0)));
        Self::new(CMatrix::from_diagonal(&d)).expect("finite diagonal")
    }

    pub fn diagonal_complex(values: &[C64]) -> Self {
        Self::new(CMatrix::from_diagonal(&DVector::from_column_slice(values)))
            .expect("finite diagonal")
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self, LinopError> {
        if weights.len() != self.dim() {
            return Err(LinopError::DimensionMismatch {
                expected: self.dim(),
                got: weights.len(),
            });
        }
        if weights.iter().any(|&w| !(w.is_finite() && w > 0.0)) {
            return Err(LinopError::InvalidWeights);
        }
        self.inner_weights = Some(weights);
        Ok(self)
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// Same metric and label, new entries.
    pub fn with_entries(&self, entries: CMatrix) -> Result<Self, LinopError> {
        let mut out = Self::new(entries)?;
        if let Some(w) = &self.inner_weights {
            out = out.with_weights(w.clone())?;
        }
        out.label = self.label.clone();
        Ok(out)
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &CMatrix {
        &self.entries
    }

    pub fn inner_weights(&self) -> Option<&[f64]> {
        self.inner_weights.as_deref()
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn is_real(&self) -> bool {
        self.entries.iter().all(|z| z.im == 0.0)
    }

    pub fn apply(&self, v: &CVector) -> Result<CVector, LinopError> {
        self.check_len(v.len())?;
        Ok(&self.entries * v)
    }

    /// `A + shift I` with the same metric.
    pub fn shifted(&self, shift: C64) -> Self {
        let mut m = self.entries.clone();
        for i in 0..self.dim() {
            m[(i, i)] += shift;
        }
        Self {
            entries: m,
            inner_weights: self.inner_weights.clone(),
            label: self.label.clone(),
        }
    }

    pub fn scaled(&self, factor: C64) -> Self {
        Self {
            entries: self.entries.map(|z| z * factor),
            inner_weights: self.inner_weights.clone(),
            label: self.label.clone(),
        }
    }

    /// Solve `(A + λ I) w = v`.
    pub fn shifted_solve(&self, lambda: C64, v: &CVector) -> Result<CVector, LinopError> {
        self.check_len(v.len())?;
        let m = self.shifted(lambda).entries;
        let lu = m.clone().lu();
        let singular = || LinopError::SingularShift {
            shift: lambda,
            condition: f64::INFINITY,
        };
        let mut w = lu.solve(v).ok_or_else(singular)?;
        let condition = condition_estimate_1(&m, &lu);
        if !(condition <= SINGULAR_CONDITION) {
            return Err(LinopError::SingularShift {
                shift: lambda,
                condition,
            });
        }
        // one step of iterative refinement
        let r = v - &m * &w;
        if let Some(dw) = lu.solve(&r) {
            w += dw;
        }
        Ok(w)
    }

    /// `(A + shift I)^{-1}` as a dense matrix; real arithmetic when possible.
    pub fn shifted_inverse(&self, shift: C64) -> Result<CMatrix, LinopError> {
        let n = self.dim();
        let fail = |condition| LinopError::SingularShift { shift, condition };
        if shift.im == 0.0 && self.is_real() {
            let mut m = self.entries.map(|z| z.re);
            for i in 0..n {
                m[(i, i)] += shift.re;
            }
            let norm1 = one_norm_real(&m);
            let inv = m.lu().try_inverse().ok_or_else(|| fail(f64::INFINITY))?;
            let condition = norm1 * one_norm_real(&inv);
            if !(condition <= SINGULAR_CONDITION) {
                return Err(fail(condition));
            }
            Ok(inv.map(|x| C64::new(x, 0.0)))
        } else {
            let m = self.shifted(shift).entries;
            let norm1 = one_norm(&m);
            let inv = m.lu().try_inverse().ok_or_else(|| fail(f64::INFINITY))?;
            let condition = norm1 * one_norm(&inv);
            if !(condition <= SINGULAR_CONDITION) {
                return Err(fail(condition));
            }
            Ok(inv)
        }
    }

    /// Largest singular value in the operator metric.
    pub fn operator_norm(&self) -> f64 {
        self.norm_of(&self.entries)
    }

    /// Induced norm of an arbitrary matrix measured in this operator's metric.
    pub fn norm_of(&self, m: &CMatrix) -> f64 {
        spectral_norm(&to_standard(m, self.inner_weights.as_deref()))
    }

    /// Vector norm in this operator's metric.
    pub fn vector_norm(&self, v: &CVector) -> f64 {
        match &self.inner_weights {
            None => v.norm(),
            Some(w) => v
                .iter()
                .zip(w)
                .map(|(z, wi)| wi * z.norm_sqr())
                .sum::<f64>()
                .sqrt(),
        }
    }

    /// `D^{1/2} A D^{-1/2}`.
    pub fn standard_form(&self) -> CMatrix {
        to_standard(&self.entries, self.inner_weights.as_deref())
    }

    /// Eigenvalues only.
    pub fn eigenvalues(&self) -> Result<Vec<C64>, LinopError> {
        let s = self.standard_form();
        if let Some(real) = hermitian_real_part(&s) {
            let vals = SymmetricEigen::new(real).eigenvalues;
            return Ok(vals.iter().map(|&x| C64::new(x, 0.0)).collect());
        }
        let schur = Schur::try_new(s, f64::EPSILON, 0).ok_or(LinopError::EigenNotConverged)?;
        let (_, t) = schur.unpack();
        Ok((0..t.nrows()).map(|i| t[(i, i)]).collect())
    }

    pub fn eigen_decompose(&self) -> Result<EigenData, LinopError> {
        let n = self.dim();
        let s = self.standard_form();
        let scale = spectral_norm(&s).max(f64::MIN_POSITIVE);
        let (eigenvalues, vs) = if let Some(real) = hermitian_real_part(&s) {
            let eig = SymmetricEigen::new(real);
            (
                eig.eigenvalues.iter().map(|&x| C64::new(x, 0.0)).collect::<Vec<_>>(),
                eig.eigenvectors.map(|x| C64::new(x, 0.0)),
            )
        } else {
            let schur =
                Schur::try_new(s.clone(), f64::EPSILON, 0).ok_or(LinopError::EigenNotConverged)?;
            let (q, t) = schur.unpack();
            let y = triangular_eigenvectors(&t);
            let eigenvalues = (0..n).map(|i| t[(i, i)]).collect::<Vec<_>>();
            (eigenvalues, q * y)
        };
        let sv = vs.singular_values();
        let smax = sv.max();
        let smin = sv.min();
        let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
        let lambda = CMatrix::from_diagonal(&DVector::from_column_slice(&eigenvalues));
        let residual = spectral_norm(&(&s * &vs - &vs * &lambda));
        if !(condition <= DEFECTIVE_CONDITION) || residual > 1e-8 * scale {
            return Err(LinopError::DefectiveMatrix {
                condition,
                residual,
            });
        }
        let right_vectors = match &self.inner_weights {
            None => vs,
            Some(w) => {
                let mut v = vs;
                for (i, wi) in w.iter().enumerate() {
                    let f = 1.0 / wi.sqrt();
                    v.row_mut(i).iter_mut().for_each(|z| *z *= f);
                }
                v
            }
        };
        Ok(EigenData {
            eigenvalues,
            right_vectors,
            condition_estimate: condition,
            residual,
        })
    }

    /// Serialize as CSV rows of `re+imj` entries.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for i in 0..self.dim() {
            let row: Vec<String> = (0..self.dim())
                .map(|j| format_complex(self.entries[(i, j)]))
                .collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self, LinopError> {
        let mut rows: Vec<Vec<C64>> = Vec::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line.map_err(|e| LinopError::Csv(e.to_string()))?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|cell| {
                    parse_complex(cell.trim()).ok_or_else(|| {
                        LinopError::Csv(format!("line {}: bad entry {cell:?}", lineno + 1))
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            rows.push(row);
        }
        let n = rows.len();
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return Err(LinopError::Csv(format!(
                "expected a square matrix, got {} rows",
                n
            )));
        }
        Self::new(CMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    fn check_len(&self, len: usize) -> Result<(), LinopError> {
        if len != self.dim() {
            return Err(LinopError::DimensionMismatch {
                expected: self.dim(),
                got: len,
            });
        }
        Ok(())
    }
}

/// `D^{1/2} M D^{-1/2}` for a weight vector, or a clone without weights.
pub fn to_standard(m: &CMatrix, weights: Option<&[f64]>) -> CMatrix {
    match weights {
        None => m.clone(),
        Some(w) => {
            let s: Vec<f64> = w.iter().map(|x| x.sqrt()).collect();
            CMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] * (s[i] / s[j]))
        }
    }
}

/// Largest singular value.
pub fn spectral_norm(m: &CMatrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    if m.iter().all(|z| z.im == 0.0) {
        m.map(|z| z.re).singular_values().max()
    } else {
        m.singular_values().max()
    }
}

pub fn one_norm(m: &CMatrix) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn one_norm_real(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Real symmetric matrix when `m` is real and symmetric to roundoff.
fn hermitian_real_part(m: &CMatrix) -> Option<DMatrix<f64>> {
    if m.iter().any(|z| z.im != 0.0) {
        return None;
    }
    let r = m.map(|z| z.re);
    let scale = r.amax().max(f64::MIN_POSITIVE);
    let n = r.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (r[(i, j)] - r[(j, i)]).abs() > 1e-13 * scale {
                return None;
            }
        }
    }
    Some((&r + r.transpose()) * 0.5)
}

/// Eigenvectors of an upper-triangular matrix by back substitution, unit columns.
fn triangular_eigenvectors(t: &CMatrix) -> CMatrix {
    let n = t.nrows();
    let tiny = f64::EPSILON * one_norm(t).max(f64::MIN_POSITIVE);
    let mut y = CMatrix::zeros(n, n);
    for k in 0..n {
        let lam = t[(k, k)];
        y[(k, k)] = C64::new(1.0, 0.0);
        for i in (0..k).rev() {
            let mut acc = C64::new(0.0, 0.0);
            for j in (i + 1)..=k {
                acc += t[(i, j)] * y[(j, k)];
            }
            let mut den = t[(i, i)] - lam;
            if den.norm() < tiny {
                if acc.norm() <= tiny {
                    y[(i, k)] = C64::new(0.0, 0.0);
                    continue;
                }
                den = C64::new(tiny, 0.0);
            }
            y[(i, k)] = -acc / den;
        }
        let norm = y.column(k).norm();
        y.column_mut(k).unscale_mut(norm);
    }
    y
}

/// Hager/Higham estimate of the 1-norm condition number from an existing LU.
fn condition_estimate_1(m: &CMatrix, lu: &nalgebra::LU<C64, nalgebra::Dyn, nalgebra::Dyn>) -> f64 {
    let n = m.nrows();
    let adj_lu = m.adjoint().lu();
    let mut x = CVector::from_element(n, C64::new(1.0 / n as f64, 0.0));
    let mut estimate = 0.0;
    for _ in 0..5 {
        let Some(y) = lu.solve(&x) else {
            return f64::INFINITY;
        };
        let y_norm: f64 = y.iter().map(|z| z.norm()).sum();
        if y_norm <= estimate {
            break;
        }
        estimate = y_norm;
        let xi = y.map(|z| {
            if z.norm() > 0.0 {
                z / z.norm()
            } else {
                C64::new(1.0, 0.0)
            }
        });
        let Some(z) = adj_lu.solve(&xi) else {
            return f64::INFINITY;
        };
        let (jmax, zmax) = z
            .iter()
            .enumerate()
            .map(|(j, v)| (j, v.norm()))
            .fold((0, -1.0), |a, b| if b.1 > a.1 { b } else { a });
        let zx = z.dotc(&x).re;
        if zmax <= zx {
            break;
        }
        x = CVector::zeros(n);
        x[jmax] = C64::new(1.0, 0.0);
    }
    one_norm(m) * estimate
}

/// `re+imj` with 17 significant digits.
pub fn format_complex(z: C64) -> String {
    let sign = if z.im.is_sign_negative() { '-' } else { '+' };
    format!("{:.16e}{}{:.16e}j", z.re, sign, z.im.abs())
}

pub fn parse_complex(s: &str) -> Option<C64> {
    let s = s.trim();
    let Some(body) = s.strip_suffix('j').or_else(|| s.strip_suffix('i')) else {
        return s.parse::<f64>().ok().map(|re| C64::new(re, 0.0));
    };
    // split at the last sign that is not part of an exponent
    let bytes = body.as_bytes();
    let split = (1..bytes.len())
        .rev()
        .find(|&k| (bytes[k] == b'+' || bytes[k] == b'-') && !matches!(bytes[k - 1], b'e' | b'E'));
    match split {
        Some(k) => {
            let re = body[..k].parse::<f64>().ok()?;
            let im_str = &body[k..];
            let im = match im_str {
                "+" => 1.0,
                "-" => -1.0,
                _ => im_str.parse::<f64>().ok()?,
            };
            Some(C64::new(re, im))
        }
        None => {
            let im = match body {
                "" | "+" => 1.0,
                "-" => -1.0,
                _ => body.parse::<f64>().ok()?,
            };
            Some(C64::new(0.0, im))
        }
    }
}

pub fn c64(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn real_vector(values: &[f64]) -> CVector {
    CVector::from_iterator(values.len(), values.iter().map(|&x| C64::new(x, 0.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn close(a: &CVector, b: &[f64]) -> bool {
        a.iter()
            .zip(b)
            .all(|(x, &y)| (x.re - y).abs() < 1e-12 && x.im.abs() < 1e-12)
    }

    #[test]
    fn apply_examples() {
        let v = real_vector(&[1.0, 2.0, 3.0]);
        assert!(close(&DenseOperator::identity(3).apply(&v).unwrap(), &[1.0, 2.0, 3.0]));
        let d = DenseOperator::diagonal(&[1.0, 4.0, 9.0]);
        assert!(close(&d.apply(&real_vector(&[1.0; 3])).unwrap(), &[1.0, 4.0, 9.0]));
        let z = DenseOperator::zeros(2);
        assert!(close(&z.apply(&real_vector(&[5.0, 7.0])).unwrap(), &[0.0, 0.0]));
        assert!(matches!(
            z.apply(&real_vector(&[1.0])),
            Err(LinopError::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn shifted_solve_examples() {
        let a = DenseOperator::diagonal(&[1.0, 2.0]);
        let w = a.shifted_solve(c64(1.0, 0.0), &real_vector(&[2.0, 3.0])).unwrap();
        assert!(close(&w, &[1.0, 1.0]));
        let w = DenseOperator::identity(2)
            .shifted_solve(c64(0.0, 0.0), &real_vector(&[4.0, 6.0]))
            .unwrap();
        assert!(close(&w, &[4.0, 6.0]));
        let err = DenseOperator::diagonal(&[0.0, 1.0])
            .shifted_solve(c64(0.0, 0.0), &real_vector(&[1.0, 1.0]))
            .unwrap_err();
        assert!(matches!(err, LinopError::SingularShift { .. }));
    }

    #[test]
    fn operator_norm_examples() {
        assert_abs_diff_eq!(DenseOperator::diagonal(&[1.0, -3.0]).operator_norm(), 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(DenseOperator::identity(5).operator_norm(), 1.0, epsilon = 1e-12);
        let nil = DenseOperator::from_rows(&[&[0.0, 2.0], &[0.0, 0.0]]).unwrap();
        assert_abs_diff_eq!(nil.operator_norm(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn weighted_norm_uses_similarity() {
        // [[0,1],[0,0]] with weights (1,4): D^{1/2} A D^{-1/2} has entry 1/2.
        let a = DenseOperator::from_rows(&[&[0.0, 1.0], &[0.0, 0.0]])
            .unwrap()
            .with_weights(vec![1.0, 4.0])
            .unwrap();
        assert_abs_diff_eq!(a.operator_norm(), 0.5, epsilon = 1e-14);
        assert!(DenseOperator::identity(2).with_weights(vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn eigen_examples() {
        let e = DenseOperator::diagonal(&[2.0, 5.0]).eigen_decompose().unwrap();
        let mut ev: Vec<f64> = e.eigenvalues.iter().map(|z| z.re).collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_abs_diff_eq!(ev[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ev[1], 5.0, epsilon = 1e-12);

        let swap = DenseOperator::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]).unwrap();
        let mut ev: Vec<f64> = swap.eigen_decompose().unwrap().eigenvalues.iter().map(|z| z.re).collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_abs_diff_eq!(ev[0], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ev[1], 1.0, epsilon = 1e-12);

        let jordan = DenseOperator::from_rows(&[&[1.0, 1.0], &[0.0, 1.0]]).unwrap();
        assert!(matches!(
            jordan.eigen_decompose(),
            Err(LinopError::DefectiveMatrix { .. })
        ));
    }

    #[test]
    fn nonnormal_eigen_residual() {
        let a = DenseOperator::from_rows(&[&[1.0, 3.0, 0.0], &[0.0, 2.0, -1.0], &[0.5, 0.0, 4.0]]).unwrap();
        let e = a.eigen_decompose().unwrap();
        let lam = CMatrix::from_diagonal(&DVector::from_column_slice(&e.eigenvalues));
        let r = a.entries() * &e.right_vectors - &e.right_vectors * lam;
        assert!(spectral_norm(&r) < 1e-10);
        let f = e.apply_function(|z| z);
        assert!(spectral_norm(&(f - a.entries())) < 1e-10);
    }

    #[test]
    fn complex_parse_and_format() {
        for (s, z) in [
            ("1+2j", c64(1.0, 2.0)),
            ("-1.5-2e-3j", c64(-1.5, -2e-3)),
            ("3", c64(3.0, 0.0)),
            ("1e-5+1e+2j", c64(1e-5, 100.0)),
            ("-2j", c64(0.0, -2.0)),
        ] {
            assert_eq!(parse_complex(s), Some(z), "{s}");
        }
        let z = c64(0.1, -1.0 / 3.0);
        assert_eq!(parse_complex(&format_complex(z)), Some(z));
    }

    #[test]
    fn csv_rejects_ragged() {
        let bad = "1+0j,2+0j\n3+0j\n";
        assert!(DenseOperator::read_csv(bad.as_bytes()).is_err());
    }
}
