//! Small dense helpers on top of nalgebra.

use nalgebra::DMatrix;

pub fn symmetric_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = m.clone().symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

pub fn sym_lambda_max(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).last().copied().unwrap_or(f64::NEG_INFINITY)
}

pub fn sym_lambda_min(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).first().copied().unwrap_or(f64::INFINITY)
}

/// Largest eigenvalue of the symmetric part, i.e. the matrix measure induced
/// by the Euclidean norm.
pub fn log_norm(m: &DMatrix<f64>) -> f64 {
    sym_lambda_max(&symmetric_part(m))
}

pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let mut sv: Vec<f64> = m.clone().singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    singular_values(m).first().copied().unwrap_or(0.0)
}

/// `‖M‖₂ ‖M⁻¹‖₂`, or `None` when `M` is numerically singular.
pub fn cond2(m: &DMatrix<f64>) -> Option<f64> {
    let sv = singular_values(m);
    let (hi, lo) = (*sv.first()?, *sv.last()?);
    if !(lo > hi * 1e-14) || !hi.is_finite() {
        return None;
    }
    Some(hi / lo)
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
