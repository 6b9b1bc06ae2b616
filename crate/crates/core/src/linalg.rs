//! Small dense linear-algebra helpers shared by the analysis modules.

use nalgebra::DMatrix;
use num_complex::Complex64;

/// Default relative cutoff for numerical rank.
pub const RANK_THRESHOLD: f64 = 1e-8;

/// Singular values in descending order.
pub fn singular_values(m: &DMatrix<Complex64>) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let mut sv: Vec<f64> = m.clone().singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

pub fn real_singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let mut sv: Vec<f64> = m.clone().singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Count of `sigma_k > threshold * sigma_1`; zero for a zero matrix.
pub fn rank_from_singular_values(sv: &[f64], threshold: f64) -> usize {
    match sv.first() {
        Some(&s1) if s1 > 0.0 => sv.iter().filter(|&&s| s > threshold * s1).count(),
        _ => 0,
    }
}

/// Induced 1-norm: largest absolute column sum.
pub fn norm1(m: &DMatrix<Complex64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn to_complex(m: &DMatrix<f64>) -> DMatrix<Complex64> {
    m.map(Complex64::from)
}
