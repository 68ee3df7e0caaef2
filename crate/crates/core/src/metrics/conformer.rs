//! Conformer-ensemble coverage and matching.

use serde::Serialize;

use super::MetricError;
use crate::flow::aligned_rmsd;

pub const DEFAULT_TAU: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CovMat {
    /// Fraction of generated conformers within `tau` of some reference.
    pub cov: f64,
    /// Mean over generated conformers of the closest reference RMSD.
    pub mat: f64,
    /// Fraction of references within `tau` of some generated conformer.
    pub cov_ref: f64,
    /// Mean over references of the closest generated RMSD.
    pub mat_ref: f64,
}

/// All conformers must list the same atoms in the same order.
pub fn cov_mat(generated: &[Vec<[f64; 3]>], reference: &[Vec<[f64; 3]>], tau: f64) -> Result<CovMat, MetricError> {
    if generated.is_empty() || reference.is_empty() {
        return Err(MetricError::Empty);
    }
    let atoms = reference[0].len();
    if let Some(bad) = generated.iter().chain(reference).find(|c| c.len() != atoms) {
        return Err(MetricError::AtomCount(atoms, bad.len()));
    }
    let rmsd: Vec<Vec<f64>> = generated
        .iter()
        .map(|g| reference.iter().map(|r| aligned_rmsd(g, r)).collect())
        .collect();
    let row_min: Vec<f64> = rmsd
        .iter()
        .map(|row| row.iter().copied().fold(f64::INFINITY, f64::min))
        .collect();
    let col_min: Vec<f64> = (0..reference.len())
        .map(|j| rmsd.iter().map(|row| row[j]).fold(f64::INFINITY, f64::min))
        .collect();
    let frac = |v: &[f64]| v.iter().filter(|d| **d <= tau).count() as f64 / v.len() as f64;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(CovMat {
        cov: frac(&row_min),
        mat: mean(&row_min),
        cov_ref: frac(&col_min),
        mat_ref: mean(&col_min),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tri(scale: f64) -> Vec<[f64; 3]> {
        vec![
            [0.0, 0.0, 0.0],
            [scale, 0.0, 0.0],
            [0.0, 2.0 * scale, 0.0],
            [0.0, 0.0, 3.0 * scale],
        ]
    }

    #[test]
    fn identical_sets() {
        let x = vec![tri(1.0), tri(1.5), tri(2.0)];
        let r = cov_mat(&x, &x, DEFAULT_TAU).unwrap();
        assert_eq!((r.cov, r.cov_ref), (1.0, 1.0));
        assert!(r.mat < 1e-12 && r.mat_ref < 1e-12);
    }

    #[test]
    fn single_far_conformer() {
        // Unit-radius tetrahedron against the same shape scaled by 3: the best
        // superposition is the identity and every atom sits 2 Å away.
        let k = 1.0 / 3f64.sqrt();
        let r = vec![[k, k, k], [k, -k, -k], [-k, k, -k], [-k, -k, k]];
        let g: Vec<[f64; 3]> = r.iter().map(|p| [3.0 * p[0], 3.0 * p[1], 3.0 * p[2]]).collect();
        let out = cov_mat(&[g], &[r], DEFAULT_TAU).unwrap();
        assert_eq!(out.cov, 0.0);
        assert!((out.mat - 2.0).abs() < 1e-12);
    }

    #[test]
    fn mismatched_atoms() {
        assert_eq!(
            cov_mat(&[tri(1.0)], &[vec![[0.0; 3]]], 0.75),
            Err(MetricError::AtomCount(1, 4))
        );
    }
}
