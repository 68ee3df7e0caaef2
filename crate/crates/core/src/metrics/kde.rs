//! Kernel density estimates written as plain CSV.

use std::f64::consts::PI;
use std::fmt::Write;

use super::geometry::{GeometryKind, GeometrySamples};

pub const GAUSSIAN_BANDWIDTH: f64 = 0.15;
pub const VON_MISES_KAPPA: f64 = 25.0;

pub fn gaussian_kde(samples: &[f64], x: f64, bandwidth: f64) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let norm = 1.0 / (bandwidth * (2.0 * PI).sqrt());
    samples
        .iter()
        .map(|s| norm * (-0.5 * ((x - s) / bandwidth).powi(2)).exp())
        .sum::<f64>()
        / samples.len() as f64
}

/// Modified Bessel function of the first kind, order zero, by its power series.
pub fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let (mut term, mut sum) = (1.0, 1.0);
    for k in 1..500 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Von Mises density in degrees (integrates to 1 over a 360° period).
pub fn von_mises_kde(samples_deg: &[f64], x_deg: f64, kappa: f64) -> f64 {
    if samples_deg.is_empty() {
        return 0.0;
    }
    // exp(κ(cos − 1)) / I0(κ)e^{-κ} avoids overflow for large κ.
    let scaled_i0 = bessel_i0(kappa) * (-kappa).exp();
    let norm = PI / 180.0 / (2.0 * PI * scaled_i0);
    samples_deg
        .iter()
        .map(|s| norm * (kappa * ((x_deg - s).to_radians().cos() - 1.0)).exp())
        .sum::<f64>()
        / samples_deg.len() as f64
}

/// Evaluation grid per kind: lengths over [0, 4] Å, angles over [0, 360).
pub fn grid(kind: GeometryKind, points: usize) -> Vec<f64> {
    let (lo, hi) = match kind {
        GeometryKind::BondLength => (0.0, 4.0),
        _ => (0.0, 360.0),
    };
    (0..points).map(|k| lo + (hi - lo) * k as f64 / points as f64).collect()
}

/// CSV with columns `kind,key,x,generated,reference` for every key present in
/// either sample set.
pub fn density_csv(generated: &GeometrySamples, reference: &GeometrySamples, points: usize) -> String {
    let mut out = String::from("kind,key,x,generated,reference\n");
    let keys: std::collections::BTreeSet<_> = generated.keys().chain(reference.keys()).collect();
    let empty = Vec::new();
    for k in keys {
        let g = generated.get(k).unwrap_or(&empty);
        let r = reference.get(k).unwrap_or(&empty);
        for x in grid(k.0, points) {
            let (dg, dr) = match k.0 {
                GeometryKind::BondLength => (
                    gaussian_kde(g, x, GAUSSIAN_BANDWIDTH),
                    gaussian_kde(r, x, GAUSSIAN_BANDWIDTH),
                ),
                _ => (
                    von_mises_kde(g, x, VON_MISES_KAPPA),
                    von_mises_kde(r, x, VON_MISES_KAPPA),
                ),
            };
            let _ = writeln!(out, "{},{},{x:.6},{dg:.9e},{dr:.9e}", k.0, k.1);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn densities_integrate_to_one() {
        let dx = 0.001;
        let g: f64 = (0..8000)
            .map(|k| gaussian_kde(&[2.0], k as f64 * dx - 2.0, 0.15) * dx)
            .sum();
        assert!((g - 1.0).abs() < 1e-6);
        let v: f64 = (0..36000)
            .map(|k| von_mises_kde(&[350.0], k as f64 * 0.01, 25.0) * 0.01)
            .sum();
        assert!((v - 1.0).abs() < 1e-6);
    }

    #[test]
    fn i0_reference_values() {
        assert!((bessel_i0(0.0) - 1.0).abs() < 1e-15);
        assert!((bessel_i0(1.0) - 1.266_065_877_752_008_4).abs() < 1e-14);
    }
}
