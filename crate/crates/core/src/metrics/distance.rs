//! Wasserstein-1 on the line and circle, and Jensen-Shannon divergence.

use super::MetricError;

/// Period used for circular quantities, in degrees.
pub const PERIOD: f64 = 360.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Topology {
    Linear,
    Circular,
}

pub fn wasserstein1(a: &[f64], b: &[f64], topology: Topology) -> Result<f64, MetricError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricError::Empty);
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    Ok(match topology {
        Topology::Linear => w1_linear(a, b),
        Topology::Circular => w1_circular(a, b),
    })
}

fn sorted(v: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = v.collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Piecewise-constant `F − G` between consecutive breakpoints, as
/// `(difference, interval length)` pairs over `[lo, hi]`.
fn cdf_gaps(a: &[f64], b: &[f64], lo: f64, hi: f64) -> Vec<(f64, f64)> {
    let (wa, wb) = (1.0 / a.len() as f64, 1.0 / b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut f = 0.0;
    let mut x = lo;
    let mut out = Vec::with_capacity(a.len() + b.len() + 1);
    loop {
        let next = match (a.get(i), b.get(j)) {
            (Some(&p), Some(&q)) => p.min(q),
            (Some(&p), None) => p,
            (None, Some(&q)) => q,
            (None, None) => break,
        };
        if next > x {
            out.push((f, next - x));
            x = next;
        }
        while i < a.len() && a[i] == next {
            f += wa;
            i += 1;
        }
        while j < b.len() && b[j] == next {
            f -= wb;
            j += 1;
        }
    }
    if hi > x {
        out.push((f, hi - x));
    }
    out
}

fn w1_linear(a: &[f64], b: &[f64]) -> f64 {
    let (a, b) = (sorted(a.iter().copied()), sorted(b.iter().copied()));
    let lo = a[0].min(b[0]);
    cdf_gaps(&a, &b, lo, lo).iter().map(|(d, len)| d.abs() * len).sum()
}

/// `min_α ∫ |F − G − α|` over one period; the minimizer is a weighted median
/// of the CDF difference.
fn w1_circular(a: &[f64], b: &[f64]) -> f64 {
    let a = sorted(a.iter().map(|v| v.rem_euclid(PERIOD)));
    let b = sorted(b.iter().map(|v| v.rem_euclid(PERIOD)));
    let gaps = cdf_gaps(&a, &b, 0.0, PERIOD);
    let mut by_value = gaps.clone();
    by_value.sort_by(|x, y| x.0.total_cmp(&y.0));
    let total: f64 = by_value.iter().map(|g| g.1).sum();
    let mut acc = 0.0;
    let mut alpha = by_value[0].0;
    for &(d, len) in &by_value {
        acc += len;
        alpha = d;
        if acc >= total / 2.0 {
            break;
        }
    }
    gaps.iter().map(|(d, len)| (d - alpha).abs() * len).sum()
}

/// Jensen-Shannon divergence (natural log) between two histograms over the
/// same bins. Inputs are normalized first.
pub fn jsd(p: &[f64], q: &[f64]) -> Result<f64, MetricError> {
    if p.len() != q.len() {
        return Err(MetricError::Binning(p.len(), q.len()));
    }
    if p.iter().chain(q).any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    let (sp, sq): (f64, f64) = (p.iter().sum(), q.iter().sum());
    if !(sp > 0.0 && sq > 0.0) {
        return Err(MetricError::Empty);
    }
    let kl = |x: f64, m: f64| if x > 0.0 { x * (x / m).ln() } else { 0.0 };
    let mut total = 0.0;
    for (a, b) in p.iter().zip(q) {
        let (a, b) = (a / sp, b / sq);
        let m = 0.5 * (a + b);
        total += 0.5 * kl(a, m) + 0.5 * kl(b, m);
    }
    Ok(total.clamp(0.0, std::f64::consts::LN_2))
}

/// Counts of `samples` in `bins` equal-width bins over `[lo, hi)`; values
/// outside the range are clamped into the end bins.
pub fn histogram(samples: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let mut h = vec![0.0; bins];
    let width = (hi - lo) / bins as f64;
    for &v in samples {
        let k = ((v - lo) / width).floor();
        let k = if k < 0.0 { 0 } else { (k as usize).min(bins - 1) };
        h[k] += 1.0;
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let lin = Topology::Linear;
        assert_eq!(wasserstein1(&[1.0, 2.0], &[2.0, 1.0], lin).unwrap(), 0.0);
        assert_eq!(wasserstein1(&[0.0], &[1.0], lin).unwrap(), 1.0);
        let c = wasserstein1(&[350.0], &[10.0], Topology::Circular).unwrap();
        assert!((c - 20.0).abs() < 1e-9);
        assert!(wasserstein1(&[], &[1.0], lin).is_err());
        assert_eq!(jsd(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((jsd(&[1.0, 0.0], &[0.0, 3.0]).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!(jsd(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn histogram_clamps() {
        assert_eq!(histogram(&[-1.0, 0.0, 0.5, 0.99, 5.0], 0.0, 1.0, 2), vec![2.0, 3.0]);
    }
}
