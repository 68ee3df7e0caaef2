//! Coordinate flow: visibility masks, data/prior pairing, Kabsch alignment and
//! Euler updates.
//!
//! Coordinates live on an `n × M` grid of (slot, local atom) positions; masks
//! select which grid cells are meaningful.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{NodeState, ReactionGraph};
use crate::vocabulary::{Side, Vocabulary};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("mask selects no atoms")]
    EmptyMask,
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// Per-cell boolean mask over the `n × M` grid.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AtomMask {
    n: usize,
    m: usize,
    bits: Vec<bool>,
}

impl AtomMask {
    pub fn zeros(n: usize, m: usize) -> Self {
        AtomMask {
            n,
            m,
            bits: vec![false; n * m],
        }
    }

    pub fn ones(n: usize, m: usize) -> Self {
        AtomMask {
            n,
            m,
            bits: vec![true; n * m],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn get(&self, i: usize, a: usize) -> bool {
        self.bits[i * self.m + a]
    }

    #[inline]
    pub fn set(&mut self, i: usize, a: usize, v: bool) {
        self.bits[i * self.m + a] = v;
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.bits[i * self.m..(i + 1) * self.m]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_subset_of(&self, other: &AtomMask) -> bool {
        self.bits.len() == other.bits.len() && self.bits.iter().zip(&other.bits).all(|(a, b)| !a || *b)
    }
}

/// Coordinates on the `n × M` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Coords {
    n: usize,
    m: usize,
    xyz: Vec<[f64; 3]>,
}

impl Coords {
    pub fn zeros(n: usize, m: usize) -> Self {
        Coords {
            n,
            m,
            xyz: vec![[0.0; 3]; n * m],
        }
    }

    /// Isotropic Gaussian prior scaled by `scale`.
    pub fn gaussian<R: Rng + ?Sized>(n: usize, m: usize, scale: f64, rng: &mut R) -> Self {
        let xyz = (0..n * m)
            .map(|_| {
                [
                    scale * rng.sample::<f64, _>(StandardNormal),
                    scale * rng.sample::<f64, _>(StandardNormal),
                    scale * rng.sample::<f64, _>(StandardNormal),
                ]
            })
            .collect();
        Coords { n, m, xyz }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn get(&self, i: usize, a: usize) -> [f64; 3] {
        self.xyz[i * self.m + a]
    }

    #[inline]
    pub fn set(&mut self, i: usize, a: usize, p: [f64; 3]) {
        self.xyz[i * self.m + a] = p;
    }

    pub fn cells(&self) -> &[[f64; 3]] {
        &self.xyz
    }

    pub fn cells_mut(&mut self) -> &mut [[f64; 3]] {
        &mut self.xyz
    }

    pub fn scale(&mut self, factor: f64) {
        for p in &mut self.xyz {
            for v in p.iter_mut() {
                *v *= factor;
            }
        }
    }

    fn check(&self, mask: &AtomMask) -> Result<(), FlowError> {
        if self.n != mask.n || self.m != mask.m {
            return Err(FlowError::Shape(format!(
                "coordinates {}x{} vs mask {}x{}",
                self.n, self.m, mask.n, mask.m
            )));
        }
        Ok(())
    }

    /// Max-abs difference over cells selected by `mask`.
    pub fn max_abs_diff(&self, other: &Coords, mask: &AtomMask) -> f64 {
        let mut worst = 0.0f64;
        for (k, &on) in mask.bits.iter().enumerate() {
            if on {
                for d in 0..3 {
                    worst = worst.max((self.xyz[k][d] - other.xyz[k][d]).abs());
                }
            }
        }
        worst
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Velocity {
    /// `Ĉ0 − C̃_t`
    Difference,
    /// `(Ĉ0 − C̃_t) / t`
    Rescaled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub z_c: f64,
    pub anneal_coeff: f64,
    pub noise_scale: f64,
    pub velocity: Velocity,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            z_c: 1.0,
            anneal_coeff: 10.0,
            noise_scale: 0.2,
            velocity: Velocity::Difference,
        }
    }
}

/// Atom-validity mask implied by the denoised part of a graph: each denoised
/// slot keeps its block's atoms minus leaving atoms consumed by denoised edges.
/// Masked slots are all zero.
pub fn atom_validity(g: &ReactionGraph, vocab: &Vocabulary) -> AtomMask {
    let m = vocab.max_atoms();
    let mut s0 = AtomMask::zeros(g.n(), m);
    for i in 0..g.n() {
        if let NodeState::Block(b) = g.node(i) {
            for a in 0..vocab.block(b).atoms.len() {
                s0.set(i, a, true);
            }
        }
    }
    for (i, j, r, vi, vj) in g.concrete_edges() {
        let tpl = vocab.reaction(r);
        for (slot, v, side) in [(i, vi, Side::A), (j, vj, Side::B)] {
            if let NodeState::Block(b) = g.node(slot) {
                let block = vocab.block(b);
                if tpl.leaving(side) && v < block.centers.len() {
                    s0.set(slot, block.centers[v].atom, false);
                }
            }
        }
    }
    s0
}

/// All-ones rows for masked slots, `S0` rows for denoised slots.
pub fn visibility_mask(x_t: &ReactionGraph, s0: &AtomMask) -> AtomMask {
    let mut st = s0.clone();
    for i in 0..x_t.n().min(s0.n) {
        if x_t.node(i).is_mask() {
            for a in 0..s0.m {
                st.set(i, a, true);
            }
        }
    }
    st
}

pub fn masked_centroid(c: &Coords, s: &AtomMask) -> Result<[f64; 3], FlowError> {
    c.check(s)?;
    let mut sum = [0.0; 3];
    let mut count = 0usize;
    for (p, &on) in c.xyz.iter().zip(&s.bits) {
        if on {
            for d in 0..3 {
                sum[d] += p[d];
            }
            count += 1;
        }
    }
    if count == 0 {
        return Err(FlowError::EmptyMask);
    }
    Ok(sum.map(|v| v / count as f64))
}

/// Subtracts `shift` from cells in `mask`; other cells become zero.
pub fn shift_masked(c: &Coords, mask: &AtomMask, shift: [f64; 3]) -> Coords {
    let mut out = Coords::zeros(c.n, c.m);
    for (k, &on) in mask.bits.iter().enumerate() {
        if on {
            for d in 0..3 {
                out.xyz[k][d] = c.xyz[k][d] - shift[d];
            }
        }
    }
    out
}

/// Centers `c` on its own `mask` centroid, zeroing cells outside the mask.
pub fn center(c: &Coords, mask: &AtomMask) -> Result<Coords, FlowError> {
    let m = masked_centroid(c, mask)?;
    Ok(shift_masked(c, mask, m))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    /// Shifted data endpoint with dummy atoms filled from the prior.
    pub c0: Coords,
    /// Centered prior endpoint.
    pub c1: Coords,
    /// Interpolant at `t`.
    pub ct: Coords,
    pub st: AtomMask,
}

/// Builds the data/prior pair and its interpolant at `t`.
pub fn pair_data(c0: &Coords, s0: &AtomMask, c1: &Coords, t: f64, x_t: &ReactionGraph) -> Result<Pair, FlowError> {
    c0.check(s0)?;
    c1.check(s0)?;
    let st = visibility_mask(x_t, s0);
    let mu = masked_centroid(c1, &st)?;
    let c1t = shift_masked(c1, &st, mu);
    let mut c0t = Coords::zeros(c0.n, c0.m);
    for k in 0..st.bits.len() {
        if s0.bits[k] {
            for d in 0..3 {
                c0t.xyz[k][d] = c0.xyz[k][d] - mu[d];
            }
        } else if st.bits[k] {
            c0t.xyz[k] = c1t.xyz[k];
        }
    }
    let ct = interpolate(&c0t, &c1t, t);
    Ok(Pair {
        c0: c0t,
        c1: c1t,
        ct,
        st,
    })
}

/// Rotates the prior about its `S0` centroid onto the data, then pairs.
pub fn pair_data_aligned(
    c0: &Coords,
    s0: &AtomMask,
    c1: &Coords,
    t: f64,
    x_t: &ReactionGraph,
) -> Result<Pair, FlowError> {
    let aligned = align_prior(c1, c0, s0)?;
    pair_data(c0, s0, &aligned, t, x_t)
}

/// `(1 − t)·a + t·b`, exact at the endpoints.
pub fn interpolate(a: &Coords, b: &Coords, t: f64) -> Coords {
    if t == 0.0 {
        return a.clone();
    }
    if t == 1.0 {
        return b.clone();
    }
    let mut out = Coords::zeros(a.n, a.m);
    for k in 0..a.xyz.len() {
        for d in 0..3 {
            out.xyz[k][d] = (1.0 - t) * a.xyz[k][d] + t * b.xyz[k][d];
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kabsch {
    pub rotation: Matrix3<f64>,
    /// Weighted RMSD after superposition.
    pub rmsd: f64,
    /// True when the point set was too degenerate and identity was returned.
    pub degenerate: bool,
}

/// Proper rotation `R` minimizing the weighted RMSD of `R·(P − p̄)` against `Q − q̄`.
pub fn kabsch_align(p: &[[f64; 3]], q: &[[f64; 3]], weights: &[f64]) -> Kabsch {
    assert_eq!(p.len(), q.len());
    assert_eq!(p.len(), weights.len());
    let wsum: f64 = weights.iter().sum();
    let pc = weighted_mean(p, weights, wsum);
    let qc = weighted_mean(q, weights, wsum);
    let mut h = Matrix3::zeros();
    for k in 0..p.len() {
        let a = Vector3::from(p[k]) - pc;
        let b = Vector3::from(q[k]) - qc;
        h += weights[k] * a * b.transpose();
    }
    let active = weights.iter().filter(|w| **w > 0.0).count();
    let svd = h.svd(true, true);
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let degenerate = active < 3 || !(wsum > 0.0) || sv[1] <= 1e-12 * sv[0].max(1e-300);
    let rotation = if degenerate {
        Matrix3::identity()
    } else {
        let u = svd.u.expect("u requested");
        let vt = svd.v_t.expect("v requested");
        let v = vt.transpose();
        let d = (v * u.transpose()).determinant().signum();
        let corr = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
        v * corr * u.transpose()
    };
    let mut se = 0.0;
    for k in 0..p.len() {
        let a = rotation * (Vector3::from(p[k]) - pc);
        let b = Vector3::from(q[k]) - qc;
        se += weights[k] * (a - b).norm_squared();
    }
    let rmsd = if wsum > 0.0 { (se / wsum).sqrt() } else { 0.0 };
    Kabsch {
        rotation,
        rmsd,
        degenerate,
    }
}

fn weighted_mean(p: &[[f64; 3]], w: &[f64], wsum: f64) -> Vector3<f64> {
    let mut m = Vector3::zeros();
    if wsum > 0.0 {
        for (x, &wk) in p.iter().zip(w) {
            m += wk * Vector3::from(*x);
        }
        m /= wsum;
    }
    m
}

/// Minimal RMSD between two equally sized point sets after optimal superposition.
pub fn aligned_rmsd(p: &[[f64; 3]], q: &[[f64; 3]]) -> f64 {
    let w = vec![1.0; p.len()];
    kabsch_align(p, q, &w).rmsd
}

/// Rotates `c1` about its `S0` centroid to best match `c0` on `S0`.
pub fn align_prior(c1: &Coords, c0: &Coords, s0: &AtomMask) -> Result<Coords, FlowError> {
    c0.check(s0)?;
    c1.check(s0)?;
    let idx: Vec<usize> = (0..s0.bits.len()).filter(|&k| s0.bits[k]).collect();
    if idx.is_empty() {
        return Err(FlowError::EmptyMask);
    }
    let p: Vec<[f64; 3]> = idx.iter().map(|&k| c1.xyz[k]).collect();
    let q: Vec<[f64; 3]> = idx.iter().map(|&k| c0.xyz[k]).collect();
    let w = vec![1.0; idx.len()];
    let k = kabsch_align(&p, &q, &w);
    let pc = weighted_mean(&p, &w, idx.len() as f64);
    let mut out = c1.clone();
    for x in &mut out.xyz {
        let v = k.rotation * (Vector3::from(*x) - pc) + pc;
        *x = [v.x, v.y, v.z];
    }
    Ok(out)
}

/// Step factor: `Δt·(k·t)` when annealing, else `Δt`, clamped so the effective
/// interpolation factor stays in `[0, 1]`.
pub fn step_size(t: f64, dt: f64, anneal_coeff: f64, velocity: Velocity) -> f64 {
    let raw = if anneal_coeff > 0.0 { dt * anneal_coeff * t } else { dt };
    match velocity {
        Velocity::Difference => raw.clamp(0.0, 1.0),
        Velocity::Rescaled => raw.clamp(0.0, t),
    }
}

/// `C_{t−Δt} = C_t + step·v` with `v = Ĉ0 − C̃_t` (or divided by `t`).
pub fn euler_step(
    c_t: &Coords,
    c_tilde: &Coords,
    c0_hat: &Coords,
    t: f64,
    dt: f64,
    anneal_coeff: f64,
    velocity: Velocity,
) -> Coords {
    let step = step_size(t, dt, anneal_coeff, velocity);
    let scale = match velocity {
        Velocity::Difference => step,
        Velocity::Rescaled if t > 0.0 => step / t,
        Velocity::Rescaled => 0.0,
    };
    let mut out = c_t.clone();
    for k in 0..out.xyz.len() {
        for d in 0..3 {
            out.xyz[k][d] += scale * (c0_hat.xyz[k][d] - c_tilde.xyz[k][d]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::NodeState;

    fn rz(theta: f64) -> Matrix3<f64> {
        let (s, c) = theta.sin_cos();
        Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
    }

    fn cloud() -> Vec<[f64; 3]> {
        vec![
            [0.0, 0.0, 0.0],
            [1.5, 0.2, -0.3],
            [0.4, 1.1, 0.7],
            [-0.8, 0.5, 1.9],
            [2.2, -1.0, 0.4],
        ]
    }

    #[test]
    fn centroid_examples() {
        let mut c = Coords::zeros(1, 2);
        c.set(0, 1, [2.0, 0.0, 0.0]);
        let s = AtomMask::ones(1, 2);
        assert_eq!(masked_centroid(&c, &s).unwrap(), [1.0, 0.0, 0.0]);
        let mut one = AtomMask::zeros(1, 2);
        one.set(0, 1, true);
        assert_eq!(masked_centroid(&c, &one).unwrap(), [2.0, 0.0, 0.0]);
        assert_eq!(masked_centroid(&c, &AtomMask::zeros(1, 2)), Err(FlowError::EmptyMask));
    }

    #[test]
    fn kabsch_identity_and_rotation() {
        let p = cloud();
        let w = vec![1.0; p.len()];
        let k = kabsch_align(&p, &p, &w);
        assert!((k.rotation - Matrix3::identity()).norm() < 1e-12);
        assert!(k.rmsd < 1e-12);

        let r = rz(std::f64::consts::FRAC_PI_2);
        let q: Vec<[f64; 3]> = p
            .iter()
            .map(|x| {
                let v = r * Vector3::from(*x);
                [v.x, v.y, v.z]
            })
            .collect();
        let k = kabsch_align(&p, &q, &w);
        assert!((k.rotation - r).norm() < 1e-9);
        assert!(k.rmsd < 1e-9);
    }

    #[test]
    fn kabsch_reflection_keeps_proper_rotation() {
        let p = cloud();
        let q: Vec<[f64; 3]> = p.iter().map(|x| [x[0], x[1], -x[2]]).collect();
        let k = kabsch_align(&p, &q, &vec![1.0; p.len()]);
        assert!((k.rotation.determinant() - 1.0).abs() < 1e-12);
        assert!(k.rmsd > 1e-3);
    }

    #[test]
    fn kabsch_degenerate() {
        let p = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
        let k = kabsch_align(&p, &p, &[1.0; 3]);
        assert!(k.degenerate);
        assert_eq!(k.rotation, Matrix3::identity());
    }

    #[test]
    fn euler_examples() {
        let mut ct = Coords::zeros(1, 1);
        ct.set(0, 0, [1.0, 0.0, 0.0]);
        let target = Coords::zeros(1, 1);
        let out = euler_step(&ct, &ct, &target, 0.5, 0.1, 0.0, Velocity::Difference);
        assert!((out.get(0, 0)[0] - 0.9).abs() < 1e-15);
        let fix = euler_step(&ct, &ct, &ct, 0.5, 0.1, 10.0, Velocity::Difference);
        assert_eq!(fix, ct);
        assert!((step_size(0.5, 0.01, 10.0, Velocity::Difference) - 0.05).abs() < 1e-15);
        assert_eq!(step_size(1.0, 0.5, 50.0, Velocity::Difference), 1.0);
        assert_eq!(step_size(0.2, 0.5, 50.0, Velocity::Rescaled), 0.2);
    }

    #[test]
    fn visibility_rules() {
        let mut s0 = AtomMask::zeros(2, 3);
        s0.set(0, 0, true);
        s0.set(1, 1, true);
        let mut x = ReactionGraph::from_parts(vec![0, 1], &[]);
        assert_eq!(visibility_mask(&x, &s0), s0);
        x.set_node(1, NodeState::Mask);
        let st = visibility_mask(&x, &s0);
        assert_eq!(st.row(0), s0.row(0));
        assert_eq!(st.row(1), &[true, true, true]);
    }
}
