//! Training losses for graph probabilities and coordinates.

use serde::{Deserialize, Serialize};

use super::{DenoiserError, DenoiserOutput};
use crate::flow::{AtomMask, Coords};
use crate::graph::{EdgeCodec, EdgeLabel, ReactionGraph};
use crate::vocabulary::Vocabulary;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub w_pair: f64,
    pub w_slddt: f64,
    pub w_bond: f64,
    /// Pairwise cutoff, Å.
    pub pair_cutoff: f64,
    pub bond_time_threshold: f64,
    /// sLDDT inclusion radius, Å.
    pub slddt_cutoff: f64,
    pub slddt_thresholds: [f64; 4],
    /// Adds the weighted pairwise, sLDDT and bond terms instead of the
    /// default `graph + MSE + pair` sum.
    pub auxiliary: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            w_pair: 0.4,
            w_slddt: 0.4,
            w_bond: 0.2,
            pair_cutoff: 3.0,
            bond_time_threshold: 0.25,
            slddt_cutoff: 15.0,
            slddt_thresholds: [0.5, 1.0, 2.0, 4.0],
            auxiliary: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if [self.w_pair, self.w_slddt, self.w_bond]
            .iter()
            .any(|w| *w < 0.0 || !w.is_finite())
        {
            return Err("loss weights must be nonnegative".into());
        }
        if !(self.pair_cutoff > 0.0 && self.slddt_cutoff > 0.0) {
            return Err("cutoffs must be positive".into());
        }
        Ok(())
    }
}

/// `w_t · Σ −log p[true]` over nodes and upper-triangle edges.
pub fn loss_graph(probs: &DenoiserOutput, x0: &ReactionGraph, codec: &EdgeCodec, w_t: f64) -> f64 {
    let n = x0.n();
    let mut nll = 0.0;
    for i in 0..n {
        let b = x0.node(i).block().expect("clean graph");
        nll -= probs.node_row(i)[b].max(f64::MIN_POSITIVE).ln();
    }
    for i in 0..n {
        for j in i + 1..n {
            let c = match x0.edge(i, j) {
                EdgeLabel::NoEdge => probs.no_edge(),
                e => codec.encode(e).expect("label fits codec"),
            };
            nll -= probs.edge_row(i, j)[c].max(f64::MIN_POSITIVE).ln();
        }
    }
    w_t * nll
}

fn support(s0: &AtomMask) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..s0.n() {
        for a in 0..s0.m() {
            if s0.get(i, a) {
                out.push((i, a));
            }
        }
    }
    out
}

fn dist(p: [f64; 3], q: [f64; 3]) -> f64 {
    ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
}

/// Mean squared error over atoms in `S0`.
pub fn loss_mse(pred: &Coords, target: &Coords, s0: &AtomMask) -> Result<f64, DenoiserError> {
    let atoms = support(s0);
    if atoms.is_empty() {
        return Err(DenoiserError::Shape("empty atom support".into()));
    }
    let se: f64 = atoms
        .iter()
        .map(|&(i, a)| {
            let (p, q) = (pred.get(i, a), target.get(i, a));
            (0..3).map(|d| (p[d] - q[d]).powi(2)).sum::<f64>()
        })
        .sum();
    Ok(se / atoms.len() as f64)
}

/// Sum of squared distance errors over pairs whose true distance is within `cutoff`.
pub fn loss_pair(pred: &Coords, target: &Coords, s0: &AtomMask, cutoff: f64) -> Result<f64, DenoiserError> {
    let atoms = support(s0);
    if atoms.is_empty() {
        return Err(DenoiserError::Shape("empty atom support".into()));
    }
    let mut total = 0.0;
    for (k, &(i, a)) in atoms.iter().enumerate() {
        for &(j, b) in &atoms[k + 1..] {
            let d0 = dist(target.get(i, a), target.get(j, b));
            if d0 <= cutoff {
                let dp = dist(pred.get(i, a), pred.get(j, b));
                total += (dp - d0).powi(2);
            }
        }
    }
    Ok(total)
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Mean of `1 − sLDDT_ij` over pairs closer than `cutoff` in the reference.
pub fn loss_slddt(
    pred: &Coords,
    target: &Coords,
    s0: &AtomMask,
    cutoff: f64,
    thresholds: &[f64; 4],
) -> Result<f64, DenoiserError> {
    let atoms = support(s0);
    let mut total = 0.0;
    let mut count = 0usize;
    for (k, &(i, a)) in atoms.iter().enumerate() {
        for &(j, b) in &atoms[k + 1..] {
            let d0 = dist(target.get(i, a), target.get(j, b));
            if d0 < cutoff {
                let dp = dist(pred.get(i, a), pred.get(j, b));
                let score: f64 = thresholds
                    .iter()
                    .map(|tau| logistic(tau - (dp - d0).abs()))
                    .sum::<f64>()
                    / 4.0;
                total += 1.0 - score;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(DenoiserError::Shape("no atom pairs within the sLDDT cutoff".into()));
    }
    Ok(total / count as f64)
}

/// A bond between two grid cells `(slot, local atom)`.
pub type CellBond = ((usize, usize), (usize, usize));

/// Intra-block bonds whose endpoints both exist in `S0`.
pub fn intra_block_bonds(graph: &ReactionGraph, vocab: &Vocabulary, s0: &AtomMask) -> Vec<CellBond> {
    let mut out = Vec::new();
    for i in 0..graph.n() {
        if let Some(b) = graph.node(i).block() {
            for &(p, q, _) in &vocab.block(b).bonds {
                if s0.get(i, p) && s0.get(i, q) {
                    out.push(((i, p), (i, q)));
                }
            }
        }
    }
    out
}

/// Mean absolute bond-length deviation; zero above the time threshold.
pub fn loss_bond(
    pred: &Coords,
    target: &Coords,
    bonds: &[CellBond],
    t: f64,
    time_threshold: f64,
) -> Result<f64, DenoiserError> {
    if t > time_threshold {
        return Ok(0.0);
    }
    if bonds.is_empty() {
        return Err(DenoiserError::Shape("no bonds".into()));
    }
    let total: f64 = bonds
        .iter()
        .map(|&((i, a), (j, b))| {
            (dist(pred.get(i, a), pred.get(j, b)) - dist(target.get(i, a), target.get(j, b))).abs()
        })
        .sum();
    Ok(total / bonds.len() as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub graph: f64,
    pub mse: f64,
    pub pair: f64,
    pub slddt: f64,
    pub bond: f64,
    pub total: f64,
}

/// Combines the terms: `graph + mse + pair` by default, or
/// `graph + mse + w_pair·pair + w_slddt·slddt + w_bond·bond` with auxiliary losses.
pub fn combine(cfg: &TrainConfig, graph: f64, mse: f64, pair: f64, slddt: f64, bond: f64) -> LossBreakdown {
    let total = if cfg.auxiliary {
        graph + mse + cfg.w_pair * pair + cfg.w_slddt * slddt + cfg.w_bond * bond
    } else {
        graph + mse + pair
    };
    LossBreakdown {
        graph,
        mse,
        pair,
        slddt,
        bond,
        total,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_points(d: f64) -> Coords {
        let mut c = Coords::zeros(1, 2);
        c.set(0, 1, [d, 0.0, 0.0]);
        c
    }

    #[test]
    fn perfect_predictions() {
        let c = two_points(1.5);
        let s = AtomMask::ones(1, 2);
        assert_eq!(loss_mse(&c, &c, &s).unwrap(), 0.0);
        assert_eq!(loss_pair(&c, &c, &s, 3.0).unwrap(), 0.0);
        assert_eq!(loss_bond(&c, &c, &[((0, 0), (0, 1))], 0.1, 0.25).unwrap(), 0.0);
        let sl = loss_slddt(&c, &c, &s, 15.0, &[0.5, 1.0, 2.0, 4.0]).unwrap();
        let want = 1.0
            - [0.5f64, 1.0, 2.0, 4.0]
                .iter()
                .map(|x| 1.0 / (1.0 + (-x).exp()))
                .sum::<f64>()
                / 4.0;
        assert!((sl - want).abs() < 1e-15);
        assert!((sl - 0.19588).abs() < 1e-4);
    }

    #[test]
    fn hand_values() {
        let s = AtomMask::ones(1, 2);
        assert_eq!(loss_pair(&two_points(3.0), &two_points(2.0), &s, 3.0).unwrap(), 1.0);
        let b = loss_bond(&two_points(1.2), &two_points(1.5), &[((0, 0), (0, 1))], 0.0, 0.25).unwrap();
        assert!((b - 0.3).abs() < 1e-15);
        assert_eq!(
            loss_bond(&two_points(1.2), &two_points(1.5), &[((0, 0), (0, 1))], 0.3, 0.25).unwrap(),
            0.0
        );
        assert!(loss_mse(&two_points(1.0), &two_points(1.0), &AtomMask::zeros(1, 2)).is_err());
    }

    #[test]
    fn pair_cutoff_uses_true_distance() {
        let s = AtomMask::ones(1, 2);
        assert_eq!(loss_pair(&two_points(1.0), &two_points(3.5), &s, 3.0).unwrap(), 0.0);
    }

    #[test]
    fn graph_loss_zero_for_one_hot_and_linear_in_weight() {
        let g = ReactionGraph::from_parts(vec![0, 1], &[(0, 1, EdgeLabel::concrete(0, 0, 0))]);
        let codec = EdgeCodec::new(1, 1);
        let mut out = DenoiserOutput::uniform(2, 2, 2, 1);
        out.enforce_carry_over(&g, &codec);
        assert_eq!(loss_graph(&out, &g, &codec, 0.7), 0.0);
        let u = DenoiserOutput::uniform(2, 2, 2, 1);
        let one = loss_graph(&u, &g, &codec, 1.0);
        assert!((loss_graph(&u, &g, &codec, 2.5) - 2.5 * one).abs() < 1e-12);
        assert!((one - 3.0 * 2f64.ln()).abs() < 1e-12);
    }
}
