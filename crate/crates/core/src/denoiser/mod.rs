//! The denoiser contract and concrete denoisers.

pub mod features;
pub mod losses;
pub mod oracle;
pub mod tabular;

use rand::RngCore;
use thiserror::Error;

use crate::flow::{AtomMask, Coords};
use crate::graph::{EdgeCodec, EdgeLabel, NodeState, ReactionGraph};

pub use oracle::{OracleDenoiser, OracleMode};
pub use tabular::TabularDenoiser;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DenoiserError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("no dataset molecule is consistent with the observed entries")]
    NoConsistentRecord,
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("{0}")]
    Other(String),
}

/// Inputs to one denoiser call at time `t`.
pub struct DenoiserInput<'a> {
    pub graph: &'a ReactionGraph,
    /// `C̃_t`, centered on the visibility mask.
    pub coords: &'a Coords,
    /// `S_t`
    pub visibility: &'a AtomMask,
    pub t: f64,
    /// The trajectory's prior sample `C1`, when the caller tracks one.
    pub prior: Option<&'a Coords>,
}

/// Node probabilities `n × B`, edge probabilities `n × n × (K + 1)` with the
/// no-edge channel last, and predicted clean coordinates in the shifted frame.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserOutput {
    n: usize,
    blocks: usize,
    channels: usize,
    node_probs: Vec<f64>,
    edge_probs: Vec<f64>,
    pub coords: Coords,
}

impl DenoiserOutput {
    /// Uniform rows everywhere, zero coordinates.
    pub fn uniform(n: usize, blocks: usize, channels: usize, m: usize) -> Self {
        DenoiserOutput {
            n,
            blocks,
            channels,
            node_probs: vec![1.0 / blocks as f64; n * blocks],
            edge_probs: vec![1.0 / channels as f64; n * n * channels],
            coords: Coords::zeros(n, m),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks
    }

    /// `K + 1`: concrete channels plus no-edge.
    pub fn edge_channels(&self) -> usize {
        self.channels
    }

    pub fn no_edge(&self) -> usize {
        self.channels - 1
    }

    pub fn node_row(&self, i: usize) -> &[f64] {
        &self.node_probs[i * self.blocks..(i + 1) * self.blocks]
    }

    pub fn node_row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.node_probs[i * self.blocks..(i + 1) * self.blocks]
    }

    pub fn edge_row(&self, i: usize, j: usize) -> &[f64] {
        let k = (i * self.n + j) * self.channels;
        &self.edge_probs[k..k + self.channels]
    }

    pub fn edge_row_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let k = (i * self.n + j) * self.channels;
        &mut self.edge_probs[k..k + self.channels]
    }

    /// Writes `row` to `(i, j)` and its mirror.
    pub fn set_edge_row(&mut self, i: usize, j: usize, row: &[f64]) {
        self.edge_row_mut(i, j).copy_from_slice(row);
        self.edge_row_mut(j, i).copy_from_slice(row);
    }

    pub fn set_node_one_hot(&mut self, i: usize, b: usize) {
        let row = self.node_row_mut(i);
        row.fill(0.0);
        row[b] = 1.0;
    }

    pub fn set_edge_one_hot(&mut self, i: usize, j: usize, channel: usize) {
        for (a, b) in [(i, j), (j, i)] {
            let row = self.edge_row_mut(a, b);
            row.fill(0.0);
            row[channel] = 1.0;
        }
    }

    /// Makes every unmasked entry of `graph` a point mass on its observed value.
    pub fn enforce_carry_over(&mut self, graph: &ReactionGraph, codec: &EdgeCodec) {
        for i in 0..self.n {
            if let NodeState::Block(b) = graph.node(i) {
                self.set_node_one_hot(i, b);
            }
        }
        for i in 0..self.n {
            self.set_edge_one_hot(i, i, self.no_edge());
            for j in i + 1..self.n {
                let e = graph.edge(i, j);
                if !e.is_mask() {
                    let c = codec.encode(e).expect("label fits codec");
                    self.set_edge_one_hot(i, j, c);
                }
            }
        }
    }

    /// Argmax labels; ties resolve to the lowest index.
    pub fn argmax_graph(&self, codec: &EdgeCodec) -> ReactionGraph {
        let mut g = ReactionGraph::empty(self.n);
        for i in 0..self.n {
            g.set_node(i, NodeState::Block(argmax(self.node_row(i))));
        }
        for i in 0..self.n {
            for j in i + 1..self.n {
                let c = argmax(self.edge_row(i, j));
                let label = if c == self.no_edge() {
                    EdgeLabel::NoEdge
                } else {
                    codec.decode(c).expect("channel in range")
                };
                g.set_edge(i, j, label);
            }
        }
        g
    }
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

pub trait Denoiser: Send + Sync {
    fn denoise(&self, input: &DenoiserInput<'_>, rng: &mut dyn RngCore) -> Result<DenoiserOutput, DenoiserError>;
}

/// Uniform rows on every masked entry and the current coordinates as the
/// clean estimate. A baseline with no learned structure.
#[derive(Debug, Clone)]
pub struct UniformDenoiser {
    pub blocks: usize,
    pub codec: EdgeCodec,
}

impl UniformDenoiser {
    pub fn for_vocab(vocab: &crate::vocabulary::Vocabulary) -> Self {
        UniformDenoiser {
            blocks: vocab.num_blocks(),
            codec: EdgeCodec::for_vocab(vocab),
        }
    }
}

impl Denoiser for UniformDenoiser {
    fn denoise(&self, input: &DenoiserInput<'_>, _: &mut dyn RngCore) -> Result<DenoiserOutput, DenoiserError> {
        let n = input.graph.n();
        let mut out = DenoiserOutput::uniform(n, self.blocks, self.codec.concrete() + 1, input.coords.m());
        out.enforce_carry_over(input.graph, &self.codec);
        out.coords = input.coords.clone();
        Ok(out)
    }
}

/// Wraps a denoiser and rejects outputs that break zero-masking, carry-over,
/// simplex rows or edge symmetry.
pub struct ContractChecked<D> {
    pub inner: D,
    pub codec: EdgeCodec,
    pub blocks: usize,
}

const ROW_TOL: f64 = 1e-6;

impl<D: Denoiser> ContractChecked<D> {
    pub fn new(inner: D, blocks: usize, codec: EdgeCodec) -> Self {
        ContractChecked { inner, codec, blocks }
    }
}

impl<D: Denoiser> Denoiser for ContractChecked<D> {
    fn denoise(&self, input: &DenoiserInput<'_>, rng: &mut dyn RngCore) -> Result<DenoiserOutput, DenoiserError> {
        let out = self.inner.denoise(input, rng)?;
        check_contract(&out, input.graph, self.blocks, &self.codec)?;
        Ok(out)
    }
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn denoise(&self, input: &DenoiserInput<'_>, rng: &mut dyn RngCore) -> Result<DenoiserOutput, DenoiserError> {
        (**self).denoise(input, rng)
    }
}

impl<D: Denoiser + ?Sized> Denoiser for Box<D> {
    fn denoise(&self, input: &DenoiserInput<'_>, rng: &mut dyn RngCore) -> Result<DenoiserOutput, DenoiserError> {
        (**self).denoise(input, rng)
    }
}

pub fn check_contract(
    out: &DenoiserOutput,
    graph: &ReactionGraph,
    blocks: usize,
    codec: &EdgeCodec,
) -> Result<(), DenoiserError> {
    let n = graph.n();
    if out.n != n || out.blocks != blocks || out.channels != codec.concrete() + 1 || out.coords.n() != n {
        return Err(DenoiserError::Shape(format!(
            "output n={} B={} channels={} for graph n={n}, B={blocks}, channels={}",
            out.n,
            out.blocks,
            out.channels,
            codec.concrete() + 1
        )));
    }
    let simplex = |row: &[f64]| {
        row.iter().all(|p| *p >= 0.0 && p.is_finite()) && (row.iter().sum::<f64>() - 1.0).abs() <= ROW_TOL
    };
    for i in 0..n {
        let row = out.node_row(i);
        if !simplex(row) {
            return Err(DenoiserError::Contract(format!("node row {i} is not a distribution")));
        }
        if let NodeState::Block(b) = graph.node(i) {
            if row[b] != 1.0 {
                return Err(DenoiserError::Contract(format!("carry-over violated at node {i}")));
            }
        }
    }
    for i in 0..n {
        for j in 0..n {
            let row = out.edge_row(i, j);
            if !simplex(row) {
                return Err(DenoiserError::Contract(format!(
                    "edge row ({i}, {j}) is not a distribution"
                )));
            }
            if row != out.edge_row(j, i) {
                return Err(DenoiserError::Contract(format!("edge rows ({i}, {j}) not symmetric")));
            }
            let e = graph.edge(i, j);
            if i != j && !e.is_mask() {
                let c = codec.encode(e).map_err(|e| DenoiserError::Contract(e.to_string()))?;
                if row[c] != 1.0 {
                    return Err(DenoiserError::Contract(format!(
                        "carry-over violated at edge ({i}, {j})"
                    )));
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Uniform {
        carry: bool,
    }

    impl Denoiser for Uniform {
        fn denoise(&self, input: &DenoiserInput<'_>, _: &mut dyn RngCore) -> Result<DenoiserOutput, DenoiserError> {
            let codec = EdgeCodec::new(1, 1);
            let mut out = DenoiserOutput::uniform(input.graph.n(), 2, 2, 1);
            if self.carry {
                out.enforce_carry_over(input.graph, &codec);
            }
            Ok(out)
        }
    }

    #[test]
    fn wrapper_detects_missing_carry_over() {
        let g = ReactionGraph::from_parts(vec![0, 1], &[(0, 1, EdgeLabel::concrete(0, 0, 0))]);
        let c = Coords::zeros(2, 1);
        let s = AtomMask::ones(2, 1);
        let input = DenoiserInput {
            graph: &g,
            coords: &c,
            visibility: &s,
            t: 0.5,
            prior: None,
        };
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let bad = ContractChecked::new(Uniform { carry: false }, 2, EdgeCodec::new(1, 1));
        assert!(matches!(bad.denoise(&input, &mut rng), Err(DenoiserError::Contract(_))));
        let good = ContractChecked::new(Uniform { carry: true }, 2, EdgeCodec::new(1, 1));
        assert!(good.denoise(&input, &mut rng).is_ok());
    }
}
