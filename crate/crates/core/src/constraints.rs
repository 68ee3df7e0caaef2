//! Logit constraints on denoiser outputs and single-parent edge pruning.
//!
//! Constraints are applied in the order: diagonal no-edge, edge-count limit,
//! compatibility mask. [`Completer`] additionally answers whether a partial
//! graph can still be completed to a valid single-parent tree; the constrained
//! sampler uses it to restrict each draw.

use std::collections::HashSet;

use log::warn;
use rand::Rng;
use thiserror::Error;

use crate::denoiser::DenoiserOutput;
use crate::diffusion::sample_categorical;
use crate::graph::{EdgeCodec, EdgeLabel, NodeState, ReactionGraph};
use crate::vocabulary::{bits, BlockId, Side, Vocabulary};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConstraintError {
    #[error("{placed} edges placed among {n} blocks, at most {max} allowed")]
    TooManyEdges { placed: usize, n: usize, max: usize },
    #[error("column {0} has no probability mass on any parent")]
    EmptyColumn(usize),
}

/// Counts of rows that fell back because every channel was masked out.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Fallbacks {
    pub nodes: usize,
    pub edges: usize,
}

pub fn apply_diagonal_no_edge(out: &mut DenoiserOutput) {
    for i in 0..out.n() {
        let ne = out.no_edge();
        let row = out.edge_row_mut(i, i);
        row.fill(0.0);
        row[ne] = 1.0;
    }
}

/// Concrete edges already placed on the upper triangle.
pub fn placed_edges(g: &ReactionGraph) -> usize {
    g.concrete_edges().count()
}

/// Forces every masked edge to no-edge once `n − 1` edges are placed.
pub fn apply_edge_count_limit(out: &mut DenoiserOutput, e_t: &ReactionGraph, n: usize) -> Result<(), ConstraintError> {
    let placed = e_t
        .upper()
        .filter(|&(i, j, e)| i < n && j < n && e.is_concrete())
        .count();
    let max = n.saturating_sub(1);
    if placed > max {
        return Err(ConstraintError::TooManyEdges { placed, n, max });
    }
    if placed == max {
        let ne = out.no_edge();
        for i in 0..n {
            for j in i + 1..n {
                if e_t.edge(i, j).is_mask() {
                    out.set_edge_one_hot(i, j, ne);
                }
            }
        }
    }
    Ok(())
}

/// Zeroes node and edge channels that contradict denoised neighbors.
pub fn apply_compatibility_mask(
    out: &mut DenoiserOutput,
    g: &ReactionGraph,
    vocab: &Vocabulary,
    codec: &EdgeCodec,
) -> Fallbacks {
    let n = g.n();
    let nb = vocab.num_blocks();
    let mut fallbacks = Fallbacks::default();

    // Denoised edges constrain masked endpoints.
    let mut allowed = vec![vec![true; nb]; n];
    for (i, j, r, vi, vj) in g.concrete_edges() {
        if g.node(i).is_mask() {
            for (b, ok) in allowed[i].iter_mut().enumerate() {
                *ok &= vocab.matches(r, Side::A, b, vi);
            }
        }
        if g.node(j).is_mask() {
            for (b, ok) in allowed[j].iter_mut().enumerate() {
                *ok &= vocab.matches(r, Side::B, b, vj);
            }
        }
    }
    for i in 0..n {
        if !g.node(i).is_mask() {
            continue;
        }
        let row = out.node_row_mut(i);
        if mask_row(row, |b| allowed[i][b]) {
            warn!("node {i}: every block excluded by compatibility; falling back to uniform");
            row.fill(1.0 / nb as f64);
            fallbacks.nodes += 1;
        }
    }

    // Denoised nodes constrain masked edges.
    let ne = out.no_edge();
    for i in 0..n {
        for j in i + 1..n {
            if !g.edge(i, j).is_mask() {
                continue;
            }
            let (bi, bj) = (g.node(i).block(), g.node(j).block());
            if bi.is_none() && bj.is_none() {
                continue;
            }
            let ok = |c: usize| {
                if c == ne {
                    return true;
                }
                let EdgeLabel::Concrete {
                    reaction,
                    center_i,
                    center_j,
                } = codec.decode(c).expect("channel in range")
                else {
                    return false;
                };
                bi.is_none_or(|b| vocab.matches(reaction, Side::A, b, center_i))
                    && bj.is_none_or(|b| vocab.matches(reaction, Side::B, b, center_j))
            };
            let mut row = out.edge_row(i, j).to_vec();
            if mask_row(&mut row, ok) {
                warn!("edge ({i}, {j}): every channel excluded by compatibility; falling back to no-edge");
                row.fill(0.0);
                row[ne] = 1.0;
                fallbacks.edges += 1;
            }
            out.set_edge_row(i, j, &row);
        }
    }
    fallbacks
}

// Zeroes disallowed entries and renormalizes only if something changed.
// Returns true when no mass survives.
fn mask_row(row: &mut [f64], allowed: impl Fn(usize) -> bool) -> bool {
    let mut changed = false;
    for (k, p) in row.iter_mut().enumerate() {
        if *p != 0.0 && !allowed(k) {
            *p = 0.0;
            changed = true;
        }
    }
    let total: f64 = row.iter().sum();
    if !(total > 0.0) {
        return true;
    }
    if changed {
        for p in row.iter_mut() {
            *p /= total;
        }
    }
    false
}

/// Applies all three constraints in order.
pub fn apply_all(
    out: &mut DenoiserOutput,
    g: &ReactionGraph,
    vocab: &Vocabulary,
    codec: &EdgeCodec,
) -> Result<Fallbacks, ConstraintError> {
    apply_diagonal_no_edge(out);
    apply_edge_count_limit(out, g, g.n())?;
    Ok(apply_compatibility_mask(out, g, vocab, codec))
}

/// One parent `(i, channel)` per column `j ≥ 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrunedEdges {
    pub n: usize,
    pub channels: usize,
    pub parents: Vec<Option<(usize, usize)>>,
}

impl PrunedEdges {
    /// Upper-triangle tensor with exactly one unit entry per column `j ≥ 1`.
    pub fn dense(&self) -> Vec<f64> {
        let mut t = vec![0.0; self.n * self.n * self.channels];
        for (j, p) in self.parents.iter().enumerate() {
            if let Some((i, c)) = p {
                t[(i * self.n + j) * self.channels + c] = 1.0;
            }
        }
        t
    }

    /// Edge rows for the reverse step: the selected channel at each chosen
    /// pair, no-edge everywhere else, mirrored.
    pub fn apply_to(&self, out: &mut DenoiserOutput) {
        let ne = out.no_edge();
        for i in 0..self.n {
            for j in 0..self.n {
                out.set_edge_one_hot(i, j, ne);
            }
        }
        for (j, p) in self.parents.iter().enumerate() {
            if let Some((i, c)) = *p {
                out.set_edge_one_hot(i, j, c);
            }
        }
    }
}

/// Draws one parent and channel per column from the joint over `i < j` and
/// concrete channels.
pub fn sample_edges<R: Rng + ?Sized>(
    out: &DenoiserOutput,
    n: usize,
    rng: &mut R,
) -> Result<PrunedEdges, ConstraintError> {
    let k = out.no_edge();
    let mut parents = vec![None; n];
    let mut weights = Vec::new();
    for (j, parent) in parents.iter_mut().enumerate().skip(1) {
        weights.clear();
        for i in 0..j {
            weights.extend_from_slice(&out.edge_row(i, j)[..k]);
        }
        let pick = sample_categorical(&weights, rng).ok_or(ConstraintError::EmptyColumn(j))?;
        *parent = Some((pick / k, pick % k));
    }
    Ok(PrunedEdges {
        n,
        channels: out.edge_channels(),
        parents,
    })
}

/// Decides whether a partial graph extends to a valid single-parent tree:
/// every column `j ≥ 1` has exactly one concrete edge from some `i < j`,
/// every edge is compatible, and no center is used twice.
pub struct Completer<'a> {
    vocab: &'a Vocabulary,
    budget: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Completion {
    Yes,
    No,
    /// The search budget ran out before an answer was found.
    Unknown,
}

struct Search<'a> {
    vocab: &'a Vocabulary,
    g: &'a ReactionGraph,
    n: usize,
    blocks: Vec<Option<BlockId>>,
    occupied: Vec<u64>,
    fixed_parent: Vec<Option<(usize, usize, usize, usize)>>,
    candidates: Vec<Vec<usize>>,
    failed: HashSet<(usize, Vec<(BlockId, u64)>)>,
    expansions: usize,
    budget: usize,
}

impl<'a> Completer<'a> {
    pub fn new(vocab: &'a Vocabulary) -> Self {
        Completer { vocab, budget: 200_000 }
    }

    pub fn with_budget(vocab: &'a Vocabulary, budget: usize) -> Self {
        Completer { vocab, budget }
    }

    pub fn check(&self, g: &ReactionGraph) -> Completion {
        let n = g.n();
        if n == 0 {
            return Completion::No;
        }
        let mut fixed_parent = vec![None; n];
        let mut candidates = vec![Vec::new(); n];
        let mut reserved = vec![0u64; n];
        for j in 1..n {
            for i in 0..j {
                match g.edge(i, j) {
                    EdgeLabel::Concrete {
                        reaction,
                        center_i,
                        center_j,
                    } => {
                        if fixed_parent[j].is_some() || center_i >= 64 || center_j >= 64 {
                            return Completion::No;
                        }
                        fixed_parent[j] = Some((i, reaction, center_i, center_j));
                        for (slot, v) in [(i, center_i), (j, center_j)] {
                            if reserved[slot] & (1 << v) != 0 {
                                return Completion::No;
                            }
                            reserved[slot] |= 1 << v;
                        }
                    }
                    EdgeLabel::Mask => candidates[j].push(i),
                    EdgeLabel::NoEdge => {}
                }
            }
            if fixed_parent[j].is_none() && candidates[j].is_empty() {
                return Completion::No;
            }
        }
        // A denoised node must carry the centers its fixed edges name.
        for j in 0..n {
            if let Some(b) = g.node(j).block() {
                if b >= self.vocab.num_blocks() {
                    return Completion::No;
                }
                if !fits_fixed(self.vocab, &fixed_parent, j, b) {
                    return Completion::No;
                }
            }
        }
        let mut s = Search {
            vocab: self.vocab,
            g,
            n,
            blocks: vec![None; n],
            occupied: reserved,
            fixed_parent,
            candidates,
            failed: HashSet::new(),
            expansions: 0,
            budget: self.budget,
        };
        match s.assign(0) {
            Some(true) => Completion::Yes,
            Some(false) => Completion::No,
            None => Completion::Unknown,
        }
    }
}

impl Search<'_> {
    // Some(true) found, Some(false) exhausted, None out of budget.
    fn assign(&mut self, j: usize) -> Option<bool> {
        if j == self.n {
            return Some(true);
        }
        self.expansions += 1;
        if self.expansions > self.budget {
            return None;
        }
        let key = (
            j,
            (0..j)
                .map(|i| (self.blocks[i].expect("assigned"), self.occupied[i]))
                .collect::<Vec<_>>(),
        );
        if self.failed.contains(&key) {
            return Some(false);
        }
        let options: Vec<BlockId> = match self.g.node(j) {
            NodeState::Block(b) => vec![b],
            NodeState::Mask => (0..self.vocab.num_blocks())
                .filter(|&b| fits_fixed(self.vocab, &self.fixed_parent, j, b))
                .collect(),
        };
        let mut seen_signature = HashSet::new();
        for b in options {
            // Blocks with identical matching behavior lead to identical subtrees.
            if self.g.node(j).is_mask() && !seen_signature.insert(self.signature(b)) {
                continue;
            }
            self.blocks[j] = Some(b);
            let res = if j == 0 { self.assign(1) } else { self.attach(j, b) };
            self.blocks[j] = None;
            match res {
                Some(true) => return Some(true),
                None => return None,
                Some(false) => {}
            }
        }
        self.failed.insert(key);
        Some(false)
    }

    fn attach(&mut self, j: usize, b: BlockId) -> Option<bool> {
        if let Some((i, r, vi, vj)) = self.fixed_parent[j] {
            let bi = self.blocks[i].expect("parent assigned");
            if !self.vocab.matches(r, Side::A, bi, vi) || !self.vocab.matches(r, Side::B, b, vj) {
                return Some(false);
            }
            return self.assign(j + 1);
        }
        let mut tried = HashSet::new();
        for idx in 0..self.candidates[j].len() {
            let i = self.candidates[j][idx];
            let bi = self.blocks[i].expect("parent assigned");
            for r in 0..self.vocab.num_reactions() {
                let free_i = self.vocab.center_mask(r, Side::A, bi) & !self.occupied[i];
                let free_j = self.vocab.center_mask(r, Side::B, b) & !self.occupied[j];
                for vi in bits(free_i) {
                    for vj in bits(free_j) {
                        if !tried.insert((i, vi, vj)) {
                            continue;
                        }
                        self.occupied[i] |= 1 << vi;
                        self.occupied[j] |= 1 << vj;
                        let res = self.assign(j + 1);
                        self.occupied[i] &= !(1 << vi);
                        self.occupied[j] &= !(1 << vj);
                        match res {
                            Some(false) => {}
                            other => return other,
                        }
                    }
                }
            }
        }
        Some(false)
    }

    fn signature(&self, b: BlockId) -> Vec<(u64, u64)> {
        (0..self.vocab.num_reactions())
            .map(|r| {
                (
                    self.vocab.center_mask(r, Side::A, b),
                    self.vocab.center_mask(r, Side::B, b),
                )
            })
            .collect()
    }
}

// Whether block `b` at slot `j` matches every fixed edge incident to `j`.
fn fits_fixed(vocab: &Vocabulary, fixed_parent: &[Option<(usize, usize, usize, usize)>], j: usize, b: BlockId) -> bool {
    fixed_parent.iter().enumerate().all(|(k, fp)| match *fp {
        Some((i, r, vi, vk)) => {
            (i != j || vocab.matches(r, Side::A, b, vi)) && (k != j || vocab.matches(r, Side::B, b, vk))
        }
        None => true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy() -> Vocabulary {
        Vocabulary::from_toml_str(include_str!("../data/toy.toml")).unwrap()
    }

    fn uniform(v: &Vocabulary, n: usize) -> (DenoiserOutput, EdgeCodec) {
        let codec = EdgeCodec::for_vocab(v);
        (
            DenoiserOutput::uniform(n, v.num_blocks(), codec.concrete() + 1, v.max_atoms()),
            codec,
        )
    }

    #[test]
    fn diagonal_constraint() {
        let v = toy();
        let (mut out, _) = uniform(&v, 3);
        let before = out.clone();
        apply_diagonal_no_edge(&mut out);
        for i in 0..3 {
            assert_eq!(out.edge_row(i, i)[out.no_edge()], 1.0);
            for j in 0..3 {
                if i != j {
                    assert_eq!(out.edge_row(i, j), before.edge_row(i, j));
                }
            }
        }
        let once = out.clone();
        apply_diagonal_no_edge(&mut out);
        assert_eq!(out, once);
    }

    #[test]
    fn count_limit() {
        let v = toy();
        let (mut out, _) = uniform(&v, 3);
        let mut g = ReactionGraph::fully_masked(3);
        g.set_edge(0, 1, EdgeLabel::concrete(0, 0, 0));
        let before = out.clone();
        apply_edge_count_limit(&mut out, &g, 3).unwrap();
        assert_eq!(out, before);
        g.set_edge(1, 2, EdgeLabel::concrete(0, 0, 0));
        apply_edge_count_limit(&mut out, &g, 3).unwrap();
        assert_eq!(out.edge_row(0, 2)[out.no_edge()], 1.0);
        assert_eq!(out.edge_row(0, 1), before.edge_row(0, 1));
        g.set_edge(0, 2, EdgeLabel::concrete(0, 0, 0));
        assert!(apply_edge_count_limit(&mut out, &g, 3).is_err());
    }

    #[test]
    fn compatibility_forces_carrier() {
        // Reaction 1 (amide) with reagent B center 0: blocks 1 ("amine" is
        // center 1), 2 (center 1) and 3 (center 0). Only block 3 carries an
        // amine at center 0.
        let v = toy();
        let (mut out, codec) = uniform(&v, 2);
        let mut g = ReactionGraph::fully_masked(2);
        g.set_node(0, NodeState::Block(4));
        g.set_edge(0, 1, EdgeLabel::concrete(1, 0, 0));
        apply_compatibility_mask(&mut out, &g, &v, &codec);
        assert_eq!(out.node_row(1), &[0.0, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn compatibility_zeroes_out_of_range_centers() {
        let v = toy();
        let (mut out, codec) = uniform(&v, 2);
        let mut g = ReactionGraph::fully_masked(2);
        g.set_node(1, NodeState::Block(3));
        apply_compatibility_mask(&mut out, &g, &v, &codec);
        for c in 0..codec.concrete() {
            if out.edge_row(0, 1)[c] > 0.0 {
                let EdgeLabel::Concrete { center_j, .. } = codec.decode(c).unwrap() else {
                    unreachable!()
                };
                assert_eq!(center_j, 0);
            }
        }
        let once = out.clone();
        apply_compatibility_mask(&mut out, &g, &v, &codec);
        assert_eq!(out, once);
    }

    #[test]
    fn sample_edges_two_nodes() {
        let v = toy();
        let (out, _) = uniform(&v, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = sample_edges(&out, 2, &mut rng).unwrap();
        assert_eq!(p.parents[0], None);
        assert_eq!(p.parents[1].unwrap().0, 0);
        let dense = p.dense();
        assert_eq!(dense.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn completer_detects_dead_ends() {
        let v = toy();
        let c = Completer::new(&v);
        assert_eq!(c.check(&ReactionGraph::fully_masked(3)), Completion::Yes);
        // Morpholine has a single amine; two children cannot both use it.
        let mut g = ReactionGraph::fully_masked(3);
        g.set_node(0, NodeState::Block(3));
        assert_eq!(c.check(&g), Completion::No);
        // Acetic acid can host exactly one child.
        let mut g = ReactionGraph::fully_masked(3);
        g.set_node(0, NodeState::Block(4));
        g.set_edge(0, 2, EdgeLabel::NoEdge);
        g.set_edge(1, 2, EdgeLabel::NoEdge);
        assert_eq!(c.check(&g), Completion::No);
    }
}
