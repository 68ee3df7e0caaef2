//! Block-level reaction graphs, the edge-label codec and atom-level assembly.
//!
//! Edges are stored for `i < j` with reagent A on the lower index; the lower
//! triangle mirrors the same label. Graphs are held densely at their own block
//! count `n`; padding rows are implicit.

use std::collections::VecDeque;

use thiserror::Error;

use crate::vocabulary::{AtomSpec, BlockId, BondOrder, BuildingBlock, CenterId, ReactionId, Side, Vocabulary};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("edge label component out of range: {0}")]
    EdgeOutOfRange(String),
    #[error("categorical index {index} outside [0, {size})")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("atom {atom} has degree {degree}, expected exactly 1")]
    DegreeNotOne { atom: usize, degree: usize },
    #[error("atom {0} does not exist")]
    NoSuchAtom(usize),
    #[error("slot {0} does not exist")]
    NoSuchSlot(usize),
    #[error("center {center} on slot {slot} is already occupied")]
    Occupied { slot: usize, center: CenterId },
    #[error("incompatible coupling: {0}")]
    Incompatible(String),
    #[error("graph is not fully denoised")]
    NotDenoised,
    #[error("graph is disconnected")]
    Disconnected,
    #[error("graph contains a cycle")]
    Cycle,
    #[error("graph is empty")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EdgeLabel {
    Concrete {
        reaction: ReactionId,
        center_i: CenterId,
        center_j: CenterId,
    },
    NoEdge,
    Mask,
}

impl EdgeLabel {
    pub fn concrete(reaction: ReactionId, center_i: CenterId, center_j: CenterId) -> Self {
        EdgeLabel::Concrete {
            reaction,
            center_i,
            center_j,
        }
    }

    pub fn is_mask(self) -> bool {
        matches!(self, EdgeLabel::Mask)
    }

    pub fn is_concrete(self) -> bool {
        matches!(self, EdgeLabel::Concrete { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeState {
    Block(BlockId),
    Mask,
}

impl NodeState {
    pub fn block(self) -> Option<BlockId> {
        match self {
            NodeState::Block(b) => Some(b),
            NodeState::Mask => None,
        }
    }

    pub fn is_mask(self) -> bool {
        matches!(self, NodeState::Mask)
    }
}

/// Channel layout for edges: `r·V² + v_i·V + v_j`, then no-edge, then mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EdgeCodec {
    pub reactions: usize,
    pub max_centers: usize,
}

impl EdgeCodec {
    pub fn new(reactions: usize, max_centers: usize) -> Self {
        EdgeCodec { reactions, max_centers }
    }

    pub fn for_vocab(vocab: &Vocabulary) -> Self {
        Self::new(vocab.num_reactions(), vocab.max_centers())
    }

    /// Number of concrete channels, `R·V_max²`.
    pub fn concrete(&self) -> usize {
        self.reactions * self.max_centers * self.max_centers
    }

    pub fn no_edge(&self) -> usize {
        self.concrete()
    }

    pub fn mask(&self) -> usize {
        self.concrete() + 1
    }

    /// Full channel count including no-edge and mask.
    pub fn size(&self) -> usize {
        self.concrete() + 2
    }

    pub fn encode(&self, label: EdgeLabel) -> Result<usize, GraphError> {
        match label {
            EdgeLabel::Concrete {
                reaction,
                center_i,
                center_j,
            } => {
                let v = self.max_centers;
                if reaction >= self.reactions || center_i >= v || center_j >= v {
                    return Err(GraphError::EdgeOutOfRange(format!(
                        "({reaction}, {center_i}, {center_j}) with R={}, V_max={v}",
                        self.reactions
                    )));
                }
                Ok(reaction * v * v + center_i * v + center_j)
            }
            EdgeLabel::NoEdge => Ok(self.no_edge()),
            EdgeLabel::Mask => Ok(self.mask()),
        }
    }

    pub fn decode(&self, index: usize) -> Result<EdgeLabel, GraphError> {
        let k = self.concrete();
        if index < k {
            let v = self.max_centers;
            Ok(EdgeLabel::concrete(index / (v * v), (index / v) % v, index % v))
        } else if index == k {
            Ok(EdgeLabel::NoEdge)
        } else if index == k + 1 {
            Ok(EdgeLabel::Mask)
        } else {
            Err(GraphError::IndexOutOfRange {
                index,
                size: self.size(),
            })
        }
    }
}

pub fn encode_edge(label: EdgeLabel, reactions: usize, max_centers: usize) -> Result<usize, GraphError> {
    EdgeCodec::new(reactions, max_centers).encode(label)
}

pub fn decode_edge(index: usize, reactions: usize, max_centers: usize) -> Result<EdgeLabel, GraphError> {
    EdgeCodec::new(reactions, max_centers).decode(index)
}

/// Node channels: block ids, then the mask token at index `B`.
pub fn encode_node(state: NodeState, blocks: usize) -> Result<usize, GraphError> {
    match state {
        NodeState::Block(b) if b < blocks => Ok(b),
        NodeState::Block(b) => Err(GraphError::IndexOutOfRange { index: b, size: blocks }),
        NodeState::Mask => Ok(blocks),
    }
}

pub fn decode_node(index: usize, blocks: usize) -> Result<NodeState, GraphError> {
    match index {
        i if i < blocks => Ok(NodeState::Block(i)),
        i if i == blocks => Ok(NodeState::Mask),
        i => Err(GraphError::IndexOutOfRange {
            index: i,
            size: blocks + 1,
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ReactionGraph {
    n: usize,
    nodes: Vec<NodeState>,
    edges: Vec<EdgeLabel>,
}

impl ReactionGraph {
    /// A graph with `n` nodes and no edges.
    pub fn empty(n: usize) -> Self {
        ReactionGraph {
            n,
            nodes: vec![NodeState::Mask; n],
            edges: vec![EdgeLabel::NoEdge; n * n],
        }
    }

    /// Every node and off-diagonal edge masked; diagonal is no-edge.
    pub fn fully_masked(n: usize) -> Self {
        let mut g = Self::empty(n);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    g.edges[i * n + j] = EdgeLabel::Mask;
                }
            }
        }
        g
    }

    pub fn from_parts(nodes: Vec<BlockId>, edges: &[(usize, usize, EdgeLabel)]) -> Self {
        let mut g = Self::empty(nodes.len());
        for (i, b) in nodes.into_iter().enumerate() {
            g.nodes[i] = NodeState::Block(b);
        }
        for &(i, j, e) in edges {
            g.set_edge(i, j, e);
        }
        g
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn node(&self, i: usize) -> NodeState {
        self.nodes[i]
    }

    pub fn nodes(&self) -> &[NodeState] {
        &self.nodes
    }

    pub fn set_node(&mut self, i: usize, state: NodeState) {
        self.nodes[i] = state;
    }

    pub fn edge(&self, i: usize, j: usize) -> EdgeLabel {
        self.edges[i * self.n + j]
    }

    /// Sets `(i, j)` and its mirror.
    pub fn set_edge(&mut self, i: usize, j: usize, label: EdgeLabel) {
        self.edges[i * self.n + j] = label;
        self.edges[j * self.n + i] = label;
    }

    /// Sets a single directed entry without touching the mirror.
    pub fn set_entry(&mut self, i: usize, j: usize, label: EdgeLabel) {
        self.edges[i * self.n + j] = label;
    }

    /// Copies every upper-triangle entry onto its lower-triangle mirror.
    pub fn symmetrize(&mut self) {
        for i in 0..self.n {
            for j in i + 1..self.n {
                self.edges[j * self.n + i] = self.edges[i * self.n + j];
            }
        }
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..self.n).all(|j| self.edge(i, j) == self.edge(j, i)))
    }

    /// Upper-triangle entries `(i, j, label)` with `i < j`.
    pub fn upper(&self) -> impl Iterator<Item = (usize, usize, EdgeLabel)> + '_ {
        (0..self.n).flat_map(move |i| (i + 1..self.n).map(move |j| (i, j, self.edge(i, j))))
    }

    /// Upper-triangle concrete edges.
    pub fn concrete_edges(&self) -> impl Iterator<Item = (usize, usize, ReactionId, CenterId, CenterId)> + '_ {
        self.upper().filter_map(|(i, j, e)| match e {
            EdgeLabel::Concrete {
                reaction,
                center_i,
                center_j,
            } => Some((i, j, reaction, center_i, center_j)),
            _ => None,
        })
    }

    pub fn is_fully_denoised(&self) -> bool {
        self.nodes.iter().all(|x| !x.is_mask()) && self.upper().all(|(_, _, e)| !e.is_mask())
    }

    pub fn blocks(&self) -> Option<Vec<BlockId>> {
        self.nodes.iter().map(|x| x.block()).collect()
    }

    /// Masked entries counted over nodes and the upper triangle.
    pub fn mask_count(&self) -> usize {
        self.nodes.iter().filter(|x| x.is_mask()).count() + self.upper().filter(|(_, _, e)| e.is_mask()).count()
    }
}

/// Symmetrizes a raw `n×n` label matrix in place.
pub fn symmetrize(edges: &mut [EdgeLabel], n: usize) {
    for i in 0..n {
        for j in i + 1..n {
            edges[j * n + i] = edges[i * n + j];
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AtomEntry {
    pub slot: usize,
    pub spec: AtomSpec,
}

#[derive(Debug, Clone, PartialEq)]
struct SlotInfo {
    block: BlockId,
    occupied: u64,
    local_to_atom: Vec<Option<usize>>,
}

/// Atom-level molecule with per-atom provenance `(slot, local index)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomGraph {
    atoms: Vec<AtomEntry>,
    bonds: Vec<(usize, usize, BondOrder)>,
    slots: Vec<SlotInfo>,
}

impl AtomGraph {
    /// Instantiates a single block as slot 0.
    pub fn seed(block: &BuildingBlock) -> Self {
        let mut g = AtomGraph {
            atoms: Vec::new(),
            bonds: Vec::new(),
            slots: Vec::new(),
        };
        g.append_block(block);
        g
    }

    fn append_block(&mut self, block: &BuildingBlock) -> usize {
        let slot = self.slots.len();
        let base = self.atoms.len();
        for a in &block.atoms {
            self.atoms.push(AtomEntry { slot, spec: a.clone() });
        }
        for &(a, b, o) in &block.bonds {
            self.bonds.push((base + a, base + b, o));
        }
        self.slots.push(SlotInfo {
            block: block.id,
            occupied: 0,
            local_to_atom: (0..block.atoms.len()).map(|k| Some(base + k)).collect(),
        });
        slot
    }

    pub fn atoms(&self) -> &[AtomEntry] {
        &self.atoms
    }

    pub fn bonds(&self) -> &[(usize, usize, BondOrder)] {
        &self.bonds
    }

    pub fn num_slots(&self) -> usize {
        self.slots.len()
    }

    pub fn slot_block(&self, slot: usize) -> BlockId {
        self.slots[slot].block
    }

    /// Bitmask of consumed centers on `slot`.
    pub fn occupied(&self, slot: usize) -> u64 {
        self.slots[slot].occupied
    }

    /// `(block, occupied mask)` per slot, the context for tuple enumeration.
    pub fn context(&self) -> Vec<(BlockId, u64)> {
        self.slots.iter().map(|s| (s.block, s.occupied)).collect()
    }

    /// Global atom index of `(slot, local)` if it survived assembly.
    pub fn atom_of(&self, slot: usize, local: usize) -> Option<usize> {
        self.slots.get(slot)?.local_to_atom.get(local).copied().flatten()
    }

    /// `(slot, local index)` of a global atom.
    pub fn provenance(&self, atom: usize) -> (usize, usize) {
        let a = &self.atoms[atom];
        (a.slot, a.spec.local_index)
    }

    pub fn degree(&self, atom: usize) -> usize {
        self.bonds.iter().filter(|&&(a, b, _)| a == atom || b == atom).count()
    }

    pub fn neighbors(&self, atom: usize) -> Vec<(usize, BondOrder)> {
        self.bonds
            .iter()
            .filter_map(|&(a, b, o)| {
                if a == atom {
                    Some((b, o))
                } else if b == atom {
                    Some((a, o))
                } else {
                    None
                }
            })
            .collect()
    }

    fn remove_atom(&mut self, atom: usize) {
        let (slot, local) = self.provenance(atom);
        self.atoms.remove(atom);
        self.bonds.retain(|&(a, b, _)| a != atom && b != atom);
        for bond in &mut self.bonds {
            if bond.0 > atom {
                bond.0 -= 1;
            }
            if bond.1 > atom {
                bond.1 -= 1;
            }
        }
        for s in &mut self.slots {
            for k in s.local_to_atom.iter_mut().flatten() {
                if *k > atom {
                    *k -= 1;
                }
            }
        }
        self.slots[slot].local_to_atom[local] = None;
    }

    /// Per-slot, per-local-atom survival mask (the atom-validity mask).
    pub fn survival_mask(&self) -> Vec<Vec<bool>> {
        self.slots
            .iter()
            .map(|s| s.local_to_atom.iter().map(Option::is_some).collect())
            .collect()
    }
}

/// The single neighbor of a degree-1 atom.
pub fn unique_neighbor(g: &AtomGraph, v: usize) -> Result<usize, GraphError> {
    if v >= g.atoms.len() {
        return Err(GraphError::NoSuchAtom(v));
    }
    let nb = g.neighbors(v);
    if nb.len() != 1 {
        return Err(GraphError::DegreeNotOne {
            atom: v,
            degree: nb.len(),
        });
    }
    Ok(nb[0].0)
}

/// Attaches `new_block` to slot `i`, with slot `i` acting as reagent A.
pub fn couple(
    g: &AtomGraph,
    i: usize,
    new_block: &BuildingBlock,
    reaction: ReactionId,
    vocab: &Vocabulary,
    center_i: CenterId,
    new_center: CenterId,
) -> Result<AtomGraph, GraphError> {
    couple_oriented(g, i, center_i, new_block, new_center, reaction, vocab, Side::A)
}

/// Attaches `new_block` to slot `existing`, which plays `existing_side` of the reaction.
#[allow(clippy::too_many_arguments)]
pub fn couple_oriented(
    g: &AtomGraph,
    existing: usize,
    existing_center: CenterId,
    new_block: &BuildingBlock,
    new_center: CenterId,
    reaction: ReactionId,
    vocab: &Vocabulary,
    existing_side: Side,
) -> Result<AtomGraph, GraphError> {
    if existing >= g.slots.len() {
        return Err(GraphError::NoSuchSlot(existing));
    }
    if reaction >= vocab.num_reactions() {
        return Err(GraphError::Incompatible(format!("unknown reaction {reaction}")));
    }
    let new_side = match existing_side {
        Side::A => Side::B,
        Side::B => Side::A,
    };
    let existing_block = g.slots[existing].block;
    if !vocab.matches(reaction, existing_side, existing_block, existing_center) {
        return Err(GraphError::Incompatible(format!(
            "block {existing_block} center {existing_center} does not match reaction {reaction} side {existing_side:?}"
        )));
    }
    if !vocab.matches(reaction, new_side, new_block.id, new_center) {
        return Err(GraphError::Incompatible(format!(
            "block {} center {new_center} does not match reaction {reaction} side {new_side:?}",
            new_block.id
        )));
    }
    if g.slots[existing].occupied & (1 << existing_center) != 0 {
        return Err(GraphError::Occupied {
            slot: existing,
            center: existing_center,
        });
    }
    let tpl = vocab.reaction(reaction);
    let mut out = g.clone();
    let new_slot = out.append_block(new_block);
    out.slots[existing].occupied |= 1 << existing_center;
    out.slots[new_slot].occupied |= 1 << new_center;

    let ex_local = vocab.block(existing_block).centers[existing_center].atom;
    let new_local = new_block.centers[new_center].atom;
    let ex_atom = out
        .atom_of(existing, ex_local)
        .ok_or_else(|| GraphError::Incompatible("center atom already removed".into()))?;
    let new_atom = out.atom_of(new_slot, new_local).expect("fresh block");

    // Resolve endpoints by provenance so removals do not invalidate them.
    let ex_end = endpoint(&out, ex_atom, tpl.leaving(existing_side))?;
    let new_end = endpoint(&out, new_atom, tpl.leaving(new_side))?;
    let ex_end = out.provenance(ex_end);
    let new_end = out.provenance(new_end);
    let mut removed = Vec::new();
    if tpl.leaving(existing_side) {
        removed.push(ex_atom);
    }
    if tpl.leaving(new_side) {
        removed.push(new_atom);
    }
    removed.sort_unstable_by(|a, b| b.cmp(a));
    for atom in removed {
        out.remove_atom(atom);
    }
    let a = out.atom_of(ex_end.0, ex_end.1).expect("endpoint survives");
    let b = out.atom_of(new_end.0, new_end.1).expect("endpoint survives");
    let bond = match existing_side {
        Side::A => (a, b, tpl.bond_order),
        Side::B => (b, a, tpl.bond_order),
    };
    out.bonds.push(bond);
    Ok(out)
}

fn endpoint(g: &AtomGraph, center_atom: usize, leaving: bool) -> Result<usize, GraphError> {
    if leaving {
        unique_neighbor(g, center_atom)
    } else {
        Ok(center_atom)
    }
}

/// Checks that the concrete edge `(i, j)` is compatible with the node blocks.
pub fn edge_compatible(
    vocab: &Vocabulary,
    block_i: BlockId,
    block_j: BlockId,
    reaction: ReactionId,
    center_i: CenterId,
    center_j: CenterId,
) -> bool {
    reaction < vocab.num_reactions()
        && block_i < vocab.num_blocks()
        && block_j < vocab.num_blocks()
        && vocab.matches(reaction, Side::A, block_i, center_i)
        && vocab.matches(reaction, Side::B, block_j, center_j)
}

/// Instantiates node 0 and couples along a BFS with ascending child order.
pub fn assemble_atom_graph(g: &ReactionGraph, vocab: &Vocabulary) -> Result<AtomGraph, GraphError> {
    let order = bfs_order(g, 0)?;
    assemble_in_order(g, vocab, &order)
}

/// BFS tree edges `(parent, child)` from `root`, children ascending.
pub fn bfs_order(g: &ReactionGraph, root: usize) -> Result<Vec<(usize, usize)>, GraphError> {
    let n = g.n();
    if n == 0 {
        return Err(GraphError::Empty);
    }
    if !g.is_fully_denoised() {
        return Err(GraphError::NotDenoised);
    }
    let edges = g.concrete_edges().count();
    let mut seen = vec![false; n];
    seen[root] = true;
    let mut queue = VecDeque::from([root]);
    let mut order = Vec::with_capacity(n.saturating_sub(1));
    while let Some(u) = queue.pop_front() {
        for w in 0..n {
            if w != u && g.edge(u, w).is_concrete() && !seen[w] {
                seen[w] = true;
                order.push((u, w));
                queue.push_back(w);
            }
        }
    }
    if order.len() + 1 != n {
        return Err(GraphError::Disconnected);
    }
    if edges != n - 1 {
        return Err(GraphError::Cycle);
    }
    Ok(order)
}

/// Assembles following an explicit list of tree edges `(placed, new)`.
///
/// Slot numbering of the returned atom graph follows the order in which nodes
/// are placed; use [`AtomGraph::num_slots`] with `placement` to map back.
pub fn assemble_in_order(
    g: &ReactionGraph,
    vocab: &Vocabulary,
    order: &[(usize, usize)],
) -> Result<AtomGraph, GraphError> {
    let blocks = g.blocks().ok_or(GraphError::NotDenoised)?;
    let root = order.first().map(|e| e.0).unwrap_or(0);
    let mut slot_of = vec![usize::MAX; g.n()];
    slot_of[root] = 0;
    let mut atoms = AtomGraph::seed(vocab.block(blocks[root]));
    for (k, &(u, w)) in order.iter().enumerate() {
        let EdgeLabel::Concrete {
            reaction,
            center_i,
            center_j,
        } = g.edge(u, w)
        else {
            return Err(GraphError::Disconnected);
        };
        let (ex_center, new_center, side) = if u < w {
            (center_i, center_j, Side::A)
        } else {
            (center_j, center_i, Side::B)
        };
        if !edge_compatible(vocab, blocks[u.min(w)], blocks[u.max(w)], reaction, center_i, center_j) {
            return Err(GraphError::Incompatible(format!("edge ({u}, {w})")));
        }
        atoms = couple_oriented(
            &atoms,
            slot_of[u],
            ex_center,
            vocab.block(blocks[w]),
            new_center,
            reaction,
            vocab,
            side,
        )?;
        slot_of[w] = k + 1;
    }
    // Renumber slots so that slot index equals graph node index.
    let mut out = atoms;
    out.relabel_slots(&slot_of);
    Ok(out)
}

impl AtomGraph {
    // `slot_of[node] = current slot`; afterwards slot index = node index.
    fn relabel_slots(&mut self, slot_of: &[usize]) {
        let mut node_of = vec![0; slot_of.len()];
        for (node, &slot) in slot_of.iter().enumerate() {
            node_of[slot] = node;
        }
        let mut slots = vec![None; slot_of.len()];
        for (s, info) in self.slots.drain(..).enumerate() {
            slots[node_of[s]] = Some(info);
        }
        self.slots = slots.into_iter().map(|s| s.expect("permutation")).collect();
        for a in &mut self.atoms {
            a.slot = node_of[a.slot];
        }
        // Keep atoms ordered by (slot, local index).
        let mut order: Vec<usize> = (0..self.atoms.len()).collect();
        order.sort_by_key(|&k| (self.atoms[k].slot, self.atoms[k].spec.local_index));
        let mut new_index = vec![0; order.len()];
        for (new, &old) in order.iter().enumerate() {
            new_index[old] = new;
        }
        self.atoms = order.iter().map(|&k| self.atoms[k].clone()).collect();
        for b in &mut self.bonds {
            b.0 = new_index[b.0];
            b.1 = new_index[b.1];
        }
        for s in &mut self.slots {
            for k in s.local_to_atom.iter_mut().flatten() {
                *k = new_index[*k];
            }
        }
        for b in &mut self.bonds {
            if b.0 > b.1 {
                std::mem::swap(&mut b.0, &mut b.1);
            }
        }
        self.bonds.sort();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ValidityFailure {
    NotDenoised,
    BlockOutOfRange,
    Disconnected,
    Cycle,
    WrongEdgeCount,
    Incompatible,
    CenterReused,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidityReport {
    pub fully_denoised: bool,
    pub spanning_tree: bool,
    pub compatible: bool,
    pub centers_unique: bool,
    pub failures: Vec<ValidityFailure>,
}

impl ValidityReport {
    pub fn is_valid(&self) -> bool {
        self.fully_denoised && self.spanning_tree && self.compatible && self.centers_unique
    }
}

pub fn check_validity(g: &ReactionGraph, vocab: &Vocabulary) -> ValidityReport {
    let mut failures = Vec::new();
    let n = g.n();
    let fully_denoised = g.is_fully_denoised();
    if !fully_denoised {
        failures.push(ValidityFailure::NotDenoised);
    }
    let in_range = g
        .nodes()
        .iter()
        .all(|x| x.block().is_none_or(|b| b < vocab.num_blocks()));
    if !in_range {
        failures.push(ValidityFailure::BlockOutOfRange);
    }

    let edges: Vec<_> = g.concrete_edges().collect();
    let mut uf = UnionFind::new(n);
    let mut cycle = false;
    for &(i, j, ..) in &edges {
        if !uf.union(i, j) {
            cycle = true;
        }
    }
    let connected = n > 0 && (1..n).all(|i| uf.find(i) == uf.find(0));
    if !connected {
        failures.push(ValidityFailure::Disconnected);
    }
    if cycle {
        failures.push(ValidityFailure::Cycle);
    }
    if n > 0 && edges.len() != n - 1 {
        failures.push(ValidityFailure::WrongEdgeCount);
    }
    let spanning_tree = connected && !cycle && n > 0 && edges.len() == n - 1;

    let mut compatible = in_range;
    let mut used = vec![0u64; n];
    let mut centers_unique = true;
    for &(i, j, r, vi, vj) in &edges {
        match (g.node(i).block(), g.node(j).block()) {
            (Some(bi), Some(bj)) if in_range => {
                if !edge_compatible(vocab, bi, bj, r, vi, vj) {
                    compatible = false;
                }
            }
            _ => compatible = false,
        }
        for (slot, v) in [(i, vi), (j, vj)] {
            if v >= 64 || used[slot] & (1 << v) != 0 {
                centers_unique = false;
            } else {
                used[slot] |= 1 << v;
            }
        }
    }
    if !compatible {
        failures.push(ValidityFailure::Incompatible);
    }
    if !centers_unique {
        failures.push(ValidityFailure::CenterReused);
    }
    ValidityReport {
        fully_denoised,
        spanning_tree,
        compatible,
        centers_unique,
        failures,
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.parent[r] != r {
            r = self.parent[r];
        }
        let mut x = x;
        while self.parent[x] != r {
            let next = self.parent[x];
            self.parent[x] = r;
            x = next;
        }
        r
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra] = rb;
        true
    }
}

/// Slot-permutation-invariant code for a valid tree.
///
/// Each rooted subtree is encoded as `(block [edge child]...)` with children
/// sorted; the edge label records the parent-side center, child-side center,
/// reaction and which side is reagent A. The minimum over all roots is returned.
pub fn canonical_code(g: &ReactionGraph) -> Result<Vec<u8>, GraphError> {
    let n = g.n();
    if n == 0 {
        return Err(GraphError::Empty);
    }
    let blocks = g.blocks().ok_or(GraphError::NotDenoised)?;
    let edges: Vec<_> = g.concrete_edges().collect();
    if edges.len() != n - 1 {
        return Err(if edges.len() >= n {
            GraphError::Cycle
        } else {
            GraphError::Disconnected
        });
    }
    let mut adj: Vec<Vec<(usize, String)>> = vec![Vec::new(); n];
    for &(i, j, r, vi, vj) in &edges {
        adj[i].push((j, format!("{r}.{vi}.{vj}>")));
        adj[j].push((i, format!("{r}.{vj}.{vi}<")));
    }
    let mut best: Option<String> = None;
    for root in 0..n {
        let mut visited = vec![false; n];
        let code = subtree_code(root, &adj, &blocks, &mut visited);
        if visited.iter().any(|v| !v) {
            return Err(GraphError::Disconnected);
        }
        if best.as_ref().is_none_or(|b| code < *b) {
            best = Some(code);
        }
    }
    Ok(best.expect("n > 0").into_bytes())
}

fn subtree_code(u: usize, adj: &[Vec<(usize, String)>], blocks: &[BlockId], visited: &mut [bool]) -> String {
    visited[u] = true;
    let mut children: Vec<String> = Vec::new();
    for (w, label) in &adj[u] {
        if !visited[*w] {
            let child = subtree_code(*w, adj, blocks, visited);
            children.push(format!("{label}{child}"));
        }
    }
    children.sort();
    let mut s = format!("({}", blocks[u]);
    for c in children {
        s.push(' ');
        s.push_str(&c);
    }
    s.push(')');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const CHAIN: &str = r#"
        [[blocks]]
        id = 0
        atoms = [["C", false], ["Br", false]]
        bonds = [[0, 1, "single"]]
        centers = [[1, "halide", true]]

        [[blocks]]
        id = 1
        atoms = [["N", false]]
        centers = [[0, "amine", false]]

        [[reactions]]
        id = 0
        class_a = "halide"
        class_b = "amine"
        l_a = true
        l_b = false
        bond_order = "single"
    "#;

    const AMIDE: &str = r#"
        [[blocks]]
        id = 0
        atoms = [["C", false], ["O", false], ["C", false]]
        bonds = [[0, 1, "double"], [0, 2, "single"]]
        centers = [[0, "acyl", false]]

        [[blocks]]
        id = 1
        atoms = [["N", false], ["C", false]]
        bonds = [[0, 1, "single"]]
        centers = [[0, "amine", false]]

        [[reactions]]
        id = 0
        class_a = "acyl"
        class_b = "amine"
        l_a = false
        l_b = false
        bond_order = "single"
    "#;

    #[test]
    fn codec_examples() {
        let c = EdgeCodec::new(2, 3);
        assert_eq!(c.encode(EdgeLabel::concrete(1, 2, 0)).unwrap(), 15);
        assert_eq!(c.encode(EdgeLabel::NoEdge).unwrap(), 18);
        assert_eq!(c.encode(EdgeLabel::Mask).unwrap(), 19);
        for k in 0..20 {
            assert_eq!(c.encode(c.decode(k).unwrap()).unwrap(), k);
        }
        assert!(c.decode(20).is_err());
        assert!(c.encode(EdgeLabel::concrete(2, 0, 0)).is_err());
        assert!(c.encode(EdgeLabel::concrete(0, 3, 0)).is_err());
    }

    #[test]
    fn node_codec() {
        for k in 0..=4 {
            assert_eq!(encode_node(decode_node(k, 4).unwrap(), 4).unwrap(), k);
        }
        assert!(decode_node(5, 4).is_err());
        assert!(encode_node(NodeState::Block(4), 4).is_err());
    }

    #[test]
    fn symmetrize_mirrors_upper() {
        let mut g = ReactionGraph::empty(3);
        g.set_entry(0, 1, EdgeLabel::concrete(0, 0, 0));
        assert!(!g.is_symmetric());
        g.symmetrize();
        assert_eq!(g.edge(1, 0), EdgeLabel::concrete(0, 0, 0));
        let before = g.clone();
        g.symmetrize();
        assert_eq!(g, before);
    }

    #[test]
    fn unique_neighbor_cases() {
        let v = Vocabulary::from_toml_str(CHAIN).unwrap();
        let g = AtomGraph::seed(v.block(0));
        assert_eq!(unique_neighbor(&g, 1).unwrap(), 0);
        let n = AtomGraph::seed(v.block(1));
        assert_eq!(
            unique_neighbor(&n, 0),
            Err(GraphError::DegreeNotOne { atom: 0, degree: 0 })
        );
        let amide = Vocabulary::from_toml_str(AMIDE).unwrap();
        let g = AtomGraph::seed(amide.block(0));
        assert!(matches!(
            unique_neighbor(&g, 0),
            Err(GraphError::DegreeNotOne { degree: 2, .. })
        ));
    }

    #[test]
    fn couple_with_leaving_group() {
        let v = Vocabulary::from_toml_str(CHAIN).unwrap();
        let g = AtomGraph::seed(v.block(0));
        let p = couple(&g, 0, v.block(1), 0, &v, 0, 0).unwrap();
        let elements: Vec<_> = p.atoms().iter().map(|a| a.spec.element).collect();
        assert_eq!(
            elements,
            vec![crate::vocabulary::Element::C, crate::vocabulary::Element::N]
        );
        assert_eq!(p.bonds(), &[(0, 1, BondOrder::Single)]);
        assert_eq!(p.atom_of(0, 1), None);
        assert!(matches!(
            couple(&p, 0, v.block(1), 0, &v, 0, 0),
            Err(GraphError::Occupied { slot: 0, center: 0 })
        ));
    }

    #[test]
    fn couple_without_leaving_is_additive() {
        let v = Vocabulary::from_toml_str(AMIDE).unwrap();
        let g = AtomGraph::seed(v.block(0));
        let p = couple(&g, 0, v.block(1), 0, &v, 0, 0).unwrap();
        assert_eq!(p.atoms().len(), 5);
        assert_eq!(p.bonds().len(), 4);
        assert_eq!(p.bonds()[3], (0, 3, BondOrder::Single));
    }

    #[test]
    fn couple_rejects_mismatch() {
        let v = Vocabulary::from_toml_str(CHAIN).unwrap();
        let g = AtomGraph::seed(v.block(1));
        assert!(matches!(
            couple(&g, 0, v.block(0), 0, &v, 0, 0),
            Err(GraphError::Incompatible(_))
        ));
    }

    #[test]
    fn assemble_two_block() {
        let v = Vocabulary::from_toml_str(CHAIN).unwrap();
        let single = ReactionGraph::from_parts(vec![0], &[]);
        let a = assemble_atom_graph(&single, &v).unwrap();
        assert_eq!(a.atoms().len(), 2);
        assert_eq!(a.bonds().len(), 1);

        let g = ReactionGraph::from_parts(vec![0, 1], &[(0, 1, EdgeLabel::concrete(0, 0, 0))]);
        let direct = couple(&AtomGraph::seed(v.block(0)), 0, v.block(1), 0, &v, 0, 0).unwrap();
        assert_eq!(assemble_atom_graph(&g, &v).unwrap(), direct);
    }

    #[test]
    fn assembly_handles_reversed_orientation() {
        // Node 0 is the amine, node 1 the halide: reagent A on the lower index
        // is violated, so this graph is incompatible.
        let v = Vocabulary::from_toml_str(CHAIN).unwrap();
        let g = ReactionGraph::from_parts(vec![1, 0], &[(0, 1, EdgeLabel::concrete(0, 0, 0))]);
        assert!(!check_validity(&g, &v).is_valid());
        assert!(assemble_atom_graph(&g, &v).is_err());
    }

    #[test]
    fn validity_failures() {
        let v = Vocabulary::from_toml_str(CHAIN).unwrap();
        let g = ReactionGraph::from_parts(vec![0, 1, 1], &[(0, 1, EdgeLabel::concrete(0, 0, 0))]);
        let rep = check_validity(&g, &v);
        assert!(!rep.is_valid());
        assert!(rep.failures.contains(&ValidityFailure::Disconnected));

        let g = ReactionGraph::from_parts(vec![0, 0], &[(0, 1, EdgeLabel::concrete(0, 0, 0))]);
        let rep = check_validity(&g, &v);
        assert!(rep.failures.contains(&ValidityFailure::Incompatible));

        let mut g = ReactionGraph::from_parts(vec![0, 1], &[(0, 1, EdgeLabel::concrete(0, 0, 0))]);
        assert!(check_validity(&g, &v).is_valid());
        g.set_node(1, NodeState::Mask);
        assert!(check_validity(&g, &v).failures.contains(&ValidityFailure::NotDenoised));
    }

    #[test]
    fn canonical_code_permutation() {
        let v = Vocabulary::from_toml_str(AMIDE).unwrap();
        let _ = v;
        let a = ReactionGraph::from_parts(vec![0, 1], &[(0, 1, EdgeLabel::concrete(0, 0, 0))]);
        let b = ReactionGraph::from_parts(vec![0, 1], &[(0, 1, EdgeLabel::concrete(0, 0, 1))]);
        assert_ne!(canonical_code(&a).unwrap(), canonical_code(&b).unwrap());
        let disconnected = ReactionGraph::from_parts(vec![0, 1], &[]);
        assert!(canonical_code(&disconnected).is_err());
    }
}
