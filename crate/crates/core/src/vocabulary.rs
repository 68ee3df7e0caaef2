//! Building blocks, reaction templates and the compatibility index.
//!
//! A vocabulary is loaded from a TOML document with a `blocks` array and a
//! `reactions` array. Reaction centers carry a precompiled class label; a
//! template pairs a reagent-A class with a reagent-B class and forms exactly
//! one new bond.
//!
//! ```toml
//! [[blocks]]
//! id = 0
//! atoms = [["C", true], ["Br", false]]
//! bonds = [[0, 1, "single"]]
//! centers = [[1, "aryl-bromide", true]]
//!
//! [[reactions]]
//! id = 0
//! class_a = "aryl-bromide"
//! class_b = "amine"
//! l_a = true
//! l_b = false
//! bond_order = "single"
//! ```

use std::collections::{BTreeSet, HashSet, VecDeque};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type BlockId = usize;
pub type ReactionId = usize;
pub type CenterId = usize;

/// Centers per block are tracked in `u64` occupancy masks.
pub const MAX_CENTERS_PER_BLOCK: usize = 64;

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("failed to read vocabulary: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse vocabulary: {0}")]
    Parse(String),
    #[error("{kind} ids must be dense and sequential: expected {expected}, found {found}")]
    NonSequentialId {
        kind: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("block {block}: {message}")]
    InvalidBlock { block: BlockId, message: String },
    #[error("block {block} center {center}: leaving center not degree-1 (degree {degree})")]
    LeavingDegree {
        block: BlockId,
        center: CenterId,
        degree: usize,
    },
    #[error("reaction {reaction}: center class {class:?} does not appear on any block")]
    DanglingClass { reaction: ReactionId, class: String },
    #[error("block {block} has {atoms} atoms, more than the declared maximum {max}")]
    TooManyAtoms { block: BlockId, atoms: usize, max: usize },
    #[error("vocabulary must contain at least one block")]
    Empty,
    #[error("invalid reaction id {0}")]
    InvalidReaction(ReactionId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Element {
    C,
    N,
    O,
    B,
    F,
    Cl,
    Br,
    S,
}

impl Element {
    pub const ALL: [Element; 8] = [
        Element::C,
        Element::N,
        Element::O,
        Element::B,
        Element::F,
        Element::Cl,
        Element::Br,
        Element::S,
    ];

    /// Position in the 9-way atom one-hot; slot 8 is the mask channel.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Element::C => "C",
            Element::N => "N",
            Element::O => "O",
            Element::B => "B",
            Element::F => "F",
            Element::Cl => "Cl",
            Element::Br => "Br",
            Element::S => "S",
        }
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

impl FromStr for Element {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Element::ALL
            .iter()
            .copied()
            .find(|e| e.symbol() == s)
            .ok_or_else(|| format!("unknown element {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    pub const ALL: [BondOrder; 4] = [
        BondOrder::Single,
        BondOrder::Double,
        BondOrder::Triple,
        BondOrder::Aromatic,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn symbol(self) -> char {
        match self {
            BondOrder::Single => '-',
            BondOrder::Double => '=',
            BondOrder::Triple => '#',
            BondOrder::Aromatic => ':',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    A,
    B,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AtomSpec {
    pub element: Element,
    pub in_ring: bool,
    pub local_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReactionCenter {
    pub atom: usize,
    pub class: String,
    pub is_leaving: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuildingBlock {
    pub id: BlockId,
    pub name: Option<String>,
    pub atoms: Vec<AtomSpec>,
    pub bonds: Vec<(usize, usize, BondOrder)>,
    pub centers: Vec<ReactionCenter>,
}

impl BuildingBlock {
    pub fn degree(&self, atom: usize) -> usize {
        self.bonds.iter().filter(|&&(a, b, _)| a == atom || b == atom).count()
    }

    pub fn neighbors(&self, atom: usize) -> impl Iterator<Item = usize> + '_ {
        self.bonds.iter().filter_map(move |&(a, b, _)| {
            if a == atom {
                Some(b)
            } else if b == atom {
                Some(a)
            } else {
                None
            }
        })
    }

    pub fn is_center_atom(&self, atom: usize) -> bool {
        self.centers.iter().any(|c| c.atom == atom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReactionTemplate {
    pub id: ReactionId,
    pub name: Option<String>,
    pub class_a: String,
    pub class_b: String,
    pub leaving_a: bool,
    pub leaving_b: bool,
    pub bond_order: BondOrder,
}

impl ReactionTemplate {
    pub fn class(&self, side: Side) -> &str {
        match side {
            Side::A => &self.class_a,
            Side::B => &self.class_b,
        }
    }

    pub fn leaving(&self, side: Side) -> bool {
        match side {
            Side::A => self.leaving_a,
            Side::B => self.leaving_b,
        }
    }
}

/// One candidate coupling `⟨slot, center, reaction, partner block, partner center⟩`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CouplingTuple {
    pub slot: usize,
    pub center: CenterId,
    pub reaction: ReactionId,
    pub partner: BlockId,
    pub partner_center: CenterId,
}

#[derive(Debug, Clone)]
pub struct Vocabulary {
    pub name: Option<String>,
    blocks: Vec<BuildingBlock>,
    reactions: Vec<ReactionTemplate>,
    declared_max_atoms: Option<usize>,
    max_centers: usize,
    max_atoms: usize,
    // match_mask[side][r][b]: bit v set iff (b, v) matches reagent `side` of r
    match_mask: [Vec<Vec<u64>>; 2],
}

impl Vocabulary {
    pub fn from_toml_str(doc: &str) -> Result<Self, VocabError> {
        let file: VocabFile = toml::from_str(doc).map_err(|e| VocabError::Parse(e.to_string()))?;
        Self::from_file(file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, VocabError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        let file = VocabFile {
            name: self.name.clone(),
            max_atoms: self.declared_max_atoms,
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockEntry {
                    id: b.id,
                    name: b.name.clone(),
                    atoms: b
                        .atoms
                        .iter()
                        .map(|a| (a.element.symbol().to_string(), a.in_ring))
                        .collect(),
                    bonds: b.bonds.clone(),
                    centers: b
                        .centers
                        .iter()
                        .map(|c| (c.atom, c.class.clone(), c.is_leaving))
                        .collect(),
                })
                .collect(),
            reactions: self
                .reactions
                .iter()
                .map(|r| ReactionEntry {
                    id: r.id,
                    name: r.name.clone(),
                    class_a: r.class_a.clone(),
                    class_b: r.class_b.clone(),
                    l_a: r.leaving_a,
                    l_b: r.leaving_b,
                    bond_order: r.bond_order,
                })
                .collect(),
        };
        toml::to_string(&file).expect("vocabulary serializes")
    }

    fn from_file(file: VocabFile) -> Result<Self, VocabError> {
        if file.blocks.is_empty() {
            return Err(VocabError::Empty);
        }
        let mut blocks = Vec::with_capacity(file.blocks.len());
        for (expected, entry) in file.blocks.into_iter().enumerate() {
            if entry.id != expected {
                return Err(VocabError::NonSequentialId {
                    kind: "block",
                    expected,
                    found: entry.id,
                });
            }
            blocks.push(build_block(entry)?);
        }
        if let Some(max) = file.max_atoms {
            if let Some(b) = blocks.iter().find(|b| b.atoms.len() > max) {
                return Err(VocabError::TooManyAtoms {
                    block: b.id,
                    atoms: b.atoms.len(),
                    max,
                });
            }
        }

        let known_classes: HashSet<&str> = blocks
            .iter()
            .flat_map(|b| b.centers.iter().map(|c| c.class.as_str()))
            .collect();
        let mut reactions = Vec::with_capacity(file.reactions.len());
        for (expected, entry) in file.reactions.into_iter().enumerate() {
            if entry.id != expected {
                return Err(VocabError::NonSequentialId {
                    kind: "reaction",
                    expected,
                    found: entry.id,
                });
            }
            for class in [&entry.class_a, &entry.class_b] {
                if class.is_empty() || !known_classes.contains(class.as_str()) {
                    return Err(VocabError::DanglingClass {
                        reaction: entry.id,
                        class: class.clone(),
                    });
                }
            }
            reactions.push(ReactionTemplate {
                id: entry.id,
                name: entry.name,
                class_a: entry.class_a,
                class_b: entry.class_b,
                leaving_a: entry.l_a,
                leaving_b: entry.l_b,
                bond_order: entry.bond_order,
            });
        }

        let max_centers = blocks.iter().map(|b| b.centers.len()).max().unwrap_or(0);
        let max_atoms = blocks.iter().map(|b| b.atoms.len()).max().unwrap_or(0);
        let mut vocab = Vocabulary {
            name: file.name,
            blocks,
            reactions,
            declared_max_atoms: file.max_atoms,
            max_centers,
            max_atoms,
            match_mask: [Vec::new(), Vec::new()],
        };
        vocab.match_mask = [vocab.build_mask(Side::A), vocab.build_mask(Side::B)];
        Ok(vocab)
    }

    fn build_mask(&self, side: Side) -> Vec<Vec<u64>> {
        self.reactions
            .iter()
            .map(|r| {
                self.blocks
                    .iter()
                    .map(|b| {
                        b.centers
                            .iter()
                            .enumerate()
                            .filter(|(_, c)| center_fits(r, side, c))
                            .fold(0u64, |m, (v, _)| m | (1 << v))
                    })
                    .collect()
            })
            .collect()
    }

    pub fn blocks(&self) -> &[BuildingBlock] {
        &self.blocks
    }

    pub fn reactions(&self) -> &[ReactionTemplate] {
        &self.reactions
    }

    pub fn block(&self, id: BlockId) -> &BuildingBlock {
        &self.blocks[id]
    }

    pub fn reaction(&self, id: ReactionId) -> &ReactionTemplate {
        &self.reactions[id]
    }

    /// `B`
    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// `R`
    pub fn num_reactions(&self) -> usize {
        self.reactions.len()
    }

    /// `V_max`
    pub fn max_centers(&self) -> usize {
        self.max_centers
    }

    /// `M`
    pub fn max_atoms(&self) -> usize {
        self.max_atoms
    }

    /// Whether `(block, center)` can act as reagent `side` of `reaction`.
    #[inline]
    pub fn matches(&self, reaction: ReactionId, side: Side, block: BlockId, center: CenterId) -> bool {
        center < MAX_CENTERS_PER_BLOCK && self.center_mask(reaction, side, block) & (1 << center) != 0
    }

    /// Bitmask of centers on `block` that match reagent `side` of `reaction`.
    #[inline]
    pub fn center_mask(&self, reaction: ReactionId, side: Side, block: BlockId) -> u64 {
        let s = match side {
            Side::A => 0,
            Side::B => 1,
        };
        self.match_mask[s][reaction][block]
    }

    /// All `(block, center)` pairs that match reagent `side` of `reaction`.
    pub fn center_matched_set(
        &self,
        reaction: ReactionId,
        side: Side,
    ) -> Result<BTreeSet<(BlockId, CenterId)>, VocabError> {
        if reaction >= self.reactions.len() {
            return Err(VocabError::InvalidReaction(reaction));
        }
        let mut out = BTreeSet::new();
        for b in 0..self.blocks.len() {
            let mask = self.center_mask(reaction, side, b);
            for v in 0..self.blocks[b].centers.len() {
                if mask & (1 << v) != 0 {
                    out.insert((b, v));
                }
            }
        }
        Ok(out)
    }

    /// Enumerates couplings of a new block onto a partial molecule.
    ///
    /// `nodes` lists, per slot, the block placed there and a bitmask of the
    /// centers already consumed by an edge. Existing slots act as reagent A.
    pub fn compatible_tuples(&self, nodes: &[(BlockId, u64)]) -> Vec<CouplingTuple> {
        let mut out = Vec::new();
        for (slot, &(block, occupied)) in nodes.iter().enumerate() {
            for r in 0..self.reactions.len() {
                let free = self.center_mask(r, Side::A, block) & !occupied;
                if free == 0 {
                    continue;
                }
                for v in bits(free) {
                    for partner in 0..self.blocks.len() {
                        for pv in bits(self.center_mask(r, Side::B, partner)) {
                            out.push(CouplingTuple {
                                slot,
                                center: v,
                                reaction: r,
                                partner,
                                partner_center: pv,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

/// Iterates the set bit positions of a mask in ascending order.
pub fn bits(mut mask: u64) -> impl Iterator<Item = usize> {
    std::iter::from_fn(move || {
        if mask == 0 {
            None
        } else {
            let v = mask.trailing_zeros() as usize;
            mask &= mask - 1;
            Some(v)
        }
    })
}

// A template that expels reagent X needs a center flagged as leaving.
fn center_fits(r: &ReactionTemplate, side: Side, c: &ReactionCenter) -> bool {
    c.class == r.class(side) && (!r.leaving(side) || c.is_leaving)
}

fn build_block(entry: BlockEntry) -> Result<BuildingBlock, VocabError> {
    let id = entry.id;
    let invalid = |message: String| VocabError::InvalidBlock { block: id, message };
    if entry.atoms.is_empty() {
        return Err(invalid("block has no atoms".into()));
    }
    let mut atoms = Vec::with_capacity(entry.atoms.len());
    for (i, (sym, ring)) in entry.atoms.iter().enumerate() {
        let element = sym.parse::<Element>().map_err(invalid)?;
        atoms.push(AtomSpec {
            element,
            in_ring: *ring,
            local_index: i,
        });
    }
    let n = atoms.len();
    let mut seen = HashSet::new();
    for &(a, b, _) in &entry.bonds {
        if a >= n || b >= n {
            return Err(invalid(format!("bond ({a}, {b}) references a missing atom")));
        }
        if a == b {
            return Err(invalid(format!("self-bond on atom {a}")));
        }
        if !seen.insert((a.min(b), a.max(b))) {
            return Err(invalid(format!("duplicate bond ({a}, {b})")));
        }
    }
    if entry.centers.len() > MAX_CENTERS_PER_BLOCK {
        return Err(invalid(format!(
            "{} centers exceed the supported {MAX_CENTERS_PER_BLOCK}",
            entry.centers.len()
        )));
    }
    let centers: Vec<ReactionCenter> = entry
        .centers
        .into_iter()
        .map(|(atom, class, is_leaving)| ReactionCenter {
            atom,
            class,
            is_leaving,
        })
        .collect();
    let block = BuildingBlock {
        id,
        name: entry.name,
        atoms,
        bonds: entry.bonds,
        centers,
    };

    if !is_connected(&block) {
        return Err(invalid("atom graph is not connected".into()));
    }
    let mut center_atoms = HashSet::new();
    for (v, c) in block.centers.iter().enumerate() {
        if c.atom >= n {
            return Err(invalid(format!("center {v} references missing atom {}", c.atom)));
        }
        if c.class.is_empty() {
            return Err(invalid(format!("center {v} has an empty class")));
        }
        if !center_atoms.insert(c.atom) {
            return Err(invalid(format!("atom {} carries more than one center", c.atom)));
        }
        if c.is_leaving {
            let degree = block.degree(c.atom);
            if degree != 1 {
                return Err(VocabError::LeavingDegree {
                    block: id,
                    center: v,
                    degree,
                });
            }
        }
    }
    for (v, c) in block.centers.iter().enumerate() {
        if !c.is_leaving {
            continue;
        }
        let u = block.neighbors(c.atom).next().expect("degree checked");
        if block.centers.iter().any(|o| o.is_leaving && o.atom == u) {
            return Err(invalid(format!(
                "leaving center {v} is bonded to another leaving center"
            )));
        }
    }
    Ok(block)
}

fn is_connected(block: &BuildingBlock) -> bool {
    let n = block.atoms.len();
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    let mut count = 1;
    while let Some(a) = queue.pop_front() {
        for b in block.neighbors(a) {
            if !seen[b] {
                seen[b] = true;
                count += 1;
                queue.push_back(b);
            }
        }
    }
    count == n
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VocabFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    max_atoms: Option<usize>,
    blocks: Vec<BlockEntry>,
    #[serde(default)]
    reactions: Vec<ReactionEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlockEntry {
    id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    atoms: Vec<(String, bool)>,
    #[serde(default)]
    bonds: Vec<(usize, usize, BondOrder)>,
    #[serde(default)]
    centers: Vec<(usize, String, bool)>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReactionEntry {
    id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    class_a: String,
    class_b: String,
    l_a: bool,
    l_b: bool,
    bond_order: BondOrder,
}
