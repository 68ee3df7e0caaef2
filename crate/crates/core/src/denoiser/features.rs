//! Atom-level one-hot features for a (partially masked) reaction graph.

use crate::graph::{NodeState, ReactionGraph};
use crate::vocabulary::Vocabulary;

/// Element channels: 8 elements plus mask.
pub const ELEMENT_CHANNELS: usize = 9;
/// Bond channels: 4 orders plus mask.
pub const BOND_CHANNELS: usize = 5;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AtomFeature {
    pub element: [f64; ELEMENT_CHANNELS],
    pub in_ring: f64,
    pub is_center: f64,
}

/// Per-slot atom features on the `n × M` grid and dense intra-block bond
/// one-hots on `n × M × M`. Cells past a block's atom count stay zero.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomFeatures {
    pub n: usize,
    pub m: usize,
    pub atoms: Vec<AtomFeature>,
    pub bonds: Vec<[f64; BOND_CHANNELS]>,
}

impl AtomFeatures {
    pub fn atom(&self, i: usize, a: usize) -> &AtomFeature {
        &self.atoms[i * self.m + a]
    }

    pub fn bond(&self, i: usize, a: usize, b: usize) -> &[f64; BOND_CHANNELS] {
        &self.bonds[(i * self.m + a) * self.m + b]
    }
}

pub fn featurize(g: &ReactionGraph, vocab: &Vocabulary) -> AtomFeatures {
    let (n, m) = (g.n(), vocab.max_atoms());
    let mut atoms = vec![AtomFeature::default(); n * m];
    let mut bonds = vec![[0.0; BOND_CHANNELS]; n * m * m];
    for i in 0..n {
        match g.node(i) {
            NodeState::Mask => {
                for a in 0..m {
                    atoms[i * m + a].element[ELEMENT_CHANNELS - 1] = 1.0;
                    for b in 0..m {
                        if a != b {
                            bonds[(i * m + a) * m + b][BOND_CHANNELS - 1] = 1.0;
                        }
                    }
                }
            }
            NodeState::Block(id) => {
                let block = vocab.block(id);
                for (a, spec) in block.atoms.iter().enumerate() {
                    let f = &mut atoms[i * m + a];
                    f.element[spec.element.index()] = 1.0;
                    f.in_ring = f64::from(u8::from(spec.in_ring));
                    f.is_center = f64::from(u8::from(block.is_center_atom(a)));
                }
                for &(a, b, order) in &block.bonds {
                    bonds[(i * m + a) * m + b][order.index()] = 1.0;
                    bonds[(i * m + b) * m + a][order.index()] = 1.0;
                }
            }
        }
    }
    AtomFeatures { n, m, atoms, bonds }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masked_slots_are_all_mask() {
        let v = Vocabulary::from_toml_str(include_str!("../../data/toy.toml")).unwrap();
        let mut g = ReactionGraph::fully_masked(2);
        g.set_node(0, NodeState::Block(4));
        let f = featurize(&g, &v);
        for a in 0..f.m {
            assert_eq!(f.atom(1, a).element[8], 1.0);
        }
        assert_eq!(f.bond(1, 0, 1)[4], 1.0);
        assert_eq!(f.atom(0, 3).is_center, 1.0);
        assert_eq!(f.atom(0, 0).element[0], 1.0);
        assert_eq!(f.bond(0, 1, 2)[1], 1.0);
        assert_eq!(f.atom(0, 5).element, [0.0; 9]);
    }
}
