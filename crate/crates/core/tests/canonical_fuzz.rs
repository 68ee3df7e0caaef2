//! Canonical codes against an isomorphism test from an independent library.

use petgraph::algo::is_isomorphic_matching;
use petgraph::graph::DiGraph;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use synthgen::acceptance::{crafted_vocabulary, random_relabel, toy_vocabulary};
use synthgen::dataset::{generate_dataset, GenConfig};
use synthgen::graph::{canonical_code, ReactionGraph};

type Arc = (usize, usize, usize);

fn to_petgraph(g: &ReactionGraph) -> DiGraph<usize, Arc> {
    let mut p = DiGraph::new();
    let nodes: Vec<_> = g.blocks().unwrap().into_iter().map(|b| p.add_node(b)).collect();
    for (i, j, r, a, b) in g.concrete_edges() {
        p.add_edge(nodes[i], nodes[j], (r, a, b));
    }
    p
}

fn isomorphic(g: &ReactionGraph, h: &ReactionGraph) -> bool {
    is_isomorphic_matching(&to_petgraph(g), &to_petgraph(h), |a, b| a == b, |a, b| a == b)
}

fn graphs(toy: bool, seed: u64) -> Vec<ReactionGraph> {
    let vocab = if toy { toy_vocabulary() } else { crafted_vocabulary() };
    let cfg = GenConfig {
        count: 60,
        seed,
        depth_min: 1,
        depth_max: 4,
        coordinates: false,
        ..GenConfig::default()
    };
    generate_dataset(&vocab, &cfg)
        .unwrap()
        .into_iter()
        .map(|r| r.graph)
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn code_equality_is_isomorphism(toy in any::<bool>(), seed in any::<u64>()) {
        let gs = graphs(toy, seed);
        let codes: Vec<Vec<u8>> = gs.iter().map(|g| canonical_code(g).unwrap()).collect();
        for a in 0..gs.len() {
            for b in a + 1..gs.len() {
                prop_assert_eq!(codes[a] == codes[b], isomorphic(&gs[a], &gs[b]), "{:?} {:?}", gs[a], gs[b]);
            }
        }
    }

    #[test]
    fn relabeling_keeps_code(toy in any::<bool>(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for g in graphs(toy, seed) {
            let h = random_relabel(&g, &mut rng);
            prop_assert!(isomorphic(&g, &h));
            prop_assert_eq!(canonical_code(&g).unwrap(), canonical_code(&h).unwrap());
        }
    }
}
