//! Exact posterior denoiser over a finite dataset.

use rand::{Rng, RngCore};

use super::{Denoiser, DenoiserError, DenoiserInput, DenoiserOutput};
use crate::dataset::PreparedRecord;
use crate::flow::{masked_centroid, AtomMask, Coords};
use crate::graph::{EdgeCodec, EdgeLabel, NodeState, ReactionGraph};
use crate::vocabulary::Vocabulary;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleMode {
    /// Empirical conditional marginals per entry, posterior-mean coordinates.
    Marginal,
    /// One consistent record drawn uniformly; its one-hots and paired coordinates.
    PosteriorSample,
}

/// Uniform-weight Bayes posterior over dataset records given the unmasked
/// entries of the input graph.
#[derive(Debug, Clone)]
pub struct OracleDenoiser {
    records: Vec<PreparedRecord>,
    /// Per record: node blocks and dense `n × n` edge channels.
    channels: Vec<(Vec<usize>, Vec<usize>)>,
    blocks: usize,
    codec: EdgeCodec,
    m: usize,
    mode: OracleMode,
}

impl OracleDenoiser {
    pub fn new(records: Vec<PreparedRecord>, vocab: &Vocabulary, mode: OracleMode) -> Result<Self, DenoiserError> {
        if records.is_empty() {
            return Err(DenoiserError::EmptyDataset);
        }
        let codec = EdgeCodec::for_vocab(vocab);
        let no_edge = codec.concrete();
        let mut channels = Vec::with_capacity(records.len());
        for r in &records {
            let g = &r.graph;
            let n = g.n();
            let nodes = g
                .blocks()
                .ok_or_else(|| DenoiserError::Other("dataset graph has masked nodes".into()))?;
            let mut edges = vec![no_edge; n * n];
            for (i, j, e) in g.upper() {
                let c = match e {
                    EdgeLabel::NoEdge => no_edge,
                    EdgeLabel::Mask => return Err(DenoiserError::Other("dataset graph has masked edges".into())),
                    e => codec.encode(e).map_err(|e| DenoiserError::Other(e.to_string()))?,
                };
                edges[i * n + j] = c;
                edges[j * n + i] = c;
            }
            channels.push((nodes, edges));
        }
        Ok(OracleDenoiser {
            records,
            channels,
            blocks: vocab.num_blocks(),
            codec,
            m: vocab.max_atoms(),
            mode,
        })
    }

    pub fn records(&self) -> &[PreparedRecord] {
        &self.records
    }

    pub fn mode(&self) -> OracleMode {
        self.mode
    }

    /// Indices of records with the same block count that agree with every
    /// unmasked entry of `g`.
    pub fn consistent(&self, g: &ReactionGraph) -> Vec<usize> {
        let n = g.n();
        (0..self.records.len())
            .filter(|&k| {
                let (nodes, edges) = &self.channels[k];
                if nodes.len() != n {
                    return false;
                }
                for i in 0..n {
                    if let NodeState::Block(b) = g.node(i) {
                        if nodes[i] != b {
                            return false;
                        }
                    }
                }
                g.upper().all(|(i, j, e)| match e {
                    EdgeLabel::Mask => true,
                    EdgeLabel::NoEdge => edges[i * n + j] == self.codec.concrete(),
                    e => self.codec.encode(e).map(|c| c == edges[i * n + j]).unwrap_or(false),
                })
            })
            .collect()
    }

    /// Record `k`'s clean endpoint paired with the prior: real atoms shifted by
    /// the prior's visible centroid, dummy atoms taken from the centered prior.
    fn paired(&self, k: usize, prior: &Coords, shift: [f64; 3], st: &AtomMask) -> Coords {
        let r = &self.records[k];
        let (n, m) = (st.n(), st.m());
        let mut out = Coords::zeros(n, m);
        for i in 0..n {
            for a in 0..m {
                let src = if r.s0.get(i, a) {
                    r.c0.get(i, a)
                } else if st.get(i, a) {
                    prior.get(i, a)
                } else {
                    continue;
                };
                out.set(i, a, [src[0] - shift[0], src[1] - shift[1], src[2] - shift[2]]);
            }
        }
        out
    }
}

impl Denoiser for OracleDenoiser {
    fn denoise(&self, input: &DenoiserInput<'_>, rng: &mut dyn RngCore) -> Result<DenoiserOutput, DenoiserError> {
        let g = input.graph;
        let n = g.n();
        if input.coords.n() != n
            || input.coords.m() != self.m
            || input.visibility.n() != n
            || input.visibility.m() != self.m
        {
            return Err(DenoiserError::Shape(format!(
                "coordinates {}x{} for n={n}, M={}",
                input.coords.n(),
                input.coords.m(),
                self.m
            )));
        }
        let hits = self.consistent(g);
        if hits.is_empty() {
            return Err(DenoiserError::NoConsistentRecord);
        }
        // Without a tracked prior the current state stands in for it; the two
        // coincide at t = 1.
        let prior = input.prior.unwrap_or(input.coords);
        let shift = masked_centroid(prior, input.visibility).map_err(|e| DenoiserError::Shape(e.to_string()))?;
        let chosen = match self.mode {
            OracleMode::Marginal => hits,
            OracleMode::PosteriorSample => vec![hits[rng.random_range(0..hits.len())]],
        };
        let channels = self.codec.concrete() + 1;
        let mut out = DenoiserOutput::uniform(n, self.blocks, channels, self.m);
        out.node_probs.fill(0.0);
        out.edge_probs.fill(0.0);
        let w = 1.0 / chosen.len() as f64;
        for &k in &chosen {
            let (nodes, edges) = &self.channels[k];
            for i in 0..n {
                out.node_row_mut(i)[nodes[i]] += w;
                for j in 0..n {
                    out.edge_row_mut(i, j)[edges[i * n + j]] += w;
                }
            }
            let c = self.paired(k, prior, shift, input.visibility);
            for (acc, p) in out.coords.cells_mut().iter_mut().zip(c.cells()) {
                for d in 0..3 {
                    acc[d] += w * p[d];
                }
            }
        }
        out.enforce_carry_over(g, &self.codec);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::prepare_records;
    use crate::flow::{atom_validity, pair_data, visibility_mask};
    use crate::record::MoleculeRecord;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy() -> Vocabulary {
        Vocabulary::from_toml_str(include_str!("../../data/toy.toml")).unwrap()
    }

    fn record(line: &str, v: &Vocabulary) -> PreparedRecord {
        let mut r = MoleculeRecord::parse_line(line, 1).unwrap();
        let s0 = atom_validity(&r.graph, v);
        let mut atoms = Vec::new();
        for i in 0..s0.n() {
            for a in 0..s0.m() {
                if s0.get(i, a) {
                    atoms.push(((i, a), [i as f64 + 0.1 * a as f64, a as f64, 0.5 * i as f64]));
                }
            }
        }
        r.coords = Some(crate::record::Conformer { atoms });
        prepare_records(&[r], v, 1.0).unwrap().remove(0)
    }

    fn input<'a>(g: &'a ReactionGraph, c: &'a Coords, s: &'a AtomMask) -> DenoiserInput<'a> {
        DenoiserInput {
            graph: g,
            coords: c,
            visibility: s,
            t: 0.5,
            prior: Some(c),
        }
    }

    #[test]
    fn posterior_over_differing_node() {
        let v = toy();
        let recs = vec![record("n=2 x=0,2 e=0-1:1:1:1", &v), record("n=2 x=0,1 e=0-1:1:1:1", &v)];
        let o = OracleDenoiser::new(recs, &v, OracleMode::Marginal).unwrap();
        let mut g = o.records()[0].graph.clone();
        g.set_node(1, NodeState::Mask);
        let s0 = atom_validity(&g, &v);
        let st = visibility_mask(&g, &s0);
        let c = Coords::zeros(2, v.max_atoms());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = o.denoise(&input(&g, &c, &st), &mut rng).unwrap();
        let row = out.node_row(1);
        assert_eq!(row[1], 0.5);
        assert_eq!(row[2], 0.5);
        assert_eq!(out.node_row(0)[0], 1.0);
    }

    #[test]
    fn fully_masked_single_record_gives_one_hots_and_paired_coords() {
        let v = toy();
        let rec = record("n=3 x=0,1,3 e=0-1:1:1:1,0-2:2:0:0", &v);
        let o = OracleDenoiser::new(vec![rec.clone()], &v, OracleMode::Marginal).unwrap();
        let g = ReactionGraph::fully_masked(3);
        let st = AtomMask::ones(3, v.max_atoms());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c1 = Coords::gaussian(3, v.max_atoms(), 1.0, &mut rng);
        let out = o.denoise(&input(&g, &c1, &st), &mut rng).unwrap();
        assert_eq!(out.argmax_graph(&EdgeCodec::for_vocab(&v)), rec.graph);
        for i in 0..3 {
            assert_eq!(out.node_row(i).iter().sum::<f64>(), 1.0);
        }
        let pair = pair_data(&rec.c0, &rec.s0, &c1, 0.5, &g).unwrap();
        assert!(out.coords.max_abs_diff(&pair.c0, &st) < 1e-12);
    }

    #[test]
    fn inconsistent_evidence_errors() {
        let v = toy();
        let o = OracleDenoiser::new(vec![record("n=2 x=0,2 e=0-1:1:1:1", &v)], &v, OracleMode::Marginal).unwrap();
        let mut g = ReactionGraph::fully_masked(2);
        g.set_node(0, NodeState::Block(3));
        let st = AtomMask::ones(2, v.max_atoms());
        let c = Coords::zeros(2, v.max_atoms());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            o.denoise(&input(&g, &c, &st), &mut rng),
            Err(DenoiserError::NoConsistentRecord)
        );
        let g3 = ReactionGraph::fully_masked(3);
        let st3 = AtomMask::ones(3, v.max_atoms());
        let c3 = Coords::zeros(3, v.max_atoms());
        assert_eq!(
            o.denoise(&input(&g3, &c3, &st3), &mut rng),
            Err(DenoiserError::NoConsistentRecord)
        );
    }
}
