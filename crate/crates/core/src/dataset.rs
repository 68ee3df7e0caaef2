//! Procedural dataset generation and the block-count prior.

use std::collections::HashSet;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::embed::embed_coordinates;
use crate::flow::{atom_validity, AtomMask, Coords};
use crate::graph::{canonical_code, couple, AtomGraph, EdgeLabel, ReactionGraph};
use crate::record::{Conformer, MoleculeRecord};
use crate::vocabulary::Vocabulary;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid generation config: {0}")]
    Config(String),
    #[error("dataset is empty")]
    Empty,
    #[error("record {0} has no coordinates")]
    MissingCoordinates(usize),
    #[error("record {0}: {1}")]
    Inconsistent(usize, String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub depth_min: usize,
    pub depth_max: usize,
    pub seed: u64,
    pub count: usize,
    pub dedup: bool,
    /// Drop molecules whose assembly broke early below this many edges.
    pub min_edges: usize,
    pub coordinates: bool,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            depth_min: 2,
            depth_max: 4,
            seed: 0,
            count: 100,
            dedup: false,
            min_edges: 0,
            coordinates: true,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.depth_min < 1 || self.depth_min > self.depth_max {
            return Err(DatasetError::Config(format!(
                "need 1 <= depth_min <= depth_max, got {}..{}",
                self.depth_min, self.depth_max
            )));
        }
        Ok(())
    }
}

/// Independent generator for record `index` under `seed`.
pub fn record_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Grows a molecule for up to `steps` couplings from a uniformly chosen seed block.
pub fn generate_graph<R: Rng + ?Sized>(vocab: &Vocabulary, steps: usize, rng: &mut R) -> (ReactionGraph, AtomGraph) {
    let first = rng.random_range(0..vocab.num_blocks());
    let mut atoms = AtomGraph::seed(vocab.block(first));
    let mut blocks = vec![first];
    let mut edges = Vec::new();
    for _ in 0..steps {
        let tuples = vocab.compatible_tuples(&atoms.context());
        if tuples.is_empty() {
            break;
        }
        let t = tuples[rng.random_range(0..tuples.len())];
        atoms = couple(
            &atoms,
            t.slot,
            vocab.block(t.partner),
            t.reaction,
            vocab,
            t.center,
            t.partner_center,
        )
        .expect("enumerated tuples are compatible");
        edges.push((
            t.slot,
            blocks.len(),
            EdgeLabel::concrete(t.reaction, t.center, t.partner_center),
        ));
        blocks.push(t.partner);
    }
    (ReactionGraph::from_parts(blocks, &edges), atoms)
}

/// Coordinates of an embedded atom graph keyed by provenance.
pub fn conformer_from(atoms: &AtomGraph, coords: &[[f64; 3]]) -> Conformer {
    let mut list: Vec<_> = (0..atoms.atoms().len())
        .map(|k| (atoms.provenance(k), coords[k]))
        .collect();
    list.sort_by_key(|(key, _)| *key);
    Conformer { atoms: list }
}

fn generate_record(vocab: &Vocabulary, cfg: &GenConfig, index: u64) -> Option<MoleculeRecord> {
    let mut rng = record_rng(cfg.seed, index);
    let steps = rng.random_range(cfg.depth_min..=cfg.depth_max);
    let (graph, atoms) = generate_graph(vocab, steps, &mut rng);
    if graph.n() - 1 < cfg.min_edges {
        return None;
    }
    let coords = if cfg.coordinates {
        match embed_coordinates(&atoms, &mut rng) {
            Ok(x) => Some(conformer_from(&atoms, &x)),
            Err(e) => {
                warn!("record {index}: {e}; skipped");
                return None;
            }
        }
    } else {
        None
    };
    Some(MoleculeRecord { graph, coords })
}

/// Generates up to `cfg.count` records.
///
/// Records are produced from per-index RNG streams, so the output does not
/// depend on thread count. Fewer records are returned only when deduplication
/// or filtering exhausts the attempt budget.
pub fn generate_dataset(vocab: &Vocabulary, cfg: &GenConfig) -> Result<Vec<MoleculeRecord>, DatasetError> {
    cfg.validate()?;
    let budget = (cfg.count as u64) * 20 + 100;
    let mut out = Vec::with_capacity(cfg.count);
    let mut seen = HashSet::new();
    let mut next = 0u64;
    let chunk = (cfg.count as u64).max(64);
    while out.len() < cfg.count && next < budget {
        let end = (next + chunk).min(budget);
        let batch: Vec<Option<MoleculeRecord>> = (next..end)
            .into_par_iter()
            .map(|i| generate_record(vocab, cfg, i))
            .collect();
        next = end;
        for rec in batch.into_iter().flatten() {
            if out.len() == cfg.count {
                break;
            }
            if cfg.dedup {
                let code = canonical_code(&rec.graph).expect("generated graphs are valid trees");
                if !seen.insert(code) {
                    continue;
                }
            }
            out.push(rec);
        }
    }
    if out.len() < cfg.count {
        warn!(
            "generated {} of {} requested records before exhausting {budget} attempts",
            out.len(),
            cfg.count
        );
    }
    Ok(out)
}

/// Empirical distribution of block counts, indexed by `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockCountPrior {
    probs: Vec<f64>,
}

impl BlockCountPrior {
    pub fn from_counts(counts: &[usize]) -> Result<Self, DatasetError> {
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(DatasetError::Empty);
        }
        Ok(BlockCountPrior {
            probs: counts.iter().map(|&c| c as f64 / total as f64).collect(),
        })
    }

    pub fn from_probs(probs: Vec<f64>) -> Result<Self, DatasetError> {
        let total: f64 = probs.iter().sum();
        if !(total > 0.0) || probs.iter().any(|p| *p < 0.0 || !p.is_finite()) {
            return Err(DatasetError::Empty);
        }
        Ok(BlockCountPrior {
            probs: probs.into_iter().map(|p| p / total).collect(),
        })
    }

    /// `P(n)`; zero outside the observed support.
    pub fn prob(&self, n: usize) -> f64 {
        self.probs.get(n).copied().unwrap_or(0.0)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn max_n(&self) -> usize {
        self.probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (n, &p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return n;
            }
        }
        self.max_n()
    }
}

pub fn estimate_block_count_prior(records: &[MoleculeRecord]) -> Result<BlockCountPrior, DatasetError> {
    if records.is_empty() {
        return Err(DatasetError::Empty);
    }
    let max = records.iter().map(|r| r.graph.n()).max().unwrap_or(0);
    let mut counts = vec![0usize; max + 1];
    for r in records {
        counts[r.graph.n()] += 1;
    }
    BlockCountPrior::from_counts(&counts)
}

/// Coordinate scale: RMS deviation of each molecule's atoms from its centroid,
/// pooled over all coordinate components.
pub fn coordinate_scale(records: &[MoleculeRecord]) -> Result<f64, DatasetError> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (k, r) in records.iter().enumerate() {
        let c = r.coords.as_ref().ok_or(DatasetError::MissingCoordinates(k))?;
        let pts = c.points();
        let m = centroid(&pts);
        for p in &pts {
            for d in 0..3 {
                sum += (p[d] - m[d]).powi(2);
            }
        }
        count += 3 * pts.len();
    }
    if count == 0 {
        return Err(DatasetError::Empty);
    }
    let z = (sum / count as f64).sqrt();
    Ok(if z > 0.0 { z } else { 1.0 })
}

/// A record on the `n × M` grid: centered coordinates divided by `Z_c` and
/// the atom-validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedRecord {
    pub graph: ReactionGraph,
    pub c0: Coords,
    pub s0: AtomMask,
}

pub fn prepare_records(
    records: &[MoleculeRecord],
    vocab: &Vocabulary,
    z_c: f64,
) -> Result<Vec<PreparedRecord>, DatasetError> {
    records
        .iter()
        .enumerate()
        .map(|(k, r)| prepare_record(r, vocab, z_c).map_err(|e| DatasetError::Inconsistent(k, e)))
        .collect()
}

pub fn prepare_record(r: &MoleculeRecord, vocab: &Vocabulary, z_c: f64) -> Result<PreparedRecord, String> {
    let report = crate::graph::check_validity(&r.graph, vocab);
    if !report.is_valid() {
        return Err(format!("invalid graph: {:?}", report.failures));
    }
    let s0 = atom_validity(&r.graph, vocab);
    let conf = r.coords.as_ref().ok_or("missing coordinates")?;
    if conf.len() != s0.count() {
        return Err(format!("{} coordinates for {} atoms", conf.len(), s0.count()));
    }
    let m = centroid(&conf.points());
    let mut c0 = Coords::zeros(r.graph.n(), vocab.max_atoms());
    for &((slot, local), p) in &conf.atoms {
        if slot >= s0.n() || local >= s0.m() || !s0.get(slot, local) {
            return Err(format!("coordinate for absent atom {slot}.{local}"));
        }
        c0.set(
            slot,
            local,
            [(p[0] - m[0]) / z_c, (p[1] - m[1]) / z_c, (p[2] - m[2]) / z_c],
        );
    }
    Ok(PreparedRecord {
        graph: r.graph.clone(),
        c0,
        s0,
    })
}

fn centroid(points: &[[f64; 3]]) -> [f64; 3] {
    let mut m = [0.0; 3];
    for p in points {
        for d in 0..3 {
            m[d] += p[d];
        }
    }
    let n = points.len().max(1) as f64;
    m.map(|v| v / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::check_validity;

    fn toy() -> Vocabulary {
        Vocabulary::from_toml_str(include_str!("../data/toy.toml")).unwrap()
    }

    #[test]
    fn zero_steps_single_block() {
        let v = toy();
        let mut rng = record_rng(1, 0);
        let (g, _) = generate_graph(&v, 0, &mut rng);
        assert_eq!(g.n(), 1);
        assert_eq!(g.concrete_edges().count(), 0);
    }

    #[test]
    fn no_centers_breaks_early() {
        let v = Vocabulary::from_toml_str(
            r#"
            [[blocks]]
            id = 0
            atoms = [["C", false]]
            "#,
        )
        .unwrap();
        let mut rng = record_rng(1, 0);
        let (g, _) = generate_graph(&v, 3, &mut rng);
        assert_eq!(g.n(), 1);
    }

    #[test]
    fn generated_graphs_are_valid() {
        let v = toy();
        for i in 0..200 {
            let mut rng = record_rng(9, i);
            let (g, _) = generate_graph(&v, 4, &mut rng);
            assert!(check_validity(&g, &v).is_valid());
        }
    }

    #[test]
    fn prior_examples() {
        let recs: Vec<_> = [
            "n=3 x=0,0,0 e=",
            "n=3 x=0,0,0 e=",
            "n=4 x=0,0,0,0 e=",
            "n=4 x=0,0,0,0 e=",
        ]
        .iter()
        .map(|l| MoleculeRecord::parse_line(l, 1).unwrap())
        .collect();
        let p = estimate_block_count_prior(&recs).unwrap();
        assert_eq!(p.prob(3), 0.5);
        assert_eq!(p.prob(4), 0.5);
        assert_eq!(p.prob(2), 0.0);
        let single = estimate_block_count_prior(&recs[..1]).unwrap();
        assert_eq!(single.prob(3), 1.0);
        assert!(estimate_block_count_prior(&[]).is_err());
    }

    #[test]
    fn config_validation() {
        let cfg = GenConfig {
            depth_min: 3,
            depth_max: 2,
            ..GenConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = GenConfig {
            depth_min: 0,
            ..GenConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
