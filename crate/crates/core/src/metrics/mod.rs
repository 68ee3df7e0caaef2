//! Evaluation metrics over generated molecule sets.

pub mod conformer;
pub mod distance;
pub mod fingerprint;
pub mod geometry;
pub mod kde;

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

pub use conformer::{cov_mat, CovMat, DEFAULT_TAU};
pub use distance::{histogram, jsd, wasserstein1, Topology};
pub use fingerprint::{diversity_uniqueness_novelty, fingerprint, Fingerprint, SetStatistics};
pub use geometry::{extract_geometry, GeometryKind, GeometrySamples};

use crate::graph::{assemble_atom_graph, canonical_code, check_validity, AtomGraph};
use crate::record::MoleculeRecord;
use crate::vocabulary::Vocabulary;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("empty sample set")]
    Empty,
    #[error("non-finite or negative value in input")]
    NonFinite,
    #[error("binning mismatch: {0} vs {1}")]
    Binning(usize, usize),
    #[error("need at least 2 samples, got {0}")]
    TooFew(usize),
    #[error("atom count mismatch: {0} vs {1}")]
    AtomCount(usize, usize),
}

pub const LENGTH_BINS: (f64, f64, usize) = (0.0, 4.0, 80);
pub const ANGLE_BINS: (f64, f64, usize) = (0.0, 360.0, 72);

pub fn validity_rate(records: &[MoleculeRecord], vocab: &Vocabulary) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    let ok = records
        .iter()
        .filter(|r| check_validity(&r.graph, vocab).is_valid())
        .count();
    ok as f64 / records.len() as f64
}

/// Per-atom coordinates in atom-graph order, if the conformer covers every atom.
pub fn atom_coordinates(atoms: &AtomGraph, record: &MoleculeRecord) -> Option<Vec<[f64; 3]>> {
    let conf = record.coords.as_ref()?;
    (0..atoms.atoms().len())
        .map(|a| {
            let (slot, local) = atoms.provenance(a);
            conf.get(slot, local)
        })
        .collect()
}

struct Analyzed {
    valid: bool,
    code: Option<Vec<u8>>,
    graph_key: String,
    fingerprint: Option<Fingerprint>,
    coords: Option<Vec<[f64; 3]>>,
    geometry: Option<GeometrySamples>,
}

fn analyze(records: &[MoleculeRecord], vocab: &Vocabulary) -> Vec<Analyzed> {
    records
        .par_iter()
        .map(|r| {
            let valid = check_validity(&r.graph, vocab).is_valid();
            let graph_key = MoleculeRecord {
                graph: r.graph.clone(),
                coords: None,
            }
            .to_line();
            if !valid {
                return Analyzed {
                    valid,
                    code: None,
                    graph_key,
                    fingerprint: None,
                    coords: None,
                    geometry: None,
                };
            }
            let atoms = assemble_atom_graph(&r.graph, vocab).ok();
            let coords = atoms.as_ref().and_then(|a| atom_coordinates(a, r));
            let geometry = match (&atoms, &coords) {
                (Some(a), Some(c)) => Some(extract_geometry(a, c)),
                _ => None,
            };
            Analyzed {
                valid,
                code: canonical_code(&r.graph).ok(),
                graph_key,
                fingerprint: atoms.as_ref().map(fingerprint),
                coords,
                geometry,
            }
        })
        .collect()
}

fn merge(items: &[Analyzed]) -> GeometrySamples {
    let mut out = GeometrySamples::new();
    for g in items.iter().filter_map(|a| a.geometry.as_ref()) {
        for (k, v) in g {
            out.entry(k.clone()).or_default().extend_from_slice(v);
        }
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct GeometryComparison {
    pub kind: GeometryKind,
    pub key: String,
    pub generated: usize,
    pub reference: usize,
    pub w1: f64,
    pub jsd: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConformerMatch {
    pub graph: String,
    pub generated: usize,
    pub reference: usize,
    #[serde(flatten)]
    pub scores: CovMat,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub generated: usize,
    pub reference: usize,
    pub validity: f64,
    pub with_coordinates: usize,
    pub geometry: Vec<GeometryComparison>,
    pub set_statistics: Option<SetStatistics>,
    pub tau: f64,
    /// Grouped by identical reaction graph so atom orders agree.
    pub conformers: Vec<ConformerMatch>,
}

pub struct Evaluation {
    pub report: EvalReport,
    pub generated_geometry: GeometrySamples,
    pub reference_geometry: GeometrySamples,
}

/// Compares generated molecules against a reference set that also serves as
/// the training set for novelty.
pub fn evaluate(
    generated: &[MoleculeRecord],
    reference: &[MoleculeRecord],
    vocab: &Vocabulary,
    tau: f64,
) -> Evaluation {
    let gen = analyze(generated, vocab);
    let refs = analyze(reference, vocab);
    let gen_geo = merge(&gen);
    let ref_geo = merge(&refs);

    let mut geometry = Vec::new();
    for (k, a) in &gen_geo {
        let Some(b) = ref_geo.get(k) else { continue };
        let (lo, hi, bins) = match k.0 {
            GeometryKind::BondLength => LENGTH_BINS,
            _ => ANGLE_BINS,
        };
        let (Ok(w1), Ok(j)) = (
            wasserstein1(a, b, k.0.topology()),
            jsd(&histogram(a, lo, hi, bins), &histogram(b, lo, hi, bins)),
        ) else {
            continue;
        };
        geometry.push(GeometryComparison {
            kind: k.0,
            key: k.1.clone(),
            generated: a.len(),
            reference: b.len(),
            w1,
            jsd: j,
        });
    }

    let training: BTreeSet<Vec<u8>> = refs.iter().filter_map(|a| a.code.clone()).collect();
    let (fps, codes): (Vec<Fingerprint>, Vec<Vec<u8>>) = gen
        .iter()
        .filter_map(|a| Some((a.fingerprint.clone()?, a.code.clone()?)))
        .unzip();
    let set_statistics = diversity_uniqueness_novelty(&fps, &codes, &training).ok();

    let mut by_graph: BTreeMap<&str, (Vec<Vec<[f64; 3]>>, Vec<Vec<[f64; 3]>>)> = BTreeMap::new();
    for a in &gen {
        if let Some(c) = &a.coords {
            by_graph.entry(&a.graph_key).or_default().0.push(c.clone());
        }
    }
    for a in &refs {
        if let Some(c) = &a.coords {
            if let Some(e) = by_graph.get_mut(a.graph_key.as_str()) {
                e.1.push(c.clone());
            }
        }
    }
    let conformers = by_graph
        .into_iter()
        .filter_map(|(key, (g, r))| {
            let scores = cov_mat(&g, &r, tau).ok()?;
            Some(ConformerMatch {
                graph: key.to_string(),
                generated: g.len(),
                reference: r.len(),
                scores,
            })
        })
        .collect();

    Evaluation {
        report: EvalReport {
            generated: generated.len(),
            reference: reference.len(),
            validity: if gen.is_empty() {
                0.0
            } else {
                gen.iter().filter(|a| a.valid).count() as f64 / gen.len() as f64
            },
            with_coordinates: gen.iter().filter(|a| a.coords.is_some()).count(),
            geometry,
            set_statistics,
            tau,
            conformers,
        },
        generated_geometry: gen_geo,
        reference_geometry: ref_geo,
    }
}
