//! Count-table denoiser with a mean-conformer coordinate head.
//!
//! Node and edge distributions are empirical counts keyed by slot position,
//! observed neighbor evidence and time bucket, blended toward coarser keys
//! when a key has few observations. Coordinates come from the mean
//! conformer of the predicted graph when it occurred in training, otherwise
//! from per-block mean atom offsets placed on the current noisy coordinates.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use log::info;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::losses::{combine, intra_block_bonds, loss_bond, loss_graph, loss_mse, loss_pair, loss_slddt, TrainConfig};
use super::{Denoiser, DenoiserError, DenoiserInput, DenoiserOutput};
use crate::dataset::{record_rng, BlockCountPrior, PreparedRecord};
use crate::diffusion::{forward_noise, loss_weight, NoiseSchedule};
use crate::flow::{kabsch_align, pair_data_aligned, AtomMask, Coords};
use crate::graph::{EdgeCodec, EdgeLabel, NodeState, ReactionGraph};
use crate::vocabulary::Vocabulary;

pub const FORMAT_VERSION: u32 = 1;

/// Additive mass per channel after normalizing counts.
const SMOOTHING: f64 = 1e-9;
/// Pseudo-count pulling a key's distribution toward its coarser parent.
const BLEND: f64 = 1.0;
/// Minimum joint probability of the argmax graph for using its conformer.
const TEMPLATE_CONFIDENCE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub epochs: usize,
    pub seed: u64,
    pub time_buckets: usize,
    pub schedule: NoiseSchedule,
    /// Scale of the Gaussian coordinate prior in normalized units.
    pub noise_scale: f64,
    /// Grid resolution used for the loss weight `w_t`.
    pub steps: usize,
    /// Records drawn for the per-epoch evaluation loss.
    pub eval_records: usize,
    pub train: TrainConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            epochs: 5,
            seed: 0,
            time_buckets: 10,
            schedule: NoiseSchedule::default(),
            noise_scale: 0.2,
            steps: 100,
            eval_records: 64,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    /// Weighted graph cross-entropy.
    pub graph: f64,
    /// Unweighted graph cross-entropy.
    pub nll: f64,
    pub mse: f64,
    pub pair: f64,
    pub slddt: f64,
    pub bond: f64,
    pub total: f64,
    /// Standard error of `total` across evaluation records.
    pub total_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabularDenoiser {
    format_version: u32,
    blocks: usize,
    reactions: usize,
    max_centers: usize,
    max_atoms: usize,
    time_buckets: usize,
    /// Coordinate scale `Z_c` of the training data.
    pub z_c: f64,
    pub fit: FitConfig,
    node_counts: BTreeMap<String, Vec<f64>>,
    edge_counts: BTreeMap<String, Vec<f64>>,
    /// Mean centered conformer on the `n × M` grid, keyed by exact graph.
    conformers: BTreeMap<String, Vec<Option<[f64; 3]>>>,
    /// Per block: mean atom offsets from the block centroid, and how many
    /// observations each atom had.
    block_shapes: BTreeMap<usize, (Vec<[f64; 3]>, Vec<usize>)>,
    /// Training frequency of each block count `n`.
    block_prior: Vec<f64>,
    pub history: Vec<EpochLoss>,
}

fn bucket(t: f64, buckets: usize) -> usize {
    ((t * buckets as f64) as usize).min(buckets - 1)
}

fn node_code(s: NodeState) -> String {
    match s {
        NodeState::Block(b) => b.to_string(),
        NodeState::Mask => "m".into(),
    }
}

fn edge_code(e: EdgeLabel, codec: &EdgeCodec) -> String {
    match e {
        EdgeLabel::Mask => "m".into(),
        e => codec.encode(e).expect("label fits codec").to_string(),
    }
}

/// Node keys from most to least specific.
fn node_keys(g: &ReactionGraph, i: usize, tb: usize, codec: &EdgeCodec) -> [String; 3] {
    let n = g.n();
    let mut ev = String::new();
    for j in 0..n {
        if j == i {
            continue;
        }
        let (a, b) = (i.min(j), i.max(j));
        let e = g.edge(a, b);
        if e.is_concrete() {
            let _ = write!(ev, "{j}:{}:{};", edge_code(e, codec), node_code(g.node(j)));
        }
    }
    [
        format!("{n}|{i}|{ev}|{tb}"),
        format!("{n}|{i}|{ev}"),
        format!("{n}|{i}"),
    ]
}

fn edge_keys(g: &ReactionGraph, i: usize, j: usize, tb: usize) -> [String; 3] {
    let n = g.n();
    let (xi, xj) = (node_code(g.node(i)), node_code(g.node(j)));
    [
        format!("{n}|{i}|{j}|{xi}|{xj}|{tb}"),
        format!("{n}|{i}|{j}|{xi}|{xj}"),
        format!("{n}|{i}|{j}"),
    ]
}

fn graph_key(g: &ReactionGraph, codec: &EdgeCodec) -> String {
    let mut s = format!("{}|", g.n());
    for x in g.nodes() {
        let _ = write!(s, "{},", node_code(*x));
    }
    s.push('|');
    for (i, j, e) in g.upper() {
        if e.is_concrete() {
            let _ = write!(s, "{i}-{j}:{};", edge_code(e, codec));
        }
    }
    s
}

/// Counts blended from the coarsest key to the most specific, each level
/// shrunk toward its parent with pseudo-count `BLEND`.
fn lookup(table: &BTreeMap<String, Vec<f64>>, keys: &[String], width: usize) -> Vec<f64> {
    let mut p = vec![1.0 / width as f64; width];
    let mut seen = false;
    for k in keys.iter().rev() {
        if let Some(c) = table.get(k) {
            let total: f64 = c.iter().sum();
            if total > 0.0 {
                let prior = if seen { BLEND } else { 0.0 };
                for (pk, ck) in p.iter_mut().zip(c) {
                    *pk = (ck + prior * *pk) / (total + prior);
                }
                seen = true;
            }
        }
    }
    let z = 1.0 + width as f64 * SMOOTHING;
    p.iter().map(|v| (v + SMOOTHING) / z).collect()
}

fn bump(table: &mut BTreeMap<String, Vec<f64>>, keys: [String; 3], width: usize, k: usize) {
    for key in keys {
        table.entry(key).or_insert_with(|| vec![0.0; width])[k] += 1.0;
    }
}

fn cells(c: &Coords, s: &AtomMask) -> (Vec<usize>, Vec<[f64; 3]>) {
    let idx: Vec<usize> = (0..s.bits().len()).filter(|&k| s.bits()[k]).collect();
    let pts = idx.iter().map(|&k| c.cells()[k]).collect();
    (idx, pts)
}

fn mean(points: &[[f64; 3]]) -> [f64; 3] {
    let mut m = [0.0; 3];
    for p in points {
        for d in 0..3 {
            m[d] += p[d];
        }
    }
    m.map(|v| v / points.len().max(1) as f64)
}

/// Rotates and translates `p` onto `q` (both the same length).
fn superpose(p: &[[f64; 3]], q: &[[f64; 3]]) -> Vec<[f64; 3]> {
    let pc = mean(p);
    let qc = mean(q);
    let k = kabsch_align(p, q, &vec![1.0; p.len()]);
    p.iter()
        .map(|x| {
            let v = k.rotation * nalgebra::Vector3::new(x[0] - pc[0], x[1] - pc[1], x[2] - pc[2]);
            [v.x + qc[0], v.y + qc[1], v.z + qc[2]]
        })
        .collect()
}

impl TabularDenoiser {
    pub fn new(vocab: &Vocabulary, z_c: f64, fit: FitConfig) -> Self {
        TabularDenoiser {
            format_version: FORMAT_VERSION,
            blocks: vocab.num_blocks(),
            reactions: vocab.num_reactions(),
            max_centers: vocab.max_centers(),
            max_atoms: vocab.max_atoms(),
            time_buckets: fit.time_buckets.max(1),
            z_c,
            fit,
            node_counts: BTreeMap::new(),
            edge_counts: BTreeMap::new(),
            conformers: BTreeMap::new(),
            block_shapes: BTreeMap::new(),
            block_prior: Vec::new(),
            history: Vec::new(),
        }
    }

    /// Block-count distribution of the training records.
    pub fn block_count_prior(&self) -> Option<BlockCountPrior> {
        BlockCountPrior::from_probs(self.block_prior.clone()).ok()
    }

    pub fn codec(&self) -> EdgeCodec {
        EdgeCodec::new(self.reactions, self.max_centers)
    }

    /// Checks that the model was fit against a vocabulary of the same shape.
    pub fn check_vocab(&self, vocab: &Vocabulary) -> Result<(), DenoiserError> {
        let want = (
            vocab.num_blocks(),
            vocab.num_reactions(),
            vocab.max_centers(),
            vocab.max_atoms(),
        );
        let have = (self.blocks, self.reactions, self.max_centers, self.max_atoms);
        if want != have {
            return Err(DenoiserError::Shape(format!(
                "model dims (B, R, V, M) = {have:?} but vocabulary has {want:?}"
            )));
        }
        Ok(())
    }

    /// Fits count tables and the coordinate head, recording an evaluation loss
    /// after every epoch.
    pub fn fit(
        records: &[PreparedRecord],
        vocab: &Vocabulary,
        z_c: f64,
        cfg: FitConfig,
    ) -> Result<Self, DenoiserError> {
        if records.is_empty() {
            return Err(DenoiserError::EmptyDataset);
        }
        cfg.train.validate().map_err(DenoiserError::Other)?;
        if cfg.time_buckets == 0 || cfg.steps == 0 {
            return Err(DenoiserError::Other("time_buckets and steps must be positive".into()));
        }
        let mut model = TabularDenoiser::new(vocab, z_c, cfg);
        model.fit_coordinates(records);
        let max_n = records.iter().map(|r| r.graph.n()).max().unwrap_or(0);
        model.block_prior = vec![0.0; max_n + 1];
        for r in records {
            model.block_prior[r.graph.n()] += 1.0 / records.len() as f64;
        }
        let codec = model.codec();
        let (b, k1) = (model.blocks, codec.concrete() + 1);
        let eval: Vec<usize> = (0..records.len().min(cfg.eval_records.max(1))).collect();
        for epoch in 0..cfg.epochs {
            for (k, rec) in records.iter().enumerate() {
                let mut rng = record_rng(cfg.seed, (epoch * records.len() + k) as u64);
                let t: f64 = rng.random();
                let z = forward_noise(&rec.graph, t, &cfg.schedule, &mut rng)
                    .map_err(|e| DenoiserError::Other(e.to_string()))?;
                let tb = bucket(t, model.time_buckets);
                for i in 0..z.n() {
                    if z.node(i).is_mask() {
                        let truth = rec.graph.node(i).block().expect("clean graph");
                        bump(&mut model.node_counts, node_keys(&z, i, tb, &codec), b, truth);
                    }
                }
                for (i, j, e) in z.upper() {
                    if e.is_mask() {
                        let truth = match rec.graph.edge(i, j) {
                            EdgeLabel::NoEdge => k1 - 1,
                            e => codec.encode(e).expect("label fits codec"),
                        };
                        bump(&mut model.edge_counts, edge_keys(&z, i, j, tb), k1, truth);
                    }
                }
            }
            let loss = model.evaluate(records, &eval, vocab, epoch)?;
            info!(
                "epoch {epoch}: total {:.6} graph {:.6} mse {:.6} pair {:.6}",
                loss.total, loss.graph, loss.mse, loss.pair
            );
            model.history.push(loss);
        }
        Ok(model)
    }

    fn fit_coordinates(&mut self, records: &[PreparedRecord]) {
        let codec = self.codec();
        let m = self.max_atoms;
        let mut groups: BTreeMap<String, (Vec<[f64; 3]>, usize, AtomMask)> = BTreeMap::new();
        let mut shapes: BTreeMap<usize, (Vec<[f64; 3]>, Vec<[f64; 3]>, Vec<usize>)> = BTreeMap::new();
        for rec in records {
            let (idx, pts) = cells(&rec.c0, &rec.s0);
            let entry = groups
                .entry(graph_key(&rec.graph, &codec))
                .or_insert_with(|| (pts.clone(), 0, rec.s0.clone()));
            // Same graph implies the same atom set, so cells line up.
            let (ref_idx, _) = cells(&rec.c0, &entry.2);
            if ref_idx == idx {
                let reference: Vec<[f64; 3]> = if entry.1 == 0 {
                    pts.clone()
                } else {
                    entry.0.iter().map(|p| p.map(|v| v / entry.1 as f64)).collect()
                };
                let fitted = superpose(&pts, &reference);
                if entry.1 == 0 {
                    entry.0 = fitted;
                } else {
                    for (acc, p) in entry.0.iter_mut().zip(&fitted) {
                        for d in 0..3 {
                            acc[d] += p[d];
                        }
                    }
                }
                entry.1 += 1;
            }
            for i in 0..rec.graph.n() {
                let b = rec.graph.node(i).block().expect("clean graph");
                let atoms: Vec<usize> = (0..m).filter(|&a| rec.s0.get(i, a)).collect();
                let local: Vec<[f64; 3]> = atoms.iter().map(|&a| rec.c0.get(i, a)).collect();
                let c = mean(&local);
                let local: Vec<[f64; 3]> = local.iter().map(|p| [p[0] - c[0], p[1] - c[1], p[2] - c[2]]).collect();
                let slot = shapes
                    .entry(b)
                    .or_insert_with(|| (vec![[0.0; 3]; m], vec![[0.0; 3]; m], vec![0; m]));
                let have: Vec<usize> = atoms.iter().copied().filter(|&a| slot.2[a] > 0).collect();
                let fitted = if have.len() >= 3 {
                    // Align on atoms already in the reference shape.
                    let p: Vec<[f64; 3]> = have
                        .iter()
                        .map(|&a| local[atoms.iter().position(|x| *x == a).unwrap()])
                        .collect();
                    let q: Vec<[f64; 3]> = have.iter().map(|&a| slot.0[a]).collect();
                    let pc = mean(&p);
                    let qc = mean(&q);
                    let k = kabsch_align(&p, &q, &vec![1.0; p.len()]);
                    local
                        .iter()
                        .map(|x| {
                            let v = k.rotation * nalgebra::Vector3::new(x[0] - pc[0], x[1] - pc[1], x[2] - pc[2]);
                            [v.x + qc[0], v.y + qc[1], v.z + qc[2]]
                        })
                        .collect()
                } else {
                    local
                };
                for (pos, &a) in atoms.iter().enumerate() {
                    for d in 0..3 {
                        slot.1[a][d] += fitted[pos][d];
                    }
                    slot.2[a] += 1;
                    slot.0[a] = slot.1[a].map(|v| v / slot.2[a] as f64);
                }
            }
        }
        for (key, (sum, count, s0)) in groups {
            let (idx, _) = cells(&Coords::zeros(s0.n(), s0.m()), &s0);
            let pts: Vec<[f64; 3]> = sum.iter().map(|p| p.map(|v| v / count.max(1) as f64)).collect();
            let c = mean(&pts);
            let mut grid = vec![None; s0.n() * s0.m()];
            for (&k, p) in idx.iter().zip(&pts) {
                grid[k] = Some([p[0] - c[0], p[1] - c[1], p[2] - c[2]]);
            }
            self.conformers.insert(key, grid);
        }
        for (b, (shape, _, count)) in shapes {
            self.block_shapes.insert(b, (shape, count));
        }
    }

    /// Mean losses over the evaluation records at seeded noise levels.
    fn evaluate(
        &self,
        records: &[PreparedRecord],
        eval: &[usize],
        vocab: &Vocabulary,
        epoch: usize,
    ) -> Result<EpochLoss, DenoiserError> {
        let cfg = &self.fit;
        let tc = &cfg.train;
        let codec = self.codec();
        let mut acc = EpochLoss {
            epoch,
            graph: 0.0,
            nll: 0.0,
            mse: 0.0,
            pair: 0.0,
            slddt: 0.0,
            bond: 0.0,
            total: 0.0,
            total_se: 0.0,
        };
        let mut sq = 0.0;
        let dt = 1.0 / cfg.steps as f64;
        for &k in eval {
            let rec = &records[k];
            // Independent of the epoch so every epoch sees the same inputs.
            let mut rng = record_rng(cfg.seed ^ 0x5eed_e7a1, k as u64);
            let t: f64 = rng.random_range(dt..=1.0);
            let z = forward_noise(&rec.graph, t, &cfg.schedule, &mut rng)
                .map_err(|e| DenoiserError::Other(e.to_string()))?;
            let c1 = Coords::gaussian(rec.graph.n(), self.max_atoms, cfg.noise_scale, &mut rng);
            let pair =
                pair_data_aligned(&rec.c0, &rec.s0, &c1, t, &z).map_err(|e| DenoiserError::Shape(e.to_string()))?;
            let input = DenoiserInput {
                graph: &z,
                coords: &pair.ct,
                visibility: &pair.st,
                t,
                prior: None,
            };
            let out = self.denoise(&input, &mut rng)?;
            let w = loss_weight(&cfg.schedule, t, t - dt).w;
            let nll = loss_graph(&out, &rec.graph, &codec, 1.0);
            let mse = loss_mse(&out.coords, &pair.c0, &rec.s0)?;
            let pair_l = loss_pair(&out.coords, &pair.c0, &rec.s0, tc.pair_cutoff / self.z_c)?;
            let mut pred_a = out.coords.clone();
            pred_a.scale(self.z_c);
            let mut true_a = pair.c0.clone();
            true_a.scale(self.z_c);
            let slddt = if tc.auxiliary {
                loss_slddt(&pred_a, &true_a, &rec.s0, tc.slddt_cutoff, &tc.slddt_thresholds).unwrap_or(0.0)
            } else {
                0.0
            };
            let bonds = intra_block_bonds(&rec.graph, vocab, &rec.s0);
            let bond = if tc.auxiliary && !bonds.is_empty() {
                loss_bond(&pred_a, &true_a, &bonds, t, tc.bond_time_threshold)?
            } else {
                0.0
            };
            let b = combine(tc, w * nll, mse, pair_l, slddt, bond);
            acc.graph += b.graph;
            acc.nll += nll;
            acc.mse += b.mse;
            acc.pair += b.pair;
            acc.slddt += b.slddt;
            acc.bond += b.bond;
            acc.total += b.total;
            sq += b.total * b.total;
        }
        let c = eval.len() as f64;
        for v in [
            &mut acc.graph,
            &mut acc.nll,
            &mut acc.mse,
            &mut acc.pair,
            &mut acc.slddt,
            &mut acc.bond,
            &mut acc.total,
        ] {
            *v /= c;
        }
        if eval.len() > 1 {
            let var = (sq / c - acc.total * acc.total).max(0.0) * c / (c - 1.0);
            acc.total_se = (var / c).sqrt();
        }
        Ok(acc)
    }

    fn predict_coords(&self, input: &DenoiserInput<'_>, guess: &ReactionGraph, confidence: f64) -> Coords {
        let (n, m) = (guess.n(), self.max_atoms);
        let st = input.visibility;
        let ct = input.coords;
        // Dummy atoms stay where they are along the path.
        let mut pred = Coords::zeros(n, m);
        for k in 0..n * m {
            if st.bits()[k] {
                pred.cells_mut()[k] = ct.cells()[k];
            }
        }
        let template = if confidence >= TEMPLATE_CONFIDENCE {
            self.conformers.get(&graph_key(guess, &self.codec()))
        } else {
            None
        };
        if let Some(grid) = template {
            let idx: Vec<usize> = (0..n * m).filter(|&k| st.bits()[k] && grid[k].is_some()).collect();
            if !idx.is_empty() {
                let p: Vec<[f64; 3]> = idx.iter().map(|&k| grid[k].expect("filtered")).collect();
                let q: Vec<[f64; 3]> = idx.iter().map(|&k| ct.cells()[k]).collect();
                for (&k, v) in idx.iter().zip(superpose(&p, &q)) {
                    pred.cells_mut()[k] = v;
                }
                return pred;
            }
        }
        for i in 0..n {
            let Some(b) = guess.node(i).block() else { continue };
            let Some((shape, count)) = self.block_shapes.get(&b) else {
                continue;
            };
            let atoms: Vec<usize> = (0..m).filter(|&a| st.get(i, a) && count[a] > 0).collect();
            if atoms.is_empty() {
                continue;
            }
            let p: Vec<[f64; 3]> = atoms.iter().map(|&a| shape[a]).collect();
            let q: Vec<[f64; 3]> = atoms.iter().map(|&a| ct.get(i, a)).collect();
            for (&a, v) in atoms.iter().zip(superpose(&p, &q)) {
                pred.set(i, a, v);
            }
        }
        pred
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let s = serde_json::to_string(self).map_err(std::io::Error::other)?;
        std::fs::write(path, s)
    }

    pub fn load(path: &Path) -> Result<Self, DenoiserError> {
        let s = std::fs::read_to_string(path).map_err(|e| DenoiserError::Other(format!("{}: {e}", path.display())))?;
        Self::from_json(&s)
    }

    pub fn from_json(s: &str) -> Result<Self, DenoiserError> {
        let m: TabularDenoiser =
            serde_json::from_str(s).map_err(|e| DenoiserError::Other(format!("model file: {e}")))?;
        if m.format_version != FORMAT_VERSION {
            return Err(DenoiserError::Other(format!(
                "model format version {} not supported (expected {FORMAT_VERSION})",
                m.format_version
            )));
        }
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }
}

impl Denoiser for TabularDenoiser {
    fn denoise(&self, input: &DenoiserInput<'_>, _rng: &mut dyn RngCore) -> Result<DenoiserOutput, DenoiserError> {
        let g = input.graph;
        let n = g.n();
        let m = self.max_atoms;
        if input.coords.n() != n || input.coords.m() != m || input.visibility.n() != n || input.visibility.m() != m {
            return Err(DenoiserError::Shape(format!("coordinates do not match n={n}, M={m}")));
        }
        let codec = self.codec();
        let k1 = codec.concrete() + 1;
        let tb = bucket(input.t.clamp(0.0, 1.0), self.time_buckets);
        let mut out = DenoiserOutput::uniform(n, self.blocks, k1, m);
        for i in 0..n {
            if g.node(i).is_mask() {
                let row = lookup(&self.node_counts, &node_keys(g, i, tb, &codec), self.blocks);
                out.node_row_mut(i).copy_from_slice(&row);
            }
        }
        for i in 0..n {
            for j in i + 1..n {
                if g.edge(i, j).is_mask() {
                    let row = lookup(&self.edge_counts, &edge_keys(g, i, j, tb), k1);
                    out.set_edge_row(i, j, &row);
                }
            }
        }
        out.enforce_carry_over(g, &codec);
        let guess = out.argmax_graph(&codec);
        let mut confidence = 1.0;
        for i in 0..n {
            if g.node(i).is_mask() {
                confidence *= out.node_row(i).iter().cloned().fold(0.0, f64::max);
            }
            for j in i + 1..n {
                if g.edge(i, j).is_mask() {
                    confidence *= out.edge_row(i, j).iter().cloned().fold(0.0, f64::max);
                }
            }
        }
        out.coords = self.predict_coords(input, &guess, confidence);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{coordinate_scale, generate_dataset, prepare_records, GenConfig};
    use crate::denoiser::{OracleDenoiser, OracleMode};
    use crate::flow::{aligned_rmsd, pair_data};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy() -> Vocabulary {
        Vocabulary::from_toml_str(include_str!("../../data/toy.toml")).unwrap()
    }

    fn data(count: usize, seed: u64) -> (Vocabulary, Vec<PreparedRecord>, f64) {
        let v = toy();
        let cfg = GenConfig {
            count,
            seed,
            depth_min: 1,
            depth_max: 2,
            ..GenConfig::default()
        };
        let recs = generate_dataset(&v, &cfg).unwrap();
        let z = coordinate_scale(&recs).unwrap();
        let prepared = prepare_records(&recs, &v, z).unwrap();
        (v, prepared, z)
    }

    #[test]
    fn single_record_matches_oracle() {
        let (v, recs, z) = data(1, 3);
        let rec = recs[0].clone();
        let cfg = FitConfig {
            epochs: 3,
            schedule: NoiseSchedule::loglinear(1e-3),
            ..FitConfig::default()
        };
        let model = TabularDenoiser::fit(&recs, &v, z, cfg).unwrap();
        let oracle = OracleDenoiser::new(recs, &v, OracleMode::Marginal).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..40 {
            let t = (trial as f64 + 0.5) / 40.0;
            let x_t = forward_noise(&rec.graph, t, &NoiseSchedule::loglinear(1e-3), &mut rng).unwrap();
            let c1 = Coords::gaussian(rec.graph.n(), v.max_atoms(), 0.2, &mut rng);
            let pair = pair_data(&rec.c0, &rec.s0, &c1, t, &x_t).unwrap();
            let input = DenoiserInput {
                graph: &x_t,
                coords: &pair.ct,
                visibility: &pair.st,
                t,
                prior: Some(&pair.c1),
            };
            let a = model.denoise(&input, &mut rng).unwrap();
            let b = oracle.denoise(&input, &mut rng).unwrap();
            for i in 0..x_t.n() {
                for (p, q) in a.node_row(i).iter().zip(b.node_row(i)) {
                    assert!((p - q).abs() < 1e-6);
                }
                for j in 0..x_t.n() {
                    for (p, q) in a.edge_row(i, j).iter().zip(b.edge_row(i, j)) {
                        assert!((p - q).abs() < 1e-6);
                    }
                }
            }
            let (_, pa) = cells(&a.coords, &rec.s0);
            let (_, pb) = cells(&b.coords, &rec.s0);
            assert!(aligned_rmsd(&pa, &pb) < 1e-6);
        }
    }

    #[test]
    fn json_round_trip() {
        let (v, recs, z) = data(12, 5);
        let cfg = FitConfig {
            epochs: 2,
            ..FitConfig::default()
        };
        let model = TabularDenoiser::fit(&recs, &v, z, cfg).unwrap();
        let back = TabularDenoiser::from_json(&model.to_json()).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.to_json(), model.to_json());
        assert!(back.check_vocab(&v).is_ok());
        let bumped = model.to_json().replace("\"format_version\":1", "\"format_version\":99");
        assert!(TabularDenoiser::from_json(&bumped).is_err());
    }

    #[test]
    fn empty_dataset_rejected() {
        let v = toy();
        assert_eq!(
            TabularDenoiser::fit(&[], &v, 1.0, FitConfig::default()).unwrap_err(),
            DenoiserError::EmptyDataset
        );
    }

    #[test]
    fn deterministic_under_seed() {
        let (v, recs, z) = data(10, 8);
        let cfg = FitConfig {
            epochs: 2,
            seed: 4,
            ..FitConfig::default()
        };
        let a = TabularDenoiser::fit(&recs, &v, z, cfg).unwrap();
        let b = TabularDenoiser::fit(&recs, &v, z, cfg).unwrap();
        assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn training_loss_decreases() {
        let (v, recs, z) = data(40, 2);
        let cfg = FitConfig {
            epochs: 8,
            schedule: NoiseSchedule::loglinear(1e-3),
            ..FitConfig::default()
        };
        let model = TabularDenoiser::fit(&recs, &v, z, cfg).unwrap();
        let h = &model.history;
        assert!(h.last().unwrap().total < h[0].total, "{h:?}");
        assert!(h.last().unwrap().nll < h[0].nll, "{h:?}");
        for w in h.windows(2) {
            assert!(
                w[1].total <= w[0].total + 2.0 * w[0].total_se.max(w[1].total_se),
                "{h:?}"
            );
        }
    }
}
