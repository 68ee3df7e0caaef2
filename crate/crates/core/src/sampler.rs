//! Unconditional generation and inpainting over any denoiser.
//!
//! Each trajectory walks a uniform descending time grid `t_k = (steps − k)/steps`.
//! At every grid point the coordinates are recentered on the visibility mask,
//! the denoiser is called, the graph takes one reverse step and the
//! coordinates one Euler step. A final deterministic pass at `t = 0` reads
//! off the argmax graph and the recentered coordinate estimate.

use log::warn;
use rand::{Rng, RngCore};
use rayon::prelude::*;
use thiserror::Error;

use crate::constraints::{apply_all, Completer, Completion, ConstraintError};
use crate::dataset::{record_rng, BlockCountPrior};
use crate::denoiser::{check_contract, Denoiser, DenoiserError, DenoiserInput, DenoiserOutput};
use crate::diffusion::{reverse_step, sample_categorical, DiffusionError, NoiseSchedule};
use crate::flow::{
    atom_validity, center, euler_step, masked_centroid, visibility_mask, AtomMask, Coords, FlowConfig, FlowError,
};
use crate::graph::{EdgeCodec, EdgeLabel, NodeState, ReactionGraph};
use crate::record::{Conformer, MoleculeRecord};
use crate::vocabulary::{BlockId, Vocabulary};

#[derive(Debug, Error)]
pub enum SampleError {
    #[error("denoiser: {0}")]
    Denoiser(#[from] DenoiserError),
    #[error("constraints: {0}")]
    Constraint(#[from] ConstraintError),
    #[error("diffusion: {0}")]
    Diffusion(#[from] DiffusionError),
    #[error("coordinates: {0}")]
    Flow(#[from] FlowError),
    #[error("no completable value left for {0}")]
    Deadlock(String),
    #[error("inpainting spec: {0}")]
    Spec(String),
    #[error("sampler config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum BlockCount {
    Fixed(usize),
    Prior(BlockCountPrior),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleConfig {
    pub steps: usize,
    pub schedule: NoiseSchedule,
    pub flow: FlowConfig,
    pub constraints: bool,
    pub block_count: BlockCount,
}

impl SampleConfig {
    pub fn new(block_count: BlockCount) -> Self {
        SampleConfig {
            steps: 100,
            schedule: NoiseSchedule::default(),
            flow: FlowConfig::default(),
            constraints: true,
            block_count,
        }
    }

    pub fn validate(&self) -> Result<(), SampleError> {
        if self.steps == 0 {
            return Err(SampleError::Config("steps must be at least 1".into()));
        }
        if !(self.flow.z_c > 0.0) || !(self.flow.noise_scale >= 0.0) || !(self.flow.anneal_coeff >= 0.0) {
            return Err(SampleError::Config(
                "z_c must be positive, noise scale and anneal nonnegative".into(),
            ));
        }
        if let BlockCount::Fixed(0) = self.block_count {
            return Err(SampleError::Config("block count must be at least 1".into()));
        }
        Ok(())
    }
}

/// A block held fixed during inpainting, with coordinates in Å for every atom
/// of the block in local order.
#[derive(Debug, Clone, PartialEq)]
pub struct Fragment {
    pub slot: usize,
    pub block: BlockId,
    pub coords: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InpaintSpec {
    pub fragments: Vec<Fragment>,
    /// Total block count: fixed plus free slots.
    pub n: usize,
    /// Fixed coordinates follow the interpolation for `t > t_star`.
    pub t_star: f64,
}

impl InpaintSpec {
    pub fn validate(&self, vocab: &Vocabulary) -> Result<(), SampleError> {
        if !(0.0..=1.0).contains(&self.t_star) {
            return Err(SampleError::Spec(format!("t_star {} outside [0, 1]", self.t_star)));
        }
        let mut seen = vec![false; self.n];
        for f in &self.fragments {
            if f.slot >= self.n {
                return Err(SampleError::Spec(format!("slot {} outside 0..{}", f.slot, self.n)));
            }
            if std::mem::replace(&mut seen[f.slot], true) {
                return Err(SampleError::Spec(format!("slot {} fixed twice", f.slot)));
            }
            if f.block >= vocab.num_blocks() {
                return Err(SampleError::Spec(format!("unknown block {}", f.block)));
            }
            let atoms = vocab.block(f.block).atoms.len();
            if f.coords.len() != atoms {
                return Err(SampleError::Spec(format!(
                    "slot {}: {} coordinates for block {} with {atoms} atoms",
                    f.slot,
                    f.coords.len(),
                    f.block
                )));
            }
            if f.coords.iter().flatten().any(|v| !v.is_finite()) {
                return Err(SampleError::Spec(format!("slot {}: non-finite coordinate", f.slot)));
            }
        }
        Ok(())
    }
}

/// Counts of constraint fallbacks and undecided completability checks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SampleWarnings {
    pub node_fallbacks: usize,
    pub edge_fallbacks: usize,
    pub uniform_fallbacks: usize,
    pub undecided: usize,
}

impl SampleWarnings {
    pub fn is_clean(&self) -> bool {
        *self == SampleWarnings::default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub graph: ReactionGraph,
    /// Coordinates in Å, centered on `s0`.
    pub coords: Coords,
    pub s0: AtomMask,
    pub warnings: SampleWarnings,
}

impl Sample {
    pub fn to_record(&self) -> MoleculeRecord {
        let mut atoms = Vec::new();
        for i in 0..self.s0.n() {
            for a in 0..self.s0.m() {
                if self.s0.get(i, a) {
                    atoms.push(((i, a), self.coords.get(i, a)));
                }
            }
        }
        MoleculeRecord {
            graph: self.graph.clone(),
            coords: Some(Conformer { atoms }),
        }
    }
}

/// State handed to a trace observer after each grid step.
pub struct StepView<'a> {
    pub k: usize,
    pub t: f64,
    pub s: f64,
    pub before: &'a ReactionGraph,
    pub after: &'a ReactionGraph,
    /// Recentered coordinates passed to the denoiser (normalized units).
    pub coords: &'a Coords,
    pub visibility: &'a AtomMask,
    pub prior: &'a Coords,
    pub output: &'a DenoiserOutput,
}

pub type Observer<'o> = &'o mut dyn FnMut(&StepView<'_>);

pub fn sample<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    vocab: &Vocabulary,
    denoiser: &D,
    cfg: &SampleConfig,
    rng: &mut R,
) -> Result<Sample, SampleError> {
    run(vocab, denoiser, cfg, None, rng, None)
}

pub fn sample_traced<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    vocab: &Vocabulary,
    denoiser: &D,
    cfg: &SampleConfig,
    rng: &mut R,
    observer: Observer<'_>,
) -> Result<Sample, SampleError> {
    run(vocab, denoiser, cfg, None, rng, Some(observer))
}

pub fn inpaint<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    vocab: &Vocabulary,
    denoiser: &D,
    cfg: &SampleConfig,
    spec: &InpaintSpec,
    rng: &mut R,
) -> Result<Sample, SampleError> {
    run(vocab, denoiser, cfg, Some(spec), rng, None)
}

pub fn inpaint_traced<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    vocab: &Vocabulary,
    denoiser: &D,
    cfg: &SampleConfig,
    spec: &InpaintSpec,
    rng: &mut R,
    observer: Observer<'_>,
) -> Result<Sample, SampleError> {
    run(vocab, denoiser, cfg, Some(spec), rng, Some(observer))
}

/// Draws `count` samples in parallel; sample `k` uses stream `k` of `seed`,
/// so results do not depend on thread count.
pub fn sample_many<D: Denoiser + ?Sized>(
    vocab: &Vocabulary,
    denoiser: &D,
    cfg: &SampleConfig,
    spec: Option<&InpaintSpec>,
    count: usize,
    seed: u64,
) -> Vec<Result<Sample, SampleError>> {
    (0..count)
        .into_par_iter()
        .map(|k| {
            let mut rng = record_rng(seed, k as u64);
            run(vocab, denoiser, cfg, spec, &mut rng, None)
        })
        .collect()
}

struct Fixed {
    /// Normalized coordinates per fixed slot, centered on the whole fragment set.
    rows: Vec<(usize, Vec<[f64; 3]>)>,
    t_star: f64,
}

impl Fixed {
    fn new(spec: &InpaintSpec, z_c: f64) -> Self {
        let rows = spec
            .fragments
            .iter()
            .map(|f| (f.slot, f.coords.iter().map(|p| p.map(|v| v / z_c)).collect()))
            .collect();
        Fixed {
            rows,
            t_star: spec.t_star,
        }
    }

    /// Overwrites fixed rows with `(1 − t)·(G − ḡ) + t·(C1 − c̄1)`, where `ḡ` is
    /// the centroid of the visible fixed atoms and `c̄1` the prior's centroid
    /// over the visibility mask.
    fn overwrite(&self, c: &mut Coords, prior: &Coords, st: &AtomMask, t: f64) -> Result<(), FlowError> {
        let mut g = [0.0; 3];
        let mut count = 0usize;
        for (slot, xyz) in &self.rows {
            for (a, p) in xyz.iter().enumerate() {
                if st.get(*slot, a) {
                    for d in 0..3 {
                        g[d] += p[d];
                    }
                    count += 1;
                }
            }
        }
        if count == 0 {
            return Ok(());
        }
        let g = g.map(|v| v / count as f64);
        let c1 = masked_centroid(prior, st)?;
        for (slot, xyz) in &self.rows {
            for (a, p) in xyz.iter().enumerate() {
                if st.get(*slot, a) {
                    let q = prior.get(*slot, a);
                    let mut v = [0.0; 3];
                    for d in 0..3 {
                        v[d] = (1.0 - t) * (p[d] - g[d]) + t * (q[d] - c1[d]);
                    }
                    c.set(*slot, a, v);
                }
            }
        }
        Ok(())
    }
}

/// The fixed-fragment coordinates the sampler feeds the denoiser at time `t`.
pub fn inpaint_target(
    spec: &InpaintSpec,
    z_c: f64,
    prior: &Coords,
    st: &AtomMask,
    t: f64,
) -> Result<Coords, FlowError> {
    let mut c = Coords::zeros(prior.n(), prior.m());
    Fixed::new(spec, z_c).overwrite(&mut c, prior, st, t)?;
    Ok(c)
}

fn run<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    vocab: &Vocabulary,
    denoiser: &D,
    cfg: &SampleConfig,
    spec: Option<&InpaintSpec>,
    rng: &mut R,
    mut observer: Option<Observer<'_>>,
) -> Result<Sample, SampleError> {
    cfg.validate()?;
    let n = match (spec, &cfg.block_count) {
        (Some(s), _) => s.n,
        (None, BlockCount::Fixed(n)) => *n,
        (None, BlockCount::Prior(p)) => p.sample(rng),
    };
    if n == 0 {
        return Err(SampleError::Config("block count must be at least 1".into()));
    }
    let m = vocab.max_atoms();
    let codec = EdgeCodec::for_vocab(vocab);
    let completer = Completer::new(vocab);
    let mut x = ReactionGraph::fully_masked(n);
    let fixed = match spec {
        Some(s) => {
            s.validate(vocab)?;
            for f in &s.fragments {
                x.set_node(f.slot, NodeState::Block(f.block));
            }
            if cfg.constraints && completer.check(&x) == Completion::No {
                return Err(SampleError::Spec("fixed blocks admit no valid molecule".into()));
            }
            Some(Fixed::new(s, cfg.flow.z_c))
        }
        None => None,
    };
    let prior = Coords::gaussian(n, m, cfg.flow.noise_scale, rng);
    let mut c = prior.clone();
    let mut warnings = SampleWarnings::default();
    let dt = 1.0 / cfg.steps as f64;
    for k in 0..cfg.steps {
        let t = (cfg.steps - k) as f64 / cfg.steps as f64;
        let s = (cfg.steps - k - 1) as f64 / cfg.steps as f64;
        let st = visibility_mask(&x, &atom_validity(&x, vocab));
        let mut c_tilde = center(&c, &st)?;
        if let Some(f) = &fixed {
            if t > f.t_star {
                f.overwrite(&mut c_tilde, &prior, &st, t)?;
            }
        }
        let input = DenoiserInput {
            graph: &x,
            coords: &c_tilde,
            visibility: &st,
            t,
            prior: Some(&prior),
        };
        let out = denoiser.denoise(&input, &mut DynRng(&mut *rng))?;
        check_contract(&out, &x, vocab.num_blocks(), &codec)?;
        let next = if cfg.constraints {
            let mut constrained = out.clone();
            let fb = apply_all(&mut constrained, &x, vocab, &codec)?;
            warnings.node_fallbacks += fb.nodes;
            warnings.edge_fallbacks += fb.edges;
            let reveal = cfg.schedule.unmask_prob(s, t)?;
            constrained_step(&x, &constrained, reveal, &completer, &codec, rng, &mut warnings)?
        } else {
            reverse_step(&x, &out, s, t, &cfg.schedule, &codec, rng)?
        };
        c = euler_step(
            &c_tilde,
            &c_tilde,
            &out.coords,
            t,
            dt,
            cfg.flow.anneal_coeff,
            cfg.flow.velocity,
        );
        if let Some(obs) = observer.as_mut() {
            obs(&StepView {
                k,
                t,
                s,
                before: &x,
                after: &next,
                coords: &c_tilde,
                visibility: &st,
                prior: &prior,
                output: &out,
            });
        }
        x = next;
    }
    // Final deterministic pass.
    let s0 = atom_validity(&x, vocab);
    let c_tilde = center(&c, &s0)?;
    let input = DenoiserInput {
        graph: &x,
        coords: &c_tilde,
        visibility: &s0,
        t: 0.0,
        prior: Some(&prior),
    };
    let out = denoiser.denoise(&input, &mut DynRng(&mut *rng))?;
    check_contract(&out, &x, vocab.num_blocks(), &codec)?;
    let graph = out.argmax_graph(&codec);
    let s0 = atom_validity(&graph, vocab);
    let mut coords = center(&out.coords, &s0)?;
    coords.scale(cfg.flow.z_c);
    if !warnings.is_clean() {
        warn!("sample finished with constraint warnings: {warnings:?}");
    }
    Ok(Sample {
        graph,
        coords,
        s0,
        warnings,
    })
}

// Lets an unsized generator stand in for `dyn RngCore`.
struct DynRng<'a, R: ?Sized>(&'a mut R);

impl<R: RngCore + ?Sized> RngCore for DynRng<'_, R> {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}

/// One constrained reverse step. Entries to reveal are chosen with
/// probability `reveal`; nodes are drawn first, then one column at a time,
/// each draw restricted to values that keep the graph completable.
fn constrained_step<R: Rng + ?Sized>(
    x: &ReactionGraph,
    probs: &DenoiserOutput,
    reveal: f64,
    completer: &Completer<'_>,
    codec: &EdgeCodec,
    rng: &mut R,
    warnings: &mut SampleWarnings,
) -> Result<ReactionGraph, SampleError> {
    let n = x.n();
    let mut z = x.clone();
    let nodes: Vec<usize> = (0..n)
        .filter(|&i| x.node(i).is_mask() && rng.random::<f64>() < reveal)
        .collect();
    let mut edges = vec![false; n * n];
    for i in 0..n {
        for j in i + 1..n {
            if x.edge(i, j).is_mask() && rng.random::<f64>() < reveal {
                edges[i * n + j] = true;
            }
        }
    }
    for i in nodes {
        let mut weights = probs.node_row(i).to_vec();
        let pick = draw_completable(&mut weights, rng, completer, warnings, |b| {
            let mut trial = z.clone();
            trial.set_node(i, NodeState::Block(b));
            trial
        });
        let b = match pick {
            Some(b) => b,
            None => {
                let options: Vec<usize> = (0..weights.len())
                    .filter(|&b| {
                        let mut trial = z.clone();
                        trial.set_node(i, NodeState::Block(b));
                        completer.check(&trial) != Completion::No
                    })
                    .collect();
                if options.is_empty() {
                    return Err(SampleError::Deadlock(format!("node {i}")));
                }
                warn!("node {i}: no completable block has probability mass; drawing uniformly");
                warnings.uniform_fallbacks += 1;
                options[rng.random_range(0..options.len())]
            }
        };
        z.set_node(i, NodeState::Block(b));
    }
    let k = codec.concrete();
    for j in 1..n {
        let chosen: Vec<usize> = (0..j).filter(|&i| edges[i * n + j]).collect();
        if chosen.is_empty() {
            continue;
        }
        let has_parent = (0..j).any(|i| z.edge(i, j).is_concrete());
        if has_parent {
            for &i in &chosen {
                z.set_edge(i, j, EdgeLabel::NoEdge);
            }
            continue;
        }
        let open: Vec<usize> = (0..j).filter(|&i| z.edge(i, j).is_mask()).collect();
        let hypothetical = |z: &ReactionGraph, pick: usize| {
            let (i, c) = (open[pick / k], pick % k);
            let mut trial = z.clone();
            for &l in &chosen {
                trial.set_edge(l, j, EdgeLabel::NoEdge);
            }
            trial.set_edge(i, j, codec.decode(c).expect("concrete channel"));
            trial
        };
        let mut weights: Vec<f64> = open.iter().flat_map(|&i| probs.edge_row(i, j)[..k].to_vec()).collect();
        let pick = match draw_completable(&mut weights, rng, completer, warnings, |p| hypothetical(&z, p)) {
            Some(p) => p,
            None => {
                let options: Vec<usize> = (0..weights.len())
                    .filter(|&p| completer.check(&hypothetical(&z, p)) != Completion::No)
                    .collect();
                if options.is_empty() {
                    return Err(SampleError::Deadlock(format!("column {j}")));
                }
                warn!("column {j}: no completable parent has probability mass; drawing uniformly");
                warnings.uniform_fallbacks += 1;
                options[rng.random_range(0..options.len())]
            }
        };
        let (parent, c) = (open[pick / k], pick % k);
        for &i in &chosen {
            let label = if i == parent {
                codec.decode(c).expect("concrete channel")
            } else {
                EdgeLabel::NoEdge
            };
            z.set_edge(i, j, label);
        }
    }
    Ok(z)
}

/// Draws from `weights`, discarding values whose hypothetical graph cannot be
/// completed, until one survives or the mass runs out.
fn draw_completable<R: Rng + ?Sized>(
    weights: &mut [f64],
    rng: &mut R,
    completer: &Completer<'_>,
    warnings: &mut SampleWarnings,
    trial: impl Fn(usize) -> ReactionGraph,
) -> Option<usize> {
    while let Some(v) = sample_categorical(weights, rng) {
        match completer.check(&trial(v)) {
            Completion::Yes => return Some(v),
            Completion::Unknown => {
                warnings.undecided += 1;
                return Some(v);
            }
            Completion::No => weights[v] = 0.0,
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{coordinate_scale, generate_dataset, prepare_records, GenConfig};
    use crate::denoiser::{OracleDenoiser, OracleMode, UniformDenoiser};
    use crate::graph::check_validity;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy() -> Vocabulary {
        Vocabulary::from_toml_str(include_str!("../data/toy.toml")).unwrap()
    }

    fn one_record(seed: u64) -> (Vocabulary, MoleculeRecord, f64) {
        let v = toy();
        let cfg = GenConfig {
            count: 1,
            seed,
            depth_min: 2,
            depth_max: 2,
            ..GenConfig::default()
        };
        let rec = generate_dataset(&v, &cfg).unwrap().remove(0);
        let z = coordinate_scale(std::slice::from_ref(&rec)).unwrap();
        (v, rec, z)
    }

    #[test]
    fn oracle_recovers_single_record_exactly() {
        let (v, rec, z) = one_record(7);
        let prepared = prepare_records(std::slice::from_ref(&rec), &v, z).unwrap();
        let oracle = OracleDenoiser::new(prepared, &v, OracleMode::Marginal).unwrap();
        let conf = rec.coords.as_ref().unwrap();
        let pts = conf.points();
        let mean: Vec<f64> = (0..3)
            .map(|d| pts.iter().map(|p| p[d]).sum::<f64>() / pts.len() as f64)
            .collect();
        for steps in [20, 50, 100] {
            let mut cfg = SampleConfig::new(BlockCount::Fixed(rec.graph.n()));
            cfg.steps = steps;
            cfg.flow.z_c = z;
            let mut rng = ChaCha8Rng::seed_from_u64(steps as u64);
            let out = sample(&v, &oracle, &cfg, &mut rng).unwrap();
            assert_eq!(out.graph, rec.graph);
            assert_eq!(out.s0.count(), conf.len());
            for &((i, a), p) in &conf.atoms {
                let q = out.coords.get(i, a);
                for d in 0..3 {
                    assert!((q[d] - (p[d] - mean[d])).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn fixed_block_count_gives_trees() {
        let v = toy();
        let den = UniformDenoiser::for_vocab(&v);
        let cfg = SampleConfig::new(BlockCount::Fixed(4));
        for r in sample_many(&v, &den, &cfg, None, 30, 3) {
            let s = r.unwrap();
            assert_eq!(s.graph.n(), 4);
            assert_eq!(s.graph.concrete_edges().count(), 3);
            assert!(check_validity(&s.graph, &v).is_valid());
        }
    }

    #[test]
    fn seeded_runs_are_identical() {
        let v = toy();
        let den = UniformDenoiser::for_vocab(&v);
        let mut cfg = SampleConfig::new(BlockCount::Fixed(3));
        cfg.schedule = NoiseSchedule::loglinear(1e-3);
        let a: Vec<_> = sample_many(&v, &den, &cfg, None, 8, 5)
            .into_iter()
            .map(|r| r.unwrap())
            .collect();
        let b: Vec<_> = sample_many(&v, &den, &cfg, None, 8, 5)
            .into_iter()
            .map(|r| r.unwrap())
            .collect();
        assert_eq!(a, b);
    }

    #[test]
    fn carry_over_along_trajectories() {
        let v = toy();
        let den = UniformDenoiser::for_vocab(&v);
        let mut cfg = SampleConfig::new(BlockCount::Fixed(3));
        cfg.schedule = NoiseSchedule::loglinear(1e-3);
        for constraints in [true, false] {
            cfg.constraints = constraints;
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let mut violations = 0;
            let mut obs = |v: &StepView<'_>| {
                for i in 0..v.before.n() {
                    if !v.before.node(i).is_mask() && v.before.node(i) != v.after.node(i) {
                        violations += 1;
                    }
                    for j in 0..v.before.n() {
                        if !v.before.edge(i, j).is_mask() && v.before.edge(i, j) != v.after.edge(i, j) {
                            violations += 1;
                        }
                    }
                }
            };
            sample_traced(&v, &den, &cfg, &mut rng, &mut obs).unwrap();
            assert_eq!(violations, 0);
        }
    }

    #[test]
    fn inpainting_follows_interpolation_then_relaxes() {
        let (v, rec, z) = one_record(4);
        let conf = rec.coords.as_ref().unwrap();
        let blocks = rec.graph.blocks().unwrap();
        // Coordinates for every atom of the block in slot 0, leaving atoms
        // included; missing ones are placed at the origin.
        let coords: Vec<[f64; 3]> = (0..v.block(blocks[0]).atoms.len())
            .map(|a| conf.get(0, a).unwrap_or([0.0; 3]))
            .collect();
        let spec = InpaintSpec {
            fragments: vec![Fragment {
                slot: 0,
                block: blocks[0],
                coords,
            }],
            n: rec.graph.n(),
            t_star: 0.03,
        };
        let mut cfg = SampleConfig::new(BlockCount::Fixed(rec.graph.n()));
        cfg.flow.z_c = z;
        let den = UniformDenoiser::for_vocab(&v);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut exact = Vec::new();
        let mut obs = |view: &StepView<'_>| {
            let want = inpaint_target(&spec, z, view.prior, view.visibility, view.t).unwrap();
            let ok = (0..v.max_atoms())
                .filter(|&a| view.visibility.get(0, a))
                .all(|a| view.coords.get(0, a) == want.get(0, a));
            exact.push(ok);
        };
        let out = inpaint_traced(&v, &den, &cfg, &spec, &mut rng, &mut obs).unwrap();
        assert_eq!(out.graph.node(0), NodeState::Block(blocks[0]));
        assert_eq!(exact.len(), 100);
        assert!(exact[..97].iter().all(|x| *x));
        // Midpoint arithmetic at t = 0.5.
        let st = AtomMask::ones(rec.graph.n(), v.max_atoms());
        let prior = Coords::zeros(rec.graph.n(), v.max_atoms());
        let mid = inpaint_target(&spec, z, &prior, &st, 0.5).unwrap();
        let full = inpaint_target(&spec, z, &prior, &st, 0.0).unwrap();
        for a in 0..spec.fragments[0].coords.len() {
            for d in 0..3 {
                assert!((mid.get(0, a)[d] - 0.5 * full.get(0, a)[d]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn spec_validation() {
        let v = toy();
        let bad = InpaintSpec {
            fragments: vec![Fragment {
                slot: 0,
                block: 0,
                coords: vec![[0.0; 3]; 2],
            }],
            n: 2,
            t_star: 0.03,
        };
        assert!(bad.validate(&v).is_err());
        let dup = InpaintSpec {
            fragments: vec![
                Fragment {
                    slot: 0,
                    block: 4,
                    coords: vec![[0.0; 3]; 3],
                },
                Fragment {
                    slot: 0,
                    block: 4,
                    coords: vec![[0.0; 3]; 3],
                },
            ],
            n: 2,
            t_star: 0.03,
        };
        assert!(dup.validate(&v).is_err());
    }
}
