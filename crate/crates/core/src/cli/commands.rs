use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::Deserialize;
use serde_json::json;

use super::config::{ConfigFile, Manifest};
use super::{
    runtime, Cli, CliError, Command, DenoiserKind, EvalArgs, FitArgs, GenArgs, SampleArgs, ScheduleName, Switch,
    VelocityName,
};
use crate::acceptance;
use crate::dataset::{
    coordinate_scale, estimate_block_count_prior, generate_dataset, prepare_records, BlockCountPrior, GenConfig,
};
use crate::denoiser::tabular::FitConfig;
use crate::denoiser::{Denoiser, OracleDenoiser, OracleMode, TabularDenoiser};
use crate::diffusion::NoiseSchedule;
use crate::flow::{FlowConfig, Velocity};
use crate::graph::check_validity;
use crate::metrics::{evaluate, kde, DEFAULT_TAU};
use crate::record::{load_records, save_records, MoleculeRecord};
use crate::sampler::{sample_many, BlockCount, Fragment, InpaintSpec, SampleConfig};
use crate::vocabulary::{Side, Vocabulary};

pub(super) fn dispatch(cli: &Cli, file: &ConfigFile) -> Result<(), CliError> {
    match &cli.command {
        Command::ValidateVocab { vocab, out } => validate_vocab(cli, vocab, out.as_deref()),
        Command::GenDataset(a) => gen_dataset(cli, file, a),
        Command::FitTabular(a) => fit_tabular(cli, file, a),
        Command::Sample(a) => sample(cli, file, a, None),
        Command::Inpaint { sample: a, spec } => sample(cli, file, a, Some(spec)),
        Command::Eval(a) => eval(cli, file, a),
        Command::Selftest { only, out } => selftest(cli, only, out.as_deref()),
    }
}

fn load_vocab(path: &Path) -> Result<Vocabulary, CliError> {
    Vocabulary::load(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn load_data(path: &Path) -> Result<Vec<MoleculeRecord>, CliError> {
    load_records(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

/// Writes the manifest next to `out`, or prints it when there is no output file.
fn finish(mut manifest: Manifest, out: Option<&Path>) -> Result<(), CliError> {
    match out {
        Some(p) => {
            manifest.output(p);
            manifest.write(&manifest_path(p))
        }
        None => {
            print!("{}", manifest.to_json());
            Ok(())
        }
    }
}

fn validate_vocab(cli: &Cli, path: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let v = load_vocab(path)?;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "vocabulary {}: {} blocks, {} reactions, at most {} centers and {} atoms per block",
        v.name.as_deref().unwrap_or("(unnamed)"),
        v.num_blocks(),
        v.num_reactions(),
        v.max_centers(),
        v.max_atoms()
    );
    for r in v.reactions() {
        let side_count = |side| {
            v.blocks()
                .iter()
                .map(|b| (0..b.centers.len()).filter(|&c| v.matches(r.id, side, b.id, c)).count())
                .sum::<usize>()
        };
        let _ = writeln!(
            s,
            "reaction {} ({}): {} + {}, leaving {}/{}, forms {:?} bond, {} x {} matching centers",
            r.id,
            r.name.as_deref().unwrap_or("-"),
            r.class_a,
            r.class_b,
            r.leaving_a,
            r.leaving_b,
            r.bond_order,
            side_count(Side::A),
            side_count(Side::B)
        );
    }
    match out {
        Some(p) => write(p, &s)?,
        None => print!("{s}"),
    }
    let mut m = Manifest::new("validate-vocab", cli.seed, cli.threads, json!({}));
    m.input("vocab", path)?;
    finish(m, out)
}

fn gen_dataset(cli: &Cli, file: &ConfigFile, a: &GenArgs) -> Result<(), CliError> {
    let vocab = load_vocab(&a.vocab)?;
    let sec = file.gen_dataset.clone().unwrap_or_default();
    let d = GenConfig::default();
    let cfg = GenConfig {
        depth_min: a.depth_min.or(sec.depth_min).unwrap_or(d.depth_min),
        depth_max: a.depth_max.or(sec.depth_max).unwrap_or(d.depth_max),
        seed: cli.seed,
        count: a.count.or(sec.count).unwrap_or(d.count),
        dedup: a.dedup || sec.dedup.unwrap_or(d.dedup),
        min_edges: sec.min_edges.unwrap_or(d.min_edges),
        coordinates: !a.no_coords && sec.coordinates.unwrap_or(d.coordinates),
    };
    let records = generate_dataset(&vocab, &cfg).map_err(runtime)?;
    info!("generated {} records", records.len());
    save_records(&a.out, &[], &records).map_err(|e| CliError::io(&a.out, e))?;
    let mut m = Manifest::new(
        "gen-dataset",
        cli.seed,
        cli.threads,
        json!({
            "count": cfg.count,
            "depth_min": cfg.depth_min,
            "depth_max": cfg.depth_max,
            "dedup": cfg.dedup,
            "min_edges": cfg.min_edges,
            "coordinates": cfg.coordinates,
            "written": records.len(),
        }),
    );
    m.input("vocab", &a.vocab)?;
    finish(m, Some(&a.out))
}

fn schedule(name: Option<&str>, sigma_max: Option<f64>, fallback: NoiseSchedule) -> Result<NoiseSchedule, CliError> {
    match name {
        None if sigma_max.is_none() => Ok(fallback),
        None => Ok(NoiseSchedule {
            sigma_max: sigma_max.unwrap(),
            ..fallback
        }),
        Some(n) => NoiseSchedule::from_name(n, sigma_max.unwrap_or(1e8))
            .ok_or_else(|| CliError::Config(format!("unknown schedule {n:?}"))),
    }
}

fn fit_tabular(cli: &Cli, file: &ConfigFile, a: &FitArgs) -> Result<(), CliError> {
    let vocab = load_vocab(&a.vocab)?;
    let records = load_data(&a.data)?;
    let sec = file.fit_tabular.clone().unwrap_or_default();
    let d = FitConfig::default();
    let mut cfg = FitConfig {
        epochs: a.epochs.or(sec.epochs).unwrap_or(d.epochs),
        seed: cli.seed,
        time_buckets: a.time_buckets.or(sec.time_buckets).unwrap_or(d.time_buckets),
        schedule: schedule(
            a.schedule.map(ScheduleName::as_str).or(sec.schedule.as_deref()),
            a.sigma_max.or(sec.sigma_max),
            d.schedule,
        )?,
        noise_scale: sec.noise_scale.unwrap_or(d.noise_scale),
        steps: sec.steps.unwrap_or(d.steps),
        eval_records: sec.eval_records.unwrap_or(d.eval_records),
        train: d.train,
    };
    let t = &mut cfg.train;
    t.w_pair = sec.w_pair.unwrap_or(t.w_pair);
    t.w_slddt = sec.w_slddt.unwrap_or(t.w_slddt);
    t.w_bond = sec.w_bond.unwrap_or(t.w_bond);
    t.pair_cutoff = sec.pair_cutoff.unwrap_or(t.pair_cutoff);
    t.bond_time_threshold = sec.bond_time_threshold.unwrap_or(t.bond_time_threshold);
    t.slddt_cutoff = sec.slddt_cutoff.unwrap_or(t.slddt_cutoff);
    t.auxiliary = a.auxiliary || sec.auxiliary.unwrap_or(t.auxiliary);
    let z_c = match sec.z_c {
        Some(z) => z,
        None => coordinate_scale(&records).map_err(runtime)?,
    };
    let prepared = prepare_records(&records, &vocab, z_c).map_err(runtime)?;
    let model = TabularDenoiser::fit(&prepared, &vocab, z_c, cfg).map_err(runtime)?;
    model.save(&a.out).map_err(|e| CliError::io(&a.out, e))?;
    let mut m = Manifest::new("fit-tabular", cli.seed, cli.threads, json!({ "fit": cfg, "z_c": z_c }));
    m.input("vocab", &a.vocab)?;
    m.input("data", &a.data)?;
    finish(m, Some(&a.out))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecFile {
    n: usize,
    #[serde(default = "default_t_star")]
    t_star: f64,
    fragments: Vec<FragmentEntry>,
}

fn default_t_star() -> f64 {
    0.03
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FragmentEntry {
    slot: usize,
    block: usize,
    coords: Vec<[f64; 3]>,
}

pub fn load_inpaint_spec(path: &Path) -> Result<InpaintSpec, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let f: SpecFile = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(InpaintSpec {
        n: f.n,
        t_star: f.t_star,
        fragments: f
            .fragments
            .into_iter()
            .map(|e| Fragment {
                slot: e.slot,
                block: e.block,
                coords: e.coords,
            })
            .collect(),
    })
}

fn sample(cli: &Cli, file: &ConfigFile, a: &SampleArgs, spec_path: Option<&PathBuf>) -> Result<(), CliError> {
    let vocab = load_vocab(&a.vocab)?;
    let sec = file.sample.clone().unwrap_or_default();
    let (denoiser, z_c, prior): (Box<dyn Denoiser>, f64, Option<BlockCountPrior>) = match a.denoiser {
        DenoiserKind::Tabular => {
            let m = TabularDenoiser::load(&a.model)
                .map_err(|e| CliError::Runtime(format!("{}: {e}", a.model.display())))?;
            m.check_vocab(&vocab).map_err(runtime)?;
            let (z, p) = (m.z_c, m.block_count_prior());
            (Box::new(m), z, p)
        }
        DenoiserKind::Oracle => {
            let records = load_data(&a.model)?;
            let z = coordinate_scale(&records).map_err(runtime)?;
            let p = estimate_block_count_prior(&records).map_err(runtime)?;
            let prepared = prepare_records(&records, &vocab, z).map_err(runtime)?;
            let o = OracleDenoiser::new(prepared, &vocab, OracleMode::PosteriorSample).map_err(runtime)?;
            (Box::new(o), z, Some(p))
        }
    };
    let spec = spec_path.map(|p| load_inpaint_spec(p)).transpose()?;
    let n_blocks = spec.as_ref().map(|s| s.n).or(a.n_blocks).or(sec.n_blocks);
    let block_count = match (n_blocks, prior) {
        (Some(n), _) => BlockCount::Fixed(n),
        (None, Some(p)) => BlockCount::Prior(p),
        (None, None) => {
            return Err(CliError::Config(
                "model has no block-count prior; pass --n-blocks".into(),
            ))
        }
    };
    let mut cfg = SampleConfig::new(block_count);
    cfg.steps = a.steps.or(sec.steps).unwrap_or(cfg.steps);
    cfg.schedule = schedule(
        a.schedule.map(ScheduleName::as_str).or(sec.schedule.as_deref()),
        a.sigma_max.or(sec.sigma_max),
        cfg.schedule,
    )?;
    let velocity = match a.velocity {
        Some(VelocityName::Difference) => Some(Velocity::Difference),
        Some(VelocityName::Rescaled) => Some(Velocity::Rescaled),
        None => match sec.velocity.as_deref() {
            None => None,
            Some("difference") => Some(Velocity::Difference),
            Some("rescaled") => Some(Velocity::Rescaled),
            Some(v) => return Err(CliError::Config(format!("unknown velocity {v:?}"))),
        },
    };
    let d = FlowConfig::default();
    cfg.flow = FlowConfig {
        z_c: sec.z_c.unwrap_or(z_c),
        anneal_coeff: a.anneal.or(sec.anneal_coeff).unwrap_or(d.anneal_coeff),
        noise_scale: a.noise_scale.or(sec.noise_scale).unwrap_or(d.noise_scale),
        velocity: velocity.unwrap_or(d.velocity),
    };
    cfg.constraints = match a.constraints {
        Some(s) => s == Switch::On,
        None => sec.constraints.unwrap_or(true),
    };
    cfg.validate().map_err(runtime)?;
    if let Some(s) = &spec {
        s.validate(&vocab).map_err(runtime)?;
    }

    let results = sample_many(&vocab, &denoiser, &cfg, spec.as_ref(), a.n_samples, cli.seed);
    let mut records = Vec::with_capacity(results.len());
    let mut failed = 0usize;
    for (k, r) in results.into_iter().enumerate() {
        match r {
            Ok(s) => records.push(s.to_record()),
            Err(e) => {
                warn!("sample {k}: {e}");
                failed += 1;
            }
        }
    }
    if records.is_empty() && a.n_samples > 0 {
        return Err(CliError::Runtime(format!("all {failed} samples failed")));
    }
    let valid = records
        .iter()
        .filter(|r| check_validity(&r.graph, &vocab).is_valid())
        .count();
    info!("{} samples, {valid} valid, {failed} failed", records.len());
    save_records(&a.out, &[], &records).map_err(|e| CliError::io(&a.out, e))?;

    let block_count = match &cfg.block_count {
        BlockCount::Fixed(n) => json!(n),
        BlockCount::Prior(p) => json!({ "prior": p.probs() }),
    };
    let command = if spec.is_some() { "inpaint" } else { "sample" };
    let mut m = Manifest::new(
        command,
        cli.seed,
        cli.threads,
        json!({
            "denoiser": format!("{:?}", a.denoiser).to_lowercase(),
            "n_samples": a.n_samples,
            "steps": cfg.steps,
            "schedule": cfg.schedule,
            "flow": cfg.flow,
            "constraints": cfg.constraints,
            "block_count": block_count,
            "t_star": spec.as_ref().map(|s| s.t_star),
            "written": records.len(),
            "failed": failed,
            "valid": valid,
        }),
    );
    m.input("vocab", &a.vocab)?;
    m.input("model", &a.model)?;
    if let Some(p) = spec_path {
        m.input("spec", p)?;
    }
    finish(m, Some(&a.out))
}

fn eval(cli: &Cli, file: &ConfigFile, a: &EvalArgs) -> Result<(), CliError> {
    let vocab = load_vocab(&a.vocab)?;
    let generated = load_data(&a.generated)?;
    let reference = load_data(&a.reference)?;
    let sec = file.eval.clone().unwrap_or_default();
    let tau = a.tau.or(sec.tau).unwrap_or(DEFAULT_TAU);
    let points = sec.kde_points.unwrap_or(200);
    let ev = evaluate(&generated, &reference, &vocab, tau);
    let r = &ev.report;
    let mut json = serde_json::to_string_pretty(r).map_err(runtime)?;
    json.push('\n');
    write(&a.report, &json)?;
    if !cli.quiet {
        println!("validity {:.4} over {} generated", r.validity, r.generated);
        if let Some(s) = &r.set_statistics {
            println!(
                "diversity(1-tanimoto) {:.4} uniqueness {:.4} novelty {:.4}",
                s.diversity, s.uniqueness, s.novelty
            );
        }
        println!(
            "{} geometry keys compared, {} graphs with conformer matches",
            r.geometry.len(),
            r.conformers.len()
        );
    }

    let mut m = Manifest::new(
        "eval",
        cli.seed,
        cli.threads,
        json!({ "tau": tau, "kde_points": points }),
    );
    m.input("vocab", &a.vocab)?;
    m.input("generated", &a.generated)?;
    m.input("reference", &a.reference)?;
    if let Some(k) = &a.kde {
        write(
            k,
            &kde::density_csv(&ev.generated_geometry, &ev.reference_geometry, points),
        )?;
        m.output(k);
    }
    finish(m, Some(&a.report))
}

fn selftest(cli: &Cli, only: &[u8], out: Option<&Path>) -> Result<(), CliError> {
    let mut lines = String::new();
    let mut failed = 0;
    let mut total = 0;
    for id in 1..=acceptance::COUNT {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let r = acceptance::run(id, cli.seed);
        if !cli.quiet {
            println!("{r}");
        }
        let _ = writeln!(lines, "{}", r.line());
        total += 1;
        if !r.passed {
            failed += 1;
        }
    }
    let summary = format!("{}/{total} criteria passed", total - failed);
    if !cli.quiet {
        println!("{summary}");
    }
    let _ = writeln!(lines, "{summary}");
    if let Some(p) = out {
        write(p, &lines)?;
        finish(
            Manifest::new("selftest", cli.seed, cli.threads, json!({ "only": only })),
            out,
        )?;
    }
    if failed > 0 {
        return Err(CliError::Runtime(format!("{failed} acceptance criteria failed")));
    }
    Ok(())
}
