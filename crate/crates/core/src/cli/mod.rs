//! Batch command-line surface: `gen-cohort`, `fit-vcs`, `train`, `sample`,
//! `evaluate`, `sweep` and `match`.
//!
//! Every command writes into its `--out` directory, starting with
//! `config.json` (the effective configuration and non-path arguments).
//! Errors map to exit codes 2 (config/usage), 3 (data), 4 (numeric) and
//! 5 (internal).

mod config;

pub use config::{CohortSection, MatchSection, MetricsSection, ModelSection, RunConfig, SampleSection, VcsSection};

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::cohort::{self, PhantomCase, BODY_FILE};
use crate::denoiser::{self, Checkpoint, DenoiserParams, OrganExample};
use crate::error::{Error, Result};
use crate::metrics::{self, MetricRow};
use crate::rng::{stream, tag};
use crate::sequence::{self, GenerationPlan, OrganSampler};
use crate::vcs::{pearson, VcsModel};
use crate::voxel::{vgf, volume_ml, BinaryMask};

pub const CONFIG_ECHO: &str = "config.json";

#[derive(Debug, Parser)]
#[command(name = "vcdiff", version, about = "Volume-conditioned sequential SDF diffusion")]
pub struct Cli {
    /// Worker threads (default: all available cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic phantom cohort.
    GenCohort(GenCohortArgs),
    /// Fit the volume control scalar of one organ on a cohort.
    FitVcs(FitVcsArgs),
    /// Train a per-organ denoiser.
    Train(TrainArgs),
    /// Generate organs sequentially into a body mask.
    Sample(SampleArgs),
    /// Fidelity, realism and diversity metrics.
    Evaluate(EvaluateArgs),
    /// Realized volume against a grid of VCS values.
    Sweep(SweepArgs),
    /// Find the VCS whose volumes best match a target cohort.
    Match(MatchArgs),
}

#[derive(Debug, Args)]
pub struct GenCohortArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of cases (default: cohort.n_cases).
    #[arg(long)]
    pub n: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FitVcsArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub cohort: PathBuf,
    /// Organ (default: vcs.organ).
    #[arg(long)]
    pub organ: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub cohort: PathBuf,
    #[arg(long)]
    pub organ: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint directory; repeat in generation order.
    #[arg(long, required = true)]
    pub checkpoint: Vec<PathBuf>,
    /// Body mask: a VGF file or a case directory holding `body.vgf`.
    #[arg(long)]
    pub body: PathBuf,
    /// `<v>` for every organ or `<organ>=<v>`; repeatable.
    #[arg(long, allow_negative_numbers = true)]
    pub vcs: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
    /// Sampling seed (default: sample.seed).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// A sample/case directory or a directory of them.
    #[arg(long)]
    pub generated: PathBuf,
    /// Reference masks paired with `--generated` by sorted position.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Training cohort for nearest-neighbour realism.
    #[arg(long)]
    pub train_set: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub cohort: PathBuf,
    /// `lo,hi` (default: sample.sweep_range).
    #[arg(long, value_delimiter = ',', num_args = 2, allow_negative_numbers = true)]
    pub range: Option<Vec<f64>>,
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub cohort: PathBuf,
    /// Target cohort directory, or a JSON array of volumes in mL.
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long, value_delimiter = ',', num_args = 2, allow_negative_numbers = true)]
    pub range: Option<Vec<f64>>,
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Installs the stderr logger: `ts=... level=... target=... <message>`.
pub fn init_logging() {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format(|buf, record| {
            writeln!(
                buf,
                "ts={} level={} target={} {}",
                buf.timestamp_millis(),
                record.level(),
                record.target(),
                record.args()
            )
        })
        .target(env_logger::Target::Stderr)
        .try_init();
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    init_logging();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            log::error!("exit_code={} error=\"{e}\"", e.exit_code());
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be >= 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::Internal(format!("thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::GenCohort(a) => gen_cohort(a),
        Command::FitVcs(a) => fit_vcs(a),
        Command::Train(a) => train(a),
        Command::Sample(a) => sample(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Sweep(a) => sweep(a),
        Command::Match(a) => match_cmd(a),
    })
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Internal(e.to_string()))?;
    write_file(path, text + "\n")
}

fn prepare_out(out: &Path, command: &str, args: serde_json::Value, cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_json(&out.join(CONFIG_ECHO), &json!({ "command": command, "args": args, "config": cfg }))
}

fn organ_or_default(organ: &Option<String>, cfg: &RunConfig) -> String {
    organ.clone().unwrap_or_else(|| cfg.vcs.organ.clone())
}

fn organ_volumes(cases: &[PhantomCase], organ: &str) -> Result<Vec<f64>> {
    cases
        .iter()
        .map(|c| c.organ_volume(organ).ok_or_else(|| Error::Data(format!("{}: no organ {organ}", c.case_id))))
        .collect()
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn gen_cohort(a: GenCohortArgs) -> Result<()> {
    let mut cfg = RunConfig::load(a.config.as_deref())?;
    if let Some(n) = a.n {
        cfg.cohort.n_cases = n;
    }
    cfg.validate()?;
    prepare_out(&a.out, "gen-cohort", json!({ "seed": a.seed, "n": cfg.cohort.n_cases }), &cfg)?;
    let cases = cohort::generate_cohort(a.seed, cfg.cohort.n_cases, &cfg.cohort.generator())?;
    cohort::save_cohort(&a.out, &cases)?;

    let bodies: Vec<f64> = cases.iter().map(|c| c.body_volume()).collect();
    let mut organs = BTreeMap::new();
    println!("cases={} body_mean_ml={:.1}", cases.len(), mean(&bodies));
    for spec in &cfg.cohort.organs {
        let vols = organ_volumes(&cases, &spec.name)?;
        let r = pearson(&bodies, &vols);
        println!(
            "organ={} mean_ml={:.1} corr_body={}",
            spec.name,
            mean(&vols),
            r.map_or("nan".into(), |r| format!("{r:.3}"))
        );
        organs.insert(spec.name.clone(), json!({ "mean_ml": mean(&vols), "corr_body": r }));
    }
    write_json(
        &a.out.join("summary.json"),
        &json!({ "cases": cases.len(), "body_mean_ml": mean(&bodies), "organs": organs }),
    )
}

fn fit_on(cases: &[PhantomCase], organ: &str) -> Result<VcsModel> {
    let bodies: Vec<f64> = cases.iter().map(|c| c.body_volume()).collect();
    VcsModel::fit(organ, &bodies, &organ_volumes(cases, organ)?)
}

fn fit_vcs(a: FitVcsArgs) -> Result<()> {
    let cfg = RunConfig::load(a.config.as_deref())?;
    let organ = organ_or_default(&a.organ, &cfg);
    prepare_out(&a.out, "fit-vcs", json!({ "organ": organ }), &cfg)?;
    let cases = cohort::load_cohort(&a.cohort)?;
    let m = fit_on(&cases, &organ)?;
    println!("organ={} a={} b={} mu={} sigma={} n={}", m.organ, m.a, m.b, m.mu, m.sigma, m.n_fit);
    write_file(&a.out.join("vcs.json"), m.to_json() + "\n")
}

fn train(a: TrainArgs) -> Result<()> {
    let cfg = RunConfig::load(a.config.as_deref())?;
    let organ = organ_or_default(&a.organ, &cfg);
    prepare_out(&a.out, "train", json!({ "organ": organ }), &cfg)?;
    let cases = cohort::load_cohort(&a.cohort)?;
    let n_val = cfg.train.validation_cases;
    if n_val >= cases.len() {
        return Err(Error::Config(format!(
            "train.validation_cases={n_val} leaves no training cases out of {}",
            cases.len()
        )));
    }
    let (train_cases, val_cases) = cases.split_at(cases.len() - n_val);
    let vcs = fit_on(train_cases, &organ)?;
    let sdf = cfg.model.sdf();
    let schedule = cfg.schedule.build()?;
    let build = |cs: &[PhantomCase]| {
        cs.iter().map(|c| OrganExample::from_case(c, &organ, &vcs, &sdf)).collect::<Result<Vec<_>>>()
    };
    let (train_set, val_set) = (build(train_cases)?, build(val_cases)?);
    let params = DenoiserParams::init(cfg.model.network(), &mut stream(cfg.model.init_seed, &[tag("init")]))?;
    log::info!(
        "organ={organ} train_cases={} val_cases={} params={} epochs={}",
        train_set.len(),
        val_set.len(),
        params.len(),
        cfg.train.epochs
    );
    let save = |p: &DenoiserParams, history: &[denoiser::train::EpochRecord]| {
        Checkpoint {
            organ: organ.clone(),
            epoch: history.len(),
            params: p.clone(),
            sdf,
            schedule: cfg.schedule,
            vcs: vcs.clone(),
            history_tail: history.to_vec(),
        }
        .save(&a.out)
    };
    let outcome = denoiser::train(params, &train_set, &val_set, &vcs, &schedule, &sdf, &cfg.train, save)?;
    let mut csv = String::from("epoch,vcs_active,total,l_sdf,l_bce,l_ov,l_vcs,val_total\n");
    for r in &outcome.history {
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            r.epoch,
            r.vcs_active,
            r.train.total,
            r.train.l_sdf,
            r.train.l_bce,
            r.train.l_ov,
            r.train.l_vcs.map_or(String::new(), |v| v.to_string()),
            r.val.map_or(String::new(), |v| v.total.to_string()),
        )
        .unwrap();
    }
    write_file(&a.out.join("history.csv"), csv)
}

fn read_body(path: &Path) -> Result<BinaryMask> {
    if path.is_dir() {
        vgf::read_mask(&path.join(BODY_FILE))
    } else {
        vgf::read_mask(path)
    }
}

/// Parses `--vcs` values into a default and per-organ overrides.
pub fn parse_vcs_requests(values: &[String], organs: &[String]) -> Result<BTreeMap<String, f64>> {
    let parse = |s: &str| {
        s.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::Config(format!("--vcs: `{s}` is not a finite number")))
    };
    let mut default = 0.0;
    let mut specific = BTreeMap::new();
    for item in values {
        match item.split_once('=') {
            Some((name, v)) => {
                if !organs.iter().any(|o| o == name) {
                    return Err(Error::Config(format!("--vcs: no checkpoint for organ `{name}`")));
                }
                specific.insert(name.to_string(), parse(v)?);
            }
            None => default = parse(item)?,
        }
    }
    Ok(organs.iter().map(|o| (o.clone(), specific.get(o).copied().unwrap_or(default))).collect())
}

fn sample(a: SampleArgs) -> Result<()> {
    let cfg = RunConfig::load(a.config.as_deref())?;
    let seed = a.seed.unwrap_or(cfg.sample.seed);
    let mut order = Vec::new();
    let mut samplers = BTreeMap::new();
    for dir in &a.checkpoint {
        let ck = Checkpoint::load(dir)?;
        let name = ck.organ.clone();
        if samplers.contains_key(&name) {
            return Err(Error::Config(format!("--checkpoint: organ `{name}` given twice")));
        }
        samplers.insert(name.clone(), OrganSampler::from_checkpoint(ck, cfg.sample.ddim_steps)?);
        order.push(name);
    }
    let vcs_request = parse_vcs_requests(&a.vcs, &order)?;
    prepare_out(&a.out, "sample", json!({ "seed": seed, "order": order, "vcs": vcs_request }), &cfg)?;
    let body = read_body(&a.body)?;
    let plan = GenerationPlan { order, vcs_request, samplers };
    let anatomy = sequence::generate_anatomy(&body, &plan, &mut stream(seed, &[tag("sample")]))?;
    vgf::write_mask(&a.out.join(BODY_FILE), &anatomy.body)?;
    let mut organs = Vec::new();
    for o in &anatomy.organs {
        vgf::write_mask(&a.out.join(cohort::organ_file(&o.name)), &o.mask)?;
        println!(
            "organ={} requested_v={} realized_v={:.4} volume_ml={:.1} overlap_dice={:.4} cleared_fraction={:.4}",
            o.name, o.requested_v, o.realized_v, o.realized_volume_ml, o.overlap_dice, o.cleared_fraction
        );
        organs.push(json!({
            "name": o.name,
            "requested_v": o.requested_v,
            "realized_v": o.realized_v,
            "realized_volume_ml": o.realized_volume_ml,
            "overlap_dice": o.overlap_dice,
            "cleared_fraction": o.cleared_fraction,
            "degenerate": o.degenerate,
        }));
    }
    write_json(
        &a.out.join("sample.json"),
        &json!({ "seed": seed, "body_volume_ml": volume_ml(&anatomy.body), "organs": organs }),
    )
}

/// Organ masks of one sample or case directory, keyed by organ name.
struct MaskSet {
    id: String,
    organs: BTreeMap<String, BinaryMask>,
}

fn organ_files(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = e.map_err(|e| Error::io(dir, e))?.path();
        let Some(file) = p.file_name().and_then(|f| f.to_str()) else { continue };
        if let Some(name) = file.strip_prefix("organ_").and_then(|f| f.strip_suffix(".vgf")) {
            out.push((name.to_string(), p.clone()));
        }
    }
    out.sort();
    Ok(out)
}

fn load_mask_dir(dir: &Path) -> Result<MaskSet> {
    let organs = organ_files(dir)?
        .into_iter()
        .map(|(n, p)| Ok((n, vgf::read_mask(&p)?)))
        .collect::<Result<_>>()?;
    let id = dir.file_name().map_or_else(|| dir.display().to_string(), |f| f.to_string_lossy().into_owned());
    Ok(MaskSet { id, organs })
}

/// A directory with `organ_*.vgf` files is one set; otherwise each
/// subdirectory that has them is one set, in sorted order.
fn load_mask_sets(dir: &Path) -> Result<Vec<MaskSet>> {
    if !organ_files(dir)?.is_empty() {
        return Ok(vec![load_mask_dir(dir)?]);
    }
    let mut subdirs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    let mut sets = Vec::new();
    for d in subdirs {
        if !organ_files(&d)?.is_empty() {
            sets.push(load_mask_dir(&d)?);
        }
    }
    if sets.is_empty() {
        return Err(Error::Data(format!("no organ_*.vgf masks under {}", dir.display())));
    }
    Ok(sets)
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let cfg = RunConfig::load(a.config.as_deref())?;
    let aligned = cfg.metrics.align;
    prepare_out(&a.out, "evaluate", json!({}), &cfg)?;
    let generated = load_mask_sets(&a.generated)?;
    let mut rows = Vec::new();
    for g in &generated {
        for (organ, mask) in &g.organs {
            rows.push(MetricRow::new(&g.id, organ, "volume_ml", volume_ml(mask)));
        }
    }
    if let Some(reference) = &a.reference {
        let reference = load_mask_sets(reference)?;
        if reference.len() != generated.len() {
            return Err(Error::Data(format!(
                "{} generated sets but {} reference sets",
                generated.len(),
                reference.len()
            )));
        }
        for (g, r) in generated.iter().zip(&reference) {
            for (organ, mask) in &g.organs {
                let rm = r
                    .organs
                    .get(organ)
                    .ok_or_else(|| Error::Data(format!("reference {} has no organ {organ}", r.id)))?;
                rows.extend(metrics::fidelity(&g.id, organ, mask, rm, aligned)?.rows());
            }
        }
    }
    let organs: Vec<String> = generated
        .iter()
        .flat_map(|g| g.organs.keys().cloned())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let per_organ = |organ: &str| -> Vec<(String, BinaryMask)> {
        generated
            .iter()
            .filter_map(|g| g.organs.get(organ).map(|m| (g.id.clone(), m.clone())))
            .collect()
    };
    if let Some(train_dir) = &a.train_set {
        let train_cases = cohort::load_cohort(train_dir)?;
        for organ in &organs {
            let train_masks: Vec<BinaryMask> = train_cases
                .iter()
                .map(|c| c.organ(organ).cloned().ok_or_else(|| Error::Data(format!("{}: no organ {organ}", c.case_id))))
                .collect::<Result<_>>()?;
            let gen = per_organ(organ);
            let masks: Vec<BinaryMask> = gen.iter().map(|(_, m)| m.clone()).collect();
            for ((id, _), nn) in gen.iter().zip(metrics::nn_realism(&masks, &train_masks, aligned)?) {
                rows.push(MetricRow::new(id, organ, "nn_index", nn.train_index as f64));
                rows.push(MetricRow::new(id, organ, "nn_chamfer_mm", nn.chamfer_mm));
                rows.push(MetricRow::new(id, organ, "nn_hd95_mm", nn.hd95_mm));
            }
        }
    }
    for organ in &organs {
        let masks: Vec<BinaryMask> = per_organ(organ).into_iter().map(|(_, m)| m).collect();
        if masks.len() >= 2 {
            let d = metrics::pairwise_diversity(&masks, aligned)?;
            rows.push(MetricRow::new("all", organ, "diversity_dice_mean", d.dice_mean));
            rows.push(MetricRow::new("all", organ, "diversity_dice_std", d.dice_std));
            rows.push(MetricRow::new("all", organ, "diversity_chamfer_mean_mm", d.chamfer_mean_mm));
            rows.push(MetricRow::new("all", organ, "diversity_chamfer_std_mm", d.chamfer_std_mm));
        }
    }
    log::info!("sets={} rows={}", generated.len(), rows.len());
    write_file(&a.out.join("metrics.csv"), metrics::to_csv(&rows))
}

fn load_sampler_and_cases(
    checkpoint: &Path,
    cohort_dir: &Path,
    cfg: &RunConfig,
) -> Result<(String, OrganSampler, Vec<PhantomCase>)> {
    let ck = Checkpoint::load(checkpoint)?;
    let organ = ck.organ.clone();
    let sampler = OrganSampler::from_checkpoint(ck, cfg.sample.ddim_steps)?;
    let mut cases = cohort::load_cohort(cohort_dir)?;
    if let Some(m) = cfg.sample.max_cases {
        cases.truncate(m.max(1));
    }
    Ok((organ, sampler, cases))
}

fn range_arg(range: &Option<Vec<f64>>, default: [f64; 2]) -> Result<[f64; 2]> {
    match range.as_deref() {
        None => Ok(default),
        Some(&[lo, hi]) if lo.is_finite() && hi.is_finite() && lo <= hi => Ok([lo, hi]),
        Some(r) => Err(Error::Config(format!("--range must be `lo,hi` with lo <= hi, got {r:?}"))),
    }
}

fn sweep(a: SweepArgs) -> Result<()> {
    let mut cfg = RunConfig::load(a.config.as_deref())?;
    cfg.sample.sweep_range = range_arg(&a.range, cfg.sample.sweep_range)?;
    cfg.sample.sweep_step = a.step.unwrap_or(cfg.sample.sweep_step);
    cfg.sample.seed = a.seed.unwrap_or(cfg.sample.seed);
    cfg.validate()?;
    let [lo, hi] = cfg.sample.sweep_range;
    let grid = sequence::v_grid(lo, hi, cfg.sample.sweep_step)?;
    let (organ, sampler, cases) = load_sampler_and_cases(&a.checkpoint, &a.cohort, &cfg)?;
    prepare_out(&a.out, "sweep", json!({ "organ": organ, "cases": cases.len() }), &cfg)?;
    let report = sequence::vcs_sweep(&sampler, &organ, &cases, &grid, cfg.sample.seed)?;
    for r in &report.rows {
        println!("v={} mean_ml={:.1} delta_pct={:.2} mean_v_hat={:.3}", r.v, r.mean_ml, r.delta_pct, r.mean_realized_v);
    }
    println!("spearman={}", report.spearman.map_or("nan".into(), |s| format!("{s:.4}")));
    write_file(&a.out.join("sweep.csv"), report.to_csv())?;
    write_json(&a.out.join("sweep.json"), &report)
}

fn target_volumes(path: &Path, organ: &str) -> Result<Vec<f64>> {
    if path.is_file() {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let v: Vec<f64> =
            serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Data(format!("{}: non-finite target volume", path.display())));
        }
        return Ok(v);
    }
    organ_volumes(&cohort::load_cohort(path)?, organ)
}

fn match_cmd(a: MatchArgs) -> Result<()> {
    let mut cfg = RunConfig::load(a.config.as_deref())?;
    cfg.matching.range = range_arg(&a.range, cfg.matching.range)?;
    cfg.matching.step = a.step.unwrap_or(cfg.matching.step);
    cfg.sample.seed = a.seed.unwrap_or(cfg.sample.seed);
    cfg.validate()?;
    let [lo, hi] = cfg.matching.range;
    let grid = sequence::v_grid(lo, hi, cfg.matching.step)?;
    let (organ, sampler, cases) = load_sampler_and_cases(&a.checkpoint, &a.cohort, &cfg)?;
    let target = target_volumes(&a.target, &organ)?;
    prepare_out(
        &a.out,
        "match",
        json!({ "organ": organ, "cases": cases.len(), "target_cases": target.len() }),
        &cfg,
    )?;
    let report = sequence::match_cohort(&sampler, &organ, &cases, &target, &grid, cfg.sample.seed)?;
    println!(
        "organ={} v_star={} w1_before_ml={:.2} w1_after_ml={:.2} reduction={:.4}",
        report.organ, report.v_star, report.w1_before, report.w1_after, report.reduction
    );
    write_file(&a.out.join("match.csv"), report.to_csv())?;
    write_json(&a.out.join("match.json"), &report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vcs_requests_default_and_override() {
        let organs = vec!["liver".to_string(), "spleen".to_string()];
        let m = parse_vcs_requests(&["1.5".into(), "spleen=-2".into()], &organs).unwrap();
        assert_eq!(m["liver"], 1.5);
        assert_eq!(m["spleen"], -2.0);
        assert_eq!(parse_vcs_requests(&[], &organs).unwrap()["liver"], 0.0);
        assert!(parse_vcs_requests(&["kidney=1".into()], &organs).is_err());
        assert!(parse_vcs_requests(&["abc".into()], &organs).is_err());
    }

    #[test]
    fn missing_out_is_usage_error() {
        assert_eq!(run_from(["vcdiff", "gen-cohort", "--n", "2"]), 2);
    }

    #[test]
    fn range_argument_is_checked() {
        assert_eq!(range_arg(&None, [-1.0, 1.0]).unwrap(), [-1.0, 1.0]);
        assert_eq!(range_arg(&Some(vec![-3.0, 3.0]), [0.0, 0.0]).unwrap(), [-3.0, 3.0]);
        assert!(range_arg(&Some(vec![3.0, -3.0]), [0.0, 0.0]).is_err());
    }
}
