//! Autoregressive multi-organ generation, VCS sweeps and distribution
//! matching of generated organ volumes to a target cohort.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::PhantomCase;
use crate::denoiser::Checkpoint;
use crate::diffusion::{ddim_sample, Conditioning, Denoiser, NoiseSchedule};
use crate::error::{Error, Result};
use crate::metrics::wasserstein1;
use crate::rng::{stream, tag};
use crate::vcs::VcsModel;
use crate::voxel::{compose_context, sdf_from_mask, threshold, volume_ml, BinaryMask, ScalarGrid, SdfConfig};

/// Cleared fractions above this flag an organ as degenerate.
pub const DEGENERATE_CLEARED_FRACTION: f64 = 0.5;

const PURPOSE_CASE_NOISE: u64 = 0x4e4f;

/// Everything needed to sample one organ.
#[derive(Clone)]
pub struct OrganSampler {
    pub denoiser: Arc<dyn Denoiser + Send + Sync>,
    pub vcs: VcsModel,
    pub sdf: SdfConfig,
    pub schedule: NoiseSchedule,
    pub ddim_steps: usize,
}

impl std::fmt::Debug for OrganSampler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OrganSampler")
            .field("vcs", &self.vcs)
            .field("ddim_steps", &self.ddim_steps)
            .finish_non_exhaustive()
    }
}

impl OrganSampler {
    pub fn from_checkpoint(ck: Checkpoint, ddim_steps: usize) -> Result<Self> {
        Ok(Self {
            schedule: ck.schedule.build()?,
            sdf: ck.sdf,
            vcs: ck.vcs,
            denoiser: Arc::new(ck.params),
            ddim_steps,
        })
    }
}

#[derive(Debug, Clone)]
pub struct GenerationPlan {
    /// Generation order, large organs first.
    pub order: Vec<String>,
    /// Requested VCS per organ; absent organs use 0.
    pub vcs_request: BTreeMap<String, f64>,
    pub samplers: BTreeMap<String, OrganSampler>,
}

impl GenerationPlan {
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for name in &self.order {
            if !seen.insert(name) {
                return Err(Error::Config(format!("organ {name} appears twice in the generation order")));
            }
            if !self.samplers.contains_key(name) {
                return Err(Error::Config(format!("no model for organ {name}")));
            }
        }
        for (name, v) in &self.vcs_request {
            if !seen.contains(name) {
                return Err(Error::Config(format!("VCS requested for organ {name}, which is not in the order")));
            }
            if !v.is_finite() {
                return Err(Error::Config(format!("VCS for {name} is not finite")));
            }
        }
        let sdfs: HashSet<_> = self.samplers.values().map(|s| (s.sdf.truncation.to_bits(), s.sdf.sharpness.to_bits())).collect();
        if sdfs.len() > 1 {
            return Err(Error::Config("organ models disagree on SDF truncation/sharpness".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedOrgan {
    pub name: String,
    /// Final mask after overlap clearing.
    pub mask: BinaryMask,
    /// SDF of the final mask.
    pub sdf: ScalarGrid,
    pub requested_v: f64,
    pub realized_v: f64,
    pub realized_volume_ml: f64,
    /// Dice between the raw sampled mask and the context before clearing;
    /// 0 when the context is empty.
    pub overlap_dice: f64,
    /// Share of raw voxels removed by clearing.
    pub cleared_fraction: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedAnatomy {
    pub body: BinaryMask,
    pub organs: Vec<GeneratedOrgan>,
}

impl GeneratedAnatomy {
    pub fn organ(&self, name: &str) -> Option<&GeneratedOrgan> {
        self.organs.iter().find(|o| o.name == name)
    }

    pub fn is_degenerate(&self) -> bool {
        self.organs.iter().any(|o| o.degenerate)
    }
}

/// Samples one organ into an existing context and clears voxels that fall
/// outside the body or inside the context.
pub fn sample_organ(
    name: &str,
    sampler: &OrganSampler,
    body: &BinaryMask,
    body_sdf: &ScalarGrid,
    context_sdf: &ScalarGrid,
    context_mask: &BinaryMask,
    v: f64,
    rng: &mut impl Rng,
) -> Result<GeneratedOrgan> {
    let cond = Conditioning::new(body_sdf.clone(), context_sdf.clone(), v)?;
    let sampled = ddim_sample(sampler.denoiser.as_ref(), &cond, sampler.ddim_steps, &sampler.schedule, &sampler.sdf, rng)?;
    let raw = threshold(&sampled);
    let raw_count = raw.count();
    let overlap_dice = if context_mask.any() {
        2.0 * raw.intersection_count(context_mask)? as f64 / (raw_count + context_mask.count()) as f64
    } else {
        0.0
    };
    let mut mask = raw;
    for ((m, &b), &c) in mask.bits_mut().iter_mut().zip(body.bits()).zip(context_mask.bits()) {
        *m = *m && b && !c;
    }
    let kept = mask.count();
    let cleared_fraction = if raw_count == 0 { 0.0 } else { (raw_count - kept) as f64 / raw_count as f64 };
    let realized_volume_ml = volume_ml(&mask);
    let body_volume = volume_ml(body);
    Ok(GeneratedOrgan {
        name: name.into(),
        sdf: sdf_from_mask(&mask, &sampler.sdf),
        mask,
        requested_v: v,
        realized_v: sampler.vcs.vcs_of(realized_volume_ml, body_volume),
        realized_volume_ml,
        overlap_dice,
        cleared_fraction,
        degenerate: cleared_fraction > DEGENERATE_CLEARED_FRACTION,
    })
}

/// Generates every organ of `plan` in order, each conditioned on the body and
/// on the max-composed SDFs of the organs emitted before it.
pub fn generate_anatomy(body: &BinaryMask, plan: &GenerationPlan, rng: &mut impl Rng) -> Result<GeneratedAnatomy> {
    plan.validate()?;
    if !body.any() {
        return Err(Error::Data("generate_anatomy: body mask is empty".into()));
    }
    let (dims, spacing) = (body.dims(), body.spacing());
    let mut organs: Vec<GeneratedOrgan> = Vec::with_capacity(plan.order.len());
    let Some(first) = plan.order.first() else {
        return Ok(GeneratedAnatomy { body: body.clone(), organs });
    };
    let sdf = plan.samplers[first].sdf;
    let body_sdf = sdf_from_mask(body, &sdf);
    let mut context_sdf = sdf.empty_sdf(dims, spacing)?;
    let mut context_mask = BinaryMask::empty(dims, spacing)?;
    for name in &plan.order {
        let v = plan.vcs_request.get(name).copied().unwrap_or(0.0);
        let organ = sample_organ(name, &plan.samplers[name], body, &body_sdf, &context_sdf, &context_mask, v, rng)?;
        if organ.degenerate {
            log::warn!("organ={name} cleared_fraction={:.3} degenerate=true", organ.cleared_fraction);
        }
        context_sdf = compose_context(&[&context_sdf, &organ.sdf], dims, spacing, &sdf)?;
        context_mask = context_mask.union(&organ.mask)?;
        organs.push(organ);
    }
    Ok(GeneratedAnatomy { body: body.clone(), organs })
}

/// Reference-organ conditioning shared by sweeps and matching: body SDF,
/// context of the organs preceding `organ` in the case, and their union.
struct CaseContext {
    body: BinaryMask,
    body_sdf: ScalarGrid,
    context_sdf: ScalarGrid,
    context_mask: BinaryMask,
}

fn case_context(case: &PhantomCase, organ: &str, sdf: &SdfConfig) -> Result<CaseContext> {
    let (context_sdf, context_mask) = case.context_before(organ, sdf)?;
    Ok(CaseContext {
        body: case.body.clone(),
        body_sdf: sdf_from_mask(&case.body, sdf),
        context_sdf,
        context_mask,
    })
}

/// One sampled organ of a sweep grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepSample {
    pub volume_ml: f64,
    pub realized_v: f64,
    pub overlap_dice: f64,
    pub cleared_fraction: f64,
}

/// Samples `organ` for every case at every `v`. Case `i` uses the same noise
/// stream at every `v`. Result is indexed `[v][case]`.
pub fn sweep_samples(
    sampler: &OrganSampler,
    organ: &str,
    cases: &[PhantomCase],
    v_values: &[f64],
    seed: u64,
) -> Result<Vec<Vec<SweepSample>>> {
    if cases.is_empty() {
        return Err(Error::Data("sweep: empty cohort".into()));
    }
    let contexts = cases
        .par_iter()
        .map(|c| case_context(c, organ, &sampler.sdf))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize)> = (0..v_values.len())
        .flat_map(|vi| (0..cases.len()).map(move |ci| (vi, ci)))
        .collect();
    let flat = jobs
        .par_iter()
        .map(|&(vi, ci)| {
            let ctx = &contexts[ci];
            let mut rng = stream(seed, &[PURPOSE_CASE_NOISE, tag(organ), ci as u64]);
            let g = sample_organ(organ, sampler, &ctx.body, &ctx.body_sdf, &ctx.context_sdf, &ctx.context_mask, v_values[vi], &mut rng)?;
            Ok(SweepSample {
                volume_ml: g.realized_volume_ml,
                realized_v: g.realized_v,
                overlap_dice: g.overlap_dice,
                cleared_fraction: g.cleared_fraction,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(flat.chunks(cases.len()).map(|c| c.to_vec()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub v: f64,
    pub n: usize,
    pub mean_ml: f64,
    pub ci_low_ml: f64,
    pub ci_high_ml: f64,
    /// Mean per-case change relative to `v = 0`, percent.
    pub delta_pct: f64,
    pub delta_ci_low: f64,
    pub delta_ci_high: f64,
    pub mean_realized_v: f64,
    /// Mean over cases of `|v̂ − v|`.
    pub mean_abs_v_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub organ: String,
    pub rows: Vec<SweepRow>,
    /// Rank correlation between `v` and the mean volume.
    pub spearman: Option<f64>,
}

/// Mean with a normal-approximation 95% interval.
pub fn mean_ci(x: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (m, m, m);
    }
    let var = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
    let half = 1.96 * (var / n).sqrt();
    (m, m - half, m + half)
}

fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() {
        return None;
    }
    crate::vcs::pearson(&ranks(x), &ranks(y))
}

/// Realized-volume statistics per `v`. `v_values` must be sorted; the
/// `v = 0` baseline is sampled even when absent from the list.
pub fn vcs_sweep(
    sampler: &OrganSampler,
    organ: &str,
    cases: &[PhantomCase],
    v_values: &[f64],
    seed: u64,
) -> Result<SweepReport> {
    if v_values.is_empty() || v_values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config("sweep: v values must be finite and non-empty".into()));
    }
    if v_values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("sweep: v values must be strictly increasing".into()));
    }
    let mut grid = v_values.to_vec();
    let zero = match grid.iter().position(|&v| v == 0.0) {
        Some(i) => i,
        None => {
            grid.push(0.0);
            grid.len() - 1
        }
    };
    let samples = sweep_samples(sampler, organ, cases, &grid, seed)?;
    let base: Vec<f64> = samples[zero].iter().map(|s| s.volume_ml).collect();
    let rows: Vec<SweepRow> = v_values
        .iter()
        .enumerate()
        .map(|(vi, &v)| {
            let vols: Vec<f64> = samples[vi].iter().map(|s| s.volume_ml).collect();
            let deltas: Vec<f64> = vols
                .iter()
                .zip(&base)
                .filter(|(_, &b)| b > 0.0)
                .map(|(&x, &b)| if v == 0.0 { 0.0 } else { 100.0 * (x - b) / b })
                .collect();
            let (mean_ml, ci_low_ml, ci_high_ml) = mean_ci(&vols);
            let (delta_pct, delta_ci_low, delta_ci_high) =
                if deltas.is_empty() { (f64::NAN, f64::NAN, f64::NAN) } else { mean_ci(&deltas) };
            SweepRow {
                v,
                n: vols.len(),
                mean_ml,
                ci_low_ml,
                ci_high_ml,
                delta_pct,
                delta_ci_low,
                delta_ci_high,
                mean_realized_v: samples[vi].iter().map(|s| s.realized_v).sum::<f64>() / vols.len() as f64,
                mean_abs_v_error: samples[vi].iter().map(|s| (s.realized_v - v).abs()).sum::<f64>() / vols.len() as f64,
            }
        })
        .collect();
    let means: Vec<f64> = rows.iter().map(|r| r.mean_ml).collect();
    Ok(SweepReport { organ: organ.into(), spearman: spearman(v_values, &means), rows })
}

pub const SWEEP_CSV_HEADER: &str = "v,n,mean_ml,ci_low_ml,ci_high_ml,delta_pct,delta_ci_low,delta_ci_high,mean_v_hat,mean_abs_v_error";

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{SWEEP_CSV_HEADER}\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.v,
                r.n,
                r.mean_ml,
                r.ci_low_ml,
                r.ci_high_ml,
                r.delta_pct,
                r.delta_ci_low,
                r.delta_ci_high,
                r.mean_realized_v,
                r.mean_abs_v_error
            )
            .unwrap();
        }
        out
    }
}

/// `lo, lo + step, …` up to `hi` (inclusive within rounding).
pub fn v_grid(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Config(format!("step must be > 0, got {step}")));
    }
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(Error::Config(format!("range [{lo}, {hi}] is empty")));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    // snap near-integers of step so that 0 lands exactly on 0
    Ok((0..=n)
        .map(|k| {
            let v = lo + k as f64 * step;
            let r = (v / step).round() * step;
            if (v - r).abs() < 1e-9 * step { r } else { v }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchPoint {
    pub v: f64,
    pub w1_ml: f64,
    pub mean_ml: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub organ: String,
    pub v_star: f64,
    /// W1 between the reference cohort's volumes and the target.
    pub w1_before: f64,
    /// W1 between the volumes generated at `v_star` and the target.
    pub w1_after: f64,
    pub reduction: f64,
    pub curve: Vec<MatchPoint>,
    /// Standard error of the mean generated volume at `v_star`.
    pub noise_floor_ml: f64,
    pub flat_curve_warning: bool,
}

/// Picks the `v` whose generated volume distribution is closest in W1 to
/// `target`, preferring the smaller `|v|` on ties.
pub fn match_cohort(
    sampler: &OrganSampler,
    organ: &str,
    cases: &[PhantomCase],
    target: &[f64],
    v_values: &[f64],
    seed: u64,
) -> Result<MatchReport> {
    if target.is_empty() {
        return Err(Error::Data("match: target volume list is empty".into()));
    }
    if v_values.is_empty() {
        return Err(Error::Config("match: empty v grid".into()));
    }
    let samples = sweep_samples(sampler, organ, cases, v_values, seed)?;
    let mut curve = Vec::with_capacity(v_values.len());
    for (vi, &v) in v_values.iter().enumerate() {
        let vols: Vec<f64> = samples[vi].iter().map(|s| s.volume_ml).collect();
        curve.push(MatchPoint {
            v,
            w1_ml: wasserstein1(&vols, target)?,
            mean_ml: vols.iter().sum::<f64>() / vols.len() as f64,
        });
    }
    let mut best = 0;
    for (i, p) in curve.iter().enumerate().skip(1) {
        let b = &curve[best];
        if p.w1_ml < b.w1_ml || (p.w1_ml == b.w1_ml && p.v.abs() < b.v.abs()) {
            best = i;
        }
    }
    let reference: Vec<f64> = cases
        .iter()
        .map(|c| c.organ_volume(organ).ok_or_else(|| Error::Data(format!("{}: no organ {organ}", c.case_id))))
        .collect::<Result<_>>()?;
    let w1_before = wasserstein1(&reference, target)?;
    let w1_after = curve[best].w1_ml;
    let at_best: Vec<f64> = samples[best].iter().map(|s| s.volume_ml).collect();
    let (m, lo, _) = mean_ci(&at_best);
    let noise_floor_ml = (m - lo) / 1.96;
    let range = curve.iter().map(|p| p.w1_ml).fold(f64::NEG_INFINITY, f64::max)
        - curve.iter().map(|p| p.w1_ml).fold(f64::INFINITY, f64::min);
    let flat_curve_warning = range <= 2.0 * noise_floor_ml;
    if flat_curve_warning {
        log::warn!(
            "organ={organ} w1_range_ml={range:.3} noise_floor_ml={noise_floor_ml:.3} flat W1 curve, v* is not informative"
        );
    }
    Ok(MatchReport {
        organ: organ.into(),
        v_star: curve[best].v,
        w1_before,
        w1_after,
        reduction: if w1_before > 0.0 { 1.0 - w1_after / w1_before } else { 0.0 },
        curve,
        noise_floor_ml,
        flat_curve_warning,
    })
}

pub const MATCH_CSV_HEADER: &str = "v,mean_ml,w1_ml";

impl MatchReport {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{MATCH_CSV_HEADER}\n");
        for p in &self.curve {
            writeln!(out, "{},{},{}", p.v, p.mean_ml, p.w1_ml).unwrap();
        }
        out
    }
}
