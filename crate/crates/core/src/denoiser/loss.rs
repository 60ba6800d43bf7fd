//! The four-term objective and its gradient with respect to the predicted SDF.
//!
//! Voxelwise terms use mean reductions. The overlap term penalizes the soft
//! Dice between the predicted occupancy and the context mask.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vcs::VcsModel;
use crate::voxel::{logistic, voxel_volume_ml, BinaryMask, ScalarGrid, SdfConfig};

const BCE_CLAMP: f64 = 1e-7;
const OVERLAP_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub sdf: f64,
    pub bce: f64,
    pub overlap: f64,
    pub vcs: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            sdf: 1.0,
            bce: 1.0,
            overlap: 1.0,
            vcs: 1.0,
        }
    }
}

/// Loss components of one evaluation; `l_vcs` is `None` while inactive.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub l_sdf: f64,
    pub l_bce: f64,
    pub l_ov: f64,
    pub l_vcs: Option<f64>,
    pub total: f64,
}

impl LossReport {
    /// Componentwise mean of several reports.
    pub fn mean(reports: &[LossReport]) -> LossReport {
        if reports.is_empty() {
            return LossReport::default();
        }
        let n = reports.len() as f64;
        let vcs: Vec<f64> = reports.iter().filter_map(|r| r.l_vcs).collect();
        LossReport {
            l_sdf: reports.iter().map(|r| r.l_sdf).sum::<f64>() / n,
            l_bce: reports.iter().map(|r| r.l_bce).sum::<f64>() / n,
            l_ov: reports.iter().map(|r| r.l_ov).sum::<f64>() / n,
            l_vcs: (!vcs.is_empty()).then(|| vcs.iter().sum::<f64>() / vcs.len() as f64),
            total: reports.iter().map(|r| r.total).sum::<f64>() / n,
        }
    }
}

fn check_same(a: &ScalarGrid, b_dims: [usize; 3], what: &str) -> Result<()> {
    if a.dims() != b_dims {
        return Err(Error::Data(format!("{what}: dims {:?} vs {b_dims:?}", a.dims())));
    }
    Ok(())
}

/// Mean absolute error between SDFs.
pub fn loss_sdf(pred: &ScalarGrid, reference: &ScalarGrid) -> Result<f64> {
    check_same(pred, reference.dims(), "loss_sdf")?;
    let n = pred.len() as f64;
    Ok(pred.values().iter().zip(reference.values()).map(|(p, r)| (p - r).abs()).sum::<f64>() / n)
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP)
}

/// Mean binary cross-entropy of soft occupancy against a mask.
pub fn loss_bce(pred_occ: &ScalarGrid, mask: &BinaryMask) -> Result<f64> {
    check_same(pred_occ, mask.dims(), "loss_bce")?;
    let n = pred_occ.len() as f64;
    let sum: f64 = pred_occ
        .values()
        .iter()
        .zip(mask.bits())
        .map(|(&p, &m)| {
            let p = clamp_prob(p);
            if m {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(sum / n)
}

/// Soft Dice between predicted occupancy and the context mask:
/// `2 Σ M̂·M_ctx / (Σ M̂ + Σ M_ctx + ε)`.
pub fn loss_overlap(pred_occ: &ScalarGrid, ctx: &BinaryMask) -> Result<f64> {
    check_same(pred_occ, ctx.dims(), "loss_overlap")?;
    let (num, den) = overlap_terms(pred_occ.values(), ctx.bits());
    Ok(num / den)
}

fn overlap_terms(occ: &[f64], ctx: &[bool]) -> (f64, f64) {
    let mut inter = 0.0;
    let mut sum_p = 0.0;
    let mut sum_c = 0.0;
    for (&p, &c) in occ.iter().zip(ctx) {
        sum_p += p;
        if c {
            inter += p;
            sum_c += 1.0;
        }
    }
    (2.0 * inter, sum_p + sum_c + OVERLAP_EPS)
}

/// Squared error between the VCS realized by the soft volume of `pred_occ`
/// and the requested control.
pub fn loss_vcs(pred_occ: &ScalarGrid, v_target: f64, body_volume: f64, m: &VcsModel) -> f64 {
    let v_hat = m.vcs_of(crate::voxel::soft_volume_ml(pred_occ), body_volume);
    (v_hat - v_target) * (v_hat - v_target)
}

/// Everything the objective needs besides the prediction.
#[derive(Debug, Clone, Copy)]
pub struct LossTargets<'a> {
    pub sdf: &'a ScalarGrid,
    pub mask: &'a BinaryMask,
    pub context_mask: &'a BinaryMask,
    pub v_target: f64,
    pub body_volume: f64,
}

/// Which terms are active for one example, and how they are weighted.
#[derive(Debug, Clone, Copy)]
pub struct LossConfig<'a> {
    pub weights: LossWeights,
    pub sdf: SdfConfig,
    /// `Some` once the calibration term is switched on.
    pub vcs: Option<&'a VcsModel>,
    pub overlap_active: bool,
}

/// Loss report and gradient with respect to each predicted SDF value.
pub fn loss_and_grad(
    pred: &[f64],
    spacing: f64,
    targets: &LossTargets<'_>,
    cfg: &LossConfig<'_>,
) -> (LossReport, Vec<f64>) {
    let n = pred.len();
    let nf = n as f64;
    let k = cfg.sdf.sharpness;
    let w = cfg.weights;
    let ref_sdf = targets.sdf.values();
    let mask = targets.mask.bits();
    let ctx = targets.context_mask.bits();
    let occ: Vec<f64> = pred.iter().map(|&s| logistic(k * s)).collect();

    let mut grad = vec![0.0; n];
    // dL/dM̂ accumulated here, chained through σ' at the end
    let mut g_occ = vec![0.0; n];

    let mut l_sdf = 0.0;
    let mut l_bce = 0.0;
    for i in 0..n {
        let d = pred[i] - ref_sdf[i];
        l_sdf += d.abs();
        grad[i] += w.sdf * d.signum() * (d != 0.0) as u8 as f64 / nf;

        let p = occ[i];
        let pc = clamp_prob(p);
        l_bce += if mask[i] { -pc.ln() } else { -(1.0 - pc).ln() };
        if pc == p {
            let dldp = if mask[i] { -1.0 / p } else { 1.0 / (1.0 - p) };
            g_occ[i] += w.bce * dldp / nf;
        }
    }
    l_sdf /= nf;
    l_bce /= nf;

    let mut l_ov = 0.0;
    if cfg.overlap_active {
        let (num, den) = overlap_terms(&occ, ctx);
        l_ov = num / den;
        for i in 0..n {
            let c = ctx[i] as u8 as f64;
            g_occ[i] += w.overlap * (2.0 * c * den - num) / (den * den);
        }
    }

    let mut l_vcs = None;
    if let Some(m) = cfg.vcs {
        let vox = voxel_volume_ml(spacing);
        let vol = occ.iter().sum::<f64>() * vox;
        let v_hat = m.vcs_of(vol, targets.body_volume);
        let e = v_hat - targets.v_target;
        l_vcs = Some(e * e);
        let g = w.vcs * 2.0 * e * vox / m.sigma;
        for go in g_occ.iter_mut() {
            *go += g;
        }
    }

    for i in 0..n {
        let p = occ[i];
        grad[i] += g_occ[i] * k * p * (1.0 - p);
    }

    let total = w.sdf * l_sdf + w.bce * l_bce + w.overlap * l_ov + w.vcs * l_vcs.unwrap_or(0.0);
    (
        LossReport {
            l_sdf,
            l_bce,
            l_ov,
            l_vcs,
            total,
        },
        grad,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voxel::{occupancy, threshold};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_grid(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> ScalarGrid {
        ScalarGrid::new([4, 4, 4], 2.0, (0..64).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
    }

    fn rand_mask(rng: &mut ChaCha8Rng) -> BinaryMask {
        BinaryMask::new([4, 4, 4], 2.0, (0..64).map(|_| rng.gen_bool(0.4)).collect()).unwrap()
    }

    #[test]
    fn sdf_loss_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = rand_grid(&mut rng, -3.0, 3.0);
        assert_eq!(loss_sdf(&r, &r).unwrap(), 0.0);
        let shifted = r.map(|v| v + 0.5).unwrap();
        assert_abs_diff_eq!(loss_sdf(&shifted, &r).unwrap(), 0.5, epsilon = 1e-12);
        let p = rand_grid(&mut rng, -3.0, 3.0);
        let mut brute = 0.0;
        for i in 0..64 {
            brute += (p.values()[i] - r.values()[i]).abs();
        }
        assert_abs_diff_eq!(loss_sdf(&p, &r).unwrap(), brute / 64.0, epsilon = 1e-12);
    }

    #[test]
    fn bce_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = rand_mask(&mut rng);
        let half = ScalarGrid::filled([4, 4, 4], 2.0, 0.5).unwrap();
        assert_abs_diff_eq!(loss_bce(&half, &m).unwrap(), std::f64::consts::LN_2, epsilon = 1e-12);

        let perfect = ScalarGrid::new([4, 4, 4], 2.0, m.bits().iter().map(|&b| b as u8 as f64).collect()).unwrap();
        let l = loss_bce(&perfect, &m).unwrap();
        assert!(l > 0.0 && l < 2e-7, "{l}");

        let p = rand_grid(&mut rng, 0.01, 0.99);
        let mut brute = 0.0;
        for i in 0..64 {
            let q = p.values()[i];
            brute -= if m.bits()[i] { q.ln() } else { (1.0 - q).ln() };
        }
        assert_abs_diff_eq!(loss_bce(&p, &m).unwrap(), brute / 64.0, epsilon = 1e-9);
    }

    #[test]
    fn overlap_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = rand_mask(&mut rng);
        let n = m.count() as f64;
        let same = ScalarGrid::new([4, 4, 4], 2.0, m.bits().iter().map(|&b| b as u8 as f64).collect()).unwrap();
        assert_abs_diff_eq!(loss_overlap(&same, &m).unwrap(), 2.0 * n / (2.0 * n + 1e-6), epsilon = 1e-15);

        let inv = BinaryMask::new([4, 4, 4], 2.0, m.bits().iter().map(|&b| !b).collect()).unwrap();
        assert_eq!(loss_overlap(&same, &inv).unwrap(), 0.0);
        let empty = BinaryMask::empty([4, 4, 4], 2.0).unwrap();
        assert_eq!(loss_overlap(&same, &empty).unwrap(), 0.0);
    }

    #[test]
    fn vcs_examples() {
        let m = VcsModel::fit("o", &[100.0, 200.0, 300.0], &[15.0, 22.0, 35.0]).unwrap();
        // a grid whose soft volume is exactly the target: 8 mL per voxel at 20 mm
        let target = m.target_volume_of(0.5, 200.0);
        let per_voxel = target / 64.0 / voxel_volume_ml(20.0);
        let occ = ScalarGrid::filled([4, 4, 4], 20.0, per_voxel).unwrap();
        assert_abs_diff_eq!(loss_vcs(&occ, 0.5, 200.0, &m), 0.0, epsilon = 1e-18);

        let off = (target + m.sigma) / 64.0 / voxel_volume_ml(20.0);
        let occ = ScalarGrid::filled([4, 4, 4], 20.0, off).unwrap();
        assert_abs_diff_eq!(loss_vcs(&occ, 0.5, 200.0, &m), 1.0, epsilon = 1e-9);
        let under = (target - m.sigma) / 64.0 / voxel_volume_ml(20.0);
        let occ = ScalarGrid::filled([4, 4, 4], 20.0, under).unwrap();
        assert_abs_diff_eq!(loss_vcs(&occ, 0.5, 200.0, &m), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn combined_grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg_sdf = SdfConfig { truncation: 10.0, sharpness: 2.0 };
        let reference = rand_grid(&mut rng, -2.0, 2.0);
        let mask = threshold(&reference);
        let ctx = rand_mask(&mut rng);
        let model = VcsModel { organ: "o".into(), a: 0.01, b: 100.0, mu: 0.0, sigma: 40.0, n_fit: 10 };
        let targets = LossTargets { sdf: &reference, mask: &mask, context_mask: &ctx, v_target: 0.3, body_volume: 5000.0 };
        let cfg = LossConfig { weights: LossWeights { sdf: 0.7, bce: 1.3, overlap: 0.9, vcs: 0.4 }, sdf: cfg_sdf, vcs: Some(&model), overlap_active: true };
        let pred = rand_grid(&mut rng, -2.0, 2.0);
        let (rep, g) = loss_and_grad(pred.values(), 2.0, &targets, &cfg);

        // reported components agree with the standalone functions
        let occ = occupancy(&pred, &cfg_sdf);
        assert_abs_diff_eq!(rep.l_sdf, loss_sdf(&pred, &reference).unwrap(), epsilon = 1e-12);
        assert_abs_diff_eq!(rep.l_bce, loss_bce(&occ, &mask).unwrap(), epsilon = 1e-12);
        assert_abs_diff_eq!(rep.l_ov, loss_overlap(&occ, &ctx).unwrap(), epsilon = 1e-12);
        assert_abs_diff_eq!(rep.l_vcs.unwrap(), loss_vcs(&occ, 0.3, 5000.0, &model), epsilon = 1e-12);

        let h = 1e-6;
        for i in 0..64 {
            let mut p = pred.values().to_vec();
            p[i] += h;
            let up = loss_and_grad(&p, 2.0, &targets, &cfg).0.total;
            p[i] -= 2.0 * h;
            let dn = loss_and_grad(&p, 2.0, &targets, &cfg).0.total;
            let fd = (up - dn) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-6 * (1.0 + g[i].abs()), "i={i} fd={fd} an={}", g[i]);
        }
    }
}
