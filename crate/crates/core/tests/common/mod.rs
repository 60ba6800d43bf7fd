//! Independent brute-force oracles shared by the integration tests.

#![allow(dead_code)]

use rand::{seq::index::sample, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vcdiff::denoiser::{backward, DenoiserParams, LossConfig, LossTargets, LossWeights, ModelConfig};
use vcdiff::diffusion::Conditioning;
use vcdiff::vcs::VcsModel;
use vcdiff::voxel::{threshold, BinaryMask, Point3, ScalarGrid, SdfConfig};

pub struct Case {
    params: DenoiserParams,
    x_t: ScalarGrid,
    cond: Conditioning,
    t: usize,
    reference: ScalarGrid,
    mask: BinaryMask,
    ctx: BinaryMask,
    vcs: VcsModel,
    sdf: SdfConfig,
}

fn grid(rng: &mut ChaCha8Rng, dims: [usize; 3], scale: f64) -> ScalarGrid {
    let n = dims.iter().product();
    ScalarGrid::new(dims, 4.0, (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

pub fn make_case(seed: u64, widths: Vec<usize>, dims: [usize; 3], flags: [bool; 3]) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = ModelConfig { widths, t_embed_dim: 6, v_embed_dim: 5, input_scale: 0.1 };
    let mut params = DenoiserParams::init(cfg, &mut rng).unwrap();
    // FiLM heads start at zero; perturb everything so every path carries signal
    for p in params.flat_mut() {
        *p += rng.gen_range(-0.2..0.2);
    }
    let reference = grid(&mut rng, dims, 3.0);
    let mut cond = Conditioning::new(grid(&mut rng, dims, 5.0), grid(&mut rng, dims, 5.0), rng.gen_range(-2.0..2.0)).unwrap();
    cond.body_present = flags[0];
    cond.context_present = flags[1];
    cond.v_present = flags[2];
    let n = dims.iter().product();
    Case {
        params,
        x_t: grid(&mut rng, dims, 4.0),
        cond,
        t: rng.gen_range(1..1000),
        mask: threshold(&reference),
        reference,
        ctx: BinaryMask::new(dims, 4.0, (0..n).map(|_| rng.gen_bool(0.3)).collect()).unwrap(),
        vcs: VcsModel { organ: "o".into(), a: 0.01, b: 5.0, mu: 0.0, sigma: 30.0, n_fit: 10 },
        sdf: SdfConfig { truncation: 10.0, sharpness: 1.5 },
    }
}

impl Case {
    fn eval(&self, p: &DenoiserParams) -> (Vec<f64>, f64) {
        let targets = LossTargets { sdf: &self.reference, mask: &self.mask, context_mask: &self.ctx, v_target: 0.4, body_volume: 900.0 };
        let lc = LossConfig {
            weights: LossWeights { sdf: 1.0, bce: 1.0, overlap: 1.0, vcs: 0.05 },
            sdf: self.sdf,
            vcs: Some(&self.vcs),
            overlap_active: true,
        };
        let (g, r) = backward(p, &self.x_t, &self.cond, self.t, &targets, &lc).unwrap();
        (g, r.total)
    }
}

/// Compares the analytic gradient with central differences on `samples`
/// random parameters; returns (parameters compared, worst relative error,
/// first violation above 1e-4).
pub fn fd_check(case: &Case, samples: usize, seed: u64) -> (usize, f64, Option<String>) {
    let (grad, _) = case.eval(&case.params);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-3;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut violation = None;
    for i in sample(&mut rng, grad.len(), samples) {
        let mut p = case.params.clone();
        let orig = p.flat()[i];
        p.flat_mut()[i] = orig + h;
        let up = case.eval(&p).1;
        p.flat_mut()[i] = orig - h;
        let down = case.eval(&p).1;
        let fd = (up - down) / (2.0 * h);
        if grad[i].abs().max(fd.abs()) <= 1e-6 {
            continue;
        }
        let rel = (grad[i] - fd).abs() / grad[i].abs().max(fd.abs());
        if rel > 1e-4 && violation.is_none() {
            violation = Some(format!("{}: analytic {} vs fd {fd} (rel {rel:e})", case.params.block_name(i), grad[i]));
        }
        worst = worst.max(rel);
        checked += 1;
    }
    (checked, worst, violation)
}


/// Signed voxel-center distances by exhaustive search over all voxel pairs.
pub fn brute_signed_distance(mask: &BinaryMask) -> Vec<f64> {
    let d = mask.dims();
    let mut cs = Vec::new();
    for z in 0..d[2] {
        for y in 0..d[1] {
            for x in 0..d[0] {
                cs.push([x, y, z]);
            }
        }
    }
    cs.iter()
        .map(|&p| {
            let inside = mask.get(p[0], p[1], p[2]);
            let d2 = cs
                .iter()
                .filter(|q| mask.get(q[0], q[1], q[2]) != inside)
                .map(|q| (0..3).map(|k| (p[k] as f64 - q[k] as f64).powi(2)).sum::<f64>())
                .fold(f64::INFINITY, f64::min);
            if inside {
                d2.sqrt()
            } else {
                -d2.sqrt()
            }
        })
        .collect()
}

/// Nearest distance from each point of `from` to `to`, by exhaustive search.
pub fn brute_directed(from: &[Point3], to: &[Point3]) -> Vec<f64> {
    from.iter()
        .map(|p| {
            to.iter()
                .map(|q| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// `∫|F_a − F_b|` by counting samples at each merged breakpoint.
pub fn cdf_w1(a: &[f64], b: &[f64]) -> f64 {
    let mut xs: Vec<f64> = a.iter().chain(b).copied().collect();
    xs.sort_by(f64::total_cmp);
    let cdf = |s: &[f64], x: f64| s.iter().filter(|&&v| v <= x).count() as f64 / s.len() as f64;
    xs.windows(2).map(|w| (cdf(a, w[0]) - cdf(b, w[0])).abs() * (w[1] - w[0])).sum()
}
