//! VCS sweep and distribution matching with a briefly trained liver model on
//! a coarse cohort. The numbers illustrate the reports; a calibrated model
//! needs the full desk training run.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vcdiff::cohort::{generate_cohort, shift_cohort_volumes, CohortConfig};
use vcdiff::denoiser::{train, DenoiserParams, ModelConfig, OrganExample, TrainConfig};
use vcdiff::diffusion::ScheduleConfig;
use vcdiff::sequence::{match_cohort, v_grid, vcs_sweep, OrganSampler};
use vcdiff::vcs::VcsModel;
use vcdiff::voxel::SdfConfig;

fn main() -> vcdiff::Result<()> {
    let cohort = CohortConfig { dims: [16, 16, 16], spacing: 20.0, ..Default::default() };
    let cases = generate_cohort(2, 12, &cohort)?;
    let bodies: Vec<f64> = cases.iter().map(|c| c.body_volume()).collect();
    let livers: Vec<f64> = cases.iter().map(|c| c.organ_volume("liver").unwrap()).collect();
    let vcs = VcsModel::fit("liver", &bodies, &livers)?;
    let sdf = SdfConfig::default();
    let schedule = ScheduleConfig::default().build()?;
    let examples = cases
        .iter()
        .map(|c| OrganExample::from_case(c, "liver", &vcs, &sdf))
        .collect::<vcdiff::Result<Vec<_>>>()?;
    let params = DenoiserParams::init(ModelConfig { widths: vec![4, 8], ..Default::default() }, &mut ChaCha8Rng::seed_from_u64(0))?;
    let cfg = TrainConfig { epochs: 400, batch_size: 2, learning_rate: 2e-3, ema_decay: 0.0, ..Default::default() };
    let out = train(params, &examples, &[], &vcs, &schedule, &sdf, &cfg, |_, _| Ok(()))?;
    let sampler = OrganSampler { denoiser: Arc::new(out.params), vcs, sdf, schedule, ddim_steps: 10 };

    let report = vcs_sweep(&sampler, "liver", &cases[..6], &v_grid(-2.0, 2.0, 1.0)?, 0)?;
    print!("{}", report.to_csv());
    println!("spearman {:?}", report.spearman);

    let spec = cohort.organs.iter().find(|o| o.name == "liver").unwrap();
    let shifted = CohortConfig { organs: shift_cohort_volumes(&cohort.organs, 2.0 * spec.residual_noise, "liver")?, ..cohort.clone() };
    let target: Vec<f64> = generate_cohort(77, 12, &shifted)?.iter().map(|c| c.organ_volume("liver").unwrap()).collect();
    let m = match_cohort(&sampler, "liver", &cases[..6], &target, &v_grid(0.0, 3.0, 1.0)?, 0)?;
    print!("{}", m.to_csv());
    println!("v* = {} W1 {:.1} -> {:.1} mL ({:.0}% reduction)", m.v_star, m.w1_before, m.w1_after, 100.0 * m.reduction);
    Ok(())
}
