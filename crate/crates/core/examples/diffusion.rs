//! Forward noising and DDIM sampling with an oracle denoiser that knows the
//! clean SDF: the sampler then returns it exactly for any step count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vcdiff::diffusion::{ddim_sample, gaussian_grid, q_sample, Conditioning, ScheduleConfig};
use vcdiff::voxel::{ScalarGrid, SdfConfig};

fn main() -> vcdiff::Result<()> {
    let schedule = ScheduleConfig::default().build()?;
    let sdf = SdfConfig::default();
    for t in [1, 100, 500, 1000] {
        println!("t={t:4} alpha_bar={:.5}", schedule.alpha_bar(t));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x0 = gaussian_grid([8, 8, 8], 10.0, &mut rng)?.map(|v| 4.0 * v)?;
    let noise = gaussian_grid(x0.dims(), x0.spacing(), &mut rng)?;
    let x_t = q_sample(&x0, 500, &noise, &schedule)?;
    println!("x0[0]={:.3} x500[0]={:.3}", x0.values()[0], x_t.values()[0]);

    let clean = x0.map(|v| v.clamp(-sdf.truncation, sdf.truncation))?;
    let c = Conditioning::new(clean.clone(), clean.clone(), 0.0)?;
    let truth = clean.clone();
    let oracle = move |_: &ScalarGrid, _: &Conditioning, _: usize| Ok(truth.clone());
    for steps in [1, 10, 50] {
        let out = ddim_sample(&oracle, &c, steps, &schedule, &sdf, &mut rng)?;
        let err = out.values().iter().zip(clean.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        println!("DDIM {steps:2} steps: max error {err:.2e}");
    }
    Ok(())
}
