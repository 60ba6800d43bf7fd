//! Trains a small liver denoiser on a coarse cohort, checkpoints it and
//! reloads the checkpoint.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vcdiff::cohort::{generate_cohort, CohortConfig};
use vcdiff::denoiser::{train, Checkpoint, DenoiserParams, ModelConfig, OrganExample, TrainConfig};
use vcdiff::diffusion::ScheduleConfig;
use vcdiff::vcs::VcsModel;
use vcdiff::voxel::SdfConfig;

fn main() -> vcdiff::Result<()> {
    let cohort = CohortConfig { dims: [16, 16, 16], spacing: 20.0, ..Default::default() };
    let cases = generate_cohort(3, 16, &cohort)?;
    let bodies: Vec<f64> = cases.iter().map(|c| c.body_volume()).collect();
    let livers: Vec<f64> = cases.iter().map(|c| c.organ_volume("liver").unwrap()).collect();
    let vcs = VcsModel::fit("liver", &bodies, &livers)?;

    let sdf = SdfConfig::default();
    let examples = cases
        .iter()
        .map(|c| OrganExample::from_case(c, "liver", &vcs, &sdf))
        .collect::<vcdiff::Result<Vec<_>>>()?;
    let (train_set, val_set) = examples.split_at(12);

    let schedule_cfg = ScheduleConfig::default();
    let schedule = schedule_cfg.build()?;
    let model = ModelConfig { widths: vec![4, 8], ..Default::default() };
    let params = DenoiserParams::init(model, &mut ChaCha8Rng::seed_from_u64(0))?;
    println!("{} parameters", params.len());

    let cfg = TrainConfig { epochs: 6, learning_rate: 2e-3, ema_decay: 0.0, ..Default::default() };
    let out = train(params, train_set, val_set, &vcs, &schedule, &sdf, &cfg, |_, h| {
        let r = h.last().unwrap();
        println!(
            "epoch {} total {:.4} val {:.4} vcs {}",
            r.epoch,
            r.train.total,
            r.val.map_or(f64::NAN, |v| v.total),
            if r.vcs_active { "on" } else { "off" }
        );
        Ok(())
    })?;

    let ck = Checkpoint {
        organ: "liver".into(),
        epoch: cfg.epochs,
        params: out.params,
        sdf,
        schedule: schedule_cfg,
        vcs,
        history_tail: out.history,
    };
    let dir = std::env::temp_dir().join("vcdiff-example-checkpoint");
    ck.save(&dir)?;
    let back = Checkpoint::load(&dir)?;
    println!("checkpoint at {} (epoch {}, {} params)", dir.display(), back.epoch, back.params.len());
    Ok(())
}
