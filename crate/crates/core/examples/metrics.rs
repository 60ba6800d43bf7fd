//! Fidelity, realism, diversity and volume-distribution metrics between a
//! "generated" and a reference cohort.

use vcdiff::cohort::{generate_cohort, CohortConfig};
use vcdiff::metrics::{fidelity, nn_realism, pairwise_diversity, to_csv, wasserstein1};

fn main() -> vcdiff::Result<()> {
    let cfg = CohortConfig::default();
    let reference = generate_cohort(10, 6, &cfg)?;
    let generated = generate_cohort(11, 6, &cfg)?;

    let mut rows = Vec::new();
    for (g, r) in generated.iter().zip(&reference) {
        rows.extend(fidelity(&g.case_id, "liver", g.organ("liver").unwrap(), r.organ("liver").unwrap(), true)?.rows());
    }
    print!("{}", to_csv(&rows[..8]));

    let gen: Vec<_> = generated.iter().map(|c| c.organ("liver").unwrap().clone()).collect();
    let train: Vec<_> = reference.iter().map(|c| c.organ("liver").unwrap().clone()).collect();
    for (i, nn) in nn_realism(&gen, &train, true)?.iter().enumerate().take(3) {
        println!("generated {i}: nearest training case {} at Chamfer {:.1} mm", nn.train_index, nn.chamfer_mm);
    }
    let d = pairwise_diversity(&gen, true)?;
    println!("diversity over {} pairs: Dice {:.3}±{:.3}, Chamfer {:.1}±{:.1} mm", d.pairs, d.dice_mean, d.dice_std, d.chamfer_mean_mm, d.chamfer_std_mm);

    let vg: Vec<f64> = generated.iter().map(|c| c.organ_volume("liver").unwrap()).collect();
    let vr: Vec<f64> = reference.iter().map(|c| c.organ_volume("liver").unwrap()).collect();
    println!("W1 between liver volume distributions: {:.1} mL", wasserstein1(&vg, &vr)?);
    Ok(())
}
