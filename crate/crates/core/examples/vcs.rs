//! Fits the volume control scalar on a cohort and maps controls to target
//! volumes for a small and a large body.

use vcdiff::cohort::{generate_cohort, CohortConfig};
use vcdiff::vcs::{pearson, VcsModel};

fn main() -> vcdiff::Result<()> {
    let cases = generate_cohort(1, 64, &CohortConfig::default())?;
    let bodies: Vec<f64> = cases.iter().map(|c| c.body_volume()).collect();
    let livers: Vec<f64> = cases.iter().map(|c| c.organ_volume("liver").unwrap()).collect();
    let m = VcsModel::fit("liver", &bodies, &livers)?;
    println!("a={:.4} b={:.1} mu={:.2e} sigma={:.1} n={}", m.a, m.b, m.mu, m.sigma, m.n_fit);

    let v: Vec<f64> = bodies.iter().zip(&livers).map(|(&b, &o)| m.vcs_of(o, b)).collect();
    println!("corr(body, liver) = {:.3}, corr(body, v) = {:.1e}", pearson(&bodies, &livers).unwrap(), pearson(&bodies, &v).unwrap());

    for body in [5500.0, 8500.0] {
        let row: Vec<String> = [-2.0, 0.0, 2.0].iter().map(|&v| format!("v={v:+}: {:.0} mL", m.target_volume_of(v, body))).collect();
        println!("body {body} mL -> {}", row.join(", "));
    }
    Ok(())
}
