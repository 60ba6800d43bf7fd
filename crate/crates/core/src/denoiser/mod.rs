//! FiLM-conditioned 3D convolutional denoiser predicting the clean SDF, with
//! exact reverse-mode gradients, the training objective and the AdamW loop.

pub mod checkpoint;
mod conv;
pub mod loss;
mod net;
mod params;
pub mod train;

pub use checkpoint::Checkpoint;
pub use loss::{
    loss_and_grad, loss_bce, loss_overlap, loss_sdf, loss_vcs, LossConfig, LossReport,
    LossTargets, LossWeights,
};
pub use net::{forward, timestep_embedding};
pub use params::{DenoiserParams, ModelConfig};
pub use train::{train, AdamW, OrganExample, TrainConfig, TrainOutcome};

use crate::diffusion::{Conditioning, Denoiser};
use crate::error::{Error, Result};
use crate::voxel::ScalarGrid;

impl Denoiser for DenoiserParams {
    fn predict_x0(&self, x_t: &ScalarGrid, c: &Conditioning, t: usize) -> Result<ScalarGrid> {
        forward(self, x_t, c, t)
    }
}

/// Total loss and its exact gradient with respect to every parameter.
///
/// The overlap term only applies while the context is present and the VCS
/// term only while `v` is present and calibration is switched on.
pub fn backward(
    params: &DenoiserParams,
    x_t: &ScalarGrid,
    c: &Conditioning,
    t: usize,
    targets: &LossTargets<'_>,
    cfg: &LossConfig<'_>,
) -> Result<(Vec<f64>, LossReport)> {
    let (pred, cache) = net::forward_cached(params, x_t, c, t)?;
    let effective = LossConfig {
        overlap_active: cfg.overlap_active && c.context_present,
        vcs: cfg.vcs.filter(|_| c.v_present),
        ..*cfg
    };
    let (report, g_pred) = loss_and_grad(&pred, x_t.spacing(), targets, &effective);
    if !report.total.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {report:?}")));
    }
    let mut grad = vec![0.0; params.len()];
    net::backward(params, &cache, &g_pred, &mut grad);
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite gradient in parameter block {}",
            params.block_name(i)
        )));
    }
    Ok((grad, report))
}
