//! Volume Control Scalar: organ volume standardized after regressing out body
//! volume.
//!
//! With `V̂(V_B) = a·V_B + b` fitted by least squares, the control is
//! `v = ((V − V̂(V_B)) − μ) / σ` where `μ`, `σ` are the mean and sample
//! standard deviation of the fitting residuals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fitted per-organ regression and residual statistics (volumes in mL).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VcsModel {
    pub organ: String,
    pub a: f64,
    pub b: f64,
    pub mu: f64,
    pub sigma: f64,
    pub n_fit: usize,
}

const MIN_SIGMA_ML: f64 = 1e-9;

impl VcsModel {
    /// Least-squares fit of organ volume on body volume.
    pub fn fit(organ: &str, body_volumes: &[f64], organ_volumes: &[f64]) -> Result<Self> {
        let n = body_volumes.len();
        if n != organ_volumes.len() {
            return Err(Error::Data(format!(
                "vcs fit: {n} body volumes but {} organ volumes",
                organ_volumes.len()
            )));
        }
        if n < 3 {
            return Err(Error::Data(format!("vcs fit needs at least 3 cases, got {n}")));
        }
        if body_volumes.iter().chain(organ_volumes).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("vcs fit: non-finite volume".into()));
        }
        let nf = n as f64;
        let mean_b = body_volumes.iter().sum::<f64>() / nf;
        let mean_o = organ_volumes.iter().sum::<f64>() / nf;
        let (mut sxx, mut sxy) = (0.0, 0.0);
        for (&x, &y) in body_volumes.iter().zip(organ_volumes) {
            sxx += (x - mean_b) * (x - mean_b);
            sxy += (x - mean_b) * (y - mean_o);
        }
        if sxx == 0.0 {
            return Err(Error::Numeric(format!(
                "vcs fit for {organ}: body volumes have zero variance"
            )));
        }
        let a = sxy / sxx;
        let b = mean_o - a * mean_b;
        let residuals: Vec<f64> = body_volumes
            .iter()
            .zip(organ_volumes)
            .map(|(&x, &y)| y - (a * x + b))
            .collect();
        let mu = residuals.iter().sum::<f64>() / nf;
        let var = residuals.iter().map(|r| (r - mu) * (r - mu)).sum::<f64>() / (nf - 1.0);
        let sigma = var.sqrt();
        if sigma.is_nan() || sigma < MIN_SIGMA_ML {
            return Err(Error::Numeric(format!(
                "vcs fit for {organ}: degenerate residual sigma {sigma:e} mL (all residuals equal)"
            )));
        }
        Ok(Self {
            organ: organ.to_string(),
            a,
            b,
            mu,
            sigma,
            n_fit: n,
        })
    }

    /// Regression prediction `a·V_B + b`.
    pub fn expected_volume(&self, body_volume: f64) -> f64 {
        self.a * body_volume + self.b
    }

    pub fn vcs_of(&self, organ_volume: f64, body_volume: f64) -> f64 {
        ((organ_volume - self.expected_volume(body_volume)) - self.mu) / self.sigma
    }

    /// Volume (mL) corresponding to control `v`; negative requests clamp to
    /// zero with a warning.
    pub fn target_volume_of(&self, v: f64, body_volume: f64) -> f64 {
        let vol = self.expected_volume(body_volume) + self.mu + v * self.sigma;
        if vol < 0.0 {
            log::warn!(
                "organ={} v={v} body_ml={body_volume} requested negative volume {vol:.3} mL, clamped to 0",
                self.organ
            );
            return 0.0;
        }
        vol
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.a, self.b, self.mu, self.sigma].iter().all(|v| v.is_finite());
        if !finite || self.sigma < MIN_SIGMA_ML || self.n_fit < 3 {
            return Err(Error::Data(format!(
                "invalid VCS model for {}: sigma={} n_fit={}",
                self.organ, self.sigma, self.n_fit
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain struct serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s).map_err(|e| Error::Data(format!("VCS model JSON: {e}")))?;
        m.validate()?;
        Ok(m)
    }
}

/// Pearson correlation; `None` when either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len().min(y.len());
    if n < 2 {
        return None;
    }
    let mx = x[..n].iter().sum::<f64>() / n as f64;
    let my = y[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (dx, dy) = (x[i] - mx, y[i] - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}
