use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cohort::{BodySpec, CohortConfig, OrganSpec};
use crate::denoiser::{ModelConfig, TrainConfig};
use crate::diffusion::ScheduleConfig;
use crate::error::{Error, Result};
use crate::voxel::{Dims, SdfConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CohortSection {
    pub n_cases: usize,
    pub dims: Dims,
    pub spacing: f64,
    pub body: BodySpec,
    pub organs: Vec<OrganSpec>,
}

impl Default for CohortSection {
    fn default() -> Self {
        let g = CohortConfig::default();
        Self { n_cases: 64, dims: g.dims, spacing: g.spacing, body: g.body, organs: g.organs }
    }
}

impl CohortSection {
    pub fn generator(&self) -> CohortConfig {
        CohortConfig { dims: self.dims, spacing: self.spacing, body: self.body.clone(), organs: self.organs.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VcsSection {
    /// Organ used when a command is not given `--organ`.
    pub organ: String,
}

impl Default for VcsSection {
    fn default() -> Self {
        Self { organ: "liver".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub widths: Vec<usize>,
    pub t_embed_dim: usize,
    pub v_embed_dim: usize,
    pub input_scale: f64,
    pub sdf_truncation: f64,
    pub sdf_sharpness: f64,
    pub init_seed: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        let s = SdfConfig::default();
        Self {
            widths: m.widths,
            t_embed_dim: m.t_embed_dim,
            v_embed_dim: m.v_embed_dim,
            input_scale: m.input_scale,
            sdf_truncation: s.truncation,
            sdf_sharpness: s.sharpness,
            init_seed: 0,
        }
    }
}

impl ModelSection {
    pub fn network(&self) -> ModelConfig {
        ModelConfig {
            widths: self.widths.clone(),
            t_embed_dim: self.t_embed_dim,
            v_embed_dim: self.v_embed_dim,
            input_scale: self.input_scale,
        }
    }

    pub fn sdf(&self) -> SdfConfig {
        SdfConfig { truncation: self.sdf_truncation, sharpness: self.sdf_sharpness }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleSection {
    pub ddim_steps: usize,
    pub seed: u64,
    pub sweep_range: [f64; 2],
    pub sweep_step: f64,
    /// Use at most this many cohort cases in sweeps and matching.
    pub max_cases: Option<usize>,
}

impl Default for SampleSection {
    fn default() -> Self {
        Self { ddim_steps: 10, seed: 0, sweep_range: [-3.0, 3.0], sweep_step: 1.0, max_cases: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsSection {
    /// PCA-align surface clouds before measuring distances.
    pub align: bool,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self { align: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatchSection {
    pub range: [f64; 2],
    pub step: f64,
}

impl Default for MatchSection {
    fn default() -> Self {
        Self { range: [-3.0, 5.0], step: 0.25 }
    }
}

/// Complete run configuration; every field has a default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub cohort: CohortSection,
    pub vcs: VcsSection,
    pub schedule: ScheduleConfig,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub sample: SampleSection,
    pub metrics: MetricsSection,
    #[serde(rename = "match")]
    pub matching: MatchSection,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cohort.n_cases == 0 {
            return Err(Error::Config("cohort.n_cases must be >= 1".into()));
        }
        self.cohort.generator().validate()?;
        self.schedule.build()?;
        self.model.network().validate()?;
        self.model.sdf().validate()?;
        self.train.validate()?;
        if self.sample.ddim_steps == 0 || self.sample.ddim_steps > self.schedule.steps {
            return Err(Error::Config(format!(
                "sample.ddim_steps must be in 1..={}, got {}",
                self.schedule.steps, self.sample.ddim_steps
            )));
        }
        let [lo, hi] = self.sample.sweep_range;
        if !(lo <= hi) || !(self.sample.sweep_step > 0.0) {
            return Err(Error::Config("sample.sweep_range must be ordered and sample.sweep_step > 0".into()));
        }
        let [lo, hi] = self.matching.range;
        if !(lo <= hi) || !(self.matching.step > 0.0) {
            return Err(Error::Config("match.range must be ordered and match.step > 0".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn round_trips_through_json() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for doc in [
            r#"{"trian": {}}"#,
            r#"{"train": {"epoch": 3}}"#,
            r#"{"cohort": {"n": 3}}"#,
            r#"{"model": {"width": [4]}}"#,
            r#"{"match": {"stride": 1}}"#,
        ] {
            let err = RunConfig::from_json(doc).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{doc}: {err}");
        }
    }

    #[test]
    fn partial_sections_merge_with_defaults() {
        let cfg = RunConfig::from_json(r#"{"train": {"epochs": 3}, "cohort": {"n_cases": 5, "spacing": 5.0}}"#).unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.batch_size, TrainConfig::default().batch_size);
        assert_eq!(cfg.cohort.n_cases, 5);
        assert_eq!(cfg.cohort.spacing, 5.0);
        assert_eq!(cfg.cohort.organs.len(), 3);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        assert!(RunConfig::from_json(r#"{"sample": {"ddim_steps": 0}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"train": {"dropout": 1.5}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"model": {"widths": []}}"#).is_err());
    }
}
