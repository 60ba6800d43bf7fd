//! Checkpoints: a JSON manifest plus a `DNP1`-tagged little-endian `f32`
//! parameter blob (`DNP1`, `u64` count, payload).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{DenoiserParams, ModelConfig};
use super::train::EpochRecord;
use crate::diffusion::ScheduleConfig;
use crate::error::{Error, Result};
use crate::vcs::VcsModel;
use crate::voxel::SdfConfig;

pub const MANIFEST_FILE: &str = "checkpoint.json";
pub const PARAMS_FILE: &str = "params.dnp";
const BLOB_MAGIC: &[u8; 4] = b"DNP1";
const HISTORY_TAIL: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    organ: String,
    epoch: usize,
    param_count: usize,
    model: ModelConfig,
    sdf: SdfConfig,
    schedule: ScheduleConfig,
    vcs: VcsModel,
    history_tail: Vec<EpochRecord>,
}

/// A trained per-organ model with everything needed to sample from it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub organ: String,
    pub epoch: usize,
    pub params: DenoiserParams,
    pub sdf: SdfConfig,
    pub schedule: ScheduleConfig,
    pub vcs: VcsModel,
    pub history_tail: Vec<EpochRecord>,
}

pub fn encode_params(params: &DenoiserParams) -> Vec<u8> {
    let mut buf = Vec::with_capacity(12 + 4 * params.len());
    buf.extend_from_slice(BLOB_MAGIC);
    buf.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for &v in params.flat() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    buf
}

pub fn decode_params(bytes: &[u8], config: ModelConfig) -> Result<DenoiserParams> {
    if bytes.len() < 12 || &bytes[..4] != BLOB_MAGIC {
        return Err(Error::Data("parameter blob lacks DNP1 tag".into()));
    }
    let count = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
    let expected = config.param_count();
    if count != expected || bytes.len() != 12 + 4 * count {
        return Err(Error::Data(format!(
            "parameter blob holds {count} values ({} payload bytes); config requires {expected}",
            bytes.len() - 12
        )));
    }
    let flat = bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    DenoiserParams::from_flat(config, flat)
}

impl Checkpoint {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let start = self.history_tail.len().saturating_sub(HISTORY_TAIL);
        let manifest = Manifest {
            format: "DNP1".into(),
            organ: self.organ.clone(),
            epoch: self.epoch,
            param_count: self.params.len(),
            model: self.params.config().clone(),
            sdf: self.sdf,
            schedule: self.schedule,
            vcs: self.vcs.clone(),
            history_tail: self.history_tail[start..].to_vec(),
        };
        let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Internal(e.to_string()))?;
        let mpath = dir.join(MANIFEST_FILE);
        fs::write(&mpath, json + "\n").map_err(|e| Error::io(&mpath, e))?;
        let ppath = dir.join(PARAMS_FILE);
        fs::write(&ppath, encode_params(&self.params)).map_err(|e| Error::io(&ppath, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mpath = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let m: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::Data(format!("{}: {e}", mpath.display())))?;
        if m.format != "DNP1" {
            return Err(Error::Data(format!("{}: unknown format {}", mpath.display(), m.format)));
        }
        m.model.validate()?;
        m.vcs.validate()?;
        if m.param_count != m.model.param_count() {
            return Err(Error::Data(format!(
                "{}: param_count {} does not match model config ({})",
                mpath.display(),
                m.param_count,
                m.model.param_count()
            )));
        }
        let ppath = dir.join(PARAMS_FILE);
        let bytes = fs::read(&ppath).map_err(|e| Error::io(&ppath, e))?;
        let params = decode_params(&bytes, m.model)
            .map_err(|e| Error::Data(format!("{}: {e}", ppath.display())))?;
        Ok(Self {
            organ: m.organ,
            epoch: m.epoch,
            params,
            sdf: m.sdf,
            schedule: m.schedule,
            vcs: m.vcs,
            history_tail: m.history_tail,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn round_trip_through_f32() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let cfg = ModelConfig { widths: vec![2, 4], ..Default::default() };
        let p = DenoiserParams::init(cfg.clone(), &mut rng).unwrap();
        let rounded: Vec<f64> = p.flat().iter().map(|&v| v as f32 as f64).collect();
        let p = DenoiserParams::from_flat(cfg.clone(), rounded).unwrap();
        let ck = Checkpoint {
            organ: "liver".into(),
            epoch: 3,
            params: p,
            sdf: SdfConfig::default(),
            schedule: ScheduleConfig::default(),
            vcs: VcsModel { organ: "liver".into(), a: 0.2, b: 1.0, mu: 0.0, sigma: 3.0, n_fit: 10 },
            history_tail: vec![],
        };
        let dir = tempfile::tempdir().unwrap();
        ck.save(dir.path()).unwrap();
        assert_eq!(Checkpoint::load(dir.path()).unwrap(), ck);
    }

    #[test]
    fn blob_length_must_match_config() {
        let cfg = ModelConfig { widths: vec![2], ..Default::default() };
        let p = DenoiserParams::zeros(cfg).unwrap();
        let blob = encode_params(&p);
        let other = ModelConfig { widths: vec![3], ..Default::default() };
        let err = decode_params(&blob, other).unwrap_err();
        assert!(err.to_string().contains("config requires"), "{err}");
        assert!(decode_params(&blob[..blob.len() - 4], p.config().clone()).is_err());
    }
}
