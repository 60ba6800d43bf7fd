//! Procedural phantom cohort: an ellipsoidal body with log-normal volume and
//! organs as tilted ellipsoids whose volumes follow `a·V_B + b + N(0, σ²)`,
//! placed by rejection sampling so that every organ lies inside the body and
//! no two organs overlap.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, tag};
use crate::voxel::{compose_context, sdf_from_mask, vgf, volume_ml, voxel_volume_ml, BinaryMask, Dims, ScalarGrid, SdfConfig};

const MAX_ATTEMPTS: usize = 500;
const SHRINK_AFTER: usize = 50;
const MAX_SHRINK: f64 = 0.2;
const MAX_CONSECUTIVE_REJECTIONS: u64 = 10;

const PURPOSE_BODY: u64 = 1;
const PURPOSE_VOLUME: u64 = 2;
const PURPOSE_PLACE: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrganSpec {
    pub name: String,
    /// mL of organ per mL of body.
    pub volume_slope: f64,
    /// mL.
    pub volume_intercept: f64,
    /// Standard deviation of the volume residual, mL.
    pub residual_noise: f64,
    /// Bounds for the two minor-to-major axis ratios.
    pub eccentricity: [f64; 2],
    /// Fractional box (per axis `[lo, hi]`) of the body's bounding box in
    /// which the organ center is drawn.
    pub placement_region: [[f64; 2]; 3],
    /// Maximum tilt about each axis, degrees.
    #[serde(default = "default_tilt")]
    pub max_tilt_deg: f64,
}

fn default_tilt() -> f64 {
    25.0
}

impl OrganSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("organ {}: {what}", self.name)));
        if self.name.is_empty() || !self.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return bad("name must be non-empty [A-Za-z0-9_]");
        }
        if !(self.volume_slope >= 0.0 && self.volume_slope.is_finite()) {
            return bad("volume_slope must be >= 0");
        }
        if !self.volume_intercept.is_finite() {
            return bad("volume_intercept must be finite");
        }
        if !(self.residual_noise >= 0.0 && self.residual_noise.is_finite()) {
            return bad("residual_noise must be >= 0");
        }
        let [lo, hi] = self.eccentricity;
        if !(0.2..=5.0).contains(&lo) || !(0.2..=5.0).contains(&hi) || lo > hi {
            return bad("eccentricity bounds must satisfy 0.2 <= lo <= hi <= 5");
        }
        for [a, b] in self.placement_region {
            if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) || a > b {
                return bad("placement_region must lie inside the unit cube");
            }
        }
        if !(0.0..=90.0).contains(&self.max_tilt_deg) {
            return bad("max_tilt_deg must be in [0, 90]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BodySpec {
    pub median_volume_ml: f64,
    /// Standard deviation of log body volume.
    pub log_sigma: f64,
    /// Log-normal draws are truncated at this many standard deviations.
    pub truncate_sigmas: f64,
    /// Relative semi-axes along x, y, z.
    pub axis_ratios: [f64; 3],
}

impl Default for BodySpec {
    fn default() -> Self {
        Self {
            median_volume_ml: 7000.0,
            log_sigma: 0.12,
            truncate_sigmas: 2.5,
            axis_ratios: [1.15, 1.0, 0.87],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CohortConfig {
    pub dims: Dims,
    pub spacing: f64,
    pub body: BodySpec,
    /// Generation order; large organs first.
    pub organs: Vec<OrganSpec>,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            dims: [32, 32, 32],
            spacing: 10.0,
            body: BodySpec::default(),
            organs: default_organs(),
        }
    }
}

/// Desk defaults: three organs on a 32³ grid at 10 mm. The volume
/// relationships are synthetic.
pub fn default_organs() -> Vec<OrganSpec> {
    vec![
        OrganSpec {
            name: "liver".into(),
            volume_slope: 0.2,
            volume_intercept: 100.0,
            residual_noise: 180.0,
            eccentricity: [0.65, 0.9],
            placement_region: [[0.3, 0.45], [0.4, 0.6], [0.4, 0.6]],
            max_tilt_deg: 25.0,
        },
        OrganSpec {
            name: "stomach".into(),
            volume_slope: 0.04,
            volume_intercept: 120.0,
            residual_noise: 80.0,
            eccentricity: [0.5, 0.8],
            placement_region: [[0.6, 0.75], [0.2, 0.4], [0.55, 0.75]],
            max_tilt_deg: 25.0,
        },
        OrganSpec {
            name: "spleen".into(),
            volume_slope: 0.03,
            volume_intercept: 40.0,
            residual_noise: 45.0,
            eccentricity: [0.5, 0.8],
            placement_region: [[0.72, 0.85], [0.5, 0.75], [0.4, 0.6]],
            max_tilt_deg: 25.0,
        },
    ]
}

impl CohortConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(Error::Config(format!("cohort.dims must be positive, got {:?}", self.dims)));
        }
        if !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return Err(Error::Config("cohort.spacing must be > 0".into()));
        }
        let b = &self.body;
        if !(b.median_volume_ml > 0.0 && b.log_sigma >= 0.0 && b.truncate_sigmas >= 0.0)
            || b.axis_ratios.iter().any(|&r| !(r > 0.0))
        {
            return Err(Error::Config("cohort.body parameters must be positive".into()));
        }
        if self.organs.is_empty() {
            return Err(Error::Config("cohort.organs must not be empty".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for o in &self.organs {
            o.validate()?;
            if !seen.insert(&o.name) {
                return Err(Error::Config(format!("duplicate organ {}", o.name)));
            }
        }
        Ok(())
    }

    pub fn organ_names(&self) -> Vec<String> {
        self.organs.iter().map(|o| o.name.clone()).collect()
    }
}

/// One organ's reference mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrganMask {
    pub name: String,
    pub mask: BinaryMask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomCase {
    pub case_id: String,
    pub body: BinaryMask,
    /// In generation order.
    pub organs: Vec<OrganMask>,
    pub true_volumes: BTreeMap<String, f64>,
}

impl PhantomCase {
    pub fn organ(&self, name: &str) -> Option<&BinaryMask> {
        self.organs.iter().find(|o| o.name == name).map(|o| &o.mask)
    }

    pub fn organ_index(&self, name: &str) -> Option<usize> {
        self.organs.iter().position(|o| o.name == name)
    }

    pub fn body_volume(&self) -> f64 {
        volume_ml(&self.body)
    }

    pub fn organ_volume(&self, name: &str) -> Option<f64> {
        self.organ(name).map(volume_ml)
    }

    /// Context SDF and mask formed by the organs preceding `organ`.
    pub fn context_before(&self, organ: &str, sdf: &SdfConfig) -> Result<(ScalarGrid, BinaryMask)> {
        let k = self
            .organ_index(organ)
            .ok_or_else(|| Error::Data(format!("{}: no organ {organ}", self.case_id)))?;
        let (dims, spacing) = (self.body.dims(), self.body.spacing());
        let prior: Vec<ScalarGrid> = self.organs[..k].iter().map(|o| sdf_from_mask(&o.mask, sdf)).collect();
        let refs: Vec<&ScalarGrid> = prior.iter().collect();
        let mut mask = BinaryMask::empty(dims, spacing)?;
        for o in &self.organs[..k] {
            mask = mask.union(&o.mask)?;
        }
        Ok((compose_context(&refs, dims, spacing, sdf)?, mask))
    }

    /// Checks containment, pairwise disjointness and recorded volumes.
    pub fn check_invariants(&self) -> Result<()> {
        let mut occupied = BinaryMask::empty(self.body.dims(), self.body.spacing())?;
        for o in &self.organs {
            if !o.mask.is_subset_of(&self.body)? {
                return Err(Error::Data(format!("{}: organ {} leaves the body", self.case_id, o.name)));
            }
            if o.mask.intersection_count(&occupied)? != 0 {
                return Err(Error::Data(format!("{}: organ {} overlaps an earlier organ", self.case_id, o.name)));
            }
            occupied = occupied.union(&o.mask)?;
            let recorded = self.true_volumes.get(&o.name).copied();
            if recorded != Some(volume_ml(&o.mask)) {
                return Err(Error::Data(format!(
                    "{}: recorded volume {recorded:?} for {} differs from mask volume {}",
                    self.case_id,
                    o.name,
                    volume_ml(&o.mask)
                )));
            }
        }
        Ok(())
    }
}

type Mat3 = [[f64; 3]; 3];

fn rotation(ax: f64, ay: f64, az: f64) -> Mat3 {
    let (sx, cx) = ax.sin_cos();
    let (sy, cy) = ay.sin_cos();
    let (sz, cz) = az.sin_cos();
    let rx = [[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]];
    let ry = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
    let rz = [[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]];
    mat_mul(&rz, &mat_mul(&ry, &rx))
}

fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// The `count` voxels with the smallest ellipsoidal radius
/// `Σ ((Rᵀ(x − c))_i / r_i)²`; ties go to the lower linear index.
fn ellipsoid_voxels(dims: Dims, center: [f64; 3], radii: [f64; 3], rot: &Mat3, count: usize) -> Vec<usize> {
    let [nx, ny, nz] = dims;
    let mut q = Vec::with_capacity(nx * ny * nz);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let d = [x as f64 - center[0], y as f64 - center[1], z as f64 - center[2]];
                let mut s = 0.0;
                for i in 0..3 {
                    // local coordinate i = column i of R dotted with d
                    let l = rot[0][i] * d[0] + rot[1][i] * d[1] + rot[2][i] * d[2];
                    s += (l / radii[i]) * (l / radii[i]);
                }
                q.push((s, q.len()));
            }
        }
    }
    let count = count.min(q.len());
    if count == 0 {
        return Vec::new();
    }
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    q.select_nth_unstable_by(count - 1, cmp);
    let mut idx: Vec<usize> = q[..count].iter().map(|&(_, i)| i).collect();
    idx.sort_unstable();
    idx
}

fn body_mask(cfg: &CohortConfig, rng: &mut impl Rng) -> Result<BinaryMask> {
    let b = &cfg.body;
    let z: f64 = rng.sample::<f64, _>(StandardNormal).clamp(-b.truncate_sigmas, b.truncate_sigmas);
    let volume = b.median_volume_ml * (b.log_sigma * z).exp();
    let count = (volume / voxel_volume_ml(cfg.spacing)).round() as usize;
    let center = [
        (cfg.dims[0] as f64 - 1.0) / 2.0 + rng.gen_range(-0.5..0.5),
        (cfg.dims[1] as f64 - 1.0) / 2.0 + rng.gen_range(-0.5..0.5),
        (cfg.dims[2] as f64 - 1.0) / 2.0 + rng.gen_range(-0.5..0.5),
    ];
    let ident = rotation(0.0, 0.0, 0.0);
    let mut mask = BinaryMask::empty(cfg.dims, cfg.spacing)?;
    for i in ellipsoid_voxels(cfg.dims, center, b.axis_ratios, &ident, count.max(1)) {
        mask.bits_mut()[i] = true;
    }
    Ok(mask)
}

fn bounding_box(mask: &BinaryMask) -> [[f64; 2]; 3] {
    let [nx, ny, nz] = mask.dims();
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if mask.get(x, y, z) {
                    for (i, c) in [x, y, z].into_iter().enumerate() {
                        lo[i] = lo[i].min(c as f64);
                        hi[i] = hi[i].max(c as f64);
                    }
                }
            }
        }
    }
    [[lo[0], hi[0]], [lo[1], hi[1]], [lo[2], hi[2]]]
}

/// Tries to place one organ; `None` after `MAX_ATTEMPTS` failures.
fn place_organ(
    cfg: &CohortConfig,
    spec: &OrganSpec,
    target_voxels: usize,
    body: &BinaryMask,
    occupied: &BinaryMask,
    bbox: &[[f64; 2]; 3],
    seed: u64,
    key: &[u64],
) -> Option<BinaryMask> {
    let tilt = spec.max_tilt_deg.to_radians();
    for attempt in 0..MAX_ATTEMPTS {
        let mut akey = key.to_vec();
        akey.push(attempt as u64);
        let mut rng = stream(seed, &akey);
        let shrink = if attempt < SHRINK_AFTER {
            1.0
        } else {
            1.0 - MAX_SHRINK * (attempt - SHRINK_AFTER) as f64 / (MAX_ATTEMPTS - SHRINK_AFTER - 1) as f64
        };
        let count = ((target_voxels as f64 * shrink.powi(3)).round() as usize).max(1);
        let [lo, hi] = spec.eccentricity;
        let radii = [1.0, rng.gen_range(lo..=hi), rng.gen_range(lo..=hi)];
        let rot = rotation(
            rng.gen_range(-tilt..=tilt),
            rng.gen_range(-tilt..=tilt),
            rng.gen_range(-tilt..=tilt),
        );
        let mut center = [0.0; 3];
        for i in 0..3 {
            let [flo, fhi] = spec.placement_region[i];
            let [blo, bhi] = bbox[i];
            let f = if fhi > flo { rng.gen_range(flo..=fhi) } else { flo };
            center[i] = blo + f * (bhi - blo);
        }
        let voxels = ellipsoid_voxels(cfg.dims, center, radii, &rot, count);
        let fits = voxels
            .iter()
            .all(|&i| body.bits()[i] && !occupied.bits()[i]);
        if fits {
            let mut m = BinaryMask::empty(cfg.dims, cfg.spacing).ok()?;
            for i in voxels {
                m.bits_mut()[i] = true;
            }
            return Some(m);
        }
    }
    None
}

fn try_case(cfg: &CohortConfig, seed: u64, case: u64, sub: u64) -> Result<Option<PhantomCase>> {
    let mut body_rng = stream(seed, &[case, sub, PURPOSE_BODY]);
    let body = body_mask(cfg, &mut body_rng)?;
    let body_volume = volume_ml(&body);
    let bbox = bounding_box(&body);
    let vox = voxel_volume_ml(cfg.spacing);
    let mut occupied = BinaryMask::empty(cfg.dims, cfg.spacing)?;
    let mut organs = Vec::with_capacity(cfg.organs.len());
    let mut true_volumes = BTreeMap::new();
    for spec in &cfg.organs {
        let otag = tag(&spec.name);
        let mut vrng = stream(seed, &[case, sub, otag, PURPOSE_VOLUME]);
        let noise: f64 = vrng.sample(StandardNormal);
        let target = spec.volume_slope * body_volume + spec.volume_intercept + spec.residual_noise * noise;
        let target_voxels = ((target / vox).round().max(1.0)) as usize;
        let Some(mask) = place_organ(
            cfg,
            spec,
            target_voxels,
            &body,
            &occupied,
            &bbox,
            seed,
            &[case, sub, otag, PURPOSE_PLACE],
        ) else {
            log::debug!("case={case} sub={sub} organ={} placement failed", spec.name);
            return Ok(None);
        };
        occupied = occupied.union(&mask)?;
        true_volumes.insert(spec.name.clone(), volume_ml(&mask));
        organs.push(OrganMask {
            name: spec.name.clone(),
            mask,
        });
    }
    Ok(Some(PhantomCase {
        case_id: format!("case_{case:04}"),
        body,
        organs,
        true_volumes,
    }))
}

fn generate_case(cfg: &CohortConfig, seed: u64, case: u64) -> Result<PhantomCase> {
    for sub in 0..=MAX_CONSECUTIVE_REJECTIONS {
        if let Some(c) = try_case(cfg, seed, case, sub)? {
            return Ok(c);
        }
    }
    Err(Error::Data(format!(
        "case_{case:04}: organ placement failed in more than {MAX_CONSECUTIVE_REJECTIONS} consecutive regenerations"
    )))
}

/// Deterministic cohort of `n_cases` phantoms. Cases are generated in
/// parallel; keyed random streams make the output independent of the
/// thread count.
pub fn generate_cohort(seed: u64, n_cases: usize, cfg: &CohortConfig) -> Result<Vec<PhantomCase>> {
    cfg.validate()?;
    if n_cases == 0 {
        return Err(Error::Config("n_cases must be >= 1".into()));
    }
    (0..n_cases as u64)
        .into_par_iter()
        .map(|case| generate_case(cfg, seed, case))
        .collect()
}

/// Copy of `specs` with `shift` mL added to the intercept of `organ`.
pub fn shift_cohort_volumes(specs: &[OrganSpec], shift: f64, organ: &str) -> Result<Vec<OrganSpec>> {
    let mut out = specs.to_vec();
    let spec = out
        .iter_mut()
        .find(|s| s.name == organ)
        .ok_or_else(|| Error::Config(format!("unknown organ {organ}")))?;
    spec.volume_intercept += shift;
    Ok(out)
}

pub const CASE_MANIFEST: &str = "manifest.json";
pub const BODY_FILE: &str = "body.vgf";

pub fn organ_file(name: &str) -> String {
    format!("organ_{name}.vgf")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CaseManifest {
    case_id: String,
    dims: Dims,
    spacing: f64,
    organ_order: Vec<String>,
    body_volume_ml: f64,
    true_volumes: BTreeMap<String, f64>,
}

/// Writes `dir/{body.vgf, organ_<name>.vgf, manifest.json}`.
pub fn save_case(dir: &Path, case: &PhantomCase) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    vgf::write_mask(&dir.join(BODY_FILE), &case.body)?;
    for o in &case.organs {
        vgf::write_mask(&dir.join(organ_file(&o.name)), &o.mask)?;
    }
    let manifest = CaseManifest {
        case_id: case.case_id.clone(),
        dims: case.body.dims(),
        spacing: case.body.spacing(),
        organ_order: case.organs.iter().map(|o| o.name.clone()).collect(),
        body_volume_ml: case.body_volume(),
        true_volumes: case.true_volumes.clone(),
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Internal(e.to_string()))?;
    let path = dir.join(CASE_MANIFEST);
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
}

fn load_mask_checked(path: &Path, dims: Dims, spacing: f64) -> Result<BinaryMask> {
    if !path.exists() {
        return Err(Error::Data(format!("missing grid file {}", path.display())));
    }
    let m = vgf::read_mask(path)?;
    if m.dims() != dims || m.spacing() != spacing {
        return Err(Error::Data(format!(
            "{}: VGF dims {:?} @ {} mm do not match manifest dims {dims:?} @ {spacing} mm",
            path.display(),
            m.dims(),
            m.spacing()
        )));
    }
    Ok(m)
}

pub fn load_case(dir: &Path) -> Result<PhantomCase> {
    let path = dir.join(CASE_MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: CaseManifest =
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let body = load_mask_checked(&dir.join(BODY_FILE), m.dims, m.spacing)?;
    let organs = m
        .organ_order
        .iter()
        .map(|name| {
            Ok(OrganMask {
                name: name.clone(),
                mask: load_mask_checked(&dir.join(organ_file(name)), m.dims, m.spacing)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PhantomCase {
        case_id: m.case_id,
        body,
        organs,
        true_volumes: m.true_volumes,
    })
}

pub fn save_cohort(root: &Path, cases: &[PhantomCase]) -> Result<()> {
    for c in cases {
        save_case(&root.join(&c.case_id), c)?;
    }
    Ok(())
}

/// Loads every `case_*` directory under `root`, sorted by name.
pub fn load_cohort(root: &Path) -> Result<Vec<PhantomCase>> {
    let entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.join(CASE_MANIFEST).exists())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Data(format!("no case directories under {}", root.display())));
    }
    dirs.iter().map(|d| load_case(d)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_organ(noise: f64) -> CohortConfig {
        let mut organs = default_organs();
        organs.truncate(1);
        organs[0].residual_noise = noise;
        CohortConfig {
            organs,
            ..Default::default()
        }
    }

    #[test]
    fn noiseless_volume_is_exact_to_a_voxel() {
        let cfg = one_organ(0.0);
        let case = &generate_cohort(1, 1, &cfg).unwrap()[0];
        let spec = &cfg.organs[0];
        let want = spec.volume_slope * case.body_volume() + spec.volume_intercept;
        let got = case.organ_volume("liver").unwrap();
        assert!((got - want).abs() <= voxel_volume_ml(cfg.spacing), "{got} vs {want}");
    }

    #[test]
    fn same_seed_is_identical() {
        let cfg = CohortConfig::default();
        let a = generate_cohort(5, 3, &cfg).unwrap();
        let b = generate_cohort(5, 3, &cfg).unwrap();
        assert_eq!(a, b);
        let c = generate_cohort(6, 3, &cfg).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn invariants_hold_for_default_organs() {
        for case in generate_cohort(11, 6, &CohortConfig::default()).unwrap() {
            case.check_invariants().unwrap();
            assert_eq!(case.organs.len(), 3);
        }
    }

    #[test]
    fn shift_only_touches_named_organ() {
        let specs = default_organs();
        let shifted = shift_cohort_volumes(&specs, 200.0, "liver").unwrap();
        assert_eq!(shifted[0].volume_intercept, specs[0].volume_intercept + 200.0);
        assert_eq!(shifted[1..], specs[1..]);
        assert_eq!(shift_cohort_volumes(&specs, 0.0, "liver").unwrap(), specs);
        assert!(shift_cohort_volumes(&specs, 1.0, "pancreas").is_err());
    }

    #[test]
    fn spec_validation() {
        let mut s = default_organs().remove(0);
        s.eccentricity = [0.1, 0.5];
        assert!(s.validate().is_err());
        let mut s = default_organs().remove(0);
        s.placement_region[0] = [0.5, 1.2];
        assert!(s.validate().is_err());
        let mut s = default_organs().remove(0);
        s.volume_slope = -1.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn save_load_round_trip_and_errors() {
        let case = generate_cohort(2, 1, &CohortConfig::default()).unwrap().remove(0);
        let dir = tempfile::tempdir().unwrap();
        let cdir = dir.path().join(&case.case_id);
        save_case(&cdir, &case).unwrap();
        assert_eq!(load_case(&cdir).unwrap(), case);
        assert_eq!(load_cohort(dir.path()).unwrap(), vec![case.clone()]);

        fs::remove_file(cdir.join("organ_spleen.vgf")).unwrap();
        let err = load_case(&cdir).unwrap_err().to_string();
        assert!(err.contains("organ_spleen.vgf"), "{err}");

        let small = BinaryMask::empty([8, 8, 8], 10.0).unwrap();
        vgf::write_mask(&cdir.join("organ_spleen.vgf"), &small).unwrap();
        let err = load_case(&cdir).unwrap_err().to_string();
        assert!(err.contains("[8, 8, 8]") && err.contains("[32, 32, 32]"), "{err}");
    }
}
