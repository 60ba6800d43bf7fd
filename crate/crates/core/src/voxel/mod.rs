//! Voxel grids, signed distance fields, occupancy and volume measurement.
//!
//! SDFs are in voxel units and positive inside: `σ(k·S)` is then close to one
//! inside a shape, and the pointwise maximum of two SDFs thresholds to the
//! union of their shapes.

mod edt;
mod grid;
pub mod vgf;

pub use edt::squared_distance_to_sites;
pub use grid::{ensure_same_geometry, BinaryMask, Dims, Geometry, ScalarGrid};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in millimetres.
pub type Point3 = [f64; 3];

/// Truncation and occupancy sharpness for signed distance fields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SdfConfig {
    /// Clamp distance in voxel units.
    pub truncation: f64,
    /// Logistic slope used for soft occupancy.
    pub sharpness: f64,
}

impl Default for SdfConfig {
    fn default() -> Self {
        Self {
            truncation: 10.0,
            sharpness: 10.0,
        }
    }
}

impl SdfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.truncation.is_finite() && self.truncation > 0.0) {
            return Err(Error::Config(format!(
                "sdf.truncation must be > 0, got {}",
                self.truncation
            )));
        }
        if !(self.sharpness.is_finite() && self.sharpness > 0.0) {
            return Err(Error::Config(format!(
                "sdf.sharpness must be > 0, got {}",
                self.sharpness
            )));
        }
        Ok(())
    }

    /// Uniform `-τ` grid: the empty shape.
    pub fn empty_sdf(&self, dims: Dims, spacing: f64) -> Result<ScalarGrid> {
        ScalarGrid::filled(dims, spacing, -self.truncation)
    }
}

/// Unclamped signed distances (voxel units) between voxel centers.
/// Positive inside, infinite when the opposite class is absent.
pub fn signed_distance_unclamped(mask: &BinaryMask) -> Vec<f64> {
    let dims = mask.dims();
    let bits = mask.bits();
    let background: Vec<bool> = bits.iter().map(|&b| !b).collect();
    let to_background = squared_distance_to_sites(dims, &background);
    let to_foreground = squared_distance_to_sites(dims, bits);
    bits.iter()
        .zip(to_background.iter().zip(&to_foreground))
        .map(|(&inside, (&db, &df))| if inside { db.sqrt() } else { -df.sqrt() })
        .collect()
}

/// Exact Euclidean signed distance field of `mask`, clamped to `[-τ, τ]`.
pub fn sdf_from_mask(mask: &BinaryMask, cfg: &SdfConfig) -> ScalarGrid {
    let tau = cfg.truncation;
    let values = signed_distance_unclamped(mask)
        .into_iter()
        .map(|d| d.clamp(-tau, tau))
        .collect();
    ScalarGrid::from_raw(mask.dims(), mask.spacing(), values)
}

/// Numerically stable logistic function.
#[inline]
pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Soft occupancy `σ(k·S)`.
pub fn occupancy(sdf: &ScalarGrid, cfg: &SdfConfig) -> ScalarGrid {
    let k = cfg.sharpness;
    let values = sdf.values().iter().map(|&s| logistic(k * s)).collect();
    ScalarGrid::from_raw(sdf.dims(), sdf.spacing(), values)
}

/// Sets voxels where `S >= 0`.
pub fn threshold(sdf: &ScalarGrid) -> BinaryMask {
    let bits = sdf.values().iter().map(|&s| s >= 0.0).collect();
    BinaryMask::new(sdf.dims(), sdf.spacing(), bits).expect("geometry already validated")
}

/// Pointwise maximum of organ SDFs; the empty sequence is the uniform `-τ`
/// grid of the given geometry.
pub fn compose_context(
    sdfs: &[&ScalarGrid],
    dims: Dims,
    spacing: f64,
    cfg: &SdfConfig,
) -> Result<ScalarGrid> {
    let mut acc = cfg.empty_sdf(dims, spacing)?.into_values();
    for (i, s) in sdfs.iter().enumerate() {
        if s.dims() != dims || s.spacing() != spacing {
            return Err(Error::Data(format!(
                "context grid {i} has geometry {:?} @ {} mm, expected {dims:?} @ {spacing} mm",
                s.dims(),
                s.spacing()
            )));
        }
        for (a, &v) in acc.iter_mut().zip(s.values()) {
            *a = a.max(v);
        }
    }
    Ok(ScalarGrid::from_raw(dims, spacing, acc))
}

fn voxel_ml(spacing: f64) -> f64 {
    spacing * spacing * spacing / 1000.0
}

/// Hard volume in millilitres.
pub fn volume_ml(mask: &BinaryMask) -> f64 {
    mask.count() as f64 * voxel_ml(mask.spacing())
}

/// Soft volume `Σ occ · spacing³ / 1000` in millilitres.
pub fn soft_volume_ml(occ: &ScalarGrid) -> f64 {
    occ.values().iter().sum::<f64>() * voxel_ml(occ.spacing())
}

/// Millilitres per voxel for the given spacing.
pub fn voxel_volume_ml(spacing: f64) -> f64 {
    voxel_ml(spacing)
}

/// Centers (mm) of foreground voxels with a 6-neighbour that is background or
/// outside the grid.
pub fn surface_points(mask: &BinaryMask) -> Result<Vec<Point3>> {
    if !mask.any() {
        return Err(Error::Data("surface_points: mask is empty".into()));
    }
    let [nx, ny, nz] = mask.dims();
    let h = mask.spacing();
    let inside = |x: isize, y: isize, z: isize| {
        x >= 0
            && y >= 0
            && z >= 0
            && (x as usize) < nx
            && (y as usize) < ny
            && (z as usize) < nz
            && mask.get(x as usize, y as usize, z as usize)
    };
    let mut pts = Vec::new();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if !mask.get(x, y, z) {
                    continue;
                }
                let (xi, yi, zi) = (x as isize, y as isize, z as isize);
                let interior = inside(xi - 1, yi, zi)
                    && inside(xi + 1, yi, zi)
                    && inside(xi, yi - 1, zi)
                    && inside(xi, yi + 1, zi)
                    && inside(xi, yi, zi - 1)
                    && inside(xi, yi, zi + 1);
                if !interior {
                    pts.push([x as f64 * h, y as f64 * h, z as f64 * h]);
                }
            }
        }
    }
    Ok(pts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn cube(n: usize, lo: usize, side: usize, spacing: f64) -> BinaryMask {
        let mut m = BinaryMask::empty([n, n, n], spacing).unwrap();
        for z in lo..lo + side {
            for y in lo..lo + side {
                for x in lo..lo + side {
                    m.set(x, y, z, true);
                }
            }
        }
        m
    }

    #[test]
    fn single_voxel_sdf() {
        let m = cube(5, 2, 1, 1.0);
        let s = sdf_from_mask(&m, &SdfConfig::default());
        assert_eq!(s.get(2, 2, 2), 1.0);
        assert_eq!(s.get(2, 2, 3), -1.0);
        assert_abs_diff_eq!(s.get(0, 0, 0), -(12f64).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn empty_and_full_masks_use_truncation() {
        let cfg = SdfConfig::default();
        let empty = BinaryMask::empty([4, 4, 4], 1.0).unwrap();
        assert!(sdf_from_mask(&empty, &cfg).values().iter().all(|&v| v == -10.0));
        let full = BinaryMask::new([4, 4, 4], 1.0, vec![true; 64]).unwrap();
        assert!(sdf_from_mask(&full, &cfg).values().iter().all(|&v| v == 10.0));
    }

    #[test]
    fn solid_cube_center_distance() {
        let s = sdf_from_mask(&cube(9, 3, 3, 1.0), &SdfConfig::default());
        assert_eq!(s.get(4, 4, 4), 2.0);
    }

    #[test]
    fn occupancy_values() {
        let cfg = SdfConfig::default();
        let g = ScalarGrid::new([3, 1, 1], 1.0, vec![0.0, 1.0, -0.2]).unwrap();
        let o = occupancy(&g, &cfg);
        assert_eq!(o.values()[0], 0.5);
        assert_abs_diff_eq!(o.values()[1], 0.9999546, epsilon = 1e-7);
        assert_abs_diff_eq!(o.values()[2], 0.1192029, epsilon = 1e-7);
    }

    #[test]
    fn threshold_uniform_grids() {
        let neg = ScalarGrid::filled([2, 2, 2], 1.0, -10.0).unwrap();
        let pos = ScalarGrid::filled([2, 2, 2], 1.0, 10.0).unwrap();
        assert!(!threshold(&neg).any());
        assert_eq!(threshold(&pos).count(), 8);
    }

    #[test]
    fn empty_context_and_identity() {
        let cfg = SdfConfig::default();
        let c = compose_context(&[], [3, 3, 3], 2.0, &cfg).unwrap();
        assert!(c.values().iter().all(|&v| v == -10.0));

        let s = sdf_from_mask(&cube(5, 1, 2, 2.0), &cfg);
        let empty = cfg.empty_sdf([5, 5, 5], 2.0).unwrap();
        assert_eq!(compose_context(&[&s, &empty], [5, 5, 5], 2.0, &cfg).unwrap(), s);
    }

    #[test]
    fn context_mismatch_names_index() {
        let cfg = SdfConfig::default();
        let a = cfg.empty_sdf([4, 4, 4], 1.0).unwrap();
        let b = cfg.empty_sdf([4, 4, 5], 1.0).unwrap();
        let err = compose_context(&[&a, &b], [4, 4, 4], 1.0, &cfg).unwrap_err();
        assert!(err.to_string().contains("context grid 1"), "{err}");
    }

    #[test]
    fn disjoint_voxels_compose_to_union() {
        let cfg = SdfConfig::default();
        let a = cube(6, 1, 1, 1.0);
        let b = cube(6, 4, 1, 1.0);
        let sa = sdf_from_mask(&a, &cfg);
        let sb = sdf_from_mask(&b, &cfg);
        let c = compose_context(&[&sa, &sb], [6, 6, 6], 1.0, &cfg).unwrap();
        assert_eq!(threshold(&c), a.union(&b).unwrap());
    }

    #[test]
    fn volumes() {
        let empty = BinaryMask::empty([10, 10, 10], 10.0).unwrap();
        assert_eq!(volume_ml(&empty), 0.0);
        let full = BinaryMask::new([10, 10, 10], 10.0, vec![true; 1000]).unwrap();
        assert_eq!(volume_ml(&full), 1000.0);
        let one = cube(3, 1, 1, 1.0);
        assert_abs_diff_eq!(volume_ml(&one), 0.001, epsilon = 1e-15);

        let ones = ScalarGrid::filled([10, 10, 10], 10.0, 1.0).unwrap();
        assert_eq!(soft_volume_ml(&ones), 1000.0);
        let halves = ScalarGrid::filled([10, 10, 10], 10.0, 0.5).unwrap();
        assert_eq!(soft_volume_ml(&halves), 500.0);
        let zeros = ScalarGrid::filled([10, 10, 10], 10.0, 0.0).unwrap();
        assert_eq!(soft_volume_ml(&zeros), 0.0);
    }

    #[test]
    fn surface_point_counts() {
        let one = cube(5, 2, 1, 2.0);
        assert_eq!(surface_points(&one).unwrap(), vec![[4.0, 4.0, 4.0]]);
        assert_eq!(surface_points(&cube(5, 1, 3, 1.0)).unwrap().len(), 26);
        assert_eq!(surface_points(&cube(4, 1, 2, 1.0)).unwrap().len(), 8);
        let empty = BinaryMask::empty([3, 3, 3], 1.0).unwrap();
        assert!(surface_points(&empty).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(SdfConfig { truncation: 0.0, ..Default::default() }.validate().is_err());
        assert!(SdfConfig { sharpness: -1.0, ..Default::default() }.validate().is_err());
        assert!(SdfConfig::default().validate().is_ok());
    }
}
