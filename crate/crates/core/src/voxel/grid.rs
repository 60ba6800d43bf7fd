use crate::error::{Error, Result};

/// Voxel counts along x, y and z.
pub type Dims = [usize; 3];

/// Dense 3D field of `f64` values on an isotropic grid, x-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarGrid {
    dims: Dims,
    spacing: f64,
    values: Vec<f64>,
}

/// Dense 3D boolean occupancy, x-fastest.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    dims: Dims,
    spacing_bits: u64,
    bits: Vec<bool>,
}

fn check_geometry(dims: Dims, spacing: f64) -> Result<usize> {
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::Data(format!("grid dims must be positive, got {dims:?}")));
    }
    if !(spacing.is_finite() && spacing > 0.0) {
        return Err(Error::Data(format!("spacing must be positive and finite, got {spacing}")));
    }
    Ok(dims[0] * dims[1] * dims[2])
}

#[inline]
pub(crate) fn linear_index(dims: Dims, x: usize, y: usize, z: usize) -> usize {
    x + dims[0] * (y + dims[1] * z)
}

impl ScalarGrid {
    pub fn new(dims: Dims, spacing: f64, values: Vec<f64>) -> Result<Self> {
        let n = check_geometry(dims, spacing)?;
        if values.len() != n {
            return Err(Error::Data(format!(
                "value count {} does not match dims {dims:?} ({n})",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite value {} at index {i}", values[i])));
        }
        Ok(Self { dims, spacing, values })
    }

    pub fn filled(dims: Dims, spacing: f64, value: f64) -> Result<Self> {
        let n = check_geometry(dims, spacing)?;
        Self::new(dims, spacing, vec![value; n])
    }

    /// Builds a grid from values the caller guarantees are finite and sized.
    pub(crate) fn from_raw(dims: Dims, spacing: f64, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), dims[0] * dims[1] * dims[2]);
        Self { dims, spacing, values }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.values[linear_index(self.dims, x, y, z)]
    }

    /// Applies `f` elementwise, rejecting non-finite results.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.dims, self.spacing, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn same_geometry<G: Geometry>(&self, other: &G) -> bool {
        self.dims == other.dims() && self.spacing == other.spacing()
    }
}

impl BinaryMask {
    pub fn new(dims: Dims, spacing: f64, bits: Vec<bool>) -> Result<Self> {
        let n = check_geometry(dims, spacing)?;
        if bits.len() != n {
            return Err(Error::Data(format!(
                "bit count {} does not match dims {dims:?} ({n})",
                bits.len()
            )));
        }
        Ok(Self {
            dims,
            spacing_bits: spacing.to_bits(),
            bits,
        })
    }

    pub fn empty(dims: Dims, spacing: f64) -> Result<Self> {
        let n = check_geometry(dims, spacing)?;
        Self::new(dims, spacing, vec![false; n])
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> f64 {
        f64::from_bits(self.spacing_bits)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn bits_mut(&mut self) -> &mut [bool] {
        &mut self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.bits[linear_index(self.dims, x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, value: bool) {
        let i = linear_index(self.dims, x, y, z);
        self.bits[i] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn any(&self) -> bool {
        self.bits.iter().any(|&b| b)
    }

    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask> {
        ensure_same_geometry(self, other, "union")?;
        let bits = self.bits.iter().zip(&other.bits).map(|(&a, &b)| a || b).collect();
        BinaryMask::new(self.dims, self.spacing(), bits)
    }

    pub fn intersection_count(&self, other: &BinaryMask) -> Result<usize> {
        ensure_same_geometry(self, other, "intersection")?;
        Ok(self.bits.iter().zip(&other.bits).filter(|(&a, &b)| a && b).count())
    }

    /// True when every set voxel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> Result<bool> {
        ensure_same_geometry(self, other, "subset")?;
        Ok(self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b))
    }
}

/// Shared geometry accessors for grids and masks.
pub trait Geometry {
    fn dims(&self) -> Dims;
    fn spacing(&self) -> f64;
}

impl Geometry for ScalarGrid {
    fn dims(&self) -> Dims {
        self.dims
    }
    fn spacing(&self) -> f64 {
        self.spacing
    }
}

impl Geometry for BinaryMask {
    fn dims(&self) -> Dims {
        self.dims
    }
    fn spacing(&self) -> f64 {
        BinaryMask::spacing(self)
    }
}

pub fn ensure_same_geometry<A: Geometry, B: Geometry>(a: &A, b: &B, what: &str) -> Result<()> {
    if a.dims() != b.dims() || a.spacing() != b.spacing() {
        return Err(Error::Data(format!(
            "{what}: geometry mismatch ({:?} @ {} mm vs {:?} @ {} mm)",
            a.dims(),
            a.spacing(),
            b.dims(),
            b.spacing()
        )));
    }
    Ok(())
}
