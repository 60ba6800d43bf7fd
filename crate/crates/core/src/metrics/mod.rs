//! Shape fidelity (Dice, surface distances), manifold realism, diversity and
//! the 1-D Wasserstein distance between volume samples.

mod kdtree;

use std::fmt::Write as _;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use kdtree::KdTree;

use crate::error::{Error, Result};
use crate::voxel::{ensure_same_geometry, surface_points, BinaryMask, Point3};

/// `2|A∩B| / (|A|+|B|)`; two empty masks score 1.
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    ensure_same_geometry(a, b, "dice")?;
    let inter = a.intersection_count(b)?;
    let total = a.count() + b.count();
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

/// Points in their principal-axis frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedCloud {
    points: Vec<Point3>,
    /// Covariance eigenvalues, descending.
    eigenvalues: [f64; 3],
}

impl AlignedCloud {
    /// Wraps points as-is, for distances without alignment.
    pub fn unaligned(points: Vec<Point3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Data("point cloud is empty".into()));
        }
        Ok(Self { points, eigenvalues: [f64::NAN; 3] })
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn eigenvalues(&self) -> [f64; 3] {
        self.eigenvalues
    }
}

fn centroid(points: &[Point3]) -> Point3 {
    let n = points.len() as f64;
    let mut c = [0.0; 3];
    for p in points {
        for i in 0..3 {
            c[i] += p[i];
        }
    }
    c.map(|s| s / n)
}

fn lex_cmp(a: &Vector3<f64>, b: &Vector3<f64>) -> std::cmp::Ordering {
    (0..3)
        .map(|i| a[i].total_cmp(&b[i]))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

/// Makes the largest-magnitude component positive (first one on ties).
fn canonical_sign(v: Vector3<f64>) -> Vector3<f64> {
    let mut k = 0;
    for i in 1..3 {
        if v[i].abs() > v[k].abs() {
            k = i;
        }
    }
    if v[k] < 0.0 {
        -v
    } else {
        v
    }
}

/// Centroid removal and rotation onto the covariance eigenbasis.
///
/// Axes are ordered by descending eigenvalue. Eigenvalues equal within
/// `1e-9` of the largest are degenerate and their axes are ordered
/// lexicographically by sign-normalised eigenvector, descending. Each axis
/// is then flipped so that the third central moment along it is
/// non-negative; a vanishing moment keeps the sign-normalised direction.
pub fn align(points: &[Point3]) -> Result<AlignedCloud> {
    if points.is_empty() {
        return Err(Error::Data("align: point cloud is empty".into()));
    }
    let c = centroid(points);
    let centered: Vec<Vector3<f64>> = points
        .iter()
        .map(|p| Vector3::new(p[0] - c[0], p[1] - c[1], p[2] - c[2]))
        .collect();
    let n = points.len() as f64;
    let mut cov = Matrix3::zeros();
    for v in &centered {
        cov += v * v.transpose();
    }
    cov /= n;
    let eig = SymmetricEigen::new(cov);
    let mut axes: Vec<(f64, Vector3<f64>)> = (0..3)
        .map(|i| (eig.eigenvalues[i], canonical_sign(eig.eigenvectors.column(i).into_owned())))
        .collect();
    let scale = axes.iter().map(|a| a.0.abs()).fold(0.0, f64::max);
    let tol = 1e-9 * scale.max(f64::MIN_POSITIVE);
    axes.sort_by(|a, b| {
        if (a.0 - b.0).abs() <= tol {
            lex_cmp(&b.1, &a.1)
        } else {
            b.0.total_cmp(&a.0)
        }
    });
    let axes: Vec<(f64, Vector3<f64>)> = axes
        .into_iter()
        .map(|(lambda, e)| {
            let m3: f64 = centered.iter().map(|v| v.dot(&e).powi(3)).sum::<f64>() / n;
            let m_tol = 1e-12 * (lambda.abs().sqrt().powi(3)).max(f64::MIN_POSITIVE);
            if m3 < -m_tol {
                (lambda, -e)
            } else {
                (lambda, e)
            }
        })
        .collect();
    let aligned = centered
        .iter()
        .map(|v| [v.dot(&axes[0].1), v.dot(&axes[1].1), v.dot(&axes[2].1)])
        .collect();
    Ok(AlignedCloud {
        points: aligned,
        eigenvalues: [axes[0].0, axes[1].0, axes[2].0],
    })
}

/// Symmetric surface distances in mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceDistances {
    pub assd_mm: f64,
    pub hd95_mm: f64,
    pub chamfer_mm: f64,
}

/// Percentile with linear interpolation between order statistics.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    let frac = pos - lo as f64;
    v[lo] + frac * (v[hi] - v[lo])
}

fn directed(from: &[Point3], to: &KdTree) -> Vec<f64> {
    from.iter().map(|p| to.nearest_distance(p)).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// ASSD and HD95 over the pooled nearest-neighbour distances of both
/// directions; Chamfer is the average of the two directed means.
pub fn surface_distances(a: &AlignedCloud, b: &AlignedCloud) -> Result<SurfaceDistances> {
    if a.points.is_empty() || b.points.is_empty() {
        return Err(Error::Data("surface_distances: empty cloud".into()));
    }
    let d_ab = directed(&a.points, &KdTree::new(&b.points));
    let d_ba = directed(&b.points, &KdTree::new(&a.points));
    Ok(pooled(&d_ab, &d_ba))
}

fn pooled(d_ab: &[f64], d_ba: &[f64]) -> SurfaceDistances {
    let mut all = d_ab.to_vec();
    all.extend_from_slice(d_ba);
    SurfaceDistances {
        assd_mm: mean(&all),
        hd95_mm: percentile(&all, 95.0),
        chamfer_mm: 0.5 * (mean(d_ab) + mean(d_ba)),
    }
}

/// Surface cloud of a mask, PCA-aligned when `aligned` is set.
pub fn mask_cloud(mask: &BinaryMask, aligned: bool) -> Result<AlignedCloud> {
    let pts = surface_points(mask)?;
    if aligned {
        align(&pts)
    } else {
        AlignedCloud::unaligned(pts)
    }
}

/// A cloud with its search tree, for repeated queries.
struct Indexed {
    cloud: AlignedCloud,
    tree: KdTree,
}

impl Indexed {
    fn new(cloud: AlignedCloud) -> Self {
        let tree = KdTree::new(&cloud.points);
        Self { cloud, tree }
    }

    fn distances(&self, other: &Indexed) -> SurfaceDistances {
        let d_ab = directed(&self.cloud.points, &other.tree);
        let d_ba = directed(&other.cloud.points, &self.tree);
        pooled(&d_ab, &d_ba)
    }
}

fn index_all(masks: &[BinaryMask], aligned: bool) -> Result<Vec<Indexed>> {
    masks
        .par_iter()
        .map(|m| mask_cloud(m, aligned).map(Indexed::new))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NearestNeighbour {
    /// Index of the closest training sample by Chamfer distance.
    pub train_index: usize,
    pub chamfer_mm: f64,
    pub hd95_mm: f64,
}

/// For each generated mask, the training mask with the smallest Chamfer
/// distance (lowest index on ties) and the HD95 to that same neighbour.
pub fn nn_realism(generated: &[BinaryMask], train: &[BinaryMask], aligned: bool) -> Result<Vec<NearestNeighbour>> {
    if generated.is_empty() || train.is_empty() {
        return Err(Error::Data("nn_realism: empty mask sequence".into()));
    }
    let gen = index_all(generated, aligned)?;
    let tr = index_all(train, aligned)?;
    Ok(gen
        .par_iter()
        .map(|g| {
            let mut best = NearestNeighbour { train_index: 0, chamfer_mm: f64::INFINITY, hd95_mm: f64::INFINITY };
            for (j, t) in tr.iter().enumerate() {
                let d = g.distances(t);
                if d.chamfer_mm < best.chamfer_mm {
                    best = NearestNeighbour { train_index: j, chamfer_mm: d.chamfer_mm, hd95_mm: d.hd95_mm };
                }
            }
            best
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diversity {
    pub pairs: usize,
    pub dice_mean: f64,
    pub dice_std: f64,
    pub chamfer_mean_mm: f64,
    pub chamfer_std_mm: f64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let m = mean(v);
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64;
    (m, var.sqrt())
}

/// Mean and population standard deviation of Dice and Chamfer over all
/// unordered pairs.
pub fn pairwise_diversity(masks: &[BinaryMask], aligned: bool) -> Result<Diversity> {
    if masks.len() < 2 {
        return Err(Error::Data(format!("pairwise_diversity needs >= 2 masks, got {}", masks.len())));
    }
    let idx = index_all(masks, aligned)?;
    let pairs: Vec<(usize, usize)> = (0..masks.len())
        .flat_map(|i| (i + 1..masks.len()).map(move |j| (i, j)))
        .collect();
    let scores = pairs
        .par_iter()
        .map(|&(i, j)| Ok((dice(&masks[i], &masks[j])?, idx[i].distances(&idx[j]).chamfer_mm)))
        .collect::<Result<Vec<_>>>()?;
    let dices: Vec<f64> = scores.iter().map(|s| s.0).collect();
    let chamfers: Vec<f64> = scores.iter().map(|s| s.1).collect();
    let (dice_mean, dice_std) = mean_std(&dices);
    let (chamfer_mean_mm, chamfer_std_mm) = mean_std(&chamfers);
    Ok(Diversity { pairs: pairs.len(), dice_mean, dice_std, chamfer_mean_mm, chamfer_std_mm })
}

/// `∫ |F_a − F_b|` of the two empirical CDFs, exact for unequal sizes.
pub fn wasserstein1(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Data("wasserstein1: empty sample".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("wasserstein1: non-finite sample".into()));
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(f64::total_cmp);
    sb.sort_by(f64::total_cmp);
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut x = sa[0].min(sb[0]);
    let mut total = 0.0;
    while i < sa.len() || j < sb.len() {
        let next = match (sa.get(i), sb.get(j)) {
            (Some(&p), Some(&q)) => p.min(q),
            (Some(&p), None) => p,
            (None, Some(&q)) => q,
            (None, None) => unreachable!(),
        };
        total += (i as f64 / na - j as f64 / nb).abs() * (next - x);
        x = next;
        while i < sa.len() && sa[i] == x {
            i += 1;
        }
        while j < sb.len() && sb[j] == x {
            j += 1;
        }
    }
    Ok(total)
}

/// Fidelity of one generated organ against its reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub case_id: String,
    pub organ: String,
    pub dice: f64,
    pub assd_mm: f64,
    pub hd95_mm: f64,
    pub chamfer_mm: f64,
}

pub fn fidelity(case_id: &str, organ: &str, generated: &BinaryMask, reference: &BinaryMask, aligned: bool) -> Result<FidelityReport> {
    let dice = dice(generated, reference)?;
    let d = surface_distances(&mask_cloud(generated, aligned)?, &mask_cloud(reference, aligned)?)?;
    Ok(FidelityReport {
        case_id: case_id.into(),
        organ: organ.into(),
        dice,
        assd_mm: d.assd_mm,
        hd95_mm: d.hd95_mm,
        chamfer_mm: d.chamfer_mm,
    })
}

/// One `case,organ,metric,value` record.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub case_id: String,
    pub organ: String,
    pub metric: String,
    pub value: f64,
}

impl MetricRow {
    pub fn new(case_id: &str, organ: &str, metric: &str, value: f64) -> Self {
        Self { case_id: case_id.into(), organ: organ.into(), metric: metric.into(), value }
    }
}

impl FidelityReport {
    pub fn rows(&self) -> Vec<MetricRow> {
        [("dice", self.dice), ("assd_mm", self.assd_mm), ("hd95_mm", self.hd95_mm), ("chamfer_mm", self.chamfer_mm)]
            .into_iter()
            .map(|(m, v)| MetricRow::new(&self.case_id, &self.organ, m, v))
            .collect()
    }
}

pub const CSV_HEADER: &str = "case,organ,metric,value";

/// Long-format CSV with header `case,organ,metric,value`.
pub fn to_csv(rows: &[MetricRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(out, "{},{},{},{}", r.case_id, r.organ, r.metric, r.value).unwrap();
    }
    out
}
