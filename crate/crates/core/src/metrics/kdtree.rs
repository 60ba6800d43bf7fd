//! Static 3-d tree for nearest-neighbour distance queries.

use crate::voxel::Point3;

#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Point3>,
    // the subtree over points[lo..hi] is split at its middle element
    axes: Vec<u8>,
}

fn dist2(a: &Point3, b: &Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

impl KdTree {
    pub fn new(points: &[Point3]) -> Self {
        let mut pts = points.to_vec();
        let mut axes = vec![0u8; pts.len()];
        build(&mut pts, &mut axes, 0);
        Self { points: pts, axes }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Euclidean distance to the closest stored point; `INFINITY` when empty.
    pub fn nearest_distance(&self, q: &Point3) -> f64 {
        let mut best = f64::INFINITY;
        self.search(q, 0, self.points.len(), &mut best);
        best.sqrt()
    }

    fn search(&self, q: &Point3, lo: usize, hi: usize, best: &mut f64) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let p = &self.points[mid];
        let d = dist2(q, p);
        if d < *best {
            *best = d;
        }
        let axis = self.axes[mid] as usize;
        let delta = q[axis] - p[axis];
        let (near, far) = if delta < 0.0 { ((lo, mid), (mid + 1, hi)) } else { ((mid + 1, hi), (lo, mid)) };
        self.search(q, near.0, near.1, best);
        if delta * delta < *best {
            self.search(q, far.0, far.1, best);
        }
    }
}

fn build(pts: &mut [Point3], axes: &mut [u8], depth: usize) {
    if pts.is_empty() {
        return;
    }
    let axis = depth % 3;
    let mid = pts.len() / 2;
    pts.select_nth_unstable_by(mid, |a, b| a[axis].total_cmp(&b[axis]));
    axes[mid] = axis as u8;
    let (left, rest) = pts.split_at_mut(mid);
    let (la, ra) = axes.split_at_mut(mid);
    build(left, la, depth + 1);
    build(&mut rest[1..], &mut ra[1..], depth + 1);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn matches_linear_scan() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for n in [1usize, 2, 7, 64, 300] {
            let pts: Vec<Point3> = (0..n).map(|_| [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen::<f64>().round()]).collect();
            let tree = KdTree::new(&pts);
            for _ in 0..50 {
                let q = [rng.gen_range(-6.0..6.0), rng.gen_range(-6.0..6.0), rng.gen_range(-1.0..2.0)];
                let brute = pts.iter().map(|p| dist2(&q, p)).fold(f64::INFINITY, f64::min).sqrt();
                assert_eq!(tree.nearest_distance(&q), brute);
            }
        }
        assert_eq!(KdTree::new(&[]).nearest_distance(&[0.0; 3]), f64::INFINITY);
    }
}
