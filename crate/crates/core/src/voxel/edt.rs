//! Exact squared Euclidean distance transform by separable lower envelopes of
//! parabolas (Felzenszwalb & Huttenlocher). Distances are measured between
//! voxel centers in voxel units; all intermediate values are integers held in
//! `f64`, so the result is exact.

use super::grid::Dims;

/// Squared distance from every voxel to the nearest `site` voxel, or
/// `f64::INFINITY` when there are no sites.
pub fn squared_distance_to_sites(dims: Dims, sites: &[bool]) -> Vec<f64> {
    let [nx, ny, nz] = dims;
    debug_assert_eq!(sites.len(), nx * ny * nz);
    let mut f: Vec<f64> = sites
        .iter()
        .map(|&s| if s { 0.0 } else { f64::INFINITY })
        .collect();

    let longest = nx.max(ny).max(nz);
    let mut line = vec![0.0; longest];
    let mut out = vec![0.0; longest];
    let mut scratch = Envelope::with_capacity(longest);

    // x lines are contiguous
    for row in f.chunks_mut(nx) {
        line[..nx].copy_from_slice(row);
        scratch.transform(&line[..nx], &mut out[..nx]);
        row.copy_from_slice(&out[..nx]);
    }
    // y lines
    for z in 0..nz {
        for x in 0..nx {
            let base = x + nx * ny * z;
            for y in 0..ny {
                line[y] = f[base + nx * y];
            }
            scratch.transform(&line[..ny], &mut out[..ny]);
            for y in 0..ny {
                f[base + nx * y] = out[y];
            }
        }
    }
    // z lines
    let plane = nx * ny;
    for base in 0..plane {
        for z in 0..nz {
            line[z] = f[base + plane * z];
        }
        scratch.transform(&line[..nz], &mut out[..nz]);
        for z in 0..nz {
            f[base + plane * z] = out[z];
        }
    }
    f
}

struct Envelope {
    vertices: Vec<usize>,
    bounds: Vec<f64>,
}

impl Envelope {
    fn with_capacity(n: usize) -> Self {
        Self {
            vertices: Vec::with_capacity(n),
            bounds: Vec::with_capacity(n + 1),
        }
    }

    /// 1D transform: `out[q] = min_p (q - p)^2 + f[p]` over finite `f[p]`.
    fn transform(&mut self, f: &[f64], out: &mut [f64]) {
        self.vertices.clear();
        self.bounds.clear();
        for (q, &fq) in f.iter().enumerate() {
            if !fq.is_finite() {
                continue;
            }
            let qf = q as f64;
            loop {
                let Some(&v) = self.vertices.last() else {
                    self.vertices.push(q);
                    self.bounds.push(f64::NEG_INFINITY);
                    break;
                };
                let vf = v as f64;
                let s = ((fq + qf * qf) - (f[v] + vf * vf)) / (2.0 * qf - 2.0 * vf);
                if s <= *self.bounds.last().unwrap() {
                    self.vertices.pop();
                    self.bounds.pop();
                } else {
                    self.vertices.push(q);
                    self.bounds.push(s);
                    break;
                }
            }
        }
        if self.vertices.is_empty() {
            out.fill(f64::INFINITY);
            return;
        }
        let mut k = 0;
        for (q, o) in out.iter_mut().enumerate() {
            let qf = q as f64;
            while k + 1 < self.vertices.len() && self.bounds[k + 1] < qf {
                k += 1;
            }
            let v = self.vertices[k];
            let d = qf - v as f64;
            *o = d * d + f[v];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(dims: Dims, sites: &[bool]) -> Vec<f64> {
        let [nx, ny, nz] = dims;
        let mut out = vec![f64::INFINITY; sites.len()];
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let i = x + nx * (y + ny * z);
                    for sz in 0..nz {
                        for sy in 0..ny {
                            for sx in 0..nx {
                                if sites[sx + nx * (sy + ny * sz)] {
                                    let d = (x as f64 - sx as f64).powi(2)
                                        + (y as f64 - sy as f64).powi(2)
                                        + (z as f64 - sz as f64).powi(2);
                                    out[i] = out[i].min(d);
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn no_sites_is_infinite() {
        let d = squared_distance_to_sites([3, 4, 2], &[false; 24]);
        assert!(d.iter().all(|v| v.is_infinite()));
    }

    #[test]
    fn anisotropic_dims_match_brute_force() {
        let dims = [5, 3, 7];
        let mut sites = vec![false; 105];
        sites[17] = true;
        sites[88] = true;
        assert_eq!(squared_distance_to_sites(dims, &sites), brute(dims, &sites));
    }
}
