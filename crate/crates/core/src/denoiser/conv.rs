//! 3×3×3 convolutions with zero padding 1, stride 1 or 2, on channel-major
//! feature maps (`[channel][z][y][x]`, x fastest).
//!
//! Each output element is accumulated in a fixed order regardless of how the
//! channel loop is split across threads, so results are bit-identical for any
//! thread count.

use rayon::prelude::*;

use crate::voxel::Dims;

pub(crate) const TAPS: usize = 27;

/// Static shape of one convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvShape {
    pub cin: usize,
    pub cout: usize,
    pub stride: usize,
}

impl ConvShape {
    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * TAPS
    }

    pub fn out_dims(&self, d: Dims) -> Dims {
        [d[0] / self.stride, d[1] / self.stride, d[2] / self.stride]
    }
}

fn voxels(d: Dims) -> usize {
    d[0] * d[1] * d[2]
}

/// `out[x] += w0·inp[x-1] + w1·inp[x] + w2·inp[x+1]` with zero padding.
#[inline]
fn row3_acc(out: &mut [f64], inp: &[f64], w: [f64; 3]) {
    let n = out.len();
    debug_assert_eq!(inp.len(), n);
    if n == 1 {
        out[0] += w[1] * inp[0];
        return;
    }
    out[0] += w[1] * inp[0] + w[2] * inp[1];
    for x in 1..n - 1 {
        out[x] += w[0] * inp[x - 1] + w[1] * inp[x] + w[2] * inp[x + 1];
    }
    out[n - 1] += w[0] * inp[n - 2] + w[1] * inp[n - 1];
}

/// Stride-2 variant: `out[x] += Σ_d w_d · inp[2x + d - 1]`.
#[inline]
fn row3_acc_s2(out: &mut [f64], inp: &[f64], w: [f64; 3]) {
    let n = out.len();
    debug_assert_eq!(inp.len(), 2 * n);
    out[0] += w[1] * inp[0] + w[2] * inp[1];
    for x in 1..n {
        let c = 2 * x;
        out[x] += w[0] * inp[c - 1] + w[1] * inp[c] + w[2] * inp[c + 1];
    }
}

/// Returns the in-bounds input coordinate for output `o`, tap `d` (0..3).
#[inline]
fn src(o: usize, d: usize, stride: usize, n_in: usize) -> Option<usize> {
    let i = (o * stride + d) as isize - 1;
    (i >= 0 && (i as usize) < n_in).then_some(i as usize)
}

pub(crate) fn forward(
    shape: ConvShape,
    input: &[f64],
    in_dims: Dims,
    weight: &[f64],
    bias: &[f64],
) -> Vec<f64> {
    let od = shape.out_dims(in_dims);
    let (n_in, n_out) = (voxels(in_dims), voxels(od));
    debug_assert_eq!(input.len(), shape.cin * n_in);
    let mut out = vec![0.0; shape.cout * n_out];
    out.par_chunks_mut(n_out).enumerate().for_each(|(co, oc)| {
        oc.fill(bias[co]);
        for ci in 0..shape.cin {
            let ic = &input[ci * n_in..(ci + 1) * n_in];
            let wk = &weight[(co * shape.cin + ci) * TAPS..][..TAPS];
            for z in 0..od[2] {
                for dz in 0..3 {
                    let Some(zi) = src(z, dz, shape.stride, in_dims[2]) else { continue };
                    for y in 0..od[1] {
                        for dy in 0..3 {
                            let Some(yi) = src(y, dy, shape.stride, in_dims[1]) else { continue };
                            let w = [wk[dz * 9 + dy * 3], wk[dz * 9 + dy * 3 + 1], wk[dz * 9 + dy * 3 + 2]];
                            let orow = &mut oc[od[0] * (y + od[1] * z)..][..od[0]];
                            let irow = &ic[in_dims[0] * (yi + in_dims[1] * zi)..][..in_dims[0]];
                            if shape.stride == 1 {
                                row3_acc(orow, irow, w);
                            } else {
                                row3_acc_s2(orow, irow, w);
                            }
                        }
                    }
                }
            }
        }
    });
    out
}

/// Accumulates weight and bias gradients and optionally returns the input
/// gradient.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward(
    shape: ConvShape,
    input: &[f64],
    in_dims: Dims,
    weight: &[f64],
    grad_out: &[f64],
    grad_weight: &mut [f64],
    grad_bias: &mut [f64],
    want_input_grad: bool,
) -> Option<Vec<f64>> {
    let od = shape.out_dims(in_dims);
    let (n_in, n_out) = (voxels(in_dims), voxels(od));
    let (nxi, nxo) = (in_dims[0], od[0]);

    for (co, gb) in grad_bias.iter_mut().enumerate() {
        *gb += grad_out[co * n_out..(co + 1) * n_out].iter().sum::<f64>();
    }

    grad_weight
        .par_chunks_mut(shape.cin * TAPS)
        .enumerate()
        .for_each(|(co, gw_co)| {
            let gc = &grad_out[co * n_out..(co + 1) * n_out];
            for ci in 0..shape.cin {
                let ic = &input[ci * n_in..(ci + 1) * n_in];
                let gw = &mut gw_co[ci * TAPS..(ci + 1) * TAPS];
                for z in 0..od[2] {
                    for dz in 0..3 {
                        let Some(zi) = src(z, dz, shape.stride, in_dims[2]) else { continue };
                        for y in 0..od[1] {
                            for dy in 0..3 {
                                let Some(yi) = src(y, dy, shape.stride, in_dims[1]) else { continue };
                                let grow = &gc[nxo * (y + od[1] * z)..][..nxo];
                                let irow = &ic[nxi * (yi + in_dims[1] * zi)..][..nxi];
                                let base = dz * 9 + dy * 3;
                                let (s0, s1, s2) = if shape.stride == 1 {
                                    dots_s1(grow, irow)
                                } else {
                                    dots_s2(grow, irow)
                                };
                                gw[base] += s0;
                                gw[base + 1] += s1;
                                gw[base + 2] += s2;
                            }
                        }
                    }
                }
            }
        });

    if !want_input_grad {
        return None;
    }
    let mut gin = vec![0.0; shape.cin * n_in];
    gin.par_chunks_mut(n_in).enumerate().for_each(|(ci, gic)| {
        for co in 0..shape.cout {
            let gc = &grad_out[co * n_out..(co + 1) * n_out];
            let wk = &weight[(co * shape.cin + ci) * TAPS..][..TAPS];
            for z in 0..od[2] {
                for dz in 0..3 {
                    let Some(zi) = src(z, dz, shape.stride, in_dims[2]) else { continue };
                    for y in 0..od[1] {
                        for dy in 0..3 {
                            let Some(yi) = src(y, dy, shape.stride, in_dims[1]) else { continue };
                            let w = [wk[dz * 9 + dy * 3], wk[dz * 9 + dy * 3 + 1], wk[dz * 9 + dy * 3 + 2]];
                            let grow = &gc[nxo * (y + od[1] * z)..][..nxo];
                            let irow = &mut gic[nxi * (yi + in_dims[1] * zi)..][..nxi];
                            if shape.stride == 1 {
                                // transpose of a 3-tap correlation is the flipped correlation
                                row3_acc(irow, grow, [w[2], w[1], w[0]]);
                            } else {
                                scatter_s2(irow, grow, w);
                            }
                        }
                    }
                }
            }
        }
    });
    Some(gin)
}

/// Dot products of `g[x]` with `inp[x-1]`, `inp[x]`, `inp[x+1]` (zero padded).
#[inline]
fn dots_s1(g: &[f64], inp: &[f64]) -> (f64, f64, f64) {
    let n = g.len();
    let mut s1 = 0.0;
    for x in 0..n {
        s1 += g[x] * inp[x];
    }
    let mut s0 = 0.0;
    for x in 1..n {
        s0 += g[x] * inp[x - 1];
    }
    let mut s2 = 0.0;
    for x in 0..n - 1 {
        s2 += g[x] * inp[x + 1];
    }
    (s0, s1, s2)
}

#[inline]
fn dots_s2(g: &[f64], inp: &[f64]) -> (f64, f64, f64) {
    let n = g.len();
    let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
    for x in 0..n {
        let c = 2 * x;
        if x > 0 {
            s0 += g[x] * inp[c - 1];
        }
        s1 += g[x] * inp[c];
        s2 += g[x] * inp[c + 1];
    }
    (s0, s1, s2)
}

#[inline]
fn scatter_s2(gin: &mut [f64], g: &[f64], w: [f64; 3]) {
    for (x, &gx) in g.iter().enumerate() {
        let c = 2 * x;
        if x > 0 {
            gin[c - 1] += w[0] * gx;
        }
        gin[c] += w[1] * gx;
        gin[c + 1] += w[2] * gx;
    }
}

/// Nearest-neighbour ×2 upsampling of a channel-major map at `dims`.
pub(crate) fn upsample2(input: &[f64], channels: usize, dims: Dims) -> Vec<f64> {
    let [nx, ny, nz] = dims;
    let od = [2 * nx, 2 * ny, 2 * nz];
    let (n_in, n_out) = (voxels(dims), voxels(od));
    let mut out = vec![0.0; channels * n_out];
    for c in 0..channels {
        let ic = &input[c * n_in..(c + 1) * n_in];
        let oc = &mut out[c * n_out..(c + 1) * n_out];
        for z in 0..od[2] {
            for y in 0..od[1] {
                let irow = &ic[nx * (y / 2 + ny * (z / 2))..][..nx];
                let orow = &mut oc[od[0] * (y + od[1] * z)..][..od[0]];
                for (x, o) in orow.iter_mut().enumerate() {
                    *o = irow[x / 2];
                }
            }
        }
    }
    out
}

/// Adjoint of [`upsample2`]: sums each 2×2×2 block. `dims` is the coarse size.
pub(crate) fn upsample2_backward(grad: &[f64], channels: usize, dims: Dims) -> Vec<f64> {
    let [nx, ny, nz] = dims;
    let od = [2 * nx, 2 * ny, 2 * nz];
    let (n_in, n_out) = (voxels(dims), voxels(od));
    let mut out = vec![0.0; channels * n_in];
    for c in 0..channels {
        let gc = &grad[c * n_out..(c + 1) * n_out];
        let oc = &mut out[c * n_in..(c + 1) * n_in];
        for z in 0..od[2] {
            for y in 0..od[1] {
                let grow = &gc[od[0] * (y + od[1] * z)..][..od[0]];
                let orow = &mut oc[nx * (y / 2 + ny * (z / 2))..][..nx];
                for (x, &g) in grow.iter().enumerate() {
                    orow[x / 2] += g;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct 7-loop convolution used as the reference.
    fn naive(shape: ConvShape, input: &[f64], d: Dims, w: &[f64], b: &[f64]) -> Vec<f64> {
        let od = shape.out_dims(d);
        let n_out = voxels(od);
        let n_in = voxels(d);
        let mut out = vec![0.0; shape.cout * n_out];
        for co in 0..shape.cout {
            for z in 0..od[2] {
                for y in 0..od[1] {
                    for x in 0..od[0] {
                        let mut acc = b[co];
                        for ci in 0..shape.cin {
                            for dz in 0..3 {
                                for dy in 0..3 {
                                    for dx in 0..3 {
                                        let zi = (z * shape.stride + dz) as isize - 1;
                                        let yi = (y * shape.stride + dy) as isize - 1;
                                        let xi = (x * shape.stride + dx) as isize - 1;
                                        if zi < 0 || yi < 0 || xi < 0 {
                                            continue;
                                        }
                                        let (zi, yi, xi) = (zi as usize, yi as usize, xi as usize);
                                        if zi >= d[2] || yi >= d[1] || xi >= d[0] {
                                            continue;
                                        }
                                        acc += w[(co * shape.cin + ci) * 27 + dz * 9 + dy * 3 + dx]
                                            * input[ci * n_in + xi + d[0] * (yi + d[1] * zi)];
                                    }
                                }
                            }
                        }
                        out[co * n_out + x + od[0] * (y + od[1] * z)] = acc;
                    }
                }
            }
        }
        out
    }

    fn random(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn forward_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for stride in [1, 2] {
            let shape = ConvShape { cin: 2, cout: 3, stride };
            let d = [6, 4, 8];
            let input = random(2 * voxels(d), &mut rng);
            let w = random(shape.weight_len(), &mut rng);
            let b = random(3, &mut rng);
            let got = forward(shape, &input, d, &w, &b);
            let want = naive(shape, &input, d, &w, &b);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_is_adjoint_of_forward() {
        // <gout, conv(x)> is bilinear; check input and weight gradients via
        // the adjoint identity with zero bias.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for stride in [1, 2] {
            let shape = ConvShape { cin: 2, cout: 2, stride };
            let d = [4, 6, 4];
            let od = shape.out_dims(d);
            let x = random(2 * voxels(d), &mut rng);
            let w = random(shape.weight_len(), &mut rng);
            let g = random(2 * voxels(od), &mut rng);
            let zero = vec![0.0; 2];
            let y = forward(shape, &x, d, &w, &zero);
            let lhs: f64 = y.iter().zip(&g).map(|(a, b)| a * b).sum();

            let mut gw = vec![0.0; w.len()];
            let mut gb = vec![0.0; 2];
            let gx = backward(shape, &x, d, &w, &g, &mut gw, &mut gb, true).unwrap();
            let via_x: f64 = gx.iter().zip(&x).map(|(a, b)| a * b).sum();
            let via_w: f64 = gw.iter().zip(&w).map(|(a, b)| a * b).sum();
            assert!((lhs - via_x).abs() < 1e-10, "{lhs} vs {via_x}");
            assert!((lhs - via_w).abs() < 1e-10, "{lhs} vs {via_w}");
            let gsum: Vec<f64> = g.chunks(voxels(od)).map(|c| c.iter().sum()).collect();
            assert!((gb[0] - gsum[0]).abs() < 1e-12 && (gb[1] - gsum[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn upsample_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = [2, 3, 2];
        let x = random(2 * voxels(d), &mut rng);
        let g = random(2 * 8 * voxels(d), &mut rng);
        let y = upsample2(&x, 2, d);
        let lhs: f64 = y.iter().zip(&g).map(|(a, b)| a * b).sum();
        let gx = upsample2_backward(&g, 2, d);
        let rhs: f64 = gx.iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
