//! Forward and reverse-mode passes of the FiLM-conditioned U-shaped denoiser.
//!
//! Encoder level `l` applies a 3×3×3 convolution (stride 2 for `l > 0`),
//! FiLM and SiLU. Each decoder level convolves at its own resolution, applies
//! FiLM and SiLU, upsamples ×2 and adds the encoder skip. A final 3×3×3
//! convolution emits the clean-SDF estimate.

use super::conv::{self, ConvShape};
use super::params::{ConvBlock, DenoiserParams, FilmBlock};
use crate::diffusion::Conditioning;
use crate::error::{Error, Result};
use crate::voxel::{Dims, ScalarGrid};

#[inline]
fn sigmoid(x: f64) -> f64 {
    crate::voxel::logistic(x)
}

#[inline]
fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Sinusoidal embedding of an integer timestep.
pub fn timestep_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut e = vec![0.0; dim];
    for k in 0..half {
        let freq = (-(10000f64).ln() * k as f64 / half as f64).exp();
        let a = t as f64 * freq;
        e[k] = a.sin();
        e[k + half] = a.cos();
    }
    e
}

fn voxels(d: Dims) -> usize {
    d[0] * d[1] * d[2]
}

pub(crate) struct Cache {
    level_dims: Vec<Dims>,
    e_t: Vec<f64>,
    v: f64,
    v_on: bool,
    u: Vec<f64>,
    h1: Vec<f64>,
    e_v: Vec<f64>,
    gamma: Vec<Vec<f64>>,
    /// Input to each stage's convolution.
    stage_in: Vec<Vec<f64>>,
    /// Convolution output before FiLM.
    pre: Vec<Vec<f64>>,
    /// FiLM output before SiLU.
    film_out: Vec<Vec<f64>>,
    /// Input to the output convolution.
    head_in: Vec<f64>,
}

struct StagePlan<'a> {
    conv: &'a ConvBlock,
    film: &'a FilmBlock,
    /// Resolution level of the convolution input.
    level: usize,
}

fn stages(params: &DenoiserParams) -> Vec<StagePlan<'_>> {
    let lay = params.layout();
    let levels = params.config().levels();
    let mut out = Vec::with_capacity(2 * levels - 1);
    for l in 0..levels {
        out.push(StagePlan {
            conv: if l == 0 { &lay.in_conv } else { &lay.downs[l - 1] },
            film: &lay.films[l],
            level: l.saturating_sub(1),
        });
    }
    for (k, l) in (1..levels).rev().enumerate() {
        out.push(StagePlan {
            conv: &lay.ups[l - 1],
            film: &lay.films[levels + k],
            level: l,
        });
    }
    out
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite value in {what} at element {i}")));
    }
    Ok(())
}

fn film_coefficients(
    flat: &[f64],
    fb: &FilmBlock,
    e_t: &[f64],
    e_v: &[f64],
    v_on: bool,
) -> (Vec<f64>, Vec<f64>) {
    let dt = e_t.len();
    let dv = e_v.len();
    let dot = |w: &[f64], e: &[f64]| w.iter().zip(e).map(|(a, b)| a * b).sum::<f64>();
    let mut gamma = vec![0.0; fb.channels];
    let mut beta = vec![0.0; fb.channels];
    for c in 0..fb.channels {
        let gt = dot(&flat[fb.gamma_t.start + c * dt..][..dt], e_t);
        let bt = dot(&flat[fb.beta_t.start + c * dt..][..dt], e_t);
        let (gv, bv) = if v_on {
            (
                dot(&flat[fb.gamma_v.start + c * dv..][..dv], e_v),
                dot(&flat[fb.beta_v.start + c * dv..][..dv], e_v),
            )
        } else {
            (0.0, 0.0)
        };
        gamma[c] = 1.0 + flat[fb.gamma_0.start + c] + gt + gv;
        beta[c] = flat[fb.beta_0.start + c] + bt + bv;
    }
    (gamma, beta)
}

fn conv_forward(flat: &[f64], cb: &ConvBlock, input: &[f64], dims: Dims) -> Vec<f64> {
    conv::forward(cb.shape, input, dims, &flat[cb.w.clone()], &flat[cb.b.clone()])
}

pub(crate) fn forward_cached(
    params: &DenoiserParams,
    x_t: &ScalarGrid,
    c: &Conditioning,
    t: usize,
) -> Result<(Vec<f64>, Cache)> {
    let cfg = params.config();
    let dims = x_t.dims();
    if c.body.dims() != dims || c.context.dims() != dims {
        return Err(Error::Data(format!(
            "denoiser input dims {dims:?} differ from conditioning {:?}/{:?}",
            c.body.dims(),
            c.context.dims()
        )));
    }
    let factor = cfg.dims_factor();
    if dims.iter().any(|d| d % factor != 0) {
        return Err(Error::Data(format!(
            "grid dims {dims:?} must be divisible by {factor} for {} levels",
            cfg.levels()
        )));
    }
    let levels = cfg.levels();
    let level_dims: Vec<Dims> = (0..levels)
        .map(|l| [dims[0] >> l, dims[1] >> l, dims[2] >> l])
        .collect();
    let flat = params.flat();
    let lay = params.layout();

    let e_t = timestep_embedding(t, cfg.t_embed_dim);
    let dv = cfg.v_embed_dim;
    let v = c.v;
    let u: Vec<f64> = (0..dv).map(|j| flat[lay.vmlp.w1.start + j] * v + flat[lay.vmlp.b1.start + j]).collect();
    let h1: Vec<f64> = u.iter().map(|&x| silu(x)).collect();
    let e_v: Vec<f64> = (0..dv)
        .map(|i| {
            let row = &flat[lay.vmlp.w2.start + i * dv..][..dv];
            flat[lay.vmlp.b2.start + i] + row.iter().zip(&h1).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect();
    let v_on = c.v_present;

    let s = cfg.input_scale;
    let mut input = Vec::with_capacity(3 * x_t.len());
    for g in [x_t.values(), c.body.values(), c.context.values()] {
        input.extend(g.iter().map(|&v| v * s));
    }

    let plan = stages(params);
    let n_stages = plan.len();
    let mut cache = Cache {
        level_dims: level_dims.clone(),
        e_t,
        v,
        v_on,
        u,
        h1,
        e_v,
        gamma: Vec::with_capacity(n_stages),
        stage_in: Vec::with_capacity(n_stages),
        pre: Vec::with_capacity(n_stages),
        film_out: Vec::with_capacity(n_stages),
        head_in: Vec::new(),
    };

    let mut enc: Vec<Vec<f64>> = Vec::with_capacity(levels);
    let mut cur = input;
    for (si, st) in plan.iter().enumerate() {
        let in_dims = level_dims[st.level];
        let pre = conv_forward(flat, st.conv, &cur, in_dims);
        let (gamma, beta) = film_coefficients(flat, st.film, &cache.e_t, &cache.e_v, v_on);
        let out_dims = st.conv.shape.out_dims(in_dims);
        let n = voxels(out_dims);
        let mut fo = pre.clone();
        for (ch, chunk) in fo.chunks_mut(n).enumerate() {
            let (g, b) = (gamma[ch], beta[ch]);
            for v in chunk {
                *v = g * *v + b;
            }
        }
        let act: Vec<f64> = fo.iter().map(|&x| silu(x)).collect();
        check_finite(&act, &format!("stage {si}"))?;
        cache.stage_in.push(std::mem::take(&mut cur));
        cache.pre.push(pre);
        cache.film_out.push(fo);
        cache.gamma.push(gamma);

        if si < levels {
            enc.push(act.clone());
            cur = act;
        } else {
            // decoder: upsample to the next finer level and add the skip
            let l = st.level;
            let mut up = conv::upsample2(&act, st.conv.shape.cout, level_dims[l]);
            for (a, b) in up.iter_mut().zip(&enc[l - 1]) {
                *a += b;
            }
            cur = up;
        }
    }

    let out = conv_forward(flat, &lay.out_conv, &cur, level_dims[0]);
    check_finite(&out, "denoiser output")?;
    cache.head_in = cur;
    Ok((out, cache))
}

/// Predicted clean SDF for noisy input `x_t` at timestep `t`.
pub fn forward(
    params: &DenoiserParams,
    x_t: &ScalarGrid,
    c: &Conditioning,
    t: usize,
) -> Result<ScalarGrid> {
    let (out, _) = forward_cached(params, x_t, c, t)?;
    ScalarGrid::new(x_t.dims(), x_t.spacing(), out)
}

fn conv_backward(
    flat: &[f64],
    grad: &mut [f64],
    cb: &ConvBlock,
    input: &[f64],
    dims: Dims,
    grad_out: &[f64],
    want_input: bool,
) -> Option<Vec<f64>> {
    let shape: ConvShape = cb.shape;
    // weight and bias ranges are adjacent in the layout: split to borrow both
    debug_assert_eq!(cb.w.end, cb.b.start);
    let (gw, gb) = grad[cb.w.start..cb.b.end].split_at_mut(cb.w.len());
    conv::backward(shape, input, dims, &flat[cb.w.clone()], grad_out, gw, gb, want_input)
}

/// Reverse pass: gradient of `Σ grad_out · output` with respect to every
/// parameter, accumulated into `grad`.
pub(crate) fn backward(
    params: &DenoiserParams,
    cache: &Cache,
    grad_out: &[f64],
    grad: &mut [f64],
) {
    let cfg = params.config();
    let flat = params.flat();
    let lay = params.layout();
    let levels = cfg.levels();
    let dt = cfg.t_embed_dim;
    let dv = cfg.v_embed_dim;
    let plan = stages(params);

    let mut g_cur = conv_backward(
        flat,
        grad,
        &lay.out_conv,
        &cache.head_in,
        cache.level_dims[0],
        grad_out,
        true,
    )
    .expect("input grad requested");

    let mut g_enc: Vec<Vec<f64>> = (0..levels)
        .map(|l| vec![0.0; cfg.widths[l] * voxels(cache.level_dims[l])])
        .collect();
    let mut g_ev = vec![0.0; dv];

    // FiLM + SiLU backward for one stage; returns the gradient w.r.t. the
    // convolution output and accumulates FiLM parameter gradients.
    let film_back = |si: usize, g_act: &[f64], grad: &mut [f64], g_ev: &mut [f64]| -> Vec<f64> {
        let fb = plan[si].film;
        let pre = &cache.pre[si];
        let fo = &cache.film_out[si];
        let gamma = &cache.gamma[si];
        let n = pre.len() / fb.channels;
        let mut g_pre = vec![0.0; pre.len()];
        for c in 0..fb.channels {
            let (mut g_gamma, mut g_beta) = (0.0, 0.0);
            let r = c * n..(c + 1) * n;
            for ((gp, (&ga, &f)), &p) in g_pre[r.clone()]
                .iter_mut()
                .zip(g_act[r.clone()].iter().zip(&fo[r.clone()]))
                .zip(&pre[r])
            {
                let gf = ga * silu_grad(f);
                g_gamma += gf * p;
                g_beta += gf;
                *gp = gf * gamma[c];
            }
            grad[fb.gamma_0.start + c] += g_gamma;
            grad[fb.beta_0.start + c] += g_beta;
            for k in 0..dt {
                grad[fb.gamma_t.start + c * dt + k] += g_gamma * cache.e_t[k];
                grad[fb.beta_t.start + c * dt + k] += g_beta * cache.e_t[k];
            }
            if cache.v_on {
                for j in 0..dv {
                    grad[fb.gamma_v.start + c * dv + j] += g_gamma * cache.e_v[j];
                    grad[fb.beta_v.start + c * dv + j] += g_beta * cache.e_v[j];
                    g_ev[j] += g_gamma * flat[fb.gamma_v.start + c * dv + j]
                        + g_beta * flat[fb.beta_v.start + c * dv + j];
                }
            }
        }
        g_pre
    };

    // decoder, reverse order: level 1 first
    for l in 1..levels {
        let si = levels + (levels - 1 - l);
        let st = &plan[si];
        for (a, b) in g_enc[l - 1].iter_mut().zip(&g_cur) {
            *a += b;
        }
        let g_act = conv::upsample2_backward(&g_cur, st.conv.shape.cout, cache.level_dims[l]);
        let g_pre = film_back(si, &g_act, grad, &mut g_ev);
        g_cur = conv_backward(
            flat,
            grad,
            st.conv,
            &cache.stage_in[si],
            cache.level_dims[l],
            &g_pre,
            true,
        )
        .expect("input grad requested");
    }
    for (a, b) in g_enc[levels - 1].iter_mut().zip(&g_cur) {
        *a += b;
    }

    // encoder, reverse order
    for l in (0..levels).rev() {
        let st = &plan[l];
        let g_act = std::mem::take(&mut g_enc[l]);
        let g_pre = film_back(l, &g_act, grad, &mut g_ev);
        let g_in = conv_backward(
            flat,
            grad,
            st.conv,
            &cache.stage_in[l],
            cache.level_dims[st.level],
            &g_pre,
            l > 0,
        );
        if let Some(g_in) = g_in {
            for (a, b) in g_enc[l - 1].iter_mut().zip(&g_in) {
                *a += b;
            }
        }
    }

    // v perceptron
    if cache.v_on {
        let vb = &lay.vmlp;
        let mut g_h1 = vec![0.0; dv];
        for i in 0..dv {
            grad[vb.b2.start + i] += g_ev[i];
            for j in 0..dv {
                grad[vb.w2.start + i * dv + j] += g_ev[i] * cache.h1[j];
                g_h1[j] += g_ev[i] * flat[vb.w2.start + i * dv + j];
            }
        }
        for j in 0..dv {
            let gu = g_h1[j] * silu_grad(cache.u[j]);
            grad[vb.w1.start + j] += gu * cache.v;
            grad[vb.b1.start + j] += gu;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::params::ModelConfig;
    use crate::voxel::SdfConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_grid(d: Dims, rng: &mut ChaCha8Rng, scale: f64) -> ScalarGrid {
        let n = voxels(d);
        ScalarGrid::new(d, 1.0, (0..n).map(|_| scale * rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn bias_only_network_is_constant() {
        let mut p = DenoiserParams::zeros(ModelConfig::default()).unwrap();
        let b = p.layout().out_conv.b.start;
        p.flat_mut()[b] = 0.3;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = [8, 8, 8];
        let c = Conditioning::new(random_grid(d, &mut rng, 5.0), random_grid(d, &mut rng, 5.0), 1.2).unwrap();
        let out = forward(&p, &random_grid(d, &mut rng, 3.0), &c, 500).unwrap();
        assert!(out.values().iter().all(|&v| v == 0.3));
    }

    #[test]
    fn rejects_indivisible_dims() {
        let p = DenoiserParams::zeros(ModelConfig::default()).unwrap();
        let sdf = SdfConfig::default();
        let g = sdf.empty_sdf([6, 8, 8], 1.0).unwrap();
        let c = Conditioning::new(g.clone(), g.clone(), 0.0).unwrap();
        let err = forward(&p, &g, &c, 1).unwrap_err();
        assert!(err.to_string().contains("divisible by 4"), "{err}");
    }

    #[test]
    fn cleared_v_matches_zeroed_v_pathway() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = DenoiserParams::init(ModelConfig::default(), &mut rng).unwrap();
        // non-trivial FiLM heads so the v path actually matters
        for v in p.flat_mut().iter_mut() {
            if *v == 0.0 {
                *v = 0.05 * rng.gen_range(-1.0..1.0);
            }
        }
        let d = [8, 8, 8];
        let x = random_grid(d, &mut rng, 2.0);
        let mut c = Conditioning::new(random_grid(d, &mut rng, 5.0), random_grid(d, &mut rng, 5.0), 1.5).unwrap();
        let with_v = forward(&p, &x, &c, 321).unwrap();
        c.v_present = false;
        let cleared = forward(&p, &x, &c, 321).unwrap();
        assert_ne!(with_v, cleared);

        let mut zeroed = p.clone();
        zeroed.zero_v_pathway();
        c.v_present = true;
        let z = forward(&zeroed, &x, &c, 321).unwrap();
        assert_eq!(cleared, z);
    }

    #[test]
    fn embedding_is_bounded() {
        let e = timestep_embedding(1000, 32);
        assert_eq!(e.len(), 32);
        assert!(e.iter().all(|v| v.abs() <= 1.0));
        assert_eq!(timestep_embedding(0, 4), vec![0.0, 0.0, 1.0, 1.0]);
    }
}
