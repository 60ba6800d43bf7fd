use std::ops::Range;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::conv::{ConvShape, TAPS};
use crate::error::{Error, Result};

/// Architecture of the FiLM-conditioned denoiser.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Channel width per resolution level, finest first. The full-scale
    /// ladder `[32, 64, 64, 128, 256]` is a legal value.
    pub widths: Vec<usize>,
    /// Sinusoidal timestep embedding size (even).
    pub t_embed_dim: usize,
    /// Hidden and output size of the VCS perceptron.
    pub v_embed_dim: usize,
    /// Fixed factor applied to the three input channels.
    pub input_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            widths: vec![8, 16, 32],
            t_embed_dim: 32,
            v_embed_dim: 32,
            input_scale: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn full_scale() -> Self {
        Self {
            widths: vec![32, 64, 64, 128, 256],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::Config(format!(
                "model.widths must be non-empty and positive, got {:?}",
                self.widths
            )));
        }
        if self.t_embed_dim == 0 || self.t_embed_dim % 2 != 0 {
            return Err(Error::Config(format!(
                "model.t_embed_dim must be even and positive, got {}",
                self.t_embed_dim
            )));
        }
        if self.v_embed_dim == 0 {
            return Err(Error::Config("model.v_embed_dim must be positive".into()));
        }
        if !(self.input_scale.is_finite() && self.input_scale > 0.0) {
            return Err(Error::Config(format!(
                "model.input_scale must be > 0, got {}",
                self.input_scale
            )));
        }
        Ok(())
    }

    pub fn levels(&self) -> usize {
        self.widths.len()
    }

    /// Grid dims must be divisible by this factor.
    pub fn dims_factor(&self) -> usize {
        1 << (self.levels() - 1)
    }

    /// Channels of every FiLM stage in forward order: encoder levels
    /// `0..L`, then decoder levels `L-1..1`.
    pub fn stage_channels(&self) -> Vec<usize> {
        let w = &self.widths;
        let mut out = w.clone();
        for l in (1..w.len()).rev() {
            out.push(w[l - 1]);
        }
        out
    }

    pub fn param_count(&self) -> usize {
        Layout::new(self).total
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ConvBlock {
    pub shape: ConvShape,
    pub w: Range<usize>,
    pub b: Range<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct FilmBlock {
    pub channels: usize,
    /// γ from the timestep embedding, `[channels][t_dim]`, and its bias.
    pub gamma_t: Range<usize>,
    pub gamma_0: Range<usize>,
    pub beta_t: Range<usize>,
    pub beta_0: Range<usize>,
    /// v-pathway heads, `[channels][v_dim]`; gated by `v_present`.
    pub gamma_v: Range<usize>,
    pub beta_v: Range<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct VBlock {
    pub w1: Range<usize>,
    pub b1: Range<usize>,
    pub w2: Range<usize>,
    pub b2: Range<usize>,
}

/// Offsets of every parameter block inside the flat vector.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layout {
    pub in_conv: ConvBlock,
    /// `downs[l - 1]` maps level `l-1` to level `l`.
    pub downs: Vec<ConvBlock>,
    /// `ups[l - 1]` maps `widths[l]` to `widths[l-1]` at level `l`.
    pub ups: Vec<ConvBlock>,
    pub out_conv: ConvBlock,
    pub vmlp: VBlock,
    pub films: Vec<FilmBlock>,
    pub names: Vec<(String, Range<usize>)>,
    pub total: usize,
}

struct Alloc {
    next: usize,
    names: Vec<(String, Range<usize>)>,
}

impl Alloc {
    fn take(&mut self, name: String, len: usize) -> Range<usize> {
        let r = self.next..self.next + len;
        self.next += len;
        self.names.push((name, r.clone()));
        r
    }

    fn conv(&mut self, name: &str, shape: ConvShape) -> ConvBlock {
        ConvBlock {
            shape,
            w: self.take(format!("{name}.weight"), shape.weight_len()),
            b: self.take(format!("{name}.bias"), shape.cout),
        }
    }
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let w = &cfg.widths;
        let levels = w.len();
        let mut a = Alloc {
            next: 0,
            names: Vec::new(),
        };
        let in_conv = a.conv("in_conv", ConvShape { cin: 3, cout: w[0], stride: 1 });
        let downs = (1..levels)
            .map(|l| a.conv(&format!("down{l}"), ConvShape { cin: w[l - 1], cout: w[l], stride: 2 }))
            .collect();
        let ups = (1..levels)
            .map(|l| a.conv(&format!("up{l}"), ConvShape { cin: w[l], cout: w[l - 1], stride: 1 }))
            .collect();
        let out_conv = a.conv("out_conv", ConvShape { cin: w[0], cout: 1, stride: 1 });
        let dv = cfg.v_embed_dim;
        let vmlp = VBlock {
            w1: a.take("vmlp.w1".into(), dv),
            b1: a.take("vmlp.b1".into(), dv),
            w2: a.take("vmlp.w2".into(), dv * dv),
            b2: a.take("vmlp.b2".into(), dv),
        };
        let dt = cfg.t_embed_dim;
        let films = cfg
            .stage_channels()
            .into_iter()
            .enumerate()
            .map(|(s, c)| FilmBlock {
                channels: c,
                gamma_t: a.take(format!("film{s}.gamma_t"), c * dt),
                gamma_0: a.take(format!("film{s}.gamma_0"), c),
                beta_t: a.take(format!("film{s}.beta_t"), c * dt),
                beta_0: a.take(format!("film{s}.beta_0"), c),
                gamma_v: a.take(format!("film{s}.gamma_v"), c * dv),
                beta_v: a.take(format!("film{s}.beta_v"), c * dv),
            })
            .collect();
        Layout {
            in_conv,
            downs,
            ups,
            out_conv,
            vmlp,
            films,
            total: a.next,
            names: a.names,
        }
    }

    /// Name of the block that owns flat index `i`.
    pub fn block_name(&self, i: usize) -> &str {
        self.names
            .iter()
            .find(|(_, r)| r.contains(&i))
            .map(|(n, _)| n.as_str())
            .unwrap_or("?")
    }

    /// Flat ranges of every v-pathway parameter.
    pub fn v_pathway(&self) -> Vec<Range<usize>> {
        let mut out = vec![
            self.vmlp.w1.clone(),
            self.vmlp.b1.clone(),
            self.vmlp.w2.clone(),
            self.vmlp.b2.clone(),
        ];
        for f in &self.films {
            out.push(f.gamma_v.clone());
            out.push(f.beta_v.clone());
        }
        out
    }
}

/// All learnable weights of the denoiser as one flat `f64` vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    config: ModelConfig,
    layout: Layout,
    flat: Vec<f64>,
}

impl DenoiserParams {
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let flat = vec![0.0; layout.total];
        Ok(Self {
            config,
            layout,
            flat,
        })
    }

    /// He-style initialization for convolutions and the perceptron; FiLM
    /// heads start at zero (identity modulation).
    pub fn init(config: ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        let lay = p.layout.clone();
        let mut fill = |r: Range<usize>, std: f64, flat: &mut [f64]| {
            for v in &mut flat[r] {
                *v = std * rng.sample::<f64, _>(StandardNormal);
            }
        };
        let convs = std::iter::once(&lay.in_conv)
            .chain(&lay.downs)
            .chain(&lay.ups);
        for c in convs {
            let fan_in = (c.shape.cin * TAPS) as f64;
            fill(c.w.clone(), (2.0 / fan_in).sqrt(), &mut p.flat);
        }
        let fan_out = (lay.out_conv.shape.cin * TAPS) as f64;
        fill(lay.out_conv.w.clone(), (1.0 / fan_out).sqrt(), &mut p.flat);
        fill(lay.vmlp.w1.clone(), 1.0, &mut p.flat);
        fill(lay.vmlp.b1.clone(), 1.0, &mut p.flat);
        let dv = p.config.v_embed_dim as f64;
        fill(lay.vmlp.w2.clone(), (1.0 / dv).sqrt(), &mut p.flat);
        Ok(p)
    }

    pub fn from_flat(config: ModelConfig, flat: Vec<f64>) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        p.set_flat(&flat)?;
        Ok(p)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub(crate) fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    pub fn flat(&self) -> &[f64] {
        &self.flat
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.flat
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.flat.len() {
            return Err(Error::Data(format!(
                "parameter vector has {} entries, config requires {}",
                values.len(),
                self.flat.len()
            )));
        }
        self.flat.copy_from_slice(values);
        Ok(())
    }

    /// Named parameter blocks and their flat ranges, in layout order.
    pub fn blocks(&self) -> impl Iterator<Item = (&str, Range<usize>)> {
        self.layout.names.iter().map(|(n, r)| (n.as_str(), r.clone()))
    }

    pub fn block_name(&self, i: usize) -> &str {
        self.layout.block_name(i)
    }

    /// Zeroes every parameter of the v pathway (perceptron and v FiLM heads).
    pub fn zero_v_pathway(&mut self) {
        for r in self.layout.v_pathway() {
            self.flat[r].fill(0.0);
        }
    }
}
