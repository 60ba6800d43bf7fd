//! Linear-β DDPM schedule, forward noising, conditioning dropout and
//! deterministic (η = 0) DDIM sampling for x0-predicting denoisers.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::voxel::{ensure_same_geometry, Dims, ScalarGrid, SdfConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        make_schedule(self.steps, self.beta_start, self.beta_end)
    }
}

/// Schedule tables indexed by timestep `t` in `1..=T`; index 0 holds the
/// `ᾱ_0 = 1` convention.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::Config("schedule.steps must be >= 1".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::Config(format!(
            "schedule requires 0 < beta_start <= beta_end < 1, got {beta_start}..{beta_end}"
        )));
    }
    let mut beta = vec![0.0; steps + 1];
    for (t, b) in beta.iter_mut().enumerate().skip(1) {
        *b = if steps == 1 {
            beta_start
        } else {
            beta_start + (beta_end - beta_start) * (t - 1) as f64 / (steps - 1) as f64
        };
    }
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bar = vec![1.0; steps + 1];
    for t in 1..=steps {
        alpha_bar[t] = alpha_bar[t - 1] * alpha[t];
    }
    Ok(NoiseSchedule {
        beta,
        alpha,
        alpha_bar,
    })
}

impl NoiseSchedule {
    /// Number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.beta.len() - 1
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }

    /// `ᾱ_t`, with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t > self.steps() {
            return Err(Error::Data(format!(
                "timestep {t} outside 0..={}",
                self.steps()
            )));
        }
        Ok(())
    }

    /// Descending DDIM ladder of `n` timesteps, evenly spaced, starting at `T`.
    pub fn ladder(&self, n: usize) -> Result<Vec<usize>> {
        let big_t = self.steps();
        if n == 0 || n > big_t {
            return Err(Error::Config(format!(
                "sampling steps must be in 1..={big_t}, got {n}"
            )));
        }
        Ok((0..n).map(|i| big_t - i * big_t / n).collect())
    }
}

/// Conditioning signals for one organ: body SDF, context SDF and VCS.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditioning {
    pub body: ScalarGrid,
    pub context: ScalarGrid,
    pub v: f64,
    pub body_present: bool,
    pub context_present: bool,
    pub v_present: bool,
}

impl Conditioning {
    pub fn new(body: ScalarGrid, context: ScalarGrid, v: f64) -> Result<Self> {
        ensure_same_geometry(&body, &context, "conditioning")?;
        if !v.is_finite() {
            return Err(Error::Numeric(format!("conditioning v is not finite: {v}")));
        }
        Ok(Self {
            body,
            context,
            v,
            body_present: true,
            context_present: true,
            v_present: true,
        })
    }

    pub fn dims(&self) -> Dims {
        self.body.dims()
    }

    pub fn spacing(&self) -> f64 {
        self.body.spacing()
    }
}

/// `x_t = √ᾱ_t·x0 + √(1−ᾱ_t)·ε`. `t = 0` returns `x0`.
pub fn q_sample(
    x0: &ScalarGrid,
    t: usize,
    noise: &ScalarGrid,
    s: &NoiseSchedule,
) -> Result<ScalarGrid> {
    ensure_same_geometry(x0, noise, "q_sample")?;
    s.check_t(t)?;
    let ab = s.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    let values = x0
        .values()
        .iter()
        .zip(noise.values())
        .map(|(&x, &e)| a * x + b * e)
        .collect();
    Ok(ScalarGrid::from_raw(x0.dims(), x0.spacing(), values))
}

/// Standard-normal grid.
pub fn gaussian_grid(dims: Dims, spacing: f64, rng: &mut impl Rng) -> Result<ScalarGrid> {
    let n = dims[0] * dims[1] * dims[2];
    let values = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    ScalarGrid::new(dims, spacing, values)
}

/// Drops each signal independently with probability `p`. A dropped grid is
/// replaced by the uniform `-τ` (empty) field.
pub fn drop_conditioning(
    c: &Conditioning,
    p: f64,
    sdf: &SdfConfig,
    rng: &mut impl Rng,
) -> Result<Conditioning> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!("dropout probability must be in [0, 1), got {p}")));
    }
    let mut out = c.clone();
    // one draw per signal, always consumed, so the stream layout does not depend on p
    let draws: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];
    if draws[0] < p {
        out.body = sdf.empty_sdf(c.dims(), c.spacing())?;
        out.body_present = false;
    }
    if draws[1] < p {
        out.context = sdf.empty_sdf(c.dims(), c.spacing())?;
        out.context_present = false;
    }
    if draws[2] < p {
        out.v_present = false;
    }
    Ok(out)
}

/// One deterministic DDIM update from `t` to `t_prev`.
pub fn ddim_step(
    x_t: &ScalarGrid,
    x0_hat: &ScalarGrid,
    t: usize,
    t_prev: usize,
    s: &NoiseSchedule,
) -> Result<ScalarGrid> {
    ensure_same_geometry(x_t, x0_hat, "ddim_step")?;
    s.check_t(t)?;
    if t_prev >= t {
        return Err(Error::Data(format!("ddim_step requires t_prev < t, got {t_prev} >= {t}")));
    }
    let ab_t = s.alpha_bar(t);
    let ab_prev = s.alpha_bar(t_prev);
    let (sa_t, sb_t) = (ab_t.sqrt(), (1.0 - ab_t).sqrt());
    let (sa_p, sb_p) = (ab_prev.sqrt(), (1.0 - ab_prev).sqrt());
    let values = x_t
        .values()
        .iter()
        .zip(x0_hat.values())
        .map(|(&x, &x0)| {
            let eps = (x - sa_t * x0) / sb_t;
            sa_p * x0 + sb_p * eps
        })
        .collect();
    ScalarGrid::new(x_t.dims(), x_t.spacing(), values)
}

/// Anything that predicts the clean SDF from a noisy one.
pub trait Denoiser {
    fn predict_x0(&self, x_t: &ScalarGrid, c: &Conditioning, t: usize) -> Result<ScalarGrid>;
}

impl<F> Denoiser for F
where
    F: Fn(&ScalarGrid, &Conditioning, usize) -> Result<ScalarGrid>,
{
    fn predict_x0(&self, x_t: &ScalarGrid, c: &Conditioning, t: usize) -> Result<ScalarGrid> {
        self(x_t, c, t)
    }
}

/// Deterministic DDIM sampling from `x_T ~ N(0, I)`; `x0_hat` is clamped to
/// `[-τ, τ]` before each update.
pub fn ddim_sample(
    denoiser: &(impl Denoiser + ?Sized),
    c: &Conditioning,
    steps: usize,
    s: &NoiseSchedule,
    sdf: &SdfConfig,
    rng: &mut impl Rng,
) -> Result<ScalarGrid> {
    let ladder = s.ladder(steps)?;
    let tau = sdf.truncation;
    let mut x = gaussian_grid(c.dims(), c.spacing(), rng)?;
    for (i, &t) in ladder.iter().enumerate() {
        let t_prev = ladder.get(i + 1).copied().unwrap_or(0);
        let raw = denoiser.predict_x0(&x, c, t)?;
        if raw.dims() != x.dims() {
            return Err(Error::Data(format!(
                "denoiser returned dims {:?}, expected {:?}",
                raw.dims(),
                x.dims()
            )));
        }
        let x0_hat = raw.map(|v| v.clamp(-tau, tau))?;
        x = ddim_step(&x, &x0_hat, t, t_prev, s)?;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid(v: f64) -> ScalarGrid {
        ScalarGrid::filled([4, 4, 4], 1.0, v).unwrap()
    }

    #[test]
    fn schedule_examples() {
        let s = make_schedule(1, 0.5, 0.5).unwrap();
        assert_eq!(s.alpha_bar(1), 0.5);
        let s = make_schedule(2, 0.1, 0.2).unwrap();
        assert_abs_diff_eq!(s.alpha_bar(1), 0.9, epsilon = 1e-15);
        assert_abs_diff_eq!(s.alpha_bar(2), 0.72, epsilon = 1e-15);
        assert_eq!(s.alpha_bar(0), 1.0);
    }

    #[test]
    fn schedule_rejects_bad_bounds() {
        assert!(make_schedule(0, 0.1, 0.2).is_err());
        assert!(make_schedule(10, 0.0, 0.2).is_err());
        assert!(make_schedule(10, 0.3, 0.2).is_err());
        assert!(make_schedule(10, 0.1, 1.0).is_err());
    }

    #[test]
    fn default_schedule_is_monotone() {
        let s = ScheduleConfig::default().build().unwrap();
        assert_eq!(s.steps(), 1000);
        assert_abs_diff_eq!(s.beta(1), 1e-4, epsilon = 1e-18);
        assert_abs_diff_eq!(s.beta(1000), 0.02, epsilon = 1e-15);
        for t in 1..=1000 {
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
        }
    }

    #[test]
    fn ladder_shapes() {
        let s = ScheduleConfig::default().build().unwrap();
        assert_eq!(s.ladder(1).unwrap(), vec![1000]);
        assert_eq!(
            s.ladder(10).unwrap(),
            vec![1000, 900, 800, 700, 600, 500, 400, 300, 200, 100]
        );
        let full = s.ladder(1000).unwrap();
        assert_eq!(full.first(), Some(&1000));
        assert_eq!(full.last(), Some(&1));
        assert!(s.ladder(0).is_err() && s.ladder(1001).is_err());
        let odd = s.ladder(7).unwrap();
        assert!(odd.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn q_sample_examples() {
        let s = make_schedule(2, 0.1, 0.2).unwrap();
        let x = q_sample(&grid(1.0), 2, &grid(1.0), &s).unwrap();
        let want = 0.72f64.sqrt() + 0.28f64.sqrt();
        assert!(x.values().iter().all(|&v| (v - want).abs() < 1e-12));
        assert_abs_diff_eq!(want, 1.3777, epsilon = 1e-4);
        assert_eq!(q_sample(&grid(0.3), 0, &grid(5.0), &s).unwrap(), grid(0.3));
        let z = q_sample(&grid(2.0), 1, &grid(0.0), &s).unwrap();
        assert_abs_diff_eq!(z.values()[0], 0.9f64.sqrt() * 2.0, epsilon = 1e-15);
        assert!(q_sample(&grid(0.0), 3, &grid(0.0), &s).is_err());
    }

    #[test]
    fn dropout_extremes() {
        let sdf = SdfConfig::default();
        let c = Conditioning::new(grid(1.0), grid(2.0), 0.7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(drop_conditioning(&c, 0.0, &sdf, &mut rng).unwrap(), c);
        let d = drop_conditioning(&c, 0.999_999_999, &sdf, &mut rng).unwrap();
        assert!(!d.body_present && !d.context_present && !d.v_present);
        assert!(d.body.values().iter().all(|&v| v == -10.0));
        assert!(d.context.values().iter().all(|&v| v == -10.0));
        assert!(drop_conditioning(&c, 1.0, &sdf, &mut rng).is_err());
    }

    #[test]
    fn ddim_step_properties() {
        let s = ScheduleConfig::default().build().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x0 = gaussian_grid([4, 4, 4], 1.0, &mut rng).unwrap();
        let eps = gaussian_grid([4, 4, 4], 1.0, &mut rng).unwrap();
        let xt = q_sample(&x0, 700, &eps, &s).unwrap();
        assert_eq!(ddim_step(&xt, &x0, 700, 0, &s).unwrap(), x0);
        let back = ddim_step(&xt, &x0, 700, 300, &s).unwrap();
        let want = q_sample(&x0, 300, &eps, &s).unwrap();
        for (a, b) in back.values().iter().zip(want.values()) {
            assert!((a - b).abs() < 1e-9);
        }
        let clean = x0.map(|v| v * s.alpha_bar(700).sqrt()).unwrap();
        let out = ddim_step(&clean, &x0, 700, 300, &s).unwrap();
        for (a, b) in out.values().iter().zip(x0.values()) {
            assert!((a - s.alpha_bar(300).sqrt() * b).abs() < 1e-9);
        }
        assert!(ddim_step(&xt, &x0, 300, 300, &s).is_err());
    }

    #[test]
    fn sampling_with_fixed_output_denoiser() {
        let s = ScheduleConfig::default().build().unwrap();
        let sdf = SdfConfig::default();
        let target = ScalarGrid::new([2, 2, 2], 1.0, vec![1.0, -2.0, 3.0, 0.5, 0.0, -9.0, 9.5, 2.0]).unwrap();
        let zeros = ScalarGrid::filled([2, 2, 2], 1.0, 0.0).unwrap();
        let c = Conditioning::new(zeros.clone(), zeros, 0.0).unwrap();
        let fixed = |_: &ScalarGrid, _: &Conditioning, _: usize| Ok(target.clone());
        for steps in [1, 10, 1000] {
            let mut rng = ChaCha8Rng::seed_from_u64(steps as u64);
            assert_eq!(ddim_sample(&fixed, &c, steps, &s, &sdf, &mut rng).unwrap(), target);
        }
        let calls = std::cell::Cell::new(0);
        let counting = |_: &ScalarGrid, _: &Conditioning, t: usize| {
            calls.set(calls.get() + 1);
            assert_eq!(t, 1000);
            Ok(ScalarGrid::filled([2, 2, 2], 1.0, 25.0).unwrap())
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = ddim_sample(&counting, &c, 1, &s, &sdf, &mut rng).unwrap();
        assert_eq!(calls.get(), 1);
        assert!(out.values().iter().all(|&v| v == 10.0));
    }
}
