//! Forward noising, clean-latent estimation and deterministic DDIM stepping.
//!
//! Step indices run `1..=T`. Index `0` is the clean end of the chain and
//! carries `alpha_bar(0) = 1`, so the final DDIM step returns the clean
//! estimate unchanged.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ImageGrid, LatentGrid, Space};
use crate::seeding;

/// Family of noise schedules accepted by [`make_schedule`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleKind {
    /// `beta_t` spaced linearly from `beta_start` to `beta_end`, `alpha_t = 1 - beta_t`.
    LinearBeta { beta_start: f64, beta_end: f64 },
    /// Squared-cosine `alpha_bar` curve with offset `s`.
    Cosine { s: f64 },
}

impl Default for ScheduleKind {
    fn default() -> Self {
        ScheduleKind::LinearBeta {
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

/// The `alpha_t` / `alpha_bar_t` sequences of a diffusion chain.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Builds a schedule from explicit per-step `alpha_t`, computing the
    /// cumulative products in step order.
    pub fn from_alphas(alphas: Vec<f64>) -> Result<Self> {
        if alphas.is_empty() {
            return Err(Error::InvalidSchedule(
                "at least one step is required".into(),
            ));
        }
        if let Some((i, a)) = alphas
            .iter()
            .enumerate()
            .find(|(_, a)| !(a.is_finite() && **a > 0.0 && **a <= 1.0))
        {
            return Err(Error::InvalidSchedule(format!(
                "alpha at step {} is {a}, outside (0, 1]",
                i + 1
            )));
        }
        let mut alpha_bars = Vec::with_capacity(alphas.len());
        let mut acc = 1.0;
        for &a in &alphas {
            acc *= a;
            if acc <= 0.0 {
                return Err(Error::InvalidSchedule(
                    "cumulative product underflows to zero".into(),
                ));
            }
            alpha_bars.push(acc);
        }
        Ok(NoiseSchedule { alphas, alpha_bars })
    }

    /// `T`.
    pub fn num_steps(&self) -> usize {
        self.alphas.len()
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    /// `alpha_bar_t` for `t` in `0..=T`, with `alpha_bar_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        match t {
            0 => Ok(1.0),
            t if t <= self.num_steps() => Ok(self.alpha_bars[t - 1]),
            t => Err(Error::InvalidArgument(format!(
                "step {t} outside 0..={}",
                self.num_steps()
            ))),
        }
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.num_steps() {
            Err(Error::InvalidArgument(format!(
                "step {t} outside 1..={}",
                self.num_steps()
            )))
        } else {
            Ok(())
        }
    }
}

/// Builds a `T`-step schedule of the given family.
pub fn make_schedule(num_steps: usize, kind: ScheduleKind) -> Result<NoiseSchedule> {
    if num_steps == 0 {
        return Err(Error::InvalidSchedule(
            "num_steps must be at least 1".into(),
        ));
    }
    let alphas = match kind {
        ScheduleKind::LinearBeta {
            beta_start,
            beta_end,
        } => {
            if !(0.0..1.0).contains(&beta_start) || !(0.0..1.0).contains(&beta_end) {
                return Err(Error::InvalidSchedule(format!(
                    "betas must lie in [0, 1), got {beta_start}..{beta_end}"
                )));
            }
            if beta_end < beta_start {
                return Err(Error::InvalidSchedule(
                    "beta_end below beta_start gives an increasing alpha_bar step".into(),
                ));
            }
            (0..num_steps)
                .map(|i| {
                    let frac = if num_steps == 1 {
                        0.0
                    } else {
                        i as f64 / (num_steps - 1) as f64
                    };
                    1.0 - (beta_start + frac * (beta_end - beta_start))
                })
                .collect()
        }
        ScheduleKind::Cosine { s } => {
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::InvalidSchedule(format!(
                    "cosine offset {s} must be >= 0"
                )));
            }
            let f = |t: usize| {
                let x = (t as f64 / num_steps as f64 + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2;
                x.cos().powi(2)
            };
            // beta capped at 0.999 so the last alpha stays positive
            (1..=num_steps)
                .map(|t| (f(t) / f(t - 1)).clamp(1e-3, 1.0))
                .collect()
        }
    };
    NoiseSchedule::from_alphas(alphas)
}

/// Samples `x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) noise`.
///
/// `t = 0` is accepted and returns `x0`.
pub fn add_noise(
    x0: &LatentGrid,
    t: usize,
    noise: &LatentGrid,
    schedule: &NoiseSchedule,
) -> Result<LatentGrid> {
    x0.ensure_same_shape(noise, "add_noise")?;
    let ab = schedule.alpha_bar(t)?;
    x0.lincomb(ab.sqrt(), noise, (1.0 - ab).sqrt(), "add_noise")
}

/// Recovers the clean-latent estimate `(x_t - sqrt(1 - alpha_bar_t) eps) / sqrt(alpha_bar_t)`.
pub fn estimate_x0(
    x_t: &LatentGrid,
    eps_pred: &LatentGrid,
    t: usize,
    schedule: &NoiseSchedule,
) -> Result<LatentGrid> {
    x_t.ensure_same_shape(eps_pred, "estimate_x0")?;
    schedule.check_step(t)?;
    let ab = schedule.alpha_bar(t)?;
    if ab <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "alpha_bar at step {t} is zero"
        )));
    }
    let inv = 1.0 / ab.sqrt();
    x_t.lincomb(inv, eps_pred, -(1.0 - ab).sqrt() * inv, "estimate_x0")
}

/// The deterministic (eta = 0) DDIM update from `x_t` to `x_{t-1}`.
pub fn ddim_step(
    x_t: &LatentGrid,
    eps_pred: &LatentGrid,
    t: usize,
    schedule: &NoiseSchedule,
) -> Result<LatentGrid> {
    let x0_hat = estimate_x0(x_t, eps_pred, t, schedule)?;
    ddim_step_from_x0(&x0_hat, eps_pred, t, schedule)
}

/// The DDIM update when the clean estimate has already been computed (and
/// possibly edited, as latent fusion does).
pub fn ddim_step_from_x0(
    x0_hat: &LatentGrid,
    eps_pred: &LatentGrid,
    t: usize,
    schedule: &NoiseSchedule,
) -> Result<LatentGrid> {
    x0_hat.ensure_same_shape(eps_pred, "ddim_step")?;
    schedule.check_step(t)?;
    let ab_prev = schedule.alpha_bar(t - 1)?;
    x0_hat.lincomb(
        ab_prev.sqrt(),
        eps_pred,
        (1.0 - ab_prev).sqrt(),
        "ddim_step",
    )
}

/// `round(strength * T)` with halves rounded up, never below 1.
pub fn start_step(strength: f64, num_steps: usize) -> Result<usize> {
    if !(strength > 0.0 && strength <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "strength {strength} outside (0, 1]"
        )));
    }
    let raw = (strength * num_steps as f64 + 0.5).floor() as usize;
    Ok(raw.clamp(1, num_steps))
}

/// Noises a clean latent part-way so generation starts from the input's
/// structure rather than pure noise. Returns the noisy latent and the step
/// it sits at.
pub fn sdedit_init(
    x0: &LatentGrid,
    strength: f64,
    schedule: &NoiseSchedule,
    rng_seed: u64,
) -> Result<(LatentGrid, usize)> {
    let start = start_step(strength, schedule.num_steps())?;
    let mut rng = seeding::rng("sdedit_init", &[rng_seed]);
    let noise = seeding::gaussian_grid(&mut rng, Space::Latent, x0.dims());
    Ok((add_noise(x0, start, &noise, schedule)?, start))
}

/// Conditioning passed to the denoiser: prompt embedding `c_p`, optional
/// spatial control map `c_n`, and the guidance scale.
#[derive(Debug, Clone)]
pub struct GuidanceContext {
    prompt: String,
    prompt_embedding: Vec<f64>,
    control_signal: Option<ImageGrid>,
    guidance_scale: f64,
}

impl GuidanceContext {
    pub fn new(
        prompt: impl Into<String>,
        prompt_embedding: Vec<f64>,
        control_signal: Option<ImageGrid>,
        guidance_scale: f64,
    ) -> Result<Self> {
        if !(guidance_scale.is_finite() && guidance_scale >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "guidance scale {guidance_scale} must be a nonnegative real"
            )));
        }
        if let Some(c) = &control_signal {
            c.check_finite("control signal")?;
        }
        Ok(GuidanceContext {
            prompt: prompt.into(),
            prompt_embedding,
            control_signal,
            guidance_scale,
        })
    }

    /// Checks the control map against the resolution a denoiser declares.
    pub fn validate_control(&self, resolution: (usize, usize)) -> Result<()> {
        match &self.control_signal {
            Some(c) => c.ensure_spatial(resolution, "guidance control signal"),
            None => Ok(()),
        }
    }

    pub fn prompt(&self) -> &str {
        &self.prompt
    }

    pub fn prompt_embedding(&self) -> &[f64] {
        &self.prompt_embedding
    }

    pub fn control_signal(&self) -> Option<&ImageGrid> {
        self.control_signal.as_ref()
    }

    pub fn guidance_scale(&self) -> f64 {
        self.guidance_scale
    }

    /// Stable hash of the prompt text and the control map's checksum.
    pub fn fingerprint(&self) -> u64 {
        let mut bytes = Vec::with_capacity(self.prompt.len() + 9);
        bytes.extend_from_slice(self.prompt.as_bytes());
        bytes.push(0);
        let control = self
            .control_signal
            .as_ref()
            .map(seeding::grid_checksum)
            .unwrap_or(0);
        bytes.extend_from_slice(&control.to_le_bytes());
        seeding::stable_hash(&bytes)
    }
}
