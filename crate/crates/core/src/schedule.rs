//! The monotone residual-fraction schedule `eta_1 < ... < eta_T`.
//!
//! The progression is geometric in `sqrt(eta)`:
//!
//! ```text
//! b0     = exp( ln(eta_T / eta_1) / (2 (T - 1)) )
//! beta_t = ((t - 1) / (T - 1))^p * (T - 1)
//! eta_t  = eta_1 * b0^(2 beta_t)
//! ```
//!
//! so both endpoints are attained exactly. `alpha_t = eta_t - eta_{t-1}` is the
//! per-step difference used by the reverse sampler.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub eta_start: f64,
    pub eta_end: f64,
    pub curvature_p: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: 4,
            eta_start: 0.01,
            eta_end: 0.99,
            curvature_p: 1.0,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 2 {
            return Err(Error::arg(format!("steps must be >= 2, got {}", self.steps)));
        }
        if !(self.eta_start > 0.0) {
            return Err(Error::arg(format!(
                "eta_start must be > 0, got {}",
                self.eta_start
            )));
        }
        if !(self.eta_start < self.eta_end) {
            return Err(Error::arg(format!(
                "eta_start must be < eta_end, got {} >= {}",
                self.eta_start, self.eta_end
            )));
        }
        if !(self.eta_end < 1.0) {
            return Err(Error::arg(format!("eta_end must be < 1, got {}", self.eta_end)));
        }
        if !(self.curvature_p > 0.0 && self.curvature_p.is_finite()) {
            return Err(Error::arg(format!(
                "curvature_p must be a positive finite number, got {}",
                self.curvature_p
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EtaSchedule {
    config: ScheduleConfig,
    etas: Vec<f64>,
    alphas: Vec<f64>,
}

pub fn build_schedule(cfg: &ScheduleConfig) -> Result<EtaSchedule> {
    cfg.validate()?;
    let steps = cfg.steps;
    let span = (steps - 1) as f64;
    let log_ratio = (cfg.eta_end / cfg.eta_start).ln();
    let log_b0 = log_ratio / (2.0 * span);
    let mut etas: Vec<f64> = (1..=steps)
        .map(|t| {
            let beta = ((t - 1) as f64 / span).powf(cfg.curvature_p) * span;
            cfg.eta_start * (2.0 * beta * log_b0).exp()
        })
        .collect();
    etas[0] = cfg.eta_start;
    etas[steps - 1] = cfg.eta_end;

    for (t, pair) in etas.windows(2).enumerate() {
        if !(pair[1] > pair[0]) {
            // only reachable when p is so extreme that adjacent steps collapse in f64
            return Err(Error::arg(format!(
                "schedule is not strictly increasing at t={} (curvature_p={})",
                t + 2,
                cfg.curvature_p
            )));
        }
    }
    let alphas = etas.windows(2).map(|w| w[1] - w[0]).collect();
    Ok(EtaSchedule {
        config: *cfg,
        etas,
        alphas,
    })
}

impl EtaSchedule {
    pub fn config(&self) -> &ScheduleConfig {
        &self.config
    }

    /// Number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.etas.len()
    }

    pub fn etas(&self) -> &[f64] {
        &self.etas
    }

    /// `alpha_t` for `t = 2..=T`, in order.
    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    /// `eta_t` for `1 <= t <= T`.
    pub fn eta_at(&self, t: usize) -> Result<f64> {
        if t == 0 || t > self.steps() {
            return Err(Error::arg(format!(
                "timestep {t} outside 1..={}",
                self.steps()
            )));
        }
        Ok(self.etas[t - 1])
    }

    /// Like [`eta_at`](Self::eta_at) but also accepts `t = 0`, where `eta_0 := 0`.
    pub fn eta_or_zero(&self, t: usize) -> Result<f64> {
        if t == 0 {
            Ok(0.0)
        } else {
            self.eta_at(t)
        }
    }

    /// `alpha_t = eta_t - eta_{t-1}` for `2 <= t <= T`.
    pub fn alpha_at(&self, t: usize) -> Result<f64> {
        if t < 2 || t > self.steps() {
            return Err(Error::arg(format!(
                "alpha index {t} outside 2..={}",
                self.steps()
            )));
        }
        Ok(self.alphas[t - 2])
    }
}
