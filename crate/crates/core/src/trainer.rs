//! Adam training of the denoiser on `(forward_state(t), t, lr_up) -> hr` regression.

use std::path::PathBuf;

use rand::Rng;

use crate::checkpoint::save_checkpoint;
use crate::data::{LrHrPair, PatchSampler};
use crate::denoiser::{example_loss, DenoiserParams, Example, Layout, Scalar};
use crate::diffusion::{forward_state, sample};
use crate::error::{Error, Result};
use crate::metrics::psnr;
use crate::schedule::EtaSchedule;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_steps: u64,
    pub seed: u64,
    /// Validation, log line and checkpoint cadence; 0 disables.
    pub checkpoint_every: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Rescale gradients to global norm 1.0 when it is exceeded.
    pub clip_grad: bool,
}

pub const CLIP_NORM: f64 = 1.0;

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-5,
            batch_size: 8,
            max_steps: 5000,
            seed: 0,
            checkpoint_every: 500,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            clip_grad: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::arg(format!("lr must be a finite number > 0, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::arg("batch_size must be >= 1"));
        }
        if self.max_steps == 0 {
            return Err(Error::arg("max_steps must be >= 1"));
        }
        if !(0.0 < self.adam_beta1 && self.adam_beta1 < self.adam_beta2 && self.adam_beta2 < 1.0) {
            return Err(Error::arg(format!(
                "need 0 < adam_beta1 < adam_beta2 < 1, got {} and {}",
                self.adam_beta1, self.adam_beta2
            )));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::arg("adam_eps must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: DenoiserParams,
    /// Adam first moments, shaped like `params`.
    pub moment1: Vec<Vec<f32>>,
    pub moment2: Vec<Vec<f32>>,
    pub step: u64,
    pub loss_history: Vec<(u64, f64)>,
}

impl TrainState {
    pub fn new(params: DenoiserParams) -> Self {
        Self {
            moment1: params.zeros_like(),
            moment2: params.zeros_like(),
            params,
            step: 0,
            loss_history: Vec::new(),
        }
    }
}

/// One bias-corrected Adam update of a parameter slice; `step` counts from 1.
#[allow(clippy::too_many_arguments)]
pub fn adam_update<T: Scalar>(
    params: &mut [T],
    grads: &[T],
    m: &mut [T],
    v: &mut [T],
    step: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) {
    let c1 = 1.0 - beta1.powf(step as f64);
    let c2 = 1.0 - beta2.powf(step as f64);
    for (((p, &g), mi), vi) in params.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
        let g = g.to_f64().unwrap();
        let m_new = beta1 * mi.to_f64().unwrap() + (1.0 - beta1) * g;
        let v_new = beta2 * vi.to_f64().unwrap() + (1.0 - beta2) * g * g;
        *mi = T::lit(m_new);
        *vi = T::lit(v_new);
        let update = lr * (m_new / c1) / ((v_new / c2).sqrt() + eps);
        if update != 0.0 {
            *p = T::lit(p.to_f64().unwrap() - update);
        }
    }
}

/// MSE between the prediction for `forward_state(t)` and the HR image.
pub fn loss(params: &DenoiserParams, pair: &LrHrPair, t: usize, schedule: &EtaSchedule) -> Result<f64> {
    let y_t = forward_state(&pair.hr, &pair.lr_up, schedule, t)?;
    let layout = Layout::new(params.config());
    example_loss(
        params.config(),
        &layout,
        params.arrays(),
        Example {
            y_t: &y_t.image,
            t,
            lr_up: &pair.lr_up,
            hr: &pair.hr,
        },
        None,
    )
}

/// Samples a timestep per batch element, averages the losses and applies one
/// Adam step. Returns the batch loss.
pub fn train_step(
    state: &mut TrainState,
    batch: &[LrHrPair],
    schedule: &EtaSchedule,
    rng: &mut impl Rng,
    cfg: &TrainConfig,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::arg("empty training batch"));
    }
    let dcfg = *state.params.config();
    let layout = Layout::new(&dcfg);
    let mut grads = state.params.zeros_like::<f32>();
    let weight = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for pair in batch {
        let t = rng.gen_range(1..=schedule.steps());
        let y_t = forward_state(&pair.hr, &pair.lr_up, schedule, t)?;
        let ex = Example {
            y_t: &y_t.image,
            t,
            lr_up: &pair.lr_up,
            hr: &pair.hr,
        };
        total += weight * example_loss(&dcfg, &layout, state.params.arrays(), ex, Some((&mut grads, weight)))?;
    }
    let step = state.step + 1;
    if !total.is_finite() {
        return Err(Error::NonFiniteLoss { step, loss: total });
    }
    if cfg.clip_grad {
        let norm = grads
            .iter()
            .flatten()
            .map(|&g| (g as f64).powi(2))
            .sum::<f64>()
            .sqrt();
        if norm > CLIP_NORM {
            let s = (CLIP_NORM / norm) as f32;
            grads.iter_mut().flatten().for_each(|g| *g *= s);
        }
    }
    let TrainState {
        params,
        moment1,
        moment2,
        ..
    } = state;
    for (i, g) in grads.iter().enumerate() {
        adam_update(
            &mut params.arrays_mut()[i],
            g,
            &mut moment1[i],
            &mut moment2[i],
            step,
            cfg.lr,
            cfg.adam_beta1,
            cfg.adam_beta2,
            cfg.adam_eps,
        );
    }
    if !state.params.is_finite() {
        return Err(Error::State(format!("non-finite weights after step {step}")));
    }
    state.step = step;
    state.loss_history.push((step, total));
    Ok(total)
}

/// Mean PSNR of sampled outputs and of the `lr_up` baseline over `pairs`.
pub fn validation_psnr(params: &DenoiserParams, pairs: &[LrHrPair], schedule: &EtaSchedule) -> Result<(f64, f64)> {
    let mut model = 0.0;
    let mut base = 0.0;
    for p in pairs {
        let (out, _) = sample(&p.lr_up, params, schedule)?;
        model += psnr(&out, &p.hr)?;
        base += psnr(&p.lr_up, &p.hr)?;
    }
    let n = pairs.len().max(1) as f64;
    Ok((model / n, base / n))
}

/// Full loop with periodic validation, logging and checkpointing.
pub struct TrainRun<'a> {
    pub cfg: &'a TrainConfig,
    pub schedule: &'a EtaSchedule,
    pub validation: &'a [LrHrPair],
    pub checkpoint: Option<PathBuf>,
}

impl TrainRun<'_> {
    /// Trains until `cfg.max_steps`, calling `log` with one
    /// `step=<n> loss=<v> psnr_val=<v>` line per interval.
    pub fn run(
        &self,
        state: &mut TrainState,
        sampler: &mut PatchSampler,
        rng: &mut impl Rng,
        mut log: impl FnMut(&str),
    ) -> Result<()> {
        self.cfg.validate()?;
        let every = self.cfg.checkpoint_every;
        let mut window = 0.0;
        let mut count = 0u64;
        while state.step < self.cfg.max_steps {
            let batch = sampler.next_batch(self.cfg.batch_size)?;
            window += train_step(state, &batch, self.schedule, rng, self.cfg)?;
            count += 1;
            let done = state.step == self.cfg.max_steps;
            if (every > 0 && state.step % every == 0) || done {
                let val = if self.validation.is_empty() {
                    f64::NAN
                } else {
                    validation_psnr(&state.params, self.validation, self.schedule)?.0
                };
                log(&format!(
                    "step={} loss={:.6e} psnr_val={:.4}",
                    state.step,
                    window / count as f64,
                    val
                ));
                window = 0.0;
                count = 0;
                if let Some(path) = &self.checkpoint {
                    save_checkpoint(state, self.schedule.config(), path)?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_pair, toy_dataset};
    use crate::denoiser::{init_params, DenoiserConfig};
    use crate::schedule::{build_schedule, ScheduleConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> DenoiserConfig {
        DenoiserConfig {
            base_channels: 4,
            depth: 2,
            time_embed_dim: 8,
            image_channels: 1,
        }
    }

    fn pairs(n: usize, size: usize, seed: u64) -> Vec<LrHrPair> {
        toy_dataset(n, size, seed)
            .unwrap()
            .iter()
            .map(|hr| make_pair(hr, 4).unwrap())
            .collect()
    }

    #[test]
    fn adam_first_step_closed_form() {
        // f(x) = (x - 3)^2 at x = 1: g = -4; first step is lr * g / (|g| + eps)
        let mut x = [1.0f64];
        let g = [2.0 * (1.0 - 3.0)];
        let (mut m, mut v) = ([0.0f64], [0.0f64]);
        adam_update(&mut x, &g, &mut m, &mut v, 1, 0.1, 0.9, 0.999, 1e-8);
        let expect = 1.0 - 0.1 * (-4.0) / (4.0 + 1e-8);
        assert!((x[0] - expect).abs() < 1e-10);
        assert!((m[0] - (-0.4)).abs() < 1e-12);
        assert!((v[0] - 0.016).abs() < 1e-12);

        // second step at the new point, hand-derived
        let g2 = [2.0 * (x[0] - 3.0)];
        let m2 = 0.9 * -0.4 + 0.1 * g2[0];
        let v2 = 0.999 * 0.016 + 0.001 * g2[0] * g2[0];
        let expect2 = x[0] - 0.1 * (m2 / (1.0 - 0.81)) / ((v2 / (1.0 - 0.999f64.powi(2))).sqrt() + 1e-8);
        adam_update(&mut x, &g2, &mut m, &mut v, 2, 0.1, 0.9, 0.999, 1e-8);
        assert!((x[0] - expect2).abs() < 1e-10);
    }

    #[test]
    fn zero_init_loss_equals_baseline_mse() {
        let params = init_params(&tiny(), 0).unwrap();
        let s = build_schedule(&ScheduleConfig::default()).unwrap();
        let pair = &pairs(1, 16, 3)[0];
        let mse = pair
            .lr_up
            .data()
            .iter()
            .zip(pair.hr.data())
            .map(|(a, b)| ((a - b) as f64).powi(2))
            .sum::<f64>()
            / pair.hr.data().len() as f64;
        for t in 1..=4 {
            let l = loss(&params, pair, t, &s).unwrap();
            assert!((l - mse).abs() <= 1e-12 * mse.max(1.0), "{l} vs {mse}");
        }
    }

    #[test]
    fn zero_learning_rate_leaves_params_unchanged() {
        let params = init_params(&tiny(), 1).unwrap();
        let mut state = TrainState::new(params.clone());
        let s = build_schedule(&ScheduleConfig::default()).unwrap();
        let cfg = TrainConfig { lr: 0.0, ..Default::default() };
        let batch = pairs(2, 16, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..3 {
            train_step(&mut state, &batch, &s, &mut rng, &cfg).unwrap();
        }
        assert_eq!(state.params, params);
        assert_eq!(state.step, 3);
    }

    #[test]
    fn training_is_deterministic() {
        let s = build_schedule(&ScheduleConfig::default()).unwrap();
        let cfg = TrainConfig { lr: 1e-3, batch_size: 2, ..Default::default() };
        let run = || {
            let mut state = TrainState::new(init_params(&tiny(), 2).unwrap());
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let batch = pairs(2, 16, 5);
            for _ in 0..5 {
                train_step(&mut state, &batch, &s, &mut rng, &cfg).unwrap();
            }
            state
        };
        let (a, b) = (run(), run());
        assert_eq!(a.loss_history, b.loss_history);
        assert_eq!(a.params, b.params);
        assert!(a.loss_history.iter().all(|(_, l)| l.is_finite() && *l >= 0.0));
    }

    #[test]
    fn empty_batch_is_rejected() {
        let mut state = TrainState::new(init_params(&tiny(), 0).unwrap());
        let s = build_schedule(&ScheduleConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(train_step(&mut state, &[], &s, &mut rng, &TrainConfig::default()).is_err());
    }

    #[test]
    fn nan_input_aborts_with_step() {
        let mut state = TrainState::new(init_params(&tiny(), 0).unwrap());
        let s = build_schedule(&ScheduleConfig::default()).unwrap();
        let mut pair = pairs(1, 16, 1).remove(0);
        pair.hr = pair.hr.map(|_| f32::NAN);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        match train_step(&mut state, &[pair], &s, &mut rng, &TrainConfig::default()) {
            Err(Error::NonFiniteLoss { step, .. }) => assert_eq!(step, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { lr: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { adam_beta1: 0.9999, ..Default::default() }.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }
}
