//! Residual-only diffusion between an HR image and its interpolated LR counterpart.
//!
//! Forward: `y_t = hr + eta_t * (lr_up - hr)`, so `t = 1` sits next to HR and
//! `t = T` next to `lr_up`. Reverse:
//!
//! ```text
//! y_{t-1} = (eta_{t-1} / eta_t) * y_t + (alpha_t / eta_t) * y0_hat
//! ```
//!
//! With the oracle prediction `y0_hat = hr` the reverse step reproduces the
//! forward state at `t - 1` exactly. Nothing here is random except the
//! explicitly seeded [`noisy_forward_state`] used for visual comparison.

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::imaging::{save_image, ImagePlane};
use crate::schedule::EtaSchedule;

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionState {
    pub image: ImagePlane,
    /// 0 denotes the terminal HR-side state.
    pub t: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Reverse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<DiffusionState>,
    pub direction: Direction,
}

/// Anything that maps `(y_t, t, lr_up)` to an HR estimate.
pub trait Predictor {
    fn predict(&self, y_t: &ImagePlane, t: usize, lr_up: &ImagePlane) -> Result<ImagePlane>;
}

/// Always answers with the true HR image. Makes the reverse process exact.
#[derive(Debug, Clone)]
pub struct OraclePredictor {
    pub hr: ImagePlane,
}

impl Predictor for OraclePredictor {
    fn predict(&self, y_t: &ImagePlane, _t: usize, _lr_up: &ImagePlane) -> Result<ImagePlane> {
        y_t.ensure_same_shape(&self.hr, "oracle predictor")?;
        Ok(self.hr.clone())
    }
}

/// Returns its state input unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityPredictor;

impl Predictor for IdentityPredictor {
    fn predict(&self, y_t: &ImagePlane, _t: usize, _lr_up: &ImagePlane) -> Result<ImagePlane> {
        Ok(y_t.clone())
    }
}

impl<P: Predictor + ?Sized> Predictor for &P {
    fn predict(&self, y_t: &ImagePlane, t: usize, lr_up: &ImagePlane) -> Result<ImagePlane> {
        (**self).predict(y_t, t, lr_up)
    }
}

/// `(1 - eta) * hr + eta * lr_up`, evaluated in f64 per element.
pub fn interpolate(hr: &ImagePlane, lr_up: &ImagePlane, eta: f64) -> Result<ImagePlane> {
    let keep = 1.0 - eta;
    hr.zip_map(lr_up, |h, l| (keep * h as f64 + eta * l as f64) as f32)
}

pub fn forward_state(
    hr: &ImagePlane,
    lr_up: &ImagePlane,
    schedule: &EtaSchedule,
    t: usize,
) -> Result<DiffusionState> {
    let eta = schedule.eta_at(t)?;
    hr.ensure_same_shape(lr_up, "forward_state")?;
    Ok(DiffusionState {
        image: interpolate(hr, lr_up, eta)?,
        t,
    })
}

/// Mixing weights `(eta_{t-1} / eta_t, alpha_t / eta_t)` of the reverse step.
pub fn reverse_coefficients(schedule: &EtaSchedule, t: usize) -> Result<(f64, f64)> {
    if t < 2 {
        return Err(Error::Contract(format!(
            "reverse_step needs t >= 2 (got {t}); use final_step at t = 1"
        )));
    }
    let eta = schedule.eta_at(t)?;
    let prev = schedule.eta_at(t - 1)?;
    let keep = prev / eta;
    Ok((keep, 1.0 - keep))
}

pub fn reverse_step(
    y_t: &DiffusionState,
    y0_hat: &ImagePlane,
    schedule: &EtaSchedule,
) -> Result<DiffusionState> {
    let (keep, take) = reverse_coefficients(schedule, y_t.t)?;
    y_t.image.ensure_same_shape(y0_hat, "reverse_step")?;
    let image = y_t
        .image
        .zip_map(y0_hat, |y, p| (keep * y as f64 + take * p as f64) as f32)?;
    Ok(DiffusionState {
        image,
        t: y_t.t - 1,
    })
}

/// Terminal step from `t = 1`. With `eta_0 := 0` the state weight vanishes and
/// the result is the last prediction itself.
pub fn final_step(
    y_1: &DiffusionState,
    y0_hat: &ImagePlane,
    schedule: &EtaSchedule,
) -> Result<ImagePlane> {
    if y_1.t != 1 {
        return Err(Error::Contract(format!(
            "final_step needs t = 1, got {}",
            y_1.t
        )));
    }
    y_1.image.ensure_same_shape(y0_hat, "final_step")?;
    let eta_1 = schedule.eta_at(1)?;
    let keep = schedule.eta_or_zero(0)? / eta_1;
    if keep == 0.0 {
        return Ok(y0_hat.clone());
    }
    y_1.image
        .zip_map(y0_hat, |y, p| (keep * y as f64 + (1.0 - keep) * p as f64) as f32)
}

/// Runs the reverse process from `y_T := lr_up` down to the HR estimate.
///
/// The returned trajectory holds `y_T, ..., y_1` followed by the estimate at `t = 0`.
pub fn sample<P: Predictor + ?Sized>(
    lr_up: &ImagePlane,
    predictor: &P,
    schedule: &EtaSchedule,
) -> Result<(ImagePlane, Trajectory)> {
    let start = DiffusionState {
        image: lr_up.clone(),
        t: schedule.steps(),
    };
    rollout(start, lr_up, predictor, schedule)
}

/// Reverse process from an arbitrary state `y_t` down to `t = 0`.
pub fn rollout<P: Predictor + ?Sized>(
    start: DiffusionState,
    lr_up: &ImagePlane,
    predictor: &P,
    schedule: &EtaSchedule,
) -> Result<(ImagePlane, Trajectory)> {
    if start.t == 0 || start.t > schedule.steps() {
        return Err(Error::Contract(format!(
            "rollout needs 1 <= t <= {}, got {}",
            schedule.steps(),
            start.t
        )));
    }
    let mut state = start;
    let mut states = Vec::with_capacity(state.t + 1);
    while state.t >= 2 {
        let y0_hat = predictor.predict(&state.image, state.t, lr_up)?;
        let next = reverse_step(&state, &y0_hat, schedule)?;
        states.push(std::mem::replace(&mut state, next));
    }
    let y0_hat = predictor.predict(&state.image, 1, lr_up)?;
    let out = final_step(&state, &y0_hat, schedule)?;
    states.push(state);
    states.push(DiffusionState {
        image: out.clone(),
        t: 0,
    });
    Ok((
        out,
        Trajectory {
            states,
            direction: Direction::Reverse,
        },
    ))
}

/// Noisy-baseline forward state `hr + eta_t (lr_up - hr) + kappa sqrt(eta_t) eps`
/// with `eps ~ N(0, 1)` drawn from a generator seeded by `seed`.
pub fn noisy_forward_state(
    hr: &ImagePlane,
    lr_up: &ImagePlane,
    schedule: &EtaSchedule,
    t: usize,
    kappa: f64,
    seed: u64,
) -> Result<DiffusionState> {
    let eta = schedule.eta_at(t)?;
    let image = noisy_interpolate(hr, lr_up, eta, kappa, seed)?;
    Ok(DiffusionState { image, t })
}

pub fn noisy_interpolate(
    hr: &ImagePlane,
    lr_up: &ImagePlane,
    eta: f64,
    kappa: f64,
    seed: u64,
) -> Result<ImagePlane> {
    if !(kappa >= 0.0) {
        return Err(Error::arg(format!("kappa must be >= 0, got {kappa}")));
    }
    let base = interpolate(hr, lr_up, eta)?;
    if kappa == 0.0 {
        return Ok(base);
    }
    let sigma = kappa * eta.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(base.map(|v| {
        let eps: f64 = StandardNormal.sample(&mut rng);
        (v as f64 + sigma * eps) as f32
    }))
}

/// One labelled tile of a trajectory strip. `label` is the timestep, or `lr`
/// for the interpolated-LR anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct StripTile {
    pub label: String,
    pub eta: f64,
    pub image: ImagePlane,
}

/// Forward strip `hr (eta_0 = 0), y_1, ..., y_T, lr_up (eta = 1)`.
///
/// With `kappa > 0` every tile gets the noisy-baseline perturbation; tile k
/// draws from `seed + k`. `kappa = 0` reproduces the deterministic strip bitwise.
pub fn forward_strip(
    hr: &ImagePlane,
    lr_up: &ImagePlane,
    schedule: &EtaSchedule,
    kappa: f64,
    seed: u64,
) -> Result<Vec<StripTile>> {
    hr.ensure_same_shape(lr_up, "forward_strip")?;
    let mut etas: Vec<(String, f64)> = vec![("0".into(), 0.0)];
    etas.extend(
        schedule
            .etas()
            .iter()
            .enumerate()
            .map(|(i, &e)| ((i + 1).to_string(), e)),
    );
    etas.push(("lr".into(), 1.0));
    etas.into_iter()
        .enumerate()
        .map(|(k, (label, eta))| {
            let image = noisy_interpolate(hr, lr_up, eta, kappa, seed.wrapping_add(k as u64))?;
            Ok(StripTile { label, eta, image })
        })
        .collect()
}

impl Trajectory {
    /// Tiles with their `eta_t` (`eta_0 := 0`).
    pub fn tiles(&self, schedule: &EtaSchedule) -> Result<Vec<StripTile>> {
        self.states
            .iter()
            .map(|s| {
                Ok(StripTile {
                    label: s.t.to_string(),
                    eta: schedule.eta_or_zero(s.t)?,
                    image: s.image.clone(),
                })
            })
            .collect()
    }
}

/// Writes the strip PNG at `png_path` and a `t eta` sidecar next to it (`.txt`).
pub fn write_strip(tiles: &[StripTile], png_path: &Path) -> Result<()> {
    let images: Vec<ImagePlane> = tiles.iter().map(|t| t.image.clone()).collect();
    save_image(&ImagePlane::hconcat(&images)?, png_path)?;
    let mut sidecar = String::from("# tile t eta\n");
    for (k, tile) in tiles.iter().enumerate() {
        let _ = writeln!(sidecar, "{k} {} {:.9}", tile.label, tile.eta);
    }
    let txt = png_path.with_extension("txt");
    std::fs::write(&txt, sidecar).map_err(|e| Error::io(&txt, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::{build_schedule, ScheduleConfig};
    use rand::Rng;

    fn default_schedule() -> EtaSchedule {
        build_schedule(&ScheduleConfig::default()).unwrap()
    }

    fn constant(v: f32) -> ImagePlane {
        ImagePlane::filled(4, 4, 1, v).unwrap()
    }

    fn random_plane(rng: &mut ChaCha8Rng, h: usize, w: usize) -> ImagePlane {
        ImagePlane::from_fn(h, w, 1, |_, _, _| rng.gen::<f32>()).unwrap()
    }

    #[test]
    fn forward_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let hr = random_plane(&mut rng, 5, 5);
        let lr = random_plane(&mut rng, 5, 5);
        let tiny = build_schedule(&ScheduleConfig {
            eta_start: 1e-9,
            ..Default::default()
        })
        .unwrap();
        let y = forward_state(&hr, &lr, &tiny, 1).unwrap();
        assert!(y.image.max_abs_diff(&hr).unwrap() <= 1e-8);
        assert_eq!(interpolate(&hr, &lr, 1.0).unwrap(), lr);

        let mid = interpolate(&constant(0.8), &constant(0.2), 0.5).unwrap();
        assert!(mid.data().iter().all(|v| (v - 0.5).abs() < 1e-7));
    }

    #[test]
    fn forward_rejects_mismatch() {
        let s = default_schedule();
        let a = constant(0.1);
        let b = ImagePlane::filled(4, 5, 1, 0.1).unwrap();
        assert!(matches!(forward_state(&a, &b, &s, 2), Err(Error::Argument(_))));
        assert!(forward_state(&a, &a, &s, 0).is_err());
    }

    #[test]
    fn reverse_step_fixed_point_and_hand_value() {
        let s = default_schedule();
        let y = DiffusionState { image: constant(0.4), t: 2 };
        assert_eq!(reverse_step(&y, &y.image, &s).unwrap().image, y.image);

        let out = reverse_step(&y, &constant(1.0), &s).unwrap();
        assert_eq!(out.t, 1);
        let keep: f64 = 0.01 / 0.046262;
        let expect = 0.4 * keep + (1.0 - keep);
        assert!((expect - 0.87030).abs() < 1e-4);
        assert!(out.data_close(expect as f32, 1e-5));
    }

    impl DiffusionState {
        fn data_close(&self, v: f32, tol: f32) -> bool {
            self.image.data().iter().all(|x| (x - v).abs() <= tol)
        }
    }

    #[test]
    fn reverse_step_contract() {
        let s = default_schedule();
        let y = DiffusionState { image: constant(0.4), t: 1 };
        assert!(matches!(reverse_step(&y, &y.image, &s), Err(Error::Contract(_))));
        let y2 = DiffusionState { image: constant(0.4), t: 2 };
        assert!(final_step(&y2, &y2.image, &s).is_err());
    }

    #[test]
    fn coefficients_are_convex() {
        for cfg in [
            ScheduleConfig::default(),
            ScheduleConfig { steps: 15, eta_start: 0.2, eta_end: 0.999, curvature_p: 0.3 },
        ] {
            let s = build_schedule(&cfg).unwrap();
            for t in 2..=s.steps() {
                let (a, b) = reverse_coefficients(&s, t).unwrap();
                assert!((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b));
                assert!((a + b - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn final_step_returns_prediction() {
        let s = default_schedule();
        let y1 = DiffusionState { image: constant(0.9), t: 1 };
        assert_eq!(final_step(&y1, &constant(0.3), &s).unwrap(), constant(0.3));
    }

    #[test]
    fn oracle_rollout_inverts_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let hr = random_plane(&mut rng, 8, 8);
            let lr = random_plane(&mut rng, 8, 8);
            let cfg = ScheduleConfig {
                steps: rng.gen_range(2..10),
                eta_start: rng.gen_range(0.001..0.3),
                eta_end: rng.gen_range(0.5..0.999),
                curvature_p: rng.gen_range(0.3..3.0),
            };
            let s = build_schedule(&cfg).unwrap();
            let oracle = OraclePredictor { hr: hr.clone() };
            let mut state = forward_state(&hr, &lr, &s, s.steps()).unwrap();
            while state.t >= 2 {
                let pred = oracle.predict(&state.image, state.t, &lr).unwrap();
                state = reverse_step(&state, &pred, &s).unwrap();
                let fwd = forward_state(&hr, &lr, &s, state.t).unwrap();
                assert!(state.image.max_abs_diff(&fwd.image).unwrap() <= 1e-6);
            }
            let end = final_step(&state, &hr, &s).unwrap();
            assert!(end.max_abs_diff(&hr).unwrap() <= 1e-6);
        }
    }

    #[test]
    fn rollout_from_forward_state_matches_manual_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let hr = random_plane(&mut rng, 8, 8);
        let lr = random_plane(&mut rng, 8, 8);
        let s = default_schedule();
        let oracle = OraclePredictor { hr: hr.clone() };
        let start = forward_state(&hr, &lr, &s, 4).unwrap();
        let (out, traj) = rollout(start, &lr, &oracle, &s).unwrap();
        for st in &traj.states[..4] {
            let fwd = forward_state(&hr, &lr, &s, st.t).unwrap();
            assert!(st.image.max_abs_diff(&fwd.image).unwrap() <= 1e-6);
        }
        assert!(out.max_abs_diff(&hr).unwrap() <= 1e-6);
        let bad = DiffusionState { image: lr.clone(), t: 5 };
        assert!(matches!(rollout(bad, &lr, &oracle, &s), Err(Error::Contract(_))));
    }

    #[test]
    fn sample_identity_and_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let hr = random_plane(&mut rng, 6, 6);
        let lr = random_plane(&mut rng, 6, 6);
        let s = default_schedule();
        let (out, traj) = sample(&lr, &IdentityPredictor, &s).unwrap();
        assert_eq!(out, lr);
        assert_eq!(traj.direction, Direction::Reverse);
        let ts: Vec<usize> = traj.states.iter().map(|st| st.t).collect();
        assert_eq!(ts, vec![4, 3, 2, 1, 0]);

        let oracle = OraclePredictor { hr: hr.clone() };
        let (out, _) = sample(&lr, &oracle, &s).unwrap();
        assert!(out.max_abs_diff(&hr).unwrap() <= 1e-6);
        let (again, _) = sample(&lr, &oracle, &s).unwrap();
        assert_eq!(out.data(), again.data());
    }

    #[test]
    fn monotone_degradation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let hr = random_plane(&mut rng, 8, 8);
        let lr = random_plane(&mut rng, 8, 8);
        let s = build_schedule(&ScheduleConfig { steps: 12, ..Default::default() }).unwrap();
        let mut last = 0.0f64;
        for t in 1..=12 {
            let y = forward_state(&hr, &lr, &s, t).unwrap();
            let d: f64 = y
                .image
                .data()
                .iter()
                .zip(hr.data())
                .map(|(a, b)| ((a - b) as f64).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(d >= last);
            last = d;
        }
    }

    #[test]
    fn noisy_forward_degeneracy_and_seeding() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let hr = random_plane(&mut rng, 8, 8);
        let lr = random_plane(&mut rng, 8, 8);
        let s = default_schedule();
        let clean = forward_state(&hr, &lr, &s, 3).unwrap();
        assert_eq!(noisy_forward_state(&hr, &lr, &s, 3, 0.0, 9).unwrap(), clean);
        let a = noisy_forward_state(&hr, &lr, &s, 3, 1.0, 9).unwrap();
        let b = noisy_forward_state(&hr, &lr, &s, 3, 1.0, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, clean);
        assert!(noisy_forward_state(&hr, &lr, &s, 3, -1.0, 9).is_err());
    }

    #[test]
    fn noisy_forward_standard_deviation() {
        let hr = ImagePlane::filled(64, 64, 1, 0.6).unwrap();
        let lr = ImagePlane::filled(64, 64, 1, 0.3).unwrap();
        let s = default_schedule();
        let y = noisy_forward_state(&hr, &lr, &s, 4, 2.0, 1234).unwrap();
        let n = y.image.data().len() as f64;
        let mean = y.image.data().iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = y
            .image
            .data()
            .iter()
            .map(|&v| (v as f64 - mean).powi(2))
            .sum::<f64>()
            / (n - 1.0);
        let target = 2.0 * 0.99f64.sqrt();
        assert!((var.sqrt() - target).abs() / target < 0.05, "{} vs {target}", var.sqrt());
    }

    #[test]
    fn forward_strip_endpoints_and_sidecar() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let hr = random_plane(&mut rng, 4, 4);
        let lr = random_plane(&mut rng, 4, 4);
        let s = default_schedule();
        let strip = forward_strip(&hr, &lr, &s, 0.0, 0).unwrap();
        assert_eq!(strip.len(), 6);
        assert_eq!(strip[0].image, hr);
        assert_eq!(strip[5].image, lr);
        assert_eq!(strip[2].image, forward_state(&hr, &lr, &s, 2).unwrap().image);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fwd.png");
        write_strip(&strip, &path).unwrap();
        let side = std::fs::read_to_string(dir.path().join("fwd.txt")).unwrap();
        assert_eq!(side.lines().count(), 7);
        assert!(side.contains("5 lr 1.000000000"));
        let png = crate::imaging::load_image(&path).unwrap();
        assert_eq!(png.shape(), (4, 24, 1));
    }
}
