//! Conditional encoder-decoder `f(y_t, t, lr_up) -> y0_hat`.
//!
//! The network predicts the HR image directly, as `lr_up + delta`. The output
//! convolution starts at zero, so an untrained model reproduces `lr_up` and the
//! untrained sampler returns the interpolation baseline. Normalization is
//! GroupNorm (see [`DenoiserConfig::norm_groups`]),
//! the activation is SiLU, and the timestep enters through a sinusoidal
//! embedding projected into every residual block as a per-channel shift.

mod layers;
mod net;
mod scalar;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::diffusion::Predictor;
use crate::error::{Error, Result};
use crate::imaging::ImagePlane;

pub use layers::Tensor;
pub use net::{Init, Layout, ParamSpec};
pub use scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenoiserConfig {
    pub base_channels: usize,
    /// Number of down/up levels; inputs must be divisible by `2^depth`.
    pub depth: usize,
    pub time_embed_dim: usize,
    pub image_channels: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            base_channels: 32,
            depth: 3,
            time_embed_dim: 128,
            image_channels: 1,
        }
    }
}

impl DenoiserConfig {
    pub fn in_channels(&self) -> usize {
        2 * self.image_channels
    }

    pub fn out_channels(&self) -> usize {
        self.image_channels
    }

    /// Largest of 8, 4, 2 dividing `base_channels` with at least two channels
    /// per group, else 1. A single-channel group would cancel the per-channel
    /// time shift.
    pub fn norm_groups(&self) -> usize {
        [8, 4, 2]
            .into_iter()
            .find(|g| self.base_channels % g == 0 && self.base_channels / g >= 2)
            .unwrap_or(1)
    }

    /// Spatial sizes must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        1 << self.depth
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 {
            return Err(Error::arg("base_channels must be positive"));
        }
        if self.depth == 0 || self.depth > 8 {
            return Err(Error::arg(format!("depth must be in 1..=8, got {}", self.depth)));
        }
        if self.time_embed_dim == 0 || self.time_embed_dim % 2 != 0 {
            return Err(Error::arg(format!(
                "time_embed_dim must be positive and even, got {}",
                self.time_embed_dim
            )));
        }
        if self.image_channels != 1 && self.image_channels != 3 {
            return Err(Error::arg(format!(
                "image_channels must be 1 or 3, got {}",
                self.image_channels
            )));
        }
        Ok(())
    }

    pub fn check_input(&self, img: &ImagePlane) -> Result<()> {
        let m = self.size_multiple();
        if img.height() % m != 0 || img.width() % m != 0 {
            return Err(Error::arg(format!(
                "input {}x{} is not divisible by 2^depth = {m}",
                img.height(),
                img.width()
            )));
        }
        if img.channels() != self.image_channels {
            return Err(Error::arg(format!(
                "input has {} channels, model expects {}",
                img.channels(),
                self.image_channels
            )));
        }
        Ok(())
    }
}

/// Sinusoidal embedding: pairs `(sin(t w_k), cos(t w_k))` with `w_k = 10000^(-2k/dim)`.
pub fn time_embedding(t: usize, dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::arg(format!("embedding dim must be even, got {dim}")));
    }
    if t == 0 {
        return Err(Error::arg("timestep must be >= 1"));
    }
    let mut out = vec![0.0; dim];
    time_embedding_into(t, &mut out);
    Ok(out)
}

pub(crate) fn time_embedding_into<T: Scalar>(t: usize, out: &mut [T]) {
    let dim = out.len();
    for (k, pair) in out.chunks_exact_mut(2).enumerate() {
        let freq = 10000f64.powf(-2.0 * k as f64 / dim as f64);
        let arg = t as f64 * freq;
        pair[0] = T::lit(arg.sin());
        pair[1] = T::lit(arg.cos());
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    config: DenoiserConfig,
    specs: Vec<ParamSpec>,
    arrays: Vec<Vec<f32>>,
}

impl DenoiserParams {
    /// Assembles parameters from named arrays, checking them against the layout of `config`.
    pub fn from_named(config: DenoiserConfig, named: Vec<(String, Vec<usize>, Vec<f32>)>) -> Result<Self> {
        config.validate()?;
        let specs = Layout::new(&config).specs;
        if specs.len() != named.len() {
            return Err(Error::Integrity(format!(
                "expected {} weight arrays, found {}",
                specs.len(),
                named.len()
            )));
        }
        let mut arrays = Vec::with_capacity(specs.len());
        for (spec, (name, shape, data)) in specs.iter().zip(named) {
            if spec.name != name || spec.shape != shape || data.len() != spec.len() {
                return Err(Error::Integrity(format!(
                    "weight array `{name}` {shape:?} does not match layout entry `{}` {:?}",
                    spec.name, spec.shape
                )));
            }
            arrays.push(data);
        }
        Ok(Self { config, specs, arrays })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn arrays(&self) -> &[Vec<f32>] {
        &self.arrays
    }

    pub fn arrays_mut(&mut self) -> &mut [Vec<f32>] {
        &mut self.arrays
    }

    pub fn parameter_count(&self) -> usize {
        self.arrays.iter().map(Vec::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.arrays.iter().flatten().all(|v| v.is_finite())
    }

    pub fn cast<T: Scalar>(&self) -> Vec<Vec<T>> {
        self.arrays
            .iter()
            .map(|a| a.iter().map(|&v| T::of_f32(v)).collect())
            .collect()
    }

    /// Same-shaped zero arrays (gradient / moment buffers).
    pub fn zeros_like<T: Scalar>(&self) -> Vec<Vec<T>> {
        self.arrays.iter().map(|a| vec![T::zero(); a.len()]).collect()
    }
}

/// Fan-in scaled normal initialization; the output convolution is all zeros.
pub fn init_params(cfg: &DenoiserConfig, seed: u64) -> Result<DenoiserParams> {
    cfg.validate()?;
    let specs = Layout::new(cfg).specs;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arrays = specs
        .iter()
        .map(|spec| match spec.init {
            Init::Zeros => vec![0.0; spec.len()],
            Init::Ones => vec![1.0; spec.len()],
            Init::FanIn(fan_in) => {
                let normal = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).unwrap();
                (0..spec.len()).map(|_| normal.sample(&mut rng) as f32).collect()
            }
        })
        .collect();
    Ok(DenoiserParams {
        config: *cfg,
        specs,
        arrays,
    })
}

fn to_chw<T: Scalar>(planes: &[&ImagePlane]) -> Tensor<T> {
    let (h, w, _) = planes[0].shape();
    let total_c: usize = planes.iter().map(|p| p.channels()).sum();
    let mut t = Tensor::zeros(total_c, h, w);
    let mut base = 0;
    for p in planes {
        let c = p.channels();
        for (i, px) in p.data().chunks_exact(c).enumerate() {
            for (ch, &v) in px.iter().enumerate() {
                t.data[(base + ch) * h * w + i] = T::of_f32(v);
            }
        }
        base += c;
    }
    t
}

fn check_pair(cfg: &DenoiserConfig, y_t: &ImagePlane, lr_up: &ImagePlane) -> Result<()> {
    y_t.ensure_same_shape(lr_up, "denoiser input")?;
    cfg.check_input(y_t)
}

/// One forward pass returning `lr_up + delta` in interleaved layout, as `T`.
fn predict_raw<T: Scalar>(
    layout: &Layout,
    arrays: &[Vec<T>],
    y_t: &ImagePlane,
    t: usize,
    lr_up: &ImagePlane,
) -> (Vec<T>, net::ForwardCache<T>) {
    let input = to_chw::<T>(&[y_t, lr_up]);
    let (delta, cache) = layout.forward(arrays, &input, t);
    let (c, hw) = (lr_up.channels(), delta.hw());
    let mut out = vec![T::zero(); c * hw];
    for (i, px) in lr_up.data().chunks_exact(c).enumerate() {
        for (ch, &v) in px.iter().enumerate() {
            out[i * c + ch] = T::of_f32(v) + delta.data[ch * hw + i];
        }
    }
    (out, cache)
}

/// Network HR estimate for state `y_t` at timestep `t` conditioned on `lr_up`.
pub fn predict(params: &DenoiserParams, y_t: &ImagePlane, t: usize, lr_up: &ImagePlane) -> Result<ImagePlane> {
    check_pair(&params.config, y_t, lr_up)?;
    if t == 0 {
        return Err(Error::arg("timestep must be >= 1"));
    }
    if !params.is_finite() {
        return Err(Error::State("denoiser weights contain NaN or Inf".into()));
    }
    let layout = Layout::new(&params.config);
    let (out, _) = predict_raw(&layout, &params.arrays, y_t, t, lr_up);
    let (h, w, c) = lr_up.shape();
    ImagePlane::new(h, w, c, out)
}

impl Predictor for DenoiserParams {
    fn predict(&self, y_t: &ImagePlane, t: usize, lr_up: &ImagePlane) -> Result<ImagePlane> {
        predict(self, y_t, t, lr_up)
    }
}

/// One regression example: predict `hr` from `(y_t, t, lr_up)`.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub y_t: &'a ImagePlane,
    pub t: usize,
    pub lr_up: &'a ImagePlane,
    pub hr: &'a ImagePlane,
}

/// Mean squared error of the prediction against `hr`; when `grads` is given,
/// adds `weight * dLoss/dParams` into it.
pub fn example_loss<T: Scalar>(
    cfg: &DenoiserConfig,
    layout: &Layout,
    arrays: &[Vec<T>],
    ex: Example<'_>,
    grads: Option<(&mut [Vec<T>], f64)>,
) -> Result<f64> {
    check_pair(cfg, ex.y_t, ex.lr_up)?;
    ex.hr.ensure_same_shape(ex.lr_up, "training target")?;
    let (pred, cache) = predict_raw(layout, arrays, ex.y_t, ex.t, ex.lr_up);
    let n = pred.len() as f64;
    let diff: Vec<T> = pred
        .iter()
        .zip(ex.hr.data())
        .map(|(&p, &h)| p - T::of_f32(h))
        .collect();
    let loss = diff.iter().map(|&d| d.to_f64().unwrap().powi(2)).sum::<f64>() / n;
    if let Some((grads, weight)) = grads {
        let (h, w, c) = ex.hr.shape();
        let scale = T::lit(2.0 * weight / n);
        let mut d_delta = Tensor::zeros(c, h, w);
        let hw = h * w;
        for (i, px) in diff.chunks_exact(c).enumerate() {
            for (ch, &d) in px.iter().enumerate() {
                d_delta.data[ch * hw + i] = d * scale;
            }
        }
        layout.backward(arrays, &cache, &d_delta, grads);
    }
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny() -> DenoiserConfig {
        DenoiserConfig {
            base_channels: 4,
            depth: 2,
            time_embed_dim: 8,
            image_channels: 1,
        }
    }

    fn random_plane(rng: &mut ChaCha8Rng, n: usize, c: usize) -> ImagePlane {
        ImagePlane::from_fn(n, n, c, |_, _, _| rng.gen::<f32>()).unwrap()
    }

    #[test]
    fn embedding_properties() {
        let e = time_embedding(3, 16).unwrap();
        assert_eq!(e[0], 3f64.sin());
        assert_eq!(e[1], 3f64.cos());
        assert_eq!(e, time_embedding(3, 16).unwrap());
        assert!(e.iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!(time_embedding(3, 7).is_err());
    }

    #[test]
    fn default_config_is_desk_scale() {
        let p = init_params(&DenoiserConfig::default(), 0).unwrap();
        let n = p.parameter_count();
        assert!((1_000_000..=3_000_000).contains(&n), "{n}");
    }

    #[test]
    fn init_is_seeded_and_output_layer_zero() {
        let cfg = tiny();
        let a = init_params(&cfg, 5).unwrap();
        let b = init_params(&cfg, 5).unwrap();
        let c = init_params(&cfg, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let layout = Layout::new(&cfg);
        for idx in layout.output_params() {
            assert!(a.arrays()[idx].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn init_statistics_match_fan_in() {
        let cfg = DenoiserConfig {
            base_channels: 16,
            depth: 2,
            time_embed_dim: 32,
            image_channels: 1,
        };
        let p = init_params(&cfg, 1).unwrap();
        let mut checked = 0;
        for (spec, data) in p.specs().iter().zip(p.arrays()) {
            if let Init::FanIn(fan_in) = spec.init {
                if data.len() < 10_000 {
                    continue;
                }
                let n = data.len() as f64;
                let var = data.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / n;
                let target = 1.0 / (fan_in as f64).sqrt();
                assert!((var.sqrt() - target).abs() / target < 0.2, "{}", spec.name);
                checked += 1;
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn zero_init_predicts_lr_up() {
        let cfg = tiny();
        let p = init_params(&cfg, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = random_plane(&mut rng, 8, 1);
        let lr = random_plane(&mut rng, 8, 1);
        let out = predict(&p, &y, 2, &lr).unwrap();
        assert_eq!(out, lr);
    }

    #[test]
    fn predict_is_deterministic_and_shape_covariant() {
        let cfg = DenoiserConfig { image_channels: 3, ..tiny() };
        let mut p = init_params(&cfg, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out_idx = Layout::new(&cfg).output_params()[0];
        for v in &mut p.arrays_mut()[out_idx] {
            *v = rng.gen_range(-0.1..0.1);
        }
        for n in [4, 8, 12] {
            let y = random_plane(&mut rng, n, 3);
            let lr = random_plane(&mut rng, n, 3);
            let a = predict(&p, &y, 3, &lr).unwrap();
            let b = predict(&p, &y, 3, &lr).unwrap();
            assert_eq!(a.shape(), y.shape());
            assert_eq!(a.data(), b.data());
            assert_ne!(a, lr);
        }
    }

    #[test]
    fn predict_rejects_bad_inputs() {
        let cfg = tiny();
        let mut p = init_params(&cfg, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let odd = random_plane(&mut rng, 6, 1);
        assert!(matches!(predict(&p, &odd, 1, &odd), Err(Error::Argument(_))));
        let rgb = random_plane(&mut rng, 8, 3);
        assert!(predict(&p, &rgb, 1, &rgb).is_err());
        p.arrays_mut()[0][0] = f32::NAN;
        let ok = random_plane(&mut rng, 8, 1);
        assert!(matches!(predict(&p, &ok, 1, &ok), Err(Error::State(_))));
    }

    #[test]
    fn analytic_gradients_match_central_differences() {
        let cfg = tiny();
        let mut params = init_params(&cfg, 3).unwrap();
        let layout = Layout::new(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        // a zero output layer would leave every upstream gradient at exactly zero
        for idx in layout.output_params() {
            for v in &mut params.arrays_mut()[idx] {
                *v = rng.gen_range(-0.3..0.3);
            }
        }
        let hr = random_plane(&mut rng, 8, 1);
        let lr = random_plane(&mut rng, 8, 1);
        let y = crate::diffusion::interpolate(&hr, &lr, 0.3).unwrap();
        let ex = Example { y_t: &y, t: 2, lr_up: &lr, hr: &hr };
        let mut arrays = params.cast::<f64>();
        let mut grads = params.zeros_like::<f64>();
        example_loss(&cfg, &layout, &arrays, ex, Some((&mut grads, 1.0))).unwrap();
        let h = 1e-5;
        for (g, spec) in layout.specs.iter().enumerate() {
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..arrays[g].len() {
                let orig = arrays[g][i];
                arrays[g][i] = orig + h;
                let up = example_loss(&cfg, &layout, &arrays, ex, None).unwrap();
                arrays[g][i] = orig - h;
                let down = example_loss(&cfg, &layout, &arrays, ex, None).unwrap();
                arrays[g][i] = orig;
                let fd = (up - down) / (2.0 * h);
                num += (fd - grads[g][i]).powi(2);
                den += fd.powi(2);
            }
            let rel = num.sqrt() / den.sqrt().max(1e-12);
            assert!(rel < 1e-3, "{}: relative error {rel}", spec.name);
        }
    }
}
