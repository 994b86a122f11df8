//! LR/HR pair synthesis, aligned patch cropping and the synthetic toy dataset.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imaging::{load_image, resample, with_channels, ImagePlane, ResampleFilter};

#[derive(Debug, Clone, PartialEq)]
pub struct LrHrPair {
    pub hr: ImagePlane,
    pub lr: ImagePlane,
    /// `lr` resampled back to the HR shape.
    pub lr_up: ImagePlane,
}

/// Bicubic degradation by `scale` and bicubic re-interpolation to the HR shape.
pub fn make_pair(hr: &ImagePlane, scale: usize) -> Result<LrHrPair> {
    if scale == 0 || hr.height() % scale != 0 || hr.width() % scale != 0 {
        return Err(Error::arg(format!(
            "{}x{} is not divisible by scale {scale}",
            hr.height(),
            hr.width()
        )));
    }
    let lr = resample(hr, hr.height() / scale, hr.width() / scale, ResampleFilter::Bicubic)?;
    let lr_up = upsample_lr(&lr, scale)?;
    Ok(LrHrPair {
        hr: hr.clone(),
        lr,
        lr_up,
    })
}

/// Bicubic interpolation of an LR image by an integer factor.
pub fn upsample_lr(lr: &ImagePlane, scale: usize) -> Result<ImagePlane> {
    resample(lr, lr.height() * scale, lr.width() * scale, ResampleFilter::Bicubic)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub root: Option<PathBuf>,
    pub patch_size: usize,
    pub scale: usize,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            root: None,
            patch_size: 64,
            scale: 4,
            seed: 0,
        }
    }
}

impl DatasetSpec {
    /// `size_multiple` is the denoiser's `2^depth`.
    pub fn validate(&self, size_multiple: usize) -> Result<()> {
        if self.scale == 0 || self.patch_size == 0 {
            return Err(Error::arg("patch_size and scale must be positive"));
        }
        if self.patch_size % self.scale != 0 {
            return Err(Error::arg(format!(
                "patch_size {} is not divisible by scale {}",
                self.patch_size, self.scale
            )));
        }
        if self.patch_size % size_multiple != 0 {
            return Err(Error::arg(format!(
                "patch_size {} is not divisible by the denoiser size multiple {size_multiple}",
                self.patch_size
            )));
        }
        Ok(())
    }
}

/// Crops a `patch_size` square at a scale-aligned offset and builds its pair.
pub fn random_patch(source: &ImagePlane, spec: &DatasetSpec, rng: &mut impl Rng) -> Result<LrHrPair> {
    let p = spec.patch_size;
    if source.height() < p || source.width() < p {
        return Err(Error::arg(format!(
            "source {}x{} is smaller than patch size {p}",
            source.height(),
            source.width()
        )));
    }
    let s = spec.scale.max(1);
    let top = rng.gen_range(0..=(source.height() - p) / s) * s;
    let left = rng.gen_range(0..=(source.width() - p) / s) * s;
    make_pair(&source.crop(top, left, p, p)?, spec.scale)
}

/// Independent generator for data worker `worker`.
pub fn worker_rng(seed: u64, worker: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(worker);
    rng
}

/// Draws batches of random patches from a fixed pool of images.
pub struct PatchSampler {
    images: Vec<ImagePlane>,
    spec: DatasetSpec,
    rng: ChaCha8Rng,
}

impl PatchSampler {
    pub fn new(images: Vec<ImagePlane>, spec: DatasetSpec) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::arg("patch sampler needs at least one image"));
        }
        let rng = worker_rng(spec.seed, 0);
        Ok(Self { images, spec, rng })
    }

    pub fn next_batch(&mut self, n: usize) -> Result<Vec<LrHrPair>> {
        (0..n)
            .map(|_| {
                let idx = self.rng.gen_range(0..self.images.len());
                random_patch(&self.images[idx], &self.spec, &mut self.rng)
            })
            .collect()
    }
}

/// Every `*.png` directly inside `dir`, sorted by file name, converted to `channels`.
pub fn load_dir(dir: &Path, channels: usize) -> Result<Vec<(String, ImagePlane)>> {
    let mut names = png_names(dir)?;
    names.sort();
    names
        .into_iter()
        .map(|name| {
            let img = load_image(dir.join(&name))?;
            Ok((name, with_channels(&img, channels)?))
        })
        .collect()
}

pub(crate) fn png_names(dir: &Path) -> Result<Vec<String>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut names = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png && path.is_file() {
            if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
                names.push(name.to_string());
            }
        }
    }
    Ok(names)
}

/// Center-crops to `size` when the image is large enough, otherwise resizes (bicubic).
pub fn fit_to_size(img: &ImagePlane, size: usize) -> Result<ImagePlane> {
    if img.height() >= size && img.width() >= size {
        img.crop((img.height() - size) / 2, (img.width() - size) / 2, size, size)
    } else {
        resample(img, size, size, ResampleFilter::Bicubic)
    }
}

enum Shape {
    Disk { cy: f64, cx: f64, r: f64 },
    Rect { cy: f64, cx: f64, hh: f64, hw: f64, angle: f64 },
    Triangle { pts: [(f64, f64); 3] },
    Stripes { cy: f64, cx: f64, r: f64, period: f64, angle: f64 },
}

impl Shape {
    fn random(size: f64, rng: &mut impl Rng) -> Self {
        let cy = rng.gen_range(0.0..size);
        let cx = rng.gen_range(0.0..size);
        match rng.gen_range(0..4) {
            0 => Shape::Disk {
                cy,
                cx,
                r: rng.gen_range(size / 10.0..size / 3.0),
            },
            1 => Shape::Rect {
                cy,
                cx,
                hh: rng.gen_range(size / 12.0..size / 3.0),
                hw: rng.gen_range(size / 12.0..size / 3.0),
                angle: rng.gen_range(0.0..PI),
            },
            2 => {
                let mut p = || (rng.gen_range(-0.2..1.2) * size, rng.gen_range(-0.2..1.2) * size);
                Shape::Triangle { pts: [p(), p(), p()] }
            }
            _ => Shape::Stripes {
                cy,
                cx,
                r: rng.gen_range(size / 6.0..size / 2.5),
                // period spans at least two LR pixels at x4
                period: rng.gen_range(8.0..16.0),
                angle: rng.gen_range(0.0..PI),
            },
        }
    }

    fn contains(&self, y: f64, x: f64) -> bool {
        match *self {
            Shape::Disk { cy, cx, r } => (y - cy).powi(2) + (x - cx).powi(2) <= r * r,
            Shape::Rect { cy, cx, hh, hw, angle } => {
                let (s, c) = angle.sin_cos();
                let (dy, dx) = (y - cy, x - cx);
                (c * dy - s * dx).abs() <= hh && (s * dy + c * dx).abs() <= hw
            }
            Shape::Triangle { pts } => {
                let side = |a: (f64, f64), b: (f64, f64)| (b.1 - a.1) * (y - a.0) - (b.0 - a.0) * (x - a.1);
                let d = [side(pts[0], pts[1]), side(pts[1], pts[2]), side(pts[2], pts[0])];
                d.iter().all(|&v| v >= 0.0) || d.iter().all(|&v| v <= 0.0)
            }
            Shape::Stripes { cy, cx, r, period, angle } => {
                let (dy, dx) = (y - cy, x - cx);
                if dy * dy + dx * dx > r * r {
                    return false;
                }
                let (s, c) = angle.sin_cos();
                (c * dy + s * dx).rem_euclid(period) < period / 2.0
            }
        }
    }
}

/// One synthetic image: an oriented gradient with smooth band-limited texture,
/// overlaid with hard-edged flat shapes (disks, rotated boxes, triangles,
/// striped patches).
pub fn toy_image(size: usize, channels: usize, rng: &mut impl Rng) -> Result<ImagePlane> {
    let sz = size as f64;
    let base: Vec<f64> = (0..channels).map(|_| rng.gen_range(0.2..0.8)).collect();
    let tint: Vec<f64> = (0..channels).map(|_| rng.gen_range(0.8..1.2)).collect();
    let angle = rng.gen_range(0.0..2.0 * PI);
    let slope = rng.gen_range(-0.35..0.35);
    let waves: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.gen_range(0.5..3.0) * 2.0 * PI / sz,
                rng.gen_range(0.0..2.0 * PI),
                rng.gen_range(0.0..2.0 * PI),
                rng.gen_range(0.01..0.04),
            )
        })
        .collect();
    let n_shapes = rng.gen_range(3..=7);
    let shapes: Vec<(Shape, Vec<f64>)> = (0..n_shapes)
        .map(|_| {
            let shape = Shape::random(sz, rng);
            let v: f64 = rng.gen_range(0.0..1.0);
            let color = (0..channels)
                .map(|_| (v + rng.gen_range(-0.15..0.15)).clamp(0.0, 1.0))
                .collect();
            (shape, color)
        })
        .collect();
    let (sa, ca) = angle.sin_cos();
    ImagePlane::from_fn(size, size, channels, |y, x, c| {
        let (fy, fx) = (y as f64 + 0.5, x as f64 + 0.5);
        if let Some((_, color)) = shapes.iter().rev().find(|(s, _)| s.contains(fy, fx)) {
            return color[c] as f32;
        }
        let ramp = slope * ((ca * fx + sa * fy) / sz - 0.5);
        let texture: f64 = waves
            .iter()
            .map(|&(f, theta, phase, amp)| amp * (f * (theta.cos() * fx + theta.sin() * fy) + phase).sin())
            .sum();
        ((base[c] + ramp) * tint[c] + texture).clamp(0.0, 1.0) as f32
    })
}

/// `n` grayscale toy images of `size x size`, reproducible from `seed`.
pub fn toy_dataset(n: usize, size: usize, seed: u64) -> Result<Vec<ImagePlane>> {
    toy_dataset_with_channels(n, size, 1, seed)
}

pub fn toy_dataset_with_channels(n: usize, size: usize, channels: usize, seed: u64) -> Result<Vec<ImagePlane>> {
    if n == 0 || size == 0 {
        return Err(Error::arg("toy dataset needs n >= 1 and size >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| toy_image(size, channels, &mut rng)).collect()
}
