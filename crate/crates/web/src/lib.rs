//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Every export has a plain-Rust twin returning `Result<_, String>` so the
//! logic is testable natively.

use wasm_bindgen::prelude::*;

use deltadiff::data::{make_pair, toy_dataset, LrHrPair};
use deltadiff::diffusion::{forward_strip, sample, OraclePredictor, StripTile};
use deltadiff::imaging::{quantize, ImagePlane};
use deltadiff::metrics::psnr;
use deltadiff::schedule::{build_schedule, EtaSchedule, ScheduleConfig};

/// Rows of RGBA tiles plus per-tile metadata.
#[wasm_bindgen]
#[derive(Debug, Clone, PartialEq)]
pub struct Strip {
    width: usize,
    height: usize,
    rgba: Vec<u8>,
    labels: Vec<String>,
    etas: Vec<f64>,
    psnr: Vec<f64>,
}

#[wasm_bindgen]
impl Strip {
    #[wasm_bindgen(getter)]
    pub fn width(&self) -> usize {
        self.width
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }

    /// Tile labels joined by commas.
    pub fn labels(&self) -> String {
        self.labels.join(",")
    }

    pub fn etas(&self) -> Vec<f64> {
        self.etas.clone()
    }

    /// PSNR of each tile against HR; `Infinity` for exact matches. Empty for forward strips.
    pub fn psnr(&self) -> Vec<f64> {
        self.psnr.clone()
    }
}

fn schedule(steps: usize, eta_start: f64, eta_end: f64, curvature_p: f64) -> Result<EtaSchedule, String> {
    build_schedule(&ScheduleConfig {
        steps,
        eta_start,
        eta_end,
        curvature_p,
    })
    .map_err(|e| e.to_string())
}

fn toy_pair(size: usize, seed: u64) -> Result<LrHrPair, String> {
    if size == 0 || size % 4 != 0 || size > 512 {
        return Err(format!("size must be a positive multiple of 4 up to 512, got {size}"));
    }
    let hr = toy_dataset(1, size, seed).map_err(|e| e.to_string())?.remove(0);
    make_pair(&hr, 4).map_err(|e| e.to_string())
}

fn to_rgba(img: &ImagePlane) -> Vec<u8> {
    let rgb = img.to_rgb();
    rgb.data()
        .chunks_exact(3)
        .flat_map(|px| [quantize(px[0]), quantize(px[1]), quantize(px[2]), 255])
        .collect()
}

fn rows_to_strip(rows: &[Vec<StripTile>]) -> Result<Strip, String> {
    let images: Vec<ImagePlane> = rows
        .iter()
        .map(|row| {
            let tiles: Vec<ImagePlane> = row.iter().map(|t| t.image.clone()).collect();
            ImagePlane::hconcat(&tiles)
        })
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let joined = ImagePlane::vconcat(&images).map_err(|e| e.to_string())?;
    Ok(Strip {
        width: joined.width(),
        height: joined.height(),
        rgba: to_rgba(&joined),
        labels: rows[0].iter().map(|t| t.label.clone()).collect(),
        etas: rows[0].iter().map(|t| t.eta).collect(),
        psnr: Vec::new(),
    })
}

pub fn schedule_curve_impl(steps: usize, eta_start: f64, eta_end: f64, curvature_p: f64) -> Result<Vec<f64>, String> {
    Ok(schedule(steps, eta_start, eta_end, curvature_p)?.etas().to_vec())
}

/// Deterministic forward strip on top, noisy baseline with `kappa` below.
#[allow(clippy::too_many_arguments)]
pub fn forward_strips_impl(
    size: usize,
    image_seed: u64,
    kappa: f64,
    noise_seed: u64,
    steps: usize,
    eta_start: f64,
    eta_end: f64,
    curvature_p: f64,
) -> Result<Strip, String> {
    let s = schedule(steps, eta_start, eta_end, curvature_p)?;
    let pair = toy_pair(size, image_seed)?;
    let det = forward_strip(&pair.hr, &pair.lr_up, &s, 0.0, noise_seed).map_err(|e| e.to_string())?;
    let noisy = forward_strip(&pair.hr, &pair.lr_up, &s, kappa, noise_seed).map_err(|e| e.to_string())?;
    rows_to_strip(&[det, noisy])
}

/// Reverse states from `lr_up` with the true HR as predictor.
pub fn oracle_rollout_impl(
    size: usize,
    image_seed: u64,
    steps: usize,
    eta_start: f64,
    eta_end: f64,
    curvature_p: f64,
) -> Result<Strip, String> {
    let s = schedule(steps, eta_start, eta_end, curvature_p)?;
    let pair = toy_pair(size, image_seed)?;
    let oracle = OraclePredictor { hr: pair.hr.clone() };
    let (_, traj) = sample(&pair.lr_up, &oracle, &s).map_err(|e| e.to_string())?;
    let tiles = traj.tiles(&s).map_err(|e| e.to_string())?;
    let scores = tiles
        .iter()
        .map(|t| psnr(&t.image, &pair.hr))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let mut strip = rows_to_strip(&[tiles])?;
    strip.psnr = scores;
    Ok(strip)
}

#[wasm_bindgen]
pub fn schedule_curve(steps: usize, eta_start: f64, eta_end: f64, curvature_p: f64) -> Result<Vec<f64>, JsError> {
    schedule_curve_impl(steps, eta_start, eta_end, curvature_p).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn forward_strips(
    size: usize,
    image_seed: u32,
    kappa: f64,
    noise_seed: u32,
    steps: usize,
    eta_start: f64,
    eta_end: f64,
    curvature_p: f64,
) -> Result<Strip, JsError> {
    forward_strips_impl(
        size,
        image_seed.into(),
        kappa,
        noise_seed.into(),
        steps,
        eta_start,
        eta_end,
        curvature_p,
    )
    .map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn oracle_rollout(
    size: usize,
    image_seed: u32,
    steps: usize,
    eta_start: f64,
    eta_end: f64,
    curvature_p: f64,
) -> Result<Strip, JsError> {
    oracle_rollout_impl(size, image_seed.into(), steps, eta_start, eta_end, curvature_p).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rgba_layout() {
        let img = ImagePlane::filled(1, 2, 1, 0.5).unwrap();
        assert_eq!(to_rgba(&img), vec![128, 128, 128, 255, 128, 128, 128, 255]);
    }

    #[test]
    fn toy_pair_rejects_bad_sizes() {
        assert!(toy_pair(30, 0).is_err());
        assert!(toy_pair(0, 0).is_err());
        assert!(toy_pair(32, 0).is_ok());
    }
}
