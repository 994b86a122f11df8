//! PSNR and SSIM on the Y channel.
//!
//! No border is shaved before measuring. SSIM uses an 11x11 Gaussian window
//! (sigma 1.5), K1 = 0.01, K2 = 0.03 and unit dynamic range, averaged over all
//! fully-contained window positions.

use std::fmt::Write as _;
use std::path::Path;

use crate::data::png_names;
use crate::error::{Error, Result};
use crate::imaging::{load_image, to_luma, ImagePlane};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn luma_pair(a: &ImagePlane, b: &ImagePlane) -> Result<(ImagePlane, ImagePlane)> {
    a.ensure_same_shape(b, "metric")?;
    Ok((to_luma(a), to_luma(b)))
}

/// `10 log10(1 / MSE)` on the Y channel; `+inf` when the images are identical.
pub fn psnr(a: &ImagePlane, b: &ImagePlane) -> Result<f64> {
    let (a, b) = luma_pair(a, b)?;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        / a.data().len() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    })
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Valid-mode separable filtering of a single-channel `h x w` array.
fn filter_valid(src: &[f64], h: usize, w: usize, win: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = win.iter().enumerate().map(|(k, &g)| g * src[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = win.iter().enumerate().map(|(k, &g)| g * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

/// Mean local SSIM on the Y channel.
pub fn ssim(a: &ImagePlane, b: &ImagePlane) -> Result<f64> {
    let (a, b) = luma_pair(a, b)?;
    let (h, w, _) = a.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::arg(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"
        )));
    }
    let x: Vec<f64> = a.data().iter().map(|&v| v as f64).collect();
    let y: Vec<f64> = b.data().iter().map(|&v| v as f64).collect();
    let win = gaussian_window();
    let mu_x = filter_valid(&x, h, w, &win);
    let mu_y = filter_valid(&y, h, w, &win);
    let prod = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(u, v)| u * v).collect() };
    let e_xx = filter_valid(&prod(&x, &x), h, w, &win);
    let e_yy = filter_valid(&prod(&y, &y), h, w, &win);
    let e_xy = filter_valid(&prod(&x, &y), h, w, &win);
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let n = mu_x.len() as f64;
    let total: f64 = (0..mu_x.len())
        .map(|i| {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let vx = e_xx[i] - mx * mx;
            let vy = e_yy[i] - my * my;
            let cov = e_xy[i] - mx * my;
            ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
        })
        .sum();
    Ok((total / n).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageScore {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    /// Mean over finite per-image PSNRs; `+inf` only if every pair is identical.
    pub psnr: f64,
    pub ssim: f64,
    pub n_images: usize,
    /// Per-image PSNRs that were infinite and left out of the mean.
    pub psnr_inf_excluded: usize,
    pub per_image: Vec<ImageScore>,
}

impl MetricReport {
    pub fn from_scores(per_image: Vec<ImageScore>) -> Self {
        let n = per_image.len();
        let finite: Vec<f64> = per_image.iter().map(|s| s.psnr).filter(|p| p.is_finite()).collect();
        let psnr = if finite.is_empty() {
            f64::INFINITY
        } else {
            finite.iter().sum::<f64>() / finite.len() as f64
        };
        let psnr_inf_excluded = if finite.is_empty() { 0 } else { n - finite.len() };
        let ssim = per_image.iter().map(|s| s.ssim).sum::<f64>() / n.max(1) as f64;
        Self {
            psnr,
            ssim,
            n_images: n,
            psnr_inf_excluded,
            per_image,
        }
    }

    /// Plain-text table for the terminal.
    pub fn table(&self) -> String {
        let width = self
            .per_image
            .iter()
            .map(|s| s.name.len())
            .max()
            .unwrap_or(4)
            .max(4);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:>10}  {:>8}", "name", "PSNR(dB)", "SSIM");
        for s in &self.per_image {
            let _ = writeln!(out, "{:<width$}  {:>10}  {:>8.4}", s.name, fmt_psnr(s.psnr), s.ssim);
        }
        let _ = writeln!(out, "{:<width$}  {:>10}  {:>8.4}", "mean", fmt_psnr(self.psnr), self.ssim);
        if self.psnr_inf_excluded > 0 {
            let _ = writeln!(
                out,
                "({} identical pair(s) with infinite PSNR left out of the mean)",
                self.psnr_inf_excluded
            );
        }
        out
    }

    /// `name,psnr_db,ssim` rows followed by a `mean` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("name,psnr_db,ssim\n");
        for s in &self.per_image {
            let _ = writeln!(out, "{},{},{:.6}", s.name, fmt_psnr(s.psnr), s.ssim);
        }
        let _ = writeln!(out, "mean,{},{:.6}", fmt_psnr(self.psnr), self.ssim);
        out
    }
}

pub fn fmt_psnr(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.4}")
    }
}

/// Pairs `*.png` files by name across two directories and scores each pair.
pub fn evaluate_dir(pred_dir: &Path, ref_dir: &Path) -> Result<MetricReport> {
    let mut pred = png_names(pred_dir)?;
    let mut refs = png_names(ref_dir)?;
    pred.sort();
    refs.sort();
    if pred.is_empty() && refs.is_empty() {
        return Err(Error::NoImages(pred_dir.to_path_buf()));
    }
    let mut orphans: Vec<String> = pred
        .iter()
        .filter(|n| refs.binary_search(n).is_err())
        .map(|n| pred_dir.join(n).display().to_string())
        .collect();
    orphans.extend(
        refs.iter()
            .filter(|n| pred.binary_search(n).is_err())
            .map(|n| ref_dir.join(n).display().to_string()),
    );
    if !orphans.is_empty() {
        return Err(Error::Orphans(orphans));
    }
    let scores = pred
        .iter()
        .map(|name| {
            let a = load_image(pred_dir.join(name))?;
            let b = load_image(ref_dir.join(name))?;
            Ok(ImageScore {
                name: name.clone(),
                psnr: psnr(&a, &b)?,
                ssim: ssim(&a, &b)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport::from_scores(scores))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::save_image;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn constant(n: usize, v: f32) -> ImagePlane {
        ImagePlane::filled(n, n, 1, v).unwrap()
    }

    /// Direct per-window SSIM with a 2-D Gaussian built from scratch.
    fn naive_ssim(a: &ImagePlane, b: &ImagePlane) -> f64 {
        let (h, w, _) = a.shape();
        let mut g = [[0.0f64; 11]; 11];
        let mut s = 0.0;
        for (i, row) in g.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
                *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
                s += *v;
            }
        }
        let (c1, c2) = (0.0001, 0.0009);
        let mut total = 0.0;
        let mut count = 0.0;
        for y0 in 0..=h - 11 {
            for x0 in 0..=w - 11 {
                let (mut mx, mut my) = (0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let wt = g[i][j] / s;
                        mx += wt * a.get(y0 + i, x0 + j, 0) as f64;
                        my += wt * b.get(y0 + i, x0 + j, 0) as f64;
                    }
                }
                let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let wt = g[i][j] / s;
                        let dx = a.get(y0 + i, x0 + j, 0) as f64 - mx;
                        let dy = b.get(y0 + i, x0 + j, 0) as f64 - my;
                        vx += wt * dx * dx;
                        vy += wt * dy * dy;
                        cov += wt * dx * dy;
                    }
                }
                total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1.0;
            }
        }
        total / count
    }

    #[test]
    fn psnr_closed_forms() {
        assert_eq!(psnr(&constant(4, 0.3), &constant(4, 0.3)).unwrap(), f64::INFINITY);
        // 0.2f32 - 0.1f32 is 0.1 to within 1.5e-9
        let p = psnr(&constant(4, 0.2), &constant(4, 0.1)).unwrap();
        assert!((p - 20.0).abs() < 1e-6, "{p}");
        let p = psnr(&constant(4, 0.5), &constant(4, 0.51)).unwrap();
        assert!((p - 40.0).abs() < 1e-3, "{p}");
        assert!(psnr(&constant(4, 0.5), &constant(5, 0.5)).is_err());
    }

    #[test]
    fn psnr_symmetric_and_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = ImagePlane::from_fn(8, 8, 1, |_, _, _| rng.gen_range(0.3..0.7)).unwrap();
        let b = ImagePlane::from_fn(8, 8, 1, |_, _, _| rng.gen_range(0.3..0.7)).unwrap();
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        let far = a.zip_map(&b, |x, y| x + 1.5 * (y - x)).unwrap();
        assert!(psnr(&a, &far).unwrap() < psnr(&a, &b).unwrap());
    }

    #[test]
    fn ssim_identical_and_inverted_constants() {
        let a = constant(16, 0.3);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        let b = constant(16, 0.7);
        let (mx, my) = (0.3f64, 0.7f64);
        let lum = (2.0 * mx * my + 1e-4) / (mx * mx + my * my + 1e-4);
        assert!((ssim(&a, &b).unwrap() - lum).abs() < 1e-6);
        assert!(ssim(&constant(10, 0.1), &constant(10, 0.1)).is_err());
    }

    #[test]
    fn ssim_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for (h, w) in [(32, 32), (11, 11), (13, 20)] {
            let a = ImagePlane::from_fn(h, w, 1, |_, _, _| rng.gen::<f32>()).unwrap();
            let b = a.map(|v| (v + rng.gen_range(-0.2..0.2)).clamp(0.0, 1.0));
            let fast = ssim(&a, &b).unwrap();
            assert!((fast - naive_ssim(&a, &b)).abs() < 1e-6);
            assert!((fast - ssim(&b, &a).unwrap()).abs() < 1e-9);
            assert!((-1.0..=1.0).contains(&fast));
        }
    }

    #[test]
    fn rgb_inputs_use_luma() {
        let a = ImagePlane::filled(12, 12, 3, 0.5).unwrap();
        let b = ImagePlane::filled(12, 12, 3, 0.6).unwrap();
        // luma difference = 0.1 * 219 / 255
        let expect = -20.0 * (0.1f64 * 219.0 / 255.0).log10();
        assert!((psnr(&a, &b).unwrap() - expect).abs() < 1e-4);
    }

    #[test]
    fn evaluate_dir_means_and_orphans() {
        let pred = tempfile::tempdir().unwrap();
        let refd = tempfile::tempdir().unwrap();
        // quantized values: 51/255 = 0.2, 77/255 ~ 0.302, 102/255 = 0.4
        save_image(&constant(12, 51.0 / 255.0), refd.path().join("a.png")).unwrap();
        save_image(&constant(12, 77.0 / 255.0), pred.path().join("a.png")).unwrap();
        save_image(&constant(12, 51.0 / 255.0), refd.path().join("b.png")).unwrap();
        save_image(&constant(12, 102.0 / 255.0), pred.path().join("b.png")).unwrap();
        let r = evaluate_dir(pred.path(), refd.path()).unwrap();
        let pa = -20.0 * (26.0f64 / 255.0).log10();
        let pb = -20.0 * (51.0f64 / 255.0).log10();
        assert!((r.psnr - (pa + pb) / 2.0).abs() < 1e-4);
        assert_eq!(r.n_images, 2);
        assert!(r.to_csv().starts_with("name,psnr_db,ssim\na.png,"));
        assert!(r.to_csv().lines().last().unwrap().starts_with("mean,"));

        let same = evaluate_dir(refd.path(), refd.path()).unwrap();
        assert_eq!(same.psnr, f64::INFINITY);
        assert!((same.ssim - 1.0).abs() < 1e-9);
        assert!(same.to_csv().contains("mean,inf,1.000000"));

        save_image(&constant(12, 0.2), pred.path().join("c.png")).unwrap();
        match evaluate_dir(pred.path(), refd.path()) {
            Err(Error::Orphans(list)) => assert!(list[0].ends_with("c.png")),
            other => panic!("{other:?}"),
        }
        let empty = tempfile::tempdir().unwrap();
        assert!(matches!(evaluate_dir(empty.path(), empty.path()), Err(Error::NoImages(_))));
    }

    #[test]
    fn report_excludes_infinite_psnr_when_mixed() {
        let r = MetricReport::from_scores(vec![
            ImageScore { name: "a".into(), psnr: f64::INFINITY, ssim: 1.0 },
            ImageScore { name: "b".into(), psnr: 30.0, ssim: 0.5 },
        ]);
        assert_eq!(r.psnr, 30.0);
        assert_eq!(r.psnr_inf_excluded, 1);
        assert_eq!(r.ssim, 0.75);
    }
}
