//! Pixel containers, colour conversion, resampling and PNG I/O.
//!
//! Intensities live in `[0, 1]` as `f32`; 8-bit quantization happens only at
//! the file boundary. Planes are interleaved row-major (`(y * w + x) * c + ch`).

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ImagePlane {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl ImagePlane {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::arg(format!(
                "image dimensions must be positive, got {height}x{width}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::arg(format!(
                "image must have 1 or 3 channels, got {channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::arg(format!(
                "data length {} does not match {height}x{width}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Plane with every intensity set to `value`.
    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `(height, width, channels)`
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn same_shape(&self, other: &ImagePlane) -> bool {
        self.shape() == other.shape()
    }

    pub(crate) fn ensure_same_shape(&self, other: &ImagePlane, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::arg(format!(
                "{what}: shape mismatch {:?} vs {:?}",
                self.shape(),
                other.shape()
            )))
        }
    }

    /// Elementwise combination of two planes of identical shape.
    pub fn zip_map(&self, other: &ImagePlane, mut f: impl FnMut(f32, f32) -> f32) -> Result<Self> {
        self.ensure_same_shape(other, "zip_map")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Self { data, ..*self })
    }

    pub fn map(&self, mut f: impl FnMut(f32) -> f32) -> Self {
        Self {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    pub fn clamped(&self) -> Self {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    /// Largest absolute elementwise difference.
    pub fn max_abs_diff(&self, other: &ImagePlane) -> Result<f32> {
        self.ensure_same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max))
    }

    /// Rectangular crop. The window must lie inside the plane.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 || top + height > self.height || left + width > self.width {
            return Err(Error::arg(format!(
                "crop {height}x{width}+{top}+{left} outside {}x{}",
                self.height, self.width
            )));
        }
        let c = self.channels;
        let mut data = Vec::with_capacity(height * width * c);
        for y in top..top + height {
            let start = (y * self.width + left) * c;
            data.extend_from_slice(&self.data[start..start + width * c]);
        }
        Self::new(height, width, c, data)
    }

    /// Replicates a grayscale plane into three channels; RGB is returned as is.
    pub fn to_rgb(&self) -> Self {
        if self.channels == 3 {
            return self.clone();
        }
        Self {
            data: self.data.iter().flat_map(|&v| [v, v, v]).collect(),
            channels: 3,
            ..*self
        }
    }

    /// Lays planes of equal height and channel count side by side, left to right.
    pub fn hconcat(tiles: &[ImagePlane]) -> Result<Self> {
        let first = tiles
            .first()
            .ok_or_else(|| Error::arg("hconcat needs at least one tile"))?;
        let (h, c) = (first.height, first.channels);
        if tiles.iter().any(|t| t.height != h || t.channels != c) {
            return Err(Error::arg("hconcat tiles must share height and channels"));
        }
        let width: usize = tiles.iter().map(|t| t.width).sum();
        let mut data = Vec::with_capacity(h * width * c);
        for y in 0..h {
            for t in tiles {
                let start = y * t.width * c;
                data.extend_from_slice(&t.data[start..start + t.width * c]);
            }
        }
        Self::new(h, width, c, data)
    }

    /// Stacks planes of equal width and channel count top to bottom.
    pub fn vconcat(tiles: &[ImagePlane]) -> Result<Self> {
        let first = tiles
            .first()
            .ok_or_else(|| Error::arg("vconcat needs at least one tile"))?;
        let (w, c) = (first.width, first.channels);
        if tiles.iter().any(|t| t.width != w || t.channels != c) {
            return Err(Error::arg("vconcat tiles must share width and channels"));
        }
        let height = tiles.iter().map(|t| t.height).sum();
        let data = tiles.iter().flat_map(|t| t.data.iter().copied()).collect();
        Self::new(height, w, c, data)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResampleFilter {
    Nearest,
    Bilinear,
    /// Keys cubic with a = -0.5 (Catmull-Rom).
    Bicubic,
}

const CUBIC_A: f64 = -0.5;

pub fn cubic_kernel(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        ((CUBIC_A + 2.0) * x - (CUBIC_A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((CUBIC_A * x - 5.0 * CUBIC_A) * x + 8.0 * CUBIC_A) * x - 4.0 * CUBIC_A
    } else {
        0.0
    }
}

fn linear_kernel(x: f64) -> f64 {
    (1.0 - x.abs()).max(0.0)
}

/// Per-output-sample taps `(source index, weight)` along one axis.
///
/// Downsampling widens the kernel by the inverse scale (antialiasing, as in
/// MATLAB `imresize`). Out-of-range taps clamp to the edge and weights are
/// normalized to sum to one, so constants are preserved exactly.
fn axis_taps(in_len: usize, out_len: usize, filter: ResampleFilter) -> Vec<Vec<(usize, f64)>> {
    let ratio = in_len as f64 / out_len as f64;
    if filter == ResampleFilter::Nearest {
        return (0..out_len)
            .map(|o| {
                let src = (((o as f64 + 0.5) * ratio).floor() as usize).min(in_len - 1);
                vec![(src, 1.0)]
            })
            .collect();
    }
    let (kernel, support): (fn(f64) -> f64, f64) = match filter {
        ResampleFilter::Bilinear => (linear_kernel, 1.0),
        ResampleFilter::Bicubic => (cubic_kernel, 2.0),
        ResampleFilter::Nearest => unreachable!(),
    };
    let scale = (out_len as f64 / in_len as f64).min(1.0);
    let half_width = support / scale;
    (0..out_len)
        .map(|o| {
            let center = (o as f64 + 0.5) * ratio - 0.5;
            let first = (center - half_width).floor() as i64;
            let last = (center + half_width).ceil() as i64;
            let mut taps: Vec<(usize, f64)> = Vec::with_capacity((last - first + 1) as usize);
            let mut total = 0.0;
            for i in first..=last {
                let w = kernel((center - i as f64) * scale);
                if w == 0.0 {
                    continue;
                }
                let idx = i.clamp(0, in_len as i64 - 1) as usize;
                total += w;
                match taps.iter_mut().find(|(j, _)| *j == idx) {
                    Some(tap) => tap.1 += w,
                    None => taps.push((idx, w)),
                }
            }
            for tap in &mut taps {
                tap.1 /= total;
            }
            taps
        })
        .collect()
}

/// Separable resampling to `new_h x new_w` with clamp-to-edge borders.
pub fn resample(
    img: &ImagePlane,
    new_h: usize,
    new_w: usize,
    filter: ResampleFilter,
) -> Result<ImagePlane> {
    if new_h == 0 || new_w == 0 {
        return Err(Error::arg(format!(
            "resample target must be positive, got {new_h}x{new_w}"
        )));
    }
    let (h, w, c) = img.shape();
    let col_taps = axis_taps(w, new_w, filter);
    let row_taps = axis_taps(h, new_h, filter);

    // horizontal pass, kept in f64
    let mut tmp = vec![0f64; h * new_w * c];
    for y in 0..h {
        for (ox, taps) in col_taps.iter().enumerate() {
            for ch in 0..c {
                let mut acc = 0.0;
                for &(sx, wt) in taps {
                    acc += wt * img.data[(y * w + sx) * c + ch] as f64;
                }
                tmp[(y * new_w + ox) * c + ch] = acc;
            }
        }
    }
    let mut out = Vec::with_capacity(new_h * new_w * c);
    for taps in &row_taps {
        for ox in 0..new_w {
            for ch in 0..c {
                let mut acc = 0.0;
                for &(sy, wt) in taps {
                    acc += wt * tmp[(sy * new_w + ox) * c + ch];
                }
                out.push(acc as f32);
            }
        }
    }
    ImagePlane::new(new_h, new_w, c, out)
}

/// BT.601 studio-swing luma coefficients (per unit RGB, before the /255).
pub const LUMA_R: f64 = 65.481;
pub const LUMA_G: f64 = 128.553;
pub const LUMA_B: f64 = 24.966;
pub const LUMA_OFFSET: f64 = 16.0;

/// Y channel: `(16 + 65.481 R + 128.553 G + 24.966 B) / 255`. Grayscale input is returned unchanged.
pub fn to_luma(img: &ImagePlane) -> ImagePlane {
    if img.channels == 1 {
        return img.clone();
    }
    let data = img
        .data
        .chunks_exact(3)
        .map(|px| {
            let y = LUMA_OFFSET
                + LUMA_R * px[0] as f64
                + LUMA_G * px[1] as f64
                + LUMA_B * px[2] as f64;
            (y / 255.0) as f32
        })
        .collect();
    ImagePlane {
        height: img.height,
        width: img.width,
        channels: 1,
        data,
    }
}

/// Converts to the requested channel count: RGB -> luma, or gray -> replicated RGB.
pub fn with_channels(img: &ImagePlane, channels: usize) -> Result<ImagePlane> {
    match (img.channels, channels) {
        (a, b) if a == b => Ok(img.clone()),
        (3, 1) => Ok(to_luma(img)),
        (1, 3) => Ok(img.to_rgb()),
        (_, b) => Err(Error::arg(format!("unsupported channel count {b}"))),
    }
}

pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Loads an 8-bit grayscale or RGB PNG (alpha is dropped, palettes expanded).
pub fn load_image(path: impl AsRef<Path>) -> Result<ImagePlane> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND);
    let format_err = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let mut reader = decoder
        .read_info()
        .map_err(|e| format_err(e.to_string()))?;
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| format_err(e.to_string()))?;
    if frame.bit_depth != png::BitDepth::Eight {
        return Err(format_err(format!(
            "bit depth {:?} (only 8-bit is supported)",
            frame.bit_depth
        )));
    }
    let (in_c, out_c) = match frame.color_type {
        png::ColorType::Grayscale => (1, 1),
        png::ColorType::GrayscaleAlpha => (2, 1),
        png::ColorType::Rgb => (3, 3),
        png::ColorType::Rgba => (4, 3),
        other => return Err(format_err(format!("colour type {other:?}"))),
    };
    let (w, h) = (frame.width as usize, frame.height as usize);
    let data = buf[..frame.buffer_size()]
        .chunks_exact(in_c)
        .flat_map(|px| px[..out_c].iter().map(|&v| v as f32 / 255.0))
        .collect::<Vec<_>>();
    if data.len() != w * h * out_c {
        return Err(format_err("truncated pixel data".into()));
    }
    ImagePlane::new(h, w, out_c, data)
}

/// Clamps to `[0, 1]`, quantizes with `round(v * 255)` and writes an 8-bit PNG.
pub fn save_image(img: &ImagePlane, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(
        BufWriter::new(file),
        img.width as u32,
        img.height as u32,
    );
    encoder.set_color(if img.channels == 1 {
        png::ColorType::Grayscale
    } else {
        png::ColorType::Rgb
    });
    encoder.set_depth(png::BitDepth::Eight);
    let to_io = |e: png::EncodingError| match e {
        png::EncodingError::IoError(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(other.to_string())),
    };
    let mut writer = encoder.write_header().map_err(to_io)?;
    let bytes: Vec<u8> = img.data.iter().map(|&v| quantize(v)).collect();
    writer.write_image_data(&bytes).map_err(to_io)?;
    writer.finish().map_err(to_io)
}
