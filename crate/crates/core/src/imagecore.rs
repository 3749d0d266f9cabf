//! Grayscale image representation, I/O, integral images, noise and denoising.
//!
//! Intensities are normalized reals in `[0,1]`. Noise variance sigma is the
//! variance of the additive Gaussian component on that unit range; the
//! sampler draws with standard deviation `sqrt(sigma)`.

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Row-major grayscale raster with intensities in `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    /// All-zero image.
    pub fn new(width: usize, height: usize) -> Self {
        GrayImage {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    /// Builds an image from a row-major buffer, clamping intensities to `[0,1]`.
    pub fn from_vec(width: usize, height: usize, mut data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::BadBufferLength {
                width,
                height,
                got: data.len(),
            });
        }
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        Ok(GrayImage {
            width,
            height,
            data,
        })
    }

    /// Builds an image without clamping. Metric tests use this to feed
    /// out-of-range intensities; pipeline code should use [`from_vec`].
    ///
    /// [`from_vec`]: GrayImage::from_vec
    pub fn from_vec_raw(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::BadBufferLength {
                width,
                height,
                got: data.len(),
            });
        }
        Ok(GrayImage {
            width,
            height,
            data,
        })
    }

    /// Fills from a function of (x, y), clamping to `[0,1]`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y).clamp(0.0, 1.0));
            }
        }
        GrayImage {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn min_max(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in &self.data {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }
}

/// Inclusive prefix-sum table: `table(x,y) = sum of intensities over [0,x] x [0,y]`.
#[derive(Debug, Clone)]
pub struct IntegralImage {
    width: usize,
    height: usize,
    table: Vec<f64>,
}

impl IntegralImage {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.table[y * self.width + x]
    }
}

/// Parameters of the additive zero-mean Gaussian noise.
#[derive(Debug, Clone, Copy)]
pub struct NoiseSpec {
    /// Variance of the noise (not standard deviation).
    pub variance: f64,
    pub seed: u64,
}

/// Loads an 8-bit grayscale PGM (P5) or 8-bit RGB/gray PNG into `[0,1]`.
///
/// RGB is converted to luminance with ITU-R 601 weights 0.299/0.587/0.114.
pub fn load_image(path: &Path) -> Result<GrayImage> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "pgm" => load_pgm(path),
        "png" => load_png(path),
        other => Err(Error::UnsupportedFormat(format!(
            "{} (extension {:?})",
            path.display(),
            other
        ))),
    }
}

fn load_pgm(path: &Path) -> Result<GrayImage> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::UnsupportedFormat(format!(
            "{}: not a binary PGM (P5)",
            path.display()
        )));
    }

    // Header: three whitespace-separated integers after the magic, with
    // '#' comments allowed, then a single whitespace byte before the raster.
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        while pos < bytes.len() {
            let b = bytes[pos];
            if b == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                pos += 1;
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::UnsupportedFormat(format!(
                "{}: malformed PGM header",
                path.display()
            )));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| {
                Error::UnsupportedFormat(format!("{}: malformed PGM header", path.display()))
            })?;
    }
    let (width, height, maxval) = (fields[0], fields[1], fields[2]);
    if width == 0 || height == 0 {
        return Err(Error::ZeroDimension(path.to_path_buf()));
    }
    if maxval != 255 {
        return Err(Error::UnsupportedFormat(format!(
            "{}: PGM maxval {} (only 255 supported)",
            path.display(),
            maxval
        )));
    }
    pos += 1; // single whitespace byte separating header and raster
    let need = width * height;
    if bytes.len() < pos + need {
        return Err(Error::UnsupportedFormat(format!(
            "{}: truncated PGM raster",
            path.display()
        )));
    }
    let data = bytes[pos..pos + need]
        .iter()
        .map(|&b| f64::from(b) / 255.0)
        .collect();
    GrayImage::from_vec(width, height, data)
}

fn load_png(path: &Path) -> Result<GrayImage> {
    let img = image::open(path)
        .map_err(|e| Error::UnsupportedFormat(format!("{}: {}", path.display(), e)))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::ZeroDimension(path.to_path_buf()));
    }
    let data: Vec<f64> = match img {
        image::DynamicImage::ImageLuma8(g) => {
            g.into_raw().iter().map(|&v| f64::from(v) / 255.0).collect()
        }
        image::DynamicImage::ImageLumaA8(g) => g
            .pixels()
            .map(|p| f64::from(p.0[0]) / 255.0)
            .collect(),
        image::DynamicImage::ImageRgb8(rgb) => rgb
            .pixels()
            .map(|p| luminance(p.0[0], p.0[1], p.0[2]))
            .collect(),
        image::DynamicImage::ImageRgba8(rgb) => rgb
            .pixels()
            .map(|p| luminance(p.0[0], p.0[1], p.0[2]))
            .collect(),
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "{}: {:?} (only 8-bit gray/RGB PNG supported)",
                path.display(),
                other.color()
            )))
        }
    };
    GrayImage::from_vec(w, h, data)
}

#[inline]
fn luminance(r: u8, g: u8, b: u8) -> f64 {
    (0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b)) / 255.0
}

/// Writes a binary PGM (P5, maxval 255). The only output format.
pub fn save_pgm(img: &GrayImage, path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(20 + img.data.len());
    write!(out, "P5\n{} {}\n255\n", img.width, img.height).unwrap();
    out.extend(
        img.data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Single-pass inclusive prefix-sum table over the image.
pub fn integral_image(img: &GrayImage) -> IntegralImage {
    let (w, h) = (img.width, img.height);
    let mut table = vec![0.0f64; w * h];
    for y in 0..h {
        let mut row_sum = 0.0;
        for x in 0..w {
            row_sum += img.data[y * w + x];
            table[y * w + x] = row_sum + if y > 0 { table[(y - 1) * w + x] } else { 0.0 };
        }
    }
    IntegralImage {
        width: w,
        height: h,
        table,
    }
}

/// Sum of intensities over the inclusive rectangle `[x0,x1] x [y0,y1]`
/// using four table lookups.
pub fn box_sum(
    ii: &IntegralImage,
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
) -> Result<f64> {
    if x0 > x1 || y0 > y1 || x1 >= ii.width || y1 >= ii.height {
        return Err(Error::RectOutOfBounds {
            x0,
            y0,
            x1,
            y1,
            width: ii.width,
            height: ii.height,
        });
    }
    let d = ii.at(x1, y1);
    let b = if y0 > 0 { ii.at(x1, y0 - 1) } else { 0.0 };
    let c = if x0 > 0 { ii.at(x0 - 1, y1) } else { 0.0 };
    let a = if x0 > 0 && y0 > 0 {
        ii.at(x0 - 1, y0 - 1)
    } else {
        0.0
    };
    Ok(d - b - c + a)
}

/// Like [`box_sum`] but with signed, clipped coordinates: the rectangle is
/// intersected with the image and an empty intersection sums to zero.
/// Detector box filters near borders rely on this.
pub(crate) fn box_sum_clipped(ii: &IntegralImage, x0: i64, y0: i64, x1: i64, y1: i64) -> f64 {
    let x0 = x0.max(0) as usize;
    let y0 = y0.max(0) as usize;
    if x1 < x0 as i64 || y1 < y0 as i64 {
        return 0.0;
    }
    let x1 = (x1 as usize).min(ii.width - 1);
    let y1 = (y1 as usize).min(ii.height - 1);
    if x0 > x1 || y0 > y1 {
        return 0.0;
    }
    box_sum(ii, x0, y0, x1, y1).expect("clipped rectangle is in bounds")
}

/// Adds zero-mean Gaussian noise with the given variance, clamping the
/// result to `[0,1]`. The pixel stream is fully determined by `spec.seed`;
/// variance zero returns the input bit-identically.
pub fn add_gaussian_noise(img: &GrayImage, spec: &NoiseSpec) -> Result<GrayImage> {
    if spec.variance < 0.0 {
        return Err(Error::NegativeVariance(spec.variance));
    }
    if spec.variance == 0.0 {
        return Ok(img.clone());
    }
    let normal = Normal::new(0.0, spec.variance.sqrt()).expect("std dev is finite and positive");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let data = img
        .data
        .iter()
        .map(|&v| (v + normal.sample(&mut rng)).clamp(0.0, 1.0))
        .collect();
    Ok(GrayImage {
        width: img.width,
        height: img.height,
        data,
    })
}

/// Replaces each pixel by the arithmetic mean of its k x k neighborhood,
/// with replicate padding at the borders. `k` must be odd.
pub fn mean_filter(img: &GrayImage, k: usize) -> Result<GrayImage> {
    if k == 0 || k % 2 == 0 {
        return Err(Error::BadFilterWindow(k));
    }
    if k == 1 {
        return Ok(img.clone());
    }
    let (w, h) = (img.width as i64, img.height as i64);
    let r = (k / 2) as i64;
    let norm = 1.0 / (k * k) as f64;
    let mut data = Vec::with_capacity(img.data.len());
    for y in 0..h {
        for x in 0..w {
            let mut sum = 0.0;
            for dy in -r..=r {
                let sy = (y + dy).clamp(0, h - 1) as usize;
                for dx in -r..=r {
                    let sx = (x + dx).clamp(0, w - 1) as usize;
                    sum += img.data[sy * img.width + sx];
                }
            }
            data.push((sum * norm).clamp(0.0, 1.0));
        }
    }
    Ok(GrayImage {
        width: img.width,
        height: img.height,
        data,
    })
}
