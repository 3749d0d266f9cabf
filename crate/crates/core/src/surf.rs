//! Hessian-based interest point detection and 128-d SURF descriptors.
//!
//! Detection approximates the Hessian determinant with integral-image box
//! filters: `det = Dxx*Dyy - (w*Dxy)^2`. The sign of the trace `Dxx + Dyy`
//! is kept per point and gates descriptor matching. Descriptors are the
//! extended 128-d variant: 4x4 subregions, Haar wavelet sums split by the
//! sign of the complementary response, unit-normalized.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::imagecore::{box_sum_clipped, integral_image, GrayImage, IntegralImage};

/// Smallest box filter in the pyramid.
const BASE_FILTER: usize = 9;
/// Scale assigned to the base filter (the finest detectable scale).
const BASE_SCALE: f64 = 1.2;
/// A quadratic fit whose spatial offset lands beyond half a sample is
/// re-anchored on the neighboring sample and refitted, up to this many
/// times, so blobs centered between samples are neither dropped nor
/// placed a full sample off.
const MAX_REFINE_STEPS: usize = 3;
/// Spatial offsets must converge below this; the scale axis cannot be
/// re-anchored and accepts up to a full layer step.
const MAX_SPATIAL_OFFSET: f64 = 0.5;
const MAX_SCALE_OFFSET: f64 = 1.0;

#[derive(Debug, Clone, Copy)]
pub struct DetectorConfig {
    pub octaves: usize,
    pub intervals_per_octave: usize,
    pub response_threshold: f64,
    /// Weight balancing Dxy against Dxx*Dyy in the determinant.
    pub hessian_weight: f64,
    /// Skip orientation assignment; all points get orientation 0.
    pub upright: bool,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            octaves: 4,
            intervals_per_octave: 4,
            response_threshold: 1e-4,
            hessian_weight: 0.9,
            upright: false,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.octaves < 1 {
            return Err(Error::BadDetectorConfig("octaves must be >= 1".into()));
        }
        if self.intervals_per_octave < 3 {
            return Err(Error::BadDetectorConfig("intervals must be >= 3".into()));
        }
        if self.response_threshold < 0.0 {
            return Err(Error::BadDetectorConfig("threshold must be >= 0".into()));
        }
        if !(self.hessian_weight > 0.0 && self.hessian_weight <= 1.0) {
            return Err(Error::BadDetectorConfig(
                "hessian weight must lie in (0,1]".into(),
            ));
        }
        Ok(())
    }
}

/// Approximated Hessian determinant and Laplacian sign at one location.
#[derive(Debug, Clone, Copy)]
pub struct HessianResponse {
    pub det: f64,
    /// Sign of `Dxx + Dyy`; exact zero counts as +1.
    pub laplacian_sign: i8,
}

impl HessianResponse {
    /// Combines already-computed second derivatives: `det = Dxx*Dyy - (w*Dxy)^2`.
    pub fn from_derivatives(dxx: f64, dyy: f64, dxy: f64, w: f64) -> Self {
        HessianResponse {
            det: dxx * dyy - (w * dxy).powi(2),
            laplacian_sign: if dxx + dyy >= 0.0 { 1 } else { -1 },
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct InterestPoint {
    pub x: f64,
    pub y: f64,
    /// Box-filter scale in pixels, `>= 1.2`.
    pub scale: f64,
    pub response: f64,
    pub laplacian_sign: i8,
    /// Radians in `[0, 2pi)`; 0 until assigned (and always 0 in upright mode).
    pub orientation: f64,
}

/// Unit-norm extended SURF descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor128 {
    pub values: [f64; 128],
}

impl Descriptor128 {
    pub fn distance_sq(&self, other: &Descriptor128) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Filter sizes follow the canonical schedule: 9,15,21,27 in the first
/// octave, with both the base size and the step doubling per octave.
pub fn filter_size(octave: usize, interval: usize) -> usize {
    let step = 3 << (octave + 1);
    step * (interval + 1) + 3
}

/// Canonical filter size nearest to a given scale (inverse of `1.2 * L / 9`).
pub fn filter_size_for_scale(scale: f64) -> usize {
    let raw = scale * BASE_FILTER as f64 / BASE_SCALE;
    let steps = ((raw - BASE_FILTER as f64) / 6.0).round().max(0.0) as usize;
    BASE_FILTER + 6 * steps
}

/// Box-filter second derivatives at `(x, y)` for one filter size, each
/// normalized by the filter area. Rectangles are clipped at the image
/// border, so callers must check the footprint themselves if they need
/// the unclipped value.
fn derivatives_at(ii: &IntegralImage, x: i64, y: i64, filter: usize) -> (f64, f64, f64) {
    let l = (filter / 3) as i64;
    let b = ((filter - 1) / 2) as i64;
    let hl = (l - 1) / 2; // half-width of the middle lobe (l is odd)

    let band_x = box_sum_clipped(ii, x - b, y - l + 1, x + b, y + l - 1);
    let mid_x = box_sum_clipped(ii, x - hl, y - l + 1, x + hl, y + l - 1);
    let dxx = band_x - 3.0 * mid_x;

    let band_y = box_sum_clipped(ii, x - l + 1, y - b, x + l - 1, y + b);
    let mid_y = box_sum_clipped(ii, x - l + 1, y - hl, x + l - 1, y + hl);
    let dyy = band_y - 3.0 * mid_y;

    let dxy = box_sum_clipped(ii, x + 1, y - l, x + l, y - 1)
        + box_sum_clipped(ii, x - l, y + 1, x - 1, y + l)
        - box_sum_clipped(ii, x - l, y - l, x - 1, y - 1)
        - box_sum_clipped(ii, x + 1, y + 1, x + l, y + l);

    let inv_area = 1.0 / (filter * filter) as f64;
    (dxx * inv_area, dyy * inv_area, dxy * inv_area)
}

fn footprint_fits(ii: &IntegralImage, x: usize, y: usize, filter: usize) -> bool {
    let b = (filter - 1) / 2;
    x >= b && y >= b && x + b < ii.width() && y + b < ii.height()
}

/// Hessian determinant and Laplacian sign at a pixel for one filter size.
pub fn hessian_response(
    ii: &IntegralImage,
    x: usize,
    y: usize,
    filter_size: usize,
    w: f64,
) -> Result<HessianResponse> {
    if filter_size < BASE_FILTER || filter_size % 2 == 0 || filter_size % 3 != 0 {
        return Err(Error::BadFilterSize(filter_size));
    }
    if !footprint_fits(ii, x, y, filter_size) {
        return Err(Error::FootprintOutOfBounds {
            x,
            y,
            filter_size,
            width: ii.width(),
            height: ii.height(),
        });
    }
    let (dxx, dyy, dxy) = derivatives_at(ii, x as i64, y as i64, filter_size);
    Ok(HessianResponse::from_derivatives(dxx, dyy, dxy, w))
}

/// Laplacian sign at an arbitrary (possibly sub-pixel) location and scale,
/// using the canonical filter nearest to the scale with border clipping.
pub fn laplacian_sign_at(ii: &IntegralImage, x: f64, y: f64, scale: f64, _w: f64) -> i8 {
    let filter = filter_size_for_scale(scale);
    let (dxx, dyy, _) = derivatives_at(ii, x.round() as i64, y.round() as i64, filter);
    if dxx + dyy >= 0.0 {
        1
    } else {
        -1
    }
}

struct ResponseLayer {
    filter: usize,
    width: usize,
    height: usize,
    resp: Vec<f64>,
    valid: Vec<bool>,
}

impl ResponseLayer {
    fn build(ii: &IntegralImage, filter: usize, stride: usize, w: f64) -> Self {
        let width = ii.width() / stride;
        let height = ii.height() / stride;
        let mut resp = vec![0.0; width * height];
        let mut valid = vec![false; width * height];
        for sy in 0..height {
            for sx in 0..width {
                let (px, py) = (sx * stride, sy * stride);
                if footprint_fits(ii, px, py, filter) {
                    let (dxx, dyy, dxy) = derivatives_at(ii, px as i64, py as i64, filter);
                    resp[sy * width + sx] = HessianResponse::from_derivatives(dxx, dyy, dxy, w).det;
                    valid[sy * width + sx] = true;
                }
            }
        }
        ResponseLayer {
            filter,
            width,
            height,
            resp,
            valid,
        }
    }

    #[inline]
    fn at(&self, sx: usize, sy: usize) -> f64 {
        self.resp[sy * self.width + sx]
    }

    #[inline]
    fn is_valid(&self, sx: usize, sy: usize) -> bool {
        self.valid[sy * self.width + sx]
    }
}

/// Solves the 3x3 system `h * delta = -g` by Cramer's rule.
fn quadratic_offset(g: [f64; 3], h: [[f64; 3]; 3]) -> Option<[f64; 3]> {
    let det = h[0][0] * (h[1][1] * h[2][2] - h[1][2] * h[2][1])
        - h[0][1] * (h[1][0] * h[2][2] - h[1][2] * h[2][0])
        + h[0][2] * (h[1][0] * h[2][1] - h[1][1] * h[2][0]);
    if det.abs() < 1e-20 {
        return None;
    }
    let rhs = [-g[0], -g[1], -g[2]];
    let mut out = [0.0; 3];
    for k in 0..3 {
        let mut m = h;
        for row in 0..3 {
            m[row][k] = rhs[row];
        }
        let dk = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        out[k] = dk / det;
    }
    Some(out)
}

/// Quadratic sub-sample refinement with spatial re-anchoring. Returns the
/// refined (x, y) in sample coordinates and the scale-axis offset, or
/// `None` when a fit fails or the walk leaves the valid region. A fit
/// that keeps overshooting (oscillating between anchors) is accepted on
/// the last step with its offsets clamped to the trust region.
fn refine_candidate(
    bot: &ResponseLayer,
    mid: &ResponseLayer,
    top: &ResponseLayer,
    sx: usize,
    sy: usize,
) -> Option<(f64, f64, f64)> {
    let (mut cx, mut cy) = (sx, sy);
    for step in 0..MAX_REFINE_STEPS {
        let neighborhood_valid = [bot, mid, top].iter().all(|layer| {
            (cy - 1..=cy + 1).all(|ny| (cx - 1..=cx + 1).all(|nx| layer.is_valid(nx, ny)))
        });
        if !neighborhood_valid {
            return None;
        }
        let v = mid.at(cx, cy);
        let g = [
            (mid.at(cx + 1, cy) - mid.at(cx - 1, cy)) / 2.0,
            (mid.at(cx, cy + 1) - mid.at(cx, cy - 1)) / 2.0,
            (top.at(cx, cy) - bot.at(cx, cy)) / 2.0,
        ];
        let dxx = mid.at(cx + 1, cy) - 2.0 * v + mid.at(cx - 1, cy);
        let dyy = mid.at(cx, cy + 1) - 2.0 * v + mid.at(cx, cy - 1);
        let dss = top.at(cx, cy) - 2.0 * v + bot.at(cx, cy);
        let dxy = (mid.at(cx + 1, cy + 1) - mid.at(cx - 1, cy + 1) - mid.at(cx + 1, cy - 1)
            + mid.at(cx - 1, cy - 1))
            / 4.0;
        let dxs = (top.at(cx + 1, cy) - top.at(cx - 1, cy) - bot.at(cx + 1, cy)
            + bot.at(cx - 1, cy))
            / 4.0;
        let dys = (top.at(cx, cy + 1) - top.at(cx, cy - 1) - bot.at(cx, cy + 1)
            + bot.at(cx, cy - 1))
            / 4.0;
        let offset = quadratic_offset(g, [[dxx, dxy, dxs], [dxy, dyy, dys], [dxs, dys, dss]])?;
        let converged =
            offset[0].abs() <= MAX_SPATIAL_OFFSET && offset[1].abs() <= MAX_SPATIAL_OFFSET;
        if converged || step == MAX_REFINE_STEPS - 1 {
            let ox = offset[0].clamp(-MAX_SPATIAL_OFFSET, MAX_SPATIAL_OFFSET);
            let oy = offset[1].clamp(-MAX_SPATIAL_OFFSET, MAX_SPATIAL_OFFSET);
            let os = offset[2].clamp(-MAX_SCALE_OFFSET, MAX_SCALE_OFFSET);
            return Some((cx as f64 + ox, cy as f64 + oy, os));
        }
        // walk toward the fitted extremum and refit there
        let nx = cx as i64 + offset[0].round().clamp(-1.0, 1.0) as i64;
        let ny = cy as i64 + offset[1].round().clamp(-1.0, 1.0) as i64;
        if nx < 1 || ny < 1 || nx as usize >= mid.width - 1 || ny as usize >= mid.height - 1 {
            return None;
        }
        cx = nx as usize;
        cy = ny as usize;
    }
    None
}

/// Detects interest points as 3x3x3 scale-space maxima of the Hessian
/// determinant, with quadratic sub-pixel/sub-scale interpolation.
///
/// The result is sorted by descending response, ties broken by (y, x)
/// ascending, which makes the output order total and deterministic.
pub fn detect(img: &GrayImage, cfg: &DetectorConfig) -> Result<Vec<InterestPoint>> {
    cfg.validate()?;
    if img.width() < 32 || img.height() < 32 {
        return Err(Error::ImageTooSmall {
            width: img.width(),
            height: img.height(),
        });
    }
    let ii = integral_image(img);
    detect_on_integral(&ii, cfg)
}

pub(crate) fn detect_on_integral(
    ii: &IntegralImage,
    cfg: &DetectorConfig,
) -> Result<Vec<InterestPoint>> {
    let min_dim = ii.width().min(ii.height());
    let mut points = Vec::new();

    for octave in 0..cfg.octaves {
        let stride = 1 << octave;
        let layers: Vec<Option<ResponseLayer>> = (0..cfg.intervals_per_octave)
            .map(|i| {
                let f = filter_size(octave, i);
                (f <= min_dim).then(|| ResponseLayer::build(ii, f, stride, cfg.hessian_weight))
            })
            .collect();

        for mid_idx in 1..cfg.intervals_per_octave.saturating_sub(1) {
            let (Some(bot), Some(mid), Some(top)) = (
                layers[mid_idx - 1].as_ref(),
                layers[mid_idx].as_ref(),
                layers[mid_idx + 1].as_ref(),
            ) else {
                continue;
            };
            for sy in 1..mid.height - 1 {
                'candidate: for sx in 1..mid.width - 1 {
                    let v = mid.at(sx, sy);
                    if v <= cfg.response_threshold || !mid.is_valid(sx, sy) {
                        continue;
                    }
                    for layer in [bot, mid, top] {
                        for dy in -1i64..=1 {
                            for dx in -1i64..=1 {
                                let (nx, ny) =
                                    ((sx as i64 + dx) as usize, (sy as i64 + dy) as usize);
                                if !layer.is_valid(nx, ny) {
                                    continue 'candidate;
                                }
                                if std::ptr::eq(layer, mid) && dx == 0 && dy == 0 {
                                    continue;
                                }
                                if layer.at(nx, ny) >= v {
                                    continue 'candidate;
                                }
                            }
                        }
                    }

                    let Some((fx, fy, ds)) = refine_candidate(bot, mid, top, sx, sy) else {
                        continue;
                    };
                    let x = fx * stride as f64;
                    let y = fy * stride as f64;
                    let step = (top.filter - mid.filter) as f64;
                    let filter_interp = mid.filter as f64 + ds * step;
                    let scale = BASE_SCALE * filter_interp / BASE_FILTER as f64;
                    points.push(InterestPoint {
                        x,
                        y,
                        scale,
                        response: v,
                        laplacian_sign: laplacian_sign_at(ii, x, y, scale, cfg.hessian_weight),
                        orientation: 0.0,
                    });
                }
            }
        }
    }

    points.sort_by(|a, b| {
        b.response
            .total_cmp(&a.response)
            .then(a.y.total_cmp(&b.y))
            .then(a.x.total_cmp(&b.x))
    });
    Ok(points)
}

fn haar_x(ii: &IntegralImage, cx: i64, cy: i64, size: i64) -> f64 {
    let half = size / 2;
    box_sum_clipped(ii, cx, cy - half, cx + half - 1, cy + half - 1)
        - box_sum_clipped(ii, cx - half, cy - half, cx - 1, cy + half - 1)
}

fn haar_y(ii: &IntegralImage, cx: i64, cy: i64, size: i64) -> f64 {
    let half = size / 2;
    box_sum_clipped(ii, cx - half, cy, cx + half - 1, cy + half - 1)
        - box_sum_clipped(ii, cx - half, cy - half, cx + half - 1, cy - 1)
}

fn to_zero_two_pi(angle: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut a = angle % two_pi;
    if a < 0.0 {
        a += two_pi;
    }
    a
}

/// Dominant orientation from Haar responses in a 6*scale disc, scanned by
/// a pi/3 sliding sector. Upright mode returns 0 without computation.
pub fn assign_orientation(
    ii: &IntegralImage,
    p: &InterestPoint,
    cfg: &DetectorConfig,
) -> Result<f64> {
    if cfg.upright {
        return Ok(0.0);
    }
    let s = (p.scale.round() as i64).max(1);
    let (px, py) = (p.x.round() as i64, p.y.round() as i64);
    let reach = 6 * s + 2 * s; // sample ring plus wavelet half-size
    if px - reach < 0
        || py - reach < 0
        || px + reach >= ii.width() as i64
        || py + reach >= ii.height() as i64
    {
        return Err(Error::InsufficientMargin {
            x: p.x,
            y: p.y,
            scale: p.scale,
            what: "orientation window",
        });
    }

    let mut resp = Vec::with_capacity(109);
    for i in -6i64..=6 {
        for j in -6i64..=6 {
            if i * i + j * j >= 36 {
                continue;
            }
            let g = (-((i * i + j * j) as f64) / (2.0 * 2.5 * 2.5)).exp();
            let rx = g * haar_x(ii, px + i * s, py + j * s, 4 * s);
            let ry = g * haar_y(ii, px + i * s, py + j * s, 4 * s);
            resp.push((to_zero_two_pi(ry.atan2(rx)), rx, ry));
        }
    }

    let sector = std::f64::consts::FRAC_PI_3;
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
    let mut ang = 0.0;
    while ang < std::f64::consts::TAU {
        let (mut sx, mut sy) = (0.0, 0.0);
        for &(theta, rx, ry) in &resp {
            let d = to_zero_two_pi(theta - ang);
            if d < sector {
                sx += rx;
                sy += ry;
            }
        }
        let len = sx * sx + sy * sy;
        if len > best.0 {
            best = (len, sx, sy);
        }
        ang += 0.15;
    }
    Ok(to_zero_two_pi(best.2.atan2(best.1)))
}

/// Extended 128-d descriptor over an oriented 20*scale window: 4x4
/// subregions of 5x5 samples, Haar responses rotated into the point frame,
/// sums split by the sign of the complementary response, unit-normalized.
pub fn describe(ii: &IntegralImage, p: &InterestPoint) -> Result<Descriptor128> {
    let s = p.scale;
    let ws = 2 * (s.round() as i64).max(1); // Haar wavelet size
    let margin = (s * 9.5 * std::f64::consts::SQRT_2).ceil() as i64 + ws + 2;
    let (px, py) = (p.x.round() as i64, p.y.round() as i64);
    if px - margin < 0
        || py - margin < 0
        || px + margin >= ii.width() as i64
        || py + margin >= ii.height() as i64
    {
        return Err(Error::InsufficientMargin {
            x: p.x,
            y: p.y,
            scale: p.scale,
            what: "descriptor window",
        });
    }

    let (si, co) = p.orientation.sin_cos();
    let mut values = [0.0f64; 128];
    for a in 0..20 {
        let k = -9.5 + a as f64;
        let iu = a / 5;
        for b in 0..20 {
            let l = -9.5 + b as f64;
            let iv = b / 5;
            let gx = (p.x + s * (k * co - l * si)).round() as i64;
            let gy = (p.y + s * (k * si + l * co)).round() as i64;
            let rx = haar_x(ii, gx, gy, ws);
            let ry = haar_y(ii, gx, gy, ws);
            // responses in the rotated frame
            let du = co * rx + si * ry;
            let dv = -si * rx + co * ry;
            let g = (-(k * k + l * l) / (2.0 * 3.3 * 3.3)).exp();
            let base = (iu * 4 + iv) * 8;
            if dv < 0.0 {
                values[base] += g * du;
                values[base + 1] += g * du.abs();
            } else {
                values[base + 2] += g * du;
                values[base + 3] += g * du.abs();
            }
            if du < 0.0 {
                values[base + 4] += g * dv;
                values[base + 5] += g * dv.abs();
            } else {
                values[base + 6] += g * dv;
                values[base + 7] += g * dv.abs();
            }
        }
    }

    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < 1e-12 {
        return Err(Error::InsufficientMargin {
            x: p.x,
            y: p.y,
            scale: p.scale,
            what: "descriptor (flat window)",
        });
    }
    for v in &mut values {
        *v /= norm;
    }
    Ok(Descriptor128 { values })
}

/// Full extraction pipeline: detect, orient, describe. Points whose
/// orientation or descriptor window exits the image are skipped; the
/// second return value counts them.
pub fn extract(
    img: &GrayImage,
    cfg: &DetectorConfig,
) -> Result<(Vec<(InterestPoint, Descriptor128)>, usize)> {
    let points = detect(img, cfg)?;
    let ii = integral_image(img);
    let mut out = Vec::with_capacity(points.len());
    let mut skipped = 0;
    for mut p in points {
        match assign_orientation(&ii, &p, cfg) {
            Ok(theta) => p.orientation = theta,
            Err(_) => {
                skipped += 1;
                continue;
            }
        }
        match describe(&ii, &p) {
            Ok(d) => out.push((p, d)),
            Err(_) => skipped += 1,
        }
    }
    Ok((out, skipped))
}

/// Ratio-test matching gated by the Laplacian sign: a query only compares
/// against candidates with the same sign, and a pair `(i, j)` is kept when
/// the nearest distance is at most `ratio` times the second nearest.
pub fn match_descriptors(
    a: &[(InterestPoint, Descriptor128)],
    b: &[(InterestPoint, Descriptor128)],
    ratio: f64,
) -> Result<Vec<(usize, usize)>> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::BadMatchRatio(ratio));
    }
    let mut pairs = Vec::new();
    for (i, (pa, da)) in a.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        let mut second = f64::INFINITY;
        for (j, (pb, db)) in b.iter().enumerate() {
            if pb.laplacian_sign != pa.laplacian_sign {
                continue;
            }
            let d = da.distance_sq(db);
            match best {
                Some((_, bd)) if d < bd => {
                    second = bd;
                    best = Some((j, d));
                }
                Some(_) => second = second.min(d),
                None => best = Some((j, d)),
            }
        }
        if let Some((j, d)) = best {
            // squared form of d1 <= ratio * d2; second == inf always passes
            if second.is_infinite() || d <= ratio * ratio * second {
                pairs.push((i, j));
            }
        }
    }
    Ok(pairs)
}

/// Debug dump: one CSV row per keypoint, 6-decimal fixed notation.
pub fn keypoints_to_csv(points: &[InterestPoint]) -> String {
    let mut out = String::from("x,y,scale,response,sign,orientation\n");
    for p in points {
        writeln!(
            out,
            "{:.6},{:.6},{:.6},{:.6},{},{:.6}",
            p.x, p.y, p.scale, p.response, p.laplacian_sign, p.orientation
        )
        .unwrap();
    }
    out
}
