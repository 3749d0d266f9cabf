//! Deterministic synthetic multi-view face-like image generator.
//!
//! Faces are parametric blob drawings: an elliptical head on a vertically
//! graded background, two bright eye blobs, a bright nose ridge and a dark
//! mouth bar. Yaw is simulated by compressing the face horizontally about
//! its midline (cosine of the yaw, floored so a profile view stays
//! renderable) and occluding the far-side eye beyond 45 degrees. Every
//! pixel is a pure function of (subject seed, view, jitter seed).

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imagecore::{save_pgm, GrayImage};
use crate::template::angle_dir_name;

/// Horizontal compression floor at 90 degrees; a literal cos(90) would
/// collapse the face to a line.
const MIN_YAW_SCALE: f64 = 0.3;

/// Per-subject face geometry, drawn from seeded uniform ranges.
///
/// The four facial features sit in separated brightness bands (left eye
/// strongest, then right eye, mouth, nose) so the detector ranks them the
/// same way in every jittered sample of a subject, which keeps the
/// response-ordered template slots stable.
#[derive(Debug, Clone)]
pub struct SubjectSpec {
    pub seed: u64,
    pub canvas: usize,
    /// Head semi-axes in pixels: 30..40 horizontal, 45..49 vertical.
    /// Identity lives mostly in horizontal geometry, which yaw
    /// compression erodes; vertical ranges stay narrow.
    pub head_rx: f64,
    pub head_ry: f64,
    /// Skin intensity, 0.48..0.58.
    pub skin: f64,
    /// Horizontal eye offset from the midline, 8..20 px.
    pub eye_dx: f64,
    /// Eye height above the face center, 10.5..12.5 px.
    pub eye_dy: f64,
    /// Eye blob radius, 2.6..3.4 px.
    pub eye_r: f64,
    /// Left/right eye brightness above skin: 0.30..0.34 and 0.24..0.27.
    pub eye_amp_left: f64,
    pub eye_amp_right: f64,
    /// Pupil offset directions in radians, one per eye. The dark pupil
    /// breaks the eye blob's radial symmetry, which pins the descriptor
    /// orientation and carries subject identity.
    pub pupil_angle_left: f64,
    pub pupil_angle_right: f64,
    /// Nose ridge length below the eye line, 8..10 px.
    pub nose_len: f64,
    /// Nose ridge half-width, 1.8..3.0 px.
    pub nose_w: f64,
    /// Nose brightness above skin, 0.14..0.18.
    pub nose_amp: f64,
    /// Mouth half-width, 3.5..6.5 px.
    pub mouth_w: f64,
    /// Mouth bar half-height, 2.1..2.5 px.
    pub mouth_h: f64,
    /// Mouth darkness below skin, 0.20..0.23.
    pub mouth_amp: f64,
    /// Background gradient: base 0.15..0.25, slope over the full height.
    pub bg_base: f64,
    pub bg_slope: f64,
}

impl SubjectSpec {
    pub fn from_seed(seed: u64) -> Self {
        Self::with_canvas(seed, 128)
    }

    pub fn with_canvas(seed: u64, canvas: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut r = |lo: f64, hi: f64| rng.random_range(lo..hi);
        SubjectSpec {
            seed,
            canvas,
            head_rx: r(28.0, 42.0),
            head_ry: r(45.0, 49.0),
            skin: r(0.48, 0.58),
            eye_dx: r(8.0, 20.0),
            eye_dy: r(10.5, 12.5),
            eye_r: r(2.6, 3.4),
            eye_amp_left: r(0.30, 0.34),
            eye_amp_right: r(0.24, 0.27),
            pupil_angle_left: r(0.0, std::f64::consts::TAU),
            pupil_angle_right: r(0.0, std::f64::consts::TAU),
            nose_len: r(8.0, 10.0),
            nose_w: r(1.8, 3.0),
            nose_amp: r(0.14, 0.18),
            mouth_w: r(3.5, 6.5),
            mouth_h: r(2.1, 2.5),
            mouth_amp: r(0.20, 0.23),
            bg_base: r(0.15, 0.25),
            bg_slope: r(-0.08, 0.08),
        }
    }
}

/// One rendered view: yaw plus small seeded jitter.
#[derive(Debug, Clone, Copy)]
pub struct ViewSpec {
    /// Degrees in {-90, -45, 0, 45, 90}; positive turns right.
    pub yaw: i16,
    pub jitter_seed: u64,
    /// Translation up to +-3 px, rotation up to +-3 degrees, brightness
    /// up to +-0.05; all zero when false.
    pub jitter: bool,
}

impl ViewSpec {
    pub fn frontal() -> Self {
        ViewSpec {
            yaw: 0,
            jitter_seed: 0,
            jitter: false,
        }
    }
}

struct Jitter {
    dx: f64,
    dy: f64,
    rot: f64,
    brightness: f64,
}

fn jitter_params(view: &ViewSpec) -> Jitter {
    if !view.jitter {
        return Jitter {
            dx: 0.0,
            dy: 0.0,
            rot: 0.0,
            brightness: 0.0,
        };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(view.jitter_seed);
    Jitter {
        dx: rng.random_range(-3.0..3.0),
        dy: rng.random_range(-3.0..3.0),
        rot: rng.random_range(-3.0f64..3.0).to_radians(),
        brightness: rng.random_range(-0.05..0.05),
    }
}

/// Smooth 1 -> 0 step across an ellipse boundary with ~1.5 px feather.
fn soft_inside(nx: f64, ny: f64) -> f64 {
    // nx, ny are coordinates normalized by the semi-axes
    let d = (nx * nx + ny * ny).sqrt();
    let edge = 0.06; // feather width in normalized units
    ((1.0 + edge - d) / (2.0 * edge)).clamp(0.0, 1.0)
}

fn gaussian_blob(dx: f64, dy: f64, rx: f64, ry: f64) -> f64 {
    (-(dx * dx / (2.0 * rx * rx) + dy * dy / (2.0 * ry * ry))).exp()
}

/// Renders one subject at one view. Deterministic per (seed, jitter_seed).
pub fn render(subject: &SubjectSpec, view: &ViewSpec) -> GrayImage {
    let n = subject.canvas;
    let center = (n as f64 - 1.0) / 2.0;
    let jit = jitter_params(view);
    let yaw_rad = f64::from(view.yaw).to_radians();
    let squeeze = yaw_rad.cos().abs().max(MIN_YAW_SCALE);
    // far-side eye hidden beyond 45 degrees: the eye on the side the face
    // turned away from (negative u for right turns)
    let occlude_far = view.yaw.abs() > 45;
    let far_is_negative_u = view.yaw > 0;

    let (sin_r, cos_r) = jit.rot.sin_cos();
    GrayImage::from_fn(n, n, |xi, yi| {
        let x = xi as f64;
        let y = yi as f64;
        // background lives in output coordinates
        let mut value = subject.bg_base + subject.bg_slope * (y / n as f64 - 0.5);

        // undo jitter (rotate about the canvas center, then translate),
        // then undo the yaw compression about the midline
        let px = x - center - jit.dx;
        let py = y - center - jit.dy;
        let rx = cos_r * px + sin_r * py;
        let ry = -sin_r * px + cos_r * py;
        let u = rx / squeeze;
        let v = ry;

        let head = soft_inside(u / subject.head_rx, v / subject.head_ry);
        if head > 0.0 {
            let mut face = subject.skin;

            let eye_y = -subject.eye_dy;
            let eyes = [
                (-1.0, subject.eye_amp_left, subject.pupil_angle_left),
                (1.0, subject.eye_amp_right, subject.pupil_angle_right),
            ];
            for (side, amp, pupil_angle) in eyes {
                if occlude_far {
                    let is_far = (side < 0.0) == far_is_negative_u;
                    if is_far {
                        continue;
                    }
                }
                let (ex, ey) = (side * subject.eye_dx, eye_y);
                face += amp * gaussian_blob(u - ex, v - ey, subject.eye_r, subject.eye_r);
                // wide directional shading around the eye along the pupil
                // axis; it biases every Haar sample in the orientation
                // disc the same way, which pins the dominant direction
                let r = subject.eye_r;
                let along = (pupil_angle.cos() * (u - ex) + pupil_angle.sin() * (v - ey))
                    / (2.5 * r);
                let envelope = gaussian_blob(u - ex, v - ey, 2.2 * r, 2.2 * r);
                face += 0.45 * amp * along.clamp(-1.0, 1.0) * envelope;
            }

            // nose ridge: bright vertical bar from the eye line downward
            let nose_top = eye_y + 2.0;
            let nose_mid = nose_top + subject.nose_len / 2.0;
            face += subject.nose_amp
                * gaussian_blob(u, v - nose_mid, subject.nose_w, subject.nose_len / 2.2);

            // mouth bar: dark horizontal bar below the nose
            let mouth_y = nose_top + subject.nose_len + 6.0;
            face -= subject.mouth_amp
                * gaussian_blob(u, v - mouth_y, subject.mouth_w, subject.mouth_h);

            value = value * (1.0 - head) + face * head;
        }

        value + jit.brightness
    })
}

/// Writes `out/s<idx>/<angle>/s<sample>.pgm` for every subject, view and
/// sample. Subject seeds and per-sample jitter seeds derive from
/// `root_seed` by fixed mixing, so regeneration is byte-identical.
pub fn generate_dataset(
    subjects: usize,
    views: &[i16],
    samples_per_view: usize,
    root_seed: u64,
    out: &Path,
) -> Result<usize> {
    if subjects < 2 || samples_per_view < 1 || views.is_empty() {
        return Err(Error::BadGenSpec);
    }
    for &yaw in views {
        if ![-90, -45, 0, 45, 90].contains(&yaw) {
            return Err(Error::BadAngleDir(yaw.to_string()));
        }
    }
    let mut written = 0;
    for si in 0..subjects {
        let subject_seed = mix(root_seed, si as u64, 0, 0);
        let subject = SubjectSpec::from_seed(subject_seed);
        let subject_dir = out.join(format!("s{si:03}"));
        for (vi, &yaw) in views.iter().enumerate() {
            let view_dir = subject_dir.join(angle_dir_name(yaw));
            std::fs::create_dir_all(&view_dir).map_err(|e| Error::io(&view_dir, e))?;
            for sample in 0..samples_per_view {
                let view = ViewSpec {
                    yaw,
                    jitter_seed: mix(root_seed, si as u64, vi as u64 + 1, sample as u64 + 1),
                    jitter: true,
                };
                let img = render(&subject, &view);
                let path = view_dir.join(format!("s{sample:03}.pgm"));
                save_pgm(&img, &path)?;
                written += 1;
            }
        }
    }
    Ok(written)
}

/// SplitMix64-style mixing of the seed hierarchy into one stream seed.
fn mix(root: u64, a: u64, b: u64, c: u64) -> u64 {
    let mut z = root
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add(c.wrapping_mul(0x94D0_49BB_1331_11EB));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_is_deterministic() {
        let subject = SubjectSpec::from_seed(7);
        let view = ViewSpec { yaw: 45, jitter_seed: 3, jitter: true };
        assert_eq!(render(&subject, &view), render(&subject, &view));
    }

    #[test]
    fn frontal_render_is_nearly_symmetric() {
        for seed in [1, 2, 3, 4, 5] {
            let subject = SubjectSpec::from_seed(seed);
            let img = render(&subject, &ViewSpec::frontal());
            let (w, h) = (img.width(), img.height());
            let mut total = 0.0;
            for y in 0..h {
                for x in 0..w {
                    total += (img.get(x, y) - img.get(w - 1 - x, y)).abs();
                }
            }
            let mean = total / (w * h) as f64;
            assert!(mean < 0.02, "seed {seed}: asymmetry {mean}");
        }
    }

    /// Blob-scale local maximum: exceeds every pixel on the radius-5
    /// square ring by a clear margin. Flat plateaus and boundary edges
    /// fail the margin; an eye blob clears it easily.
    fn is_blob_maximum(img: &GrayImage, x: usize, y: usize) -> bool {
        const R: i64 = 5;
        const MARGIN: f64 = 0.05;
        let v = img.get(x, y);
        let (w, h) = (img.width() as i64, img.height() as i64);
        let (xi, yi) = (x as i64, y as i64);
        if xi < R || yi < R || xi + R >= w || yi + R >= h {
            return false;
        }
        let mut ring_max = f64::NEG_INFINITY;
        for d in -R..=R {
            for (rx, ry) in [(xi + d, yi - R), (xi + d, yi + R), (xi - R, yi + d), (xi + R, yi + d)] {
                ring_max = ring_max.max(img.get(rx as usize, ry as usize));
            }
        }
        v > ring_max + MARGIN
    }

    #[test]
    fn profile_view_occludes_the_far_eye() {
        for seed in [1, 9, 23] {
            let subject = SubjectSpec::from_seed(seed);
            let img = render(&subject, &ViewSpec { yaw: 90, jitter_seed: 0, jitter: false });
            let (w, h) = (img.width(), img.height());
            let bg = subject.bg_base;
            // the far side for a right turn is the left half; exclude the
            // central nose strip
            for y in 0..h {
                for x in 0..w / 2 - 8 {
                    let v = img.get(x, y);
                    assert!(
                        v <= bg + 0.1 || !is_blob_maximum(&img, x, y),
                        "seed {seed}: bright blob at ({x},{y}) in the occluded half"
                    );
                }
            }
        }
    }

    #[test]
    fn near_eye_is_still_a_bright_blob_at_90() {
        let subject = SubjectSpec::from_seed(1);
        let img = render(&subject, &ViewSpec { yaw: 90, jitter_seed: 0, jitter: false });
        let (w, h) = (img.width(), img.height());
        let bg = subject.bg_base;
        let mut found = false;
        for y in 0..h {
            for x in w / 2 + 2..w {
                if img.get(x, y) > bg + 0.1 && is_blob_maximum(&img, x, y) {
                    found = true;
                }
            }
        }
        assert!(found, "near-side eye missing at yaw 90");
    }

    #[test]
    fn dataset_tree_layout_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("d1");
        let count = generate_dataset(3, &[-45, 0, 45], 2, 99, &out).unwrap();
        assert_eq!(count, 18);
        let mut leaf_dirs = 0;
        let mut files = Vec::new();
        for subject in std::fs::read_dir(&out).unwrap() {
            for angle in std::fs::read_dir(subject.unwrap().path()).unwrap() {
                leaf_dirs += 1;
                for f in std::fs::read_dir(angle.unwrap().path()).unwrap() {
                    files.push(f.unwrap().path());
                }
            }
        }
        assert_eq!(leaf_dirs, 9);
        assert_eq!(files.len(), 18);

        let out2 = dir.path().join("d2");
        generate_dataset(3, &[-45, 0, 45], 2, 99, &out2).unwrap();
        files.sort();
        for f in files {
            let rel = f.strip_prefix(&out).unwrap();
            assert_eq!(
                std::fs::read(&f).unwrap(),
                std::fs::read(out2.join(rel)).unwrap(),
                "{rel:?} differs between regenerations"
            );
        }

        assert!(matches!(
            generate_dataset(1, &[0], 2, 1, &dir.path().join("d3")),
            Err(Error::BadGenSpec)
        ));
    }
}
