//! Procedural face and eye-patch renderer.
//!
//! Scene coordinates span `[-1, 1]` on both axes with `y` pointing down. A
//! face is an ellipse with two eye disks; the pupils sit at an offset given by
//! the glance class's gaze code ("lizard" movement) while the whole head
//! shifts a little in the same direction ("owl" movement), scaled per subject.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::data::classes::GlanceClass;
use crate::data::dataset::{Sample, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const HEAD_RX: f64 = 0.55;
const HEAD_RY: f64 = 0.7;
const EYE_RAISE: f64 = 0.12;
const EYE_SEP: f64 = 0.45;
const EYE_RADIUS: f64 = 0.14;
/// Pupil displacement per unit of gaze, as a fraction of the eye radius.
pub const PUPIL_GAIN: f64 = 0.45;
const PUPIL_RADIUS: f64 = 0.35;
/// Pupils never leave the eye: displacement is capped at this fraction of the eye radius.
const PUPIL_REACH: f64 = 0.6;
const OWL_SHIFT: f64 = 0.06;
const SCLERA: f64 = 0.9;
const PUPIL: f64 = -0.9;
const SUPERSAMPLE: usize = 3;
/// Jitter standard deviation as a fraction of the smallest gaze-code distance.
pub const JITTER_FRACTION: f64 = 0.1;

/// Per-driver geometry and appearance.
#[derive(Clone, Debug, PartialEq)]
pub struct SubjectProfile {
    pub id: u32,
    /// Head-centre offset in scene units (the scene is 2 units wide).
    pub head_offset: (f64, f64),
    pub head_size: f64,
    pub eye_spacing: f64,
    /// How strongly the head turns with the gaze, in `[0, 1]`.
    pub owl_gain: f64,
    /// Constant pupil offset in gaze units. Drivers seated off-centre look at
    /// the road with their pupils slightly off-axis.
    pub pupil_bias: (f64, f64),
    pub appearance_seed: u64,
}

impl SubjectProfile {
    /// Draws a subject whose head offset lies in a disk of radius `max_offset`
    /// and whose pupil bias is `-bias_gain * head_offset`.
    pub fn sample<R: Rng + ?Sized>(id: u32, max_offset: f64, bias_gain: f64, rng: &mut R) -> Self {
        let r = max_offset * rng.gen::<f64>().sqrt();
        let a = rng.gen_range(0.0..std::f64::consts::TAU);
        let head_offset = (r * a.cos(), r * a.sin());
        Self {
            id,
            head_offset,
            head_size: rng.gen_range(0.95..1.1),
            eye_spacing: rng.gen_range(0.92..1.08),
            owl_gain: rng.gen_range(0.0..1.0),
            pupil_bias: (-bias_gain * head_offset.0, -bias_gain * head_offset.1),
            appearance_seed: rng.gen(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (ox, oy) = self.head_offset;
        let reach_x = ox.abs() + OWL_SHIFT + HEAD_RX * self.head_size;
        let reach_y = oy.abs() + OWL_SHIFT + HEAD_RY * self.head_size;
        if !(self.head_size > 0.0 && self.eye_spacing > 0.0) || reach_x > 1.0 || reach_y > 1.0 {
            return Err(Error::Config(format!("subject {} does not fit inside the frame: {self:?}", self.id)));
        }
        if !(0.0..=1.0).contains(&self.owl_gain) {
            return Err(Error::Config(format!("subject {} owl gain outside [0, 1]", self.id)));
        }
        Ok(())
    }

    fn appearance(&self) -> (f64, f64) {
        let mut h = self.appearance_seed;
        let mut unit = || {
            h = splitmix64(h);
            (h >> 11) as f64 / (1u64 << 53) as f64
        };
        let skin = 0.1 + 0.35 * unit();
        let background = -0.45 + 0.25 * unit();
        (skin, background)
    }
}

/// Camera placement and sensor characteristics of one domain.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainSpec {
    pub id: u32,
    pub scale: f64,
    pub rotation_deg: f64,
    pub translation: (f64, f64),
    pub brightness: f64,
    /// Negative contrast inverts polarity (an NIR-like sensor).
    pub contrast: f64,
    pub noise_std: f64,
    pub vignette: bool,
}

impl DomainSpec {
    pub fn identity(id: u32) -> Self {
        Self {
            id,
            scale: 1.0,
            rotation_deg: 0.0,
            translation: (0.0, 0.0),
            brightness: 0.0,
            contrast: 1.0,
            noise_std: 0.0,
            vignette: false,
        }
    }

    /// Frontal RGB-like camera with mild sensor noise.
    pub fn primary() -> Self {
        Self { noise_std: 0.05, ..Self::identity(0) }
    }

    /// Rotated, offset camera with inverted polarity, vignetting and more noise.
    pub fn secondary() -> Self {
        Self {
            id: 1,
            scale: 0.9,
            rotation_deg: 12.0,
            translation: (0.06, -0.05),
            brightness: 0.1,
            contrast: -0.8,
            noise_std: 0.1,
            vignette: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("domain {}: {m}", self.id)));
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return bad("scale must be positive");
        }
        if self.rotation_deg.abs() > 15.0 {
            return bad("rotation must be within 15 degrees");
        }
        if self.contrast == 0.0 || !self.contrast.is_finite() {
            return bad("contrast must be nonzero");
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad("noise must be a nonnegative number");
        }
        Ok(())
    }

    fn to_image(&self, (x, y): (f64, f64)) -> (f64, f64) {
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        (self.scale * (c * x - s * y) + self.translation.0, self.scale * (s * x + c * y) + self.translation.1)
    }

    fn to_scene(&self, (x, y): (f64, f64)) -> (f64, f64) {
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        let (u, v) = ((x - self.translation.0) / self.scale, (y - self.translation.1) / self.scale);
        (c * u + s * v, -s * u + c * v)
    }

    fn photometric(&self, v: f64, (x, y): (f64, f64)) -> f64 {
        let mut out = self.contrast * v + self.brightness;
        if self.vignette {
            out *= 1.0 - 0.175 * (x * x + y * y);
        }
        out
    }
}

/// Noise-free geometry of one frame, in scene coordinates.
struct Scene {
    head: (f64, f64),
    radii: (f64, f64),
    eyes: [(f64, f64); 2],
    eye_radius: f64,
    pupils: [(f64, f64); 2],
    pupil_radius: f64,
    skin: f64,
    background: f64,
}

impl Scene {
    fn new(subject: &SubjectProfile, gaze: (f64, f64), class_gaze: (f64, f64)) -> Self {
        let size = subject.head_size;
        let head = (
            subject.head_offset.0 + subject.owl_gain * OWL_SHIFT * class_gaze.0,
            subject.head_offset.1 + subject.owl_gain * OWL_SHIFT * class_gaze.1,
        );
        let half_sep = 0.5 * EYE_SEP * size * subject.eye_spacing;
        let eye_y = head.1 - EYE_RAISE * size;
        let eyes = [(head.0 - half_sep, eye_y), (head.0 + half_sep, eye_y)];
        let eye_radius = EYE_RADIUS * size;
        let mut shift = (PUPIL_GAIN * gaze.0, PUPIL_GAIN * gaze.1);
        let len = shift.0.hypot(shift.1);
        if len > PUPIL_REACH {
            shift = (shift.0 * PUPIL_REACH / len, shift.1 * PUPIL_REACH / len);
        }
        let pupils = eyes.map(|(x, y)| (x + eye_radius * shift.0, y + eye_radius * shift.1));
        let (skin, background) = subject.appearance();
        Self {
            head,
            radii: (HEAD_RX * size, HEAD_RY * size),
            eyes,
            eye_radius,
            pupils,
            pupil_radius: PUPIL_RADIUS * eye_radius,
            skin,
            background,
        }
    }

    fn value(&self, (x, y): (f64, f64)) -> f64 {
        let inside = |(cx, cy): (f64, f64), r: f64| (x - cx).powi(2) + (y - cy).powi(2) <= r * r;
        for p in self.pupils {
            if inside(p, self.pupil_radius) {
                return PUPIL;
            }
        }
        for e in self.eyes {
            if inside(e, self.eye_radius) {
                return SCLERA;
            }
        }
        let (dx, dy) = ((x - self.head.0) / self.radii.0, (y - self.head.1) / self.radii.1);
        if dx * dx + dy * dy <= 1.0 {
            self.skin
        } else {
            self.background
        }
    }
}

/// Renders an `size x size` grid whose pixel `(row, col)` covers the image-space square at
/// `origin + step * (col, row)`, averaging `SUPERSAMPLE^2` scene samples per pixel.
fn raster(scene: &Scene, domain: &DomainSpec, size: usize, origin: (f64, f64), step: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(size * size);
    let sub = step / SUPERSAMPLE as f64;
    for row in 0..size {
        for col in 0..size {
            let mut acc = 0.0;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let img = (
                        origin.0 + step * col as f64 + sub * (sx as f64 + 0.5),
                        origin.1 + step * row as f64 + sub * (sy as f64 + 0.5),
                    );
                    acc += domain.photometric(scene.value(domain.to_scene(img)), img);
                }
            }
            out.push(acc / (SUPERSAMPLE * SUPERSAMPLE) as f64);
        }
    }
    out
}

fn finish<R: Rng + ?Sized>(mut pixels: Vec<f64>, noise: f64, size: usize, rng: &mut R) -> Tensor<f32> {
    if noise > 0.0 {
        let normal = Normal::new(0.0, noise).expect("validated noise level");
        pixels.iter_mut().for_each(|p| *p += normal.sample(rng));
    }
    let data = pixels.into_iter().map(|p| p.clamp(-1.0, 1.0) as f32).collect();
    Tensor::new([size, size, 1], data).expect("square image")
}

/// Draws the per-frame gaze jitter: isotropic normal, radially clipped at 3 sigma.
pub fn jitter<R: Rng + ?Sized>(sigma: f64, rng: &mut R) -> (f64, f64) {
    if sigma == 0.0 {
        return (0.0, 0.0);
    }
    let (zx, zy): (f64, f64) = (StandardNormal.sample(rng), StandardNormal.sample(rng));
    let len = zx.hypot(zy);
    let k = if len > 3.0 { 3.0 / len } else { 1.0 };
    (sigma * zx * k, sigma * zy * k)
}

/// Renders one face crop and the matching eye patch.
///
/// The eye patch is an axis-aligned square crop of the noise-free camera
/// image, centred between the eyes with a side of twice the inter-eye
/// distance, resampled to `size x size`; sensor noise is then drawn
/// independently for each image. The returned sample has id 0, is labeled and
/// belongs to the training split; the dataset generator assigns those fields.
pub fn render_sample<R: Rng + ?Sized>(
    subject: &SubjectProfile,
    domain: &DomainSpec,
    class: GlanceClass,
    size: usize,
    jitter_sigma: f64,
    rng: &mut R,
) -> Sample {
    let code = class.gaze_code();
    let j = jitter(jitter_sigma, rng);
    let gaze = (code.0 + j.0 + subject.pupil_bias.0, code.1 + j.1 + subject.pupil_bias.1);
    let scene = Scene::new(subject, gaze, code);

    let step = 2.0 / size as f64;
    let face = raster(&scene, domain, size, (-1.0, -1.0), step);

    let [l, r] = scene.eyes.map(|e| domain.to_image(e));
    let center = (0.5 * (l.0 + r.0), 0.5 * (l.1 + r.1));
    let side = 2.0 * (r.0 - l.0).hypot(r.1 - l.1);
    let eye = raster(&scene, domain, size, (center.0 - side / 2.0, center.1 - side / 2.0), side / size as f64);

    Sample {
        id: 0,
        face: finish(face, domain.noise_std, size, rng),
        eye: finish(eye, domain.noise_std, size, rng),
        class,
        subject: subject.id,
        domain: domain.id,
        labeled: true,
        split: Split::Train,
    }
}

/// Non-learned gaze estimate from a clean eye patch: pupil centroid minus the
/// eye centre, divided by the pupil gain times the measured eye radius,
/// averaged over both eyes.
pub fn decode_gaze(eye: &Tensor<f32>) -> (f64, f64) {
    let size = eye.shape()[0];
    let px = eye.data();
    let mut total = (0.0, 0.0);
    for cx in [0.25 * size as f64, 0.75 * size as f64] {
        let cy = 0.5 * size as f64;
        let window = 0.25 * size as f64;
        let (mut w, mut sx, mut sy, mut area) = (0.0, 0.0, 0.0, 0.0);
        for row in 0..size {
            for col in 0..size {
                let (x, y) = (col as f64 + 0.5, row as f64 + 0.5);
                if (x - cx).hypot(y - cy) > window {
                    continue;
                }
                let v = px[row * size + col] as f64;
                let wp = (-v / SCLERA).clamp(0.0, 1.0);
                w += wp;
                sx += wp * x;
                sy += wp * y;
                if v > 0.5 || v < 0.0 {
                    area += 1.0;
                }
            }
        }
        let radius = (area / std::f64::consts::PI).sqrt();
        let norm = PUPIL_GAIN * radius * w;
        total.0 += (sx - cx * w) / norm;
        total.1 += (sy - cy * w) / norm;
    }
    (total.0 / 2.0, total.1 / 2.0)
}

pub fn decode_class(eye: &Tensor<f32>) -> GlanceClass {
    let (dx, dy) = decode_gaze(eye);
    GlanceClass::nearest(dx, dy)
}

/// SplitMix64 finalizer, used to derive independent per-item seeds.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Order-sensitive hash of a sequence of ids.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x5EED_u64, |h, &p| splitmix64(h ^ splitmix64(p)))
}
