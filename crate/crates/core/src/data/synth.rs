//! Procedural RGB-D indoor scenes.
//!
//! Every class pairs a furniture layout (the group) with a far wall fixture
//! (the variant). Furniture stands within the depth sensor's range and is
//! nearly the colour of the wall; the fixture starts beyond the range but is
//! plainly visible in colour. The camera path walks forward while panning,
//! so the fixture enters depth range part way along it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::jet::{jet_encode, MISSING_DEPTH};
use crate::data::keyframes::{blur_score, select_keyframe_indices};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const GROUPS: [&str; 5] = ["bedroom", "closet", "dining", "library", "lounge"];
pub const VARIANTS: [&str; 2] = ["door", "window"];

/// Depth values are stored as distance divided by this, in metres.
pub const DEPTH_SCALE_M: f64 = 10.0;

const WALL_Z: f64 = 8.0;
const NEAR_CLIP_M: f64 = 0.3;
const HORIZON: f64 = 0.7;

/// The default ten-class taxonomy, `"<group>_<variant>"`.
pub fn class_names() -> Vec<String> {
    GROUPS
        .iter()
        .flat_map(|g| VARIANTS.iter().map(move |v| format!("{g}_{v}")))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    /// Horizontal camera travel over a video, in pixels.
    pub pan_px: f64,
    /// Forward camera travel over a video, in metres.
    pub approach_m: f64,
    /// Depth beyond this distance is reported missing.
    pub sensor_range_m: f64,
    /// Per-pixel albedo noise amplitude.
    pub noise: f64,
    /// Relative amplitude of the striped surface texture.
    pub texture: f64,
    /// Colour contrast of furniture against the wall.
    pub camouflage: f64,
    /// Horizontal jitter of furniture, as a fraction of the image width.
    pub layout_jitter: f64,
    /// Raw frames rendered per video.
    pub video_frames: usize,
    pub segment_len: usize,
    /// Probability that a raw video frame is motion blurred.
    pub blur_prob: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            height: 27,
            width: 27,
            pan_px: 12.0,
            approach_m: 2.6,
            sensor_range_m: 4.0,
            noise: 0.06,
            texture: 0.4,
            camouflage: 0.03,
            layout_jitter: 0.06,
            video_frames: 45,
            segment_len: 5,
            blur_prob: 0.5,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height < 4 || self.width < 4 {
            return Err(Error::InvalidArgument(format!(
                "scene of {}×{} pixels is too small",
                self.height, self.width
            )));
        }
        if !(self.sensor_range_m > 0.0) || self.pan_px < 0.0 || self.approach_m < 0.0 {
            return Err(Error::InvalidArgument(
                "sensor range, pan and approach must be non-negative".into(),
            ));
        }
        if self.video_frames == 0 || self.segment_len == 0 {
            return Err(Error::InvalidArgument(
                "video needs at least one frame per segment".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneMode {
    /// One still from a random point along the camera path.
    Image,
    /// `frames` raw frames covering the whole path.
    Video { frames: usize },
}

/// One rendered view.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneImage {
    pub rgb: Tensor,
    /// Distance over [`DEPTH_SCALE_M`], quantized to 8 bits; missing is [`MISSING_DEPTH`].
    pub depth_raw: Tensor,
    pub depth_encoded: Tensor,
}

impl SceneImage {
    pub fn missing_count(&self) -> usize {
        self.depth_raw
            .data()
            .iter()
            .filter(|&&v| v == MISSING_DEPTH)
            .count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SceneOutput {
    Image(SceneImage),
    Video(Vec<SceneImage>),
}

/// Keyframes of one synthetic video.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSample {
    pub keyframes: Vec<SceneImage>,
    pub label: usize,
    pub source_frames: usize,
    pub segment_len: usize,
    /// Raw frame index of every keyframe, increasing.
    pub keyframe_indices: Vec<usize>,
}

#[derive(Debug, Clone, Copy)]
struct Object {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    z: f64,
    albedo: [f64; 3],
    grain: Grain,
}

/// Luminance stripes in scene coordinates.
#[derive(Debug, Clone, Copy)]
struct Grain {
    vertical: bool,
    period: usize,
    phase: usize,
}

impl Grain {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let period = rng.gen_range(2..=4);
        Self {
            vertical: rng.gen_bool(0.5),
            period,
            phase: rng.gen_range(0..2 * period),
        }
    }

    fn sign(&self, x: f64, y: f64) -> f64 {
        let u = if self.vertical { x } else { y }.max(0.0) as usize + self.phase;
        if (u / self.period).is_multiple_of(2) {
            1.0
        } else {
            -1.0
        }
    }
}

struct Scene {
    objects: Vec<Object>,
    wall: [f64; 3],
    floor: [f64; 3],
    wall_grain: Grain,
    floor_grain: Grain,
}

fn mix_seed(class_id: usize, seed: u64) -> u64 {
    let mut z = seed ^ (class_id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn jitter(rng: &mut ChaCha8Rng, v: f64, amount: f64) -> f64 {
    v + rng.gen_range(-amount..=amount)
}

fn furniture(group: usize) -> &'static [(f64, f64, f64, f64, f64)] {
    // (centre x, centre y, width, height) as image fractions, depth in metres
    match group {
        0 => &[(0.40, 0.80, 0.55, 0.22, 3.30)],
        1 => &[
            (0.15, 0.50, 0.22, 0.80, 3.10),
            (0.85, 0.50, 0.22, 0.80, 3.10),
        ],
        2 => &[
            (0.50, 0.70, 0.45, 0.12, 3.60),
            (0.20, 0.78, 0.12, 0.30, 3.40),
            (0.80, 0.78, 0.12, 0.30, 3.40),
        ],
        3 => &[
            (0.20, 0.45, 0.14, 0.75, 3.75),
            (0.50, 0.45, 0.14, 0.75, 3.75),
            (0.80, 0.45, 0.14, 0.75, 3.75),
        ],
        _ => &[
            (0.50, 0.80, 0.70, 0.25, 3.05),
            (0.10, 0.45, 0.06, 0.60, 3.50),
        ],
    }
}

fn build_scene(
    cfg: &SynthConfig,
    group: usize,
    variant: usize,
    rng: &mut ChaCha8Rng,
    grain: &mut ChaCha8Rng,
) -> Scene {
    let (h, w) = (cfg.height as f64, cfg.width as f64);
    let wall = [
        jitter(rng, 0.70, 0.05),
        jitter(rng, 0.65, 0.05),
        jitter(rng, 0.55, 0.05),
    ];
    let floor = [
        jitter(rng, 0.40, 0.05),
        jitter(rng, 0.30, 0.05),
        jitter(rng, 0.20, 0.05),
    ];
    let mut objects = Vec::new();

    let (fw, fh, fy) = if variant == 0 {
        (0.18, 0.45, 0.475)
    } else {
        (0.45, 0.22, 0.28)
    };
    let fx = rng.gen_range(cfg.pan_px..=cfg.pan_px + w * (1.0 - fw));
    let albedo = if variant == 0 {
        [
            jitter(rng, 0.35, 0.04),
            jitter(rng, 0.20, 0.04),
            jitter(rng, 0.10, 0.04),
        ]
    } else {
        [
            jitter(rng, 0.60, 0.04),
            jitter(rng, 0.80, 0.04),
            jitter(rng, 0.95, 0.04),
        ]
    };
    objects.push(Object {
        x0: fx,
        x1: fx + fw * w,
        y0: (fy - fh / 2.0) * h,
        y1: (fy + fh / 2.0) * h,
        z: rng.gen_range(4.6..=5.4),
        albedo,
        grain: Grain::random(grain),
    });

    let mirror = rng.gen_bool(0.5);
    for &(cx, cy, bw, bh, z) in furniture(group) {
        let bw = bw * rng.gen_range(0.85..=1.15);
        let bh = bh * rng.gen_range(0.85..=1.15);
        let cx = jitter(rng, if mirror { 1.0 - cx } else { cx }, cfg.layout_jitter);
        let cy = jitter(rng, cy, 0.06);
        let albedo = wall.map(|c| jitter(rng, c, cfg.camouflage));
        objects.push(Object {
            x0: (cx - bw / 2.0) * w,
            x1: (cx + bw / 2.0) * w,
            y0: (cy - bh / 2.0) * h,
            y1: (cy + bh / 2.0) * h,
            z: jitter(rng, z, 0.1),
            albedo,
            grain: Grain::random(grain),
        });
    }
    Scene {
        objects,
        wall,
        floor,
        wall_grain: Grain::random(grain),
        floor_grain: Grain::random(grain),
    }
}

fn floor_depth(row: f64, h: f64) -> Option<f64> {
    let horizon = HORIZON * h;
    (row >= horizon).then(|| WALL_Z - (row - horizon) / (h - horizon) * (WALL_Z - 1.0))
}

fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

/// Horizontal box blur of a C×H×W tensor, replicating edges.
fn box_blur_h(t: &Tensor, radius: usize) -> Tensor {
    let (c, h, w) = t.chw().expect("image tensor");
    let d = t.data();
    let mut out = vec![0.0; d.len()];
    for row in 0..c * h {
        let base = row * w;
        for x in 0..w {
            let mut s = 0.0;
            for k in 0..=2 * radius {
                let xi = (x + k).saturating_sub(radius).min(w - 1);
                s += d[base + xi];
            }
            out[base + x] = s / (2 * radius + 1) as f64;
        }
    }
    Tensor::new(t.shape().to_vec(), out).expect("same shape")
}

fn render(
    cfg: &SynthConfig,
    scene: &Scene,
    cam_x: f64,
    cam_z: f64,
    blur: usize,
    rng: &mut ChaCha8Rng,
) -> Result<SceneImage> {
    let (h, w) = (cfg.height, cfg.width);
    let plane = h * w;
    let mut rgb = vec![0.0; 3 * plane];
    let mut dist = vec![0.0; plane];
    for y in 0..h {
        let yc = y as f64 + 0.5;
        for x in 0..w {
            let xc = cam_x + x as f64 + 0.5;
            let mut best_z = WALL_Z;
            let mut albedo = scene.wall;
            let mut grain = (scene.wall_grain, 0.0, 0.0);
            if let Some(fz) = floor_depth(yc, h as f64) {
                if fz - cam_z > NEAR_CLIP_M {
                    best_z = fz;
                    albedo = scene.floor;
                    grain = (scene.floor_grain, 0.0, 0.0);
                }
            }
            for o in &scene.objects {
                if xc >= o.x0
                    && xc < o.x1
                    && yc >= o.y0
                    && yc < o.y1
                    && o.z - cam_z > NEAR_CLIP_M
                    && o.z < best_z
                {
                    best_z = o.z;
                    albedo = o.albedo;
                    grain = (o.grain, o.x0, o.y0);
                }
            }
            let i = y * w + x;
            dist[i] = best_z - cam_z;
            let shade = 1.0 + cfg.texture * grain.0.sign(xc - grain.1, yc - grain.2);
            for ch in 0..3 {
                let n = rng.gen_range(-cfg.noise..=cfg.noise);
                rgb[ch * plane + i] = albedo[ch] * shade + n;
            }
        }
    }
    let mut rgb = Tensor::new(vec![3, h, w], rgb)?;
    let mut dist = Tensor::new(vec![1, h, w], dist)?;
    if blur > 0 {
        rgb = box_blur_h(&rgb, blur);
        dist = box_blur_h(&dist, blur);
    }
    let rgb = Tensor::new(
        vec![3, h, w],
        rgb.into_data().into_iter().map(quantize).collect(),
    )?;
    let range = cfg.sensor_range_m;
    let raw: Vec<f64> = dist
        .data()
        .iter()
        .map(|&d| {
            if d > range {
                MISSING_DEPTH
            } else {
                quantize(d / DEPTH_SCALE_M).max(1.0 / 255.0)
            }
        })
        .collect();
    let depth_raw = Tensor::new(vec![1, h, w], raw)?;
    let missing: Vec<bool> = depth_raw
        .data()
        .iter()
        .map(|&v| v == MISSING_DEPTH)
        .collect();
    let depth_encoded = jet_encode(&depth_raw, &missing)?;
    Ok(SceneImage {
        rgb,
        depth_raw,
        depth_encoded,
    })
}

/// Renders class `class_id` of the default taxonomy. The output depends only
/// on `(cfg, class_id, seed, mode)`.
pub fn generate_synthetic_scene(
    cfg: &SynthConfig,
    class_id: usize,
    seed: u64,
    mode: SceneMode,
) -> Result<SceneOutput> {
    cfg.validate()?;
    let classes = GROUPS.len() * VARIANTS.len();
    if class_id >= classes {
        return Err(Error::LabelOutOfRange {
            label: class_id,
            classes,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(class_id, seed));
    let mut grain = ChaCha8Rng::seed_from_u64(mix_seed(class_id, !seed));
    let scene = build_scene(
        cfg,
        class_id / VARIANTS.len(),
        class_id % VARIANTS.len(),
        &mut rng,
        &mut grain,
    );
    match mode {
        SceneMode::Image => {
            let t: f64 = rng.gen_range(0.0..=1.0);
            let img = render(cfg, &scene, t * cfg.pan_px, t * cfg.approach_m, 0, &mut rng)?;
            Ok(SceneOutput::Image(img))
        }
        SceneMode::Video { frames } => {
            if frames == 0 {
                return Err(Error::Empty("video frames"));
            }
            let mut out = Vec::with_capacity(frames);
            for f in 0..frames {
                let t = if frames == 1 {
                    0.0
                } else {
                    f as f64 / (frames - 1) as f64
                };
                let blur = if rng.gen_bool(cfg.blur_prob.clamp(0.0, 1.0)) {
                    rng.gen_range(1..=2)
                } else {
                    0
                };
                out.push(render(
                    cfg,
                    &scene,
                    t * cfg.pan_px,
                    t * cfg.approach_m,
                    blur,
                    &mut rng,
                )?);
            }
            Ok(SceneOutput::Video(out))
        }
    }
}

pub fn generate_image(cfg: &SynthConfig, class_id: usize, seed: u64) -> Result<SceneImage> {
    match generate_synthetic_scene(cfg, class_id, seed, SceneMode::Image)? {
        SceneOutput::Image(img) => Ok(img),
        SceneOutput::Video(_) => unreachable!(),
    }
}

/// Renders a video and keeps the sharpest colour frame of every segment.
pub fn generate_sequence(cfg: &SynthConfig, class_id: usize, seed: u64) -> Result<SequenceSample> {
    let frames = match generate_synthetic_scene(
        cfg,
        class_id,
        seed,
        SceneMode::Video {
            frames: cfg.video_frames,
        },
    )? {
        SceneOutput::Video(f) => f,
        SceneOutput::Image(_) => unreachable!(),
    };
    let scores = frames
        .iter()
        .map(|f| blur_score(&f.rgb))
        .collect::<Result<Vec<_>>>()?;
    let keyframe_indices = select_keyframe_indices(&scores, cfg.segment_len)?;
    let keyframes = keyframe_indices
        .iter()
        .map(|&i| frames[i].clone())
        .collect();
    Ok(SequenceSample {
        keyframes,
        label: class_id,
        source_frames: frames.len(),
        segment_len: cfg.segment_len,
        keyframe_indices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn valid_mask(img: &SceneImage) -> Vec<bool> {
        img.depth_raw
            .data()
            .iter()
            .map(|&v| v != MISSING_DEPTH)
            .collect()
    }

    #[test]
    fn deterministic() {
        let cfg = SynthConfig::default();
        for mode in [SceneMode::Image, SceneMode::Video { frames: 6 }] {
            let a = generate_synthetic_scene(&cfg, 3, 11, mode).unwrap();
            let b = generate_synthetic_scene(&cfg, 3, 11, mode).unwrap();
            assert_eq!(a, b);
        }
        assert_ne!(
            generate_image(&cfg, 3, 11).unwrap(),
            generate_image(&cfg, 3, 12).unwrap()
        );
    }

    #[test]
    fn unlimited_range_has_no_missing_depth() {
        let cfg = SynthConfig {
            sensor_range_m: f64::INFINITY,
            ..SynthConfig::default()
        };
        for c in 0..10 {
            assert_eq!(
                generate_image(&cfg, c, c as u64).unwrap().missing_count(),
                0
            );
        }
    }

    #[test]
    fn missing_depth_is_black() {
        let img = generate_image(&SynthConfig::default(), 0, 1).unwrap();
        assert!(img.missing_count() > 0);
        let plane = img.depth_raw.len();
        for (i, &v) in img.depth_raw.data().iter().enumerate() {
            if v == MISSING_DEPTH {
                for ch in 0..3 {
                    assert_eq!(img.depth_encoded.data()[ch * plane + i], 0.0);
                }
            }
        }
    }

    #[test]
    fn panned_video_reveals_far_depth() {
        let cfg = SynthConfig::default();
        for class in 0..10 {
            let SceneOutput::Video(frames) =
                generate_synthetic_scene(&cfg, class, 5, SceneMode::Video { frames: 9 }).unwrap()
            else {
                panic!("expected video")
            };
            let first = valid_mask(&frames[0]);
            let mut union = first.clone();
            for f in &frames[1..] {
                for (u, v) in union.iter_mut().zip(valid_mask(f)) {
                    *u |= v;
                }
            }
            assert!(first.iter().zip(&union).all(|(&a, &b)| !a || b));
            assert!(
                union.iter().zip(&first).any(|(&u, &f)| u && !f),
                "class {class}"
            );
        }
    }

    #[test]
    fn keyframes_are_ordered() {
        let cfg = SynthConfig::default();
        let s = generate_sequence(&cfg, 7, 2).unwrap();
        assert_eq!(s.keyframes.len(), 9);
        assert!(s.keyframe_indices.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(s.label, 7);
    }

    #[test]
    fn unknown_class_is_rejected() {
        assert!(generate_image(&SynthConfig::default(), 10, 0).is_err());
    }
}
