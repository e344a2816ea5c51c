//! Procedural scene rendering: parametric backgrounds with moving shapes,
//! plus the static-sample synthesis step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ClipSample, DataError};
use crate::tensor::{Dims5, Mask2, Tensor5};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Background {
    StaticTexture,
    DynamicSinusoid,
    NoiseField,
}

impl Background {
    pub fn tag(&self) -> &'static str {
        match self {
            Background::StaticTexture => "static-texture",
            Background::DynamicSinusoid => "dynamic-sinusoid",
            Background::NoiseField => "noise-field",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Rect,
    Disk,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectSpec {
    pub shape: Shape,
    /// Side length (rect) or diameter (disk) in pixels.
    pub size: f64,
    /// Center position at t = 0, (row, col).
    pub pos: (f64, f64),
    /// Pixels per frame; zero velocity = stationary foreground.
    pub velocity: (f64, f64),
    /// RGB intensity in [0, 1].
    pub intensity: [f32; 3],
}

impl ObjectSpec {
    fn center_at(&self, t: usize) -> (f64, f64) {
        (
            self.pos.0 + self.velocity.0 * t as f64,
            self.pos.1 + self.velocity.1 * t as f64,
        )
    }

    fn covers(&self, center: (f64, f64), i: usize, j: usize) -> bool {
        let dy = i as f64 + 0.5 - center.0;
        let dx = j as f64 + 0.5 - center.1;
        let half = self.size / 2.0;
        match self.shape {
            Shape::Rect => dy.abs() <= half && dx.abs() <= half,
            Shape::Disk => dy * dy + dx * dx <= half * half,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    /// (height, width).
    pub canvas: (usize, usize),
    pub background: Background,
    pub objects: Vec<ObjectSpec>,
    /// Additive brightness change per frame.
    pub brightness_drift: f64,
    /// Per-pixel gaussian noise sigma.
    pub noise_sigma: f64,
    /// Scenario tag recorded on generated samples.
    pub tag: String,
    pub seed: u64,
}

impl SceneSpec {
    fn validate(&self, l: usize) -> Result<(), DataError> {
        let (h, w) = (self.canvas.0 as f64, self.canvas.1 as f64);
        for (idx, obj) in self.objects.iter().enumerate() {
            let travel = (obj.velocity.0.hypot(obj.velocity.1)) * (l - 1) as f64;
            if travel > h.min(w) / 2.0 {
                return Err(DataError::Spec(format!(
                    "object {idx} travels {travel:.1} px, more than half the canvas"
                )));
            }
            for t in 0..l {
                let (cy, cx) = obj.center_at(t);
                let half = obj.size / 2.0;
                if cy - half < 0.0 || cx - half < 0.0 || cy + half > h || cx + half > w {
                    return Err(DataError::Spec(format!(
                        "object {idx} escapes the canvas at frame {t}"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; u1 in (0,1] to keep the log finite.
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

struct BackgroundField {
    kind: Background,
    width: usize,
    // sinusoid parameters per channel: spatial freqs, temporal freq, phase
    waves: Vec<(f64, f64, f64, f64)>,
    // per-pixel static texture per channel
    texture: Vec<Vec<f32>>,
}

impl BackgroundField {
    fn new(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Self {
        let (h, w) = spec.canvas;
        let mut waves = Vec::new();
        let mut texture = Vec::new();
        match spec.background {
            Background::DynamicSinusoid => {
                for _ in 0..3 {
                    waves.push((
                        rng.gen_range(0.01..0.08),
                        rng.gen_range(0.01..0.08),
                        rng.gen_range(0.05..0.3),
                        rng.gen_range(0.0..std::f64::consts::TAU),
                    ));
                }
            }
            Background::StaticTexture => {
                // low-frequency sinusoid mixture, frozen in time
                for _ in 0..3 {
                    let (fy, fx, ph) = (
                        rng.gen_range(0.02..0.1),
                        rng.gen_range(0.02..0.1),
                        rng.gen_range(0.0..std::f64::consts::TAU),
                    );
                    let mut plane = Vec::with_capacity(h * w);
                    for i in 0..h {
                        for j in 0..w {
                            let v = 0.5 + 0.2 * (std::f64::consts::TAU * (fy * i as f64 + fx * j as f64) + ph).sin();
                            plane.push(v as f32);
                        }
                    }
                    texture.push(plane);
                }
            }
            Background::NoiseField => {}
        }
        BackgroundField { kind: spec.background, width: spec.canvas.1, waves, texture }
    }

    fn value(&self, c: usize, t: usize, i: usize, j: usize, rng: &mut ChaCha8Rng) -> f64 {
        match self.kind {
            Background::StaticTexture => self.texture[c][i * self.width + j] as f64,
            Background::DynamicSinusoid => {
                let (fy, fx, ft, ph) = self.waves[c];
                0.5 + 0.25
                    * (std::f64::consts::TAU * (fy * i as f64 + fx * j as f64 + ft * t as f64) + ph).sin()
            }
            Background::NoiseField => rng.gen_range(0.2..0.8),
        }
    }
}

/// Render a clip of length `l`; the last frame is current. The mask marks
/// pixels covered by a moving object in some frames but not all of them
/// (union minus intersection of each object's footprints).
pub fn generate_clip(spec: &SceneSpec, l: usize) -> Result<ClipSample, DataError> {
    if l < 2 {
        return Err(DataError::Spec(format!("clips need L >= 2, got {l}")));
    }
    spec.validate(l)?;
    let (h, w) = spec.canvas;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let bg = BackgroundField::new(spec, &mut rng);

    let dims = Dims5::new(1, 3, l, h, w);
    let mut clip = Tensor5::zeros(dims)?;
    for t in 0..l {
        let drift = spec.brightness_drift * t as f64;
        // object coverage for this frame, painted topmost-last
        for c in 0..3 {
            let frame: &mut [f32] = clip.frame_mut(0, c, t);
            for i in 0..h {
                for j in 0..w {
                    let mut v = bg.value(c, t, i, j, &mut rng);
                    for obj in &spec.objects {
                        if obj.covers(obj.center_at(t), i, j) {
                            v = obj.intensity[c] as f64;
                        }
                    }
                    v += drift;
                    if spec.noise_sigma > 0.0 {
                        v += spec.noise_sigma * gaussian(&mut rng);
                    }
                    frame[i * w + j] = v.clamp(0.0, 1.0) as f32;
                }
            }
        }
    }

    let mut mask = Mask2::zeros(1, h, w);
    for obj in &spec.objects {
        let centers: Vec<(f64, f64)> = (0..l).map(|t| obj.center_at(t)).collect();
        for i in 0..h {
            for j in 0..w {
                let mut any = false;
                let mut all = true;
                for &c in &centers {
                    if obj.covers(c, i, j) {
                        any = true;
                    } else {
                        all = false;
                    }
                }
                if any && !all {
                    mask.set(0, i, j, 1);
                }
            }
        }
    }

    Ok(ClipSample { clip, mask, tag: spec.tag.clone() })
}

/// Duplicate the current frame into every historical slot and relabel as
/// all-background. Idempotent; tags gain a single "-static" suffix.
pub fn synthesize_static(sample: &ClipSample) -> ClipSample {
    let d = sample.clip.dims();
    let mut clip = sample.clip.clone();
    for c in 0..d.c {
        let current = sample.clip.frame(0, c, d.l - 1).to_vec();
        for t in 0..d.l - 1 {
            clip.frame_mut(0, c, t).copy_from_slice(&current);
        }
    }
    let tag = if sample.tag.ends_with("-static") {
        sample.tag.clone()
    } else {
        format!("{}-static", sample.tag)
    };
    ClipSample { clip, mask: Mask2::zeros(1, d.h, d.w), tag }
}

/// Randomized scene for a scenario: 1-3 moving shapes (plus occasionally a
/// stationary one) over the given background.
pub fn random_scene(
    canvas: (usize, usize),
    background: Background,
    tag: &str,
    fast: bool,
    rng: &mut ChaCha8Rng,
) -> SceneSpec {
    let (h, w) = canvas;
    let min_dim = h.min(w) as f64;
    let n_objects = rng.gen_range(1..=3);
    let speed_range = if fast { 1.5..3.0 } else { 0.5..1.5 };
    let mut objects = Vec::new();
    for k in 0..n_objects {
        let size = rng.gen_range(min_dim * 0.12..min_dim * 0.3);
        // keep room for up to 8 frames of travel
        let margin = size / 2.0 + 1.0;
        let speed = rng.gen_range(speed_range.clone());
        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
        let velocity = (speed * angle.sin(), speed * angle.cos());
        let travel = 7.0 * speed;
        let span = |dim: f64, rng: &mut ChaCha8Rng| {
            let (lo, hi) = (margin + travel, dim - margin - travel);
            if lo < hi {
                rng.gen_range(lo..hi)
            } else {
                dim / 2.0
            }
        };
        let pos = (span(h as f64, rng), span(w as f64, rng));
        let stationary = k == 2 && rng.gen_bool(0.5);
        objects.push(ObjectSpec {
            shape: if rng.gen_bool(0.5) { Shape::Rect } else { Shape::Disk },
            size,
            pos,
            velocity: if stationary { (0.0, 0.0) } else { velocity },
            intensity: [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)],
        });
    }
    SceneSpec {
        canvas,
        background,
        objects,
        brightness_drift: rng.gen_range(-0.01..0.01),
        noise_sigma: 0.01,
        tag: tag.to_string(),
        seed: rng.gen(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect_spec() -> SceneSpec {
        SceneSpec {
            canvas: (32, 32),
            background: Background::StaticTexture,
            objects: vec![ObjectSpec {
                shape: Shape::Rect,
                size: 8.0,
                pos: (16.0, 10.0),
                velocity: (0.0, 2.0),
                intensity: [0.9, 0.1, 0.1],
            }],
            brightness_drift: 0.0,
            noise_sigma: 0.0,
            tag: "t".into(),
            seed: 3,
        }
    }

    #[test]
    fn empty_scene_has_zero_mask() {
        let mut spec = rect_spec();
        spec.objects.clear();
        let s = generate_clip(&spec, 4).unwrap();
        assert_eq!(s.fg_ratio(), 0.0);
        assert!(s.mask.data().iter().all(|&v| v == 0));
    }

    #[test]
    fn moving_rect_mask_matches_brute_force_rasterizer() {
        let spec = rect_spec();
        let l = 4;
        let s = generate_clip(&spec, l).unwrap();
        // independent oracle: a pixel changes iff its coverage differs
        // between some pair of frames
        let obj = &spec.objects[0];
        for i in 0..32 {
            for j in 0..32 {
                let cover: Vec<bool> = (0..l).map(|t| obj.covers(obj.center_at(t), i, j)).collect();
                let changed = cover.iter().any(|&c| c != cover[0]);
                assert_eq!(s.mask.at(0, i, j) == 1, changed, "pixel ({i},{j})");
            }
        }
        assert!(s.fg_ratio() > 0.0);
    }

    #[test]
    fn zero_velocity_disk_is_static_and_unmasked() {
        let mut spec = rect_spec();
        spec.objects[0].shape = Shape::Disk;
        spec.objects[0].velocity = (0.0, 0.0);
        let s = generate_clip(&spec, 4).unwrap();
        assert_eq!(s.fg_ratio(), 0.0);
        let d = s.clip.dims();
        for c in 0..3 {
            let base = s.clip.frame(0, c, 0);
            for t in 1..d.l {
                assert_eq!(s.clip.frame(0, c, t), base, "channel {c} frame {t}");
            }
        }
    }

    #[test]
    fn escaping_object_is_rejected() {
        let mut spec = rect_spec();
        spec.objects[0].velocity = (0.0, 8.0);
        assert!(matches!(generate_clip(&spec, 4), Err(DataError::Spec(_))));
    }

    #[test]
    fn clip_values_stay_in_unit_range() {
        let mut spec = rect_spec();
        spec.background = Background::NoiseField;
        spec.noise_sigma = 0.3;
        spec.brightness_drift = 0.1;
        let s = generate_clip(&spec, 6).unwrap();
        assert!(s.clip.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn generation_is_deterministic_in_seed() {
        let spec = rect_spec();
        let a = generate_clip(&spec, 4).unwrap();
        let b = generate_clip(&spec, 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn static_synthesis_duplicates_current_frame() {
        let s = generate_clip(&rect_spec(), 4).unwrap();
        let st = synthesize_static(&s);
        let d = st.clip.dims();
        for c in 0..3 {
            let cur = st.clip.frame(0, c, d.l - 1);
            assert_eq!(cur, s.clip.frame(0, c, d.l - 1));
            for t in 0..d.l - 1 {
                assert_eq!(st.clip.frame(0, c, t), cur);
            }
        }
        assert_eq!(st.fg_ratio(), 0.0);
        assert_eq!(st.tag, "t-static");
        assert!(st.is_static());
        // idempotence
        assert_eq!(synthesize_static(&st), st);
    }

    #[test]
    fn random_scene_generates_valid_clips() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..30 {
            let spec = random_scene((64, 64), Background::DynamicSinusoid, "dyn", trial % 2 == 0, &mut rng);
            for l in [2usize, 4, 8] {
                generate_clip(&spec, l).unwrap_or_else(|e| panic!("trial {trial} L={l}: {e}"));
            }
        }
    }
}
