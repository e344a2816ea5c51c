//! Training-time sampling protocol: temporal jitter, multi-scale cropping,
//! class balancing, scenario-balanced draws, and augmentation.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{ClipSample, DataError};
use crate::tensor::{bilinear_resize, Dims5, Mask2, Tensor5};

/// Pick L frame indices ending at `current`, spaced by a uniformly drawn
/// interval. The interval is clamped when history is too short.
pub fn temporal_jitter_pick(
    frame_count: usize,
    current: usize,
    l: usize,
    interval_range: (usize, usize),
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>, DataError> {
    let (min_k, max_k) = interval_range;
    if min_k < 1 || max_k < min_k {
        return Err(DataError::Sampling(format!("bad interval range ({min_k}, {max_k})")));
    }
    if current >= frame_count {
        return Err(DataError::Sampling(format!(
            "current index {current} out of range for {frame_count} frames"
        )));
    }
    if l < 2 || current < l - 1 {
        return Err(DataError::Sampling(format!(
            "need {l} reachable frames before index {current} even at interval 1"
        )));
    }
    let k = rng.gen_range(min_k..=max_k).min(current / (l - 1));
    Ok((0..l).rev().map(|back| current - back * k).collect())
}

#[derive(Debug, Clone)]
pub struct CropSpec {
    pub scales: Vec<f64>,
    /// (height, width) of each crop.
    pub crop: (usize, usize),
    /// (row, col) stride between crop origins.
    pub stride: (usize, usize),
}

fn resize_mask(mask: &Mask2, new_h: usize, new_w: usize) -> Mask2 {
    if new_h == mask.h && new_w == mask.w {
        return mask.clone();
    }
    // nearest-neighbor keeps labels binary
    let mut out = Mask2::zeros(1, new_h, new_w);
    for i in 0..new_h {
        let si = (((i as f64 + 0.5) * mask.h as f64 / new_h as f64) as usize).min(mask.h - 1);
        for j in 0..new_w {
            let sj = (((j as f64 + 0.5) * mask.w as f64 / new_w as f64) as usize).min(mask.w - 1);
            out.set(0, i, j, mask.at(0, si, sj));
        }
    }
    out
}

fn crop_sample(sample: &ClipSample, top: usize, left: usize, ch: usize, cw: usize) -> ClipSample {
    let d = sample.clip.dims();
    let mut clip = Tensor5::zeros(Dims5::new(1, d.c, d.l, ch, cw)).unwrap();
    for c in 0..d.c {
        for t in 0..d.l {
            let src = sample.clip.frame(0, c, t);
            let dst: &mut [f32] = clip.frame_mut(0, c, t);
            for i in 0..ch {
                let row = &src[(top + i) * d.w + left..(top + i) * d.w + left + cw];
                dst[i * cw..(i + 1) * cw].copy_from_slice(row);
            }
        }
    }
    let mut mask = Mask2::zeros(1, ch, cw);
    for i in 0..ch {
        for j in 0..cw {
            mask.set(0, i, j, sample.mask.at(0, top + i, left + j));
        }
    }
    ClipSample { clip, mask, tag: sample.tag.clone() }
}

/// Resize to each scale, then tile crops at the given stride without
/// padding; partial tiles are dropped. Masks follow the same geometry.
pub fn multi_scale_crop(sample: &ClipSample, spec: &CropSpec) -> Result<Vec<ClipSample>, DataError> {
    let d = sample.clip.dims();
    let (ch, cw) = spec.crop;
    let mut out = Vec::new();
    for &scale in &spec.scales {
        if !(scale > 0.0) {
            return Err(DataError::Sampling(format!("scale {scale} must be positive")));
        }
        let sh = (d.h as f64 * scale).round() as usize;
        let sw = (d.w as f64 * scale).round() as usize;
        if ch > sh || cw > sw {
            return Err(DataError::Sampling(format!(
                "crop {ch}x{cw} exceeds scaled dims {sh}x{sw} at scale {scale}"
            )));
        }
        let scaled_clip = bilinear_resize(&sample.clip, sh, sw)?;
        let scaled_mask = resize_mask(&sample.mask, sh, sw);
        let scaled = ClipSample { clip: scaled_clip, mask: scaled_mask, tag: sample.tag.clone() };
        let mut top = 0;
        while top + ch <= sh {
            let mut left = 0;
            while left + cw <= sw {
                out.push(crop_sample(&scaled, top, left, ch, cw));
                left += spec.stride.1;
            }
            top += spec.stride.0;
        }
    }
    Ok(out)
}

/// Drop samples whose foreground occupation falls outside [lo, hi].
/// Synthesized-static samples pass unconditionally.
pub fn class_balance_filter(samples: Vec<ClipSample>, lo: f64, hi: f64) -> Vec<ClipSample> {
    assert!((0.0..1.0).contains(&lo) && lo < hi && hi <= 1.0, "bad bounds ({lo}, {hi})");
    samples
        .into_iter()
        .filter(|s| s.is_static() || (lo..=hi).contains(&s.fg_ratio()))
        .collect()
}

/// Infinite stream drawing a scenario uniformly, then a sample uniformly
/// within it (with replacement).
pub struct ScenarioIter {
    groups: Vec<(String, Vec<ClipSample>)>,
    rng: ChaCha8Rng,
}

impl ScenarioIter {
    pub fn next_sample(&mut self) -> &ClipSample {
        let g = self.rng.gen_range(0..self.groups.len());
        let i = self.rng.gen_range(0..self.groups[g].1.len());
        &self.groups[g].1[i]
    }
}

pub fn scenario_balanced_iter(samples: Vec<ClipSample>, rng: ChaCha8Rng) -> Result<ScenarioIter, DataError> {
    let mut groups: Vec<(String, Vec<ClipSample>)> = Vec::new();
    for s in samples {
        match groups.iter_mut().find(|(tag, _)| *tag == s.tag) {
            Some((_, v)) => v.push(s),
            None => groups.push((s.tag.clone(), vec![s])),
        }
    }
    if groups.is_empty() {
        return Err(DataError::Sampling("no samples to iterate".into()));
    }
    Ok(ScenarioIter { groups, rng })
}

#[derive(Debug, Clone)]
pub struct AugmentConfig {
    pub hflip: bool,
    pub vflip: bool,
    /// Multiplicative contrast factor range around 1.
    pub contrast: (f64, f64),
    /// Additive brightness offset range around 0.
    pub brightness: (f64, f64),
    pub noise_sigma: f64,
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        AugmentConfig {
            hflip: false,
            vflip: false,
            contrast: (1.0, 1.0),
            brightness: (0.0, 0.0),
            noise_sigma: 0.0,
        }
    }

    pub fn default_train() -> Self {
        AugmentConfig {
            hflip: true,
            vflip: true,
            contrast: (0.9, 1.1),
            brightness: (-0.05, 0.05),
            noise_sigma: 0.01,
        }
    }
}

/// Mirror every frame and the mask along columns.
pub fn hflip_sample(sample: &ClipSample) -> ClipSample {
    flip_sample(sample, false)
}

/// Mirror every frame and the mask along rows.
pub fn vflip_sample(sample: &ClipSample) -> ClipSample {
    flip_sample(sample, true)
}

fn flip_sample(sample: &ClipSample, vertical: bool) -> ClipSample {
    let d = sample.clip.dims();
    let mut clip = sample.clip.clone();
    for c in 0..d.c {
        for t in 0..d.l {
            let src = sample.clip.frame(0, c, t);
            let dst: &mut [f32] = clip.frame_mut(0, c, t);
            for i in 0..d.h {
                for j in 0..d.w {
                    let (si, sj) = if vertical { (d.h - 1 - i, j) } else { (i, d.w - 1 - j) };
                    dst[i * d.w + j] = src[si * d.w + sj];
                }
            }
        }
    }
    let mut mask = Mask2::zeros(1, d.h, d.w);
    for i in 0..d.h {
        for j in 0..d.w {
            let (si, sj) = if vertical { (d.h - 1 - i, j) } else { (i, d.w - 1 - j) };
            mask.set(0, i, j, sample.mask.at(0, si, sj));
        }
    }
    ClipSample { clip, mask, tag: sample.tag.clone() }
}

/// Random flips (applied to frames and mask together) plus photometric
/// jitter and noise on frames only; clip stays in [0, 1].
pub fn augment(sample: &ClipSample, cfg: &AugmentConfig, rng: &mut ChaCha8Rng) -> ClipSample {
    let mut s = sample.clone();
    if cfg.hflip && rng.gen_bool(0.5) {
        s = hflip_sample(&s);
    }
    if cfg.vflip && rng.gen_bool(0.5) {
        s = vflip_sample(&s);
    }
    let contrast = if cfg.contrast.0 < cfg.contrast.1 {
        rng.gen_range(cfg.contrast.0..cfg.contrast.1)
    } else {
        cfg.contrast.0
    };
    let brightness = if cfg.brightness.0 < cfg.brightness.1 {
        rng.gen_range(cfg.brightness.0..cfg.brightness.1)
    } else {
        cfg.brightness.0
    };
    let photometric = contrast != 1.0 || brightness != 0.0 || cfg.noise_sigma > 0.0;
    if photometric {
        let data = s.clip.data_mut();
        for v in data.iter_mut() {
            let mut x = *v as f64 * contrast + brightness;
            if cfg.noise_sigma > 0.0 {
                let u1: f64 = 1.0 - rng.gen::<f64>();
                let u2: f64 = rng.gen();
                x += cfg.noise_sigma * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
            }
            *v = x.clamp(0.0, 1.0) as f32;
        }
    }
    s
}
