//! Synthetic clip generation, sampling/augmentation protocol, and clip file
//! formats. Stands in for a real change-detection corpus at desk scale.

mod io;
mod sampler;
mod scene;

pub use io::{clip_bytes, load_clip, read_clip, read_manifest, save_clip, write_manifest, CLIP_MAGIC};
pub use sampler::{
    augment, class_balance_filter, hflip_sample, multi_scale_crop, scenario_balanced_iter,
    temporal_jitter_pick, vflip_sample,
    AugmentConfig, CropSpec, ScenarioIter,
};
pub use scene::{
    generate_clip, random_scene, synthesize_static, Background, ObjectSpec, SceneSpec, Shape,
};

use crate::tensor::{Mask2, Tensor5};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("scene spec error: {0}")]
    Spec(String),
    #[error("sampling error: {0}")]
    Sampling(String),
    #[error("clip file parse error at byte offset {offset}: {what}")]
    Parse { offset: usize, what: String },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
}

/// One training/eval sample: a clip whose last frame is current, plus the
/// change mask for that frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipSample {
    /// (1, 3, L, H, W), values in [0, 1].
    pub clip: Tensor5<f32>,
    /// Ground-truth change mask for the current frame.
    pub mask: Mask2,
    pub tag: String,
}

impl ClipSample {
    pub fn fg_ratio(&self) -> f64 {
        self.mask.fg_ratio()
    }

    /// Synthesized-static samples are exempt from class-balance filtering.
    pub fn is_static(&self) -> bool {
        self.tag.ends_with("-static")
    }
}
