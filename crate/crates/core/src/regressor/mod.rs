//! Feature-fusion gaze regressor: per-feature encoders, a fusion MLP that
//! outputs screen pixels, Euclidean loss, exact backpropagation and Adam.

pub mod layers;
mod model;
mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{FloatPlane, ImageBuffer};
use crate::reflection::{HEATMAP_H, HEATMAP_W, THUMB_H, THUMB_W};

pub use model::{
    backward, encode, forward, gradient_check, loss, predict, Gradients, ModelParams, TensorCheck,
};
pub use train::{adam_step, train, AdamState, History, TrainConfig, Trainer};

pub const CROP_W: usize = 64;
pub const CROP_H: usize = 32;
pub const BOUNDS_EMBED: usize = 16;
pub const PLANE_EMBED: usize = 256;
pub const VECTOR_LEN: usize = 4;

#[derive(Debug, Error)]
pub enum RegressorError {
    #[error("feature `{0}` required by the variant is missing")]
    MissingFeature(&'static str),
    #[error("{name} plane is {got:?}, expected {expected:?}")]
    PlaneDims {
        name: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("{0} bundles but {1} targets")]
    LengthMismatch(usize, usize),
    #[error("unknown variant `{0}`")]
    UnknownVariant(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed model file: {msg}")]
    Format { path: String, msg: String },
}

/// Which optional features feed the fusion head; eye bounds are always on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct VariantSpec {
    pub use_crops: bool,
    pub use_thumbnail: bool,
    pub use_heatmap: bool,
    pub use_vector: bool,
}

impl VariantSpec {
    pub const fn new(use_crops: bool, use_thumbnail: bool, use_heatmap: bool, use_vector: bool) -> Self {
        Self {
            use_crops,
            use_thumbnail,
            use_heatmap,
            use_vector,
        }
    }

    pub const BOUNDS: Self = Self::new(false, false, false, false);

    /// The eight evaluated encodings.
    pub const ALL: [Self; 8] = [
        Self::new(false, false, false, false),
        Self::new(true, false, false, false),
        Self::new(false, true, false, false),
        Self::new(false, false, true, false),
        Self::new(false, false, false, true),
        Self::new(true, true, false, false),
        Self::new(true, false, false, true),
        Self::new(true, false, true, true),
    ];

    pub fn id(&self) -> String {
        let mut s = String::from("eb");
        for (on, tag) in [
            (self.use_crops, "ec"),
            (self.use_thumbnail, "th"),
            (self.use_heatmap, "hm"),
            (self.use_vector, "rv"),
        ] {
            if on {
                s.push('+');
                s.push_str(tag);
            }
        }
        s
    }

    pub fn embedding_len(&self) -> usize {
        BOUNDS_EMBED
            + if self.use_crops { 2 * PLANE_EMBED } else { 0 }
            + if self.use_thumbnail { PLANE_EMBED } else { 0 }
            + if self.use_heatmap { 2 * PLANE_EMBED } else { 0 }
            + if self.use_vector { VECTOR_LEN } else { 0 }
    }
}

impl fmt::Display for VariantSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

impl FromStr for VariantSpec {
    type Err = RegressorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || RegressorError::UnknownVariant(s.to_string());
        let mut parts = s.split('+');
        if parts.next() != Some("eb") {
            return Err(bad());
        }
        let mut v = Self::BOUNDS;
        for p in parts {
            let flag = match p {
                "ec" => &mut v.use_crops,
                "th" => &mut v.use_thumbnail,
                "hm" => &mut v.use_heatmap,
                "rv" => &mut v.use_vector,
                _ => return Err(bad()),
            };
            if *flag {
                return Err(bad());
            }
            *flag = true;
        }
        Ok(v)
    }
}

impl TryFrom<String> for VariantSpec {
    type Error = RegressorError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<VariantSpec> for String {
    fn from(v: VariantSpec) -> String {
        v.id()
    }
}

/// Model inputs for one frame. Eye-indexed pairs are `[left, right]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBundle {
    /// Outer eye corners, frame-normalized.
    pub eye_bounds: [f32; 4],
    /// 64x32 grayscale eye patches.
    pub eye_crops: Option<[ImageBuffer; 2]>,
    /// 50x101 screen thumbnail, gray levels.
    pub thumbnail: Option<ImageBuffer>,
    /// 40x55 reflection heatmaps.
    pub heatmaps: Option<[FloatPlane; 2]>,
    /// `(vx, vy)` per eye.
    pub reflection_vectors: [f32; 4],
    /// `true` where the eye's vector is masked out.
    pub vector_mask: [bool; 2],
}

impl FeatureBundle {
    pub fn new(eye_bounds: [f32; 4]) -> Self {
        Self {
            eye_bounds,
            eye_crops: None,
            thumbnail: None,
            heatmaps: None,
            reflection_vectors: [0.0; 4],
            vector_mask: [true; 2],
        }
    }

    /// Sets one eye's vector; `None` masks it and stores zeros.
    pub fn set_vector(&mut self, eye: usize, v: Option<(f64, f64)>) {
        let (vx, vy) = v.unwrap_or((0.0, 0.0));
        self.reflection_vectors[2 * eye] = vx as f32;
        self.reflection_vectors[2 * eye + 1] = vy as f32;
        self.vector_mask[eye] = v.is_none();
    }

    pub fn both_vectors_present(&self) -> bool {
        !self.vector_mask[0] && !self.vector_mask[1]
    }

    /// Checks plane dimensions and that `variant`'s features are present.
    pub fn check(&self, variant: &VariantSpec) -> Result<(), RegressorError> {
        fn dims(
            name: &'static str,
            got: (usize, usize),
            expected: (usize, usize),
        ) -> Result<(), RegressorError> {
            if got != expected {
                return Err(RegressorError::PlaneDims { name, expected, got });
            }
            Ok(())
        }
        if let Some(c) = &self.eye_crops {
            for p in c {
                if p.channels() != 1 {
                    return Err(RegressorError::PlaneDims {
                        name: "eye crop",
                        expected: (CROP_W, CROP_H),
                        got: (p.width() * p.channels(), p.height()),
                    });
                }
                dims("eye crop", (p.width(), p.height()), (CROP_W, CROP_H))?;
            }
        } else if variant.use_crops {
            return Err(RegressorError::MissingFeature("eye_crops"));
        }
        if let Some(t) = &self.thumbnail {
            dims("thumbnail", (t.width() * t.channels(), t.height()), (THUMB_W, THUMB_H))?;
        } else if variant.use_thumbnail {
            return Err(RegressorError::MissingFeature("thumbnail"));
        }
        if let Some(h) = &self.heatmaps {
            for p in h {
                dims("heatmap", (p.width(), p.height()), (HEATMAP_W, HEATMAP_H))?;
            }
        } else if variant.use_heatmap {
            return Err(RegressorError::MissingFeature("heatmaps"));
        }
        Ok(())
    }
}
