//! Deterministic synthetic paired-data generation.
//!
//! Every sample is a triple: a clean background (`gt`), the same background
//! with text painted inside axis-aligned boxes (`original`), and the binary
//! union of those boxes (`mask_gt`). Text exists only inside boxes, so the
//! two images are bit-identical wherever the mask is zero.

mod font;
mod render;

pub use font::{glyph_bitmap, text_bitmap, GLYPH_HEIGHT, GLYPH_WIDTH};
pub use render::{
    augment, augment_with, build_dataset, load_dataset, render_sample, render_sample_detailed,
    AugmentConfig, BoxCoords, DatasetConfig, DatasetManifest, ManifestEntry,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image_tensor::{ImageTensor, MaskMap};

/// Where sample backgrounds come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BackgroundSource {
    /// Smooth two-corner color gradient.
    Gradient,
    /// Low-frequency value noise over a base color.
    Noise,
    /// Random image drawn from a directory of PNGs, resized to the canvas.
    ImageDir { path: std::path::PathBuf },
}

/// One piece of text to paint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextInstance {
    pub text: String,
    /// Inclusive glyph pixel-scale range sampled per instance.
    pub scale_range: (u32, u32),
    /// Fill color in `[0, 1]` RGB.
    pub color: [f32; 3],
    /// Maximum absolute rotation in degrees.
    pub max_rotation_deg: f32,
}

/// Full description of one synthetic sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSampleSpec {
    pub canvas_size: (usize, usize),
    pub background: BackgroundSource,
    pub text_instances: Vec<TextInstance>,
    pub seed: u64,
}

impl SyntheticSampleSpec {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.canvas_size;
        if h < 8 || w < 8 {
            return Err(Error::Config(format!(
                "canvas must be at least 8x8, got {h}x{w}"
            )));
        }
        for t in &self.text_instances {
            if t.text.is_empty() {
                return Err(Error::Config("text instance is empty".into()));
            }
            if t.scale_range.0 == 0 || t.scale_range.0 > t.scale_range.1 {
                return Err(Error::Config(format!(
                    "bad glyph scale range {:?}",
                    t.scale_range
                )));
            }
            if !(0.0..=90.0).contains(&t.max_rotation_deg) {
                return Err(Error::Config(format!(
                    "rotation limit {} out of [0, 90]",
                    t.max_rotation_deg
                )));
            }
            if t.color.iter().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(Error::Config(format!("color {:?} out of [0,1]", t.color)));
            }
        }
        Ok(())
    }
}

/// A rendered training triple.
#[derive(Clone, Debug)]
pub struct PairedSample {
    pub original: ImageTensor,
    pub gt: ImageTensor,
    pub mask_gt: MaskMap,
    pub id: String,
}

impl PairedSample {
    /// Original and gt must agree exactly outside the mask.
    pub fn check_consistency(&self) -> Result<()> {
        let (h, w) = (self.gt.height(), self.gt.width());
        if (self.original.height(), self.original.width()) != (h, w)
            || (self.mask_gt.height(), self.mask_gt.width()) != (h, w)
        {
            return Err(Error::Data(format!(
                "sample {}: triple sizes disagree",
                self.id
            )));
        }
        for y in 0..h {
            for x in 0..w {
                if self.mask_gt.data()[[y, x]] == 0.0
                    && (0..3).any(|c| {
                        self.original.data()[[c, y, x]] != self.gt.data()[[c, y, x]]
                    })
                {
                    return Err(Error::Data(format!(
                        "sample {}: images differ outside the mask at ({y}, {x})",
                        self.id
                    )));
                }
            }
        }
        Ok(())
    }
}
