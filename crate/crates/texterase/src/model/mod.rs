//! The progressive eraser: shared-weight stages that localize text,
//! reconstruct background, and composite only inside the predicted region.

mod net;
mod params;

pub use params::{Bound, ParamStore};
pub(crate) use net::{build_params, compose_region, stage_forward};

use ndarray::{Array4, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::image_tensor::{image_from_batch, ImageTensor, MaskKind, MaskMap};

/// Architecture and sizing knobs. The defaults describe the desk-scale
/// model used throughout the test suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Feature width of the backbone (must be divisible by 4).
    pub base_channels: usize,
    /// Residual blocks at quarter resolution.
    pub num_residual_blocks: usize,
    /// Pyramid pooling grid sizes, strictly increasing.
    pub psp_bin_sizes: Vec<usize>,
    /// Number of weight-shared erasing stages T.
    pub num_stages: usize,
    /// Training input size `(H, W)`, both divisible by 8.
    pub input_size: (usize, usize),
    /// Downscale divisors of the two intermediate reconstruction heads.
    pub mrm_scales: (usize, usize),
    /// Weight initialization seed.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            base_channels: 32,
            num_residual_blocks: 5,
            psp_bin_sizes: vec![1, 2, 3, 6],
            num_stages: 3,
            input_size: (64, 64),
            mrm_scales: (2, 4),
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.base_channels < 4 || self.base_channels % 4 != 0 {
            return fail(format!(
                "base_channels must be a positive multiple of 4, got {}",
                self.base_channels
            ));
        }
        if self.num_residual_blocks == 0 {
            return fail("num_residual_blocks must be at least 1".into());
        }
        if self.num_stages == 0 {
            return fail("num_stages must be at least 1".into());
        }
        let (h, w) = self.input_size;
        self.validate_input_size(h, w)?;
        if self.psp_bin_sizes.is_empty() {
            return fail("psp_bin_sizes must be nonempty".into());
        }
        if !self.psp_bin_sizes.windows(2).all(|p| p[0] < p[1]) {
            return fail(format!(
                "psp_bin_sizes must be strictly increasing, got {:?}",
                self.psp_bin_sizes
            ));
        }
        let (s1, s2) = self.mrm_scales;
        if s1 < 2 || s2 <= s1 {
            return fail(format!(
                "mrm_scales must satisfy 2 <= first < second, got ({s1}, {s2})"
            ));
        }
        Ok(())
    }

    /// Check that an input of `h x w` can flow through the network.
    pub fn validate_input_size(&self, h: usize, w: usize) -> Result<()> {
        let fail = |msg: String| Err(Error::Dimension(msg));
        if h == 0 || w == 0 || h % 8 != 0 || w % 8 != 0 {
            return fail(format!("input size must be divisible by 8, got {h}x{w}"));
        }
        let quarter = h.min(w) / 4;
        if let Some(&bin) = self.psp_bin_sizes.iter().find(|&&b| b > quarter) {
            return fail(format!(
                "psp bin {bin} exceeds quarter-resolution extent {quarter} for {h}x{w} input"
            ));
        }
        let (s1, s2) = self.mrm_scales;
        if h % s1 != 0 || w % s1 != 0 || h % s2 != 0 || w % s2 != 0 {
            return fail(format!(
                "input {h}x{w} not divisible by mrm scales ({s1}, {s2})"
            ));
        }
        Ok(())
    }
}

/// Everything one stage produces for one image.
#[derive(Clone, Debug)]
pub struct StageOutput {
    /// 1-based stage number.
    pub stage_index: usize,
    /// Predicted soft text mask at input resolution.
    pub mask: MaskMap,
    /// Raw background reconstruction before compositing.
    pub raw_reconstruction: ImageTensor,
    /// Region-composited output fed to the next stage.
    pub composited: ImageTensor,
    /// Half-scale composited reconstruction (training mode only).
    pub p1: Option<ImageTensor>,
    /// Quarter-scale composited reconstruction (training mode only).
    pub p2: Option<ImageTensor>,
}

/// Replaces the predicted mask before compositing.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MaskPostprocess {
    /// Use the sigmoid output as-is.
    Identity,
    /// Values strictly above the threshold become 1, the rest 0.
    Binarize { threshold: f32 },
    /// Force every pixel to a fixed value.
    Constant(f32),
}

/// Inference-time switches for [`TextEraser::erase`].
#[derive(Clone, Copy, Debug)]
pub struct EraseOptions {
    /// Also produce the multi-scale training heads P1/P2.
    pub training: bool,
    pub mask_postprocess: MaskPostprocess,
    /// When false, skip compositing and emit the raw reconstruction
    /// (ablation switch).
    pub region_compose: bool,
}

impl Default for EraseOptions {
    fn default() -> Self {
        EraseOptions {
            training: false,
            mask_postprocess: MaskPostprocess::Identity,
            region_compose: true,
        }
    }
}

/// Total trainable scalars of a config; independent of `num_stages`.
pub fn parameter_count(config: &ModelConfig) -> Result<usize> {
    config.validate()?;
    Ok(build_params(config).scalar_count())
}

/// `mask * reconstruction + (1 - mask) * original` on plain images.
pub fn region_compose(
    mask: &MaskMap,
    reconstruction: &ImageTensor,
    original: &ImageTensor,
) -> Result<ImageTensor> {
    let (h, w) = (original.height(), original.width());
    if (reconstruction.height(), reconstruction.width()) != (h, w)
        || (mask.height(), mask.width()) != (h, w)
    {
        return Err(Error::Dimension(format!(
            "compose shapes differ: original {h}x{w}, reconstruction {}x{}, mask {}x{}",
            reconstruction.height(),
            reconstruction.width(),
            mask.height(),
            mask.width()
        )));
    }
    let m = mask.data();
    let r = reconstruction.data();
    let o = original.data();
    Ok(ImageTensor::from_fn(h, w, |c, y, x| {
        m[[y, x]] * r[[c, y, x]] + (1.0 - m[[y, x]]) * o[[c, y, x]]
    }))
}

/// A trained or freshly initialized erasing model.
#[derive(Clone, Debug)]
pub struct TextEraser {
    config: ModelConfig,
    params: ParamStore,
}

impl TextEraser {
    /// Build with seed-deterministic initial weights.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let params = build_params(&config);
        Ok(TextEraser { config, params })
    }

    /// Reassemble from checkpoint parts. The store must contain exactly the
    /// parameters the config defines.
    pub fn from_parts(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let expect = build_params(&config);
        if expect.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "parameter count mismatch: config defines {}, store has {}",
                expect.len(),
                params.len()
            )));
        }
        for ((en, ev), (gn, gv)) in expect.iter().zip(params.iter()) {
            if en != gn || ev.shape() != gv.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter mismatch at {en}: expected {:?}, store has {gn} {:?}",
                    ev.shape(),
                    gv.shape()
                )));
            }
        }
        Ok(TextEraser { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// Run all stages on one image and collect per-stage artifacts. The
    /// final erasure result is the last stage's `composited`.
    pub fn erase(&self, original: &ImageTensor, opts: &EraseOptions) -> Result<Vec<StageOutput>> {
        if !original.data().iter().all(|v| v.is_finite()) {
            return Err(Error::Data("input image contains non-finite values".into()));
        }
        let (h, w) = (original.height(), original.width());
        self.config.validate_input_size(h, w)?;

        let mut g = Graph::<f32>::inference();
        let bound = self.params.bind(&mut g);
        let mut batch = Array4::<f32>::zeros((1, 3, h, w));
        batch.index_axis_mut(Axis(0), 0).assign(original.data());
        let orig = g.constant(batch.into_dyn());
        let mut prev = orig;
        let mut outputs = Vec::with_capacity(self.config.num_stages);

        for t in 1..=self.config.num_stages {
            let x6 = g.concat_channels(orig, prev);
            let heads = stage_forward(&mut g, &bound, &self.config, x6, opts.training);
            let mask = match opts.mask_postprocess {
                MaskPostprocess::Identity => heads.mask,
                MaskPostprocess::Binarize { threshold } => {
                    let v = g
                        .value(heads.mask)
                        .mapv(|m| if m > threshold { 1.0 } else { 0.0 });
                    g.constant(v)
                }
                MaskPostprocess::Constant(value) => {
                    let shape = g.value(heads.mask).raw_dim();
                    g.constant(ndarray::ArrayD::from_elem(shape, value))
                }
            };
            let composited = if opts.region_compose {
                compose_region(&mut g, mask, heads.raw, orig)
            } else {
                heads.raw
            };
            let (p1, p2) = if opts.training {
                let scale_out = |g: &mut Graph<f32>, raw: Option<crate::graph::Var>, div: usize| {
                    raw.map(|raw| {
                        let (th, tw) = (h / div, w / div);
                        let m = g.bilinear_resize(mask, th, tw);
                        let o = g.bilinear_resize(orig, th, tw);
                        if opts.region_compose {
                            compose_region(g, m, raw, o)
                        } else {
                            raw
                        }
                    })
                };
                let p1 = scale_out(&mut g, heads.p1, self.config.mrm_scales.0);
                let p2 = scale_out(&mut g, heads.p2, self.config.mrm_scales.1);
                (p1, p2)
            } else {
                (None, None)
            };

            let mask_plane = g
                .value(mask)
                .index_axis(Axis(0), 0)
                .index_axis(Axis(0), 0)
                .to_owned()
                .into_dimensionality::<ndarray::Ix2>()
                .map_err(|e| Error::Dimension(e.to_string()))?;
            let kind = match opts.mask_postprocess {
                MaskPostprocess::Binarize { .. } => MaskKind::Box,
                _ => MaskKind::Soft,
            };
            outputs.push(StageOutput {
                stage_index: t,
                mask: MaskMap::with_kind(mask_plane, kind)?,
                raw_reconstruction: image_from_batch(&g.value(heads.raw).view(), 0)?,
                composited: image_from_batch(&g.value(composited).view(), 0)?,
                p1: p1.map(|v| image_from_batch(&g.value(v).view(), 0)).transpose()?,
                p2: p2.map(|v| image_from_batch(&g.value(v).view(), 0)).transpose()?,
            });
            prev = composited;
        }
        Ok(outputs)
    }
}
