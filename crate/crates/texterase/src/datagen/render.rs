//! Sample rendering, dataset writing, and training-time augmentation.
//!
//! Determinism contract: every random draw comes from a ChaCha stream
//! seeded by the sample spec, in a fixed documented order (background
//! first, then per instance: scale, rotation, placement tries). The same
//! spec therefore always yields a bit-identical triple.

use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image_tensor::{ImageTensor, MaskKind, MaskMap};

use super::font::text_bitmap;
use super::{BackgroundSource, PairedSample, SyntheticSampleSpec, TextInstance};

/// Maximum placement attempts before a sample is declared too crowded.
const PLACEMENT_TRIES: usize = 200;

/// `(y0, x0, y1, x1)` with exclusive ends.
pub type BoxCoords = [usize; 4];

fn boxes_overlap(a: &BoxCoords, b: &BoxCoords) -> bool {
    a[0] < b[2] && b[0] < a[2] && a[1] < b[3] && b[1] < a[3]
}

/// Smooth diagonal blend between two random corner colors.
fn gradient_background(h: usize, w: usize, rng: &mut ChaCha8Rng) -> ImageTensor {
    let c0: [f32; 3] = [rng.gen(), rng.gen(), rng.gen()];
    let c1: [f32; 3] = [rng.gen(), rng.gen(), rng.gen()];
    ImageTensor::from_fn(h, w, |c, y, x| {
        let ty = y as f32 / (h - 1).max(1) as f32;
        let tx = x as f32 / (w - 1).max(1) as f32;
        let t = 0.5 * (ty + tx);
        c0[c] * (1.0 - t) + c1[c] * t
    })
}

/// Base color plus bilinearly interpolated low-frequency value noise.
fn noise_background(h: usize, w: usize, rng: &mut ChaCha8Rng) -> ImageTensor {
    const CELL: usize = 8;
    const AMPLITUDE: f32 = 0.15;
    let base: [f32; 3] = [rng.gen(), rng.gen(), rng.gen()];
    let gh = h.div_ceil(CELL) + 1;
    let gw = w.div_ceil(CELL) + 1;
    let grid = Array3::from_shape_simple_fn((3, gh, gw), || rng.gen_range(-1.0f32..1.0));
    ImageTensor::from_fn(h, w, |c, y, x| {
        let fy = y as f32 / CELL as f32;
        let fx = x as f32 / CELL as f32;
        let (y0, x0) = (fy as usize, fx as usize);
        let (wy, wx) = (fy - y0 as f32, fx - x0 as f32);
        let top = grid[[c, y0, x0]] * (1.0 - wx) + grid[[c, y0, x0 + 1]] * wx;
        let bot = grid[[c, y0 + 1, x0]] * (1.0 - wx) + grid[[c, y0 + 1, x0 + 1]] * wx;
        let v = base[c] + AMPLITUDE * (top * (1.0 - wy) + bot * wy);
        v.clamp(0.0, 1.0)
    })
}

/// Pick a PNG from the directory (sorted order) and resize it to the canvas.
fn directory_background(
    h: usize,
    w: usize,
    dir: &Path,
    rng: &mut ChaCha8Rng,
) -> Result<ImageTensor> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(Error::io(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Data(format!(
            "no PNG backgrounds in {}",
            dir.display()
        )));
    }
    let pick = rng.gen_range(0..files.len());
    Ok(ImageTensor::load_png(&files[pick])?.resize_bilinear(h, w))
}

fn background(spec: &SyntheticSampleSpec, rng: &mut ChaCha8Rng) -> Result<ImageTensor> {
    let (h, w) = spec.canvas_size;
    match &spec.background {
        BackgroundSource::Gradient => Ok(gradient_background(h, w, rng)),
        BackgroundSource::Noise => Ok(noise_background(h, w, rng)),
        BackgroundSource::ImageDir { path } => directory_background(h, w, path, rng),
    }
}

/// Nearest-neighbor integer upscale of a binary bitmap.
fn scale_bitmap(src: &Array2<u8>, s: usize) -> Array2<u8> {
    let (h, w) = src.dim();
    Array2::from_shape_fn((h * s, w * s), |(y, x)| src[[y / s, x / s]])
}

/// Rotate a binary bitmap about its center with nearest sampling, then
/// crop to the tight bounding box of the set pixels.
fn rotate_bitmap(src: &Array2<u8>, degrees: f32) -> Array2<u8> {
    if degrees == 0.0 {
        return src.clone();
    }
    let (h, w) = src.dim();
    let rad = degrees.to_radians();
    let (sin, cos) = rad.sin_cos();
    let oh = (h as f32 * cos.abs() + w as f32 * sin.abs()).ceil() as usize;
    let ow = (w as f32 * cos.abs() + h as f32 * sin.abs()).ceil() as usize;
    let (cy, cx) = ((h as f32 - 1.0) / 2.0, (w as f32 - 1.0) / 2.0);
    let (ocy, ocx) = ((oh as f32 - 1.0) / 2.0, (ow as f32 - 1.0) / 2.0);
    let rotated = Array2::from_shape_fn((oh, ow), |(y, x)| {
        let dy = y as f32 - ocy;
        let dx = x as f32 - ocx;
        let sy = (cos * dy - sin * dx + cy).round();
        let sx = (sin * dy + cos * dx + cx).round();
        if sy >= 0.0 && sx >= 0.0 && (sy as usize) < h && (sx as usize) < w {
            src[[sy as usize, sx as usize]]
        } else {
            0
        }
    });
    crop_tight(&rotated)
}

fn crop_tight(b: &Array2<u8>) -> Array2<u8> {
    let (h, w) = b.dim();
    let mut y0 = h;
    let mut y1 = 0;
    let mut x0 = w;
    let mut x1 = 0;
    for y in 0..h {
        for x in 0..w {
            if b[[y, x]] == 1 {
                y0 = y0.min(y);
                y1 = y1.max(y + 1);
                x0 = x0.min(x);
                x1 = x1.max(x + 1);
            }
        }
    }
    if y0 >= y1 {
        return b.clone();
    }
    b.slice(ndarray::s![y0..y1, x0..x1]).to_owned()
}

/// Scaled, rotated bitmap of one instance; consumes exactly two draws.
fn instance_bitmap(inst: &TextInstance, rng: &mut ChaCha8Rng) -> Result<Array2<u8>> {
    let bitmap = text_bitmap(&inst.text)?;
    let scale = if inst.scale_range.0 == inst.scale_range.1 {
        inst.scale_range.0
    } else {
        rng.gen_range(inst.scale_range.0..=inst.scale_range.1)
    } as usize;
    let rotation = if inst.max_rotation_deg > 0.0 {
        rng.gen_range(-inst.max_rotation_deg..=inst.max_rotation_deg)
    } else {
        0.0
    };
    Ok(rotate_bitmap(&scale_bitmap(&bitmap, scale), rotation))
}

/// Render the triple plus the placed box coordinates.
pub fn render_sample_detailed(
    spec: &SyntheticSampleSpec,
) -> Result<(PairedSample, Vec<BoxCoords>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (h, w) = spec.canvas_size;
    let gt = background(spec, &mut rng)?;
    let mut original = gt.clone();
    let mut mask = Array2::<f32>::zeros((h, w));
    let mut boxes: Vec<BoxCoords> = Vec::new();
    for inst in &spec.text_instances {
        let bitmap = instance_bitmap(inst, &mut rng)?;
        let (bh, bw) = bitmap.dim();
        if bh > h || bw > w {
            return Err(Error::Data(format!(
                "text box {bh}x{bw} does not fit a {h}x{w} canvas"
            )));
        }
        let mut placed = None;
        for _ in 0..PLACEMENT_TRIES {
            let y0 = rng.gen_range(0..=h - bh);
            let x0 = rng.gen_range(0..=w - bw);
            let cand = [y0, x0, y0 + bh, x0 + bw];
            if boxes.iter().all(|b| !boxes_overlap(b, &cand)) {
                placed = Some(cand);
                break;
            }
        }
        let bx = placed.ok_or_else(|| {
            Error::Data(format!(
                "could not place a {bh}x{bw} box without overlap after {PLACEMENT_TRIES} tries"
            ))
        })?;
        for y in 0..bh {
            for x in 0..bw {
                if bitmap[[y, x]] == 1 {
                    for c in 0..3 {
                        original.data_mut()[[c, bx[0] + y, bx[1] + x]] = inst.color[c];
                    }
                }
            }
        }
        mask.slice_mut(ndarray::s![bx[0]..bx[2], bx[1]..bx[3]]).fill(1.0);
        boxes.push(bx);
    }
    let sample = PairedSample {
        original,
        gt,
        mask_gt: MaskMap::with_kind(mask, MaskKind::Box)?,
        id: format!("sample_{:016x}", spec.seed),
    };
    Ok((sample, boxes))
}

/// Render the (original, gt, mask) triple of a spec.
pub fn render_sample(spec: &SyntheticSampleSpec) -> Result<PairedSample> {
    Ok(render_sample_detailed(spec)?.0)
}

/// Distribution that [`build_dataset`] draws sample specs from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub canvas_size: (usize, usize),
    pub num_samples: usize,
    pub master_seed: u64,
    /// Background kinds cycled per sample.
    pub backgrounds: Vec<BackgroundSource>,
    /// Word pool; each instance picks one uniformly.
    pub words: Vec<String>,
    /// Inclusive range of text instances per sample.
    pub instances_range: (usize, usize),
    /// Inclusive glyph pixel-scale range.
    pub scale_range: (u32, u32),
    pub max_rotation_deg: f32,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            canvas_size: (64, 64),
            num_samples: 200,
            master_seed: 7,
            backgrounds: vec![BackgroundSource::Gradient, BackgroundSource::Noise],
            words: ["AB", "XY", "42", "OK", "NO", "73", "QZ", "HI"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            instances_range: (1, 2),
            scale_range: (1, 2),
            max_rotation_deg: 20.0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.words.is_empty() {
            return Err(Error::Config("word pool is empty".into()));
        }
        if self.instances_range.0 > self.instances_range.1 {
            return Err(Error::Config(format!(
                "bad instance count range {:?}",
                self.instances_range
            )));
        }
        if self.backgrounds.is_empty() {
            return Err(Error::Config("no background sources".into()));
        }
        let probe = SyntheticSampleSpec {
            canvas_size: self.canvas_size,
            background: self.backgrounds[0].clone(),
            text_instances: vec![],
            seed: 0,
        };
        probe.validate()
    }

    /// Deterministic per-index sample spec; colors and counts come from a
    /// stream derived from the master seed and the index.
    pub fn sample_spec(&self, index: usize) -> SyntheticSampleSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let seed = rng.gen::<u64>();
        let count = if self.instances_range.0 == self.instances_range.1 {
            self.instances_range.0
        } else {
            rng.gen_range(self.instances_range.0..=self.instances_range.1)
        };
        let instances = (0..count)
            .map(|_| {
                let word = &self.words[rng.gen_range(0..self.words.len())];
                let color = [rng.gen(), rng.gen(), rng.gen()];
                TextInstance {
                    text: word.clone(),
                    scale_range: self.scale_range,
                    color,
                    max_rotation_deg: self.max_rotation_deg,
                }
            })
            .collect();
        SyntheticSampleSpec {
            canvas_size: self.canvas_size,
            background: self.backgrounds[index % self.backgrounds.len()].clone(),
            text_instances: instances,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub seed: u64,
    /// Text boxes as `[x, y, w, h]`.
    pub boxes: Vec<[usize; 4]>,
    /// SHA-256 of the written PNG bytes: original, gt, mask.
    pub digests: [String; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub config: DatasetConfig,
    pub entries: Vec<ManifestEntry>,
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(Error::io(path))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

/// Render `config.num_samples` triples into `out_dir/{original,gt,mask}`
/// and write `manifest.json`. Returns the manifest.
pub fn build_dataset(config: &DatasetConfig, out_dir: &Path) -> Result<DatasetManifest> {
    config.validate()?;
    let dirs = ["original", "gt", "mask"].map(|d| out_dir.join(d));
    for d in &dirs {
        std::fs::create_dir_all(d).map_err(Error::io(d))?;
    }
    let mut entries = Vec::with_capacity(config.num_samples);
    for i in 0..config.num_samples {
        let spec = config.sample_spec(i);
        let (sample, boxes) = render_sample_detailed(&spec)?;
        let id = format!("sample_{i:05}");
        let paths = [
            dirs[0].join(format!("{id}.png")),
            dirs[1].join(format!("{id}.png")),
            dirs[2].join(format!("{id}.png")),
        ];
        sample.original.save_png(&paths[0])?;
        sample.gt.save_png(&paths[1])?;
        sample.mask_gt.save_png(&paths[2])?;
        let digests = [
            sha256_file(&paths[0])?,
            sha256_file(&paths[1])?,
            sha256_file(&paths[2])?,
        ];
        entries.push(ManifestEntry {
            id,
            seed: spec.seed,
            boxes: boxes
                .iter()
                .map(|b| [b[1], b[0], b[3] - b[1], b[2] - b[0]])
                .collect(),
            digests,
        });
    }
    let manifest = DatasetManifest {
        schema_version: 1,
        config: config.clone(),
        entries,
    };
    let path = out_dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Data(format!("manifest serialization: {e}")))?;
    std::fs::write(&path, json).map_err(Error::io(&path))?;
    Ok(manifest)
}

/// Load a dataset written by [`build_dataset`]: parse the manifest, read
/// every PNG triple, binarize the masks and check pair consistency.
pub fn load_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<PairedSample>)> {
    let manifest_path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&manifest_path).map_err(Error::io(&manifest_path))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("bad manifest: {e}")))?;
    if manifest.schema_version != 1 {
        return Err(Error::Data(format!(
            "unsupported manifest schema version {}",
            manifest.schema_version
        )));
    }
    let mut samples = Vec::with_capacity(manifest.entries.len());
    for entry in &manifest.entries {
        let file = format!("{}.png", entry.id);
        let sample = PairedSample {
            original: ImageTensor::load_png(dir.join("original").join(&file))?,
            gt: ImageTensor::load_png(dir.join("gt").join(&file))?,
            mask_gt: MaskMap::load_png(dir.join("mask").join(&file))?.binarize(0.5),
            id: entry.id.clone(),
        };
        sample.check_consistency()?;
        samples.push(sample);
    }
    Ok((manifest, samples))
}

/// Geometric augmentation parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub max_rotation_deg: f32,
    pub hflip_prob: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            max_rotation_deg: 10.0,
            hflip_prob: 0.3,
        }
    }
}

/// Reflect an out-of-range index back into `[0, n)`.
fn reflect(mut i: i64, n: usize) -> usize {
    let n = n as i64;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return i as usize;
        }
    }
}

/// One plane of the shared transform: rotation then horizontal flip, with
/// nearest sampling and reflection padding.
fn transform_plane(src: &Array2<f32>, flip: bool, degrees: f32) -> Array2<f32> {
    let (h, w) = src.dim();
    let rotated = if degrees == 0.0 {
        src.clone()
    } else {
        let rad = degrees.to_radians();
        let (sin, cos) = rad.sin_cos();
        let (cy, cx) = ((h as f32 - 1.0) / 2.0, (w as f32 - 1.0) / 2.0);
        Array2::from_shape_fn((h, w), |(y, x)| {
            let dy = y as f32 - cy;
            let dx = x as f32 - cx;
            let sy = (cos * dy - sin * dx + cy).round() as i64;
            let sx = (sin * dy + cos * dx + cx).round() as i64;
            src[[reflect(sy, h), reflect(sx, w)]]
        })
    };
    if flip {
        Array2::from_shape_fn((h, w), |(y, x)| rotated[[y, w - 1 - x]])
    } else {
        rotated
    }
}

fn transform_image(img: &ImageTensor, flip: bool, degrees: f32) -> ImageTensor {
    let mut out = ImageTensor::zeros(img.height(), img.width());
    for c in 0..3 {
        let plane = img.data().index_axis(ndarray::Axis(0), c).to_owned();
        out.data_mut()
            .index_axis_mut(ndarray::Axis(0), c)
            .assign(&transform_plane(&plane, flip, degrees));
    }
    out
}

/// Apply one random flip + rotation to the whole triple identically.
///
/// Nearest sampling means every output pixel of all three maps copies the
/// same source pixel, so the outside-the-mask equality of original and gt
/// survives augmentation exactly.
pub fn augment<R: Rng>(sample: &PairedSample, rng: &mut R) -> PairedSample {
    augment_with(sample, rng, &AugmentConfig::default())
}

pub fn augment_with<R: Rng>(
    sample: &PairedSample,
    rng: &mut R,
    cfg: &AugmentConfig,
) -> PairedSample {
    let degrees = if cfg.max_rotation_deg > 0.0 {
        rng.gen_range(-cfg.max_rotation_deg..=cfg.max_rotation_deg)
    } else {
        0.0
    };
    let flip = rng.gen_bool(cfg.hflip_prob.clamp(0.0, 1.0));
    let mask = transform_plane(sample.mask_gt.data(), flip, degrees);
    PairedSample {
        original: transform_image(&sample.original, flip, degrees),
        gt: transform_image(&sample.gt, flip, degrees),
        mask_gt: MaskMap::new(mask).expect("mask values preserved").binarize(0.5),
        id: sample.id.clone(),
    }
}
