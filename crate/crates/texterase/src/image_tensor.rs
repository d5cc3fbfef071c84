//! RGB image and mask containers with PNG round-tripping.
//!
//! Pixel values live in `[0, 1]` as `f32`, channel-first. Loading maps each
//! 8-bit value to `v / 255`, saving rounds back, so a load-save cycle is
//! lossless and compositing against an untouched region stays bit-exact.

use std::path::Path;

use ndarray::{s, Array2, Array3, Array4, ArrayView3, Axis};

use crate::error::{Error, Result};

/// BT.601 luminance weights for red, green, blue.
pub const LUMA_WEIGHTS: [f32; 3] = [0.299, 0.587, 0.114];

/// An RGB image stored as `(3, H, W)` in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    data: Array3<f32>,
}

impl ImageTensor {
    pub fn new(data: Array3<f32>) -> Result<Self> {
        if data.shape()[0] != 3 || data.shape()[1] == 0 || data.shape()[2] == 0 {
            return Err(Error::Dimension(format!(
                "image must be (3, H, W) with nonzero extent, got {:?}",
                data.shape()
            )));
        }
        Ok(ImageTensor { data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        ImageTensor {
            data: Array3::zeros((3, height, width)),
        }
    }

    pub fn from_fn<F: FnMut(usize, usize, usize) -> f32>(
        height: usize,
        width: usize,
        mut f: F,
    ) -> Self {
        ImageTensor {
            data: Array3::from_shape_fn((3, height, width), |(c, y, x)| f(c, y, x)),
        }
    }

    pub fn height(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array3<f32> {
        &mut self.data
    }

    pub fn into_data(self) -> Array3<f32> {
        self.data
    }

    pub fn load_png<P: AsRef<Path>>(path: P) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path)
            .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?
            .to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut data = Array3::zeros((3, h, w));
        for (x, y, px) in img.enumerate_pixels() {
            for c in 0..3 {
                data[[c, y as usize, x as usize]] = px.0[c] as f32 / 255.0;
            }
        }
        Self::new(data)
    }

    pub fn save_png<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let path = path.as_ref();
        let (h, w) = (self.height(), self.width());
        let mut img = image::RgbImage::new(w as u32, h as u32);
        for (x, y, px) in img.enumerate_pixels_mut() {
            for c in 0..3 {
                px.0[c] = to_u8(self.data[[c, y as usize, x as usize]]);
            }
        }
        img.save(path)
            .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
    }

    /// BT.601 luminance in `[0, 1]`, shape `(H, W)`.
    pub fn luminance(&self) -> Array2<f32> {
        let (h, w) = (self.height(), self.width());
        Array2::from_shape_fn((h, w), |(y, x)| {
            LUMA_WEIGHTS[0] * self.data[[0, y, x]]
                + LUMA_WEIGHTS[1] * self.data[[1, y, x]]
                + LUMA_WEIGHTS[2] * self.data[[2, y, x]]
        })
    }

    /// Bilinear resample with half-pixel centers.
    pub fn resize_bilinear(&self, height: usize, width: usize) -> Self {
        if (height, width) == (self.height(), self.width()) {
            return self.clone();
        }
        ImageTensor {
            data: resize_planes(&self.data.view(), height, width),
        }
    }

    /// Pixels where `self` and `other` differ in any channel.
    pub fn difference_mask(&self, other: &ImageTensor) -> MaskMap {
        assert_eq!(self.data.shape(), other.data.shape());
        let (h, w) = (self.height(), self.width());
        let mask = Array2::from_shape_fn((h, w), |(y, x)| {
            let differs = (0..3).any(|c| self.data[[c, y, x]] != other.data[[c, y, x]]);
            if differs {
                1.0
            } else {
                0.0
            }
        });
        MaskMap {
            data: mask,
            kind: MaskKind::Box,
        }
    }
}

/// Distinguishes ground-truth box masks (strictly binary) from predicted
/// sigmoid maps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskKind {
    /// Binary region annotation; every value is exactly 0 or 1.
    Box,
    /// Continuous prediction in `[0, 1]`.
    Soft,
}

/// A single-channel map in `[0, 1]`, shape `(H, W)`.
#[derive(Clone, Debug)]
pub struct MaskMap {
    data: Array2<f32>,
    kind: MaskKind,
}

impl PartialEq for MaskMap {
    /// Pixel equality; the box/soft tag is metadata.
    fn eq(&self, other: &Self) -> bool {
        self.data == other.data
    }
}

impl MaskMap {
    pub fn new(data: Array2<f32>) -> Result<Self> {
        Self::with_kind(data, MaskKind::Soft)
    }

    pub fn with_kind(data: Array2<f32>, kind: MaskKind) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Dimension("mask must be nonempty".into()));
        }
        if kind == MaskKind::Box && !data.iter().all(|&v| v == 0.0 || v == 1.0) {
            return Err(Error::Data(
                "box masks must contain only exact 0 and 1 values".into(),
            ));
        }
        Ok(MaskMap { data, kind })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        MaskMap {
            data: Array2::zeros((height, width)),
            kind: MaskKind::Box,
        }
    }

    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    pub fn height(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn data(&self) -> &Array2<f32> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array2<f32> {
        &mut self.data
    }

    pub fn load_png<P: AsRef<Path>>(path: P) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path)
            .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?
            .to_luma8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let data = Array2::from_shape_fn((h, w), |(y, x)| {
            img.get_pixel(x as u32, y as u32).0[0] as f32 / 255.0
        });
        let kind = if data.iter().all(|&v| v == 0.0 || v == 1.0) {
            MaskKind::Box
        } else {
            MaskKind::Soft
        };
        Self::with_kind(data, kind)
    }

    pub fn save_png<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let path = path.as_ref();
        let (h, w) = (self.height(), self.width());
        let mut img = image::GrayImage::new(w as u32, h as u32);
        for (x, y, px) in img.enumerate_pixels_mut() {
            px.0[0] = to_u8(self.data[[y as usize, x as usize]]);
        }
        img.save(path)
            .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
    }

    /// Binarize at `threshold`: strictly greater becomes 1.
    pub fn binarize(&self, threshold: f32) -> MaskMap {
        MaskMap {
            data: self.data.mapv(|v| if v > threshold { 1.0 } else { 0.0 }),
            kind: MaskKind::Box,
        }
    }

    /// Downscale to the given pyramid level by bilinear resampling.
    pub fn at_level(&self, level: MaskLevel) -> MaskMap {
        let d = level.divisor();
        if d == 1 {
            return self.clone();
        }
        let (h, w) = (self.height() / d, self.width() / d);
        let plane = self
            .data
            .view()
            .insert_axis(Axis(0));
        MaskMap {
            data: resize_planes(&plane, h, w).index_axis_move(Axis(0), 0),
            kind: MaskKind::Soft,
        }
    }

    /// Bilinear resample to an arbitrary size; the result is soft because
    /// interpolation produces fractional edge values.
    pub fn resize_bilinear(&self, height: usize, width: usize) -> MaskMap {
        if (height, width) == (self.height(), self.width()) {
            return self.clone();
        }
        let plane = self.data.view().insert_axis(Axis(0));
        MaskMap {
            data: resize_planes(&plane, height, width).index_axis_move(Axis(0), 0),
            kind: MaskKind::Soft,
        }
    }

    pub fn mean(&self) -> f32 {
        self.data.mean().unwrap_or(0.0)
    }
}

/// Resolution of a supervision target inside the decoder pyramid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskLevel {
    /// Network input resolution.
    Full,
    /// Half resolution, matching the first intermediate prediction.
    Half,
    /// Quarter resolution, matching the deepest intermediate prediction.
    Quarter,
}

impl MaskLevel {
    pub fn divisor(self) -> usize {
        match self {
            MaskLevel::Full => 1,
            MaskLevel::Half => 2,
            MaskLevel::Quarter => 4,
        }
    }
}

/// Round a unit-interval value to its 8-bit code.
pub fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Stack same-sized images into an `(N, 3, H, W)` batch.
pub fn stack_batch(images: &[ImageTensor]) -> Result<Array4<f32>> {
    let first = images
        .first()
        .ok_or_else(|| Error::Dimension("empty batch".into()))?;
    let (h, w) = (first.height(), first.width());
    let mut batch = Array4::zeros((images.len(), 3, h, w));
    for (i, img) in images.iter().enumerate() {
        if (img.height(), img.width()) != (h, w) {
            return Err(Error::Dimension(format!(
                "batch images differ in size: (3, {h}, {w}) vs {:?}",
                img.data.shape()
            )));
        }
        batch.index_axis_mut(Axis(0), i).assign(&img.data);
    }
    Ok(batch)
}

/// Stack same-sized masks into an `(N, 1, H, W)` batch.
pub fn stack_mask_batch(masks: &[MaskMap]) -> Result<Array4<f32>> {
    let first = masks
        .first()
        .ok_or_else(|| Error::Dimension("empty batch".into()))?;
    let (h, w) = (first.height(), first.width());
    let mut batch = Array4::zeros((masks.len(), 1, h, w));
    for (i, m) in masks.iter().enumerate() {
        if (m.height(), m.width()) != (h, w) {
            return Err(Error::Dimension(format!(
                "batch masks differ in size: ({h}, {w}) vs {:?}",
                m.data.shape()
            )));
        }
        batch.slice_mut(s![i, 0, .., ..]).assign(&m.data);
    }
    Ok(batch)
}

/// Extract one image from an `(N, 3, H, W)` batch, clamping to `[0, 1]`.
pub fn image_from_batch(batch: &ndarray::ArrayViewD<f32>, index: usize) -> Result<ImageTensor> {
    if batch.ndim() != 4 {
        return Err(Error::Dimension(format!(
            "batch must be rank 4, got {:?}",
            batch.shape()
        )));
    }
    let img = batch
        .index_axis(Axis(0), index)
        .into_dimensionality::<ndarray::Ix3>()
        .map_err(|e| Error::Dimension(e.to_string()))?
        .mapv(|v| v.clamp(0.0, 1.0));
    ImageTensor::new(img)
}

/// Bilinear resize of a `(C, H, W)` stack with half-pixel centers.
fn resize_planes(src: &ArrayView3<f32>, out_h: usize, out_w: usize) -> Array3<f32> {
    use crate::graph::lerp_table;
    let (c, h, w) = (src.shape()[0], src.shape()[1], src.shape()[2]);
    assert!(out_h >= 1 && out_w >= 1, "resize to empty output");
    let ys = lerp_table::<f32>(h, out_h);
    let xs = lerp_table::<f32>(w, out_w);
    Array3::from_shape_fn((c, out_h, out_w), |(ci, oy, ox)| {
        let (y0, y1, wy0, wy1) = ys[oy];
        let (x0, x1, wx0, wx1) = xs[ox];
        let top = wx0 * src[[ci, y0, x0]] + wx1 * src[[ci, y0, x1]];
        let bot = wx0 * src[[ci, y1, x0]] + wx1 * src[[ci, y1, x1]];
        wy0 * top + wy1 * bot
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    fn checker(h: usize, w: usize) -> ImageTensor {
        ImageTensor::from_fn(h, w, |c, y, x| {
            let v = ((x + y + c) % 7) as f32 / 6.0;
            (v * 255.0).round() / 255.0
        })
    }

    #[test]
    fn png_round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        let img = checker(13, 9);
        img.save_png(&path).unwrap();
        let back = ImageTensor::load_png(&path).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn mask_round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mask.png");
        let mask = MaskMap::new(arr2(&[[0.0, 1.0], [1.0, 0.0]])).unwrap();
        mask.save_png(&path).unwrap();
        let back = MaskMap::load_png(&path).unwrap();
        assert_eq!(mask, back);
    }

    #[test]
    fn luminance_uses_bt601_weights() {
        let mut img = ImageTensor::zeros(1, 1);
        img.data_mut()[[0, 0, 0]] = 1.0;
        assert!((img.luminance()[[0, 0]] - 0.299).abs() < 1e-6);
        let mut img = ImageTensor::zeros(1, 1);
        img.data_mut()[[1, 0, 0]] = 1.0;
        assert!((img.luminance()[[0, 0]] - 0.587).abs() < 1e-6);
    }

    #[test]
    fn resize_identity_returns_equal_image() {
        let img = checker(8, 6);
        assert_eq!(img.resize_bilinear(8, 6), img);
    }

    #[test]
    fn resize_halves_constant_image_exactly() {
        let img = ImageTensor::from_fn(8, 8, |_, _, _| 0.4);
        let small = img.resize_bilinear(4, 4);
        for &v in small.data().iter() {
            assert!((v - 0.4).abs() < 1e-6);
        }
    }

    #[test]
    fn mask_levels_divide_resolution() {
        let mask = MaskMap::zeros(32, 16);
        assert_eq!(mask.at_level(MaskLevel::Half).height(), 16);
        assert_eq!(mask.at_level(MaskLevel::Quarter).width(), 4);
        assert_eq!(mask.at_level(MaskLevel::Full).height(), 32);
    }

    #[test]
    fn difference_mask_flags_changed_pixels() {
        let a = checker(4, 4);
        let mut b = a.clone();
        b.data_mut()[[1, 2, 3]] += 0.1;
        let mask = a.difference_mask(&b);
        assert_eq!(mask.data()[[2, 3]], 1.0);
        assert_eq!(mask.data().sum(), 1.0);
    }

    #[test]
    fn batch_round_trip() {
        let a = checker(4, 4);
        let batch = stack_batch(&[a.clone(), a.clone()]).unwrap();
        let back = image_from_batch(&batch.view().into_dyn(), 1).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn rejects_wrong_channel_count() {
        assert!(ImageTensor::new(Array3::zeros((4, 2, 2))).is_err());
    }
}
