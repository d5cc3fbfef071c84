//! Frozen feature extractors for the perceptual and similarity losses.
//!
//! The extractor contract is a list of tapped activation maps (shallowest
//! first) with an explicit input normalization. Two implementations exist:
//! a small fixed-seed random network so every test and desk training run
//! works without pretrained weights, and a VGG16-style stack loadable from
//! a weight file for full-scale training. Extractor weights enter the tape
//! as constants, so no gradient ever reaches them.

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{scalar, ConvSpec, Graph, Scalar, Var};

/// Per-channel input normalization applied before the first convolution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normalization {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

pub const IMAGENET_NORM: Normalization = Normalization {
    mean: [0.485, 0.456, 0.406],
    std: [0.229, 0.224, 0.225],
};

pub const UNIT_NORM: Normalization = Normalization {
    mean: [0.5, 0.5, 0.5],
    std: [0.5, 0.5, 0.5],
};

/// A frozen convolutional network exposing tapped activations.
pub trait FeatureExtractor<T: Scalar> {
    /// Tapped activation maps of an `(N, 3, H, W)` image node, shallowest
    /// tap first.
    fn features(&self, g: &mut Graph<T>, x: Var) -> Vec<Var>;

    /// Number of taps returned by [`FeatureExtractor::features`].
    fn num_taps(&self) -> usize;

    /// Spatial divisor of each tap relative to the input.
    fn tap_divisors(&self) -> Vec<usize>;

    fn normalization(&self) -> Normalization;
}

/// Subtract mean and divide by std per channel, as tape constants.
fn normalize<T: Scalar>(g: &mut Graph<T>, x: Var, norm: &Normalization) -> Var {
    let shape = g.value(x).raw_dim();
    let (n, h, w) = (shape[0], shape[2], shape[3]);
    assert_eq!(shape[1], 3, "extractor input must be RGB");
    let mut mean = ArrayD::<T>::zeros(shape.clone());
    let mut inv_std = ArrayD::<T>::zeros(shape);
    for ni in 0..n {
        for c in 0..3 {
            for y in 0..h {
                for xx in 0..w {
                    mean[[ni, c, y, xx]] = scalar(norm.mean[c]);
                    inv_std[[ni, c, y, xx]] = scalar(1.0 / norm.std[c]);
                }
            }
        }
    }
    let mean = g.constant(mean);
    let inv_std = g.constant(inv_std);
    let centered = g.sub(x, mean);
    g.mul(centered, inv_std)
}

/// Fixed-seed random frozen network: three 3x3 convolutions with relu
/// taps. Strides are configurable so small gradient-check patches can keep
/// full-resolution taps.
pub struct DeskFeatureExtractor<T: Scalar> {
    weights: Vec<ArrayD<T>>,
    biases: Vec<ArrayD<T>>,
    strides: [usize; 3],
}

const DESK_CHANNELS: [usize; 4] = [3, 8, 16, 32];

impl<T: Scalar> DeskFeatureExtractor<T> {
    pub fn new(seed: u64) -> Self {
        Self::with_strides(seed, [2, 2, 2])
    }

    pub fn with_strides(seed: u64, strides: [usize; 3]) -> Self {
        assert!(strides.iter().all(|&s| s == 1 || s == 2));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for i in 0..3 {
            let (ci, co) = (DESK_CHANNELS[i], DESK_CHANNELS[i + 1]);
            let limit = (6.0 / (ci * 9) as f64).sqrt();
            weights.push(ArrayD::from_shape_simple_fn(
                IxDyn(&[co, ci, 3, 3]),
                || scalar::<T>(rng.gen_range(-limit..limit)),
            ));
            biases.push(ArrayD::from_shape_simple_fn(IxDyn(&[co]), || {
                scalar::<T>(rng.gen_range(-0.1..0.1))
            }));
        }
        DeskFeatureExtractor {
            weights,
            biases,
            strides,
        }
    }
}

impl<T: Scalar> FeatureExtractor<T> for DeskFeatureExtractor<T> {
    fn features(&self, g: &mut Graph<T>, x: Var) -> Vec<Var> {
        let mut h = normalize(g, x, &UNIT_NORM);
        let mut taps = Vec::with_capacity(3);
        for i in 0..3 {
            let w = g.constant(self.weights[i].clone());
            let b = g.constant(self.biases[i].clone());
            let conv = g.conv2d(
                h,
                w,
                Some(b),
                ConvSpec {
                    stride: self.strides[i],
                    pad: 1,
                },
            );
            h = g.relu(conv);
            taps.push(h);
        }
        taps
    }

    fn num_taps(&self) -> usize {
        3
    }

    fn tap_divisors(&self) -> Vec<usize> {
        let mut div = 1;
        self.strides
            .iter()
            .map(|&s| {
                div *= s;
                div
            })
            .collect()
    }

    fn normalization(&self) -> Normalization {
        UNIT_NORM
    }
}

/// VGG16 convolutional stack through its third block, tapping the relu
/// activations conventionally counted as layers 4, 9 and 16. Weights load
/// from a named-tensor file; nothing is downloaded.
pub struct Vgg16Extractor {
    convs: Vec<(ArrayD<f32>, ArrayD<f32>)>,
}

/// `(out_channels, in_channels, follows_pool)` per convolution, in order.
const VGG_LAYOUT: [(usize, usize, bool); 7] = [
    (64, 3, false),
    (64, 64, false),
    (128, 64, true),
    (128, 128, false),
    (256, 128, true),
    (256, 256, false),
    (256, 256, false),
];

/// Taps after the relu of convolutions 2, 4 and 7 (1-indexed).
const VGG_TAPS: [usize; 3] = [2, 4, 7];

impl Vgg16Extractor {
    /// Load convolution weights from a checkpoint-format tensor file with
    /// entries `conv{i}.w` `(Co, Ci, 3, 3)` and `conv{i}.b` `(Co,)`.
    pub fn load<P: AsRef<std::path::Path>>(path: P) -> Result<Self> {
        let tensors = crate::trainer::read_named_tensors(path.as_ref())?;
        let mut convs = Vec::new();
        for (i, &(co, ci, _)) in VGG_LAYOUT.iter().enumerate() {
            let w = tensors
                .get(&format!("conv{i}.w"))
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor conv{i}.w")))?;
            let b = tensors
                .get(&format!("conv{i}.b"))
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor conv{i}.b")))?;
            if w.shape() != [co, ci, 3, 3] || b.shape() != [co] {
                return Err(Error::Checkpoint(format!(
                    "conv{i} has wrong shape: {:?} / {:?}",
                    w.shape(),
                    b.shape()
                )));
            }
            convs.push((w.clone(), b.clone()));
        }
        Ok(Vgg16Extractor { convs })
    }

    /// Write weights in the format `load` expects.
    pub fn save<P: AsRef<std::path::Path>>(&self, path: P) -> Result<()> {
        let names: Vec<(String, &ArrayD<f32>)> = self
            .convs
            .iter()
            .enumerate()
            .flat_map(|(i, (w, b))| [(format!("conv{i}.w"), w), (format!("conv{i}.b"), b)])
            .collect();
        let pairs: Vec<(&str, &ArrayD<f32>)> =
            names.iter().map(|(n, t)| (n.as_str(), *t)).collect();
        crate::trainer::write_named_tensors(path.as_ref(), &pairs)
    }

    /// Random-weight instance with the VGG16 layout, for tests of the
    /// architecture plumbing.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let convs = VGG_LAYOUT
            .iter()
            .map(|&(co, ci, _)| {
                let limit = (6.0 / (ci * 9) as f64).sqrt();
                let w = ArrayD::from_shape_simple_fn(IxDyn(&[co, ci, 3, 3]), || {
                    rng.gen_range(-limit..limit) as f32
                });
                let b = ArrayD::zeros(IxDyn(&[co]));
                (w, b)
            })
            .collect();
        Vgg16Extractor { convs }
    }
}

impl FeatureExtractor<f32> for Vgg16Extractor {
    fn features(&self, g: &mut Graph<f32>, x: Var) -> Vec<Var> {
        let mut h = normalize(g, x, &IMAGENET_NORM);
        let mut taps = Vec::with_capacity(3);
        for (i, ((w, b), &(_, _, pool_first))) in
            self.convs.iter().zip(VGG_LAYOUT.iter()).enumerate()
        {
            if pool_first {
                h = g.max_pool2d(h, 2, 2);
            }
            let w = g.constant(w.clone());
            let b = g.constant(b.clone());
            let conv = g.conv2d(h, w, Some(b), ConvSpec { stride: 1, pad: 1 });
            h = g.relu(conv);
            if VGG_TAPS.contains(&(i + 1)) {
                taps.push(h);
            }
        }
        taps
    }

    fn num_taps(&self) -> usize {
        3
    }

    fn tap_divisors(&self) -> Vec<usize> {
        vec![1, 2, 4]
    }

    fn normalization(&self) -> Normalization {
        IMAGENET_NORM
    }
}
