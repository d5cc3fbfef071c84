//! Training objective: dice mask loss per stage, weighted region
//! reconstruction (RS), pooled feature-similarity (GS), negative SSIM, and
//! perceptual + style feature losses, plus their sum with a per-term
//! breakdown.
//!
//! Every term exists in two forms: a pure function of images for evaluation
//! and testing, and a `_graph` form that builds differentiable nodes for
//! training. Both compute the same quantity; tests pin them together.

mod extractor;

pub use extractor::{
    DeskFeatureExtractor, FeatureExtractor, Normalization, Vgg16Extractor, IMAGENET_NORM,
    UNIT_NORM,
};

use ndarray::{Array2, Array3, Array4, ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::datagen::PairedSample;
use crate::error::{Error, Result};
use crate::graph::{scalar, ConvSpec, Graph, Scalar, Var};
use crate::image_tensor::{ImageTensor, MaskMap, LUMA_WEIGHTS};
use crate::metrics::gaussian_kernel;
use crate::model::StageOutput;

/// Smoothing added to the dice denominator so all-zero masks are defined.
pub const DICE_EPS: f64 = 1e-6;

/// Added to each feature-vector norm before cosine division.
pub const COSINE_EPS: f64 = 1e-8;

const SSIM_C1: f64 = 0.0001;
const SSIM_C2: f64 = 0.0009;

/// Weights and toggles of every objective term.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    /// Text-region weight of the full-resolution reconstruction.
    pub alpha: f64,
    /// Text-region weight of the first intermediate prediction.
    pub alpha1: f64,
    /// Text-region weight of the second intermediate prediction.
    pub alpha2: f64,
    /// Non-text weight of the full-resolution reconstruction.
    pub beta: f64,
    /// Non-text weight of the first intermediate prediction.
    pub beta1: f64,
    /// Non-text weight of the second intermediate prediction.
    pub beta2: f64,
    /// Pooling side lengths of the similarity loss, largest first.
    pub gs_scales: Vec<usize>,
    /// Conventional 1-indexed tap positions of the perceptual network.
    pub feature_layer_indices: [usize; 3],
    pub perceptual_weight: f64,
    pub style_weight: f64,
    pub ssim_window: usize,
    pub ssim_sigma: f64,
    /// Enables the RS and GS reconstruction terms.
    pub rg_term: bool,
    pub ssim_term: bool,
    pub vgg_term: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 13.0,
            alpha1: 10.0,
            alpha2: 12.0,
            beta: 2.0,
            beta1: 0.8,
            beta2: 1.0,
            gs_scales: vec![8, 4, 1],
            feature_layer_indices: [4, 9, 16],
            perceptual_weight: 0.05,
            style_weight: 120.0,
            ssim_window: 11,
            ssim_sigma: 1.5,
            rg_term: true,
            ssim_term: true,
            vgg_term: true,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let weights = [
            self.alpha,
            self.alpha1,
            self.alpha2,
            self.beta,
            self.beta1,
            self.beta2,
            self.perceptual_weight,
            self.style_weight,
        ];
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config("loss weights must be finite and >= 0".into()));
        }
        if self.gs_scales.is_empty()
            || self.gs_scales.windows(2).any(|p| p[0] <= p[1])
            || *self.gs_scales.last().unwrap() != 1
        {
            return Err(Error::Config(format!(
                "gs_scales must be strictly decreasing and end at 1, got {:?}",
                self.gs_scales
            )));
        }
        if self.ssim_window < 3 || self.ssim_window % 2 == 0 {
            return Err(Error::Config(format!(
                "ssim_window must be odd and >= 3, got {}",
                self.ssim_window
            )));
        }
        if !(self.ssim_sigma.is_finite() && self.ssim_sigma > 0.0) {
            return Err(Error::Config(format!(
                "ssim_sigma must be positive, got {}",
                self.ssim_sigma
            )));
        }
        Ok(())
    }
}

/// Graph handles of one stage's trainable outputs.
#[derive(Clone, Copy, Debug)]
pub struct StagePredictions {
    /// Sigmoid text-probability map, `(N, 1, H, W)`.
    pub mask: Var,
    /// Composited full-resolution output, `(N, 3, H, W)`.
    pub composited: Var,
    /// First intermediate reconstruction, if running in training mode.
    pub p1: Option<Var>,
    /// Second intermediate reconstruction, if running in training mode.
    pub p2: Option<Var>,
}

/// Graph handles of the supervision targets.
#[derive(Clone, Copy, Debug)]
pub struct LossTargets {
    /// Text-free image, `(N, 3, H, W)`.
    pub gt: Var,
    /// Binary text mask, `(N, 1, H, W)`.
    pub mask: Var,
    /// `gt` resized to the first intermediate prediction's size.
    pub gt_p1: Option<Var>,
    /// `gt` resized to the second intermediate prediction's size.
    pub gt_p2: Option<Var>,
    /// `mask` resized to match `gt_p1`.
    pub mask_p1: Option<Var>,
    /// `mask` resized to match `gt_p2`.
    pub mask_p2: Option<Var>,
}

fn check_same_shape<T: Scalar>(g: &Graph<T>, a: Var, b: Var, what: &str) -> Result<()> {
    if g.value(a).shape() != g.value(b).shape() {
        return Err(Error::Dimension(format!(
            "{what}: shapes {:?} and {:?} differ",
            g.value(a).shape(),
            g.value(b).shape()
        )));
    }
    Ok(())
}

/// Dice overlap loss over all elements: `1 - 2*sum(p*y) / (sum(p) + sum(y) + eps)`.
///
/// Sums run over the whole tensor (batch included), matching the
/// single-mask definition when N = 1.
pub fn dice_loss_graph<T: Scalar>(g: &mut Graph<T>, pred: Var, target: Var) -> Var {
    let prod = g.mul(pred, target);
    let inter = g.sum_all(prod);
    let num = g.mul_scalar(inter, scalar(2.0));
    let sp = g.sum_all(pred);
    let sy = g.sum_all(target);
    let sums = g.add(sp, sy);
    let denom = g.add_scalar(sums, scalar(DICE_EPS));
    let frac = g.div(num, denom);
    g.one_minus(frac)
}

/// Dice loss of a predicted mask against a binary annotation, in `[0, 1]`.
pub fn dice_loss(pred: &MaskMap, gt: &MaskMap) -> Result<f64> {
    if pred.data().shape() != gt.data().shape() {
        return Err(Error::Dimension(format!(
            "dice: mask shapes {:?} and {:?} differ",
            pred.data().shape(),
            gt.data().shape()
        )));
    }
    if pred.data().is_empty() {
        return Err(Error::Dimension("dice: empty masks".into()));
    }
    let mut inter = 0.0f64;
    let mut sp = 0.0f64;
    let mut sy = 0.0f64;
    for (&p, &y) in pred.data().iter().zip(gt.data().iter()) {
        inter += p as f64 * y as f64;
        sp += p as f64;
        sy += y as f64;
    }
    Ok(1.0 - 2.0 * inter / (sp + sy + DICE_EPS))
}

/// The six weighted-L1 addends of the region reconstruction loss.
pub struct RsTerms {
    /// Text-region terms for the final output and the two intermediates.
    pub text: [Var; 3],
    /// Non-text terms in the same order.
    pub nontext: [Var; 3],
    pub total: Var,
}

fn weighted_region_l1<T: Scalar>(
    g: &mut Graph<T>,
    pred: Var,
    target: Var,
    mask: Var,
    text_w: f64,
    nontext_w: f64,
) -> (Var, Var) {
    let diff = g.sub(pred, target);
    let l1 = g.abs(diff);
    let text = g.mul_mask(l1, mask);
    let text_mean = g.mean_all(text);
    let text_term = g.mul_scalar(text_mean, scalar(text_w));
    let inv = g.one_minus(mask);
    let nontext = g.mul_mask(l1, inv);
    let nontext_mean = g.mean_all(nontext);
    let nontext_term = g.mul_scalar(nontext_mean, scalar(nontext_w));
    (text_term, nontext_term)
}

/// Region reconstruction loss: per-pixel L1 means weighted differently
/// inside and outside the text mask, over the final output and both
/// intermediate predictions.
pub fn rs_loss_graph<T: Scalar>(
    g: &mut Graph<T>,
    w: &LossWeights,
    pred: &StagePredictions,
    tgt: &LossTargets,
) -> Result<RsTerms> {
    let missing = || Error::Training("intermediate predictions absent; run in training mode".into());
    let p1 = pred.p1.ok_or_else(missing)?;
    let p2 = pred.p2.ok_or_else(missing)?;
    let gt_p1 = tgt.gt_p1.ok_or_else(missing)?;
    let gt_p2 = tgt.gt_p2.ok_or_else(missing)?;
    let mask_p1 = tgt.mask_p1.ok_or_else(missing)?;
    let mask_p2 = tgt.mask_p2.ok_or_else(missing)?;
    let levels = [
        (pred.composited, tgt.gt, tgt.mask, w.alpha, w.beta),
        (p1, gt_p1, mask_p1, w.alpha1, w.beta1),
        (p2, gt_p2, mask_p2, w.alpha2, w.beta2),
    ];
    let mut text = [Var(0); 3];
    let mut nontext = [Var(0); 3];
    let mut total: Option<Var> = None;
    for (i, &(p, t, m, tw, nw)) in levels.iter().enumerate() {
        check_same_shape(g, p, t, "region loss prediction/target")?;
        let (tt, nt) = weighted_region_l1(g, p, t, m, tw, nw);
        text[i] = tt;
        nontext[i] = nt;
        let level = g.add(tt, nt);
        total = Some(match total {
            Some(acc) => g.add(acc, level),
            None => level,
        });
    }
    Ok(RsTerms {
        text,
        nontext,
        total: total.expect("three levels"),
    })
}

/// Region reconstruction loss of a final training-mode stage against a
/// ground truth and its directly resized copies.
pub fn rs_loss(
    final_stage: &StageOutput,
    gt: &ImageTensor,
    mask_gt: &MaskMap,
    w: &LossWeights,
) -> Result<f64> {
    let mut g = Graph::<f32>::inference();
    let pred = stage_predictions(&mut g, final_stage);
    let tgt = targets_for(&mut g, gt, mask_gt, final_stage)?;
    let terms = rs_loss_graph(&mut g, w, &pred, &tgt)?;
    Ok(g.scalar_value(terms.total) as f64)
}

/// Cosine similarity between all position pairs of an `(S, S, D)` feature
/// map: entry `(i, j)` compares positions `i` and `j` in row-major order.
pub fn pairwise_similarity(f: &Array3<f64>) -> Array2<f64> {
    let (sh, sw, d) = f.dim();
    let n = sh * sw;
    let flat = f
        .to_owned()
        .into_shape_with_order((n, d))
        .expect("contiguous feature map");
    let norms: Vec<f64> = flat
        .rows()
        .into_iter()
        .map(|r| r.dot(&r).sqrt() + COSINE_EPS)
        .collect();
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            out[[i, j]] = flat.row(i).dot(&flat.row(j)) / (norms[i] * norms[j]);
        }
    }
    out
}

/// Pooled-similarity loss over already-extracted feature taps.
///
/// For every tap and every scale S: max-pool both maps to SxS, build the
/// pairwise cosine matrices, and accumulate the squared difference summed
/// over all pairs, divided by S*S. Averaged over the batch.
pub fn gs_loss_graph<T: Scalar>(
    g: &mut Graph<T>,
    w: &LossWeights,
    f_out: &[Var],
    f_gt: &[Var],
) -> Result<Var> {
    assert_eq!(f_out.len(), f_gt.len(), "tap count mismatch");
    assert!(!f_out.is_empty(), "no feature taps");
    let max_scale = *w.gs_scales.first().unwrap();
    let mut total: Option<Var> = None;
    for (&fo, &fg) in f_out.iter().zip(f_gt.iter()) {
        check_same_shape(g, fo, fg, "similarity loss features")?;
        let sh = g.value(fo).shape().to_vec();
        let (n, h, wd) = (sh[0], sh[2], sh[3]);
        if h < max_scale || wd < max_scale {
            return Err(Error::Dimension(format!(
                "feature map {h}x{wd} smaller than pooling scale {max_scale}"
            )));
        }
        for &s in &w.gs_scales {
            let po = g.adaptive_max_pool2d(fo, s, s);
            let pg = g.adaptive_max_pool2d(fg, s, s);
            let go = g.cosine_pairwise(po, COSINE_EPS);
            let gg = g.cosine_pairwise(pg, COSINE_EPS);
            let d = g.sub(go, gg);
            let sq = g.mul(d, d);
            let sum = g.sum_all(sq);
            let term = g.mul_scalar(sum, scalar(1.0 / (s * s * n) as f64));
            total = Some(match total {
                Some(acc) => g.add(acc, term),
                None => term,
            });
        }
    }
    Ok(total.expect("at least one tap and scale"))
}

/// Pooled-similarity loss between a composited output and the ground truth.
pub fn gs_loss(
    out: &ImageTensor,
    gt: &ImageTensor,
    fx: &dyn FeatureExtractor<f32>,
    w: &LossWeights,
) -> Result<f64> {
    let mut g = Graph::<f32>::inference();
    let vo = image_node(&mut g, out);
    let vg = image_node(&mut g, gt);
    check_same_shape(&g, vo, vg, "similarity loss images")?;
    let fo = fx.features(&mut g, vo);
    let fg = fx.features(&mut g, vg);
    let l = gs_loss_graph(&mut g, w, &fo, &fg)?;
    Ok(g.scalar_value(l) as f64)
}

/// Negative mean SSIM over Gaussian windows of the luminance channel.
///
/// Kernels enter the tape as constants, so the node differentiates with
/// respect to both images.
pub fn neg_ssim_loss_graph<T: Scalar>(
    g: &mut Graph<T>,
    a: Var,
    b: Var,
    window: usize,
    sigma: f64,
) -> Result<Var> {
    check_same_shape(g, a, b, "structural loss images")?;
    let sh = g.value(a).shape().to_vec();
    if sh.len() != 4 || sh[1] != 3 {
        return Err(Error::Dimension(format!(
            "structural loss needs (N, 3, H, W) inputs, got {sh:?}"
        )));
    }
    if window < 3 || window % 2 == 0 {
        return Err(Error::Config(format!("window must be odd and >= 3, got {window}")));
    }
    let (h, wd) = (sh[2], sh[3]);
    if h < window || wd < window {
        return Err(Error::Dimension(format!(
            "structural loss needs at least {window}x{window} pixels, got {h}x{wd}"
        )));
    }
    let lum_w = {
        let mut k = ArrayD::<T>::zeros(IxDyn(&[1, 3, 1, 1]));
        for c in 0..3 {
            k[[0, c, 0, 0]] = scalar(LUMA_WEIGHTS[c] as f64);
        }
        g.constant(k)
    };
    let spec = ConvSpec { stride: 1, pad: 0 };
    let la = g.conv2d(a, lum_w, None, spec);
    let lb = g.conv2d(b, lum_w, None, spec);
    let gk = gaussian_kernel(window, sigma);
    let blur_w = {
        let mut k = ArrayD::<T>::zeros(IxDyn(&[1, 1, window, window]));
        for (i, &ki) in gk.iter().enumerate() {
            for (j, &kj) in gk.iter().enumerate() {
                k[[0, 0, i, j]] = scalar(ki * kj);
            }
        }
        g.constant(k)
    };
    let blur = |g: &mut Graph<T>, x: Var| g.conv2d(x, blur_w, None, spec);
    let mu_a = blur(g, la);
    let mu_b = blur(g, lb);
    let aa = g.mul(la, la);
    let bb = g.mul(lb, lb);
    let ab = g.mul(la, lb);
    let e_aa = blur(g, aa);
    let e_bb = blur(g, bb);
    let e_ab = blur(g, ab);
    let mu_aa = g.mul(mu_a, mu_a);
    let mu_bb = g.mul(mu_b, mu_b);
    let mu_ab = g.mul(mu_a, mu_b);
    let var_a = g.sub(e_aa, mu_aa);
    let var_b = g.sub(e_bb, mu_bb);
    let cov = g.sub(e_ab, mu_ab);
    let lum2 = g.mul_scalar(mu_ab, scalar(2.0));
    let num_l = g.add_scalar(lum2, scalar(SSIM_C1));
    let cov2 = g.mul_scalar(cov, scalar(2.0));
    let num_c = g.add_scalar(cov2, scalar(SSIM_C2));
    let num = g.mul(num_l, num_c);
    let musq = g.add(mu_aa, mu_bb);
    let den_l = g.add_scalar(musq, scalar(SSIM_C1));
    let vars = g.add(var_a, var_b);
    let den_c = g.add_scalar(vars, scalar(SSIM_C2));
    let den = g.mul(den_l, den_c);
    let map = g.div(num, den);
    let mean = g.mean_all(map);
    Ok(g.neg(mean))
}

/// Negative mean SSIM of two images, in `[-1, 1]`.
pub fn neg_ssim_loss(out: &ImageTensor, gt: &ImageTensor, w: &LossWeights) -> Result<f64> {
    let p = crate::metrics::MetricParams {
        ssim_window: w.ssim_window,
        ssim_sigma: w.ssim_sigma,
        ..Default::default()
    };
    Ok(-crate::metrics::ssim_unit(out, gt, &p)?)
}

/// The two feature-loss halves and their weighted sum.
pub struct FeatureLossTerms {
    pub perceptual: Var,
    pub style: Var,
    pub total: Var,
}

/// Perceptual (tap L1) plus style (normalized Gram L1) loss over
/// already-extracted feature taps.
pub fn vgg_loss_graph<T: Scalar>(
    g: &mut Graph<T>,
    w: &LossWeights,
    f_out: &[Var],
    f_gt: &[Var],
) -> Result<FeatureLossTerms> {
    assert_eq!(f_out.len(), f_gt.len(), "tap count mismatch");
    assert!(!f_out.is_empty(), "no feature taps");
    let mut perc: Option<Var> = None;
    let mut style: Option<Var> = None;
    for (&fo, &fg) in f_out.iter().zip(f_gt.iter()) {
        check_same_shape(g, fo, fg, "feature loss taps")?;
        let sh = g.value(fo).shape().to_vec();
        let gram_norm = 1.0 / (sh[1] * sh[2] * sh[3]) as f64;
        let d = g.sub(fo, fg);
        let l1 = g.abs(d);
        let p = g.mean_all(l1);
        perc = Some(match perc {
            Some(acc) => g.add(acc, p),
            None => p,
        });
        let go = g.gram_batch(fo);
        let gg = g.gram_batch(fg);
        let gno = g.mul_scalar(go, scalar(gram_norm));
        let gng = g.mul_scalar(gg, scalar(gram_norm));
        let gd = g.sub(gno, gng);
        let gl1 = g.abs(gd);
        let s = g.mean_all(gl1);
        style = Some(match style {
            Some(acc) => g.add(acc, s),
            None => s,
        });
    }
    let perceptual = g.mul_scalar(perc.expect("taps"), scalar(w.perceptual_weight));
    let style = g.mul_scalar(style.expect("taps"), scalar(w.style_weight));
    let total = g.add(perceptual, style);
    Ok(FeatureLossTerms {
        perceptual,
        style,
        total,
    })
}

/// Perceptual + style loss between a composited output and the ground truth.
pub fn vgg_loss(
    out: &ImageTensor,
    gt: &ImageTensor,
    fx: &dyn FeatureExtractor<f32>,
    w: &LossWeights,
) -> Result<f64> {
    let mut g = Graph::<f32>::inference();
    let vo = image_node(&mut g, out);
    let vg = image_node(&mut g, gt);
    check_same_shape(&g, vo, vg, "feature loss images")?;
    let fo = fx.features(&mut g, vo);
    let fg = fx.features(&mut g, vg);
    let terms = vgg_loss_graph(&mut g, w, &fo, &fg)?;
    Ok(g.scalar_value(terms.total) as f64)
}

/// Graph handles of every objective term; disabled terms are `None`.
pub struct TotalLossVars {
    pub total: Var,
    /// One dice node per stage, in stage order.
    pub dice: Vec<Var>,
    pub rs: Option<RsTerms>,
    pub gs: Option<Var>,
    pub ssim: Option<Var>,
    pub vgg: Option<FeatureLossTerms>,
}

/// Evaluated per-term values for logging; disabled terms read 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub dice: Vec<f64>,
    pub rs: f64,
    pub gs: f64,
    pub ssim: f64,
    pub perceptual: f64,
    pub style: f64,
    pub total: f64,
}

impl TotalLossVars {
    pub fn breakdown<T: Scalar>(&self, g: &Graph<T>) -> LossBreakdown {
        let read = |v: Var| g.scalar_value(v).to_f64().unwrap_or(f64::NAN);
        LossBreakdown {
            dice: self.dice.iter().map(|&d| read(d)).collect(),
            rs: self.rs.as_ref().map_or(0.0, |t| read(t.total)),
            gs: self.gs.map_or(0.0, read),
            ssim: self.ssim.map_or(0.0, read),
            perceptual: self.vgg.as_ref().map_or(0.0, |t| read(t.perceptual)),
            style: self.vgg.as_ref().map_or(0.0, |t| read(t.style)),
            total: read(self.total),
        }
    }
}

/// Full objective: one dice term per stage plus the reconstruction terms
/// (RS, GS, negative SSIM, perceptual + style) of the final stage only.
pub fn total_loss_graph<T: Scalar>(
    g: &mut Graph<T>,
    w: &LossWeights,
    fx: &dyn FeatureExtractor<T>,
    stages: &[StagePredictions],
    tgt: &LossTargets,
) -> Result<TotalLossVars> {
    w.validate()?;
    if stages.is_empty() {
        return Err(Error::Config("no stages to supervise".into()));
    }
    let mut dice = Vec::with_capacity(stages.len());
    let mut total: Option<Var> = None;
    for s in stages {
        check_same_shape(g, s.mask, tgt.mask, "mask supervision")?;
        let d = dice_loss_graph(g, s.mask, tgt.mask);
        dice.push(d);
        total = Some(match total {
            Some(acc) => g.add(acc, d),
            None => d,
        });
    }
    let mut total = total.expect("at least one stage");
    let last = stages.last().unwrap();
    check_same_shape(g, last.composited, tgt.gt, "reconstruction supervision")?;
    let features = if w.rg_term || w.vgg_term {
        let fo = fx.features(g, last.composited);
        let fg = fx.features(g, tgt.gt);
        Some((fo, fg))
    } else {
        None
    };
    let rs = if w.rg_term {
        let terms = rs_loss_graph(g, w, last, tgt)?;
        total = g.add(total, terms.total);
        Some(terms)
    } else {
        None
    };
    let gs = if w.rg_term {
        let (fo, fg) = features.as_ref().unwrap();
        let l = gs_loss_graph(g, w, fo, fg)?;
        total = g.add(total, l);
        Some(l)
    } else {
        None
    };
    let ssim = if w.ssim_term {
        let l = neg_ssim_loss_graph(g, last.composited, tgt.gt, w.ssim_window, w.ssim_sigma)?;
        total = g.add(total, l);
        Some(l)
    } else {
        None
    };
    let vgg = if w.vgg_term {
        let (fo, fg) = features.as_ref().unwrap();
        let terms = vgg_loss_graph(g, w, fo, fg)?;
        total = g.add(total, terms.total);
        Some(terms)
    } else {
        None
    };
    Ok(TotalLossVars {
        total,
        dice,
        rs,
        gs,
        ssim,
        vgg,
    })
}

/// Objective value of already-rendered stage outputs against a sample.
///
/// Stages must come from a training-mode forward pass when the RS/GS terms
/// are enabled, since those supervise the intermediate predictions.
pub fn total_loss(
    stages: &[StageOutput],
    sample: &PairedSample,
    fx: &dyn FeatureExtractor<f32>,
    w: &LossWeights,
) -> Result<(f64, LossBreakdown)> {
    if stages.is_empty() {
        return Err(Error::Config("no stages to evaluate".into()));
    }
    let mut g = Graph::<f32>::inference();
    let preds: Vec<StagePredictions> = stages
        .iter()
        .map(|s| stage_predictions(&mut g, s))
        .collect();
    let tgt = targets_for(&mut g, &sample.gt, &sample.mask_gt, stages.last().unwrap())?;
    let vars = total_loss_graph(&mut g, w, fx, &preds, &tgt)?;
    let breakdown = vars.breakdown(&g);
    Ok((breakdown.total, breakdown))
}

/// Single-image `(1, 3, H, W)` constant node.
fn image_node<T: Scalar>(g: &mut Graph<T>, img: &ImageTensor) -> Var {
    let d = img.data();
    let (h, w) = (img.height(), img.width());
    let arr = Array4::from_shape_fn((1, 3, h, w), |(_, c, y, x)| scalar(d[[c, y, x]] as f64));
    g.constant(arr.into_dyn())
}

/// Single-mask `(1, 1, H, W)` constant node.
fn mask_node<T: Scalar>(g: &mut Graph<T>, mask: &MaskMap) -> Var {
    let d = mask.data();
    let arr = Array4::from_shape_fn((1, 1, mask.height(), mask.width()), |(_, _, y, x)| {
        scalar(d[[y, x]] as f64)
    });
    g.constant(arr.into_dyn())
}

/// Constant nodes mirroring an evaluated stage output.
fn stage_predictions<T: Scalar>(g: &mut Graph<T>, s: &StageOutput) -> StagePredictions {
    StagePredictions {
        mask: mask_node(g, &s.mask),
        composited: image_node(g, &s.composited),
        p1: s.p1.as_ref().map(|p| image_node(g, p)),
        p2: s.p2.as_ref().map(|p| image_node(g, p)),
    }
}

/// Targets for a sample, with resized copies matching the final stage's
/// intermediate prediction sizes when those are present.
fn targets_for<T: Scalar>(
    g: &mut Graph<T>,
    gt: &ImageTensor,
    mask_gt: &MaskMap,
    final_stage: &StageOutput,
) -> Result<LossTargets> {
    if gt.height() != mask_gt.height() || gt.width() != mask_gt.width() {
        return Err(Error::Dimension(format!(
            "ground truth {}x{} and mask {}x{} differ",
            gt.height(),
            gt.width(),
            mask_gt.height(),
            mask_gt.width()
        )));
    }
    let mut tgt = LossTargets {
        gt: image_node(g, gt),
        mask: mask_node(g, mask_gt),
        gt_p1: None,
        gt_p2: None,
        mask_p1: None,
        mask_p2: None,
    };
    if let Some(p1) = &final_stage.p1 {
        let (h, w) = (p1.height(), p1.width());
        tgt.gt_p1 = Some(image_node(g, &gt.resize_bilinear(h, w)));
        tgt.mask_p1 = Some(mask_node(g, &mask_gt.resize_bilinear(h, w)));
    }
    if let Some(p2) = &final_stage.p2 {
        let (h, w) = (p2.height(), p2.width());
        tgt.gt_p2 = Some(image_node(g, &gt.resize_bilinear(h, w)));
        tgt.mask_p2 = Some(mask_node(g, &mask_gt.resize_bilinear(h, w)));
    }
    Ok(tgt)
}
