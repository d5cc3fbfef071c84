//! Graph assembly for the eraser network.
//!
//! One stage = shared backbone -> localization head (pyramid pooling +
//! sigmoid mask) and reconstruction head (skip-connected decoder with
//! intermediate multi-scale outputs). All stages bind the same parameter
//! set; stage count never changes the parameter list.

use crate::graph::{ConvSpec, DeconvSpec, Graph, Var};
use crate::model::params::{Bound, Initializer, ParamStore};
use crate::model::ModelConfig;

/// Differentiable handles produced by one erasing stage.
pub(crate) struct StageHeads {
    /// Sigmoid text mask at input resolution, `(N, 1, H, W)`.
    pub mask: Var,
    /// Sigmoid reconstruction at input resolution, `(N, 3, H, W)`.
    pub raw: Var,
    /// Half-scale reconstruction, training mode only.
    pub p1: Option<Var>,
    /// Quarter-scale reconstruction, training mode only.
    pub p2: Option<Var>,
}

fn conv_names(prefix: &str) -> (String, String) {
    (format!("{prefix}.w"), format!("{prefix}.b"))
}

fn norm_names(prefix: &str) -> (String, String) {
    (format!("{prefix}.gamma"), format!("{prefix}.beta"))
}

/// Create every parameter tensor in a fixed order from the config seed.
///
/// Interior blocks are convolutions followed by a channel-wise instance
/// normalization with trainable affine, so they carry no conv bias (the
/// normalization would cancel it exactly). Prediction heads and the tiny
/// pyramid-branch convolutions, whose maps can be 1x1, stay plain
/// conv-plus-bias.
pub(crate) fn build_params(cfg: &ModelConfig) -> ParamStore {
    let c = cfg.base_channels;
    let half = c / 2;
    let reduce = (c / 4).max(1);
    let mut init = Initializer::new(cfg.seed);
    let mut store = ParamStore::new();

    let conv = |store: &mut ParamStore,
                    init: &mut Initializer,
                    prefix: &str,
                    co: usize,
                    ci: usize,
                    k: usize,
                    bias: f32| {
        let (wn, bn) = conv_names(prefix);
        store.push(&wn, init.conv_weight(&[co, ci, k, k], ci * k * k));
        store.push(&bn, init.bias(co, bias));
    };
    let norm_conv = |store: &mut ParamStore,
                         init: &mut Initializer,
                         prefix: &str,
                         co: usize,
                         ci: usize,
                         k: usize| {
        let (wn, _) = conv_names(prefix);
        store.push(&wn, init.conv_weight(&[co, ci, k, k], ci * k * k));
        let (gn, bn) = norm_names(prefix);
        store.push(&gn, init.bias(co, 1.0));
        store.push(&bn, init.bias(co, 0.0));
    };

    norm_conv(&mut store, &mut init, "backbone.conv1", c, 6, 3);
    norm_conv(&mut store, &mut init, "backbone.conv2", c, c, 3);
    for i in 0..cfg.num_residual_blocks {
        norm_conv(&mut store, &mut init, &format!("backbone.res{i}.conv1"), c, c, 3);
        norm_conv(&mut store, &mut init, &format!("backbone.res{i}.conv2"), c, c, 3);
    }
    for &bin in &cfg.psp_bin_sizes {
        conv(&mut store, &mut init, &format!("psp.bin{bin}"), reduce, c, 1, 0.0);
    }
    let fused_in = c + cfg.psp_bin_sizes.len() * reduce;
    norm_conv(&mut store, &mut init, "psp.fuse", c, fused_in, 1);
    // Zero bias starts masks at one half. Starting lower risks a collapse:
    // the preservation terms favor an all-zero mask while the untrained
    // reconstruction is poor, and a saturated sigmoid never recovers.
    conv(&mut store, &mut init, "tln.mask", 1, c, 3, 0.0);
    norm_conv(&mut store, &mut init, "brn.fuse0", c, 2 * c, 3);
    conv(&mut store, &mut init, "brn.p2", 3, c, 3, 0.0);
    // Transposed-conv weights are stored (Ci, Co, k, k).
    let (wn, _) = conv_names("brn.deconv1");
    store.push(&wn, init.conv_weight(&[c, c, 2, 2], c * 4));
    let (gn, bn) = norm_names("brn.deconv1");
    store.push(&gn, init.bias(c, 1.0));
    store.push(&bn, init.bias(c, 0.0));
    norm_conv(&mut store, &mut init, "brn.fuse1", c, 2 * c, 3);
    conv(&mut store, &mut init, "brn.p1", 3, c, 3, 0.0);
    let (wn, _) = conv_names("brn.deconv2");
    store.push(&wn, init.conv_weight(&[c, half, 2, 2], c * 4));
    let (gn, bn) = norm_names("brn.deconv2");
    store.push(&gn, init.bias(half, 1.0));
    store.push(&bn, init.bias(half, 0.0));
    norm_conv(&mut store, &mut init, "brn.fuse2", half, half + 6, 3);
    conv(&mut store, &mut init, "brn.out", 3, half, 3, 0.0);
    store
}

const NORM_EPS: f64 = 1e-5;

fn conv_block(g: &mut Graph<f32>, b: &Bound, name: &str, x: Var, spec: ConvSpec) -> Var {
    let (wn, bn) = conv_names(name);
    g.conv2d(x, b.var(&wn), Some(b.var(&bn)), spec)
}

fn norm_conv_block(g: &mut Graph<f32>, b: &Bound, name: &str, x: Var, spec: ConvSpec) -> Var {
    let (wn, _) = conv_names(name);
    let y = g.conv2d(x, b.var(&wn), None, spec);
    let (gn, bn) = norm_names(name);
    g.instance_norm(y, b.var(&gn), b.var(&bn), NORM_EPS)
}

fn norm_deconv_block(g: &mut Graph<f32>, b: &Bound, name: &str, x: Var) -> Var {
    let (wn, _) = conv_names(name);
    let y = g.conv_transpose2d(x, b.var(&wn), None, DeconvSpec { stride: 2, pad: 0 });
    let (gn, bn) = norm_names(name);
    g.instance_norm(y, b.var(&gn), b.var(&bn), NORM_EPS)
}

const S1P1: ConvSpec = ConvSpec { stride: 1, pad: 1 };
const S2P1: ConvSpec = ConvSpec { stride: 2, pad: 1 };
const S1P0: ConvSpec = ConvSpec { stride: 1, pad: 0 };

/// Shared encoder: 6-channel input to a quarter-resolution feature map,
/// returning the two shallow activations used as decoder skips.
fn backbone(g: &mut Graph<f32>, b: &Bound, cfg: &ModelConfig, x6: Var) -> (Var, Var, Var) {
    let a1 = norm_conv_block(g, b, "backbone.conv1", x6, S2P1);
    let a1 = g.relu(a1);
    let a2 = norm_conv_block(g, b, "backbone.conv2", a1, S2P1);
    let a2 = g.relu(a2);
    let mut f = a2;
    for i in 0..cfg.num_residual_blocks {
        let y = norm_conv_block(g, b, &format!("backbone.res{i}.conv1"), f, S1P1);
        let y = g.relu(y);
        let y = norm_conv_block(g, b, &format!("backbone.res{i}.conv2"), y, S1P1);
        let sum = g.add(f, y);
        f = g.relu(sum);
    }
    (f, a1, a2)
}

/// Localization head: pyramid-pooled context, fused 1x1, mask logits
/// resized to input resolution, sigmoid.
fn tln(g: &mut Graph<f32>, b: &Bound, cfg: &ModelConfig, f: Var, out_h: usize, out_w: usize) -> Var {
    let sh = g.value(f).shape().to_vec();
    let (fh, fw) = (sh[2], sh[3]);
    let mut branches = vec![f];
    for &bin in &cfg.psp_bin_sizes {
        let p = g.adaptive_avg_pool2d(f, bin, bin);
        let p = conv_block(g, b, &format!("psp.bin{bin}"), p, S1P0);
        let p = g.relu(p);
        let p = g.bilinear_resize(p, fh, fw);
        branches.push(p);
    }
    let mut cat = branches[0];
    for &p in &branches[1..] {
        cat = g.concat_channels(cat, p);
    }
    let fused = norm_conv_block(g, b, "psp.fuse", cat, S1P0);
    let fused = g.relu(fused);
    let logits = conv_block(g, b, "tln.mask", fused, S1P1);
    let logits = g.bilinear_resize(logits, out_h, out_w);
    g.sigmoid(logits)
}

/// Reconstruction head: decoder over the shared features with skip
/// connections, plus half- and quarter-scale heads in training mode.
fn brn(
    g: &mut Graph<f32>,
    b: &Bound,
    cfg: &ModelConfig,
    f: Var,
    a1: Var,
    a2: Var,
    x6: Var,
    training: bool,
) -> (Var, Option<Var>, Option<Var>) {
    let in_sh = g.value(x6).shape().to_vec();
    let (h, w) = (in_sh[2], in_sh[3]);
    let cat0 = g.concat_channels(f, a2);
    let d0 = norm_conv_block(g, b, "brn.fuse0", cat0, S1P1);
    let d0 = g.relu(d0);
    let p2 = if training {
        let raw = conv_block(g, b, "brn.p2", d0, S1P1);
        let raw = g.sigmoid(raw);
        let (th, tw) = (h / cfg.mrm_scales.1, w / cfg.mrm_scales.1);
        Some(g.bilinear_resize(raw, th, tw))
    } else {
        None
    };
    let u1 = norm_deconv_block(g, b, "brn.deconv1", d0);
    let u1 = g.relu(u1);
    let cat1 = g.concat_channels(u1, a1);
    let d1 = norm_conv_block(g, b, "brn.fuse1", cat1, S1P1);
    let d1 = g.relu(d1);
    let p1 = if training {
        let raw = conv_block(g, b, "brn.p1", d1, S1P1);
        let raw = g.sigmoid(raw);
        let (th, tw) = (h / cfg.mrm_scales.0, w / cfg.mrm_scales.0);
        Some(g.bilinear_resize(raw, th, tw))
    } else {
        None
    };
    let u2 = norm_deconv_block(g, b, "brn.deconv2", d1);
    let u2 = g.relu(u2);
    let cat2 = g.concat_channels(u2, x6);
    let d2 = norm_conv_block(g, b, "brn.fuse2", cat2, S1P1);
    let d2 = g.relu(d2);
    let raw = conv_block(g, b, "brn.out", d2, S1P1);
    (g.sigmoid(raw), p1, p2)
}

/// Run one erasing stage on a 6-channel input batch.
pub(crate) fn stage_forward(
    g: &mut Graph<f32>,
    b: &Bound,
    cfg: &ModelConfig,
    x6: Var,
    training: bool,
) -> StageHeads {
    let sh = g.value(x6).shape().to_vec();
    assert_eq!(sh[1], 6, "stage input must have 6 channels");
    let (h, w) = (sh[2], sh[3]);
    let (f, a1, a2) = backbone(g, b, cfg, x6);
    let mask = tln(g, b, cfg, f, h, w);
    let (raw, p1, p2) = brn(g, b, cfg, f, a1, a2, x6, training);
    StageHeads { mask, raw, p1, p2 }
}

/// `mask * recon + (1 - mask) * original`, broadcasting the single-channel
/// mask. Identity at mask 0 and at mask 1 is exact in f32.
pub(crate) fn compose_region(g: &mut Graph<f32>, mask: Var, recon: Var, original: Var) -> Var {
    let kept = g.mul_mask(recon, mask);
    let inv = g.one_minus(mask);
    let bg = g.mul_mask(original, inv);
    g.add(kept, bg)
}
