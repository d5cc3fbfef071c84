//! Convolution and transposed convolution built on im2col and gemm.
//!
//! One scatter kernel and one gather kernel serve both directions: the
//! backward pass of a convolution with respect to its input is exactly the
//! forward pass of a transposed convolution and vice versa, so `conv_fwd`,
//! `conv_bwd_input` and `conv_bwd_weight` are reused with swapped roles.

use ndarray::{s, Array2, Array3, Array4, ArrayView2, ArrayView3, ArrayView4, Axis, Ix1, Ix4};

use super::{Grads, Graph, Scalar, Var};

/// Stride and zero padding of a convolution; kernels are square.
#[derive(Clone, Copy, Debug)]
pub struct ConvSpec {
    pub stride: usize,
    pub pad: usize,
}

/// Stride and padding of a transposed convolution. The output spatial size
/// is `(in - 1) * stride + kernel - 2 * pad`.
#[derive(Clone, Copy, Debug)]
pub struct DeconvSpec {
    pub stride: usize,
    pub pad: usize,
}

fn out_size(extent: usize, k: usize, stride: usize, pad: usize) -> usize {
    assert!(extent + 2 * pad >= k, "convolution input smaller than kernel");
    (extent + 2 * pad - k) / stride + 1
}

fn dims4<T>(v: &ArrayView4<T>) -> (usize, usize, usize, usize) {
    let sh = v.shape();
    (sh[0], sh[1], sh[2], sh[3])
}

/// Valid `(out, in)` index pairs along one axis for kernel offset `ko`.
/// Out-of-range taps fall into the zero padding and are simply skipped.
fn axis_pairs(
    out_len: usize,
    in_len: usize,
    ko: usize,
    stride: usize,
    pad: usize,
) -> Vec<(usize, usize)> {
    (0..out_len)
        .filter_map(|o| {
            let i = (o * stride + ko).wrapping_sub(pad);
            (i < in_len).then_some((o, i))
        })
        .collect()
}

/// `(C, H, W) -> (C*k*k, OH*OW)` patch matrix; padding entries stay zero.
fn im2col<T: Scalar>(
    x: &ArrayView3<T>,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Array2<T> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut cols = Array2::zeros((c * k * k, oh * ow));
    for kh in 0..k {
        let ys = axis_pairs(oh, h, kh, stride, pad);
        for kw in 0..k {
            let xs = axis_pairs(ow, w, kw, stride, pad);
            for ci in 0..c {
                let row = (ci * k + kh) * k + kw;
                for &(oy, iy) in &ys {
                    let base = oy * ow;
                    for &(ox, ix) in &xs {
                        cols[[row, base + ox]] = x[[ci, iy, ix]];
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-add inverse of [`im2col`]: `(C*k*k, OH*OW) -> (C, H, W)`.
fn col2im<T: Scalar>(
    cols: &ArrayView2<T>,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Array3<T> {
    let mut x = Array3::zeros((c, h, w));
    for kh in 0..k {
        let ys = axis_pairs(oh, h, kh, stride, pad);
        for kw in 0..k {
            let xs = axis_pairs(ow, w, kw, stride, pad);
            for ci in 0..c {
                let row = (ci * k + kh) * k + kw;
                for &(oy, iy) in &ys {
                    let base = oy * ow;
                    for &(ox, ix) in &xs {
                        x[[ci, iy, ix]] = x[[ci, iy, ix]] + cols[[row, base + ox]];
                    }
                }
            }
        }
    }
    x
}

/// Correlation: `(N, Ci, H, W) with (Co, Ci, k, k) -> (N, Co, OH, OW)`.
pub(crate) fn conv_fwd<T: Scalar>(
    x: &ArrayView4<T>,
    w: &ArrayView4<T>,
    stride: usize,
    pad: usize,
) -> Array4<T> {
    let (n, ci, h, wd) = dims4(x);
    let (co, ciw, k, k2) = dims4(w);
    assert_eq!(ci, ciw, "conv: input/weight channel mismatch");
    assert_eq!(k, k2, "conv: kernel must be square");
    let oh = out_size(h, k, stride, pad);
    let ow = out_size(wd, k, stride, pad);
    let wmat = w
        .to_shape((co, ci * k * k))
        .expect("weights are standard layout");
    let mut y = Array4::zeros((n, co, oh, ow));
    for i in 0..n {
        let cols = im2col(&x.index_axis(Axis(0), i), k, stride, pad, oh, ow);
        let ymat = wmat.dot(&cols);
        y.slice_mut(s![i, .., .., ..])
            .assign(&ymat.into_shape_with_order((co, oh, ow)).unwrap());
    }
    y
}

/// Gradient of [`conv_fwd`] with respect to its input; equally the forward
/// pass of a transposed convolution of `dy` by `w`.
pub(crate) fn conv_bwd_input<T: Scalar>(
    dy: &ArrayView4<T>,
    w: &ArrayView4<T>,
    stride: usize,
    pad: usize,
    h: usize,
    wd: usize,
) -> Array4<T> {
    let (n, co, oh, ow) = dims4(dy);
    let (cow, ci, k, _) = dims4(w);
    assert_eq!(co, cow, "conv backward: channel mismatch");
    let wmat = w
        .to_shape((co, ci * k * k))
        .expect("weights are standard layout");
    let mut dx = Array4::zeros((n, ci, h, wd));
    for i in 0..n {
        let dymat = dy
            .index_axis(Axis(0), i)
            .to_shape((co, oh * ow))
            .expect("gradients are standard layout")
            .to_owned();
        let cols = wmat.t().dot(&dymat);
        dx.slice_mut(s![i, .., .., ..])
            .assign(&col2im(&cols.view(), ci, h, wd, k, stride, pad, oh, ow));
    }
    dx
}

/// Gradient of [`conv_fwd`] with respect to its weights, summed over the
/// batch: returns `(Co, Ci, k, k)`.
pub(crate) fn conv_bwd_weight<T: Scalar>(
    x: &ArrayView4<T>,
    dy: &ArrayView4<T>,
    stride: usize,
    pad: usize,
    k: usize,
) -> Array4<T> {
    let (n, ci, _, _) = dims4(x);
    let (n2, co, oh, ow) = dims4(dy);
    assert_eq!(n, n2, "conv backward: batch mismatch");
    let mut dwmat = Array2::<T>::zeros((co, ci * k * k));
    for i in 0..n {
        let cols = im2col(&x.index_axis(Axis(0), i), k, stride, pad, oh, ow);
        let dymat = dy
            .index_axis(Axis(0), i)
            .to_shape((co, oh * ow))
            .expect("gradients are standard layout")
            .to_owned();
        dwmat = dwmat + dymat.dot(&cols.t());
    }
    dwmat.into_shape_with_order((co, ci, k, k)).unwrap()
}

fn bias_grad<T: Scalar>(dy: &ArrayView4<T>) -> ndarray::Array1<T> {
    dy.sum_axis(Axis(0)).sum_axis(Axis(1)).sum_axis(Axis(1))
}

impl<T: Scalar> Graph<T> {
    /// 2-D convolution of `(N, Ci, H, W)` by weights `(Co, Ci, k, k)` with
    /// an optional `(Co,)` bias.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Var {
        let vx = self.value(x).view().into_dimensionality::<Ix4>().unwrap();
        let vw = self.value(w).view().into_dimensionality::<Ix4>().unwrap();
        let (_, _, h, wd) = dims4(&vx);
        let k = vw.shape()[2];
        let mut y = conv_fwd(&vx, &vw, spec.stride, spec.pad);
        if let Some(bv) = b {
            let vb = self.value(bv).view().into_dimensionality::<Ix1>().unwrap();
            for (co, &bias) in vb.iter().enumerate() {
                y.slice_mut(s![.., co, .., ..]).mapv_inplace(|v| v + bias);
            }
        }
        let mut parents = vec![x, w];
        if let Some(bv) = b {
            parents.push(bv);
        }
        let (nx, nw) = (self.needs_grad(x), self.needs_grad(w));
        let nb = b.map(|bv| self.needs_grad(bv)).unwrap_or(false);
        let (stride, pad) = (spec.stride, spec.pad);
        self.push_op(
            y.into_dyn(),
            &parents,
            Box::new(move |vals, g, gr: &mut Grads<T>| {
                let dy = g.view().into_dimensionality::<Ix4>().unwrap();
                if nx {
                    let vw = vals[w.0].view().into_dimensionality::<Ix4>().unwrap();
                    gr.accum(x.0, conv_bwd_input(&dy, &vw, stride, pad, h, wd).into_dyn());
                }
                if nw {
                    let vx = vals[x.0].view().into_dimensionality::<Ix4>().unwrap();
                    gr.accum(w.0, conv_bwd_weight(&vx, &dy, stride, pad, k).into_dyn());
                }
                if nb {
                    gr.accum(b.unwrap().0, bias_grad(&dy).into_dyn());
                }
            }),
        )
    }

    /// Transposed 2-D convolution of `(N, Ci, H, W)` by weights
    /// `(Ci, Co, k, k)` with an optional `(Co,)` bias.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: DeconvSpec) -> Var {
        let vx = self.value(x).view().into_dimensionality::<Ix4>().unwrap();
        let vw = self.value(w).view().into_dimensionality::<Ix4>().unwrap();
        let (_, ci, h, wd) = dims4(&vx);
        let (ciw, _, k, _) = dims4(&vw);
        assert_eq!(ci, ciw, "deconv: input/weight channel mismatch");
        assert!(h * spec.stride + k > 2 * spec.pad + spec.stride, "deconv: degenerate output");
        let oh = (h - 1) * spec.stride + k - 2 * spec.pad;
        let ow = (wd - 1) * spec.stride + k - 2 * spec.pad;
        // The deconv weight layout (Ci, Co, k, k) is the conv layout of the
        // gather kernel when input and output roles are exchanged.
        let mut y = conv_bwd_input(&vx, &vw, spec.stride, spec.pad, oh, ow);
        if let Some(bv) = b {
            let vb = self.value(bv).view().into_dimensionality::<Ix1>().unwrap();
            for (co, &bias) in vb.iter().enumerate() {
                y.slice_mut(s![.., co, .., ..]).mapv_inplace(|v| v + bias);
            }
        }
        let mut parents = vec![x, w];
        if let Some(bv) = b {
            parents.push(bv);
        }
        let (nx, nw) = (self.needs_grad(x), self.needs_grad(w));
        let nb = b.map(|bv| self.needs_grad(bv)).unwrap_or(false);
        let (stride, pad) = (spec.stride, spec.pad);
        self.push_op(
            y.into_dyn(),
            &parents,
            Box::new(move |vals, g, gr: &mut Grads<T>| {
                let dy = g.view().into_dimensionality::<Ix4>().unwrap();
                if nx {
                    let vw = vals[w.0].view().into_dimensionality::<Ix4>().unwrap();
                    gr.accum(x.0, conv_fwd(&dy, &vw, stride, pad).into_dyn());
                }
                if nw {
                    let vx = vals[x.0].view().into_dimensionality::<Ix4>().unwrap();
                    gr.accum(w.0, conv_bwd_weight(&dy, &vx, stride, pad, k).into_dyn());
                }
                if nb {
                    gr.accum(b.unwrap().0, bias_grad(&dy).into_dyn());
                }
            }),
        )
    }
}
