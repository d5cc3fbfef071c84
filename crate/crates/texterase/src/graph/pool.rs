//! Pooling operations over `(N, C, H, W)` tensors.

use ndarray::{Array4, ArrayD, Dimension, Ix4};

use super::{scalar, Grads, Graph, Scalar, Var};

/// Window `[start, end)` along one axis for adaptive pooling: output cell
/// `i` of `out` covers `floor(i*in/out)` to `ceil((i+1)*in/out)`.
fn adaptive_window(i: usize, in_len: usize, out_len: usize) -> (usize, usize) {
    let start = i * in_len / out_len;
    let end = ((i + 1) * in_len).div_ceil(out_len);
    (start, end)
}

impl<T: Scalar> Graph<T> {
    /// Max pooling with square window `k` and the given stride.
    pub fn max_pool2d(&mut self, x: Var, k: usize, stride: usize) -> Var {
        let v = self.value(x).view().into_dimensionality::<Ix4>().unwrap();
        let (n, c, h, w) = (v.shape()[0], v.shape()[1], v.shape()[2], v.shape()[3]);
        assert!(h >= k && w >= k, "max_pool2d: input smaller than window");
        let oh = (h - k) / stride + 1;
        let ow = (w - k) / stride + 1;
        let mut out = Array4::zeros((n, c, oh, ow));
        let mut argmax = vec![0usize; n * c * oh * ow];
        for ni in 0..n {
            for ci in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let (mut best, mut at) = (T::neg_infinity(), 0usize);
                        for dy in 0..k {
                            for dx in 0..k {
                                let (iy, ix) = (oy * stride + dy, ox * stride + dx);
                                let val = v[[ni, ci, iy, ix]];
                                if val > best {
                                    best = val;
                                    at = iy * w + ix;
                                }
                            }
                        }
                        out[[ni, ci, oy, ox]] = best;
                        argmax[((ni * c + ci) * oh + oy) * ow + ox] = at;
                    }
                }
            }
        }
        let needs = self.needs_grad(x);
        let in_shape = v.raw_dim();
        self.push_op(
            out.into_dyn(),
            &[x],
            Box::new(move |_, g, gr: &mut Grads<T>| {
                if !needs {
                    return;
                }
                let mut dx = ArrayD::<T>::zeros(in_shape.clone().into_dyn());
                {
                    let mut dx4 = dx.view_mut().into_dimensionality::<Ix4>().unwrap();
                    let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
                    for ni in 0..n {
                        for ci in 0..c {
                            for oy in 0..oh {
                                for ox in 0..ow {
                                    let at = argmax[((ni * c + ci) * oh + oy) * ow + ox];
                                    let (iy, ix) = (at / w, at % w);
                                    dx4[[ni, ci, iy, ix]] =
                                        dx4[[ni, ci, iy, ix]] + g4[[ni, ci, oy, ox]];
                                }
                            }
                        }
                    }
                }
                gr.accum(x.0, dx);
            }),
        )
    }

    /// Average pooling to a fixed `out_h x out_w` grid with PyTorch-style
    /// overlapping windows.
    pub fn adaptive_avg_pool2d(&mut self, x: Var, out_h: usize, out_w: usize) -> Var {
        let v = self.value(x).view().into_dimensionality::<Ix4>().unwrap();
        let (n, c, h, w) = (v.shape()[0], v.shape()[1], v.shape()[2], v.shape()[3]);
        assert!(out_h >= 1 && out_w >= 1 && h >= out_h && w >= out_w);
        let mut out = Array4::zeros((n, c, out_h, out_w));
        for oy in 0..out_h {
            let (y0, y1) = adaptive_window(oy, h, out_h);
            for ox in 0..out_w {
                let (x0, x1) = adaptive_window(ox, w, out_w);
                let area = scalar::<T>(((y1 - y0) * (x1 - x0)) as f64);
                for ni in 0..n {
                    for ci in 0..c {
                        let mut acc = T::zero();
                        for iy in y0..y1 {
                            for ix in x0..x1 {
                                acc = acc + v[[ni, ci, iy, ix]];
                            }
                        }
                        out[[ni, ci, oy, ox]] = acc / area;
                    }
                }
            }
        }
        let needs = self.needs_grad(x);
        let in_shape = v.raw_dim();
        self.push_op(
            out.into_dyn(),
            &[x],
            Box::new(move |_, g, gr: &mut Grads<T>| {
                if !needs {
                    return;
                }
                let mut dx = ArrayD::<T>::zeros(in_shape.clone().into_dyn());
                {
                    let mut dx4 = dx.view_mut().into_dimensionality::<Ix4>().unwrap();
                    let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
                    for oy in 0..out_h {
                        let (y0, y1) = adaptive_window(oy, h, out_h);
                        for ox in 0..out_w {
                            let (x0, x1) = adaptive_window(ox, w, out_w);
                            let area = scalar::<T>(((y1 - y0) * (x1 - x0)) as f64);
                            for ni in 0..n {
                                for ci in 0..c {
                                    let share = g4[[ni, ci, oy, ox]] / area;
                                    for iy in y0..y1 {
                                        for ix in x0..x1 {
                                            dx4[[ni, ci, iy, ix]] =
                                                dx4[[ni, ci, iy, ix]] + share;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                gr.accum(x.0, dx);
            }),
        )
    }

    /// Max pooling to a fixed `out_h x out_w` grid.
    pub fn adaptive_max_pool2d(&mut self, x: Var, out_h: usize, out_w: usize) -> Var {
        let v = self.value(x).view().into_dimensionality::<Ix4>().unwrap();
        let (n, c, h, w) = (v.shape()[0], v.shape()[1], v.shape()[2], v.shape()[3]);
        assert!(out_h >= 1 && out_w >= 1 && h >= out_h && w >= out_w);
        let mut out = Array4::zeros((n, c, out_h, out_w));
        let mut argmax = vec![0usize; n * c * out_h * out_w];
        for oy in 0..out_h {
            let (y0, y1) = adaptive_window(oy, h, out_h);
            for ox in 0..out_w {
                let (x0, x1) = adaptive_window(ox, w, out_w);
                for ni in 0..n {
                    for ci in 0..c {
                        let (mut best, mut at) = (T::neg_infinity(), 0usize);
                        for iy in y0..y1 {
                            for ix in x0..x1 {
                                let val = v[[ni, ci, iy, ix]];
                                if val > best {
                                    best = val;
                                    at = iy * w + ix;
                                }
                            }
                        }
                        out[[ni, ci, oy, ox]] = best;
                        argmax[((ni * c + ci) * out_h + oy) * out_w + ox] = at;
                    }
                }
            }
        }
        let needs = self.needs_grad(x);
        let in_shape = v.raw_dim();
        self.push_op(
            out.into_dyn(),
            &[x],
            Box::new(move |_, g, gr: &mut Grads<T>| {
                if !needs {
                    return;
                }
                let mut dx = ArrayD::<T>::zeros(in_shape.clone().into_dyn());
                {
                    let mut dx4 = dx.view_mut().into_dimensionality::<Ix4>().unwrap();
                    let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
                    for ni in 0..n {
                        for ci in 0..c {
                            for oy in 0..out_h {
                                for ox in 0..out_w {
                                    let at =
                                        argmax[((ni * c + ci) * out_h + oy) * out_w + ox];
                                    let (iy, ix) = (at / w, at % w);
                                    dx4[[ni, ci, iy, ix]] =
                                        dx4[[ni, ci, iy, ix]] + g4[[ni, ci, oy, ox]];
                                }
                            }
                        }
                    }
                }
                gr.accum(x.0, dx);
            }),
        )
    }
}
