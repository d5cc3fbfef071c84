//! Bilinear resampling with half-pixel centers (no corner alignment).

use ndarray::{Array4, ArrayD, Dimension, Ix4};

use super::{scalar, Grads, Graph, Scalar, Var};

/// Per-output-index source pair and interpolation weights along one axis.
/// Sample centers are at half-pixel positions and clamp at the borders.
pub(crate) fn lerp_table<T: Scalar>(in_len: usize, out_len: usize) -> Vec<(usize, usize, T, T)> {
    (0..out_len)
        .map(|o| {
            let src = (o as f64 + 0.5) * in_len as f64 / out_len as f64 - 0.5;
            let src = src.clamp(0.0, (in_len - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(in_len - 1);
            let frac = src - i0 as f64;
            (i0, i1, scalar(1.0 - frac), scalar(frac))
        })
        .collect()
}

impl<T: Scalar> Graph<T> {
    /// Resize `(N, C, H, W)` to `(N, C, out_h, out_w)`.
    pub fn bilinear_resize(&mut self, x: Var, out_h: usize, out_w: usize) -> Var {
        let v = self.value(x).view().into_dimensionality::<Ix4>().unwrap();
        let (n, c, h, w) = (v.shape()[0], v.shape()[1], v.shape()[2], v.shape()[3]);
        assert!(out_h >= 1 && out_w >= 1, "bilinear_resize: empty output");
        if (out_h, out_w) == (h, w) {
            // Identity resize keeps values bit-exact instead of rounding
            // through interpolation weights.
            let out = v.to_owned().into_dyn();
            return self.push_op(
                out,
                &[x],
                Box::new(move |_, g, gr: &mut Grads<T>| gr.accum(x.0, g.clone())),
            );
        }
        let ys = lerp_table::<T>(h, out_h);
        let xs = lerp_table::<T>(w, out_w);
        let mut out = Array4::zeros((n, c, out_h, out_w));
        for ni in 0..n {
            for ci in 0..c {
                for (oy, &(y0, y1, wy0, wy1)) in ys.iter().enumerate() {
                    for (ox, &(x0, x1, wx0, wx1)) in xs.iter().enumerate() {
                        let top = wx0 * v[[ni, ci, y0, x0]] + wx1 * v[[ni, ci, y0, x1]];
                        let bot = wx0 * v[[ni, ci, y1, x0]] + wx1 * v[[ni, ci, y1, x1]];
                        out[[ni, ci, oy, ox]] = wy0 * top + wy1 * bot;
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
                            for (oy, &(y0, y1, wy0, wy1)) in ys.iter().enumerate() {
                                for (ox, &(x0, x1, wx0, wx1)) in xs.iter().enumerate() {
                                    let go = g4[[ni, ci, oy, ox]];
                                    dx4[[ni, ci, y0, x0]] = dx4[[ni, ci, y0, x0]] + go * wy0 * wx0;
                                    dx4[[ni, ci, y0, x1]] = dx4[[ni, ci, y0, x1]] + go * wy0 * wx1;
                                    dx4[[ni, ci, y1, x0]] = dx4[[ni, ci, y1, x0]] + go * wy1 * wx0;
                                    dx4[[ni, ci, y1, x1]] = dx4[[ni, ci, y1, x1]] + go * wy1 * wx1;
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
