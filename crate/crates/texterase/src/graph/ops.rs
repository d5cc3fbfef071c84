//! Elementwise, reduction and matrix operations.

use ndarray::{s, Array1, Array2, ArrayD, Axis, Dimension, Ix2, Ix4, IxDyn};

use super::{scalar, Grads, Graph, Scalar, Var};

fn same_shape<T: Scalar>(g: &Graph<T>, a: Var, b: Var, what: &str) {
    assert_eq!(
        g.value(a).shape(),
        g.value(b).shape(),
        "{what}: operand shapes differ"
    );
}

impl<T: Scalar> Graph<T> {
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        same_shape(self, a, b, "add");
        let out = self.value(a) + self.value(b);
        let (na, nb) = (self.needs_grad(a), self.needs_grad(b));
        self.push_op(
            out,
            &[a, b],
            Box::new(move |_, g, gr: &mut Grads<T>| {
                if na {
                    gr.accum(a.0, g.clone());
                }
                if nb {
                    gr.accum(b.0, g.clone());
                }
            }),
        )
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        same_shape(self, a, b, "sub");
        let out = self.value(a) - self.value(b);
        let (na, nb) = (self.needs_grad(a), self.needs_grad(b));
        self.push_op(
            out,
            &[a, b],
            Box::new(move |_, g, gr: &mut Grads<T>| {
                if na {
                    gr.accum(a.0, g.clone());
                }
                if nb {
                    gr.accum(b.0, g.mapv(|x| -x));
                }
            }),
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        same_shape(self, a, b, "mul");
        let out = self.value(a) * self.value(b);
        let (na, nb) = (self.needs_grad(a), self.needs_grad(b));
        self.push_op(
            out,
            &[a, b],
            Box::new(move |vals, g, gr: &mut Grads<T>| {
                if na {
                    gr.accum(a.0, g * &vals[b.0]);
                }
                if nb {
                    gr.accum(b.0, g * &vals[a.0]);
                }
            }),
        )
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        same_shape(self, a, b, "div");
        let out = self.value(a) / self.value(b);
        let (na, nb) = (self.needs_grad(a), self.needs_grad(b));
        self.push_op(
            out,
            &[a, b],
            Box::new(move |vals, g, gr: &mut Grads<T>| {
                if na {
                    gr.accum(a.0, g / &vals[b.0]);
                }
                if nb {
                    let vb = &vals[b.0];
                    let da = &vals[a.0] / &(vb * vb);
                    gr.accum(b.0, -(g * &da));
                }
            }),
        )
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        let out = self.value(a).mapv(|x| x + c);
        self.push_op(
            out,
            &[a],
            Box::new(move |_, g, gr: &mut Grads<T>| gr.accum(a.0, g.clone())),
        )
    }

    pub fn mul_scalar(&mut self, a: Var, c: T) -> Var {
        let out = self.value(a).mapv(|x| x * c);
        self.push_op(
            out,
            &[a],
            Box::new(move |_, g, gr: &mut Grads<T>| gr.accum(a.0, g.mapv(|x| x * c))),
        )
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.mul_scalar(a, scalar(-1.0))
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| T::one() - x);
        self.push_op(
            out,
            &[a],
            Box::new(move |_, g, gr: &mut Grads<T>| gr.accum(a.0, g.mapv(|x| -x))),
        )
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x.max(T::zero()));
        self.push_op(
            out,
            &[a],
            Box::new(move |vals, g, gr: &mut Grads<T>| {
                let mut d = g.clone();
                d.zip_mut_with(&vals[a.0], |gi, &xi| {
                    if xi <= T::zero() {
                        *gi = T::zero();
                    }
                });
                gr.accum(a.0, d);
            }),
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let one = T::one();
        let out = self.value(a).mapv(|x| one / (one + (-x).exp()));
        // Backward reads this op's own output, whose id is the next slot.
        let out_id = self.len();
        self.push_op(
            out,
            &[a],
            Box::new(move |vals, g, gr: &mut Grads<T>| {
                let d = vals[out_id].mapv(|y| y * (T::one() - y));
                gr.accum(a.0, g * &d);
            }),
        )
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x.sqrt());
        let tiny = scalar::<T>(1e-12);
        let out_id = self.len();
        self.push_op(
            out,
            &[a],
            Box::new(move |vals, g, gr: &mut Grads<T>| {
                let half = scalar::<T>(0.5);
                let d = vals[out_id].mapv(|y| half / (y + tiny));
                gr.accum(a.0, g * &d);
            }),
        )
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x.abs());
        self.push_op(
            out,
            &[a],
            Box::new(move |vals, g, gr: &mut Grads<T>| {
                let sign = vals[a.0].mapv(|x| {
                    if x > T::zero() {
                        T::one()
                    } else if x < T::zero() {
                        -T::one()
                    } else {
                        T::zero()
                    }
                });
                gr.accum(a.0, g * &sign);
            }),
        )
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let total = self.value(a).sum();
        let shape = self.value(a).raw_dim();
        self.push_op(
            ndarray::arr0(total).into_dyn(),
            &[a],
            Box::new(move |_, g, gr: &mut Grads<T>| {
                let gs = g.iter().next().copied().unwrap();
                gr.accum(a.0, ArrayD::from_elem(shape.clone(), gs));
            }),
        )
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len();
        let s = self.sum_all(a);
        self.mul_scalar(s, scalar(1.0 / n as f64))
    }

    /// Sum over every axis except the first: `(N, ...) -> (N,)`.
    pub fn sum_per_sample(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let n = va.shape()[0];
        let per = va.len() / n.max(1);
        let flat = va
            .view()
            .into_shape_with_order((n, per))
            .expect("contiguous tensor");
        let sums = flat.sum_axis(Axis(1));
        let shape = va.raw_dim();
        self.push_op(
            sums.into_dyn(),
            &[a],
            Box::new(move |_, g, gr: &mut Grads<T>| {
                let mut d = ArrayD::zeros(shape.clone());
                let mut d2 = d
                    .view_mut()
                    .into_shape_with_order((n, per))
                    .expect("contiguous tensor");
                for i in 0..n {
                    d2.row_mut(i).fill(g[[i]]);
                }
                gr.accum(a.0, d);
            }),
        )
    }

    /// Matrix product of two rank-2 nodes.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let va = self.value(a).view().into_dimensionality::<Ix2>().unwrap();
        let vb = self.value(b).view().into_dimensionality::<Ix2>().unwrap();
        let out = va.dot(&vb).into_dyn();
        let (na, nb) = (self.needs_grad(a), self.needs_grad(b));
        self.push_op(
            out,
            &[a, b],
            Box::new(move |vals, g, gr: &mut Grads<T>| {
                let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                if na {
                    let vb = vals[b.0].view().into_dimensionality::<Ix2>().unwrap();
                    gr.accum(a.0, g2.dot(&vb.t()).into_dyn());
                }
                if nb {
                    let va = vals[a.0].view().into_dimensionality::<Ix2>().unwrap();
                    gr.accum(b.0, va.t().dot(&g2).into_dyn());
                }
            }),
        )
    }

    /// Concatenate two rank-4 nodes along the channel axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Var {
        let va = self.value(a).view().into_dimensionality::<Ix4>().unwrap();
        let vb = self.value(b).view().into_dimensionality::<Ix4>().unwrap();
        assert_eq!(va.shape()[0], vb.shape()[0], "concat: batch differs");
        assert_eq!(va.shape()[2..], vb.shape()[2..], "concat: spatial differs");
        let ca = va.shape()[1];
        let out = ndarray::concatenate(Axis(1), &[va.view(), vb.view()])
            .expect("concat shapes checked")
            .into_dyn();
        let (na, nb) = (self.needs_grad(a), self.needs_grad(b));
        self.push_op(
            out,
            &[a, b],
            Box::new(move |_, g, gr: &mut Grads<T>| {
                let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
                if na {
                    gr.accum(a.0, g4.slice(s![.., ..ca, .., ..]).to_owned().into_dyn());
                }
                if nb {
                    gr.accum(b.0, g4.slice(s![.., ca.., .., ..]).to_owned().into_dyn());
                }
            }),
        )
    }

    /// Multiply an `(N, C, H, W)` node by a single-channel `(N, 1, H, W)`
    /// mask, broadcasting the mask across channels.
    pub fn mul_mask(&mut self, img: Var, mask: Var) -> Var {
        let vi = self.value(img).view().into_dimensionality::<Ix4>().unwrap();
        let vm = self
            .value(mask)
            .view()
            .into_dimensionality::<Ix4>()
            .unwrap();
        assert_eq!(vm.shape()[1], 1, "mul_mask: mask must be single-channel");
        assert_eq!(vi.shape()[0], vm.shape()[0], "mul_mask: batch differs");
        assert_eq!(vi.shape()[2..], vm.shape()[2..], "mul_mask: spatial differs");
        let mut out = vi.to_owned();
        let m = vm.index_axis(Axis(1), 0);
        for c in 0..out.shape()[1] {
            out.slice_mut(s![.., c, .., ..])
                .zip_mut_with(&m, |o, &mi| *o = *o * mi);
        }
        let (ni, nm) = (self.needs_grad(img), self.needs_grad(mask));
        self.push_op(
            out.into_dyn(),
            &[img, mask],
            Box::new(move |vals, g, gr: &mut Grads<T>| {
                let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
                let vm = vals[mask.0].view().into_dimensionality::<Ix4>().unwrap();
                if ni {
                    let mut d = g4.to_owned();
                    for c in 0..d.shape()[1] {
                        let mut dc = d.slice_mut(s![.., c, .., ..]);
                        dc.zip_mut_with(&vm.index_axis(Axis(1), 0), |x, &mi| *x = *x * mi);
                    }
                    gr.accum(img.0, d.into_dyn());
                }
                if nm {
                    let vi = vals[img.0].view().into_dimensionality::<Ix4>().unwrap();
                    let prod = &g4.to_owned() * &vi;
                    let summed = prod.sum_axis(Axis(1)).insert_axis(Axis(1));
                    gr.accum(mask.0, summed.into_dyn());
                }
            }),
        )
    }

    /// Cosine similarity between all pixel pairs of pooled feature maps.
    ///
    /// Input `(N, C, S, S)`; output `(N, S*S, S*S)` where entry `(i, j)` is
    /// the epsilon-guarded cosine of pixel feature vectors `i` and `j`.
    pub fn cosine_pairwise(&mut self, x: Var, eps: f64) -> Var {
        let v = self.value(x).view().into_dimensionality::<Ix4>().unwrap();
        let (n, c, h, w) = (v.shape()[0], v.shape()[1], v.shape()[2], v.shape()[3]);
        let p = h * w;
        let epst = scalar::<T>(eps);

        // Per sample: rows = pixels, cols = channels.
        let rows_of = move |v: &ndarray::ArrayView4<T>, sample: usize| -> Array2<T> {
            let mut rows = Array2::zeros((p, c));
            for ch in 0..c {
                for i in 0..h {
                    for j in 0..w {
                        rows[[i * w + j, ch]] = v[[sample, ch, i, j]];
                    }
                }
            }
            rows
        };

        let mut out = ArrayD::zeros(IxDyn(&[n, p, p]));
        let mut normed: Vec<(Array2<T>, Array1<T>, Array1<T>)> = Vec::with_capacity(n);
        for sample in 0..n {
            let rows = rows_of(&v, sample);
            let norms: Array1<T> = rows
                .rows()
                .into_iter()
                .map(|r| r.iter().map(|&x| x * x).fold(T::zero(), |s, x| s + x).sqrt())
                .collect();
            let radii: Array1<T> = norms.mapv(|s| s + epst);
            let mut unit = rows.clone();
            for (mut row, &r) in unit.rows_mut().into_iter().zip(radii.iter()) {
                row.mapv_inplace(|x| x / r);
            }
            let sim = unit.dot(&unit.t());
            out.slice_mut(s![sample, .., ..]).assign(&sim);
            normed.push((unit, radii, norms));
        }

        let needs = self.needs_grad(x);
        self.push_op(
            out,
            &[x],
            Box::new(move |vals, g, gr: &mut Grads<T>| {
                if !needs {
                    return;
                }
                let v = vals[x.0].view().into_dimensionality::<Ix4>().unwrap();
                let mut dx = ArrayD::<T>::zeros(v.raw_dim().into_dyn());
                {
                    let mut dx4 = dx.view_mut().into_dimensionality::<Ix4>().unwrap();
                    for sample in 0..n {
                        let (unit, radii, norms) = &normed[sample];
                        let gm = g
                            .slice(s![sample, .., ..])
                            .into_dimensionality::<Ix2>()
                            .unwrap();
                        // d/dUnit of Unit·Unitᵀ with symmetric output grad.
                        let dunit = gm.dot(unit) + gm.t().dot(unit);
                        let rows = rows_of(&v, sample);
                        for i in 0..p {
                            let r = radii[i];
                            let s_norm = norms[i];
                            let du = dunit.row(i);
                            let fi = rows.row(i);
                            // dF = dU/r - F (F·dU) / (r² s); zero-norm rows
                            // get no gradient through the normalization.
                            let dot = fi.dot(&du);
                            for ch in 0..c {
                                let mut d = du[ch] / r;
                                if s_norm > T::zero() {
                                    d = d - fi[ch] * dot / (r * r * s_norm);
                                }
                                let (yy, xx) = (i / w, i % w);
                                dx4[[sample, ch, yy, xx]] = dx4[[sample, ch, yy, xx]] + d;
                            }
                        }
                    }
                }
                gr.accum(x.0, dx);
            }),
        )
    }

    /// Per-sample Gram matrices: `(N, C, H, W) -> (N, C, C)` with
    /// `G = F Fᵀ` over the flattened `C × (H·W)` feature matrix.
    pub fn gram_batch(&mut self, x: Var) -> Var {
        let v = self.value(x).view().into_dimensionality::<Ix4>().unwrap();
        let (n, c, h, w) = (v.shape()[0], v.shape()[1], v.shape()[2], v.shape()[3]);
        let hw = h * w;
        let mut out = ArrayD::zeros(IxDyn(&[n, c, c]));
        for sample in 0..n {
            let f = v
                .slice(s![sample, .., .., ..])
                .into_shape_with_order((c, hw))
                .expect("contiguous tensor");
            out.slice_mut(s![sample, .., ..]).assign(&f.dot(&f.t()));
        }
        let needs = self.needs_grad(x);
        self.push_op(
            out,
            &[x],
            Box::new(move |vals, g, gr: &mut Grads<T>| {
                if !needs {
                    return;
                }
                let v = vals[x.0].view().into_dimensionality::<Ix4>().unwrap();
                let mut dx = ArrayD::<T>::zeros(v.raw_dim().into_dyn());
                for sample in 0..n {
                    let f = v
                        .slice(s![sample, .., .., ..])
                        .into_shape_with_order((c, hw))
                        .expect("contiguous tensor");
                    let gm = g
                        .slice(s![sample, .., ..])
                        .into_dimensionality::<Ix2>()
                        .unwrap();
                    let df = gm.dot(&f) + gm.t().dot(&f);
                    let df4 = df.into_shape_with_order((c, h, w)).unwrap();
                    dx.slice_mut(s![sample, .., .., ..]).assign(&df4);
                }
                gr.accum(x.0, dx);
            }),
        )
    }

    /// Per-sample, per-channel normalization of an `(N, C, H, W)` tensor
    /// over its spatial extent, with a trainable channel-wise affine.
    /// Batch independent, so training and inference share one code path.
    pub fn instance_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let (n, c, h, w) = {
            let xv = self
                .value(x)
                .view()
                .into_dimensionality::<Ix4>()
                .expect("instance_norm expects (N, C, H, W)");
            xv.dim()
        };
        assert_eq!(self.value(gamma).len(), c, "instance_norm: gamma length");
        assert_eq!(self.value(beta).len(), c, "instance_norm: beta length");
        let m = scalar::<T>((h * w) as f64);
        let epsv = scalar::<T>(eps);
        let mut out = ArrayD::<T>::zeros(IxDyn(&[n, c, h, w]));
        {
            let xv = self.value(x).view().into_dimensionality::<Ix4>().unwrap();
            let gv = self.value(gamma).as_slice().expect("contiguous gamma");
            let bv = self.value(beta).as_slice().expect("contiguous beta");
            let mut ov = out.view_mut().into_dimensionality::<Ix4>().unwrap();
            for ni in 0..n {
                for ci in 0..c {
                    let sl = xv.slice(s![ni, ci, .., ..]);
                    let mu = sl.sum() / m;
                    let var = sl.fold(T::zero(), |a, &v| a + (v - mu) * (v - mu)) / m;
                    let inv = T::one() / (var + epsv).sqrt();
                    let (ga, be) = (gv[ci], bv[ci]);
                    let mut dst = ov.slice_mut(s![ni, ci, .., ..]);
                    dst.zip_mut_with(&sl, |o, &v| *o = ga * (v - mu) * inv + be);
                }
            }
        }
        let (nx, ng, nb) = (
            self.needs_grad(x),
            self.needs_grad(gamma),
            self.needs_grad(beta),
        );
        self.push_op(
            out,
            &[x, gamma, beta],
            Box::new(move |vals, g, gr: &mut Grads<T>| {
                let xv = vals[x.0].view().into_dimensionality::<Ix4>().unwrap();
                let gv = vals[gamma.0].as_slice().expect("contiguous gamma");
                let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
                let mut dx = nx.then(|| ArrayD::<T>::zeros(IxDyn(&[n, c, h, w])));
                let mut dg = ng.then(|| ArrayD::<T>::zeros(IxDyn(&[c])));
                let mut db = nb.then(|| ArrayD::<T>::zeros(IxDyn(&[c])));
                for ni in 0..n {
                    for ci in 0..c {
                        let sl = xv.slice(s![ni, ci, .., ..]);
                        let go = g4.slice(s![ni, ci, .., ..]);
                        let mu = sl.sum() / m;
                        let var =
                            sl.fold(T::zero(), |a, &v| a + (v - mu) * (v - mu)) / m;
                        let inv = T::one() / (var + epsv).sqrt();
                        if let Some(db) = db.as_mut() {
                            db[ci] = db[ci] + go.sum();
                        }
                        if let Some(dg) = dg.as_mut() {
                            let s = go
                                .iter()
                                .zip(sl.iter())
                                .fold(T::zero(), |a, (&gi, &v)| a + gi * (v - mu) * inv);
                            dg[ci] = dg[ci] + s;
                        }
                        if let Some(dx) = dx.as_mut() {
                            // Normalization backward over one channel map:
                            // dx = inv * (gh - mean(gh) - xhat * mean(gh*xhat)),
                            // gh = upstream * gamma.
                            let ga = gv[ci];
                            let mut gh_mean = T::zero();
                            let mut ghx_mean = T::zero();
                            for (&gi, &v) in go.iter().zip(sl.iter()) {
                                let gh = gi * ga;
                                gh_mean = gh_mean + gh;
                                ghx_mean = ghx_mean + gh * (v - mu) * inv;
                            }
                            gh_mean = gh_mean / m;
                            ghx_mean = ghx_mean / m;
                            let mut dst = dx
                                .view_mut()
                                .into_dimensionality::<Ix4>()
                                .unwrap();
                            let mut dst = dst.slice_mut(s![ni, ci, .., ..]);
                            for ((d, &gi), &v) in
                                dst.iter_mut().zip(go.iter()).zip(sl.iter())
                            {
                                let xhat = (v - mu) * inv;
                                *d = inv * (gi * ga - gh_mean - xhat * ghx_mean);
                            }
                        }
                    }
                }
                if let Some(dx) = dx {
                    gr.accum(x.0, dx);
                }
                if let Some(dg) = dg {
                    gr.accum(gamma.0, dg);
                }
                if let Some(db) = db {
                    gr.accum(beta.0, db);
                }
            }),
        )
    }
}
