use ndarray::{arr2, ArrayD, IxDyn};

use super::check::{grad_check, rand_array};
use super::{ConvSpec, DeconvSpec, Graph, Var};

const TOL: f64 = 1e-6;

/// Scalarize `v` by a fixed random weighting so gradients are non-uniform.
fn weighted_sum(g: &mut Graph<f64>, v: Var, seed: u64) -> Var {
    let shape: Vec<usize> = g.value(v).shape().to_vec();
    let w = g.constant(rand_array(&shape, seed, -1.0, 1.0));
    let prod = g.mul(v, w);
    g.sum_all(prod)
}

/// Shift values out of the interval around a non-differentiable kink.
fn away_from(x: ArrayD<f64>, kink: f64, margin: f64) -> ArrayD<f64> {
    x.mapv(|v| {
        if (v - kink).abs() < margin {
            v + 3.0 * margin
        } else {
            v
        }
    })
}

#[test]
fn forward_values_elementwise() {
    let mut g = Graph::<f64>::new();
    let a = g.leaf(ArrayD::from_shape_vec(IxDyn(&[2]), vec![1.0, -2.0]).unwrap());
    let b = g.leaf(ArrayD::from_shape_vec(IxDyn(&[2]), vec![3.0, 4.0]).unwrap());
    let add = g.add(a, b);
    let mul = g.mul(a, b);
    let relu = g.relu(a);
    let om = g.one_minus(a);
    assert_eq!(g.value(add).as_slice().unwrap(), &[4.0, 2.0]);
    assert_eq!(g.value(mul).as_slice().unwrap(), &[3.0, -8.0]);
    assert_eq!(g.value(relu).as_slice().unwrap(), &[1.0, 0.0]);
    assert_eq!(g.value(om).as_slice().unwrap(), &[0.0, 3.0]);
}

#[test]
fn forward_matmul_matches_ndarray() {
    let a = arr2(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
    let b = arr2(&[[7.0, 8.0, 9.0], [10.0, 11.0, 12.0]]);
    let mut g = Graph::<f64>::new();
    let va = g.leaf(a.clone().into_dyn());
    let vb = g.leaf(b.clone().into_dyn());
    let out = g.matmul(va, vb);
    assert_eq!(g.value(out).clone(), a.dot(&b).into_dyn());
}

#[test]
fn forward_conv_hand_computed() {
    // 1x1x3x3 input, single 2x2 kernel, stride 1, no padding.
    let x = ArrayD::from_shape_vec(
        IxDyn(&[1, 1, 3, 3]),
        vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0],
    )
    .unwrap();
    let w = ArrayD::from_shape_vec(IxDyn(&[1, 1, 2, 2]), vec![1.0, 0.0, 0.0, -1.0]).unwrap();
    let mut g = Graph::<f64>::new();
    let vx = g.leaf(x);
    let vw = g.leaf(w);
    let y = g.conv2d(vx, vw, None, ConvSpec { stride: 1, pad: 0 });
    // Each output is top-left minus bottom-right of the window: all -4.
    assert_eq!(g.value(y).shape(), &[1, 1, 2, 2]);
    for &v in g.value(y).iter() {
        assert!((v + 4.0).abs() < TOL);
    }
}

#[test]
fn forward_deconv_scatters_kernel() {
    // One input pixel scattered by a 2x2 kernel at stride 2.
    let x = ArrayD::from_shape_vec(IxDyn(&[1, 1, 1, 1]), vec![2.0]).unwrap();
    let w = ArrayD::from_shape_vec(IxDyn(&[1, 1, 2, 2]), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let mut g = Graph::<f64>::new();
    let vx = g.leaf(x);
    let vw = g.leaf(w);
    let y = g.conv_transpose2d(vx, vw, None, DeconvSpec { stride: 2, pad: 0 });
    assert_eq!(g.value(y).shape(), &[1, 1, 2, 2]);
    assert_eq!(g.value(y).as_slice().unwrap(), &[2.0, 4.0, 6.0, 8.0]);
}

#[test]
fn forward_adaptive_avg_covers_input() {
    // 1x1x4x4 ramp pooled to 2x2 averages disjoint quadrants.
    let x = ArrayD::from_shape_vec(IxDyn(&[1, 1, 4, 4]), (0..16).map(f64::from).collect())
        .unwrap();
    let mut g = Graph::<f64>::new();
    let vx = g.leaf(x);
    let y = g.adaptive_avg_pool2d(vx, 2, 2);
    assert_eq!(
        g.value(y).as_slice().unwrap(),
        &[2.5, 4.5, 10.5, 12.5],
        "quadrant means of a 0..16 ramp"
    );
}

#[test]
fn forward_bilinear_identity_is_exact() {
    let x = rand_array(&[1, 2, 5, 7], 11, 0.0, 1.0);
    let mut g = Graph::<f64>::new();
    let vx = g.leaf(x.clone());
    let y = g.bilinear_resize(vx, 5, 7);
    assert_eq!(g.value(y).clone(), x);
}

#[test]
fn forward_bilinear_double_midpoints() {
    // Upsampling [0, 1] by 2 with half-pixel centers: 0, 0.25, 0.75, 1.
    let x = ArrayD::from_shape_vec(IxDyn(&[1, 1, 1, 2]), vec![0.0, 1.0]).unwrap();
    let mut g = Graph::<f64>::new();
    let vx = g.leaf(x);
    let y = g.bilinear_resize(vx, 1, 4);
    let got = g.value(y).as_slice().unwrap().to_vec();
    for (a, b) in got.iter().zip([0.0, 0.25, 0.75, 1.0]) {
        assert!((a - b).abs() < TOL, "{got:?}");
    }
}

#[test]
fn forward_gram_constant_feature() {
    // A constant feature map c over N pixels has Gram entries N * c^2.
    let (c, h, w) = (3, 4, 5);
    let x = ArrayD::from_elem(IxDyn(&[1, c, h, w]), 0.5);
    let mut g = Graph::<f64>::new();
    let vx = g.leaf(x);
    let gram = g.gram_batch(vx);
    let expect = (h * w) as f64 * 0.25;
    assert_eq!(gram_shape(&g, gram), vec![1, c, c]);
    for &v in g.value(gram).iter() {
        assert!((v - expect).abs() < TOL);
    }
}

fn gram_shape(g: &Graph<f64>, v: Var) -> Vec<usize> {
    g.value(v).shape().to_vec()
}

#[test]
fn forward_cosine_normalized_bounds() {
    let x = rand_array(&[2, 6, 3, 3], 5, -1.0, 1.0);
    let mut g = Graph::<f64>::new();
    let vx = g.leaf(x);
    let sim = g.cosine_pairwise(vx, 1e-8);
    assert_eq!(g.value(sim).shape(), &[2, 9, 9]);
    for &v in g.value(sim).iter() {
        assert!((-1.0 - TOL..=1.0 + TOL).contains(&v));
    }
    // Diagonal of a pixel with itself is ~1.
    assert!((g.value(sim)[[0, 4, 4]] - 1.0).abs() < 1e-6);
}

#[test]
fn grad_elementwise_binary() {
    let a = rand_array(&[2, 3, 4], 1, -1.0, 1.0);
    let b = away_from(rand_array(&[2, 3, 4], 2, 0.5, 1.5), 0.0, 0.1);
    for (name, op) in [
        ("add", 0usize),
        ("sub", 1),
        ("mul", 2),
        ("div", 3),
    ] {
        let rep = grad_check(&[a.clone(), b.clone()], |g, vs| {
            let out = match op {
                0 => g.add(vs[0], vs[1]),
                1 => g.sub(vs[0], vs[1]),
                2 => g.mul(vs[0], vs[1]),
                _ => g.div(vs[0], vs[1]),
            };
            weighted_sum(g, out, 99)
        });
        assert!(rep.max_rel < 1e-6, "{name}: {rep:?}");
    }
}

#[test]
fn grad_elementwise_unary() {
    let base = rand_array(&[3, 5], 3, -1.0, 1.0);
    let cases: Vec<(&str, ArrayD<f64>, Box<dyn Fn(&mut Graph<f64>, Var) -> Var>)> = vec![
        ("relu", away_from(base.clone(), 0.0, 0.05), Box::new(|g, v| g.relu(v))),
        ("sigmoid", base.clone(), Box::new(|g, v| g.sigmoid(v))),
        ("sqrt", rand_array(&[3, 5], 4, 0.25, 1.25), Box::new(|g, v| g.sqrt(v))),
        ("abs", away_from(base.clone(), 0.0, 0.05), Box::new(|g, v| g.abs(v))),
        ("one_minus", base.clone(), Box::new(|g, v| g.one_minus(v))),
        ("neg", base.clone(), Box::new(|g, v| g.neg(v))),
        ("add_scalar", base.clone(), Box::new(|g, v| g.add_scalar(v, 0.7))),
        ("mul_scalar", base, Box::new(|g, v| g.mul_scalar(v, -1.3))),
    ];
    for (name, input, op) in cases {
        let rep = grad_check(&[input], |g, vs| {
            let out = op(g, vs[0]);
            weighted_sum(g, out, 98)
        });
        assert!(rep.max_rel < 1e-6, "{name}: {rep:?}");
    }
}

#[test]
fn grad_reductions() {
    let x = rand_array(&[2, 3, 4], 7, -1.0, 1.0);
    for (name, which) in [("sum_all", 0usize), ("mean_all", 1), ("per_sample", 2)] {
        let rep = grad_check(&[x.clone()], |g, vs| {
            let out = match which {
                0 => g.sum_all(vs[0]),
                1 => g.mean_all(vs[0]),
                _ => g.sum_per_sample(vs[0]),
            };
            weighted_sum(g, out, 97)
        });
        assert!(rep.max_rel < 1e-6, "{name}: {rep:?}");
    }
}

#[test]
fn grad_matmul() {
    let a = rand_array(&[3, 4], 8, -1.0, 1.0);
    let b = rand_array(&[4, 2], 9, -1.0, 1.0);
    let rep = grad_check(&[a, b], |g, vs| {
        let out = g.matmul(vs[0], vs[1]);
        weighted_sum(g, out, 96)
    });
    assert!(rep.max_rel < 1e-6, "{rep:?}");
}

#[test]
fn grad_concat_and_mask() {
    let a = rand_array(&[2, 3, 4, 4], 10, -1.0, 1.0);
    let b = rand_array(&[2, 2, 4, 4], 11, -1.0, 1.0);
    let rep = grad_check(&[a.clone(), b], |g, vs| {
        let out = g.concat_channels(vs[0], vs[1]);
        weighted_sum(g, out, 95)
    });
    assert!(rep.max_rel < 1e-6, "concat: {rep:?}");

    let m = rand_array(&[2, 1, 4, 4], 12, 0.0, 1.0);
    let rep = grad_check(&[a, m], |g, vs| {
        let out = g.mul_mask(vs[0], vs[1]);
        weighted_sum(g, out, 94)
    });
    assert!(rep.max_rel < 1e-6, "mul_mask: {rep:?}");
}

#[test]
fn grad_cosine_pairwise() {
    // Keep feature vectors clearly nonzero so the epsilon guard is inert.
    let x = rand_array(&[1, 4, 3, 3], 13, 0.3, 1.3);
    let rep = grad_check(&[x], |g, vs| {
        let out = g.cosine_pairwise(vs[0], 1e-8);
        weighted_sum(g, out, 93)
    });
    assert!(rep.max_rel < 1e-5, "{rep:?}");
}

#[test]
fn grad_gram_batch() {
    let x = rand_array(&[2, 3, 4, 4], 14, -1.0, 1.0);
    let rep = grad_check(&[x], |g, vs| {
        let out = g.gram_batch(vs[0]);
        weighted_sum(g, out, 92)
    });
    assert!(rep.max_rel < 1e-6, "{rep:?}");
}

#[test]
fn grad_instance_norm() {
    let x = rand_array(&[2, 3, 4, 5], 41, -1.0, 1.0);
    let ga = rand_array(&[3], 42, 0.5, 1.5);
    let be = rand_array(&[3], 43, -0.5, 0.5);
    let rep = grad_check(&[x, ga, be], |g, vs| {
        let out = g.instance_norm(vs[0], vs[1], vs[2], 1e-5);
        weighted_sum(g, out, 87)
    });
    assert!(rep.max_rel < 1e-5, "{rep:?}");
}

#[test]
fn instance_norm_standardizes_each_channel() {
    let mut g = Graph::<f64>::inference();
    let x = g.constant(rand_array(&[1, 2, 8, 8], 44, -3.0, 7.0));
    let ga = g.constant(ndarray::ArrayD::ones(ndarray::IxDyn(&[2])));
    let be = g.constant(ndarray::ArrayD::zeros(ndarray::IxDyn(&[2])));
    let y = g.instance_norm(x, ga, be, 1e-9);
    let v = g.value(y);
    for c in 0..2 {
        let sl = v.slice(ndarray::s![0, c, .., ..]);
        let mu: f64 = sl.sum() / 64.0;
        let var: f64 = sl.fold(0.0, |a, &q| a + (q - mu) * (q - mu)) / 64.0;
        assert!(mu.abs() < 1e-9, "channel {c} mean {mu}");
        assert!((var - 1.0).abs() < 1e-6, "channel {c} var {var}");
    }
}

#[test]
fn grad_conv2d() {
    for (stride, pad) in [(1usize, 1usize), (2, 1), (1, 0)] {
        let x = rand_array(&[2, 3, 6, 6], 15, -1.0, 1.0);
        let w = rand_array(&[4, 3, 3, 3], 16, -0.5, 0.5);
        let b = rand_array(&[4], 17, -0.5, 0.5);
        let rep = grad_check(&[x, w, b], |g, vs| {
            let out = g.conv2d(vs[0], vs[1], Some(vs[2]), ConvSpec { stride, pad });
            weighted_sum(g, out, 91)
        });
        assert!(rep.max_rel < 1e-5, "stride {stride} pad {pad}: {rep:?}");
    }
}

#[test]
fn grad_conv_transpose2d() {
    let x = rand_array(&[2, 3, 4, 4], 18, -1.0, 1.0);
    let w = rand_array(&[3, 2, 2, 2], 19, -0.5, 0.5);
    let b = rand_array(&[2], 20, -0.5, 0.5);
    let rep = grad_check(&[x, w, b], |g, vs| {
        let out = g.conv_transpose2d(vs[0], vs[1], Some(vs[2]), DeconvSpec { stride: 2, pad: 0 });
        weighted_sum(g, out, 90)
    });
    assert!(rep.max_rel < 1e-5, "{rep:?}");
}

#[test]
fn grad_pooling() {
    let x = rand_array(&[2, 2, 6, 6], 21, -1.0, 1.0);
    let rep = grad_check(&[x.clone()], |g, vs| {
        let out = g.max_pool2d(vs[0], 2, 2);
        weighted_sum(g, out, 89)
    });
    assert!(rep.max_rel < 1e-6, "max_pool2d: {rep:?}");

    let rep = grad_check(&[x.clone()], |g, vs| {
        let out = g.adaptive_avg_pool2d(vs[0], 3, 3);
        weighted_sum(g, out, 88)
    });
    assert!(rep.max_rel < 1e-6, "adaptive_avg: {rep:?}");

    let rep = grad_check(&[x.clone()], |g, vs| {
        let out = g.adaptive_max_pool2d(vs[0], 3, 3);
        weighted_sum(g, out, 87)
    });
    assert!(rep.max_rel < 1e-6, "adaptive_max: {rep:?}");

    // Uneven division exercises the overlapping-window path.
    let rep = grad_check(&[x], |g, vs| {
        let out = g.adaptive_avg_pool2d(vs[0], 4, 4);
        weighted_sum(g, out, 86)
    });
    assert!(rep.max_rel < 1e-6, "adaptive_avg overlap: {rep:?}");
}

#[test]
fn grad_bilinear_resize() {
    let x = rand_array(&[1, 2, 4, 4], 22, -1.0, 1.0);
    for (oh, ow) in [(8usize, 8usize), (2, 2), (5, 3)] {
        let rep = grad_check(&[x.clone()], |g, vs| {
            let out = g.bilinear_resize(vs[0], oh, ow);
            weighted_sum(g, out, 85)
        });
        assert!(rep.max_rel < 1e-6, "resize to {oh}x{ow}: {rep:?}");
    }
}

#[test]
fn grad_sigmoid_through_composition() {
    // A small stack resembling one network block: conv, relu, deconv,
    // sigmoid, masked blend.
    let x = rand_array(&[1, 2, 4, 4], 23, -1.0, 1.0);
    let w1 = rand_array(&[3, 2, 3, 3], 24, -0.5, 0.5);
    let w2 = rand_array(&[3, 2, 2, 2], 25, -0.5, 0.5);
    let m = rand_array(&[1, 1, 8, 8], 26, 0.0, 1.0);
    let rep = grad_check(&[x, w1, w2, m], |g, vs| {
        let h = g.conv2d(vs[0], vs[1], None, ConvSpec { stride: 1, pad: 1 });
        let h = g.relu(h);
        let h = g.conv_transpose2d(h, vs[2], None, DeconvSpec { stride: 2, pad: 0 });
        let h = g.sigmoid(h);
        let h = g.mul_mask(h, vs[3]);
        weighted_sum(g, h, 84)
    });
    assert!(rep.max_rel < 1e-5, "{rep:?}");
}

#[test]
fn backward_accumulates_shared_nodes() {
    // y = x * x + x: dy/dx = 2x + 1, checked at a point.
    let mut g = Graph::<f64>::new();
    let x = g.leaf(ArrayD::from_elem(IxDyn(&[1]), 3.0));
    let sq = g.mul(x, x);
    let y = g.add(sq, x);
    let loss = g.sum_all(y);
    g.backward(loss);
    let got = g.grad(x).unwrap()[[0]];
    assert!((got - 7.0).abs() < TOL);
}

#[test]
fn constants_get_no_gradient() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(ArrayD::from_elem(IxDyn(&[2]), 1.0));
    let c = g.constant(ArrayD::from_elem(IxDyn(&[2]), 5.0));
    let y = g.mul(x, c);
    let loss = g.sum_all(y);
    g.backward(loss);
    assert!(g.grad(c).is_none());
    assert_eq!(g.grad(x).unwrap().as_slice().unwrap(), &[5.0, 5.0]);
}

#[test]
fn inference_tape_skips_backward_closures() {
    let mut g = Graph::<f64>::inference();
    let x = g.leaf(ArrayD::from_elem(IxDyn(&[2, 2]), 1.0));
    let y = g.relu(x);
    assert!(!g.needs_grad(y));
}
