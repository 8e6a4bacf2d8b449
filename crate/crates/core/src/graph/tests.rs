use proptest::prelude::*;

use super::*;
use crate::gradcheck::GradCheck;

fn t64(shape: Shape, data: &[f64]) -> Tensor<f64> {
    Tensor::from_vec(shape, data.to_vec()).unwrap()
}

fn pseudo(shape: Shape, seed: u64) -> Tensor<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_, _, _, _| rng.random_range(-1.0..1.0))
}

/// Weighted sum with fixed pseudo-random weights: a generic scalar probe.
fn probe(g: &mut Graph<f64>, v: Var, seed: u64) -> Result<Var> {
    let w = g.constant(pseudo(g.shape(v), seed));
    let prod = g.mul(v, w)?;
    Ok(g.sum(prod))
}

#[test]
fn conv_identity_kernel_is_identity() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(pseudo(Shape::new(1, 1, 3, 3), 1));
    let w = g.constant(Tensor::full(Shape::new(1, 1, 1, 1), 1.0));
    let b = g.constant(Tensor::zeros(Shape::new(1, 1, 1, 1)));
    let y = g.conv2d(x, w, Some(b), 1, 0).unwrap();
    assert_eq!(g.value(y), g.value(x));
}

#[test]
fn conv_all_ones_centre_is_nine() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::full(Shape::new(1, 1, 3, 3), 1.0));
    let w = g.constant(Tensor::full(Shape::new(1, 1, 3, 3), 1.0));
    let y = g.conv2d(x, w, None, 1, 1).unwrap();
    assert_eq!(g.value(y).at(0, 0, 1, 1), 9.0);
    assert_eq!(g.value(y).at(0, 0, 0, 0), 4.0);
}

#[test]
fn conv_stride_two_halves_spatial() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::zeros(Shape::new(1, 1, 8, 8)));
    let w = g.constant(Tensor::zeros(Shape::new(1, 1, 3, 3)));
    let y = g.conv2d(x, w, None, 2, 1).unwrap();
    assert_eq!(g.shape(y), Shape::new(1, 1, 4, 4));
}

#[test]
fn conv_shape_mismatch_names_both_shapes() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::zeros(Shape::new(1, 2, 4, 4)));
    let w = g.constant(Tensor::zeros(Shape::new(1, 3, 3, 3)));
    let err = g.conv2d(x, w, None, 1, 1).unwrap_err().to_string();
    assert!(
        err.contains("(1,2,4,4)") && err.contains("(1,3,3,3)"),
        "{err}"
    );
}

#[test]
fn leaky_relu_values_and_gradient() {
    let mut g = Graph::<f64>::new();
    let x = g.param(t64(Shape::new(1, 1, 1, 2), &[1.0, -2.0]));
    let y = g.leaky_relu(x, 0.01);
    assert_eq!(g.value(y).data(), &[1.0, -0.02]);

    let report = GradCheck::default()
        .with_step(1e-6)
        .run(&[t64(Shape::scalar(), &[-2.0])], |g, v| {
            Ok(g.leaky_relu(v[0], 0.01))
        })
        .unwrap();
    let worst = report.worst.unwrap();
    assert!((worst.analytic - 0.01).abs() < 1e-12);
    assert!((worst.numeric - 0.01).abs() < 1e-6);
}

#[test]
fn leaky_relu_subgradient_at_zero_is_one() {
    let mut g = Graph::<f64>::new();
    let x = g.param(Tensor::scalar(0.0));
    let y = g.leaky_relu(x, 0.2);
    assert_eq!(g.backward(y).unwrap().get(x).data(), &[1.0]);
}

#[test]
fn tanh_values_and_gradient() {
    let mut g = Graph::<f64>::new();
    let x = g.param(t64(Shape::new(1, 1, 1, 2), &[0.0, 50.0]));
    let y = g.tanh(x);
    assert_eq!(g.value(y).data()[0], 0.0);
    let sat = g.value(y).data()[1];
    assert!(sat > 0.999999 && sat <= 1.0);

    let report = GradCheck::default()
        .with_step(1e-6)
        .run(&[Tensor::scalar(0.5)], |g, v| Ok(g.tanh(v[0])))
        .unwrap();
    let w = report.worst.unwrap();
    let expected = 1.0 - 0.5f64.tanh().powi(2);
    assert!((w.analytic - expected).abs() < 1e-12);
    assert!((w.numeric - expected).abs() < 1e-6);
}

fn softmax_of(values: &[f64]) -> Vec<f64> {
    let mut g = Graph::<f64>::new();
    let x = g.constant(t64(Shape::new(1, values.len(), 1, 1), values));
    let y = g.softmax(x, 1).unwrap();
    g.value(y).data().to_vec()
}

#[test]
fn softmax_examples() {
    assert_eq!(softmax_of(&[0.0, 0.0]), vec![0.5, 0.5]);
    assert_eq!(softmax_of(&[1000.0, 1000.0]), vec![0.5, 0.5]);
    let got = softmax_of(&[1.0, 2.0, 3.0]);
    let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
    for (i, v) in got.iter().enumerate() {
        assert!((v - ((i + 1) as f64).exp() / z).abs() < 1e-9);
    }
}

#[test]
fn softmax_every_axis_normalizes() {
    let x = pseudo(Shape::new(2, 3, 4, 5), 9);
    for axis in 0..4 {
        let mut g = Graph::<f64>::new();
        let v = g.constant(x.clone());
        let y = g.softmax(v, axis).unwrap();
        let out = g.value(y);
        let dims = x.shape().0;
        let mut sums = std::collections::HashMap::new();
        for n in 0..dims[0] {
            for c in 0..dims[1] {
                for h in 0..dims[2] {
                    for w in 0..dims[3] {
                        let mut key = [n, c, h, w];
                        key[axis] = 0;
                        *sums.entry(key).or_insert(0.0) += out.at(n, c, h, w);
                    }
                }
            }
        }
        assert!(sums.values().all(|s| (s - 1.0f64).abs() < 1e-12));
    }
    let mut g = Graph::<f64>::new();
    let v = g.constant(x);
    assert!(g.softmax(v, 4).is_err());
}

proptest! {
    #[test]
    fn softmax_sums_to_one(values in prop::collection::vec(-1e3f64..1e3, 1..12)) {
        let s: f64 = softmax_of(&values).iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-6);
    }

    #[test]
    fn softmax_sums_to_one_f32(values in prop::collection::vec(-1e3f32..1e3, 1..12)) {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::from_vec(Shape::new(1, values.len(), 1, 1), values).unwrap());
        let y = g.softmax(x, 1).unwrap();
        let s: f32 = g.value(y).data().iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-6);
    }

    #[test]
    fn resize_preserves_constants(v in -10f64..10.0, h in 1usize..20, w in 1usize..20,
                                  oh in 1usize..40, ow in 1usize..40) {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::full(Shape::new(1, 2, h, w), v));
        let y = g.resize(x, oh, ow).unwrap();
        prop_assert!(g.value(y).data().iter().all(|&o| o == v));
    }

    #[test]
    fn forward_ops_stay_finite(values in prop::collection::vec(-1e6f64..1e6, 16)) {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::from_vec(Shape::new(1, 1, 4, 4), values).unwrap());
        let outs = [
            g.tanh(x),
            g.sigmoid(x),
            g.leaky_relu(x, 0.01),
            g.softmax(x, 3).unwrap(),
            g.resize(x, 7, 3).unwrap(),
            g.channel_std(x, 1e-5),
            g.smooth_l1(x, 1.0),
            g.bce_with_logits(x, Tensor::full(Shape::new(1, 1, 4, 4), 1.0)).unwrap(),
        ];
        for o in outs {
            prop_assert!(g.value(o).all_finite());
        }
    }
}

/// Independent per-pixel bilinear sample with half-pixel centers.
fn bilinear_oracle(src: &[[f64; 2]; 2], oy: usize, ox: usize, out: usize) -> f64 {
    let coord = |o: usize| {
        let s = ((o as f64 + 0.5) * 2.0 / out as f64 - 0.5).max(0.0);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(1);
        let f = if i1 == i0 { 0.0 } else { s - i0 as f64 };
        (i0.min(1), i1, f)
    };
    let (y0, y1, fy) = coord(oy);
    let (x0, x1, fx) = coord(ox);
    (1.0 - fy) * (1.0 - fx) * src[y0][x0]
        + (1.0 - fy) * fx * src[y0][x1]
        + fy * (1.0 - fx) * src[y1][x0]
        + fy * fx * src[y1][x1]
}

#[test]
fn resize_two_by_two_to_four_by_four() {
    let src = [[1.0, 2.0], [3.0, 4.0]];
    let mut g = Graph::<f64>::new();
    let x = g.constant(t64(Shape::new(1, 1, 2, 2), &[1.0, 2.0, 3.0, 4.0]));
    let y = g.resize(x, 4, 4).unwrap();
    for oy in 0..4 {
        for ox in 0..4 {
            let want = bilinear_oracle(&src, oy, ox, 4);
            assert!((g.value(y).at(0, 0, oy, ox) - want).abs() < 1e-12);
        }
    }
    assert_eq!(g.value(y).at(0, 0, 0, 0), 1.0);
    assert_eq!(g.value(y).at(0, 0, 1, 1), 1.75);
}

#[test]
fn resize_shape() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::zeros(Shape::new(1, 3, 64, 64)));
    let y = g.resize(x, 16, 16).unwrap();
    assert_eq!(g.shape(y), Shape::new(1, 3, 16, 16));
    assert!(g.resize(x, 0, 3).is_err());
}

#[test]
fn concat_shapes_round_trip_and_gradient() {
    let a = pseudo(Shape::new(1, 2, 4, 4), 1);
    let b = pseudo(Shape::new(1, 3, 4, 4), 2);
    let mut g = Graph::<f64>::new();
    let va = g.param(a.clone());
    let vb = g.param(b.clone());
    let c = g.concat_channels(va, vb).unwrap();
    assert_eq!(g.shape(c), Shape::new(1, 5, 4, 4));
    assert_eq!(g.value(c).slice_channels(0, 2).unwrap(), a);
    assert_eq!(g.value(c).slice_channels(2, 3).unwrap(), b);

    let loss = g.sum(c);
    let grads = g.backward(loss).unwrap();
    assert!(grads.get(va).data().iter().all(|&v| v == 1.0));
    assert!(grads.get(vb).data().iter().all(|&v| v == 1.0));

    let odd = g.constant(Tensor::zeros(Shape::new(1, 1, 3, 4)));
    assert!(g.concat_channels(va, odd).is_err());
}

#[test]
fn channel_stats_examples() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(t64(
        Shape::new(1, 2, 2, 2),
        &[0.7, 0.7, 0.7, 0.7, 1.0, 2.0, 3.0, 4.0],
    ));
    let (m, s) = g.channel_stats(x, 0.0);
    let (m, s) = (g.value(m).data(), g.value(s).data());
    assert!((m[0] - 0.7).abs() < 1e-15);
    assert_eq!(s[0], 0.0);
    assert_eq!(m[1], 2.5);
    assert!((s[1] - 1.25f64.sqrt()).abs() < 1e-15);
}

#[test]
fn channel_std_on_constant_channel_has_finite_gradient() {
    let mut g = Graph::<f64>::new();
    let x = g.param(Tensor::full(Shape::new(1, 1, 3, 3), 0.4));
    for eps in [0.0, 1e-5] {
        let s = g.channel_std(x, eps);
        let grads = g.backward(s).unwrap();
        assert!(grads.get(x).all_finite());
    }
}

#[test]
fn backward_linear_case_gives_input() {
    let xv = pseudo(Shape::new(1, 2, 3, 3), 5);
    let mut g = Graph::<f64>::new();
    let w = g.param(pseudo(Shape::new(1, 2, 3, 3), 6));
    let x = g.constant(xv.clone());
    let p = g.mul(w, x).unwrap();
    let loss = g.sum(p);
    assert_eq!(g.backward(loss).unwrap().get(w), xv);
}

#[test]
fn disconnected_parameter_gets_zero_gradient() {
    let mut g = Graph::<f64>::new();
    let used = g.param(pseudo(Shape::new(1, 1, 2, 2), 1));
    let unused = g.param(pseudo(Shape::new(1, 3, 2, 2), 2));
    let loss = g.sum(used);
    let grads = g.backward(loss).unwrap();
    assert!(!grads.reached(unused));
    assert_eq!(grads.get(unused), Tensor::zeros(Shape::new(1, 3, 2, 2)));
}

#[test]
fn non_scalar_loss_rejected() {
    let mut g = Graph::<f64>::new();
    let x = g.param(Tensor::zeros(Shape::new(1, 1, 2, 2)));
    assert!(matches!(g.backward(x), Err(Error::NotScalar(_))));
}

#[test]
fn broadcast_rules() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(Tensor::zeros(Shape::new(1, 4, 2, 2)));
    let b = g.constant(Tensor::zeros(Shape::new(1, 4, 1, 1)));
    let c = g.constant(Tensor::zeros(Shape::new(1, 3, 1, 1)));
    assert!(g.mul(a, b).is_ok());
    assert!(g.mul(a, c).is_err());
}

#[test]
fn crop_and_pad() {
    let x = pseudo(Shape::new(1, 2, 5, 6), 3);
    let mut g = Graph::<f64>::new();
    let v = g.constant(x.clone());
    let p = g.reflect_pad(v, 8, 8).unwrap();
    assert_eq!(g.value(p).at(0, 1, 5, 2), x.at(0, 1, 3, 2));
    assert_eq!(g.value(p).at(0, 0, 7, 7), x.at(0, 0, 1, 3));
    let c = g.crop(p, 5, 6).unwrap();
    assert_eq!(g.value(c), &x);
    assert!(g.reflect_pad(v, 10, 6).is_err());
}

// Finite-difference checks of each op in isolation.

fn check(inputs: &[Tensor<f64>], f: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var>) {
    let report = GradCheck::default().run(inputs, f).unwrap();
    assert!(report.passes(1e-4), "{report:?}");
}

#[test]
fn gradcheck_conv2d() {
    for &(stride, pad, k) in &[(1, 1, 3), (2, 1, 3), (1, 0, 1)] {
        let inputs = [
            pseudo(Shape::new(2, 3, 5, 5), 1),
            pseudo(Shape::new(4, 3, k, k), 2),
            pseudo(Shape::new(1, 4, 1, 1), 3),
        ];
        check(&inputs, |g, v| {
            let y = g.conv2d(v[0], v[1], Some(v[2]), stride, pad)?;
            probe(g, y, 4)
        });
    }
}

#[test]
fn gradcheck_elementwise() {
    // Keep leaky_relu inputs away from the kink.
    let x = pseudo(Shape::new(1, 2, 3, 3), 7).map(|v| if v.abs() < 0.05 { 0.3 } else { v });
    check(std::slice::from_ref(&x), |g, v| {
        let y = g.leaky_relu(v[0], 0.01);
        probe(g, y, 1)
    });
    check(std::slice::from_ref(&x), |g, v| {
        let y = g.tanh(v[0]);
        probe(g, y, 2)
    });
    check(std::slice::from_ref(&x), |g, v| {
        let y = g.sigmoid(v[0]);
        probe(g, y, 3)
    });
    check(&[x.map(|v| v * 3.0)], |g, v| {
        let y = g.smooth_l1(v[0], 1.0);
        probe(g, y, 4)
    });
    let targets = pseudo(Shape::new(1, 2, 3, 3), 8).map(|v| (v + 1.0) / 2.0);
    check(&[x], move |g, v| {
        let y = g.bce_with_logits(v[0], targets.clone())?;
        probe(g, y, 5)
    });
}

#[test]
fn gradcheck_softmax_resize_stats() {
    let x = pseudo(Shape::new(2, 3, 4, 5), 11);
    for axis in 0..4 {
        check(std::slice::from_ref(&x), |g, v| {
            let y = g.softmax(v[0], axis)?;
            probe(g, y, 12)
        });
    }
    for &(oh, ow) in &[(8, 10), (2, 2), (3, 7), (1, 1)] {
        check(std::slice::from_ref(&x), |g, v| {
            let y = g.resize(v[0], oh, ow)?;
            probe(g, y, 13)
        });
    }
    check(std::slice::from_ref(&x), |g, v| {
        let (m, s) = g.channel_stats(v[0], 1e-5);
        let both = g.concat_channels(m, s)?;
        probe(g, both, 14)
    });
}

#[test]
fn gradcheck_structural_ops() {
    let a = pseudo(Shape::new(2, 3, 5, 6), 21);
    let b = pseudo(Shape::new(2, 1, 5, 1), 22);
    check(&[a.clone(), b.clone()], |g, v| {
        let m = g.mul(v[0], v[1])?;
        let s = g.sub(m, v[1])?;
        let t = g.add(s, v[0])?;
        let p = g.reflect_pad(t, 8, 8)?;
        let c = g.crop(p, 4, 5)?;
        let sl = g.slice_channels(c, 1, 2)?;
        let cat = g.concat(&[sl, c, sl])?;
        let sc = g.scale(cat, 0.7);
        let sh = g.shift(sc, 0.1);
        probe(g, sh, 23)
    });
}
