//! Finite-difference checks for every backward pass in the training substrate.

use ndarray::{Array2, Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pvrbench_core::nn::{BatchNorm1d, BatchNorm2d, Conv2d, Elu, Linear, Lstm, MaxPool2, Relu};

const EPS: f32 = 1e-2;
const TOL: f32 = 3e-2;

fn rand4(rng: &mut ChaCha8Rng, d: (usize, usize, usize, usize)) -> Array4<f32> {
    Array4::from_shape_fn(d, |_| rng.gen_range(-1.0..1.0f32))
}

fn rand2(rng: &mut ChaCha8Rng, d: (usize, usize)) -> Array2<f32> {
    Array2::from_shape_fn(d, |_| rng.gen_range(-1.0..1.0f32))
}

fn assert_close(analytic: f32, numeric: f32, scale: f32, what: &str) {
    let diff = (analytic - numeric).abs();
    assert!(
        diff <= TOL * scale.max(1.0),
        "{what}: analytic {analytic} vs numeric {numeric} (diff {diff})"
    );
}

/// Loss = sum(output * fixed random weights).
fn loss4(y: &Array4<f32>, w: &Array4<f32>) -> f32 {
    (y * w).sum()
}

fn loss2(y: &Array2<f32>, w: &Array2<f32>) -> f32 {
    (y * w).sum()
}

#[test]
fn conv2d_gradients() {
    for &(stride, pad) in &[(1usize, 0usize), (2, 1)] {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut conv = Conv2d::new(&mut rng, 2, 3, 3, stride, pad);
        let x = rand4(&mut rng, (2, 2, 6, 6));
        let y0 = conv.forward(&x, true);
        let w = rand4(&mut rng, y0.dim());
        let dx = conv.backward(&w);

        // dX check at a few positions
        for &idx in &[(0, 0, 0, 0), (1, 1, 3, 2), (0, 1, 5, 5)] {
            let mut xp = x.clone();
            xp[idx] += EPS;
            let mut xm = x.clone();
            xm[idx] -= EPS;
            let num =
                (loss4(&conv.forward_no_cache(&xp), &w) - loss4(&conv.forward_no_cache(&xm), &w))
                    / (2.0 * EPS);
            assert_close(dx[idx], num, num.abs(), &format!("conv dx stride={stride}"));
        }
        // dW check
        for flat in [0usize, 7, 20] {
            let orig = conv.weight.value.as_slice().unwrap()[flat];
            let ana = conv.weight.grad.as_slice().unwrap()[flat];
            conv.weight.value.as_slice_mut().unwrap()[flat] = orig + EPS;
            let lp = loss4(&conv.forward_no_cache(&x), &w);
            conv.weight.value.as_slice_mut().unwrap()[flat] = orig - EPS;
            let lm = loss4(&conv.forward_no_cache(&x), &w);
            conv.weight.value.as_slice_mut().unwrap()[flat] = orig;
            let num = (lp - lm) / (2.0 * EPS);
            assert_close(ana, num, num.abs(), "conv dw");
        }
    }
}

#[test]
fn batchnorm2d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut bn = BatchNorm2d::new(3);
    bn.gamma.value.mapv_inplace(|_| 1.3);
    bn.beta.value.mapv_inplace(|_| -0.2);
    let x = rand4(&mut rng, (4, 3, 3, 3));
    let y0 = bn.forward(&x, true);
    let w = rand4(&mut rng, y0.dim());
    let dx = bn.backward(&w);
    for &idx in &[(0, 0, 0, 0), (2, 1, 1, 2), (3, 2, 2, 2)] {
        let mut xp = x.clone();
        xp[idx] += EPS;
        let mut xm = x.clone();
        xm[idx] -= EPS;
        let lp = loss4(&bn.forward(&xp, true), &w);
        bn.backward(&w); // clear cache
        let lm = loss4(&bn.forward(&xm, true), &w);
        bn.backward(&w);
        let num = (lp - lm) / (2.0 * EPS);
        assert_close(dx[idx], num, num.abs(), "bn2 dx");
    }
}

#[test]
fn batchnorm1d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut bn = BatchNorm1d::new(4);
    let x = rand2(&mut rng, (6, 4));
    let y0 = bn.forward(&x, true);
    let w = rand2(&mut rng, y0.dim());
    let dx = bn.backward(&w);
    for &idx in &[(0, 0), (3, 2), (5, 3)] {
        let mut xp = x.clone();
        xp[idx] += EPS;
        let mut xm = x.clone();
        xm[idx] -= EPS;
        let lp = loss2(&bn.forward(&xp, true), &w);
        bn.backward(&w);
        let lm = loss2(&bn.forward(&xm, true), &w);
        bn.backward(&w);
        let num = (lp - lm) / (2.0 * EPS);
        assert_close(dx[idx], num, num.abs(), "bn1 dx");
    }
}

#[test]
fn linear_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut lin = Linear::new(&mut rng, 5, 3);
    let x = rand2(&mut rng, (4, 5));
    let y0 = lin.forward(&x, true);
    let w = rand2(&mut rng, y0.dim());
    let dx = lin.backward(&w);
    for &idx in &[(0, 0), (3, 4)] {
        let mut xp = x.clone();
        xp[idx] += EPS;
        let num = (loss2(&lin.forward_no_cache(&xp), &w) - loss2(&lin.forward_no_cache(&x), &w)) / EPS;
        assert_close(dx[idx], num, num.abs(), "linear dx");
    }
    let flat = 7;
    let ana = lin.weight.grad.as_slice().unwrap()[flat];
    let orig = lin.weight.value.as_slice().unwrap()[flat];
    lin.weight.value.as_slice_mut().unwrap()[flat] = orig + EPS;
    let lp = loss2(&lin.forward_no_cache(&x), &w);
    lin.weight.value.as_slice_mut().unwrap()[flat] = orig - EPS;
    let lm = loss2(&lin.forward_no_cache(&x), &w);
    let num = (lp - lm) / (2.0 * EPS);
    assert_close(ana, num, num.abs(), "linear dw");
}

#[test]
fn activation_and_pool_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = rand4(&mut rng, (2, 2, 4, 4));

    let mut relu = Relu::new();
    let y = relu.forward4(&x, true);
    let w = rand4(&mut rng, y.dim());
    let dx = relu.backward4(&w);
    for (i, (&xx, &dd)) in x.iter().zip(dx.iter()).enumerate() {
        let ww = w.as_slice().unwrap()[i];
        assert_eq!(dd, if xx > 0.0 { ww } else { 0.0 });
    }

    let mut elu = Elu::new();
    let y = elu.forward4(&x, true);
    let w = rand4(&mut rng, y.dim());
    let dx = elu.backward4(&w);
    for &idx in &[(0, 0, 0, 0), (1, 1, 2, 3)] {
        let mut xp = x.clone();
        xp[idx] += EPS;
        let mut xm = x.clone();
        xm[idx] -= EPS;
        let f = |a: &Array4<f32>| {
            loss4(&a.mapv(|v| if v > 0.0 { v } else { v.exp() - 1.0 }), &w)
        };
        let num = (f(&xp) - f(&xm)) / (2.0 * EPS);
        assert_close(dx[idx], num, num.abs(), "elu dx");
    }

    let mut pool = MaxPool2::new();
    let y = pool.forward4(&x, true);
    assert_eq!(y.dim(), (2, 2, 2, 2));
    let w = rand4(&mut rng, y.dim());
    let dx = pool.backward4(&w);
    // gradient flows only to argmax positions and sums to the output grads
    assert!((dx.sum() - w.sum()).abs() < 1e-5);
}

#[test]
fn lstm_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut lstm = Lstm::new(&mut rng, 3, 4, 2);
    let x = Array3::from_shape_fn((3, 2, 3), |_| rng.gen_range(-1.0..1.0f32));
    let y0 = lstm.forward_seq(&x, true);
    let w = Array3::from_shape_fn(y0.dim(), |_| rng.gen_range(-1.0..1.0f32));
    let dx = lstm.backward_seq(&w);

    let loss = |l: &mut Lstm, xx: &Array3<f32>| (l.forward_seq(xx, false) * &w).sum();
    for &idx in &[(0, 0, 0), (1, 1, 2), (2, 0, 1)] {
        let mut xp = x.clone();
        xp[idx] += EPS;
        let mut xm = x.clone();
        xm[idx] -= EPS;
        let num = (loss(&mut lstm, &xp) - loss(&mut lstm, &xm)) / (2.0 * EPS);
        assert_close(dx[idx], num, num.abs(), "lstm dx");
    }
    // parameter gradient spot-checks on each layer
    for li in 0..2 {
        for flat in [0usize, 5] {
            let ana = lstm.layers[li].w_ih.grad.as_slice().unwrap()[flat];
            let orig = lstm.layers[li].w_ih.value.as_slice().unwrap()[flat];
            lstm.layers[li].w_ih.value.as_slice_mut().unwrap()[flat] = orig + EPS;
            let lp = loss(&mut lstm, &x);
            lstm.layers[li].w_ih.value.as_slice_mut().unwrap()[flat] = orig - EPS;
            let lm = loss(&mut lstm, &x);
            lstm.layers[li].w_ih.value.as_slice_mut().unwrap()[flat] = orig;
            let num = (lp - lm) / (2.0 * EPS);
            assert_close(ana, num, num.abs(), "lstm dw_ih");
        }
    }
}

#[test]
fn lstm_step_matches_seq() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let lstm = Lstm::new(&mut rng, 3, 4, 2);
    let x = Array3::from_shape_fn((5, 2, 3), |_| rng.gen_range(-1.0..1.0f32));
    let mut l2 = lstm.clone();
    let seq_out = l2.forward_seq(&x, false);
    let mut state = pvrbench_core::nn::LstmState::zeros(2, 2, 4);
    for t in 0..5 {
        let y = lstm.forward_step(&x.index_axis(ndarray::Axis(0), t).to_owned(), &mut state);
        let diff = (&y - &seq_out.index_axis(ndarray::Axis(0), t)).mapv(f32::abs).sum();
        assert!(diff < 1e-5, "step/seq mismatch at t={t}: {diff}");
    }
}
