//! Gradient checks of op compositions that appear in the assembled model:
//! strided and grouped convolutions, pooling chains, shared variables, and
//! pass-through edges.

use rand::Rng;
use urbanwind::gradcheck::{grad_check, GradCheck};
use urbanwind::ops::{Activation, Mode};
use urbanwind::rng;
use urbanwind::Tensor;

fn rt(shape: [usize; 4], seed: u64) -> Tensor<f64> {
    let mut r = rng::stream(seed, "scratch", 0);
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = r.gen_range(-1.0..1.0);
    }
    t
}

#[test]
fn stride4_conv() {
    let err = grad_check(
        |tape, vars| tape.conv2d(vars[0], vars[1], Some(vars[2]), 4, 0, 1),
        &[rt([1, 1, 8, 8], 1), rt([1, 1, 4, 4], 2), rt([1, 1, 1, 1], 3)],
        &GradCheck::default(),
    )
    .unwrap();
    assert!(err < 1e-7, "err = {err:e}");
}

#[test]
fn maxpool_then_upsample() {
    let err = grad_check(
        |tape, vars| {
            let p = tape.maxpool2d(vars[0])?;
            let u = tape.upsample_nearest(p, 4)?;
            Ok(tape.activation(u, Activation::Gelu))
        },
        &[rt([1, 2, 8, 8], 4)],
        &GradCheck::default(),
    )
    .unwrap();
    assert!(err < 1e-5, "err = {err:e}");
}

#[test]
fn shared_var_two_paths() {
    let err = grad_check(
        |tape, vars| {
            let a = tape.conv2d(vars[0], vars[1], None, 1, 1, 1)?;
            let b = tape.activation(vars[0], Activation::Gelu);
            let c = tape.concat_channels(a, b)?;
            let d = tape.maxpool2d(c)?;
            tape.add(d, d)
        },
        &[rt([1, 2, 6, 6], 5), rt([2, 2, 3, 3], 6)],
        &GradCheck::default(),
    )
    .unwrap();
    assert!(err < 1e-5, "err = {err:e}");
}

#[test]
fn grouped_conv_stride1() {
    let err = grad_check(
        |tape, vars| tape.conv2d(vars[0], vars[1], Some(vars[2]), 1, 3, 2),
        &[rt([1, 2, 6, 6], 7), rt([2, 1, 7, 7], 8), rt([1, 2, 1, 1], 9)],
        &GradCheck::default(),
    )
    .unwrap();
    assert!(err < 1e-7, "err = {err:e}");
}

#[test]
fn dropout_eval_passthrough_chain() {
    let err = grad_check(
        |tape, vars| {
            let mut r = rng::stream(0, "d", 0);
            let x = tape.dropout2d(vars[0], 0.0, Mode::Eval, &mut r)?;
            Ok(tape.activation(x, Activation::Gelu))
        },
        &[rt([1, 2, 4, 4], 10)],
        &GradCheck::default(),
    )
    .unwrap();
    assert!(err < 1e-5, "err = {err:e}");
}

#[test]
fn conv7_pad3_on_tiny_spatial() {
    for hw in [1usize, 2] {
        let err = grad_check(
            |tape, vars| tape.conv2d(vars[0], vars[1], Some(vars[2]), 1, 3, 2),
            &[rt([1, 2, hw, hw], 11), rt([2, 1, 7, 7], 12), rt([1, 2, 1, 1], 13)],
            &GradCheck::default(),
        )
        .unwrap();
        assert!(err < 1e-7, "hw {hw} err = {err:e}");
    }
}

#[test]
fn pool_chain_to_one_and_back() {
    let err = grad_check(
        |tape, vars| {
            let mut x = tape.conv2d(vars[0], vars[1], None, 1, 1, 1)?;
            let mut outs = vec![x];
            for _ in 0..4 {
                x = tape.maxpool2d(x)?;
                outs.push(x);
            }
            let mut fused = outs[0];
            for (k, &o) in outs.iter().enumerate().skip(1) {
                let mut u = o;
                for _ in 0..k {
                    u = tape.upsample_nearest(u, 2)?;
                }
                fused = tape.add(fused, u)?;
            }
            Ok(fused)
        },
        &[rt([1, 1, 16, 16], 14), rt([1, 1, 3, 3], 15)],
        &GradCheck::default(),
    )
    .unwrap();
    assert!(err < 1e-5, "err = {err:e}");
}
