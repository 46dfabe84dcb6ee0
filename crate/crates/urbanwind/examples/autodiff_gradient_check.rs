//! Builds a small computation on the tape, runs the backward pass, and
//! verifies the analytic gradients against central differences.
//!
//! Run with: cargo run --release --example autodiff_gradient_check

use rand::Rng;

use urbanwind::gradcheck::{grad_check, GradCheck};
use urbanwind::ops::{Activation, Tape};
use urbanwind::rng;
use urbanwind::Tensor;

fn main() -> urbanwind::Result<()> {
    let mut r = rng::stream(0, "example", 0);
    let mut rand_tensor = |shape: [usize; 4]| {
        let mut t = Tensor::<f64>::zeros(shape);
        for v in t.data_mut() {
            *v = r.gen_range(-0.5..0.5);
        }
        t
    };

    // a conv -> GELU -> maxpool -> upsample chain with a residual add,
    // differentiated with respect to the input and the kernel
    let input = rand_tensor([2, 3, 8, 8]);
    let kernel = rand_tensor([3, 3, 3, 3]);
    let bias = rand_tensor([1, 3, 1, 1]);

    let err = grad_check(
        |tape, vars| {
            let y = tape.conv2d(vars[0], vars[1], Some(vars[2]), 1, 1, 1)?;
            let y = tape.activation(y, Activation::Gelu);
            let y = tape.maxpool2d(y)?;
            let y = tape.upsample_nearest(y, 2)?;
            tape.add(y, vars[0])
        },
        &[input.clone(), kernel.clone(), bias.clone()],
        &GradCheck::default(),
    )?;
    println!("conv/gelu/pool/upsample residual chain: max relative error {err:.3e}");
    assert!(err < 1e-4);

    // the backward pass also exposes raw gradients directly
    let mut tape = Tape::new();
    let x = tape.leaf(input);
    let w = tape.leaf(kernel);
    let b = tape.leaf(bias);
    let y = tape.conv2d(x, w, Some(b), 1, 1, 1)?;
    let loss = tape.huber_loss(y, &Tensor::zeros([2, 3, 8, 8]), 1.0)?;
    let mut grads = tape.backward(loss);
    let gw = grads.take(w).expect("kernel gradient");
    println!(
        "huber-vs-zero kernel gradient: {} entries, first {:+.5e}",
        gw.len(),
        gw.data()[0]
    );
    println!("multiply-accumulate count on the tape: {}", tape.macs());
    Ok(())
}
