//! Tour of the tape-based automatic differentiation core: record a small
//! computation, pull gradients, and verify them against finite differences.
//!
//!     cargo run --release --example autodiff

use voxelstruct::tensor::{gradient_check, Tape, Tensor, GRADCHECK_EPS};

fn main() -> voxelstruct::Result<()> {
    // Forward: y = sigmoid(conv3d(x, k)) reduced to a scalar.
    let mut tape = Tape::new();
    let x = tape.watch(
        &Tensor::from_vec(
            vec![1, 1, 4, 4, 4],
            (0..64).map(|i| (i as f64 * 0.37).sin()).collect(),
        )?
        .tracked(),
    );
    let k = tape.watch(
        &Tensor::from_vec(
            vec![2, 1, 3, 3, 3],
            (0..54).map(|i| (i as f64 * 0.11).cos() * 0.3).collect(),
        )?
        .tracked(),
    );
    let conv = tape.conv3d(&x, &k, 1, 1)?;
    let act = tape.sigmoid(&conv);
    let loss = tape.mean(&act);
    println!("loss = {:.6}", loss.item());

    // Backward consumes the tape and fills per-leaf gradient buffers.
    let grads = tape.backward(&loss)?;
    let gx = grads.wrt(&x).expect("gradient for x");
    let gk = grads.wrt(&k).expect("gradient for k");
    println!(
        "d(loss)/dx: {} values, first = {:+.6}",
        gx.len(),
        gx[0]
    );
    println!(
        "d(loss)/dk: {} values, first = {:+.6}",
        gk.len(),
        gk[0]
    );

    // The same computation as a closure, checked against central finite
    // differences coordinate by coordinate.
    let k_const = Tensor::from_vec(
        vec![2, 1, 3, 3, 3],
        (0..54).map(|i| (i as f64 * 0.11).cos() * 0.3).collect(),
    )?;
    let x0 = Tensor::from_vec(
        vec![1, 1, 4, 4, 4],
        (0..64).map(|i| (i as f64 * 0.37).sin()).collect(),
    )?;
    let err = gradient_check(
        |tape, x| {
            let k = tape.watch(&k_const);
            let conv = tape.conv3d(x, &k, 1, 1)?;
            let act = tape.sigmoid(&conv);
            Ok(tape.mean(&act))
        },
        &x0,
        GRADCHECK_EPS,
    )?;
    println!("worst relative gradient error vs finite differences: {err:.2e}");
    assert!(err <= 1e-6);

    // Max-pooling routes gradient only to each window's argmax element.
    let mut tape = Tape::new();
    let x = tape.watch(
        &Tensor::from_vec(vec![1, 1, 2, 2, 2], vec![1.0, 5.0, 2.0, 0.5, 3.0, 4.0, 2.5, 1.5])?
            .tracked(),
    );
    let pooled = tape.maxpool3d(&x, 2)?;
    let loss = tape.sum(&pooled);
    let grads = tape.backward(&loss)?;
    println!("maxpool gradient (one-hot): {:?}", grads.wrt(&x).unwrap());
    Ok(())
}
