//! Build a small graph on the tape, backpropagate, and confirm the gradient
//! against central differences.

use cil::ndmath::{check_gradients, Tape, Tensor};

fn main() -> cil::Result<()> {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::matrix(2, 3, vec![0.5, -1.0, 2.0, 1.5, 0.0, -0.5])?);
    let w = tape.leaf(Tensor::matrix(3, 1, vec![0.2, -0.4, 0.1])?);
    let logits = tape.matmul(x, w)?;
    let loss = tape.bce_with_logits(logits, &[1.0, 0.0])?;
    let grads = tape.backward(loss)?;
    println!("loss {:.6}", tape.value(loss).item());
    println!("dL/dw {:?}", grads.get(w).map(|g| g.data().to_vec()));

    // same loss as a function of w alone
    let xs = tape.value(x).clone();
    let err = check_gradients(
        |t, w| {
            let x = t.constant(xs.clone());
            let z = t.matmul(x, w)?;
            let s = t.sigmoid(z);
            let sq = t.square(s);
            t.mean(sq)
        },
        &Tensor::matrix(3, 1, vec![0.2, -0.4, 0.1])?,
        1e-6,
    )?;
    println!("max relative error vs finite differences: {err:.2e}");
    Ok(())
}
