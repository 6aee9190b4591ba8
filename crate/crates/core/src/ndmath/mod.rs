//! Dense tensors, a define-by-run gradient tape, and a finite-difference
//! gradient checker.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{check_gradients, check_gradients_multi};
pub use tape::{ElementwiseOp, Gradients, Tape, Var};
pub use tensor::Tensor;

#[allow(unused_imports)]
pub(crate) use tape::{sigmoid, softplus};

use crate::error::Result;

/// Records `a · b` on `tape`.
pub fn matmul(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    tape.matmul(a, b)
}

pub fn elementwise(tape: &mut Tape, op: ElementwiseOp, args: &[Var]) -> Result<Var> {
    tape.elementwise(op, args)
}

/// Mean binary cross-entropy of `n × 1` logits against 0/1 labels.
pub fn loss_bce(tape: &mut Tape, logits: Var, labels: &[f64]) -> Result<Var> {
    tape.bce_with_logits(logits, labels)
}

/// Mean over rows of the squared Euclidean distance between `pred` and `target`.
pub fn loss_mse(tape: &mut Tape, pred: Var, target: Var) -> Result<Var> {
    tape.mse_rows(pred, target)
}

pub fn backward(tape: &Tape, root: Var) -> Result<Gradients> {
    tape.backward(root)
}
