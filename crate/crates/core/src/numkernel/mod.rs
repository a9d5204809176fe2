//! Dense arithmetic with reverse-mode differentiation.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{finite_diff_check, relative_error, FdReport};
pub use tape::{bind, store_grads, Gradients, Tape, Var};
pub use tensor::DiffTensor;

pub(crate) use tape::sigmoid_scalar;

use crate::error::Result;

fn unary_eager(x: &DiffTensor, op: impl FnOnce(&mut Tape, Var) -> Result<Var>) -> Result<DiffTensor> {
    let mut tape = Tape::new();
    let v = tape.leaf(x);
    let out = op(&mut tape, v)?;
    Ok(tape.to_tensor(out))
}

/// Matrix product without gradient tracking.
pub fn matmul(a: &DiffTensor, b: &DiffTensor) -> Result<DiffTensor> {
    let mut tape = Tape::new();
    let (va, vb) = (tape.leaf(a), tape.leaf(b));
    let out = tape.matmul(va, vb)?;
    Ok(tape.to_tensor(out))
}

/// Softmax along the last axis.
pub fn softmax(x: &DiffTensor) -> Result<DiffTensor> {
    unary_eager(x, |t, v| t.softmax(v))
}

pub fn leaky_relu(x: &DiffTensor, slope: f64) -> Result<DiffTensor> {
    unary_eager(x, |t, v| t.leaky_relu(v, slope))
}

pub fn sigmoid(x: &DiffTensor) -> Result<DiffTensor> {
    unary_eager(x, |t, v| t.sigmoid(v))
}

#[cfg(test)]
mod tests;
