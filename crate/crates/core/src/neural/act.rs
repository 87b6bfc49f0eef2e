//! Rectified linear unit.

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub fn relu(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    relu_in_place(&mut out);
    out
}

pub(crate) fn relu_in_place(t: &mut Tensor) {
    for v in t.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Gradient through a ReLU given its output; zero where the unit was off.
pub fn relu_backward(grad_out: &Tensor, output: &Tensor) -> Result<Tensor> {
    if grad_out.shape() != output.shape() {
        return Err(Error::Shape(format!("gradient {:?} vs activation {:?}", grad_out.shape(), output.shape())));
    }
    let mut g = grad_out.clone();
    for (gi, a) in g.data_mut().iter_mut().zip(output.data()) {
        if *a <= 0.0 {
            *gi = 0.0;
        }
    }
    Ok(g)
}
