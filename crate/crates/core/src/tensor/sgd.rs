use super::Tensor;
use crate::error::Result;

/// A learned tensor with its momentum buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub velocity: Tensor,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let velocity = Tensor::zeros(value.shape());
        Param { value, velocity }
    }
}

/// Momentum SGD: `v <- momentum * v - lr * grad; value <- value + v`.
///
/// A frozen parameter is left untouched, velocity included.
pub fn sgd_update(param: &mut Param, grad: &Tensor, lr: f64, momentum: f64, frozen: bool) -> Result<()> {
    param.value.expect_same_shape("sgd_update", grad)?;
    if frozen {
        return Ok(());
    }
    for ((v, p), g) in param
        .velocity
        .data_mut()
        .iter_mut()
        .zip(param.value.data_mut().iter_mut())
        .zip(grad.data())
    {
        *v = momentum * *v - lr * g;
        *p += *v;
    }
    Ok(())
}
