use super::Tensor;
use crate::error::{Error, Result};

/// Classical momentum update: `v <- momentum*v - lr*g; p <- p + v`.
/// With momentum 0 this is exactly `p <- p - lr*g`.
pub fn sgd_step(
    param: &mut Tensor,
    grad: &Tensor,
    velocity: &mut Tensor,
    learning_rate: f64,
    momentum: f64,
) -> Result<()> {
    if param.shape() != grad.shape() || param.shape() != velocity.shape() {
        return Err(Error::dim(
            "sgd_step",
            format!("{:?}", param.shape()),
            format!("grad {:?}, velocity {:?}", grad.shape(), velocity.shape()),
        ));
    }
    if !grad.all_finite() {
        return Err(Error::Divergence("non-finite gradient in sgd_step".into()));
    }
    for ((p, v), &g) in param
        .data_mut()
        .iter_mut()
        .zip(velocity.data_mut().iter_mut())
        .zip(grad.data())
    {
        *v = momentum * *v - learning_rate * g;
        *p += *v;
    }
    Ok(())
}

/// Elementwise clamp to `[lo, hi]`. Values already inside the range are
/// left bit-identical.
pub fn clip_gradient(grad: &mut Tensor, lo: f64, hi: f64) {
    debug_assert!(lo < hi);
    for v in grad.data_mut() {
        if *v < lo {
            *v = lo;
        } else if *v > hi {
            *v = hi;
        }
    }
}
