use super::Tensor;
use crate::error::{Error, Result};

fn check(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<(usize, usize)> {
    if weight.rank() != 2 {
        return Err(Error::dim(
            "fc weight",
            "rank 2 (out, in)",
            format!("rank {}", weight.rank()),
        ));
    }
    let (out_dim, in_dim) = (weight.shape()[0], weight.shape()[1]);
    if input.len() != in_dim {
        return Err(Error::dim(
            "fc input",
            format!("{in_dim} values"),
            format!("{}", input.len()),
        ));
    }
    if bias.len() != out_dim {
        return Err(Error::dim(
            "fc bias",
            format!("{out_dim} values"),
            format!("{}", bias.len()),
        ));
    }
    Ok((out_dim, in_dim))
}

/// Affine map `W x + b`. The input is treated as flat regardless of rank.
pub fn fc_forward(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (out_dim, in_dim) = check(input, weight, bias)?;
    let x = input.data();
    let w = weight.data();
    let mut out = vec![0.0; out_dim];
    for (o, out_v) in out.iter_mut().enumerate() {
        let row = &w[o * in_dim..(o + 1) * in_dim];
        let mut s = 0.0;
        for k in 0..in_dim {
            s += row[k] * x[k];
        }
        *out_v = s + bias.data()[o];
    }
    Ok(Tensor::from_vec(out))
}

/// Gradients of `fc_forward`: `(grad_input, grad_weight, grad_bias)`.
/// `grad_input` is returned with the original input shape.
pub fn fc_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    if weight.rank() != 2 {
        return Err(Error::dim(
            "fc weight",
            "rank 2 (out, in)",
            format!("rank {}", weight.rank()),
        ));
    }
    let (out_dim, in_dim) = (weight.shape()[0], weight.shape()[1]);
    if input.len() != in_dim || grad_out.len() != out_dim {
        return Err(Error::dim(
            "fc_backward",
            format!("input {in_dim}, grad_out {out_dim}"),
            format!("input {}, grad_out {}", input.len(), grad_out.len()),
        ));
    }
    let x = input.data();
    let w = weight.data();
    let g = grad_out.data();

    let mut grad_input = vec![0.0; in_dim];
    let mut grad_weight = vec![0.0; w.len()];
    for o in 0..out_dim {
        let go = g[o];
        if go == 0.0 {
            continue;
        }
        let row = &w[o * in_dim..(o + 1) * in_dim];
        let grow = &mut grad_weight[o * in_dim..(o + 1) * in_dim];
        for k in 0..in_dim {
            grad_input[k] += go * row[k];
            grow[k] = go * x[k];
        }
    }

    Ok((
        Tensor::new(input.shape().to_vec(), grad_input)?,
        Tensor::new(vec![out_dim, in_dim], grad_weight)?,
        Tensor::from_vec(g.to_vec()),
    ))
}
