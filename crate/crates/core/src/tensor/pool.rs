use super::Tensor;
use crate::error::{Error, Result};

/// Non-overlapping max-pooling: window extents equal the stride.
/// With `truncate_remainder` the trailing partial window on either axis is
/// dropped; otherwise the extent must divide exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolParams {
    pub pt: usize,
    pub pf: usize,
    pub truncate_remainder: bool,
}

impl PoolParams {
    pub fn new(pt: usize, pf: usize, truncate_remainder: bool) -> Result<Self> {
        if pt == 0 || pf == 0 {
            return Err(Error::dim("PoolParams", "extents >= 1", format!("{pt}x{pf}")));
        }
        Ok(PoolParams {
            pt,
            pf,
            truncate_remainder,
        })
    }
}

/// Records, for every pooled output element, the flat index of the input
/// element that won its window. Ties go to the first position in row-major
/// scan order.
#[derive(Debug, Clone)]
pub struct ArgmaxMap {
    pub input_shape: Vec<usize>,
    pub output_shape: Vec<usize>,
    pub indices: Vec<usize>,
}

pub fn maxpool_forward(input: &Tensor, p: &PoolParams) -> Result<(Tensor, ArgmaxMap)> {
    if input.rank() != 3 {
        return Err(Error::dim(
            "maxpool input",
            "rank 3 (maps, T, F)",
            format!("rank {}", input.rank()),
        ));
    }
    let (maps, t, f) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    if !p.truncate_remainder {
        if t % p.pt != 0 {
            return Err(Error::Divisibility {
                axis: "time",
                extent: t,
                pool: p.pt,
            });
        }
        if f % p.pf != 0 {
            return Err(Error::Divisibility {
                axis: "frequency",
                extent: f,
                pool: p.pf,
            });
        }
    }
    let t_out = t / p.pt;
    let f_out = f / p.pf;
    if t_out == 0 || f_out == 0 {
        return Err(Error::dim(
            "maxpool output",
            "window no larger than input",
            format!("{t}x{f} pooled by {}x{}", p.pt, p.pf),
        ));
    }

    let mut out = vec![0.0; maps * t_out * f_out];
    let mut indices = vec![0usize; out.len()];
    let data = input.data();
    for m in 0..maps {
        for to in 0..t_out {
            for fo in 0..f_out {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0usize;
                for dt in 0..p.pt {
                    let ti = to * p.pt + dt;
                    let row = (m * t + ti) * f;
                    for df in 0..p.pf {
                        let fi = fo * p.pf + df;
                        let v = data[row + fi];
                        if v > best {
                            best = v;
                            best_idx = row + fi;
                        }
                    }
                }
                let o = (m * t_out + to) * f_out + fo;
                out[o] = best;
                indices[o] = best_idx;
            }
        }
    }

    let output = Tensor::new(vec![maps, t_out, f_out], out)?;
    let map = ArgmaxMap {
        input_shape: vec![maps, t, f],
        output_shape: vec![maps, t_out, f_out],
        indices,
    };
    Ok((output, map))
}

/// Routes the incoming gradient to the recorded argmax positions; every
/// other input position receives zero.
pub fn maxpool_backward(map: &ArgmaxMap, grad_out: &Tensor) -> Result<Tensor> {
    if grad_out.shape() != map.output_shape.as_slice() {
        return Err(Error::dim(
            "maxpool_backward grad_out",
            format!("{:?}", map.output_shape),
            format!("{:?}", grad_out.shape()),
        ));
    }
    let mut grad_input = Tensor::zeros(&map.input_shape);
    let gi = grad_input.data_mut();
    for (&idx, &g) in map.indices.iter().zip(grad_out.data()) {
        gi[idx] += g;
    }
    Ok(grad_input)
}
