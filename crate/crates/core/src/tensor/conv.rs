use super::Tensor;
use crate::error::{Error, Result};

/// Parameters of a 2-D convolution layer. The filter is laid out
/// `(out_maps, in_maps, kt, kf)` row-major; padding is symmetric
/// zero-padding per side and the stride is 1 on both axes.
///
/// Convolution is implemented as cross-correlation (no filter flip),
/// the usual ML convention.
#[derive(Debug, Clone)]
pub struct ConvParams {
    pub filter: Tensor,
    pub bias: Tensor,
    pub pad_t: usize,
    pub pad_f: usize,
}

impl ConvParams {
    pub fn new(filter: Tensor, bias: Tensor, pad_t: usize, pad_f: usize) -> Result<Self> {
        if filter.rank() != 4 {
            return Err(Error::dim(
                "ConvParams filter",
                "rank 4 (out, in, kt, kf)",
                format!("rank {}", filter.rank()),
            ));
        }
        if bias.rank() != 1 || bias.len() != filter.shape()[0] {
            return Err(Error::dim(
                "ConvParams bias",
                format!("({},)", filter.shape()[0]),
                format!("{:?}", bias.shape()),
            ));
        }
        Ok(ConvParams {
            filter,
            bias,
            pad_t,
            pad_f,
        })
    }

    pub fn out_maps(&self) -> usize {
        self.filter.shape()[0]
    }

    pub fn in_maps(&self) -> usize {
        self.filter.shape()[1]
    }

    pub fn kt(&self) -> usize {
        self.filter.shape()[2]
    }

    pub fn kf(&self) -> usize {
        self.filter.shape()[3]
    }

    pub fn param_count(&self) -> usize {
        self.filter.len() + self.bias.len()
    }
}

fn check_input(input: &Tensor, p: &ConvParams) -> Result<(usize, usize, usize, usize)> {
    if input.rank() != 3 {
        return Err(Error::dim(
            "conv2d input",
            "rank 3 (maps, T, F)",
            format!("rank {}", input.rank()),
        ));
    }
    let (cin, t, f) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    if cin != p.in_maps() {
        return Err(Error::dim(
            "conv2d input maps",
            format!("{}", p.in_maps()),
            format!("{cin}"),
        ));
    }
    if t + 2 * p.pad_t < p.kt() || f + 2 * p.pad_f < p.kf() {
        return Err(Error::dim(
            "conv2d spatial extents",
            format!("padded input >= {}x{} filter", p.kt(), p.kf()),
            format!("{}x{} with pad {}x{}", t, f, p.pad_t, p.pad_f),
        ));
    }
    let t_out = t + 2 * p.pad_t - p.kt() + 1;
    let f_out = f + 2 * p.pad_f - p.kf() + 1;
    Ok((cin, t, f, t_out * f_out))
}

/// Builds the patch matrix: one row per output position `(t', f')`, columns
/// ordered `(in_map, dt, df)` to match the filter layout. Out-of-range taps
/// (padding) stay zero.
fn im2col(input: &Tensor, p: &ConvParams, t_out: usize, f_out: usize) -> Vec<f64> {
    let (cin, t_in, f_in) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (kt, kf) = (p.kt(), p.kf());
    let cols = cin * kt * kf;
    let mut patches = vec![0.0; t_out * f_out * cols];
    let data = input.data();
    for to in 0..t_out {
        for fo in 0..f_out {
            let row = (to * f_out + fo) * cols;
            for im in 0..cin {
                let map = &data[im * t_in * f_in..(im + 1) * t_in * f_in];
                for dt in 0..kt {
                    let ti = to + dt;
                    if ti < p.pad_t || ti >= t_in + p.pad_t {
                        continue;
                    }
                    let src_row = (ti - p.pad_t) * f_in;
                    let dst = row + (im * kt + dt) * kf;
                    for df in 0..kf {
                        let fi = fo + df;
                        if fi < p.pad_f || fi >= f_in + p.pad_f {
                            continue;
                        }
                        patches[dst + df] = map[src_row + fi - p.pad_f];
                    }
                }
            }
        }
    }
    patches
}

/// Four simultaneous in-order dot products against a shared weight row.
/// Each accumulator sums strictly in index order, so every output value is
/// bit-identical to a plain sequential loop; the batching only buys ILP.
#[inline]
fn dot4(w: &[f64], a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> (f64, f64, f64, f64) {
    let n = w.len();
    let (a, b, c, d) = (&a[..n], &b[..n], &c[..n], &d[..n]);
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    for k in 0..n {
        let wk = w[k];
        s0 += wk * a[k];
        s1 += wk * b[k];
        s2 += wk * c[k];
        s3 += wk * d[k];
    }
    (s0, s1, s2, s3)
}

#[inline]
fn dot(w: &[f64], a: &[f64]) -> f64 {
    let n = w.len();
    let a = &a[..n];
    let mut s = 0.0;
    for k in 0..n {
        s += w[k] * a[k];
    }
    s
}

/// Valid cross-correlation with symmetric zero padding, accumulated over
/// input maps, plus a per-output-map bias. No activation is applied.
pub fn conv2d_forward(input: &Tensor, p: &ConvParams) -> Result<Tensor> {
    let (_, t, f, positions) = check_input(input, p)?;
    let t_out = t + 2 * p.pad_t - p.kt() + 1;
    let f_out = f + 2 * p.pad_f - p.kf() + 1;
    let cols = p.in_maps() * p.kt() * p.kf();
    let patches = im2col(input, p, t_out, f_out);

    let mut out = vec![0.0; p.out_maps() * positions];
    let wdata = p.filter.data();
    for om in 0..p.out_maps() {
        let w = &wdata[om * cols..(om + 1) * cols];
        let bias = p.bias.data()[om];
        let dst = &mut out[om * positions..(om + 1) * positions];
        let mut r = 0;
        while r + 4 <= positions {
            let base = r * cols;
            let (s0, s1, s2, s3) = dot4(
                w,
                &patches[base..],
                &patches[base + cols..],
                &patches[base + 2 * cols..],
                &patches[base + 3 * cols..],
            );
            dst[r] = s0 + bias;
            dst[r + 1] = s1 + bias;
            dst[r + 2] = s2 + bias;
            dst[r + 3] = s3 + bias;
            r += 4;
        }
        while r < positions {
            dst[r] = dot(w, &patches[r * cols..r * cols + cols]) + bias;
            r += 1;
        }
    }
    Tensor::new(vec![p.out_maps(), t_out, f_out], out)
}

/// Gradients of `conv2d_forward` with respect to input, filter and bias.
pub fn conv2d_backward(
    input: &Tensor,
    p: &ConvParams,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (cin, t, f, positions) = check_input(input, p)?;
    let t_out = t + 2 * p.pad_t - p.kt() + 1;
    let f_out = f + 2 * p.pad_f - p.kf() + 1;
    if grad_out.shape() != [p.out_maps(), t_out, f_out] {
        return Err(Error::dim(
            "conv2d_backward grad_out",
            format!("[{}, {}, {}]", p.out_maps(), t_out, f_out),
            format!("{:?}", grad_out.shape()),
        ));
    }
    let (kt, kf) = (p.kt(), p.kf());
    let cols = cin * kt * kf;
    let patches = im2col(input, p, t_out, f_out);

    let mut grad_bias = vec![0.0; p.out_maps()];
    let mut grad_filter = vec![0.0; p.filter.len()];
    let mut grad_patches = vec![0.0; patches.len()];
    let go = grad_out.data();
    for om in 0..p.out_maps() {
        let g = &go[om * positions..(om + 1) * positions];
        grad_bias[om] = g.iter().sum();
        let w = &p.filter.data()[om * cols..(om + 1) * cols];
        let gf = &mut grad_filter[om * cols..(om + 1) * cols];
        for (r, &gr) in g.iter().enumerate() {
            if gr == 0.0 {
                continue;
            }
            let patch = &patches[r * cols..(r + 1) * cols];
            let gp = &mut grad_patches[r * cols..(r + 1) * cols];
            for k in 0..cols {
                gf[k] += gr * patch[k];
                gp[k] += gr * w[k];
            }
        }
    }

    // Scatter patch gradients back onto the (unpadded) input.
    let mut grad_input = vec![0.0; input.len()];
    for to in 0..t_out {
        for fo in 0..f_out {
            let row = (to * f_out + fo) * cols;
            for im in 0..cin {
                let map = &mut grad_input[im * t * f..(im + 1) * t * f];
                for dt in 0..kt {
                    let ti = to + dt;
                    if ti < p.pad_t || ti >= t + p.pad_t {
                        continue;
                    }
                    let dst_row = (ti - p.pad_t) * f;
                    let src = row + (im * kt + dt) * kf;
                    for df in 0..kf {
                        let fi = fo + df;
                        if fi < p.pad_f || fi >= f + p.pad_f {
                            continue;
                        }
                        map[dst_row + fi - p.pad_f] += grad_patches[src + df];
                    }
                }
            }
        }
    }

    Ok((
        Tensor::new(vec![cin, t, f], grad_input)?,
        Tensor::new(p.filter.shape().to_vec(), grad_filter)?,
        Tensor::new(vec![p.out_maps()], grad_bias)?,
    ))
}
