//! LSTM-with-projection acoustic model: a stack of LSTMP layers over
//! per-frame feature vectors, trained frame-synchronously with truncated
//! BPTT. Hidden state is carried across chunk boundaries; gradients are
//! not. Gradients are clipped elementwise at update time.

use crate::error::{Error, Result};
use crate::tensor::{clip_gradient, log_softmax, sgd_step, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct BpttConfig {
    /// Frames per truncation chunk.
    pub chunk: usize,
    /// Utterance streams processed in parallel to form a minibatch.
    pub parallel_utterances: usize,
    pub clip_lo: f64,
    pub clip_hi: f64,
    /// Frames of future context the model sees before committing to a
    /// label: the logits at time t are scored against the label of
    /// t - output_delay.
    pub output_delay: usize,
}

impl Default for BpttConfig {
    fn default() -> Self {
        BpttConfig {
            chunk: 20,
            parallel_utterances: 40,
            clip_lo: -1.0,
            clip_hi: 1.0,
            output_delay: 5,
        }
    }
}

impl BpttConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chunk == 0 {
            return Err(Error::Domain("chunk size must be >= 1".into()));
        }
        if self.clip_lo >= self.clip_hi {
            return Err(Error::Domain(format!(
                "clip range [{}, {}] is empty",
                self.clip_lo, self.clip_hi
            )));
        }
        if self.parallel_utterances == 0 {
            return Err(Error::Domain("parallel utterances must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Peepholes {
    pub p_i: Tensor,
    pub p_f: Tensor,
    pub p_o: Tensor,
}

/// One LSTMP layer. Gate matrices act on the concatenation
/// [input; recurrent projection]; the projection maps the cell output down
/// to `proj_dim`, which is both the layer output and the recurrence.
#[derive(Debug, Clone)]
pub struct LstmpLayerParams {
    pub input_dim: usize,
    pub cell_dim: usize,
    pub proj_dim: usize,
    pub w_i: Tensor,
    pub w_f: Tensor,
    pub w_g: Tensor,
    pub w_o: Tensor,
    pub b_i: Tensor,
    pub b_f: Tensor,
    pub b_g: Tensor,
    pub b_o: Tensor,
    pub peepholes: Option<Peepholes>,
    pub proj: Tensor,
}

impl LstmpLayerParams {
    pub fn new(
        input_dim: usize,
        cell_dim: usize,
        proj_dim: usize,
        peepholes: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<LstmpLayerParams> {
        if proj_dim >= cell_dim {
            return Err(Error::Domain(format!(
                "projection dim {proj_dim} must be smaller than cell dim {cell_dim}"
            )));
        }
        let rec = input_dim + proj_dim;
        let mut mat = |rows: usize, cols: usize| -> Tensor {
            let s = (6.0 / (rows + cols) as f64).sqrt();
            Tensor::new(
                vec![rows, cols],
                (0..rows * cols)
                    .map(|_| s * (2.0 * rng.gen::<f64>() - 1.0))
                    .collect(),
            )
            .expect("layer matrix shape")
        };
        Ok(LstmpLayerParams {
            input_dim,
            cell_dim,
            proj_dim,
            w_i: mat(cell_dim, rec),
            w_f: mat(cell_dim, rec),
            w_g: mat(cell_dim, rec),
            w_o: mat(cell_dim, rec),
            b_i: Tensor::zeros(&[cell_dim]),
            // Forget gate starts open so early training can carry memory.
            b_f: Tensor::filled(&[cell_dim], 1.0),
            b_g: Tensor::zeros(&[cell_dim]),
            b_o: Tensor::zeros(&[cell_dim]),
            peepholes: peepholes.then(|| Peepholes {
                p_i: Tensor::zeros(&[cell_dim]),
                p_f: Tensor::zeros(&[cell_dim]),
                p_o: Tensor::zeros(&[cell_dim]),
            }),
            proj: mat(proj_dim, cell_dim),
        })
    }
}

#[derive(Debug, Clone)]
pub struct LayerState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct StackState {
    pub layers: Vec<LayerState>,
}

/// Everything one time step must remember for the backward pass.
#[derive(Debug, Clone)]
pub struct StepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
    m: Vec<f64>,
    h: Vec<f64>,
}

#[inline]
fn sigmoid_s(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One LSTMP cell update:
/// i,f = sigmoid gates, g = tanh candidate, c = f*c_prev + i*g,
/// o = sigmoid output gate, h = P (o * tanh c).
pub fn lstmp_step(
    params: &LstmpLayerParams,
    x: &[f64],
    state: &LayerState,
) -> Result<(LayerState, StepCache)> {
    let (cell, proj, input) = (params.cell_dim, params.proj_dim, params.input_dim);
    if x.len() != input || state.h.len() != proj || state.c.len() != cell {
        return Err(Error::dim(
            "lstmp_step",
            format!("x {input}, h {proj}, c {cell}"),
            format!("x {}, h {}, c {}", x.len(), state.h.len(), state.c.len()),
        ));
    }
    let rec = input + proj;
    let mut xh = Vec::with_capacity(rec);
    xh.extend_from_slice(x);
    xh.extend_from_slice(&state.h);

    let gate = |w: &Tensor, b: &Tensor, j: usize| -> f64 {
        let row = &w.data()[j * rec..(j + 1) * rec];
        let mut s = b.data()[j];
        for k in 0..rec {
            s += row[k] * xh[k];
        }
        s
    };

    let mut i = vec![0.0; cell];
    let mut f = vec![0.0; cell];
    let mut g = vec![0.0; cell];
    let mut c = vec![0.0; cell];
    let mut tanh_c = vec![0.0; cell];
    let mut m = vec![0.0; cell];
    for j in 0..cell {
        let (pi, pf) = match &params.peepholes {
            Some(p) => (
                p.p_i.data()[j] * state.c[j],
                p.p_f.data()[j] * state.c[j],
            ),
            None => (0.0, 0.0),
        };
        i[j] = sigmoid_s(gate(&params.w_i, &params.b_i, j) + pi);
        f[j] = sigmoid_s(gate(&params.w_f, &params.b_f, j) + pf);
        g[j] = (gate(&params.w_g, &params.b_g, j)).tanh();
        c[j] = f[j] * state.c[j] + i[j] * g[j];
    }
    let mut o = vec![0.0; cell];
    for j in 0..cell {
        let po = match &params.peepholes {
            Some(p) => p.p_o.data()[j] * c[j],
            None => 0.0,
        };
        o[j] = sigmoid_s(gate(&params.w_o, &params.b_o, j) + po);
        tanh_c[j] = c[j].tanh();
        m[j] = o[j] * tanh_c[j];
    }
    let mut h = vec![0.0; proj];
    for (j, h_j) in h.iter_mut().enumerate() {
        let row = &params.proj.data()[j * cell..(j + 1) * cell];
        let mut s = 0.0;
        for k in 0..cell {
            s += row[k] * m[k];
        }
        *h_j = s;
    }
    if h.iter().any(|v| !v.is_finite()) || c.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence("non-finite LSTMP state".into()));
    }
    let cache = StepCache {
        x: x.to_vec(),
        h_prev: state.h.clone(),
        c_prev: state.c.clone(),
        i,
        f,
        g,
        o,
        c: c.clone(),
        tanh_c,
        m,
        h: h.clone(),
    };
    Ok((LayerState { h, c }, cache))
}

/// Gradient buffers for one layer, aligned with `LstmpLayerParams`.
#[derive(Debug, Clone)]
pub struct LstmpLayerGrads {
    pub w_i: Tensor,
    pub w_f: Tensor,
    pub w_g: Tensor,
    pub w_o: Tensor,
    pub b_i: Tensor,
    pub b_f: Tensor,
    pub b_g: Tensor,
    pub b_o: Tensor,
    pub peepholes: Option<Peepholes>,
    pub proj: Tensor,
}

#[derive(Debug, Clone)]
pub struct StackGrads {
    pub layers: Vec<LstmpLayerGrads>,
    pub out_weight: Tensor,
    pub out_bias: Tensor,
}

impl StackGrads {
    pub fn for_each_tensor(&self, mut f: impl FnMut(&Tensor)) {
        for l in &self.layers {
            for t in [&l.w_i, &l.w_f, &l.w_g, &l.w_o, &l.b_i, &l.b_f, &l.b_g, &l.b_o, &l.proj] {
                f(t);
            }
            if let Some(p) = &l.peepholes {
                f(&p.p_i);
                f(&p.p_f);
                f(&p.p_o);
            }
        }
        f(&self.out_weight);
        f(&self.out_bias);
    }

    fn for_each_tensor_mut(&mut self, mut f: impl FnMut(&mut Tensor)) {
        for l in &mut self.layers {
            for t in [
                &mut l.w_i, &mut l.w_f, &mut l.w_g, &mut l.w_o, &mut l.b_i, &mut l.b_f,
                &mut l.b_g, &mut l.b_o, &mut l.proj,
            ] {
                f(t);
            }
            if let Some(p) = &mut l.peepholes {
                f(&mut p.p_i);
                f(&mut p.p_f);
                f(&mut p.p_o);
            }
        }
        f(&mut self.out_weight);
        f(&mut self.out_bias);
    }

    pub fn zero(&mut self) {
        self.for_each_tensor_mut(|t| t.data_mut().fill(0.0));
    }

    pub fn scale(&mut self, s: f64) {
        self.for_each_tensor_mut(|t| {
            for v in t.data_mut() {
                *v *= s;
            }
        });
    }

    pub fn clip(&mut self, lo: f64, hi: f64) {
        self.for_each_tensor_mut(|t| clip_gradient(t, lo, hi));
    }

    pub fn max_abs(&self) -> f64 {
        let mut m = 0.0f64;
        self.for_each_tensor(|t| {
            for v in t.data() {
                m = m.max(v.abs());
            }
        });
        m
    }
}

/// Three (by default) LSTMP layers plus a linear output layer to state
/// logits. The output layer consumes the top projection.
#[derive(Debug, Clone)]
pub struct LstmpStack {
    pub layers: Vec<LstmpLayerParams>,
    pub out_weight: Tensor,
    pub out_bias: Tensor,
    pub n_states: usize,
}

impl LstmpStack {
    pub fn new(
        input_dim: usize,
        cell_dim: usize,
        proj_dim: usize,
        n_layers: usize,
        n_states: usize,
        peepholes: bool,
        seed: u64,
    ) -> Result<LstmpStack> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let in_dim = if l == 0 { input_dim } else { proj_dim };
            layers.push(LstmpLayerParams::new(
                in_dim, cell_dim, proj_dim, peepholes, &mut rng,
            )?);
        }
        let s = (6.0 / (proj_dim + n_states) as f64).sqrt();
        let out_weight = Tensor::new(
            vec![n_states, proj_dim],
            (0..n_states * proj_dim)
                .map(|_| s * (2.0 * rng.gen::<f64>() - 1.0))
                .collect(),
        )?;
        Ok(LstmpStack {
            layers,
            out_weight,
            out_bias: Tensor::zeros(&[n_states]),
            n_states,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim
    }

    pub fn zero_state(&self) -> StackState {
        StackState {
            layers: self
                .layers
                .iter()
                .map(|l| LayerState {
                    h: vec![0.0; l.proj_dim],
                    c: vec![0.0; l.cell_dim],
                })
                .collect(),
        }
    }

    pub fn zero_grads(&self) -> StackGrads {
        StackGrads {
            layers: self
                .layers
                .iter()
                .map(|l| LstmpLayerGrads {
                    w_i: Tensor::zeros(l.w_i.shape()),
                    w_f: Tensor::zeros(l.w_f.shape()),
                    w_g: Tensor::zeros(l.w_g.shape()),
                    w_o: Tensor::zeros(l.w_o.shape()),
                    b_i: Tensor::zeros(l.b_i.shape()),
                    b_f: Tensor::zeros(l.b_f.shape()),
                    b_g: Tensor::zeros(l.b_g.shape()),
                    b_o: Tensor::zeros(l.b_o.shape()),
                    peepholes: l.peepholes.as_ref().map(|p| Peepholes {
                        p_i: Tensor::zeros(p.p_i.shape()),
                        p_f: Tensor::zeros(p.p_f.shape()),
                        p_o: Tensor::zeros(p.p_o.shape()),
                    }),
                    proj: Tensor::zeros(l.proj.shape()),
                })
                .collect(),
            out_weight: Tensor::zeros(self.out_weight.shape()),
            out_bias: Tensor::zeros(self.out_bias.shape()),
        }
    }

    /// Forward over a chunk of frames, advancing `state` in place.
    /// Returns per-frame logits and the caches backward needs.
    pub fn forward_chunk_cached(
        &self,
        frames: &[Vec<f64>],
        state: &mut StackState,
    ) -> Result<(Vec<Vec<f64>>, Vec<Vec<StepCache>>)> {
        let mut caches: Vec<Vec<StepCache>> = self.layers.iter().map(|_| Vec::new()).collect();
        let mut inputs: Vec<Vec<f64>> = frames.to_vec();
        for (l, params) in self.layers.iter().enumerate() {
            let mut outs = Vec::with_capacity(inputs.len());
            for x in &inputs {
                let (next, cache) = lstmp_step(params, x, &state.layers[l])?;
                state.layers[l] = next;
                outs.push(cache.h.clone());
                caches[l].push(cache);
            }
            inputs = outs;
        }
        let mut logits = Vec::with_capacity(inputs.len());
        let (s, p) = (self.n_states, self.layers.last().unwrap().proj_dim);
        for h in &inputs {
            let mut row = vec![0.0; s];
            for (j, r) in row.iter_mut().enumerate() {
                let w = &self.out_weight.data()[j * p..(j + 1) * p];
                let mut acc = self.out_bias.data()[j];
                for k in 0..p {
                    acc += w[k] * h[k];
                }
                *r = acc;
            }
            logits.push(row);
        }
        Ok((logits, caches))
    }

    pub fn forward_chunk(&self, frames: &[Vec<f64>], state: &mut StackState) -> Result<Vec<Vec<f64>>> {
        Ok(self.forward_chunk_cached(frames, state)?.0)
    }

    /// Whole-utterance forward from a zero state. Chunking is irrelevant
    /// here: state carry makes any chunked split produce identical output.
    pub fn forward_sequence(&self, frames: &Tensor) -> Result<Tensor> {
        let rows = to_rows(frames, self.input_dim())?;
        let mut state = self.zero_state();
        let logits = self.forward_chunk(&rows, &mut state)?;
        let t = logits.len();
        Tensor::new(vec![t, self.n_states], logits.into_iter().flatten().collect())
    }

    /// Backward over one chunk given per-frame logit gradients.
    /// Accumulates into `grads`; gradients do not flow out of the chunk
    /// (truncation drops the state gradient at the boundary).
    pub fn backward_chunk(
        &self,
        caches: &[Vec<StepCache>],
        grad_logits: &[Vec<f64>],
        grads: &mut StackGrads,
    ) -> Result<()> {
        let t_len = grad_logits.len();
        let top = self.layers.len() - 1;
        let p_top = self.layers[top].proj_dim;

        // Output layer: logits_t = W h_t + b.
        let mut dh_above: Vec<Vec<f64>> = vec![vec![0.0; p_top]; t_len];
        for t in 0..t_len {
            let g = &grad_logits[t];
            let h = &caches[top][t].h;
            let gw = grads.out_weight.data_mut();
            for (j, &gj) in g.iter().enumerate() {
                if gj == 0.0 {
                    continue;
                }
                let row = &mut gw[j * p_top..(j + 1) * p_top];
                for k in 0..p_top {
                    row[k] += gj * h[k];
                    dh_above[t][k] += gj * self.out_weight.data()[j * p_top + k];
                }
                grads.out_bias.data_mut()[j] += gj;
            }
        }

        for l in (0..self.layers.len()).rev() {
            let dx = layer_backward(
                &self.layers[l],
                &caches[l],
                &dh_above,
                &mut grads.layers[l],
            );
            dh_above = dx;
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        let stack_grads = self.zero_grads();
        stack_grads.for_each_tensor(|t| n += t.len());
        n
    }
}

fn to_rows(frames: &Tensor, dim: usize) -> Result<Vec<Vec<f64>>> {
    if frames.rank() != 2 || frames.shape()[1] != dim {
        return Err(Error::dim(
            "lstmp frames",
            format!("(T, {dim})"),
            format!("{:?}", frames.shape()),
        ));
    }
    let t = frames.shape()[0];
    Ok((0..t)
        .map(|i| frames.data()[i * dim..(i + 1) * dim].to_vec())
        .collect())
}

/// BPTT through one layer over a chunk. `dh_above[t]` is the gradient into
/// the layer output h_t from everything downstream of it at time t; the
/// return value is the gradient into the layer inputs x_t.
fn layer_backward(
    params: &LstmpLayerParams,
    caches: &[StepCache],
    dh_above: &[Vec<f64>],
    grads: &mut LstmpLayerGrads,
) -> Vec<Vec<f64>> {
    let (cell, proj, input) = (params.cell_dim, params.proj_dim, params.input_dim);
    let rec = input + proj;
    let t_len = caches.len();
    let mut dxs = vec![vec![0.0; input]; t_len];
    let mut dh_next = vec![0.0; proj];
    let mut dc_next = vec![0.0; cell];

    let mut dm = vec![0.0; cell];
    let mut dzs = vec![0.0; 4 * cell]; // i, f, g, o pre-activation grads
    for t in (0..t_len).rev() {
        let s = &caches[t];
        // Total gradient into h_t: downstream use plus next step's gates.
        let mut dh = dh_above[t].clone();
        for (a, b) in dh.iter_mut().zip(&dh_next) {
            *a += b;
        }
        // h = P m.
        dm.iter_mut().for_each(|v| *v = 0.0);
        {
            let gp = grads.proj.data_mut();
            let p = params.proj.data();
            for j in 0..proj {
                let dhj = dh[j];
                if dhj == 0.0 {
                    continue;
                }
                let prow = &p[j * cell..(j + 1) * cell];
                let grow = &mut gp[j * cell..(j + 1) * cell];
                for k in 0..cell {
                    grow[k] += dhj * s.m[k];
                    dm[k] += dhj * prow[k];
                }
            }
        }
        let (dz_i, rest) = dzs.split_at_mut(cell);
        let (dz_f, rest) = rest.split_at_mut(cell);
        let (dz_g, dz_o) = rest.split_at_mut(cell);
        let mut dc_prev = vec![0.0; cell];
        for k in 0..cell {
            // m = o tanh(c).
            let do_k = dm[k] * s.tanh_c[k];
            let dtanh = dm[k] * s.o[k];
            let mut dc = dtanh * (1.0 - s.tanh_c[k] * s.tanh_c[k]) + dc_next[k];
            dz_o[k] = do_k * s.o[k] * (1.0 - s.o[k]);
            if let Some(p) = &params.peepholes {
                dc += dz_o[k] * p.p_o.data()[k];
            }
            // c = f c_prev + i g.
            let df = dc * s.c_prev[k];
            let di = dc * s.g[k];
            let dg = dc * s.i[k];
            dc_prev[k] = dc * s.f[k];
            dz_f[k] = df * s.f[k] * (1.0 - s.f[k]);
            dz_i[k] = di * s.i[k] * (1.0 - s.i[k]);
            dz_g[k] = dg * (1.0 - s.g[k] * s.g[k]);
            if let Some(p) = &params.peepholes {
                dc_prev[k] += dz_i[k] * p.p_i.data()[k] + dz_f[k] * p.p_f.data()[k];
            }
        }
        if let (Some(p_grads), Some(_)) = (&mut grads.peepholes, &params.peepholes) {
            for k in 0..cell {
                p_grads.p_i.data_mut()[k] += dz_i[k] * s.c_prev[k];
                p_grads.p_f.data_mut()[k] += dz_f[k] * s.c_prev[k];
                p_grads.p_o.data_mut()[k] += dz_o[k] * s.c[k];
            }
        }

        // Gate weight/bias/input gradients over [x; h_prev].
        let mut dxh = vec![0.0; rec];
        let mut xh = Vec::with_capacity(rec);
        xh.extend_from_slice(&s.x);
        xh.extend_from_slice(&s.h_prev);
        for (w, gw, gb, dz) in [
            (&params.w_i, &mut grads.w_i, &mut grads.b_i, &dz_i[..]),
            (&params.w_f, &mut grads.w_f, &mut grads.b_f, &dz_f[..]),
            (&params.w_g, &mut grads.w_g, &mut grads.b_g, &dz_g[..]),
            (&params.w_o, &mut grads.w_o, &mut grads.b_o, &dz_o[..]),
        ] {
            let wdata = w.data();
            let gwdata = gw.data_mut();
            let gbdata = gb.data_mut();
            for j in 0..cell {
                let dzj = dz[j];
                if dzj == 0.0 {
                    continue;
                }
                gbdata[j] += dzj;
                let wrow = &wdata[j * rec..(j + 1) * rec];
                let grow = &mut gwdata[j * rec..(j + 1) * rec];
                for k in 0..rec {
                    grow[k] += dzj * xh[k];
                    dxh[k] += dzj * wrow[k];
                }
            }
        }
        dxs[t].copy_from_slice(&dxh[..input]);
        dh_next.copy_from_slice(&dxh[input..]);
        dc_next = dc_prev;
    }
    // dh_next / dc_next at the chunk head are dropped: truncation.
    dxs
}

/// Appends the utterance i-vector to every frame vector.
pub fn speaker_aware_input(frames: &Tensor, ivector: &[f64]) -> Result<Tensor> {
    if frames.rank() != 2 {
        return Err(Error::dim(
            "speaker_aware_input",
            "rank 2 (T, dim)",
            format!("rank {}", frames.rank()),
        ));
    }
    let (t, d) = (frames.shape()[0], frames.shape()[1]);
    let out_d = d + ivector.len();
    let mut data = Vec::with_capacity(t * out_d);
    for row in 0..t {
        data.extend_from_slice(&frames.data()[row * d..(row + 1) * d]);
        data.extend_from_slice(ivector);
    }
    Tensor::new(vec![t, out_d], data)
}

/// Label index scored by the logits emitted at time `t`: the label of
/// `t - delay`, clamped at the utterance start.
#[inline]
pub fn delayed_label(labels: &[u32], t: usize, delay: usize) -> u32 {
    labels[t.saturating_sub(delay)]
}

/// Label-aligned log-posterior matrix for decoding: the scores for label
/// frame tau come from the logits at tau + delay, clamped at the end.
pub fn score_sequence(stack: &LstmpStack, frames: &Tensor, delay: usize) -> Result<Tensor> {
    let logits = stack.forward_sequence(frames)?;
    let (t_len, s) = (logits.shape()[0], logits.shape()[1]);
    let mut out = Tensor::zeros(&[t_len, s]);
    for tau in 0..t_len {
        let src = (tau + delay).min(t_len - 1);
        let row = log_softmax(&logits.data()[src * s..(src + 1) * s]);
        out.data_mut()[tau * s..(tau + 1) * s].copy_from_slice(&row);
    }
    Ok(out)
}

pub struct SgdOpts {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
}

pub struct TrainStats {
    /// Mean frame CE per epoch, including a pre-training epoch 0 entry.
    pub epoch_ce: Vec<f64>,
    /// Largest |gradient element| that reached the optimizer.
    pub max_applied_grad_abs: f64,
}

/// Gradients and loss for one whole utterance, processed chunk by chunk
/// with state carry and per-chunk truncation. No parameters are updated.
pub fn sequence_grads(
    stack: &LstmpStack,
    frames: &Tensor,
    labels: &[u32],
    chunk: usize,
    delay: usize,
) -> Result<(StackGrads, f64, usize)> {
    let rows = to_rows(frames, stack.input_dim())?;
    if rows.len() != labels.len() {
        return Err(Error::Data(format!(
            "{} frames vs {} labels",
            rows.len(),
            labels.len()
        )));
    }
    let mut grads = stack.zero_grads();
    let mut state = stack.zero_state();
    let mut loss = 0.0;
    let mut t0 = 0;
    while t0 < rows.len() {
        let t1 = (t0 + chunk).min(rows.len());
        let (logits, caches) = stack.forward_chunk_cached(&rows[t0..t1], &mut state)?;
        let mut grad_logits = Vec::with_capacity(logits.len());
        for (off, row) in logits.iter().enumerate() {
            let label = delayed_label(labels, t0 + off, delay) as usize;
            let (l, g) =
                crate::tensor::softmax_ce(&Tensor::from_vec(row.clone()), label)?;
            loss += l;
            grad_logits.push(g.into_data());
        }
        stack.backward_chunk(&caches, &grad_logits, &mut grads)?;
        t0 = t1;
    }
    Ok((grads, loss, rows.len()))
}

fn mean_corpus_ce(
    stack: &LstmpStack,
    corpus: &[(Tensor, Vec<u32>)],
    delay: usize,
) -> Result<f64> {
    let mut loss = 0.0;
    let mut frames = 0usize;
    for (feats, labels) in corpus {
        let logits = stack.forward_sequence(feats)?;
        let s = stack.n_states;
        for t in 0..logits.shape()[0] {
            let row = Tensor::from_vec(logits.data()[t * s..(t + 1) * s].to_vec());
            let label = delayed_label(labels, t, delay) as usize;
            loss += crate::tensor::softmax_ce(&row, label)?.0;
        }
        frames += logits.shape()[0];
    }
    Ok(loss / frames.max(1) as f64)
}

/// Truncated-BPTT training. Utterances are grouped `parallel_utterances`
/// at a time; within a group, chunk k of every live stream is processed
/// and the gradients are reduced in utterance order before one SGD update.
/// Applied gradients are elementwise-clipped to the configured range.
pub fn train_tbptt(
    stack: &mut LstmpStack,
    corpus: &[(Tensor, Vec<u32>)],
    cfg: &BpttConfig,
    sgd: &SgdOpts,
) -> Result<TrainStats> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyInput("empty training corpus".into()));
    }
    for (i, (_, labels)) in corpus.iter().enumerate() {
        if labels.is_empty() {
            return Err(Error::Data(format!("utterance {i} has no frame labels")));
        }
    }
    let mut velocity = stack.zero_grads();
    let mut stats = TrainStats {
        epoch_ce: vec![mean_corpus_ce(stack, corpus, cfg.output_delay)?],
        max_applied_grad_abs: 0.0,
    };

    for epoch in 0..sgd.epochs {
        let mut epoch_loss = 0.0;
        let mut epoch_frames = 0usize;
        for group in corpus.chunks(cfg.parallel_utterances) {
            let mut states: Vec<StackState> =
                group.iter().map(|_| stack.zero_state()).collect();
            let rows: Vec<Vec<Vec<f64>>> = group
                .iter()
                .map(|(f, _)| to_rows(f, stack.input_dim()))
                .collect::<Result<_>>()?;
            let max_len = rows.iter().map(|r| r.len()).max().unwrap_or(0);
            let mut grads = stack.zero_grads();
            let mut t0 = 0;
            while t0 < max_len {
                let t1 = t0 + cfg.chunk;
                grads.zero();
                let mut round_frames = 0usize;
                for (u, stream) in rows.iter().enumerate() {
                    if t0 >= stream.len() {
                        continue;
                    }
                    let hi = t1.min(stream.len());
                    let (logits, caches) =
                        stack.forward_chunk_cached(&stream[t0..hi], &mut states[u])?;
                    let labels = &group[u].1;
                    let mut grad_logits = Vec::with_capacity(logits.len());
                    for (off, row) in logits.iter().enumerate() {
                        let label = delayed_label(labels, t0 + off, cfg.output_delay) as usize;
                        if label >= stack.n_states {
                            return Err(Error::IndexOutOfRange {
                                index: label,
                                len: stack.n_states,
                            });
                        }
                        let (l, g) =
                            crate::tensor::softmax_ce(&Tensor::from_vec(row.clone()), label)?;
                        if !l.is_finite() {
                            return Err(Error::Divergence(format!(
                                "non-finite loss in epoch {epoch}"
                            )));
                        }
                        epoch_loss += l;
                        grad_logits.push(g.into_data());
                    }
                    round_frames += logits.len();
                    stack.backward_chunk(&caches, &grad_logits, &mut grads)?;
                }
                if round_frames > 0 {
                    grads.scale(1.0 / round_frames as f64);
                    grads.clip(cfg.clip_lo, cfg.clip_hi);
                    stats.max_applied_grad_abs =
                        stats.max_applied_grad_abs.max(grads.max_abs());
                    apply_stack_sgd(stack, &grads, &mut velocity, sgd)?;
                }
                epoch_frames += round_frames;
                t0 = t1;
            }
        }
        if epoch_frames == 0 {
            return Err(Error::EmptyInput("no frames seen in epoch".into()));
        }
        let ce = epoch_loss / epoch_frames as f64;
        if !ce.is_finite() {
            return Err(Error::Divergence(format!("epoch {epoch}: CE is {ce}")));
        }
        stats.epoch_ce.push(ce);
    }
    Ok(stats)
}

fn apply_stack_sgd(
    stack: &mut LstmpStack,
    grads: &StackGrads,
    velocity: &mut StackGrads,
    sgd: &SgdOpts,
) -> Result<()> {
    let (lr, mu) = (sgd.learning_rate, sgd.momentum);
    for ((l, g), v) in stack
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(&mut velocity.layers)
    {
        sgd_step(&mut l.w_i, &g.w_i, &mut v.w_i, lr, mu)?;
        sgd_step(&mut l.w_f, &g.w_f, &mut v.w_f, lr, mu)?;
        sgd_step(&mut l.w_g, &g.w_g, &mut v.w_g, lr, mu)?;
        sgd_step(&mut l.w_o, &g.w_o, &mut v.w_o, lr, mu)?;
        sgd_step(&mut l.b_i, &g.b_i, &mut v.b_i, lr, mu)?;
        sgd_step(&mut l.b_f, &g.b_f, &mut v.b_f, lr, mu)?;
        sgd_step(&mut l.b_g, &g.b_g, &mut v.b_g, lr, mu)?;
        sgd_step(&mut l.b_o, &g.b_o, &mut v.b_o, lr, mu)?;
        sgd_step(&mut l.proj, &g.proj, &mut v.proj, lr, mu)?;
        if let (Some(p), Some(gp), Some(vp)) =
            (&mut l.peepholes, &g.peepholes, &mut v.peepholes)
        {
            sgd_step(&mut p.p_i, &gp.p_i, &mut vp.p_i, lr, mu)?;
            sgd_step(&mut p.p_f, &gp.p_f, &mut vp.p_f, lr, mu)?;
            sgd_step(&mut p.p_o, &gp.p_o, &mut vp.p_o, lr, mu)?;
        }
    }
    sgd_step(
        &mut stack.out_weight,
        &grads.out_weight,
        &mut velocity.out_weight,
        lr,
        mu,
    )?;
    sgd_step(
        &mut stack.out_bias,
        &grads.out_bias,
        &mut velocity.out_bias,
        lr,
        mu,
    )?;
    Ok(())
}

#[cfg(test)]
mod tests;
