//! Joint training of a convolutional trunk with an auxiliary-feature
//! stream. The auxiliary vector goes through its own fully-connected ReLU
//! layer, in parallel with the trunk; the two hidden representations are
//! concatenated and fed into the shared fully-connected stack, and the
//! whole graph trains end to end.

use crate::arch::network::{
    apply_sgd_layers, backward_layers_into, forward_layers, forward_layers_train, zero_grads_for,
};
use crate::arch::{build_network, ArchitectureSpec, Layer, LayerCache, LayerSpec, ValueShape};
use crate::archive::Archive;
use crate::error::{Error, Result};
use crate::tensor::{
    fc_backward, fc_forward, relu, relu_backward, sgd_step, Tensor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Auxiliary feature families. Window sizes follow the archive contents;
/// the i-vector is one vector per utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuxKind {
    Mfcc,
    Fmllr,
    Ivector,
    FmllrIvector,
}

impl AuxKind {
    pub fn parse(s: &str) -> Result<AuxKind> {
        Ok(match s {
            "mfcc" => AuxKind::Mfcc,
            "fmllr" => AuxKind::Fmllr,
            "ivector" | "ivec" => AuxKind::Ivector,
            "fmllr+ivector" | "fmllr+ivec" => AuxKind::FmllrIvector,
            other => {
                return Err(Error::Data(format!(
                    "unknown auxiliary feature kind '{other}'"
                )))
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            AuxKind::Mfcc => "mfcc",
            AuxKind::Fmllr => "fmllr",
            AuxKind::Ivector => "ivector",
            AuxKind::FmllrIvector => "fmllr+ivector",
        }
    }
}

/// Joint-network description: a base architecture (conv trunk + shared FC
/// stack), the auxiliary input width and the aux stream's hidden width.
/// The streams merge right before the first shared FC layer.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSpec {
    pub base: ArchitectureSpec,
    pub aux_dim: usize,
    pub aux_hidden: usize,
    /// Index of the shared FC layer at which the streams concatenate;
    /// always 0 (before the first shared layer).
    pub merge_after: usize,
}

impl JointSpec {
    pub fn new(base: ArchitectureSpec, aux_dim: usize, aux_hidden: usize) -> JointSpec {
        JointSpec {
            base,
            aux_dim,
            aux_hidden,
            merge_after: 0,
        }
    }
}

/// A trainable joint network: trunk layers up to and including flatten,
/// one aux FC+ReLU, then the shared stack with its first FC widened by
/// `aux_hidden` columns.
#[derive(Debug, Clone)]
pub struct JointNetwork {
    pub spec: JointSpec,
    pub trunk: Vec<Layer>,
    pub aux_weight: Tensor,
    pub aux_bias: Tensor,
    pub shared: Vec<Layer>,
    trunk_width: usize,
}

pub struct JointGrads {
    pub trunk: Vec<Option<(Tensor, Tensor)>>,
    pub aux: (Tensor, Tensor),
    pub shared: Vec<Option<(Tensor, Tensor)>>,
}

impl JointGrads {
    pub fn zero(&mut self) {
        for item in self.trunk.iter_mut().chain(self.shared.iter_mut()).flatten() {
            item.0.data_mut().fill(0.0);
            item.1.data_mut().fill(0.0);
        }
        self.aux.0.data_mut().fill(0.0);
        self.aux.1.data_mut().fill(0.0);
    }

    pub fn scale(&mut self, s: f64) {
        let scale_pair = |p: &mut (Tensor, Tensor)| {
            for v in p.0.data_mut() {
                *v *= s;
            }
            for v in p.1.data_mut() {
                *v *= s;
            }
        };
        for item in self.trunk.iter_mut().chain(self.shared.iter_mut()).flatten() {
            scale_pair(item);
        }
        scale_pair(&mut self.aux);
    }
}

pub struct JointCaches {
    trunk: Vec<LayerCache>,
    shared: Vec<LayerCache>,
    aux_input: Tensor,
    aux_pre: Tensor,
}

/// Builds the joint network. The base spec must contain exactly one flatten
/// layer; everything before it (inclusive) becomes the trunk, everything
/// after it the shared stack.
pub fn build_joint(spec: &JointSpec, seed: u64) -> Result<JointNetwork> {
    if spec.aux_dim == 0 {
        return Err(Error::dim("build_joint", "aux_dim >= 1", "0".to_string()));
    }
    if spec.merge_after != 0 {
        return Err(Error::Data(
            "streams must concatenate before the first shared FC layer".into(),
        ));
    }
    let flatten_pos = spec
        .base
        .layers
        .iter()
        .position(|l| matches!(l, LayerSpec::Flatten))
        .ok_or_else(|| Error::Data("joint base spec has no flatten layer".into()))?;

    // Materialize the plain base network first so trunk parameters are
    // seed-deterministic, then rebuild the shared stack with the widened
    // first FC layer.
    let base_net = build_network(&spec.base, seed)?;
    let trace = crate::arch::derive_shapes(&spec.base)?;
    let trunk_width = match trace.layers[flatten_pos].out_shape {
        ValueShape::Flat(n) => n,
        _ => unreachable!("flatten output is flat"),
    };

    let mut layers = base_net.layers;
    let shared_src = layers.split_off(flatten_pos + 1);
    let trunk = layers;

    // Dedicated RNG stream for the joint-only parameters.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6a6f_696e_745f_6678);
    let s_aux = (6.0 / (spec.aux_dim + spec.aux_hidden) as f64).sqrt();
    let aux_weight = Tensor::new(
        vec![spec.aux_hidden, spec.aux_dim],
        (0..spec.aux_hidden * spec.aux_dim)
            .map(|_| s_aux * (2.0 * rng.gen::<f64>() - 1.0))
            .collect(),
    )?;
    let aux_bias = Tensor::zeros(&[spec.aux_hidden]);

    let mut shared = Vec::with_capacity(shared_src.len());
    let mut widened = false;
    for layer in shared_src {
        match layer {
            Layer::Fc { weight, bias } if !widened => {
                // First shared FC takes [trunk; aux] as input.
                let out_dim = weight.shape()[0];
                let in_dim = trunk_width + spec.aux_hidden;
                let s = (6.0 / (in_dim + out_dim) as f64).sqrt();
                let mut data = Vec::with_capacity(out_dim * in_dim);
                let old = weight.data();
                for o in 0..out_dim {
                    data.extend_from_slice(&old[o * trunk_width..(o + 1) * trunk_width]);
                    for _ in 0..spec.aux_hidden {
                        data.push(s * (2.0 * rng.gen::<f64>() - 1.0));
                    }
                }
                shared.push(Layer::Fc {
                    weight: Tensor::new(vec![out_dim, in_dim], data)?,
                    bias,
                });
                widened = true;
            }
            other => shared.push(other),
        }
    }
    if !widened {
        return Err(Error::Data(
            "joint base spec has no shared FC layer after flatten".into(),
        ));
    }

    Ok(JointNetwork {
        spec: spec.clone(),
        trunk,
        aux_weight,
        aux_bias,
        shared,
        trunk_width,
    })
}

impl JointNetwork {
    pub fn n_states(&self) -> usize {
        self.spec.base.n_states
    }

    pub fn param_count(&self) -> usize {
        let layer_params = |layers: &[Layer]| -> usize {
            layers
                .iter()
                .map(|l| match l {
                    Layer::Conv(p) => p.param_count(),
                    Layer::Fc { weight, bias } => weight.len() + bias.len(),
                    _ => 0,
                })
                .sum()
        };
        layer_params(&self.trunk)
            + self.aux_weight.len()
            + self.aux_bias.len()
            + layer_params(&self.shared)
    }

    fn check_aux(&self, aux: &[f64]) -> Result<()> {
        if aux.len() != self.spec.aux_dim {
            return Err(Error::dim(
                "joint aux input",
                format!("{}", self.spec.aux_dim),
                format!("{}", aux.len()),
            ));
        }
        Ok(())
    }

    fn concat(&self, trunk_out: &Tensor, aux_hidden: &Tensor) -> Tensor {
        let mut joined = Vec::with_capacity(trunk_out.len() + aux_hidden.len());
        joined.extend_from_slice(trunk_out.data());
        joined.extend_from_slice(aux_hidden.data());
        Tensor::from_vec(joined)
    }

    pub fn forward(&self, maps: &Tensor, aux: &[f64]) -> Result<Tensor> {
        self.check_aux(aux)?;
        let trunk_out = forward_layers(&self.trunk, maps)?;
        let aux_in = Tensor::from_vec(aux.to_vec());
        let aux_hidden = relu(&fc_forward(&aux_in, &self.aux_weight, &self.aux_bias)?);
        forward_layers(&self.shared, &self.concat(&trunk_out, &aux_hidden))
    }

    pub fn forward_train(&self, maps: &Tensor, aux: &[f64]) -> Result<(Tensor, JointCaches)> {
        self.check_aux(aux)?;
        let (trunk_out, trunk_caches) = forward_layers_train(&self.trunk, maps.clone())?;
        let aux_input = Tensor::from_vec(aux.to_vec());
        let aux_pre = fc_forward(&aux_input, &self.aux_weight, &self.aux_bias)?;
        let aux_hidden = relu(&aux_pre);
        let joined = self.concat(&trunk_out, &aux_hidden);
        let (logits, shared_caches) = forward_layers_train(&self.shared, joined)?;
        Ok((
            logits,
            JointCaches {
                trunk: trunk_caches,
                shared: shared_caches,
                aux_input,
                aux_pre,
            },
        ))
    }

    pub fn zero_grads(&self) -> JointGrads {
        JointGrads {
            trunk: zero_grads_for(&self.trunk),
            aux: (
                Tensor::zeros(self.aux_weight.shape()),
                Tensor::zeros(self.aux_bias.shape()),
            ),
            shared: zero_grads_for(&self.shared),
        }
    }

    /// Backward through both streams, accumulating into `grads`.
    pub fn backward_into(
        &self,
        caches: &JointCaches,
        grad_logits: &Tensor,
        grads: &mut JointGrads,
    ) -> Result<()> {
        let grad_joined =
            backward_layers_into(&self.shared, &caches.shared, grad_logits, &mut grads.shared)?;
        let (g_trunk, g_aux_hidden) = grad_joined.data().split_at(self.trunk_width);
        let g_trunk = Tensor::new(vec![self.trunk_width], g_trunk.to_vec())?;
        let g_aux_hidden = Tensor::from_vec(g_aux_hidden.to_vec());

        backward_layers_into(&self.trunk, &caches.trunk, &g_trunk, &mut grads.trunk)?;

        let g_aux_pre = relu_backward(&caches.aux_pre, &g_aux_hidden);
        let (_, gw, gb) = fc_backward(&caches.aux_input, &self.aux_weight, &g_aux_pre)?;
        grads.aux.0.scaled_add(1.0, 1.0, &gw)?;
        grads.aux.1.scaled_add(1.0, 1.0, &gb)?;
        Ok(())
    }

    pub fn momentum_state(&self) -> JointGrads {
        self.zero_grads()
    }

    pub fn apply_sgd(
        &mut self,
        grads: &JointGrads,
        velocity: &mut JointGrads,
        learning_rate: f64,
        momentum: f64,
    ) -> Result<()> {
        apply_sgd_layers(
            &mut self.trunk,
            &grads.trunk,
            &mut velocity.trunk,
            learning_rate,
            momentum,
        )?;
        sgd_step(
            &mut self.aux_weight,
            &grads.aux.0,
            &mut velocity.aux.0,
            learning_rate,
            momentum,
        )?;
        sgd_step(
            &mut self.aux_bias,
            &grads.aux.1,
            &mut velocity.aux.1,
            learning_rate,
            momentum,
        )?;
        apply_sgd_layers(
            &mut self.shared,
            &grads.shared,
            &mut velocity.shared,
            learning_rate,
            momentum,
        )
    }

    /// Parameter tensors in declaration order (trunk, aux, shared).
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for l in &self.trunk {
            if let Layer::Conv(p) = l {
                out.push(&p.filter);
                out.push(&p.bias);
            } else if let Layer::Fc { weight, bias } = l {
                out.push(weight);
                out.push(bias);
            }
        }
        out.push(&self.aux_weight);
        out.push(&self.aux_bias);
        for l in &self.shared {
            if let Layer::Fc { weight, bias } = l {
                out.push(weight);
                out.push(bias);
            } else if let Layer::Conv(p) = l {
                out.push(&p.filter);
                out.push(&p.bias);
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in &mut self.trunk {
            if let Layer::Conv(p) = l {
                out.push(&mut p.filter);
                out.push(&mut p.bias);
            } else if let Layer::Fc { weight, bias } = l {
                out.push(weight);
                out.push(bias);
            }
        }
        out.push(&mut self.aux_weight);
        out.push(&mut self.aux_bias);
        for l in &mut self.shared {
            if let Layer::Fc { weight, bias } = l {
                out.push(weight);
                out.push(bias);
            } else if let Layer::Conv(p) = l {
                out.push(&mut p.filter);
                out.push(&mut p.bias);
            }
        }
        out
    }
}

/// Per-frame auxiliary vectors for one utterance, assembled from archives.
/// Frame-level kinds (MFCC, fMLLR) are windowed with `context` frames and
/// edge replication; the per-utterance i-vector is repeated on every frame;
/// the combined kind concatenates fMLLR windows with the i-vector.
pub struct AuxSource {
    pub kind: AuxKind,
    pub context: usize,
    pub frame_archive: Option<Archive>,
    pub utt_archive: Option<Archive>,
}

impl AuxSource {
    pub fn aux_dim(&self) -> Result<usize> {
        let frame_dim = |arc: &Option<Archive>, what: &str| -> Result<usize> {
            let arc = arc
                .as_ref()
                .ok_or_else(|| Error::Data(format!("{what} archive missing")))?;
            let rec = arc
                .records
                .first()
                .ok_or_else(|| Error::Data(format!("{what} archive empty")))?;
            Ok(rec.dims as usize)
        };
        Ok(match self.kind {
            AuxKind::Mfcc => frame_dim(&self.frame_archive, "mfcc")? * self.context,
            AuxKind::Fmllr => frame_dim(&self.frame_archive, "fmllr")? * self.context,
            AuxKind::Ivector => frame_dim(&self.utt_archive, "ivector")?,
            AuxKind::FmllrIvector => {
                frame_dim(&self.frame_archive, "fmllr")? * self.context
                    + frame_dim(&self.utt_archive, "ivector")?
            }
        })
    }

    pub fn vectors_for(&self, utt_id: &str, frames: usize) -> Result<Vec<Vec<f64>>> {
        match self.kind {
            AuxKind::Mfcc | AuxKind::Fmllr => {
                self.windowed_frames(utt_id, frames).map(|w| w.collect())
            }
            AuxKind::Ivector => {
                let ivec = self.ivector(utt_id)?;
                Ok(vec![ivec; frames])
            }
            AuxKind::FmllrIvector => {
                let ivec = self.ivector(utt_id)?;
                let mut out = Vec::with_capacity(frames);
                for mut w in self.windowed_frames(utt_id, frames)? {
                    w.extend_from_slice(&ivec);
                    out.push(w);
                }
                Ok(out)
            }
        }
    }

    fn windowed_frames(
        &self,
        utt_id: &str,
        frames: usize,
    ) -> Result<impl Iterator<Item = Vec<f64>> + '_> {
        let arc = self
            .frame_archive
            .as_ref()
            .ok_or_else(|| Error::Data("frame-level aux archive missing".into()))?;
        let rec = arc
            .find(utt_id)
            .ok_or_else(|| Error::Data(format!("utterance '{utt_id}' not in aux archive")))?;
        if rec.frames as usize != frames {
            return Err(Error::Data(format!(
                "utterance '{utt_id}': aux archive has {} frames, features have {frames}",
                rec.frames
            )));
        }
        let dims = rec.dims as usize;
        let data = rec.data.clone();
        let half = (self.context / 2) as isize;
        let t_max = frames as isize - 1;
        Ok((0..frames).map(move |t| {
            let mut v = Vec::with_capacity(self.context * dims);
            for off in -half..=half {
                let tt = (t as isize + off).clamp(0, t_max) as usize;
                v.extend_from_slice(&data[tt * dims..(tt + 1) * dims]);
            }
            v
        }))
    }

    fn ivector(&self, utt_id: &str) -> Result<Vec<f64>> {
        let arc = self
            .utt_archive
            .as_ref()
            .ok_or_else(|| Error::Data("i-vector archive missing".into()))?;
        let rec = arc
            .find(utt_id)
            .ok_or_else(|| Error::Data(format!("utterance '{utt_id}' not in i-vector archive")))?;
        Ok(rec.data.clone())
    }
}

#[cfg(test)]
mod tests;
