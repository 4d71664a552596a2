//! Runtime networks: parameter initialization from a spec, forward and
//! backward passes, and the SGD plumbing shared by the trainers.

use super::{derive_shapes, ActKind, ArchitectureSpec, LayerSpec, ValueShape};
use crate::error::{Error, Result};
use crate::tensor::{
    conv2d_backward, conv2d_forward, fc_backward, fc_forward, maxpool_backward, maxpool_forward,
    relu, relu_backward, sgd_step, sigmoid, sigmoid_backward, ArgmaxMap, ConvParams, PoolParams,
    Tensor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One materialized layer with its parameters.
#[derive(Debug, Clone)]
pub enum Layer {
    Conv(ConvParams),
    Pool(PoolParams),
    Act(ActKind),
    Flatten,
    Fc { weight: Tensor, bias: Tensor },
}

#[derive(Debug, Clone)]
pub struct Network {
    pub spec: ArchitectureSpec,
    pub layers: Vec<Layer>,
}

/// Per-layer activations saved during a training forward pass.
pub enum LayerCache {
    Conv { input: Tensor },
    Pool { map: ArgmaxMap },
    Relu { input: Tensor },
    Sigmoid { output: Tensor },
    Flatten { in_shape: Vec<usize> },
    Fc { input: Tensor },
}

/// Gradient buffers aligned with the network's layers; `None` for layers
/// without parameters.
pub struct ParamGrads {
    pub items: Vec<Option<(Tensor, Tensor)>>,
}

impl ParamGrads {
    pub fn scale(&mut self, s: f64) {
        for item in self.items.iter_mut().flatten() {
            for v in item.0.data_mut() {
                *v *= s;
            }
            for v in item.1.data_mut() {
                *v *= s;
            }
        }
    }

    pub fn zero(&mut self) {
        for item in self.items.iter_mut().flatten() {
            item.0.data_mut().fill(0.0);
            item.1.data_mut().fill(0.0);
        }
    }
}

/// Velocity buffers for momentum SGD, aligned like `ParamGrads`.
pub struct MomentumState {
    pub items: Vec<Option<(Tensor, Tensor)>>,
}

/// Uniform Glorot-style initialization: [-s, s] with
/// s = sqrt(6 / (fan_in + fan_out)); biases start at zero.
fn init_uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| s * (2.0 * rng.gen::<f64>() - 1.0)).collect();
    Tensor::new(shape.to_vec(), data).expect("init shape")
}

/// Materializes a network from its spec with seed-deterministic parameters.
pub fn build_network(spec: &ArchitectureSpec, seed: u64) -> Result<Network> {
    let trace = derive_shapes(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(spec.layers.len());
    for (layer, shape) in spec.layers.iter().zip(&trace.layers) {
        layers.push(match *layer {
            LayerSpec::Conv {
                out_maps,
                kt,
                kf,
                pad_t,
                pad_f,
            } => {
                let in_maps = match shape.in_shape {
                    ValueShape::Maps { maps, .. } => maps,
                    ValueShape::Flat(_) => unreachable!("derive_shapes rejects conv after flatten"),
                };
                let fan_in = in_maps * kt * kf;
                let fan_out = out_maps * kt * kf;
                let filter =
                    init_uniform(&mut rng, &[out_maps, in_maps, kt, kf], fan_in, fan_out);
                Layer::Conv(ConvParams::new(
                    filter,
                    Tensor::zeros(&[out_maps]),
                    pad_t,
                    pad_f,
                )?)
            }
            LayerSpec::Pool { pt, pf, truncate, stride } => {
                if let Some(s) = stride {
                    if s != (pt, pf) {
                        return Err(Error::Shape {
                            layer: shape.index,
                            kind: "pool".into(),
                            detail: "overlapping pooling cannot be materialized".into(),
                        });
                    }
                }
                Layer::Pool(PoolParams::new(pt, pf, truncate)?)
            }
            LayerSpec::Activation(kind) => Layer::Act(kind),
            LayerSpec::Flatten => Layer::Flatten,
            LayerSpec::Fc { out_dim } => {
                let in_dim = match shape.in_shape {
                    ValueShape::Flat(n) => n,
                    ValueShape::Maps { .. } => {
                        unreachable!("derive_shapes rejects fc on map input")
                    }
                };
                let weight = init_uniform(&mut rng, &[out_dim, in_dim], in_dim, out_dim);
                Layer::Fc {
                    weight,
                    bias: Tensor::zeros(&[out_dim]),
                }
            }
            LayerSpec::ConcatAux => {
                return Err(Error::Shape {
                    layer: shape.index,
                    kind: "concat-aux".into(),
                    detail: "plain networks cannot contain a concat-aux marker".into(),
                })
            }
        });
    }
    Ok(Network {
        spec: spec.clone(),
        layers,
    })
}

/// Forward pass over a bare layer stack.
pub(crate) fn forward_layers(layers: &[Layer], input: &Tensor) -> Result<Tensor> {
    let mut x = input.clone();
    for layer in layers {
        x = match layer {
            Layer::Conv(p) => conv2d_forward(&x, p)?,
            Layer::Pool(p) => maxpool_forward(&x, p)?.0,
            Layer::Act(ActKind::Relu) => relu(&x),
            Layer::Act(ActKind::Sigmoid) => sigmoid(&x),
            Layer::Flatten => {
                let n = x.len();
                x.reshape(vec![n])?
            }
            Layer::Fc { weight, bias } => fc_forward(&x, weight, bias)?,
        };
    }
    Ok(x)
}

/// Forward pass over a bare layer stack, caching what backward needs.
pub(crate) fn forward_layers_train(
    layers: &[Layer],
    input: Tensor,
) -> Result<(Tensor, Vec<LayerCache>)> {
    let mut x = input;
    let mut caches = Vec::with_capacity(layers.len());
    for layer in layers {
        match layer {
            Layer::Conv(p) => {
                let out = conv2d_forward(&x, p)?;
                caches.push(LayerCache::Conv { input: x });
                x = out;
            }
            Layer::Pool(p) => {
                let (out, map) = maxpool_forward(&x, p)?;
                caches.push(LayerCache::Pool { map });
                x = out;
            }
            Layer::Act(ActKind::Relu) => {
                let out = relu(&x);
                caches.push(LayerCache::Relu { input: x });
                x = out;
            }
            Layer::Act(ActKind::Sigmoid) => {
                let out = sigmoid(&x);
                caches.push(LayerCache::Sigmoid { output: out.clone() });
                x = out;
            }
            Layer::Flatten => {
                let shape = x.shape().to_vec();
                let n = x.len();
                x = x.reshape(vec![n])?;
                caches.push(LayerCache::Flatten { in_shape: shape });
            }
            Layer::Fc { weight, bias } => {
                let out = fc_forward(&x, weight, bias)?;
                caches.push(LayerCache::Fc { input: x });
                x = out;
            }
        }
    }
    Ok((x, caches))
}

/// Backward pass over a bare layer stack, accumulating parameter gradients
/// into `grads` (aligned with `layers`).
pub(crate) fn backward_layers_into(
    layers: &[Layer],
    caches: &[LayerCache],
    grad_out: &Tensor,
    grads: &mut [Option<(Tensor, Tensor)>],
) -> Result<Tensor> {
    debug_assert_eq!(caches.len(), layers.len());
    debug_assert_eq!(grads.len(), layers.len());
    let mut g = grad_out.clone();
    for (i, layer) in layers.iter().enumerate().rev() {
        g = match (layer, &caches[i]) {
            (Layer::Conv(p), LayerCache::Conv { input }) => {
                let (gi, gf, gb) = conv2d_backward(input, p, &g)?;
                let acc = grads[i].as_mut().expect("conv grads allocated");
                acc.0.scaled_add(1.0, 1.0, &gf)?;
                acc.1.scaled_add(1.0, 1.0, &gb)?;
                gi
            }
            (Layer::Pool(_), LayerCache::Pool { map }) => maxpool_backward(map, &g)?,
            (Layer::Act(ActKind::Relu), LayerCache::Relu { input }) => relu_backward(input, &g),
            (Layer::Act(ActKind::Sigmoid), LayerCache::Sigmoid { output }) => {
                sigmoid_backward(output, &g)
            }
            (Layer::Flatten, LayerCache::Flatten { in_shape }) => g.reshape(in_shape.clone())?,
            (Layer::Fc { weight, .. }, LayerCache::Fc { input }) => {
                let (gi, gw, gb) = fc_backward(input, weight, &g)?;
                let acc = grads[i].as_mut().expect("fc grads allocated");
                acc.0.scaled_add(1.0, 1.0, &gw)?;
                acc.1.scaled_add(1.0, 1.0, &gb)?;
                gi
            }
            _ => {
                return Err(Error::Data(
                    "layer cache does not match network structure".into(),
                ))
            }
        };
    }
    Ok(g)
}

pub(crate) fn zero_grads_for(layers: &[Layer]) -> Vec<Option<(Tensor, Tensor)>> {
    layers
        .iter()
        .map(|l| match l {
            Layer::Conv(p) => Some((
                Tensor::zeros(p.filter.shape()),
                Tensor::zeros(p.bias.shape()),
            )),
            Layer::Fc { weight, bias } => {
                Some((Tensor::zeros(weight.shape()), Tensor::zeros(bias.shape())))
            }
            _ => None,
        })
        .collect()
}

pub(crate) fn apply_sgd_layers(
    layers: &mut [Layer],
    grads: &[Option<(Tensor, Tensor)>],
    velocity: &mut [Option<(Tensor, Tensor)>],
    learning_rate: f64,
    momentum: f64,
) -> Result<()> {
    for (i, layer) in layers.iter_mut().enumerate() {
        let (Some(g), Some(v)) = (&grads[i], &mut velocity[i]) else {
            continue;
        };
        match layer {
            Layer::Conv(p) => {
                sgd_step(&mut p.filter, &g.0, &mut v.0, learning_rate, momentum)?;
                sgd_step(&mut p.bias, &g.1, &mut v.1, learning_rate, momentum)?;
            }
            Layer::Fc { weight, bias } => {
                sgd_step(weight, &g.0, &mut v.0, learning_rate, momentum)?;
                sgd_step(bias, &g.1, &mut v.1, learning_rate, momentum)?;
            }
            _ => unreachable!("gradients only exist for parameterized layers"),
        }
    }
    Ok(())
}

impl Network {
    pub fn n_states(&self) -> usize {
        self.spec.n_states
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Conv(p) => p.param_count(),
                Layer::Fc { weight, bias } => weight.len() + bias.len(),
                _ => 0,
            })
            .sum()
    }

    /// Parameter tensors in declaration order, weights before biases.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for l in &self.layers {
            match l {
                Layer::Conv(p) => {
                    out.push(&p.filter);
                    out.push(&p.bias);
                }
                Layer::Fc { weight, bias } => {
                    out.push(weight);
                    out.push(bias);
                }
                _ => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            match l {
                Layer::Conv(p) => {
                    out.push(&mut p.filter);
                    out.push(&mut p.bias);
                }
                Layer::Fc { weight, bias } => {
                    out.push(weight);
                    out.push(bias);
                }
                _ => {}
            }
        }
        out
    }

    /// Inference pass: input (maps, T, F) to logits.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        forward_layers(&self.layers, input)
    }

    /// Forward pass that keeps everything the backward pass needs.
    pub fn forward_train(&self, input: &Tensor) -> Result<(Tensor, Vec<LayerCache>)> {
        forward_layers_train(&self.layers, input.clone())
    }

    pub fn zero_grads(&self) -> ParamGrads {
        ParamGrads {
            items: zero_grads_for(&self.layers),
        }
    }

    pub fn momentum_state(&self) -> MomentumState {
        MomentumState {
            items: zero_grads_for(&self.layers),
        }
    }

    /// Backpropagates `grad_logits`, accumulating parameter gradients into
    /// `grads` and returning the gradient with respect to the input.
    pub fn backward_into(
        &self,
        caches: &[LayerCache],
        grad_logits: &Tensor,
        grads: &mut ParamGrads,
    ) -> Result<Tensor> {
        backward_layers_into(&self.layers, caches, grad_logits, &mut grads.items)
    }

    /// One momentum-SGD update from accumulated gradients.
    pub fn apply_sgd(
        &mut self,
        grads: &ParamGrads,
        velocity: &mut MomentumState,
        learning_rate: f64,
        momentum: f64,
    ) -> Result<()> {
        apply_sgd_layers(
            &mut self.layers,
            &grads.items,
            &mut velocity.items,
            learning_rate,
            momentum,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::catalog::{catalog, cnn_baseline, vd10};
    use crate::tensor::softmax_ce;

    #[test]
    fn same_seed_same_parameters() {
        let spec = crate::arch::catalog::vd6(8);
        let a = build_network(&spec, 1234).unwrap();
        let b = build_network(&spec, 1234).unwrap();
        for (x, y) in a.params().iter().zip(b.params().iter()) {
            assert_eq!(x.data(), y.data());
        }
        let c = build_network(&spec, 1235).unwrap();
        assert!(a.params()[0].data() != c.params()[0].data());
    }

    #[test]
    fn vd10_forward_produces_state_logits() {
        let net = build_network(&vd10(16), 7).unwrap();
        let input = Tensor::filled(&[1, 17, 64], 0.1);
        let logits = net.forward(&input).unwrap();
        assert_eq!(logits.shape(), &[16]);
        assert!(logits.all_finite());
    }

    #[test]
    fn cnn_baseline_forward_produces_state_logits() {
        let net = build_network(&cnn_baseline(16), 7).unwrap();
        let input = Tensor::filled(&[3, 11, 40], 0.1);
        let logits = net.forward(&input).unwrap();
        assert_eq!(logits.shape(), &[16]);
    }

    #[test]
    fn zero_input_gives_finite_bias_path() {
        for spec in catalog(6) {
            let net = build_network(&spec, 99).unwrap();
            let (m, t, f) = spec.input_shape;
            let logits = net.forward(&Tensor::zeros(&[m, t, f])).unwrap();
            assert!(logits.all_finite(), "{} logits not finite", spec.name);
            let logits2 = net.forward(&Tensor::zeros(&[m, t, f])).unwrap();
            assert_eq!(logits.data(), logits2.data(), "{} not deterministic", spec.name);
        }
    }

    #[test]
    fn backward_matches_loss_decrease() {
        // A couple of SGD steps on a fixed sample must lower the CE loss;
        // catches sign errors the finite-difference suite would miss only
        // at integration level.
        let mut spec = crate::arch::catalog::vd6(4);
        spec.name = "vd6-tiny".into();
        let mut net = build_network(&spec, 3).unwrap();
        let input = Tensor::filled(&[1, 11, 40], 0.25);
        let label = 2usize;

        let mut velocity = net.momentum_state();
        let (logits, caches) = net.forward_train(&input).unwrap();
        let (loss0, grad) = softmax_ce(&logits, label).unwrap();
        let mut grads = net.zero_grads();
        net.backward_into(&caches, &grad, &mut grads).unwrap();
        net.apply_sgd(&grads, &mut velocity, 0.05, 0.0).unwrap();

        let (logits1, _) = net.forward_train(&input).unwrap();
        let (loss1, _) = softmax_ce(&logits1, label).unwrap();
        assert!(loss1 < loss0, "loss did not decrease: {loss0} -> {loss1}");
    }
}
