//! Batched finite-difference verification of every differentiable
//! primitive, shared by the command-line `gradcheck` and the acceptance
//! suite. Each scope draws random small instances at points away from
//! ReLU kinks and pooling ties.

use crate::arch::{ActKind, ArchitectureSpec, LayerSpec, NetFamily};
use crate::error::{Error, Result};
use crate::joint::{build_joint, JointNetwork, JointSpec};
use crate::lstmp::{sequence_grads, LstmpStack, StackGrads};
use crate::tensor::{
    conv2d_backward, conv2d_forward, fc_backward, fc_forward, grad_check, maxpool_backward,
    maxpool_forward, relu, relu_backward, sigmoid, sigmoid_backward, softmax_ce, ConvParams,
    GradCheckReport, PoolParams, Tensor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SCOPES: &[&str] = &[
    "conv", "pool", "fc", "relu", "sigmoid", "softmax", "chain", "lstmp", "joint",
];

/// Runs one scope: `instances` random cases checked at `tolerance`.
pub fn run_scope(scope: &str, instances: usize, tolerance: f64) -> Result<Vec<GradCheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xc0ffee ^ scope.len() as u64);
    let mut reports = Vec::with_capacity(instances);
    for case in 0..instances {
        let name = format!("{scope}[{case}]");
        let report = match scope {
            "conv" => conv_case(&name, &mut rng, tolerance),
            "pool" => pool_case(&name, &mut rng, tolerance),
            "fc" => fc_case(&name, &mut rng, tolerance),
            "relu" => act_case(&name, &mut rng, tolerance, false),
            "sigmoid" => act_case(&name, &mut rng, tolerance, true),
            "softmax" => softmax_case(&name, &mut rng, tolerance),
            "chain" => chain_case(&name, &mut rng, tolerance, case as u64),
            "lstmp" => lstmp_case(&name, &mut rng, tolerance, case as u64),
            "joint" => joint_case(&name, &mut rng, tolerance, case as u64),
            other => return Err(Error::Data(format!("unknown gradcheck scope '{other}'"))),
        };
        reports.push(report);
    }
    Ok(reports)
}

/// Every scope at the default instance count.
pub fn run_all(instances: usize, tolerance: f64) -> Result<Vec<GradCheckReport>> {
    let mut out = Vec::new();
    for scope in SCOPES {
        out.extend(run_scope(scope, instances, tolerance)?);
    }
    Ok(out)
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .expect("random tensor")
}

fn conv_case(name: &str, rng: &mut ChaCha8Rng, tol: f64) -> GradCheckReport {
    let cin = rng.gen_range(1..=2);
    let cout = rng.gen_range(1..=3);
    let (kt, kf) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
    let (pad_t, pad_f) = (rng.gen_range(0..=1), rng.gen_range(0..=1));
    let t = rng.gen_range(kt..=kt + 3);
    let f = rng.gen_range(kf..=kf + 3);
    let input = rand_tensor(rng, &[cin, t, f]);
    let filter = rand_tensor(rng, &[cout, cin, kt, kf]);
    let bias = rand_tensor(rng, &[cout]);
    let t_out = t + 2 * pad_t - kt + 1;
    let f_out = f + 2 * pad_f - kf + 1;
    let target = rand_tensor(rng, &[cout, t_out, f_out]);
    let (ni, nf) = (input.len(), filter.len());

    let mut point = Vec::new();
    point.extend_from_slice(input.data());
    point.extend_from_slice(filter.data());
    point.extend_from_slice(bias.data());

    let in_shape = input.shape().to_vec();
    let fi_shape = filter.shape().to_vec();
    let unpack = move |x: &[f64]| -> (Tensor, ConvParams) {
        let input = Tensor::new(in_shape.clone(), x[..ni].to_vec()).unwrap();
        let filter = Tensor::new(fi_shape.clone(), x[ni..ni + nf].to_vec()).unwrap();
        let bias = Tensor::from_vec(x[ni + nf..].to_vec());
        (input, ConvParams::new(filter, bias, pad_t, pad_f).unwrap())
    };
    let u2 = unpack.clone();
    let target2 = target.clone();
    grad_check(
        name,
        move |x| {
            let (input, p) = unpack(x);
            let out = conv2d_forward(&input, &p).unwrap();
            out.iter().zip(target.iter()).map(|(&o, &t)| o * t).sum()
        },
        move |x| {
            let (input, p) = u2(x);
            let (gi, gf, gb) = conv2d_backward(&input, &p, &target2).unwrap();
            let mut g = Vec::new();
            g.extend_from_slice(gi.data());
            g.extend_from_slice(gf.data());
            g.extend_from_slice(gb.data());
            g
        },
        &point,
        tol,
    )
}

fn pool_case(name: &str, rng: &mut ChaCha8Rng, tol: f64) -> GradCheckReport {
    let maps = rng.gen_range(1..=2);
    let (pt, pf) = (rng.gen_range(1..=2), rng.gen_range(1..=2));
    let (t, f) = (pt * rng.gen_range(1..=3), pf * rng.gen_range(1..=3));
    // Well-separated values keep every window tie-free even after the
    // finite-difference nudge.
    let mut values: Vec<f64> = (0..maps * t * f).map(|i| i as f64 * 0.37).collect();
    use rand::seq::SliceRandom;
    values.shuffle(rng);
    let input = Tensor::new(vec![maps, t, f], values).unwrap();
    let params = PoolParams::new(pt, pf, false).unwrap();
    let target = rand_tensor(rng, &[maps, t / pt, f / pf]);
    let shape = input.shape().to_vec();

    let t2 = target.clone();
    let shape2 = shape.clone();
    grad_check(
        name,
        move |x| {
            let input = Tensor::new(shape.clone(), x.to_vec()).unwrap();
            let (out, _) = maxpool_forward(&input, &params).unwrap();
            out.iter().zip(target.iter()).map(|(&o, &t)| o * t).sum()
        },
        move |x| {
            let input = Tensor::new(shape2, x.to_vec()).unwrap();
            let (_, map) = maxpool_forward(&input, &params).unwrap();
            maxpool_backward(&map, &t2).unwrap().into_data()
        },
        input.data(),
        tol,
    )
}

fn fc_case(name: &str, rng: &mut ChaCha8Rng, tol: f64) -> GradCheckReport {
    let in_dim = rng.gen_range(2..=8);
    let out_dim = rng.gen_range(1..=6);
    let input = rand_tensor(rng, &[in_dim]);
    let weight = rand_tensor(rng, &[out_dim, in_dim]);
    let bias = rand_tensor(rng, &[out_dim]);
    let target = rand_tensor(rng, &[out_dim]);
    let nw = weight.len();

    let mut point = Vec::new();
    point.extend_from_slice(input.data());
    point.extend_from_slice(weight.data());
    point.extend_from_slice(bias.data());

    let t2 = target.clone();
    grad_check(
        name,
        move |x| {
            let input = Tensor::from_vec(x[..in_dim].to_vec());
            let weight = Tensor::new(vec![out_dim, in_dim], x[in_dim..in_dim + nw].to_vec()).unwrap();
            let bias = Tensor::from_vec(x[in_dim + nw..].to_vec());
            let out = fc_forward(&input, &weight, &bias).unwrap();
            out.iter().zip(target.iter()).map(|(&o, &t)| o * t).sum()
        },
        move |x| {
            let input = Tensor::from_vec(x[..in_dim].to_vec());
            let weight = Tensor::new(vec![out_dim, in_dim], x[in_dim..in_dim + nw].to_vec()).unwrap();
            let (gi, gw, gb) = fc_backward(&input, &weight, &t2).unwrap();
            let mut g = Vec::new();
            g.extend_from_slice(gi.data());
            g.extend_from_slice(gw.data());
            g.extend_from_slice(gb.data());
            g
        },
        &point,
        tol,
    )
}

fn act_case(name: &str, rng: &mut ChaCha8Rng, tol: f64, use_sigmoid: bool) -> GradCheckReport {
    let n = rng.gen_range(4..=12);
    // Keep every component at least 0.05 away from the ReLU kink.
    let point: Vec<f64> = (0..n)
        .map(|_| {
            let v: f64 = rng.gen_range(0.05..1.5);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    let target: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let t2 = target.clone();
    grad_check(
        name,
        move |x| {
            let input = Tensor::from_vec(x.to_vec());
            let out = if use_sigmoid { sigmoid(&input) } else { relu(&input) };
            out.iter().zip(&target).map(|(&o, &t)| o * t).sum()
        },
        move |x| {
            let input = Tensor::from_vec(x.to_vec());
            let g = Tensor::from_vec(t2.clone());
            if use_sigmoid {
                sigmoid_backward(&sigmoid(&input), &g).into_data()
            } else {
                relu_backward(&input, &g).into_data()
            }
        },
        &point,
        tol,
    )
}

fn softmax_case(name: &str, rng: &mut ChaCha8Rng, tol: f64) -> GradCheckReport {
    let n = rng.gen_range(2..=10);
    let label = rng.gen_range(0..n);
    let point: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
    grad_check(
        name,
        move |x| softmax_ce(&Tensor::from_vec(x.to_vec()), label).unwrap().0,
        move |x| {
            softmax_ce(&Tensor::from_vec(x.to_vec()), label)
                .unwrap()
                .1
                .into_data()
        },
        &point,
        tol,
    )
}

fn tiny_chain_spec(n_states: usize) -> ArchitectureSpec {
    ArchitectureSpec {
        name: "gradcheck-chain".into(),
        input_shape: (1, 4, 5),
        layers: vec![
            LayerSpec::Conv {
                out_maps: 2,
                kt: 3,
                kf: 3,
                pad_t: 0,
                pad_f: 0,
            },
            LayerSpec::Activation(ActKind::Relu),
            LayerSpec::Flatten,
            LayerSpec::Fc { out_dim: 6 },
            LayerSpec::Activation(ActKind::Relu),
            LayerSpec::Fc { out_dim: n_states },
        ],
        n_states,
        family: NetFamily::Baseline,
    }
}

/// Full conv-relu-fc-softmax chain, differentiated with respect to every
/// parameter at once.
fn chain_case(name: &str, rng: &mut ChaCha8Rng, tol: f64, seed: u64) -> GradCheckReport {
    let net = crate::arch::build_network(&tiny_chain_spec(3), seed.wrapping_add(31)).unwrap();
    let input = rand_tensor(rng, &[1, 4, 5]);
    let label = rng.gen_range(0..3);
    let point: Vec<f64> = net
        .params()
        .iter()
        .flat_map(|t| t.data().iter().cloned())
        .collect();

    let with_params = move |reference: &crate::arch::Network, x: &[f64]| {
        let mut n = reference.clone();
        let mut off = 0;
        for p in n.params_mut() {
            let len = p.len();
            p.data_mut().copy_from_slice(&x[off..off + len]);
            off += len;
        }
        n
    };
    let net2 = net.clone();
    let input2 = input.clone();
    grad_check(
        name,
        move |x| {
            let n = with_params(&net, x);
            let logits = n.forward(&input).unwrap();
            softmax_ce(&logits, label).unwrap().0
        },
        move |x| {
            let mut n = net2.clone();
            let mut off = 0;
            for p in n.params_mut() {
                let len = p.len();
                p.data_mut().copy_from_slice(&x[off..off + len]);
                off += len;
            }
            let (logits, caches) = n.forward_train(&input2).unwrap();
            let (_, grad) = softmax_ce(&logits, label).unwrap();
            let mut grads = n.zero_grads();
            n.backward_into(&caches, &grad, &mut grads).unwrap();
            let mut out = Vec::new();
            for item in grads.items.iter().flatten() {
                out.extend_from_slice(item.0.data());
                out.extend_from_slice(item.1.data());
            }
            out
        },
        &point,
        tol,
    )
}

fn lstmp_point(stack: &LstmpStack) -> Vec<f64> {
    let mut point = Vec::new();
    for l in &stack.layers {
        for t in [&l.w_i, &l.w_f, &l.w_g, &l.w_o, &l.b_i, &l.b_f, &l.b_g, &l.b_o, &l.proj] {
            point.extend_from_slice(t.data());
        }
        if let Some(p) = &l.peepholes {
            point.extend_from_slice(p.p_i.data());
            point.extend_from_slice(p.p_f.data());
            point.extend_from_slice(p.p_o.data());
        }
    }
    point.extend_from_slice(stack.out_weight.data());
    point.extend_from_slice(stack.out_bias.data());
    point
}

fn lstmp_with_point(reference: &LstmpStack, x: &[f64]) -> LstmpStack {
    let mut stack = reference.clone();
    let mut off = 0;
    let mut set = |t: &mut Tensor| {
        let n = t.len();
        t.data_mut().copy_from_slice(&x[off..off + n]);
        off += n;
    };
    for l in &mut stack.layers {
        for t in [
            &mut l.w_i, &mut l.w_f, &mut l.w_g, &mut l.w_o, &mut l.b_i, &mut l.b_f, &mut l.b_g,
            &mut l.b_o, &mut l.proj,
        ] {
            set(t);
        }
        if let Some(p) = &mut l.peepholes {
            set(&mut p.p_i);
            set(&mut p.p_f);
            set(&mut p.p_o);
        }
    }
    set(&mut stack.out_weight);
    set(&mut stack.out_bias);
    stack
}

fn lstmp_grads_flat(grads: &StackGrads) -> Vec<f64> {
    let mut out = Vec::new();
    grads.for_each_tensor(|t| out.extend_from_slice(t.data()));
    out
}

/// LSTMP cell unrolled 4 steps; alternating cases exercise peepholes.
fn lstmp_case(name: &str, rng: &mut ChaCha8Rng, tol: f64, seed: u64) -> GradCheckReport {
    let peepholes = seed % 2 == 1;
    let mut stack = LstmpStack::new(3, 4, 2, 2, 3, peepholes, seed.wrapping_add(91)).unwrap();
    for l in &mut stack.layers {
        if let Some(p) = &mut l.peepholes {
            for t in [&mut p.p_i, &mut p.p_f, &mut p.p_o] {
                for v in t.data_mut() {
                    *v = rng.gen_range(-0.3..0.3);
                }
            }
        }
    }
    let frames = rand_tensor(rng, &[4, 3]);
    let labels: Vec<u32> = (0..4).map(|_| rng.gen_range(0..3)).collect();
    let point = lstmp_point(&stack);

    let s2 = stack.clone();
    let f2 = frames.clone();
    let l2 = labels.clone();
    grad_check(
        name,
        move |x| {
            let s = lstmp_with_point(&stack, x);
            sequence_grads(&s, &frames, &labels, 100, 0).unwrap().1
        },
        move |x| {
            let s = lstmp_with_point(&s2, x);
            let (grads, _, _) = sequence_grads(&s, &f2, &l2, 100, 0).unwrap();
            lstmp_grads_flat(&grads)
        },
        &point,
        tol,
    )
}

fn joint_net(seed: u64) -> JointNetwork {
    let base = tiny_chain_spec(3);
    build_joint(&JointSpec::new(base, 5, 4), seed.wrapping_add(57)).unwrap()
}

fn joint_grads_flat(grads: &crate::joint::JointGrads) -> Vec<f64> {
    let mut out = Vec::new();
    for item in grads.trunk.iter().flatten() {
        out.extend_from_slice(item.0.data());
        out.extend_from_slice(item.1.data());
    }
    out.extend_from_slice(grads.aux.0.data());
    out.extend_from_slice(grads.aux.1.data());
    for item in grads.shared.iter().flatten() {
        out.extend_from_slice(item.0.data());
        out.extend_from_slice(item.1.data());
    }
    out
}

/// Whole joint network end to end.
fn joint_case(name: &str, rng: &mut ChaCha8Rng, tol: f64, seed: u64) -> GradCheckReport {
    let net = joint_net(seed);
    let maps = rand_tensor(rng, &[1, 4, 5]);
    let aux: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let label = rng.gen_range(0..3);
    let point: Vec<f64> = net
        .params()
        .iter()
        .flat_map(|t| t.data().iter().cloned())
        .collect();

    let with_params = |reference: &JointNetwork, x: &[f64]| {
        let mut n = reference.clone();
        let mut off = 0;
        for p in n.params_mut() {
            let len = p.len();
            p.data_mut().copy_from_slice(&x[off..off + len]);
            off += len;
        }
        n
    };
    let net2 = net.clone();
    let maps2 = maps.clone();
    let aux2 = aux.clone();
    grad_check(
        name,
        move |x| {
            let n = with_params(&net, x);
            let logits = n.forward(&maps, &aux).unwrap();
            softmax_ce(&logits, label).unwrap().0
        },
        move |x| {
            let n = with_params(&net2, x);
            let (logits, caches) = n.forward_train(&maps2, &aux2).unwrap();
            let (_, grad) = softmax_ce(&logits, label).unwrap();
            let mut grads = n.zero_grads();
            n.backward_into(&caches, &grad, &mut grads).unwrap();
            joint_grads_flat(&grads)
        },
        &point,
        tol,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_scope_passes_a_small_batch() {
        for scope in SCOPES {
            let reports = run_scope(scope, 3, 1e-4).unwrap();
            for r in reports {
                assert!(r.passed, "{}", r.line());
            }
        }
    }

    #[test]
    fn unknown_scope_is_an_error() {
        assert!(run_scope("nope", 1, 1e-4).is_err());
    }
}
