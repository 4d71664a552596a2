use super::*;
use crate::arch::catalog::vd6;
use crate::arch::{ArchitectureSpec, NetFamily};
use crate::archive::Record;
use crate::tensor::{grad_check, softmax_ce};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Tiny conv trunk + small shared stack, cheap enough for finite
/// differences over every parameter.
fn tiny_base(n_states: usize) -> ArchitectureSpec {
    use crate::arch::{ActKind, LayerSpec};
    ArchitectureSpec {
        name: "tiny-joint-base".into(),
        input_shape: (1, 5, 6),
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
            LayerSpec::Fc { out_dim: 7 },
            LayerSpec::Activation(ActKind::Relu),
            LayerSpec::Fc { out_dim: n_states },
        ],
        n_states,
        family: NetFamily::Baseline,
    }
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

#[test]
fn paper_aux_dimensions() {
    // fMLLR: 40 dims x 11-frame window; MFCC: 39 x 11; i-vector: 100;
    // combined: 540.
    let mk = |kind, frame_dims: Option<u32>, utt_dims: Option<u32>| {
        let frame_archive = frame_dims.map(|d| {
            let mut a = Archive::new("aux");
            a.records.push(Record {
                id: "u0".into(),
                n_maps: 0,
                frames: 4,
                dims: d,
                data: vec![0.0; 4 * d as usize],
                aux: None,
                labels: None,
            });
            a
        });
        let utt_archive = utt_dims.map(|d| {
            let mut a = Archive::new("aux");
            a.records.push(Record {
                id: "u0".into(),
                n_maps: 0,
                frames: 1,
                dims: d,
                data: vec![0.0; d as usize],
                aux: None,
                labels: None,
            });
            a
        });
        AuxSource {
            kind,
            context: 11,
            frame_archive,
            utt_archive,
        }
    };
    assert_eq!(mk(AuxKind::Fmllr, Some(40), None).aux_dim().unwrap(), 440);
    assert_eq!(mk(AuxKind::Mfcc, Some(39), None).aux_dim().unwrap(), 429);
    assert_eq!(mk(AuxKind::Ivector, None, Some(100)).aux_dim().unwrap(), 100);
    assert_eq!(
        mk(AuxKind::FmllrIvector, Some(40), Some(100))
            .aux_dim()
            .unwrap(),
        540
    );
}

#[test]
fn build_joint_accepts_catalog_base() {
    let spec = JointSpec::new(vd6(8), 540, 512);
    let net = build_joint(&spec, 11).unwrap();
    assert_eq!(net.n_states(), 8);
    // First shared FC widened by aux_hidden columns.
    let Layer::Fc { weight, .. } = &net.shared[0] else {
        panic!("expected fc after flatten");
    };
    assert_eq!(weight.shape()[1], 256 * 3 + 512);
}

#[test]
fn aux_length_mismatch_is_dimension_error() {
    let spec = JointSpec::new(tiny_base(4), 8, 5);
    let net = build_joint(&spec, 1).unwrap();
    let maps = Tensor::zeros(&[1, 5, 6]);
    assert!(matches!(
        net.forward(&maps, &[0.0; 7]),
        Err(Error::Dimension { .. })
    ));
}

#[test]
fn zeroed_aux_path_isolates_conv_stream() {
    let spec = JointSpec::new(tiny_base(4), 8, 5);
    let mut net = build_joint(&spec, 2).unwrap();
    // Zero the aux FC and the aux columns of the first shared FC.
    net.aux_weight.data_mut().fill(0.0);
    net.aux_bias.data_mut().fill(0.0);
    let trunk_width = 2 * 3 * 4; // conv output 2x3x4 flattened
    if let Layer::Fc { weight, .. } = &mut net.shared[0] {
        let (out_dim, in_dim) = (weight.shape()[0], weight.shape()[1]);
        let w = weight.data_mut();
        for o in 0..out_dim {
            for k in trunk_width..in_dim {
                w[o * in_dim + k] = 0.0;
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let maps = Tensor::new(vec![1, 5, 6], rand_vec(&mut rng, 30)).unwrap();
    let a = net.forward(&maps, &rand_vec(&mut rng, 8)).unwrap();
    let b = net.forward(&maps, &rand_vec(&mut rng, 8)).unwrap();
    assert_eq!(a.data(), b.data(), "logits must ignore the aux input exactly");
}

#[test]
fn permuting_aux_units_with_matching_columns_keeps_logits() {
    let spec = JointSpec::new(tiny_base(4), 8, 5);
    let net = build_joint(&spec, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let maps = Tensor::new(vec![1, 5, 6], rand_vec(&mut rng, 30)).unwrap();
    let aux = rand_vec(&mut rng, 8);
    let before = net.forward(&maps, &aux).unwrap();

    // Reverse the aux hidden units: permute aux FC rows and the matching
    // columns of the first shared FC.
    let mut permuted = net.clone();
    let h = spec.aux_hidden;
    {
        let w = permuted.aux_weight.data_mut();
        for r in 0..h / 2 {
            for c in 0..spec.aux_dim {
                w.swap(r * spec.aux_dim + c, (h - 1 - r) * spec.aux_dim + c);
            }
        }
        let b = permuted.aux_bias.data_mut();
        b.reverse();
    }
    let trunk_width = 2 * 3 * 4;
    if let Layer::Fc { weight, .. } = &mut permuted.shared[0] {
        let (out_dim, in_dim) = (weight.shape()[0], weight.shape()[1]);
        let w = weight.data_mut();
        for o in 0..out_dim {
            let row = &mut w[o * in_dim..(o + 1) * in_dim];
            row[trunk_width..trunk_width + h].reverse();
        }
    }
    let after = permuted.forward(&maps, &aux).unwrap();
    for (x, y) in before.iter().zip(after.iter()) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn joint_gradients_match_finite_differences() {
    let spec = JointSpec::new(tiny_base(3), 8, 5);
    let net = build_joint(&spec, 6).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let maps = Tensor::new(vec![1, 5, 6], rand_vec(&mut rng, 30)).unwrap();
    let aux = rand_vec(&mut rng, 8);
    let label = 1usize;

    // Point = all parameters flattened in declaration order.
    let point: Vec<f64> = net
        .params()
        .iter()
        .flat_map(|t| t.data().iter().cloned())
        .collect();

    let with_params = |x: &[f64]| -> JointNetwork {
        let mut n = net.clone();
        let mut off = 0;
        for p in n.params_mut() {
            let len = p.len();
            p.data_mut().copy_from_slice(&x[off..off + len]);
            off += len;
        }
        n
    };
    let eval = |x: &[f64]| {
        let n = with_params(x);
        let logits = n.forward(&maps, &aux).unwrap();
        softmax_ce(&logits, label).unwrap().0
    };
    let analytic = |x: &[f64]| {
        let n = with_params(x);
        let (logits, caches) = n.forward_train(&maps, &aux).unwrap();
        let (_, grad) = softmax_ce(&logits, label).unwrap();
        let mut grads = n.zero_grads();
        n.backward_into(&caches, &grad, &mut grads).unwrap();
        // Flatten gradients in the same declaration order as params().
        let mut out = Vec::new();
        for item in &grads.trunk {
            if let Some((w, b)) = item {
                out.extend_from_slice(w.data());
                out.extend_from_slice(b.data());
            }
        }
        out.extend_from_slice(grads.aux.0.data());
        out.extend_from_slice(grads.aux.1.data());
        for item in &grads.shared {
            if let Some((w, b)) = item {
                out.extend_from_slice(w.data());
                out.extend_from_slice(b.data());
            }
        }
        out
    };
    let report = grad_check("joint-network", eval, analytic, &point, 1e-4);
    assert!(report.passed, "{}", report.line());
}

#[test]
fn aux_stream_receives_gradient() {
    let spec = JointSpec::new(tiny_base(3), 8, 5);
    let net = build_joint(&spec, 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut grads = net.zero_grads();
    for i in 0..5 {
        let maps = Tensor::new(vec![1, 5, 6], rand_vec(&mut rng, 30)).unwrap();
        let aux = rand_vec(&mut rng, 8);
        let (logits, caches) = net.forward_train(&maps, &aux).unwrap();
        let (_, grad) = softmax_ce(&logits, i % 3).unwrap();
        net.backward_into(&caches, &grad, &mut grads).unwrap();
    }
    let norm: f64 = grads.aux.0.iter().map(|v| v * v).sum();
    assert!(norm > 0.0, "aux weights never received gradient");
}

#[test]
fn parameter_count_matches_hand_formula() {
    let spec = JointSpec::new(tiny_base(4), 8, 5);
    let net = build_joint(&spec, 10).unwrap();
    // conv 2@3x3 on 1 map: 2*1*9+2; aux fc 5x8+5; fc1 7x(24+5)+7; out 4x7+4.
    let expected = (2 * 9 + 2) + (5 * 8 + 5) + (7 * 29 + 7) + (4 * 7 + 4);
    assert_eq!(net.param_count(), expected);
}

#[test]
fn training_reduces_joint_loss() {
    let spec = JointSpec::new(tiny_base(3), 6, 4);
    let mut net = build_joint(&spec, 12).unwrap();
    let mut velocity = net.momentum_state();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let samples: Vec<(Tensor, Vec<f64>, usize)> = (0..12)
        .map(|i| {
            (
                Tensor::new(vec![1, 5, 6], rand_vec(&mut rng, 30)).unwrap(),
                rand_vec(&mut rng, 6),
                i % 3,
            )
        })
        .collect();
    let avg_loss = |net: &JointNetwork| -> f64 {
        samples
            .iter()
            .map(|(m, a, l)| softmax_ce(&net.forward(m, a).unwrap(), *l).unwrap().0)
            .sum::<f64>()
            / samples.len() as f64
    };
    let initial = avg_loss(&net);
    for _ in 0..30 {
        let mut grads = net.zero_grads();
        for (m, a, l) in &samples {
            let (logits, caches) = net.forward_train(m, a).unwrap();
            let (_, g) = softmax_ce(&logits, *l).unwrap();
            net.backward_into(&caches, &g, &mut grads).unwrap();
        }
        grads.scale(1.0 / samples.len() as f64);
        net.apply_sgd(&grads, &mut velocity, 0.2, 0.5).unwrap();
    }
    let trained = avg_loss(&net);
    assert!(
        trained < initial * 0.5,
        "joint training failed to learn: {initial} -> {trained}"
    );
}

#[test]
fn ivector_constant_across_frames() {
    let mut utt = Archive::new("aux:ivector");
    utt.records.push(Record {
        id: "u3".into(),
        n_maps: 0,
        frames: 1,
        dims: 4,
        data: vec![1.0, 2.0, 3.0, 4.0],
        aux: None,
        labels: None,
    });
    let src = AuxSource {
        kind: AuxKind::Ivector,
        context: 11,
        frame_archive: None,
        utt_archive: Some(utt),
    };
    let vs = src.vectors_for("u3", 5).unwrap();
    assert_eq!(vs.len(), 5);
    for v in &vs {
        assert_eq!(v, &vec![1.0, 2.0, 3.0, 4.0]);
    }
}

#[test]
fn frame_windowing_matches_definition() {
    let frames = 6usize;
    let dims = 2usize;
    let data: Vec<f64> = (0..frames * dims).map(|i| i as f64).collect();
    let mut arc = Archive::new("aux:mfcc");
    arc.records.push(Record {
        id: "u1".into(),
        n_maps: 0,
        frames: frames as u32,
        dims: dims as u32,
        data: data.clone(),
        aux: None,
        labels: None,
    });
    let src = AuxSource {
        kind: AuxKind::Mfcc,
        context: 3,
        frame_archive: Some(arc),
        utt_archive: None,
    };
    let vs = src.vectors_for("u1", frames).unwrap();
    // Frame 2's window is frames 1..=3 in order.
    assert_eq!(vs[2], vec![2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
    // Frame 0 replicates the first frame on the left.
    assert_eq!(vs[0], vec![0.0, 1.0, 0.0, 1.0, 2.0, 3.0]);
}

#[test]
fn unknown_utterance_is_data_error() {
    let src = AuxSource {
        kind: AuxKind::Ivector,
        context: 11,
        frame_archive: None,
        utt_archive: Some(Archive::new("aux:ivector")),
    };
    assert!(matches!(src.vectors_for("nope", 3), Err(Error::Data(_))));
}

#[test]
fn combined_kind_concatenates() {
    let mut frame = Archive::new("aux:fmllr");
    frame.records.push(Record {
        id: "u".into(),
        n_maps: 0,
        frames: 2,
        dims: 2,
        data: vec![1.0, 2.0, 3.0, 4.0],
        aux: None,
        labels: None,
    });
    let mut utt = Archive::new("aux:ivector");
    utt.records.push(Record {
        id: "u".into(),
        n_maps: 0,
        frames: 1,
        dims: 3,
        data: vec![7.0, 8.0, 9.0],
        aux: None,
        labels: None,
    });
    let src = AuxSource {
        kind: AuxKind::FmllrIvector,
        context: 1,
        frame_archive: Some(frame),
        utt_archive: Some(utt),
    };
    assert_eq!(src.aux_dim().unwrap(), 2 + 3);
    let vs = src.vectors_for("u", 2).unwrap();
    assert_eq!(vs[0], vec![1.0, 2.0, 7.0, 8.0, 9.0]);
    assert_eq!(vs[1], vec![3.0, 4.0, 7.0, 8.0, 9.0]);
}
