use super::*;
use crate::tensor::grad_check;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_stack(peepholes: bool, seed: u64) -> LstmpStack {
    LstmpStack::new(3, 4, 2, 2, 3, peepholes, seed).unwrap()
}

fn rand_frames(rng: &mut ChaCha8Rng, t: usize, d: usize) -> Tensor {
    Tensor::new(
        vec![t, d],
        (0..t * d).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn zero_layer(params: &mut LstmpLayerParams) {
    for t in [
        &mut params.w_i,
        &mut params.w_f,
        &mut params.w_g,
        &mut params.w_o,
        &mut params.b_i,
        &mut params.b_f,
        &mut params.b_g,
        &mut params.b_o,
        &mut params.proj,
    ] {
        t.data_mut().fill(0.0);
    }
}

#[test]
fn zero_everything_gives_zero_state() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut params = LstmpLayerParams::new(3, 4, 2, false, &mut rng).unwrap();
    zero_layer(&mut params);
    let state = LayerState {
        h: vec![0.0; 2],
        c: vec![0.0; 4],
    };
    let (next, _) = lstmp_step(&params, &[0.0; 3], &state).unwrap();
    assert_eq!(next.h, vec![0.0; 2]);
    assert_eq!(next.c, vec![0.0; 4]);
}

#[test]
fn saturated_forget_carries_memory() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut params = LstmpLayerParams::new(3, 4, 2, false, &mut rng).unwrap();
    zero_layer(&mut params);
    params.b_f.data_mut().fill(60.0); // forget ~ 1
    params.b_i.data_mut().fill(-60.0); // input ~ 0
    let state = LayerState {
        h: vec![0.0; 2],
        c: vec![0.7, -1.3, 0.25, 2.0],
    };
    let (next, _) = lstmp_step(&params, &[0.5, -0.5, 1.0], &state).unwrap();
    for (a, b) in next.c.iter().zip(&state.c) {
        assert!((a - b).abs() < 1e-12, "cell leaked: {a} vs {b}");
    }
}

#[test]
fn forced_gates_make_pure_integrator() {
    // f ~ 1, i ~ 1, zero gate weights; candidate is tanh(b_g), so after T
    // steps c = T * tanh(b_g).
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut params = LstmpLayerParams::new(1, 2, 1, false, &mut rng).unwrap();
    zero_layer(&mut params);
    params.b_f.data_mut().fill(60.0);
    params.b_i.data_mut().fill(60.0);
    params.b_g.data_mut().fill(0.3);
    let mut state = LayerState {
        h: vec![0.0; 1],
        c: vec![0.0; 2],
    };
    let steps = 7;
    for _ in 0..steps {
        let (next, _) = lstmp_step(&params, &[0.0], &state).unwrap();
        state = next;
    }
    let expected = steps as f64 * 0.3f64.tanh();
    for &c in &state.c {
        assert!((c - expected).abs() < 1e-9, "{c} vs {expected}");
    }
}

#[test]
fn projection_reduces_dimension() {
    // Input chain through the stack: input_dim, then proj_dim everywhere.
    let stack = LstmpStack::new(40, 64, 32, 3, 8, false, 4).unwrap();
    assert_eq!(stack.layers[0].input_dim, 40);
    assert_eq!(stack.layers[1].input_dim, 32);
    assert_eq!(stack.layers[2].input_dim, 32);
    assert!(LstmpStack::new(40, 32, 32, 1, 8, false, 4).is_err());
}

#[test]
fn single_frame_forward() {
    let stack = tiny_stack(false, 5);
    let frames = Tensor::new(vec![1, 3], vec![0.1, -0.2, 0.3]).unwrap();
    let logits = stack.forward_sequence(&frames).unwrap();
    assert_eq!(logits.shape(), &[1, 3]);
}

#[test]
fn chunked_forward_equals_unchunked_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let stack = tiny_stack(true, 7);
    let frames = rand_frames(&mut rng, 23, 3);
    let rows: Vec<Vec<f64>> = (0..23)
        .map(|t| frames.data()[t * 3..(t + 1) * 3].to_vec())
        .collect();

    let whole = {
        let mut state = stack.zero_state();
        stack.forward_chunk(&rows, &mut state).unwrap()
    };
    for chunk in [1usize, 4, 10, 23, 100] {
        let mut state = stack.zero_state();
        let mut got: Vec<Vec<f64>> = Vec::new();
        let mut t0 = 0;
        while t0 < rows.len() {
            let t1 = (t0 + chunk).min(rows.len());
            got.extend(stack.forward_chunk(&rows[t0..t1], &mut state).unwrap());
            t0 = t1;
        }
        assert_eq!(got, whole, "chunk {chunk} changed the forward pass");
    }
}

fn stack_point(stack: &LstmpStack) -> Vec<f64> {
    let mut point = Vec::new();
    stack.zero_grads(); // shape reference only
    let mut push = |t: &Tensor| point.extend_from_slice(t.data());
    for l in &stack.layers {
        for t in [&l.w_i, &l.w_f, &l.w_g, &l.w_o, &l.b_i, &l.b_f, &l.b_g, &l.b_o, &l.proj] {
            push(t);
        }
        if let Some(p) = &l.peepholes {
            push(&p.p_i);
            push(&p.p_f);
            push(&p.p_o);
        }
    }
    push(&stack.out_weight);
    push(&stack.out_bias);
    point
}

fn stack_with_point(reference: &LstmpStack, x: &[f64]) -> LstmpStack {
    let mut stack = reference.clone();
    let mut off = 0;
    {
        let mut set = |t: &mut Tensor| {
            let n = t.len();
            t.data_mut().copy_from_slice(&x[off..off + n]);
            off += n;
        };
        for l in &mut stack.layers {
            for t in [
                &mut l.w_i, &mut l.w_f, &mut l.w_g, &mut l.w_o, &mut l.b_i, &mut l.b_f,
                &mut l.b_g, &mut l.b_o, &mut l.proj,
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
    }
    assert_eq!(off, x.len());
    stack
}

fn grads_flat(grads: &StackGrads) -> Vec<f64> {
    let mut out = Vec::new();
    grads.for_each_tensor(|t| out.extend_from_slice(t.data()));
    out
}

/// Four unrolled steps through a two-layer stack against central finite
/// differences, with and without peepholes.
#[test]
fn bptt_matches_finite_differences() {
    for (peep, seed) in [(false, 8u64), (true, 9u64)] {
        // Peepholes start at zero; nudge them off zero so their gradients
        // are exercised at a generic point.
        let mut stack = tiny_stack(peep, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        for l in &mut stack.layers {
            if let Some(p) = &mut l.peepholes {
                for t in [&mut p.p_i, &mut p.p_f, &mut p.p_o] {
                    for v in t.data_mut() {
                        *v = rng.gen_range(-0.3..0.3);
                    }
                }
            }
        }
        let frames = rand_frames(&mut rng, 4, 3);
        let labels = vec![0u32, 2, 1, 0];
        let point = stack_point(&stack);

        let eval = |x: &[f64]| {
            let s = stack_with_point(&stack, x);
            sequence_grads(&s, &frames, &labels, 100, 0).unwrap().1
        };
        let analytic = |x: &[f64]| {
            let s = stack_with_point(&stack, x);
            let (grads, _, _) = sequence_grads(&s, &frames, &labels, 100, 0).unwrap();
            grads_flat(&grads)
        };
        let name = if peep { "lstmp-peephole" } else { "lstmp" };
        let report = grad_check(name, eval, analytic, &point, 1e-4);
        assert!(report.passed, "{}", report.line());
    }
}

#[test]
fn tbptt_equals_full_bptt_when_sequence_fits_one_chunk() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let stack = tiny_stack(false, 11);
    let frames = rand_frames(&mut rng, 15, 3);
    let labels: Vec<u32> = (0..15).map(|t| (t % 3) as u32).collect();
    let (g_chunked, l1, _) = sequence_grads(&stack, &frames, &labels, 15, 2).unwrap();
    let (g_full, l2, _) = sequence_grads(&stack, &frames, &labels, 1000, 2).unwrap();
    assert_eq!(l1, l2);
    let (a, b) = (grads_flat(&g_chunked), grads_flat(&g_full));
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn truncation_changes_gradients_on_long_sequences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let stack = tiny_stack(false, 13);
    let frames = rand_frames(&mut rng, 24, 3);
    let labels: Vec<u32> = (0..24).map(|t| (t % 3) as u32).collect();
    let (g_trunc, _, _) = sequence_grads(&stack, &frames, &labels, 6, 2).unwrap();
    let (g_full, _, _) = sequence_grads(&stack, &frames, &labels, 1000, 2).unwrap();
    let (a, b) = (grads_flat(&g_trunc), grads_flat(&g_full));
    let max_diff = a
        .iter()
        .zip(&b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0f64, f64::max);
    assert!(
        max_diff > 1e-9,
        "truncation at chunk boundaries had no effect at all"
    );
}

#[test]
fn training_clips_applied_gradients_and_learns() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut stack = tiny_stack(false, 15);
    // Distinct per-class input patterns so there is something to learn.
    let corpus: Vec<(Tensor, Vec<u32>)> = (0..6)
        .map(|u| {
            let t = 18 + (u % 3) * 4;
            let labels: Vec<u32> = (0..t).map(|i| ((i / 6 + u) % 3) as u32).collect();
            let mut data = Vec::with_capacity(t * 3);
            for &l in &labels {
                for d in 0..3usize {
                    let bias = if d == l as usize { 1.0 } else { -0.5 };
                    data.push(bias + rng.gen_range(-0.2..0.2));
                }
            }
            (Tensor::new(vec![t, 3], data).unwrap(), labels)
        })
        .collect();
    let cfg = BpttConfig {
        chunk: 8,
        parallel_utterances: 3,
        clip_lo: -1.0,
        clip_hi: 1.0,
        output_delay: 2,
    };
    let sgd = SgdOpts {
        learning_rate: 0.15,
        momentum: 0.3,
        epochs: 5,
    };
    let stats = train_tbptt(&mut stack, &corpus, &cfg, &sgd).unwrap();
    assert_eq!(stats.epoch_ce.len(), 6);
    assert!(stats.max_applied_grad_abs <= 1.0 + 1e-15);
    for w in stats.epoch_ce.windows(2) {
        assert!(w[1] < w[0], "CE did not strictly decrease: {:?}", stats.epoch_ce);
    }
}

#[test]
fn divergence_reported_with_nan_input() {
    let mut stack = tiny_stack(false, 16);
    let frames = Tensor::new(vec![2, 3], vec![f64::NAN; 6]).unwrap();
    let corpus = vec![(frames, vec![0u32, 1])];
    let cfg = BpttConfig {
        chunk: 4,
        parallel_utterances: 1,
        clip_lo: -1.0,
        clip_hi: 1.0,
        output_delay: 0,
    };
    let sgd = SgdOpts {
        learning_rate: 0.1,
        momentum: 0.0,
        epochs: 1,
    };
    let err = train_tbptt(&mut stack, &corpus, &cfg, &sgd);
    assert!(matches!(err, Err(Error::Divergence(_))));
}

#[test]
fn speaker_aware_concatenation() {
    let frames = Tensor::new(vec![2, 40], (0..80).map(|i| i as f64).collect()).unwrap();
    let ivec = vec![0.0; 100];
    let out = speaker_aware_input(&frames, &ivec).unwrap();
    assert_eq!(out.shape(), &[2, 140]);
    // First 40 dims unchanged, last 100 zero.
    for t in 0..2 {
        for d in 0..40 {
            assert_eq!(out.data()[t * 140 + d], (t * 40 + d) as f64);
        }
        for d in 40..140 {
            assert_eq!(out.data()[t * 140 + d], 0.0);
        }
    }
}

#[test]
fn different_ivectors_change_outputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let stack = LstmpStack::new(8, 6, 3, 2, 4, false, 18).unwrap();
    let acoustics = rand_frames(&mut rng, 5, 5);
    let iv_a: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let iv_b: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let a = stack
        .forward_sequence(&speaker_aware_input(&acoustics, &iv_a).unwrap())
        .unwrap();
    let b = stack
        .forward_sequence(&speaker_aware_input(&acoustics, &iv_b).unwrap())
        .unwrap();
    assert!(a.data() != b.data());
}

#[test]
fn delayed_label_alignment() {
    let labels = vec![5u32, 6, 7, 8];
    assert_eq!(delayed_label(&labels, 0, 2), 5);
    assert_eq!(delayed_label(&labels, 1, 2), 5);
    assert_eq!(delayed_label(&labels, 2, 2), 5);
    assert_eq!(delayed_label(&labels, 3, 2), 6);
    assert_eq!(delayed_label(&labels, 3, 0), 8);
}

#[test]
fn score_sequence_rows_are_log_posteriors() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let stack = tiny_stack(false, 20);
    let frames = rand_frames(&mut rng, 9, 3);
    let scores = score_sequence(&stack, &frames, 3).unwrap();
    for t in 0..9 {
        let row = &scores.data()[t * 3..(t + 1) * 3];
        let lse = row.iter().map(|v| v.exp()).sum::<f64>().ln();
        assert!(lse.abs() < 1e-8);
    }
}
