use super::*;
use crate::tensor::log_softmax;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_scores(rng: &mut ChaCha8Rng, frames: usize, states: usize, kind: ScoreKind) -> AcousticScores {
    let mut data = Vec::with_capacity(frames * states);
    for _ in 0..frames {
        let logits: Vec<f64> = (0..states).map(|_| rng.gen_range(-2.0..2.0)).collect();
        match kind {
            ScoreKind::LogPosterior => data.extend(log_softmax(&logits)),
            ScoreKind::ScaledLogLik => data.extend(logits),
        }
    }
    AcousticScores::new(kind, Tensor::new(vec![frames, states], data).unwrap()).unwrap()
}

#[test]
fn loglik_uniform_priors_shift_preserves_argmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let post = rand_scores(&mut rng, 6, 4, ScoreKind::LogPosterior);
    post.check_normalized(1e-8).unwrap();
    let priors = vec![(0.25f64).ln(); 4];
    let ll = posteriors_to_loglik(&post, &priors, 1.0).unwrap();
    let shift = (4f64).ln();
    for t in 0..6 {
        let (p, l) = (post.row(t), ll.row(t));
        for s in 0..4 {
            assert!((l[s] - (p[s] + shift)).abs() < 1e-12);
        }
        let argmax = |r: &[f64]| {
            r.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0
        };
        assert_eq!(argmax(p), argmax(l));
    }
}

#[test]
fn loglik_zero_scale_gives_zero_scores() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let post = rand_scores(&mut rng, 3, 5, ScoreKind::LogPosterior);
    let priors: Vec<f64> = log_softmax(&[0.1, 0.2, 0.3, 0.4, 0.5]);
    let ll = posteriors_to_loglik(&post, &priors, 0.0).unwrap();
    assert!(ll.matrix.iter().all(|&v| v == 0.0));
}

#[test]
fn loglik_matches_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let post = rand_scores(&mut rng, 8, 5, ScoreKind::LogPosterior);
    let priors: Vec<f64> = log_softmax(&[1.0, -0.5, 0.25, 2.0, 0.0]);
    let scale = 0.8;
    let ll = posteriors_to_loglik(&post, &priors, scale).unwrap();
    for t in 0..8 {
        for s in 0..5 {
            let want = scale * (post.row(t)[s] - priors[s]);
            assert!((ll.row(t)[s] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn loglik_rejects_infinite_prior() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let post = rand_scores(&mut rng, 2, 3, ScoreKind::LogPosterior);
    let priors = vec![0.0f64.ln(), (0.5f64).ln(), (0.5f64).ln()];
    assert!(matches!(
        posteriors_to_loglik(&post, &priors, 1.0),
        Err(Error::Domain(_))
    ));
}

#[test]
fn fuse_weight_one_zero_is_bitwise_first_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = rand_scores(&mut rng, 7, 4, ScoreKind::ScaledLogLik);
    let b = rand_scores(&mut rng, 7, 4, ScoreKind::ScaledLogLik);
    let fused = fuse(&a, &b, FusionWeights::new(1.0, 0.0).unwrap()).unwrap();
    for (x, y) in fused.matrix.iter().zip(a.matrix.iter()) {
        assert_eq!(x.to_bits(), y.to_bits());
    }
    let fused = fuse(&a, &b, FusionWeights::new(0.0, 1.0).unwrap()).unwrap();
    for (x, y) in fused.matrix.iter().zip(b.matrix.iter()) {
        assert_eq!(x.to_bits(), y.to_bits());
    }
}

#[test]
fn fuse_identical_inputs_is_fixed_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a = rand_scores(&mut rng, 5, 6, ScoreKind::ScaledLogLik);
    let fused = fuse(&a, &a, FusionWeights::new(0.6, 0.4).unwrap()).unwrap();
    for (x, y) in fused.matrix.iter().zip(a.matrix.iter()) {
        assert_eq!(x.to_bits(), y.to_bits());
    }
}

#[test]
fn fuse_matches_elementwise_oracle_and_is_symmetric() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = rand_scores(&mut rng, 9, 5, ScoreKind::ScaledLogLik);
    let b = rand_scores(&mut rng, 9, 5, ScoreKind::ScaledLogLik);
    let w = FusionWeights::new(0.6, 0.4).unwrap();
    let fused = fuse(&a, &b, w).unwrap();
    for t in 0..9 {
        for s in 0..5 {
            let want = 0.6 * a.row(t)[s] + 0.4 * b.row(t)[s];
            assert!((fused.row(t)[s] - want).abs() < 1e-12);
        }
    }
    let swapped = fuse(&b, &a, FusionWeights::new(0.4, 0.6).unwrap()).unwrap();
    for (x, y) in fused.matrix.iter().zip(swapped.matrix.iter()) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn fuse_rejects_mismatched_inventories() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let a = rand_scores(&mut rng, 4, 5, ScoreKind::ScaledLogLik);
    let b = rand_scores(&mut rng, 4, 6, ScoreKind::ScaledLogLik);
    assert!(matches!(
        fuse(&a, &b, FusionWeights::new(0.5, 0.5).unwrap()),
        Err(Error::Fusion(_))
    ));
}

#[test]
fn fusion_weights_must_be_convex() {
    assert!(FusionWeights::new(0.7, 0.4).is_err());
    assert!(FusionWeights::new(-0.1, 1.1).is_err());
    assert!(FusionWeights::new(0.6, 0.4).is_ok());
}

#[test]
fn fused_argmax_invariant_to_shared_frame_shift() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let a = rand_scores(&mut rng, 6, 4, ScoreKind::ScaledLogLik);
    let b = rand_scores(&mut rng, 6, 4, ScoreKind::ScaledLogLik);
    let w = FusionWeights::new(0.6, 0.4).unwrap();
    let base = fuse(&a, &b, w).unwrap();

    let shift_rows = |s: &AcousticScores, c: &[f64]| {
        let mut m = s.matrix.clone();
        let states = s.n_states();
        for t in 0..s.frames() {
            for k in 0..states {
                m.data_mut()[t * states + k] += c[t];
            }
        }
        AcousticScores::new(s.kind, m).unwrap()
    };
    let shifts: Vec<f64> = (0..6).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let shifted = fuse(&shift_rows(&a, &shifts), &shift_rows(&b, &shifts), w).unwrap();
    for t in 0..6 {
        let argmax = |r: &[f64]| {
            r.iter()
                .enumerate()
                .max_by(|x, y| x.1.partial_cmp(y.1).unwrap())
                .unwrap()
                .0
        };
        assert_eq!(argmax(base.row(t)), argmax(shifted.row(t)));
    }
}

/// Exhaustive path search: the independent oracle for Viterbi.
fn brute_force_best_path(scores: &AcousticScores, graph: &DecodeGraph) -> (Vec<usize>, f64) {
    let (frames, n) = (scores.frames(), scores.n_states());
    let mut best_path = Vec::new();
    let mut best_score = f64::NEG_INFINITY;
    let total = n.pow(frames as u32);
    for code in 0..total {
        let mut c = code;
        let mut path = Vec::with_capacity(frames);
        for _ in 0..frames {
            path.push(c % n);
            c /= n;
        }
        let mut score = graph.log_priors[path[0]] + scores.row(0)[path[0]];
        for t in 1..frames {
            score += graph.log_trans[path[t - 1] * n + path[t]] + scores.row(t)[path[t]];
        }
        if score > best_score {
            best_score = score;
            best_path = path;
        }
    }
    (best_path, best_score)
}

#[test]
fn viterbi_single_frame_is_argmax() {
    let scores = AcousticScores::new(
        ScoreKind::ScaledLogLik,
        Tensor::new(vec![1, 4], vec![0.1, 0.9, -0.3, 0.2]).unwrap(),
    )
    .unwrap();
    let graph = DecodeGraph::uniform(4);
    let (path, _) = viterbi(&scores, &graph).unwrap();
    assert_eq!(path, vec![1]);
}

#[test]
fn viterbi_uniform_transitions_is_framewise_argmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let scores = rand_scores(&mut rng, 10, 5, ScoreKind::ScaledLogLik);
    let graph = DecodeGraph::uniform(5);
    let (path, _) = viterbi(&scores, &graph).unwrap();
    for t in 0..10 {
        let row = scores.row(t);
        let argmax = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(path[t], argmax);
    }
}

#[test]
fn viterbi_matches_exhaustive_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..100 {
        let n = rng.gen_range(2..=5);
        let frames = rng.gen_range(1..=8);
        let scores = rand_scores(&mut rng, frames, n, ScoreKind::ScaledLogLik);
        // Random normalized graph.
        let priors = log_softmax(
            &(0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>(),
        );
        let mut trans = Vec::with_capacity(n * n);
        for _ in 0..n {
            trans.extend(log_softmax(
                &(0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>(),
            ));
        }
        let graph = DecodeGraph::new(priors, trans).unwrap();
        let (path, score) = viterbi(&scores, &graph).unwrap();
        let (want_path, want_score) = brute_force_best_path(&scores, &graph);
        assert_eq!(path, want_path, "case {case}");
        assert!((score - want_score).abs() < 1e-9, "case {case}");
    }
}

#[test]
fn viterbi_ties_break_to_lower_state() {
    // All-equal scores and uniform graph: every path ties, the all-zeros
    // path must win.
    let scores = AcousticScores::new(
        ScoreKind::ScaledLogLik,
        Tensor::filled(&[4, 3], 0.5),
    )
    .unwrap();
    let graph = DecodeGraph::uniform(3);
    let (path, _) = viterbi(&scores, &graph).unwrap();
    assert_eq!(path, vec![0, 0, 0, 0]);
}

#[test]
fn edit_distance_hand_cases() {
    assert_eq!(edit_distance(&[1, 2, 3], &[1, 2, 3]), 0);
    assert_eq!(edit_distance(&[1, 2, 3], &[1, 3]), 1); // deletion
    assert_eq!(edit_distance(&[1, 2], &[1, 4, 2]), 1); // insertion
    assert_eq!(edit_distance(&[1, 2], &[1, 9]), 1); // substitution
    assert_eq!(edit_distance(&[], &[1, 2]), 2);
}

/// Full-matrix DP oracle, independently written.
fn edit_distance_oracle(a: &[usize], b: &[usize]) -> usize {
    let (n, m) = (a.len(), b.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        d[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let cost = usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = (d[i - 1][j - 1] + cost)
                .min(d[i - 1][j] + 1)
                .min(d[i][j - 1] + 1);
        }
    }
    d[n][m]
}

#[test]
fn edit_distance_matches_dp_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..50 {
        let n = rng.gen_range(0..12);
        let m = rng.gen_range(0..12);
        let a: Vec<usize> = (0..n).map(|_| rng.gen_range(0..4)).collect();
        let b: Vec<usize> = (0..m).map(|_| rng.gen_range(0..4)).collect();
        assert_eq!(edit_distance(&a, &b), edit_distance_oracle(&a, &b));
    }
}

#[test]
fn score_output_identical_sequences() {
    let graph = DecodeGraph::uniform(4);
    let hyp = vec![0usize, 0, 1, 1, 2];
    let reference = vec![0u32, 0, 1, 1, 2];
    let report = score_output(&hyp, &reference, &graph).unwrap();
    assert_eq!(report.wer, 0.0);
    assert_eq!(report.frame_accuracy, 1.0);
}

#[test]
fn score_output_single_deletion() {
    let graph = DecodeGraph::uniform(4);
    // Reference words a,b,c; hypothesis a,c.
    let reference = vec![0u32, 0, 1, 1, 2, 2];
    let hyp = vec![0usize, 0, 0, 0, 2, 2];
    let report = score_output(&hyp, &reference, &graph).unwrap();
    assert_eq!(report.ref_words, 3);
    assert_eq!(report.edits, 1);
    assert!((report.wer - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn score_output_rejects_empty_reference() {
    let graph = DecodeGraph::uniform(2);
    assert!(matches!(
        score_output(&[], &[], &graph),
        Err(Error::UndefinedWer)
    ));
}

#[test]
fn estimated_graph_is_normalized() {
    let labels_a = vec![0u32, 0, 1, 2, 2, 1];
    let labels_b = vec![2u32, 2, 0, 0, 1];
    let graph = DecodeGraph::estimate(3, &[&labels_a, &labels_b]).unwrap();
    graph.check(1e-8).unwrap();
    // The frequent 0->0 self-transition must outweigh the unseen 1->1.
    assert!(graph.log_trans[0] > graph.log_trans[1 * 3 + 1]);
}
