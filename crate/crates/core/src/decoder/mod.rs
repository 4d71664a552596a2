//! Hybrid decoding: posterior-to-likelihood scaling, state-level weighted
//! log-likelihood fusion of two systems, Viterbi search over a toy HMM
//! graph, and scoring (frame accuracy, word error rate).

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreKind {
    LogPosterior,
    ScaledLogLik,
}

impl ScoreKind {
    pub fn name(&self) -> &'static str {
        match self {
            ScoreKind::LogPosterior => "logpost",
            ScoreKind::ScaledLogLik => "loglik",
        }
    }

    pub fn parse(s: &str) -> Result<ScoreKind> {
        Ok(match s {
            "logpost" => ScoreKind::LogPosterior,
            "loglik" => ScoreKind::ScaledLogLik,
            other => return Err(Error::Format(format!("unknown score kind '{other}'"))),
        })
    }
}

/// Per-frame, per-state score matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AcousticScores {
    pub kind: ScoreKind,
    /// (frames, n_states)
    pub matrix: Tensor,
}

impl AcousticScores {
    pub fn new(kind: ScoreKind, matrix: Tensor) -> Result<AcousticScores> {
        if matrix.rank() != 2 {
            return Err(Error::dim(
                "AcousticScores",
                "rank 2 (frames, states)",
                format!("rank {}", matrix.rank()),
            ));
        }
        Ok(AcousticScores { kind, matrix })
    }

    pub fn frames(&self) -> usize {
        self.matrix.shape()[0]
    }

    pub fn n_states(&self) -> usize {
        self.matrix.shape()[1]
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let s = self.n_states();
        &self.matrix.data()[t * s..(t + 1) * s]
    }

    /// Log-posterior rows must normalize: logsumexp == 0 within tol.
    pub fn check_normalized(&self, tol: f64) -> Result<()> {
        if self.kind != ScoreKind::LogPosterior {
            return Ok(());
        }
        for t in 0..self.frames() {
            let row = self.row(t);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            if lse.abs() > tol {
                return Err(Error::Domain(format!(
                    "log-posterior row {t} sums to exp({lse}) != 1"
                )));
            }
        }
        Ok(())
    }
}

/// Toy HMM decode graph: state priors, a dense transition matrix, and a
/// unit lexicon mapping each state to a toy word label.
#[derive(Debug, Clone)]
pub struct DecodeGraph {
    pub n_states: usize,
    pub log_priors: Vec<f64>,
    /// Row-major (from, to) log transition probabilities.
    pub log_trans: Vec<f64>,
    /// Word label emitted by each state; identity by default.
    pub state_to_word: Vec<usize>,
}

impl DecodeGraph {
    pub fn new(log_priors: Vec<f64>, log_trans: Vec<f64>) -> Result<DecodeGraph> {
        let n = log_priors.len();
        if log_trans.len() != n * n {
            return Err(Error::dim(
                "DecodeGraph transitions",
                format!("{n}x{n}"),
                format!("{}", log_trans.len()),
            ));
        }
        let graph = DecodeGraph {
            n_states: n,
            log_priors,
            log_trans,
            state_to_word: (0..n).collect(),
        };
        graph.check(1e-8)?;
        Ok(graph)
    }

    /// Uniform priors and transitions over `n` states.
    pub fn uniform(n: usize) -> DecodeGraph {
        let lp = -(n as f64).ln();
        DecodeGraph {
            n_states: n,
            log_priors: vec![lp; n],
            log_trans: vec![lp; n * n],
            state_to_word: (0..n).collect(),
        }
    }

    /// Estimates priors from label frequencies and transitions from label
    /// bigrams, both with add-one smoothing.
    pub fn estimate(n_states: usize, label_seqs: &[&[u32]]) -> Result<DecodeGraph> {
        let mut prior_counts = vec![1.0f64; n_states];
        let mut trans_counts = vec![1.0f64; n_states * n_states];
        for seq in label_seqs {
            for &l in *seq {
                let l = l as usize;
                if l >= n_states {
                    return Err(Error::IndexOutOfRange {
                        index: l,
                        len: n_states,
                    });
                }
                prior_counts[l] += 1.0;
            }
            for w in seq.windows(2) {
                trans_counts[w[0] as usize * n_states + w[1] as usize] += 1.0;
            }
        }
        let total: f64 = prior_counts.iter().sum();
        let log_priors = prior_counts.iter().map(|c| (c / total).ln()).collect();
        let mut log_trans = vec![0.0; n_states * n_states];
        for from in 0..n_states {
            let row = &trans_counts[from * n_states..(from + 1) * n_states];
            let row_total: f64 = row.iter().sum();
            for (to, &c) in row.iter().enumerate() {
                log_trans[from * n_states + to] = (c / row_total).ln();
            }
        }
        DecodeGraph::new(log_priors, log_trans)
    }

    /// Priors sum to 1 and every transition row normalizes.
    pub fn check(&self, tol: f64) -> Result<()> {
        let lse = |row: &[f64]| -> f64 {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
        };
        if lse(&self.log_priors).abs() > tol {
            return Err(Error::Domain("graph priors do not sum to 1".into()));
        }
        for from in 0..self.n_states {
            let row = &self.log_trans[from * self.n_states..(from + 1) * self.n_states];
            if lse(row).abs() > tol {
                return Err(Error::Domain(format!(
                    "transition row {from} does not sum to 1"
                )));
            }
        }
        Ok(())
    }

    /// Collapses a state path into its word sequence (consecutive repeats
    /// merge).
    pub fn path_to_words(&self, path: &[usize]) -> Vec<usize> {
        let mut words = Vec::new();
        for &s in path {
            let w = self.state_to_word[s];
            if words.last() != Some(&w) {
                words.push(w);
            }
        }
        words
    }
}

/// Converts log posteriors to scaled log likelihoods:
/// `loglik[t][s] = scale * (log p(s|x_t) - log prior(s))`.
pub fn posteriors_to_loglik(
    log_posteriors: &AcousticScores,
    log_priors: &[f64],
    scale: f64,
) -> Result<AcousticScores> {
    if log_posteriors.n_states() != log_priors.len() {
        return Err(Error::dim(
            "posteriors_to_loglik",
            format!("{} states", log_posteriors.n_states()),
            format!("{} priors", log_priors.len()),
        ));
    }
    if log_priors.iter().any(|p| !p.is_finite()) {
        return Err(Error::Domain(
            "zero or invalid prior: log prior must be finite".into(),
        ));
    }
    let (frames, states) = (log_posteriors.frames(), log_posteriors.n_states());
    let mut out = Tensor::zeros(&[frames, states]);
    let src = log_posteriors.matrix.data();
    let dst = out.data_mut();
    for t in 0..frames {
        for s in 0..states {
            dst[t * states + s] = scale * (src[t * states + s] - log_priors[s]);
        }
    }
    AcousticScores::new(ScoreKind::ScaledLogLik, out)
}

/// Non-negative weights summing to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionWeights {
    pub w1: f64,
    pub w2: f64,
}

impl FusionWeights {
    pub fn new(w1: f64, w2: f64) -> Result<FusionWeights> {
        if !(w1 >= 0.0 && w2 >= 0.0) || (w1 + w2 - 1.0).abs() > 1e-9 {
            return Err(Error::Fusion(format!(
                "weights ({w1}, {w2}) must be non-negative and sum to 1"
            )));
        }
        Ok(FusionWeights { w1, w2 })
    }
}

/// State-level weighted combination of two systems' acoustic scores:
/// `fused[t][s] = w1*a[t][s] + w2*b[t][s]`.
///
/// Computed as `a + w2*(b - a)`, which is algebraically identical under
/// `w1 + w2 = 1` and reproduces either input bit-for-bit at the weight
/// extremes and whenever the inputs coincide.
pub fn fuse(
    scores1: &AcousticScores,
    scores2: &AcousticScores,
    w: FusionWeights,
) -> Result<AcousticScores> {
    if scores1.matrix.shape() != scores2.matrix.shape() {
        return Err(Error::Fusion(format!(
            "score shapes differ: {:?} vs {:?} (systems must share the state inventory)",
            scores1.matrix.shape(),
            scores2.matrix.shape()
        )));
    }
    if scores1.kind != scores2.kind {
        return Err(Error::Fusion(format!(
            "score kinds differ: {} vs {}",
            scores1.kind.name(),
            scores2.kind.name()
        )));
    }
    if w.w2 == 0.0 {
        return Ok(scores1.clone());
    }
    if w.w1 == 0.0 {
        return Ok(scores2.clone());
    }
    let mut out = scores1.matrix.clone();
    for (o, &b) in out.data_mut().iter_mut().zip(scores2.matrix.data()) {
        *o += w.w2 * (b - *o);
    }
    AcousticScores::new(scores1.kind, out)
}

/// Exact maximum-score state path under `scores[t][s] + transitions`, with
/// priors as the initial distribution. Ties break toward the lower state
/// index at every step.
pub fn viterbi(scores: &AcousticScores, graph: &DecodeGraph) -> Result<(Vec<usize>, f64)> {
    let (frames, n) = (scores.frames(), scores.n_states());
    if frames == 0 {
        return Err(Error::EmptyInput("no frames to decode".into()));
    }
    if n != graph.n_states {
        return Err(Error::dim(
            "viterbi",
            format!("{} graph states", graph.n_states),
            format!("{n} score states"),
        ));
    }
    let mut delta: Vec<f64> = (0..n)
        .map(|s| graph.log_priors[s] + scores.row(0)[s])
        .collect();
    let mut backptr = vec![0usize; frames * n];
    let mut next = vec![0.0; n];
    for t in 1..frames {
        let row = scores.row(t);
        for s in 0..n {
            let mut best = f64::NEG_INFINITY;
            let mut best_prev = 0usize;
            for (prev, &d) in delta.iter().enumerate() {
                let cand = d + graph.log_trans[prev * n + s];
                if cand > best {
                    best = cand;
                    best_prev = prev;
                }
            }
            next[s] = best + row[s];
            backptr[t * n + s] = best_prev;
        }
        std::mem::swap(&mut delta, &mut next);
    }
    let (mut state, mut best) = (0usize, f64::NEG_INFINITY);
    for (s, &d) in delta.iter().enumerate() {
        if d > best {
            best = d;
            state = s;
        }
    }
    let mut path = vec![0usize; frames];
    path[frames - 1] = state;
    for t in (1..frames).rev() {
        state = backptr[t * n + state];
        path[t - 1] = state;
    }
    Ok((path, best))
}

/// Levenshtein distance over word sequences, counting substitutions,
/// deletions and insertions equally.
pub fn edit_distance(reference: &[usize], hypothesis: &[usize]) -> usize {
    let (rn, hn) = (reference.len(), hypothesis.len());
    let mut prev: Vec<usize> = (0..=hn).collect();
    let mut cur = vec![0usize; hn + 1];
    for i in 1..=rn {
        cur[0] = i;
        for j in 1..=hn {
            let sub = prev[j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[hn]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreReport {
    pub frame_accuracy: f64,
    pub wer: f64,
    pub edits: usize,
    pub ref_words: usize,
}

/// Frame accuracy over state labels plus WER over the collapsed toy word
/// sequences.
pub fn score_output(
    hyp_states: &[usize],
    ref_states: &[u32],
    graph: &DecodeGraph,
) -> Result<ScoreReport> {
    if ref_states.is_empty() {
        return Err(Error::UndefinedWer);
    }
    if hyp_states.len() != ref_states.len() {
        return Err(Error::dim(
            "score_output frames",
            format!("{}", ref_states.len()),
            format!("{}", hyp_states.len()),
        ));
    }
    let correct = hyp_states
        .iter()
        .zip(ref_states)
        .filter(|(h, r)| **h == **r as usize)
        .count();
    let ref_path: Vec<usize> = ref_states.iter().map(|&s| s as usize).collect();
    let ref_words = graph.path_to_words(&ref_path);
    let hyp_words = graph.path_to_words(hyp_states);
    if ref_words.is_empty() {
        return Err(Error::UndefinedWer);
    }
    let edits = edit_distance(&ref_words, &hyp_words);
    Ok(ScoreReport {
        frame_accuracy: correct as f64 / ref_states.len() as f64,
        wer: edits as f64 / ref_words.len() as f64,
        edits,
        ref_words: ref_words.len(),
    })
}

#[cfg(test)]
mod tests;
