//! Frame-level cross-entropy training for the feedforward models (plain
//! and joint) and the shared evaluation driver that scores any acoustic
//! model on the condition grid.

use crate::arch::Network;
use crate::decoder::{
    posteriors_to_loglik, score_output, viterbi, AcousticScores, DecodeGraph, ScoreKind,
};
use crate::error::{Error, Result};
use crate::frontend::{assemble_input, UtteranceFeatures};
use crate::joint::JointNetwork;
use crate::lstmp::{score_sequence, LstmpStack};
use crate::report::ConditionCell;
use crate::tensor::{log_softmax, softmax_ce, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_frames: usize,
    pub epochs: usize,
    /// Shuffle seed; identical configs reproduce identical runs.
    pub seed: u64,
    /// Fraction of training utterances held out for the per-epoch CE log.
    pub heldout_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            momentum: 0.9,
            batch_frames: 64,
            epochs: 10,
            seed: 1,
            heldout_fraction: 0.1,
        }
    }
}

/// Frame-level training samples: every labeled frame of every utterance,
/// with optional per-frame auxiliary vectors.
pub struct FrameDataset {
    pub utterances: Vec<UtteranceFeatures>,
    pub aux: Option<Vec<Vec<Vec<f64>>>>,
    pub context: usize,
}

impl FrameDataset {
    pub fn new(
        utterances: Vec<UtteranceFeatures>,
        aux: Option<Vec<Vec<Vec<f64>>>>,
        context: usize,
    ) -> Result<FrameDataset> {
        for u in &utterances {
            if u.frame_labels.is_none() {
                return Err(Error::Data(format!("utterance {} has no labels", u.id)));
            }
        }
        if let Some(aux) = &aux {
            if aux.len() != utterances.len() {
                return Err(Error::Data("aux vectors do not cover the corpus".into()));
            }
            for (u, a) in utterances.iter().zip(aux) {
                if a.len() != u.frames() {
                    return Err(Error::Data(format!(
                        "utterance {}: {} aux vectors for {} frames",
                        u.id,
                        a.len(),
                        u.frames()
                    )));
                }
            }
        }
        Ok(FrameDataset {
            utterances,
            aux,
            context,
        })
    }

    fn samples(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (u, utt) in self.utterances.iter().enumerate() {
            for t in 0..utt.frames() {
                out.push((u, t));
            }
        }
        out
    }

    fn label(&self, u: usize, t: usize) -> usize {
        self.utterances[u].frame_labels.as_ref().unwrap()[t] as usize
    }

    /// Label sequences of every utterance, for decode-graph estimation.
    pub fn label_seqs(&self) -> Vec<&[u32]> {
        self.utterances
            .iter()
            .map(|u| u.frame_labels.as_deref().unwrap())
            .collect()
    }
}

pub struct TrainLog {
    /// Mean train-set CE of the untrained model.
    pub initial_train_ce: f64,
    /// Mean train-set CE after the final epoch.
    pub final_train_ce: f64,
    /// Running (minibatch-averaged) CE per epoch.
    pub epoch_running_ce: Vec<f64>,
    /// Held-out CE per epoch; empty when no utterance could be held out.
    pub epoch_heldout_ce: Vec<f64>,
}

enum FrameModel<'a> {
    Plain(&'a mut Network),
    Joint(&'a mut JointNetwork),
}

impl FrameModel<'_> {
    fn n_states(&self) -> usize {
        match self {
            FrameModel::Plain(n) => n.n_states(),
            FrameModel::Joint(n) => n.n_states(),
        }
    }

    fn loss_for(&self, data: &FrameDataset, u: usize, t: usize) -> Result<f64> {
        let input = assemble_input(&data.utterances[u], data.context, t)?;
        let label = data.label(u, t);
        let logits = match self {
            FrameModel::Plain(net) => net.forward(&input)?,
            FrameModel::Joint(net) => {
                let aux = data
                    .aux
                    .as_ref()
                    .ok_or_else(|| Error::Data("joint model needs aux vectors".into()))?;
                net.forward(&input, &aux[u][t])?
            }
        };
        Ok(softmax_ce(&logits, label)?.0)
    }

    fn mean_ce(&self, data: &FrameDataset, samples: &[(usize, usize)]) -> Result<f64> {
        let mut loss = 0.0;
        for &(u, t) in samples {
            loss += self.loss_for(data, u, t)?;
        }
        Ok(loss / samples.len().max(1) as f64)
    }
}

fn split_heldout(
    n_utts: usize,
    fraction: f64,
    samples: Vec<(usize, usize)>,
) -> (Vec<(usize, usize)>, Vec<(usize, usize)>) {
    let heldout_utts = ((n_utts as f64 * fraction) as usize).min(n_utts.saturating_sub(1));
    let boundary = n_utts - heldout_utts;
    let (mut train, mut held) = (Vec::new(), Vec::new());
    for s in samples {
        if s.0 < boundary {
            train.push(s);
        } else {
            held.push(s);
        }
    }
    (train, held)
}

fn train_frames(
    mut model: FrameModel<'_>,
    data: &FrameDataset,
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    if data.utterances.is_empty() {
        return Err(Error::EmptyInput("empty training set".into()));
    }
    let n_states = model.n_states();
    let (mut train_samples, heldout_samples) =
        split_heldout(data.utterances.len(), cfg.heldout_fraction, data.samples());
    if train_samples.is_empty() {
        return Err(Error::EmptyInput("no labeled frames to train on".into()));
    }
    for &(u, t) in train_samples.iter().chain(&heldout_samples) {
        let label = data.label(u, t);
        if label >= n_states {
            return Err(Error::IndexOutOfRange {
                index: label,
                len: n_states,
            });
        }
    }

    let initial_train_ce = model.mean_ce(data, &train_samples)?;
    let mut log = TrainLog {
        initial_train_ce,
        final_train_ce: initial_train_ce,
        epoch_running_ce: Vec::with_capacity(cfg.epochs),
        epoch_heldout_ce: Vec::with_capacity(cfg.epochs),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // Momentum state lives outside the epoch loop.
    let mut plain_state = match &model {
        FrameModel::Plain(net) => Some((net.zero_grads(), net.momentum_state())),
        FrameModel::Joint(_) => None,
    };
    let mut joint_state = match &model {
        FrameModel::Joint(net) => Some((net.zero_grads(), net.momentum_state())),
        FrameModel::Plain(_) => None,
    };

    for epoch in 0..cfg.epochs {
        train_samples.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in train_samples.chunks(cfg.batch_frames) {
            match &mut model {
                FrameModel::Plain(net) => {
                    let (grads, velocity) = plain_state.as_mut().unwrap();
                    grads.zero();
                    for &(u, t) in batch {
                        let input = assemble_input(&data.utterances[u], data.context, t)?;
                        let (logits, caches) = net.forward_train(&input)?;
                        let (loss, grad) = softmax_ce(&logits, data.label(u, t))?;
                        if !loss.is_finite() {
                            return Err(Error::Divergence(format!(
                                "non-finite loss in epoch {epoch}"
                            )));
                        }
                        epoch_loss += loss;
                        net.backward_into(&caches, &grad, grads)?;
                    }
                    grads.scale(1.0 / batch.len() as f64);
                    net.apply_sgd(grads, velocity, cfg.learning_rate, cfg.momentum)
                        .map_err(|e| match e {
                            Error::Divergence(d) => {
                                Error::Divergence(format!("epoch {epoch}: {d}"))
                            }
                            other => other,
                        })?;
                }
                FrameModel::Joint(net) => {
                    let aux = data
                        .aux
                        .as_ref()
                        .ok_or_else(|| Error::Data("joint model needs aux vectors".into()))?;
                    let (grads, velocity) = joint_state.as_mut().unwrap();
                    grads.zero();
                    for &(u, t) in batch {
                        let input = assemble_input(&data.utterances[u], data.context, t)?;
                        let (logits, caches) = net.forward_train(&input, &aux[u][t])?;
                        let (loss, grad) = softmax_ce(&logits, data.label(u, t))?;
                        if !loss.is_finite() {
                            return Err(Error::Divergence(format!(
                                "non-finite loss in epoch {epoch}"
                            )));
                        }
                        epoch_loss += loss;
                        net.backward_into(&caches, &grad, grads)?;
                    }
                    grads.scale(1.0 / batch.len() as f64);
                    net.apply_sgd(grads, velocity, cfg.learning_rate, cfg.momentum)
                        .map_err(|e| match e {
                            Error::Divergence(d) => {
                                Error::Divergence(format!("epoch {epoch}: {d}"))
                            }
                            other => other,
                        })?;
                }
            }
        }
        log.epoch_running_ce
            .push(epoch_loss / train_samples.len() as f64);
        if !heldout_samples.is_empty() {
            log.epoch_heldout_ce
                .push(model.mean_ce(data, &heldout_samples)?);
        }
    }
    log.final_train_ce = model.mean_ce(data, &train_samples)?;
    Ok(log)
}

pub fn train_feedforward(
    net: &mut Network,
    data: &FrameDataset,
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    train_frames(FrameModel::Plain(net), data, cfg)
}

pub fn train_joint(
    net: &mut JointNetwork,
    data: &FrameDataset,
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    train_frames(FrameModel::Joint(net), data, cfg)
}

/// A trained acoustic model viewed as a per-utterance scorer.
pub enum Scorer<'a> {
    Feedforward { net: &'a Network, context: usize },
    Joint { net: &'a JointNetwork, context: usize },
    Lstmp { stack: &'a LstmpStack, output_delay: usize },
}

/// Inputs for scoring one utterance: features plus whatever side
/// information the model family needs.
pub struct EvalUtterance {
    pub features: UtteranceFeatures,
    pub aux: Option<Vec<Vec<f64>>>,
    pub ivector: Option<Vec<f64>>,
}

impl Scorer<'_> {
    pub fn n_states(&self) -> usize {
        match self {
            Scorer::Feedforward { net, .. } => net.n_states(),
            Scorer::Joint { net, .. } => net.n_states(),
            Scorer::Lstmp { stack, .. } => stack.n_states,
        }
    }

    /// Per-frame log posteriors for the utterance.
    pub fn score_utterance(&self, utt: &EvalUtterance) -> Result<AcousticScores> {
        match self {
            Scorer::Feedforward { net, context } => {
                let frames = utt.features.frames();
                let mut matrix = Tensor::zeros(&[frames, net.n_states()]);
                for t in 0..frames {
                    let input = assemble_input(&utt.features, *context, t)?;
                    let logits = net.forward(&input)?;
                    let row = log_softmax(logits.data());
                    matrix.data_mut()[t * net.n_states()..(t + 1) * net.n_states()]
                        .copy_from_slice(&row);
                }
                AcousticScores::new(ScoreKind::LogPosterior, matrix)
            }
            Scorer::Joint { net, context } => {
                let aux = utt
                    .aux
                    .as_ref()
                    .ok_or_else(|| Error::Data("joint scoring needs aux vectors".into()))?;
                let frames = utt.features.frames();
                if aux.len() != frames {
                    return Err(Error::Data(format!(
                        "{} aux vectors for {frames} frames",
                        aux.len()
                    )));
                }
                let mut matrix = Tensor::zeros(&[frames, net.n_states()]);
                for t in 0..frames {
                    let input = assemble_input(&utt.features, *context, t)?;
                    let logits = net.forward(&input, &aux[t])?;
                    let row = log_softmax(logits.data());
                    matrix.data_mut()[t * net.n_states()..(t + 1) * net.n_states()]
                        .copy_from_slice(&row);
                }
                AcousticScores::new(ScoreKind::LogPosterior, matrix)
            }
            Scorer::Lstmp {
                stack,
                output_delay,
            } => {
                // LSTMP consumes the static feature map frame by frame,
                // optionally with the utterance i-vector appended.
                let feats = &utt.features;
                let (frames, dims) = (feats.frames(), feats.dims());
                let mut static_map = Tensor::zeros(&[frames, dims]);
                static_map
                    .data_mut()
                    .copy_from_slice(&feats.maps.data()[..frames * dims]);
                let input = match &utt.ivector {
                    Some(iv) => crate::lstmp::speaker_aware_input(&static_map, iv)?,
                    None => static_map,
                };
                let matrix = score_sequence(stack, &input, *output_delay)?;
                AcousticScores::new(ScoreKind::LogPosterior, matrix)
            }
        }
    }
}

/// One decoded utterance for the TSV result listing.
pub struct DecodeResult {
    pub utt_id: String,
    pub condition: char,
    pub wer: f64,
    pub frame_accuracy: f64,
    pub path: Vec<usize>,
}

/// Scores a model over the condition grid: per-frame posterior argmax for
/// frame accuracy, prior-scaled Viterbi decoding for the toy WER.
pub fn evaluate_conditions(
    scorer: &Scorer,
    sets: &[(char, Vec<EvalUtterance>)],
    graph: &DecodeGraph,
    acoustic_scale: f64,
) -> Result<([ConditionCell; 4], Vec<DecodeResult>)> {
    let mut cells = [ConditionCell::default(); 4];
    let mut rows = Vec::new();
    for (condition, utts) in sets {
        let idx = crate::corpus::CONDITIONS
            .iter()
            .position(|c| c == condition)
            .ok_or_else(|| Error::Data(format!("unknown condition '{condition}'")))?;
        for utt in utts {
            let labels = utt
                .features
                .frame_labels
                .as_ref()
                .ok_or_else(|| Error::Data(format!("{} has no labels", utt.features.id)))?;
            let post = scorer.score_utterance(utt)?;
            let loglik = posteriors_to_loglik(&post, &graph.log_priors, acoustic_scale)?;
            let (path, _) = viterbi(&loglik, graph)?;
            let report = score_output(&path, labels, graph)?;
            let cell = &mut cells[idx];
            cell.utterances += 1;
            cell.frames += labels.len();
            cell.correct_frames += (report.frame_accuracy * labels.len() as f64).round() as usize;
            cell.edits += report.edits;
            cell.ref_words += report.ref_words;
            rows.push(DecodeResult {
                utt_id: utt.features.id.clone(),
                condition: *condition,
                wer: report.wer,
                frame_accuracy: report.frame_accuracy,
                path,
            });
        }
    }
    Ok((cells, rows))
}

/// Renders decode results as tab-separated lines:
/// `utt-id<TAB>WER<TAB>frame-acc<TAB>path`.
pub fn render_decode_results(rows: &[DecodeResult]) -> String {
    let mut out = String::from("utt\twer\tframe_acc\tpath\n");
    for r in rows {
        let path: Vec<String> = r.path.iter().map(|s| s.to_string()).collect();
        out.push_str(&format!(
            "{}\t{:.6}\t{:.6}\t{}\n",
            r.utt_id,
            r.wer,
            r.frame_accuracy,
            path.join(" ")
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{build_network, ArchitectureSpec, LayerSpec, NetFamily};

    fn micro_net(n_states: usize) -> ArchitectureSpec {
        ArchitectureSpec {
            name: "micro".into(),
            input_shape: (1, 3, 8),
            layers: vec![
                LayerSpec::Flatten,
                LayerSpec::Fc { out_dim: 16 },
                LayerSpec::Activation(crate::arch::ActKind::Relu),
                LayerSpec::Fc { out_dim: n_states },
            ],
            n_states,
            family: NetFamily::Baseline,
        }
    }

    fn micro_dataset(n_classes: usize, n_utts: usize) -> FrameDataset {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let utterances = (0..n_utts)
            .map(|u| {
                let frames = 12;
                let labels: Vec<u32> = (0..frames)
                    .map(|t| ((t / 4 + u) % n_classes) as u32)
                    .collect();
                let mut data = Vec::new();
                for &l in &labels {
                    for d in 0..8usize {
                        let c = if d == l as usize { 1.2 } else { -0.4 };
                        data.push(c + rng.gen_range(-0.1..0.1));
                    }
                }
                UtteranceFeatures {
                    id: format!("u{u}"),
                    maps: Tensor::new(vec![1, frames, 8], data).unwrap(),
                    aux: None,
                    frame_labels: Some(labels),
                }
            })
            .collect();
        FrameDataset::new(utterances, None, 3).unwrap()
    }

    #[test]
    fn feedforward_training_reduces_ce() {
        let mut net = build_network(&micro_net(4), 5).unwrap();
        let data = micro_dataset(4, 8);
        let cfg = TrainConfig {
            learning_rate: 0.1,
            momentum: 0.5,
            batch_frames: 16,
            epochs: 8,
            seed: 3,
            heldout_fraction: 0.2,
        };
        let log = train_feedforward(&mut net, &data, &cfg).unwrap();
        assert!(
            log.final_train_ce < 0.5 * log.initial_train_ce,
            "CE {} -> {}",
            log.initial_train_ce,
            log.final_train_ce
        );
        assert_eq!(log.epoch_heldout_ce.len(), 8);
    }

    #[test]
    fn identical_configs_reproduce_identical_models() {
        let data = micro_dataset(4, 6);
        let cfg = TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        };
        let mut a = build_network(&micro_net(4), 5).unwrap();
        train_feedforward(&mut a, &data, &cfg).unwrap();
        let mut b = build_network(&micro_net(4), 5).unwrap();
        train_feedforward(&mut b, &data, &cfg).unwrap();
        for (x, y) in a.params().iter().zip(b.params().iter()) {
            assert_eq!(x.data(), y.data());
        }
    }

    #[test]
    fn label_out_of_range_detected() {
        let mut net = build_network(&micro_net(2), 5).unwrap();
        let data = micro_dataset(4, 4); // labels up to 3 but only 2 states
        let err = train_feedforward(&mut net, &data, &TrainConfig::default());
        assert!(matches!(err, Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn evaluation_beats_chance_after_training() {
        let mut net = build_network(&micro_net(4), 5).unwrap();
        let data = micro_dataset(4, 8);
        let cfg = TrainConfig {
            learning_rate: 0.1,
            momentum: 0.5,
            batch_frames: 16,
            epochs: 8,
            seed: 3,
            heldout_fraction: 0.0,
        };
        train_feedforward(&mut net, &data, &cfg).unwrap();
        let graph = DecodeGraph::estimate(4, &data.label_seqs()).unwrap();
        let eval_utts: Vec<EvalUtterance> = micro_dataset(4, 4)
            .utterances
            .into_iter()
            .map(|features| EvalUtterance {
                features,
                aux: None,
                ivector: None,
            })
            .collect();
        let scorer = Scorer::Feedforward {
            net: &net,
            context: 3,
        };
        let (cells, rows) =
            evaluate_conditions(&scorer, &[('A', eval_utts)], &graph, 1.0).unwrap();
        assert!(cells[0].frame_accuracy() > 0.75);
        assert_eq!(rows.len(), 4);
        let tsv = render_decode_results(&rows);
        assert!(tsv.starts_with("utt\twer\tframe_acc\tpath\n"));
        assert_eq!(tsv.lines().count(), 5);
    }
}
