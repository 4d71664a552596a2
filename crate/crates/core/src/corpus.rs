//! Synthetic noisy-speech corpus. Each toy state/class is a harmonic
//! template; utterances are segment sequences of those templates with
//! frame labels emitted by the generator itself, so no forced alignment is
//! needed. Additive noise at a sampled SNR and an FIR channel filter build
//! the four condition subsets: A clean, B noisy, C clean+channel,
//! D noisy+channel. Multi-condition training mixes all four.

use crate::archive::{Archive, Record};
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CONDITIONS: [char; 4] = ['A', 'B', 'C', 'D'];

#[derive(Debug, Clone)]
pub struct ToyCorpusConfig {
    pub n_classes: usize,
    pub train_utterances: usize,
    /// Test utterances; each is rendered under all four conditions.
    pub test_utterances: usize,
    pub frames_min: usize,
    pub frames_max: usize,
    /// Candidate SNRs in dB for the noisy conditions; +inf is the
    /// no-noise sentinel.
    pub snr_db: Vec<f64>,
    /// FIR coefficients of the channel ("secondary microphone") filter.
    pub channel_filter: Vec<f64>,
    pub sample_rate: u32,
    pub frame_samples: usize,
    pub shift_samples: usize,
    pub seed: u64,
}

impl Default for ToyCorpusConfig {
    fn default() -> Self {
        ToyCorpusConfig {
            n_classes: 8,
            train_utterances: 24,
            test_utterances: 6,
            frames_min: 30,
            frames_max: 50,
            snr_db: vec![10.0, 15.0, 20.0],
            channel_filter: vec![0.7, 0.25, -0.15],
            sample_rate: 16_000,
            frame_samples: 400,
            shift_samples: 160,
            seed: 1,
        }
    }
}

impl ToyCorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::Domain("need at least 2 classes".into()));
        }
        if self.frames_min < 6 || self.frames_max < self.frames_min {
            return Err(Error::Domain(format!(
                "bad frame range {}..{}",
                self.frames_min, self.frames_max
            )));
        }
        if self.snr_db.iter().any(|s| s.is_nan()) {
            return Err(Error::Domain("snr list contains NaN".into()));
        }
        if self.channel_filter.is_empty() {
            return Err(Error::Domain("channel filter must have taps".into()));
        }
        Ok(())
    }
}

/// The generated corpus: one training archive mixing conditions and one
/// test archive per condition, all carrying frame labels.
pub struct ToyCorpus {
    pub train: Archive,
    pub test: [Archive; 4],
}

/// Harmonic template for one class: a fundamental with a class-specific
/// overtone pattern, so classes occupy distinct mel regions.
fn class_wave(class: usize, n_samples: usize, phase: f64, sample_rate: f64) -> Vec<f64> {
    let f0 = 140.0 + 85.0 * class as f64;
    let amp2 = 0.25 + 0.5 * ((class * 7 % 10) as f64 / 10.0);
    let amp3 = 0.15 + 0.4 * ((class * 3 % 10) as f64 / 10.0);
    (0..n_samples)
        .map(|n| {
            let t = n as f64 / sample_rate;
            let w = 2.0 * std::f64::consts::PI * f0;
            0.3 * ((w * t + phase).sin()
                + amp2 * (2.0 * w * t + 1.7 * phase).sin()
                + amp3 * (3.0 * w * t + 0.4 * phase).sin())
        })
        .collect()
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; both uniforms strictly inside (0, 1].
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64
}

/// Adds white Gaussian noise scaled so the energy-ratio SNR equals
/// `snr_db` exactly. An infinite SNR leaves the signal untouched.
pub fn add_noise_at_snr(signal: &mut [f64], snr_db: f64, rng: &mut ChaCha8Rng) {
    if snr_db.is_infinite() {
        return;
    }
    let noise: Vec<f64> = (0..signal.len()).map(|_| gaussian(rng)).collect();
    let p_sig = power(signal);
    let p_noise = power(&noise);
    if p_noise == 0.0 || p_sig == 0.0 {
        return;
    }
    let target_noise_power = p_sig / 10f64.powf(snr_db / 10.0);
    let scale = (target_noise_power / p_noise).sqrt();
    for (s, n) in signal.iter_mut().zip(&noise) {
        *s += scale * n;
    }
}

/// Same-length FIR filtering, `y[n] = sum_k h[k] x[n-k]`.
pub fn fir_filter(signal: &[f64], taps: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; signal.len()];
    for (n, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (k, &h) in taps.iter().enumerate() {
            if n >= k {
                acc += h * signal[n - k];
            }
        }
        *o = acc;
    }
    out
}

/// Measured energy-ratio SNR between a clean reference and its noisy
/// version, in dB.
pub fn measure_snr_db(clean: &[f64], noisy: &[f64]) -> f64 {
    let noise: Vec<f64> = noisy.iter().zip(clean).map(|(n, c)| n - c).collect();
    10.0 * (power(clean) / power(&noise)).log10()
}

struct CleanUtterance {
    id: String,
    samples: Vec<f64>,
    labels: Vec<u32>,
}

fn synth_clean(
    cfg: &ToyCorpusConfig,
    id: String,
    rng: &mut ChaCha8Rng,
) -> CleanUtterance {
    let frames = rng.gen_range(cfg.frames_min..=cfg.frames_max);
    // Segment the utterance into class runs of 4..=9 frames, never
    // repeating the previous class so word references are unambiguous.
    let mut labels = Vec::with_capacity(frames);
    let mut prev_class = usize::MAX;
    while labels.len() < frames {
        let mut class = rng.gen_range(0..cfg.n_classes);
        while class == prev_class {
            class = rng.gen_range(0..cfg.n_classes);
        }
        prev_class = class;
        let run = rng.gen_range(4..=9).min(frames - labels.len());
        labels.extend(std::iter::repeat(class as u32).take(run));
    }

    let n_samples = cfg.frame_samples + (frames - 1) * cfg.shift_samples;
    let mut samples = vec![0.0; n_samples];
    let mut t = 0usize;
    while t < frames {
        let class = labels[t] as usize;
        let mut end = t;
        while end < frames && labels[end] == labels[t] {
            end += 1;
        }
        let start_sample = t * cfg.shift_samples;
        let end_sample = if end == frames {
            n_samples
        } else {
            end * cfg.shift_samples
        };
        let phase = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
        let wave = class_wave(
            class,
            end_sample - start_sample,
            phase,
            cfg.sample_rate as f64,
        );
        samples[start_sample..end_sample].copy_from_slice(&wave);
        t = end;
    }
    CleanUtterance {
        id,
        samples,
        labels,
    }
}

fn render(
    clean: &CleanUtterance,
    condition: char,
    cfg: &ToyCorpusConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let mut samples = match condition {
        'A' | 'B' => clean.samples.clone(),
        'C' | 'D' => fir_filter(&clean.samples, &cfg.channel_filter),
        other => unreachable!("unknown condition {other}"),
    };
    if condition == 'B' || condition == 'D' {
        let snr = cfg.snr_db[rng.gen_range(0..cfg.snr_db.len())];
        add_noise_at_snr(&mut samples, snr, rng);
    }
    samples
}

fn wave_record(id: String, samples: Vec<f64>, labels: Vec<u32>) -> Record {
    Record {
        id,
        n_maps: 1,
        frames: samples.len() as u32,
        dims: 1,
        data: samples,
        aux: None,
        labels: Some(labels),
    }
}

/// Generates the full corpus deterministically from the config seed.
pub fn synth_corpus(cfg: &ToyCorpusConfig) -> Result<ToyCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut train = Archive::new("waveform");
    for u in 0..cfg.train_utterances {
        let clean = synth_clean(cfg, format!("train-{u:04}"), &mut rng);
        // Multi-condition training: cycle through A-D.
        let condition = CONDITIONS[u % 4];
        let samples = render(&clean, condition, cfg, &mut rng);
        train
            .records
            .push(wave_record(clean.id.clone(), samples, clean.labels));
    }

    let mut test: [Archive; 4] = std::array::from_fn(|_| Archive::new("waveform"));
    for u in 0..cfg.test_utterances {
        let clean = synth_clean(cfg, format!("test-{u:04}"), &mut rng);
        for (ci, &condition) in CONDITIONS.iter().enumerate() {
            let samples = render(&clean, condition, cfg, &mut rng);
            test[ci].records.push(wave_record(
                format!("{}-{condition}", clean.id),
                samples,
                clean.labels.clone(),
            ));
        }
    }
    Ok(ToyCorpus { train, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_bit_identical() {
        let cfg = ToyCorpusConfig {
            train_utterances: 4,
            test_utterances: 2,
            ..ToyCorpusConfig::default()
        };
        let a = synth_corpus(&cfg).unwrap();
        let b = synth_corpus(&cfg).unwrap();
        assert_eq!(a.train.to_bytes().unwrap(), b.train.to_bytes().unwrap());
        for (x, y) in a.test.iter().zip(&b.test) {
            assert_eq!(x.to_bytes().unwrap(), y.to_bytes().unwrap());
        }
        let c = synth_corpus(&ToyCorpusConfig { seed: 2, ..cfg }).unwrap();
        assert_ne!(a.train.to_bytes().unwrap(), c.train.to_bytes().unwrap());
    }

    #[test]
    fn infinite_snr_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let signal: Vec<f64> = (0..500).map(|i| (i as f64 * 0.05).sin()).collect();
        let mut noisy = signal.clone();
        add_noise_at_snr(&mut noisy, f64::INFINITY, &mut rng);
        assert_eq!(noisy, signal);
    }

    #[test]
    fn measured_snr_matches_request() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let clean: Vec<f64> = (0..8000).map(|i| 0.4 * (i as f64 * 0.07).sin()).collect();
        for target in [5.0, 10.0, 17.5] {
            let mut noisy = clean.clone();
            add_noise_at_snr(&mut noisy, target, &mut rng);
            let measured = measure_snr_db(&clean, &noisy);
            assert!(
                (measured - target).abs() < 0.5,
                "requested {target} dB, measured {measured} dB"
            );
        }
    }

    #[test]
    fn conditions_b_d_differ_from_clean_a_c() {
        let cfg = ToyCorpusConfig {
            train_utterances: 0,
            test_utterances: 1,
            ..ToyCorpusConfig::default()
        };
        let corpus = synth_corpus(&cfg).unwrap();
        let a = &corpus.test[0].records[0];
        let b = &corpus.test[1].records[0];
        let c = &corpus.test[2].records[0];
        let d = &corpus.test[3].records[0];
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.labels, c.labels);
        assert_ne!(a.data, b.data, "noise must change B");
        assert_ne!(a.data, c.data, "channel must change C");
        assert_ne!(b.data, d.data);
        // Same utterance length across conditions.
        assert_eq!(a.data.len(), d.data.len());
    }

    #[test]
    fn labels_align_with_frame_count() {
        let cfg = ToyCorpusConfig {
            train_utterances: 3,
            test_utterances: 1,
            ..ToyCorpusConfig::default()
        };
        let corpus = synth_corpus(&cfg).unwrap();
        for rec in &corpus.train.records {
            let labels = rec.labels.as_ref().unwrap();
            let expected_samples = cfg.frame_samples + (labels.len() - 1) * cfg.shift_samples;
            assert_eq!(rec.data.len(), expected_samples);
            assert!(labels.iter().all(|&l| (l as usize) < cfg.n_classes));
            assert!(labels.len() >= cfg.frames_min && labels.len() <= cfg.frames_max);
        }
    }

    #[test]
    fn fir_filter_delays_and_scales() {
        let x = vec![1.0, 0.0, 0.0, 2.0, 0.0];
        let y = fir_filter(&x, &[0.5, 0.25]);
        assert_eq!(y, vec![0.5, 0.25, 0.0, 1.0, 0.5]);
    }
}
