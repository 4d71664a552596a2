//! Waveform-to-features frontend: FBANK/MFCC extraction, delta features,
//! per-utterance normalization and context-window assembly into the
//! feature-map stacks the acoustic models consume.

pub mod dsp;
mod wav;

pub use dsp::{compute_deltas, compute_fbank, compute_mfcc};
pub use wav::{read_wav, write_wav};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// How many input feature maps an utterance carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapMode {
    /// Static log-mel features only.
    Static1,
    /// Static plus delta and delta-delta maps.
    StaticDelta3,
}

impl MapMode {
    pub fn n_maps(self) -> usize {
        match self {
            MapMode::Static1 => 1,
            MapMode::StaticDelta3 => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    None,
    PerUtteranceMeanVar,
}

#[derive(Debug, Clone)]
pub struct FrontendConfig {
    pub sample_rate: u32,
    pub frame_length_ms: f64,
    pub frame_shift_ms: f64,
    pub n_mels: usize,
    pub n_mfcc: usize,
    pub delta_window: usize,
    pub context: usize,
    pub map_mode: MapMode,
    pub normalization: Normalization,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        FrontendConfig {
            sample_rate: 16_000,
            frame_length_ms: 25.0,
            frame_shift_ms: 10.0,
            n_mels: 40,
            n_mfcc: 13,
            delta_window: 2,
            context: 11,
            map_mode: MapMode::Static1,
            normalization: Normalization::PerUtteranceMeanVar,
        }
    }
}

impl FrontendConfig {
    pub fn frame_samples(&self) -> usize {
        (self.sample_rate as f64 * self.frame_length_ms / 1000.0).round() as usize
    }

    pub fn shift_samples(&self) -> usize {
        (self.sample_rate as f64 * self.frame_shift_ms / 1000.0).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.context % 2 == 0 || self.context == 0 {
            return Err(Error::Domain(format!(
                "context window must be odd, got {}",
                self.context
            )));
        }
        if self.n_mels < self.n_mfcc {
            return Err(Error::Domain(format!(
                "n_mels {} smaller than n_mfcc {}",
                self.n_mels, self.n_mfcc
            )));
        }
        if self.delta_window == 0 {
            return Err(Error::Domain("delta window must be >= 1".into()));
        }
        Ok(())
    }
}

/// One utterance's feature-map stack plus optional auxiliary vector and
/// frame-level state labels.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceFeatures {
    pub id: String,
    /// Shape (n_maps, frames, dims).
    pub maps: Tensor,
    pub aux: Option<Vec<f64>>,
    pub frame_labels: Option<Vec<u32>>,
}

impl UtteranceFeatures {
    pub fn n_maps(&self) -> usize {
        self.maps.shape()[0]
    }

    pub fn frames(&self) -> usize {
        self.maps.shape()[1]
    }

    pub fn dims(&self) -> usize {
        self.maps.shape()[2]
    }
}

/// Full extraction pipeline for one waveform.
pub fn extract(
    id: &str,
    waveform: &[f64],
    frame_labels: Option<Vec<u32>>,
    config: &FrontendConfig,
) -> Result<UtteranceFeatures> {
    config.validate()?;
    let fbank = compute_fbank(waveform, config)?;
    let frames = fbank.shape()[0];
    if let Some(labels) = &frame_labels {
        if labels.len() != frames {
            return Err(Error::Data(format!(
                "utterance {id}: {} labels for {frames} frames",
                labels.len()
            )));
        }
    }
    let n_maps = config.map_mode.n_maps();
    let mut maps = Tensor::zeros(&[n_maps, frames, config.n_mels]);
    let plane = frames * config.n_mels;
    maps.data_mut()[..plane].copy_from_slice(fbank.data());
    if let MapMode::StaticDelta3 = config.map_mode {
        let (delta, delta2) = compute_deltas(&fbank, config.delta_window)?;
        maps.data_mut()[plane..2 * plane].copy_from_slice(delta.data());
        maps.data_mut()[2 * plane..].copy_from_slice(delta2.data());
    }
    if config.normalization == Normalization::PerUtteranceMeanVar {
        normalize_per_utterance(&mut maps);
    }
    Ok(UtteranceFeatures {
        id: id.to_string(),
        maps,
        aux: None,
        frame_labels,
    })
}

/// Per-utterance mean/variance normalization, applied independently to every
/// (map, dim) column across frames. Constant columns are centered only.
pub fn normalize_per_utterance(maps: &mut Tensor) {
    let (n_maps, frames, dims) = (maps.shape()[0], maps.shape()[1], maps.shape()[2]);
    if frames < 2 {
        return;
    }
    let data = maps.data_mut();
    for m in 0..n_maps {
        for d in 0..dims {
            let mut mean = 0.0;
            for t in 0..frames {
                mean += data[(m * frames + t) * dims + d];
            }
            mean /= frames as f64;
            let mut var = 0.0;
            for t in 0..frames {
                let v = data[(m * frames + t) * dims + d] - mean;
                var += v * v;
            }
            var /= frames as f64;
            let scale = if var > 1e-20 { 1.0 / var.sqrt() } else { 1.0 };
            for t in 0..frames {
                let v = &mut data[(m * frames + t) * dims + d];
                *v = (*v - mean) * scale;
            }
        }
    }
}

/// Cuts the context window centered on `frame`, replicating edge frames
/// beyond the utterance boundary. Output shape (n_maps, context, dims).
pub fn assemble_input(features: &UtteranceFeatures, context: usize, frame: usize) -> Result<Tensor> {
    let (n_maps, frames, dims) = (features.n_maps(), features.frames(), features.dims());
    if frame >= frames {
        return Err(Error::IndexOutOfRange {
            index: frame,
            len: frames,
        });
    }
    if context % 2 == 0 {
        return Err(Error::Domain(format!("context must be odd, got {context}")));
    }
    let half = (context / 2) as isize;
    let mut out = Tensor::zeros(&[n_maps, context, dims]);
    let src = features.maps.data();
    let dst = out.data_mut();
    for m in 0..n_maps {
        for (w, offset) in (-half..=half).enumerate() {
            let t = (frame as isize + offset).clamp(0, frames as isize - 1) as usize;
            let s = (m * frames + t) * dims;
            let d = (m * context + w) * dims;
            dst[d..d + dims].copy_from_slice(&src[s..s + dims]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use dsp::{hz_to_mel, LOG_FLOOR};

    fn tone(freq: f64, seconds: f64, rate: f64, amp: f64) -> Vec<f64> {
        let n = (seconds * rate) as usize;
        (0..n)
            .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / rate).sin())
            .collect()
    }

    #[test]
    fn fbank_tone_peaks_at_analytic_mel_bin() {
        let config = FrontendConfig::default();
        let wave = tone(1000.0, 0.2, 16_000.0, 0.5);
        let fbank = compute_fbank(&wave, &config).unwrap();

        // Independent derivation of the expected bin: filter centers sit at
        // (i+1) * mel(nyquist) / (n_mels+1); the filter whose triangle
        // weight at 1 kHz is largest is the one with the nearest center.
        let step = hz_to_mel(8000.0) / (config.n_mels + 1) as f64;
        let target = hz_to_mel(1000.0);
        let expected = (0..config.n_mels)
            .min_by(|&a, &b| {
                let da = (step * (a + 1) as f64 - target).abs();
                let db = (step * (b + 1) as f64 - target).abs();
                da.partial_cmp(&db).unwrap()
            })
            .unwrap();

        // Check an interior frame (edges see the tone ramp up).
        let frames = fbank.shape()[0];
        let row = &fbank.data()[(frames / 2) * config.n_mels..(frames / 2 + 1) * config.n_mels];
        let argmax = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(argmax, expected);
    }

    #[test]
    fn fbank_of_silence_is_floored() {
        let config = FrontendConfig::default();
        let wave = vec![0.0; 4000];
        let fbank = compute_fbank(&wave, &config).unwrap();
        for &v in fbank.iter() {
            assert_eq!(v, LOG_FLOOR.ln());
        }
    }

    #[test]
    fn fbank_log_scaling_law() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let config = FrontendConfig::default();
        // Broadband noise keeps every mel bin well above the floor.
        let wave: Vec<f64> = (0..4800).map(|_| rng.gen_range(-0.25..0.25)).collect();
        let doubled: Vec<f64> = wave.iter().map(|v| 2.0 * v).collect();
        let a = compute_fbank(&wave, &config).unwrap();
        let b = compute_fbank(&doubled, &config).unwrap();
        let shift = 4.0f64.ln();
        for (&x, &y) in a.iter().zip(b.iter()) {
            assert!((y - x - shift).abs() < 1e-9, "shift {} != ln 4", y - x);
        }
    }

    #[test]
    fn fbank_rejects_short_waveform() {
        let config = FrontendConfig::default();
        assert!(matches!(
            compute_fbank(&vec![0.0; 100], &config),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn frame_count_formula() {
        let config = FrontendConfig::default();
        // 400-sample frames, 160-sample shift.
        let wave = vec![0.1; 400 + 160 * 9];
        let fbank = compute_fbank(&wave, &config).unwrap();
        assert_eq!(fbank.shape()[0], 10);
    }

    #[test]
    fn normalization_zero_mean_unit_var() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let (frames, dims) = (50, 8);
        let data: Vec<f64> = (0..frames * dims).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let mut maps = Tensor::new(vec![1, frames, dims], data).unwrap();
        normalize_per_utterance(&mut maps);
        for d in 0..dims {
            let mut mean = 0.0;
            let mut var = 0.0;
            for t in 0..frames {
                mean += maps.at3(0, t, d);
            }
            mean /= frames as f64;
            for t in 0..frames {
                let v = maps.at3(0, t, d) - mean;
                var += v * v;
            }
            var /= frames as f64;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn assemble_catalog_shapes() {
        for (context, n_mels, n_maps) in [
            (11usize, 40usize, 1usize),
            (17, 40, 1),
            (11, 64, 1),
            (17, 64, 1),
            (11, 40, 3),
        ] {
            let feats = UtteranceFeatures {
                id: "u".into(),
                maps: Tensor::zeros(&[n_maps, 30, n_mels]),
                aux: None,
                frame_labels: None,
            };
            let x = assemble_input(&feats, context, 15).unwrap();
            assert_eq!(x.shape(), &[n_maps, context, n_mels]);
        }
    }

    #[test]
    fn assemble_replicates_left_edge() {
        let frames = 6;
        let dims = 2;
        let data: Vec<f64> = (0..frames * dims).map(|i| i as f64).collect();
        let feats = UtteranceFeatures {
            id: "u".into(),
            maps: Tensor::new(vec![1, frames, dims], data).unwrap(),
            aux: None,
            frame_labels: None,
        };
        let x = assemble_input(&feats, 5, 0).unwrap();
        // Window offsets -2..=2 around frame 0 clamp to frame 0.
        for w in 0..3 {
            assert_eq!(x.at3(0, w, 0), 0.0);
            assert_eq!(x.at3(0, w, 1), 1.0);
        }
        assert_eq!(x.at3(0, 3, 0), 2.0);
        assert_eq!(x.at3(0, 4, 0), 4.0);
    }

    #[test]
    fn extract_three_map_mode() {
        let config = FrontendConfig {
            map_mode: MapMode::StaticDelta3,
            ..FrontendConfig::default()
        };
        let wave = tone(500.0, 0.1, 16_000.0, 0.3);
        let feats = extract("u0", &wave, None, &config).unwrap();
        assert_eq!(feats.n_maps(), 3);
        assert_eq!(feats.dims(), 40);
    }

    #[test]
    fn extract_rejects_label_mismatch() {
        let config = FrontendConfig::default();
        let wave = tone(500.0, 0.1, 16_000.0, 0.3);
        let err = extract("u0", &wave, Some(vec![0; 3]), &config);
        assert!(matches!(err, Err(Error::Data(_))));
    }
}
