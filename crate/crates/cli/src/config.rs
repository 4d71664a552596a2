//! Flat key=value experiment configuration with defaults, file loading and
//! `--set key=value` overrides. The canonical (sorted) rendering feeds the
//! config hash that names run directories and stamps reports.

use anyhow::{bail, Context, Result};
use std::collections::BTreeMap;
use std::path::Path;
use vdcnn_lab::corpus::ToyCorpusConfig;
use vdcnn_lab::frontend::{FrontendConfig, MapMode, Normalization};
use vdcnn_lab::lstmp::BpttConfig;
use vdcnn_lab::report::config_hash;
use vdcnn_lab::train::TrainConfig;

#[derive(Debug, Clone)]
pub struct LabConfig {
    entries: BTreeMap<String, String>,
}

pub fn defaults() -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    let mut put = |k: &str, v: &str| m.insert(k.to_string(), v.to_string());
    // corpus
    put("n_classes", "8");
    put("train_utterances", "24");
    put("test_utterances", "6");
    put("frames_min", "30");
    put("frames_max", "50");
    put("snr_db", "10,15,20");
    put("channel", "0.7,0.25,-0.15");
    put("seed", "1");
    // frontend
    put("sample_rate", "16000");
    put("frame_ms", "25");
    put("shift_ms", "10");
    put("n_mels", "40");
    put("context", "11");
    put("map_mode", "static1");
    put("normalize", "true");
    put("delta_window", "2");
    // feedforward training
    put("lr", "0.01");
    put("momentum", "0.9");
    put("batch", "64");
    put("epochs", "10");
    put("heldout", "0.1");
    put("acoustic_scale", "1.0");
    put("aux_hidden", "512");
    // lstmp
    put("lstmp_cell", "64");
    put("lstmp_proj", "32");
    put("lstmp_layers", "3");
    put("lstmp_chunk", "20");
    put("lstmp_parallel", "4");
    put("lstmp_delay", "5");
    put("lstmp_peepholes", "false");
    put("lstmp_lr", "0.05");
    put("lstmp_momentum", "0.9");
    put("lstmp_epochs", "10");
    m
}

impl LabConfig {
    pub fn load(file: Option<&Path>, sets: &[String]) -> Result<LabConfig> {
        let mut entries = defaults();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            parse_into(&text, &mut entries)?;
        }
        for set in sets {
            let (k, v) = set
                .split_once('=')
                .with_context(|| format!("--set expects key=value, got '{set}'"))?;
            if !entries.contains_key(k.trim()) {
                bail!("unknown config key '{}'", k.trim());
            }
            entries.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(LabConfig { entries })
    }

    pub fn canonical_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(&format!("{k}={v}\n"));
        }
        out
    }

    pub fn hash(&self) -> String {
        let pairs: Vec<(String, String)> = self
            .entries
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        config_hash(&pairs)
    }

    fn raw(&self, key: &str) -> Result<&str> {
        self.entries
            .get(key)
            .map(String::as_str)
            .with_context(|| format!("missing config key '{key}'"))
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        self.raw(key)?
            .parse()
            .with_context(|| format!("config key '{key}' must be an unsigned integer"))
    }

    pub fn u64(&self, key: &str) -> Result<u64> {
        self.raw(key)?
            .parse()
            .with_context(|| format!("config key '{key}' must be an unsigned integer"))
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        self.raw(key)?
            .parse()
            .with_context(|| format!("config key '{key}' must be a number"))
    }

    pub fn bool(&self, key: &str) -> Result<bool> {
        match self.raw(key)? {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            other => bail!("config key '{key}' must be a boolean, got '{other}'"),
        }
    }

    pub fn f64_list(&self, key: &str) -> Result<Vec<f64>> {
        self.raw(key)?
            .split(',')
            .map(|s| {
                let s = s.trim();
                if s == "inf" {
                    Ok(f64::INFINITY)
                } else {
                    s.parse()
                        .with_context(|| format!("bad number '{s}' in config key '{key}'"))
                }
            })
            .collect()
    }

    pub fn corpus(&self) -> Result<ToyCorpusConfig> {
        let sample_rate = self.usize("sample_rate")? as u32;
        let frame_ms = self.f64("frame_ms")?;
        let shift_ms = self.f64("shift_ms")?;
        Ok(ToyCorpusConfig {
            n_classes: self.usize("n_classes")?,
            train_utterances: self.usize("train_utterances")?,
            test_utterances: self.usize("test_utterances")?,
            frames_min: self.usize("frames_min")?,
            frames_max: self.usize("frames_max")?,
            snr_db: self.f64_list("snr_db")?,
            channel_filter: self.f64_list("channel")?,
            sample_rate,
            frame_samples: (sample_rate as f64 * frame_ms / 1000.0).round() as usize,
            shift_samples: (sample_rate as f64 * shift_ms / 1000.0).round() as usize,
            seed: self.u64("seed")?,
        })
    }

    pub fn frontend(&self) -> Result<FrontendConfig> {
        Ok(FrontendConfig {
            sample_rate: self.usize("sample_rate")? as u32,
            frame_length_ms: self.f64("frame_ms")?,
            frame_shift_ms: self.f64("shift_ms")?,
            n_mels: self.usize("n_mels")?,
            n_mfcc: 13,
            delta_window: self.usize("delta_window")?,
            context: self.usize("context")?,
            map_mode: match self.raw("map_mode")? {
                "static1" => MapMode::Static1,
                "delta3" => MapMode::StaticDelta3,
                other => bail!("map_mode must be 'static1' or 'delta3', got '{other}'"),
            },
            normalization: if self.bool("normalize")? {
                Normalization::PerUtteranceMeanVar
            } else {
                Normalization::None
            },
        })
    }

    pub fn train(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            learning_rate: self.f64("lr")?,
            momentum: self.f64("momentum")?,
            batch_frames: self.usize("batch")?,
            epochs: self.usize("epochs")?,
            seed: self.u64("seed")?,
            heldout_fraction: self.f64("heldout")?,
        })
    }

    pub fn bptt(&self) -> Result<BpttConfig> {
        Ok(BpttConfig {
            chunk: self.usize("lstmp_chunk")?,
            parallel_utterances: self.usize("lstmp_parallel")?,
            clip_lo: -1.0,
            clip_hi: 1.0,
            output_delay: self.usize("lstmp_delay")?,
        })
    }
}

fn parse_into(text: &str, entries: &mut BTreeMap<String, String>) -> Result<()> {
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .with_context(|| format!("config line {} is not key=value: '{line}'", idx + 1))?;
        let key = k.trim().to_string();
        if !entries.contains_key(&key) {
            bail!("unknown config key '{key}' at line {}", idx + 1);
        }
        entries.insert(key, v.trim().to_string());
    }
    Ok(())
}
