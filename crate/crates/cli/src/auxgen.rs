//! Synthetic stand-ins for the adapted auxiliary features. Real fMLLR
//! transforms and i-vector extractors are out of scope; these are
//! utterance-conditioned surrogates with the right shapes and the right
//! invariances (identical across condition renderings of one utterance).

use anyhow::{Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vdcnn_lab::archive::{Archive, Record};
use vdcnn_lab::frontend::{compute_deltas, compute_fbank, compute_mfcc, FrontendConfig};

/// Conditions share the underlying utterance: `test-0001-B` and
/// `test-0001-D` carry the same speaker identity `test-0001`.
pub fn utt_stem(id: &str) -> &str {
    for cond in ["-A", "-B", "-C", "-D"] {
        if let Some(stem) = id.strip_suffix(cond) {
            return stem;
        }
    }
    id
}

fn stem_seed(seed: u64, stem: &str) -> u64 {
    // FNV-1a over the stem, mixed with the corpus seed.
    let mut h = 0xcbf29ce484222325u64;
    for b in stem.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h ^ seed
}

/// Frontend used for the auxiliary pipeline: fixed 40 mel bins regardless
/// of the main feature configuration.
fn aux_frontend(main: &FrontendConfig) -> FrontendConfig {
    FrontendConfig {
        n_mels: 40,
        ..main.clone()
    }
}

fn flat_record(id: &str, frames: usize, dims: usize, data: Vec<f64>) -> Record {
    Record {
        id: id.to_string(),
        n_maps: 0,
        frames: frames as u32,
        dims: dims as u32,
        data,
        aux: None,
        labels: None,
    }
}

/// 39-dimensional MFCC (13 static + deltas) per frame, computed from the
/// observed waveform.
pub fn mfcc_archive(waves: &Archive, main: &FrontendConfig) -> Result<Archive> {
    let config = aux_frontend(main);
    let mut out = Archive::new("aux:mfcc");
    for rec in &waves.records {
        let fbank = compute_fbank(&rec.data, &config).context("aux fbank")?;
        let mfcc = compute_mfcc(&fbank, config.n_mfcc)?;
        let (d1, d2) = compute_deltas(&mfcc, config.delta_window)?;
        let frames = mfcc.shape()[0];
        let mut data = Vec::with_capacity(frames * 39);
        for t in 0..frames {
            data.extend_from_slice(&mfcc.data()[t * 13..(t + 1) * 13]);
            data.extend_from_slice(&d1.data()[t * 13..(t + 1) * 13]);
            data.extend_from_slice(&d2.data()[t * 13..(t + 1) * 13]);
        }
        out.records.push(flat_record(&rec.id, frames, 39, data));
    }
    Ok(out)
}

/// 40-dimensional fMLLR stand-in: an utterance-conditioned affine
/// transform of the observed 40-mel FBANK frames.
pub fn fmllr_archive(waves: &Archive, main: &FrontendConfig, seed: u64) -> Result<Archive> {
    let config = aux_frontend(main);
    let dims = 40usize;
    let mut out = Archive::new("aux:fmllr");
    for rec in &waves.records {
        let fbank = compute_fbank(&rec.data, &config).context("aux fbank")?;
        let frames = fbank.shape()[0];
        let mut rng = ChaCha8Rng::seed_from_u64(stem_seed(seed, utt_stem(&rec.id)));
        // A = I + 0.1 G / sqrt(d), b small.
        let scale = 0.1 / (dims as f64).sqrt();
        let a: Vec<f64> = (0..dims * dims)
            .map(|i| {
                let noise = scale * rng.gen_range(-1.0..1.0);
                if i % (dims + 1) == 0 {
                    1.0 + noise
                } else {
                    noise
                }
            })
            .collect();
        let b: Vec<f64> = (0..dims).map(|_| 0.05 * rng.gen_range(-1.0..1.0)).collect();
        let mut data = Vec::with_capacity(frames * dims);
        for t in 0..frames {
            let x = &fbank.data()[t * dims..(t + 1) * dims];
            for r in 0..dims {
                let row = &a[r * dims..(r + 1) * dims];
                let mut acc = b[r];
                for (c, &w) in row.iter().enumerate() {
                    acc += w * x[c];
                }
                data.push(acc);
            }
        }
        out.records.push(flat_record(&rec.id, frames, dims, data));
    }
    Ok(out)
}

/// 100-dimensional per-utterance i-vector stand-in, seeded from the
/// utterance stem so every condition rendering shares it.
pub fn ivector_archive(waves: &Archive, seed: u64, dim: usize) -> Result<Archive> {
    let mut out = Archive::new("aux:ivector");
    for rec in &waves.records {
        let mut rng = ChaCha8Rng::seed_from_u64(stem_seed(seed, utt_stem(&rec.id)) ^ 0x1ec7);
        let scale = 1.0 / (dim as f64).sqrt();
        let data: Vec<f64> = (0..dim).map(|_| scale * rng.gen_range(-2.0..2.0)).collect();
        out.records.push(flat_record(&rec.id, 1, dim, data));
    }
    Ok(out)
}
