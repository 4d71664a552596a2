//! Signal-processing kernels for the feature frontend: framing, windowing,
//! FFT power spectra, mel filterbanks, DCT and delta regression.

use super::FrontendConfig;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Smallest power of two >= n.
pub fn next_pow2(n: usize) -> usize {
    let mut p = 1;
    while p < n {
        p <<= 1;
    }
    p
}

/// Iterative radix-2 Cooley-Tukey FFT, in place. Scalar on purpose: the
/// result must be identical on every platform the archives travel between.
pub fn fft_in_place(re: &mut [f64], im: &mut [f64]) {
    let n = re.len();
    assert_eq!(n, im.len());
    assert!(n.is_power_of_two(), "fft length must be a power of two");

    // Bit-reversal permutation.
    let mut j = 0usize;
    for i in 0..n {
        if i < j {
            re.swap(i, j);
            im.swap(i, j);
        }
        let mut m = n >> 1;
        while m >= 1 && j & m != 0 {
            j ^= m;
            m >>= 1;
        }
        j |= m;
    }

    let mut len = 2;
    while len <= n {
        let ang = -2.0 * std::f64::consts::PI / len as f64;
        let (w_re, w_im) = (ang.cos(), ang.sin());
        let mut start = 0;
        while start < n {
            let (mut cur_re, mut cur_im) = (1.0, 0.0);
            for k in 0..len / 2 {
                let a = start + k;
                let b = a + len / 2;
                let tr = re[b] * cur_re - im[b] * cur_im;
                let ti = re[b] * cur_im + im[b] * cur_re;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
                let nr = cur_re * w_re - cur_im * w_im;
                cur_im = cur_re * w_im + cur_im * w_re;
                cur_re = nr;
            }
            start += len;
        }
        len <<= 1;
    }
}

pub fn hamming(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular unit-peak mel filterbank over the one-sided spectrum,
/// spanning 0 Hz to Nyquist. Returned as `n_mels` rows of `n_bins` weights.
pub fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate: f64) -> Vec<Vec<f64>> {
    let n_bins = n_fft / 2 + 1;
    let mel_hi = hz_to_mel(sample_rate / 2.0);
    let step = mel_hi / (n_mels + 1) as f64;
    let mut bank = vec![vec![0.0; n_bins]; n_mels];
    for (i, filter) in bank.iter_mut().enumerate() {
        let left = step * i as f64;
        let center = step * (i + 1) as f64;
        let right = step * (i + 2) as f64;
        for (k, w) in filter.iter_mut().enumerate() {
            let mel = hz_to_mel(k as f64 * sample_rate / n_fft as f64);
            if mel > left && mel < right {
                *w = if mel <= center {
                    (mel - left) / (center - left)
                } else {
                    (right - mel) / (right - center)
                };
            }
        }
    }
    bank
}

pub const LOG_FLOOR: f64 = 1e-10;
pub const PRE_EMPHASIS: f64 = 0.97;

/// Log mel-filterbank energies, one row per frame.
///
/// Pipeline: pre-emphasis over the whole waveform, Hamming-windowed frames,
/// power spectrum via zero-padded FFT to the next power of two, triangular
/// mel integration, natural log with an absolute floor.
pub fn compute_fbank(waveform: &[f64], config: &FrontendConfig) -> Result<Tensor> {
    let frame_len = config.frame_samples();
    let shift = config.shift_samples();
    if waveform.len() < frame_len {
        return Err(Error::EmptyInput(format!(
            "waveform of {} samples is shorter than one {frame_len}-sample frame",
            waveform.len()
        )));
    }
    let n_frames = 1 + (waveform.len() - frame_len) / shift;

    let mut emphasized = vec![0.0; waveform.len()];
    emphasized[0] = waveform[0] - PRE_EMPHASIS * waveform[0];
    for i in 1..waveform.len() {
        emphasized[i] = waveform[i] - PRE_EMPHASIS * waveform[i - 1];
    }

    let n_fft = next_pow2(frame_len);
    let window = hamming(frame_len);
    let bank = mel_filterbank(config.n_mels, n_fft, config.sample_rate as f64);

    let mut out = Tensor::zeros(&[n_frames, config.n_mels]);
    let mut re = vec![0.0; n_fft];
    let mut im = vec![0.0; n_fft];
    for frame in 0..n_frames {
        let start = frame * shift;
        for i in 0..n_fft {
            re[i] = if i < frame_len {
                emphasized[start + i] * window[i]
            } else {
                0.0
            };
            im[i] = 0.0;
        }
        fft_in_place(&mut re, &mut im);
        let power: Vec<f64> = (0..=n_fft / 2)
            .map(|k| re[k] * re[k] + im[k] * im[k])
            .collect();
        let row = &mut out.data_mut()[frame * config.n_mels..(frame + 1) * config.n_mels];
        for (m, filter) in bank.iter().enumerate() {
            let mut energy = 0.0;
            for (w, p) in filter.iter().zip(&power) {
                energy += w * p;
            }
            row[m] = energy.max(LOG_FLOOR).ln();
        }
    }
    Ok(out)
}

/// Orthonormal DCT-II of each row, keeping the first `n_mfcc` coefficients.
pub fn compute_mfcc(fbank: &Tensor, n_mfcc: usize) -> Result<Tensor> {
    if fbank.rank() != 2 {
        return Err(Error::dim("compute_mfcc", "rank 2 (frames, mels)", format!("rank {}", fbank.rank())));
    }
    let (frames, n_mels) = (fbank.shape()[0], fbank.shape()[1]);
    if n_mels < n_mfcc {
        return Err(Error::dim(
            "compute_mfcc",
            format!("n_mels >= {n_mfcc}"),
            format!("{n_mels}"),
        ));
    }
    // Precomputed cosine table: dct[k][n] = a_k cos(pi (2n+1) k / 2N).
    let norm0 = (1.0 / n_mels as f64).sqrt();
    let norm = (2.0 / n_mels as f64).sqrt();
    let table: Vec<Vec<f64>> = (0..n_mfcc)
        .map(|k| {
            let a = if k == 0 { norm0 } else { norm };
            (0..n_mels)
                .map(|n| {
                    a * (std::f64::consts::PI * (2 * n + 1) as f64 * k as f64
                        / (2 * n_mels) as f64)
                        .cos()
                })
                .collect()
        })
        .collect();

    let mut out = Tensor::zeros(&[frames, n_mfcc]);
    for t in 0..frames {
        let row = &fbank.data()[t * n_mels..(t + 1) * n_mels];
        let dst = &mut out.data_mut()[t * n_mfcc..(t + 1) * n_mfcc];
        for (k, coeffs) in table.iter().enumerate() {
            dst[k] = coeffs.iter().zip(row).map(|(&c, &x)| c * x).sum();
        }
    }
    Ok(out)
}

/// Standard delta regression with edge replication:
/// `d_t = sum_k k (x_{t+k} - x_{t-k}) / (2 sum_k k^2)`.
/// Returns (delta, delta-delta); delta-delta is the same operator applied
/// to delta.
pub fn compute_deltas(features: &Tensor, window: usize) -> Result<(Tensor, Tensor)> {
    let delta = delta_once(features, window)?;
    let delta2 = delta_once(&delta, window)?;
    Ok((delta, delta2))
}

fn delta_once(features: &Tensor, window: usize) -> Result<Tensor> {
    if features.rank() != 2 {
        return Err(Error::dim(
            "compute_deltas",
            "rank 2 (frames, dims)",
            format!("rank {}", features.rank()),
        ));
    }
    if window == 0 {
        return Err(Error::Domain("delta window must be >= 1".into()));
    }
    let (frames, dims) = (features.shape()[0], features.shape()[1]);
    let denom: f64 = 2.0 * (1..=window).map(|k| (k * k) as f64).sum::<f64>();
    let mut out = Tensor::zeros(&[frames, dims]);
    let x = features.data();
    let clamp = |t: isize| -> usize { t.clamp(0, frames as isize - 1) as usize };
    for t in 0..frames {
        let dst = &mut out.data_mut()[t * dims..(t + 1) * dims];
        for k in 1..=window {
            let fwd = clamp(t as isize + k as isize) * dims;
            let bwd = clamp(t as isize - k as isize) * dims;
            let kf = k as f64;
            for d in 0..dims {
                dst[d] += kf * (x[fwd + d] - x[bwd + d]);
            }
        }
        for v in dst.iter_mut() {
            *v /= denom;
        }
    }
    Ok(out)
}
