//! Log-mel spectrogram front-end for 16 kHz mono speech.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("empty waveform"));
        }
        if let Some(bad) = samples.iter().find(|s| !(s.abs() <= 1.0)) {
            return Err(Error::invalid(format!("sample {bad} outside [-1, 1]")));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Samples `[start, end)` as a new waveform.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.samples.len() {
            return Err(Error::invalid(format!("slice {start}..{end} of {} samples", self.samples.len())));
        }
        Ok(Self { samples: self.samples[start..end].to_vec(), sample_rate: self.sample_rate })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrontendConfig {
    pub sample_rate: u32,
    pub win_len: usize,
    pub hop: usize,
    pub n_fft: usize,
    pub mel_bins: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            win_len: 400,
            hop: 160,
            n_fft: 512,
            mel_bins: 64,
            fmin: 50.0,
            fmax: 8000.0,
            log_floor: 1e-10,
        }
    }
}

impl FrontendConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.win_len == 0 || self.hop == 0 {
            errs.push("frontend: win_len and hop must be positive".into());
        }
        if self.n_fft < self.win_len {
            errs.push(format!("frontend: n_fft {} < win_len {}", self.n_fft, self.win_len));
        }
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= self.sample_rate as f64 / 2.0) {
            errs.push(format!("frontend: need 0 <= fmin < fmax <= sample_rate/2, got {}..{}", self.fmin, self.fmax));
        }
        if !(self.log_floor > 0.0) {
            errs.push("frontend: log_floor must be positive".into());
        }
        if self.mel_bins == 0 {
            errs.push("frontend: mel_bins must be positive".into());
        }
        errs
    }
}

/// `T×F` log-mel energies.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    frames: Tensor,
    pub frame_hop_s: f64,
}

impl MelSpectrogram {
    pub fn new(frames: Tensor, frame_hop_s: f64) -> Result<Self> {
        if frames.ndim() != 2 {
            return Err(Error::shape(format!("spectrogram must be 2-D, got {:?}", frames.shape())));
        }
        Ok(Self { frames, frame_hop_s })
    }

    pub fn frames(&self) -> &Tensor {
        &self.frames
    }

    pub fn num_frames(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn mel_bins(&self) -> usize {
        self.frames.shape()[1]
    }
}

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Periodic Hann window.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()).collect()
}

/// Number of frames for `n` samples without centering.
pub fn num_frames(n: usize, win_len: usize, hop: usize) -> Option<usize> {
    (n >= win_len).then(|| (n - win_len) / hop + 1)
}

/// Centre frequencies (Hz) of the `mel_bins` triangular filters.
pub fn mel_centers(mel_bins: usize, fmin: f64, fmax: f64) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    (1..=mel_bins).map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (mel_bins + 1) as f64)).collect()
}

/// Triangular HTK filterbank of shape `mel_bins×(n_fft/2+1)`, unit peak.
pub fn mel_filterbank(n_fft: usize, sample_rate: u32, mel_bins: usize, fmin: f64, fmax: f64) -> Result<Tensor> {
    let nyquist = sample_rate as f64 / 2.0;
    if !(fmin >= 0.0 && fmin < fmax && fmax <= nyquist) {
        return Err(Error::invalid(format!("filterbank range {fmin}..{fmax} Hz invalid for {sample_rate} Hz")));
    }
    if mel_bins == 0 || n_fft < 2 {
        return Err(Error::invalid("filterbank needs mel_bins >= 1 and n_fft >= 2"));
    }
    let bins = n_fft / 2 + 1;
    let (lo, hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    let edges: Vec<f64> =
        (0..mel_bins + 2).map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (mel_bins + 1) as f64)).collect();
    let bin_hz = sample_rate as f64 / n_fft as f64;
    let mut fb = vec![0.0; mel_bins * bins];
    for m in 0..mel_bins {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        let row = &mut fb[m * bins..(m + 1) * bins];
        for (k, w) in row.iter_mut().enumerate() {
            let f = k as f64 * bin_hz;
            *w = if f > left && f <= center {
                (f - left) / (center - left)
            } else if f > center && f < right {
                (right - f) / (right - center)
            } else {
                0.0
            };
        }
        if row.iter().all(|&w| w == 0.0) {
            return Err(Error::invalid(format!(
                "mel filter {m} ({left:.1}-{right:.1} Hz) contains no FFT bin; \
                 {mel_bins} bins is too many for n_fft {n_fft}"
            )));
        }
    }
    Tensor::new(&[mel_bins, bins], fb)
}

/// Precomputed window, FFT plan and filterbank for one [`FrontendConfig`].
pub struct LogMelFrontend {
    cfg: FrontendConfig,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    filterbank: Tensor,
}

impl std::fmt::Debug for LogMelFrontend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LogMelFrontend").field("cfg", &self.cfg).finish()
    }
}

impl LogMelFrontend {
    pub fn new(cfg: &FrontendConfig) -> Result<Self> {
        let errs = cfg.validate();
        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        let filterbank = mel_filterbank(cfg.n_fft, cfg.sample_rate, cfg.mel_bins, cfg.fmin, cfg.fmax)?;
        Ok(Self {
            cfg: cfg.clone(),
            window: hann_window(cfg.win_len),
            fft: FftPlanner::new().plan_fft_forward(cfg.n_fft),
            filterbank,
        })
    }

    pub fn config(&self) -> &FrontendConfig {
        &self.cfg
    }

    pub fn filterbank(&self) -> &Tensor {
        &self.filterbank
    }

    /// `T×(n_fft/2+1)` power spectrum of Hann-windowed, zero-padded frames.
    pub fn stft_power(&self, w: &Waveform) -> Result<Tensor> {
        let cfg = &self.cfg;
        let t = num_frames(w.len(), cfg.win_len, cfg.hop).ok_or_else(|| {
            Error::invalid(format!("waveform of {} samples is shorter than one {}-sample window", w.len(), cfg.win_len))
        })?;
        let bins = cfg.n_fft / 2 + 1;
        let mut out = Vec::with_capacity(t * bins);
        let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
        for f in 0..t {
            let frame = &w.samples()[f * cfg.hop..f * cfg.hop + cfg.win_len];
            buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
            for (i, (s, h)) in frame.iter().zip(&self.window).enumerate() {
                buf[i].re = s * h;
            }
            self.fft.process(&mut buf);
            out.extend(buf[..bins].iter().map(|c| c.norm_sqr()));
        }
        Tensor::new(&[t, bins], out)
    }

    pub fn log_mel(&self, w: &Waveform) -> Result<MelSpectrogram> {
        if w.sample_rate() != self.cfg.sample_rate {
            return Err(Error::invalid(format!(
                "sample rate {} Hz, expected {} Hz (no resampling)",
                w.sample_rate(),
                self.cfg.sample_rate
            )));
        }
        let power = self.stft_power(w)?;
        let (t, bins) = (power.shape()[0], power.shape()[1]);
        let mels = self.cfg.mel_bins;
        let mut out = vec![0.0; t * mels];
        for i in 0..t {
            let p = power.row(i);
            for m in 0..mels {
                let e: f64 = self.filterbank.row(m).iter().zip(p).map(|(a, b)| a * b).sum();
                out[i * mels + m] = e.max(self.cfg.log_floor).ln();
            }
        }
        debug_assert_eq!(bins, self.filterbank.shape()[1]);
        MelSpectrogram::new(Tensor::new(&[t, mels], out)?, self.cfg.hop as f64 / self.cfg.sample_rate as f64)
    }
}

/// Convenience wrapper building a one-off [`LogMelFrontend`].
pub fn log_mel(w: &Waveform, cfg: &FrontendConfig) -> Result<MelSpectrogram> {
    LogMelFrontend::new(cfg)?.log_mel(w)
}

pub fn stft_power(w: &Waveform, cfg: &FrontendConfig) -> Result<Tensor> {
    LogMelFrontend::new(cfg)?.stft_power(w)
}
