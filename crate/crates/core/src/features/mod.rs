//! MFCC front end: 40 coefficients per 40 ms frame at a 20 ms stride, giving a
//! 49×40 matrix per one-second clip, plus the reshape that turns coefficients
//! into channels for temporal convolution.

mod dct;
mod fft;
mod mel;

pub use dct::{dct2, Dct2};
pub use fft::Fft;
pub use mel::{hz_to_mel, mel_to_hz, MelFilterbank};

use alloc::vec::Vec;
use core::f64::consts::PI;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::audio::{AudioClip, CLIP_LEN, SAMPLE_RATE_HZ};
use crate::{Error, Result};

/// Frames in a one-second clip.
pub const N_FRAMES: usize = 49;
/// MFCC coefficients per frame.
pub const N_MFCC: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    Hamming,
    Hann,
    Rectangular,
}

impl Window {
    fn coefficient(self, n: usize, len: usize) -> f64 {
        let x = 2.0 * PI * n as f64 / (len - 1) as f64;
        match self {
            Window::Hamming => 0.54 - 0.46 * Float::cos(x),
            Window::Hann => 0.5 - 0.5 * Float::cos(x),
            Window::Rectangular => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub frame_len_ms: u32,
    pub stride_ms: u32,
    pub n_mfcc: usize,
    pub n_mel_filters: usize,
    pub fft_size: usize,
    pub preemphasis: f64,
    pub window: Window,
    pub mel_low_hz: f64,
    pub mel_high_hz: f64,
    pub log_floor: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            frame_len_ms: 40,
            stride_ms: 20,
            n_mfcc: 40,
            n_mel_filters: 40,
            fft_size: 1024,
            preemphasis: 0.97,
            window: Window::Hamming,
            mel_low_hz: 20.0,
            mel_high_hz: 8000.0,
            log_floor: 1e-10,
        }
    }
}

impl FeatureConfig {
    pub fn frame_len(&self) -> usize {
        (self.frame_len_ms * SAMPLE_RATE_HZ / 1000) as usize
    }

    pub fn stride(&self) -> usize {
        (self.stride_ms * SAMPLE_RATE_HZ / 1000) as usize
    }

    /// Frames produced for a clip of `len` samples.
    pub fn n_frames(&self, len: usize) -> usize {
        if len < self.frame_len() {
            0
        } else {
            (len - self.frame_len()) / self.stride() + 1
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidHyperparameter(m.into()));
        if self.frame_len() == 0 || self.stride() == 0 {
            return bad("frame length and stride must be positive");
        }
        if !self.fft_size.is_power_of_two() || self.frame_len() > self.fft_size {
            return bad("fft_size must be a power of two no smaller than the frame");
        }
        if self.n_mfcc == 0 || self.n_mfcc > self.n_mel_filters {
            return bad("n_mfcc must be in 1..=n_mel_filters");
        }
        if !(self.mel_low_hz >= 0.0 && self.mel_low_hz < self.mel_high_hz)
            || self.mel_high_hz > SAMPLE_RATE_HZ as f64 / 2.0
        {
            return bad("mel band must satisfy 0 <= low < high <= 8000 Hz");
        }
        if self.log_floor.is_nan() || self.log_floor <= 0.0 {
            return bad("log_floor must be positive");
        }
        Ok(())
    }

    /// Fails unless this configuration yields the 49×40 matrix the networks expect.
    pub fn require_network_shape(&self) -> Result<()> {
        self.validate()?;
        if self.n_frames(CLIP_LEN) != N_FRAMES || self.n_mfcc != N_MFCC {
            return Err(Error::InvalidHyperparameter(alloc::format!(
                "features must be {N_FRAMES}x{N_MFCC}, config gives {}x{}",
                self.n_frames(CLIP_LEN),
                self.n_mfcc
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// `values[frame * n_coeffs + coeff]`; read as a 1×T×F image by the 2-D nets.
    FrameMajor,
    /// `values[coeff * n_frames + frame]`; coefficients are channels over a
    /// length-T time axis of spatial width 1.
    TemporalConv,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    values: Vec<f32>,
    n_frames: usize,
    n_coeffs: usize,
    layout: Layout,
}

impl FeatureMatrix {
    pub fn from_frame_major(values: Vec<f32>, n_frames: usize, n_coeffs: usize) -> Result<Self> {
        if values.len() != n_frames * n_coeffs {
            return Err(Error::ShapeMismatch(alloc::format!(
                "{} values for a {n_frames}x{n_coeffs} matrix",
                values.len()
            )));
        }
        Ok(Self { values, n_frames, n_coeffs, layout: Layout::FrameMajor })
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_coeffs(&self) -> usize {
        self.n_coeffs
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    /// Raw storage in the current layout.
    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, frame: usize, coeff: usize) -> f32 {
        match self.layout {
            Layout::FrameMajor => self.values[frame * self.n_coeffs + coeff],
            Layout::TemporalConv => self.values[coeff * self.n_frames + frame],
        }
    }

    /// `(channels, length, width)` as seen by the temporal nets.
    pub fn temporal_shape(&self) -> (usize, usize, usize) {
        (self.n_coeffs, self.n_frames, 1)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Moves the coefficient axis to the channel position.
    pub fn reshape_for_temporal_conv(&self) -> Result<Self> {
        if self.layout == Layout::TemporalConv {
            return Err(Error::AlreadyReshaped);
        }
        Ok(Self {
            values: transpose(&self.values, self.n_frames, self.n_coeffs),
            layout: Layout::TemporalConv,
            ..*self
        })
    }

    /// Back to frame-major; identity if already there.
    pub fn to_frame_major(&self) -> Self {
        match self.layout {
            Layout::FrameMajor => self.clone(),
            Layout::TemporalConv => Self {
                values: transpose(&self.values, self.n_coeffs, self.n_frames),
                layout: Layout::FrameMajor,
                ..*self
            },
        }
    }

    /// Converts to `layout`.
    pub fn with_layout(&self, layout: Layout) -> Self {
        match layout {
            Layout::FrameMajor => self.to_frame_major(),
            Layout::TemporalConv if self.layout == Layout::TemporalConv => self.clone(),
            Layout::TemporalConv => self.reshape_for_temporal_conv().expect("frame-major input"),
        }
    }
}

fn transpose(v: &[f32], rows: usize, cols: usize) -> Vec<f32> {
    let mut out = alloc::vec![0.0; v.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = v[r * cols + c];
        }
    }
    out
}

/// Precomputed MFCC pipeline (window, FFT plan, filterbank, DCT basis).
#[derive(Debug, Clone)]
pub struct Mfcc {
    cfg: FeatureConfig,
    window: Vec<f64>,
    fft: Fft,
    filterbank: MelFilterbank,
    dct: Dct2,
}

impl Mfcc {
    pub fn new(cfg: FeatureConfig) -> Result<Self> {
        cfg.validate()?;
        let frame_len = cfg.frame_len();
        let window = (0..frame_len).map(|n| cfg.window.coefficient(n, frame_len)).collect();
        Ok(Self {
            window,
            fft: Fft::new(cfg.fft_size),
            filterbank: MelFilterbank::new(
                cfg.n_mel_filters,
                cfg.fft_size,
                SAMPLE_RATE_HZ as f64,
                cfg.mel_low_hz,
                cfg.mel_high_hz,
            ),
            dct: Dct2::new(cfg.n_mel_filters),
            cfg,
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    /// Pre-emphasis over the whole clip, then windowed frames of `frame_len`
    /// samples starting every `stride` samples.
    pub fn frame_signal(&self, clip: &AudioClip) -> Result<Vec<Vec<f64>>> {
        clip.require_one_second()?;
        let x = clip.samples();
        let a = self.cfg.preemphasis;
        let emphasized: Vec<f64> = (0..x.len())
            .map(|n| if n == 0 { x[0] as f64 } else { x[n] as f64 - a * x[n - 1] as f64 })
            .collect();
        let (len, stride) = (self.cfg.frame_len(), self.cfg.stride());
        Ok((0..self.cfg.n_frames(x.len()))
            .map(|t| {
                emphasized[t * stride..t * stride + len]
                    .iter()
                    .zip(&self.window)
                    .map(|(s, w)| s * w)
                    .collect()
            })
            .collect())
    }

    /// Power spectrum of one frame, zero-padded to `fft_size`.
    pub fn power_spectrum(&self, frame: &[f64]) -> Result<Vec<f64>> {
        if frame.len() > self.cfg.fft_size {
            return Err(Error::ShapeMismatch(alloc::format!(
                "frame of {} samples exceeds fft size {}",
                frame.len(),
                self.cfg.fft_size
            )));
        }
        Ok(self.fft.power_spectrum(frame))
    }

    pub fn log_mel(&self, spectrum: &[f64]) -> Vec<f64> {
        self.filterbank.log_energies(spectrum, self.cfg.log_floor)
    }

    pub fn cepstrum(&self, log_mels: &[f64]) -> Vec<f64> {
        self.dct.forward(log_mels, self.cfg.n_mfcc)
    }

    /// Full pipeline in 64-bit precision, frame-major.
    pub fn compute_f64(&self, clip: &AudioClip) -> Result<Vec<f64>> {
        let frames = self.frame_signal(clip)?;
        let mut out = Vec::with_capacity(frames.len() * self.cfg.n_mfcc);
        for frame in &frames {
            let spectrum = self.power_spectrum(frame)?;
            out.extend(self.cepstrum(&self.log_mel(&spectrum)));
        }
        Ok(out)
    }

    /// The frame-major MFCC matrix, stored as `f32`.
    pub fn compute(&self, clip: &AudioClip) -> Result<FeatureMatrix> {
        let values = self.compute_f64(clip)?.into_iter().map(|v| v as f32).collect();
        FeatureMatrix::from_frame_major(values, self.cfg.n_frames(clip.len()), self.cfg.n_mfcc)
    }
}

/// One-shot convenience around [`Mfcc`].
pub fn mfcc(clip: &AudioClip, cfg: &FeatureConfig) -> Result<FeatureMatrix> {
    Mfcc::new(cfg.clone())?.compute(clip)
}
