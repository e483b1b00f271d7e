//! One-second 16 kHz mono clips and the sample-level operations on them.

use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_traits::Float;
use rand::Rng;

use crate::{Error, Result};

pub const SAMPLE_RATE_HZ: u32 = 16_000;
/// Samples in a one-second clip.
pub const CLIP_LEN: usize = 16_000;

#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f32>,
    pub sample_rate_hz: u32,
    pub source_path: Option<String>,
}

impl AudioClip {
    /// Builds a clip, clamping every sample into [-1, 1].
    pub fn new(samples: Vec<f32>) -> Self {
        let samples = samples.into_iter().map(|s| s.clamp(-1.0, 1.0)).collect();
        Self { samples, sample_rate_hz: SAMPLE_RATE_HZ, source_path: None }
    }

    pub fn with_source(mut self, path: impl Into<String>) -> Self {
        self.source_path = Some(path.into());
        self
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn is_one_second(&self) -> bool {
        self.samples.len() == CLIP_LEN
    }

    /// Fails unless the clip holds exactly one second of audio.
    pub fn require_one_second(&self) -> Result<()> {
        if self.is_one_second() {
            Ok(())
        } else {
            Err(Error::WrongClipLength { expected: CLIP_LEN, actual: self.samples.len() })
        }
    }

    /// Keeps the first second of a longer clip.
    pub fn truncated_to_one_second(mut self) -> Self {
        self.samples.truncate(CLIP_LEN);
        self
    }

    pub fn scaled(&self, gain: f32) -> Self {
        let mut out = Self::new(self.samples.iter().map(|s| s * gain).collect());
        out.source_path = self.source_path.clone();
        out
    }
}

/// A long background recording that one-second snippets are cut from.
#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundTrack {
    samples: Vec<f32>,
    pub source_path: String,
}

impl BackgroundTrack {
    pub fn new(samples: Vec<f32>, source_path: impl Into<String>) -> Result<Self> {
        if samples.len() < CLIP_LEN {
            return Err(Error::TrackTooShort(samples.len()));
        }
        Ok(Self { samples, source_path: source_path.into() })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }
}

/// Maps a signed 16-bit PCM value onto [-1, 1) by dividing by 32768.
pub fn pcm_to_sample(v: i16) -> f32 {
    v as f32 / 32768.0
}

/// Inverse of [`pcm_to_sample`], rounding to nearest and saturating.
pub fn sample_to_pcm(s: f32) -> i16 {
    let v = (s as f64 * 32768.0).round();
    v.clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

/// `amplitude * sin(2π f n / 16000)` for `duration_s` seconds.
pub fn generate_tone(freq_hz: f64, duration_s: f64, amplitude: f64) -> Result<AudioClip> {
    generate_tone_with_phase(freq_hz, duration_s, amplitude, 0.0)
}

pub fn generate_tone_with_phase(
    freq_hz: f64,
    duration_s: f64,
    amplitude: f64,
    phase: f64,
) -> Result<AudioClip> {
    let nyquist = SAMPLE_RATE_HZ as f64 / 2.0;
    if !(freq_hz > 0.0 && freq_hz < nyquist) {
        return Err(Error::FrequencyAboveNyquist(freq_hz));
    }
    if amplitude.abs() > 1.0 {
        return Err(Error::AmplitudeOutOfRange(amplitude));
    }
    let n = Float::round(duration_s * SAMPLE_RATE_HZ as f64) as usize;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / SAMPLE_RATE_HZ as f64;
            (amplitude * Float::sin(2.0 * PI * freq_hz * t + phase)) as f32
        })
        .collect();
    Ok(AudioClip::new(samples))
}

/// Cuts a one-second window at a uniformly random offset.
pub fn random_snippet<R: Rng + ?Sized>(track: &BackgroundTrack, rng: &mut R) -> Result<AudioClip> {
    let len = track.samples.len();
    if len < CLIP_LEN {
        return Err(Error::TrackTooShort(len));
    }
    let offset = rng.gen_range(0..=len - CLIP_LEN);
    let clip = AudioClip::new(track.samples[offset..offset + CLIP_LEN].to_vec());
    Ok(clip.with_source(track.source_path.clone()))
}

/// `clamp(clip + volume * snippet, -1, 1)` sample by sample.
pub fn mix_background(clip: &AudioClip, snippet: &AudioClip, volume: f32) -> Result<AudioClip> {
    if clip.len() != snippet.len() {
        return Err(Error::LengthMismatch(clip.len(), snippet.len()));
    }
    if !(0.0..=1.0).contains(&volume) {
        return Err(Error::VolumeOutOfRange(volume as f64));
    }
    let samples = clip
        .samples
        .iter()
        .zip(&snippet.samples)
        .map(|(&c, &s)| c + volume * s)
        .collect();
    let mut out = AudioClip::new(samples);
    out.source_path = clip.source_path.clone();
    Ok(out)
}
