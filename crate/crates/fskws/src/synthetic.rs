//! Synthetic data that needs no download: a pure-tone episode source and a
//! small corpus laid out like Speech Commands.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use fskws_core::audio::{generate_tone_with_phase, AudioClip, CLIP_LEN, SAMPLE_RATE_HZ};
use fskws_core::features::{FeatureConfig, FeatureMatrix, Mfcc};
use fskws_core::protonet::{Category, Episode, Labeled, Role};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{DatasetError, EpisodeSource, EpisodeSpec, SynthConfig, BACKGROUND_DIR};
use crate::wav;

/// Episodes whose categories are pure tones. Every clip gets a random phase,
/// an amplitude in `[0.2, 0.8]` and a frequency jitter of ±`jitter`.
#[derive(Debug)]
pub struct ToneSource {
    pub freqs_hz: Vec<f64>,
    pub jitter: f64,
    mfcc: Mfcc,
}

impl ToneSource {
    pub fn new(freqs_hz: Vec<f64>, features: FeatureConfig) -> Result<Self, DatasetError> {
        Ok(Self { freqs_hz, jitter: 0.02, mfcc: Mfcc::new(features)? })
    }

    fn clip(&self, freq: f64, rng: &mut ChaCha8Rng) -> Result<FeatureMatrix, DatasetError> {
        let f = freq * (1.0 + self.jitter * rng.gen_range(-1.0..=1.0));
        let amplitude = rng.gen_range(0.2..=0.8);
        let phase = rng.gen_range(0.0..2.0 * PI);
        let clip = generate_tone_with_phase(f, 1.0, amplitude, phase)?;
        Ok(self.mfcc.compute(&clip)?)
    }
}

impl EpisodeSource for ToneSource {
    fn episode(
        &self,
        spec: &EpisodeSpec,
        sample_rng: &mut ChaCha8Rng,
        _mix_rng: &mut ChaCha8Rng,
    ) -> Result<Episode<FeatureMatrix>, DatasetError> {
        spec.validate()?;
        if spec.include_unknown || spec.include_silence || spec.background {
            return Err(DatasetError::InvalidSpec("tone episodes have core categories only".into()));
        }
        if self.freqs_hz.len() < spec.n_way {
            return Err(DatasetError::InsufficientClasses {
                phase: spec.phase,
                needed: spec.n_way,
                available: self.freqs_hz.len(),
            });
        }
        let chosen = index::sample(sample_rng, self.freqs_hz.len(), spec.n_way).into_vec();
        let categories =
            chosen.iter().map(|&i| Category { name: format!("{} Hz", self.freqs_hz[i]), role: Role::Core }).collect();
        let (mut support, mut query) = (Vec::new(), Vec::new());
        for (label, &i) in chosen.iter().enumerate() {
            for _ in 0..spec.k_shot {
                support.push(Labeled { item: self.clip(self.freqs_hz[i], sample_rng)?, label });
            }
            for _ in 0..spec.n_query {
                query.push(Labeled { item: self.clip(self.freqs_hz[i], sample_rng)?, label });
            }
        }
        Ok(Episode { categories, support, query })
    }
}

/// Shape of a generated Speech-Commands-like corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct MockCorpus {
    pub core_keywords: usize,
    pub unknown_keywords: usize,
    /// Inclusive range of speakers per core keyword.
    pub core_speakers: (usize, usize),
    /// Inclusive range of speakers per unknown keyword.
    pub unknown_speakers: (usize, usize),
    pub max_utterances_per_speaker: usize,
    /// Extra sub-second files per keyword.
    pub short_files: usize,
    pub background_tracks: usize,
    pub background_seconds: usize,
    pub seed: u64,
}

impl Default for MockCorpus {
    fn default() -> Self {
        Self {
            core_keywords: 12,
            unknown_keywords: 3,
            core_speakers: (24, 26),
            unknown_speakers: (15, 18),
            max_utterances_per_speaker: 2,
            short_files: 1,
            background_tracks: 2,
            background_seconds: 3,
            seed: 7,
        }
    }
}

impl MockCorpus {
    /// Synthesis settings matching the corpus scale: a core threshold between
    /// the two speaker ranges and 30 silence clips.
    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            core_speaker_threshold: (self.unknown_speakers.1 + self.core_speakers.0) / 2,
            silence_clips: 30,
            ..SynthConfig::default()
        }
    }

    pub fn core_name(i: usize) -> String {
        format!("core{i:02}")
    }

    pub fn unknown_name(i: usize) -> String {
        format!("unknown{i:02}")
    }

    /// Writes the corpus under `root`. Each keyword is a two-tone chord with a
    /// keyword-specific pitch pair, shifted slightly per speaker.
    pub fn write(&self, root: &Path) -> Result<(), DatasetError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let keywords = (0..self.core_keywords)
            .map(|i| (Self::core_name(i), self.core_speakers))
            .chain((0..self.unknown_keywords).map(|i| (Self::unknown_name(i), self.unknown_speakers)));
        for (k, (name, (lo, hi))) in keywords.enumerate() {
            let dir = root.join(&name);
            fs::create_dir_all(&dir).map_err(DatasetError::io(&dir))?;
            let base = (180.0 + 70.0 * k as f64, 900.0 + 310.0 * k as f64);
            for _ in 0..rng.gen_range(lo..=hi) {
                let speaker = format!("{:08x}", rng.gen::<u32>());
                let shift = 1.0 + rng.gen_range(-0.04..=0.04);
                for n in 0..rng.gen_range(1..=self.max_utterances_per_speaker) {
                    let clip = chord(base, shift, CLIP_LEN, &mut rng);
                    wav::write_clip(&dir.join(format!("{speaker}_nohash_{n}.wav")), &clip)?;
                }
            }
            for n in 0..self.short_files {
                let clip = chord(base, 1.0, CLIP_LEN / 2, &mut rng);
                wav::write_clip(&dir.join(format!("short{n:03}_nohash_0.wav")), &clip)?;
            }
        }
        let bg = root.join(BACKGROUND_DIR);
        fs::create_dir_all(&bg).map_err(DatasetError::io(&bg))?;
        for t in 0..self.background_tracks {
            let n = self.background_seconds * SAMPLE_RATE_HZ as usize;
            let samples = (0..n).map(|_| rng.gen_range(-0.5f32..=0.5)).collect();
            wav::write_clip(&bg.join(format!("noise_{t}.wav")), &AudioClip::new(samples))?;
        }
        Ok(())
    }
}

fn chord(base: (f64, f64), shift: f64, len: usize, rng: &mut ChaCha8Rng) -> AudioClip {
    let (a, b) = (base.0 * shift, base.1 * shift);
    let (pa, pb) = (rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.0..2.0 * PI));
    let gain = rng.gen_range(0.3..0.6);
    let sr = SAMPLE_RATE_HZ as f64;
    let samples = (0..len)
        .map(|i| {
            let t = i as f64 / sr;
            let envelope = (PI * i as f64 / len as f64).sin();
            let noise = rng.gen_range(-0.01..=0.01);
            (gain * envelope * (0.6 * (2.0 * PI * a * t + pa).sin() + 0.4 * (2.0 * PI * b * t + pb).sin()) + noise) as f32
        })
        .collect();
    AudioClip::new(samples)
}
