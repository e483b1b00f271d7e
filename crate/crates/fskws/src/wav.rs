//! 16-bit mono 16 kHz PCM WAV files.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use fskws_core::audio::{pcm_to_sample, sample_to_pcm, AudioClip, BackgroundTrack, SAMPLE_RATE_HZ};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WavError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: malformed WAV ({detail})")]
    MalformedWav { path: PathBuf, detail: String },
    #[error("{path}: unsupported format ({detail}); expected 16-bit mono {SAMPLE_RATE_HZ} Hz PCM")]
    UnsupportedFormat { path: PathBuf, detail: String },
    #[error("{path}: {source}")]
    Audio { path: PathBuf, source: fskws_core::Error },
}

fn classify(path: &Path, err: hound::Error) -> WavError {
    let path = path.to_path_buf();
    match err {
        hound::Error::IoError(source) => WavError::Io { path, source },
        other => classify_read(path, other),
    }
}

/// Errors while decoding an already opened file: hound reports short reads as
/// plain I/O errors, which here mean the file is malformed.
fn classify_read(path: PathBuf, err: hound::Error) -> WavError {
    match err {
        hound::Error::IoError(source) => WavError::MalformedWav { path, detail: source.to_string() },
        hound::Error::FormatError(detail) => WavError::MalformedWav { path, detail: detail.to_string() },
        hound::Error::UnfinishedSample => WavError::MalformedWav { path, detail: "truncated sample data".into() },
        other => WavError::UnsupportedFormat { path, detail: other.to_string() },
    }
}

fn open(path: &Path) -> Result<hound::WavReader<BufReader<File>>, WavError> {
    let file = File::open(path).map_err(|source| WavError::Io { path: path.to_path_buf(), source })?;
    let reader = hound::WavReader::new(BufReader::new(file)).map_err(|e| classify_read(path.to_path_buf(), e))?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int
        || spec.bits_per_sample != 16
        || spec.channels != 1
        || spec.sample_rate != SAMPLE_RATE_HZ
    {
        return Err(WavError::UnsupportedFormat {
            path: path.to_path_buf(),
            detail: format!(
                "{:?} {}-bit, {} channel(s), {} Hz",
                spec.sample_format, spec.bits_per_sample, spec.channels, spec.sample_rate
            ),
        });
    }
    Ok(reader)
}

/// Raw PCM values of a file.
pub fn read_pcm(path: &Path) -> Result<Vec<i16>, WavError> {
    open(path)?.into_samples::<i16>().collect::<Result<_, _>>().map_err(|e| classify_read(path.to_path_buf(), e))
}

/// Sample count declared by the header, without reading the data.
pub fn probe_len(path: &Path) -> Result<usize, WavError> {
    Ok(open(path)?.duration() as usize)
}

/// Loads a clip of any length; callers decide what to do with short ones.
pub fn load_clip(path: &Path) -> Result<AudioClip, WavError> {
    let samples = read_pcm(path)?.into_iter().map(pcm_to_sample).collect();
    Ok(AudioClip::new(samples).with_source(path.display().to_string()))
}

pub fn load_track(path: &Path) -> Result<BackgroundTrack, WavError> {
    let samples = read_pcm(path)?.into_iter().map(pcm_to_sample).collect();
    BackgroundTrack::new(samples, path.display().to_string())
        .map_err(|source| WavError::Audio { path: path.to_path_buf(), source })
}

pub fn write_pcm(path: &Path, pcm: &[i16]) -> Result<(), WavError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE_HZ,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| classify(path, e))?;
    for &v in pcm {
        writer.write_sample(v).map_err(|e| classify(path, e))?;
    }
    writer.finalize().map_err(|e| classify(path, e))
}

/// Quantizes to 16-bit PCM and writes the clip.
pub fn write_clip(path: &Path, clip: &AudioClip) -> Result<(), WavError> {
    let pcm: Vec<i16> = clip.samples().iter().map(|&s| sample_to_pcm(s)).collect();
    write_pcm(path, &pcm)
}
