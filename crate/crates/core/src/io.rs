//! File formats: WAV audio, JSON configs and dumps.
//!
//! Audio moves through mono WAV files, one file per channel; multichannel
//! scenes are directories of them plus a JSON manifest. Beamformer
//! internals (covariances, filters) dump to a small JSON format with
//! complex numbers as [re, im] pairs, row-major per frequency bin, so they
//! can be inspected or diffed with any JSON tooling.

use std::fs;
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::beamform::{BeamformerFilter, SpatialCovariance};
use crate::dsp::Waveform;
use crate::error::{Error, Result};
use crate::weights::ChannelWeights;

// ---------------------------------------------------------------------------
// WAV
// ---------------------------------------------------------------------------

/// Read a mono WAV file into float samples.
///
/// Integer formats are normalized by their full scale to land in [-1, 1];
/// 32-bit float files are taken as-is. Multichannel files are rejected:
/// this toolkit stores each microphone in its own file.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let mut reader = WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Format(format!(
            "{} has {} channels; expected mono (store one file per microphone)",
            path.display(),
            spec.channels
        )));
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()?,
        (SampleFormat::Int, bits) if bits <= 32 => {
            let scale = (1i64 << (bits - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()?
        }
        (format, bits) => {
            return Err(Error::Format(format!(
                "{}: unsupported sample format {format:?} at {bits} bits",
                path.display()
            )))
        }
    };
    Waveform::new(samples, spec.sample_rate)
}

/// Write a waveform as 32-bit float WAV, preserving sample values up to
/// f32 rounding.
pub fn write_wav_f32(path: impl AsRef<Path>, wave: &Waveform) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut writer = WavWriter::create(path, spec)?;
    for &s in &wave.samples {
        writer.write_sample(s as f32)?;
    }
    writer.finalize()?;
    Ok(())
}

/// Write a waveform as 16-bit PCM WAV, clamping to [-1, 1] first.
pub fn write_wav_i16(path: impl AsRef<Path>, wave: &Waveform) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec)?;
    for &s in &wave.samples {
        // Scale by 32768 to match the read-side normalization, then clamp
        // into the representable range.
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(v)?;
    }
    writer.finalize()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// JSON helpers
// ---------------------------------------------------------------------------

/// Read any deserializable value from a JSON file.
pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let text = fs::read_to_string(path.as_ref())?;
    Ok(serde_json::from_str(&text)?)
}

/// Write any serializable value as pretty-printed JSON with a trailing
/// newline.
pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path.as_ref(), text)?;
    Ok(())
}

/// Read channel weights from JSON, accepting both the array form and the
/// object form keyed by channel index.
pub fn read_weights(path: impl AsRef<Path>) -> Result<ChannelWeights> {
    let text = fs::read_to_string(path.as_ref())?;
    ChannelWeights::from_json_str(&text)
}

pub fn write_weights(path: impl AsRef<Path>, weights: &ChannelWeights) -> Result<()> {
    write_json(path, weights)
}

// ---------------------------------------------------------------------------
// Beamformer dumps
// ---------------------------------------------------------------------------

/// JSON-facing image of per-frequency complex matrices. `bins[f]` holds the
/// row-major entries of the f-th matrix as [re, im] pairs; vectors are
/// matrices with one column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralDump {
    pub rows: usize,
    pub cols: usize,
    pub bins: Vec<Vec<[f64; 2]>>,
}

impl SpectralDump {
    fn check(&self) -> Result<()> {
        let want = self.rows * self.cols;
        for (f, bin) in self.bins.iter().enumerate() {
            if bin.len() != want {
                return Err(Error::Format(format!(
                    "bin {f} holds {} entries, expected {}x{}",
                    bin.len(),
                    self.rows,
                    self.cols
                )));
            }
        }
        Ok(())
    }
}

pub fn covariance_to_dump(cov: &SpatialCovariance) -> SpectralDump {
    let dim = cov.dim();
    SpectralDump {
        rows: dim,
        cols: dim,
        bins: cov
            .matrices
            .iter()
            .map(|m| {
                // nalgebra stores column-major; emit row-major for readability.
                (0..m.nrows())
                    .flat_map(|r| (0..m.ncols()).map(move |c| (r, c)))
                    .map(|(r, c)| [m[(r, c)].re, m[(r, c)].im])
                    .collect()
            })
            .collect(),
    }
}

pub fn covariance_from_dump(dump: &SpectralDump) -> Result<SpatialCovariance> {
    dump.check()?;
    if dump.rows != dump.cols {
        return Err(Error::Format(format!(
            "covariance dump must be square, got {}x{}",
            dump.rows, dump.cols
        )));
    }
    let matrices = dump
        .bins
        .iter()
        .map(|bin| {
            DMatrix::from_fn(dump.rows, dump.cols, |r, c| {
                let [re, im] = bin[r * dump.cols + c];
                Complex64::new(re, im)
            })
        })
        .collect();
    Ok(SpatialCovariance { matrices })
}

pub fn filter_to_dump(filter: &BeamformerFilter) -> SpectralDump {
    SpectralDump {
        rows: filter.dim(),
        cols: 1,
        bins: filter
            .vectors
            .iter()
            .map(|v| v.iter().map(|c| [c.re, c.im]).collect())
            .collect(),
    }
}

pub fn filter_from_dump(dump: &SpectralDump) -> Result<BeamformerFilter> {
    dump.check()?;
    if dump.cols != 1 {
        return Err(Error::Format(format!(
            "filter dump must have one column, got {}",
            dump.cols
        )));
    }
    let vectors = dump
        .bins
        .iter()
        .map(|bin| DVector::from_iterator(dump.rows, bin.iter().map(|&[re, im]| Complex64::new(re, im))))
        .collect();
    Ok(BeamformerFilter { vectors })
}
