//! Seeded generators for speech-like test material.
//!
//! Real recordings are out of scope for the toolkit itself, so experiments
//! and tests drive the pipeline with synthetic utterances: a drifting
//! fundamental with a harmonic stack, a syllabic on/off envelope with short
//! ramps, and slow amplitude modulation. Everything is deterministic in the
//! seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::Waveform;
use crate::error::{Error, Result};

/// Peak amplitude of generated signals.
const PEAK: f64 = 0.9;

/// A voiced, pause-bearing utterance of the given duration.
///
/// The fundamental is drawn from 90..220 Hz and wobbles slowly; eight
/// harmonics roll off as 1/h. Syllable-scale segments (0.15..0.45 s on,
/// 0.05..0.25 s off) gate the carrier through 10 ms cosine ramps, so the
/// output has genuine silent stretches like conversational speech.
pub fn speech_like(seed: u64, sample_rate: u32, duration_secs: f64) -> Result<Waveform> {
    if duration_secs <= 0.0 || !duration_secs.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "duration_secs = {duration_secs} must be positive"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fs = sample_rate as f64;
    let len = (duration_secs * fs).round() as usize;

    let f0: f64 = rng.random_range(90.0..220.0);
    let wobble_rate: f64 = rng.random_range(0.5..2.0);
    let wobble_phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let am_rate: f64 = rng.random_range(2.0..5.0);
    let am_phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let num_harmonics = 8;
    let harmonic_phases: Vec<f64> = (0..num_harmonics)
        .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
        .collect();

    let gate = syllable_gate(&mut rng, len, fs);

    let mut samples = Vec::with_capacity(len);
    let mut carrier_phase = 0.0f64;
    for i in 0..len {
        let t = i as f64 / fs;
        let inst_f0 = f0 * (1.0 + 0.04 * (std::f64::consts::TAU * wobble_rate * t + wobble_phase).sin());
        carrier_phase += std::f64::consts::TAU * inst_f0 / fs;

        let mut v = 0.0;
        for (h, ph) in harmonic_phases.iter().enumerate() {
            let order = (h + 1) as f64;
            // Keep harmonics under Nyquist.
            if inst_f0 * order < 0.45 * fs {
                v += (carrier_phase * order + ph).sin() / order;
            }
        }
        let am = 0.75 + 0.25 * (std::f64::consts::TAU * am_rate * t + am_phase).sin();
        samples.push(v * am * gate[i]);
    }

    normalize_peak(&mut samples);
    Waveform::new(samples, sample_rate)
}

/// Uniform white noise in [-PEAK, PEAK].
pub fn white_noise(seed: u64, sample_rate: u32, duration_secs: f64) -> Result<Waveform> {
    if duration_secs <= 0.0 || !duration_secs.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "duration_secs = {duration_secs} must be positive"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = (duration_secs * sample_rate as f64).round() as usize;
    let samples = (0..len).map(|_| rng.random_range(-PEAK..PEAK)).collect();
    Waveform::new(samples, sample_rate)
}

/// On/off envelope with cosine ramps at segment edges.
fn syllable_gate(rng: &mut ChaCha8Rng, len: usize, fs: f64) -> Vec<f64> {
    let ramp = (0.010 * fs).round() as usize;
    let mut gate = vec![0.0; len];
    let mut pos = 0usize;
    let mut on = true;
    while pos < len {
        let dur_secs = if on {
            rng.random_range(0.15..0.45)
        } else {
            rng.random_range(0.05..0.25)
        };
        let seg = ((dur_secs * fs) as usize).max(1);
        let end = (pos + seg).min(len);
        if on {
            for i in pos..end {
                let rel = i - pos;
                let from_end = end - 1 - i;
                let mut g = 1.0;
                if rel < ramp {
                    g *= 0.5 - 0.5 * (std::f64::consts::PI * rel as f64 / ramp as f64).cos();
                }
                if from_end < ramp {
                    g *= 0.5 - 0.5 * (std::f64::consts::PI * from_end as f64 / ramp as f64).cos();
                }
                gate[i] = g;
            }
        }
        pos = end;
        on = !on;
    }
    gate
}

fn normalize_peak(samples: &mut [f64]) {
    let peak = samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if peak > 0.0 {
        let g = PEAK / peak;
        for s in samples.iter_mut() {
            *s *= g;
        }
    }
}
