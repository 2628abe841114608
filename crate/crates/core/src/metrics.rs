//! Separation quality metrics.
//!
//! Two SDR-family numbers are reported: `si_sdr` projects the reference
//! onto the estimate's scale before measuring distortion (so a gain error
//! costs nothing), while `sdr_db` is the plain energy ratio at unit gain.
//! Neither applies an allowed-distortion filter; the classic 512-tap
//! BSS-eval projection is deliberately not implemented, and SI-SDR is the
//! headline number throughout.
//!
//! Intelligibility comes from a short-time objective measure computed on
//! one-third-octave magnitude envelopes at 10 kHz: silent reference frames
//! are removed, both signals are banded, and clipped normalized
//! correlations over 384 ms segments are averaged. Because it works on
//! magnitude envelopes the measure is blind to polarity and to global gain
//! on either input.
//!
//! PESQ has no internal implementation; [`pesq_external`] shells out to a
//! user-supplied binary and treats every failure as a missing value so
//! batch runs never abort on a scoring tool.

use std::path::Path;
use std::process::Command;

use serde::{Deserialize, Serialize};

use crate::dsp::{fft_convolve, Waveform};
use crate::error::{Error, Result};

/// dB ceiling and floor for the SDR family; a perfect reconstruction hits
/// the cap instead of dividing by zero.
pub const DB_CAP: f64 = 60.0;

// ---------------------------------------------------------------------------
// SDR family
// ---------------------------------------------------------------------------

fn check_pair(estimate: &Waveform, reference: &Waveform) -> Result<()> {
    if estimate.sample_rate != reference.sample_rate {
        return Err(Error::SampleRateMismatch {
            a: estimate.sample_rate,
            b: reference.sample_rate,
        });
    }
    if estimate.len() != reference.len() {
        return Err(Error::shape(
            format!("estimate and reference of equal length, got {}", estimate.len()),
            format!("{}", reference.len()),
        ));
    }
    if reference.energy() == 0.0 {
        return Err(Error::ZeroEnergy("reference signal is silent".into()));
    }
    Ok(())
}

fn ratio_db(signal: f64, error: f64) -> f64 {
    // Checked in this order so an all-zero estimate (0/0) floors out
    // instead of passing for perfect.
    if signal == 0.0 {
        return -DB_CAP;
    }
    if error == 0.0 {
        return DB_CAP;
    }
    (10.0 * (signal / error).log10()).clamp(-DB_CAP, DB_CAP)
}

/// Scale-invariant SDR in dB: the reference is rescaled by the projection
/// coefficient alpha = <estimate, reference> / ||reference||^2 and the
/// residual against that projection counts as distortion. Capped at
/// +-60 dB.
pub fn si_sdr(estimate: &Waveform, reference: &Waveform) -> Result<f64> {
    check_pair(estimate, reference)?;
    let dot: f64 = estimate
        .samples
        .iter()
        .zip(&reference.samples)
        .map(|(e, r)| e * r)
        .sum();
    let alpha = dot / reference.energy();
    let mut signal = 0.0;
    let mut error = 0.0;
    for (e, r) in estimate.samples.iter().zip(&reference.samples) {
        let s = alpha * r;
        signal += s * s;
        let d = e - s;
        error += d * d;
    }
    Ok(ratio_db(signal, error))
}

/// Plain SDR in dB at unit gain: 10 log10(||x||^2 / ||x - estimate||^2),
/// capped at +-60 dB. Unlike [`si_sdr`] this punishes gain mismatch.
pub fn sdr_db(estimate: &Waveform, reference: &Waveform) -> Result<f64> {
    check_pair(estimate, reference)?;
    let mut error = 0.0;
    for (e, r) in estimate.samples.iter().zip(&reference.samples) {
        let d = e - r;
        error += d * d;
    }
    Ok(ratio_db(reference.energy(), error))
}

/// Globally align two signals by their cross-correlation peak, then
/// truncate to the overlapping run. Returns (estimate, reference) with
/// equal lengths. The peak is taken on the signed correlation, so an
/// inverted estimate is not treated as aligned.
pub fn align_by_cross_correlation(
    estimate: &Waveform,
    reference: &Waveform,
) -> Result<(Waveform, Waveform)> {
    if estimate.sample_rate != reference.sample_rate {
        return Err(Error::SampleRateMismatch {
            a: estimate.sample_rate,
            b: reference.sample_rate,
        });
    }
    if estimate.is_empty() || reference.is_empty() {
        return Err(Error::InputTooShort { needed: 1, got: 0 });
    }
    let reversed: Vec<f64> = reference.samples.iter().rev().copied().collect();
    let corr = fft_convolve(&estimate.samples, &reversed);
    let mut best = 0;
    for (k, &v) in corr.iter().enumerate() {
        if v > corr[best] {
            best = k;
        }
    }
    // corr[k] pairs estimate[n] with reference[n - lag], lag = k - (L_ref - 1).
    let lag = best as i64 - (reference.len() as i64 - 1);
    let (est_start, ref_start) = if lag >= 0 {
        (lag as usize, 0)
    } else {
        (0, (-lag) as usize)
    };
    let n = (estimate.len() - est_start).min(reference.len() - ref_start);
    if n == 0 {
        return Err(Error::InputTooShort { needed: 1, got: 0 });
    }
    let fs = estimate.sample_rate;
    Ok((
        Waveform {
            samples: estimate.samples[est_start..est_start + n].to_vec(),
            sample_rate: fs,
        },
        Waveform {
            samples: reference.samples[ref_start..ref_start + n].to_vec(),
            sample_rate: fs,
        },
    ))
}

// ---------------------------------------------------------------------------
// Short-time objective intelligibility
// ---------------------------------------------------------------------------

const STOI_FS: u32 = 10_000;
const STOI_FRAME: usize = 256;
const STOI_HOP: usize = 128;
const STOI_NFFT: usize = 512;
const STOI_BANDS: usize = 15;
const STOI_MIN_FREQ: f64 = 150.0;
/// Segment length in frames; 30 frames of 128-sample hop at 10 kHz is
/// 384 ms.
const STOI_SEG: usize = 30;
/// Lower bound of the signal-to-distortion clip, -15 dB.
const STOI_CLIP: f64 = 5.623413251903491; // 10^(15/20)
const STOI_DYN_RANGE: f64 = 40.0;
const EPS: f64 = f64::EPSILON;

/// Short-time objective intelligibility of `estimate` against `reference`,
/// clamped into [0, 1].
///
/// Both signals are resampled to 10 kHz, frames in which the reference is
/// more than 40 dB below its loudest frame are removed from both, and the
/// clipped, normalized correlation of one-third-octave magnitude envelopes
/// is averaged over 384 ms segments and 15 bands.
pub fn stoi(estimate: &Waveform, reference: &Waveform) -> Result<f64> {
    if estimate.sample_rate != reference.sample_rate {
        return Err(Error::SampleRateMismatch {
            a: estimate.sample_rate,
            b: reference.sample_rate,
        });
    }
    let n = estimate.len().min(reference.len());
    let est = resample(
        &Waveform {
            samples: estimate.samples[..n].to_vec(),
            sample_rate: estimate.sample_rate,
        },
        STOI_FS,
    )?;
    let refr = resample(
        &Waveform {
            samples: reference.samples[..n].to_vec(),
            sample_rate: reference.sample_rate,
        },
        STOI_FS,
    )?;

    let (x, y) = remove_silent_frames(&refr.samples, &est.samples)?;
    let x_spec = stoi_stft(&x);
    let y_spec = stoi_stft(&y);
    let frames = x_spec.len().min(y_spec.len());
    if frames < STOI_SEG {
        return Err(Error::InputTooShort {
            needed: STOI_SEG * STOI_HOP + STOI_FRAME,
            got: x.len(),
        });
    }

    let bands = third_octave_bands();
    // Band magnitude envelopes, bands x frames.
    let mut x_tob = vec![vec![0.0; frames]; STOI_BANDS];
    let mut y_tob = vec![vec![0.0; frames]; STOI_BANDS];
    for m in 0..frames {
        for (b, (lo, hi)) in bands.iter().enumerate() {
            let mut xs = 0.0;
            let mut ys = 0.0;
            for k in *lo..*hi {
                xs += x_spec[m][k];
                ys += y_spec[m][k];
            }
            x_tob[b][m] = xs.sqrt();
            y_tob[b][m] = ys.sqrt();
        }
    }

    let segments = frames - STOI_SEG + 1;
    let mut total = 0.0;
    for seg in 0..segments {
        for b in 0..STOI_BANDS {
            let xb = &x_tob[b][seg..seg + STOI_SEG];
            let yb = &y_tob[b][seg..seg + STOI_SEG];
            let x_norm = l2(xb);
            let y_norm = l2(yb);
            let alpha = x_norm / (y_norm + EPS);
            let mut yp = [0.0; STOI_SEG];
            for i in 0..STOI_SEG {
                yp[i] = (alpha * yb[i]).min((1.0 + STOI_CLIP) * xb[i]);
            }
            let x_mean = xb.iter().sum::<f64>() / STOI_SEG as f64;
            let y_mean = yp.iter().sum::<f64>() / STOI_SEG as f64;
            let mut xc = [0.0; STOI_SEG];
            let mut yc = [0.0; STOI_SEG];
            for i in 0..STOI_SEG {
                xc[i] = xb[i] - x_mean;
                yc[i] = yp[i] - y_mean;
            }
            let xd = l2(&xc) + EPS;
            let yd = l2(&yc) + EPS;
            let mut r = 0.0;
            for i in 0..STOI_SEG {
                r += (xc[i] / xd) * (yc[i] / yd);
            }
            total += r;
        }
    }
    Ok((total / (STOI_BANDS * segments) as f64).clamp(0.0, 1.0))
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Rational-ratio resampler with a Hann-windowed sinc filter: zero-stuff by
/// L, lowpass at the tighter Nyquist, take every M-th sample. Output length
/// is ceil(len * L / M).
pub fn resample(wave: &Waveform, to_fs: u32) -> Result<Waveform> {
    if wave.sample_rate == 0 || to_fs == 0 {
        return Err(Error::InvalidArgument("sample rates must be positive".into()));
    }
    if wave.sample_rate == to_fs {
        return Ok(wave.clone());
    }
    if wave.is_empty() {
        return Err(Error::InputTooShort { needed: 1, got: 0 });
    }
    let from = wave.sample_rate as usize;
    let to = to_fs as usize;
    let g = gcd(from, to);
    let l = to / g;
    let m = from / g;

    let half_len = 10 * l.max(m);
    let taps = 2 * half_len + 1;
    // Cutoff as a fraction of the upsampled rate.
    let nu = from.min(to) as f64 / (2.0 * (from * l) as f64);
    let mut h = Vec::with_capacity(taps);
    for n in 0..taps {
        let t = 2.0 * nu * (n as f64 - half_len as f64);
        let sinc = if t == 0.0 {
            1.0
        } else {
            (std::f64::consts::PI * t).sin() / (std::f64::consts::PI * t)
        };
        let window =
            0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / (taps - 1) as f64).cos();
        h.push(l as f64 * 2.0 * nu * sinc * window);
    }

    let mut up = vec![0.0; wave.len() * l];
    for (i, &s) in wave.samples.iter().enumerate() {
        up[i * l] = s;
    }
    let conv = fft_convolve(&up, &h);
    let out_len = (wave.len() * l).div_ceil(m);
    let samples: Vec<f64> = (0..out_len).map(|j| conv[half_len + j * m]).collect();
    Waveform::new(samples, to_fs)
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// The analysis window shared by silence removal and the STFT: a symmetric
/// Hann of length frame+2 with the zero endpoints dropped.
fn stoi_window() -> [f64; STOI_FRAME] {
    std::array::from_fn(|i| {
        0.5 - 0.5
            * (2.0 * std::f64::consts::PI * (i + 1) as f64 / (STOI_FRAME + 1) as f64).cos()
    })
}

/// Drop frames whose windowed reference energy sits more than 40 dB below
/// the loudest frame, then overlap-add the surviving frames of BOTH
/// signals back into contiguous time series.
fn remove_silent_frames(reference: &[f64], estimate: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let len = reference.len().min(estimate.len());
    if len < STOI_FRAME {
        return Err(Error::InputTooShort {
            needed: STOI_FRAME,
            got: len,
        });
    }
    let w = stoi_window();
    let starts: Vec<usize> = (0..=(len - STOI_FRAME)).step_by(STOI_HOP).collect();
    let energies: Vec<f64> = starts
        .iter()
        .map(|&s| {
            let e: f64 = (0..STOI_FRAME)
                .map(|i| {
                    let v = w[i] * reference[s + i];
                    v * v
                })
                .sum();
            20.0 * (e.sqrt() + EPS).log10()
        })
        .collect();
    let peak = energies.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let kept: Vec<usize> = starts
        .iter()
        .zip(&energies)
        .filter(|(_, &e)| e + STOI_DYN_RANGE > peak)
        .map(|(&s, _)| s)
        .collect();
    if kept.is_empty() {
        return Err(Error::ZeroEnergy(
            "no reference frame clears the silence threshold".into(),
        ));
    }
    let out_len = STOI_HOP * (kept.len() - 1) + STOI_FRAME;
    let mut x = vec![0.0; out_len];
    let mut y = vec![0.0; out_len];
    for (k, &s) in kept.iter().enumerate() {
        let base = k * STOI_HOP;
        for i in 0..STOI_FRAME {
            x[base + i] += w[i] * reference[s + i];
            y[base + i] += w[i] * estimate[s + i];
        }
    }
    Ok((x, y))
}

/// Windowed power spectra (|rfft|^2) per frame, 257 bins at the 512-point
/// transform.
fn stoi_stft(signal: &[f64]) -> Vec<Vec<f64>> {
    let w = stoi_window();
    let mut planner = rustfft::FftPlanner::new();
    let fft = planner.plan_fft_forward(STOI_NFFT);
    let mut frames = Vec::new();
    if signal.len() < STOI_FRAME {
        return frames;
    }
    let mut buf = vec![num_complex::Complex64::new(0.0, 0.0); STOI_NFFT];
    let mut start = 0;
    while start + STOI_FRAME <= signal.len() {
        for (i, slot) in buf.iter_mut().enumerate() {
            let v = if i < STOI_FRAME { w[i] * signal[start + i] } else { 0.0 };
            *slot = num_complex::Complex64::new(v, 0.0);
        }
        fft.process(&mut buf);
        frames.push(buf[..STOI_NFFT / 2 + 1].iter().map(|c| c.norm_sqr()).collect());
        start += STOI_HOP;
    }
    frames
}

/// Half-open FFT-bin ranges of the 15 one-third-octave bands starting at
/// 150 Hz, with edges snapped to the nearest bin.
fn third_octave_bands() -> [(usize, usize); STOI_BANDS] {
    let bins = STOI_NFFT / 2 + 1;
    let f: Vec<f64> = (0..bins)
        .map(|k| k as f64 * STOI_FS as f64 / STOI_NFFT as f64)
        .collect();
    let nearest = |target: f64| -> usize {
        let mut best = 0;
        for (k, &fk) in f.iter().enumerate() {
            if (fk - target).abs() < (f[best] - target).abs() {
                best = k;
            }
        }
        best
    };
    std::array::from_fn(|i| {
        let lo = STOI_MIN_FREQ * 2f64.powf((2.0 * i as f64 - 1.0) / 6.0);
        let hi = STOI_MIN_FREQ * 2f64.powf((2.0 * i as f64 + 1.0) / 6.0);
        (nearest(lo), nearest(hi))
    })
}

// ---------------------------------------------------------------------------
// External PESQ hook
// ---------------------------------------------------------------------------

/// Score with an external PESQ binary, if one is supplied.
///
/// The tool is invoked as `tool +<fs> <reference.wav> <estimate.wav>` on
/// 16-bit PCM temp files and the LAST number printed on its stdout is taken
/// as the score (reference P.862 binaries print "MOS-LQO" last). Any
/// failure, missing tool, crash, or unparseable output, yields `None` with
/// a warning on stderr; batch evaluation never aborts over PESQ.
pub fn pesq_external(
    estimate: &Waveform,
    reference: &Waveform,
    tool: Option<&Path>,
) -> Option<f64> {
    let tool = tool?;
    let dir = match tempfile::tempdir() {
        Ok(d) => d,
        Err(e) => {
            eprintln!("warning: pesq skipped, no temp dir: {e}");
            return None;
        }
    };
    let ref_path = dir.path().join("reference.wav");
    let est_path = dir.path().join("estimate.wav");
    if let Err(e) = crate::io::write_wav_i16(&ref_path, reference)
        .and_then(|_| crate::io::write_wav_i16(&est_path, estimate))
    {
        eprintln!("warning: pesq skipped, wav dump failed: {e}");
        return None;
    }
    let output = Command::new(tool)
        .arg(format!("+{}", reference.sample_rate))
        .arg(&ref_path)
        .arg(&est_path)
        .output();
    match output {
        Ok(out) if out.status.success() => {
            let text = String::from_utf8_lossy(&out.stdout);
            match last_number(&text) {
                Some(score) => Some(score),
                None => {
                    eprintln!(
                        "warning: pesq output had no parseable score: {:?}",
                        text.lines().last().unwrap_or("")
                    );
                    None
                }
            }
        }
        Ok(out) => {
            eprintln!("warning: pesq tool exited with {}", out.status);
            None
        }
        Err(e) => {
            eprintln!("warning: pesq tool failed to run: {e}");
            None
        }
    }
}

/// Last finite float in a blob of text, splitting on whitespace and the
/// usual key-value punctuation.
fn last_number(text: &str) -> Option<f64> {
    text.split(|c: char| c.is_whitespace() || c == '=' || c == ':' || c == ',')
        .filter(|t| !t.is_empty())
        .filter_map(|t| t.parse::<f64>().ok())
        .filter(|v| v.is_finite())
        .next_back()
}

// ---------------------------------------------------------------------------
// Combined report
// ---------------------------------------------------------------------------

/// One scored estimate/reference pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub si_sdr_db: f64,
    pub sdr_db: f64,
    pub stoi: f64,
    pub pesq: Option<f64>,
}

/// Align by cross-correlation, then score everything at once.
pub fn evaluate(
    estimate: &Waveform,
    reference: &Waveform,
    pesq_tool: Option<&Path>,
) -> Result<MetricReport> {
    let (est, refr) = align_by_cross_correlation(estimate, reference)?;
    Ok(MetricReport {
        si_sdr_db: si_sdr(&est, &refr)?,
        sdr_db: sdr_db(&est, &refr)?,
        stoi: stoi(&est, &refr)?,
        pesq: pesq_external(&est, &refr, pesq_tool),
    })
}
