//! Time-frequency analysis/synthesis, oracle masks, and the two training
//! objectives as pure evaluable functions.
//!
//! Spectra are stored frame-major (T x F) in double precision. Analysis and
//! synthesis share one taper; the default square-root Hamming pair satisfies
//! constant overlap-add at 50% overlap, and [`istft`] normalizes by the
//! accumulated analysis-times-synthesis window so reconstruction is exact on
//! the fully overlapped interior.

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Magnitudes below this are treated as zero when dividing by |Y|.
pub const MAGNITUDE_FLOOR: f64 = 1e-10;

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

/// A real-valued, finite sample sequence with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    /// Build a waveform, rejecting non-finite samples and a zero sample rate.
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidArgument("sample_rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite sample at index {i}"
            )));
        }
        Ok(Waveform { samples, sample_rate })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Sum of squared samples.
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum()
    }

    /// Sum of absolute samples.
    pub fn l1_norm(&self) -> f64 {
        self.samples.iter().map(|s| s.abs()).sum()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Samplewise sum; lengths and rates must match.
    pub fn add(&self, other: &Waveform) -> Result<Waveform> {
        if self.sample_rate != other.sample_rate {
            return Err(Error::SampleRateMismatch {
                a: self.sample_rate,
                b: other.sample_rate,
            });
        }
        if self.len() != other.len() {
            return Err(Error::shape(
                format!("{} samples", self.len()),
                format!("{} samples", other.len()),
            ));
        }
        let samples = self
            .samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Waveform { samples, sample_rate: self.sample_rate })
    }

    /// Scale every sample by `gain`.
    pub fn scaled(&self, gain: f64) -> Waveform {
        Waveform {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }
}

/// Analysis/synthesis taper identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WindowKind {
    /// Square root of the periodic Hamming window; COLA at 50% overlap.
    SqrtHamming,
    /// Square root of the periodic Hann window; COLA at 50% overlap.
    SqrtHann,
    /// All-ones window; COLA when the hop divides the frame length.
    Rect,
}

impl WindowKind {
    /// Window taps of length `n` (periodic form).
    pub fn taps(self, n: usize) -> Vec<f64> {
        let n_f = n as f64;
        (0..n)
            .map(|i| {
                let phase = 2.0 * std::f64::consts::PI * i as f64 / n_f;
                match self {
                    WindowKind::SqrtHamming => (0.54 - 0.46 * phase.cos()).sqrt(),
                    WindowKind::SqrtHann => (0.5 - 0.5 * phase.cos()).sqrt(),
                    WindowKind::Rect => 1.0,
                }
            })
            .collect()
    }
}

/// STFT framing parameters. One window is used for analysis and synthesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameParams {
    pub frame_len: usize,
    pub hop: usize,
    pub fft_size: usize,
    pub window: WindowKind,
}

impl FrameParams {
    /// Validates `hop <= frame_len <= fft_size` and that the window pair is
    /// COLA at the given hop.
    pub fn new(frame_len: usize, hop: usize, fft_size: usize, window: WindowKind) -> Result<Self> {
        if hop == 0 || frame_len == 0 {
            return Err(Error::InvalidArgument("hop and frame_len must be positive".into()));
        }
        if !(hop <= frame_len && frame_len <= fft_size) {
            return Err(Error::InvalidArgument(format!(
                "need hop <= frame_len <= fft_size, got {hop}/{frame_len}/{fft_size}"
            )));
        }
        let params = FrameParams { frame_len, hop, fft_size, window };
        if !params.is_cola() {
            return Err(Error::InvalidArgument(format!(
                "window {window:?} is not COLA at hop {hop} / frame {frame_len}"
            )));
        }
        Ok(params)
    }

    /// 32 ms frames with 16 ms shift at 8 kHz: 256/128/256, 129 bins.
    pub fn default_8khz() -> FrameParams {
        FrameParams {
            frame_len: 256,
            hop: 128,
            fft_size: 256,
            window: WindowKind::SqrtHamming,
        }
    }

    /// Number of frequency bins in the one-sided spectrum.
    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Frames produced from a signal of `len` samples, if any.
    pub fn num_frames(&self, len: usize) -> Option<usize> {
        if len < self.frame_len {
            None
        } else {
            Some((len - self.frame_len) / self.hop + 1)
        }
    }

    /// Synthesis length for `frames` frames.
    pub fn synthesis_len(&self, frames: usize) -> usize {
        if frames == 0 {
            0
        } else {
            (frames - 1) * self.hop + self.frame_len
        }
    }

    /// Numeric COLA check: the analysis-times-synthesis window summed over
    /// all hop shifts must be constant on the interior.
    fn is_cola(&self) -> bool {
        let w = self.window.taps(self.frame_len);
        let mut sums = vec![0.0; self.hop];
        for (phase, sum) in sums.iter_mut().enumerate() {
            let mut n = phase;
            while n < self.frame_len {
                *sum += w[n] * w[n];
                n += self.hop;
            }
        }
        let mean = sums.iter().sum::<f64>() / self.hop as f64;
        sums.iter().all(|s| (s - mean).abs() <= 1e-9 * mean.max(1e-30))
    }
}

/// Complex T x F spectrogram with the framing that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    /// Frame-major bins: row t, column f.
    pub bins: Array2<Complex64>,
    pub params: FrameParams,
    pub sample_rate: u32,
}

impl Spectrogram {
    pub fn num_frames(&self) -> usize {
        self.bins.nrows()
    }

    pub fn num_bins(&self) -> usize {
        self.bins.ncols()
    }

    pub fn magnitude(&self) -> Array2<f64> {
        self.bins.mapv(|c| c.norm())
    }
}

/// Real-valued ratio mask with entries in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub values: Array2<f64>,
}

impl Mask {
    /// Rejects entries outside [0, 1] or non-finite.
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::InvalidArgument(format!(
                "mask entry {v} outside [0, 1]"
            )));
        }
        Ok(Mask { values })
    }

    /// The interference-side mask `1 - m`.
    pub fn complement(&self) -> Mask {
        Mask { values: self.values.mapv(|v| 1.0 - v) }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.values.nrows(), self.values.ncols())
    }
}

/// Weights and regression half-width for the spectrum approximation loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight on the increment (delta) term.
    pub w_d: f64,
    /// Weight on the acceleration (delta-delta) term.
    pub w_c: f64,
    /// Regression half-width in frames for the delta features.
    pub delta_window: usize,
}

impl LossConfig {
    pub fn new(w_d: f64, w_c: f64, delta_window: usize) -> Result<Self> {
        if !(w_d >= 0.0 && w_c >= 0.0) {
            return Err(Error::InvalidArgument("loss weights must be nonnegative".into()));
        }
        if delta_window == 0 {
            return Err(Error::InvalidArgument("delta_window must be >= 1".into()));
        }
        Ok(LossConfig { w_d, w_c, delta_window })
    }
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { w_d: 1.0, w_c: 1.0, delta_window: 2 }
    }
}

/// Which dynamic feature `delta_features` computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeltaOrder {
    /// First-order increment (linear-regression slope).
    Increment,
    /// Second-order acceleration (delta of delta).
    Acceleration,
}

// ---------------------------------------------------------------------------
// STFT / iSTFT
// ---------------------------------------------------------------------------

/// Short-time Fourier transform. Frames are `frame_len` samples at `hop`
/// spacing, windowed and zero-padded to `fft_size`; the one-sided spectrum
/// keeps `fft_size/2 + 1` bins.
pub fn stft(wave: &Waveform, params: &FrameParams) -> Result<Spectrogram> {
    let frames = params.num_frames(wave.len()).ok_or(Error::InputTooShort {
        needed: params.frame_len,
        got: wave.len(),
    })?;
    let bins = params.bins();
    let window = params.window.taps(params.frame_len);

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(params.fft_size);
    let mut buf = vec![Complex64::new(0.0, 0.0); params.fft_size];
    let mut out = Array2::zeros((frames, bins));

    for t in 0..frames {
        let start = t * params.hop;
        for (i, b) in buf.iter_mut().enumerate() {
            let v = if i < params.frame_len {
                wave.samples[start + i] * window[i]
            } else {
                0.0
            };
            *b = Complex64::new(v, 0.0);
        }
        fft.process(&mut buf);
        for f in 0..bins {
            out[(t, f)] = buf[f];
        }
    }

    Ok(Spectrogram {
        bins: out,
        params: *params,
        sample_rate: wave.sample_rate,
    })
}

/// Inverse STFT by windowed overlap-add. The output is normalized per sample
/// by the summed analysis-times-synthesis window, which reconstructs the
/// input exactly on the interior for a COLA window pair. Output length is
/// `(T - 1) * hop + frame_len`.
pub fn istft(spec: &Spectrogram, params: &FrameParams) -> Result<Waveform> {
    if spec.params != *params {
        return Err(Error::ParamMismatch(format!(
            "spectrogram was produced with {:?}, asked to synthesize with {:?}",
            spec.params, params
        )));
    }
    if spec.num_bins() != params.bins() {
        return Err(Error::shape(
            format!("{} bins", params.bins()),
            format!("{} bins", spec.num_bins()),
        ));
    }

    let frames = spec.num_frames();
    let out_len = params.synthesis_len(frames);
    let window = params.window.taps(params.frame_len);

    let mut planner = FftPlanner::new();
    let ifft = planner.plan_fft_inverse(params.fft_size);
    let mut buf = vec![Complex64::new(0.0, 0.0); params.fft_size];

    let mut acc = vec![0.0; out_len];
    let mut norm = vec![0.0; out_len];

    for t in 0..frames {
        // Rebuild the full spectrum from the one-sided half.
        for f in 0..params.bins() {
            buf[f] = spec.bins[(t, f)];
        }
        for f in params.bins()..params.fft_size {
            buf[f] = spec.bins[(t, params.fft_size - f)].conj();
        }
        ifft.process(&mut buf);
        let scale = 1.0 / params.fft_size as f64;

        let start = t * params.hop;
        for i in 0..params.frame_len {
            acc[start + i] += buf[i].re * scale * window[i];
            norm[start + i] += window[i] * window[i];
        }
    }

    let samples = acc
        .iter()
        .zip(&norm)
        .map(|(a, n)| if *n > 1e-12 { a / n } else { 0.0 })
        .collect();

    Ok(Waveform { samples, sample_rate: spec.sample_rate })
}

// ---------------------------------------------------------------------------
// Masks and losses
// ---------------------------------------------------------------------------

fn check_same_shape(target: &Spectrogram, mixture: &Spectrogram) -> Result<()> {
    if target.bins.dim() != mixture.bins.dim() {
        return Err(Error::shape(
            format!("{:?}", mixture.bins.dim()),
            format!("{:?}", target.bins.dim()),
        ));
    }
    if target.params != mixture.params {
        return Err(Error::ParamMismatch(
            "target and mixture use different frame parameters".into(),
        ));
    }
    Ok(())
}

/// Phase-sensitive mask of the target inside the mixture:
/// `clip(|X|/|Y| * cos(theta_y - theta_x), 0, 1)`, with bins whose mixture
/// magnitude falls below [`MAGNITUDE_FLOOR`] set to zero.
pub fn phase_sensitive_mask(target: &Spectrogram, mixture: &Spectrogram) -> Result<Mask> {
    check_same_shape(target, mixture)?;
    let (t, f) = target.bins.dim();
    let mut values = Array2::zeros((t, f));
    for ((idx, x), y) in target.bins.indexed_iter().zip(mixture.bins.iter()) {
        let ay2 = y.norm_sqr();
        values[idx] = if ay2 < MAGNITUDE_FLOOR * MAGNITUDE_FLOOR {
            0.0
        } else {
            // |X| cos(theta_y - theta_x) / |Y| == Re(X * conj(Y)) / |Y|^2
            ((x * y.conj()).re / ay2).clamp(0.0, 1.0)
        };
    }
    Ok(Mask { values })
}

/// Estimated target magnitude: elementwise `mask * |Y|`.
pub fn apply_mask(mask: &Mask, mixture: &Spectrogram) -> Result<Array2<f64>> {
    if mask.values.dim() != mixture.bins.dim() {
        return Err(Error::shape(
            format!("{:?}", mixture.bins.dim()),
            format!("{:?}", mask.values.dim()),
        ));
    }
    Ok(ndarray::Zip::from(&mask.values)
        .and(&mixture.bins)
        .map_collect(|m, y| m * y.norm()))
}

/// Linear-regression dynamic features over `+-half_width` frames, with
/// replicated padding at the edges. `Acceleration` applies the regression
/// twice.
pub fn delta_features(
    m: &Array2<f64>,
    half_width: usize,
    order: DeltaOrder,
) -> Result<Array2<f64>> {
    if half_width == 0 {
        return Err(Error::InvalidArgument("half_width must be >= 1".into()));
    }
    let frames = m.nrows();
    if frames < 2 * half_width + 1 {
        return Err(Error::InputTooShort {
            needed: 2 * half_width + 1,
            got: frames,
        });
    }
    let first = delta_once(m, half_width);
    Ok(match order {
        DeltaOrder::Increment => first,
        DeltaOrder::Acceleration => delta_once(&first, half_width),
    })
}

fn delta_once(m: &Array2<f64>, half_width: usize) -> Array2<f64> {
    let (frames, bins) = m.dim();
    let denom: f64 = 2.0 * (1..=half_width).map(|k| (k * k) as f64).sum::<f64>();
    let mut out = Array2::zeros((frames, bins));
    for t in 0..frames {
        for k in 1..=half_width {
            let ahead = (t + k).min(frames - 1);
            let behind = t.saturating_sub(k);
            for f in 0..bins {
                out[(t, f)] += k as f64 * (m[(ahead, f)] - m[(behind, f)]);
            }
        }
    }
    out.mapv_inplace(|v| v / denom);
    out
}

/// Squared error between an estimated channel weight and the utterance-level
/// SNR it regresses to. Both inputs live in [0, 1].
pub fn loss_j1(q: f64, snr_u: f64) -> Result<f64> {
    for (name, v) in [("q", q), ("snr_u", snr_u)] {
        if !(0.0..=1.0).contains(&v) || !v.is_finite() {
            return Err(Error::InvalidArgument(format!("{name} = {v} outside [0, 1]")));
        }
    }
    let d = q - snr_u;
    Ok(d * d)
}

/// Magnitude plus temporal spectrum approximation loss: per-frame-normalized
/// sum of the squared static, increment, and acceleration differences between
/// the estimated magnitude and the phase-sensitive target
/// `|X| cos(theta_y - theta_x)`.
pub fn loss_j2(
    est_mag: &Array2<f64>,
    target: &Spectrogram,
    mixture: &Spectrogram,
    cfg: &LossConfig,
) -> Result<f64> {
    check_same_shape(target, mixture)?;
    if est_mag.dim() != mixture.bins.dim() {
        return Err(Error::shape(
            format!("{:?}", mixture.bins.dim()),
            format!("{:?}", est_mag.dim()),
        ));
    }

    let (frames, bins) = est_mag.dim();
    let mut reference = Array2::zeros((frames, bins));
    for (idx, x) in target.bins.indexed_iter() {
        let y = mixture.bins[idx];
        let delta_phase = y.arg() - x.arg();
        reference[idx] = x.norm() * delta_phase.cos();
    }

    let static_term = sq_frobenius_diff(est_mag, &reference);
    let mut total = static_term;
    if cfg.w_d > 0.0 || cfg.w_c > 0.0 {
        let d_est = delta_features(est_mag, cfg.delta_window, DeltaOrder::Increment)?;
        let d_ref = delta_features(&reference, cfg.delta_window, DeltaOrder::Increment)?;
        if cfg.w_d > 0.0 {
            total += cfg.w_d * sq_frobenius_diff(&d_est, &d_ref);
        }
        if cfg.w_c > 0.0 {
            let c_est = delta_once(&d_est, cfg.delta_window);
            let c_ref = delta_once(&d_ref, cfg.delta_window);
            total += cfg.w_c * sq_frobenius_diff(&c_est, &c_ref);
        }
    }
    Ok(total / frames as f64)
}

fn sq_frobenius_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// Full linear convolution via zero-padded FFTs; output length is
/// `a.len() + b.len() - 1`. Used for RIR rendering and alignment, where the
/// direct O(n*m) sum would dominate the runtime.
pub fn fft_convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let out_len = a.len() + b.len() - 1;
    let n = out_len.next_power_of_two();

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    let ifft = planner.plan_fft_inverse(n);

    let mut fa = vec![Complex64::new(0.0, 0.0); n];
    let mut fb = vec![Complex64::new(0.0, 0.0); n];
    for (dst, src) in fa.iter_mut().zip(a) {
        dst.re = *src;
    }
    for (dst, src) in fb.iter_mut().zip(b) {
        dst.re = *src;
    }
    fft.process(&mut fa);
    fft.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    ifft.process(&mut fa);
    let scale = 1.0 / n as f64;
    fa[..out_len].iter().map(|c| c.re * scale).collect()
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
