//! Mask-driven MVDR beamforming over the selected channels.
//!
//! The extraction chain works entirely in the STFT domain. Per-channel
//! target masks come in from outside (an oracle here, a separation network
//! in a deployed system). Their complements mark the interference, and the
//! product of those complements across the selected channels gates which
//! time-frequency cells feed the interference covariance estimate. A
//! target covariance is estimated the same way from the target masks, and
//! its first principal component per frequency serves as the steering
//! vector. The MVDR filter w = inv(Phi_ii) c / (c^H inv(Phi_ii) c) then
//! minimizes interference power while passing the steering direction with
//! unit gain, and an inverse STFT returns the estimated target waveform.
//!
//! One covariance and one filter are computed per utterance and frequency;
//! there is no frame-recursive updating. Soft channel weights scale each
//! selected channel's STFT before any statistics are taken, so the filter
//! algebra is unchanged and the distortionless property holds with respect
//! to the weighted array.
//!
//! Note on the steering source: taking the principal component of the
//! interference covariance itself would steer the beam at the interferer.
//! The default here follows the mask-based MVDR literature and steers from
//! the analogously estimated target covariance; the interference-sourced
//! variant remains available behind [`SteeringSource::LiteralInterference`]
//! for comparison.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dsp::{istft, stft, FrameParams, Mask, Spectrogram, Waveform};
use crate::error::{Error, Result};
use crate::room::MixtureRecord;
use crate::selection::SelectionMask;

/// Relative diagonal loading factor applied to every interference
/// covariance before inversion.
pub const DEFAULT_DIAG_LOADING: f64 = 1e-6;

/// Absolute floor inside the loading term, so even an all-zero covariance
/// becomes invertible.
const LOADING_ABS_EPS: f64 = 1e-10;

// ---------------------------------------------------------------------------
// Types
// ---------------------------------------------------------------------------

/// Per-frequency W' x W' Hermitian covariance matrices, W' being the number
/// of selected channels.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialCovariance {
    pub matrices: Vec<DMatrix<Complex64>>,
}

impl SpatialCovariance {
    pub fn num_bins(&self) -> usize {
        self.matrices.len()
    }

    /// Channel dimension W'.
    pub fn dim(&self) -> usize {
        self.matrices.first().map(|m| m.nrows()).unwrap_or(0)
    }
}

/// Per-frequency unit-norm steering vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringVector {
    pub vectors: Vec<DVector<Complex64>>,
}

impl SteeringVector {
    pub fn num_bins(&self) -> usize {
        self.vectors.len()
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map(|v| v.len()).unwrap_or(0)
    }
}

/// Per-frequency MVDR filter coefficients w(f).
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerFilter {
    pub vectors: Vec<DVector<Complex64>>,
}

impl BeamformerFilter {
    pub fn num_bins(&self) -> usize {
        self.vectors.len()
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map(|v| v.len()).unwrap_or(0)
    }
}

/// Where the steering vector comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SteeringSource {
    /// Principal component of the target covariance (default).
    #[default]
    TargetCov,
    /// Principal component of the interference covariance, kept for
    /// comparison despite steering at the wrong source.
    LiteralInterference,
}

/// Tunables of the full extraction pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamformConfig {
    #[serde(default)]
    pub steering: SteeringSource,
    #[serde(default = "default_loading")]
    pub diag_loading: f64,
    /// Channel whose phase anchors the steering vectors (see
    /// [`beamform_pipeline`]). `None`, or a channel outside the selection,
    /// falls back to the selected channel with the most steering energy.
    #[serde(default)]
    pub reference_channel: Option<usize>,
    #[serde(default = "FrameParams::default_8khz")]
    pub frame: FrameParams,
}

fn default_loading() -> f64 {
    DEFAULT_DIAG_LOADING
}

impl Default for BeamformConfig {
    fn default() -> Self {
        BeamformConfig {
            steering: SteeringSource::default(),
            diag_loading: DEFAULT_DIAG_LOADING,
            reference_channel: None,
            frame: FrameParams::default_8khz(),
        }
    }
}

// ---------------------------------------------------------------------------
// Mask combination and covariance estimation
// ---------------------------------------------------------------------------

/// Elementwise product of per-channel masks. With interference masks as
/// input this realizes the conservative gating rule: a cell counts as
/// interference only if every channel agrees.
pub fn combine_masks(masks: &[Mask]) -> Result<Mask> {
    let first = masks
        .first()
        .ok_or_else(|| Error::InvalidArgument("no masks to combine".into()))?;
    let mut values = first.values.clone();
    for m in &masks[1..] {
        if m.shape() != first.shape() {
            return Err(Error::shape(
                format!("{:?}", first.shape()),
                format!("{:?}", m.shape()),
            ));
        }
        values *= &m.values;
    }
    Mask::new(values)
}

/// Mask-weighted spatial covariance: Phi(f) = sum_t m(t,f) Y Y^H / sum_t
/// m(t,f), Hermitian-symmetrized. Fails with a degenerate-frequency error
/// when some bin has zero mask mass; see
/// [`estimate_spatial_covariance_lenient`] for the fallback behavior the
/// pipeline uses.
pub fn estimate_spatial_covariance(
    specs: &[Spectrogram],
    combined_mask: &Mask,
) -> Result<SpatialCovariance> {
    covariance_impl(specs, combined_mask, true)
}

/// Like [`estimate_spatial_covariance`], but bins with zero mask mass get a
/// zero matrix instead of an error. Diagonal loading later turns those into
/// small identities, so the MVDR filter degenerates gracefully there.
pub fn estimate_spatial_covariance_lenient(
    specs: &[Spectrogram],
    combined_mask: &Mask,
) -> Result<SpatialCovariance> {
    covariance_impl(specs, combined_mask, false)
}

fn covariance_impl(
    specs: &[Spectrogram],
    combined_mask: &Mask,
    strict: bool,
) -> Result<SpatialCovariance> {
    let first = specs
        .first()
        .ok_or_else(|| Error::InvalidArgument("no spectrograms for covariance".into()))?;
    let (frames, bins) = first.bins.dim();
    for s in specs {
        if s.bins.dim() != (frames, bins) {
            return Err(Error::shape(
                format!("{frames} x {bins} spectrograms"),
                format!("{:?}", s.bins.dim()),
            ));
        }
    }
    if combined_mask.values.dim() != (frames, bins) {
        return Err(Error::shape(
            format!("{frames} x {bins} mask"),
            format!("{:?}", combined_mask.values.dim()),
        ));
    }
    let w = specs.len();
    let mut matrices = Vec::with_capacity(bins);
    let mut y = DVector::<Complex64>::zeros(w);
    for f in 0..bins {
        let mut acc = DMatrix::<Complex64>::zeros(w, w);
        let mut mass = 0.0;
        for t in 0..frames {
            let m = combined_mask.values[(t, f)];
            if m == 0.0 {
                continue;
            }
            for (j, s) in specs.iter().enumerate() {
                y[j] = s.bins[(t, f)];
            }
            mass += m;
            // acc += m * y y^H, lower triangle plus diagonal.
            for col in 0..w {
                let yc = y[col].conj() * m;
                for row in col..w {
                    acc[(row, col)] += y[row] * yc;
                }
            }
        }
        if mass == 0.0 {
            if strict {
                return Err(Error::DegenerateFrequency { bin: f });
            }
            matrices.push(DMatrix::zeros(w, w));
            continue;
        }
        // Mirror the lower triangle; this is the Hermitian symmetrization.
        let inv_mass = Complex64::new(1.0 / mass, 0.0);
        for col in 0..w {
            acc[(col, col)] = Complex64::new(acc[(col, col)].re / mass, 0.0);
            for row in (col + 1)..w {
                acc[(row, col)] *= inv_mass;
                acc[(col, row)] = acc[(row, col)].conj();
            }
        }
        matrices.push(acc);
    }
    Ok(SpatialCovariance { matrices })
}

// ---------------------------------------------------------------------------
// Principal component and MVDR filter
// ---------------------------------------------------------------------------

/// Unit-norm eigenvector of the largest eigenvalue of a Hermitian matrix,
/// with the phase fixed so the largest-magnitude entry is real positive.
pub fn principal_component(cov: &DMatrix<Complex64>) -> Result<DVector<Complex64>> {
    if !cov.is_square() || cov.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "principal component needs a nonempty square matrix, got {}x{}",
            cov.nrows(),
            cov.ncols()
        )));
    }
    let scale = cov.iter().map(|c| c.norm()).fold(0.0f64, f64::max);
    let asymmetry = (0..cov.nrows())
        .flat_map(|r| (0..cov.ncols()).map(move |c| (r, c)))
        .map(|(r, c)| (cov[(r, c)] - cov[(c, r)].conj()).norm())
        .fold(0.0f64, f64::max);
    if asymmetry > 1e-8 * scale.max(1e-30) {
        return Err(Error::NotHermitian { asymmetry });
    }
    // Symmetrize exactly before the eigensolve; the input may carry
    // round-off asymmetry within the tolerance.
    let herm = (cov + cov.adjoint()) * Complex64::new(0.5, 0.0);
    let eig = herm.symmetric_eigen();
    let mut best = 0;
    for (i, &ev) in eig.eigenvalues.iter().enumerate() {
        if ev > eig.eigenvalues[best] {
            best = i;
        }
    }
    let mut v: DVector<Complex64> = eig.eigenvectors.column(best).into_owned();
    let norm = v.norm();
    if norm == 0.0 {
        return Err(Error::InvalidArgument(
            "eigenvector collapsed to zero".into(),
        ));
    }
    v /= Complex64::new(norm, 0.0);
    // Phase convention: rotate so the largest entry is real positive.
    let mut anchor = 0;
    for i in 1..v.len() {
        if v[i].norm() > v[anchor].norm() {
            anchor = i;
        }
    }
    let a = v[anchor];
    if a.norm() > 0.0 {
        v *= a.conj() / a.norm();
    }
    Ok(v)
}

/// Steering vectors as the per-frequency principal components of a
/// covariance estimate.
pub fn steering_from_covariance(cov: &SpatialCovariance) -> Result<SteeringVector> {
    let vectors = cov
        .matrices
        .iter()
        .map(principal_component)
        .collect::<Result<Vec<_>>>()?;
    Ok(SteeringVector { vectors })
}

/// Subset-local slot of the phase-reference channel: the requested global
/// channel when it is part of the selection, otherwise the selected channel
/// carrying the most steering energy across the band.
fn reference_slot(steering: &SteeringVector, support: &[usize], requested: Option<usize>) -> usize {
    if let Some(channel) = requested {
        if let Some(slot) = support.iter().position(|&j| j == channel) {
            return slot;
        }
    }
    let dim = steering.dim();
    let mut energy = vec![0.0f64; dim];
    for v in &steering.vectors {
        for (slot, x) in v.iter().enumerate() {
            energy[slot] += x.norm_sqr();
        }
    }
    let mut best = 0;
    for slot in 1..dim {
        if energy[slot] > energy[best] {
            best = slot;
        }
    }
    best
}

/// Rotate each bin's steering vector so the entry of the reference slot is
/// real positive. An eigenvector is only defined up to a unit phase; the
/// per-bin convention of [`principal_component`] anchors to whichever entry
/// is largest, and that anchor can hop between channels from one bin to the
/// next. The MVDR output inherits the conjugate of the steering phase, so a
/// hopping anchor scrambles the phase across frequency and smears the
/// resynthesized waveform. A fixed reference keeps the output coherent.
/// Bins where the reference entry vanishes keep the per-bin convention.
fn rephase_to_reference(steering: &mut SteeringVector, slot: usize) {
    for v in &mut steering.vectors {
        let entry = v[slot];
        let norm = entry.norm();
        if norm > 1e-12 {
            let rotation = entry.conj() / norm;
            for x in v.iter_mut() {
                *x *= rotation;
            }
        }
    }
}

/// MVDR filter w = inv(Phi) c / (c^H inv(Phi) c) per frequency, with the
/// default diagonal loading.
pub fn mvdr_filter(
    phi_ii: &SpatialCovariance,
    steering: &SteeringVector,
) -> Result<BeamformerFilter> {
    mvdr_filter_with_loading(phi_ii, steering, DEFAULT_DIAG_LOADING)
}

/// MVDR filter with explicit relative diagonal loading `delta`. Every bin
/// gets Phi += delta * (trace(Phi)/W' + eps) * I before inversion, which
/// keeps near-silent bins solvable without disturbing well-conditioned
/// ones.
pub fn mvdr_filter_with_loading(
    phi_ii: &SpatialCovariance,
    steering: &SteeringVector,
    delta: f64,
) -> Result<BeamformerFilter> {
    if !delta.is_finite() || delta < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "diagonal loading must be finite and >= 0, got {delta}"
        )));
    }
    if phi_ii.num_bins() != steering.num_bins() || phi_ii.dim() != steering.dim() {
        return Err(Error::shape(
            format!("{} bins of dim {}", phi_ii.num_bins(), phi_ii.dim()),
            format!("{} bins of dim {}", steering.num_bins(), steering.dim()),
        ));
    }
    let w = phi_ii.dim();
    let mut vectors = Vec::with_capacity(phi_ii.num_bins());
    for (bin, (phi, c)) in phi_ii.matrices.iter().zip(&steering.vectors).enumerate() {
        let trace: f64 = (0..w).map(|i| phi[(i, i)].re).sum();
        let load = delta * (trace / w as f64 + LOADING_ABS_EPS);
        let mut loaded = phi.clone();
        for i in 0..w {
            loaded[(i, i)] += Complex64::new(load, 0.0);
        }
        let solved = loaded
            .lu()
            .solve(c)
            .ok_or(Error::SingularCovariance { bin })?;
        // Denominator c^H inv(Phi) c; real positive for definite Phi.
        let denom: Complex64 = c.dotc(&solved);
        if !denom.norm().is_finite() || denom.norm() < 1e-300 {
            return Err(Error::SingularCovariance { bin });
        }
        vectors.push(solved / denom);
    }
    Ok(BeamformerFilter { vectors })
}

/// Apply the filter: X(t,f) = w(f)^H Y(t,f) across the stacked channels.
pub fn apply_beamformer(
    filter: &BeamformerFilter,
    specs: &[Spectrogram],
) -> Result<Spectrogram> {
    let first = specs
        .first()
        .ok_or_else(|| Error::InvalidArgument("no spectrograms to beamform".into()))?;
    let (frames, bins) = first.bins.dim();
    if filter.dim() != specs.len() || filter.num_bins() != bins {
        return Err(Error::shape(
            format!("filter over {} channels x {bins} bins", specs.len()),
            format!("{} channels x {} bins", filter.dim(), filter.num_bins()),
        ));
    }
    for s in specs {
        if s.bins.dim() != (frames, bins) {
            return Err(Error::shape(
                format!("{frames} x {bins} spectrograms"),
                format!("{:?}", s.bins.dim()),
            ));
        }
    }
    let mut out = first.clone();
    for f in 0..bins {
        let wf = &filter.vectors[f];
        for t in 0..frames {
            let mut acc = Complex64::new(0.0, 0.0);
            for (j, s) in specs.iter().enumerate() {
                acc += wf[j].conj() * s.bins[(t, f)];
            }
            out.bins[(t, f)] = acc;
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Full pipeline
// ---------------------------------------------------------------------------

/// Everything one pipeline run produced, for inspection dumps. The
/// single-channel fallback computes no spatial statistics, so only the
/// estimate is present there.
#[derive(Debug, Clone)]
pub struct PipelineArtifacts {
    pub estimate: Waveform,
    pub filter: Option<BeamformerFilter>,
    pub interference_covariance: Option<SpatialCovariance>,
    pub target_covariance: Option<SpatialCovariance>,
}

/// Run mask-driven MVDR extraction on a rendered mixture.
///
/// `selection` gates and weights the channels, `masks` holds one TARGET
/// mask per channel of the record (not just the selected ones). With a
/// single selected channel the beamformer has nothing spatial to work
/// with, so the output falls back to the masked reconstruction of that
/// channel. The per-bin steering vectors are phase-anchored to one
/// reference channel (`config.reference_channel`, typically the channel
/// ranked cleanest by the weight estimator) so the beamformed waveform
/// stays phase-coherent across the band.
pub fn beamform_pipeline(
    record: &MixtureRecord,
    selection: &SelectionMask,
    masks: &[Mask],
    config: &BeamformConfig,
) -> Result<Waveform> {
    beamform_pipeline_artifacts(record, selection, masks, config).map(|a| a.estimate)
}

/// [`beamform_pipeline`] keeping the filter and both covariance estimates.
pub fn beamform_pipeline_artifacts(
    record: &MixtureRecord,
    selection: &SelectionMask,
    masks: &[Mask],
    config: &BeamformConfig,
) -> Result<PipelineArtifacts> {
    let w = record.num_channels();
    if selection.len() != w || masks.len() != w {
        return Err(Error::shape(
            format!("selection and masks over {w} channels"),
            format!("{} and {}", selection.len(), masks.len()),
        ));
    }
    let support = selection.support();
    if support.is_empty() {
        return Err(Error::NoUsableChannel("empty selection support".into()));
    }

    let mut specs = Vec::with_capacity(support.len());
    for &j in &support {
        let mut spec = stft(&record.mixture[j], &config.frame)?;
        let p = selection.p[j];
        if p != 1.0 {
            spec.bins.mapv_inplace(|c| c * p);
        }
        let (frames, bins) = spec.bins.dim();
        if masks[j].shape() != (frames, bins) {
            return Err(Error::shape(
                format!("{frames} x {bins} mask for channel {j}"),
                format!("{:?}", masks[j].shape()),
            ));
        }
        specs.push(spec);
    }

    if let [j] = support[..] {
        let mut spec = specs.pop().expect("one spectrogram was just built");
        spec.bins = &spec.bins * &masks[j].values.mapv(|m| Complex64::new(m, 0.0));
        return Ok(PipelineArtifacts {
            estimate: istft(&spec, &config.frame)?,
            filter: None,
            interference_covariance: None,
            target_covariance: None,
        });
    }

    let target_masks: Vec<Mask> = support.iter().map(|&j| masks[j].clone()).collect();
    let interf_masks: Vec<Mask> = target_masks.iter().map(Mask::complement).collect();
    let combined_ii = combine_masks(&interf_masks)?;
    let combined_aa = combine_masks(&target_masks)?;
    let phi_ii = estimate_spatial_covariance_lenient(&specs, &combined_ii)?;
    let phi_aa = estimate_spatial_covariance_lenient(&specs, &combined_aa)?;
    let mut steering = match config.steering {
        SteeringSource::TargetCov => steering_from_covariance(&phi_aa)?,
        SteeringSource::LiteralInterference => steering_from_covariance(&phi_ii)?,
    };
    let slot = reference_slot(&steering, &support, config.reference_channel);
    rephase_to_reference(&mut steering, slot);
    let filter = mvdr_filter_with_loading(&phi_ii, &steering, config.diag_loading)?;
    let beamformed = apply_beamformer(&filter, &specs)?;
    Ok(PipelineArtifacts {
        estimate: istft(&beamformed, &config.frame)?,
        filter: Some(filter),
        interference_covariance: Some(phi_ii),
        target_covariance: Some(phi_aa),
    })
}

/// Oracle target masks: the phase-sensitive mask of each channel's clean
/// target image against its mixture. The usual stand-in for a separation
/// network when ground truth is available.
pub fn oracle_target_masks(record: &MixtureRecord, frame: &FrameParams) -> Result<Vec<Mask>> {
    let mut masks = Vec::with_capacity(record.num_channels());
    for j in 0..record.num_channels() {
        let target = stft(&record.target_image[j], frame)?;
        let mixture = stft(&record.mixture[j], frame)?;
        masks.push(crate::dsp::phase_sensitive_mask(&target, &mixture)?);
    }
    Ok(masks)
}
