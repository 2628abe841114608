//! Per-channel quality weights for the target speaker.
//!
//! Every microphone in an ad-hoc array hears a different balance of target
//! and interference, so downstream selection needs a scalar score per
//! channel. The score used throughout this crate is the utterance-level SNR:
//! the L1 mass of the target image divided by the combined L1 mass of both
//! images. It is a plain magnitude ratio, not an energy ratio and not in dB,
//! which keeps it inside [0, 1] where the selection rules expect it.
//!
//! A learned estimator would predict this score from the mixture alone.
//! Training such a network is out of scope here, so the module exposes a
//! small [`WeightEstimator`] interface with three stand-ins: an oracle that
//! computes the score from the ground-truth images, a noise-corrupted oracle
//! for robustness experiments, and an injector that replays weights loaded
//! from JSON (the hook for plugging in an external model later).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dsp::Waveform;
use crate::error::{Error, Result};
use crate::room::MixtureRecord;

// ---------------------------------------------------------------------------
// Types
// ---------------------------------------------------------------------------

/// Per-channel quality scores `q`, one entry per microphone, each in [0, 1].
///
/// Serializes as a bare JSON array. Use [`ChannelWeights::from_json_str`] to
/// also accept the map form keyed by channel index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChannelWeights {
    pub q: Vec<f64>,
}

impl ChannelWeights {
    /// Wrap a weight vector, rejecting entries outside [0, 1] or non-finite.
    pub fn new(q: Vec<f64>) -> Result<Self> {
        for (j, &w) in q.iter().enumerate() {
            if !w.is_finite() || !(0.0..=1.0).contains(&w) {
                return Err(Error::InvalidArgument(format!(
                    "channel weight q[{j}] = {w} is outside [0, 1]"
                )));
            }
        }
        Ok(ChannelWeights { q })
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    /// Index of the largest weight; ties go to the lowest index.
    pub fn argmax(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (j, &w) in self.q.iter().enumerate() {
            if best.map_or(true, |(_, b)| w > b) {
                best = Some((j, w));
            }
        }
        best.map(|(j, _)| j)
    }

    /// Parse weights from JSON. Two shapes are accepted: a plain array
    /// `[0.9, 0.5, 0.2]`, or an object keyed by channel index
    /// `{"0": 0.9, "2": 0.2, "1": 0.5}`. The object form must cover every
    /// index from 0 to W-1 exactly once.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        match value {
            serde_json::Value::Array(items) => {
                let mut q = Vec::with_capacity(items.len());
                for (j, item) in items.into_iter().enumerate() {
                    q.push(item.as_f64().ok_or_else(|| {
                        Error::Format(format!("weight at position {j} is not a number"))
                    })?);
                }
                ChannelWeights::new(q)
            }
            serde_json::Value::Object(map) => {
                let mut entries = Vec::with_capacity(map.len());
                for (key, item) in map {
                    let j: usize = key.parse().map_err(|_| {
                        Error::Format(format!("weight key {key:?} is not a channel index"))
                    })?;
                    let w = item.as_f64().ok_or_else(|| {
                        Error::Format(format!("weight for channel {j} is not a number"))
                    })?;
                    entries.push((j, w));
                }
                entries.sort_by_key(|&(j, _)| j);
                let mut q = Vec::with_capacity(entries.len());
                for (pos, (j, w)) in entries.into_iter().enumerate() {
                    if j != pos {
                        return Err(Error::Format(format!(
                            "weight map must cover channels 0..{} densely, \
                             found index {j} at position {pos}",
                            q.capacity()
                        )));
                    }
                    q.push(w);
                }
                ChannelWeights::new(q)
            }
            other => Err(Error::Format(format!(
                "expected a JSON array or object of weights, got {other}"
            ))),
        }
    }

    /// Serialize as a JSON array.
    pub fn to_json_string(&self) -> String {
        serde_json::to_string(&self.q).expect("serializing a float vector cannot fail")
    }
}

/// Which rendered image pair the oracle scores.
///
/// The target-speech definition behind the score is the direct path only, so
/// that is the default; the reverberant mode scores the full wet images
/// instead, counting early reflections and tail as useful signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageMode {
    #[default]
    DirectOnly,
    Reverberant,
}

// ---------------------------------------------------------------------------
// Utterance-level SNR
// ---------------------------------------------------------------------------

/// Utterance-level SNR of a target image `x_a` against an interference image
/// `x_i`, as the L1 ratio sum|x_a| / (sum|x_a| + sum|x_i|).
///
/// Always lies in [0, 1]: 1 when the interference is silent, 0 when the
/// target is, 1/2 when both carry equal magnitude. Fails when both signals
/// are identically zero, since the ratio is then undefined.
pub fn utterance_level_snr(x_a: &Waveform, x_i: &Waveform) -> Result<f64> {
    if x_a.sample_rate != x_i.sample_rate {
        return Err(Error::SampleRateMismatch {
            a: x_a.sample_rate,
            b: x_i.sample_rate,
        });
    }
    if x_a.len() != x_i.len() {
        return Err(Error::shape(
            format!("images of equal length, target has {}", x_a.len()),
            format!("interference has {}", x_i.len()),
        ));
    }
    let a = x_a.l1_norm();
    let i = x_i.l1_norm();
    if a + i == 0.0 {
        return Err(Error::ZeroEnergy(
            "utterance-level SNR is undefined when both images are silent".into(),
        ));
    }
    Ok(a / (a + i))
}

// ---------------------------------------------------------------------------
// Oracle estimators
// ---------------------------------------------------------------------------

/// Score every channel of a mixture from its ground-truth images.
///
/// `q_j` is [`utterance_level_snr`] applied to channel j of the image pair
/// selected by `mode`.
pub fn oracle_weights(record: &MixtureRecord, mode: ImageMode) -> Result<ChannelWeights> {
    let (targets, interfs) = match mode {
        ImageMode::DirectOnly => (&record.target_direct, &record.interference_direct),
        ImageMode::Reverberant => (&record.target_image, &record.interference_image),
    };
    let channels = record.num_channels();
    if channels == 0 || targets.len() != channels || interfs.len() != channels {
        return Err(Error::shape(
            format!("{channels} target and interference images"),
            format!("{} and {}", targets.len(), interfs.len()),
        ));
    }
    let mut q = Vec::with_capacity(channels);
    for j in 0..channels {
        q.push(utterance_level_snr(&targets[j], &interfs[j])?);
    }
    Ok(ChannelWeights { q })
}

/// Oracle weights corrupted by zero-mean Gaussian noise of std `sigma`,
/// clipped back into [0, 1]. Deterministic in `seed`; `sigma = 0` reproduces
/// [`oracle_weights`] exactly. Uses the default direct-path image mode.
pub fn noisy_oracle_weights(
    record: &MixtureRecord,
    sigma: f64,
    seed: u64,
) -> Result<ChannelWeights> {
    let clean = oracle_weights(record, ImageMode::default())?;
    add_clipped_noise(clean, sigma, seed)
}

fn add_clipped_noise(mut weights: ChannelWeights, sigma: f64, seed: u64) -> Result<ChannelWeights> {
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "noise std must be finite and >= 0, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(weights);
    }
    let normal = Normal::new(0.0, sigma)
        .map_err(|e| Error::InvalidArgument(format!("bad noise distribution: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for w in &mut weights.q {
        *w = (*w + normal.sample(&mut rng)).clamp(0.0, 1.0);
    }
    Ok(weights)
}

// ---------------------------------------------------------------------------
// Pluggable estimator interface
// ---------------------------------------------------------------------------

/// A source of per-channel weights for a mixture.
///
/// Implementations must return one weight per channel, each in [0, 1]. The
/// trait is the seam where a learned model would slot in; the provided
/// implementations are the ground-truth oracle, its noisy variant, and a
/// replay of externally supplied weights.
pub trait WeightEstimator {
    fn estimate(&self, record: &MixtureRecord) -> Result<ChannelWeights>;
}

/// Ground-truth estimator computing weights from the rendered images.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleEstimator {
    pub mode: ImageMode,
}

impl WeightEstimator for OracleEstimator {
    fn estimate(&self, record: &MixtureRecord) -> Result<ChannelWeights> {
        oracle_weights(record, self.mode)
    }
}

/// Oracle estimator with additive clipped Gaussian error, for studying how
/// selection degrades as the weight estimates get worse.
#[derive(Debug, Clone, Copy)]
pub struct NoisyOracleEstimator {
    pub mode: ImageMode,
    pub sigma: f64,
    pub seed: u64,
}

impl WeightEstimator for NoisyOracleEstimator {
    fn estimate(&self, record: &MixtureRecord) -> Result<ChannelWeights> {
        let clean = oracle_weights(record, self.mode)?;
        add_clipped_noise(clean, self.sigma, self.seed)
    }
}

/// Replays a fixed weight vector, typically parsed from a JSON file produced
/// by an external model. Checks that the vector length matches the record.
#[derive(Debug, Clone)]
pub struct InjectedWeights {
    pub weights: ChannelWeights,
}

impl WeightEstimator for InjectedWeights {
    fn estimate(&self, record: &MixtureRecord) -> Result<ChannelWeights> {
        if self.weights.len() != record.num_channels() {
            return Err(Error::shape(
                format!("{} injected weights", record.num_channels()),
                format!("{}", self.weights.len()),
            ));
        }
        Ok(self.weights.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::room::{RoomSpec, Scenario};

    fn wave(samples: &[f64]) -> Waveform {
        Waveform::new(samples.to_vec(), 8000).unwrap()
    }

    /// A geometrically plausible scenario shell for hand-built records. The
    /// waveforms in those records are constructed directly, so only the
    /// channel count needs to be consistent.
    fn dummy_scenario(num_mics: usize) -> Scenario {
        Scenario {
            room: RoomSpec::new(8.0, 6.0, 2.5, 0.3).unwrap(),
            target_pos: [2.0, 3.0, 1.2],
            interf_pos: [6.0, 3.0, 1.2],
            mic_pos: vec![[4.0, 3.0, 1.0]; num_mics],
            mix_snr_db: 0.0,
            seed: 0,
        }
    }

    /// Record whose direct images follow 1/(4 pi r) free-field amplitudes
    /// for the given per-channel distances, with both dry patterns sharing
    /// the same L1 mass so the expected weight is r_i / (r_i + r_t).
    fn anechoic_record(r_target: &[f64], r_interf: &[f64]) -> MixtureRecord {
        assert_eq!(r_target.len(), r_interf.len());
        let pattern_t = [0.6, -0.6, 0.3, 0.5]; // L1 = 2.0
        let pattern_i = [0.5, 0.5, -0.5, 0.5]; // L1 = 2.0
        let gain = |r: f64| 1.0 / (4.0 * std::f64::consts::PI * r);
        let scale = |p: &[f64], g: f64| wave(&p.iter().map(|s| s * g).collect::<Vec<_>>());

        let target_direct: Vec<Waveform> =
            r_target.iter().map(|&r| scale(&pattern_t, gain(r))).collect();
        let interference_direct: Vec<Waveform> =
            r_interf.iter().map(|&r| scale(&pattern_i, gain(r))).collect();
        let mixture: Vec<Waveform> = target_direct
            .iter()
            .zip(&interference_direct)
            .map(|(t, i)| {
                let sum: Vec<f64> = t.samples.iter().zip(&i.samples).map(|(a, b)| a + b).collect();
                wave(&sum)
            })
            .collect();

        MixtureRecord {
            scenario: dummy_scenario(r_target.len()),
            mixture,
            target_image: target_direct.clone(),
            interference_image: interference_direct.clone(),
            target_direct,
            interference_direct,
            target_rirs: Vec::new(),
            interf_rirs: Vec::new(),
        }
    }

    #[test]
    fn snr_is_one_when_interference_is_silent() {
        let a = wave(&[0.3, -0.2, 0.1]);
        let i = wave(&[0.0, 0.0, 0.0]);
        assert_eq!(utterance_level_snr(&a, &i).unwrap(), 1.0);
    }

    #[test]
    fn snr_is_zero_when_target_is_silent() {
        let a = wave(&[0.0, 0.0, 0.0]);
        let i = wave(&[0.5, 0.5, -0.5]);
        assert_eq!(utterance_level_snr(&a, &i).unwrap(), 0.0);
    }

    #[test]
    fn snr_matches_hand_arithmetic() {
        // L1 masses 3 and 1, so the ratio is 3 / (3 + 1).
        let a = wave(&[1.0, -1.0, 0.5, 0.5]);
        let i = wave(&[0.25, -0.25, 0.25, 0.25]);
        assert!((utterance_level_snr(&a, &i).unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn snr_rejects_two_silent_signals() {
        let z = wave(&[0.0, 0.0]);
        assert!(matches!(
            utterance_level_snr(&z, &z),
            Err(Error::ZeroEnergy(_))
        ));
    }

    #[test]
    fn snr_rejects_length_mismatch() {
        let a = wave(&[1.0, 2.0]);
        let i = wave(&[1.0]);
        assert!(utterance_level_snr(&a, &i).is_err());
    }

    #[test]
    fn snr_strictly_decreases_when_interference_grows() {
        let a = wave(&[0.4, -0.3, 0.2]);
        let i = wave(&[0.1, 0.2, -0.1]);
        let louder = wave(&[0.2, 0.4, -0.2]);
        let base = utterance_level_snr(&a, &i).unwrap();
        let worse = utterance_level_snr(&a, &louder).unwrap();
        assert!(worse < base);
    }

    #[test]
    fn snr_is_invariant_to_common_scaling() {
        let a = wave(&[0.4, -0.3, 0.2]);
        let i = wave(&[0.1, 0.2, -0.1]);
        let a3 = wave(&[1.2, -0.9, 0.6]);
        let i3 = wave(&[0.3, 0.6, -0.3]);
        let lhs = utterance_level_snr(&a, &i).unwrap();
        let rhs = utterance_level_snr(&a3, &i3).unwrap();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn snr_of_swapped_arguments_sums_to_one() {
        let a = wave(&[0.7, -0.1, 0.3]);
        let i = wave(&[0.2, 0.5, -0.4]);
        let fwd = utterance_level_snr(&a, &i).unwrap();
        let rev = utterance_level_snr(&i, &a).unwrap();
        assert!((fwd + rev - 1.0).abs() < 1e-12);
    }

    #[test]
    fn oracle_matches_inverse_distance_arithmetic() {
        // Three mics at target distances [1, 2, 4] and interferer distances
        // [4, 2, 1]. With equal dry L1 masses the weight reduces to
        // r_i / (r_i + r_t), so q = [0.8, 0.5, 0.2].
        let record = anechoic_record(&[1.0, 2.0, 4.0], &[4.0, 2.0, 1.0]);
        let q = oracle_weights(&record, ImageMode::DirectOnly).unwrap();
        let expected = [0.8, 0.5, 0.2];
        for (got, want) in q.q.iter().zip(expected) {
            assert!((got - want).abs() < 1e-12, "got {got}, want {want}");
        }
        // The winner is the mic nearest the target and farthest from the
        // interferer.
        assert_eq!(q.argmax(), Some(0));
    }

    #[test]
    fn oracle_gives_unity_weight_to_channel_with_muted_interference() {
        let mut record = anechoic_record(&[1.0, 2.0, 4.0], &[4.0, 2.0, 1.0]);
        record.interference_direct[1] = wave(&[0.0, 0.0, 0.0, 0.0]);
        let q = oracle_weights(&record, ImageMode::DirectOnly).unwrap();
        assert_eq!(q.q[1], 1.0);
    }

    #[test]
    fn oracle_handles_sixteen_channels() {
        let r_t: Vec<f64> = (0..16).map(|j| 1.0 + 0.3 * j as f64).collect();
        let r_i: Vec<f64> = (0..16).map(|j| 5.0 - 0.25 * j as f64).collect();
        let record = anechoic_record(&r_t, &r_i);
        let q = oracle_weights(&record, ImageMode::DirectOnly).unwrap();
        assert_eq!(q.len(), 16);
        assert!(q.q.iter().all(|&w| (0.0..=1.0).contains(&w)));
    }

    #[test]
    fn reverberant_mode_scores_the_wet_images() {
        let mut record = anechoic_record(&[1.0, 2.0], &[2.0, 1.0]);
        // Give the wet target image extra mass on channel 0 only.
        let mut wet = record.target_direct[0].samples.clone();
        for s in &mut wet {
            *s *= 2.0;
        }
        record.target_image[0] = wave(&wet);
        let direct = oracle_weights(&record, ImageMode::DirectOnly).unwrap();
        let reverb = oracle_weights(&record, ImageMode::Reverberant).unwrap();
        assert!(reverb.q[0] > direct.q[0]);
        assert!((reverb.q[1] - direct.q[1]).abs() < 1e-15);
        assert_eq!(ImageMode::default(), ImageMode::DirectOnly);
    }

    #[test]
    fn oracle_rejects_record_without_images() {
        let mut record = anechoic_record(&[1.0, 2.0], &[2.0, 1.0]);
        record.target_direct.clear();
        assert!(oracle_weights(&record, ImageMode::DirectOnly).is_err());
    }

    #[test]
    fn zero_sigma_noise_reproduces_the_oracle() {
        let record = anechoic_record(&[1.0, 2.0, 4.0], &[4.0, 2.0, 1.0]);
        let clean = oracle_weights(&record, ImageMode::DirectOnly).unwrap();
        let noisy = noisy_oracle_weights(&record, 0.0, 99).unwrap();
        assert_eq!(clean, noisy);
    }

    #[test]
    fn noisy_oracle_is_deterministic_per_seed_and_stays_clipped() {
        let record = anechoic_record(&[1.0, 2.0, 4.0], &[4.0, 2.0, 1.0]);
        let a = noisy_oracle_weights(&record, 5.0, 7).unwrap();
        let b = noisy_oracle_weights(&record, 5.0, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.q.iter().all(|&w| (0.0..=1.0).contains(&w)));
        let c = noisy_oracle_weights(&record, 0.3, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn noisy_oracle_rejects_negative_sigma() {
        let record = anechoic_record(&[1.0, 2.0], &[2.0, 1.0]);
        assert!(noisy_oracle_weights(&record, -0.1, 0).is_err());
    }

    #[test]
    fn weights_validate_their_range() {
        assert!(ChannelWeights::new(vec![0.0, 0.5, 1.0]).is_ok());
        assert!(ChannelWeights::new(vec![1.5]).is_err());
        assert!(ChannelWeights::new(vec![-0.1]).is_err());
        assert!(ChannelWeights::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn weights_parse_from_json_array() {
        let w = ChannelWeights::from_json_str("[0.9, 0.5, 0.2]").unwrap();
        assert_eq!(w.q, vec![0.9, 0.5, 0.2]);
        assert_eq!(w.to_json_string(), "[0.9,0.5,0.2]");
    }

    #[test]
    fn weights_parse_from_index_keyed_map() {
        let w = ChannelWeights::from_json_str(r#"{"2": 0.2, "0": 0.9, "1": 0.5}"#).unwrap();
        assert_eq!(w.q, vec![0.9, 0.5, 0.2]);
    }

    #[test]
    fn weights_reject_bad_json_shapes() {
        // A gap in the index coverage.
        assert!(ChannelWeights::from_json_str(r#"{"0": 0.9, "2": 0.2}"#).is_err());
        // Out-of-range value.
        assert!(ChannelWeights::from_json_str("[1.5]").is_err());
        // Not an array or object at all.
        assert!(ChannelWeights::from_json_str("0.5").is_err());
        // Non-numeric key.
        assert!(ChannelWeights::from_json_str(r#"{"left": 0.5}"#).is_err());
    }

    #[test]
    fn estimator_trait_objects_cover_all_three_sources() {
        let record = anechoic_record(&[1.0, 2.0, 4.0], &[4.0, 2.0, 1.0]);
        let oracle = OracleEstimator::default();
        let q = oracle.estimate(&record).unwrap();
        assert_eq!(q, oracle_weights(&record, ImageMode::DirectOnly).unwrap());

        let noisy = NoisyOracleEstimator {
            mode: ImageMode::DirectOnly,
            sigma: 0.2,
            seed: 3,
        };
        let qn = noisy.estimate(&record).unwrap();
        assert_eq!(qn.len(), 3);
        assert!(qn.q.iter().all(|&w| (0.0..=1.0).contains(&w)));

        let injected = InjectedWeights {
            weights: ChannelWeights::new(vec![0.1, 0.2, 0.3]).unwrap(),
        };
        assert_eq!(injected.estimate(&record).unwrap().q, vec![0.1, 0.2, 0.3]);

        let wrong_len = InjectedWeights {
            weights: ChannelWeights::new(vec![0.1]).unwrap(),
        };
        assert!(wrong_len.estimate(&record).is_err());
    }
}
