//! Randomized reverberant scenes: geometry sampling, image-source impulse
//! responses, and SNR-controlled two-source mixing.
//!
//! Rooms are rectangular boxes. Impulse responses sum mirrored point sources
//! with 1/r amplitude decay and windowed-sinc fractional delays; each image
//! kernel is truncated to start at its own integer delay, so no tap precedes
//! the direct path.
//!
//! Reverberation is controlled by distance-proportional attenuation, the
//! air-absorption form exp(-gamma d), rather than by a wall coefficient
//! derived from Eyring's diffuse-field formula. A specular lattice has no
//! scattering, so with wall-based absorption rays grazing along a long room
//! dimension bounce rarely and decay far slower than the diffuse average;
//! the Schroeder T60 of flat rooms then overshoots the request severely, and
//! no wall coefficient fixes it because the energy trickling in from distant
//! single reflections is shaped by geometry alone. Attenuation per meter of
//! travel decays every arrival direction at exactly the same rate, which
//! makes the energy decay exponential with the requested slope in any room
//! at any placement: gamma = 3 ln(10) / (c T60) gives 60 dB per T60 along
//! every path.
//!
//! Each image also radiates with a deterministic pseudo-random polarity.
//! All-positive taps pile up coherently at low frequencies and flatten the
//! measured decay; independent signs keep the summed energy close to the
//! incoherent ideal while leaving every image a coherent point source across
//! microphones.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dsp::{fft_convolve, Waveform};
use crate::error::{Error, Result};

/// Speed of sound in m/s used throughout.
pub const SOUND_SPEED: f64 = 343.0;

/// Taps kept per image after the causal cut (one-sided interpolation kernel).
const KERNEL_TAPS: usize = 17;

// ---------------------------------------------------------------------------
// Types
// ---------------------------------------------------------------------------

/// A rectangular room and its target reverberation time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    pub length: f64,
    pub width: f64,
    pub height: f64,
    /// Reverberation time in seconds, in (0, 0.8].
    pub t60: f64,
    pub sound_speed: f64,
}

impl RoomSpec {
    pub fn new(length: f64, width: f64, height: f64, t60: f64) -> Result<Self> {
        for (name, v) in [("length", length), ("width", width), ("height", height)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!("room {name} = {v} must be positive")));
            }
        }
        if !(t60 > 0.0 && t60 <= 0.8) {
            return Err(Error::InvalidArgument(format!("t60 = {t60} outside (0, 0.8]")));
        }
        Ok(RoomSpec { length, width, height, t60, sound_speed: SOUND_SPEED })
    }

    pub fn dims(&self) -> [f64; 3] {
        [self.length, self.width, self.height]
    }

    pub fn volume(&self) -> f64 {
        self.length * self.width * self.height
    }

    pub fn surface_area(&self) -> f64 {
        2.0 * (self.length * self.width
            + self.length * self.height
            + self.width * self.height)
    }

    /// Amplitude attenuation per meter of travel, exp(-gamma d), sized so
    /// energy falls 60 dB over one `t60` of propagation.
    pub fn air_absorption(&self) -> f64 {
        3.0 * std::f64::consts::LN_10 / (self.sound_speed * self.t60)
    }

    /// True when `p` lies inside the room with `margin` to every wall.
    pub fn contains(&self, p: [f64; 3], margin: f64) -> bool {
        p.iter()
            .zip(self.dims())
            .all(|(x, d)| *x >= margin && *x <= d - margin)
    }
}

/// -5..-35 dB least-squares Schroeder fit on binned tail energy, the same
/// procedure [`estimate_t60`] applies to per-sample taps.
fn schroeder_fit_t60(energy: &[f64], bin_secs: f64) -> Option<f64> {
    let mut acc = 0.0;
    let mut edc: Vec<f64> = energy
        .iter()
        .rev()
        .map(|v| {
            acc += v;
            acc
        })
        .collect();
    edc.reverse();
    let total = edc[0];
    if total <= 0.0 {
        return None;
    }
    let db: Vec<f64> = edc.iter().map(|e| 10.0 * (e / total).max(1e-30).log10()).collect();
    let start = db.iter().position(|d| *d <= -5.0)?;
    let end = db.iter().position(|d| *d <= -35.0)?;
    if end <= start + 1 {
        return Some(2.0 * bin_secs);
    }
    let n = (end - start) as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for i in start..end {
        let x = i as f64 * bin_secs;
        let y = db[i];
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    if slope >= 0.0 {
        return None;
    }
    Some(-60.0 / slope)
}

/// Per-dimension image offsets: (image coordinate minus mic coordinate,
/// wall-bounce count, lattice cell id).
fn image_axes(
    dims: [f64; 3],
    src: [f64; 3],
    mic: [f64; 3],
    max_dist: f64,
) -> [Vec<(f64, u32, i64)>; 3] {
    let mut axes: [Vec<(f64, u32, i64)>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for (axis, list) in axes.iter_mut().enumerate() {
        let dim = dims[axis];
        let n = (max_dist / (2.0 * dim)).ceil() as i64 + 1;
        for q in -n..=n {
            for p in 0..2i64 {
                let coord = (1 - 2 * p) as f64 * src[axis] + 2.0 * q as f64 * dim - mic[axis];
                let bounces = (q - p).unsigned_abs() as u32 + q.unsigned_abs() as u32;
                list.push((coord, bounces, 2 * q + p));
            }
        }
    }
    axes
}

/// Deterministic pseudo-random polarity for one image cell.
///
/// The all-positive amplitudes of the plain image method pile up coherently
/// at low frequencies and flatten the measured decay, so each mirrored source
/// radiates with a fixed hashed sign instead. The sign depends only on the
/// lattice cell, never on the microphone, so an image stays a single coherent
/// point source across an array.
fn image_sign(cells: [i64; 3]) -> f64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for c in cells {
        h ^= (c as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h = h.rotate_left(23).wrapping_mul(0x94D0_49BB_1331_11EB);
    }
    h ^= h >> 31;
    if h & (1 << 40) == 0 {
        1.0
    } else {
        -1.0
    }
}

/// One sampled acoustic scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub room: RoomSpec,
    pub target_pos: [f64; 3],
    pub interf_pos: [f64; 3],
    pub mic_pos: Vec<[f64; 3]>,
    /// Dry-domain target-to-interference ratio in dB.
    pub mix_snr_db: f64,
    pub seed: u64,
}

impl Scenario {
    pub fn num_mics(&self) -> usize {
        self.mic_pos.len()
    }

    /// Checks the geometric invariants: speakers clear of walls, microphones
    /// inside the room and clear of both speakers.
    pub fn validate(&self, cfg: &SamplerConfig) -> Result<()> {
        for (who, p) in [("target", self.target_pos), ("interferer", self.interf_pos)] {
            if !self.room.contains(p, cfg.wall_clearance) {
                return Err(Error::OutsideRoom(format!(
                    "{who} at {p:?} violates the {} m wall clearance",
                    cfg.wall_clearance
                )));
            }
        }
        for (j, m) in self.mic_pos.iter().enumerate() {
            if !self.room.contains(*m, 0.0) {
                return Err(Error::OutsideRoom(format!("mic {j} at {m:?} outside the room")));
            }
            for (who, p) in [("target", self.target_pos), ("interferer", self.interf_pos)] {
                if distance(*m, p) < cfg.mic_clearance {
                    return Err(Error::OutsideRoom(format!(
                        "mic {j} closer than {} m to the {who}",
                        cfg.mic_clearance
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Bounds for the scenario sampler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub length_range: (f64, f64),
    pub width_range: (f64, f64),
    pub height_range: (f64, f64),
    pub t60_mean: f64,
    pub t60_std: f64,
    pub t60_range: (f64, f64),
    pub snr_range_db: (f64, f64),
    /// Minimum speaker distance to every wall, meters.
    pub wall_clearance: f64,
    /// Minimum speaker-to-microphone distance, meters.
    pub mic_clearance: f64,
    /// Margin keeping microphones strictly inside the room, meters.
    pub mic_wall_margin: f64,
    pub max_retries: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            length_range: (5.0, 15.0),
            width_range: (5.0, 25.0),
            height_range: (1.0, 2.5),
            t60_mean: 0.25,
            t60_std: 0.1,
            t60_range: (0.05, 0.8),
            snr_range_db: (0.0, 5.0),
            wall_clearance: 0.2,
            mic_clearance: 0.3,
            mic_wall_margin: 0.05,
            max_retries: 10_000,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("length_range", self.length_range),
            ("width_range", self.width_range),
            ("height_range", self.height_range),
            ("t60_range", self.t60_range),
            ("snr_range_db", self.snr_range_db),
        ];
        for (name, (lo, hi)) in ranges {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::InvalidArgument(format!("{name} = ({lo}, {hi}) is not ordered")));
            }
        }
        if self.t60_range.0 <= 0.0 || self.t60_range.1 > 0.8 {
            return Err(Error::InvalidArgument(format!(
                "t60_range = {:?} outside (0, 0.8]",
                self.t60_range
            )));
        }
        if self.t60_std < 0.0 || self.max_retries == 0 {
            return Err(Error::InvalidArgument("t60_std >= 0 and max_retries >= 1 required".into()));
        }
        Ok(())
    }
}

/// A room impulse response plus its isolated free-field component.
#[derive(Debug, Clone, PartialEq)]
pub struct Rir {
    pub taps: Vec<f64>,
    pub sample_rate: u32,
    /// Integer sample index where the direct path lands.
    pub direct_path_index: usize,
    /// Direct-path taps only (same indexing as `taps`); convolving with this
    /// yields the source image without any reflections.
    pub direct_taps: Vec<f64>,
}

impl Rir {
    /// A pass-through response, useful for anechoic constructions in tests.
    pub fn unit_impulse(sample_rate: u32) -> Rir {
        Rir {
            taps: vec![1.0],
            sample_rate,
            direct_path_index: 0,
            direct_taps: vec![1.0],
        }
    }
}

/// Everything rendered for one scenario: per-channel mixtures, the
/// reverberant source images composing them, and direct-path-only images.
#[derive(Debug, Clone)]
pub struct MixtureRecord {
    pub scenario: Scenario,
    pub mixture: Vec<Waveform>,
    pub target_image: Vec<Waveform>,
    pub interference_image: Vec<Waveform>,
    pub target_direct: Vec<Waveform>,
    pub interference_direct: Vec<Waveform>,
    pub target_rirs: Vec<Rir>,
    pub interf_rirs: Vec<Rir>,
}

impl MixtureRecord {
    pub fn num_channels(&self) -> usize {
        self.mixture.len()
    }

    pub fn sample_rate(&self) -> u32 {
        self.mixture.first().map(|w| w.sample_rate).unwrap_or(0)
    }
}

// ---------------------------------------------------------------------------
// Scenario sampling
// ---------------------------------------------------------------------------

/// Draw a full scenario from the configured bounds. Deterministic in the
/// seed: room dimensions uniform, T60 from a rejection-sampled truncated
/// Gaussian, speaker and microphone positions uniform under the clearance
/// constraints, mixing SNR uniform.
pub fn sample_scenario(rng_seed: u64, config: &SamplerConfig, num_mics: usize) -> Result<Scenario> {
    config.validate()?;
    if num_mics == 0 {
        return Err(Error::InvalidArgument("num_mics must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);

    let length = sample_uniform(&mut rng, config.length_range);
    let width = sample_uniform(&mut rng, config.width_range);
    let height = sample_uniform(&mut rng, config.height_range);
    let t60 = sample_truncated_gaussian(
        &mut rng,
        config.t60_mean,
        config.t60_std,
        config.t60_range,
        config.max_retries,
    )?;
    let room = RoomSpec::new(length, width, height, t60)?;

    let speaker_bounds = shrink_bounds(&room, config.wall_clearance)?;
    let target_pos = sample_point(&mut rng, speaker_bounds);
    let interf_pos = sample_point(&mut rng, speaker_bounds);

    let mic_bounds = shrink_bounds(&room, config.mic_wall_margin)?;
    let mut mic_pos = Vec::with_capacity(num_mics);
    for j in 0..num_mics {
        let mut placed = false;
        for _ in 0..config.max_retries {
            let p = sample_point(&mut rng, mic_bounds);
            if distance(p, target_pos) >= config.mic_clearance
                && distance(p, interf_pos) >= config.mic_clearance
            {
                mic_pos.push(p);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Sampling(format!(
                "mic {j}: no position clearing both speakers after {} tries",
                config.max_retries
            )));
        }
    }

    let mix_snr_db = sample_uniform(&mut rng, config.snr_range_db);

    let scenario = Scenario {
        room,
        target_pos,
        interf_pos,
        mic_pos,
        mix_snr_db,
        seed: rng_seed,
    };
    scenario.validate(config)?;
    Ok(scenario)
}

fn sample_uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

fn sample_point(rng: &mut ChaCha8Rng, bounds: [(f64, f64); 3]) -> [f64; 3] {
    [
        sample_uniform(rng, bounds[0]),
        sample_uniform(rng, bounds[1]),
        sample_uniform(rng, bounds[2]),
    ]
}

fn shrink_bounds(room: &RoomSpec, margin: f64) -> Result<[(f64, f64); 3]> {
    let dims = room.dims();
    let mut out = [(0.0, 0.0); 3];
    for (i, d) in dims.iter().enumerate() {
        if d - margin <= margin {
            return Err(Error::Sampling(format!(
                "margin {margin} m leaves no room along a {d} m dimension"
            )));
        }
        out[i] = (margin, d - margin);
    }
    Ok(out)
}

fn sample_truncated_gaussian(
    rng: &mut ChaCha8Rng,
    mean: f64,
    std: f64,
    (lo, hi): (f64, f64),
    max_retries: usize,
) -> Result<f64> {
    if std == 0.0 {
        return if (lo..=hi).contains(&mean) {
            Ok(mean)
        } else {
            Err(Error::Sampling(format!("degenerate mean {mean} outside [{lo}, {hi}]")))
        };
    }
    let normal = Normal::new(mean, std)
        .map_err(|e| Error::Sampling(format!("bad Gaussian parameters: {e}")))?;
    for _ in 0..max_retries {
        let v = normal.sample(rng);
        if (lo..=hi).contains(&v) {
            return Ok(v);
        }
    }
    Err(Error::Sampling(format!(
        "no Gaussian draw landed in [{lo}, {hi}] after {max_retries} tries"
    )))
}

fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

// ---------------------------------------------------------------------------
// Image-source impulse responses
// ---------------------------------------------------------------------------

/// Simulate the impulse response between one source and one microphone.
///
/// The response covers `ceil(1.1 * t60 * fs)` samples (extended if needed so
/// the direct path fits) and sums every mirrored source whose delay lands
/// inside it. Amplitudes follow 1/(4*pi*d) with one reflection-coefficient
/// factor per wall bounce.
pub fn simulate_rir(room: &RoomSpec, src: [f64; 3], mic: [f64; 3], fs: u32) -> Result<Rir> {
    for (who, p) in [("source", src), ("mic", mic)] {
        if !room.contains(p, 0.0) || room.dims().iter().zip(p).any(|(d, x)| x <= 0.0 || x >= *d) {
            return Err(Error::OutsideRoom(format!("{who} at {p:?} not strictly inside")));
        }
    }
    let fs_f = fs as f64;
    let meters_per_sample = room.sound_speed / fs_f;
    let direct_delay = distance(src, mic) / meters_per_sample;
    let direct_index = direct_delay.floor() as usize;

    // Decay window counted from the direct arrival, so far microphones get
    // as much usable tail as near ones.
    let base_len = (1.1 * room.t60 * fs_f).ceil() as usize;
    let rir_len = direct_index + KERNEL_TAPS + base_len;
    let max_dist = rir_len as f64 * meters_per_sample;

    // Attenuation referenced to the direct distance: the direct tap keeps a
    // pure 1/(4 pi d) free-field amplitude and reflections decay relative to
    // it, which only rescales the whole response by a constant.
    let gamma = room.air_absorption();
    let d_direct = distance(src, mic);

    let axes = image_axes(room.dims(), src, mic, max_dist);
    let mut taps = vec![0.0; rir_len];
    let max_dist_sq = max_dist * max_dist;
    for &(cx, bx, ix) in &axes[0] {
        let dx2 = cx * cx;
        if dx2 > max_dist_sq {
            continue;
        }
        for &(cy, by, iy) in &axes[1] {
            let dxy2 = dx2 + cy * cy;
            if dxy2 > max_dist_sq {
                continue;
            }
            for &(cz, bz, iz) in &axes[2] {
                let d_sq = dxy2 + cz * cz;
                if d_sq > max_dist_sq {
                    continue;
                }
                let d = d_sq.sqrt();
                let delay = d / meters_per_sample;
                if (delay.floor() as usize) >= rir_len {
                    continue;
                }
                let sign = if bx + by + bz == 0 { 1.0 } else { image_sign([ix, iy, iz]) };
                let amplitude = sign * (-gamma * (d - d_direct)).exp()
                    / (4.0 * std::f64::consts::PI * d.max(meters_per_sample));
                add_image(&mut taps, delay, amplitude);
            }
        }
    }

    let mut direct_taps = vec![0.0; (direct_index + KERNEL_TAPS).min(rir_len)];
    add_image(
        &mut direct_taps,
        direct_delay,
        1.0 / (4.0 * std::f64::consts::PI * distance(src, mic).max(meters_per_sample)),
    );

    Ok(Rir {
        taps,
        sample_rate: fs,
        direct_path_index: direct_index,
        direct_taps,
    })
}

/// cos(pi k / KERNEL_TAPS) and sin(pi k / KERNEL_TAPS) for the window.
static KERNEL_PHASES: std::sync::LazyLock<[(f64, f64); KERNEL_TAPS]> =
    std::sync::LazyLock::new(|| {
        std::array::from_fn(|k| {
            let a = std::f64::consts::PI * k as f64 / KERNEL_TAPS as f64;
            (a.cos(), a.sin())
        })
    });

/// Deposit one image at a fractional delay. The interpolation kernel is a
/// Hann-windowed sinc cut to start at floor(delay), which keeps every image
/// causal relative to its own arrival.
///
/// A response can hold millions of images, so the kernel is evaluated with
/// three trig calls per image instead of per tap: sin(pi (k - frac)) folds
/// to a sign times sin(pi frac), and the window angle splits against the
/// precomputed per-tap phases.
fn add_image(taps: &mut [f64], delay: f64, amplitude: f64) {
    let i0 = delay.floor() as usize;
    let frac = delay - i0 as f64;
    let frac_angle = std::f64::consts::PI * frac / KERNEL_TAPS as f64;
    let (cos_f, sin_f) = (frac_angle.cos(), frac_angle.sin());
    let sin_pf = (std::f64::consts::PI * frac).sin();
    for (k, &(cos_k, sin_k)) in KERNEL_PHASES.iter().enumerate() {
        let idx = i0 + k;
        if idx >= taps.len() {
            break;
        }
        let t = k as f64 - frac;
        let window = 0.5 * (1.0 + cos_k * cos_f + sin_k * sin_f);
        let sinc = if t.abs() < 1e-12 {
            1.0
        } else {
            let sign = if k % 2 == 0 { -1.0 } else { 1.0 };
            sign * sin_pf / (std::f64::consts::PI * t)
        };
        taps[idx] += amplitude * window * sinc;
    }
}

/// Backward-integrated energy decay in dB, normalized to 0 dB at the start.
pub fn schroeder_decay_db(taps: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut rev: Vec<f64> = taps
        .iter()
        .rev()
        .map(|t| {
            acc += t * t;
            acc
        })
        .collect();
    rev.reverse();
    let total = rev.first().copied().unwrap_or(0.0);
    rev.iter()
        .map(|e| {
            if total > 0.0 && *e > 0.0 {
                10.0 * (e / total).log10()
            } else {
                -300.0
            }
        })
        .collect()
}

/// Reverberation time estimated from the -5..-35 dB span of the Schroeder
/// curve by least squares, extrapolated to 60 dB.
///
/// The curve is computed on the reverberant tail, i.e. after the direct-path
/// kernel. With a microphone well inside the critical distance the direct
/// spike can sit tens of dB above the tail, and a fit on the raw curve would
/// measure the direct-to-reverberant drop instead of the decay rate.
pub fn estimate_t60(rir: &Rir) -> Result<f64> {
    let tail_start = (rir.direct_path_index + KERNEL_TAPS).min(rir.taps.len());
    let energy: Vec<f64> = rir.taps[tail_start..].iter().map(|t| t * t).collect();
    schroeder_fit_t60(&energy, 1.0 / rir.sample_rate as f64).ok_or_else(|| {
        Error::InvalidArgument("decay curve too short or non-decreasing for a Schroeder fit".into())
    })
}

// ---------------------------------------------------------------------------
// Rendering and mixing
// ---------------------------------------------------------------------------

/// Convolve a dry signal with a response, returning the reverberant image
/// and the direct-path-only image. Both have length `dry + taps - 1`.
pub fn render_images(dry: &Waveform, rir: &Rir) -> Result<(Waveform, Waveform)> {
    if dry.sample_rate != rir.sample_rate {
        return Err(Error::SampleRateMismatch {
            a: dry.sample_rate,
            b: rir.sample_rate,
        });
    }
    let reverberant = fft_convolve(&dry.samples, &rir.taps);
    let mut direct = fft_convolve(&dry.samples, &rir.direct_taps);
    direct.resize(reverberant.len(), 0.0);
    Ok((
        Waveform { samples: reverberant, sample_rate: dry.sample_rate },
        Waveform { samples: direct, sample_rate: dry.sample_rate },
    ))
}

/// Render a full scenario: rescale the dry interferer for the requested
/// dry-domain SNR, simulate both responses per microphone, and sum the
/// images into per-channel mixtures. All channels share one length.
pub fn mix_scenario(
    target_dry: &Waveform,
    interf_dry: &Waveform,
    scenario: &Scenario,
) -> Result<MixtureRecord> {
    if target_dry.sample_rate != interf_dry.sample_rate {
        return Err(Error::SampleRateMismatch {
            a: target_dry.sample_rate,
            b: interf_dry.sample_rate,
        });
    }
    let fs = target_dry.sample_rate;
    let len = target_dry.len().min(interf_dry.len());
    if len == 0 {
        return Err(Error::InputTooShort { needed: 1, got: 0 });
    }
    let target = Waveform {
        samples: target_dry.samples[..len].to_vec(),
        sample_rate: fs,
    };
    let mut interf = Waveform {
        samples: interf_dry.samples[..len].to_vec(),
        sample_rate: fs,
    };

    let e_t = target.energy();
    let e_i = interf.energy();
    if e_t == 0.0 || e_i == 0.0 {
        return Err(Error::ZeroEnergy(
            "both dry sources must be nonsilent to set a mixing SNR".into(),
        ));
    }
    let gain = (e_t / (e_i * 10f64.powf(scenario.mix_snr_db / 10.0))).sqrt();
    interf = interf.scaled(gain);

    let mut target_rirs = Vec::with_capacity(scenario.num_mics());
    let mut interf_rirs = Vec::with_capacity(scenario.num_mics());
    for mic in &scenario.mic_pos {
        target_rirs.push(simulate_rir(&scenario.room, scenario.target_pos, *mic, fs)?);
        interf_rirs.push(simulate_rir(&scenario.room, scenario.interf_pos, *mic, fs)?);
    }
    let max_taps = target_rirs
        .iter()
        .chain(&interf_rirs)
        .map(|r| r.taps.len())
        .max()
        .unwrap_or(1);
    let out_len = len + max_taps - 1;

    let mut record = MixtureRecord {
        scenario: scenario.clone(),
        mixture: Vec::new(),
        target_image: Vec::new(),
        interference_image: Vec::new(),
        target_direct: Vec::new(),
        interference_direct: Vec::new(),
        target_rirs,
        interf_rirs,
    };

    for j in 0..scenario.num_mics() {
        let (mut t_img, mut t_dir) = render_images(&target, &record.target_rirs[j])?;
        let (mut i_img, mut i_dir) = render_images(&interf, &record.interf_rirs[j])?;
        for w in [&mut t_img, &mut t_dir, &mut i_img, &mut i_dir] {
            w.samples.resize(out_len, 0.0);
        }
        let mix = t_img.add(&i_img)?;
        record.mixture.push(mix);
        record.target_image.push(t_img);
        record.interference_image.push(i_img);
        record.target_direct.push(t_dir);
        record.interference_direct.push(i_dir);
    }
    Ok(record)
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
