//! Experiment orchestration: scenario batches, the method matrix, sweeps,
//! and result tables.
//!
//! A run is fully described by an [`ExperimentConfig`] plus a master seed.
//! Scenario geometry, corpus draws, and every downstream random decision
//! derive from per-scenario seeds planned up front, so the same config
//! always produces byte-identical result CSVs, and sweeps share their
//! scenario set with plain runs on the same seed. Scenarios are independent
//! and go through the worker pool in [`crate::exec`]; failures (unreadable
//! audio, degenerate geometry) skip that scenario with a logged reason
//! rather than aborting the batch.
//!
//! Methods compared, all sharing the same oracle masks and weights:
//! a uniformly random single channel (masked reconstruction, no selection),
//! all channels, and the four selection rules feeding the beamformer.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::beamform::{
    beamform_pipeline, oracle_target_masks, BeamformConfig, SteeringSource,
    DEFAULT_DIAG_LOADING,
};
use crate::dsp::{FrameParams, Mask, Waveform};
use crate::error::{Error, Result};
use crate::exec;
use crate::metrics;
use crate::room::{mix_scenario, sample_scenario, MixtureRecord, SamplerConfig};
use crate::selection::{SelectionAlgorithm, SelectionConfig, SelectionMask};
use crate::synth;
use crate::weights::{
    ChannelWeights, NoisyOracleEstimator, OracleEstimator, WeightEstimator,
};

/// Environment variable naming the external PESQ binary.
pub const PESQ_TOOL_ENV: &str = "ADHOCSEP_PESQ_BIN";

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Where dry source signals come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CorpusConfig {
    /// Bundled speech-like generator; runs without any audio files.
    Synthetic {
        #[serde(default = "default_corpus_fs")]
        sample_rate: u32,
        #[serde(default = "default_corpus_duration")]
        duration_secs: f64,
    },
    /// Text files listing mono WAV paths, one per line, with an optional
    /// whitespace-separated speaker tag after the path. Relative paths
    /// resolve against the list file's directory.
    Lists {
        targets: PathBuf,
        interferers: PathBuf,
    },
}

fn default_corpus_fs() -> u32 {
    8000
}

fn default_corpus_duration() -> f64 {
    3.0
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig::Synthetic {
            sample_rate: default_corpus_fs(),
            duration_secs: default_corpus_duration(),
        }
    }
}

/// One separation method in the comparison matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Uniformly random channel (seeded by the scenario), masked
    /// single-channel reconstruction; no selection at all.
    SingleChannel,
    /// Every channel at weight 1 into the beamformer.
    AllChannels,
    OneBest,
    FixedN,
    AutoN,
    SoftN,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::SingleChannel => "single-channel",
            Method::AllChannels => "all-channels",
            Method::OneBest => "one-best",
            Method::FixedN => "fixed-n",
            Method::AutoN => "auto-n",
            Method::SoftN => "soft-n",
        }
    }

    pub const ALL: [Method; 6] = [
        Method::SingleChannel,
        Method::AllChannels,
        Method::OneBest,
        Method::FixedN,
        Method::AutoN,
        Method::SoftN,
    ];
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Method> {
        Method::ALL
            .into_iter()
            .find(|m| m.label() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown method {s:?}; expected one of {}",
                    Method::ALL.map(Method::label).join(", ")
                ))
            })
    }
}

/// Which metric columns get computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricKind {
    SiSdr,
    Sdr,
    Stoi,
    Pesq,
}

fn default_metric_list() -> Vec<MetricKind> {
    vec![MetricKind::SiSdr, MetricKind::Sdr, MetricKind::Stoi, MetricKind::Pesq]
}

/// Everything a batch run needs. Defaults follow the simulated desk-scale
/// setup: synthetic corpus, oracle weights, target-covariance steering.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub corpus: CorpusConfig,
    pub num_scenarios: usize,
    pub num_mics: usize,
    #[serde(default)]
    pub sampler: SamplerConfig,
    pub methods: Vec<Method>,
    /// Channel count for fixed-n; `None` means round(sqrt(W)).
    #[serde(default)]
    pub selection_n: Option<usize>,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Std-dev of Gaussian noise injected into the oracle weights;
    /// `None` keeps them exact.
    #[serde(default)]
    pub weight_noise_sigma: Option<f64>,
    #[serde(default)]
    pub steering: SteeringSource,
    #[serde(default = "default_loading")]
    pub diag_loading: f64,
    /// STFT framing; `None` uses the 8 kHz defaults (256/128, 129 bins).
    #[serde(default)]
    pub frame: Option<FrameParams>,
    #[serde(default = "default_metric_list")]
    pub metrics: Vec<MetricKind>,
    /// When set, results, per-scenario WAVs, and sweep plots land here.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub master_seed: u64,
}

fn default_gamma() -> f64 {
    0.5
}

fn default_loading() -> f64 {
    DEFAULT_DIAG_LOADING
}

impl ExperimentConfig {
    /// A ready-to-run config on the bundled corpus.
    pub fn synthetic(num_scenarios: usize, num_mics: usize, master_seed: u64) -> Self {
        ExperimentConfig {
            corpus: CorpusConfig::default(),
            num_scenarios,
            num_mics,
            sampler: SamplerConfig::default(),
            methods: vec![Method::SingleChannel, Method::AllChannels, Method::AutoN],
            selection_n: None,
            gamma: default_gamma(),
            weight_noise_sigma: None,
            steering: SteeringSource::default(),
            diag_loading: default_loading(),
            frame: None,
            metrics: default_metric_list(),
            output_dir: None,
            master_seed,
        }
    }

    /// Checks every invariant that does not require touching the corpus
    /// files: counts, ranges, duplicate methods.
    fn validate_scalars(&self) -> Result<()> {
        if self.num_scenarios == 0 {
            return Err(Error::InvalidArgument("need at least one scenario".into()));
        }
        if self.num_mics == 0 {
            return Err(Error::InvalidArgument("need at least one microphone".into()));
        }
        if !(self.gamma.is_finite() && (0.0..=1.0).contains(&self.gamma)) {
            return Err(Error::InvalidArgument(format!(
                "gamma = {} outside [0, 1]",
                self.gamma
            )));
        }
        if let Some(n) = self.selection_n {
            if n == 0 || n > self.num_mics {
                return Err(Error::InvalidArgument(format!(
                    "selection_n = {n} outside [1, {}]",
                    self.num_mics
                )));
            }
        }
        if let Some(sigma) = self.weight_noise_sigma {
            if !(sigma.is_finite() && sigma >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "weight_noise_sigma = {sigma} must be nonnegative"
                )));
            }
        }
        if !(self.diag_loading.is_finite() && self.diag_loading >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "diag_loading = {} must be nonnegative",
                self.diag_loading
            )));
        }
        for (i, m) in self.methods.iter().enumerate() {
            if self.methods[..i].contains(m) {
                return Err(Error::InvalidArgument(format!(
                    "method {} listed twice; one row per (method, scenario)",
                    m.label()
                )));
            }
        }
        self.sampler.validate()
    }

    /// Full validation, including reading corpus lists and checking that
    /// every referenced file exists.
    pub fn validate(&self) -> Result<()> {
        self.validate_scalars()?;
        self.load_corpus().map(|_| ())
    }

    fn load_corpus(&self) -> Result<LoadedCorpus> {
        match &self.corpus {
            CorpusConfig::Synthetic { sample_rate, duration_secs } => {
                if *sample_rate == 0 {
                    return Err(Error::InvalidArgument(
                        "corpus sample_rate must be positive".into(),
                    ));
                }
                if !(duration_secs.is_finite() && *duration_secs > 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "corpus duration_secs = {duration_secs} must be positive"
                    )));
                }
                Ok(LoadedCorpus::Synthetic {
                    sample_rate: *sample_rate,
                    duration_secs: *duration_secs,
                })
            }
            CorpusConfig::Lists { targets, interferers } => Ok(LoadedCorpus::Lists {
                targets: read_corpus_list(targets)?,
                interferers: read_corpus_list(interferers)?,
            }),
        }
    }

    fn frame_params(&self) -> FrameParams {
        self.frame.clone().unwrap_or_else(FrameParams::default_8khz)
    }
}

/// One line of a corpus list file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusEntry {
    pub path: PathBuf,
    /// Optional speaker tag (for gender-pair grouping in result rows).
    pub tag: Option<String>,
}

/// Parses a corpus list: one WAV path per line, optional tag after
/// whitespace, `#` comments and blank lines ignored. Every referenced file
/// must exist.
pub fn read_corpus_list(list_path: &Path) -> Result<Vec<CorpusEntry>> {
    let text = std::fs::read_to_string(list_path)?;
    let base = list_path.parent().unwrap_or(Path::new(""));
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let raw = parts.next().expect("nonempty line has a first token");
        let tag = parts.next().map(str::to_owned);
        let path = if Path::new(raw).is_absolute() {
            PathBuf::from(raw)
        } else {
            base.join(raw)
        };
        if !path.is_file() {
            return Err(Error::Format(format!(
                "{}:{}: listed file {} does not exist",
                list_path.display(),
                lineno + 1,
                path.display()
            )));
        }
        entries.push(CorpusEntry { path, tag });
    }
    if entries.is_empty() {
        return Err(Error::Format(format!(
            "corpus list {} names no files",
            list_path.display()
        )));
    }
    Ok(entries)
}

enum LoadedCorpus {
    Synthetic { sample_rate: u32, duration_secs: f64 },
    Lists { targets: Vec<CorpusEntry>, interferers: Vec<CorpusEntry> },
}

// ---------------------------------------------------------------------------
// Result table
// ---------------------------------------------------------------------------

/// One scored (method, scenario, hyperparameter) cell. Metric fields are
/// `None` when the metric was not requested (or, for PESQ, unavailable).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    /// Sweep coordinate (N or gamma); `None` for plain runs.
    pub hyperparameter: Option<f64>,
    pub scenario_id: usize,
    /// Seed for exact replay of this scenario.
    pub scenario_seed: u64,
    pub gender_pair: Option<String>,
    pub num_selected: usize,
    pub si_sdr_db: Option<f64>,
    pub sdr_db: Option<f64>,
    pub stoi: Option<f64>,
    pub pesq: Option<f64>,
}

/// Per-(method, hyperparameter) means over scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: String,
    pub hyperparameter: Option<f64>,
    pub num_scenarios: usize,
    pub mean_num_selected: f64,
    pub si_sdr_db: Option<f64>,
    pub sdr_db: Option<f64>,
    pub stoi: Option<f64>,
    pub pesq: Option<f64>,
}

/// A scenario that was skipped, with the reason it failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedScenario {
    pub scenario_id: usize,
    pub scenario_seed: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
    pub skipped: Vec<SkippedScenario>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl ResultTable {
    /// Deterministic row order: method, then hyperparameter, then scenario.
    pub fn sort_rows(&mut self) {
        self.rows.sort_by(|a, b| {
            (a.method.as_str(), hyper_key(a.hyperparameter), a.scenario_id).cmp(&(
                b.method.as_str(),
                hyper_key(b.hyperparameter),
                b.scenario_id,
            ))
        });
    }

    pub fn csv_string(&self) -> String {
        let mut out = String::from(
            "method,hyperparameter,scenario_id,scenario_seed,gender_pair,num_selected,si_sdr_db,sdr_db,stoi,pesq\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.method,
                fmt_opt(r.hyperparameter),
                r.scenario_id,
                r.scenario_seed,
                r.gender_pair.as_deref().unwrap_or("").replace(',', ";"),
                r.num_selected,
                fmt_opt(r.si_sdr_db),
                fmt_opt(r.sdr_db),
                fmt_opt(r.stoi),
                fmt_opt(r.pesq),
            );
        }
        out
    }

    /// Means over scenarios per (method, hyperparameter), in table order.
    pub fn aggregate(&self) -> Vec<AggregateRow> {
        let mut groups: BTreeMap<(String, Option<u64>), Vec<&ResultRow>> = BTreeMap::new();
        for r in &self.rows {
            groups
                .entry((r.method.clone(), hyper_key(r.hyperparameter)))
                .or_default()
                .push(r);
        }
        groups
            .into_iter()
            .map(|((method, _), rows)| {
                let n = rows.len();
                AggregateRow {
                    method,
                    hyperparameter: rows[0].hyperparameter,
                    num_scenarios: n,
                    mean_num_selected: rows.iter().map(|r| r.num_selected as f64).sum::<f64>()
                        / n as f64,
                    si_sdr_db: mean_opt(rows.iter().map(|r| r.si_sdr_db)),
                    sdr_db: mean_opt(rows.iter().map(|r| r.sdr_db)),
                    stoi: mean_opt(rows.iter().map(|r| r.stoi)),
                    pesq: mean_opt(rows.iter().map(|r| r.pesq)),
                }
            })
            .collect()
    }

    pub fn aggregate_csv_string(&self) -> String {
        let mut out = String::from(
            "method,hyperparameter,num_scenarios,mean_num_selected,si_sdr_db,sdr_db,stoi,pesq\n",
        );
        for a in self.aggregate() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                a.method,
                fmt_opt(a.hyperparameter),
                a.num_scenarios,
                a.mean_num_selected,
                fmt_opt(a.si_sdr_db),
                fmt_opt(a.sdr_db),
                fmt_opt(a.stoi),
                fmt_opt(a.pesq),
            );
        }
        out
    }

    /// Mean of one metric for a (method, hyperparameter) group, if any row
    /// carries it.
    pub fn mean_metric(
        &self,
        method: Method,
        hyperparameter: Option<f64>,
        metric: MetricKind,
    ) -> Option<f64> {
        self.aggregate()
            .into_iter()
            .find(|a| {
                a.method == method.label()
                    && hyper_key(a.hyperparameter) == hyper_key(hyperparameter)
            })
            .and_then(|a| match metric {
                MetricKind::SiSdr => a.si_sdr_db,
                MetricKind::Sdr => a.sdr_db,
                MetricKind::Stoi => a.stoi,
                MetricKind::Pesq => a.pesq,
            })
    }

    /// Writes results.csv, aggregates.csv, and results.json under `dir`.
    pub fn write_files(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("results.csv"), self.csv_string())?;
        std::fs::write(dir.join("aggregates.csv"), self.aggregate_csv_string())?;
        let doc = serde_json::json!({
            "rows": self.rows,
            "aggregates": self.aggregate(),
            "skipped": self.skipped,
        });
        crate::io::write_json(&dir.join("results.json"), &doc)
    }
}

/// Total order for optional nonnegative hyperparameters (`None` first).
fn hyper_key(h: Option<f64>) -> Option<u64> {
    h.map(f64::to_bits)
}

fn mean_opt(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let present: Vec<f64> = values.flatten().collect();
    if present.is_empty() {
        None
    } else {
        Some(present.iter().sum::<f64>() / present.len() as f64)
    }
}

// ---------------------------------------------------------------------------
// Running
// ---------------------------------------------------------------------------

/// One column of the method matrix: a method plus the hyperparameter value
/// it runs at (sweeps vary this; plain runs leave it `None`).
#[derive(Debug, Clone, Copy)]
struct MethodSpec {
    method: Method,
    hyperparameter: Option<f64>,
    selection_n: Option<usize>,
    gamma: f64,
}

/// Per-scenario inputs planned up front from the master seed, independent
/// of the method matrix so runs and sweeps share scenarios.
#[derive(Debug, Clone, Copy)]
struct ScenarioJob {
    index: usize,
    seed: u64,
    target_seed: u64,
    interf_seed: u64,
    target_pick: u64,
    interf_pick: u64,
}

fn plan_jobs(config: &ExperimentConfig) -> Vec<ScenarioJob> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.master_seed);
    (0..config.num_scenarios)
        .map(|index| ScenarioJob {
            index,
            seed: rng.random(),
            target_seed: rng.random(),
            interf_seed: rng.random(),
            target_pick: rng.random(),
            interf_pick: rng.random(),
        })
        .collect()
}

/// Applies one method to a rendered scenario: build the channel mask, run
/// the beamforming pipeline, return the estimate and the mask. This is the
/// single entry point the batch runner, the CLI, and the consistency tests
/// all share.
pub fn run_method(
    record: &MixtureRecord,
    weights: &ChannelWeights,
    masks: &[Mask],
    method: Method,
    selection_n: Option<usize>,
    gamma: f64,
    beam: &BeamformConfig,
) -> Result<(Waveform, SelectionMask)> {
    let w = record.num_channels();
    let selection = match method {
        Method::SingleChannel => {
            // Seeded by the scenario so replays pick the same channel.
            let mut rng = ChaCha8Rng::seed_from_u64(record.scenario.seed);
            let j = rng.random_range(0..w);
            let mut p = vec![0.0; w];
            p[j] = 1.0;
            SelectionMask { p }
        }
        Method::AllChannels => SelectionMask { p: vec![1.0; w] },
        Method::OneBest => SelectionConfig {
            algorithm: SelectionAlgorithm::OneBest,
            n: None,
            gamma,
        }
        .apply(weights)?,
        Method::FixedN => SelectionConfig {
            algorithm: SelectionAlgorithm::FixedN,
            n: selection_n,
            gamma,
        }
        .apply(weights)?,
        Method::AutoN => SelectionConfig {
            algorithm: SelectionAlgorithm::AutoN,
            n: None,
            gamma,
        }
        .apply(weights)?,
        Method::SoftN => SelectionConfig {
            algorithm: SelectionAlgorithm::SoftN,
            n: None,
            gamma,
        }
        .apply(weights)?,
    };
    let estimate = beamform_pipeline(record, &selection, masks, beam)?;
    Ok((estimate, selection))
}

struct ScenarioOutcome {
    rows: Vec<ResultRow>,
    estimates: Vec<(&'static str, Waveform)>,
    reference: Waveform,
}

fn run_scenario(
    job: &ScenarioJob,
    config: &ExperimentConfig,
    corpus: &LoadedCorpus,
    matrix: &[MethodSpec],
    pesq_tool: Option<&Path>,
) -> Result<ScenarioOutcome> {
    let scenario = sample_scenario(job.seed, &config.sampler, config.num_mics)?;

    let (target_dry, interf_dry, gender_pair) = match corpus {
        LoadedCorpus::Synthetic { sample_rate, duration_secs } => (
            synth::speech_like(job.target_seed, *sample_rate, *duration_secs)?,
            synth::speech_like(job.interf_seed, *sample_rate, *duration_secs)?,
            None,
        ),
        LoadedCorpus::Lists { targets, interferers } => {
            let t = &targets[(job.target_pick % targets.len() as u64) as usize];
            let mut idx = (job.interf_pick % interferers.len() as u64) as usize;
            if interferers[idx].path == t.path && interferers.len() > 1 {
                idx = (idx + 1) % interferers.len();
            }
            let i = &interferers[idx];
            let pair = match (&t.tag, &i.tag) {
                (Some(a), Some(b)) => Some(format!("{a}+{b}")),
                _ => None,
            };
            (
                crate::io::read_wav(&t.path)?,
                crate::io::read_wav(&i.path)?,
                pair,
            )
        }
    };

    let record = mix_scenario(&target_dry, &interf_dry, &scenario)?;
    // The reference speech is the dry target utterance as mixed (both dry
    // signals are trimmed to their shared length). A channel image would be
    // a poor reference: each image is its own reverberant filtering of the
    // source, so scoring against one rewards whichever method reproduces
    // that particular channel and penalizes every spatial combination.
    // Cross-correlation alignment absorbs the direct-path delay later.
    let shared_len = target_dry.len().min(interf_dry.len());
    let reference = Waveform::new(
        target_dry.samples[..shared_len].to_vec(),
        target_dry.sample_rate,
    )?;
    let weights = match config.weight_noise_sigma {
        None => OracleEstimator::default().estimate(&record)?,
        Some(sigma) => NoisyOracleEstimator {
            mode: Default::default(),
            sigma,
            // Decorrelated from the geometry stream.
            seed: job.seed.wrapping_add(0x9e37_79b9_7f4a_7c15),
        }
        .estimate(&record)?,
    };
    let frame = config.frame_params();
    let masks = oracle_target_masks(&record, &frame)?;
    let beam = BeamformConfig {
        steering: config.steering,
        diag_loading: config.diag_loading,
        // Anchor the steering phase at the channel ranked cleanest, the
        // same one for every method so their outputs share a reference.
        reference_channel: weights.argmax(),
        frame,
    };

    let mut rows = Vec::with_capacity(matrix.len());
    let mut estimates = Vec::with_capacity(matrix.len());
    for spec in matrix {
        let (estimate, selection) = run_method(
            &record,
            &weights,
            &masks,
            spec.method,
            spec.selection_n,
            spec.gamma,
            &beam,
        )?;
        let (est, refr) = metrics::align_by_cross_correlation(&estimate, &reference)?;
        let want = |kind| config.metrics.contains(&kind);
        rows.push(ResultRow {
            method: spec.method.label().to_owned(),
            hyperparameter: spec.hyperparameter,
            scenario_id: job.index,
            scenario_seed: job.seed,
            gender_pair: gender_pair.clone(),
            num_selected: selection.num_selected(),
            si_sdr_db: if want(MetricKind::SiSdr) {
                Some(metrics::si_sdr(&est, &refr)?)
            } else {
                None
            },
            sdr_db: if want(MetricKind::Sdr) {
                Some(metrics::sdr_db(&est, &refr)?)
            } else {
                None
            },
            stoi: if want(MetricKind::Stoi) {
                Some(metrics::stoi(&est, &refr)?)
            } else {
                None
            },
            pesq: if want(MetricKind::Pesq) {
                metrics::pesq_external(&est, &refr, pesq_tool)
            } else {
                None
            },
        });
        estimates.push((spec.method.label(), estimate));
    }
    Ok(ScenarioOutcome { rows, estimates, reference })
}

fn execute(config: &ExperimentConfig, matrix: &[MethodSpec]) -> Result<ResultTable> {
    config.validate_scalars()?;
    if matrix.is_empty() {
        return Err(Error::InvalidArgument("need at least one method".into()));
    }
    let corpus = config.load_corpus()?;
    let pesq_tool: Option<PathBuf> = std::env::var_os(PESQ_TOOL_ENV).map(PathBuf::from);
    let jobs = plan_jobs(config);

    let outcomes = exec::map_batch(&jobs, |job| {
        run_scenario(job, config, &corpus, matrix, pesq_tool.as_deref())
    });

    let mut table = ResultTable::default();
    for (job, outcome) in jobs.iter().zip(outcomes) {
        match outcome {
            Ok(out) => {
                table.rows.extend(out.rows);
                if let Some(dir) = &config.output_dir {
                    export_scenario_wavs(dir, job.index, &out.estimates, &out.reference)?;
                }
            }
            Err(e) => {
                eprintln!("warning: scenario {} skipped: {e}", job.index);
                table.skipped.push(SkippedScenario {
                    scenario_id: job.index,
                    scenario_seed: job.seed,
                    reason: e.to_string(),
                });
            }
        }
    }
    if table.rows.is_empty() {
        return Err(Error::AllScenariosFailed(format!(
            "all {} scenarios were skipped; first reason: {}",
            table.skipped.len(),
            table.skipped.first().map(|s| s.reason.as_str()).unwrap_or("none ran"),
        )));
    }
    table.sort_rows();

    if let Some(dir) = &config.output_dir {
        table.write_files(dir)?;
        if table.rows.iter().any(|r| r.hyperparameter.is_some()) {
            write_metric_plots(&table, &dir.join("plots"))?;
        }
    }
    Ok(table)
}

/// Runs the configured method list over the scenario batch.
///
/// Each scenario is sampled, rendered, given oracle masks and weights, fed
/// through every method, and scored against the target image at the
/// oracle-best microphone. Failed scenarios are skipped with a logged
/// reason; if every scenario fails the run errors out.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ResultTable> {
    if config.methods.is_empty() {
        return Err(Error::InvalidArgument("need at least one method".into()));
    }
    let matrix: Vec<MethodSpec> = config
        .methods
        .iter()
        .map(|&method| MethodSpec {
            method,
            hyperparameter: None,
            selection_n: config.selection_n,
            gamma: config.gamma,
        })
        .collect();
    execute(config, &matrix)
}

/// Fixed-n over a grid of channel counts, one table row per (N, scenario),
/// on the same scenario set a plain run with this config would use.
pub fn sweep_n(config: &ExperimentConfig, n_values: &[usize]) -> Result<ResultTable> {
    if n_values.is_empty() {
        return Err(Error::InvalidArgument("empty N grid".into()));
    }
    let mut matrix = Vec::with_capacity(n_values.len());
    for (i, &n) in n_values.iter().enumerate() {
        if n == 0 || n > config.num_mics {
            return Err(Error::InvalidArgument(format!(
                "N = {n} outside [1, {}]",
                config.num_mics
            )));
        }
        if n_values[..i].contains(&n) {
            return Err(Error::InvalidArgument(format!("N = {n} listed twice")));
        }
        matrix.push(MethodSpec {
            method: Method::FixedN,
            hyperparameter: Some(n as f64),
            selection_n: Some(n),
            gamma: config.gamma,
        });
    }
    execute(config, &matrix)
}

/// Auto-n and soft-n over a gamma grid, two rows per (gamma, scenario).
pub fn sweep_gamma(config: &ExperimentConfig, gamma_values: &[f64]) -> Result<ResultTable> {
    if gamma_values.is_empty() {
        return Err(Error::InvalidArgument("empty gamma grid".into()));
    }
    let mut matrix = Vec::with_capacity(2 * gamma_values.len());
    for (i, &gamma) in gamma_values.iter().enumerate() {
        if !(gamma.is_finite() && (0.0..=1.0).contains(&gamma)) {
            return Err(Error::InvalidArgument(format!("gamma = {gamma} outside [0, 1]")));
        }
        if gamma_values[..i].contains(&gamma) {
            return Err(Error::InvalidArgument(format!("gamma = {gamma} listed twice")));
        }
        for method in [Method::AutoN, Method::SoftN] {
            matrix.push(MethodSpec {
                method,
                hyperparameter: Some(gamma),
                selection_n: None,
                gamma,
            });
        }
    }
    execute(config, &matrix)
}

fn export_scenario_wavs(
    dir: &Path,
    scenario_id: usize,
    estimates: &[(&'static str, Waveform)],
    reference: &Waveform,
) -> Result<()> {
    let sdir = dir.join("scenarios").join(format!("s{scenario_id:04}"));
    std::fs::create_dir_all(&sdir)?;
    crate::io::write_wav_f32(&sdir.join("reference.wav"), reference)?;
    for (label, estimate) in estimates {
        crate::io::write_wav_f32(&sdir.join(format!("{label}.wav")), estimate)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Plots
// ---------------------------------------------------------------------------

/// Writes one SVG per metric: aggregate value against the hyperparameter,
/// one polyline per method. Returns the files written.
pub fn write_metric_plots(table: &ResultTable, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let aggregates = table.aggregate();
    let mut written = Vec::new();
    for (metric, name) in [
        (MetricKind::SiSdr, "si_sdr_db"),
        (MetricKind::Sdr, "sdr_db"),
        (MetricKind::Stoi, "stoi"),
        (MetricKind::Pesq, "pesq"),
    ] {
        let mut series: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
        for a in &aggregates {
            let value = match metric {
                MetricKind::SiSdr => a.si_sdr_db,
                MetricKind::Sdr => a.sdr_db,
                MetricKind::Stoi => a.stoi,
                MetricKind::Pesq => a.pesq,
            };
            if let (Some(x), Some(y)) = (a.hyperparameter, value) {
                series.entry(a.method.as_str()).or_default().push((x, y));
            }
        }
        if series.is_empty() {
            continue;
        }
        let path = dir.join(format!("{name}.svg"));
        std::fs::write(&path, line_plot_svg(name, &series))?;
        written.push(path);
    }
    Ok(written)
}

fn line_plot_svg(title: &str, series: &BTreeMap<&str, Vec<(f64, f64)>>) -> String {
    const W: f64 = 640.0;
    const H: f64 = 420.0;
    const M: f64 = 60.0;
    let points: Vec<(f64, f64)> = series.values().flatten().copied().collect();
    let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &points {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let px = |x: f64| M + (x - x0) / (x1 - x0) * (W - 2.0 * M);
    let py = |y: f64| H - M - (y - y0) / (y1 - y0) * (H - 2.0 * M);
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
         viewBox=\"0 0 {W} {H}\">\n<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" \
         font-size=\"16\">{title}</text>\n",
        W / 2.0
    );
    // Axes with end labels.
    let _ = write!(
        svg,
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <text x=\"{m}\" y=\"{lb}\" font-family=\"sans-serif\" font-size=\"12\">{x0}</text>\n\
         <text x=\"{r}\" y=\"{lb}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\">{x1}</text>\n\
         <text x=\"{ly}\" y=\"{b}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\">{y0:.3}</text>\n\
         <text x=\"{ly}\" y=\"{t}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\">{y1:.3}</text>\n",
        m = M,
        b = H - M,
        r = W - M,
        t = M,
        lb = H - M + 18.0,
        ly = M - 8.0,
    );
    for (i, (label, pts)) in series.iter().enumerate() {
        let mut pts = pts.clone();
        pts.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite hyperparameters"));
        let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{},{}", px(x), py(y))).collect();
        let color = colors[i % colors.len()];
        let _ = write!(
            svg,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>\n\
             <text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"13\" fill=\"{color}\">{label}</text>\n",
            path.join(" "),
            W - M + 6.0,
            M + 16.0 * i as f64,
        );
        for &(x, y) in &pts {
            let _ = write!(
                svg,
                "<circle cx=\"{}\" cy=\"{}\" r=\"3\" fill=\"{color}\"/>\n",
                px(x),
                py(y)
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::ImageMode;

    /// Small but fully reverberant config that keeps unit tests quick.
    fn tiny_config(num_scenarios: usize, seed: u64) -> ExperimentConfig {
        let mut config = ExperimentConfig::synthetic(num_scenarios, 3, seed);
        config.corpus = CorpusConfig::Synthetic {
            sample_rate: 8000,
            duration_secs: 1.2,
        };
        config.sampler.length_range = (4.0, 6.0);
        config.sampler.width_range = (4.0, 6.0);
        config.sampler.t60_mean = 0.15;
        config.sampler.t60_std = 0.02;
        config.sampler.t60_range = (0.08, 0.25);
        config
    }

    fn rendered_record(seed: u64) -> (MixtureRecord, ChannelWeights, Vec<Mask>, BeamformConfig) {
        let config = tiny_config(1, seed);
        let scenario = sample_scenario(seed, &config.sampler, config.num_mics).unwrap();
        let target = synth::speech_like(seed ^ 1, 8000, 1.2).unwrap();
        let interf = synth::speech_like(seed ^ 2, 8000, 1.2).unwrap();
        let record = mix_scenario(&target, &interf, &scenario).unwrap();
        let weights = OracleEstimator { mode: ImageMode::DirectOnly }
            .estimate(&record)
            .unwrap();
        let frame = config.frame_params();
        let masks = oracle_target_masks(&record, &frame).unwrap();
        let beam = BeamformConfig {
            steering: config.steering,
            diag_loading: config.diag_loading,
            reference_channel: weights.argmax(),
            frame,
        };
        (record, weights, masks, beam)
    }

    #[test]
    fn two_scenarios_three_methods_gives_six_rows() {
        let mut config = tiny_config(2, 11);
        config.methods = vec![Method::SingleChannel, Method::AllChannels, Method::AutoN];
        let table = run_experiment(&config).unwrap();
        assert_eq!(table.rows.len(), 6);
        assert!(table.skipped.is_empty());
        for method in &config.methods {
            let count = table.rows.iter().filter(|r| r.method == method.label()).count();
            assert_eq!(count, 2, "{}", method.label());
        }
        // Rows carry the scenario seed and a computed STOI.
        for r in &table.rows {
            assert_ne!(r.scenario_seed, 0);
            assert!(r.stoi.unwrap() > 0.0);
            assert!(r.pesq.is_none(), "no pesq tool in the test env");
        }
    }

    #[test]
    fn same_master_seed_gives_byte_identical_tables() {
        let mut config = tiny_config(2, 22);
        config.methods = vec![Method::OneBest, Method::AutoN];
        let a = run_experiment(&config).unwrap();
        let b = run_experiment(&config).unwrap();
        assert_eq!(a.csv_string(), b.csv_string());
        assert_eq!(a.aggregate_csv_string(), b.aggregate_csv_string());

        let mut other = config.clone();
        other.master_seed = 23;
        let c = run_experiment(&other).unwrap();
        assert_ne!(a.csv_string(), c.csv_string());
    }

    #[test]
    fn fixed_n_of_one_matches_one_best_exactly() {
        let (record, weights, masks, beam) = rendered_record(33);
        let (best, sel_best) =
            run_method(&record, &weights, &masks, Method::OneBest, None, 0.5, &beam).unwrap();
        let (fixed, sel_fixed) =
            run_method(&record, &weights, &masks, Method::FixedN, Some(1), 0.5, &beam).unwrap();
        assert_eq!(sel_best.support(), sel_fixed.support());
        let worst = best
            .samples
            .iter()
            .zip(&fixed.samples)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(worst <= 1e-8, "fixed-n(1) deviates from one-best by {worst}");
    }

    #[test]
    fn single_channel_draw_is_reproducible_and_in_range() {
        let (record, weights, masks, beam) = rendered_record(44);
        let (a, sel_a) =
            run_method(&record, &weights, &masks, Method::SingleChannel, None, 0.5, &beam)
                .unwrap();
        let (b, sel_b) =
            run_method(&record, &weights, &masks, Method::SingleChannel, None, 0.5, &beam)
                .unwrap();
        assert_eq!(sel_a.support(), sel_b.support());
        assert_eq!(sel_a.num_selected(), 1);
        assert_eq!(a, b);
    }

    #[test]
    fn aggregate_means_over_scenarios() {
        let row = |method: &str, id: usize, si: f64| ResultRow {
            method: method.into(),
            hyperparameter: None,
            scenario_id: id,
            scenario_seed: id as u64,
            gender_pair: None,
            num_selected: 2 + id,
            si_sdr_db: Some(si),
            sdr_db: None,
            stoi: Some(0.5),
            pesq: None,
        };
        let table = ResultTable {
            rows: vec![row("auto-n", 0, 4.0), row("auto-n", 1, 8.0), row("one-best", 0, 1.0)],
            skipped: vec![],
        };
        let agg = table.aggregate();
        assert_eq!(agg.len(), 2);
        let auto = agg.iter().find(|a| a.method == "auto-n").unwrap();
        assert_eq!(auto.num_scenarios, 2);
        assert_eq!(auto.si_sdr_db, Some(6.0));
        assert_eq!(auto.sdr_db, None);
        assert_eq!(auto.mean_num_selected, 2.5);
        assert_eq!(
            table.mean_metric(Method::AutoN, None, MetricKind::SiSdr),
            Some(6.0)
        );
    }

    #[test]
    fn csv_has_expected_shape_and_empty_optionals() {
        let table = ResultTable {
            rows: vec![ResultRow {
                method: "auto-n".into(),
                hyperparameter: Some(0.5),
                scenario_id: 3,
                scenario_seed: 99,
                gender_pair: Some("F+M".into()),
                num_selected: 4,
                si_sdr_db: Some(7.25),
                sdr_db: None,
                stoi: Some(0.875),
                pesq: None,
            }],
            skipped: vec![],
        };
        let csv = table.csv_string();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "method,hyperparameter,scenario_id,scenario_seed,gender_pair,num_selected,si_sdr_db,sdr_db,stoi,pesq"
        );
        assert_eq!(lines.next().unwrap(), "auto-n,0.5,3,99,F+M,4,7.25,,0.875,");
    }

    #[test]
    fn config_validation_rejects_bad_inputs() {
        let mut config = tiny_config(1, 1);
        config.num_scenarios = 0;
        assert!(config.validate().is_err());

        let mut config = tiny_config(1, 1);
        config.methods.clear();
        assert!(run_experiment(&config).is_err());

        let mut config = tiny_config(1, 1);
        config.methods = vec![Method::AutoN, Method::AutoN];
        assert!(run_experiment(&config).is_err());

        let mut config = tiny_config(1, 1);
        config.gamma = 1.5;
        assert!(config.validate().is_err());

        let mut config = tiny_config(1, 1);
        config.selection_n = Some(99);
        assert!(config.validate().is_err());

        let mut config = tiny_config(1, 1);
        config.corpus = CorpusConfig::Lists {
            targets: PathBuf::from("/nonexistent/list.txt"),
            interferers: PathBuf::from("/nonexistent/list.txt"),
        };
        assert!(config.validate().is_err());
    }

    #[test]
    fn corpus_lists_resolve_tags_and_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let wav_f = dir.path().join("f1.wav");
        let wav_m = dir.path().join("m1.wav");
        crate::io::write_wav_f32(&wav_f, &synth::speech_like(5, 8000, 1.2).unwrap()).unwrap();
        crate::io::write_wav_f32(&wav_m, &synth::speech_like(6, 8000, 1.2).unwrap()).unwrap();
        std::fs::write(
            dir.path().join("targets.txt"),
            "# female targets\nf1.wav F\n\n",
        )
        .unwrap();
        std::fs::write(dir.path().join("interferers.txt"), "m1.wav M\n").unwrap();

        let entries = read_corpus_list(&dir.path().join("targets.txt")).unwrap();
        assert_eq!(entries.len(), 1);
        assert_eq!(entries[0].path, wav_f);
        assert_eq!(entries[0].tag.as_deref(), Some("F"));

        let mut config = tiny_config(1, 55);
        config.corpus = CorpusConfig::Lists {
            targets: dir.path().join("targets.txt"),
            interferers: dir.path().join("interferers.txt"),
        };
        config.methods = vec![Method::AutoN];
        let table = run_experiment(&config).unwrap();
        assert_eq!(table.rows.len(), 1);
        assert_eq!(table.rows[0].gender_pair.as_deref(), Some("F+M"));
    }

    #[test]
    fn unreadable_corpus_skips_and_all_failures_error() {
        let dir = tempfile::tempdir().unwrap();
        let bogus = dir.path().join("bogus.wav");
        std::fs::write(&bogus, b"not really a wav file").unwrap();
        std::fs::write(dir.path().join("list.txt"), "bogus.wav\n").unwrap();
        let mut config = tiny_config(2, 66);
        config.corpus = CorpusConfig::Lists {
            targets: dir.path().join("list.txt"),
            interferers: dir.path().join("list.txt"),
        };
        config.methods = vec![Method::AutoN];
        // The list validates (the file exists) but every render fails.
        match run_experiment(&config) {
            Err(Error::AllScenariosFailed(msg)) => assert!(msg.contains("all 2"), "{msg}"),
            other => panic!("expected AllScenariosFailed, got {other:?}"),
        }
    }

    #[test]
    fn sweep_n_full_grid_row_matches_all_channels() {
        let mut config = tiny_config(2, 77);
        config.methods = vec![Method::AllChannels];
        let w = config.num_mics;

        let sweep = sweep_n(&config, &[1, w]).unwrap();
        assert_eq!(sweep.rows.len(), 4);
        let run = run_experiment(&config).unwrap();

        // Selecting every channel is the all-channels method; on shared
        // seeds the rows must agree to the last bit.
        for r in sweep.rows.iter().filter(|r| r.hyperparameter == Some(w as f64)) {
            let full = run
                .rows
                .iter()
                .find(|f| f.scenario_id == r.scenario_id)
                .unwrap();
            assert_eq!(r.num_selected, w);
            assert_eq!(r.si_sdr_db, full.si_sdr_db);
            assert_eq!(r.sdr_db, full.sdr_db);
            assert_eq!(r.stoi, full.stoi);
        }

        assert!(sweep_n(&config, &[0]).is_err());
        assert!(sweep_n(&config, &[w + 1]).is_err());
        assert!(sweep_n(&config, &[2, 2]).is_err());
        assert!(sweep_n(&config, &[]).is_err());
    }

    #[test]
    fn sweep_gamma_supports_shrink_and_zero_selects_everything() {
        let mut config = tiny_config(1, 88);
        config.num_mics = 4;
        let table = sweep_gamma(&config, &[0.0, 0.4, 0.8]).unwrap();
        assert_eq!(table.rows.len(), 6);

        for method in [Method::AutoN, Method::SoftN] {
            let sizes: Vec<(f64, usize)> = table
                .rows
                .iter()
                .filter(|r| r.method == method.label())
                .map(|r| (r.hyperparameter.unwrap(), r.num_selected))
                .collect();
            assert_eq!(sizes.len(), 3);
            // Support shrinks (weakly) as gamma rises, and gamma = 0 takes
            // every channel with a positive weight, which oracle weights
            // make all of them.
            assert_eq!(sizes[0], (0.0, 4));
            assert!(sizes[0].1 >= sizes[1].1 && sizes[1].1 >= sizes[2].1, "{sizes:?}");
        }

        assert!(sweep_gamma(&config, &[1.2]).is_err());
        assert!(sweep_gamma(&config, &[]).is_err());
    }

    #[test]
    fn outputs_land_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = tiny_config(1, 99);
        config.methods = vec![Method::AutoN];
        config.output_dir = Some(dir.path().to_path_buf());
        let table = sweep_gamma(&config, &[0.3, 0.6]).unwrap();

        assert!(dir.path().join("results.csv").is_file());
        assert!(dir.path().join("aggregates.csv").is_file());
        assert!(dir.path().join("results.json").is_file());
        assert!(dir.path().join("scenarios/s0000/reference.wav").is_file());
        assert!(dir.path().join("scenarios/s0000/auto-n.wav").is_file());

        let csv = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
        assert_eq!(csv, table.csv_string());

        let svg = dir.path().join("plots/si_sdr_db.svg");
        assert!(svg.is_file());
        let body = std::fs::read_to_string(svg).unwrap();
        assert!(body.starts_with("<svg"));
        assert!(body.contains("polyline"));
        assert!(dir.path().join("plots/stoi.svg").is_file());
    }

    #[test]
    fn method_labels_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.label().parse::<Method>().unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{}\"", m.label()));
        }
        assert!("dabse".parse::<Method>().is_err());
    }

    #[test]
    fn config_json_round_trip_with_defaults() {
        let json = r#"{
            "num_scenarios": 3,
            "num_mics": 8,
            "methods": ["single-channel", "auto-n"],
            "master_seed": 42
        }"#;
        let config: ExperimentConfig = serde_json::from_str(json).unwrap();
        assert_eq!(config.gamma, 0.5);
        assert_eq!(config.corpus, CorpusConfig::default());
        assert!(config.selection_n.is_none());
        assert_eq!(config.metrics, default_metric_list());
        let back = serde_json::to_string(&config).unwrap();
        let again: ExperimentConfig = serde_json::from_str(&back).unwrap();
        assert_eq!(again.methods, config.methods);
    }
}
