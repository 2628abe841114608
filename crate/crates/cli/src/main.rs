//! Command-line front end.
//!
//! Each subcommand wraps one library operation with file I/O so the whole
//! pipeline can be driven from a shell and composed through JSON manifests:
//! `simulate` writes a scene directory, `weights`/`select`/`beamform` chew
//! through it step by step, `evaluate` scores any estimate/reference WAV
//! pair, and `run`/`sweep` orchestrate full experiment batches from a
//! config file.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use adhocsep_core::beamform::{
    beamform_pipeline_artifacts, oracle_target_masks, BeamformConfig, SteeringSource,
    DEFAULT_DIAG_LOADING,
};
use adhocsep_core::harness::{
    self, run_experiment, sweep_gamma, sweep_n, ExperimentConfig, ResultTable,
};
use adhocsep_core::io;
use adhocsep_core::metrics;
use adhocsep_core::room::{mix_scenario, sample_scenario, MixtureRecord, SamplerConfig, Scenario};
use adhocsep_core::selection::{SelectionAlgorithm, SelectionConfig, SelectionMask};
use adhocsep_core::synth;
use adhocsep_core::weights::{
    ImageMode, NoisyOracleEstimator, OracleEstimator, WeightEstimator,
};

#[derive(Parser)]
#[command(
    name = "adhocsep",
    version,
    about = "Simulation and evaluation toolkit for target speech separation with ad-hoc microphone arrays"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a random reverberant scene and render the multichannel mixture.
    Simulate(SimulateArgs),
    /// Estimate per-channel target-quality weights for a simulated scene.
    Weights(WeightsArgs),
    /// Turn quality weights into a channel-selection mask.
    Select(SelectArgs),
    /// Extract the target from a scene with a selection mask and MVDR.
    Beamform(BeamformArgs),
    /// Score an estimate WAV against a reference WAV.
    Evaluate(EvaluateArgs),
    /// Run a configured scenario batch and write result tables.
    Run(RunArgs),
    /// Sweep fixed-n over an N grid, or auto-n and soft-n over a gamma grid.
    Sweep(SweepArgs),
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Simulate(args) => simulate(args),
        Command::Weights(args) => weights(args),
        Command::Select(args) => select(args),
        Command::Beamform(args) => beamform(args),
        Command::Evaluate(args) => evaluate(args),
        Command::Run(args) => run(args),
        Command::Sweep(args) => sweep(args),
    }
}

/// Write `text` to a file, or to stdout when no path is given.
fn emit(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(path) => std::fs::write(path, text)
            .with_context(|| format!("writing {}", path.display())),
        None => {
            if text.ends_with('\n') {
                print!("{text}");
            } else {
                println!("{text}");
            }
            Ok(())
        }
    }
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

#[derive(Args)]
struct SimulateArgs {
    /// Master seed; geometry, sources, and mixing all derive from it.
    #[arg(long)]
    seed: u64,
    /// Number of microphones scattered in the room.
    #[arg(long, default_value_t = 16)]
    mics: usize,
    /// Scene directory to create.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8000)]
    sample_rate: u32,
    /// Dry source duration in seconds.
    #[arg(long, default_value_t = 3.0)]
    duration: f64,
}

fn simulate(args: SimulateArgs) -> anyhow::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let (scene_seed, target_seed, interf_seed) = (rng.random(), rng.random(), rng.random());
    let scenario = sample_scenario(scene_seed, &SamplerConfig::default(), args.mics)?;
    let target = synth::speech_like(target_seed, args.sample_rate, args.duration)?;
    let interf = synth::speech_like(interf_seed, args.sample_rate, args.duration)?;
    let record = mix_scenario(&target, &interf, &scenario)?;
    // The scoring reference is the dry target utterance (evaluate aligns
    // away the direct-path delay); mixture_ref.wav is the unprocessed
    // mixture at the cleanest channel by oracle weights, handy as the
    // before-separation baseline.
    let best_channel = OracleEstimator::default()
        .estimate(&record)?
        .argmax()
        .expect("simulated records have at least one channel");

    std::fs::create_dir_all(&args.out)?;
    io::write_json(args.out.join("scenario.json"), &scenario)?;
    io::write_wav_f32(args.out.join("target_dry.wav"), &target)?;
    io::write_wav_f32(args.out.join("interferer_dry.wav"), &interf)?;
    io::write_wav_f32(args.out.join("reference.wav"), &target)?;
    io::write_wav_f32(args.out.join("mixture_ref.wav"), &record.mixture[best_channel])?;
    for (j, ch) in record.mixture.iter().enumerate() {
        io::write_wav_f32(args.out.join(format!("mixture_ch{j:02}.wav")), ch)?;
    }
    println!(
        "wrote scene to {}: {} mics, room {:.1} x {:.1} x {:.1} m, t60 {:.2} s, mix snr {:.2} dB, baseline channel {best_channel}",
        args.out.display(),
        args.mics,
        scenario.room.length,
        scenario.room.width,
        scenario.room.height,
        scenario.room.t60,
        scenario.mix_snr_db,
    );
    Ok(())
}

/// Re-render a scene directory written by `simulate`. Rendering is
/// deterministic in the scenario geometry, so the record matches across
/// invocations.
fn load_scene(dir: &Path) -> anyhow::Result<MixtureRecord> {
    let scenario: Scenario = io::read_json(dir.join("scenario.json"))
        .with_context(|| format!("reading {}/scenario.json", dir.display()))?;
    let target = io::read_wav(dir.join("target_dry.wav"))?;
    let interf = io::read_wav(dir.join("interferer_dry.wav"))?;
    Ok(mix_scenario(&target, &interf, &scenario)?)
}

// ---------------------------------------------------------------------------
// weights
// ---------------------------------------------------------------------------

#[derive(Args)]
struct WeightsArgs {
    /// Scene directory from `simulate`.
    #[arg(long)]
    scene: PathBuf,
    /// Output JSON path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Which images the oracle scores: direct-only or reverberant.
    #[arg(long, default_value = "direct-only")]
    mode: String,
    /// Std-dev of Gaussian noise on the oracle weights.
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long, default_value_t = 0)]
    noise_seed: u64,
}

fn parse_mode(s: &str) -> anyhow::Result<ImageMode> {
    match s {
        "direct-only" => Ok(ImageMode::DirectOnly),
        "reverberant" => Ok(ImageMode::Reverberant),
        other => bail!("unknown mode {other:?}; expected direct-only or reverberant"),
    }
}

fn weights(args: WeightsArgs) -> anyhow::Result<()> {
    let record = load_scene(&args.scene)?;
    let mode = parse_mode(&args.mode)?;
    let weights = match args.noise_sigma {
        None => OracleEstimator { mode }.estimate(&record)?,
        Some(sigma) => NoisyOracleEstimator { mode, sigma, seed: args.noise_seed }
            .estimate(&record)?,
    };
    emit(args.out.as_deref(), &weights.to_json_string())
}

// ---------------------------------------------------------------------------
// select
// ---------------------------------------------------------------------------

#[derive(Args)]
struct SelectArgs {
    /// Channel-quality weights JSON (array, or map keyed by channel index).
    #[arg(long)]
    weights: PathBuf,
    /// one-best | fixed-n | auto-n | soft-n
    #[arg(long)]
    algorithm: String,
    /// Channel count for fixed-n; defaults to round(sqrt(W)).
    #[arg(long)]
    n: Option<usize>,
    /// Quality-ratio threshold for auto-n and soft-n.
    #[arg(long, default_value_t = 0.5)]
    gamma: f64,
    /// Output JSON path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_algorithm(s: &str) -> anyhow::Result<SelectionAlgorithm> {
    serde_json::from_value(serde_json::Value::String(s.to_owned())).map_err(|_| {
        anyhow!("unknown algorithm {s:?}; expected one-best, fixed-n, auto-n, or soft-n")
    })
}

fn select(args: SelectArgs) -> anyhow::Result<()> {
    let weights = io::read_weights(&args.weights)?;
    let config = SelectionConfig {
        algorithm: parse_algorithm(&args.algorithm)?,
        n: args.n,
        gamma: args.gamma,
    };
    let mask = config.apply(&weights)?;
    emit(args.out.as_deref(), &serde_json::to_string(&mask)?)
}

// ---------------------------------------------------------------------------
// beamform
// ---------------------------------------------------------------------------

#[derive(Args)]
struct BeamformArgs {
    /// Scene directory from `simulate`.
    #[arg(long)]
    scene: PathBuf,
    /// Selection-mask JSON from `select` (array of per-channel weights).
    #[arg(long)]
    selection: PathBuf,
    /// Output estimate WAV.
    #[arg(long)]
    out: PathBuf,
    /// Steering vector source: target-cov | literal-interference.
    #[arg(long, default_value = "target-cov")]
    steering: String,
    #[arg(long, default_value_t = DEFAULT_DIAG_LOADING)]
    diag_loading: f64,
    /// Phase-reference channel for the steering vectors; defaults to the
    /// selected channel with the most steering energy.
    #[arg(long)]
    reference: Option<usize>,
    /// Dump the per-frequency filter as JSON.
    #[arg(long)]
    dump_filter: Option<PathBuf>,
    /// Dump the masked interference covariance as JSON.
    #[arg(long)]
    dump_covariance: Option<PathBuf>,
}

fn parse_steering(s: &str) -> anyhow::Result<SteeringSource> {
    serde_json::from_value(serde_json::Value::String(s.to_owned())).map_err(|_| {
        anyhow!("unknown steering {s:?}; expected target-cov or literal-interference")
    })
}

fn beamform(args: BeamformArgs) -> anyhow::Result<()> {
    let record = load_scene(&args.scene)?;
    let selection: SelectionMask = io::read_json(&args.selection)?;
    let config = BeamformConfig {
        steering: parse_steering(&args.steering)?,
        diag_loading: args.diag_loading,
        reference_channel: args.reference,
        ..BeamformConfig::default()
    };
    let masks = oracle_target_masks(&record, &config.frame)?;
    let artifacts = beamform_pipeline_artifacts(&record, &selection, &masks, &config)?;
    io::write_wav_f32(&args.out, &artifacts.estimate)?;
    println!("wrote estimate to {}", args.out.display());

    if let Some(path) = &args.dump_filter {
        match &artifacts.filter {
            Some(filter) => io::write_json(path, &io::filter_to_dump(filter))?,
            None => eprintln!(
                "warning: single-channel reconstruction has no filter; skipping {}",
                path.display()
            ),
        }
    }
    if let Some(path) = &args.dump_covariance {
        match &artifacts.interference_covariance {
            Some(cov) => io::write_json(path, &io::covariance_to_dump(cov))?,
            None => eprintln!(
                "warning: single-channel reconstruction has no covariance; skipping {}",
                path.display()
            ),
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    estimate: PathBuf,
    #[arg(long)]
    reference: PathBuf,
    /// External PESQ binary; defaults to $ADHOCSEP_PESQ_BIN when set.
    #[arg(long)]
    pesq_tool: Option<PathBuf>,
    /// Output JSON path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn evaluate(args: EvaluateArgs) -> anyhow::Result<()> {
    let estimate = io::read_wav(&args.estimate)?;
    let reference = io::read_wav(&args.reference)?;
    let tool = args
        .pesq_tool
        .or_else(|| std::env::var_os(harness::PESQ_TOOL_ENV).map(PathBuf::from));
    let report = metrics::evaluate(&estimate, &reference, tool.as_deref())?;
    emit(args.out.as_deref(), &serde_json::to_string_pretty(&report)?)
}

// ---------------------------------------------------------------------------
// run / sweep
// ---------------------------------------------------------------------------

#[derive(Args)]
struct RunArgs {
    /// Experiment config JSON.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config's output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Scenario-count override.
    #[arg(long)]
    scenarios: Option<usize>,
    /// Microphone-count override.
    #[arg(long)]
    mics: Option<usize>,
}

fn load_config(
    path: &Path,
    out: Option<PathBuf>,
    seed: Option<u64>,
    scenarios: Option<usize>,
    mics: Option<usize>,
) -> anyhow::Result<ExperimentConfig> {
    let mut config: ExperimentConfig = io::read_json(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    if out.is_some() {
        config.output_dir = out;
    }
    if let Some(seed) = seed {
        config.master_seed = seed;
    }
    if let Some(n) = scenarios {
        config.num_scenarios = n;
    }
    if let Some(w) = mics {
        config.num_mics = w;
    }
    if config.output_dir.is_none() {
        bail!("no output directory: set output_dir in the config or pass --out");
    }
    Ok(config)
}

fn report_table(table: &ResultTable, config: &ExperimentConfig) {
    for skip in &table.skipped {
        eprintln!(
            "scenario {} (seed {}) skipped: {}",
            skip.scenario_id, skip.scenario_seed, skip.reason
        );
    }
    print!("{}", table.aggregate_csv_string());
    let dir = config.output_dir.as_deref().expect("checked at config load");
    println!(
        "{} rows ({} scenarios skipped) written to {}",
        table.rows.len(),
        table.skipped.len(),
        dir.display()
    );
}

fn run(args: RunArgs) -> anyhow::Result<()> {
    let config = load_config(&args.config, args.out, args.seed, args.scenarios, args.mics)?;
    let table = run_experiment(&config)?;
    report_table(&table, &config);
    Ok(())
}

#[derive(Args)]
struct SweepArgs {
    /// Experiment config JSON.
    #[arg(long)]
    config: PathBuf,
    /// Fixed-n grid, e.g. 2,4,8,16. Mutually exclusive with --gamma-values.
    #[arg(long, value_delimiter = ',')]
    n_values: Vec<usize>,
    /// Gamma grid for auto-n and soft-n, e.g. 0.1,0.3,0.5.
    #[arg(long, value_delimiter = ',')]
    gamma_values: Vec<f64>,
    /// Output directory; overrides the config's output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
}

fn sweep(args: SweepArgs) -> anyhow::Result<()> {
    let config = load_config(&args.config, args.out, args.seed, None, None)?;
    let table = match (args.n_values.is_empty(), args.gamma_values.is_empty()) {
        (false, true) => sweep_n(&config, &args.n_values)?,
        (true, false) => sweep_gamma(&config, &args.gamma_values)?,
        _ => bail!("pass exactly one of --n-values or --gamma-values"),
    };
    report_table(&table, &config);
    Ok(())
}
