//! Command-line front end: `gen`, `characterize`, `run`, `sweep`, `verify`.
//!
//! Every command writes CSV or plain text to the supplied writer. Exit codes:
//! 0 success, 1 runtime or data error, 2 usage error.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cost::{latency, ratio_matrix, CostModel, RunMetrics};
use crate::fxp::BetaSpec;
use crate::neuron::divergence::{event_divergence, frozen_bound, StudyCase};
use crate::neuron::{
    reference_run, run_with_costs, Architecture, DecayImpl, IoMode, Mode, NeuronConfig, NeuronError,
    ResetMode, Trace,
};
use crate::stimulus::{
    self, decode_aer, decode_serial, encode_aer, encode_serial, from_text, generate, measure_density, to_text,
    DensityProfile, SpikeTrain, GENERATOR_NAME,
};

pub const CSV_HEADER: &str = "config,mode,decay,io,temporal_density,input_density,trial,seed,\
latency_cycles,energy_units,power_units_per_cycle,ratio_vs_clock_mult,ratio_vs_clock_shift";

pub const SUMMARY_HEADER: &str = "config,mode,decay,io,temporal_density,input_density,trials,\
latency_mean,latency_std,energy_mean,energy_std,power_mean,power_std";

pub const TRACE_HEADER: &str = "time,u_raw,fired,updated";

pub const DEFAULT_THRESHOLD: i64 = 64;
pub const DEFAULT_WEIGHT: i64 = 20;
pub const DEFAULT_BETA_SHIFT: u32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0:#}")]
    Runtime(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

fn runtime(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Runtime(e.into())
}

#[derive(Debug, Parser)]
#[command(name = "lifsim", version, about = "Clock- and event-driven LIF neuron architecture simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded spike-train file.
    Gen(GenArgs),
    /// Print the temporal and input density of a spike-train file.
    Characterize { path: PathBuf },
    /// Run one architecture on a spike-train file and print its metrics row.
    Run(RunArgs),
    /// Sweep temporal and input densities across all six architectures.
    Sweep(SweepArgs),
    /// Run the oracle checks and report the first counterexample.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// One of mnist, nmnist, audiomnist.
    #[arg(long, conflicts_with_all = ["temporal", "input"])]
    pub preset: Option<String>,
    #[arg(long, requires = "input")]
    pub temporal: Option<f64>,
    #[arg(long, requires = "temporal")]
    pub input: Option<f64>,
    #[arg(long, default_value_t = 8)]
    pub channels: u32,
    #[arg(long, default_value_t = 100)]
    pub steps: u32,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Clock,
    Event,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DecayArg {
    Mult,
    Shift,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum IoArg {
    Serial,
    Aer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ResetArg {
    Zero,
    Subtract,
}

/// Neuron and cost-model flags shared by `run` and `sweep`.
#[derive(Debug, Clone, Args)]
pub struct NeuronArgs {
    #[arg(long, value_enum, default_value_t = ResetArg::Zero)]
    pub reset: ResetArg,
    /// Real decay factor in (0, 1).
    #[arg(long, conflicts_with = "beta_shift")]
    pub beta: Option<f64>,
    /// Decay factor 1 - 2^-n.
    #[arg(long)]
    pub beta_shift: Option<u32>,
    /// Firing threshold, raw membrane LSBs.
    #[arg(long, default_value_t = DEFAULT_THRESHOLD, allow_negative_numbers = true)]
    pub threshold: i64,
    /// Comma-separated raw input weights, one per channel.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub weights: Option<Vec<i64>>,
    /// File of raw weights separated by commas or whitespace.
    #[arg(long, conflicts_with = "weights")]
    pub weights_file: Option<PathBuf>,
    #[arg(long, allow_negative_numbers = true)]
    pub bias: Option<i64>,
    #[arg(long, default_value_t = 9)]
    pub membrane_bits: u32,
    #[arg(long, default_value_t = 6)]
    pub weight_bits: u32,
    #[arg(long, default_value_t = 7)]
    pub counter_bits: u32,
    /// Cost-model config file (`key = value` lines).
    #[arg(long)]
    pub costs: Option<PathBuf>,
}

impl Default for NeuronArgs {
    fn default() -> Self {
        Self {
            reset: ResetArg::Zero,
            beta: None,
            beta_shift: None,
            threshold: DEFAULT_THRESHOLD,
            weights: None,
            weights_file: None,
            bias: None,
            membrane_bits: 9,
            weight_bits: 6,
            counter_bits: 7,
            costs: None,
        }
    }
}

impl NeuronArgs {
    pub fn beta_spec(&self) -> BetaSpec {
        match (self.beta, self.beta_shift) {
            (Some(b), _) => BetaSpec::Exact(b),
            (None, Some(n)) => BetaSpec::OneMinusPow2(n),
            (None, None) => BetaSpec::OneMinusPow2(DEFAULT_BETA_SHIFT),
        }
    }

    fn weights_raw(&self, n_channels: u32) -> Result<Vec<i64>, CliError> {
        if let Some(w) = &self.weights {
            return Ok(w.clone());
        }
        let Some(path) = &self.weights_file else {
            return Ok(vec![DEFAULT_WEIGHT; n_channels as usize]);
        };
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))
            .map_err(runtime)?;
        text.split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<i64>()
                    .map_err(|e| runtime(anyhow!("{}: bad weight {s:?}: {e}", path.display())))
            })
            .collect()
    }

    /// Neuron configuration for `arch` on `n_channels` inputs.
    pub fn config(&self, arch: Architecture, n_channels: u32) -> Result<NeuronConfig, CliError> {
        let weights = self.weights_raw(n_channels)?;
        if weights.len() != n_channels as usize {
            return Err(runtime(anyhow!(
                "{} weights given for a {n_channels}-channel train",
                weights.len()
            )));
        }
        NeuronConfig::builder(arch, self.beta_spec(), self.threshold, weights)
            .reset(match self.reset {
                ResetArg::Zero => ResetMode::Zero,
                ResetArg::Subtract => ResetMode::Subtract,
            })
            .bias(self.bias)
            .membrane_bits(self.membrane_bits)
            .weight_bits(self.weight_bits)
            .counter_bits(self.counter_bits)
            .build()
            .map_err(|e| CliError::Usage(e.to_string()))
    }

    pub fn cost_model(&self) -> Result<CostModel, CliError> {
        match &self.costs {
            Some(p) => CostModel::load(p)
                .with_context(|| format!("loading {}", p.display()))
                .map_err(runtime),
            None => Ok(CostModel::default()),
        }
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    pub train: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Clock)]
    pub mode: ModeArg,
    #[arg(long, value_enum, default_value_t = DecayArg::Mult)]
    pub decay: DecayArg,
    #[arg(long, value_enum, default_value_t = IoArg::Serial)]
    pub io: IoArg,
    #[command(flatten)]
    pub neuron: NeuronArgs,
    /// Append one row per timestep after the metrics row.
    #[arg(long)]
    pub trace: bool,
    /// Write the decay lookup table as CSV (`dt,raw_or_shift`).
    #[arg(long)]
    pub dump_lut: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Comma-separated temporal densities; default 0.05 to 1.00 in steps of 0.05.
    #[arg(long, value_delimiter = ',')]
    pub temporal: Option<Vec<f64>>,
    /// Comma-separated input densities; default 0.25,0.5,0.75,1.
    #[arg(long, value_delimiter = ',')]
    pub input: Option<Vec<f64>>,
    #[arg(long, default_value_t = 8)]
    pub channels: u32,
    #[arg(long, default_value_t = 100)]
    pub steps: u32,
    #[arg(long, default_value_t = 20)]
    pub trials: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Comma-separated architecture names; default all six.
    #[arg(long, value_delimiter = ',')]
    pub configs: Option<Vec<String>>,
    #[command(flatten)]
    pub neuron: NeuronArgs,
    /// Output CSV path; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-point mean and sample standard deviation CSV.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 1000)]
    pub trials: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Parse `args` (program name first), run the command and return the exit code.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command, out: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::Gen(a) => cmd_gen(&a, out),
        Command::Characterize { path } => cmd_characterize(&path, out),
        Command::Run(a) => cmd_run(&a, out),
        Command::Sweep(a) => cmd_sweep(&a, out),
        Command::Verify(a) => cmd_verify(&a, out),
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes()).context("writing output").map_err(runtime)
}

fn density_lines(d: DensityProfile) -> String {
    format!("temporal_density,input_density\n{},{}\n", d.temporal, d.input)
}

pub fn cmd_gen(args: &GenArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let profile = match (&args.preset, args.temporal, args.input) {
        (Some(name), ..) => DensityProfile::preset(name).ok_or_else(|| {
            CliError::Usage(format!("unknown preset {name:?}; expected one of {}", stimulus::PRESETS.join(", ")))
        })?,
        (None, Some(t), Some(i)) => DensityProfile::new(t, i).map_err(|e| CliError::Usage(e.to_string()))?,
        _ => return Err(CliError::Usage("give --preset or both --temporal and --input".into())),
    };
    let train = generate(profile, args.channels, args.steps, args.seed).map_err(|e| CliError::Usage(e.to_string()))?;
    let comments = vec![format!(
        "generator={GENERATOR_NAME} seed={} temporal={} input={}{}",
        args.seed,
        profile.temporal,
        profile.input,
        args.preset.as_ref().map(|p| format!(" preset={p}")).unwrap_or_default()
    )];
    stimulus::save_with_comments(&train, &args.out, &comments)
        .with_context(|| format!("writing {}", args.out.display()))
        .map_err(runtime)?;
    emit(out, &density_lines(measure_density(&train)))
}

pub fn cmd_characterize(path: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    let train = load_train(path)?;
    emit(out, &density_lines(measure_density(&train)))
}

fn load_train(path: &Path) -> Result<SpikeTrain, CliError> {
    stimulus::load(path)
        .with_context(|| format!("loading {}", path.display()))
        .map_err(runtime)
}

/// One line of the metrics CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub arch: Architecture,
    pub temporal_density: f64,
    pub input_density: f64,
    /// Trial index, or `mean` for an aggregate row.
    pub trial: String,
    pub seed: Option<u64>,
    pub latency_cycles: f64,
    pub energy_units: f64,
    pub power_units_per_cycle: f64,
    pub ratio_vs_clock_mult: f64,
    pub ratio_vs_clock_shift: f64,
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.arch.name(),
            self.arch.mode().name(),
            self.arch.decay().name(),
            self.arch.io().name(),
            self.temporal_density,
            self.input_density,
            self.trial,
            self.seed.map(|s| s.to_string()).unwrap_or_default(),
            self.latency_cycles,
            self.energy_units,
            self.power_units_per_cycle,
            self.ratio_vs_clock_mult,
            self.ratio_vs_clock_shift,
        )
    }
}

/// Metrics of one architecture on one train, with latency ratios against both
/// clock-driven baselines on the same train.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub arch: Architecture,
    pub metrics: RunMetrics,
    pub clock_latencies: [u64; 2],
    pub ratios: [f64; 2],
}

pub fn evaluate(
    template: &NeuronConfig,
    model: &CostModel,
    train: &SpikeTrain,
    arch: Architecture,
) -> Result<(Evaluation, Trace), CliError> {
    let cfg = template.with_arch(arch).map_err(|e| CliError::Usage(e.to_string()))?;
    let trace = run_with_costs(&cfg, train, &model.cycles).map_err(runtime)?;
    let metrics = RunMetrics::from_trace(&trace, arch.io(), model);
    let clocks = [Architecture::ClockMult, Architecture::ClockShift].map(|a| {
        let c = template.with_arch(a).expect("clock architectures always build");
        (a, latency(&c, train, &model.cycles))
    });
    let ratios = ratio_matrix(&[(arch, metrics.latency_cycles)], &clocks).map_err(runtime)?;
    Ok((
        Evaluation {
            arch,
            metrics,
            clock_latencies: [clocks[0].1, clocks[1].1],
            ratios: [ratios[0][0], ratios[0][1]],
        },
        trace,
    ))
}

pub fn cmd_run(args: &RunArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let arch = Architecture::from_parts(
        match args.mode {
            ModeArg::Clock => Mode::ClockDriven,
            ModeArg::Event => Mode::EventDriven,
        },
        match args.decay {
            DecayArg::Mult => DecayImpl::Multiplier,
            DecayArg::Shift => DecayImpl::Shifter,
        },
        match args.io {
            IoArg::Serial => IoMode::Serial,
            IoArg::Aer => IoMode::Aer,
        },
    )
    .map_err(|e| CliError::Usage(e.to_string()))?;
    let train = load_train(&args.train)?;
    let template = args.neuron.config(arch, train.n_channels())?;
    let model = args.neuron.cost_model()?;
    if let Some(path) = &args.dump_lut {
        let mut csv = String::from("dt,raw_or_shift\n");
        for (dt, v) in template.lut().rows() {
            let _ = writeln!(csv, "{dt},{v}");
        }
        fs::write(path, csv)
            .with_context(|| format!("writing {}", path.display()))
            .map_err(runtime)?;
    }
    let (eval, trace) = evaluate(&template, &model, &train, arch)?;
    let d = measure_density(&train);
    let row = MetricsRow {
        arch,
        temporal_density: d.temporal,
        input_density: d.input,
        trial: "0".into(),
        seed: None,
        latency_cycles: eval.metrics.latency_cycles as f64,
        energy_units: eval.metrics.energy_units,
        power_units_per_cycle: eval.metrics.avg_power_units,
        ratio_vs_clock_mult: eval.ratios[0],
        ratio_vs_clock_shift: eval.ratios[1],
    };
    let mut text = format!("{CSV_HEADER}\n{}\n", row.to_csv());
    if args.trace {
        text.push_str(&trace_csv(&trace, &template));
    }
    emit(out, &text)
}

/// One row per timestep. Between event-driven updates the stored membrane is
/// held, with `updated` = 0.
pub fn trace_csv(trace: &Trace, config: &NeuronConfig) -> String {
    let mut csv = format!("{TRACE_HEADER}\n");
    let mut held = config.initial_membrane().raw();
    let mut records = trace.records.iter().peekable();
    for t in 0..trace.n_steps {
        match records.next_if(|r| r.time == t) {
            Some(r) => {
                held = r.u_raw;
                let _ = writeln!(csv, "{t},{},{},1", r.u_raw, r.fired as u8);
            }
            None => {
                let _ = writeln!(csv, "{t},{held},0,0");
            }
        }
    }
    csv
}

/// Density grid and trial count of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub temporal: Vec<f64>,
    pub input: Vec<f64>,
    pub n_channels: u32,
    pub n_steps: u32,
    pub trials: u32,
    pub base_seed: u64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            temporal: (1..=20).map(|k| k as f64 / 20.0).collect(),
            input: vec![0.25, 0.5, 0.75, 1.0],
            n_channels: 8,
            n_steps: 100,
            trials: 20,
            base_seed: 0,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.temporal.is_empty() || self.input.is_empty() {
            return Err("density lists must be non-empty".into());
        }
        if let Some(d) = self.temporal.iter().chain(&self.input).find(|d| !(**d > 0.0 && **d <= 1.0)) {
            return Err(format!("density {d} outside (0, 1]"));
        }
        if self.trials == 0 {
            return Err("trials must be at least 1".into());
        }
        if self.n_channels == 0 {
            return Err("channels must be at least 1".into());
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<(f64, f64)> {
        self.temporal
            .iter()
            .flat_map(|&t| self.input.iter().map(move |&i| (t, i)))
            .collect()
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Train seed of trial `trial` at grid point `point`.
pub fn point_seed(base_seed: u64, point: usize, trial: u32) -> u64 {
    splitmix64(base_seed ^ splitmix64(((point as u64) << 32) | trial as u64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub arch: Architecture,
    pub temporal_density: f64,
    pub input_density: f64,
    pub trials: u32,
    pub latency: (f64, f64),
    pub energy: (f64, f64),
    pub power: (f64, f64),
}

impl SummaryRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.arch.name(),
            self.arch.mode().name(),
            self.arch.decay().name(),
            self.arch.io().name(),
            self.temporal_density,
            self.input_density,
            self.trials,
            self.latency.0,
            self.latency.1,
            self.energy.0,
            self.energy.1,
            self.power.0,
            self.power.1,
        )
    }
}

/// Mean and sample standard deviation (0 for a single sample).
fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepOutput {
    pub rows: Vec<MetricsRow>,
    pub summary: Vec<SummaryRow>,
}

impl SweepOutput {
    pub fn csv(&self) -> String {
        let mut s = format!("{CSV_HEADER}\n");
        for r in &self.rows {
            s.push_str(&r.to_csv());
            s.push('\n');
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        let mut s = format!("{SUMMARY_HEADER}\n");
        for r in &self.summary {
            s.push_str(&r.to_csv());
            s.push('\n');
        }
        s
    }
}

/// Every architecture in `archs` on every `(point, trial)` train. Points run
/// in parallel; output order is grid order, then trial, then `archs` order,
/// with each point's `mean` rows after its trials.
pub fn sweep(
    spec: &SweepSpec,
    neuron: &NeuronArgs,
    model: &CostModel,
    archs: &[Architecture],
) -> Result<SweepOutput, CliError> {
    spec.validate().map_err(CliError::Usage)?;
    let template = neuron.config(Architecture::ClockMult, spec.n_channels)?;
    let per_point: Vec<Result<SweepOutput, CliError>> = spec
        .points()
        .into_par_iter()
        .enumerate()
        .map(|(p, (td, id))| {
            let mut out = SweepOutput::default();
            let mut evals: Vec<Vec<Evaluation>> = vec![Vec::new(); archs.len()];
            for trial in 0..spec.trials {
                let seed = point_seed(spec.base_seed, p, trial);
                let profile = DensityProfile::new(td, id).map_err(|e| CliError::Usage(e.to_string()))?;
                let train = generate(profile, spec.n_channels, spec.n_steps, seed).map_err(runtime)?;
                for (k, &arch) in archs.iter().enumerate() {
                    let (e, _) = evaluate(&template, model, &train, arch)?;
                    out.rows.push(MetricsRow {
                        arch,
                        temporal_density: td,
                        input_density: id,
                        trial: trial.to_string(),
                        seed: Some(seed),
                        latency_cycles: e.metrics.latency_cycles as f64,
                        energy_units: e.metrics.energy_units,
                        power_units_per_cycle: e.metrics.avg_power_units,
                        ratio_vs_clock_mult: e.ratios[0],
                        ratio_vs_clock_shift: e.ratios[1],
                    });
                    evals[k].push(e);
                }
            }
            for (k, &arch) in archs.iter().enumerate() {
                let col = |f: &dyn Fn(&Evaluation) -> f64| evals[k].iter().map(f).collect::<Vec<f64>>();
                let lat = col(&|e| e.metrics.latency_cycles as f64);
                let en = col(&|e| e.metrics.energy_units);
                let pw = col(&|e| e.metrics.avg_power_units);
                let (l, e) = (mean_std(&lat), mean_std(&en));
                let clock_mean = |i: usize| mean_std(&col(&|e| e.clock_latencies[i] as f64)).0;
                out.rows.push(MetricsRow {
                    arch,
                    temporal_density: td,
                    input_density: id,
                    trial: "mean".into(),
                    seed: None,
                    latency_cycles: l.0,
                    energy_units: e.0,
                    power_units_per_cycle: if l.0 == 0.0 { 0.0 } else { e.0 / l.0 },
                    ratio_vs_clock_mult: l.0 / clock_mean(0),
                    ratio_vs_clock_shift: l.0 / clock_mean(1),
                });
                out.summary.push(SummaryRow {
                    arch,
                    temporal_density: td,
                    input_density: id,
                    trials: spec.trials,
                    latency: l,
                    energy: e,
                    power: mean_std(&pw),
                });
            }
            Ok(out)
        })
        .collect();
    let mut all = SweepOutput::default();
    for part in per_point {
        let part = part?;
        all.rows.extend(part.rows);
        all.summary.extend(part.summary);
    }
    Ok(all)
}

pub fn parse_archs(names: &[String]) -> Result<Vec<Architecture>, CliError> {
    names
        .iter()
        .map(|n| {
            Architecture::ALL.into_iter().find(|a| a.name() == n).ok_or_else(|| {
                let known: Vec<_> = Architecture::ALL.iter().map(|a| a.name()).collect();
                CliError::Usage(format!("unknown config {n:?}; expected one of {}", known.join(", ")))
            })
        })
        .collect()
}

pub fn cmd_sweep(args: &SweepArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let defaults = SweepSpec::default();
    let spec = SweepSpec {
        temporal: args.temporal.clone().unwrap_or(defaults.temporal),
        input: args.input.clone().unwrap_or(defaults.input),
        n_channels: args.channels,
        n_steps: args.steps,
        trials: args.trials,
        base_seed: args.seed,
    };
    let archs = match &args.configs {
        Some(names) => parse_archs(names)?,
        None => Architecture::ALL.to_vec(),
    };
    let model = args.neuron.cost_model()?;
    let result = sweep(&spec, &args.neuron, &model, &archs)?;
    if let Some(path) = &args.summary {
        fs::write(path, result.summary_csv())
            .with_context(|| format!("writing {}", path.display()))
            .map_err(runtime)?;
    }
    match &args.out {
        Some(path) => fs::write(path, result.csv())
            .with_context(|| format!("writing {}", path.display()))
            .map_err(runtime),
        None => emit(out, &result.csv()),
    }
}

/// Engine under verification; [`crate::neuron::run`] for a correct build.
pub type Runner<'a> = dyn Fn(&NeuronConfig, &SpikeTrain) -> Result<Trace, NeuronError> + Sync + 'a;

/// Train `index` of the randomized suite rooted at `base_seed`: 8 channels,
/// 100 steps, temporal and input densities drawn uniformly.
pub fn suite_train(base_seed: u64, index: u32) -> (u64, SpikeTrain) {
    let seed = point_seed(base_seed, usize::MAX, index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let temporal: f64 = rng.gen_range(0.0..=1.0);
    let input: f64 = rng.gen_range(0.01..=1.0);
    let profile = DensityProfile::new(temporal, input).expect("drawn densities are in range");
    let train = generate(profile, 8, 100, seed).expect("8 x 100 trains are always valid");
    (seed, train)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Counterexample {
    pub seed: Option<u64>,
    pub step: u32,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub summary: String,
    pub counterexample: Option<Counterexample>,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.counterexample.is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<CheckOutcome>,
    pub max_divergence: i32,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckOutcome::passed)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let _ = writeln!(s, "{}: {} ({})", c.name, if c.passed() { "PASS" } else { "FAIL" }, c.summary);
        }
        let _ = writeln!(s, "max_divergence={}", self.max_divergence);
        if let Some(c) = self.checks.iter().find_map(|c| c.counterexample.as_ref().map(|x| (c.name, x))) {
            let seed = c.1.seed.map(|s| s.to_string()).unwrap_or_else(|| "-".into());
            let _ = writeln!(s, "counterexample: check={} seed={seed} step={} {}", c.0, c.1.step, c.1.detail);
        }
        s
    }
}

/// |a - b| within `rel` of the larger magnitude (floored at 1 LSB).
pub fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

pub const REAL_TOLERANCE: f64 = 1e-9;

fn first<T>(slot: &mut Option<T>, value: T) {
    if slot.is_none() {
        *slot = Some(value);
    }
}

fn study_cases() -> Vec<StudyCase> {
    StudyCase::all()
}

fn check_real_equivalence(trains: &[(u64, SpikeTrain)]) -> Result<CheckOutcome, CliError> {
    let mut cx = None;
    let mut worst: f64 = 0.0;
    for case in study_cases().into_iter().filter(|c| c.decay == DecayImpl::Multiplier) {
        let clock = case.config(case.clock_arch(), 8).map_err(runtime)?;
        let event = case.config(case.event_arch(), 8).map_err(runtime)?;
        for (seed, train) in trains {
            let c = reference_run(&clock, train).map_err(runtime)?;
            let e = reference_run(&event, train).map_err(runtime)?;
            for r in &e.records {
                let Some(cr) = c.record_at(r.time) else { continue };
                worst = worst.max((r.u - cr.u).abs() / r.u.abs().max(cr.u.abs()).max(1.0));
                if !close(r.u, cr.u, REAL_TOLERANCE) || r.fired != cr.fired {
                    first(
                        &mut cx,
                        Counterexample {
                            seed: Some(*seed),
                            step: r.time,
                            detail: format!("{}: clock {} vs event {}", case.label(), cr.u, r.u),
                        },
                    );
                }
            }
        }
    }
    Ok(CheckOutcome {
        name: "real_equivalence",
        summary: format!("max relative error {worst:e}"),
        counterexample: cx,
    })
}

fn check_divergence(trains: &[(u64, SpikeTrain)], runner: &Runner) -> Result<(CheckOutcome, i32), CliError> {
    let mut cx = None;
    let mut worst = 0;
    for case in study_cases() {
        let bound = frozen_bound(&case).expect("study cases use 1 - 2^-n betas");
        let clock_cfg = case.config(case.clock_arch(), 8).map_err(runtime)?;
        let event_cfg = case.config(case.event_arch(), 8).map_err(runtime)?;
        for (seed, train) in trains {
            let clock = runner(&clock_cfg, train).map_err(runtime)?;
            let event = runner(&event_cfg, train).map_err(runtime)?;
            worst = worst.max(event_divergence(&clock, &event));
            for r in &event.records {
                let Some(c) = clock.record_at(r.time) else { continue };
                let gap = (c.u_raw - r.u_raw).abs();
                if gap > bound {
                    first(
                        &mut cx,
                        Counterexample {
                            seed: Some(*seed),
                            step: r.time,
                            detail: format!("{}: divergence {gap} exceeds {bound}", case.label()),
                        },
                    );
                }
            }
        }
    }
    let outcome = CheckOutcome {
        name: "divergence_bound",
        summary: format!("max {worst} LSB"),
        counterexample: cx,
    };
    Ok((outcome, worst))
}

fn check_io_stability(trains: &[(u64, SpikeTrain)], runner: &Runner) -> Result<CheckOutcome, CliError> {
    let mut cx = None;
    for case in study_cases() {
        let serial = case.config(case.event_arch(), 8).map_err(runtime)?;
        let aer_arch = Architecture::EventAerMult.with_decay(case.decay);
        let aer = serial.with_arch(aer_arch).map_err(runtime)?;
        for (seed, train) in trains {
            let a = runner(&serial, train).map_err(runtime)?.fire_times();
            let b = runner(&aer, train).map_err(runtime)?.fire_times();
            if a != b {
                let step = a.iter().zip(&b).find(|(x, y)| x != y).map_or_else(
                    || *a.get(b.len()).or(b.get(a.len())).expect("lengths differ"),
                    |(x, y)| *x.min(y),
                );
                first(
                    &mut cx,
                    Counterexample {
                        seed: Some(*seed),
                        step,
                        detail: format!("{}: serial and AER fire sets differ", case.label()),
                    },
                );
            }
        }
    }
    Ok(CheckOutcome {
        name: "io_stability",
        summary: "serial and AER fire sets compared".into(),
        counterexample: cx,
    })
}

fn check_round_trips(trains: &[(u64, SpikeTrain)]) -> CheckOutcome {
    let mut cx = None;
    for (seed, train) in trains {
        let n = train.n_channels();
        let serial = decode_serial(&encode_serial(train), n).ok();
        let aer = encode_aer(train, 7, 3)
            .and_then(|p| decode_aer(&p, n, train.n_steps()))
            .ok();
        let text = from_text(&to_text(train, &[])).ok();
        for (name, back) in [("serial", serial), ("aer", aer), ("text", text)] {
            if back.as_ref() != Some(train) {
                first(
                    &mut cx,
                    Counterexample {
                        seed: Some(*seed),
                        step: 0,
                        detail: format!("{name} round trip changed the train"),
                    },
                );
            }
        }
    }
    CheckOutcome {
        name: "round_trips",
        summary: format!("{} trains x 3 encodings", trains.len()),
        counterexample: cx,
    }
}

/// Inputs summing exactly to the threshold must fire in every architecture.
fn check_exact_threshold(runner: &Runner) -> Result<CheckOutcome, CliError> {
    let mut cx = None;
    let train = SpikeTrain::from_events(8, 4, [(1, 0), (1, 1)]).map_err(runtime)?;
    for arch in Architecture::ALL {
        let cfg = NeuronConfig::builder(arch, BetaSpec::OneMinusPow2(4), 40, vec![20; 8])
            .build()
            .map_err(runtime)?;
        let fires = runner(&cfg, &train).map_err(runtime)?.fire_times();
        if fires != [1] {
            first(
                &mut cx,
                Counterexample {
                    seed: None,
                    step: 1,
                    detail: format!("{arch}: input equal to threshold fired at {fires:?}"),
                },
            );
        }
    }
    Ok(CheckOutcome {
        name: "exact_threshold",
        summary: "u == threshold fires".into(),
        counterexample: cx,
    })
}

pub fn verify_with(trials: u32, seed: u64, runner: &Runner) -> Result<VerifyReport, CliError> {
    if trials == 0 {
        return Err(CliError::Usage("trials must be at least 1".into()));
    }
    let trains: Vec<(u64, SpikeTrain)> = (0..trials).into_par_iter().map(|i| suite_train(seed, i)).collect();
    let (divergence, max_divergence) = check_divergence(&trains, runner)?;
    Ok(VerifyReport {
        checks: vec![
            check_real_equivalence(&trains)?,
            divergence,
            check_io_stability(&trains, runner)?,
            check_round_trips(&trains),
            check_exact_threshold(runner)?,
        ],
        max_divergence,
    })
}

pub fn cmd_verify(args: &VerifyArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let report = verify_with(args.trials, args.seed, &|c, t| crate::neuron::run(c, t))?;
    emit(out, &report.render())?;
    if report.passed() {
        Ok(())
    } else {
        Err(runtime(anyhow!("verification failed")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exec(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = main_with_args(std::iter::once("lifsim").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn clock_with_aer_is_a_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.txt");
        stimulus::save(&SpikeTrain::empty(8, 10), &p).unwrap();
        let (code, _, err) = exec(&["run", p.to_str().unwrap(), "--mode", "clock", "--io", "aer"]);
        assert_eq!(code, 2);
        assert!(err.contains("serial input only"), "{err}");
    }

    #[test]
    fn bad_flags_are_usage_errors() {
        assert_eq!(exec(&["run"]).0, 2);
        assert_eq!(exec(&["bogus"]).0, 2);
        assert_eq!(exec(&["gen", "--preset", "cifar", "--seed", "1", "--out", "x"]).0, 2);
        assert_eq!(exec(&["sweep", "--temporal", "0", "--trials", "1"]).0, 2);
        assert_eq!(exec(&["characterize", "/nonexistent/train.txt"]).0, 1);
        assert_eq!(exec(&["--help"]).0, 0);
    }

    #[test]
    fn empty_train_clock_latency() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.txt");
        stimulus::save(&SpikeTrain::empty(8, 100), &p).unwrap();
        let (code, out, _) = exec(&["run", p.to_str().unwrap()]);
        assert_eq!(code, 0);
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        let fields: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(fields[0], "clock-serial-mult");
        assert_eq!(fields[8], "200");
        assert_eq!((fields[11], fields[12]), ("1", "1"));
    }

    #[test]
    fn trace_adds_header_and_one_row_per_step() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.txt");
        stimulus::save(&SpikeTrain::from_events(8, 30, [(4, 1), (9, 0)]).unwrap(), &p).unwrap();
        for mode in ["clock", "event"] {
            let (code, out, _) = exec(&["run", p.to_str().unwrap(), "--mode", mode, "--trace"]);
            assert_eq!(code, 0);
            let lines: Vec<&str> = out.lines().collect();
            assert_eq!(lines.len(), 2 + 30 + 1);
            assert_eq!(lines[2], TRACE_HEADER);
            assert!(lines[3].starts_with("0,"));
        }
    }

    #[test]
    fn lut_dump() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.txt");
        let lut = dir.path().join("lut.csv");
        stimulus::save(&SpikeTrain::empty(8, 10), &p).unwrap();
        let args = ["run", p.to_str().unwrap(), "--mode", "event", "--decay", "shift", "--dump-lut", lut.to_str().unwrap()];
        assert_eq!(exec(&args).0, 0);
        let csv = fs::read_to_string(&lut).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "dt,raw_or_shift");
        assert_eq!(lines.len(), 1 + 128);
        assert_eq!(lines[7], "6,1");
    }

    #[test]
    fn weight_count_must_match_channels() {
        let args = NeuronArgs {
            weights: Some(vec![1, 2, 3]),
            ..NeuronArgs::default()
        };
        assert_eq!(args.config(Architecture::ClockMult, 8).unwrap_err().exit_code(), 1);
        assert_eq!(args.config(Architecture::ClockMult, 3).unwrap().n_inputs(), 3);
    }

    #[test]
    fn weights_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.txt");
        fs::write(&p, "1, 2\n-3 4\n").unwrap();
        let args = NeuronArgs {
            weights_file: Some(p),
            ..NeuronArgs::default()
        };
        let raw: Vec<i32> = args.config(Architecture::ClockMult, 4).unwrap().weights().iter().map(|w| w.raw()).collect();
        assert_eq!(raw, [1, 2, -3, 4]);
    }

    #[test]
    fn point_seeds_are_distinct() {
        let mut seen = std::collections::HashSet::new();
        for p in 0..80 {
            for t in 0..20 {
                assert!(seen.insert(point_seed(0, p, t)));
            }
        }
        assert_ne!(point_seed(0, 0, 0), point_seed(1, 0, 0));
    }

    #[test]
    fn spec_validation() {
        assert!(SweepSpec::default().validate().is_ok());
        assert_eq!(SweepSpec::default().points().len(), 80);
        let bad = |f: fn(&mut SweepSpec)| {
            let mut s = SweepSpec::default();
            f(&mut s);
            s.validate().is_err()
        };
        assert!(bad(|s| s.temporal.clear()));
        assert!(bad(|s| s.input = vec![1.5]));
        assert!(bad(|s| s.trials = 0));
    }

    #[test]
    fn mean_std_examples() {
        assert_eq!(mean_std(&[3.0]), (3.0, 0.0));
        let (m, s) = mean_std(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!(m, 5.0);
        assert!((s - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn verify_passes_and_catches_strict_comparison() {
        let report = verify_with(40, 3, &|c, t| crate::neuron::run(c, t)).unwrap();
        assert!(report.passed(), "{}", report.render());
        let strict = |c: &NeuronConfig, t: &SpikeTrain| {
            let raised = c.to_builder().threshold(c.threshold().raw() as i64 + 1).build()?;
            crate::neuron::run(&raised, t)
        };
        let report = verify_with(40, 3, &strict).unwrap();
        assert!(!report.passed());
        let exact = report.checks.iter().find(|c| c.name == "exact_threshold").unwrap();
        let cx = exact.counterexample.as_ref().unwrap();
        assert_eq!((cx.seed, cx.step), (None, 1));
        assert!(report.render().contains("counterexample: check="));
    }
}
