//! Command-line front end. [`run`] parses arguments, dispatches, and maps
//! errors to exit codes: 0 success, 1 numeric, 2 data, 3 configuration.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::bias::{assemble_bias_stack, DumpFormat, PeriodSet, Regime};
use crate::data::{
    chronological_split, detect_periods_acf, load_csv, prepare_splits, synth_series, write_csv, Component, Scaler,
    SeriesTable, SplitRatios, SynthSpec, WindowedDataset,
};
use crate::error::{Error, Result};
use crate::gradcheck::{gradcheck, GradcheckOptions};
use crate::model::{load_checkpoint, read_checkpoint_header, save_checkpoint, Penguin, PenguinConfig};
use crate::tensor::{Float, Precision, Tensor};
use crate::train::{ablation_sweep, evaluate, summarize, train, write_sweep_csv, RunManifest, TrainConfig};

#[derive(Parser, Debug)]
#[command(name = "penguin", version, about = "Periodic-nested grouped attention forecaster")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic multi-period series as CSV.
    Synth(SynthArgs),
    /// Train a model from a run config; writes checkpoint, history and manifest.
    Train(TrainArgs),
    /// Score a checkpoint on the test split; prints a JSON report.
    Eval(EvalArgs),
    /// Forecast the horizon that follows the last look-back window of a CSV.
    Forecast(ForecastArgs),
    /// Write every head's bias matrix as CSV or PGM.
    DumpBias(DumpBiasArgs),
    /// Finite-difference gradient check on a tiny model.
    Gradcheck(GradcheckArgs),
    /// Train one model per (regime, period set, seed) and compare.
    Sweep(SweepArgs),
    /// Autocorrelation peaks of one column.
    DetectPeriods(DetectArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4000)]
    length: usize,
    #[arg(long, default_value_t = 1)]
    channels: usize,
    #[arg(long, value_delimiter = ',', default_value = "24")]
    periods: Vec<f64>,
    /// One per period; defaults to 1 for each.
    #[arg(long, value_delimiter = ',')]
    amplitudes: Vec<f64>,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0.0)]
    trend: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the training seed, which also seeds initialisation.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory of the config.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Also write the report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ForecastArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Directory for per-layer, per-head attention weights.
    #[arg(long)]
    dump_attention: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DumpBiasArgs {
    /// Number of tokens.
    #[arg(long)]
    n: usize,
    /// Periods in tokens, or in time steps when `--stride` is given.
    #[arg(long, value_delimiter = ',')]
    periods: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    #[arg(long, default_value = "both")]
    regime: Regime,
    #[arg(long, default_value_t = 12)]
    heads: usize,
    #[arg(long, default_value = "csv")]
    format: DumpFormat,
    /// Position of the first query; keys then span `n + offset` tokens.
    #[arg(long, default_value_t = 0)]
    decoder_offset: usize,
    #[arg(long, default_value = "bias")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// Regime, periods and attention kind are taken from this config; sizes are forced small.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long, hide = true)]
    corrupt: Option<String>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "nobias,nonperiodic,periodic,both")]
    regimes: Vec<Regime>,
    /// Number of seeds, counted up from the config's training seed.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    /// A period set such as `24,56`; repeat for several sets.
    #[arg(long = "periods")]
    period_sets: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DetectArgs {
    #[arg(long)]
    input: PathBuf,
    /// Column name; the first value column by default.
    #[arg(long)]
    column: Option<String>,
    #[arg(long, default_value_t = 400)]
    max_lag: usize,
    #[arg(long, default_value_t = 5)]
    top: usize,
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default)]
    pub csv: Option<PathBuf>,
    #[serde(default)]
    pub synth: Option<SynthSpec>,
    #[serde(default)]
    pub split: SplitRatios,
    #[serde(default = "default_true")]
    pub standardize: bool,
    #[serde(default)]
    pub allow_empty_splits: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("run") }
    }
}

/// JSON run description. Relative paths resolve against the file's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    #[serde(default)]
    pub model: PenguinConfig,
    #[serde(default)]
    pub train: TrainConfig,
    pub data: DataSection,
    #[serde(default)]
    pub output: OutputSection,
}

impl RunConfigFile {
    pub fn from_json(text: &str) -> Result<Self> {
        let rc: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("run config: {e}")))?;
        rc.validate()?;
        Ok(rc)
    }

    /// Read, validate, and resolve relative paths against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut rc = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(csv) = rc.data.csv.as_mut() {
            *csv = base.join(&*csv);
        }
        rc.output.dir = base.join(&rc.output.dir);
        Ok(rc)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.data.split.boundaries(0)?;
        match (&self.data.csv, &self.data.synth) {
            (Some(_), Some(_)) => Err(Error::Config("data needs either csv or synth, not both".into())),
            (None, None) => Err(Error::Config("data needs a csv path or a synth spec".into())),
            (None, Some(s)) if s.channels != self.model.channels => Err(Error::Config(format!(
                "synth has {} channels but the model expects {}",
                s.channels, self.model.channels
            ))),
            _ => Ok(()),
        }
    }

    pub fn table(&self) -> Result<SeriesTable> {
        let table = match (&self.data.csv, &self.data.synth) {
            (Some(path), _) => load_csv(path)?,
            (None, Some(spec)) => synth_series(spec)?,
            (None, None) => return Err(Error::Config("no data source".into())),
        };
        if table.channels() != self.model.channels {
            return Err(Error::Config(format!(
                "data has {} channels but the model expects {}",
                table.channels(),
                self.model.channels
            )));
        }
        Ok(table)
    }
}

/// Parse `args` (program name first), run the command, and return the exit code.
pub fn run<I, A>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let cat = e.category();
            let _ = writeln!(err, "error [{}]: {e}", cat.label());
            cat.exit_code()
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Synth(a) => cmd_synth(&a, out),
        Command::Train(a) => {
            let mut rc = RunConfigFile::load(&a.config)?;
            if let Some(seed) = a.seed {
                rc.train.seed = seed;
            }
            if let Some(dir) = a.out_dir {
                rc.output.dir = dir;
            }
            match rc.model.precision {
                Precision::F32 => cmd_train::<f32>(&rc, out),
                Precision::F64 => cmd_train::<f64>(&rc, out),
            }
        }
        Command::Eval(a) => {
            let rc = RunConfigFile::load(&a.config)?;
            match read_checkpoint_header(&a.checkpoint)?.config.precision {
                Precision::F32 => cmd_eval::<f32>(&rc, &a, out),
                Precision::F64 => cmd_eval::<f64>(&rc, &a, out),
            }
        }
        Command::Forecast(a) => match read_checkpoint_header(&a.checkpoint)?.config.precision {
            Precision::F32 => cmd_forecast::<f32>(&a, out),
            Precision::F64 => cmd_forecast::<f64>(&a, out),
        },
        Command::DumpBias(a) => cmd_dump_bias(&a, out),
        Command::Gradcheck(a) => cmd_gradcheck(&a, out),
        Command::Sweep(a) => {
            let rc = RunConfigFile::load(&a.config)?;
            match rc.model.precision {
                Precision::F32 => cmd_sweep::<f32>(&rc, &a, out),
                Precision::F64 => cmd_sweep::<f64>(&rc, &a, out),
            }
        }
        Command::DetectPeriods(a) => cmd_detect(&a, out),
    }
}

fn say(out: &mut dyn Write, text: impl std::fmt::Display) -> Result<()> {
    writeln!(out, "{text}").map_err(|e| Error::io("<stdout>", e))
}

fn to_json<S: Serialize>(value: &S) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Config(format!("encoding json: {e}")))
}

fn cmd_synth(a: &SynthArgs, out: &mut dyn Write) -> Result<()> {
    if !a.amplitudes.is_empty() && a.amplitudes.len() != a.periods.len() {
        return Err(Error::Config("give one amplitude per period".into()));
    }
    let components = a
        .periods
        .iter()
        .enumerate()
        .map(|(i, &p)| Component::new(p, a.amplitudes.get(i).copied().unwrap_or(1.0)))
        .collect();
    let spec = SynthSpec {
        length: a.length,
        channels: a.channels,
        components,
        trend: a.trend,
        noise: a.noise,
        seed: a.seed,
    };
    let table = synth_series(&spec)?;
    write_csv(&a.out, &table)?;
    say(out, format!("wrote {} rows x {} channels to {}", table.rows(), table.channels(), a.out.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn cmd_train<T: Float>(rc: &RunConfigFile, out: &mut dyn Write) -> Result<()> {
    let m = &rc.model;
    let table = rc.table()?;
    let data = prepare_splits::<T>(
        &table,
        rc.data.split,
        m.lookback,
        m.horizon,
        rc.data.standardize,
        rc.data.allow_empty_splits,
    )?;
    let mut model = Penguin::<T>::new(m.clone(), rc.train.seed)?;
    let val = (!data.val.is_empty()).then_some(&data.val);
    let history = train(&mut model, &data.train, val, &rc.train)?;

    let dir = &rc.output.dir;
    create_dir(dir)?;
    let ckpt = dir.join("model.ckpt");
    save_checkpoint(&ckpt, &model, Some(&data.scaler))?;
    history.write_csv(&dir.join("history.csv"))?;
    let mut manifest = RunManifest::new(m, &rc.train, model.params().numel(), &history)?;
    if !data.test.is_empty() {
        let (stored, _) = load_checkpoint::<T>(&ckpt)?;
        manifest.test = Some(evaluate(&stored, &data.test, rc.train.eval_batch_size)?);
    }
    manifest.write(&dir.join("manifest.json"))?;
    say(
        out,
        format!(
            "trained {} epochs (best {}, score {:.6}); outputs in {}",
            history.epochs.len(),
            history.best_epoch,
            history.best_score,
            dir.display()
        ),
    )
}

fn check_shapes(cfg: &PenguinConfig, rc: &RunConfigFile) -> Result<()> {
    let m = &rc.model;
    if (cfg.lookback, cfg.horizon, cfg.channels) != (m.lookback, m.horizon, m.channels) {
        return Err(Error::Config(format!(
            "checkpoint expects L={}, H={}, C={} but the config has L={}, H={}, C={}",
            cfg.lookback, cfg.horizon, cfg.channels, m.lookback, m.horizon, m.channels
        )));
    }
    Ok(())
}

fn cmd_eval<T: Float>(rc: &RunConfigFile, a: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let (model, scaler) = load_checkpoint::<T>(&a.checkpoint)?;
    let cfg = model.config().clone();
    check_shapes(&cfg, rc)?;
    let table = rc.table()?;
    let splits = chronological_split(&table, rc.data.split, cfg.lookback + cfg.horizon, rc.data.allow_empty_splits)?;
    let scaler = scaler.unwrap_or_else(|| Scaler::identity(cfg.channels));
    let test = WindowedDataset::<T>::from_table(&scaler.transform(&splits.test)?, cfg.lookback, cfg.horizon);
    let report = evaluate(&model, &test, rc.train.eval_batch_size)?;
    let json = to_json(&report)?;
    if let Some(path) = &a.out {
        std::fs::write(path, &json).map_err(|e| Error::io(path, e))?;
    }
    say(out, json)
}

fn cmd_forecast<T: Float>(a: &ForecastArgs, out: &mut dyn Write) -> Result<()> {
    let (model, scaler) = load_checkpoint::<T>(&a.checkpoint)?;
    let cfg = model.config().clone();
    let input = load_csv(&a.input)?;
    if input.channels() != cfg.channels {
        return Err(Error::Data(format!(
            "input has {} channels, the model expects {}",
            input.channels(),
            cfg.channels
        )));
    }
    if input.rows() < cfg.lookback {
        return Err(Error::Data(format!(
            "input has {} rows, the model needs a look-back of {}",
            input.rows(),
            cfg.lookback
        )));
    }
    let scaler = scaler.unwrap_or_else(|| Scaler::identity(cfg.channels));
    let window = scaler.transform(&input.slice_rows(input.rows() - cfg.lookback, input.rows()))?;
    let x = Tensor::<T>::from_f64(vec![1, cfg.lookback, cfg.channels], window.values())?;
    let y = match &a.dump_attention {
        Some(dir) => {
            let (y, traces) = model.forward_traced(&x)?;
            create_dir(dir)?;
            for (l, trace) in traces.iter().enumerate() {
                trace.write_csv(dir, &format!("layer{}", l + 1), 0).map_err(|e| Error::io(dir, e))?;
            }
            y
        }
        None => model.predict(&x)?,
    };
    let mut values = y.to_f64_vec();
    scaler.inverse_values(&mut values);
    let table = SeriesTable::new(input.columns().to_vec(), values, None)?;
    write_csv(&a.out, &table)?;
    say(out, format!("wrote {} x {} forecast to {}", table.rows(), table.channels(), a.out.display()))
}

fn cmd_dump_bias(a: &DumpBiasArgs, out: &mut dyn Write) -> Result<()> {
    let periods = PeriodSet::new(&a.periods, a.stride)?;
    let stack = assemble_bias_stack(a.regime, &periods, a.heads, a.n, a.n + a.decoder_offset, a.decoder_offset)?;
    create_dir(&a.out)?;
    let files = stack.dump(&a.out, a.format)?;
    say(
        out,
        format!(
            "wrote {} {} files for {} groups to {}",
            files.len(),
            a.format.extension(),
            stack.groups(),
            a.out.display()
        ),
    )
}

/// Tiny sizes with the bias and attention choices of `base`.
pub fn gradcheck_config(base: &PenguinConfig) -> PenguinConfig {
    let tiny = PenguinConfig::tiny();
    PenguinConfig {
        regime: base.regime,
        attention: base.attention,
        causal: base.causal,
        ..tiny
    }
}

fn cmd_gradcheck(a: &GradcheckArgs, out: &mut dyn Write) -> Result<()> {
    let base = match &a.config {
        Some(path) => RunConfigFile::load(path)?.model,
        None => PenguinConfig::tiny(),
    };
    let opts = GradcheckOptions {
        seed: a.seed,
        corrupt: a.corrupt.clone().map(|name| (name, 1.01)),
        ..Default::default()
    };
    let report = gradcheck(&gradcheck_config(&base), &opts)?;
    if let Some(path) = &a.json {
        std::fs::write(path, to_json(&report)?).map_err(|e| Error::io(path, e))?;
    }
    say(out, &report)?;
    if report.passed() {
        Ok(())
    } else {
        let worst = report.worst().expect("a failing report has blocks");
        Err(Error::Numeric(format!(
            "gradient check failed: {} has relative error {:.3e}",
            worst.name, worst.max_rel_error
        )))
    }
}

fn parse_period_set(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.trim().parse::<usize>().map_err(|_| Error::Config(format!("bad period '{t}' in '{s}'"))))
        .collect()
}

fn cmd_sweep<T: Float>(rc: &RunConfigFile, a: &SweepArgs, out: &mut dyn Write) -> Result<()> {
    if a.seeds == 0 || a.regimes.is_empty() {
        return Err(Error::Config("sweep needs at least one seed and one regime".into()));
    }
    let sets = if a.period_sets.is_empty() {
        vec![rc.model.periods.clone()]
    } else {
        a.period_sets.iter().map(|s| parse_period_set(s)).collect::<Result<_>>()?
    };
    let bases: Vec<PenguinConfig> = sets
        .into_iter()
        .map(|periods| {
            let c = PenguinConfig { periods, ..rc.model.clone() };
            c.validate().map(|_| c)
        })
        .collect::<Result<_>>()?;
    let table = rc.table()?;
    let m = &rc.model;
    let data = prepare_splits::<T>(
        &table,
        rc.data.split,
        m.lookback,
        m.horizon,
        rc.data.standardize,
        rc.data.allow_empty_splits,
    )?;
    let seeds: Vec<u64> = (0..a.seeds).map(|i| rc.train.seed + i).collect();
    let mut results = Vec::new();
    for base in &bases {
        results.extend(ablation_sweep(base, &rc.train, &data, &a.regimes, &seeds)?);
    }
    let path = a.out.clone().unwrap_or_else(|| rc.output.dir.join("sweep.csv"));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_sweep_csv(&path, &results)?;
    say(out, format!("{:<12} {:<10} {:>4} {:>10} {:>10} {:>10}", "regime", "periods", "runs", "median", "mean", "sd"))?;
    for s in summarize(&results) {
        let periods: Vec<String> = s.periods.iter().map(usize::to_string).collect();
        say(
            out,
            format!(
                "{:<12} {:<10} {:>4} {:>10.6} {:>10.6} {:>10.6}",
                s.regime.to_string(),
                periods.join(","),
                s.runs,
                s.median,
                s.mean,
                s.sd
            ),
        )?;
    }
    say(out, format!("results in {}", path.display()))
}

fn cmd_detect(a: &DetectArgs, out: &mut dyn Write) -> Result<()> {
    let table = load_csv(&a.input)?;
    let c = match &a.column {
        Some(name) => table
            .columns()
            .iter()
            .position(|col| col == name)
            .ok_or_else(|| Error::Data(format!("no column named '{name}'")))?,
        None => 0,
    };
    let report = detect_periods_acf(&table.column(c), a.max_lag, a.top)?;
    say(out, to_json(&report)?)
}
