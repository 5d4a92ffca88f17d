//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 bound violated.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::Value;

use crate::entropy::{ce_matrix, conditional_entropy, hardness_report, nats_to_bits, rank_sources};
use crate::labels::{parse_label_table, IngestOptions, TaskTable};
use crate::plot::{emit_svg, PlotSpec};
use crate::softmax::{Dataset, TrainConfig};
use crate::synth::{random_family, toy_case, SynthFamilyConfig, ToyId};
use crate::verify::{correlation_experiment, verify_bound, verify_suite, ExperimentConfig, GeneratorConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_VIOLATION: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "labelce", version, about = "Task transferability and hardness from label statistics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct LabelInput {
    /// Label table: header of task names, one row per input.
    #[arg(long)]
    labels: PathBuf,
    /// Drop rows with missing cells instead of failing.
    #[arg(long)]
    drop_incomplete_rows: bool,
}

#[derive(Debug, Args)]
struct Units {
    /// Report entropies in nats (default).
    #[arg(long, conflicts_with = "bits")]
    nats: bool,
    /// Report entropies in bits.
    #[arg(long)]
    bits: bool,
}

impl Units {
    fn scale(&self) -> f64 {
        if self.bits {
            nats_to_bits(1.0)
        } else {
            1.0
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Conditional entropy H(target | source).
    Ce {
        #[command(flatten)]
        input: LabelInput,
        #[arg(long)]
        target: String,
        #[arg(long)]
        source: String,
        #[command(flatten)]
        units: Units,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// All-pairs conditional entropy matrix as CSV.
    Matrix {
        #[command(flatten)]
        input: LabelInput,
        #[command(flatten)]
        units: Units,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-task hardness report (JSON, nats).
    Hardness {
        #[command(flatten)]
        input: LabelInput,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sources ranked by H(target | source) (JSON, nats).
    Rank {
        #[command(flatten)]
        input: LabelInput,
        #[arg(long)]
        target: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the transfer bound on one labelled dataset or on a random suite.
    VerifyBound(VerifyArgs),
    /// CE vs. held-out error over a synthetic task family.
    Correlate {
        /// JSON with `family` and optional `dim` and `train`.
        #[arg(long)]
        config: PathBuf,
        /// Overrides the family seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write a CE vs. error scatter plot.
        #[arg(long)]
        svg: Option<PathBuf>,
        /// Write a hardness vs. error scatter plot.
        #[arg(long)]
        hardness_svg: Option<PathBuf>,
    },
    /// Generate synthetic label tables.
    #[command(subcommand)]
    Synth(SynthCommand),
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// Run this many random instances instead of a single dataset.
    #[arg(long, conflicts_with_all = ["labels", "features"])]
    suite: Option<usize>,
    /// Base seed of the suite, or the training seed for a single dataset.
    #[arg(long)]
    seed: Option<u64>,
    /// Generator JSON (suite) or training JSON (single dataset).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, requires_all = ["features", "source", "target"])]
    labels: Option<PathBuf>,
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    source: Option<String>,
    #[arg(long)]
    target: Option<String>,
    /// Representation dimension.
    #[arg(long, default_value_t = 2)]
    dim: usize,
    #[arg(long)]
    drop_incomplete_rows: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum SynthCommand {
    /// One of the toy pairs a-e as a two-column label table (z, y).
    Toy {
        #[arg(long)]
        case: String,
        #[arg(long, default_value_t = 16)]
        n: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Random family: label table plus features CSV.
    Family {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Label table destination (stdout when absent).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        features_out: Option<PathBuf>,
    },
}

#[derive(Debug, serde::Deserialize)]
struct CorrelateFile {
    family: SynthFamilyConfig,
    #[serde(flatten)]
    experiment: ExperimentConfig,
}

enum Failure {
    Data(String),
    Violation,
}

impl From<crate::Error> for Failure {
    fn from(e: crate::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

type CliResult = std::result::Result<(), Failure>;

/// Rounds every float to 12 significant digits.
fn round_numbers(value: &mut Value) {
    match value {
        Value::Number(num) if num.is_f64() => {
            let v = num.as_f64().unwrap_or(0.0);
            let rounded: f64 = format!("{v:.11e}").parse().unwrap_or(v);
            if let Some(n) = serde_json::Number::from_f64(rounded + 0.0) {
                *num = n;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_numbers),
        Value::Object(map) => map.values_mut().for_each(round_numbers),
        _ => {}
    }
}

/// Pretty JSON with floats rounded to 12 significant digits.
pub fn to_report_json<T: Serialize>(value: &T) -> String {
    let mut v = serde_json::to_value(value).expect("report types serialize");
    round_numbers(&mut v);
    let mut s = serde_json::to_string_pretty(&v).expect("values serialize");
    s.push('\n');
    s
}

/// A float with 12 significant digits, always with a `.` decimal point.
pub fn format_number(v: f64) -> String {
    let rounded: f64 = format!("{v:.11e}").parse().unwrap_or(v);
    format!("{:?}", rounded + 0.0)
}

fn read(path: &Path) -> std::result::Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> std::result::Result<T, Failure> {
    serde_json::from_str(&read(path)?).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn load_table(input: &LabelInput) -> std::result::Result<TaskTable, Failure> {
    let options = IngestOptions { drop_incomplete_rows: input.drop_incomplete_rows };
    parse_label_table(&read(&input.labels)?, options)
        .map_err(|e| Failure::Data(format!("{}: {e}", input.labels.display())))
}

fn emit(out: Option<&Path>, text: &str, stdout: &mut dyn Write) -> CliResult {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Failure::Data(format!("{}: {e}", path.display()))),
        None => stdout.write_all(text.as_bytes()).map_err(|e| Failure::Data(e.to_string())),
    }
}

fn dispatch(command: Command, stdout: &mut dyn Write) -> CliResult {
    match command {
        Command::Ce { input, target, source, units, out } => {
            let table = load_table(&input)?;
            let ce = conditional_entropy(table.task(&target)?, table.task(&source)?)?;
            emit(out.as_deref(), &format!("{}\n", format_number(ce * units.scale())), stdout)
        }
        Command::Matrix { input, units, out } => {
            let table = load_table(&input)?;
            emit(out.as_deref(), &ce_matrix(&table).to_csv(units.scale()), stdout)
        }
        Command::Hardness { input, out } => {
            let table = load_table(&input)?;
            emit(out.as_deref(), &to_report_json(&hardness_report(&table)), stdout)
        }
        Command::Rank { input, target, out } => {
            let table = load_table(&input)?;
            let ranked = rank_sources(&ce_matrix(&table), &target)?;
            emit(out.as_deref(), &to_report_json(&ranked), stdout)
        }
        Command::VerifyBound(args) => verify(args, stdout),
        Command::Correlate { config, seed, out, svg, hardness_svg } => {
            let mut file: CorrelateFile = read_json(&config)?;
            if let Some(seed) = seed {
                file.family.seed = seed;
            }
            let report = correlation_experiment(&file.family, &file.experiment)?;
            if let Some(path) = svg {
                emit(Some(&path), &emit_svg(&PlotSpec::ce_vs_error(&report))?, stdout)?;
            }
            if let Some(path) = hardness_svg {
                emit(Some(&path), &emit_svg(&PlotSpec::hardness_vs_error(&report))?, stdout)?;
            }
            emit(out.as_deref(), &to_report_json(&report), stdout)
        }
        Command::Synth(SynthCommand::Toy { case, n, out }) => {
            let id: ToyId = case.parse()?;
            emit(out.as_deref(), &toy_case(id, n)?.label_table().to_csv(), stdout)
        }
        Command::Synth(SynthCommand::Family { config, seed, out, features_out }) => {
            let mut cfg: SynthFamilyConfig = read_json(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let family = random_family(&cfg)?;
            if let Some(path) = features_out {
                emit(Some(&path), &family.dataset.to_csv(), stdout)?;
            }
            emit(out.as_deref(), &family.label_table().to_csv(), stdout)
        }
    }
}

fn verify(args: VerifyArgs, stdout: &mut dyn Write) -> CliResult {
    if let Some(instances) = args.suite {
        let gen: GeneratorConfig = match &args.config {
            Some(path) => read_json(path)?,
            None => GeneratorConfig::default(),
        };
        let report = verify_suite(&gen, instances, args.seed.unwrap_or(0))?;
        emit(args.out.as_deref(), &to_report_json(&report), stdout)?;
        return if report.all_hold() { Ok(()) } else { Err(Failure::Violation) };
    }
    let (Some(labels), Some(features), Some(source), Some(target)) = (args.labels, args.features, args.source, args.target)
    else {
        return Err(Failure::Data("verify-bound needs --suite or --labels/--features/--source/--target".into()));
    };
    let mut cfg: TrainConfig = match &args.config {
        Some(path) => read_json(path)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let table = load_table(&LabelInput { labels, drop_incomplete_rows: args.drop_incomplete_rows })?;
    let data = Dataset::from_csv(&read(&features)?)?;
    let result = verify_bound(&data, table.task(&source)?, table.task(&target)?, args.dim, &cfg)?;
    emit(args.out.as_deref(), &to_report_json(&result), stdout)?;
    if result.holds {
        Ok(())
    } else {
        Err(Failure::Violation)
    }
}

/// Runs the CLI on `argv` (including the program name) and returns the exit code.
pub fn run_cli_with<I, S>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{e}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(stderr, "{}", e.render());
                    EXIT_USAGE
                }
            };
        }
    };
    match dispatch(cli.command, stdout) {
        Ok(()) => EXIT_OK,
        Err(Failure::Data(message)) => {
            let _ = writeln!(stderr, "error: {message}");
            EXIT_DATA
        }
        Err(Failure::Violation) => {
            let _ = writeln!(stderr, "error: transfer bound violated");
            EXIT_VIOLATION
        }
    }
}

pub fn run_cli<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    run_cli_with(argv, &mut std::io::stdout().lock(), &mut std::io::stderr().lock())
}
