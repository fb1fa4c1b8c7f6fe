//! `pollcast`: seat forecasts over vote logs, input validation, obfuscated
//! export and the HTTP service.

mod report;
mod serve;

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use pollcast_core::fixtures::sample_registry;
use pollcast_core::{
    latest_votes, run_forecast, validate_registry, ForecastError, ForecastOptions, Method, OfficialResults,
    PartyRegistry, ThresholdFraction, VoteRecord,
};
use pollcast_store::{
    export_obfuscated, load_registry, parse_official_results, parse_vote_log, ExportConfig, Granularity, RegionPolicy,
    RegistryError, StoreError, VoteStore,
};

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  1  invalid input: parse errors, registry violations, corrupt store, bad flags
  2  insufficient prior data for a standardized or fixed forecast";

#[derive(Parser)]
#[command(name = "pollcast", version, about = "Live poll seat forecasts", after_help = EXIT_CODES)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Forecast seats from a vote log with one or more methods.
    #[command(after_help = EXIT_CODES)]
    Forecast(ForecastArgs),
    /// Check a registry and, optionally, a vote log and official results.
    #[command(after_help = EXIT_CODES)]
    Validate(ValidateArgs),
    /// Write an obfuscated copy of a vote store.
    #[command(after_help = EXIT_CODES)]
    Export(ExportArgs),
    /// Run the HTTP service until SIGINT or SIGTERM.
    #[command(after_help = EXIT_CODES)]
    Serve(ServeArgs),
}

#[derive(clap::Args)]
struct ForecastArgs {
    /// Vote log, JSON Lines.
    #[arg(long)]
    votes: PathBuf,
    /// Official prior-election results, CSV. Required by standardized and fixed.
    #[arg(long)]
    official: Option<PathBuf>,
    /// Party registry, JSON. Defaults to the bundled 2013/2015 registry.
    #[arg(long)]
    registry: Option<PathBuf>,
    /// Comma-separated methods: raw, standardized, fixed, fixed:AY+YH, or
    /// `all` for raw, standardized, fixed:AY, fixed:AY+YH+AU and fixed:AY+YH+AU+S.
    #[arg(long, default_value = "raw")]
    method: String,
    /// Groups for a bare `fixed` method, e.g. AY,YH,AU,S.
    #[arg(long)]
    groups: Option<String>,
    /// House size; defaults to the registry's.
    #[arg(long)]
    seats: Option<u32>,
    /// Threshold fraction, e.g. 0.0325; defaults to the registry's.
    #[arg(long)]
    threshold: Option<String>,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Json,
}

#[derive(clap::Args)]
struct ValidateArgs {
    /// Party registry, JSON. Defaults to the bundled registry.
    #[arg(long)]
    registry: Option<PathBuf>,
    /// Vote log to check against the registry.
    #[arg(long)]
    votes: Option<PathBuf>,
    /// Official results to check against the registry's prior election.
    #[arg(long)]
    official: Option<PathBuf>,
}

#[derive(clap::Args)]
struct ExportArgs {
    /// Vote store written by `serve`.
    #[arg(long)]
    store: PathBuf,
    /// Party registry, JSON. Defaults to the bundled registry.
    #[arg(long)]
    registry: Option<PathBuf>,
    /// Timestamp precision: hour, day or month.
    #[arg(long, default_value = "day")]
    granularity: Granularity,
    /// Pseudonym salt; random when omitted, so pseudonyms differ between exports.
    #[arg(long)]
    salt: Option<String>,
    /// Keep regions as submitted or drop them.
    #[arg(long, value_enum, default_value_t = Regions::Keep)]
    regions: Regions,
    /// Output file, JSON Lines.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Regions {
    Keep,
    Drop,
}

#[derive(clap::Args)]
struct ServeArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
}

/// A failed command and its exit code.
#[derive(Debug)]
enum Failure {
    Input(Vec<String>),
    InsufficientPriorData(String),
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Failure::Input(vec![message.into()])
    }

    fn report(&self) -> ExitCode {
        match self {
            Failure::Input(lines) => {
                for line in lines {
                    eprintln!("error: {line}");
                }
                ExitCode::from(1)
            }
            Failure::InsufficientPriorData(message) => {
                eprintln!("error: {message}");
                ExitCode::from(2)
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // clap's own usage code (2) is taken by insufficient prior data
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let quiet = !matches!(cli.command, Command::Serve(_));
    init_logging(quiet);
    let result = match cli.command {
        Command::Forecast(args) => cmd_forecast(args),
        Command::Validate(args) => cmd_validate(args),
        Command::Export(args) => cmd_export(args),
        Command::Serve(args) => serve::run(&args.config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => failure.report(),
    }
}

fn init_logging(quiet: bool) {
    let default = if quiet { "warn" } else { "info" };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

fn registry_or_default(path: Option<&Path>) -> Result<PartyRegistry, Failure> {
    match path {
        None => Ok(sample_registry()),
        Some(path) => load_registry(path).map_err(|e| registry_failure(path, e)),
    }
}

fn registry_failure(path: &Path, err: RegistryError) -> Failure {
    match err {
        RegistryError::Invalid(violations) => Failure::Input(
            violations
                .iter()
                .map(|v| format!("{}: {}: {}", path.display(), v.path, v.message))
                .collect(),
        ),
        other => Failure::input(format!("{}: {other}", path.display())),
    }
}

fn open(path: &Path) -> Result<File, Failure> {
    File::open(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn read_official(path: &Path) -> Result<OfficialResults, Failure> {
    parse_official_results(open(path)?).map_err(|errors| {
        Failure::Input(
            errors
                .iter()
                .map(|e| format!("{}:{}: {}", path.display(), e.line, e.message))
                .collect(),
        )
    })
}

fn read_votes(path: &Path, registry: &PartyRegistry) -> Result<Vec<VoteRecord>, Failure> {
    let parsed = parse_vote_log(BufReader::new(open(path)?), registry);
    if parsed.errors.is_empty() {
        Ok(parsed.records)
    } else {
        Err(Failure::Input(
            parsed
                .errors
                .iter()
                .map(|e| format!("{}:{}: {}", path.display(), e.line, e.kind))
                .collect(),
        ))
    }
}

/// The five forecasts of the results table.
fn all_methods() -> Vec<Method> {
    let fixed = |groups: &[&str]| Method::Fixed(groups.iter().map(|g| g.to_string()).collect());
    vec![
        Method::Raw,
        Method::Standardized,
        fixed(&["AY"]),
        fixed(&["AY", "YH", "AU"]),
        fixed(&["AY", "YH", "AU", "S"]),
    ]
}

fn parse_methods(list: &str, groups: Option<&str>) -> Result<Vec<Method>, Failure> {
    let mut methods = Vec::new();
    let mut bare_fixed = false;
    for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        match item {
            "all" => methods.extend(all_methods()),
            "fixed" => {
                bare_fixed = true;
                let method = Method::from_parts("fixed", groups)
                    .map_err(|e| Failure::input(format!("{e}; pass --groups or write fixed:AY+YH")))?;
                methods.push(method);
            }
            other => methods.push(other.parse().map_err(|e| Failure::input(format!("--method: {e}")))?),
        }
    }
    if methods.is_empty() {
        return Err(Failure::input("--method: no method given"));
    }
    if groups.is_some() && !bare_fixed {
        return Err(Failure::input("--groups applies only to a bare `fixed` method"));
    }
    Ok(methods)
}

fn cmd_forecast(args: ForecastArgs) -> Result<(), Failure> {
    let registry = registry_or_default(args.registry.as_deref())?;
    let methods = parse_methods(&args.method, args.groups.as_deref())?;
    let official = args.official.as_deref().map(read_official).transpose()?;
    let records = read_votes(&args.votes, &registry)?;

    let mut options =
        ForecastOptions::for_registry(&registry).ok_or_else(|| Failure::input("registry has no current election"))?;
    if let Some(seats) = args.seats {
        if seats == 0 {
            return Err(Failure::input("--seats must be at least 1"));
        }
        options.house_size = seats;
    }
    if let Some(text) = &args.threshold {
        let threshold = ThresholdFraction::parse(text).map_err(|e| Failure::input(format!("--threshold: {e}")))?;
        if !threshold.in_range() {
            return Err(Failure::input(format!("--threshold {text} is outside [0, 1)")));
        }
        options.threshold = threshold;
    }

    let latest = latest_votes(&records);
    let mut outcomes = Vec::with_capacity(methods.len());
    for method in &methods {
        match run_forecast(&latest, &registry, official.as_ref(), method, &options) {
            Ok(outcome) => outcomes.push(outcome),
            Err(ForecastError::InsufficientPriorData) => {
                return Err(Failure::InsufficientPriorData(format!(
                    "{method}: insufficient prior data ({} of {} devices disclosed a prior vote)",
                    latest.values().filter(|r| r.prior.is_known()).count(),
                    latest.len()
                )))
            }
            Err(e) => return Err(Failure::input(format!("{method}: {e}"))),
        }
    }

    let report = report::Report {
        house_size: options.house_size,
        threshold: options.threshold,
        forecasts: outcomes,
    };
    match args.format {
        Format::Table => print!("{}", report::render_table(&registry, &report)),
        Format::Json => println!("{}", serde_json::to_string_pretty(&report).expect("report serializes")),
    }
    Ok(())
}

fn cmd_validate(args: ValidateArgs) -> Result<(), Failure> {
    let mut problems = Vec::new();
    let mut summary = Vec::new();

    let registry = match &args.registry {
        None => Some(sample_registry()),
        Some(path) => {
            let loaded = std::fs::read_to_string(path)
                .map_err(|e| format!("{}: {e}", path.display()))
                .and_then(|text| {
                    serde_json::from_str::<PartyRegistry>(&text).map_err(|e| format!("{}: {e}", path.display()))
                });
            match loaded {
                Ok(registry) => Some(registry),
                Err(message) => {
                    problems.push(message);
                    None
                }
            }
        }
    };
    if let Some(registry) = &registry {
        let violations = validate_registry(registry);
        let name = args
            .registry
            .as_deref()
            .map_or("registry".to_owned(), |p| p.display().to_string());
        problems.extend(violations.iter().map(|v| format!("{name}: {}: {}", v.path, v.message)));
        if violations.is_empty() {
            summary.push(format!(
                "registry: {} parties, {} groups",
                registry.parties.len(),
                registry.fixed_groups.len()
            ));
        }
    }

    if let Some(path) = &args.official {
        match read_official(path) {
            Ok(results) => summary.push(format!("official: {} rows", results.rows.len())),
            Err(Failure::Input(lines)) => problems.extend(lines),
            Err(other) => return Err(other),
        }
    }

    if let Some(path) = &args.votes {
        match &registry {
            Some(registry) => match read_votes(path, registry) {
                Ok(records) => summary.push(format!("votes: {} records", records.len())),
                Err(Failure::Input(lines)) => problems.extend(lines),
                Err(other) => return Err(other),
            },
            None => problems.push(format!("{}: not checked, the registry did not load", path.display())),
        }
    }

    if problems.is_empty() {
        for line in summary {
            println!("ok  {line}");
        }
        Ok(())
    } else {
        Err(Failure::Input(problems))
    }
}

fn cmd_export(args: ExportArgs) -> Result<(), Failure> {
    let registry = registry_or_default(args.registry.as_deref())?;
    let snapshot = VoteStore::read_snapshot(&args.store, &registry).map_err(|e| match e {
        StoreError::Io(io) => Failure::input(format!("{}: {io}", args.store.display())),
        other => Failure::input(format!("{}: {other}", args.store.display())),
    })?;
    let salt = match args.salt {
        Some(salt) => salt.into_bytes(),
        None => hex::encode(rand::random::<[u8; 16]>()).into_bytes(),
    };
    let config = ExportConfig {
        salt,
        granularity: args.granularity,
        regions: match args.regions {
            Regions::Keep => RegionPolicy::Keep,
            Regions::Drop => RegionPolicy::Drop,
        },
    };
    let out = File::create(&args.out).map_err(|e| Failure::input(format!("{}: {e}", args.out.display())))?;
    let count = export_obfuscated(
        snapshot.events(),
        &registry.abstention_code,
        &config,
        BufWriter::new(out),
    )
    .map_err(|e| Failure::input(format!("{}: {e}", args.out.display())))?;
    println!("exported {count} records to {}", args.out.display());
    Ok(())
}
