use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use trustel::analyze::{agreement_analysis, effectiveness, sylrate, AnalyzeError};
use trustel::bank::{Bank, BankError};
use trustel::config::{Config, ConfigError, SystemClock};
use trustel::data::{build_state, DataDir, DataError};
use trustel::export::{export_corpus, summarize_corpus, Bundle, ExportError, ExportFilter};
use trustel::service::router;
use trustel::simulate::{simulate_into, SimConfig, SimError};
use trustel::store::StoreError;
use trustel_core::analysis::KsMethod;
use trustel_core::annotation::PermutationScheme;

#[derive(Debug, Parser)]
#[command(name = "trustel", version, about = "Trust-elicitation experiment platform")]
struct Cli {
    /// JSON configuration file; `TRUSTEL_*` variables override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the HTTP API.
    Serve {
        #[arg(long, default_value = "data")]
        data: PathBuf,
    },
    /// Validate a question bank and install it into the data directory.
    LoadBank {
        questions: PathBuf,
        /// Directory of domain files; defaults to `domains/` next to the
        /// questions file.
        #[arg(long)]
        domains: Option<PathBuf>,
        #[arg(long)]
        instruments: Option<PathBuf>,
        #[arg(long, default_value = "data")]
        data: PathBuf,
    },
    /// Drive simulated subjects (and raters) through the API.
    Simulate {
        /// Subjects completing both series.
        #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
        subjects: u32,
        /// Additional remote subjects completing one series.
        #[arg(long, default_value_t = 0)]
        one_series: u32,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "data")]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        raters: usize,
        /// Syllables per second added in the high-score series of shifted
        /// subjects.
        #[arg(long, default_value_t = 0.0)]
        shift: f64,
        #[arg(long, default_value_t = 0)]
        shifted: usize,
        #[arg(long)]
        asr_failure_rate: Option<f64>,
        #[arg(long)]
        compact_audio: bool,
    },
    /// Write a corpus bundle.
    Export {
        #[arg(long, default_value = "data")]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        include_excluded: bool,
    },
    /// Analyses over an exported bundle.
    Analyze {
        #[command(subcommand)]
        analysis: Analysis,
    },
    /// Corpus summary statistics.
    Summary {
        #[arg(long, default_value = "data")]
        data: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
enum Analysis {
    /// Condition effect on trust stars and answer confidence.
    Effectiveness {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-subject syllable-rate comparison between conditions.
    Sylrate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Permutation p-values instead of the asymptotic distribution.
        #[arg(long)]
        permutations: Option<usize>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Inter-rater agreement on the stimulus pairs.
    Agreement {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 999)]
        permutations: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Scheme::WithinRater)]
        scheme: Scheme,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Scheme {
    WithinRater,
    FlipEachRating,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Bank(#[from] BankError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Export(#[from] ExportError),
    #[error(transparent)]
    Analyze(#[from] AnalyzeError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    fn code(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Bank(_) | CliError::Data(DataError::Bank(_)) => "invalid_bank",
            CliError::Usage(_) => "usage",
            CliError::Export(ExportError::NotEmpty(_)) => "not_empty",
            CliError::Analyze(_) => "analysis",
            CliError::Sim(_) => "simulation",
            _ => "runtime",
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_)
            | CliError::Bank(_)
            | CliError::Data(DataError::Bank(_))
            | CliError::Usage(_)
            | CliError::Export(ExportError::NotEmpty(_)) => 2,
            _ => 1,
        }
    }

    fn details(&self) -> serde_json::Value {
        match self {
            CliError::Bank(b) | CliError::Data(DataError::Bank(b)) => serde_json::json!(b.issues),
            _ => serde_json::Value::Null,
        }
    }
}

fn print<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn copy_json_dir(from: &Path, to: &Path) -> std::io::Result<usize> {
    fs::create_dir_all(to)?;
    let mut n = 0;
    for entry in fs::read_dir(from)? {
        let p = entry?.path();
        if p.extension().is_some_and(|x| x == "json") {
            fs::copy(&p, to.join(p.file_name().expect("file name")))?;
            n += 1;
        }
    }
    Ok(n)
}

fn load_bank(questions: &Path, domains: Option<PathBuf>, instruments: Option<PathBuf>, data: &Path) -> Result<(), CliError> {
    let domains = domains.unwrap_or_else(|| questions.parent().unwrap_or(Path::new(".")).join("domains"));
    let bank = Bank::load(questions, &domains, instruments.as_deref())?;
    let dest = DataDir::new(data).bank_dir();
    if dest.exists() {
        fs::remove_dir_all(&dest)?;
    }
    fs::create_dir_all(&dest)?;
    fs::copy(questions, dest.join("questions.json"))?;
    copy_json_dir(&domains, &dest.join("domains"))?;
    if let Some(i) = instruments {
        fs::copy(i, dest.join("instruments.json"))?;
    }
    print(&serde_json::json!({
        "installed": dest.display().to_string(),
        "questions": bank.questions.questions().len(),
        "domains": bank.domains.len(),
        "sets": bank.questions.sets(),
    }));
    Ok(())
}

fn serve(config: Config, data: &Path) -> Result<(), CliError> {
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let bind = config.bind.clone();
        let (app, mock) = build_state(&DataDir::new(data), config, Arc::new(SystemClock))?;
        let listener = tokio::net::TcpListener::bind(&bind).await?;
        tracing::info!(addr = %listener.local_addr()?, "listening");
        axum::serve(listener, router(app))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        if let Some(m) = mock {
            m.save()?;
        }
        Ok(())
    })
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = Config::load(cli.config.as_deref())?;
    match cli.command {
        Command::Serve { data } => serve(config, &data),
        Command::LoadBank { questions, domains, instruments, data } => load_bank(&questions, domains, instruments, &data),
        Command::Simulate { subjects, one_series, seed, data, raters, shift, shifted, asr_failure_rate, compact_audio } => {
            let mut sim = SimConfig {
                seed,
                two_series_subjects: subjects as usize,
                one_series_subjects: one_series as usize,
                rate_shift_high: shift,
                shifted_subjects: shifted,
                compact_audio,
                raters,
                ..SimConfig::default()
            };
            if let Some(r) = asr_failure_rate {
                if !(0.0..=1.0).contains(&r) {
                    return Err(CliError::Usage("--asr-failure-rate must be within 0..1".into()));
                }
                sim.asr_failure_rate = r;
            }
            if raters == 1 {
                return Err(CliError::Usage("agreement needs at least two raters".into()));
            }
            let dir = DataDir::new(&data);
            fs::create_dir_all(&data)?;
            let report = simulate_into(&dir, config, &sim)?;
            fs::write(data.join("sim_report.json"), serde_json::to_string_pretty(&report).expect("serializable"))?;
            print(&serde_json::json!({
                "series": report.series.len(),
                "requests": report.requests,
                "utterances": report.utterances,
                "asr_failures": report.asr_failures,
                "skipped_dialogues": report.skipped_dialogues,
                "pairs_created": report.pairs_created,
                "annotation_responses": report.annotation_responses,
                "leaks": report.leaks,
            }));
            Ok(())
        }
        Command::Export { data, out, include_excluded } => {
            let dir = DataDir::new(&data);
            let store = dir.open_store()?;
            let manifest = export_corpus(&store, Some(&dir.alignments()), ExportFilter { include_excluded }, &out)?;
            print(&manifest);
            Ok(())
        }
        Command::Analyze { analysis } => match analysis {
            Analysis::Effectiveness { input, out } => {
                print(&effectiveness(&Bundle::read(&input)?, &out)?);
                Ok(())
            }
            Analysis::Sylrate { input, out, permutations, seed } => {
                let method = match permutations {
                    Some(permutations) => KsMethod::Permutation { permutations, seed },
                    None => KsMethod::Asymptotic,
                };
                print(&sylrate(&Bundle::read(&input)?, &out, method)?);
                Ok(())
            }
            Analysis::Agreement { input, out, permutations, seed, scheme } => {
                let scheme = match scheme {
                    Scheme::WithinRater => PermutationScheme::WithinRater,
                    Scheme::FlipEachRating => PermutationScheme::FlipEachRating,
                };
                print(&agreement_analysis(&Bundle::read(&input)?, &out, permutations, seed, scheme)?);
                Ok(())
            }
        },
        Command::Summary { data } => {
            let store = DataDir::new(&data).open_store()?;
            print(&summarize_corpus(&store)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let default_level = if matches!(cli.command, Command::Serve { .. }) { "info" } else { "warn" };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default_level)),
        )
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let body = serde_json::json!({
                "error": { "code": e.code(), "message": e.to_string(), "details": e.details() }
            });
            eprintln!("{body}");
            ExitCode::from(e.exit_code())
        }
    }
}
