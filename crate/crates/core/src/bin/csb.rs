use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use csb_core::broker::{Broker, BrokerConfig, Endpoints, Period};
use csb_core::clock::SystemClock;
use csb_core::qos::{AttributeCatalog, ProfileInput, QosVector, TierTable};
use csb_core::selection::{self, round_display};
use csb_core::sim::{run_scenario, Scenario};
use csb_core::sla::PenaltyClause;

#[derive(Parser)]
#[command(name = "csb", version, about = "QoS-driven cloud service broker")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the broker HTTP API.
    Serve(ServeArgs),
    /// Scripted simulation runs.
    Scenario {
        #[command(subcommand)]
        command: ScenarioCommand,
    },
    /// Rank offerings against a requirement profile.
    Rank {
        offerings: PathBuf,
        profile: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        /// Emit the ranking as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Utility of every offering and of the consumer minima over a grid of
    /// uniform sensitivities, as CSV.
    Sweep {
        offerings: PathBuf,
        profile: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 0.0)]
        beta_min: f64,
        #[arg(long, default_value_t = 3.0)]
        beta_max: f64,
        #[arg(long, default_value_t = 0.1)]
        beta_step: f64,
    },
    /// Reports over a broker data directory.
    Report {
        #[command(subcommand)]
        command: ReportCommand,
    },
}

#[derive(Args)]
struct ModelArgs {
    /// Attribute catalog JSON (defaults to the standard four attributes).
    #[arg(long, env = "CSB_CATALOG")]
    catalog: Option<PathBuf>,
    /// Service tier table JSON (defaults to platinum/gold/silver).
    #[arg(long, env = "CSB_TIERS")]
    tiers: Option<PathBuf>,
}

impl ModelArgs {
    fn load(&self) -> Result<(AttributeCatalog, TierTable), String> {
        let catalog = match &self.catalog {
            Some(p) => read_json(p)?,
            None => AttributeCatalog::standard(),
        };
        let tiers: TierTable = match &self.tiers {
            Some(p) => read_json(p)?,
            None => TierTable::standard(),
        };
        tiers.validate_against(&catalog).map_err(|e| e.to_string())?;
        Ok((catalog, tiers))
    }
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = "CSB_DATA_DIR", default_value = "csb-data")]
    data_dir: PathBuf,
    #[arg(long, env = "CSB_LISTEN", default_value = "127.0.0.1:8080")]
    listen: SocketAddr,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    settings: BrokerArgs,
}

#[derive(Args)]
struct BrokerArgs {
    #[arg(long, env = "CSB_MAX_ROUNDS")]
    max_rounds: Option<u32>,
    /// Violations tolerated before credits accrue.
    #[arg(long, env = "CSB_PENALTY_THRESHOLD")]
    penalty_threshold: Option<u32>,
    #[arg(long, env = "CSB_PENALTY_CREDIT")]
    penalty_credit: Option<f64>,
    #[arg(long, env = "CSB_WINDOW_SECS")]
    window_secs: Option<f64>,
    #[arg(long, env = "CSB_CREDENTIAL_TTL_SECS")]
    credential_ttl_secs: Option<f64>,
    #[arg(long, env = "CSB_VALIDITY_SECS")]
    validity_secs: Option<f64>,
}

impl BrokerArgs {
    fn config(&self, catalog: AttributeCatalog, tiers: TierTable) -> Result<BrokerConfig, String> {
        let mut c = BrokerConfig { catalog, tiers, ..BrokerConfig::default() };
        if let Some(v) = self.max_rounds {
            c.max_rounds = v;
        }
        let defaults = PenaltyClause::default();
        c.draft.penalty = PenaltyClause {
            violation_threshold: self.penalty_threshold.unwrap_or(defaults.violation_threshold),
            credit_per_violation: self.penalty_credit.unwrap_or(defaults.credit_per_violation),
        };
        if let Some(v) = self.window_secs {
            c.window_secs = v;
        }
        if let Some(v) = self.credential_ttl_secs {
            c.credential_ttl_secs = v;
        }
        if let Some(v) = self.validity_secs {
            c.draft.validity_secs = v;
        }
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(format!("{name} must be > 0, got {v}"))
            }
        };
        positive("window length", c.window_secs)?;
        positive("credential TTL", c.credential_ttl_secs)?;
        positive("validity", c.draft.validity_secs)?;
        if c.max_rounds == 0 {
            return Err("max rounds must be >= 1".into());
        }
        if !(c.draft.penalty.credit_per_violation.is_finite() && c.draft.penalty.credit_per_violation >= 0.0) {
            return Err("penalty credit must be >= 0".into());
        }
        Ok(c)
    }
}

#[derive(Subcommand)]
enum ScenarioCommand {
    Run {
        file: PathBuf,
        /// Persist the embedded broker here instead of running in memory.
        #[arg(long)]
        data_dir: Option<PathBuf>,
        /// Write the JSON-lines transcript to this file.
        #[arg(long)]
        transcript: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum ReportCommand {
    Usage {
        #[arg(long, env = "CSB_DATA_DIR", default_value = "csb-data")]
        data_dir: PathBuf,
        #[arg(long)]
        group: String,
        /// Seconds since the epoch or RFC 3339.
        #[arg(long)]
        from: String,
        #[arg(long)]
        to: String,
    },
    Compliance {
        contract_id: String,
        #[arg(long, env = "CSB_DATA_DIR", default_value = "csb-data")]
        data_dir: PathBuf,
        #[arg(long, requires = "to")]
        from: Option<String>,
        #[arg(long, requires = "from")]
        to: Option<String>,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, env = "CSB_WINDOW_SECS")]
        window_secs: Option<f64>,
    },
}

#[derive(Deserialize)]
struct OfferingRow {
    provider_id: String,
    qos: QosVector,
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn load_inputs(
    offerings: &Path,
    profile: &Path,
    model: &ModelArgs,
) -> Result<(Vec<(String, QosVector)>, csb_core::RequirementProfile), String> {
    let (catalog, tiers) = model.load()?;
    let rows: Vec<OfferingRow> = read_json(offerings)?;
    for r in &rows {
        r.qos.validate(&catalog).map_err(|e| format!("{}: {}: {e}", offerings.display(), r.provider_id))?;
    }
    let input: ProfileInput = read_json(profile)?;
    let profile = input.resolve(&tiers, &catalog).map_err(|e| format!("{}: {e}", profile.display()))?;
    Ok((rows.into_iter().map(|r| (r.provider_id, r.qos)).collect(), profile))
}

fn print_json(value: &impl serde::Serialize) -> Result<(), String> {
    let text = serde_json::to_string_pretty(value).map_err(|e| e.to_string())?;
    println!("{text}");
    Ok(())
}

fn open_existing(dir: &Path, config: BrokerConfig) -> Result<Broker, String> {
    if !dir.is_dir() {
        return Err(format!("data directory {} does not exist", dir.display()));
    }
    Broker::open(dir, config, Arc::new(SystemClock), Arc::new(Endpoints::new())).map_err(|e| e.to_string())
}

fn run(cli: Cli) -> Result<ExitCode, String> {
    match cli.command {
        Command::Serve(args) => {
            let (catalog, tiers) = args.model.load()?;
            let config = args.settings.config(catalog, tiers)?;
            let broker = Broker::open(&args.data_dir, config, Arc::new(SystemClock), Arc::new(Endpoints::with_http()))
                .map_err(|e| e.to_string())?;
            let runtime = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
            runtime
                .block_on(csb_core::broker::server::serve(Arc::new(broker), args.listen))
                .map_err(|e| format!("server: {e}"))?;
        }
        Command::Scenario { command: ScenarioCommand::Run { file, data_dir, transcript } } => {
            let scenario = Scenario::load(&file).map_err(|e| e.to_string())?;
            let run = run_scenario(&scenario, data_dir.as_deref()).map_err(|e| e.to_string())?;
            if let Some(out) = transcript {
                std::fs::write(&out, run.transcript_jsonl())
                    .map_err(|e| format!("cannot write {}: {e}", out.display()))?;
            }
            print_json(&serde_json::json!({ "summary": run.summary, "assertions": run.assertions }))?;
            for a in run.assertions.iter().filter(|a| !a.passed) {
                eprintln!("assertion {} failed: {}", a.index, a.detail);
            }
            if !run.all_passed() {
                return Ok(ExitCode::from(2));
            }
        }
        Command::Rank { offerings, profile, model, json } => {
            let (offerings, profile) = load_inputs(&offerings, &profile, &model)?;
            let ranking = selection::rank_offerings(&offerings, &profile).map_err(|e| e.to_string())?;
            if json {
                print_json(&ranking)?;
            } else {
                println!("{:<6}{:<16}{:>10}{:>9}  accepted", "rank", "provider", "utility", "display");
                for (i, e) in ranking.entries.iter().enumerate() {
                    println!(
                        "{:<6}{:<16}{:>10.4}{:>9.2}  {}",
                        i + 1,
                        e.provider_id,
                        e.score.utility,
                        e.score.display(),
                        if e.accepted { "yes" } else { "no" }
                    );
                }
                println!("threshold {:.4} (display {:.2})", ranking.threshold, round_display(ranking.threshold));
            }
        }
        Command::Sweep { offerings, profile, model, beta_min, beta_max, beta_step } => {
            let (offerings, profile) = load_inputs(&offerings, &profile, &model)?;
            let grid = selection::beta_grid(beta_min, beta_max, beta_step).map_err(|e| e.to_string())?;
            let table = selection::sensitivity_sweep(&offerings, &profile, &grid).map_err(|e| e.to_string())?;
            print!("{}", table.to_csv());
        }
        Command::Report { command: ReportCommand::Usage { data_dir, group, from, to } } => {
            let period = Period::parse(&from, &to).map_err(|e| e.to_string())?;
            let broker = open_existing(&data_dir, BrokerConfig::default())?;
            print_json(&broker.usage_report(&group, period))?;
        }
        Command::Report {
            command: ReportCommand::Compliance { contract_id, data_dir, from, to, model, window_secs },
        } => {
            let (catalog, tiers) = model.load()?;
            let mut config = BrokerConfig { catalog, tiers, ..BrokerConfig::default() };
            if let Some(w) = window_secs {
                config.window_secs = w;
            }
            let period = match (from, to) {
                (Some(f), Some(t)) => Some(Period::parse(&f, &t).map_err(|e| e.to_string())?),
                _ => None,
            };
            let broker = open_existing(&data_dir, config)?;
            print_json(&broker.compliance_report(&contract_id, period).map_err(|e| e.to_string())?)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_env("CSB_LOG").unwrap_or_else(|_| "info".into()))
        .init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(message) => {
            eprintln!("csb: {message}");
            ExitCode::FAILURE
        }
    }
}
