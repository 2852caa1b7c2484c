//! `pedarec`: seed the knowledge bank, manage expert rules, moderate
//! suggested practices and inspect statistics.
//!
//! Works either on a snapshot file directly (`--bank`, which takes an
//! exclusive lock, so it refuses to run while the service owns the file) or
//! through a running service (`--server`).

mod backend;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use backend::{Backend, CliError, CliResult, Local, Remote};
use clap::{ArgGroup, Parser, Subcommand};
use pedarec_core::{NewRecommendation, Verdict};
use serde_json::{json, Value};

#[derive(Debug, Parser)]
#[command(name = "pedarec", version, about)]
#[command(group(ArgGroup::new("target").required(true).args(["bank", "server"])))]
struct Cli {
    /// Snapshot file to operate on directly.
    #[arg(long, env = "PEDAREC_BANK", global = true)]
    bank: Option<PathBuf>,
    /// Base URL of a running service, e.g. http://127.0.0.1:8080
    #[arg(long, env = "PEDAREC_SERVER", global = true)]
    server: Option<String>,
    /// Feature schema used to validate rules in --bank mode. Defaults to the
    /// built-in schema.
    #[arg(long, global = true)]
    schema: Option<PathBuf>,
    /// Admin bearer token for --server mode.
    #[arg(long, env = "PEDAREC_ADMIN_TOKEN", global = true, hide_env_values = true)]
    token: Option<String>,
    /// Print results and errors as JSON.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Import the recommendations of a corpus file, all or nothing.
    Seed { corpus: PathBuf },
    #[command(subcommand)]
    Rules(RulesCommand),
    #[command(subcommand)]
    Moderate(ModerateCommand),
    /// Counts by mode, origin and status; ratings and per-rec mean ratings.
    Stats,
    #[command(subcommand)]
    Snapshot(SnapshotCommand),
}

#[derive(Debug, Subcommand)]
enum RulesCommand {
    /// Check a rules document without installing it.
    Validate {
        file: PathBuf,
    },
    /// Replace the installed rule set.
    Load {
        file: PathBuf,
    },
    List,
}

#[derive(Debug, Subcommand)]
enum ModerateCommand {
    /// Pending suggestions with their proposer.
    List,
    /// Publish a suggestion as a new active recommendation.
    Approve {
        suggestion_id: String,
        /// Recommendation fields as JSON, or @path to a JSON file.
        #[arg(long = "as", value_name = "JSON")]
        rec: String,
    },
    Reject {
        suggestion_id: String,
    },
}

#[derive(Debug, Subcommand)]
enum SnapshotCommand {
    /// Write the whole bank as JSON to stdout or a file.
    Export {
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Replace the whole bank with a snapshot file.
    Import { file: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(out) => {
            if cli.json {
                println!("{}", out.json);
            } else if !out.text.is_empty() {
                println!("{}", out.text);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            if cli.json {
                println!("{}", json!({ "error_code": e.code, "message": e.message }));
            } else {
                eprintln!("error: {e}");
            }
            ExitCode::FAILURE
        }
    }
}

struct Output {
    text: String,
    json: Value,
}

fn read(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::new("IoError", format!("{}: {e}", path.display())))
}

fn open(cli: &Cli) -> CliResult<Box<dyn Backend>> {
    match (&cli.bank, &cli.server) {
        (Some(path), None) => Ok(Box::new(Local::open(path, cli.schema.as_deref())?)),
        (None, Some(url)) => Ok(Box::new(Remote::new(url, cli.token.clone()))),
        _ => unreachable!("clap enforces exactly one target"),
    }
}

fn run(cli: &Cli) -> CliResult<Output> {
    // read inputs before touching the bank, so a typo costs nothing
    let input = match &cli.command {
        Command::Seed { corpus: f }
        | Command::Rules(RulesCommand::Validate { file: f } | RulesCommand::Load { file: f })
        | Command::Snapshot(SnapshotCommand::Import { file: f }) => Some(read(f)?),
        _ => None,
    };
    let input = input.as_deref().unwrap_or_default();
    let backend = open(cli)?;

    Ok(match &cli.command {
        Command::Seed { .. } => {
            let n = backend.seed(input)?;
            Output {
                text: format!("imported {n} recommendations"),
                json: json!({ "imported": n }),
            }
        }
        Command::Rules(RulesCommand::Validate { .. }) => {
            let n = backend.validate_rules(input)?;
            Output {
                text: format!("{n} rules valid"),
                json: json!({ "valid": true, "rules": n }),
            }
        }
        Command::Rules(RulesCommand::Load { .. }) => {
            let n = backend.load_rules(input)?;
            Output {
                text: format!("loaded {n} rules"),
                json: json!({ "loaded": n }),
            }
        }
        Command::Rules(RulesCommand::List) => {
            let rules = backend.rules()?;
            let text = rules
                .iter()
                .map(|r| {
                    let conds: Vec<String> = r
                        .conditions
                        .iter()
                        .map(|c| serde_json::to_string(c).expect("serializable"))
                        .collect();
                    let verdict = match r.verdict {
                        Verdict::Accept => "accept",
                        Verdict::Reject => "reject",
                    };
                    format!(
                        "{}\t{verdict}\t{}\tpriority {}\t{}",
                        r.rule_id,
                        r.rec_id,
                        r.priority,
                        if conds.is_empty() {
                            "always".to_string()
                        } else {
                            conds.join(" AND ")
                        }
                    )
                })
                .collect::<Vec<_>>()
                .join("\n");
            Output {
                text,
                json: json!({ "rules": rules }),
            }
        }
        Command::Moderate(ModerateCommand::List) => {
            let pending = backend.queue()?;
            let text = if pending.is_empty() {
                "no pending suggestions".to_string()
            } else {
                pending
                    .iter()
                    .map(|p| format!("{}\t{}\t{}", p.suggestion_id, p.proposer, p.text))
                    .collect::<Vec<_>>()
                    .join("\n")
            };
            Output {
                text,
                json: json!({ "pending": pending }),
            }
        }
        Command::Moderate(ModerateCommand::Approve { suggestion_id, rec }) => {
            let raw = match rec.strip_prefix('@') {
                Some(path) => read(Path::new(path))?,
                None => rec.clone(),
            };
            let rec: NewRecommendation =
                serde_json::from_str(&raw).map_err(|e| CliError::new("MalformedRecommendation", e.to_string()))?;
            let rec_id = backend.approve(suggestion_id, rec)?;
            Output {
                text: format!("approved {suggestion_id} as {rec_id}"),
                json: json!({ "suggestion_id": suggestion_id, "rec_id": rec_id }),
            }
        }
        Command::Moderate(ModerateCommand::Reject { suggestion_id }) => {
            backend.reject(suggestion_id)?;
            Output {
                text: format!("rejected {suggestion_id}"),
                json: json!({ "suggestion_id": suggestion_id }),
            }
        }
        Command::Stats => {
            let stats = backend.stats()?;
            let map = |m: &std::collections::BTreeMap<String, usize>| {
                m.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" ")
            };
            let mut text = format!(
                "by mode:   {}\nby origin: {}\nby status: {}\nratings:   {}\nsessions:  {}",
                map(&stats.recommendations_by_mode),
                map(&stats.recommendations_by_origin),
                map(&stats.recommendations_by_status),
                stats.rating_count,
                stats.session_count
            );
            for (rec, mean) in &stats.mean_rating {
                text.push_str(&format!("\nmean {rec}: {mean:.2}"));
            }
            Output {
                text,
                json: json!(stats),
            }
        }
        Command::Snapshot(SnapshotCommand::Export { out }) => {
            let snapshot = backend.export()?;
            match out {
                Some(path) => {
                    pedarec_core::bank::atomic_write(path, snapshot.as_bytes())
                        .map_err(|e| CliError::new("IoError", format!("{}: {e}", path.display())))?;
                    Output {
                        text: format!("wrote {}", path.display()),
                        json: json!({ "written": path }),
                    }
                }
                None => {
                    let value: Value = serde_json::from_str(&snapshot)
                        .map_err(|e| CliError::new("UnexpectedResponse", e.to_string()))?;
                    Output {
                        text: snapshot,
                        json: value,
                    }
                }
            }
        }
        Command::Snapshot(SnapshotCommand::Import { file }) => {
            backend.import(input)?;
            Output {
                text: format!("imported {}", file.display()),
                json: json!({ "imported": file }),
            }
        }
    })
}
