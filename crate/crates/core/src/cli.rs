//! Command-line front end.
//!
//! Exit codes: 0 ok, 1 run ended without terminating, 2 usage or config,
//! 3 provider, 4 environment.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};

use crate::checklist::{self, Rubric, ScoreCard};
use crate::coding::{self, Rater};
use crate::gateway::{self, Gateway};
use crate::provider::{ChatProvider, HttpProvider, ProviderError, ScriptRule, ScriptedProvider};
use crate::report::{self, AggregateOptions, CodedRun};
use crate::session::{Outcome, Session, SessionConfig, SessionError, DEFAULT_ENDPOINT};
use crate::transcript;

pub const EXIT_OK: i32 = 0;
pub const EXIT_UNFINISHED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_PROVIDER: i32 = 3;
pub const EXIT_ENV: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "collab",
    version,
    about = "Mixed human/AI team sessions and transcript analysis"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a session to completion and write its artifacts.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Play back provider scripts on the simulated clock.
        #[arg(long)]
        scripted: bool,
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
    /// Serve the HTTP gateway with a live session.
    Serve {
        config: PathBuf,
        /// Defaults to $COLLAB_BIND, then 127.0.0.1:8080.
        #[arg(long)]
        bind: Option<String>,
        #[arg(long)]
        scripted: bool,
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
    /// Parse a markdown transcript and code every turn.
    Code {
        transcript: PathBuf,
        #[arg(long, value_enum, default_value_t = ProviderChoice::Http)]
        provider: ProviderChoice,
        /// Rules file for the scripted provider.
        #[arg(long)]
        script: Option<PathBuf>,
        #[arg(long, default_value = DEFAULT_ENDPOINT)]
        endpoint: String,
        #[arg(long, default_value = "gpt-4")]
        model: String,
        #[arg(long, default_value = "OPENAI_API_KEY")]
        api_key_env: String,
        /// Codes CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Agreement between two codes files.
    Agree {
        codes_a: PathBuf,
        codes_b: PathBuf,
        /// Also write the full report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Condition reports and differences against a control.
    Report {
        /// `CONDITION=codes.csv`, repeatable per run.
        #[arg(required = true)]
        runs: Vec<String>,
        #[arg(long)]
        control: String,
        /// Count category 13 in proportions.
        #[arg(long)]
        include_none: bool,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Validate rubric marks into a score card.
    Score {
        marks: PathBuf,
        #[arg(long)]
        system: String,
        #[arg(long, default_value = "1")]
        run_id: String,
        /// Rubric JSON; the bundled rubric when omitted.
        #[arg(long)]
        rubric: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare score cards criterion by criterion.
    Compare {
        #[arg(required = true)]
        cards: Vec<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProviderChoice {
    Http,
    Scripted,
}

/// Error carrying its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl CliError {
    fn usage(m: impl fmt::Display) -> Self {
        Self {
            code: EXIT_USAGE,
            message: m.to_string(),
        }
    }

    fn provider(m: impl fmt::Display) -> Self {
        Self {
            code: EXIT_PROVIDER,
            message: m.to_string(),
        }
    }

    fn env(m: impl fmt::Display) -> Self {
        Self {
            code: EXIT_ENV,
            message: m.to_string(),
        }
    }
}

impl From<SessionError> for CliError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::MissingApiKey(_) | SessionError::ProviderUnavailable { .. } => {
                Self::provider(e)
            }
            SessionError::Io(_) => Self::env(e),
            SessionError::Deadlock { .. } => Self {
                code: EXIT_UNFINISHED,
                message: e.to_string(),
            },
            _ => Self::usage(e),
        }
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .map_err(|e| CliError::env(format!("{}: {e}", parent.display())))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::env(format!("{}: {e}", path.display())))
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<SessionConfig, CliError> {
    let mut config = SessionConfig::load(path)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    Ok(config)
}

/// Parses `args` (including the program name) and runs the command.
pub async fn run_from(args: impl IntoIterator<Item = String>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command).await {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}

pub async fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run {
            config,
            seed,
            scripted,
            out,
        } => cmd_run(&config, seed, scripted, &out).await,
        Command::Serve {
            config,
            bind,
            scripted,
            out,
        } => cmd_serve(&config, bind, scripted, &out).await,
        Command::Code {
            transcript,
            provider,
            script,
            endpoint,
            model,
            api_key_env,
            out,
        } => {
            let provider: Arc<dyn ChatProvider> = match provider {
                ProviderChoice::Scripted => {
                    let path = script
                        .ok_or_else(|| CliError::usage("--provider scripted needs --script"))?;
                    let rules: Vec<ScriptRule> = serde_json::from_str(&read(&path)?)
                        .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
                    Arc::new(ScriptedProvider::new(rules))
                }
                ProviderChoice::Http => {
                    let key = std::env::var(&api_key_env)
                        .ok()
                        .filter(|k| !k.is_empty())
                        .ok_or_else(|| {
                            CliError::provider(format!(
                                "environment variable {api_key_env} is not set"
                            ))
                        })?;
                    Arc::new(HttpProvider::new(endpoint, &model, Some(key)))
                }
            };
            cmd_code(&transcript, provider.as_ref(), &model, out.as_deref()).await
        }
        Command::Agree {
            codes_a,
            codes_b,
            json,
        } => cmd_agree(&codes_a, &codes_b, json.as_deref()),
        Command::Report {
            runs,
            control,
            include_none,
            json,
        } => cmd_report(&runs, &control, include_none, json.as_deref()),
        Command::Score {
            marks,
            system,
            run_id,
            rubric,
            out,
        } => cmd_score(&marks, &system, &run_id, rubric.as_deref(), out.as_deref()),
        Command::Compare { cards, csv } => cmd_compare(&cards, csv.as_deref()),
    }
}

pub async fn cmd_run(
    config: &Path,
    seed: Option<u64>,
    scripted: bool,
    out: &Path,
) -> Result<(), CliError> {
    let config = load_config(config, seed)?;
    let session = Session::builder(config).scripted(scripted).build()?;
    let result = match session.clock_mode() {
        crate::clock::ClockMode::Simulated => session.run_simulated().await,
        crate::clock::ClockMode::Real => {
            session
                .run_real(async {
                    let _ = tokio::signal::ctrl_c().await;
                })
                .await
        }
    };
    session.export(out)?;
    let meta = session.meta();
    println!(
        "{}: {} events over {:.0} s, artifacts in {}",
        meta.outcome
            .map_or("running".to_string(), |o| format!("{o:?}").to_lowercase()),
        meta.event_count,
        meta.duration_s,
        out.display()
    );
    match result {
        Ok(Outcome::ProviderUnavailable) => Err(CliError::provider("provider unavailable")),
        Ok(_) => Ok(()),
        Err(e) => Err(e.into()),
    }
}

pub async fn cmd_serve(
    config: &Path,
    bind: Option<String>,
    scripted: bool,
    out: &Path,
) -> Result<(), CliError> {
    let config = load_config(config, None)?;
    let bind = bind
        .or_else(|| std::env::var(gateway::BIND_ENV).ok())
        .unwrap_or_else(|| gateway::DEFAULT_BIND.to_string());
    let session = Session::builder(config)
        .scripted(scripted)
        .clock_mode(crate::clock::ClockMode::Real)
        .build()?;
    let listener = tokio::net::TcpListener::bind(&bind)
        .await
        .map_err(|e| CliError::env(format!("cannot bind {bind}: {e}")))?;
    let gw = Gateway::from_env();
    gw.insert(Arc::clone(&session));
    eprintln!("serving session `{}` on http://{bind}", session.id());

    let (stop_tx, stop_rx) = tokio::sync::oneshot::channel::<()>();
    let driver = {
        let session = Arc::clone(&session);
        tokio::spawn(async move {
            session
                .run_real(async {
                    let _ = stop_rx.await;
                })
                .await
        })
    };
    let server = tokio::spawn(gateway::serve(listener, gw, async {
        let _ = tokio::signal::ctrl_c().await;
    }));
    let served = server.await;
    let _ = stop_tx.send(());
    let _ = driver.await;
    session.export(out)?;
    eprintln!("artifacts in {}", out.display());
    match served {
        Ok(Ok(())) => Ok(()),
        Ok(Err(e)) => Err(CliError::env(e)),
        Err(e) => Err(CliError::env(e)),
    }
}

pub async fn cmd_code(
    transcript_path: &Path,
    provider: &dyn ChatProvider,
    model: &str,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let parsed = transcript::parse_markdown(&read(transcript_path)?);
    if parsed.skipped_lines > 0 {
        eprintln!(
            "warning: skipped {} lines before the first turn",
            parsed.skipped_lines
        );
    }
    let codes = coding::classify_all(&parsed.turns, provider, &coding::classifier_params(model))
        .await
        .map_err(|e: ProviderError| CliError::provider(e))?;
    let failures = codes.iter().filter(|c| c.parse_failure).count();
    if failures > 0 {
        eprintln!("warning: {failures} replies could not be read and were coded 13");
    }
    let mut buf = Vec::new();
    coding::write_codes(&mut buf, &codes).map_err(CliError::env)?;
    let text = String::from_utf8(buf).expect("csv is utf-8");
    match out {
        Some(p) => write(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_codes(path: &Path) -> Result<Vec<coding::CodedTurn>, CliError> {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("rater");
    let text = read(path)?;
    coding::read_codes(text.as_bytes(), &Rater::Human(stem.to_string()))
        .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

pub fn render_agreement(r: &coding::AgreementReport) -> String {
    let mut out = format!(
        "turns: {}\npercent agreement: {:.6}\np_o: {:.6}\np_e: {:.6}\nkappa: {:.6}{}\n",
        r.n,
        r.percent_agreement,
        r.p_o,
        r.p_e,
        r.kappa,
        if r.degenerate {
            " (degenerate marginals)"
        } else {
            ""
        }
    );
    let used: Vec<usize> = (0..coding::CATEGORY_COUNT)
        .filter(|&k| {
            r.confusion[k].iter().sum::<u64>() > 0 || r.confusion.iter().any(|row| row[k] > 0)
        })
        .collect();
    out.push_str("confusion (rows: first file, columns: second file)\n    ");
    for &k in &used {
        out.push_str(&format!("{:>4}", k + 1));
    }
    out.push('\n');
    for &i in &used {
        out.push_str(&format!("{:>4}", i + 1));
        for &k in &used {
            out.push_str(&format!("{:>4}", r.confusion[i][k]));
        }
        out.push('\n');
    }
    out
}

pub fn cmd_agree(a: &Path, b: &Path, json: Option<&Path>) -> Result<(), CliError> {
    let report = coding::cohens_kappa(&load_codes(a)?, &load_codes(b)?).map_err(CliError::usage)?;
    print!("{}", render_agreement(&report));
    if let Some(p) = json {
        write(
            p,
            &(serde_json::to_string_pretty(&report).expect("report serializes") + "\n"),
        )?;
    }
    Ok(())
}

pub fn cmd_report(
    runs: &[String],
    control: &str,
    include_none: bool,
    json: Option<&Path>,
) -> Result<(), CliError> {
    let mut coded = Vec::new();
    for spec in runs {
        let (name, path) = spec
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("expected CONDITION=PATH, got `{spec}`")))?;
        coded.push(CodedRun {
            condition: name.to_string(),
            codes: load_codes(Path::new(path))?,
        });
    }
    let reports = report::aggregate(&coded, AggregateOptions { include_none });
    let control_report = reports
        .iter()
        .find(|r| r.condition_name == control)
        .ok_or_else(|| CliError::usage(format!("no runs for control condition `{control}`")))?;
    let diffs: Vec<_> = reports
        .iter()
        .map(|r| report::diff_vs_control(r, control_report))
        .collect();
    let strips: BTreeMap<String, Vec<report::SequenceStrip>> =
        coded.iter().fold(BTreeMap::new(), |mut acc, run| {
            acc.entry(run.condition.clone())
                .or_insert_with(Vec::new)
                .push(report::sequence_strip(&run.codes));
            acc
        });

    for r in &reports {
        println!("{}", report::render_condition_text(r));
    }
    for d in diffs.iter().filter(|d| d.condition != control) {
        println!("{}", report::render_diff_text(d));
    }
    for (condition, list) in &strips {
        for (i, s) in list.iter().enumerate() {
            let codes: Vec<String> = s
                .entries
                .iter()
                .map(|e| e.category.code().to_string())
                .collect();
            println!("strip {condition} #{}: {}", i + 1, codes.join(" "));
        }
    }
    if let Some(p) = json {
        let doc = serde_json::json!({ "conditions": reports, "diffs": diffs, "strips": strips });
        write(
            p,
            &(serde_json::to_string_pretty(&doc).expect("report serializes") + "\n"),
        )?;
    }
    Ok(())
}

pub fn cmd_score(
    marks: &Path,
    system: &str,
    run_id: &str,
    rubric: Option<&Path>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let rubric: Rubric = match rubric {
        Some(p) => serde_json::from_str(&read(p)?)
            .map_err(|e| CliError::usage(format!("{}: {e}", p.display())))?,
        None => Rubric::default(),
    };
    let inputs = checklist::read_marks(read(marks)?.as_bytes()).map_err(CliError::usage)?;
    let card = checklist::score(system, run_id, &inputs, &rubric).map_err(CliError::usage)?;
    let (f, q) = card.totals();
    println!(
        "{system}/{run_id}: functionality {f}/{}, quality {q}/{}",
        rubric.functionality.len(),
        rubric.quality.len()
    );
    let json = serde_json::to_string_pretty(&card).expect("card serializes") + "\n";
    match out {
        Some(p) => write(p, &json),
        None => {
            print!("{json}");
            Ok(())
        }
    }
}

pub fn cmd_compare(cards: &[PathBuf], csv: Option<&Path>) -> Result<(), CliError> {
    let cards: Vec<ScoreCard> = cards
        .iter()
        .map(|p| {
            serde_json::from_str(&read(p)?)
                .map_err(|e| CliError::usage(format!("{}: {e}", p.display())))
        })
        .collect::<Result<_, _>>()?;
    let table = checklist::compare(&cards).map_err(CliError::usage)?;
    print!("{}", table.to_text());
    if let Some(p) = csv {
        write(p, &table.to_csv())?;
    }
    Ok(())
}
