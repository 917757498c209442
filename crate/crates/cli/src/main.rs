//! `find`: batch driver for the debugging workflows. Every command talks to
//! the HTTP service: the one named by `--server`, or an in-process instance
//! started for the duration of the command.

mod error;

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use find_client::{Client, CompareParams, MetricsParams};
use find_core::api::{
    AblationRequest, ApplyRequest, BiasRequest, CreateSession, DatasetInfo, DatasetSource, EmbeddingSource, ModelInfo,
    OracleSpec, RegisterDataset, RunConfig, SimulateRequest, TrainRequest,
};
use find_core::experiment::{AblationConfig, BiasConfig};
use find_core::features::Rank;
use find_core::feedback::{Answer, KeywordOracle, Policy, TaskType, DEFAULT_LEXICON_TOP_K};
use find_core::synth::{gender_corpus, sentiment_corpus, GenderSpec, SentimentSpec};
use find_service::{ServiceConfig, Server};
use serde::Serialize;

use crate::error::CliError;

/// Drop order a well-ranked annotation should produce: disabling AB hurts
/// most and disabling C hurts least.
const EXPECTED_ORDER: [&str; 7] = ["AB", "A", "AC", "BC", "B", "Original", "C"];

#[derive(Parser)]
#[command(name = "find", version, about = "Debug text classifiers by disabling explained features")]
struct Cli {
    /// Base URL of a running service; without it an in-process service is
    /// started for the command.
    #[arg(long, global = true, env = "FIND_SERVER")]
    server: Option<String>,

    /// Data directory of the in-process service (default: a temporary one).
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,

    /// Print machine-readable JSON to stdout.
    #[arg(long, global = true)]
    json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Dataset file (JSONL or CSV), or a directory holding `dataset.jsonl`
    /// (or `dataset.csv`), `embeddings.txt` and optionally `oracle.json`.
    #[arg(long)]
    data: PathBuf,

    /// Embedding file; defaults to `embeddings.txt` next to the dataset.
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct SessionArgs {
    #[arg(long, value_enum, default_value_t = TaskArg::ClassChoice)]
    task: TaskArg,

    /// Items per word cloud.
    #[arg(long, default_value_t = find_core::features::DEFAULT_TOP_N)]
    top_n: usize,
}

#[derive(Copy, Clone, ValueEnum)]
enum TaskArg {
    BinaryGraded,
    ClassChoice,
    ClassOrNone,
}

impl From<TaskArg> for TaskType {
    fn from(t: TaskArg) -> TaskType {
        match t {
            TaskArg::BinaryGraded => TaskType::BinaryGraded,
            TaskArg::ClassChoice => TaskType::ClassChoice,
            TaskArg::ClassOrNone => TaskType::ClassOrNone,
        }
    }
}

#[derive(Copy, Clone, ValueEnum)]
enum PolicyArg {
    /// Disable features whose majority answer contradicts them.
    Majority,
    /// Disable features whose cloud shows a gender term.
    Lexicon,
    /// Rank features by mean score and disable the ranks in --disable-ranks.
    Rank,
}

#[derive(Copy, Clone, ValueEnum)]
enum SynthKind {
    Sentiment,
    Gender,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write its snapshot.
    Train {
        #[command(flatten)]
        data: DataArgs,
        /// Key-value (TOML) file with model and optimizer settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write every feature's word clouds as JSON.
    Profile {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = find_core::features::DEFAULT_TOP_N)]
        top_n: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Answer every question with a simulated keyword annotator.
    Simulate {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        /// JSON map from keyword to class name; defaults to the data
        /// directory's `oracle.json`.
        #[arg(long)]
        oracle: Option<PathBuf>,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(long, default_value_t = 10)]
        respondents: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        session: SessionArgs,
        #[arg(long)]
        answers_out: PathBuf,
    },
    /// Aggregate answers, disable features, fine-tune and write the result.
    Apply {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        /// JSONL answers; optional for the lexicon policy.
        #[arg(long)]
        answers: Option<PathBuf>,
        #[arg(long, value_enum)]
        policy: PolicyArg,
        /// Ranks to disable with `--policy rank`, e.g. `AB`.
        #[arg(long, default_value = "")]
        disable_ranks: String,
        #[arg(long, default_value_t = DEFAULT_LEXICON_TOP_K)]
        top_k: usize,
        #[command(flatten)]
        session: SessionArgs,
        /// Settings for the fine-tune (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Fine-tune even when nothing is disabled.
        #[arg(long)]
        finetune_always: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Report metrics; optionally bias metrics and a comparison.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "test")]
        split: String,
        /// Comma-separated subpopulations, e.g. `male,female`.
        #[arg(long)]
        bias: Option<String>,
        /// Positive class index for bias metrics.
        #[arg(long, default_value_t = 1)]
        positive: usize,
        /// Second model to compare against the first.
        #[arg(long)]
        compare: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        iterations: usize,
    },
    /// Rank ablation: disable A/B/C/AB/AC/BC ranked features and compare.
    Exp1 {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        oracle: Option<PathBuf>,
        /// Number of training seeds (1..=N), run in parallel.
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        /// Model and training settings (TOML); the fine-tune uses the same
        /// settings with --finetune-lr.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        finetune_lr: Option<f64>,
        #[arg(long, default_value_t = 10)]
        respondents: usize,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
    },
    /// Gender-term debiasing: lexicon policy, then FPED/FNED before and after.
    ExpBias {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        finetune_lr: Option<f64>,
        #[arg(long, default_value_t = 1)]
        positive: usize,
    },
    /// Run the service in the foreground.
    Serve {
        /// Service settings (TOML); FIND_* variables override.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Write a synthetic fixture (dataset, embeddings, oracle).
    Synth {
        #[arg(long, value_enum)]
        kind: SynthKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Embedding dimension.
        #[arg(long)]
        dim: Option<usize>,
    },
}

fn main() {
    let cli = Cli::parse();
    let runtime = tokio::runtime::Runtime::new().expect("tokio runtime");
    if let Err(e) = runtime.block_on(run(cli)) {
        eprintln!("find: {e}");
        std::process::exit(e.exit_code());
    }
}

async fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Serve { config } => return serve(config.as_deref(), cli.data_dir.as_deref()).await,
        Command::Synth { kind, out, seed, dim } => return synth(&cli, *kind, out, *seed, *dim),
        _ => {}
    }
    let conn = Connection::open(&cli).await?;
    let result = dispatch(&cli, &conn.client, conn.remote).await;
    conn.close().await?;
    result
}

struct Connection {
    client: Client,
    remote: bool,
    server: Option<Server>,
    _tmp: Option<tempfile::TempDir>,
}

impl Connection {
    async fn open(cli: &Cli) -> Result<Connection, CliError> {
        if let Some(url) = &cli.server {
            return Ok(Connection {
                client: Client::new(url.clone()),
                remote: true,
                server: None,
                _tmp: None,
            });
        }
        let (data_dir, tmp) = match &cli.data_dir {
            Some(d) => (d.clone(), None),
            None => {
                let tmp = tempfile::tempdir().map_err(|e| CliError::Runtime(format!("temporary directory: {e}")))?;
                (tmp.path().to_path_buf(), Some(tmp))
            }
        };
        let config = ServiceConfig {
            port: 0,
            data_dir,
            ..ServiceConfig::default()
        };
        let server = find_service::start(&config).await?;
        Ok(Connection {
            client: Client::new(server.url()),
            remote: false,
            server: Some(server),
            _tmp: tmp,
        })
    }

    async fn close(self) -> Result<(), CliError> {
        if let Some(server) = self.server {
            server.stop().await?;
        }
        Ok(())
    }
}

async fn dispatch(cli: &Cli, client: &Client, remote: bool) -> Result<(), CliError> {
    match &cli.command {
        Command::Train { data, config, seed, out } => {
            let ds = register(client, data, remote).await?;
            let req = TrainRequest {
                dataset_id: ds.dataset_id,
                config: run_config(config.as_deref())?,
                seed: *seed,
            };
            let outcome = client.train_wait(&req).await?;
            let bytes = client.snapshot(&outcome.model.model_id).await?;
            write_file(out, &bytes)?;
            emit(cli, &outcome, || {
                format!(
                    "model {} ({} epochs, best epoch {}, dev macro F1 {:.4}) -> {}",
                    outcome.model.model_id,
                    outcome.training.epochs,
                    outcome.training.best_epoch,
                    outcome.training.best_dev_macro_f1,
                    out.display()
                )
            })
        }
        Command::Profile { model, data, top_n, out } => {
            let ds = register(client, data, remote).await?;
            let info = import(client, &ds, model).await?;
            let mut rows = Vec::new();
            for f in client.features(&info.model_id).await? {
                let clouds = client.cloud(&info.model_id, f.feature_id, Some(*top_n)).await?;
                rows.push(serde_json::json!({
                    "feature_id": f.feature_id,
                    "suggested_class": f.suggested_class,
                    "dead": f.dead,
                    "disabled": f.disabled,
                    "clouds": clouds,
                }));
            }
            write_file(out, to_json(&rows).as_bytes())?;
            let dead = rows.iter().filter(|r| r["dead"] == true).count();
            emit(cli, &serde_json::json!({ "features": rows.len(), "dead": dead }), || {
                format!("{} features ({dead} dead) -> {}", rows.len(), out.display())
            })
        }
        Command::Simulate {
            model,
            data,
            oracle,
            noise,
            respondents,
            seed,
            session,
            answers_out,
        } => {
            let ds = register(client, data, remote).await?;
            let info = import(client, &ds, model).await?;
            let oracle = load_oracle(oracle.as_deref(), data, &ds.classes)?;
            let created = client
                .create_session(&CreateSession {
                    model_id: info.model_id,
                    task: session.task.into(),
                    policy: Policy::MajorityVote,
                    top_n: Some(session.top_n),
                })
                .await?;
            let ack = client
                .simulate(
                    &created.session_id,
                    &SimulateRequest {
                        oracle,
                        respondents: *respondents,
                        noise: *noise,
                        seed: *seed,
                    },
                )
                .await?;
            let answers = client.session(&created.session_id).await?.answers;
            let text: String = answers.iter().map(to_line).collect();
            write_file(answers_out, text.as_bytes())?;
            emit(cli, &ack, || {
                format!(
                    "{} answers to {} questions -> {}",
                    ack.total,
                    created.questions,
                    answers_out.display()
                )
            })
        }
        Command::Apply {
            model,
            data,
            answers,
            policy,
            disable_ranks,
            top_k,
            session,
            config,
            seed,
            finetune_always,
            out,
        } => {
            let policy = match policy {
                PolicyArg::Majority => Policy::MajorityVote,
                PolicyArg::Lexicon => Policy::GenderLexicon { top_k: *top_k },
                PolicyArg::Rank => Policy::ScoreRank {
                    disable: parse_ranks(disable_ranks)?,
                },
            };
            let answers = match answers {
                Some(path) => read_answers(path)?,
                None if policy.needs_answers() => {
                    return Err(CliError::Validation("--answers is required for this policy".into()))
                }
                None => Vec::new(),
            };
            let ds = register(client, data, remote).await?;
            let info = import(client, &ds, model).await?;
            let created = client
                .create_session(&CreateSession {
                    model_id: info.model_id,
                    task: session.task.into(),
                    policy,
                    top_n: Some(session.top_n),
                })
                .await?;
            for chunk in answers.chunks(1000) {
                client.answers(&created.session_id, chunk.to_vec()).await?;
            }
            let req = ApplyRequest {
                config: run_config(config.as_deref())?,
                seed: *seed,
                finetune_always: *finetune_always,
            };
            let outcome = client.apply_wait(&created.session_id, &req).await?;
            let bytes = client.snapshot(&outcome.model.model_id).await?;
            write_file(out, &bytes)?;
            emit(cli, &outcome, || {
                format!(
                    "disabled {:?} (fine-tuned: {}) -> model {} -> {}",
                    outcome.disabled,
                    outcome.fine_tuned,
                    outcome.model.model_id,
                    out.display()
                )
            })
        }
        Command::Eval {
            model,
            data,
            split,
            bias,
            positive,
            compare,
            iterations,
        } => {
            let ds = register(client, data, remote).await?;
            let a = import(client, &ds, model).await?;
            let params = MetricsParams {
                dataset: Some(ds.dataset_id.clone()),
                split: Some(split.clone()),
                bias: bias
                    .as_deref()
                    .map(|b| b.split(',').map(|s| s.trim().to_string()).collect())
                    .unwrap_or_default(),
                positive: Some(*positive),
            };
            let metrics = client.metrics(&a.model_id, &params).await?;
            let comparison = match compare {
                Some(path) => {
                    let b = import(client, &ds, path).await?;
                    let p = CompareParams {
                        dataset: Some(ds.dataset_id.clone()),
                        split: Some(split.clone()),
                        iterations: Some(*iterations),
                        seed: Some(0),
                    };
                    Some(client.compare(&a.model_id, &b.model_id, &p).await?)
                }
                None => None,
            };
            let out = serde_json::json!({ "metrics": metrics, "compare": comparison });
            emit(cli, &out, || {
                let mut text = metrics.report.to_table(&a.model_id[..8]);
                if let Some(b) = &metrics.bias {
                    text.push_str(&format!("FPED {:.4}  FNED {:.4}  (positive class {})\n", b.fped, b.fned, b.positive_class));
                    for w in &b.warnings {
                        text.push_str(&format!("warning: {w}\n"));
                    }
                }
                if let Some(c) = &comparison {
                    text.push_str(&format!(
                        "compare: macro F1 {:+.4}, accuracy {:+.4}, p = {:.4}{}\n",
                        c.delta_macro_f1,
                        c.delta_accuracy,
                        c.p_value,
                        if c.significant { " (significant)" } else { "" }
                    ));
                }
                text.trim_end().to_string()
            })
        }
        Command::Exp1 {
            data,
            oracle,
            seeds,
            config,
            finetune_lr,
            respondents,
            noise,
        } => {
            let ds = register(client, data, remote).await?;
            let oracle = load_oracle(oracle.as_deref(), data, &ds.classes)?;
            let mut cfg = AblationConfig {
                seeds: seed_list(*seeds)?,
                respondents: *respondents,
                noise: *noise,
                ..AblationConfig::default()
            };
            if let Some(path) = config {
                let rc = run_config(Some(path))?;
                cfg.arch = rc.arch()?;
                cfg.max_len = rc.max_len;
                cfg.finetune = finetune_config(&rc, cfg.finetune.learning_rate);
                cfg.train = rc.train(0);
            }
            if let Some(lr) = finetune_lr {
                cfg.finetune.learning_rate = *lr;
            }
            let report = client
                .ablation_wait(&AblationRequest {
                    dataset_id: ds.dataset_id,
                    oracle,
                    config: cfg,
                })
                .await?;
            let order = report.drop_order();
            let matches = order.iter().map(String::as_str).eq(EXPECTED_ORDER);
            let out = serde_json::json!({ "report": report, "drop_order": order, "matches_expected_order": matches });
            emit(cli, &out, || {
                format!(
                    "{}\ndrop order: {}\nexpected:   {} ({})",
                    report.to_table().trim_end(),
                    order.join(" > "),
                    EXPECTED_ORDER.join(" > "),
                    if matches { "matches" } else { "differs" }
                )
            })
        }
        Command::ExpBias {
            data,
            seeds,
            config,
            finetune_lr,
            positive,
        } => {
            let ds = register(client, data, remote).await?;
            let mut cfg = BiasConfig {
                seeds: seed_list(*seeds)?,
                positive_class: *positive,
                ..BiasConfig::default()
            };
            if let Some(path) = config {
                let rc = run_config(Some(path))?;
                cfg.arch = rc.arch()?;
                cfg.max_len = rc.max_len;
                cfg.finetune = finetune_config(&rc, cfg.finetune.learning_rate);
                cfg.train = rc.train(0);
            }
            if let Some(lr) = finetune_lr {
                cfg.finetune.learning_rate = *lr;
            }
            let summary = client
                .bias_wait(&BiasRequest {
                    dataset_id: ds.dataset_id,
                    config: cfg,
                })
                .await?;
            emit(cli, &summary, || summary.to_table().trim_end().to_string())
        }
        Command::Serve { .. } | Command::Synth { .. } => unreachable!("handled in run"),
    }
}

/// Fine-tune settings: the run config with its own learning rate.
fn finetune_config(rc: &RunConfig, learning_rate: f64) -> find_core::model::TrainConfig {
    find_core::model::TrainConfig {
        learning_rate,
        ..rc.train(0)
    }
}

async fn serve(config: Option<&Path>, data_dir: Option<&Path>) -> Result<(), CliError> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
    let mut config = ServiceConfig::load(config)?;
    if let Some(dir) = data_dir {
        config.data_dir = dir.to_path_buf();
    }
    let server = find_service::start(&config).await?;
    println!("listening on {}", server.url());
    std::io::stdout().flush().ok();
    server.run_until_signal().await?;
    Ok(())
}

fn synth(cli: &Cli, kind: SynthKind, out: &Path, seed: Option<u64>, dim: Option<usize>) -> Result<(), CliError> {
    let fixture = match kind {
        SynthKind::Sentiment => {
            let d = SentimentSpec::default();
            sentiment_corpus(&SentimentSpec {
                seed: seed.unwrap_or(d.seed),
                embed_dim: dim.unwrap_or(d.embed_dim),
                ..d
            })?
        }
        SynthKind::Gender => {
            let d = GenderSpec::default();
            gender_corpus(&GenderSpec {
                seed: seed.unwrap_or(d.seed),
                embed_dim: dim.unwrap_or(d.embed_dim),
                ..d
            })?
        }
    };
    fixture.write(out)?;
    let (train, dev, test) = fixture.dataset.split_sizes();
    let summary = serde_json::json!({
        "dataset": fixture.dataset.name,
        "classes": fixture.dataset.classes,
        "train": train, "dev": dev, "test": test,
        "out": out,
    });
    emit(cli, &summary, || {
        format!(
            "{}: {train}/{dev}/{test} documents, classes {:?} -> {}",
            fixture.dataset.name,
            fixture.dataset.classes,
            out.display()
        )
    })
}

fn emit<T: Serialize>(cli: &Cli, value: &T, text: impl FnOnce() -> String) -> Result<(), CliError> {
    if cli.json {
        println!("{}", to_json(value));
    } else {
        println!("{}", text());
    }
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("output types serialize")
}

fn to_line<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("output types serialize") + "\n"
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn read_input(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))
}

fn run_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    match path {
        Some(p) => {
            let text = String::from_utf8(read_input(p)?)
                .map_err(|_| CliError::Validation(format!("{} is not UTF-8", p.display())))?;
            Ok(RunConfig::from_toml(&text)?)
        }
        None => Ok(RunConfig::default()),
    }
}

fn seed_list(n: u64) -> Result<Vec<u64>, CliError> {
    if n == 0 {
        return Err(CliError::Validation("--seeds must be at least 1".into()));
    }
    Ok((1..=n).collect())
}

fn parse_ranks(text: &str) -> Result<BTreeSet<Rank>, CliError> {
    text.chars()
        .filter(|c| !matches!(c, ',' | ' '))
        .map(|c| Rank::parse(&c.to_string()).ok_or_else(|| CliError::Validation(format!("unknown rank {c:?}; use A, B or C"))))
        .collect()
}

/// Dataset and embedding paths for `--data` / `--embeddings`.
fn data_paths(args: &DataArgs) -> Result<(PathBuf, PathBuf), CliError> {
    let data = if args.data.is_dir() {
        ["dataset.jsonl", "dataset.csv"]
            .iter()
            .map(|f| args.data.join(f))
            .find(|p| p.exists())
            .ok_or_else(|| CliError::Validation(format!("{} holds no dataset.jsonl or dataset.csv", args.data.display())))?
    } else {
        args.data.clone()
    };
    let embeddings = match &args.embeddings {
        Some(e) => e.clone(),
        None => data.with_file_name("embeddings.txt"),
    };
    for p in [&data, &embeddings] {
        if !p.exists() {
            return Err(CliError::Validation(format!("{} does not exist", p.display())));
        }
    }
    let abs = |p: PathBuf| std::fs::canonicalize(&p).map_err(|e| CliError::Validation(format!("{}: {e}", p.display())));
    Ok((abs(data)?, abs(embeddings)?))
}

/// Registers the dataset, by path for the in-process service and inline
/// for a remote one. Both give the same content id.
async fn register(client: &Client, args: &DataArgs, remote: bool) -> Result<DatasetInfo, CliError> {
    let (data, embeddings) = data_paths(args)?;
    // a fixture directory names the dataset; a bare file names itself
    let named_by = if args.data.is_dir() { args.data.file_name() } else { data.file_stem() };
    let name = named_by.and_then(|s| s.to_str()).map(String::from);
    let req = if remote {
        let text = |p: &Path| -> Result<String, CliError> {
            String::from_utf8(read_input(p)?).map_err(|_| CliError::Validation(format!("{} is not UTF-8", p.display())))
        };
        if find_core::corpus::DatasetFormat::from_path(&data) != find_core::corpus::DatasetFormat::Jsonl {
            return Err(CliError::Validation("only JSONL datasets can be sent to a remote service".into()));
        }
        RegisterDataset {
            name,
            data: DatasetSource::Inline { jsonl: text(&data)? },
            embeddings: EmbeddingSource::Inline { text: text(&embeddings)? },
        }
    } else {
        RegisterDataset {
            name,
            data: DatasetSource::Path { path: data, format: None },
            embeddings: EmbeddingSource::Path { path: embeddings },
        }
    };
    Ok(client.register_dataset(&req).await?)
}

async fn import(client: &Client, ds: &DatasetInfo, path: &Path) -> Result<ModelInfo, CliError> {
    Ok(client.import(&ds.dataset_id, read_input(path)?).await?)
}

fn load_oracle(path: Option<&Path>, data: &DataArgs, classes: &[String]) -> Result<OracleSpec, CliError> {
    let path = match path {
        Some(p) => p.to_path_buf(),
        None => {
            let dir = if data.data.is_dir() {
                data.data.clone()
            } else {
                data.data.parent().unwrap_or(Path::new(".")).to_path_buf()
            };
            dir.join("oracle.json")
        }
    };
    let text = String::from_utf8(read_input(&path)?)
        .map_err(|_| CliError::Validation(format!("{} is not UTF-8", path.display())))?;
    let spec = match serde_json::from_str::<OracleSpec>(&text) {
        Ok(spec) => spec,
        Err(_) => OracleSpec::from_oracle(&KeywordOracle::parse(&text, classes)?, classes),
    };
    spec.resolve(classes)?;
    Ok(spec)
}

fn read_answers(path: &Path) -> Result<Vec<Answer>, CliError> {
    let text = String::from_utf8(read_input(path)?)
        .map_err(|_| CliError::Validation(format!("{} is not UTF-8", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| CliError::Validation(format!("{}:{}: {e}", path.display(), n + 1)))
        })
        .collect()
}
