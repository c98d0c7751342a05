//! `qapt`: dataset generation, program parsing and execution, question
//! answering, evaluation, and the HTTP service behind one binary.
//!
//! Exit codes: 0 success, 1 I/O or connection failure, 2 usage error,
//! 3 parse/validation failure (including unmatched questions), 4 execution
//! failure.

use std::io::Read;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use qapt_client::{Client, ClientError};
use qapt_core::boxmodel::{Constants, Simulator};
use qapt_core::datagen::{self, DatagenError, DatasetExample, GenConfig, Manifest, SplitConfig};
use qapt_core::dsl::{parse, print_program, ParseError};
use qapt_core::executor::{series, Executor};
use qapt_core::metrics::{
    self, EvalOptions, Granularity, MetricsError, Normalization, PredictionRecord,
};
use qapt_core::qforms::Registry;
use qapt_core::textcodec::registry_vocab;
use qapt_core::wire::{Engine, ErrorBody, QaResponse, TranslateRequest};
use qapt_service::{ApiError, Service, ServiceConfig};

#[derive(Parser, Debug)]
#[command(name = "qapt", version, about = "AMOC question/program toolkit")]
struct Cli {
    /// Print machine-readable JSON on stdout (errors included).
    #[arg(long, global = true)]
    json: bool,
    /// Send run/ask to a running service instead of computing locally.
    #[arg(long, global = true, env = "QAPT_SERVER", value_name = "URL")]
    server: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a dataset: train.jsonl, test.jsonl, manifest.json, vocab.txt.
    Gen(GenArgs),
    /// Split an existing JSON Lines file of examples into train and test.
    Split(SplitArgs),
    /// Parse a program and print its canonical form.
    Parse {
        /// Program text, or `-` to read stdin.
        program: String,
    },
    /// Execute a program and print the answer.
    Run {
        /// Program text, or `-` to read stdin.
        program: String,
        /// Write the queried variable and M_n per step to this CSV file.
        #[arg(long, value_name = "FILE")]
        series: Option<PathBuf>,
    },
    /// Translate a question to a program and execute it.
    Ask {
        question: String,
        #[arg(long, default_value = "reference")]
        engine: Engine,
    },
    /// Score a predictions file.
    Eval(EvalArgs),
    /// Start the HTTP service.
    Serve(ServeArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Execute every program and store its answer.
    #[arg(long)]
    execute: bool,
    /// Draw forms by variant count instead of uniformly.
    #[arg(long)]
    no_balance: bool,
    #[arg(long, default_value_t = 0.1)]
    test_frac: f64,
    /// Relative half-width of value noise.
    #[arg(long, default_value_t = 0.3)]
    noise_rel: f64,
    /// Grid levels per side for SetTo values; 0 draws continuous values.
    #[arg(long, default_value_t = 3)]
    value_levels: u32,
}

#[derive(Args, Debug)]
struct SplitArgs {
    /// JSON Lines file of examples.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    test_frac: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Keep the training set as is instead of equalizing forms.
    #[arg(long)]
    no_rebalance: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// JSON Lines file of prediction records.
    predictions: PathBuf,
    #[arg(long, default_value = "char")]
    granularity: Granularity,
    #[arg(long, value_enum, default_value = "max-length")]
    normalization: NormArg,
    /// Write report.json, cdf.csv and forms.csv here.
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum NormArg {
    MaxLength,
    YujianBo,
}

impl From<NormArg> for Normalization {
    fn from(n: NormArg) -> Self {
        match n {
            NormArg::MaxLength => Normalization::MaxLength,
            NormArg::YujianBo => Normalization::YujianBo,
        }
    }
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[arg(long, env = "QAPT_PORT", default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Base URL of a model adapter serving POST /predict.
    #[arg(long, env = "QAPT_MODEL_URL")]
    model_url: Option<String>,
    /// Return an error instead of the reference translation when the model fails.
    #[arg(long)]
    no_fallback: bool,
    /// Send permissive cross-origin headers.
    #[arg(long)]
    dev: bool,
}

/// A failed command: exit code plus the error to report.
#[derive(Debug)]
struct Failure {
    code: u8,
    body: ErrorBody,
    /// Source text for a caret under the error position.
    source: Option<String>,
}

impl Failure {
    fn new(code: u8, error: &str, message: impl Into<String>) -> Self {
        Failure {
            code,
            body: ErrorBody::new(error, message),
            source: None,
        }
    }

    fn io(e: impl std::fmt::Display) -> Self {
        Failure::new(1, "io_error", e.to_string())
    }

    fn with_source(mut self, text: &str) -> Self {
        self.source = Some(text.to_string());
        self
    }
}

fn status_code(status: u16, error: &str) -> u8 {
    match (status, error) {
        (400 | 422, _) => 3,
        (_, "numerical_blowup") => 4,
        _ => 1,
    }
}

impl From<ApiError> for Failure {
    fn from(e: ApiError) -> Self {
        Failure {
            code: status_code(e.status, &e.body.error),
            body: e.body,
            source: None,
        }
    }
}

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Self {
        match e {
            ClientError::Api { status, body } => Failure {
                code: status_code(status, &body.error),
                body,
                source: None,
            },
            ClientError::Http(e) => Failure::new(1, "connection_error", e.to_string()),
        }
    }
}

impl From<ParseError> for Failure {
    fn from(e: ParseError) -> Self {
        ApiError::from(e).into()
    }
}

impl From<DatagenError> for Failure {
    fn from(e: DatagenError) -> Self {
        let code = match e {
            DatagenError::Io(_) => 1,
            DatagenError::Execution { .. } => 4,
            _ => 3,
        };
        Failure::new(code, "dataset_error", e.to_string())
    }
}

impl From<MetricsError> for Failure {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::EmptyInput => Failure::new(3, "empty_input", e.to_string()),
            other => Failure::io(other),
        }
    }
}

struct Ctx {
    json: bool,
    server: Option<Client>,
}

impl Ctx {
    fn emit<T: Serialize>(&self, value: &T, text: impl FnOnce() -> String) {
        if self.json {
            println!(
                "{}",
                serde_json::to_string(value).expect("serializable output")
            );
        } else {
            println!("{}", text());
        }
    }
}

fn read_arg(text: &str) -> Result<String, Failure> {
    if text != "-" {
        return Ok(text.to_string());
    }
    let mut buf = String::new();
    std::io::stdin()
        .read_to_string(&mut buf)
        .map_err(Failure::io)?;
    Ok(buf.trim_end_matches(['\n', '\r']).to_string())
}

fn runtime() -> Result<tokio::runtime::Runtime, Failure> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(Failure::io)
}

fn constants() -> Result<Constants, Failure> {
    Constants::from_env()
        .map_err(|e| Failure::new(1, "config_error", format!("QAPT_CONSTANTS: {e}")))
}

fn cmd_gen(ctx: &Ctx, a: GenArgs) -> Result<(), Failure> {
    let cfg = GenConfig {
        n_examples: a.n,
        seed: a.seed,
        noise_rel: a.noise_rel,
        execute_answers: a.execute,
        balance: !a.no_balance,
        value_levels: a.value_levels,
    };
    let executor = Executor::new(Simulator::new(constants()?));
    let registry = Registry::new();
    let examples = datagen::generate_with(&cfg, &registry, &executor)?;
    let split_cfg = SplitConfig {
        test_frac: a.test_frac,
        seed: a.seed,
        ..SplitConfig::default()
    };
    let (train, test) = datagen::split(&examples, &split_cfg)?;
    let manifest = Manifest::new(Some(cfg), split_cfg, &train, &test);
    datagen::write_dataset(&a.out, &manifest, &train, &test)?;
    registry_vocab(&registry)
        .write(a.out.join("vocab.txt"))
        .map_err(Failure::io)?;
    ctx.emit(&manifest, || {
        format!(
            "wrote {} train and {} test examples to {}",
            train.len(),
            test.len(),
            a.out.display()
        )
    });
    Ok(())
}

fn cmd_split(ctx: &Ctx, a: SplitArgs) -> Result<(), Failure> {
    let examples: Vec<DatasetExample> = datagen::read_jsonl(&a.input)?;
    let split_cfg = SplitConfig {
        test_frac: a.test_frac,
        seed: a.seed,
        rebalance: !a.no_rebalance,
    };
    let (train, test) = datagen::split(&examples, &split_cfg)?;
    let manifest = Manifest::new(None, split_cfg, &train, &test);
    datagen::write_dataset(&a.out, &manifest, &train, &test)?;
    ctx.emit(&manifest, || {
        format!(
            "wrote {} train and {} test examples to {}",
            train.len(),
            test.len(),
            a.out.display()
        )
    });
    Ok(())
}

fn cmd_parse(ctx: &Ctx, program: String) -> Result<(), Failure> {
    let text = read_arg(&program)?;
    let p = parse(&text).map_err(|e| Failure::from(e).with_source(&text))?;
    let canonical = print_program(&p);
    ctx.emit(&serde_json::json!({ "program": canonical }), || {
        canonical.clone()
    });
    Ok(())
}

fn write_series(
    path: &PathBuf,
    variable: &str,
    steps: &[u32],
    values: &[f64],
    m_n: &[f64],
) -> Result<(), Failure> {
    let mut out = format!("step,{variable},M_n\n");
    for ((s, v), m) in steps.iter().zip(values).zip(m_n) {
        out.push_str(&format!("{s},{v},{m}\n"));
    }
    std::fs::write(path, out).map_err(Failure::io)
}

fn cmd_run(ctx: &Ctx, program: String, series_path: Option<PathBuf>) -> Result<(), Failure> {
    let text = read_arg(&program)?;
    let answer = match &ctx.server {
        Some(client) => {
            let resp = runtime()?
                .block_on(client.execute(&text))
                .map_err(|e| Failure::from(e).with_source(&text))?;
            if let Some(path) = &series_path {
                let s = &resp.series;
                write_series(path, s.variable.name(), &s.steps, &s.values, &s.m_n)?;
            }
            resp.answer
        }
        None => {
            let p = parse(&text).map_err(|e| Failure::from(e).with_source(&text))?;
            let (answer, run) = Executor::new(Simulator::new(constants()?))
                .execute_with_run(&p)
                .map_err(|e| Failure::from(ApiError::from(e)))?;
            if let Some(path) = &series_path {
                let steps: Vec<u32> = (0..run.len() as u32).collect();
                write_series(
                    path,
                    p.variable.name(),
                    &steps,
                    series(&run, p.variable),
                    &run.m_n,
                )?;
            }
            answer
        }
    };
    ctx.emit(&answer, || {
        serde_json::to_string_pretty(&answer).expect("serializable answer")
    });
    Ok(())
}

#[derive(Serialize)]
struct AskOutput {
    program: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    source: Option<Engine>,
    #[serde(skip_serializing_if = "Option::is_none")]
    form_id: Option<u8>,
    answer: qapt_core::executor::Answer,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    warnings: Vec<String>,
}

fn cmd_ask(ctx: &Ctx, question: String, engine: Engine) -> Result<(), Failure> {
    let req = TranslateRequest {
        question,
        engine: Some(engine),
        fallback: None,
    };
    let rt = runtime()?;
    let resp: QaResponse = match &ctx.server {
        Some(client) => rt.block_on(client.qa(&req))?,
        None => {
            let config = ServiceConfig::from_env()
                .map_err(|e| Failure::new(1, "config_error", format!("QAPT_CONSTANTS: {e}")))?;
            let svc = Arc::new(Service::new(config));
            rt.block_on(svc.qa(&req))?
        }
    };
    let out = AskOutput {
        program: resp.program,
        source: resp.source,
        form_id: resp.form_id,
        answer: resp.answer,
        warnings: resp.warnings,
    };
    ctx.emit(&out, || {
        let value = match out.answer.value {
            qapt_core::executor::AnswerValue::Number(v) => format!("{v} {}", out.answer.unit),
            qapt_core::executor::AnswerValue::Bool(b) => b.to_string(),
        };
        let mut s = format!("{}\n{}", out.program, value.trim_end());
        for w in &out.warnings {
            s.push_str(&format!("\nwarning: {w}"));
        }
        s
    });
    Ok(())
}

fn cmd_eval(ctx: &Ctx, a: EvalArgs) -> Result<(), Failure> {
    let records: Vec<PredictionRecord> = datagen::read_jsonl(&a.predictions)?;
    let options = EvalOptions {
        granularity: a.granularity,
        normalization: a.normalization.into(),
    };
    let report = metrics::evaluate(&records, options)?;
    if let Some(dir) = &a.out_dir {
        std::fs::create_dir_all(dir).map_err(Failure::io)?;
        let json = serde_json::to_string_pretty(&report).expect("serializable report");
        std::fs::write(dir.join("report.json"), json + "\n").map_err(Failure::io)?;
        metrics::write_cdf_csv(&report, dir.join("cdf.csv"))?;
        metrics::write_forms_csv(&report, dir.join("forms.csv"))?;
    }
    ctx.emit(&report, || {
        let mut s = format!("{} records\n", report.records);
        for (dir, r) in &report.directions {
            s.push_str(&format!(
                "{}: mean {:.2} std {:.2} (n={}), unweighted form mean {:.2}\n",
                dir.name(),
                r.overall.mean,
                r.overall.std,
                r.overall.count,
                r.unweighted_form_mean
            ));
        }
        s.trim_end().to_string()
    });
    Ok(())
}

fn cmd_serve(a: ServeArgs) -> Result<(), Failure> {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .init();
    let mut config = ServiceConfig::from_env()
        .map_err(|e| Failure::new(1, "config_error", format!("QAPT_CONSTANTS: {e}")))?;
    config.model_url = a.model_url.filter(|u| !u.trim().is_empty());
    config.fallback = !a.no_fallback;
    let app = qapt_service::router(Arc::new(Service::new(config)), a.dev);
    runtime()?.block_on(async {
        let listener = tokio::net::TcpListener::bind((a.host.as_str(), a.port))
            .await
            .map_err(Failure::io)?;
        let addr = listener.local_addr().map_err(Failure::io)?;
        eprintln!("listening on http://{addr}");
        qapt_service::serve(listener, app, qapt_service::shutdown_signal())
            .await
            .map_err(Failure::io)
    })
}

fn report(ctx: &Ctx, f: &Failure) {
    if ctx.json {
        println!(
            "{}",
            serde_json::to_string(&f.body).expect("serializable error")
        );
        return;
    }
    eprintln!("error: {}", f.body.message);
    if let (Some(src), Some(pos)) = (&f.source, f.body.position) {
        if !src.contains('\n') {
            eprintln!("  {src}");
            eprintln!(
                "  {}^",
                " ".repeat(src[..pos.min(src.len())].chars().count())
            );
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let ctx = Ctx {
        json: cli.json,
        server: cli.server.filter(|s| !s.trim().is_empty()).map(Client::new),
    };
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(&ctx, a),
        Command::Split(a) => cmd_split(&ctx, a),
        Command::Parse { program } => cmd_parse(&ctx, program),
        Command::Run { program, series } => cmd_run(&ctx, program, series),
        Command::Ask { question, engine } => cmd_ask(&ctx, question, engine),
        Command::Eval(a) => cmd_eval(&ctx, a),
        Command::Serve(a) => cmd_serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            report(&ctx, &f);
            ExitCode::from(f.code)
        }
    }
}
