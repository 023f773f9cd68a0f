use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use quota::pipeline::{execute, Mode, RunConfig};
use quota::sampler::{compute_frame_count, sample_timestamps, SamplingConfig};
use quota::{AssignerKind, QuotaError, Strategy};
use serde_json::json;

/// Query-oriented visual token assignment for video embeddings.
#[derive(Parser, Debug)]
#[command(name = "quota", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Score, allocate and reduce the embeddings; writes tensors and a report.
    Run(RunArgs),
    /// Score and allocate only; writes the report without touching tensors.
    Plan(RunArgs),
    /// Print the frame count and sampling timestamps for a video duration.
    Frames(FramesArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// JSON config file; flags given on the command line override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input embeddings (QTEM binary).
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// The user query.
    #[arg(long)]
    query: Option<String>,
    /// Total token budget (default: frames x source grid).
    #[arg(long)]
    budget: Option<usize>,
    /// bilinear, pool or merge.
    #[arg(long)]
    assigner: Option<AssignerKind>,
    /// mock[:SEED], file:PATH or http:URL (default: $QUOTA_SCORER_URL, else mock:0).
    #[arg(long)]
    scorer: Option<String>,
    /// direct, entity or event.
    #[arg(long)]
    strategy: Option<Strategy>,
    /// Where to write the reduced embeddings (run only).
    #[arg(long)]
    out_embeddings: Option<PathBuf>,
    /// Where to write the JSON report.
    #[arg(long)]
    out_report: Option<PathBuf>,
    /// Video duration in seconds; drives frame sampling.
    #[arg(long, allow_negative_numbers = true)]
    duration: Option<f64>,
    #[arg(long)]
    t_base: Option<usize>,
    #[arg(long)]
    alpha: Option<usize>,
    /// Treat every input frame as already sampled.
    #[arg(long)]
    frames_are_presampled: bool,
    /// Maximum concurrent requests to a remote scorer.
    #[arg(long)]
    max_in_flight: Option<usize>,
    /// Use this file as the decoupling model's response instead of calling it.
    #[arg(long)]
    decouple_response: Option<PathBuf>,
    /// Directory of per-frame images sent to a remote scorer, in sorted order.
    #[arg(long)]
    frame_images: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FramesArgs {
    /// Video duration in seconds.
    #[arg(long, allow_negative_numbers = true)]
    duration: f64,
    #[arg(long, default_value_t = SamplingConfig::default().t_base())]
    t_base: usize,
    #[arg(long, default_value_t = SamplingConfig::default().alpha())]
    alpha: usize,
}

impl RunArgs {
    fn into_config(self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_json_file(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field {
                    cfg.$field = v;
                }
            )*};
        }
        macro_rules! set_opt {
            ($($field:ident),*) => {$(
                if self.$field.is_some() {
                    cfg.$field = self.$field;
                }
            )*};
        }
        set!(
            embeddings,
            query,
            assigner,
            strategy,
            out_report,
            t_base,
            alpha,
            max_in_flight
        );
        set_opt!(
            budget,
            scorer,
            out_embeddings,
            duration,
            decouple_response,
            frame_images
        );
        cfg.frames_are_presampled |= self.frames_are_presampled;
        if cfg.embeddings.as_os_str().is_empty() {
            bail!(QuotaError::Config("--embeddings is required".into()));
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run(args) => {
            let cfg = args.into_config()?;
            let outcome = execute(&cfg, Mode::Run)?;
            let totals = &outcome.report.totals;
            println!(
                "{} frames, {} of {} tokens -> {}",
                outcome.report.frames.len(),
                totals.used,
                totals.budget,
                cfg.out_embeddings.unwrap_or_default().display()
            );
        }
        Command::Plan(args) => {
            let cfg = args.into_config()?;
            let outcome = execute(&cfg, Mode::Plan)?;
            let totals = &outcome.report.totals;
            println!(
                "{} frames, {} of {} tokens",
                outcome.report.frames.len(),
                totals.used,
                totals.budget
            );
        }
        Command::Frames(args) => {
            let sampling = SamplingConfig::new(args.t_base, args.alpha)?;
            let count = compute_frame_count(args.duration, sampling)?;
            let timestamps =
                sample_timestamps(args.duration, count).context("sampling timestamps")?;
            let mut text = format!("{count}\n");
            for t in timestamps {
                text.push_str(&format!("{t}\n"));
            }
            match std::io::stdout().lock().write_all(text.as_bytes()) {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => return Err(e.into()),
                _ => {}
            }
        }
    }
    Ok(())
}

fn error_json(err: &anyhow::Error) -> serde_json::Value {
    let mut body = json!({ "kind": "internal", "message": format!("{err:#}") });
    if let Some(e) = err.downcast_ref::<QuotaError>() {
        body["kind"] = json!(e.kind());
        if let Some(frame) = e.frame_index() {
            body["frame"] = json!(frame);
        }
    }
    json!({ "error": body })
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", error_json(&err));
            ExitCode::FAILURE
        }
    }
}
