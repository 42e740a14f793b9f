use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use longpref::annotation::{replay_log, AnnotationConfig, AnnotationItem, AnnotationService};
use longpref::corpus::TaskKind;
use longpref::eval::{agreement_rate, AgreementReport, LabeledOutcome};
use longpref_annotate::ServerOptions;

use super::{Ctx, JudgedPair, PairRecord};
use crate::error::{CliError, Result};
use crate::run::{read_jsonl, write_json, write_jsonl};

fn annotation_config(ctx: &Ctx) -> Result<AnnotationConfig> {
    let a = &ctx.config.annotation;
    if a.annotators.is_empty() {
        return Err(CliError::Config("annotation.annotators is empty".into()));
    }
    Ok(AnnotationConfig {
        annotators: a.annotators.clone(),
        judgments_per_task: a.judgments_per_task,
        seed: ctx.config.stage_seed("annotation"),
    })
}

fn items_path(ctx: &Ctx) -> PathBuf {
    ctx.dir.path("annotation/items.jsonl")
}

fn log_path(ctx: &Ctx) -> PathBuf {
    ctx.dir.path("annotation/judgments.jsonl")
}

/// Annotation items from judged pairs of one split, with the AI outcome attached.
fn build_items(ctx: &Ctx, split: &str) -> Result<Vec<AnnotationItem>> {
    let pairs: Vec<PairRecord> = read_jsonl(&ctx.dir.pairs())?;
    let judged: Vec<JudgedPair> = read_jsonl(&ctx.dir.judgments())?;
    let outcomes: HashMap<(TaskKind, String), _> =
        judged.into_iter().map(|j| ((j.task, j.record_id), j.adjudication.outcome)).collect();
    Ok(pairs
        .into_iter()
        .filter(|p| p.split == split)
        .map(|p| AnnotationItem {
            task_id: format!("{}:{}", p.task, p.record.id),
            task: p.task,
            ai: outcomes.get(&(p.task, p.record.id.clone())).cloned(),
            prompt: p.prompt,
            first: p.pair.first.text,
            second: p.pair.second.text,
        })
        .collect())
}

fn load_items(ctx: &Ctx, explicit: Option<&PathBuf>, split: Option<&str>) -> Result<Vec<AnnotationItem>> {
    if let Some(path) = explicit {
        return read_jsonl(path);
    }
    let path = items_path(ctx);
    if path.exists() {
        return read_jsonl(&path);
    }
    let items = build_items(ctx, &ctx.eval_split(split))?;
    write_jsonl(&path, &items)?;
    Ok(items)
}

#[derive(Debug, clap::Args)]
pub struct ServeArgs {
    /// Annotation items; built from the judged pairs of `--split` when absent.
    #[arg(long)]
    pub items: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<String>,
    /// Overrides annotation.bind.
    #[arg(long)]
    pub bind: Option<SocketAddr>,
    /// Built UI bundle to serve at `/`.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
}

pub fn serve(ctx: &Ctx, args: &ServeArgs) -> Result<()> {
    let items = load_items(ctx, args.items.as_ref(), args.split.as_deref())?;
    let config = annotation_config(ctx)?;
    let secret = match &ctx.config.annotation.secret_env {
        Some(var) => Some(std::env::var(var).map_err(|_| CliError::Config(format!("{var} is not set")))?),
        None => None,
    };
    let addr = match args.bind {
        Some(a) => a,
        None => ctx.config.annotation.bind.parse().map_err(|e| CliError::Config(format!("annotation.bind: {e}")))?,
    };
    let log = log_path(ctx);
    std::fs::create_dir_all(log.parent().expect("has parent")).map_err(|e| CliError::io(&log, e))?;
    let service = Arc::new(AnnotationService::open(items, &config, &log)?);
    let progress = service.progress();
    println!("serving {} tasks ({} fully judged) on http://{addr}", progress.tasks, progress.fully_judged);
    let options = ServerOptions { secret, static_dir: args.static_dir.clone() };
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Io(e.to_string()))?;
    runtime
        .block_on(longpref_annotate::serve(service, &options, addr))
        .map_err(|e| CliError::Config(format!("serving on {addr}: {e}")))
}

#[derive(Debug, clap::Args)]
pub struct AgreementArgs {
    /// Human outcomes (pair_id, task, winner per line); needs --ai too.
    #[arg(long, requires = "ai")]
    pub human: Option<PathBuf>,
    #[arg(long, requires = "human")]
    pub ai: Option<PathBuf>,
    /// Annotation items for replaying the annotation log.
    #[arg(long)]
    pub items: Option<PathBuf>,
}

pub fn agreement(ctx: &Ctx, args: &AgreementArgs) -> Result<()> {
    let report: AgreementReport = match (&args.human, &args.ai) {
        (Some(h), Some(a)) => {
            let human: Vec<LabeledOutcome> = read_jsonl(h)?;
            let ai: Vec<LabeledOutcome> = read_jsonl(a)?;
            agreement_rate(&human, &ai)?
        }
        _ => {
            let items = load_items(ctx, args.items.as_ref(), None)?;
            let tasks = replay_log(items, &annotation_config(ctx)?, log_path(ctx))?;
            let (mut human, mut ai) = (Vec::new(), Vec::new());
            for t in tasks {
                if let (Some(h), Some(a)) = (&t.human, &t.item.ai) {
                    let outcome = |winner| LabeledOutcome { pair_id: t.item.task_id.clone(), task: t.item.task, winner };
                    human.push(outcome(h.winner()));
                    ai.push(outcome(a.winner()));
                }
            }
            agreement_rate(&human, &ai)?
        }
    };
    print!("{}", report.to_table());
    write_json(&ctx.dir.report("agreement.json"), &report)
}
