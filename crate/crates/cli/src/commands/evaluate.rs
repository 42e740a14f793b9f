use std::collections::HashMap;
use std::path::PathBuf;

use longpref::corpus::TaskKind;
use longpref::eval::{best_of_n, win_rate, Evaluator, WinRatePair};
use longpref::generation::{generate_candidate, Completer};
use longpref::policy::{run_toy_ppo, write_reward_curve, ToyEnv};
use rayon::prelude::*;

use super::{Ctx, PromptItem, ResponseRecord};
use crate::error::{CliError, Result};
use crate::run::{read_jsonl, write_json, write_jsonl};
use crate::scorer::parse_scorer;

fn items_for_split(ctx: &Ctx, split: &str) -> Result<Vec<PromptItem>> {
    let items: Vec<_> = ctx.prompt_items()?.into_iter().filter(|i| i.split == split).collect();
    if items.is_empty() {
        return Err(CliError::Data(format!("split {split:?} has no prompts")));
    }
    Ok(items)
}

fn generate_all<C: Completer + ?Sized>(ctx: &Ctx, completer: &C, items: &[PromptItem], model_id: &str) -> Result<Vec<ResponseRecord>> {
    let model = ctx.config.model(model_id)?;
    let seed = ctx.config.stage_seed("winrate");
    items
        .par_iter()
        .map(|i| {
            let c = generate_candidate(completer, &i.record.id, &i.prompt, &model, seed, 0)?;
            Ok(ResponseRecord { task: i.task, record_id: i.record.id.clone(), text: c.text, score: None })
        })
        .collect()
}

#[derive(Debug, clap::Args)]
pub struct WinRateArgs {
    /// Baseline responses file (task, record_id, text per line).
    #[arg(long, conflicts_with = "baseline_model")]
    pub baseline: Option<PathBuf>,
    #[arg(long, conflicts_with = "candidate_model")]
    pub candidate: Option<PathBuf>,
    /// Generate baseline responses with this pool model instead.
    #[arg(long)]
    pub baseline_model: Option<String>,
    #[arg(long)]
    pub candidate_model: Option<String>,
    /// Score with this scorer spec instead of the configured judge.
    #[arg(long)]
    pub scorer: Option<String>,
    #[arg(long)]
    pub split: Option<String>,
}

pub fn winrate(ctx: &Ctx, args: &WinRateArgs) -> Result<()> {
    let split = ctx.eval_split(args.split.as_deref());
    let items = items_for_split(ctx, &split)?;
    let completer = ctx.completer()?;
    let load = |file: &Option<PathBuf>, model: &Option<String>, role: &str| -> Result<Vec<ResponseRecord>> {
        match (file, model) {
            (Some(path), _) => read_jsonl(path),
            (None, Some(model)) => generate_all(ctx, &completer, &items, model),
            (None, None) => Err(CliError::Config(format!("give --{role} or --{role}-model"))),
        }
    };
    let baseline = load(&args.baseline, &args.baseline_model, "baseline")?;
    let candidate = load(&args.candidate, &args.candidate_model, "candidate")?;
    let index = |rows: Vec<ResponseRecord>| -> HashMap<(TaskKind, String), String> {
        rows.into_iter().map(|r| ((r.task, r.record_id), r.text)).collect()
    };
    let (baseline, candidate) = (index(baseline), index(candidate));
    let mut pairs = Vec::new();
    for item in items {
        let key = (item.task, item.record.id.clone());
        match (baseline.get(&key), candidate.get(&key)) {
            (Some(b), Some(c)) => pairs.push(WinRatePair {
                record: item.record,
                prompt: item.prompt,
                baseline: b.clone(),
                candidate: c.clone(),
            }),
            _ => log::warn!("no response pair for {}/{}; skipped", key.0, key.1),
        }
    }
    let scorer = args.scorer.as_deref().map(|s| parse_scorer(s, ctx.config.http.timeout())).transpose()?;
    let judge = ctx.config.judge_spec();
    let prompts = ctx.judge_prompts()?;
    let evaluator = match (&scorer, &judge) {
        (Some(s), _) => Evaluator::Scorer(s.as_ref()),
        (None, Some(judge)) => Evaluator::Judge {
            completer: &completer,
            prompts: &prompts,
            judge,
            k: ctx.config.votes,
            seed: ctx.config.stage_seed("winrate-judge"),
        },
        (None, None) => return Err(CliError::Config("winrate needs --scorer or a [judge]".into())),
    };
    let report = win_rate(&pairs, &evaluator)?;
    print!("{}", report.to_table());
    write_json(&ctx.dir.report("winrate.json"), &report)
}

#[derive(Debug, clap::Args)]
pub struct BonArgs {
    /// Pool model to sample from.
    #[arg(long)]
    pub model: String,
    #[arg(long, default_value_t = 4)]
    pub n: usize,
    #[arg(long)]
    pub scorer: String,
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn bon(ctx: &Ctx, args: &BonArgs) -> Result<()> {
    let split = ctx.eval_split(args.split.as_deref());
    let items = items_for_split(ctx, &split)?;
    let model = ctx.config.model(&args.model)?;
    let scorer = parse_scorer(&args.scorer, ctx.config.http.timeout())?;
    let completer = ctx.completer()?;
    let seed = ctx.config.stage_seed("bon");
    let rows: Vec<ResponseRecord> = items
        .par_iter()
        .map(|i| {
            let best = best_of_n(&completer, &i.record.id, &i.prompt, &model, scorer.as_ref(), args.n, seed)?;
            let s = best.selected();
            Ok(ResponseRecord { task: i.task, record_id: i.record.id.clone(), text: s.candidate.text.clone(), score: Some(s.score) })
        })
        .collect::<Result<_>>()?;
    let out = args.out.clone().unwrap_or_else(|| ctx.dir.path(&format!("bon/{}_n{}.jsonl", args.model, args.n)));
    write_jsonl(&out, &rows)?;
    let mean = rows.iter().filter_map(|r| r.score).sum::<f64>() / rows.len() as f64;
    println!("best-of-{} with {}: mean selected score {mean:.4} over {} prompts -> {}", args.n, scorer.name(), rows.len(), out.display());
    Ok(())
}

#[derive(Debug, clap::Args)]
pub struct PpoArgs {
    /// Toy environment JSON: {"prompts": [{"prompt": .., "responses": [..]}]}.
    #[arg(long)]
    pub env: PathBuf,
    #[arg(long)]
    pub scorer: String,
}

pub fn ppo_toy(ctx: &Ctx, args: &PpoArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.env).map_err(|e| CliError::io(&args.env, e))?;
    let env: ToyEnv = serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", args.env.display())))?;
    let scorer = parse_scorer(&args.scorer, ctx.config.http.timeout())?;
    let run = run_toy_ppo(&env, scorer.as_ref(), &ctx.config.ppo_config())?;
    let curve = ctx.dir.path("ppo/reward_curve.tsv");
    std::fs::create_dir_all(curve.parent().expect("has parent")).map_err(|e| CliError::io(&curve, e))?;
    write_reward_curve(&curve, &run.reward_curve).map_err(|e| CliError::io(&curve, e))?;
    write_json(&ctx.dir.path("ppo/policy.json"), &run.policy)?;
    let greedy: Vec<usize> = (0..env.prompts.len()).map(|s| run.policy.argmax(s)).collect();
    write_json(&ctx.dir.path("ppo/greedy_actions.json"), &greedy)?;
    let first = run.reward_curve.first().map_or(0.0, |c| c.1);
    let last = run.reward_curve.last().map_or(0.0, |c| c.1);
    println!("ppo-toy: {} steps, mean batch reward {first:.4} -> {last:.4}; curve at {}", run.reward_curve.len(), curve.display());
    Ok(())
}
