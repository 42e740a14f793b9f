use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;

use longpref::corpus::TaskKind;
use longpref::generation::{sample_all, Failure};
use longpref::judge::adjudicate_all;
use longpref::store::{build_triplet, mix_datasets, read_external, read_triplets, write_triplets, MixSource};

use super::{Ctx, JudgedPair, PairRecord};
use crate::error::{CliError, Result};
use crate::run::{read_jsonl, write_jsonl};

/// Samples one candidate pair per prompt from the model pool.
pub fn sample(ctx: &Ctx) -> Result<()> {
    let pool = ctx.config.pool_specs();
    if pool.len() < 2 {
        return Err(CliError::Config("sample needs at least two models in [[pool]]".into()));
    }
    let items = ctx.prompt_items()?;
    let completer = ctx.completer()?;
    let seed = ctx.config.stage_seed("sample");
    let mut pairs = Vec::new();
    let mut failures: Vec<(TaskKind, Failure)> = Vec::new();
    for task in TaskKind::ALL {
        let group: Vec<_> = items.iter().filter(|i| i.task == task).collect();
        if group.is_empty() {
            continue;
        }
        let inputs: Vec<_> = group.iter().map(|i| (i.record.clone(), i.prompt.clone())).collect();
        let run = sample_all(&completer, &inputs, &pool, seed)?;
        let mut by_id: HashMap<String, _> = run.pairs.into_iter().map(|p| (p.record_id.clone(), p)).collect();
        for item in group {
            if let Some(pair) = by_id.remove(&item.record.id) {
                pairs.push(PairRecord {
                    split: item.split.clone(),
                    task,
                    record: item.record.clone(),
                    prompt: item.prompt.clone(),
                    pair,
                });
            }
        }
        failures.extend(run.failures.into_iter().map(|f| (task, f)));
    }
    write_jsonl(&ctx.dir.pairs(), &pairs)?;
    let failure_rows: Vec<_> =
        failures.iter().map(|(t, f)| serde_json::json!({"task": t, "record_id": f.record_id, "error": f.error})).collect();
    write_jsonl(&ctx.dir.report("sample_failures.jsonl"), &failure_rows)?;
    println!("sampled {} pairs from {} prompts; {} failed", pairs.len(), items.len(), failures.len());
    println!("completion calls: {} new, {} cached", completer.misses(), completer.hits());
    if pairs.is_empty() && !failures.is_empty() {
        return Err(CliError::Transient(format!("every record failed; first error: {}", failures[0].1.error)));
    }
    Ok(())
}

/// Adjudicates every sampled pair with k judge votes.
pub fn judge(ctx: &Ctx) -> Result<()> {
    let judge = ctx.config.judge_spec().ok_or_else(|| CliError::Config("no [judge] configured".into()))?;
    let pairs: Vec<PairRecord> = read_jsonl(&ctx.dir.pairs())?;
    let prompts = ctx.judge_prompts()?;
    let completer = ctx.completer()?;
    let items: Vec<_> = pairs.iter().map(|p| (&p.record, &p.pair)).collect();
    let adjudications =
        adjudicate_all(&completer, &prompts, &items, &judge, ctx.config.votes, ctx.config.stage_seed("judge"))?;
    let judged: Vec<JudgedPair> = pairs
        .iter()
        .zip(adjudications)
        .map(|(p, adjudication)| JudgedPair { task: p.task, record_id: p.record.id.clone(), adjudication })
        .collect();
    write_jsonl(&ctx.dir.judgments(), &judged)?;
    let consensus = judged.iter().filter(|j| j.adjudication.outcome.winner().is_some()).count();
    let invalid: u32 = judged.iter().map(|j| j.adjudication.outcome.tally().invalid).sum();
    println!("judged {} pairs with k={}: {consensus} consensus, {} no consensus, {invalid} invalid votes", judged.len(), ctx.config.votes, judged.len() - consensus);
    println!("judge calls: {} new, {} cached", completer.misses(), completer.hits());
    Ok(())
}

/// Turns consensus judgments into preference triplets, one file per split.
pub fn build_pairs(ctx: &Ctx) -> Result<()> {
    let pairs: Vec<PairRecord> = read_jsonl(&ctx.dir.pairs())?;
    let judged: Vec<JudgedPair> = read_jsonl(&ctx.dir.judgments())?;
    let outcomes: HashMap<(TaskKind, &str), _> =
        judged.iter().map(|j| ((j.task, j.record_id.as_str()), &j.adjudication.outcome)).collect();
    let mut splits: BTreeMap<String, Vec<_>> = BTreeMap::new();
    let mut discarded = 0usize;
    for p in &pairs {
        let outcome = outcomes.get(&(p.task, p.record.id.as_str())).ok_or_else(|| {
            CliError::Data(format!("pair {}/{} has no judgment; run `judge` first", p.task, p.record.id))
        })?;
        let bucket = splits.entry(p.split.clone()).or_default();
        if outcome.winner().is_none() {
            discarded += 1;
            continue;
        }
        bucket.push(build_triplet(p.task, &p.prompt, &p.pair, outcome)?);
    }
    let mut total = 0;
    let mut parts = Vec::new();
    for (split, triplets) in &splits {
        let path = ctx.dir.triplets(split);
        let parent = path.parent().expect("has parent");
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        write_triplets(&path, triplets)?;
        total += triplets.len();
        parts.push(format!("{split}: {}", triplets.len()));
    }
    println!("triplets: {total} ({})", parts.join(", "));
    println!("discarded (no consensus): {discarded}");
    Ok(())
}

#[derive(Debug, clap::Args)]
pub struct MixArgs {
    /// External triplet file.
    #[arg(long)]
    pub external: PathBuf,
    #[arg(long)]
    pub take_ours: usize,
    #[arg(long)]
    pub take_external: usize,
    /// Our triplets; defaults to the training split.
    #[arg(long)]
    pub ours: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn mix(ctx: &Ctx, args: &MixArgs) -> Result<()> {
    let ours_path = args.ours.clone().unwrap_or_else(|| ctx.dir.triplets(ctx.train_split()));
    let ours = read_triplets(&ours_path)?;
    let (external, skipped) = read_external(&args.external)?;
    let seed = ctx.config.stage_seed("mix");
    let mixed = mix_datasets(
        &[
            MixSource { triplets: &ours, take: args.take_ours, seed },
            MixSource { triplets: &external, take: args.take_external, seed: seed.wrapping_add(1) },
        ],
        seed,
    )?;
    let out = args.out.clone().unwrap_or_else(|| ctx.dir.triplets("mixed"));
    write_triplets(&out, &mixed)?;
    println!(
        "mixed {} triplets ({} ours + {} external; {skipped} external records skipped) -> {}",
        mixed.len(),
        args.take_ours,
        args.take_external,
        out.display()
    );
    Ok(())
}
