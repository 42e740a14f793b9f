use std::path::PathBuf;

use longpref::eval::benchmark_scorers;
use longpref::reward::{fit_bt, pairwise_accuracy, HashingFeaturizer, LinearBt, Scorer};
use longpref::store::read_triplets;

use super::Ctx;
use crate::error::Result;
use crate::run::{write_atomic, write_json};
use crate::scorer::parse_scorer;

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    /// Training triplets; defaults to the training split.
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn train_rm(ctx: &Ctx, args: &TrainArgs) -> Result<()> {
    let path = args.train.clone().unwrap_or_else(|| ctx.dir.triplets(ctx.train_split()));
    let triplets = read_triplets(&path)?;
    let featurizer = HashingFeaturizer::from_id(&ctx.config.reward.featurizer)?;
    let (params, report) = fit_bt(&triplets, &featurizer, &ctx.config.fit_config())?;
    let out = args.out.clone().unwrap_or_else(|| ctx.dir.params());
    if let Some(parent) = out.parent() {
        std::fs::create_dir_all(parent).map_err(|e| crate::error::CliError::io(parent, e))?;
    }
    params.save(&out)?;
    write_json(
        &out.with_file_name("fit_report.json"),
        &serde_json::json!({
            "triplets": triplets.len(),
            "initial_loss": report.initial_loss,
            "epoch_losses": report.epoch_losses,
        }),
    )?;
    println!(
        "trained on {} triplets; loss {:.4} -> {:.4}; saved {}",
        triplets.len(),
        report.initial_loss,
        report.final_loss(),
        out.display()
    );
    Ok(())
}

#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Test triplets; defaults to the test split.
    #[arg(long)]
    pub testset: Option<PathBuf>,
}

pub fn eval_rm(ctx: &Ctx, args: &EvalArgs) -> Result<()> {
    let params = args.params.clone().unwrap_or_else(|| ctx.dir.params());
    let testset = args.testset.clone().unwrap_or_else(|| ctx.dir.triplets(&ctx.eval_split(None)));
    let scorer = LinearBt::load(&params)?;
    let triplets = read_triplets(&testset)?;
    let report = pairwise_accuracy(&scorer, &triplets)?;
    for (task, acc) in &report.per_task {
        println!("{task:<4} {:.3} (n={})", acc.accuracy, acc.n);
    }
    println!("pairwise accuracy: {:.3} (n={})", report.overall, report.n);
    write_json(&ctx.dir.report("eval_rm.json"), &report)
}

#[derive(Debug, clap::Args)]
pub struct BenchmarkArgs {
    #[arg(long)]
    pub testset: Option<PathBuf>,
    /// Scorer spec; repeatable (bt:PATH, remote:NAME=URL, table:PATH, constant:V).
    #[arg(long = "scorer", required = true)]
    pub scorers: Vec<String>,
}

pub fn benchmark(ctx: &Ctx, args: &BenchmarkArgs) -> Result<()> {
    let testset = args.testset.clone().unwrap_or_else(|| ctx.dir.triplets(&ctx.eval_split(None)));
    let triplets = read_triplets(&testset)?;
    let scorers: Vec<Box<dyn Scorer>> =
        args.scorers.iter().map(|s| parse_scorer(s, ctx.config.http.timeout())).collect::<Result<_>>()?;
    let refs: Vec<&dyn Scorer> = scorers.iter().map(|s| s.as_ref()).collect();
    let report = benchmark_scorers(&refs, &triplets)?;
    print!("{}", report.to_table());
    write_atomic(&ctx.dir.report("benchmark.jsonl"), report.to_jsonl().as_bytes())
}
