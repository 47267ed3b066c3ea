//! Single entry point tying the pipeline together:
//! synth -> ingest -> observe -> buzzwords -> pretrain -> train ->
//! generate -> evaluate.

mod config;
mod output;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use headliner_core::buzzword::{generate_buzzwords, BuzzwordConfig, BuzzwordList, FrequencyTable, Vocabulary};
use headliner_core::corpus::{Corpus, SplitSpec, TimeStep};
use headliner_core::generate::{generate_candidates, GenerationConfig};
use headliner_core::model::{checkpoint, ModelParams};
use headliner_core::observation::{
    psi_popularity_study, style_pair_study, trend_likes_study, trend_similarity_study, SeasonSpec,
};
use headliner_core::rouge::corpus_rouge;
use headliner_core::similarity::{tokenize, SimilarityMetric, TokenSeq};
use headliner_core::synth::{synth_corpus, SynthConfig};
use headliner_core::training::{prepare_examples_in_context, run_pretraining, run_training};

use config::RunConfig;
use output::{write_atomic, write_corpus_atomic, write_json_atomic};

const VERSION_LINE: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    " (checkpoint format v1, corpus format jsonl v1)"
);

#[derive(Parser)]
#[command(name = "headliner", version = VERSION_LINE, about = "Corpus analytics and toy-scale headline generation", arg_required_else_help = true)]
struct Cli {
    /// Worker threads for parallel reductions (0 = rayon default).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a deterministic synthetic corpus with planted style and
    /// trend structure.
    Synth(SynthArgs),
    /// Read a JSONL corpus, filter it, and write train/val/test splits
    /// plus summary statistics.
    Ingest(IngestArgs),
    /// Score two texts with one similarity metric (debugging aid).
    Sim(SimArgs),
    /// Run the trend or personal-style studies and emit figure-ready CSVs.
    #[command(subcommand)]
    Observe(ObserveCommand),
    /// Emit the buzzword list for one time step as JSON.
    Buzzwords(BuzzwordsArgs),
    /// Pretrain the preference extractors (masked reconstruction).
    Pretrain(RunArgs),
    /// Train the full model (teacher-forced headline generation).
    Train(RunArgs),
    /// Generate headline candidates for one post from a checkpoint.
    Generate(GenerateArgs),
    /// Score candidate headlines against references with ROUGE-1/2/L.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Output file, or a directory to receive corpus.jsonl.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 50)]
    users: usize,
    #[arg(long, default_value_t = 5000)]
    posts: usize,
    #[arg(long, default_value_t = 0.95)]
    style_rate: f64,
    #[arg(long, default_value_t = 0.5)]
    season_token_rate: f64,
    #[arg(long, default_value_t = 0.9)]
    trend_rate: f64,
    #[arg(long, default_value_t = 12)]
    ramp_onset_month: u32,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 500)]
    min_likes: u64,
    /// Drop posts whose user has no strictly earlier post.
    #[arg(long, default_value_t = false)]
    require_prior_post: bool,
    /// Timestamp boundary (ISO date, e.g. 2022-01-01): earlier posts go to
    /// train, the rest are split into val/test.
    #[arg(long)]
    boundary: String,
    #[arg(long, default_value_t = 0.5)]
    val_fraction: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimArgs {
    #[arg(long, default_value = "jaccard")]
    metric: String,
    #[arg(long)]
    a: String,
    #[arg(long)]
    b: String,
}

#[derive(Subcommand)]
enum ObserveCommand {
    /// Season-similarity and season-group likes studies.
    Trends(TrendArgs),
    /// Same/different-user pair study and the PSI popularity buckets.
    Style(StyleArgs),
}

#[derive(Args)]
struct TrendArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "jaccard")]
    metric: String,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    n_observed: usize,
    #[arg(long, default_value_t = 100)]
    per_season: usize,
    #[arg(long, default_value_t = 5)]
    seasons: usize,
    #[arg(long, default_value_t = 90)]
    season_days: i64,
    /// Observation window length; the window ends at the corpus's last
    /// post.
    #[arg(long, default_value_t = 10)]
    obs_days: i64,
}

#[derive(Args)]
struct StyleArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "jaccard")]
    metric: String,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    pairs: usize,
    #[arg(long, default_value_t = 20)]
    headlines_per_user: usize,
}

#[derive(Args)]
struct BuzzwordsArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Month step relative to the corpus's first post (0 = first month).
    #[arg(long)]
    step: u32,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    tf_min: u64,
    #[arg(long, default_value_t = 0.01)]
    tf_max: f64,
    #[arg(long, default_value_t = 128)]
    quota_1m: usize,
    #[arg(long, default_value_t = 64)]
    quota_3m: usize,
    #[arg(long, default_value_t = 32)]
    quota_6m: usize,
    #[arg(long, default_value_t = 512)]
    capacity: usize,
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration; HEADLINER_<SECTION>_<KEY> env vars override.
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Buzzword list JSON as written by the buzzwords subcommand.
    #[arg(long)]
    buzzwords: PathBuf,
    #[arg(long)]
    post: String,
    #[arg(long, default_value_t = 4)]
    beam: usize,
    #[arg(long, default_value_t = 20)]
    max_len: usize,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 0.0)]
    beta: f64,
    #[arg(long, default_value_t = 4)]
    top_k: usize,
}

#[derive(Args)]
struct EvaluateArgs {
    /// JSONL of {"id", "text"} candidate headlines.
    #[arg(long)]
    candidates: PathBuf,
    /// JSONL of references: {"id", "text"} or full corpus records.
    #[arg(long)]
    references: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn main() {
    let cli = Cli::parse();
    if cli.threads > 0 {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global();
    }
    if let Err(e) = run(cli.command) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(args) => cmd_synth(args),
        Command::Ingest(args) => cmd_ingest(args),
        Command::Sim(args) => cmd_sim(args),
        Command::Observe(ObserveCommand::Trends(args)) => cmd_observe_trends(args),
        Command::Observe(ObserveCommand::Style(args)) => cmd_observe_style(args),
        Command::Buzzwords(args) => cmd_buzzwords(args),
        Command::Pretrain(args) => cmd_run(args, Stage::Pretrain),
        Command::Train(args) => cmd_run(args, Stage::Train),
        Command::Generate(args) => cmd_generate(args),
        Command::Evaluate(args) => cmd_evaluate(args),
    }
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        seed: args.seed,
        n_users: args.users,
        n_posts: args.posts,
        style_rate: args.style_rate,
        season_token_rate: args.season_token_rate,
        trend_rate: args.trend_rate,
        ramp_onset_month: args.ramp_onset_month,
        ..Default::default()
    };
    let corpus = synth_corpus(&cfg);
    let path = if args.out.is_dir() || args.out.to_string_lossy().ends_with('/') {
        std::fs::create_dir_all(&args.out)?;
        args.out.join("corpus.jsonl")
    } else {
        if let Some(parent) = args.out.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        args.out.clone()
    };
    write_corpus_atomic(&corpus, &path)?;
    write_json_atomic(&path.with_extension("meta.json"), &serde_json::json!({
        "tool_version": VERSION_LINE,
        "config": cfg,
        "posts": corpus.len(),
        "users": corpus.user_count(),
    }))?;
    println!("wrote {} posts to {}", corpus.len(), path.display());
    Ok(())
}

fn parse_boundary(s: &str) -> Result<i64> {
    let date = chrono::NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .with_context(|| format!("boundary {s:?} is not an ISO date (YYYY-MM-DD)"))?;
    Ok(date.and_hms_opt(0, 0, 0).unwrap().and_utc().timestamp())
}

fn cmd_ingest(args: IngestArgs) -> Result<()> {
    let raw = Corpus::ingest(&args.input)?;
    let filtered = raw.filter_posts(args.min_likes, args.require_prior_post);
    let boundary = parse_boundary(&args.boundary)?;
    let spec = SplitSpec {
        boundary,
        validation_fraction: args.val_fraction,
        test_fraction: 1.0 - args.val_fraction,
        seed: args.seed,
    };
    let (train, val, test) = filtered.split(&spec)?;
    std::fs::create_dir_all(&args.out)?;
    write_corpus_atomic(&filtered, &args.out.join("filtered.jsonl"))?;
    write_corpus_atomic(&train, &args.out.join("train.jsonl"))?;
    write_corpus_atomic(&val, &args.out.join("val.jsonl"))?;
    write_corpus_atomic(&test, &args.out.join("test.jsonl"))?;
    let hist: BTreeMap<usize, usize> = filtered.posts_per_user_histogram();
    write_json_atomic(&args.out.join("stats.json"), &serde_json::json!({
        "input_posts": raw.len(),
        "filtered_posts": filtered.len(),
        "train": train.len(),
        "val": val.len(),
        "test": test.len(),
        "users": filtered.user_count(),
        "posts_per_user_histogram": hist,
    }))?;
    println!(
        "ingested {} posts -> filtered {} -> train {} / val {} / test {}",
        raw.len(),
        filtered.len(),
        train.len(),
        val.len(),
        test.len()
    );
    Ok(())
}

fn cmd_sim(args: SimArgs) -> Result<()> {
    let metric: SimilarityMetric = args.metric.parse().map_err(|e: String| anyhow!(e))?;
    let score = metric.score(&tokenize(&args.a), &tokenize(&args.b));
    println!("{}", serde_json::json!({ "metric": metric.to_string(), "score": score }));
    Ok(())
}

fn bucket_csv(rows: &[headliner_core::observation::BucketStat]) -> String {
    let mut out = String::from("label,mean,count,stderr\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.label, r.mean, r.count, r.stderr));
    }
    out
}

fn cmd_observe_trends(args: TrendArgs) -> Result<()> {
    let corpus = Corpus::ingest(&args.corpus)?;
    let metric: SimilarityMetric = args.metric.parse().map_err(|e: String| anyhow!(e))?;
    let end = corpus.max_timestamp().ok_or_else(|| anyhow!("corpus is empty"))? + 1;
    let spec = SeasonSpec {
        observation_start: end - args.obs_days * 86_400,
        observation_end: end,
        n_observed: args.n_observed,
        seasons: args.seasons,
        season_length_days: args.season_days,
        per_season_sample: args.per_season,
        seed: args.seed,
    };
    let sim = trend_similarity_study(&corpus, &spec, metric)?;
    let likes = trend_likes_study(&corpus, &spec, metric)?;
    std::fs::create_dir_all(&args.out)?;
    write_atomic(&args.out.join("season_similarity.csv"), bucket_csv(&sim.similarity_by_season).as_bytes())?;
    write_atomic(&args.out.join("season_likes.csv"), bucket_csv(&likes.likes_by_group).as_bytes())?;
    write_json_atomic(&args.out.join("trends.json"), &serde_json::json!({
        "metric": metric.to_string(),
        "spec": spec,
        "similarity_by_season": sim.similarity_by_season,
        "likes_by_group": likes.likes_by_group,
    }))?;
    println!("trend studies written to {}", args.out.display());
    Ok(())
}

fn cmd_observe_style(args: StyleArgs) -> Result<()> {
    let corpus = Corpus::ingest(&args.corpus)?;
    let metric: SimilarityMetric = args.metric.parse().map_err(|e: String| anyhow!(e))?;
    let pairs = style_pair_study(&corpus, args.pairs, metric, args.seed)?;
    let buckets = psi_popularity_study(&corpus, args.headlines_per_user, metric)?;
    std::fs::create_dir_all(&args.out)?;
    let mut pair_csv = String::from("label,mean,count,stderr\n");
    pair_csv.push_str(&format!("same_user,{},{},0\n", pairs.same_user_mean_sim, pairs.pair_count));
    pair_csv.push_str(&format!("diff_user,{},{},0\n", pairs.diff_user_mean_sim, pairs.pair_count));
    write_atomic(&args.out.join("style_pairs.csv"), pair_csv.as_bytes())?;
    let mut psi_csv = String::from("label,mean,count,stderr\n");
    for g in &buckets.psi_groups {
        psi_csv.push_str(&format!("[{:.1},{:.1}),{},{},{}\n", g.lo, g.hi, g.mean_pi, g.count, g.stderr));
    }
    write_atomic(&args.out.join("psi_popularity.csv"), psi_csv.as_bytes())?;
    write_json_atomic(&args.out.join("style.json"), &serde_json::json!({
        "metric": metric.to_string(),
        "pairs": args.pairs,
        "headlines_per_user": args.headlines_per_user,
        "same_user_mean_sim": pairs.same_user_mean_sim,
        "diff_user_mean_sim": pairs.diff_user_mean_sim,
        "psi_groups": buckets.psi_groups,
    }))?;
    println!("style studies written to {}", args.out.display());
    Ok(())
}

fn cmd_buzzwords(args: BuzzwordsArgs) -> Result<()> {
    let corpus = Corpus::ingest(&args.corpus)?;
    let vocab = Vocabulary::build(&corpus, args.tf_min, args.tf_max)?;
    let table = FrequencyTable::count_frequencies(&corpus, &vocab);
    let cfg = BuzzwordConfig {
        quota_1m: args.quota_1m,
        quota_3m: args.quota_3m,
        quota_6m: args.quota_6m,
        capacity: args.capacity,
        epsilon: 1.0,
    };
    let list = generate_buzzwords(&table, &vocab, TimeStep(args.step), &cfg);
    write_json_atomic(&args.out, &list)?;
    println!("step {} -> {} buzzwords -> {}", args.step, list.entries.len(), args.out.display());
    Ok(())
}

enum Stage {
    Pretrain,
    Train,
}

fn cmd_run(args: RunArgs, stage: Stage) -> Result<()> {
    let cfg = RunConfig::load(&args.config)?;
    let train_corpus = Corpus::ingest(&cfg.paths.train_corpus)?;
    let context = match &cfg.paths.context_corpus {
        Some(p) => Corpus::ingest(p)?,
        None => train_corpus.clone(),
    };
    let val_corpus = cfg.paths.val_corpus.as_ref().map(|p| Corpus::ingest(p)).transpose()?;

    // vocabulary and parameters: fresh, or carried over from a checkpoint
    let (mut params, vocab) = match &cfg.paths.init_checkpoint {
        Some(ckpt) => {
            let (params, vocab) = checkpoint::load(ckpt)?;
            let vocab = vocab.ok_or_else(|| anyhow!("checkpoint {} carries no vocabulary", ckpt.display()))?;
            (params, vocab)
        }
        None => {
            let vocab = Vocabulary::build(&train_corpus, cfg.vocab.tf_min, cfg.vocab.tf_max)?;
            let mut mcfg = cfg.model.clone();
            if mcfg.vocab_size == 0 {
                mcfg.vocab_size = vocab.len();
            }
            (ModelParams::new(&mcfg)?, vocab)
        }
    };

    let max_pos = params.cfg.max_positions;
    let train_examples = prepare_examples_in_context(
        &train_corpus,
        &context,
        &vocab,
        &cfg.buzzwords,
        max_pos,
        cfg.limits.max_headline_tokens,
    )?;
    let mut val_examples = match &val_corpus {
        Some(vc) => prepare_examples_in_context(vc, &context, &vocab, &cfg.buzzwords, max_pos, cfg.limits.max_headline_tokens)?,
        None => Vec::new(),
    };
    val_examples.truncate(cfg.limits.val_examples);

    std::fs::create_dir_all(&cfg.paths.out_dir)?;
    let report = match stage {
        Stage::Pretrain => run_pretraining(
            &mut params,
            &train_examples,
            &val_examples,
            &vocab,
            &cfg.train,
            &cfg.corruption,
            Some(&cfg.paths.out_dir),
        )?,
        Stage::Train => run_training(
            &mut params,
            &train_examples,
            &val_examples,
            &vocab,
            &cfg.train,
            &cfg.generation,
            Some(&cfg.paths.out_dir),
        )?,
    };

    let mut csv = String::from("step,loss,lr,val_metric\n");
    for row in &report.metrics {
        let val = row.val_metric.map(|v| v.to_string()).unwrap_or_default();
        csv.push_str(&format!("{},{},{},{}\n", row.step, row.loss, row.lr, val));
    }
    write_atomic(&cfg.paths.out_dir.join("metrics.csv"), csv.as_bytes())?;
    write_json_atomic(&cfg.paths.out_dir.join("meta.json"), &serde_json::json!({
        "tool_version": VERSION_LINE,
        "stage": match stage { Stage::Pretrain => "pretrain", Stage::Train => "train" },
        "resolved_config": cfg,
        "train_examples": train_examples.len(),
        "val_examples": val_examples.len(),
        "best_step": report.best_step,
        "best_metric": report.best_metric,
        "final_mean_loss": report.final_mean_loss,
    }))?;
    println!(
        "{} finished: best step {} (metric {:.4}), final mean loss {:.4} -> {}",
        match stage { Stage::Pretrain => "pretrain", Stage::Train => "train" },
        report.best_step,
        report.best_metric,
        report.final_mean_loss,
        cfg.paths.out_dir.display()
    );
    Ok(())
}

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    let (params, vocab) = checkpoint::load(&args.checkpoint)?;
    let vocab = vocab.ok_or_else(|| anyhow!("checkpoint carries no vocabulary"))?;
    let corpus = Corpus::ingest(&args.corpus)?;
    let text = std::fs::read_to_string(&args.buzzwords)
        .with_context(|| format!("reading {}", args.buzzwords.display()))?;
    let buzz: BuzzwordList = serde_json::from_str(&text).context("parsing buzzword list")?;
    let gen_cfg = GenerationConfig {
        beam_size: args.beam,
        max_length: args.max_len,
        length_alpha: args.alpha,
        coverage_beta: args.beta,
        ..Default::default()
    };
    let hyps = generate_candidates(&params, &vocab, &corpus, &buzz, &args.post, &gen_cfg)?;
    let candidates: Vec<serde_json::Value> = hyps
        .iter()
        .take(args.top_k)
        .map(|h| {
            serde_json::json!({
                "headline": headliner_core::generate::detokenize(&vocab.decode(&h.tokens)),
                "tokens": vocab.decode(&h.tokens),
                "score": h.score,
                "raw_log_prob": h.raw_log_prob,
            })
        })
        .collect();
    println!("{}", serde_json::to_string_pretty(&serde_json::json!({
        "post": args.post,
        "candidates": candidates,
    }))?);
    Ok(())
}

#[derive(serde::Deserialize)]
struct TextLine {
    id: String,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    headline: Option<String>,
}

fn read_text_lines(path: &Path) -> Result<BTreeMap<String, String>> {
    let content = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut out = BTreeMap::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: TextLine = serde_json::from_str(line)
            .with_context(|| format!("{} line {}", path.display(), i + 1))?;
        let text = row
            .text
            .or(row.headline)
            .ok_or_else(|| anyhow!("{} line {}: neither \"text\" nor \"headline\"", path.display(), i + 1))?;
        out.insert(row.id, text);
    }
    Ok(out)
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let candidates = read_text_lines(&args.candidates)?;
    let references = read_text_lines(&args.references)?;
    let mut pairs: Vec<(TokenSeq, TokenSeq)> = Vec::with_capacity(candidates.len());
    for (id, cand) in &candidates {
        let reference = references
            .get(id)
            .ok_or_else(|| anyhow!("candidate id {id:?} has no reference"))?;
        pairs.push((tokenize(cand), tokenize(reference)));
    }
    if pairs.is_empty() {
        bail!("no candidate/reference pairs");
    }
    let scores = corpus_rouge(&pairs)?;
    write_json_atomic(&args.out, &scores)?;
    println!(
        "{} pairs: rouge1 f1 {:.4}, rouge2 f1 {:.4}, rougeL f1 {:.4} -> {}",
        scores.pairs,
        scores.rouge1.f1,
        scores.rouge2.f1,
        scores.rouge_l.f1,
        args.out.display()
    );
    Ok(())
}
