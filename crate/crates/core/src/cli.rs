//! Command-line interface.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{split_classes, EpisodeShape, Part};
use crate::decoding::{generate_paraphrases, Strategy};
use crate::encoder::{load_checkpoint, save_checkpoint, EncoderParams};
use crate::experiment::{
    emit_report, p_mask_grid, p_mask_sweep, read_report_json, write_results_csv, write_sweep_csv,
    generate_synthetic_dataset, RunConfig, SynthConfig, Workspace, DATA_DIR_ENV,
};
use crate::metrics::{diversity_report, DiversityReport};
use crate::protonet::evaluate;

#[derive(Debug, Parser)]
#[command(name = "protaugment", version, about = "Few-shot text classification with paraphrase-consistency training")]
pub struct Cli {
    /// More log output (-v info, -vv debug, -vvv trace).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train over every configured seed and write results.
    Train(TrainArgs),
    /// Score a saved encoder on sampled episodes.
    Evaluate(EvaluateArgs),
    /// Paraphrase sentences read one per line.
    Paraphrase(ParaphraseArgs),
    /// Diversity measures for paraphrase sets or strategies.
    Diversity(DiversityArgs),
    /// Write the synthetic intent corpus and its synonym table.
    SynthData(SynthArgs),
    /// Merge run reports into one results table.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// TOML run configuration; defaults apply to missing keys.
    #[arg(short, long)]
    pub config: Option<PathBuf>,

    /// Dataset in JSON lines (overrides the config).
    #[arg(long)]
    pub dataset: Option<PathBuf>,

    /// Override a config key, e.g. `--set decode.p_mask=0.5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut config = match &self.config {
            Some(p) => RunConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
            None => RunConfig::default(),
        };
        for o in &self.overrides {
            config.set(o)?;
        }
        if let Some(d) = &self.dataset {
            config.dataset = d.clone();
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,

    /// Output directory for results.csv, report.json and checkpoints.
    #[arg(short, long, default_value = "runs/latest")]
    pub out: PathBuf,

    /// Also run the masking-probability sweep and write sweep.csv.
    #[arg(long)]
    pub sweep: bool,

    /// Save the best-validation encoder of every seed.
    #[arg(long)]
    pub save_checkpoints: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub config: ConfigArgs,

    #[arg(long)]
    pub checkpoint: PathBuf,

    /// Seed that fixes the class split and the sampled episodes.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    #[arg(long, value_parser = parse_part, default_value = "test")]
    pub part: Part,

    /// Number of episodes; defaults to the config's evaluation size.
    #[arg(long)]
    pub episodes: Option<usize>,
}

fn parse_part(s: &str) -> Result<Part, String> {
    match s {
        "train" => Ok(Part::Train),
        "valid" => Ok(Part::Valid),
        "test" => Ok(Part::Test),
        other => Err(format!("unknown part {other:?}")),
    }
}

#[derive(Debug, Args)]
pub struct ParaphraseArgs {
    #[command(flatten)]
    pub config: ConfigArgs,

    /// Sentences, one per line; `-` reads standard input.
    #[arg(short, long, default_value = "-")]
    pub input: PathBuf,

    /// JSON lines output; `-` writes standard output.
    #[arg(short, long, default_value = "-")]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct DiversityArgs {
    #[command(flatten)]
    pub config: ConfigArgs,

    /// JSON lines from `paraphrase`; without it, strategies are compared on
    /// dataset sentences.
    #[arg(short, long)]
    pub input: Option<PathBuf>,

    /// Strategies to compare, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "stub_bt,dbs,dbs_bigram,dbs_unigram")]
    pub strategies: Vec<Strategy>,

    #[arg(long, default_value_t = 200)]
    pub sentences: usize,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(short, long)]
    pub out: Option<PathBuf>,

    #[arg(long, default_value_t = 20)]
    pub classes: usize,

    #[arg(long, default_value_t = 30)]
    pub per_class: usize,

    #[arg(long, default_value_t = 4)]
    pub domains: usize,

    #[arg(long, default_value_t = 3)]
    pub keyword_variants: usize,

    #[arg(long, default_value_t = 3)]
    pub object_variants: usize,

    /// Share this many action concepts across classes (0: one per class).
    #[arg(long, default_value_t = 0)]
    pub action_pool: usize,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// report.json files written by `train`.
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,

    #[arg(short, long, default_value = "results.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
struct ParaphraseLine {
    source: String,
    paraphrases: Vec<String>,
}

fn open_input(path: &Path) -> anyhow::Result<Box<dyn BufRead>> {
    Ok(if path.as_os_str() == "-" {
        Box::new(BufReader::new(io::stdin()))
    } else {
        Box::new(BufReader::new(
            File::open(path).with_context(|| format!("opening {}", path.display()))?,
        ))
    })
}

fn open_output(path: &Path) -> anyhow::Result<Box<dyn Write>> {
    Ok(if path.as_os_str() == "-" {
        Box::new(BufWriter::new(io::stdout()))
    } else {
        Box::new(BufWriter::new(
            File::create(path).with_context(|| format!("creating {}", path.display()))?,
        ))
    })
}

fn train(args: &TrainArgs) -> anyhow::Result<()> {
    let config = args.config.resolve()?;
    let ws = Workspace::load(&config).with_context(|| format!("loading {}", config.dataset.display()))?;
    let (report, models) = ws.run()?;
    let (csv_path, json_path) = emit_report(&report, &args.out)?;
    println!(
        "{} {} {}-way {}-shot: {:.4} ± {:.4} over {} seeds",
        report.method,
        report.profile,
        report.ways,
        report.shots,
        report.mean,
        report.std,
        report.seeds.len()
    );
    println!("wrote {} and {}", csv_path.display(), json_path.display());
    if args.save_checkpoints {
        for (result, params) in report.seeds.iter().zip(&models) {
            let path = args.out.join(format!("encoder-seed{}.bin", result.seed));
            save_checkpoint(&path, params, &ws.vocab)?;
            println!("wrote {}", path.display());
        }
    }
    if args.sweep {
        let points = p_mask_sweep(&ws, &p_mask_grid())?;
        let path = args.out.join("sweep.csv");
        write_sweep_csv(&points, &path)?;
        for p in &points {
            println!("p_mask={:.1} accuracy={:.4} ± {:.4}", p.p_mask, p.mean, p.std);
        }
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn evaluate_checkpoint(args: &EvaluateArgs) -> anyhow::Result<()> {
    let config = args.config.resolve()?;
    let (params, vocab) = load_checkpoint(&args.checkpoint)?;
    let dataset = crate::data::load_dataset(&config.dataset)?;
    let r = &config.split_ratios;
    let split = split_classes(&dataset, (r[0], r[1], r[2]), args.seed, config.group_by_domain)?;
    let shape = EpisodeShape {
        ways: config.ways,
        shots: config.shots,
        query_per_class: config.query_per_class,
        unlabeled: 0,
    };
    let result = evaluate(
        &params,
        &vocab,
        &dataset,
        &split,
        args.part,
        shape,
        args.episodes.unwrap_or(config.n_eval_episodes),
        config.distance,
        &mut ChaCha8Rng::seed_from_u64(args.seed),
    )?;
    println!(
        "{}",
        serde_json::json!({
            "part": args.part,
            "episodes": result.episode_count,
            "mean_accuracy": result.mean_accuracy,
        })
    );
    Ok(())
}

fn paraphrase(args: &ParaphraseArgs) -> anyhow::Result<()> {
    let config = args.config.resolve()?;
    if config.strategy() == Strategy::None {
        bail!("strategy none produces no paraphrases; set decode.strategy");
    }
    let ws = Workspace::load(&config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.decode.seed);
    let mut out = open_output(&args.output)?;
    for line in open_input(&args.input)?.lines() {
        let line = line?;
        let source = line.trim();
        if source.is_empty() {
            continue;
        }
        let paraphrases = generate_paraphrases(
            &ws.lm,
            &ws.synonyms,
            source,
            config.paraphrases,
            &config.decode,
            &mut rng,
        )
        .with_context(|| format!("paraphrasing {source:?}"))?;
        serde_json::to_writer(
            &mut out,
            &ParaphraseLine {
                source: source.to_string(),
                paraphrases,
            },
        )?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn diversity(args: &DiversityArgs) -> anyhow::Result<()> {
    let config = args.config.resolve()?;
    let ws = Workspace::load(&config)?;
    match &args.input {
        Some(path) => {
            let encoder = EncoderParams::init(
                ws.vocab.len(),
                config.emb_dim,
                config.out_dim,
                &mut ChaCha8Rng::seed_from_u64(args.seed),
            );
            let mut reports: Vec<DiversityReport> = Vec::new();
            for (i, line) in open_input(path)?.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let item: ParaphraseLine = serde_json::from_str(&line)
                    .with_context(|| format!("{}:{}", path.display(), i + 1))?;
                reports.push(diversity_report(&item.source, &item.paraphrases, &encoder, &ws.vocab)?);
            }
            if reports.is_empty() {
                bail!("{} holds no paraphrase sets", path.display());
            }
            let n = reports.len() as f64;
            let mean = DiversityReport {
                dist2: reports.iter().map(|r| r.dist2).sum::<f64>() / n,
                bleu_vs_source: reports.iter().map(|r| r.bleu_vs_source).sum::<f64>() / n,
                mean_pairwise_similarity: reports.iter().map(|r| r.mean_pairwise_similarity).sum::<f64>() / n,
            };
            println!("{}", serde_json::to_string(&mean)?);
        }
        None => {
            for &s in &args.strategies {
                if s == Strategy::None {
                    bail!("strategy none produces no paraphrases");
                }
                let r = ws.diversity_study(s, args.sentences, args.seed)?;
                println!("{}", serde_json::json!({ "strategy": s, "report": r }));
            }
        }
    }
    Ok(())
}

fn synth(args: &SynthArgs) -> anyhow::Result<()> {
    let path = args
        .out
        .clone()
        .unwrap_or_else(|| crate::experiment::default_data_dir().join("synthetic.jsonl"));
    let config = SynthConfig {
        n_classes: args.classes,
        per_class: args.per_class,
        n_domains: args.domains,
        keyword_variants: args.keyword_variants,
        object_variants: args.object_variants,
        action_pool: args.action_pool,
        seed: args.seed,
    };
    let corpus = generate_synthetic_dataset(&config, &path)?;
    println!("wrote {} records to {}", corpus.records.len(), path.display());
    Ok(())
}

fn report(args: &ReportArgs) -> anyhow::Result<()> {
    let reports = args
        .reports
        .iter()
        .map(|p| read_report_json(p).with_context(|| format!("reading {}", p.display())))
        .collect::<anyhow::Result<Vec<_>>>()?;
    write_results_csv(&reports, &args.out)?;
    println!("wrote {} rows to {}", reports.len(), args.out.display());
    Ok(())
}

pub fn run(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate_checkpoint(a),
        Command::Paraphrase(a) => paraphrase(a),
        Command::Diversity(a) => diversity(a),
        Command::SynthData(a) => synth(a),
        Command::Report(a) => report(a),
    }
}

/// Help text footer naming the data directory variable.
pub fn data_dir_note() -> String {
    format!("The default data directory is ./data, or ${DATA_DIR_ENV} when set.")
}
