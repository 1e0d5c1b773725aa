use crate::setup::{ConfigArgs, EmbedArgs, EngineArgs};
use anyhow::{bail, Context, Result};
use clap::Subcommand;
use hearth_core::evaluation::{
    builtin_scenarios, compare_with_reversal, levene, load_scenarios, mann_whitney_u, metric_report,
    run_memory_ablation, shapiro_wilk, welch_t, AblationArm, LengthHeuristicScorer, Lexicon, MetricReport,
    PairwiseScorer, RemoteScorer, TestResult,
};
use serde_json::json;
use std::path::{Path, PathBuf};

#[derive(Subcommand)]
pub enum EvalCommand {
    /// Relevance, readability and sentiment for `question,response` rows.
    Metrics {
        #[arg(long = "in")]
        input: PathBuf,
        /// TSV lexicon replacing the shipped one.
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[command(flatten)]
        embed: EmbedArgs,
    },
    /// Memory-on versus memory-off relevance over conversation scenarios.
    Ablation {
        /// Scenario JSON; the shipped set when omitted.
        #[arg(long)]
        scenarios: Option<PathBuf>,
        /// Print the JSON report instead of a table.
        #[arg(long)]
        json: bool,
        #[command(flatten)]
        engine: EngineArgs,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Normality, variance and location tests on two numeric CSV columns.
    Stats {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        a: String,
        #[arg(long)]
        b: String,
    },
    /// Order-balanced pairwise preference between two responses.
    Compare {
        #[arg(long)]
        question: String,
        #[arg(long)]
        first: String,
        #[arg(long)]
        second: String,
    },
}

pub fn run(cmd: EvalCommand) -> Result<()> {
    match cmd {
        EvalCommand::Metrics { input, lexicon, embed } => metrics(&input, lexicon.as_deref(), &embed),
        EvalCommand::Ablation { scenarios, json, engine, config } => {
            let cases = match &scenarios {
                Some(p) => load_scenarios(p)?,
                None => builtin_scenarios(),
            };
            let base = config.resolve()?;
            let built = engine.build()?;
            let provider = built.embedder.clone();
            let report = run_memory_ablation(
                &cases,
                &AblationArm::memory(built.clone(), base.clone()),
                &AblationArm::baseline(built, base),
                provider.as_ref(),
            )?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print!("{}", report.to_table());
            }
            Ok(())
        }
        EvalCommand::Stats { input, a, b } => stats(&input, &a, &b),
        EvalCommand::Compare { question, first, second } => {
            let scorer: Box<dyn PairwiseScorer> = match RemoteScorer::from_env() {
                Some(r) => Box::new(r),
                None => Box::new(LengthHeuristicScorer::default()),
            };
            let c = compare_with_reversal(scorer.as_ref(), &question, &first, &second)?;
            println!("{}", serde_json::to_string(&c)?);
            Ok(())
        }
    }
}

fn metrics(input: &Path, lexicon: Option<&Path>, embed: &EmbedArgs) -> Result<()> {
    let lexicon = match lexicon {
        Some(p) => Lexicon::load(p)?,
        None => Lexicon::builtin(),
    };
    let provider = embed.build();
    let mut rdr = csv::Reader::from_path(input).with_context(|| format!("opening {}", input.display()))?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .with_context(|| format!("{} has no `{name}` column", input.display()))
    };
    let (qi, ri) = (col("question")?, col("response")?);
    let mut rows: Vec<MetricReport> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let r = metric_report(&rec[qi], &rec[ri], provider.as_ref(), &lexicon)
            .with_context(|| format!("row {}", i + 1))?;
        rows.push(r);
    }
    if rows.is_empty() {
        bail!("{} has no rows", input.display());
    }
    let n = rows.len() as f64;
    let mean = |f: fn(&MetricReport) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let out = json!({
        "rows": rows,
        "mean": {
            "relevance": mean(|r| r.relevance),
            "readability_raw": mean(|r| r.readability_raw),
            "readability_norm": mean(|r| r.readability_norm),
            "polarity": mean(|r| r.polarity),
            "subjectivity": mean(|r| r.subjectivity),
        }
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn read_column(input: &Path, name: &str) -> Result<Vec<f64>> {
    let mut rdr = csv::Reader::from_path(input).with_context(|| format!("opening {}", input.display()))?;
    let idx = rdr
        .headers()?
        .iter()
        .position(|h| h == name)
        .with_context(|| format!("{} has no `{name}` column", input.display()))?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let cell = rec.get(idx).unwrap_or("").trim();
        // ragged columns: blank cells are missing values
        if cell.is_empty() {
            continue;
        }
        out.push(cell.parse().with_context(|| format!("row {} column `{name}`: {cell:?}", i + 1))?);
    }
    Ok(out)
}

fn stats(input: &Path, a: &str, b: &str) -> Result<()> {
    let xs = read_column(input, a)?;
    let ys = read_column(input, b)?;
    let show = |r: Result<TestResult, _>| match r {
        Ok(t) => serde_json::to_value(t).unwrap_or_default(),
        Err(e) => json!({ "error": format!("{e}") }),
    };
    let out = json!({
        "n": { a: xs.len(), b: ys.len() },
        "shapiro_wilk": { a: show(shapiro_wilk(&xs)), b: show(shapiro_wilk(&ys)) },
        "levene": show(levene(&xs, &ys)),
        "welch_t": show(welch_t(&xs, &ys)),
        "mann_whitney_u": show(mann_whitney_u(&xs, &ys)),
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}
