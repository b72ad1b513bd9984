use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use stanceprobe::bank::{load_bank, save_bank, synthetic, BankError};
use stanceprobe::pipeline::{self, ReportOptions, RunOptions};
use stanceprobe::prompting::TemplatePair;
use stanceprobe::stats::Factor;
use stanceprobe::store::RunStore;
use stanceprobe::{ClassifyMode, Lexicon, Phase, PromptTemplate};

#[derive(Parser)]
#[command(name = "stanceprobe", version, about = "Two-phase yes/no questionnaire runs against language models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a question bank and print its shape.
    Validate {
        #[arg(long)]
        bank: PathBuf,
    },
    /// Run (or resume) one phase for one model and language.
    Run(RunArgs),
    /// Compute metrics, correlations and chi-square tests over finished runs.
    Analyze {
        #[arg(long)]
        bank: PathBuf,
        /// Directory holding the runs.
        #[arg(long, default_value = "runs")]
        runs: PathBuf,
        /// Output directory for analysis artifacts.
        #[arg(long)]
        out: PathBuf,
        /// Chi-square factor; repeatable.
        #[arg(long = "factor", default_value = "response-category")]
        factors: Vec<Factor>,
        #[arg(required = true)]
        run_ids: Vec<String>,
    },
    /// Render report tables and distribution series from an analysis directory.
    Report {
        analysis: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Language for the question text column.
        #[arg(long)]
        text_language: Option<String>,
        /// Also write SVG bar charts.
        #[arg(long)]
        svg: bool,
    },
    /// Write a synthetic bank with the full-size layout (539 entries, 103 split pairs).
    SynthBank {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "ja,en,es,fr")]
        languages: Vec<String>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    bank: PathBuf,
    /// `mock:<policy>` or a provider config JSON file.
    #[arg(long)]
    provider: String,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    language: String,
    #[arg(long, default_value = "initial")]
    phase: Phase,
    #[arg(long, default_value_t = 10)]
    rounds: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Initial run to derive opposing stances from.
    #[arg(long)]
    from_run: Option<String>,
    #[arg(long, default_value = "lenient")]
    classify_mode: ClassifyMode,
    /// Directory holding the runs.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// JSON list of prompt templates.
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Lexicon JSON file.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Stop after this many requests; the run can be resumed later.
    #[arg(long)]
    limit: Option<usize>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn cmd_validate(bank: &Path) -> Result<ExitCode> {
    match pipeline::validate(bank) {
        Ok(summary) => {
            for w in &summary.warnings {
                eprintln!("warning: {w}");
            }
            println!("{summary}");
            Ok(ExitCode::SUCCESS)
        }
        Err(BankError::Invalid(violations)) => {
            for v in &violations {
                println!("error: {v}");
            }
            println!("{} violation(s) in {}", violations.len(), bank.display());
            Ok(ExitCode::FAILURE)
        }
        Err(e) => Err(e.into()),
    }
}

fn cmd_run(args: RunArgs) -> Result<ExitCode> {
    let bank = load_bank(&args.bank)?;
    let mut opts = RunOptions::new(pipeline::parse_provider(&args.provider)?, &args.language, args.phase);
    opts.model = args.model;
    opts.rounds = args.rounds;
    opts.seed = args.seed;
    opts.from_run = args.from_run;
    opts.classify_mode = args.classify_mode;
    opts.max_requests = args.limit;
    if let Some(path) = &args.templates {
        let list: Vec<PromptTemplate> =
            serde_json::from_str(&read(path)?).with_context(|| format!("parsing {}", path.display()))?;
        opts.templates = Some(TemplatePair::from_list(&list, &args.language)?);
    }
    if let Some(path) = &args.lexicon {
        opts.lexicon = Some(Lexicon::from_json(&read(path)?)?);
    }
    let store = RunStore::new(&args.out);
    let s = pipeline::run(&store, &bank, &opts)?;
    let verb = if s.resumed { "resumed" } else { "started" };
    println!(
        "{} ({verb}): {} ok, {} refused, {} failed",
        s.run_id, s.sent.ok, s.sent.refused, s.sent.failed
    );
    if s.complete() {
        println!("complete; metrics in {}", store.run_dir(&s.run_id).join("metrics.csv").display());
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("{} (question, round) pairs still missing; rerun the same command to resume", s.missing);
        Ok(ExitCode::from(2))
    }
}

fn run() -> Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Validate { bank } => cmd_validate(&bank),
        Command::Run(args) => cmd_run(args),
        Command::Analyze {
            bank,
            runs,
            out,
            factors,
            run_ids,
        } => {
            let bank = load_bank(&bank)?;
            let a = pipeline::analyze(&RunStore::new(runs), &bank, &run_ids, &factors, &out)?;
            println!(
                "{} condition(s), {} comparison(s) written to {}",
                a.conditions.len(),
                a.comparisons.len(),
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Report {
            analysis,
            out,
            text_language,
            svg,
        } => {
            let files = pipeline::report(&analysis, &out, &ReportOptions { text_language, svg })?;
            println!("{} file(s) written to {}", files.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::SynthBank { out, languages } => {
            if languages.is_empty() {
                bail!("need at least one language");
            }
            let langs: Vec<&str> = languages.iter().map(String::as_str).collect();
            let bank = synthetic::full_size(&langs);
            save_bank(&bank, &out)?;
            println!("{}", pipeline::summarize(&bank));
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
