use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use noisegate::config::{ControlConfig, RunConfig};
use noisegate::data::{filter_invalid, load_corpus, merge_tasks, save_corpus, ControlKind};
use noisegate::harness::{
    make_run_id, render_report, run_matrix, MatrixReport, ReportFormat, RunDir, ScenarioCell, CSV_HEADER,
};
use noisegate::metrics::score_cell;

/// Environment variable that overrides the run output root.
const RUNS_DIR_ENV: &str = "NOISEGATE_RUNS_DIR";

#[derive(Parser)]
#[command(name = "noisegate", version, about = "Signal vs noise evaluation harness for brain-to-text decoders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate, filter and merge corpus files into one canonical corpus.
    Ingest {
        #[arg(long = "in", num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train both models and evaluate the eight-cell matrix.
    Matrix {
        #[arg(long)]
        config: PathBuf,
        /// Use a synthetic control corpus instead of the configured data.
        #[arg(long, value_enum)]
        control: Option<Control>,
        /// Print the planned cells and seeds without running anything.
        #[arg(long)]
        dry_run: bool,
        /// Fixed run id, for reproducible output paths.
        #[arg(long)]
        run_id: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Output root; overrides the config file and NOISEGATE_RUNS_DIR.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Score hypotheses against references, one sentence per line.
    Score {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
    },
    /// Re-render the report of a finished run.
    Report {
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Markdown)]
        format: Format,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Control {
    Informative,
    Uninformative,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Markdown,
    Csv,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest { inputs, out } => ingest(&inputs, &out),
        Command::Matrix {
            config,
            control,
            dry_run,
            run_id,
            seed,
            epochs,
            out_dir,
        } => matrix(&config, control, dry_run, run_id, seed, epochs, out_dir),
        Command::Score { hyp, reference } => score(&hyp, &reference),
        Command::Report { run_dir, format } => report(&run_dir, format),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let divergence = e
                .downcast_ref::<noisegate::Error>()
                .is_some_and(noisegate::Error::is_divergence);
            ExitCode::from(if divergence { 2 } else { 1 })
        }
    }
}

fn ingest(inputs: &[PathBuf], out: &Path) -> anyhow::Result<()> {
    let mut kept = Vec::with_capacity(inputs.len());
    println!("task,retained,dropped");
    for path in inputs {
        let corpus = load_corpus(path)?;
        let clean = filter_invalid(&corpus);
        for task in corpus.tasks() {
            let before = corpus.by_task(task).len();
            let after = clean.by_task(task).len();
            println!("{task},{after},{}", before - after);
        }
        kept.push(clean);
    }
    let merged = merge_tasks(&kept)?;
    save_corpus(&merged, out)?;
    eprintln!("wrote {} pairs to {}", merged.len(), out.display());
    Ok(())
}

fn matrix(
    config_path: &Path,
    control: Option<Control>,
    dry_run: bool,
    run_id: Option<String>,
    seed: Option<u64>,
    epochs: Option<usize>,
    out_dir: Option<PathBuf>,
) -> anyhow::Result<()> {
    let mut config = RunConfig::load(config_path)?;
    if let Some(kind) = control {
        let kind = match kind {
            Control::Informative => ControlKind::Informative,
            Control::Uninformative => ControlKind::Uninformative,
        };
        config.control = Some(ControlConfig {
            kind,
            ..config.control.unwrap_or_default()
        });
    }
    if let Some(seed) = seed {
        config.set_seed(seed);
    }
    if let Some(epochs) = epochs {
        config.harness.train.epochs = epochs;
    }
    if let Some(dir) = out_dir {
        config.output_dir = dir;
    } else if let Some(dir) = std::env::var_os(RUNS_DIR_ENV) {
        config.output_dir = dir.into();
    }
    config.validate()?;

    if dry_run {
        println!("cells:");
        for cell in ScenarioCell::all() {
            println!("  {}", cell.key());
        }
        println!("seeds:");
        println!("  split = {}", config.seed);
        for (name, value) in config.harness.resolved_seeds() {
            println!("  {name} = {value}");
        }
        return Ok(());
    }

    let split = config.load_split()?;
    let run_id = run_id.unwrap_or_else(|| make_run_id(&config.harness));
    let dir = RunDir::create(&config.output_dir, &run_id, &config)?;
    eprintln!("run {run_id}: writing to {}", dir.path.display());
    let report = run_matrix(&split, &config.harness, &run_id, Some(&dir))?;
    print!("{}", render_report(&report, ReportFormat::Markdown));
    Ok(())
}

fn read_lines(path: &Path) -> anyhow::Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().map(str::to_string).collect())
}

fn score(hyp: &Path, reference: &Path) -> anyhow::Result<()> {
    let hyps = read_lines(hyp)?;
    let refs = read_lines(reference)?;
    if hyps.len() != refs.len() {
        bail!(
            "{} has {} lines but {} has {}",
            hyp.display(),
            hyps.len(),
            reference.display(),
            refs.len()
        );
    }
    let m = score_cell(&hyps, &refs)?;
    let header = CSV_HEADER.splitn(4, ',').nth(3).expect("metric columns");
    println!("{header}");
    println!("{}", noisegate::harness::csv_row(&[], &m));
    Ok(())
}

fn report(run_dir: &Path, format: Format) -> anyhow::Result<()> {
    let path = run_dir.join("report.json");
    let report = MatrixReport::load(&path)?;
    let format = match format {
        Format::Markdown => ReportFormat::Markdown,
        Format::Csv => ReportFormat::Csv,
    };
    print!("{}", render_report(&report, format));
    Ok(())
}
