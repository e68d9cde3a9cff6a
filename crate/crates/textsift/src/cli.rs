//! The `textsift` command-line interface.
//!
//! Exit codes: 0 on success, 1 on usage errors (bad flags, missing
//! arguments), 2 on data errors (unreadable files, malformed rows,
//! degenerate series). Progress goes to standard error; machine-readable
//! output goes only to files or standard output.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::analyze::{
    aggregate_settings, correlate, metric_intercorrelation, read_metric_rows, render_heatmap,
    CorrMethod, ScoreTable,
};
use crate::corpus::{
    paper_grid, perturb_corpus, read_corpus, write_outputs, CorpusConfig, SweepGrid,
};
use crate::error::{Error, Result};
use crate::metrics::{chrf2, levenshtein_norm};
use crate::tokenize::{compression_rate, BpeVocab};

#[derive(Parser)]
#[command(name = "textsift", version, about = "Text perturbation and structure measurement")]
struct Cli {
    /// Increase verbosity (-v info, -vv debug)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Apply a perturbation grid to a corpus and emit perturbed copies plus metrics
    Perturb(PerturbArgs),
    /// Run the full published sweep (perturb with `--grid paper` by default)
    Sweep(SweepArgs),
    /// Alignment-free metrics for a line-aligned original/perturbed file pair
    Measure(MeasureArgs),
    /// Correlate per-setting metric means against model score tables
    Analyze(AnalyzeArgs),
}

#[derive(Args)]
struct GridRunArgs {
    /// Input corpus file
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,

    /// Corpus config (TOML: format, text_fields, id_field, has_header)
    #[arg(long, value_name = "FILE")]
    config: PathBuf,

    /// Directory with vocab.json and merges.txt
    #[arg(long, value_name = "DIR", env = "TEXTSIFT_VOCAB_DIR")]
    vocab_dir: Option<PathBuf>,

    /// Base seed for all random streams
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Output directory
    #[arg(long, value_name = "DIR")]
    out: PathBuf,

    /// Log and skip failing records instead of aborting
    #[arg(long)]
    keep_going: bool,

    /// Overwrite an existing output directory
    #[arg(long)]
    force: bool,

    /// Worker threads (default: all cores; 1 reproduces serial output)
    #[arg(long, value_name = "N")]
    jobs: Option<usize>,
}

#[derive(Args)]
struct PerturbArgs {
    #[command(flatten)]
    common: GridRunArgs,

    /// `paper` for the published grid, or a grid CSV path
    #[arg(long, value_name = "paper|FILE")]
    grid: String,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: GridRunArgs,

    /// `paper` for the published grid, or a grid CSV path
    #[arg(long, value_name = "paper|FILE", default_value = "paper")]
    grid: String,
}

#[derive(Args)]
struct MeasureArgs {
    /// Original text, one record per line
    #[arg(long, value_name = "FILE")]
    original: PathBuf,

    /// Perturbed text, line-aligned with the original
    #[arg(long, value_name = "FILE")]
    perturbed: PathBuf,

    /// Directory with vocab.json and merges.txt (enables compression rates)
    #[arg(long, value_name = "DIR", env = "TEXTSIFT_VOCAB_DIR")]
    vocab_dir: Option<PathBuf>,

    /// Output CSV (default: standard output)
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Per-record metrics CSV (as written by perturb/sweep)
    #[arg(long, value_name = "FILE")]
    metrics: PathBuf,

    /// Scores CSV with header setting_id,model,score
    #[arg(long, value_name = "FILE")]
    scores: PathBuf,

    /// Correlation method
    #[arg(long, default_value = "spearman", value_name = "spearman|pearson")]
    method: String,

    /// Output matrix CSV
    #[arg(long, value_name = "FILE")]
    out: PathBuf,

    /// Also render the matrix as an SVG heatmap
    #[arg(long, value_name = "FILE")]
    svg: Option<PathBuf>,

    /// Also write the metric-vs-metric Pearson matrix next to --out
    #[arg(long)]
    intercorrelation: bool,
}

/// Run the CLI; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };

    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();

    let result = match cli.command {
        Command::Perturb(args) => run_grid(args.common, &args.grid),
        Command::Sweep(args) => run_grid(args.common, &args.grid),
        Command::Measure(args) => run_measure(args),
        Command::Analyze(args) => run_analyze(args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn load_vocab(dir: &Option<PathBuf>) -> Result<BpeVocab> {
    let dir = dir.as_ref().ok_or_else(|| {
        Error::Config(
            "a vocabulary is required (pass --vocab-dir or set TEXTSIFT_VOCAB_DIR)".into(),
        )
    })?;
    BpeVocab::load(dir)
}

fn run_grid(args: GridRunArgs, grid_arg: &str) -> Result<()> {
    let config = CorpusConfig::from_toml_path(&args.config)?;
    let corpus = read_corpus(&args.input, &config)?;
    let grid = if grid_arg == "paper" {
        paper_grid(args.seed)
    } else {
        SweepGrid::from_csv_path(Path::new(grid_arg), args.seed)?
    };
    let vocab = load_vocab(&args.vocab_dir)?;
    log::info!(
        "perturbing {} records x {} settings",
        corpus.len(),
        grid.settings.len()
    );

    let cells = match args.jobs {
        Some(jobs) => rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?
            .install(|| perturb_corpus(&corpus, &grid, &vocab, args.keep_going)),
        None => perturb_corpus(&corpus, &grid, &vocab, args.keep_going),
    }?;

    write_outputs(&corpus, &grid, &cells, &args.out, args.force)?;
    log::info!("wrote {} cells under {}", cells.len(), args.out.display());
    Ok(())
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(|l| l.strip_suffix('\r').unwrap_or(l).to_string())
        .collect())
}

fn run_measure(args: MeasureArgs) -> Result<()> {
    let originals = read_lines(&args.original)?;
    let perturbed = read_lines(&args.perturbed)?;
    if originals.len() != perturbed.len() {
        return Err(Error::LineCountMismatch {
            left: originals.len(),
            right: perturbed.len(),
        });
    }
    let vocab = match &args.vocab_dir {
        Some(dir) => Some(BpeVocab::load(dir)?),
        None => {
            log::warn!("no vocabulary given; compression rates will be empty");
            None
        }
    };
    log::warn!(
        "idc and dnd need the index map produced by perturbation and cannot \
         be recovered from raw string pairs; emitting alignment-free metrics only"
    );

    let mut out: Box<dyn Write> = match &args.out {
        Some(path) => Box::new(std::io::BufWriter::new(
            std::fs::File::create(path).map_err(|e| Error::io(path, e))?,
        )),
        None => Box::new(std::io::stdout().lock()),
    };
    let write_err = |e: std::io::Error| Error::io(args.out.clone().unwrap_or_default(), e);

    writeln!(
        out,
        "line,chrf2,comp_original,comp_perturbed,comp_ratio,lev_norm"
    )
    .map_err(write_err)?;
    for (i, (orig, pert)) in originals.iter().zip(&perturbed).enumerate() {
        let score = chrf2(orig, pert)?;
        let lev = levenshtein_norm(orig, pert);
        let comp = match &vocab {
            Some(v) => {
                let co = compression_rate(orig, v)?;
                let cp = compression_rate(pert, v)?;
                format!("{co:.6},{cp:.6},{:.6}", cp / co)
            }
            None => ",,".to_string(),
        };
        writeln!(out, "{},{score:.6},{comp},{lev:.6}", i + 1).map_err(write_err)?;
    }
    out.flush().map_err(write_err)?;
    Ok(())
}

fn run_analyze(args: AnalyzeArgs) -> Result<()> {
    let method = CorrMethod::parse(&args.method)?;
    let rows = read_metric_rows(&args.metrics)?;
    let settings = aggregate_settings(&rows);
    let scores = ScoreTable::from_csv_path(&args.scores)?;
    let matrix = correlate(&settings, &scores, method)?;
    matrix.write_csv(&args.out)?;
    log::info!(
        "{} correlation over {} settings -> {}",
        method.as_str(),
        settings.setting_ids.len(),
        args.out.display()
    );

    if let Some(svg_path) = &args.svg {
        std::fs::write(svg_path, render_heatmap(&matrix))
            .map_err(|e| Error::io(svg_path, e))?;
    }
    if args.intercorrelation {
        let inter = metric_intercorrelation(&rows)?;
        let path = args.out.with_file_name(format!(
            "{}_metrics{}",
            args.out.file_stem().unwrap_or_default().to_string_lossy(),
            args.out
                .extension()
                .map(|e| format!(".{}", e.to_string_lossy()))
                .unwrap_or_default()
        ));
        inter.write_csv(&path)?;
    }
    Ok(())
}
