//! `sdcomp`: rank, encode, truncate, decode, inspect and evaluate
//! semantically structured image streams.
//!
//! Exit codes: 0 success, 1 usage, 2 I/O, 3 format/parse, 4 transport.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use sdcomp::container::{self, LevelCode};
use sdcomp::eval::{self, QualityColumn};
use sdcomp::pipeline::{self, LevelFilter, QualityProfile};
use sdcomp::priors::{self, Ranking, SemanticPriors};
use sdcomp::prompting::{self, HttpTransport, LmmTransport, ReplayTransport};
use sdcomp::Image;

#[derive(Debug)]
enum CliError {
    Usage(String),
    Io(String),
    Format(String),
    Transport(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Io(_) => 2,
            CliError::Format(_) => 3,
            CliError::Transport(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Io(m) | CliError::Format(m) | CliError::Transport(m) => m,
        }
    }
}

fn format_err(e: impl std::fmt::Display) -> CliError {
    CliError::Format(e.to_string())
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser)]
#[command(name = "sdcomp", version, about = "Semantically structured image codec")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fill in the importance ranking of a priors sidecar.
    Rank(RankArgs),
    /// Encode an image into an SDC1 stream.
    Encode(EncodeArgs),
    /// Decode an SDC1 stream to PPM, optionally keeping only important levels.
    Decode(DecodeArgs),
    /// Cut a stream down to the units with level <= N.
    Truncate(TruncateArgs),
    /// Print the unit manifest of a stream.
    Inspect(InspectArgs),
    /// Rate-distortion sweep over level filters and quality profiles.
    Eval(EvalArgs),
    /// BD-rate between two RD tables, in percent.
    Bdrate(BdrateArgs),
}

#[derive(Args)]
#[command(group(ArgGroup::new("source").required(true).args(["heuristic", "lmm"])))]
struct RankArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    priors: PathBuf,
    /// Deterministic size-and-centrality ranker.
    #[arg(long)]
    heuristic: bool,
    /// Ask a multimodal model (SDCOMP_LMM_URL / SDCOMP_LMM_TOKEN).
    #[arg(long)]
    lmm: bool,
    /// Replay canned model responses from a fixture file instead of HTTP.
    #[arg(long, requires = "lmm")]
    replay: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RankingSource {
    /// Use the ranking stored in the priors file (default).
    #[arg(long, conflicts_with = "heuristic")]
    ranking_in_priors: bool,
    /// Rank with the deterministic heuristic instead.
    #[arg(long)]
    heuristic: bool,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    priors: PathBuf,
    #[command(flatten)]
    ranking: RankingSource,
    /// Quality indices for L1,L2,L3,other,background.
    #[arg(long, default_value = "2,3,4,5,6")]
    profile: QualityProfile,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u8).range(1..=5))]
    max_level: u8,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TruncateArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=5))]
    max_level: u8,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    priors: PathBuf,
    #[command(flatten)]
    ranking: RankingSource,
    /// Comma-separated max levels, e.g. 1,3,4,5.
    #[arg(long, default_value = "1,2,3,4,5", value_delimiter = ',')]
    filters: Vec<u8>,
    /// Quality profiles; repeat the flag or separate profiles with ';'.
    #[arg(long, default_value = "2,3,4,5,6")]
    profiles: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    Full,
    Objects,
}

#[derive(Args)]
struct BdrateArgs {
    #[arg(long)]
    anchor: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// Quality column used for the curves.
    #[arg(long, value_enum, default_value = "full")]
    metric: Metric,
    /// Only use rows with this filter level.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=5))]
    filter: Option<u8>,
}

fn read(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn read_text(path: &Path) -> CliResult<String> {
    String::from_utf8(read(path)?).map_err(|_| CliError::Format(format!("{}: not UTF-8", path.display())))
}

/// Writes through a temp file in the target directory and renames into place.
fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut builder = tempfile::Builder::new();
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        builder.permissions(std::fs::Permissions::from_mode(0o666));
    }
    let mut tmp = builder.tempfile_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

fn load_image(path: &Path) -> CliResult<Image> {
    sdcomp::image::load_ppm(&read(path)?).map_err(|e| CliError::Format(format!("{}: {e}", path.display())))
}

fn load_priors(path: &Path) -> CliResult<SemanticPriors> {
    priors::parse_priors(&read_text(path)?).map_err(|e| CliError::Format(format!("{}: {e}", path.display())))
}

fn load_inputs(image: &Path, priors: &Path) -> CliResult<(Image, SemanticPriors)> {
    let img = load_image(image)?;
    let p = load_priors(priors)?;
    p.check_dimensions(img.width(), img.height()).map_err(format_err)?;
    Ok((img, p))
}

fn resolve_ranking(src: &RankingSource, p: &SemanticPriors) -> CliResult<Ranking> {
    if src.heuristic {
        if p.objects.is_empty() {
            return Ok(Ranking::new());
        }
        return priors::heuristic_rank(p).map_err(format_err);
    }
    p.ranking
        .clone()
        .ok_or_else(|| CliError::Format("priors carry no ranking; run `sdcomp rank` first or pass --heuristic".into()))
}

fn cmd_rank(a: RankArgs) -> CliResult<()> {
    let (img, mut p) = load_inputs(&a.image, &a.priors)?;
    if p.objects.is_empty() {
        return Err(CliError::Format("priors contain no objects to rank".into()));
    }
    if a.heuristic {
        p.ranking = Some(priors::heuristic_rank(&p).map_err(format_err)?);
    } else {
        let mut transport: Box<dyn LmmTransport> = match &a.replay {
            Some(path) => Box::new(
                ReplayTransport::from_fixture(&read_text(path)?)
                    .map_err(|e| CliError::Format(format!("{}: {e}", path.display())))?,
            ),
            None => Box::new(HttpTransport::from_env().ok_or_else(|| {
                CliError::Usage(format!("--lmm needs {} (or --replay <fixture>)", prompting::ENV_URL))
            })?),
        };
        let (captions, ranking) = prompting::rank_via_lmm(transport.as_mut(), &img, &p).map_err(|e| {
            if e.is_transport() {
                CliError::Transport(e.to_string())
            } else {
                CliError::Format(e.to_string())
            }
        })?;
        p.captions = Some(captions);
        p.ranking = Some(ranking);
    }
    let mut json = p.to_json();
    json.push('\n');
    write_atomic(&a.out, json.as_bytes())
}

fn cmd_encode(a: EncodeArgs) -> CliResult<()> {
    let (img, p) = load_inputs(&a.image, &a.priors)?;
    let ranking = resolve_ranking(&a.ranking, &p)?;
    let bytes = pipeline::encode_image(&img, &p, &ranking, &a.profile).map_err(format_err)?;
    write_atomic(&a.out, &bytes)
}

fn level(n: u8) -> CliResult<LevelCode> {
    LevelCode::new(n).map_err(|e| CliError::Usage(e.to_string()))
}

fn cmd_decode(a: DecodeArgs) -> CliResult<()> {
    let bytes = read(&a.input)?;
    let filter = LevelFilter { max_level: level(a.max_level)? };
    let img = pipeline::decode_image(&bytes, filter).map_err(format_err)?;
    write_atomic(&a.out, &sdcomp::image::save_ppm(&img))
}

fn cmd_truncate(a: TruncateArgs) -> CliResult<()> {
    let bytes = read(&a.input)?;
    let out = container::truncate(&bytes, level(a.max_level)?).map_err(format_err)?;
    write_atomic(&a.out, &out)
}

fn cmd_inspect(a: InspectArgs) -> CliResult<()> {
    let manifest = container::inspect(&read(&a.input)?).map_err(format_err)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&manifest).map_err(format_err)?);
    } else {
        print!("{manifest}");
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> CliResult<()> {
    let (img, p) = load_inputs(&a.image, &a.priors)?;
    let ranking = resolve_ranking(&a.ranking, &p)?;
    let filters = a
        .filters
        .iter()
        .map(|&f| LevelFilter::new(f).map_err(|e| CliError::Usage(e.to_string())))
        .collect::<CliResult<Vec<_>>>()?;
    let profiles = a
        .profiles
        .iter()
        .flat_map(|s| s.split(';'))
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.parse::<QualityProfile>().map_err(|e| CliError::Usage(e.to_string())))
        .collect::<CliResult<Vec<_>>>()?;
    if filters.is_empty() || profiles.is_empty() {
        return Err(CliError::Usage("need at least one filter and one profile".into()));
    }
    let rows = eval::rd_sweep(&img, &p, &ranking, &filters, &profiles).map_err(format_err)?;
    write_atomic(&a.out, eval::rows_to_csv(&rows).as_bytes())
}

fn cmd_bdrate(a: BdrateArgs) -> CliResult<()> {
    let column = match a.metric {
        Metric::Full => QualityColumn::Full,
        Metric::Objects => QualityColumn::Objects,
    };
    let filter = a.filter.map(level).transpose()?;
    let curve = |path: &Path| -> CliResult<_> {
        eval::curve_from_csv(&read_text(path)?, column, filter)
            .map_err(|e| CliError::Format(format!("{}: {e}", path.display())))
    };
    let anchor = curve(&a.anchor)?;
    let test = curve(&a.test)?;
    let pct = eval::bd_rate(&anchor, &test).map_err(format_err)?;
    println!("{pct:.4}");
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Rank(a) => cmd_rank(a),
        Command::Encode(a) => cmd_encode(a),
        Command::Decode(a) => cmd_decode(a),
        Command::Truncate(a) => cmd_truncate(a),
        Command::Inspect(a) => cmd_inspect(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bdrate(a) => cmd_bdrate(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sdcomp: {}", e.message().lines().next().unwrap_or_default());
            ExitCode::from(e.exit_code())
        }
    }
}
