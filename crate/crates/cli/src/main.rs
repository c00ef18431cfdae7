use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use qnas::lut::{model_size_bits, read_luts, write_luts};
use qnas::pareto::{read_fronts, write_fronts, MetricSet};
use qnas::pipeline::{build_stage, load_candidates, prune_stage, run_pipeline, PipelineConfig};
use qnas::report::{emit_report, read_csv, to_csv, to_table, ReportRow};
use qnas::search::{
    branch_and_bound_search, non_dominated_results, parse_grid, sweep, SearchConstraints, SearchResult,
};
use qnas::verify::{verify_luts, verify_random, VerifyOptions};
use qnas::{Error, ErrorKind};

#[derive(Parser)]
#[command(name = "qnas", version, about = "Block-wise quantization-aware architecture search")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Inspect the search space.
    #[command(subcommand)]
    Space(SpaceCommand),
    /// Build or prune lookup tables.
    #[command(subcommand)]
    Luts(LutsCommand),
    /// Exact constrained search over pruned fronts.
    Search(SearchArgs),
    /// One exact search per budget grid point.
    Sweep(SweepArgs),
    /// Randomized oracle-equivalence and pruning-safety checks.
    Verify(VerifyArgs),
    /// Render search results or sweep CSVs as CSV plus a text table.
    Report(ReportArgs),
    /// Build, prune and summarize in one go.
    Run(RunArgs),
}

#[derive(Subcommand)]
enum SpaceCommand {
    /// Print blocks, op menus, subnet counts and size ranges.
    Describe {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum LutsCommand {
    Build(BuildArgs),
    Prune(PruneArgs),
}

/// Flags shared by `luts build` and `run`; each overrides its config field.
#[derive(Args)]
struct BuildFlags {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated bitwidths, e.g. 4,6,8.
    #[arg(long, value_delimiter = ',')]
    bits: Option<Vec<u8>>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    length: Option<usize>,
    /// Base seed; teacher, student and calibration use seed, seed+1, seed+2.
    #[arg(long)]
    seed: Option<u64>,
    /// Refit each student's projections to the teacher before quantizing.
    #[arg(long)]
    fit: bool,
    /// `synthetic`, `none`, or a `block,subnet_id,latency_us` CSV.
    #[arg(long)]
    latency: Option<String>,
    #[arg(long)]
    latency_all_bitwidths: bool,
    #[arg(long)]
    base_size_bits: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
}

impl BuildFlags {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = load_config(self.config.as_deref())?;
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        if let Some(bits) = &self.bits {
            cfg.bits = bits.clone();
        }
        if let Some(n) = self.samples {
            cfg.samples = n;
        }
        if let Some(n) = self.length {
            cfg.length = n;
        }
        if let Some(s) = self.seed {
            cfg.seed = Some(s);
            cfg.seeds = None;
        }
        cfg.fit |= self.fit;
        if let Some(l) = &self.latency {
            cfg.latency = l.clone();
        }
        cfg.latency_all_bitwidths |= self.latency_all_bitwidths;
        if let Some(b) = self.base_size_bits {
            cfg.base_size_bits = b;
        }
        if self.workers.is_some() {
            cfg.workers = self.workers;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct BuildArgs {
    #[command(flatten)]
    flags: BuildFlags,
}

#[derive(Args)]
struct PruneArgs {
    /// LUT directory.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// `size` or `size,latency`.
    #[arg(long, default_value = "size")]
    metrics: String,
    /// Prune only these bitwidths' tables.
    #[arg(long, value_delimiter = ',')]
    bits: Option<Vec<u8>>,
    /// Also drop entries dominated by another bitwidth of the same block.
    #[arg(long)]
    merge_bitwidths: bool,
}

#[derive(Args)]
struct QueryFlags {
    /// Config supplying defaults and the space the fronts must match.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    fronts: Option<PathBuf>,
    /// Admitted bitwidths, e.g. 8 or 4,6,8.
    #[arg(long, value_delimiter = ',')]
    bits: Option<Vec<u8>>,
}

#[derive(Args)]
struct SearchArgs {
    #[command(flatten)]
    query: QueryFlags,
    #[arg(long)]
    max_size_bits: Option<u64>,
    #[arg(long)]
    max_latency_us: Option<f64>,
    /// Result JSON; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    query: QueryFlags,
    /// `lo:hi:steps`, inclusive.
    #[arg(long)]
    size_grid: Option<String>,
    #[arg(long)]
    latency_grid: Option<String>,
    /// Keep every grid point instead of the non-dominated results.
    #[arg(long)]
    all: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Sample instances from these LUTs; synthetic instances otherwise.
    #[arg(long)]
    luts: Option<PathBuf>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_combinations: Option<u64>,
}

#[derive(Args)]
struct ReportArgs {
    /// Result JSON files and/or report CSVs.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "report")]
    stem: String,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    flags: BuildFlags,
    #[arg(long)]
    metrics: Option<String>,
    #[arg(long)]
    merge_bitwidths: bool,
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    Ok(match path {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    })
}

fn describe_space(cfg: &PipelineConfig) -> Result<String> {
    use std::fmt::Write as _;
    let space = cfg.space()?;
    let menu = cfg.menu()?;
    let mut s = String::new();
    writeln!(s, "space hash {}", space.content_hash())?;
    writeln!(s, "{:>5} {:>6} {:>9} {:>9} {:>24}  op menu", "block", "layers", "channels", "subnets", "size bits (min..max)")?;
    let mut total: u128 = 1;
    for b in space.blocks() {
        let lo = model_size_bits(b, b.subnet(0)?, menu.bitwidths()[0])?;
        let top = *menu.bitwidths().last().expect("non-empty menu");
        let hi = (0..b.subnet_count()).map(|v| model_size_bits(b, b.subnet(v)?, top)).try_fold(0, |m, x| x.map(|x| m.max(x)))?;
        let ops: Vec<String> = b.op_menu().iter().map(ToString::to_string).collect();
        writeln!(
            s,
            "{:>5} {:>6} {:>9} {:>9} {:>24}  {}",
            b.index(),
            b.num_layers(),
            format!("{}->{}", b.in_channels(), b.out_channels()),
            b.subnet_count(),
            format!("{lo}..{hi}"),
            ops.join(" ")
        )?;
        total = total.saturating_mul(b.subnet_count() as u128 * menu.bitwidths().len() as u128);
    }
    writeln!(s, "bitwidths {:?}; {} tables; {total} joint selections", menu.bitwidths(), space.num_blocks() * menu.bitwidths().len())?;
    Ok(s)
}

fn query_context(q: &QueryFlags) -> Result<(PipelineConfig, qnas::search::CandidateSet, Option<Vec<u8>>)> {
    let cfg = load_config(q.config.as_deref())?;
    let fronts = q.fronts.clone().unwrap_or_else(|| cfg.fronts_dir());
    let space = match &q.config {
        Some(_) => Some(cfg.space()?),
        None => None,
    };
    let bits = q.bits.clone().or_else(|| cfg.search.bits.clone());
    let candidates = load_candidates(&fronts, None, space.as_ref())
        .with_context(|| format!("loading fronts from {}", fronts.display()))?;
    Ok((cfg, candidates, bits))
}

fn write_or_print(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })?;
            }
            fs::write(p, text).map_err(|e| Error::Io { path: p.to_path_buf(), source: e })?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn grid(spec: Option<&str>) -> Result<Vec<f64>> {
    Ok(match spec {
        Some(s) => parse_grid(s)?,
        None => Vec::new(),
    })
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Space(SpaceCommand::Describe { config }) => {
            print!("{}", describe_space(&load_config(config.as_deref())?)?);
        }
        Command::Luts(LutsCommand::Build(args)) => {
            let cfg = args.flags.resolve()?;
            let (manifest, luts) = build_stage(&cfg).context("build")?;
            write_luts(&luts, &manifest, &cfg.out)?;
            println!("wrote {} LUTs to {} (manifest {})", luts.len(), cfg.out.display(), manifest.hash());
        }
        Command::Luts(LutsCommand::Prune(args)) => {
            let metrics: MetricSet = args.metrics.parse()?;
            let (manifest, luts) = read_luts(&args.input)?;
            let (fm, fronts) = prune_stage(&manifest, &luts, &metrics, args.bits.as_deref(), args.merge_bitwidths)?;
            write_fronts(&fronts, &fm, &args.out)?;
            let kept: usize = fronts.iter().map(|f| f.entries.len()).sum();
            let total: usize = luts.iter().filter(|l| fm.bitwidths.contains(&l.bitwidth)).map(|l| l.entries.len()).sum();
            println!("kept {kept} of {total} entries on {{{metrics}}} in {} fronts at {}", fronts.len(), args.out.display());
        }
        Command::Search(args) => {
            let (cfg, candidates, bits) = query_context(&args.query)?;
            let constraints = SearchConstraints {
                max_total_size_bits: args.max_size_bits.or(cfg.search.max_size_bits),
                max_total_latency_us: args.max_latency_us.or(cfg.search.max_latency_us),
                bitwidths: bits,
            };
            let result = branch_and_bound_search(&candidates, &constraints)?;
            let mut json = serde_json::to_string_pretty(&result)?;
            json.push('\n');
            write_or_print(args.out.as_deref(), &json)?;
            if args.out.is_some() {
                print!("{}", to_table(&[(&result).into()]));
            }
        }
        Command::Sweep(args) => {
            let (cfg, candidates, bits) = query_context(&args.query)?;
            let sizes = grid(args.size_grid.as_deref().or(cfg.search.size_grid.as_deref()))?;
            let lats = grid(args.latency_grid.as_deref().or(cfg.search.latency_grid.as_deref()))?;
            if sizes.iter().any(|s| *s < 0.0) {
                return Err(Error::Validation("size budgets must be non-negative".into()).into());
            }
            let sizes: Vec<u64> = sizes.iter().map(|s| s.round() as u64).collect();
            let points = sweep(&candidates, &sizes, &lats, bits.as_deref())?;
            let rows: Vec<ReportRow> = if args.all {
                points.iter().map(ReportRow::from).collect()
            } else {
                non_dominated_results(&points).into_iter().map(ReportRow::from).collect()
            };
            write_or_print(Some(&args.out), &to_csv(&rows))?;
            print!("{}", to_table(&rows));
            let feasible = points.iter().filter(|p| p.result().is_some()).count();
            println!("{} budgets, {feasible} feasible, {} rows written to {}", points.len(), rows.len(), args.out.display());
        }
        Command::Verify(args) => {
            let cfg = load_config(args.config.as_deref())?;
            let opts = VerifyOptions {
                trials: args.trials.unwrap_or(cfg.verify.trials),
                seed: args.seed.unwrap_or(cfg.verify.seed),
                max_combinations: args.max_combinations.unwrap_or(cfg.verify.max_combinations) as u128,
                ..VerifyOptions::default()
            };
            let report = match &args.luts {
                Some(dir) => verify_luts(&read_luts(dir)?.1, &opts)?,
                None => verify_random(&opts)?,
            };
            print!("{}", report.render());
            if !report.passed() {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Report(args) => {
            let mut rows = Vec::new();
            for input in &args.inputs {
                if input.extension().is_some_and(|e| e == "json") {
                    let text = fs::read_to_string(input).map_err(|e| Error::Io { path: input.clone(), source: e })?;
                    let r: SearchResult = serde_json::from_str(&text)
                        .map_err(|e| Error::Parse { file: input.clone(), line: e.line(), msg: e.to_string() })?;
                    rows.push(ReportRow::from(&r));
                } else {
                    rows.extend(read_csv(input)?);
                }
            }
            let (csv, txt) = emit_report(&rows, &args.out, &args.stem)?;
            print!("{}", fs::read_to_string(&txt).map_err(|e| Error::Io { path: txt.clone(), source: e })?);
            println!("wrote {} and {}", csv.display(), txt.display());
        }
        Command::Run(args) => {
            let mut cfg = args.flags.resolve()?;
            if let Some(m) = args.metrics {
                cfg.metrics = m;
            }
            cfg.merge_bitwidths |= args.merge_bitwidths;
            let art = run_pipeline(&cfg)?;
            print!("{}", fs::read_to_string(&art.summary).map_err(|e| Error::Io { path: art.summary.clone(), source: e })?);
            let (_, fronts) = read_fronts(&art.front_dir)?;
            println!("wrote {} LUTs and {} fronts under {}", art.lut_manifest.bitwidths.len() * art.lut_manifest.space.num_blocks(), fronts.len(), cfg.out.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let kind = err.chain().find_map(|e| e.downcast_ref::<Error>()).map(Error::kind);
    match kind {
        Some(ErrorKind::Validation) => 2,
        Some(ErrorKind::Infeasible) => 3,
        Some(ErrorKind::Incompatible) => 4,
        Some(ErrorKind::Io) => 5,
        Some(ErrorKind::Numerical) => 6,
        None if err.chain().any(|e| e.is::<std::io::Error>()) => 5,
        None => 1,
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
