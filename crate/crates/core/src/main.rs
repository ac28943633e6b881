use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::Value;

use gadgetscan::corpus::{load_manifest, verify_corpus};
use gadgetscan::report::{analyze, emit_sarif, score, CandidateListing, Denylist, ReportConfig, SarifMetadata};
use gadgetscan::runner::{discover_tests, replay, run_stage, Mode, RuntimeProfile, StageOptions, DEFAULT_TIMEOUT_SECS};
use gadgetscan::taint::PollutionType;

#[derive(Parser)]
#[command(name = "gadgetscan", version, about = "Find prototype-pollution gadgets by driving a test suite")]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every test uninstrumented.
    Baseline(StageArgs),
    /// Stage 1: record undefined property reads.
    Collect(StageArgs),
    /// Stage 2: pollute each collected property and record sink hits.
    Hunt(StageArgs),
    /// Stage 3: pollute each collected property and triage terminations.
    Crash(StageArgs),
    /// Baseline, collect, hunt and crash, then report.
    All {
        #[command(flatten)]
        stage: StageArgs,
        #[command(flatten)]
        report: ReportOpts,
    },
    /// Load transcripts from disk and summarize them.
    Replay {
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Turn transcripts into report.sarif and candidates.json.
    Report {
        /// Directory holding the transcripts.
        #[arg(long)]
        transcripts: PathBuf,
        #[arg(long)]
        runtime_profile: PathBuf,
        /// Where report.sarif and candidates.json are written.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[command(flatten)]
        report: ReportOpts,
    },
    /// Score candidates.json against a corpus manifest.
    Score {
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Where score.json is written.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Check a corpus manifest against its golden transcripts.
    Verify {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        golden: PathBuf,
        #[arg(long)]
        runtime_profile: PathBuf,
        /// Directory with the fixture programs named in the manifest.
        #[arg(long)]
        fixtures: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Args)]
struct StageArgs {
    #[arg(long)]
    runtime_profile: PathBuf,
    /// Directory the test globs are relative to.
    #[arg(long, default_value = ".")]
    root: PathBuf,
    #[arg(long = "tests", num_args = 1.., default_value = "**/*_test.*")]
    tests: Vec<String>,
    #[arg(long, num_args = 1..)]
    exclude: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_TIMEOUT_SECS)]
    timeout_secs: f64,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "string,object")]
    pollution_types: Vec<String>,
    #[arg(long, value_enum, default_value = "on")]
    forin_probe: Switch,
    /// File with property names (one per line) never polluted.
    #[arg(long)]
    suppress_props: Option<PathBuf>,
}

#[derive(Args)]
struct ReportOpts {
    /// Denylist JSON; the bundled default is used otherwise.
    #[arg(long)]
    denylist: Option<PathBuf>,
    /// Report configuration JSON (stack normalization, API paths, scrubbing).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Path prefix stripped from stack frames; repeatable.
    #[arg(long)]
    stack_root: Vec<String>,
}

fn stage_options(args: &StageArgs) -> Result<StageOptions> {
    let mut opts = StageOptions::new(&args.out);
    if let Some(j) = args.jobs {
        opts.jobs = j.max(1);
    }
    if args.timeout_secs.is_nan() || args.timeout_secs <= 0.0 {
        bail!("--timeout-secs must be positive");
    }
    opts.timeout_secs = args.timeout_secs;
    opts.pollution_types = args
        .pollution_types
        .iter()
        .map(|t| match PollutionType::parse(t.trim()) {
            Some(p @ (PollutionType::String | PollutionType::Object)) => Ok(p),
            _ => bail!("unknown pollution type `{t}` (expected string or object)"),
        })
        .collect::<Result<BTreeSet<_>>>()?;
    opts.forin_probe = matches!(args.forin_probe, Switch::On);
    if let Some(path) = &args.suppress_props {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        opts.suppress_props = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(String::from)
            .collect();
    }
    Ok(opts)
}

fn run_stages(modes: &[Mode], args: &StageArgs) -> Result<()> {
    let profile = RuntimeProfile::load(&args.runtime_profile)?;
    let opts = stage_options(args)?;
    let tests = discover_tests(&args.root, &args.tests, &args.exclude)?;
    for mode in modes {
        let summary = run_stage(*mode, &tests, &profile, &opts)?;
        let failed = summary.runs.iter().filter(|r| r.error.is_some()).count();
        eprintln!("{mode}: {} runs, {failed} failed to run, verdicts {:?}", summary.runs.len(), summary.verdicts);
    }
    Ok(())
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn report(transcripts: &Path, profile: &RuntimeProfile, out: &Path, opts: &ReportOpts) -> Result<CandidateListing> {
    let config: ReportConfig = match &opts.config {
        Some(p) => serde_json::from_str(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => ReportConfig::default(),
    };
    let denylist = match &opts.denylist {
        Some(p) => Denylist::load(p)?,
        None => Denylist::builtin(),
    };
    let replayed = replay(transcripts);
    for e in &replayed.errors {
        log::warn!("skipping transcript {}: {}", e.dir.display(), e.message);
    }
    if replayed.outcomes.is_empty() {
        bail!("no transcripts under {}", transcripts.display());
    }
    let result = analyze(&replayed.outcomes, profile, &config, &denylist, &opts.stack_root)?;
    let listing = result.listing();

    let mut metadata = SarifMetadata::default();
    metadata.properties.insert("runtimeProfile".into(), Value::from(profile.name()));
    metadata.properties.insert("runs".into(), Value::from(result.stats.runs));
    metadata.properties.insert("uniqueFlowPairs".into(), Value::from(result.stats.unique_flow_pairs));
    metadata.properties.insert("uniqueTerminations".into(), Value::from(result.stats.unique_terminations));
    metadata.properties.insert("suppressedCandidates".into(), Value::from(result.suppressed.len()));
    let sarif = emit_sarif(&result.gadgets, &result.orphans, &metadata).context("serializing SARIF")?;

    write(&out.join("report.sarif"), &sarif)?;
    write(&out.join("candidates.json"), &listing.to_json())?;
    eprintln!(
        "{} candidates in {} gadgets, {} suppressed, {} orphan sinks -> {}",
        listing.candidates.len(),
        listing.gadgets.len(),
        listing.suppressed.len(),
        listing.orphans.len(),
        out.display()
    );
    Ok(listing)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Baseline(args) => run_stages(&[Mode::Baseline], &args)?,
        Command::Collect(args) => run_stages(&[Mode::Collect], &args)?,
        Command::Hunt(args) => run_stages(&[Mode::Hunt], &args)?,
        Command::Crash(args) => run_stages(&[Mode::Crash], &args)?,
        Command::All { stage, report: opts } => {
            run_stages(&[Mode::Baseline, Mode::Collect, Mode::Hunt, Mode::Crash], &stage)?;
            let profile = RuntimeProfile::load(&stage.runtime_profile)?;
            report(&stage.out, &profile, &stage.out, &opts)?;
        }
        Command::Replay { out } => {
            let replayed = replay(&out);
            let mut per_mode: BTreeMap<Mode, usize> = BTreeMap::new();
            for o in &replayed.outcomes {
                *per_mode.entry(o.plan.mode).or_default() += 1;
            }
            for (mode, n) in &per_mode {
                println!("{mode}\t{n}");
            }
            for e in &replayed.errors {
                println!("error\t{}\t{}", e.dir.display(), e.message);
            }
            if !replayed.errors.is_empty() {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Report {
            transcripts,
            runtime_profile,
            out,
            report: opts,
        } => {
            let profile = RuntimeProfile::load(&runtime_profile)?;
            report(&transcripts, &profile, &out, &opts)?;
        }
        Command::Score { candidates, manifest, out } => {
            let listing: CandidateListing = serde_json::from_str(
                &fs::read_to_string(&candidates).with_context(|| format!("reading {}", candidates.display()))?,
            )
            .with_context(|| format!("parsing {}", candidates.display()))?;
            let manifest = load_manifest(&manifest)?;
            let result = score(&listing, &manifest)?;
            write(&out.join("score.json"), &result.to_json())?;
            print!("{}", result.render_table());
        }
        Command::Verify {
            manifest,
            golden,
            runtime_profile,
            fixtures,
        } => {
            let manifest = load_manifest(&manifest)?;
            let profile = RuntimeProfile::load(&runtime_profile)?;
            let replayed = replay(&golden);
            let mut sources = BTreeMap::new();
            if let Some(dir) = &fixtures {
                for f in &manifest.fixtures {
                    if let Ok(text) = fs::read_to_string(dir.join(&f.test)) {
                        sources.insert(f.name.clone(), text);
                    }
                }
            }
            let result = verify_corpus(&manifest, &replayed.outcomes, &profile, &sources);
            for v in &result.violations {
                println!("{v}");
            }
            for e in &replayed.errors {
                println!("unreadable transcript {}: {}", e.dir.display(), e.message);
            }
            println!(
                "{} fixtures, {} runs, {} violations",
                result.fixtures_checked,
                result.runs_checked,
                result.violations.len()
            );
            if !result.is_consistent() || !replayed.errors.is_empty() {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
