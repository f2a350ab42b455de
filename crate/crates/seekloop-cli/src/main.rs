//! `seekloop` — run the video agent over a dataset manifest, sweep the
//! toolkit scale factor, mint synthetic benchmark datasets, and re-render
//! reports from run directories.

use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use seekloop::harness::{
    self, read_run_dir, run_benchmark, sweep_alpha, BackendFactory, HttpBackendFactory,
    OracleBackendFactory, RunMode, RunOptions, ScriptedBackendFactory,
};
use seekloop::model::ToolMask;
use seekloop::{PromptTemplates, ToolConfig};

#[derive(Parser)]
#[command(name = "seekloop")]
#[command(about = "Agentic long-video question answering: runs, sweeps, and reports")]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every question in a manifest and write logs + report to --out.
    Run(RunArgs),
    /// Run the manifest once per scale factor and write a frames/accuracy CSV.
    Sweep(SweepArgs),
    /// Generate a synthetic single-needle benchmark (worlds + manifest).
    Synth(SynthArgs),
    /// Recompute and print the report of an existing run directory.
    Report {
        /// Run directory containing episodes/*.jsonl.
        run_dir: PathBuf,
    },
    /// Write the built-in prompt templates to a directory for editing.
    Templates {
        /// Output directory (one .txt file per template).
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Dataset manifest (JSON).
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory for episode logs and report.json.
    #[arg(long)]
    out: PathBuf,
    /// Toolkit scale factor: overview samples 16*alpha frames, skims at
    /// least 4*alpha, focus caps at 4*alpha seconds.
    #[arg(long, default_value_t = 4)]
    alpha: u32,
    /// Turn limit before the answer is forced.
    #[arg(long)]
    max_turns: Option<u32>,
    /// Comma-separated viewing tools to enable (ablation masks),
    /// e.g. "skim,focus" to run without the overview.
    #[arg(long)]
    tools: Option<String>,
    /// agent | single:BUDGET | replay:RUNDIR
    #[arg(long, default_value = "agent")]
    mode: ModeArg,
    /// http | scripted:FILE | oracle
    #[arg(long, default_value = "http")]
    backend: BackendArg,
    /// Parallel episodes.
    #[arg(long, default_value_t = 4)]
    workers: usize,
    /// Re-run episodes even when a finished log exists.
    #[arg(long)]
    no_resume: bool,
    /// Directory of prompt template .txt files (defaults to built-ins).
    #[arg(long)]
    templates: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated scale factors, e.g. "1,2,4,8".
    #[arg(long, default_value = "1,2,4,8")]
    alphas: String,
    #[arg(long)]
    max_turns: Option<u32>,
    #[arg(long)]
    tools: Option<String>,
    /// http | scripted:FILE | oracle
    #[arg(long, default_value = "oracle")]
    backend: BackendArg,
    #[arg(long, default_value_t = 4)]
    workers: usize,
    #[arg(long)]
    no_resume: bool,
    #[arg(long)]
    templates: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Output dataset directory (worlds/ + manifest.json).
    #[arg(long)]
    out: PathBuf,
    /// Number of videos to generate (seeds seed..seed+tasks).
    #[arg(long, default_value_t = 200)]
    tasks: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Video length in seconds.
    #[arg(long, default_value_t = 3600.0)]
    duration: f64,
    #[arg(long, default_value_t = 12)]
    scenes: u32,
    /// Needles per video (one question each).
    #[arg(long, default_value_t = 1)]
    needles: u32,
}

#[derive(Clone)]
enum ModeArg {
    Agent,
    Single { budget: u32 },
    Replay { source: PathBuf },
}

impl FromStr for ModeArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.split_once(':') {
            None if s == "agent" => Ok(ModeArg::Agent),
            Some(("single", budget)) => {
                let budget = budget
                    .parse()
                    .map_err(|_| format!("bad single-pass budget {budget:?}"))?;
                Ok(ModeArg::Single { budget })
            }
            Some(("replay", dir)) => Ok(ModeArg::Replay { source: PathBuf::from(dir) }),
            _ => Err(format!(
                "unknown mode {s:?}; expected agent, single:BUDGET, or replay:RUNDIR"
            )),
        }
    }
}

impl ModeArg {
    fn to_run_mode(&self) -> RunMode {
        match self {
            ModeArg::Agent => RunMode::Agent,
            ModeArg::Single { budget } => RunMode::SinglePass { budget: *budget },
            ModeArg::Replay { source } => RunMode::Replay { source_dir: source.clone() },
        }
    }
}

#[derive(Clone)]
enum BackendArg {
    Http,
    Scripted { file: PathBuf },
    Oracle,
}

impl FromStr for BackendArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.split_once(':') {
            None if s == "http" => Ok(BackendArg::Http),
            None if s == "oracle" => Ok(BackendArg::Oracle),
            Some(("scripted", file)) => Ok(BackendArg::Scripted { file: PathBuf::from(file) }),
            _ => Err(format!(
                "unknown backend {s:?}; expected http, scripted:FILE, or oracle"
            )),
        }
    }
}

impl BackendArg {
    fn build(&self, config: &ToolConfig) -> Result<Box<dyn BackendFactory>> {
        Ok(match self {
            BackendArg::Http => Box::new(
                HttpBackendFactory::from_env()
                    .context("building HTTP backends from SEEKLOOP_* env vars")?,
            ),
            BackendArg::Scripted { file } => Box::new(
                ScriptedBackendFactory::from_file(file)
                    .with_context(|| format!("loading scripts from {}", file.display()))?,
            ),
            BackendArg::Oracle => Box::new(OracleBackendFactory::new(config.clone())),
        })
    }
}

fn parse_tool_mask(tools: &str) -> Result<ToolMask> {
    let mut mask = ToolMask { overview: false, skim: false, focus: false };
    for name in tools.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        match name {
            "overview" => mask.overview = true,
            "skim" => mask.skim = true,
            "focus" => mask.focus = true,
            other => bail!("unknown tool {other:?}; expected overview, skim, or focus"),
        }
    }
    if mask.enabled_view_tools().is_empty() {
        bail!("--tools must enable at least one viewing tool");
    }
    Ok(mask)
}

fn build_config(alpha: u32, max_turns: Option<u32>, tools: Option<&str>) -> Result<ToolConfig> {
    let mut config = ToolConfig::for_alpha(alpha)?;
    if let Some(n) = max_turns {
        config = config.with_max_turns(n);
    }
    if let Some(tools) = tools {
        config = config.with_tool_mask(parse_tool_mask(tools)?);
    }
    Ok(config)
}

fn load_templates(dir: Option<&PathBuf>) -> Result<PromptTemplates> {
    match dir {
        None => Ok(PromptTemplates::builtin()),
        Some(dir) => PromptTemplates::from_dir(dir)
            .with_context(|| format!("loading templates from {}", dir.display())),
    }
}

fn parse_alphas(s: &str) -> Result<Vec<u32>> {
    let alphas: Vec<u32> = s
        .split(',')
        .map(|a| a.trim().parse().with_context(|| format!("bad alpha {a:?}")))
        .collect::<Result<_>>()?;
    if alphas.is_empty() {
        bail!("--alphas must name at least one scale factor");
    }
    Ok(alphas)
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let tasks = harness::load_manifest(&args.manifest)
        .with_context(|| format!("loading {}", args.manifest.display()))?;
    let config = build_config(args.alpha, args.max_turns, args.tools.as_deref())?;
    let templates = load_templates(args.templates.as_ref())?;
    let factory = args.backend.build(&config)?;
    let options = RunOptions {
        mode: args.mode.to_run_mode(),
        out_dir: args.out.clone(),
        workers: args.workers,
        resume: !args.no_resume,
    };
    let report = run_benchmark(&tasks, &config, &templates, factory.as_ref(), &options)?;
    print!("{}", report.render_text());
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let tasks = harness::load_manifest(&args.manifest)
        .with_context(|| format!("loading {}", args.manifest.display()))?;
    let alphas = parse_alphas(&args.alphas)?;
    let base = build_config(alphas[0], args.max_turns, args.tools.as_deref())?;
    let templates = load_templates(args.templates.as_ref())?;
    let backend = args.backend.clone();
    let factory_for = move |config: &ToolConfig| -> Box<dyn BackendFactory> {
        backend
            .build(config)
            .expect("backend construction already validated for the first alpha")
    };
    // Validate backend construction once up front so a bad --backend fails
    // before any episodes run.
    args.backend.build(&base)?;
    let options = RunOptions {
        mode: RunMode::Agent,
        out_dir: args.out.clone(),
        workers: args.workers,
        resume: !args.no_resume,
    };
    let rows = sweep_alpha(&tasks, &alphas, &base, &templates, &factory_for, &options)?;
    print!("{}", harness::render_sweep_csv(&rows));
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let manifest = harness::write_synth_dataset(
        &args.out,
        args.tasks,
        args.seed,
        args.duration,
        args.scenes,
        args.needles,
    )?;
    println!("wrote {}", manifest.display());
    Ok(())
}

fn cmd_report(run_dir: &PathBuf) -> Result<()> {
    let report = read_run_dir(run_dir)
        .with_context(|| format!("reading run directory {}", run_dir.display()))?;
    print!("{}", report.render_text());
    Ok(())
}

fn cmd_templates(out: &PathBuf) -> Result<()> {
    let templates = PromptTemplates::builtin();
    templates
        .write_dir(out)
        .with_context(|| format!("writing templates to {}", out.display()))?;
    for (name, _) in templates.named() {
        println!("wrote {}", out.join(format!("{name}.txt")).display());
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Report { run_dir } => cmd_report(run_dir),
        Command::Templates { out } => cmd_templates(out),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_strings_parse() {
        assert!(matches!("agent".parse(), Ok(ModeArg::Agent)));
        assert!(matches!("single:384".parse(), Ok(ModeArg::Single { budget: 384 })));
        match "replay:runs/base".parse() {
            Ok(ModeArg::Replay { source }) => assert_eq!(source, PathBuf::from("runs/base")),
            other => panic!("unexpected {:?}", other.map(|_| ()).err()),
        }
        assert!("single:lots".parse::<ModeArg>().is_err());
        assert!("watch".parse::<ModeArg>().is_err());
    }

    #[test]
    fn backend_strings_parse() {
        assert!(matches!("http".parse(), Ok(BackendArg::Http)));
        assert!(matches!("oracle".parse(), Ok(BackendArg::Oracle)));
        assert!(matches!("scripted:replies.json".parse(), Ok(BackendArg::Scripted { .. })));
        assert!("llm".parse::<BackendArg>().is_err());
    }

    #[test]
    fn tool_masks_parse_and_reject_empty() {
        let mask = parse_tool_mask("skim, focus").unwrap();
        assert!(!mask.overview);
        assert!(mask.skim);
        assert!(mask.focus);
        assert!(parse_tool_mask("").is_err());
        assert!(parse_tool_mask("zoom").is_err());
    }

    #[test]
    fn alpha_lists_parse() {
        assert_eq!(parse_alphas("1,2, 4").unwrap(), vec![1, 2, 4]);
        assert!(parse_alphas("1,x").is_err());
    }

    #[test]
    fn cli_shape_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
