//! `pathgibbs` command-line driver.
//!
//! Exit codes: 0 when every assertion passes (inconclusive counts as
//! passing), 2 when an assertion fails, 1 on usage, config or
//! precondition errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use pathgibbs::config::Config;
use pathgibbs::experiments::{run_and_write, run_spectral, RunContext, RunManifest, Study, StudySpec};

/// Example configs shipped with the binary, addressable by name.
const SHIPPED: &[(&str, &str)] = &[
    ("spectral_harmonic", include_str!("../configs/spectral_harmonic.cfg")),
    ("pphi1_harmonic", include_str!("../configs/pphi1_harmonic.cfg")),
    ("tightness", include_str!("../configs/tightness.cfg")),
    ("phase_transition", include_str!("../configs/phase_transition.cfg")),
    ("clt_diffusion", include_str!("../configs/clt_diffusion.cfg")),
    ("polaron_energy", include_str!("../configs/polaron_energy.cfg")),
    ("cluster_identity", include_str!("../configs/cluster_identity.cfg")),
];

#[derive(Parser)]
#[command(name = "pathgibbs", version, about = "Gibbs measures on Brownian paths: spectral oracle, path MCMC and cluster expansion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ground state and low spectrum of the configured Hamiltonian.
    Spectral(RunArgs),
    /// Free-process validation or the tightness study.
    Sample(RunArgs),
    /// Pinned magnetization over window lengths.
    Phase(RunArgs),
    /// Effective diffusion constant over a coupling ladder.
    Clt(RunArgs),
    /// Polaron ground-state energy over a coupling ladder.
    Polaron(RunArgs),
    /// Cluster expansion against direct enumeration.
    Cluster(RunArgs),
    /// Parse and validate a config without running it.
    ValidateConfig(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Config file, shipped config name, or a run's manifest.json.
    #[arg(long)]
    config: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output root; PATHGIBBS_OUT takes precedence.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// One worker, fixed reduction order, no timestamps in the manifest.
    #[arg(long)]
    deterministic: bool,
}

/// A resolved config and, when read from a manifest, that run's seed.
struct Loaded {
    config: Config,
    manifest_seed: Option<u64>,
}

fn load(arg: Option<&str>, default_variant: &str) -> Result<Loaded> {
    let Some(arg) = arg else {
        return Ok(Loaded {
            config: Config::for_variant(default_variant)?,
            manifest_seed: None,
        });
    };
    let path = Path::new(arg);
    if path.is_file() {
        if path.extension().is_some_and(|e| e == "json") {
            let m = RunManifest::read(path).with_context(|| format!("reading manifest {}", path.display()))?;
            return Ok(Loaded {
                config: m.resolved_config()?,
                manifest_seed: Some(m.seed),
            });
        }
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        return Ok(Loaded {
            config: Config::parse(&text)?,
            manifest_seed: None,
        });
    }
    let (_, text) = SHIPPED.iter().find(|(name, _)| *name == arg).ok_or_else(|| {
        let names: Vec<&str> = SHIPPED.iter().map(|(n, _)| *n).collect();
        anyhow!("no config file `{arg}` and no shipped config of that name (shipped: {})", names.join(", "))
    })?;
    Ok(Loaded {
        config: Config::parse(text)?,
        manifest_seed: None,
    })
}

fn out_root(args: &RunArgs, config: &Config) -> PathBuf {
    match std::env::var_os("PATHGIBBS_OUT") {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => args.out.clone().unwrap_or_else(|| config.out_dir()),
    }
}

fn context(args: &RunArgs, config: &Config, manifest_seed: Option<u64>) -> Result<RunContext> {
    let seed = args
        .seed
        .or(config.sampler.seed)
        .or(manifest_seed)
        .ok_or_else(|| anyhow!("no seed: pass --seed or set sampler.seed"))?;
    Ok(RunContext::new(seed, args.workers, args.deterministic))
}

/// Studies a subcommand may run; the first is its default.
fn studies(command: &Command) -> &'static [Study] {
    match command {
        Command::Sample(_) => &[Study::Pphi1Validation, Study::Tightness],
        Command::Phase(_) => &[Study::PhaseTransition],
        Command::Clt(_) => &[Study::CltDiffusion],
        Command::Polaron(_) => &[Study::PolaronEnergy],
        Command::Cluster(_) => &[Study::ClusterIdentity],
        Command::Spectral(_) | Command::ValidateConfig(_) => &Study::ALL,
    }
}

fn report(manifest: &RunManifest, dir: &Path) -> ExitCode {
    for a in &manifest.assertions {
        println!("{}", a.summary_line());
    }
    println!("wrote {}", dir.join(&manifest.id).display());
    if manifest.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let allowed = studies(&cli.command);
    let (Command::Spectral(args)
    | Command::Sample(args)
    | Command::Phase(args)
    | Command::Clt(args)
    | Command::Polaron(args)
    | Command::Cluster(args)
    | Command::ValidateConfig(args)) = &cli.command;
    let loaded = load(args.config.as_deref(), allowed[0].name())?;
    match &cli.command {
        Command::ValidateConfig(_) => {
            let spec = StudySpec::new(loaded.config)?;
            println!("ok: {} ({})", spec.study.name(), spec.config.experiment_id());
            Ok(ExitCode::SUCCESS)
        }
        Command::Spectral(_) => {
            let ctx = context(args, &loaded.config, loaded.manifest_seed)?;
            let root = out_root(args, &loaded.config);
            let manifest = run_spectral(&loaded.config, &ctx, &root)?;
            Ok(report(&manifest, &root))
        }
        _ => {
            let spec = StudySpec::new(loaded.config)?;
            if !allowed.contains(&spec.study) {
                let names: Vec<&str> = allowed.iter().map(|s| s.name()).collect();
                bail!(
                    "study.variant: `{}` is not run by this subcommand (expected {})",
                    spec.study.name(),
                    names.join(" or ")
                );
            }
            let ctx = context(args, &spec.config, loaded.manifest_seed)?;
            let root = out_root(args, &spec.config);
            let manifest = run_and_write(&spec, &ctx, &root)?;
            Ok(report(&manifest, &root))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
