use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use fas_portsel::bench::{self, ExperimentSpec};
use fas_portsel::channel::{generate_batch, read_fchan, write_fchan, ArrayConfig, ChannelBatch, ScenarioConfig};
use fas_portsel::eoh::{self, EvolutionConfig, GuestRunner, ProviderConfig};
use fas_portsel::sandbox::{SandboxConfig, SandboxRunner};
use fas_portsel::{Error, Result};

/// Port-selection experiments for multiuser fluid-antenna downlinks.
#[derive(Debug, Parser)]
#[command(name = "fasbench", version)]
struct Cli {
    /// Replace every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for realization-level parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, short, global = true)]
    verbose: bool,
    /// Write zero for every wall-clock field so outputs are byte-reproducible.
    #[arg(long, global = true)]
    no_timing: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Channel-batch files.
    Channels {
        #[command(subcommand)]
        action: ChannelsAction,
    },
    /// Run an experiment sweep and write the result table.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Use these channels instead of generating them.
        #[arg(long)]
        channels: Option<PathBuf>,
    },
    /// Evolve heuristics and write the evaluation log.
    Evolve {
        #[arg(long)]
        config: PathBuf,
        /// Entry of the config's `providers` map (`mock` works without one).
        #[arg(long)]
        provider: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize a result table or an evolution log.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum)]
        kind: ReportKind,
    },
}

#[derive(Debug, Subcommand)]
enum ChannelsAction {
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ReportKind {
    Table,
    Convergence,
}

/// Channel-generation settings; extra keys are ignored so an experiment
/// file can be reused.
#[derive(Debug, Deserialize)]
struct ChannelsSpec {
    array: ArrayConfig,
    scenario: ScenarioConfig,
    realizations: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvolveSpec {
    array: ArrayConfig,
    scenario: ScenarioConfig,
    evolution: EvolutionConfig,
    #[serde(default)]
    providers: BTreeMap<String, ProviderConfig>,
    #[serde(default)]
    sandbox: Option<SandboxConfig>,
    #[serde(default)]
    channels: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct EvolveSummary<'a> {
    best_id: &'a str,
    best_idea: &'a str,
    best_fitness: Option<f64>,
    evaluations: usize,
    parse_failures: usize,
    partial: bool,
    generations: &'a [eoh::GenerationSummary],
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn sidecar(out: &Path) -> PathBuf {
    let stem = out.file_stem().unwrap_or_default().to_string_lossy();
    out.with_file_name(format!("{stem}.realizations.csv"))
}

fn channels_generate(cli: &Cli, config: &Path, out: &Path) -> Result<()> {
    let mut spec: ChannelsSpec = read_json(config)?;
    if let Some(s) = cli.seed {
        spec.scenario.master_seed = s;
    }
    let batch = generate_batch(&spec.array, &spec.scenario, spec.realizations)?;
    write_fchan(&batch, out)?;
    if cli.verbose {
        eprintln!("wrote {} realizations to {}", batch.len(), out.display());
    }
    Ok(())
}

fn run(cli: &Cli, config: &Path, out: &Path, channels: Option<&Path>) -> Result<()> {
    let mut spec = ExperimentSpec::from_json(
        &std::fs::read(config).map_err(|e| Error::Config(format!("{}: {e}", config.display())))?,
    )?;
    if let Some(s) = cli.seed {
        spec.seed = s;
        spec.scenario.master_seed = s;
    }
    if let Some(c) = channels {
        spec.channels = Some(c.to_path_buf());
    }
    if cli.no_timing {
        spec.record_timing = false;
    }
    let plan = spec.plan()?;
    if cli.verbose {
        eprintln!(
            "{} algorithms x {} sweep values x {} realizations",
            plan.algorithms.len(),
            plan.sweep.values.len(),
            spec.realizations
        );
    }
    let table = plan.run(Default::default())?;
    bench::emit_csv(&table, out)?;
    bench::emit_realizations_csv(&table, &sidecar(out))?;
    print!("{}", bench::render_table(&table.rows));
    Ok(())
}

fn load_evolve_batch(spec: &EvolveSpec) -> Result<ChannelBatch> {
    match &spec.channels {
        Some(path) => read_fchan(path),
        None => generate_batch(&spec.array, &spec.scenario, spec.evolution.batch_b),
    }
}

fn evolve(cli: &Cli, config: &Path, provider: &str, out: &Path) -> Result<()> {
    let mut spec: EvolveSpec = read_json(config)?;
    if let Some(s) = cli.seed {
        spec.evolution.seed = s;
        spec.scenario.master_seed = s;
    }
    if cli.no_timing {
        spec.evolution.record_timing = false;
    }
    let provider_cfg = match spec.providers.get(provider) {
        Some(p) => p.clone(),
        None if provider == "mock" => ProviderConfig::Mock { schedule: Vec::new() },
        None => return Err(Error::Config(format!("no provider named `{provider}` in the config"))),
    };
    let mut provider = provider_cfg.build(spec.evolution.task)?;
    let runner = spec.sandbox.as_ref().map(SandboxRunner::from_config).transpose()?;
    let batch = load_evolve_batch(&spec)?;
    let outcome = eoh::evolve(
        &spec.evolution,
        &batch,
        provider.as_mut(),
        runner.as_ref().map(|r| r as &dyn GuestRunner),
    )?;
    eoh::write_log(&outcome.records, out)?;

    let summary = EvolveSummary {
        best_id: &outcome.best.id,
        best_idea: &outcome.best.idea_text,
        best_fitness: outcome.best.fitness,
        evaluations: outcome.evaluations,
        parse_failures: outcome.parse_failures,
        partial: outcome.partial,
        generations: &outcome.generations,
    };
    println!("{}", serde_json::to_string_pretty(&summary)?);
    if outcome.partial {
        return Err(Error::Provider("provider failed; the log holds a partial run".into()));
    }
    Ok(())
}

fn report(input: &Path, kind: ReportKind) -> Result<()> {
    match kind {
        ReportKind::Table => {
            let text =
                std::fs::read_to_string(input).map_err(|e| Error::Config(format!("{}: {e}", input.display())))?;
            print!("{}", bench::render_table(&bench::parse_csv(&text)?));
        }
        ReportKind::Convergence => {
            let records = eoh::read_log(input)?;
            print!("{}", bench::convergence_csv(&bench::convergence_from_log(&records)?));
        }
    }
    Ok(())
}

fn configure_threads(threads: Option<usize>) -> Result<()> {
    let Some(n) = threads else { return Ok(()) };
    if n == 0 {
        return Err(Error::Config("--threads must be at least 1".into()));
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))?;
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    configure_threads(cli.threads)?;
    match &cli.command {
        Command::Channels {
            action: ChannelsAction::Generate { config, out },
        } => channels_generate(cli, config, out),
        Command::Run { config, out, channels } => run(cli, config, out, channels.as_deref()),
        Command::Evolve { config, provider, out } => evolve(cli, config, provider, out),
        Command::Report { input, kind } => report(input, *kind),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
