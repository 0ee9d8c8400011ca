use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::Parser;

use spurlab::expcli::accept::{run_accept, AcceptOptions};
use spurlab::expcli::{run, ExperimentSpec, Preset};

/// Synthetic spurious-correlation experiments.
#[derive(Debug, Parser)]
#[command(name = "spurlab", version)]
struct Cli {
    /// A preset (fig1, fig2, fig3, fig4, fig6, thm1 or a full name such as
    /// fig1_toy), or one of accept, generate, train, influence.
    command: String,
    /// Suite for `accept`: all, a module name, or a criterion number.
    suite: Option<String>,
    /// JSON file mirroring the preset's configuration keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key (dotted path), e.g. data.n=200.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: runs/<preset>).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn accept(cli: &Cli) -> anyhow::Result<bool> {
    if cli.config.is_some() || cli.seed.is_some() {
        bail!("accept runs fixed default seeds and takes no --config or --seed");
    }
    let mut opts = AcceptOptions::default();
    for kv in &cli.set {
        match kv.split_once('=') {
            Some(("lr", v)) => opts.lr = Some(v.parse().with_context(|| format!("bad lr '{v}'"))?),
            _ => bail!("accept only understands --set lr=<value>, got '{kv}'"),
        }
    }
    let suite = cli.suite.as_deref().unwrap_or("all");
    let results = run_accept(suite, &opts, |r| println!("{}", r.line()))?;
    let failed = results.iter().filter(|r| !r.pass).count();
    println!("{} passed, {failed} failed", results.len() - failed);
    Ok(failed == 0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = if cli.command == "accept" {
        accept(&cli)
    } else {
        (|| {
            if cli.suite.is_some() {
                bail!("unexpected extra argument for '{}'", cli.command);
            }
            let preset = Preset::from_name(&cli.command)?;
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(preset.name()));
            let spec = ExperimentSpec {
                preset,
                config_file: cli.config.clone(),
                overrides: cli.set.clone(),
                seed: cli.seed,
                out_dir: out.clone(),
            };
            let (manifest, summary) = run(&spec)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            println!("wrote {} files to {}", manifest.files.len() + 1, out.display());
            Ok(true)
        })()
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
