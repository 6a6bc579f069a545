use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use s3monitor::fixture::{Fixture, FixtureConfig};
use s3monitor::pipeline::{Pipeline, SNAPSHOT_FILE};

#[derive(Parser)]
#[command(name = "s3monitor", version, about = "Research and innovation funding monitor")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse the source exports into the canonical tables.
    Ingest(ConfigArg),
    /// Resolve organisations, embed, classify, cluster and tag.
    Enrich(ConfigArg),
    /// Lay out the map and network and write the snapshot.
    Build(ConfigArg),
    /// Serve the snapshot over HTTP.
    Serve {
        #[command(flatten)]
        config: ConfigArg,
        /// Overrides `server.port`.
        #[arg(long)]
        port: Option<u16>,
    },
    /// ingest, enrich and build.
    All(ConfigArg),
    /// Write a synthetic benchmark corpus and its config.
    Fixture {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = FixtureConfig::default().seed)]
        seed: u64,
    },
}

#[derive(clap::Args)]
struct ConfigArg {
    #[arg(long, short)]
    config: PathBuf,
}

fn pipeline(arg: &ConfigArg) -> Result<Pipeline, ExitCode> {
    Pipeline::from_path(&arg.config).map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::from(2)
    })
}

fn run(cli: Cli) -> Result<(), ExitCode> {
    let fail = |e: &dyn std::fmt::Display| {
        eprintln!("error: {e}");
        ExitCode::from(1)
    };
    match cli.command {
        Command::Ingest(c) => pipeline(&c)?.ingest().map(drop).map_err(|e| fail(&e)),
        Command::Enrich(c) => pipeline(&c)?.enrich().map(drop).map_err(|e| fail(&e)),
        Command::Build(c) => pipeline(&c)?.build().map(drop).map_err(|e| fail(&e)),
        Command::All(c) => pipeline(&c)?.all().map(drop).map_err(|e| fail(&e)),
        Command::Serve { config, port } => {
            let p = pipeline(&config)?;
            let server = &p.cfg.config.server;
            let addr = SocketAddr::from(([0, 0, 0, 0], port.unwrap_or(server.port)));
            let reload = (server.reload_secs > 0).then(|| Duration::from_secs(server.reload_secs));
            let rt = tokio::runtime::Runtime::new().map_err(|e| fail(&e))?;
            rt.block_on(s3monitor::api::serve(
                p.run_dir.join(SNAPSHOT_FILE),
                addr,
                &server.cors_origins,
                reload,
            ))
            .map_err(|e| fail(&e))
        }
        Command::Fixture { out, seed } => {
            let fx = Fixture::generate(&FixtureConfig {
                seed,
                ..FixtureConfig::default()
            });
            let paths = fx.write(&out).map_err(|e| fail(&e))?;
            println!("{}", paths.config.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(code) => code,
    }
}
