//! ingest, enrich and build over the synthetic fixture, then a look at the
//! run manifest.
//!
//! cargo run --release --example full_pipeline -- ./demo

use std::path::PathBuf;

use s3monitor::fixture::{Fixture, FixtureConfig};
use s3monitor::pipeline::{Pipeline, RunManifest, MANIFEST_FILE};

fn main() -> anyhow::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "demo".into()));
    let paths = Fixture::generate(&FixtureConfig::default()).write(&dir)?;

    let pipeline = Pipeline::from_path(&paths.config)?;
    let started = std::time::Instant::now();
    let snapshot = pipeline.all()?;
    println!(
        "{} projects, {} organisations, {} topics in {:.1?}",
        snapshot.projects.len(),
        snapshot.organisations.len(),
        snapshot.topics.len(),
        started.elapsed()
    );

    let manifest = RunManifest::load(&pipeline.run_dir.join(MANIFEST_FILE))?;
    println!("config {}", &manifest.config_hash[..16]);
    for (stage, record) in &manifest.stages {
        println!("\n{} ({} ms)", stage.as_str(), manifest.timings_ms.get(stage).copied().unwrap_or(0));
        for (k, v) in &record.counts {
            println!("  {k:<20} {v}");
        }
        for (path, sha) in &record.artifacts {
            println!("  {path:<36} {}", &sha[..12]);
        }
    }
    println!("\nsnapshot: {}", pipeline.run_dir.join("build/snapshot.json").display());
    Ok(())
}
