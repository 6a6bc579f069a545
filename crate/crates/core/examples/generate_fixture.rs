//! Writes the synthetic benchmark corpus and a ready-to-run config.
//!
//! cargo run --example generate_fixture -- ./fixture [seed]

use s3monitor::fixture::{Fixture, FixtureConfig};

fn main() -> std::io::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "fixture".into());
    let seed = args.next().map(|s| s.parse().expect("seed must be an integer"));
    let cfg = FixtureConfig {
        seed: seed.unwrap_or(FixtureConfig::default().seed),
        ..FixtureConfig::default()
    };
    let fx = Fixture::generate(&cfg);
    let paths = fx.write(std::path::Path::new(&out))?;

    let generic = fx.truth.areas.values().filter(|a| a.is_empty()).count();
    let multi = fx.truth.areas.values().filter(|a| a.len() > 1).count();
    let with_sdg = fx.truth.sdgs.values().filter(|s| !s.is_empty()).count();
    let aliased = fx.truth.alias_groups.iter().filter(|g| g.names.len() > 1).count();
    println!("projects          {}", fx.truth.areas.len());
    println!("  no area         {generic}");
    println!("  several areas   {multi}");
    println!("  SDG phrases     {with_sdg}");
    println!("organisations     {}", fx.truth.alias_groups.len());
    println!("  with aliases    {aliased}");
    println!("config            {}", paths.config.display());
    Ok(())
}
