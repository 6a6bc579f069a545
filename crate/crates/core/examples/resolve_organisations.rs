//! Groups raw participant names into organisations and prints the alias
//! groups and the merge decisions behind them.

use std::collections::BTreeMap;

use s3monitor::entity_resolution::{
    resolve, NameRecord, Outcome, OverrideFile, ResolutionDecision, ResolverConfig,
};
use s3monitor::fixture::{Fixture, FixtureConfig};
use s3monitor::ingest;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fx = Fixture::generate(&FixtureConfig::default());
    let eu = ingest::parse_eu_str(&fx.eu_projects_csv, &fx.eu_participants_csv, "p", "q")?;
    let reg = ingest::parse_regional_str(&fx.regional_csv, "r")?;
    let corpus = ingest::unify(eu.records, reg.records);

    let overrides = OverrideFile::parse(&fx.overrides_csv)?;
    let records: Vec<NameRecord> = corpus.participations.iter().map(NameRecord::from).collect();
    let res = resolve(&records, &overrides, &ResolverConfig::default())?;

    let mut outcomes: BTreeMap<&str, usize> = BTreeMap::new();
    for d in &res.decisions {
        *outcomes.entry(d.outcome.as_str()).or_default() += 1;
    }
    println!("{} raw names → {} organisations", res.alias_keys().count(), res.organisations.len());
    println!("decisions: {outcomes:?}\n");

    for o in res.organisations.iter().filter(|o| o.aliases.len() > 2).take(8) {
        println!("{} {} ({}, {}{})", o.org_id, o.display_name, o.org_type, o.country, if o.is_home_region { ", home" } else { "" });
        for a in &o.aliases {
            println!("    {a}");
        }
    }

    // Forced merges, and pairs kept apart despite scoring above the threshold.
    println!("\noverride decisions:");
    let forced = |d: &&ResolutionDecision| {
        d.outcome == Outcome::MergedOverride
            || (d.outcome == Outcome::Distinct && d.score >= d.threshold_used)
    };
    for d in res.decisions.iter().filter(forced) {
        println!("  {:?} / {:?}  score {:.4}  {}", d.raw_name_a, d.raw_name_b, d.score, d.outcome.as_str());
    }
    Ok(())
}
