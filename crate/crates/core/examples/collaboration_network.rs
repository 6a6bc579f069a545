//! Co-participation network of home-region organisations, its
//! force-directed layout, and the strongest partners from elsewhere.

use std::collections::BTreeSet;

use s3monitor::collaboration_graph::{build_graph, layout_force, rank_external_partners};
use s3monitor::entity_resolution::{resolve, NameRecord, OverrideFile, ResolverConfig};
use s3monitor::fixture::{Fixture, FixtureConfig};
use s3monitor::ingest;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fx = Fixture::generate(&FixtureConfig::default());
    let eu = ingest::parse_eu_str(&fx.eu_projects_csv, &fx.eu_participants_csv, "p", "q")?;
    let reg = ingest::parse_regional_str(&fx.regional_csv, "r")?;
    let mut corpus = ingest::unify(eu.records, reg.records);
    let records: Vec<NameRecord> = corpus.participations.iter().map(NameRecord::from).collect();
    let res = resolve(&records, &OverrideFile::parse(&fx.overrides_csv)?, &ResolverConfig::default())?;
    res.assign(&mut corpus.participations);

    // Only EU-funded projects.
    let selected: BTreeSet<String> = corpus
        .projects
        .iter()
        .filter(|p| p.project_id.starts_with("EU:"))
        .map(|p| p.project_id.clone())
        .collect();
    let graph = build_graph(&selected, &corpus.participations, &res.organisations);
    println!(
        "{} projects: {} home organisations, {} links, {} invested",
        selected.len(),
        graph.nodes.len(),
        graph.edges.len(),
        graph.total_investment()
    );

    let mut nodes = graph.nodes.clone();
    nodes.sort_by(|a, b| b.investment.cmp(&a.investment));
    println!("\nlargest recipients");
    for n in nodes.iter().take(5) {
        println!("  {:>14}  {:>3} projects  {}", n.investment.to_string(), n.project_count, n.display_name);
    }

    let mut edges = graph.edges.clone();
    edges.sort_by(|a, b| b.weight.cmp(&a.weight));
    let name = |id: &str| graph.nodes.iter().find(|n| n.org_id == id).unwrap().display_name.clone();
    println!("\nstrongest links");
    for e in edges.iter().take(5) {
        println!("  {:>2}  {} / {}", e.weight, name(&e.org_a), name(&e.org_b));
    }

    println!("\nexternal partners");
    for p in rank_external_partners(&selected, &corpus.participations, &res.organisations, Some(5)) {
        println!("  {:>2}  {} ({}), linked to {} home organisations", p.shared_project_count, p.display_name, p.country, p.linked_home_orgs.len());
    }

    let layout = layout_force(&graph, 300, 7);
    let (xs, ys): (Vec<f64>, Vec<f64>) = layout.values().map(|[x, y]| (*x, *y)).unzip();
    let span = |v: &[f64]| v.iter().cloned().fold(f64::MIN, f64::max) - v.iter().cloned().fold(f64::MAX, f64::min);
    println!("\nlayout spans {:.2} x {:.2}", span(&xs), span(&ys));
    Ok(())
}
