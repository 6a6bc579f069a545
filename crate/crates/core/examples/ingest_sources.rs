//! Parses the EU-style and regional-style exports into one canonical corpus
//! and shows how malformed rows are reported instead of aborting the run.

use s3monitor::fixture::{Fixture, FixtureConfig};
use s3monitor::ingest;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fx = Fixture::generate(&FixtureConfig::default());

    // An unparseable amount (which also orphans that project's participants)
    // and a participant of a project that never existed.
    let mut projects = fx.eu_projects_csv.clone();
    let line = projects.lines().nth(3).unwrap().to_string();
    let mut tail: Vec<&str> = line.rsplitn(4, ',').collect();
    tail[2] = "n/a";
    tail.reverse();
    projects = projects.replace(&line, &tail.join(","));
    let participants = format!("{}999999,Ghost Org,FR,participant,10.00,OTH\n", fx.eu_participants_csv);

    let eu = ingest::parse_eu_str(&projects, &participants, "eu_projects.csv", "eu_participants.csv")?;
    let regional = ingest::parse_regional_str(&fx.regional_csv, "regional_projects.csv")?;
    let mut report = eu.report;
    report.merge(regional.report);
    let corpus = ingest::unify(eu.records, regional.records);

    println!("rows read: {:?}", report.rows_read);
    println!("accepted:  {:?}", report.accepted);
    for r in &report.rejects {
        println!("reject {}:{}: {}", r.file, r.line, r.error);
    }
    println!(
        "{} projects, {} participations",
        corpus.projects.len(),
        corpus.participations.len()
    );

    let p = &corpus.projects[0];
    println!("\n{} [{}] {}", p.project_id, p.programme, p.title);
    println!("  {}-{}  funder share {} of {}", p.start_year, p.end_year, p.funder_contribution, p.total_cost);
    for part in corpus.participations_of(&p.project_id) {
        println!("  {:<12} {:<45} {} {}", part.role.as_str(), part.raw_org_name, part.country, part.contribution);
    }

    let (a, b) = corpus.canonical_bytes();
    let back = ingest::Corpus::from_canonical_str(std::str::from_utf8(&a)?, std::str::from_utf8(&b)?)?;
    println!("\ncanonical round trip exact: {}", back == corpus);
    Ok(())
}
