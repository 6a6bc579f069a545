//! Combined facet and keyword filters over a built snapshot, with the
//! aggregates and exports the dashboard reads.

use s3monitor::fixture::{Fixture, FixtureConfig};
use s3monitor::pipeline::Pipeline;
use s3monitor::query_engine::{ExportView, FilterSpec, SearchIndex};

fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let paths = Fixture::generate(&FixtureConfig::default()).write(dir.path())?;
    let index = SearchIndex::build(Pipeline::from_path(&paths.config)?.all()?);

    let facets = index.facet_values();
    println!("areas: {:?}", facets.areas);
    println!("types: {:?}\n", facets.types);

    for q in [
        "",
        "area=HEALTH",
        "area=HEALTH&type=company",
        "area=HEALTH&type=company&year=2019&year=2020&year=2021",
        "q=electrolysers&instrument=RIA",
        "sdg=7&province=Barcelona",
        "participant=barcelona&topic=1",
    ] {
        let filter = FilterSpec::from_query(q)?;
        println!("{:>4}  {}", index.query(&filter).len(), if q.is_empty() { "(everything)" } else { q });
    }

    let filter = FilterSpec::from_query("area=ENERGY_RESOURCES")?;
    let stats = index.stats(&filter);
    println!("\nENERGY_RESOURCES: {} projects, {} participants, {}", stats.n_projects, stats.n_participants, stats.total_investment);
    println!("by year {:?}", stats.by_year);
    for p in stats.top_participants.iter().take(3) {
        println!("  {:>14}  {}", p.investment.to_string(), p.display_name);
    }

    let csv = index.export_csv(&filter, ExportView::Projects);
    let text = String::from_utf8(csv)?;
    println!("\nexport: {} rows", text.lines().count() - 1);
    println!("{}", text.lines().next().unwrap_or_default());

    // Filters round-trip through the URL form the API accepts.
    assert_eq!(FilterSpec::from_query(&filter.to_query())?, filter);
    Ok(())
}
