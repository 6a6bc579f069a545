//! Dictionary tagging of Sustainable Development Goals with a token-level
//! Aho-Corasick automaton.

use std::collections::BTreeMap;

use s3monitor::fixture::{Fixture, FixtureConfig, SDG_VOCABULARY};
use s3monitor::ingest;
use s3monitor::sdg_tagger::{parse_vocabulary, tag_corpus};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let vocab = parse_vocabulary(SDG_VOCABULARY)?;
    println!("{} phrases over {} goals\n", vocab.len(), vocab.sdgs().len());

    let text = "A pilot on Renewable Energy storage for smart grids, \
                reducing greenhouse gas emissions and improving water quality; \
                renewable energy communities in rural areas.";
    for m in vocab.tag_text(text) {
        println!("SDG {:>2}  {:<28} x{} at {:?}", m.sdg, m.phrase, m.count, m.positions);
    }

    let fx = Fixture::generate(&FixtureConfig::default());
    let eu = ingest::parse_eu_str(&fx.eu_projects_csv, &fx.eu_participants_csv, "p", "q")?;
    let reg = ingest::parse_regional_str(&fx.regional_csv, "r")?;
    let corpus = ingest::unify(eu.records, reg.records);

    let tagged = tag_corpus(&corpus, &vocab);
    let mut per_goal: BTreeMap<u8, usize> = BTreeMap::new();
    let mut exact = 0;
    for p in &corpus.projects {
        let found: std::collections::BTreeSet<u8> = tagged.get(&p.project_id).into_iter().flatten().map(|m| m.sdg).collect();
        for g in &found {
            *per_goal.entry(*g).or_default() += 1;
        }
        exact += usize::from(found == fx.truth.sdgs[&p.project_id]);
    }
    println!("\nprojects per goal: {per_goal:?}");
    println!("{exact} of {} projects tagged exactly with their planted goals", corpus.projects.len());
    Ok(())
}
