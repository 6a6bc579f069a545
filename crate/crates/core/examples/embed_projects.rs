//! TF-IDF plus a seeded Gaussian projection, then nearest neighbours by
//! cosine similarity.

use s3monitor::fixture::{Fixture, FixtureConfig};
use s3monitor::ingest;
use s3monitor::text_embedding::{cosine, embed_corpus, TfidfConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fx = Fixture::generate(&FixtureConfig::default());
    let eu = ingest::parse_eu_str(&fx.eu_projects_csv, &fx.eu_participants_csv, "p", "q")?;
    let reg = ingest::parse_regional_str(&fx.regional_csv, "r")?;
    let corpus = ingest::unify(eu.records, reg.records);

    let (fit, emb) = embed_corpus(&corpus, &TfidfConfig::default(), 128, 42)?;
    println!("{} documents, {} terms, {}-d vectors", emb.len(), fit.vocabulary.len(), emb.dim);

    let query = &corpus.projects[0];
    let q = emb.get(&query.project_id).unwrap();
    let mut scored: Vec<(f64, &str)> = emb
        .ids
        .iter()
        .zip(&emb.vectors)
        .filter(|(id, _)| **id != query.project_id)
        .map(|(id, v)| (cosine(q, v), id.as_str()))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));

    println!("\nnearest to {}: {}", query.project_id, query.title);
    for (sim, id) in scored.iter().take(5) {
        let p = corpus.project(id).unwrap();
        println!("  {sim:.3}  {id:<12} {}", p.title);
    }
    let themes = |id: &str| fx.truth.themes[id];
    let same = scored.iter().take(20).filter(|(_, id)| themes(id) == themes(&query.project_id)).count();
    println!("{same} of the 20 nearest share its theme");
    Ok(())
}
