//! Exact t-SNE of project embeddings to a 2-D map, with the KL trace and
//! neighbourhood trustworthiness of the result.

use s3monitor::fixture::{Fixture, FixtureConfig};
use s3monitor::ingest;
use s3monitor::semantic_map::{trustworthiness, tsne, TsneConfig};
use s3monitor::text_embedding::{embed_corpus, TfidfConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fx = Fixture::generate(&FixtureConfig::default());
    let eu = ingest::parse_eu_str(&fx.eu_projects_csv, &fx.eu_participants_csv, "p", "q")?;
    let reg = ingest::parse_regional_str(&fx.regional_csv, "r")?;
    let corpus = ingest::unify(eu.records, reg.records);
    let (_, emb) = embed_corpus(&corpus, &TfidfConfig::default(), 128, 42)?;

    let started = std::time::Instant::now();
    let layout = tsne(&emb, &TsneConfig::default())?;
    println!("{} points in {:.1?}, perplexity {}", layout.coords.len(), started.elapsed(), layout.perplexity_used);
    for (iter, kl) in &layout.kl_trace {
        println!("  iter {iter:>4}  KL {kl:.4}");
    }

    let low: Vec<[f64; 2]> = emb.ids.iter().map(|id| layout.coords[id]).collect();
    println!("trustworthiness (k=10): {:.4}", trustworthiness(&emb.vectors, &low, 10));

    // Generator themes stand in for topic ids here.
    let mut out = Vec::new();
    layout.write_csv(&fx.truth.themes, &mut out)?;
    let csv = String::from_utf8(out)?;
    for line in csv.lines().take(4) {
        println!("{line}");
    }
    Ok(())
}
