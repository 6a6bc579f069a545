//! k-means topics over project embeddings, a sweep over k, and topic names
//! from the highest-weighted terms of each cluster.

use s3monitor::fixture::{Fixture, FixtureConfig};
use s3monitor::ingest;
use s3monitor::text_embedding::{embed_corpus, TfidfConfig};
use s3monitor::topic_model::{adjusted_rand_index, kmeans, name_topics, parse_overrides, sweep_k, TopicModelConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fx = Fixture::generate(&FixtureConfig::default());
    let eu = ingest::parse_eu_str(&fx.eu_projects_csv, &fx.eu_participants_csv, "p", "q")?;
    let reg = ingest::parse_regional_str(&fx.regional_csv, "r")?;
    let corpus = ingest::unify(eu.records, reg.records);
    let (fit, emb) = embed_corpus(&corpus, &TfidfConfig::default(), 128, 42)?;

    let base = TopicModelConfig::new(12, 42);
    println!("{:>3} {:>10} {:>10}", "k", "inertia", "silhouette");
    for row in sweep_k(&emb.vectors, [6, 9, 12, 15, 18], &base) {
        println!("{:>3} {:>10.3} {:>10.3}", row.k, row.inertia, row.silhouette);
    }

    let (mut topics, clustering) = kmeans(&emb, &base)?;
    name_topics(&mut topics, &fit, &parse_overrides(&fx.topic_labels_csv)?)?;
    println!("\nk = 12, inertia {:.3} after {} iterations", clustering.inertia, clustering.iterations);
    for t in &topics {
        let terms: Vec<&str> = t.top_terms.iter().take(4).map(|(w, _)| w.as_str()).collect();
        let mark = if t.manual_label { "*" } else { " " };
        println!("{:>2}{mark} {:<40} {:>3}  {}", t.topic_id, t.label, t.member_ids.len(), terms.join(" "));
    }

    // The generator draws every project from one of three broad themes.
    let truth: Vec<usize> = emb.ids.iter().map(|id| fx.truth.themes[id]).collect();
    let (_, coarse) = kmeans(&emb, &TopicModelConfig::new(3, 42))?;
    println!("\nk = 3 against generator themes: ARI {:.3}", adjusted_rand_index(&coarse.assignments, &truth));
    Ok(())
}
