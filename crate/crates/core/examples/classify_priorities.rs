//! Weak labels from programme and metadata rules train a one-vs-rest
//! logistic model; predictions are scored against two annotators.

use std::collections::BTreeSet;

use s3monitor::fixture::{priority_labels, Fixture, FixtureConfig};
use s3monitor::ingest;
use s3monitor::priority_classifier as pc;
use s3monitor::text_embedding::{embed_corpus, TfidfConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fx = Fixture::generate(&FixtureConfig::default());
    let eu = ingest::parse_eu_str(&fx.eu_projects_csv, &fx.eu_participants_csv, "p", "q")?;
    let reg = ingest::parse_regional_str(&fx.regional_csv, "r")?;
    let corpus = ingest::unify(eu.records, reg.records);
    let (_, emb) = embed_corpus(&corpus, &TfidfConfig::default(), 128, 42)?;

    let labels = priority_labels();
    let rules = pc::parse_rules(&fx.rules_csv, &labels, "priority_rules.csv")?;
    let weak = pc::weak_label(&corpus, &rules)?;
    println!("{} rules label {} of {} projects", rules.len(), weak.len(), corpus.projects.len());

    let model = pc::train(&emb, &weak, &labels, &pc::TrainConfig::default())?;
    for d in &model.diagnostics {
        println!(
            "  {:<26} +{:<3} -{:<3} {:>4} iterations, |grad| {:.1e}",
            d.label, d.positives, d.negatives, d.iterations, d.grad_norm
        );
    }

    let predictions = pc::predict(&model, &emb);
    let predicted = pc::label_sets(&predictions);
    let gold_a = pc::parse_gold(&fx.gold_a_csv)?;
    let gold_b = pc::parse_gold(&fx.gold_b_csv)?;
    let report = pc::evaluate(&predicted, &gold_a, Some(&gold_b), &labels)?;

    println!("\n{:<26} {:>9} {:>7} {:>6}", "label", "precision", "recall", "F1");
    for m in &report.per_label {
        println!("{:<26} {:>9.3} {:>7.3} {:>6.3}", m.label, m.precision, m.recall, m.f1);
    }
    println!("macro F1 {:.3} over {} projects", report.macro_f1, report.n_eval);
    if let Some(k) = report.annotator_agreement {
        println!("annotator kappa {k:.3}");
    }

    let id = &corpus.projects[1].project_id;
    let assigned: BTreeSet<&String> = predictions[id].keys().collect();
    println!("\n{id}: {assigned:?} (gold {:?})", gold_a.get(id));
    Ok(())
}
