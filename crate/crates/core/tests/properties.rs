mod common;

use std::collections::BTreeSet;
use std::sync::OnceLock;

use proptest::prelude::*;
use s3monitor::entity_resolution::{jaro_winkler, normalize_name, resolve, NameRecord, OrgType, OverrideFile, ResolverConfig};
use s3monitor::fixture::{Fixture, FixtureConfig, SDG_VOCABULARY};
use s3monitor::money::Eur;
use s3monitor::query_engine::{FilterSpec, SearchIndex, Snapshot};
use s3monitor::sdg_tagger::{parse_vocabulary, SdgVocabulary};
use s3monitor::semantic_map::{joint_probabilities, perplexity_calibration, squared_distances};
use s3monitor::text_embedding::{cosine, l2_normalize};
use s3monitor::topic_model::{kmeans_points, TopicModelConfig};

fn snapshot() -> &'static (Snapshot, SearchIndex) {
    static S: OnceLock<(Snapshot, SearchIndex)> = OnceLock::new();
    S.get_or_init(|| {
        let s = common::fixture_snapshot();
        let index = SearchIndex::build(s.clone());
        (s, index)
    })
}

fn vocab() -> &'static SdgVocabulary {
    static V: OnceLock<SdgVocabulary> = OnceLock::new();
    V.get_or_init(|| parse_vocabulary(SDG_VOCABULARY).unwrap())
}

fn name_records() -> &'static Vec<NameRecord> {
    static R: OnceLock<Vec<NameRecord>> = OnceLock::new();
    R.get_or_init(|| {
        let fx = Fixture::generate(&FixtureConfig::default());
        let mut seen = BTreeSet::new();
        fx.truth
            .alias_groups
            .iter()
            .flat_map(|g| g.names.iter().map(move |n| (g.country.clone(), n.clone())))
            .filter(|k| seen.insert(k.clone()))
            .map(|(c, n)| NameRecord::new(&n, &c))
            .collect()
    })
}

fn org_type() -> impl Strategy<Value = OrgType> {
    prop_oneof![
        Just(OrgType::University),
        Just(OrgType::ResearchCentre),
        Just(OrgType::Company),
        Just(OrgType::PublicAdmin),
        Just(OrgType::Nonprofit),
        Just(OrgType::Other),
    ]
}

prop_compose! {
    fn filter_spec()(
        keyword_terms in prop::collection::vec("[a-z]{1,8}( [a-z]{1,6})?", 0..3),
        participant_name in prop::option::of("[A-Za-z]{1,6}( [a-z&]{1,5})?"),
        institution_types in prop::collection::btree_set(org_type(), 0..3),
        years in prop::collection::btree_set(1990i32..2040, 0..4),
        provinces in prop::collection::btree_set("[A-Z][a-zà]{2,8}", 0..3),
        instruments in prop::collection::btree_set("[A-Z]{2,4}", 0..3),
        programmes in prop::collection::btree_set("[A-Z0-9]{2,5}-[A-Z0-9]{1,4}", 0..3),
        priority_areas in prop::collection::btree_set("[A-Z_]{3,12}", 0..3),
        topics in prop::collection::btree_set(0usize..30, 0..3),
        sdgs in prop::collection::btree_set(1u8..=17, 0..4),
    ) -> FilterSpec {
        FilterSpec {
            keyword_terms, participant_name, institution_types, years, provinces,
            instruments, programmes, priority_areas, topics, sdgs,
        }
    }
}

proptest! {
    #[test]
    fn money_round_trips_through_text(cents in 0i64..10_000_000_000_000) {
        let e = Eur::from_cents(cents);
        prop_assert_eq!(e.to_string().parse::<Eur>().unwrap(), e);
    }

    #[test]
    fn money_sums_exactly(cents in prop::collection::vec(0i64..1_000_000_000, 0..50)) {
        let total: Eur = cents.iter().map(|c| Eur::from_cents(*c)).sum();
        prop_assert_eq!(total.cents(), cents.iter().sum::<i64>());
    }

    #[test]
    fn jaro_winkler_is_symmetric_and_bounded(a in "\\PC{0,20}", b in "\\PC{0,20}") {
        let s = jaro_winkler(&a, &b);
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert!((s - jaro_winkler(&b, &a)).abs() < 1e-12);
        if !a.is_empty() {
            prop_assert_eq!(jaro_winkler(&a, &a), 1.0);
        }
    }

    #[test]
    fn normalization_is_idempotent(name in "[A-Za-zÀ-ÿ .,'()&-]{0,40}") {
        let once = normalize_name(&name);
        prop_assert_eq!(normalize_name(&once), once);
    }

    #[test]
    fn filter_specs_round_trip_through_query_strings(f in filter_spec()) {
        prop_assert_eq!(FilterSpec::from_query(&f.to_query()).unwrap(), f);
    }

    #[test]
    fn normalized_vectors_have_unit_cosine_with_themselves(v in prop::collection::vec(-10.0f64..10.0, 1..32)) {
        let mut v = v;
        if l2_normalize(&mut v) {
            let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!((norm - 1.0).abs() < 1e-12);
            prop_assert!((cosine(&v, &v) - 1.0).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn resolution_ignores_input_order(order in Just((0..name_records().len()).collect::<Vec<_>>()).prop_shuffle()) {
        let records = name_records();
        let shuffled: Vec<NameRecord> = order.iter().map(|&i| records[i].clone()).collect();
        let cfg = ResolverConfig::default();
        let a = resolve(records, &OverrideFile::default(), &cfg).unwrap();
        let b = resolve(&shuffled, &OverrideFile::default(), &cfg).unwrap();
        prop_assert_eq!(a.organisations, b.organisations);
    }

    #[test]
    fn kmeans_reaches_a_lloyd_fixed_point(
        points in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 12..60),
        k in 1usize..6,
        seed in 0u64..1000,
    ) {
        let c = kmeans_points(&points, &TopicModelConfig::new(k, seed)).unwrap();
        prop_assert_eq!(c.assignments.len(), points.len());
        prop_assert!(c.inertia_trace.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        let d2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
        let mut inertia = 0.0;
        for (p, &a) in points.iter().zip(&c.assignments) {
            prop_assert!(a < k);
            let own = d2(p, &c.centroids[a]);
            let best = c.centroids.iter().map(|m| d2(p, m)).fold(f64::INFINITY, f64::min);
            prop_assert!(own <= best + 1e-9);
            inertia += own;
        }
        prop_assert!((inertia - c.inertia).abs() <= 1e-9 * inertia.max(1.0));
    }

    #[test]
    fn perplexity_rows_are_distributions(
        points in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 4), 12..40),
        perplexity in 2.0f64..8.0,
    ) {
        let cal = perplexity_calibration(&squared_distances(&points), perplexity).unwrap();
        for i in 0..points.len() {
            let row = cal.conditional.row(i);
            prop_assert!(row[i] == 0.0);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let p = joint_probabilities(&points, perplexity).unwrap();
        prop_assert!((p.sum() - 1.0).abs() < 1e-9);
        for i in 0..p.n {
            for j in 0..p.n {
                prop_assert!((p.get(i, j) - p.get(j, i)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn sdg_tagger_matches_the_naive_scan(
        picks in prop::collection::vec((0usize..500, 0u8..4), 1..30),
    ) {
        let v = vocab();
        let fillers = ["the", "project", "Energy", "water,", "and", "climate", "of", "LOW"];
        let words: Vec<String> = picks
            .iter()
            .map(|&(i, style)| {
                let e = &v.entries()[i % v.len()];
                match style {
                    0 => fillers[i % fillers.len()].to_string(),
                    1 => e.phrase.to_uppercase(),
                    2 => format!("{}.", e.phrase),
                    _ => e.phrase.clone(),
                }
            })
            .collect();
        let text = words.join(" ");
        prop_assert_eq!(v.tag_text(&text), common::naive_sdg_scan(v, &text));
    }

    #[test]
    fn widening_a_facet_never_loses_hits(seed in 0u64..10_000) {
        use rand::SeedableRng;
        let (s, index) = snapshot();
        let pool = common::FilterPool::new(s);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let f = pool.random(&mut rng);
        let hits: BTreeSet<String> = index.query(&f).into_iter().collect();

        let mut wider = f.clone();
        if !wider.sdgs.is_empty() {
            wider.sdgs.extend(1..=17);
        }
        if !wider.years.is_empty() {
            wider.years.extend(pool.years.iter().copied());
        }
        let more: BTreeSet<String> = index.query(&wider).into_iter().collect();
        prop_assert!(hits.is_subset(&more));

        let mut narrower = f.clone();
        narrower.keyword_terms.push(pool.terms[seed as usize % pool.terms.len()].clone());
        let fewer: BTreeSet<String> = index.query(&narrower).into_iter().collect();
        prop_assert!(fewer.is_subset(&hits));
    }
}
