//! Acceptance runner: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Run with `cargo test --test acceptance`.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use s3monitor::api::{self, AppState};
use s3monitor::collaboration_graph::build_graph;
use s3monitor::entity_resolution::{resolve, NameRecord, OverrideFile, ResolverConfig};
use s3monitor::fixture::{self, Fixture, FixtureConfig};
use s3monitor::ingest::{self, Corpus};
use s3monitor::money::Eur;
use s3monitor::pipeline::{sha256_hex, RunManifest};
use s3monitor::priority_classifier::{self as pc, LabelSets, LogisticObjective};
use s3monitor::query_engine::{ExportView, FilterSpec, SearchIndex, Snapshot};
use s3monitor::sdg_tagger;
use s3monitor::semantic_map::{self, TsneConfig};
use s3monitor::text_embedding::{self, EmbeddingMatrix, TfidfConfig};
use s3monitor::topic_model::{adjusted_rand_index, kmeans_points, TopicModelConfig};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> Outcome {
    let t = Instant::now();
    let detail = f()?;
    let took = t.elapsed();
    if let Some(limit) = limit {
        check(took < limit, format!("{detail}; took {took:.2?}, limit {limit:?}"))?;
    }
    Ok(format!("{detail}; {took:.2?}"))
}

fn ingest_round_trip() -> Outcome {
    timed(Some(Duration::from_secs(5)), || {
        let fx = Fixture::generate(&FixtureConfig::default());
        let parse = || -> Result<(Corpus, usize), String> {
            let eu = ingest::parse_eu_str(&fx.eu_projects_csv, &fx.eu_participants_csv, "eu_projects", "eu_participants")
                .map_err(|e| e.to_string())?;
            let reg = ingest::parse_regional_str(&fx.regional_csv, "regional").map_err(|e| e.to_string())?;
            let rejects = eu.report.total_rejects() + reg.report.total_rejects();
            Ok((ingest::unify(eu.records, reg.records), rejects))
        };
        let (corpus, rejects) = parse()?;
        check(rejects == 0, format!("{rejects} rejects"))?;
        let (p, q) = corpus.canonical_bytes();
        let back = Corpus::from_canonical_str(std::str::from_utf8(&p).unwrap(), std::str::from_utf8(&q).unwrap())
            .map_err(|e| e.to_string())?;
        check(back == corpus, "parse → dump → parse changed the corpus")?;
        check(back.canonical_bytes() == (p.clone(), q.clone()), "second dump differs")?;
        let (again, _) = parse()?;
        check(again.canonical_bytes() == (p, q), "dumps differ across runs")?;
        Ok(format!(
            "{} projects, {} participations, 0 rejects, byte-identical dumps",
            corpus.projects.len(),
            corpus.participations.len()
        ))
    })
}

fn partition(res: &s3monitor::entity_resolution::Resolution) -> BTreeSet<BTreeSet<(String, String)>> {
    let mut groups: BTreeMap<&str, BTreeSet<(String, String)>> = BTreeMap::new();
    for (c, n, id) in res.alias_keys() {
        groups.entry(id).or_default().insert((c.to_string(), n.to_string()));
    }
    groups.into_values().collect()
}

fn entity_resolution() -> Outcome {
    timed(None, || {
        let fx = Fixture::generate(&FixtureConfig::default());
        let eu = ingest::parse_eu_str(&fx.eu_projects_csv, &fx.eu_participants_csv, "p", "q").unwrap();
        let reg = ingest::parse_regional_str(&fx.regional_csv, "r").unwrap();
        let corpus = ingest::unify(eu.records, reg.records);
        let overrides = OverrideFile::parse(&fx.overrides_csv).map_err(|e| e.to_string())?;
        let cfg = ResolverConfig::default();
        let records: Vec<NameRecord> = corpus.participations.iter().map(NameRecord::from).collect();
        let res = resolve(&records, &overrides, &cfg).map_err(|e| e.to_string())?;
        let (precision, recall) = common::pairwise_scores(&fx.truth.alias_groups, &res);
        check(
            precision >= 0.95 && recall >= 0.95,
            format!("pairwise precision {precision:.4}, recall {recall:.4}"),
        )?;

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let mut shuffled = records.clone();
            shuffled.shuffle(&mut rng);
            let other = resolve(&shuffled, &overrides, &cfg).map_err(|e| e.to_string())?;
            check(other.organisations == res.organisations, "input order changed the organisations")?;
        }
        // Feeding the resolved aliases back in must reproduce the grouping.
        let again: Vec<NameRecord> = res
            .alias_keys()
            .map(|(c, n, _)| NameRecord::new(n, c))
            .collect();
        let res2 = resolve(&again, &overrides, &cfg).map_err(|e| e.to_string())?;
        check(partition(&res2) == partition(&res), "re-resolution changed the grouping")?;
        Ok(format!(
            "precision {precision:.4}, recall {recall:.4} over {} organisations; order-independent; idempotent",
            res.organisations.len()
        ))
    })
}

fn sdg_docs(vocab: &sdg_tagger::SdgVocabulary, n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries = vocab.entries();
    let fillers = ["project", "Climate", "water", "of", "and", "the", "energy", "new", "HIV", "hiv"];
    (0..n)
        .map(|_| {
            let mut parts: Vec<String> = Vec::new();
            for _ in 0..rng.random_range(20..60) {
                let e = entries.choose(&mut rng).unwrap();
                let toks: Vec<&str> = e.phrase.split(' ').collect();
                let piece = match rng.random_range(0..6) {
                    0 | 1 => e.phrase.clone(),
                    2 => toks[..rng.random_range(1..=toks.len())].join(" "),
                    3 => e.phrase.to_uppercase(),
                    4 => toks.join(", "),
                    _ => fillers.choose(&mut rng).unwrap().to_string(),
                };
                parts.push(piece);
            }
            parts.join(if rng.random_bool(0.5) { " " } else { ". " })
        })
        .collect()
}

fn sdg_oracle() -> Outcome {
    let vocab = sdg_tagger::parse_vocabulary(fixture::SDG_VOCABULARY).map_err(|e| e.to_string())?;
    check(vocab.len() == 150, format!("vocabulary has {} phrases", vocab.len()))?;
    let docs = sdg_docs(&vocab, 1000, 3);
    let mut tagged = Vec::new();
    let out = timed(Some(Duration::from_secs(10)), || {
        tagged = docs.iter().map(|d| vocab.tag_text(d)).collect();
        Ok("tagged 1000 docs".into())
    })?;
    let mut hits = 0;
    for (doc, got) in docs.iter().zip(&tagged) {
        let want = common::naive_sdg_scan(&vocab, doc);
        check(*got == want, format!("mismatch on {doc:?}"))?;
        hits += want.iter().map(|m| m.count).sum::<usize>();
    }
    Ok(format!("{out}; {hits} matches equal to the naive scan"))
}

fn classifier() -> Outcome {
    timed(None, || {
        let labels = fixture::priority_labels();
        let sc = fixture::separable_corpus(700, 21);
        let rules = pc::parse_rules(&sc.rules_csv, &labels, "rules").map_err(|e| e.to_string())?;
        let weak = pc::weak_label(&sc.corpus, &rules).map_err(|e| e.to_string())?;
        let (_, emb) = text_embedding::embed_corpus(&sc.corpus, &TfidfConfig::default(), 128, 42)
            .map_err(|e| e.to_string())?;
        let split = 500;
        let subset = |range: std::ops::Range<usize>| EmbeddingMatrix {
            ids: emb.ids[range.clone()].to_vec(),
            vectors: emb.vectors[range].to_vec(),
            ..emb.clone()
        };
        let (train_m, test_m) = (subset(0..split), subset(split..emb.len()));
        let train_labels: LabelSets = weak.iter().filter(|(id, _)| train_m.ids.contains(id)).map(|(k, v)| (k.clone(), v.clone())).collect();
        let model = pc::train(&train_m, &train_labels, &labels, &pc::TrainConfig::default()).map_err(|e| e.to_string())?;
        let preds = pc::label_sets(&pc::predict(&model, &test_m));
        let gold: LabelSets = test_m.ids.iter().map(|id| (id.clone(), sc.truth[id].clone())).collect();
        let report = pc::evaluate(&preds, &gold, None, &labels).map_err(|e| e.to_string())?;
        check(report.macro_f1 >= 0.95, format!("held-out macro-F1 {:.4}", report.macro_f1))?;

        // Central differences on a random objective.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<Vec<f64>> = (0..40).map(|_| (0..8).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let obj = LogisticObjective {
            rows: rows.iter().map(Vec::as_slice).collect(),
            targets: (0..40).map(|i| (i % 3 == 0) as u8 as f64).collect(),
            lambda: 0.1,
        };
        let params: Vec<f64> = (0..9).map(|_| rng.random_range(-2.0..2.0)).collect();
        let g = obj.gradient(&params);
        let h = 1e-6;
        let mut max_diff: f64 = 0.0;
        for k in 0..params.len() {
            let (mut up, mut down) = (params.clone(), params.clone());
            up[k] += h;
            down[k] -= h;
            let fd = (obj.loss(&up) - obj.loss(&down)) / (2.0 * h);
            max_diff = max_diff.max((fd - g[k]).abs());
        }
        check(max_diff < 1e-5, format!("gradient max abs diff {max_diff:e}"))?;

        // Two labels, four docs: A has TP/FP/FN (1,1,0), B has (1,0,1).
        let set = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>();
        let gold4: LabelSets = [("d1", set(&["A"])), ("d2", set(&[])), ("d3", set(&["B"])), ("d4", set(&["B"]))]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        let pred4: LabelSets = [("d1", set(&["A"])), ("d2", set(&["A"])), ("d3", set(&["B"])), ("d4", set(&[]))]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        let r4 = pc::evaluate(&pred4, &gold4, None, &["A".into(), "B".into()]).map_err(|e| e.to_string())?;
        check(
            (r4.macro_f1 - 2.0 / 3.0).abs() < 1e-12 && format!("{:.3}", r4.macro_f1) == "0.667",
            format!("4-doc macro-F1 {}", r4.macro_f1),
        )?;
        Ok(format!(
            "held-out macro-F1 {:.4}; gradient max abs diff {max_diff:.1e}; 4-doc macro-F1 {:.3}",
            report.macro_f1, r4.macro_f1
        ))
    })
}

fn kmeans() -> Outcome {
    timed(None, || {
        let (points, truth) = common::blobs(3, 60, 8, 0.5, 1);
        let mut worst_centroid: f64 = 0.0;
        for seed in 0..10 {
            let c = kmeans_points(&points, &TopicModelConfig::new(3, seed)).map_err(|e| e.to_string())?;
            let ari = adjusted_rand_index(&c.assignments, &truth);
            check(ari == 1.0, format!("seed {seed}: ARI {ari}"))?;
            check(
                c.inertia_trace.windows(2).all(|w| w[1] <= w[0]),
                format!("seed {seed}: inertia increased {:?}", c.inertia_trace),
            )?;
            for (k, centroid) in c.centroids.iter().enumerate() {
                let members: Vec<&Vec<f64>> = points.iter().zip(&c.assignments).filter(|(_, &a)| a == k).map(|(p, _)| p).collect();
                for d in 0..centroid.len() {
                    let mean = members.iter().map(|p| p[d]).sum::<f64>() / members.len() as f64;
                    worst_centroid = worst_centroid.max((mean - centroid[d]).abs());
                }
            }
        }
        check(worst_centroid <= 1e-9, format!("centroid off member mean by {worst_centroid:e}"))?;
        // Harder case where Lloyd iterations actually move.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let noise: Vec<Vec<f64>> = (0..300).map(|_| (0..4).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
        for seed in 0..10 {
            let c = kmeans_points(&noise, &TopicModelConfig::new(8, seed)).map_err(|e| e.to_string())?;
            check(
                c.inertia_trace.windows(2).all(|w| w[1] <= w[0]),
                format!("uniform data, seed {seed}: inertia increased"),
            )?;
        }
        Ok(format!("ARI 1.0 over 10 seeds; inertia non-increasing; centroid error {worst_centroid:.1e}"))
    })
}

fn tsne() -> Outcome {
    // Calibration on the blob fixture.
    let (points, _) = common::blobs(5, 100, 50, 1.0, 9);
    let d = semantic_map::squared_distances(&points);
    let cal = semantic_map::perplexity_calibration(&d, 30.0).map_err(|e| e.to_string())?;
    let target = 30f64.log2();
    let worst = cal.entropies.iter().map(|h| (h - target).abs()).fold(0.0, f64::max);
    check(worst <= 1e-3, format!("entropy off log2(perplexity) by {worst:e}"))?;

    // Gradient check on 10 points.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let small: Vec<Vec<f64>> = (0..10).map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let p = semantic_map::joint_probabilities(&small, 3.0).map_err(|e| e.to_string())?;
    let y: Vec<[f64; 2]> = (0..10).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
    let g = semantic_map::kl_gradient(&p, &y, 1.0);
    let h = 1e-6;
    let (mut num, mut den): (f64, f64) = (0.0, 0.0);
    for i in 0..10 {
        for k in 0..2 {
            let (mut up, mut down) = (y.clone(), y.clone());
            up[i][k] += h;
            down[i][k] -= h;
            let fd = (semantic_map::kl_divergence(&p, &up) - semantic_map::kl_divergence(&p, &down)) / (2.0 * h);
            num = num.max((fd - g[i][k]).abs());
            den = den.max(fd.abs());
        }
    }
    let rel = num / den;
    check(rel < 1e-4, format!("gradient relative error {rel:e}"))?;

    let mut layout = Vec::new();
    let mut trace = Vec::new();
    let timing = timed(Some(Duration::from_secs(60)), || {
        let (y, t, _) = semantic_map::tsne_points(&points, &TsneConfig::default()).map_err(|e| e.to_string())?;
        layout = y;
        trace = t;
        Ok(format!("N={}", points.len()))
    })?;
    let kl_at = |it: usize| trace.iter().find(|(i, _)| *i == it).map(|(_, kl)| *kl);
    let (Some(kl250), Some(kl1000)) = (kl_at(250), kl_at(1000)) else {
        return Err(format!("KL trace lacks iterations 250/1000: {trace:?}"));
    };
    check(kl1000 < kl250, format!("KL(1000) {kl1000} ≥ KL(250) {kl250}"))?;
    let tw = semantic_map::trustworthiness(&points, &layout, 10);
    check(tw >= 0.95, format!("trustworthiness {tw:.4}"))?;
    Ok(format!(
        "entropy error {worst:.1e}; gradient rel. error {rel:.1e}; KL {kl250:.3} → {kl1000:.3}; trustworthiness {tw:.4}; {timing}"
    ))
}

fn collaboration_graph(s: &Snapshot) -> Outcome {
    timed(None, || {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut ids: Vec<String> = s.projects.iter().map(|p| p.project_id.clone()).collect();
        ids.shuffle(&mut rng);
        let chosen: BTreeSet<String> = ids.into_iter().take(200).collect();
        let g = build_graph(&chosen, &s.participations, &s.organisations);
        let oracle = common::brute_force_graph(&chosen, &s.participations, &s.organisations);
        check(g == oracle, "graph differs from the brute-force oracle")?;
        let home: BTreeSet<&str> = s
            .organisations
            .iter()
            .filter(|o| o.is_home_region)
            .map(|o| o.org_id.as_str())
            .collect();
        let expected: Eur = s
            .participations
            .iter()
            .filter(|p| chosen.contains(&p.project_id) && home.contains(p.org_id.as_deref().unwrap()))
            .map(|p| p.contribution)
            .sum();
        check(
            g.total_investment() == expected,
            format!("node investment {} ≠ home contributions {expected}", g.total_investment()),
        )?;
        Ok(format!(
            "200 projects: {} nodes, {} edges equal to oracle; investment {} conserved",
            g.nodes.len(),
            g.edges.len(),
            expected
        ))
    })
}

fn widen(f: &FilterSpec, rng: &mut ChaCha8Rng, pool: &common::FilterPool) -> Option<FilterSpec> {
    let mut g = f.clone();
    match rng.random_range(0..4) {
        0 if !g.years.is_empty() => g.years.insert(*pool.years.choose(rng).unwrap()),
        1 if !g.priority_areas.is_empty() => g.priority_areas.insert(pool.areas.choose(rng).unwrap().clone()),
        2 if !g.sdgs.is_empty() => g.sdgs.insert(rng.random_range(1..=17)),
        3 if !g.topics.is_empty() => g.topics.insert(*pool.topics.choose(rng).unwrap()),
        _ => return None,
    };
    Some(g)
}

fn query_engine(s: &Snapshot) -> Outcome {
    timed(None, || {
        let index = SearchIndex::build(s.clone());
        let pool = common::FilterPool::new(s);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut nonempty = 0;
        let mut monotone = 0;
        for i in 0..1000 {
            let f = pool.random(&mut rng);
            let got = index.query(&f);
            let want = common::linear_scan(s, &f);
            check(got == want, format!("filter #{i} {:?}: {} vs {} hits", f.to_query(), got.len(), want.len()))?;
            nonempty += !got.is_empty() as usize;
            let hits: BTreeSet<&String> = got.iter().collect();
            if let Some(wider) = widen(&f, &mut rng, &pool) {
                let more = index.query(&wider);
                check(hits.iter().all(|h| more.contains(h)), format!("widening {:?} lost hits", f.to_query()))?;
                monotone += 1;
            }
            let mut narrower = f.clone();
            if narrower.years.is_empty() {
                narrower.years.insert(*pool.years.choose(&mut rng).unwrap());
                let fewer = index.query(&narrower);
                check(fewer.iter().all(|h| hits.contains(h)), format!("narrowing {:?} added hits", f.to_query()))?;
                monotone += 1;
            }
        }
        check(nonempty >= 200, format!("only {nonempty} of 1000 random filters matched anything"))?;
        Ok(format!(
            "1000 random filters equal to linear scan ({nonempty} non-empty); {monotone} monotonicity checks"
        ))
    })
}

fn hash_tree(run: &Path, manifest: &RunManifest) -> Result<(), String> {
    for record in manifest.stages.values() {
        for (rel, hash) in &record.artifacts {
            let bytes = std::fs::read(run.join(rel)).map_err(|e| format!("{rel}: {e}"))?;
            check(&sha256_hex(&bytes) == hash, format!("{rel} does not match the manifest"))?;
        }
    }
    Ok(())
}

fn end_to_end() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_s3monitor");
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut runs = Vec::new();
    for name in ["a", "b"] {
        let root = dir.path().join(name);
        common::write_fixture(&root);
        runs.push(root);
    }
    let run_all = |root: &Path| -> Result<(RunManifest, Duration), String> {
        let t = Instant::now();
        let out = Command::new(bin)
            .args(["all", "--config"])
            .arg(root.join("config.json"))
            .env("RUST_LOG", "warn")
            .output()
            .map_err(|e| e.to_string())?;
        check(out.status.success(), format!("exit {:?}: {}", out.status, String::from_utf8_lossy(&out.stderr)))?;
        let took = t.elapsed();
        let m = RunManifest::load(&root.join("run/manifest.json")).map_err(|e| e.to_string())?;
        hash_tree(&root.join("run"), &m)?;
        Ok((m, took))
    };
    let (m1, t1) = run_all(&runs[0])?;
    let (m2, t2) = run_all(&runs[0])?;
    let (m3, t3) = run_all(&runs[1])?;
    check(m1.without_timings() == m2.without_timings(), "rerun changed the manifest")?;
    check(m1.without_timings() == m3.without_timings(), "second directory produced different artifacts")?;
    check(m1.stages.len() == 3, "manifest lacks a stage")?;
    let slowest = t1.max(t2).max(t3);
    check(slowest < Duration::from_secs(120), format!("pipeline took {slowest:?}"))?;
    let n: usize = m1.stages.values().map(|s| s.artifacts.len()).sum();
    Ok(format!("3 runs, {n} artifacts byte-identical and manifest-verified; slowest run {slowest:.2?}"))
}

async fn call(app: &axum::Router, uri: &str) -> (u16, Vec<u8>) {
    use http_body_util::BodyExt;
    use tower::ServiceExt;
    let req = axum::http::Request::get(uri).body(axum::body::Body::empty()).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status().as_u16();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

fn json(bytes: &[u8]) -> serde_json::Value {
    serde_json::from_slice(bytes).unwrap_or(serde_json::Value::Null)
}

fn api_contract(s: &Snapshot) -> Outcome {
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    rt.block_on(async {
        let index = SearchIndex::build(s.clone());
        let app = api::router(AppState::new(index.clone()), &["*".to_string()]);
        let checked = std::cell::Cell::new(0);
        let expect = |uri: &str, got: (u16, Vec<u8>), want: serde_json::Value| -> Result<(), String> {
            check(got.0 == 200, format!("{uri}: status {}", got.0))?;
            check(json(&got.1) == want, format!("{uri}: payload differs from engine output"))?;
            checked.set(checked.get() + 1);
            Ok(())
        };

        expect("/api/meta", call(&app, "/api/meta").await, val(&api::meta(&index)))?;
        for q in ["sdg=6&year=2020", "", "area=FOOD&limit=5&offset=2", "type=university&province=Girona", "q=hydrogen"] {
            let f = FilterSpec::from_query(q).unwrap();
            let paging = api::Paging::from_query(q).unwrap();
            let uri = format!("/api/projects?{q}");
            let got = call(&app, &uri).await;
            let hits = index.query_projects(&f);
            let want = serde_json::json!({
                "total": hits.len(),
                "offset": paging.offset,
                "limit": paging.limit,
                "items": hits.iter().skip(paging.offset).take(paging.limit).collect::<Vec<_>>(),
            });
            expect(&uri, got, want)?;
            for (path, want) in [
                ("network", val(&api::network_view(&index, &f))),
                ("map", val(&api::map_points(&index, &f))),
                ("stats", val(&index.stats(&f))),
            ] {
                let uri = format!("/api/{path}?{q}");
                expect(&uri, call(&app, &uri).await, want)?;
            }
            for view in ExportView::ALL {
                let uri = format!("/api/export/{}.csv?{q}", view.as_str());
                let got = call(&app, &uri).await;
                check(got.0 == 200 && got.1 == index.export_csv(&f, view), format!("{uri}: csv differs"))?;
                checked.set(checked.get() + 1);
            }
        }
        let id = &s.projects[17].project_id;
        let uri = format!("/api/projects/{id}");
        expect(&uri, call(&app, &uri).await, val(&api::project_detail(&index, id).unwrap()))?;

        let (status, body) = call(&app, "/api/map").await;
        let points = json(&body);
        let all_matched = points.as_array().is_some_and(|a| {
            a.len() == s.projects.len() && a.iter().all(|p| p["matched"] == serde_json::Value::Bool(true))
        });
        check(status == 200 && all_matched, "/api/map without filter: not N points all matched")?;

        for (uri, code) in [
            ("/api/projects/EU:999", 404),
            ("/api/export/bogus.csv", 404),
            ("/api/export/projects.json", 404),
            ("/api/projects?year=abc", 400),
            ("/api/projects?sdg=18", 400),
            ("/api/projects?colour=red", 400),
            ("/api/projects?limit=-1", 400),
            ("/api/stats?topic=x", 400),
            ("/api/network?participant=a&participant=b", 400),
            ("/api/map?year=20x0", 400),
        ] {
            let (status, body) = call(&app, uri).await;
            let b = json(&body);
            check(
                status == code && b["error"].is_string() && b["detail"].is_string(),
                format!("{uri}: status {status}, body {b}"),
            )?;
            checked.set(checked.get() + 1);
        }
        let repeat = (call(&app, "/api/stats?area=HEALTH").await, call(&app, "/api/stats?area=HEALTH").await);
        check(repeat.0 == repeat.1, "repeated GET differs")?;
        Ok(format!("{} endpoint checks: payloads equal engine output, 400/404 JSON errors", checked.get()))
    })
}

fn val<T: serde::Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).unwrap()
}

fn main() {
    let snapshot = common::fixture_snapshot();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("ingest round-trip", Box::new(ingest_round_trip)),
        ("entity resolution", Box::new(entity_resolution)),
        ("SDG tagger oracle", Box::new(sdg_oracle)),
        ("priority classifier", Box::new(classifier)),
        ("k-means", Box::new(kmeans)),
        ("t-SNE", Box::new(tsne)),
        ("collaboration graph", Box::new(|| collaboration_graph(&snapshot))),
        ("query engine", Box::new(|| query_engine(&snapshot))),
        ("end-to-end determinism", Box::new(end_to_end)),
        ("API contract", Box::new(|| api_contract(&snapshot))),
    ];
    let mut failed = 0;
    for (name, run) in &criteria {
        match run() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
