//! Topic discovery by k-means over project embeddings, with c-TF-IDF naming.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::text_embedding::{EmbeddingMatrix, TfidfFit};

pub const MAX_TOP_TERMS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicModelConfig {
    pub k: usize,
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
    pub n_init: usize,
}

impl TopicModelConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        TopicModelConfig {
            k,
            max_iters: 100,
            tol: 1e-6,
            seed,
            n_init: 10,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TopicError {
    #[error("k = {k} exceeds the number of points ({n})")]
    KTooLarge { k: usize, n: usize },
    #[error("k must be at least 1")]
    KZero,
    #[error("override names unknown topic id {0}")]
    UnknownTopicId(usize),
    #[error("overrides line {line}: {reason}")]
    BadRow { line: u64, reason: String },
    #[error("{0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub assignments: Vec<usize>,
    /// Mean of the members of each cluster.
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    /// Inertia after each assignment step of the winning restart.
    pub inertia_trace: Vec<f64>,
    pub iterations: usize,
    pub restart: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid, lowest index on ties.
fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn means(points: &[Vec<f64>], assignments: &[usize], k: usize) -> Vec<Vec<f64>> {
    let dim = points.first().map_or(0, Vec::len);
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignments) {
        counts[a] += 1;
        for (s, x) in sums[a].iter_mut().zip(p) {
            *s += x;
        }
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        if n > 0 {
            s.iter_mut().for_each(|v| *v /= n as f64);
        }
    }
    sums
}

fn kmeans_pp(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 {
                    if r < d {
                        pick = i;
                        break;
                    }
                    r -= d;
                }
            }
            // Float round-off can leave `r` past the last positive weight.
            if d2[pick] == 0.0 {
                pick = (0..n).rev().find(|&i| d2[i] > 0.0).unwrap();
            }
            pick
        } else {
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &points[next]));
        }
    }
    chosen.iter().map(|&i| points[i].clone()).collect()
}

fn assign_all(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>) {
    points.par_iter().map(|p| nearest(p, centroids)).unzip()
}

/// Moves the point farthest from its centroid into each empty cluster.
fn reseed_empty(points: &[Vec<f64>], assignments: &mut [usize], dists: &mut [f64], centroids: &mut [Vec<f64>]) {
    let k = centroids.len();
    loop {
        let mut counts = vec![0usize; k];
        assignments.iter().for_each(|&a| counts[a] += 1);
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let donor = (0..points.len())
            .filter(|&i| counts[assignments[i]] > 1)
            .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
            .expect("k <= n guarantees a cluster with two members");
        assignments[donor] = empty;
        dists[donor] = 0.0;
        centroids[empty] = points[donor].clone();
    }
}

fn lloyd(points: &[Vec<f64>], config: &TopicModelConfig, restart: usize) -> Clustering {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(restart as u64);
    let k = config.k;
    let mut centroids = kmeans_pp(points, k, &mut rng);
    let mut trace = Vec::new();
    let mut iterations = 0;
    loop {
        let (mut assignments, mut dists) = assign_all(points, &centroids);
        reseed_empty(points, &mut assignments, &mut dists, &mut centroids);
        trace.push(dists.iter().sum());
        let next = means(points, &assignments, k);
        let shift = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        iterations += 1;
        if shift < config.tol || iterations >= config.max_iters {
            break;
        }
    }
    let (mut assignments, mut dists) = assign_all(points, &centroids);
    reseed_empty(points, &mut assignments, &mut dists, &mut centroids);
    let centroids = means(points, &assignments, k);
    let inertia = points
        .iter()
        .zip(&assignments)
        .map(|(p, &a)| sq_dist(p, &centroids[a]))
        .sum();
    Clustering {
        assignments,
        centroids,
        inertia,
        inertia_trace: trace,
        iterations,
        restart,
    }
}

/// Best of `n_init` seeded k-means++/Lloyd runs by inertia.
pub fn kmeans_points(points: &[Vec<f64>], config: &TopicModelConfig) -> Result<Clustering, TopicError> {
    if config.k == 0 {
        return Err(TopicError::KZero);
    }
    if config.k > points.len() {
        return Err(TopicError::KTooLarge {
            k: config.k,
            n: points.len(),
        });
    }
    let runs: Vec<Clustering> = (0..config.n_init.max(1))
        .into_par_iter()
        .map(|r| lloyd(points, config, r))
        .collect();
    Ok(runs
        .into_iter()
        .reduce(|best, run| if run.inertia < best.inertia { run } else { best })
        .unwrap())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topic {
    pub topic_id: usize,
    pub centroid: Vec<f64>,
    pub member_ids: BTreeSet<String>,
    pub top_terms: Vec<(String, f64)>,
    pub label: String,
    pub manual_label: bool,
}

pub fn kmeans(embeddings: &EmbeddingMatrix, config: &TopicModelConfig) -> Result<(Vec<Topic>, Clustering), TopicError> {
    let clustering = kmeans_points(&embeddings.vectors, config)?;
    let mut topics: Vec<Topic> = clustering
        .centroids
        .iter()
        .enumerate()
        .map(|(topic_id, c)| Topic {
            topic_id,
            centroid: c.clone(),
            member_ids: BTreeSet::new(),
            top_terms: Vec::new(),
            label: format!("Topic {topic_id}"),
            manual_label: false,
        })
        .collect();
    for (id, &a) in embeddings.ids.iter().zip(&clustering.assignments) {
        topics[a].member_ids.insert(id.clone());
    }
    Ok((topics, clustering))
}

/// Mean silhouette with Euclidean distance. Points in singleton clusters
/// score 0; a point whose intra and nearest-cluster distances are both zero
/// also scores 0.
pub fn silhouette(points: &[Vec<f64>], assignments: &[usize]) -> f64 {
    let n = points.len();
    if n == 0 {
        return 0.0;
    }
    let k = assignments.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    assignments.iter().for_each(|&a| sizes[a] += 1);
    let scores: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let own = assignments[i];
            if sizes[own] <= 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; k];
            for j in 0..n {
                if j != i {
                    sums[assignments[j]] += sq_dist(&points[i], &points[j]).sqrt();
                }
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own && sizes[c] > 0)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            if !b.is_finite() {
                return 0.0;
            }
            let m = a.max(b);
            if m == 0.0 {
                0.0
            } else {
                (b - a) / m
            }
        })
        .collect();
    scores.iter().sum::<f64>() / n as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub inertia: f64,
    pub silhouette: f64,
}

/// One clustering per k with the same seed policy. Values of k outside
/// `[2, N-1]` are skipped.
pub fn sweep_k(points: &[Vec<f64>], ks: impl IntoIterator<Item = usize>, base: &TopicModelConfig) -> Vec<SweepRow> {
    ks.into_iter()
        .filter(|&k| k >= 2 && k < points.len())
        .map(|k| {
            let cfg = TopicModelConfig { k, ..base.clone() };
            let c = kmeans_points(points, &cfg).expect("k checked");
            SweepRow {
                k,
                inertia: c.inertia,
                silhouette: silhouette(points, &c.assignments),
            }
        })
        .collect()
}

fn choose2(n: usize) -> f64 {
    (n * n.saturating_sub(1)) as f64 / 2.0
}

/// Adjusted Rand index between two labelings of the same points.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut table: HashMap<(usize, usize), usize> = HashMap::new();
    let mut rows: HashMap<usize, usize> = HashMap::new();
    let mut cols: HashMap<usize, usize> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&n| choose2(n)).sum();
    let sum_a: f64 = rows.values().map(|&n| choose2(n)).sum();
    let sum_b: f64 = cols.values().map(|&n| choose2(n)).sum();
    let total = choose2(a.len());
    if total == 0.0 {
        return 1.0;
    }
    let expected = sum_a * sum_b / total;
    let max = 0.5 * (sum_a + sum_b);
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

/// Fills `top_terms` and auto labels from raw term counts:
/// score = (count of term in cluster / all term occurrences in cluster)
///         × ln(k / clusters containing the term).
pub fn name_topics(topics: &mut [Topic], tfidf: &TfidfFit, overrides: &BTreeMap<usize, String>) -> Result<(), TopicError> {
    if let Some(&bad) = overrides.keys().find(|&&id| !topics.iter().any(|t| t.topic_id == id)) {
        return Err(TopicError::UnknownTopicId(bad));
    }
    let row_of: HashMap<&str, usize> = tfidf
        .doc_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let n_terms = tfidf.vocabulary.len();
    let counts: Vec<Vec<f64>> = topics
        .iter()
        .map(|t| {
            let mut c = vec![0.0; n_terms];
            for id in &t.member_ids {
                if let Some(&r) = row_of.get(id.as_str()) {
                    for &(term, n) in &tfidf.counts.rows[r] {
                        c[term] += n;
                    }
                }
            }
            c
        })
        .collect();
    let k = topics.len() as f64;
    let clusters_with: Vec<usize> = (0..n_terms)
        .map(|t| counts.iter().filter(|c| c[t] > 0.0).count())
        .collect();
    for (topic, c) in topics.iter_mut().zip(&counts) {
        let total: f64 = c.iter().sum();
        let mut scored: Vec<(String, f64)> = (0..n_terms)
            .filter(|&t| c[t] > 0.0)
            .map(|t| {
                let score = c[t] / total * (k / clusters_with[t] as f64).ln();
                (tfidf.vocabulary.terms[t].clone(), score)
            })
            .filter(|(_, s)| *s > 0.0)
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        scored.truncate(MAX_TOP_TERMS);
        topic.top_terms = scored;
        match overrides.get(&topic.topic_id) {
            Some(label) => {
                topic.label = label.clone();
                topic.manual_label = true;
            }
            None => {
                let auto: Vec<&str> = topic.top_terms.iter().take(3).map(|(t, _)| t.as_str()).collect();
                if !auto.is_empty() {
                    topic.label = auto.join("/");
                }
                topic.manual_label = false;
            }
        }
    }
    Ok(())
}

/// Reads `topicId,label` rows.
pub fn load_overrides(path: &Path) -> Result<BTreeMap<usize, String>, TopicError> {
    parse_overrides(&std::fs::read_to_string(path)?)
}

pub fn parse_overrides(data: &str) -> Result<BTreeMap<usize, String>, TopicError> {
    let mut rdr = csv::Reader::from_reader(data.trim_start_matches('\u{feff}').as_bytes());
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let id = rec.get(0).unwrap_or("").trim();
        let id: usize = id.parse().map_err(|_| TopicError::BadRow {
            line,
            reason: format!("bad topic id {id:?}"),
        })?;
        out.insert(id, rec.get(1).unwrap_or("").trim().to_string());
    }
    Ok(out)
}

/// Topic id per project.
pub fn assignments_by_id(topics: &[Topic]) -> BTreeMap<String, usize> {
    topics
        .iter()
        .flat_map(|t| t.member_ids.iter().map(move |id| (id.clone(), t.topic_id)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text_embedding::{fit_tfidf_texts, TfidfConfig};
    use rand_distr::{Distribution, Normal};

    pub(crate) fn blobs(per: usize, dim: usize, sigma: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, sigma).unwrap();
        let mut pts = Vec::new();
        let mut truth = Vec::new();
        for c in 0..3 {
            for _ in 0..per {
                let mut p: Vec<f64> = (0..dim).map(|_| noise.sample(&mut rng)).collect();
                p[c] += 1.0;
                pts.push(p);
                truth.push(c);
            }
        }
        (pts, truth)
    }

    #[test]
    fn recovers_three_blobs() {
        let (pts, truth) = blobs(40, 8, 0.05, 1);
        let c = kmeans_points(&pts, &TopicModelConfig::new(3, 7)).unwrap();
        assert_eq!(adjusted_rand_index(&c.assignments, &truth), 1.0);
        for w in c.inertia_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn k_equals_n_gives_zero_inertia() {
        let (pts, _) = blobs(3, 4, 0.05, 2);
        let c = kmeans_points(&pts, &TopicModelConfig::new(pts.len(), 1)).unwrap();
        assert_eq!(c.inertia, 0.0);
        let mut sizes = vec![0; pts.len()];
        c.assignments.iter().for_each(|&a| sizes[a] += 1);
        assert!(sizes.iter().all(|&s| s == 1));
        assert!(matches!(
            kmeans_points(&pts, &TopicModelConfig::new(pts.len() + 1, 1)),
            Err(TopicError::KTooLarge { .. })
        ));
    }

    #[test]
    fn duplicate_points_still_fill_every_cluster() {
        let pts = vec![vec![0.0, 0.0]; 5];
        let c = kmeans_points(&pts, &TopicModelConfig::new(3, 3)).unwrap();
        let used: BTreeSet<usize> = c.assignments.iter().copied().collect();
        assert_eq!(used.len(), 3);
    }

    #[test]
    fn silhouette_of_two_identical_groups_is_one() {
        let pts = vec![vec![0.0], vec![0.0], vec![5.0], vec![5.0]];
        assert_eq!(silhouette(&pts, &[0, 0, 1, 1]), 1.0);
        assert_eq!(silhouette(&pts, &[0, 1, 2, 2]), 0.5);
    }

    #[test]
    fn ari_reference_values() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]), 1.0);
        // Reference value from the contingency formula worked by hand.
        let v = adjusted_rand_index(&[0, 0, 0, 1, 1, 1], &[0, 0, 1, 1, 2, 2]);
        assert!((v - 0.24242424242424243).abs() < 1e-12, "{v}");
    }

    #[test]
    fn c_tfidf_names_distinctive_terms() {
        let texts: Vec<String> = [
            "hydrogen storage cells",
            "hydrogen fuel cells",
            "solar panels cells",
            "solar inverter cells",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let ids: Vec<String> = (0..4).map(|i| format!("d{i}")).collect();
        let fit = fit_tfidf_texts(&ids, &texts, &TfidfConfig { min_df: 1, ..Default::default() }).unwrap();
        let mut topics: Vec<Topic> = (0..2)
            .map(|t| Topic {
                topic_id: t,
                centroid: vec![],
                member_ids: ids[2 * t..2 * t + 2].iter().cloned().collect(),
                top_terms: vec![],
                label: String::new(),
                manual_label: false,
            })
            .collect();
        name_topics(&mut topics, &fit, &BTreeMap::new()).unwrap();
        // Cluster 0 holds 6 tokens; "hydrogen" occurs twice: 2/6 · ln 2.
        assert_eq!(topics[0].top_terms[0].0, "hydrogen");
        assert!((topics[0].top_terms[0].1 - 2.0 / 6.0 * 2f64.ln()).abs() < 1e-12);
        assert!(topics.iter().all(|t| t.top_terms.iter().all(|(term, _)| term != "cells")));
        assert_eq!(topics[1].label, "solar/inverter/panels");

        let overrides = BTreeMap::from([(1, "Photovoltaics".to_string())]);
        name_topics(&mut topics, &fit, &overrides).unwrap();
        assert_eq!(topics[1].label, "Photovoltaics");
        assert!(matches!(
            name_topics(&mut topics, &fit, &BTreeMap::from([(4, "x".to_string())])),
            Err(TopicError::UnknownTopicId(4))
        ));
    }
}
