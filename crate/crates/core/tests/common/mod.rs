//! Independent reference implementations shared by the integration tests and
//! the acceptance runner. Each one trades speed for obviousness.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;
use s3monitor::collaboration_graph::{CollaborationGraph, Edge, Node};
use s3monitor::entity_resolution::{Organisation, Resolution};
use s3monitor::fixture::{AliasGroup, Fixture, FixtureConfig};
use s3monitor::ingest::{Participation, Project};
use s3monitor::money::Eur;
use s3monitor::pipeline::Pipeline;
use s3monitor::query_engine::{FilterSpec, Snapshot};
use s3monitor::sdg_tagger::{SdgMatch, SdgVocabulary};
use s3monitor::text_embedding::tokenize;

/// Tries every vocabulary entry at every token position.
pub fn naive_sdg_scan(vocab: &SdgVocabulary, text: &str) -> Vec<SdgMatch> {
    let toks: Vec<&str> = text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .collect();
    let mut out = Vec::new();
    for e in vocab.entries() {
        let phrase: Vec<&str> = e.phrase.split(' ').collect();
        let mut positions = Vec::new();
        for start in 0..toks.len() {
            if start + phrase.len() > toks.len() {
                break;
            }
            let hit = phrase.iter().enumerate().all(|(k, p)| {
                let t = toks[start + k];
                if e.case_sensitive {
                    t == *p
                } else {
                    t.to_lowercase() == p.to_lowercase()
                }
            });
            if hit {
                positions.push(start);
            }
        }
        if !positions.is_empty() {
            out.push(SdgMatch {
                sdg: e.sdg,
                phrase: e.phrase.clone(),
                count: positions.len(),
                positions,
            });
        }
    }
    out.sort_by(|a, b| (a.sdg, &a.phrase).cmp(&(b.sdg, &b.phrase)));
    out
}

/// Pair counting over every (project, participant, participant) triple.
pub fn brute_force_graph(
    ids: &BTreeSet<String>,
    participations: &[Participation],
    organisations: &[Organisation],
) -> CollaborationGraph {
    let org = |id: &str| organisations.iter().find(|o| o.org_id == id).unwrap();
    let home = |p: &Participation| org(p.org_id.as_deref().unwrap()).is_home_region;
    let mut pair_projects: BTreeSet<(String, String, String)> = BTreeSet::new();
    let mut org_projects: BTreeSet<(String, String)> = BTreeSet::new();
    let mut investment: BTreeMap<String, Eur> = BTreeMap::new();
    for pid in ids {
        let parts: Vec<&Participation> = participations.iter().filter(|p| &p.project_id == pid).collect();
        for a in &parts {
            if !home(a) {
                continue;
            }
            let ida = a.org_id.clone().unwrap();
            *investment.entry(ida.clone()).or_default() += a.contribution;
            org_projects.insert((ida.clone(), pid.clone()));
            for b in &parts {
                let idb = b.org_id.clone().unwrap();
                if home(b) && ida < idb {
                    pair_projects.insert((ida.clone(), idb, pid.clone()));
                }
            }
        }
    }
    let mut weights: BTreeMap<(String, String), usize> = BTreeMap::new();
    for (a, b, _) in pair_projects {
        *weights.entry((a, b)).or_default() += 1;
    }
    CollaborationGraph {
        nodes: investment
            .into_iter()
            .map(|(id, inv)| {
                let o = org(&id);
                Node {
                    project_count: org_projects.iter().filter(|(x, _)| *x == id).count(),
                    display_name: o.display_name.clone(),
                    org_type: o.org_type,
                    investment: inv,
                    org_id: id,
                }
            })
            .collect(),
        edges: weights
            .into_iter()
            .map(|((a, b), weight)| Edge {
                org_a: a,
                org_b: b,
                weight,
            })
            .collect(),
    }
}

fn project_matches(
    p: &Project,
    parts: &[&Participation],
    orgs: &HashMap<&str, &Organisation>,
    f: &FilterSpec,
) -> bool {
    let resolved: Vec<Option<&Organisation>> = parts
        .iter()
        .map(|x| x.org_id.as_deref().and_then(|id| orgs.get(id).copied()))
        .collect();
    let types = f.institution_types.is_empty()
        || resolved.iter().flatten().any(|o| f.institution_types.contains(&o.org_type));
    let provinces = f.provinces.is_empty()
        || resolved
            .iter()
            .flatten()
            .any(|o| !o.province.is_empty() && f.provinces.contains(&o.province));
    let years = f.years.is_empty() || f.years.contains(&p.start_year);
    let instruments = f.instruments.is_empty() || f.instruments.contains(&p.instrument);
    let programmes = f.programmes.is_empty() || f.programmes.contains(&p.programme);
    let areas = f.priority_areas.is_empty()
        || p.enrichment.priority_areas.keys().any(|a| f.priority_areas.contains(a));
    let topics = f.topics.is_empty() || p.enrichment.topic_id.is_some_and(|t| f.topics.contains(&t));
    let sdgs = f.sdgs.is_empty() || p.enrichment.sdg_tags.iter().any(|t| f.sdgs.contains(&t.sdg));
    let keywords = f.keyword_terms.is_empty() || {
        let doc: BTreeSet<String> = tokenize(&p.text()).into_iter().collect();
        f.keyword_terms
            .iter()
            .all(|t| tokenize(t).iter().all(|tok| doc.contains(tok)))
    };
    let participant = match f.participant_name.as_ref().map(|n| n.trim().to_lowercase()) {
        Some(n) if !n.is_empty() => parts.iter().zip(&resolved).any(|(x, o)| match o {
            Some(o) => {
                o.display_name.to_lowercase().contains(&n)
                    || o.aliases.iter().any(|a| a.to_lowercase().contains(&n))
            }
            None => x.raw_org_name.to_lowercase().contains(&n),
        }),
        _ => true,
    };
    types && provinces && years && instruments && programmes && areas && topics && sdgs && keywords && participant
}

/// Filter every project, then sort by funder contribution desc, id asc.
pub fn linear_scan(s: &Snapshot, f: &FilterSpec) -> Vec<String> {
    let orgs: HashMap<&str, &Organisation> = s.organisations.iter().map(|o| (o.org_id.as_str(), o)).collect();
    let mut parts: HashMap<&str, Vec<&Participation>> = HashMap::new();
    for x in &s.participations {
        parts.entry(x.project_id.as_str()).or_default().push(x);
    }
    let none = Vec::new();
    let mut hits: Vec<&Project> = s
        .projects
        .iter()
        .filter(|p| project_matches(p, parts.get(p.project_id.as_str()).unwrap_or(&none), &orgs, f))
        .collect();
    hits.sort_by(|a, b| {
        b.funder_contribution
            .cmp(&a.funder_contribution)
            .then_with(|| a.project_id.cmp(&b.project_id))
    });
    hits.into_iter().map(|p| p.project_id.clone()).collect()
}

/// Facet values present in a snapshot, for drawing random filters.
pub struct FilterPool {
    pub years: Vec<i32>,
    pub types: Vec<s3monitor::entity_resolution::OrgType>,
    pub provinces: Vec<String>,
    pub instruments: Vec<String>,
    pub programmes: Vec<String>,
    pub areas: Vec<String>,
    pub topics: Vec<usize>,
    pub terms: Vec<String>,
    pub names: Vec<String>,
}

impl FilterPool {
    pub fn new(s: &Snapshot) -> FilterPool {
        let set = |it: &mut dyn Iterator<Item = String>| it.collect::<BTreeSet<_>>().into_iter().collect::<Vec<_>>();
        let mut terms: Vec<String> = set(&mut s.projects.iter().flat_map(|p| tokenize(&p.title)));
        terms.push("nonexistentterm".into());
        let mut names: Vec<String> = s
            .organisations
            .iter()
            .map(|o| {
                let w: Vec<&str> = o.display_name.split(' ').collect();
                w[w.len() / 2].to_string()
            })
            .collect();
        names.push("zzz".into());
        FilterPool {
            years: s.projects.iter().map(|p| p.start_year).collect::<BTreeSet<_>>().into_iter().collect(),
            types: s.organisations.iter().map(|o| o.org_type).collect::<BTreeSet<_>>().into_iter().collect(),
            provinces: set(&mut s.organisations.iter().map(|o| o.province.clone()).filter(|p| !p.is_empty())),
            instruments: set(&mut s.projects.iter().map(|p| p.instrument.clone())),
            programmes: set(&mut s.projects.iter().map(|p| p.programme.clone())),
            areas: s.priority_labels.clone(),
            topics: s.topics.iter().map(|t| t.topic_id).collect(),
            terms,
            names,
        }
    }

    pub fn random(&self, rng: &mut impl Rng) -> FilterSpec {
        fn some<T: Clone + Ord>(rng: &mut impl Rng, pool: &[T], p: f64) -> BTreeSet<T> {
            if pool.is_empty() || !rng.random_bool(p) {
                return BTreeSet::new();
            }
            let n = rng.random_range(1..=3);
            (0..n).map(|_| pool.choose(rng).unwrap().clone()).collect()
        }
        let mut f = FilterSpec {
            years: some(rng, &self.years, 0.4),
            institution_types: some(rng, &self.types, 0.25),
            provinces: some(rng, &self.provinces, 0.25),
            instruments: some(rng, &self.instruments, 0.25),
            programmes: some(rng, &self.programmes, 0.15),
            priority_areas: some(rng, &self.areas, 0.35),
            topics: some(rng, &self.topics, 0.3),
            sdgs: some(rng, &(1..=17).collect::<Vec<u8>>(), 0.3),
            ..FilterSpec::default()
        };
        if rng.random_bool(0.3) {
            f.keyword_terms = (0..rng.random_range(1..=2))
                .map(|_| self.terms.choose(rng).unwrap().clone())
                .collect();
        }
        if rng.random_bool(0.15) {
            f.participant_name = Some(self.names.choose(rng).unwrap().clone());
        }
        f
    }
}

/// Pairwise precision and recall of a resolution against injected alias
/// groups, over all (country, raw name) pairs.
pub fn pairwise_scores(groups: &[AliasGroup], resolution: &Resolution) -> (f64, f64) {
    let mut names: Vec<((String, String), usize)> = Vec::new();
    for (g, group) in groups.iter().enumerate() {
        for n in &group.names {
            names.push(((group.country.clone(), n.clone()), g));
        }
    }
    let predicted: HashMap<(String, String), String> = resolution
        .alias_keys()
        .map(|(c, n, id)| ((c.to_string(), n.to_string()), id.to_string()))
        .collect();
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for i in 0..names.len() {
        for j in i + 1..names.len() {
            let truth = names[i].1 == names[j].1;
            let pred = predicted.get(&names[i].0).is_some() && predicted.get(&names[i].0) == predicted.get(&names[j].0);
            match (pred, truth) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 1.0 } else { a as f64 / b as f64 };
    (ratio(tp, tp + fp), ratio(tp, tp + fn_))
}

pub fn write_fixture(dir: &Path) -> Fixture {
    let fx = Fixture::generate(&FixtureConfig::default());
    fx.write(dir).unwrap();
    fx
}

/// Runs the whole pipeline on the default fixture in a scratch directory.
pub fn fixture_snapshot() -> Snapshot {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    Pipeline::from_path(&dir.path().join("config.json"))
        .unwrap()
        .all()
        .unwrap()
}

/// Points in `k` well separated Gaussian blobs, with their blob index.
pub fn blobs(k: usize, per: usize, dim: usize, spread: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spread).unwrap();
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for c in 0..k {
        let mut centre = vec![0.0; dim];
        centre[c % dim] = 10.0;
        if c >= dim {
            centre[(c + 1) % dim] = 10.0;
        }
        for _ in 0..per {
            points.push(centre.iter().map(|x| x + noise.sample(&mut rng)).collect());
            labels.push(c);
        }
    }
    (points, labels)
}
