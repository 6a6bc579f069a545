//! Faceted search, statistics and CSV export over an enriched snapshot.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::collaboration_graph::{
    build_graph, rank_external_partners, write_external_csv, CollaborationGraph, ExternalPartner,
};
use crate::entity_resolution::{OrgType, Organisation};
use crate::ingest::{Participation, Project, CANONICAL_PROJECT_COLUMNS};
use crate::money::Eur;
use crate::text_embedding::tokenize;

pub const TOP_N: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TopicInfo {
    pub topic_id: usize,
    pub label: String,
    pub top_terms: Vec<(String, f64)>,
    pub size: usize,
}

/// Everything the query layer and the API serve. Immutable once built.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Snapshot {
    pub home_country: String,
    pub priority_labels: Vec<String>,
    /// Sorted by project id, with enrichment filled in.
    pub projects: Vec<Project>,
    /// With resolved org ids.
    pub participations: Vec<Participation>,
    pub organisations: Vec<Organisation>,
    pub topics: Vec<TopicInfo>,
    pub network_layout: BTreeMap<String, [f64; 2]>,
    /// Run summary shown by `/api/meta`.
    pub run: serde_json::Value,
}

impl Snapshot {
    pub fn load(path: &Path) -> std::io::Result<Snapshot> {
        let data = std::fs::read(path)?;
        serde_json::from_slice(&data).map_err(std::io::Error::other)
    }

    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("snapshot serializes")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct FilterSpec {
    pub keyword_terms: Vec<String>,
    pub participant_name: Option<String>,
    pub institution_types: BTreeSet<OrgType>,
    pub years: BTreeSet<i32>,
    pub provinces: BTreeSet<String>,
    pub instruments: BTreeSet<String>,
    pub programmes: BTreeSet<String>,
    pub priority_areas: BTreeSet<String>,
    pub topics: BTreeSet<usize>,
    pub sdgs: BTreeSet<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FilterError {
    #[error("unknown parameter {0:?}")]
    UnknownParam(String),
    #[error("parameter {param:?}: invalid value {value:?}")]
    BadValue { param: String, value: String },
    #[error("parameter {0:?} given more than once")]
    Repeated(String),
}

/// Query parameters that belong to paging rather than filtering.
pub const PAGING_PARAMS: [&str; 2] = ["offset", "limit"];

impl FilterSpec {
    pub fn is_empty(&self) -> bool {
        *self == FilterSpec::default()
    }

    /// Parses repeated query parameters (`year=2019&year=2020&sdg=6&q=term`).
    /// Paging parameters are skipped; anything else unknown is an error.
    pub fn from_query(query: &str) -> Result<FilterSpec, FilterError> {
        let mut f = FilterSpec::default();
        for (key, value) in form_urlencoded::parse(query.as_bytes()) {
            let value = value.trim().to_string();
            let bad = || FilterError::BadValue {
                param: key.to_string(),
                value: value.clone(),
            };
            match key.as_ref() {
                "q" => {
                    if !value.is_empty() {
                        f.keyword_terms.push(value.clone());
                    }
                }
                "participant" => {
                    if f.participant_name.is_some() {
                        return Err(FilterError::Repeated(key.to_string()));
                    }
                    f.participant_name = Some(value.clone());
                }
                "type" => {
                    f.institution_types.insert(OrgType::parse(&value.to_uppercase()).ok_or_else(bad)?);
                }
                "year" => {
                    f.years.insert(value.parse().map_err(|_| bad())?);
                }
                "province" => {
                    f.provinces.insert(value.clone());
                }
                "instrument" => {
                    f.instruments.insert(value.clone());
                }
                "programme" => {
                    f.programmes.insert(value.clone());
                }
                "area" => {
                    f.priority_areas.insert(value.clone());
                }
                "topic" => {
                    f.topics.insert(value.parse().map_err(|_| bad())?);
                }
                "sdg" => match value.parse::<u8>() {
                    Ok(n) if (1..=17).contains(&n) => {
                        f.sdgs.insert(n);
                    }
                    _ => return Err(bad()),
                },
                k if PAGING_PARAMS.contains(&k) => {}
                other => return Err(FilterError::UnknownParam(other.to_string())),
            }
        }
        Ok(f)
    }

    /// Inverse of [`FilterSpec::from_query`].
    pub fn to_query(&self) -> String {
        let mut s = form_urlencoded::Serializer::new(String::new());
        for q in &self.keyword_terms {
            s.append_pair("q", q);
        }
        if let Some(p) = &self.participant_name {
            s.append_pair("participant", p);
        }
        for t in &self.institution_types {
            s.append_pair("type", t.as_str());
        }
        for y in &self.years {
            s.append_pair("year", &y.to_string());
        }
        for v in &self.provinces {
            s.append_pair("province", v);
        }
        for v in &self.instruments {
            s.append_pair("instrument", v);
        }
        for v in &self.programmes {
            s.append_pair("programme", v);
        }
        for v in &self.priority_areas {
            s.append_pair("area", v);
        }
        for t in &self.topics {
            s.append_pair("topic", &t.to_string());
        }
        for v in &self.sdgs {
            s.append_pair("sdg", &v.to_string());
        }
        s.finish()
    }
}

type Postings = Vec<usize>;

fn push_posting<K: Ord>(map: &mut BTreeMap<K, Postings>, key: K, doc: usize) {
    let list = map.entry(key).or_default();
    if list.last() != Some(&doc) {
        list.push(doc);
    }
}

/// Inverted text index plus one postings map per facet. Postings hold
/// project positions in the snapshot and are sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchIndex {
    pub snapshot: Snapshot,
    pub text: BTreeMap<String, Postings>,
    pub by_type: BTreeMap<OrgType, Postings>,
    pub by_year: BTreeMap<i32, Postings>,
    pub by_province: BTreeMap<String, Postings>,
    pub by_instrument: BTreeMap<String, Postings>,
    pub by_programme: BTreeMap<String, Postings>,
    pub by_area: BTreeMap<String, Postings>,
    pub by_topic: BTreeMap<usize, Postings>,
    pub by_sdg: BTreeMap<u8, Postings>,
    /// Lowercased names (aliases and display name) of each project's
    /// participants.
    participant_names: Vec<Vec<String>>,
    /// Position of each project in the default ordering.
    rank: Vec<usize>,
    org_index: HashMap<String, usize>,
    parts_of: Vec<Vec<usize>>,
}

impl SearchIndex {
    pub fn build(snapshot: Snapshot) -> SearchIndex {
        let org_index: HashMap<String, usize> = snapshot
            .organisations
            .iter()
            .enumerate()
            .map(|(i, o)| (o.org_id.clone(), i))
            .collect();
        let pos: HashMap<&str, usize> = snapshot
            .projects
            .iter()
            .enumerate()
            .map(|(i, p)| (p.project_id.as_str(), i))
            .collect();
        let n = snapshot.projects.len();
        let mut parts_of = vec![Vec::new(); n];
        for (k, part) in snapshot.participations.iter().enumerate() {
            if let Some(&i) = pos.get(part.project_id.as_str()) {
                parts_of[i].push(k);
            }
        }

        let mut text = BTreeMap::new();
        let mut by_type = BTreeMap::new();
        let mut by_year = BTreeMap::new();
        let mut by_province = BTreeMap::new();
        let mut by_instrument = BTreeMap::new();
        let mut by_programme = BTreeMap::new();
        let mut by_area = BTreeMap::new();
        let mut by_topic = BTreeMap::new();
        let mut by_sdg = BTreeMap::new();
        let mut participant_names = Vec::with_capacity(n);
        for (i, p) in snapshot.projects.iter().enumerate() {
            for tok in tokenize(&p.text()).into_iter().collect::<BTreeSet<_>>() {
                push_posting(&mut text, tok, i);
            }
            push_posting(&mut by_year, p.start_year, i);
            push_posting(&mut by_instrument, p.instrument.clone(), i);
            push_posting(&mut by_programme, p.programme.clone(), i);
            for area in p.enrichment.priority_areas.keys() {
                push_posting(&mut by_area, area.clone(), i);
            }
            if let Some(t) = p.enrichment.topic_id {
                push_posting(&mut by_topic, t, i);
            }
            for s in p.enrichment.sdgs().collect::<BTreeSet<_>>() {
                push_posting(&mut by_sdg, s, i);
            }
            let mut types = BTreeSet::new();
            let mut provinces = BTreeSet::new();
            let mut names = BTreeSet::new();
            for &k in &parts_of[i] {
                let part = &snapshot.participations[k];
                match part.org_id.as_ref().and_then(|id| org_index.get(id)) {
                    Some(&o) => {
                        let org = &snapshot.organisations[o];
                        types.insert(org.org_type);
                        if !org.province.is_empty() {
                            provinces.insert(org.province.clone());
                        }
                        names.insert(org.display_name.to_lowercase());
                        names.extend(org.aliases.iter().map(|a| a.to_lowercase()));
                    }
                    None => {
                        names.insert(part.raw_org_name.to_lowercase());
                    }
                }
            }
            for t in types {
                push_posting(&mut by_type, t, i);
            }
            for prov in provinces {
                push_posting(&mut by_province, prov, i);
            }
            participant_names.push(names.into_iter().collect());
        }

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            let (pa, pb) = (&snapshot.projects[a], &snapshot.projects[b]);
            pb.funder_contribution
                .cmp(&pa.funder_contribution)
                .then_with(|| pa.project_id.cmp(&pb.project_id))
        });
        let mut rank = vec![0; n];
        for (r, &i) in order.iter().enumerate() {
            rank[i] = r;
        }
        SearchIndex {
            snapshot,
            text,
            by_type,
            by_year,
            by_province,
            by_instrument,
            by_programme,
            by_area,
            by_topic,
            by_sdg,
            participant_names,
            rank,
            org_index,
            parts_of,
        }
    }

    pub fn len(&self) -> usize {
        self.snapshot.projects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshot.projects.is_empty()
    }

    pub fn project(&self, id: &str) -> Option<&Project> {
        self.snapshot
            .projects
            .binary_search_by(|p| p.project_id.as_str().cmp(id))
            .ok()
            .map(|i| &self.snapshot.projects[i])
    }

    pub fn organisation(&self, org_id: &str) -> Option<&Organisation> {
        self.org_index.get(org_id).map(|&i| &self.snapshot.organisations[i])
    }

    pub fn participations_of(&self, id: &str) -> Vec<&Participation> {
        match self.snapshot.projects.binary_search_by(|p| p.project_id.as_str().cmp(id)) {
            Ok(i) => self.parts_of[i].iter().map(|&k| &self.snapshot.participations[k]).collect(),
            Err(_) => Vec::new(),
        }
    }

    /// Project positions matching the filter, in default order.
    pub fn query_positions(&self, filter: &FilterSpec) -> Vec<usize> {
        fn facet<K: Ord>(map: &BTreeMap<K, Postings>, selected: &BTreeSet<K>) -> Option<BTreeSet<usize>> {
            if selected.is_empty() {
                return None;
            }
            Some(
                selected
                    .iter()
                    .filter_map(|k| map.get(k))
                    .flatten()
                    .copied()
                    .collect(),
            )
        }
        let mut constraints: Vec<BTreeSet<usize>> = [
            facet(&self.by_type, &filter.institution_types),
            facet(&self.by_year, &filter.years),
            facet(&self.by_province, &filter.provinces),
            facet(&self.by_instrument, &filter.instruments),
            facet(&self.by_programme, &filter.programmes),
            facet(&self.by_area, &filter.priority_areas),
            facet(&self.by_topic, &filter.topics),
            facet(&self.by_sdg, &filter.sdgs),
        ]
        .into_iter()
        .flatten()
        .collect();
        let terms: BTreeSet<String> = filter.keyword_terms.iter().flat_map(|t| tokenize(t)).collect();
        for term in terms {
            constraints.push(self.text.get(&term).into_iter().flatten().copied().collect());
        }
        if let Some(name) = filter.participant_name.as_ref().map(|s| s.trim().to_lowercase()) {
            if !name.is_empty() {
                constraints.push(
                    self.participant_names
                        .iter()
                        .enumerate()
                        .filter(|(_, names)| names.iter().any(|n| n.contains(&name)))
                        .map(|(i, _)| i)
                        .collect(),
                );
            }
        }
        constraints.sort_by_key(|c| c.len());
        let mut hits: Vec<usize> = match constraints.split_first() {
            None => (0..self.len()).collect(),
            Some((first, rest)) => first
                .iter()
                .copied()
                .filter(|i| rest.iter().all(|c| c.contains(i)))
                .collect(),
        };
        hits.sort_by_key(|&i| self.rank[i]);
        hits
    }

    /// Matching project ids ordered by funder contribution desc, then id.
    pub fn query(&self, filter: &FilterSpec) -> Vec<String> {
        self.query_positions(filter)
            .into_iter()
            .map(|i| self.snapshot.projects[i].project_id.clone())
            .collect()
    }

    pub fn query_projects(&self, filter: &FilterSpec) -> Vec<&Project> {
        self.query_positions(filter)
            .into_iter()
            .map(|i| &self.snapshot.projects[i])
            .collect()
    }

    fn id_set(&self, filter: &FilterSpec) -> BTreeSet<String> {
        self.query(filter).into_iter().collect()
    }

    pub fn network(&self, filter: &FilterSpec) -> CollaborationGraph {
        build_graph(&self.id_set(filter), &self.snapshot.participations, &self.snapshot.organisations)
    }

    pub fn external_partners(&self, filter: &FilterSpec, top_n: Option<usize>) -> Vec<ExternalPartner> {
        rank_external_partners(
            &self.id_set(filter),
            &self.snapshot.participations,
            &self.snapshot.organisations,
            top_n,
        )
    }

    pub fn stats(&self, filter: &FilterSpec) -> StatsSummary {
        let hits = self.query_positions(filter);
        let mut s = StatsSummary::default();
        let mut invest: BTreeMap<&str, (Eur, BTreeSet<usize>)> = BTreeMap::new();
        for &i in &hits {
            let p = &self.snapshot.projects[i];
            s.n_projects += 1;
            s.total_investment += p.funder_contribution;
            *s.by_year.entry(p.start_year).or_default() += 1;
            for a in p.enrichment.priority_areas.keys() {
                *s.by_area.entry(a.clone()).or_default() += 1;
            }
            if let Some(t) = p.enrichment.topic_id {
                *s.by_topic.entry(t).or_default() += 1;
            }
            for sdg in p.enrichment.sdgs().collect::<BTreeSet<_>>() {
                *s.by_sdg.entry(sdg).or_default() += 1;
            }
            let mut types = BTreeSet::new();
            for &k in &self.parts_of[i] {
                let part = &self.snapshot.participations[k];
                if let Some(id) = part.org_id.as_deref() {
                    let e = invest.entry(id).or_default();
                    e.0 += part.contribution;
                    e.1.insert(i);
                    if let Some(o) = self.organisation(id) {
                        types.insert(o.org_type);
                    }
                }
            }
            for t in types {
                *s.by_org_type.entry(t).or_default() += 1;
            }
        }
        s.n_participants = invest.len();
        let mut ranking: Vec<ParticipantRank> = invest
            .into_iter()
            .map(|(id, (inv, projects))| {
                let org = self.organisation(id);
                ParticipantRank {
                    org_id: id.to_string(),
                    display_name: org.map(|o| o.display_name.clone()).unwrap_or_default(),
                    org_type: org.map_or(OrgType::Other, |o| o.org_type),
                    is_home_region: org.is_some_and(|o| o.is_home_region),
                    investment: inv,
                    project_count: projects.len(),
                }
            })
            .collect();
        ranking.sort_by(|a, b| {
            b.investment
                .cmp(&a.investment)
                .then_with(|| a.display_name.cmp(&b.display_name))
                .then_with(|| a.org_id.cmp(&b.org_id))
        });
        ranking.truncate(TOP_N);
        s.top_participants = ranking;
        s.top_external_partners = self.external_partners(filter, Some(TOP_N));
        s
    }

    pub fn export_csv(&self, filter: &FilterSpec, view: ExportView) -> Vec<u8> {
        let mut out = Vec::new();
        let res = match view {
            ExportView::Projects => self.write_projects(filter, &mut out),
            ExportView::Participants => self.write_participants(filter, &mut out),
            ExportView::Nodes => self.network(filter).write_nodes_csv(&mut out),
            ExportView::Edges => self.network(filter).write_edges_csv(&mut out),
            ExportView::External => write_external_csv(&self.external_partners(filter, None), &mut out),
        };
        res.expect("writing to memory");
        out
    }

    fn write_projects(&self, filter: &FilterSpec, out: &mut Vec<u8>) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<&str> = CANONICAL_PROJECT_COLUMNS.to_vec();
        header.extend(PROJECT_EXPORT_EXTRA_COLUMNS);
        w.write_record(&header)?;
        for p in self.query_projects(filter) {
            let tags: Vec<&str> = p.metadata_tags.iter().map(String::as_str).collect();
            let areas: Vec<&str> = p.enrichment.priority_areas.keys().map(String::as_str).collect();
            let sdgs: Vec<String> = p.enrichment.sdgs().map(|s| s.to_string()).collect();
            let topic = p.enrichment.topic_id;
            let label = topic
                .and_then(|t| self.snapshot.topics.iter().find(|x| x.topic_id == t))
                .map(|t| t.label.clone())
                .unwrap_or_default();
            w.write_record([
                p.project_id.as_str(),
                p.source.as_str(),
                &p.acronym,
                &p.title,
                &p.abstract_text,
                &p.programme,
                &p.instrument,
                &p.call_topic_code,
                &p.start_year.to_string(),
                &p.end_year.to_string(),
                &p.total_cost.to_string(),
                &p.funder_contribution.to_string(),
                &tags.join(";"),
                &areas.join(";"),
                &topic.map(|t| t.to_string()).unwrap_or_default(),
                &label,
                &sdgs.join(";"),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    fn write_participants(&self, filter: &FilterSpec, out: &mut Vec<u8>) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(PARTICIPANT_EXPORT_COLUMNS)?;
        for i in self.query_positions(filter) {
            for &k in &self.parts_of[i] {
                let part = &self.snapshot.participations[k];
                let org = part.org_id.as_deref().and_then(|id| self.organisation(id));
                w.write_record([
                    part.project_id.as_str(),
                    part.org_id.as_deref().unwrap_or(""),
                    org.map(|o| o.display_name.as_str()).unwrap_or(""),
                    &part.raw_org_name,
                    &part.country,
                    org.map(|o| o.province.as_str()).unwrap_or(&part.province),
                    org.map(|o| o.org_type.as_str()).unwrap_or(""),
                    part.role.as_str(),
                    &part.contribution.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Distinct values and project counts of every facet over the whole
    /// snapshot.
    pub fn facet_values(&self) -> FacetValues {
        fn counts<K: Ord + Clone>(map: &BTreeMap<K, Postings>) -> BTreeMap<K, usize> {
            map.iter().map(|(k, v)| (k.clone(), v.len())).collect()
        }
        FacetValues {
            types: counts(&self.by_type),
            years: counts(&self.by_year),
            provinces: counts(&self.by_province),
            instruments: counts(&self.by_instrument),
            programmes: counts(&self.by_programme),
            areas: counts(&self.by_area),
            topics: counts(&self.by_topic),
            sdgs: counts(&self.by_sdg),
        }
    }
}

pub const PROJECT_EXPORT_EXTRA_COLUMNS: [&str; 4] = ["priorityAreas", "topicId", "topicLabel", "sdgs"];

pub const PARTICIPANT_EXPORT_COLUMNS: [&str; 9] = [
    "projectId",
    "orgId",
    "displayName",
    "rawOrgName",
    "country",
    "province",
    "orgType",
    "role",
    "contribution",
];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FacetValues {
    pub types: BTreeMap<OrgType, usize>,
    pub years: BTreeMap<i32, usize>,
    pub provinces: BTreeMap<String, usize>,
    pub instruments: BTreeMap<String, usize>,
    pub programmes: BTreeMap<String, usize>,
    pub areas: BTreeMap<String, usize>,
    pub topics: BTreeMap<usize, usize>,
    pub sdgs: BTreeMap<u8, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ParticipantRank {
    pub org_id: String,
    pub display_name: String,
    pub org_type: OrgType,
    pub is_home_region: bool,
    pub investment: Eur,
    pub project_count: usize,
}

/// Aggregates over one query result. Distributions count projects.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StatsSummary {
    pub n_projects: usize,
    pub n_participants: usize,
    pub total_investment: Eur,
    pub by_year: BTreeMap<i32, usize>,
    pub by_area: BTreeMap<String, usize>,
    pub by_topic: BTreeMap<usize, usize>,
    pub by_sdg: BTreeMap<u8, usize>,
    pub by_org_type: BTreeMap<OrgType, usize>,
    pub top_participants: Vec<ParticipantRank>,
    pub top_external_partners: Vec<ExternalPartner>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ExportView {
    Projects,
    Participants,
    Nodes,
    Edges,
    External,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown export view {0:?}")]
pub struct UnknownView(pub String);

impl std::str::FromStr for ExportView {
    type Err = UnknownView;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "PROJECTS" => Ok(ExportView::Projects),
            "PARTICIPANTS" => Ok(ExportView::Participants),
            "NODES" => Ok(ExportView::Nodes),
            "EDGES" => Ok(ExportView::Edges),
            "EXTERNAL" => Ok(ExportView::External),
            _ => Err(UnknownView(s.to_string())),
        }
    }
}

impl ExportView {
    pub const ALL: [ExportView; 5] = [
        ExportView::Projects,
        ExportView::Participants,
        ExportView::Nodes,
        ExportView::Edges,
        ExportView::External,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExportView::Projects => "projects",
            ExportView::Participants => "participants",
            ExportView::Nodes => "nodes",
            ExportView::Edges => "edges",
            ExportView::External => "external",
        }
    }
}
