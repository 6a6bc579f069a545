//! Organisation entity resolution.
//!
//! Raw participant names from both sources are grouped into canonical
//! [`Organisation`]s. Names merge when their normalized forms are identical
//! (same country), or when they share a (country, first token) block and their
//! Jaro–Winkler similarity reaches the configured threshold. An override file
//! can force pairs together or apart; forced splits act as cannot-link
//! constraints on every later union, so they hold under transitive closure.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

pub const DEFAULT_THRESHOLD: f64 = 0.93;

const LEGAL_FORMS: &str = include_str!("../data/legal_forms.txt");
const ORG_TYPE_MAP: &str = include_str!("../data/org_type_map.csv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OrgType {
    University,
    ResearchCentre,
    Company,
    PublicAdmin,
    Nonprofit,
    Other,
}

impl OrgType {
    pub const ALL: [OrgType; 6] = [
        OrgType::University,
        OrgType::ResearchCentre,
        OrgType::Company,
        OrgType::PublicAdmin,
        OrgType::Nonprofit,
        OrgType::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OrgType::University => "UNIVERSITY",
            OrgType::ResearchCentre => "RESEARCH_CENTRE",
            OrgType::Company => "COMPANY",
            OrgType::PublicAdmin => "PUBLIC_ADMIN",
            OrgType::Nonprofit => "NONPROFIT",
            OrgType::Other => "OTHER",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        OrgType::ALL.into_iter().find(|t| t.as_str() == s)
    }
}

impl fmt::Display for OrgType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Organisation {
    pub org_id: String,
    pub display_name: String,
    pub aliases: BTreeSet<String>,
    pub org_type: OrgType,
    pub country: String,
    pub province: String,
    pub is_home_region: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Outcome {
    MergedExact,
    MergedFuzzy,
    MergedOverride,
    Distinct,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::MergedExact => "MERGED_EXACT",
            Outcome::MergedFuzzy => "MERGED_FUZZY",
            Outcome::MergedOverride => "MERGED_OVERRIDE",
            Outcome::Distinct => "DISTINCT",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolutionDecision {
    pub raw_name_a: String,
    pub raw_name_b: String,
    pub score: f64,
    pub outcome: Outcome,
    pub threshold_used: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OverrideAction {
    Merge,
    Split,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OverrideEntry {
    pub name_a: String,
    pub name_b: String,
    pub action: OverrideAction,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OverrideFile {
    pub entries: Vec<OverrideEntry>,
}

#[derive(Debug, thiserror::Error)]
pub enum ResolutionError {
    #[error("override pair ({0:?}, {1:?}) is forced both to merge and to split")]
    ConflictingOverride(String, String),
    #[error("override file line {line}: {reason}")]
    BadOverride { line: u64, reason: String },
    #[error("override file: {0}")]
    Csv(#[from] csv::Error),
    #[error("override file: {0}")]
    Io(#[from] std::io::Error),
}

impl OverrideFile {
    pub fn load(path: &Path) -> Result<Self, ResolutionError> {
        let data = std::fs::read_to_string(path)?;
        Self::parse(&data)
    }

    /// Parses `nameA,nameB,action` rows with `action` in {merge, split}.
    pub fn parse(data: &str) -> Result<Self, ResolutionError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(data.trim_start_matches('\u{feff}').as_bytes());
        let mut entries = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            let field = |i: usize| rec.get(i).unwrap_or("").trim().to_string();
            let action = match field(2).to_lowercase().as_str() {
                "merge" => OverrideAction::Merge,
                "split" => OverrideAction::Split,
                other => {
                    return Err(ResolutionError::BadOverride {
                        line,
                        reason: format!("unknown action {other:?}"),
                    })
                }
            };
            let (name_a, name_b) = (field(0), field(1));
            if name_a.is_empty() || name_b.is_empty() {
                return Err(ResolutionError::BadOverride {
                    line,
                    reason: "empty name".into(),
                });
            }
            entries.push(OverrideEntry {
                name_a,
                name_b,
                action,
            });
        }
        Ok(OverrideFile { entries })
    }
}

fn legal_forms() -> &'static BTreeSet<&'static str> {
    static SET: OnceLock<BTreeSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| {
        LEGAL_FORMS
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect()
    })
}

fn fold(raw: &str) -> String {
    raw.nfkd()
        .filter(|c| !is_combining_mark(*c))
        .collect::<String>()
        .to_lowercase()
}

/// Case-, accent- and punctuation-folded organisation name with legal-form
/// tokens removed.
pub fn normalize_name(raw: &str) -> String {
    let folded = fold(raw);
    let spaced: String = folded
        .chars()
        .filter(|c| !matches!(c, '.' | '\'' | '\u{2019}'))
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    let stop = legal_forms();
    spaced
        .split_whitespace()
        .filter(|t| !stop.contains(t))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Jaro–Winkler similarity (prefix scale 0.1, prefix capped at 4 chars).
pub fn jaro_winkler(a: &str, b: &str) -> f64 {
    let s: Vec<char> = a.chars().collect();
    let t: Vec<char> = b.chars().collect();
    let j = jaro(&s, &t);
    let prefix = s
        .iter()
        .zip(&t)
        .take(4)
        .take_while(|(x, y)| x == y)
        .count();
    j + prefix as f64 * 0.1 * (1.0 - j)
}

fn jaro(s: &[char], t: &[char]) -> f64 {
    if s == t {
        return 1.0;
    }
    if s.is_empty() || t.is_empty() {
        return 0.0;
    }
    let window = (s.len().max(t.len()) / 2).saturating_sub(1);
    let mut s_match = vec![false; s.len()];
    let mut t_match = vec![false; t.len()];
    let mut matches = 0usize;
    for (i, c) in s.iter().enumerate() {
        let lo = i.saturating_sub(window);
        let hi = (i + window + 1).min(t.len());
        for j in lo..hi {
            if !t_match[j] && t[j] == *c {
                s_match[i] = true;
                t_match[j] = true;
                matches += 1;
                break;
            }
        }
    }
    if matches == 0 {
        return 0.0;
    }
    let s_seq = s.iter().zip(&s_match).filter(|(_, m)| **m).map(|(c, _)| c);
    let t_seq = t.iter().zip(&t_match).filter(|(_, m)| **m).map(|(c, _)| c);
    let half_transpositions = s_seq.zip(t_seq).filter(|(x, y)| x != y).count();
    let m = matches as f64;
    let transpositions = half_transpositions as f64 / 2.0;
    (m / s.len() as f64 + m / t.len() as f64 + (m - transpositions) / m) / 3.0
}

struct TypeTable {
    activity: HashMap<String, OrgType>,
    regional: HashMap<String, OrgType>,
}

fn type_table() -> &'static TypeTable {
    static TABLE: OnceLock<TypeTable> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut table = TypeTable {
            activity: HashMap::new(),
            regional: HashMap::new(),
        };
        let mut rdr = csv::Reader::from_reader(ORG_TYPE_MAP.as_bytes());
        for rec in rdr.records() {
            let rec = rec.expect("bundled org type table is valid CSV");
            let ty = OrgType::parse(&rec[2]).expect("bundled org type table uses known types");
            match &rec[0] {
                "activity" => table.activity.insert(rec[1].to_string(), ty),
                _ => table.regional.insert(fold(&rec[1]), ty),
            };
        }
        table
    })
}

/// Maps a regional organisation-type label or an EU activity code to
/// [`OrgType`]. The regional label wins when both are known.
pub fn map_org_type(org_type_raw: &str, activity_type_code: &str) -> OrgType {
    let table = type_table();
    let regional = fold(org_type_raw.trim());
    if let Some(t) = table.regional.get(regional.as_str()) {
        return *t;
    }
    table
        .activity
        .get(activity_type_code.trim().to_uppercase().as_str())
        .copied()
        .unwrap_or(OrgType::Other)
}

/// One observed occurrence of an organisation name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NameRecord {
    pub name: String,
    pub country: String,
    pub org_type_raw: String,
    pub activity_type: String,
    pub province: String,
}

impl NameRecord {
    pub fn new(name: &str, country: &str) -> Self {
        NameRecord {
            name: name.to_string(),
            country: country.to_string(),
            org_type_raw: String::new(),
            activity_type: String::new(),
            province: String::new(),
        }
    }
}

impl From<&crate::ingest::Participation> for NameRecord {
    fn from(p: &crate::ingest::Participation) -> Self {
        NameRecord {
            name: p.raw_org_name.clone(),
            country: p.country.clone(),
            org_type_raw: p.org_type_raw.clone(),
            activity_type: p.activity_type.clone(),
            province: p.province.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolverConfig {
    pub threshold: f64,
    pub home_country: String,
    /// Raw names always treated as home-region actors.
    pub home_overrides: BTreeSet<String>,
}

impl Default for ResolverConfig {
    fn default() -> Self {
        ResolverConfig {
            threshold: DEFAULT_THRESHOLD,
            home_country: "ES".into(),
            home_overrides: BTreeSet::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Resolution {
    /// Sorted by `org_id`.
    pub organisations: Vec<Organisation>,
    pub decisions: Vec<ResolutionDecision>,
    alias_index: BTreeMap<(String, String), usize>,
}

impl Resolution {
    pub fn org_id_of(&self, country: &str, raw_name: &str) -> Option<&str> {
        self.alias_index
            .get(&(country.to_string(), raw_name.trim().to_string()))
            .map(|&i| self.organisations[i].org_id.as_str())
    }

    /// (country, raw name) → org id for every resolved name.
    pub fn alias_keys(&self) -> impl Iterator<Item = (&str, &str, &str)> + '_ {
        self.alias_index.iter().map(|((c, n), &i)| {
            (c.as_str(), n.as_str(), self.organisations[i].org_id.as_str())
        })
    }

    /// Fills `org_id` on every participation.
    pub fn assign(&self, participations: &mut [crate::ingest::Participation]) {
        for p in participations {
            p.org_id = self.org_id_of(&p.country, &p.raw_org_name).map(str::to_string);
        }
    }

    pub fn write_decisions_csv<W: std::io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["nameA", "nameB", "score", "outcome", "threshold"])?;
        for d in &self.decisions {
            w.write_record([
                d.raw_name_a.as_str(),
                &d.raw_name_b,
                &format!("{:.6}", d.score),
                d.outcome.as_str(),
                &d.threshold_used.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_organisations_csv<W: std::io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "orgId",
            "displayName",
            "orgType",
            "country",
            "province",
            "isHomeRegion",
            "aliases",
        ])?;
        for o in &self.organisations {
            let aliases: Vec<&str> = o.aliases.iter().map(String::as_str).collect();
            w.write_record([
                o.org_id.as_str(),
                &o.display_name,
                o.org_type.as_str(),
                &o.country,
                &o.province,
                if o.is_home_region { "true" } else { "false" },
                &aliases.join("|"),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

struct Node {
    country: String,
    raw: String,
    normalized: String,
    occurrences: usize,
    types: BTreeMap<OrgType, usize>,
    provinces: BTreeMap<String, usize>,
}

/// Union-find with cannot-link constraints between sets.
struct ConstrainedSets {
    parent: Vec<usize>,
    cannot: Vec<BTreeSet<usize>>,
}

impl ConstrainedSets {
    fn new(n: usize) -> Self {
        ConstrainedSets {
            parent: (0..n).collect(),
            cannot: vec![BTreeSet::new(); n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn forbid(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        self.cannot[ra].insert(rb);
        self.cannot[rb].insert(ra);
    }

    /// Returns false when the union is blocked by a cannot-link.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return true;
        }
        if self.cannot[ra].contains(&rb) {
            return false;
        }
        let (keep, gone) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.parent[gone] = keep;
        let moved = std::mem::take(&mut self.cannot[gone]);
        for other in moved {
            self.cannot[other].remove(&gone);
            self.cannot[other].insert(keep);
            self.cannot[keep].insert(other);
        }
        true
    }
}

fn block_key(node: &Node) -> Option<(String, String)> {
    let first = node.normalized.split(' ').next()?;
    (!first.is_empty()).then(|| (node.country.clone(), first.to_string()))
}

fn most_frequent<K: Clone + Ord>(counts: &BTreeMap<K, usize>) -> Option<K> {
    // BTreeMap iteration is ascending, so `max_by_key` keeps the last maximum;
    // reverse to prefer the smallest key on ties.
    counts
        .iter()
        .rev()
        .max_by_key(|(_, &c)| c)
        .map(|(k, _)| k.clone())
}

fn org_id_for(country: &str, aliases: &BTreeSet<String>) -> String {
    let mut h = Sha256::new();
    h.update(country.as_bytes());
    for a in aliases {
        h.update(b"\n");
        h.update(a.as_bytes());
    }
    let digest = hex::encode(h.finalize());
    format!("ORG-{}", &digest[..16])
}

/// Groups raw names into organisations. Output does not depend on input order.
pub fn resolve(
    records: &[NameRecord],
    overrides: &OverrideFile,
    config: &ResolverConfig,
) -> Result<Resolution, ResolutionError> {
    let mut by_key: BTreeMap<(String, String), Node> = BTreeMap::new();
    for r in records {
        let raw = r.name.trim().to_string();
        let key = (r.country.clone(), raw.clone());
        let node = by_key.entry(key).or_insert_with(|| Node {
            country: r.country.clone(),
            normalized: normalize_name(&raw),
            raw,
            occurrences: 0,
            types: BTreeMap::new(),
            provinces: BTreeMap::new(),
        });
        node.occurrences += 1;
        *node
            .types
            .entry(map_org_type(&r.org_type_raw, &r.activity_type))
            .or_default() += 1;
        if !r.province.trim().is_empty() {
            *node.provinces.entry(r.province.trim().to_string()).or_default() += 1;
        }
    }
    let nodes: Vec<Node> = by_key.into_values().collect();
    let mut by_raw: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, n) in nodes.iter().enumerate() {
        by_raw.entry(n.raw.as_str()).or_default().push(i);
    }

    let pair_key = |a: &str, b: &str| {
        if a <= b {
            (a.to_string(), b.to_string())
        } else {
            (b.to_string(), a.to_string())
        }
    };
    let mut forced: BTreeMap<(String, String), OverrideAction> = BTreeMap::new();
    for e in &overrides.entries {
        let key = pair_key(&e.name_a, &e.name_b);
        if let Some(prev) = forced.insert(key.clone(), e.action) {
            if prev != e.action {
                return Err(ResolutionError::ConflictingOverride(key.0, key.1));
            }
        }
    }

    let mut sets = ConstrainedSets::new(nodes.len());
    let override_nodes = |a: &str, b: &str| -> Vec<(usize, usize)> {
        let empty = Vec::new();
        let na = by_raw.get(a).unwrap_or(&empty);
        let nb = by_raw.get(b).unwrap_or(&empty);
        na.iter()
            .flat_map(|&i| nb.iter().map(move |&j| (i, j)))
            .filter(|(i, j)| i != j)
            .collect()
    };
    for ((a, b), action) in &forced {
        if *action == OverrideAction::Split {
            for (i, j) in override_nodes(a, b) {
                sets.forbid(i, j);
            }
        }
    }
    for ((a, b), action) in &forced {
        if *action == OverrideAction::Merge {
            let pairs = override_nodes(a, b);
            if pairs.is_empty() {
                tracing::warn!(name_a = %a, name_b = %b, "override refers to unknown names");
            }
            for (i, j) in pairs {
                if !sets.union(i, j) {
                    return Err(ResolutionError::ConflictingOverride(a.clone(), b.clone()));
                }
            }
        }
    }

    let mut blocks: BTreeMap<(String, String), Vec<usize>> = BTreeMap::new();
    for (i, n) in nodes.iter().enumerate() {
        match block_key(n) {
            Some(k) => blocks.entry(k).or_default().push(i),
            None => tracing::warn!(name = %n.raw, "organisation name normalizes to empty"),
        }
    }
    // Scored pairs inside each block, in a fixed order.
    let scored: Vec<(usize, usize, f64)> = blocks
        .par_iter()
        .map(|(_, members)| {
            let mut out = Vec::new();
            for (x, &i) in members.iter().enumerate() {
                for &j in &members[x + 1..] {
                    out.push((i, j, jaro_winkler(&nodes[i].normalized, &nodes[j].normalized)));
                }
            }
            out
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();

    let mut applied: BTreeMap<(usize, usize), Outcome> = BTreeMap::new();
    for &(i, j, _) in &scored {
        if nodes[i].normalized == nodes[j].normalized && sets.union(i, j) {
            applied.insert((i, j), Outcome::MergedExact);
        }
    }
    let mut fuzzy: Vec<&(usize, usize, f64)> = scored
        .iter()
        .filter(|(i, j, s)| nodes[*i].normalized != nodes[*j].normalized && *s >= config.threshold)
        .collect();
    fuzzy.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
    for &&(i, j, _) in &fuzzy {
        if sets.union(i, j) {
            applied.insert((i, j), Outcome::MergedFuzzy);
        }
    }

    let mut decisions = Vec::new();
    let forced_of = |i: usize, j: usize| forced.get(&pair_key(&nodes[i].raw, &nodes[j].raw)).copied();
    let mut logged: BTreeSet<(usize, usize)> = BTreeSet::new();
    for &(i, j, score) in &scored {
        let outcome = match (forced_of(i, j), applied.get(&(i, j))) {
            (Some(OverrideAction::Merge), _) => Outcome::MergedOverride,
            (Some(OverrideAction::Split), _) => Outcome::Distinct,
            (None, Some(o)) => *o,
            (None, None) => Outcome::Distinct,
        };
        logged.insert((i, j));
        decisions.push(ResolutionDecision {
            raw_name_a: nodes[i].raw.clone(),
            raw_name_b: nodes[j].raw.clone(),
            score,
            outcome,
            threshold_used: config.threshold,
        });
    }
    // Forced pairs that cross blocks are logged too.
    for ((a, b), action) in &forced {
        for (i, j) in override_nodes(a, b) {
            let (i, j) = (i.min(j), i.max(j));
            if logged.insert((i, j)) {
                decisions.push(ResolutionDecision {
                    raw_name_a: nodes[i].raw.clone(),
                    raw_name_b: nodes[j].raw.clone(),
                    score: jaro_winkler(&nodes[i].normalized, &nodes[j].normalized),
                    outcome: match action {
                        OverrideAction::Merge => Outcome::MergedOverride,
                        OverrideAction::Split => Outcome::Distinct,
                    },
                    threshold_used: config.threshold,
                });
            }
        }
    }

    let mut components: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..nodes.len() {
        let root = sets.find(i);
        components.entry(root).or_default().push(i);
    }
    let mut organisations = Vec::new();
    let mut members_of = Vec::new();
    for members in components.into_values() {
        let mut aliases = BTreeSet::new();
        let mut name_counts: BTreeMap<String, usize> = BTreeMap::new();
        let mut countries: BTreeMap<String, usize> = BTreeMap::new();
        let mut types: BTreeMap<OrgType, usize> = BTreeMap::new();
        let mut provinces: BTreeMap<String, usize> = BTreeMap::new();
        for &m in &members {
            let n = &nodes[m];
            aliases.insert(n.raw.clone());
            *name_counts.entry(n.raw.clone()).or_default() += n.occurrences;
            *countries.entry(n.country.clone()).or_default() += n.occurrences;
            for (t, c) in &n.types {
                if *t != OrgType::Other {
                    *types.entry(*t).or_default() += c;
                }
            }
            for (p, c) in &n.provinces {
                *provinces.entry(p.clone()).or_default() += c;
            }
        }
        let country = most_frequent(&countries).unwrap_or_default();
        let province = most_frequent(&provinces).unwrap_or_default();
        let is_home_region = (country == config.home_country && !province.is_empty())
            || aliases.iter().any(|a| config.home_overrides.contains(a));
        organisations.push(Organisation {
            org_id: org_id_for(&country, &aliases),
            display_name: most_frequent(&name_counts).unwrap_or_default(),
            org_type: most_frequent(&types).unwrap_or(OrgType::Other),
            country,
            province,
            is_home_region,
            aliases,
        });
        members_of.push(members);
    }

    let mut order: Vec<usize> = (0..organisations.len()).collect();
    order.sort_by(|&a, &b| organisations[a].org_id.cmp(&organisations[b].org_id));
    let mut alias_index = BTreeMap::new();
    let mut sorted = Vec::with_capacity(order.len());
    for (slot, &o) in order.iter().enumerate() {
        for &m in &members_of[o] {
            alias_index.insert((nodes[m].country.clone(), nodes[m].raw.clone()), slot);
        }
        sorted.push(organisations[o].clone());
    }
    Ok(Resolution {
        organisations: sorted,
        decisions,
        alias_index,
    })
}
