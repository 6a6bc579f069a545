//! Source CSV parsing and the canonical project/participation model.
//!
//! Two input schemas are supported: an EU framework-programme export (a
//! projects file plus a participants file) and a regional export with one
//! row per participation. Both normalize into [`Project`] and
//! [`Participation`] records; [`unify`] merges them into a [`Corpus`] keyed by
//! source-prefixed ids.
//!
//! Row-level problems never abort a parse. They are collected in an
//! [`IngestReport`] with 1-based source line numbers, so every data row ends
//! up either accepted or listed exactly once as a reject.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::money::{AmountError, Eur};

pub const EU_PROJECT_COLUMNS: [&str; 12] = [
    "id",
    "acronym",
    "title",
    "objective",
    "programme",
    "instrument",
    "topicCode",
    "startDate",
    "endDate",
    "totalCost",
    "ecMaxContribution",
    "metadataTags",
];

pub const EU_PARTICIPANT_COLUMNS: [&str; 6] = [
    "projectId",
    "name",
    "country",
    "role",
    "ecContribution",
    "activityType",
];

pub const REGIONAL_COLUMNS: [&str; 16] = [
    "projectId",
    "acronym",
    "title",
    "abstract",
    "programme",
    "instrument",
    "startDate",
    "endDate",
    "totalCost",
    "grant",
    "orgName",
    "orgType",
    "province",
    "country",
    "role",
    "contribution",
];

pub const CANONICAL_PROJECT_COLUMNS: [&str; 13] = [
    "projectId",
    "source",
    "acronym",
    "title",
    "abstract",
    "programme",
    "instrument",
    "callTopicCode",
    "startYear",
    "endYear",
    "totalCost",
    "funderContribution",
    "metadataTags",
];

pub const CANONICAL_PARTICIPATION_COLUMNS: [&str; 8] = [
    "projectId",
    "rawOrgName",
    "country",
    "province",
    "orgTypeRaw",
    "activityType",
    "role",
    "contribution",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Source {
    EuFp,
    Regional,
}

impl Source {
    pub fn prefix(self) -> &'static str {
        match self {
            Source::EuFp => "EU",
            Source::Regional => "REG",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Source::EuFp => "EU_FP",
            Source::Regional => "REGIONAL",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "EU_FP" => Some(Source::EuFp),
            "REGIONAL" => Some(Source::Regional),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Role {
    Coordinator,
    Partner,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Coordinator => "COORDINATOR",
            Role::Partner => "PARTNER",
        }
    }

    /// Accepts the canonical names plus the role vocabulary used by EU exports.
    pub fn parse(raw: &str) -> Option<Self> {
        let folded: String = raw
            .trim()
            .chars()
            .filter(|c| c.is_alphanumeric())
            .collect::<String>()
            .to_lowercase();
        match folded.as_str() {
            "coordinator" | "coord" => Some(Role::Coordinator),
            "partner" | "participant" | "beneficiary" | "thirdparty" | "associatedpartner" => {
                Some(Role::Partner)
            }
            _ => None,
        }
    }
}

/// Confidence-scored outputs of the enrichment stages. Empty until the
/// pipeline runs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnrichmentTags {
    /// Priority area label → classifier confidence in [0, 1].
    pub priority_areas: BTreeMap<String, f64>,
    pub topic_id: Option<usize>,
    pub sdg_tags: Vec<SdgTag>,
    pub map_xy: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SdgTag {
    pub sdg: u8,
    pub matched_phrases: Vec<String>,
}

impl EnrichmentTags {
    pub fn sdgs(&self) -> impl Iterator<Item = u8> + '_ {
        self.sdg_tags.iter().map(|t| t.sdg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Project {
    pub project_id: String,
    pub source: Source,
    pub acronym: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    pub programme: String,
    pub instrument: String,
    pub call_topic_code: String,
    pub start_year: i32,
    pub end_year: i32,
    pub total_cost: Eur,
    pub funder_contribution: Eur,
    pub metadata_tags: BTreeSet<String>,
    #[serde(default)]
    pub enrichment: EnrichmentTags,
}

impl Project {
    /// Title and abstract joined the way every text stage consumes them.
    pub fn text(&self) -> String {
        format!("{} {}", self.title, self.abstract_text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Participation {
    pub project_id: String,
    pub raw_org_name: String,
    pub country: String,
    pub province: String,
    pub org_type_raw: String,
    /// EU `activityType` code; empty for regional rows.
    pub activity_type: String,
    pub role: Role,
    pub contribution: Eur,
    /// Canonical organisation id, assigned by entity resolution.
    #[serde(default)]
    pub org_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectRecord {
    pub project: Project,
    pub participations: Vec<Participation>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Corpus {
    /// Sorted by `project_id`.
    pub projects: Vec<Project>,
    /// Grouped by project in corpus order; source order within a project.
    pub participations: Vec<Participation>,
}

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("{file}: missing column {column:?}")]
    MissingColumn { file: String, column: String },
    #[error("{file}: not valid UTF-8")]
    Encoding { file: String },
    #[error("{file}: {source}")]
    Io {
        file: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}: {source}")]
    Csv {
        file: String,
        #[source]
        source: csv::Error,
    },
}

/// Why a single row was rejected.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RowError {
    MalformedRow { reason: String },
    DuplicateProjectId { id: String },
    UnknownProject { id: String },
}

impl fmt::Display for RowError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RowError::MalformedRow { reason } => write!(f, "malformed row: {reason}"),
            RowError::DuplicateProjectId { id } => write!(f, "duplicate project id {id:?}"),
            RowError::UnknownProject { id } => write!(f, "unknown project id {id:?}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    pub file: String,
    pub line: u64,
    pub error: RowError,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Warning {
    pub file: String,
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    /// Data rows read per file label.
    pub rows_read: BTreeMap<String, usize>,
    pub accepted: BTreeMap<String, usize>,
    pub rejects: Vec<Reject>,
    pub warnings: Vec<Warning>,
}

impl IngestReport {
    fn read(&mut self, file: &str) {
        *self.rows_read.entry(file.to_string()).or_default() += 1;
    }

    fn accept(&mut self, file: &str) {
        *self.accepted.entry(file.to_string()).or_default() += 1;
    }

    fn reject(&mut self, file: &str, line: u64, error: RowError) {
        self.rejects.push(Reject {
            file: file.to_string(),
            line,
            error,
        });
    }

    fn warn(&mut self, file: &str, line: u64, message: impl Into<String>) {
        self.warnings.push(Warning {
            file: file.to_string(),
            line,
            message: message.into(),
        });
    }

    pub fn merge(&mut self, other: IngestReport) {
        for (k, v) in other.rows_read {
            *self.rows_read.entry(k).or_default() += v;
        }
        for (k, v) in other.accepted {
            *self.accepted.entry(k).or_default() += v;
        }
        self.rejects.extend(other.rejects);
        self.warnings.extend(other.warnings);
    }

    pub fn total_rejects(&self) -> usize {
        self.rejects.len()
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["file", "line", "severity", "message"])?;
        for r in &self.rejects {
            w.write_record([&r.file, &r.line.to_string(), "reject", &r.error.to_string()])?;
        }
        for r in &self.warnings {
            w.write_record([&r.file, &r.line.to_string(), "warning", &r.message])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parsed {
    pub records: Vec<ProjectRecord>,
    pub report: IngestReport,
}

fn read_utf8(path: &Path) -> Result<String, IngestError> {
    let file = path.display().to_string();
    let bytes = fs::read(path).map_err(|source| IngestError::Io {
        file: file.clone(),
        source,
    })?;
    String::from_utf8(bytes).map_err(|_| IngestError::Encoding { file })
}

fn strip_bom(s: &str) -> &str {
    s.strip_prefix('\u{feff}').unwrap_or(s)
}

/// Column lookup by header name; extra columns are ignored.
struct Columns {
    index: HashMap<String, usize>,
}

impl Columns {
    fn new(file: &str, header: &csv::StringRecord, required: &[&str]) -> Result<Self, IngestError> {
        let index: HashMap<String, usize> = header
            .iter()
            .enumerate()
            .map(|(i, h)| (h.trim().to_string(), i))
            .collect();
        for col in required {
            if !index.contains_key(*col) {
                return Err(IngestError::MissingColumn {
                    file: file.to_string(),
                    column: col.to_string(),
                });
            }
        }
        Ok(Columns { index })
    }

    fn get<'r>(&self, rec: &'r csv::StringRecord, col: &str) -> &'r str {
        rec.get(self.index[col]).unwrap_or("")
    }
}

fn csv_reader(data: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(strip_bom(data).as_bytes())
}

fn malformed(reason: impl Into<String>) -> RowError {
    RowError::MalformedRow {
        reason: reason.into(),
    }
}

/// Extracts the year from an ISO-8601 date (`YYYY-MM-DD`, optionally with a
/// time part) or a bare `YYYY`.
pub fn parse_year(raw: &str) -> Option<i32> {
    let s = raw.trim();
    let year_part = s.get(..4)?;
    if !year_part.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    let year: i32 = year_part.parse().ok()?;
    let rest = &s[4..];
    if rest.is_empty() {
        return Some(year);
    }
    let date = rest.strip_prefix('-')?;
    let date = date.split(['T', ' ']).next()?;
    let (m, d) = date.split_once('-')?;
    let ok = |p: &str, lo: u32, hi: u32| {
        p.len() == 2 && p.parse::<u32>().map(|v| (lo..=hi).contains(&v)).unwrap_or(false)
    };
    (ok(m, 1, 12) && ok(d, 1, 31)).then_some(year)
}

fn parse_amount(
    report: &mut IngestReport,
    file: &str,
    line: u64,
    field: &str,
    raw: &str,
) -> Result<Option<Eur>, RowError> {
    match raw.parse::<Eur>() {
        Ok(v) => Ok(Some(v)),
        Err(AmountError::Empty) => {
            report.warn(file, line, format!("empty {field}, treated as 0"));
            Ok(None)
        }
        Err(e) => Err(malformed(format!("{field}: {e}"))),
    }
}

fn valid_country(c: &str) -> bool {
    c.len() == 2 && c.chars().all(|ch| ch.is_ascii_uppercase())
}

struct ProjectFields<'a> {
    id: &'a str,
    acronym: &'a str,
    title: &'a str,
    abstract_text: &'a str,
    programme: &'a str,
    instrument: &'a str,
    topic_code: &'a str,
    start: &'a str,
    end: &'a str,
    total: &'a str,
    funder: &'a str,
    tags: &'a str,
}

fn build_project(
    source: Source,
    f: ProjectFields<'_>,
    report: &mut IngestReport,
    file: &str,
    line: u64,
) -> Result<Project, RowError> {
    let id = f.id.trim();
    if id.is_empty() {
        return Err(malformed("empty project id"));
    }
    let title = f.title.trim();
    if title.is_empty() {
        return Err(malformed("empty title"));
    }
    let start_year =
        parse_year(f.start).ok_or_else(|| malformed(format!("bad start date {:?}", f.start)))?;
    let end_year =
        parse_year(f.end).ok_or_else(|| malformed(format!("bad end date {:?}", f.end)))?;
    if start_year > end_year {
        return Err(malformed(format!(
            "start year {start_year} after end year {end_year}"
        )));
    }
    let total = parse_amount(report, file, line, "total cost", f.total)?;
    let funder = parse_amount(report, file, line, "funder contribution", f.funder)?;
    if let (Some(t), Some(g)) = (total, funder) {
        if g > t {
            return Err(malformed(format!(
                "funder contribution {g} exceeds total cost {t}"
            )));
        }
    }
    let abstract_text = f.abstract_text.trim();
    if abstract_text.is_empty() {
        report.warn(file, line, "empty abstract");
    }
    let metadata_tags = f
        .tags
        .split(';')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect();
    Ok(Project {
        project_id: id.to_string(),
        source,
        acronym: f.acronym.trim().to_string(),
        title: title.to_string(),
        abstract_text: abstract_text.to_string(),
        programme: f.programme.trim().to_string(),
        instrument: f.instrument.trim().to_string(),
        call_topic_code: f.topic_code.trim().to_string(),
        start_year,
        end_year,
        total_cost: total.unwrap_or_default(),
        funder_contribution: funder.unwrap_or_default(),
        metadata_tags,
        enrichment: EnrichmentTags::default(),
    })
}

/// Parses the EU projects and participants files.
pub fn parse_eu_csv(projects_file: &Path, participants_file: &Path) -> Result<Parsed, IngestError> {
    let projects = read_utf8(projects_file)?;
    let participants = read_utf8(participants_file)?;
    parse_eu_str(
        &projects,
        &participants,
        &projects_file.display().to_string(),
        &participants_file.display().to_string(),
    )
}

pub fn parse_eu_str(
    projects: &str,
    participants: &str,
    projects_label: &str,
    participants_label: &str,
) -> Result<Parsed, IngestError> {
    let mut report = IngestReport::default();
    let mut records: Vec<ProjectRecord> = Vec::new();
    let mut by_id: HashMap<String, usize> = HashMap::new();

    let csv_err = |file: &str| {
        let file = file.to_string();
        move |source| IngestError::Csv {
            file: file.clone(),
            source,
        }
    };

    let file = projects_label;
    let mut rdr = csv_reader(projects);
    let header = rdr.headers().map_err(csv_err(file))?.clone();
    let cols = Columns::new(file, &header, &EU_PROJECT_COLUMNS)?;
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(file))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        report.read(file);
        if rec.len() != header.len() {
            report.reject(
                file,
                line,
                malformed(format!("expected {} fields, found {}", header.len(), rec.len())),
            );
            continue;
        }
        let g = |c| cols.get(&rec, c);
        let built = build_project(
            Source::EuFp,
            ProjectFields {
                id: g("id"),
                acronym: g("acronym"),
                title: g("title"),
                abstract_text: g("objective"),
                programme: g("programme"),
                instrument: g("instrument"),
                topic_code: g("topicCode"),
                start: g("startDate"),
                end: g("endDate"),
                total: g("totalCost"),
                funder: g("ecMaxContribution"),
                tags: g("metadataTags"),
            },
            &mut report,
            file,
            line,
        );
        match built {
            Ok(project) => {
                if by_id.contains_key(&project.project_id) {
                    report.reject(
                        file,
                        line,
                        RowError::DuplicateProjectId {
                            id: project.project_id,
                        },
                    );
                    continue;
                }
                by_id.insert(project.project_id.clone(), records.len());
                records.push(ProjectRecord {
                    project,
                    participations: Vec::new(),
                });
                report.accept(file);
            }
            Err(e) => report.reject(file, line, e),
        }
    }

    let file = participants_label;
    let mut rdr = csv_reader(participants);
    let header = rdr.headers().map_err(csv_err(file))?.clone();
    let cols = Columns::new(file, &header, &EU_PARTICIPANT_COLUMNS)?;
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(file))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        report.read(file);
        if rec.len() != header.len() {
            report.reject(
                file,
                line,
                malformed(format!("expected {} fields, found {}", header.len(), rec.len())),
            );
            continue;
        }
        let g = |c| cols.get(&rec, c);
        let project_id = g("projectId").trim();
        let Some(&slot) = by_id.get(project_id) else {
            report.reject(
                file,
                line,
                RowError::UnknownProject {
                    id: project_id.to_string(),
                },
            );
            continue;
        };
        let built = build_participation(
            project_id,
            g("name"),
            g("country"),
            "",
            "",
            g("activityType"),
            g("role"),
            g("ecContribution"),
            &mut report,
            file,
            line,
        );
        match built {
            Ok(p) => {
                records[slot].participations.push(p);
                report.accept(file);
            }
            Err(e) => report.reject(file, line, e),
        }
    }
    Ok(Parsed { records, report })
}

#[allow(clippy::too_many_arguments)]
fn build_participation(
    project_id: &str,
    name: &str,
    country: &str,
    province: &str,
    org_type_raw: &str,
    activity_type: &str,
    role: &str,
    contribution: &str,
    report: &mut IngestReport,
    file: &str,
    line: u64,
) -> Result<Participation, RowError> {
    let name = name.trim();
    if name.is_empty() {
        return Err(malformed("empty organisation name"));
    }
    let country = country.trim();
    if !valid_country(country) {
        return Err(malformed(format!("bad country code {country:?}")));
    }
    let role = Role::parse(role).ok_or_else(|| malformed(format!("unknown role {role:?}")))?;
    let contribution =
        parse_amount(report, file, line, "contribution", contribution)?.unwrap_or_default();
    Ok(Participation {
        project_id: project_id.to_string(),
        raw_org_name: name.to_string(),
        country: country.to_string(),
        province: province.trim().to_string(),
        org_type_raw: org_type_raw.trim().to_string(),
        activity_type: activity_type.trim().to_string(),
        role,
        contribution,
        org_id: None,
    })
}

/// Parses the regional export (one row per participation).
pub fn parse_regional_csv(file: &Path) -> Result<Parsed, IngestError> {
    let data = read_utf8(file)?;
    parse_regional_str(&data, &file.display().to_string())
}

pub fn parse_regional_str(data: &str, label: &str) -> Result<Parsed, IngestError> {
    let file = label;
    let mut report = IngestReport::default();
    let mut records: Vec<ProjectRecord> = Vec::new();
    let mut by_id: HashMap<String, usize> = HashMap::new();

    let mut rdr = csv_reader(data);
    let header = rdr
        .headers()
        .map_err(|source| IngestError::Csv {
            file: file.to_string(),
            source,
        })?
        .clone();
    let cols = Columns::new(file, &header, &REGIONAL_COLUMNS)?;
    for rec in rdr.records() {
        let rec = rec.map_err(|source| IngestError::Csv {
            file: file.to_string(),
            source,
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        report.read(file);
        if rec.len() != header.len() {
            report.reject(
                file,
                line,
                malformed(format!("expected {} fields, found {}", header.len(), rec.len())),
            );
            continue;
        }
        let g = |c| cols.get(&rec, c);
        // Project fields are validated on every row: a repeated id must carry
        // identical project data.
        let mut scratch = IngestReport::default();
        let project = match build_project(
            Source::Regional,
            ProjectFields {
                id: g("projectId"),
                acronym: g("acronym"),
                title: g("title"),
                abstract_text: g("abstract"),
                programme: g("programme"),
                instrument: g("instrument"),
                topic_code: "",
                start: g("startDate"),
                end: g("endDate"),
                total: g("totalCost"),
                funder: g("grant"),
                tags: "",
            },
            &mut scratch,
            file,
            line,
        ) {
            Ok(p) => p,
            Err(e) => {
                report.reject(file, line, e);
                continue;
            }
        };
        let slot = by_id.get(&project.project_id).copied();
        if let Some(slot) = slot {
            if records[slot].project != project {
                report.reject(
                    file,
                    line,
                    malformed(format!(
                        "project fields differ from the first row of {:?}",
                        project.project_id
                    )),
                );
                continue;
            }
        }
        if g("orgType").trim().is_empty() {
            report.warn(file, line, "missing orgType");
        }
        let participation = match build_participation(
            &project.project_id,
            g("orgName"),
            g("country"),
            g("province"),
            g("orgType"),
            "",
            g("role"),
            g("contribution"),
            &mut report,
            file,
            line,
        ) {
            Ok(p) => p,
            Err(e) => {
                report.reject(file, line, e);
                continue;
            }
        };
        let slot = match slot {
            Some(s) => s,
            None => {
                // Project-level warnings are reported once, on the first row.
                report.warnings.extend(scratch.warnings);
                by_id.insert(project.project_id.clone(), records.len());
                records.push(ProjectRecord {
                    project,
                    participations: Vec::new(),
                });
                records.len() - 1
            }
        };
        records[slot].participations.push(participation);
        report.accept(file);
    }
    Ok(Parsed { records, report })
}

fn prefixed(source: Source, id: &str) -> String {
    format!("{}:{}", source.prefix(), id)
}

/// Merges both sources into one corpus with source-prefixed ids, sorted by id.
pub fn unify(eu: Vec<ProjectRecord>, regional: Vec<ProjectRecord>) -> Corpus {
    let mut all: Vec<ProjectRecord> = eu
        .into_iter()
        .chain(regional)
        .map(|mut r| {
            let id = prefixed(r.project.source, &r.project.project_id);
            for p in &mut r.participations {
                p.project_id = id.clone();
            }
            r.project.project_id = id;
            r
        })
        .collect();
    all.sort_by(|a, b| a.project.project_id.cmp(&b.project.project_id));
    let mut corpus = Corpus::default();
    for r in all {
        corpus.projects.push(r.project);
        corpus.participations.extend(r.participations);
    }
    corpus
}

#[derive(Debug, thiserror::Error)]
pub enum CanonicalError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("{file} line {line}: {reason}")]
    Invalid {
        file: String,
        line: u64,
        reason: String,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Corpus {
    pub fn project(&self, id: &str) -> Option<&Project> {
        self.projects
            .binary_search_by(|p| p.project_id.as_str().cmp(id))
            .ok()
            .map(|i| &self.projects[i])
    }

    pub fn participations_of<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a Participation> + 'a {
        self.participations.iter().filter(move |p| p.project_id == id)
    }

    /// Writes the canonical projects dump. Enrichment tags are not part of it.
    pub fn write_projects_csv<W: std::io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CANONICAL_PROJECT_COLUMNS)?;
        for p in &self.projects {
            let tags: Vec<&str> = p.metadata_tags.iter().map(String::as_str).collect();
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
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_participations_csv<W: std::io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CANONICAL_PARTICIPATION_COLUMNS)?;
        for p in &self.participations {
            w.write_record([
                p.project_id.as_str(),
                &p.raw_org_name,
                &p.country,
                &p.province,
                &p.org_type_raw,
                &p.activity_type,
                p.role.as_str(),
                &p.contribution.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn canonical_bytes(&self) -> (Vec<u8>, Vec<u8>) {
        let mut projects = Vec::new();
        let mut parts = Vec::new();
        self.write_projects_csv(&mut projects)
            .expect("writing to memory");
        self.write_participations_csv(&mut parts)
            .expect("writing to memory");
        (projects, parts)
    }

    pub fn write_canonical(&self, dir: &Path) -> Result<(), CanonicalError> {
        fs::create_dir_all(dir)?;
        let (projects, parts) = self.canonical_bytes();
        fs::write(dir.join("projects.csv"), projects)?;
        fs::write(dir.join("participations.csv"), parts)?;
        Ok(())
    }

    pub fn read_canonical(dir: &Path) -> Result<Corpus, CanonicalError> {
        let projects = read_utf8(&dir.join("projects.csv"))?;
        let parts = read_utf8(&dir.join("participations.csv"))?;
        Corpus::from_canonical_str(&projects, &parts)
    }

    /// Strict reader for the canonical dump: any bad row is an error.
    pub fn from_canonical_str(projects: &str, participations: &str) -> Result<Corpus, CanonicalError> {
        let mut corpus = Corpus::default();
        let invalid = |file: &str, line: u64, reason: String| CanonicalError::Invalid {
            file: file.to_string(),
            line,
            reason,
        };

        let file = "projects.csv";
        let mut rdr = csv_reader(projects);
        let header = rdr.headers()?.clone();
        let cols = Columns::new(file, &header, &CANONICAL_PROJECT_COLUMNS)?;
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            let g = |c: &'static str| cols.get(&rec, c);
            let source = Source::parse(g("source"))
                .ok_or_else(|| invalid(file, line, format!("bad source {:?}", g("source"))))?;
            let year = |c: &'static str| {
                g(c).parse::<i32>()
                    .map_err(|_| invalid(file, line, format!("bad {c}")))
            };
            let amount = |c: &'static str| {
                g(c).parse::<Eur>()
                    .map_err(|e| invalid(file, line, format!("{c}: {e}")))
            };
            corpus.projects.push(Project {
                project_id: g("projectId").to_string(),
                source,
                acronym: g("acronym").to_string(),
                title: g("title").to_string(),
                abstract_text: g("abstract").to_string(),
                programme: g("programme").to_string(),
                instrument: g("instrument").to_string(),
                call_topic_code: g("callTopicCode").to_string(),
                start_year: year("startYear")?,
                end_year: year("endYear")?,
                total_cost: amount("totalCost")?,
                funder_contribution: amount("funderContribution")?,
                metadata_tags: g("metadataTags")
                    .split(';')
                    .filter(|t| !t.is_empty())
                    .map(str::to_string)
                    .collect(),
                enrichment: EnrichmentTags::default(),
            });
        }
        if corpus
            .projects
            .windows(2)
            .any(|w| w[0].project_id >= w[1].project_id)
        {
            return Err(invalid(file, 0, "projects not strictly sorted by id".into()));
        }

        let file = "participations.csv";
        let mut rdr = csv_reader(participations);
        let header = rdr.headers()?.clone();
        let cols = Columns::new(file, &header, &CANONICAL_PARTICIPATION_COLUMNS)?;
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            let g = |c| cols.get(&rec, c);
            let project_id = g("projectId").to_string();
            if corpus.project(&project_id).is_none() {
                return Err(invalid(file, line, format!("unknown project {project_id:?}")));
            }
            corpus.participations.push(Participation {
                project_id,
                raw_org_name: g("rawOrgName").to_string(),
                country: g("country").to_string(),
                province: g("province").to_string(),
                org_type_raw: g("orgTypeRaw").to_string(),
                activity_type: g("activityType").to_string(),
                role: Role::parse(g("role"))
                    .ok_or_else(|| invalid(file, line, format!("bad role {:?}", g("role"))))?,
                contribution: g("contribution")
                    .parse()
                    .map_err(|e| invalid(file, line, format!("contribution: {e}")))?,
                org_id: None,
            });
        }
        Ok(corpus)
    }
}
