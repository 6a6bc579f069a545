//! Stage orchestration: `ingest → enrich → build`, each reading the previous
//! stage's artifacts from the run directory and recording hashes, counts and
//! timings in `manifest.json`.
//!
//! Run directory layout:
//!
//! ```text
//! run/
//!   manifest.json
//!   ingest/  projects.csv participations.csv rejects.csv report.json
//!   enrich/  organisations.csv decisions.csv vocabulary.csv embeddings.csv
//!            weak_labels.csv labels.csv evaluation.json topics.json
//!            topic_sweep.csv sdg_tags.csv enriched.json
//!   build/   layout.csv map.json nodes.csv edges.csv external_partners.csv
//!            network_layout.csv snapshot.json
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::collaboration_graph::{build_graph, layout_force, rank_external_partners, write_external_csv, write_layout_csv};
use crate::entity_resolution::{self, NameRecord, Organisation, OverrideFile, ResolverConfig};
use crate::ingest::{self, Corpus};
use crate::priority_classifier::{self as classifier, TrainConfig};
use crate::query_engine::{Snapshot, TopicInfo};
use crate::sdg_tagger;
use crate::semantic_map::{self, TsneConfig};
use crate::text_embedding::{self, EmbeddingMatrix, TfidfConfig};
use crate::topic_model::{self, TopicModelConfig};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SNAPSHOT_FILE: &str = "build/snapshot.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputPaths {
    pub eu_projects: PathBuf,
    pub eu_participants: PathBuf,
    pub regional: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoldPaths {
    pub a: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingSection {
    pub dim: usize,
    pub seed: u64,
    pub min_df: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub import_path: Option<PathBuf>,
}

impl Default for EmbeddingSection {
    fn default() -> Self {
        EmbeddingSection {
            dim: text_embedding::DEFAULT_DIM,
            seed: text_embedding::DEFAULT_SEED,
            min_df: 2,
            import_path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopicSection {
    pub k: usize,
    pub seed: u64,
    pub n_init: usize,
    pub max_iters: usize,
    /// Extra k values scored by inertia and silhouette; reporting only.
    pub sweep: Vec<usize>,
}

impl Default for TopicSection {
    fn default() -> Self {
        TopicSection {
            k: 12,
            seed: 42,
            n_init: 10,
            max_iters: 100,
            sweep: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierSection {
    pub threshold: f64,
    pub lambda: f64,
    pub min_examples: usize,
}

impl Default for ClassifierSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        ClassifierSection {
            threshold: 0.5,
            lambda: t.lambda,
            min_examples: t.min_examples,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub layout_iterations: usize,
    pub seed: u64,
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection {
            layout_iterations: 300,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerSection {
    pub port: u16,
    /// Allowed origins; `*` allows any.
    pub cors_origins: Vec<String>,
    /// Snapshot reload poll interval; 0 disables reloading.
    pub reload_secs: u64,
}

impl Default for ServerSection {
    fn default() -> Self {
        ServerSection {
            port: 8080,
            cors_origins: vec!["http://localhost:5173".into()],
            reload_secs: 5,
        }
    }
}

fn default_home_country() -> String {
    "ES".into()
}

fn default_run_dir() -> PathBuf {
    "run".into()
}

/// The single JSON configuration file. Relative paths are resolved against
/// the directory containing the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub inputs: InputPaths,
    #[serde(default = "default_home_country")]
    pub home_country: String,
    pub priority_labels: Vec<String>,
    #[serde(default)]
    pub vocabulary: Option<PathBuf>,
    #[serde(default)]
    pub rules: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub org_overrides: Option<PathBuf>,
    /// Raw names always treated as home-region organisations.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub home_org_overrides: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic_labels: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<GoldPaths>,
    #[serde(default)]
    pub embedding: EmbeddingSection,
    #[serde(default)]
    pub topic: TopicSection,
    #[serde(default)]
    pub tsne: TsneConfig,
    #[serde(default)]
    pub classifier: ClassifierSection,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub server: ServerSection,
    #[serde(default = "default_run_dir")]
    pub run_dir: PathBuf,
}

impl PipelineConfig {
    /// The configuration written next to a generated fixture.
    pub fn for_fixture() -> PipelineConfig {
        PipelineConfig {
            inputs: InputPaths {
                eu_projects: "inputs/eu_projects.csv".into(),
                eu_participants: "inputs/eu_participants.csv".into(),
                regional: "inputs/regional_projects.csv".into(),
            },
            home_country: default_home_country(),
            priority_labels: crate::fixture::priority_labels(),
            vocabulary: Some("config/sdg_vocabulary.csv".into()),
            rules: Some("config/priority_rules.csv".into()),
            org_overrides: Some("config/org_overrides.csv".into()),
            home_org_overrides: Vec::new(),
            topic_labels: Some("config/topic_labels.csv".into()),
            gold: Some(GoldPaths {
                a: "config/gold_a.csv".into(),
                b: Some("config/gold_b.csv".into()),
            }),
            embedding: EmbeddingSection::default(),
            topic: TopicSection {
                sweep: vec![6, 9, 12, 15, 18],
                ..TopicSection::default()
            },
            tsne: TsneConfig::default(),
            classifier: ClassifierSection::default(),
            network: NetworkSection::default(),
            server: ServerSection::default(),
            run_dir: default_run_dir(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("config field `{0}` is required")]
    MissingField(&'static str),
    #[error("config field `{field}`: file {path} does not exist")]
    MissingFile { field: String, path: PathBuf },
    #[error("config field `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
}

/// A parsed configuration with every path made absolute.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: PipelineConfig,
    pub config_hash: String,
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<LoadedConfig, ConfigError> {
        let bytes = fs::read(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let config: PipelineConfig = serde_json::from_slice(&bytes).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let loaded = LoadedConfig {
            config,
            config_hash: sha256_hex(&bytes),
            base_dir,
        };
        loaded.validate()?;
        Ok(loaded)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn run_dir(&self) -> PathBuf {
        self.resolve(&self.config.run_dir)
    }

    /// Named input files, in a fixed order. Used for existence checks and
    /// manifest hashes.
    pub fn files(&self) -> Vec<(String, PathBuf)> {
        let c = &self.config;
        let mut out = vec![
            ("inputs.eu_projects".to_string(), self.resolve(&c.inputs.eu_projects)),
            ("inputs.eu_participants".to_string(), self.resolve(&c.inputs.eu_participants)),
            ("inputs.regional".to_string(), self.resolve(&c.inputs.regional)),
        ];
        let optional = [
            ("vocabulary", &c.vocabulary),
            ("rules", &c.rules),
            ("org_overrides", &c.org_overrides),
            ("topic_labels", &c.topic_labels),
            ("embedding.import_path", &c.embedding.import_path),
        ];
        for (name, p) in optional {
            if let Some(p) = p {
                out.push((name.to_string(), self.resolve(p)));
            }
        }
        if let Some(g) = &c.gold {
            out.push(("gold.a".to_string(), self.resolve(&g.a)));
            if let Some(b) = &g.b {
                out.push(("gold.b".to_string(), self.resolve(b)));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let c = &self.config;
        if c.vocabulary.is_none() {
            return Err(ConfigError::MissingField("vocabulary"));
        }
        if c.rules.is_none() {
            return Err(ConfigError::MissingField("rules"));
        }
        for (field, path) in self.files() {
            if !path.is_file() {
                return Err(ConfigError::MissingFile { field, path });
            }
        }
        if c.priority_labels.is_empty() {
            return Err(ConfigError::Invalid {
                field: "priority_labels",
                reason: "at least one label is required".into(),
            });
        }
        if !(c.classifier.threshold > 0.0 && c.classifier.threshold < 1.0) {
            return Err(ConfigError::Invalid {
                field: "classifier.threshold",
                reason: format!("{} is not in (0, 1)", c.classifier.threshold),
            });
        }
        if c.topic.k == 0 {
            return Err(ConfigError::Invalid {
                field: "topic.k",
                reason: "must be positive".into(),
            });
        }
        if c.embedding.dim < 2 {
            return Err(ConfigError::Invalid {
                field: "embedding.dim",
                reason: "must be at least 2".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Enrich,
    Build,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Enrich => "enrich",
            Stage::Build => "build",
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{stage} stage failed: {source:#}")]
pub struct StageError {
    pub stage: &'static str,
    pub source: anyhow::Error,
}

trait StageContext<T> {
    fn stage(self, stage: Stage) -> Result<T, StageError>;
}

impl<T, E: Into<anyhow::Error>> StageContext<T> for Result<T, E> {
    fn stage(self, stage: Stage) -> Result<T, StageError> {
        self.map_err(|e| StageError {
            stage: stage.as_str(),
            source: e.into(),
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StageRecord {
    /// Artifact path relative to the run directory → sha256.
    pub artifacts: BTreeMap<String, String>,
    pub counts: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RunManifest {
    pub config_hash: String,
    /// Input field name → sha256 of the file.
    pub inputs: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    pub versions: BTreeMap<String, String>,
    pub stages: BTreeMap<Stage, StageRecord>,
    /// Wall-clock milliseconds per stage. The only non-deterministic field.
    pub timings_ms: BTreeMap<Stage, u64>,
}

impl RunManifest {
    pub fn load(path: &Path) -> std::io::Result<RunManifest> {
        serde_json::from_slice(&fs::read(path)?).map_err(std::io::Error::other)
    }

    /// The manifest without timings; equal across reruns of the same
    /// config and inputs.
    pub fn without_timings(&self) -> RunManifest {
        RunManifest {
            timings_ms: BTreeMap::new(),
            ..self.clone()
        }
    }

    fn summary(&self) -> serde_json::Value {
        serde_json::to_value(self.without_timings()).expect("manifest serializes")
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn fresh_manifest(cfg: &LoadedConfig) -> Result<RunManifest, std::io::Error> {
    let mut inputs = BTreeMap::new();
    for (name, path) in cfg.files() {
        inputs.insert(name, sha256_hex(&fs::read(&path)?));
    }
    let c = &cfg.config;
    let seeds = BTreeMap::from([
        ("embedding".to_string(), c.embedding.seed),
        ("topic".to_string(), c.topic.seed),
        ("tsne".to_string(), c.tsne.seed),
        ("network".to_string(), c.network.seed),
    ]);
    let versions = BTreeMap::from([
        ("s3monitor".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ("manifestFormat".to_string(), "1".to_string()),
    ]);
    Ok(RunManifest {
        config_hash: cfg.config_hash.clone(),
        inputs,
        seeds,
        versions,
        ..Default::default()
    })
}

/// Writes stage artifacts and accumulates their hashes.
struct Writer<'a> {
    run_dir: &'a Path,
    record: StageRecord,
}

impl<'a> Writer<'a> {
    fn new(run_dir: &'a Path, stage: Stage) -> std::io::Result<Self> {
        fs::create_dir_all(run_dir.join(stage.as_str()))?;
        Ok(Writer {
            run_dir,
            record: StageRecord::default(),
        })
    }

    fn bytes(&mut self, rel: &str, data: &[u8]) -> std::io::Result<()> {
        fs::write(self.run_dir.join(rel), data)?;
        self.record.artifacts.insert(rel.to_string(), sha256_hex(data));
        Ok(())
    }

    fn csv(&mut self, rel: &str, f: impl FnOnce(&mut Vec<u8>) -> csv::Result<()>) -> anyhow::Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        Ok(self.bytes(rel, &buf)?)
    }

    fn json<T: Serialize>(&mut self, rel: &str, value: &T) -> anyhow::Result<()> {
        let mut buf = serde_json::to_vec_pretty(value)?;
        buf.push(b'\n');
        Ok(self.bytes(rel, &buf)?)
    }

    fn count(&mut self, key: &str, value: impl Into<f64>) {
        self.record.counts.insert(key.to_string(), value.into());
    }
}

/// Enrichment output consumed by `build`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Enriched {
    pub corpus: Corpus,
    pub organisations: Vec<Organisation>,
    pub topics: Vec<TopicInfo>,
}

pub struct Pipeline {
    pub cfg: LoadedConfig,
    pub run_dir: PathBuf,
}

impl Pipeline {
    pub fn new(cfg: LoadedConfig) -> Pipeline {
        let run_dir = cfg.run_dir();
        Pipeline { cfg, run_dir }
    }

    pub fn from_path(path: &Path) -> Result<Pipeline, ConfigError> {
        Ok(Pipeline::new(LoadedConfig::load(path)?))
    }

    fn manifest_path(&self) -> PathBuf {
        self.run_dir.join(MANIFEST_FILE)
    }

    /// Reuses the manifest of an earlier run only if it was produced by the
    /// same config and inputs.
    fn manifest(&self) -> Result<RunManifest, std::io::Error> {
        let fresh = fresh_manifest(&self.cfg)?;
        match RunManifest::load(&self.manifest_path()) {
            Ok(old)
                if old.config_hash == fresh.config_hash
                    && old.inputs == fresh.inputs
                    && old.versions == fresh.versions =>
            {
                Ok(old)
            }
            _ => Ok(fresh),
        }
    }

    fn finish(&self, stage: Stage, record: StageRecord, started: Instant) -> Result<(), StageError> {
        let mut m = self.manifest().stage(stage)?;
        // Later stages are stale once an earlier one reruns.
        m.stages.retain(|s, _| *s < stage);
        m.timings_ms.retain(|s, _| *s < stage);
        m.stages.insert(stage, record);
        m.timings_ms.insert(stage, started.elapsed().as_millis() as u64);
        let mut buf = serde_json::to_vec_pretty(&m).stage(stage)?;
        buf.push(b'\n');
        fs::write(self.manifest_path(), buf).stage(stage)?;
        Ok(())
    }

    pub fn ingest(&self) -> Result<Corpus, StageError> {
        let stage = Stage::Ingest;
        let started = Instant::now();
        tracing::info!("ingest: parsing sources");
        let c = &self.cfg.config;
        let eu = ingest::parse_eu_csv(
            &self.cfg.resolve(&c.inputs.eu_projects),
            &self.cfg.resolve(&c.inputs.eu_participants),
        )
        .stage(stage)?;
        let regional = ingest::parse_regional_csv(&self.cfg.resolve(&c.inputs.regional)).stage(stage)?;
        let mut report = eu.report;
        report.merge(regional.report);
        let corpus = ingest::unify(eu.records, regional.records);

        let mut w = Writer::new(&self.run_dir, stage).stage(stage)?;
        let (projects, parts) = corpus.canonical_bytes();
        w.bytes("ingest/projects.csv", &projects).stage(stage)?;
        w.bytes("ingest/participations.csv", &parts).stage(stage)?;
        w.csv("ingest/rejects.csv", |b| report.write_csv(b)).stage(stage)?;
        // Keyed by file name so the report does not depend on where the
        // inputs live.
        let portable = portable_report(&report);
        w.json("ingest/report.json", &portable).stage(stage)?;
        w.count("projects", corpus.projects.len() as f64);
        w.count("participations", corpus.participations.len() as f64);
        w.count("rejects", report.total_rejects() as f64);
        w.count("warnings", report.warnings.len() as f64);
        tracing::info!(
            projects = corpus.projects.len(),
            rejects = report.total_rejects(),
            "ingest: done"
        );
        self.finish(stage, w.record, started)?;
        Ok(corpus)
    }

    pub fn enrich(&self) -> Result<Enriched, StageError> {
        let stage = Stage::Enrich;
        let started = Instant::now();
        let c = &self.cfg.config;
        let mut corpus = Corpus::read_canonical(&self.run_dir.join("ingest")).stage(stage)?;
        let mut w = Writer::new(&self.run_dir, stage).stage(stage)?;

        tracing::info!("enrich: resolving organisations");
        let overrides = match &c.org_overrides {
            Some(p) => OverrideFile::load(&self.cfg.resolve(p)).stage(stage)?,
            None => OverrideFile::default(),
        };
        let records: Vec<NameRecord> = corpus.participations.iter().map(NameRecord::from).collect();
        let resolver = ResolverConfig {
            home_country: c.home_country.clone(),
            home_overrides: c.home_org_overrides.iter().cloned().collect(),
            ..ResolverConfig::default()
        };
        let resolution = entity_resolution::resolve(&records, &overrides, &resolver).stage(stage)?;
        resolution.assign(&mut corpus.participations);
        w.csv("enrich/organisations.csv", |b| resolution.write_organisations_csv(b)).stage(stage)?;
        w.csv("enrich/decisions.csv", |b| resolution.write_decisions_csv(b)).stage(stage)?;
        w.count("organisations", resolution.organisations.len() as f64);
        w.count(
            "homeOrganisations",
            resolution.organisations.iter().filter(|o| o.is_home_region).count() as f64,
        );

        tracing::info!("enrich: embedding");
        let tfidf_cfg = TfidfConfig {
            min_df: c.embedding.min_df,
            ..TfidfConfig::default()
        };
        let (fit, mut emb) =
            text_embedding::embed_corpus(&corpus, &tfidf_cfg, c.embedding.dim, c.embedding.seed).stage(stage)?;
        if let Some(p) = &c.embedding.import_path {
            emb = text_embedding::import_vectors(&self.cfg.resolve(p), &fit.doc_ids).stage(stage)?;
        }
        w.csv("enrich/vocabulary.csv", |b| fit.vocabulary.write_csv(b)).stage(stage)?;
        w.csv("enrich/embeddings.csv", |b| emb.write_csv(b)).stage(stage)?;
        w.count("vocabulary", fit.vocabulary.len() as f64);
        w.count("zeroVectors", emb.zero_rows.len() as f64);

        tracing::info!("enrich: classifying priority areas");
        let labels = &c.priority_labels;
        let rules = classifier::load_rules(&self.cfg.resolve(c.rules.as_ref().expect("validated")), labels)
            .stage(stage)?;
        let weak = classifier::weak_label(&corpus, &rules).stage(stage)?;
        let train_cfg = TrainConfig {
            lambda: c.classifier.lambda,
            min_examples: c.classifier.min_examples,
            ..TrainConfig::default()
        };
        let mut model = classifier::train(&emb, &weak, labels, &train_cfg).stage(stage)?;
        model.threshold = c.classifier.threshold;
        let predictions = classifier::predict(&model, &emb);
        w.csv("enrich/weak_labels.csv", |b| write_label_sets(&weak, b)).stage(stage)?;
        w.csv("enrich/labels.csv", |b| classifier::write_labels_csv(&predictions, b)).stage(stage)?;
        w.json("enrich/classifier.json", &model.diagnostics).stage(stage)?;
        if let Some(g) = &c.gold {
            let gold_a = classifier::load_gold(&self.cfg.resolve(&g.a)).stage(stage)?;
            let gold_b = match &g.b {
                Some(b) => Some(classifier::load_gold(&self.cfg.resolve(b)).stage(stage)?),
                None => None,
            };
            let predicted = classifier::label_sets(&predictions);
            let report = classifier::evaluate(&predicted, &gold_a, gold_b.as_ref(), labels).stage(stage)?;
            let mut weak_all = weak.clone();
            for p in &corpus.projects {
                weak_all.entry(p.project_id.clone()).or_default();
            }
            let weak_report = classifier::evaluate(&weak_all, &gold_a, None, labels).stage(stage)?;
            w.count("macroF1", report.macro_f1);
            w.json(
                "enrich/evaluation.json",
                &serde_json::json!({ "classifier": report, "weakRules": weak_report }),
            )
            .stage(stage)?;
        }

        tracing::info!("enrich: discovering topics");
        let topic_cfg = TopicModelConfig {
            n_init: c.topic.n_init,
            max_iters: c.topic.max_iters,
            ..TopicModelConfig::new(c.topic.k, c.topic.seed)
        };
        let (mut topics, clustering) = topic_model::kmeans(&emb, &topic_cfg).stage(stage)?;
        let topic_overrides = match &c.topic_labels {
            Some(p) => topic_model::load_overrides(&self.cfg.resolve(p)).stage(stage)?,
            None => BTreeMap::new(),
        };
        topic_model::name_topics(&mut topics, &fit, &topic_overrides).stage(stage)?;
        let sweep = topic_model::sweep_k(&emb.vectors, c.topic.sweep.iter().copied(), &topic_cfg);
        let topic_infos: Vec<TopicInfo> = topics
            .iter()
            .map(|t| TopicInfo {
                topic_id: t.topic_id,
                label: t.label.clone(),
                top_terms: t.top_terms.clone(),
                size: t.member_ids.len(),
            })
            .collect();
        w.json(
            "enrich/topics.json",
            &serde_json::json!({
                "k": c.topic.k,
                "inertia": clustering.inertia,
                "iterations": clustering.iterations,
                "restart": clustering.restart,
                "silhouette": topic_model::silhouette(&emb.vectors, &clustering.assignments),
                "topics": topic_infos,
            }),
        )
        .stage(stage)?;
        w.csv("enrich/topic_sweep.csv", |b| {
            let mut wr = csv::Writer::from_writer(b);
            wr.write_record(["k", "inertia", "silhouette"])?;
            for r in &sweep {
                wr.write_record([r.k.to_string(), r.inertia.to_string(), r.silhouette.to_string()])?;
            }
            wr.flush()?;
            Ok(())
        })
        .stage(stage)?;
        w.count("topics", topics.len() as f64);

        tracing::info!("enrich: tagging SDGs");
        let vocab = sdg_tagger::load_vocabulary(&self.cfg.resolve(c.vocabulary.as_ref().expect("validated")))
            .stage(stage)?;
        let matches = sdg_tagger::tag_corpus(&corpus, &vocab);
        w.csv("enrich/sdg_tags.csv", |b| sdg_tagger::write_tags_csv(&matches, b)).stage(stage)?;
        w.count("sdgTaggedProjects", matches.values().filter(|m| !m.is_empty()).count() as f64);

        let topic_of = topic_model::assignments_by_id(&topics);
        for p in &mut corpus.projects {
            let id = p.project_id.as_str();
            p.enrichment.priority_areas = predictions.get(id).cloned().unwrap_or_default();
            p.enrichment.topic_id = topic_of.get(id).copied();
            p.enrichment.sdg_tags = matches.get(id).map(|m| sdg_tagger::to_tags(m)).unwrap_or_default();
        }
        let enriched = Enriched {
            corpus,
            organisations: resolution.organisations,
            topics: topic_infos,
        };
        w.json("enrich/enriched.json", &enriched).stage(stage)?;
        self.finish(stage, w.record, started)?;
        Ok(enriched)
    }

    pub fn build(&self) -> Result<Snapshot, StageError> {
        let stage = Stage::Build;
        let started = Instant::now();
        let c = &self.cfg.config;
        let enrich_dir = self.run_dir.join("enrich");
        let enriched: Enriched =
            serde_json::from_slice(&fs::read(enrich_dir.join("enriched.json")).stage(stage)?).stage(stage)?;
        let Enriched {
            mut corpus,
            organisations,
            topics,
        } = enriched;
        let ids: Vec<String> = corpus.projects.iter().map(|p| p.project_id.clone()).collect();
        let emb: EmbeddingMatrix = text_embedding::import_vectors(&enrich_dir.join("embeddings.csv"), &ids).stage(stage)?;
        let mut w = Writer::new(&self.run_dir, stage).stage(stage)?;

        tracing::info!(n = emb.len(), "build: semantic map");
        let layout = semantic_map::tsne(&emb, &c.tsne).stage(stage)?;
        let topic_of: BTreeMap<String, usize> = corpus
            .projects
            .iter()
            .filter_map(|p| p.enrichment.topic_id.map(|t| (p.project_id.clone(), t)))
            .collect();
        w.csv("build/layout.csv", |b| layout.write_csv(&topic_of, b)).stage(stage)?;
        w.json(
            "build/map.json",
            &serde_json::json!({ "perplexityUsed": layout.perplexity_used, "klTrace": layout.kl_trace }),
        )
        .stage(stage)?;
        if let Some(&(_, kl)) = layout.kl_trace.last() {
            w.count("finalKl", kl);
        }
        for p in &mut corpus.projects {
            p.enrichment.map_xy = layout.coords.get(&p.project_id).copied();
        }

        tracing::info!("build: collaboration network");
        let all: BTreeSet<String> = ids.iter().cloned().collect();
        let graph = build_graph(&all, &corpus.participations, &organisations);
        let external = rank_external_partners(&all, &corpus.participations, &organisations, None);
        let net_layout = layout_force(&graph, c.network.layout_iterations, c.network.seed);
        w.csv("build/nodes.csv", |b| graph.write_nodes_csv(b)).stage(stage)?;
        w.csv("build/edges.csv", |b| graph.write_edges_csv(b)).stage(stage)?;
        w.csv("build/external_partners.csv", |b| write_external_csv(&external, b)).stage(stage)?;
        w.csv("build/network_layout.csv", |b| write_layout_csv(&net_layout, b)).stage(stage)?;
        w.count("nodes", graph.nodes.len() as f64);
        w.count("edges", graph.edges.len() as f64);
        w.count("externalPartners", external.len() as f64);

        // The snapshot carries the run summary of the stages before it.
        let run = self.manifest().stage(stage)?.summary();
        let snapshot = Snapshot {
            home_country: c.home_country.clone(),
            priority_labels: c.priority_labels.clone(),
            projects: corpus.projects,
            participations: corpus.participations,
            organisations,
            topics,
            network_layout: net_layout,
            run,
        };
        w.bytes(SNAPSHOT_FILE, &snapshot.to_json()).stage(stage)?;
        w.count("projects", snapshot.projects.len() as f64);
        self.finish(stage, w.record, started)?;
        tracing::info!("build: snapshot written");
        Ok(snapshot)
    }

    /// `ingest`, `enrich` and `build` in order.
    pub fn all(&self) -> Result<Snapshot, StageError> {
        self.ingest()?;
        self.enrich()?;
        self.build()
    }
}

fn portable_report(report: &ingest::IngestReport) -> ingest::IngestReport {
    let base = |f: &str| {
        Path::new(f)
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| f.to_string())
    };
    let mut out = report.clone();
    out.rows_read = report.rows_read.iter().map(|(k, v)| (base(k), *v)).collect();
    out.accepted = report.accepted.iter().map(|(k, v)| (base(k), *v)).collect();
    for r in &mut out.rejects {
        r.file = base(&r.file);
    }
    for wn in &mut out.warnings {
        wn.file = base(&wn.file);
    }
    out
}

fn write_label_sets<W: std::io::Write>(sets: &classifier::LabelSets, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["projectId", "area"])?;
    for (id, set) in sets {
        for a in set {
            w.write_record([id.as_str(), a])?;
        }
    }
    w.flush()?;
    Ok(())
}
