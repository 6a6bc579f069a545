//! Dense project embeddings.
//!
//! The default provider is TF-IDF followed by a seeded Gaussian random
//! projection. Projection entries come from a counter-based generator so any
//! implementation can rebuild the same matrix from `(seed, term_index)`:
//!
//! ```text
//! mix(x)            = splitmix64 finalizer of x
//! word(s, t, c)     = mix(mix(mix(s) ^ t) ^ c)
//! unit(w)           = ((w >> 11) + 0.5) / 2^53            in (0, 1)
//! entry(s, t, j)    = sqrt(-2 ln unit(word(s,t,2j))) * cos(2π unit(word(s,t,2j+1))) / sqrt(dim)
//! ```
//!
//! Externally computed vectors (for example from a transformer encoder) can be
//! loaded instead with [`import_vectors`].

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ingest::Corpus;

const STOPWORDS: &str = include_str!("../data/stopwords_en.txt");

pub const DEFAULT_DIM: usize = 128;
pub const DEFAULT_SEED: u64 = 42;

fn stopwords() -> &'static BTreeSet<&'static str> {
    static SET: OnceLock<BTreeSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| {
        STOPWORDS
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect()
    })
}

pub fn is_stopword(token: &str) -> bool {
    stopwords().contains(token)
}

/// Lowercases, splits on non-alphanumeric characters and drops short tokens
/// and stopwords.
pub fn tokenize(text: &str) -> Vec<String> {
    tokenize_with(text, &BTreeSet::new())
}

/// [`tokenize`] with additional stopwords.
pub fn tokenize_with(text: &str, extra_stopwords: &BTreeSet<String>) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() >= 2)
        .filter(|t| !is_stopword(t) && !extra_stopwords.contains(*t))
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    /// Sorted lexicographically.
    pub terms: Vec<String>,
    pub doc_freq: Vec<usize>,
    pub n_docs: usize,
}

impl Vocabulary {
    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.terms.binary_search_by(|t| t.as_str().cmp(term)).ok()
    }

    pub fn idf(&self, index: usize) -> f64 {
        idf(self.n_docs, self.doc_freq[index])
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["term", "docFreq", "idf"])?;
        for (i, t) in self.terms.iter().enumerate() {
            w.write_record([t.as_str(), &self.doc_freq[i].to_string(), &self.idf(i).to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Smoothed inverse document frequency: `ln((1 + n) / (1 + df)) + 1`.
pub fn idf(n_docs: usize, df: usize) -> f64 {
    ((1.0 + n_docs as f64) / (1.0 + df as f64)).ln() + 1.0
}

/// Row-major sparse matrix; each row is sorted by column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseMatrix {
    pub n_cols: usize,
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl SparseMatrix {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TfidfConfig {
    /// Terms with a lower document frequency are pruned.
    pub min_df: usize,
    pub extra_stopwords: BTreeSet<String>,
}

impl Default for TfidfConfig {
    fn default() -> Self {
        TfidfConfig {
            min_df: 2,
            extra_stopwords: BTreeSet::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TfidfFit {
    pub doc_ids: Vec<String>,
    pub vocabulary: Vocabulary,
    /// L2-normalized tf·idf rows.
    pub weights: SparseMatrix,
    /// Raw term counts over the pruned vocabulary.
    pub counts: SparseMatrix,
}

#[derive(Debug, thiserror::Error)]
pub enum EmbeddingError {
    #[error("no document has any token")]
    EmptyCorpus,
    #[error("line {line}: expected {expected} values, found {found}")]
    DimensionMismatch {
        line: u64,
        expected: usize,
        found: usize,
    },
    #[error("no vector for project(s): {}", .0.join(", "))]
    MissingProject(Vec<String>),
    #[error("line {line}: {reason}")]
    BadRow { line: u64, reason: String },
    #[error("projection dimension must be at least 2, got {0}")]
    BadDimension(usize),
    #[error("vectors file: {0}")]
    Csv(#[from] csv::Error),
    #[error("vectors file: {0}")]
    Io(#[from] std::io::Error),
}

pub fn fit_tfidf(corpus: &Corpus, config: &TfidfConfig) -> Result<TfidfFit, EmbeddingError> {
    let ids: Vec<String> = corpus.projects.iter().map(|p| p.project_id.clone()).collect();
    let texts: Vec<String> = corpus.projects.iter().map(|p| p.text()).collect();
    fit_tfidf_texts(&ids, &texts, config)
}

pub fn fit_tfidf_texts(
    ids: &[String],
    texts: &[String],
    config: &TfidfConfig,
) -> Result<TfidfFit, EmbeddingError> {
    let docs: Vec<BTreeMap<String, usize>> = texts
        .par_iter()
        .map(|t| {
            let mut tf = BTreeMap::new();
            for tok in tokenize_with(t, &config.extra_stopwords) {
                *tf.entry(tok).or_insert(0) += 1;
            }
            tf
        })
        .collect();
    if docs.iter().all(|d| d.is_empty()) {
        return Err(EmbeddingError::EmptyCorpus);
    }
    let mut df: BTreeMap<&str, usize> = BTreeMap::new();
    for d in &docs {
        for t in d.keys() {
            *df.entry(t.as_str()).or_insert(0) += 1;
        }
    }
    let kept: Vec<(&str, usize)> = df
        .into_iter()
        .filter(|(_, f)| *f >= config.min_df)
        .collect();
    let vocabulary = Vocabulary {
        terms: kept.iter().map(|(t, _)| t.to_string()).collect(),
        doc_freq: kept.iter().map(|(_, f)| *f).collect(),
        n_docs: docs.len(),
    };
    let index: HashMap<&str, usize> = vocabulary
        .terms
        .iter()
        .enumerate()
        .map(|(i, t)| (t.as_str(), i))
        .collect();
    let mut weights = Vec::with_capacity(docs.len());
    let mut counts = Vec::with_capacity(docs.len());
    for d in &docs {
        let mut crow = Vec::new();
        let mut wrow = Vec::new();
        for (t, &c) in d {
            if let Some(&i) = index.get(t.as_str()) {
                crow.push((i, c as f64));
                wrow.push((i, c as f64 * vocabulary.idf(i)));
            }
        }
        let norm = wrow.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        if norm > 0.0 {
            for (_, w) in &mut wrow {
                *w /= norm;
            }
        }
        weights.push(wrow);
        counts.push(crow);
    }
    let n_cols = vocabulary.len();
    Ok(TfidfFit {
        doc_ids: ids.to_vec(),
        vocabulary,
        weights: SparseMatrix { n_cols, rows: weights },
        counts: SparseMatrix { n_cols, rows: counts },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Provider {
    TfidfProjection,
    Imported,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMatrix {
    pub dim: usize,
    pub provider: Provider,
    /// Row order; sorted when built from a corpus.
    pub ids: Vec<String>,
    pub vectors: Vec<Vec<f64>>,
    /// Rows with no usable tokens; left as zero vectors.
    pub zero_rows: Vec<String>,
}

impl EmbeddingMatrix {
    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.ids.iter().position(|i| i == id).map(|i| self.vectors[i].as_slice())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["projectId".to_string()];
        header.extend((0..self.dim).map(|i| format!("v{i}")));
        w.write_record(&header)?;
        for (id, v) in self.ids.iter().zip(&self.vectors) {
            let mut row = vec![id.clone()];
            row.extend(v.iter().map(|x| x.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn counter_word(seed: u64, term: u64, counter: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ term) ^ counter)
}

fn unit(word: u64) -> f64 {
    ((word >> 11) as f64 + 0.5) / (1u64 << 53) as f64
}

/// Standard normal draw for projection entry `(term, component)`.
pub fn projection_normal(seed: u64, term: usize, component: usize) -> f64 {
    let c = 2 * component as u64;
    let u1 = unit(counter_word(seed, term as u64, c));
    let u2 = unit(counter_word(seed, term as u64, c + 1));
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn projection_row(seed: u64, term: usize, dim: usize) -> Vec<f64> {
    let scale = 1.0 / (dim as f64).sqrt();
    (0..dim).map(|j| projection_normal(seed, term, j) * scale).collect()
}

pub fn l2_normalize(v: &mut [f64]) -> bool {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 && norm.is_finite() {
        for x in v.iter_mut() {
            *x /= norm;
        }
        true
    } else {
        false
    }
}

/// Projects sparse rows into `dim` dimensions and L2-normalizes the result.
pub fn project_dense(
    matrix: &SparseMatrix,
    ids: &[String],
    dim: usize,
    seed: u64,
) -> Result<EmbeddingMatrix, EmbeddingError> {
    if dim < 2 {
        return Err(EmbeddingError::BadDimension(dim));
    }
    let projection: Vec<Vec<f64>> = (0..matrix.n_cols)
        .into_par_iter()
        .map(|t| projection_row(seed, t, dim))
        .collect();
    let vectors: Vec<(Vec<f64>, bool)> = matrix
        .rows
        .par_iter()
        .map(|row| {
            let mut v = vec![0.0; dim];
            for &(t, w) in row {
                for (acc, r) in v.iter_mut().zip(&projection[t]) {
                    *acc += w * r;
                }
            }
            let nonzero = l2_normalize(&mut v);
            (v, nonzero)
        })
        .collect();
    let zero_rows = ids
        .iter()
        .zip(&vectors)
        .filter(|(_, (_, nz))| !nz)
        .map(|(id, _)| id.clone())
        .collect();
    Ok(EmbeddingMatrix {
        dim,
        provider: Provider::TfidfProjection,
        ids: ids.to_vec(),
        vectors: vectors.into_iter().map(|(v, _)| v).collect(),
        zero_rows,
    })
}

/// Convenience: TF-IDF fit plus projection over a corpus.
pub fn embed_corpus(
    corpus: &Corpus,
    config: &TfidfConfig,
    dim: usize,
    seed: u64,
) -> Result<(TfidfFit, EmbeddingMatrix), EmbeddingError> {
    let fit = fit_tfidf(corpus, config)?;
    let emb = project_dense(&fit.weights, &fit.doc_ids, dim, seed)?;
    Ok((fit, emb))
}

/// Loads `projectId,v0,v1,...` vectors. Rows come out in `expected_ids` order;
/// ids not in `expected_ids` are ignored.
pub fn import_vectors(path: &Path, expected_ids: &[String]) -> Result<EmbeddingMatrix, EmbeddingError> {
    let data = std::fs::read_to_string(path)?;
    import_vectors_str(&data, expected_ids)
}

pub fn import_vectors_str(data: &str, expected_ids: &[String]) -> Result<EmbeddingMatrix, EmbeddingError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(data.trim_start_matches('\u{feff}').as_bytes());
    let header = rdr.headers()?.clone();
    let dim = header.len().saturating_sub(1);
    if dim < 1 {
        return Err(EmbeddingError::BadRow {
            line: 1,
            reason: "header has no vector columns".into(),
        });
    }
    let mut loaded: HashMap<String, Vec<f64>> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != dim + 1 {
            return Err(EmbeddingError::DimensionMismatch {
                line,
                expected: dim,
                found: rec.len().saturating_sub(1),
            });
        }
        let id = rec[0].trim().to_string();
        let v = rec
            .iter()
            .skip(1)
            .map(|x| x.trim().parse::<f64>().ok().filter(|f| f.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| EmbeddingError::BadRow {
                line,
                reason: "non-numeric value".into(),
            })?;
        if loaded.insert(id.clone(), v).is_some() {
            return Err(EmbeddingError::BadRow {
                line,
                reason: format!("duplicate project id {id:?}"),
            });
        }
    }
    let missing: Vec<String> = expected_ids
        .iter()
        .filter(|id| !loaded.contains_key(*id))
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(EmbeddingError::MissingProject(missing));
    }
    let mut vectors = Vec::with_capacity(expected_ids.len());
    let mut zero_rows = Vec::new();
    for id in expected_ids {
        let mut v = loaded.remove(id).expect("checked above");
        if !l2_normalize(&mut v) {
            zero_rows.push(id.clone());
        }
        vectors.push(v);
    }
    Ok(EmbeddingMatrix {
        dim,
        provider: Provider::Imported,
        ids: expected_ids.to_vec(),
        vectors,
        zero_rows,
    })
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}
