//! Multi-label priority-area classification.
//!
//! Training labels come from metadata rules (weak supervision); one
//! L2-regularized logistic regression per label is then fitted on the project
//! embeddings by full-batch gradient descent with backtracking line search.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::ingest::{Corpus, Project};
use crate::text_embedding::EmbeddingMatrix;

pub type LabelSets = BTreeMap<String, BTreeSet<String>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RuleField {
    Programme,
    TopicCode,
    MetadataTag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Polarity {
    Positive,
    Negative,
}

#[derive(Debug, Clone)]
pub struct WeakRule {
    pub area: String,
    pub field: RuleField,
    pub pattern: String,
    pub polarity: Polarity,
    matcher: Regex,
}

#[derive(Debug, thiserror::Error)]
pub enum ClassifierError {
    #[error("invalid pattern {pattern:?}: {reason}")]
    InvalidPattern { pattern: String, reason: String },
    #[error("rule area {0:?} is not a configured label")]
    UnknownArea(String),
    #[error("no weak-labelling rules given")]
    NoRules,
    #[error("label {label:?} has {positives} positive and {negatives} negative training documents (need 10 of each)")]
    InsufficientTrainingData {
        label: String,
        positives: usize,
        negatives: usize,
    },
    #[error("unknown project id {0:?}")]
    UnknownProjectId(String),
    #[error("empty gold standard")]
    EmptyGold,
    #[error("{file} line {line}: {reason}")]
    BadRow {
        file: String,
        line: u64,
        reason: String,
    },
    #[error("{0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// Anchored glob (`*`, `?`) or, with a `re:` prefix, an anchored regex.
fn compile_pattern(pattern: &str) -> Result<Regex, ClassifierError> {
    let body = match pattern.strip_prefix("re:") {
        Some(re) => re.to_string(),
        None => pattern
            .chars()
            .map(|c| match c {
                '*' => ".*".to_string(),
                '?' => ".".to_string(),
                c => regex::escape(&c.to_string()),
            })
            .collect(),
    };
    Regex::new(&format!("^(?:{body})$")).map_err(|e| ClassifierError::InvalidPattern {
        pattern: pattern.to_string(),
        reason: e.to_string(),
    })
}

impl WeakRule {
    pub fn new(
        area: &str,
        field: RuleField,
        pattern: &str,
        polarity: Polarity,
    ) -> Result<Self, ClassifierError> {
        Ok(WeakRule {
            area: area.to_string(),
            field,
            pattern: pattern.to_string(),
            polarity,
            matcher: compile_pattern(pattern)?,
        })
    }

    pub fn matches(&self, project: &Project) -> bool {
        match self.field {
            RuleField::Programme => self.matcher.is_match(&project.programme),
            RuleField::TopicCode => self.matcher.is_match(&project.call_topic_code),
            RuleField::MetadataTag => project.metadata_tags.iter().any(|t| self.matcher.is_match(t)),
        }
    }
}

/// Reads `area,field,pattern,polarity` rows; every area must be in `labels`.
pub fn load_rules(path: &Path, labels: &[String]) -> Result<Vec<WeakRule>, ClassifierError> {
    let data = std::fs::read_to_string(path)?;
    parse_rules(&data, labels, &path.display().to_string())
}

pub fn parse_rules(data: &str, labels: &[String], file: &str) -> Result<Vec<WeakRule>, ClassifierError> {
    let mut rdr = csv::Reader::from_reader(data.trim_start_matches('\u{feff}').as_bytes());
    let mut rules = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let bad = |reason: String| ClassifierError::BadRow {
            file: file.to_string(),
            line,
            reason,
        };
        let get = |i: usize| rec.get(i).unwrap_or("").trim();
        let area = get(0);
        if !labels.iter().any(|l| l == area) {
            return Err(ClassifierError::UnknownArea(area.to_string()));
        }
        let field = match get(1).to_uppercase().as_str() {
            "PROGRAMME" => RuleField::Programme,
            "TOPIC_CODE" => RuleField::TopicCode,
            "METADATA_TAG" => RuleField::MetadataTag,
            other => return Err(bad(format!("unknown field {other:?}"))),
        };
        let polarity = match get(3).to_uppercase().as_str() {
            "POSITIVE" => Polarity::Positive,
            "NEGATIVE" => Polarity::Negative,
            other => return Err(bad(format!("unknown polarity {other:?}"))),
        };
        rules.push(WeakRule::new(area, field, get(2), polarity)?);
    }
    Ok(rules)
}

/// A label is assigned when at least one positive rule and no negative rule
/// for it matches. Projects without any label are left out.
pub fn weak_label(corpus: &Corpus, rules: &[WeakRule]) -> Result<LabelSets, ClassifierError> {
    if rules.is_empty() {
        return Err(ClassifierError::NoRules);
    }
    let mut out = LabelSets::new();
    for p in &corpus.projects {
        let mut pos = BTreeSet::new();
        let mut neg = BTreeSet::new();
        for r in rules.iter().filter(|r| r.matches(p)) {
            match r.polarity {
                Polarity::Positive => pos.insert(r.area.clone()),
                Polarity::Negative => neg.insert(r.area.clone()),
            };
        }
        let labels: BTreeSet<String> = pos.difference(&neg).cloned().collect();
        if !labels.is_empty() {
            out.insert(p.project_id.clone(), labels);
        }
    }
    Ok(out)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Mean logistic loss plus `λ/2 ‖w‖²` (bias unpenalized). Parameters are laid
/// out as `[w_0, …, w_{d-1}, bias]`.
pub struct LogisticObjective<'a> {
    pub rows: Vec<&'a [f64]>,
    pub targets: Vec<f64>,
    pub lambda: f64,
}

impl LogisticObjective<'_> {
    fn dim(&self) -> usize {
        self.rows.first().map_or(0, |r| r.len())
    }

    fn margin(params: &[f64], row: &[f64]) -> f64 {
        let (w, b) = params.split_at(params.len() - 1);
        w.iter().zip(row).map(|(a, x)| a * x).sum::<f64>() + b[0]
    }

    pub fn loss(&self, params: &[f64]) -> f64 {
        let n = self.rows.len() as f64;
        let data: f64 = self
            .rows
            .iter()
            .zip(&self.targets)
            .map(|(row, y)| {
                let z = Self::margin(params, row);
                softplus(z) - y * z
            })
            .sum();
        let w = &params[..params.len() - 1];
        data / n + 0.5 * self.lambda * w.iter().map(|v| v * v).sum::<f64>()
    }

    pub fn gradient(&self, params: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let n = self.rows.len() as f64;
        let mut g = vec![0.0; d + 1];
        for (row, y) in self.rows.iter().zip(&self.targets) {
            let r = sigmoid(Self::margin(params, row)) - y;
            for (gj, xj) in g.iter_mut().zip(row.iter()) {
                *gj += r * xj;
            }
            g[d] += r;
        }
        for (j, gj) in g.iter_mut().enumerate() {
            *gj /= n;
            if j < d {
                *gj += self.lambda * params[j];
            }
        }
        g
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda: f64,
    pub grad_tol: f64,
    pub max_iters: usize,
    pub min_examples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 1e-3,
            grad_tol: 1e-5,
            max_iters: 2000,
            min_examples: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelFit {
    pub params: Vec<f64>,
    pub iterations: usize,
    pub grad_norm: f64,
    /// Loss before the first step and after every accepted step.
    pub loss_trace: Vec<f64>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Gradient descent from zero with Armijo backtracking.
pub fn fit_logistic(objective: &LogisticObjective<'_>, config: &TrainConfig) -> LabelFit {
    let mut params = vec![0.0; objective.dim() + 1];
    let mut loss = objective.loss(&params);
    let mut trace = vec![loss];
    let mut step = 1.0;
    let mut iterations = 0;
    let mut grad = objective.gradient(&params);
    let mut gnorm = norm(&grad);
    while gnorm >= config.grad_tol && iterations < config.max_iters {
        let g2 = gnorm * gnorm;
        step *= 2.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = params.iter().zip(&grad).map(|(p, g)| p - step * g).collect();
            let trial_loss = objective.loss(&trial);
            if trial_loss <= loss - 0.5 * step * g2 {
                accepted = Some((trial, trial_loss));
                break;
            }
            step *= 0.5;
        }
        let Some((next, next_loss)) = accepted else {
            break;
        };
        params = next;
        loss = next_loss;
        trace.push(loss);
        iterations += 1;
        grad = objective.gradient(&params);
        gnorm = norm(&grad);
    }
    LabelFit {
        params,
        iterations,
        grad_norm: gnorm,
        loss_trace: trace,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelDiagnostics {
    pub label: String,
    pub positives: usize,
    pub negatives: usize,
    pub iterations: usize,
    pub grad_norm: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorityModel {
    pub labels: Vec<String>,
    /// One `[w..., bias]` vector per label.
    pub weights: Vec<Vec<f64>>,
    pub threshold: f64,
    pub diagnostics: Vec<LabelDiagnostics>,
}

/// Fits one-vs-rest models over the weakly labelled projects. Rows are taken in
/// id order, so the result does not depend on how the inputs were ordered.
pub fn train(
    embeddings: &EmbeddingMatrix,
    weak_labels: &LabelSets,
    labels: &[String],
    config: &TrainConfig,
) -> Result<PriorityModel, ClassifierError> {
    let index: BTreeMap<&str, usize> = embeddings
        .ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let mut rows = Vec::new();
    let mut sets = Vec::new();
    for (id, set) in weak_labels {
        let i = *index
            .get(id.as_str())
            .ok_or_else(|| ClassifierError::UnknownProjectId(id.clone()))?;
        rows.push(embeddings.vectors[i].as_slice());
        sets.push(set);
    }
    let mut targets_per_label = Vec::new();
    for label in labels {
        let targets: Vec<f64> = sets
            .iter()
            .map(|s| if s.contains(label) { 1.0 } else { 0.0 })
            .collect();
        let positives = targets.iter().filter(|t| **t == 1.0).count();
        let negatives = targets.len() - positives;
        if positives < config.min_examples || negatives < config.min_examples {
            return Err(ClassifierError::InsufficientTrainingData {
                label: label.clone(),
                positives,
                negatives,
            });
        }
        targets_per_label.push((targets, positives, negatives));
    }
    let fits: Vec<(LabelFit, usize, usize)> = targets_per_label
        .into_par_iter()
        .map(|(targets, pos, neg)| {
            let objective = LogisticObjective {
                rows: rows.clone(),
                targets,
                lambda: config.lambda,
            };
            (fit_logistic(&objective, config), pos, neg)
        })
        .collect();
    let diagnostics = labels
        .iter()
        .zip(&fits)
        .map(|(label, (fit, pos, neg))| LabelDiagnostics {
            label: label.clone(),
            positives: *pos,
            negatives: *neg,
            iterations: fit.iterations,
            grad_norm: fit.grad_norm,
            final_loss: *fit.loss_trace.last().unwrap(),
        })
        .collect();
    Ok(PriorityModel {
        labels: labels.to_vec(),
        weights: fits.into_iter().map(|(f, _, _)| f.params).collect(),
        threshold: 0.5,
        diagnostics,
    })
}

impl PriorityModel {
    /// Sigmoid score of every label for one vector.
    pub fn scores(&self, vector: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .map(|p| sigmoid(LogisticObjective::margin(p, vector)))
            .collect()
    }

    /// Labels whose score reaches the threshold. The comparison is done on the
    /// log-odds scale so a threshold of 1 assigns nothing even when the
    /// sigmoid rounds to 1.
    pub fn assigned(&self, vector: &[f64]) -> BTreeMap<String, f64> {
        let cut = (self.threshold / (1.0 - self.threshold)).ln();
        self.weights
            .iter()
            .zip(&self.labels)
            .filter_map(|(p, label)| {
                let z = LogisticObjective::margin(p, vector);
                (z >= cut).then(|| (label.clone(), sigmoid(z)))
            })
            .collect()
    }
}

/// Per-project assigned labels with confidences, for every embedded project.
pub fn predict(model: &PriorityModel, embeddings: &EmbeddingMatrix) -> BTreeMap<String, BTreeMap<String, f64>> {
    embeddings
        .ids
        .iter()
        .zip(&embeddings.vectors)
        .map(|(id, v)| (id.clone(), model.assigned(v)))
        .collect()
}

pub fn label_sets(predictions: &BTreeMap<String, BTreeMap<String, f64>>) -> LabelSets {
    predictions
        .iter()
        .map(|(id, m)| (id.clone(), m.keys().cloned().collect()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub label: String,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub per_label: Vec<LabelMetrics>,
    pub macro_f1: f64,
    pub n_eval: usize,
    pub annotator_agreement: Option<f64>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Scores predictions against a gold standard over the gold projects. With a
/// second annotator, agreement is the mean per-label Cohen's kappa.
pub fn evaluate(
    predictions: &LabelSets,
    gold: &LabelSets,
    second_gold: Option<&LabelSets>,
    labels: &[String],
) -> Result<EvaluationReport, ClassifierError> {
    if gold.is_empty() {
        return Err(ClassifierError::EmptyGold);
    }
    if let Some(id) = gold.keys().find(|id| !predictions.contains_key(*id)) {
        return Err(ClassifierError::UnknownProjectId(id.clone()));
    }
    let empty = BTreeSet::new();
    let per_label: Vec<LabelMetrics> = labels
        .iter()
        .map(|label| {
            let (mut tp, mut fp, mut fn_) = (0, 0, 0);
            for (id, truth) in gold {
                let predicted = predictions.get(id).unwrap_or(&empty).contains(label);
                match (predicted, truth.contains(label)) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    (false, false) => {}
                }
            }
            let precision = ratio(tp, tp + fp);
            let recall = ratio(tp, tp + fn_);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            LabelMetrics {
                label: label.clone(),
                true_positives: tp,
                false_positives: fp,
                false_negatives: fn_,
                precision,
                recall,
                f1,
            }
        })
        .collect();
    let macro_f1 = if per_label.is_empty() {
        0.0
    } else {
        per_label.iter().map(|m| m.f1).sum::<f64>() / per_label.len() as f64
    };
    let annotator_agreement = second_gold.map(|other| {
        let kappas: Vec<f64> = labels.iter().map(|l| cohen_kappa(gold, other, l)).collect();
        kappas.iter().sum::<f64>() / kappas.len().max(1) as f64
    });
    Ok(EvaluationReport {
        per_label,
        macro_f1,
        n_eval: gold.len(),
        annotator_agreement,
    })
}

/// Binary Cohen's kappa for one label over the ids both annotators covered.
pub fn cohen_kappa(a: &LabelSets, b: &LabelSets, label: &str) -> f64 {
    let mut counts = [[0usize; 2]; 2];
    for (id, set_a) in a {
        if let Some(set_b) = b.get(id) {
            counts[set_a.contains(label) as usize][set_b.contains(label) as usize] += 1;
        }
    }
    let n = (counts[0][0] + counts[0][1] + counts[1][0] + counts[1][1]) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let po = (counts[0][0] + counts[1][1]) as f64 / n;
    let a1 = (counts[1][0] + counts[1][1]) as f64 / n;
    let b1 = (counts[0][1] + counts[1][1]) as f64 / n;
    let pe = a1 * b1 + (1.0 - a1) * (1.0 - b1);
    if (1.0 - pe).abs() < 1e-15 {
        if po == 1.0 {
            1.0
        } else {
            0.0
        }
    } else {
        (po - pe) / (1.0 - pe)
    }
}

/// Reads `projectId,area` rows. A row with an empty area records a project
/// that carries no label.
pub fn load_gold(path: &Path) -> Result<LabelSets, ClassifierError> {
    let data = std::fs::read_to_string(path)?;
    parse_gold(&data)
}

pub fn parse_gold(data: &str) -> Result<LabelSets, ClassifierError> {
    let mut rdr = csv::Reader::from_reader(data.trim_start_matches('\u{feff}').as_bytes());
    let mut out = LabelSets::new();
    for rec in rdr.records() {
        let rec = rec?;
        let id = rec.get(0).unwrap_or("").trim().to_string();
        let area = rec.get(1).unwrap_or("").trim().to_string();
        let set = out.entry(id).or_default();
        if !area.is_empty() {
            set.insert(area);
        }
    }
    Ok(out)
}

pub fn write_labels_csv<W: std::io::Write>(
    predictions: &BTreeMap<String, BTreeMap<String, f64>>,
    out: W,
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["projectId", "area", "confidence"])?;
    for (id, labels) in predictions {
        for (label, conf) in labels {
            w.write_record([id.as_str(), label, &conf.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}
