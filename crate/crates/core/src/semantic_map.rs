//! Exact t-SNE projection of project embeddings to 2D.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::text_embedding::EmbeddingMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iters: usize,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    pub learning_rate: f64,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 30.0,
            iters: 1000,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            learning_rate: 200.0,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            seed: 42,
        }
    }
}

pub const KL_SAMPLE_EVERY: usize = 50;
pub const ENTROPY_TOL: f64 = 1e-5;
pub const MAX_BISECTION_STEPS: usize = 50;

#[derive(Debug, thiserror::Error)]
pub enum MapError {
    #[error("point {0} is at distance zero from every other point")]
    DegenerateDistances(usize),
    #[error("need at least {need} points, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("non-finite gradient at iteration {0}")]
    NonFiniteGradient(usize),
    #[error("invalid configuration: {0}")]
    BadConfig(String),
}

/// Dense row-major N×N matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Square {
    pub n: usize,
    pub data: Vec<f64>,
}

impl Square {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }
}

pub fn squared_distances(points: &[Vec<f64>]) -> Square {
    let n = points.len();
    let data = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            (0..n).map(move |j| {
                points[i]
                    .iter()
                    .zip(&points[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
            })
        })
        .collect();
    Square { n, data }
}

/// Shannon entropy in bits of a probability row.
pub fn entropy_bits(row: &[f64]) -> f64 {
    row.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.log2()).sum()
}

/// Conditional row `p_{j|i}` for precision `beta`; distances are shifted by
/// the row minimum, which cancels in the normalization.
fn conditional_row(d: &[f64], i: usize, beta: f64, dmin: f64) -> Vec<f64> {
    let mut row: Vec<f64> = d
        .iter()
        .enumerate()
        .map(|(j, &dj)| if j == i { 0.0 } else { (-(dj - dmin) * beta).exp() })
        .collect();
    let s: f64 = row.iter().sum();
    row.iter_mut().for_each(|v| *v /= s);
    row
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    /// Conditional probabilities `p_{j|i}`, rows summing to 1.
    pub conditional: Square,
    pub betas: Vec<f64>,
    pub entropies: Vec<f64>,
}

/// Per-row bisection on log(beta) so that H(P_i) = log2(perplexity).
pub fn perplexity_calibration(distances: &Square, perplexity: f64) -> Result<Calibration, MapError> {
    let n = distances.n;
    if n < 3 {
        return Err(MapError::TooFewPoints { need: 3, got: n });
    }
    let target = perplexity.log2();
    let rows: Vec<Result<(Vec<f64>, f64, f64), MapError>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let d = distances.row(i);
            let others = || d.iter().enumerate().filter(move |(j, _)| *j != i).map(|(_, v)| *v);
            let dmax = others().fold(0.0, f64::max);
            if dmax <= 0.0 {
                return Err(MapError::DegenerateDistances(i));
            }
            let dmin = others().fold(f64::INFINITY, f64::min);
            let spread = dmax - dmin;
            // beta = exp(t) / spread; entropy decreases in t.
            let (mut lo, mut hi) = (-40.0f64, 40.0f64);
            let scale = if spread > 0.0 { spread } else { 1.0 };
            let mut best = None;
            for _ in 0..MAX_BISECTION_STEPS {
                let t = 0.5 * (lo + hi);
                let beta = t.exp() / scale;
                let row = conditional_row(d, i, beta, dmin);
                let h = entropy_bits(&row);
                let done = (h - target).abs() <= ENTROPY_TOL;
                best = Some((row, beta, h));
                if done {
                    break;
                }
                if h > target {
                    lo = t;
                } else {
                    hi = t;
                }
            }
            Ok(best.unwrap())
        })
        .collect();
    let mut data = Vec::with_capacity(n * n);
    let mut betas = Vec::with_capacity(n);
    let mut entropies = Vec::with_capacity(n);
    for r in rows {
        let (row, beta, h) = r?;
        data.extend(row);
        betas.push(beta);
        entropies.push(h);
    }
    Ok(Calibration {
        conditional: Square { n, data },
        betas,
        entropies,
    })
}

/// `p_ij = (p_{j|i} + p_{i|j}) / 2N`.
pub fn symmetrize(conditional: &Square) -> Square {
    let n = conditional.n;
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            data[i * n + j] = (conditional.get(i, j) + conditional.get(j, i)) / (2.0 * n as f64);
        }
    }
    Square { n, data }
}

pub fn joint_probabilities(points: &[Vec<f64>], perplexity: f64) -> Result<Square, MapError> {
    let d = squared_distances(points);
    Ok(symmetrize(&perplexity_calibration(&d, perplexity)?.conditional))
}

fn student_kernel(y: &[[f64; 2]]) -> (Vec<f64>, f64) {
    let n = y.len();
    let w: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            (0..n).map(move |j| {
                if i == j {
                    0.0
                } else {
                    let dx = y[i][0] - y[j][0];
                    let dy = y[i][1] - y[j][1];
                    1.0 / (1.0 + dx * dx + dy * dy)
                }
            })
        })
        .collect();
    let z = w.iter().sum();
    (w, z)
}

/// KL(P || Q) with Student-t Q.
pub fn kl_divergence(p: &Square, y: &[[f64; 2]]) -> f64 {
    let (w, z) = student_kernel(y);
    p.data
        .iter()
        .zip(&w)
        .filter(|(&pij, _)| pij > 0.0)
        .map(|(&pij, &wij)| pij * (pij / (wij / z).max(f64::MIN_POSITIVE)).ln())
        .sum()
}

/// `dC/dy_i = 4 Σ_j (p_ij − q_ij)(y_i − y_j)(1 + |y_i − y_j|²)^-1`, with P
/// optionally multiplied by `exaggeration`.
pub fn kl_gradient(p: &Square, y: &[[f64; 2]], exaggeration: f64) -> Vec<[f64; 2]> {
    let n = y.len();
    let (w, z) = student_kernel(y);
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut g = [0.0; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let wij = w[i * n + j];
                let m = (exaggeration * p.get(i, j) - wij / z) * wij;
                g[0] += 4.0 * m * (y[i][0] - y[j][0]);
                g[1] += 4.0 * m * (y[i][1] - y[j][1]);
            }
            g
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapLayout {
    pub coords: BTreeMap<String, [f64; 2]>,
    /// (iteration, KL) every 50 iterations.
    pub kl_trace: Vec<(usize, f64)>,
    pub perplexity_used: f64,
}

impl MapLayout {
    pub fn write_csv<W: std::io::Write>(&self, topics: &BTreeMap<String, usize>, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["projectId", "x", "y", "topicId"])?;
        for (id, [x, y]) in &self.coords {
            let topic = topics.get(id).map(|t| t.to_string()).unwrap_or_default();
            w.write_record([id.as_str(), &x.to_string(), &y.to_string(), &topic])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs the descent on points given in row order; returns positions and
/// the KL trace.
pub fn tsne_points(points: &[Vec<f64>], config: &TsneConfig) -> Result<(Vec<[f64; 2]>, Vec<(usize, f64)>, f64), MapError> {
    let n = points.len();
    if n < 5 {
        return Err(MapError::TooFewPoints { need: 5, got: n });
    }
    if config.perplexity < 2.0 || config.iters < config.exaggeration_iters {
        return Err(MapError::BadConfig(format!(
            "perplexity {} must be >= 2 and iters {} >= {}",
            config.perplexity, config.iters, config.exaggeration_iters
        )));
    }
    let perplexity = config.perplexity.min((n - 1) as f64 / 3.0);
    let p = joint_probabilities(points, perplexity)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let init = Normal::new(0.0, 1e-4).unwrap();
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [init.sample(&mut rng), init.sample(&mut rng)]).collect();
    let mut velocity = vec![[0.0f64; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut trace = Vec::new();

    for iter in 0..config.iters {
        let early = iter < config.exaggeration_iters;
        let exaggeration = if early { config.early_exaggeration } else { 1.0 };
        let momentum = if early { config.initial_momentum } else { config.final_momentum };
        let grad = kl_gradient(&p, &y, exaggeration);
        if grad.iter().any(|g| !g[0].is_finite() || !g[1].is_finite()) {
            return Err(MapError::NonFiniteGradient(iter));
        }
        for i in 0..n {
            for d in 0..2 {
                let flipped = grad[i][d] * velocity[i][d] < 0.0;
                gains[i][d] = if flipped { gains[i][d] + 0.2 } else { gains[i][d] * 0.8 };
                gains[i][d] = gains[i][d].max(0.01);
                velocity[i][d] = momentum * velocity[i][d] - config.learning_rate * gains[i][d] * grad[i][d];
                y[i][d] += velocity[i][d];
            }
        }
        recenter(&mut y);
        if (iter + 1) % KL_SAMPLE_EVERY == 0 {
            trace.push((iter + 1, kl_divergence(&p, &y)));
        }
    }
    Ok((y, trace, perplexity))
}

fn recenter(y: &mut [[f64; 2]]) {
    let n = y.len() as f64;
    let mx = y.iter().map(|p| p[0]).sum::<f64>() / n;
    let my = y.iter().map(|p| p[1]).sum::<f64>() / n;
    for p in y.iter_mut() {
        p[0] -= mx;
        p[1] -= my;
    }
}

pub fn tsne(embeddings: &EmbeddingMatrix, config: &TsneConfig) -> Result<MapLayout, MapError> {
    let (y, kl_trace, perplexity_used) = tsne_points(&embeddings.vectors, config)?;
    Ok(MapLayout {
        coords: embeddings.ids.iter().cloned().zip(y).collect(),
        kl_trace,
        perplexity_used,
    })
}

fn ranks_from(d: &Square, i: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..d.n).filter(|&j| j != i).collect();
    order.sort_by(|&a, &b| d.get(i, a).total_cmp(&d.get(i, b)).then(a.cmp(&b)));
    order
}

/// Trustworthiness of a low-dimensional embedding with `k` neighbours:
/// `1 − 2/(n k (2n − 3k − 1)) Σ_i Σ_{j ∈ U_i} (r(i, j) − k)`, where `U_i` are
/// output neighbours that are not input neighbours and `r` is the input rank.
pub fn trustworthiness(high: &[Vec<f64>], low: &[[f64; 2]], k: usize) -> f64 {
    let n = high.len();
    assert!(k < n / 2, "k must be below n/2");
    let dh = squared_distances(high);
    let dl = squared_distances(&low.iter().map(|p| p.to_vec()).collect::<Vec<_>>());
    let penalty: f64 = (0..n)
        .into_par_iter()
        .map(|i| {
            let high_order = ranks_from(&dh, i);
            let mut rank = vec![0usize; n];
            for (r, &j) in high_order.iter().enumerate() {
                rank[j] = r + 1;
            }
            ranks_from(&dl, i)
                .iter()
                .take(k)
                .filter(|&&j| rank[j] > k)
                .map(|&j| (rank[j] - k) as f64)
                .sum::<f64>()
        })
        .sum();
    1.0 - 2.0 / (n as f64 * k as f64 * (2.0 * n as f64 - 3.0 * k as f64 - 1.0)) * penalty
}
