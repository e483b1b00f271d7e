//! Prototypical-network episode math: class prototypes are mean support
//! embeddings, queries are scored by a softmax over negative squared Euclidean
//! distances, and the loss is the mean negative log-likelihood of the true
//! category over the query set.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::features::FeatureMatrix;
use crate::nets::{EmbeddingBatch, Network};
use crate::tensor::{Mode, Real, Tape, Tensor, Var};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Role {
    Core,
    Unknown,
    Silence,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub name: String,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Labeled<S> {
    pub item: S,
    pub label: usize,
}

/// One N-way K-shot task. Category indices run over `categories`; optional
/// (unknown/silence) categories sit at arbitrary positions among the core ones.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode<S> {
    pub categories: Vec<Category>,
    pub support: Vec<Labeled<S>>,
    pub query: Vec<Labeled<S>>,
}

impl<S> Episode<S> {
    pub fn way_total(&self) -> usize {
        self.categories.len()
    }

    /// Number of core categories (N).
    pub fn n_core(&self) -> usize {
        self.categories.iter().filter(|c| c.role == Role::Core).count()
    }

    pub fn support_labels(&self) -> Vec<usize> {
        self.support.iter().map(|l| l.label).collect()
    }

    pub fn query_labels(&self) -> Vec<usize> {
        self.query.iter().map(|l| l.label).collect()
    }

    /// Checks for exactly `k_shot` support and `n_query` query items per category.
    pub fn validate(&self, k_shot: usize, n_query: usize) -> Result<()> {
        let way = self.way_total();
        let mut s = alloc::vec![0usize; way];
        let mut q = alloc::vec![0usize; way];
        for (items, counts) in [(&self.support, &mut s), (&self.query, &mut q)] {
            for it in items.iter() {
                if it.label >= way {
                    return Err(Error::LabelOutOfRange { label: it.label, categories: way });
                }
                counts[it.label] += 1;
            }
        }
        if s.iter().any(|&c| c != k_shot) || q.iter().any(|&c| c != n_query) {
            return Err(Error::InvalidEpisode(alloc::format!(
                "support counts {s:?} / query counts {q:?}, expected {k_shot} / {n_query}"
            )));
        }
        Ok(())
    }

    /// Replaces every payload, keeping labels and order.
    pub fn try_map<U, E>(self, mut f: impl FnMut(S) -> core::result::Result<U, E>) -> core::result::Result<Episode<U>, E> {
        let mut conv = |v: Vec<Labeled<S>>| -> core::result::Result<Vec<Labeled<U>>, E> {
            v.into_iter().map(|l| Ok(Labeled { item: f(l.item)?, label: l.label })).collect()
        };
        let support = conv(self.support)?;
        let query = conv(self.query)?;
        Ok(Episode { categories: self.categories, support, query })
    }
}

/// Per-category mean embeddings, `way × dim`, row order = category index.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    pub prototypes: Vec<f32>,
    pub way: usize,
    pub dim: usize,
}

impl PrototypeSet {
    pub fn row(&self, c: usize) -> &[f32] {
        &self.prototypes[c * self.dim..(c + 1) * self.dim]
    }
}

/// Prototype `c` = mean of the support embeddings labelled `c`.
pub fn compute_prototypes<T: Real>(tape: &mut Tape<T>, support: Var, labels: &[usize], way: usize) -> Result<Var> {
    tape.group_mean(support, labels, way)
}

/// Non-differentiable prototypes from an embedding batch.
pub fn prototypes_from(embeddings: &EmbeddingBatch, labels: &[usize], way: usize) -> Result<PrototypeSet> {
    let mut tape = Tape::<f64>::new();
    let t = Tensor::new(
        &[embeddings.batch, embeddings.dim],
        embeddings.values.iter().map(|&v| v as f64).collect(),
    )?;
    let x = tape.constant(t);
    let p = tape.group_mean(x, labels, way)?;
    Ok(PrototypeSet {
        prototypes: tape.value(p).data().iter().map(|&v| v as f32).collect(),
        way,
        dim: embeddings.dim,
    })
}

/// `M × C` squared Euclidean distances.
pub fn squared_euclidean<T: Real>(tape: &mut Tape<T>, queries: Var, prototypes: Var) -> Result<Var> {
    tape.sq_dist(queries, prototypes)
}

/// `log P(c | q) = −d[q, c] − logsumexp_n(−d[q, n])`.
pub fn episode_log_probs<T: Real>(tape: &mut Tape<T>, distances: Var) -> Result<Var> {
    tape.neg_log_softmax(distances)
}

/// Mean negative log-likelihood of the true categories.
pub fn episode_loss<T: Real>(tape: &mut Tape<T>, log_probs: Var, labels: &[usize]) -> Result<Var> {
    tape.nll_mean(log_probs, labels)
}

/// Arg-max per row; the lowest index wins ties.
pub fn classify<T: Real>(log_probs: &Tensor<T>) -> Vec<usize> {
    let cols = log_probs.shape().get(1).copied().unwrap_or(1);
    log_probs
        .data()
        .chunks(cols)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Fraction of predictions equal to their labels (0 for an empty set).
pub fn episode_accuracy(preds: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    preds.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / labels.len() as f64
}

/// Forward pass of one episode through `net`, support and query in one batch.
pub struct EpisodeForward<T> {
    pub tape: Tape<T>,
    pub loss: Var,
    pub log_probs: Var,
}

impl<T: Real> EpisodeForward<T> {
    pub fn loss_value(&self) -> f64 {
        self.tape.value(self.loss).data()[0].as_f64()
    }

    pub fn predictions(&self) -> Vec<usize> {
        classify(self.tape.value(self.log_probs))
    }
}

pub fn episode_forward<T: Real>(
    net: &mut Network<T>,
    episode: &Episode<FeatureMatrix>,
    mode: Mode,
) -> Result<EpisodeForward<T>> {
    let way = episode.way_total();
    let n_support = episode.support.len();
    let mut tape = Tape::new();
    let input = net.input_tensor(episode.support.iter().chain(&episode.query).map(|l| &l.item))?;
    let x = tape.constant(input);
    let emb = net.forward(&mut tape, x, mode)?;
    let support_rows: Vec<usize> = (0..n_support).collect();
    let query_rows: Vec<usize> = (n_support..n_support + episode.query.len()).collect();
    let s = tape.select_rows(emb, &support_rows)?;
    let q = tape.select_rows(emb, &query_rows)?;
    let protos = compute_prototypes(&mut tape, s, &episode.support_labels(), way)?;
    let d = squared_euclidean(&mut tape, q, protos)?;
    let log_probs = episode_log_probs(&mut tape, d)?;
    let loss = episode_loss(&mut tape, log_probs, &episode.query_labels())?;
    Ok(EpisodeForward { tape, loss, log_probs })
}
