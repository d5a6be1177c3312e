//! Sentence and description embeddings from per-token layer stacks.
//!
//! Each word's vector is the mean of a contiguous range of encoder hidden
//! layers. A sentence is the mean of its word vectors, and a description is
//! pooled over its sentences.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bundle::TokenLayerTensor;
use crate::error::{Error, Result};

/// Inclusive range of layer indices averaged per token, out of a stack of
/// `n_layers` (index 0 is the embedding output).
///
/// The default averages hidden layers 2 through 12 of a 13-entry stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerRange {
    pub first: usize,
    pub last: usize,
    pub n_layers: usize,
}

impl Default for LayerRange {
    fn default() -> Self {
        LayerRange {
            first: 2,
            last: 12,
            n_layers: 13,
        }
    }
}

impl LayerRange {
    pub fn new(first: usize, last: usize, n_layers: usize) -> Result<Self> {
        if first > last || last >= n_layers {
            return Err(Error::Invalid(format!(
                "layer range {first}..{last} does not fit a {n_layers}-layer stack"
            )));
        }
        Ok(LayerRange { first, last, n_layers })
    }

    pub fn count(&self) -> usize {
        self.last - self.first + 1
    }
}

impl fmt::Display for LayerRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.first, self.last)
    }
}

/// Parses `A..B` against the default stack depth.
impl FromStr for LayerRange {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Invalid(format!("layer range must look like A..B, got {s:?}"));
        let (a, b) = s.split_once("..").ok_or_else(bad)?;
        let first = a.trim().parse().map_err(|_| bad())?;
        let last = b.trim().parse().map_err(|_| bad())?;
        LayerRange::new(first, last, LayerRange::default().n_layers)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    #[default]
    Mean,
    Max,
}

impl FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Pooling::Mean),
            "max" => Ok(Pooling::Max),
            _ => Err(Error::Invalid(format!("unknown pooling {s:?} (mean | max)"))),
        }
    }
}

/// Mean of the selected layers of one token's flat `[n_layers * dim]` stack.
pub fn token_embedding(stack: &[f32], dim: usize, range: LayerRange) -> Result<Vec<f64>> {
    if dim == 0 || stack.len() != range.n_layers * dim {
        return Err(Error::Dimension(format!(
            "expected a stack of {} layers of width {dim}, got {} values",
            range.n_layers,
            stack.len()
        )));
    }
    let mut acc = vec![0.0f64; dim];
    for layer in stack.chunks_exact(dim).skip(range.first).take(range.count()) {
        for (a, &v) in acc.iter_mut().zip(layer) {
            *a += f64::from(v);
        }
    }
    let n = range.count() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

/// Element-wise mean over token embeddings.
pub fn sentence_embedding(tokens: &[Vec<f64>]) -> Result<Vec<f64>> {
    mean_rows(tokens).ok_or_else(|| Error::Dimension("sentence has no tokens".into()))?
}

pub fn document_vector(sentences: &[Vec<f64>], pooling: Pooling) -> Result<Vec<f64>> {
    match pooling {
        Pooling::Mean => mean_rows(sentences),
        Pooling::Max => max_rows(sentences),
    }
    .ok_or_else(|| Error::Dimension("description has no sentences".into()))?
}

fn check_widths(rows: &[Vec<f64>]) -> Result<usize> {
    let width = rows[0].len();
    if let Some(bad) = rows.iter().find(|r| r.len() != width) {
        return Err(Error::Dimension(format!("mixed widths {width} and {}", bad.len())));
    }
    Ok(width)
}

fn mean_rows(rows: &[Vec<f64>]) -> Option<Result<Vec<f64>>> {
    if rows.is_empty() {
        return None;
    }
    Some(check_widths(rows).map(|width| {
        let mut acc = vec![0.0; width];
        for r in rows {
            acc.iter_mut().zip(r).for_each(|(a, v)| *a += v);
        }
        acc.iter_mut().for_each(|a| *a /= rows.len() as f64);
        acc
    }))
}

fn max_rows(rows: &[Vec<f64>]) -> Option<Result<Vec<f64>>> {
    if rows.is_empty() {
        return None;
    }
    Some(check_widths(rows).map(|_| {
        let mut acc = rows[0].clone();
        for r in &rows[1..] {
            acc.iter_mut().zip(r).for_each(|(a, &v)| *a = a.max(v));
        }
        acc
    }))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DescriptionFeatures {
    pub per_sentence: Vec<Vec<f64>>,
    pub document: Vec<f64>,
}

/// Sentence embeddings for every stored sentence of `tensor` plus their
/// pooled description vector.
pub fn describe(tensor: &TokenLayerTensor, range: LayerRange, pooling: Pooling) -> Result<DescriptionFeatures> {
    if tensor.n_layers != range.n_layers {
        return Err(Error::Dimension(format!(
            "tensor has {} layers, layer range expects {}",
            tensor.n_layers, range.n_layers
        )));
    }
    let per_sentence = (0..tensor.sentences.len())
        .map(|s| {
            let tokens = (0..tensor.sentences[s].n_tokens)
                .map(|t| token_embedding(tensor.stack(s, t), tensor.dim, range))
                .collect::<Result<Vec<_>>>()?;
            sentence_embedding(&tokens)
        })
        .collect::<Result<Vec<_>>>()?;
    let document = document_vector(&per_sentence, pooling)?;
    Ok(DescriptionFeatures { per_sentence, document })
}
