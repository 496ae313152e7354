//! Self-supervised utility objectives.
//!
//! Two representative pretexts are provided: a contrast-based one (mutual
//! information between a graph and a feature-shuffled corruption of it,
//! scored by a bilinear discriminator against the mean-readout summary) and
//! a generation-based one (edge reconstruction from embedding inner products
//! against sampled non-edges).

use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::encoder::{encode, EncoderParams};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::rng::{self, stream};
use crate::tensor::{bce_with_logits, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PretextKind {
    Contrastive,
    Generative,
}

impl std::fmt::Display for PretextKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PretextKind::Contrastive => write!(f, "contrastive"),
            PretextKind::Generative => write!(f, "generative"),
        }
    }
}

impl FromStr for PretextKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<PretextKind> {
        match s {
            "contrastive" => Ok(PretextKind::Contrastive),
            "generative" => Ok(PretextKind::Generative),
            other => Err(Error::Input(format!("unknown pretext kind {other:?}"))),
        }
    }
}

/// A pretext objective plus its trainable head state. The discriminator
/// weight is part of the trainable head and is discarded at checkpoint time;
/// only the encoder constitutes the protected asset.
pub struct Pretext {
    pub kind: PretextKind,
    /// `k×k` bilinear discriminator (contrastive only).
    pub disc: Option<Tensor>,
    /// Non-edges sampled per true edge (generative only).
    pub negative_ratio: usize,
    pub seed: u64,
}

impl Pretext {
    pub fn init(
        kind: PretextKind,
        embed_dim: usize,
        negative_ratio: usize,
        seed: u64,
    ) -> Result<Pretext> {
        if negative_ratio == 0 {
            return Err(Error::Input("negative_ratio must be >= 1".into()));
        }
        let disc = match kind {
            PretextKind::Contrastive => {
                let mut r = rng::substream(seed, stream::PRETEXT);
                let bound = (6.0 / (2 * embed_dim) as f64).sqrt();
                let data: Vec<f64> = (0..embed_dim * embed_dim)
                    .map(|_| r.gen_range(-bound..bound))
                    .collect();
                Some(Tensor::parameter(&[embed_dim, embed_dim], data)?)
            }
            PretextKind::Generative => None,
        };
        Ok(Pretext {
            kind,
            disc,
            negative_ratio,
            seed,
        })
    }

    /// Head parameters trained alongside the encoder.
    pub fn head_params(&self) -> Vec<Tensor> {
        self.disc.iter().cloned().collect()
    }

    /// Loss for one epoch, plus the full-graph embeddings it already computed
    /// (reused by the watermark terms).
    pub fn loss_with_embeddings(
        &self,
        params: &EncoderParams,
        g: &Graph,
        epoch: u64,
    ) -> Result<(Tensor, Tensor)> {
        match self.kind {
            PretextKind::Contrastive => {
                let disc = self
                    .disc
                    .as_ref()
                    .expect("contrastive pretext has a discriminator");
                let corrupt_seed = rng::indexed_seed(self.seed, stream::TRAIN, epoch);
                contrastive_with_embeddings(params, disc, g, corrupt_seed)
            }
            PretextKind::Generative => {
                let neg_seed = rng::indexed_seed(self.seed, stream::NEGATIVES, epoch);
                generative_with_embeddings(params, g, self.negative_ratio, neg_seed)
            }
        }
    }
}

/// Return `g` with its feature rows permuted uniformly at random;
/// the adjacency is untouched. Deterministic per seed.
pub fn corrupt_features(g: &Graph, seed: u64) -> Graph {
    let n = g.n();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng::substream(seed, "corrupt"));
    let d = g.feature_dim();
    let src = g.features().data();
    let mut fdata = Vec::with_capacity(n * d);
    for &p in &perm {
        fdata.extend_from_slice(&src[p * d..p * d + d]);
    }
    drop(src);
    let features = Tensor::from_vec(&[n, d], fdata).expect("shape preserved");
    g.replace_features(features).expect("shape preserved")
}

fn contrastive_with_embeddings(
    params: &EncoderParams,
    disc: &Tensor,
    g: &Graph,
    seed: u64,
) -> Result<(Tensor, Tensor)> {
    let h = encode(params, g)?;
    let h_corrupt = encode(params, &corrupt_features(g, seed))?;
    let k = h.cols();
    // summary vector: sigmoid of the mean embedding
    let summary = h.mean_rows()?.sigmoid().reshape(&[k, 1])?;
    let scores = disc.matmul(&summary)?; // [k,1]
    let pos = h.matmul(&scores)?; // [n,1]
    let neg = h_corrupt.matmul(&scores)?;
    let n = g.n();
    let ones = Tensor::from_vec(&[n, 1], vec![1.0; n])?;
    let zeros = Tensor::from_vec(&[n, 1], vec![0.0; n])?;
    // halves are the same size, so the mean over all 2n logits is the
    // average of the two per-half means
    let loss = bce_with_logits(&pos, &ones)?
        .add(&bce_with_logits(&neg, &zeros)?)?
        .scale(0.5);
    Ok((loss, h))
}

/// Contrastive utility loss alone (see [`Pretext::loss_with_embeddings`]).
pub fn contrastive_utility_loss(
    params: &EncoderParams,
    disc: &Tensor,
    g: &Graph,
    seed: u64,
) -> Result<Tensor> {
    contrastive_with_embeddings(params, disc, g, seed).map(|(l, _)| l)
}

fn generative_with_embeddings(
    params: &EncoderParams,
    g: &Graph,
    negative_ratio: usize,
    seed: u64,
) -> Result<(Tensor, Tensor)> {
    let edges = g.edges();
    if edges.is_empty() {
        return Err(Error::Input(
            "generative pretext needs a graph with at least one edge".into(),
        ));
    }
    let h = encode(params, g)?;
    let negatives = sample_non_edges(g, negative_ratio * edges.len(), seed)?;
    let pos_logits = h.pairwise_dot(edges)?;
    let neg_logits = h.pairwise_dot(&negatives)?;
    let n_pos = edges.len() as f64;
    let n_neg = negatives.len() as f64;
    let ones = Tensor::from_vec(&[edges.len()], vec![1.0; edges.len()])?;
    let zeros = Tensor::from_vec(&[negatives.len()], vec![0.0; negatives.len()])?;
    // weighted combination = mean over all (1 + ratio)·|E| logits
    let loss = bce_with_logits(&pos_logits, &ones)?
        .scale(n_pos / (n_pos + n_neg))
        .add(&bce_with_logits(&neg_logits, &zeros)?.scale(n_neg / (n_pos + n_neg)))?;
    Ok((loss, h))
}

/// Generative utility loss alone (see [`Pretext::loss_with_embeddings`]).
pub fn generative_utility_loss(
    params: &EncoderParams,
    g: &Graph,
    negative_ratio: usize,
    seed: u64,
) -> Result<Tensor> {
    generative_with_embeddings(params, g, negative_ratio, seed).map(|(l, _)| l)
}

/// Sample `count` distinct non-edges `(u, v)`, `u < v`, deterministically.
pub fn sample_non_edges(g: &Graph, count: usize, seed: u64) -> Result<Vec<(usize, usize)>> {
    let n = g.n();
    let possible = n * (n - 1) / 2 - g.edges().len();
    if possible < count {
        return Err(Error::Input(format!(
            "cannot sample {count} non-edges, only {possible} exist"
        )));
    }
    let mut r = rng::substream(seed, stream::NEGATIVES);
    let mut seen = std::collections::HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let a = r.gen_range(0..n);
        let b = r.gen_range(0..n);
        if a == b {
            continue;
        }
        let pair = (a.min(b), a.max(b));
        if g.has_edge(pair.0, pair.1) || !seen.insert(pair) {
            continue;
        }
        out.push(pair);
    }
    Ok(out)
}
