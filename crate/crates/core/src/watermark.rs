//! Trigger-set watermarking.
//!
//! A trigger set is built by sampling nodes, extracting their l-hop
//! ego-graphs and linking one randomly generated key node to each center.
//! During pre-training two extra loss terms shape the embedding space: an
//! internal term pulls the trigger-center embeddings toward their mutual
//! centroid, and an external hinge term pushes them away from the centroid
//! of the normal embeddings (which is held constant so the normal embedding
//! distribution is not displaced). Ownership of a suspect model is asserted
//! from the concentration of its predictions on the trigger queries.

use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;

use crate::encoder::{encode, init_params, EncoderArch, EncoderParams};
use crate::error::{Error, Result};
use crate::graph::{disjoint_union, ego_graph, EgoGraph, Graph};
use crate::optim::Adam;
use crate::pretext::{Pretext, PretextKind};
use crate::rng::{self, stream};
use crate::tensor::{backward, Tensor};
use crate::textio::{write_f64s, TokenReader};

/// How key-node attributes are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    /// i.i.d. Bernoulli(0.5) entries.
    Binary,
    /// i.i.d. standard normal entries.
    Continuous,
}

impl std::fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FeatureKind::Binary => write!(f, "binary"),
            FeatureKind::Continuous => write!(f, "continuous"),
        }
    }
}

impl FromStr for FeatureKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<FeatureKind> {
        match s {
            "binary" => Ok(FeatureKind::Binary),
            "continuous" => Ok(FeatureKind::Continuous),
            other => Err(Error::Input(format!("unknown feature kind {other:?}"))),
        }
    }
}

/// Watermark hyperparameters.
#[derive(Debug, Clone)]
pub struct WatermarkConfig {
    /// Weight of the internal compactness term.
    pub lambda1: f64,
    /// Weight of the external repulsion term.
    pub lambda2: f64,
    /// Trigger count.
    pub n_t: usize,
    /// Hinge margin of the external term, in mean-squared-distance units.
    pub margin: f64,
    /// Verification threshold on the concentration score.
    pub tau: f64,
    /// Seed of the trigger-generation substreams.
    pub seed: u64,
}

impl Default for WatermarkConfig {
    fn default() -> Self {
        WatermarkConfig {
            lambda1: 5.0,
            lambda2: 1.0,
            n_t: 50,
            margin: 1.0,
            tau: 0.7,
            seed: 7,
        }
    }
}

impl WatermarkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 {
            return Err(Error::Input("lambda weights must be >= 0".into()));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Input("tau must lie in (0, 1)".into()));
        }
        if self.margin <= 0.0 {
            return Err(Error::Input("margin must be > 0".into()));
        }
        Ok(())
    }
}

/// The owner's secret verification material: one key-node feature vector and
/// the triggered ego-graphs it is wired into.
pub struct TriggerSet {
    /// `[d]` attributes of the key node; identical across all triggers.
    pub key_feature: Tensor,
    /// Sampled trigger nodes in the parent graph.
    pub trigger_node_ids: Vec<usize>,
    /// Triggered ego-graphs: key node appended as the last node, linked to
    /// the center at row 0.
    pub egos: Vec<EgoGraph>,
    pub seed: u64,
    union: Graph,
    offsets: Vec<usize>,
}

impl TriggerSet {
    fn from_parts(
        key_feature: Tensor,
        trigger_node_ids: Vec<usize>,
        egos: Vec<EgoGraph>,
        seed: u64,
    ) -> Result<TriggerSet> {
        if egos.is_empty() {
            return Err(Error::Input("trigger set must be nonempty".into()));
        }
        if egos.len() != trigger_node_ids.len() {
            return Err(Error::Input(
                "trigger ids and ego-graph counts disagree".into(),
            ));
        }
        let d = key_feature.numel();
        let key = key_feature.to_vec();
        for (i, ego) in egos.iter().enumerate() {
            let g = &ego.graph;
            let n = g.n();
            if g.feature_dim() != d {
                return Err(Error::Input(format!(
                    "trigger {i}: feature dim {} != key dim {d}",
                    g.feature_dim()
                )));
            }
            let feats = g.features().data();
            let last_row = &feats[(n - 1) * d..n * d];
            if last_row != key.as_slice() {
                return Err(Error::Input(format!(
                    "trigger {i}: last node does not carry the key feature"
                )));
            }
            if !g.has_edge(0, n - 1) {
                return Err(Error::Input(format!(
                    "trigger {i}: key node is not linked to the center"
                )));
            }
        }
        let (union, offsets) = disjoint_union(&egos)?;
        Ok(TriggerSet {
            key_feature,
            trigger_node_ids,
            egos,
            seed,
            union,
            offsets,
        })
    }

    pub fn len(&self) -> usize {
        self.egos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.egos.is_empty()
    }

    /// Prebuilt block-diagonal union of the triggered ego-graphs.
    pub fn union_graph(&self) -> &Graph {
        &self.union
    }

    /// Center-row offsets into the union.
    pub fn center_offsets(&self) -> &[usize] {
        &self.offsets
    }

    /// Trigger-center embeddings under `params`.
    pub fn encode_centers(&self, params: &EncoderParams) -> Result<Tensor> {
        encode(params, &self.union)?.gather_rows(&self.offsets)
    }
}

/// Randomly generate key-node attributes; deterministic per seed.
pub fn generate_key_feature(d: usize, kind: FeatureKind, seed: u64) -> Result<Tensor> {
    if d == 0 {
        return Err(Error::Input("key feature dimension must be >= 1".into()));
    }
    let mut r = rng::substream(seed, "key-feature");
    let data: Vec<f64> = match kind {
        FeatureKind::Binary => (0..d)
            .map(|_| if r.gen::<f64>() < 0.5 { 1.0 } else { 0.0 })
            .collect(),
        FeatureKind::Continuous => (0..d)
            .map(|_| {
                // Box-Muller
                let u1: f64 = r.gen_range(f64::EPSILON..1.0);
                let u2: f64 = r.gen::<f64>();
                (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            })
            .collect(),
    };
    Tensor::from_vec(&[d], data)
}

/// Sample `cfg.n_t` distinct trigger nodes, extract their `hops`-hop
/// ego-graphs and wire the key node into each one.
pub fn build_trigger_set(
    g: &Graph,
    hops: usize,
    cfg: &WatermarkConfig,
    kind: FeatureKind,
) -> Result<TriggerSet> {
    cfg.validate()?;
    if cfg.n_t == 0 {
        return Err(Error::Input("trigger count must be >= 1".into()));
    }
    if cfg.n_t > g.n() {
        return Err(Error::Input(format!(
            "cannot sample {} trigger nodes from {} nodes",
            cfg.n_t,
            g.n()
        )));
    }
    let mut r = rng::substream(cfg.seed, stream::TRIGGER);
    let mut ids = rand::seq::index::sample(&mut r, g.n(), cfg.n_t).into_vec();
    ids.sort_unstable();
    let key = generate_key_feature(
        g.feature_dim(),
        kind,
        rng::substream_seed(cfg.seed, stream::TRIGGER),
    )?;
    let key_row = key.to_vec();
    let egos: Vec<EgoGraph> = ids
        .iter()
        .map(|&v| ego_graph(g, v, hops).and_then(|e| e.with_appended_node(&key_row)))
        .collect::<Result<_>>()?;
    TriggerSet::from_parts(key, ids, egos, cfg.seed)
}

/// Compactness of trigger-center embeddings: mean over triggers of the mean
/// squared distance to their common centroid. The gradient flows through the
/// centroid as well.
pub fn internal_loss_from_embeddings(centers: &Tensor) -> Result<Tensor> {
    if centers.rows() == 0 {
        return Err(Error::Input(
            "internal loss needs a nonempty trigger set".into(),
        ));
    }
    let centroid = centers.mean_rows()?;
    let diff = centers.add_bias(&centroid.neg())?;
    Ok(diff.mul(&diff)?.mean())
}

/// Hinge repulsion from the (constant) normal-embedding centroid: mean over
/// triggers of `max(0, margin - msd(center, c_norm))`. Lies in `[0, margin]`
/// and has zero gradient once a trigger is past the margin.
pub fn external_loss_from_embeddings(
    centers: &Tensor,
    normal_centroid: &Tensor,
    margin: f64,
) -> Result<Tensor> {
    if centers.rows() == 0 {
        return Err(Error::Input(
            "external loss needs a nonempty trigger set".into(),
        ));
    }
    let c = normal_centroid.detach();
    let diff = centers.add_bias(&c.neg())?;
    let dist = diff.mul(&diff)?.row_mean()?;
    Ok(dist.neg().add_scalar(margin).relu().mean())
}

/// Internal watermark loss evaluated from scratch.
pub fn loss_internal(params: &EncoderParams, ts: &TriggerSet) -> Result<Tensor> {
    internal_loss_from_embeddings(&ts.encode_centers(params)?)
}

/// External watermark loss evaluated from scratch.
pub fn loss_external(
    params: &EncoderParams,
    ts: &TriggerSet,
    g: &Graph,
    margin: f64,
) -> Result<Tensor> {
    let centers = ts.encode_centers(params)?;
    let h = encode(params, g)?;
    external_loss_from_embeddings(&centers, &h.mean_rows()?, margin)
}

/// Combined pre-training objective: `utility + λ1·internal + λ2·external`.
pub fn total_loss(
    utility: &Tensor,
    l_in: &Tensor,
    l_ext: &Tensor,
    cfg: &WatermarkConfig,
) -> Result<Tensor> {
    utility
        .add(&l_in.scale(cfg.lambda1))?
        .add(&l_ext.scale(cfg.lambda2))
}

/// Fraction of predictions landing on the single most frequent label, plus
/// that label. Ties break toward the smallest label.
pub fn concentration_score(predictions: &[usize]) -> Result<(f64, usize)> {
    if predictions.is_empty() {
        return Err(Error::Input(
            "concentration score of empty predictions".into(),
        ));
    }
    let mut counts: std::collections::BTreeMap<usize, usize> = std::collections::BTreeMap::new();
    for &p in predictions {
        *counts.entry(p).or_insert(0) += 1;
    }
    let (mut best_label, mut best_count) = (0usize, 0usize);
    for (&label, &count) in &counts {
        if count > best_count {
            best_label = label;
            best_count = count;
        }
    }
    Ok((best_count as f64 / predictions.len() as f64, best_label))
}

/// Per-epoch loss components (0.0 for terms a run never computed).
#[derive(Debug, Clone, Copy)]
pub struct EpochLosses {
    pub utility: f64,
    pub internal: f64,
    pub external: f64,
}

/// Everything a pre-training run needs besides the graph and the watermark.
#[derive(Debug, Clone)]
pub struct PretrainSettings {
    pub arch: EncoderArch,
    pub pretext: PretextKind,
    pub negative_ratio: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

pub struct PretrainOutput {
    pub params: EncoderParams,
    pub trigger_set: TriggerSet,
    pub curve: Vec<EpochLosses>,
}

/// Full-batch joint pre-training: every epoch evaluates the utility loss on
/// the clean graph and the two watermark terms on the trigger union, then
/// takes one Adam step on the combined objective. Deterministic per seed.
pub fn pretrain_watermarked(
    g: &Graph,
    settings: &PretrainSettings,
    wm: &WatermarkConfig,
    feature_kind: FeatureKind,
) -> Result<PretrainOutput> {
    wm.validate()?;
    let ts = build_trigger_set(g, settings.arch.num_layers, wm, feature_kind)?;
    let (params, curve) = run_pretraining(g, settings, Some((wm, &ts)))?;
    Ok(PretrainOutput {
        params,
        trigger_set: ts,
        curve,
    })
}

/// Utility-only pre-training (no trigger set involved anywhere).
pub fn pretrain_clean(
    g: &Graph,
    settings: &PretrainSettings,
) -> Result<(EncoderParams, Vec<EpochLosses>)> {
    run_pretraining(g, settings, None)
}

fn run_pretraining(
    g: &Graph,
    settings: &PretrainSettings,
    watermark: Option<(&WatermarkConfig, &TriggerSet)>,
) -> Result<(EncoderParams, Vec<EpochLosses>)> {
    if settings.epochs == 0 {
        return Err(Error::Input("pre-training needs at least one epoch".into()));
    }
    let arch = &settings.arch;
    let params = init_params(
        g.feature_dim(),
        arch.hidden_dim,
        arch.embed_dim,
        arch.num_layers,
        arch.activation,
        settings.seed,
    )?;
    let pretext = Pretext::init(
        settings.pretext,
        arch.embed_dim,
        settings.negative_ratio,
        settings.seed,
    )?;
    let mut trainable = params.trainable();
    trainable.extend(pretext.head_params());
    let mut opt = Adam::new(trainable, settings.lr);

    let mut curve = Vec::with_capacity(settings.epochs);
    for epoch in 0..settings.epochs {
        let (utility, h) = pretext.loss_with_embeddings(&params, g, epoch as u64)?;
        let mut record = EpochLosses {
            utility: utility.item(),
            internal: 0.0,
            external: 0.0,
        };
        let mut total = utility;
        if let Some((cfg, ts)) = watermark {
            if cfg.lambda1 > 0.0 || cfg.lambda2 > 0.0 {
                let centers = ts.encode_centers(&params)?;
                if cfg.lambda1 > 0.0 {
                    let l_in = internal_loss_from_embeddings(&centers)?;
                    record.internal = l_in.item();
                    total = total.add(&l_in.scale(cfg.lambda1))?;
                }
                if cfg.lambda2 > 0.0 {
                    let l_ext =
                        external_loss_from_embeddings(&centers, &h.mean_rows()?, cfg.margin)?;
                    record.external = l_ext.item();
                    total = total.add(&l_ext.scale(cfg.lambda2))?;
                }
            }
        }
        for (term, value) in [
            ("utility", record.utility),
            ("internal", record.internal),
            ("external", record.external),
        ] {
            if !value.is_finite() {
                return Err(Error::Numeric {
                    term: term.into(),
                    epoch,
                });
            }
        }
        backward(&total)?;
        opt.step()?;
        curve.push(record);
    }
    Ok((params, curve))
}

// ---- trigger-set serialization --------------------------------------------

const TRIGGER_MAGIC: &str = "graphmark-trigger";
const TRIGGER_VERSION: &str = "v1";

/// Write the trigger set as a versioned structured-text file. This file is
/// the verification key; keep it secret.
pub fn write_trigger_file<P: AsRef<Path>>(
    ts: &TriggerSet,
    meta: &[(String, String)],
    path: P,
) -> Result<()> {
    let d = ts.key_feature.numel();
    // compact 0/1 row encoding whenever every feature value is binary
    let all_binary = ts.egos.iter().all(|e| {
        e.graph
            .features()
            .data()
            .iter()
            .all(|&v| v == 0.0 || v == 1.0)
    });
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{TRIGGER_MAGIC} {TRIGGER_VERSION}")?;
    for (k, v) in meta {
        writeln!(w, "meta {k} {v}")?;
    }
    writeln!(w, "seed {}", ts.seed)?;
    writeln!(w, "n_t {}", ts.len())?;
    writeln!(w, "feature_dim {d}")?;
    writeln!(
        w,
        "encoding {}",
        if all_binary { "binary" } else { "float" }
    )?;
    writeln!(w, "key_feature")?;
    write_f64s(&mut w, &ts.key_feature.data(), 16)?;
    for (i, ego) in ts.egos.iter().enumerate() {
        let g = &ego.graph;
        writeln!(
            w,
            "trigger {i} origin {} nodes {} edges {}",
            ego.origin_node,
            g.n(),
            g.edges().len()
        )?;
        writeln!(w, "degrees")?;
        write_f64s(&mut w, g.norm_degrees(), 16)?;
        writeln!(w, "edges")?;
        for &(u, v) in g.edges() {
            writeln!(w, "{u} {v}")?;
        }
        writeln!(w, "features")?;
        let feats = g.features().data();
        if all_binary {
            for r in 0..g.n() {
                let row: String = feats[r * d..r * d + d]
                    .iter()
                    .map(|&v| if v == 1.0 { '1' } else { '0' })
                    .collect();
                writeln!(w, "{row}")?;
            }
        } else {
            write_f64s(&mut w, &feats, 16)?;
        }
    }
    writeln!(w, "end")?;
    w.flush()?;
    Ok(())
}

/// Read a trigger file written by [`write_trigger_file`]; validates the
/// trigger-set invariants on load.
pub fn read_trigger_file<P: AsRef<Path>>(path: P) -> Result<(TriggerSet, Vec<(String, String)>)> {
    let mut r = TokenReader::open(path)?;
    r.expect(TRIGGER_MAGIC)?;
    r.expect(TRIGGER_VERSION)?;
    let mut meta = Vec::new();
    while r.peek() == Some("meta") {
        r.next()?;
        let k = r.next()?.to_string();
        let v = r.next()?.to_string();
        meta.push((k, v));
    }
    r.expect("seed")?;
    let seed = r.next_u64()?;
    r.expect("n_t")?;
    let n_t = r.next_usize()?;
    r.expect("feature_dim")?;
    let d = r.next_usize()?;
    r.expect("encoding")?;
    let encoding = r.next()?.to_string();
    let binary = match encoding.as_str() {
        "binary" => true,
        "float" => false,
        other => return Err(r.error(format!("unknown feature encoding {other:?}"))),
    };
    r.expect("key_feature")?;
    let key = Tensor::from_vec(&[d], r.next_f64s(d)?)?;

    let mut ids = Vec::with_capacity(n_t);
    let mut egos = Vec::with_capacity(n_t);
    for i in 0..n_t {
        r.expect("trigger")?;
        let idx = r.next_usize()?;
        if idx != i {
            return Err(r.error(format!("trigger {idx} out of order, expected {i}")));
        }
        r.expect("origin")?;
        let origin = r.next_usize()?;
        r.expect("nodes")?;
        let n = r.next_usize()?;
        r.expect("edges")?;
        let ne = r.next_usize()?;
        r.expect("degrees")?;
        let degrees = r.next_f64s(n)?;
        r.expect("edges")?;
        let mut edges = Vec::with_capacity(ne);
        for _ in 0..ne {
            let u = r.next_usize()?;
            let v = r.next_usize()?;
            edges.push((u, v));
        }
        r.expect("features")?;
        let fdata = if binary {
            let mut data = Vec::with_capacity(n * d);
            for _ in 0..n {
                let row = r.next()?.to_string();
                if row.len() != d {
                    return Err(r.error(format!(
                        "binary feature row has {} digits, expected {d}",
                        row.len()
                    )));
                }
                for ch in row.chars() {
                    match ch {
                        '0' => data.push(0.0),
                        '1' => data.push(1.0),
                        other => return Err(r.error(format!("bad binary feature digit {other:?}"))),
                    }
                }
            }
            data
        } else {
            r.next_f64s(n * d)?
        };
        let features = Tensor::from_vec(&[n, d], fdata)?;
        let graph = Graph::with_degrees(n, edges, features, degrees)?;
        ids.push(origin);
        egos.push(EgoGraph {
            graph,
            center_index: 0,
            origin_node: origin,
        });
    }
    r.expect("end")?;
    let ts = TriggerSet::from_parts(key, ids, egos, seed)?;
    Ok((ts, meta))
}
