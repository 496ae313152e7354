//! Simulated adversary: task heads fine-tuned on top of a frozen encoder,
//! their quality metrics, and the black-box trigger-query verification
//! protocols for node classification, link prediction and community
//! detection.

use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::encoder::{encode, EncoderParams};
use crate::error::{Error, Result};
use crate::graph::{ego_graph, split_nodes, Graph, NodeSplit};
use crate::metrics::{kmeans_cluster, metric_nmi, pca_project};
use crate::optim::Adam;
use crate::pretext::sample_non_edges;
use crate::rng::{self, stream};
use crate::tensor::{backward, bce_with_logits, softmax_cross_entropy, Tensor};
use crate::watermark::{concentration_score, TriggerSet};

/// Hidden width of every downstream head.
pub const HEAD_HIDDEN: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    NodeClassification,
    LinkPrediction,
    CommunityDetection,
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Task::NodeClassification => write!(f, "node"),
            Task::LinkPrediction => write!(f, "link"),
            Task::CommunityDetection => write!(f, "community"),
        }
    }
}

impl FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Task> {
        match s {
            "node" => Ok(Task::NodeClassification),
            "link" => Ok(Task::LinkPrediction),
            "community" => Ok(Task::CommunityDetection),
            other => Err(Error::Input(format!("unknown task {other:?}"))),
        }
    }
}

/// Two linear layers with a ReLU in between.
pub struct ClassifierParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl ClassifierParams {
    pub fn init(
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
        seed: u64,
    ) -> Result<ClassifierParams> {
        let mut r = rng::substream(seed, stream::DOWNSTREAM);
        let mut glorot = |rows: usize, cols: usize| -> Result<Tensor> {
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            let data: Vec<f64> = (0..rows * cols)
                .map(|_| r.gen_range(-bound..bound))
                .collect();
            Tensor::parameter(&[rows, cols], data)
        };
        Ok(ClassifierParams {
            w1: glorot(in_dim, hidden)?,
            b1: Tensor::parameter(&[hidden], vec![0.0; hidden])?,
            w2: glorot(hidden, out_dim)?,
            b2: Tensor::parameter(&[out_dim], vec![0.0; out_dim])?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = x.matmul(&self.w1)?.add_bias(&self.b1)?.relu();
        h.matmul(&self.w2)?.add_bias(&self.b2)
    }

    pub fn trainable(&self) -> Vec<Tensor> {
        vec![
            self.w1.clone(),
            self.b1.clone(),
            self.w2.clone(),
            self.b2.clone(),
        ]
    }

    pub fn deep_copy(&self) -> ClassifierParams {
        let copy = |t: &Tensor| Tensor::parameter(&t.shape(), t.to_vec()).unwrap();
        ClassifierParams {
            w1: copy(&self.w1),
            b1: copy(&self.b1),
            w2: copy(&self.w2),
            b2: copy(&self.b2),
        }
    }
}

fn rows_of(h: &Tensor, idx: &[usize]) -> Result<Tensor> {
    h.gather_rows(idx).map(|t| t.detach())
}

/// Train the node-classification head on frozen embeddings; keeps the
/// parameter snapshot with the best validation accuracy.
pub fn train_node_classifier(
    h: &Tensor,
    labels: &[usize],
    split: &NodeSplit,
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<ClassifierParams> {
    if h.rows() != labels.len() {
        return Err(Error::Dimension {
            op: "train_node_classifier",
            lhs: h.shape(),
            rhs: vec![labels.len()],
        });
    }
    let c = labels.iter().max().map_or(0, |m| m + 1);
    let train_labels: Vec<usize> = split.train.iter().map(|&i| labels[i]).collect();
    for class in 0..c {
        if !train_labels.contains(&class) {
            return Err(Error::Input(format!(
                "class {class} is absent from the training split"
            )));
        }
    }
    let k = h.cols();
    let x_train = rows_of(h, &split.train)?;
    let x_val = rows_of(h, &split.validation)?;
    let val_labels: Vec<usize> = split.validation.iter().map(|&i| labels[i]).collect();

    let clf = ClassifierParams::init(k, HEAD_HIDDEN, c, seed)?;
    let mut opt = Adam::new(clf.trainable(), lr);
    let mut best: Option<(f64, ClassifierParams)> = None;
    for _ in 0..epochs {
        let loss = softmax_cross_entropy(&clf.forward(&x_train)?, &train_labels)?;
        backward(&loss)?;
        opt.step()?;
        if !split.validation.is_empty() {
            let preds = predict_nodes(&clf, &x_val)?;
            let acc = preds
                .iter()
                .zip(val_labels.iter())
                .filter(|(a, b)| a == b)
                .count() as f64
                / val_labels.len() as f64;
            // strictly-better keeps the earliest best snapshot, deterministically
            if best.as_ref().is_none_or(|(b, _)| acc > *b) {
                best = Some((acc, clf.deep_copy()));
            }
        }
    }
    Ok(best.map(|(_, p)| p).unwrap_or(clf))
}

/// Row-wise argmax with ties resolved toward the smaller class index.
pub fn predict_nodes(clf: &ClassifierParams, h_query: &Tensor) -> Result<Vec<usize>> {
    if h_query.rows() == 0 {
        return Ok(Vec::new());
    }
    let logits = clf.forward(h_query)?;
    let (n, c) = (logits.rows(), logits.cols());
    let data = logits.data();
    Ok((0..n)
        .map(|i| {
            let row = &data[i * c..i * c + c];
            let mut best = 0usize;
            for j in 1..c {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect())
}

/// Build `[h_u | h_v]` pair inputs from two aligned embedding matrices.
fn concat_pairs(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa != sb || sa.len() != 2 {
        return Err(Error::Dimension {
            op: "concat_pairs",
            lhs: sa,
            rhs: sb,
        });
    }
    let (m, k) = (sa[0], sa[1]);
    let (da, db) = (a.data(), b.data());
    let mut out = Vec::with_capacity(m * 2 * k);
    for i in 0..m {
        out.extend_from_slice(&da[i * k..i * k + k]);
        out.extend_from_slice(&db[i * k..i * k + k]);
    }
    drop(da);
    drop(db);
    Tensor::from_vec(&[m, 2 * k], out)
}

/// Order-averaged link logits: `(f([u|v]) + f([v|u])) / 2`.
fn link_logits(clf: &ClassifierParams, emb_a: &Tensor, emb_b: &Tensor) -> Result<Tensor> {
    let fwd = clf.forward(&concat_pairs(emb_a, emb_b)?)?;
    let rev = clf.forward(&concat_pairs(emb_b, emb_a)?)?;
    Ok(fwd.add(&rev)?.scale(0.5))
}

/// Link-prediction training data: all edges as positives, an equal number of
/// sampled non-edges as negatives, split `train_frac` / rest.
pub struct LinkSplit {
    pub train: Vec<(usize, usize, bool)>,
    pub heldout: Vec<(usize, usize, bool)>,
}

pub fn train_link_predictor(
    h: &Tensor,
    g: &Graph,
    train_frac: f64,
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<(ClassifierParams, LinkSplit)> {
    if g.edges().len() < 10 {
        return Err(Error::Input(format!(
            "link prediction needs at least 10 edges, graph has {}",
            g.edges().len()
        )));
    }
    if !(0.0..1.0).contains(&train_frac) && train_frac != 0.9 {
        return Err(Error::Input("train_frac must lie in (0, 1)".into()));
    }
    let negatives = sample_non_edges(g, g.edges().len(), rng::substream_seed(seed, "link-neg"))?;
    let mut rng = rng::substream(seed, "link-split");
    let mut pos: Vec<(usize, usize)> = g.edges().to_vec();
    let mut neg = negatives;
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let cut_pos = (train_frac * pos.len() as f64).floor() as usize;
    let cut_neg = (train_frac * neg.len() as f64).floor() as usize;
    let mut train: Vec<(usize, usize, bool)> = Vec::new();
    let mut heldout: Vec<(usize, usize, bool)> = Vec::new();
    for (i, &(u, v)) in pos.iter().enumerate() {
        if i < cut_pos {
            train.push((u, v, true));
        } else {
            heldout.push((u, v, true));
        }
    }
    for (i, &(u, v)) in neg.iter().enumerate() {
        if i < cut_neg {
            train.push((u, v, false));
        } else {
            heldout.push((u, v, false));
        }
    }

    let k = h.cols();
    let emb_a = rows_of(h, &train.iter().map(|t| t.0).collect::<Vec<_>>())?;
    let emb_b = rows_of(h, &train.iter().map(|t| t.1).collect::<Vec<_>>())?;
    let targets = Tensor::from_vec(
        &[train.len(), 1],
        train.iter().map(|t| if t.2 { 1.0 } else { 0.0 }).collect(),
    )?;
    let clf = ClassifierParams::init(2 * k, HEAD_HIDDEN, 1, seed)?;
    let mut opt = Adam::new(clf.trainable(), lr);
    for _ in 0..epochs {
        let logits = link_logits(&clf, &emb_a, &emb_b)?;
        let loss = bce_with_logits(&logits, &targets)?;
        backward(&loss)?;
        opt.step()?;
    }
    Ok((clf, LinkSplit { train, heldout }))
}

/// Predict link existence for aligned endpoint embedding rows. Probability is
/// the sigmoid of the order-averaged logit; the label convention is
/// `probability >= 0.5`.
pub fn predict_links(
    clf: &ClassifierParams,
    emb_a: &Tensor,
    emb_b: &Tensor,
) -> Result<(Vec<bool>, Vec<f64>)> {
    let probs: Vec<f64> = link_logits(clf, emb_a, emb_b)?.sigmoid().to_vec();
    let labels = probs.iter().map(|&p| p >= 0.5).collect();
    Ok((labels, probs))
}

/// Held-out AUC of a trained link head.
pub fn link_heldout_auc(
    clf: &ClassifierParams,
    h: &Tensor,
    heldout: &[(usize, usize, bool)],
) -> Result<f64> {
    let emb_a = rows_of(h, &heldout.iter().map(|t| t.0).collect::<Vec<_>>())?;
    let emb_b = rows_of(h, &heldout.iter().map(|t| t.1).collect::<Vec<_>>())?;
    let (_, probs) = predict_links(clf, &emb_a, &emb_b)?;
    let truth: Vec<bool> = heldout.iter().map(|t| t.2).collect();
    crate::metrics::metric_auc(&probs, &truth)
}

/// One verification (or evaluation) outcome.
#[derive(Debug, Clone)]
pub struct TaskReport {
    pub task: Task,
    pub metric_name: &'static str,
    /// Task quality metric; filled by the evaluation pipeline, absent when a
    /// verification ran without one.
    pub metric_value: Option<f64>,
    /// Concentration score of the trigger predictions.
    pub cs: f64,
    pub majority_class: usize,
    /// `cs >= tau`.
    pub verdict: bool,
    /// `(label, count)` histogram of the trigger predictions. A degenerate
    /// head that ignores its input shows up here as a single spike with zero
    /// entropy.
    pub prediction_counts: Vec<(usize, usize)>,
    /// Shannon entropy (nats) of the prediction histogram.
    pub prediction_entropy: f64,
}

impl TaskReport {
    fn from_predictions(
        task: Task,
        metric_name: &'static str,
        preds: &[usize],
        tau: f64,
    ) -> Result<TaskReport> {
        let (cs, majority) = concentration_score(preds)?;
        let mut counts: std::collections::BTreeMap<usize, usize> =
            std::collections::BTreeMap::new();
        for &p in preds {
            *counts.entry(p).or_insert(0) += 1;
        }
        let n = preds.len() as f64;
        let entropy = counts
            .values()
            .map(|&c| {
                let q = c as f64 / n;
                -q * q.ln()
            })
            .sum();
        Ok(TaskReport {
            task,
            metric_name,
            metric_value: None,
            cs,
            majority_class: majority,
            verdict: cs >= tau,
            prediction_counts: counts.into_iter().collect(),
            prediction_entropy: entropy,
        })
    }

    pub fn with_metric(mut self, value: f64) -> TaskReport {
        self.metric_value = Some(value);
        self
    }
}

/// Query a node classifier with the trigger centers and score concentration.
/// Pure query protocol: touches no model state.
pub fn verify_node_task(
    params: &EncoderParams,
    clf: &ClassifierParams,
    ts: &TriggerSet,
    tau: f64,
) -> Result<TaskReport> {
    let frozen = params.frozen();
    let z = ts.encode_centers(&frozen)?;
    let preds = predict_nodes(clf, &z)?;
    TaskReport::from_predictions(Task::NodeClassification, "ACC", &preds, tau)
}

/// Sample edges and non-edges, trigger every endpoint's ego-graph with the
/// key node, and score the concentration of the binary link predictions.
pub fn verify_link_task(
    params: &EncoderParams,
    clf: &ClassifierParams,
    g: &Graph,
    ts: &TriggerSet,
    sample_count: usize,
    tau: f64,
    seed: u64,
) -> Result<TaskReport> {
    if sample_count < 2 {
        return Err(Error::Input(
            "link verification needs sample_count >= 2".into(),
        ));
    }
    let half = sample_count / 2;
    if g.edges().len() < half {
        return Err(Error::Input(format!(
            "link verification needs {half} edges, graph has {}",
            g.edges().len()
        )));
    }
    let frozen = params.frozen();
    let mut r = rng::substream(seed, stream::VERIFY);
    let edge_idx = rand::seq::index::sample(&mut r, g.edges().len(), half).into_vec();
    let mut pairs: Vec<(usize, usize)> = edge_idx.iter().map(|&i| g.edges()[i]).collect();
    pairs.extend(sample_non_edges(
        g,
        half,
        rng::substream_seed(seed, "verify-neg"),
    )?);

    // unique endpoints, each triggered once
    let mut endpoints: Vec<usize> = pairs.iter().flat_map(|&(u, v)| [u, v]).collect();
    endpoints.sort_unstable();
    endpoints.dedup();
    let key_row = ts.key_feature.to_vec();
    let hops = frozen.num_layers;
    let egos: Vec<_> = endpoints
        .iter()
        .map(|&v| ego_graph(g, v, hops).and_then(|e| e.with_appended_node(&key_row)))
        .collect::<Result<_>>()?;
    let centers = crate::encoder::encode_centers(&frozen, &egos)?;
    let row_of: std::collections::HashMap<usize, usize> =
        endpoints.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let emb_a = centers.gather_rows(&pairs.iter().map(|p| row_of[&p.0]).collect::<Vec<_>>())?;
    let emb_b = centers.gather_rows(&pairs.iter().map(|p| row_of[&p.1]).collect::<Vec<_>>())?;
    let (labels, _) = predict_links(clf, &emb_a, &emb_b)?;
    let preds: Vec<usize> = labels.iter().map(|&b| b as usize).collect();
    TaskReport::from_predictions(Task::LinkPrediction, "AUC", &preds, tau)
}

/// Embed the whole graph plus the trigger centers, project, cluster all
/// points jointly, and score the concentration of the trigger assignments.
/// When the graph is labeled the report also carries the NMI of the normal
/// nodes' clustering against the ground truth.
pub fn verify_community_task(
    params: &EncoderParams,
    g: &Graph,
    ts: &TriggerSet,
    k: usize,
    pca_dims: usize,
    tau: f64,
    seed: u64,
) -> Result<TaskReport> {
    if k < 2 {
        return Err(Error::Input("community verification needs k >= 2".into()));
    }
    let frozen = params.frozen();
    let h = encode(&frozen, g)?;
    let z = ts.encode_centers(&frozen)?;
    let ke = h.cols();
    let mut joint = h.to_vec();
    joint.extend_from_slice(&z.data());
    let joint = Tensor::from_vec(&[g.n() + ts.len(), ke], joint)?;
    let projected = pca_project(&joint, pca_dims)?;
    let labels = kmeans_cluster(&projected, k, rng::substream_seed(seed, stream::VERIFY))?;
    let trigger_labels = &labels[g.n()..];
    let mut report =
        TaskReport::from_predictions(Task::CommunityDetection, "NMI", trigger_labels, tau)?;
    if let Some(truth) = g.labels() {
        report.metric_value = Some(metric_nmi(&labels[..g.n()], truth)?);
    }
    Ok(report)
}

/// Downstream training and verification settings shared by the evaluation
/// pipeline and the robustness sweep.
#[derive(Debug, Clone)]
pub struct DownstreamConfig {
    pub epochs: usize,
    pub lr: f64,
    pub per_class: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub link_train_frac: f64,
    /// Trigger-pair queries per link verification (half edges, half non-edges).
    pub link_samples: usize,
    pub pca_dims: usize,
}

impl Default for DownstreamConfig {
    fn default() -> Self {
        DownstreamConfig {
            epochs: 300,
            lr: 0.01,
            per_class: 20,
            n_val: 500,
            n_test: 1000,
            link_train_frac: 0.9,
            link_samples: 50,
            pca_dims: 32,
        }
    }
}

/// Train all three downstream heads on a frozen encoder, measure their task
/// metrics and run the matching verification protocols. Returns one report
/// per task with the metric filled in.
pub fn evaluate_all_tasks(
    params: &EncoderParams,
    g: &Graph,
    ts: &TriggerSet,
    cfg: &DownstreamConfig,
    tau: f64,
    seed: u64,
) -> Result<Vec<TaskReport>> {
    let labels = g
        .labels()
        .ok_or_else(|| Error::Input("task evaluation needs a labeled graph".into()))?;
    let num_classes = g
        .num_classes()
        .unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    let split = split_nodes(g, cfg.per_class, cfg.n_val, cfg.n_test, seed)?;
    let frozen = params.frozen();
    let h = encode(&frozen, g)?;

    // node classification
    let node_clf = train_node_classifier(&h, labels, &split, cfg.epochs, cfg.lr, seed)?;
    let x_test = h.gather_rows(&split.test)?;
    let preds = predict_nodes(&node_clf, &x_test)?;
    let truth: Vec<usize> = split.test.iter().map(|&i| labels[i]).collect();
    let acc = crate::metrics::metric_accuracy(&preds, &truth)?;
    let node_report = verify_node_task(params, &node_clf, ts, tau)?.with_metric(acc);

    // link prediction
    let (link_clf, link_split) =
        train_link_predictor(&h, g, cfg.link_train_frac, cfg.epochs, cfg.lr, seed)?;
    let auc = link_heldout_auc(&link_clf, &h, &link_split.heldout)?;
    let link_report =
        verify_link_task(params, &link_clf, g, ts, cfg.link_samples, tau, seed)?.with_metric(auc);

    // community detection (NMI is filled by the verification itself)
    let pca_dims = cfg.pca_dims.min(h.cols());
    let community_report = verify_community_task(params, g, ts, num_classes, pca_dims, tau, seed)?;

    Ok(vec![node_report, link_report, community_report])
}
