//! Graph data: representation, normalization, ego-graph extraction, dataset
//! ingestion and a synthetic stochastic-block-model generator.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{self, stream};
use crate::sparse::CsrMatrix;
use crate::tensor::Tensor;

/// Feature matrices at least this large and at most this dense get a cached
/// CSR form so the first encoder layer can run sparse.
const FEATURE_CSR_MIN_ELEMS: usize = 1 << 15;
const FEATURE_CSR_MAX_DENSITY: f64 = 0.25;

/// Undirected, unweighted attributed graph.
///
/// The adjacency is stored without self-loops; self-loops enter only through
/// [`normalize_adjacency`]. `norm_degrees` holds the degree terms that
/// normalization uses (`deg + 1` for a graph built from scratch). Ego-graphs
/// inherit these values from their parent graph, which makes the center
/// embedding of an l-hop ego-graph reproduce the full-graph embedding of the
/// same node under an l-layer encoder.
#[derive(Clone)]
pub struct Graph {
    n: usize,
    adj: Arc<CsrMatrix>,
    /// Unique undirected edges as `(u, v)` with `u < v`, sorted.
    edges: Arc<Vec<(usize, usize)>>,
    features: Tensor,
    features_csr: Option<Arc<CsrMatrix>>,
    labels: Option<Arc<Vec<usize>>>,
    num_classes: Option<usize>,
    norm_degrees: Arc<Vec<f64>>,
}

impl std::fmt::Debug for Graph {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "Graph(n={}, edges={}, d={}, labeled={})",
            self.n,
            self.edges.len(),
            self.feature_dim(),
            self.labels.is_some()
        )
    }
}

impl Graph {
    /// Build from an undirected edge list. Self-loops and duplicate edges are
    /// dropped; both orientations are stored in the adjacency.
    pub fn new(
        n: usize,
        edges: Vec<(usize, usize)>,
        features: Tensor,
        labels: Option<Vec<usize>>,
        num_classes: Option<usize>,
    ) -> Result<Graph> {
        let fshape = features.shape();
        if fshape.len() != 2 || fshape[0] != n {
            return Err(Error::Input(format!(
                "feature matrix shape {fshape:?} does not match {n} nodes"
            )));
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::Input(format!(
                    "label vector length {} does not match {n} nodes",
                    l.len()
                )));
            }
        }
        let mut uniq: Vec<(usize, usize)> = Vec::with_capacity(edges.len());
        for (a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::Input(format!(
                    "edge ({a},{b}) out of bounds for {n} nodes"
                )));
            }
            if a == b {
                continue;
            }
            uniq.push((a.min(b), a.max(b)));
        }
        uniq.sort_unstable();
        uniq.dedup();

        let mut coo = Vec::with_capacity(uniq.len() * 2);
        for &(u, v) in &uniq {
            coo.push((u, v, 1.0));
            coo.push((v, u, 1.0));
        }
        let adj = CsrMatrix::from_coo(n, n, &coo);
        let norm_degrees: Vec<f64> = (0..n).map(|i| adj.row(i).0.len() as f64 + 1.0).collect();
        let features_csr = build_feature_csr(&features);
        Ok(Graph {
            n,
            adj: Arc::new(adj),
            edges: Arc::new(uniq),
            features,
            features_csr,
            labels: labels.map(Arc::new),
            num_classes,
            norm_degrees: Arc::new(norm_degrees),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn adj(&self) -> &Arc<CsrMatrix> {
        &self.adj
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn features_csr(&self) -> Option<&Arc<CsrMatrix>> {
        self.features_csr.as_ref()
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref().map(|v| v.as_slice())
    }

    pub fn num_classes(&self) -> Option<usize> {
        self.num_classes
    }

    pub fn norm_degrees(&self) -> &[f64] {
        &self.norm_degrees
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        self.adj.row(v).0
    }

    pub fn degree(&self, v: usize) -> usize {
        self.neighbors(v).len()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }

    /// Same structure, different node features (used by feature corruption).
    pub fn replace_features(&self, features: Tensor) -> Result<Graph> {
        let fshape = features.shape();
        if fshape != vec![self.n, self.feature_dim()] {
            return Err(Error::Input(format!(
                "replacement features shape {fshape:?} does not match"
            )));
        }
        let features_csr = build_feature_csr(&features);
        Ok(Graph {
            features,
            features_csr,
            ..self.clone()
        })
    }

    /// Internal constructor for subgraphs that carry externally supplied
    /// degree terms.
    pub(crate) fn with_degrees(
        n: usize,
        edges: Vec<(usize, usize)>,
        features: Tensor,
        norm_degrees: Vec<f64>,
    ) -> Result<Graph> {
        let mut g = Graph::new(n, edges, features, None, None)?;
        debug_assert_eq!(norm_degrees.len(), n);
        g.norm_degrees = Arc::new(norm_degrees);
        Ok(g)
    }
}

fn build_feature_csr(features: &Tensor) -> Option<Arc<CsrMatrix>> {
    let shape = features.shape();
    let (n, d) = (shape[0], shape[1]);
    if n * d < FEATURE_CSR_MIN_ELEMS {
        return None;
    }
    let data = features.data();
    let nnz = data.iter().filter(|&&v| v != 0.0).count();
    if (nnz as f64) > FEATURE_CSR_MAX_DENSITY * (n * d) as f64 {
        return None;
    }
    let mut coo = Vec::with_capacity(nnz);
    for i in 0..n {
        for j in 0..d {
            let v = data[i * d + j];
            if v != 0.0 {
                coo.push((i, j, v));
            }
        }
    }
    Some(Arc::new(CsrMatrix::from_coo(n, d, &coo)))
}

/// Symmetrically normalized adjacency with self-loops:
/// entry `(i,j)` of `A + I` becomes `1/sqrt(d̃_i · d̃_j)` with the degree
/// terms taken from the graph's `norm_degrees`.
pub fn normalize_adjacency(g: &Graph) -> Arc<CsrMatrix> {
    let n = g.n();
    let d = g.norm_degrees();
    let mut indptr = Vec::with_capacity(n + 1);
    let mut indices = Vec::new();
    let mut values = Vec::new();
    indptr.push(0);
    for i in 0..n {
        let (nbrs, _) = g.adj().row(i);
        // merge sorted neighbor list with the diagonal entry
        let mut placed_diag = false;
        for &j in nbrs {
            if !placed_diag && i < j {
                indices.push(i);
                values.push(1.0 / (d[i] * d[i]).sqrt());
                placed_diag = true;
            }
            indices.push(j);
            values.push(1.0 / (d[i] * d[j]).sqrt());
        }
        if !placed_diag {
            indices.push(i);
            values.push(1.0 / (d[i] * d[i]).sqrt());
        }
        indptr.push(indices.len());
    }
    Arc::new(CsrMatrix::from_parts(n, n, indptr, indices, values))
}

/// Induced l-hop ego-graph. The center sits at row/column 0; remaining nodes
/// appear in breadth-first discovery order.
#[derive(Clone)]
pub struct EgoGraph {
    pub graph: Graph,
    pub center_index: usize,
    pub origin_node: usize,
}

/// Extract the induced subgraph of all nodes within `hops` of `center`.
pub fn ego_graph(g: &Graph, center: usize, hops: usize) -> Result<EgoGraph> {
    if center >= g.n() {
        return Err(Error::Input(format!(
            "ego_graph: node {center} out of bounds for {} nodes",
            g.n()
        )));
    }
    if hops == 0 {
        return Err(Error::Input("ego_graph: hop count must be >= 1".into()));
    }
    // BFS in discovery order, neighbors ascending
    let mut order = vec![center];
    let mut dist: HashMap<usize, usize> = HashMap::new();
    dist.insert(center, 0);
    let mut head = 0;
    while head < order.len() {
        let u = order[head];
        head += 1;
        let du = dist[&u];
        if du == hops {
            continue;
        }
        for &w in g.neighbors(u) {
            if let std::collections::hash_map::Entry::Vacant(e) = dist.entry(w) {
                e.insert(du + 1);
                order.push(w);
            }
        }
    }
    let new_id: HashMap<usize, usize> = order.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    // induced edges
    let mut edges = Vec::new();
    for (i, &v) in order.iter().enumerate() {
        for &w in g.neighbors(v) {
            if let Some(&j) = new_id.get(&w) {
                if i < j {
                    edges.push((i, j));
                }
            }
        }
    }
    // feature rows and inherited degree terms
    let d = g.feature_dim();
    let src = g.features().data();
    let mut fdata = Vec::with_capacity(order.len() * d);
    for &v in &order {
        fdata.extend_from_slice(&src[v * d..v * d + d]);
    }
    drop(src);
    let features = Tensor::from_vec(&[order.len(), d], fdata)?;
    let degrees: Vec<f64> = order.iter().map(|&v| g.norm_degrees()[v]).collect();
    Ok(EgoGraph {
        graph: Graph::with_degrees(order.len(), edges, features, degrees)?,
        center_index: 0,
        origin_node: center,
    })
}

impl EgoGraph {
    /// Append one extra node carrying `feature_row`, linked to the center by a
    /// single undirected edge. The center's degree term grows by one; the new
    /// node gets the degree term of a degree-1 node.
    pub fn with_appended_node(&self, feature_row: &[f64]) -> Result<EgoGraph> {
        let g = &self.graph;
        let d = g.feature_dim();
        if feature_row.len() != d {
            return Err(Error::Input(format!(
                "appended node feature length {} != feature dim {d}",
                feature_row.len()
            )));
        }
        let n = g.n();
        let mut edges: Vec<(usize, usize)> = g.edges().to_vec();
        edges.push((0, n));
        let mut fdata = g.features().to_vec();
        fdata.extend_from_slice(feature_row);
        let features = Tensor::from_vec(&[n + 1, d], fdata)?;
        let mut degrees = g.norm_degrees().to_vec();
        degrees[0] += 1.0;
        degrees.push(2.0);
        Ok(EgoGraph {
            graph: Graph::with_degrees(n + 1, edges, features, degrees)?,
            center_index: 0,
            origin_node: self.origin_node,
        })
    }
}

/// Block-diagonal union of ego-graphs. Returns the combined graph and the row
/// offset of each center.
pub fn disjoint_union(egos: &[EgoGraph]) -> Result<(Graph, Vec<usize>)> {
    if egos.is_empty() {
        return Err(Error::Input("disjoint_union: empty ego-graph list".into()));
    }
    let d = egos[0].graph.feature_dim();
    let mut offsets = Vec::with_capacity(egos.len());
    let mut edges = Vec::new();
    let mut fdata = Vec::new();
    let mut degrees = Vec::new();
    let mut base = 0usize;
    for ego in egos {
        let g = &ego.graph;
        if g.feature_dim() != d {
            return Err(Error::Dimension {
                op: "disjoint_union",
                lhs: vec![d],
                rhs: vec![g.feature_dim()],
            });
        }
        offsets.push(base + ego.center_index);
        for &(u, v) in g.edges() {
            edges.push((base + u, base + v));
        }
        fdata.extend_from_slice(&g.features().data());
        degrees.extend_from_slice(g.norm_degrees());
        base += g.n();
    }
    let features = Tensor::from_vec(&[base, d], fdata)?;
    Ok((
        Graph::with_degrees(base, edges, features, degrees)?,
        offsets,
    ))
}

/// Stratified train/validation/test node split.
#[derive(Debug, Clone)]
pub struct NodeSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Deterministic stratified split: `per_class` training nodes per class, then
/// `n_val` validation and `n_test` test nodes from the remaining pool.
pub fn split_nodes(
    g: &Graph,
    per_class: usize,
    n_val: usize,
    n_test: usize,
    seed: u64,
) -> Result<NodeSplit> {
    let labels = g
        .labels()
        .ok_or_else(|| Error::Input("split_nodes: graph has no labels".into()))?;
    let c = g
        .num_classes()
        .unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    let mut rng = rng::substream(seed, stream::SPLIT);

    let mut train = Vec::with_capacity(per_class * c);
    for class in 0..c {
        let mut members: Vec<usize> = (0..g.n()).filter(|&i| labels[i] == class).collect();
        if members.len() < per_class {
            return Err(Error::Input(format!(
                "split_nodes: class {class} has {} nodes, need {per_class}",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        train.extend_from_slice(&members[..per_class]);
    }
    let taken: std::collections::HashSet<usize> = train.iter().copied().collect();
    let mut pool: Vec<usize> = (0..g.n()).filter(|i| !taken.contains(i)).collect();
    if pool.len() < n_val + n_test {
        return Err(Error::Input(format!(
            "split_nodes: {} nodes left after training split, need {}",
            pool.len(),
            n_val + n_test
        )));
    }
    pool.shuffle(&mut rng);
    let validation: Vec<usize> = pool[..n_val].to_vec();
    let test: Vec<usize> = pool[n_val..n_val + n_test].to_vec();
    let mut split = NodeSplit {
        train,
        validation,
        test,
    };
    split.train.sort_unstable();
    split.validation.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

/// Stochastic-block-model graph with block-correlated binary features and
/// block labels. Deterministic per seed.
pub fn generate_sbm(blocks: &[usize], p_in: f64, p_out: f64, d: usize, seed: u64) -> Graph {
    assert!(
        (0.0..=1.0).contains(&p_out) && p_out < p_in && p_in <= 1.0,
        "generate_sbm requires 0 <= p_out < p_in <= 1"
    );
    let n: usize = blocks.iter().sum();
    let mut labels = Vec::with_capacity(n);
    for (b, &size) in blocks.iter().enumerate() {
        labels.extend(std::iter::repeat_n(b, size));
    }
    let mut edge_rng = rng::substream(seed, "sbm-edges");
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let p = if labels[i] == labels[j] { p_in } else { p_out };
            if edge_rng.gen::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    // block-indicative binary features: each block lights up its own window
    let mut feat_rng = rng::substream(seed, "sbm-features");
    let nb = blocks.len();
    let window = d / nb.max(1);
    let mut fdata = Vec::with_capacity(n * d);
    for &label in &labels {
        let (lo, hi) = (label * window, ((label + 1) * window).min(d));
        for j in 0..d {
            let p = if j >= lo && j < hi { 0.6 } else { 0.05 };
            fdata.push(if feat_rng.gen::<f64>() < p { 1.0 } else { 0.0 });
        }
    }
    let features = Tensor::from_vec(&[n, d], fdata).expect("sbm feature shape");
    Graph::new(n, edges, features, Some(labels), Some(nb)).expect("sbm construction")
}

// ---- Planetoid-style file ingestion -----------------------------------------

/// Parse `.content` / `.cites` citation-network files.
///
/// Content rows: `<id> <feature...> <label>`. Cites rows: `<cited> <citing>`.
/// Edges are made symmetric; rows citing unknown ids are dropped and counted
/// in the returned tally.
pub fn load_planetoid<P: AsRef<Path>>(content_path: P, cites_path: P) -> Result<(Graph, usize)> {
    let content_name = content_path.as_ref().display().to_string();
    let cites_name = cites_path.as_ref().display().to_string();

    let content = std::fs::File::open(content_path.as_ref())?;
    let mut ids: Vec<String> = Vec::new();
    let mut id_index: HashMap<String, usize> = HashMap::new();
    let mut label_index: HashMap<String, usize> = HashMap::new();
    let mut labels: Vec<usize> = Vec::new();
    let mut fdata: Vec<f64> = Vec::new();
    let mut dim: Option<usize> = None;

    for (lineno, line) in BufReader::new(content).lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() < 3 {
            return Err(Error::Parse {
                path: content_name,
                line: lineno,
                msg: format!("expected id, features and label; got {} fields", toks.len()),
            });
        }
        let id = toks[0].to_string();
        let label = toks[toks.len() - 1];
        let feats = &toks[1..toks.len() - 1];
        match dim {
            None => dim = Some(feats.len()),
            Some(d) if d != feats.len() => {
                return Err(Error::Parse {
                    path: content_name,
                    line: lineno,
                    msg: format!("row has {} features, expected {d}", feats.len()),
                });
            }
            _ => {}
        }
        if id_index.contains_key(&id) {
            return Err(Error::Parse {
                path: content_name,
                line: lineno,
                msg: format!("duplicate node id {id}"),
            });
        }
        for tok in feats {
            let v: f64 = tok.parse().map_err(|_| Error::Parse {
                path: content_name.clone(),
                line: lineno,
                msg: format!("unparseable feature value {tok:?}"),
            })?;
            fdata.push(v);
        }
        let next_label = label_index.len();
        let li = *label_index.entry(label.to_string()).or_insert(next_label);
        labels.push(li);
        id_index.insert(id.clone(), ids.len());
        ids.push(id);
    }
    let n = ids.len();
    if n == 0 {
        return Err(Error::Input(format!("{content_name}: empty content file")));
    }
    let d = dim.unwrap();

    let cites = std::fs::File::open(cites_path.as_ref())?;
    let mut edges = Vec::new();
    let mut dropped = 0usize;
    for (lineno, line) in BufReader::new(cites).lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 2 {
            return Err(Error::Parse {
                path: cites_name,
                line: lineno,
                msg: format!("expected two node ids, got {} fields", toks.len()),
            });
        }
        match (id_index.get(toks[0]), id_index.get(toks[1])) {
            (Some(&a), Some(&b)) => edges.push((a, b)),
            _ => dropped += 1,
        }
    }
    let features = Tensor::from_vec(&[n, d], fdata)?;
    let num_classes = label_index.len();
    let g = Graph::new(n, edges, features, Some(labels), Some(num_classes))?;
    Ok((g, dropped))
}

/// Write a graph back out in the two-file citation format. Node ids are
/// `n<i>`, labels `c<class>` (or `u` when the graph is unlabeled).
pub fn export_planetoid<P: AsRef<Path>>(g: &Graph, content_path: P, cites_path: P) -> Result<()> {
    let mut content = std::io::BufWriter::new(std::fs::File::create(content_path)?);
    let d = g.feature_dim();
    let feats = g.features().data();
    for i in 0..g.n() {
        write!(content, "n{i}")?;
        for j in 0..d {
            write!(content, " {}", feats[i * d + j])?;
        }
        match g.labels() {
            Some(l) => writeln!(content, " c{}", l[i])?,
            None => writeln!(content, " u")?,
        }
    }
    content.flush()?;

    let mut cites = std::io::BufWriter::new(std::fs::File::create(cites_path)?);
    for &(u, v) in g.edges() {
        writeln!(cites, "n{u} n{v}")?;
    }
    cites.flush()?;
    Ok(())
}
