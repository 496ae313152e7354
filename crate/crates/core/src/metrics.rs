//! Task metrics and the embedding post-processing used by community
//! detection: accuracy, rank-based AUC, normalized mutual information,
//! principal-component projection and k-means clustering.

use crate::error::{Error, Result};
use crate::kernels;
use crate::rng;
use crate::tensor::Tensor;

/// Fraction of equal entries.
pub fn metric_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::Input(format!(
            "accuracy needs equal nonempty lengths, got {} and {}",
            pred.len(),
            truth.len()
        )));
    }
    let hits = pred
        .iter()
        .zip(truth.iter())
        .filter(|(a, b)| a == b)
        .count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Mann–Whitney AUC with midrank tie handling. Requires both classes.
pub fn metric_auc(prob: &[f64], truth: &[bool]) -> Result<f64> {
    if prob.len() != truth.len() || prob.is_empty() {
        return Err(Error::Input(format!(
            "auc needs equal nonempty lengths, got {} and {}",
            prob.len(),
            truth.len()
        )));
    }
    let n_pos = truth.iter().filter(|&&t| t).count();
    let n_neg = truth.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Input("auc needs both classes present".into()));
    }
    let mut order: Vec<usize> = (0..prob.len()).collect();
    order.sort_by(|&a, &b| prob[a].partial_cmp(&prob[b]).expect("finite probabilities"));
    // midranks over tied probability runs
    let mut ranks = vec![0.0; prob.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && prob[order[j + 1]] == prob[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = mid;
        }
        i = j + 1;
    }
    let rank_sum_pos: f64 = truth
        .iter()
        .zip(ranks.iter())
        .filter(|(&t, _)| t)
        .map(|(_, &r)| r)
        .sum();
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Mutual information normalized by the arithmetic mean of the entropies.
/// Lies in `[0, 1]`; two single-cluster partitions score 1.
pub fn metric_nmi(labels_a: &[usize], labels_b: &[usize]) -> Result<f64> {
    if labels_a.len() != labels_b.len() || labels_a.is_empty() {
        return Err(Error::Input(format!(
            "nmi needs equal nonempty lengths, got {} and {}",
            labels_a.len(),
            labels_b.len()
        )));
    }
    let n = labels_a.len() as f64;
    let compress = |labels: &[usize]| -> (Vec<usize>, usize) {
        let mut map = std::collections::BTreeMap::new();
        let mut out = Vec::with_capacity(labels.len());
        for &l in labels {
            let next = map.len();
            out.push(*map.entry(l).or_insert(next));
        }
        (out, map.len())
    };
    let (a, ca) = compress(labels_a);
    let (b, cb) = compress(labels_b);
    let mut joint = vec![0.0; ca * cb];
    let mut pa = vec![0.0; ca];
    let mut pb = vec![0.0; cb];
    for (&x, &y) in a.iter().zip(b.iter()) {
        joint[x * cb + y] += 1.0;
        pa[x] += 1.0;
        pb[y] += 1.0;
    }
    let entropy = |p: &[f64]| -> f64 {
        p.iter()
            .filter(|&&c| c > 0.0)
            .map(|&c| {
                let q = c / n;
                -q * q.ln()
            })
            .sum()
    };
    let (ha, hb) = (entropy(&pa), entropy(&pb));
    if ha + hb == 0.0 {
        return Ok(1.0); // both partitions trivial and identical
    }
    let mut mi = 0.0;
    for x in 0..ca {
        for y in 0..cb {
            let c = joint[x * cb + y];
            if c > 0.0 {
                let pxy = c / n;
                mi += pxy * (pxy / (pa[x] / n * pb[y] / n)).ln();
            }
        }
    }
    Ok((mi / ((ha + hb) / 2.0)).clamp(0.0, 1.0))
}

/// Fitted principal components (rows of `components`, each length `k`).
pub struct Pca {
    pub mean: Vec<f64>,
    pub components: Vec<f64>,
    pub dims: usize,
    pub input_dim: usize,
    pub eigenvalues: Vec<f64>,
}

/// Fit by power iteration with deflation on the column covariance. Component
/// signs are fixed by making each component's largest-magnitude coordinate
/// positive, so the fit is fully deterministic.
pub fn pca_fit(h: &Tensor, dims: usize) -> Result<Pca> {
    let shape = h.shape();
    if shape.len() != 2 {
        return Err(Error::Input("pca expects a 2-d tensor".into()));
    }
    let (n, k) = (shape[0], shape[1]);
    if dims == 0 || dims > n.min(k) {
        return Err(Error::Input(format!(
            "pca dims {dims} out of range for {n}x{k} data"
        )));
    }
    let data = h.data();
    let mut mean = vec![0.0; k];
    for i in 0..n {
        for j in 0..k {
            mean[j] += data[i * k + j];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut centered = vec![0.0; n * k];
    for i in 0..n {
        for j in 0..k {
            centered[i * k + j] = data[i * k + j] - mean[j];
        }
    }
    drop(data);
    // column covariance
    let ct = kernels::transpose(&centered, n, k);
    let mut cov = vec![0.0; k * k];
    kernels::matmul(&ct, &centered, &mut cov, k, n, k);
    let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
    cov.iter_mut().for_each(|v| *v /= denom);

    let mut components = Vec::with_capacity(dims * k);
    let mut eigenvalues = Vec::with_capacity(dims);
    let mut rng = rng::substream(0x9ca, "pca-start");
    for comp in 0..dims {
        let mut v: Vec<f64> = (0..k)
            .map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0))
            .collect();
        orthogonalize(&mut v, &components, k, comp);
        normalize(&mut v);
        let mut lambda = 0.0;
        for _ in 0..2000 {
            let mut w = vec![0.0; k];
            kernels::matmul_seq(&cov, &v, &mut w, k, k, 1);
            orthogonalize(&mut w, &components, k, comp);
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-300 {
                // residual covariance is (numerically) zero; keep the current
                // orthonormal direction with eigenvalue 0
                lambda = 0.0;
                break;
            }
            w.iter_mut().for_each(|x| *x /= norm);
            let new_lambda = quadratic_form(&cov, &w, k);
            let converged = (new_lambda - lambda).abs() <= 1e-13 * new_lambda.abs().max(1.0);
            v = w;
            lambda = new_lambda;
            if converged {
                break;
            }
        }
        // sign convention: largest-magnitude coordinate positive
        let lead = v
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| a.abs().partial_cmp(&b.abs()).unwrap())
            .map(|(i, _)| i)
            .unwrap_or(0);
        if v[lead] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        // deflate
        for i in 0..k {
            for j in 0..k {
                cov[i * k + j] -= lambda * v[i] * v[j];
            }
        }
        components.extend_from_slice(&v);
        eigenvalues.push(lambda);
    }
    Ok(Pca {
        mean,
        components,
        dims,
        input_dim: k,
        eigenvalues,
    })
}

fn orthogonalize(v: &mut [f64], components: &[f64], k: usize, count: usize) {
    for c in 0..count {
        let comp = &components[c * k..c * k + k];
        let dot: f64 = v.iter().zip(comp.iter()).map(|(a, b)| a * b).sum();
        for (x, &c) in v.iter_mut().zip(comp.iter()) {
            *x -= dot * c;
        }
    }
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

fn quadratic_form(m: &[f64], v: &[f64], k: usize) -> f64 {
    let mut mv = vec![0.0; k];
    kernels::matmul_seq(m, v, &mut mv, k, k, 1);
    v.iter().zip(mv.iter()).map(|(a, b)| a * b).sum()
}

impl Pca {
    /// Project rows onto the fitted components.
    pub fn transform(&self, h: &Tensor) -> Result<Tensor> {
        let shape = h.shape();
        if shape.len() != 2 || shape[1] != self.input_dim {
            return Err(Error::Dimension {
                op: "pca_transform",
                lhs: shape,
                rhs: vec![self.input_dim],
            });
        }
        let n = shape[0];
        let k = self.input_dim;
        let data = h.data();
        let mut centered = vec![0.0; n * k];
        for i in 0..n {
            for j in 0..k {
                centered[i * k + j] = data[i * k + j] - self.mean[j];
            }
        }
        drop(data);
        let comp_t = kernels::transpose(&self.components, self.dims, k);
        let mut out = vec![0.0; n * self.dims];
        kernels::matmul(&centered, &comp_t, &mut out, n, k, self.dims);
        Tensor::from_vec(&[n, self.dims], out)
    }

    /// Reconstruct rows from their projections (projection · components + mean).
    pub fn reconstruct(&self, projected: &Tensor) -> Result<Tensor> {
        let shape = projected.shape();
        if shape.len() != 2 || shape[1] != self.dims {
            return Err(Error::Dimension {
                op: "pca_reconstruct",
                lhs: shape,
                rhs: vec![self.dims],
            });
        }
        let n = shape[0];
        let mut out = vec![0.0; n * self.input_dim];
        kernels::matmul(
            &projected.data(),
            &self.components,
            &mut out,
            n,
            self.dims,
            self.input_dim,
        );
        for i in 0..n {
            for j in 0..self.input_dim {
                out[i * self.input_dim + j] += self.mean[j];
            }
        }
        Tensor::from_vec(&[n, self.input_dim], out)
    }
}

/// Center, fit and project in one call.
pub fn pca_project(h: &Tensor, dims: usize) -> Result<Tensor> {
    pca_fit(h, dims)?.transform(h)
}

/// k-means++ initialization followed by Lloyd iterations until the labeling
/// reaches a fixpoint (at most 300 rounds). Empty clusters are reseeded to
/// the point farthest from its assigned centroid. Deterministic per seed.
pub fn kmeans_cluster(points: &Tensor, k: usize, seed: u64) -> Result<Vec<usize>> {
    let shape = points.shape();
    if shape.len() != 2 {
        return Err(Error::Input("kmeans expects a 2-d tensor".into()));
    }
    let (n, d) = (shape[0], shape[1]);
    if k == 0 || k > n {
        return Err(Error::Input(format!(
            "kmeans k={k} out of range for {n} points"
        )));
    }
    let data = points.to_vec();
    let point = |i: usize| -> &[f64] { &data[i * d..i * d + d] };
    let dist2 = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
    };

    let mut rng = rng::substream(seed, "kmeans");
    // k-means++ seeding
    let mut centroids: Vec<f64> = Vec::with_capacity(k * d);
    let first = rand::Rng::gen_range(&mut rng, 0..n);
    centroids.extend_from_slice(point(first));
    let mut min_d2: Vec<f64> = (0..n).map(|i| dist2(point(i), point(first))).collect();
    while centroids.len() < k * d {
        let total: f64 = min_d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rand::Rng::gen::<f64>(&mut rng) * total;
            let mut chosen = n - 1;
            for (i, &w) in min_d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            // all remaining distances zero (duplicate points): first index
            // maximizing nothing, deterministically
            min_d2.iter().position(|&w| w == 0.0).unwrap_or(0)
        };
        centroids.extend_from_slice(point(next));
        let c = centroids.len() / d - 1;
        for (i, slot) in min_d2.iter_mut().enumerate() {
            let nd = dist2(point(i), &centroids[c * d..c * d + d]);
            if nd < *slot {
                *slot = nd;
            }
        }
    }

    let mut labels = vec![0usize; n];
    for _round in 0..300 {
        // assignment; ties go to the smaller cluster index
        let mut changed = false;
        for (i, label) in labels.iter_mut().enumerate() {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for c in 0..k {
                let dd = dist2(point(i), &centroids[c * d..c * d + d]);
                if dd < best_d {
                    best_d = dd;
                    best = c;
                }
            }
            if *label != best {
                *label = best;
                changed = true;
            }
        }
        // update
        let mut sums = vec![0.0; k * d];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[labels[i]] += 1;
            for j in 0..d {
                sums[labels[i] * d + j] += data[i * d + j];
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // reseed to the point farthest from its own centroid
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = dist2(point(a), &centroids[labels[a] * d..labels[a] * d + d]);
                        let db = dist2(point(b), &centroids[labels[b] * d..labels[b] * d + d]);
                        da.partial_cmp(&db).unwrap()
                    })
                    .unwrap();
                centroids[c * d..c * d + d].copy_from_slice(point(far));
                changed = true;
            } else {
                for j in 0..d {
                    centroids[c * d + j] = sums[c * d + j] / counts[c] as f64;
                }
            }
        }
        if !changed {
            break;
        }
    }
    Ok(labels)
}
