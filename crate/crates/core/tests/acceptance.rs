//! Acceptance suite.
//!
//! One test per criterion, each printing a `ACCEPT-NN ... PASS/FAIL` line.
//! The property-based criteria (01–06) need no dataset files. The synthetic
//! end-to-end criteria (07–09) train on a seeded stochastic-block-model
//! fixture shared across tests. The citation-graph criteria (10–13) run only
//! when Cora files are present (see `data_dir`); otherwise they print SKIP
//! and pass vacuously.

use std::sync::OnceLock;

use rand::Rng;

use graphmark_core::downstream::{evaluate_all_tasks, DownstreamConfig, TaskReport};
use graphmark_core::encoder::{
    encode, encode_centers, init_params, write_checkpoint, Activation, EncoderArch, EncoderParams,
};
use graphmark_core::gradcheck::grad_check;
use graphmark_core::graph::{ego_graph, generate_sbm, load_planetoid, Graph};
use graphmark_core::pretext::{contrastive_utility_loss, generative_utility_loss, PretextKind};
use graphmark_core::rng::{self, stream};
use graphmark_core::robustness::{prune_encoder, pruning_sweep, weight_count, zero_weight_count};
use graphmark_core::tensor::{bce_with_logits, mse, softmax_cross_entropy, Tensor};
use graphmark_core::watermark::{
    concentration_score, pretrain_clean, pretrain_watermarked, FeatureKind, PretrainSettings,
    WatermarkConfig,
};

fn random_tensor(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Magnitudes in [0.1, 2]: keeps piecewise-linear kinks away from the
/// finite-difference step.
fn random_tensor_off_kink(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| rng.gen_range(0.1..2.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 })
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

fn random_gnp(n: usize, p: f64, d: usize, rng: &mut impl Rng) -> Graph {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.gen::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    let features = random_tensor(&[n, d], -1.0, 1.0, rng);
    Graph::new(n, edges, features, None, None).unwrap()
}

// ---- criterion 1: autodiff vs finite differences -----------------------------

#[test]
fn accept_01_autodiff_grad_check() {
    type Case = (
        &'static str,
        f64,
        Box<
            dyn Fn(
                u64,
            ) -> (
                Vec<Tensor>,
                Box<dyn Fn(&[Tensor]) -> graphmark_core::Result<Tensor>>,
            ),
        >,
    );
    let seeds: Vec<u64> = (0..20).collect();
    let mut cases: Vec<Case> = Vec::new();

    macro_rules! case {
        ($name:literal, $tol:expr, $inputs:expr, $builder:expr) => {
            cases.push((
                $name,
                $tol,
                Box::new(move |seed| {
                    let mut r = rng::substream(seed, concat!("gc-", $name));
                    let inputs = ($inputs)(&mut r);
                    let builder: Box<dyn Fn(&[Tensor]) -> graphmark_core::Result<Tensor>> =
                        Box::new($builder);
                    (inputs, builder)
                }),
            ));
        };
    }

    // kept simple: each case draws its inputs and returns a scalar builder
    case!(
        "add",
        1e-4,
        |r: &mut rand_chacha::ChaCha8Rng| {
            vec![
                random_tensor(&[3, 2], -2.0, 2.0, r),
                random_tensor(&[3, 2], -2.0, 2.0, r),
            ]
        },
        |ts: &[Tensor]| Ok(ts[0].add(&ts[1])?.sum())
    );
    case!(
        "sub",
        1e-4,
        |r: &mut rand_chacha::ChaCha8Rng| {
            vec![
                random_tensor(&[4], -2.0, 2.0, r),
                random_tensor(&[4], -2.0, 2.0, r),
            ]
        },
        |ts: &[Tensor]| Ok(ts[0].sub(&ts[1])?.mul(&ts[0].sub(&ts[1])?)?.sum())
    );
    case!(
        "mul",
        1e-4,
        |r: &mut rand_chacha::ChaCha8Rng| {
            vec![
                random_tensor(&[3, 3], -2.0, 2.0, r),
                random_tensor(&[3, 3], -2.0, 2.0, r),
            ]
        },
        |ts: &[Tensor]| Ok(ts[0].mul(&ts[1])?.sum())
    );
    case!(
        "neg_scale_add_scalar",
        1e-4,
        |r: &mut rand_chacha::ChaCha8Rng| { vec![random_tensor(&[5], -2.0, 2.0, r)] },
        |ts: &[Tensor]| Ok(ts[0].neg().scale(1.7).add_scalar(0.3).mul(&ts[0])?.sum())
    );
    case!(
        "matmul",
        1e-4,
        |r: &mut rand_chacha::ChaCha8Rng| {
            vec![
                random_tensor(&[4, 3], -2.0, 2.0, r),
                random_tensor(&[3, 5], -2.0, 2.0, r),
            ]
        },
        |ts: &[Tensor]| Ok(ts[0].matmul(&ts[1])?.sum())
    );
    case!(
        "spmm",
        1e-4,
        |r: &mut rand_chacha::ChaCha8Rng| { vec![random_tensor(&[4, 3], -2.0, 2.0, r)] },
        |ts: &[Tensor]| {
            let csr = std::sync::Arc::new(graphmark_core::sparse::CsrMatrix::from_coo(
                4,
                4,
                &[
                    (0, 1, 0.5),
                    (1, 0, 0.5),
                    (2, 3, -1.25),
                    (3, 3, 2.0),
                    (0, 0, 1.0),
                ],
            ));
            Ok(Tensor::spmm(&csr, &ts[0])?
                .mul(&Tensor::spmm(&csr, &ts[0])?)?
                .sum())
        }
    );
    case!(
        "add_bias",
        1e-4,
        |r: &mut rand_chacha::ChaCha8Rng| {
            vec![
                random_tensor(&[4, 3], -2.0, 2.0, r),
                random_tensor(&[3], -2.0, 2.0, r),
            ]
        },
        |ts: &[Tensor]| Ok(ts[0].add_bias(&ts[1])?.mul(&ts[0].add_bias(&ts[1])?)?.sum())
    );
    case!(
        "reshape",
        1e-4,
        |r: &mut rand_chacha::ChaCha8Rng| { vec![random_tensor(&[6], -2.0, 2.0, r)] },
        |ts: &[Tensor]| Ok(ts[0].reshape(&[2, 3])?.mul(&ts[0].reshape(&[2, 3])?)?.sum())
    );
    case!(
        "gather_rows",
        1e-4,
        |r: &mut rand_chacha::ChaCha8Rng| { vec![random_tensor(&[5, 3], -2.0, 2.0, r)] },
        |ts: &[Tensor]| {
            let g = ts[0].gather_rows(&[4, 0, 4, 2])?;
            Ok(g.mul(&g)?.sum())
        }
    );
    case!(
        "pairwise_dot",
        1e-4,
        |r: &mut rand_chacha::ChaCha8Rng| { vec![random_tensor(&[5, 3], -2.0, 2.0, r)] },
        |ts: &[Tensor]| {
            let d = ts[0].pairwise_dot(&[(0, 1), (2, 2), (4, 3)])?;
            Ok(d.mul(&d)?.sum())
        }
    );
    case!(
        "sigmoid",
        1e-4,
        |r: &mut rand_chacha::ChaCha8Rng| { vec![random_tensor(&[6], -2.0, 2.0, r)] },
        |ts: &[Tensor]| Ok(ts[0].sigmoid().sum())
    );
    case!(
        "relu",
        1e-4,
        |r: &mut rand_chacha::ChaCha8Rng| { vec![random_tensor_off_kink(&[8], r)] },
        |ts: &[Tensor]| Ok(ts[0].relu().mul(&ts[0].relu())?.sum())
    );
    case!(
        "tanh",
        1e-4,
        |r: &mut rand_chacha::ChaCha8Rng| { vec![random_tensor(&[6], -2.0, 2.0, r)] },
        |ts: &[Tensor]| Ok(ts[0].tanh_act().sum())
    );
    case!(
        "exp",
        1e-4,
        |r: &mut rand_chacha::ChaCha8Rng| { vec![random_tensor(&[6], -2.0, 2.0, r)] },
        |ts: &[Tensor]| Ok(ts[0].exp().sum())
    );
    case!(
        "log",
        1e-4,
        |r: &mut rand_chacha::ChaCha8Rng| { vec![random_tensor(&[6], 0.5, 2.0, r)] },
        |ts: &[Tensor]| Ok(ts[0].log().sum())
    );
    case!(
        "prelu",
        1e-4,
        |r: &mut rand_chacha::ChaCha8Rng| {
            vec![
                random_tensor_off_kink(&[8], r),
                random_tensor(&[1], 0.1, 0.9, r),
            ]
        },
        |ts: &[Tensor]| Ok(ts[0].prelu(&ts[1])?.sum())
    );
    case!(
        "sum_mean",
        1e-4,
        |r: &mut rand_chacha::ChaCha8Rng| { vec![random_tensor(&[3, 4], -2.0, 2.0, r)] },
        |ts: &[Tensor]| ts[0].sum().add(&ts[0].mean())
    );
    case!(
        "mean_rows",
        1e-4,
        |r: &mut rand_chacha::ChaCha8Rng| { vec![random_tensor(&[4, 3], -2.0, 2.0, r)] },
        |ts: &[Tensor]| {
            let m = ts[0].mean_rows()?;
            Ok(m.mul(&m)?.sum())
        }
    );
    case!(
        "row_mean",
        1e-4,
        |r: &mut rand_chacha::ChaCha8Rng| { vec![random_tensor(&[4, 3], -2.0, 2.0, r)] },
        |ts: &[Tensor]| {
            let m = ts[0].row_mean()?;
            Ok(m.mul(&m)?.sum())
        }
    );
    case!(
        "mse",
        1e-4,
        |r: &mut rand_chacha::ChaCha8Rng| {
            vec![
                random_tensor(&[3, 3], -2.0, 2.0, r),
                random_tensor(&[3, 3], -2.0, 2.0, r),
            ]
        },
        |ts: &[Tensor]| mse(&ts[0], &ts[1])
    );
    case!(
        "bce_with_logits",
        1e-4,
        |r: &mut rand_chacha::ChaCha8Rng| { vec![random_tensor(&[6], -2.0, 2.0, r)] },
        |ts: &[Tensor]| {
            let targets = Tensor::from_vec(&[6], vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
            bce_with_logits(&ts[0], &targets)
        }
    );
    case!(
        "softmax_cross_entropy",
        1e-4,
        |r: &mut rand_chacha::ChaCha8Rng| { vec![random_tensor(&[4, 3], -2.0, 2.0, r)] },
        |ts: &[Tensor]| softmax_cross_entropy(&ts[0], &[0, 2, 1, 2])
    );

    let mut worst: (f64, String) = (0.0, String::new());
    for (name, tol, setup) in &cases {
        for &seed in &seeds {
            let (inputs, builder) = setup(seed);
            let rep = grad_check(|ts| builder(ts), &inputs, *tol).unwrap();
            assert!(
                rep.ok,
                "ACCEPT-01 grad check FAILED for op {name} seed {seed}: max rel err {}",
                rep.max_rel_err
            );
            if rep.max_rel_err > worst.0 {
                worst = (rep.max_rel_err, format!("{name}/{seed}"));
            }
        }
    }

    // composite pretext losses on 10-node random graphs, tol 1e-3
    for &seed in &seeds {
        // sparse enough that an equal count of distinct non-edges always exists
        let mut r = rng::substream(seed, "gc-composite");
        let g = random_gnp(10, 0.25, 6, &mut r);
        let init = init_params(6, 8, 4, 2, Activation::Prelu, seed).unwrap();
        let disc = random_tensor(&[4, 4], -0.5, 0.5, &mut r);
        let mut inputs: Vec<Tensor> = init.trainable().iter().map(|t| t.detach()).collect();
        inputs.push(disc);
        let assemble = |ts: &[Tensor]| -> EncoderParams {
            EncoderParams {
                layers: vec![
                    graphmark_core::encoder::EncoderLayer {
                        weight: ts[0].clone(),
                        bias: ts[1].clone(),
                    },
                    graphmark_core::encoder::EncoderLayer {
                        weight: ts[2].clone(),
                        bias: ts[3].clone(),
                    },
                ],
                prelu_slopes: vec![ts[4].clone()],
                activation: Activation::Prelu,
                input_dim: 6,
                hidden_dim: 8,
                embed_dim: 4,
                num_layers: 2,
            }
        };
        let g1 = g.clone();
        let rep = grad_check(
            |ts| contrastive_utility_loss(&assemble(ts), &ts[5], &g1, seed),
            &inputs,
            1e-3,
        )
        .unwrap();
        assert!(
            rep.ok,
            "ACCEPT-01 contrastive composite FAILED seed {seed}: {}",
            rep.max_rel_err
        );
        let g2 = g.clone();
        let rep = grad_check(
            |ts| generative_utility_loss(&assemble(ts), &g2, 1, seed),
            &inputs[..5],
            1e-3,
        )
        .unwrap();
        assert!(
            rep.ok,
            "ACCEPT-01 generative composite FAILED seed {seed}: {}",
            rep.max_rel_err
        );
    }
    println!(
        "ACCEPT-01 autodiff-grad-check: PASS ({} ops + 2 composite losses x 20 seeds, worst rel err {:.2e} at {})",
        cases.len(),
        worst.0,
        worst.1
    );
}

// ---- criterion 2: ego-graph BFS oracle ---------------------------------------

/// Independent oracle: nodes within `l` hops via boolean powers of the dense
/// adjacency-with-identity matrix.
fn hop_closure_oracle(g: &Graph, center: usize, hops: usize) -> std::collections::BTreeSet<usize> {
    let n = g.n();
    let mut m = vec![false; n * n];
    for i in 0..n {
        m[i * n + i] = true;
    }
    for &(u, v) in g.edges() {
        m[u * n + v] = true;
        m[v * n + u] = true;
    }
    // row(center) of M^hops under boolean arithmetic
    let mut reach: Vec<bool> = (0..n).map(|j| m[center * n + j]).collect();
    for _ in 1..hops {
        let mut next = vec![false; n];
        for j in 0..n {
            if reach[j] {
                for t in 0..n {
                    if m[j * n + t] {
                        next[t] = true;
                    }
                }
            }
        }
        reach = next;
    }
    (0..n).filter(|&j| reach[j]).collect()
}

#[test]
fn accept_02_ego_graph_matches_bfs_oracle() {
    let mut r = rng::substream(2024, "ego-oracle");
    let mut checked = 0usize;
    for _ in 0..100 {
        let g = random_gnp(30, 0.1, 3, &mut r);
        for hops in 1..=3usize {
            let center = r.gen_range(0..30);
            let ego = ego_graph(&g, center, hops).unwrap();
            let mut got: std::collections::BTreeSet<usize> = std::collections::BTreeSet::new();
            // recover original ids: center first, then BFS order; we only
            // check the node SET, via feature-row identity
            // (features here are unique with probability 1)
            let want = hop_closure_oracle(&g, center, hops);
            let d = g.feature_dim();
            let parent = g.features().to_vec();
            let rows = ego.graph.features().to_vec();
            for i in 0..ego.graph.n() {
                let row = &rows[i * d..(i + 1) * d];
                let mut found = None;
                for v in 0..g.n() {
                    if &parent[v * d..(v + 1) * d] == row {
                        found = Some(v);
                        break;
                    }
                }
                got.insert(found.expect("ego row must come from the parent graph"));
            }
            assert_eq!(got, want, "ego({center},{hops}) node set mismatch");
            checked += 1;
        }
    }
    println!("ACCEPT-02 ego-graph-bfs-oracle: PASS ({checked} extractions, exact set equality)");
}

// ---- criterion 3: receptive-field equivalence --------------------------------

#[test]
fn accept_03_receptive_field_equivalence() {
    let mut r = rng::substream(3, "receptive");
    let mut max_diff: f64 = 0.0;
    for trial in 0..20 {
        let g = random_gnp(30, 0.12, 5, &mut r);
        let params = init_params(5, 8, 4, 2, Activation::Prelu, 1000 + trial).unwrap();
        let h = encode(&params, &g).unwrap().to_vec();
        for _ in 0..5 {
            let v = r.gen_range(0..30);
            let ego = ego_graph(&g, v, 2).unwrap();
            let z = encode_centers(&params, &[ego]).unwrap().to_vec();
            for j in 0..4 {
                max_diff = max_diff.max((z[j] - h[v * 4 + j]).abs());
            }
        }
    }
    assert!(
        max_diff <= 1e-10,
        "ACCEPT-03 FAILED: max |ego - full| = {max_diff:e}"
    );
    println!(
        "ACCEPT-03 receptive-field-equivalence: PASS (max |ego - full| = {max_diff:.2e} <= 1e-10)"
    );
}

// ---- criterion 4: concentration-score oracle ---------------------------------

#[test]
fn accept_04_concentration_score_oracle() {
    let mut r = rng::substream(4, "cs-oracle");
    for _ in 0..1000 {
        let m = r.gen_range(1..=40usize);
        let c = r.gen_range(1..=7usize);
        let preds: Vec<usize> = (0..m).map(|_| r.gen_range(0..c)).collect();
        // brute-force count
        let mut counts = vec![0usize; c];
        for &p in &preds {
            counts[p] += 1;
        }
        let mut best = 0usize;
        for label in 1..c {
            if counts[label] > counts[best] {
                best = label;
            }
        }
        let want_cs = counts[best] as f64 / m as f64;
        let (cs, majority) = concentration_score(&preds).unwrap();
        assert_eq!(cs, want_cs, "cs mismatch on {preds:?}");
        assert_eq!(majority, best, "majority mismatch on {preds:?}");
    }
    println!("ACCEPT-04 concentration-score-oracle: PASS (1000 random vectors, exact)");
}

// ---- criterion 5: clean equivalence ------------------------------------------

#[test]
fn accept_05_clean_equivalence() {
    let g = generate_sbm(&[20, 20], 0.25, 0.03, 10, 5);
    let settings = PretrainSettings {
        arch: EncoderArch {
            hidden_dim: 8,
            embed_dim: 4,
            num_layers: 2,
            activation: Activation::Prelu,
        },
        pretext: PretextKind::Contrastive,
        negative_ratio: 1,
        epochs: 40,
        lr: 0.01,
        seed: 17,
    };
    let zero = WatermarkConfig {
        lambda1: 0.0,
        lambda2: 0.0,
        n_t: 8,
        seed: 17,
        ..WatermarkConfig::default()
    };
    let wm = pretrain_watermarked(&g, &settings, &zero, FeatureKind::Binary).unwrap();
    let (clean, _) = pretrain_clean(&g, &settings).unwrap();

    let dir = std::env::temp_dir().join(format!("gm-accept5-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let meta = vec![("dataset".to_string(), "sbm".to_string())];
    let a = dir.join("wm.ckpt");
    let b = dir.join("clean.ckpt");
    write_checkpoint(&wm.params, &meta, &a).unwrap();
    write_checkpoint(&clean, &meta, &b).unwrap();
    let (ba, bb) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    std::fs::remove_dir_all(&dir).ok();
    assert_eq!(ba, bb, "ACCEPT-05 FAILED: checkpoints differ");
    println!(
        "ACCEPT-05 clean-equivalence: PASS (lambda-zero run byte-identical to clean run, {} bytes)",
        ba.len()
    );
}

// ---- criterion 6: pruning exactness ------------------------------------------

#[test]
fn accept_06_pruning_exactness() {
    let params = init_params(12, 16, 8, 2, Activation::Prelu, 6).unwrap();
    let total = weight_count(&params);
    for alpha in [0.0, 0.25, 0.5, 1.0] {
        let once = prune_encoder(&params, alpha).unwrap();
        let want = (alpha * total as f64).floor() as usize;
        assert_eq!(
            zero_weight_count(&once),
            want,
            "ACCEPT-06 FAILED: alpha {alpha} zero count"
        );
        let twice = prune_encoder(&once, alpha).unwrap();
        for (a, b) in once.trainable().iter().zip(twice.trainable().iter()) {
            let (av, bv) = (a.to_vec(), b.to_vec());
            for (x, y) in av.iter().zip(bv.iter()) {
                assert_eq!(x.to_bits(), y.to_bits(), "ACCEPT-06 FAILED: not idempotent");
            }
        }
    }
    println!(
        "ACCEPT-06 pruning-exactness: PASS (exact floor(alpha*{total}) zeros and idempotence at 4 rates)"
    );
}

// ---- criteria 7-9: synthetic end-to-end fixture --------------------------------

struct SeedOutcome {
    wm: Vec<TaskReport>,
    clean: Vec<TaskReport>,
}

struct SbmFixture {
    seeds: Vec<u64>,
    outcomes: Vec<SeedOutcome>,
    /// (acc, cs) of the node task at pruning rates 0.0 and 0.9 on the first seed.
    prune_base: (f64, f64),
    prune_heavy: (f64, f64),
}

fn fixture_arch() -> EncoderArch {
    EncoderArch {
        hidden_dim: 32,
        embed_dim: 16,
        num_layers: 2,
        activation: Activation::Prelu,
    }
}

fn fixture_downstream() -> DownstreamConfig {
    DownstreamConfig {
        epochs: 100,
        per_class: 10,
        n_val: 30,
        n_test: 60,
        link_samples: 50,
        pca_dims: 12,
        ..DownstreamConfig::default()
    }
}

fn sbm_fixture() -> &'static SbmFixture {
    static FIXTURE: OnceLock<SbmFixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let seeds: Vec<u64> = vec![1, 2, 3, 4, 5];
        let arch = fixture_arch();
        let down = fixture_downstream();
        let mut outcomes = Vec::new();
        let mut prune_base = (0.0, 0.0);
        let mut prune_heavy = (0.0, 0.0);
        for (i, &seed) in seeds.iter().enumerate() {
            let g = generate_sbm(
                &[50, 50, 50],
                0.2,
                0.02,
                48,
                rng::substream_seed(seed, stream::DATASET),
            );
            let settings = PretrainSettings {
                arch,
                pretext: PretextKind::Generative,
                negative_ratio: 1,
                epochs: 600,
                lr: 0.01,
                seed,
            };
            let wm_cfg = WatermarkConfig {
                n_t: 30,
                seed,
                ..WatermarkConfig::default()
            };
            let out = pretrain_watermarked(&g, &settings, &wm_cfg, FeatureKind::Binary).unwrap();
            let (clean_params, _) = pretrain_clean(&g, &settings).unwrap();
            let wm_reports =
                evaluate_all_tasks(&out.params, &g, &out.trigger_set, &down, 0.7, seed).unwrap();
            let clean_reports =
                evaluate_all_tasks(&clean_params, &g, &out.trigger_set, &down, 0.7, seed).unwrap();
            if i == 0 {
                let sweep = pruning_sweep(
                    &out.params,
                    &out.trigger_set,
                    &g,
                    &down,
                    0.7,
                    &[0.0, 0.9],
                    seed,
                )
                .unwrap();
                prune_base = (
                    sweep[0].reports[0].metric_value.unwrap(),
                    sweep[0].reports[0].cs,
                );
                prune_heavy = (
                    sweep[1].reports[0].metric_value.unwrap(),
                    sweep[1].reports[0].cs,
                );
            }
            outcomes.push(SeedOutcome {
                wm: wm_reports,
                clean: clean_reports,
            });
        }
        SbmFixture {
            seeds,
            outcomes,
            prune_base,
            prune_heavy,
        }
    })
}

#[test]
fn accept_07_sbm_watermark_separation() {
    let fx = sbm_fixture();
    let clean_bound = 1.0 / 3.0 + 0.2;
    for (seed, o) in fx.seeds.iter().zip(&fx.outcomes) {
        let wm_cs = o.wm[0].cs;
        let clean_cs = o.clean[0].cs;
        assert!(
            wm_cs >= 0.9,
            "ACCEPT-07 FAILED: seed {seed} watermarked node CS {wm_cs} < 0.9"
        );
        assert!(
            clean_cs <= clean_bound,
            "ACCEPT-07 FAILED: seed {seed} clean node CS {clean_cs} > {clean_bound:.4}"
        );
        assert!(
            wm_cs - clean_cs > 0.3,
            "ACCEPT-07 FAILED: seed {seed} CS gap {} <= 0.3",
            wm_cs - clean_cs
        );
    }
    let summary: Vec<String> = fx
        .outcomes
        .iter()
        .map(|o| format!("{:.2}/{:.2}", o.wm[0].cs, o.clean[0].cs))
        .collect();
    println!(
        "ACCEPT-07 sbm-cs-separation: PASS (wm/clean node CS per seed: {}; all wm >= 0.9, clean <= {:.3}, gap > 0.3)",
        summary.join(" "),
        clean_bound
    );
}

#[test]
fn accept_08_sbm_fidelity() {
    // Table-style reading: mean absolute ACC difference across the 5 seeds
    // (per-seed differences on a 60-node test set are quantized to 1/60).
    let fx = sbm_fixture();
    let gaps: Vec<f64> = fx
        .outcomes
        .iter()
        .map(|o| (o.wm[0].metric_value.unwrap() - o.clean[0].metric_value.unwrap()).abs())
        .collect();
    let mean_gap = gaps.iter().sum::<f64>() / gaps.len() as f64;
    assert!(
        mean_gap <= 0.05,
        "ACCEPT-08 FAILED: mean |ACC_wm - ACC_clean| = {mean_gap} > 0.05"
    );
    println!(
        "ACCEPT-08 sbm-fidelity: PASS (mean |ACC_wm - ACC_clean| = {mean_gap:.4} <= 0.05, per-seed {:?})",
        gaps.iter().map(|g| format!("{g:.3}")).collect::<Vec<_>>()
    );
}

#[test]
fn accept_09_pruning_degrades_cs_and_accuracy_together() {
    let fx = sbm_fixture();
    let (acc0, cs0) = fx.prune_base;
    let (acc9, cs9) = fx.prune_heavy;
    assert!(
        cs9 < cs0,
        "ACCEPT-09 FAILED: CS at alpha 0.9 ({cs9}) not strictly below alpha 0 ({cs0})"
    );
    assert!(
        acc9 < acc0,
        "ACCEPT-09 FAILED: ACC at alpha 0.9 ({acc9}) not strictly below alpha 0 ({acc0})"
    );
    println!(
        "ACCEPT-09 pruning-degrades-both: PASS (alpha 0: ACC {acc0:.3}/CS {cs0:.3} -> alpha 0.9: ACC {acc9:.3}/CS {cs9:.3})"
    );
}

/// Watermark-vs-clean CS separation per task across the fixture seeds. The
/// node and community gaps clear 0.3 on every seed; the link gap is asserted
/// on the across-seed mean because the key node acts as a shared common
/// neighbor of every queried pair, which systematically pulls clean-model
/// link predictions toward "linked" on a 150-node graph.
#[test]
fn fixture_task_gaps_watermarked_vs_clean() {
    let fx = sbm_fixture();
    let mut link_gaps = Vec::new();
    for (seed, o) in fx.seeds.iter().zip(&fx.outcomes) {
        let node_gap = o.wm[0].cs - o.clean[0].cs;
        let comm_gap = o.wm[2].cs - o.clean[2].cs;
        assert!(node_gap > 0.3, "seed {seed}: node CS gap {node_gap} <= 0.3");
        assert!(
            comm_gap > 0.3,
            "seed {seed}: community CS gap {comm_gap} <= 0.3"
        );
        link_gaps.push(o.wm[1].cs - o.clean[1].cs);
    }
    let link_mean = link_gaps.iter().sum::<f64>() / link_gaps.len() as f64;
    assert!(link_mean > 0.3, "mean link CS gap {link_mean} <= 0.3");
    println!(
        "FIXTURE task-gaps: PASS (node and community per-seed > 0.3; link mean gap {link_mean:.3} > 0.3)"
    );
}

// ---- criteria 10-13: citation-graph reproduction -------------------------------

fn data_dir() -> std::path::PathBuf {
    match std::env::var("GRAPHMARK_DATA_DIR") {
        Ok(d) => std::path::PathBuf::from(d),
        Err(_) => std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("../..")
            .join("data"),
    }
}

/// Benchmark dataset shapes, checked whenever the files are available.
#[test]
fn citation_dataset_counts_when_present() {
    let dir = data_dir();
    let mut checked = Vec::new();
    for (name, n, d, c) in [
        ("cora", 2708usize, 1433usize, 7usize),
        ("citeseer", 3327, 3703, 6),
    ] {
        let content = dir.join(format!("{name}.content"));
        let cites = dir.join(format!("{name}.cites"));
        if !content.exists() || !cites.exists() {
            continue;
        }
        let (g, _) = load_planetoid(&content, &cites).unwrap();
        assert_eq!(g.n(), n, "{name} node count");
        assert_eq!(g.feature_dim(), d, "{name} feature dim");
        assert_eq!(g.num_classes(), Some(c), "{name} class count");
        checked.push(name);
    }
    if checked.is_empty() {
        println!(
            "DATASET counts: SKIP (no citation files under {})",
            dir.display()
        );
    } else {
        println!("DATASET counts: PASS ({})", checked.join(", "));
    }
}

struct CoraFixture {
    acc_wm: f64,
    acc_clean: f64,
    node_cs_wm: f64,
    node_cs_clean: f64,
    link_cs_wm: f64,
    link_cs_clean: f64,
    comm_cs_wm: f64,
    comm_cs_clean: f64,
    /// Node CS of the ablation run trained with lambda1 = 0, lambda2 = 1.
    node_cs_lambda1_zero: f64,
    /// Internal watermark loss at the first and last pre-training epoch.
    internal_first: f64,
    internal_last: f64,
}

/// `None` when the Cora files are absent.
fn cora_fixture() -> Option<&'static CoraFixture> {
    static FIXTURE: OnceLock<Option<CoraFixture>> = OnceLock::new();
    FIXTURE
        .get_or_init(|| {
            let dir = data_dir();
            let content = dir.join("cora.content");
            let cites = dir.join("cora.cites");
            if !content.exists() || !cites.exists() {
                return None;
            }
            let (g, _) = load_planetoid(&content, &cites).expect("well-formed Cora files");
            assert_eq!(g.n(), 2708, "unexpected Cora node count");
            assert_eq!(g.feature_dim(), 1433, "unexpected Cora feature dim");
            assert_eq!(g.num_classes(), Some(7), "unexpected Cora class count");
            let seed = 7u64;
            let settings = PretrainSettings {
                arch: EncoderArch {
                    hidden_dim: 256,
                    embed_dim: 256,
                    num_layers: 2,
                    activation: Activation::Prelu,
                },
                pretext: PretextKind::Contrastive,
                negative_ratio: 1,
                epochs: 2000,
                lr: 0.01,
                seed,
            };
            let wm_cfg = WatermarkConfig {
                seed,
                ..WatermarkConfig::default()
            };
            let down = DownstreamConfig::default();

            let wm = pretrain_watermarked(&g, &settings, &wm_cfg, FeatureKind::Binary).unwrap();
            let wm_reports =
                evaluate_all_tasks(&wm.params, &g, &wm.trigger_set, &down, 0.7, seed).unwrap();

            let (clean, _) = pretrain_clean(&g, &settings).unwrap();
            let clean_reports =
                evaluate_all_tasks(&clean, &g, &wm.trigger_set, &down, 0.7, seed).unwrap();

            // ablation: internal term off, external term on
            let ablate_cfg = WatermarkConfig {
                lambda1: 0.0,
                lambda2: 1.0,
                seed,
                ..WatermarkConfig::default()
            };
            let ablate =
                pretrain_watermarked(&g, &settings, &ablate_cfg, FeatureKind::Binary).unwrap();
            let ablate_reports =
                evaluate_all_tasks(&ablate.params, &g, &ablate.trigger_set, &down, 0.7, seed)
                    .unwrap();

            Some(CoraFixture {
                acc_wm: wm_reports[0].metric_value.unwrap(),
                acc_clean: clean_reports[0].metric_value.unwrap(),
                node_cs_wm: wm_reports[0].cs,
                node_cs_clean: clean_reports[0].cs,
                link_cs_wm: wm_reports[1].cs,
                link_cs_clean: clean_reports[1].cs,
                comm_cs_wm: wm_reports[2].cs,
                comm_cs_clean: clean_reports[2].cs,
                node_cs_lambda1_zero: ablate_reports[0].cs,
                internal_first: wm.curve.first().unwrap().internal,
                internal_last: wm.curve.last().unwrap().internal,
            })
        })
        .as_ref()
}

#[test]
fn accept_10_cora_node_classification() {
    let Some(fx) = cora_fixture() else {
        println!("ACCEPT-10 cora-node: SKIP (no cora.content/cora.cites under {}; set GRAPHMARK_DATA_DIR)", data_dir().display());
        return;
    };
    assert!(
        fx.acc_wm >= 0.70,
        "ACCEPT-10 FAILED: watermarked ACC {}",
        fx.acc_wm
    );
    assert!(
        fx.node_cs_wm >= 0.70,
        "ACCEPT-10 FAILED: watermarked CS {}",
        fx.node_cs_wm
    );
    assert!(
        fx.node_cs_clean <= 0.45,
        "ACCEPT-10 FAILED: clean CS {}",
        fx.node_cs_clean
    );
    println!(
        "ACCEPT-10 cora-node: PASS (ACC {:.3} >= 0.70, CS wm {:.3} >= 0.70, CS clean {:.3} <= 0.45)",
        fx.acc_wm, fx.node_cs_wm, fx.node_cs_clean
    );
}

/// Companion checks on the same runs: the clean pipeline clears the task
/// floor, and joint training collapses the internal trigger spread by at
/// least an order of magnitude.
#[test]
fn cora_training_collapses_trigger_spread() {
    let Some(fx) = cora_fixture() else {
        println!("CORA trigger-spread: SKIP (dataset files not found)");
        return;
    };
    assert!(fx.acc_clean >= 0.70, "clean pipeline ACC {}", fx.acc_clean);
    assert!(
        fx.internal_last * 10.0 <= fx.internal_first,
        "internal loss {} -> {} did not shrink 10x",
        fx.internal_first,
        fx.internal_last
    );
    println!(
        "CORA trigger-spread: PASS (internal {:.3e} -> {:.3e}, clean ACC {:.3})",
        fx.internal_first, fx.internal_last, fx.acc_clean
    );
}

#[test]
fn accept_11_cora_link_prediction() {
    let Some(fx) = cora_fixture() else {
        println!("ACCEPT-11 cora-link: SKIP (dataset files not found)");
        return;
    };
    assert!(
        fx.link_cs_wm >= 0.70,
        "ACCEPT-11 FAILED: watermarked CS {}",
        fx.link_cs_wm
    );
    assert!(
        (0.35..=0.65).contains(&fx.link_cs_clean),
        "ACCEPT-11 FAILED: clean CS {} outside [0.35, 0.65]",
        fx.link_cs_clean
    );
    println!(
        "ACCEPT-11 cora-link: PASS (CS wm {:.3} >= 0.70, CS clean {:.3} in [0.35, 0.65])",
        fx.link_cs_wm, fx.link_cs_clean
    );
}

#[test]
fn accept_12_cora_community_detection() {
    let Some(fx) = cora_fixture() else {
        println!("ACCEPT-12 cora-community: SKIP (dataset files not found)");
        return;
    };
    assert!(
        fx.comm_cs_wm >= 0.70,
        "ACCEPT-12 FAILED: watermarked CS {}",
        fx.comm_cs_wm
    );
    assert!(
        fx.comm_cs_clean <= 0.45,
        "ACCEPT-12 FAILED: clean CS {}",
        fx.comm_cs_clean
    );
    println!(
        "ACCEPT-12 cora-community: PASS (CS wm {:.3} >= 0.70, CS clean {:.3} <= 0.45)",
        fx.comm_cs_wm, fx.comm_cs_clean
    );
}

#[test]
fn accept_13_lambda_ablation_shape() {
    let Some(fx) = cora_fixture() else {
        println!("ACCEPT-13 lambda-ablation: SKIP (dataset files not found)");
        return;
    };
    assert!(
        fx.node_cs_wm >= fx.node_cs_lambda1_zero,
        "ACCEPT-13 FAILED: CS(5,1) {} < CS(0,1) {}",
        fx.node_cs_wm,
        fx.node_cs_lambda1_zero
    );
    assert!(
        fx.node_cs_lambda1_zero < 0.7,
        "ACCEPT-13 FAILED: lambda1=0 CS {} not below tau",
        fx.node_cs_lambda1_zero
    );
    println!(
        "ACCEPT-13 lambda-ablation: PASS (CS(5,1) {:.3} >= CS(0,1) {:.3}, ablated run below tau)",
        fx.node_cs_wm, fx.node_cs_lambda1_zero
    );
}

// ---- supporting invariants over the trigger geometry ---------------------------

/// Embedding-level cluster property on a watermarked run: triggers sit closer
/// to each other than to random non-trigger node embeddings.
#[test]
fn watermarked_triggers_form_a_compact_cluster() {
    let g = generate_sbm(&[25, 25], 0.2, 0.03, 24, 31);
    let settings = PretrainSettings {
        arch: EncoderArch {
            hidden_dim: 16,
            embed_dim: 8,
            num_layers: 2,
            activation: Activation::Prelu,
        },
        pretext: PretextKind::Generative,
        negative_ratio: 1,
        epochs: 300,
        lr: 0.01,
        seed: 31,
    };
    let wm_cfg = WatermarkConfig {
        n_t: 10,
        seed: 31,
        ..WatermarkConfig::default()
    };
    let out = pretrain_watermarked(&g, &settings, &wm_cfg, FeatureKind::Binary).unwrap();
    let frozen = out.params.frozen();
    let z = out.trigger_set.encode_centers(&frozen).unwrap().to_vec();
    let h = encode(&frozen, &g).unwrap().to_vec();
    let k = 8;
    let msd = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / k as f64
    };
    let nt = out.trigger_set.len();
    let mut intra = Vec::new();
    for i in 0..nt {
        for j in (i + 1)..nt {
            intra.push(msd(&z[i * k..(i + 1) * k], &z[j * k..(j + 1) * k]));
        }
    }
    let mut r = rng::substream(31, "cluster-check");
    let trigger_ids: std::collections::HashSet<usize> =
        out.trigger_set.trigger_node_ids.iter().copied().collect();
    let mut cross = Vec::new();
    while cross.len() < 50 * nt {
        let v = r.gen_range(0..g.n());
        if trigger_ids.contains(&v) {
            continue;
        }
        let i = cross.len() % nt;
        cross.push(msd(&z[i * k..(i + 1) * k], &h[v * k..(v + 1) * k]));
    }
    let intra_mean = intra.iter().sum::<f64>() / intra.len() as f64;
    let cross_mean = cross.iter().sum::<f64>() / cross.len() as f64;
    assert!(
        intra_mean < cross_mean,
        "trigger intra msd {intra_mean} not below trigger-to-normal msd {cross_mean}"
    );
    println!(
        "FIXTURE cluster-property: PASS (intra {intra_mean:.2e} << trigger-to-normal {cross_mean:.2e})"
    );
}
