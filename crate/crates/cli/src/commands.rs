//! Command implementations and the artifact formats they write.
//!
//! Exit-code contract: 0 watermark-confirmed / success, 1 not confirmed,
//! 2 usage or input error, 3 numeric failure during training.

use std::io::Write;
use std::path::{Path, PathBuf};

use graphmark_core::downstream::{
    evaluate_all_tasks, link_heldout_auc, predict_nodes, train_link_predictor,
    train_node_classifier, verify_community_task, verify_link_task, verify_node_task, Task,
    TaskReport,
};
use graphmark_core::encoder::{encode, read_checkpoint, write_checkpoint, EncoderParams};
use graphmark_core::error::{Error, Result};
use graphmark_core::graph::{split_nodes, Graph};
use graphmark_core::metrics::{metric_accuracy, pca_fit};
use graphmark_core::robustness::pruning_sweep;
use graphmark_core::tensor::Tensor;
use graphmark_core::watermark::{
    pretrain_watermarked, read_trigger_file, write_trigger_file, TriggerSet,
};

use crate::config::RunConfig;

pub const EXIT_CONFIRMED: i32 = 0;
pub const EXIT_NOT_CONFIRMED: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

pub fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::Numeric { .. } => EXIT_NUMERIC,
        _ => EXIT_INPUT,
    }
}

pub const CHECKPOINT_FILE: &str = "encoder.ckpt";
pub const TRIGGER_FILE: &str = "trigger.secret";
pub const CURVES_FILE: &str = "curves.csv";
pub const CONFIG_FILE: &str = "config.txt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const ATTACK_FILE: &str = "attack_curve.csv";
pub const EMBEDDINGS_FILE: &str = "embeddings.csv";

const METRICS_HEADER: &str =
    "task,dataset,pretext,watermarked,metric_name,metric_value,cs,majority_class,verdict,seed";

/// Provenance carried into every metrics row.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub dataset: String,
    pub pretext: String,
    pub watermarked: bool,
    pub seed: u64,
}

impl RunContext {
    /// Prefer checkpoint metadata, fall back to the active config.
    fn from_meta(meta: &[(String, String)], cfg: &RunConfig) -> RunContext {
        let get = |key: &str| meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.clone());
        RunContext {
            dataset: get("dataset").unwrap_or_else(|| cfg.dataset.name().to_string()),
            pretext: get("pretext").unwrap_or_else(|| cfg.pretext_kind.to_string()),
            watermarked: get("clean").map_or(!cfg.is_clean(), |v| v != "true"),
            seed: get("seed").and_then(|v| v.parse().ok()).unwrap_or(cfg.seed),
        }
    }
}

fn metrics_row(ctx: &RunContext, r: &TaskReport) -> String {
    let metric = r.metric_value.map(|v| format!("{v}")).unwrap_or_default();
    format!(
        "{},{},{},{},{},{},{},{},{},{}",
        r.task,
        ctx.dataset,
        ctx.pretext,
        ctx.watermarked,
        r.metric_name,
        metric,
        r.cs,
        r.majority_class,
        r.verdict,
        ctx.seed
    )
}

/// Append rows to `metrics.csv`, writing the header on first use.
pub fn append_metrics(dir: &Path, ctx: &RunContext, reports: &[TaskReport]) -> Result<()> {
    let path = dir.join(METRICS_FILE);
    let fresh = !path.exists();
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)?;
    if fresh {
        writeln!(f, "{METRICS_HEADER}")?;
    }
    for r in reports {
        writeln!(f, "{}", metrics_row(ctx, r))?;
    }
    Ok(())
}

fn report_text(ctx: &RunContext, r: &TaskReport, tau: f64) -> String {
    let mut s = String::new();
    s.push_str(&format!("task: {}\n", r.task));
    s.push_str(&format!("dataset: {}\n", ctx.dataset));
    s.push_str(&format!("pretext: {}\n", ctx.pretext));
    s.push_str(&format!("watermarked_model: {}\n", ctx.watermarked));
    s.push_str(&format!("seed: {}\n", ctx.seed));
    if let Some(m) = r.metric_value {
        s.push_str(&format!("{}: {:.4}\n", r.metric_name, m));
    }
    s.push_str(&format!("concentration_score: {:.4}\n", r.cs));
    s.push_str(&format!("majority_class: {}\n", r.majority_class));
    s.push_str(&format!("tau: {tau}\n"));
    s.push_str(&format!(
        "verdict: {}\n",
        if r.verdict {
            "watermarked"
        } else {
            "not-confirmed"
        }
    ));
    // per-class prediction histogram and its entropy expose the degenerate
    // constant-head mode (cs = 1 with zero entropy)
    let hist: Vec<String> = r
        .prediction_counts
        .iter()
        .map(|(label, count)| format!("{label}:{count}"))
        .collect();
    s.push_str(&format!("prediction_histogram: {}\n", hist.join(" ")));
    s.push_str(&format!(
        "prediction_entropy_nats: {:.4}\n",
        r.prediction_entropy
    ));
    s
}

/// Pre-train (watermarked unless both lambdas are zero), then write the
/// checkpoint, the trigger secret, the loss curves and the config snapshot.
pub fn cmd_pretrain(cfg: &RunConfig) -> Result<()> {
    let out = PathBuf::from(&cfg.out);
    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join(CONFIG_FILE), cfg.snapshot())?;

    let (g, dropped) = cfg.load_dataset()?;
    if dropped > 0 {
        eprintln!("warning: dropped {dropped} citation rows with unknown node ids");
    }
    println!(
        "pre-training on {} ({} nodes, {} edges), pretext {}, lambdas ({}, {}), {} epochs",
        cfg.dataset.name(),
        g.n(),
        g.edges().len(),
        cfg.pretext_kind,
        cfg.lambda1,
        cfg.lambda2,
        cfg.train_epochs
    );
    let result = pretrain_watermarked(
        &g,
        &cfg.pretrain_settings(),
        &cfg.watermark_config(),
        cfg.feature_kind,
    )?;

    let clean = cfg.is_clean();
    let meta = vec![
        ("dataset".to_string(), cfg.dataset.name().to_string()),
        ("pretext".to_string(), cfg.pretext_kind.to_string()),
        ("clean".to_string(), clean.to_string()),
        ("seed".to_string(), cfg.seed.to_string()),
    ];
    write_checkpoint(&result.params, &meta, out.join(CHECKPOINT_FILE))?;
    write_trigger_file(
        &result.trigger_set,
        &[("clean".to_string(), clean.to_string())],
        out.join(TRIGGER_FILE),
    )?;
    let mut curves = std::io::BufWriter::new(std::fs::File::create(out.join(CURVES_FILE))?);
    writeln!(curves, "epoch,utility,internal,external")?;
    for (epoch, e) in result.curve.iter().enumerate() {
        writeln!(
            curves,
            "{epoch},{},{},{}",
            e.utility, e.internal, e.external
        )?;
    }
    curves.flush()?;

    let last = result.curve.last().expect("at least one epoch");
    println!(
        "final losses: utility {:.6}, internal {:.6}, external {:.6}",
        last.utility, last.internal, last.external
    );
    println!("artifacts written to {}", out.display());
    Ok(())
}

fn load_suspect(
    checkpoint: &Path,
    trigger: &Path,
    cfg: &RunConfig,
) -> Result<(EncoderParams, RunContext, TriggerSet, Graph)> {
    let (params, meta) = read_checkpoint(checkpoint)?;
    let (ts, _) = read_trigger_file(trigger)?;
    if ts.key_feature.numel() != params.input_dim {
        return Err(Error::Input(format!(
            "trigger feature dim {} does not match checkpoint input dim {}",
            ts.key_feature.numel(),
            params.input_dim
        )));
    }
    let (g, dropped) = cfg.load_dataset()?;
    if dropped > 0 {
        eprintln!("warning: dropped {dropped} citation rows with unknown node ids");
    }
    if g.feature_dim() != params.input_dim {
        return Err(Error::Input(format!(
            "dataset feature dim {} does not match checkpoint input dim {}",
            g.feature_dim(),
            params.input_dim
        )));
    }
    let ctx = RunContext::from_meta(&meta, cfg);
    Ok((params, ctx, ts, g))
}

/// Train the requested downstream head on the suspect encoder, run the
/// matching verification protocol, and write the report plus a metrics row.
/// Returns the report and the process exit code.
pub fn cmd_verify(
    checkpoint: &Path,
    trigger: &Path,
    task: Task,
    cfg: &RunConfig,
) -> Result<(TaskReport, i32)> {
    let (params, ctx, ts, g) = load_suspect(checkpoint, trigger, cfg)?;
    let down = cfg.downstream_config();
    let frozen = params.frozen();
    let h = encode(&frozen, &g)?;

    let report = match task {
        Task::NodeClassification => {
            let labels = g
                .labels()
                .ok_or_else(|| Error::Input("node verification needs a labeled dataset".into()))?;
            let split = split_nodes(&g, down.per_class, down.n_val, down.n_test, cfg.seed)?;
            let clf = train_node_classifier(&h, labels, &split, down.epochs, down.lr, cfg.seed)?;
            let x_test = h.gather_rows(&split.test)?;
            let preds = predict_nodes(&clf, &x_test)?;
            let truth: Vec<usize> = split.test.iter().map(|&i| labels[i]).collect();
            let acc = metric_accuracy(&preds, &truth)?;
            verify_node_task(&params, &clf, &ts, cfg.tau)?.with_metric(acc)
        }
        Task::LinkPrediction => {
            let (clf, link_split) =
                train_link_predictor(&h, &g, down.link_train_frac, down.epochs, down.lr, cfg.seed)?;
            let auc = link_heldout_auc(&clf, &h, &link_split.heldout)?;
            verify_link_task(&params, &clf, &g, &ts, down.link_samples, cfg.tau, cfg.seed)?
                .with_metric(auc)
        }
        Task::CommunityDetection => {
            let k = g
                .num_classes()
                .or_else(|| g.labels().map(|l| l.iter().max().map_or(0, |m| m + 1)))
                .ok_or_else(|| {
                    Error::Input("community verification needs a labeled dataset".into())
                })?;
            let dims = down.pca_dims.min(params.embed_dim);
            verify_community_task(&params, &g, &ts, k, dims, cfg.tau, cfg.seed)?
        }
    };

    let out = PathBuf::from(&cfg.out);
    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join(CONFIG_FILE), cfg.snapshot())?;
    std::fs::write(
        out.join(format!("report_{task}.txt")),
        report_text(&ctx, &report, cfg.tau),
    )?;
    append_metrics(&out, &ctx, std::slice::from_ref(&report))?;

    let metric = report
        .metric_value
        .map(|v| format!("{:.4}", v))
        .unwrap_or_else(|| "-".to_string());
    println!(
        "task {} | {} {} | CS {:.4} (tau {}) -> {}",
        task,
        report.metric_name,
        metric,
        report.cs,
        cfg.tau,
        if report.verdict {
            "watermarked"
        } else {
            "not-confirmed"
        }
    );
    let code = if report.verdict {
        EXIT_CONFIRMED
    } else {
        EXIT_NOT_CONFIRMED
    };
    Ok((report, code))
}

/// Run the full evaluation pipeline (all three tasks) and append the rows to
/// `metrics.csv` in the output directory.
pub fn cmd_evaluate(checkpoint: &Path, trigger: &Path, cfg: &RunConfig) -> Result<Vec<TaskReport>> {
    let (params, ctx, ts, g) = load_suspect(checkpoint, trigger, cfg)?;
    let reports = evaluate_all_tasks(
        &params,
        &g,
        &ts,
        &cfg.downstream_config(),
        cfg.tau,
        cfg.seed,
    )?;
    let out = PathBuf::from(&cfg.out);
    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join(CONFIG_FILE), cfg.snapshot())?;
    append_metrics(&out, &ctx, &reports)?;
    for r in &reports {
        println!(
            "task {} | {} {} | CS {:.4} -> {}",
            r.task,
            r.metric_name,
            r.metric_value
                .map(|v| format!("{v:.4}"))
                .unwrap_or_else(|| "-".into()),
            r.cs,
            if r.verdict {
                "watermarked"
            } else {
                "not-confirmed"
            }
        );
    }
    Ok(reports)
}

/// Pruning sweep over the configured alpha grid; writes the curve CSV.
pub fn cmd_attack(checkpoint: &Path, trigger: &Path, cfg: &RunConfig) -> Result<()> {
    let (params, _ctx, ts, g) = load_suspect(checkpoint, trigger, cfg)?;
    let sweep = pruning_sweep(
        &params,
        &ts,
        &g,
        &cfg.downstream_config(),
        cfg.tau,
        &cfg.attack_grid,
        cfg.seed,
    )?;
    let out = PathBuf::from(&cfg.out);
    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join(CONFIG_FILE), cfg.snapshot())?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(out.join(ATTACK_FILE))?);
    writeln!(f, "alpha,task,metric_name,metric_value,cs")?;
    for point in &sweep {
        for r in &point.reports {
            let metric = r.metric_value.map(|v| format!("{v}")).unwrap_or_default();
            writeln!(
                f,
                "{},{},{},{},{}",
                point.alpha, r.task, r.metric_name, metric, r.cs
            )?;
        }
    }
    f.flush()?;
    for point in &sweep {
        let summary: Vec<String> = point
            .reports
            .iter()
            .map(|r| {
                format!(
                    "{} {}={:.3} cs={:.3}",
                    r.task,
                    r.metric_name,
                    r.metric_value.unwrap_or(f64::NAN),
                    r.cs
                )
            })
            .collect();
        println!("alpha {:.2}: {}", point.alpha, summary.join(" | "));
    }
    println!("curve written to {}", out.join(ATTACK_FILE).display());
    Ok(())
}

/// Export joint 2-D PCA coordinates of all normal nodes plus the trigger
/// centers for external scatter plotting.
pub fn cmd_export_embeddings(checkpoint: &Path, trigger: &Path, cfg: &RunConfig) -> Result<()> {
    let (params, _ctx, ts, g) = load_suspect(checkpoint, trigger, cfg)?;
    let frozen = params.frozen();
    let h = encode(&frozen, &g)?;
    let z = ts.encode_centers(&frozen)?;
    let k = h.cols();
    let mut joint = h.to_vec();
    joint.extend_from_slice(&z.data());
    let joint = Tensor::from_vec(&[g.n() + ts.len(), k], joint)?;
    let pca = pca_fit(&joint, 2)?;
    let coords = pca.transform(&joint)?.to_vec();

    let out = PathBuf::from(&cfg.out);
    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join(CONFIG_FILE), cfg.snapshot())?;
    let path = out.join(EMBEDDINGS_FILE);
    let mut f = std::io::BufWriter::new(std::fs::File::create(&path)?);
    writeln!(f, "id,x,y,role")?;
    for i in 0..g.n() {
        let role = match g.labels() {
            Some(l) => format!("normal-class-{}", l[i]),
            None => "normal".to_string(),
        };
        writeln!(f, "{i},{},{},{role}", coords[i * 2], coords[i * 2 + 1])?;
    }
    for (t, &origin) in ts.trigger_node_ids.iter().enumerate() {
        let row = g.n() + t;
        writeln!(
            f,
            "{origin},{},{},trigger",
            coords[row * 2],
            coords[row * 2 + 1]
        )?;
    }
    f.flush()?;
    println!(
        "wrote {} rows ({} normal + {} trigger) to {}",
        g.n() + ts.len(),
        g.n(),
        ts.len(),
        path.display()
    );
    Ok(())
}
