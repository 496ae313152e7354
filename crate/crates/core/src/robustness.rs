//! Magnitude-pruning attack and the robustness sweep.

use crate::downstream::{evaluate_all_tasks, DownstreamConfig, TaskReport};
use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::watermark::TriggerSet;

/// Task reports for one pruning rate.
#[derive(Debug)]
pub struct PruneReport {
    pub alpha: f64,
    pub reports: Vec<TaskReport>,
}

/// Zero the globally smallest `floor(alpha · P)` encoder weights by absolute
/// value (ties broken by flat parameter index). Biases and activation slopes
/// are exempt. Returns a new parameter set; the input is untouched.
pub fn prune_encoder(params: &EncoderParams, alpha: f64) -> Result<EncoderParams> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Input(format!("pruning rate {alpha} outside [0, 1]")));
    }
    let pruned = params.deep_copy();
    let mut magnitudes: Vec<(f64, usize)> = Vec::new();
    let mut flat = 0usize;
    for layer in &pruned.layers {
        for &w in layer.weight.data().iter() {
            magnitudes.push((w.abs(), flat));
            flat += 1;
        }
    }
    let total = magnitudes.len();
    let zero_count = (alpha * total as f64).floor() as usize;
    magnitudes.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let mut kill = vec![false; total];
    for &(_, idx) in magnitudes.iter().take(zero_count) {
        kill[idx] = true;
    }
    let mut offset = 0usize;
    for layer in &pruned.layers {
        let mut data = layer.weight.to_vec();
        for (i, v) in data.iter_mut().enumerate() {
            if kill[offset + i] {
                *v = 0.0;
            }
        }
        offset += data.len();
        layer.weight.set_data(data);
    }
    Ok(pruned)
}

/// Count of exactly-zero encoder weights (biases excluded).
pub fn zero_weight_count(params: &EncoderParams) -> usize {
    params
        .layers
        .iter()
        .map(|l| l.weight.data().iter().filter(|&&w| w == 0.0).count())
        .sum()
}

/// Total encoder weight count (biases excluded).
pub fn weight_count(params: &EncoderParams) -> usize {
    params.layers.iter().map(|l| l.weight.numel()).sum()
}

/// For each pruning rate: prune the encoder, retrain every downstream head
/// from scratch (the adversary adapts), and evaluate metric plus
/// concentration score per task. The grid must contain the 0.0 baseline.
pub fn pruning_sweep(
    params: &EncoderParams,
    ts: &TriggerSet,
    g: &Graph,
    cfg: &DownstreamConfig,
    tau: f64,
    alpha_grid: &[f64],
    seed: u64,
) -> Result<Vec<PruneReport>> {
    if alpha_grid.is_empty() {
        return Err(Error::Input(
            "pruning sweep needs a nonempty alpha grid".into(),
        ));
    }
    let mut grid = alpha_grid.to_vec();
    for &a in &grid {
        if !(0.0..=1.0).contains(&a) {
            return Err(Error::Input(format!("pruning rate {a} outside [0, 1]")));
        }
    }
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    grid.dedup();
    if grid[0] != 0.0 {
        return Err(Error::Input(
            "pruning grid must include the 0.0 baseline".into(),
        ));
    }
    let mut out = Vec::with_capacity(grid.len());
    for &alpha in &grid {
        let pruned = prune_encoder(params, alpha)?;
        let reports = evaluate_all_tasks(&pruned, g, ts, cfg, tau, seed)?;
        out.push(PruneReport { alpha, reports });
    }
    Ok(out)
}
