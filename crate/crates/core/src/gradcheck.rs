//! Finite-difference gradient verification.

use crate::error::Result;
use crate::tensor::{backward, Tensor};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub ok: bool,
    pub max_rel_err: f64,
}

/// Compare reverse-mode gradients of a deterministic scalar function against
/// central finite differences with step [`FD_STEP`].
///
/// The error is scaled: `|a - f| / max(1, |a|, |f|)`, so tiny gradients are
/// compared absolutely and large ones relatively.
pub fn grad_check<F>(f: F, inputs: &[Tensor], tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    // analytic pass on grad-requiring clones
    let tracked: Vec<Tensor> = inputs
        .iter()
        .map(|t| Tensor::parameter(&t.shape(), t.to_vec()))
        .collect::<Result<_>>()?;
    let loss = f(&tracked)?;
    backward(&loss)?;
    let analytic: Vec<Vec<f64>> = tracked
        .iter()
        .map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    // finite differences on constant clones
    let base: Vec<Vec<f64>> = inputs.iter().map(|t| t.to_vec()).collect();
    let shapes: Vec<Vec<usize>> = inputs.iter().map(|t| t.shape()).collect();
    let eval = |data: &[Vec<f64>]| -> Result<f64> {
        let ts: Vec<Tensor> = data
            .iter()
            .zip(shapes.iter())
            .map(|(d, s)| Tensor::from_vec(s, d.clone()))
            .collect::<Result<_>>()?;
        Ok(f(&ts)?.item())
    };

    let mut max_rel_err: f64 = 0.0;
    for (ti, shape) in shapes.iter().enumerate() {
        let n: usize = shape.iter().product();
        for j in 0..n {
            let mut plus = base.clone();
            plus[ti][j] += FD_STEP;
            let mut minus = base.clone();
            minus[ti][j] -= FD_STEP;
            let fd = (eval(&plus)? - eval(&minus)?) / (2.0 * FD_STEP);
            let a = analytic[ti][j];
            let err = (a - fd).abs() / 1.0_f64.max(a.abs()).max(fd.abs());
            if err > max_rel_err {
                max_rel_err = err;
            }
        }
    }
    Ok(GradCheckReport {
        ok: max_rel_err <= tol,
        max_rel_err,
    })
}
