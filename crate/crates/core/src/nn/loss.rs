//! Classification and reconstruction losses with analytic gradients.

use ndarray::{Array2, Array4};

use crate::error::{Error, Result};

/// Loss applied to 3-way logits.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// `-(1 - p_t)^gamma * log(p_t)`, mean over the batch.
    Focal { gamma: f64 },
    CrossEntropy,
}

impl Loss {
    /// Mean loss and gradient w.r.t. the logits for one batch.
    pub fn loss_and_grad(
        &self,
        logits: &Array2<f32>,
        targets: &[usize],
        sample_weights: Option<&[f32]>,
    ) -> (f64, Array2<f32>) {
        let n = logits.shape()[0];
        assert_eq!(targets.len(), n);
        let probs = softmax_rows(logits);
        let mut grad = Array2::<f32>::zeros(logits.raw_dim());
        let mut total = 0.0f64;
        let mut weight_sum = 0.0f64;
        for i in 0..n {
            let t = targets[i];
            let w = sample_weights.map_or(1.0, |sw| sw[i] as f64);
            weight_sum += w;
            let pt = (probs[[i, t]] as f64).max(1e-12);
            let (loss_i, dl_dpt) = match self {
                Loss::CrossEntropy => (-pt.ln(), -1.0 / pt),
                Loss::Focal { gamma } => {
                    let q = 1.0 - pt;
                    let loss = -q.powf(*gamma) * pt.ln();
                    // d/dp [-(1-p)^g ln p] = g (1-p)^(g-1) ln p - (1-p)^g / p
                    let dl = if *gamma == 0.0 {
                        -1.0 / pt
                    } else {
                        *gamma * q.powf(*gamma - 1.0) * pt.ln() - q.powf(*gamma) / pt
                    };
                    (loss, dl)
                }
            };
            total += w * loss_i;
            // dp_t/dz_j = p_t (delta_tj - p_j)
            for j in 0..logits.shape()[1] {
                let pj = probs[[i, j]] as f64;
                let delta = if j == t { 1.0 } else { 0.0 };
                grad[[i, j]] = (w * dl_dpt * pt * (delta - pj)) as f32;
            }
        }
        let norm = weight_sum.max(1e-12);
        grad.mapv_inplace(|g| g / norm as f32);
        (total / norm, grad)
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Array2<f32>) -> Array2<f32> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f32;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

fn check_distribution(probabilities: &[f32], target_class: usize) -> Result<f64> {
    if target_class >= probabilities.len() {
        return Err(Error::InvalidArgument(format!(
            "target class {target_class} out of range for {} classes",
            probabilities.len()
        )));
    }
    let sum: f64 = probabilities.iter().map(|&p| p as f64).sum();
    if (sum - 1.0).abs() > 1e-6 || probabilities.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
        return Err(Error::InvalidArgument(format!(
            "probabilities do not form a distribution (sum = {sum})"
        )));
    }
    Ok(probabilities[target_class] as f64)
}

/// Focal loss of one probability vector: `-(1 - p_t)^gamma * log(p_t)`.
pub fn focal_loss_from_probs(
    probabilities: &[f32],
    target_class: usize,
    gamma: f64,
) -> Result<f64> {
    if gamma < 0.0 {
        return Err(Error::InvalidArgument("gamma must be >= 0".into()));
    }
    let pt = check_distribution(probabilities, target_class)?.max(1e-12);
    Ok(-(1.0 - pt).powf(gamma) * pt.ln())
}

/// Plain cross-entropy of one probability vector.
pub fn cross_entropy_from_probs(probabilities: &[f32], target_class: usize) -> Result<f64> {
    let pt = check_distribution(probabilities, target_class)?.max(1e-12);
    Ok(-pt.ln())
}

/// Binary cross-entropy on `(n, 1, 1, 1)` logits; targets in {0, 1}.
pub fn bce_with_logits_loss(logits: &Array4<f32>, targets: &[f32]) -> (f64, Array4<f32>) {
    let n = logits.shape()[0];
    assert_eq!(targets.len(), n);
    let mut grad = Array4::<f32>::zeros(logits.raw_dim());
    let mut total = 0.0f64;
    for i in 0..n {
        let z = logits[[i, 0, 0, 0]] as f64;
        let t = targets[i] as f64;
        // numerically stable log(1 + e^-|z|) form
        let loss = z.max(0.0) - z * t + (-z.abs()).exp().ln_1p();
        total += loss;
        let p = 1.0 / (1.0 + (-z).exp());
        grad[[i, 0, 0, 0]] = ((p - t) / n as f64) as f32;
    }
    (total / n as f64, grad)
}

/// Mean squared error between prediction and target tensors.
pub fn mse_loss(pred: &Array4<f32>, target: &Array4<f32>) -> (f64, Array4<f32>) {
    assert_eq!(pred.raw_dim(), target.raw_dim());
    let n = pred.len() as f64;
    let mut total = 0.0f64;
    let mut grad = Array4::<f32>::zeros(pred.raw_dim());
    for (g, (&p, &t)) in grad.iter_mut().zip(pred.iter().zip(target.iter())) {
        let d = p as f64 - t as f64;
        total += d * d;
        *g = (2.0 * d / n) as f32;
    }
    (total / n, grad)
}
