//! Temperature-scaled cross-entropy over cosine logits, with optional
//! feasibility margins on unseen columns.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub temperature: f64,
    pub alpha_max: f64,
    pub warmup_epochs: usize,
    /// Use `max(0, ρ)` instead of `ρ` as the margin of unseen columns.
    pub clamp_margin_rho_at_zero: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            temperature: 0.05,
            alpha_max: 0.4,
            warmup_epochs: 15,
            clamp_margin_rho_at_zero: false,
        }
    }
}

impl LossConfig {
    /// MIT-States-like defaults.
    pub fn mit_states() -> Self {
        Self::default()
    }

    pub fn ut_zappos() -> Self {
        LossConfig {
            temperature: 0.02,
            alpha_max: 1.0,
            ..Self::default()
        }
    }

    pub fn cgqa() -> Self {
        LossConfig {
            temperature: 0.02,
            alpha_max: 0.1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if !(self.alpha_max >= 0.0) {
            return Err(Error::Config("alpha_max must be non-negative".into()));
        }
        Ok(())
    }
}

/// Linear warm-up: `alpha_max · min(1, epoch / warmup_epochs)`.
pub fn alpha_at(epoch: usize, config: &LossConfig) -> f64 {
    if config.warmup_epochs == 0 {
        return config.alpha_max;
    }
    config.alpha_max * (epoch as f64 / config.warmup_epochs as f64).min(1.0)
}

/// Seen columns unchanged, unseen columns shifted by `-alpha · ρ`.
pub fn margin_logits(
    row: ArrayView1<'_, f64>,
    feasibility: &[f64],
    alpha: f64,
    seen: &[bool],
) -> Array1<f64> {
    let mut out = row.to_owned();
    for ((v, &rho), &is_seen) in out.iter_mut().zip(feasibility).zip(seen) {
        if !is_seen {
            *v -= alpha * rho;
        }
    }
    out
}

/// Mean cross-entropy of `(scores + shift) / T` over the `active` columns
/// and its gradient w.r.t. `scores` (zero on inactive columns).
pub fn softmax_cross_entropy(
    scores: ArrayView2<'_, f64>,
    shift: &[f64],
    active: &[bool],
    labels: &[usize],
    temperature: f64,
) -> Result<(f64, Array2<f64>)> {
    let (n, c) = scores.dim();
    if labels.len() != n || shift.len() != c || active.len() != c {
        return Err(Error::Dimension {
            context: "cross-entropy inputs".into(),
            expected: n,
            found: labels.len(),
        });
    }
    if n == 0 {
        return Err(Error::Validation("empty batch".into()));
    }
    let mut grad = Array2::zeros((n, c));
    let mut total = 0.0;
    for (i, row) in scores.outer_iter().enumerate() {
        let label = labels[i];
        if label >= c || !active[label] {
            return Err(Error::Validation(format!(
                "label column {label} is not an active column"
            )));
        }
        let logits: Vec<f64> = (0..c)
            .map(|j| {
                if active[j] {
                    (row[j] + shift[j]) / temperature
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        total += sum.ln() + max - logits[label];
        let scale = 1.0 / (n as f64 * temperature);
        for j in 0..c {
            if active[j] {
                let p = exps[j] / sum;
                grad[[i, j]] = (p - if j == label { 1.0 } else { 0.0 }) * scale;
            }
        }
    }
    let loss = total / n as f64;
    if !loss.is_finite() {
        return Err(Error::Numeric("cross-entropy is not finite".into()));
    }
    Ok((loss, grad))
}

/// Closed-world loss: softmax over seen columns only.
pub fn loss_closed(
    scores: ArrayView2<'_, f64>,
    labels: &[usize],
    seen: &[bool],
    temperature: f64,
) -> Result<f64> {
    let shift = vec![0.0; seen.len()];
    softmax_cross_entropy(scores, &shift, seen, labels, temperature).map(|(l, _)| l)
}

/// Margin shift per column for the open-world loss.
pub fn margin_shift(feasibility: &[f64], seen: &[bool], alpha: f64, clamp: bool) -> Vec<f64> {
    feasibility
        .iter()
        .zip(seen)
        .map(|(&rho, &s)| {
            if s {
                0.0
            } else {
                let rho = if clamp { rho.max(0.0) } else { rho };
                -alpha * rho
            }
        })
        .collect()
}

/// Open-world loss: margins on unseen columns, softmax over every column.
/// Labels must be seen columns.
pub fn loss_open(
    scores: ArrayView2<'_, f64>,
    labels: &[usize],
    seen: &[bool],
    feasibility: &[f64],
    alpha: f64,
    temperature: f64,
) -> Result<f64> {
    if let Some(&l) = labels.iter().find(|&&l| !seen.get(l).copied().unwrap_or(false)) {
        return Err(Error::Validation(format!("label column {l} is not seen")));
    }
    let shift = margin_shift(feasibility, seen, alpha, false);
    let all = vec![true; seen.len()];
    softmax_cross_entropy(scores, &shift, &all, labels, temperature).map(|(l, _)| l)
}
